//! Store-only ZIP container codec and problem-space manipulation.
//!
//! Only compression method 0 is supported and ZIP64 is rejected. Writing is
//! fully deterministic: timestamps are pinned to the DOS epoch
//! (1980-01-01 00:00), attributes are zero, and entry names are flagged
//! as UTF-8.

use std::collections::HashSet;

use rand::Rng;

use crate::corpus::MalwareCatalogEntry;
use crate::error::{Error, Result};
use crate::rng;

const LOCAL_SIG: u32 = 0x0403_4b50;
const CENTRAL_SIG: u32 = 0x0201_4b50;
const EOCD_SIG: u32 = 0x0605_4b50;
const ZIP64_EOCD_LOCATOR_SIG: u32 = 0x0706_4b50;

const LOCAL_HEADER_LEN: usize = 30;
const CENTRAL_HEADER_LEN: usize = 46;
const EOCD_LEN: usize = 22;

const VERSION_MADE_BY: u16 = 20;
const VERSION_NEEDED: u16 = 10;
const FLAG_UTF8: u16 = 1 << 11;
const FLAG_ENCRYPTED: u16 = 1;
const DOS_TIME: u16 = 0;
/// 1980-01-01 in MS-DOS date encoding.
const DOS_DATE: u16 = (1 << 5) | 1;

/// Per-entry bytes added by headers, excluding the name and content.
pub const ENTRY_OVERHEAD: usize = LOCAL_HEADER_LEN + CENTRAL_HEADER_LEN;

/// Injection roots used when no explicit policy is given.
pub const DEFAULT_INJECTION_ROOTS: &[&str] = &["res/"];

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// One member file of an archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveEntry {
    path: String,
    bytes: Vec<u8>,
    crc32: u32,
}

impl ArchiveEntry {
    pub fn new(path: impl Into<String>, bytes: Vec<u8>) -> Result<Self> {
        let path = path.into();
        validate_path(&path)?;
        let crc32 = crc32(&bytes);
        Ok(Self { path, bytes, crc32 })
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn crc32(&self) -> u32 {
        self.crc32
    }
}

fn validate_path(path: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Invariant("entry path is empty".into()));
    }
    if path.contains('\\') {
        return Err(Error::Invariant(format!("entry path `{path}` uses `\\` separators")));
    }
    if path.starts_with('/') {
        return Err(Error::Invariant(format!("entry path `{path}` is absolute")));
    }
    if path.split('/').any(|seg| seg == "..") {
        return Err(Error::Invariant(format!("entry path `{path}` contains `..`")));
    }
    if path.len() > u16::MAX as usize {
        return Err(Error::Invariant("entry path longer than 65535 bytes".into()));
    }
    Ok(())
}

/// An ordered collection of uniquely named entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Archive {
    entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<ArchiveEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Invariant(format!("duplicate entry path `{}`", e.path)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.get(path).is_some()
    }

    /// Appends an entry, rejecting duplicate paths.
    pub fn push(&mut self, path: impl Into<String>, bytes: Vec<u8>) -> Result<()> {
        let entry = ArchiveEntry::new(path, bytes)?;
        if self.contains(&entry.path) {
            return Err(Error::Invariant(format!("duplicate entry path `{}`", entry.path)));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Replaces the bytes of an existing entry in place, keeping its position.
    pub fn replace(&mut self, path: &str, bytes: Vec<u8>) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.path == path)
            .ok_or_else(|| Error::Invariant(format!("no entry `{path}` to replace")))?;
        entry.crc32 = crc32(&bytes);
        entry.bytes = bytes;
        Ok(())
    }

    /// Copy of the archive without `path`.
    pub fn without(&self, path: &str) -> Archive {
        Archive { entries: self.entries.iter().filter(|e| e.path != path).cloned().collect() }
    }

    /// Size of the serialized archive, without serializing it.
    pub fn serialized_len(&self) -> usize {
        self.entries
            .iter()
            .map(|e| ENTRY_OVERHEAD + 2 * e.path.len() + e.bytes.len())
            .sum::<usize>()
            + EOCD_LEN
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn slice(&self, offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
        offset
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .map(|end| &self.buf[offset..end])
            .ok_or_else(|| Error::parse(offset, format!("truncated {what}")))
    }

    fn u16(&self, offset: usize) -> Result<u16> {
        let b = self.slice(offset, 2, "field")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, offset: usize) -> Result<u32> {
        let b = self.slice(offset, 4, "field")?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn find_eocd(buf: &[u8]) -> Result<usize> {
    if buf.len() < EOCD_LEN {
        return Err(Error::parse(0, "too short for an end-of-central-directory record"));
    }
    let max_back = (EOCD_LEN + u16::MAX as usize).min(buf.len());
    let lowest = buf.len() - max_back;
    let mut pos = buf.len() - EOCD_LEN;
    loop {
        if buf[pos..pos + 4] == EOCD_SIG.to_le_bytes() {
            let comment_len = u16::from_le_bytes([buf[pos + 20], buf[pos + 21]]) as usize;
            if pos + EOCD_LEN + comment_len == buf.len() {
                return Ok(pos);
            }
        }
        if pos == lowest {
            return Err(Error::parse(buf.len(), "end-of-central-directory record not found"));
        }
        pos -= 1;
    }
}

/// Parses a store-only ZIP stream. Entries come back in central-directory
/// order with their checksums verified.
pub fn parse_archive(bytes: &[u8]) -> Result<Archive> {
    let r = Reader { buf: bytes };
    let eocd = find_eocd(bytes)?;
    if eocd >= 20 && r.u32(eocd - 20)? == ZIP64_EOCD_LOCATOR_SIG {
        return Err(Error::Unsupported("ZIP64 archives".into()));
    }
    let disk = r.u16(eocd + 4)?;
    let cd_disk = r.u16(eocd + 6)?;
    if disk != 0 || cd_disk != 0 {
        return Err(Error::Unsupported("multi-disk archives".into()));
    }
    let entries_on_disk = r.u16(eocd + 8)?;
    let total_entries = r.u16(eocd + 10)?;
    let cd_size = r.u32(eocd + 12)?;
    let cd_offset = r.u32(eocd + 16)?;
    if total_entries == u16::MAX || cd_size == u32::MAX || cd_offset == u32::MAX {
        return Err(Error::Unsupported("ZIP64 archives".into()));
    }
    if entries_on_disk != total_entries {
        return Err(Error::parse(eocd + 8, "entry counts disagree"));
    }
    let cd_offset = cd_offset as usize;
    let cd_end = cd_offset
        .checked_add(cd_size as usize)
        .filter(|&end| end <= eocd)
        .ok_or_else(|| Error::parse(eocd + 12, "central directory exceeds archive bounds"))?;

    let mut entries = Vec::with_capacity(total_entries as usize);
    let mut seen = HashSet::new();
    let mut pos = cd_offset;
    for _ in 0..total_entries {
        if pos + CENTRAL_HEADER_LEN > cd_end {
            return Err(Error::parse(pos, "truncated central directory"));
        }
        if r.u32(pos)? != CENTRAL_SIG {
            return Err(Error::parse(pos, "bad central directory header signature"));
        }
        let flags = r.u16(pos + 8)?;
        let method = r.u16(pos + 10)?;
        let crc = r.u32(pos + 16)?;
        let csize = r.u32(pos + 20)?;
        let usize_ = r.u32(pos + 24)?;
        let name_len = r.u16(pos + 28)? as usize;
        let extra_len = r.u16(pos + 30)? as usize;
        let comment_len = r.u16(pos + 32)? as usize;
        let local_offset = r.u32(pos + 42)?;
        if csize == u32::MAX || usize_ == u32::MAX || local_offset == u32::MAX {
            return Err(Error::Unsupported("ZIP64 entries".into()));
        }
        if flags & FLAG_ENCRYPTED != 0 {
            return Err(Error::Unsupported("encrypted entries".into()));
        }
        if method != 0 {
            return Err(Error::Unsupported(format!("compression method {method}")));
        }
        if csize != usize_ {
            return Err(Error::parse(pos + 20, "stored entry with differing sizes"));
        }
        let name_start = pos + CENTRAL_HEADER_LEN;
        if name_start + name_len + extra_len + comment_len > cd_end {
            return Err(Error::parse(pos, "truncated central directory"));
        }
        let name_bytes = r.slice(name_start, name_len, "entry name")?;
        let path = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::parse(name_start, "entry name is not UTF-8"))?
            .to_owned();
        validate_path(&path).map_err(|e| Error::parse(name_start, e.to_string()))?;
        if !seen.insert(path.clone()) {
            return Err(Error::parse(name_start, format!("duplicate entry `{path}`")));
        }

        let lo = local_offset as usize;
        if r.u32(lo)? != LOCAL_SIG {
            return Err(Error::parse(lo, "bad local file header signature"));
        }
        let local_method = r.u16(lo + 8)?;
        if local_method != 0 {
            return Err(Error::Unsupported(format!("compression method {local_method}")));
        }
        let local_name_len = r.u16(lo + 26)? as usize;
        let local_extra_len = r.u16(lo + 28)? as usize;
        let local_name = r.slice(lo + LOCAL_HEADER_LEN, local_name_len, "local entry name")?;
        if local_name != name_bytes {
            return Err(Error::parse(lo + LOCAL_HEADER_LEN, "local and central names differ"));
        }
        let data_start = lo + LOCAL_HEADER_LEN + local_name_len + local_extra_len;
        let data = r.slice(data_start, csize as usize, "entry data")?;
        if data_start + data.len() > cd_offset {
            return Err(Error::parse(data_start, "entry data overlaps central directory"));
        }
        if crc32(data) != crc {
            return Err(Error::Integrity { path });
        }
        entries.push(ArchiveEntry { path, bytes: data.to_vec(), crc32: crc });
        pos = name_start + name_len + extra_len + comment_len;
    }
    Ok(Archive { entries })
}

fn put16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn checked_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .ok()
        .filter(|&x| x != u32::MAX)
        .ok_or_else(|| Error::Unsupported(format!("{what} requires ZIP64")))
}

/// Serializes the archive as a store-only ZIP. Identical archives always
/// produce identical bytes.
pub fn write_archive(a: &Archive) -> Result<Vec<u8>> {
    let mut seen = HashSet::with_capacity(a.entries.len());
    for e in &a.entries {
        validate_path(&e.path)?;
        if !seen.insert(e.path.as_str()) {
            return Err(Error::Invariant(format!("duplicate entry path `{}`", e.path)));
        }
        if crc32(&e.bytes) != e.crc32 {
            return Err(Error::Invariant(format!("stale checksum for `{}`", e.path)));
        }
    }
    if a.entries.len() >= u16::MAX as usize {
        return Err(Error::Unsupported("more than 65534 entries requires ZIP64".into()));
    }

    let mut out = Vec::with_capacity(a.serialized_len());
    let mut offsets = Vec::with_capacity(a.entries.len());
    for e in &a.entries {
        offsets.push(checked_u32(out.len(), "archive size")?);
        let size = checked_u32(e.bytes.len(), "entry size")?;
        put32(&mut out, LOCAL_SIG);
        put16(&mut out, VERSION_NEEDED);
        put16(&mut out, FLAG_UTF8);
        put16(&mut out, 0);
        put16(&mut out, DOS_TIME);
        put16(&mut out, DOS_DATE);
        put32(&mut out, e.crc32);
        put32(&mut out, size);
        put32(&mut out, size);
        put16(&mut out, e.path.len() as u16);
        put16(&mut out, 0);
        out.extend_from_slice(e.path.as_bytes());
        out.extend_from_slice(&e.bytes);
    }
    let cd_start = out.len();
    for (e, &offset) in a.entries.iter().zip(&offsets) {
        let size = e.bytes.len() as u32;
        put32(&mut out, CENTRAL_SIG);
        put16(&mut out, VERSION_MADE_BY);
        put16(&mut out, VERSION_NEEDED);
        put16(&mut out, FLAG_UTF8);
        put16(&mut out, 0);
        put16(&mut out, DOS_TIME);
        put16(&mut out, DOS_DATE);
        put32(&mut out, e.crc32);
        put32(&mut out, size);
        put32(&mut out, size);
        put16(&mut out, e.path.len() as u16);
        put16(&mut out, 0); // extra
        put16(&mut out, 0); // comment
        put16(&mut out, 0); // disk
        put16(&mut out, 0); // internal attrs
        put32(&mut out, 0); // external attrs
        put32(&mut out, offset);
        out.extend_from_slice(e.path.as_bytes());
    }
    let cd_size = checked_u32(out.len() - cd_start, "central directory")?;
    let cd_offset = checked_u32(cd_start, "archive size")?;
    let n = a.entries.len() as u16;
    put32(&mut out, EOCD_SIG);
    put16(&mut out, 0);
    put16(&mut out, 0);
    put16(&mut out, n);
    put16(&mut out, n);
    put32(&mut out, cd_size);
    put32(&mut out, cd_offset);
    put16(&mut out, 0);
    Ok(out)
}

fn split_filename(name: &str) -> (&str, &str) {
    match name.rfind('.') {
        Some(i) if i > 0 => (&name[..i], &name[i..]),
        _ => (name, ""),
    }
}

/// Normalizes an injection directory to end with `/`, empty meaning root.
fn normalize_dir(dir: &str) -> String {
    let trimmed = dir.trim_start_matches("./");
    if trimmed.is_empty() || trimmed == "/" {
        String::new()
    } else if trimmed.ends_with('/') {
        trimmed.to_owned()
    } else {
        format!("{trimmed}/")
    }
}

/// Injects `payload` under `dir` using the default `res/` root policy.
pub fn inject_entry(a: &Archive, payload: &MalwareCatalogEntry, dir: &str, seed: u64) -> Result<Archive> {
    inject_entry_with_roots(a, payload, dir, seed, DEFAULT_INJECTION_ROOTS)
}

/// Injects `payload` as one new entry under `dir`, which must sit below one
/// of `roots`. The archive root and `classes.dexl` are always refused
/// because feature extractors read them. Name collisions get a numeric
/// suffix derived from `seed`.
pub fn inject_entry_with_roots(
    a: &Archive,
    payload: &MalwareCatalogEntry,
    dir: &str,
    seed: u64,
    roots: &[&str],
) -> Result<Archive> {
    let dir = normalize_dir(dir);
    if dir.is_empty() {
        return Err(Error::ForbiddenLocation("AndroidManifest.xml parent (archive root)".into()));
    }
    if dir.trim_end_matches('/') == "classes.dexl" || dir.starts_with("classes.dexl/") {
        return Err(Error::ForbiddenLocation("classes.dexl".into()));
    }
    if !roots.iter().any(|root| dir.starts_with(&normalize_dir(root))) {
        return Err(Error::ForbiddenLocation(format!("{dir} (not below an allowed injection root)")));
    }

    let mut path = format!("{dir}{}", payload.filename);
    if a.contains(&path) {
        let (stem, ext) = split_filename(&payload.filename);
        let mut rng = rng::stream(seed, "inject-suffix");
        loop {
            let suffix: u32 = rng.gen_range(1..1_000_000);
            path = format!("{dir}{stem}_{suffix}{ext}");
            if !a.contains(&path) {
                break;
            }
        }
    }
    let mut out = a.clone();
    out.push(path, payload.bytes.clone())?;
    Ok(out)
}

/// Relative growth of the serialized archive.
pub fn size_delta(before: &Archive, after: &Archive) -> Result<f64> {
    let b = write_archive(before)?.len();
    let a = write_archive(after)?.len();
    if b == 0 {
        return Err(Error::DegenerateInput("original archive serializes to zero bytes".into()));
    }
    Ok((a as f64 - b as f64) / b as f64)
}

/// Relative growth given raw serialized sizes.
pub fn size_delta_from_lengths(before: usize, after: usize) -> Result<f64> {
    if before == 0 {
        return Err(Error::DegenerateInput("original archive serializes to zero bytes".into()));
    }
    Ok((after as f64 - before as f64) / before as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_catalog;
    use proptest::prelude::*;

    // Produced by CPython's zipfile (ZIP_STORED, date 1980-01-01).
    const PY_EMPTY: &str = "504b0506000000000000000000000000000000000000";
    const PY_A_TXT: &str = "504b030414000000000000002100ac2a93d8020000000200000005000000612e7478746869\
504b0102140314000000000000002100ac2a93d80200000002000000050000000000000000000000800100000000612e747874\
504b0506000000000100010033000000250000000000";

    fn unhex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    fn sample() -> Archive {
        let mut a = Archive::new();
        a.push("AndroidManifest.xml", b"<manifest package=\"a.b\">\n</manifest>\n".to_vec()).unwrap();
        a.push("classes.dexl", b"DEXL1\n".to_vec()).unwrap();
        a.push("res/values/strings.xml", b"<resources/>".to_vec()).unwrap();
        a
    }

    #[test]
    fn empty_archive_parses_and_writes_22_bytes() {
        let a = parse_archive(&unhex(PY_EMPTY)).unwrap();
        assert!(a.is_empty());
        let out = write_archive(&Archive::new()).unwrap();
        assert_eq!(out.len(), 22);
        assert_eq!(out, unhex(PY_EMPTY));
    }

    #[test]
    fn parses_reference_single_entry() {
        let a = parse_archive(&unhex(PY_A_TXT)).unwrap();
        assert_eq!(a.len(), 1);
        let e = &a.entries()[0];
        assert_eq!(e.path(), "a.txt");
        assert_eq!(e.bytes(), b"hi");
        assert_eq!(e.crc32(), 0xd893_2aac);
        assert_eq!(e.crc32(), crc32(b"hi"));
    }

    #[test]
    fn truncated_central_directory_is_a_parse_error() {
        let bytes = write_archive(&sample()).unwrap();
        let eocd = bytes.len() - 22;
        // Drop part of the central directory while keeping a valid-looking EOCD.
        let mut cut = bytes[..eocd - 10].to_vec();
        cut.extend_from_slice(&bytes[eocd..]);
        assert!(matches!(parse_archive(&cut), Err(Error::Parse { .. })));
        assert!(matches!(parse_archive(&bytes[..bytes.len() - 30]), Err(Error::Parse { .. })));
    }

    #[test]
    fn crc_mismatch_names_the_path() {
        let mut bytes = write_archive(&sample()).unwrap();
        // Content of the first entry starts after its 30-byte header and name.
        let at = 30 + "AndroidManifest.xml".len();
        bytes[at] ^= 0xff;
        match parse_archive(&bytes) {
            Err(Error::Integrity { path }) => assert_eq!(path, "AndroidManifest.xml"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn deflate_entries_are_unsupported() {
        let mut bytes = write_archive(&sample()).unwrap();
        bytes[8] = 8; // local method
        let cd = bytes.len() - 22;
        let cd_offset = u32::from_le_bytes(bytes[cd + 16..cd + 20].try_into().unwrap()) as usize;
        bytes[cd_offset + 10] = 8;
        assert!(matches!(parse_archive(&bytes), Err(Error::Unsupported(_))));
    }

    #[test]
    fn duplicate_paths_rejected_on_write() {
        let e = ArchiveEntry::new("x", vec![1]).unwrap();
        let a = Archive { entries: vec![e.clone(), e] };
        assert!(matches!(write_archive(&a), Err(Error::Invariant(_))));
        assert!(Archive::from_entries(a.entries.clone()).is_err());
    }

    #[test]
    fn invalid_paths_rejected() {
        assert!(ArchiveEntry::new("", vec![]).is_err());
        assert!(ArchiveEntry::new("a/../b", vec![]).is_err());
        assert!(ArchiveEntry::new("a\\b", vec![]).is_err());
    }

    #[test]
    fn central_directory_keeps_insertion_order() {
        let mut a = Archive::new();
        a.push("z", vec![1]).unwrap();
        a.push("a", vec![2]).unwrap();
        let back = parse_archive(&write_archive(&a).unwrap()).unwrap();
        let names: Vec<_> = back.entries().iter().map(|e| e.path()).collect();
        assert_eq!(names, ["z", "a"]);
    }

    #[test]
    fn serialized_len_matches() {
        let a = sample();
        assert_eq!(a.serialized_len(), write_archive(&a).unwrap().len());
    }

    #[test]
    fn injection_adds_one_entry_with_fixed_overhead() {
        let catalog = default_catalog();
        let gif = &catalog[2];
        let a = sample();
        let b = inject_entry(&a, gif, "res/", 1).unwrap();
        assert_eq!(b.len(), a.len() + 1);
        let added = b.entries().last().unwrap();
        assert_eq!(added.bytes().len(), 55);
        assert_eq!(added.path(), format!("res/{}", gif.filename));
        let grow = write_archive(&b).unwrap().len() - write_archive(&a).unwrap().len();
        assert_eq!(grow, 55 + ENTRY_OVERHEAD + 2 * added.path().len());
        for e in a.entries() {
            assert_eq!(b.get(e.path()).unwrap(), e);
        }
        assert_eq!(write_archive(&b.without(added.path())).unwrap(), write_archive(&a).unwrap());
    }

    #[test]
    fn injection_collision_gets_seeded_suffix() {
        let catalog = default_catalog();
        let entry = &catalog[0];
        let a = inject_entry(&sample(), entry, "res/", 3).unwrap();
        let b1 = inject_entry(&a, entry, "res/", 3).unwrap();
        let b2 = inject_entry(&a, entry, "res/", 3).unwrap();
        assert_eq!(b1, b2);
        let p = b1.entries().last().unwrap().path();
        assert_ne!(p, a.entries().last().unwrap().path());
        assert!(p.starts_with("res/") && p.ends_with(".xml"), "{p}");
    }

    #[test]
    fn forbidden_locations() {
        let catalog = default_catalog();
        let a = sample();
        for dir in ["", "/", "./", "classes.dexl", "classes.dexl/", "assets/"] {
            assert!(
                matches!(inject_entry(&a, &catalog[0], dir, 0), Err(Error::ForbiddenLocation(_))),
                "{dir}"
            );
        }
        assert!(inject_entry(&a, &catalog[0], "res/raw", 0).is_ok());
        assert!(inject_entry_with_roots(&a, &catalog[0], "assets/x/", 0, &["res/", "assets/"]).is_ok());
    }

    #[test]
    fn size_delta_arithmetic() {
        let a = sample();
        assert_eq!(size_delta(&a, &a).unwrap(), 0.0);
        assert!((size_delta_from_lengths(1000, 1014).unwrap() - 0.014).abs() < 1e-12);
        assert!(matches!(size_delta_from_lengths(0, 5), Err(Error::DegenerateInput(_))));
    }

    fn arb_archive() -> impl Strategy<Value = Archive> {
        proptest::collection::btree_map("[a-z]{1,6}(/[a-z0-9_]{1,8}){0,2}(\\.[a-z]{1,3})?", proptest::collection::vec(any::<u8>(), 0..200), 0..8)
            .prop_map(|m| {
                let mut a = Archive::new();
                for (k, v) in m {
                    if !a.contains(&k) {
                        a.push(k, v).unwrap();
                    }
                }
                a
            })
    }

    proptest! {
        #[test]
        fn round_trip(a in arb_archive()) {
            let bytes = write_archive(&a).unwrap();
            let back = parse_archive(&bytes).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(write_archive(&back).unwrap(), bytes);
        }

        #[test]
        fn injection_is_local_and_deterministic(a in arb_archive(), row in 0usize..10, seed in any::<u64>()) {
            let catalog = default_catalog();
            let b = inject_entry(&a, &catalog[row], "res/", seed).unwrap();
            prop_assert_eq!(b.len(), a.len() + 1);
            for e in a.entries() {
                prop_assert_eq!(b.get(e.path()).unwrap(), e);
            }
            prop_assert_eq!(b, inject_entry(&a, &catalog[row], "res/", seed).unwrap());
        }
    }
}
