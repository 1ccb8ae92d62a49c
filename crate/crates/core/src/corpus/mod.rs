//! Synthetic app population: benign apps grouped by store category and
//! malicious apps grouped by family, plus the injectable payload catalog.

mod catalog;
pub mod dexl;
pub mod manifest;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use catalog::{catalog_for_ensemble, default_catalog, MalwareCatalogEntry, MAX_PAYLOAD_BYTES, REFERENCE_ENGINES};
pub use dexl::{DexLiteProgram, Guard, Method, Statement, DEXL_PATH};
pub use manifest::{ManifestInfo, MANIFEST_PATH};

use crate::archive::{parse_archive, write_archive, Archive};
use crate::error::{Error, Result};
use crate::{io, par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malicious => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Benign => Label::Malicious,
            Label::Malicious => Label::Benign,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        })
    }
}

/// One sample in problem space.
#[derive(Debug, Clone, PartialEq)]
pub struct AppArchive {
    pub id: String,
    pub archive: Archive,
    pub true_label: Label,
    /// Store category for benign apps, family for malicious ones.
    pub group: String,
    pub repackable: bool,
    pub signed: bool,
}

impl AppArchive {
    pub fn manifest(&self) -> Result<ManifestInfo> {
        let entry = self
            .archive
            .get(MANIFEST_PATH)
            .ok_or_else(|| Error::extraction("AndroidManifest.xml", 0, "entry missing from archive"))?;
        let text = std::str::from_utf8(entry.bytes())
            .map_err(|_| Error::extraction("AndroidManifest.xml", 0, "not UTF-8"))?;
        ManifestInfo::parse(text)
    }

    pub fn program(&self) -> Result<DexLiteProgram> {
        let entry = self
            .archive
            .get(DEXL_PATH)
            .ok_or_else(|| Error::extraction("classes.dexl", 0, "entry missing from archive"))?;
        let text =
            std::str::from_utf8(entry.bytes()).map_err(|_| Error::extraction("classes.dexl", 0, "not UTF-8"))?;
        DexLiteProgram::parse(text)
    }
}

/// Rebuilds the app through the container codec and marks it signed with
/// the experiment certificate. Apps flagged non-repackable fail, as the
/// real repackaging tool does for a small share of apps.
pub fn repack(app: &AppArchive) -> Result<AppArchive> {
    if !app.repackable {
        return Err(Error::Repack(app.id.clone()));
    }
    let archive = parse_archive(&write_archive(&app.archive)?)?;
    Ok(AppArchive { archive, signed: true, ..app.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_benign: usize,
    pub n_malicious: usize,
    /// Defaults to `min(50, n_benign)`.
    pub n_categories: Option<usize>,
    /// Defaults to `min(196, n_malicious)`.
    pub n_families: Option<usize>,
    pub api_pool_size: usize,
    pub repack_success_rate: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_benign: 500,
            n_malicious: 500,
            n_categories: None,
            n_families: None,
            api_pool_size: 600,
            repack_success_rate: 0.977,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn categories(&self) -> usize {
        self.n_categories.unwrap_or(50.min(self.n_benign))
    }

    pub fn families(&self) -> usize {
        self.n_families.unwrap_or(196.min(self.n_malicious))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_benign == 0 || self.n_malicious == 0 {
            return Err(Error::Config("corpus needs at least one benign and one malicious app".into()));
        }
        if self.categories() == 0 || self.categories() > self.n_benign {
            return Err(Error::Config(format!(
                "n_categories = {} must be in 1..={}",
                self.categories(),
                self.n_benign
            )));
        }
        if self.families() == 0 || self.families() > self.n_malicious {
            return Err(Error::Config(format!(
                "n_families = {} must be in 1..={}",
                self.families(),
                self.n_malicious
            )));
        }
        if !(0.0..=1.0).contains(&self.repack_success_rate) {
            return Err(Error::Config("repack_success_rate must lie in [0, 1]".into()));
        }
        if self.api_pool_size < 100 {
            return Err(Error::Config("api_pool_size must be at least 100".into()));
        }
        Ok(())
    }
}

/// Generator knobs controlling how much benign and malicious apps overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusShape {
    pub sensitive_share: f64,
    pub obfuscated_pool: usize,
    pub category_signature: usize,
    pub benign_signature_rate: f64,
    pub background_calls: usize,
    pub benign_sensitive_rate: f64,
    pub family_markers: usize,
    pub marker_rate: f64,
    pub stealth_rate: f64,
    pub host_rate: f64,
    pub stealth_host_rate: f64,
    /// Non-stealth apps draw a malice intensity from `[min_intensity, 1]`
    /// that scales how many family traits they show.
    pub min_intensity: f64,
}

impl Default for CorpusShape {
    fn default() -> Self {
        Self {
            sensitive_share: 0.15,
            obfuscated_pool: 40,
            category_signature: 150,
            benign_signature_rate: 0.55,
            background_calls: 25,
            benign_sensitive_rate: 0.25,
            family_markers: 25,
            marker_rate: 0.6,
            stealth_rate: 0.1,
            host_rate: 0.35,
            stealth_host_rate: 0.5,
            min_intensity: 0.3,
        }
    }
}

impl CorpusShape {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("sensitive_share", self.sensitive_share),
            ("benign_signature_rate", self.benign_signature_rate),
            ("benign_sensitive_rate", self.benign_sensitive_rate),
            ("marker_rate", self.marker_rate),
            ("stealth_rate", self.stealth_rate),
            ("host_rate", self.host_rate),
            ("stealth_host_rate", self.stealth_host_rate),
            ("min_intensity", self.min_intensity),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("shape.{name} = {v} outside [0, 1]")));
        }
        let sizes = [
            ("obfuscated_pool", self.obfuscated_pool),
            ("category_signature", self.category_signature),
            ("background_calls", self.background_calls),
            ("family_markers", self.family_markers),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("shape.{name} must be at least 1")));
        }
        Ok(())
    }
}

const COMMON_ROOTS: &[&str] = &[
    "android.app",
    "android.content",
    "android.widget",
    "android.view",
    "android.graphics",
    "android.media",
    "android.net",
    "android.os",
    "android.database",
    "java.io",
    "java.lang",
    "java.net",
    "java.util",
    "org.json",
    "org.apache.http",
    "com.google.android",
];

const SENSITIVE_ROOTS: &[&str] = &[
    "android.telephony",
    "android.location",
    "javax.crypto",
    "dalvik.system",
    "android.accounts",
    "java.lang.reflect",
];

const CLASS_WORDS: &[&str] = &[
    "Manager", "Helper", "Client", "Builder", "Service", "Reader", "Writer", "Store", "Loader", "Handler",
    "Factory", "Provider", "Session", "Cursor", "Channel", "Stream", "Parser", "Codec", "Cache", "Util",
];

const METHOD_WORDS: &[&str] = &[
    "get", "set", "open", "close", "read", "write", "send", "query", "load", "init", "start", "stop", "update",
    "create", "delete", "register", "bind", "notify", "connect", "resolve",
];

const BENIGN_PERMISSIONS: &[&str] = &[
    "ACCESS_NETWORK_STATE",
    "ACCESS_WIFI_STATE",
    "VIBRATE",
    "WAKE_LOCK",
    "CAMERA",
    "RECORD_AUDIO",
    "READ_EXTERNAL_STORAGE",
    "WRITE_EXTERNAL_STORAGE",
    "BLUETOOTH",
    "NFC",
    "FOREGROUND_SERVICE",
    "POST_NOTIFICATIONS",
    "USE_BIOMETRIC",
    "READ_CALENDAR",
    "WRITE_CALENDAR",
    "BILLING",
    "SET_WALLPAPER",
    "CHANGE_WIFI_STATE",
    "READ_CONTACTS",
    "ACCESS_COARSE_LOCATION",
];

const DANGEROUS_PERMISSIONS: &[&str] = &[
    "SEND_SMS",
    "READ_SMS",
    "RECEIVE_SMS",
    "READ_PHONE_STATE",
    "CALL_PHONE",
    "RECEIVE_BOOT_COMPLETED",
    "SYSTEM_ALERT_WINDOW",
    "READ_CALL_LOG",
    "PROCESS_OUTGOING_CALLS",
    "INSTALL_PACKAGES",
    "BIND_DEVICE_ADMIN",
    "GET_ACCOUNTS",
    "ACCESS_FINE_LOCATION",
    "MOUNT_UNMOUNT_FILESYSTEMS",
];

const CATEGORY_NAMES: &[&str] = &[
    "art_and_design", "auto_and_vehicles", "beauty", "books_and_reference", "business", "comics",
    "communication", "dating", "education", "entertainment", "events", "finance", "food_and_drink",
    "health_and_fitness", "house_and_home", "libraries_and_demo", "lifestyle", "maps_and_navigation",
    "medical", "music_and_audio", "news_and_magazines", "parenting", "personalization", "photography",
    "productivity", "shopping", "social", "sports", "tools", "travel_and_local", "video_players",
    "weather", "game_action", "game_adventure", "game_arcade", "game_board", "game_card", "game_casino",
    "game_casual", "game_educational", "game_music", "game_puzzle", "game_racing", "game_role_playing",
    "game_simulation", "game_sports", "game_strategy", "game_trivia", "game_word", "watch_face",
];

const SYLLABLES: &[&str] = &["dro", "kor", "vex", "zan", "mul", "tep", "gri", "shu", "bal", "nok", "fen", "rax"];

/// Benign resource files, one per catalog MIME row.
const RESOURCE_PATHS: [(&str, usize, usize); 10] = [
    ("res/values/strings.xml", 800, 6000),
    ("assets/data.bin", 1000, 9000),
    ("res/drawable/icon.gif", 300, 3000),
    ("assets/www/index.html", 500, 4000),
    ("assets/LICENSE.txt", 300, 3000),
    ("lib/plugin.jar", 2000, 12000),
    ("assets/config.json", 200, 2500),
    ("lib/arm64-v8a/libapp.so", 4000, 20000),
    ("assets/www/app.js", 800, 8000),
    ("assets/cache.gz", 500, 5000),
];

pub fn category_name(i: usize) -> String {
    match CATEGORY_NAMES.get(i) {
        Some(n) => (*n).to_owned(),
        None => format!("category_{i}"),
    }
}

pub fn family_name(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut name = String::new();
    let mut x = i;
    for _ in 0..3 {
        name.push_str(SYLLABLES[x % n]);
        x /= n;
    }
    if x > 0 {
        name.push_str(&x.to_string());
    }
    name
}

/// Content of the file every app of a malware family carries. Depends only
/// on the family name, so any ensemble built over the family set detects it.
pub fn family_marker_bytes(family: &str) -> Vec<u8> {
    let mut rng = rng::stream(0xFA_3117, &format!("family-marker:{family}"));
    let len = rng.gen_range(400..2400);
    let mut bytes = vec![0u8; len];
    rng.fill_bytes(&mut bytes);
    bytes
}

pub fn family_marker_path(family: &str) -> String {
    format!("assets/{family}.dat")
}

/// The shared API universe calls are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiPool {
    pub common: Vec<String>,
    pub sensitive: Vec<String>,
    pub obfuscated: Vec<String>,
}

impl ApiPool {
    pub fn new(size: usize, shape: &CorpusShape) -> Self {
        let n_sensitive = ((size as f64) * shape.sensitive_share).round() as usize;
        let make = |roots: &[&str], n: usize, offset: usize| -> Vec<String> {
            (0..n)
                .map(|i| {
                    let k = i + offset;
                    let root = roots[k % roots.len()];
                    let class = CLASS_WORDS[(k / roots.len()) % CLASS_WORDS.len()];
                    let method = METHOD_WORDS[(k / (roots.len() * CLASS_WORDS.len())) % METHOD_WORDS.len()];
                    let serial = k / (roots.len() * CLASS_WORDS.len() * METHOD_WORDS.len());
                    if serial == 0 {
                        format!("{root}.{class}.{method}{}", k % 7)
                    } else {
                        format!("{root}.{class}{serial}.{method}{}", k % 7)
                    }
                })
                .collect()
        };
        let common = make(COMMON_ROOTS, size - n_sensitive, 0);
        let sensitive = make(SENSITIVE_ROOTS, n_sensitive, 0);
        let obfuscated = (0..shape.obfuscated_pool)
            .map(|i| format!("o.{}{}.{}", (b'a' + (i % 26) as u8) as char, i / 26, (b'a' + (i * 7 % 26) as u8) as char))
            .collect();
        Self { common, sensitive, obfuscated }
    }

    /// Every API in the pool, common first.
    pub fn all(&self) -> Vec<String> {
        self.common.iter().chain(&self.sensitive).chain(&self.obfuscated).cloned().collect()
    }

    /// Package roots known to the Markov abstraction.
    pub fn package_roots() -> Vec<String> {
        COMMON_ROOTS.iter().chain(SENSITIVE_ROOTS).map(|s| (*s).to_owned()).collect()
    }
}

struct CategoryProfile {
    name: String,
    signature: Vec<usize>,
    permissions: Vec<&'static str>,
    domains: Vec<String>,
    components: Vec<(String, String)>,
}

struct FamilyProfile {
    name: String,
    host: usize,
    markers: Vec<usize>,
    permissions: Vec<&'static str>,
    c2: String,
}

/// A generated population.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub apps: Vec<AppArchive>,
    pub pool: ApiPool,
    pub categories: Vec<String>,
    pub families: Vec<String>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&AppArchive> {
        self.apps.iter().find(|a| a.id == id)
    }
}

fn sample_indices<R: Rng>(rng: &mut R, len: usize, amount: usize) -> Vec<usize> {
    index::sample(rng, len, amount.min(len)).into_vec()
}

/// Generates the corpus with default shape.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    generate_corpus_with_shape(cfg, &CorpusShape::default())
}

pub fn generate_corpus_with_shape(cfg: &CorpusConfig, shape: &CorpusShape) -> Result<Corpus> {
    cfg.validate()?;
    shape.validate()?;
    let pool = ApiPool::new(cfg.api_pool_size, shape);
    let n_cat = cfg.categories();
    let n_fam = cfg.families();

    let categories: Vec<CategoryProfile> = (0..n_cat)
        .map(|c| {
            let mut r = rng::substream(cfg.seed, "category", c as u64);
            let name = category_name(c);
            let signature = sample_indices(&mut r, pool.common.len(), shape.category_signature);
            let permissions =
                sample_indices(&mut r, BENIGN_PERMISSIONS.len(), 4).into_iter().map(|i| BENIGN_PERMISSIONS[i]).collect();
            let domains = (0..4).map(|k| format!("https://{}.cdn{k}.example.com/", name.replace('_', "-"))).collect();
            let components = (0..3).map(|k| ("service".to_owned(), format!("{}Service{k}", name.replace('_', "")))).collect();
            CategoryProfile { name, signature, permissions, domains, components }
        })
        .collect();

    let families: Vec<FamilyProfile> = (0..n_fam)
        .map(|f| {
            let mut r = rng::substream(cfg.seed, "family", f as u64);
            let name = family_name(f);
            let host = r.gen_range(0..n_cat);
            let markers = sample_indices(&mut r, pool.sensitive.len(), shape.family_markers);
            let permissions = sample_indices(&mut r, DANGEROUS_PERMISSIONS.len(), 3)
                .into_iter()
                .map(|i| DANGEROUS_PERMISSIONS[i])
                .collect();
            let c2 = format!("http://{name}-{}.c2.example.net/gate", r.gen_range(100..999));
            FamilyProfile { name, host, markers, permissions, c2 }
        })
        .collect();

    let total = cfg.n_benign + cfg.n_malicious;
    let apps = par::map_range(total, |i| {
        let mut r = rng::substream(cfg.seed, "app", i as u64);
        if i < cfg.n_benign {
            benign_app(i, &categories[i % n_cat], &pool, shape, cfg, &mut r)
        } else {
            let j = i - cfg.n_benign;
            let fam = &families[j % n_fam];
            malicious_app(j, fam, &categories[fam.host], &pool, shape, cfg, &mut r)
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(Corpus {
        config: cfg.clone(),
        apps,
        pool,
        categories: categories.into_iter().map(|c| c.name).collect(),
        families: families.into_iter().map(|f| f.name).collect(),
    })
}

#[derive(Default)]
struct AppDraft {
    package: String,
    permissions: BTreeSet<String>,
    components: BTreeSet<(String, String)>,
    calls: Vec<String>,
    strings: Vec<String>,
}

impl AppDraft {
    fn build<R: Rng>(mut self, r: &mut R) -> Result<(ManifestInfo, DexLiteProgram)> {
        self.calls.sort();
        self.calls.dedup();
        self.calls.shuffle(r);
        let n_methods = r.gen_range(3..=8usize);
        let mut bodies: Vec<Vec<Statement>> = vec![Vec::new(); n_methods];
        for call in self.calls {
            bodies[r.gen_range(0..n_methods)].push(Statement::call(call));
        }
        for s in self.strings {
            bodies[r.gen_range(0..n_methods)].push(Statement::StringConst(s));
        }
        let names: Vec<String> = (0..n_methods)
            .map(|k| if k == 0 { "onCreate".to_owned() } else { format!("m{k}") })
            .collect();
        for k in 0..n_methods.saturating_sub(1) {
            if r.gen_bool(0.5) {
                let target = r.gen_range(k + 1..n_methods);
                bodies[k].push(Statement::call(format!("self.{}", names[target])));
            }
        }
        let methods = names
            .into_iter()
            .zip(bodies)
            .map(|(name, mut body)| {
                body.shuffle(r);
                Method { name, body }
            })
            .collect();
        let manifest =
            ManifestInfo { package: self.package, permissions: self.permissions, components: self.components };
        Ok((manifest, DexLiteProgram::new(methods)?))
    }
}

fn resource_files<R: Rng>(r: &mut R, archive: &mut Archive) -> Result<()> {
    let catalog_rows = default_catalog();
    for ((path, lo, hi), row) in RESOURCE_PATHS.iter().zip(&catalog_rows) {
        if r.gen_bool(row.inclusion_likelihood) {
            let mut bytes = vec![0u8; r.gen_range(*lo..*hi)];
            r.fill_bytes(&mut bytes);
            archive.push(*path, bytes)?;
        }
    }
    Ok(())
}

fn assemble<R: Rng>(r: &mut R, draft: AppDraft, extra: Option<(String, Vec<u8>)>) -> Result<Archive> {
    let (manifest, program) = draft.build(r)?;
    let mut archive = Archive::new();
    archive.push(MANIFEST_PATH, manifest.to_xml().into_bytes())?;
    archive.push(DEXL_PATH, program.to_text().into_bytes())?;
    resource_files(r, &mut archive)?;
    if let Some((path, bytes)) = extra {
        archive.push(path, bytes)?;
    }
    Ok(archive)
}

fn benign_app<R: Rng>(
    i: usize,
    cat: &CategoryProfile,
    pool: &ApiPool,
    shape: &CorpusShape,
    cfg: &CorpusConfig,
    r: &mut R,
) -> Result<AppArchive> {
    let repackable = r.gen_bool(cfg.repack_success_rate);
    let mut d = AppDraft { package: format!("com.{}.app{i}", cat.name.replace('_', "")), ..Default::default() };
    d.permissions.insert("INTERNET".into());
    for p in &cat.permissions {
        if r.gen_bool(0.9) {
            d.permissions.insert((*p).into());
        }
    }
    if r.gen_bool(0.2) {
        d.permissions.insert(BENIGN_PERMISSIONS[r.gen_range(0..BENIGN_PERMISSIONS.len())].into());
    }
    d.components.insert(("activity".into(), "MainActivity".into()));
    for c in &cat.components {
        if r.gen_bool(0.5) {
            d.components.insert(c.clone());
        }
    }
    for &k in &cat.signature {
        if r.gen_bool(shape.benign_signature_rate) {
            d.calls.push(pool.common[k].clone());
        }
    }
    for _ in 0..shape.background_calls {
        d.calls.push(pool.common[r.gen_range(0..pool.common.len())].clone());
    }
    if r.gen_bool(shape.benign_sensitive_rate) {
        for _ in 0..r.gen_range(1..=3) {
            d.calls.push(pool.sensitive[r.gen_range(0..pool.sensitive.len())].clone());
        }
    }
    if r.gen_bool(0.1) {
        for _ in 0..r.gen_range(1..=3) {
            d.calls.push(pool.obfuscated[r.gen_range(0..pool.obfuscated.len())].clone());
        }
    }
    let n_domains = r.gen_range(1..=3);
    for k in sample_indices(r, cat.domains.len(), n_domains) {
        d.strings.push(format!("{}v{}", cat.domains[k], r.gen_range(1..4)));
    }
    d.strings.push(format!("app-{i}"));
    let archive = assemble(r, d, None)?;
    Ok(AppArchive {
        id: format!("b{i:05}"),
        archive,
        true_label: Label::Benign,
        group: cat.name.clone(),
        repackable,
        signed: false,
    })
}

fn malicious_app<R: Rng>(
    j: usize,
    fam: &FamilyProfile,
    host: &CategoryProfile,
    pool: &ApiPool,
    shape: &CorpusShape,
    cfg: &CorpusConfig,
    r: &mut R,
) -> Result<AppArchive> {
    let repackable = r.gen_bool(cfg.repack_success_rate);
    let stealth = r.gen_bool(shape.stealth_rate);
    // 0 for stealth apps, otherwise how strongly the family traits show.
    let t = if stealth { 0.0 } else { r.gen_range(shape.min_intensity.min(1.0)..=1.0) };
    let lerp = |lo: f64, hi: f64| lo + (hi - lo) * t;
    let mut d = AppDraft { package: format!("com.{}.{}{j}", fam.name, host.name.replace('_', "")), ..Default::default() };
    d.permissions.insert("INTERNET".into());
    for p in &host.permissions {
        if r.gen_bool(0.6) {
            d.permissions.insert((*p).into());
        }
    }
    let perm_rate = lerp(0.25, 0.8);
    for p in &fam.permissions {
        if r.gen_bool(perm_rate) {
            d.permissions.insert((*p).into());
        }
    }
    d.components.insert(("activity".into(), "MainActivity".into()));
    if r.gen_bool(lerp(0.2, 0.8)) {
        d.components.insert(("receiver".into(), format!("{}Receiver", fam.name)));
    }
    let host_rate = lerp(shape.stealth_host_rate, shape.host_rate);
    for &k in &host.signature {
        if r.gen_bool(host_rate) {
            d.calls.push(pool.common[k].clone());
        }
    }
    for _ in 0..shape.background_calls {
        d.calls.push(pool.common[r.gen_range(0..pool.common.len())].clone());
    }
    let first = fam.markers[r.gen_range(0..fam.markers.len())];
    d.calls.push(pool.sensitive[first].clone());
    if !stealth {
        for &k in &fam.markers {
            if r.gen_bool(shape.marker_rate * t) {
                d.calls.push(pool.sensitive[k].clone());
            }
        }
    }
    if r.gen_bool(lerp(0.1, 0.6)) {
        for _ in 0..r.gen_range(2..=6) {
            d.calls.push(pool.obfuscated[r.gen_range(0..pool.obfuscated.len())].clone());
        }
    }
    if r.gen_bool(lerp(0.3, 0.9)) {
        d.strings.push(fam.c2.clone());
    }
    if r.gen_bool(0.5) {
        d.strings.push(format!("{}v1", host.domains[0]));
    }
    let marker = (family_marker_path(&fam.name), family_marker_bytes(&fam.name));
    let archive = assemble(r, d, Some(marker))?;
    Ok(AppArchive {
        id: format!("m{j:05}"),
        archive,
        true_label: Label::Malicious,
        group: fam.name.clone(),
        repackable,
        signed: false,
    })
}

pub const INDEX_FILE: &str = "index.tsv";
pub const ARCHIVE_EXT: &str = "apkz";

/// Writes `<id>.apkz` files and the index into `dir`.
pub fn save_corpus(apps: &[AppArchive], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::from("id\tlabel\tgroup\trepackable\tsigned\n");
    for app in apps {
        io::write_atomic(&dir.join(format!("{}.{ARCHIVE_EXT}", app.id)), &write_archive(&app.archive)?)?;
        index.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            app.id,
            app.true_label.as_u8(),
            app.group,
            app.repackable as u8,
            app.signed as u8
        ));
    }
    io::write_atomic(&dir.join(INDEX_FILE), index.as_bytes())
}

pub fn load_corpus(dir: &Path) -> Result<Vec<AppArchive>> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path)?;
    let bad = |line: usize, reason: &str| Error::Format { path: index_path.clone(), reason: format!("line {line}: {reason}") };
    let mut apps = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(no + 1, "expected 5 columns"));
        }
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(no + 1, "flag must be 0 or 1")),
        };
        let label = cols[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad(no + 1, "label must be 0 or 1"))?;
        let bytes = fs::read(dir.join(format!("{}.{ARCHIVE_EXT}", cols[0])))?;
        apps.push(AppArchive {
            id: cols[0].to_owned(),
            archive: parse_archive(&bytes)?,
            true_label: label,
            group: cols[2].to_owned(),
            repackable: flag(cols[3])?,
            signed: flag(cols[4])?,
        });
    }
    Ok(apps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig { n_benign: 10, n_malicious: 10, seed, ..Default::default() }
    }

    #[test]
    fn shape_rates_checked() {
        assert!(CorpusShape::default().validate().is_ok());
        let bad = CorpusShape { host_rate: 1.5, ..Default::default() };
        assert!(matches!(generate_corpus_with_shape(&small(1), &bad), Err(Error::Config(_))));
        let empty = CorpusShape { family_markers: 0, ..Default::default() };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn deterministic_generation() {
        let a = generate_corpus(&small(7)).unwrap();
        let b = generate_corpus(&small(7)).unwrap();
        assert_eq!(a.apps.len(), 20);
        for (x, y) in a.apps.iter().zip(&b.apps) {
            assert_eq!(write_archive(&x.archive).unwrap(), write_archive(&y.archive).unwrap());
            assert_eq!(x.repackable, y.repackable);
        }
        let c = generate_corpus(&small(8)).unwrap();
        assert_ne!(a.apps[0].archive, c.apps[0].archive);
    }

    #[test]
    fn counts_groups_and_required_entries() {
        let corpus = generate_corpus(&CorpusConfig { n_benign: 103, n_malicious: 40, n_families: Some(7), seed: 1, ..Default::default() })
            .unwrap();
        let benign: Vec<_> = corpus.apps.iter().filter(|a| a.true_label == Label::Benign).collect();
        assert_eq!(benign.len(), 103);
        let mut sizes = std::collections::BTreeMap::new();
        for a in &benign {
            *sizes.entry(a.group.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(sizes.len(), 50);
        let (lo, hi) = (sizes.values().min().unwrap(), sizes.values().max().unwrap());
        assert!(hi - lo <= 1);
        for a in &corpus.apps {
            assert!(a.archive.contains(MANIFEST_PATH) && a.archive.contains(DEXL_PATH));
            a.manifest().unwrap();
            a.program().unwrap();
        }
        let catalog = default_catalog();
        for a in &benign {
            assert!(a.archive.entries().iter().all(|e| catalog.iter().all(|c| c.bytes != e.bytes())));
        }
    }

    #[test]
    fn ten_per_category_at_reference_scale() {
        let cfg = CorpusConfig { seed: 3, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let mut sizes = std::collections::BTreeMap::new();
        for a in corpus.apps.iter().filter(|a| a.true_label == Label::Benign) {
            *sizes.entry(a.group.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(sizes.len(), 50);
        assert!(sizes.values().all(|&n| n == 10));
    }

    #[test]
    fn config_errors() {
        let bad = CorpusConfig { n_benign: 5, n_categories: Some(6), ..small(0) };
        assert!(matches!(generate_corpus(&bad), Err(Error::Config(_))));
        let bad = CorpusConfig { n_families: Some(11), ..small(0) };
        assert!(matches!(generate_corpus(&bad), Err(Error::Config(_))));
        let bad = CorpusConfig { repack_success_rate: 1.5, ..small(0) };
        assert!(generate_corpus(&bad).is_err());
    }

    #[test]
    fn repack_behaviour() {
        let corpus = generate_corpus(&small(11)).unwrap();
        let mut app = corpus.apps[0].clone();
        app.repackable = true;
        let r = repack(&app).unwrap();
        assert!(r.signed);
        assert_eq!(write_archive(&r.archive).unwrap(), write_archive(&app.archive).unwrap());
        app.repackable = false;
        assert!(matches!(repack(&app), Err(Error::Repack(_))));
    }

    #[test]
    fn family_names_unique() {
        let names: BTreeSet<_> = (0..2000).map(family_name).collect();
        assert_eq!(names.len(), 2000);
    }

    #[test]
    fn corpus_directory_round_trip() {
        let corpus = generate_corpus(&small(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus.apps, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus.apps);
    }
}
