//! Restricted `AndroidManifest.xml` reader and writer.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const MANIFEST_PATH: &str = "AndroidManifest.xml";
const FILE: &str = "AndroidManifest.xml";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestInfo {
    pub package: String,
    pub permissions: BTreeSet<String>,
    /// `(kind, name)` pairs, e.g. `("activity", "MainActivity")`.
    pub components: BTreeSet<(String, String)>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let (rep, len) = if rest.starts_with("&amp;") {
            ('&', 5)
        } else if rest.starts_with("&lt;") {
            ('<', 4)
        } else if rest.starts_with("&gt;") {
            ('>', 4)
        } else if rest.starts_with("&quot;") {
            ('"', 6)
        } else {
            return Err(Error::extraction(FILE, line, "unsupported entity"));
        };
        out.push(rep);
        rest = &rest[len..];
    }
    out.push_str(rest);
    Ok(out)
}

impl ManifestInfo {
    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "<manifest package=\"{}\">", escape(&self.package));
        for p in &self.permissions {
            let _ = writeln!(out, "  <uses-permission name=\"{}\"/>", escape(p));
        }
        for (kind, name) in &self.components {
            let _ = writeln!(out, "  <component type=\"{}\" name=\"{}\"/>", escape(kind), escape(name));
        }
        out.push_str("</manifest>\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tags = Tags { text, pos: 0 };
        let (line, open) = tags.next_tag()?.ok_or_else(|| Error::extraction(FILE, 1, "empty manifest"))?;
        let open = Tag::parse(open, line)?;
        if open.name != "manifest" || open.self_closing || open.closing {
            return Err(Error::extraction(FILE, line, "expected <manifest>"));
        }
        let package = open.only_attrs(&["package"], line)?.remove(0);
        let mut info = ManifestInfo { package, ..Default::default() };
        loop {
            let (line, raw) =
                tags.next_tag()?.ok_or_else(|| Error::extraction(FILE, tags.line(), "missing </manifest>"))?;
            let tag = Tag::parse(raw, line)?;
            match (tag.name.as_str(), tag.closing, tag.self_closing) {
                ("manifest", true, _) => break,
                ("uses-permission", false, true) => {
                    info.permissions.insert(tag.only_attrs(&["name"], line)?.remove(0));
                }
                ("component", false, true) => {
                    let mut v = tag.only_attrs(&["type", "name"], line)?;
                    let name = v.pop().unwrap();
                    let kind = v.pop().unwrap();
                    info.components.insert((kind, name));
                }
                _ => return Err(Error::extraction(FILE, line, format!("unexpected tag <{}>", tag.name))),
            }
        }
        if tags.next_tag()?.is_some() {
            return Err(Error::extraction(FILE, tags.line(), "content after </manifest>"));
        }
        Ok(info)
    }
}

struct Tags<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tags<'a> {
    fn line(&self) -> usize {
        self.text[..self.pos].matches('\n').count() + 1
    }

    /// Next `<...>` body with its starting line; only whitespace may sit
    /// between tags.
    fn next_tag(&mut self) -> Result<Option<(usize, &'a str)>> {
        let rest = &self.text[self.pos..];
        let skip = rest.len() - rest.trim_start().len();
        self.pos += skip;
        if self.pos >= self.text.len() {
            return Ok(None);
        }
        let line = self.line();
        let rest = &self.text[self.pos..];
        if !rest.starts_with('<') {
            return Err(Error::extraction(FILE, line, "text content is not allowed"));
        }
        let end = rest.find('>').ok_or_else(|| Error::extraction(FILE, line, "unterminated tag"))?;
        self.pos += end + 1;
        Ok(Some((line, &rest[1..end])))
    }
}

struct Tag {
    name: String,
    attrs: Vec<(String, String)>,
    closing: bool,
    self_closing: bool,
}

impl Tag {
    fn parse(raw: &str, line: usize) -> Result<Tag> {
        let mut body = raw.trim();
        let closing = body.starts_with('/');
        if closing {
            body = body[1..].trim_start();
        }
        let self_closing = body.ends_with('/');
        if self_closing {
            body = body[..body.len() - 1].trim_end();
        }
        let name_end = body.find(char::is_whitespace).unwrap_or(body.len());
        let name = body[..name_end].to_owned();
        if name.is_empty() {
            return Err(Error::extraction(FILE, line, "tag without a name"));
        }
        let mut rest = body[name_end..].trim_start();
        let mut attrs = Vec::new();
        while !rest.is_empty() {
            let eq = rest.find('=').ok_or_else(|| Error::extraction(FILE, line, "attribute without value"))?;
            let key = rest[..eq].trim().to_owned();
            let after = rest[eq + 1..].trim_start();
            let after = after
                .strip_prefix('"')
                .ok_or_else(|| Error::extraction(FILE, line, "attribute value must be double-quoted"))?;
            let close = after.find('"').ok_or_else(|| Error::extraction(FILE, line, "unterminated attribute"))?;
            attrs.push((key, unescape(&after[..close], line)?));
            rest = after[close + 1..].trim_start();
        }
        if closing && (!attrs.is_empty() || self_closing) {
            return Err(Error::extraction(FILE, line, "malformed closing tag"));
        }
        Ok(Tag { name, attrs, closing, self_closing })
    }

    /// Values of exactly the expected attributes, in the expected order.
    fn only_attrs(&self, expected: &[&str], line: usize) -> Result<Vec<String>> {
        if self.attrs.len() != expected.len() {
            return Err(Error::extraction(FILE, line, format!("<{}> takes attributes {expected:?}", self.name)));
        }
        expected
            .iter()
            .map(|key| {
                self.attrs
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| Error::extraction(FILE, line, format!("missing attribute `{key}`")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_written_form() {
        let m = ManifestInfo {
            package: "com.example.app".into(),
            permissions: ["INTERNET".to_owned(), "SEND_SMS".to_owned()].into(),
            components: [("activity".to_owned(), "Main".to_owned())].into(),
        };
        assert_eq!(ManifestInfo::parse(&m.to_xml()).unwrap(), m);
    }

    #[test]
    fn rejects_extra_attributes_and_text() {
        let bad = "<manifest package=\"a\">\n<uses-permission name=\"X\" other=\"y\"/>\n</manifest>\n";
        assert!(matches!(ManifestInfo::parse(bad), Err(Error::Extraction { line: 2, .. })));
        let bad = "<manifest package=\"a\">\nhello\n</manifest>\n";
        assert!(matches!(ManifestInfo::parse(bad), Err(Error::Extraction { line: 2, .. })));
        assert!(ManifestInfo::parse("<manifest package=\"a\">\n").is_err());
        assert!(ManifestInfo::parse("<manifest package=\"a&apos;\"></manifest>").is_err());
    }

    proptest! {
        #[test]
        fn escapes_round_trip(pkg in "[ -~]{1,12}", perms in proptest::collection::btree_set("[ -~]{1,10}", 0..4)) {
            let m = ManifestInfo { package: pkg, permissions: perms, components: BTreeSet::new() };
            prop_assert_eq!(ManifestInfo::parse(&m.to_xml()).unwrap(), m);
        }
    }
}
