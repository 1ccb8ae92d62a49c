//! Injectable payload catalog: the smallest known-malicious file for each
//! of the ten MIME types most commonly found inside benign apps.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Ensemble size the reference detection counts are expressed over.
pub const REFERENCE_ENGINES: usize = 62;
/// Largest admissible payload, in bytes.
pub const MAX_PAYLOAD_BYTES: usize = 4505;
const CATALOG_SEED: u64 = 0x5EED_CA7A_1065;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalwareCatalogEntry {
    pub mime: String,
    pub filename: String,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub family: String,
    /// Indices of the engines that carry this file's digest.
    pub detection_profile: BTreeSet<usize>,
    pub inclusion_likelihood: f64,
}

struct Row {
    mime: &'static str,
    inclusion: f64,
    detections: usize,
    family: &'static str,
    size: usize,
    filename: &'static str,
    magic: &'static [u8],
}

const ROWS: [Row; 10] = [
    Row { mime: "text/xml", inclusion: 1.000, detections: 29, family: "groooboor", size: 316, filename: "layout_ext.xml", magic: b"<?xml version=\"1.0\"?>" },
    Row { mime: "application/octet-stream", inclusion: 0.994, detections: 33, family: "gnaeus", size: 650, filename: "blob.bin", magic: b"" },
    Row { mime: "image/gif", inclusion: 0.987, detections: 32, family: "chopper", size: 55, filename: "banner.gif", magic: b"GIF89a" },
    Row { mime: "text/html", inclusion: 0.979, detections: 46, family: "scrinject", size: 92, filename: "promo.html", magic: b"<html>" },
    Row { mime: "text/plain", inclusion: 0.972, detections: 23, family: "smallasp", size: 22, filename: "notes.txt", magic: b"" },
    Row { mime: "application/java-archive", inclusion: 0.928, detections: 22, family: "webshell", size: 985, filename: "plugin.jar", magic: b"PK\x03\x04" },
    Row { mime: "application/json", inclusion: 0.916, detections: 21, family: "coinminer", size: 1100, filename: "settings.json", magic: b"{\"" },
    Row { mime: "application/x-sharedlib", inclusion: 0.898, detections: 33, family: "lotoor", size: 4505, filename: "libhelper.so", magic: b"\x7fELF" },
    Row { mime: "application/javascript", inclusion: 0.857, detections: 21, family: "scrinject", size: 590, filename: "bundle.js", magic: b"var " },
    Row { mime: "application/gzip", inclusion: 0.851, detections: 31, family: "dloadr", size: 782, filename: "data.gz", magic: b"\x1f\x8b" },
];

/// Detection count of a reference row rescaled to an ensemble of `engines`.
fn scaled_detections(detections: usize, engines: usize) -> usize {
    if engines == REFERENCE_ENGINES {
        detections
    } else {
        ((detections * engines) as f64 / REFERENCE_ENGINES as f64).round().max(1.0) as usize
    }
}

/// The ten reference payloads over a 62-engine ensemble.
pub fn default_catalog() -> Vec<MalwareCatalogEntry> {
    catalog_for_ensemble(REFERENCE_ENGINES)
}

/// The ten reference payloads with detection profiles scaled to `engines`.
pub fn catalog_for_ensemble(engines: usize) -> Vec<MalwareCatalogEntry> {
    ROWS.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = rng::substream(CATALOG_SEED, "catalog-bytes", i as u64);
            let mut bytes = vec![0u8; row.size];
            rng.fill_bytes(&mut bytes);
            let magic = &row.magic[..row.magic.len().min(row.size)];
            bytes[..magic.len()].copy_from_slice(magic);

            let mut engines_order: Vec<usize> = (0..engines).collect();
            engines_order.shuffle(&mut rng::substream(CATALOG_SEED, "catalog-profile", i as u64));
            let count = scaled_detections(row.detections, engines).min(engines);
            MalwareCatalogEntry {
                mime: row.mime.to_owned(),
                filename: row.filename.to_owned(),
                bytes,
                family: row.family.to_owned(),
                detection_profile: engines_order[..count].iter().copied().collect(),
                inclusion_likelihood: row.inclusion,
            }
        })
        .collect()
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() % 2 != 0 {
            return Err(D::Error::custom("odd-length hex string"));
        }
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let c = default_catalog();
        assert_eq!(c.len(), 10);
        let det: Vec<_> = c.iter().map(|e| e.detection_profile.len()).collect();
        assert_eq!(det, [29, 33, 32, 46, 23, 22, 21, 33, 21, 31]);
        let sizes: Vec<_> = c.iter().map(|e| e.bytes.len()).collect();
        assert_eq!(sizes, [316, 650, 55, 92, 22, 985, 1100, 4505, 590, 782]);
        let fam: Vec<_> = c.iter().map(|e| e.family.as_str()).collect();
        assert_eq!(
            fam,
            ["groooboor", "gnaeus", "chopper", "scrinject", "smallasp", "webshell", "coinminer", "lotoor", "scrinject", "dloadr"]
        );
        assert_eq!(c[2].mime, "image/gif");
        assert_eq!(c[7].family, "lotoor");
        assert!(c.iter().all(|e| e.bytes.len() <= MAX_PAYLOAD_BYTES));
        assert!(c.iter().all(|e| e.detection_profile.len() >= 21));
        assert!(c.iter().all(|e| e.detection_profile.iter().all(|&i| i < REFERENCE_ENGINES)));
    }

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(default_catalog(), default_catalog());
        let c = default_catalog();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert_ne!(c[i].bytes, c[j].bytes);
            }
        }
    }

    #[test]
    fn scaled_profiles() {
        let c = catalog_for_ensemble(70);
        assert_eq!(c[3].detection_profile.len(), 52);
        assert!(c.iter().all(|e| e.detection_profile.iter().all(|&i| i < 70)));
    }
}
