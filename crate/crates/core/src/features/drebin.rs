use std::collections::BTreeSet;

use crate::corpus::{dexl, AppArchive, DexLiteProgram, ManifestInfo};
use crate::error::Result;

/// Namespaced binary features: `perm::`, `comp::`, `api::`, `url::`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrebinFeatureSet {
    pub features: BTreeSet<String>,
}

impl DrebinFeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, f: &str) -> bool {
        self.features.contains(f)
    }

    /// Jaccard distance `1 - |A ∩ B| / |A ∪ B|`; zero for two empty sets.
    pub fn jaccard_distance(&self, other: &Self) -> f64 {
        let inter = self.features.intersection(&other.features).count();
        let union = self.features.len() + other.features.len() - inter;
        if union == 0 {
            0.0
        } else {
            1.0 - inter as f64 / union as f64
        }
    }
}

pub fn extract_drebin(app: &AppArchive) -> Result<DrebinFeatureSet> {
    Ok(extract_drebin_from(&app.manifest()?, &app.program()?))
}

pub fn extract_drebin_from(manifest: &ManifestInfo, program: &DexLiteProgram) -> DrebinFeatureSet {
    let mut features = BTreeSet::new();
    for p in &manifest.permissions {
        features.insert(format!("perm::{p}"));
    }
    for (kind, name) in &manifest.components {
        features.insert(format!("comp::{kind}:{name}"));
    }
    for (_, callee) in program.calls() {
        if dexl::internal_target(callee).is_none() {
            features.insert(format!("api::{callee}"));
        }
    }
    for lit in program.string_consts() {
        if lit.starts_with("http://") || lit.starts_with("https://") {
            features.insert(format!("url::{lit}"));
        }
    }
    DrebinFeatureSet { features }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Method, Statement};

    #[test]
    fn example_feature_set() {
        let manifest = ManifestInfo { package: "a.b".into(), permissions: ["INTERNET".to_owned()].into(), ..Default::default() };
        let program = DexLiteProgram::new(vec![Method {
            name: "m".into(),
            body: vec![
                Statement::call("android.net.Url.openConnection"),
                Statement::StringConst("http://x.com".into()),
                Statement::StringConst("ftp://nope".into()),
                Statement::call("self.m"),
            ],
        }])
        .unwrap();
        let fs = extract_drebin_from(&manifest, &program);
        let expected: BTreeSet<String> =
            ["perm::INTERNET", "api::android.net.Url.openConnection", "url::http://x.com"].iter().map(|s| s.to_string()).collect();
        assert_eq!(fs.features, expected);
    }

    #[test]
    fn guarded_calls_count_like_unguarded() {
        let manifest = ManifestInfo { package: "a.b".into(), ..Default::default() };
        let g = DexLiteProgram::new(vec![Method { name: "m".into(), body: vec![Statement::guarded_call("pkg.X.m")] }]).unwrap();
        let u = DexLiteProgram::new(vec![Method { name: "m".into(), body: vec![Statement::call("pkg.X.m")] }]).unwrap();
        assert_eq!(extract_drebin_from(&manifest, &g), extract_drebin_from(&manifest, &u));
        assert!(extract_drebin_from(&manifest, &g).contains("api::pkg.X.m"));
    }

    #[test]
    fn components_are_namespaced() {
        let manifest = ManifestInfo {
            package: "a.b".into(),
            components: [("activity".to_owned(), "Main".to_owned())].into(),
            ..Default::default()
        };
        let fs = extract_drebin_from(&manifest, &DexLiteProgram::default());
        assert!(fs.contains("comp::activity:Main"));
    }
}
