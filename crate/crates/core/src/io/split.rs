//! Held-out test set plus k cross-validation folds.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles `case_ids` with `seed`, takes the first `round(test_fraction * n)`
/// (at least 1, leaving at least one case per fold) as the test set, and
/// deals the rest into `k` contiguous folds whose sizes differ by at most one.
pub fn make_split(case_ids: &[String], test_fraction: f64, k: usize, seed: u64) -> Result<DatasetSplit> {
    let n = case_ids.len();
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if n < k + 1 {
        return Err(Error::Config(format!("need at least k + 1 = {} cases, got {n}", k + 1)));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test_fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = case_ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::Config(format!("duplicate case id '{dup}'")));
    }
    let mut ids = case_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - k);
    let rest = ids.split_off(n_test);
    let (base, extra) = (rest.len() / k, rest.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(rest[start..start + len].to_vec());
        start += len;
    }
    Ok(DatasetSplit {
        seed,
        test_ids: ids,
        folds,
    })
}

impl DatasetSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn validation_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// All non-test cases outside `fold`, in fold order.
    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }

    /// `# split seed=S folds=K` followed by `id<TAB>role` lines, role being
    /// `test` or `fold-i`.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("# split seed={} folds={}\n", self.seed, self.k());
        for id in &self.test_ids {
            out.push_str(&format!("{id}\ttest\n"));
        }
        for (i, fold) in self.folds.iter().enumerate() {
            for id in fold {
                out.push_str(&format!("{id}\tfold-{i}\n"));
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().unwrap_or("");
        let bad_head = || Error::InvalidValue(format!("manifest header must be '# split seed=S folds=K', got '{head}'"));
        let rest = head.strip_prefix("# split ").ok_or_else(bad_head)?;
        let mut seed = None;
        let mut k = None;
        for tok in rest.split_whitespace() {
            match tok.split_once('=') {
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("folds", v)) => k = v.parse::<usize>().ok(),
                _ => return Err(bad_head()),
            }
        }
        let (seed, k) = (seed.ok_or_else(bad_head)?, k.ok_or_else(bad_head)?);
        let mut split = DatasetSplit {
            seed,
            test_ids: Vec::new(),
            folds: vec![Vec::new(); k],
        };
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, role) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidValue(format!("manifest line {}: expected 'id<TAB>role'", no + 2)))?;
            if role == "test" {
                split.test_ids.push(id.to_string());
            } else if let Some(i) = role.strip_prefix("fold-").and_then(|s| s.parse::<usize>().ok()) {
                split
                    .folds
                    .get_mut(i)
                    .ok_or_else(|| Error::InvalidValue(format!("manifest line {}: fold {i} >= {k}", no + 2)))?
                    .push(id.to_string());
            } else {
                return Err(Error::InvalidValue(format!("manifest line {}: unknown role '{role}'", no + 2)));
            }
        }
        Ok(split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_manifest(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case_{i:03}")).collect()
    }

    #[test]
    fn hundred_cases() {
        let s = make_split(&ids(100), 0.2, 5, 1).unwrap();
        assert_eq!(s.test_ids.len(), 20);
        assert!(s.folds.iter().all(|f| f.len() == 16));
        assert!((0..5).all(|i| s.train_ids(i).len() == 64));
    }

    #[test]
    fn manifest_round_trip() {
        let s = make_split(&ids(11), 0.2, 3, 9).unwrap();
        assert_eq!(DatasetSplit::from_manifest(&s.to_manifest()).unwrap(), s);
    }

    #[test]
    fn too_few_cases() {
        assert!(make_split(&ids(5), 0.2, 5, 0).is_err());
        assert!(make_split(&ids(6), 0.2, 5, 0).is_ok());
    }
}
