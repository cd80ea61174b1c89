//! Noise signals grouped by category and split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{load_wav, read_noise_manifest, rms, DspError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NoiseSplit {
    Train,
    TestSeen,
    TestUnseen,
}

impl NoiseSplit {
    pub fn is_test(self) -> bool {
        self != NoiseSplit::Train
    }
}

impl FromStr for NoiseSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(NoiseSplit::Train),
            "test-seen" => Ok(NoiseSplit::TestSeen),
            "test-unseen" => Ok(NoiseSplit::TestUnseen),
            other => Err(format!(
                "unknown noise split `{other}` (expected train, test-seen or test-unseen)"
            )),
        }
    }
}

impl fmt::Display for NoiseSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseSplit::Train => "train",
            NoiseSplit::TestSeen => "test-seen",
            NoiseSplit::TestUnseen => "test-unseen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEntry {
    pub noise_id: String,
    pub category: String,
    pub split: NoiseSplit,
    pub path: PathBuf,
    pub samples: Vec<f32>,
}

impl NoiseEntry {
    fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.samples {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Noise files indexed by (split, category). Construction guarantees that no
/// file, by id, path or content, is shared between the train split and a
/// test split.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    entries: Vec<NoiseEntry>,
    index: BTreeMap<(NoiseSplit, String), Vec<usize>>,
}

impl NoiseBank {
    pub fn new(entries: Vec<NoiseEntry>) -> Result<Self, DspError> {
        let mut ids: HashMap<&str, NoiseSplit> = HashMap::new();
        let mut paths: HashMap<&Path, NoiseSplit> = HashMap::new();
        let mut contents: HashMap<[u8; 32], (NoiseSplit, &str)> = HashMap::new();
        let crosses = |a: NoiseSplit, b: NoiseSplit| a.is_test() != b.is_test();
        for e in &entries {
            if rms(&e.samples) == 0.0 {
                return Err(DspError::SilentNoise);
            }
            if let Some(prev) = ids.insert(&e.noise_id, e.split) {
                return Err(DspError::SplitViolation(if crosses(prev, e.split) {
                    format!("noise id `{}` appears in both {prev} and {}", e.noise_id, e.split)
                } else {
                    format!("duplicate noise id `{}`", e.noise_id)
                }));
            }
            if let Some(prev) = paths.insert(&e.path, e.split) {
                if crosses(prev, e.split) {
                    return Err(DspError::SplitViolation(format!(
                        "file {} appears in both {prev} and {}",
                        e.path.display(),
                        e.split
                    )));
                }
            }
            if let Some((prev, other)) = contents.insert(e.content_hash(), (e.split, &e.noise_id)) {
                if crosses(prev, e.split) {
                    return Err(DspError::SplitViolation(format!(
                        "noise `{}` ({}) has the same content as `{other}` ({prev})",
                        e.noise_id, e.split
                    )));
                }
            }
        }
        let mut index: BTreeMap<(NoiseSplit, String), Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry((e.split, e.category.clone())).or_default().push(i);
        }
        Ok(NoiseBank { entries, index })
    }

    /// Reads a noise manifest and every WAV it names.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self, DspError> {
        let records = read_noise_manifest(manifest)?;
        let entries = records
            .into_iter()
            .map(|r| {
                let u = load_wav(&r.wav_path)?;
                Ok(NoiseEntry {
                    noise_id: r.noise_id,
                    category: r.category,
                    split: r.split,
                    path: r.wav_path,
                    samples: u.samples,
                })
            })
            .collect::<Result<Vec<_>, DspError>>()?;
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NoiseEntry] {
        &self.entries
    }

    /// Categories with at least one file in `split`, sorted.
    pub fn categories(&self, split: NoiseSplit) -> Vec<&str> {
        self.index
            .keys()
            .filter(|(s, _)| *s == split)
            .map(|(_, c)| c.as_str())
            .collect()
    }

    pub fn files(&self, split: NoiseSplit, category: &str) -> Vec<&NoiseEntry> {
        self.index
            .get(&(split, category.to_string()))
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Test files of `category`, from whichever test split holds it. Asking
    /// for a category that only exists in the train split is a split
    /// violation.
    pub fn test_files(&self, category: &str) -> Result<Vec<&NoiseEntry>, DspError> {
        let mut out = self.files(NoiseSplit::TestSeen, category);
        out.extend(self.files(NoiseSplit::TestUnseen, category));
        if out.is_empty() {
            return Err(DspError::SplitViolation(
                if self.files(NoiseSplit::Train, category).is_empty() {
                    format!("no noise of category `{category}` in the bank")
                } else {
                    format!("category `{category}` only has train-split noise")
                },
            ));
        }
        Ok(out)
    }

    /// Uniform category, then uniform file within it.
    pub fn pick<R: Rng>(&self, split: NoiseSplit, rng: &mut R) -> Option<&NoiseEntry> {
        let cats = self.categories(split);
        if cats.is_empty() {
            return None;
        }
        let cat = cats[rng.gen_range(0..cats.len())];
        let files = self.files(split, cat);
        Some(files[rng.gen_range(0..files.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(id: &str, cat: &str, split: NoiseSplit, seed: f32) -> NoiseEntry {
        NoiseEntry {
            noise_id: id.into(),
            category: cat.into(),
            split,
            path: PathBuf::from(format!("{id}.wav")),
            samples: (0..64).map(|i| ((i as f32 + seed) * 0.37).sin()).collect(),
        }
    }

    #[test]
    fn disjoint_bank_builds_and_picks_per_split() {
        let bank = NoiseBank::new(vec![
            entry("a", "pink", NoiseSplit::Train, 1.0),
            entry("b", "music", NoiseSplit::Train, 2.0),
            entry("c", "pink", NoiseSplit::TestSeen, 3.0),
            entry("d", "white", NoiseSplit::TestUnseen, 4.0),
        ])
        .unwrap();
        assert_eq!(bank.categories(NoiseSplit::Train), vec!["music", "pink"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(bank.pick(NoiseSplit::Train, &mut rng).unwrap().split, NoiseSplit::Train);
        }
        assert_eq!(bank.test_files("white").unwrap()[0].noise_id, "d");
        assert!(matches!(bank.test_files("music"), Err(DspError::SplitViolation(_))));
    }

    #[test]
    fn shared_files_across_splits_are_rejected() {
        let same_id = NoiseBank::new(vec![
            entry("a", "pink", NoiseSplit::Train, 1.0),
            entry("a", "pink", NoiseSplit::TestSeen, 2.0),
        ]);
        assert!(matches!(same_id, Err(DspError::SplitViolation(_))));

        let mut copy = entry("b", "pink", NoiseSplit::TestSeen, 1.0);
        copy.path = PathBuf::from("elsewhere.wav");
        let same_content = NoiseBank::new(vec![entry("a", "pink", NoiseSplit::Train, 1.0), copy]);
        assert!(matches!(same_content, Err(DspError::SplitViolation(_))));

        let mut same_path = entry("b", "pink", NoiseSplit::TestUnseen, 5.0);
        same_path.path = PathBuf::from("a.wav");
        let shared = NoiseBank::new(vec![entry("a", "pink", NoiseSplit::Train, 1.0), same_path]);
        assert!(matches!(shared, Err(DspError::SplitViolation(_))));
    }
}
