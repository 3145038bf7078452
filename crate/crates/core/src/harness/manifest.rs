//! Dataset manifests: one `audio<TAB>landmarks<TAB>speaker<TAB>split` line per
//! utterance. Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Assigned by [`DatasetManifest::resolve_splits`].
    Auto,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Auto => "auto",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "auto" => Ok(Split::Auto),
            other => Err(Error::Format(format!(
                "unknown split `{other}` (expected train, val, test or auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub landmarks: PathBuf,
    pub speaker: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Share of each speaker's `auto` utterances sent to validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

impl DatasetManifest {
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [audio, landmarks, speaker, split] = fields.as_slice() else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 4 tab-separated fields, found {}",
                    n + 1,
                    fields.len()
                )));
            };
            if speaker.is_empty() {
                return Err(Error::Format(format!("manifest line {}: empty speaker id", n + 1)));
            }
            entries.push(ManifestEntry {
                audio: base_dir.join(audio),
                landmarks: base_dir.join(landmarks),
                speaker: speaker.to_string(),
                split: split
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?,
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Paths are written relative to `base_dir` when they live under it.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| {
            p.strip_prefix(base_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    rel(&e.audio),
                    rel(&e.landmarks),
                    e.speaker,
                    e.split
                )
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Concrete split per entry. `auto` entries are split per speaker: a seeded
    /// shuffle sends round(10%) of each speaker's utterances to validation.
    pub fn resolve_splits(&self, seed: u64) -> Vec<Split> {
        let mut splits: Vec<Split> = self.entries.iter().map(|e| e.split).collect();
        let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.split == Split::Auto {
                by_speaker.entry(&e.speaker).or_default().push(i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in by_speaker.values_mut() {
            idx.shuffle(&mut rng);
            let n_val = (idx.len() as f64 * VALIDATION_FRACTION).round() as usize;
            for (k, &i) in idx.iter().enumerate() {
                splits[i] = if k < n_val { Split::Val } else { Split::Train };
            }
        }
        splits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "# comment\na.wav\ta.txt\ts1\ttrain\n\nsub/b.wav\tsub/b.txt\ts2\tval\r\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[1].audio, PathBuf::from("/data/sub/b.wav"));
        assert_eq!(m.entries[1].split, Split::Val);
        let again = DatasetManifest::parse(&m.to_text(Path::new("/data")), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn malformed_lines_are_format_errors() {
        for bad in ["a.wav\ta.txt\ts1\n", "a.wav\ta.txt\ts1\tholdout\n", "a\tb\t\ttrain\n"] {
            assert!(matches!(
                DatasetManifest::parse(bad, Path::new(".")),
                Err(Error::Format(_))
            ));
        }
    }

    #[test]
    fn empty_text_gives_empty_manifest() {
        assert!(DatasetManifest::parse("\n# nothing\n", Path::new(".")).unwrap().is_empty());
    }

    #[test]
    fn auto_split_is_seeded_and_stratified() {
        let mut text = String::new();
        for i in 0..20 {
            text.push_str(&format!("{i}.wav\t{i}.txt\ts{}\tauto\n", i % 2));
        }
        text.push_str("x.wav\tx.txt\ts0\ttest\n");
        let m = DatasetManifest::parse(&text, Path::new(".")).unwrap();
        let a = m.resolve_splits(3);
        assert_eq!(a, m.resolve_splits(3));
        assert_eq!(a[20], Split::Test);
        for spk in 0..2 {
            let val = (0..20).filter(|i| i % 2 == spk && a[*i] == Split::Val).count();
            assert_eq!(val, 1);
        }
        assert!(!a.contains(&Split::Auto));
    }
}
