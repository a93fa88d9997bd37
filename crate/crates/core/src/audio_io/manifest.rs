//! Per-scene train / held-out partitions.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scene: String,
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Scenes with fewer than eight recordings, whose held-out set is empty.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn paths(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_path())
    }

    pub fn count(&self, split: Split) -> usize {
        self.paths(split).count()
    }

    /// `scene<TAB>path<TAB>split` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.scene, e.path.display(), e.split))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [scene, path, split] = fields[..] else {
                return Err(Error::Dataset(format!("manifest line {}: expected 3 tab-separated fields", n + 1)));
            };
            entries.push(ManifestEntry {
                scene: scene.to_string(),
                path: PathBuf::from(path),
                split: split.parse()?,
            });
        }
        Ok(Self { entries, warnings: Vec::new() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Loads a manifest; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m = Self::from_text(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(m)
    }
}

/// Shuffles each scene's recordings with `seed` and assigns the first
/// ⌊7n/8⌋ to training.
pub fn split_dataset(scenes: &[(String, Vec<PathBuf>)], seed: u64) -> Result<DatasetManifest> {
    if scenes.is_empty() {
        return Err(Error::Dataset("no scenes given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::default();
    for (scene, files) in scenes {
        if scene.contains(['\t', '\n']) {
            return Err(Error::Dataset(format!("scene label {scene:?} contains a tab or newline")));
        }
        let mut files = files.clone();
        files.sort();
        files.shuffle(&mut rng);
        let n_train = files.len() * 7 / 8;
        if files.len() < 8 {
            manifest.warnings.push(format!(
                "scene `{scene}` has {} recordings; its held-out set is {}",
                files.len(),
                if files.len() == n_train { "empty" } else { "tiny" }
            ));
        }
        for (i, path) in files.into_iter().enumerate() {
            manifest.entries.push(ManifestEntry {
                scene: scene.clone(),
                path,
                split: if i < n_train { Split::Train } else { Split::Heldout },
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(label: &str, n: usize) -> (String, Vec<PathBuf>) {
        (label.into(), (0..n).map(|i| PathBuf::from(format!("{label}/{i:02}.wav"))).collect())
    }

    #[test]
    fn seven_eighths_per_scene() {
        let m = split_dataset(&[scene("park", 8), scene("street", 16)], 1).unwrap();
        let count = |s: &str, sp: Split| m.entries.iter().filter(|e| e.scene == s && e.split == sp).count();
        assert_eq!((count("park", Split::Train), count("park", Split::Heldout)), (7, 1));
        assert_eq!((count("street", Split::Train), count("street", Split::Heldout)), (14, 2));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let scenes = [scene("a", 16)];
        assert_eq!(split_dataset(&scenes, 5).unwrap(), split_dataset(&scenes, 5).unwrap());
        let differs = (0..10).any(|s| split_dataset(&scenes, s).unwrap() != split_dataset(&scenes, 5).unwrap());
        assert!(differs);
    }

    #[test]
    fn small_scenes_warn_and_empty_input_fails() {
        let m = split_dataset(&[scene("tiny", 3)], 0).unwrap();
        assert_eq!(m.count(Split::Heldout), 1);
        assert_eq!(m.warnings.len(), 1);
        assert!(split_dataset(&[], 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = split_dataset(&[scene("a", 9), scene("b", 8)], 3).unwrap();
        let back = DatasetManifest::from_text(&m.to_text()).unwrap();
        assert_eq!(back.entries, m.entries);
        assert!(DatasetManifest::from_text("a\tb\n").is_err());
        assert!(DatasetManifest::from_text("a\tb\ttest\n").is_err());
    }
}
