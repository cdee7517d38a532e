use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{
    load_wav, normalize_with_scale, polar_parts, resample, stft, AudioSignal, PhaseSpectrogram, HOP,
    SAMPLE_RATE, WINDOW_SIZE,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Source names in condition-vector order.
pub const DEFAULT_TASKS: [&str; 4] = ["vocals", "drums", "bass", "rest"];

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "cunet-manifest 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }
}

/// Track directories relative to the dataset root, with their partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub tracks: Vec<(Partition, String)>,
}

fn valid_track_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(Error::format(format!("manifest must start with `{MANIFEST_MAGIC}`")));
        }
        let mut tracks = Vec::new();
        let mut seen = HashSet::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let partition = match parts.next() {
                Some("train") => Partition::Train,
                Some("test") => Partition::Test,
                other => return Err(Error::format(format!("unknown partition {other:?}"))),
            };
            let id = parts.next().ok_or_else(|| Error::format("manifest line without a track id"))?;
            if parts.next().is_some() || !valid_track_id(id) {
                return Err(Error::format(format!("bad manifest line `{line}`")));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::format(format!("track `{id}` listed twice")));
            }
            tracks.push((partition, id.to_string()));
        }
        Ok(Manifest { tracks })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC}\n");
        for (p, id) in &self.tracks {
            let _ = writeln!(s, "{} {id}", p.as_str());
        }
        s
    }

    pub fn load(root: &Path) -> Result<Manifest> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.clone()),
            _ => Error::Io(e),
        })?;
        Manifest::parse(&text)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::write(root.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }

    pub fn ids(&self, partition: Partition) -> Vec<String> {
        self.tracks.iter().filter(|(p, _)| *p == partition).map(|(_, id)| id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_tracks: Vec<String>,
    pub val_tracks: Vec<String>,
    pub test_tracks: Vec<String>,
}

/// Shuffle the training partition with `seed` and hold out `n_val` tracks.
/// The test partition keeps its manifest order.
pub fn split_dataset(train_ids: &[String], test_ids: &[String], n_val: usize, seed: u64) -> Result<DatasetSplit> {
    let mut seen = HashSet::new();
    for id in train_ids.iter().chain(test_ids) {
        if !seen.insert(id.as_str()) {
            return Err(Error::Input(format!("track `{id}` appears more than once")));
        }
    }
    if n_val >= train_ids.len() && !(n_val == 0 && train_ids.is_empty()) {
        return Err(Error::Input(format!(
            "cannot hold out {n_val} validation tracks from {} training tracks",
            train_ids.len()
        )));
    }
    if n_val == 0 {
        log::warn!("no validation tracks: early stopping is disabled");
    }
    let mut shuffled = train_ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_tracks = shuffled.split_off(shuffled.len() - n_val);
    Ok(DatasetSplit { train_tracks: shuffled, val_tracks, test_tracks: test_ids.to_vec() })
}

/// One track resampled to the working rate, with spectrograms normalized by
/// the mixture maximum.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: String,
    pub mixture: AudioSignal,
    /// Stem audio in task order.
    pub stems: Vec<AudioSignal>,
    /// Normalized mixture magnitudes, `[513 x frames]`.
    pub mixture_mag: Matrix,
    pub stem_mags: Vec<Matrix>,
    pub phase: PhaseSpectrogram,
    pub norm_scale: f64,
}

impl Track {
    pub fn frames(&self) -> usize {
        self.mixture_mag.cols
    }

    /// Sum of every stem except `task_index`.
    pub fn accompaniment_of(&self, task_index: usize) -> Result<AudioSignal> {
        AudioSignal::sum(self.stems.iter().enumerate().filter(|(i, _)| *i != task_index).map(|(_, s)| s))
    }
}

fn load_stem(dir: &Path, name: &str) -> Result<AudioSignal> {
    let path = dir.join(format!("{name}.wav"));
    if !path.exists() {
        return Err(Error::Data(format!("missing stem {}", path.display())));
    }
    let sig = load_wav(&path)?;
    resample(&sig, SAMPLE_RATE)
}

/// Load and analyse a track directory `<root>/<id>`.
pub fn load_track(root: &Path, id: &str, tasks: &[String]) -> Result<Track> {
    let dir = root.join(id);
    let mixture = load_stem(&dir, "mixture")?;
    let stems = tasks.iter().map(|t| load_stem(&dir, t)).collect::<Result<Vec<_>>>()?;
    if stems.iter().any(|s| s.len() != mixture.len()) {
        return Err(Error::Data(format!("stems of `{id}` differ in length from the mixture")));
    }
    let (mag, phase) = polar_parts(&stft(&mixture, WINDOW_SIZE, HOP)?);
    let scale = mag.max();
    if !(scale > 0.0) {
        return Err(Error::Data(format!("mixture of `{id}` is silent")));
    }
    let mixture_mag = normalize_with_scale(&mag, scale)?.values;
    let stem_mags = stems
        .iter()
        .map(|s| {
            let (m, _) = polar_parts(&stft(s, WINDOW_SIZE, HOP)?);
            Ok(normalize_with_scale(&m, scale)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Track { id: id.to_string(), mixture, stems, mixture_mag, stem_mags, phase, norm_scale: scale })
}

/// Dataset root with its manifest, located by argument or `CUNET_DATA_ROOT`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub tasks: Vec<String>,
}

impl Dataset {
    pub fn open(root: Option<&Path>, tasks: &[String]) -> Result<Dataset> {
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => std::env::var_os("CUNET_DATA_ROOT")
                .map(PathBuf::from)
                .ok_or_else(|| Error::config("no dataset root given and CUNET_DATA_ROOT is unset"))?,
        };
        let manifest = Manifest::load(&root)?;
        Ok(Dataset { root, manifest, tasks: tasks.to_vec() })
    }

    pub fn load(&self, id: &str) -> Result<Track> {
        load_track(&self.root, id, &self.tasks)
    }

    pub fn load_all(&self, ids: &[String]) -> Result<Vec<Track>> {
        ids.iter().map(|id| self.load(id)).collect()
    }
}

pub fn default_tasks() -> Vec<String> {
    DEFAULT_TASKS.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:03}")).collect()
    }

    #[test]
    fn ninety_five_five_split() {
        let s = split_dataset(&ids("tr", 100), &ids("te", 50), 5, 1).unwrap();
        assert_eq!((s.train_tracks.len(), s.val_tracks.len(), s.test_tracks.len()), (95, 5, 50));
        let all: HashSet<_> = s.train_tracks.iter().chain(&s.val_tracks).collect();
        assert_eq!(all.len(), 100);
        assert_eq!(s.test_tracks, ids("te", 50));
        assert_eq!(s, split_dataset(&ids("tr", 100), &ids("te", 50), 5, 1).unwrap());
        assert_ne!(s.val_tracks, split_dataset(&ids("tr", 100), &ids("te", 50), 5, 2).unwrap().val_tracks);
    }

    #[test]
    fn zero_validation_tracks() {
        let s = split_dataset(&ids("tr", 3), &[], 0, 1).unwrap();
        assert!(s.val_tracks.is_empty());
        assert_eq!(s.train_tracks.len(), 3);
    }

    #[test]
    fn duplicates_and_oversized_holdout_rejected() {
        let mut t = ids("tr", 3);
        t.push("tr001".into());
        assert!(matches!(split_dataset(&t, &[], 1, 1), Err(Error::Input(_))));
        assert!(matches!(split_dataset(&ids("tr", 3), &ids("tr", 1), 1, 1), Err(Error::Input(_))));
        assert!(matches!(split_dataset(&ids("tr", 3), &[], 3, 1), Err(Error::Input(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest { tracks: vec![(Partition::Train, "a".into()), (Partition::Test, "b-1".into())] };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_garbage() {
        for bad in ["", "train a", "cunet-manifest 1\nvalid a", "cunet-manifest 1\ntrain ../x", "cunet-manifest 1\ntrain a\ntest a"] {
            assert!(matches!(Manifest::parse(bad), Err(Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn missing_stem_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("t")).unwrap();
        let sig = AudioSignal::silence(2048, SAMPLE_RATE);
        crate::audio::write_wav(&dir.path().join("t/mixture.wav"), &sig, crate::audio::SampleFormat::Float32).unwrap();
        assert!(matches!(load_track(dir.path(), "t", &default_tasks()), Err(Error::Data(_))));
    }
}
