//! Manifest-driven preprocessing: audio to Δ/ΔΔ features, landmark tracks to
//! aligned, identity-free targets sharing one mean face.

use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::s;
use rayon::prelude::*;

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::features::{extract_features, load_wav, FeatureSequence, FEATURE_DIM, FRAME_RATE};
use crate::geometry::{
    align_sequence, compute_mean_face, denormalize, normalize, read_landmark_file,
    remove_identity, write_landmark_file, LandmarkFile, LandmarkFrame, LandmarkSequence, MeanFace,
    Pins, CANONICAL_SIDE, FRAME_DIM, NUM_LANDMARKS,
};

/// Largest audio/landmark frame-count difference that is silently truncated.
pub const MAX_FRAME_MISMATCH: usize = 2;

pub const UTTERANCE_KIND: &str = "utterance";
pub const MEAN_FACE_KIND: &str = "mean_face";
pub const MEAN_FACE_FILE: &str = "mean_face.lark";
pub const MEAN_FACE_TEXT_FILE: &str = "mean_face.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Position in the source manifest.
    pub entry: usize,
    pub speaker: String,
    pub split: Split,
    /// T x 128 at 25 FPS.
    pub features: FeatureSequence,
    /// Identity-removed landmarks, T frames.
    pub targets: LandmarkSequence,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryFailure {
    pub entry: usize,
    pub message: String,
}

impl fmt::Display for EntryFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entry {}: {}", self.entry, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub mean_face: MeanFace,
    pub failures: Vec<EntryFailure>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Features and the pinned (not yet identity-removed) landmark track of one
/// entry, truncated to a common length.
pub fn load_entry(entry: &ManifestEntry) -> Result<(FeatureSequence, LandmarkSequence)> {
    let clip = load_wav(&entry.audio)?;
    let features = extract_features(&clip)?;
    let file = read_landmark_file(&entry.landmarks)?;
    let track = file
        .to_sequence()?
        .resample_frame_rate(FRAME_RATE)?
        .map_frames(normalize);
    let aligned = align_sequence(&track, &Pins::canonical())?;

    let (nf, nl) = (features.num_frames(), aligned.len());
    if nf.abs_diff(nl) > MAX_FRAME_MISMATCH {
        return Err(Error::Shape(format!(
            "{nf} audio feature frames vs {nl} landmark frames (limit {MAX_FRAME_MISMATCH})"
        )));
    }
    let n = nf.min(nl);
    let features = FeatureSequence::new(features.frames().slice(s![..n, ..]).to_owned(), FRAME_RATE);
    let aligned = LandmarkSequence::new(aligned.frames()[..n].to_vec(), FRAME_RATE)?;
    Ok((features, aligned))
}

fn describe(entry: &ManifestEntry) -> String {
    format!("{} / {}", entry.audio.display(), entry.landmarks.display())
}

/// Loads every entry (in parallel, results kept in manifest order), computes
/// the mean face over the training split unless one is given, then removes
/// identity from every track. Failed entries are reported and skipped.
pub fn build_dataset(
    manifest: &DatasetManifest,
    seed: u64,
    mean_face: Option<&MeanFace>,
) -> Result<Dataset> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("empty manifest".into()));
    }
    let splits = manifest.resolve_splits(seed);
    let loaded: Vec<Result<(FeatureSequence, LandmarkSequence)>> =
        manifest.entries.par_iter().map(load_entry).collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, (res, entry)) in loaded.into_iter().zip(&manifest.entries).enumerate() {
        match res {
            Ok(pair) => ok.push((i, pair)),
            Err(e) => {
                let f = EntryFailure {
                    entry: i,
                    message: format!("{}: {e}", describe(entry)),
                };
                warn!("rejected {f}");
                failures.push(f);
            }
        }
    }
    if ok.is_empty() {
        let detail: Vec<String> = failures.iter().map(ToString::to_string).collect();
        return Err(Error::EmptyInput(format!(
            "all {} manifest entries failed:\n  {}",
            manifest.len(),
            detail.join("\n  ")
        )));
    }

    let mean_face = match mean_face {
        Some(m) => m.clone(),
        None => {
            let train = ok
                .iter()
                .filter(|(i, _)| splits[*i] == Split::Train)
                .map(|(_, (_, aligned))| aligned);
            compute_mean_face(train).map_err(|_| {
                Error::EmptyInput("no usable training-split entries to compute the mean face".into())
            })?
        }
    };

    let utterances = ok
        .into_iter()
        .map(|(i, (features, aligned))| {
            Ok(Utterance {
                entry: i,
                speaker: manifest.entries[i].speaker.clone(),
                split: splits[i],
                features,
                targets: remove_identity(&aligned, &mean_face)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "dataset: {} utterances ({} train, {} val, {} test), {} rejected",
        utterances.len(),
        utterances.iter().filter(|u| u.split == Split::Train).count(),
        utterances.iter().filter(|u| u.split == Split::Val).count(),
        utterances.iter().filter(|u| u.split == Split::Test).count(),
        failures.len()
    );
    Ok(Dataset {
        utterances,
        mean_face,
        failures,
    })
}

pub fn utterance_file_name(entry: usize) -> String {
    format!("entry_{entry:04}.lark")
}

pub fn mean_face_container(mean: &MeanFace) -> Result<Container> {
    let mut c = Container::new(MEAN_FACE_KIND);
    c.set_meta("source_count", mean.source_count);
    c.push("mean_face", vec![NUM_LANDMARKS, 2], mean.frame.to_flat())?;
    Ok(c)
}

pub fn mean_face_from_container(c: &Container) -> Result<MeanFace> {
    if c.meta("kind")? != MEAN_FACE_KIND {
        return Err(Error::Format("container does not hold a mean face".into()));
    }
    let t = c.tensor("mean_face")?;
    t.expect_shape(&[NUM_LANDMARKS, 2])?;
    Ok(MeanFace {
        frame: LandmarkFrame::from_flat(&t.data)?,
        source_count: c.meta_parse("source_count")?,
    })
}

/// The mean face as a canonical-frame (600 x 600 px) landmark file.
pub fn mean_face_landmark_file(mean: &MeanFace) -> LandmarkFile {
    LandmarkFile {
        width: CANONICAL_SIDE,
        height: CANONICAL_SIDE,
        fps: FRAME_RATE,
        mean_face: true,
        frames: vec![denormalize(&mean.frame)],
    }
}

/// Writes one container per utterance plus the mean face (binary and text).
/// Returns the written utterance paths in dataset order.
pub fn write_preprocessed(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(dataset.utterances.len());
    for u in &dataset.utterances {
        let mut c = Container::new(UTTERANCE_KIND);
        c.set_meta("entry", u.entry);
        c.set_meta("speaker", &u.speaker);
        c.set_meta("split", u.split);
        c.set_meta("frame_rate", FRAME_RATE);
        let f = u.features.frames();
        c.push("features", vec![f.nrows(), f.ncols()], f.iter().copied().collect())?;
        let t = u.targets.to_matrix();
        c.push("targets", vec![t.nrows(), t.ncols()], t.into_raw_vec_and_offset().0)?;
        let path = dir.join(utterance_file_name(u.entry));
        c.write(&path)?;
        paths.push(path);
    }
    mean_face_container(&dataset.mean_face)?.write(&dir.join(MEAN_FACE_FILE))?;
    write_landmark_file(
        &dir.join(MEAN_FACE_TEXT_FILE),
        &mean_face_landmark_file(&dataset.mean_face),
    )?;
    Ok(paths)
}

pub fn read_utterance(path: &Path) -> Result<Utterance> {
    let c = Container::read(path)?;
    if c.meta("kind")? != UTTERANCE_KIND {
        return Err(Error::Format(format!("{} is not an utterance file", path.display())));
    }
    let f = c.tensor("features")?;
    let t = c.tensor("targets")?;
    let n = f.shape.first().copied().unwrap_or(0);
    f.expect_shape(&[n, FEATURE_DIM])?;
    t.expect_shape(&[n, FRAME_DIM])?;
    let features = ndarray::Array2::from_shape_vec((n, FEATURE_DIM), f.data.clone())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let targets = ndarray::Array2::from_shape_vec((n, FRAME_DIM), t.data.clone())
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Utterance {
        entry: c.meta_parse("entry")?,
        speaker: c.meta("speaker")?.to_string(),
        split: c.meta_parse("split")?,
        features: FeatureSequence::new(features, FRAME_RATE),
        targets: LandmarkSequence::from_matrix(&targets, FRAME_RATE)?,
    })
}

/// Reads a directory produced by [`write_preprocessed`].
pub fn read_preprocessed(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("entry_") && n.ends_with(".lark"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no preprocessed utterances in {}",
            dir.display()
        )));
    }
    let utterances = paths
        .iter()
        .map(|p| read_utterance(p))
        .collect::<Result<Vec<_>>>()?;
    let mean_face = mean_face_from_container(&Container::read(&dir.join(MEAN_FACE_FILE))?)?;
    Ok(Dataset {
        utterances,
        mean_face,
        failures: Vec::new(),
    })
}
