//! Pose-sequence data model, the on-disk dataset format, and subject-aware
//! train/validation/test partitioning.
//!
//! A dataset directory holds `manifest.json` (an array of
//! `{clip_id, subject_id, fps, label, file}`), an optional `topology.json`, and
//! one JSON record per clip with a row-major M×J×C coordinate array and an
//! optional M×J confidence array.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::skeleton::SkeletonTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub clip_id: String,
    pub subject_id: String,
    pub fps: f64,
    /// 1 = poor repertoire, 0 = normal.
    pub label: u8,
    frames: usize,
    joints: usize,
    channels: usize,
    coords: Vec<f64>,
    pub confidence: Option<Vec<f64>>,
}

impl PoseSequence {
    pub fn new(
        clip_id: impl Into<String>,
        subject_id: impl Into<String>,
        fps: f64,
        label: u8,
        frames: usize,
        joints: usize,
        channels: usize,
        coords: Vec<f64>,
    ) -> Result<Self> {
        let seq = PoseSequence {
            clip_id: clip_id.into(),
            subject_id: subject_id.into(),
            fps,
            label,
            frames,
            joints,
            channels,
            coords,
            confidence: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_confidence(mut self, confidence: Vec<f64>) -> Result<Self> {
        self.confidence = Some(confidence);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.clip_id;
        if self.coords.len() != self.frames * self.joints * self.channels {
            return Err(Error::schema(
                id,
                "coords",
                format!(
                    "length {} does not match {}×{}×{}",
                    self.coords.len(),
                    self.frames,
                    self.joints,
                    self.channels
                ),
            ));
        }
        if self.frames == 0 {
            return Err(Error::schema(id, "frames", "empty sequence"));
        }
        if let Some(i) = self.coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::schema(
                id,
                "coords",
                format!("non-finite value at index {i}"),
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::schema(id, "fps", "must be positive"));
        }
        if self.label > 1 {
            return Err(Error::schema(id, "label", "must be 0 or 1"));
        }
        if let Some(c) = &self.confidence {
            if c.len() != self.frames * self.joints {
                return Err(Error::schema(id, "confidence", "length must be M×J"));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::schema(id, "confidence", "values must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn joints(&self) -> usize {
        self.joints
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    #[inline]
    pub fn get(&self, m: usize, j: usize, c: usize) -> f64 {
        self.coords[(m * self.joints + j) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, m: usize, j: usize, c: usize, v: f64) {
        self.coords[(m * self.joints + j) * self.channels + c] = v;
    }

    #[inline]
    pub fn point(&self, m: usize, j: usize) -> [f64; 2] {
        let o = (m * self.joints + j) * self.channels;
        [self.coords[o], self.coords[o + 1]]
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        let w = self.joints * self.channels;
        &self.coords[m * w..(m + 1) * w]
    }

    /// Replaces the coordinate block, keeping metadata. Used by transforms that
    /// change the joint count or frame order.
    pub fn with_coords(&self, frames: usize, joints: usize, coords: Vec<f64>) -> PoseSequence {
        assert_eq!(coords.len(), frames * joints * self.channels);
        PoseSequence {
            frames,
            joints,
            coords,
            confidence: None,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> PoseSequence {
        PoseSequence {
            clip_id: self.clip_id.clone(),
            subject_id: self.subject_id.clone(),
            fps: self.fps,
            label: self.label,
            frames: self.frames,
            joints: self.joints,
            channels: self.channels,
            coords: Vec::new(),
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub topology: SkeletonTopology,
    pub clips: Vec<PoseSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip(&self, clip_id: &str) -> Option<&PoseSequence> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&PoseSequence>> {
        let by_id: BTreeMap<&str, &PoseSequence> =
            self.clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Split(format!("clip `{id}` not in dataset")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub subject_id: String,
    pub fps: f64,
    pub label: i64,
    pub file: String,
}

/// Per-clip record file. Metadata fields are optional so that a record can be
/// used on its own (`predict --clip`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    pub frames: usize,
    pub joints: usize,
    pub channels: usize,
    pub coords: Vec<Option<f64>>,
    #[serde(default)]
    pub confidence: Option<Vec<f64>>,
}

impl ClipRecord {
    pub fn from_sequence(seq: &PoseSequence) -> Self {
        ClipRecord {
            clip_id: seq.clip_id.clone(),
            subject_id: Some(seq.subject_id.clone()),
            fps: Some(seq.fps),
            label: Some(seq.label as i64),
            frames: seq.frames,
            joints: seq.joints,
            channels: seq.channels,
            coords: seq.coords.iter().map(|&v| Some(v)).collect(),
            confidence: seq.confidence.clone(),
        }
    }

    fn into_sequence(self, subject_id: String, fps: f64, label: i64) -> Result<PoseSequence> {
        let id = self.clip_id.clone();
        if !(0..=1).contains(&label) {
            return Err(Error::schema(&id, "label", format!("{label} is not 0 or 1")));
        }
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::schema(&id, "coords", format!("non-finite value at index {i}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let seq = PoseSequence::new(
            self.clip_id,
            subject_id,
            fps,
            label as u8,
            self.frames,
            self.joints,
            self.channels,
            coords,
        )?;
        match self.confidence {
            Some(c) => seq.with_confidence(c),
            None => Ok(seq),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::io(
            &manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        ));
    }
    let manifest: Vec<ManifestEntry> = read_json(&manifest_path)?;
    let topo_path = dir.join("topology.json");
    let topology = if topo_path.exists() {
        read_json(&topo_path)?
    } else {
        SkeletonTopology::coco17()
    };
    topology.validate()?;

    let mut seen = HashSet::new();
    let mut clips = Vec::with_capacity(manifest.len());
    for entry in manifest {
        if !seen.insert(entry.clip_id.clone()) {
            return Err(Error::schema(&entry.clip_id, "clip_id", "duplicate clip id"));
        }
        let path = dir.join(&entry.file);
        let record: ClipRecord = read_json(&path).map_err(|e| match e {
            Error::Parse { message, .. } => Error::schema(&entry.clip_id, "record", message),
            other => other,
        })?;
        if record.clip_id != entry.clip_id {
            return Err(Error::schema(
                &entry.clip_id,
                "clip_id",
                format!("record file declares `{}`", record.clip_id),
            ));
        }
        if record.joints != topology.joint_count() {
            return Err(Error::JointCount {
                clip_id: entry.clip_id,
                expected: topology.joint_count(),
                found: record.joints,
            });
        }
        if record.channels != topology.channel_count {
            return Err(Error::schema(
                &entry.clip_id,
                "channels",
                format!("expected {}", topology.channel_count),
            ));
        }
        clips.push(record.into_sequence(entry.subject_id, entry.fps, entry.label)?);
    }
    Ok(Dataset { topology, clips })
}

/// Writes `dataset` in the directory format read by [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let clip_dir = dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut manifest = Vec::with_capacity(dataset.clips.len());
    for clip in &dataset.clips {
        let file = format!("clips/{}.json", clip.clip_id);
        write_json(&dir.join(&file), &ClipRecord::from_sequence(clip))?;
        manifest.push(ManifestEntry {
            clip_id: clip.clip_id.clone(),
            subject_id: clip.subject_id.clone(),
            fps: clip.fps,
            label: clip.label as i64,
            file,
        });
    }
    write_json(&dir.join("topology.json"), &dataset.topology)?;
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Reads a single self-describing clip record. Missing metadata falls back to
/// the given defaults.
pub fn load_clip(path: impl AsRef<Path>, default_fps: f64) -> Result<PoseSequence> {
    let path = path.as_ref();
    let record: ClipRecord = read_json(path)?;
    let subject = record.subject_id.clone().unwrap_or_else(|| "unknown".into());
    let fps = record.fps.unwrap_or(default_fps);
    let label = record.label.unwrap_or(0);
    record.into_sequence(subject, fps, label)
}

pub fn save_clip(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), &ClipRecord::from_sequence(seq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Inter,
    Intra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub strategy: SplitStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            other => Err(Error::Split(format!(
                "unknown split `{other}` (train, val, test, all)"
            ))),
        }
    }
}

impl Partition {
    pub fn ids(&self, split: SplitName) -> Vec<String> {
        match split {
            SplitName::Train => self.train.clone(),
            SplitName::Val => self.val.clone(),
            SplitName::Test => self.test.clone(),
            SplitName::All => self
                .train
                .iter()
                .chain(&self.val)
                .chain(&self.test)
                .cloned()
                .collect(),
        }
    }

    /// Positive-clip fraction of each set (train, val, test).
    pub fn positive_ratios(&self, dataset: &Dataset) -> [f64; 3] {
        let ratio = |ids: &[String]| {
            let pos = ids
                .iter()
                .filter(|id| dataset.clip(id).is_some_and(|c| c.label == 1))
                .count();
            pos as f64 / ids.len().max(1) as f64
        };
        [ratio(&self.train), ratio(&self.val), ratio(&self.test)]
    }
}

#[derive(Debug, Default)]
struct SubjectTally {
    clips: Vec<String>,
    pos: usize,
    neg: usize,
}

/// Subject-exclusive stratified split. Subjects are visited in descending clip
/// count (ties broken by a seeded shuffle) and each goes to the set whose quota
/// for the subject's majority class is furthest from being met.
pub fn split_inter(
    dataset: &Dataset,
    ratios: [f64; 3],
    seed: u64,
    tolerance: f64,
) -> Result<Partition> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut subjects: BTreeMap<&str, SubjectTally> = BTreeMap::new();
    for clip in &dataset.clips {
        let t = subjects.entry(clip.subject_id.as_str()).or_default();
        t.clips.push(clip.clip_id.clone());
        if clip.label == 1 {
            t.pos += 1;
        } else {
            t.neg += 1;
        }
    }
    let pos_subjects = subjects.values().filter(|t| t.pos >= t.neg).count();
    let neg_subjects = subjects.len() - pos_subjects;
    if subjects.len() < 3 || pos_subjects < 3 || neg_subjects < 3 {
        return Err(Error::Split(format!(
            "infeasible stratification: {pos_subjects} positive-majority and \
             {neg_subjects} negative-majority subjects (need ≥3 of each)"
        )));
    }
    let total_pos: usize = subjects.values().map(|t| t.pos).sum();
    let total_neg: usize = subjects.values().map(|t| t.neg).sum();
    let global_ratio = total_pos as f64 / (total_pos + total_neg) as f64;

    let mut order: Vec<(&str, &SubjectTally)> = subjects.iter().map(|(k, v)| (*k, v)).collect();
    let mut rng = seeded(seed);
    order.shuffle(&mut rng);
    order.sort_by(|a, b| b.1.clips.len().cmp(&a.1.clips.len()));

    let target_pos: Vec<f64> = ratios.iter().map(|r| r * total_pos as f64).collect();
    let target_neg: Vec<f64> = ratios.iter().map(|r| r * total_neg as f64).collect();
    let mut got_pos = [0usize; 3];
    let mut got_neg = [0usize; 3];
    let mut sets: [Vec<String>; 3] = Default::default();
    for (_, tally) in order {
        let positive = tally.pos >= tally.neg;
        let deficit = |s: usize| {
            if positive {
                (target_pos[s] - got_pos[s] as f64) / target_pos[s].max(1e-12)
            } else {
                (target_neg[s] - got_neg[s] as f64) / target_neg[s].max(1e-12)
            }
        };
        let mut best = 0;
        for s in 1..3 {
            if deficit(s) > deficit(best) {
                best = s;
            }
        }
        got_pos[best] += tally.pos;
        got_neg[best] += tally.neg;
        sets[best].extend(tally.clips.iter().cloned());
    }
    for (s, name) in ["train", "val", "test"].iter().enumerate() {
        if got_pos[s] == 0 || got_neg[s] == 0 {
            return Err(Error::Split(format!(
                "infeasible stratification: {name} set would contain a single class"
            )));
        }
        let ratio = got_pos[s] as f64 / (got_pos[s] + got_neg[s]) as f64;
        if (ratio - global_ratio).abs() > tolerance {
            log_tolerance_miss(name, ratio, global_ratio, tolerance);
        }
    }
    let [train, val, test] = sets;
    Ok(Partition {
        train,
        val,
        test,
        strategy: SplitStrategy::Inter,
        seed,
    })
}

fn log_tolerance_miss(set: &str, ratio: f64, global: f64, tolerance: f64) {
    // Subject granularity can make the tolerance unattainable; the split is
    // still valid and is returned.
    eprintln!(
        "warning: {set} positive ratio {ratio:.3} deviates from global {global:.3} by more than {tolerance}"
    );
}

/// Clip-level stratified split with exact set sizes.
pub fn split_intra(
    dataset: &Dataset,
    train_count: usize,
    test_count: usize,
    val_count: usize,
    seed: u64,
) -> Result<Partition> {
    let n = dataset.len();
    if train_count + test_count + val_count != n {
        return Err(Error::Split(format!(
            "counts {train_count}+{test_count}+{val_count} do not sum to dataset size {n}"
        )));
    }
    let mut pos: Vec<String> = Vec::new();
    let mut neg: Vec<String> = Vec::new();
    for clip in &dataset.clips {
        if clip.label == 1 {
            pos.push(clip.clip_id.clone());
        } else {
            neg.push(clip.clip_id.clone());
        }
    }
    let mut rng = seeded(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let share = |count: usize| {
        let p = (count as f64 * pos.len() as f64 / n as f64).round() as usize;
        p.min(pos.len()).min(count)
    };
    let test_pos = share(test_count);
    let val_pos = share(val_count).min(pos.len() - test_pos);
    let test_neg = test_count - test_pos;
    let val_neg = val_count - val_pos;
    if test_neg + val_neg > neg.len() {
        return Err(Error::Split("not enough negative clips for requested counts".into()));
    }
    let test: Vec<String> = pos[..test_pos]
        .iter()
        .chain(&neg[..test_neg])
        .cloned()
        .collect();
    let val: Vec<String> = pos[test_pos..test_pos + val_pos]
        .iter()
        .chain(&neg[test_neg..test_neg + val_neg])
        .cloned()
        .collect();
    let train: Vec<String> = pos[test_pos + val_pos..]
        .iter()
        .chain(&neg[test_neg + val_neg..])
        .cloned()
        .collect();
    Ok(Partition {
        train,
        val,
        test,
        strategy: SplitStrategy::Intra,
        seed,
    })
}

pub fn save_partition(partition: &Partition, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), partition)
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    read_json(path.as_ref())
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
