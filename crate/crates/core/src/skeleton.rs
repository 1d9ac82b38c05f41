use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// A landmark that is either a detected joint or the midpoint of two joints
/// (the neck is not a detected keypoint in the 17-joint layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Joint(usize),
    Midpoint(usize, usize),
}

impl Anchor {
    pub fn joints(&self) -> Vec<usize> {
        match *self {
            Anchor::Joint(j) => vec![j],
            Anchor::Midpoint(a, b) => vec![a, b],
        }
    }

    fn remap(&self, map: &[Option<usize>]) -> Option<Anchor> {
        Some(match *self {
            Anchor::Joint(j) => Anchor::Joint(map[j]?),
            Anchor::Midpoint(a, b) => Anchor::Midpoint(map[a]?, map[b]?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub hip_left: usize,
    pub hip_right: usize,
    pub knee_left: usize,
    pub knee_right: usize,
    pub ankle_left: usize,
    pub ankle_right: usize,
    pub neck: Anchor,
    pub nose: usize,
    pub facial_indices: Vec<usize>,
    pub channel_count: usize,
}

pub const COCO17_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

impl SkeletonTopology {
    /// The 17-keypoint body layout (joints 0–16) with the neck taken as the
    /// shoulder midpoint and keypoints 1–4 marked facial.
    pub fn coco17() -> Self {
        SkeletonTopology {
            joint_names: COCO17_NAMES.iter().map(|s| s.to_string()).collect(),
            edges: vec![
                (0, 1),
                (0, 2),
                (1, 3),
                (2, 4),
                (0, 5),
                (0, 6),
                (5, 6),
                (5, 7),
                (7, 9),
                (6, 8),
                (8, 10),
                (5, 11),
                (6, 12),
                (11, 12),
                (11, 13),
                (13, 15),
                (12, 14),
                (14, 16),
            ],
            hip_left: 11,
            hip_right: 12,
            knee_left: 13,
            knee_right: 14,
            ankle_left: 15,
            ankle_right: 16,
            neck: Anchor::Midpoint(5, 6),
            nose: 0,
            facial_indices: vec![1, 2, 3, 4],
            channel_count: 2,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// Joints the preprocessing pipeline depends on.
    pub fn landmark_joints(&self) -> Vec<usize> {
        let mut out = vec![
            self.hip_left,
            self.hip_right,
            self.knee_left,
            self.knee_right,
            self.ankle_left,
            self.ankle_right,
            self.nose,
        ];
        out.extend(self.neck.joints());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j == 0 {
            return Err(Error::Topology("no joints".into()));
        }
        if self.channel_count != 2 {
            return Err(Error::Topology(format!(
                "expected 2 coordinate channels, got {}",
                self.channel_count
            )));
        }
        for &(a, b) in &self.edges {
            if a >= j || b >= j {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) out of range for {j} joints"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop edge at joint {a}")));
            }
        }
        if self.landmark_joints().iter().any(|&k| k >= j) {
            return Err(Error::Topology("landmark index out of range".into()));
        }
        if self.hip_left == self.hip_right {
            return Err(Error::Topology("hip_left equals hip_right".into()));
        }
        if let Some(&f) = self.facial_indices.iter().find(|&&f| f >= j) {
            return Err(Error::Topology(format!("facial index {f} out of range")));
        }
        let landmarks = self.landmark_joints();
        if let Some(&f) = self
            .facial_indices
            .iter()
            .find(|f| landmarks.contains(f))
        {
            return Err(Error::Topology(format!(
                "facial index {f} overlaps a hip/neck/leg/nose landmark"
            )));
        }
        Ok(())
    }

    /// Symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Matrix {
        let j = self.joint_count();
        let mut a = Matrix::zeros(j, j);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// Removes `drop` joints, re-indexing the survivors in their original order.
    /// Returns the new topology and, for every old index, its new index.
    pub fn without_joints(&self, drop: &[usize]) -> Result<(SkeletonTopology, Vec<Option<usize>>)> {
        let j = self.joint_count();
        let mut map = vec![None; j];
        let mut next = 0;
        for (old, slot) in map.iter_mut().enumerate() {
            if !drop.contains(&old) {
                *slot = Some(next);
                next += 1;
            }
        }
        let keep = |i: usize| {
            map[i].ok_or_else(|| Error::Topology(format!("landmark joint {i} would be removed")))
        };
        let topo = SkeletonTopology {
            joint_names: self
                .joint_names
                .iter()
                .enumerate()
                .filter(|(i, _)| map[*i].is_some())
                .map(|(_, n)| n.clone())
                .collect(),
            edges: self
                .edges
                .iter()
                .filter_map(|&(a, b)| Some((map[a]?, map[b]?)))
                .collect(),
            hip_left: keep(self.hip_left)?,
            hip_right: keep(self.hip_right)?,
            knee_left: keep(self.knee_left)?,
            knee_right: keep(self.knee_right)?,
            ankle_left: keep(self.ankle_left)?,
            ankle_right: keep(self.ankle_right)?,
            neck: self
                .neck
                .remap(&map)
                .ok_or_else(|| Error::Topology("neck joint would be removed".into()))?,
            nose: keep(self.nose)?,
            facial_indices: self.facial_indices.iter().filter_map(|&f| map[f]).collect(),
            channel_count: self.channel_count,
        };
        Ok((topo, map))
    }
}
