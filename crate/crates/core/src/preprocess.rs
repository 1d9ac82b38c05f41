//! Pose normalisation: median smoothing, hip centring, trunk alignment, height
//! normalisation and removal of facial landmarks.

use crate::config::{HeightNorm, PreprocessConfig};
use crate::dataset::PoseSequence;
use crate::error::{Error, Result};
use crate::skeleton::{Anchor, SkeletonTopology};

fn fail(seq: &PoseSequence, message: impl Into<String>) -> Error {
    Error::Preprocess {
        clip_id: seq.clip_id.clone(),
        message: message.into(),
    }
}

/// Window length in frames: `round(seconds × fps)`, bumped to the next odd count.
pub fn window_frames(window_seconds: f64, fps: f64) -> usize {
    let w = (window_seconds * fps).round().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Reflect index into `[0, n)` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// Running median per joint channel with reflect padding. A non-positive
/// window leaves the sequence unchanged.
pub fn median_smooth(seq: &PoseSequence, window_seconds: f64) -> Result<PoseSequence> {
    if window_seconds <= 0.0 {
        return Ok(seq.clone());
    }
    let w = window_frames(window_seconds, seq.fps);
    let m = seq.frames();
    if m < w {
        return Err(fail(
            seq,
            format!("sequence has {m} frames, shorter than the {w}-frame smoothing window"),
        ));
    }
    let half = (w / 2) as isize;
    let width = seq.joints() * seq.channels();
    let src = seq.coords();
    let mut out = seq.clone();
    let dst = out.coords_mut();
    let mut buf = vec![0.0; w];
    for s in 0..width {
        for t in 0..m {
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = reflect(t as isize + k as isize - half, m);
                *slot = src[idx * width + s];
            }
            buf.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
            dst[t * width + s] = buf[w / 2];
        }
    }
    Ok(out)
}

fn anchor_point(seq: &PoseSequence, m: usize, anchor: Anchor) -> [f64; 2] {
    match anchor {
        Anchor::Joint(j) => seq.point(m, j),
        Anchor::Midpoint(a, b) => {
            let (pa, pb) = (seq.point(m, a), seq.point(m, b));
            [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
        }
    }
}

fn hip_centre(seq: &PoseSequence, topo: &SkeletonTopology, m: usize) -> [f64; 2] {
    anchor_point(seq, m, Anchor::Midpoint(topo.hip_left, topo.hip_right))
}

/// Per-frame translation putting the hip midpoint at the origin.
pub fn center_on_hips(seq: &PoseSequence, topo: &SkeletonTopology) -> Result<PoseSequence> {
    let mut out = seq.clone();
    for m in 0..seq.frames() {
        let c = hip_centre(seq, topo, m);
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(fail(seq, format!("non-finite hip coordinates in frame {m}")));
        }
        for j in 0..seq.joints() {
            out.set(m, j, 0, seq.get(m, j, 0) - c[0]);
            out.set(m, j, 1, seq.get(m, j, 1) - c[1]);
        }
    }
    Ok(out)
}

/// Per-frame rotation about the origin taking the hip→neck vector to +y.
pub fn align_trunk(seq: &PoseSequence, topo: &SkeletonTopology, eps: f64) -> Result<PoseSequence> {
    let mut out = seq.clone();
    for m in 0..seq.frames() {
        let hip = hip_centre(seq, topo, m);
        let neck = anchor_point(seq, m, topo.neck);
        let (vx, vy) = (neck[0] - hip[0], neck[1] - hip[1]);
        let n = vx.hypot(vy);
        if !(n > eps) {
            return Err(fail(seq, format!("degenerate trunk vector in frame {m}")));
        }
        let (cos, sin) = (vy / n, vx / n);
        for j in 0..seq.joints() {
            let [x, y] = seq.point(m, j);
            out.set(m, j, 0, cos * x - sin * y);
            out.set(m, j, 1, sin * x + cos * y);
        }
    }
    Ok(out)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Per-clip body height: frame mean of (mean shin + mean thigh + trunk +
/// neck→nose), or of the trunk alone.
pub fn clip_height(seq: &PoseSequence, topo: &SkeletonTopology, mode: HeightNorm) -> f64 {
    let mut total = 0.0;
    for m in 0..seq.frames() {
        let p = |j| seq.point(m, j);
        let hip = hip_centre(seq, topo, m);
        let neck = anchor_point(seq, m, topo.neck);
        let trunk = dist(hip, neck);
        total += match mode {
            HeightNorm::Trunk => trunk,
            HeightNorm::Segments | HeightNorm::Off => {
                let shin = 0.5
                    * (dist(p(topo.knee_left), p(topo.ankle_left))
                        + dist(p(topo.knee_right), p(topo.ankle_right)));
                let thigh = 0.5
                    * (dist(p(topo.hip_left), p(topo.knee_left))
                        + dist(p(topo.hip_right), p(topo.knee_right)));
                shin + thigh + trunk + dist(neck, p(topo.nose))
            }
        };
    }
    total / seq.frames() as f64
}

/// Divides every coordinate by the clip height.
pub fn normalize_height(
    seq: &PoseSequence,
    topo: &SkeletonTopology,
    mode: HeightNorm,
    eps: f64,
) -> Result<PoseSequence> {
    if mode == HeightNorm::Off {
        return Ok(seq.clone());
    }
    let h = clip_height(seq, topo, mode);
    if !(h > eps) {
        return Err(fail(seq, format!("body height {h} is degenerate")));
    }
    let mut out = seq.clone();
    out.coords_mut().iter_mut().for_each(|v| *v /= h);
    Ok(out)
}

pub fn drop_facial_landmarks(
    seq: &PoseSequence,
    topo: &SkeletonTopology,
) -> Result<(PoseSequence, SkeletonTopology)> {
    topo.validate()?;
    let (reduced, map) = topo.without_joints(&topo.facial_indices)?;
    let keep: Vec<usize> = (0..topo.joint_count()).filter(|&j| map[j].is_some()).collect();
    let c = seq.channels();
    let mut coords = Vec::with_capacity(seq.frames() * keep.len() * c);
    for m in 0..seq.frames() {
        for &j in &keep {
            for ch in 0..c {
                coords.push(seq.get(m, j, ch));
            }
        }
    }
    let mut out = seq.with_coords(seq.frames(), keep.len(), coords);
    if let Some(conf) = &seq.confidence {
        let j0 = seq.joints();
        out.confidence = Some(
            (0..seq.frames())
                .flat_map(|m| keep.iter().map(move |&j| conf[m * j0 + j]))
                .collect(),
        );
    }
    Ok((out, reduced))
}

/// Topology of pipeline outputs.
pub fn output_topology(topo: &SkeletonTopology, cfg: &PreprocessConfig) -> Result<SkeletonTopology> {
    if cfg.drop_facial {
        Ok(topo.without_joints(&topo.facial_indices)?.0)
    } else {
        Ok(topo.clone())
    }
}

/// Runs the enabled stages in order: smooth → centre → align → scale → drop.
pub fn preprocess(
    seq: &PoseSequence,
    topo: &SkeletonTopology,
    cfg: &PreprocessConfig,
) -> Result<(PoseSequence, SkeletonTopology)> {
    if seq.joints() != topo.joint_count() {
        return Err(Error::JointCount {
            clip_id: seq.clip_id.clone(),
            expected: topo.joint_count(),
            found: seq.joints(),
        });
    }
    let mut s = median_smooth(seq, cfg.median_window_s)?;
    if cfg.center {
        s = center_on_hips(&s, topo)?;
    }
    if cfg.align_trunk {
        s = align_trunk(&s, topo, cfg.epsilon)?;
    }
    s = normalize_height(&s, topo, cfg.height_norm, cfg.epsilon)?;
    if cfg.drop_facial {
        return drop_facial_landmarks(&s, topo);
    }
    if !s.coords().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "preprocess".into(),
        });
    }
    Ok((s, topo.clone()))
}
