//! Synthetic pose-sequence generator. Each clip is a 17-joint stick figure whose
//! nine joint angles follow sinusoid mixtures: normal clips mix several
//! components over a wide frequency band, poor-repertoire clips use a single
//! slow component with almost no amplitude variation. Segment lengths are
//! fixed by forward kinematics; camera pose, drift and observation noise vary
//! per clip.

pub mod oracles;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PoseSequence};
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng};
use crate::skeleton::SkeletonTopology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    /// Inclusive range of sinusoid components per joint angle.
    pub components: [usize; 2],
    /// Frequency band in Hz.
    pub freq_range: [f64; 2],
    /// Relative spread of component amplitudes around the base amplitude.
    pub amplitude_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects_per_class: usize,
    pub clips_per_subject: usize,
    pub frames: usize,
    pub fps: f64,
    pub normal: ClassParams,
    pub pr: ClassParams,
    /// Per-component amplitude in radians before per-joint weighting.
    pub amplitude: f64,
    pub body_scale_range: [f64; 2],
    /// Max absolute camera roll in radians.
    pub camera_rotation: f64,
    /// Max translation drift over a clip, pixels.
    pub drift: f64,
    /// Per-clip observation noise std is drawn from U(0, noise_std_max) pixels.
    pub noise_std_max: f64,
    /// Per-clip std of frame-wise joint-angle jitter is drawn from
    /// U(0, jitter_max) radians. Unlike pixel noise it keeps segment lengths.
    pub jitter_max: f64,
    pub confidence: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects_per_class: 50,
            clips_per_subject: 3,
            frames: 300,
            fps: 10.0,
            normal: ClassParams {
                components: [3, 5],
                freq_range: [0.3, 2.0],
                amplitude_jitter: 0.5,
            },
            pr: ClassParams {
                components: [1, 1],
                freq_range: [0.3, 0.8],
                amplitude_jitter: 0.05,
            },
            amplitude: 0.4,
            body_scale_range: [0.85, 1.15],
            camera_rotation: 0.3,
            drift: 12.0,
            noise_std_max: 0.8,
            jitter_max: 0.3,
            confidence: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.fps / 2.0;
        for (name, c) in [("normal", &self.normal), ("pr", &self.pr)] {
            if c.freq_range[1] >= nyquist || c.freq_range[0] <= 0.0 || c.freq_range[0] > c.freq_range[1] {
                return Err(Error::Config(format!(
                    "{name} frequency band {:?} must be positive and below Nyquist ({nyquist} Hz)",
                    c.freq_range
                )));
            }
            if c.components[0] == 0 || c.components[0] > c.components[1] {
                return Err(Error::Config(format!("{name} component range {:?} invalid", c.components)));
            }
            if !(0.0..1.0).contains(&c.amplitude_jitter) {
                return Err(Error::Config(format!("{name} amplitude jitter must lie in [0, 1)")));
            }
        }
        if self.subjects_per_class == 0 || self.clips_per_subject == 0 || self.frames < 2 {
            return Err(Error::Config("synth sizes must be positive (frames ≥ 2)".into()));
        }
        if !(self.amplitude > 0.0) || !(self.fps > 0.0) {
            return Err(Error::Config("amplitude and fps must be positive".into()));
        }
        if !(self.noise_std_max >= 0.0) || !(self.jitter_max >= 0.0) {
            return Err(Error::Config("noise_std_max and jitter_max must be non-negative".into()));
        }
        Ok(())
    }
}

// Template lengths in pixels.
const HIP_HALF: f64 = 30.0;
const SHOULDER_HALF: f64 = 55.0;
const TRUNK: f64 = 180.0;
const NOSE_ABOVE_NECK: f64 = 80.0;
const UPPER_ARM: f64 = 85.0;
const FOREARM: f64 = 75.0;
const THIGH: f64 = 95.0;
const SHIN: f64 = 85.0;

/// Joint angles driven by the sinusoid mixtures.
#[derive(Clone, Copy)]
enum Dof {
    ShoulderL,
    ShoulderR,
    ElbowL,
    ElbowR,
    HipL,
    HipR,
    KneeL,
    KneeR,
    Head,
}

const DOFS: [Dof; 9] = [
    Dof::ShoulderL,
    Dof::ShoulderR,
    Dof::ElbowL,
    Dof::ElbowR,
    Dof::HipL,
    Dof::HipR,
    Dof::KneeL,
    Dof::KneeR,
    Dof::Head,
];

impl Dof {
    /// (rest angle, amplitude weight)
    fn rest_and_weight(self) -> (f64, f64) {
        match self {
            Dof::ShoulderL | Dof::ShoulderR => (0.6, 1.2),
            Dof::ElbowL | Dof::ElbowR => (0.5, 1.0),
            Dof::HipL | Dof::HipR => (0.2, 0.9),
            Dof::KneeL | Dof::KneeR => (-0.3, 1.0),
            Dof::Head => (0.0, 0.35),
        }
    }
}

struct Mixture {
    rest: f64,
    parts: Vec<(f64, f64, f64)>,
}

impl Mixture {
    fn draw(rng: &mut SeededRng, dof: Dof, class: &ClassParams, base: f64) -> Self {
        let (rest, weight) = dof.rest_and_weight();
        let k = rng.random_range(class.components[0]..=class.components[1]);
        let parts = (0..k)
            .map(|_| {
                let amp = base * weight * (1.0 + class.amplitude_jitter * rng.random_range(-1.0..1.0));
                let freq = rng.random_range(class.freq_range[0]..=class.freq_range[1]);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, freq, phase)
            })
            .collect();
        Mixture { rest, parts }
    }

    fn at(&self, t: f64) -> f64 {
        self.rest
            + self
                .parts
                .iter()
                .map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
    }
}

/// Unit direction at angle `phi` from straight down, mirrored for the right side.
fn limb(phi: f64, side: f64) -> [f64; 2] {
    [side * phi.sin(), -phi.cos()]
}

fn add(a: [f64; 2], d: [f64; 2], len: f64) -> [f64; 2] {
    [a[0] + len * d[0], a[1] + len * d[1]]
}

/// Body-frame joint positions (y up, hips centred at the origin).
fn pose(angles: &[f64; 9]) -> [[f64; 2]; 17] {
    let mut p = [[0.0; 2]; 17];
    let [sl, sr, el, er, hl, hr, kl, kr, head] = *angles;
    let shoulder_l = [SHOULDER_HALF, TRUNK];
    let shoulder_r = [-SHOULDER_HALF, TRUNK];
    let hip_l = [HIP_HALF, 0.0];
    let hip_r = [-HIP_HALF, 0.0];
    p[5] = shoulder_l;
    p[6] = shoulder_r;
    p[11] = hip_l;
    p[12] = hip_r;
    p[7] = add(shoulder_l, limb(sl, 1.0), UPPER_ARM);
    p[8] = add(shoulder_r, limb(sr, -1.0), UPPER_ARM);
    p[9] = add(p[7], limb(sl + el, 1.0), FOREARM);
    p[10] = add(p[8], limb(sr + er, -1.0), FOREARM);
    p[13] = add(hip_l, limb(hl, 1.0), THIGH);
    p[14] = add(hip_r, limb(hr, -1.0), THIGH);
    p[15] = add(p[13], limb(hl + kl, 1.0), SHIN);
    p[16] = add(p[14], limb(hr + kr, -1.0), SHIN);
    // Face points rotate rigidly about the neck.
    let neck = [0.0, TRUNK];
    let face: [(usize, [f64; 2]); 5] = [
        (0, [0.0, NOSE_ABOVE_NECK]),
        (1, [12.0, NOSE_ABOVE_NECK + 12.0]),
        (2, [-12.0, NOSE_ABOVE_NECK + 12.0]),
        (3, [28.0, NOSE_ABOVE_NECK + 2.0]),
        (4, [-28.0, NOSE_ABOVE_NECK + 2.0]),
    ];
    let (s, c) = head.sin_cos();
    for (j, [x, y]) in face {
        p[j] = [neck[0] + c * x - s * y, neck[1] + s * x + c * y];
    }
    p
}

fn generate_clip(
    cfg: &SynthConfig,
    subject: usize,
    clip: usize,
    label: u8,
    body_scale: f64,
    rng: &mut SeededRng,
) -> Result<PoseSequence> {
    let class = if label == 1 { &cfg.pr } else { &cfg.normal };
    let mixtures: Vec<Mixture> = DOFS
        .iter()
        .map(|&d| Mixture::draw(rng, d, class, cfg.amplitude))
        .collect();
    let roll0 = rng.random_range(-cfg.camera_rotation..=cfg.camera_rotation);
    let roll_drift = rng.random_range(-0.05..=0.05);
    let origin = [rng.random_range(200.0..440.0), rng.random_range(180.0..300.0)];
    let drift = [
        rng.random_range(-cfg.drift..=cfg.drift),
        rng.random_range(-cfg.drift..=cfg.drift),
    ];
    let noise_std = rng.random_range(0.0..=cfg.noise_std_max);
    let jitter = rng.random_range(0.0..=cfg.jitter_max);

    let m = cfg.frames;
    let mut coords = Vec::with_capacity(m * 17 * 2);
    for f in 0..m {
        let t = f as f64 / cfg.fps;
        let u = f as f64 / (m - 1) as f64;
        let mut angles = [0.0; 9];
        for (a, mix) in angles.iter_mut().zip(&mixtures) {
            let e: f64 = rng.sample(StandardNormal);
            *a = mix.at(t) + jitter * e;
        }
        let (s, c) = (roll0 + roll_drift * u).sin_cos();
        for [x, y] in pose(&angles) {
            let (x, y) = (body_scale * x, body_scale * y);
            let (xr, yr) = (c * x - s * y, s * x + c * y);
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            // Image coordinates: y grows downwards.
            coords.push(origin[0] + drift[0] * u + xr + noise_std * nx);
            coords.push(origin[1] + drift[1] * u - yr + noise_std * ny);
        }
    }
    let seq = PoseSequence::new(
        format!("s{subject:03}_c{clip}"),
        format!("s{subject:03}"),
        cfg.fps,
        label,
        m,
        17,
        2,
        coords,
    )?;
    if cfg.confidence {
        let conf = (0..m * 17).map(|_| rng.random_range(0.6..=1.0)).collect();
        seq.with_confidence(conf)
    } else {
        Ok(seq)
    }
}

/// Generates `2 × subjects_per_class × clips_per_subject` clips. Subjects
/// `0..n` are normal and `n..2n` poor repertoire.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.subjects_per_class;
    let mut clips = Vec::with_capacity(2 * n * cfg.clips_per_subject);
    for subject in 0..2 * n {
        let label = u8::from(subject >= n);
        let mut srng = stream(cfg.seed, &[subject as u64]);
        let body_scale = srng.random_range(cfg.body_scale_range[0]..=cfg.body_scale_range[1]);
        for clip in 0..cfg.clips_per_subject {
            let mut rng = stream(cfg.seed, &[subject as u64, clip as u64 + 1]);
            clips.push(generate_clip(cfg, subject, clip, label, body_scale, &mut rng)?);
        }
    }
    Ok(Dataset {
        topology: SkeletonTopology::coco17(),
        clips,
    })
}

/// Limb segments whose lengths forward kinematics keeps fixed.
pub const LIMB_SEGMENTS: [(usize, usize); 8] = [
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Mean over joints and channels of the per-coordinate temporal variance.
pub fn motion_variance(seq: &PoseSequence) -> f64 {
    let m = seq.frames();
    let w = seq.joints() * seq.channels();
    let mut total = 0.0;
    for s in 0..w {
        let vals: Vec<f64> = (0..m).map(|t| seq.coords()[t * w + s]).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    }
    total / w as f64
}
