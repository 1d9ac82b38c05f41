//! Training-time stochastic augmentation. All randomness comes from the
//! caller's rng, so each transform is a pure function of (input, rng state).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::AugmentConfig;
use crate::dataset::PoseSequence;
use crate::rng::SeededRng;

/// Natural cubic spline through `(xs, ys)` with strictly increasing `xs`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n, "spline needs ≥2 matching knots");
        assert!(xs.windows(2).all(|w| w[1] > w[0]), "knots must increase");
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let k = n - 2;
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        CubicSpline { xs, ys, m }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

pub const WARP_FLOOR: f64 = 0.05;

/// A smooth random curve over frames `0..frames`: `knots` N(1, std) values
/// spaced evenly over `[0, frames−1]`, interpolated by a natural cubic spline
/// and floored at 0.05. Returns (knot positions, knot values, curve).
pub fn random_curve(
    rng: &mut SeededRng,
    frames: usize,
    knots: usize,
    std: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let span = (frames.max(2) - 1) as f64;
    let xs: Vec<f64> = (0..knots)
        .map(|i| span * i as f64 / (knots - 1) as f64)
        .collect();
    let ys: Vec<f64> = (0..knots)
        .map(|_| 1.0 + std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let spline = CubicSpline::new(xs.clone(), ys.clone());
    let curve = (0..frames)
        .map(|m| spline.eval(m as f64).max(WARP_FLOOR))
        .collect();
    (xs, ys, curve)
}

pub fn mirror(seq: &PoseSequence) -> PoseSequence {
    let mut out = seq.clone();
    let c = seq.channels();
    for (i, v) in out.coords_mut().iter_mut().enumerate() {
        if i % c == 0 {
            *v = -*v;
        }
    }
    out
}

pub fn time_reverse(seq: &PoseSequence) -> PoseSequence {
    let m = seq.frames();
    let coords = (0..m).rev().flat_map(|t| seq.frame(t).to_vec()).collect();
    seq.with_coords(m, seq.joints(), coords)
}

/// Population std of each channel over all frames and joints.
pub fn channel_std(seq: &PoseSequence) -> Vec<f64> {
    let c = seq.channels();
    let n = (seq.frames() * seq.joints()) as f64;
    (0..c)
        .map(|ch| {
            let vals = seq.coords().iter().skip(ch).step_by(c);
            let mean = vals.clone().sum::<f64>() / n;
            (vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Adds zero-mean Gaussian noise with std `fraction × channel std`.
pub fn add_noise_scaled(seq: &PoseSequence, rng: &mut SeededRng, fraction: f64) -> PoseSequence {
    let stds = channel_std(seq);
    let c = seq.channels();
    let mut out = seq.clone();
    for (i, v) in out.coords_mut().iter_mut().enumerate() {
        let s = fraction * stds[i % c];
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
    out
}

pub fn add_noise(seq: &PoseSequence, rng: &mut SeededRng) -> PoseSequence {
    add_noise_scaled(seq, rng, 1.0 / 3.0)
}

pub fn scale_by(seq: &PoseSequence, factor: f64) -> PoseSequence {
    let mut out = seq.clone();
    out.coords_mut().iter_mut().for_each(|v| *v *= factor);
    out
}

pub fn scale_magnitude(seq: &PoseSequence, rng: &mut SeededRng, range: [f64; 2]) -> PoseSequence {
    let factor = rng.random_range(range[0]..range[1]);
    scale_by(seq, factor)
}

/// Multiplies frame m by `curve[m]`.
pub fn apply_magnitude_curve(seq: &PoseSequence, curve: &[f64]) -> PoseSequence {
    let mut out = seq.clone();
    let w = seq.joints() * seq.channels();
    for (i, v) in out.coords_mut().iter_mut().enumerate() {
        *v *= curve[i / w];
    }
    out
}

pub fn magnitude_warp(
    seq: &PoseSequence,
    rng: &mut SeededRng,
    knots: usize,
    std: f64,
) -> PoseSequence {
    if seq.frames() < 2 {
        return seq.clone();
    }
    let (_, _, curve) = random_curve(rng, seq.frames(), knots, std);
    apply_magnitude_curve(seq, &curve)
}

/// Distorted time stamps: cumulative rate rescaled to span `[0, M−1]`.
pub fn warp_stamps(rate: &[f64]) -> Vec<f64> {
    let m = rate.len();
    let mut cum = vec![0.0; m];
    for t in 1..m {
        cum[t] = cum[t - 1] + rate[t];
    }
    let total = cum[m - 1];
    let span = (m - 1) as f64;
    let mut stamps: Vec<f64> = cum.iter().map(|c| c * span / total).collect();
    stamps[m - 1] = span;
    stamps
}

/// Linear interpolation of the sequence at fractional frame positions.
pub fn resample(seq: &PoseSequence, stamps: &[f64]) -> PoseSequence {
    let m = seq.frames();
    let w = seq.joints() * seq.channels();
    let mut coords = Vec::with_capacity(stamps.len() * w);
    for &s in stamps {
        let s = s.clamp(0.0, (m - 1) as f64);
        let i = (s.floor() as usize).min(m - 1);
        let frac = s - i as f64;
        let a = seq.frame(i);
        if frac == 0.0 || i + 1 >= m {
            coords.extend_from_slice(a);
        } else {
            let b = seq.frame(i + 1);
            coords.extend(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)));
        }
    }
    seq.with_coords(stamps.len(), seq.joints(), coords)
}

pub fn time_warp(seq: &PoseSequence, rng: &mut SeededRng, knots: usize, std: f64) -> PoseSequence {
    if seq.frames() < 2 {
        return seq.clone();
    }
    let (_, _, rate) = random_curve(rng, seq.frames(), knots, std);
    resample(seq, &warp_stamps(&rate))
}

/// Which transforms one call to [`augment_traced`] applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct AugmentTrace {
    pub augmented: bool,
    pub mirror: bool,
    pub time_reverse: bool,
    pub noise: bool,
    pub scale: bool,
    pub magnitude_warp: bool,
    pub time_warp: bool,
}

pub fn augment(seq: &PoseSequence, rng: &mut SeededRng, cfg: &AugmentConfig) -> PoseSequence {
    augment_traced(seq, rng, cfg).0
}

/// With probability `apply_probability` applies each transform independently in
/// the order mirror → time_reverse → noise → scale → magnitude_warp → time_warp.
pub fn augment_traced(
    seq: &PoseSequence,
    rng: &mut SeededRng,
    cfg: &AugmentConfig,
) -> (PoseSequence, AugmentTrace) {
    let mut trace = AugmentTrace::default();
    if !cfg.enabled || rng.random::<f64>() >= cfg.apply_probability {
        return (seq.clone(), trace);
    }
    trace.augmented = true;
    let mut s = seq.clone();
    if rng.random::<f64>() < cfg.mirror {
        trace.mirror = true;
        s = mirror(&s);
    }
    if rng.random::<f64>() < cfg.time_reverse {
        trace.time_reverse = true;
        s = time_reverse(&s);
    }
    if rng.random::<f64>() < cfg.noise {
        trace.noise = true;
        s = add_noise_scaled(&s, rng, cfg.noise_std_fraction);
    }
    if rng.random::<f64>() < cfg.scale {
        trace.scale = true;
        s = scale_magnitude(&s, rng, cfg.scale_range);
    }
    if rng.random::<f64>() < cfg.magnitude_warp {
        trace.magnitude_warp = true;
        s = magnitude_warp(&s, rng, cfg.warp_knots, cfg.warp_std);
    }
    if rng.random::<f64>() < cfg.time_warp {
        trace.time_warp = true;
        s = time_warp(&s, rng, cfg.warp_knots, cfg.warp_std);
    }
    (s, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn clip(frames: usize) -> PoseSequence {
        let coords = (0..frames * 3 * 2)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        PoseSequence::new("a", "s", 10.0, 0, frames, 3, 2, coords).unwrap()
    }

    #[test]
    fn spline_interpolates_knots_and_lines() {
        let s = CubicSpline::new(vec![0.0, 1.0, 3.0, 4.0], vec![1.0, 2.0, 0.5, 1.5]);
        for (x, y) in [(0.0, 1.0), (1.0, 2.0), (3.0, 0.5), (4.0, 1.5)] {
            assert!((s.eval(x) - y).abs() < 1e-12);
        }
        let line = CubicSpline::new(vec![0.0, 2.0, 5.0], vec![1.0, 3.0, 6.0]);
        assert!((line.eval(3.5) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn involutions_are_exact() {
        let c = clip(9);
        assert_eq!(mirror(&mirror(&c)), c);
        assert_eq!(time_reverse(&time_reverse(&c)), c);
        let one = clip(1);
        assert_eq!(time_reverse(&one), one);
        assert_eq!(mirror(&c).get(2, 1, 1), c.get(2, 1, 1));
        assert_eq!(mirror(&c).get(2, 1, 0), -c.get(2, 1, 0));
    }

    #[test]
    fn zero_std_warps_are_identity() {
        let c = clip(20);
        let mut rng = seeded(1);
        let w = magnitude_warp(&c, &mut rng, 4, 0.0);
        assert_eq!(w, c);
        let t = time_warp(&c, &mut rng, 4, 0.0);
        for (a, b) in t.coords().iter().zip(c.coords()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn warp_stamps_are_monotone_and_span() {
        let mut rng = seeded(5);
        let (_, _, rate) = random_curve(&mut rng, 50, 4, 0.2);
        let st = warp_stamps(&rate);
        assert_eq!(st[0], 0.0);
        assert_eq!(st[49], 49.0);
        assert!(st.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let c = clip(10);
        let cfg = AugmentConfig {
            apply_probability: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = seeded(2);
        for _ in 0..20 {
            assert_eq!(augment(&c, &mut rng, &cfg), c);
        }
    }

    #[test]
    fn static_clip_gets_no_noise() {
        let c = PoseSequence::new("z", "s", 10.0, 0, 4, 2, 2, vec![0.3; 16]).unwrap();
        assert_eq!(add_noise(&c, &mut seeded(3)), c);
    }
}
