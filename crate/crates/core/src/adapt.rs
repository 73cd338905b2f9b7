//! Per-sample adaptation of normalization statistics.
//!
//! Every incoming activation goes through four pure steps:
//!
//! 1. [`instance_stats`]: per-channel mean and population variance of the
//!    activation itself.
//! 2. [`stabilize`]: convex blend with the frozen source statistics,
//!    weighted by `tau` (`tau = 1` keeps the source, `tau = 0` keeps the
//!    instance).
//! 3. [`divergence`]: `d = 1 - exp(-m²)` where `m²` is the squared
//!    Mahalanobis distance between the stabilized and source means under the
//!    diagonal source covariance.
//! 4. [`blend`]: a second convex blend weighted by `d·lambda`, so severe
//!    shifts lean back towards the source statistics.
//!
//! [`adaptive_normalize`] chains the steps and normalizes with the result.
//! Nothing is written back into [`NormParams`], so the layer is reset by
//! construction after every call.
//!
//! Statistics are carried in `f64`. Variance is the population (biased)
//! variance, as in batch normalization; the unbiased estimate differs by
//! `M/(M-1)` for `M` positions per channel. The divergence uses means only;
//! a variance-only shift leaves `d` at zero.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::NormParams;
use crate::ops::OpCounts;
use crate::tensor::Tensor;

/// Upper clamp on `m²` before exponentiation.
pub const MAX_SQUARED_DISTANCE: f64 = 700.0;

/// Largest `f64` strictly below one; `d` never reaches 1.
const D_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// How the squared distance is aggregated over channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DistanceMode {
    /// Plain quadratic form summed over channels.
    #[default]
    RawSum,
    /// Quadratic form divided by the channel count.
    ChannelMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptConfig {
    /// Source weight in the stabilization step, in `[0, 1]`.
    pub tau: f64,
    /// Distance scaler in the blending step, in `[0, 1]`.
    pub lambda: f64,
    /// Variance floor in the final normalization. `None` uses the layer's own epsilon.
    pub eps_norm: Option<f64>,
    /// Added to the source variance before it is inverted in the divergence.
    pub eps_inv: f64,
    pub distance_mode: DistanceMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            tau: 0.9,
            lambda: 0.9,
            eps_norm: None,
            eps_inv: 1e-5,
            distance_mode: DistanceMode::RawSum,
        }
    }
}

impl AdaptConfig {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        let cfg = AdaptConfig { tau, lambda, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pure instance statistics: the naive replacement baseline.
    pub fn naive_replace() -> Self {
        AdaptConfig { tau: 0.0, lambda: 0.0, ..Default::default() }
    }

    pub fn with_distance_mode(mut self, mode: DistanceMode) -> Self {
        self.distance_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.eps_inv > 0.0 && self.eps_inv.is_finite()) {
            return Err(Error::config("eps_inv must be positive"));
        }
        if let Some(e) = self.eps_norm {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("eps_norm must be positive"));
            }
        }
        Ok(())
    }

    pub fn norm_eps(&self, params: &NormParams) -> f64 {
        self.eps_norm.unwrap_or(params.eps as f64)
    }
}

/// Per-channel mean and variance.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl ChannelStats {
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma2.len() {
            return Err(Error::shape("ChannelStats", format!("{} means, {} variances", mu.len(), sigma2.len())));
        }
        if sigma2.iter().any(|&v| v < 0.0 || !v.is_finite()) || mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("channel statistics must be finite with non-negative variance"));
        }
        Ok(ChannelStats { mu, sigma2 })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub(crate) fn check_pair(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.channels() != other.channels() {
            return Err(Error::shape(op, format!("{} vs {} channels", self.channels(), other.channels())));
        }
        Ok(())
    }
}

/// Statistics and divergence recorded for one adaptive layer on one input.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptRecord {
    pub layer: usize,
    pub d: f64,
    pub instance: ChannelStats,
    pub stabilized: ChannelStats,
    pub blended: ChannelStats,
    /// Moments were pooled over a batch larger than one.
    pub pooled_batch: bool,
}

/// Channel-major view: (channels, positions per channel) and an index map.
fn channel_layout(x: &Tensor) -> (usize, usize, usize) {
    if x.rank() == 1 {
        return (x.numel(), 1, 1);
    }
    (x.channels(), x.batch(), x.spatial())
}

/// Per-channel mean and population variance over all N·H·W positions.
pub fn instance_stats(x: &Tensor) -> ChannelStats {
    instance_stats_counted(x, &mut OpCounts::default())
}

pub(crate) fn instance_stats_counted(x: &Tensor, ops: &mut OpCounts) -> ChannelStats {
    let (c, n, s) = channel_layout(x);
    let data = x.data();
    let positions = (n * s) as f64;
    let mut mu = Vec::with_capacity(c);
    let mut sigma2 = Vec::with_capacity(c);
    for ch in 0..c {
        let values = (0..n).flat_map(|b| data[(b * c + ch) * s..(b * c + ch + 1) * s].iter());
        let mean = values.clone().map(|&v| v as f64).sum::<f64>() / positions;
        let var = values.map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / positions;
        mu.push(mean);
        sigma2.push(var.max(0.0));
    }
    // one division per mean, one square per element, one division per variance
    ops.float_mults += (2 * c + x.numel()) as u64;
    ChannelStats { mu, sigma2 }
}

fn mix(a: &[f64], b: &[f64], wa: f64) -> Vec<f64> {
    let wb = 1.0 - wa;
    a.iter().zip(b).map(|(&p, &q)| wa * p + wb * q).collect()
}

/// `tau·source + (1 - tau)·target`, channel by channel, for means and variances.
pub fn stabilize(source: &ChannelStats, target: &ChannelStats, tau: f64) -> Result<ChannelStats> {
    source.check_pair(target, "stabilize")?;
    Ok(ChannelStats {
        mu: mix(&source.mu, &target.mu, tau),
        sigma2: mix(&source.sigma2, &target.sigma2, tau),
    })
}

/// Squared Mahalanobis distance of `stabilized_mu` from the source under a
/// diagonal covariance, mapped to `d = 1 - exp(-m²)` in `[0, 1)`.
pub fn divergence(stabilized_mu: &[f64], source: &ChannelStats, mode: DistanceMode, eps_inv: f64) -> Result<f64> {
    if stabilized_mu.len() != source.channels() {
        return Err(Error::shape(
            "divergence",
            format!("{} means vs {} source channels", stabilized_mu.len(), source.channels()),
        ));
    }
    let mut m2: f64 = stabilized_mu
        .iter()
        .zip(&source.mu)
        .zip(&source.sigma2)
        .map(|((&b, &s), &v)| (b - s) * (b - s) / (v + eps_inv))
        .sum();
    if mode == DistanceMode::ChannelMean && !stabilized_mu.is_empty() {
        m2 /= stabilized_mu.len() as f64;
    }
    Ok(squared_distance_to_divergence(m2))
}

/// Maps a squared distance to `1 - exp(-m²)`, clamped into `[0, 1)`.
pub fn squared_distance_to_divergence(m2: f64) -> f64 {
    if m2.is_nan() {
        return D_CEIL;
    }
    let m2 = m2.clamp(0.0, MAX_SQUARED_DISTANCE);
    (-libm::expm1(-m2)).clamp(0.0, D_CEIL)
}

/// `dλ·source + (1 - dλ)·stabilized`, channel by channel.
pub fn blend(source: &ChannelStats, stabilized: &ChannelStats, d: f64, lambda: f64) -> Result<ChannelStats> {
    source.check_pair(stabilized, "blend")?;
    let w = d * lambda;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::config(format!("blend weight d·lambda = {w} outside [0, 1]")));
    }
    Ok(ChannelStats {
        mu: mix(&source.mu, &stabilized.mu, w),
        sigma2: mix(&source.sigma2, &stabilized.sigma2, w),
    })
}

/// `y = gamma·(x - mu)/sqrt(sigma2 + eps) + beta` per channel.
pub fn normalize(x: &Tensor, stats: &ChannelStats, gamma: &[f32], beta: &[f32], eps: f64) -> Result<Tensor> {
    normalize_counted(x, stats, gamma, beta, eps, &mut OpCounts::default())
}

pub(crate) fn normalize_counted(
    x: &Tensor,
    stats: &ChannelStats,
    gamma: &[f32],
    beta: &[f32],
    eps: f64,
    ops: &mut OpCounts,
) -> Result<Tensor> {
    let (c, n, s) = channel_layout(x);
    if stats.channels() != c || gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "normalize",
            format!("activation has {c} channels, statistics/affine have {}/{}/{}", stats.channels(), gamma.len(), beta.len()),
        ));
    }
    let scale: Vec<f64> = (0..c).map(|ch| gamma[ch] as f64 / libm::sqrt(stats.sigma2[ch] + eps)).collect();
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..n {
        for ch in 0..c {
            let (mu, k, shift) = (stats.mu[ch], scale[ch], beta[ch] as f64);
            let plane = &x.data()[(b * c + ch) * s..(b * c + ch + 1) * s];
            out.extend(plane.iter().map(|&v| ((v as f64 - mu) * k + shift) as f32));
        }
    }
    ops.float_mults += (2 * c + x.numel()) as u64;
    Tensor::from_parts_checked(x.shape().to_vec(), out, "normalize")
}

/// Frozen inference-mode normalization with the layer's source statistics.
pub fn frozen_normalize(x: &Tensor, params: &NormParams) -> Result<Tensor> {
    frozen_normalize_counted(x, params, &mut OpCounts::default())
}

pub(crate) fn frozen_normalize_counted(x: &Tensor, params: &NormParams, ops: &mut OpCounts) -> Result<Tensor> {
    normalize_counted(x, &params.source_stats(), &params.gamma, &params.beta, params.eps as f64, ops)
}

/// Extract, stabilize, measure divergence, blend and normalize.
///
/// `params` is only read. The returned record carries every intermediate
/// statistic together with `d`.
pub fn adaptive_normalize(x: &Tensor, params: &NormParams, cfg: &AdaptConfig) -> Result<(Tensor, AdaptRecord)> {
    adaptive_normalize_counted(x, params, cfg, &mut OpCounts::default())
}

pub(crate) fn adaptive_normalize_counted(
    x: &Tensor,
    params: &NormParams,
    cfg: &AdaptConfig,
    ops: &mut OpCounts,
) -> Result<(Tensor, AdaptRecord)> {
    cfg.validate()?;
    let source = params.source_stats();
    let c = source.channels() as u64;
    let instance = instance_stats_counted(x, ops);
    let stabilized = stabilize(&source, &instance, cfg.tau)?;
    let d = divergence(&stabilized.mu, &source, cfg.distance_mode, cfg.eps_inv)?;
    let blended = blend(&source, &stabilized, d, cfg.lambda)?;
    // stabilize: 4C; divergence: 2C (+1 for the channel mean); blend: 4C + 1
    ops.float_mults += 10 * c + 1 + u64::from(cfg.distance_mode == DistanceMode::ChannelMean);
    let y = normalize_counted(x, &blended, &params.gamma, &params.beta, cfg.norm_eps(params), ops)?;
    let record = AdaptRecord {
        layer: 0,
        d,
        instance,
        stabilized,
        blended,
        pooled_batch: x.rank() > 1 && x.batch() > 1,
    };
    Ok((y, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn stats(mu: &[f64], s2: &[f64]) -> ChannelStats {
        ChannelStats::new(mu.to_vec(), s2.to_vec()).unwrap()
    }

    fn params(c: usize) -> NormParams {
        NormParams::new(
            (0..c).map(|i| 0.1 * i as f32).collect(),
            (0..c).map(|i| 1.0 + 0.5 * i as f32).collect(),
            (0..c).map(|i| 1.0 + 0.1 * i as f32).collect(),
            (0..c).map(|i| -0.2 * i as f32).collect(),
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn constant_channel_has_zero_variance() {
        let x = Tensor::full(&[1, 2, 3, 3], 1.5).unwrap();
        let s = instance_stats(&x);
        assert_eq!(s.mu, vec![1.5, 1.5]);
        assert_eq!(s.sigma2, vec![0.0, 0.0]);
    }

    #[test]
    fn population_variance_by_hand() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = instance_stats(&x);
        assert_eq!(s.mu, vec![2.5]);
        assert_eq!(s.sigma2, vec![1.25]);
        // spatial permutation
        let p = Tensor::new(&[1, 1, 2, 2], vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(instance_stats(&p), s);
    }

    #[test]
    fn feature_vectors_pool_over_batch() {
        let x = Tensor::new(&[2, 2], vec![1.0, 10.0, 3.0, 20.0]).unwrap();
        let s = instance_stats(&x);
        assert_eq!(s.mu, vec![2.0, 15.0]);
        assert_eq!(s.sigma2, vec![1.0, 25.0]);
        let one = Tensor::new(&[1, 2], vec![1.0, 10.0]).unwrap();
        assert_eq!(instance_stats(&one).sigma2, vec![0.0, 0.0]);
    }

    #[test]
    fn stabilize_endpoints_and_arithmetic() {
        let s = stats(&[0.0], &[1.0]);
        let t = stats(&[1.0], &[4.0]);
        assert_eq!(stabilize(&s, &t, 1.0).unwrap(), s);
        assert_eq!(stabilize(&s, &t, 0.0).unwrap(), t);
        let b = stabilize(&s, &t, 0.9).unwrap();
        assert!((b.mu[0] - 0.1).abs() < 1e-15);
        assert!((b.sigma2[0] - 1.3).abs() < 1e-15);
        assert!(stabilize(&s, &stats(&[0.0, 1.0], &[1.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn divergence_cases() {
        let s = stats(&[0.5, -1.0], &[2.0, 0.5]);
        assert_eq!(divergence(&s.mu, &s, DistanceMode::RawSum, 1e-5).unwrap(), 0.0);
        let unit = stats(&[0.0], &[1.0]);
        let d = divergence(&[1.0], &unit, DistanceMode::RawSum, f64::MIN_POSITIVE).unwrap();
        // 1 - e^-1
        assert!((d - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert!(divergence(&[1.0, 2.0], &unit, DistanceMode::RawSum, 1e-5).is_err());

        // channel-mean divides m² by C
        let two = stats(&[0.0, 0.0], &[1.0, 1.0]);
        let raw = divergence(&[1.0, 1.0], &two, DistanceMode::RawSum, f64::MIN_POSITIVE).unwrap();
        let mean = divergence(&[1.0, 1.0], &two, DistanceMode::ChannelMean, f64::MIN_POSITIVE).unwrap();
        assert!((raw - (1.0 - libm::exp(-2.0))).abs() < 1e-12);
        assert!((mean - d).abs() < 1e-12);
    }

    #[test]
    fn divergence_stays_below_one() {
        let unit = stats(&[0.0], &[1.0]);
        let d = divergence(&[1e6], &unit, DistanceMode::RawSum, 1e-5).unwrap();
        assert!(d < 1.0 && d > 0.999);
        assert!(squared_distance_to_divergence(f64::INFINITY) < 1.0);
        assert_eq!(squared_distance_to_divergence(0.0), 0.0);
    }

    #[test]
    fn blend_endpoints() {
        let s = stats(&[0.0], &[1.0]);
        let b = stats(&[0.1], &[1.3]);
        assert_eq!(blend(&s, &b, 0.0, 0.9).unwrap(), b);
        assert_eq!(blend(&s, &b, 1.0, 1.0).unwrap(), s);
        let n = blend(&s, &b, 1.0, 0.9).unwrap();
        assert!((n.mu[0] - 0.01).abs() < 1e-15);
        assert!(blend(&s, &b, 1.0, 1.5).is_err());
    }

    #[test]
    fn output_is_beta_at_the_blended_mean() {
        let p = NormParams::new(vec![0.3, -0.7], vec![1.0, 2.0], vec![1.0, 1.0], vec![0.0, 0.0], 1e-5).unwrap();
        let x = Tensor::new(&[1, 2, 1, 2], vec![0.3, 0.3, -0.7, -0.7]).unwrap();
        // instance mean equals the source mean, so d = 0 and mu_new = mu_s
        let (y, rec) = adaptive_normalize(&x, &p, &AdaptConfig::default()).unwrap();
        assert_eq!(rec.d, 0.0);
        assert!(y.data().iter().all(|v| v.abs() < 1e-6), "{:?}", y.data());
    }

    #[test]
    fn tau_one_is_frozen_normalization() {
        let p = params(3);
        let x = Tensor::from_fn(&[1, 3, 4, 4], |i| ((i * 37) % 11) as f32 * 0.3 - 1.0).unwrap();
        for lambda in [0.0, 0.5, 1.0] {
            let cfg = AdaptConfig::new(1.0, lambda).unwrap();
            let (y, rec) = adaptive_normalize(&x, &p, &cfg).unwrap();
            assert_eq!(rec.d, 0.0);
            assert_eq!(y, frozen_normalize(&x, &p).unwrap());
        }
    }

    #[test]
    fn matches_straight_line_equations() {
        let p = params(4);
        let x = Tensor::from_fn(&[1, 4, 6, 6], |i| libm::sinf(i as f32 * 0.7) * 2.0 + 0.5).unwrap();
        let cfg = AdaptConfig::new(0.6, 0.8).unwrap();
        let (y, rec) = adaptive_normalize(&x, &p, &cfg).unwrap();

        let mut m2 = 0.0;
        let mut mus = vec![];
        let mut vars = vec![];
        for c in 0..4 {
            let vals: Vec<f64> = x.data()[c * 36..(c + 1) * 36].iter().map(|&v| v as f64).collect();
            let mt = vals.iter().sum::<f64>() / 36.0;
            let vt = vals.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / 36.0;
            let (ms, vs) = (p.mu_s[c] as f64, p.sigma2_s[c] as f64);
            let mb = 0.6 * ms + 0.4 * mt;
            let vb = 0.6 * vs + 0.4 * vt;
            m2 += (mb - ms).powi(2) / (vs + 1e-5);
            mus.push((ms, mb));
            vars.push((vs, vb));
        }
        let d = 1.0 - (-m2).exp();
        assert!((rec.d - d).abs() < 1e-12);
        for c in 0..4 {
            let mn = d * 0.8 * mus[c].0 + (1.0 - d * 0.8) * mus[c].1;
            let vn = d * 0.8 * vars[c].0 + (1.0 - d * 0.8) * vars[c].1;
            for i in 0..36 {
                let xv = x.data()[c * 36 + i] as f64;
                let want = p.gamma[c] as f64 * (xv - mn) / (vn + 1e-5).sqrt() + p.beta[c] as f64;
                assert!((y.data()[c * 36 + i] as f64 - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_tau_zero_lambda_standardizes() {
        let p = NormParams::new(vec![0.0; 2], vec![1.0; 2], vec![1.0; 2], vec![0.0; 2], 1e-5).unwrap();
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f32 * 1.3).cos() * 3.0 + 2.0).unwrap();
        let (y, _) = adaptive_normalize(&x, &p, &AdaptConfig::naive_replace()).unwrap();
        let s = instance_stats(&y);
        for c in 0..2 {
            assert!(s.mu[c].abs() <= 1e-5);
            assert!((s.sigma2[c] - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn op_budget_is_analytic() {
        let p = params(3);
        let x = Tensor::full(&[1, 3, 4, 5], 0.25).unwrap();
        let (mut frozen, mut adapt) = (OpCounts::default(), OpCounts::default());
        frozen_normalize_counted(&x, &p, &mut frozen).unwrap();
        adaptive_normalize_counted(&x, &p, &AdaptConfig::default(), &mut adapt).unwrap();
        // instance stats E + 2C, stabilize 4C, divergence 2C, blend 4C + 1
        assert_eq!(adapt.float_mults - frozen.float_mults, 60 + 12 * 3 + 1);
    }

    #[test]
    fn config_validation() {
        assert!(AdaptConfig::new(1.1, 0.5).is_err());
        assert!(AdaptConfig::new(0.5, -0.1).is_err());
        let mut c = AdaptConfig::default();
        c.eps_inv = 0.0;
        assert!(c.validate().is_err());
        assert_eq!((AdaptConfig::default().tau, AdaptConfig::default().lambda), (0.9, 0.9));
    }

    proptest! {
        #[test]
        fn convex_combinations_stay_between(
            a in proptest::collection::vec((-5.0f64..5.0, 0.0f64..4.0), 1..6),
            b in proptest::collection::vec((-5.0f64..5.0, 0.0f64..4.0), 6),
            w in 0.0f64..=1.0, d in 0.0f64..1.0,
        ) {
            let c = a.len();
            let s = stats(&a.iter().map(|p| p.0).collect::<Vec<_>>(), &a.iter().map(|p| p.1).collect::<Vec<_>>());
            let t = stats(&b[..c].iter().map(|p| p.0).collect::<Vec<_>>(), &b[..c].iter().map(|p| p.1).collect::<Vec<_>>());
            for out in [stabilize(&s, &t, w).unwrap(), blend(&s, &t, d, w).unwrap()] {
                for i in 0..c {
                    let (lo, hi) = (s.mu[i].min(t.mu[i]), s.mu[i].max(t.mu[i]));
                    prop_assert!(out.mu[i] >= lo - 1e-12 && out.mu[i] <= hi + 1e-12);
                    let (lo, hi) = (s.sigma2[i].min(t.sigma2[i]), s.sigma2[i].max(t.sigma2[i]));
                    prop_assert!(out.sigma2[i] >= lo - 1e-12 && out.sigma2[i] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn divergence_in_unit_interval_and_monotone(m2a in 0.0f64..800.0, m2b in 0.0f64..800.0) {
            let (lo, hi) = if m2a <= m2b { (m2a, m2b) } else { (m2b, m2a) };
            let (dl, dh) = (squared_distance_to_divergence(lo), squared_distance_to_divergence(hi));
            prop_assert!((0.0..1.0).contains(&dl) && (0.0..1.0).contains(&dh));
            prop_assert!(dl <= dh);
            if hi < 30.0 && hi - lo > 1e-9 {
                prop_assert!(dl < dh);
            }
        }

        #[test]
        fn mahalanobis_scale_invariance(delta in -3.0f64..3.0, var in 0.1f64..4.0, k in 0.01f64..100.0, mu in -2.0f64..2.0) {
            let s = stats(&[mu, 1.0], &[var, 2.0]);
            let base = divergence(&[mu + delta, 1.5], &s, DistanceMode::RawSum, f64::MIN_POSITIVE).unwrap();
            let scaled = stats(&[mu * k, 1.0], &[var * k * k, 2.0]);
            let d = divergence(&[(mu + delta) * k, 1.5], &scaled, DistanceMode::RawSum, f64::MIN_POSITIVE).unwrap();
            prop_assert!((base - d).abs() <= 1e-12);
        }
    }
}
