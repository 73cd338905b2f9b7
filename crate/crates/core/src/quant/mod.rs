//! Post-training int8 quantization with conv/BN partial fusion.
//!
//! Activations are asymmetric `u8`, weights symmetric `i8`, both per tensor.
//! Integer layers accumulate in `i32` and requantize with a double-precision
//! rescale followed by round-half-to-even. Normalization layers left unfused
//! run as float islands: dequantize, normalize (frozen or adaptive),
//! requantize.

mod calibrate;
mod fuse;
mod model;
mod plan;

pub use calibrate::{calibrate, edge_after, CalibrationTable, INPUT_EDGE};
pub use fuse::{fuse_conv_bn, fuse_linear_bn};
pub use model::{forward_quantized, forward_quantized_with, quantize_model, QLayer, QuantizedModel};
pub use plan::{plan_partial_fusion, FusionPlan, FusionPolicy};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest scale handed out for degenerate (constant) ranges.
pub const SCALE_FLOOR: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QuantDtype {
    /// Asymmetric unsigned 8-bit, used for activations.
    U8,
    /// Symmetric signed 8-bit, used for weights.
    I8,
}

impl QuantDtype {
    pub fn range(self) -> (i32, i32) {
        match self {
            QuantDtype::U8 => (0, 255),
            QuantDtype::I8 => (-128, 127),
        }
    }
}

/// Per-tensor affine quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
    pub dtype: QuantDtype,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32, dtype: QuantDtype) -> Result<Self> {
        let qp = QuantParams { scale, zero_point, dtype };
        qp.validate()?;
        Ok(qp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!("quantization scale must be positive, got {}", self.scale)));
        }
        let (lo, hi) = self.dtype.range();
        if self.zero_point < lo || self.zero_point > hi {
            return Err(Error::config(format!("zero point {} outside {lo}..={hi}", self.zero_point)));
        }
        if self.dtype == QuantDtype::I8 && self.zero_point != 0 {
            return Err(Error::config("symmetric weight quantization needs a zero point of 0"));
        }
        Ok(())
    }

    pub(crate) fn weight_scale_ok(scale: f32) -> Result<()> {
        if scale > 0.0 && scale.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("weight scale must be positive, got {scale}")))
        }
    }

    /// Asymmetric `u8` parameters covering `[min, max]` widened to include zero.
    /// Returns `true` alongside when the range was degenerate and the scale floored.
    pub fn activation(min: f32, max: f32) -> (Self, bool) {
        let lo = min.min(0.0) as f64;
        let hi = max.max(0.0) as f64;
        let raw = (hi - lo) / 255.0;
        let degenerate = !(raw >= SCALE_FLOOR as f64);
        let scale = if degenerate { SCALE_FLOOR } else { raw as f32 };
        let zp = libm::rint(-lo / scale as f64).clamp(0.0, 255.0) as i32;
        (QuantParams { scale, zero_point: zp, dtype: QuantDtype::U8 }, degenerate)
    }

    /// Symmetric `i8` parameters from the largest magnitude.
    pub fn weight(max_abs: f32) -> (Self, bool) {
        let raw = max_abs as f64 / 127.0;
        let degenerate = !(raw >= SCALE_FLOOR as f64);
        let scale = if degenerate { SCALE_FLOOR } else { raw as f32 };
        (QuantParams { scale, zero_point: 0, dtype: QuantDtype::I8 }, degenerate)
    }

    #[inline]
    pub fn quantize(&self, x: f32) -> i32 {
        let (lo, hi) = self.dtype.range();
        let q = libm::rint(x as f64 / self.scale as f64) + self.zero_point as f64;
        q.clamp(lo as f64, hi as f64) as i32
    }

    #[inline]
    pub fn dequantize(&self, q: i32) -> f64 {
        (q - self.zero_point) as f64 * self.scale as f64
    }

    /// Real interval that maps without saturation.
    pub fn representable(&self) -> (f64, f64) {
        let (lo, hi) = self.dtype.range();
        (self.dequantize(lo), self.dequantize(hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
    pub params: QuantParams,
}

pub fn quantize_tensor(x: &Tensor, qp: &QuantParams) -> Result<QuantizedTensor> {
    qp.validate()?;
    Ok(QuantizedTensor {
        shape: x.shape().to_vec(),
        data: x.data().iter().map(|&v| qp.quantize(v)).collect(),
        params: *qp,
    })
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Result<Tensor> {
    Tensor::new(&q.shape, q.data.iter().map(|&v| q.params.dequantize(v) as f32).collect())
}

/// Running min/max over everything observed so far.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observer {
    pub min: f32,
    pub max: f32,
    pub count: u64,
}

impl Observer {
    pub fn observe(&mut self, values: &[f32]) {
        for &v in values {
            if self.count == 0 {
                self.min = v;
                self.max = v;
            } else {
                self.min = self.min.min(v);
                self.max = self.max.max(v);
            }
            self.count += 1;
        }
    }

    pub fn activation_params(&self) -> (QuantParams, bool) {
        QuantParams::activation(self.min, self.max)
    }

    pub fn weight_params(&self) -> (QuantParams, bool) {
        QuantParams::weight(self.min.abs().max(self.max.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn zero_maps_to_zero_point() {
        let qp = QuantParams::new(0.05, 17, QuantDtype::U8).unwrap();
        assert_eq!(qp.quantize(0.0), 17);
        assert_eq!(qp.dequantize(17), 0.0);
    }

    #[test]
    fn ties_round_to_even() {
        let qp = QuantParams::new(0.1, 0, QuantDtype::I8).unwrap();
        assert_eq!(qp.quantize(0.25), 2);
        let x = Tensor::new(&[1], vec![0.25]).unwrap();
        let back = dequantize_tensor(&quantize_tensor(&x, &qp).unwrap()).unwrap();
        assert!((back.data()[0] - 0.2).abs() < 1e-7);
        assert!((back.data()[0] - 0.25).abs() <= 0.05 + 1e-7);
        assert_eq!(qp.quantize(-0.25), -2);
        let half = QuantParams::new(0.5, 0, QuantDtype::I8).unwrap();
        assert_eq!(half.quantize(1.25), 2);
        assert_eq!(half.quantize(1.75), 4);
        assert_eq!(half.quantize(-1.25), -2);
    }

    #[test]
    fn saturates_without_wrapping() {
        let qp = QuantParams::new(0.01, 10, QuantDtype::U8).unwrap();
        assert_eq!(qp.quantize(1e6), 255);
        assert_eq!(qp.quantize(-1e6), 0);
        let w = QuantParams::new(0.01, 0, QuantDtype::I8).unwrap();
        assert_eq!(w.quantize(5.0), 127);
        assert_eq!(w.quantize(-5.0), -128);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QuantParams::new(0.0, 0, QuantDtype::U8).is_err());
        assert!(QuantParams::new(-1.0, 0, QuantDtype::U8).is_err());
        assert!(QuantParams::new(1.0, 300, QuantDtype::U8).is_err());
        assert!(QuantParams::new(1.0, 3, QuantDtype::I8).is_err());
    }

    #[test]
    fn unit_interval_activation_params() {
        let mut obs = Observer::default();
        obs.observe(&(0..=1000).map(|i| i as f32 / 1000.0).collect::<Vec<_>>());
        let (qp, degenerate) = obs.activation_params();
        assert!(!degenerate);
        assert!((qp.scale - 1.0 / 255.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, 0);
    }

    #[test]
    fn constant_zero_range_is_floored() {
        let mut obs = Observer::default();
        obs.observe(&[0.0; 16]);
        let (qp, degenerate) = obs.activation_params();
        assert!(degenerate);
        assert_eq!(qp.scale, SCALE_FLOOR);
        assert_eq!(qp.dequantize(qp.quantize(0.0)), 0.0);
    }

    #[test]
    fn asymmetric_range_places_zero_point() {
        let (qp, _) = QuantParams::activation(-1.0, 3.0);
        assert!((qp.scale - 4.0 / 255.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, 64);
        let (w, _) = QuantParams::weight(2.54);
        assert!((w.scale - 0.02).abs() < 1e-9);
        assert_eq!(w.quantize(-2.54), -127);
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(min in -10.0f32..0.0, width in 0.01f32..20.0, t in 0.0f32..=1.0) {
            let (qp, _) = QuantParams::activation(min, min + width);
            let (lo, hi) = qp.representable();
            let x = (lo + (hi - lo) * t as f64) as f32;
            prop_assume!((x as f64) >= lo && (x as f64) <= hi);
            let err = (qp.dequantize(qp.quantize(x)) - x as f64).abs();
            prop_assert!(err <= qp.scale as f64 / 2.0 + 1e-12, "err {} scale {}", err, qp.scale);
        }
    }
}
