//! Dense row-major tensors and the float kernels needed to run small models.
//!
//! Layout is fixed to NCHW for image-like data and (N, F) for feature
//! vectors. Kernels are pure functions; convolution and matmul accumulate
//! in `f64` and round once to `f32`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Dense tensor of up to four positive extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor, checking rank, extents, buffer length and finiteness.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new", layer: None });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let numel = shape.iter().product();
        Ok(Tensor { shape: shape.to_vec(), data: vec![0.0; numel] })
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Self::new(shape, t.data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        Self::new(shape, (0..numel).map(&mut f).collect())
    }

    /// Kernel-internal constructor for buffers whose length is already right.
    pub(crate) fn from_parts_checked(shape: Vec<usize>, data: Vec<f32>, op: &'static str) -> Result<Self> {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op, layer: None });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of channels (axis 1), or 1 for rank-1 tensors.
    pub fn channels(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Elements per (sample, channel) pair: H·W for rank 4, 1 for (N, F).
    pub fn spatial(&self) -> usize {
        self.shape.iter().skip(2).product()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", format!("expected rank 4, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [n, f] => Ok((n, f)),
            _ => Err(Error::shape("dims2", format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    /// Copy sample `i` out of the batch, keeping a leading extent of 1.
    pub fn sample(&self, i: usize) -> Result<Self> {
        let n = self.batch();
        if i >= n {
            return Err(Error::shape("sample", format!("index {i} out of batch {n}")));
        }
        let per = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor { shape, data: self.data[i * per..(i + 1) * per].to_vec() })
    }

    /// Concatenate samples along the batch axis.
    pub fn stack(samples: &[Tensor]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("stack input"))?;
        let tail = &first.shape[1..];
        let mut batch = 0;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        for s in samples {
            if &s.shape[1..] != tail {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", s.shape, first.shape)));
            }
            batch += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::from_parts_checked(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), "map")
    }

    /// Index of the largest value in each row of an (N, K) tensor. Ties go to the lower index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (n, k) = self.dims2()?;
        Ok((0..n)
            .map(|i| {
                let row = &self.data[i * k..(i + 1) * k];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape("shape", format!("rank must be 1..={MAX_RANK}, got {shape:?}")));
    }
    if shape.contains(&0) {
        return Err(Error::shape("shape", format!("extents must be positive, got {shape:?}")));
    }
    Ok(())
}

/// Output extent of a strided, padded window, or a configuration error.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "window {kernel} with stride {stride}, padding {padding} does not tile extent {input}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Geometry of a convolution, shared by the float and int8 kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[n, c_in, h, w], &[c_out, wc_in, kh, kw]) = (input, weight) else {
            return Err(Error::shape("conv2d", format!("input {input:?}, weight {weight:?} must be rank 4")));
        };
        if c_in != wc_in {
            return Err(Error::shape("conv2d", format!("input has {c_in} channels, weight expects {wc_in}")));
        }
        let oh = conv_out_extent(h, kh, stride, padding)?;
        let ow = conv_out_extent(w, kw, stride, padding)?;
        Ok(ConvGeometry { n, c_in, h, w, c_out, kh, kw, stride, padding, oh, ow })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.oh, self.ow]
    }

    /// Multiply-accumulates, counting padded taps as skipped.
    pub fn macs(&self) -> u64 {
        let mut taps = 0u64;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if self.tap(oy, ox, ky, kx).is_some() {
                            taps += 1;
                        }
                    }
                }
            }
        }
        taps * (self.n * self.c_out * self.c_in) as u64
    }

    /// Input coordinate read by output (oy, ox) at kernel tap (ky, kx), if inside the image.
    #[inline]
    pub fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// 2-D cross-correlation with bias, stride and zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f32], stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if bias.len() != g.c_out {
        return Err(Error::shape("conv2d", format!("bias has {} entries for {} outputs", bias.len(), g.c_out)));
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0f32; g.n * g.c_out * g.oh * g.ow];
    for n in 0..g.n {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias[co] as f64;
                    for ci in 0..g.c_in {
                        let xbase = (n * g.c_in + ci) * g.h * g.w;
                        let wbase = (co * g.c_in + ci) * g.kh * g.kw;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                                    acc += x[xbase + iy * g.w + ix] as f64 * wt[wbase + ky * g.kw + kx] as f64;
                                }
                            }
                        }
                    }
                    out[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::from_parts_checked(g.output_shape().to_vec(), out, "conv2d")
}

/// Row-wise affine map `y = x·Wᵀ + b` with weights shaped (F_out, F_in).
pub fn linear(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, f_in) = input.dims2()?;
    let (f_out, w_in) = weight.dims2()?;
    if f_in != w_in {
        return Err(Error::shape("linear", format!("input has {f_in} features, weight expects {w_in}")));
    }
    if bias.len() != f_out {
        return Err(Error::shape("linear", format!("bias has {} entries for {f_out} outputs", bias.len())));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * f_out);
    for i in 0..n {
        let row = &x[i * f_in..(i + 1) * f_in];
        for o in 0..f_out {
            let wrow = &w[o * f_in..(o + 1) * f_in];
            let acc = row.iter().zip(wrow).fold(bias[o] as f64, |a, (&p, &q)| a + p as f64 * q as f64);
            out.push(acc as f32);
        }
    }
    Tensor::from_parts_checked(vec![n, f_out], out, "linear")
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Per-(N, C) mean over H×W, producing an (N, C) tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let out = input
        .data
        .chunks_exact(hw)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    Tensor::from_parts_checked(vec![n, c], out, "global_avg_pool")
}

pub fn residual_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::shape("residual_add", format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::from_parts_checked(a.shape.clone(), data, "residual_add")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    // Straight six-loop convolution with explicit bounds checks.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f32], stride: usize, pad: usize) -> Vec<f64> {
        let [n, ci, h, wd] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let [co, _, kh, kw] = <[usize; 4]>::try_from(w.shape()).unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![];
        for b_ in 0..n {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b[o] as f64;
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        let xv = x.data()[((b_ * ci + c) * h + iy as usize) * wd + ix as usize];
                                        let wv = w.data()[((o * ci + c) * kh + ky) * kw + kx];
                                        s += xv as f64 * wv as f64;
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_scales_input() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_window_sum_plus_bias() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        let y = conv2d(&x, &w, &[0.5], 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.5]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(stride, pad, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 2, 5), (3, 0, 2)] {
            let x = random(&[2, 3, 8, 8], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let Ok(y) = conv2d(&x, &w, &b, stride, pad) else { continue };
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(y.numel(), want.len());
            for (a, e) in y.data().iter().zip(&want) {
                assert!((*a as f64 - e).abs() <= 1e-6, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
        assert!(matches!(conv2d(&x, &w, &[0.0], 1, 0), Err(Error::Shape { .. })));
        let w = Tensor::zeros(&[1, 2, 3, 3]).unwrap();
        assert!(matches!(conv2d(&x, &w, &[0.0], 2, 0), Err(Error::Config(_))));
        assert!(matches!(conv2d(&x, &w, &[0.0], 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn linear_cases() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(linear(&x, &w, &[1.0]).unwrap().data(), &[12.0]);

        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[2, 2], vec![0.5, -1.5, 2.0, 3.25]).unwrap();
        assert_eq!(linear(&x, &eye, &[0.0, 0.0]).unwrap(), x);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[4, 5], &mut rng);
        let w = random(&[3, 5], &mut rng);
        let b = [0.1, -0.2, 0.3];
        let y = linear(&x, &w, &b).unwrap();
        for i in 0..4 {
            for o in 0..3 {
                let mut s = b[o] as f64;
                for k in 0..5 {
                    s += x.data()[i * 5 + k] as f64 * w.data()[o * 5 + k] as f64;
                }
                assert!((y.data()[i * 3 + o] as f64 - s).abs() <= 1e-6);
            }
        }
        assert!(linear(&x, &Tensor::zeros(&[3, 4]).unwrap(), &b).is_err());
    }

    #[test]
    fn elementwise_kernels() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        assert_eq!(residual_add(&x, &Tensor::zeros(&[1, 1, 2, 2]).unwrap()).unwrap(), x);
        assert!(residual_add(&x, &Tensor::zeros(&[1, 4]).unwrap()).is_err());
        assert!(global_avg_pool(&Tensor::zeros(&[1, 4]).unwrap()).is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(matches!(Tensor::new(&[1], vec![f32::NAN]), Err(Error::NonFinite { .. })));
        let s = Tensor::stack(&[Tensor::full(&[1, 2], 1.0).unwrap(), Tensor::full(&[1, 2], 2.0).unwrap()]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.sample(1).unwrap().data(), &[2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[1, 2, 5, 5], &mut rng);
            let y = random(&[1, 2, 5, 5], &mut rng);
            let w = random(&[3, 2, 3, 3], &mut rng);
            let zero = [0.0; 3];
            let mix = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d(&mix, &w, &zero, 1, 1).unwrap();
            let cx = conv2d(&x, &w, &zero, 1, 1).unwrap();
            let cy = conv2d(&y, &w, &zero, 1, 1).unwrap();
            for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                let r = a * p + b * q;
                prop_assert!((l - r).abs() <= 1e-5 * (1.0 + r.abs()), "{} vs {}", l, r);
            }
        }

        #[test]
        fn kernels_are_pure(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 2, 4, 4], &mut rng);
            let w = random(&[2, 2, 3, 3], &mut rng);
            let a = conv2d(&x, &w, &[0.1, 0.2], 1, 1).unwrap();
            let b = conv2d(&x, &w, &[0.1, 0.2], 1, 1).unwrap();
            prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
