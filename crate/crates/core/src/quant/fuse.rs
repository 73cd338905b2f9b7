use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Conv2dLayer, LinearLayer, NormParams};
use crate::tensor::Tensor;

/// Per-output-channel factor `gamma / sqrt(sigma2 + eps)`.
fn bn_scale(bn: &NormParams) -> Vec<f64> {
    (0..bn.channels())
        .map(|c| bn.gamma[c] as f64 / libm::sqrt(bn.sigma2_s[c] as f64 + bn.eps as f64))
        .collect()
}

fn fold(weight: &Tensor, bias: &[f32], bn: &NormParams, op: &'static str) -> Result<(Tensor, Vec<f32>)> {
    let c_out = weight.shape()[0];
    if bn.channels() != c_out || bias.len() != c_out {
        return Err(Error::shape(op, format!("{c_out} output channels, norm layer has {}", bn.channels())));
    }
    let k = bn_scale(bn);
    let per = weight.numel() / c_out;
    let w = weight
        .data()
        .chunks_exact(per)
        .zip(&k)
        .flat_map(|(row, &kc)| row.iter().map(move |&v| (v as f64 * kc) as f32))
        .collect();
    let b = (0..c_out)
        .map(|c| (bn.beta[c] as f64 + (bias[c] as f64 - bn.mu_s[c] as f64) * k[c]) as f32)
        .collect();
    Ok((Tensor::new(weight.shape(), w)?, b))
}

/// Rewrite convolution followed by frozen normalization as one convolution.
pub fn fuse_conv_bn(conv: &Conv2dLayer, bn: &NormParams) -> Result<Conv2dLayer> {
    let (weight, bias) = fold(&conv.weight, &conv.bias, bn, "fuse_conv_bn")?;
    Ok(Conv2dLayer { weight, bias, stride: conv.stride, padding: conv.padding })
}

/// Same folding for a linear layer followed by normalization over its features.
pub fn fuse_linear_bn(linear: &LinearLayer, bn: &NormParams) -> Result<LinearLayer> {
    let (weight, bias) = fold(&linear.weight, &linear.bias, bn, "fuse_linear_bn")?;
    Ok(LinearLayer { weight, bias })
}
