//! Learned denoisers that stand in for `prox_{g/sigma}` inside the splitting
//! loop, the residual CNN runtime and its weight-file format.
//!
//! A real-form vector of length `2N` is read as a `2 x sqrt(N) x sqrt(N)`
//! image: the first plane holds the real parts, the second the imaginary
//! parts, and antenna `n` sits at `(n / sqrt(N), n % sqrt(N))`. That is
//! exactly the memory layout of the `[Re; Im]` stacking, so no copy is needed.
//!
//! Network: head conv (2 -> 64), four residual blocks
//! `a + relu(conv(relu(conv(a))))`, tail conv (64 -> 2). Inputs are
//! standardized per channel before the head and the tail output is scaled
//! back, so `out = z + scale * tail(...)`. All convolutions are 3x3, stride 1,
//! zero padding 1, cross-correlation as in the common deep-learning frameworks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::codec::ByteReader;
use crate::error::{Error, Result, WeightError};
use crate::prox::{soft_threshold_vec, L1SoftThreshold, ProxOperator};
use crate::rng::{stream_rng, Stream};

pub const FEATURES: usize = 64;
pub const BLOCKS: usize = 4;
pub const IN_CHANNELS: usize = 2;
const MAGIC: &[u8; 4] = b"PRDW";
const VERSION: u32 = 1;

/// A map applied in place of the regularizer's proximal step.
pub trait Denoiser: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Length of the real-form vectors it accepts (`2N`).
    fn dim(&self) -> usize;

    fn denoise(&self, z: &DVector<f64>) -> DVector<f64>;

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::config(
                "denoiser",
                format!(
                    "{} expects vectors of length {}, problem has {dim}",
                    self.name(),
                    self.dim()
                ),
            ));
        }
        Ok(())
    }
}

/// Adapts a [`Denoiser`] to the [`ProxOperator`] interface. The scale is
/// ignored: a trained network is tied to the sigma it was trained at.
#[derive(Debug)]
pub struct DenoiserProx<'a> {
    inner: &'a dyn Denoiser,
}

impl<'a> DenoiserProx<'a> {
    pub fn new(inner: &'a dyn Denoiser) -> Self {
        Self { inner }
    }
}

impl ProxOperator for DenoiserProx<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn evaluate(&self, z: &DVector<f64>, _scale: f64) -> DVector<f64> {
        self.inner.denoise(z)
    }

    fn is_convex(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityDenoiser {
    dim: usize,
}

impl IdentityDenoiser {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, z: &DVector<f64>) -> DVector<f64> {
        z.clone()
    }
}

/// Soft thresholding with a fixed threshold, packaged as a denoiser.
#[derive(Debug, Clone, Copy)]
pub struct SoftThresholdPlug {
    dim: usize,
    threshold: f64,
}

impl SoftThresholdPlug {
    pub fn new(dim: usize, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::Domain(format!(
                "threshold must be >= 0, got {threshold}"
            )));
        }
        Ok(Self { dim, threshold })
    }

    /// The plug that reproduces `prox_{g/sigma}` for `g = lambda ||.||_1`.
    pub fn for_l1(g: &L1SoftThreshold, sigma: f64, dim: usize) -> Self {
        Self {
            dim,
            threshold: g.threshold(1.0 / sigma),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Denoiser for SoftThresholdPlug {
    fn name(&self) -> &str {
        "soft-threshold"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, z: &DVector<f64>) -> DVector<f64> {
        soft_threshold_vec(z, self.threshold)
    }
}

/// Largest `||f(a) - f(b)|| / ||a - b||` over random pairs, with `a` standard
/// normal and `b = a + 0.1 * noise`.
pub fn empirical_lipschitz(denoiser: &dyn Denoiser, n_pairs: usize, seed: u64) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::Domain("n_pairs must be >= 1".into()));
    }
    let dim = denoiser.dim();
    let mut rng = stream_rng(seed, Stream::Lipschitz, 0);
    let mut worst = 0.0_f64;
    for _ in 0..n_pairs {
        let a = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &a + DVector::from_fn(dim, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let den = (&a - &b).norm();
        if den == 0.0 {
            continue;
        }
        let ratio = (denoiser.denoise(&a) - denoiser.denoise(&b)).norm() / den;
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }
}

/// Contents of a `PRDW` weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub n_antennas: usize,
    pub sigma: f64,
    pub norm_mean: [f32; 2],
    pub norm_scale: [f32; 2],
    pub tensors: BTreeMap<String, Tensor>,
}

/// Tensor names and shapes the network requires, in canonical order.
pub fn canonical_shapes() -> Vec<(String, Vec<usize>)> {
    let conv = |o: usize, i: usize| vec![o, i, 3, 3];
    let mut out = vec![
        ("head.w".to_string(), conv(FEATURES, IN_CHANNELS)),
        ("head.b".to_string(), vec![FEATURES]),
    ];
    for i in 0..BLOCKS {
        for j in 0..2 {
            out.push((format!("block{i}.conv{j}.w"), conv(FEATURES, FEATURES)));
            out.push((format!("block{i}.conv{j}.b"), vec![FEATURES]));
        }
    }
    out.push(("tail.w".to_string(), conv(IN_CHANNELS, FEATURES)));
    out.push(("tail.b".to_string(), vec![IN_CHANNELS]));
    out
}

fn grid_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (n > 0 && s * s == n).then_some(s)
}

impl WeightFile {
    /// All-zero network; its forward pass is the identity.
    pub fn zeros(n_antennas: usize, sigma: f64) -> Self {
        Self {
            n_antennas,
            sigma,
            norm_mean: [0.0; 2],
            norm_scale: [1.0; 2],
            tensors: canonical_shapes()
                .into_iter()
                .map(|(name, dims)| (name, Tensor::zeros(dims)))
                .collect(),
        }
    }

    /// Gaussian weights with He-style scaling times `gain`, zero biases.
    pub fn random(n_antennas: usize, sigma: f64, seed: u64, gain: f64) -> Self {
        let mut wf = Self::zeros(n_antennas, sigma);
        let mut rng = stream_rng(seed, Stream::Selftest, n_antennas as u64);
        for t in wf.tensors.values_mut() {
            if t.dims.len() == 4 {
                let fan_in = (t.dims[1] * 9) as f64;
                let dist = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
                for v in t.data.iter_mut() {
                    *v = dist.sample(&mut rng) as f32;
                }
            }
        }
        wf
    }

    pub fn check_antennas(&self, expected: usize) -> Result<(), WeightError> {
        if self.n_antennas != expected {
            return Err(WeightError::AntennaCount {
                file: self.n_antennas,
                expected,
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        if grid_side(self.n_antennas).is_none() {
            return Err(WeightError::NonSquare(self.n_antennas));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(WeightError::BadNormalization(format!(
                "sigma = {}",
                self.sigma
            )));
        }
        for c in 0..2 {
            if !self.norm_mean[c].is_finite() {
                return Err(WeightError::BadNormalization(format!(
                    "norm_mean[{c}] = {}",
                    self.norm_mean[c]
                )));
            }
            if !(self.norm_scale[c] > 0.0 && self.norm_scale[c].is_finite()) {
                return Err(WeightError::BadNormalization(format!(
                    "norm_scale[{c}] = {}",
                    self.norm_scale[c]
                )));
            }
        }
        let shapes = canonical_shapes();
        for (name, dims) in &shapes {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| WeightError::MissingTensor(name.clone()))?;
            let count: usize = t.dims.iter().product();
            if &t.dims != dims || t.data.len() != count {
                return Err(WeightError::ShapeMismatch {
                    name: name.clone(),
                    expected: dims.clone(),
                    found: t.dims.clone(),
                });
            }
        }
        let known: BTreeSet<&str> = shapes.iter().map(|(n, _)| n.as_str()).collect();
        if let Some(extra) = self.tensors.keys().find(|k| !known.contains(k.as_str())) {
            return Err(WeightError::UnexpectedTensor(extra.clone()));
        }
        Ok(())
    }

    /// Serializes with tensors in canonical order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let order: Vec<String> = canonical_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| self.tensors.contains_key(n))
            .chain(
                self.tensors
                    .keys()
                    .filter(|k| !canonical_shapes().iter().any(|(n, _)| n == *k))
                    .cloned(),
            )
            .collect();
        self.encode(&order)
    }

    /// Serializes the named tensors in the given order.
    pub fn encode(&self, order: &[String]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_antennas as u32).to_le_bytes());
        out.extend_from_slice(&(order.len() as u32).to_le_bytes());
        for name in order {
            let t = &self.tensors[name];
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.sigma.to_le_bytes());
        for v in self.norm_mean.iter().chain(self.norm_scale.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses and validates a weight file image.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, WeightError> {
        let mut r = ByteReader::new(buf);
        let trunc = |what: &str| WeightError::Truncated(what.to_string());
        let magic: [u8; 4] = r
            .take(4)
            .ok_or_else(|| trunc("header"))?
            .try_into()
            .unwrap();
        if &magic != MAGIC {
            return Err(WeightError::BadMagic { found: magic });
        }
        let version = r.u32().ok_or_else(|| trunc("header"))?;
        if version != VERSION {
            return Err(WeightError::UnsupportedVersion(version));
        }
        let n_antennas = r.u32().ok_or_else(|| trunc("header"))? as usize;
        let count = r.u32().ok_or_else(|| trunc("header"))? as usize;

        // Names of tensors not yet seen, to report what a truncated file lacks.
        let mut pending: Vec<String> = canonical_shapes().into_iter().map(|(n, _)| n).collect();
        let missing = |pending: &Vec<String>, idx: usize| {
            format!(
                "tensor {} of {count} (missing: {})",
                idx + 1,
                if pending.is_empty() {
                    "none".to_string()
                } else {
                    pending.join(", ")
                }
            )
        };

        let mut tensors = BTreeMap::new();
        for idx in 0..count {
            let name_len = r
                .u16()
                .ok_or_else(|| WeightError::Truncated(missing(&pending, idx)))?
                as usize;
            let name_bytes = r
                .take(name_len)
                .ok_or_else(|| WeightError::Truncated(missing(&pending, idx)))?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| WeightError::BadName)?
                .to_string();
            let rank = r.u8().ok_or_else(|| trunc(&name))? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32().ok_or_else(|| trunc(&name))? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| trunc(&name))?;
            let data = r.f32_vec(numel).ok_or_else(|| trunc(&name))?;
            pending.retain(|p| p != &name);
            if tensors
                .insert(name.clone(), Tensor { dims, data })
                .is_some()
            {
                return Err(WeightError::DuplicateTensor(name));
            }
        }
        let sigma = r.f64().ok_or_else(|| trunc("metadata block"))?;
        let mut meta = [0f32; 4];
        for v in meta.iter_mut() {
            *v = r.f32().ok_or_else(|| trunc("metadata block"))?;
        }
        if r.remaining() != 0 {
            return Err(WeightError::TrailingBytes(r.remaining()));
        }
        let wf = Self {
            n_antennas,
            sigma,
            norm_mean: [meta[0], meta[1]],
            norm_scale: [meta[2], meta[3]],
            tensors,
        };
        wf.validate()?;
        Ok(wf)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&buf)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
struct Conv {
    in_ch: usize,
    out_ch: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv {
    fn from_tensors(w: &Tensor, b: &Tensor) -> Self {
        Self {
            in_ch: w.dims[1],
            out_ch: w.dims[0],
            weight: w.data.iter().map(|&v| v as f64).collect(),
            bias: b.data.iter().map(|&v| v as f64).collect(),
        }
    }

    fn apply(&self, input: &[f64], side: usize) -> Vec<f64> {
        conv3x3(
            input,
            self.in_ch,
            side,
            &self.weight,
            &self.bias,
            self.out_ch,
        )
    }
}

/// 3x3 cross-correlation with zero padding 1 on `in_ch` planes of `side x side`.
/// `weight` is `[out_ch, in_ch, 3, 3]` row-major.
pub fn conv3x3(
    input: &[f64],
    in_ch: usize,
    side: usize,
    weight: &[f64],
    bias: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    let hw = side * side;
    debug_assert_eq!(input.len(), in_ch * hw);
    debug_assert_eq!(weight.len(), out_ch * in_ch * 9);
    let mut out = vec![0.0; out_ch * hw];
    for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
        plane.fill(bias[o]);
        for (i, src) in input.chunks_exact(hw).enumerate() {
            let kernel = &weight[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
            for ky in 0..3 {
                // output row r reads source row r + ky - 1
                let (r0, r1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                for kx in 0..3 {
                    let w = kernel[ky * 3 + kx];
                    let (c0, c1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                    for r in r0..r1 {
                        let sr = r + ky - 1;
                        let dst = &mut plane[r * side + c0..r * side + c1];
                        let s = &src[sr * side + c0 + kx - 1..sr * side + c1 + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// The residual CNN, with f32 weights promoted to f64.
#[derive(Debug, Clone)]
pub struct ResidualDenoiser {
    n_antennas: usize,
    side: usize,
    sigma: f64,
    norm_mean: [f64; 2],
    norm_scale: [f64; 2],
    head: Conv,
    blocks: Vec<[Conv; 2]>,
    tail: Conv,
}

impl ResidualDenoiser {
    pub fn from_weights(wf: &WeightFile) -> Result<Self> {
        wf.validate()?;
        let side = grid_side(wf.n_antennas).ok_or(WeightError::NonSquare(wf.n_antennas))?;
        let conv = |prefix: &str| {
            Conv::from_tensors(
                &wf.tensors[&format!("{prefix}.w")],
                &wf.tensors[&format!("{prefix}.b")],
            )
        };
        Ok(Self {
            n_antennas: wf.n_antennas,
            side,
            sigma: wf.sigma,
            norm_mean: wf.norm_mean.map(f64::from),
            norm_scale: wf.norm_scale.map(f64::from),
            head: conv("head"),
            blocks: (0..BLOCKS)
                .map(|i| {
                    [
                        conv(&format!("block{i}.conv0")),
                        conv(&format!("block{i}.conv1")),
                    ]
                })
                .collect(),
            tail: conv("tail"),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weights(&WeightFile::read(path)?)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    /// Splitting parameter the weights were trained at.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Configuration error when the network and the array disagree on `N`.
    pub fn expect_antennas(&self, n: usize) -> Result<()> {
        if self.n_antennas != n {
            let e = WeightError::AntennaCount {
                file: self.n_antennas,
                expected: n,
            };
            return Err(Error::config("weights", e.to_string()));
        }
        Ok(())
    }

    pub fn forward(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z.len())?;
        Ok(self.forward_unchecked(z.as_slice()))
    }

    fn forward_unchecked(&self, z: &[f64]) -> DVector<f64> {
        let n = self.n_antennas;
        let mut u = z.to_vec();
        for c in 0..2 {
            for v in &mut u[c * n..(c + 1) * n] {
                *v = (*v - self.norm_mean[c]) / self.norm_scale[c];
            }
        }
        let mut a = self.head.apply(&u, self.side);
        for [c0, c1] in &self.blocks {
            let mut t = c0.apply(&a, self.side);
            relu_in_place(&mut t);
            let mut t = c1.apply(&t, self.side);
            relu_in_place(&mut t);
            for (x, d) in a.iter_mut().zip(&t) {
                *x += d;
            }
        }
        let t = self.tail.apply(&a, self.side);
        DVector::from_fn(2 * n, |i, _| z[i] + self.norm_scale[i / n] * t[i])
    }
}

impl Denoiser for ResidualDenoiser {
    fn name(&self) -> &str {
        "residual-cnn"
    }

    fn dim(&self) -> usize {
        2 * self.n_antennas
    }

    fn denoise(&self, z: &DVector<f64>) -> DVector<f64> {
        self.forward_unchecked(z.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_weights_are_identity() {
        let net = ResidualDenoiser::from_weights(&WeightFile::zeros(16, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_vec(&mut rng, 32);
        assert_eq!(net.forward(&z).unwrap(), z);
        assert_eq!(empirical_lipschitz(&net, 20, 3).unwrap(), 1.0);
    }

    #[test]
    fn conv_matches_hand_arithmetic_on_4x4() {
        // one-hot input at (1, 2); output (r, c) picks w[ky][kx] with r + ky - 1 = 1, c + kx - 1 = 2
        let mut input = vec![0.0; 16];
        input[4 + 2] = 1.0;
        let weight: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let out = conv3x3(&input, 1, 4, &weight, &[0.0], 1);
        let mut expected = vec![0.0; 16];
        for r in 0..4usize {
            for c in 0..4usize {
                let (ky, kx) = (1 + 1 - r as isize, 2 + 1 - c as isize);
                if (0..3).contains(&ky) && (0..3).contains(&kx) {
                    expected[r * 4 + c] = weight[(ky * 3 + kx) as usize];
                }
            }
        }
        assert_eq!(out, expected);

        // corner input exercises the padding on two sides
        let mut corner = vec![0.0; 16];
        corner[0] = 2.0;
        let out = conv3x3(&corner, 1, 4, &weight, &[0.5], 1);
        assert_eq!(out[0], 0.5 + 2.0 * 5.0);
        assert_eq!(out[1], 0.5 + 2.0 * 4.0);
        assert_eq!(out[4], 0.5 + 2.0 * 2.0);
        assert_eq!(out[5], 0.5 + 2.0 * 1.0);
        assert_eq!(out[15], 0.5);
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..3 * 2 * 9)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let a: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + y).collect();
        let fa = conv3x3(&a, 2, 4, &w, &[0.0; 3], 3);
        let fb = conv3x3(&b, 2, 4, &w, &[0.0; 3], 3);
        let fs = conv3x3(&sum, 2, 4, &w, &[0.0; 3], 3);
        for i in 0..fs.len() {
            assert!((fs[i] - (2.0 * fa[i] + fb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_shape_preserving() {
        let net = ResidualDenoiser::from_weights(&WeightFile::random(16, 1.0, 9, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_vec(&mut rng, 32);
        let a = net.forward(&z).unwrap();
        let b = net.forward(&z).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
        assert_ne!(a, z);
        assert!(matches!(
            net.forward(&random_vec(&mut rng, 30)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn normalization_is_undone_on_the_residual_path() {
        // With only the tail bias set, out = z + scale * bias regardless of mean.
        let mut wf = WeightFile::zeros(4, 1.0);
        wf.norm_mean = [3.0, -1.0];
        wf.norm_scale = [2.0, 0.5];
        wf.tensors.get_mut("tail.b").unwrap().data = vec![1.0, 4.0];
        let net = ResidualDenoiser::from_weights(&wf).unwrap();
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let out = net.forward(&z).unwrap();
        let expected = DVector::from_vec(vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(out, expected);
    }

    #[test]
    fn round_trip_and_reordered_tensors() {
        let wf = WeightFile::random(16, 0.7, 5, 1.0);
        let back = WeightFile::from_bytes(&wf.to_bytes()).unwrap();
        assert_eq!(back, wf);
        let mut order: Vec<String> = canonical_shapes().into_iter().map(|(n, _)| n).collect();
        order.reverse();
        assert_eq!(WeightFile::from_bytes(&wf.encode(&order)).unwrap(), wf);
    }

    #[test]
    fn loader_rejects_malformed_files() {
        let wf = WeightFile::zeros(16, 1.0);
        let bytes = wf.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightFile::from_bytes(&bad),
            Err(WeightError::BadMagic { .. })
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            WeightFile::from_bytes(&bad),
            Err(WeightError::UnsupportedVersion(2))
        ));

        // cut inside the last conv weights: the message names the tensor
        let tail_b_bytes = 2 + 6 + 1 + 4 + 2 * 4;
        let cut = bytes.len() - 24 - tail_b_bytes - 10;
        match WeightFile::from_bytes(&bytes[..cut]) {
            Err(WeightError::Truncated(what)) => assert!(what.contains("tail.w"), "{what}"),
            other => panic!("expected truncation, got {other:?}"),
        }
        // cut before the last tensor header
        match WeightFile::from_bytes(&bytes[..bytes.len() - 24 - tail_b_bytes]) {
            Err(WeightError::Truncated(what)) => assert!(what.contains("tail.b"), "{what}"),
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            WeightFile::from_bytes(&extra),
            Err(WeightError::TrailingBytes(1))
        ));

        let mut missing = wf.clone();
        missing.tensors.remove("block2.conv1.b");
        let order: Vec<String> = missing.tensors.keys().cloned().collect();
        assert!(matches!(
            WeightFile::from_bytes(&missing.encode(&order)),
            Err(WeightError::MissingTensor(n)) if n == "block2.conv1.b"
        ));

        let mut shape = wf.clone();
        shape
            .tensors
            .insert("head.b".into(), Tensor::zeros(vec![32]));
        assert!(matches!(
            WeightFile::from_bytes(&shape.to_bytes()),
            Err(WeightError::ShapeMismatch { .. })
        ));

        let mut unexpected = wf.clone();
        unexpected
            .tensors
            .insert("bonus.w".into(), Tensor::zeros(vec![1]));
        assert!(matches!(
            WeightFile::from_bytes(&unexpected.to_bytes()),
            Err(WeightError::UnexpectedTensor(n)) if n == "bonus.w"
        ));

        let mut dup_order: Vec<String> = canonical_shapes().into_iter().map(|(n, _)| n).collect();
        dup_order.push("head.b".into());
        assert!(matches!(
            WeightFile::from_bytes(&wf.encode(&dup_order)),
            Err(WeightError::DuplicateTensor(_))
        ));

        assert!(matches!(
            WeightFile::zeros(12, 1.0).validate(),
            Err(WeightError::NonSquare(12))
        ));
        let mut norm = wf.clone();
        norm.norm_scale[1] = 0.0;
        assert!(matches!(
            norm.validate(),
            Err(WeightError::BadNormalization(_))
        ));
    }

    #[test]
    fn antenna_count_mismatch_is_a_config_error() {
        let net = ResidualDenoiser::from_weights(&WeightFile::zeros(16, 1.0)).unwrap();
        assert!(net.expect_antennas(16).is_ok());
        assert!(matches!(net.expect_antennas(64), Err(Error::Config { .. })));
    }

    #[test]
    fn soft_threshold_plug_is_nonexpansive() {
        let plug = SoftThresholdPlug::new(32, 0.3).unwrap();
        assert!(empirical_lipschitz(&plug, 500, 1).unwrap() <= 1.0 + 1e-9);
        assert!(SoftThresholdPlug::new(4, -1.0).is_err());
        assert!(empirical_lipschitz(&plug, 0, 1).is_err());
    }

    #[test]
    fn file_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.prdw");
        let wf = WeightFile::random(16, 1.0, 2, 0.3);
        wf.write(&path).unwrap();
        let net = ResidualDenoiser::load(&path).unwrap();
        let direct = ResidualDenoiser::from_weights(&wf).unwrap();
        let z = DVector::from_fn(32, |i, _| (i as f64).sin());
        assert_eq!(net.forward(&z).unwrap(), direct.forward(&z).unwrap());
        assert!(matches!(
            WeightFile::read(dir.path().join("absent")),
            Err(Error::Io { .. })
        ));
    }
}
