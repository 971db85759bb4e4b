//! `PRDN` dataset files: one shared operator plus `(h, y, snr_db)` records.
//!
//! Layout (little-endian): `"PRDN"`, then u32 version, N, M, sample count and
//! flags; `Re(A)` and `Im(A)` as row-major f64 `M x N` blocks; then per
//! sample `h` (2N f64, `[Re; Im]`), `y` (2M f64) and `snr_db` (f64).

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::pilot::{add_noise_seeded, noise_variance_for, PilotConfig, PilotSystem};
use super::{ArrayGeometry, ChannelConfig, ChannelSimulator};
use crate::codec::{put_f64s, ByteReader};
use crate::error::{Error, Result};
use crate::model::{embed_complex, MeasurementOperator, RealEmbedding};

const MAGIC: &[u8; 4] = b"PRDN";
const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetFlags {
    /// Each `h` scaled to `||h||^2 = N`.
    pub normalized: bool,
    /// `h` is the angular-domain channel and `A` includes the DFT.
    pub angular: bool,
    /// `y = A h` exactly.
    pub noiseless: bool,
}

impl DatasetFlags {
    pub fn bits(&self) -> u32 {
        (self.normalized as u32) | (self.angular as u32) << 1 | (self.noiseless as u32) << 2
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        (bits & !0b111 == 0).then_some(Self {
            normalized: bits & 1 != 0,
            angular: bits & 2 != 0,
            noiseless: bits & 4 != 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h: DVector<f64>,
    pub y: DVector<f64>,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub flags: DatasetFlags,
    pub op: Arc<MeasurementOperator>,
    pub samples: Vec<Sample>,
}

/// File size implied by the header fields.
pub fn expected_size(n: usize, m: usize, n_samples: usize) -> usize {
    HEADER_BYTES + 16 * m * n + n_samples * 8 * (2 * n + 2 * m + 1)
}

impl Dataset {
    pub fn n_antennas(&self) -> usize {
        self.op.n_complex()
    }

    pub fn m_complex(&self) -> usize {
        self.op.m_complex()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Real-coordinate noise variance of sample `i`, recomputed from the
    /// stored SNR. `||C||_F = ||A||_F` because the DFT is unitary.
    pub fn noise_var(&self, i: usize) -> f64 {
        let s = &self.samples[i];
        let clean = (self.op.a_real() * &s.h).norm_squared();
        let gain = self.op.re_block().norm_squared() + self.op.im_block().norm_squared();
        noise_variance_for(clean, gain, s.snr_db) / 2.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, m) = (self.n_antennas(), self.m_complex());
        let mut out = Vec::with_capacity(expected_size(n, m, self.len()));
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            n as u32,
            m as u32,
            self.len() as u32,
            self.flags.bits(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for block in [self.op.re_block(), self.op.im_block()] {
            // nalgebra is column-major; the file is row-major
            put_f64s(&mut out, block.transpose().iter().copied());
        }
        for s in &self.samples {
            put_f64s(&mut out, s.h.iter().copied());
            put_f64s(&mut out, s.y.iter().copied());
            put_f64s(&mut out, [s.snr_db]);
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::DatasetFormat {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = ByteReader::new(buf);
        let magic = r
            .take(4)
            .ok_or_else(|| bad("file shorter than the header".into()))?;
        if magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected \"PRDN\"")));
        }
        let mut header = [0u32; 5];
        for v in header.iter_mut() {
            *v = r
                .u32()
                .ok_or_else(|| bad("file shorter than the header".into()))?;
        }
        let [version, n, m, count, flags] = header.map(|v| v as usize);
        if version as u32 != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let flags = DatasetFlags::from_bits(flags as u32)
            .ok_or_else(|| bad(format!("unknown flag bits {flags:#x}")))?;
        // u128 so a hostile header cannot overflow the size check
        let (n128, m128) = (n as u128, m as u128);
        let expected =
            HEADER_BYTES as u128 + 16 * m128 * n128 + count as u128 * 8 * (2 * n128 + 2 * m128 + 1);
        if buf.len() as u128 != expected {
            return Err(bad(format!(
                "size {} does not match header (N={n}, M={m}, {count} samples -> {expected} bytes)",
                buf.len()
            )));
        }
        let mut block = || DMatrix::from_row_slice(m, n, &r_f64(&mut r, m * n));
        fn r_f64(r: &mut ByteReader, k: usize) -> Vec<f64> {
            r.f64_vec(k).expect("size checked")
        }
        let re = block();
        let im = block();
        let op = Arc::new(MeasurementOperator::from_blocks(re, im)?);
        let samples = (0..count)
            .map(|_| Sample {
                h: DVector::from_vec(r_f64(&mut r, 2 * n)),
                y: DVector::from_vec(r_f64(&mut r, 2 * m)),
                snr_db: r_f64(&mut r, 1)[0],
            })
            .collect();
        Ok(Self { flags, op, samples })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// What to simulate for a dataset.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub geometry: ArrayGeometry,
    pub channel: ChannelConfig,
    pub pilot: PilotConfig,
    pub n_samples: usize,
    /// `f64::INFINITY` for noiseless measurements.
    pub snr_db: f64,
    pub normalize: bool,
    pub angular: bool,
}

/// Turns a spatial channel into the stored target (angular transform and
/// optional normalization to `||h||^2 = N`).
pub fn prepare_target(
    system: &PilotSystem,
    h: &crate::model::ComplexVector,
    normalize: bool,
) -> RealEmbedding {
    let mut e = embed_complex(&system.target(h)).into_inner();
    if normalize {
        let norm = e.norm();
        if norm > 0.0 {
            e *= (system.n_antennas() as f64).sqrt() / norm;
        }
    }
    e.into()
}

/// Simulates a dataset. Sample `i` draws its channel and noise from streams
/// derived from `(seed, i)`, so the result does not depend on the thread count.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(Error::config("snr_db", "must be finite or +inf"));
    }
    let sim = ChannelSimulator::new(&spec.geometry, &spec.channel)?;
    let system = PilotSystem::generate(spec.geometry.n_antennas, &spec.pilot, seed, spec.angular)?;
    let samples = (0..spec.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let (h, _) = sim.generate(seed, i);
            let h = prepare_target(&system, &h, spec.normalize);
            let meas = add_noise_seeded(&system, &h, spec.snr_db, seed, i)?;
            Ok(Sample {
                h: h.into_inner(),
                y: meas.y.into_inner(),
                snr_db: spec.snr_db,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        flags: DatasetFlags {
            normalized: spec.normalize,
            angular: spec.angular,
            noiseless: spec.snr_db == f64::INFINITY,
        },
        op: system.operator().clone(),
        samples,
    })
}
