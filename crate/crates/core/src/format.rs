//! Binary model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "S2VR" | version u32 | pipeline hash [32]
//! mode u32 | q u64 | n_support u64 | d u64 | m u64
//! config length u64 | config JSON
//! β (q × n_support, row-major) | S (q × q, row-major)
//! support features (d × n_support, row-major) | support indices (u64 × n_support)
//! scaler mean (d) | scaler scale (d) | output mean (q) | output scale
//! ω (m) | σ (m)
//! training digest [32]
//! checksum u64 = first 8 bytes of SHA-256 over everything before it
//! ```

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::KernelWeights;
use crate::model::{FeatureScaler, Mode, ModelConfig, ModelParams, S2vrModel};

pub const MAGIC: &[u8; 4] = b"S2VR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4;
const TRAILER_LEN: usize = 8;

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn row_major(&mut self, m: &DMatrix<f64>) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.0.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }
}

pub fn serialize(model: &S2vrModel) -> Result<Vec<u8>> {
    let q = model.outputs();
    let ns = model.support_indices.len();
    let d = model.feature_dim();
    let m = model.bandwidths.len();
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Config(format!("cannot encode model config: {e}")))?;

    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&model.pipeline_hash);
    w.u32(match model.mode {
        Mode::Joint => 0,
        Mode::AnglesOnly => 1,
    });
    for dim in [q, ns, d, m] {
        w.u64(dim as u64);
    }
    w.u64(config.len() as u64);
    w.0.extend_from_slice(&config);
    w.row_major(&model.params.beta);
    w.row_major(&model.params.s);
    w.row_major(&model.support_inputs);
    for &i in &model.support_indices {
        w.u64(i as u64);
    }
    w.f64s(&model.scaler.mean);
    w.f64s(&model.scaler.scale);
    w.f64s(model.output_mean.iter());
    w.f64s([&model.output_scale]);
    w.f64s(model.params.omega.as_slice());
    w.f64s(&model.bandwidths);
    w.0.extend_from_slice(&model.training_digest);
    let sum = checksum(&w.0);
    w.u64(sum);
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!("truncated stream while reading {what}"),
            )),
        }
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn dim(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| Error::format(at, format!("implausible {what} {v}")))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos, format!("{what} too large")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn row_major(&mut self, r: usize, c: usize, what: &str) -> Result<DMatrix<f64>> {
        let n = r
            .checked_mul(c)
            .ok_or_else(|| Error::format(self.pos, format!("{what} too large")))?;
        Ok(DMatrix::from_row_slice(r, c, &self.f64s(n, what)?))
    }
    fn hash(&mut self, what: &str) -> Result<[u8; 32]> {
        Ok(self.take(32, what)?.try_into().unwrap())
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<S2vrModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated stream: no header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic bytes, not an S2VR model"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported format version {version}, expected {VERSION}"),
        ));
    }
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::format(bytes.len(), "truncated stream: no checksum"));
    }
    let body_end = bytes.len() - TRAILER_LEN;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if stored != checksum(&bytes[..body_end]) {
        return Err(Error::format(
            body_end,
            "checksum mismatch (stream truncated or corrupted)",
        ));
    }

    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: HEADER_LEN,
    };
    let pipeline_hash = r.hash("pipeline hash")?;
    let mode_at = r.pos;
    let mode = match r.u32("mode")? {
        0 => Mode::Joint,
        1 => Mode::AnglesOnly,
        other => return Err(Error::format(mode_at, format!("unknown mode tag {other}"))),
    };
    let q = r.dim("output count")?;
    let ns = r.dim("support count")?;
    let d = r.dim("feature dimension")?;
    let m = r.dim("bandwidth count")?;
    let cfg_len = r.dim("config length")?;
    let cfg_at = r.pos;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config")?)
        .map_err(|e| Error::format(cfg_at, format!("bad model config: {e}")))?;
    let beta = r.row_major(q, ns, "beta")?;
    let s = r.row_major(q, q, "structure matrix")?;
    let support_inputs = r.row_major(d, ns, "support features")?;
    let mut support_indices = Vec::with_capacity(ns);
    for _ in 0..ns {
        support_indices.push(r.dim("support index")?);
    }
    let mean = r.f64s(d, "scaler mean")?;
    let scale = r.f64s(d, "scaler scale")?;
    let output_mean = DVector::from_vec(r.f64s(q, "output mean")?);
    let output_scale = r.f64s(1, "output scale")?[0];
    let omega_at = r.pos;
    let omega = KernelWeights::new(r.f64s(m, "kernel weights")?)
        .map_err(|e| Error::format(omega_at, format!("invalid kernel weights: {e}")))?;
    let bandwidths = r.f64s(m, "bandwidths")?;
    let training_digest = r.hash("training digest")?;
    if r.pos != body_end {
        return Err(Error::format(r.pos, "trailing bytes before checksum"));
    }

    Ok(S2vrModel {
        params: ModelParams { beta, s, omega },
        bandwidths,
        support_inputs,
        support_indices,
        output_mean,
        output_scale,
        scaler: FeatureScaler { mean, scale },
        config,
        mode,
        training_digest,
        pipeline_hash,
        report: None,
    })
}
