//! Fitted probes and their binary record format.
//!
//! A [`ProbeSet`] holds every attribute probe fitted on one site and one
//! outer fold; they share a single preprocessing state. Record layout,
//! little-endian:
//!
//! ```text
//! magic "PRBMODL1" | version u32 | site kind u8 | site index u32 | fold u32
//! | d u64 | q u64 | pca mean [f64; d] | components [f64; q*d] (row-major)
//! | explained variance [f64; q] | total variance f64
//! | z mean [f64; q] | z std [f64; q]
//! | model count u64 | per model: attribute u64, alpha f64, intercept f64, beta [f64; q]
//! | CRC-32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ridge::predict_linear;
use crate::data::{SiteId, SiteKind};
use crate::error::{Error, Result};
use crate::preprocess::{PcaState, Preprocessor, ZScoreState};

pub const MODEL_MAGIC: &[u8; 8] = b"PRBMODL1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One attribute's ridge probe on one site.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub site: SiteId,
    pub attribute_id: usize,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub preprocessing: Arc<Preprocessor>,
}

impl ProbeModel {
    /// Predicts from already preprocessed rows (width q).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_linear(&self.beta, self.intercept, x)
    }

    /// Preprocesses raw feature rows (width d), then predicts.
    pub fn predict_raw(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict(&self.preprocessing.transform(rows)?)
    }
}

/// Weights of one attribute inside a [`ProbeSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeWeights {
    pub attribute_id: usize,
    pub alpha: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub site: SiteId,
    pub fold: usize,
    pub preprocessing: Arc<Preprocessor>,
    pub weights: Vec<AttributeWeights>,
}

impl ProbeSet {
    pub fn model(&self, attribute_id: usize) -> Option<ProbeModel> {
        self.weights
            .iter()
            .find(|w| w.attribute_id == attribute_id)
            .map(|w| ProbeModel {
                site: self.site,
                attribute_id,
                alpha: w.alpha,
                beta: w.beta.clone(),
                intercept: w.intercept,
                preprocessing: Arc::clone(&self.preprocessing),
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let pre = &self.preprocessing;
        let (q, d) = (pre.q(), pre.d());
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        buf.push(kind_code(self.site.kind));
        buf.extend_from_slice(&self.site.index.to_le_bytes());
        buf.extend_from_slice(&(self.fold as u32).to_le_bytes());
        buf.extend_from_slice(&(d as u64).to_le_bytes());
        buf.extend_from_slice(&(q as u64).to_le_bytes());
        let put = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
        pre.pca.mean.iter().for_each(|v| put(&mut buf, *v));
        for r in 0..q {
            for c in 0..d {
                put(&mut buf, pre.pca.components[(r, c)]);
            }
        }
        pre.pca.explained_variance.iter().for_each(|v| put(&mut buf, *v));
        put(&mut buf, pre.pca.total_variance);
        pre.zscore.mean.iter().for_each(|v| put(&mut buf, *v));
        pre.zscore.std.iter().for_each(|v| put(&mut buf, *v));
        buf.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&(w.attribute_id as u64).to_le_bytes());
            put(&mut buf, w.alpha);
            put(&mut buf, w.intercept);
            w.beta.iter().for_each(|v| put(&mut buf, *v));
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 8 + 4 + 4 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("missing magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        let kind = kind_from_code(r.u8()?)?;
        let site = SiteId::new(kind, r.u32()?)?;
        let fold = r.u32()? as usize;
        let d = r.u64()? as usize;
        let q = r.u64()? as usize;
        let mean = DVector::from_vec(r.f64s(d)?);
        let components = DMatrix::from_row_slice(q, d, &r.f64s(q * d)?);
        let explained_variance = r.f64s(q)?;
        let total_variance = r.f64()?;
        let z_mean = r.f64s(q)?;
        let z_std = r.f64s(q)?;
        let count = r.u64()? as usize;
        let mut weights = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            weights.push(AttributeWeights {
                attribute_id: r.u64()? as usize,
                alpha: r.f64()?,
                intercept: r.f64()?,
                beta: r.f64s(q)?,
            });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(ProbeSet {
            site,
            fold,
            preprocessing: Arc::new(Preprocessor {
                pca: PcaState {
                    mean,
                    components,
                    explained_variance,
                    total_variance,
                },
                zscore: ZScoreState { mean: z_mean, std: z_std },
            }),
            weights,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn kind_code(kind: SiteKind) -> u8 {
    match kind {
        SiteKind::ClipHidden => 0,
        SiteKind::ClipFinal => 1,
        SiteKind::UnetBottleneck => 2,
        SiteKind::UnetOutput => 3,
    }
}

fn kind_from_code(code: u8) -> Result<SiteKind> {
    SiteKind::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| Error::ModelFormat(format!("unknown site kind code {code}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat("record truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
