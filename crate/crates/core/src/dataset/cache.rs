//! Binary cache of an [`EncodedDataset`].
//!
//! Layout of the data file (little-endian):
//!
//! ```text
//! "ITCTDS1" | u32 version | u32 rows | u32 m | u32 c
//! | u32 vocab size × m | u32 token id × rows·m | f32 value × rows·c | u32 label × rows
//! ```
//!
//! A JSON sidecar (`<file>.json`) carries feature names, the vocabulary and
//! normalisation statistics, and the SHA-256 of the data file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoded::{EncodedDataset, FeatureSet};
use super::preprocess::{ImputationStats, NormalizationStats};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"ITCTDS1";
const VERSION: u32 = 1;
const WHAT: &str = "dataset cache";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CacheMeta {
    pub features: FeatureSet,
    pub vocabulary: Vocabulary,
    pub normalization: NormalizationStats,
    #[serde(default)]
    pub imputation: Vec<ImputationStats>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    rows: usize,
    sha256: String,
    #[serde(flatten)]
    meta: CacheMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds the 32-bit cache format")))
}

pub fn save_cache(path: impl AsRef<Path>, data: &EncodedDataset, meta: &CacheMeta) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(32 + 4 * (data.cat().len() + data.cont().len() + data.n_rows()));
    buf.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        to_u32(data.n_rows(), "row count")?,
        data.n_categorical() as u32,
        data.n_continuous() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in data.vocab_sizes() {
        buf.extend_from_slice(&to_u32(v, "vocabulary size")?.to_le_bytes());
    }
    for &id in data.cat() {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for &x in data.cont() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for &l in data.labels() {
        buf.extend_from_slice(&u32::from(l).to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let sidecar = Sidecar {
        version: VERSION,
        rows: data.n_rows(),
        sha256: hex::encode(Sha256::digest(&buf)),
        meta: CacheMeta {
            features: data.features().clone(),
            ..meta.clone()
        },
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("dataset cache sidecar", e))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
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
            .ok_or(Error::Truncated { what: WHAT })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated { what: WHAT })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<(EncodedDataset, CacheMeta)> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { what: WHAT });
    }
    let mut r = Reader {
        buf: &buf,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            what: WHAT,
            found: version,
            supported: VERSION,
        });
    }
    let (n, m, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let vocab_sizes: Vec<usize> = r.u32s(m)?.into_iter().map(|v| v as usize).collect();
    let cat = r.u32s(n * m)?;
    let cont: Vec<f32> = r.u32s(n * c)?.into_iter().map(f32::from_bits).collect();
    let labels: Vec<u8> = r
        .u32s(n)?
        .into_iter()
        .map(|l| u8::try_from(l).map_err(|_| Error::Format(format!("label {l} in dataset cache"))))
        .collect::<Result<_>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in dataset cache",
            buf.len() - r.pos
        )));
    }

    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json("dataset cache sidecar", e))?;
    if sidecar.sha256 != hex::encode(Sha256::digest(&buf)) {
        return Err(Error::Checksum { what: WHAT });
    }
    let meta = sidecar.meta;
    let data = EncodedDataset::new(meta.features.clone(), vocab_sizes, cat, cont, labels)?;
    Ok((data, meta))
}
