//! Dataset files.
//!
//! Binary layout (container header described in `codec`; magic `PRDS`):
//!
//! ```text
//! body offset  size  field
//! 0            4     class_count (u32)
//! 4            4     semantic_dim (u32)
//! 8            4     context_dim (u32)
//! 12           4     spec flags (u32): bit0 adversarial, bit1 ood_bias present
//! 16           8     train_size (u64)
//! 24           8     id_test_size (u64)
//! 32           8     ood_test_size (u64)
//! 40           8     bias_strength (f64)
//! 48           8     ood_bias (f64, 0 when absent)
//! 56           8     noise_std (f64)
//! 64           8     seed (u64)
//! -- version 2 only --
//! 72           4     oracle quality (u32): 0 clean, 1 noisy
//! 76           4     oracle temperature present (u32, 0/1)
//! 80           8     oracle sigma (f64)
//! 88           8     oracle temperature (f64)
//! 96           8     oracle seed (u64)
//! --
//! 104 (v2) / 72 (v1)  8   record count (u64)
//! then records, train first, then ID test, then OOD test:
//!     split tag (u8: 0 train, 1 id_test, 2 ood_test)
//!     label (u32)
//!     features (feature_dim x f64)
//!     zero-shot label (class_count x f64), only when header flag bit0 is set
//! ```
//!
//! Header flags: bit0 zero-shot cache present, bit1 oracle echo present
//! (version 2 only; version 1 files always carry 0).
//!
//! Version 1 predates the oracle echo and the zero-shot cache. A version-2
//! reader loads it with `oracle = None` and no cached labels; run the oracle's
//! cache step again before training with a regularized loss.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{BiasSpec, Dataset, Sample, Split};
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::oracle::{OracleQuality, OracleSpec};
use crate::prob::{Embedding, OneHot, ProbVector};

pub const MAGIC: [u8; 4] = *b"PRDS";
pub const CURRENT_VERSION: u16 = 2;

const FLAG_ZS: u16 = 1;
const FLAG_ORACLE: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatVersion {
    V1,
    V2,
}

impl FormatVersion {
    fn number(self) -> u16 {
        match self {
            FormatVersion::V1 => 1,
            FormatVersion::V2 => 2,
        }
    }

    /// What a current reader loses when loading a file of this version.
    pub fn compatibility_note(self) -> Option<&'static str> {
        match self {
            FormatVersion::V1 => Some(
                "version 1 file: no oracle echo and no zero-shot cache; re-run the zero-shot cache before regularized training",
            ),
            FormatVersion::V2 => None,
        }
    }
}

pub fn to_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    to_bytes_as(dataset, FormatVersion::V2)
}

pub fn to_bytes_as(dataset: &Dataset, version: FormatVersion) -> Result<Vec<u8>> {
    let spec = &dataset.spec;
    let with_zs = dataset.has_zero_shot_cache();
    if version == FormatVersion::V1 && (with_zs || dataset.oracle.is_some()) {
        return Err(Error::Format(
            "version 1 cannot store an oracle echo or zero-shot cache".into(),
        ));
    }
    if !with_zs && dataset.samples().any(|s| s.y_zs.is_some()) {
        return Err(Error::Format("zero-shot cache is only partially filled".into()));
    }
    let mut w = Writer::default();
    w.u32(spec.class_count as u32);
    w.u32(spec.semantic_dim as u32);
    w.u32(spec.context_dim as u32);
    w.u32(u32::from(spec.adversarial) | (u32::from(spec.ood_bias.is_some()) << 1));
    w.u64(spec.train_size as u64);
    w.u64(spec.id_test_size as u64);
    w.u64(spec.ood_test_size as u64);
    w.f64(spec.bias_strength);
    w.f64(spec.ood_bias.unwrap_or(0.0));
    w.f64(spec.noise_std);
    w.u64(spec.seed);

    let mut flags = 0u16;
    if version == FormatVersion::V2 {
        let o = dataset.oracle.as_ref();
        let (quality, sigma) = match o.map(|o| o.quality) {
            Some(OracleQuality::Noisy { sigma }) => (1, sigma),
            _ => (0, 0.0),
        };
        let temperature = o.and_then(|o| o.temperature);
        w.u32(quality);
        w.u32(u32::from(temperature.is_some()));
        w.f64(sigma);
        w.f64(temperature.unwrap_or(0.0));
        w.u64(o.map_or(0, |o| o.seed));
        if o.is_some() {
            flags |= FLAG_ORACLE;
        }
        if with_zs {
            flags |= FLAG_ZS;
        }
    }

    w.u64(dataset.len() as u64);
    for s in dataset.samples() {
        w.u8(s.split.tag());
        w.u32(s.label.class() as u32);
        for &v in s.x.values() {
            w.f64(v);
        }
        if with_zs {
            for &p in s.y_zs.as_ref().unwrap().probs() {
                w.f64(p);
            }
        }
    }
    Ok(codec::seal(MAGIC, version.number(), flags, &w.0))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Dataset, FormatVersion)> {
    let opened = codec::open(bytes, MAGIC, CURRENT_VERSION)?;
    let version = if opened.version == 1 { FormatVersion::V1 } else { FormatVersion::V2 };
    if version == FormatVersion::V1 && opened.flags != 0 {
        return Err(Error::Format("version 1 file with nonzero flags".into()));
    }
    let mut r = Reader::new(opened.body);
    let class_count = r.u32()? as usize;
    let semantic_dim = r.u32()? as usize;
    let context_dim = r.u32()? as usize;
    let spec_flags = r.u32()?;
    let train_size = r.u64()? as usize;
    let id_test_size = r.u64()? as usize;
    let ood_test_size = r.u64()? as usize;
    let bias_strength = r.f64()?;
    let ood_bias = r.f64()?;
    let noise_std = r.f64()?;
    let seed = r.u64()?;
    let spec = BiasSpec {
        class_count,
        semantic_dim,
        context_dim,
        train_size,
        id_test_size,
        ood_test_size,
        bias_strength,
        ood_bias: (spec_flags & 2 != 0).then_some(ood_bias),
        adversarial: spec_flags & 1 != 0,
        noise_std,
        seed,
    };
    spec.validate().map_err(|e| Error::Format(format!("bad spec echo: {e}")))?;

    let mut oracle = None;
    if version == FormatVersion::V2 {
        let quality = r.u32()?;
        let has_temp = r.u32()?;
        let sigma = r.f64()?;
        let temperature = r.f64()?;
        let oseed = r.u64()?;
        if opened.flags & FLAG_ORACLE != 0 {
            oracle = Some(OracleSpec {
                quality: match quality {
                    0 => OracleQuality::Clean,
                    1 => OracleQuality::Noisy { sigma },
                    q => return Err(Error::Format(format!("unknown oracle quality {q}"))),
                },
                temperature: (has_temp != 0).then_some(temperature),
                seed: oseed,
            });
        }
    }
    let with_zs = opened.flags & FLAG_ZS != 0;

    let count = r.u64()? as usize;
    let expected = train_size + id_test_size + ood_test_size;
    if count != expected {
        return Err(Error::Format(format!("record count {count} != split sizes {expected}")));
    }
    let dim = spec.feature_dim();
    let mut dataset = Dataset {
        spec,
        oracle,
        train: Vec::with_capacity(train_size),
        id_test: Vec::with_capacity(id_test_size),
        ood_test: Vec::with_capacity(ood_test_size),
    };
    for i in 0..count {
        let split = Split::from_tag(r.u8()?)?;
        let expected_split = if i < train_size {
            Split::Train
        } else if i < train_size + id_test_size {
            Split::IdTest
        } else {
            Split::OodTest
        };
        if split != expected_split {
            return Err(Error::Format(format!("record {i} has split {split:?}, expected {expected_split:?}")));
        }
        let label = OneHot::new(r.u32()? as usize, class_count)?;
        let x = Embedding::unit_from_stored(r.f64s(dim)?)?;
        let y_zs = if with_zs { Some(ProbVector::new(r.f64s(class_count)?)?) } else { None };
        let sample = Sample { x, label, y_zs, split };
        match split {
            Split::Train => dataset.train.push(sample),
            Split::IdTest => dataset.id_test.push(sample),
            Split::OodTest => dataset.ood_test.push(sample),
        }
    }
    r.finish()?;
    Ok((dataset, version))
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    save_as(dataset, path, FormatVersion::V2)
}

pub fn save_as(dataset: &Dataset, path: impl AsRef<Path>, version: FormatVersion) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes_as(dataset, version)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    load_with_version(path).map(|(d, _)| d)
}

pub fn load_with_version(path: impl AsRef<Path>) -> Result<(Dataset, FormatVersion)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    split: Split,
    label: usize,
    x: &'a [f64],
    y_zs: Option<&'a [f64]>,
}

/// One JSON object per sample, for inspection only.
pub fn write_jsonl<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for s in dataset.samples() {
        let rec = JsonRecord {
            split: s.split,
            label: s.label.class(),
            x: s.x.values(),
            y_zs: s.y_zs.as_ref().map(|p| p.probs()),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    out.flush().map_err(|e| Error::io("<jsonl>", e))
}
