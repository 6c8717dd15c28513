//! The `APMD` model file.
//!
//! ```text
//! magic            4 bytes  "APMD"
//! version          u16      = 1
//! K                u32
//! G                u32
//! dim              u32
//! positional w     f32
//! mode             u8       0 = per_cluster, 1 = dataset_wide
//! saliency flags   u8 x 2   train, eval; bit 0 = enabled, bit 1 = signed score
//! centroids        K * dim f32
//! semantic values  G * K f32 (row-major by class)
//! counts           G * K f32
//! hierarchy        u32 S, S x (u32 len, utf8 name),
//!                  u32 G, G x (u32 superclass, u32 len, utf8 name)
//! fit summary      f64 training SSE, u32 epochs run
//! crc32            u32 over every preceding byte
//! ```
//!
//! All integers and reals are little-endian.

use std::fs;
use std::path::Path;

use super::TrainedModel;
use crate::clustering::Centroids;
use crate::embedding::{PositionalConfig, SaliencyScore};
use crate::error::{Error, Result};
use crate::semantics::{NormalizationMode, SemanticMatrix};
use crate::store::ClassHierarchy;

pub const MODEL_MAGIC: &[u8; 4] = b"APMD";
pub const MODEL_VERSION: u16 = 1;
pub const MODEL_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 4 + 1 + 2;

const FLAG_ENABLED: u8 = 1;
const FLAG_SIGNED: u8 = 2;

fn saliency_flags(enabled: bool, score: SaliencyScore) -> u8 {
    let mut f = 0;
    if enabled {
        f |= FLAG_ENABLED;
    }
    if score == SaliencyScore::Signed {
        f |= FLAG_SIGNED;
    }
    f
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let c = model.centroids();
    let s = model.semantics();
    let h = model.hierarchy();
    let mut out =
        Vec::with_capacity(MODEL_HEADER_LEN + 4 * (c.centers().len() + 2 * s.values().len()) + 64);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, c.k())?;
    put_u32(&mut out, s.class_count())?;
    put_u32(&mut out, c.dim())?;
    out.extend_from_slice(&model.positional().weight().to_le_bytes());
    out.push(s.mode().as_u8());
    out.push(saliency_flags(
        model.saliency_train(),
        model.saliency_score(),
    ));
    out.push(saliency_flags(
        model.saliency_eval(),
        model.saliency_score(),
    ));
    for v in c.centers().iter().chain(s.values()).chain(s.counts()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, h.superclass_count())?;
    for name in h.superclass_names() {
        put_str(&mut out, name)?;
    }
    put_u32(&mut out, h.class_count())?;
    for class in h.classes() {
        put_u32(&mut out, class.superclass as usize)?;
        put_str(&mut out, &class.name)?;
    }
    out.extend_from_slice(&c.training_sse().to_le_bytes());
    put_u32(&mut out, c.iterations_run())?;
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corruption {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| self.corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.corrupt("matrix size overflows"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("name is not valid UTF-8"))
    }
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing APMD magic".into(),
        });
    }
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 6 {
        return Err(corrupt("header truncated".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(Error::Migration {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_VERSION,
        });
    }
    if bytes.len() < MODEL_HEADER_LEN + 4 {
        return Err(corrupt(format!("file truncated at {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut r = Reader {
        bytes: body,
        pos: 6,
        path,
    };
    let k = r.u32()? as usize;
    let g = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let weight = r.f32()?;
    let mode = r.u8()?;
    let train_flags = r.u8()?;
    let eval_flags = r.u8()?;
    let mode = NormalizationMode::from_u8(mode)
        .ok_or_else(|| corrupt(format!("unknown normalization mode {mode}")))?;
    let score = if (train_flags | eval_flags) & FLAG_SIGNED != 0 {
        SaliencyScore::Signed
    } else {
        SaliencyScore::Absolute
    };

    let centers = r.f32s(
        k.checked_mul(dim)
            .ok_or_else(|| corrupt("K x dim overflows".into()))?,
    )?;
    let gk = g
        .checked_mul(k)
        .ok_or_else(|| corrupt("G x K overflows".into()))?;
    let values = r.f32s(gk)?;
    let counts = r.f32s(gk)?;

    let s_count = r.u32()? as usize;
    let mut supers = Vec::new();
    for id in 0..s_count {
        supers.push((id as u32, r.string()?));
    }
    let class_count = r.u32()? as usize;
    let mut classes = Vec::new();
    for id in 0..class_count {
        let sup = r.u32()?;
        classes.push((id as u32, r.string()?, sup));
    }
    let training_sse = r.f64()?;
    let iterations = r.u32()? as usize;
    if r.pos != body.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after model body",
            body.len() - r.pos
        )));
    }

    let in_file = |e: Error| Error::Corruption {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let hierarchy = ClassHierarchy::new(classes, supers).map_err(in_file)?;
    let centroids = Centroids::new(k, dim, centers, training_sse, iterations).map_err(in_file)?;
    let semantics = SemanticMatrix::from_parts(g, k, mode, values, counts).map_err(in_file)?;
    let positional = PositionalConfig::new(weight, dim).map_err(in_file)?;
    TrainedModel::new(
        centroids,
        semantics,
        positional,
        train_flags & FLAG_ENABLED != 0,
        eval_flags & FLAG_ENABLED != 0,
        score,
        hierarchy,
    )
    .map_err(in_file)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, path)
}
