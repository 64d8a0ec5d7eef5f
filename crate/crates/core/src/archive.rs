//! Binary model archive.
//!
//! Layout: 4-byte magic `GNTP`, little-endian u32 format version, a
//! length-prefixed payload (transition system, feature template text,
//! group vocabularies, raw and averaged parameters, metadata), then a
//! trailing SHA-256 digest of everything before it. All integers are
//! little-endian; floats are f64 bits. Save followed by load followed
//! by save is byte-identical.

use std::fs;
use std::io::{Cursor, Read as _, Write as _};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureTemplate, Vocab};
use crate::model::{Model, ModelMeta};
use crate::network::{Activation, Params};
use crate::transition::{TaskKind, TransitionSystem};

const MAGIC: &[u8; 4] = b"GNTP";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Archive(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: vec![] }
    }

    fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.write_all(s.as_bytes()).unwrap();
    }

    fn strings(&mut self, ss: &[String]) {
        self.u32(ss.len() as u32);
        for s in ss {
            self.str(s);
        }
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for &v in m.iter() {
            self.f64(v);
        }
    }

    fn vector(&mut self, v: &Array1<f64>) {
        self.u64(v.len() as u64);
        for &x in v.iter() {
            self.f64(x);
        }
    }

    fn params(&mut self, p: &Params) {
        self.str(p.activation.as_str());
        self.u32(p.group_arity.len() as u32);
        for &a in &p.group_arity {
            self.u64(a as u64);
        }
        self.u64(p.step_tag);
        self.u32(p.embeddings.len() as u32);
        for e in &p.embeddings {
            self.matrix(e);
        }
        self.u32(p.hidden.len() as u32);
        for (w, b) in &p.hidden {
            self.matrix(w);
            self.vector(b);
        }
        self.matrix(&p.out_w);
        self.vector(&p.out_b);
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader {
            cur: Cursor::new(bytes),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated archive: expected u32"))
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur
            .read_u64::<LittleEndian>()
            .map_err(|_| bad("truncated archive: expected u64"))
    }

    fn f64(&mut self) -> Result<f64> {
        self.cur
            .read_f64::<LittleEndian>()
            .map_err(|_| bad("truncated archive: expected f64"))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut bytes = vec![0u8; len];
        self.cur
            .read_exact(&mut bytes)
            .map_err(|_| bad("truncated archive: expected string"))?;
        String::from_utf8(bytes).map_err(|_| bad("invalid utf-8 in archive string"))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.str()).collect()
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))
    }

    fn vector(&mut self) -> Result<Array1<f64>> {
        let len = self.u64()? as usize;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Ok(Array1::from_vec(data))
    }

    fn params(&mut self) -> Result<Params> {
        let activation = Activation::parse(&self.str()?).map_err(|e| bad(e.to_string()))?;
        let arity_len = self.u32()? as usize;
        let mut group_arity = Vec::with_capacity(arity_len);
        for _ in 0..arity_len {
            group_arity.push(self.u64()? as usize);
        }
        let step_tag = self.u64()?;
        let n_emb = self.u32()? as usize;
        let mut embeddings = Vec::with_capacity(n_emb);
        for _ in 0..n_emb {
            embeddings.push(self.matrix()?);
        }
        let n_hidden = self.u32()? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            let w = self.matrix()?;
            let b = self.vector()?;
            hidden.push((w, b));
        }
        let out_w = self.matrix()?;
        let out_b = self.vector()?;
        Ok(Params {
            embeddings,
            hidden,
            out_w,
            out_b,
            activation,
            group_arity,
            step_tag,
        })
    }
}

/// Serialize a model to bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(model.system.kind().as_str());
    w.strings(model.system.symbols());
    w.str(&model.template.to_text());
    w.u32(model.template.groups.len() as u32);
    for g in &model.template.groups {
        w.strings(g.vocab.entries());
    }
    w.params(&model.params);
    w.params(&model.averaged);
    w.str(&model.meta.config_text);
    w.u64(model.meta.seed);
    w.u32(model.meta.epochs);
    let digest = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&digest);
    w.buf
}

/// Deserialize a model, verifying magic, version, and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(bad("archive too short"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != checksum {
        return Err(bad("checksum mismatch: archive is corrupt"));
    }
    if &body[..4] != MAGIC {
        return Err(bad("bad magic: not a model archive"));
    }
    let mut r = Reader::new(&body[4..]);
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!(
            "unsupported archive version {version} (expected {VERSION})"
        )));
    }
    let kind = TaskKind::parse(&r.str()?).map_err(|e| bad(e.to_string()))?;
    let symbols = r.strings()?;
    let system = match kind {
        TaskKind::Tagging => TransitionSystem::tagging(symbols),
        TaskKind::Parsing => TransitionSystem::parsing(symbols),
        TaskKind::Compression => TransitionSystem::compression(),
    };
    let template_text = r.str()?;
    let mut template = FeatureTemplate::parse_text(&template_text)?;
    let n_groups = r.u32()? as usize;
    if n_groups != template.groups.len() {
        return Err(bad(format!(
            "vocabulary count {n_groups} does not match template group count {}",
            template.groups.len()
        )));
    }
    for g in &mut template.groups {
        g.vocab = Vocab::from_entries(r.strings()?);
    }
    let params = r.params()?;
    let averaged = r.params()?;
    let config_text = r.str()?;
    let seed = r.u64()?;
    let epochs = r.u32()?;
    if r.cur.position() as usize != body.len() - 4 {
        return Err(bad("trailing bytes after archive payload"));
    }
    let mut model = Model::new(system, template, params);
    model.averaged = averaged;
    model.meta = ModelMeta {
        config_text,
        seed,
        epochs,
    };
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::simple_tagging_template;

    fn sample_model() -> Model {
        let sys = TransitionSystem::tagging(vec!["A".into(), "B".into()]);
        let mut template = simple_tagging_template(1, 2, 4);
        let corpus = vec![(
            crate::input::Input::from_forms(&["x", "y", "z"]).unwrap(),
            crate::tasks::GoldAnnotation::Tagging {
                tags: vec!["A".into(), "B".into(), "A".into()],
            },
        )];
        template.build_vocabs(&sys, &corpus);
        let params = Params::init(&template, &[5], sys.vocab().len(), Activation::Relu, 42);
        let mut m = Model::new(sys, template, params);
        m.meta.seed = 42;
        m.meta.epochs = 3;
        m.meta.config_text = "task=tagging\nseed=42\n".into();
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = sample_model();
        let bytes = to_bytes(&m);
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded), bytes);
        assert_eq!(loaded, m);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = to_bytes(&sample_model());
        bytes[0] = b'X';
        // Fix the checksum so the magic check itself is exercised.
        let len = bytes.len();
        let digest = Sha256::digest(&bytes[..len - 32]);
        bytes[len - 32..].copy_from_slice(&digest);
        let e = from_bytes(&bytes).unwrap_err();
        assert!(e.to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = to_bytes(&sample_model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let e = from_bytes(&bytes).unwrap_err();
        assert!(e.to_string().contains("checksum"));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = to_bytes(&sample_model());
        let e = from_bytes(&bytes[..bytes.len() - 40]).unwrap_err();
        assert!(matches!(e, Error::Archive(_)));
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = to_bytes(&sample_model());
        bytes[4] = 99;
        let len = bytes.len();
        let digest = Sha256::digest(&bytes[..len - 32]);
        bytes[len - 32..].copy_from_slice(&digest);
        let e = from_bytes(&bytes).unwrap_err();
        assert!(e.to_string().contains("version"));
    }
}
