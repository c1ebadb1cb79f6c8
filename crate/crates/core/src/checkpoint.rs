//! Versioned checkpoint container of named blobs.
//!
//! ```text
//! "TTCK" | u64 version | u64 blob count | blobs...
//! blob: u64 name length | name (UTF-8) | u8 kind | u64 payload length | payload
//! ```
//!
//! Integers and floats are little-endian. Payloads by kind: 1 text, 2 a `TTM1`
//! matrix, 3 a dense matrix (`u64 rows`, `u64 cols`, row-major f64), 4 a vector
//! (`u64 len`, f64), 5 a single u64.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::Parameterized;
use crate::rnn_cells::{Cell, CellKind};
use crate::tasks::SequenceModel;
use crate::tt_format::{read_exact, read_f64s, read_u64, write_u64, TtMatrix};
use crate::tt_linear::LinearMap;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTCK";
pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobKind {
    Text = 1,
    Tt = 2,
    Dense = 3,
    Vector = 4,
    U64 = 5,
}

impl BlobKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => BlobKind::Text,
            2 => BlobKind::Tt,
            3 => BlobKind::Dense,
            4 => BlobKind::Vector,
            5 => BlobKind::U64,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub kind: BlobKind,
    pub payload: Vec<u8>,
}

impl Blob {
    fn text(name: &str, text: &str) -> Blob {
        Blob {
            name: name.into(),
            kind: BlobKind::Text,
            payload: text.as_bytes().to_vec(),
        }
    }

    fn u64(name: &str, v: u64) -> Blob {
        Blob {
            name: name.into(),
            kind: BlobKind::U64,
            payload: v.to_le_bytes().to_vec(),
        }
    }

    fn vector(name: &str, v: &[f64]) -> Blob {
        let mut payload = Vec::with_capacity(8 + 8 * v.len());
        payload.extend_from_slice(&(v.len() as u64).to_le_bytes());
        for x in v {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        Blob {
            name: name.into(),
            kind: BlobKind::Vector,
            payload,
        }
    }

    fn dense(name: &str, w: &Array2<f64>) -> Blob {
        let mut payload = Vec::with_capacity(16 + 8 * w.len());
        payload.extend_from_slice(&(w.nrows() as u64).to_le_bytes());
        payload.extend_from_slice(&(w.ncols() as u64).to_le_bytes());
        for x in w.iter() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        Blob {
            name: name.into(),
            kind: BlobKind::Dense,
            payload,
        }
    }

    fn tt(name: &str, m: &TtMatrix) -> Result<Blob> {
        let mut payload = Vec::new();
        m.write_to(&mut payload)?;
        Ok(Blob {
            name: name.into(),
            kind: BlobKind::Tt,
            payload,
        })
    }

    fn expect(&self, kind: BlobKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(&self.name, format!("expected a {kind:?} blob, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn as_text(&self) -> Result<String> {
        self.expect(BlobKind::Text)?;
        String::from_utf8(self.payload.clone()).map_err(|_| Error::format(&self.name, "text is not UTF-8"))
    }

    pub fn as_u64(&self) -> Result<u64> {
        self.expect(BlobKind::U64)?;
        read_u64(&mut Cursor::new(&self.payload), &self.name)
    }

    pub fn as_vector(&self) -> Result<Vec<f64>> {
        self.expect(BlobKind::Vector)?;
        let mut r = Cursor::new(&self.payload);
        let len = read_u64(&mut r, &self.name)? as usize;
        if self.payload.len() != 8 + 8 * len {
            return Err(Error::format(&self.name, "vector length disagrees with payload"));
        }
        read_f64s(&mut r, len, &self.name)
    }

    pub fn as_dense(&self) -> Result<Array2<f64>> {
        self.expect(BlobKind::Dense)?;
        let mut r = Cursor::new(&self.payload);
        let rows = read_u64(&mut r, &self.name)? as usize;
        let cols = read_u64(&mut r, &self.name)? as usize;
        if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).map(|n| n + 16) != Some(self.payload.len()) {
            return Err(Error::format(&self.name, "matrix shape disagrees with payload"));
        }
        let data = read_f64s(&mut r, rows * cols, &self.name)?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
    }

    pub fn as_tt(&self) -> Result<TtMatrix> {
        self.expect(BlobKind::Tt)?;
        let mut r = Cursor::new(&self.payload);
        let m = TtMatrix::read_from(&mut r)?;
        if r.position() as usize != self.payload.len() {
            return Err(Error::format(&self.name, "trailing bytes after TTM1 matrix"));
        }
        Ok(m)
    }
}

pub fn write_blobs<W: Write>(w: &mut W, blobs: &[Blob]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u64(w, CHECKPOINT_VERSION)?;
    write_u64(w, blobs.len() as u64)?;
    for b in blobs {
        write_u64(w, b.name.len() as u64)?;
        w.write_all(b.name.as_bytes())?;
        w.write_all(&[b.kind as u8])?;
        write_u64(w, b.payload.len() as u64)?;
        w.write_all(&b.payload)?;
    }
    Ok(())
}

pub fn read_blobs<R: Read>(r: &mut R) -> Result<Vec<Blob>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "checkpoint magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint magic", format!("found {magic:?}")));
    }
    let version = read_u64(r, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint version", format!("unsupported version {version}")));
    }
    let count = read_u64(r, "blob count")?;
    let mut blobs = Vec::new();
    for i in 0..count {
        let where_ = format!("blob {i}");
        let len = read_u64(r, &where_)? as usize;
        if len > 1 << 16 {
            return Err(Error::format(&where_, format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, &where_)?;
        let name = String::from_utf8(name).map_err(|_| Error::format(&where_, "name is not UTF-8"))?;
        let mut kind = [0u8; 1];
        read_exact(r, &mut kind, &name)?;
        let kind = BlobKind::from_byte(kind[0]).ok_or_else(|| Error::format(&name, format!("unknown blob kind {}", kind[0])))?;
        let len = read_u64(r, &name)?;
        let mut payload = Vec::new();
        r.take(len).read_to_end(&mut payload)?;
        if payload.len() as u64 != len {
            return Err(Error::format(&name, "truncated input"));
        }
        blobs.push(Blob { name, kind, payload });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format("checkpoint", "trailing bytes after the last blob"));
    }
    Ok(blobs)
}

/// Trained model plus everything needed to resume or evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub epoch: u64,
    pub model: SequenceModel,
    pub optimizer: Option<Adam>,
}

fn map_blobs(prefix: &str, map: &LinearMap, out: &mut Vec<Blob>) -> Result<()> {
    match map {
        LinearMap::Tt(m) => out.push(Blob::tt(prefix, m)?),
        LinearMap::Dense { weight, bias } => {
            out.push(Blob::dense(prefix, weight));
            if let Some(b) = bias {
                out.push(Blob::vector(&format!("{prefix}.bias"), b.as_slice().expect("contiguous")));
            }
        }
    }
    Ok(())
}

pub fn checkpoint_blobs(ck: &Checkpoint) -> Result<Vec<Blob>> {
    let mut blobs = vec![
        Blob::text("config", &ck.config.to_text()),
        Blob::text("config_hash", &ck.config_hash),
        Blob::u64("epoch", ck.epoch),
    ];
    if let Some(p) = &ck.model.projection {
        map_blobs("projection", p, &mut blobs)?;
    }
    for (name, map) in ck.model.cell.maps() {
        map_blobs(&format!("cell.{name}"), map, &mut blobs)?;
    }
    for (name, b) in ck.model.cell.biases() {
        blobs.push(Blob::vector(&format!("cell.{name}"), b.as_slice().expect("contiguous")));
    }
    map_blobs("output", &ck.model.output, &mut blobs)?;
    if let Some(adam) = &ck.optimizer {
        let c = adam.config;
        blobs.push(Blob::vector("adam.config", &[c.learning_rate, c.beta1, c.beta2, c.epsilon]));
        blobs.push(Blob::u64("adam.step", adam.step_count()));
        let (m, v) = adam.moments();
        for (k, (m, v)) in m.iter().zip(v).enumerate() {
            blobs.push(Blob::vector(&format!("adam.m.{k}"), m));
            blobs.push(Blob::vector(&format!("adam.v.{k}"), v));
        }
    }
    Ok(blobs)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    write_blobs(&mut bytes, &checkpoint_blobs(ck)?)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Blobs(Vec<Blob>);

impl Blobs {
    fn get(&self, name: &str) -> Option<&Blob> {
        self.0.iter().find(|b| b.name == name)
    }

    fn need(&self, name: &str) -> Result<&Blob> {
        self.get(name).ok_or_else(|| Error::format("checkpoint", format!("missing blob {name:?}")))
    }

    fn map(&self, prefix: &str) -> Result<LinearMap> {
        let b = self.need(prefix)?;
        match b.kind {
            BlobKind::Tt => Ok(LinearMap::Tt(b.as_tt()?)),
            _ => {
                let weight = b.as_dense()?;
                let bias = self
                    .get(&format!("{prefix}.bias"))
                    .map(|b| b.as_vector().map(Array1::from))
                    .transpose()?;
                if bias.as_ref().is_some_and(|v| v.len() != weight.nrows()) {
                    return Err(Error::format(prefix, "bias length differs from row count"));
                }
                Ok(LinearMap::Dense { weight, bias })
            }
        }
    }
}

pub fn cell_part_names(kind: CellKind) -> (&'static [&'static str], &'static [&'static str]) {
    match kind {
        CellKind::Srnn => (&["w_xh", "w_hh"], &["b_h"]),
        CellKind::Gru => (&["w_xr", "w_hr", "w_xz", "w_hz", "w_xh", "w_hh"], &["b_r", "b_z", "b_h"]),
    }
}

/// Parameter names and lengths in visit order.
pub fn param_layout<P: Parameterized>(p: &P) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    p.visit(&mut |n, v| out.push((n.to_string(), v.len())));
    out
}

pub fn decode_checkpoint(blobs: Vec<Blob>) -> Result<Checkpoint> {
    let blobs = Blobs(blobs);
    let config = TrainConfig::parse(&blobs.need("config")?.as_text()?)?;
    let config_hash = blobs.need("config_hash")?.as_text()?;
    let epoch = blobs.need("epoch")?.as_u64()?;
    let projection = if config.projection > 0 {
        Some(blobs.map("projection")?)
    } else {
        None
    };
    let (map_names, bias_names) = cell_part_names(config.cell);
    let maps = map_names
        .iter()
        .map(|n| blobs.map(&format!("cell.{n}")))
        .collect::<Result<Vec<_>>>()?;
    let biases = bias_names
        .iter()
        .map(|n| blobs.need(&format!("cell.{n}"))?.as_vector().map(Array1::from))
        .collect::<Result<Vec<_>>>()?;
    let cell = Cell::from_parts(config.cell, maps, biases).map_err(|e| Error::Compatibility(e.to_string()))?;
    let output = blobs.map("output")?;
    let model = SequenceModel::new(crate::train::task_of(&config), projection, cell, output)
        .map_err(|e| Error::Compatibility(e.to_string()))?;

    let expected = crate::train::build_model(&config)?;
    if param_layout(&model) != param_layout(&expected) {
        return Err(Error::Compatibility("saved tensors do not match the shapes the stored config implies".into()));
    }

    let optimizer = match blobs.get("adam.step") {
        None => None,
        Some(step) => {
            let c = blobs.need("adam.config")?.as_vector()?;
            if c.len() != 4 {
                return Err(Error::format("adam.config", "expected 4 values"));
            }
            let config = AdamConfig {
                learning_rate: c[0],
                beta1: c[1],
                beta2: c[2],
                epsilon: c[3],
            };
            let (mut first, mut second) = (Vec::new(), Vec::new());
            while let Some(m) = blobs.get(&format!("adam.m.{}", first.len())) {
                let k = first.len();
                first.push(m.as_vector()?);
                second.push(blobs.need(&format!("adam.v.{k}"))?.as_vector()?);
            }
            Some(Adam::from_state(config, step.as_u64()?, first, second)?)
        }
    };
    Ok(Checkpoint {
        config,
        config_hash,
        epoch,
        model,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let blobs = read_blobs(&mut Cursor::new(bytes)).map_err(|e| match e {
        Error::Format { location, message } => Error::Format {
            location: format!("{} ({location})", path.display()),
            message,
        },
        other => other,
    })?;
    decode_checkpoint(blobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let blobs = vec![
            Blob::text("config", "task = pianoroll\n"),
            Blob::u64("epoch", 7),
            Blob::vector("v", &[1.5, -2.0]),
            Blob::dense("w", &ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
        ];
        let mut bytes = Vec::new();
        write_blobs(&mut bytes, &blobs).unwrap();
        bytes
    }

    #[test]
    fn blobs_round_trip() {
        let blobs = read_blobs(&mut Cursor::new(sample())).unwrap();
        assert_eq!(blobs[0].as_text().unwrap(), "task = pianoroll\n");
        assert_eq!(blobs[1].as_u64().unwrap(), 7);
        assert_eq!(blobs[2].as_vector().unwrap(), vec![1.5, -2.0]);
        assert_eq!(blobs[3].as_dense().unwrap()[[1, 2]], 6.0);
        assert!(blobs[1].as_text().is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = sample();
        assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), CHECKPOINT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 6);
        assert_eq!(&bytes[28..34], b"config");
        assert_eq!(bytes[34], BlobKind::Text as u8);
    }

    #[test]
    fn damaged_containers_are_rejected() {
        let good = sample();
        let mut trailing = good.clone();
        trailing.push(0);
        let mut kind = good.clone();
        kind[34] = 9;
        let mut version = good.clone();
        version[4] = 2;
        for bad in [trailing, kind, version, good[..good.len() - 1].to_vec(), good[..3].to_vec()] {
            let err = read_blobs(&mut Cursor::new(bad)).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "{err}");
        }
    }
}
