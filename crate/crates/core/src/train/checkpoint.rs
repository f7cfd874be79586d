//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MWC1"  u32 version  u32 record_count
//! record* : u32 name_len, name, u8 tag, u32 ndim, u64 dim*, u64 payload_len, payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Tag 0 is an opaque byte payload, tag 1 a little-endian `f32` array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::layers::AdamState;
use crate::model::{build, ModelGraph, MwcnnConfig};
use crate::tensor::{Rng, RngState};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MWC1";
pub const VERSION: u32 = 1;
const TAG_BYTES: u8 = 0;
const TAG_F32: u8 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelGraph<f32>,
    pub adam: AdamState<f32>,
    pub train: TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub rng: RngState,
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn record(&mut self, name: &str, tag: u8, dims: &[usize], payload: &[u8]) {
        self.buf
            .extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(tag);
        self.buf
            .extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        self.buf
            .extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
        self.count += 1;
    }

    fn bytes(&mut self, name: &str, payload: &[u8]) {
        self.record(name, TAG_BYTES, &[], payload);
    }

    fn floats(&mut self, name: &str, dims: &[usize], data: &[f32]) {
        let payload: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.record(name, TAG_F32, dims, &payload);
    }
}

fn trainable_names(model: &ModelGraph<f32>) -> Vec<(String, Vec<usize>)> {
    model
        .state_buffers()
        .into_iter()
        .filter(|(n, _, _)| !n.contains(".running_"))
        .map(|(n, s, _)| (n, s))
        .collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::new(),
        count: 0,
    };
    let run = RunConfig {
        model: ck.model.config().clone(),
        train: ck.train.clone(),
    };
    w.bytes("config", run.to_text().as_bytes());
    w.bytes("state.epoch", &ck.epoch.to_le_bytes());
    w.bytes("state.step", &ck.step.to_le_bytes());
    let mut rng = ck.rng.seed.to_vec();
    rng.extend_from_slice(&ck.rng.stream.to_le_bytes());
    rng.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    w.bytes("state.rng", &rng);
    for (name, shape, data) in ck.model.state_buffers() {
        w.floats(&name, &shape, data);
    }
    w.bytes("adam.t", &ck.adam.t.to_le_bytes());
    let hyper: Vec<u8> = [ck.adam.beta1, ck.adam.beta2, ck.adam.eps]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    w.bytes("adam.hyper", &hyper);
    for (k, (name, shape)) in trainable_names(&ck.model).iter().enumerate() {
        w.floats(&format!("adam.m.{name}"), shape, &ck.adam.m[k]);
        w.floats(&format!("adam.v.{name}"), shape, &ck.adam.v[k]);
    }

    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&w.count.to_le_bytes());
    out.extend_from_slice(&w.buf);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Record<'a> {
    tag: u8,
    dims: Vec<usize>,
    payload: &'a [u8],
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("length overflows usize".into()))
    }
}

fn fixed<const N: usize>(rec: &Record<'_>, name: &str) -> Result<[u8; N]> {
    rec.payload.try_into().map_err(|_| {
        Error::Corrupt(format!(
            "{name}: expected {N} bytes, got {}",
            rec.payload.len()
        ))
    })
}

fn floats_into(rec: &Record<'_>, name: &str, shape: &[usize], dst: &mut [f32]) -> Result<()> {
    if rec.tag != TAG_F32 || rec.dims != shape || rec.payload.len() != 4 * dst.len() {
        return Err(Error::Incompatible(format!(
            "{name}: stored {:?} does not match expected {shape:?}",
            rec.dims
        )));
    }
    for (d, chunk) in dst.iter_mut().zip(rec.payload.chunks_exact(4)) {
        *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!(
            "{} bytes is too short",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Incompatible(format!(
            "format version {version}, this build reads {VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Corrupt("record name is not UTF-8".into()))?
            .to_owned();
        let tag = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let plen = r.len()?;
        let payload = r.take(plen)?;
        if records
            .insert(name.clone(), Record { tag, dims, payload })
            .is_some()
        {
            return Err(Error::Corrupt(format!("duplicate record {name:?}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    let mut get = |name: &str| {
        records
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("missing record {name:?}")))
    };

    let cfg_text = get("config")?;
    let cfg_text = std::str::from_utf8(cfg_text.payload)
        .map_err(|_| Error::Corrupt("config is not UTF-8".into()))?;
    let run = RunConfig::parse(cfg_text)?;
    let epoch = u64::from_le_bytes(fixed(&get("state.epoch")?, "state.epoch")?);
    let step = u64::from_le_bytes(fixed(&get("state.step")?, "state.step")?);
    let raw: [u8; 56] = fixed(&get("state.rng")?, "state.rng")?;
    let rng = RngState {
        seed: raw[..32].try_into().expect("32 bytes"),
        stream: u64::from_le_bytes(raw[32..40].try_into().expect("8 bytes")),
        word_pos: u128::from_le_bytes(raw[40..].try_into().expect("16 bytes")),
    };

    let mut model = build(&run.model, &mut Rng::new(0))?;
    let layout: Vec<(String, Vec<usize>)> = model
        .state_buffers()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    for ((name, shape), dst) in layout.iter().zip(model.state_buffers_mut()) {
        floats_into(&get(name)?, name, shape, dst)?;
    }

    let t = u64::from_le_bytes(fixed(&get("adam.t")?, "adam.t")?);
    let hyper: [u8; 24] = fixed(&get("adam.hyper")?, "adam.hyper")?;
    let h = |k: usize| f64::from_le_bytes(hyper[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let mut adam = AdamState::new(&model.param_sizes());
    adam.t = t;
    (adam.beta1, adam.beta2, adam.eps) = (h(0), h(1), h(2));
    for (k, (name, shape)) in trainable_names(&model).iter().enumerate() {
        let m_name = format!("adam.m.{name}");
        floats_into(&get(&m_name)?, &m_name, shape, &mut adam.m[k])?;
        let v_name = format!("adam.v.{name}");
        floats_into(&get(&v_name)?, &v_name, shape, &mut adam.v[k])?;
    }
    if let Some(extra) = records.keys().next() {
        return Err(Error::Corrupt(format!("unexpected record {extra:?}")));
    }
    Ok(Checkpoint {
        model,
        adam,
        train: run.train,
        epoch,
        step,
        rng,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

impl Checkpoint {
    /// Errors unless the stored architecture equals `expected`.
    pub fn ensure_compatible(&self, expected: &MwcnnConfig) -> Result<()> {
        let got = self.model.config();
        if got != expected {
            return Err(Error::Incompatible(format!(
                "checkpoint holds levels={} widths={:?} {} ({}/{}), expected levels={} widths={:?} {} ({}/{})",
                got.levels,
                got.widths,
                got.downsampler,
                got.bank,
                got.bank_expand,
                expected.levels,
                expected.widths,
                expected.downsampler,
                expected.bank,
                expected.bank_expand
            )));
        }
        Ok(())
    }
}
