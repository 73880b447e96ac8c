//! Binary checkpoints. Little-endian throughout:
//!
//! ```text
//! magic "LRNRCKPT" | version u32 | flags u32 (bit0 learners, bit1 adapters)
//! config: num_layers, d_model, num_heads, d_ffn, vocab_size, max_seq_len,
//!         num_labels as u64, task_kind u8
//! strategy: len u32 + TOML text (len 0 when unset)
//! base params: count u64, records
//! [learners: count u64, each layer u64, site u8, rank u64, record p1, record p2]
//! [adapters: count u64, each layer u64, slot u8, hidden u64, scale f64, 4 records]
//! record: name_len u32, name, rows u64, cols u64, rows·cols f64
//! ```
//!
//! A collapsed (baseline) checkpoint has flags 0 and no optional sections.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learner::{attach, LearnerInit};
use crate::model::{Model, ModelConfig, SiteKind, TaskKind};
use crate::param::ParamId;
use crate::scalar::Scalar;
use crate::strategy::{self, inject_adapter, AdapterSlot, StrategySpec};
use crate::tensor::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"LRNRCKPT";
pub const VERSION: u32 = 1;
pub const FLAG_LEARNERS: u32 = 1;
pub const FLAG_ADAPTERS: u32 = 2;

/// Serializes a materialized model.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    if !model.params().is_materialized() {
        return Err(Error::Usage("cannot checkpoint a shape-only model".into()));
    }
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let mut flags = 0;
    if model.has_learners() {
        flags |= FLAG_LEARNERS;
    }
    if model.has_adapters() {
        flags |= FLAG_ADAPTERS;
    }
    w.u32(flags);

    let c = model.config();
    for v in [
        c.num_layers,
        c.d_model,
        c.num_heads,
        c.d_ffn,
        c.vocab_size,
        c.max_seq_len,
        c.num_labels,
    ] {
        w.u64(v as u64);
    }
    w.u8(match c.task_kind {
        TaskKind::Classification => 0,
        TaskKind::Regression => 1,
    });
    let strategy = match model.strategy() {
        Some(s) => toml::to_string(s).map_err(|e| Error::Input(format!("strategy encoding: {e}")))?,
        None => String::new(),
    };
    w.u32(strategy.len() as u32);
    w.bytes(strategy.as_bytes());

    let params = model.params();
    let base = model.base_param_len();
    w.u64(base as u64);
    for (id, _) in params.iter().take(base) {
        w.record(model, id);
    }

    if flags & FLAG_LEARNERS != 0 {
        let learners: Vec<_> = model.linears().filter_map(|l| l.learner.clone()).collect();
        w.u64(learners.len() as u64);
        for m in learners {
            w.u64(m.site.layer_index as u64);
            w.u8(m.site.kind.code());
            w.u64(m.rank as u64);
            w.record(model, m.p1);
            w.record(model, m.p2);
        }
    }
    if flags & FLAG_ADAPTERS != 0 {
        let adapters: Vec<_> = model.blocks().iter().flat_map(|b| b.adapters.iter()).collect();
        w.u64(adapters.len() as u64);
        for a in adapters {
            w.u64(a.layer_index as u64);
            w.u8(a.slot.code());
            w.u64(a.hidden as u64);
            w.f64(a.scale);
            for id in a.param_ids() {
                w.record(model, id);
            }
        }
    }
    Ok(w.buf)
}

/// Parses a checkpoint. Any structural mismatch is a format error carrying
/// the byte offset at which it was detected.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(r.error_at(0, "bad magic"));
    }
    let at = r.pos;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error_at(at, &format!("unsupported version {version}")));
    }
    let at = r.pos;
    let flags = r.u32()?;
    if flags & !(FLAG_LEARNERS | FLAG_ADAPTERS) != 0 {
        return Err(r.error_at(at, &format!("unknown flags {flags:#x}")));
    }

    let at = r.pos;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let task_at = r.pos;
    let task_kind = match r.u8()? {
        0 => TaskKind::Classification,
        1 => TaskKind::Regression,
        other => return Err(r.error_at(task_at, &format!("unknown task kind {other}"))),
    };
    let config = ModelConfig {
        num_layers: dims[0],
        d_model: dims[1],
        num_heads: dims[2],
        d_ffn: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        num_labels: dims[6],
        task_kind,
    };
    config.validate().map_err(|e| r.error_at(at, &e.to_string()))?;

    let at = r.pos;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.error_at(at, "strategy is not UTF-8"))?;
    let strategy: Option<StrategySpec> = if text.is_empty() {
        None
    } else {
        Some(toml::from_str(text).map_err(|e| r.error_at(at, &format!("strategy: {e}")))?)
    };

    let mut model = Model::<T>::build(config, 0)?;
    let at = r.pos;
    let base = r.usize()?;
    if base != model.base_param_len() {
        return Err(r.error_at(at, &format!("{base} base parameters, expected {}", model.base_param_len())));
    }
    let ids: Vec<ParamId> = model.params().iter().take(base).map(|(id, _)| id).collect();
    for id in ids {
        r.record_into(&mut model, id)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    if flags & FLAG_LEARNERS != 0 {
        let count = r.usize()?;
        for _ in 0..count {
            let at = r.pos;
            let layer = r.usize()?;
            let code = r.u8()?;
            let rank = r.usize()?;
            let kind = SiteKind::from_code(code).ok_or_else(|| r.error_at(at, &format!("unknown site code {code}")))?;
            let site = model
                .enumerate_linears()
                .into_iter()
                .find(|s| s.layer_index == layer && s.kind == kind)
                .ok_or_else(|| r.error_at(at, &format!("no site {kind:?} in layer {layer}")))?;
            let m = attach(&mut model, &site, rank, LearnerInit::Zero, &mut rng).map_err(|e| r.error_at(at, &e.to_string()))?;
            r.record_into(&mut model, m.p1)?;
            r.record_into(&mut model, m.p2)?;
        }
    }
    if flags & FLAG_ADAPTERS != 0 {
        let count = r.usize()?;
        for _ in 0..count {
            let at = r.pos;
            let layer = r.usize()?;
            let code = r.u8()?;
            let hidden = r.usize()?;
            let scale = r.f64()?;
            let slot = AdapterSlot::from_code(code).ok_or_else(|| r.error_at(at, &format!("unknown adapter slot {code}")))?;
            if hidden == 0 {
                return Err(r.error_at(at, "adapter hidden size 0"));
            }
            let a = inject_adapter(&mut model, layer, slot, hidden, scale, &mut rng).map_err(|e| r.error_at(at, &e.to_string()))?;
            for id in a.param_ids() {
                r.record_into(&mut model, id)?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(r.error_at(r.pos, &format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    // Phase is not stored: a restored strategy gets its post-priming mask.
    model.strategy = strategy;
    if model.strategy.is_some() {
        strategy::set_mask(&mut model, false);
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn record<T: Scalar>(&mut self, model: &Model<T>, id: ParamId) {
        let p = model.params().get(id);
        self.u32(p.name.len() as u32);
        self.bytes(p.name.as_bytes());
        let (rows, cols) = p.shape();
        self.u64(rows as u64);
        self.u64(cols as u64);
        for v in p.value.data() {
            self.f64(v.to_f64_lossy());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: &str) -> Error {
        Error::Format {
            offset: offset as u64,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.error_at(self.pos, &format!("truncated: need {n} bytes")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.error_at(at, "size does not fit in usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Reads one record and stores it into `id`, checking name and shape.
    fn record_into<T: Scalar>(&mut self, model: &mut Model<T>, id: ParamId) -> Result<()> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?).map_err(|_| self.error_at(at, "name is not UTF-8"))?;
        let expected = model.params().get(id);
        if name != expected.name {
            return Err(self.error_at(at, &format!("found parameter {name:?}, expected {:?}", expected.name)));
        }
        let shape_at = self.pos;
        let rows = self.usize()?;
        let cols = self.usize()?;
        if (rows, cols) != expected.shape() {
            return Err(self.error_at(
                shape_at,
                &format!("{name}: shape ({rows}, {cols}), expected {:?}", expected.shape()),
            ));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| self.error_at(shape_at, "shape overflows"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.error_at(shape_at, "shape overflows"))?)?;
        let data: Vec<T> = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect();
        model.params_mut().set_value(id, DenseMatrix::from_vec(rows, cols, data)?)
    }
}
