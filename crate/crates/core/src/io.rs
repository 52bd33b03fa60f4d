//! Binary file formats. All integers and floats are little-endian; payloads
//! are `f32` except the training-state file, which keeps `f64` so a resumed
//! run continues bit for bit.
//!
//! | magic  | contents                                   |
//! |--------|--------------------------------------------|
//! | `AGEL` | latent dataset                             |
//! | `AGED` | direction dictionary (+ optional selection) |
//! | `AGEW` | synthetic world                            |
//! | `AGEE` | encoder checkpoint                         |
//! | `AGES` | full training state                        |

use std::fs;
use std::path::Path;

use crate::encoder::{EncoderParams, Mlp};
use crate::error::{AgeError, Result};
use crate::latent::{LatentCode, LatentDataset, Split};
use crate::linalg::Matrix;
use crate::trainer::{AdamState, DirectionDictionary, EpochRecord, LayerGrouping, Model, TrainState};
use crate::world::{SyntheticWorld, SyntheticWorldSpec};

pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn magic(&mut self, m: &[u8; 4]) {
        self.buf.extend_from_slice(m);
        self.u32(VERSION);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| AgeError::Format(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    fn f64s(&mut self, values: &[f64]) {
        for &v in values {
            self.f64(v);
        }
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.usize(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Self { data, pos: 0 };
        let m = r.take(4)?;
        if m != magic {
            return Err(AgeError::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(m)
            )));
        }
        let v = r.u32()?;
        if v != VERSION {
            return Err(AgeError::Format(format!("unsupported version {v}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| AgeError::Format("unexpected end of file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| AgeError::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| AgeError::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(AgeError::Format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, data).map_err(|e| AgeError::Format(e.to_string()))
}

// Column-major payload of a row-major matrix.
fn column_major(m: &Matrix) -> Vec<f64> {
    (0..m.cols()).flat_map(|j| m.column(j)).collect()
}

fn from_column_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    let columns: Vec<Vec<f64>> = data.chunks(rows.max(1)).take(cols).map(<[f64]>::to_vec).collect();
    if cols == 0 {
        return Ok(Matrix::zeros(rows, 0));
    }
    Matrix::from_columns(&columns).map_err(|e| AgeError::Format(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

// ---- AGEL ----------------------------------------------------------------

/// Serializes a dataset. The split is not stored; readers supply it.
pub fn encode_dataset(ds: &LatentDataset) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.magic(b"AGEL");
    w.usize(ds.layers())?;
    w.usize(ds.dim())?;
    w.usize(ds.categories().len())?;
    for (m, name) in ds.categories().iter().enumerate() {
        w.bytes(name.as_bytes())?;
        let idx = ds.indices_of(m);
        w.usize(idx.len())?;
        for i in idx {
            w.f32s(ds.codes()[i].as_slice());
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8], split: Split) -> Result<LatentDataset> {
    let mut r = Reader::new(bytes, b"AGEL")?;
    let (layers, dim, m) = (r.usize()?, r.usize()?, r.usize()?);
    let mut ds = LatentDataset::new(layers, dim, split);
    for _ in 0..m {
        let name = std::str::from_utf8(r.bytes()?)
            .map_err(|_| AgeError::Format("category name is not UTF-8".into()))?
            .to_string();
        ds.register_category(&name);
        let n = r.usize()?;
        for _ in 0..n {
            let code = LatentCode::new(layers, dim, r.f32s(layers * dim)?)
                .map_err(|e| AgeError::Format(e.to_string()))?;
            ds.push(&name, code)?;
        }
    }
    r.finish()?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &LatentDataset) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path, split: Split) -> Result<LatentDataset> {
    decode_dataset(&fs::read(path)?, split)
}

// ---- AGED ----------------------------------------------------------------

/// A dictionary file, optionally carrying a per-layer selection of `t` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryFile {
    pub dictionary: DirectionDictionary,
    pub selection: Option<Vec<Vec<usize>>>,
}

pub fn encode_dictionary(dict: &DirectionDictionary, selection: Option<&[Vec<usize>]>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.magic(b"AGED");
    w.usize(dict.layer_count())?;
    w.usize(dict.dim())?;
    w.usize(dict.directions())?;
    for a in dict.layers() {
        w.f32s(&column_major(a));
    }
    if let Some(sel) = selection {
        let t = sel.first().map_or(0, Vec::len);
        if sel.len() != dict.layer_count() || sel.iter().any(|s| s.len() != t) {
            return Err(AgeError::Format("selection must list t indices per layer".into()));
        }
        w.usize(t)?;
        for &i in sel.iter().flatten() {
            w.usize(i)?;
        }
    }
    Ok(w.buf)
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<DictionaryFile> {
    let mut r = Reader::new(bytes, b"AGED")?;
    let (layers, d, l) = (r.usize()?, r.usize()?, r.usize()?);
    if layers == 0 {
        return Err(AgeError::Format("dictionary has no layers".into()));
    }
    let mats = (0..layers)
        .map(|_| from_column_major(d, l, &r.f32s(d * l)?))
        .collect::<Result<Vec<_>>>()?;
    let dictionary = DirectionDictionary::new(mats).map_err(|e| AgeError::Format(e.to_string()))?;
    let selection = if r.remaining() > 0 {
        let t = r.usize()?;
        let mut sel = Vec::with_capacity(layers);
        for _ in 0..layers {
            let idx = (0..t).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if idx.iter().any(|&i| i >= l) {
                return Err(AgeError::Format("selected index out of range".into()));
            }
            sel.push(idx);
        }
        Some(sel)
    } else {
        None
    };
    r.finish()?;
    Ok(DictionaryFile { dictionary, selection })
}

pub fn write_dictionary(path: &Path, dict: &DirectionDictionary, selection: Option<&[Vec<usize>]>) -> Result<()> {
    write_file(path, &encode_dictionary(dict, selection)?)
}

pub fn read_dictionary(path: &Path) -> Result<DictionaryFile> {
    decode_dictionary(&fs::read(path)?)
}

// ---- AGEW ----------------------------------------------------------------

/// Shape ints, then the spec's seed and real parameters (`f64`), then the
/// `f32` payload: class bases, irrelevant bases, relevant bases and the
/// row-major generator.
pub fn encode_world(world: &SyntheticWorld) -> Result<Vec<u8>> {
    let s = world.spec();
    let mut w = Writer::default();
    w.magic(b"AGEW");
    for v in [
        s.layers,
        s.dim,
        s.image_dim,
        s.seen_categories,
        s.unseen_categories,
        s.irrelevant_rank,
        s.relevant_rank,
    ] {
        w.usize(v)?;
    }
    w.u64(s.seed);
    for v in [s.class_separation, s.code_sparsity, s.noise_sigma, s.seen_relevant_sigma] {
        w.f64(v);
    }
    for b in world.class_bases() {
        w.f32s(b.as_slice());
    }
    for u in world.irrelevant_bases() {
        w.f32s(&column_major(u));
    }
    for v in world.relevant_bases() {
        w.f32s(&column_major(v));
    }
    w.f32s(world.generator().as_slice());
    Ok(w.buf)
}

pub fn decode_world(bytes: &[u8]) -> Result<SyntheticWorld> {
    let mut r = Reader::new(bytes, b"AGEW")?;
    let mut ints = [0usize; 7];
    for v in &mut ints {
        *v = r.usize()?;
    }
    let [layers, dim, image_dim, seen, unseen, irr, rel] = ints;
    let seed = r.u64()?;
    let spec = SyntheticWorldSpec {
        layers,
        dim,
        image_dim,
        seen_categories: seen,
        unseen_categories: unseen,
        irrelevant_rank: irr,
        relevant_rank: rel,
        seed,
        class_separation: r.f64()?,
        code_sparsity: r.f64()?,
        noise_sigma: r.f64()?,
        seen_relevant_sigma: r.f64()?,
    };
    spec.validate().map_err(|e| AgeError::Format(e.to_string()))?;
    let bases = (0..seen + unseen)
        .map(|_| LatentCode::new(layers, dim, r.f32s(layers * dim)?).map_err(|e| AgeError::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let irrelevant = (0..layers)
        .map(|_| from_column_major(dim, irr, &r.f32s(dim * irr)?))
        .collect::<Result<Vec<_>>>()?;
    let relevant = if rel > 0 {
        (0..layers)
            .map(|_| from_column_major(dim, rel, &r.f32s(dim * rel)?))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let generator = matrix(image_dim, layers * dim, r.f32s(image_dim * layers * dim)?)?;
    r.finish()?;
    SyntheticWorld::from_parts(spec, bases, irrelevant, relevant, generator)
}

pub fn write_world(path: &Path, world: &SyntheticWorld) -> Result<()> {
    write_file(path, &encode_world(world)?)
}

pub fn read_world(path: &Path) -> Result<SyntheticWorld> {
    decode_world(&fs::read(path)?)
}

// ---- AGEE / AGES shared layout --------------------------------------------

fn write_encoder_header(w: &mut Writer, enc: &EncoderParams) -> Result<()> {
    w.usize(enc.dim)?;
    w.usize(enc.grouping.len())?;
    for r in enc.grouping.groups() {
        w.usize(r.start)?;
        w.usize(r.end)?;
    }
    w.usize(enc.hidden())?;
    w.usize(enc.directions())?;
    w.usize(enc.groups[0].layers.len())?;
    w.f64(enc.leak);
    Ok(())
}

fn read_encoder_header(r: &mut Reader<'_>) -> Result<EncoderParams> {
    let dim = r.usize()?;
    let n_groups = r.usize()?;
    let ranges = (0..n_groups)
        .map(|_| Ok(r.usize()?..r.usize()?))
        .collect::<Result<Vec<_>>>()?;
    let grouping = LayerGrouping::new(ranges).map_err(|e| AgeError::Format(e.to_string()))?;
    let (hidden, directions, depth) = (r.usize()?, r.usize()?, r.usize()?);
    if depth == 0 {
        return Err(AgeError::Format("encoder depth must be positive".into()));
    }
    let leak = r.f64()?;
    let groups = grouping
        .groups()
        .iter()
        .map(|g| {
            let mut widths = vec![g.len() * dim];
            widths.extend(std::iter::repeat_n(hidden, depth - 1));
            widths.push(directions);
            Mlp::zeros(&widths)
        })
        .collect();
    Ok(EncoderParams {
        dim,
        grouping,
        leak,
        groups,
    })
}

fn fill(slices: Vec<&mut [f64]>, mut next: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<()> {
    for s in slices {
        let v = next(s.len())?;
        s.copy_from_slice(&v);
    }
    Ok(())
}

// ---- AGEE ----------------------------------------------------------------

pub fn encode_encoder(enc: &EncoderParams) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.magic(b"AGEE");
    write_encoder_header(&mut w, enc)?;
    for s in enc.param_slices() {
        w.f32s(s);
    }
    Ok(w.buf)
}

pub fn decode_encoder(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes, b"AGEE")?;
    let mut enc = read_encoder_header(&mut r)?;
    fill(enc.param_slices_mut(), |n| r.f32s(n))?;
    r.finish()?;
    Ok(enc)
}

pub fn write_encoder(path: &Path, enc: &EncoderParams) -> Result<()> {
    write_file(path, &encode_encoder(enc)?)
}

pub fn read_encoder(path: &Path) -> Result<EncoderParams> {
    decode_encoder(&fs::read(path)?)
}

// ---- AGES ----------------------------------------------------------------

/// Dictionary shape and encoder header, then in `f64`: every model
/// parameter, both Adam moments, and the per-epoch loss records.
pub fn encode_train_state(state: &TrainState) -> Result<Vec<u8>> {
    let dict = &state.model.dictionary;
    let mut w = Writer::default();
    w.magic(b"AGES");
    w.usize(dict.layer_count())?;
    w.usize(dict.dim())?;
    w.usize(dict.directions())?;
    write_encoder_header(&mut w, &state.model.encoder)?;
    w.u64(state.adam.step);
    w.u64(state.epochs_done as u64);
    for s in state.model.param_slices() {
        w.f64s(s);
    }
    for m in state.adam.first.iter().chain(&state.adam.second) {
        w.f64s(m);
    }
    w.usize(state.records.len())?;
    for rec in &state.records {
        w.u64(rec.epoch as u64);
        w.f64s(&[rec.rec, rec.sparse, rec.orth, rec.total]);
    }
    Ok(w.buf)
}

pub fn decode_train_state(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader::new(bytes, b"AGES")?;
    let (layers, d, l) = (r.usize()?, r.usize()?, r.usize()?);
    if layers == 0 {
        return Err(AgeError::Format("dictionary has no layers".into()));
    }
    let encoder = read_encoder_header(&mut r)?;
    let dictionary = DirectionDictionary::new(vec![Matrix::zeros(d, l); layers])?;
    let mut model = Model { dictionary, encoder };
    let step = r.u64()?;
    let epochs_done = r.u64()? as usize;
    fill(model.param_slices_mut(), |n| r.f64s(n))?;
    let lengths: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::for_shapes(&lengths);
    adam.step = step;
    for m in adam.first.iter_mut().chain(adam.second.iter_mut()) {
        let v = r.f64s(m.len())?;
        m.copy_from_slice(&v);
    }
    let n = r.usize()?;
    let records = (0..n)
        .map(|_| {
            let epoch = r.u64()? as usize;
            let v = r.f64s(4)?;
            Ok(EpochRecord {
                epoch,
                rec: v[0],
                sparse: v[1],
                orth: v[2],
                total: v[3],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(TrainState {
        model,
        adam,
        epochs_done,
        records,
    })
}

pub fn write_train_state(path: &Path, state: &TrainState) -> Result<()> {
    write_file(path, &encode_train_state(state)?)
}

pub fn read_train_state(path: &Path) -> Result<TrainState> {
    decode_train_state(&fs::read(path)?)
}
