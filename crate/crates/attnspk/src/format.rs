//! Little-endian binary containers for frames, weights, posteriors and models.
//!
//! Frame-like data (`AFS1`, `VPS1`, `FWT1`, `EMB1`) is stored as `f32`; the
//! statistical models (`GMM1`, `STA1`, `TVM1`, `PLD1`, `PRE1`) keep `f64`.

use std::fs;
use std::path::Path;

use attnspk_core::backend::{PldaModel, Preprocessor};
use attnspk_core::embednet::{
    AttentionParams, DenseLayer, EmbedNetParams, FrameWeights, NormStats, TdnnLayer,
};
use attnspk_core::features::{AcousticFrameSequence, VoicePosteriorSequence};
use attnspk_core::ivector::{SufficientStats, TotalVariabilityModel};
use attnspk_core::linalg::Matrix;
use attnspk_core::ubm::DiagGmm;

use crate::error::{Error, Result};

pub const EMB_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: &'static str, found: String },
    #[error("truncated input")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] attnspk_core::Error),
}

pub type FResult<T> = std::result::Result<T, FormatError>;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i32(&mut self, v: isize) {
        let v = i32::try_from(v).expect("offset fits in i32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn f32s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }

    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &'static str) -> FResult<Self> {
        if buf.len() < 4 || &buf[..4] != magic.as_bytes() {
            let found = String::from_utf8_lossy(&buf[..buf.len().min(4)]).into_owned();
            return Err(FormatError::Magic { expected: magic, found });
        }
        Ok(Self { buf: &buf[4..] })
    }

    fn take(&mut self, n: usize) -> FResult<&'a [u8]> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> FResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn i32(&mut self) -> FResult<isize> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()) as isize)
    }

    fn u8(&mut self) -> FResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> FResult<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn f32s(&mut self, n: usize) -> FResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn f64s(&mut self, n: usize) -> FResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix32(&mut self, rows: usize, cols: usize) -> FResult<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.f32s(rows * cols)?)?)
    }

    fn matrix64(&mut self, rows: usize, cols: usize) -> FResult<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.f64s(rows * cols)?)?)
    }

    fn finish(self) -> FResult<()> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

// ---- AFS1 / VPS1 / FWT1 ----

pub fn encode_frames(seq: &AcousticFrameSequence) -> Vec<u8> {
    let mut w = Writer::new(b"AFS1");
    w.u32(seq.len());
    w.u32(seq.dim());
    w.f32s(&[seq.frame_period()]);
    w.f32s(seq.frames().as_slice());
    w.buf
}

pub fn decode_frames(buf: &[u8]) -> FResult<AcousticFrameSequence> {
    let mut r = Reader::new(buf, "AFS1")?;
    let (l, d) = (r.u32()?, r.u32()?);
    let period = r.f32()?;
    let frames = r.matrix32(l, d)?;
    r.finish()?;
    Ok(AcousticFrameSequence::new(frames, period)?)
}

pub fn encode_posteriors(q: &VoicePosteriorSequence, frame_period: f64) -> Vec<u8> {
    let mut w = Writer::new(b"VPS1");
    w.u32(q.values().len());
    w.u32(1);
    w.f32s(&[frame_period]);
    w.f32s(q.values());
    w.buf
}

pub fn decode_posteriors(buf: &[u8]) -> FResult<VoicePosteriorSequence> {
    let mut r = Reader::new(buf, "VPS1")?;
    let (l, d) = (r.u32()?, r.u32()?);
    if d != 1 {
        return Err(FormatError::Invalid(format!("posterior file has D = {d}, expected 1")));
    }
    r.f32()?;
    let q = r.f32s(l)?;
    r.finish()?;
    Ok(VoicePosteriorSequence::new(q)?)
}

pub fn encode_weights(w: &FrameWeights) -> Vec<u8> {
    let mut out = Writer::new(b"FWT1");
    out.u32(w.len());
    out.f32s(w.values());
    out.buf
}

/// Weights are renormalized after the `f32` round trip.
pub fn decode_weights(buf: &[u8]) -> FResult<FrameWeights> {
    let mut r = Reader::new(buf, "FWT1")?;
    let l = r.u32()?;
    let raw = r.f32s(l)?;
    r.finish()?;
    Ok(FrameWeights::normalized(raw)?)
}

/// Vectors as an `L = n` frame file, one row per vector.
pub fn encode_vectors(vectors: &[Vec<f64>]) -> Vec<u8> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut w = Writer::new(b"AFS1");
    w.u32(vectors.len());
    w.u32(dim);
    w.f32s(&[0.0]);
    for v in vectors {
        w.f32s(v);
    }
    w.buf
}

pub fn decode_vectors(buf: &[u8]) -> FResult<Vec<Vec<f64>>> {
    let mut r = Reader::new(buf, "AFS1")?;
    let (n, d) = (r.u32()?, r.u32()?);
    r.f32()?;
    let flat = r.f32s(n * d)?;
    r.finish()?;
    Ok(if d == 0 { vec![Vec::new(); n] } else { flat.chunks_exact(d).map(<[f64]>::to_vec).collect() })
}

// ---- EMB1 ----

fn put_norm(w: &mut Writer, n: &NormStats) {
    w.f32s(&n.mean);
    w.f32s(&n.var);
}

fn get_norm(r: &mut Reader<'_>, dim: usize) -> FResult<NormStats> {
    Ok(NormStats { mean: r.f32s(dim)?, var: r.f32s(dim)? })
}

fn put_dense(w: &mut Writer, d: &DenseLayer) {
    w.f32s(d.weight.as_slice());
    w.f32s(&d.bias);
}

fn get_dense(r: &mut Reader<'_>, out: usize, inp: usize) -> FResult<DenseLayer> {
    Ok(DenseLayer { weight: r.matrix32(out, inp)?, bias: r.f32s(out)? })
}

/// Header, layer-shape table, then `f32` tensors with their normalization statistics.
pub fn encode_embed_net(p: &EmbedNetParams) -> Vec<u8> {
    let mut w = Writer::new(b"EMB1");
    w.u32(EMB_VERSION as usize);
    w.u8(p.is_attentive() as u8);
    w.u32(p.input_dim());
    w.u32(p.tdnn.len());
    for l in &p.tdnn {
        w.u32(l.offsets.len());
        for &o in &l.offsets {
            w.i32(o);
        }
        w.u32(l.output_dim());
    }
    w.u32(p.attention.as_ref().map_or(0, AttentionParams::hidden_dim));
    w.u32(p.embed_dim());
    w.u32(p.hidden.weight.rows());
    w.u32(p.num_speakers());
    for l in &p.tdnn {
        w.f32s(l.weight.as_slice());
        w.f32s(&l.bias);
        put_norm(&mut w, &l.norm);
    }
    if let Some(a) = &p.attention {
        w.f32s(a.w.as_slice());
        w.f32s(&a.b);
        w.f32s(&a.v);
        w.f32s(&[a.k]);
        put_norm(&mut w, &a.norm);
    }
    put_dense(&mut w, &p.embed);
    put_norm(&mut w, &p.embed_norm);
    put_dense(&mut w, &p.hidden);
    put_norm(&mut w, &p.hidden_norm);
    put_dense(&mut w, &p.output);
    w.buf
}

pub fn decode_embed_net(buf: &[u8]) -> FResult<EmbedNetParams> {
    let mut r = Reader::new(buf, "EMB1")?;
    let version = r.u32()? as u32;
    if version != EMB_VERSION {
        return Err(FormatError::Version(version));
    }
    let attentive = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(FormatError::Invalid(format!("attention flag {f}"))),
    };
    let input_dim = r.u32()?;
    let n_tdnn = r.u32()?;
    let mut shapes = Vec::with_capacity(n_tdnn);
    for _ in 0..n_tdnn {
        let n = r.u32()?;
        let offsets = (0..n).map(|_| r.i32()).collect::<FResult<Vec<_>>>()?;
        shapes.push((offsets, r.u32()?));
    }
    let (att_dim, embed_dim, hidden_dim, speakers) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if attentive != (att_dim > 0) {
        return Err(FormatError::Invalid("attention flag disagrees with attention width".into()));
    }
    let mut tdnn = Vec::with_capacity(n_tdnn);
    let mut din = input_dim;
    for (offsets, dout) in shapes {
        let weight = r.matrix32(dout, din * offsets.len())?;
        let bias = r.f32s(dout)?;
        let norm = get_norm(&mut r, dout)?;
        tdnn.push(TdnnLayer { offsets, weight, bias, norm });
        din = dout;
    }
    let attention = if attentive {
        let w = r.matrix32(att_dim, din)?;
        let b = r.f32s(att_dim)?;
        let v = r.f32s(att_dim)?;
        let k = r.f32()?;
        let norm = get_norm(&mut r, att_dim)?;
        Some(AttentionParams { w, b, v, k, norm })
    } else {
        None
    };
    let embed = get_dense(&mut r, embed_dim, 2 * din)?;
    let embed_norm = get_norm(&mut r, embed_dim)?;
    let hidden = get_dense(&mut r, hidden_dim, embed_dim)?;
    let hidden_norm = get_norm(&mut r, hidden_dim)?;
    let output = get_dense(&mut r, speakers, hidden_dim)?;
    r.finish()?;
    Ok(EmbedNetParams { tdnn, attention, embed, embed_norm, hidden, hidden_norm, output })
}

// ---- GMM1 / STA1 / TVM1 / PLD1 / PRE1 ----

pub fn encode_gmm(g: &DiagGmm) -> Vec<u8> {
    let mut w = Writer::new(b"GMM1");
    w.u32(g.num_components());
    w.u32(g.dim());
    w.f64s(&g.weights);
    w.f64s(g.means.as_slice());
    w.f64s(g.vars.as_slice());
    w.buf
}

pub fn decode_gmm(buf: &[u8]) -> FResult<DiagGmm> {
    let mut r = Reader::new(buf, "GMM1")?;
    let (c, d) = (r.u32()?, r.u32()?);
    let weights = r.f64s(c)?;
    let means = r.matrix64(c, d)?;
    let vars = r.matrix64(c, d)?;
    r.finish()?;
    Ok(DiagGmm::new(weights, means, vars)?)
}

pub fn encode_stats(s: &SufficientStats) -> Vec<u8> {
    let mut w = Writer::new(b"STA1");
    w.u32(s.num_components());
    w.u32(s.dim());
    w.f64s(&s.n);
    w.f64s(s.f.as_slice());
    w.buf
}

pub fn decode_stats(buf: &[u8]) -> FResult<SufficientStats> {
    let mut r = Reader::new(buf, "STA1")?;
    let (c, d) = (r.u32()?, r.u32()?);
    let n = r.f64s(c)?;
    let f = r.matrix64(c, d)?;
    r.finish()?;
    Ok(SufficientStats { n, f })
}

pub fn encode_tvm(t: &TotalVariabilityModel) -> Vec<u8> {
    let mut w = Writer::new(b"TVM1");
    w.u32(t.m.len());
    w.u32(t.rank());
    w.f64s(&t.m);
    w.f64s(t.t.as_slice());
    w.f64s(&t.sigma);
    w.buf
}

/// The file stores only the supervector size, so the component count comes from the UBM.
pub fn decode_tvm(buf: &[u8], components: usize) -> FResult<TotalVariabilityModel> {
    let mut r = Reader::new(buf, "TVM1")?;
    let (sv, rank) = (r.u32()?, r.u32()?);
    if components == 0 || sv % components != 0 {
        return Err(FormatError::Invalid(format!("supervector size {sv} is not a multiple of {components} components")));
    }
    let m = r.f64s(sv)?;
    let t = r.matrix64(sv, rank)?;
    let sigma = r.f64s(sv)?;
    r.finish()?;
    Ok(TotalVariabilityModel::new(components, sv / components, t, m, sigma)?)
}

pub fn encode_plda(p: &PldaModel) -> Vec<u8> {
    let mut w = Writer::new(b"PLD1");
    w.u32(p.dim());
    w.u32(p.speaker_dim());
    w.f64s(p.global_mean());
    w.f64s(p.speaker_subspace().as_slice());
    w.f64s(p.within_var().as_slice());
    w.buf
}

pub fn decode_plda(buf: &[u8]) -> FResult<PldaModel> {
    let mut r = Reader::new(buf, "PLD1")?;
    let (e, s) = (r.u32()?, r.u32()?);
    let mean = r.f64s(e)?;
    let phi = r.matrix64(e, s)?;
    let within = r.matrix64(e, e)?;
    r.finish()?;
    Ok(PldaModel::new(mean, phi, within)?)
}

pub fn encode_preprocessor(p: &Preprocessor) -> Vec<u8> {
    let mut w = Writer::new(b"PRE1");
    w.u32(p.dim());
    w.f64s(&p.mean);
    w.f64s(p.whitener.as_slice());
    w.buf
}

pub fn decode_preprocessor(buf: &[u8]) -> FResult<Preprocessor> {
    let mut r = Reader::new(buf, "PRE1")?;
    let e = r.u32()?;
    let mean = r.f64s(e)?;
    let whitener = r.matrix64(e, e)?;
    r.finish()?;
    Ok(Preprocessor { mean, whitener })
}

// ---- files ----

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file<T>(path: &Path, decode: impl FnOnce(&[u8]) -> FResult<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Format { path: path.to_path_buf(), source })
}
