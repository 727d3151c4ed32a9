//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "SCVIHMM\0"
//! version      u32
//! payload_len  u64
//! payload      payload_len bytes
//! checksum     u32      CRC-32 of the payload
//! ```
//!
//! The payload starts with the algorithm tag (u8), K and V (u64), the
//! training config as TOML text and the step counters, followed by the
//! algorithm's matrices row-major as f64 and finally the vocabulary.

use std::path::Path;

use ndarray::Array2;

use crate::corpus::Vocab;
use crate::emissions::{EmissionPrior, EmissionStats};
use crate::engine::{GlobalStats, ModelMode};
use crate::error::{Error, Result};
use crate::hdp::HdpPosterior;
use crate::special::{BetaParams, GammaParams};
use crate::svi::{DirichletRows, SviPriors};
use crate::train::{Algorithm, Checkpoint, Model, TrainConfig};

pub const MAGIC: &[u8; 8] = b"SCVIHMM\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

fn tag(algorithm: Algorithm) -> u8 {
    match algorithm {
        Algorithm::ScviHmm => 0,
        Algorithm::ScviHdpHmm => 1,
        Algorithm::SviHmm => 2,
    }
}

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn floats<'a>(&mut self, xs: impl IntoIterator<Item = &'a f64>) {
        for &x in xs {
            self.f64(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed("payload ends early".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Malformed("dimension overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("matrix too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let data = self.floats(rows * cols)?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Malformed(e.to_string()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed("invalid UTF-8".into()))
    }
}

fn encode_prior(e: &mut Encoder, prior: &EmissionPrior) {
    e.floats(&prior.lambda1);
    e.f64(prior.lambda2);
}

fn decode_prior(d: &mut Decoder<'_>, v: usize) -> Result<EmissionPrior> {
    let prior = EmissionPrior {
        lambda1: d.floats(v)?,
        lambda2: d.f64()?,
    };
    prior.validate().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(prior)
}

fn gamma(d: &mut Decoder<'_>) -> Result<GammaParams> {
    let (a, b) = (d.f64()?, d.f64()?);
    GammaParams::new(a, b).map_err(|e| Error::Malformed(e.to_string()))
}

/// Serializes a checkpoint to bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ck.model;
    let (k, v) = (model.states(), model.vocab_size());
    if ck.vocab.len() != v {
        return Err(Error::VocabMismatch {
            model: v,
            supplied: ck.vocab.len(),
        });
    }
    let mut e = Encoder::default();
    e.u8(tag(model.algorithm()));
    e.u64(k as u64);
    e.u64(v as u64);
    e.str(&ck.config.to_toml()?);
    e.u64(ck.step);
    e.u64(ck.hdp_step);
    e.f64(ck.passes);
    e.f64(ck.seconds);
    match model {
        Model::Scvi { stats, mode, prior } => {
            encode_prior(&mut e, prior);
            e.floats(stats.trans.iter());
            e.floats(stats.emit.expected.iter());
            e.floats(stats.emit.counts.iter());
            match mode {
                ModelMode::FiniteHmm { prior_count } => e.f64(*prior_count),
                ModelMode::HdpHmm(post) => {
                    for s in post.sticks() {
                        e.f64(s.u());
                        e.f64(s.v());
                    }
                    for g in [post.alpha(), post.gamma()] {
                        e.f64(g.shape());
                        e.f64(g.rate());
                    }
                    e.floats(post.geo_alpha_pi());
                    e.u8(u8::from(post.is_pinned()));
                }
            }
        }
        Model::Svi { rows, priors } => {
            e.f64(priors.trans);
            encode_prior(&mut e, &priors.emit);
            e.floats(rows.trans_posterior.iter());
            e.floats(rows.emit_posterior.iter());
        }
    }
    e.u8(u8::from(ck.vocab.has_unk()));
    e.u64(ck.vocab.len() as u64);
    for w in ck.vocab.words() {
        e.str(w);
    }

    let payload = e.buf;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let payload_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected_len = (payload_len as u128) + HEADER_LEN as u128 + 4;
    if (bytes.len() as u128) < expected_len {
        return Err(Error::Truncated);
    }
    if (bytes.len() as u128) > expected_len {
        return Err(Error::Malformed("trailing bytes after checksum".into()));
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::Checksum);
    }

    let mut d = Decoder { buf: payload, pos: 0 };
    let algorithm = match d.u8()? {
        0 => Algorithm::ScviHmm,
        1 => Algorithm::ScviHdpHmm,
        2 => Algorithm::SviHmm,
        t => return Err(Error::Malformed(format!("unknown algorithm tag {t}"))),
    };
    let k = d.usize()?;
    let v = d.usize()?;
    if k == 0 || v == 0 {
        return Err(Error::Malformed("zero states or symbols".into()));
    }
    let config = TrainConfig::from_toml(&d.str()?).map_err(|e| Error::Malformed(e.to_string()))?;
    let step = d.u64()?;
    let hdp_step = d.u64()?;
    let passes = d.f64()?;
    let seconds = d.f64()?;
    let model = match algorithm {
        Algorithm::ScviHmm | Algorithm::ScviHdpHmm => {
            let prior = decode_prior(&mut d, v)?;
            let trans = d.matrix(k + 1, k)?;
            let expected = d.matrix(k, v)?;
            let counts = ndarray::Array1::from(d.floats(k)?);
            let mode = if algorithm == Algorithm::ScviHmm {
                ModelMode::FiniteHmm { prior_count: d.f64()? }
            } else {
                let sticks = (0..k)
                    .map(|_| {
                        let (u, v) = (d.f64()?, d.f64()?);
                        BetaParams::new(u, v).map_err(|e| Error::Malformed(e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let alpha = gamma(&mut d)?;
                let gam = gamma(&mut d)?;
                let cache = d.floats(k)?;
                let pinned = d.u8()? != 0;
                ModelMode::HdpHmm(HdpPosterior::from_raw(sticks, alpha, gam, cache, pinned)?)
            };
            Model::Scvi {
                stats: GlobalStats {
                    trans,
                    emit: EmissionStats { expected, counts },
                },
                mode,
                prior,
            }
        }
        Algorithm::SviHmm => {
            let trans_prior = d.f64()?;
            let emit = decode_prior(&mut d, v)?;
            Model::Svi {
                rows: DirichletRows {
                    trans_posterior: d.matrix(k + 1, k)?,
                    emit_posterior: d.matrix(k, v)?,
                },
                priors: SviPriors { trans: trans_prior, emit },
            }
        }
    };
    let has_unk = d.u8()? != 0;
    let n = d.usize()?;
    if n != v {
        return Err(Error::Malformed(format!("vocabulary has {n} entries, model expects {v}")));
    }
    let words = (0..n).map(|_| d.str()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::from_words(words, has_unk).map_err(|e| Error::Malformed(e.to_string()))?;
    if d.pos != payload.len() {
        return Err(Error::Malformed("unused payload bytes".into()));
    }
    Ok(Checkpoint {
        config,
        model,
        step,
        hdp_step,
        passes,
        seconds,
        vocab,
    })
}

pub fn save_model(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
