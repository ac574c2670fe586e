//! Self-describing binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "JPTDPCKP" | u32 version
//! hyperparameters (fixed field order)
//! vocabularies: words, chars, tags, rels as u32 count + (u32 len, UTF-8 bytes)*
//! word frequencies: u32 count + u64*
//! f64 best dev mixed accuracy | u32 epoch of best
//! u32 tensor count + (name, u8 rank, u32 dims*, f64 values*)*
//! SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{Adam, Tensor};
use crate::error::{Error, Result};
use crate::layers::{Lexicon, Vocab};
use crate::model::{seeded_rng, ArcLoss, Hyperparams, ModelParams};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"JPTDPCKP";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelParams,
    pub best_dev_mixed: f64,
    /// 1-based epoch whose parameters were kept.
    pub epoch_of_best: u32,
}

impl Checkpoint {
    pub fn new(model: ModelParams, best_dev_mixed: f64, epoch_of_best: u32) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model,
            best_dev_mixed,
            epoch_of_best,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(self.format_version);
        write_hyper(&mut w, &self.model.hyper);
        let vocab = &self.model.vocab;
        for lex in [&vocab.words, &vocab.chars, &vocab.tags, &vocab.rels] {
            w.u32(lex.len() as u32);
            for item in lex.items() {
                w.str(item);
            }
        }
        w.u32(vocab.word_freq.len() as u32);
        for &f in &vocab.word_freq {
            w.u64(f);
        }
        w.f64(self.best_dev_mixed);
        w.u32(self.epoch_of_best);
        let store = &self.model.store;
        w.u32(store.len() as u32);
        for (_, p) in store.iter() {
            w.str(&p.name);
            w.buf.push(p.value.shape().len() as u8);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            for &v in p.value.data() {
                w.f64(v);
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 12 + DIGEST_LEN {
            return Err(Error::Integrity("file is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity(
                "checksum mismatch (truncated or corrupted file)".into(),
            ));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hyper = read_hyper(&mut r)?;
        let mut lexicons = Vec::with_capacity(4);
        for _ in 0..4 {
            let count = r.u32()? as usize;
            let items = (0..count).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
            lexicons.push(Lexicon::from_items(items).map_err(|e| Error::Integrity(e.to_string()))?);
        }
        let freq_len = r.u32()? as usize;
        let word_freq = (0..freq_len).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let rels = lexicons.pop().unwrap();
        let tags = lexicons.pop().unwrap();
        let chars = lexicons.pop().unwrap();
        let words = lexicons.pop().unwrap();
        if word_freq.len() != words.len() {
            return Err(Error::Integrity(
                "word frequency table does not match vocabulary".into(),
            ));
        }
        let vocab = Vocab {
            words,
            chars,
            tags,
            rels,
            word_freq,
        };
        let best_dev_mixed = r.f64()?;
        let epoch_of_best = r.u32()?;

        // Structure is rebuilt from the hyperparameters; every value is then overwritten.
        let mut model = ModelParams::new(hyper, vocab, &mut seeded_rng(0))?;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {count} tensors, model expects {}",
                model.store.len()
            )));
        }
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Integrity(e.to_string()))?;
            model.load_tensor(&name, tensor)?;
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after tensor records".into()));
        }
        Ok(Checkpoint {
            format_version: version,
            model,
            best_dev_mixed,
            epoch_of_best,
        })
    }
}

pub fn serialize(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn deserialize(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn write_hyper(w: &mut Writer, h: &Hyperparams) {
    for v in [
        h.char_dim,
        h.char_hidden,
        h.word_dim,
        h.ctx_state_dim,
        h.ctx_layers,
        h.mlp_hidden,
        h.epochs,
    ] {
        w.u64(v as u64);
    }
    for v in [h.word_dropout_alpha, h.noise_sigma, h.margin] {
        w.f64(v);
    }
    w.u64(h.seed);
    w.buf.push(h.use_chars as u8);
    w.buf.push(h.multi_root as u8);
    w.buf.push(match h.arc_loss {
        ArcLoss::PerPosition => 0,
        ArcLoss::Global => 1,
    });
    for v in [h.adam.lr, h.adam.beta1, h.adam.beta2, h.adam.eps] {
        w.f64(v);
    }
}

fn read_hyper(r: &mut Reader) -> Result<Hyperparams> {
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.u64()? as usize;
    }
    let word_dropout_alpha = r.f64()?;
    let noise_sigma = r.f64()?;
    let margin = r.f64()?;
    let seed = r.u64()?;
    let use_chars = r.flag()?;
    let multi_root = r.flag()?;
    let arc_loss = match r.u8()? {
        0 => ArcLoss::PerPosition,
        1 => ArcLoss::Global,
        other => return Err(Error::Integrity(format!("unknown arc loss form {other}"))),
    };
    let adam = Adam {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let [char_dim, char_hidden, word_dim, ctx_state_dim, ctx_layers, mlp_hidden, epochs] = dims;
    Ok(Hyperparams {
        char_dim,
        char_hidden,
        word_dim,
        ctx_state_dim,
        ctx_layers,
        mlp_hidden,
        word_dropout_alpha,
        noise_sigma,
        margin,
        epochs,
        seed,
        use_chars,
        multi_root,
        arc_loss,
        adam,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
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
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("unexpected end of checkpoint data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Integrity(format!("invalid flag byte {other}"))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Integrity("invalid UTF-8 in checkpoint".into()))
    }
}
