//! Binary checkpoint format: magic `RFD1`, a format version, the sha-256
//! of the run configuration, the step counter, the vocabulary, and one
//! length-prefixed record per parameter (data plus both Adam moments), all
//! little-endian. Reading is strict — wrong magic, unknown version, or a
//! short file each raise their own error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{Vocab, CTX};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const MAGIC: [u8; 4] = *b"RFD1";
pub const VERSION: u32 = 1;

/// Sha-256 of a canonical configuration string. Stored on save; a loader
/// that passes its own hash gets a strict compatibility check.
pub fn config_hash(canonical: &str) -> [u8; 32] {
    Sha256::digest(canonical.as_bytes()).into()
}

/// One serialized parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// A fully parsed checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    /// Every vocabulary token in id order, special tokens first.
    pub tokens: Vec<String>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Captures the current parameters and vocabulary.
    pub fn capture(store: &ParamStore, vocab: &Vocab, step: u64, hash: [u8; 32]) -> Checkpoint {
        let tokens = (0..vocab.len()).map(|i| vocab.token(i).to_string()).collect();
        let params = store
            .ids()
            .map(|id| {
                let p = store.get(id);
                ParamRecord {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.clone(),
                    m: p.m.clone(),
                    v: p.v.clone(),
                }
            })
            .collect();
        Checkpoint { config_hash: hash, step, tokens, params }
    }

    /// Rebuilds the vocabulary, verifying the special-token prefix.
    pub fn vocab(&self) -> Result<Vocab> {
        let mut vocab = Vocab::new();
        if self.tokens.len() <= CTX {
            return Err(Error::VocabMismatch(format!(
                "checkpoint lists {} tokens, fewer than the special set",
                self.tokens.len()
            )));
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if i <= CTX {
                if vocab.token(i) != tok {
                    return Err(Error::VocabMismatch(format!(
                        "special token {i} is {tok:?}, expected {:?}",
                        vocab.token(i)
                    )));
                }
                continue;
            }
            let id = vocab.add_or_get(tok);
            if id != i {
                return Err(Error::VocabMismatch(format!("duplicate token {tok:?} at id {i}")));
            }
        }
        Ok(vocab)
    }

    /// Writes every record into a store whose registered parameters must
    /// match by name and shape, in order.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, the model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, rec) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            let p = store.get_mut(id);
            if p.name != rec.name || p.shape != rec.shape {
                return Err(Error::invalid(format!(
                    "checkpoint parameter {:?} {:?} does not match model parameter {:?} {:?}",
                    rec.name, rec.shape, p.name, p.shape
                )));
            }
            p.data.copy_from_slice(&rec.data);
            p.m.copy_from_slice(&rec.m);
            p.v.copy_from_slice(&rec.v);
        }
        Ok(())
    }

    /// Strict hash comparison for loaders that know their configuration.
    pub fn check_hash(&self, expected: [u8; 32]) -> Result<()> {
        if self.config_hash == expected {
            Ok(())
        } else {
            Err(Error::CkptHashMismatch)
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&self.step.to_le_bytes())?;
        write_u32(w, self.tokens.len())?;
        for tok in &self.tokens {
            write_str(w, tok)?;
        }
        write_u32(w, self.params.len())?;
        for p in &self.params {
            write_str(w, &p.name)?;
            write_u32(w, p.shape.len())?;
            for &d in &p.shape {
                write_u32(w, d)?;
            }
            for vals in [&p.data, &p.m, &p.v] {
                for &x in vals.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::CkptMagic);
        }
        let mut version_bytes = [0u8; 4];
        read_exact(r, &mut version_bytes)?;
        let version = u32::from_le_bytes(version_bytes);
        if version != VERSION {
            return Err(Error::CkptVersion { found: version, expected: VERSION });
        }
        let mut config_hash = [0u8; 32];
        read_exact(r, &mut config_hash)?;
        let mut step_bytes = [0u8; 8];
        read_exact(r, &mut step_bytes)?;
        let step = u64::from_le_bytes(step_bytes);

        // Counts come from the wire; capacity hints are capped so a corrupt
        // header cannot demand the allocation up front (reads fail first).
        let n_tokens = read_u32(r)?;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 16));
        for _ in 0..n_tokens {
            tokens.push(read_str(r)?);
        }

        let n_params = read_u32(r)?;
        let mut params = Vec::with_capacity(n_params.min(1 << 12));
        for _ in 0..n_params {
            let name = read_str(r)?;
            let ndim = read_u32(r)?;
            if ndim > 8 {
                return Err(Error::invalid(format!("parameter {name:?} claims {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(r)?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(
                || Error::invalid(format!("parameter {name:?} shape {shape:?} overflows")),
            )?;
            let mut bufs = [Vec::new(), Vec::new(), Vec::new()];
            for buf in &mut bufs {
                buf.reserve(n.min(1 << 20));
                let mut bytes = [0u8; 8];
                for _ in 0..n {
                    read_exact(r, &mut bytes)?;
                    buf.push(f64::from_le_bytes(bytes));
                }
            }
            let [data, m, v] = bufs;
            params.push(ParamRecord { name, shape, data, m, v });
        }
        Ok(Checkpoint { config_hash, step, tokens, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let ckpt = Checkpoint::read_from(&mut r)?;
        // Trailing garbage means the file is not what the writer produced.
        let mut probe = [0u8; 1];
        match r.read(&mut probe)? {
            0 => Ok(ckpt),
            _ => Err(Error::invalid("checkpoint has trailing bytes")),
        }
    }
}

fn write_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::invalid(format!("{n} exceeds u32 range")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CkptTruncated
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut bytes = [0u8; 4];
    read_exact(r, &mut bytes)?;
    Ok(u32::from_le_bytes(bytes) as usize)
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)?;
    if len > 1 << 20 {
        return Err(Error::invalid(format!("checkpoint string of {len} bytes")));
    }
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes)?;
    String::from_utf8(bytes).map_err(|_| Error::invalid("checkpoint string is not utf-8"))
}
