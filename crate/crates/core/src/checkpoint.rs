//! Binary checkpoints: a magic tag, a format version, a JSON metadata
//! string, then named `f32` little-endian blobs each flagged trainable or
//! fixed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::encoder::{EncoderParams, PARAM_NAMES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SEMFITCK";
pub const VERSION: u32 = 1;

const MAX_NAME: u32 = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub trainable: bool,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON describing how to rebuild the model.
    pub meta: String,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Checkpoint {
            meta: meta.into(),
            blobs: Vec::new(),
        }
    }

    pub fn push<T: Copy + Into<f64>>(&mut self, name: impl Into<String>, trainable: bool, data: &[T]) {
        self.blobs.push(Blob {
            name: name.into(),
            trainable,
            data: data.iter().map(|&x| x.into() as f32).collect(),
        });
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing blob {name:?}")))
    }

    /// Total length of the trainable blobs.
    pub fn trainable_param_count(&self) -> usize {
        self.blobs.iter().filter(|b| b.trainable).map(|b| b.data.len()).sum()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u64::<LittleEndian>(self.meta.len() as u64)?;
        out.write_all(self.meta.as_bytes())?;
        out.write_u32::<LittleEndian>(self.blobs.len() as u32)?;
        for b in &self.blobs {
            out.write_u32::<LittleEndian>(b.name.len() as u32)?;
            out.write_all(b.name.as_bytes())?;
            out.write_u8(u8::from(b.trainable))?;
            out.write_u64::<LittleEndian>(b.data.len() as u64)?;
            for &x in &b.data {
                out.write_f32::<LittleEndian>(x)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = input.read_u64::<LittleEndian>()?;
        let mut meta = Vec::new();
        (&mut input).take(meta_len).read_to_end(&mut meta)?;
        if meta.len() as u64 != meta_len {
            return Err(Error::Checkpoint("truncated metadata".into()));
        }
        let meta = String::from_utf8(meta).map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let n = input.read_u32::<LittleEndian>()?;
        let mut blobs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = input.read_u32::<LittleEndian>()?;
            if len > MAX_NAME {
                return Err(Error::Checkpoint(format!("blob name of {len} bytes")));
            }
            let mut name = vec![0u8; len as usize];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
            let trainable = match input.read_u8()? {
                0 => false,
                1 => true,
                f => return Err(Error::Checkpoint(format!("bad trainable flag {f} on {name:?}"))),
            };
            let count = input.read_u64::<LittleEndian>()? as usize;
            let mut data = Vec::new();
            let mut remaining = count;
            while remaining > 0 {
                let chunk = remaining.min(1 << 20);
                let start = data.len();
                data.resize(start + chunk, 0.0f32);
                input.read_f32_into::<LittleEndian>(&mut data[start..])?;
                remaining -= chunk;
            }
            blobs.push(Blob { name, trainable, data });
        }
        Ok(Checkpoint { meta, blobs })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Adds the encoder tensors as trainable blobs named `encoder.<tensor>`.
    pub fn push_encoder(&mut self, params: &EncoderParams) {
        for (name, t) in PARAM_NAMES.iter().zip(params.tensors()) {
            self.push(format!("encoder.{name}"), true, t);
        }
    }

    /// Fills `params` (already shaped) from the `encoder.*` blobs.
    pub fn load_encoder(&self, params: &mut EncoderParams) -> Result<()> {
        for (name, t) in PARAM_NAMES.iter().zip(params.tensors_mut()) {
            let blob = self.blob(&format!("encoder.{name}"))?;
            if blob.data.len() != t.len() {
                return Err(Error::Checkpoint(format!(
                    "encoder.{name} holds {} values, model expects {}",
                    blob.data.len(),
                    t.len()
                )));
            }
            for (x, &y) in t.iter_mut().zip(&blob.data) {
                *x = y as f64;
            }
        }
        Ok(())
    }
}
