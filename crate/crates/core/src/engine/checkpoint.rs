//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "EDIV"
//! version 1 byte   currently 1
//! layers  u32 count, then per layer:
//!           tag u8: 0 conv, 1 relu, 2 maxpool2x2, 3 global-avg-pool, 4 linear
//!           conv:   name (u16 len + utf8), in u32, out u32, kernel u32, pad u32
//!           linear: name (u16 len + utf8), in u32, out u32
//! input channels u32
//! params  u32 count, then per tensor:
//!           name, ndim u32, dims u32..., values f64 LE
//! masks   u32 count, then per mask:
//!           name, ndim u32, dims u32..., bits packed LSB-first, ceil(n/8) bytes
//! ```
//!
//! Round trips are bit-exact: floats are stored as raw IEEE-754 bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::net::{Layer, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EDIV";
const VERSION: u8 = 1;

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let bytes = to_bytes(net);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);

    write_u32(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Conv2d { name, in_channels, out_channels, kernel, padding } => {
                out.push(0);
                write_str(&mut out, name);
                write_u32(&mut out, *in_channels as u32);
                write_u32(&mut out, *out_channels as u32);
                write_u32(&mut out, *kernel as u32);
                write_u32(&mut out, *padding as u32);
            }
            Layer::Relu => out.push(1),
            Layer::MaxPool2x2 => out.push(2),
            Layer::GlobalAvgPool => out.push(3),
            Layer::Linear { name, in_features, out_features } => {
                out.push(4);
                write_str(&mut out, name);
                write_u32(&mut out, *in_features as u32);
                write_u32(&mut out, *out_features as u32);
            }
        }
    }
    write_u32(&mut out, net.input_channels() as u32);

    write_u32(&mut out, net.params().len() as u32);
    for (name, t) in net.params() {
        write_str(&mut out, name);
        write_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            write_u32(&mut out, d as u32);
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    write_u32(&mut out, net.masks().len() as u32);
    for (name, m) in net.masks() {
        write_str(&mut out, name);
        write_u32(&mut out, m.shape().len() as u32);
        for &d in m.shape() {
            write_u32(&mut out, d as u32);
        }
        let mut byte = 0u8;
        for (i, &v) in m.data().iter().enumerate() {
            if v != 0.0 {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                out.push(byte);
                byte = 0;
            }
        }
        if m.len() % 8 != 0 {
            out.push(byte);
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected \"EDIV\"")));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }

    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u8()?;
        layers.push(match tag {
            0 => Layer::Conv2d {
                name: r.string()?,
                in_channels: r.u32()? as usize,
                out_channels: r.u32()? as usize,
                kernel: r.u32()? as usize,
                padding: r.u32()? as usize,
            },
            1 => Layer::Relu,
            2 => Layer::MaxPool2x2,
            3 => Layer::GlobalAvgPool,
            4 => Layer::Linear {
                name: r.string()?,
                in_features: r.u32()? as usize,
                out_features: r.u32()? as usize,
            },
            other => return Err(Error::Checkpoint(format!("unknown layer tag {other}"))),
        });
    }
    let input_channels = r.u32()? as usize;

    let param_count = r.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..param_count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }

    let mask_count = r.u32()? as usize;
    let mut masks = BTreeMap::new();
    for _ in 0..mask_count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.div_ceil(8))?;
        let data: Vec<f64> = (0..numel)
            .map(|i| if raw[i / 8] >> (i % 8) & 1 == 1 { 1.0 } else { 0.0 })
            .collect();
        masks.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Network::from_parts(layers, params, masks, input_channels)
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
    }

    #[allow(dead_code)]
    fn read_to_end(&mut self, _r: &mut dyn Read) {}
}
