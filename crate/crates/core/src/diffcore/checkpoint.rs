//! Little-endian binary checkpoints.
//!
//! A network record is laid out as:
//!
//! ```text
//! b"DPNT"                 magic
//! u32                     format version (1)
//! u32                     layer count L
//! u32 * (L + 1)           layer sizes, input first
//! u8  * L                 activation tags (relu=0 tanh=1 sigmoid=2 identity=3 softmax=4)
//! u64                     parameter count P
//! f64 * P                 parameters, per layer: weight row-major (fan_in, fan_out), then bias
//! ```
//!
//! Model bundles (VAE, reward model, policies) are sequences of such records
//! behind their own magic and header, written with [`CheckpointWriter`].

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Activation, NetParams, NetSpec, ParamSet};

const NET_MAGIC: &[u8; 4] = b"DPNT";
const NET_VERSION: u32 = 1;

pub struct CheckpointWriter<W: Write> {
    inner: W,
}

impl<W: Write> CheckpointWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        Ok(self.inner.write_all(magic)?)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_all(&[v])?)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        Ok(self.inner.write_all(s.as_bytes())?)
    }

    pub fn net(&mut self, net: &NetParams) -> Result<()> {
        write_net(&mut self.inner, net)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct CheckpointReader<R: Read> {
    inner: R,
}

impl<R: Read> CheckpointReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        if &buf != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return Err(Error::Checkpoint(format!("string length {n} too large")));
        }
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn net(&mut self) -> Result<NetParams> {
        read_net(&mut self.inner)
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

pub fn write_net<W: Write>(w: &mut W, net: &NetParams) -> Result<()> {
    let spec = net.spec();
    w.write_all(NET_MAGIC)?;
    w.write_all(&NET_VERSION.to_le_bytes())?;
    w.write_all(&(spec.num_layers() as u32).to_le_bytes())?;
    for &s in spec.layer_sizes() {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for a in spec.activations() {
        w.write_all(&[a.tag()])?;
    }
    let flat = net.to_flat();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R) -> Result<NetParams> {
    let mut rd = CheckpointReader::new(r);
    rd.expect_magic(NET_MAGIC)?;
    let version = rd.u32()?;
    if version != NET_VERSION {
        return Err(Error::Checkpoint(format!("unsupported network version {version}")));
    }
    let layers = rd.u32()? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
    }
    let sizes = (0..=layers)
        .map(|_| rd.u32().map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let acts = (0..layers)
        .map(|_| {
            let tag = rd.u8()?;
            Activation::from_tag(tag)
                .ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {tag}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = NetSpec::new(sizes, acts).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = rd.u64()? as usize;
    if count != spec.num_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match spec ({})",
            spec.num_params()
        )));
    }
    let flat = (0..count).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    let mut net = NetParams::zeros(spec);
    net.read_flat(&flat);
    Ok(net)
}
