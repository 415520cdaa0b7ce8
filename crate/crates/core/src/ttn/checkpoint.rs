//! Versioned binary checkpoint: header (magic, version, topology hash, time,
//! ranks, caller tag) followed by the tensors as little-endian (re, im) pairs.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{TreeTopology, TtnState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TTNHEOM\0";
const VERSION: u32 = 1;

/// A state plus an opaque tag (the propagator uses it for its phase).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: TtnState,
    pub tag: String,
}

pub fn write_checkpoint(path: &Path, state: &TtnState, tag: &str) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&state.topo.hash());
    buf.extend_from_slice(&state.time.to_le_bytes());
    buf.extend_from_slice(&(state.ranks.len() as u64).to_le_bytes());
    for &r in &state.ranks {
        buf.extend_from_slice(&(r as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(tag.len() as u64).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for t in &state.tensors {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for z in t {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    // write then rename so a crash never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a checkpoint written for `topo`; the topology hash must match.
pub fn read_checkpoint(path: &Path, topo: Arc<TreeTopology>) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if r.take(32)? != topo.hash() {
        return Err(Error::Checkpoint("topology does not match the checkpoint".into()));
    }
    let time = r.f64()?;
    let n = r.u64()? as usize;
    if n != topo.len() {
        return Err(Error::Checkpoint("rank table has the wrong length".into()));
    }
    let ranks = (0..n).map(|_| r.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
    topo.validate_ranks(&ranks).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tl = r.u64()? as usize;
    let tag = String::from_utf8(r.take(tl)?.to_vec()).map_err(|_| Error::Checkpoint("tag is not UTF-8".into()))?;
    let mut tensors = Vec::with_capacity(n);
    for s in 0..n {
        let len = r.u64()? as usize;
        if len != topo.dims(s, &ranks).iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("tensor {s} has the wrong size")));
        }
        let mut t = Vec::with_capacity(len);
        for _ in 0..len {
            let re = r.f64()?;
            let im = r.f64()?;
            t.push(C64::new(re, im));
        }
        tensors.push(t);
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { state: TtnState { topo, ranks, tensors, time }, tag })
}
