//! Binary policy checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KMYR"            4 bytes magic
//! version           u8 (= 1)
//! heads             u32
//! trunk layers      u32
//! tensors           u32   (= 2 * trunk layers + 6 * heads)
//! shape table       tensors * (rows u32, cols u32); biases have rows = 1
//! parameters        f64 each, row-major, in table order:
//!                   trunk (W, b) per layer, then per head adapter (W, b),
//!                   mean (W, b), log-std (W, b)
//! checksum          u64 FNV-1a over every preceding byte
//! ```
//!
//! Action bounds are not stored; loaded policies act in `[-1, 1]`.

use std::path::Path;

use kmyriad::envs::ACTION_DIM;
use kmyriad::policy::{HeadBlock, Linear, MultiHeadPolicy};
use kmyriad::tensor::Tensor;
use kmyriad::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KMYR";
pub const VERSION: u8 = 1;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn table_shape(t: &Tensor) -> (u32, u32) {
    match t.shape() {
        [n] => (1, *n as u32),
        [r, c] => (*r as u32, *c as u32),
        _ => unreachable!("policy parameters are vectors or matrices"),
    }
}

pub fn encode(policy: &MultiHeadPolicy) -> Vec<u8> {
    let params = policy.parameters();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(policy.head_count() as u32).to_le_bytes());
    out.extend_from_slice(&(policy.trunk().len() as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for t in &params {
        let (r, c) = table_shape(t);
        out.extend_from_slice(&r.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
    for t in &params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MultiHeadPolicy> {
    if bytes.len() < 4 + 1 + 12 + 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", bytes[4])));
    }
    let mut r = Reader { bytes, at: 5 };
    let heads = r.u32()?;
    let layers = r.u32()?;
    let count = r.u32()?;
    if heads == 0 || count != 2 * layers + 6 * heads {
        return Err(Error::Checkpoint(format!("{count} tensors do not fit {layers} trunk layers and {heads} heads")));
    }
    let shapes: Vec<(usize, usize)> = (0..count).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
    let mut expected = Some(r.at);
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        if rows == 0 || cols == 0 || (i % 2 == 1 && rows != 1) {
            return Err(Error::Checkpoint(format!("bad shape {rows}x{cols} for tensor {i}")));
        }
        expected = expected.and_then(|e| rows.checked_mul(cols)?.checked_mul(8)?.checked_add(e));
    }
    let expected = expected.and_then(|e| e.checked_add(8));
    if expected != Some(bytes.len()) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is {} bytes but its shape table needs {}",
            bytes.len(),
            expected.map_or("more".into(), |e| e.to_string())
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        // Even slots are weights, odd slots biases.
        let shape = if i % 2 == 0 { vec![rows, cols] } else { vec![cols] };
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    let mut it = tensors.into_iter();
    let mut linear = || Linear { weight: it.next().expect("counted"), bias: it.next().expect("counted") };
    let trunk: Vec<Linear> = (0..layers).map(|_| linear()).collect();
    let blocks: Vec<HeadBlock> = (0..heads).map(|_| HeadBlock { adapter: linear(), mean: linear(), log_std: linear() }).collect();
    let policy = MultiHeadPolicy::from_parts(trunk, blocks, vec![-1.0; ACTION_DIM], vec![1.0; ACTION_DIM])
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(policy)
}

pub fn save(path: &Path, policy: &MultiHeadPolicy) -> Result<()> {
    std::fs::write(path, encode(policy))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MultiHeadPolicy> {
    decode(&std::fs::read(path)?)
}

pub fn is_checkpoint(path: &Path) -> bool {
    use std::io::Read;
    let mut magic = [0u8; 4];
    std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut magic)).is_ok() && &magic == MAGIC
}
