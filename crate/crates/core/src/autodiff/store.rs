use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Array, AutodiffError};

pub const MAGIC: &[u8; 4] = b"NMTB";
pub const FORMAT_VERSION: u32 = 1;

/// Named, ordered collection of parameter arrays.
///
/// Arrays are reference counted so a graph can hold them as leaves without
/// copying; [`ParamSet::get_mut`] clones on write if a graph still holds one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    arrays: Vec<Arc<Array>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.arrays.push(Arc::new(value));
        self.arrays.len() - 1
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Array {
        &self.arrays[i]
    }

    pub fn shared(&self, i: usize) -> Arc<Array> {
        Arc::clone(&self.arrays[i])
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.index_of(name).map(|i| self.get(i))
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array {
        Arc::make_mut(&mut self.arrays[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.arrays.iter().map(|a| a.as_ref()))
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    /// True when every array has identical bits to `other`'s.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.arrays.iter().zip(&other.arrays).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Writes the versioned little-endian container: magic, version, then
    /// one record per tensor (name length, name, rank, dims, raw values).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), AutodiffError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for (name, array) in self.iter() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(array.rank() as u32).to_le_bytes())?;
            for &d in array.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in array.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.num_values() * 8);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, AutodiffError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(AutodiffError::Format("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(AutodiffError::Format(format!("unsupported version {version}")));
        }
        let mut set = ParamSet::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| AutodiffError::Format(format!("tensor name: {e}")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = cur.take(count.checked_mul(8).ok_or_else(|| {
                AutodiffError::Format(format!("tensor {name} is too large"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if set.index_of(&name).is_some() {
                return Err(AutodiffError::Format(format!("duplicate tensor {name}")));
            }
            set.push(name, Array::new(shape, data)?);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.pos + n > self.bytes.len() {
            return Err(AutodiffError::Format("truncated container".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
