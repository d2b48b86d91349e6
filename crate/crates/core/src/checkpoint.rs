//! Self-describing binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "E2EBT001"
//! u32 n, n vocabulary tokens (u32 byte length + UTF-8)
//! u32 byte length + config TOML text
//! u32 n, n metadata pairs (key string, value string)
//! u32 n, n arrays:
//!     name string, u8 kind (0 = f32, 1 = u64), u32 rank, rank x u64 dims,
//!     elements
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use e2ebt_tensor::{ParamStore, Scalar, Tensor};

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 8] = b"E2EBT001";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vec<String>,
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

fn bad(m: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(m.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(vocab: Vec<String>, config: String) -> Self {
        Checkpoint {
            vocab,
            config,
            ..Default::default()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, self.vocab.len());
        for t in &self.vocab {
            put_str(&mut out, t);
        }
        put_str(&mut out, &self.config);
        put_u32(&mut out, self.meta.len());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.arrays.len());
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            out.push(match a.data {
                ArrayData::F32(_) => 0,
                ArrayData::U64(_) => 1,
            });
            put_u32(&mut out, a.shape.len());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            ck.vocab.push(r.string()?);
        }
        ck.config = r.string()?;
        for _ in 0..r.u32()? {
            let k = r.string()?;
            ck.meta.insert(k, r.string()?);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let kind = r.u8()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| bad(format!("{name}: shape overflows")))?;
            let data = match kind {
                0 => ArrayData::F32(
                    r.take(n.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => ArrayData::U64(
                    r.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                k => return Err(bad(format!("{name}: unknown array kind {k}"))),
            };
            ck.arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(ck)
    }

    /// Written to a sibling temporary file first, then renamed into place,
    /// so an interrupted write never clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| CoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_owned(), value.to_string());
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing metadata {key:?}")))
    }

    pub fn meta_parse<X: std::str::FromStr>(&self, key: &str) -> Result<X> {
        let v = self.meta_str(key)?;
        v.parse()
            .map_err(|_| bad(format!("metadata {key:?} = {v:?} does not parse")))
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: String, t: &Tensor<T>) {
        let data = t.data().iter().map(|x| x.to_f64_lossy() as f32).collect();
        self.arrays.push(NamedArray {
            name,
            shape: t.shape().to_vec(),
            data: ArrayData::F32(data),
        });
    }

    pub fn push_u64(&mut self, name: &str, v: Vec<u64>) {
        self.arrays.push(NamedArray {
            name: name.to_owned(),
            shape: vec![v.len()],
            data: ArrayData::U64(v),
        });
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let a = self
            .array(name)
            .ok_or_else(|| bad(format!("missing array {name:?}")))?;
        match &a.data {
            ArrayData::F32(v) => Ok(Tensor::new(
                a.shape.clone(),
                v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            )?),
            ArrayData::U64(_) => Err(bad(format!("{name} is not a float array"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.array(name).map(|a| &a.data) {
            Some(ArrayData::U64(v)) => Ok(v),
            Some(_) => Err(bad(format!("{name} is not an integer array"))),
            None => Err(bad(format!("missing array {name:?}"))),
        }
    }

    /// Every parameter of `store` as `{prefix}{name}`.
    pub fn push_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, p) in store.iter() {
            self.push_tensor(format!("{prefix}{}", p.name), &p.value);
        }
    }

    /// A store holding every array under `prefix`, in file order, with the
    /// prefix stripped.
    pub fn store<T: Scalar>(&self, prefix: &str) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for a in &self.arrays {
            if let Some(name) = a.name.strip_prefix(prefix) {
                store.add(name, self.tensor(&a.name)?);
            }
        }
        if store.is_empty() {
            return Err(bad(format!("no arrays under {prefix:?}")));
        }
        Ok(store)
    }

    /// Overwrite the values of `store` from `{prefix}{name}` arrays; every
    /// parameter must be present with a matching shape.
    pub fn fill_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for id in store.ids() {
            let name = format!("{prefix}{}", store.param(id).name);
            let t = self.tensor::<T>(&name)?;
            if t.shape() != store.get(id).shape() {
                return Err(bad(format!(
                    "{name}: shape {:?} vs {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &[String]) -> Result<()> {
        if self.vocab != vocab {
            return Err(CoreError::VocabularyMismatch(format!(
                "checkpoint has {} tokens, corpus has {}",
                self.vocab.len(),
                vocab.len()
            )));
        }
        Ok(())
    }
}

impl NamedArray {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}
