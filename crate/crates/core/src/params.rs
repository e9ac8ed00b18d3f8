//! Named parameter storage shared by every model component.
//!
//! Components register their weights under dotted names whose first segment
//! is the component (`encoder.`, `projector.`, `lm.`, `adapters.`). Freezing,
//! checkpoint blobs and trainable-fraction accounting all work by prefix.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (false for biases and norm gains).
    pub decay: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("duplicate parameter name `{0}`")]
    Duplicate(String),
    #[error("unknown parameter `{0}` in blob")]
    Unknown(String),
    #[error("shape mismatch for `{name}`: stored {stored:?}, blob {blob:?}")]
    Shape { name: String, stored: (usize, usize), blob: (usize, usize) },
    #[error("parameter `{0}` missing from blob")]
    Missing(String),
    #[error("malformed parameter blob: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Removed entries leave a hole so that existing ids stay valid.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Option<ParamEntry>>,
    by_name: BTreeMap<String, ParamId>,
}

const BLOB_MAGIC: &[u8; 8] = b"MOLMPAR1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name `{name}`");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Some(ParamEntry { name, value, trainable: true, decay }));
        id
    }

    pub fn remove(&mut self, id: ParamId) -> Option<ParamEntry> {
        let entry = self.entries.get_mut(id.0)?.take()?;
        self.by_name.remove(&entry.name);
        Some(entry)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        matches!(self.entries.get(id.0), Some(Some(_)))
    }

    fn entry(&self, id: ParamId) -> &ParamEntry {
        self.entries[id.0].as_ref().expect("parameter was removed")
    }

    fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        self.entries[id.0].as_mut().expect("parameter was removed")
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entry(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entry_mut(id).value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entry(id).name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entry(id).decay
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entry(id).trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entry_mut(id).trainable = trainable;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Live parameter ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.as_ref().map(|_| ParamId(i)))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.name(id).starts_with(prefix))
    }

    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        let ids: Vec<_> = self.ids_with_prefix(prefix).collect();
        for id in ids {
            self.set_trainable(id, trainable);
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.set_trainable_prefix("", trainable);
    }

    pub fn num_params(&self) -> usize {
        self.ids().map(|id| self.value(id).len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.ids().filter(|&id| self.is_trainable(id)).map(|id| self.value(id).len()).sum()
    }

    pub fn num_params_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.value(id).len()).sum()
    }

    /// Copies of every tensor under `prefix`, keyed by name.
    pub fn snapshot(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.ids_with_prefix(prefix).map(|id| (self.name(id).to_string(), self.value(id).clone())).collect()
    }

    /// True when every tensor under `prefix` is bit-identical to `snap`.
    pub fn matches_snapshot(&self, prefix: &str, snap: &BTreeMap<String, Tensor>) -> bool {
        let now = self.snapshot(prefix);
        now.len() == snap.len()
            && now.iter().zip(snap).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Writes snapshot values back; names absent from the store are ignored.
    pub fn restore(&mut self, snap: &BTreeMap<String, Tensor>) {
        for (name, value) in snap {
            if let Some(id) = self.id(name) {
                *self.value_mut(id) = value.clone();
            }
        }
    }

    /// Serializes every parameter under `prefix`: magic, count, then per entry
    /// name length, name bytes, rows, cols, little-endian `f64` data.
    pub fn write_blob<W: Write>(&self, prefix: &str, mut w: W) -> Result<(), ParamError> {
        let ids: Vec<_> = self.ids_with_prefix(prefix).collect();
        w.write_all(BLOB_MAGIC)?;
        w.write_all(&(ids.len() as u64).to_le_bytes())?;
        for id in ids {
            let e = self.entry(id);
            w.write_all(&(e.name.len() as u64).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(e.value.cols() as u64).to_le_bytes())?;
            for x in e.value.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Overwrites values of parameters named in the blob. Every live parameter
    /// under `prefix` must be present.
    pub fn read_blob<R: Read>(&mut self, prefix: &str, mut r: R) -> Result<(), ParamError> {
        fn u64_of<R: Read>(r: &mut R) -> Result<u64, ParamError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(ParamError::Malformed("bad magic".into()));
        }
        let count = u64_of(&mut r)? as usize;
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..count {
            let name_len = u64_of(&mut r)? as usize;
            if name_len > 1 << 16 {
                return Err(ParamError::Malformed("name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| ParamError::Malformed("name not utf-8".into()))?;
            let rows = u64_of(&mut r)? as usize;
            let cols = u64_of(&mut r)? as usize;
            let id = self.id(&name).ok_or_else(|| ParamError::Unknown(name.clone()))?;
            let stored = self.value(id).shape();
            if stored != (rows, cols) {
                return Err(ParamError::Shape { name, stored, blob: (rows, cols) });
            }
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            *self.value_mut(id) = Tensor::from_vec(rows, cols, data);
            seen.insert(name);
        }
        for id in self.ids_with_prefix(prefix) {
            if !seen.contains(self.name(id)) {
                return Err(ParamError::Missing(self.name(id).to_string()));
            }
        }
        Ok(())
    }
}
