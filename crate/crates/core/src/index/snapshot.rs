//! Binary index snapshot.
//!
//! ```text
//! "IVF1"
//! u32 len, config JSON
//! u64 len, models JSON (coarse quantizer, codec, retained samples, epoch)
//! per cell: u32 cell_id, u16 base_version, u16 n_versions,
//!           n_versions × dim f32 centroid history,
//!           u64 n_postings, n_postings × (u64 id, u16 version, code)
//! ```
//! All integers and floats little-endian. Codes are `width` f32 values for
//! raw/PCA codecs and `m` bytes for PQ/OPQ.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Codec, IndexConfig, InvertedList, IvfIndex, Reservoir};
use crate::quantizers::CoarseQuantizer;
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"IVF1";

#[derive(Serialize, Deserialize)]
struct Models {
    coarse: CoarseQuantizer,
    codec: Codec,
    #[serde(default)]
    retained: Option<Vec<Reservoir>>,
    #[serde(default)]
    epoch: u64,
}

impl IvfIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        let config = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        let models = serde_json::to_vec(&Models {
            coarse: self.coarse.clone(),
            codec: self.codec.clone(),
            retained: self.retained.clone(),
            epoch: self.epoch,
        })?;
        out.extend_from_slice(&(models.len() as u64).to_le_bytes());
        out.extend_from_slice(&models);
        for (cell, list) in self.lists.iter().enumerate() {
            out.extend_from_slice(&(cell as u32).to_le_bytes());
            out.extend_from_slice(&list.base_version.to_le_bytes());
            out.extend_from_slice(&(list.history.len() as u16).to_le_bytes());
            for c in &list.history {
                c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            out.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for i in 0..list.len() {
                out.extend_from_slice(&list.ids[i].to_le_bytes());
                out.extend_from_slice(&list.versions[i].to_le_bytes());
                list.codes.write_code(i, &mut out);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// `origin` only labels error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != SNAPSHOT_MAGIC {
            return Err(bad("not an index snapshot (bad magic)".into()));
        }
        let n = r.u32().map_err(&bad)? as usize;
        let config: IndexConfig = serde_json::from_slice(r.take(n).map_err(&bad)?)
            .map_err(|e| bad(format!("config block: {e}")))?;
        config.validate()?;
        let n = r.u64().map_err(&bad)? as usize;
        let models: Models = serde_json::from_slice(r.take(n).map_err(&bad)?)
            .map_err(|e| bad(format!("model block: {e}")))?;
        if models.codec.dim() != models.coarse.dim() {
            return Err(bad("codec and coarse quantizer dimensions differ".into()));
        }
        let dim = models.coarse.dim();
        let mut index = IvfIndex::from_parts(config, models.coarse, models.codec);
        if let Some(res) = models.retained {
            if res.len() != index.lists.len() {
                return Err(bad("retained sample table has the wrong cell count".into()));
            }
            index.retained = Some(res);
        }
        index.epoch = models.epoch;
        let code_bytes = index.codec.empty_buf().code_bytes();
        let mut directory = HashMap::new();
        for cell in 0..index.lists.len() {
            let id = r.u32().map_err(&bad)? as usize;
            if id != cell {
                return Err(bad(format!("expected cell {cell}, found {id}")));
            }
            let base = r.u16().map_err(&bad)?;
            let nv = r.u16().map_err(&bad)? as usize;
            if nv == 0 || nv > index.config.max_versions || base as usize + nv - 1 > u16::MAX as usize {
                return Err(bad(format!("cell {cell}: invalid version range")));
            }
            let mut history = Vec::with_capacity(nv);
            for _ in 0..nv {
                history.push(r.f32s(dim).map_err(&bad)?);
            }
            let mut list = InvertedList::new(Vec::new(), index.codec.empty_buf());
            list.history = history;
            list.base_version = base;
            list.version_counts = vec![0; nv];
            let np = r.u64().map_err(&bad)? as usize;
            for off in 0..np {
                let pid = r.u64().map_err(&bad)?;
                let v = r.u16().map_err(&bad)?;
                let slot = v.wrapping_sub(base) as usize;
                if v < base || slot >= nv {
                    return Err(bad(format!("cell {cell}: posting {pid} has dead version {v}")));
                }
                if directory.insert(pid, (cell as u32, off as u32)).is_some() {
                    return Err(bad(format!("id {pid} stored twice")));
                }
                list.ids.push(pid);
                list.versions.push(v);
                list.version_counts[slot] += 1;
                list.codes.push_le_bytes(r.take(code_bytes).map_err(&bad)?);
            }
            index.lists[cell] = list;
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last list".into()));
        }
        index.directory = directory;
        Ok(index)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
