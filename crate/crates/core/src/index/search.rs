use serde::{Deserialize, Serialize};

use super::codec::{adc, CodeBuf, Prepared};
use super::{Encoding, InvertedList, IvfIndex};
use crate::distance::{l2_sq, Neighbor, TopK};
use crate::{Error, Result};

/// Number of database distance computations allowed, and result size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub dcs: usize,
    pub k: usize,
}

impl SearchBudget {
    pub fn new(dcs: usize, k: usize) -> Self {
        Self { dcs, k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub neighbors: Vec<Neighbor>,
    pub distance_computations: usize,
    pub cells_visited: usize,
    pub tables_built: usize,
}

struct Scan<'a> {
    top: TopK,
    used: usize,
    cells_visited: usize,
    tables_built: usize,
    q: &'a [f32],
}

impl IvfIndex {
    pub fn search(&self, q: &[f32], budget: SearchBudget) -> Result<Vec<Neighbor>> {
        Ok(self.search_with_stats(q, budget)?.neighbors)
    }

    pub fn search_with_stats(&self, q: &[f32], budget: SearchBudget) -> Result<SearchOutcome> {
        Ok(self.search_checkpoints(q, budget.k, &[budget.dcs])?.remove(0))
    }

    /// One scan serving several budgets. Since the scan order does not
    /// depend on the budget, the result for budget `b` is the state of the
    /// heap after `b` distance computations. `dcs` must be non-decreasing.
    pub fn search_checkpoints(&self, q: &[f32], k: usize, dcs: &[usize]) -> Result<Vec<SearchOutcome>> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        if dcs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("budgets must be non-decreasing".into()));
        }
        if let Some(&b) = dcs.first() {
            if b < k {
                log::warn!("budget of {b} distance computations is below k={k}");
            }
        }
        let mut out = Vec::with_capacity(dcs.len());
        let mut scan = Scan {
            top: TopK::new(k),
            used: 0,
            cells_visited: 0,
            tables_built: 0,
            q,
        };
        let mut next = 0;
        let emit = |scan: &Scan, out: &mut Vec<SearchOutcome>| {
            out.push(SearchOutcome {
                neighbors: scan.top.clone().into_sorted_vec(),
                distance_computations: scan.used,
                cells_visited: scan.cells_visited,
                tables_built: scan.tables_built,
            })
        };
        while next < dcs.len() && dcs[next] == 0 {
            emit(&scan, &mut out);
            next += 1;
        }
        if next < dcs.len() && !self.is_empty() {
            let direct = match self.config.encoding {
                Encoding::Direct => {
                    scan.tables_built += usize::from(self.codec.uses_tables());
                    Some(self.codec.prepare(q))
                }
                Encoding::Residual => None,
            };
            'cells: for (cell, _) in self.coarse.ranking(q) {
                let list = &self.lists[cell];
                if list.is_empty() {
                    continue;
                }
                scan.cells_visited += 1;
                let mut cache: Vec<Option<Prepared>> = vec![None; list.history.len()];
                let mut pos = 0;
                while pos < list.len() {
                    let take = (dcs[next] - scan.used).min(list.len() - pos);
                    self.scan_range(list, pos, pos + take, direct.as_ref(), &mut cache, &mut scan);
                    pos += take;
                    scan.used += take;
                    while next < dcs.len() && dcs[next] == scan.used {
                        emit(&scan, &mut out);
                        next += 1;
                    }
                    if next == dcs.len() {
                        break 'cells;
                    }
                }
            }
        }
        while out.len() < dcs.len() {
            emit(&scan, &mut out);
        }
        Ok(out)
    }

    fn scan_range(
        &self,
        list: &InvertedList,
        from: usize,
        to: usize,
        direct: Option<&Prepared>,
        cache: &mut [Option<Prepared>],
        scan: &mut Scan,
    ) {
        let ids = &list.ids[from..to];
        match (direct, &list.codes) {
            (Some(Prepared::Float { t, bias }), CodeBuf::Float { width, data }) => {
                let codes = data[from * width..to * width].chunks_exact(*width);
                for (&id, code) in ids.iter().zip(codes) {
                    scan.top.push(id, l2_sq(t, code) + bias);
                }
            }
            (Some(Prepared::Table { table, ksub }), CodeBuf::Bytes { width, data }) => {
                let codes = data[from * width..to * width].chunks_exact(*width);
                for (&id, code) in ids.iter().zip(codes) {
                    scan.top.push(id, adc(table, *ksub, code));
                }
            }
            (Some(_), _) => unreachable!("prepared query does not match code kind"),
            (None, _) => {
                for i in from..to {
                    let slot = (list.versions[i] - list.base_version) as usize;
                    if cache[slot].is_none() {
                        let c = &list.history[slot];
                        let t: Vec<f32> = scan.q.iter().zip(c).map(|(a, b)| a - b).collect();
                        cache[slot] = Some(self.codec.prepare(&t));
                        scan.tables_built += usize::from(self.codec.uses_tables());
                    }
                    let prep = cache[slot].as_ref().unwrap();
                    scan.top.push(list.ids[i], prep.distance(list.codes.get(i)));
                }
            }
        }
    }

    /// ADC table for `q` against the codes of `(cell, version)`, laid out
    /// `table[m * ksub + j]`. Direct encoding ignores the centroid.
    pub fn build_lut(&self, q: &[f32], cell: usize, version: u16) -> Result<Vec<f32>> {
        if !self.codec.uses_tables() {
            return Err(Error::InvalidConfig(format!(
                "lookup tables need a PQ or OPQ codec, index uses {}",
                self.codec.name()
            )));
        }
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        let list = self.lists.get(cell).ok_or_else(|| {
            Error::InvalidConfig(format!("cell {cell} out of range (index has {})", self.lists.len()))
        })?;
        let centroid = list.centroid(version).ok_or(Error::VersionOutOfRange {
            cell,
            version,
            base: list.base_version,
            end: list.base_version as u32 + list.history.len() as u32,
        })?;
        let t: Vec<f32> = match self.config.encoding {
            Encoding::Direct => q.to_vec(),
            Encoding::Residual => q.iter().zip(centroid).map(|(a, b)| a - b).collect(),
        };
        match self.codec.prepare(&t) {
            Prepared::Table { table, .. } => Ok(table),
            Prepared::Float { .. } => unreachable!("table codec prepared a float query"),
        }
    }
}
