use super::codec::{CodeBuf, CodeRef};

/// One stored vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting<'a> {
    pub id: u64,
    pub version: u16,
    pub code: CodeRef<'a>,
}

/// Postings of one cell plus the centroid versions they were encoded
/// against. Version numbers are absolute; `base_version` is the number of
/// the oldest history entry still kept.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedList {
    pub(crate) base_version: u16,
    pub(crate) history: Vec<Vec<f32>>,
    pub(crate) version_counts: Vec<usize>,
    pub(crate) ids: Vec<u64>,
    pub(crate) versions: Vec<u16>,
    pub(crate) codes: CodeBuf,
}

impl InvertedList {
    pub(crate) fn new(centroid: Vec<f32>, codes: CodeBuf) -> Self {
        Self {
            base_version: 0,
            history: vec![centroid],
            version_counts: vec![0],
            ids: Vec::new(),
            versions: Vec::new(),
            codes,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn versions(&self) -> &[u16] {
        &self.versions
    }

    pub fn codes(&self) -> &CodeBuf {
        &self.codes
    }

    pub fn posting(&self, i: usize) -> Posting<'_> {
        Posting {
            id: self.ids[i],
            version: self.versions[i],
            code: self.codes.get(i),
        }
    }

    pub fn base_version(&self) -> u16 {
        self.base_version
    }

    pub fn n_versions(&self) -> usize {
        self.history.len()
    }

    pub fn current_version(&self) -> u16 {
        self.base_version + (self.history.len() - 1) as u16
    }

    /// Live history, oldest first.
    pub fn history(&self) -> &[Vec<f32>] {
        &self.history
    }

    pub fn centroid(&self, version: u16) -> Option<&[f32]> {
        let idx = version.checked_sub(self.base_version)? as usize;
        self.history.get(idx).map(Vec::as_slice)
    }

    pub fn current_centroid(&self) -> &[f32] {
        self.history.last().expect("history is never empty")
    }

    /// Postings per live version, oldest first.
    pub fn version_counts(&self) -> &[usize] {
        &self.version_counts
    }

    pub(crate) fn push(&mut self, id: u64, version: u16, code: CodeRef<'_>) {
        self.ids.push(id);
        self.versions.push(version);
        self.codes.push(code);
        self.version_counts[(version - self.base_version) as usize] += 1;
    }

    /// Removes posting `i`; returns the id moved into slot `i`, if any.
    pub(crate) fn swap_remove(&mut self, i: usize) -> Option<u64> {
        let v = self.versions[i];
        self.version_counts[(v - self.base_version) as usize] -= 1;
        self.ids.swap_remove(i);
        self.versions.swap_remove(i);
        self.codes.swap_remove(i);
        self.ids.get(i).copied()
    }

    /// Drops leading history entries no posting refers to.
    pub(crate) fn gc_prefix(&mut self) {
        let dead = self
            .version_counts
            .iter()
            .take(self.history.len() - 1)
            .take_while(|&&c| c == 0)
            .count();
        if dead > 0 {
            self.history.drain(..dead);
            self.version_counts.drain(..dead);
            self.base_version += dead as u16;
        }
    }

    pub(crate) fn push_version(&mut self, centroid: Vec<f32>) {
        if self.current_version() == u16::MAX {
            self.renumber();
        }
        self.history.push(centroid);
        self.version_counts.push(0);
        self.gc_prefix();
    }

    fn renumber(&mut self) {
        let base = self.base_version;
        self.versions.iter_mut().for_each(|v| *v -= base);
        self.base_version = 0;
    }

    /// Empties the list and restarts its history at version 0.
    pub(crate) fn reset(&mut self, centroid: Vec<f32>) {
        self.ids.clear();
        self.versions.clear();
        self.codes.clear();
        self.history = vec![centroid];
        self.version_counts = vec![0];
        self.base_version = 0;
    }

    /// Relabels every posting of the oldest version with the current
    /// version and drops the oldest entry. Codes are left to the caller.
    pub(crate) fn retire_oldest(&mut self) -> Vec<usize> {
        let oldest = self.base_version;
        let current = self.current_version();
        let mut moved = Vec::new();
        for (i, v) in self.versions.iter_mut().enumerate() {
            if *v == oldest {
                *v = current;
                moved.push(i);
            }
        }
        let n = self.version_counts[0];
        *self.version_counts.last_mut().unwrap() += n;
        self.version_counts[0] = 0;
        self.gc_prefix();
        moved
    }
}
