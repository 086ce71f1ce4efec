//! Interaction logs, feature vocabulary, leave-last-out splitting and
//! negative sampling.

mod bundle;
mod negatives;
mod parse;
mod schema;
mod split;
mod vocab;

pub use bundle::{read_instances, write_instances, Dataset};
pub use negatives::{sample_negatives, NegativeMode};
pub use parse::{parse_interactions, parse_reader, Event, InteractionLog, ParseReport};
pub use schema::{ColumnType, FieldRole, FieldSpec, Schema};
pub use split::{split_leave_last, Split, MIN_BEHAVIORS};
pub use vocab::{FeatureVocabulary, FieldDescriptor, FieldKind, FieldRange, Layout};

use serde::{Deserialize, Serialize};

/// One encoded example `[u, v, A_u, B_v, S_u, C]` with its label.
///
/// All indices are global feature indices. Attribute and context slots hold
/// one list per field, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub user: u32,
    pub item: u32,
    pub user_attrs: Vec<Vec<u32>>,
    pub item_attrs: Vec<Vec<u32>>,
    /// Item feature indices, oldest first.
    pub behaviors: Vec<u32>,
    pub context: Vec<Vec<u32>>,
    pub label: u8,
}

impl Instance {
    /// Non-behavior features; the ones whose training frequency matters.
    pub fn features(&self) -> impl Iterator<Item = u32> + '_ {
        [self.user, self.item]
            .into_iter()
            .chain(self.user_attrs.iter().flatten().copied())
            .chain(self.item_attrs.iter().flatten().copied())
            .chain(self.context.iter().flatten().copied())
    }
}

/// Binary user-item matrix in CSR form; column indices are local item ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub offsets: Vec<u64>,
    pub cols: Vec<u32>,
}

impl InteractionMatrix {
    pub fn from_rows(n_cols: usize, rows: &[Vec<u32>]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for r in rows {
            let mut r = r.clone();
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            offsets.push(cols.len() as u64);
        }
        InteractionMatrix {
            n_rows: rows.len(),
            n_cols,
            offsets,
            cols,
        }
    }

    pub fn row(&self, u: usize) -> &[u32] {
        &self.cols[self.offsets[u] as usize..self.offsets[u + 1] as usize]
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn contains(&self, u: usize, v: u32) -> bool {
        self.row(u).binary_search(&v).is_ok()
    }

    pub fn write_to<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"DGY1")?;
        for x in [self.n_rows as u64, self.n_cols as u64, self.nnz() as u64] {
            w.write_all(&x.to_le_bytes())?;
        }
        for o in &self.offsets {
            w.write_all(&o.to_le_bytes())?;
        }
        for c in &self.cols {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(bytes: &[u8]) -> crate::Result<Self> {
        let mut r = crate::io_util::ByteReader::new(bytes, "interaction matrix");
        r.expect_magic(b"DGY1")?;
        let n_rows = r.u64()? as usize;
        let n_cols = r.u64()? as usize;
        let nnz = r.u64()? as usize;
        let offsets = (0..=n_rows)
            .map(|_| r.u64())
            .collect::<crate::Result<Vec<_>>>()?;
        let cols = (0..nnz)
            .map(|_| r.u32())
            .collect::<crate::Result<Vec<_>>>()?;
        r.finish()?;
        Ok(InteractionMatrix {
            n_rows,
            n_cols,
            offsets,
            cols,
        })
    }
}
