//! Delimited interaction-log ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnType, FieldRole, Schema};
use super::vocab::{FeatureVocabulary, FieldKind};
use crate::error::{Error, Result};

/// One behavior event of a user, already encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Local item index in `[0, N)`.
    pub item: u32,
    pub timestamp: i64,
    /// Global context feature indices, one list per context field.
    pub context: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub total_rows: usize,
    pub rejected_rows: usize,
    pub duplicate_rows: usize,
}

/// A parsed, unsplit interaction log.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    pub vocab: FeatureVocabulary,
    /// `[user][user attr field] -> sorted global indices`
    pub user_attrs: Vec<Vec<Vec<u32>>>,
    /// `[item][item attr field] -> sorted global indices`
    pub item_attrs: Vec<Vec<Vec<u32>>>,
    /// Per-user behaviors sorted by `(timestamp, item)`.
    pub sequences: Vec<Vec<Event>>,
    pub report: ParseReport,
}

impl InteractionLog {
    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.vocab.n_items()
    }

    /// Binary interaction matrix over every parsed event.
    pub fn interaction_matrix(&self) -> super::InteractionMatrix {
        let rows = self
            .sequences
            .iter()
            .map(|s| s.iter().map(|e| e.item).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        super::InteractionMatrix::from_rows(self.n_items(), &rows)
    }
}

struct RawRow {
    user: String,
    item: String,
    ts: i64,
    /// Tokens for each non-core schema field, aligned with `Parser::extra`.
    cells: Vec<Vec<String>>,
}

pub fn parse_interactions(path: &Path, schema: &Schema) -> Result<InteractionLog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, schema)
}

pub fn parse_reader<R: Read>(reader: R, schema: &Schema) -> Result<InteractionLog> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str, path: String| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config(path, format!("column `{name}` not in header")))
    };

    let mut core = [0usize; 3];
    let mut extra = Vec::new();
    for (i, f) in schema.fields.iter().enumerate() {
        let col = column(&f.column, format!("data.schema.fields[{i}].column"))?;
        match f.role {
            FieldRole::User => core[0] = col,
            FieldRole::Item => core[1] = col,
            FieldRole::EventTime => core[2] = col,
            _ => extra.push((i, col)),
        }
    }

    let sep = schema.multi_value_separator;
    let mut rows = Vec::new();
    let mut report = ParseReport::default();
    for record in rdr.records() {
        report.total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                log::warn!("row {}: {e}", report.total_rows);
                report.rejected_rows += 1;
                continue;
            }
        };
        let get = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let (user, item, ts) = (get(core[0]), get(core[1]), get(core[2]));
        let ts = ts.parse::<i64>().ok();
        if user.is_empty() || item.is_empty() || ts.is_none() {
            log::warn!("row {}: missing user/item/timestamp", report.total_rows);
            report.rejected_rows += 1;
            continue;
        }
        let cells = extra
            .iter()
            .map(|&(fi, col)| {
                let spec = &schema.fields[fi];
                let raw = get(col);
                if raw.is_empty() {
                    return Vec::new();
                }
                match spec.column_type {
                    ColumnType::Timestamp => {
                        let width = spec.bucket_seconds.unwrap_or(1);
                        raw.parse::<i64>()
                            .map(|t| vec![t.div_euclid(width).to_string()])
                            .unwrap_or_default()
                    }
                    _ => raw
                        .split(sep)
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(str::to_string)
                        .collect(),
                }
            })
            .collect();
        rows.push(RawRow {
            user: user.to_string(),
            item: item.to_string(),
            ts: ts.unwrap(),
            cells,
        });
    }

    if rows.is_empty() {
        return Err(Error::NoUsableRows);
    }
    if report.rejected_rows * 2 > report.total_rows {
        return Err(Error::TooManyRejected {
            rejected: report.rejected_rows,
            total: report.total_rows,
        });
    }

    // Vocabulary: sorted unique tokens per field.
    let mut users = BTreeSet::new();
    let mut items = BTreeSet::new();
    let mut extra_tokens = vec![BTreeSet::new(); extra.len()];
    for r in &rows {
        users.insert(r.user.as_str());
        items.insert(r.item.as_str());
        for (set, cell) in extra_tokens.iter_mut().zip(&r.cells) {
            set.extend(cell.iter().map(String::as_str));
        }
    }
    let user_spec = schema.field_with_role(FieldRole::User).unwrap();
    let item_spec = schema.field_with_role(FieldRole::Item).unwrap();
    let owned = |s: &BTreeSet<&str>| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    let mut fields = vec![
        (user_spec.name.clone(), FieldKind::User, owned(&users)),
        (item_spec.name.clone(), FieldKind::Item, owned(&items)),
    ];
    for (&(fi, _), set) in extra.iter().zip(&extra_tokens) {
        let spec = &schema.fields[fi];
        let kind = match spec.role {
            FieldRole::UserAttr => FieldKind::UserAttr,
            FieldRole::ItemAttr => FieldKind::ItemAttr,
            _ => FieldKind::Context,
        };
        fields.push((spec.name.clone(), kind, owned(set)));
    }
    let vocab = FeatureVocabulary::new(fields)?;

    // Map each extra column to its vocabulary field position and slot.
    let field_pos: Vec<usize> = extra
        .iter()
        .map(|&(fi, _)| vocab.field_position(&schema.fields[fi].name).unwrap())
        .collect();
    let slot_of = |kind: FieldKind, pos: usize| {
        vocab
            .fields_of_kind(kind)
            .position(|(p, _)| p == pos)
            .unwrap()
    };

    let n_users = vocab.n_users();
    let n_items = vocab.n_items();
    let n_ua = vocab.fields_of_kind(FieldKind::UserAttr).count();
    let n_ia = vocab.fields_of_kind(FieldKind::ItemAttr).count();
    let n_ctx = vocab.fields_of_kind(FieldKind::Context).count();

    let mut user_attrs = vec![vec![BTreeSet::new(); n_ua]; n_users];
    let mut item_attrs = vec![vec![BTreeSet::new(); n_ia]; n_items];
    let mut events: Vec<BTreeMap<(i64, u32), Vec<Vec<u32>>>> = vec![BTreeMap::new(); n_users];

    for r in &rows {
        let u = vocab.index_of(0, &r.user).unwrap() as usize;
        let v = vocab.index_of(1, &r.item).unwrap() as usize - n_users;
        let mut context = vec![Vec::new(); n_ctx];
        for (k, cell) in r.cells.iter().enumerate() {
            let pos = field_pos[k];
            let kind = vocab.fields[pos].kind;
            let idx = cell.iter().map(|t| vocab.index_of(pos, t).unwrap());
            match kind {
                FieldKind::UserAttr => user_attrs[u][slot_of(kind, pos)].extend(idx),
                FieldKind::ItemAttr => item_attrs[v][slot_of(kind, pos)].extend(idx),
                _ => {
                    let slot = &mut context[slot_of(kind, pos)];
                    slot.extend(idx);
                    slot.sort_unstable();
                    slot.dedup();
                }
            }
        }
        match events[u].entry((r.ts, v as u32)) {
            std::collections::btree_map::Entry::Occupied(_) => report.duplicate_rows += 1,
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(context);
            }
        }
    }

    let collect = |sets: Vec<Vec<BTreeSet<u32>>>| {
        sets.into_iter()
            .map(|fs| fs.into_iter().map(|s| s.into_iter().collect()).collect())
            .collect::<Vec<Vec<Vec<u32>>>>()
    };
    let sequences = events
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|((timestamp, item), context)| Event {
                    item,
                    timestamp,
                    context,
                })
                .collect()
        })
        .collect();

    Ok(InteractionLog {
        vocab,
        user_attrs: collect(user_attrs),
        item_attrs: collect(item_attrs),
        sequences,
        report,
    })
}
