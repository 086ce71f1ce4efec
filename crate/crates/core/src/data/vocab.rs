use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    User,
    Item,
    UserAttr,
    ItemAttr,
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    pub kind: FieldKind,
    pub offset: usize,
    pub cardinality: usize,
    /// Raw tokens in local-index order.
    pub tokens: Vec<String>,
}

impl FieldDescriptor {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.cardinality
    }
}

/// Global feature index space, partitioned by field.
///
/// Field order is fixed: user ids, item ids, user attribute fields, item
/// attribute fields, context fields. Users therefore occupy `[0, M)` and items
/// `[M, M + N)`, which is also the node numbering of the collaborative graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub fields: Vec<FieldDescriptor>,
    /// Training-split occurrence count per global feature index.
    pub frequency: Vec<u64>,
    #[serde(skip)]
    lookup: Vec<HashMap<String, u32>>,
}

impl FeatureVocabulary {
    /// Build from `(name, kind, tokens)` triples; tokens are taken in the
    /// given order. Fields are reordered into the canonical kind order.
    pub fn new(mut fields: Vec<(String, FieldKind, Vec<String>)>) -> Result<Self> {
        let rank = |k: FieldKind| match k {
            FieldKind::User => 0,
            FieldKind::Item => 1,
            FieldKind::UserAttr => 2,
            FieldKind::ItemAttr => 3,
            FieldKind::Context => 4,
        };
        fields.sort_by_key(|(_, k, _)| rank(*k));
        if fields.iter().filter(|f| f.1 == FieldKind::User).count() != 1
            || fields.iter().filter(|f| f.1 == FieldKind::Item).count() != 1
        {
            return Err(Error::InvalidArgument(
                "vocabulary needs exactly one user and one item field".into(),
            ));
        }
        let mut offset = 0;
        let fields: Vec<FieldDescriptor> = fields
            .into_iter()
            .map(|(name, kind, tokens)| {
                let d = FieldDescriptor {
                    name,
                    kind,
                    offset,
                    cardinality: tokens.len(),
                    tokens,
                };
                offset += d.cardinality;
                d
            })
            .collect();
        let mut v = FeatureVocabulary {
            fields,
            frequency: vec![0; offset],
            lookup: Vec::new(),
        };
        v.rebuild_lookup();
        Ok(v)
    }

    /// Restore token maps after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.lookup = self
            .fields
            .iter()
            .map(|f| {
                f.tokens
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.clone(), (f.offset + i) as u32))
                    .collect()
            })
            .collect();
    }

    pub fn total(&self) -> usize {
        self.fields.last().map_or(0, |f| f.offset + f.cardinality)
    }

    pub fn index_of(&self, field: usize, token: &str) -> Option<u32> {
        self.lookup.get(field)?.get(token).copied()
    }

    pub fn field_of(&self, index: usize) -> Option<usize> {
        self.fields.iter().position(|f| f.range().contains(&index))
    }

    pub fn fields_of_kind(
        &self,
        kind: FieldKind,
    ) -> impl Iterator<Item = (usize, &FieldDescriptor)> {
        self.fields
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.kind == kind)
    }

    pub fn field_position(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn n_users(&self) -> usize {
        self.fields[0].cardinality
    }

    pub fn n_items(&self) -> usize {
        self.fields[1].cardinality
    }

    pub fn layout(&self) -> Layout {
        let ranges = |k| {
            self.fields_of_kind(k)
                .map(|(_, f)| FieldRange {
                    offset: f.offset,
                    cardinality: f.cardinality,
                })
                .collect()
        };
        Layout {
            n_users: self.n_users(),
            n_items: self.n_items(),
            user_attr: ranges(FieldKind::UserAttr),
            item_attr: ranges(FieldKind::ItemAttr),
            context: ranges(FieldKind::Context),
            total: self.total(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRange {
    pub offset: usize,
    pub cardinality: usize,
}

impl FieldRange {
    pub fn contains(&self, index: usize) -> bool {
        (self.offset..self.offset + self.cardinality).contains(&index)
    }
}

/// Shape of the feature space as seen by the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_users: usize,
    pub n_items: usize,
    pub user_attr: Vec<FieldRange>,
    pub item_attr: Vec<FieldRange>,
    pub context: Vec<FieldRange>,
    pub total: usize,
}

impl Layout {
    pub fn item_offset(&self) -> usize {
        self.n_users
    }

    /// Number of instance fields: user, item, attribute fields, behaviors, context fields.
    pub fn n_fields(&self) -> usize {
        2 + self.user_attr.len() + self.item_attr.len() + 1 + self.context.len()
    }
}
