use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Id,
    Categorical,
    Timestamp,
}

/// What a column contributes to an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    User,
    Item,
    /// The timestamp used to order behaviors.
    EventTime,
    UserAttr,
    ItemAttr,
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub column: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
    pub role: FieldRole,
    /// Bucket width for timestamp-typed context fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_seconds: Option<i64>,
}

impl FieldSpec {
    pub fn new(name: &str, column: &str, column_type: ColumnType, role: FieldRole) -> Self {
        FieldSpec {
            name: name.to_string(),
            column: column.to_string(),
            column_type,
            role,
            bucket_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub fields: Vec<FieldSpec>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Separator for multi-valued categorical cells.
    #[serde(default = "default_multi_sep")]
    pub multi_value_separator: char,
}

fn default_delimiter() -> char {
    ','
}

fn default_multi_sep() -> char {
    '|'
}

impl Schema {
    pub fn new(fields: Vec<FieldSpec>) -> Self {
        Schema {
            fields,
            delimiter: default_delimiter(),
            multi_value_separator: default_multi_sep(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let count = |role: FieldRole| self.fields.iter().filter(|f| f.role == role).count();
        for (role, name) in [
            (FieldRole::User, "user"),
            (FieldRole::Item, "item"),
            (FieldRole::EventTime, "event_time"),
        ] {
            if count(role) != 1 {
                return Err(Error::config(
                    "data.schema.fields",
                    format!("exactly one field with role `{name}` required"),
                ));
            }
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::config(
                "data.schema.delimiter",
                "must be an ASCII character",
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, f) in self.fields.iter().enumerate() {
            let path = format!("data.schema.fields[{i}]");
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(
                    path,
                    format!("duplicate field name `{}`", f.name),
                ));
            }
            let ok = match f.role {
                FieldRole::User | FieldRole::Item => f.column_type == ColumnType::Id,
                FieldRole::EventTime => f.column_type == ColumnType::Timestamp,
                FieldRole::UserAttr | FieldRole::ItemAttr => {
                    f.column_type == ColumnType::Categorical
                }
                FieldRole::Context => true,
            };
            if !ok {
                return Err(Error::config(
                    format!("{path}.type"),
                    format!("type {:?} not allowed for role {:?}", f.column_type, f.role),
                ));
            }
            if f.role == FieldRole::Context && f.column_type == ColumnType::Timestamp {
                match f.bucket_seconds {
                    Some(b) if b > 0 => {}
                    _ => {
                        return Err(Error::config(
                            format!("{path}.bucket_seconds"),
                            "timestamp context fields need a positive bucket width",
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn field_with_role(&self, role: FieldRole) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.role == role)
    }

    pub fn fields_with_role(&self, role: FieldRole) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(move |f| f.role == role)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_user_field() {
        let s = Schema::new(vec![
            FieldSpec::new("item", "item", ColumnType::Id, FieldRole::Item),
            FieldSpec::new("ts", "ts", ColumnType::Timestamp, FieldRole::EventTime),
        ]);
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let raw = r#"{"fields": [], "bogus": 1}"#;
        assert!(serde_json::from_str::<Schema>(raw).is_err());
    }

    #[test]
    fn timestamp_context_needs_bucket() {
        let mut s = Schema::new(vec![
            FieldSpec::new("user", "u", ColumnType::Id, FieldRole::User),
            FieldSpec::new("item", "i", ColumnType::Id, FieldRole::Item),
            FieldSpec::new("ts", "t", ColumnType::Timestamp, FieldRole::EventTime),
            FieldSpec::new("hour", "t", ColumnType::Timestamp, FieldRole::Context),
        ]);
        assert!(s.validate().is_err());
        s.fields[3].bucket_seconds = Some(3600);
        s.validate().unwrap();
    }
}
