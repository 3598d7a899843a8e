use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Categorical,
    Numerical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sensitive,
    NonSensitive,
    Label,
}

/// Metadata for one column.
///
/// `cardinality` is the number of distinct known categories of a categorical
/// feature. The encoder reserves one extra id, equal to `cardinality`, for
/// values it has not seen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    pub role: Role,
}

impl FeatureSchema {
    pub fn numerical(name: &str, role: Role) -> Self {
        FeatureSchema {
            name: name.into(),
            kind: Kind::Numerical,
            cardinality: None,
            role,
        }
    }

    pub fn categorical(name: &str, cardinality: usize, role: Role) -> Self {
        FeatureSchema {
            name: name.into(),
            kind: Kind::Categorical,
            cardinality: Some(cardinality),
            role,
        }
    }
}

/// Ordered column list with exactly one label and one sensitive column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<FeatureSchema>,
}

impl Schema {
    pub fn new(columns: Vec<FeatureSchema>) -> Result<Self> {
        let s = Schema { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column `{}`", c.name)));
            }
            match (c.kind, c.cardinality) {
                (Kind::Categorical, None) | (Kind::Categorical, Some(0)) => {
                    return Err(Error::Config(format!(
                        "categorical column `{}` needs a positive cardinality",
                        c.name
                    )))
                }
                (Kind::Numerical, Some(_)) => {
                    return Err(Error::Config(format!(
                        "numerical column `{}` cannot declare a cardinality",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        let count = |r: Role| self.columns.iter().filter(|c| c.role == r).count();
        if count(Role::Label) != 1 {
            return Err(Error::Config(format!(
                "schema needs exactly one label column, found {}",
                count(Role::Label)
            )));
        }
        if count(Role::Sensitive) != 1 {
            return Err(Error::Config(format!(
                "schema needs exactly one sensitive column, found {}",
                count(Role::Sensitive)
            )));
        }
        if count(Role::NonSensitive) == 0 {
            return Err(Error::Config("schema has no non-sensitive features".into()));
        }
        Ok(())
    }

    /// Reads a schema document: JSON when the extension is `.json`, TOML
    /// otherwise. Either holds a `columns` array of tables with the fields
    /// `name`, `kind`, `cardinality`, `role`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read schema file {}: {e}", path.display()))
        })?;
        let schema: Schema = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn label(&self) -> &FeatureSchema {
        self.columns.iter().find(|c| c.role == Role::Label).unwrap()
    }

    pub fn sensitive(&self) -> &FeatureSchema {
        self.columns
            .iter()
            .find(|c| c.role == Role::Sensitive)
            .unwrap()
    }

    /// Model-input columns, in schema order.
    pub fn features(&self) -> impl Iterator<Item = &FeatureSchema> {
        self.columns.iter().filter(|c| c.role == Role::NonSensitive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> Vec<FeatureSchema> {
        vec![
            FeatureSchema::numerical("age", Role::NonSensitive),
            FeatureSchema::categorical("sex", 2, Role::Sensitive),
            FeatureSchema::categorical("y", 2, Role::Label),
        ]
    }

    #[test]
    fn valid_schema() {
        let s = Schema::new(cols()).unwrap();
        assert_eq!(s.label().name, "y");
        assert_eq!(s.sensitive().name, "sex");
        assert_eq!(s.features().count(), 1);
    }

    #[test]
    fn role_counts_enforced() {
        let mut c = cols();
        c[1].role = Role::NonSensitive;
        assert!(matches!(Schema::new(c), Err(Error::Config(_))));
        let mut c = cols();
        c.push(FeatureSchema::numerical("y2", Role::Label));
        assert!(matches!(Schema::new(c), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip_uses_documented_fields() {
        let s = Schema::new(cols()).unwrap();
        let text = s.to_toml();
        for field in ["name", "kind", "cardinality", "role"] {
            assert!(text.contains(field), "{text}");
        }
        let back: Schema = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
