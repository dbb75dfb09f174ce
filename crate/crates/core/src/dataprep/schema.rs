use std::path::Path;

use crate::error::{Error, Result};

/// How a tabular file maps onto features, label and protected group.
///
/// Schema files are flat `key = value` text with `#` comments. List values
/// are comma separated. Recognized keys:
///
/// | key | meaning |
/// |---|---|
/// | `version` | schema revision, informational |
/// | `name` | dataset name |
/// | `label` | label column |
/// | `positive_label` | label value that counts as relevant |
/// | `protected` | protected-attribute column |
/// | `protected_value` | value mapped to group 1 (everything else is group 0) |
/// | `categorical` | columns expanded to one indicator per category |
/// | `ordinal` | columns coded as the category's index in sorted order |
/// | `ignore` | columns left out of the features |
/// | `features` | expected feature count after encoding |
///
/// Every other column must be numeric.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub name: String,
    pub version: Option<String>,
    pub label: String,
    pub positive_label: String,
    pub protected: String,
    pub protected_value: String,
    pub categorical: Vec<String>,
    pub ordinal: Vec<String>,
    pub ignore: Vec<String>,
    pub expected_features: Option<usize>,
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Schema::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected key = value", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "name" => s.name = value.to_string(),
                "version" => s.version = Some(value.to_string()),
                "label" => s.label = value.to_string(),
                "positive_label" => s.positive_label = value.to_string(),
                "protected" => s.protected = value.to_string(),
                "protected_value" => s.protected_value = value.to_string(),
                "categorical" => s.categorical = list(value),
                "ordinal" => s.ordinal = list(value),
                "ignore" => s.ignore = list(value),
                "features" => {
                    s.expected_features = Some(value.parse().map_err(|_| {
                        Error::Schema(format!("line {}: features must be a count", n + 1))
                    })?)
                }
                other => return Err(Error::Schema(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        for (key, value) in [
            ("label", &s.label),
            ("positive_label", &s.positive_label),
            ("protected", &s.protected),
            ("protected_value", &s.protected_value),
        ] {
            if value.is_empty() {
                return Err(Error::Schema(format!("missing required key {key}")));
            }
        }
        if s.label == s.protected {
            return Err(Error::Schema("label and protected column must differ".into()));
        }
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Columns the schema refers to by name.
    pub(crate) fn referenced_columns(&self) -> impl Iterator<Item = &String> {
        [&self.label, &self.protected]
            .into_iter()
            .chain(&self.categorical)
            .chain(&self.ordinal)
            .chain(&self.ignore)
    }
}
