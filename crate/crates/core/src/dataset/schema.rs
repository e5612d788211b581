use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Label,
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "categorical" => Ok(ColumnKind::Categorical),
            "continuous" => Ok(ColumnKind::Continuous),
            "label" => Ok(ColumnKind::Label),
            other => Err(Error::Schema(format!(
                "unknown column kind {other:?} (expected categorical, continuous or label)"
            ))),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Continuous => "continuous",
            ColumnKind::Label => "label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered column list with exactly one label column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

/// The 25 packet features of the MQTT-IoT-IDS2020 packet CSVs plus the label.
pub const DEFAULT_SCHEMA: &str = "\
protocol,categorical
ttl,continuous
ip_len,continuous
ip_flag_df,continuous
ip_flag_mf,continuous
ip_flag_rb,continuous
tcp_flag_res,continuous
tcp_flag_ns,continuous
tcp_flag_cwr,continuous
tcp_flag_ecn,continuous
tcp_flag_urg,continuous
tcp_flag_ack,categorical
tcp_flag_push,categorical
tcp_flag_reset,categorical
tcp_flag_syn,categorical
tcp_flag_fin,categorical
mqtt_message_type,categorical
mqtt_message_length,continuous
mqtt_flag_uname,continuous
mqtt_flag_passwd,continuous
mqtt_flag_retain,continuous
mqtt_flag_qos,categorical
mqtt_flag_willflag,continuous
mqtt_flag_clean,continuous
mqtt_flag_reserved,continuous
is_attack,label
";

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", c.name)));
            }
        }
        let count = |k| columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Label) != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {}",
                count(ColumnKind::Label)
            )));
        }
        if count(ColumnKind::Categorical) == 0 {
            return Err(Error::Schema("at least one categorical column is required".into()));
        }
        if count(ColumnKind::Continuous) == 0 {
            return Err(Error::Schema("at least one continuous column is required".into()));
        }
        Ok(Self { columns })
    }

    /// Parses `<name>,<kind>` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line
                .split_once(',')
                .ok_or_else(|| Error::Schema(format!("line {}: expected `<name>,<kind>`", i + 1)))?;
            columns.push(ColumnSpec {
                name: name.trim().to_string(),
                kind: kind.parse()?,
            });
        }
        Self::new(columns)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn mqtt_default() -> Self {
        Self::parse(DEFAULT_SCHEMA).expect("built-in schema is valid")
    }

    pub fn to_text(&self) -> String {
        self.columns
            .iter()
            .map(|c| format!("{},{}\n", c.name, c.kind))
            .collect()
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    /// Feature columns (everything except the label), in schema order.
    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Label)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features().map(|c| c.name.clone()).collect()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn label_name(&self) -> &str {
        &self
            .columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated")
            .name
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_25_features() {
        let s = Schema::mqtt_default();
        assert_eq!(s.n_features(), 25);
        assert_eq!(s.label_name(), "is_attack");
        for name in ["protocol", "tcp_flag_push", "mqtt_message_type"] {
            assert_eq!(s.kind_of(name), Some(ColumnKind::Categorical), "{name}");
        }
        for name in ["ttl", "ip_len", "mqtt_message_length"] {
            assert_eq!(s.kind_of(name), Some(ColumnKind::Continuous), "{name}");
        }
    }

    #[test]
    fn parse_round_trips_text() {
        let s = Schema::mqtt_default();
        assert_eq!(Schema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn rejects_invalid_schemas() {
        assert!(Schema::parse("a,categorical\nb,continuous\n").is_err());
        assert!(Schema::parse("a,categorical\nb,continuous\ny,label\nz,label\n").is_err());
        assert!(Schema::parse("a,continuous\ny,label\n").is_err());
        assert!(Schema::parse("a,categorical\na,continuous\ny,label\n").is_err());
        assert!(Schema::parse("a,nominal\nb,continuous\ny,label\n").is_err());
    }
}
