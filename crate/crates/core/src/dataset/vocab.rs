use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::table::{ColumnData, DatasetTable, UNK_TOKEN};

/// Token → id map of one categorical column. Id 0 is always [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnVocab {
    pub column: String,
    tokens: IndexMap<String, u32>,
}

impl ColumnVocab {
    pub fn new(column: impl Into<String>) -> Self {
        let mut tokens = IndexMap::new();
        tokens.insert(UNK_TOKEN.to_string(), 0);
        Self {
            column: column.into(),
            tokens,
        }
    }

    /// Adds `token` if unseen and returns its id.
    pub fn insert(&mut self, token: &str) -> u32 {
        let next = self.tokens.len() as u32;
        *self.tokens.entry(token.to_string()).or_insert(next)
    }

    /// Id of `token`, or 0 when it was never seen.
    pub fn id(&self, token: Option<&str>) -> u32 {
        token.and_then(|t| self.tokens.get(t).copied()).unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get_index(id as usize).map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&str, u32)> {
        self.tokens.iter().map(|(t, &i)| (t.as_str(), i))
    }
}

/// One [`ColumnVocab`] per categorical column, in schema order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub columns: Vec<ColumnVocab>,
}

impl Vocabulary {
    pub fn get(&self, column: &str) -> Option<&ColumnVocab> {
        self.columns.iter().find(|c| c.column == column)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.columns.iter().map(ColumnVocab::len).collect()
    }
}

/// Assigns ids 1..K per categorical column in order of first appearance.
pub fn build_vocabulary(train: &DatasetTable) -> Vocabulary {
    let columns = train
        .schema()
        .features()
        .zip(train.columns())
        .filter_map(|(spec, col)| match col {
            ColumnData::Categorical(c) => {
                let mut v = ColumnVocab::new(&spec.name);
                for tok in c.iter().flatten() {
                    v.insert(tok);
                }
                Some(v)
            }
            ColumnData::Continuous(_) => None,
        })
        .collect();
    Vocabulary { columns }
}
