use std::collections::HashMap;
use std::path::Path;

use super::schema::{ColumnKind, Schema};
use crate::error::{Error, Result};

/// Sentinel token that missing categorical cells are imputed with. It always
/// encodes to id 0.
pub const UNK_TOKEN: &str = "[UNK]";

/// Interned text column; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoricalColumn {
    levels: Vec<String>,
    codes: Vec<Option<u32>>,
    index: HashMap<String, u32>,
}

impl CategoricalColumn {
    pub fn push(&mut self, token: Option<&str>) {
        let code = token.map(|t| self.intern(t));
        self.codes.push(code);
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&c) = self.index.get(token) {
            return c;
        }
        let c = self.levels.len() as u32;
        self.levels.push(token.to_string());
        self.index.insert(token.to_string(), c);
        c
    }

    pub fn get(&self, row: usize) -> Option<&str> {
        self.codes[row].map(|c| self.levels[c as usize].as_str())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&str>> + '_ {
        self.codes.iter().map(|c| c.map(|c| self.levels[c as usize].as_str()))
    }

    pub fn missing(&self) -> usize {
        self.codes.iter().filter(|c| c.is_none()).count()
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            levels: self.levels.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
            index: self.index.clone(),
        }
    }

    pub(crate) fn fill_missing(&mut self, token: &str) {
        if self.codes.iter().all(Option::is_some) {
            return;
        }
        let code = self.intern(token);
        for c in &mut self.codes {
            if c.is_none() {
                *c = Some(code);
            }
        }
    }
}

impl<'a> FromIterator<Option<&'a str>> for CategoricalColumn {
    fn from_iter<I: IntoIterator<Item = Option<&'a str>>>(iter: I) -> Self {
        let mut col = Self::default();
        for t in iter {
            col.push(t);
        }
        col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// `NaN` marks a missing cell.
    Continuous(Vec<f64>),
    Categorical(CategoricalColumn),
}

impl ColumnData {
    fn empty(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Continuous => ColumnData::Continuous(Vec::new()),
            _ => ColumnData::Categorical(CategoricalColumn::default()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_cell(&mut self, cell: &str) {
        let cell = cell.trim();
        match self {
            ColumnData::Continuous(v) => v.push(parse_continuous(cell)),
            ColumnData::Categorical(c) => c.push((!cell.is_empty()).then_some(cell)),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(c) => ColumnData::Categorical(c.select(rows)),
        }
    }
}

fn parse_continuous(cell: &str) -> f64 {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => f64::NAN,
    }
}

fn parse_label(cell: &str) -> Option<u8> {
    match cell.trim() {
        "0" | "0.0" | "false" | "False" => Some(0),
        "1" | "1.0" | "true" | "True" => Some(1),
        _ => None,
    }
}

/// Column-oriented traffic records. `columns` follows the schema's feature
/// order; labels are kept separately (0 = normal, 1 = attack).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    schema: Schema,
    columns: Vec<ColumnData>,
    labels: Vec<u8>,
}

impl DatasetTable {
    pub fn new(schema: Schema, columns: Vec<ColumnData>, labels: Vec<u8>) -> Result<Self> {
        let features: Vec<_> = schema.features().collect();
        if columns.len() != features.len() {
            return Err(Error::Dataset(format!(
                "{} columns for {} schema features",
                columns.len(),
                features.len()
            )));
        }
        for (spec, col) in features.iter().zip(&columns) {
            let ok = matches!(
                (spec.kind, col),
                (ColumnKind::Continuous, ColumnData::Continuous(_))
                    | (ColumnKind::Categorical, ColumnData::Categorical(_))
            );
            if !ok {
                return Err(Error::Dataset(format!("column {:?} has the wrong kind", spec.name)));
            }
            if col.len() != labels.len() {
                return Err(Error::Dataset(format!(
                    "column {:?} has {} cells, expected {}",
                    spec.name,
                    col.len(),
                    labels.len()
                )));
            }
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Dataset("labels must be 0 or 1".into()));
        }
        Ok(Self {
            schema,
            columns,
            labels,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = schema.features().map(|c| ColumnData::empty(c.kind)).collect();
        Self {
            schema,
            columns,
            labels: Vec::new(),
        }
    }

    /// Builds a table from text records whose cells follow schema order
    /// (label included). Empty cells are missing.
    pub fn from_records<'a, I, R>(schema: Schema, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[&'a str]>,
    {
        let mut table = Self::empty(schema);
        let order: Vec<usize> = (0..table.schema.columns().len()).collect();
        for (i, rec) in records.into_iter().enumerate() {
            let rec = rec.as_ref();
            table.push_record(
                &order,
                |k| rec.get(k).copied(),
                rec.len(),
                Path::new("<records>"),
                i as u64 + 1,
            )?;
        }
        Ok(table)
    }

    /// `order[k]` is the position in the source record of schema column `k`.
    fn push_record<'r>(
        &mut self,
        order: &[usize],
        cell: impl Fn(usize) -> Option<&'r str>,
        found: usize,
        path: &Path,
        line: u64,
    ) -> Result<()> {
        let expected = self.schema.columns().len();
        if found != expected {
            return Err(Error::RowLength {
                path: path.to_path_buf(),
                line,
                expected,
                found,
            });
        }
        let mut feature = 0;
        let mut label = None;
        for (k, spec) in self.schema.columns().iter().enumerate() {
            let text = cell(order[k]).unwrap_or("");
            if spec.kind == ColumnKind::Label {
                label = Some(parse_label(text).ok_or_else(|| Error::InvalidLabel {
                    path: path.to_path_buf(),
                    line,
                    value: text.to_string(),
                })?);
            } else {
                self.columns[feature].push_cell(text);
                feature += 1;
            }
        }
        self.labels.push(label.expect("schema has a label"));
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [ColumnData] {
        &mut self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.schema
            .features()
            .position(|c| c.name == name)
            .map(|i| &self.columns[i])
    }

    /// `(normal, attack)` row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let attack = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - attack, attack)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Row-wise concatenation; all tables must share a schema.
    pub fn concat(tables: &[DatasetTable]) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Dataset("nothing to concatenate".into()))?;
        let mut out = Self::empty(first.schema.clone());
        for t in tables {
            if t.schema != first.schema {
                return Err(Error::Dataset(
                    "cannot concatenate tables with different schemas".into(),
                ));
            }
            for (dst, src) in out.columns.iter_mut().zip(&t.columns) {
                match (dst, src) {
                    (ColumnData::Continuous(d), ColumnData::Continuous(s)) => d.extend_from_slice(s),
                    (ColumnData::Categorical(d), ColumnData::Categorical(s)) => {
                        for tok in s.iter() {
                            d.push(tok);
                        }
                    }
                    _ => unreachable!("schemas are equal"),
                }
            }
            out.labels.extend_from_slice(&t.labels);
        }
        Ok(out)
    }
}

/// Reads a UTF-8, comma-delimited CSV whose header names exactly the schema
/// columns (in any order). Empty or unparseable continuous cells become
/// missing.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<DatasetTable> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let header = reader.headers().map_err(csv_err)?.clone();
    let header: Vec<&str> = header.iter().map(str::trim).collect();

    let mut missing = Vec::new();
    let mut order = Vec::with_capacity(schema.columns().len());
    for spec in schema.columns() {
        match header.iter().position(|h| *h == spec.name) {
            Some(p) => order.push(p),
            None => missing.push(spec.name.clone()),
        }
    }
    let unexpected: Vec<String> = header
        .iter()
        .filter(|h| schema.kind_of(h).is_none())
        .map(|h| h.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() || header.len() != schema.columns().len() {
        return Err(Error::SchemaMismatch { missing, unexpected });
    }

    let mut table = DatasetTable::empty(schema.clone());
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        table.push_record(&order, |k| record.get(k), record.len(), path, line)?;
    }
    Ok(table)
}
