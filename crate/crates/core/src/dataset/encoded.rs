use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::NormalizationStats;
use super::schema::{ColumnKind, Schema};
use super::table::{ColumnData, DatasetTable};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::ModelInput;

/// Selected feature names split by kind, each list in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSet {
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
}

impl FeatureSet {
    /// Resolves `selected` against the schema. Unknown names are an error.
    pub fn from_selection(schema: &Schema, selected: &[String]) -> Result<Self> {
        if let Some(bad) = selected
            .iter()
            .find(|n| !matches!(schema.kind_of(n), Some(k) if k != ColumnKind::Label))
        {
            return Err(Error::UnknownFeature(bad.clone()));
        }
        let mut set = Self::default();
        for spec in schema.features() {
            if selected.contains(&spec.name) {
                match spec.kind {
                    ColumnKind::Categorical => set.categorical.push(spec.name.clone()),
                    _ => set.continuous.push(spec.name.clone()),
                }
            }
        }
        Ok(set)
    }

    pub fn all(schema: &Schema) -> Self {
        Self::from_selection(schema, &schema.feature_names()).expect("schema features")
    }

    pub fn len(&self) -> usize {
        self.categorical.len() + self.continuous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.categorical.iter().chain(&self.continuous).cloned().collect()
    }
}

/// Model-ready rows: token ids (`n × m`), normalised continuous values
/// (`n × c`) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    features: FeatureSet,
    vocab_sizes: Vec<usize>,
    cat: Vec<u32>,
    cont: Vec<f32>,
    labels: Vec<u8>,
}

impl EncodedDataset {
    pub fn new(
        features: FeatureSet,
        vocab_sizes: Vec<usize>,
        cat: Vec<u32>,
        cont: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let (m, c, n) = (features.categorical.len(), features.continuous.len(), labels.len());
        if vocab_sizes.len() != m {
            return Err(Error::Dataset(format!(
                "{} vocabulary sizes for {m} categorical columns",
                vocab_sizes.len()
            )));
        }
        if cat.len() != n * m || cont.len() != n * c {
            return Err(Error::Dataset(format!(
                "matrix sizes {} and {} do not match {n} rows of {m} + {c} features",
                cat.len(),
                cont.len()
            )));
        }
        if m > 0 {
            for row in cat.chunks(m) {
                if let Some(i) = (0..m).find(|&i| row[i] as usize >= vocab_sizes[i]) {
                    return Err(Error::Dataset(format!(
                        "token id {} out of range for column {:?}",
                        row[i], features.categorical[i]
                    )));
                }
            }
        }
        if cont.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("continuous values must be finite".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Dataset("labels must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            vocab_sizes,
            cat,
            cont,
            labels,
        })
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.features.categorical.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.features.continuous.len()
    }

    pub fn cat(&self) -> &[u32] {
        &self.cat
    }

    pub fn cont(&self) -> &[f32] {
        &self.cont
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            rows: self.n_rows(),
            cat: &self.cat,
            cont: &self.cont,
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let attack = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - attack, attack)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let (m, c) = (self.n_categorical(), self.n_continuous());
        let mut cat = Vec::with_capacity(rows.len() * m);
        let mut cont = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            cat.extend_from_slice(&self.cat[r * m..(r + 1) * m]);
            cont.extend_from_slice(&self.cont[r * c..(r + 1) * c]);
        }
        Self {
            features: self.features.clone(),
            vocab_sizes: self.vocab_sizes.clone(),
            cat,
            cont,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Keeps only the named columns. The result lists them in the order they
    /// already had here.
    pub fn select_features(&self, names: &[String]) -> Result<Self> {
        if let Some(bad) = names
            .iter()
            .find(|n| !self.features.categorical.contains(n) && !self.features.continuous.contains(n))
        {
            return Err(Error::UnknownFeature(bad.clone()));
        }
        let cat_idx: Vec<usize> = (0..self.n_categorical())
            .filter(|&i| names.contains(&self.features.categorical[i]))
            .collect();
        let cont_idx: Vec<usize> = (0..self.n_continuous())
            .filter(|&i| names.contains(&self.features.continuous[i]))
            .collect();
        let (m, c) = (self.n_categorical(), self.n_continuous());
        let n = self.n_rows();
        let mut cat = Vec::with_capacity(n * cat_idx.len());
        let mut cont = Vec::with_capacity(n * cont_idx.len());
        for r in 0..n {
            cat.extend(cat_idx.iter().map(|&i| self.cat[r * m + i]));
            cont.extend(cont_idx.iter().map(|&i| self.cont[r * c + i]));
        }
        Ok(Self {
            features: FeatureSet {
                categorical: cat_idx.iter().map(|&i| self.features.categorical[i].clone()).collect(),
                continuous: cont_idx.iter().map(|&i| self.features.continuous[i].clone()).collect(),
            },
            vocab_sizes: cat_idx.iter().map(|&i| self.vocab_sizes[i]).collect(),
            cat,
            cont,
            labels: self.labels.clone(),
        })
    }

    /// `ceil(n / batch_size)` batches; the order is shuffled with `seed` when
    /// `shuffle` is set.
    pub fn batches(&self, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.n_rows()).collect();
        if shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(order.chunks(batch_size).map(|rows| Batch::gather(self, rows)).collect())
    }
}

/// A contiguous copy of some dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub cat: Vec<u32>,
    pub cont: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Batch {
    fn gather(data: &EncodedDataset, rows: &[usize]) -> Self {
        let sub = data.select_rows(rows);
        Self {
            rows: rows.to_vec(),
            cat: sub.cat,
            cont: sub.cont,
            labels: sub.labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            rows: self.len(),
            cat: &self.cat,
            cont: &self.cont,
        }
    }
}

/// Encodes the selected features of `table`: categorical tokens through
/// `vocab` (unknown tokens → 0) and continuous values through `stats`.
pub fn encode(
    table: &DatasetTable,
    vocab: &Vocabulary,
    stats: &NormalizationStats,
    selected: &[String],
) -> Result<EncodedDataset> {
    let schema = table.schema();
    let features = FeatureSet::from_selection(schema, selected)?;
    let n = table.n_rows();
    let column = |name: &str| table.column(name).expect("resolved against schema");

    let m = features.categorical.len();
    let mut cat = vec![0u32; n * m];
    let mut vocab_sizes = Vec::with_capacity(m);
    for (i, name) in features.categorical.iter().enumerate() {
        let v = vocab
            .get(name)
            .ok_or_else(|| Error::FeatureMismatch(vec![name.clone()]))?;
        vocab_sizes.push(v.len());
        let ColumnData::Categorical(col) = column(name) else {
            unreachable!()
        };
        for (r, tok) in col.iter().enumerate() {
            cat[r * m + i] = v.id(tok);
        }
    }

    let c = features.continuous.len();
    let mut cont = vec![0f32; n * c];
    for (i, name) in features.continuous.iter().enumerate() {
        let scale = stats
            .get(name)
            .ok_or_else(|| Error::FeatureMismatch(vec![name.clone()]))?;
        let ColumnData::Continuous(col) = column(name) else {
            unreachable!()
        };
        for (r, &x) in col.iter().enumerate() {
            if x.is_nan() {
                return Err(Error::Dataset(format!(
                    "column {name:?} still has missing values; impute before encoding"
                )));
            }
            cont[r * c + i] = scale.apply(x) as f32;
        }
    }
    EncodedDataset::new(features, vocab_sizes, cat, cont, table.labels().to_vec())
}

/// Seeded class-stratified sample of `target` row indices, ascending. Each
/// class keeps its share of `target`, rounded to the nearest row.
pub fn stratified_indices(labels: &[u8], target: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if target >= n {
        return (0..n).collect();
    }
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
    let keep_pos = ((target as f64 * pos.len() as f64 / n as f64).round() as usize).min(pos.len());
    let keep_neg = (target - keep_pos).min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = rand::seq::index::sample(&mut rng, pos.len(), keep_pos)
        .into_iter()
        .map(|i| pos[i])
        .chain(
            rand::seq::index::sample(&mut rng, neg.len(), keep_neg)
                .into_iter()
                .map(|i| neg[i]),
        )
        .collect();
    out.sort_unstable();
    out
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!(
                "fractions {}/{}/{} must be positive and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Seeded permutation of `0..n` cut at `floor(train·n)` and
/// `floor((train+val)·n)`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // The epsilon keeps exact products such as 0.9 · 1000 from flooring to 899.
    let a = (spec.train * n as f64 + 1e-9).floor() as usize;
    let b = ((spec.train + spec.val) * n as f64 + 1e-9).floor() as usize;
    let b = b.min(n);
    if a == 0 || b == a || b == n {
        return Err(Error::Split(format!("{n} rows are too few for a three-way split")));
    }
    let test = order.split_off(b);
    let val = order.split_off(a);
    Ok((order, val, test))
}

pub fn split(data: &EncodedDataset, spec: &SplitSpec) -> Result<(EncodedDataset, EncodedDataset, EncodedDataset)> {
    let (a, b, c) = split_indices(data.n_rows(), spec)?;
    Ok((data.select_rows(&a), data.select_rows(&b), data.select_rows(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_vocabulary, fit_normalization, UNK_TOKEN};

    fn toy(n: usize) -> EncodedDataset {
        let features = FeatureSet {
            categorical: vec!["p".into()],
            continuous: vec!["x".into()],
        };
        let cat = (0..n as u32).map(|i| i % 3).collect();
        let cont = (0..n).map(|i| i as f32).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        EncodedDataset::new(features, vec![3], cat, cont, labels).unwrap()
    }

    #[test]
    fn split_sizes() {
        for (n, want) in [(1000, (800, 100, 100)), (1001, (800, 100, 101)), (10, (8, 1, 1))] {
            let (a, b, c) = split_indices(n, &SplitSpec::with_seed(1)).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), want, "n = {n}");
        }
        assert!(split_indices(5, &SplitSpec::default()).is_err());
        assert!(split_indices(0, &SplitSpec::default()).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let d = toy(50);
        let s = SplitSpec::with_seed(9);
        assert_eq!(split(&d, &s).unwrap(), split(&d, &s).unwrap());
        assert_ne!(
            split(&d, &s).unwrap().0,
            split(&d, &SplitSpec::with_seed(10)).unwrap().0
        );
    }

    #[test]
    fn bad_fractions() {
        let s = SplitSpec {
            train: 0.8,
            val: 0.2,
            test: 0.0,
            seed: 0,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn stratified_sample_keeps_class_ratio() {
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 4 == 0)).collect();
        let idx = stratified_indices(&labels, 100, 7);
        assert_eq!(idx.len(), 100);
        assert_eq!(idx.iter().filter(|&&i| labels[i] == 1).count(), 25);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, stratified_indices(&labels, 100, 7));
        assert_eq!(stratified_indices(&labels, 5000, 7).len(), 1000);
    }

    #[test]
    fn batch_counts() {
        let d = toy(530);
        let b = d.batches(265, true, 0).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![265, 265]);
        assert_eq!(toy(5).batches(265, false, 0).unwrap()[0].len(), 5);
        let ordered = d.batches(100, false, 0).unwrap();
        assert_eq!(ordered[0].rows, (0..100).collect::<Vec<_>>());
        assert_eq!(ordered.len(), 6);
        assert!(d.batches(0, false, 0).is_err());
        assert_eq!(d.batches(64, true, 3).unwrap(), d.batches(64, true, 3).unwrap());
    }

    #[test]
    fn encode_selected_features() {
        let schema = Schema::parse("a,categorical\nb,continuous\nc,categorical\nd,continuous\ny,label\n").unwrap();
        let recs: Vec<Vec<String>> = (0..10)
            .map(|i| {
                vec![
                    format!("t{}", i % 2),
                    i.to_string(),
                    "k".into(),
                    "1".into(),
                    (i % 2).to_string(),
                ]
            })
            .collect();
        let refs: Vec<Vec<&str>> = recs.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
        let t = DatasetTable::from_records(schema, refs).unwrap();
        let vocab = build_vocabulary(&t);
        let stats = fit_normalization(&t);
        let sel = vec!["d".to_string(), "a".to_string(), "b".to_string()];
        let e = encode(&t, &vocab, &stats, &sel).unwrap();
        assert_eq!(e.features().categorical, vec!["a"]);
        assert_eq!(e.features().continuous, vec!["b", "d"]);
        assert_eq!((e.cat().len(), e.cont().len()), (10, 20));
        assert_eq!(&e.cat()[..2], &[1, 2]);
        assert_eq!(e.vocab_sizes(), &[3]);
        assert!(matches!(
            encode(&t, &vocab, &stats, &["zz".to_string()]),
            Err(Error::UnknownFeature(_))
        ));
        let empty = encode(&t.select_rows(&[]), &vocab, &stats, &sel).unwrap();
        assert_eq!(empty.n_rows(), 0);
        assert_eq!((empty.n_categorical(), empty.n_continuous()), (1, 2));
    }

    #[test]
    fn unseen_token_encodes_to_zero() {
        let schema = Schema::parse("p,categorical\nx,continuous\ny,label\n").unwrap();
        let train = DatasetTable::from_records(schema.clone(), [["TCP", "1", "0"], ["MQTT", "2", "1"]]).unwrap();
        let test = DatasetTable::from_records(schema, [["UDP", "1", "0"], [UNK_TOKEN, "1", "0"]]).unwrap();
        let e = encode(
            &test,
            &build_vocabulary(&train),
            &fit_normalization(&train),
            &["p".into(), "x".into()],
        )
        .unwrap();
        assert_eq!(e.cat(), &[0, 0]);
    }

    #[test]
    fn select_features_subsets_columns() {
        let d = toy(4);
        let s = d.select_features(&["x".into()]).unwrap();
        assert_eq!(s.n_categorical(), 0);
        assert_eq!(s.cont(), d.cont());
        assert!(d.select_features(&["q".into()]).is_err());
    }
}
