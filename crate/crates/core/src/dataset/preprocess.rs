//! Per-file cleaning and balancing, and z-score normalisation fitted on the
//! training split.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::ColumnKind;
use super::table::{ColumnData, DatasetTable, UNK_TOKEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMean {
    pub column: String,
    pub mean: f64,
}

/// Means used to fill missing continuous cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputationStats {
    pub means: Vec<ColumnMean>,
}

/// Replaces missing continuous cells with the column mean of the
/// non-missing values and missing categorical cells with [`UNK_TOKEN`].
///
/// A zero-row table passes through with zero means; a non-empty continuous
/// column without any value is an error.
pub fn impute_missing(table: &DatasetTable) -> Result<(DatasetTable, ImputationStats)> {
    let mut out = table.clone();
    let names: Vec<_> = table.schema().features().map(|c| c.name.clone()).collect();
    let mut stats = ImputationStats::default();
    for (name, col) in names.into_iter().zip(out.columns_mut()) {
        match col {
            ColumnData::Continuous(values) => {
                let (sum, count) = values
                    .iter()
                    .filter(|v| !v.is_nan())
                    .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
                let mean = match count {
                    0 if values.is_empty() => 0.0,
                    0 => return Err(Error::EmptyColumn(name)),
                    n => sum / n as f64,
                };
                for v in values.iter_mut().filter(|v| v.is_nan()) {
                    *v = mean;
                }
                stats.means.push(ColumnMean { column: name, mean });
            }
            ColumnData::Categorical(c) => c.fill_missing(UNK_TOKEN),
        }
    }
    Ok((out, stats))
}

/// Row selection produced by [`plan_balance`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalancePlan {
    /// Rows kept from each input table, ascending.
    pub kept: Vec<Vec<usize>>,
    /// Surplus attack rows appended to the last table, as `(table, row)`.
    pub appended: Vec<(usize, usize)>,
}

impl BalancePlan {
    /// `(normal, attack)` counts of every output table.
    pub fn output_counts(&self, labels: &[&[u8]]) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> = self
            .kept
            .iter()
            .zip(labels)
            .map(|(rows, l)| {
                let attack = rows.iter().filter(|&&r| l[r] == 1).count();
                (rows.len() - attack, attack)
            })
            .collect();
        if let Some(last) = counts.last_mut() {
            last.1 += self.appended.len();
        }
        counts
    }
}

fn sorted_sample(rng: &mut ChaCha8Rng, pool: &[usize], amount: usize) -> Vec<usize> {
    let mut out: Vec<usize> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    out.sort_unstable();
    out
}

/// Plans the balancing of the five capture files from their labels alone.
///
/// Each of the first four tables keeps `min(normal, attack)` rows of either
/// class, undersampling the majority uniformly at random. Attack rows dropped
/// that way are pooled, and `min(pool, normal_5)` of them are appended to the
/// normal-only fifth table. If the pool is too small the fifth table's normal
/// rows are undersampled to match.
pub fn plan_balance(labels: &[&[u8]], seed: u64) -> Result<BalancePlan> {
    if labels.len() != 5 {
        return Err(Error::Balance(format!("expected 5 tables, got {}", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(5);
    let mut pool: Vec<(usize, Vec<usize>)> = Vec::new();

    for (t, l) in labels[..4].iter().enumerate() {
        let normal: Vec<usize> = (0..l.len()).filter(|&r| l[r] == 0).collect();
        let attack: Vec<usize> = (0..l.len()).filter(|&r| l[r] == 1).collect();
        if normal.is_empty() || attack.is_empty() {
            return Err(Error::Balance(format!(
                "table {} has {} normal and {} attack rows; both classes are required",
                t + 1,
                normal.len(),
                attack.len()
            )));
        }
        let n = normal.len().min(attack.len());
        let keep_normal = if normal.len() > n {
            sorted_sample(&mut rng, &normal, n)
        } else {
            normal
        };
        let keep_attack = if attack.len() > n {
            let chosen = sorted_sample(&mut rng, &attack, n);
            let surplus = difference(&attack, &chosen);
            pool.push((t, surplus));
            chosen
        } else {
            attack
        };
        let mut rows = keep_normal;
        rows.extend(keep_attack);
        rows.sort_unstable();
        kept.push(rows);
    }

    let last = labels[4];
    if last.contains(&1) {
        return Err(Error::Balance("the fifth table must contain only normal rows".into()));
    }
    let pool_size: usize = pool.iter().map(|(_, r)| r.len()).sum();
    let take = pool_size.min(last.len());
    let picks = {
        let mut p = index::sample(&mut rng, pool_size, take).into_vec();
        p.sort_unstable();
        p
    };
    let mut appended = Vec::with_capacity(take);
    let mut offset = 0;
    let mut part = 0;
    for pos in picks {
        while pos >= offset + pool[part].1.len() {
            offset += pool[part].1.len();
            part += 1;
        }
        appended.push((pool[part].0, pool[part].1[pos - offset]));
    }
    let last_rows: Vec<usize> = if take < last.len() {
        let all: Vec<usize> = (0..last.len()).collect();
        sorted_sample(&mut rng, &all, take)
    } else {
        (0..last.len()).collect()
    };
    kept.push(last_rows);
    Ok(BalancePlan { kept, appended })
}

/// Elements of sorted `all` that are not in sorted `remove`.
fn difference(all: &[usize], remove: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(all.len() - remove.len());
    let mut j = 0;
    for &v in all {
        if j < remove.len() && remove[j] == v {
            j += 1;
        } else {
            out.push(v);
        }
    }
    out
}

/// Applies [`plan_balance`] to the five capture tables.
pub fn balance_files(tables: &[DatasetTable], seed: u64) -> Result<Vec<DatasetTable>> {
    let labels: Vec<&[u8]> = tables.iter().map(DatasetTable::labels).collect();
    let plan = plan_balance(&labels, seed)?;
    let mut out: Vec<DatasetTable> = tables
        .iter()
        .zip(&plan.kept)
        .map(|(t, rows)| t.select_rows(rows))
        .collect();
    if !plan.appended.is_empty() {
        let mut parts = vec![out.pop().expect("five tables")];
        let mut start = 0;
        while start < plan.appended.len() {
            let src = plan.appended[start].0;
            let end = start + plan.appended[start..].iter().take_while(|(t, _)| *t == src).count();
            let rows: Vec<usize> = plan.appended[start..end].iter().map(|&(_, r)| r).collect();
            parts.push(tables[src].select_rows(&rows));
            start = end;
        }
        out.push(DatasetTable::concat(&parts)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-column z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub columns: Vec<ColumnScale>,
}

impl NormalizationStats {
    pub fn get(&self, column: &str) -> Option<&ColumnScale> {
        self.columns.iter().find(|c| c.column == column)
    }

    /// Keeps only the named columns, in the given order.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| {
                self.get(n)
                    .cloned()
                    .ok_or_else(|| Error::FeatureMismatch(vec![n.clone()]))
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }
}

impl ColumnScale {
    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// Fits mean and population std over non-missing values of every
/// continuous column.
pub fn fit_normalization(train: &DatasetTable) -> NormalizationStats {
    let columns = train
        .schema()
        .features()
        .zip(train.columns())
        .filter_map(|(spec, col)| match col {
            ColumnData::Continuous(values) => {
                let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
                let n = finite.len() as f64;
                let (mean, std) = if finite.is_empty() {
                    (0.0, 0.0)
                } else {
                    let mean = finite.iter().sum::<f64>() / n;
                    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                };
                Some(ColumnScale {
                    column: spec.name.clone(),
                    mean,
                    std,
                })
            }
            ColumnData::Categorical(_) => None,
        })
        .collect();
    NormalizationStats { columns }
}

/// `x → (x − mean)/std`; zero-variance columns become all zeros.
pub fn apply_normalization(table: &DatasetTable, stats: &NormalizationStats) -> Result<DatasetTable> {
    let mut out = table.clone();
    let specs: Vec<_> = table.schema().features().cloned().collect();
    for (spec, col) in specs.iter().zip(out.columns_mut()) {
        if spec.kind != ColumnKind::Continuous {
            continue;
        }
        let scale = stats
            .get(&spec.name)
            .ok_or_else(|| Error::FeatureMismatch(vec![spec.name.clone()]))?;
        if let ColumnData::Continuous(values) = col {
            for v in values.iter_mut() {
                *v = scale.apply(*v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn schema() -> Schema {
        Schema::parse("proto,categorical\nx,continuous\ny,label\n").unwrap()
    }

    fn table(xs: &[&str], labels: &[&str]) -> DatasetTable {
        let recs: Vec<[&str; 3]> = xs.iter().zip(labels).map(|(x, l)| ["TCP", *x, *l]).collect();
        DatasetTable::from_records(schema(), recs).unwrap()
    }

    fn xs(t: &DatasetTable) -> Vec<f64> {
        match t.column("x").unwrap() {
            ColumnData::Continuous(v) => v.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn mean_imputation() {
        let (t, stats) = impute_missing(&table(&["1.0", "", "3.0"], &["0", "0", "1"])).unwrap();
        assert_eq!(xs(&t), vec![1.0, 2.0, 3.0]);
        assert_eq!(stats.means[0].mean, 2.0);
        let (t, _) = impute_missing(&table(&["5.0", "", "", "7.0"], &["0", "0", "1", "1"])).unwrap();
        assert_eq!(xs(&t), vec![5.0, 6.0, 6.0, 7.0]);
    }

    #[test]
    fn imputation_identity_and_errors() {
        let t = table(&["1.0", "2.0"], &["0", "1"]);
        assert_eq!(impute_missing(&t).unwrap().0, t);
        let err = impute_missing(&table(&["", ""], &["0", "1"])).unwrap_err();
        assert!(matches!(err, Error::EmptyColumn(ref c) if c == "x"));
    }

    #[test]
    fn missing_categoricals_become_unk() {
        let t = DatasetTable::from_records(schema(), [["", "1", "0"], ["TCP", "1", "1"]]).unwrap();
        let (t, _) = impute_missing(&t).unwrap();
        let ColumnData::Categorical(c) = t.column("proto").unwrap() else {
            panic!()
        };
        assert_eq!(c.get(0), Some(UNK_TOKEN));
    }

    #[test]
    fn z_score_examples() {
        let t = table(&["0.0", "2.0"], &["0", "1"]);
        let stats = fit_normalization(&t);
        assert_eq!(xs(&apply_normalization(&t, &stats).unwrap()), vec![-1.0, 1.0]);
        let t = table(&["7", "7", "7"], &["0", "1", "1"]);
        assert_eq!(
            xs(&apply_normalization(&t, &fit_normalization(&t)).unwrap()),
            vec![0.0; 3]
        );
        let stats = NormalizationStats {
            columns: vec![ColumnScale {
                column: "x".into(),
                mean: 10.0,
                std: 2.0,
            }],
        };
        let val = table(&["14"], &["0"]);
        assert_eq!(xs(&apply_normalization(&val, &stats).unwrap()), vec![2.0]);
    }

    #[test]
    fn balanced_file_is_unchanged() {
        let normal = vec![0u8; 100];
        let mut labels = vec![0u8; 100];
        labels.extend(vec![1u8; 100]);
        let mixed = [labels.as_slice(), &labels, &labels, &labels, &normal];
        let plan = plan_balance(&mixed, 3).unwrap();
        assert_eq!(plan.kept[0], (0..200).collect::<Vec<_>>());
        assert!(plan.appended.is_empty());
        // no surplus at all: the fifth table is reduced to match
        assert_eq!(plan.output_counts(&mixed)[4], (0, 0));
    }

    #[test]
    fn balance_errors() {
        let both = vec![0u8, 1, 1];
        let normal_only = vec![0u8, 0];
        assert!(plan_balance(&[&both, &both, &both, &normal_only, &normal_only], 0).is_err());
        assert!(plan_balance(&[&both, &both, &both, &both, &both], 0).is_err());
        assert!(plan_balance(&[&both, &both], 0).is_err());
    }

    #[test]
    fn balance_small_tables() {
        let make = |n: usize, a: usize| {
            let mut l = vec![0u8; n];
            l.extend(vec![1u8; a]);
            let recs: Vec<Vec<String>> = l
                .iter()
                .enumerate()
                .map(|(i, y)| vec!["TCP".to_string(), i.to_string(), y.to_string()])
                .collect();
            let refs: Vec<Vec<&str>> = recs.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
            DatasetTable::from_records(schema(), refs).unwrap()
        };
        let tables = vec![make(7, 3), make(2, 5), make(4, 4), make(1, 9), make(6, 0)];
        let out = balance_files(&tables, 42).unwrap();
        let counts: Vec<_> = out.iter().map(DatasetTable::class_counts).collect();
        assert_eq!(counts, vec![(3, 3), (2, 2), (4, 4), (1, 1), (6, 6)]);
        assert_eq!(balance_files(&tables, 42).unwrap(), out);
    }
}
