mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_tensor, rng};
use itct::dataset::{
    apply_normalization, build_vocabulary, encode, fit_normalization, impute_missing, plan_balance, split_indices,
    stratified_indices, ColumnData, DatasetTable, EncodedDataset, FeatureSet, Schema, SplitSpec,
};
use itct::featsel::{fit_forest, importances, select, ForestConfig, SplitRule, Threshold, TreeNode};
use itct::metrics::{auc_roc, confusion, f1_score};
use itct::nn::ops;
use itct::nn::MultiHeadAttention;

/// `(token, x, y, label)`.
type Row = (Option<u8>, Option<f64>, Option<f64>, u8);

fn schema() -> Schema {
    Schema::parse("kind,categorical\nx,continuous\ny,continuous\nlabel,label\n").unwrap()
}

/// `(token, x, y, label)` records with optional missing cells.
fn records() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec(
        (
            prop::option::weighted(0.9, 0u8..4),
            prop::option::weighted(0.9, -100.0f64..100.0),
            prop::option::weighted(0.9, -5.0f64..5.0),
            0u8..2,
        ),
        1..60,
    )
}

fn table(rows: &[Row]) -> DatasetTable {
    let text: Vec<[String; 4]> = rows
        .iter()
        .map(|(k, x, y, l)| {
            [
                k.map_or(String::new(), |k| ["TCP", "UDP", "MQTT", "ARP"][k as usize].to_string()),
                x.map_or(String::new(), |v| v.to_string()),
                y.map_or(String::new(), |v| v.to_string()),
                l.to_string(),
            ]
        })
        .collect();
    let refs: Vec<Vec<&str>> = text.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
    DatasetTable::from_records(schema(), refs).unwrap()
}

fn continuous(table: &DatasetTable, name: &str) -> Vec<f64> {
    match table.column(name).unwrap() {
        ColumnData::Continuous(v) => v.clone(),
        ColumnData::Categorical(_) => panic!("{name} is categorical"),
    }
}

/// Brute-force area under the ROC curve over every (attack, normal) pair.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

fn gini_weighted(counts: [f64; 2]) -> f64 {
    let n = counts[0] + counts[1];
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] / n, counts[1] / n);
    n * (1.0 - p0 * p0 - p1 * p1)
}

/// Exhaustive best root split: `(feature, rule, decrease)` with ties going
/// to the lower feature index and then to the lower threshold.
fn brute_force_root(data: &EncodedDataset) -> Option<(usize, SplitRule, f64)> {
    let n = data.n_rows();
    let (m, c) = (data.n_categorical(), data.n_continuous());
    let labels = data.labels();
    let mut total = [0.0; 2];
    for &l in labels {
        total[l as usize] += 1.0;
    }
    let parent = gini_weighted(total);
    let mut candidates: Vec<(usize, SplitRule, f64)> = Vec::new();
    let mut score = |feature: usize, rule: SplitRule, left: &dyn Fn(usize) -> bool| {
        let mut l = [0.0; 2];
        let mut r = [0.0; 2];
        for row in 0..n {
            if left(row) {
                l[labels[row] as usize] += 1.0;
            } else {
                r[labels[row] as usize] += 1.0;
            }
        }
        if l[0] + l[1] > 0.0 && r[0] + r[1] > 0.0 {
            candidates.push((feature, rule, parent - gini_weighted(l) - gini_weighted(r)));
        }
    };
    for j in 0..m {
        let mut toks: Vec<u32> = (0..n).map(|r| data.cat()[r * m + j]).collect();
        toks.sort_unstable();
        toks.dedup();
        for &t in &toks {
            score(j, SplitRule::Equals(t), &|r| data.cat()[r * m + j] == t);
        }
    }
    for j in 0..c {
        let mut vals: Vec<f64> = (0..n).map(|r| f64::from(data.cont()[r * c + j])).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            score(m + j, SplitRule::LessEqual(t), &|r| {
                f64::from(data.cont()[r * c + j]) <= t
            });
        }
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if best <= 1e-9 {
        return None;
    }
    candidates.into_iter().find(|c| c.2 >= best - 1e-9)
}

fn small_encoded(cat: Vec<u32>, cont: Vec<f32>, labels: Vec<u8>, m: usize, c: usize, vocab: usize) -> EncodedDataset {
    EncodedDataset::new(
        FeatureSet {
            categorical: (0..m).map(|i| format!("k{i}")).collect(),
            continuous: (0..c).map(|i| format!("x{i}")).collect(),
        },
        vec![vocab; m],
        cat,
        cont,
        labels,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn imputation_is_idempotent(rows in records()) {
        let t = table(&rows);
        prop_assume!(continuous(&t, "x").iter().any(|v| !v.is_nan()));
        prop_assume!(continuous(&t, "y").iter().any(|v| !v.is_nan()));
        let (once, stats) = impute_missing(&t).unwrap();
        let (twice, again) = impute_missing(&once).unwrap();
        prop_assert_eq!(&once, &twice);
        for (a, b) in stats.means.iter().zip(&again.means) {
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        }
        prop_assert!(continuous(&once, "x").iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalisation_round_trips(rows in records()) {
        let (t, _) = match impute_missing(&table(&rows)) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let stats = fit_normalization(&t);
        let normed = apply_normalization(&t, &stats).unwrap();
        for name in ["x", "y"] {
            let scale = stats.get(name).unwrap();
            prop_assert!(scale.std >= 0.0);
            for (orig, z) in continuous(&t, name).iter().zip(continuous(&normed, name)) {
                if scale.std > 0.0 {
                    let back = z * scale.std + scale.mean;
                    prop_assert!((back - orig).abs() <= 1e-9 * orig.abs().max(1.0), "{} vs {}", back, orig);
                } else {
                    prop_assert_eq!(z, 0.0);
                }
            }
        }
    }

    #[test]
    fn encoding_is_total(rows in records(), apply_rows in records()) {
        let Ok((train, _)) = impute_missing(&table(&rows)) else { return Ok(()) };
        let Ok((other, _)) = impute_missing(&table(&apply_rows)) else { return Ok(()) };
        let vocab = build_vocabulary(&train);
        let stats = fit_normalization(&train);
        let names = schema().feature_names();
        let data = encode(&other, &vocab, &stats, &names).unwrap();
        let size = vocab.get("kind").unwrap().len() as u32;
        prop_assert!(data.cat().iter().all(|&t| t < size));
        prop_assert!(data.cont().iter().all(|v| v.is_finite()));
        prop_assert_eq!(data.n_rows(), other.n_rows());
    }

    #[test]
    fn split_is_a_partition(n in 10usize..3000, seed in any::<u64>()) {
        let (a, b, c) = split_indices(n, &SplitSpec::with_seed(seed)).unwrap();
        prop_assert_eq!(a.len(), n * 8 / 10);
        prop_assert_eq!(a.len() + b.len(), n * 9 / 10);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_rows_once(n in 1usize..700, size in 1usize..300, seed in any::<u64>()) {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let data = small_encoded(vec![0; n], vec![0.0; n], labels, 1, 1, 1);
        let batches = data.batches(size, true, seed).unwrap();
        prop_assert_eq!(batches.len(), n.div_ceil(size));
        let mut rows: Vec<usize> = batches.iter().flat_map(|b| b.rows.clone()).collect();
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(batches, data.batches(size, true, seed).unwrap());
    }

    #[test]
    fn stratified_sample_keeps_classes(normal in 1usize..400, attack in 1usize..400, frac in 0.05f64..1.0, seed in any::<u64>()) {
        let labels: Vec<u8> = std::iter::repeat_n(0, normal).chain(std::iter::repeat_n(1, attack)).collect();
        let target = (frac * labels.len() as f64).round() as usize;
        let rows = stratified_indices(&labels, target, seed);
        let pos = rows.iter().filter(|&&r| labels[r] == 1).count();
        prop_assert!((rows.len() as i64 - target as i64).abs() <= 1);
        let expected = attack as f64 * rows.len() as f64 / labels.len() as f64;
        prop_assert!((pos as f64 - expected).abs() <= 1.0 + 1e-9, "{} vs {}", pos, expected);
        prop_assert!(rows.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn balancing_invariants(
        counts in prop::collection::vec((1usize..80, 1usize..80), 4),
        normal5 in 0usize..120,
        seed in any::<u64>(),
    ) {
        let mut tables: Vec<Vec<u8>> = counts
            .iter()
            .map(|&(n, a)| std::iter::repeat_n(0, n).chain(std::iter::repeat_n(1, a)).collect())
            .collect();
        tables.push(vec![0; normal5]);
        let refs: Vec<&[u8]> = tables.iter().map(Vec::as_slice).collect();
        let plan = plan_balance(&refs, seed).unwrap();
        let out = plan.output_counts(&refs);
        for (normal, attack) in &out {
            prop_assert_eq!(normal, attack);
        }
        let pool: usize = counts.iter().map(|&(n, a)| a.saturating_sub(n)).sum();
        let kept_attack: usize = counts.iter().map(|&(n, a)| n.min(a)).sum();
        prop_assert_eq!(plan.appended.len(), pool.min(normal5));
        let total_attack: usize = out.iter().map(|c| c.1).sum();
        prop_assert_eq!(total_attack, kept_attack + pool.min(normal5));
        prop_assert_eq!(&plan, &plan_balance(&refs, seed).unwrap());
    }

    #[test]
    fn auc_matches_pairwise_oracle(
        pairs in prop::collection::vec((0u8..20, 0u8..2), 2..200),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 20.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let auc = auc_roc(&scores, &labels).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn flipping_labels_complements_auc(seed in any::<u64>(), n in 4usize..200) {
        let mut r = rng(seed);
        // Distinct scores, so there are no ties.
        let scores: Vec<f64> = (0..n).map(|i| i as f64 + r.gen_range(0.0..0.5)).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        let b = auc_roc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_every_row(pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 0..200), thr in 0.0f64..1.0) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion(&scores, &labels, thr).unwrap();
        prop_assert_eq!(cm.total() as usize, scores.len());
        prop_assert_eq!((cm.true_pos + cm.false_neg) as usize, labels.iter().filter(|&&l| l == 1).count());
        let f1 = f1_score(cm.precision(), cm.recall());
        if !f1.degenerate {
            let (p, r) = (cm.precision().value, cm.recall().value);
            prop_assert!((f1.value - 2.0 * p * r / (p + r)).abs() < 1e-12);
            prop_assert!(f1.value <= p.max(r) + 1e-12 && f1.value >= p.min(r) - 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..50.0) {
        let x = random_tensor(&mut rng(seed), rows, cols).map(|v| v * scale);
        let y = ops::softmax_rows(&x);
        for r in 0..rows {
            prop_assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(y.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), tokens in 1usize..6) {
        let mut r = rng(seed);
        let att = MultiHeadAttention::<f64>::new(4, 2, 0.0, &mut r).unwrap();
        let x = random_tensor(&mut r, tokens, 4);
        let perm: Vec<usize> = (0..tokens).rev().collect();
        let mut px = x.clone();
        for (dst, &src) in perm.iter().enumerate() {
            px.row_mut(dst).copy_from_slice(x.row(src));
        }
        let y = att.forward(&x, tokens, &mut rng(0), false).unwrap().0;
        let py = att.forward(&px, tokens, &mut rng(0), false).unwrap().0;
        for (dst, &src) in perm.iter().enumerate() {
            for (a, b) in py.row(dst).iter().zip(y.row(src)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_split_matches_exhaustive_search(
        rows in prop::collection::vec((0u32..3, 0u32..3, 0u8..6, 0u8..6, 0u8..2), 2..=12),
    ) {
        let labels: Vec<u8> = rows.iter().map(|r| r.4).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let cat: Vec<u32> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
        let cont: Vec<f32> = rows.iter().flat_map(|r| [f32::from(r.2) * 0.5, f32::from(r.3)]).collect();
        let data = small_encoded(cat, cont, labels, 2, 2, 3);
        let config = ForestConfig {
            n_trees: 1,
            max_depth: Some(1),
            features_per_split: Some(1.0),
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&data, &config).unwrap();
        match (forest.trees[0].root(), brute_force_root(&data)) {
            (TreeNode::Leaf { .. }, None) => {}
            (TreeNode::Internal { feature, rule, impurity_decrease, .. }, Some((bf, br, bg))) => {
                prop_assert_eq!(*feature, bf);
                prop_assert_eq!(*rule, br);
                prop_assert!((impurity_decrease - bg).abs() < 1e-9);
            }
            (root, oracle) => prop_assert!(false, "root {:?} vs oracle {:?}", root, oracle),
        }
    }

    #[test]
    fn importances_sum_to_one(seed in any::<u64>(), n in 20usize..120) {
        let mut r = rng(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let cat: Vec<u32> = (0..n).map(|_| r.gen_range(0..4)).collect();
        let cont: Vec<f32> = labels.iter().flat_map(|&l| [f32::from(l) + r.gen_range(-1.0f32..1.0), r.gen_range(0.0f32..1.0)]).collect();
        let data = small_encoded(cat, cont, labels, 1, 2, 4);
        let forest = fit_forest(&data, &ForestConfig { n_trees: 5, seed, ..ForestConfig::default() }).unwrap();
        let report = importances(&forest);
        let total: f64 = report.importances.iter().map(|f| f.importance).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(report.importances.iter().all(|f| f.importance >= 0.0));

        let chosen = select(&report, Threshold::Mean, &["k0".to_string()]).unwrap();
        let mut names = chosen.features();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), chosen.features().len());
        for name in &chosen.selected {
            prop_assert!(report.importance(name).unwrap() >= chosen.threshold - 1e-12);
        }
    }
}

#[test]
fn shuffling_a_feature_never_raises_its_importance() {
    let n = 200;
    let mut r = rng(42);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let signal: Vec<f32> = labels
        .iter()
        .map(|&l| f32::from(l) + r.gen_range(-0.6f32..0.6))
        .collect();
    let noise: Vec<f32> = (0..n).map(|_| r.gen_range(0.0f32..1.0)).collect();
    let build = |signal: &[f32]| {
        let cont: Vec<f32> = signal.iter().zip(&noise).flat_map(|(&s, &z)| [s, z]).collect();
        small_encoded(vec![0; n], cont, labels.clone(), 1, 2, 1)
    };
    let config = |seed| ForestConfig {
        n_trees: 20,
        seed,
        ..ForestConfig::default()
    };
    let name = "x0";
    for seed in 0..10u64 {
        let base = importances(&fit_forest(&build(&signal), &config(seed)).unwrap())
            .importance(name)
            .unwrap();
        let mut shuffled = signal.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng(seed + 100));
        let after = importances(&fit_forest(&build(&shuffled), &config(seed)).unwrap())
            .importance(name)
            .unwrap();
        assert!(after <= base, "seed {seed}: {after} > {base}");
    }
}
