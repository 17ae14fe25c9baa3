//! External validation of a clustering against reference classes: precision,
//! recall, the weighted entropy `E(p)` and the F-measure `F(p)`.
//!
//! Natural logarithms throughout. A reference partition can come from corpus
//! labels ([`ClassLabeling::from_corpus`]) or from another clustering
//! ([`ClassLabeling::from_assignment`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca_engine::ClusterAssignment;
use crate::ingest::Corpus;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no document is both clustered and labeled")]
    EmptyOverlap,
    #[error("cluster {0} holds no evaluated document")]
    EmptyCluster(usize),
    #[error("class {0} holds no evaluated document")]
    EmptyClass(usize),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
}

/// Reference classes per document.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLabeling {
    class_of: BTreeMap<u32, BTreeSet<String>>,
    classes: Vec<String>,
}

impl ClassLabeling {
    /// Documents with an empty label set are dropped.
    pub fn new(mut class_of: BTreeMap<u32, BTreeSet<String>>) -> Self {
        class_of.retain(|_, s| !s.is_empty());
        let classes = class_of
            .values()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self { class_of, classes }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::new(
            corpus
                .documents
                .iter()
                .map(|d| (d.doc_id, d.labels.clone()))
                .collect(),
        )
    }

    /// Uses another clustering as the reference partition.
    pub fn from_assignment(assignment: &ClusterAssignment) -> Self {
        Self::new(
            assignment
                .cluster_of
                .iter()
                .map(|(&d, &c)| (d, BTreeSet::from([format!("cluster-{c}")])))
                .collect(),
        )
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    pub fn classes_of(&self, doc_id: u32) -> Option<&BTreeSet<String>> {
        self.class_of.get(&doc_id)
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn labeled_docs(&self) -> impl Iterator<Item = u32> + '_ {
        self.class_of.keys().copied()
    }
}

/// Class × cluster counts over the documents that are both clustered and
/// labeled. Only classes with at least one such document appear as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub classes: Vec<String>,
    /// `N_{i,k}`, indexed `[class][cluster]`.
    pub counts: Vec<Vec<usize>>,
    /// `N_k`: evaluated documents per cluster.
    pub cluster_sizes: Vec<usize>,
    /// `N_{C_i}`: evaluated documents per class.
    pub class_sizes: Vec<usize>,
    /// `N`: evaluated documents.
    pub total: usize,
    /// Clustered documents without a label.
    pub unlabeled: Vec<u32>,
    /// Labeled documents that were not placed.
    pub unplaced: Vec<u32>,
}

impl ContingencyTable {
    /// Builds a single-label table directly from counts. Rows are classes,
    /// columns clusters.
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Self {
        let n_clusters = counts.first().map_or(0, Vec::len);
        let cluster_sizes = (0..n_clusters)
            .map(|k| counts.iter().map(|r| r[k]).sum())
            .collect();
        let class_sizes: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        Self {
            classes: (0..counts.len()).map(|i| format!("c{i}")).collect(),
            total: class_sizes.iter().sum(),
            counts,
            cluster_sizes,
            class_sizes,
            unlabeled: Vec::new(),
            unplaced: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }
}

pub fn contingency(
    assignment: &ClusterAssignment,
    labels: &ClassLabeling,
) -> Result<ContingencyTable, EvalError> {
    let k = assignment.n_clusters;
    let mut unlabeled = Vec::new();
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut class_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cluster_sizes = vec![0; k];
    let mut total = 0;
    for (&doc, &cluster) in &assignment.cluster_of {
        let Some(set) = labels.classes_of(doc) else {
            unlabeled.push(doc);
            continue;
        };
        let col = cluster as usize - 1;
        total += 1;
        cluster_sizes[col] += 1;
        for class in set {
            rows.entry(class).or_insert_with(|| vec![0; k])[col] += 1;
            *class_sizes.entry(class).or_insert(0) += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyOverlap);
    }
    let unplaced = labels
        .labeled_docs()
        .filter(|d| !assignment.cluster_of.contains_key(d))
        .collect();
    Ok(ContingencyTable {
        classes: rows.keys().map(|c| c.to_string()).collect(),
        class_sizes: class_sizes.into_values().collect(),
        counts: rows.into_values().collect(),
        cluster_sizes,
        total,
        unlabeled,
        unplaced,
    })
}

/// `N_{i,k} / N_k`.
pub fn precision(table: &ContingencyTable, class: usize, cluster: usize) -> Result<f64, EvalError> {
    match table.cluster_sizes[cluster] {
        0 => Err(EvalError::EmptyCluster(cluster)),
        nk => Ok(table.counts[class][cluster] as f64 / nk as f64),
    }
}

/// `N_{i,k} / N_{C_i}`.
pub fn recall(table: &ContingencyTable, class: usize, cluster: usize) -> Result<f64, EvalError> {
    match table.class_sizes[class] {
        0 => Err(EvalError::EmptyClass(class)),
        nc => Ok(table.counts[class][cluster] as f64 / nc as f64),
    }
}

/// Cluster-size weighted entropy of the class distribution inside each
/// cluster. Zero iff every cluster is class-pure.
pub fn entropy(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    (0..table.n_clusters())
        .filter(|&k| table.cluster_sizes[k] > 0)
        .map(|k| {
            let h: f64 = (0..table.n_classes())
                .map(|i| precision(table, i, k).expect("non-empty cluster"))
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            table.cluster_sizes[k] as f64 / n * h
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub beta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl EvalConfig {
    pub fn new(beta: f64) -> Result<Self, EvalError> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self { beta })
        } else {
            Err(EvalError::InvalidBeta(beta))
        }
    }
}

/// Class-size weighted best per-cluster score
/// `(1+β)·r·p / (β·r + p)` for each class.
pub fn f_measure(table: &ContingencyTable, config: &EvalConfig) -> f64 {
    let n = table.total as f64;
    let beta = config.beta;
    (0..table.n_classes())
        .filter(|&i| table.class_sizes[i] > 0)
        .map(|i| {
            let best = (0..table.n_clusters())
                .filter(|&k| table.cluster_sizes[k] > 0)
                .map(|k| {
                    let p = precision(table, i, k).expect("non-empty cluster");
                    let r = recall(table, i, k).expect("non-empty class");
                    if p == 0.0 && r == 0.0 {
                        0.0
                    } else {
                        (1.0 + beta) * r * p / (beta * r + p)
                    }
                })
                .fold(0.0, f64::max);
            table.class_sizes[i] as f64 / n * best
        })
        .sum()
}

/// One row of the metrics CSV. Percentages are `value × 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: u64,
    pub n_docs: usize,
    pub representation: String,
    pub distance: String,
    /// Empty when the run used an explicit similarity threshold.
    pub threshold_level: Option<u8>,
    pub n_clusters: usize,
    pub time_ms: f64,
    pub entropy_pct: Option<f64>,
    pub fmeasure_pct: Option<f64>,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "metric,n_docs,representation,distance,threshold_level,n_clusters,time_ms,entropy_pct,fmeasure_pct";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3},{},{}",
            self.run_id,
            self.n_docs,
            self.representation,
            self.distance,
            self.threshold_level.map(|l| l.to_string()).unwrap_or_default(),
            self.n_clusters,
            self.time_ms,
            opt(self.entropy_pct),
            opt(self.fmeasure_pct),
        )
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let opt = |s: &str| if s.is_empty() { Some(None) } else { s.parse().ok().map(Some) };
        Some(Self {
            run_id: f[0].parse().ok()?,
            n_docs: f[1].parse().ok()?,
            representation: f[2].to_owned(),
            distance: f[3].to_owned(),
            threshold_level: if f[4].is_empty() { None } else { Some(f[4].parse().ok()?) },
            n_clusters: f[5].parse().ok()?,
            time_ms: f[6].parse().ok()?,
            entropy_pct: opt(f[7])?,
            fmeasure_pct: opt(f[8])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assignment(pairs: &[(u32, u32)]) -> ClusterAssignment {
        let cluster_of: BTreeMap<u32, u32> = pairs.iter().copied().collect();
        ClusterAssignment {
            n_clusters: cluster_of.values().copied().max().unwrap_or(0) as usize,
            cluster_of,
            unplaced: BTreeSet::new(),
        }
    }

    fn labeling(pairs: &[(u32, &str)]) -> ClassLabeling {
        ClassLabeling::new(
            pairs
                .iter()
                .map(|&(d, c)| (d, BTreeSet::from([c.to_string()])))
                .collect(),
        )
    }

    #[test]
    fn identical_partition_is_diagonal() {
        let a = assignment(&[(1, 1), (2, 1), (3, 2), (4, 2)]);
        let l = labeling(&[(1, "x"), (2, "x"), (3, "y"), (4, "y")]);
        let t = contingency(&a, &l).unwrap();
        assert_eq!(t.counts, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(entropy(&t), 0.0);
        assert_eq!(f_measure(&t, &EvalConfig::default()), 1.0);
        assert_eq!(precision(&t, 0, 0).unwrap(), 1.0);
        assert_eq!(precision(&t, 0, 1).unwrap(), 0.0);
        assert_eq!(recall(&t, 1, 1).unwrap(), 1.0);
        assert_eq!(recall(&t, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_two_equal_classes() {
        let a = assignment(&[(1, 1), (2, 1), (3, 1), (4, 1)]);
        let l = labeling(&[(1, "x"), (2, "y"), (3, "x"), (4, "y")]);
        let t = contingency(&a, &l).unwrap();
        assert_eq!(t.counts, vec![vec![2], vec![2]]);
        assert!((entropy(&t) - 2f64.ln()).abs() < 1e-12);
        assert!((f_measure(&t, &EvalConfig::default()) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_and_unplaced_are_reported() {
        let mut a = assignment(&[(1, 1), (2, 1), (5, 2)]);
        a.unplaced.insert(4);
        let l = labeling(&[(1, "x"), (2, "x"), (4, "y")]);
        let t = contingency(&a, &l).unwrap();
        assert_eq!(t.unlabeled, vec![5]);
        assert_eq!(t.unplaced, vec![4]);
        assert_eq!(t.total, 2);
        assert_eq!(t.cluster_sizes, vec![2, 0]);
        assert_eq!(precision(&t, 0, 1), Err(EvalError::EmptyCluster(1)));
        assert_eq!(entropy(&t), 0.0);
    }

    #[test]
    fn empty_overlap() {
        let a = assignment(&[(1, 1)]);
        let l = labeling(&[(2, "x")]);
        assert_eq!(contingency(&a, &l).unwrap_err(), EvalError::EmptyOverlap);
    }

    #[test]
    fn multi_label_counts_each_label() {
        let a = assignment(&[(1, 1), (2, 1)]);
        let l = ClassLabeling::new(BTreeMap::from([
            (1, BTreeSet::from(["x".to_string(), "y".to_string()])),
            (2, BTreeSet::from(["x".to_string()])),
        ]));
        let t = contingency(&a, &l).unwrap();
        assert_eq!(t.cluster_sizes, vec![2]);
        assert_eq!(t.counts, vec![vec![2], vec![1]]);
        assert_eq!(t.class_sizes, vec![2, 1]);
    }

    #[test]
    fn beta_validation() {
        assert!(EvalConfig::new(0.0).is_err());
        assert!(EvalConfig::new(-1.0).is_err());
        assert!(EvalConfig::new(f64::NAN).is_err());
        assert_eq!(EvalConfig::new(2.0).unwrap().beta, 2.0);
    }

    #[test]
    fn reference_from_assignment_recovers_itself() {
        let a = assignment(&[(1, 2), (2, 1), (3, 1), (4, 3)]);
        let t = contingency(&a, &ClassLabeling::from_assignment(&a)).unwrap();
        assert_eq!(entropy(&t), 0.0);
        assert_eq!(f_measure(&t, &EvalConfig::default()), 1.0);
    }

    #[test]
    fn metrics_row_csv_round_trip() {
        let row = MetricsRow {
            run_id: 3,
            n_docs: 12,
            representation: "ngram3".into(),
            distance: "cosine".into(),
            threshold_level: Some(5),
            n_clusters: 3,
            time_ms: 1.25,
            entropy_pct: Some(0.0),
            fmeasure_pct: Some(100.0),
        };
        let line = row.to_csv();
        assert_eq!(line, "3,12,ngram3,cosine,5,3,1.250,0.0000,100.0000");
        assert_eq!(MetricsRow::from_csv(&line).unwrap(), row);
        assert_eq!(MetricsRow::CSV_HEADER.split(',').count(), 9);
    }

    fn table_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(prop::collection::vec(0usize..6, c), r)
        })
    }

    proptest! {
        #[test]
        fn bounds_and_permutation_invariance(counts in table_strategy()) {
            let t = ContingencyTable::from_counts(counts.clone());
            prop_assume!(t.total > 0);
            let e = entropy(&t);
            let f = f_measure(&t, &EvalConfig::default());
            prop_assert!(e >= 0.0);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&f));

            let mut reversed = counts.clone();
            for row in &mut reversed {
                row.reverse();
            }
            let tr = ContingencyTable::from_counts(reversed);
            prop_assert!((entropy(&tr) - e).abs() < 1e-12);
            prop_assert!((f_measure(&tr, &EvalConfig::default()) - f).abs() < 1e-12);
        }

        #[test]
        fn splitting_a_pure_cluster_keeps_entropy(counts in table_strategy()) {
            // append a pure column by moving class 0's mass out of column 0
            let t = ContingencyTable::from_counts(counts.clone());
            prop_assume!(t.total > 0);
            let mut pure = counts.clone();
            for (i, row) in pure.iter_mut().enumerate() {
                row.push(if i == 0 { 4 } else { 0 });
            }
            let before = entropy(&ContingencyTable::from_counts(pure.clone()));
            for (i, row) in pure.iter_mut().enumerate() {
                let last = row.len() - 1;
                row[last] = if i == 0 { 2 } else { 0 };
                row.push(if i == 0 { 2 } else { 0 });
            }
            let after = entropy(&ContingencyTable::from_counts(pure));
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn merging_two_pure_clusters_raises_entropy() {
        let split = ContingencyTable::from_counts(vec![vec![3, 0], vec![0, 2]]);
        let merged = ContingencyTable::from_counts(vec![vec![3], vec![2]]);
        assert_eq!(entropy(&split), 0.0);
        assert!(entropy(&merged) > 0.0);
    }
}
