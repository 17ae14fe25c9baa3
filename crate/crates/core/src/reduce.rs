//! Attribute selection over the term-document matrix: per-cell χ²
//! contributions with a per-document top-k rule, and information gain with a
//! global top-k rule.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::ClassLabeling;
use crate::represent::{DocumentVector, Representation, TermDocumentMatrix, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("matrix has no non-zero entry")]
    EmptyMatrix,
    #[error("document {0} has no reference class")]
    UnlabeledDocument(u32),
    #[error("selection size must be at least 1")]
    ZeroK,
}

/// χ² contributions of a count matrix. Cell values are computed on demand
/// from the sparse counts and the marginals.
#[derive(Debug, Clone)]
pub struct ChiSquareTable {
    counts: Vec<DocumentVector>,
    /// `f_i.` per term.
    pub row_marginals: Vec<f64>,
    /// `f_.j` per document.
    pub col_marginals: Vec<f64>,
    /// Sum of all occurrences.
    pub total: f64,
}

impl ChiSquareTable {
    pub fn n_terms(&self) -> usize {
        self.row_marginals.len()
    }

    pub fn n_docs(&self) -> usize {
        self.col_marginals.len()
    }

    /// `f_ij = N_ij / N`.
    pub fn frequency(&self, term: usize, doc: usize) -> f64 {
        self.counts[doc].get(term) / self.total
    }

    /// `N · (f_ij − f_i.·f_.j)² / (f_i.·f_.j)`, zero where the expected
    /// frequency vanishes.
    pub fn contribution(&self, term: usize, doc: usize) -> f64 {
        let expected = self.row_marginals[term] * self.col_marginals[doc];
        if expected == 0.0 {
            return 0.0;
        }
        let diff = self.frequency(term, doc) - expected;
        self.total * diff * diff / expected
    }

    /// All contributions of one document, indexed by term.
    pub fn document_contributions(&self, doc: usize) -> Vec<f64> {
        let fj = self.col_marginals[doc];
        let mut out: Vec<f64> = self
            .row_marginals
            .iter()
            .map(|&fi| if fi * fj == 0.0 { 0.0 } else { self.total * fi * fj })
            .collect();
        for &(t, n) in &self.counts[doc].entries {
            out[t] = self.contribution(t, doc);
            debug_assert!(n > 0.0);
        }
        out
    }

    /// Dense `terms × docs` contributions.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let by_doc: Vec<Vec<f64>> = (0..self.n_docs())
            .map(|j| self.document_contributions(j))
            .collect();
        (0..self.n_terms())
            .map(|i| by_doc.iter().map(|col| col[i]).collect())
            .collect()
    }
}

pub fn chi2_contributions(matrix: &TermDocumentMatrix) -> Result<ChiSquareTable, ReduceError> {
    let total: f64 = matrix.columns.iter().map(DocumentVector::total).sum();
    if total <= 0.0 {
        return Err(ReduceError::EmptyMatrix);
    }
    let mut row = vec![0.0; matrix.n_terms()];
    for col in &matrix.columns {
        for &(t, n) in &col.entries {
            row[t] += n;
        }
    }
    Ok(ChiSquareTable {
        counts: matrix.columns.clone(),
        row_marginals: row.into_iter().map(|r| r / total).collect(),
        col_marginals: matrix.columns.iter().map(|c| c.total() / total).collect(),
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    Chi2,
    Infogain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub mode: ReductionMode,
    pub terms_before: usize,
    pub terms_after: usize,
    pub kept: BTreeSet<usize>,
}

impl ReductionReport {
    fn new(mode: ReductionMode, terms_before: usize, kept: BTreeSet<usize>) -> Self {
        Self {
            mode,
            terms_before,
            terms_after: kept.len(),
            kept,
        }
    }

    pub const CSV_HEADER: &'static str = "mode,n,before,after";

    /// `mode,n,before,after` where `n` is the n-gram length or `bag`.
    pub fn csv_row(&self, representation: Representation) -> String {
        let mode = match self.mode {
            ReductionMode::Chi2 => "chi2",
            ReductionMode::Infogain => "infogain",
        };
        let n = match representation {
            Representation::Bag => "bag".to_string(),
            Representation::Ngram { n } => n.to_string(),
        };
        format!("{mode},{n},{},{}", self.terms_before, self.terms_after)
    }
}

/// Descending by score, ties by ascending index.
fn rank_desc(scores: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Union over documents of each document's `k_per_doc` highest-contribution
/// terms. A document ranks only the terms it contains; empty documents
/// contribute nothing.
pub fn chi2_select(table: &ChiSquareTable, k_per_doc: usize) -> Result<ReductionReport, ReduceError> {
    if k_per_doc == 0 {
        return Err(ReduceError::ZeroK);
    }
    let per_doc: Vec<Vec<usize>> = (0..table.n_docs())
        .into_par_iter()
        .filter(|&j| table.col_marginals[j] > 0.0)
        .map(|j| {
            let scores = table.document_contributions(j);
            let candidates = table.counts[j].entries.iter().map(|&(t, _)| t);
            let mut ranked = rank_desc(&scores, candidates);
            ranked.truncate(k_per_doc);
            ranked
        })
        .collect();
    let kept = per_doc.into_iter().flatten().collect();
    Ok(ReductionReport::new(ReductionMode::Chi2, table.n_terms(), kept))
}

/// Information gain of every term with respect to the reference classes.
#[derive(Debug, Clone)]
pub struct GainTable {
    pub classes: Vec<String>,
    pub gains: Vec<f64>,
    pub class_priors: Vec<f64>,
    /// `Pr(t)` per term; `Pr(t̄) = 1 − Pr(t)`.
    pub term_presence: Vec<f64>,
    /// `Pr(c_i | t)`, indexed `[term][class]`.
    pub given_present: Vec<Vec<f64>>,
    /// `Pr(c_i | t̄)`, indexed `[term][class]`; equals the priors when every
    /// document contains the term.
    pub given_absent: Vec<Vec<f64>>,
}

impl GainTable {
    pub fn class_entropy(&self) -> f64 {
        -plogp_sum(&self.class_priors)
    }
}

fn plogp_sum(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// Computes `G(t)` for every term. Multi-label documents spread a unit weight
/// evenly over their classes.
pub fn information_gain(
    matrix: &TermDocumentMatrix,
    labels: &ClassLabeling,
) -> Result<GainTable, ReduceError> {
    let classes = labels.classes().to_vec();
    let n_classes = classes.len();
    let n_docs = matrix.n_docs();

    let mut doc_weights = Vec::with_capacity(n_docs);
    for col in &matrix.columns {
        let set = labels
            .classes_of(col.doc_id)
            .filter(|s| !s.is_empty())
            .ok_or(ReduceError::UnlabeledDocument(col.doc_id))?;
        let share = 1.0 / set.len() as f64;
        let mut w = vec![0.0; n_classes];
        for c in set {
            w[labels.class_index(c).expect("class in universe")] = share;
        }
        doc_weights.push(w);
    }

    let mut class_mass = vec![0.0; n_classes];
    for w in &doc_weights {
        for (m, v) in class_mass.iter_mut().zip(w) {
            *m += v;
        }
    }
    let n = n_docs as f64;
    let priors: Vec<f64> = class_mass.iter().map(|m| m / n).collect();
    let entropy = -plogp_sum(&priors);

    let mut present_mass = vec![vec![0.0; n_classes]; matrix.n_terms()];
    let mut present_docs = vec![0usize; matrix.n_terms()];
    for (col, w) in matrix.columns.iter().zip(&doc_weights) {
        for &(t, v) in &col.entries {
            if v > 0.0 {
                present_docs[t] += 1;
                for (m, x) in present_mass[t].iter_mut().zip(w) {
                    *m += x;
                }
            }
        }
    }

    let per_term: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = present_mass
        .into_par_iter()
        .zip(present_docs.into_par_iter())
        .map(|(mass, docs)| {
            let p_t = docs as f64 / n;
            let p_not = 1.0 - p_t;
            let given_t: Vec<f64> = if docs > 0 {
                mass.iter().map(|m| m / docs as f64).collect()
            } else {
                priors.clone()
            };
            let given_not: Vec<f64> = if docs < n_docs {
                let rest = (n_docs - docs) as f64;
                class_mass.iter().zip(&mass).map(|(all, m)| (all - m) / rest).collect()
            } else {
                priors.clone()
            };
            let g = entropy + p_t * plogp_sum(&given_t) + p_not * plogp_sum(&given_not);
            (g.max(0.0), p_t, given_t, given_not)
        })
        .collect();

    let mut table = GainTable {
        classes,
        gains: Vec::with_capacity(per_term.len()),
        class_priors: priors,
        term_presence: Vec::with_capacity(per_term.len()),
        given_present: Vec::with_capacity(per_term.len()),
        given_absent: Vec::with_capacity(per_term.len()),
    };
    for (g, p, gt, gn) in per_term {
        table.gains.push(g);
        table.term_presence.push(p);
        table.given_present.push(gt);
        table.given_absent.push(gn);
    }
    Ok(table)
}

/// The `k` highest-gain terms, ties by ascending term index.
pub fn infogain_select(table: &GainTable, k: usize) -> Result<ReductionReport, ReduceError> {
    if k == 0 {
        return Err(ReduceError::ZeroK);
    }
    let mut ranked = rank_desc(&table.gains, 0..table.gains.len());
    ranked.truncate(k);
    Ok(ReductionReport::new(
        ReductionMode::Infogain,
        table.gains.len(),
        ranked.into_iter().collect(),
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionReport {
    /// Documents whose projected vector is empty.
    pub empty_docs: Vec<u32>,
}

/// Restricts the matrix to `kept` terms, re-indexing the vocabulary densely
/// in its original relative order. Document frequencies are carried over.
pub fn project(
    matrix: &TermDocumentMatrix,
    kept: &BTreeSet<usize>,
) -> (TermDocumentMatrix, ProjectionReport) {
    let mut remap = vec![usize::MAX; matrix.n_terms()];
    let mut terms = Vec::with_capacity(kept.len());
    let mut df = Vec::with_capacity(kept.len());
    for (new, &old) in kept.iter().filter(|&&t| t < matrix.n_terms()).enumerate() {
        remap[old] = new;
        terms.push(matrix.vocabulary.term(old).to_owned());
        df.push(matrix.vocabulary.doc_frequency(old));
    }
    let mut report = ProjectionReport::default();
    let columns = matrix
        .columns
        .iter()
        .map(|col| {
            let entries: Vec<(usize, f64)> = col
                .entries
                .iter()
                .filter(|&&(t, _)| remap[t] != usize::MAX)
                .map(|&(t, w)| (remap[t], w))
                .collect();
            if entries.is_empty() {
                report.empty_docs.push(col.doc_id);
            }
            DocumentVector {
                doc_id: col.doc_id,
                entries,
            }
        })
        .collect();
    (
        TermDocumentMatrix {
            vocabulary: Vocabulary::from_parts(terms, df),
            columns,
            too_short: matrix.too_short.clone(),
        },
        report,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn matrix(rows: &[&[f64]]) -> TermDocumentMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let terms = (0..rows.len()).map(|i| format!("t{i}")).collect();
        TermDocumentMatrix::from_dense(terms, &rows)
    }

    fn labels(pairs: &[(u32, &[&str])]) -> ClassLabeling {
        ClassLabeling::new(
            pairs
                .iter()
                .map(|&(d, ls)| (d, ls.iter().map(|s| s.to_string()).collect()))
                .collect::<BTreeMap<_, BTreeSet<_>>>(),
        )
    }

    #[test]
    fn independence_gives_zero_contributions() {
        // rows proportional to column totals (1:2:3)
        let t = chi2_contributions(&matrix(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]])).unwrap();
        for row in t.dense() {
            for v in row {
                assert!(v.abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn diagonal_two_by_two() {
        let t = chi2_contributions(&matrix(&[&[2.0, 0.0], &[0.0, 2.0]])).unwrap();
        assert_eq!(t.total, 4.0);
        for row in t.dense() {
            for v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        let r = chi2_select(&t, 1).unwrap();
        assert_eq!(r.kept, BTreeSet::from([0, 1]));
    }

    #[test]
    fn frequencies_sum_to_one() {
        let t = chi2_contributions(&matrix(&[&[1.0, 0.0, 5.0], &[2.0, 3.0, 0.0]])).unwrap();
        let s: f64 = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| t.frequency(i, j)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_errors() {
        assert_eq!(
            chi2_contributions(&matrix(&[&[0.0, 0.0]])).unwrap_err(),
            ReduceError::EmptyMatrix
        );
    }

    #[test]
    fn k_equal_to_vocabulary_keeps_all_occurring_terms() {
        let m = matrix(&[&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0], &[0.0, 4.0, 1.0], &[3.0, 1.0, 0.0]]);
        let r = chi2_select(&chi2_contributions(&m).unwrap(), m.n_terms()).unwrap();
        assert_eq!(r.kept, BTreeSet::from([0, 2, 3]));
        assert_eq!(r.terms_before, 4);
        assert_eq!(r.terms_after, 3);
        assert_eq!(r.csv_row(Representation::Ngram { n: 3 }), "chi2,3,4,3");
    }

    #[test]
    fn perfectly_discriminating_term() {
        // term 0 appears exactly in the two A documents; term 1 is everywhere
        let m = matrix(&[&[1.0, 1.0, 0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 0.0]]);
        let l = labels(&[(1, &["A"]), (2, &["A"]), (3, &["B"]), (4, &["B"])]);
        let g = information_gain(&m, &l).unwrap();
        assert!((g.gains[0] - 2f64.ln()).abs() < 1e-12);
        assert!((g.class_entropy() - 2f64.ln()).abs() < 1e-12);
        assert!(g.gains[1].abs() < 1e-12);
        assert!(g.gains[2].abs() < 1e-12);
        let r = infogain_select(&g, 1).unwrap();
        assert_eq!(r.kept, BTreeSet::from([0]));
        assert_eq!(infogain_select(&g, 3).unwrap().kept, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn constant_matrix_ties_break_by_index() {
        let m = matrix(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let g = information_gain(&m, &labels(&[(1, &["A"]), (2, &["B"])])).unwrap();
        assert!(g.gains.iter().all(|&v| v == 0.0));
        assert_eq!(infogain_select(&g, 2).unwrap().kept, BTreeSet::from([0, 1]));
    }

    #[test]
    fn unlabeled_document_rejected() {
        let m = matrix(&[&[1.0, 1.0]]);
        assert_eq!(
            information_gain(&m, &labels(&[(1, &["A"])])).unwrap_err(),
            ReduceError::UnlabeledDocument(2)
        );
    }

    #[test]
    fn multi_label_weights_are_fractional() {
        let m = matrix(&[&[1.0, 0.0]]);
        let g = information_gain(&m, &labels(&[(1, &["A", "B"]), (2, &["A"])])).unwrap();
        assert_eq!(g.class_priors, vec![0.75, 0.25]);
        assert_eq!(g.given_present[0], vec![0.5, 0.5]);
        assert_eq!(g.given_absent[0], vec![1.0, 0.0]);
    }

    #[test]
    fn projection_cases() {
        let m = matrix(&[&[1.0, 0.0], &[2.0, 3.0], &[0.0, 4.0]]);
        let all: BTreeSet<usize> = (0..3).collect();
        let (same, rep) = project(&m, &all);
        assert_eq!(same, m);
        assert!(rep.empty_docs.is_empty());

        let (none, rep) = project(&m, &BTreeSet::new());
        assert_eq!(none.n_terms(), 0);
        assert_eq!(rep.empty_docs, vec![1, 2]);

        let (p, rep) = project(&m, &BTreeSet::from([0, 2]));
        assert_eq!(p.vocabulary.terms(), ["t0", "t2"]);
        assert_eq!(p.columns[0].entries, vec![(0, 1.0)]);
        assert_eq!(p.columns[1].entries, vec![(1, 4.0)]);
        assert!(rep.empty_docs.is_empty());
        assert_eq!(p.vocabulary.doc_frequency(1), 1);
    }
}
