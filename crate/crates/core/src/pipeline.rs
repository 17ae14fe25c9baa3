//! End-to-end runs: corpus → vectors → reduction → proximity → automaton →
//! clusters → evaluation, plus the threshold-level sweep.
//!
//! Nothing in here draws random numbers; with `reproducible` set, the only
//! wall-clock values in the outputs are zeroed and repeated runs are
//! byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca_engine::{
    extract_clusters, run, CaConfig, CaError, ClusterAssignment, Grid, GridState, NeighborhoodKind, Strategy,
    Threshold,
};
use crate::evaluate::{contingency, entropy, f_measure, ClassLabeling, EvalConfig, EvalError, MetricsRow};
use crate::ingest::{load_corpus_json, load_plaintext_corpus, load_reuters, select_first_n, Corpus, IngestError};
use crate::proximity::{build_proximity, to_similarity, Metric, ProximityError, ProximityMatrix};
use crate::reduce::{
    chi2_contributions, chi2_select, infogain_select, information_gain, project, ReduceError, ReductionReport,
};
use crate::represent::{apply_tfidf, build_matrix, RepresentError, Representation, TermDocumentMatrix, TokenizerConfig};

pub const GRID_FILE: &str = "grid.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ASSIGNMENT_FILE: &str = "assignment.json";
pub const PROVENANCE_FILE: &str = "run.json";
pub const SWEEP_FILE: &str = "sweep.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run spec: {0}")]
    Spec(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("represent: {0}")]
    Represent(#[from] RepresentError),
    #[error("reduce: {0}")]
    Reduce(#[from] ReduceError),
    #[error("proximity: {0}")]
    Proximity(#[from] ProximityError),
    #[error("ca_engine: {0}")]
    CaEngine(#[from] CaError),
    #[error("evaluate: {0}")]
    Evaluate(#[from] EvalError),
    #[error("output {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Module the error originated in.
    pub fn module(&self) -> &'static str {
        match self {
            PipelineError::Spec(_) => "cli_service",
            PipelineError::Ingest(_) => "ingest",
            PipelineError::Represent(_) => "represent",
            PipelineError::Reduce(_) => "reduce",
            PipelineError::Proximity(_) => "proximity",
            PipelineError::CaEngine(_) => "ca_engine",
            PipelineError::Evaluate(_) => "evaluate",
            PipelineError::Output { .. } => "cli_service",
        }
    }

    pub fn is_spec_error(&self) -> bool {
        matches!(self, PipelineError::Spec(_))
    }
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// A `.sgm` file or a directory of them.
    #[default]
    Reuters,
    /// A directory of `.txt` files, optionally with a labels file.
    Plaintext,
    /// The JSON written by `ingest`.
    Json,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reuters" | "sgml" | "sgm" => Ok(Self::Reuters),
            "plaintext" | "text" | "txt" => Ok(Self::Plaintext),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown corpus format `{other}` (reuters, plaintext or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

impl CorpusSpec {
    pub fn load(&self) -> Result<Corpus, IngestError> {
        match self.format {
            CorpusFormat::Reuters => load_reuters(&self.path),
            CorpusFormat::Plaintext => load_plaintext_corpus(&self.path, self.labels.as_deref()),
            CorpusFormat::Json => load_corpus_json(&self.path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReductionSpec {
    None,
    /// Union of each document's `k` strongest χ² terms.
    Chi2 { k: usize },
    /// Global top `k` by information gain; needs labels.
    Infogain { k: usize },
}

impl Default for ReductionSpec {
    fn default() -> Self {
        ReductionSpec::Chi2 { k: 50 }
    }
}

impl std::str::FromStr for ReductionSpec {
    type Err = String;

    /// `none`, `chi2:K` or `infogain:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(ReductionSpec::None);
        }
        let (kind, k) = s
            .split_once([':', '='])
            .ok_or_else(|| format!("reduction `{s}` needs a k, e.g. chi2:50"))?;
        let k: usize = k.parse().map_err(|_| format!("bad k `{k}`"))?;
        match kind {
            "chi2" => Ok(ReductionSpec::Chi2 { k }),
            "infogain" | "ig" => Ok(ReductionSpec::Infogain { k }),
            other => Err(format!("unknown reduction `{other}` (none, chi2:K, infogain:K)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Level { level: u8 },
    Value { value: f64 },
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec::Level { level: 5 }
    }
}

impl From<ThresholdSpec> for Threshold {
    fn from(t: ThresholdSpec) -> Self {
        match t {
            ThresholdSpec::Level { level } => Threshold::Level(level),
            ThresholdSpec::Value { value } => Threshold::Similarity(value),
        }
    }
}

fn default_beta() -> f64 {
    1.0
}

/// Everything a run needs. Unset fields take the defaults shown by
/// `RunSpec::default()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub corpus: CorpusSpec,
    /// Keep only the first `n_docs` documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_docs: Option<usize>,
    #[serde(default = "default_representation")]
    pub representation: Representation,
    #[serde(default)]
    pub reduction: ReductionSpec,
    #[serde(default = "default_metric")]
    pub distance: Metric,
    #[serde(default)]
    pub threshold: ThresholdSpec,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub neighborhood: NeighborhoodKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// JSON tokenizer config (stop-word list, lemma map).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<PathBuf>,
    /// Record every wall-clock value as zero.
    #[serde(default)]
    pub reproducible: bool,
}

fn default_representation() -> Representation {
    Representation::Bag
}

fn default_metric() -> Metric {
    Metric::Cosine
}

impl RunSpec {
    pub fn new(corpus: CorpusSpec) -> Self {
        Self {
            corpus,
            n_docs: None,
            representation: default_representation(),
            reduction: ReductionSpec::default(),
            distance: default_metric(),
            threshold: ThresholdSpec::default(),
            strategy: Strategy::default(),
            neighborhood: NeighborhoodKind::default(),
            beta: default_beta(),
            output: None,
            tokenizer: None,
            reproducible: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let spec: RunSpec = serde_json::from_str(text).map_err(|e| PipelineError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every enumerated and ranged field.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Spec(m));
        if let Representation::Ngram { n } = self.representation {
            if !(2..=5).contains(&n) {
                return bad(format!("n-gram length {n} outside 2..=5"));
            }
        }
        match self.reduction {
            ReductionSpec::Chi2 { k: 0 } | ReductionSpec::Infogain { k: 0 } => {
                return bad("reduction k must be positive".into())
            }
            _ => {}
        }
        match self.threshold {
            ThresholdSpec::Level { level } if !(1..=10).contains(&level) => {
                return bad(format!("threshold level {level} outside 1..=10"))
            }
            ThresholdSpec::Value { value } if !(0.0..=1.0).contains(&value) => {
                return bad(format!("threshold {value} outside [0, 1]"))
            }
            _ => {}
        }
        if self.n_docs == Some(0) {
            return bad("n_docs must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        Ok(())
    }

    fn threshold_level(&self) -> Option<u8> {
        match self.threshold {
            ThresholdSpec::Level { level } => Some(level),
            ThresholdSpec::Value { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResolution {
    pub level: u8,
    pub threshold: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// All off-diagonal similarities are equal.
    pub degenerate: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("threshold level {0} outside 1..=10")]
    InvalidLevel(u8),
    #[error("similarity matrix has no off-diagonal entry")]
    NoPairs,
}

/// `s_min + (10 − level)·(s_max − s_min)/10` over the off-diagonal
/// similarities. Level 1 is the strictest.
pub fn resolve_threshold(level: u8, sim: &ProximityMatrix) -> Result<ThresholdResolution, ThresholdError> {
    if !(1..=10).contains(&level) {
        return Err(ThresholdError::InvalidLevel(level));
    }
    let (s_min, s_max) = sim
        .off_diagonal()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    if s_min > s_max {
        return Err(ThresholdError::NoPairs);
    }
    Ok(ThresholdResolution {
        level,
        threshold: s_min + f64::from(10 - level) * (s_max - s_min) / 10.0,
        s_min,
        s_max,
        degenerate: s_min == s_max,
    })
}

/// Corpus and weighted vectors, shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub labels: ClassLabeling,
    /// TF-IDF weighted, reduced, zero columns removed.
    pub matrix: TermDocumentMatrix,
    pub reduction: Option<ReductionReport>,
    /// Documents with an all-zero vector; they are reported as unplaced.
    pub quarantined: Vec<u32>,
    pub warnings: Vec<String>,
}

pub fn prepare(spec: &RunSpec) -> Result<Prepared, PipelineError> {
    spec.validate()?;
    let mut corpus = spec.corpus.load()?;
    if let Some(n) = spec.n_docs {
        corpus = select_first_n(&corpus, n)?;
    }
    let tokenizer = match &spec.tokenizer {
        Some(p) => TokenizerConfig::from_file(p)?,
        None => TokenizerConfig::english(),
    };
    let labels = ClassLabeling::from_corpus(&corpus);
    let counts = build_matrix(&corpus, spec.representation, &tokenizer)?;
    let mut warnings = Vec::new();
    if !counts.too_short.is_empty() {
        warnings.push(format!("documents shorter than the n-gram length: {:?}", counts.too_short));
    }
    let (reduced, reduction) = match spec.reduction {
        ReductionSpec::None => (counts, None),
        ReductionSpec::Chi2 { k } => {
            let report = chi2_select(&chi2_contributions(&counts)?, k)?;
            (project(&counts, &report.kept).0, Some(report))
        }
        ReductionSpec::Infogain { k } => {
            let report = infogain_select(&information_gain(&counts, &labels)?, k)?;
            (project(&counts, &report.kept).0, Some(report))
        }
    };
    let mut matrix = apply_tfidf(&reduced);
    let quarantined: Vec<u32> = matrix.columns.iter().filter(|c| c.is_zero()).map(|c| c.doc_id).collect();
    if !quarantined.is_empty() {
        warnings.push(format!("documents with a zero vector left unplaced: {quarantined:?}"));
        matrix.columns.retain(|c| !c.is_zero());
    }
    Ok(Prepared {
        corpus,
        labels,
        matrix,
        reduction,
        quarantined,
        warnings,
    })
}

impl Prepared {
    pub fn similarity(&self, metric: Metric) -> Result<ProximityMatrix, PipelineError> {
        Ok(to_similarity(&build_proximity(&self.matrix, metric)?))
    }

    pub fn doc_ids(&self) -> Vec<u32> {
        self.matrix.columns.iter().map(|c| c.doc_id).collect()
    }

    /// Runs the automaton and evaluates the result against corpus labels.
    pub fn cluster(
        &self,
        sim: &ProximityMatrix,
        threshold: ThresholdSpec,
        strategy: Strategy,
        neighborhood: NeighborhoodKind,
        beta: f64,
    ) -> Result<Clustering, PipelineError> {
        let resolution = match threshold {
            ThresholdSpec::Level { level } => match resolve_threshold(level, sim) {
                Ok(r) => Some(r),
                Err(ThresholdError::NoPairs) => None,
                Err(ThresholdError::InvalidLevel(l)) => return Err(CaError::InvalidLevel(l).into()),
            },
            ThresholdSpec::Value { .. } => None,
        };
        let config = CaConfig {
            neighborhood,
            strategy,
            threshold: match (threshold, resolution) {
                (_, Some(r)) => Threshold::Similarity(r.threshold),
                (t, None) => t.into(),
            },
        };
        let started = Instant::now();
        let mut grid = run(&self.doc_ids(), sim, &config)?;
        grid.unplaced.extend_from_slice(&self.quarantined);
        grid.unplaced.sort_unstable();
        let assignment = extract_clusters(&grid, neighborhood);
        let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;

        let eval = EvalConfig::new(beta)?;
        let (entropy_v, fmeasure_v) = match contingency(&assignment, &self.labels) {
            Ok(table) => (Some(entropy(&table)), Some(f_measure(&table, &eval))),
            Err(EvalError::EmptyOverlap) => (None, None),
            Err(e) => return Err(e.into()),
        };
        Ok(Clustering {
            grid,
            assignment,
            threshold: match config.threshold {
                Threshold::Similarity(t) => t,
                Threshold::Level(_) => 0.0,
            },
            resolution,
            elapsed_ms,
            entropy: entropy_v,
            fmeasure: fmeasure_v,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub grid: Grid,
    pub assignment: ClusterAssignment,
    pub threshold: f64,
    pub resolution: Option<ThresholdResolution>,
    /// Automaton run plus cluster extraction.
    pub elapsed_ms: f64,
    pub entropy: Option<f64>,
    pub fmeasure: Option<f64>,
}

/// Effective parameters and bookkeeping written next to the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub spec: RunSpec,
    pub run_id: u64,
    pub n_docs: usize,
    pub n_terms: usize,
    pub reduction: Option<ReductionReport>,
    pub threshold: f64,
    pub threshold_resolution: Option<ThresholdResolution>,
    pub n_clusters: usize,
    pub unplaced: Vec<u32>,
    pub warnings: Vec<String>,
    pub cluster_time_ms: f64,
    pub total_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub clustering: Clustering,
    pub metrics: MetricsRow,
    pub grid_state: GridState,
    pub grid_json: String,
    pub provenance: Provenance,
}

impl RunOutput {
    pub fn assignment(&self) -> &ClusterAssignment {
        &self.clustering.assignment
    }
}

fn next_run_id(dir: Option<&Path>) -> u64 {
    let Some(dir) = dir else { return 1 };
    let rows = fs::read_to_string(dir.join(METRICS_FILE))
        .map(|t| t.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
        .unwrap_or(0);
    rows as u64 + 1
}

/// Appends rows, writing the header first if the file is new or empty.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), PipelineError> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(output_err(path))?;
    let mut text = String::new();
    if fresh {
        text.push_str(MetricsRow::CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(output_err(path))
}

/// Reads every data row of a metrics CSV.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, PipelineError> {
    let text = fs::read_to_string(path).map_err(output_err(path))?;
    Ok(text.lines().skip(1).filter_map(MetricsRow::from_csv).collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(output_err(path))
}

/// One full run. When `spec.output` is set, writes the grid JSON, the
/// assignment, the provenance record and appends to the metrics CSV there.
pub fn run_pipeline(spec: &RunSpec) -> Result<RunOutput, PipelineError> {
    let started = Instant::now();
    let prepared = prepare(spec)?;
    let sim = prepared.similarity(spec.distance)?;
    let clustering = prepared.cluster(&sim, spec.threshold, spec.strategy, spec.neighborhood, spec.beta)?;

    let out_dir = spec.output.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(output_err(dir))?;
    }
    let run_id = next_run_id(out_dir);
    let clock = |ms: f64| if spec.reproducible { 0.0 } else { ms };
    let mut warnings = prepared.warnings.clone();
    if clustering.resolution.is_some_and(|r| r.degenerate) {
        warnings.push("degenerate similarity matrix: all pairs equally similar".into());
    }
    let metrics = MetricsRow {
        run_id,
        n_docs: prepared.corpus.len(),
        representation: spec.representation.label(),
        distance: spec.distance.name(),
        threshold_level: spec.threshold_level(),
        n_clusters: clustering.assignment.n_clusters,
        time_ms: clock(clustering.elapsed_ms),
        entropy_pct: clustering.entropy.map(|e| e * 100.0),
        fmeasure_pct: clustering.fmeasure.map(|f| f * 100.0),
    };
    let grid_state = GridState::new(&clustering.grid, Some(&clustering.assignment));
    let grid_json = serde_json::to_string_pretty(&grid_state).expect("grid state serializes");
    let provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        spec: spec.clone(),
        run_id,
        n_docs: prepared.corpus.len(),
        n_terms: prepared.matrix.n_terms(),
        reduction: prepared.reduction.clone().map(|mut r| {
            r.kept.clear();
            r
        }),
        threshold: clustering.threshold,
        threshold_resolution: clustering.resolution,
        n_clusters: clustering.assignment.n_clusters,
        unplaced: clustering.assignment.unplaced.iter().copied().collect(),
        warnings,
        cluster_time_ms: clock(clustering.elapsed_ms),
        total_time_ms: clock(started.elapsed().as_secs_f64() * 1000.0),
    };
    if let Some(dir) = out_dir {
        write_file(&dir.join(GRID_FILE), &grid_json)?;
        write_file(
            &dir.join(ASSIGNMENT_FILE),
            &serde_json::to_string_pretty(&clustering.assignment).expect("assignment serializes"),
        )?;
        write_file(
            &dir.join(PROVENANCE_FILE),
            &serde_json::to_string_pretty(&provenance).expect("provenance serializes"),
        )?;
        append_metrics(&dir.join(METRICS_FILE), std::slice::from_ref(&metrics))?;
    }
    Ok(RunOutput {
        prepared,
        clustering,
        metrics,
        grid_state,
        grid_json,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance: String,
    pub threshold_level: u8,
    pub threshold: f64,
    pub n_clusters: usize,
    pub time_ms: f64,
    pub entropy: Option<f64>,
    pub fmeasure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Cluster counts for one distance in level order.
    pub fn counts(&self, distance: &str) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.distance == distance)
            .map(|r| r.n_clusters)
            .collect()
    }
}

/// Runs every `(distance, level)` pair. The spec's own threshold and
/// distance are ignored. Vectors are built once; each distance builds its
/// matrix once.
pub fn run_sweep(spec: &RunSpec, levels: &[u8], distances: &[Metric]) -> Result<SweepResult, PipelineError> {
    if let Some(&l) = levels.iter().find(|l| !(1..=10).contains(*l)) {
        return Err(PipelineError::Spec(format!("threshold level {l} outside 1..=10")));
    }
    let prepared = prepare(spec)?;
    let out_dir = spec.output.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(output_err(dir))?;
    }
    let first_id = next_run_id(out_dir);
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for &metric in distances {
        let sim = prepared.similarity(metric)?;
        for &level in levels {
            let c = prepared.cluster(
                &sim,
                ThresholdSpec::Level { level },
                spec.strategy,
                spec.neighborhood,
                spec.beta,
            )?;
            let time_ms = if spec.reproducible { 0.0 } else { c.elapsed_ms };
            metrics.push(MetricsRow {
                run_id: first_id + metrics.len() as u64,
                n_docs: prepared.corpus.len(),
                representation: spec.representation.label(),
                distance: metric.name(),
                threshold_level: Some(level),
                n_clusters: c.assignment.n_clusters,
                time_ms,
                entropy_pct: c.entropy.map(|e| e * 100.0),
                fmeasure_pct: c.fmeasure.map(|f| f * 100.0),
            });
            rows.push(SweepRow {
                distance: metric.name(),
                threshold_level: level,
                threshold: c.threshold,
                n_clusters: c.assignment.n_clusters,
                time_ms,
                entropy: c.entropy,
                fmeasure: c.fmeasure,
            });
        }
    }
    let result = SweepResult { rows };
    if let Some(dir) = out_dir {
        append_metrics(&dir.join(METRICS_FILE), &metrics)?;
        write_file(
            &dir.join(SWEEP_FILE),
            &serde_json::to_string_pretty(&result).expect("sweep serializes"),
        )?;
    }
    Ok(result)
}
