//! Argument parsing and the command implementations behind the `ca3d` binary.

use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ca3d::ca_engine::{parse_grid_state, NeighborhoodKind, Strategy};
use ca3d::pipeline::{
    run_pipeline, run_sweep, CorpusFormat, CorpusSpec, PipelineError, ReductionSpec, RunSpec, ThresholdSpec,
    GRID_FILE,
};
use ca3d::proximity::Metric;
use ca3d::represent::Representation;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "ca3d", version, about = "Cluster documents on a 3D cellular automaton")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a corpus and write it as JSON
    Ingest(IngestArgs),
    /// Run the full pipeline once
    Cluster(ClusterArgs),
    /// Run every threshold level for one or more distances
    Sweep(SweepArgs),
    /// Serve clustering runs and documents over HTTP
    Serve(ServeArgs),
    /// Re-export a grid-state file as JSON or CSV
    ExportGrid(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus file or directory
    pub path: PathBuf,
    #[arg(long, default_value = "reuters")]
    pub format: CorpusFormat,
    /// `filename<TAB>label,label` file for plaintext corpora
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Keep only the first N documents
    #[arg(long)]
    pub n_docs: Option<usize>,
    /// Output file; standard output when omitted
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Run parameters. Flags override the spec file, which overrides defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct SpecArgs {
    /// RunSpec JSON file
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Corpus file or directory
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// reuters, plaintext or json
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub n_docs: Option<usize>,
    /// bag or ngram:N with N in 2..=5
    #[arg(long)]
    pub representation: Option<Representation>,
    /// none, chi2:K or infogain:K
    #[arg(long)]
    pub reduction: Option<ReductionSpec>,
    /// Stop-word and lemma configuration (JSON)
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// moore or von_neumann
    #[arg(long)]
    pub neighborhood: Option<NeighborhoodKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output directory for grid, metrics and provenance files
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Record wall-clock times as zero so repeated runs are byte-identical
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// cosine, euclidean, manhattan, chebyshev, average, mahalanobis, minkowski:R
    #[arg(long)]
    pub distance: Option<Metric>,
    /// Threshold level 1..=10 (1 is the strictest)
    #[arg(long, conflicts_with = "threshold")]
    pub level: Option<u8>,
    /// Explicit similarity threshold in [0, 1]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Print the metrics row as JSON instead of CSV
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Comma-separated distances
    #[arg(long, value_delimiter = ',', default_value = "cosine,euclidean,chebyshev")]
    pub distances: Vec<Metric>,
    /// Comma-separated levels
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub levels: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding the service's metrics and latest run
    #[arg(long, default_value = "ca3d-state")]
    pub state_dir: PathBuf,
    /// Address to listen on
    #[arg(long, env = "CA3D_BIND", default_value = DEFAULT_BIND)]
    pub bind: SocketAddr,
    /// RunSpec to execute before accepting requests
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory or grid-state JSON file
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    /// Output file; standard output when omitted
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

impl SpecArgs {
    /// Spec file (if any) with every given flag applied on top.
    pub fn effective(&self) -> Result<RunSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<RunSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => {
                let Some(path) = &self.corpus else {
                    bail!("either --spec or --corpus is required");
                };
                RunSpec::new(CorpusSpec {
                    path: path.clone(),
                    format: CorpusFormat::default(),
                    labels: None,
                })
            }
        };
        if let Some(p) = &self.corpus {
            spec.corpus.path = p.clone();
        }
        if let Some(f) = self.format {
            spec.corpus.format = f;
        }
        if let Some(l) = &self.labels {
            spec.corpus.labels = Some(l.clone());
        }
        if let Some(n) = self.n_docs {
            spec.n_docs = Some(n);
        }
        if let Some(r) = self.representation {
            spec.representation = r;
        }
        if let Some(r) = self.reduction {
            spec.reduction = r;
        }
        if let Some(t) = &self.tokenizer {
            spec.tokenizer = Some(t.clone());
        }
        if let Some(s) = self.strategy {
            spec.strategy = s;
        }
        if let Some(n) = self.neighborhood {
            spec.neighborhood = n;
        }
        if let Some(b) = self.beta {
            spec.beta = b;
        }
        if let Some(o) = &self.output {
            spec.output = Some(o.clone());
        }
        if self.reproducible {
            spec.reproducible = true;
        }
        Ok(spec)
    }
}

impl ClusterArgs {
    pub fn effective(&self) -> Result<RunSpec> {
        let mut spec = self.spec.effective()?;
        if let Some(d) = self.distance {
            spec.distance = d;
        }
        if let Some(level) = self.level {
            spec.threshold = ThresholdSpec::Level { level };
        }
        if let Some(value) = self.threshold {
            spec.threshold = ThresholdSpec::Value { value };
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Adds the failing module to pipeline errors.
fn provenance(e: PipelineError) -> anyhow::Error {
    let module = e.module();
    anyhow::Error::new(e).context(format!("[{module}]"))
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let spec = CorpusSpec {
        path: args.path.clone(),
        format: args.format,
        labels: args.labels.clone(),
    };
    let mut corpus = spec.load().map_err(|e| provenance(e.into()))?;
    if let Some(n) = args.n_docs {
        corpus = ca3d::ingest::select_first_n(&corpus, n).map_err(|e| provenance(e.into()))?;
    }
    write_out(args.out.as_deref(), &corpus.to_json())?;
    log::info!(
        "{} documents, {} labels",
        corpus.len(),
        corpus.label_universe.len()
    );
    Ok(())
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let spec = args.effective()?;
    let out = run_pipeline(&spec).map_err(provenance)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&out.metrics)?);
    } else {
        println!("{}", ca3d::evaluate::MetricsRow::CSV_HEADER);
        println!("{}", out.metrics.to_csv());
    }
    if !out.provenance.unplaced.is_empty() {
        log::warn!("unplaced documents: {:?}", out.provenance.unplaced);
    }
    for w in &out.provenance.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let spec = args.spec.effective()?;
    let result = run_sweep(&spec, &args.levels, &args.distances).map_err(provenance)?;
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "-".into());
    println!(
        "{:<14} {:>5} {:>9} {:>9} {:>10} {:>8} {:>8}",
        "distance", "level", "threshold", "clusters", "time_ms", "E(p)%", "F(p)%"
    );
    for r in &result.rows {
        println!(
            "{:<14} {:>5} {:>9.4} {:>9} {:>10.3} {:>8} {:>8}",
            r.distance,
            r.threshold_level,
            r.threshold,
            r.n_clusters,
            r.time_ms,
            pct(r.entropy),
            pct(r.fmeasure)
        );
    }
    Ok(())
}

pub fn export_grid(args: &ExportArgs) -> Result<()> {
    let file = if args.input.is_dir() {
        args.input.join(GRID_FILE)
    } else {
        args.input.clone()
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let state = parse_grid_state(&text).map_err(|e| provenance(e.into()))?;
    // round-trip through the grid so malformed cells are rejected
    state.to_grid().map_err(|e| provenance(e.into()))?;
    let rendered = match args.format {
        ExportFormat::Json => serde_json::to_string_pretty(&state)? + "\n",
        ExportFormat::Csv => {
            let mut s = String::from("i,j,k,state,doc_id,cluster_id\n");
            let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
            for c in &state.cells {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.i,
                    c.j,
                    c.k,
                    c.state,
                    opt(c.doc_id),
                    opt(c.cluster_id)
                ));
            }
            s
        }
    };
    write_out(args.out.as_deref(), &rendered)
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let initial = match &args.spec {
        Some(path) => Some(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let state = crate::service::AppState::new(args.state_dir.clone())?;
        if let Some(text) = initial {
            let spec = RunSpec::from_json(&text).map_err(provenance)?;
            state.run(spec).await.map_err(provenance)?;
        }
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Cluster(a) => cluster(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Serve(a) => serve(&a),
        Command::ExportGrid(a) => export_grid(&a),
    }
}
