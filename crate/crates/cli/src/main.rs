use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgrec_core::ingest::{dataset_stats, load_dataset, write_canonical, Dataset, SamplingStrategy};
use kgrec_core::llm::BackendKind;
use kgrec_core::ranking_eval::{EvalReport, Method};
use kgrec_core::run::{
    evaluate_run, full_run, simulate_run, write_json, EvaluateOptions, RunConfig, RunError, SimSummary,
    SimulateOptions,
};
use kgrec_core::synth::{density, planted, DensityConfig, PlantedConfig};

#[derive(Parser)]
#[command(name = "kgrec", version, about = "Knowledge-graph-augmented agent simulation for recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log filter, e.g. `info` or `kgrec_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and write it in canonical form with path statistics.
    Ingest {
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Interactions sampled for the average path counts.
        #[arg(long, default_value_t = 1000)]
        stats_pairs: usize,
    },
    /// Write a synthetic dataset.
    Generate {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        /// Master seed for sampling, negatives and shuffles [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Number of users (defaults to the generator's own).
        /// Number of users to sample [default: 100].
        #[arg(long)]
        users: Option<usize>,
    },
    /// Simulate the sampled users and write memories and step records.
    Simulate(SimArgs),
    /// Rank held-out items for a simulated run and write the report.
    Evaluate(EvalArgs),
    /// Simulate, then evaluate.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated rankers: agent, pop, bm25, random.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Also write the path word-count reduction report.
        #[arg(long)]
        word_counts: bool,
    },
    /// Print the report of an evaluated run.
    Report {
        /// Run directory written by `simulate`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Planted,
    Density,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Args)]
struct SimArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Base configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for sampling, negatives and shuffles [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Number of users to sample [default: 100].
    #[arg(long)]
    users: Option<usize>,
    /// User sampling: `dense` (most interactions first) or `uniform`.
    #[arg(long, value_parser = parse_sampling)]
    sampling: Option<SamplingStrategy>,
    /// Remove every KG-derived prompt section.
    #[arg(long)]
    no_kg: bool,
    /// Candidate set size for ranking [default: 10].
    #[arg(long)]
    candidates: Option<usize>,
    /// Evaluation repeats with reshuffled presentation [default: 3].
    #[arg(long)]
    repeats: Option<usize>,
    /// LLM backend: `mock`, `http` or `replay`.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Chat completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the http backend.
    #[arg(long)]
    model: Option<String>,
    /// Completion token limit per request.
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Concurrent requests allowed against the backend.
    #[arg(long)]
    max_inflight: Option<usize>,
    /// Transcript file or run directory for the replay backend.
    #[arg(long)]
    replay_from: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Run directory; defaults to runs/<dataset>-<kg|no-kg>-s<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Users processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Continue from the checkpoints in --out.
    #[arg(long)]
    resume: bool,
    /// Pause every user after this many steps.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `simulate`.
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated rankers: agent, pop, bm25, random.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Evaluation repeats with reshuffled presentation [default: 3].
    #[arg(long)]
    repeats: Option<usize>,
    /// Also write the path word-count reduction report.
    #[arg(long)]
    word_counts: bool,
    /// Users processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_sampling(s: &str) -> Result<SamplingStrategy, String> {
    s.parse()
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

impl SimArgs {
    fn config(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| RunError::Json {
                    path: path.clone(),
                    source,
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if cfg.dataset.as_os_str().is_empty() {
            return Err(RunError::Usage("--dataset is required".into()));
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set!(
            seed => cfg.seed,
            users => cfg.users,
            sampling => cfg.sampling,
            candidates => cfg.candidates,
            repeats => cfg.repeats,
            backend => cfg.llm.backend,
            max_tokens => cfg.llm.max_tokens,
            max_inflight => cfg.llm.max_inflight,
        );
        if self.no_kg {
            cfg.kg_enabled = false;
        }
        if self.endpoint.is_some() {
            cfg.llm.endpoint = self.endpoint.clone();
        }
        if let Some(m) = &self.model {
            cfg.llm.model = m.clone();
        }
        if self.replay_from.is_some() {
            cfg.llm.replay_from = self.replay_from.clone();
        }
        if self.templates.is_some() {
            cfg.templates = self.templates.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let name = cfg
                .dataset
                .parent()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into());
            PathBuf::from("runs").join(format!("{name}-{}-s{}", cfg.condition(), cfg.seed))
        })
    }

    fn options(&self) -> SimulateOptions {
        SimulateOptions {
            jobs: self.jobs,
            resume: self.resume,
            stop_after: self.stop_after,
        }
    }
}

fn write_dataset(dataset: &Dataset, out: &Path, stats_pairs: usize) -> Result<(), RunError> {
    write_canonical(dataset, out)?;
    let stats = dataset_stats(dataset, stats_pairs)?;
    write_json(&out.join("stats.json"), &stats)?;
    println!(
        "{}: {} entities, {} triples, {} interactions; avg 2-hop {:.2}, avg 3-hop {:.2} over {} pairs",
        stats.name,
        dataset.graph.entity_count(),
        dataset.graph.triple_count(),
        stats.interactions,
        stats.avg_2hop,
        stats.avg_3hop,
        stats.sampled_pairs
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn print_summary(out: &Path, s: &SimSummary) {
    println!(
        "simulated {} users ({}): {} steps, {} applied, {} skipped, accuracy {:.3}",
        s.users, s.condition, s.steps, s.applied, s.skipped, s.accuracy
    );
    if !s.paused_users.is_empty() {
        println!("{} users paused; continue with --resume", s.paused_users.len());
    }
    println!("run directory: {}", out.display());
}

fn print_report(report: &EvalReport) {
    print!("{}", report.to_markdown());
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Ingest {
            manifest,
            out,
            stats_pairs,
        } => {
            let dataset = load_dataset(&manifest)?;
            write_dataset(&dataset, &out, stats_pairs)
        }
        Command::Generate { kind, out, seed, users } => {
            let dataset = match kind {
                SynthKind::Planted => {
                    let mut c = PlantedConfig::default();
                    c.seed = seed.unwrap_or(c.seed);
                    c.users = users.unwrap_or(c.users);
                    planted(&c)
                }
                SynthKind::Density => {
                    let mut c = DensityConfig::default();
                    c.seed = seed.unwrap_or(c.seed);
                    c.users = users.unwrap_or(c.users);
                    density(&c)
                }
            };
            write_dataset(&dataset, &out, 1000)
        }
        Command::Simulate(args) => {
            let cfg = args.config()?;
            let out = args.out_dir(&cfg);
            let summary = simulate_run(&cfg, &out, &args.options())?;
            print_summary(&out, &summary);
            if summary.aborted_users.is_empty() {
                Ok(())
            } else {
                Err(RunError::UsersAborted {
                    aborted: summary.aborted_users,
                    total: summary.users,
                })
            }
        }
        Command::Evaluate(args) => {
            let report = evaluate_run(
                &args.run,
                &EvaluateOptions {
                    jobs: args.jobs,
                    methods: args.methods,
                    repeats: args.repeats,
                    word_counts: args.word_counts,
                },
            )?;
            print_report(&report);
            Ok(())
        }
        Command::Run {
            sim,
            methods,
            word_counts,
        } => {
            let cfg = sim.config()?;
            let out = sim.out_dir(&cfg);
            let eval = EvaluateOptions {
                jobs: sim.jobs,
                methods,
                repeats: None,
                word_counts,
            };
            let (summary, report) = full_run(&cfg, &out, &sim.options(), &eval)?;
            print_summary(&out, &summary);
            if let Some(r) = report {
                print_report(&r);
            }
            Ok(())
        }
        Command::Report { run, format } => {
            let path = run.join("eval").join("report.json");
            let text = std::fs::read_to_string(&path).map_err(|source| RunError::Io {
                path: path.clone(),
                source,
            })?;
            let report: EvalReport = serde_json::from_str(&text).map_err(|source| RunError::Json { path, source })?;
            match format {
                ReportFormat::Markdown => print_report(&report),
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
