use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use redraft_core::backends::http::HttpBackendsConfig;
use redraft_core::backends::mock::{mock_backends, MockGenerator};
use redraft_core::backends::{Backends, ScorerSpec};
use redraft_core::config::load_config;
use redraft_core::eval::attack::{AttackMode, ChannelModel};
use redraft_core::eval::cost::CostInputs;
use redraft_core::pipeline::{
    self, attack_rewrites, audit, emit_report, evaluate_rewrites, ingest_dataset, load_rewrites,
    run_ablation, run_alignment, run_pipeline, AlignerKind, Dataset, PipelineError, PipelineOptions,
    EXIT_BACKEND, EXIT_OK, EXIT_VALIDATION,
};
use redraft_core::rewriter::PromptTemplate;
use redraft_core::search::StrategyKind;

#[derive(Parser)]
#[command(name = "redraft", version, about = "Privacy-aware rewriting of user text by tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find privacy segments and write alignments.jsonl.
    Align(Common),
    /// Align, rewrite, evaluate and write a run manifest.
    Rewrite {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
        /// Cost inputs for the report: p_ours,p_base,c_ours,c_base.
        #[arg(long)]
        cost: Option<CostInputs>,
    },
    /// Score an existing rewrites file against its dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out-dir>/rewrites.jsonl.
        #[arg(long)]
        rewrites: Option<PathBuf>,
    },
    /// Run the reconstruction attack on an existing rewrites file.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
        /// Defaults to <out-dir>/rewrites.jsonl.
        #[arg(long)]
        rewrites: Option<PathBuf>,
    },
    /// Run all five strategies on a shared alignment.
    Ablate(Common),
    /// Render the reports of a finished run.
    Report {
        /// Manifest file or run directory.
        #[arg(long, default_value = "out")]
        manifest: PathBuf,
        /// Cost inputs: p_ours,p_base,c_ours,c_base.
        #[arg(long)]
        cost: Option<CostInputs>,
    },
    /// Verify every hash recorded in a run manifest.
    Audit {
        /// Manifest file or run directory.
        #[arg(long, default_value = "out")]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    RewardModel,
    PrivacyNli,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackModeArg {
    ContextFree,
    Contextual,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dataset: PathBuf,
    /// Search settings file (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "tree")]
    strategy: StrategyKind,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Endpoint file for --backend http.
    #[arg(long)]
    backend_config: Option<PathBuf>,
    /// Overrides rng_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "reward-model")]
    scorer: ScorerArg,
    /// Reward and NLI weights for --scorer linear.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    scorer_weights: Option<Vec<f64>>,
    #[arg(long, default_value = "reward-model")]
    aligner: AlignerKind,
    #[arg(long)]
    align_threshold: Option<f64>,
    /// Prompt template with {sentence}, {segment} and {action_directive}.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Rewrite only the first N sentences of each document.
    #[arg(long)]
    max_sentences: Option<usize>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Channel model file (JSON).
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "context-free")]
    attack_mode: AttackModeArg,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.to_string(),
    }
}

impl Common {
    fn scorer_spec(&self) -> Result<ScorerSpec, Failure> {
        match self.scorer {
            ScorerArg::RewardModel => Ok(ScorerSpec::reward_model()),
            ScorerArg::PrivacyNli => Ok(ScorerSpec::privacy_nli()),
            ScorerArg::Linear => {
                let (r, n) = match self.scorer_weights.as_deref() {
                    Some([r, n]) => (*r, *n),
                    _ => ScorerSpec::DEFAULT_WEIGHTS,
                };
                ScorerSpec::linear(r, n).map_err(invalid)
            }
        }
    }

    fn backends(&self) -> Result<Backends, Failure> {
        let scorer = self.scorer_spec()?;
        match self.backend {
            BackendKind::Mock => Ok(mock_backends(MockGenerator::new(), scorer)),
            BackendKind::Http => {
                let path = self
                    .backend_config
                    .as_deref()
                    .ok_or_else(|| invalid("--backend http requires --backend-config"))?;
                HttpBackendsConfig::load(path)
                    .and_then(|c| c.build(scorer))
                    .map_err(invalid)
            }
        }
    }

    fn options(&self) -> Result<PipelineOptions, Failure> {
        let mut cfg = load_config(self.config.as_deref()).map_err(invalid)?;
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        let template = match &self.template {
            Some(p) => PromptTemplate::from_file(p).map_err(invalid)?,
            None => PromptTemplate::default(),
        };
        Ok(PipelineOptions {
            cfg,
            strategy: self.strategy,
            template,
            aligner: self.aligner,
            align_threshold: self.align_threshold,
            max_sentences: self.max_sentences,
            workers: self.workers,
            ..Default::default()
        })
    }

    fn dataset(&self) -> Result<Dataset, Failure> {
        let ds = ingest_dataset(&self.dataset)?;
        if !ds.rejects.is_empty() {
            eprintln!("{} dataset line(s) rejected", ds.rejects.len());
        }
        Ok(ds)
    }

    fn rewrites_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.out_dir.join(pipeline::REWRITES_FILE))
    }
}

impl AttackArgs {
    fn apply(&self, opts: &mut PipelineOptions) -> Result<(), Failure> {
        opts.attack_mode = match self.attack_mode {
            AttackModeArg::ContextFree => AttackMode::ContextFree,
            AttackModeArg::Contextual => AttackMode::Contextual,
        };
        if let Some(p) = &self.channel {
            opts.channel = Some(ChannelModel::load(p).map_err(invalid)?);
        }
        Ok(())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| invalid(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Align(common) => {
            let ds = common.dataset()?;
            let opts = common.options()?;
            let backends = common.backends()?;
            let (aligned, failed) = run_alignment(&ds, &opts, &backends, &common.out_dir)?;
            for a in &aligned {
                println!("{}\t{}", a.doc_id, a.segment_surfaces().join(" | "));
            }
            for f in &failed {
                eprintln!("{}: {}", f.doc_id, f.message);
            }
            Ok(if failed.is_empty() { EXIT_OK } else { pipeline::EXIT_PARTIAL })
        }
        Command::Rewrite { common, attack, cost } => {
            let ds = common.dataset()?;
            let mut opts = common.options()?;
            attack.apply(&mut opts)?;
            opts.cost = cost;
            let backends = common.backends()?;
            let out = run_pipeline(&ds, &opts, &backends, &common.out_dir)?;
            print!("{}", out.metrics.render_table());
            if let Some(a) = &out.attack {
                print!("\n{}", a.render_table());
            }
            for f in &out.failures {
                eprintln!("skipped {} ({}): {}", f.doc_id, f.stage, f.message);
            }
            Ok(out.exit_code())
        }
        Command::Evaluate { common, rewrites } => {
            let ds = common.dataset()?;
            let opts = common.options()?;
            let backends = common.backends()?;
            let rows = load_rewrites(&common.rewrites_path(&rewrites))?;
            let report = evaluate_rewrites(&ds.records, &rows, &opts, &backends)?;
            write(&common.out_dir.join(pipeline::METRICS_FILE), &(report.to_json() + "\n"))?;
            write(&common.out_dir.join(pipeline::METRICS_TABLE_FILE), &report.render_table())?;
            print!("{}", report.render_table());
            Ok(EXIT_OK)
        }
        Command::Attack { common, attack, rewrites } => {
            let ds = common.dataset()?;
            let mut opts = common.options()?;
            attack.apply(&mut opts)?;
            let channel = opts.channel.as_ref().ok_or_else(|| invalid("attack requires --channel"))?;
            let rows = load_rewrites(&common.rewrites_path(&rewrites))?;
            let report = attack_rewrites(&ds.records, &rows, channel, opts.attack_mode)?;
            write(&common.out_dir.join(pipeline::ATTACK_FILE), &(report.to_json() + "\n"))?;
            write(&common.out_dir.join(pipeline::ATTACK_TABLE_FILE), &report.render_table())?;
            print!("{}", report.render_table());
            Ok(EXIT_OK)
        }
        Command::Ablate(common) => {
            let ds = common.dataset()?;
            let opts = common.options()?;
            let backends = common.backends()?;
            let report = run_ablation(&ds, &opts, &backends, &common.out_dir)?;
            print!("{}", report.render_table());
            let partial = report.rows.iter().any(|r| r.skipped > 0);
            Ok(if partial { pipeline::EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Report { manifest, cost } => {
            let report = emit_report(&manifest, cost)?;
            let (_, dir) = pipeline::manifest::resolve_manifest(&manifest);
            write(&dir.join("report.json"), &report.to_json())?;
            write(&dir.join("report.txt"), &report.text)?;
            print!("{}", report.text);
            Ok(EXIT_OK)
        }
        Command::Audit { manifest } => {
            let issues = audit(&manifest)?;
            if issues.is_empty() {
                println!("ok: all recorded hashes match");
                return Ok(EXIT_OK);
            }
            for i in &issues {
                println!("{}", serde_json::to_string(i).expect("issues serialize"));
            }
            Ok(EXIT_VALIDATION)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    debug_assert!((0..=EXIT_BACKEND + 1).contains(&code));
    ExitCode::from(code as u8)
}
