//! Thin command-line wrapper over the library's runner entry points.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use haren::config::{Ablation, RunConfig, ScenarioKind};
use haren::data::MarkerPlacement;
use haren::gradcheck::FD_TOLERANCE;
use haren::runner;

#[derive(Parser)]
#[command(name = "haren", version, about = "Hierarchical multi-layer speech-feature fusion with CTC-supervised weak alignment")]
struct Cli {
    /// TOML configuration file (defaults < file < flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (also settable via HAREN_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Floating-point mode: 32 or 64.
    #[arg(long, global = true)]
    precision: Option<u8>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CorpusArgs {
    /// Corpus manifest path.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory holding codebook.hrnc and token_cache.jsonl.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// upper-bound or generalization.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// none, no-haren, or no-ctc.
    #[arg(long)]
    ablation: Option<String>,
    /// Layer for the no-haren baseline.
    #[arg(long)]
    designated_layer: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (feature files + manifest).
    Synth {
        /// Subjects per class as CONTROLxDEPRESSED, e.g. 8x8.
        #[arg(long)]
        subjects: Option<String>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        strength: Option<f64>,
        /// shallow-deep, shallow-only, or deep-only.
        #[arg(long)]
        placement: Option<String>,
        /// Fraction of each class tagged as the dev split.
        #[arg(long)]
        dev_fraction: Option<f64>,
    },
    /// Fit the K-means codebook and cache CTC targets.
    GenLabels {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Centroid count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train and report per the configured scenario.
    Train(TrainArgs),
    /// Score a saved model on the dev split (or the whole manifest).
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Saved model parameters (model.hrnp from train).
        #[arg(long)]
        model_params: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Crossval(TrainArgs),
    /// Train the single-layer baseline once per layer.
    LayerSweep(TrainArgs),
    /// Centroid-usage chi-square analysis over a token cache.
    Analyze {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        bonferroni: bool,
    },
    /// Finite-difference gradient verification at toy dimensions.
    Gradcheck,
}

fn parse_subjects(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return Err(format!("expected CONTROLxDEPRESSED (e.g. 8x8), got {s:?}"));
    }
    let c = parts[0].parse().map_err(|e| format!("bad control count: {e}"))?;
    let d = parts[1].parse().map_err(|e| format!("bad depressed count: {e}"))?;
    Ok((c, d))
}

fn parse_placement(s: &str) -> Result<MarkerPlacement, String> {
    match s {
        "shallow-deep" => Ok(MarkerPlacement::ShallowDeep),
        "shallow-only" => Ok(MarkerPlacement::ShallowOnly),
        "deep-only" => Ok(MarkerPlacement::DeepOnly),
        other => Err(format!("unknown placement {other:?}")),
    }
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    match s {
        "upper-bound" => Ok(ScenarioKind::UpperBound),
        "generalization" => Ok(ScenarioKind::Generalization),
        other => Err(format!("unknown scenario {other:?}")),
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    match s {
        "none" => Ok(Ablation::None),
        "no-haren" => Ok(Ablation::NoHaren),
        "no-ctc" => Ok(Ablation::NoCtc),
        other => Err(format!("unknown ablation {other:?}")),
    }
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) -> Result<(), String> {
    if let Some(m) = &args.corpus.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(l) = &args.corpus.labels {
        cfg.labels = Some(l.clone());
    }
    if let Some(s) = &args.scenario {
        cfg.train.scenario = parse_scenario(s)?;
    }
    if let Some(f) = args.folds {
        cfg.train.folds = f;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.optim.lr = lr;
    }
    if let Some(a) = &args.ablation {
        cfg.train.ablation = parse_ablation(a)?;
    }
    if let Some(l) = args.designated_layer {
        cfg.train.designated_layer = Some(l);
    }
    Ok(())
}

fn effective_out(cli_out: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, String> {
    if let Ok(env_out) = std::env::var("HAREN_OUT") {
        return Ok(PathBuf::from(env_out));
    }
    cli_out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| "no output directory: pass --out or set HAREN_OUT".to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    cfg.validate().map_err(|e| e.to_string())?;

    match &cli.command {
        Command::Synth {
            subjects,
            segments,
            frames,
            density,
            strength,
            placement,
            dev_fraction,
        } => {
            if let Some(s) = subjects {
                let (c, d) = parse_subjects(s)?;
                cfg.synth.control_subjects = c;
                cfg.synth.depressed_subjects = d;
            }
            if let Some(s) = segments {
                cfg.synth.segments_per_subject = *s;
            }
            if let Some(f) = frames {
                cfg.synth.frames = *f;
            }
            if let Some(d) = density {
                cfg.synth.marker_density = *d;
            }
            if let Some(s) = strength {
                cfg.synth.marker_strength = *s;
            }
            if let Some(p) = placement {
                cfg.synth.placement = parse_placement(p)?;
            }
            if let Some(f) = dev_fraction {
                cfg.synth.dev_fraction = *f;
            }
            // Keep the generator's layer/dim layout in sync with the model.
            cfg.synth.layers = cfg.model.layers;
            cfg.synth.dim = cfg.model.dim;
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let manifest = runner::run_synth(&cfg, &out).map_err(|e| e.to_string())?;
            println!("manifest: {}", manifest.display());
        }
        Command::GenLabels { corpus, k } => {
            if let Some(m) = &corpus.manifest {
                cfg.manifest = Some(m.clone());
            }
            if let Some(k) = k {
                cfg.model.centroids = *k;
            }
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let outcome = runner::run_gen_labels(&cfg, &out).map_err(|e| e.to_string())?;
            println!(
                "codebook: k={} vocab={} ({} segments cached)",
                outcome.codebook.k,
                haren::ctc::vocab_size(outcome.codebook.k),
                outcome.records
            );
        }
        Command::Train(args) => {
            apply_train_args(&mut cfg, args)?;
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let report = runner::run_train(&cfg, &out).map_err(|e| e.to_string())?;
            println!(
                "{}: macro_f1 {:.4} ({:.4})",
                report.scenario, report.macro_f1.mean, report.macro_f1.sd
            );
        }
        Command::Eval {
            corpus,
            model_params,
        } => {
            if let Some(m) = &corpus.manifest {
                cfg.manifest = Some(m.clone());
            }
            if let Some(p) = model_params {
                cfg.model_params = Some(p.clone());
            }
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let report = runner::run_eval(&cfg, &out).map_err(|e| e.to_string())?;
            println!("eval: macro_f1 {:.4}", report.macro_f1.mean);
        }
        Command::Crossval(args) => {
            apply_train_args(&mut cfg, args)?;
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let report = runner::run_crossval(&cfg, &out).map_err(|e| e.to_string())?;
            println!(
                "generalization: macro_f1 {:.4} ({:.4}) over {} folds",
                report.macro_f1.mean,
                report.macro_f1.sd,
                report.folds.len()
            );
        }
        Command::LayerSweep(args) => {
            apply_train_args(&mut cfg, args)?;
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let rows = runner::run_layer_sweep(&cfg, &out).map_err(|e| e.to_string())?;
            println!("layer\tmacro_f1");
            for r in &rows {
                println!("{}\t{:.4}", r.layer, r.macro_f1);
            }
        }
        Command::Analyze {
            corpus,
            alpha,
            bonferroni,
        } => {
            if let Some(m) = &corpus.manifest {
                cfg.manifest = Some(m.clone());
            }
            if let Some(l) = &corpus.labels {
                cfg.labels = Some(l.clone());
            }
            if let Some(a) = alpha {
                cfg.analysis.alpha = *a;
            }
            if *bonferroni {
                cfg.analysis.bonferroni = true;
            }
            let out = effective_out(&cli.out, &cfg)?;
            cfg.out = Some(out.clone());
            let summary = runner::run_analyze(&cfg, &out).map_err(|e| e.to_string())?;
            println!(
                "analyzed {} segments over k={} centroids; significant: {:?}",
                summary.segments_analyzed, summary.k, summary.significant_centroids
            );
        }
        Command::Gradcheck => {
            let rows = runner::run_gradcheck(&cfg).map_err(|e| e.to_string())?;
            println!("{:<20} {:>8} {:>14} {:>6}", "group", "count", "max_rel_err", "pass");
            let mut all_ok = true;
            for r in &rows {
                let ok = r.passed();
                all_ok &= ok;
                println!(
                    "{:<20} {:>8} {:>14.3e} {:>6}",
                    r.group,
                    r.count,
                    r.max_rel_err,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if !all_ok {
                return Err(format!(
                    "gradient check failed (tolerance {FD_TOLERANCE:.0e})"
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
