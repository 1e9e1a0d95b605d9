use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctd::calibration::{CalibrationMode, CalibrationSettings};
use ctd::config::{Config, ExperimentConfig};
use ctd::dataset::{load_jsonl, write_jsonl, Example};
use ctd::delegation::{PolicyArtifact, Signal};
use ctd::harness::{
    analyze_groups, apply_threshold, calibrate_signal, emit_report, evaluate, group_csv, ranking_curves, run_coverage,
    run_sweep, sweep_csv, CoverageVariant, DvSource, Pipeline, ReportFormat, Strategy, SweepReport,
};
use ctd::probes::{train_logistic, DvTarget, LinearModel};
use ctd::synth::{generate, generate_draw};
use ctd::{CtdError, Result};

#[derive(Parser)]
#[command(name = "ctd", version, about = "Budget-calibrated delegation from a cheap probe to an expert")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Labelled JSONL data; defaults to the synthetic dataset from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Safety probe model; trained on a fresh synthetic draw when absent and needed.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// DV probe model; fitted on the dev split when absent.
    #[arg(long)]
    dv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and an independent probe-training draw.
    Generate {
        #[arg(long)]
        preset: Option<String>,
    },
    /// Fit the logistic safety probe.
    TrainProbe {
        /// Training JSONL; defaults to a synthetic draw.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Fit the ridge DV probe on the dev split.
    TrainDv {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        target: Option<DvTarget>,
    },
    /// Certify a delegation threshold and write the audit trail and policy.
    Calibrate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// `dv` or `uncertainty`.
        #[arg(long, default_value = "dv")]
        signal: String,
        #[arg(long, default_value = "pareto")]
        mode: CalibrationMode,
    },
    /// Evaluate every strategy across the budget grid.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Repeat calibration over random re-splits and report budget violations.
    Coverage {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        variant: Option<CoverageVariant>,
    },
    /// Per-group delegation rates and delegation values.
    GroupAnalysis {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Re-emit a saved sweep report.
    Report {
        /// Sweep report JSON; defaults to `<out-dir>/sweep.json`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Defaults to `<out-dir>/report.<format>`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli, preset: Option<&str>) -> Result<ExperimentConfig> {
    let mut raw = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(p) = preset {
        raw.set("synth.preset", p);
    }
    let cfg = ExperimentConfig::from_config(&raw)?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CtdError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_data(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<Example>> {
    match &inputs.data {
        Some(path) => load_jsonl(path),
        None => generate(&cfg.synth),
    }
}

fn pipeline(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Pipeline> {
    let data = load_data(cfg, inputs)?;
    let probe = match &inputs.probe {
        Some(path) => Some(LinearModel::load(path)?),
        None if data.iter().any(|e| e.probe_score.is_none()) => Some(cfg.train_probe()?),
        None => None,
    };
    let dv = match &inputs.dv {
        Some(path) => DvSource::Model(LinearModel::load(path)?),
        None => cfg.dv_source(),
    };
    Pipeline::build(probe.as_ref(), &data, &cfg.split, &dv)
}

fn run(cli: Cli) -> Result<()> {
    let preset = match &cli.command {
        Command::Generate { preset } => preset.as_deref(),
        _ => None,
    };
    let cfg = load_config(&cli, preset)?;
    let out = cli.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| CtdError::Io {
        path: out.display().to_string(),
        source: e,
    })?;

    match &cli.command {
        Command::Generate { .. } => {
            let data = generate(&cfg.synth)?;
            let probe_train = generate_draw(&cfg.synth, 1)?;
            write_jsonl(out.join("dataset.jsonl"), &data)?;
            write_jsonl(out.join("probe_train.jsonl"), &probe_train)?;
            println!("wrote {} examples to {}", data.len(), out.join("dataset.jsonl").display());
        }
        Command::TrainProbe { train } => {
            let data = match train {
                Some(path) => load_jsonl(path)?,
                None => cfg.probe_training_set()?,
            };
            let fit = train_logistic(&data, &cfg.probe_train)?;
            fit.model.save(out.join("probe.json"))?;
            println!(
                "probe: {} iterations, gradient norm {:.3e}, converged {}",
                fit.iterations, fit.gradient_norm, fit.converged
            );
        }
        Command::TrainDv { inputs, target } => {
            let mut cfg = cfg.clone();
            if let Some(t) = target {
                cfg.dv_target = *t;
            }
            let p = pipeline(&cfg, &Inputs { dv: None, ..inputs.clone() })?;
            p.dv_model.save(out.join("dv.json"))?;
            println!("dv probe fitted on {} dev examples", p.dev_len);
        }
        Command::Calibrate {
            inputs,
            alpha,
            delta,
            signal,
            mode,
        } => {
            let signal = match signal.as_str() {
                "dv" => Signal::Dv,
                "uncertainty" => Signal::Uncertainty,
                other => return Err(CtdError::Config { key: "signal".into(), message: format!("unknown signal `{other}`") }),
            };
            let p = pipeline(&cfg, inputs)?;
            let settings = CalibrationSettings {
                alpha: alpha.unwrap_or(cfg.coverage.alpha),
                delta: delta.unwrap_or(cfg.sweep.delta),
                loss_kind: cfg.sweep.loss_kind,
                mode: *mode,
            };
            let (result, reference) = calibrate_signal(&p.est, &p.cal, signal, &settings, cfg.sweep.grid_size)?;
            let policy = result.policy(signal);
            let metrics = evaluate(&p.eval, &apply_threshold(&p.eval, &policy, reference.as_ref())?)?;
            let dv_model = if signal == Signal::Dv {
                p.dv_model.save(out.join("dv.json"))?;
                Some("dv.json".to_string())
            } else {
                None
            };
            let artifact = PolicyArtifact::Threshold {
                policy,
                dv_model,
                uncertainty_reference: reference,
            };
            write(&out.join("calibration.json"), &result.to_json()?)?;
            write(&out.join("policy.json"), &artifact.to_json()?)?;
            println!(
                "lambda {} ({} certified, fallback {}); eval delegation rate {:.4}, accuracy {:.4}",
                result.selected,
                result.certified.len(),
                result.fallback,
                metrics.delegation_rate,
                metrics.accuracy
            );
        }
        Command::Sweep { inputs } => {
            let p = pipeline(&cfg, inputs)?;
            let report = run_sweep(&p, &cfg.sweep)?;
            write(&out.join("sweep.json"), &report.to_json()?)?;
            write(&out.join("sweep.csv"), &sweep_csv(&report))?;
            let fractions: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
            let curves = ranking_curves(&p, &fractions, None)?;
            write(&out.join("ranking.json"), &serde_json::to_string_pretty(&curves)?)?;
            let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
            println!("{} cells ({} failed), {} evaluation examples", report.cells.len(), failed, report.n_eval);
        }
        Command::Coverage {
            inputs,
            alpha,
            trials,
            variant,
        } => {
            let p = pipeline(&cfg, inputs)?;
            let mut cc = cfg.coverage.clone();
            if let Some(a) = alpha {
                cc.alpha = *a;
            }
            if let Some(t) = trials {
                cc.trials = *t;
            }
            if let Some(v) = variant {
                cc.variant = *v;
            }
            let report = run_coverage(&p, &cc, Some(&cfg.dv_source()))?;
            write(&out.join("coverage.json"), &serde_json::to_string_pretty(&report)?)?;
            println!("violation rate {:.4} over {} trials", report.violation_rate, report.trials);
        }
        Command::GroupAnalysis {
            inputs,
            alpha,
            batch_size,
        } => {
            let p = pipeline(&cfg, inputs)?;
            let mut settings = CalibrationSettings::new(alpha.unwrap_or(cfg.group_alpha), cfg.sweep.delta);
            settings.loss_kind = cfg.sweep.loss_kind;
            let report = analyze_groups(
                &p,
                &Strategy::ALL,
                &settings,
                batch_size.unwrap_or(cfg.group_batch_size),
                cfg.sweep.grid_size,
            )?;
            write(&out.join("groups.json"), &serde_json::to_string_pretty(&report)?)?;
            write(&out.join("groups.csv"), &group_csv(&report))?;
            println!("{} group rows", report.rows.len());
        }
        Command::Report { input, format, output } => {
            let input = input.clone().unwrap_or_else(|| out.join("sweep.json"));
            let text = fs::read_to_string(&input).map_err(|e| CtdError::Io {
                path: input.display().to_string(),
                source: e,
            })?;
            let report = SweepReport::from_json(&text)?;
            let ext = match format {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
            };
            let path = output.clone().unwrap_or_else(|| out.join(format!("report.{ext}")));
            emit_report(&report, *format, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
