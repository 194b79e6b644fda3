use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sadmil::dataio::{generate, load_bags, save_bags, split};
use sadmil::training::{evaluate, sweep_alpha, train, Evaluation, LevelMetrics};
use sadmil::{Bag, Checkpoint, Error};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "sadmil",
    version,
    about = "Attention MIL with smoothness-regularized attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bag file.
    GenData(Common),
    /// Train a model and write checkpoint, report and metrics.
    Train(Common),
    /// Score a checkpoint on a bag file at scan and slice level.
    Eval(Common),
    /// Train every (mode, alpha, repeat) cell and write a CSV table.
    Sweep(Common),
    /// Write one attention trace CSV per bag.
    ExportAttention(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `train.loss.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bag file (JSON Lines).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Concurrent runs for `sweep`.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Overrides both `data.seed` and `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

/// Exit-code classes: 1 configuration, 2 data, 3 numeric failure.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::NoAttention(_) => 1,
            Error::NonFinite(_) | Error::Domain { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Sweep(a) => run_sweep(&a),
        Command::ExportAttention(a) => export_attention(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve(args: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("data.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    Ok(RunConfig::resolve(args.config.as_deref(), &overrides)?)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| config_failure(format!("{flag} is required")))
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::from(Error::from(e)))
}

fn gen_data(args: &Common) -> Outcome {
    let cfg = resolve(args)?;
    let out = required(&args.out, "--out")?;
    cfg.write_echo(out)?;
    let bags = generate(&cfg.data)?;
    save_bags(&bags, out.join("bags.jsonl"))?;
    let positives = bags.iter().filter(|b| b.bag_label == 1).count();
    let sizes = bags.iter().map(Bag::len);
    println!(
        "{} bags, positive fraction {:.3}, sizes {}-{}",
        bags.len(),
        positives as f64 / bags.len() as f64,
        sizes.clone().min().unwrap_or(0),
        sizes.max().unwrap_or(0)
    );
    Ok(())
}

fn load(args: &Common) -> Result<Vec<Bag>, Failure> {
    let path = required(&args.data, "--data")?;
    let bags = load_bags(path)?;
    if bags.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!("{} contains no bags", path.display()),
        });
    }
    Ok(bags)
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(String::new, |a| a.to_string())
}

fn metrics_csv(eval: &Evaluation) -> String {
    let mut out = String::from("level,acc,pre,rec,f1,auc\n");
    let mut row = |level: &str, m: &LevelMetrics| {
        out.push_str(&format!(
            "{level},{},{},{},{},{}\n",
            m.acc,
            m.pre,
            m.rec,
            m.f1,
            fmt_auc(m.auc)
        ));
    };
    row("scan", &eval.scan);
    if let Some(s) = &eval.slice {
        row("slice", s);
    }
    out
}

fn warn_incomplete(eval: &Evaluation, bags: &[Bag]) {
    if eval.slice.is_none()
        && !eval.traces.is_empty()
        && bags.iter().any(|b| b.instance_labels.is_none())
    {
        eprintln!("warning: some bags have no instance labels; slice-level metrics omitted");
    }
    if eval.scan.auc.is_none() {
        eprintln!("warning: scan-level AUC undefined (only one class present)");
    }
    if eval.slice.is_some_and(|s| s.auc.is_none()) {
        eprintln!("warning: slice-level AUC undefined (only one class present)");
    }
}

fn run_train(args: &Common) -> Outcome {
    if args.checkpoint.is_some() {
        return Err(config_failure(
            "resuming from a checkpoint is not supported; train starts from a fresh initialization",
        ));
    }
    let cfg = resolve(args)?;
    let out = required(&args.out, "--out")?;
    cfg.write_echo(out)?;
    let bags = load(args)?;
    let splits = split(&bags, cfg.split, cfg.train.seed)?;
    let (params, report) = train(&splits, &cfg.train)?;

    let echo = serde_json::to_value(&cfg).map_err(|e| Failure::from(Error::from(e)))?;
    Checkpoint::new(&cfg.train.model, cfg.train.seed, echo, &params)
        .save(out.join("checkpoint.json"))?;
    let report_json =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::from(Error::from(e)))?;
    write(&out.join("report.json"), &(report_json + "\n"))?;
    write(
        &out.join("timing.json"),
        &format!("{{\"duration_secs\": {}}}\n", report.duration_secs),
    )?;
    if !splits.test.is_empty() {
        save_bags(&splits.test, out.join("test_bags.jsonl"))?;
    }
    match &report.test {
        Some(eval) => {
            warn_incomplete(eval, &splits.test);
            write(&out.join("metrics.csv"), &metrics_csv(eval))?;
        }
        None => eprintln!("warning: empty test split; no metrics written"),
    }
    println!(
        "{}: best epoch {}, stopped at {}",
        report.method, report.best_epoch, report.stopping_epoch
    );
    Ok(())
}

fn load_checkpoint(args: &Common) -> Result<(Checkpoint, sadmil::ModelParams), Failure> {
    let path = required(&args.checkpoint, "--checkpoint")?;
    let ck = Checkpoint::load(path)?;
    let params = ck.params()?;
    Ok((ck, params))
}

fn check_dims(ck: &Checkpoint, bags: &[Bag]) -> Outcome {
    if let Some(bag) = bags.iter().find(|b| b.feature_dim() != ck.model.input_dim) {
        return Err(Failure {
            code: 2,
            message: format!(
                "bag `{}` has {} features but the checkpoint expects {}",
                bag.id,
                bag.feature_dim(),
                ck.model.input_dim
            ),
        });
    }
    Ok(())
}

fn run_eval(args: &Common) -> Outcome {
    let cfg = resolve(args)?;
    let (ck, params) = load_checkpoint(args)?;
    let bags = load(args)?;
    check_dims(&ck, &bags)?;
    let eval = evaluate(&bags, &params, &ck.model, cfg.train.threshold)?;
    warn_incomplete(&eval, &bags);
    let csv = metrics_csv(&eval);
    match &args.out {
        Some(dir) => {
            cfg.write_echo(dir)?;
            write(&dir.join("metrics.csv"), &csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_sweep(args: &Common) -> Outcome {
    let cfg = resolve(args)?;
    let out = required(&args.out, "--out")?;
    cfg.write_echo(out)?;
    let bags = load(args)?;
    let splits = split(&bags, cfg.split, cfg.train.seed)?;
    let result = sweep_alpha(
        &splits,
        &cfg.train,
        &cfg.sweep,
        cfg.train.seed,
        args.parallel,
    )?;
    write(&out.join("sweep.csv"), &result.to_csv())?;
    println!(
        "{} runs written to {}",
        result.runs.len(),
        out.join("sweep.csv").display()
    );
    Ok(())
}

/// Keeps bag ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn export_attention(args: &Common) -> Outcome {
    let cfg = resolve(args)?;
    let (ck, params) = load_checkpoint(args)?;
    if ck.model.pooling != sadmil::Pooling::Attention {
        return Err(config_failure(format!(
            "checkpoint uses {} pooling; there is no attention to export",
            ck.model.pooling.name()
        )));
    }
    let out = required(&args.out, "--out")?;
    let bags = load(args)?;
    check_dims(&ck, &bags)?;
    cfg.write_echo(out)?;
    let eval = evaluate(&bags, &params, &ck.model, cfg.train.threshold)?;
    for trace in &eval.traces {
        let n = trace.s.len();
        let threshold = 1.0 / n as f64;
        let mut csv = String::from("index,f,s,threshold");
        if trace.instance_truth.is_some() {
            csv.push_str(",instance_truth");
        }
        csv.push('\n');
        for i in 0..n {
            csv.push_str(&format!("{i},{},{},{threshold}", trace.f[i], trace.s[i]));
            if let Some(truth) = &trace.instance_truth {
                csv.push_str(&format!(",{}", truth[i]));
            }
            csv.push('\n');
        }
        write(&out.join(format!("{}.csv", file_stem(&trace.bag_id))), &csv)?;
    }
    println!("{} traces written to {}", eval.traces.len(), out.display());
    Ok(())
}
