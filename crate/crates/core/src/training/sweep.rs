use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::LevelMetrics;
use super::train::{derive_seed, train, RunReport, TrainConfig};
use crate::dataio::Splits;
use crate::error::{Error, Result};
use crate::losses::SaMode;

pub const SWEEP_CSV_HEADER: &str = "mode,alpha,repeat,level,acc,pre,rec,f1,auc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub modes: Vec<SaMode>,
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: (0..10).map(|k| k as f64 / 10.0).collect(),
            modes: vec![SaMode::S1, SaMode::S2],
            repeats: 5,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("sweep.repeats", "must be at least 1"));
        }
        if self.alphas.is_empty() {
            return Err(Error::config("sweep.alphas", "must not be empty"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config(
                "sweep.alphas",
                format!("{a} is outside [0, 1]"),
            ));
        }
        if self.modes.is_empty() {
            return Err(Error::config("sweep.modes", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub mode: SaMode,
    pub alpha: f64,
    pub repeat: usize,
    pub seed: u64,
    pub report: RunReport,
}

/// Mean and sample standard deviation of a metric across repeats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, sd })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub acc: Summary,
    pub pre: Summary,
    pub rec: Summary,
    pub f1: Summary,
    pub auc: Option<Summary>,
}

fn summarize(levels: &[LevelMetrics]) -> Option<LevelSummary> {
    let pick = |f: fn(&LevelMetrics) -> f64| Summary::of(&levels.iter().map(f).collect::<Vec<_>>());
    let aucs: Option<Vec<f64>> = levels.iter().map(|l| l.auc).collect();
    Some(LevelSummary {
        acc: pick(|l| l.acc)?,
        pre: pick(|l| l.pre)?,
        rec: pick(|l| l.rec)?,
        f1: pick(|l| l.f1)?,
        auc: aucs.and_then(|a| Summary::of(&a)),
    })
}

/// Mean ± sd over the repeats of one `(mode, alpha)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub mode: SaMode,
    pub alpha: f64,
    pub runs: usize,
    pub scan: Option<LevelSummary>,
    pub slice: Option<LevelSummary>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Ordered by mode, then alpha, then repeat.
    pub runs: Vec<SweepRun>,
}

/// Trains `repeats × |alphas| × |modes|` runs. Repeat `r` uses the same seed
/// for every `(mode, alpha)`, so cells are paired by repeat.
///
/// Runs execute on up to `parallel` threads; results do not depend on it.
pub fn sweep_alpha(
    splits: &Splits,
    base: &TrainConfig,
    sweep: &SweepConfig,
    master_seed: u64,
    parallel: usize,
) -> Result<SweepResult> {
    sweep.validate()?;
    base.validate()?;
    let mut jobs = Vec::new();
    for &mode in &sweep.modes {
        for &alpha in &sweep.alphas {
            for repeat in 0..sweep.repeats {
                let mut cfg = base.clone();
                cfg.loss.alpha = alpha;
                cfg.loss.sa_mode = mode;
                cfg.seed = derive_seed(master_seed, repeat as u64);
                jobs.push((mode, alpha, repeat, cfg));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::config("parallel", e.to_string()))?;
    let runs = pool.install(|| {
        jobs.into_par_iter()
            .map(|(mode, alpha, repeat, cfg)| {
                let (_, report) = train(splits, &cfg)?;
                Ok(SweepRun {
                    mode,
                    alpha,
                    repeat,
                    seed: cfg.seed,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult { runs })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn level_row(out: &mut String, prefix: &str, level: &str, m: &LevelMetrics) {
    let _ = writeln!(
        out,
        "{prefix},{level},{},{},{},{},{}",
        m.acc,
        m.pre,
        m.rec,
        m.f1,
        fmt_opt(m.auc)
    );
}

fn summary_rows(out: &mut String, mode: &str, alpha: f64, level: &str, s: &LevelSummary) {
    for (tag, get) in [
        ("mean", (|x: &Summary| x.mean) as fn(&Summary) -> f64),
        ("sd", |x: &Summary| x.sd),
    ] {
        let _ = writeln!(
            out,
            "{mode},{alpha},{tag},{level},{},{},{},{},{}",
            get(&s.acc),
            get(&s.pre),
            get(&s.rec),
            get(&s.f1),
            fmt_opt(s.auc.as_ref().map(get))
        );
    }
}

impl SweepResult {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut rows: Vec<AggregateRow> = Vec::new();
        let mut start = 0;
        while start < self.runs.len() {
            let (mode, alpha) = (self.runs[start].mode, self.runs[start].alpha);
            let end = start
                + self.runs[start..]
                    .iter()
                    .take_while(|r| r.mode == mode && r.alpha == alpha)
                    .count();
            let cell = &self.runs[start..end];
            let tests: Vec<_> = cell.iter().filter_map(|r| r.report.test.as_ref()).collect();
            let scan: Vec<LevelMetrics> = tests.iter().map(|t| t.scan).collect();
            let slice: Option<Vec<LevelMetrics>> = tests.iter().map(|t| t.slice).collect();
            rows.push(AggregateRow {
                mode,
                alpha,
                runs: cell.len(),
                scan: summarize(&scan),
                slice: slice.and_then(|s| summarize(&s)),
            });
            start = end;
        }
        rows
    }

    /// Per-run rows followed by `mean` and `sd` rows per cell, under
    /// [`SWEEP_CSV_HEADER`]. Runs without a test split produce no rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for run in &self.runs {
            let Some(test) = &run.report.test else {
                continue;
            };
            let prefix = format!("{},{},{}", run.mode.name(), run.alpha, run.repeat);
            level_row(&mut out, &prefix, "scan", &test.scan);
            if let Some(slice) = &test.slice {
                level_row(&mut out, &prefix, "slice", slice);
            }
        }
        for row in self.aggregate() {
            let mode = row.mode.name();
            if let Some(s) = &row.scan {
                summary_rows(&mut out, mode, row.alpha, "scan", s);
            }
            if let Some(s) = &row.slice {
                summary_rows(&mut out, mode, row.alpha, "slice", s);
            }
        }
        out
    }
}
