//! Bag cross-entropy, smooth-attention penalties and their convex mix
//! `(1 − α)·CE + α·SA`.

use serde::{Deserialize, Serialize};

use crate::baggraph::{energy_competition, energy_s1, energy_s2, BagGraph};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 − EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaMode {
    /// First order, `fᵀLf`.
    #[default]
    S1,
    /// Second order, `fᵀLLf`.
    S2,
    /// Sign-flipped first order, `fᵀ(D + A)f`.
    #[serde(rename = "competition")]
    Competition,
    #[serde(rename = "none")]
    None,
}

impl SaMode {
    pub fn name(self) -> &'static str {
        match self {
            SaMode::S1 => "S1",
            SaMode::S2 => "S2",
            SaMode::Competition => "competition",
            SaMode::None => "none",
        }
    }
}

impl std::str::FromStr for SaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(SaMode::S1),
            "s2" => Ok(SaMode::S2),
            "competition" => Ok(SaMode::Competition),
            "none" => Ok(SaMode::None),
            _ => Err(Error::config("sa_mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub sa_mode: SaMode,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            sa_mode: SaMode::S1,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }

    /// True when the smoothness term contributes, i.e. `alpha > 0` and a mode
    /// is selected. Otherwise the loss is plain cross-entropy and the SA
    /// branch is never recorded.
    pub fn uses_sa(&self) -> bool {
        self.alpha > 0.0 && self.sa_mode != SaMode::None
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

/// `−Σ_b [T_b log p_b + (1 − T_b) log(1 − p_b)]` over scalar probabilities.
pub fn cross_entropy(tape: &mut Tape, probs: &[Var], labels: &[u8]) -> Result<Var> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shape(
            "cross_entropy",
            &[probs.len()],
            &[labels.len()],
        ));
    }
    let mut terms = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(labels) {
        let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
        let nll = if t == 1 {
            let lp = tape.log(p)?;
            tape.scale(lp, -1.0)?
        } else {
            let q = tape.affine(p, -1.0, 1.0)?;
            let lq = tape.log(q)?;
            tape.scale(lq, -1.0)?
        };
        terms.push(nll);
    }
    tape.add_n(&terms)
}

/// `Σ_b energy(f_b, g_b)` for the selected mode.
pub fn sa_loss(tape: &mut Tape, fs: &[Var], graphs: &[&BagGraph], mode: SaMode) -> Result<Var> {
    if fs.len() != graphs.len() || fs.is_empty() {
        return Err(Error::shape("sa_loss", &[fs.len()], &[graphs.len()]));
    }
    let energy = match mode {
        SaMode::S1 => energy_s1,
        SaMode::S2 => energy_s2,
        SaMode::Competition => energy_competition,
        SaMode::None => return Err(Error::config("sa_mode", "no smoothness energy selected")),
    };
    let terms = fs
        .iter()
        .zip(graphs)
        .map(|(&f, g)| energy(tape, f, g))
        .collect::<Result<Vec<_>>>()?;
    tape.add_n(&terms)
}

/// `(1 − α)·ce + α·sa`. With `sa == None` returns `ce` unchanged.
pub fn total_loss(tape: &mut Tape, ce: Var, sa: Option<Var>, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let Some(sa) = sa else { return Ok(ce) };
    let a = tape.scale(ce, 1.0 - alpha)?;
    let b = tape.scale(sa, alpha)?;
    tape.add(a, b)
}

/// Batch objective from per-bag probabilities and attention values.
///
/// `fs` and `graphs` are only read when `cfg.uses_sa()`.
pub fn batch_loss(
    tape: &mut Tape,
    probs: &[Var],
    labels: &[u8],
    fs: &[Var],
    graphs: &[&BagGraph],
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let ce = cross_entropy(tape, probs, labels)?;
    let sa = if cfg.uses_sa() {
        Some(sa_loss(tape, fs, graphs, cfg.sa_mode)?)
    } else {
        None
    };
    let total = total_loss(tape, ce, sa, cfg.alpha)?;
    match cfg.reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => tape.scale(total, 1.0 / probs.len() as f64),
    }
}
