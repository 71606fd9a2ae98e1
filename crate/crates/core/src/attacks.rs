//! Re-identification and membership inference by a maximum-knowledge
//! attacker who holds every original trace.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::trace::{Trace, TraceDataset};

pub const ATTACK_FLOOR: f64 = 1e-8;

/// Per-user time-pooled transition matrices (floored, renormalized), kept in
/// log form, plus their sum for leave-one-out population matrices.
#[derive(Debug, Clone)]
pub struct AttackModel {
    w: Vec<Mat>,
    log_w: Vec<Mat>,
    sum: Mat,
}

fn user_matrix(tr: &Trace, x: usize) -> Mat {
    let mut counts = Mat::zeros(x, x);
    for (a, b, _) in tr.transitions() {
        counts.set(a, b, counts.get(a, b) + 1.0);
    }
    let rows = counts
        .iter_rows()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s == 0.0 {
                return vec![1.0 / x as f64; x];
            }
            let floored: Vec<f64> = r.iter().map(|v| (v / s).max(ATTACK_FLOOR)).collect();
            let t: f64 = floored.iter().sum();
            floored.into_iter().map(|v| v / t).collect()
        })
        .collect();
    Mat::from_rows(rows, x).expect("square")
}

fn ln_mat(m: &Mat) -> Mat {
    Mat::from_vec(m.rows(), m.cols(), m.data().iter().map(|v| v.ln()).collect()).expect("same shape")
}

impl AttackModel {
    pub fn train(data: &TraceDataset) -> Result<Self> {
        if data.user_count() == 0 {
            return Err(Error::Empty("attack model needs at least one user".into()));
        }
        let x = data.location_count();
        let w: Vec<Mat> = data.traces().par_iter().map(|tr| user_matrix(tr, x)).collect();
        let log_w = w.par_iter().map(ln_mat).collect();
        let mut sum = vec![0.0; x * x];
        for m in &w {
            for (acc, v) in sum.iter_mut().zip(m.data()) {
                *acc += v;
            }
        }
        Ok(Self {
            w,
            log_w,
            sum: Mat::from_vec(x, x, sum).expect("square"),
        })
    }

    pub fn user_count(&self) -> usize {
        self.w.len()
    }

    pub fn user_matrix(&self, n: usize) -> &Mat {
        &self.w[n]
    }

    /// `W_0` averaged over every user except `n`.
    pub fn population_without(&self, n: usize) -> Result<Mat> {
        let v = self.w.len();
        if v < 2 {
            return Err(Error::Config("population matrix needs at least two users".into()));
        }
        let data = self
            .sum
            .data()
            .iter()
            .zip(self.w[n].data())
            .map(|(s, w)| ((s - w) / (v - 1) as f64).max(0.0))
            .collect::<Vec<f64>>();
        let x = self.sum.rows();
        let rows = data
            .chunks(x)
            .map(|r| {
                let t: f64 = r.iter().sum();
                r.iter().map(|v| v / t).collect()
            })
            .collect();
        Mat::from_rows(rows, x)
    }

    /// `ln Π W_n(b|a)` over the trace's transitions.
    pub fn log_likelihood(&self, n: usize, y: &Trace) -> f64 {
        log_likelihood_under(&self.log_w[n], y)
    }
}

fn log_likelihood_under(log_w: &Mat, y: &Trace) -> f64 {
    y.transitions().map(|(a, b, _)| log_w.get(a, b)).sum()
}

fn has_transition(y: &Trace) -> bool {
    y.transitions().next().is_some()
}

/// The user with the highest likelihood; ties go to the lowest index.
pub fn reidentify(y: &Trace, model: &AttackModel) -> Result<usize> {
    if !has_transition(y) {
        return Err(Error::Contract("likelihood undefined for a trace without transitions".into()));
    }
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for n in 0..model.user_count() {
        let ll = model.log_likelihood(n, y);
        if ll > best_ll {
            best_ll = ll;
            best = n;
        }
    }
    Ok(best)
}

pub fn reid_rate(assignments: &[(usize, usize)]) -> Result<f64> {
    if assignments.is_empty() {
        return Err(Error::Empty("no re-identification outcomes".into()));
    }
    let ok = assignments.iter().filter(|(p, t)| p == t).count();
    Ok(ok as f64 / assignments.len() as f64)
}

/// Re-identifies each trace; `truth[k]` is the training user behind
/// `traces[k]`. Traces without transitions are skipped.
pub fn reidentify_all(
    traces: &[Trace],
    truth: &[usize],
    model: &AttackModel,
) -> Result<Vec<(usize, usize)>> {
    let out: Vec<Option<(usize, usize)>> = traces
        .par_iter()
        .zip(truth)
        .map(|(y, &t)| {
            if has_transition(y) {
                reidentify(y, model).map(|p| Some((p, t)))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let skipped = out.iter().filter(|o| o.is_none()).count();
    if skipped > 0 {
        log::warn!("re-identification skipped {skipped} traces without transitions");
    }
    Ok(out.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MembershipConfig {
    /// Thresholds ψ; `None` spans the observed statistics with 201 values.
    pub thresholds: Option<Vec<f64>>,
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipResult {
    pub best_advantage: f64,
    pub best_threshold: f64,
    /// `(ψ, advantage)` per threshold.
    pub curve: Vec<(f64, f64)>,
    /// `max_y ln(z1/z0)` per candidate, members first then nonmembers.
    pub statistics: Vec<f64>,
}

/// `tp/(tp+fn) − fp/(fp+tn)`.
pub fn advantage(tp: usize, fn_: usize, fp: usize, tn: usize) -> f64 {
    let tpr = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let fpr = if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 };
    tpr - fpr
}

/// Evenly spaced thresholds over `[min, max]` of the statistics.
pub fn default_thresholds(stats: &[f64], count: usize) -> Vec<f64> {
    let finite: Vec<f64> = stats.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![0.0];
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if count < 2 || hi == lo {
        return vec![lo];
    }
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

/// Declares candidate `v_n` a member at ψ iff some synthetic trace has
/// `ln(z1/z0) ≥ ψ`, with `z1` under `W_n` and `z0` under `W_0` without `v_n`.
pub fn membership_advantage(
    synthetic: &[Trace],
    model: &AttackModel,
    cfg: &MembershipConfig,
) -> Result<MembershipResult> {
    let usable: Vec<&Trace> = synthetic.iter().filter(|y| has_transition(y)).collect();
    if usable.len() < synthetic.len() {
        log::warn!(
            "membership inference skipped {} traces without transitions",
            synthetic.len() - usable.len()
        );
    }
    if usable.is_empty() {
        return Err(Error::Empty("no synthetic traces with transitions".into()));
    }
    let overlap = cfg.members.iter().any(|m| cfg.nonmembers.contains(m));
    if overlap {
        return Err(Error::Config("members and nonmembers overlap".into()));
    }
    let candidates: Vec<usize> = cfg.members.iter().chain(&cfg.nonmembers).copied().collect();
    let statistics: Vec<f64> = candidates
        .par_iter()
        .map(|&n| {
            let w0 = ln_mat(&model.population_without(n)?);
            Ok(usable
                .iter()
                .map(|y| model.log_likelihood(n, y) - log_likelihood_under(&w0, y))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_>>()?;
    let thresholds = match &cfg.thresholds {
        Some(t) if !t.is_empty() => t.clone(),
        _ => default_thresholds(&statistics, 201),
    };
    let m = cfg.members.len();
    let mut curve = Vec::with_capacity(thresholds.len());
    let mut best = (f64::NEG_INFINITY, thresholds[0]);
    for &psi in &thresholds {
        let tp = statistics[..m].iter().filter(|&&s| s >= psi).count();
        let fp = statistics[m..].iter().filter(|&&s| s >= psi).count();
        let adv = advantage(tp, m - tp, fp, statistics.len() - m - fp);
        curve.push((psi, adv));
        if adv > best.0 {
            best = (adv, psi);
        }
    }
    Ok(MembershipResult {
        best_advantage: best.0,
        best_threshold: best.1,
        curve,
        statistics,
    })
}
