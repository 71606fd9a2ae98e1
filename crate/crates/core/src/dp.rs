//! Differential-privacy budgets of the posterior-sampling release.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_train, FactorMatrices, GibbsConfig, HyperPriors};
use crate::rng::{derive_seed, substream, tag};
use crate::tensor::{SparseCountTensor, TensorKind, TensorPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub value: f64,
    /// True when `value` comes from a cell sample and is only a lower bound.
    pub sampled: bool,
}

fn overshoot(rhat: f64, rmax: f64) -> f64 {
    (-rhat).max(rhat - rmax).max(0.0)
}

fn cell(theta: &FactorMatrices, kind: TensorKind, n: usize, i: usize, j: usize) -> f64 {
    match kind {
        TensorKind::Transition => theta.transition_cell(n, i, j),
        TensorKind::Visit => theta.visit_cell(n, i, j),
    }
}

fn kappa_exact_one(theta: &FactorMatrices, t: &SparseCountTensor) -> f64 {
    let rmax = t.effective_rmax();
    (0..t.users)
        .into_par_iter()
        .map(|n| {
            let mut m = 0.0f64;
            for i in 0..t.rows {
                for j in 0..t.cols {
                    m = m.max(overshoot(cell(theta, t.kind, n, i, j), rmax));
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// κ: the largest amount by which any reconstructed cell leaves
/// `[0, r_max]`, over both tensors, by a full scan.
pub fn compute_kappa(theta: &FactorMatrices, r: &TensorPair) -> Kappa {
    Kappa {
        value: kappa_exact_one(theta, &r.transition).max(kappa_exact_one(theta, &r.visit)),
        sampled: false,
    }
}

/// κ estimated from `samples_per_user` random cells per user and tensor.
pub fn compute_kappa_sampled(
    theta: &FactorMatrices,
    r: &TensorPair,
    samples_per_user: usize,
    seed: u64,
) -> Kappa {
    let one = |t: &SparseCountTensor, kt: u64| -> f64 {
        let rmax = t.effective_rmax();
        (0..t.users)
            .into_par_iter()
            .map(|n| {
                let mut rng = substream(seed, &[tag::KAPPA, kt, n as u64]);
                (0..samples_per_user)
                    .map(|_| {
                        let i = rng.random_range(0..t.rows);
                        let j = rng.random_range(0..t.cols);
                        overshoot(cell(theta, t.kind, n, i, j), rmax)
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    };
    Kappa {
        value: one(&r.transition, 1).max(one(&r.visit, 2)),
        sampled: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrimParams {
    pub lambda_i: f64,
    pub rho_i: f64,
    pub rmax_i: f64,
    pub lambda_ii: f64,
    pub rho_ii: f64,
    pub rmax_ii: f64,
}

/// `α (min{3λ^I, λ^I+ρ^I}(r^I_max+κ)² + min{3λ^II, λ^II+ρ^II}(r^II_max+κ)²)`.
pub fn epsilon_trace(alpha: f64, p: &TrimParams, kappa: f64) -> f64 {
    let term = |l: f64, rho: f64, rmax: f64| (3.0 * l).min(l + rho) * (rmax + kappa).powi(2);
    alpha * (term(p.lambda_i, p.rho_i, p.rmax_i) + term(p.lambda_ii, p.rho_ii, p.rmax_ii))
}

/// `α (4 r^I_max + 8 r^II_max + 12 κ − 6)`, clamped at 0.
pub fn epsilon_single_location(alpha: f64, rmax_i: f64, rmax_ii: f64, kappa: f64) -> f64 {
    (alpha * (4.0 * rmax_i + 8.0 * rmax_ii + 12.0 * kappa - 6.0)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpReport {
    pub kappa: f64,
    pub kappa_sampled: bool,
    pub epsilon_trace: f64,
    pub epsilon_single_location: f64,
    pub alpha: f64,
    pub trim: TrimParams,
}

impl DpReport {
    pub fn new(alpha: f64, trim: TrimParams, kappa: Kappa) -> Self {
        Self {
            kappa: kappa.value,
            kappa_sampled: kappa.sampled,
            epsilon_trace: epsilon_trace(alpha, &trim, kappa.value),
            epsilon_single_location: epsilon_single_location(
                alpha,
                trim.rmax_i,
                trim.rmax_ii,
                kappa.value,
            ),
            alpha,
            trim,
        }
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let bound = if self.kappa_sampled { " (lower bound)" } else { "" };
        format!(
            "alpha = {}\nlambda_I = {}\nrho_I = {}\nrmax_I = {}\nlambda_II = {}\nrho_II = {}\nrmax_II = {}\nkappa = {}{bound}\nepsilon_trace = {}{bound}\nepsilon_single_location = {}{bound}\n",
            self.alpha,
            self.trim.lambda_i,
            self.trim.rho_i,
            self.trim.rmax_i,
            self.trim.lambda_ii,
            self.trim.rho_ii,
            self.trim.rmax_ii,
            self.kappa,
            self.epsilon_trace,
            self.epsilon_single_location,
        )
    }
}

/// Trains repeatedly with fresh seeds until κ ≤ `kappa_max`.
///
/// Returns the accepted factors and their κ, or [`Error::KappaBound`] with
/// the best κ seen once `max_attempts` runs have failed.
pub fn train_with_kappa_bound(
    r: &TensorPair,
    priors: &HyperPriors,
    cfg: &GibbsConfig,
    kappa_max: f64,
    max_attempts: usize,
) -> Result<(FactorMatrices, f64)> {
    if kappa_max.is_nan() || kappa_max < 0.0 {
        return Err(Error::Config("kappa bound must be non-negative".into()));
    }
    let mut best = f64::INFINITY;
    for attempt in 0..max_attempts.max(1) {
        let seed = if attempt == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, &[tag::RETRY, attempt as u64])
        };
        let run = GibbsConfig { seed, ..cfg.clone() };
        let theta = gibbs_train(r, priors, &run)?.factors;
        let k = compute_kappa(&theta, r).value;
        if k <= kappa_max {
            return Ok((theta, k));
        }
        log::info!("attempt {attempt}: kappa {k} exceeds bound {kappa_max}");
        best = best.min(k);
    }
    Err(Error::KappaBound {
        bound: kappa_max,
        attempts: max_attempts.max(1),
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{init_factors, FactorizationMode};
    use crate::linalg::Mat;
    use crate::tensor::UserSlice;
    use proptest::prelude::*;

    fn ist() -> TrimParams {
        TrimParams {
            lambda_i: 100.0,
            rho_i: 1000.0,
            rmax_i: 10.0,
            lambda_ii: 100.0,
            rho_ii: 1000.0,
            rmax_ii: 10.0,
        }
    }

    #[test]
    fn single_location_budget() {
        assert!((epsilon_single_location(0.4, 10.0, 10.0, 0.0) - 45.6).abs() < 1e-12);
        assert_eq!(epsilon_single_location(0.0, 10.0, 10.0, 3.0), 0.0);
        let slope = epsilon_single_location(0.4, 10.0, 10.0, 2.0) - epsilon_single_location(0.4, 10.0, 10.0, 1.0);
        assert!((slope - 12.0 * 0.4).abs() < 1e-12);
        assert_eq!(epsilon_single_location(0.1, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn trace_budget() {
        let e = epsilon_trace(0.4, &ist(), 0.0);
        assert!((e - 24000.0).abs() < 1e-9);
        assert!(e > 2e4 - 1e-9);
        assert_eq!(epsilon_trace(0.0, &ist(), 5.0), 0.0);
        let quad = epsilon_trace(1.0, &ist(), 10.0) / epsilon_trace(1.0, &ist(), 0.0);
        assert!((quad - 4.0).abs() < 1e-12);
        let no_zeros = TrimParams {
            rho_i: 0.0,
            rho_ii: 0.0,
            ..ist()
        };
        assert!((epsilon_trace(1.0, &no_zeros, 0.0) - 2.0 * 100.0 * 100.0).abs() < 1e-9);
    }

    fn tensors(users: usize, x: usize, l: usize, rmax: u32) -> TensorPair {
        let t = |kind, cols| SparseCountTensor {
            kind,
            users,
            rows: x,
            cols,
            rmax: Some(rmax),
            slices: vec![UserSlice::default(); users],
        };
        TensorPair {
            transition: t(TensorKind::Transition, x),
            visit: t(TensorKind::Visit, l),
        }
    }

    #[test]
    fn kappa_matches_triple_loop() {
        let mut th = init_factors(3, 4, 5, 2, FactorizationMode::Shared, 1);
        let mut rng = substream(2, &[]);
        for m in [&mut th.a, &mut th.b, &mut th.c, &mut th.d] {
            *m = Mat::from_fn(m.rows(), 2, |_, _| rng.random_range(-3.0..3.0));
        }
        let r = tensors(3, 4, 5, 10);
        let mut brute = 0.0f64;
        for n in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    let v: f64 = (0..2).map(|k| th.a.get(n, k) * th.b.get(i, k) * th.c.get(j, k)).sum();
                    brute = brute.max(-v).max(v - 10.0);
                }
                for j in 0..5 {
                    let v: f64 = (0..2).map(|k| th.a.get(n, k) * th.b.get(i, k) * th.d.get(j, k)).sum();
                    brute = brute.max(-v).max(v - 10.0);
                }
            }
        }
        let k = compute_kappa(&th, &r);
        assert!((k.value - brute.max(0.0)).abs() < 1e-12);
        assert!(!k.sampled);
        assert!(compute_kappa_sampled(&th, &r, 50, 3).value <= k.value);
    }

    #[test]
    fn kappa_zero_inside_bounds() {
        let th = init_factors(2, 3, 2, 2, FactorizationMode::Shared, 4);
        // entries in [0,1] with z = 2 keep every cell in [0, 2]
        let k = compute_kappa(&th, &tensors(2, 3, 2, 10));
        assert_eq!(k.value, 0.0);
        let mut big = th.clone();
        big.a = Mat::from_fn(2, 2, |_, _| 4.0);
        big.b = Mat::from_fn(3, 2, |_, _| 1.0);
        big.c = Mat::from_fn(3, 2, |_, _| 1.5);
        assert!((compute_kappa(&big, &tensors(2, 3, 2, 10)).value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_bound_retries() {
        let data = crate::demo::tiny_dataset(3);
        let trim = crate::tensor::TrimConfig {
            rho_i: 5,
            rho_ii: 3,
            ..Default::default()
        };
        let r = crate::tensor::build_tensors(&data, &trim).unwrap();
        let cfg = GibbsConfig {
            z: 2,
            iterations: 4,
            burn_in: 3,
            alpha: 0.05,
            ..Default::default()
        };
        let priors = HyperPriors::standard(2);
        let (_, k) = train_with_kappa_bound(&r, &priors, &cfg, f64::INFINITY, 1).unwrap();
        assert!(k >= 0.0);
        match train_with_kappa_bound(&r, &priors, &cfg, 0.0, 2) {
            Err(Error::KappaBound { attempts, best, .. }) => {
                assert_eq!(attempts, 2);
                assert!(best > 0.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn budgets_are_monotone(
            alpha in 0.0f64..5.0, dk in 0.0f64..3.0, kappa in 0.0f64..5.0,
            l in 1.0f64..200.0, rho in 0.0f64..2000.0, rmax in 1.0f64..20.0,
            bump in 0usize..6,
        ) {
            let p = TrimParams { lambda_i: l, rho_i: rho, rmax_i: rmax, lambda_ii: l, rho_ii: rho, rmax_ii: rmax };
            let base = epsilon_trace(alpha, &p, kappa);
            let mut q = p;
            match bump {
                0 => q.lambda_i += dk,
                1 => q.rho_i += dk,
                2 => q.rmax_i += dk,
                3 => q.lambda_ii += dk,
                4 => q.rho_ii += dk,
                _ => q.rmax_ii += dk,
            }
            prop_assert!(epsilon_trace(alpha, &q, kappa) >= base - 1e-9);
            prop_assert!(epsilon_trace(alpha + dk, &p, kappa) >= base - 1e-9);
            prop_assert!(epsilon_trace(alpha, &p, kappa + dk) >= base - 1e-9);
            let s = epsilon_single_location(alpha, rmax, rmax, kappa);
            prop_assert!(epsilon_single_location(alpha + dk, rmax, rmax, kappa) >= s);
            prop_assert!(epsilon_single_location(alpha, rmax + dk, rmax, kappa) >= s);
            prop_assert!(epsilon_single_location(alpha, rmax, rmax + dk, kappa) >= s);
            prop_assert!(epsilon_single_location(alpha, rmax, rmax, kappa + dk) >= s);
            prop_assert!(base >= 0.0 && s >= 0.0);
        }
    }
}
