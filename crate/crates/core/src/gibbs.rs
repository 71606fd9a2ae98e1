//! Gibbs sampling for the hierarchical Bayesian multiple tensor factorization.
//!
//! The model reconstructs
//!
//! ```text
//! r̂^I_{n,i,j}  = Σ_k a_{n,k} b_{i,k} c_{j,k}
//! r̂^II_{n,i,j} = Σ_k a_{n,k} b_{i,k} d_{j,k}
//! ```
//!
//! with Gaussian observation noise of precision `α` on observed cells only,
//! Gaussian rows for every factor matrix and a Normal–Wishart hyperprior on
//! each matrix's mean and precision. Each sweep samples the four
//! hyperparameter pairs and then the rows of A, B, C and D in turn.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_jitter, sample_mvn_precision, sample_wishart, spd_inverse, symmetrize, triple_dot,
    Mat,
};
use crate::rng::{substream, tag, Rng};
use crate::tensor::{SparseCountTensor, TensorPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FactorizationMode {
    /// A and B are shared by both tensors.
    #[default]
    Shared,
    /// Each tensor gets its own user and location factors.
    Independent,
}

/// Θ = (A, B, C, D).
///
/// In independent mode `a`, `b`, `c` factor the transition tensor and
/// `visit_user_location` holds the separate user and location factors used
/// with `d` for the visit tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrices {
    pub z: usize,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub visit_user_location: Option<(Mat, Mat)>,
}

impl FactorMatrices {
    pub fn users(&self) -> usize {
        self.a.rows()
    }

    pub fn locations(&self) -> usize {
        self.b.rows()
    }

    pub fn slots(&self) -> usize {
        self.d.rows()
    }

    pub fn mode(&self) -> FactorizationMode {
        if self.visit_user_location.is_some() {
            FactorizationMode::Independent
        } else {
            FactorizationMode::Shared
        }
    }

    /// `(A, B, C)` used for the transition tensor.
    pub fn transition_factors(&self) -> (&Mat, &Mat, &Mat) {
        (&self.a, &self.b, &self.c)
    }

    /// `(A, B, D)` used for the visit tensor.
    pub fn visit_factors(&self) -> (&Mat, &Mat, &Mat) {
        match &self.visit_user_location {
            Some((a, b)) => (a, b, &self.d),
            None => (&self.a, &self.b, &self.d),
        }
    }

    #[inline]
    pub fn transition_cell(&self, n: usize, i: usize, j: usize) -> f64 {
        triple_dot(self.a.row(n), self.b.row(i), self.c.row(j))
    }

    #[inline]
    pub fn visit_cell(&self, n: usize, i: usize, j: usize) -> f64 {
        let (a, b, d) = self.visit_factors();
        triple_dot(a.row(n), b.row(i), d.row(j))
    }

    pub fn is_finite(&self) -> bool {
        let extra = self
            .visit_user_location
            .as_ref()
            .is_none_or(|(a, b)| a.is_finite() && b.is_finite());
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite() && extra
    }
}

/// Full reconstruction of one user: `(R̂^I_n, R̂^II_n)` as `|X|×|X|` and `|X|×|L|`.
pub fn reconstruct_user(theta: &FactorMatrices, n: usize) -> (Mat, Mat) {
    let x = theta.locations();
    let l = theta.slots();
    let ri = Mat::from_fn(x, x, |i, j| theta.transition_cell(n, i, j));
    let rii = Mat::from_fn(x, l, |i, j| theta.visit_cell(n, i, j));
    (ri, rii)
}

/// Mean vector and precision matrix of one factor matrix's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub mu: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

impl HyperParams {
    pub fn standard(z: usize) -> Self {
        Self {
            mu: DVector::zeros(z),
            lambda: DMatrix::identity(z, z),
        }
    }
}

/// Normal–Wishart hyperprior `(μ0, β0, W0, ν0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub mu0: Vec<f64>,
    pub beta0: f64,
    /// Row-major `z × z`.
    pub w0: Vec<f64>,
    pub nu0: f64,
}

impl HyperPriors {
    /// `μ0 = 0`, `β0 = 2`, `ν0 = z`, `W0 = I`.
    pub fn standard(z: usize) -> Self {
        Self {
            mu0: vec![0.0; z],
            beta0: 2.0,
            w0: DMatrix::<f64>::identity(z, z).transpose().as_slice().to_vec(),
            nu0: z as f64,
        }
    }

    pub fn z(&self) -> usize {
        self.mu0.len()
    }

    pub fn w0_matrix(&self) -> DMatrix<f64> {
        let z = self.z();
        DMatrix::from_row_slice(z, z, &self.w0)
    }

    pub fn validate(&self) -> Result<()> {
        let z = self.z();
        if z == 0 {
            return Err(Error::Config("priors need z >= 1".into()));
        }
        if self.w0.len() != z * z {
            return Err(Error::Config(format!("W0 must have {} entries", z * z)));
        }
        if self.beta0 <= 0.0 || !self.beta0.is_finite() {
            return Err(Error::Config("beta0 must be positive".into()));
        }
        if self.nu0 < z as f64 {
            return Err(Error::Config(format!("nu0 = {} must be at least z = {z}", self.nu0)));
        }
        cholesky_jitter(self.w0_matrix(), "W0")?;
        Ok(())
    }
}

/// Posterior parameters `(μ0*, β0*, W0*, ν0*)` given the rows of a factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalWishartPosterior {
    pub mu: DVector<f64>,
    pub beta: f64,
    pub w: DMatrix<f64>,
    pub nu: f64,
}

impl NormalWishartPosterior {
    pub fn new(rows: &Mat, priors: &HyperPriors) -> Result<Self> {
        let z = priors.z();
        let n = rows.rows();
        let mu0 = DVector::from_column_slice(&priors.mu0);
        let w0 = priors.w0_matrix();
        if n == 0 {
            return Ok(Self {
                mu: mu0,
                beta: priors.beta0,
                w: w0,
                nu: priors.nu0,
            });
        }
        let nf = n as f64;
        let mut mean = DVector::<f64>::zeros(z);
        for r in rows.iter_rows() {
            mean += DVector::from_column_slice(r);
        }
        mean /= nf;
        let mut scatter = DMatrix::<f64>::zeros(z, z);
        for r in rows.iter_rows() {
            let d = DVector::from_column_slice(r) - &mean;
            scatter += &d * d.transpose();
        }
        let beta = priors.beta0 + nf;
        let nu = priors.nu0 + nf;
        let mu = (&mu0 * priors.beta0 + &mean * nf) / beta;
        let dm = &mu0 - &mean;
        let mut w_inv = spd_inverse(w0, "W0")? + scatter + (&dm * dm.transpose()) * (priors.beta0 * nf / beta);
        symmetrize(&mut w_inv);
        let mut w = spd_inverse(w_inv, "posterior W0*^-1")?;
        symmetrize(&mut w);
        Ok(Self { mu, beta, w, nu })
    }
}

/// Draws `Λ ~ Wishart(W0*, ν0*)` then `μ ~ N(μ0*, (β0* Λ)^{-1})`.
pub fn sample_hyperparams(rows: &Mat, priors: &HyperPriors, rng: &mut Rng) -> Result<HyperParams> {
    let post = NormalWishartPosterior::new(rows, priors)?;
    let lambda = sample_wishart(&post.w, post.nu, rng)?;
    let precision = &lambda * post.beta;
    let h = &precision * &post.mu;
    let mu = sample_mvn_precision(precision, &h, rng, "beta0* Lambda")?;
    Ok(HyperParams { mu, lambda })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub alpha: f64,
    pub z: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: FactorizationMode,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            z: 16,
            iterations: 100,
            burn_in: 99,
            seed: 0,
            mode: FactorizationMode::Shared,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.z == 0 {
            return Err(Error::Config("z must be positive".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Identifies one factor matrix in sampling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    A,
    B,
    C,
    D,
    /// Independent-mode user factor of the visit tensor.
    VisitA,
    /// Independent-mode location factor of the visit tensor.
    VisitB,
}

impl Factor {
    fn tag(self) -> u64 {
        self as u64
    }

    fn sweep_order(mode: FactorizationMode) -> &'static [Factor] {
        match mode {
            FactorizationMode::Shared => &[Factor::A, Factor::B, Factor::C, Factor::D],
            FactorizationMode::Independent => &[
                Factor::A,
                Factor::B,
                Factor::C,
                Factor::VisitA,
                Factor::VisitB,
                Factor::D,
            ],
        }
    }
}

type Cell = (u32, u32, f64);

/// Observed cells of one tensor grouped by each mode.
#[derive(Debug, Clone)]
struct ModeLists {
    by_user: Vec<Vec<Cell>>,
    by_row: Vec<Vec<Cell>>,
    by_col: Vec<Vec<Cell>>,
}

impl ModeLists {
    fn new(t: &SparseCountTensor) -> Self {
        let mut by_user = vec![Vec::new(); t.users];
        let mut by_row = vec![Vec::new(); t.rows];
        let mut by_col = vec![Vec::new(); t.cols];
        for (n, s) in t.slices.iter().enumerate() {
            for (i, j, r) in s.observed() {
                by_user[n].push((i as u32, j as u32, r));
                by_row[i].push((n as u32, j as u32, r));
                by_col[j].push((n as u32, i as u32, r));
            }
        }
        Self {
            by_user,
            by_row,
            by_col,
        }
    }
}

/// Observation index over both tensors, built once per training run.
#[derive(Debug, Clone)]
pub struct Observations {
    transition: ModeLists,
    visit: ModeLists,
    users: usize,
    locations: usize,
    slots: usize,
}

impl Observations {
    pub fn new(r: &TensorPair) -> Result<Self> {
        let (u1, x1, x2) = r.transition.dims();
        let (u2, x3, l) = r.visit.dims();
        if u1 != u2 || x1 != x2 || x1 != x3 {
            return Err(Error::Contract(format!(
                "tensor dims disagree: ({u1},{x1},{x2}) vs ({u2},{x3},{l})"
            )));
        }
        Ok(Self {
            transition: ModeLists::new(&r.transition),
            visit: ModeLists::new(&r.visit),
            users: u1,
            locations: x1,
            slots: l,
        })
    }

    /// Σ |r − r̂| over observed cells of `(R^I, R^II)`.
    pub fn observed_l1(&self, theta: &FactorMatrices) -> (f64, f64) {
        let l1 = |lists: &ModeLists, visit: bool| -> f64 {
            lists
                .by_user
                .par_iter()
                .enumerate()
                .map(|(n, cells)| {
                    cells
                        .iter()
                        .map(|&(i, j, r)| {
                            let rh = if visit {
                                theta.visit_cell(n, i as usize, j as usize)
                            } else {
                                theta.transition_cell(n, i as usize, j as usize)
                            };
                            (r - rh).abs()
                        })
                        .sum::<f64>()
                })
                .sum()
        };
        (l1(&self.transition, false), l1(&self.visit, true))
    }
}

/// Each factor entry i.i.d. uniform on `[0, 1]`.
pub fn init_factors(
    users: usize,
    locations: usize,
    slots: usize,
    z: usize,
    mode: FactorizationMode,
    seed: u64,
) -> FactorMatrices {
    let uniform = |rows: usize, f: Factor| {
        let mut rng = substream(seed, &[tag::INIT, f.tag()]);
        Mat::from_fn(rows, z, |_, _| rng.random::<f64>())
    };
    FactorMatrices {
        z,
        a: uniform(users, Factor::A),
        b: uniform(locations, Factor::B),
        c: uniform(locations, Factor::C),
        d: uniform(slots, Factor::D),
        visit_user_location: match mode {
            FactorizationMode::Shared => None,
            FactorizationMode::Independent => {
                Some((uniform(users, Factor::VisitA), uniform(locations, Factor::VisitB)))
            }
        },
    }
}

fn factor_mat(theta: &FactorMatrices, f: Factor) -> &Mat {
    match f {
        Factor::A => &theta.a,
        Factor::B => &theta.b,
        Factor::C => &theta.c,
        Factor::D => &theta.d,
        Factor::VisitA => &theta.visit_user_location.as_ref().expect("independent mode").0,
        Factor::VisitB => &theta.visit_user_location.as_ref().expect("independent mode").1,
    }
}

fn factor_mat_mut(theta: &mut FactorMatrices, f: Factor) -> &mut Mat {
    match f {
        Factor::A => &mut theta.a,
        Factor::B => &mut theta.b,
        Factor::C => &mut theta.c,
        Factor::D => &mut theta.d,
        Factor::VisitA => &mut theta.visit_user_location.as_mut().expect("independent mode").0,
        Factor::VisitB => &mut theta.visit_user_location.as_mut().expect("independent mode").1,
    }
}

/// One group of likelihood terms for a row: cells `(p, q, r)` whose feature
/// vector is `U_p ∘ V_q`.
struct Terms<'a> {
    cells: &'a [Cell],
    u: &'a Mat,
    v: &'a Mat,
}

fn row_terms<'a>(
    f: Factor,
    row: usize,
    obs: &'a Observations,
    theta: &'a FactorMatrices,
) -> Vec<Terms<'a>> {
    let shared = theta.visit_user_location.is_none();
    let (ta, tb, tc) = theta.transition_factors();
    let (va, vb, vd) = theta.visit_factors();
    let tr = &obs.transition;
    let vi = &obs.visit;
    let t = |cells: &'a [Cell], u: &'a Mat, v: &'a Mat| Terms { cells, u, v };
    match (f, shared) {
        (Factor::A, true) => vec![t(&tr.by_user[row], tb, tc), t(&vi.by_user[row], vb, vd)],
        (Factor::B, true) => vec![t(&tr.by_row[row], ta, tc), t(&vi.by_row[row], va, vd)],
        (Factor::A, false) => vec![t(&tr.by_user[row], tb, tc)],
        (Factor::B, false) => vec![t(&tr.by_row[row], ta, tc)],
        (Factor::C, _) => vec![t(&tr.by_col[row], ta, tb)],
        (Factor::D, _) => vec![t(&vi.by_col[row], va, vb)],
        (Factor::VisitA, _) => vec![t(&vi.by_user[row], vb, vd)],
        (Factor::VisitB, _) => vec![t(&vi.by_row[row], va, vd)],
    }
}

/// Posterior precision `Λ*` and `h = Λ* μ*` of one row.
fn row_posterior(hp: &HyperParams, alpha: f64, terms: &[Terms<'_>]) -> (DMatrix<f64>, DVector<f64>) {
    let z = hp.mu.len();
    let mut p = vec![0.0; z * z];
    let mut h = vec![0.0; z];
    let mut f = vec![0.0; z];
    for g in terms {
        for &(pi, qi, r) in g.cells {
            let u = g.u.row(pi as usize);
            let v = g.v.row(qi as usize);
            for k in 0..z {
                f[k] = u[k] * v[k];
            }
            for k in 0..z {
                h[k] += r * f[k];
                let fk = f[k];
                let pr = &mut p[k * z..k * z + k + 1];
                for (l, slot) in pr.iter_mut().enumerate() {
                    *slot += fk * f[l];
                }
            }
        }
    }
    let mut precision = hp.lambda.clone();
    for k in 0..z {
        for l in 0..=k {
            let v = alpha * p[k * z + l];
            precision[(k, l)] += v;
            if l != k {
                precision[(l, k)] += v;
            }
        }
    }
    let hv = &hp.lambda * &hp.mu + DVector::from_vec(h) * alpha;
    (precision, hv)
}

/// Samples every row of factor `target` from its full conditional.
///
/// Rows are independent given the other factors; each row draws from its own
/// substream keyed by `(seed, sweep, factor, row)`.
pub fn sample_factor_rows(
    target: Factor,
    obs: &Observations,
    theta: &FactorMatrices,
    hp: &HyperParams,
    cfg: &GibbsConfig,
    sweep: usize,
) -> Result<Mat> {
    let rows = factor_mat(theta, target).rows();
    let z = theta.z;
    let sampled: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|row| {
            let terms = row_terms(target, row, obs, theta);
            let (precision, h) = row_posterior(hp, cfg.alpha, &terms);
            let mut rng = substream(
                cfg.seed,
                &[tag::ROWS, sweep as u64, target.tag(), row as u64],
            );
            let x = sample_mvn_precision(precision, &h, &mut rng, "row posterior precision")?;
            Ok(x.as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    Mat::from_rows(sampled, z)
}

/// Observed-cell L1 after each sweep; sweep 0 is the initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub sweep: usize,
    pub observed_l1_i: f64,
    pub observed_l1_ii: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub factors: FactorMatrices,
    pub convergence: Vec<SweepStats>,
}

/// Runs `cfg.iterations` sweeps and returns the final sample Θ^(iterations).
pub fn gibbs_train(r: &TensorPair, priors: &HyperPriors, cfg: &GibbsConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    priors.validate()?;
    if priors.z() != cfg.z {
        return Err(Error::Config(format!(
            "prior dimension {} differs from z = {}",
            priors.z(),
            cfg.z
        )));
    }
    let obs = Observations::new(r)?;
    let mut theta = init_factors(obs.users, obs.locations, obs.slots, cfg.z, cfg.mode, cfg.seed);
    let mut convergence = Vec::with_capacity(cfg.iterations + 1);
    let (l1, l2) = obs.observed_l1(&theta);
    convergence.push(SweepStats {
        sweep: 0,
        observed_l1_i: l1,
        observed_l1_ii: l2,
    });
    let order = Factor::sweep_order(cfg.mode);
    for sweep in 1..=cfg.iterations {
        let mut hps = Vec::with_capacity(order.len());
        for &f in order {
            let mut rng = substream(cfg.seed, &[tag::HYPER, sweep as u64, f.tag()]);
            hps.push(sample_hyperparams(factor_mat(&theta, f), priors, &mut rng)?);
        }
        for (&f, hp) in order.iter().zip(&hps) {
            let m = sample_factor_rows(f, &obs, &theta, hp, cfg, sweep)?;
            *factor_mat_mut(&mut theta, f) = m;
        }
        if !theta.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "non-finite factors after sweep {sweep}"
            )));
        }
        let (l1, l2) = obs.observed_l1(&theta);
        log::debug!("sweep {sweep}: observed L1 {l1:.4} / {l2:.4}");
        convergence.push(SweepStats {
            sweep,
            observed_l1_i: l1,
            observed_l1_ii: l2,
        });
    }
    Ok(TrainOutput {
        factors: theta,
        convergence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorError {
    pub observed_l1: f64,
    /// Estimated (or exact) L1 over all unobserved cells.
    pub unobserved_l1: f64,
    /// ζ, the number of unobserved cells.
    pub unobserved_cells: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    pub transition: TensorError,
    pub visit: TensorError,
}

fn tensor_cell(theta: &FactorMatrices, t: &SparseCountTensor, n: usize, i: usize, j: usize) -> f64 {
    match t.kind {
        crate::tensor::TensorKind::Transition => theta.transition_cell(n, i, j),
        crate::tensor::TensorKind::Visit => theta.visit_cell(n, i, j),
    }
}

fn observed_l1_of(theta: &FactorMatrices, t: &SparseCountTensor) -> f64 {
    t.slices
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            s.observed()
                .map(|(i, j, r)| (r - tensor_cell(theta, t, n, i, j)).abs())
                .sum::<f64>()
        })
        .sum()
}

fn unobserved_cells(t: &SparseCountTensor) -> u64 {
    let cells = t.cells_per_user() as u64;
    t.slices.iter().map(|s| cells - s.observed_len() as u64).sum()
}

fn sampled_error(
    theta: &FactorMatrices,
    t: &SparseCountTensor,
    samples_per_user: usize,
    seed: u64,
) -> TensorError {
    let zeta = unobserved_cells(t);
    let cells = t.cells_per_user();
    let kind_tag = match t.kind {
        crate::tensor::TensorKind::Transition => 1,
        crate::tensor::TensorKind::Visit => 2,
    };
    let sampled: f64 = t
        .slices
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            if s.observed_len() >= cells || samples_per_user == 0 {
                return 0.0;
            }
            let mut rng = substream(seed, &[tag::RECON, kind_tag, n as u64]);
            let mut acc = 0.0;
            let mut drawn = 0;
            while drawn < samples_per_user {
                let c = rng.random_range(0..cells);
                let (i, j) = (c / t.cols, c % t.cols);
                if s.is_observed(i, j) {
                    continue;
                }
                acc += tensor_cell(theta, t, n, i, j).abs();
                drawn += 1;
            }
            acc
        })
        .sum();
    let scale = if samples_per_user == 0 || t.users == 0 {
        0.0
    } else {
        zeta as f64 / (samples_per_user as f64 * t.users as f64)
    };
    TensorError {
        observed_l1: observed_l1_of(theta, t),
        unobserved_l1: sampled * scale,
        unobserved_cells: zeta,
    }
}

/// Observed L1 exactly, unobserved L1 estimated from `samples_per_user`
/// uniformly drawn unobserved cells per user and scaled by
/// `ζ / (samples_per_user · |U|)`. Unobserved cells are treated as zeros.
pub fn reconstruction_report(
    theta: &FactorMatrices,
    r: &TensorPair,
    samples_per_user: usize,
    seed: u64,
) -> ReconstructionReport {
    ReconstructionReport {
        transition: sampled_error(theta, &r.transition, samples_per_user, seed),
        visit: sampled_error(theta, &r.visit, samples_per_user, seed),
    }
}

/// Exhaustive L1 over every unobserved cell of `t`.
pub fn exhaustive_unobserved_l1(theta: &FactorMatrices, t: &SparseCountTensor) -> f64 {
    t.slices
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            let mut acc = 0.0;
            for i in 0..t.rows {
                for j in 0..t.cols {
                    if !s.is_observed(i, j) {
                        acc += tensor_cell(theta, t, n, i, j).abs();
                    }
                }
            }
            acc
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Entry, TensorKind, UserSlice};

    fn random_factors(seed: u64, users: usize, x: usize, l: usize, z: usize) -> FactorMatrices {
        let mut th = init_factors(users, x, l, z, FactorizationMode::Shared, seed);
        let mut rng = substream(seed, &[99]);
        for m in [&mut th.a, &mut th.b, &mut th.c, &mut th.d] {
            *m = Mat::from_fn(m.rows(), z, |_, _| rng.random_range(-1.0..1.0));
        }
        th
    }

    #[test]
    fn init_is_uniform_and_deterministic() {
        let a = init_factors(500, 3, 2, 16, FactorizationMode::Shared, 1);
        let b = init_factors(500, 3, 2, 16, FactorizationMode::Shared, 1);
        assert_eq!(a, b);
        assert_eq!((a.a.rows(), a.a.cols()), (500, 16));
        assert!(a.a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let big = init_factors(6250, 1, 1, 16, FactorizationMode::Shared, 2);
        let mut hist = [0usize; 10];
        for &v in big.a.data() {
            hist[((v * 10.0) as usize).min(9)] += 1;
        }
        let n = big.a.data().len() as f64;
        let sd = (n * 0.1 * 0.9).sqrt();
        for h in hist {
            assert!((h as f64 - n * 0.1).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn reconstruction_matches_triple_loop() {
        let th = random_factors(3, 4, 5, 6, 3);
        for n in 0..4 {
            let (ri, rii) = reconstruct_user(&th, n);
            for i in 0..5 {
                for j in 0..5 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += th.a.get(n, k) * th.b.get(i, k) * th.c.get(j, k);
                    }
                    assert!((ri.get(i, j) - s).abs() < 1e-12);
                }
                for j in 0..6 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += th.a.get(n, k) * th.b.get(i, k) * th.d.get(j, k);
                    }
                    assert!((rii.get(i, j) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_reconstruction() {
        let th = FactorMatrices {
            z: 1,
            a: Mat::from_vec(1, 1, vec![2.0]).unwrap(),
            b: Mat::from_vec(1, 1, vec![3.0]).unwrap(),
            c: Mat::from_vec(1, 1, vec![4.0]).unwrap(),
            d: Mat::from_vec(1, 1, vec![0.0]).unwrap(),
            visit_user_location: None,
        };
        assert_eq!(reconstruct_user(&th, 0).0.get(0, 0), 24.0);
        assert_eq!(reconstruct_user(&th, 0).1.get(0, 0), 0.0);
    }

    #[test]
    fn empty_rows_give_the_prior() {
        let priors = HyperPriors::standard(3);
        let post = NormalWishartPosterior::new(&Mat::zeros(0, 3), &priors).unwrap();
        assert_eq!(post.beta, 2.0);
        assert_eq!(post.nu, 3.0);
        assert_eq!(post.w, DMatrix::identity(3, 3));
        assert_eq!(post.mu, DVector::zeros(3));
    }

    #[test]
    fn posterior_counts() {
        let priors = HyperPriors::standard(2);
        let rows = Mat::from_fn(500, 2, |r, c| (r + c) as f64 * 0.01);
        let post = NormalWishartPosterior::new(&rows, &priors).unwrap();
        assert_eq!(post.beta, 502.0);
        assert_eq!(post.nu, 502.0);
        let abar = [2.495, 2.505];
        for (k, &a) in abar.iter().enumerate() {
            assert!((post.mu[k] - 500.0 * a / 502.0).abs() < 1e-9);
        }
    }

    #[test]
    fn posterior_scale_matches_hand_formula() {
        // z = 1: W*^{-1} = W0^{-1} + Σ(a - ā)² + β0 N/(β0 + N) (μ0 - ā)²
        let priors = HyperPriors {
            mu0: vec![1.0],
            beta0: 2.0,
            w0: vec![0.5],
            nu0: 1.0,
        };
        let rows = Mat::from_vec(3, 1, vec![1.0, 2.0, 6.0]).unwrap();
        let post = NormalWishartPosterior::new(&rows, &priors).unwrap();
        let abar = 3.0;
        let s = 4.0 + 1.0 + 9.0;
        let w_inv = 2.0 + s + 2.0 * 3.0 / 5.0 * (1.0f64 - abar).powi(2);
        assert!((post.w[(0, 0)] - 1.0 / w_inv).abs() < 1e-12);
        assert!((post.mu[0] - (2.0 + 9.0) / 5.0).abs() < 1e-12);
    }

    fn one_cell_pair(r: u32) -> TensorPair {
        let slice = |entries: Vec<Entry>| UserSlice {
            entries,
            observed_zeros: Vec::new(),
        };
        TensorPair {
            transition: SparseCountTensor {
                kind: TensorKind::Transition,
                users: 1,
                rows: 1,
                cols: 1,
                rmax: None,
                slices: vec![slice(vec![Entry { i: 0, j: 0, count: r }])],
            },
            visit: SparseCountTensor {
                kind: TensorKind::Visit,
                users: 1,
                rows: 1,
                cols: 1,
                rmax: None,
                slices: vec![slice(vec![])],
            },
        }
    }

    #[test]
    fn one_dimensional_posterior_mean() {
        // z = 1, b = c = 1, one observation r: a | rest ~ N((λμ + αr)/(λ + α), 1/(λ + α))
        let r = one_cell_pair(3);
        let obs = Observations::new(&r).unwrap();
        let theta = FactorMatrices {
            z: 1,
            a: Mat::zeros(1, 1),
            b: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            c: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            d: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            visit_user_location: None,
        };
        let hp = HyperParams {
            mu: DVector::from_vec(vec![0.5]),
            lambda: DMatrix::from_element(1, 1, 2.0),
        };
        let alpha = 4.0;
        let mean = (2.0 * 0.5 + alpha * 3.0) / (2.0 + alpha);
        let sd = (1.0 / (2.0f64 + alpha)).sqrt();
        let draws = 10_000;
        let mut acc = 0.0;
        for s in 0..draws {
            let cfg = GibbsConfig {
                alpha,
                z: 1,
                iterations: 1,
                burn_in: 0,
                seed: s,
                mode: FactorizationMode::Shared,
            };
            acc += sample_factor_rows(Factor::A, &obs, &theta, &hp, &cfg, 1)
                .unwrap()
                .get(0, 0);
        }
        let emp = acc / draws as f64;
        assert!((emp - mean).abs() < 4.0 * sd / (draws as f64).sqrt());

        let cfg = GibbsConfig {
            alpha: 1e9,
            z: 1,
            iterations: 1,
            burn_in: 0,
            seed: 5,
            mode: FactorizationMode::Shared,
        };
        let a = sample_factor_rows(Factor::A, &obs, &theta, &hp, &cfg, 1).unwrap();
        assert!((a.get(0, 0) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn unobserved_row_draws_from_prior() {
        let r = one_cell_pair(1);
        let obs = Observations::new(&r).unwrap();
        let theta = FactorMatrices {
            z: 1,
            a: Mat::zeros(1, 1),
            b: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            c: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            d: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            visit_user_location: None,
        };
        let hp = HyperParams {
            mu: DVector::from_vec(vec![-1.0]),
            lambda: DMatrix::from_element(1, 1, 4.0),
        };
        // D_0 has no observed cells: draws follow N(-1, 1/4)
        let draws = 10_000;
        let mut acc = 0.0;
        for s in 0..draws {
            let cfg = GibbsConfig {
                seed: s,
                z: 1,
                ..GibbsConfig::default()
            };
            acc += sample_factor_rows(Factor::D, &obs, &theta, &hp, &cfg, 1)
                .unwrap()
                .get(0, 0);
        }
        let emp = acc / draws as f64;
        assert!((emp + 1.0).abs() < 4.0 * 0.5 / (draws as f64).sqrt());
    }

    #[test]
    fn row_precision_is_spd() {
        let mut rng = substream(11, &[]);
        for inst in 0..100u64 {
            let th = random_factors(inst, 3, 6, 4, 5);
            let cells: Vec<Cell> = (0..rng.random_range(0..12))
                .map(|_| {
                    (
                        rng.random_range(0..6u32),
                        rng.random_range(0..6u32),
                        rng.random_range(0..5) as f64,
                    )
                })
                .collect();
            let hp = HyperParams::standard(5);
            let terms = [Terms {
                cells: &cells,
                u: &th.b,
                v: &th.c,
            }];
            let (p, _) = row_posterior(&hp, 200.0, &terms);
            assert!((&p - p.transpose()).norm() < 1e-9);
            let eig = p.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));
        }
    }

    #[test]
    fn independent_mode_has_separate_factors() {
        let data = crate::demo::tiny_dataset(7);
        let pair = crate::tensor::build_tensors(
            &data,
            &crate::tensor::TrimConfig {
                rho_i: 5,
                rho_ii: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = GibbsConfig {
            z: 2,
            iterations: 3,
            burn_in: 2,
            mode: FactorizationMode::Independent,
            ..Default::default()
        };
        let out = gibbs_train(&pair, &HyperPriors::standard(2), &cfg).unwrap();
        let th = &out.factors;
        assert_eq!(th.mode(), FactorizationMode::Independent);
        let (va, vb, _) = th.visit_factors();
        assert_ne!(va, &th.a);
        assert_ne!(vb, &th.b);
        assert_eq!(out.convergence.len(), 4);
    }

    #[test]
    fn independent_transition_factors_ignore_visit_tensor() {
        let data = crate::demo::tiny_dataset(8);
        let trim = crate::tensor::TrimConfig {
            rho_i: 5,
            rho_ii: 3,
            ..Default::default()
        };
        let pair = crate::tensor::build_tensors(&data, &trim).unwrap();
        let mut altered = pair.clone();
        for s in &mut altered.visit.slices {
            for e in &mut s.entries {
                e.count += 3;
            }
        }
        let cfg = GibbsConfig {
            z: 2,
            iterations: 3,
            burn_in: 0,
            mode: FactorizationMode::Independent,
            ..Default::default()
        };
        let a = gibbs_train(&pair, &HyperPriors::standard(2), &cfg).unwrap().factors;
        let b = gibbs_train(&altered, &HyperPriors::standard(2), &cfg).unwrap().factors;
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
        assert_eq!(a.c, b.c);
        assert_ne!(a.d, b.d);
    }

    #[test]
    fn config_validation() {
        let cfg = GibbsConfig {
            iterations: 5,
            burn_in: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(GibbsConfig::default().validate().is_ok());
    }

    #[test]
    fn exact_fit_has_zero_observed_error() {
        let th = FactorMatrices {
            z: 1,
            a: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            b: Mat::from_vec(1, 1, vec![1.0]).unwrap(),
            c: Mat::from_vec(1, 1, vec![3.0]).unwrap(),
            d: Mat::from_vec(1, 1, vec![0.0]).unwrap(),
            visit_user_location: None,
        };
        let rep = reconstruction_report(&th, &one_cell_pair(3), 10, 0);
        assert_eq!(rep.transition.observed_l1, 0.0);
        assert_eq!(rep.transition.unobserved_cells, 0);
    }

    #[test]
    fn sampled_unobserved_estimate_is_close() {
        // 20×20×5 instance: users 20, |X| 20, |L| 5
        let th = random_factors(4, 20, 20, 5, 3);
        let mut slices = Vec::new();
        let mut rng = substream(21, &[]);
        for _ in 0..20 {
            let mut cells: Vec<(usize, usize)> = (0..30)
                .map(|_| (rng.random_range(0..20), rng.random_range(0..20)))
                .collect();
            cells.sort();
            cells.dedup();
            let entries = cells[..10]
                .iter()
                .map(|&(i, j)| Entry { i, j, count: 1 })
                .collect();
            slices.push(UserSlice {
                entries,
                observed_zeros: cells[10..].to_vec(),
            });
        }
        let t = SparseCountTensor {
            kind: TensorKind::Transition,
            users: 20,
            rows: 20,
            cols: 20,
            rmax: None,
            slices,
        };
        let exact = exhaustive_unobserved_l1(&th, &t);
        let est = sampled_error(&th, &t, 1000, 9).unobserved_l1;
        assert!((est - exact).abs() / exact < 0.1, "{est} vs {exact}");
    }
}
