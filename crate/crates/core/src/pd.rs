//! Plausible-deniability test for synthetic traces.
//!
//! A trace `y` generated from user `n` passes when at least `k` users `m` of
//! `U* ∪ {n}` generate `y` with a probability in the same bucket
//! `e^{−(i+1)η} < p ≤ e^{−iη}` as `p(y = M(n))`.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::synth::UserModel;
use crate::trace::Trace;

/// Absolute tolerance in log space for landing exactly on a bucket boundary.
pub const LOG_BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdConfig {
    pub k: usize,
    pub eta: f64,
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            k: 10,
            eta: 1.0,
            subset_size: 32_000,
            seed: 0,
        }
    }
}

impl PdConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.subset_size == 0 || self.subset_size > users {
            return Err(Error::Config(format!(
                "subset size {} must lie in [1, {users}]",
                self.subset_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdResult {
    pub pass: bool,
    pub bucket: u64,
    /// Users found in the bucket (stops at `k` on a pass).
    pub count: usize,
    /// Users whose probability was examined.
    pub tested: usize,
}

/// Bucket of a log-probability: the unique `i ≥ 0` with
/// `e^{−(i+1)η} < p ≤ e^{−iη}`, or `None` when `p = 0`.
pub fn bucket_index_log(log_p: f64, eta: f64) -> Result<Option<u64>> {
    if log_p.is_nan() || log_p > LOG_BOUNDARY_EPS {
        return Err(Error::Contract(format!("log-probability {log_p} is not in (-inf, 0]")));
    }
    if log_p == f64::NEG_INFINITY {
        return Ok(None);
    }
    let neg = (-log_p).max(0.0);
    let v = neg / eta;
    let r = v.round();
    if (neg - r * eta).abs() <= LOG_BOUNDARY_EPS {
        return Ok(Some(r as u64));
    }
    Ok(Some(v.floor() as u64))
}

pub fn bucket_index(p: f64, eta: f64) -> Result<u64> {
    if !(p > 0.0) || p > 1.0 {
        return Err(Error::Contract(format!("probability {p} is not in (0, 1]")));
    }
    Ok(bucket_index_log(p.ln(), eta)?.expect("p > 0"))
}

/// The candidate set `U*`, drawn once per run without replacement and kept
/// sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdSubset {
    users: Vec<usize>,
}

impl PdSubset {
    pub fn draw(user_count: usize, cfg: &PdConfig) -> Result<Self> {
        cfg.validate(user_count)?;
        let mut rng = substream(cfg.seed, &[tag::PD_SUBSET]);
        let mut users = index::sample(&mut rng, user_count, cfg.subset_size).into_vec();
        users.sort_unstable();
        Ok(Self { users })
    }

    pub fn all(user_count: usize) -> Self {
        Self {
            users: (0..user_count).collect(),
        }
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    /// `u_n` first, then `U* \ {u_n}` in increasing order.
    pub fn order_for(&self, n: usize) -> Vec<usize> {
        std::iter::once(n)
            .chain(self.users.iter().copied().filter(|&m| m != n))
            .collect()
    }
}

const CHUNK: usize = 64;

/// Privacy test for trace `y` generated from user `n`.
///
/// Candidates are scored in parallel chunks and counted sequentially in a
/// fixed order, so the early exit is deterministic.
pub fn run_pd_test<M: UserModel + ?Sized>(
    y: &Trace,
    n: usize,
    model: &M,
    k: usize,
    eta: f64,
    subset: &PdSubset,
) -> Result<PdResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n >= model.user_count() {
        return Err(Error::Contract(format!("input user {n} out of range")));
    }
    let own = model.log_probability(n, y)?;
    let bucket = bucket_index_log(own, eta)?.ok_or_else(|| {
        Error::Contract(format!("trace has zero probability under its input user {n}"))
    })?;
    let order = subset.order_for(n);
    let mut count = 0;
    let mut tested = 0;
    for chunk in order.chunks(CHUNK) {
        let scores: Vec<f64> = chunk
            .par_iter()
            .map(|&m| model.log_probability(m, y))
            .collect::<Result<_>>()?;
        for lp in scores {
            tested += 1;
            if bucket_index_log(lp, eta)? == Some(bucket) {
                count += 1;
                if count >= k {
                    return Ok(PdResult {
                        pass: true,
                        bucket,
                        count,
                        tested,
                    });
                }
            }
        }
    }
    Ok(PdResult {
        pass: false,
        bucket,
        count,
        tested,
    })
}

pub fn pd_pass_rate(results: &[PdResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("no PD results".into()));
    }
    Ok(results.iter().filter(|r| r.pass).count() as f64 / results.len() as f64)
}

/// Pass rate for each `k` in `ks` over the same traces and candidate order.
///
/// Each trace is tested once with `max(ks)`; it passes at `k` iff its bucket
/// count reaches `k`.
pub fn pass_rate_curve<M: UserModel + ?Sized>(
    traces: &[(usize, Trace)],
    model: &M,
    ks: &[usize],
    eta: f64,
    subset: &PdSubset,
) -> Result<Vec<(usize, f64)>> {
    if traces.is_empty() {
        return Err(Error::Empty("no traces for the pass-rate curve".into()));
    }
    let kmax = ks.iter().copied().max().unwrap_or(1).max(1);
    let counts: Vec<usize> = traces
        .iter()
        .map(|(n, y)| run_pd_test(y, *n, model, kmax, eta, subset).map(|r| r.count))
        .collect::<Result<_>>()?;
    Ok(ks
        .iter()
        .map(|&k| {
            let pass = counts.iter().filter(|&&c| c >= k).count();
            (k, pass as f64 / counts.len() as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{GeneratorSet, MarkovGenerator, normalize_rows_with_floor, normalize_with_floor};
    use crate::linalg::Mat;
    use crate::rng::substream;
    use crate::trace::TimeSlotMap;
    use rand::Rng as _;

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_index(1.0, 1.0).unwrap(), 0);
        assert_eq!(bucket_index((-1.0f64).exp(), 1.0).unwrap(), 1);
        assert_eq!(bucket_index((-1.5f64).exp(), 1.0).unwrap(), 1);
        assert!(bucket_index(0.0, 1.0).is_err());
        assert!(bucket_index(1.5, 1.0).is_err());
        assert_eq!(bucket_index_log(f64::NEG_INFINITY, 1.0).unwrap(), None);
    }

    #[test]
    fn bucket_satisfies_both_inequalities() {
        let mut rng = substream(3, &[]);
        for _ in 0..1000 {
            let lp: f64 = -rng.random_range(0.0..40.0);
            let eta = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            let i = bucket_index_log(lp, eta).unwrap().unwrap() as f64;
            assert!(-(i + 1.0) * eta < lp && lp <= -i * eta + LOG_BOUNDARY_EPS);
        }
    }

    fn toy_world(users: usize, seed: u64) -> GeneratorSet {
        let mut rng = substream(seed, &[]);
        let generators = (0..users)
            .map(|n| {
                let q = Mat::from_fn(2, 2, |_, _| rng.random_range(0.05..1.0));
                let pi = (0..2)
                    .map(|_| normalize_with_floor(&[rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)], 1e-8))
                    .collect();
                MarkovGenerator::from_parts(n, normalize_rows_with_floor(&q, 1e-8), pi, 1e-8).unwrap()
            })
            .collect();
        GeneratorSet {
            generators,
            time: TimeSlotMap::identity(2).unwrap(),
        }
    }

    #[test]
    fn k_one_always_passes() {
        let w = toy_world(3, 1);
        let y = Trace::from_locations(0, 0, &[1, 0]);
        let r = run_pd_test(&y, 2, &w, 1, 1.0, &PdSubset::all(3)).unwrap();
        assert!(r.pass);
        assert_eq!(r.tested, 1);
    }

    #[test]
    fn agrees_with_brute_force() {
        for seed in 0..20 {
            let w = toy_world(3, seed);
            for c in 0..4 {
                let y = Trace::from_locations(0, 0, &[c / 2, c % 2]);
                for n in 0..3 {
                    for eta in [0.5, 1.0, 2.0] {
                        let p: Vec<f64> =
                            (0..3).map(|m| w.log_probability(m, &y).unwrap().exp()).collect();
                        let lo = |i: f64| (-(i + 1.0) * eta).exp();
                        let hi = |i: f64| (-i * eta).exp();
                        let i = (0..1000)
                            .map(|i| i as f64)
                            .find(|&i| lo(i) < p[n] && p[n] <= hi(i))
                            .unwrap();
                        let found = p.iter().filter(|&&q| lo(i) < q && q <= hi(i)).count();
                        for k in 1..=3 {
                            let r = run_pd_test(&y, n, &w, k, eta, &PdSubset::all(3)).unwrap();
                            assert_eq!(r.pass, found >= k);
                            assert_eq!(r.bucket, i as u64);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pass_rates() {
        let r = |pass| PdResult {
            pass,
            bucket: 0,
            count: 0,
            tested: 0,
        };
        assert_eq!(pd_pass_rate(&[r(true), r(true)]).unwrap(), 1.0);
        let mixed: Vec<PdResult> = (0..10).map(|i| r(i < 7)).collect();
        assert!((pd_pass_rate(&mixed).unwrap() - 0.7).abs() < 1e-15);
        assert!(pd_pass_rate(&[]).is_err());
    }

    #[test]
    fn subset_is_reproducible() {
        let cfg = PdConfig {
            k: 2,
            eta: 1.0,
            subset_size: 10,
            seed: 4,
        };
        let a = PdSubset::draw(100, &cfg).unwrap();
        assert_eq!(a, PdSubset::draw(100, &cfg).unwrap());
        assert_eq!(a.users().len(), 10);
        assert!(a.users().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.order_for(a.users()[3]).len(), 10);
        assert!(PdSubset::draw(5, &cfg).is_err());
    }

    #[test]
    fn pass_is_monotone_in_k() {
        let w = toy_world(8, 9);
        let subset = PdSubset::all(8);
        for c in 0..4 {
            let y = Trace::from_locations(0, 0, &[c / 2, c % 2]);
            let mut prev = true;
            for k in 1..=8 {
                let pass = run_pd_test(&y, 0, &w, k, 1.0, &subset).unwrap().pass;
                assert!(prev || !pass);
                prev = pass;
            }
        }
        let traces: Vec<(usize, Trace)> = (0..4)
            .map(|c| (c % 8, Trace::from_locations(0, 0, &[c / 2, c % 2])))
            .collect();
        let curve = pass_rate_curve(&traces, &w, &[1, 2, 4, 8], 1.0, &subset).unwrap();
        assert_eq!(curve[0].1, 1.0);
        assert!(curve.windows(2).all(|p| p[0].1 >= p[1].1));
    }

    #[test]
    fn counted_users_share_the_bucket() {
        let w = toy_world(6, 12);
        let y = Trace::from_locations(0, 0, &[0, 1]);
        let r = run_pd_test(&y, 1, &w, 6, 0.5, &PdSubset::all(6)).unwrap();
        let in_bucket = (0..6)
            .filter(|&m| {
                bucket_index_log(w.log_probability(m, &y).unwrap(), 0.5).unwrap() == Some(r.bucket)
            })
            .count();
        assert_eq!(in_bucket, r.count);
    }
}
