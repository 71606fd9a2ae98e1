//! Per-user Markov generators built from trained factors, trace synthesis and
//! exact trace probabilities.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{reconstruct_user, FactorMatrices};
use crate::linalg::Mat;
use crate::rng::{substream, tag, Rng};
use crate::trace::{Event, TimeSlotMap, Trace, TraceDataset};

pub const DEFAULT_PHI: f64 = 1e-8;

/// Replaces entries below `phi` by `phi` and normalizes to sum 1.
pub fn normalize_with_floor(values: &[f64], phi: f64) -> Vec<f64> {
    let floored: Vec<f64> = values
        .iter()
        .map(|&v| if v < phi || v.is_nan() { phi } else { v })
        .collect();
    let s: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / s).collect()
}

/// Row-wise [`normalize_with_floor`].
pub fn normalize_rows_with_floor(m: &Mat, phi: f64) -> Mat {
    let rows: Vec<Vec<f64>> = m.iter_rows().map(|r| normalize_with_floor(r, phi)).collect();
    Mat::from_rows(rows, m.cols()).expect("same shape")
}

/// Metropolis–Hastings adjustment of the proposal `q_star` towards `pi`:
/// `Q(b|a) = Q*(b|a) · min(1, π(b) Q*(a|b) / (π(a) Q*(b|a)))` off the
/// diagonal, and `Q(a|a) = 1 − Σ_{b≠a} Q(b|a)`.
pub fn mh_adjust(q_star: &Mat, pi: &[f64]) -> Result<Mat> {
    let x = pi.len();
    if q_star.rows() != x || q_star.cols() != x {
        return Err(Error::Contract(format!(
            "proposal is {}×{}, target has {x} states",
            q_star.rows(),
            q_star.cols()
        )));
    }
    if pi.iter().any(|&p| !(p > 0.0)) || q_star.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract(
            "MH adjustment needs strictly positive proposal and target".into(),
        ));
    }
    let mut q = Mat::zeros(x, x);
    for a in 0..x {
        let mut off = 0.0;
        for b in 0..x {
            if b == a {
                continue;
            }
            let prop = q_star.get(a, b);
            let v = prop.min(pi[b] * q_star.get(b, a) / pi[a]);
            q.set(a, b, v);
            off += v;
        }
        q.set(a, a, 1.0 - off);
        let row = q.row_mut(a);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    Ok(q)
}

/// The sampler `M_n`: proposal `Q*_n`, per-slot targets `π_{n,i}` and
/// adjusted matrices `Q_{n,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGenerator {
    pub user: usize,
    pub q_star: Mat,
    pub q: Vec<Mat>,
    pub pi: Vec<Vec<f64>>,
    pub phi: f64,
}

impl MarkovGenerator {
    /// Builds a generator from a proposal and per-slot targets.
    pub fn from_parts(user: usize, q_star: Mat, pi: Vec<Vec<f64>>, phi: f64) -> Result<Self> {
        let q = pi
            .iter()
            .map(|p| mh_adjust(&q_star, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            user,
            q_star,
            q,
            pi,
            phi,
        })
    }

    pub fn locations(&self) -> usize {
        self.q_star.rows()
    }

    pub fn slots(&self) -> usize {
        self.pi.len()
    }
}

/// `Q*_n` from the floored, row-normalized `R̂^I_n`; `π_{n,i}` from the
/// floored, normalized column `i` of `R̂^II_n`; `Q_{n,i} = mh_adjust(Q*_n, π_{n,i})`.
pub fn build_generator(
    theta: &FactorMatrices,
    n: usize,
    time: &TimeSlotMap,
    phi: f64,
) -> Result<MarkovGenerator> {
    if n >= theta.users() {
        return Err(Error::Contract(format!("user {n} out of range")));
    }
    if time.slot_count() != theta.slots() {
        return Err(Error::Contract(format!(
            "time map has {} slots, factors have {}",
            time.slot_count(),
            theta.slots()
        )));
    }
    let (ri, rii) = reconstruct_user(theta, n);
    let q_star = normalize_rows_with_floor(&ri, phi);
    let pi = (0..rii.cols())
        .map(|j| {
            let col: Vec<f64> = (0..rii.rows()).map(|i| rii.get(i, j)).collect();
            normalize_with_floor(&col, phi)
        })
        .collect();
    MarkovGenerator::from_parts(n, q_star, pi, phi)
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// A gap-free trace over `len` instants starting at `start`.
pub fn synthesize_window(
    gen: &MarkovGenerator,
    time: &TimeSlotMap,
    start: usize,
    len: usize,
    rng: &mut Rng,
) -> Result<Trace> {
    if start + len > time.instant_count() {
        return Err(Error::Config(format!(
            "window [{start}, {}) exceeds |T| = {}",
            start + len,
            time.instant_count()
        )));
    }
    let mut events = Vec::with_capacity(len);
    let mut prev = 0;
    for t in start..start + len {
        let slot = time.slot(t);
        let loc = if t == start {
            sample_categorical(&gen.pi[slot], rng)
        } else {
            sample_categorical(gen.q[slot].row(prev), rng)
        };
        events.push(Event {
            instant: t,
            location: loc,
        });
        prev = loc;
    }
    Ok(Trace::new(gen.user, events))
}

/// A gap-free trace covering every instant of `time`.
pub fn synthesize_trace(gen: &MarkovGenerator, time: &TimeSlotMap, rng: &mut Rng) -> Trace {
    synthesize_window(gen, time, 0, time.instant_count(), rng).expect("full window is in range")
}

/// `ln p(y = M_n)`: the first location under `π` of its slot, then one
/// `Q_{ω(t)}` factor per step.
pub fn trace_log_probability(
    gen: &MarkovGenerator,
    y: &Trace,
    time: &TimeSlotMap,
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Contract("trace probability of an empty trace".into()));
    }
    if !y.is_gap_free() {
        return Err(Error::Contract("trace probability needs a gap-free trace".into()));
    }
    y.validate(time.instant_count(), gen.locations())?;
    let first = y.events[0];
    let mut lp = gen.pi[time.slot(first.instant)][first.location].ln();
    for w in y.events.windows(2) {
        let slot = time.slot(w[1].instant);
        lp += gen.q[slot].get(w[0].location, w[1].location).ln();
    }
    Ok(lp)
}

pub fn trace_probability(gen: &MarkovGenerator, y: &Trace, time: &TimeSlotMap) -> Result<f64> {
    trace_log_probability(gen, y, time).map(f64::exp)
}

/// Anything that scores a trace under each training user's generator.
pub trait UserModel: Sync {
    fn user_count(&self) -> usize;
    /// `ln p(y = M(m))`; `-inf` when impossible.
    fn log_probability(&self, m: usize, y: &Trace) -> Result<f64>;
}

/// Prebuilt generators for every training user.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub generators: Vec<MarkovGenerator>,
    pub time: TimeSlotMap,
}

impl GeneratorSet {
    pub fn build(theta: &FactorMatrices, time: &TimeSlotMap, phi: f64) -> Result<Self> {
        let generators = (0..theta.users())
            .into_par_iter()
            .map(|n| build_generator(theta, n, time, phi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            generators,
            time: time.clone(),
        })
    }
}

impl UserModel for GeneratorSet {
    fn user_count(&self) -> usize {
        self.generators.len()
    }

    fn log_probability(&self, m: usize, y: &Trace) -> Result<f64> {
        trace_log_probability(&self.generators[m], y, &self.time)
    }
}

/// One synthetic trace and the training user it was generated from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTrace {
    pub input_user: usize,
    pub replica: usize,
    pub trace: Trace,
}

/// Window of instants covered by synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn full(time: &TimeSlotMap) -> Self {
        Self {
            start: 0,
            len: time.instant_count(),
        }
    }
}

/// `replicas` traces per user; trace `(n, r)` draws from substream
/// `(seed, n, r)`.
pub fn synthesize_all(
    gens: &GeneratorSet,
    replicas: usize,
    window: Window,
    seed: u64,
) -> Result<Vec<SyntheticTrace>> {
    let jobs: Vec<(usize, usize)> = (0..gens.generators.len())
        .flat_map(|n| (0..replicas).map(move |r| (n, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(n, r)| {
            let mut rng = substream(seed, &[tag::SYNTH, n as u64, r as u64]);
            let trace =
                synthesize_window(&gens.generators[n], &gens.time, window.start, window.len, &mut rng)?;
            Ok(SyntheticTrace {
                input_user: n,
                replica: r,
                trace,
            })
        })
        .collect()
}

/// Packs synthetic traces into a dataset named `<input user>#<replica>`.
pub fn to_dataset(synth: &[SyntheticTrace], source: &TraceDataset) -> Result<TraceDataset> {
    let names = synth
        .iter()
        .map(|s| format!("{}#{}", source.user_name(s.input_user), s.replica))
        .collect();
    let traces = synth
        .iter()
        .enumerate()
        .map(|(k, s)| Trace::new(k, s.trace.events.clone()))
        .collect();
    TraceDataset::new(
        names,
        source.locations().clone(),
        source.time().clone(),
        traces,
    )
}
