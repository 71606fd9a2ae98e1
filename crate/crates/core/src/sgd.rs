//! Population-level baseline synthesizer.
//!
//! One transition matrix per time slot and a first-instant visit vector,
//! estimated by maximum likelihood over all training users. Optionally the
//! first `xi` events of the input trace are copied verbatim.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{substream, tag, Rng};
use crate::synth::{normalize_rows_with_floor, normalize_with_floor, sample_categorical, SyntheticTrace, UserModel};
use crate::trace::{Event, TimeSlotMap, Trace, TraceDataset};

pub const SGD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdModel {
    /// Per-slot MLE transition matrices; empty rows are uniform.
    pub q_mle: Vec<Mat>,
    /// Floored and renormalized copies used for sampling and likelihoods.
    pub q: Vec<Mat>,
    pub pi_mle: Vec<f64>,
    pub pi: Vec<f64>,
    pub xi: usize,
    pub time: TimeSlotMap,
}

fn mle_rows(counts: &Mat) -> Mat {
    let x = counts.cols();
    let rows = counts
        .iter_rows()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter().map(|v| v / s).collect()
            } else {
                vec![1.0 / x as f64; x]
            }
        })
        .collect();
    Mat::from_rows(rows, x).expect("same shape")
}

/// Pools `a → b` counts per slot of the destination instant and
/// first-instant visit counts over all users.
pub fn train_sgd(data: &TraceDataset, xi: usize) -> Result<SgdModel> {
    let x = data.location_count();
    let l = data.slot_count();
    let time = data.time();
    let mut counts = vec![Mat::zeros(x, x); l];
    let mut first = vec![0.0; x];
    let mut transitions = 0usize;
    for tr in data.traces() {
        for (a, b, t) in tr.transitions() {
            let m = &mut counts[time.slot(t)];
            m.set(a, b, m.get(a, b) + 1.0);
            transitions += 1;
        }
        if let Some(loc) = tr.location_at(0) {
            first[loc] += 1.0;
        }
    }
    if transitions == 0 {
        return Err(Error::Empty("training data has no transitions".into()));
    }
    let q_mle: Vec<Mat> = counts.iter().map(mle_rows).collect();
    let q = q_mle
        .iter()
        .map(|m| normalize_rows_with_floor(m, SGD_FLOOR))
        .collect();
    let total: f64 = first.iter().sum();
    let pi_mle: Vec<f64> = if total > 0.0 {
        first.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / x as f64; x]
    };
    let pi = normalize_with_floor(&pi_mle, SGD_FLOOR);
    Ok(SgdModel {
        q_mle,
        q,
        pi_mle,
        pi,
        xi,
        time: time.clone(),
    })
}

impl SgdModel {
    pub fn with_xi(&self, xi: usize) -> Self {
        Self { xi, ..self.clone() }
    }

    fn copied(&self, input: &Trace, t: usize) -> Option<usize> {
        (t < self.xi).then(|| input.location_at(t)).flatten()
    }
}

/// A gap-free trace over all instants: copied prefix, then model draws.
pub fn sgd_synthesize(model: &SgdModel, input: &Trace, rng: &mut Rng) -> Trace {
    let n = model.time.instant_count();
    let mut events = Vec::with_capacity(n);
    let mut prev = 0;
    for t in 0..n {
        let loc = match model.copied(input, t) {
            Some(l) => l,
            None if t == 0 => sample_categorical(&model.pi, rng),
            None => sample_categorical(model.q[model.time.slot(t)].row(prev), rng),
        };
        events.push(Event {
            instant: t,
            location: loc,
        });
        prev = loc;
    }
    Trace::new(input.user, events)
}

pub fn sgd_synthesize_all(
    model: &SgdModel,
    inputs: &TraceDataset,
    replicas: usize,
    seed: u64,
) -> Vec<SyntheticTrace> {
    let jobs: Vec<(usize, usize)> = (0..inputs.user_count())
        .flat_map(|n| (0..replicas).map(move |r| (n, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(n, r)| {
            let mut rng = substream(seed, &[tag::SGD, n as u64, r as u64]);
            SyntheticTrace {
                input_user: n,
                replica: r,
                trace: sgd_synthesize(model, inputs.trace(n), &mut rng),
            }
        })
        .collect()
}

/// The SGD generator of every training user, for likelihood scoring.
#[derive(Debug, Clone)]
pub struct SgdUsers {
    pub model: SgdModel,
    pub inputs: Vec<Trace>,
}

impl SgdUsers {
    pub fn new(model: SgdModel, inputs: &TraceDataset) -> Self {
        Self {
            model,
            inputs: inputs.traces().to_vec(),
        }
    }
}

impl UserModel for SgdUsers {
    fn user_count(&self) -> usize {
        self.inputs.len()
    }

    /// Zero probability unless `y` agrees with user `m` on every copied
    /// instant; the remaining instants follow the pooled model.
    fn log_probability(&self, m: usize, y: &Trace) -> Result<f64> {
        let model = &self.model;
        if y.is_empty() || !y.is_gap_free() {
            return Err(Error::Contract("SGD likelihood needs a gap-free trace".into()));
        }
        y.validate(model.time.instant_count(), model.pi.len())?;
        let input = &self.inputs[m];
        let mut lp = 0.0;
        let mut prev: Option<usize> = None;
        for e in &y.events {
            match model.copied(input, e.instant) {
                Some(l) if l != e.location => return Ok(f64::NEG_INFINITY),
                Some(_) => {}
                None => {
                    lp += match prev {
                        None if e.instant == 0 => model.pi[e.location].ln(),
                        None => {
                            return Err(Error::Contract(
                                "SGD traces start at instant 0".into(),
                            ))
                        }
                        Some(p) => model.q[model.time.slot(e.instant)].get(p, e.location).ln(),
                    };
                }
            }
            prev = Some(e.location);
        }
        Ok(lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pd::{run_pd_test, PdSubset};
    use crate::trace::LocationTable;

    fn dataset(traces: Vec<Vec<usize>>, x: usize, time: TimeSlotMap) -> TraceDataset {
        let traces = traces
            .into_iter()
            .enumerate()
            .map(|(n, l)| Trace::from_locations(n, 0, &l))
            .collect();
        TraceDataset::from_traces(LocationTable::grid(x, 1), time, traces).unwrap()
    }

    #[test]
    fn point_mass_row() {
        let d = dataset(vec![vec![0, 1, 0, 1, 0, 1]], 3, TimeSlotMap::contiguous(6, 6).unwrap());
        let m = train_sgd(&d, 0).unwrap();
        assert_eq!(m.q_mle[0].row(0), &[0.0, 1.0, 0.0]);
        assert!(m.q[0].row(0).iter().all(|&v| v > 0.0));
        assert_eq!(m.q_mle[0].row(2), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn pooled_counts_match_pair_scan() {
        let time = TimeSlotMap::contiguous(9, 3).unwrap();
        let raw = vec![
            vec![1, 2, 3, 2, 2, 3, 4, 4, 4],
            vec![0, 0, 1, 1, 2, 2, 3, 3, 0],
            vec![4, 3, 3, 2, 1, 1, 0, 0, 1],
        ];
        let d = dataset(raw.clone(), 5, time.clone());
        let m = train_sgd(&d, 0).unwrap();
        for slot in 0..3 {
            for a in 0..5 {
                let mut row = [0.0; 5];
                for tr in &raw {
                    for t in 1..tr.len() {
                        if time.slot_of(t).unwrap() == slot && tr[t - 1] == a {
                            row[tr[t]] += 1.0;
                        }
                    }
                }
                let s: f64 = row.iter().sum();
                for b in 0..5 {
                    let expect = if s > 0.0 { row[b] / s } else { 0.2 };
                    assert!((m.q_mle[slot].get(a, b) - expect).abs() < 1e-12);
                }
            }
        }
        assert_eq!(m.pi_mle, vec![1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
    }

    #[test]
    fn no_transitions_is_an_error() {
        let d = dataset(vec![vec![1]], 2, TimeSlotMap::identity(3).unwrap());
        assert!(train_sgd(&d, 0).is_err());
    }

    #[test]
    fn full_copy_reproduces_input() {
        let d = dataset(vec![vec![0, 1, 2, 1]], 3, TimeSlotMap::identity(4).unwrap());
        let m = train_sgd(&d, 4).unwrap();
        let mut rng = substream(1, &[]);
        assert_eq!(sgd_synthesize(&m, d.trace(0), &mut rng), *d.trace(0));
    }

    #[test]
    fn missing_copied_instants_are_generated() {
        let time = TimeSlotMap::identity(4).unwrap();
        let d = TraceDataset::from_traces(
            LocationTable::grid(3, 1),
            time,
            vec![Trace::new(
                0,
                vec![
                    Event { instant: 1, location: 2 },
                    Event { instant: 2, location: 0 },
                    Event { instant: 3, location: 1 },
                ],
            )],
        )
        .unwrap();
        let m = train_sgd(&d, 3).unwrap();
        let mut rng = substream(2, &[]);
        let y = sgd_synthesize(&m, d.trace(0), &mut rng);
        assert!(y.is_gap_free());
        assert_eq!(y.len(), 4);
        assert_eq!(y.location_at(1), Some(2));
        assert_eq!(y.location_at(2), Some(0));
    }

    #[test]
    fn xi_zero_first_location_follows_pi() {
        let d = dataset(
            vec![vec![0, 1], vec![0, 2], vec![1, 1], vec![2, 0]],
            3,
            TimeSlotMap::identity(2).unwrap(),
        );
        let m = train_sgd(&d, 0).unwrap();
        let draws = 20_000;
        let mut freq = [0usize; 3];
        let mut rng = substream(3, &[]);
        for _ in 0..draws {
            freq[sgd_synthesize(&m, d.trace(0), &mut rng).events[0].location] += 1;
        }
        for k in 0..3 {
            let p = m.pi[k];
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((freq[k] as f64 - draws as f64 * p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn xi_zero_output_does_not_depend_on_input() {
        let d = dataset(vec![vec![0, 1, 2], vec![2, 2, 1]], 3, TimeSlotMap::identity(3).unwrap());
        let m = train_sgd(&d, 0).unwrap();
        let a = sgd_synthesize(&m, d.trace(0), &mut substream(5, &[]));
        let b = sgd_synthesize(&m, d.trace(1), &mut substream(5, &[]));
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn xi_zero_always_passes_pd() {
        let d = dataset(
            vec![vec![0, 1, 2], vec![2, 2, 1], vec![1, 0, 0], vec![0, 0, 1]],
            3,
            TimeSlotMap::identity(3).unwrap(),
        );
        let users = SgdUsers::new(train_sgd(&d, 0).unwrap(), &d);
        let subset = PdSubset::all(4);
        let mut rng = substream(7, &[]);
        for n in 0..4 {
            let y = sgd_synthesize(&users.model, d.trace(n), &mut rng);
            for k in 1..=4 {
                assert!(run_pd_test(&y, n, &users, k, 1.0, &subset).unwrap().pass);
            }
        }
    }

    #[test]
    fn copied_prefix_mismatch_has_zero_probability() {
        let d = dataset(vec![vec![0, 1, 2], vec![2, 2, 1]], 3, TimeSlotMap::identity(3).unwrap());
        let users = SgdUsers::new(train_sgd(&d, 2).unwrap(), &d);
        let y = Trace::from_locations(0, 0, &[0, 1, 1]);
        assert!(users.log_probability(0, &y).unwrap().is_finite());
        assert_eq!(users.log_probability(1, &y).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let d = dataset(
            vec![vec![0, 1, 2], vec![2, 2, 1], vec![1, 0, 0]],
            3,
            TimeSlotMap::from_table(vec![0, 0, 1]).unwrap(),
        );
        for xi in [0, 1, 2] {
            let users = SgdUsers::new(train_sgd(&d, xi).unwrap(), &d);
            let total: f64 = (0..27)
                .map(|c| {
                    let y = Trace::from_locations(0, 0, &[c / 9, (c / 3) % 3, c % 3]);
                    users.log_probability(1, &y).unwrap().exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
