//! Clustered toy mobility data.
//!
//! Locations form a `width × height` grid split into vertical stripes, one
//! per cluster. Each cluster has a per-slot affinity over its stripe drawn
//! from a symmetric Dirichlet and a few candidate home and work locations;
//! each user picks one home and one work location among them. A user stays put with probability `stay`, otherwise draws from
//! a slot-dependent mixture of anchor, cluster affinity and a little uniform
//! noise. Events are then dropped i.i.d. at `missing_rate`.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};
use crate::synth::sample_categorical;
use crate::trace::{Event, LocationTable, TimeSlotMap, Trace, TraceDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub users: usize,
    pub test_users: usize,
    pub width: usize,
    pub height: usize,
    pub instants: usize,
    pub slots: usize,
    pub clusters: usize,
    /// Dirichlet concentration of the per-slot cluster affinities.
    pub concentration: f64,
    pub missing_rate: f64,
    pub stay: f64,
    /// Weight of the user's own anchor in each draw.
    pub anchor_weight: f64,
    /// Weight of the uniform component in each draw.
    pub noise: f64,
    /// Candidate home (and work) locations per cluster.
    pub anchors: usize,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            users: 200,
            test_users: 200,
            width: 10,
            height: 10,
            instants: 30,
            slots: 6,
            clusters: 4,
            concentration: 0.5,
            missing_rate: 0.1,
            stay: 0.3,
            anchor_weight: 0.3,
            noise: 0.02,
            anchors: 3,
            seed: 0,
        }
    }
}

impl DemoSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.users,
            self.width,
            self.height,
            self.instants,
            self.slots,
            self.clusters,
            self.anchors,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("demo sizes must be positive".into()));
        }
        if self.slots > self.instants {
            return Err(Error::Config("more slots than instants".into()));
        }
        if self.clusters > self.width {
            return Err(Error::Config("each cluster needs at least one grid column".into()));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::Config("affinity concentration must be positive".into()));
        }
        for (name, v) in [
            ("missing_rate", self.missing_rate),
            ("stay", self.stay),
            ("anchor_weight", self.anchor_weight),
            ("noise", self.noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.missing_rate >= 1.0 {
            return Err(Error::Config("missing_rate must be below 1".into()));
        }
        if self.anchor_weight + self.noise > 1.0 {
            return Err(Error::Config("anchor_weight + noise must not exceed 1".into()));
        }
        Ok(())
    }

    pub fn time_map(&self) -> Result<TimeSlotMap> {
        TimeSlotMap::from_table(
            (0..self.instants)
                .map(|t| t * self.slots / self.instants)
                .collect(),
        )
    }

    /// Cluster owning grid column `col`.
    pub fn cluster_of_column(&self, col: usize) -> usize {
        col * self.clusters / self.width
    }
}

#[derive(Debug, Clone)]
pub struct DemoData {
    pub train: TraceDataset,
    pub test: TraceDataset,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

fn dirichlet(k: usize, conc: f64, rng: &mut Rng) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v = vec![1.0 / k as f64; k];
    }
    v
}

struct Cluster {
    locations: Vec<usize>,
    affinity: Vec<Vec<f64>>,
    homes: Vec<usize>,
    works: Vec<usize>,
}

fn user_trace(
    spec: &DemoSpec,
    time: &TimeSlotMap,
    cluster: &Cluster,
    x: usize,
    n: usize,
    rng: &mut Rng,
) -> Trace {
    let home = cluster.homes[rng.random_range(0..cluster.homes.len())];
    let work = cluster.works[rng.random_range(0..cluster.works.len())];
    let slot_dist: Vec<Vec<f64>> = (0..spec.slots)
        .map(|s| {
            let anchor = if s == 0 || s + 1 == spec.slots { home } else { work };
            let rest = 1.0 - spec.anchor_weight - spec.noise;
            let mut p = vec![spec.noise / x as f64; x];
            p[anchor] += spec.anchor_weight;
            for (k, &loc) in cluster.locations.iter().enumerate() {
                p[loc] += rest * cluster.affinity[s][k];
            }
            p
        })
        .collect();
    let mut events = Vec::with_capacity(spec.instants);
    let mut prev = 0;
    for t in 0..spec.instants {
        let loc = if t > 0 && rng.random::<f64>() < spec.stay {
            prev
        } else {
            sample_categorical(&slot_dist[time.slot(t)], rng)
        };
        prev = loc;
        if rng.random::<f64>() >= spec.missing_rate {
            events.push(Event {
                instant: t,
                location: loc,
            });
        }
    }
    Trace::new(n, events)
}

/// Training and testing users with their planted cluster labels.
pub fn gen_demo_data(spec: &DemoSpec) -> Result<DemoData> {
    spec.validate()?;
    let time = spec.time_map()?;
    let locations = LocationTable::grid(spec.width, spec.height);
    let x = locations.len();
    let mut rng = substream(spec.seed, &[tag::DEMO]);
    let clusters: Vec<Cluster> = (0..spec.clusters)
        .map(|c| {
            let locs: Vec<usize> = (0..x)
                .filter(|&i| spec.cluster_of_column(i % spec.width) == c)
                .collect();
            let affinity = (0..spec.slots)
                .map(|_| dirichlet(locs.len(), spec.concentration, &mut rng))
                .collect();
            let pool = |rng: &mut Rng| -> Vec<usize> {
                let k = spec.anchors.min(locs.len());
                rand::seq::index::sample(rng, locs.len(), k)
                    .into_iter()
                    .map(|i| locs[i])
                    .collect()
            };
            let homes = pool(&mut rng);
            let works = pool(&mut rng);
            Cluster {
                locations: locs,
                affinity,
                homes,
                works,
            }
        })
        .collect();
    let make = |count: usize, part: u64| {
        let mut labels = Vec::with_capacity(count);
        let mut traces = Vec::with_capacity(count);
        for n in 0..count {
            let mut urng = substream(spec.seed, &[tag::DEMO, part, n as u64]);
            let c = urng.random_range(0..spec.clusters);
            labels.push(c);
            traces.push(user_trace(spec, &time, &clusters[c], x, n, &mut urng));
        }
        (traces, labels)
    };
    let (train, train_labels) = make(spec.users, 1);
    let (test, test_labels) = make(spec.test_users, 2);
    let names = |prefix: &str, k: usize| (0..k).map(|n| format!("{prefix}{n}")).collect();
    Ok(DemoData {
        train: TraceDataset::new(names("u", spec.users), locations.clone(), time.clone(), train)?,
        test: TraceDataset::new(names("t", spec.test_users), locations, time, test)?,
        train_labels,
        test_labels,
    })
}

/// A very small clustered training set for unit tests.
pub fn tiny_dataset(seed: u64) -> TraceDataset {
    let spec = DemoSpec {
        users: 6,
        test_users: 0,
        width: 3,
        height: 2,
        instants: 8,
        slots: 2,
        clusters: 2,
        seed,
        ..DemoSpec::default()
    };
    gen_demo_data(&spec).expect("valid spec").train
}
