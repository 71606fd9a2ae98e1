//! Utility metrics comparing testing traces with synthetic traces.

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{substream, tag};
use crate::trace::{LocationTable, TimeSlotMap, Trace, TraceDataset};

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Earth mover's distance between two histograms on unit-spaced bins.
pub fn emd_1d(p: &[f64], q: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut d = 0.0;
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        d += (cp - cq).abs();
    }
    d
}

fn normalize_or_uniform(counts: &[f64], what: impl FnOnce() -> String) -> Vec<f64> {
    let s: f64 = counts.iter().sum();
    if s > 0.0 {
        counts.iter().map(|c| c / s).collect()
    } else {
        log::warn!("{}: no events, treating as uniform", what());
        vec![1.0 / counts.len() as f64; counts.len()]
    }
}

/// Per-slot location counts over the traces of `users` (all users if `None`).
pub fn slot_counts(data: &TraceDataset, users: Option<&[usize]>) -> Vec<Vec<f64>> {
    let x = data.location_count();
    let mut counts = vec![vec![0.0; x]; data.slot_count()];
    let mut add = |tr: &Trace| {
        for e in &tr.events {
            counts[data.time().slot(e.instant)][e.location] += 1.0;
        }
    };
    match users {
        Some(us) => us.iter().for_each(|&n| add(data.trace(n))),
        None => data.traces().iter().for_each(&mut add),
    }
    counts
}

/// Average over slots of the TV between per-slot location distributions.
///
/// With `top_k`, only the `k` most frequent testing locations of each slot
/// contribute (ties go to the lower location id).
pub fn tp_tv_counts(test: &[Vec<f64>], synth: &[Vec<f64>], top_k: Option<usize>) -> Result<f64> {
    if test.len() != synth.len() || test.is_empty() {
        return Err(Error::Contract("slot counts differ in shape".into()));
    }
    let mut total = 0.0;
    for (slot, (tc, sc)) in test.iter().zip(synth).enumerate() {
        let p = normalize_or_uniform(tc, || format!("testing slot {slot}"));
        let q = normalize_or_uniform(sc, || format!("synthetic slot {slot}"));
        total += match top_k {
            None => total_variation(&p, &q),
            Some(k) => {
                let mut order: Vec<usize> = (0..p.len()).collect();
                order.sort_by(|&a, &b| tc[b].total_cmp(&tc[a]).then(a.cmp(&b)));
                0.5 * order
                    .iter()
                    .take(k)
                    .map(|&i| (p[i] - q[i]).abs())
                    .sum::<f64>()
            }
        };
    }
    Ok(total / test.len() as f64)
}

pub fn tp_tv(test: &TraceDataset, synth: &TraceDataset, top_k: Option<usize>) -> Result<f64> {
    check_shapes(test, synth)?;
    tp_tv_counts(&slot_counts(test, None), &slot_counts(synth, None), top_k)
}

fn check_shapes(test: &TraceDataset, synth: &TraceDataset) -> Result<()> {
    if test.location_count() != synth.location_count() || test.slot_count() != synth.slot_count() {
        return Err(Error::Contract("datasets differ in |X| or |L|".into()));
    }
    Ok(())
}

/// Time-pooled transition counts over all users.
pub fn pooled_transitions(data: &TraceDataset) -> Mat {
    let x = data.location_count();
    let mut m = Mat::zeros(x, x);
    for tr in data.traces() {
        for (a, b, _) in tr.transitions() {
            m.set(a, b, m.get(a, b) + 1.0);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TmEmd {
    pub x: f64,
    pub y: f64,
    /// Rows averaged over.
    pub rows: usize,
    /// Non-empty testing rows skipped because the synthetic row is empty.
    pub excluded: usize,
}

/// Row-wise 1-D EMD between the pooled transition matrices, marginalized
/// onto x and y bins. Rows empty in either dataset are left out.
pub fn tm_emd(test: &TraceDataset, synth: &TraceDataset, poi_bins: usize) -> Result<TmEmd> {
    check_shapes(test, synth)?;
    let locs: &LocationTable = test.locations();
    let (xb, yb) = locs.emd_bins(poi_bins);
    let nx = xb.iter().max().map_or(0, |m| m + 1);
    let ny = yb.iter().max().map_or(0, |m| m + 1);
    let pt = pooled_transitions(test);
    let ps = pooled_transitions(synth);
    let (mut sx, mut sy, mut rows, mut excluded) = (0.0, 0.0, 0, 0);
    for a in 0..locs.len() {
        let rt = pt.row(a);
        let rs = ps.row(a);
        let tt: f64 = rt.iter().sum();
        let ts: f64 = rs.iter().sum();
        if tt == 0.0 {
            continue;
        }
        if ts == 0.0 {
            excluded += 1;
            continue;
        }
        let marg = |row: &[f64], total: f64, bins: &[usize], n: usize| {
            let mut h = vec![0.0; n];
            for (b, v) in row.iter().enumerate() {
                h[bins[b]] += v / total;
            }
            h
        };
        sx += emd_1d(&marg(rt, tt, &xb, nx), &marg(rs, ts, &xb, nx));
        sy += emd_1d(&marg(rt, tt, &yb, ny), &marg(rs, ts, &yb, ny));
        rows += 1;
    }
    if excluded > 0 {
        log::warn!("TM-EMD excluded {excluded} rows with no synthetic transitions");
    }
    if rows == 0 {
        return Err(Error::Empty("no transition rows shared by both datasets".into()));
    }
    Ok(TmEmd {
        x: sx / rows as f64,
        y: sy / rows as f64,
        rows,
        excluded,
    })
}

pub const VF_BINS: usize = 24;
pub const VF_MIN_EVENTS: usize = 5;

/// Bin of a visit fraction `c / n` on `(0,1/24], (1/24,2/24], ..., (23/24,1]`.
pub fn vf_bin(c: usize, n: usize) -> usize {
    (VF_BINS * c).div_ceil(n) - 1
}

/// Per-location histograms (unnormalized) of visit-fraction bins over the
/// traces with at least five events.
fn vf_histograms(data: &TraceDataset) -> Vec<[f64; VF_BINS]> {
    let x = data.location_count();
    let mut hist = vec![[0.0; VF_BINS]; x];
    let mut counts = vec![0usize; x];
    for tr in data.traces() {
        if tr.len() < VF_MIN_EVENTS {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for e in &tr.events {
            counts[e.location] += 1;
        }
        for (loc, &c) in counts.iter().enumerate() {
            if c > 0 {
                hist[loc][vf_bin(c, tr.len())] += 1.0;
            }
        }
    }
    hist
}

/// Average over testing-visited locations of the TV between visit-fraction
/// distributions. A location no synthetic trace visits scores 1.
pub fn vf_tv(test: &TraceDataset, synth: &TraceDataset) -> Result<f64> {
    check_shapes(test, synth)?;
    let ht = vf_histograms(test);
    let hs = vf_histograms(synth);
    let mut total = 0.0;
    let mut locations = 0;
    for (t, s) in ht.iter().zip(&hs) {
        let nt: f64 = t.iter().sum();
        if nt == 0.0 {
            continue;
        }
        locations += 1;
        let ns: f64 = s.iter().sum();
        total += if ns == 0.0 {
            1.0
        } else {
            let p: Vec<f64> = t.iter().map(|v| v / nt).collect();
            let q: Vec<f64> = s.iter().map(|v| v / ns).collect();
            total_variation(&p, &q)
        };
    }
    if locations == 0 {
        return Err(Error::Empty(format!(
            "no testing trace has at least {VF_MIN_EVENTS} events"
        )));
    }
    Ok(total / locations as f64)
}

/// The `ceil(fraction · |U|)` users with the largest `A[n, column]`
/// (ties to the lower index), in increasing user order.
pub fn extract_cluster(a: &Mat, column: usize, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} must lie in (0, 1]")));
    }
    if column >= a.cols() {
        return Err(Error::Config(format!("column {column} out of range")));
    }
    let n = a.rows();
    let take = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| a.get(q, column).total_cmp(&a.get(p, column)).then(p.cmp(&q)));
    let mut out: Vec<usize> = order.into_iter().take(take.min(n)).collect();
    out.sort_unstable();
    Ok(out)
}

/// Locations drawn i.i.d. uniformly at every instant, one trace per user.
pub fn uniform_baseline(
    users: usize,
    locations: &LocationTable,
    time: &TimeSlotMap,
    seed: u64,
) -> TraceDataset {
    let x = locations.len();
    let traces = (0..users)
        .map(|n| {
            let mut rng = substream(seed, &[tag::BASELINE, n as u64]);
            let locs: Vec<usize> = (0..time.instant_count()).map(|_| rng.random_range(0..x)).collect();
            Trace::from_locations(n, 0, &locs)
        })
        .collect();
    TraceDataset::from_traces(locations.clone(), time.clone(), traces).expect("valid by construction")
}

/// The training traces released unchanged.
pub fn training_baseline(data: &TraceDataset) -> TraceDataset {
    data.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityReport {
    pub tp_tv: f64,
    pub tp_tv_top50: f64,
    pub tm_emd_x: f64,
    pub tm_emd_y: f64,
    pub vf_tv: f64,
}

impl UtilityReport {
    pub fn compute(test: &TraceDataset, synth: &TraceDataset, poi_bins: usize) -> Result<Self> {
        let emd = tm_emd(test, synth, poi_bins)?;
        Ok(Self {
            tp_tv: tp_tv(test, synth, None)?,
            tp_tv_top50: tp_tv(test, synth, Some(50))?,
            tm_emd_x: emd.x,
            tm_emd_y: emd.y,
            vf_tv: vf_tv(test, synth)?,
        })
    }
}
