//! Sparse per-user count tensors.
//!
//! `R^I` is the transition-count tensor (`|U| × |X| × |X|`) and `R^II` the
//! visit-count tensor (`|U| × |X| × |L|`). Each user slice stores its positive
//! cells and, after [`sample_zero_elements`], a set of zero cells that count
//! as observed. Every other cell is missing.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{parse_err, Error, Result};
use crate::rng::{substream, tag};
use crate::trace::TraceDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Transition,
    Visit,
}

impl TensorKind {
    fn tag(self) -> u64 {
        match self {
            TensorKind::Transition => 1,
            TensorKind::Visit => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TensorKind::Transition => "transition",
            TensorKind::Visit => "visit",
        }
    }
}

/// One positive cell of a user slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub i: usize,
    pub j: usize,
    pub count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserSlice {
    /// Positive cells sorted by `(i, j)`.
    pub entries: Vec<Entry>,
    /// Observed zero cells sorted by `(i, j)`.
    pub observed_zeros: Vec<(usize, usize)>,
}

impl UserSlice {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count as u64).sum()
    }

    /// Count at `(i, j)`; zero when the cell is not positive.
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries
            .binary_search_by(|e| (e.i, e.j).cmp(&(i, j)))
            .map_or(0, |k| self.entries[k].count)
    }

    /// All observed cells (positives then observed zeros) with their values.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries
            .iter()
            .map(|e| (e.i, e.j, e.count as f64))
            .chain(self.observed_zeros.iter().map(|&(i, j)| (i, j, 0.0)))
    }

    pub fn observed_len(&self) -> usize {
        self.entries.len() + self.observed_zeros.len()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.get(i, j) > 0 || self.observed_zeros.binary_search(&(i, j)).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCountTensor {
    pub kind: TensorKind,
    pub users: usize,
    pub rows: usize,
    pub cols: usize,
    /// Truncation bound applied to this tensor, if any.
    pub rmax: Option<u32>,
    pub slices: Vec<UserSlice>,
}

impl SparseCountTensor {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.users, self.rows, self.cols)
    }

    pub fn slice(&self, n: usize) -> &UserSlice {
        &self.slices[n]
    }

    pub fn cells_per_user(&self) -> usize {
        self.rows * self.cols
    }

    /// The bound `r_max` used for κ; falls back to the largest stored count.
    pub fn effective_rmax(&self) -> f64 {
        self.rmax.map(f64::from).unwrap_or_else(|| {
            self.slices
                .iter()
                .flat_map(|s| s.entries.iter().map(|e| e.count))
                .max()
                .unwrap_or(0) as f64
        })
    }

    pub fn positive_count(&self) -> usize {
        self.slices.iter().map(|s| s.entries.len()).sum()
    }

    pub fn observed_count(&self) -> usize {
        self.slices.iter().map(UserSlice::observed_len).sum()
    }

    /// Writes the dump format: a `# kind users rows cols [rmax]` header,
    /// `user,i,j,count` lines, then `# observed-zero` and `user,i,j` lines.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        match self.rmax {
            Some(r) => writeln!(
                w,
                "# {} {} {} {} {}",
                self.kind.as_str(),
                self.users,
                self.rows,
                self.cols,
                r
            )?,
            None => writeln!(
                w,
                "# {} {} {} {}",
                self.kind.as_str(),
                self.users,
                self.rows,
                self.cols
            )?,
        }
        for (n, s) in self.slices.iter().enumerate() {
            for e in &s.entries {
                writeln!(w, "{n},{},{},{}", e.i, e.j, e.count)?;
            }
        }
        writeln!(w, "# observed-zero")?;
        for (n, s) in self.slices.iter().enumerate() {
            for &(i, j) in &s.observed_zeros {
                writeln!(w, "{n},{i},{j}")?;
            }
        }
        Ok(())
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing tensor header"))?;
        let header = header?;
        let h: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
        if h.len() < 4 || h.len() > 5 {
            return Err(parse_err(1, "expected '# kind users rows cols [rmax]'"));
        }
        let kind = match h[0] {
            "transition" => TensorKind::Transition,
            "visit" => TensorKind::Visit,
            other => return Err(parse_err(1, format!("unknown tensor kind {other}"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(1, "bad dimension"));
        let (users, rows, cols) = (num(h[1])?, num(h[2])?, num(h[3])?);
        let rmax = if h.len() == 5 {
            Some(num(h[4])? as u32)
        } else {
            None
        };
        let mut slices = vec![UserSlice::default(); users];
        let mut zeros = false;
        for (lineno, line) in lines {
            let line = line?;
            let lineno = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                zeros = true;
                continue;
            }
            let f: Vec<usize> = line
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(lineno, "expected integers"))?;
            let want = if zeros { 3 } else { 4 };
            if f.len() != want {
                return Err(parse_err(lineno, format!("expected {want} fields")));
            }
            if f[0] >= users || f[1] >= rows || f[2] >= cols {
                return Err(parse_err(lineno, "cell out of range"));
            }
            if zeros {
                slices[f[0]].observed_zeros.push((f[1], f[2]));
            } else {
                if f[3] == 0 {
                    return Err(parse_err(lineno, "entry counts must be positive"));
                }
                slices[f[0]].entries.push(Entry {
                    i: f[1],
                    j: f[2],
                    count: f[3] as u32,
                });
            }
        }
        for s in &mut slices {
            s.entries.sort();
            s.observed_zeros.sort();
        }
        Ok(Self {
            kind,
            users,
            rows,
            cols,
            rmax,
            slices,
        })
    }
}

fn from_counts(
    kind: TensorKind,
    rows: usize,
    cols: usize,
    per_user: Vec<Vec<(usize, usize)>>,
) -> SparseCountTensor {
    let users = per_user.len();
    let slices = per_user
        .into_iter()
        .map(|mut cells| {
            cells.sort_unstable();
            let mut entries: Vec<Entry> = Vec::new();
            for (i, j) in cells {
                match entries.last_mut() {
                    Some(e) if e.i == i && e.j == j => e.count += 1,
                    _ => entries.push(Entry { i, j, count: 1 }),
                }
            }
            UserSlice {
                entries,
                observed_zeros: Vec::new(),
            }
        })
        .collect();
    SparseCountTensor {
        kind,
        users,
        rows,
        cols,
        rmax: None,
        slices,
    }
}

/// Counts transitions between events on adjacent instants.
pub fn build_transition_tensor(data: &TraceDataset) -> SparseCountTensor {
    let x = data.location_count();
    let cells = data
        .traces()
        .iter()
        .map(|tr| tr.transitions().map(|(a, b, _)| (a, b)).collect())
        .collect();
    from_counts(TensorKind::Transition, x, x, cells)
}

/// Counts visits per (location, time slot).
pub fn build_visit_tensor(data: &TraceDataset) -> SparseCountTensor {
    let time = data.time();
    let cells = data
        .traces()
        .iter()
        .map(|tr| {
            tr.events
                .iter()
                .map(|e| (e.location, time.slot(e.instant)))
                .collect()
        })
        .collect();
    from_counts(
        TensorKind::Visit,
        data.location_count(),
        data.slot_count(),
        cells,
    )
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrimConfig {
    pub lambda_i: usize,
    pub lambda_ii: usize,
    pub rmax_i: u32,
    pub rmax_ii: u32,
    pub rho_i: usize,
    pub rho_ii: usize,
    pub seed: u64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            lambda_i: 100,
            lambda_ii: 100,
            rmax_i: 10,
            rmax_ii: 10,
            rho_i: 1000,
            rho_ii: 1000,
            seed: 0,
        }
    }
}

impl TrimConfig {
    pub fn lambda(&self, kind: TensorKind) -> usize {
        match kind {
            TensorKind::Transition => self.lambda_i,
            TensorKind::Visit => self.lambda_ii,
        }
    }

    pub fn rmax(&self, kind: TensorKind) -> u32 {
        match kind {
            TensorKind::Transition => self.rmax_i,
            TensorKind::Visit => self.rmax_ii,
        }
    }

    pub fn rho(&self, kind: TensorKind) -> usize {
        match kind {
            TensorKind::Transition => self.rho_i,
            TensorKind::Visit => self.rho_ii,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_i == 0 || self.lambda_ii == 0 || self.rmax_i == 0 || self.rmax_ii == 0 {
            return Err(Error::Config("lambda and r_max must be positive".into()));
        }
        Ok(())
    }
}

/// Keeps at most `λ` positives per user, chosen uniformly without
/// replacement, and caps every count at `r_max`.
pub fn trim_and_truncate(t: &SparseCountTensor, cfg: &TrimConfig) -> SparseCountTensor {
    let lambda = cfg.lambda(t.kind);
    let rmax = cfg.rmax(t.kind);
    let slices = t
        .slices
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            let mut entries = if s.entries.len() > lambda {
                let mut rng = substream(cfg.seed, &[tag::TRIM, t.kind.tag(), n as u64]);
                let mut keep = index::sample(&mut rng, s.entries.len(), lambda).into_vec();
                keep.sort_unstable();
                keep.into_iter().map(|k| s.entries[k]).collect()
            } else {
                s.entries.clone()
            };
            for e in &mut entries {
                e.count = e.count.min(rmax);
            }
            UserSlice {
                entries,
                observed_zeros: s.observed_zeros.clone(),
            }
        })
        .collect();
    SparseCountTensor {
        rmax: Some(rmax),
        slices,
        ..t.clone()
    }
}

/// Selects `rho` observed zero cells per user by the select / count /
/// reselect procedure: draw `rho` cells of the whole slice, count the `ρ0`
/// positives among them, then draw `ρ0` more cells among the zero cells not
/// yet selected. The result is a uniform `rho`-subset of the zero cells.
pub fn sample_zero_elements(
    t: &SparseCountTensor,
    rho: usize,
    seed: u64,
) -> Result<SparseCountTensor> {
    let cells = t.cells_per_user();
    for (n, s) in t.slices.iter().enumerate() {
        if s.entries.len() + rho > cells {
            return Err(Error::Config(format!(
                "user {n}: {} positives and rho = {rho} exceed the {cells}-cell {} slice",
                s.entries.len(),
                t.kind.as_str()
            )));
        }
    }
    let cols = t.cols;
    let slices = t
        .slices
        .par_iter()
        .enumerate()
        .map(|(n, s)| {
            let mut rng = substream(seed, &[tag::ZEROS, t.kind.tag(), n as u64]);
            let positive: HashSet<usize> = s.entries.iter().map(|e| e.i * cols + e.j).collect();
            let first = index::sample(&mut rng, cells, rho);
            let mut chosen: HashSet<usize> = first.iter().collect();
            let rho0 = chosen.iter().filter(|c| positive.contains(c)).count();
            let free = cells - positive.len() - (rho - rho0);
            let mut extra = Vec::with_capacity(rho0);
            if rho0 > 0 {
                if free >= 4 * rho0 && free * 2 >= cells {
                    while extra.len() < rho0 {
                        let c = rng.random_range(0..cells);
                        if !positive.contains(&c) && chosen.insert(c) {
                            extra.push(c);
                        }
                    }
                } else {
                    let pool: Vec<usize> = (0..cells)
                        .filter(|c| !positive.contains(c) && !chosen.contains(c))
                        .collect();
                    extra = index::sample(&mut rng, pool.len(), rho0)
                        .into_iter()
                        .map(|k| pool[k])
                        .collect();
                    chosen.extend(extra.iter().copied());
                }
            }
            let mut zeros: Vec<(usize, usize)> = chosen
                .into_iter()
                .filter(|c| !positive.contains(c))
                .map(|c| (c / cols, c % cols))
                .collect();
            zeros.sort_unstable();
            UserSlice {
                entries: s.entries.clone(),
                observed_zeros: zeros,
            }
        })
        .collect();
    Ok(SparseCountTensor {
        slices,
        ..t.clone()
    })
}

/// The two tensors consumed by training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPair {
    pub transition: SparseCountTensor,
    pub visit: SparseCountTensor,
}

impl TensorPair {
    pub fn users(&self) -> usize {
        self.transition.users
    }

    pub fn locations(&self) -> usize {
        self.transition.rows
    }

    pub fn slots(&self) -> usize {
        self.visit.cols
    }
}

/// Builds, trims, truncates and samples observed zeros for both tensors.
pub fn build_tensors(data: &TraceDataset, cfg: &TrimConfig) -> Result<TensorPair> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(2);
    for raw in [build_transition_tensor(data), build_visit_tensor(data)] {
        let trimmed = trim_and_truncate(&raw, cfg);
        out.push(sample_zero_elements(&trimmed, cfg.rho(raw.kind), cfg.seed)?);
    }
    let visit = out.pop().expect("two tensors");
    let transition = out.pop().expect("two tensors");
    Ok(TensorPair { transition, visit })
}
