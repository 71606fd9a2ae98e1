//! On-disk artifacts: datasets, factor matrices, synthetic-trace index and
//! report tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ppmtf::gibbs::{FactorMatrices, FactorizationMode, SweepStats};
use ppmtf::linalg::Mat;
use ppmtf::pd::PdResult;
use ppmtf::synth::SyntheticTrace;
use ppmtf::tensor::{SparseCountTensor, TensorPair};
use ppmtf::trace::{parse_events, LocationTable, TimeSlotMap, Trace, TraceDataset};
use ppmtf::{Error, Result};

use crate::config::{RunConfig, Synthesizer};

pub const TENSOR_I: &str = "tensor_I.txt";
pub const TENSOR_II: &str = "tensor_II.txt";
pub const MODEL_DIR: &str = "model";
pub const SYNTHETIC: &str = "synthetic.csv";
pub const SYNTHETIC_INDEX: &str = "synthetic_index.csv";
pub const QUARANTINE: &str = "quarantine.csv";
pub const PD_REPORT: &str = "pd_report.csv";
pub const UTILITY: &str = "utility.csv";
pub const REID: &str = "reid.csv";
pub const MEMBERSHIP: &str = "membership.csv";
pub const ATTACK_SUMMARY: &str = "attack_summary.csv";
pub const DP_REPORT: &str = "dp.txt";

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{what} is not set")))
}

fn max_instant(path: &Path) -> Result<usize> {
    let mut max = 0;
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let Some(field) = line.split(',').nth(1) else { continue };
        if let Ok(t) = field.trim().parse::<usize>() {
            max = max.max(t);
        } else if k > 0 && !line.trim().is_empty() {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("bad instant `{field}`"),
            });
        }
    }
    Ok(max)
}

/// The location table and slot map the configuration describes.
pub fn load_world(cfg: &RunConfig) -> Result<(LocationTable, TimeSlotMap)> {
    let locations = LocationTable::parse(open(required(&cfg.paths.locations, "locations")?)?)?;
    let time = match &cfg.paths.time_map {
        Some(p) => TimeSlotMap::parse(open(p)?)?,
        None => {
            let instants = match cfg.paths.instants {
                Some(n) => n,
                None => {
                    let mut n = max_instant(required(&cfg.paths.traces, "traces")?)? + 1;
                    if let Some(t) = &cfg.paths.test {
                        n = n.max(max_instant(t)? + 1);
                    }
                    n
                }
            };
            TimeSlotMap::from_rule(&cfg.paths.time_rule, instants)?
        }
    };
    Ok((locations, time))
}

pub fn load_events(path: &Path, locations: &LocationTable, time: &TimeSlotMap) -> Result<TraceDataset> {
    parse_events(open(path)?, locations.clone(), time.clone())
}

pub struct World {
    pub train: TraceDataset,
    pub test: Option<TraceDataset>,
}

pub fn load_training(cfg: &RunConfig) -> Result<World> {
    let (locations, time) = load_world(cfg)?;
    let train = load_events(required(&cfg.paths.traces, "traces")?, &locations, &time)?;
    let test = match &cfg.paths.test {
        Some(p) => Some(load_events(p, &locations, &time)?),
        None => None,
    };
    Ok(World { train, test })
}

pub fn write_tensors(dir: &Path, r: &TensorPair) -> Result<()> {
    r.transition.write(create(&dir.join(TENSOR_I))?)?;
    r.visit.write(create(&dir.join(TENSOR_II))?)?;
    Ok(())
}

pub fn read_tensors(dir: &Path) -> Result<TensorPair> {
    let transition = SparseCountTensor::parse(open(&dir.join(TENSOR_I))?)?;
    let visit = SparseCountTensor::parse(open(&dir.join(TENSOR_II))?)?;
    if transition.users != visit.users || transition.rows != visit.rows {
        return Err(Error::Config("tensor shapes disagree".into()));
    }
    Ok(TensorPair { transition, visit })
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut w = create(path)?;
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path, cols: usize) -> Result<Mat> {
    let mut rows = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                line: k + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        if row.len() != cols {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("{}: expected {cols} columns, found {}", path.display(), row.len()),
            });
        }
        rows.push(row);
    }
    Mat::from_rows(rows, cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub mode: FactorizationMode,
    pub z: usize,
    pub users: usize,
    pub locations: usize,
    pub slots: usize,
    pub alpha: f64,
    pub seed: u64,
    pub kappa: Option<f64>,
}

pub fn write_model(dir: &Path, theta: &FactorMatrices, info: &ModelInfo) -> Result<()> {
    let dir = dir.join(MODEL_DIR);
    write_matrix(&dir.join("A.csv"), &theta.a)?;
    write_matrix(&dir.join("B.csv"), &theta.b)?;
    write_matrix(&dir.join("C.csv"), &theta.c)?;
    write_matrix(&dir.join("D.csv"), &theta.d)?;
    let (va, vb) = (dir.join("visit_A.csv"), dir.join("visit_B.csv"));
    match &theta.visit_user_location {
        Some((a, b)) => {
            write_matrix(&va, a)?;
            write_matrix(&vb, b)?;
        }
        None => {
            for p in [va, vb] {
                if p.exists() {
                    std::fs::remove_file(p)?;
                }
            }
        }
    }
    let mut w = create(&dir.join("model.json"))?;
    serde_json::to_writer_pretty(&mut w, info).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn read_model(dir: &Path) -> Result<(FactorMatrices, ModelInfo)> {
    let dir = dir.join(MODEL_DIR);
    let info: ModelInfo = serde_json::from_reader(open(&dir.join("model.json"))?)
        .map_err(|e| Error::Config(format!("model.json: {e}")))?;
    let z = info.z;
    let check = |m: Mat, rows: usize, name: &str| -> Result<Mat> {
        if m.rows() != rows {
            return Err(Error::Config(format!("{name} has {} rows, expected {rows}", m.rows())));
        }
        Ok(m)
    };
    let a = check(read_matrix(&dir.join("A.csv"), z)?, info.users, "A")?;
    let b = check(read_matrix(&dir.join("B.csv"), z)?, info.locations, "B")?;
    let c = check(read_matrix(&dir.join("C.csv"), z)?, info.locations, "C")?;
    let d = check(read_matrix(&dir.join("D.csv"), z)?, info.slots, "D")?;
    let visit_user_location = match info.mode {
        FactorizationMode::Shared => None,
        FactorizationMode::Independent => Some((
            check(read_matrix(&dir.join("visit_A.csv"), z)?, info.users, "visit_A")?,
            check(read_matrix(&dir.join("visit_B.csv"), z)?, info.locations, "visit_B")?,
        )),
    };
    Ok((
        FactorMatrices {
            z,
            a,
            b,
            c,
            d,
            visit_user_location,
        },
        info,
    ))
}

pub fn write_convergence(dir: &Path, stats: &[SweepStats]) -> Result<()> {
    let mut w = create(&dir.join(MODEL_DIR).join("convergence.csv"))?;
    writeln!(w, "sweep,observed_l1_I,observed_l1_II")?;
    for s in stats {
        writeln!(w, "{},{},{}", s.sweep, s.observed_l1_i, s.observed_l1_ii)?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic traces in the events format, addressed by trace id.
pub struct SyntheticSet {
    pub data: TraceDataset,
    /// Training-user index behind each trace of `data`.
    pub input_users: Vec<usize>,
    pub replicas: Vec<usize>,
}

fn trace_id(train: &TraceDataset, s: &SyntheticTrace) -> String {
    format!("{}#{}", train.user_name(s.input_user), s.replica)
}

pub fn write_synthetic(path: &Path, train: &TraceDataset, traces: &[&SyntheticTrace]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "user,instant,location")?;
    for s in traces {
        let id = trace_id(train, s);
        for e in &s.trace.events {
            writeln!(w, "{id},{},{}", e.instant, train.locations().name(e.location))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_synthetic_index(path: &Path, train: &TraceDataset, traces: &[&SyntheticTrace]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "trace_id,input_user,replica")?;
    for s in traces {
        writeln!(w, "{},{},{}", trace_id(train, s), train.user_name(s.input_user), s.replica)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_synthetic(dir: &Path, train: &TraceDataset) -> Result<SyntheticSet> {
    let data = load_events(&dir.join(SYNTHETIC), train.locations(), train.time())?;
    let mut index = std::collections::HashMap::new();
    for (k, line) in open(&dir.join(SYNTHETIC_INDEX))?.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line: k + 1,
                message: "expected trace_id,input_user,replica".into(),
            });
        }
        let replica = f[2].parse::<usize>().map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        index.insert(f[0].to_string(), (f[1].to_string(), replica));
    }
    let by_name: std::collections::HashMap<&str, usize> = train
        .user_names()
        .iter()
        .enumerate()
        .map(|(n, s)| (s.as_str(), n))
        .collect();
    let mut input_users = Vec::with_capacity(data.user_count());
    let mut replicas = Vec::with_capacity(data.user_count());
    for name in data.user_names() {
        let (user, r) = index
            .get(name)
            .ok_or_else(|| Error::Config(format!("synthetic trace {name} missing from the index")))?;
        let n = *by_name
            .get(user.as_str())
            .ok_or_else(|| Error::Config(format!("input user {user} is not a training user")))?;
        input_users.push(n);
        replicas.push(*r);
    }
    Ok(SyntheticSet {
        data,
        input_users,
        replicas,
    })
}

pub fn write_pd_report(path: &Path, rows: &[(String, String, PdResult)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "trace_id,input_user,bucket,k_found,pass")?;
    for (id, user, r) in rows {
        writeln!(w, "{id},{user},{},{},{}", r.bucket, r.count, r.pass)?;
    }
    w.flush()?;
    Ok(())
}

/// Training and testing users in one dataset; testing names get a prefix
/// so they cannot collide.
pub fn concat(train: &TraceDataset, test: &TraceDataset) -> Result<TraceDataset> {
    let off = train.user_count();
    let mut names: Vec<String> = train.user_names().to_vec();
    names.extend(test.user_names().iter().map(|n| format!("test:{n}")));
    let mut traces: Vec<Trace> = train.traces().to_vec();
    traces.extend(test.traces().iter().map(|t| Trace::new(t.user + off, t.events.clone())));
    TraceDataset::new(names, train.locations().clone(), train.time().clone(), traces)
}

pub fn synthesizer_name(s: Synthesizer) -> &'static str {
    match s {
        Synthesizer::Ppmtf => "ppmtf",
        Synthesizer::Sgd => "sgd",
    }
}
