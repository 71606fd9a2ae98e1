//! One function per subcommand. Each reads its inputs from the paths in the
//! configuration and the output directory, and writes its artifacts there.

use std::io::Write;
use std::path::Path;

use ppmtf::attacks::{membership_advantage, reid_rate, reidentify_all, AttackModel, MembershipConfig};
use ppmtf::dp::{compute_kappa, compute_kappa_sampled, train_with_kappa_bound, DpReport, TrimParams};
use ppmtf::gibbs::{gibbs_train, FactorMatrices};
use ppmtf::memory::estimate_memory;
use ppmtf::metrics::{extract_cluster, slot_counts, training_baseline, uniform_baseline, UtilityReport};
use ppmtf::pd::{run_pd_test, PdResult, PdSubset};
use ppmtf::sgd::{sgd_synthesize_all, train_sgd, SgdUsers};
use ppmtf::synth::{synthesize_all, GeneratorSet, SyntheticTrace, UserModel, Window};
use ppmtf::tensor::build_tensors;
use ppmtf::trace::TraceDataset;
use ppmtf::{Error, Result};

use crate::artifacts::*;
use crate::config::{RunConfig, Synthesizer};

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.paths.output.as_path();
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

pub fn gen_demo(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let d = ppmtf::demo::gen_demo_data(&cfg.demo_spec())?;
    d.train.write_events(create(&dir.join("train.csv"))?)?;
    d.test.write_events(create(&dir.join("test.csv"))?)?;
    d.train.locations().write(create(&dir.join("locations.csv"))?)?;
    d.train.time().write(create(&dir.join("time.csv"))?)?;
    let mut w = create(&dir.join("labels.csv"))?;
    writeln!(w, "split,user,cluster")?;
    for (split, data, labels) in [("train", &d.train, &d.train_labels), ("test", &d.test, &d.test_labels)] {
        for (n, c) in labels.iter().enumerate() {
            writeln!(w, "{split},{},{c}", data.user_name(n))?;
        }
    }
    w.flush()?;
    let mut run = cfg.clone();
    run.paths.traces = Some("train.csv".into());
    run.paths.test = Some("test.csv".into());
    run.paths.locations = Some("locations.csv".into());
    run.paths.time_map = Some("time.csv".into());
    run.paths.output = "out".into();
    let x = d.train.location_count();
    run.trim.rho_i = run.trim.rho_i.min(x * x * 3 / 100);
    run.trim.rho_ii = run.trim.rho_ii.min(x * d.train.slot_count() / 3);
    run.synthesis.replicas = run.synthesis.replicas.max(10);
    std::fs::write(dir.join("config.toml"), run.to_toml())?;
    println!(
        "demo: {} training and {} testing users, {} locations, {} instants -> {}",
        d.train.user_count(),
        d.test.user_count(),
        d.train.location_count(),
        d.train.time().instant_count(),
        dir.display()
    );
    Ok(())
}

pub fn build(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let world = load_training(cfg)?;
    let r = build_tensors(&world.train, &cfg.trim_config())?;
    write_tensors(dir, &r)?;
    println!(
        "tensors: {} users, {} locations, {} slots; R^I {} positive / {} observed, R^II {} positive / {} observed",
        r.users(),
        r.locations(),
        r.slots(),
        r.transition.positive_count(),
        r.transition.observed_count(),
        r.visit.positive_count(),
        r.visit.observed_count()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let r = read_tensors(dir)?;
    let gcfg = cfg.gibbs_config();
    let priors = cfg.priors();
    let (theta, kappa) = match cfg.gibbs.kappa_max {
        Some(bound) => {
            let (theta, k) = train_with_kappa_bound(&r, &priors, &gcfg, bound, cfg.gibbs.max_attempts)?;
            (theta, Some(k))
        }
        None => {
            let out = gibbs_train(&r, &priors, &gcfg)?;
            write_convergence(dir, &out.convergence)?;
            (out.factors, None)
        }
    };
    let info = ModelInfo {
        mode: theta.mode(),
        z: theta.z,
        users: theta.users(),
        locations: theta.locations(),
        slots: theta.slots(),
        alpha: gcfg.alpha,
        seed: cfg.seed,
        kappa,
    };
    write_model(dir, &theta, &info)?;
    println!(
        "model: {:?} mode, z = {}, {} users{}",
        info.mode,
        info.z,
        info.users,
        kappa.map(|k| format!(", kappa = {k}")).unwrap_or_default()
    );
    Ok(())
}

fn checked_model(dir: &Path, train: &TraceDataset) -> Result<FactorMatrices> {
    let (theta, _) = read_model(dir)?;
    if theta.users() != train.user_count()
        || theta.locations() != train.location_count()
        || theta.slots() != train.slot_count()
    {
        return Err(Error::Config(format!(
            "model shape ({}, {}, {}) does not match the training data ({}, {}, {})",
            theta.users(),
            theta.locations(),
            theta.slots(),
            train.user_count(),
            train.location_count(),
            train.slot_count()
        )));
    }
    Ok(theta)
}

/// The generator whose likelihood the PD test uses.
pub fn user_model(cfg: &RunConfig, dir: &Path, train: &TraceDataset) -> Result<Box<dyn UserModel>> {
    Ok(match cfg.synthesis.synthesizer {
        Synthesizer::Ppmtf => {
            let theta = checked_model(dir, train)?;
            Box::new(GeneratorSet::build(&theta, train.time(), cfg.synthesis.phi)?)
        }
        Synthesizer::Sgd => Box::new(SgdUsers::new(train_sgd(train, cfg.synthesis.xi)?, train)),
    })
}

fn pd_results(
    cfg: &RunConfig,
    model: &dyn UserModel,
    traces: &[&SyntheticTrace],
    train: &TraceDataset,
) -> Result<Vec<(String, String, PdResult)>> {
    let pcfg = cfg.pd_config(train.user_count());
    pcfg.validate(train.user_count())?;
    let subset = PdSubset::draw(train.user_count(), &pcfg)?;
    traces
        .iter()
        .map(|s| {
            let r = run_pd_test(&s.trace, s.input_user, model, pcfg.k, pcfg.eta, &subset)?;
            Ok((
                format!("{}#{}", train.user_name(s.input_user), s.replica),
                train.user_name(s.input_user).to_string(),
                r,
            ))
        })
        .collect()
}

pub fn synthesize(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let world = load_training(cfg)?;
    let train = &world.train;
    let s = &cfg.synthesis;
    let all: Vec<SyntheticTrace> = match s.synthesizer {
        Synthesizer::Ppmtf => {
            let theta = checked_model(dir, train)?;
            let gens = GeneratorSet::build(&theta, train.time(), s.phi)?;
            let instants = train.time().instant_count();
            if s.start >= instants {
                return Err(Error::Config(format!("synthesis.start {} is past the last instant", s.start)));
            }
            let window = Window {
                start: s.start,
                len: s.length.unwrap_or(instants - s.start),
            };
            synthesize_all(&gens, s.replicas, window, cfg.seed)?
        }
        Synthesizer::Sgd => {
            let model = train_sgd(train, s.xi)?;
            sgd_synthesize_all(&model, train, s.replicas, cfg.seed)
        }
    };
    let refs: Vec<&SyntheticTrace> = all.iter().collect();
    if !s.gate {
        write_synthetic(&dir.join(SYNTHETIC), train, &refs)?;
        write_synthetic_index(&dir.join(SYNTHETIC_INDEX), train, &refs)?;
        println!("synthesized {} traces ({})", refs.len(), synthesizer_name(s.synthesizer));
        return Ok(());
    }
    let model = user_model(cfg, dir, train)?;
    let results = pd_results(cfg, model.as_ref(), &refs, train)?;
    write_pd_report(&dir.join(PD_REPORT), &results)?;
    let (kept, rejected): (Vec<_>, Vec<_>) = refs.iter().zip(&results).partition(|(_, r)| r.2.pass);
    let kept: Vec<&SyntheticTrace> = kept.into_iter().map(|(t, _)| *t).collect();
    let rejected: Vec<&SyntheticTrace> = rejected.into_iter().map(|(t, _)| *t).collect();
    write_synthetic(&dir.join(SYNTHETIC), train, &kept)?;
    write_synthetic_index(&dir.join(SYNTHETIC_INDEX), train, &kept)?;
    write_synthetic(&dir.join(QUARANTINE), train, &rejected)?;
    println!(
        "synthesized {} traces ({}); PD gate kept {} and quarantined {}",
        refs.len(),
        synthesizer_name(s.synthesizer),
        kept.len(),
        rejected.len()
    );
    Ok(())
}

fn synthetic_traces(set: &SyntheticSet) -> Vec<SyntheticTrace> {
    set.data
        .traces()
        .iter()
        .enumerate()
        .map(|(k, t)| SyntheticTrace {
            input_user: set.input_users[k],
            replica: set.replicas[k],
            trace: t.clone(),
        })
        .collect()
}

pub fn pd_test(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let world = load_training(cfg)?;
    let set = read_synthetic(dir, &world.train)?;
    let traces = synthetic_traces(&set);
    let refs: Vec<&SyntheticTrace> = traces.iter().collect();
    let model = user_model(cfg, dir, &world.train)?;
    let results = pd_results(cfg, model.as_ref(), &refs, &world.train)?;
    write_pd_report(&dir.join(PD_REPORT), &results)?;
    let pass = results.iter().filter(|r| r.2.pass).count();
    println!(
        "PD test (k = {}, eta = {}): {pass} of {} traces pass",
        cfg.pd.k,
        cfg.pd.eta,
        results.len()
    );
    Ok(())
}

fn write_cluster_dump(path: &Path, data: &TraceDataset, clusters: &[Vec<usize>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "cluster_k,location,freq")?;
    for (k, users) in clusters.iter().enumerate() {
        let counts = slot_counts(data, Some(users));
        let mut loc = vec![0.0; data.location_count()];
        for row in &counts {
            for (acc, v) in loc.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let total: f64 = loc.iter().sum();
        for (i, v) in loc.iter().enumerate() {
            let f = if total > 0.0 { v / total } else { 0.0 };
            writeln!(w, "{k},{},{f}", data.locations().name(i))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let world = load_training(cfg)?;
    let test = world
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("paths.test is required for evaluate".into()))?;
    let set = read_synthetic(dir, &world.train)?;
    let bins = cfg.evaluate.poi_bins;
    let uniform = uniform_baseline(
        set.data.user_count().max(1),
        world.train.locations(),
        world.train.time(),
        cfg.seed,
    );
    let rows = [
        ("synthetic", UtilityReport::compute(test, &set.data, bins)?),
        ("training", UtilityReport::compute(test, &training_baseline(&world.train), bins)?),
        ("uniform", UtilityReport::compute(test, &uniform, bins)?),
    ];
    let mut w = create(&dir.join(UTILITY))?;
    writeln!(w, "dataset,tp_tv,tp_tv_top50,tm_emd_x,tm_emd_y,vf_tv")?;
    for (name, r) in &rows {
        writeln!(w, "{name},{},{},{},{},{}", r.tp_tv, r.tp_tv_top50, r.tm_emd_x, r.tm_emd_y, r.vf_tv)?;
    }
    w.flush()?;
    println!("{:<10} {:>8} {:>11} {:>9} {:>9} {:>8}", "dataset", "TP-TV", "TP-TV-Top50", "TM-EMD-X", "TM-EMD-Y", "VF-TV");
    for (name, r) in &rows {
        println!(
            "{name:<10} {:>8.4} {:>11.4} {:>9.4} {:>9.4} {:>8.4}",
            r.tp_tv, r.tp_tv_top50, r.tm_emd_x, r.tm_emd_y, r.vf_tv
        );
    }
    if cfg.evaluate.cluster_dump {
        let theta = checked_model(dir, &world.train)?;
        let clusters = (0..theta.z)
            .map(|k| extract_cluster(&theta.a, k, cfg.evaluate.cluster_fraction))
            .collect::<Result<Vec<_>>>()?;
        write_cluster_dump(&dir.join("clusters_training.csv"), &world.train, &clusters)?;
        let synth_clusters: Vec<Vec<usize>> = clusters
            .iter()
            .map(|users| {
                (0..set.data.user_count())
                    .filter(|&k| users.binary_search(&set.input_users[k]).is_ok())
                    .collect()
            })
            .collect();
        write_cluster_dump(&dir.join("clusters_synthetic.csv"), &set.data, &synth_clusters)?;
    }
    Ok(())
}

pub fn attack(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let world = load_training(cfg)?;
    let train = &world.train;
    let set = read_synthetic(dir, train)?;
    let model = AttackModel::train(train)?;
    let assignments = reidentify_all(set.data.traces(), &set.input_users, &model)?;
    let rate = if assignments.is_empty() { 0.0 } else { reid_rate(&assignments)? };
    let mut w = create(&dir.join(REID))?;
    writeln!(w, "input_user,predicted_user,correct")?;
    for (p, t) in &assignments {
        writeln!(w, "{},{},{}", train.user_name(*t), train.user_name(*p), p == t)?;
    }
    w.flush()?;
    let mut summary = create(&dir.join(ATTACK_SUMMARY))?;
    writeln!(summary, "metric,value")?;
    writeln!(summary, "reidentification_rate,{rate}")?;
    writeln!(summary, "chance_rate,{}", 1.0 / train.user_count() as f64)?;
    println!("re-identification rate {rate:.4} over {} traces", assignments.len());
    match &world.test {
        Some(test) => {
            let both = concat(train, test)?;
            let model = AttackModel::train(&both)?;
            let off = train.user_count();
            let mcfg = MembershipConfig {
                thresholds: cfg.attack.thresholds.clone(),
                members: (0..off).collect(),
                nonmembers: (off..both.user_count()).collect(),
            };
            let m = membership_advantage(set.data.traces(), &model, &mcfg)?;
            let mut w = create(&dir.join(MEMBERSHIP))?;
            writeln!(w, "threshold,advantage")?;
            for (psi, adv) in &m.curve {
                writeln!(w, "{psi},{adv}")?;
            }
            w.flush()?;
            writeln!(summary, "membership_advantage,{}", m.best_advantage)?;
            writeln!(summary, "membership_threshold,{}", m.best_threshold)?;
            println!(
                "membership advantage {:.4} (accuracy {:.4})",
                m.best_advantage,
                (m.best_advantage + 1.0) / 2.0
            );
        }
        None => log::warn!("no testing traces; membership inference skipped"),
    }
    summary.flush()?;
    Ok(())
}

pub fn dp_report(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let r = read_tensors(dir)?;
    let (theta, info) = read_model(dir)?;
    let kappa = match cfg.dp.kappa_samples {
        0 => compute_kappa(&theta, &r),
        s => compute_kappa_sampled(&theta, &r, s, cfg.seed),
    };
    let t = &cfg.trim;
    let trim = TrimParams {
        lambda_i: t.lambda_i as f64,
        rho_i: t.rho_i as f64,
        rmax_i: r.transition.effective_rmax(),
        lambda_ii: t.lambda_ii as f64,
        rho_ii: t.rho_ii as f64,
        rmax_ii: r.visit.effective_rmax(),
    };
    let report = DpReport::new(info.alpha, trim, kappa);
    std::fs::write(dir.join(DP_REPORT), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn memory(cfg: &RunConfig, users: u64, locations: u64, slots: u64) -> Result<()> {
    let bytes = estimate_memory(users, locations, slots, &cfg.trim_config(), cfg.gibbs.z as u64);
    println!("{bytes} bytes ({:.2} GB)", bytes as f64 / 1e9);
    Ok(())
}

/// build-tensors, train, synthesize, then PD, evaluation, attacks and DP
/// report as configured; writes `summary.txt`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    build(cfg)?;
    if cfg.synthesis.synthesizer == Synthesizer::Ppmtf {
        train(cfg)?;
    }
    synthesize(cfg)?;
    if !cfg.synthesis.gate {
        pd_test(cfg)?;
    }
    let has_test = cfg.paths.test.is_some();
    if cfg.evaluate.enabled && has_test {
        evaluate(cfg)?;
    }
    if cfg.attack.enabled {
        attack(cfg)?;
    }
    if cfg.synthesis.synthesizer == Synthesizer::Ppmtf {
        dp_report(cfg)?;
    }
    let mut summary = String::new();
    summary.push_str("[config]\n");
    summary.push_str(&cfg.to_toml());
    for (title, file) in [
        ("utility", UTILITY),
        ("attack", ATTACK_SUMMARY),
        ("dp", DP_REPORT),
    ] {
        if let Ok(text) = std::fs::read_to_string(dir.join(file)) {
            summary.push_str(&format!("\n[{title}]\n{text}"));
        }
    }
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}
