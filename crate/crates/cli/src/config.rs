//! Run configuration: a TOML file with one flat section per pipeline stage,
//! plus `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ppmtf::demo::DemoSpec;
use ppmtf::gibbs::{FactorizationMode, GibbsConfig, HyperPriors};
use ppmtf::pd::PdConfig;
use ppmtf::tensor::TrimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Training events CSV (`user,instant,location`).
    pub traces: Option<PathBuf>,
    /// Testing events CSV, used by `evaluate` and `attack`.
    pub test: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    /// Explicit `instant,slot` table; wins over `time_rule`.
    pub time_map: Option<PathBuf>,
    /// `identity`, `cycle:h` or `contiguous:k`.
    pub time_rule: String,
    /// Number of instants for `time_rule`; inferred from the events if unset.
    pub instants: Option<usize>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            traces: None,
            test: None,
            locations: None,
            time_map: None,
            time_rule: "identity".into(),
            instants: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimSection {
    pub lambda_i: usize,
    pub lambda_ii: usize,
    pub rmax_i: u32,
    pub rmax_ii: u32,
    pub rho_i: usize,
    pub rho_ii: usize,
}

impl Default for TrimSection {
    fn default() -> Self {
        let t = TrimConfig::default();
        Self {
            lambda_i: t.lambda_i,
            lambda_ii: t.lambda_ii,
            rmax_i: t.rmax_i,
            rmax_ii: t.rmax_ii,
            rho_i: t.rho_i,
            rho_ii: t.rho_ii,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub alpha: f64,
    pub z: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub mode: FactorizationMode,
    /// Retrain until κ is at most this value.
    pub kappa_max: Option<f64>,
    pub max_attempts: usize,
}

impl Default for GibbsSection {
    fn default() -> Self {
        let g = GibbsConfig::default();
        Self {
            alpha: g.alpha,
            z: g.z,
            iterations: g.iterations,
            burn_in: g.burn_in,
            mode: g.mode,
            kappa_max: None,
            max_attempts: 10,
        }
    }
}

/// Normal–Wishart hyperprior with `μ0 = 0` and `W0 = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub beta0: f64,
    /// Defaults to `z`.
    pub nu0: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            beta0: 2.0,
            nu0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Synthesizer {
    #[default]
    Ppmtf,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub synthesizer: Synthesizer,
    pub phi: f64,
    pub replicas: usize,
    /// First instant of each PPMTF trace.
    pub start: usize,
    /// Trace length; the full instant range if unset.
    pub length: Option<usize>,
    /// Events copied from the input trace by SGD.
    pub xi: usize,
    /// Keep only traces passing the PD test; failures go to a quarantine file.
    pub gate: bool,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            synthesizer: Synthesizer::Ppmtf,
            phi: ppmtf::synth::DEFAULT_PHI,
            replicas: 1,
            start: 0,
            length: None,
            xi: 0,
            gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdSection {
    pub k: usize,
    pub eta: f64,
    /// `|U*|`, capped at the number of training users.
    pub subset_size: usize,
}

impl Default for PdSection {
    fn default() -> Self {
        let p = PdConfig::default();
        Self {
            k: p.k,
            eta: p.eta,
            subset_size: p.subset_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub enabled: bool,
    /// Equal-width bins per axis for POI coordinates in TM-EMD.
    pub poi_bins: usize,
    /// Dump per-cluster frequencies for each column of `A`.
    pub cluster_dump: bool,
    pub cluster_fraction: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            enabled: true,
            poi_bins: 20,
            cluster_dump: false,
            cluster_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub enabled: bool,
    pub thresholds: Option<Vec<f64>>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            enabled: true,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    /// Cells sampled per user for κ; 0 scans every cell.
    pub kappa_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub users: usize,
    pub test_users: usize,
    pub width: usize,
    pub height: usize,
    pub instants: usize,
    pub slots: usize,
    pub clusters: usize,
    pub concentration: f64,
    pub missing_rate: f64,
    pub stay: f64,
    pub anchor_weight: f64,
    pub noise: f64,
    pub anchors: usize,
}

impl Default for DemoSection {
    fn default() -> Self {
        let d = DemoSpec::default();
        Self {
            users: d.users,
            test_users: d.test_users,
            width: d.width,
            height: d.height,
            instants: d.instants,
            slots: d.slots,
            clusters: d.clusters,
            concentration: d.concentration,
            missing_rate: d.missing_rate,
            stay: d.stay,
            anchor_weight: d.anchor_weight,
            noise: d.noise,
            anchors: d.anchors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub trim: TrimSection,
    pub gibbs: GibbsSection,
    pub priors: PriorSection,
    pub synthesis: SynthesisSection,
    pub pd: PdSection,
    pub evaluate: EvaluateSection,
    pub attack: AttackSection,
    pub dp: DpSection,
    pub demo: DemoSection,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `section.key=value` (or `key=value` at top level) override.
pub fn apply_override(table: &mut toml::Table, setting: &str) -> Result<(), ConfigError> {
    let (key, value) = setting
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{setting}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) || parts.len() > 2 {
        return Err(ConfigError(format!("bad override key `{key}`")));
    }
    let value = parse_value(value.trim());
    if parts.len() == 1 {
        table.insert(parts[0].into(), value);
        return Ok(());
    }
    let section = table
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match section {
        toml::Value::Table(t) => {
            t.insert(parts[1].into(), value);
            Ok(())
        }
        _ => Err(ConfigError(format!("`{}` is not a section", parts[0]))),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies the overrides and resolves relative
    /// paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.paths.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn trim_config(&self) -> TrimConfig {
        let t = &self.trim;
        TrimConfig {
            lambda_i: t.lambda_i,
            lambda_ii: t.lambda_ii,
            rmax_i: t.rmax_i,
            rmax_ii: t.rmax_ii,
            rho_i: t.rho_i,
            rho_ii: t.rho_ii,
            seed: self.seed,
        }
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        let g = &self.gibbs;
        GibbsConfig {
            alpha: g.alpha,
            z: g.z,
            iterations: g.iterations,
            burn_in: g.burn_in,
            seed: self.seed,
            mode: g.mode,
        }
    }

    pub fn priors(&self) -> HyperPriors {
        let mut p = HyperPriors::standard(self.gibbs.z);
        p.beta0 = self.priors.beta0;
        if let Some(nu) = self.priors.nu0 {
            p.nu0 = nu;
        }
        p
    }

    /// PD settings with `|U*| = min(|U|, subset_size)`.
    pub fn pd_config(&self, users: usize) -> PdConfig {
        PdConfig {
            k: self.pd.k,
            eta: self.pd.eta,
            subset_size: self.pd.subset_size.min(users).max(1),
            seed: self.seed,
        }
    }

    pub fn demo_spec(&self) -> DemoSpec {
        let d = &self.demo;
        DemoSpec {
            users: d.users,
            test_users: d.test_users,
            width: d.width,
            height: d.height,
            instants: d.instants,
            slots: d.slots,
            clusters: d.clusters,
            concentration: d.concentration,
            missing_rate: d.missing_rate,
            stay: d.stay,
            anchor_weight: d.anchor_weight,
            noise: d.noise,
            anchors: d.anchors,
            seed: self.seed,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.traces, &mut self.test, &mut self.locations, &mut self.time_map]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_reference_preset() {
        let c = RunConfig::default();
        assert_eq!(c.trim.lambda_i, 100);
        assert_eq!(c.trim.rmax_ii, 10);
        assert_eq!(c.trim.rho_i, 1000);
        assert_eq!(c.gibbs.z, 16);
        assert_eq!(c.gibbs.alpha, 200.0);
        assert_eq!(c.gibbs.iterations, 100);
        assert_eq!(c.gibbs.burn_in, 99);
        assert_eq!(c.synthesis.phi, 1e-8);
        assert_eq!(c.pd.k, 10);
        assert_eq!(c.pd.eta, 1.0);
        assert_eq!(c.pd_config(500).subset_size, 500);
        assert_eq!(c.pd_config(50_000).subset_size, 32_000);
    }

    #[test]
    fn overrides_take_typed_values() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "gibbs.alpha=0.5").unwrap();
        apply_override(&mut t, "gibbs.mode=independent").unwrap();
        apply_override(&mut t, "seed=7").unwrap();
        apply_override(&mut t, "synthesis.gate=true").unwrap();
        let c: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(c.gibbs.alpha, 0.5);
        assert_eq!(c.gibbs.mode, FactorizationMode::Independent);
        assert_eq!(c.seed, 7);
        assert!(c.synthesis.gate);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_overrides() {
        assert!(RunConfig::load(None, &["gibbs.alhpa=1".into()]).is_err());
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
        assert!(RunConfig::load(None, &["a.b.c=1".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.paths.traces = Some("t.csv".into());
        c.gibbs.kappa_max = Some(3.0);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
