//! Run configuration: a JSON file overlaid by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stmrf::mcem::{default_stages, McemConfig, Stage};
use stmrf::sampler::SweepOrder;
use stmrf::sim::{Setting, SimSpec};
use stmrf::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub stages: Vec<Stage>,
    /// Target posterior FDR for DE calls.
    pub alpha: f64,
    /// Posterior probability at which a cell is called expressed.
    pub cutoff: f64,
    pub posterior_burn_in: usize,
    pub posterior_kept: usize,
    pub optimizer_tol: f64,
    pub convergence_tol: f64,
    pub stable_iterations: usize,
    pub bound: f64,
    pub freeze_couplings: bool,
    pub order: SweepOrder,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = McemConfig::new(default_stages(), 1);
        RunConfig {
            seed: m.seed,
            stages: m.stages,
            alpha: 0.05,
            cutoff: 0.5,
            posterior_burn_in: 1000,
            posterior_kept: 5000,
            optimizer_tol: m.optimizer_tol,
            convergence_tol: m.convergence_tol,
            stable_iterations: m.stable_iterations,
            bound: m.bound,
            freeze_couplings: m.freeze_couplings,
            order: m.order,
            threads: None,
        }
    }
}

/// Flags shared by every subcommand that overlay the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stages: Option<String>,
    pub alpha: Option<f64>,
    pub cutoff: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => stmrf::io::read_json(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(s) = &flags.stages {
            cfg.stages = Stage::parse_list(s)?;
        }
        if let Some(a) = flags.alpha {
            cfg.alpha = a;
        }
        if let Some(c) = flags.cutoff {
            cfg.cutoff = c;
        }
        if flags.threads.is_some() {
            cfg.threads = flags.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::Config(format!("cutoff must lie in [0, 1], got {}", self.cutoff)));
        }
        if self.posterior_kept == 0 {
            return Err(Error::Config("posterior_kept must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.mcem().validate()
    }

    pub fn mcem(&self) -> McemConfig {
        McemConfig {
            stages: self.stages.clone(),
            seed: self.seed,
            optimizer_tol: self.optimizer_tol,
            bound: self.bound,
            convergence_tol: self.convergence_tol,
            stable_iterations: self.stable_iterations,
            freeze_couplings: self.freeze_couplings,
            order: self.order,
        }
    }
}

/// Defaults for `setting` with the keys of an optional JSON file laid over
/// them, so a file only needs the fields it changes.
pub fn sim_spec(setting: Option<Setting>, path: Option<&Path>) -> Result<SimSpec> {
    let overlay: serde_json::Map<String, serde_json::Value> = match path {
        Some(p) => stmrf::io::read_json(p)?,
        None => Default::default(),
    };
    let setting = match (setting, overlay.get("setting")) {
        (Some(s), _) => s,
        (None, Some(v)) => serde_json::from_value(v.clone())?,
        (None, None) => return Err(Error::Config("a simulation setting is required (--setting)".into())),
    };
    let mut base = serde_json::to_value(SimSpec::new(setting))?;
    let obj = base.as_object_mut().expect("spec serializes to an object");
    for (k, v) in overlay {
        if !obj.contains_key(&k) {
            return Err(Error::Config(format!("unknown simulation field `{k}`")));
        }
        obj.insert(k, v);
    }
    obj.insert("setting".into(), serde_json::to_value(setting)?);
    let spec: SimSpec = serde_json::from_value(base)?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 9, "alpha": 0.1, "posterior_kept": 50}"#).unwrap();
        let flags = Overrides {
            seed: Some(3),
            stages: Some("2x10/30".into()),
            ..Default::default()
        };
        let cfg = RunConfig::load(Some(&p), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.alpha, cfg.posterior_kept), (3, 0.1, 50));
        assert_eq!(cfg.stages, vec![Stage::new(2, 10, 20)]);
    }

    #[test]
    fn bad_values_rejected() {
        let flags = Overrides {
            alpha: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(RunConfig::load(None, &flags), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sed": 9}"#).unwrap();
        assert!(RunConfig::load(Some(&p), &Overrides::default()).is_err());
    }

    #[test]
    fn spec_overlay_keeps_setting_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, r#"{"genes": 7, "mixture": {"mu1": 4.5, "sigma1": 0.75, "mu2": 5.0, "sigma2": 1.5, "sigma0_sq": 0.25}}"#)
            .unwrap();
        let spec = sim_spec(Some(Setting::De1), Some(&p)).unwrap();
        assert_eq!((spec.genes, spec.periods), (7, 12));
        assert_eq!(spec.mixture.mu2, 5.0);
        std::fs::write(&p, r#"{"gens": 7}"#).unwrap();
        assert!(sim_spec(Some(Setting::De1), Some(&p)).is_err());
    }
}
