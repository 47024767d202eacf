//! Runs several methods over a family of simulated datasets and
//! summarizes their scores.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{average_roc, misclassification_rate, roc_by_group, RocCurve, ROC_GRID_POINTS};
use super::{simulate, SimSpec};
use crate::de::{eb_posterior, fit_local_fdr};
use crate::emission::{estimate_sigma0, fit_plain_gmm};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::mcem::{de_posterior, expression_posterior, fit_de, fit_expression, McemConfig};
use crate::model::RegionGroup;
use crate::rng;
use crate::sampler::ChainSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The coupled model fitted by MCEM.
    Mrf,
    /// Independent two-component mixture per region (expression settings).
    Plain,
    /// Independent empirical-Bayes local fdr (DE settings).
    Eb,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mrf => "mrf",
            Method::Plain => "plain",
            Method::Eb => "eb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mrf" => Ok(Method::Mrf),
            "plain" | "gmm" => Ok(Method::Plain),
            "eb" => Ok(Method::Eb),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected mrf, plain or eb)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub mcem: McemConfig,
    pub posterior_burn_in: usize,
    pub posterior_kept: usize,
    pub runs: usize,
}

impl CompareSettings {
    pub fn new(mcem: McemConfig, posterior_burn_in: usize, posterior_kept: usize, runs: usize) -> Self {
        CompareSettings {
            mcem,
            posterior_burn_in,
            posterior_kept,
            runs,
        }
    }
}

/// Scores of one method on one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: u64,
    pub method: Method,
    pub misclassification: Option<f64>,
    /// Neocortex then non-neocortex.
    pub auc: Option<[f64; 2]>,
    /// False when an MCEM fit ended without meeting its convergence rule.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
}

/// Run-averaged ROC curve of one method in one region group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSeries {
    pub method: Method,
    pub group: RegionGroup,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub spec: SimSpec,
    pub outcomes: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
    pub roc: Vec<RocSeries>,
}

impl Comparison {
    pub fn row(&self, method: Method, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// Tab-separated `method, metric, mean, sd, runs`.
    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        out.write_record(["method", "metric", "mean", "sd", "runs"])?;
        for r in &self.summary {
            out.write_record([
                r.method.name().to_string(),
                r.metric.clone(),
                fmt_f64(r.mean),
                fmt_f64(r.sd),
                r.runs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Tab-separated averaged ROC points: `method, group, threshold, specificity, sensitivity`.
    pub fn write_points<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        out.write_record(["method", "group", "threshold", "specificity", "sensitivity"])?;
        for s in &self.roc {
            for p in &s.curve.points {
                let threshold = if p.threshold.is_finite() { fmt_f64(p.threshold) } else { "NA".into() };
                out.write_record([
                    s.method.name().to_string(),
                    s.group.name().to_string(),
                    threshold,
                    fmt_f64(p.specificity),
                    fmt_f64(p.sensitivity),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct RunResult {
    outcomes: Vec<RunOutcome>,
    curves: Vec<(Method, [RocCurve; 2])>,
}

fn run_once(spec: &SimSpec, methods: &[Method], settings: &CompareSettings, run: u64) -> Result<RunResult> {
    let sim = simulate(spec, run)?;
    let mut mcem = settings.mcem.clone();
    mcem.seed = rng::derive_seed(settings.mcem.seed, &[run]);
    let posterior = ChainSchedule::new(
        settings.posterior_burn_in,
        settings.posterior_kept,
        rng::derive_seed(settings.mcem.seed, &[run, 0x70]),
    )?
    .with_order(mcem.order);
    let mut outcomes = Vec::new();
    let mut curves = Vec::new();
    let outcome = |method, misclassification, auc, converged| RunOutcome {
        run,
        method,
        misclassification,
        auc,
        converged,
    };
    if let Some(data) = sim.expression() {
        let fit = if methods.contains(&Method::Mrf) {
            Some(fit_expression(data, &mcem)?)
        } else {
            None
        };
        for &m in methods {
            match m {
                Method::Plain => {
                    let grid = match fit.as_ref().and_then(|f| f.plain.as_ref()) {
                        Some(p) => p.grid.clone(),
                        None => fit_plain_gmm(data, estimate_sigma0(data)?)?.grid,
                    };
                    let rate = misclassification_rate(&grid, &sim.truth)?;
                    outcomes.push(outcome(m, Some(rate), None, true));
                }
                Method::Mrf => {
                    let fit = fit.as_ref().expect("fitted above");
                    let post = expression_posterior(data, &fit.phi, &fit.theta, &fit.state.grid, &posterior)?;
                    let rate = misclassification_rate(&post.classify(0.5), &sim.truth)?;
                    outcomes.push(outcome(m, Some(rate), None, fit.state.converged));
                }
                Method::Eb => {
                    return Err(Error::Config("the eb method applies to DE settings only".into()));
                }
            }
        }
    } else {
        let z = sim.zscores().expect("DE setting");
        let model = fit_local_fdr(&z.pooled())?;
        let groups = spec.groups();
        for &m in methods {
            let (null, converged) = match m {
                Method::Eb => {
                    let q = z
                        .z()
                        .iter()
                        .zip(z.mask())
                        .map(|(&v, &masked)| if masked { 1.0 } else { eb_posterior(v, &model) })
                        .collect::<Vec<_>>();
                    (q, true)
                }
                Method::Mrf => {
                    let fit = fit_de(z, &model, &groups, &mcem)?;
                    let post = de_posterior(z, &model, &fit.phi, &fit.state.grid, &posterior)?;
                    let q = post.raw().iter().map(|p| 1.0 - p).collect();
                    (q, fit.state.converged)
                }
                Method::Plain => {
                    return Err(Error::Config("the plain method applies to expression settings only".into()));
                }
            };
            let pair = roc_by_group(&null, &sim.truth, &groups)?;
            outcomes.push(outcome(m, None, Some([pair[0].auc, pair[1].auc]), converged));
            curves.push((m, pair));
        }
    }
    Ok(RunResult { outcomes, curves })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Score each method on `settings.runs` independent simulated runs.
pub fn compare_models(spec: &SimSpec, methods: &[Method], settings: &CompareSettings) -> Result<Comparison> {
    spec.validate()?;
    settings.mcem.validate()?;
    if settings.runs < 2 {
        return Err(Error::Config(format!("at least 2 runs are needed, got {}", settings.runs)));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods to compare".into()));
    }
    let results: Vec<RunResult> = (0..settings.runs as u64)
        .into_par_iter()
        .map(|run| run_once(spec, methods, settings, run))
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    let mut roc = Vec::new();
    for &m in methods {
        let of_method: Vec<&RunOutcome> = results
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|o| o.method == m)
            .collect();
        let unconverged = of_method.iter().filter(|o| !o.converged).count();
        if unconverged > 0 {
            log::warn!("{}: {unconverged} runs ended without meeting the convergence rule", m.name());
        }
        let mis: Vec<f64> = of_method.iter().filter_map(|o| o.misclassification).collect();
        if !mis.is_empty() {
            let (mean, sd) = mean_sd(&mis);
            summary.push(SummaryRow {
                method: m,
                metric: "misclassification".into(),
                mean,
                sd,
                runs: mis.len(),
            });
        }
        for (k, group) in [RegionGroup::Neocortex, RegionGroup::NonNeocortex].into_iter().enumerate() {
            let auc: Vec<f64> = of_method.iter().filter_map(|o| o.auc.map(|a| a[k])).collect();
            if auc.is_empty() {
                continue;
            }
            let (mean, sd) = mean_sd(&auc);
            summary.push(SummaryRow {
                method: m,
                metric: format!("auc-{}", group.name()),
                mean,
                sd,
                runs: auc.len(),
            });
            let curves: Vec<RocCurve> = results
                .iter()
                .flat_map(|r| r.curves.iter())
                .filter(|(cm, _)| *cm == m)
                .map(|(_, pair)| pair[k].clone())
                .collect();
            roc.push(RocSeries {
                method: m,
                group,
                curve: average_roc(&curves, ROC_GRID_POINTS)?,
            });
        }
    }
    Ok(Comparison {
        spec: spec.clone(),
        outcomes: results.into_iter().flat_map(|r| r.outcomes).collect(),
        summary,
        roc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcem::Stage;
    use crate::sim::Setting;

    fn tiny(setting: Setting) -> SimSpec {
        let mut s = SimSpec::new(setting);
        s.genes = 12;
        s.regions = 6;
        s.neocortex = 4;
        s.periods = 5;
        s.seed = 3;
        s
    }

    fn settings() -> CompareSettings {
        CompareSettings::new(McemConfig::new(vec![Stage::new(2, 5, 10)], 4), 5, 20, 2)
    }

    #[test]
    fn expression_summary_rows() {
        let c = compare_models(&tiny(Setting::Expr1), &[Method::Plain, Method::Mrf], &settings()).unwrap();
        assert_eq!(c.outcomes.len(), 4);
        let plain = c.row(Method::Plain, "misclassification").unwrap();
        assert_eq!(plain.runs, 2);
        assert!((0.0..=1.0).contains(&plain.mean));
        let mut buf = Vec::new();
        c.write_summary(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method\tmetric\tmean\tsd\truns\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn identical_methods_give_identical_rows() {
        let c = compare_models(&tiny(Setting::De1), &[Method::Eb, Method::Eb], &settings()).unwrap();
        let rows: Vec<&SummaryRow> = c.summary.iter().filter(|r| r.metric == "auc-neocortex").collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn de_points_file() {
        let c = compare_models(&tiny(Setting::De3), &[Method::Eb, Method::Mrf], &settings()).unwrap();
        assert_eq!(c.roc.len(), 4);
        let mut buf = Vec::new();
        c.write_points(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * ROC_GRID_POINTS);
    }

    #[test]
    fn misuse_is_rejected() {
        let s = settings();
        assert!(compare_models(&tiny(Setting::Expr1), &[Method::Eb], &s).is_err());
        let mut one = s.clone();
        one.runs = 1;
        assert!(compare_models(&tiny(Setting::Expr1), &[Method::Plain], &one).is_err());
    }
}
