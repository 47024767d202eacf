//! Acceptance suite. Runs every criterion at its stated size and tolerance
//! and prints one `PASS`/`FAIL` line per criterion; the process fails if any
//! criterion does.
//!
//! Pass criterion names (`AC1`, `AC4`, ...) as arguments to run a subset.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use stmrf::de::{build_zscore_grid, eb_posterior, fdr_threshold, fit_local_fdr};
use stmrf::emission::ExpressionTensor;
use stmrf::mcem::{fit_de, fit_expression, McemConfig, Stage};
use stmrf::model::pseudo::{log_pseudolikelihood, PlStats};
use stmrf::model::{conditional_prob, joint_log_potential, Coefs, MAX_DIM};
use stmrf::sampler::{posterior_marginals, ChainSchedule, Target};
use stmrf::sim::{compare_models, simulate, CompareSettings, Comparison, Method, Setting, SimSpec};
use stmrf::{DeMrfParams, LatentGrid, LatticeShape, MrfParams, Prior, RegionGroup};

/// Outcome of one criterion: a verdict plus the lines explaining it.
struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            pass: true,
            summary: String::new(),
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "MISS" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }
}

type Criterion = (&'static str, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    ("AC1", "expr-1 misclassification against the reported table", ac1),
    ("AC2", "expr-2 misclassification against the reported table", ac2),
    ("AC3", "DE settings: MRF AUC above empirical Bayes", ac3),
    ("AC4", "exact enumeration oracle", ac4),
    ("AC5", "pseudolikelihood gradients against finite differences", ac5),
    ("AC6", "parameter recovery", ac6),
    ("AC7", "z-score and local fdr calibration", ac7),
    ("AC8", "posterior FDR selection", ac8),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(id, ..)| filters.is_empty() || filters.iter().any(|f| f.eq_ignore_ascii_case(id)))
        .collect();
    let mut lines = Vec::new();
    for (id, title, run) in selected {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict {
                pass: false,
                summary: format!("panicked: {msg}"),
                details: Vec::new(),
            }
        });
        println!("--- {id}: {title} ({:.0} s)", start.elapsed().as_secs_f64());
        for d in &verdict.details {
            println!("    {d}");
        }
        let line = format!(
            "{id} {} {title}: {}",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.summary
        );
        println!("{line}");
        lines.push((verdict.pass, line));
    }
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("{line}");
    }
    if lines.iter().any(|(pass, _)| !pass) {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Simulation studies

fn mcem(stages: &str, seed: u64) -> McemConfig {
    McemConfig::new(Stage::parse_list(stages).unwrap(), seed)
}

/// Reduced schedule for the simulation studies.
fn study_settings(runs: usize) -> CompareSettings {
    CompareSettings::new(mcem("5x200/600", 20_240_101), 200, 1000, runs)
}

fn misclassification(cmp: &Comparison, method: Method) -> (f64, f64) {
    let row = cmp.row(method, "misclassification").expect("row present");
    (row.mean, row.sd)
}

/// Reported (mean, sd) of the plain mixture and the MRF per `mu2`.
struct TableRow {
    mu2: f64,
    plain: (f64, f64),
    mrf: (f64, f64),
}

fn table_study(setting: Setting, rows: &[TableRow], v: &mut Verdict) {
    let mut beats = Vec::new();
    for row in rows {
        let mut spec = SimSpec::new(setting);
        spec.mixture.mu2 = row.mu2;
        spec.runs = 100;
        let cmp = compare_models(&spec, &[Method::Plain, Method::Mrf], &study_settings(spec.runs)).unwrap();
        for (method, (target, sd)) in [(Method::Plain, row.plain), (Method::Mrf, row.mrf)] {
            let (mean, run_sd) = misclassification(&cmp, method);
            v.check(
                (mean - target).abs() <= 3.0 * sd,
                format!(
                    "mu2 = {}: {:<5} mean {mean:.4} (run sd {run_sd:.4}) target {target:.3} +/- {:.3}",
                    row.mu2,
                    method.name(),
                    3.0 * sd
                ),
            );
        }
        let per_run = |m: Method| -> Vec<f64> {
            let mut v: Vec<_> = cmp.outcomes.iter().filter(|o| o.method == m).collect();
            v.sort_by_key(|o| o.run);
            v.iter().map(|o| o.misclassification.unwrap()).collect()
        };
        let wins = per_run(Method::Mrf)
            .iter()
            .zip(per_run(Method::Plain))
            .filter(|(m, p)| **m < *p)
            .count();
        beats.push((row.mu2, wins));
    }
    for (mu2, wins) in beats {
        v.note(format!("mu2 = {mu2}: MRF below the plain mixture in {wins} of 100 runs"));
    }
}

fn ac1() -> Verdict {
    let mut v = Verdict::new();
    let rows = [
        TableRow {
            mu2: 5.0,
            plain: (0.421, 0.025),
            mrf: (0.093, 0.008),
        },
        TableRow {
            mu2: 6.5,
            plain: (0.203, 0.006),
            mrf: (0.055, 0.004),
        },
        TableRow {
            mu2: 8.0,
            plain: (0.067, 0.002),
            mrf: (0.020, 0.001),
        },
    ];
    table_study(Setting::Expr1, &rows, &mut v);
    v.summary = "6 means within 3 reported sd over 100 runs each".into();
    v
}

fn ac2() -> Verdict {
    let mut v = Verdict::new();
    let rows = [
        TableRow {
            mu2: 5.0,
            plain: (0.426, 0.012),
            mrf: (0.131, 0.004),
        },
        TableRow {
            mu2: 8.0,
            plain: (0.096, 0.004),
            mrf: (0.037, 0.002),
        },
    ];
    table_study(Setting::Expr2, &rows, &mut v);
    v.summary = "4 means within 3 reported sd over 100 runs each".into();
    v
}

fn ac3() -> Verdict {
    let mut v = Verdict::new();
    for setting in [Setting::De1, Setting::De2, Setting::De3] {
        let mut spec = SimSpec::new(setting);
        spec.runs = 20;
        let cmp = compare_models(&spec, &[Method::Eb, Method::Mrf], &study_settings(spec.runs)).unwrap();
        let auc = |m: Method, g: RegionGroup| cmp.row(m, &format!("auc-{}", g.name())).unwrap().mean;
        let mut margins = [0.0; 2];
        for (k, g) in [RegionGroup::Neocortex, RegionGroup::NonNeocortex].into_iter().enumerate() {
            let (eb, mrf) = (auc(Method::Eb, g), auc(Method::Mrf, g));
            margins[k] = mrf - eb;
            v.check(
                mrf > eb,
                format!("{setting} {:<13} AUC mrf {mrf:.4} eb {eb:.4}", g.name()),
            );
        }
        if setting != Setting::De2 {
            v.check(
                margins[0] >= margins[1],
                format!(
                    "{setting} neocortex margin {:.4} >= non-neocortex margin {:.4}",
                    margins[0], margins[1]
                ),
            );
        } else {
            v.note(format!("{setting} margins {:.4} / {:.4} (not ordered by the criterion)", margins[0], margins[1]));
        }
    }
    v.summary = "3 settings x 2 groups over 20 runs each".into();
    v
}

// ---------------------------------------------------------------------------
// Enumeration oracle

/// Every configuration of one gene block, as grids with the given mask.
fn configurations(shape: LatticeShape, mask: &Option<Vec<bool>>) -> Vec<LatentGrid> {
    let n = shape.cells();
    let live: Vec<usize> = (0..n).filter(|&i| mask.as_ref().is_none_or(|m| !m[i])).collect();
    (0..1u32 << live.len())
        .map(|bits| {
            let mut states = vec![0u8; n];
            for (k, &i) in live.iter().enumerate() {
                states[i] = ((bits >> k) & 1) as u8;
            }
            let g = LatentGrid::from_states(shape, states).unwrap();
            match mask {
                Some(m) => g.with_mask(m.clone()).unwrap(),
                None => g,
            }
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Largest gap between the closed-form conditional and the ratio of
/// normalized enumerated joint probabilities, over every configuration and
/// every unmasked cell.
fn conditional_gap<P: Prior>(prior: &P, shape: LatticeShape, mask: &Option<Vec<bool>>) -> f64 {
    let configs = configurations(shape, mask);
    let logp: Vec<f64> = configs.iter().map(|g| joint_log_potential(prior, g, 0)).collect();
    let log_z = log_sum_exp(&logp);
    let index = |g: &LatentGrid| -> usize {
        configs.iter().position(|c| c.states() == g.states()).unwrap()
    };
    let mut worst: f64 = 0.0;
    for g in &configs {
        for i in 0..shape.cells() {
            if g.is_masked_index(i) {
                continue;
            }
            let cell = shape.cell_at(i);
            let mut one = g.clone();
            one.set(cell, true);
            let mut zero = g.clone();
            zero.set(cell, false);
            let p1 = (logp[index(&one)] - log_z).exp();
            let p0 = (logp[index(&zero)] - log_z).exp();
            let ratio = p1 / (p1 + p0);
            let closed = conditional_prob(prior.conditional_logit(g, cell).unwrap());
            worst = worst.max((closed - ratio).abs());
        }
    }
    worst
}

/// Largest marginal gap between a Gibbs chain and the enumerated posterior
/// with per-cell evidence `log_odds`.
fn posterior_gap<P: Prior>(prior: &P, shape: LatticeShape, mask: &Option<Vec<bool>>, log_odds: &[f64], seed: u64) -> f64 {
    let configs = configurations(shape, mask);
    let logp: Vec<f64> = configs
        .iter()
        .map(|g| {
            let evidence: f64 = (0..shape.cells())
                .filter(|&i| !g.is_masked_index(i) && g.states()[i] == 1)
                .map(|i| log_odds[i])
                .sum();
            joint_log_potential(prior, g, 0) + evidence
        })
        .collect();
    let log_z = log_sum_exp(&logp);
    let mut exact = vec![0.0; shape.cells()];
    for (g, lp) in configs.iter().zip(&logp) {
        let w = (lp - log_z).exp();
        for (i, e) in exact.iter_mut().enumerate() {
            *e += w * g.states()[i] as f64;
        }
    }
    let init = configs[0].clone();
    let schedule = ChainSchedule::new(1000, 100_000, seed).unwrap();
    let post = posterior_marginals(&init, &Target::new(prior, log_odds), &schedule).unwrap();
    (0..shape.cells())
        .filter_map(|i| post.prob_one_at(i).map(|p| (p - exact[i]).abs()))
        .fold(0.0, f64::max)
}

fn ac4() -> Verdict {
    let mut v = Verdict::new();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut conditional_worst: f64 = 0.0;
    let mut posterior_worst: f64 = 0.0;
    // (regions, times, neocortex regions, masked cells)
    let layouts: [(usize, usize, usize, &[usize]); 6] = [
        (3, 4, 2, &[]),
        (4, 3, 2, &[]),
        (2, 6, 1, &[]),
        (6, 2, 3, &[]),
        (3, 5, 2, &[2, 7, 14]),
        (4, 4, 3, &[0, 5, 10, 15]),
    ];
    for (case, &(b, t, neo, masked)) in layouts.iter().enumerate() {
        let shape = LatticeShape::new(b, 1, t).unwrap();
        let mask = (!masked.is_empty()).then(|| {
            let mut m = vec![false; shape.cells()];
            for &i in masked {
                m[i] = true;
            }
            m
        });
        let lo: Vec<f64> = (0..shape.cells()).map(|_| r.random_range(-1.5..1.5)).collect();
        let expr = MrfParams::new(r.random_range(-1.0..1.0), r.random_range(-0.5..0.8), r.random_range(-0.5..1.5));
        let de = DeMrfParams::new(
            r.random_range(-1.0..1.0),
            r.random_range(-0.5..0.8),
            r.random_range(-0.5..0.8),
            r.random_range(-0.5..0.5),
            r.random_range(-0.5..1.2),
            RegionGroup::split(b, neo),
        );
        conditional_worst = conditional_worst
            .max(conditional_gap(&expr, shape, &mask))
            .max(conditional_gap(&de, shape, &mask));
        let pe = posterior_gap(&expr, shape, &mask, &lo, 100 + case as u64);
        let pd = posterior_gap(&de, shape, &mask, &lo, 200 + case as u64);
        v.note(format!("{b} x {t} lattice, {} masked: marginal gaps {pe:.4} / {pd:.4}", masked.len()));
        posterior_worst = posterior_worst.max(pe).max(pd);
    }
    v.check(
        conditional_worst <= 1e-12,
        format!("conditionals vs enumerated ratios: worst {conditional_worst:.2e} (tolerance 1e-12)"),
    );
    v.check(
        posterior_worst <= 0.01,
        format!("Gibbs marginals vs enumerated posterior, 100k samples: worst {posterior_worst:.4} (tolerance 0.01)"),
    );
    v.summary = format!("conditional gap {conditional_worst:.1e}, posterior gap {posterior_worst:.4}");
    v
}

// ---------------------------------------------------------------------------
// Gradients

fn random_grid(r: &mut ChaCha8Rng, shape: LatticeShape, masked: bool) -> LatentGrid {
    let p = r.random_range(0.2..0.8);
    let states = (0..shape.cells()).map(|_| r.random_bool(p) as u8).collect();
    let g = LatentGrid::from_states(shape, states).unwrap();
    if masked {
        let m = (0..shape.cells()).map(|_| r.random_bool(0.15)).collect();
        g.with_mask(m).unwrap()
    } else {
        g
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Worst relative error of the cell-wise and histogram gradients against
/// central differences of the corresponding values.
fn gradient_error<P: Prior>(prior: &P, grid: &LatentGrid) -> f64 {
    let dim = prior.dim();
    let h = 1e-5;
    let base = prior.coefs();
    let (_, grad) = log_pseudolikelihood(prior, grid);
    let stats = PlStats::from_grid(prior, grid);
    let eval = stats.evaluate(dim, &base);
    let mut worst: f64 = 0.0;
    for k in 0..dim {
        let shifted = |d: f64| -> Coefs {
            let mut c = base;
            c[k] += d;
            c
        };
        let (up, down) = (shifted(h), shifted(-h));
        let direct = (log_pseudolikelihood(&prior.with_coefs(&up), grid).0
            - log_pseudolikelihood(&prior.with_coefs(&down), grid).0)
            / (2.0 * h);
        let hist = (stats.value(dim, &up) - stats.value(dim, &down)) / (2.0 * h);
        worst = worst
            .max(relative_error(grad[k], direct))
            .max(relative_error(eval.gradient[k], hist));
    }
    worst
}

fn ac5() -> Verdict {
    let mut v = Verdict::new();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 2];
    for _ in 0..100 {
        let shape = LatticeShape::new(r.random_range(2..8), r.random_range(1..4), r.random_range(2..8)).unwrap();
        let expr = MrfParams::new(r.random_range(-2.0..2.0), r.random_range(-1.0..1.0), r.random_range(-2.0..2.0));
        let g = random_grid(&mut r, shape, false);
        worst[0] = worst[0].max(gradient_error(&expr, &g));

        let neo = r.random_range(0..=shape.regions);
        let mut coefs = [0.0; MAX_DIM];
        for c in &mut coefs {
            *c = r.random_range(-2.0..2.0);
        }
        let de = DeMrfParams::zero(RegionGroup::split(shape.regions, neo)).with_coefs(&coefs);
        let g = random_grid(&mut r, shape, true);
        worst[1] = worst[1].max(gradient_error(&de, &g));
    }
    for (name, w) in ["expression", "DE"].iter().zip(worst) {
        v.check(w <= 1e-6, format!("{name} prior: worst relative error {w:.2e} over 100 instances"));
    }
    v.summary = format!("worst relative error {:.1e} (tolerance 1e-6)", worst[0].max(worst[1]));
    v
}

// ---------------------------------------------------------------------------
// Recovery

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const RECOVERY_RUNS: u64 = 50;
/// The expression chain starts from noisy mixture calls and needs a few
/// dozen iterations for the temporal coupling to climb; the DE chain starts
/// much closer to its optimum.
const EXPRESSION_RECOVERY_STAGES: &str = "40x200/600";
const DE_RECOVERY_STAGES: &str = "10x200/600";
/// Sweeps used to draw the latent truth: long enough for the lattice
/// chain to forget its random start.
const EQUILIBRIUM_SWEEPS: usize = 200;

fn recover_expression(phi: MrfParams, seed: u64) -> [f64; 3] {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.phi = phi;
    spec.seed = seed;
    spec.gibbs_rounds = EQUILIBRIUM_SWEEPS;
    let est: Vec<[f64; 3]> = (0..RECOVERY_RUNS)
        .map(|run| {
            let sim = simulate(&spec, run).unwrap();
            let fit = fit_expression(sim.expression().unwrap(), &mcem(EXPRESSION_RECOVERY_STAGES, seed ^ run)).unwrap();
            [fit.phi.gamma, fit.phi.beta_spatial, fit.phi.beta_temporal]
        })
        .collect();
    [0, 1, 2].map(|k| mean(&est.iter().map(|e| e[k]).collect::<Vec<_>>()))
}

fn recover_de(phi: stmrf::sim::DeParams, seed: u64) -> [f64; 5] {
    let mut spec = SimSpec::new(Setting::De1);
    spec.phi_de = phi;
    spec.seed = seed;
    spec.gibbs_rounds = EQUILIBRIUM_SWEEPS;
    let groups = spec.groups();
    let est: Vec<[f64; 5]> = (0..RECOVERY_RUNS)
        .map(|run| {
            let sim = simulate(&spec, run).unwrap();
            let z = sim.zscores().unwrap();
            let model = fit_local_fdr(&z.pooled()).unwrap();
            let fit = fit_de(z, &model, &groups, &mcem(DE_RECOVERY_STAGES, seed ^ run)).unwrap();
            let c = fit.phi.coefs();
            [c[0], c[1], c[2], c[3], c[4]]
        })
        .collect();
    [0, 1, 2, 3, 4].map(|k| mean(&est.iter().map(|e| e[k]).collect::<Vec<_>>()))
}

fn ac6() -> Verdict {
    let mut v = Verdict::new();
    let truth = MrfParams::new(0.08, 0.20, 1.5);
    let est = recover_expression(truth, 61);
    for (name, t, e) in [
        ("gamma", truth.gamma, est[0]),
        ("beta_spatial", truth.beta_spatial, est[1]),
        ("beta_temporal", truth.beta_temporal, est[2]),
    ] {
        v.check((e - t).abs() <= 0.15, format!("expression {name:<14} mean {e:.4} truth {t}"));
    }

    let phi_de = SimSpec::new(Setting::De1).phi_de;
    let est = recover_de(phi_de, 62);
    let names = ["gamma_de", "beta_cc", "beta_nn", "beta_cn", "beta_t"];
    let truth_de = [phi_de.gamma_de, phi_de.beta_cc, phi_de.beta_nn, phi_de.beta_cn, phi_de.beta_t];
    for k in 0..5 {
        v.check(
            (est[k] - truth_de[k]).abs() <= 0.15,
            format!("DE {:<14} mean {:.4} truth {}", names[k], est[k], truth_de[k]),
        );
    }

    let est = recover_expression(MrfParams::new(0.08, 0.0, 0.0), 63);
    for (name, e) in [("beta_spatial", est[1]), ("beta_temporal", est[2])] {
        v.check(e.abs() <= 0.05, format!("zero-coupling expression {name:<14} mean {e:.4}"));
    }
    let mut zero_de = phi_de;
    zero_de.beta_cc = 0.0;
    zero_de.beta_nn = 0.0;
    zero_de.beta_cn = 0.0;
    zero_de.beta_t = 0.0;
    let est = recover_de(zero_de, 64);
    for k in 1..5 {
        v.check(est[k].abs() <= 0.05, format!("zero-coupling DE {:<14} mean {:.4}", names[k], est[k]));
    }
    v.summary = format!("means over {RECOVERY_RUNS} runs per model");
    v
}

// ---------------------------------------------------------------------------
// Calibration

/// Asymptotic Kolmogorov tail probability with the usual small-sample
/// correction of the statistic.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn ks_statistic(sample: &mut [f64]) -> f64 {
    let n = sample.len() as f64;
    let std = StatNormal::new(0.0, 1.0).unwrap();
    sample.sort_by(f64::total_cmp);
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn ac7() -> Verdict {
    let mut v = Verdict::new();
    let mut r = ChaCha8Rng::seed_from_u64(7);

    // Null expression: every gene keeps one mean per region over time, with
    // unequal replicate counts across periods.
    let shape = LatticeShape::new(16, 57, 12).unwrap();
    let replicates: Vec<usize> = (0..16 * 12).map(|_| r.random_range(2..=4)).collect();
    let mut values = Vec::new();
    for _ in 0..shape.genes {
        for b in 0..16 {
            let level = r.random_range(3.0..10.0);
            let noise = Normal::new(0.0, r.random_range(0.2..1.0)).unwrap();
            for t in 0..12 {
                for _ in 0..replicates[b * 12 + t] {
                    values.push(level + noise.sample(&mut r));
                }
            }
        }
    }
    let data = ExpressionTensor::new(shape, replicates, values).unwrap();
    let expressed = LatentGrid::from_states(shape, vec![1; shape.cells()]).unwrap();
    let (z, _) = build_zscore_grid(&data, &expressed).unwrap();
    let mut pooled: Vec<f64> = z.pooled();
    pooled.truncate(10_000);
    let n = pooled.len();
    let d = ks_statistic(&mut pooled);
    let p = ks_p_value(d, n);
    v.check(p > 0.01, format!("null z-scores, n = {n}: KS D = {d:.5}, p = {p:.3}"));

    let normal = Normal::new(0.0, 1.0).unwrap();
    let sample: Vec<f64> = (0..50_000)
        .map(|_| {
            let e = normal.sample(&mut r);
            if r.random_bool(0.2) {
                3.0 + e
            } else {
                e
            }
        })
        .collect();
    let model = fit_local_fdr(&sample).unwrap();
    let phi = |x: f64| (-0.5 * x * x).exp();
    let mut worst: (f64, f64) = (0.0, 0.0);
    for k in 0..=200 {
        let x = -4.0 + 0.05 * k as f64;
        let oracle = 0.8 * phi(x) / (0.8 * phi(x) + 0.2 * phi(x - 3.0));
        let err = (eb_posterior(x, &model) - oracle).abs();
        if err > worst.0 {
            worst = (err, x);
        }
    }
    v.check(
        worst.0 <= 0.02,
        format!(
            "local fdr vs oracle on [-4, 6], n = 50000: worst {:.4} at z = {:.2} (tolerance 0.02)",
            worst.0, worst.1
        ),
    );
    v.summary = format!("KS p = {p:.3}, local fdr worst error {:.4}", worst.0);
    v
}

// ---------------------------------------------------------------------------
// FDR

fn ac8() -> Verdict {
    let mut v = Verdict::new();
    let s = fdr_threshold(&[0.01, 0.04, 0.20], 0.05);
    v.check(
        s.rejected == vec![0, 1] && s.cutoff == Some(0.04) && s.mean_q == 0.025,
        format!("q = (0.01, 0.04, 0.20), alpha 0.05: k = {}, mean q {}", s.rejected.len(), s.mean_q),
    );

    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut wrong_k = 0;
    let cases = 5000;
    for _ in 0..cases {
        let n = r.random_range(0..200);
        let skew = r.random_range(0.3..4.0);
        let q: Vec<f64> = (0..n).map(|_| r.random::<f64>().powf(skew)).collect();
        let alpha = r.random_range(0.001..0.5);
        let sel = fdr_threshold(&q, alpha);
        if !sel.rejected.is_empty() {
            let m = sel.rejected.iter().map(|&i| q[i]).sum::<f64>() / sel.rejected.len() as f64;
            if m > alpha + 1e-15 {
                violations += 1;
            }
        }
        let mut sorted = q.clone();
        sorted.sort_by(f64::total_cmp);
        let mut sum = 0.0;
        let mut k = 0;
        for (i, x) in sorted.iter().enumerate() {
            sum += x;
            if sum / (i + 1) as f64 <= alpha {
                k = i + 1;
            }
        }
        if k != sel.rejected.len() {
            wrong_k += 1;
        }
    }
    v.check(violations == 0, format!("mean q above alpha in {violations} of {cases} random rejection sets"));
    v.check(wrong_k == 0, format!("k differs from brute force in {wrong_k} of {cases} cases"));
    v.summary = "hand example and random rejection sets".into();
    v
}
