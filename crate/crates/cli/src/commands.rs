//! Subcommand implementations. Each writes its artifacts plus a
//! `manifest.json` into the output directory.

use std::fs;
use std::path::Path;

use serde_json::json;
use stmrf::de::{build_zscore_grid, eb_posterior, fdr_threshold, fit_local_fdr, gene_set_enrichment, MaskReason};
use stmrf::emission::{ExpressionTensor, GmmEmissionParams};
use stmrf::io::{self, DeContext, FitCheckpoint, LatticeNames, Metadata, RegionMeta, RunManifest};
use stmrf::mcem::{
    de_posterior, expression_posterior, fit_de_with, fit_expression_with, FittedParams, McemConfig, McemState,
};
use stmrf::sampler::ChainSchedule;
use stmrf::sim::{compare_models, simulate, CompareSettings, Comparison, Method, Observations, SimSpec};
use stmrf::{rng, DeMrfParams, Error, LatentGrid, MrfParams, Result};

use crate::config::{sim_spec, RunConfig};
use crate::{Checkpointing, Command, Common};

/// Stream label of the final posterior chain, distinct from every MCEM
/// iteration index.
const POSTERIOR_STREAM: u64 = 0x70;

pub fn run(command: Command, threads: Option<usize>) -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match command {
        Command::FitExpression {
            input,
            metadata,
            out,
            common,
            ckpt,
        } => {
            let cfg = setup(&common, threads)?;
            let data = io::load_dataset(&input, &metadata)?;
            let mut manifest = manifest("fit-expression", args, &cfg)?;
            manifest.add_input(&input)?;
            manifest.add_input(&metadata)?;
            let resume = match &ckpt.resume {
                Some(p) => {
                    manifest.add_input(p)?;
                    Some(load_fit(p, false)?)
                }
                None => None,
            };
            expression_flow(&data, &cfg, resume, &ckpt, &out, manifest)
        }
        Command::FitDe {
            input,
            zscores,
            metadata,
            expressed,
            out,
            common,
            ckpt,
        } => {
            let cfg = setup(&common, threads)?;
            let mut manifest = manifest("fit-de", args, &cfg)?;
            manifest.add_input(&metadata)?;
            let resume = match &ckpt.resume {
                Some(p) => {
                    manifest.add_input(p)?;
                    Some(load_fit(p, true)?)
                }
                None => None,
            };
            let (ctx, names) = match &resume {
                Some(c) => (c.de.clone().expect("checked by load_fit"), c.names.clone()),
                None => {
                    for p in [&input, &zscores, &expressed].into_iter().flatten() {
                        manifest.add_input(p)?;
                    }
                    de_context(input.as_deref(), zscores.as_deref(), &metadata, expressed.as_deref())?
                }
            };
            de_flow(ctx, names, &cfg, resume, &ckpt, &out, manifest)
        }
        Command::Posterior {
            resume,
            input,
            metadata,
            out,
            checkpoint,
            common,
        } => {
            let cfg = setup(&common, threads)?;
            let mut manifest = manifest("posterior", args, &cfg)?;
            manifest.add_input(&resume)?;
            let ck = load_fit(&resume, false)?;
            let ckpt = Checkpointing {
                checkpoint,
                resume: Some(resume),
                stop_after: None,
            };
            match ck.de.clone() {
                Some(ctx) => {
                    let names = ck.names.clone();
                    de_flow(ctx, names, &cfg, Some(ck), &ckpt, &out, manifest)
                }
                None => {
                    let (Some(input), Some(metadata)) = (input, metadata) else {
                        return Err(Error::Config(
                            "an expression checkpoint needs --input and --metadata".into(),
                        ));
                    };
                    manifest.add_input(&input)?;
                    manifest.add_input(&metadata)?;
                    let data = io::load_dataset(&input, &metadata)?;
                    expression_flow(&data, &cfg, Some(ck), &ckpt, &out, manifest)
                }
            }
        }
        Command::Fdr {
            input,
            column,
            out,
            common,
        } => {
            let cfg = setup(&common, threads)?;
            fdr(&input, &column, &cfg, out.as_deref(), args)
        }
        Command::Simulate {
            setting,
            spec,
            seed,
            run,
            out,
        } => {
            init_threads(threads)?;
            let mut spec = sim_spec(setting, spec.as_deref())?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            simulate_cmd(&spec, run, &out, args)
        }
        Command::Compare {
            setting,
            spec,
            runs,
            methods,
            out,
            common,
        } => {
            let cfg = setup(&common, threads)?;
            let mut spec = sim_spec(setting, spec.as_deref())?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            spec.runs = runs;
            compare_cmd(&spec, methods.as_deref(), &cfg, &out, args)
        }
        Command::Enrich {
            input,
            column,
            set,
            rate,
            out,
        } => {
            init_threads(threads)?;
            enrich(&input, &column, &set, rate, out.as_deref(), args)
        }
    }
}

fn setup(common: &Common, threads: Option<usize>) -> Result<RunConfig> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides(threads))?;
    init_threads(cfg.threads)?;
    Ok(cfg)
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn manifest(command: &str, args: Vec<String>, cfg: &RunConfig) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, args, serde_json::to_value(cfg)?);
    m.seed = Some(cfg.seed);
    Ok(m)
}

fn load_fit(path: &Path, want_de: bool) -> Result<FitCheckpoint> {
    let ck: FitCheckpoint = io::load_checkpoint(path)?;
    match (&ck.state.params, ck.de.is_some()) {
        (FittedParams::Expression { .. }, false) | (FittedParams::De { .. }, true) => {}
        _ => return Err(Error::Checkpoint(format!("{}: inconsistent checkpoint contents", path.display()))),
    }
    if want_de && ck.de.is_none() {
        return Err(Error::Checkpoint(format!("{} holds an expression fit", path.display())));
    }
    Ok(ck)
}

/// The configuration a run continues with: a checkpoint's own schedule and
/// seed win over the current flags.
fn mcem_for(cfg: &RunConfig, resume: Option<&FitCheckpoint>) -> McemConfig {
    match resume {
        Some(ck) => {
            if ck.config != cfg.mcem() {
                log::info!("continuing with the MCEM settings stored in the checkpoint");
            }
            ck.config.clone()
        }
        None => cfg.mcem(),
    }
}

/// Checkpoint after each iteration and stop early on request.
fn checkpoint_hook<'a>(
    ckpt: &'a Checkpointing,
    mcem: &'a McemConfig,
    names: &'a LatticeNames,
    de: Option<&'a DeContext>,
) -> Result<impl FnMut(&McemState) -> Result<()> + 'a> {
    if ckpt.stop_after.is_some() && ckpt.checkpoint.is_none() {
        return Err(Error::Config("--stop-after needs --checkpoint to resume from".into()));
    }
    Ok(move |state: &McemState| {
        if let Some(p) = &ckpt.checkpoint {
            io::save_checkpoint(
                p,
                &FitCheckpoint {
                    config: mcem.clone(),
                    state: state.clone(),
                    names: names.clone(),
                    de: de.cloned(),
                },
            )?;
        }
        match ckpt.stop_after {
            Some(n) if state.completed() >= n && !state.finished => Err(Error::Interrupted(state.completed())),
            _ => Ok(()),
        }
    })
}

/// `Ok(None)` when the run was stopped on request.
fn stopped<T>(result: Result<T>, ckpt: &Checkpointing) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::Interrupted(n)) if ckpt.stop_after.is_some() => {
            eprintln!(
                "stopped after iteration {n}; continue with --resume {}",
                ckpt.checkpoint.as_deref().unwrap_or(Path::new("")).display()
            );
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn posterior_schedule(cfg: &RunConfig, mcem: &McemConfig) -> Result<ChainSchedule> {
    Ok(ChainSchedule::new(
        cfg.posterior_burn_in,
        cfg.posterior_kept,
        rng::derive_seed(mcem.seed, &[POSTERIOR_STREAM]),
    )?
    .with_order(mcem.order))
}

fn expression_flow(
    data: &ExpressionTensor,
    cfg: &RunConfig,
    resume: Option<FitCheckpoint>,
    ckpt: &Checkpointing,
    out: &Path,
    mut manifest: RunManifest,
) -> Result<()> {
    let names = LatticeNames::of(data);
    let mcem = mcem_for(cfg, resume.as_ref());
    let mut hook = checkpoint_hook(ckpt, &mcem, &names, None)?;
    let fitted = fit_expression_with(data, &mcem, resume.map(|c| c.state), &mut hook);
    let Some(fit) = stopped(fitted, ckpt)? else { return Ok(()) };
    let post = expression_posterior(data, &fit.phi, &fit.theta, &fit.state.grid, &posterior_schedule(cfg, &mcem)?)?;

    fs::create_dir_all(out)?;
    write_params_expression(&out.join("params.json"), &fit.phi, &fit.theta, &fit.state)?;
    io::write_trace(&out.join("trace.tsv"), &fit.state)?;
    io::write_expression_calls(&out.join("posterior.tsv"), &names, &post, cfg.cutoff)?;
    let calls = post.classify(cfg.cutoff);
    for f in ["params.json", "trace.tsv", "posterior.tsv"] {
        manifest.add_output(f);
    }
    manifest.write(out)?;
    println!(
        "expressed cells: {} of {} (cutoff {}); MCEM iterations {}, converged {}",
        calls.ones(),
        calls.unmasked_count(),
        cfg.cutoff,
        fit.state.completed(),
        fit.state.converged
    );
    Ok(())
}

fn write_params_expression(path: &Path, phi: &MrfParams, theta: &GmmEmissionParams, state: &McemState) -> Result<()> {
    io::write_json(
        path,
        &json!({
            "model": "expression",
            "phi": phi,
            "theta": theta,
            "iterations": state.completed(),
            "converged": state.converged,
        }),
    )
}

fn de_context(
    input: Option<&Path>,
    zscores: Option<&Path>,
    metadata: &Path,
    expressed: Option<&Path>,
) -> Result<(DeContext, LatticeNames)> {
    let (z, names, groups) = match (input, zscores) {
        (Some(input), None) => {
            let data = io::load_dataset(input, metadata)?;
            let names = LatticeNames::of(&data);
            let calls = match expressed {
                Some(p) => io::read_expression_calls(p, &names)?,
                None => {
                    log::warn!("no expression calls given; every transition is tested");
                    LatentGrid::from_states(*data.shape(), vec![1; data.shape().cells()])?
                }
            };
            let (z, masked) = build_zscore_grid(&data, &calls)?;
            let degenerate = masked.iter().filter(|(_, r)| *r == MaskReason::Degenerate).count();
            log::info!(
                "{} transitions masked ({} degenerate), {} tested",
                masked.len(),
                degenerate,
                z.unmasked_count()
            );
            let groups = data.groups.clone().expect("loaded datasets carry groups");
            (z, names, groups)
        }
        (None, Some(path)) => {
            let meta = io::read_metadata(metadata)?;
            let template = LatticeNames {
                genes: Vec::new(),
                regions: meta.regions.iter().map(|r| r.name.clone()).collect(),
                periods: meta.periods.clone(),
            };
            let (z, names) = io::read_zscores(path, &template)?;
            (z, names, meta.groups())
        }
        _ => return Err(Error::Config("exactly one of --input or --zscores is required".into())),
    };
    let model = fit_local_fdr(&z.pooled())?;
    if model.null_only {
        log::warn!("the z-scores look null everywhere; every local fdr is 1");
    }
    Ok((
        DeContext {
            zscores: z,
            model,
            groups,
        },
        names,
    ))
}

fn de_flow(
    ctx: DeContext,
    names: LatticeNames,
    cfg: &RunConfig,
    resume: Option<FitCheckpoint>,
    ckpt: &Checkpointing,
    out: &Path,
    mut manifest: RunManifest,
) -> Result<()> {
    let mcem = mcem_for(cfg, resume.as_ref());
    let mut hook = checkpoint_hook(ckpt, &mcem, &names, Some(&ctx))?;
    let fitted = fit_de_with(&ctx.zscores, &ctx.model, &ctx.groups, &mcem, resume.map(|c| c.state), &mut hook);
    let Some(fit) = stopped(fitted, ckpt)? else { return Ok(()) };
    let z = &ctx.zscores;
    let post = de_posterior(z, &ctx.model, &fit.phi, &fit.state.grid, &posterior_schedule(cfg, &mcem)?)?;

    let cells = z.shape().cells();
    let eb: Vec<f64> = (0..cells).map(|i| eb_posterior(z.z()[i], &ctx.model)).collect();
    let mrf: Vec<f64> = (0..cells).map(|i| post.null_prob_at(i).unwrap_or(1.0)).collect();
    let tested: Vec<usize> = (0..cells).filter(|&i| !z.mask()[i]).collect();
    let q: Vec<f64> = tested.iter().map(|&i| mrf[i]).collect();
    let sel = fdr_threshold(&q, cfg.alpha);
    let mut called = vec![false; cells];
    for &k in &sel.rejected {
        called[tested[k]] = true;
    }

    fs::create_dir_all(out)?;
    io::write_zscores(&out.join("zscores.tsv"), &names, z)?;
    io::write_json(&out.join("density.json"), &ctx.model)?;
    write_params_de(&out.join("params.json"), &fit.phi, &fit.state)?;
    io::write_trace(&out.join("trace.tsv"), &fit.state)?;
    io::write_de_calls(&out.join("de_calls.tsv"), &names, z, &eb, &mrf, &called)?;
    io::write_json(
        &out.join("fdr.json"),
        &json!({
            "alpha": cfg.alpha,
            "tested": tested.len(),
            "rejected": sel.rejected.len(),
            "cutoff": sel.cutoff,
            "mean_q": sel.mean_q,
        }),
    )?;
    for f in ["zscores.tsv", "density.json", "params.json", "trace.tsv", "de_calls.tsv", "fdr.json"] {
        manifest.add_output(f);
    }
    manifest.write(out)?;
    println!(
        "DE transitions: {} of {} at alpha {}; null proportion {:.4}; MCEM iterations {}, converged {}",
        sel.rejected.len(),
        tested.len(),
        cfg.alpha,
        ctx.model.p0,
        fit.state.completed(),
        fit.state.converged
    );
    Ok(())
}

fn write_params_de(path: &Path, phi: &DeMrfParams, state: &McemState) -> Result<()> {
    io::write_json(
        path,
        &json!({
            "model": "de",
            "phi": phi,
            "iterations": state.completed(),
            "converged": state.converged,
        }),
    )
}

fn fdr(input: &Path, column: &str, cfg: &RunConfig, out: Option<&Path>, args: Vec<String>) -> Result<()> {
    let q = io::read_column(input, column)?;
    if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Parse {
            file: input.to_path_buf(),
            line: i as u64 + 2,
            field: column.into(),
            message: format!("{v} is not a probability"),
        });
    }
    let sel = fdr_threshold(&q, cfg.alpha);
    println!(
        "rejected {} of {} at alpha {} (q cutoff {}, mean q {})",
        sel.rejected.len(),
        q.len(),
        cfg.alpha,
        sel.cutoff.map_or("none".to_string(), io::fmt_f64),
        io::fmt_f64(sel.mean_q)
    );
    if let Some(out) = out {
        let mut rejected = vec![false; q.len()];
        for &i in &sel.rejected {
            rejected[i] = true;
        }
        let mut w = io::table_writer(&out.join("fdr.tsv"))?;
        w.write_record(["index", "q", "rejected"])?;
        for (i, v) in q.iter().enumerate() {
            w.write_record([i.to_string(), io::fmt_f64(*v), (rejected[i] as u8).to_string()])?;
        }
        w.flush()?;
        io::write_json(
            &out.join("fdr.json"),
            &json!({
                "alpha": cfg.alpha,
                "tested": q.len(),
                "rejected": sel.rejected.len(),
                "cutoff": sel.cutoff,
                "mean_q": sel.mean_q,
            }),
        )?;
        let mut m = manifest("fdr", args, cfg)?;
        m.add_input(input)?;
        m.add_output("fdr.tsv");
        m.add_output("fdr.json");
        m.write(out)?;
    }
    Ok(())
}

fn sim_metadata(spec: &SimSpec, periods: usize) -> Metadata {
    let groups = spec.groups();
    Metadata {
        regions: (0..spec.regions)
            .map(|b| RegionMeta {
                name: format!("R{}", b + 1),
                group: groups[b],
            })
            .collect(),
        periods: (1..=periods).map(|t| format!("P{t}")).collect(),
    }
}

fn simulate_cmd(spec: &SimSpec, run: u64, out: &Path, args: Vec<String>) -> Result<()> {
    let sim = simulate(spec, run)?;
    fs::create_dir_all(out)?;
    let mut m = RunManifest::new("simulate", args, serde_json::to_value(spec)?);
    m.seed = Some(spec.seed);
    let truth = &sim.truth;
    let shape = *truth.shape();
    match &sim.observations {
        Observations::Expression(data) => {
            let meta = sim_metadata(spec, shape.times);
            let mut data = data.clone();
            data.region_names = meta.regions.iter().map(|r| r.name.clone()).collect();
            data.period_names = meta.periods.clone();
            data.groups = Some(spec.groups());
            io::write_dataset(&out.join("data.csv"), &data)?;
            io::write_metadata(&out.join("metadata.json"), &meta)?;
            write_truth(&out.join("truth.tsv"), &LatticeNames::of(&data), truth, false)?;
            m.outputs.extend(["data.csv", "metadata.json", "truth.tsv"].map(String::from));
        }
        Observations::ZScores(z) => {
            let meta = sim_metadata(spec, shape.times + 1);
            let names = LatticeNames {
                genes: (1..=shape.genes).map(|g| format!("G{g}")).collect(),
                regions: meta.regions.iter().map(|r| r.name.clone()).collect(),
                periods: meta.periods.clone(),
            };
            io::write_zscores(&out.join("zscores.tsv"), &names, z)?;
            io::write_metadata(&out.join("metadata.json"), &meta)?;
            write_truth(&out.join("truth.tsv"), &names, truth, true)?;
            m.outputs.extend(["zscores.tsv", "metadata.json", "truth.tsv"].map(String::from));
        }
    }
    io::write_json(&out.join("spec.json"), spec)?;
    m.add_output("spec.json");
    m.write(out)?;
    println!("{} run {run}: {} cells, {} in state 1", spec.setting, truth.unmasked_count(), truth.ones());
    Ok(())
}

/// True states; DE lattices are written per transition with a mask column.
fn write_truth(path: &Path, names: &LatticeNames, truth: &LatentGrid, transitions: bool) -> Result<()> {
    let mut w = io::table_writer(path)?;
    if transitions {
        w.write_record(["gene", "region", "from", "to", "state", "masked"])?;
    } else {
        w.write_record(["gene", "region", "period", "state"])?;
    }
    let shape = truth.shape();
    for i in 0..shape.cells() {
        let c = shape.cell_at(i);
        let mut row = vec![names.genes[c.gene].clone(), names.regions[c.region].clone(), names.periods[c.time].clone()];
        if transitions {
            row.push(names.periods[c.time + 1].clone());
        }
        row.push(truth.states()[i].to_string());
        if transitions {
            row.push((truth.is_masked_index(i) as u8).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn compare_cmd(spec: &SimSpec, methods: Option<&str>, cfg: &RunConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let methods: Vec<Method> = match methods {
        Some(list) => list.split(',').map(|s| Method::parse(s.trim())).collect::<Result<_>>()?,
        None if spec.setting.is_expression() => vec![Method::Plain, Method::Mrf],
        None => vec![Method::Eb, Method::Mrf],
    };
    let settings = CompareSettings::new(cfg.mcem(), cfg.posterior_burn_in, cfg.posterior_kept, spec.runs);
    let cmp = compare_models(spec, &methods, &settings)?;
    fs::create_dir_all(out)?;
    cmp.write_summary(fs::File::create(out.join("summary.tsv"))?)?;
    write_outcomes(&out.join("runs.tsv"), &cmp)?;
    let mut m = RunManifest::new(
        "compare",
        args,
        json!({ "spec": spec, "run": cfg, "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>() }),
    );
    m.seed = Some(spec.seed);
    m.outputs.extend(["summary.tsv", "runs.tsv"].map(String::from));
    if !cmp.roc.is_empty() {
        cmp.write_points(fs::File::create(out.join("roc.tsv"))?)?;
        m.add_output("roc.tsv");
    }
    m.write(out)?;
    for r in &cmp.summary {
        println!("{:<6} {:<20} mean {:.4} sd {:.4} ({} runs)", r.method.name(), r.metric, r.mean, r.sd, r.runs);
    }
    Ok(())
}

fn write_outcomes(path: &Path, cmp: &Comparison) -> Result<()> {
    let mut w = io::table_writer(path)?;
    w.write_record(["run", "method", "misclassification", "auc_neocortex", "auc_non_neocortex", "converged"])?;
    let na = |v: Option<f64>| v.map_or("NA".to_string(), io::fmt_f64);
    for o in &cmp.outcomes {
        w.write_record([
            o.run.to_string(),
            o.method.name().to_string(),
            na(o.misclassification),
            na(o.auc.map(|a| a[0])),
            na(o.auc.map(|a| a[1])),
            (o.converged as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn enrich(input: &Path, column: &str, set: &Path, rate: Option<f64>, out: Option<&Path>, args: Vec<String>) -> Result<()> {
    let (genes, calls) = io::read_gene_calls(input, column)?;
    let wanted = io::read_list(set)?;
    let index: std::collections::HashMap<&str, usize> = genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let mut members = Vec::new();
    let mut missing = Vec::new();
    for name in &wanted {
        match index.get(name.as_str()) {
            Some(&i) => members.push(i),
            None => missing.push(name.as_str()),
        }
    }
    members.sort_unstable();
    members.dedup();
    if !missing.is_empty() {
        log::warn!("{} set genes have no calls and are left out: {}", missing.len(), missing.join(", "));
    }
    let rate = rate.unwrap_or_else(|| calls.iter().filter(|c| **c).count() as f64 / calls.len().max(1) as f64);
    let e = gene_set_enrichment(&calls, &members, rate)?;
    println!(
        "set of {}: observed {}, expected {:.3}, fold change {:.3}, p-value {}",
        e.set_size,
        e.observed,
        e.expected,
        e.fold_change,
        io::fmt_f64(e.p_value)
    );
    if let Some(out) = out {
        io::write_json(&out.join("enrichment.json"), &json!({ "rate": rate, "missing": missing, "result": e }))?;
        let mut m = RunManifest::new("enrich", args, json!({ "column": column, "rate": rate }));
        m.add_input(input)?;
        m.add_input(set)?;
        m.add_output("enrichment.json");
        m.write(out)?;
    }
    Ok(())
}
