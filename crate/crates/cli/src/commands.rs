//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use bivmeta::association::{
    build_pseudo_ipd, double_bootstrap, load_cohorts, mix3, parse_cohorts,
    PriorTarget,
};
use bivmeta::copula::{spearman_rho, theta_from_spearman};
use bivmeta::data::{
    load_dataset, parse_dataset, to_log_or, ArmDependence, PosteriorSummary, StudyRecord,
    ThetaPrior,
};
use bivmeta::mcmc::{Init, SamplerConfig};
use bivmeta::models::{
    init_from_summaries, Brma, BrmaBc, BrmaIb, FitOutput, ModelKind, PriorSpec,
};
use bivmeta::simulation::{run_scenario, Association, ScenarioConfig};
use bivmeta::BinomFrankPmf;

use crate::manifest::ManifestBuilder;
use crate::{CliError, Command, InitArg, ModelArg, TargetArg};

const BUNDLED_CML: &str = include_str!("../../../data/cml.csv");
const BUNDLED_COHORTS: &str = include_str!("../../../data/cohorts.csv");

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Fit {
            model,
            data,
            rho_w,
            rho_w_file,
            theta_a,
            theta_b,
            theta_prior,
            sampler,
            seed,
            init,
            trace,
            config,
            out,
        } => fit(FitInputs {
            model,
            data,
            rho_w,
            rho_w_file,
            theta_a,
            theta_b,
            theta_prior,
            chains: sampler.chains,
            iters: sampler.iters,
            warmup: sampler.warmup,
            seed,
            init,
            trace,
            config,
            out,
        }),
        Command::Simulate {
            scenario,
            all,
            reps,
            n_studies,
            bootstrap_reps,
            chains,
            iters,
            warmup,
            seed,
            config,
            out,
        } => simulate(scenario, all, reps, n_studies, bootstrap_reps, chains, iters, warmup, seed, config, out),
        Command::Elicit { cohorts, b_outer, b_inner, target, seed, out } => {
            elicit(cohorts, b_outer, b_inner, target, seed, out)
        }
        Command::Spearman { theta, rho } => spearman(theta, rho),
        Command::PmfCheck { n, p1, p2, theta } => pmf_check(n, p1, p2, theta),
        Command::Reproduce { data, cohorts, sampler, seed, rho_w, out } => {
            reproduce(data, cohorts, sampler.chains, sampler.iters, sampler.warmup, seed, rho_w, out)
        }
    }
}

// ---------------------------------------------------------------- fit

struct FitInputs {
    model: ModelArg,
    data: PathBuf,
    rho_w: Option<f64>,
    rho_w_file: Option<PathBuf>,
    theta_a: Option<f64>,
    theta_b: Option<f64>,
    theta_prior: Option<PathBuf>,
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    seed: Option<u64>,
    init: InitArg,
    trace: Option<PathBuf>,
    config: Option<PathBuf>,
    out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfigFile {
    rho_w: Option<f64>,
    theta_a: Option<f64>,
    theta_b: Option<f64>,
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ThetaPriorFile {
    ctrl: ThetaPrior,
    trt: ThetaPrior,
}

fn fit(inputs: FitInputs) -> Result<(), CliError> {
    let file_cfg: FitConfigFile = match &inputs.config {
        Some(p) => serde_json::from_reader(fs::File::open(p)?)?,
        None => FitConfigFile::default(),
    };
    let records = load_dataset(&inputs.data)?;
    let seed = inputs.seed.or(file_cfg.seed).unwrap_or(0);
    let sampler = SamplerConfig {
        chains: inputs.chains.or(file_cfg.chains).unwrap_or(4),
        iters: inputs.iters.or(file_cfg.iters).unwrap_or(5000),
        warmup: inputs.warmup.or(file_cfg.warmup).unwrap_or(5000),
        seed,
        ..Default::default()
    };
    let priors = PriorSpec::default();

    let fit_out = match inputs.model {
        ModelArg::Brma => {
            let rho_per_study = resolve_rho_w(
                &records,
                inputs.rho_w.or(file_cfg.rho_w),
                inputs.rho_w_file.as_deref(),
            )?;
            let log_ors: Vec<_> = records
                .iter()
                .zip(&rho_per_study)
                .map(|(r, &rho)| to_log_or(r, rho))
                .collect();
            Brma::new(log_ors, priors)?.fit(&sampler)?
        }
        ModelArg::BrmaIb => BrmaIb::new(records.clone(), priors)?.fit(&sampler)?,
        ModelArg::BrmaBc => {
            let deps = resolve_dependence(
                &records,
                inputs.theta_a.or(file_cfg.theta_a),
                inputs.theta_b.or(file_cfg.theta_b),
                inputs.theta_prior.as_deref(),
            )?;
            let model = BrmaBc::new(records.clone(), deps, priors.clone())?;
            let mut sampler = sampler.clone();
            if inputs.init == InitArg::FromFit {
                let ib = BrmaIb::new(records.clone(), priors.clone())?;
                let ib_fit = ib.fit(&SamplerConfig { seed: mix3(seed, 0x1b, 0), ..sampler.clone() })?;
                sampler.init = Init::FromPoint(init_from_summaries(
                    &model.layout(),
                    model.priors(),
                    &ib_fit.summaries,
                ));
            }
            model.fit(&sampler)?
        }
    };
    if inputs.init == InitArg::FromFit && inputs.model != ModelArg::BrmaBc {
        return Err(CliError::User(
            "--init from-fit applies to --model brma-bc (it seeds the copula model \
             from an independent-binomial fit)"
                .into(),
        ));
    }

    fs::create_dir_all(&inputs.out)?;
    write_summaries(&inputs.out.join("summary.json"), &fit_out.summaries)?;
    if let Some(trace) = &inputs.trace {
        write_trace(trace, &fit_out)?;
    }

    let mut manifest = ManifestBuilder::new(
        "fit",
        serde_json::json!({
            "model": format!("{:?}", inputs.model).to_lowercase(),
            "data": inputs.data.display().to_string(),
            "rho_w": inputs.rho_w.or(file_cfg.rho_w),
            "rho_w_file": inputs.rho_w_file.as_ref().map(|p| p.display().to_string()),
            "theta_a": inputs.theta_a.or(file_cfg.theta_a),
            "theta_b": inputs.theta_b.or(file_cfg.theta_b),
            "theta_prior": inputs.theta_prior.as_ref().map(|p| p.display().to_string()),
            "chains": sampler.chains,
            "iters": sampler.iters,
            "warmup": sampler.warmup,
            "init": format!("{:?}", inputs.init).to_lowercase(),
            "floor_hits": fit_out.floor_hits,
        }),
        seed,
    );
    manifest.input(&inputs.data);
    if let Some(p) = &inputs.theta_prior {
        manifest.input(p);
    }
    if let Some(p) = &inputs.rho_w_file {
        manifest.input(p);
    }
    if let Some(p) = &inputs.config {
        manifest.input(p);
    }
    manifest.write(&inputs.out)?;
    println!("wrote {}", inputs.out.join("summary.json").display());
    Ok(())
}

fn resolve_rho_w(
    records: &[StudyRecord],
    scalar: Option<f64>,
    file: Option<&Path>,
) -> Result<Vec<f64>, CliError> {
    if let Some(path) = file {
        // two-column file: study_id,rho_w with # comments and a header line
        let text = fs::read_to_string(path)?;
        let mut map = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("study_id")) {
                continue;
            }
            let (id, v) = line.split_once(',').ok_or_else(|| {
                CliError::User(format!("{}: line {} is not 'study_id,rho_w'", path.display(), i + 1))
            })?;
            let v: f64 = v.trim().parse().map_err(|_| {
                CliError::User(format!("{}: line {}: bad correlation '{v}'", path.display(), i + 1))
            })?;
            map.insert(id.trim().to_string(), v);
        }
        return records
            .iter()
            .map(|r| {
                map.get(&r.study_id).copied().ok_or_else(|| {
                    CliError::User(format!(
                        "{}: no rho_w for study '{}'",
                        path.display(),
                        r.study_id
                    ))
                })
            })
            .collect();
    }
    if let Some(v) = scalar {
        if !(-1.0..=1.0).contains(&v) {
            return Err(CliError::User(format!("--rho-w {v} outside [-1, 1]")));
        }
        return Ok(vec![v; records.len()]);
    }
    Err(CliError::User(
        "--model brma requires a within-study correlation: pass --rho-w or --rho-w-file".into(),
    ))
}

fn resolve_dependence(
    records: &[StudyRecord],
    theta_a: Option<f64>,
    theta_b: Option<f64>,
    prior_file: Option<&Path>,
) -> Result<Vec<ArmDependence>, CliError> {
    if let Some(path) = prior_file {
        let pf: ThetaPriorFile = serde_json::from_reader(fs::File::open(path)?)?;
        return Ok(vec![ArmDependence::with_priors(pf.ctrl, pf.trt); records.len()]);
    }
    match (theta_a, theta_b) {
        (Some(a), Some(b)) => Ok(vec![ArmDependence::fixed(a, b); records.len()]),
        _ => Err(CliError::User(
            "--model brma-bc requires a dependence source: pass --theta-a and --theta-b, \
             or --theta-prior"
                .into(),
        )),
    }
}

fn write_summaries(path: &Path, summaries: &[PosteriorSummary]) -> Result<(), CliError> {
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), summaries)?;
    Ok(())
}

fn write_trace(path: &Path, fit: &FitOutput) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", fit.param_names.join(","))?;
    for chain in &fit.chains {
        for row in 0..chain.draws.rows() {
            let line: Vec<String> = chain.draws.row(row).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfigFile {
    reps: Option<usize>,
    n_studies: Option<usize>,
    bootstrap_reps: Option<usize>,
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    seed: Option<u64>,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scenario: Option<String>,
    all: bool,
    reps: Option<usize>,
    n_studies: Option<usize>,
    bootstrap_reps: Option<usize>,
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: PathBuf,
) -> Result<(), CliError> {
    let file_cfg: SimConfigFile = match &config {
        Some(p) => serde_json::from_reader(fs::File::open(p)?)?,
        None => SimConfigFile::default(),
    };
    let seed = seed.or(file_cfg.seed).unwrap_or(0);
    let reps = reps.or(file_cfg.reps).unwrap_or(100);
    let base = ScenarioConfig {
        replications: reps,
        n_studies: n_studies.or(file_cfg.n_studies).unwrap_or(30),
        bootstrap_reps: bootstrap_reps.or(file_cfg.bootstrap_reps).unwrap_or(1000),
        seed,
        sampler: SamplerConfig {
            chains: chains.or(file_cfg.chains).unwrap_or(2),
            iters: iters.or(file_cfg.iters).unwrap_or(3000),
            warmup: warmup.or(file_cfg.warmup).unwrap_or(3000),
            ..Default::default()
        },
        ..Default::default()
    };

    let cells: Vec<ScenarioConfig> = if all {
        ScenarioConfig::factorial(seed, reps)
            .into_iter()
            .map(|c| ScenarioConfig { eta: c.eta, assoc: c.assoc, m: c.m, ..base.clone() })
            .collect()
    } else {
        let spec = scenario.ok_or_else(|| {
            CliError::User("pass --scenario \"eta=3,assoc=strong,m=300\" or --all".into())
        })?;
        let (eta, assoc, m) = parse_scenario(&spec)?;
        vec![ScenarioConfig { eta, assoc, m, ..base.clone() }]
    };

    fs::create_dir_all(&out)?;
    let multi = cells.len() > 1;
    for cfg in &cells {
        let dir = if multi { out.join(cfg.label()) } else { out.clone() };
        fs::create_dir_all(&dir)?;
        let result = run_scenario(cfg);

        let mut perf = std::io::BufWriter::new(fs::File::create(dir.join("performance.csv"))?);
        result.performance.write_csv(&mut perf)?;
        perf.flush()?;

        let mut jl = std::io::BufWriter::new(fs::File::create(dir.join("replications.jsonl"))?);
        for rep in &result.replications {
            serde_json::to_writer(&mut jl, rep)?;
            writeln!(jl)?;
        }
        jl.flush()?;

        let summary = serde_json::json!({
            "label": cfg.label(),
            "replications": cfg.replications,
            "excluded": result.excluded,
        });
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        println!(
            "{}: {} replications, {} excluded from aggregates",
            cfg.label(),
            cfg.replications,
            result.excluded
        );
    }

    let mut manifest = ManifestBuilder::new(
        "simulate",
        serde_json::json!({
            "cells": cells.iter().map(|c| c.label()).collect::<Vec<_>>(),
            "reps": reps,
            "n_studies": base.n_studies,
            "bootstrap_reps": base.bootstrap_reps,
            "chains": base.sampler.chains,
            "iters": base.sampler.iters,
            "warmup": base.sampler.warmup,
        }),
        seed,
    );
    if let Some(p) = &config {
        manifest.input(p);
    }
    manifest.write(&out)?;
    Ok(())
}

fn parse_scenario(spec: &str) -> Result<(f64, Association, f64), CliError> {
    let (mut eta, mut assoc, mut m) = (None, None, None);
    for part in spec.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::User(format!("scenario fragment '{part}' is not key=value")))?;
        match key.trim() {
            "eta" => {
                eta = Some(value.trim().parse::<f64>().map_err(|_| {
                    CliError::User(format!("scenario eta '{value}' is not a number"))
                })?)
            }
            "assoc" => {
                assoc = Some(value.trim().parse::<Association>().map_err(CliError::User)?)
            }
            "m" => {
                m = Some(value.trim().parse::<f64>().map_err(|_| {
                    CliError::User(format!("scenario m '{value}' is not a number"))
                })?)
            }
            other => return Err(CliError::User(format!("unknown scenario key '{other}'"))),
        }
    }
    match (eta, assoc, m) {
        (Some(e), Some(a), Some(m)) => Ok((e, a, m)),
        _ => Err(CliError::User("scenario must set eta, assoc and m".into())),
    }
}

// ---------------------------------------------------------------- elicit

fn elicit(
    cohorts: PathBuf,
    b_outer: usize,
    b_inner: usize,
    target: TargetArg,
    seed: u64,
    out: PathBuf,
) -> Result<(), CliError> {
    let evidence = load_cohorts(&cohorts)?;
    let ipd: Vec<_> = evidence.iter().map(build_pseudo_ipd).collect();
    for (c, i) in evidence.iter().zip(&ipd) {
        if i.degenerate {
            eprintln!(
                "note: cohort '{}' rounds to an all-or-none response group",
                c.cohort_id
            );
        }
    }
    let target = match target {
        TargetArg::RhoW => PriorTarget::RhoW,
        TargetArg::ThetaCtrl => PriorTarget::ThetaCtrl,
        TargetArg::ThetaTrt => PriorTarget::ThetaTrt,
    };
    let prior = double_bootstrap(&ipd, b_outer, b_inner, target, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(&out)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &prior)?;
    println!("elicited {:?}: mean {:.4}, sd {:.4} -> {}", prior.target, prior.mean, prior.sd, out.display());
    Ok(())
}

// ---------------------------------------------------------------- checks

fn spearman(theta: Option<f64>, rho: Option<f64>) -> Result<(), CliError> {
    match (theta, rho) {
        (Some(t), None) => {
            println!("{}", spearman_rho(t)?);
            Ok(())
        }
        (None, Some(r)) => {
            println!("{}", theta_from_spearman(r)?);
            Ok(())
        }
        _ => Err(CliError::User("pass exactly one of --theta or --rho".into())),
    }
}

fn pmf_check(n: u64, p1: f64, p2: f64, theta: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(CliError::User("probabilities must lie in [0, 1]".into()));
    }
    let joint = BinomFrankPmf::new(n, n, p1, p2, theta);
    let (total, row, col) = joint.normalization_residuals()?;
    println!("total_mass_error {total:e}");
    println!("max_row_marginal_error {row:e}");
    println!("max_col_marginal_error {col:e}");
    Ok(())
}

// ---------------------------------------------------------------- reproduce

#[allow(clippy::too_many_arguments)]
fn reproduce(
    data: Option<PathBuf>,
    cohorts: Option<PathBuf>,
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    seed: u64,
    rho_w_override: Option<f64>,
    out: PathBuf,
) -> Result<(), CliError> {
    let records = match &data {
        Some(p) => load_dataset(p)?,
        None => parse_dataset(BUNDLED_CML.as_bytes())?,
    };
    let evidence = match &cohorts {
        Some(p) => load_cohorts(p)?,
        None => parse_cohorts(BUNDLED_COHORTS.as_bytes())?,
    };
    fs::create_dir_all(&out)?;

    // elicitation
    let ipd: Vec<_> = evidence.iter().map(build_pseudo_ipd).collect();
    let rho = double_bootstrap(&ipd, 1000, 200, PriorTarget::RhoW, mix3(seed, 101, 0))?;
    let tha = double_bootstrap(&ipd, 1000, 200, PriorTarget::ThetaCtrl, mix3(seed, 102, 0))?;
    let thb = double_bootstrap(&ipd, 1000, 200, PriorTarget::ThetaTrt, mix3(seed, 103, 0))?;
    for (name, prior) in
        [("rho_w", &rho), ("theta_ctrl", &tha), ("theta_trt", &thb)]
    {
        let file = fs::File::create(out.join(format!("elicited_{name}.json")))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), prior)?;
    }
    let rho_w = rho_w_override.unwrap_or(rho.mean);
    println!(
        "elicited: rho_w N({:.3},{:.3}) theta_ctrl N({:.2},{:.2}) theta_trt N({:.2},{:.2}); fitting at rho_w = {:.3}",
        rho.mean, rho.sd, tha.mean, tha.sd, thb.mean, thb.sd, rho_w
    );

    let sampler = SamplerConfig {
        chains: chains.unwrap_or(4),
        iters: iters.unwrap_or(5000),
        warmup: warmup.unwrap_or(5000),
        seed,
        ..Default::default()
    };
    let priors = PriorSpec::default();

    let log_ors: Vec<_> = records.iter().map(|r| to_log_or(r, rho_w)).collect();
    let brma_fit = Brma::new(log_ors, priors.clone())?
        .fit(&SamplerConfig { seed: mix3(seed, 1, 0), ..sampler.clone() })?;

    let ib = BrmaIb::new(records.clone(), priors.clone())?;
    let ib_fit = ib.fit(&SamplerConfig { seed: mix3(seed, 2, 0), ..sampler.clone() })?;

    let deps = vec![
        ArmDependence::with_priors(
            ThetaPrior { mean: tha.mean, sd: tha.sd },
            ThetaPrior { mean: thb.mean, sd: thb.sd },
        );
        records.len()
    ];
    let bc = BrmaBc::new(records.clone(), deps, priors.clone())?;
    let bc_fit = bc.fit(&SamplerConfig {
        seed: mix3(seed, 3, 0),
        init: Init::FromPoint(init_from_summaries(&bc.layout(), bc.priors(), &ib_fit.summaries)),
        ..sampler.clone()
    })?;

    write_summaries(&out.join("summary_brma.json"), &brma_fit.summaries)?;
    write_summaries(&out.join("summary_brma_ib.json"), &ib_fit.summaries)?;
    write_summaries(&out.join("summary_brma_bc.json"), &bc_fit.summaries)?;

    // side-by-side between-studies estimates, mean and median both labelled
    let fits = [
        (ModelKind::Brma, &brma_fit),
        (ModelKind::BrmaBc, &bc_fit),
        (ModelKind::BrmaIb, &ib_fit),
    ];
    let mut table = std::io::BufWriter::new(fs::File::create(out.join("table.csv"))?);
    writeln!(table, "parameter,model,mean,median,ci_low,ci_high")?;
    let mut stdout_rows = String::new();
    for param in ["rho_b", "tau1", "tau2", "d1", "d2"] {
        for (kind, fit) in &fits {
            let s = fit
                .summaries
                .iter()
                .find(|s| s.parameter == param)
                .expect("summary present");
            writeln!(
                table,
                "{param},{kind},{},{},{},{}",
                s.mean, s.median, s.ci_low, s.ci_high
            )?;
            stdout_rows.push_str(&format!(
                "{param:6} {kind:8} mean {:+.3} median {:+.3} CrI ({:+.2}, {:+.2})\n",
                s.mean, s.median, s.ci_low, s.ci_high
            ));
        }
    }
    for param in ["theta_ctrl", "theta_trt"] {
        if let Some(s) = bc_fit.summaries.iter().find(|s| s.parameter == param) {
            writeln!(
                table,
                "{param},{},{},{},{},{}",
                ModelKind::BrmaBc,
                s.mean,
                s.median,
                s.ci_low,
                s.ci_high
            )?;
        }
    }
    table.flush()?;
    print!("{stdout_rows}");

    // posterior draws of the between-studies correlation for density plots
    let col = |fit: &FitOutput| -> Vec<f64> {
        fit.chains.iter().flat_map(|c| c.draws.column(0)).collect()
    };
    let (a, b, c) = (col(&brma_fit), col(&bc_fit), col(&ib_fit));
    let mut draws = std::io::BufWriter::new(fs::File::create(out.join("rho_b_draws.csv"))?);
    writeln!(draws, "brma,brma_bc,brma_ib")?;
    for i in 0..a.len().min(b.len()).min(c.len()) {
        writeln!(draws, "{},{},{}", a[i], b[i], c[i])?;
    }
    draws.flush()?;

    let mut manifest = ManifestBuilder::new(
        "reproduce",
        serde_json::json!({
            "data": data.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled".into()),
            "cohorts": cohorts.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled".into()),
            "chains": sampler.chains,
            "iters": sampler.iters,
            "warmup": sampler.warmup,
            "rho_w": rho_w,
            "bc_floor_hits": bc_fit.floor_hits,
        }),
        seed,
    );
    if let Some(p) = &data {
        manifest.input(p);
    }
    if let Some(p) = &cohorts {
        manifest.input(p);
    }
    manifest.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
