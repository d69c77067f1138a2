use cbi::analysis::{self, ProjectionScaling, TestReport};
use cbi::moments;
use cbi::simulate::{self, Ensemble, Record, SimConfig};
use cbi::spectral::{self, EigenPair, Regime, SpectralSummary};
use cbi::{linalg, stats, CbiParams, InitialState, DMatrix, DVector, EffectiveParams};
use serde_json::{json, Value};

use crate::config::{EigenSelector, ExperimentConfig, Overrides};
use crate::error::CliError;
use crate::report::{fmt, Report, Table};

/// Check names accepted by `verify`.
pub const CHECKS: &[&str] = &[
    "mean",
    "w-mean",
    "mixed-normal",
    "relative-frequencies",
    "quadratic-variation",
    "convergence",
    "atoms",
];

pub struct Outcome {
    pub report: Report,
    pub table: Option<Table>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    params: &'a CbiParams,
    x0: &'a InitialState,
    eff: EffectiveParams,
    spec: SpectralSummary,
    hash: String,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self, CliError> {
        let violations = validation_messages(cfg)?;
        if !violations.is_empty() {
            return Err(CliError::Config(violations.join("; ")));
        }
        let params = cfg.model()?;
        let x0 = cfg.x0()?;
        let eff = params.effective();
        let spec = spectral::spectral_summary(&eff.btilde)?;
        Ok(Context {
            cfg,
            params,
            x0,
            eff,
            spec,
            hash: params.hash(),
        })
    }

    fn pair(&self) -> Result<EigenPair, CliError> {
        let sel = self
            .cfg
            .eigenvalue
            .ok_or_else(|| CliError::Config("`eigenvalue` selector missing".into()))?;
        Ok(select_pair(&self.eff.btilde, sel)?)
    }

    fn report(&self, command: &str, seed: Option<u64>, provenance: Value, result: Value, passed: Option<bool>) -> Report {
        Report {
            command: command.into(),
            params_hash: self.hash.clone(),
            seed,
            provenance,
            result,
            passed,
        }
    }

    fn sim(&self, ov: &Overrides) -> Result<SimConfig, CliError> {
        self.cfg.sim_config(ov, simulate::default_dt(self.spec.s))
    }
}

fn select_pair(btilde: &DMatrix<f64>, sel: EigenSelector) -> cbi::Result<EigenPair> {
    match sel {
        EigenSelector::Value(z) => spectral::left_eigenpair(btilde, z),
        EigenSelector::Index(i) => spectral::left_eigenpair_by_index(btilde, i),
    }
}

fn validation_messages(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let model = cfg.model()?;
    let mut out: Vec<String> = model.validate().iter().map(|v| v.to_string()).collect();
    out.extend(cfg.x0()?.violations(model.d));
    Ok(out)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn analytic(formula: &str) -> Value {
    json!({ "source": "analytic", "formula": formula })
}

fn monte_carlo(sim: &SimConfig) -> Value {
    let (steps, h) = sim.grid();
    json!({
        "source": "monte_carlo",
        "n_paths": sim.n_paths,
        "T": sim.horizon,
        "dt": h,
        "steps": steps,
        "seed": sim.seed,
    })
}

pub fn validate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let violations = validation_messages(cfg)?;
    let model = cfg.model()?;
    let hash = model.hash();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Err(CliError::Config(format!("{} violation(s): {}", violations.len(), violations.join("; "))));
    }
    let eff = model.effective();
    let spec = spectral::spectral_summary(&eff.btilde)?;
    let mut result = json!({ "valid": true, "effective": to_value(&eff) });
    if let Some(sel) = cfg.eigenvalue {
        let pair = select_pair(&eff.btilde, sel)?;
        let flags = model.check_moments(pair.lambda, spec.s);
        result["eigenvalue"] = to_value(&pair.lambda);
        result["moment_conditions"] = to_value(&flags);
    }
    Ok(Outcome {
        report: Report {
            command: "validate".into(),
            params_hash: hash,
            seed: None,
            provenance: analytic("admissibility"),
            result,
            passed: Some(true),
        },
        table: None,
    })
}

pub fn spectral(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let mut result = to_value(&ctx.spec);
    if let Some(sel) = cfg.eigenvalue {
        let pair = select_pair(&ctx.eff.btilde, sel)?;
        result["pair"] = to_value(&pair);
        if ctx.spec.s > 0.0 {
            result["regime"] = to_value(&ctx.spec.regime_of(pair.lambda)?);
        }
    }
    let mut table = Table::new(&["index", "re", "im"]);
    for (i, z) in ctx.spec.eigenvalues.iter().enumerate() {
        table.push(vec![i.to_string(), fmt(z.re), fmt(z.im)]);
    }
    Ok(Outcome {
        report: ctx.report("spectral", None, analytic("eigen-decomposition of B-tilde"), result, None),
        table: Some(table),
    })
}

pub fn moments(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let pair = ctx.pair()?;
    let grid: Vec<f64> = match (ov.t, &cfg.moments) {
        (Some(t), _) => vec![t],
        (None, Some(m)) => m.t_grid.clone(),
        (None, None) => return Err(CliError::Config("moments.t_grid missing (or pass --t)".into())),
    };
    if grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::Config("moments.t_grid must be non-negative".into()));
    }
    let ex0 = ctx.x0.mean();
    let mut rows = Vec::new();
    let mut table = Table::new(&["t", "value", "h", "M2"]);
    for &t in &grid {
        let mean = moments::mean_at(&ctx.eff, &ex0, t);
        let value = moments::second_moment(ctx.params, &ctx.eff, &pair, ctx.x0, t)?;
        let mut row = json!({ "t": t, "mean": mean.as_slice(), "second_moment": value });
        if ctx.spec.s > 0.0 && ctx.spec.irreducible {
            let rep = moments::moment_report(ctx.params, &ctx.eff, &ctx.spec, &pair, ctx.x0, t)?;
            row["h_of_t"] = json!(rep.h_of_t);
            row["M2"] = json!(rep.m2);
            table.push(vec![fmt(t), fmt(value), fmt(rep.h_of_t), fmt(rep.m2)]);
        } else {
            table.push(vec![fmt(t), fmt(value), String::new(), String::new()]);
        }
        rows.push(row);
    }
    let mut result = json!({ "pair": to_value(&pair), "grid": rows });
    if ctx.spec.s > 0.0 && ctx.spec.irreducible {
        let limit = moments::m2_limit(ctx.params, &ctx.eff, &ctx.spec, &pair, ctx.x0)?;
        result["limit"] = to_value(&limit);
        result["w_mean"] = json!(moments::w_mean(&ctx.spec, &ctx.eff, &ex0)?);
        if limit.regime != Regime::I {
            let sigma = moments::sigma_v(ctx.params, &ctx.spec, &pair)?;
            result["sigma"] = to_value(&sigma);
            let var = moments::variance_limit(ctx.params, &ctx.spec, &ctx.eff, &pair, &ex0)?;
            result["variance_limit"] = json!([[var[(0, 0)], var[(0, 1)]], [var[(1, 0)], var[(1, 1)]]]);
            result["classification"] = to_value(&moments::sigma_classification(ctx.params, &pair)?);
        }
    }
    result["deterministic_projection"] =
        to_value(&moments::deterministic_projection(ctx.params, &ctx.eff, &pair, ctx.x0)?);
    Ok(Outcome {
        report: ctx.report("moments", None, analytic("closed-form moments"), result, None),
        table: Some(table),
    })
}

pub fn laplace(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let sec = cfg
        .laplace
        .as_ref()
        .ok_or_else(|| CliError::Config("`laplace` section missing".into()))?;
    let t = ov.t.unwrap_or(sec.t);
    let lam = DVector::from_vec(sec.lambda.clone());
    let mut rows = Vec::new();
    let mut table = Table::new(&["point", "probability", "laplace"]);
    let mut total = 0.0;
    for (k, (x, p)) in ctx.x0.support().into_iter().enumerate() {
        let v = ctx.params.laplace(&x, &lam, t, sec.ode_step)?;
        total += p * v.value;
        rows.push(json!({ "x0": x.as_slice(), "prob": p, "value": v.value, "clamped_steps": v.clamped }));
        table.push(vec![k.to_string(), fmt(p), fmt(v.value)]);
    }
    let result = json!({ "lambda": sec.lambda, "t": t, "ode_step": sec.ode_step, "value": total, "by_initial_point": rows });
    Ok(Outcome {
        report: ctx.report("laplace", None, analytic("Riccati flow, RK4 + Simpson"), result, None),
        table: Some(table),
    })
}

fn run_ensemble(ctx: &Context, sim: &SimConfig) -> Result<Ensemble, CliError> {
    Ok(simulate::simulate_ensemble(ctx.params, ctx.x0, sim)?)
}

fn component_stats(terminal: &[DVector<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    (0..d)
        .map(|i| {
            let xs: Vec<f64> = terminal.iter().map(|x| x[i]).collect();
            (stats::mean(&xs), stats::standard_error(&xs))
        })
        .unzip()
}

pub fn simulate_cmd(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let sim = ctx.sim(ov)?;
    let ens = run_ensemble(&ctx, &sim)?;
    let terminal = ens.terminal();
    let w = if ctx.spec.s > 0.0 && ctx.spec.irreducible {
        Some(analysis::w_samples(&terminal, &ctx.spec, sim.horizon)?)
    } else {
        None
    };
    let (mean, se) = component_stats(&terminal, ctx.params.d);
    let exact = moments::mean_at(&ctx.eff, &ctx.x0.mean(), sim.horizon);
    let mut header: Vec<String> = vec!["path_index".into()];
    header.extend((0..ctx.params.d).map(|i| format!("x{i}")));
    header.push("w".into());
    let mut table = Table { header, rows: Vec::new() };
    for (i, x) in terminal.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| fmt(*v)));
        row.push(w.as_ref().map(|w| fmt(w[i])).unwrap_or_default());
        table.push(row);
    }
    let mut result = json!({
        "config": to_value(&sim),
        "terminal_mean": mean,
        "terminal_standard_error": se,
        "analytic_mean": exact.as_slice(),
        "terminal": terminal.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>(),
    });
    if let Some(w) = &w {
        result["w"] = json!(w);
    }
    if sim.record != Record::Terminal || sim.log_jumps {
        result["paths"] = to_value(&ens.paths);
    }
    Ok(Outcome {
        report: ctx.report("simulate", Some(sim.seed), monte_carlo(&sim), result, None),
        table: Some(table),
    })
}

/// `|MC − exact| ≤ 3 SE + 2 |MC(dt) − MC(dt/2)|` per component.
fn mean_check(name: &str, coarse: &[Vec<f64>], fine: &[Vec<f64>], exact: &[f64]) -> TestReport {
    let mut rep = TestReport {
        test: name.into(),
        sample_size: coarse.len(),
        ..Default::default()
    };
    let d = exact.len();
    for i in 0..d {
        let a: Vec<f64> = coarse.iter().map(|x| x[i]).collect();
        let b: Vec<f64> = fine.iter().map(|x| x[i]).collect();
        let (ma, mb) = (stats::mean(&a), stats::mean(&b));
        let tol = 3.0 * stats::standard_error(&a) + 2.0 * (ma - mb).abs();
        rep.statistics.insert(format!("mc_mean_{i}"), ma);
        rep.statistics.insert(format!("mc_mean_half_step_{i}"), mb);
        rep.statistics.insert(format!("exact_{i}"), exact[i]);
        rep.tolerances.insert(format!("component_{i}"), tol);
        rep.checks.insert(format!("component_{i}"), (ma - exact[i]).abs() <= tol);
    }
    rep.passed = Some(rep.checks.values().all(|x| *x));
    rep
}

fn unknown_checks(checks: &[String]) -> Vec<String> {
    checks.iter().filter(|c| !CHECKS.contains(&c.as_str())).cloned().collect()
}

pub fn verify(cfg: &ExperimentConfig, ov: &Overrides, cli_checks: Option<Vec<String>>) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let sec = cfg.verify.clone();
    let checks: Vec<String> = cli_checks
        .or_else(|| sec.as_ref().map(|s| s.checks.clone()))
        .ok_or_else(|| CliError::Config("no checks requested (verify.checks or --checks)".into()))?;
    let bad = unknown_checks(&checks);
    if !bad.is_empty() {
        return Err(CliError::Config(format!(
            "unknown check(s) {bad:?}; available: {}",
            CHECKS.join(", ")
        )));
    }
    let threshold = sec
        .as_ref()
        .and_then(|s| s.survivor_threshold)
        .unwrap_or(analysis::DEFAULT_SURVIVOR_THRESHOLD);
    let sim = ctx.sim(ov)?;
    let ens = run_ensemble(&ctx, &sim)?;
    let terminal = ens.terminal();
    let needs_pair = checks
        .iter()
        .any(|c| matches!(c.as_str(), "mixed-normal" | "quadratic-variation" | "convergence" | "atoms"));
    let pair = if needs_pair { Some(ctx.pair()?) } else { None };
    let ex0 = ctx.x0.mean();

    let mut reports: Vec<(String, TestReport)> = Vec::new();
    for check in &checks {
        let rep = match check.as_str() {
            "mean" => {
                let half = SimConfig { dt: sim.grid().1 / 2.0, ..sim.clone() };
                let fine = run_ensemble(&ctx, &half)?.terminal();
                let exact = moments::mean_at(&ctx.eff, &ex0, sim.horizon);
                let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
                mean_check("mean", &rows(&terminal), &rows(&fine), exact.as_slice())
            }
            "w-mean" => {
                ctx.spec.require_supercritical()?;
                let (u, _) = ctx.spec.perron()?;
                let half = SimConfig { dt: sim.grid().1 / 2.0, ..sim.clone() };
                let fine = run_ensemble(&ctx, &half)?.terminal();
                let w = |v: &[DVector<f64>]| -> Result<Vec<Vec<f64>>, CliError> {
                    Ok(analysis::w_samples(v, &ctx.spec, sim.horizon)?.into_iter().map(|x| vec![x]).collect())
                };
                let decay = (-ctx.spec.s * sim.horizon).exp();
                let exact = decay * u.dot(&moments::mean_at(&ctx.eff, &ex0, sim.horizon));
                let mut rep = mean_check("w-mean", &w(&terminal)?, &w(&fine)?, &[exact]);
                rep.statistics.insert("limit".into(), moments::w_mean(&ctx.spec, &ctx.eff, &ex0)?);
                rep
            }
            "mixed-normal" => {
                let pair = pair.as_ref().expect("pair resolved");
                let sigma = moments::sigma_v(ctx.params, &ctx.spec, pair)?;
                match sigma.regime {
                    Regime::III => {
                        let sample = analysis::projection_statistic(
                            &terminal, pair, &ctx.spec, sim.horizon, ProjectionScaling::Random, threshold,
                        )?;
                        analysis::gaussian_test(&sample, &sigma.sigma, &Default::default())?
                    }
                    _ => {
                        let sample = analysis::projection_statistic(
                            &terminal, pair, &ctx.spec, sim.horizon, ProjectionScaling::RandomCritical, threshold,
                        )?;
                        let mut rep =
                            analysis::gaussian_test(&sample, &(sigma.sigma / ctx.spec.s), &Default::default())?;
                        rep.diagnostics.extend(rep.checks.clone());
                        rep.checks.clear();
                        rep.passed = None;
                        rep.note = Some("critical regime: reported only".into());
                        rep
                    }
                }
            }
            "relative-frequencies" => {
                let (_, ut) = ctx.spec.perron()?;
                let survivors: Vec<DVector<f64>> = terminal
                    .iter()
                    .filter(|x| ctx.spec.u.as_ref().is_some_and(|u| u.dot(x) > threshold))
                    .cloned()
                    .collect();
                let rf = analysis::relative_frequencies(&survivors, Some(ut));
                let mut rep = TestReport {
                    test: "relative-frequencies".into(),
                    sample_size: rf.survivors,
                    ..Default::default()
                };
                match rf.max_deviation {
                    Some(dev) => {
                        rep.statistics.insert("max_deviation".into(), dev);
                        rep.tolerances.insert("max_deviation".into(), 0.02);
                        rep.checks.insert("max_deviation".into(), dev <= 0.02);
                        rep.passed = Some(dev <= 0.02);
                    }
                    None => rep.note = Some("insufficient data".into()),
                }
                rep
            }
            "quadratic-variation" => {
                let pair = pair.as_ref().expect("pair resolved");
                let sigma = moments::sigma_v(ctx.params, &ctx.spec, pair)?.sigma;
                let full = SimConfig { record: Record::Full, log_jumps: true, ..sim.clone() };
                let ens_full = run_ensemble(&ctx, &full)?;
                analysis::qv_limit_check(&ens_full, ctx.params, pair, &ctx.spec, &sigma, &Default::default())?
            }
            "convergence" => {
                let pair = pair.as_ref().expect("pair resolved");
                let checkpoints = sec
                    .as_ref()
                    .and_then(|s| s.checkpoints.clone())
                    .unwrap_or_else(|| (1..=sim.horizon.floor() as usize).map(|k| k as f64).collect());
                let full = SimConfig { record: Record::Full, ..sim.clone() };
                let ens_full = run_ensemble(&ctx, &full)?;
                let states = analysis::checkpoint_states(&ens_full, &checkpoints);
                analysis::convergence_diagnostic(&checkpoints, &states, pair, &ctx.spec, &Default::default())?
            }
            "atoms" => {
                let pair = pair.as_ref().expect("pair resolved");
                let rows: Vec<Vec<f64>> = terminal
                    .iter()
                    .map(|x| {
                        let z = (-pair.lambda * sim.horizon).exp() * linalg::project_real(&pair.v, x);
                        if pair.is_real() { vec![z.re] } else { vec![z.re, z.im] }
                    })
                    .collect();
                let mut rep = analysis::atom_scan(&rows, &Default::default());
                rep.test = "atoms".into();
                rep
            }
            _ => unreachable!("checked above"),
        };
        reports.push((check.clone(), rep));
    }
    let passed = reports.iter().all(|(_, r)| r.passed != Some(false));
    let result = json!({
        "checks": reports.iter().map(|(k, r)| json!({ "check": k, "report": to_value(r) })).collect::<Vec<_>>(),
        "pair": pair.as_ref().map(to_value),
    });
    let mut table = Table::new(&["check", "passed", "sample_size"]);
    for (k, r) in &reports {
        let p = match r.passed {
            Some(true) => "true",
            Some(false) => "false",
            None => "reported",
        };
        table.push(vec![k.clone(), p.into(), r.sample_size.to_string()]);
    }
    Ok(Outcome {
        report: ctx.report("verify", Some(sim.seed), monte_carlo(&sim), result, Some(passed)),
        table: Some(table),
    })
}

pub fn perpetuity(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let sec = cfg
        .perpetuity
        .as_ref()
        .ok_or_else(|| CliError::Config("`perpetuity` section missing".into()))?;
    let a = linalg::rows::from_rows(&sec.a).map_err(CliError::Config)?;
    let seed = cfg.seed(ov);
    let n = ov.paths.unwrap_or(sec.n_samples);
    let out = simulate::perpetuity_sample(&a, &sec.c, sec.n_terms, n, seed)?;
    let dim = a.nrows();
    let mut result = json!({ "n_terms": out.n_terms, "n_samples": n });
    let mut passed = true;
    let mut coords = Vec::new();
    for k in 0..dim {
        let xs: Vec<f64> = out.samples.iter().map(|x| x[k]).collect();
        let ys: Vec<f64> = out.swept.iter().map(|x| x[k]).collect();
        let ks = stats::ks_two_sample(&xs, &ys);
        passed &= ks.p_value > 0.01;
        coords.push(json!({
            "mean": stats::mean(&xs),
            "variance": stats::variance(&xs),
            "sweep_ks": to_value(&ks),
        }));
    }
    result["coordinates"] = json!(coords);
    let rows: Vec<Vec<f64>> = out.samples.iter().map(|x| x.as_slice().to_vec()).collect();
    let atoms = analysis::atom_scan(&rows, &Default::default());
    passed &= atoms.passed != Some(false);
    result["atoms"] = to_value(&atoms);
    let mut header: Vec<String> = vec!["sample".into()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    let mut table = Table { header, rows: Vec::new() };
    for (i, x) in out.samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| fmt(*v)));
        table.push(row);
    }
    Ok(Outcome {
        report: Report {
            command: "perpetuity".into(),
            params_hash: cfg.model.as_ref().map(|m| m.hash()).unwrap_or_default(),
            seed: Some(seed),
            provenance: json!({ "source": "monte_carlo", "n_samples": n, "n_terms": out.n_terms, "seed": seed }),
            result,
            passed: Some(passed),
        },
        table: Some(table),
    })
}

pub fn decompose(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let ctx = Context::new(cfg)?;
    let sec = cfg
        .decompose
        .as_ref()
        .ok_or_else(|| CliError::Config("`decompose` section missing".into()))?;
    let sim = SimConfig {
        horizon: sec.t + sec.horizon,
        ..ctx.sim(&Overrides { t: Some(sec.t + sec.horizon), ..ov.clone() })?
    };
    let pairs = simulate::simulate_decomposition_pair(ctx.params, ctx.x0, sec.t, sec.horizon, &sim)?;
    let weights = ctx
        .spec
        .u
        .clone()
        .unwrap_or_else(|| DVector::from_element(ctx.params.d, 1.0));
    let project = |v: &[DVector<f64>]| v.iter().map(|x| weights.dot(x)).collect::<Vec<f64>>();
    let (a, b) = (project(&pairs.direct), project(&pairs.split));
    let ks = stats::ks_two_sample(&a, &b);
    let passed = ks.p_value > 0.01;
    let result = json!({
        "t": sec.t,
        "T": sec.horizon,
        "projection": weights.as_slice(),
        "direct_mean": stats::mean(&a),
        "split_mean": stats::mean(&b),
        "ks": to_value(&ks),
        "alpha": 0.01,
    });
    let mut table = Table::new(&["index", "direct", "split"]);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        table.push(vec![i.to_string(), fmt(*x), fmt(*y)]);
    }
    Ok(Outcome {
        report: ctx.report("decompose", Some(sim.seed), monte_carlo(&sim), result, Some(passed)),
        table: Some(table),
    })
}
