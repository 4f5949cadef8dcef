use std::io;

use qopen::config::ExperimentConfig;
use qopen::driving::{DrivingKind, FiberOrbit};
use qopen::evt::{
    gumbel_prediction, gumbel_prediction_constant, hitting_time_mc, solve_thresholds, survivor_probability_curve,
    curve_csv, CurveGrid, ThresholdSchedule,
};
use qopen::maps::StepFunction;
use qopen::open::{check_full_branch_outside, escape_rate, survivor_log_mass_curve, GridMasks, HoleFamily};
use qopen::perturb::{first_order_check, qhat, qhat_csv, theta, theta_csv, theta_field};
use qopen::pressure::{bowen_dimension, pressure_curve};
use qopen::raccim::{
    conditional_invariance_check, decay_rate_estimate, forward_identity_residual, raccim_densities,
    survivor_mass_identity,
};
use qopen::selftest::run_suite;
use qopen::transfer::{lambda_closed, Closed, Engine};
use qopen::validate::{validate, ValidationReport};
use serde_json::{json, Value};
use thiserror::Error;

use crate::output::Artifacts;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] qopen::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("selftest: {failed} of {total} properties violated")]
    SelftestFailed { failed: usize, total: usize },
}

impl RunError {
    /// 2 for bad input or violated hypotheses, 3 for numerical failures
    /// (including violated selftest invariants), 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core(e) if e.is_numerical() => 3,
            RunError::Core(_) => 2,
            RunError::SelftestFailed { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

pub type RunResult = std::result::Result<(), RunError>;

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Engine, orbit and validation shared by every experiment.
pub struct Setup {
    pub config: ExperimentConfig,
    pub engine: Engine,
    pub orbit: FiberOrbit,
    pub validation: ValidationReport,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self, RunError> {
        let validation = validate(&config)?.into_result()?;
        for w in &validation.warnings {
            eprintln!("warning: {w}");
        }
        let engine = config.engine()?;
        let orbit = config.fiber_orbit()?;
        engine.check_symbols(&orbit)?;
        Ok(Self {
            config,
            engine,
            orbit,
            validation,
        })
    }

    fn base(&self, subcommand: &str) -> Value {
        json!({
            "subcommand": subcommand,
            "config": to_value(&self.config),
            "warnings": self.validation.warnings,
        })
    }
}

fn put(v: &mut Value, key: &str, x: Value) {
    if let Value::Object(m) = v {
        m.insert(key.into(), x);
    }
}

pub fn closed_spectrum(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let run = lambda_closed(&s.engine, &s.orbit, c.burn_in, c.n)?;
    let mut csv = String::from("step,symbol,log_lambda,sandwich_width\n");
    for (j, (l, w)) in run.log_lambda.iter().zip(&run.sandwich_width).enumerate() {
        csv.push_str(&format!("{j},{},{l:.17e},{w:.17e}\n", s.orbit.symbol(j as i64)));
    }
    art.csv("multipliers.csv", &csv)?;
    art.csv("density.csv", &density_csv(&run.origin_density.values))?;
    let mut v = s.base("closed-spectrum");
    put(&mut v, "birkhoff_mean_log_lambda", run.birkhoff_mean().into());
    put(&mut v, "max_sandwich_width", run.sandwich_width.iter().cloned().fold(0.0, f64::max).into());
    put(&mut v, "exact_grid", s.engine.exact().into());
    put(&mut v, "lebesgue_invariant", s.engine.lebesgue_invariant().into());
    art.summary("closed_spectrum.json", v)?;
    Ok(())
}

fn density_csv(values: &[f64]) -> String {
    let n = values.len() as f64;
    let mut csv = String::from("cell,lo,hi,density\n");
    for (i, d) in values.iter().enumerate() {
        csv.push_str(&format!("{i},{:.17e},{:.17e},{d:.17e}\n", i as f64 / n, (i + 1) as f64 / n));
    }
    csv
}

pub fn escape(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let holes = c.fixed_holes()?;
    check_full_branch_outside(&s.engine, &holes, &s.orbit)?;
    let rate = escape_rate(&s.engine, &s.orbit, &holes, c.burn_in, c.n)?;
    let masks = GridMasks::new(&s.engine, &s.orbit, &holes);
    let curve = survivor_log_mass_curve(&s.engine, &s.orbit, &masks, c.n, None)?;
    let mut csv = String::from("n,log_survivor_mass\n");
    for (k, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{k},{l:.17e}\n"));
    }
    art.csv("survivors.csv", &csv)?;
    let mut v = s.base("escape-rate");
    put(&mut v, "escape_rate", to_value(&rate));
    put(&mut v, "estimators_agree", (rate.gap <= rate.tolerance).into());
    art.summary("escape_rate.json", v)?;
    Ok(())
}

pub fn extremal_index(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let family = c.hole_family();
    let schedule = c.schedule_values()?;
    let k_max = c.k_max()?;
    let est = theta(&s.engine, &s.orbit, &family, &schedule, k_max, c.burn_in)?;
    let series = schedule
        .iter()
        .map(|&eps| qhat(&s.engine, &s.orbit, &family.at(eps), eps, k_max, c.burn_in))
        .collect::<qopen::Result<Vec<_>>>()?;
    art.csv("qhat.csv", &qhat_csv(&series))?;
    let rows: Vec<(i64, f64, f64, f64)> = schedule
        .iter()
        .zip(est.raw.iter().zip(&est.in_flight))
        .map(|(&eps, (&raw, &tail))| (0, eps, raw, tail))
        .collect();
    art.csv("theta_schedule.csv", &theta_csv(&rows))?;
    let finest = *schedule.last().expect("nonempty schedule");
    let field = theta_field(&s.engine, &s.orbit, &family.at(finest), finest, c.n, k_max, c.burn_in)?;
    let rows: Vec<(i64, f64, f64, f64)> = field
        .raw
        .iter()
        .zip(&field.in_flight)
        .enumerate()
        .map(|(j, (&raw, &tail))| (j as i64, finest, raw, tail))
        .collect();
    art.csv("theta_field.csv", &theta_csv(&rows))?;
    let first = first_order_check(&s.engine, &s.orbit, &family, &schedule, c.burn_in, Some(&est))?;
    art.csv("first_order.csv", &first.to_csv())?;
    let mut v = s.base("extremal-index");
    put(&mut v, "theta_origin", est.value_raw().into());
    put(&mut v, "theta_origin_clamped", est.value_clamped().into());
    put(&mut v, "converged", est.converged.into());
    put(&mut v, "tolerance", est.tolerance.into());
    put(&mut v, "eps_finest", finest.into());
    put(&mut v, "theta_orbit_mean", field.mean().into());
    put(&mut v, "max_tail", field.in_flight.iter().cloned().fold(0.0, f64::max).into());
    art.summary("extremal_index.json", v)?;
    Ok(())
}

/// Sampling densities `μ̂_ω` per symbol for threshold solving.
fn symbol_densities(s: &Setup) -> qopen::Result<Vec<StepFunction>> {
    let k = s.engine.maps().len();
    if s.engine.lebesgue_invariant() {
        return Ok(vec![StepFunction::constant(1.0); k]);
    }
    if matches!(s.config.driving, DrivingKind::Constant { .. }) {
        let phi = s.engine.density_at(&s.orbit, 0, s.config.burn_in, &Closed)?.to_step();
        return Ok(vec![phi; k]);
    }
    Err(qopen::Error::Unsupported(
        "observation-driven thresholds need Lebesgue-invariant maps or constant driving".into(),
    ))
}

fn thresholds(s: &Setup, n_list: &[usize]) -> qopen::Result<(ThresholdSchedule, Vec<StepFunction>)> {
    let evt = s.config.evt()?;
    let densities = symbol_densities(s)?;
    let snap = evt.snap.then(|| s.engine.grid());
    let sched = solve_thresholds(&evt.observation, &densities, &evt.t, n_list, snap)?;
    Ok((sched, densities))
}

/// Hole family used for θ̂: the configured one, else balls at the centers.
fn theta_family(s: &Setup) -> qopen::Result<HoleFamily> {
    if s.config.holes.is_some() {
        return Ok(s.config.hole_family());
    }
    let centers: Vec<f64> = s.config.evt()?.observation.iter().map(|o| o.center()).collect();
    Ok(HoleFamily::balls(&centers))
}

/// `(θ̂-based Gumbel prediction exp(−∫tθ dm), θ̂ summary)`.
fn predicted(s: &Setup) -> qopen::Result<(f64, Value)> {
    let c = &s.config;
    let evt = c.evt()?;
    let family = theta_family(s)?;
    let schedule = c.schedule_values()?;
    let k_max = c.k_max()?;
    if let DrivingKind::Constant { symbol } = c.driving {
        let est = theta(&s.engine, &s.orbit, &family, &schedule, k_max, c.burn_in)?;
        let g = gumbel_prediction_constant(&est, evt.t[symbol])?;
        Ok((g, json!({"theta": est.value_raw(), "converged": est.converged})))
    } else {
        let finest = *schedule.last().expect("nonempty schedule");
        let field = theta_field(&s.engine, &s.orbit, &family.at(finest), finest, c.n, k_max, c.burn_in)?;
        let g = gumbel_prediction(&field, &s.orbit, &evt.t);
        Ok((g, json!({"theta_mean": field.mean(), "t_theta_mean": field.weighted_mean(&s.orbit, &evt.t)})))
    }
}

pub fn gumbel(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let evt = c.evt()?;
    let (sched, _) = thresholds(s, &evt.n_list)?;
    art.csv("thresholds.csv", &sched.to_csv())?;
    let (prediction, theta_summary) = predicted(s)?;
    let grid = match evt.cells_per_n {
        Some(cells_per_n) => CurveGrid::PerN { cells_per_n },
        None => CurveGrid::Fixed,
    };
    let rows = survivor_probability_curve(&s.engine, &s.orbit, &sched, grid, c.burn_in, prediction)?;
    art.csv("curve.csv", &curve_csv(&rows))?;
    let mut v = s.base("gumbel");
    put(&mut v, "gumbel_prediction", prediction.into());
    put(&mut v, "theta", theta_summary);
    put(&mut v, "max_abs_xi", sched.max_abs_xi().into());
    put(&mut v, "final", to_value(rows.last().expect("nonempty N list")));
    art.summary("gumbel.json", v)?;
    Ok(())
}

pub fn hitting_times(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let evt = c.evt()?;
    let n = evt
        .hitting_n
        .or_else(|| evt.n_list.last().copied())
        .ok_or_else(|| qopen::Error::InvalidConfig("no N for the hitting-time run".into()))?;
    let (sched, densities) = thresholds(s, &[n])?;
    let sym = s.orbit.symbol(0);
    let mu_hole = sched.entries[0][sym].mass;
    let rate = match evt.rate {
        Some(r) => r,
        None => {
            let (g, _) = predicted(s)?;
            -g.ln() / evt.t[sym]
        }
    };
    let driving = c.driving_system()?;
    let ht = hitting_time_mc(
        &driving,
        s.engine.maps(),
        &s.orbit,
        &sched.holes(0),
        &densities[sym],
        mu_hole,
        rate,
        c.hitting_settings()?,
    )?;
    art.csv("hitting_times.csv", &ht.to_csv())?;
    let mut v = s.base("hitting-times");
    put(&mut v, "n", n.into());
    put(&mut v, "mu_hole", mu_hole.into());
    put(&mut v, "rate", rate.into());
    put(&mut v, "ks", ht.ks.into());
    put(&mut v, "samples", ht.tau.len().into());
    put(&mut v, "extended", ht.extended.into());
    put(&mut v, "censored", ht.censored.into());
    art.summary("hitting_times.json", v)?;
    Ok(())
}

pub fn bowen(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let p = c.pressure()?;
    let holes = c.fixed_holes()?;
    let curve = pressure_curve(&s.engine, &s.orbit, &holes, &p.ts, c.burn_in, c.n)?;
    art.csv("pressure.csv", &curve.to_csv())?;
    let r = bowen_dimension(&s.engine, &s.orbit, &holes, c.burn_in, c.n, p.tol)?;
    let mut v = s.base("bowen");
    put(&mut v, "h", r.h.into());
    put(&mut v, "bracket", json!([r.bracket.0, r.bracket.1]));
    put(&mut v, "tol", r.tol.into());
    put(&mut v, "iterations", r.iterations.into());
    put(&mut v, "ep_at_h", r.ep_at_h.into());
    put(&mut v, "structure", to_value(&r.structure));
    put(&mut v, "strictly_decreasing", curve.strictly_decreasing(0.0).into());
    art.summary("bowen.json", v)?;
    Ok(())
}

fn unsupported_as_null(r: qopen::Result<Value>) -> qopen::Result<Value> {
    match r {
        Err(qopen::Error::Unsupported(_)) => Ok(Value::Null),
        other => other,
    }
}

pub fn raccim(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let n = c.raccim()?.n;
    let holes = c.fixed_holes()?;
    check_full_branch_outside(&s.engine, &holes, &s.orbit)?;
    let dens = raccim_densities(&s.engine, &s.orbit, &holes, c.burn_in, n)?;
    let mut by_cell = String::from("site,cell,density\n");
    let mut by_site = String::from("site,alpha,lambda_closed,lambda_open,normalization\n");
    for d in &dens {
        for (i, x) in d.density.values.iter().enumerate() {
            by_cell.push_str(&format!("{},{i},{x:.17e}\n", d.site));
        }
        by_site.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            d.site, d.alpha, d.lambda_closed, d.lambda_open, d.normalization
        ));
    }
    art.csv("raccim_density.csv", &by_cell)?;
    art.csv("raccim_alpha.csv", &by_site)?;
    let (lhs, rhs) = survivor_mass_identity(&s.engine, &s.orbit, &holes, n, c.burn_in)?;
    let forward = unsupported_as_null(forward_identity_residual(&s.engine, &s.orbit, &holes, c.burn_in).map(Value::from))?;
    let complement = holes.hole(&s.orbit, n as i64).complement();
    let conditional = unsupported_as_null(
        conditional_invariance_check(&s.engine, &s.orbit, &holes, &complement, n, c.burn_in).map(Value::from),
    )?;
    let mut v = s.base("raccim");
    put(&mut v, "n", n.into());
    put(&mut v, "survivor_mass", lhs.into());
    put(&mut v, "alpha_product", rhs.into());
    put(&mut v, "forward_identity_residual", forward);
    put(&mut v, "conditional_invariance_residual", conditional);
    art.summary("raccim.json", v)?;
    Ok(())
}

pub fn decay(s: &Setup, art: &mut Artifacts) -> RunResult {
    let c = &s.config;
    let d = c.decay()?;
    let rep = decay_rate_estimate(&s.engine, &s.orbit, &d.f.to_step()?, &d.h.to_step()?, d.n_max, d.min_lag, c.burn_in)?;
    art.csv("decay.csv", &rep.to_csv())?;
    let mut v = s.base("decay");
    put(&mut v, "kappa", rep.kappa.into());
    put(&mut v, "r_squared", rep.r_squared.into());
    put(&mut v, "fit_lags", json!([rep.fit_lags.0, rep.fit_lags.1]));
    put(&mut v, "floor", rep.floor.into());
    art.summary("decay.json", v)?;
    Ok(())
}

/// Write the validation report, then fail with exit code 2 on any violation.
pub fn validate_config(config: &ExperimentConfig, art: &mut Artifacts) -> RunResult {
    let report = validate(config)?;
    art.summary(
        "validate.json",
        json!({
            "subcommand": "validate",
            "config": to_value(config),
            "passed": report.passed(),
            "checks": to_value(&report.checks),
            "warnings": report.warnings,
        }),
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    report.into_result()?;
    Ok(())
}

pub fn selftest(art: &mut Artifacts) -> RunResult {
    let report = run_suite()?;
    art.csv("selftest.csv", &report.to_csv())?;
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("violated: {} [{}]: {:e} vs {:e}", c.property, c.system, c.value, c.threshold);
    }
    art.summary(
        "selftest.json",
        json!({"subcommand": "selftest", "passed": failed == 0, "checks": to_value(&report.checks)}),
    )?;
    if failed > 0 {
        return Err(RunError::SelftestFailed {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(())
}
