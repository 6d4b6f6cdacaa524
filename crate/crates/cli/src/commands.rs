//! One entry point per subcommand: validate, compute, emit artifacts,
//! and return a JSON summary for standard output.

use crate::config::*;
use crate::output;
use crate::CliError;
use enstrack::discrete_tracking::{
    displacement_interpolate_many, solve_tracking, TrackingProblem, PLAN_SUPPORT_TOL,
};
use enstrack::gaussian_tracking::track_gaussian;
use enstrack::lti;
use enstrack::measures::DiscreteMeasure;
use enstrack::observability::{ensemble_observable_lti, Witness};
use enstrack::transport;
use serde_json::{json, Value};
use std::path::Path;

pub fn run_gramian(cfg: &GramianConfig) -> Result<Value, CliError> {
    let sys = cfg.system.build()?;
    let [t0, t1] = cfg.horizon;
    if t0 >= t1 {
        return Err(CliError::config("horizon must satisfy t0 < t1"));
    }
    let w = lti::controllability_gramian(&sys, t1, t0).map_err(CliError::numerical)?;
    let m = lti::observability_gramian(&sys, t0, t1).map_err(CliError::numerical)?;
    output::write_matrix_csv(&cfg.out_dir.join("ctrl_gramian.csv"), &w)?;
    output::write_matrix_csv(&cfg.out_dir.join("obs_gramian.csv"), &m)?;
    Ok(json!({
        "command": "gramian",
        "seed": cfg.seed,
        "horizon": [t0, t1],
        "files": ["ctrl_gramian.csv", "obs_gramian.csv"],
    }))
}

pub fn run_min_energy(cfg: &MinEnergyConfig) -> Result<Value, CliError> {
    let sys = cfg.system.build()?;
    let [t0, t1] = cfg.horizon;
    if t0 >= t1 {
        return Err(CliError::config("horizon must satisfy t0 < t1"));
    }
    if cfg.x0.len() != sys.state_dim() || cfg.x1.len() != sys.state_dim() {
        return Err(CliError::config(format!(
            "boundary states must have dimension {}",
            sys.state_dim()
        )));
    }
    let cost = lti::min_energy_cost(&sys, &cfg.x0, &cfg.x1, t0, t1).map_err(CliError::numerical)?;
    let law =
        lti::min_energy_control(&sys, &cfg.x0, &cfg.x1, t0, t1).map_err(CliError::numerical)?;
    let (sol, energy) = law.simulate(&cfg.x0).map_err(CliError::numerical)?;
    // resample the trajectory and the control on a uniform grid
    let samples = cfg.samples.max(2);
    let mut rows = String::new();
    let n = sys.state_dim();
    let m_dim = sys.input_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m_dim).map(|i| format!("u_{i}")));
    rows.push_str(&header.join(","));
    rows.push('\n');
    for k in 0..=samples {
        let t = t0 + (t1 - t0) * k as f64 / samples as f64;
        let x = sol.interpolate(t);
        let u = if t < t1 {
            law.eval(t, &x).map_err(CliError::numerical)?
        } else {
            vec![f64::NAN; m_dim]
        };
        let mut row = vec![output::fmt_f64(t)];
        row.extend(x.iter().map(|v| output::fmt_f64(*v)));
        row.extend(u.iter().map(|v| output::fmt_f64(*v)));
        rows.push_str(&row.join(","));
        rows.push('\n');
    }
    let path = cfg.out_dir.join("trajectory.csv");
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::config(format!("cannot create out_dir: {e}")))?;
    std::fs::write(&path, rows)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(json!({
        "command": "min-energy",
        "seed": cfg.seed,
        "cost": cost,
        "simulated_energy": energy,
        "endpoint": sol.final_state(),
        "files": ["trajectory.csv"],
    }))
}

pub fn run_wasserstein(cfg: &WassersteinConfig, base_dir: &Path) -> Result<Value, CliError> {
    if cfg.p < 1.0 {
        return Err(CliError::config("p must be at least 1"));
    }
    let mu = cfg.mu.build(base_dir)?;
    let nu = cfg.nu.build(base_dir)?;
    if mu.dim() != nu.dim() {
        return Err(CliError::config("measures must share a dimension"));
    }
    let cost = transport::CostMatrix::euclidean_power(mu.atoms(), nu.atoms(), cfg.p)
        .map_err(CliError::numerical)?;
    let sol = transport::solve_kantorovich(&mu, &nu, &cost).map_err(CliError::numerical)?;
    let distance = sol.value.max(0.0).powf(1.0 / cfg.p);
    output::write_plan_csv(&cfg.out_dir.join("plan.csv"), sol.plan.coupling(), 0.0)?;
    Ok(json!({
        "command": "wasserstein",
        "seed": cfg.seed,
        "p": cfg.p,
        "distance": distance,
        "optimal_cost": sol.value,
        "files": ["plan.csv"],
    }))
}

pub fn run_track(cfg: &TrackConfig, base_dir: &Path) -> Result<Value, CliError> {
    let sys = cfg.system.build()?;
    if cfg.outputs.len() < 2 {
        return Err(CliError::config("need outputs at two or more times"));
    }
    let grid = cfg.grid.build()?;
    if grid.dim() != sys.state_dim() {
        return Err(CliError::config(format!(
            "grid dimension {} must match the state dimension {}",
            grid.dim(),
            sys.state_dim()
        )));
    }
    let outputs: Vec<DiscreteMeasure> = cfg
        .outputs
        .iter()
        .map(|spec| spec.build(base_dir))
        .collect::<Result<_, _>>()?;
    for mu in &outputs {
        if mu.dim() != sys.output_dim() {
            return Err(CliError::config(format!(
                "output measures must have dimension {}",
                sys.output_dim()
            )));
        }
    }
    let problem = TrackingProblem {
        system: sys.clone(),
        outputs,
        grid,
        mode: parse_mode(&cfg.mode)?,
    };
    let solution = solve_tracking(&problem).map_err(CliError::numerical)?;
    let mut files = Vec::new();
    for (k, marginal) in solution.marginals.iter().enumerate() {
        let name = format!("marginal_{k}.csv");
        output::write_measure_csv(&cfg.out_dir.join(&name), marginal)?;
        files.push(name);
    }
    for (k, plan) in solution.plans.iter().enumerate() {
        let name = format!("plan_{k}.csv");
        output::write_plan_csv(&cfg.out_dir.join(&name), plan, PLAN_SUPPORT_TOL)?;
        files.push(name);
    }
    // sampled displacement interpolant across all intervals
    let samples = cfg.samples_per_interval.max(1);
    let mut times = Vec::new();
    let mut measures = Vec::new();
    for k in 0..solution.horizon() {
        let upto = if k + 1 == solution.horizon() {
            samples + 1
        } else {
            samples
        };
        let ts: Vec<f64> = (0..upto)
            .map(|j| k as f64 + j as f64 / samples as f64)
            .collect();
        let mus = displacement_interpolate_many(&solution, &sys, k, &ts)
            .map_err(CliError::numerical)?;
        times.extend(ts);
        measures.extend(mus);
    }
    output::write_interpolant_csv(&cfg.out_dir.join("interpolant.csv"), &times, &measures)?;
    files.push("interpolant.csv".to_string());
    Ok(json!({
        "command": "track",
        "seed": cfg.seed,
        "mode": cfg.mode,
        "objective": solution.objective,
        "files": files,
    }))
}

pub fn run_track_gaussian(cfg: &TrackGaussianConfig) -> Result<Value, CliError> {
    let sys = cfg.system.build()?;
    if cfg.outputs.len() < 2 {
        return Err(CliError::config("need outputs at two or more times"));
    }
    let outputs = cfg
        .outputs
        .iter()
        .map(|g| {
            let built = g.build()?;
            if built.dim() != sys.output_dim() {
                return Err(CliError::config(format!(
                    "output Gaussians must have dimension {}",
                    sys.output_dim()
                )));
            }
            Ok(built)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let solution = track_gaussian(&sys, &outputs, cfg.samples_per_interval.max(1))
        .map_err(CliError::numerical)?;
    output::write_series_csv(
        &cfg.out_dir.join("series.csv"),
        &solution.sample_times,
        &solution.samples,
    )?;
    output::write_ribbon_svg(
        &cfg.out_dir.join("ribbon.svg"),
        &solution.sample_times,
        &solution.samples,
    )?;
    Ok(json!({
        "command": "track-gaussian",
        "seed": cfg.seed,
        "covariance_objective": solution.covariance_objective,
        "files": ["series.csv", "ribbon.svg"],
    }))
}

pub fn run_observability(cfg: &ObservabilityConfig) -> Result<Value, CliError> {
    let a = parse_matrix(&cfg.a)?;
    let c = parse_matrix(&cfg.c)?;
    if !a.is_square() || c.cols() != a.rows() {
        return Err(CliError::config(
            "A must be square and C must have matching columns",
        ));
    }
    let report = ensemble_observable_lti(&a, &c).map_err(CliError::numerical)?;
    let witness = match &report.witness {
        Witness::RankCertificate { pivot_columns } => json!({
            "rank_certificate": { "pivot_columns": pivot_columns }
        }),
        Witness::UnobservableDirection(nu) => json!({
            "unobservable_direction": nu
        }),
    };
    let body = json!({
        "command": "observability",
        "seed": cfg.seed,
        "observable": report.observable,
        "method": report.method,
        "witness": witness,
    });
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::config(format!("cannot create out_dir: {e}")))?;
    let path = cfg.out_dir.join("observability.json");
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap())
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(body)
}

pub fn run_ctrl_measure(cfg: &CtrlMeasureConfig, base_dir: &Path) -> Result<Value, CliError> {
    if cfg.t_max <= 0.0 {
        return Err(CliError::config("t_max must be positive"));
    }
    let field = cfg.field.build()?;
    let region = cfg.region.build()?;
    let mu0 = cfg.mu0.build(base_dir)?;
    let mu1 = cfg.mu1.build(base_dir)?;
    if mu0.dim() != field.dim() || mu1.dim() != field.dim() {
        return Err(CliError::config(format!(
            "measures must have the field dimension {}",
            field.dim()
        )));
    }
    let report =
        enstrack::ctrl_measure::controllability_measure(&field, &region, &mu0, &mu1, cfg.t_max)
            .map_err(CliError::numerical)?;
    output::write_cdf_csv(&cfg.out_dir.join("forward_cdf.csv"), report.forward.steps())?;
    output::write_cdf_csv(
        &cfg.out_dir.join("backward_cdf.csv"),
        report.backward.steps(),
    )?;
    Ok(json!({
        "command": "ctrl-measure",
        "seed": cfg.seed,
        "s": report.s,
        "paired_max": report.paired_max,
        "paired_agrees": report.paired_agrees,
        "files": ["forward_cdf.csv", "backward_cdf.csv"],
    }))
}
