//! Monte-Carlo sweeps over the simulation parameters, with paired user drops across methods
//! and CSV/JSON output for external plotting.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fulldigital_mmf, hybrid_mmf, UlaGeometry};
use crate::error::{invalid, PassError, Result};
use crate::pdd::{pdd_solve, PddConfig, TraceRow};
use crate::rates::Structure;
use crate::scenario::{build_scenario, Scenario, ScenarioConfig, UserLayout};
use crate::ws_unicast::solve_unicast_ws;

/// Environment variable holding the worker count of [`run_experiment`].
pub const WORKERS_ENV: &str = "PASS_WORKERS";
pub const DEFAULT_REALIZATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Wm,
    Wd,
    Ws,
    /// Placement + MRT + time sharing; unicast only.
    WsFast,
    FullyDigital,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Wm,
        Method::Wd,
        Method::Ws,
        Method::WsFast,
        Method::FullyDigital,
        Method::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wm => "wm",
            Method::Wd => "wd",
            Method::Ws => "ws",
            Method::WsFast => "ws-fast",
            Method::FullyDigital => "fully-digital",
            Method::Hybrid => "hybrid",
        }
    }

    pub fn structure(self) -> Option<Structure> {
        match self {
            Method::Wm => Some(Structure::Wm),
            Method::Wd => Some(Structure::Wd),
            Method::Ws => Some(Structure::Ws),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traffic {
    /// One user per group.
    Unicast,
    Multicast,
}

/// Parameter swept along the x-axis of a figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PMaxDbm,
    NPas,
    SxM,
    WM,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::PMaxDbm => "p_max_dbm",
            SweepAxis::NPas => "n_pas",
            SweepAxis::SxM => "s_x_m",
            SweepAxis::WM => "w_m",
        }
    }

    /// Configuration and transmit power for one sweep point.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<(ScenarioConfig, f64)> {
        let mut cfg = base.clone();
        let mut p_dbm = base.default_p_max_dbm();
        match self {
            SweepAxis::PMaxDbm => p_dbm = value,
            SweepAxis::NPas => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(invalid("n_pas", format!("sweep value {value} is not a positive integer")));
                }
                cfg.n_pas = value as usize;
            }
            SweepAxis::SxM => cfg.s_x_m = value,
            SweepAxis::WM => cfg.w_m = value,
        }
        Ok((cfg, p_dbm))
    }
}

/// The six reproduced figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    Convergence,
    PowerUnicast,
    PowerMulticast,
    PaCount,
    UserSpread,
    WaveguideGap,
}

impl FromStr for Figure {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3" => Ok(Figure::Convergence),
            "4a" => Ok(Figure::PowerUnicast),
            "4b" => Ok(Figure::PowerMulticast),
            "5" => Ok(Figure::PaCount),
            "6" => Ok(Figure::UserSpread),
            "7" => Ok(Figure::WaveguideGap),
            _ => Err(invalid("figure", format!("unknown figure `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: ScenarioConfig,
    pub traffic: Traffic,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub realizations: usize,
    pub base_seed: u64,
    pub pdd: PddConfig,
}

impl ExperimentSpec {
    /// Sweep of `figure` over the default sets, on top of `base`.
    pub fn figure(figure: Figure, base: ScenarioConfig, realizations: usize) -> Self {
        use Method::*;
        let pass = vec![Wm, Wd, Ws];
        let with_baselines = vec![Wm, Wd, Ws, FullyDigital, Hybrid];
        let p = base.default_p_max_dbm();
        let (name, traffic, axis, values, methods) = match figure {
            Figure::Convergence => ("fig3", Traffic::Multicast, SweepAxis::PMaxDbm, vec![p], pass),
            Figure::PowerUnicast => (
                "fig4a",
                Traffic::Unicast,
                SweepAxis::PMaxDbm,
                base.p_max_dbm_list.clone(),
                vec![Wm, Wd, Ws, WsFast, FullyDigital, Hybrid],
            ),
            Figure::PowerMulticast => (
                "fig4b",
                Traffic::Multicast,
                SweepAxis::PMaxDbm,
                base.p_max_dbm_list.clone(),
                with_baselines,
            ),
            Figure::PaCount => (
                "fig5",
                Traffic::Multicast,
                SweepAxis::NPas,
                vec![4.0, 6.0, 8.0, 10.0, 12.0],
                pass,
            ),
            Figure::UserSpread => (
                "fig6",
                Traffic::Multicast,
                SweepAxis::SxM,
                vec![2.0, 4.0, 6.0, 8.0, 10.0],
                with_baselines,
            ),
            Figure::WaveguideGap => (
                "fig7",
                Traffic::Multicast,
                SweepAxis::WM,
                (1..=8).map(|i| 5.0 * i as f64).collect(),
                with_baselines,
            ),
        };
        let base_seed = base.seeds.first().copied().unwrap_or(0);
        Self {
            name: name.into(),
            base,
            traffic,
            axis,
            values,
            methods,
            realizations: if figure == Figure::Convergence { 1 } else { realizations },
            base_seed,
            pdd: PddConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(invalid("realizations", "need at least one realization"));
        }
        if self.values.is_empty() || self.methods.is_empty() {
            return Err(invalid("values", "need at least one sweep value and one method"));
        }
        if self.traffic == Traffic::Multicast && self.methods.contains(&Method::WsFast) {
            return Err(invalid("methods", "ws-fast only serves unicast traffic"));
        }
        self.pdd.validate()?;
        for &v in &self.values {
            let (cfg, p) = self.axis.apply(&self.base, v)?;
            build_scenario(&self.scenario_config(cfg), p)?;
        }
        Ok(())
    }

    fn scenario_config(&self, mut cfg: ScenarioConfig) -> ScenarioConfig {
        if self.traffic == Traffic::Unicast {
            cfg.g_users = 1;
        }
        cfg
    }

    /// Scenario of one sweep point.
    pub fn scenario(&self, value: f64) -> Result<Scenario> {
        let (cfg, p) = self.axis.apply(&self.base, value)?;
        build_scenario(&self.scenario_config(cfg), p)
    }

    pub fn seed(&self, realization: usize) -> u64 {
        self.base_seed.wrapping_add(realization as u64)
    }
}

/// Result of one method on one user drop.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub min_rate: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl MethodOutcome {
    fn direct(min_rate: f64, iterations: usize) -> Self {
        Self {
            min_rate,
            outer_iterations: iterations,
            inner_iterations: 0,
            final_residual: 0.0,
            converged: true,
        }
    }
}

/// Runs one method on one user drop.
pub fn solve_method(method: Method, scenario: &Scenario, users: &UserLayout, pdd: &PddConfig) -> Result<MethodOutcome> {
    let rf = &scenario.rf;
    let k = users.group_count;
    match method {
        Method::Wm | Method::Wd | Method::Ws => {
            let structure = method.structure().expect("PASS method");
            let out = pdd_solve(scenario, users, structure, pdd)?;
            Ok(MethodOutcome {
                min_rate: out.min_rate(),
                outer_iterations: out.outer_iterations,
                inner_iterations: out.inner_iterations,
                final_residual: out.final_residual,
                converged: out.converged,
            })
        }
        Method::WsFast => Ok(MethodOutcome::direct(solve_unicast_ws(scenario, users)?.min_rate(), 1)),
        Method::FullyDigital => {
            let sol = fulldigital_mmf(users, &UlaGeometry::standard(k, rf)?, rf)?;
            Ok(MethodOutcome::direct(sol.min_rate(), sol.iterations))
        }
        Method::Hybrid => {
            let n = scenario.geometry.antennas_per_waveguide;
            let sol = hybrid_mmf(users, &UlaGeometry::standard(k * n, rf)?, rf, n)?;
            Ok(MethodOutcome::direct(sol.min_rate(), 1))
        }
    }
}

/// One (method, sweep value, seed) cell. Failed solves keep a NaN rate and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub value: f64,
    pub seed: u64,
    pub min_rate: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub failed: bool,
    pub error: String,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub value: f64,
    pub mean_min_rate: f64,
    pub std_min_rate: f64,
    pub realizations: usize,
    pub failures: usize,
    pub unconverged: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Sorts rows by method, value and seed.
    pub fn normalize(&mut self) {
        self.rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.value.total_cmp(&b.value))
                .then(a.seed.cmp(&b.seed))
        });
    }

    pub fn select(&self, method: Method, value: f64) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.method == method && r.value == value)
    }

    /// Successful rates of one cell keyed by seed.
    pub fn rates(&self, method: Method, value: f64) -> Vec<(u64, f64)> {
        self.select(method, value)
            .filter(|r| !r.failed)
            .map(|r| (r.seed, r.min_rate))
            .collect()
    }

    pub fn mean(&self, method: Method, value: f64) -> Option<f64> {
        let v = self.rates(method, value);
        (!v.is_empty()).then(|| v.iter().map(|(_, r)| r).sum::<f64>() / v.len() as f64)
    }

    /// Mean and sample standard deviation of every (method, value) cell, in row order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(Method, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|&(m, v)| m == r.method && v == r.value) {
                keys.push((r.method, r.value));
            }
        }
        keys.into_iter()
            .map(|(method, value)| {
                let cell: Vec<&ResultRow> = self.select(method, value).collect();
                let ok: Vec<f64> = cell.iter().filter(|r| !r.failed).map(|r| r.min_rate).collect();
                let n = ok.len();
                let mean = if n > 0 { ok.iter().sum::<f64>() / n as f64 } else { f64::NAN };
                let std = if n > 1 {
                    (ok.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                AggregateRow {
                    method,
                    value,
                    mean_min_rate: mean,
                    std_min_rate: std,
                    realizations: cell.len(),
                    failures: cell.len() - n,
                    unconverged: cell.iter().filter(|r| !r.failed && !r.converged).count(),
                }
            })
            .collect()
    }
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_cell(spec: &ExperimentSpec, value: f64, realization: usize) -> Vec<ResultRow> {
    let seed = spec.seed(realization);
    let drop = spec.scenario(value).and_then(|s| s.sample_users(seed).map(|u| (s, u)));
    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = drop
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|(s, u)| solve_method(method, s, u, &spec.pdd));
            let wall_time_s = start.elapsed().as_secs_f64();
            match outcome {
                Ok(o) => ResultRow {
                    method,
                    value,
                    seed,
                    min_rate: o.min_rate,
                    outer_iterations: o.outer_iterations,
                    inner_iterations: o.inner_iterations,
                    final_residual: o.final_residual,
                    converged: o.converged,
                    failed: false,
                    error: String::new(),
                    wall_time_s,
                },
                Err(e) => ResultRow {
                    method,
                    value,
                    seed,
                    min_rate: f64::NAN,
                    outer_iterations: 0,
                    inner_iterations: 0,
                    final_residual: f64::NAN,
                    converged: false,
                    failed: true,
                    error: e.to_string(),
                    wall_time_s,
                },
            }
        })
        .collect()
}

/// Runs every (value, realization) cell on a pool of [`worker_count`] threads. Every method
/// of a cell sees the same user drop.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.realizations).map(move |r| (v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    let rows: Vec<ResultRow> = pool.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(v, r)| run_cell(spec, v, r))
            .collect()
    });
    let mut table = ResultTable { rows };
    table.normalize();
    Ok(table)
}

/// Writes `results.csv`, `results_agg.csv`, `timings.csv` and `config.json` under `dir`.
pub fn write_outputs(table: &ResultTable, spec: &ExperimentSpec, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut raw = csv::Writer::from_path(dir.join("results.csv"))?;
    for r in &table.rows {
        raw.serialize(r)?;
    }
    raw.flush()?;
    let mut agg = csv::Writer::from_path(dir.join("results_agg.csv"))?;
    for a in table.aggregate() {
        agg.serialize(a)?;
    }
    agg.flush()?;
    let mut timing = csv::Writer::from_path(dir.join("timings.csv"))?;
    timing.write_record(["method", "value", "seed", "wall_time_s"])?;
    for r in &table.rows {
        timing.write_record([
            r.method.to_string(),
            r.value.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    timing.flush()?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Runs one PDD structure and writes its per-iteration trace to
/// `dir/traces/<structure>_seed<seed>.csv`.
pub fn emit_convergence_trace(
    structure: Structure,
    scenario: &Scenario,
    seed: u64,
    pdd: &PddConfig,
    dir: &Path,
) -> anyhow::Result<(PathBuf, Vec<TraceRow>)> {
    let users = scenario.sample_users(seed)?;
    let out = pdd_solve(scenario, &users, structure, pdd)?;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    let path = traces.join(format!("{structure}_seed{seed}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for row in &out.trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok((path, out.trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(methods: Vec<Method>, traffic: Traffic) -> ExperimentSpec {
        let mut spec = ExperimentSpec::figure(Figure::PowerMulticast, ScenarioConfig::default(), 2);
        spec.values = vec![20.0];
        spec.methods = methods;
        spec.traffic = traffic;
        spec.base.n_pas = 2;
        spec
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
        assert_eq!("4b".parse::<Figure>().unwrap(), Figure::PowerMulticast);
        assert!("8".parse::<Figure>().is_err());
    }

    #[test]
    fn one_cell_gives_one_row() {
        let mut spec = tiny_spec(vec![Method::FullyDigital], Traffic::Multicast);
        spec.realizations = 1;
        let table = run_experiment(&spec).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(!table.rows[0].failed);
    }

    #[test]
    fn rows_are_sorted_and_paired() {
        let spec = tiny_spec(vec![Method::Hybrid, Method::FullyDigital], Traffic::Multicast);
        let table = run_experiment(&spec).unwrap();
        assert_eq!(table.rows.len(), 4);
        let keys: Vec<(Method, u64)> = table.rows.iter().map(|r| (r.method, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let a: Vec<u64> = table.rates(Method::Hybrid, 20.0).iter().map(|p| p.0).collect();
        let b: Vec<u64> = table.rates(Method::FullyDigital, 20.0).iter().map(|p| p.0).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_recomputes_from_rows() {
        let spec = tiny_spec(vec![Method::FullyDigital], Traffic::Multicast);
        let table = run_experiment(&spec).unwrap();
        let agg = table.aggregate();
        assert_eq!(agg.len(), 1);
        let rates: Vec<f64> = table.rows.iter().map(|r| r.min_rate).collect();
        let mean = rates.iter().sum::<f64>() / 2.0;
        assert!((agg[0].mean_min_rate - mean).abs() < 1e-12);
        let std = ((rates[0] - mean).powi(2) + (rates[1] - mean).powi(2)).sqrt();
        assert!((agg[0].std_min_rate - std).abs() < 1e-12);
    }

    #[test]
    fn failures_become_flagged_rows() {
        let spec = tiny_spec(vec![Method::WsFast], Traffic::Unicast);
        let mut table = run_experiment(&spec).unwrap();
        assert!(table.rows.iter().all(|r| !r.failed));
        let mut bad = spec.clone();
        bad.traffic = Traffic::Multicast;
        assert!(run_experiment(&bad).is_err());
        table.rows.push(run_cell(&bad, 20.0, 0).remove(0));
        assert!(table.rows.last().unwrap().failed);
        assert_eq!(table.aggregate()[0].failures, 1);
    }

    #[test]
    fn sweep_axis_applies_values() {
        let base = ScenarioConfig::default();
        assert_eq!(SweepAxis::NPas.apply(&base, 4.0).unwrap().0.n_pas, 4);
        assert!(SweepAxis::NPas.apply(&base, 4.5).is_err());
        assert_eq!(SweepAxis::WM.apply(&base, 40.0).unwrap().0.w_m, 40.0);
        assert_eq!(SweepAxis::PMaxDbm.apply(&base, 5.0).unwrap().1, 5.0);
        assert_eq!(SweepAxis::SxM.apply(&base, 2.0).unwrap().1, 20.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec(vec![Method::Wm], Traffic::Multicast);
        spec.realizations = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(vec![Method::Wm], Traffic::Multicast);
        spec.values.clear();
        assert!(spec.validate().is_err());
    }
}
