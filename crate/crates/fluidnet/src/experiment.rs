//! Monte-Carlo comparison of the two robust models.
//!
//! For a grid of uncertainty fractions ε and a batch of random networks,
//! this module solves both robust counterparts against the box set, carries
//! the rates-model optimum over to the effort model with the certain
//! slowdown transformation, replays both controls against shared random
//! service-time paths, and reports the relative improvement
//! `Δ₁₂ = (z₁ − z₂)/z₁` of the native effort control (cost `z₂`) over the
//! transformed rates control (cost `z₁`).
//!
//! Every random draw is derived from the base seed with a counter scheme
//! ([`mix`]-style splitmix chains), never from execution order, so reports
//! are byte-identical across thread counts. Raw network draws and path
//! phases do not depend on ε: runs at different fractions see the same
//! nominal instances and the same wobble shapes, scaled — common random
//! numbers across the whole ε grid, not just within one cell.

use crate::discretization::uniform_grid;
use crate::network::random_network;
use crate::robustize::{build_robust_effort, build_robust_rates};
use crate::simulate::{holding_cost, realize_tau, simulate_trajectory, transform_control};
use crate::uncertainty::UncertaintySet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Quadrature subdivisions per control interval when replaying controls.
const SUBSTEPS: usize = 8;

/// A solved counterpart with a duality gap above this (relative) bound is
/// treated as a solver failure for its whole parameter cell.
const GAP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Invalid(String),
    #[error("realized cost z1 is zero, the relative improvement is undefined")]
    DegenerateBaseline,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.2]
}

fn default_draws() -> usize {
    10
}

fn default_grid() -> usize {
    12
}

fn default_output() -> String {
    "experiment".to_string()
}

/// Parameters of one experiment run. The JSON form uses exactly these field
/// names; unknown fields are rejected so typos surface as errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_servers: usize,
    pub flows_per_server: usize,
    /// Uncertainty fractions, each strictly inside (0, 1).
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Random networks per ε.
    #[serde(default = "default_draws")]
    pub n_param_draws: usize,
    /// Service-time paths per network.
    #[serde(default = "default_draws")]
    pub n_realizations: usize,
    /// Control intervals of the solved counterparts.
    #[serde(default = "default_grid")]
    pub grid_intervals: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Prefix for the written CSVs: `{output}_report.csv` and
    /// `{output}_summary.csv`.
    #[serde(default = "default_output")]
    pub output: String,
}

impl ExperimentConfig {
    /// A configuration with the documented defaults for everything but the
    /// network size.
    pub fn sized(num_servers: usize, flows_per_server: usize) -> Self {
        ExperimentConfig {
            num_servers,
            flows_per_server,
            epsilons: default_epsilons(),
            n_param_draws: default_draws(),
            n_realizations: default_draws(),
            grid_intervals: default_grid(),
            base_seed: 0,
            output: default_output(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let mut problems = Vec::new();
        if self.num_servers == 0 || self.flows_per_server == 0 {
            problems.push("num_servers and flows_per_server must be at least 1".to_string());
        }
        if self.epsilons.is_empty() {
            problems.push("epsilons must not be empty".to_string());
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e < 1.0) {
                problems.push(format!("epsilon {e} must lie strictly inside (0, 1)"));
            }
        }
        if self.n_param_draws == 0 || self.n_realizations == 0 {
            problems.push("n_param_draws and n_realizations must be at least 1".to_string());
        }
        if self.grid_intervals == 0 {
            problems.push("grid_intervals must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Invalid(problems.join("; ")))
        }
    }
}

/// Relative improvement `(z1 − z2)/z1` of cost `z2` over baseline `z1`.
pub fn delta12(z1: f64, z2: f64) -> Result<f64, ExperimentError> {
    if z1 == 0.0 {
        Err(ExperimentError::DegenerateBaseline)
    } else {
        Ok((z1 - z2) / z1)
    }
}

/// One replayed service-time path for one network and fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub epsilon: f64,
    /// Seed the network was drawn from.
    pub param_seed: u64,
    /// Seed the service-time path was drawn from (shared by both controls).
    pub real_seed: u64,
    /// Realized cost of the transformed rates-model control.
    pub z1: f64,
    /// Realized cost of the effort-model control.
    pub z2: f64,
    /// `(z1 − z2)/z1`; NaN when `z1 = 0`. Cells with `z1 ≤ 0` are kept in
    /// the report but excluded from the means.
    pub delta12: f64,
    /// Lowest buffer level either control let any buffer reach.
    pub min_x_a: f64,
    pub min_x_b: f64,
}

/// Robust objectives of one parameter draw, kept alongside the realized
/// costs so bound-versus-realization questions stay answerable.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub epsilon: f64,
    pub param_seed: u64,
    /// Optimal value of the rates-model counterpart.
    pub robust_rates: f64,
    /// Optimal value of the effort-model counterpart.
    pub robust_effort: f64,
    /// The transformed rates control scored by the effort-model counterpart;
    /// never below `robust_effort`, by optimality.
    pub transformed_in_effort: f64,
}

/// A parameter cell that could not be evaluated (solver trouble); its
/// would-be realizations are absent from the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub epsilon: f64,
    pub param_seed: u64,
    pub message: String,
}

/// Per-ε aggregate over valid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub epsilon: f64,
    /// Mean `Δ₁₂` over valid cells, in percent.
    pub mean_delta12_pct: f64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    /// ε-major, then parameter draw, then realization — config order, not
    /// completion order.
    pub records: Vec<CellRecord>,
    pub bounds: Vec<BoundRecord>,
    pub failures: Vec<CellFailure>,
    /// Number of records with `z1 ≤ 0`, excluded from the means.
    pub excluded: usize,
}

impl ExperimentReport {
    /// Pooled per-ε means over all valid cells, in the order the fractions
    /// appeared in the configuration.
    pub fn summary(&self, epsilons: &[f64]) -> Vec<SummaryRow> {
        epsilons
            .iter()
            .map(|&eps| {
                let mut total = 0.0;
                let mut n_valid = 0;
                for r in self.records.iter().filter(|r| r.epsilon == eps) {
                    if r.z1 > 0.0 {
                        total += r.delta12;
                        n_valid += 1;
                    }
                }
                SummaryRow {
                    epsilon: eps,
                    mean_delta12_pct: if n_valid == 0 {
                        f64::NAN
                    } else {
                        100.0 * total / n_valid as f64
                    },
                    n_valid,
                }
            })
            .collect()
    }

    /// `epsilon,param_seed,real_seed,z1,z2,delta12,min_x_A,min_x_B`
    pub fn report_csv(&self) -> String {
        let mut out = String::from("epsilon,param_seed,real_seed,z1,z2,delta12,min_x_A,min_x_B\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epsilon, r.param_seed, r.real_seed, r.z1, r.z2, r.delta12, r.min_x_a, r.min_x_b
            );
        }
        out
    }

    /// `epsilon,mean_delta12_pct,n_valid`
    pub fn summary_csv(&self, epsilons: &[f64]) -> String {
        let mut out = String::from("epsilon,mean_delta12_pct,n_valid\n");
        for row in self.summary(epsilons) {
            let _ = writeln!(out, "{},{},{}", row.epsilon, row.mean_delta12_pct, row.n_valid);
        }
        out
    }

    /// Write `{prefix}_report.csv` and `{prefix}_summary.csv`.
    pub fn write_csv_files(
        &self,
        prefix: &Path,
        epsilons: &[f64],
    ) -> std::io::Result<(PathBuf, PathBuf)> {
        let file_for = |suffix: &str| -> PathBuf {
            let mut name = prefix.file_name().unwrap_or_default().to_os_string();
            name.push(suffix);
            prefix.with_file_name(name)
        };
        let report_path = file_for("_report.csv");
        let summary_path = file_for("_summary.csv");
        std::fs::write(&report_path, self.report_csv())?;
        std::fs::write(&summary_path, self.summary_csv(epsilons))?;
        Ok((report_path, summary_path))
    }
}

/// One splitmix64 scramble step.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a counter path into one seed. Position matters, so distinct counter
/// paths give unrelated streams.
fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

fn param_seed(base: u64, draw: usize) -> u64 {
    mix(&[base, 1, draw as u64])
}

fn realization_seed(base: u64, draw: usize, realization: usize) -> u64 {
    mix(&[base, 2, draw as u64, realization as u64])
}

/// Evaluate one (ε, parameter draw) cell: solve both counterparts, replay
/// both controls on each shared path.
fn run_param_cell(
    cfg: &ExperimentConfig,
    eps: f64,
    draw: usize,
) -> Result<(BoundRecord, Vec<CellRecord>), CellFailure> {
    let p_seed = param_seed(cfg.base_seed, draw);
    let fail = |message: String| CellFailure {
        epsilon: eps,
        param_seed: p_seed,
        message,
    };

    let net = random_network(cfg.num_servers, cfg.flows_per_server, eps, p_seed)
        .map_err(|e| fail(e.to_string()))?;
    let grid = uniform_grid(net.horizon, cfg.grid_intervals)
        .map_err(|e| fail(e.to_string()))?;
    let service = UncertaintySet::box_set(net.num_flows).map_err(|e| fail(e.to_string()))?;

    let rates = build_robust_rates(&net, &service, &grid).map_err(|e| fail(e.to_string()))?;
    let effort = build_robust_effort(&net, &service, &grid).map_err(|e| fail(e.to_string()))?;
    let solve = |problem: &crate::robustize::RobustProblem, which: &str| {
        let sol = problem.solve().map_err(|e| fail(e.to_string()))?;
        if sol.status != crate::lp::LpStatus::Optimal {
            return Err(fail(format!("the {which} counterpart ended {}", sol.status)));
        }
        if sol.duality_gap > GAP_TOL * (1.0 + sol.objective.abs()) {
            return Err(fail(format!(
                "the {which} counterpart closed with duality gap {:.3e}",
                sol.duality_gap
            )));
        }
        Ok(sol)
    };
    let sol_rates = solve(&rates, "rates")?;
    let sol_effort = solve(&effort, "effort")?;

    let u = rates
        .extract_control(&sol_rates)
        .map_err(|e| fail(e.to_string()))?;
    let eta_b = effort
        .extract_control(&sol_effort)
        .map_err(|e| fail(e.to_string()))?;
    let eta_a = transform_control(&net, &u, eps).map_err(|e| fail(e.to_string()))?;
    let crossed = effort
        .evaluate_control(&eta_a)
        .map_err(|e| fail(e.to_string()))?;
    let bound = BoundRecord {
        epsilon: eps,
        param_seed: p_seed,
        robust_rates: sol_rates.objective,
        robust_effort: sol_effort.objective,
        transformed_in_effort: crossed.objective,
    };

    let mut records = Vec::with_capacity(cfg.n_realizations);
    for r in 0..cfg.n_realizations {
        let r_seed = realization_seed(cfg.base_seed, draw, r);
        let path = realize_tau(&net, eps, r_seed).map_err(|e| fail(e.to_string()))?;
        let traj_a =
            simulate_trajectory(&net, &eta_a, &path, SUBSTEPS).map_err(|e| fail(e.to_string()))?;
        let traj_b =
            simulate_trajectory(&net, &eta_b, &path, SUBSTEPS).map_err(|e| fail(e.to_string()))?;
        let z1 = holding_cost(&traj_a, &net.cost);
        let z2 = holding_cost(&traj_b, &net.cost);
        records.push(CellRecord {
            epsilon: eps,
            param_seed: p_seed,
            real_seed: r_seed,
            z1,
            z2,
            delta12: (z1 - z2) / z1,
            min_x_a: traj_a.min_level(),
            min_x_b: traj_b.min_level(),
        });
    }
    Ok((bound, records))
}

/// Run the full grid. Cells run concurrently on the current rayon pool;
/// results are assembled in configuration order, so the report does not
/// depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let tasks: Vec<(f64, usize)> = cfg
        .epsilons
        .iter()
        .flat_map(|&eps| (0..cfg.n_param_draws).map(move |p| (eps, p)))
        .collect();
    let outcomes: Vec<Result<(BoundRecord, Vec<CellRecord>), CellFailure>> = tasks
        .par_iter()
        .map(|&(eps, p)| run_param_cell(cfg, eps, p))
        .collect();

    let mut report = ExperimentReport::default();
    for outcome in outcomes {
        match outcome {
            Ok((bound, records)) => {
                report.excluded += records.iter().filter(|r| r.z1 <= 0.0).count();
                report.bounds.push(bound);
                report.records.extend(records);
            }
            Err(failure) => report.failures.push(failure),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            num_servers: 1,
            flows_per_server: 2,
            epsilons: vec![0.05, 0.2],
            n_param_draws: 2,
            n_realizations: 2,
            grid_intervals: 3,
            base_seed: 7,
            output: "unused".to_string(),
        }
    }

    #[test]
    fn delta12_examples() {
        assert_eq!(delta12(10.0, 8.0).unwrap(), 0.2);
        assert_eq!(delta12(3.5, 3.5).unwrap(), 0.0);
        assert_eq!(delta12(8.0, 10.0).unwrap(), -0.25);
        assert!(matches!(
            delta12(0.0, 1.0),
            Err(ExperimentError::DegenerateBaseline)
        ));
    }

    #[test]
    fn config_validation_names_every_problem() {
        let mut cfg = tiny_config();
        cfg.epsilons = vec![0.0, 0.5, 1.0];
        cfg.n_param_draws = 0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilon 0 must"), "{msg}");
        assert!(msg.contains("epsilon 1 must"), "{msg}");
        assert!(msg.contains("n_param_draws"), "{msg}");
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknown_fields() {
        let cfg = tiny_config();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.epsilons, cfg.epsilons);
        assert_eq!(back.base_seed, 7);

        let minimal: ExperimentConfig =
            serde_json::from_str(r#"{"num_servers": 2, "flows_per_server": 3}"#).unwrap();
        assert_eq!(minimal.epsilons, vec![0.01, 0.02, 0.05, 0.1, 0.2]);
        assert_eq!(minimal.n_param_draws, 10);
        assert_eq!(minimal.grid_intervals, 12);

        let bad = serde_json::from_str::<ExperimentConfig>(
            r#"{"num_servers": 2, "flows_per_server": 3, "n_draws": 5}"#,
        );
        let msg = bad.unwrap_err().to_string();
        assert!(msg.contains("n_draws"), "{msg}");
    }

    #[test]
    fn seed_mixing_depends_on_position_and_value() {
        assert_eq!(mix(&[1, 2, 3]), mix(&[1, 2, 3]));
        assert_ne!(mix(&[1, 2, 3]), mix(&[1, 3, 2]));
        assert_ne!(mix(&[0, 1]), mix(&[1, 0]));
        assert_ne!(param_seed(7, 0), realization_seed(7, 0, 0));
    }

    #[test]
    fn report_is_identical_across_thread_counts() {
        let cfg = tiny_config();
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_experiment(&cfg).unwrap())
        };
        let solo = run_with(1);
        let pooled = run_with(4);
        assert_eq!(solo.report_csv(), pooled.report_csv());
        assert_eq!(
            solo.summary_csv(&cfg.epsilons),
            pooled.summary_csv(&cfg.epsilons)
        );
    }

    #[test]
    fn records_follow_the_documented_schema() {
        let cfg = tiny_config();
        let report = run_experiment(&cfg).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.records.len(), 2 * 2 * 2);
        assert_eq!(report.bounds.len(), 2 * 2);
        for r in &report.records {
            assert!(cfg.epsilons.contains(&r.epsilon));
            let again = delta12(r.z1, r.z2).unwrap();
            assert!((again - r.delta12).abs() < 1e-12);
            assert!(r.z1 > 0.0 && r.z2 > 0.0, "costs are positive at this scale");
        }
        // Seeds in the report follow the documented counter scheme.
        assert_eq!(report.records[0].param_seed, param_seed(cfg.base_seed, 0));
        assert_eq!(
            report.records[1].real_seed,
            realization_seed(cfg.base_seed, 0, 1)
        );

        let csv = report.report_csv();
        assert!(csv.starts_with(
            "epsilon,param_seed,real_seed,z1,z2,delta12,min_x_A,min_x_B\n"
        ));
        assert_eq!(csv.lines().count(), 1 + report.records.len());

        let summary = report.summary(&cfg.epsilons);
        assert_eq!(summary.len(), 2);
        for (row, &eps) in summary.iter().zip(&cfg.epsilons) {
            assert_eq!(row.epsilon, eps);
            assert_eq!(row.n_valid, 4);
            let by_hand: f64 = report
                .records
                .iter()
                .filter(|r| r.epsilon == eps)
                .map(|r| r.delta12)
                .sum::<f64>()
                / 4.0;
            assert!((row.mean_delta12_pct - 100.0 * by_hand).abs() < 1e-9);
        }
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn effort_bound_dominates_the_transformed_control_in_every_cell() {
        let report = run_experiment(&tiny_config()).unwrap();
        for b in &report.bounds {
            assert!(
                b.robust_effort
                    <= b.transformed_in_effort + 1e-6 * (1.0 + b.transformed_in_effort.abs()),
                "ε={} seed={}: effort bound {} vs transformed control {}",
                b.epsilon,
                b.param_seed,
                b.robust_effort,
                b.transformed_in_effort
            );
        }
    }

    #[test]
    fn written_files_use_the_prefix() {
        let dir = std::env::temp_dir().join(format!("fluidnet-exp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = tiny_config();
        let report = run_experiment(&cfg).unwrap();
        let (report_path, summary_path) = report
            .write_csv_files(&dir.join("trial"), &cfg.epsilons)
            .unwrap();
        assert!(report_path.ends_with("trial_report.csv"));
        assert!(summary_path.ends_with("trial_summary.csv"));
        let text = std::fs::read_to_string(&report_path).unwrap();
        assert_eq!(text, report.report_csv());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
