//! Replay of controls against time-varying service times.
//!
//! The robust programs hedge against a box of service times; this module
//! provides the other half of the evaluation loop: draw a smooth service-time
//! path inside that box ([`realize_tau`]), carry a rates-model control over to
//! the effort model with the certain slowdown map ([`transform_control`]),
//! integrate the buffer levels under the realized times
//! ([`simulate_trajectory`]) and price the outcome ([`holding_cost`]).
//!
//! Buffer levels are integrated exactly as written, without clamping at
//! zero: a control that overdrains a buffer produces a negative excursion,
//! which is recorded in the trajectory's per-buffer minimum diagnostic. That
//! makes "the buffer went negative" an observable property of a control
//! rather than a silent correction, which is what the model comparison
//! experiment counts. [`Trajectory::clamped`] floors the levels afterwards
//! for presentation purposes.

use crate::discretization::{ControlKind, PiecewiseControl};
use crate::network::FluidNetwork;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

/// Number of sinusoidal harmonics in a service-time path.
const HARMONICS: usize = 4;

/// Effort sums may exceed a server's capacity by at most this much before
/// the transformation refuses the control.
const CAP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid simulation input: {0}")]
    Invalid(String),
}

/// A smooth realization of per-flow service times inside the box
/// `[(1−ε)τ̄, (1+ε)τ̄]`.
///
/// Each flow follows `τ_j(t) = τ̄_j·(1 + ε·¼·Σ_{n=1}^{4} sin(nπt + φ_{j,n}))`
/// with independent phases. The mean of four unit sinusoids has amplitude at
/// most one, so the path never leaves the box, and with `ε < 1` it stays
/// strictly positive.
#[derive(Debug, Clone)]
pub struct TauPath {
    base: Vec<f64>,
    epsilon: f64,
    phases: Vec<[f64; HARMONICS]>,
}

impl TauPath {
    /// Assemble a path from explicit phases (one row per flow).
    pub fn new(
        base: Vec<f64>,
        epsilon: f64,
        phases: Vec<[f64; HARMONICS]>,
    ) -> Result<Self, SimulateError> {
        if base.is_empty() {
            return Err(SimulateError::Invalid(
                "a service-time path needs at least one flow".to_string(),
            ));
        }
        if let Some(j) = base.iter().position(|t| !t.is_finite() || *t <= 0.0) {
            return Err(SimulateError::Invalid(format!(
                "base service time {} of flow {} must be positive",
                base[j],
                j + 1
            )));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(SimulateError::Invalid(format!(
                "epsilon {epsilon} must lie in [0, 1)"
            )));
        }
        if phases.len() != base.len() {
            return Err(SimulateError::Invalid(format!(
                "{} phase rows for {} flows",
                phases.len(),
                base.len()
            )));
        }
        if phases.iter().flatten().any(|p| !p.is_finite()) {
            return Err(SimulateError::Invalid(
                "phases must be finite".to_string(),
            ));
        }
        Ok(TauPath {
            base,
            epsilon,
            phases,
        })
    }

    pub fn num_flows(&self) -> usize {
        self.base.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Service time of `flow` at time `t`.
    pub fn value(&self, flow: usize, t: f64) -> f64 {
        let mut wobble = 0.0;
        for (n, phase) in self.phases[flow].iter().enumerate() {
            wobble += ((n + 1) as f64 * PI * t + phase).sin();
        }
        self.base[flow] * (1.0 + self.epsilon * wobble / HARMONICS as f64)
    }

    /// All service times at time `t`.
    pub fn values_at(&self, t: f64) -> Vec<f64> {
        (0..self.num_flows()).map(|j| self.value(j, t)).collect()
    }

    /// Sample the path at the given times as CSV: `t,tau_1,…,tau_J`.
    pub fn to_csv(&self, times: &[f64]) -> String {
        let mut out = String::from("t");
        for j in 0..self.num_flows() {
            let _ = write!(out, ",tau_{}", j + 1);
        }
        out.push('\n');
        for &t in times {
            let _ = write!(out, "{t}");
            for j in 0..self.num_flows() {
                let _ = write!(out, ",{}", self.value(j, t));
            }
            out.push('\n');
        }
        out
    }
}

/// Draw a service-time path for the network's nominal times with fraction
/// `epsilon` and phases from a seeded generator — the same seed always
/// produces the same path.
pub fn realize_tau(
    net: &FluidNetwork,
    epsilon: f64,
    seed: u64,
) -> Result<TauPath, SimulateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = (0..net.num_flows)
        .map(|_| {
            let mut row = [0.0; HARMONICS];
            for p in &mut row {
                *p = rng.gen_range(0.0..2.0 * PI);
            }
            row
        })
        .collect();
    TauPath::new(net.tau_nom.clone(), epsilon, phases)
}

/// Carry a rates-model control over to the effort model by committing to
/// the slowest in-box service: `η_{j,n} = u_{j,n}·τ̄_j·(1−ε)`.
///
/// The result is checked against the per-server effort caps rather than
/// assumed feasible; a violation beyond tolerance means the pair `(u, ε)`
/// was not produced by a matching robust capacity constraint.
pub fn transform_control(
    net: &FluidNetwork,
    u: &PiecewiseControl,
    epsilon: f64,
) -> Result<PiecewiseControl, SimulateError> {
    if u.kind != ControlKind::Rates {
        return Err(SimulateError::Invalid(format!(
            "expected a rates control, got {}",
            u.kind.name()
        )));
    }
    if u.num_flows() != net.num_flows {
        return Err(SimulateError::Invalid(format!(
            "the control has {} flows, the network {}",
            u.num_flows(),
            net.num_flows
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(SimulateError::Invalid(format!(
            "epsilon {epsilon} must lie in [0, 1)"
        )));
    }
    let n = u.grid.num_intervals();
    let values: Vec<Vec<f64>> = (0..net.num_flows)
        .map(|j| {
            (0..n)
                .map(|m| u.value(j, m) * net.tau_nom[j] * (1.0 - epsilon))
                .collect()
        })
        .collect();
    let eta = PiecewiseControl::new(u.grid.clone(), values, ControlKind::Effort)
        .map_err(|e| SimulateError::Invalid(e.to_string()))?;
    let excess = eta.effort_cap_excess(&net.server_of_flow, net.num_servers);
    if excess > CAP_TOL {
        return Err(SimulateError::Invalid(format!(
            "transformed effort exceeds a server's capacity by {excess:.3e}; \
             the control was not built for this network and epsilon"
        )));
    }
    Ok(eta)
}

/// Buffer levels replayed on a fine time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    /// `levels[k][p]` is buffer `k` at `times[p]`.
    levels: Vec<Vec<f64>>,
    /// Smallest level each buffer reaches on the fine grid; negative values
    /// mean the control overdrained the buffer at some point.
    min_levels: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn num_buffers(&self) -> usize {
        self.levels.len()
    }

    pub fn min_levels(&self) -> &[f64] {
        &self.min_levels
    }

    /// Smallest level over all buffers and sampled times.
    pub fn min_level(&self) -> f64 {
        self.min_levels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// A copy with every level floored at zero. The minimum diagnostics keep
    /// the raw values so the excursion stays visible.
    pub fn clamped(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            levels: self
                .levels
                .iter()
                .map(|row| row.iter().map(|x| x.max(0.0)).collect())
                .collect(),
            min_levels: self.min_levels.clone(),
        }
    }

    /// Render as CSV: `t,x_1,…,x_K`, one row per sampled time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.num_buffers() {
            let _ = write!(out, ",x_{}", k + 1);
        }
        out.push('\n');
        for (p, &t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for row in &self.levels {
                let _ = write!(out, ",{}", row[p]);
            }
            out.push('\n');
        }
        out
    }
}

/// Integrate the buffer levels under an effort control and a realized
/// service-time path:
///
/// ```text
/// x̂_k(t) = α_k + λ̄_k·t − Σ_j G_kj ∫_0^t η_j(s)/τ_j(s) ds
/// ```
///
/// The integrand is piecewise smooth (constant effort over each control
/// interval, sinusoidal times), so each control interval is integrated by
/// composite Simpson quadrature with `substeps` subdivisions; the returned
/// fine grid has `substeps` points per control interval. Levels are not
/// clamped at zero — see the module notes.
pub fn simulate_trajectory(
    net: &FluidNetwork,
    eta: &PiecewiseControl,
    path: &TauPath,
    substeps: usize,
) -> Result<Trajectory, SimulateError> {
    if eta.kind != ControlKind::Effort {
        return Err(SimulateError::Invalid(format!(
            "expected an effort control, got {}",
            eta.kind.name()
        )));
    }
    if eta.num_flows() != net.num_flows || path.num_flows() != net.num_flows {
        return Err(SimulateError::Invalid(format!(
            "flow counts disagree: network {}, control {}, path {}",
            net.num_flows,
            eta.num_flows(),
            path.num_flows()
        )));
    }
    if substeps == 0 {
        return Err(SimulateError::Invalid(
            "at least one quadrature substep per interval is required".to_string(),
        ));
    }
    if (eta.grid.horizon() - net.horizon).abs() > 1e-9 * (1.0 + net.horizon.abs()) {
        return Err(SimulateError::Invalid(format!(
            "the control's horizon {} differs from the network's {}",
            eta.grid.horizon(),
            net.horizon
        )));
    }

    let flows = net.num_flows;
    let breakpoints = eta.grid.breakpoints();
    let mut times = vec![0.0];
    // Cumulative processed amount ∫ η_j/τ_j per flow at each fine time.
    let mut processed: Vec<Vec<f64>> = vec![vec![0.0]; flows];
    for n in 0..eta.grid.num_intervals() {
        let (start, end) = eta.grid.interval(n);
        let width = (end - start) / substeps as f64;
        for s in 0..substeps {
            let a = start + s as f64 * width;
            let b = if s + 1 == substeps {
                // Land exactly on the breakpoint despite rounding.
                end
            } else {
                start + (s + 1) as f64 * width
            };
            let mid = 0.5 * (a + b);
            times.push(b);
            for j in 0..flows {
                let effort = eta.value(j, n);
                let piece = if effort == 0.0 {
                    0.0
                } else {
                    let f = |t: f64| effort / path.value(j, t);
                    (b - a) / 6.0 * (f(a) + 4.0 * f(mid) + f(b))
                };
                let last = *processed[j].last().unwrap();
                processed[j].push(last + piece);
            }
        }
        debug_assert!((times.last().unwrap() - breakpoints[n + 1]).abs() < 1e-12);
    }

    let mut levels = Vec::with_capacity(net.num_buffers);
    let mut min_levels = Vec::with_capacity(net.num_buffers);
    for k in 0..net.num_buffers {
        let mut row = Vec::with_capacity(times.len());
        let mut low = f64::INFINITY;
        for (p, &t) in times.iter().enumerate() {
            let mut x = net.alpha[k] + net.lambda_nom[k] * t;
            for j in 0..flows {
                let g = net.routing[k][j];
                if g != 0.0 {
                    x -= g * processed[j][p];
                }
            }
            low = low.min(x);
            row.push(x);
        }
        levels.push(row);
        min_levels.push(low);
    }
    Ok(Trajectory {
        times,
        levels,
        min_levels,
    })
}

/// Realized holding cost `∫_0^T c·x̂(t) dt`, by the trapezoid rule on the
/// trajectory's fine grid.
pub fn holding_cost(traj: &Trajectory, cost: &[f64]) -> f64 {
    assert_eq!(
        cost.len(),
        traj.num_buffers(),
        "one cost rate per buffer is required"
    );
    let weighted: Vec<f64> = (0..traj.times.len())
        .map(|p| {
            traj.levels
                .iter()
                .zip(cost)
                .map(|(row, c)| c * row[p])
                .sum()
        })
        .collect();
    let mut total = 0.0;
    for p in 0..traj.times.len() - 1 {
        let dt = traj.times[p + 1] - traj.times[p];
        total += 0.5 * dt * (weighted[p] + weighted[p + 1]);
    }
    total
}
