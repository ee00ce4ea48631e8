//! Time grids and piecewise-constant controls.
//!
//! The continuous-time control problems are reduced to finite programs by
//! fixing a grid `0 = t_0 < t_1 < … < t_N = T` and restricting controls to
//! be constant on each interval. Cumulative processed amounts are then
//! piecewise linear, every constraint of the discretized problems is linear
//! in `t` within an interval, and enforcing them at the breakpoints alone is
//! exact — no constraint can be violated strictly inside an interval.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscretizationError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("invalid control values: {0}")]
    BadValues(String),
    #[error("control CSV, line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Strictly increasing breakpoints from 0 to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    breakpoints: Vec<f64>,
}

impl TimeGrid {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self, DiscretizationError> {
        if breakpoints.len() < 2 {
            return Err(DiscretizationError::BadGrid(
                "a grid needs at least the breakpoints 0 and T".to_string(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(DiscretizationError::BadGrid(format!(
                "the grid must start at 0, got {}",
                breakpoints[0]
            )));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(DiscretizationError::BadGrid(format!(
                    "breakpoints must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(TimeGrid { breakpoints })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Number of intervals `N`.
    pub fn num_intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Interval `n` as `(t_n, t_{n+1})`.
    pub fn interval(&self, n: usize) -> (f64, f64) {
        (self.breakpoints[n], self.breakpoints[n + 1])
    }

    pub fn step(&self, n: usize) -> f64 {
        self.breakpoints[n + 1] - self.breakpoints[n]
    }

    /// Index of the interval containing `t`, treating intervals as
    /// `[t_n, t_{n+1})` and clamping to the grid's range.
    pub fn locate(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let n = self.num_intervals();
        match self
            .breakpoints
            .binary_search_by(|b| b.total_cmp(&t))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => (i - 1).min(n - 1),
        }
    }
}

/// `t_n = n·T/N` for `n = 0..N`.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Result<TimeGrid, DiscretizationError> {
    if intervals == 0 {
        return Err(DiscretizationError::BadGrid(
            "at least one interval is required".to_string(),
        ));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DiscretizationError::BadGrid(format!(
            "the horizon must be positive, got {horizon}"
        )));
    }
    let mut breakpoints: Vec<f64> = (0..=intervals)
        .map(|n| n as f64 * horizon / intervals as f64)
        .collect();
    // Make the endpoint exact even when T/N rounds.
    breakpoints[intervals] = horizon;
    TimeGrid::new(breakpoints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// Processing rates `u_j(t)` in fluid/time.
    Rates,
    /// Effort fractions `η_j(t)` in `[0, 1]`.
    Effort,
}

impl ControlKind {
    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Rates => "rates",
            ControlKind::Effort => "effort",
        }
    }
}

/// One value per flow per grid interval. Values are nonnegative; effort
/// values additionally respect per-server caps, which
/// [`PiecewiseControl::effort_cap_excess`] measures against a server map.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    pub grid: TimeGrid,
    /// `values[j][n]` = control of flow `j` on interval `n`.
    values: Vec<Vec<f64>>,
    pub kind: ControlKind,
}

impl PiecewiseControl {
    /// Solver output may sit a rounding error below 0; anything above this
    /// is treated as genuinely negative and rejected, below it is clamped.
    const NEGATIVITY_TOL: f64 = 1e-9;

    pub fn new(
        grid: TimeGrid,
        values: Vec<Vec<f64>>,
        kind: ControlKind,
    ) -> Result<Self, DiscretizationError> {
        let n = grid.num_intervals();
        if values.is_empty() {
            return Err(DiscretizationError::BadValues(
                "at least one flow is required".to_string(),
            ));
        }
        let mut clean = Vec::with_capacity(values.len());
        for (j, row) in values.into_iter().enumerate() {
            if row.len() != n {
                return Err(DiscretizationError::BadValues(format!(
                    "flow {j} has {} values for {n} intervals",
                    row.len()
                )));
            }
            let mut out = Vec::with_capacity(n);
            for (idx, v) in row.into_iter().enumerate() {
                if !v.is_finite() || v < -Self::NEGATIVITY_TOL {
                    return Err(DiscretizationError::BadValues(format!(
                        "flow {j}, interval {idx}: control {v} must be nonnegative"
                    )));
                }
                out.push(v.max(0.0));
            }
            clean.push(out);
        }
        Ok(PiecewiseControl {
            grid,
            values: clean,
            kind,
        })
    }

    pub fn num_flows(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, flow: usize, interval: usize) -> f64 {
        self.values[flow][interval]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// The control of `flow` at time `t` (intervals half-open on the right).
    pub fn value_at(&self, flow: usize, t: f64) -> f64 {
        self.values[flow][self.grid.locate(t)]
    }

    /// `∫_0^t` of the control of `flow`: piecewise linear, continuous.
    pub fn integral_to(&self, flow: usize, t: f64) -> f64 {
        let mut acc = 0.0;
        for n in 0..self.grid.num_intervals() {
            let (a, b) = self.grid.interval(n);
            if t <= a {
                break;
            }
            acc += self.values[flow][n] * (t.min(b) - a);
        }
        acc
    }

    /// Largest excess of `Σ_{j on one server} value` over 1 across servers
    /// and intervals; ≤ 0 means the effort caps hold.
    pub fn effort_cap_excess(&self, server_of_flow: &[usize], num_servers: usize) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for n in 0..self.grid.num_intervals() {
            let mut load = vec![0.0; num_servers];
            for (j, row) in self.values.iter().enumerate() {
                load[server_of_flow[j]] += row[n];
            }
            for l in load {
                worst = worst.max(l - 1.0);
            }
        }
        worst
    }

    /// Render as CSV: `t_start,t_end,flow_1,…,flow_J`, one row per interval.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_start,t_end");
        for j in 1..=self.num_flows() {
            let _ = write!(out, ",flow_{j}");
        }
        out.push('\n');
        for n in 0..self.grid.num_intervals() {
            let (a, b) = self.grid.interval(n);
            let _ = write!(out, "{a},{b}");
            for row in &self.values {
                let _ = write!(out, ",{}", row[n]);
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV form; the kind is not stored in the file and must be
    /// supplied by the caller.
    pub fn from_csv(text: &str, kind: ControlKind) -> Result<Self, DiscretizationError> {
        let mut lines = text.lines().enumerate();
        let Some((_, header)) = lines.next() else {
            return Err(DiscretizationError::Csv {
                line: 1,
                message: "empty file".to_string(),
            });
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[0] != "t_start" || cols[1] != "t_end" {
            return Err(DiscretizationError::Csv {
                line: 1,
                message: "header must be `t_start,t_end,flow_1,...`".to_string(),
            });
        }
        let flows = cols.len() - 2;
        for (j, col) in cols[2..].iter().enumerate() {
            let expected = format!("flow_{}", j + 1);
            if *col != expected {
                return Err(DiscretizationError::Csv {
                    line: 1,
                    message: format!("expected column `{expected}`, found `{col}`"),
                });
            }
        }

        let mut breakpoints: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); flows];
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != flows + 2 {
                return Err(DiscretizationError::Csv {
                    line: lineno,
                    message: format!(
                        "expected {} fields, found {}",
                        flows + 2,
                        fields.len()
                    ),
                });
            }
            let parse = |s: &str| -> Result<f64, DiscretizationError> {
                s.trim().parse::<f64>().map_err(|_| DiscretizationError::Csv {
                    line: lineno,
                    message: format!("bad number `{s}`"),
                })
            };
            let start = parse(fields[0])?;
            let end = parse(fields[1])?;
            if let Some(&last) = breakpoints.last() {
                if start != last {
                    return Err(DiscretizationError::Csv {
                        line: lineno,
                        message: format!(
                            "interval starts at {start} but the previous one ended at {last}"
                        ),
                    });
                }
            } else {
                breakpoints.push(start);
            }
            breakpoints.push(end);
            for (j, field) in fields[2..].iter().enumerate() {
                values[j].push(parse(field)?);
            }
        }
        let grid = TimeGrid::new(breakpoints)?;
        PiecewiseControl::new(grid, values, kind)
    }
}

/// Cumulative integrals `U_j(t_n) = ∫_0^{t_n} ctrl_j`, a `J × (N+1)` matrix
/// whose first column is zero.
pub fn cumulative_integrals(ctrl: &PiecewiseControl) -> Vec<Vec<f64>> {
    let n = ctrl.grid.num_intervals();
    let mut out = Vec::with_capacity(ctrl.num_flows());
    for row in ctrl.values() {
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for (m, &v) in row.iter().enumerate() {
            acc += v * ctrl.grid.step(m);
            cum.push(acc);
        }
        out.push(cum);
    }
    out
}
