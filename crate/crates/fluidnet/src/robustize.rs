//! Robust counterparts of the two fluid-control models as finite LPs.
//!
//! Both models pick a piecewise-constant control on a time grid. Buffer
//! levels must stay nonnegative at every breakpoint, and an epigraph
//! variable `z_n` bounds the cost rate `c·x(t_n)` from above, each for
//! *every* admissible realization of the uncertain parameters; the objective
//! is the trapezoid integral of the `z_n`.
//!
//! * Processing-rates model ([`build_robust_rates`]): the control
//!   `u_j(t) ≥ 0` is the rate at which flow `j` drains its buffer. Service
//!   times are uncertain and enter the capacity rows,
//!   `Σ_{j on i} τ_j u_j(t) ≤ 1` per server `i`.
//! * Server-effort model ([`build_robust_effort`]): the control
//!   `η_j(t) ∈ [0,1]` is the fraction of a server's effort spent on flow
//!   `j` (`Σ_{j on i} η_j(t) ≤ 1`, certain). Service rates are uncertain
//!   and scale the drains in the balance and epigraph rows.
//!
//! No uncertain coefficient survives into the generated LP. Each constraint
//! is replaced by its worst case over the service [`UncertaintySet`]: the
//! extreme deviation is folded straight into the coefficients where the
//! harmful direction is known per flow (the box set, and any flow outside
//! every budget group), and otherwise the dual variables of the inner
//! worst-case program are appended (budgeted `β, γ, δ`; one-sided `β, γ`;
//! polyhedral `δ_m`) together with their support rows, which leaves the
//! counterpart exactly as tight as the true worst case.
//!
//! Sign conventions: service times enter the rates model as `τ = τ̄ + τ̂ζ`
//! (delays), and service rates enter the effort model as `μ = μ̄ + μ̂ζ` —
//! except under the one-sided set, which models pure slowdowns
//! `μ = μ̄ − μ̂ζ` with `ζ ∈ [0, 1]`. Arrival rates are protected against
//! their full box `λ̄ ± λ̂` in every build (`λ̄ − λ̂` in balance rows, the
//! box worst case of `c·λ` in epigraph rows); [`compute_lambda`] computes
//! the worst-case arrival cost for an arbitrary arrival set.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::discretization::{ControlKind, PiecewiseControl, TimeGrid};
use crate::lp::{self, LpError, LpProblem, LpSolution, LpStatus, Relation};
use crate::network::{validate_network, FluidNetwork};
use crate::uncertainty::{BudgetGroup, Polyhedron, UncertaintyError, UncertaintySet};

#[derive(Debug, Error)]
pub enum RobustError {
    /// Inputs that do not fit together: dimension or horizon mismatches,
    /// invalid networks, controls fixed in a problem they do not belong to.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// The model constraint a row or auxiliary column belongs to.
///
/// `time_index` is 1-based: `Balance`, `Epigraph` and `EpigraphTerm` sit at
/// breakpoint `t_n`, while `Capacity` and `Effort` govern the control values
/// on the interval ending at `t_n`. Flow, buffer and server indices are
/// 0-based like everywhere else in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintSite {
    /// Nonnegativity of buffer `buffer` at breakpoint `time_index`.
    Balance { buffer: usize, time_index: usize },
    /// Rates-model capacity of server `server` on interval `time_index`.
    Capacity { server: usize, time_index: usize },
    /// Effort-model allocation cap of server `server` on interval `time_index`.
    Effort { server: usize, time_index: usize },
    /// Cost epigraph row at breakpoint `time_index`.
    Epigraph { time_index: usize },
    /// One buffer's cost term inside the epigraph row at `time_index`; the
    /// effort model worst-cases each buffer term with its own dual block.
    EpigraphTerm { buffer: usize, time_index: usize },
}

/// What a column of the generated LP stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// Control value of `flow` on grid interval `interval` (0-based).
    Control { flow: usize, interval: usize },
    /// Epigraph value `z_n` at breakpoint `time_index` (0 ..= N).
    Epigraph { time_index: usize },
    /// Budget dual `β` of group `group`, priced `Γ_group` in its protected row.
    BudgetDual { site: ConstraintSite, group: usize },
    /// Per-flow deviation dual `γ`.
    DeviationDual { site: ConstraintSite, flow: usize },
    /// Reflection dual `δ` absorbing the sign of a two-sided budgeted load.
    ReflectionDual { site: ConstraintSite, flow: usize },
    /// Polyhedral dual `δ_m` of the polyhedron's row `row`.
    PolyhedralDual { site: ConstraintSite, row: usize },
}

impl VarRole {
    /// The constraint block this column belongs to (`None` for controls and
    /// epigraph variables, which are shared across rows).
    pub fn site(&self) -> Option<ConstraintSite> {
        match *self {
            VarRole::Control { .. } | VarRole::Epigraph { .. } => None,
            VarRole::BudgetDual { site, .. }
            | VarRole::DeviationDual { site, .. }
            | VarRole::ReflectionDual { site, .. }
            | VarRole::PolyhedralDual { site, .. } => Some(site),
        }
    }
}

/// What a row of the generated LP enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRole {
    /// A robustified model constraint (or a certain one, for `Effort`).
    Protected { site: ConstraintSite },
    /// `β + γ (− 2δ) ≥ load_flow` — lower bound on the dual cover of one flow.
    DualSupport { site: ConstraintSite, flow: usize },
    /// `δ ≥ −load_flow` — the reflection half of a two-sided budgeted load.
    DualReflection { site: ConstraintSite, flow: usize },
    /// `Σ_m D_{m,coord} δ_m = −load_coord` — polyhedral dual feasibility.
    PolyhedralLink { site: ConstraintSite, coord: usize },
}

impl RowRole {
    pub fn site(&self) -> ConstraintSite {
        match *self {
            RowRole::Protected { site }
            | RowRole::DualSupport { site, .. }
            | RowRole::DualReflection { site, .. }
            | RowRole::PolyhedralLink { site, .. } => site,
        }
    }
}

/// A robust counterpart LP plus enough structure to read solutions back and
/// to audit single constraints.
///
/// `var_roles` and `row_roles` run parallel to `problem.columns` and
/// `problem.rows`.
#[derive(Debug, Clone)]
pub struct RobustProblem {
    pub problem: LpProblem,
    /// `Rates` for the processing-rates model, `Effort` for server effort.
    pub model: ControlKind,
    /// `kind_name()` of the service uncertainty set built against.
    pub set_kind: String,
    /// Worst-case arrival cost `Λ = max c·λ` used in the epigraph rows.
    pub lambda: f64,
    pub grid: TimeGrid,
    pub num_flows: usize,
    pub var_roles: Vec<VarRole>,
    pub row_roles: Vec<RowRole>,
    control_ids: Vec<Vec<usize>>,
    epigraph_ids: Vec<usize>,
}

/// Outcome of re-solving a counterpart with the control pinned.
#[derive(Debug, Clone)]
pub struct ControlEvaluation {
    /// `Optimal` means the control is robust-feasible; `Infeasible` means no
    /// auxiliary completion satisfies the counterpart.
    pub status: LpStatus,
    /// Robust objective of the pinned control (meaningful when optimal).
    pub objective: f64,
    pub duality_gap: f64,
}

impl RobustProblem {
    pub fn num_intervals(&self) -> usize {
        self.grid.num_intervals()
    }

    /// Column index of the control of `flow` on interval `interval` (0-based).
    pub fn control_column(&self, flow: usize, interval: usize) -> usize {
        self.control_ids[flow][interval]
    }

    /// Column index of `z_n` for `time_index` in `0 ..= N`.
    pub fn epigraph_column(&self, time_index: usize) -> usize {
        self.epigraph_ids[time_index]
    }

    pub fn solve(&self) -> Result<LpSolution, RobustError> {
        Ok(lp::solve(&self.problem)?)
    }

    /// Read the control values out of an optimal solution.
    pub fn extract_control(&self, sol: &LpSolution) -> Result<PiecewiseControl, RobustError> {
        if sol.status != LpStatus::Optimal {
            return Err(RobustError::Invalid(format!(
                "cannot extract a control from a {} solution",
                sol.status
            )));
        }
        let values: Vec<Vec<f64>> = self
            .control_ids
            .iter()
            .map(|row| row.iter().map(|&id| sol.x[id]).collect())
            .collect();
        PiecewiseControl::new(self.grid.clone(), values, self.model)
            .map_err(|e| RobustError::Invalid(e.to_string()))
    }

    /// Pin the control columns to `control` and re-solve over the epigraph
    /// and auxiliary variables only. The result is the robust objective of
    /// that specific control, or `Infeasible` if it violates the counterpart.
    pub fn evaluate_control(
        &self,
        control: &PiecewiseControl,
    ) -> Result<ControlEvaluation, RobustError> {
        if control.kind != self.model {
            return Err(RobustError::Invalid(format!(
                "a {} control cannot be evaluated in a {} problem",
                control.kind.name(),
                self.model.name()
            )));
        }
        if control.grid != self.grid {
            return Err(RobustError::Invalid(
                "the control's time grid differs from the problem's".to_string(),
            ));
        }
        if control.num_flows() != self.num_flows {
            return Err(RobustError::Invalid(format!(
                "the control has {} flows, the problem {}",
                control.num_flows(),
                self.num_flows
            )));
        }
        let mut pinned = BTreeMap::new();
        for (j, row) in self.control_ids.iter().enumerate() {
            for (m, &id) in row.iter().enumerate() {
                pinned.insert(id, control.value(j, m));
            }
        }
        let fixed = self.problem.fix_columns(&pinned);
        let sol = lp::solve(&fixed.problem)?;
        Ok(ControlEvaluation {
            status: sol.status,
            objective: sol.objective + fixed.objective_offset,
            duality_gap: sol.duality_gap,
        })
    }
}

/// Worst-case arrival cost `Λ = max { c·(λ̄ + λ̂∘ζ) : ζ ∈ set }`.
///
/// The set lives in arrival space (one coordinate per buffer). Box and
/// budgeted sets perturb two-sidedly, the one-sided set only upward; both
/// budget kinds treat coordinates outside every group as plain box
/// coordinates. The budgeted and polyhedral values are computed through the
/// dual linear program of the inner maximization, not the greedy
/// [`UncertaintySet::worst_case`] path, so the two can check each other.
pub fn compute_lambda(
    cost: &[f64],
    lambda_nom: &[f64],
    lambda_dev: &[f64],
    set: &UncertaintySet,
) -> Result<f64, RobustError> {
    let dim = set.dim();
    if cost.len() != dim || lambda_nom.len() != dim || lambda_dev.len() != dim {
        return Err(RobustError::Invalid(format!(
            "arrival data has lengths {}/{}/{}, but the arrival set has dimension {}",
            cost.len(),
            lambda_nom.len(),
            lambda_dev.len(),
            dim
        )));
    }
    let base = dot(cost, lambda_nom);
    let w: Vec<f64> = cost.iter().zip(lambda_dev).map(|(c, d)| c * d).collect();
    let protection = match set {
        UncertaintySet::Box { .. } => w.iter().map(|v| v.abs()).sum(),
        UncertaintySet::Budgeted { groups, .. } => budget_protection(&w, groups, true)?,
        UncertaintySet::OneSided { groups, .. } => budget_protection(&w, groups, false)?,
        UncertaintySet::Polyhedral(p) => polyhedral_protection(&w, p)?,
    };
    Ok(base + protection)
}

/// `max Σ w_k ζ_k` over the budgeted set, via the dual program
/// `min Σ_g Γ_g β_g + Σ_k γ_k  s.t.  β_{g(k)} + γ_k ≥ w_k` (with `|w_k|`
/// for the two-sided set). Uncovered coordinates contribute their box worst
/// case directly.
fn budget_protection(
    w: &[f64],
    groups: &[BudgetGroup],
    two_sided: bool,
) -> Result<f64, RobustError> {
    let mut covered = vec![false; w.len()];
    let mut problem = LpProblem::new();
    let mut has_rows = false;
    for (gi, group) in groups.iter().enumerate() {
        let mut beta = None;
        for &k in &group.members {
            covered[k] = true;
            let load = if two_sided { w[k].abs() } else { w[k] };
            if load <= 0.0 {
                continue;
            }
            let b = match beta {
                Some(b) => b,
                None => {
                    let b = problem.add_column(
                        format!("beta_g{}", gi + 1),
                        0.0,
                        f64::INFINITY,
                        group.gamma,
                    );
                    beta = Some(b);
                    b
                }
            };
            let g = problem.add_column(format!("gamma_k{}", k + 1), 0.0, f64::INFINITY, 1.0);
            problem.add_row(
                format!("cover_k{}", k + 1),
                vec![(b, 1.0), (g, 1.0)],
                Relation::Ge,
                load,
            );
            has_rows = true;
        }
    }
    let mut total: f64 = covered
        .iter()
        .zip(w)
        .filter(|(c, _)| !**c)
        .map(|(_, v)| if two_sided { v.abs() } else { v.max(0.0) })
        .sum();
    if has_rows {
        let sol = lp::solve(&problem)?;
        if sol.status != LpStatus::Optimal {
            return Err(RobustError::Invalid(format!(
                "budget dual program ended {}, which should be impossible",
                sol.status
            )));
        }
        total += sol.objective;
    }
    Ok(total)
}

/// `max { w·ζ : Dζ + d ≥ 0 }` via its dual
/// `min { d·δ : Σ_m D_{mk} δ_m = −w_k, δ ≥ 0 }`.
fn polyhedral_protection(w: &[f64], p: &Polyhedron) -> Result<f64, RobustError> {
    let mut problem = LpProblem::new();
    let delta: Vec<usize> = (0..p.num_rows())
        .map(|m| {
            problem.add_column(
                format!("delta_m{}", m + 1),
                0.0,
                f64::INFINITY,
                p.d_vector()[m],
            )
        })
        .collect();
    for k in 0..p.dim() {
        let terms: Vec<(usize, f64)> = (0..p.num_rows())
            .filter(|&m| p.d_matrix()[m][k] != 0.0)
            .map(|m| (delta[m], p.d_matrix()[m][k]))
            .collect();
        problem.add_row(format!("coord_k{}", k + 1), terms, Relation::Eq, -w[k]);
    }
    let sol = lp::solve(&problem)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        _ => Err(RobustError::Invalid(
            "arrival-cost counterpart infeasible for this polyhedron".to_string(),
        )),
    }
}

/// Robust counterpart of the processing-rates model.
///
/// Columns: `u_j{j}_n{m}` (rates, `≥ 0`), `z_n{n}` (epigraph values; `z_n0`
/// is bounded below by `c·α` and needs no row). Rows per breakpoint/interval
/// `n`: balance `Σ_j G_{kj} U_j(t_n) ≤ α_k + (λ̄_k − λ̂_k) t_n` for every
/// buffer, the robustified capacity rows, and the epigraph rows
/// `z_n ≥ Λ t_n + c·α − Σ_j (cᵀG)_j U_j(t_n)`; only the capacity rows carry
/// service uncertainty in this model. The objective is `Σ_n w_n z_n` with
/// trapezoid weights `w`.
pub fn build_robust_rates(
    net: &FluidNetwork,
    service: &UncertaintySet,
    grid: &TimeGrid,
) -> Result<RobustProblem, RobustError> {
    check_inputs(net, service, grid)?;
    let nj = net.num_flows;
    let nk = net.num_buffers;
    let nn = grid.num_intervals();
    let bp = grid.breakpoints().to_vec();
    let mut e = Emit::new();

    let u = control_columns(&mut e, "u", nj, nn);
    let lambda = arrival_worst_cost(net)?;
    let z = epigraph_columns(&mut e, net, grid);

    // Balance rows: the drain/inflow pattern of the rates model is certain,
    // only the arrival worst case shows up on the right-hand side.
    for k in 0..nk {
        for n in 1..=nn {
            let mut terms = Vec::new();
            for j in 0..nj {
                let g = net.routing[k][j];
                if g == 0.0 {
                    continue;
                }
                for m in 1..=n {
                    terms.push((u[j][m - 1], g * grid.step(m - 1)));
                }
            }
            let rhs = net.alpha[k] + (net.lambda_nom[k] - net.lambda_dev[k]) * bp[n];
            e.row(
                format!("bal_k{}_n{}", k + 1, n),
                format!("balance(k={},n={})", k + 1, n),
                terms,
                Relation::Le,
                rhs,
                RowRole::Protected {
                    site: ConstraintSite::Balance {
                        buffer: k,
                        time_index: n,
                    },
                },
            );
        }
    }

    // Capacity rows, robustified against the service set.
    let cover = service_cover(service, nj);
    for i in 0..net.num_servers {
        let flows = net.flows_of_server(i);
        for n in 1..=nn {
            let site = ConstraintSite::Capacity {
                server: i,
                time_index: n,
            };
            let mut terms = Vec::new();
            let mut pending = Vec::new();
            match service {
                UncertaintySet::Box { .. } => {
                    for &j in &flows {
                        terms.push((u[j][n - 1], net.tau_nom[j] + net.tau_dev[j]));
                    }
                }
                UncertaintySet::Budgeted { groups, .. }
                | UncertaintySet::OneSided { groups, .. } => {
                    // The capacity load τ̂_j u_{j,n} is nonnegative either
                    // way, so the two budget kinds share one dual block.
                    let mut loads = Vec::new();
                    for &j in &flows {
                        let mut coeff = net.tau_nom[j];
                        if net.tau_dev[j] > 0.0 {
                            match cover[j] {
                                None => coeff += net.tau_dev[j],
                                Some(_) => {
                                    loads.push((j, vec![(u[j][n - 1], net.tau_dev[j])]))
                                }
                            }
                        }
                        terms.push((u[j][n - 1], coeff));
                    }
                    let (aux, rows) =
                        emit_budget_block(&mut e, site, groups, &cover, &loads, false, 1.0);
                    terms.extend(aux);
                    pending = rows;
                }
                UncertaintySet::Polyhedral(p) => {
                    for &j in &flows {
                        terms.push((u[j][n - 1], net.tau_nom[j]));
                    }
                    let loads: Vec<(usize, Vec<(usize, f64)>)> = flows
                        .iter()
                        .filter(|&&j| net.tau_dev[j] > 0.0)
                        .map(|&j| (j, vec![(u[j][n - 1], net.tau_dev[j])]))
                        .collect();
                    let (aux, rows) = emit_poly_block(&mut e, site, p, &loads, nj, 1.0)?;
                    terms.extend(aux);
                    pending = rows;
                }
            }
            e.row(
                format!("cap_i{}_n{}", i + 1, n),
                format!("capacity(i={},n={})", i + 1, n),
                terms,
                Relation::Le,
                1.0,
                RowRole::Protected { site },
            );
            e.flush(pending);
        }
    }

    // Epigraph rows: z_n ≥ Λ t_n + c·α − Σ_j (cᵀG)_j U_j(t_n).
    let cg = cost_through_routing(net);
    let cost_alpha = dot(&net.cost, &net.alpha);
    for n in 1..=nn {
        let mut terms = vec![(z[n], 1.0)];
        for j in 0..nj {
            if cg[j] == 0.0 {
                continue;
            }
            for m in 1..=n {
                terms.push((u[j][m - 1], cg[j] * grid.step(m - 1)));
            }
        }
        e.row(
            format!("epi_n{n}"),
            format!("epigraph(n={n})"),
            terms,
            Relation::Ge,
            lambda * bp[n] + cost_alpha,
            RowRole::Protected {
                site: ConstraintSite::Epigraph { time_index: n },
            },
        );
    }

    e.finish(
        ControlKind::Rates,
        service,
        lambda,
        grid.clone(),
        nj,
        u,
        z,
    )
}

/// Robust counterpart of the server-effort model.
///
/// Columns: `eta_j{j}_n{m}` (effort fractions in `[0,1]`) and `z_n{n}`.
/// Rows: balance rows `Σ_j G_{kj} μ_j H_j(t_n) ≤ α_k + (λ̄_k − λ̂_k) t_n`
/// worst-cased over the service rates (drains fast, inflows slow), the
/// certain effort caps `Σ_{j on i} η_{j,n} ≤ 1`, and the epigraph rows in
/// which every buffer's cost term is worst-cased the other way around (own
/// drain slow, inflows fast) with its own dual block. `H_j` is the
/// cumulative effort integral of flow `j`.
pub fn build_robust_effort(
    net: &FluidNetwork,
    service: &UncertaintySet,
    grid: &TimeGrid,
) -> Result<RobustProblem, RobustError> {
    check_inputs(net, service, grid)?;
    let nj = net.num_flows;
    let nk = net.num_buffers;
    let nn = grid.num_intervals();
    let bp = grid.breakpoints().to_vec();
    let mut e = Emit::new();

    let eta = control_columns(&mut e, "eta", nj, nn);
    let lambda = arrival_worst_cost(net)?;
    let z = epigraph_columns(&mut e, net, grid);
    let cover = service_cover(service, nj);

    // Cumulative-effort terms of flow j scaled by `rate`, up to breakpoint n.
    let h_terms = |j: usize, n: usize, rate: f64| -> Vec<(usize, f64)> {
        (1..=n)
            .map(|m| (eta[j][m - 1], rate * grid.step(m - 1)))
            .collect()
    };

    // Balance rows: the adversary drains slowly into and quickly out of
    // buffer k. Under the one-sided (slowdown-only) set the adversary can
    // only starve the inflows; the own drain stays nominal.
    for k in 0..nk {
        for n in 1..=nn {
            let site = ConstraintSite::Balance {
                buffer: k,
                time_index: n,
            };
            let mut terms = Vec::new();
            let mut pending = Vec::new();
            match service {
                UncertaintySet::Box { .. } => {
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        let rate = g * net.mu_nom[j] + g.abs() * net.mu_dev[j];
                        terms.extend(h_terms(j, n, rate));
                    }
                }
                UncertaintySet::Budgeted { groups, .. } => {
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        let mut rate = g * net.mu_nom[j];
                        if net.mu_dev[j] > 0.0 {
                            match cover[j] {
                                None => rate += g.abs() * net.mu_dev[j],
                                Some(_) => loads.push((j, h_terms(j, n, g * net.mu_dev[j]))),
                            }
                        }
                        terms.extend(h_terms(j, n, rate));
                    }
                    let (aux, rows) =
                        emit_budget_block(&mut e, site, groups, &cover, &loads, true, 1.0);
                    terms.extend(aux);
                    pending = rows;
                }
                UncertaintySet::OneSided { groups, .. } => {
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        let mut rate = g * net.mu_nom[j];
                        // Only inflows (g < 0) are at risk from a slowdown.
                        if g < 0.0 && net.mu_dev[j] > 0.0 {
                            match cover[j] {
                                None => rate += g.abs() * net.mu_dev[j],
                                Some(_) => loads.push((j, h_terms(j, n, -g * net.mu_dev[j]))),
                            }
                        }
                        terms.extend(h_terms(j, n, rate));
                    }
                    let (aux, rows) =
                        emit_budget_block(&mut e, site, groups, &cover, &loads, false, 1.0);
                    terms.extend(aux);
                    pending = rows;
                }
                UncertaintySet::Polyhedral(p) => {
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        terms.extend(h_terms(j, n, g * net.mu_nom[j]));
                        if net.mu_dev[j] > 0.0 {
                            loads.push((j, h_terms(j, n, g * net.mu_dev[j])));
                        }
                    }
                    let (aux, rows) = emit_poly_block(&mut e, site, p, &loads, nj, 1.0)?;
                    terms.extend(aux);
                    pending = rows;
                }
            }
            let rhs = net.alpha[k] + (net.lambda_nom[k] - net.lambda_dev[k]) * bp[n];
            e.row(
                format!("bal_k{}_n{}", k + 1, n),
                format!("balance(k={},n={})", k + 1, n),
                terms,
                Relation::Le,
                rhs,
                RowRole::Protected { site },
            );
            e.flush(pending);
        }
    }

    // Effort caps are certain.
    for i in 0..net.num_servers {
        let flows = net.flows_of_server(i);
        for n in 1..=nn {
            let terms: Vec<(usize, f64)> = flows.iter().map(|&j| (eta[j][n - 1], 1.0)).collect();
            e.row(
                format!("eff_i{}_n{}", i + 1, n),
                format!("effort(i={},n={})", i + 1, n),
                terms,
                Relation::Le,
                1.0,
                RowRole::Protected {
                    site: ConstraintSite::Effort {
                        server: i,
                        time_index: n,
                    },
                },
            );
        }
    }

    // Epigraph rows: z_n ≥ Λ t_n + Σ_k c_k · (worst case of buffer k's
    // level), each buffer term worst-cased with its own ζ copy.
    let cost_alpha = dot(&net.cost, &net.alpha);
    for n in 1..=nn {
        let mut terms = vec![(z[n], 1.0)];
        // Nominal drain pattern plus per-flow folds; collected per flow so
        // each control column appears in one term.
        let mut rate_of_flow = vec![0.0; nj];
        let mut pending = Vec::new();
        for k in 0..nk {
            let ck = net.cost[k];
            if ck == 0.0 {
                continue;
            }
            match service {
                UncertaintySet::Box { .. } => {
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        rate_of_flow[j] += ck * (g * net.mu_nom[j] - g.abs() * net.mu_dev[j]);
                    }
                }
                UncertaintySet::Budgeted { groups, .. } => {
                    let site = ConstraintSite::EpigraphTerm {
                        buffer: k,
                        time_index: n,
                    };
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        let mut rate = g * net.mu_nom[j];
                        if net.mu_dev[j] > 0.0 {
                            match cover[j] {
                                None => rate -= g.abs() * net.mu_dev[j],
                                Some(_) => loads.push((j, h_terms(j, n, -g * net.mu_dev[j]))),
                            }
                        }
                        rate_of_flow[j] += ck * rate;
                    }
                    let (aux, rows) =
                        emit_budget_block(&mut e, site, groups, &cover, &loads, true, -ck);
                    terms.extend(aux);
                    pending.extend(rows);
                }
                UncertaintySet::OneSided { groups, .. } => {
                    let site = ConstraintSite::EpigraphTerm {
                        buffer: k,
                        time_index: n,
                    };
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        let mut rate = g * net.mu_nom[j];
                        // A slowdown raises the cost only through the own
                        // drain (g > 0); starving an inflow lowers it.
                        if g > 0.0 && net.mu_dev[j] > 0.0 {
                            match cover[j] {
                                None => rate -= g * net.mu_dev[j],
                                Some(_) => loads.push((j, h_terms(j, n, g * net.mu_dev[j]))),
                            }
                        }
                        rate_of_flow[j] += ck * rate;
                    }
                    let (aux, rows) =
                        emit_budget_block(&mut e, site, groups, &cover, &loads, false, -ck);
                    terms.extend(aux);
                    pending.extend(rows);
                }
                UncertaintySet::Polyhedral(p) => {
                    let site = ConstraintSite::EpigraphTerm {
                        buffer: k,
                        time_index: n,
                    };
                    let mut loads = Vec::new();
                    for j in 0..nj {
                        let g = net.routing[k][j];
                        if g == 0.0 {
                            continue;
                        }
                        rate_of_flow[j] += ck * g * net.mu_nom[j];
                        if net.mu_dev[j] > 0.0 {
                            loads.push((j, h_terms(j, n, -g * net.mu_dev[j])));
                        }
                    }
                    let (aux, rows) = emit_poly_block(&mut e, site, p, &loads, nj, -ck)?;
                    terms.extend(aux);
                    pending.extend(rows);
                }
            }
        }
        for j in 0..nj {
            if rate_of_flow[j] != 0.0 {
                terms.extend(h_terms(j, n, rate_of_flow[j]));
            }
        }
        e.row(
            format!("epi_n{n}"),
            format!("epigraph(n={n})"),
            terms,
            Relation::Ge,
            lambda * bp[n] + cost_alpha,
            RowRole::Protected {
                site: ConstraintSite::Epigraph { time_index: n },
            },
        );
        e.flush(pending);
    }

    e.finish(
        ControlKind::Effort,
        service,
        lambda,
        grid.clone(),
        nj,
        eta,
        z,
    )
}

// ---------------------------------------------------------------------------
// Shared assembly machinery.

struct Emit {
    lp: LpProblem,
    var_roles: Vec<VarRole>,
    row_roles: Vec<RowRole>,
}

struct PendingRow {
    name: String,
    note: String,
    terms: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
    role: RowRole,
}

impl Emit {
    fn new() -> Self {
        Emit {
            lp: LpProblem::new(),
            var_roles: Vec::new(),
            row_roles: Vec::new(),
        }
    }

    fn col(&mut self, name: String, lower: f64, upper: f64, objective: f64, role: VarRole) -> usize {
        let id = self.lp.add_column(name, lower, upper, objective);
        self.var_roles.push(role);
        id
    }

    fn row(
        &mut self,
        name: String,
        note: String,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
        role: RowRole,
    ) -> usize {
        let id = self.lp.add_annotated_row(name, note, terms, relation, rhs);
        self.row_roles.push(role);
        id
    }

    /// Emit dual rows collected while their protected row was being built,
    /// so the protected row precedes its block in the export.
    fn flush(&mut self, pending: Vec<PendingRow>) {
        for r in pending {
            self.row(r.name, r.note, r.terms, r.relation, r.rhs, r.role);
        }
    }

    fn finish(
        self,
        model: ControlKind,
        service: &UncertaintySet,
        lambda: f64,
        grid: TimeGrid,
        num_flows: usize,
        control_ids: Vec<Vec<usize>>,
        epigraph_ids: Vec<usize>,
    ) -> Result<RobustProblem, RobustError> {
        debug_assert_eq!(self.var_roles.len(), self.lp.num_columns());
        debug_assert_eq!(self.row_roles.len(), self.lp.num_rows());
        self.lp.validate()?;
        Ok(RobustProblem {
            problem: self.lp,
            model,
            set_kind: service.kind_name().to_string(),
            lambda,
            grid,
            num_flows,
            var_roles: self.var_roles,
            row_roles: self.row_roles,
            control_ids,
            epigraph_ids,
        })
    }
}

fn check_inputs(
    net: &FluidNetwork,
    service: &UncertaintySet,
    grid: &TimeGrid,
) -> Result<(), RobustError> {
    let diagnostics = validate_network(net);
    if !diagnostics.is_empty() {
        return Err(RobustError::Invalid(format!(
            "network is invalid: {}",
            diagnostics.join("; ")
        )));
    }
    if service.dim() != net.num_flows {
        return Err(RobustError::Invalid(format!(
            "service uncertainty set has dimension {}, but the network has {} flows",
            service.dim(),
            net.num_flows
        )));
    }
    if (grid.horizon() - net.horizon).abs() > 1e-9 * net.horizon.max(1.0) {
        return Err(RobustError::Invalid(format!(
            "time grid ends at {}, but the network horizon is {}",
            grid.horizon(),
            net.horizon
        )));
    }
    Ok(())
}

fn control_columns(e: &mut Emit, stem: &str, num_flows: usize, intervals: usize) -> Vec<Vec<usize>> {
    let upper = if stem == "eta" { 1.0 } else { f64::INFINITY };
    (0..num_flows)
        .map(|j| {
            (0..intervals)
                .map(|m| {
                    e.col(
                        format!("{stem}_j{}_n{}", j + 1, m + 1),
                        0.0,
                        upper,
                        0.0,
                        VarRole::Control {
                            flow: j,
                            interval: m,
                        },
                    )
                })
                .collect()
        })
        .collect()
}

/// One `z_n` per breakpoint, weighted for the trapezoid rule. `z_0` carries
/// no row: at `t = 0` every integral vanishes and the worst-case cost is
/// exactly `c·α`, which becomes the column's lower bound. The later `z_n`
/// are bounded below by 0, which any balance-feasible point satisfies
/// anyway (worst-case levels and arrival costs are nonnegative).
fn epigraph_columns(e: &mut Emit, net: &FluidNetwork, grid: &TimeGrid) -> Vec<usize> {
    let weights = trapezoid_weights(grid);
    let floor = dot(&net.cost, &net.alpha);
    (0..=grid.num_intervals())
        .map(|n| {
            e.col(
                format!("z_n{n}"),
                if n == 0 { floor } else { 0.0 },
                f64::INFINITY,
                weights[n],
                VarRole::Epigraph { time_index: n },
            )
        })
        .collect()
}

fn trapezoid_weights(grid: &TimeGrid) -> Vec<f64> {
    let n = grid.num_intervals();
    let mut w = vec![0.0; n + 1];
    for m in 0..n {
        let half = grid.step(m) / 2.0;
        w[m] += half;
        w[m + 1] += half;
    }
    w
}

/// `(cᵀG)_j` — the net holding-cost rate of one unit of flow j's drain.
fn cost_through_routing(net: &FluidNetwork) -> Vec<f64> {
    (0..net.num_flows)
        .map(|j| {
            (0..net.num_buffers)
                .map(|k| net.cost[k] * net.routing[k][j])
                .sum()
        })
        .collect()
}

/// Which budget group covers each flow (`None` outside every group, and for
/// the box and polyhedral kinds).
fn service_cover(service: &UncertaintySet, num_flows: usize) -> Vec<Option<usize>> {
    let mut cover = vec![None; num_flows];
    if let UncertaintySet::Budgeted { groups, .. } | UncertaintySet::OneSided { groups, .. } =
        service
    {
        for (gi, group) in groups.iter().enumerate() {
            for &m in &group.members {
                cover[m] = Some(gi);
            }
        }
    }
    cover
}

fn aux_tag(site: &ConstraintSite) -> (String, String, usize) {
    match *site {
        ConstraintSite::Capacity { server, time_index } => (
            format!("cap_i{}", server + 1),
            format!("capacity,i={}", server + 1),
            time_index,
        ),
        ConstraintSite::Balance { buffer, time_index } => (
            format!("bal_k{}", buffer + 1),
            format!("balance,k={}", buffer + 1),
            time_index,
        ),
        ConstraintSite::EpigraphTerm { buffer, time_index } => (
            format!("obj_k{}", buffer + 1),
            format!("epigraph,k={}", buffer + 1),
            time_index,
        ),
        _ => unreachable!("only robustified blocks carry auxiliary variables"),
    }
}

/// Append one budgeted/one-sided dual block: `β` per budget group present,
/// `γ` per loaded flow, and for two-sided loads a reflection `δ` that
/// realizes `β + γ ≥ |load|` without fixing the load's sign in the row
/// system. `loads` maps flows to the linear form of their load in the
/// control variables; callers pass only flows covered by some group.
/// Returns the terms the protected row must carry
/// (`protected_scale · (Γ_g β_g + Σ γ)`), plus the support rows to emit
/// after the protected row.
fn emit_budget_block(
    e: &mut Emit,
    site: ConstraintSite,
    groups: &[BudgetGroup],
    cover: &[Option<usize>],
    loads: &[(usize, Vec<(usize, f64)>)],
    two_sided: bool,
    protected_scale: f64,
) -> (Vec<(usize, f64)>, Vec<PendingRow>) {
    let (tag, note, t) = aux_tag(&site);
    let mut present: Vec<usize> = loads.iter().map(|(j, _)| cover[*j].unwrap()).collect();
    present.sort_unstable();
    present.dedup();
    let mut beta = BTreeMap::new();
    let mut protected = Vec::new();
    for &gi in &present {
        let col = e.col(
            format!("beta_{tag}_g{}_n{t}", gi + 1),
            0.0,
            f64::INFINITY,
            0.0,
            VarRole::BudgetDual { site, group: gi },
        );
        beta.insert(gi, col);
        protected.push((col, protected_scale * groups[gi].gamma));
    }
    let mut pending = Vec::new();
    for (j, form) in loads {
        let gi = cover[*j].unwrap();
        let gamma = e.col(
            format!("gamma_{tag}_j{}_n{t}", j + 1),
            0.0,
            f64::INFINITY,
            0.0,
            VarRole::DeviationDual { site, flow: *j },
        );
        protected.push((gamma, protected_scale));
        let mut support = vec![(beta[&gi], 1.0), (gamma, 1.0)];
        if two_sided {
            let delta = e.col(
                format!("delta_{tag}_j{}_n{t}", j + 1),
                0.0,
                f64::INFINITY,
                0.0,
                VarRole::ReflectionDual { site, flow: *j },
            );
            support.push((delta, -2.0));
            let mut reflection = vec![(delta, 1.0)];
            reflection.extend(form.iter().copied());
            pending.push(PendingRow {
                name: format!("ref_{tag}_j{}_n{t}", j + 1),
                note: format!("dual-reflection({note},j={},n={t})", j + 1),
                terms: reflection,
                relation: Relation::Ge,
                rhs: 0.0,
                role: RowRole::DualReflection { site, flow: *j },
            });
        }
        support.extend(form.iter().map(|&(c, a)| (c, -a)));
        pending.push(PendingRow {
            name: format!("sup_{tag}_j{}_n{t}", j + 1),
            note: format!("dual-support({note},j={},n={t})", j + 1),
            terms: support,
            relation: Relation::Ge,
            rhs: 0.0,
            role: RowRole::DualSupport { site, flow: *j },
        });
    }
    (protected, pending)
}

/// Append one polyhedral dual block: `δ_m ≥ 0` per polyhedron row with
/// `protected_scale · d_m` in the protected row, and one equality
/// `Σ_m D_{m,coord} δ_m + load_coord = 0` per ζ coordinate (a zero load is
/// still pinned whenever the coordinate appears in `D`). A coordinate that
/// `D` never touches is unbounded in the set, so a nonzero load there is a
/// build error; validated polyhedra cannot reach it.
fn emit_poly_block(
    e: &mut Emit,
    site: ConstraintSite,
    p: &Polyhedron,
    loads: &[(usize, Vec<(usize, f64)>)],
    dim: usize,
    protected_scale: f64,
) -> Result<(Vec<(usize, f64)>, Vec<PendingRow>), RobustError> {
    let (tag, note, t) = aux_tag(&site);
    let delta: Vec<usize> = (0..p.num_rows())
        .map(|m| {
            e.col(
                format!("delta_{tag}_m{}_n{t}", m + 1),
                0.0,
                f64::INFINITY,
                0.0,
                VarRole::PolyhedralDual { site, row: m },
            )
        })
        .collect();
    let mut protected = Vec::new();
    for (m, &dv) in p.d_vector().iter().enumerate() {
        if dv != 0.0 {
            protected.push((delta[m], protected_scale * dv));
        }
    }
    let load_of: BTreeMap<usize, &Vec<(usize, f64)>> =
        loads.iter().map(|(j, form)| (*j, form)).collect();
    let mut pending = Vec::new();
    for coord in 0..dim {
        let mut terms: Vec<(usize, f64)> = (0..p.num_rows())
            .filter(|&m| p.d_matrix()[m][coord] != 0.0)
            .map(|m| (delta[m], p.d_matrix()[m][coord]))
            .collect();
        let untouched = terms.is_empty();
        match load_of.get(&coord) {
            Some(form) if !form.is_empty() => {
                if untouched {
                    return Err(RobustError::Invalid(format!(
                        "the polyhedron never constrains coordinate {} (its matrix column \
                         is zero), so the worst case over that flow's deviation is unbounded",
                        coord + 1
                    )));
                }
                terms.extend(form.iter().copied());
            }
            _ => {
                if untouched {
                    continue;
                }
            }
        }
        pending.push(PendingRow {
            name: format!("poly_{tag}_j{}_n{t}", coord + 1),
            note: format!("polyhedral({note},j={},n={t})", coord + 1),
            terms,
            relation: Relation::Eq,
            rhs: 0.0,
            role: RowRole::PolyhedralLink { site, coord },
        });
    }
    Ok((protected, pending))
}

fn arrival_worst_cost(net: &FluidNetwork) -> Result<f64, RobustError> {
    let arrivals = UncertaintySet::box_set(net.num_buffers)?;
    compute_lambda(&net.cost, &net.lambda_nom, &net.lambda_dev, &arrivals)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
