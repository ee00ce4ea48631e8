//! Shared helpers for the integration suite: an independent brute-force LP
//! oracle, instance generators with internal routing, in-set perturbation
//! samplers, row-level worst-case audits, and residual checks of solved
//! robust counterparts against sampled realizations.

use fluidnet::discretization::{cumulative_integrals, PiecewiseControl};
use fluidnet::lp::{self, LpProblem, LpSolution, LpStatus, Relation};
use fluidnet::network::{FluidNetwork, NetworkData};
use fluidnet::robustize::{ConstraintSite, RobustProblem, RowRole, VarRole};
use fluidnet::uncertainty::{BudgetGroup, Polyhedron, UncertaintySet};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

pub const GAP_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Duality-gap audit shared by every criterion that solves a robust problem.

static SOLVES_AUDITED: AtomicUsize = AtomicUsize::new(0);
static MAX_GAP_BITS: AtomicU64 = AtomicU64::new(0);

/// Solve a robust counterpart, demand optimality, and fold its duality gap
/// into the global audit (nonnegative f64 bit patterns order like the floats).
pub fn gap_checked_solve(rp: &RobustProblem, what: &str) -> LpSolution {
    let sol = rp.solve().unwrap_or_else(|e| panic!("{what}: {e}"));
    assert_eq!(sol.status, LpStatus::Optimal, "{what} ended {}", sol.status);
    note_gap(sol.duality_gap);
    assert!(
        sol.duality_gap <= GAP_TOL,
        "{what}: duality gap {} exceeds {GAP_TOL}",
        sol.duality_gap
    );
    sol
}

pub fn note_gap(gap: f64) {
    SOLVES_AUDITED.fetch_add(1, Ordering::Relaxed);
    MAX_GAP_BITS.fetch_max(gap.max(0.0).to_bits(), Ordering::Relaxed);
}

/// `(number of solves audited, largest duality gap seen)`.
pub fn gap_audit() -> (usize, f64) {
    (
        SOLVES_AUDITED.load(Ordering::Relaxed),
        f64::from_bits(MAX_GAP_BITS.load(Ordering::Relaxed)),
    )
}

// ---------------------------------------------------------------------------
// Brute-force LP oracle: enumerate candidate vertices (every square system of
// active constraints), keep the feasible ones, take the best. Exponential and
// only for small problems; exists precisely so the simplex implementation is
// checked against something that shares none of its code path.

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-9 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    Some(x)
}

pub fn enumerate_minimum(p: &LpProblem) -> Option<(f64, Vec<f64>)> {
    let n = p.columns.len();
    let mut cons: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.terms {
            a[j] += v;
        }
        match row.relation {
            Relation::Le => cons.push((a, row.rhs, false)),
            Relation::Ge => cons.push((a.iter().map(|v| -v).collect(), -row.rhs, false)),
            Relation::Eq => cons.push((a, row.rhs, true)),
        }
    }
    for (j, col) in p.columns.iter().enumerate() {
        let mut a = vec![0.0; n];
        a[j] = -1.0;
        cons.push((a, -col.lower, false));
        if col.upper.is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            cons.push((a, col.upper, false));
        }
    }
    let eq_idx: Vec<usize> = (0..cons.len()).filter(|&i| cons[i].2).collect();
    let ineq_idx: Vec<usize> = (0..cons.len()).filter(|&i| !cons[i].2).collect();
    if eq_idx.len() > n {
        return None;
    }
    let free = n - eq_idx.len();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut chosen = Vec::with_capacity(free);
    fn combos(
        ineq: &[usize],
        start: usize,
        left: usize,
        chosen: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if left == 0 {
            visit(chosen);
            return;
        }
        for i in start..ineq.len() {
            chosen.push(ineq[i]);
            combos(ineq, i + 1, left - 1, chosen, visit);
            chosen.pop();
        }
    }
    combos(&ineq_idx, 0, free, &mut chosen, &mut |extra| {
        let active: Vec<usize> = eq_idx.iter().chain(extra).copied().collect();
        let a: Vec<Vec<f64>> = active.iter().map(|&i| cons[i].0.clone()).collect();
        let b: Vec<f64> = active.iter().map(|&i| cons[i].1).collect();
        let Some(x) = solve_square(a, b) else { return };
        let feasible = cons.iter().all(|(a, rhs, eq)| {
            let lhs: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
            if *eq {
                (lhs - rhs).abs() <= 1e-7
            } else {
                lhs <= rhs + 1e-7
            }
        });
        if feasible {
            let obj = p.objective_value(&x);
            if best.as_ref().is_none_or(|(b0, _)| obj < *b0) {
                best = Some((obj, x));
            }
        }
    });
    best
}

// ---------------------------------------------------------------------------
// Instance generators.

/// A two-server network with an internal inflow: flows 0 and 1 share server
/// 0 and drain buffers 0 and 1; flow 0's output feeds buffer 2, which flow 2
/// (alone on server 1) drains. The downstream buffer starts nearly empty and
/// is expensive, so optimal plans hold it at zero with substantial inflow —
/// the configuration where transformed rates controls are exposed to
/// realized service variation.
pub fn routed_instance(seed: u64, epsilon: f64) -> FluidNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut mu = || rng.gen_range(5.0..25.0);
    let tau_nom: Vec<f64> = vec![1.0 / mu(), 1.0 / mu(), 1.0 / mu()];
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let data = NetworkData {
        num_servers: 2,
        server_of_flow: vec![0, 0, 1],
        buffer_of_flow: vec![0, 1, 2],
        routing: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 1.0],
        ],
        lambda_nom: vec![rng2.gen_range(2.0..5.0), rng2.gen_range(2.0..5.0), 0.0],
        lambda_dev: vec![0.0; 3],
        alpha: vec![
            rng2.gen_range(10.0..20.0),
            rng2.gen_range(10.0..20.0),
            rng2.gen_range(1.0..4.0),
        ],
        cost: vec![
            rng2.gen_range(1.0..2.0),
            rng2.gen_range(1.0..2.0),
            rng2.gen_range(2.0..3.0),
        ],
        horizon: 2.0,
    };
    let tau_dev: Vec<f64> = tau_nom.iter().map(|t| epsilon * t).collect();
    FluidNetwork::from_service_times(data, tau_nom, tau_dev).unwrap()
}

// ---------------------------------------------------------------------------
// Uncertainty-set builders.

pub fn per_server_groups(net: &FluidNetwork, gamma: f64) -> Vec<BudgetGroup> {
    (0..net.num_servers)
        .map(|i| BudgetGroup {
            members: net.flows_of_server(i),
            gamma,
        })
        .collect()
}

fn unit_box_rows(dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut d_matrix = Vec::with_capacity(2 * dim);
    let mut d_vector = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; dim];
            row[i] = sign;
            d_matrix.push(row);
            d_vector.push(1.0);
        }
    }
    (d_matrix, d_vector)
}

/// The unit box cut by one diagonal half-space — a strict subset of the box,
/// so any box-feasible guarantee must also cover it.
pub fn skewed_polyhedron(dim: usize) -> Polyhedron {
    let (mut d_matrix, mut d_vector) = unit_box_rows(dim);
    d_matrix.push(vec![-1.0; dim]);
    d_vector.push(0.2 + 0.5 * dim as f64);
    Polyhedron::new(d_matrix, d_vector).unwrap()
}

/// The four service-uncertainty kinds exercised everywhere, all contained in
/// the unit box. Budgets are per-server groups.
pub fn service_sets(net: &FluidNetwork) -> Vec<(&'static str, UncertaintySet)> {
    let dim = net.num_flows;
    vec![
        ("box", UncertaintySet::box_set(dim).unwrap()),
        (
            "budgeted",
            UncertaintySet::budgeted(dim, per_server_groups(net, 1.3)).unwrap(),
        ),
        (
            "one_sided",
            UncertaintySet::one_sided(dim, per_server_groups(net, 0.9)).unwrap(),
        ),
        (
            "polyhedral",
            UncertaintySet::polyhedral(skewed_polyhedron(dim)),
        ),
    ]
}

// ---------------------------------------------------------------------------
// In-set perturbation sampling.

/// A random point of the set, mixing interior draws with worst-case vertices
/// so boundary behavior is exercised. Panics if the point fails the set's
/// own membership test.
pub fn sample_in_set(set: &UncertaintySet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = set.dim();
    let zeta = match set {
        UncertaintySet::Box { .. } => (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        UncertaintySet::Budgeted { groups, .. } => {
            let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            for g in groups {
                let total: f64 = g.members.iter().map(|&m| z[m].abs()).sum();
                if total > g.gamma {
                    let shrink = g.gamma / total * rng.gen_range(0.5..=1.0);
                    for &m in &g.members {
                        z[m] *= shrink;
                    }
                }
            }
            z
        }
        UncertaintySet::OneSided { groups, .. } => {
            let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..=1.0)).collect();
            for g in groups {
                let total: f64 = g.members.iter().map(|&m| z[m]).sum();
                if total > g.gamma {
                    let shrink = g.gamma / total * rng.gen_range(0.5..=1.0);
                    for &m in &g.members {
                        z[m] *= shrink;
                    }
                }
            }
            z
        }
        UncertaintySet::Polyhedral(p) => {
            if rng.gen_bool(0.5) {
                // A vertex maximizing a random direction.
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                set.worst_case(&a).unwrap().witness
            } else {
                // Rejection sampling from the bounding box, with a vertex
                // fallback for thin sets.
                let bounds = p.coordinate_bounds().to_vec();
                let mut found = None;
                for _ in 0..200 {
                    let z: Vec<f64> = bounds
                        .iter()
                        .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                        .collect();
                    if set.contains(&z, 1e-12) {
                        found = Some(z);
                        break;
                    }
                }
                found.unwrap_or_else(|| {
                    let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    set.worst_case(&a).unwrap().witness
                })
            }
        }
    };
    assert!(
        set.contains(&zeta, 1e-9),
        "sampler produced a point outside the set: {zeta:?}"
    );
    zeta
}

/// Realized service times `τ̄ + τ̂∘ζ` (every kind perturbs times upward or
/// two-sidedly in ζ as sampled).
pub fn realized_tau(net: &FluidNetwork, zeta: &[f64]) -> Vec<f64> {
    net.tau_nom
        .iter()
        .zip(&net.tau_dev)
        .zip(zeta)
        .map(|((t, d), z)| t + d * z)
        .collect()
}

/// Realized processing rates: `μ̄ + μ̂∘ζ`, except the one-sided kind where ζ
/// measures slowdown and rates move down: `μ̄ − μ̂∘ζ`.
pub fn realized_mu(net: &FluidNetwork, one_sided: bool, zeta: &[f64]) -> Vec<f64> {
    let sign = if one_sided { -1.0 } else { 1.0 };
    net.mu_nom
        .iter()
        .zip(&net.mu_dev)
        .zip(zeta)
        .map(|((m, d), z)| m + sign * d * z)
        .collect()
}

// ---------------------------------------------------------------------------
// Row-level worst-case audit: for a pinned control, the value the generated
// rows force on a protected constraint (auxiliary variables minimized over
// their own dual block) must equal the uncertainty set's exact worst case.

pub fn protected_rows(rp: &RobustProblem) -> Vec<usize> {
    rp.row_roles
        .iter()
        .enumerate()
        .filter(|(_, role)| matches!(role, RowRole::Protected { .. }))
        .map(|(i, _)| i)
        .collect()
}

/// Minimize `Σ weights·aux` over the dual-feasibility rows of the given
/// blocks, with control columns replaced by their pinned values.
fn forced_protection(
    rp: &RobustProblem,
    blocks: &[ConstraintSite],
    weights: &BTreeMap<usize, f64>,
    control: &PiecewiseControl,
) -> f64 {
    let mut mini = LpProblem::new();
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for (idx, role) in rp.var_roles.iter().enumerate() {
        let Some(site) = role.site() else { continue };
        if !blocks.contains(&site) {
            continue;
        }
        let col = &rp.problem.columns[idx];
        let weight = weights.get(&idx).copied().unwrap_or(0.0);
        map.insert(
            idx,
            mini.add_column(col.name.clone(), col.lower, col.upper, weight),
        );
    }
    if mini.num_columns() == 0 {
        return 0.0;
    }
    for (r, role) in rp.row_roles.iter().enumerate() {
        if matches!(role, RowRole::Protected { .. }) || !blocks.contains(&role.site()) {
            continue;
        }
        let row = &rp.problem.rows[r];
        let mut rhs = row.rhs;
        let mut terms = Vec::new();
        for &(c, v) in &row.terms {
            if let Some(&id) = map.get(&c) {
                terms.push((id, v));
            } else {
                match rp.var_roles[c] {
                    VarRole::Control { flow, interval } => {
                        rhs -= v * control.value(flow, interval);
                    }
                    _ => panic!(
                        "column {} has no business in dual row {}",
                        rp.problem.columns[c].name, row.name
                    ),
                }
            }
        }
        mini.add_row(row.name.clone(), terms, row.relation, rhs);
    }
    let sol = lp::solve(&mini).unwrap();
    assert_eq!(
        sol.status,
        LpStatus::Optimal,
        "protection sub-program for {blocks:?} ended {}",
        sol.status
    );
    sol.objective
}

/// What the generated rows force for a protected row under a pinned control:
/// for a `≤` row the largest reachable left side, for the `≥` epigraph row
/// the lower bound imposed on `z_n`.
pub fn row_forced_value(rp: &RobustProblem, row_idx: usize, control: &PiecewiseControl) -> f64 {
    let row = &rp.problem.rows[row_idx];
    let RowRole::Protected { site } = rp.row_roles[row_idx] else {
        panic!("row {} is not a protected row", row.name)
    };
    let mut blocks = Vec::new();
    if let ConstraintSite::Epigraph { time_index } = site {
        for role in &rp.var_roles {
            if let Some(s @ ConstraintSite::EpigraphTerm { time_index: t, .. }) = role.site() {
                if t == time_index && !blocks.contains(&s) {
                    blocks.push(s);
                }
            }
        }
    } else {
        blocks.push(site);
    }
    let ge = row.relation == Relation::Ge;
    let mut fixed = 0.0;
    let mut weights = BTreeMap::new();
    for &(c, v) in &row.terms {
        match rp.var_roles[c] {
            VarRole::Control { flow, interval } => {
                fixed += v * control.value(flow, interval);
            }
            VarRole::Epigraph { .. } => {
                assert!(ge, "z appears in non-epigraph row {}", row.name);
            }
            _ => {
                weights.insert(c, if ge { -v } else { v });
            }
        }
    }
    let protection = forced_protection(rp, &blocks, &weights, control);
    if ge {
        row.rhs - fixed + protection
    } else {
        fixed + protection
    }
}

/// The same worst case computed straight from the network data and the
/// uncertainty set's own maximizer, never touching the generated rows.
pub fn row_oracle_value(
    net: &FluidNetwork,
    set: &UncertaintySet,
    rp: &RobustProblem,
    row_idx: usize,
    control: &PiecewiseControl,
) -> f64 {
    use fluidnet::discretization::ControlKind;
    let h = cumulative_integrals(control);
    let one_sided = matches!(set, UncertaintySet::OneSided { .. });
    let effort = rp.model == ControlKind::Effort;
    let RowRole::Protected { site } = rp.row_roles[row_idx] else {
        panic!("row {row_idx} is not protected")
    };
    match site {
        ConstraintSite::Capacity { server, time_index } => {
            let mut nominal = 0.0;
            let mut a = vec![0.0; net.num_flows];
            for j in net.flows_of_server(server) {
                let u = control.value(j, time_index - 1);
                nominal += net.tau_nom[j] * u;
                a[j] = net.tau_dev[j] * u;
            }
            nominal + set.worst_case_linear(&a).unwrap()
        }
        ConstraintSite::Effort { server, time_index } => net
            .flows_of_server(server)
            .into_iter()
            .map(|j| control.value(j, time_index - 1))
            .sum(),
        ConstraintSite::Balance { buffer, time_index } => {
            let mut nominal = 0.0;
            let mut a = vec![0.0; net.num_flows];
            for j in 0..net.num_flows {
                let g = net.routing[buffer][j];
                if g == 0.0 {
                    continue;
                }
                if effort {
                    nominal += g * net.mu_nom[j] * h[j][time_index];
                    let sign = if one_sided { -1.0 } else { 1.0 };
                    a[j] = sign * g * net.mu_dev[j] * h[j][time_index];
                } else {
                    nominal += g * h[j][time_index];
                }
            }
            if effort {
                nominal + set.worst_case_linear(&a).unwrap()
            } else {
                nominal
            }
        }
        ConstraintSite::Epigraph { time_index } => {
            let t = rp.grid.breakpoints()[time_index];
            let mut value = rp.lambda * t;
            for k in 0..net.num_buffers {
                let ck = net.cost[k];
                if ck == 0.0 {
                    continue;
                }
                let mut term = net.alpha[k];
                let mut a = vec![0.0; net.num_flows];
                for j in 0..net.num_flows {
                    let g = net.routing[k][j];
                    if g == 0.0 {
                        continue;
                    }
                    if effort {
                        term -= g * net.mu_nom[j] * h[j][time_index];
                        let sign = if one_sided { 1.0 } else { -1.0 };
                        a[j] = sign * g * net.mu_dev[j] * h[j][time_index];
                    } else {
                        term -= g * h[j][time_index];
                    }
                }
                if effort {
                    term += set.worst_case_linear(&a).unwrap();
                }
                value += ck * term;
            }
            value
        }
        ConstraintSite::EpigraphTerm { .. } => {
            panic!("epigraph terms are audited through their epigraph row")
        }
    }
}

/// A random control of the problem's kind: rates scaled inside the robust
/// capacity, efforts scaled inside the server caps.
pub fn random_feasible_control(
    net: &FluidNetwork,
    rp: &RobustProblem,
    rng: &mut ChaCha8Rng,
) -> PiecewiseControl {
    use fluidnet::discretization::ControlKind;
    let n = rp.num_intervals();
    let mut values = vec![vec![0.0; n]; net.num_flows];
    for m in 0..n {
        for i in 0..net.num_servers {
            let flows: Vec<usize> = net.flows_of_server(i);
            let raw: Vec<f64> = flows.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            match rp.model {
                ControlKind::Effort => {
                    let total: f64 = raw.iter().sum();
                    let scale = rng.gen_range(0.2..=1.0) / total.max(1.0);
                    for (&j, &r) in flows.iter().zip(&raw) {
                        values[j][m] = r * scale;
                    }
                }
                ControlKind::Rates => {
                    let load: f64 = flows
                        .iter()
                        .zip(&raw)
                        .map(|(&j, r)| (net.tau_nom[j] + net.tau_dev[j]) * r)
                        .sum();
                    let scale = rng.gen_range(0.2..=1.0) / load.max(1e-9);
                    for (&j, &r) in flows.iter().zip(&raw) {
                        values[j][m] = r * scale;
                    }
                }
            }
        }
    }
    PiecewiseControl::new(rp.grid.clone(), values, rp.model).unwrap()
}

// ---------------------------------------------------------------------------
// Residual check: replay a solved robust counterpart against a sampled
// realization and measure the largest violation of the original (uncertain)
// constraints at every breakpoint.

/// Max violation over capacities / effort caps, buffer nonnegativity, and
/// cost epigraph rows at all breakpoints, for realized service parameters
/// drawn from `zeta_service` and arrival rates from `zeta_arrival ∈ [−1,1]^K`.
pub fn max_breakpoint_residual(
    net: &FluidNetwork,
    set: &UncertaintySet,
    rp: &RobustProblem,
    sol: &LpSolution,
    control: &PiecewiseControl,
    zeta_service: &[f64],
    zeta_arrival: &[f64],
) -> f64 {
    use fluidnet::discretization::ControlKind;
    let effort = rp.model == ControlKind::Effort;
    let one_sided = matches!(set, UncertaintySet::OneSided { .. });
    let tau = realized_tau(net, zeta_service);
    let mu = realized_mu(net, one_sided, zeta_service);
    let lambda: Vec<f64> = net
        .lambda_nom
        .iter()
        .zip(&net.lambda_dev)
        .zip(zeta_arrival)
        .map(|((l, d), z)| l + d * z)
        .collect();
    let h = cumulative_integrals(control);
    let mut worst: f64 = 0.0;

    for n in 1..=rp.num_intervals() {
        let t = rp.grid.breakpoints()[n];
        // Server constraints on interval n (1-based): realized capacity for
        // rates, the certain allocation cap for efforts.
        for i in 0..net.num_servers {
            let load: f64 = net
                .flows_of_server(i)
                .into_iter()
                .map(|j| {
                    let v = control.value(j, n - 1);
                    if effort {
                        v
                    } else {
                        tau[j] * v
                    }
                })
                .sum();
            worst = worst.max(load - 1.0);
        }
        // Buffer contents under the realization.
        let mut cost = 0.0;
        for k in 0..net.num_buffers {
            let mut level = net.alpha[k] + lambda[k] * t;
            for j in 0..net.num_flows {
                let g = net.routing[k][j];
                if g == 0.0 {
                    continue;
                }
                let amount = if effort { mu[j] * h[j][n] } else { h[j][n] };
                level -= g * amount;
            }
            worst = worst.max(-level);
            cost += net.cost[k] * level;
        }
        // The epigraph variable must dominate the realized instantaneous cost.
        let z_n = sol.x[rp.epigraph_column(n)];
        worst = worst.max(cost - z_n);
    }
    worst
}
