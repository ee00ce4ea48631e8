//! Two-phase primal simplex over a dense LU-factorized basis.
//!
//! Standardization: columns are shifted to lower bound 0; finite upper bounds
//! become internal `x <= u - lo` rows; every row is scaled so its RHS is
//! nonnegative and then receives a slack (`<=`), a surplus plus an artificial
//! (`>=`), or an artificial (`=`). Phase 1 minimizes the artificial sum;
//! a row whose artificial cannot be pivoted out at level zero is linearly
//! dependent and is dropped before phase 2. Phase 2 minimizes the true
//! objective with artificials barred from entering.
//!
//! Pricing is Dantzig's rule (most negative reduced cost, lowest index on
//! ties) until [`super::BLAND_TRIGGER`] consecutive degenerate pivots have
//! occurred, after which Bland's rule is used for the remainder of the phase,
//! which guarantees termination. The basis representation is a dense LU with
//! partial pivoting plus product-form eta updates, refactorized every
//! [`super::REFACTOR_INTERVAL`] pivots.

use super::{
    LpError, LpProblem, LpSolution, LpStatus, Relation, BLAND_TRIGGER, FEASIBILITY_TOL,
    OPTIMALITY_TOL, PIVOT_TOL, REFACTOR_INTERVAL,
};

/// Dense LU factorization with partial pivoting, row-major.
struct Lu {
    n: usize,
    data: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut data: Vec<f64>, n: usize) -> Result<Lu, LpError> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = data[k * n + k].abs();
            for i in k + 1..n {
                let v = data[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < PIVOT_TOL {
                return Err(LpError::IllConditioned(format!(
                    "singular basis (pivot {best:.3e} at column {k})"
                )));
            }
            if p != k {
                for j in 0..n {
                    data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = data[k * n + k];
            for i in k + 1..n {
                let f = data[i * n + k] / piv;
                data[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        data[i * n + j] -= f * data[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, data, perm })
    }

    /// Solve `B v = rhs` in place.
    fn solve(&self, rhs: &mut [f64]) {
        let n = self.n;
        let tmp: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        rhs.copy_from_slice(&tmp);
        for i in 1..n {
            let mut acc = rhs[i];
            for j in 0..i {
                acc -= self.data[i * n + j] * rhs[j];
            }
            rhs[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..n {
                acc -= self.data[i * n + j] * rhs[j];
            }
            rhs[i] = acc / self.data[i * n + i];
        }
    }

    /// Solve `Bᵀ v = rhs` in place.
    fn solve_t(&self, rhs: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = rhs[i];
            for j in 0..i {
                acc -= self.data[j * n + i] * rhs[j];
            }
            rhs[i] = acc / self.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..n {
                acc -= self.data[j * n + i] * rhs[j];
            }
            rhs[i] = acc;
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = rhs[i];
        }
        rhs.copy_from_slice(&out);
    }
}

struct Eta {
    row: usize,
    col: Vec<f64>,
}

/// Standardized system: `A x̃ = b`, `x̃ >= 0`, minimize `costᵀ x̃`.
struct Sys {
    m: usize,
    /// Sparse columns: structural, then slack/surplus, then artificials.
    /// Entries are static; row drops rewrite them once between phases.
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    /// Phase-2 objective per column (0 on slacks and artificials).
    cost: Vec<f64>,
    art_start: usize,
    /// Original problem row behind each system row; `usize::MAX` marks the
    /// internal rows that encode finite upper bounds.
    row_origin: Vec<usize>,
    /// +1/-1 applied to each row while normalizing its RHS.
    row_sign: Vec<f64>,
    relations: Vec<Relation>,
}

fn standardize(p: &LpProblem) -> Sys {
    let n = p.columns.len();
    let mut raw: Vec<(Vec<(usize, f64)>, Relation, f64, usize)> = Vec::new();
    for (i, row) in p.rows.iter().enumerate() {
        let shift: f64 = row
            .terms
            .iter()
            .map(|&(j, a)| a * p.columns[j].lower)
            .sum();
        raw.push((row.terms.clone(), row.relation, row.rhs - shift, i));
    }
    for (j, col) in p.columns.iter().enumerate() {
        if col.upper.is_finite() {
            raw.push((
                vec![(j, 1.0)],
                Relation::Le,
                col.upper - col.lower,
                usize::MAX,
            ));
        }
    }
    let m = raw.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b = vec![0.0; m];
    let mut row_sign = vec![1.0; m];
    let mut row_origin = vec![usize::MAX; m];
    let mut relations = vec![Relation::Eq; m];
    for (i, (terms, rel, rhs, origin)) in raw.into_iter().enumerate() {
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        row_sign[i] = sign;
        row_origin[i] = origin;
        b[i] = rhs * sign;
        relations[i] = match (rel, sign < 0.0) {
            (Relation::Le, false) | (Relation::Ge, true) => Relation::Le,
            (Relation::Ge, false) | (Relation::Le, true) => Relation::Ge,
            (Relation::Eq, _) => Relation::Eq,
        };
        for (j, a) in terms {
            if a != 0.0 {
                cols[j].push((i, a * sign));
            }
        }
    }
    let mut cost: Vec<f64> = p.columns.iter().map(|c| c.objective).collect();
    for (i, rel) in relations.iter().enumerate() {
        match rel {
            Relation::Le => {
                cols.push(vec![(i, 1.0)]);
                cost.push(0.0);
            }
            Relation::Ge => {
                cols.push(vec![(i, -1.0)]);
                cost.push(0.0);
            }
            Relation::Eq => {}
        }
    }
    let art_start = cols.len();
    for (i, rel) in relations.iter().enumerate() {
        if !matches!(rel, Relation::Le) {
            cols.push(vec![(i, 1.0)]);
            cost.push(0.0);
        }
    }
    Sys {
        m,
        cols,
        b,
        cost,
        art_start,
        row_origin,
        row_sign,
        relations,
    }
}

struct Basis {
    members: Vec<usize>,
    in_basis: Vec<bool>,
    x_b: Vec<f64>,
    lu: Lu,
    etas: Vec<Eta>,
    pivots_since_refactor: usize,
}

impl Basis {
    fn build(sys: &Sys, members: Vec<usize>) -> Result<Basis, LpError> {
        let m = sys.m;
        let mut dense = vec![0.0; m * m];
        for (k, &j) in members.iter().enumerate() {
            for &(i, a) in &sys.cols[j] {
                dense[i * m + k] = a;
            }
        }
        let lu = Lu::factor(dense, m)?;
        let mut x_b = sys.b.clone();
        lu.solve(&mut x_b);
        let mut in_basis = vec![false; sys.cols.len()];
        for &j in &members {
            in_basis[j] = true;
        }
        Ok(Basis {
            members,
            in_basis,
            x_b,
            lu,
            etas: Vec::new(),
            pivots_since_refactor: 0,
        })
    }

    fn ftran(&self, v: &mut [f64]) {
        self.lu.solve(v);
        for eta in &self.etas {
            let r = eta.row;
            let vr = v[r] / eta.col[r];
            if vr != 0.0 {
                for (i, vi) in v.iter_mut().enumerate() {
                    if i != r {
                        *vi -= eta.col[i] * vr;
                    }
                }
            }
            v[r] = vr;
        }
    }

    fn btran(&self, v: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let r = eta.row;
            let mut acc = v[r];
            for (i, &vi) in v.iter().enumerate() {
                if i != r {
                    acc -= eta.col[i] * vi;
                }
            }
            v[r] = acc / eta.col[r];
        }
        self.lu.solve_t(v);
    }

    fn column(&self, sys: &Sys, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; sys.m];
        for &(i, a) in &sys.cols[j] {
            v[i] = a;
        }
        self.ftran(&mut v);
        v
    }

    fn pivot(
        &mut self,
        sys: &Sys,
        r: usize,
        q: usize,
        w: Vec<f64>,
        theta: f64,
    ) -> Result<(), LpError> {
        let leaving = self.members[r];
        self.in_basis[leaving] = false;
        self.in_basis[q] = true;
        self.members[r] = q;
        for i in 0..self.x_b.len() {
            if i != r {
                self.x_b[i] -= theta * w[i];
            }
        }
        self.x_b[r] = theta;
        self.etas.push(Eta { row: r, col: w });
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_INTERVAL {
            self.refactor(sys)?;
        }
        Ok(())
    }

    fn refactor(&mut self, sys: &Sys) -> Result<(), LpError> {
        *self = Basis::build(sys, self.members.clone())?;
        Ok(())
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

/// Run one simplex phase with the given objective. Only columns below
/// `entering_limit` may enter the basis (artificials never re-enter).
fn run_phase(
    sys: &Sys,
    basis: &mut Basis,
    cost: &[f64],
    entering_limit: usize,
    iterations: &mut usize,
    iter_cap: usize,
) -> Result<PhaseOutcome, LpError> {
    let m = sys.m;
    let mut bland = false;
    let mut degenerate_run = 0usize;
    loop {
        *iterations += 1;
        if *iterations > iter_cap {
            return Err(LpError::IllConditioned(
                "iteration limit exceeded".to_string(),
            ));
        }
        let mut y: Vec<f64> = (0..m).map(|i| cost[basis.members[i]]).collect();
        basis.btran(&mut y);

        let mut entering: Option<(usize, f64)> = None;
        for (j, col) in sys.cols.iter().enumerate().take(entering_limit) {
            if basis.in_basis[j] {
                continue;
            }
            let mut d = cost[j];
            for &(i, a) in col {
                d -= y[i] * a;
            }
            if d < -OPTIMALITY_TOL {
                if bland {
                    entering = Some((j, d));
                    break;
                }
                match entering {
                    Some((_, best)) if d >= best => {}
                    _ => entering = Some((j, d)),
                }
            }
        }
        let Some((q, _)) = entering else {
            return Ok(PhaseOutcome::Optimal);
        };

        let w = basis.column(sys, q);
        // Ratio test over w[i] > PIVOT_TOL. Ties (within the feasibility
        // tolerance) prefer a leaving artificial, then the larger pivot.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if w[i] > PIVOT_TOL {
                let ratio = basis.x_b[i].max(0.0) / w[i];
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        if ratio < best - FEASIBILITY_TOL {
                            true
                        } else if ratio > best + FEASIBILITY_TOL {
                            false
                        } else {
                            let cand_art = basis.members[i] >= sys.art_start;
                            let incumbent_art = basis.members[r] >= sys.art_start;
                            if cand_art != incumbent_art {
                                cand_art
                            } else {
                                w[i] > w[r] + 1e-12
                            }
                        }
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, theta)) = leave else {
            return Ok(PhaseOutcome::Unbounded);
        };
        if theta <= FEASIBILITY_TOL {
            degenerate_run += 1;
            if degenerate_run > BLAND_TRIGGER {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
        basis.pivot(sys, r, q, w, theta)?;
    }
}

pub(super) fn solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let mut sys = standardize(p);
    let iter_cap = 200 * (sys.m + sys.cols.len()) + 10_000;
    let mut iterations = 0usize;

    if sys.m == 0 {
        // No rows: every upper bound is infinite, so a negative objective
        // coefficient is an unbounded ray and otherwise x = lower is optimal.
        if p.columns.iter().any(|c| c.objective < -OPTIMALITY_TOL) {
            return Ok(unbounded_solution());
        }
        let x: Vec<f64> = p.columns.iter().map(|c| c.lower).collect();
        return Ok(LpSolution {
            status: LpStatus::Optimal,
            objective: p.objective_value(&x),
            x,
            duals: vec![0.0; p.rows.len()],
            reduced_costs: p.columns.iter().map(|c| c.objective).collect(),
            basis: Vec::new(),
            iterations: 0,
            duality_gap: 0.0,
            max_primal_residual: 0.0,
        });
    }

    // Initial basis: slack on <= rows, artificial elsewhere; artificial
    // columns were created in row order, so re-walk the relations to map them.
    let mut members = Vec::with_capacity(sys.m);
    {
        let mut slack = p.columns.len();
        let mut art = sys.art_start;
        for rel in &sys.relations {
            match rel {
                Relation::Le => {
                    members.push(slack);
                    slack += 1;
                }
                Relation::Ge => {
                    members.push(art);
                    art += 1;
                    slack += 1;
                }
                Relation::Eq => {
                    members.push(art);
                    art += 1;
                }
            }
        }
    }
    let mut basis = Basis::build(&sys, members)?;

    if sys.art_start < sys.cols.len() {
        let mut phase1_cost = vec![0.0; sys.cols.len()];
        for c in phase1_cost.iter_mut().skip(sys.art_start) {
            *c = 1.0;
        }
        match run_phase(
            &sys,
            &mut basis,
            &phase1_cost,
            sys.art_start,
            &mut iterations,
            iter_cap,
        )? {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => {
                return Err(LpError::IllConditioned(
                    "phase 1 reported unbounded".to_string(),
                ));
            }
        }
        let scale = 1.0 + sys.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let art_level: f64 = basis
            .members
            .iter()
            .zip(&basis.x_b)
            .filter(|(&j, _)| j >= sys.art_start)
            .map(|(_, &v)| v.max(0.0))
            .sum();
        if art_level > FEASIBILITY_TOL * scale {
            return Ok(infeasible_solution(iterations));
        }

        // Drive remaining artificials out at level zero; rows that refuse are
        // linearly dependent on the others and get dropped.
        let mut dependent_rows: Vec<usize> = Vec::new();
        for pos in 0..sys.m {
            if basis.members[pos] < sys.art_start {
                continue;
            }
            let mut replaced = false;
            for j in 0..sys.art_start {
                if basis.in_basis[j] {
                    continue;
                }
                let w = basis.column(&sys, j);
                if w[pos].abs() > PIVOT_TOL {
                    basis.pivot(&sys, pos, j, w, 0.0)?;
                    replaced = true;
                    break;
                }
            }
            if !replaced {
                // An artificial column has exactly one entry: its row.
                dependent_rows.push(sys.cols[basis.members[pos]][0].0);
            }
        }
        if !dependent_rows.is_empty() {
            let keep_members: Vec<usize> = basis
                .members
                .iter()
                .copied()
                .filter(|&j| j < sys.art_start)
                .collect();
            compress_rows(&mut sys, &dependent_rows);
            basis = Basis::build(&sys, keep_members)?;
        }
    }

    let cost = sys.cost.clone();
    let outcome = run_phase(
        &sys,
        &mut basis,
        &cost,
        sys.art_start,
        &mut iterations,
        iter_cap,
    )?;
    if matches!(outcome, PhaseOutcome::Unbounded) {
        return Ok(unbounded_solution());
    }

    // Fresh factorization of the final basis for clean primal/dual values.
    basis.refactor(&sys)?;

    let n = p.columns.len();
    let mut x_shifted = vec![0.0; sys.cols.len()];
    for (pos, &j) in basis.members.iter().enumerate() {
        x_shifted[j] = basis.x_b[pos].max(0.0);
    }
    let mut x = vec![0.0; n];
    for (j, xj) in x.iter_mut().enumerate() {
        *xj = p.columns[j].lower + x_shifted[j];
    }

    let mut y: Vec<f64> = (0..sys.m).map(|i| cost[basis.members[i]]).collect();
    basis.btran(&mut y);

    let mut duals = vec![0.0; p.rows.len()];
    for i in 0..sys.m {
        if sys.row_origin[i] != usize::MAX {
            duals[sys.row_origin[i]] = y[i] * sys.row_sign[i];
        }
    }
    let mut reduced = vec![0.0; n];
    for (j, red) in reduced.iter_mut().enumerate() {
        let mut d = cost[j];
        for &(i, a) in &sys.cols[j] {
            d -= y[i] * a;
        }
        *red = d;
    }

    let objective = p.objective_value(&x);
    let max_primal_residual = p.max_violation(&x);
    let offset: f64 = p.columns.iter().map(|c| c.objective * c.lower).sum();
    let dual_obj: f64 = sys.b.iter().zip(&y).map(|(&bi, &yi)| bi * yi).sum::<f64>() + offset;

    let basis_out: Vec<usize> = basis
        .members
        .iter()
        .map(|&j| {
            if j < n {
                j
            } else {
                // A slack/surplus: identify it by its unique row entry.
                let row = sys.cols[j][0].0;
                match sys.row_origin[row] {
                    usize::MAX => n + p.rows.len() + row,
                    orig => n + orig,
                }
            }
        })
        .collect();

    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective,
        x,
        duals,
        reduced_costs: reduced,
        basis: basis_out,
        iterations,
        duality_gap: (objective - dual_obj).abs(),
        max_primal_residual,
    })
}

/// Remove the given system rows (their slack/surplus/artificial columns are
/// left in place but become empty and can never re-enter a basis).
fn compress_rows(sys: &mut Sys, dropped: &[usize]) {
    let mut keep = vec![true; sys.m];
    for &r in dropped {
        keep[r] = false;
    }
    let mut new_of_old = vec![usize::MAX; sys.m];
    let mut next = 0usize;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            new_of_old[i] = next;
            next += 1;
        }
    }
    for col in sys.cols.iter_mut() {
        col.retain(|&(i, _)| keep[i]);
        for e in col.iter_mut() {
            e.0 = new_of_old[e.0];
        }
    }
    let compress = |v: &mut Vec<f64>| {
        let mut i = 0usize;
        v.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    };
    compress(&mut sys.b);
    compress(&mut sys.row_sign);
    let mut i = 0usize;
    sys.row_origin.retain(|_| {
        let k = keep[i];
        i += 1;
        k
    });
    let mut i = 0usize;
    sys.relations.retain(|_| {
        let k = keep[i];
        i += 1;
        k
    });
    sys.m = next;
}

fn unbounded_solution() -> LpSolution {
    LpSolution {
        status: LpStatus::Unbounded,
        objective: f64::NEG_INFINITY,
        x: Vec::new(),
        duals: Vec::new(),
        reduced_costs: Vec::new(),
        basis: Vec::new(),
        iterations: 0,
        duality_gap: f64::NAN,
        max_primal_residual: f64::NAN,
    }
}

fn infeasible_solution(iterations: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        objective: f64::NAN,
        x: Vec::new(),
        duals: Vec::new(),
        reduced_costs: Vec::new(),
        basis: Vec::new(),
        iterations,
        duality_gap: f64::NAN,
        max_primal_residual: f64::NAN,
    }
}
