//! Dense linear-programming toolkit used by every other module.
//!
//! The problems this crate generates are small (a few hundred rows) but must
//! be solved exactly enough that counterpart-tightness and duality checks at
//! 1e-8 .. 1e-9 make sense. The solver is a two-phase primal simplex over a
//! dense LU-factorized basis with product-form eta updates and periodic
//! refactorization; see [`simplex`] for the algorithm and [`text`] for the
//! plain-text problem format.
//!
//! Conventions:
//! * minimization only;
//! * every column has a finite lower bound and an upper bound that may be
//!   `f64::INFINITY`;
//! * rows are `<=`, `>=` or `=` with arbitrary sign structure.

mod simplex;
pub mod text;

use thiserror::Error;

/// Feasibility tolerance: a point is accepted as satisfying a row when the
/// violation is below this, and phase 1 declares feasibility when the
/// artificial objective drops below it (scaled by the RHS magnitude).
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Optimality tolerance on reduced costs: a column prices in only when its
/// reduced cost is below `-OPTIMALITY_TOL`.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Smallest pivot magnitude the ratio test will accept. Below this the
/// column entry is treated as zero to avoid dividing by noise.
pub const PIVOT_TOL: f64 = 1e-11;
/// The basis LU factorization is rebuilt from scratch after this many eta
/// updates to keep accumulated error bounded.
pub const REFACTOR_INTERVAL: usize = 50;
/// Consecutive degenerate pivots tolerated before pricing switches to
/// Bland's rule for the remainder of the phase (cycling guard).
pub const BLAND_TRIGGER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub lower: f64,
    /// `f64::INFINITY` for an unbounded column.
    pub upper: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    /// Free-form annotation carried through text export as a trailing comment.
    pub note: Option<String>,
    /// Sparse terms `(column index, coefficient)`; at most one term per column.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("numerically ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

/// Result of a solve. `x`, `duals` and `reduced_costs` are meaningful only
/// when `status == Optimal`; they are empty otherwise.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    /// One multiplier per original row (0 for rows detected as redundant).
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Basic members at termination: a value `< ncols` is a structural
    /// column, `ncols + i` the slack of row `i`, and anything larger the
    /// slack of an internal upper-bound row.
    pub basis: Vec<usize>,
    pub iterations: usize,
    /// `|cᵀx − dual objective|`, including bound contributions.
    pub duality_gap: f64,
    /// Largest violation of any row or bound at the reported point.
    pub max_primal_residual: f64,
}

impl LpSolution {
    /// Sorted basis membership, stable under positive rescaling of the
    /// objective (used by tests as a pivot-path fingerprint).
    pub fn basis_signature(&self) -> Vec<usize> {
        let mut sig = self.basis.clone();
        sig.sort_unstable();
        sig
    }
}

/// An [`LpProblem`] with some columns substituted by constants.
pub struct FixedLp {
    pub problem: LpProblem,
    /// For each column of `problem`, the index it had in the source problem.
    pub kept: Vec<usize>,
    /// Objective contribution of the fixed columns; add to `problem`'s
    /// optimal value to recover the source objective.
    pub objective_offset: f64,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> usize {
        self.columns.push(Column {
            name: name.into(),
            lower,
            upper,
            objective,
        });
        self.columns.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.rows.push(Row {
            name: name.into(),
            note: None,
            terms,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn add_annotated_row(
        &mut self,
        name: impl Into<String>,
        note: impl Into<String>,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        let id = self.add_row(name, terms, relation, rhs);
        self.rows[id].note = Some(note.into());
        id
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Check the structural invariants every solver entry point relies on.
    pub fn validate(&self) -> Result<(), LpError> {
        let mut names = std::collections::BTreeSet::new();
        for (j, col) in self.columns.iter().enumerate() {
            if col.name.is_empty() {
                return Err(LpError::Invalid(format!("column {j} has an empty name")));
            }
            if !names.insert(col.name.as_str()) {
                return Err(LpError::Invalid(format!(
                    "duplicate column name `{}`",
                    col.name
                )));
            }
            if !col.lower.is_finite() {
                return Err(LpError::Invalid(format!(
                    "column `{}` must have a finite lower bound",
                    col.name
                )));
            }
            if col.upper.is_nan() || col.upper < col.lower {
                return Err(LpError::Invalid(format!(
                    "column `{}` has upper bound {} below lower bound {}",
                    col.name, col.upper, col.lower
                )));
            }
            if !col.objective.is_finite() {
                return Err(LpError::Invalid(format!(
                    "column `{}` has a non-finite objective coefficient",
                    col.name
                )));
            }
        }
        let mut row_names = std::collections::BTreeSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.name.is_empty() {
                return Err(LpError::Invalid(format!("row {i} has an empty name")));
            }
            if !row_names.insert(row.name.as_str()) {
                return Err(LpError::Invalid(format!("duplicate row name `{}`", row.name)));
            }
            if !row.rhs.is_finite() {
                return Err(LpError::Invalid(format!(
                    "row `{}` has a non-finite right-hand side",
                    row.name
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &(j, a) in &row.terms {
                if j >= self.columns.len() {
                    return Err(LpError::Invalid(format!(
                        "row `{}` references column index {} out of range",
                        row.name, j
                    )));
                }
                if !seen.insert(j) {
                    return Err(LpError::Invalid(format!(
                        "row `{}` lists column `{}` twice",
                        row.name, self.columns[j].name
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::Invalid(format!(
                        "row `{}` has a non-finite coefficient on `{}`",
                        row.name, self.columns[j].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Substitute fixed values for a set of columns and drop them. Rows keep
    /// their names and notes; right-hand sides absorb the fixed terms.
    pub fn fix_columns(&self, fixed: &std::collections::BTreeMap<usize, f64>) -> FixedLp {
        let mut problem = LpProblem::new();
        let mut kept = Vec::new();
        let mut new_index = vec![usize::MAX; self.columns.len()];
        let mut offset = 0.0;
        for (j, col) in self.columns.iter().enumerate() {
            if let Some(&v) = fixed.get(&j) {
                offset += col.objective * v;
            } else {
                new_index[j] = problem.add_column(col.name.clone(), col.lower, col.upper, col.objective);
                kept.push(j);
            }
        }
        for row in &self.rows {
            let mut rhs = row.rhs;
            let mut terms = Vec::with_capacity(row.terms.len());
            for &(j, a) in &row.terms {
                if let Some(&v) = fixed.get(&j) {
                    rhs -= a * v;
                } else {
                    terms.push((new_index[j], a));
                }
            }
            let id = problem.add_row(row.name.clone(), terms, row.relation, rhs);
            problem.rows[id].note = row.note.clone();
        }
        FixedLp {
            problem,
            kept,
            objective_offset: offset,
        }
    }

    /// Evaluate `terms · x − rhs` style residuals: returns the largest
    /// violation of any row or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, col) in self.columns.iter().enumerate() {
            worst = worst.max(col.lower - x[j]);
            if col.upper.is_finite() {
                worst = worst.max(x[j] - col.upper);
            }
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(x)
            .map(|(c, &v)| c.objective * v)
            .sum()
    }
}

/// Solve `problem` to optimality (or prove infeasibility / unboundedness).
pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    simplex::solve(problem)
}
