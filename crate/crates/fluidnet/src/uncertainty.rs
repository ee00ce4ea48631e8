//! Uncertainty sets for the perturbation vector ζ.
//!
//! Uncertain data enters the models as `value = nominal + deviation · ζ_ℓ`
//! with ζ ranging over one of four set shapes:
//!
//! * **Box** — `|ζ_ℓ| ≤ 1` independently; the most conservative choice.
//! * **Budgeted** — the box plus `Σ_{ℓ∈g} |ζ_ℓ| ≤ Γ_g` for disjoint
//!   coordinate groups `g` (one per server when used for service times), so
//!   at most ~Γ coordinates per group can deviate fully at once.
//! * **One-sided budgeted** — `0 ≤ ζ_ℓ ≤ 1` with `Σ_{ℓ∈g} ζ_ℓ ≤ Γ_g`;
//!   adversarial slowdowns only.
//! * **Polyhedral** — any bounded nonempty `{ζ : Dζ + d ≥ 0}`.
//!
//! Every set answers the adversary's problem `max_{ζ∈S} a·ζ` exactly — in
//! closed form for the first three, by a linear program for the last — and
//! returns a witness ζ attaining the maximum. These oracles are what the
//! robust counterpart construction is tested against.

use crate::lp::{self, LpError, LpProblem, LpStatus, Relation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("the set must have at least one coordinate")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("the polyhedron is empty")]
    EmptySet,
    #[error("the polyhedron is unbounded in coordinate {coord}")]
    UnboundedSet { coord: usize },
    #[error("configuration kind `{kind}` needs field `{field}`")]
    MissingField { kind: String, field: String },
    #[error("unknown uncertainty kind `{0}` (expected box, budgeted, one_sided or polyhedral)")]
    UnknownKind(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A budget constraint over a subset of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetGroup {
    pub members: Vec<usize>,
    pub gamma: f64,
}

/// A bounded nonempty polyhedron `{ζ : Dζ + d ≥ 0}`. Construction verifies
/// both properties by solving `2·dim` bounding programs (each coordinate is
/// minimized and maximized over the set, with ζ split into nonnegative
/// parts, so a recession direction shows up as an unbounded program).
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    d_matrix: Vec<Vec<f64>>,
    d_vector: Vec<f64>,
    dim: usize,
    /// Per-coordinate `[min, max]` over the set, found during validation.
    bounds: Vec<(f64, f64)>,
}

impl Polyhedron {
    pub fn new(d_matrix: Vec<Vec<f64>>, d_vector: Vec<f64>) -> Result<Self, UncertaintyError> {
        let dim = d_matrix.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(UncertaintyError::ZeroDimension);
        }
        if d_matrix.len() != d_vector.len() {
            return Err(UncertaintyError::DimensionMismatch {
                expected: d_matrix.len(),
                found: d_vector.len(),
            });
        }
        for row in &d_matrix {
            if row.len() != dim {
                return Err(UncertaintyError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        let all = d_matrix.iter().flatten().chain(d_vector.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(UncertaintyError::InvalidParameter(
                "polyhedron data must be finite".to_string(),
            ));
        }

        let mut bounds = Vec::with_capacity(dim);
        for coord in 0..dim {
            let mut objective = vec![0.0; dim];
            objective[coord] = 1.0;
            let min = split_lp_extreme(&d_matrix, &d_vector, &objective, coord)?;
            objective[coord] = -1.0;
            let max = -split_lp_extreme(&d_matrix, &d_vector, &objective, coord)?;
            bounds.push((min, max));
        }
        Ok(Polyhedron {
            d_matrix,
            d_vector,
            dim,
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.d_vector.len()
    }

    /// Rows of `D`.
    pub fn d_matrix(&self) -> &[Vec<f64>] {
        &self.d_matrix
    }

    pub fn d_vector(&self) -> &[f64] {
        &self.d_vector
    }

    /// Coordinate ranges `[min ζ_ℓ, max ζ_ℓ]` over the set.
    pub fn coordinate_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// True when the whole set satisfies `|ζ_ℓ| ≤ 1 + tol` coordinate-wise.
    pub fn within_unit_box(&self, tol: f64) -> bool {
        self.bounds
            .iter()
            .all(|&(lo, hi)| lo >= -1.0 - tol && hi <= 1.0 + tol)
    }
}

/// Minimize `objective · ζ` over `{Dζ + d ≥ 0}` with the free vector split
/// as `ζ = p − q`, `p, q ≥ 0`. `coord` only labels error messages.
fn split_lp_extreme(
    d_matrix: &[Vec<f64>],
    d_vector: &[f64],
    objective: &[f64],
    coord: usize,
) -> Result<f64, UncertaintyError> {
    let dim = objective.len();
    let mut p = LpProblem::new();
    for j in 0..dim {
        p.add_column(format!("zp{j}"), 0.0, f64::INFINITY, objective[j]);
    }
    for j in 0..dim {
        p.add_column(format!("zn{j}"), 0.0, f64::INFINITY, -objective[j]);
    }
    for (m, (row, &dm)) in d_matrix.iter().zip(d_vector).enumerate() {
        let mut terms = Vec::new();
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                terms.push((j, a));
                terms.push((dim + j, -a));
            }
        }
        p.add_row(format!("row{m}"), terms, Relation::Ge, -dm);
    }
    let sol = lp::solve(&p)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(UncertaintyError::EmptySet),
        LpStatus::Unbounded => Err(UncertaintyError::UnboundedSet { coord }),
    }
}

/// The adversary's optimum and a point attaining it.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub value: f64,
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintySet {
    Box {
        dim: usize,
    },
    Budgeted {
        dim: usize,
        groups: Vec<BudgetGroup>,
    },
    OneSided {
        dim: usize,
        groups: Vec<BudgetGroup>,
    },
    Polyhedral(Polyhedron),
}

fn check_groups(dim: usize, groups: &[BudgetGroup]) -> Result<(), UncertaintyError> {
    let mut seen = vec![false; dim];
    for (g, group) in groups.iter().enumerate() {
        if !(group.gamma.is_finite() && group.gamma >= 0.0) {
            return Err(UncertaintyError::InvalidParameter(format!(
                "group {g} has budget {}, which must be finite and nonnegative",
                group.gamma
            )));
        }
        if group.members.is_empty() {
            return Err(UncertaintyError::InvalidGroup(format!("group {g} is empty")));
        }
        for &m in &group.members {
            if m >= dim {
                return Err(UncertaintyError::InvalidGroup(format!(
                    "group {g} references coordinate {m}, but the set has {dim}"
                )));
            }
            if seen[m] {
                return Err(UncertaintyError::InvalidGroup(format!(
                    "coordinate {m} appears in two groups"
                )));
            }
            seen[m] = true;
        }
    }
    Ok(())
}

impl UncertaintySet {
    pub fn box_set(dim: usize) -> Result<Self, UncertaintyError> {
        if dim == 0 {
            return Err(UncertaintyError::ZeroDimension);
        }
        Ok(UncertaintySet::Box { dim })
    }

    /// Box plus two-sided budgets. Coordinates outside every group behave
    /// like plain box coordinates.
    pub fn budgeted(dim: usize, groups: Vec<BudgetGroup>) -> Result<Self, UncertaintyError> {
        if dim == 0 {
            return Err(UncertaintyError::ZeroDimension);
        }
        check_groups(dim, &groups)?;
        Ok(UncertaintySet::Budgeted { dim, groups })
    }

    /// `0 ≤ ζ ≤ 1` plus one-sided budgets.
    pub fn one_sided(dim: usize, groups: Vec<BudgetGroup>) -> Result<Self, UncertaintyError> {
        if dim == 0 {
            return Err(UncertaintyError::ZeroDimension);
        }
        check_groups(dim, &groups)?;
        Ok(UncertaintySet::OneSided { dim, groups })
    }

    pub fn polyhedral(p: Polyhedron) -> Self {
        UncertaintySet::Polyhedral(p)
    }

    pub fn dim(&self) -> usize {
        match self {
            UncertaintySet::Box { dim }
            | UncertaintySet::Budgeted { dim, .. }
            | UncertaintySet::OneSided { dim, .. } => *dim,
            UncertaintySet::Polyhedral(p) => p.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            UncertaintySet::Box { .. } => "box",
            UncertaintySet::Budgeted { .. } => "budgeted",
            UncertaintySet::OneSided { .. } => "one_sided",
            UncertaintySet::Polyhedral(_) => "polyhedral",
        }
    }

    /// Membership with tolerance `tol` on every defining inequality.
    pub fn contains(&self, zeta: &[f64], tol: f64) -> bool {
        if zeta.len() != self.dim() {
            return false;
        }
        match self {
            UncertaintySet::Box { .. } => zeta.iter().all(|z| z.abs() <= 1.0 + tol),
            UncertaintySet::Budgeted { groups, .. } => {
                zeta.iter().all(|z| z.abs() <= 1.0 + tol)
                    && groups.iter().all(|g| {
                        g.members.iter().map(|&m| zeta[m].abs()).sum::<f64>() <= g.gamma + tol
                    })
            }
            UncertaintySet::OneSided { groups, .. } => {
                zeta.iter().all(|&z| (-tol..=1.0 + tol).contains(&z))
                    && groups.iter().all(|g| {
                        g.members.iter().map(|&m| zeta[m]).sum::<f64>() <= g.gamma + tol
                    })
            }
            UncertaintySet::Polyhedral(p) => p
                .d_matrix
                .iter()
                .zip(&p.d_vector)
                .all(|(row, &dm)| {
                    row.iter().zip(zeta).map(|(a, z)| a * z).sum::<f64>() + dm >= -tol
                }),
        }
    }

    /// Solve `max_{ζ∈S} a·ζ` exactly and return the optimum with a witness.
    pub fn worst_case(&self, a: &[f64]) -> Result<WorstCase, UncertaintyError> {
        if a.len() != self.dim() {
            return Err(UncertaintyError::DimensionMismatch {
                expected: self.dim(),
                found: a.len(),
            });
        }
        match self {
            UncertaintySet::Box { dim } => {
                let witness: Vec<f64> = a.iter().map(|v| v.signum() * f64::from(*v != 0.0)).collect();
                let value = a.iter().map(|v| v.abs()).sum();
                debug_assert_eq!(witness.len(), *dim);
                Ok(WorstCase { value, witness })
            }
            UncertaintySet::Budgeted { dim, groups } => {
                let mut witness = vec![0.0; *dim];
                let mut covered = vec![false; *dim];
                let mut value = 0.0;
                for g in groups {
                    for &m in &g.members {
                        covered[m] = true;
                    }
                    value += budget_fill(g, &mut witness, |m| a[m].abs(), |m| a[m].signum());
                }
                for (m, &c) in covered.iter().enumerate() {
                    if !c && a[m] != 0.0 {
                        value += a[m].abs();
                        witness[m] = a[m].signum();
                    }
                }
                Ok(WorstCase { value, witness })
            }
            UncertaintySet::OneSided { dim, groups } => {
                let mut witness = vec![0.0; *dim];
                let mut covered = vec![false; *dim];
                let mut value = 0.0;
                for g in groups {
                    for &m in &g.members {
                        covered[m] = true;
                    }
                    value += budget_fill(g, &mut witness, |m| a[m].max(0.0), |_| 1.0);
                }
                for (m, &c) in covered.iter().enumerate() {
                    if !c && a[m] > 0.0 {
                        value += a[m];
                        witness[m] = 1.0;
                    }
                }
                Ok(WorstCase { value, witness })
            }
            UncertaintySet::Polyhedral(p) => {
                let dim = p.dim();
                let mut lpp = LpProblem::new();
                for j in 0..dim {
                    lpp.add_column(format!("zp{j}"), 0.0, f64::INFINITY, -a[j]);
                }
                for j in 0..dim {
                    lpp.add_column(format!("zn{j}"), 0.0, f64::INFINITY, a[j]);
                }
                for (m, (row, &dm)) in p.d_matrix.iter().zip(&p.d_vector).enumerate() {
                    let mut terms = Vec::new();
                    for (j, &v) in row.iter().enumerate() {
                        if v != 0.0 {
                            terms.push((j, v));
                            terms.push((dim + j, -v));
                        }
                    }
                    lpp.add_row(format!("row{m}"), terms, Relation::Ge, -dm);
                }
                let sol = lp::solve(&lpp)?;
                match sol.status {
                    LpStatus::Optimal => {
                        let witness: Vec<f64> =
                            (0..dim).map(|j| sol.x[j] - sol.x[dim + j]).collect();
                        Ok(WorstCase {
                            value: -sol.objective,
                            witness,
                        })
                    }
                    // Construction proved the set nonempty and bounded.
                    LpStatus::Infeasible => Err(UncertaintyError::EmptySet),
                    LpStatus::Unbounded => Err(UncertaintyError::UnboundedSet { coord: 0 }),
                }
            }
        }
    }

    /// The optimum of `max_{ζ∈S} a·ζ` without the witness.
    pub fn worst_case_linear(&self, a: &[f64]) -> Result<f64, UncertaintyError> {
        Ok(self.worst_case(a)?.value)
    }
}

/// Greedy filler for one budget group: spend the budget on the coordinates
/// with the largest gains, the fractional remainder on the next one. Gains
/// are `gain(m) ≥ 0`; sign(m) orients the witness coordinate. Returns the
/// group's contribution to the optimum.
fn budget_fill(
    group: &BudgetGroup,
    witness: &mut [f64],
    gain: impl Fn(usize) -> f64,
    sign: impl Fn(usize) -> f64,
) -> f64 {
    let mut order: Vec<usize> = group.members.clone();
    order.sort_by(|&x, &y| gain(y).total_cmp(&gain(x)).then(x.cmp(&y)));
    let whole = (group.gamma.floor() as usize).min(order.len());
    let frac = if whole < order.len() {
        (group.gamma - whole as f64).min(1.0)
    } else {
        0.0
    };
    let mut value = 0.0;
    for (rank, &m) in order.iter().enumerate() {
        let g = gain(m);
        if g <= 0.0 {
            break;
        }
        if rank < whole {
            value += g;
            witness[m] = sign(m);
        } else if rank == whole && frac > 0.0 {
            value += frac * g;
            witness[m] = frac * sign(m);
        } else {
            break;
        }
    }
    value
}

/// Convert a symmetric box on processing times, `τ_j ∈ [τ̄_j − τ̂_j, τ̄_j + τ̂_j]`,
/// into the box on rates `μ_j = 1/τ_j` used by the effort model: with
/// `ε_j = τ̂_j/τ̄_j`,
///
/// `μ̄_j = 1 / (τ̄_j (1 − ε_j²))`, `μ̂_j = ε_j μ̄_j`,
///
/// which reproduces the exact interval endpoints `1/(τ̄_j ± τ̂_j)`.
pub fn tau_box_to_mu_box(
    tau_nom: &[f64],
    tau_dev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), UncertaintyError> {
    if tau_nom.len() != tau_dev.len() {
        return Err(UncertaintyError::DimensionMismatch {
            expected: tau_nom.len(),
            found: tau_dev.len(),
        });
    }
    let mut mu_nom = Vec::with_capacity(tau_nom.len());
    let mut mu_dev = Vec::with_capacity(tau_nom.len());
    for (j, (&tn, &td)) in tau_nom.iter().zip(tau_dev).enumerate() {
        if !(tn.is_finite() && tn > 0.0) {
            return Err(UncertaintyError::InvalidParameter(format!(
                "nominal processing time of flow {j} must be positive, got {tn}"
            )));
        }
        if !(td.is_finite() && td >= 0.0 && td < tn) {
            return Err(UncertaintyError::InvalidParameter(format!(
                "processing-time deviation of flow {j} must satisfy 0 <= {td} < {tn}, \
                 otherwise the rate can vanish"
            )));
        }
        let eps = td / tn;
        let nom = 1.0 / (tn * (1.0 - eps * eps));
        mu_nom.push(nom);
        mu_dev.push(eps * nom);
    }
    Ok((mu_nom, mu_dev))
}

/// Serializable description of an uncertainty set, independent of the
/// network it will be applied to. `gamma` is the shared per-group budget for
/// the budgeted kinds; `D`/`d` define polyhedral sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
}

impl UncertaintyConfig {
    pub fn boxed() -> Self {
        UncertaintyConfig {
            kind: "box".to_string(),
            gamma: None,
            d_matrix: None,
            d: None,
        }
    }

    pub fn budgeted(gamma: f64) -> Self {
        UncertaintyConfig {
            kind: "budgeted".to_string(),
            gamma: Some(gamma),
            d_matrix: None,
            d: None,
        }
    }

    pub fn one_sided(gamma: f64) -> Self {
        UncertaintyConfig {
            kind: "one_sided".to_string(),
            gamma: Some(gamma),
            d_matrix: None,
            d: None,
        }
    }

    pub fn polyhedral(d_matrix: Vec<Vec<f64>>, d: Vec<f64>) -> Self {
        UncertaintyConfig {
            kind: "polyhedral".to_string(),
            gamma: None,
            d_matrix: Some(d_matrix),
            d: Some(d),
        }
    }

    /// Materialize the set for a `dim`-coordinate perturbation vector. The
    /// budgeted kinds put the configured `gamma` on each of `group_members`
    /// (for service times: the flows of each server).
    pub fn build(
        &self,
        dim: usize,
        group_members: &[Vec<usize>],
    ) -> Result<UncertaintySet, UncertaintyError> {
        let need_gamma = || {
            self.gamma.ok_or_else(|| UncertaintyError::MissingField {
                kind: self.kind.clone(),
                field: "gamma".to_string(),
            })
        };
        match self.kind.as_str() {
            "box" => UncertaintySet::box_set(dim),
            "budgeted" | "one_sided" => {
                let gamma = need_gamma()?;
                let groups: Vec<BudgetGroup> = group_members
                    .iter()
                    .filter(|m| !m.is_empty())
                    .map(|m| BudgetGroup {
                        members: m.clone(),
                        gamma,
                    })
                    .collect();
                if self.kind == "budgeted" {
                    UncertaintySet::budgeted(dim, groups)
                } else {
                    UncertaintySet::one_sided(dim, groups)
                }
            }
            "polyhedral" => {
                let matrix =
                    self.d_matrix
                        .clone()
                        .ok_or_else(|| UncertaintyError::MissingField {
                            kind: self.kind.clone(),
                            field: "D".to_string(),
                        })?;
                let vector = self.d.clone().ok_or_else(|| UncertaintyError::MissingField {
                    kind: self.kind.clone(),
                    field: "d".to_string(),
                })?;
                let poly = Polyhedron::new(matrix, vector)?;
                if poly.dim() != dim {
                    return Err(UncertaintyError::DimensionMismatch {
                        expected: dim,
                        found: poly.dim(),
                    });
                }
                Ok(UncertaintySet::polyhedral(poly))
            }
            other => Err(UncertaintyError::UnknownKind(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// A unit box `|ζ| ≤ 1` as explicit polyhedron rows.
    fn unit_box_rows(dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut d_matrix = Vec::new();
        let mut d_vector = Vec::new();
        for j in 0..dim {
            let mut up = vec![0.0; dim];
            up[j] = -1.0;
            d_matrix.push(up);
            d_vector.push(1.0);
            let mut lo = vec![0.0; dim];
            lo[j] = 1.0;
            d_matrix.push(lo);
            d_vector.push(1.0);
        }
        (d_matrix, d_vector)
    }

    #[test]
    fn box_worst_case_sums_magnitudes() {
        let set = UncertaintySet::box_set(3).unwrap();
        let wc = set.worst_case(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(wc.value, 6.0);
        assert_eq!(wc.witness, vec![1.0, -1.0, 1.0]);
        assert!(set.contains(&wc.witness, 0.0));
    }

    #[test]
    fn budgeted_worst_case_spends_the_budget_greedily() {
        let group = BudgetGroup {
            members: vec![0, 1, 2],
            gamma: 2.0,
        };
        let set = UncertaintySet::budgeted(3, vec![group]).unwrap();
        let wc = set.worst_case(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(wc.value, 5.0);
        assert_eq!(wc.witness, vec![0.0, -1.0, 1.0]);
        assert!(set.contains(&wc.witness, 0.0));

        let group = BudgetGroup {
            members: vec![0, 1, 2],
            gamma: 2.5,
        };
        let set = UncertaintySet::budgeted(3, vec![group]).unwrap();
        let wc = set.worst_case(&[1.0, -2.0, 3.0]).unwrap();
        assert!((wc.value - 5.5).abs() < 1e-15);
        assert!(set.contains(&wc.witness, 1e-12));
        assert!((dot(&[1.0, -2.0, 3.0], &wc.witness) - wc.value).abs() < 1e-12);
    }

    #[test]
    fn one_sided_ignores_negative_directions() {
        let group = BudgetGroup {
            members: vec![0, 1, 2],
            gamma: 2.0,
        };
        let set = UncertaintySet::one_sided(3, vec![group]).unwrap();
        let wc = set.worst_case(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(wc.value, 4.0);
        assert_eq!(wc.witness, vec![1.0, 0.0, 1.0]);

        let group = BudgetGroup {
            members: vec![0, 1, 2],
            gamma: 1.5,
        };
        let set = UncertaintySet::one_sided(3, vec![group]).unwrap();
        let wc = set.worst_case(&[1.0, -2.0, 3.0]).unwrap();
        assert!((wc.value - 3.5).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_pins_the_group() {
        let group = BudgetGroup {
            members: vec![0, 1],
            gamma: 0.0,
        };
        let set = UncertaintySet::budgeted(3, vec![group]).unwrap();
        let wc = set.worst_case(&[5.0, 5.0, 2.0]).unwrap();
        // Only the uncovered coordinate 2 can move.
        assert_eq!(wc.value, 2.0);
        assert_eq!(wc.witness, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn symmetric_sets_are_sign_symmetric() {
        let a = [0.7, -1.3, 0.0, 2.2];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let box_set = UncertaintySet::box_set(4).unwrap();
        assert_eq!(
            box_set.worst_case(&a).unwrap().value,
            box_set.worst_case(&neg).unwrap().value
        );
        let set = UncertaintySet::budgeted(
            4,
            vec![BudgetGroup {
                members: vec![0, 1, 2, 3],
                gamma: 1.7,
            }],
        )
        .unwrap();
        assert_eq!(
            set.worst_case(&a).unwrap().value,
            set.worst_case(&neg).unwrap().value
        );
    }

    #[test]
    fn budgets_interpolate_between_point_and_box() {
        let a = [1.5, -0.5, 2.0];
        let box_value = UncertaintySet::box_set(3)
            .unwrap()
            .worst_case(&a)
            .unwrap()
            .value;
        let mut last = 0.0;
        for step in 0..=6 {
            let gamma = 0.5 * step as f64;
            let set = UncertaintySet::budgeted(
                3,
                vec![BudgetGroup {
                    members: vec![0, 1, 2],
                    gamma,
                }],
            )
            .unwrap();
            let value = set.worst_case(&a).unwrap().value;
            assert!(value >= last - 1e-12, "monotone in gamma");
            assert!(value <= box_value + 1e-12);
            last = value;
        }
        assert!((last - box_value).abs() < 1e-12, "gamma = dim reaches the box");
    }

    #[test]
    fn polyhedral_unit_box_matches_closed_form() {
        let (dm, dv) = unit_box_rows(3);
        let poly = Polyhedron::new(dm, dv).unwrap();
        assert!(poly.within_unit_box(1e-9));
        assert_eq!(poly.coordinate_bounds(), &[(-1.0, 1.0); 3]);
        let set = UncertaintySet::polyhedral(poly);
        let a = [1.0, -2.0, 3.0];
        let wc = set.worst_case(&a).unwrap();
        assert!((wc.value - 6.0).abs() < 1e-9);
        assert!(set.contains(&wc.witness, 1e-9));
        assert!((dot(&a, &wc.witness) - wc.value).abs() < 1e-9);
    }

    #[test]
    fn unbounded_polyhedron_is_rejected() {
        // Upper bounds only: ζ can run to −∞.
        let err = Polyhedron::new(vec![vec![-1.0, 0.0], vec![0.0, -1.0]], vec![1.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, UncertaintyError::UnboundedSet { coord: 0 }));
    }

    #[test]
    fn empty_polyhedron_is_rejected() {
        // ζ ≥ 1 and ζ ≤ −1 simultaneously.
        let err =
            Polyhedron::new(vec![vec![1.0], vec![-1.0]], vec![-1.0, -1.0]).unwrap_err();
        assert!(matches!(err, UncertaintyError::EmptySet));
    }

    #[test]
    fn budgeted_closed_form_matches_polyhedral_lp() {
        // The budgeted set is itself a polytope once each group budget is
        // expanded over all sign patterns; the generic solver on that
        // expansion must agree with the greedy closed form.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let dim = rng.gen_range(2..=4);
            let split = rng.gen_range(1..=dim);
            let groups = vec![
                BudgetGroup {
                    members: (0..split).collect(),
                    gamma: rng.gen_range(0.0..split as f64 + 0.5),
                },
                BudgetGroup {
                    members: (split..dim).collect(),
                    gamma: rng.gen_range(0.0..(dim - split) as f64 + 0.5),
                },
            ];
            let groups: Vec<BudgetGroup> =
                groups.into_iter().filter(|g| !g.members.is_empty()).collect();

            let (mut dm, mut dv) = unit_box_rows(dim);
            for g in &groups {
                let k = g.members.len();
                for pattern in 0..(1u32 << k) {
                    let mut row = vec![0.0; dim];
                    for (bit, &m) in g.members.iter().enumerate() {
                        row[m] = if pattern & (1 << bit) != 0 { -1.0 } else { 1.0 };
                    }
                    dm.push(row);
                    dv.push(g.gamma);
                }
            }
            let poly_set = UncertaintySet::polyhedral(Polyhedron::new(dm, dv).unwrap());
            let closed_set = UncertaintySet::budgeted(dim, groups).unwrap();

            for _ in 0..4 {
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let lp_value = poly_set.worst_case(&a).unwrap().value;
                let closed = closed_set.worst_case(&a).unwrap();
                assert!(
                    (lp_value - closed.value).abs() < 1e-7 * (1.0 + closed.value.abs()),
                    "dim {dim}: lp {lp_value} vs closed {}",
                    closed.value
                );
                assert!(closed_set.contains(&closed.witness, 1e-9));
                assert!((dot(&a, &closed.witness) - closed.value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_sided_closed_form_matches_polyhedral_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let dim = rng.gen_range(2..=4);
            let gamma = rng.gen_range(0.0..dim as f64 + 0.5);
            let group = BudgetGroup {
                members: (0..dim).collect(),
                gamma,
            };
            // 0 ≤ ζ ≤ 1 rows plus the single budget row Σζ ≤ Γ.
            let mut dm = Vec::new();
            let mut dv = Vec::new();
            for j in 0..dim {
                let mut lo = vec![0.0; dim];
                lo[j] = 1.0;
                dm.push(lo);
                dv.push(0.0);
                let mut up = vec![0.0; dim];
                up[j] = -1.0;
                dm.push(up);
                dv.push(1.0);
            }
            dm.push(vec![-1.0; dim]);
            dv.push(gamma);
            let poly_set = UncertaintySet::polyhedral(Polyhedron::new(dm, dv).unwrap());
            let closed_set = UncertaintySet::one_sided(dim, vec![group]).unwrap();
            for _ in 0..4 {
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let lp_value = poly_set.worst_case(&a).unwrap().value;
                let closed = closed_set.worst_case(&a).unwrap();
                assert!(
                    (lp_value - closed.value).abs() < 1e-7 * (1.0 + closed.value.abs()),
                    "lp {lp_value} vs closed {}",
                    closed.value
                );
            }
        }
    }

    #[test]
    fn random_members_never_beat_the_worst_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 5;
        let sets = [
            UncertaintySet::box_set(dim).unwrap(),
            UncertaintySet::budgeted(
                dim,
                vec![
                    BudgetGroup {
                        members: vec![0, 1, 2],
                        gamma: 1.5,
                    },
                    BudgetGroup {
                        members: vec![3, 4],
                        gamma: 1.0,
                    },
                ],
            )
            .unwrap(),
            UncertaintySet::one_sided(
                dim,
                vec![BudgetGroup {
                    members: vec![0, 1, 2, 3, 4],
                    gamma: 2.0,
                }],
            )
            .unwrap(),
        ];
        for set in &sets {
            for _ in 0..200 {
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let wc = set.worst_case(&a).unwrap();
                // Rejection-sample a member of the set.
                let zeta: Vec<f64> = loop {
                    let candidate: Vec<f64> = (0..dim)
                        .map(|_| match set {
                            UncertaintySet::OneSided { .. } => rng.gen_range(0.0..1.0),
                            _ => rng.gen_range(-1.0..1.0),
                        })
                        .collect();
                    if set.contains(&candidate, 0.0) {
                        break candidate;
                    }
                };
                assert!(dot(&a, &zeta) <= wc.value + 1e-9);
                assert!(set.contains(&wc.witness, 1e-9));
            }
        }
    }

    #[test]
    fn processing_time_box_maps_to_exact_rate_interval() {
        let tau_nom = [2.0, 0.5, 1.0];
        let tau_dev = [0.4, 0.05, 0.0];
        let (mu_nom, mu_dev) = tau_box_to_mu_box(&tau_nom, &tau_dev).unwrap();
        for j in 0..3 {
            let slow = 1.0 / (tau_nom[j] + tau_dev[j]);
            let fast = 1.0 / (tau_nom[j] - tau_dev[j]);
            assert!((mu_nom[j] - mu_dev[j] - slow).abs() < 1e-12);
            assert!((mu_nom[j] + mu_dev[j] - fast).abs() < 1e-12);
        }
        assert_eq!(mu_nom[2], 1.0);
        assert_eq!(mu_dev[2], 0.0);

        let eps = 0.2f64;
        let (mu_nom, mu_dev) = tau_box_to_mu_box(&[2.0], &[2.0 * eps]).unwrap();
        assert!((mu_nom[0] - 1.0 / (2.0 * (1.0 - eps * eps))).abs() < 1e-15);
        assert!((mu_dev[0] - eps * mu_nom[0]).abs() < 1e-15);
    }

    #[test]
    fn vanishing_rates_are_rejected() {
        assert!(tau_box_to_mu_box(&[1.0], &[1.0]).is_err());
        assert!(tau_box_to_mu_box(&[1.0], &[1.5]).is_err());
        assert!(tau_box_to_mu_box(&[0.0], &[0.0]).is_err());
        assert!(tau_box_to_mu_box(&[-1.0], &[0.1]).is_err());
    }

    #[test]
    fn group_validation_catches_mistakes() {
        let overlap = vec![
            BudgetGroup {
                members: vec![0, 1],
                gamma: 1.0,
            },
            BudgetGroup {
                members: vec![1, 2],
                gamma: 1.0,
            },
        ];
        assert!(UncertaintySet::budgeted(3, overlap).is_err());
        let out_of_range = vec![BudgetGroup {
            members: vec![5],
            gamma: 1.0,
        }];
        assert!(UncertaintySet::budgeted(3, out_of_range).is_err());
        let negative = vec![BudgetGroup {
            members: vec![0],
            gamma: -0.5,
        }];
        assert!(UncertaintySet::budgeted(3, negative).is_err());
    }

    #[test]
    fn config_round_trips_and_builds() {
        let cfg = UncertaintyConfig::budgeted(1.5);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"kind":"budgeted","gamma":1.5}"#);
        let back: UncertaintyConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);

        let set = cfg.build(4, &[vec![0, 1], vec![2, 3]]).unwrap();
        match &set {
            UncertaintySet::Budgeted { groups, .. } => {
                assert_eq!(groups.len(), 2);
                assert_eq!(groups[0].gamma, 1.5);
            }
            other => panic!("expected budgeted, got {}", other.kind_name()),
        }

        let (dm, dv) = {
            let mut dm = Vec::new();
            let mut dv = Vec::new();
            for j in 0..2 {
                let mut up = vec![0.0; 2];
                up[j] = -1.0;
                dm.push(up);
                dv.push(0.5);
                let mut lo = vec![0.0; 2];
                lo[j] = 1.0;
                dm.push(lo);
                dv.push(0.5);
            }
            (dm, dv)
        };
        let cfg = UncertaintyConfig::polyhedral(dm, dv);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""D":"#));
        let set = cfg.build(2, &[]).unwrap();
        assert_eq!(set.kind_name(), "polyhedral");
        assert!((set.worst_case(&[1.0, 1.0]).unwrap().value - 1.0).abs() < 1e-9);

        assert!(UncertaintyConfig::boxed().build(0, &[]).is_err());
        let bad = UncertaintyConfig {
            kind: "fuzzy".to_string(),
            gamma: None,
            d_matrix: None,
            d: None,
        };
        assert!(matches!(
            bad.build(2, &[]),
            Err(UncertaintyError::UnknownKind(_))
        ));
        let missing = UncertaintyConfig {
            kind: "budgeted".to_string(),
            gamma: None,
            d_matrix: None,
            d: None,
        };
        assert!(matches!(
            missing.build(2, &[vec![0, 1]]),
            Err(UncertaintyError::MissingField { .. })
        ));
    }

    #[test]
    fn polyhedral_worst_case_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let dim = rng.gen_range(2..=3);
            // Unit box plus a few random cuts through it; keeping the origin
            // inside guarantees nonemptiness.
            let (mut dm, mut dv) = unit_box_rows(dim);
            for _ in 0..rng.gen_range(1..=3) {
                let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                dm.push(row);
                dv.push(rng.gen_range(0.1..1.0));
            }
            let poly = Polyhedron::new(dm.clone(), dv.clone()).unwrap();
            let set = UncertaintySet::polyhedral(poly);
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let wc = set.worst_case(&a).unwrap();

            // Enumerate candidate vertices: all dim-subsets of active rows.
            let m = dm.len();
            let mut best = f64::NEG_INFINITY;
            let idx: Vec<usize> = (0..m).collect();
            let mut stack = vec![(Vec::<usize>::new(), 0usize)];
            while let Some((chosen, start)) = stack.pop() {
                if chosen.len() == dim {
                    if let Some(x) = solve_active(&dm, &dv, &chosen) {
                        let feasible = dm.iter().zip(&dv).all(|(row, &d0)| {
                            dot(row, &x) + d0 >= -1e-7
                        });
                        if feasible {
                            best = best.max(dot(&a, &x));
                        }
                    }
                    continue;
                }
                for (pos, &i) in idx.iter().enumerate().skip(start) {
                    let mut next = chosen.clone();
                    next.push(i);
                    stack.push((next, pos + 1));
                }
            }
            assert!(
                (wc.value - best).abs() < 1e-6 * (1.0 + best.abs()),
                "lp {} vs enumeration {best}",
                wc.value
            );
            assert!(set.contains(&wc.witness, 1e-7));
        }
    }

    /// Solve the square system `D_active ζ = -d_active`.
    fn solve_active(dm: &[Vec<f64>], dv: &[f64], active: &[usize]) -> Option<Vec<f64>> {
        let n = active.len();
        let mut a: Vec<Vec<f64>> = active.iter().map(|&i| dm[i].clone()).collect();
        let mut b: Vec<f64> = active.iter().map(|&i| -dv[i]).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))?;
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
}
