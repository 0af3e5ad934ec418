//! Backend-neutral linear / mixed-integer model and solver plumbing.
//!
//! Market formulations build a [`LinearModel`] (named variables, named rows
//! grouped into constraint families, and an objective made of tagged cost
//! terms) and hand it to a [`SolverBackend`]. Two backends ship with the
//! crate:
//!
//! * `highs`: HiGHS through the `highs` crate. Supports MILP and reports row
//!   duals for LPs; the default.
//! * `microlp`: a pure-Rust simplex / branch-and-bound. No duals. Used as the
//!   independent LP route in brute-force oracles and selectable for runs that
//!   do not need prices.
//!
//! Row duals are normalised so that `dual = d(objective) / d(rhs)` for a
//! minimisation, whatever the backend's native sign convention.

mod highs_backend;
mod lp_format;
mod microlp_backend;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use highs_backend::HighsBackend;
pub use lp_format::write_lp;
pub use microlp_backend::MicrolpBackend;

/// Environment variable naming the solver backend (`highs` or `microlp`).
pub const SOLVER_ENV_VAR: &str = "FLEXSETTLE_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    /// Constraint family, e.g. `"energy_balance"` or `"fo_hedging"`.
    pub family: &'static str,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            RowSense::Le => (lhs - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - lhs).max(0.0),
            RowSense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// One additive piece of the objective, tagged with the cost component it
/// belongs to so solutions can be decomposed after the solve.
#[derive(Debug, Clone, Copy)]
pub struct CostTerm {
    pub var: VarId,
    pub coef: f64,
    pub tag: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct LinearModel {
    pub name: String,
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
    costs: Vec<CostTerm>,
    constants: Vec<(f64, &'static str)>,
}

impl LinearModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        id
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        family: &'static str,
        terms: Vec<(VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> RowId {
        let id = RowId(self.rows.len());
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(t) => t.1 += c,
                None => merged.push((v, c)),
            }
        }
        self.rows.push(Constraint {
            name: name.into(),
            family,
            terms: merged,
            sense,
            rhs,
        });
        id
    }

    pub fn add_cost(&mut self, var: VarId, coef: f64, tag: &'static str) {
        if coef != 0.0 {
            self.costs.push(CostTerm { var, coef, tag });
        }
    }

    pub fn add_constant_cost(&mut self, amount: f64, tag: &'static str) {
        if amount != 0.0 {
            self.constants.push((amount, tag));
        }
    }

    /// Add `coef * var` to an existing row.
    /// Adds `coef * var` to a row, merging with an existing term in `var`.
    pub fn add_term(&mut self, row: RowId, var: VarId, coef: f64) {
        let terms = &mut self.rows[row.0].terms;
        match terms.iter_mut().find(|(v, _)| *v == var) {
            Some(t) => t.1 += coef,
            None => terms.push((var, coef)),
        }
    }

    /// Add `delta` to a row's right-hand side.
    pub fn shift_rhs(&mut self, row: RowId, delta: f64) {
        self.rows[row.0].rhs += delta;
    }

    /// Remove every occurrence of `var` from a row.
    pub fn remove_term(&mut self, row: RowId, var: VarId) {
        self.rows[row.0].terms.retain(|(v, _)| *v != var);
    }

    /// Drop every cost term and constant (feasibility probe).
    pub fn clear_costs(&mut self) {
        self.costs.clear();
        self.constants.clear();
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        let v = &mut self.vars[var.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn row(&self, id: RowId) -> &Constraint {
        &self.rows[id.0]
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn cost_terms(&self) -> &[CostTerm] {
        &self.costs
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_integer_vars(&self) -> usize {
        self.vars.iter().filter(|v| v.kind != VarKind::Continuous).count()
    }

    pub fn objective_constant(&self) -> f64 {
        self.constants.iter().map(|(a, _)| a).sum()
    }

    /// Dense objective coefficient vector (sum of all tagged terms per variable).
    /// First non-finite coefficient, right-hand side or cost, or crossed
    /// bounds; solvers reject such models without saying where.
    pub fn first_invalid(&self) -> Option<String> {
        for v in &self.vars {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper || v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Some(format!("variable {} has bounds [{}, {}]", v.name, v.lower, v.upper));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Some(format!("row {} has rhs {}", r.name, r.rhs));
            }
            if let Some((v, c)) = r.terms.iter().find(|(_, c)| !c.is_finite()) {
                return Some(format!("row {} has coefficient {c} on {}", r.name, self.vars[v.0].name));
            }
        }
        self.costs
            .iter()
            .find(|t| !t.coef.is_finite())
            .map(|t| format!("cost {} on {}", t.coef, self.vars[t.var.0].name))
    }

    pub fn objective_coefficients(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.vars.len()];
        for t in &self.costs {
            c[t.var.0] += t.coef;
        }
        c
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.costs.iter().map(|t| t.coef * values[t.var.0]).sum::<f64>() + self.objective_constant()
    }

    /// Objective value split by cost tag.
    pub fn cost_breakdown(&self, values: &[f64]) -> BTreeMap<&'static str, f64> {
        let mut out = BTreeMap::new();
        for t in &self.costs {
            *out.entry(t.tag).or_insert(0.0) += t.coef * values[t.var.0];
        }
        for (a, tag) in &self.constants {
            *out.entry(*tag).or_insert(0.0) += a;
        }
        out
    }

    /// Largest row or bound violation of `values` and the offending row, if any.
    pub fn max_violation(&self, values: &[f64]) -> (f64, Option<RowId>) {
        let mut worst = 0.0;
        let mut at = None;
        for (i, r) in self.rows.iter().enumerate() {
            let v = r.violation(values);
            if v > worst {
                worst = v;
                at = Some(RowId(i));
            }
        }
        for (v, var) in values.iter().zip(&self.vars) {
            let b = (var.lower - v).max(v - var.upper).max(0.0);
            if b > worst {
                worst = b;
                at = None;
            }
        }
        (worst, at)
    }

    /// Copy with every integer/binary variable fixed at its rounded value in
    /// `values` and relaxed to continuous: the restricted-pricing LP.
    pub fn fix_integers(&self, values: &[f64]) -> LinearModel {
        let mut out = self.clone();
        for (var, v) in out.vars.iter_mut().zip(values) {
            if var.kind != VarKind::Continuous {
                let fixed = v.round();
                var.lower = fixed;
                var.upper = fixed;
                var.kind = VarKind::Continuous;
            }
        }
        out
    }

    /// Copy with all integrality dropped (LP relaxation).
    pub fn relaxed(&self) -> LinearModel {
        let mut out = self.clone();
        for var in &mut out.vars {
            var.kind = VarKind::Continuous;
        }
        out
    }

    pub fn families(&self) -> BTreeSet<&'static str> {
        self.rows.iter().map(|r| r.family).collect()
    }

    fn without_families(&self, drop: &BTreeSet<&'static str>) -> LinearModel {
        let mut out = self.clone();
        out.rows.retain(|r| !drop.contains(r.family));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative MIP gap accepted as optimal.
    pub mip_gap: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub seed: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mip_gap: 1e-6,
            time_limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Integer-feasible, stopped by a limit before proving the gap.
    Feasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// `d(objective)/d(rhs)` per row; `None` when the backend cannot provide
    /// duals or the model had integer variables.
    pub row_duals: Option<Vec<f64>>,
    pub mip_gap: f64,
    pub backend: &'static str,
}

impl LpSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn dual(&self, r: RowId) -> Option<f64> {
        self.row_duals.as_ref().map(|d| d[r.0])
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("model is infeasible; irreducible constraint families: {}", families.join(", "))]
    Infeasible { families: Vec<String> },
    #[error("model is unbounded")]
    Unbounded,
    #[error("solver stopped without a feasible solution: {0}")]
    NoSolution(String),
    #[error("solver backend failure: {0}")]
    Backend(String),
    #[error("unknown solver backend {0:?} (expected `highs` or `microlp`)")]
    UnknownBackend(String),
}

pub trait SolverBackend: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether LP solves return row duals.
    fn provides_duals(&self) -> bool;

    /// Solve without any infeasibility diagnosis (`Infeasible` carries no
    /// families).
    fn solve_raw(&self, model: &LinearModel, options: &SolveOptions) -> Result<LpSolution, SolverError>;

    /// Solve; when infeasible, attach an irreducible set of constraint
    /// families found with a deletion filter.
    fn solve(&self, model: &LinearModel, options: &SolveOptions) -> Result<LpSolution, SolverError> {
        if let Some(what) = model.first_invalid() {
            return Err(SolverError::Backend(format!("model {}: {what}", model.name)));
        }
        match self.solve_raw(model, options) {
            Err(SolverError::Infeasible { .. }) => Err(SolverError::Infeasible {
                families: irreducible_families(self, model, options),
            }),
            other => other,
        }
    }
}

/// Family-level deletion filter. Drops each family in turn and keeps it
/// dropped while the remainder stays infeasible; what is left is a set of
/// families every member of which is needed for the infeasibility. An empty
/// remainder with bounds alone infeasible is reported as `"variable_bounds"`.
fn irreducible_families<B: SolverBackend + ?Sized>(
    backend: &B,
    model: &LinearModel,
    options: &SolveOptions,
) -> Vec<String> {
    let families = model.families();
    let mut dropped = BTreeSet::new();
    let relaxed = model.relaxed();
    let probe = |m: &LinearModel| matches!(backend.solve_raw(m, options), Err(SolverError::Infeasible { .. }));
    for f in &families {
        dropped.insert(*f);
        // Integrality rarely matters for the family structure; the relaxed
        // model is tried first and the exact one only when that is feasible.
        let candidate = relaxed.without_families(&dropped);
        let still = probe(&candidate) || probe(&model.without_families(&dropped));
        if !still {
            dropped.remove(f);
        }
    }
    let kept: Vec<String> = families
        .iter()
        .filter(|f| !dropped.contains(*f))
        .map(|f| f.to_string())
        .collect();
    if kept.is_empty() {
        vec!["variable_bounds".to_string()]
    } else {
        kept
    }
}

/// Backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn SolverBackend>, SolverError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "" | "highs" => Ok(Box::new(HighsBackend::default())),
        "microlp" => Ok(Box::new(MicrolpBackend)),
        other => Err(SolverError::UnknownBackend(other.to_string())),
    }
}

/// Backend selected by [`SOLVER_ENV_VAR`]; HiGHS when unset.
pub fn backend_from_env() -> Result<Box<dyn SolverBackend>, SolverError> {
    match std::env::var(SOLVER_ENV_VAR) {
        Ok(name) => backend_by_name(&name),
        Err(_) => Ok(Box::new(HighsBackend::default())),
    }
}
