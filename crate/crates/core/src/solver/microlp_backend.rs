use std::time::Duration;

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use super::{LinearModel, LpSolution, RowSense, SolveOptions, SolveStatus, SolverBackend, SolverError, VarKind};

/// Pure-Rust simplex with branch-and-bound. Returns no duals.
#[derive(Debug, Clone, Copy, Default)]
pub struct MicrolpBackend;

impl SolverBackend for MicrolpBackend {
    fn name(&self) -> &'static str {
        "microlp"
    }

    fn provides_duals(&self) -> bool {
        false
    }

    fn solve_raw(&self, model: &LinearModel, options: &SolveOptions) -> Result<LpSolution, SolverError> {
        let mut pb = Problem::new(OptimizationDirection::Minimize);
        if let Some(limit) = options.time_limit {
            pb.set_time_limit(Duration::from_secs_f64(limit));
        }
        let costs = model.objective_coefficients();
        let vars: Vec<_> = model
            .vars()
            .iter()
            .zip(&costs)
            .map(|(v, &c)| match v.kind {
                VarKind::Continuous => pb.add_var(c, (v.lower, v.upper)),
                VarKind::Binary if v.lower == 0.0 && v.upper == 1.0 => pb.add_binary_var(c),
                VarKind::Binary | VarKind::Integer => {
                    pb.add_integer_var(c, (v.lower.ceil() as i32, v.upper.floor() as i32))
                }
            })
            .collect();
        for row in model.rows() {
            let mut expr = LinearExpr::empty();
            for (v, c) in &row.terms {
                expr.add(vars[v.0], *c);
            }
            let op = match row.sense {
                RowSense::Le => ComparisonOp::Le,
                RowSense::Ge => ComparisonOp::Ge,
                RowSense::Eq => ComparisonOp::Eq,
            };
            pb.add_constraint(expr, op, row.rhs);
        }
        let outcome = pb.solve().map_err(|e| match e {
            microlp::Error::Infeasible => SolverError::Infeasible { families: vec![] },
            microlp::Error::Unbounded => SolverError::Unbounded,
            other => SolverError::Backend(other.to_string()),
        })?;
        let optimal = outcome.is_optimal();
        let sol = outcome
            .into_solution()
            .map_err(|i| SolverError::NoSolution(format!("{:?}", i.termination_reason())))?;
        let values: Vec<f64> = vars.iter().map(|v| sol.var_value(*v)).collect();
        Ok(LpSolution {
            status: if optimal { SolveStatus::Optimal } else { SolveStatus::Feasible },
            objective: model.evaluate_objective(&values),
            values,
            row_duals: None,
            mip_gap: sol.gap().unwrap_or(0.0),
            backend: self.name(),
        })
    }
}
