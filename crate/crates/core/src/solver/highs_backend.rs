use highs::{HighsModelStatus, RowProblem, Sense};

use super::{LinearModel, LpSolution, RowSense, SolveOptions, SolveStatus, SolverBackend, SolverError, VarKind};

/// HiGHS, single-threaded with a fixed random seed so repeated runs are
/// reproducible.
#[derive(Debug, Clone, Default)]
pub struct HighsBackend;

impl SolverBackend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn provides_duals(&self) -> bool {
        true
    }

    fn solve_raw(&self, model: &LinearModel, options: &SolveOptions) -> Result<LpSolution, SolverError> {
        let mut pb = RowProblem::default();
        let costs = model.objective_coefficients();
        let cols: Vec<_> = model
            .vars()
            .iter()
            .zip(&costs)
            .map(|(v, &c)| {
                let integer = v.kind != VarKind::Continuous;
                pb.add_column_with_integrality(c, v.lower..=v.upper, integer)
            })
            .collect();
        for row in model.rows() {
            let factors: Vec<_> = row.terms.iter().map(|(v, c)| (cols[v.0], *c)).collect();
            match row.sense {
                RowSense::Le => pb.add_row(..=row.rhs, factors),
                RowSense::Ge => pb.add_row(row.rhs.., factors),
                RowSense::Eq => pb.add_row(row.rhs..=row.rhs, factors),
            }
        }
        let is_mip = model.num_integer_vars() > 0;

        let mut hm = pb
            .try_optimise(Sense::Minimise)
            .map_err(|s| SolverError::Backend(format!("HiGHS rejected the model: {s:?}")))?;
        hm.make_quiet();
        hm.set_option("threads", 1);
        hm.set_option("random_seed", options.seed as i32);
        hm.set_option("mip_rel_gap", options.mip_gap);
        if let Some(limit) = options.time_limit {
            hm.set_option("time_limit", limit);
        }
        let solved = hm
            .try_solve()
            .map_err(|s| SolverError::Backend(format!("HiGHS run failed: {s:?}")))?;

        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => return Err(SolverError::Infeasible { families: vec![] }),
            HighsModelStatus::UnboundedOrInfeasible => {
                // Presolve could not tell; an LP relaxation with zero costs
                // separates the two cases.
                let mut probe = model.clone();
                probe.clear_costs();
                return match self.solve_raw(&probe, options) {
                    Ok(_) => Err(SolverError::Unbounded),
                    Err(e) => Err(e),
                };
            }
            HighsModelStatus::Unbounded => return Err(SolverError::Unbounded),
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt => {
                if is_mip && solved.mip_gap().is_finite() {
                    SolveStatus::Feasible
                } else {
                    return Err(SolverError::NoSolution(format!("{:?}", solved.status())));
                }
            }
            other => return Err(SolverError::Backend(format!("HiGHS status {other:?}"))),
        };

        let sol = solved.get_solution();
        let values = sol.columns().to_vec();
        let objective = model.evaluate_objective(&values);
        let row_duals = if is_mip { None } else { Some(sol.dual_rows().to_vec()) };
        let mip_gap = if is_mip { solved.mip_gap().max(0.0) } else { 0.0 };
        Ok(LpSolution {
            status,
            objective,
            values,
            row_duals,
            mip_gap,
            backend: self.name(),
        })
    }
}
