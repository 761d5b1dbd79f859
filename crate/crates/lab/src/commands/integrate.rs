use std::path::Path;

use odenet::dyncore::{make_test_problem_named, State};
use odenet::odeschemes::{integrate, Scheme};

use crate::config::IntegrateConfig;
use crate::output::{num, Table};
use crate::{keyed, LabError, Outcome};

/// Writes `trajectory.csv` with columns `step,t,u_0..u_{d-1}`.
pub fn run(c: &IntegrateConfig, out: &Path) -> Result<Outcome, LabError> {
    let table = trajectory(c)?;
    table.write(&out.join("trajectory.csv"))?;
    Ok(Outcome {
        summary: format!("{} on {}: {} rows -> trajectory.csv", c.scheme, c.problem, table.len()),
        flag: None,
    })
}

pub fn trajectory(c: &IntegrateConfig) -> Result<Table, LabError> {
    let mut problem = keyed("integrate.problem", make_test_problem_named(&c.problem))?;
    if let Some(u0) = &c.u0 {
        problem = keyed("integrate.u0", problem.with_initial(State::from_column_slice(u0)))?;
    }
    let scheme = keyed("integrate.scheme", Scheme::from_name(&c.scheme, c.k))?;
    if !(c.dt > 0.0 && c.dt.is_finite()) {
        return Err(LabError::Config(format!("integrate.dt: must be positive, got {}", c.dt)));
    }
    if !(c.t_end >= 0.0 && c.t_end.is_finite()) {
        return Err(LabError::Config(format!("integrate.t_end: must be non-negative, got {}", c.t_end)));
    }
    let traj = keyed("integrate", integrate(&scheme, &*problem.field, &problem.u0, 0.0, c.t_end, c.dt))?;
    let mut table = Table::new(["step".to_string(), "t".to_string()].into_iter().chain((0..problem.dim()).map(|i| format!("u_{i}"))));
    for (i, (t, u)) in traj.times().iter().zip(traj.states()).enumerate() {
        table.push([i.to_string(), num(*t)].into_iter().chain(u.iter().map(|&v| num(v))));
    }
    Ok(table)
}
