use std::path::Path;

use odenet::dyncore::make_test_problem_named;
use odenet::modeq::{estimate_order, ModifiedKind, OrderReport, Reference, MIN_R_SQUARED};
use odenet::odeschemes::Scheme;

use crate::config::OrderConfig;
use crate::output::{num, Table};
use crate::{keyed, LabError, Outcome};

fn reference(c: &OrderConfig, scheme: &Scheme) -> Result<Reference, LabError> {
    match c.reference.as_str() {
        "exact" => Ok(Reference::Exact),
        "original" => Ok(Reference::Original),
        "modified" => match scheme {
            Scheme::ForwardEuler => Ok(Reference::Modified(ModifiedKind::ForwardEuler)),
            Scheme::Lm { k } => Ok(Reference::Modified(ModifiedKind::Lm { k: *k })),
            other => Err(LabError::Config(format!(
                "order.reference: no modified equation for scheme {other} (use forward_euler or lm)"
            ))),
        },
        other => Err(LabError::Config(format!(
            "order.reference: unknown reference '{other}' (expected exact, original, modified)"
        ))),
    }
}

pub fn report(c: &OrderConfig) -> Result<OrderReport, LabError> {
    let problem = keyed("order.problem", make_test_problem_named(&c.problem))?;
    let scheme = keyed("order.scheme", Scheme::from_name(&c.scheme, c.k))?;
    let reference = reference(c, &scheme)?;
    if !(c.t_end > 0.0 && c.t_end.is_finite()) {
        return Err(LabError::Config(format!("order.t_end: must be positive, got {}", c.t_end)));
    }
    keyed("order.dts", estimate_order(&scheme, reference, &problem, &c.dts, c.t_end))
}

/// Rows `dt,error`, then footer rows `slope,<s>` and `r_squared,<r2>`.
pub fn table(r: &OrderReport) -> Table {
    let mut t = Table::new(["dt", "error"]);
    for (h, e) in r.dts.iter().zip(&r.errors) {
        t.push([num(*h), num(*e)]);
    }
    t.push(["slope".to_string(), num(r.slope)]);
    t.push(["r_squared".to_string(), num(r.r_squared)]);
    t
}

/// Writes `order.csv`; flags fits with R^2 below the threshold.
pub fn run(c: &OrderConfig, out: &Path) -> Result<Outcome, LabError> {
    let r = report(c)?;
    table(&r).write(&out.join("order.csv"))?;
    let flag = (!r.reliable())
        .then(|| format!("unreliable fit: R^2 = {} < {MIN_R_SQUARED}", r.r_squared));
    Ok(Outcome {
        summary: format!(
            "{} vs {} on {}: slope {:.4}, R^2 {:.6} -> order.csv",
            c.scheme, c.reference, c.problem, r.slope, r.r_squared
        ),
        flag,
    })
}
