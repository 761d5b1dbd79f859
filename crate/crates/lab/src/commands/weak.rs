use std::path::Path;

use odenet::sdeschemes::{compare_sweeps, gbm, weak_error_sweep, Agreement, IncrementKind, TestFunction, WeakErrorReport};

use crate::config::WeakConfig;
use crate::output::{num, Table};
use crate::{keyed, LabError, Outcome};

/// The sweep, and the twin sweep with its per-step agreement if requested.
pub struct WeakResult {
    pub report: WeakErrorReport,
    pub twin: Option<(WeakErrorReport, Vec<Agreement>)>,
}

pub fn sweep(c: &WeakConfig, seed: u64) -> Result<WeakResult, LabError> {
    if c.paths < 2 {
        return Err(LabError::Config(format!("weak.paths: need at least 2 paths, got {}", c.paths)));
    }
    let kind: IncrementKind = keyed("weak.increment", c.increment.parse())?;
    let phi: TestFunction = keyed("weak.phi", c.phi.parse())?;
    let prob = keyed("weak", gbm(c.mu, c.sigma, c.x0, c.t_end))?;
    let report = keyed("weak.dts", weak_error_sweep(&prob, kind, phi, &c.dts, c.paths, seed))?;
    let twin = match &c.compare_with {
        None => None,
        Some(name) => {
            let other: IncrementKind = keyed("weak.compare_with", name.parse())?;
            let second = keyed("weak.dts", weak_error_sweep(&prob, other, phi, &c.dts, c.paths, seed))?;
            let agreement = keyed("weak.compare_with", compare_sweeps(&report, &second))?;
            Some((second, agreement))
        }
    };
    Ok(WeakResult { report, twin })
}

/// `dt,estimate,ci_halfwidth,analytic,abs_bias`, plus the twin's estimate,
/// the joint half-width and an agreement flag when a twin ran. The footer row
/// holds the bias slope, or `NA` when no bias is resolvable.
pub fn table(w: &WeakResult) -> Table {
    let mut header = vec!["dt", "estimate", "ci_halfwidth", "analytic", "abs_bias"];
    if w.twin.is_some() {
        header.extend(["twin_estimate", "twin_ci_halfwidth", "joint_ci_halfwidth", "agree"]);
    }
    let mut t = Table::new(header);
    let r = &w.report;
    for (i, (h, e)) in r.dts.iter().zip(&r.estimates).enumerate() {
        let mut row = vec![num(*h), num(e.mean), num(e.half_width), num(r.analytic), num((e.mean - r.analytic).abs())];
        if let Some((_, agreement)) = &w.twin {
            let a = &agreement[i];
            row.extend([num(a.second.mean), num(a.second.half_width), num(a.joint_half_width), a.agree().to_string()]);
        }
        t.push(row);
    }
    t.push(["slope".to_string(), r.slope.map_or_else(|| "NA".to_string(), num)]);
    t
}

/// Writes `weak.csv`. Flags a sweep whose biases all sit inside their
/// confidence intervals.
pub fn run(c: &WeakConfig, seed: u64, out: &Path) -> Result<Outcome, LabError> {
    let w = sweep(c, seed)?;
    table(&w).write(&out.join("weak.csv"))?;
    let r = &w.report;
    let flag = r.inconclusive().then(|| "inconclusive: no bias exceeds its 95% half-width".to_string());
    let mut summary = format!(
        "{} increments, {} paths: slope {} -> weak.csv",
        r.kind,
        r.paths,
        r.slope.map_or_else(|| "NA".to_string(), |s| format!("{s:.4}"))
    );
    if let Some((_, agreement)) = &w.twin {
        let ok = agreement.iter().filter(|a| a.agree()).count();
        summary.push_str(&format!("; twin agrees at {ok}/{} step sizes", agreement.len()));
    }
    Ok(Outcome { summary, flag })
}
