//! Markdown summary of a bundle.

use std::fmt::Write as _;
use std::path::Path;

use super::{BundleSummary, OrderingCheck};
use crate::error::{Error, Result};

/// One ordering check under one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: OrderingCheck,
    pub attack: String,
    /// Seed-mean plateaus, `+inf` for diverged groups; `None` when the
    /// bundle has no such group.
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub pass: bool,
}

/// Evaluates every configured ordering on the seed-mean plateaus.
pub fn evaluate_checks(summary: &BundleSummary) -> Vec<CheckOutcome> {
    let mut attacks: Vec<&str> = Vec::new();
    for g in &summary.groups {
        if !attacks.contains(&g.attack.as_str()) {
            attacks.push(&g.attack);
        }
    }
    let mut out = Vec::new();
    for check in &summary.checks {
        for atk in &attacks {
            if !check.attacks.is_empty() && !check.attacks.iter().any(|a| a == atk) {
                continue;
            }
            let left = summary.group(&check.left, atk).map(|g| g.plateau());
            let right = summary.group(&check.right, atk).map(|g| g.plateau());
            let pass = match (left, right) {
                (Some(l), Some(r)) => check.holds(l, r),
                _ => false,
            };
            out.push(CheckOutcome { check: check.clone(), attack: atk.to_string(), left, right, pass });
        }
    }
    out
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.3e}"),
        Some(_) => "diverged".into(),
        None => "-".into(),
    }
}

/// Markdown table of plateaus per algorithm and attack, followed by the
/// ordering checks.
pub fn render(summary: &BundleSummary) -> Result<String> {
    if summary.cells.is_empty() {
        return Err(Error::InvalidInput("bundle has no runs".into()));
    }
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", summary.name);
    let _ = writeln!(
        s,
        "config sha256 `{}`, f* = {:.12e}, W = {}, R = {}, B = {}\n",
        summary.config_sha256,
        summary.reference.f_star,
        summary.topology.workers,
        summary.topology.regular,
        summary.topology.byzantine
    );
    let _ = writeln!(
        s,
        "Plateau: mean gap over the last {:.0}% of recorded iterations, statistics over seeds.\n",
        summary.plateau_tail * 100.0
    );
    let _ = writeln!(s, "| algorithm | attack | seeds | plateau mean | min | max | uplink MB |");
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|");
    for g in &summary.groups {
        let diverged = g.plateau_mean.is_none();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.3} |",
            g.algorithm,
            g.attack,
            g.seeds,
            if diverged { "diverged".into() } else { num(g.plateau_mean) },
            num(g.plateau_min),
            num(g.plateau_max),
            g.uplink_bytes_mean / 1e6
        );
    }
    let outcomes = evaluate_checks(summary);
    if !outcomes.is_empty() {
        let _ = writeln!(s, "\n## Orderings\n");
        let _ = writeln!(s, "| ordering | attack | left | right | result |");
        let _ = writeln!(s, "|---|---|---:|---:|---|");
        for o in &outcomes {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                o.check.describe(),
                o.attack,
                num(o.left),
                num(o.right),
                if o.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    let diverged: Vec<String> = summary
        .cells
        .iter()
        .filter(|c| c.diverged)
        .map(|c| format!("{} / {} / seed {}", c.algorithm, c.attack, c.seed))
        .collect();
    if !diverged.is_empty() {
        let _ = writeln!(s, "\nDiverged runs: {}", diverged.join(", "));
    }
    Ok(s)
}

/// Reads `summary.json` from a bundle and renders it.
pub fn emit_summary(bundle: &Path) -> Result<String> {
    render(&BundleSummary::load(bundle)?)
}
