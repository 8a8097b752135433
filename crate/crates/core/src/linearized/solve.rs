use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LinearError, LinearizedOp, Site, SiteVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Smallest admissible `|D|` on any row.
    pub resonance_floor: f64,
    /// Largest coupled block factorized densely.
    pub dense_cap: usize,
    /// Relative residual at which the iteration stops.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            resonance_floor: 1e-12,
            dense_cap: 6000,
            tolerance: 1e-14,
            max_iter: 200,
        }
    }
}

/// Relative residual any returned solution satisfies.
pub const ACCEPT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveRoute {
    Trivial,
    Iterative,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub route: SolveRoute,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Sites in the densely factorized block, 0 for the iterative route.
    pub block: usize,
}

/// Solve `T x = b`.
pub fn solve(op: &LinearizedOp, rhs: &SiteVector, cfg: &SolveConfig) -> Result<SiteVector, LinearError> {
    solve_with_report(op, rhs, cfg).map(|(x, _)| x)
}

/// Reject operators with a row whose divisor is below the floor.
pub(crate) fn check_floor(op: &LinearizedOp, floor: f64) -> Result<(), LinearError> {
    if let Some((site, value)) = op.min_abs_divisor() {
        if !(value.abs() >= floor) {
            return Err(LinearError::NearResonance { site, value, floor });
        }
    }
    Ok(())
}

/// Solve `T x = b` by diagonally preconditioned residual correction,
/// falling back to a dense factorization of the coupled block reachable
/// from `supp b` when the iteration stalls.
pub fn solve_with_report(
    op: &LinearizedOp,
    rhs: &SiteVector,
    cfg: &SolveConfig,
) -> Result<(SiteVector, SolveReport), LinearError> {
    check_floor(op, cfg.resonance_floor)?;
    let mut b = SiteVector::default();
    for (s, v) in rhs.iter() {
        if op.contains(s) {
            b.set(s, v);
        }
    }
    let bn = b.norm_l2();
    if bn == 0.0 {
        let rep = SolveReport {
            route: SolveRoute::Trivial,
            iterations: 0,
            relative_residual: 0.0,
            block: 0,
        };
        return Ok((SiteVector::default(), rep));
    }
    if let Some((x, it, rel)) = iterate(op, &b, bn, cfg) {
        let rep = SolveReport {
            route: SolveRoute::Iterative,
            iterations: it,
            relative_residual: rel,
            block: 0,
        };
        return Ok((x, rep));
    }
    dense(op, &b, bn, cfg)
}

fn preconditioner(op: &LinearizedOp, site: Site) -> f64 {
    op.entry(site, site).unwrap_or(0.0)
}

fn iterate(op: &LinearizedOp, b: &SiteVector, bn: f64, cfg: &SolveConfig) -> Option<(SiteVector, usize, f64)> {
    let mut x = SiteVector::default();
    let mut r = b.clone();
    let mut prev = 1.0;
    let mut slow = 0;
    for it in 1..=cfg.max_iter {
        for (s, v) in r.iter() {
            let d = preconditioner(op, s);
            if d == 0.0 {
                return None;
            }
            x.add_at(s, v / d);
        }
        r = b.axpy(-1.0, &op.apply(&x));
        let rel = r.norm_l2() / bn;
        if !rel.is_finite() || rel > 1e6 {
            return None;
        }
        if rel <= cfg.tolerance {
            return Some((x, it, rel));
        }
        if rel > 0.5 * prev {
            slow += 1;
            if slow >= 3 {
                return (rel <= ACCEPT).then_some((x, it, rel));
            }
        } else {
            slow = 0;
        }
        prev = rel;
    }
    let rel = prev;
    (rel <= ACCEPT).then_some((x, cfg.max_iter, rel))
}

fn dense(op: &LinearizedOp, b: &SiteVector, bn: f64, cfg: &SolveConfig) -> Result<(SiteVector, SolveReport), LinearError> {
    let seeds: Vec<Site> = b.iter().map(|(s, _)| s).collect();
    let fail = |residual: f64, block: usize| LinearError::NoConvergence {
        residual,
        block,
        cap: cfg.dense_cap,
    };
    let block = op
        .closure(&seeds, cfg.dense_cap)
        .ok_or_else(|| fail(f64::NAN, cfg.dense_cap + 1))?;
    let m = op.dense_block(&block);
    let rhs = DVector::from_iterator(block.len(), block.iter().map(|s| b.get(*s)));
    let sol = m.lu().solve(&rhs).ok_or_else(|| fail(f64::INFINITY, block.len()))?;
    let mut x = SiteVector::default();
    for (s, v) in block.iter().zip(sol.iter()) {
        x.set(*s, *v);
    }
    let rel = b.axpy(-1.0, &op.apply(&x)).norm_l2() / bn;
    if !(rel <= ACCEPT) {
        return Err(fail(rel, block.len()));
    }
    let rep = SolveReport {
        route: SolveRoute::Dense,
        iterations: 0,
        relative_residual: rel,
        block: block.len(),
    };
    Ok((x, rep))
}
