use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::solve::check_floor;
use super::{LinearError, LinearizedOp, Site, SolveConfig};
use crate::exec::Execution;
use crate::lattice::line_fit;

/// Green's function diagnostics of `T_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenDecay {
    /// Fitted rate in `|T⁻¹(k,k')| ≈ C·e^{−β|k−k'|}`; `+∞` when no
    /// off-diagonal entry exists.
    pub beta: f64,
    /// `‖T_N⁻¹‖₂`.
    pub opnorm_inv: f64,
    /// Root-mean-square deviation from the fit divided by the mean `|log|T⁻¹||`.
    pub fit_residual: f64,
    /// Off-diagonal entries used in the fit.
    pub samples: usize,
    pub components: usize,
    pub largest_component: usize,
}

struct Block {
    min_abs_eig: f64,
    points: Vec<(f64, f64)>,
}

fn analyze(op: &LinearizedOp, sites: &[Site], min_dist: f64) -> Option<Block> {
    let m: DMatrix<f64> = op.dense_block(sites);
    let eig = m.clone().symmetric_eigenvalues();
    let min_abs_eig = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let mut points = Vec::new();
    if sites.len() > 1 {
        let inv = m.lu().try_inverse()?;
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                let dist = (sites[i].k - sites[j].k).sup_norm() as f64;
                let g = inv[(i, j)].abs();
                if dist > min_dist && g > 0.0 {
                    points.push((dist, g.ln()));
                }
            }
        }
    }
    Some(Block { min_abs_eig, points })
}

/// Invert `T_N` block by block on its coupled components and fit the
/// off-diagonal decay over `|k − k'|∞ > N/10`.
pub fn green_decay(op: &LinearizedOp, cfg: &SolveConfig, exec: Execution) -> Result<GreenDecay, LinearError> {
    check_floor(op, cfg.resonance_floor)?;
    let comps = op.components();
    let largest = comps.iter().map(|c| c.len()).max().unwrap_or(0);
    if largest > cfg.dense_cap {
        return Err(LinearError::NoConvergence {
            residual: f64::NAN,
            block: largest,
            cap: cfg.dense_cap,
        });
    }
    let min_dist = op.radius() as f64 / 10.0;
    let blocks = exec.map(&comps, |c| analyze(op, c, min_dist));
    let mut min_eig = f64::INFINITY;
    let mut points = Vec::new();
    for (b, c) in blocks.into_iter().zip(&comps) {
        let b = b.ok_or(LinearError::NoConvergence {
            residual: f64::INFINITY,
            block: c.len(),
            cap: cfg.dense_cap,
        })?;
        min_eig = min_eig.min(b.min_abs_eig);
        points.extend(b.points);
    }
    let base = GreenDecay {
        beta: f64::INFINITY,
        opnorm_inv: 1.0 / min_eig,
        fit_residual: 0.0,
        samples: points.len(),
        components: comps.len(),
        largest_component: largest,
    };
    if points.is_empty() {
        return Ok(base);
    }
    let (slope, _, rms) = line_fit(&points).ok_or(LinearError::DegenerateFit)?;
    let mean_abs = points.iter().map(|p| p.1.abs()).sum::<f64>() / points.len() as f64;
    Ok(GreenDecay {
        beta: -slope,
        fit_residual: rms / mean_abs,
        ..base
    })
}
