//! The frequency map `(λ, m, M) ↦ ω` given by the Q-equations, its inverse
//! and Jacobian diagnostics.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisors::{dot, ParamPoint, ProblemData};
use crate::lattice::{nonlinear_term, SectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmapError {
    #[error("amplitude a{k} vanishes; its frequency is not determined by the Q-equation")]
    ZeroAmplitude { k: usize },
    #[error("(h1-h2)·λ = {gap:e} is below the floor {floor:e}")]
    DegenerateLambda { gap: f64, floor: f64 },
    #[error("Q-linearization determinant {det:e} is below the floor {floor:e}")]
    SingularQPrime { det: f64, floor: f64 },
}

/// `N(u)(−e_k, h_k) / a_k` for both `k`, with `N(u) = (u*v)^{*p}*u`.
///
/// The amplitude is read from the state, which keeps the resonant sites
/// pinned at `a_k`.
pub fn nonlinear_shift(state: &SectorField, data: &ProblemData) -> Result<[f64; 2], QmapError> {
    let n = nonlinear_term(&state.plus, &state.minus, data.p);
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let site = data.seed_site(k);
        let a = state.plus.get(site);
        if a == 0.0 {
            return Err(QmapError::ZeroAmplitude { k: k + 1 });
        }
        *o = n.get(site) / a;
    }
    Ok(out)
}

/// `ω_k = (h_k·λ + m)² + M + δ^{2p}·N(u)(−e_k, h_k)/a_k`.
pub fn omega_update(state: &SectorField, pt: &ParamPoint) -> Result<[f64; 2], QmapError> {
    let c = nonlinear_shift(state, &pt.data)?;
    let lin = pt.linear_frequencies();
    let d2p = pt.data.delta2p();
    Ok([lin[0] + d2p * c[0], lin[1] + d2p * c[1]])
}

/// Like [`omega_update`] but keeps the linear frequency for a mode whose
/// amplitude vanishes. The flags mark those modes.
pub fn omega_update_lenient(state: &SectorField, pt: &ParamPoint) -> ([f64; 2], [bool; 2]) {
    let n = nonlinear_term(&state.plus, &state.minus, pt.data.p);
    let lin = pt.linear_frequencies();
    let d2p = pt.data.delta2p();
    let mut om = lin;
    let mut flags = [false; 2];
    for k in 0..2 {
        let site = pt.data.seed_site(k);
        let a = state.plus.get(site);
        if a == 0.0 {
            flags[k] = true;
        } else {
            om[k] += d2p * n.get(site) / a;
        }
    }
    (om, flags)
}

/// Floors and iteration limits for the inverse map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    /// `|(h1−h2)·λ|` at or below this is rejected.
    pub floor: f64,
    /// Absolute Q-residual at which refinement stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl InverseConfig {
    /// Floor `|log δ|⁻¹·|h1−h2|∞^{−3.5}` (zero at `δ = 0`).
    pub fn for_problem(data: &ProblemData) -> Self {
        let floor = if data.delta == 0.0 {
            0.0
        } else {
            let hd = data.h_diff();
            let hn = hd[0].abs().max(hd[1].abs()) as f64;
            1.0 / (data.delta.ln().abs() * hn.powf(3.5))
        };
        InverseConfig {
            floor,
            tol: 0.0,
            max_iter: 20,
        }
    }
}

fn check_gap(lambda: [f64; 2], data: &ProblemData, floor: f64) -> Result<f64, QmapError> {
    let gap = dot(data.h_diff(), lambda);
    if gap.abs() <= floor {
        return Err(QmapError::DegenerateLambda { gap, floor });
    }
    Ok(gap)
}

/// Closed-form `(m, M)` from `(λ, ω)` with the nonlinear shift evaluated on
/// the seed.
pub fn inverse_seed(
    lambda: [f64; 2],
    omega: [f64; 2],
    data: &ProblemData,
    cfg: &InverseConfig,
) -> Result<(f64, f64), QmapError> {
    let c = nonlinear_shift(&data.seed(), data)?;
    inverse_closed_form(lambda, omega, c, data, cfg.floor)
}

/// Solve `(h_k·λ + m)² + M = Ω_k`, `Ω_k = ω_k − δ^{2p}c_k`, exactly.
fn inverse_closed_form(
    lambda: [f64; 2],
    omega: [f64; 2],
    c: [f64; 2],
    data: &ProblemData,
    floor: f64,
) -> Result<(f64, f64), QmapError> {
    let d = check_gap(lambda, data, floor)?;
    let d2p = data.delta2p();
    let big_omega = [omega[0] - d2p * c[0], omega[1] - d2p * c[1]];
    let x = [dot(data.h1, lambda), dot(data.h2, lambda)];
    // Subtracting the two equations gives d·(x1 + x2 + 2m) = Ω1 − Ω2.
    let mut m = 0.5 * (big_omega[0] - big_omega[1]) / d - 0.5 * (x[0] + x[1]);
    let mut big_m = 0.5 * (big_omega[0] - (x[0] + m).powi(2) + big_omega[1] - (x[1] + m).powi(2));
    // One Newton polish with residuals in doubled precision.
    let q = [0, 1].map(|k| q_compensated(x[k], m, big_m, big_omega[k]));
    let dm = -(q[0] - q[1]) / (2.0 * d);
    m += dm;
    big_m += -0.5 * (q[0] + q[1]) - (x[0] + x[1] + 2.0 * (m - dm)) * dm;
    Ok((m, big_m))
}

/// `(x + m)² + M − Ω` with the square and the sum carried error-free.
fn q_compensated(x: f64, m: f64, big_m: f64, big_omega: f64) -> f64 {
    let s = x + m;
    let bb = s - x;
    let s_lo = (x - (s - bb)) + (m - bb);
    let p = s * s;
    let p_lo = s.mul_add(s, -p);
    ((p - big_omega) + big_m) + (p_lo + 2.0 * s * s_lo)
}

/// `Q_k(m, M) = (h_k·λ + m)² + M + δ^{2p}c_k − ω_k`.
pub fn q_value(lambda: [f64; 2], omega: [f64; 2], m: f64, big_m: f64, c: [f64; 2], data: &ProblemData) -> [f64; 2] {
    let d2p = data.delta2p();
    let f = |k: usize| (dot(data.h(k), lambda) + m).powi(2) + big_m + d2p * c[k] - omega[k];
    [f(0), f(1)]
}

fn sup2(q: [f64; 2]) -> f64 {
    q[0].abs().max(q[1].abs())
}

/// Outcome of the secondary Newton refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub m: f64,
    pub big_m: f64,
    /// `max_k |Q_k|` at the returned point for the last stage.
    pub q_residual: f64,
    /// `max_k |Q_k|` before each iteration of the last stage, and after it.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Newton on `Q_i` for `i = 1..=r`, starting from [`inverse_seed`], with
/// each `u^{(i)}` frozen. `states[i]` holds `u^{(i)}`.
pub fn inverse_refine(
    lambda: [f64; 2],
    omega: [f64; 2],
    r: usize,
    states: &[SectorField],
    data: &ProblemData,
    cfg: &InverseConfig,
) -> Result<Refinement, QmapError> {
    let (mut m, mut big_m) = inverse_seed(lambda, omega, data, cfg)?;
    let mut out = Refinement {
        m,
        big_m,
        q_residual: 0.0,
        history: vec![0.0],
        iterations: 0,
    };
    if r == 0 {
        return Ok(out);
    }
    assert!(states.len() > r, "states for stages 0..={r} are required");
    let x = [dot(data.h1, lambda), dot(data.h2, lambda)];
    let mut total = 0;
    let mut history = Vec::new();
    for state in &states[1..=r] {
        let c = nonlinear_shift(state, data)?;
        let mut q = q_value(lambda, omega, m, big_m, c, data);
        history = vec![sup2(q)];
        for _ in 0..cfg.max_iter {
            if sup2(q) <= cfg.tol {
                break;
            }
            // Q' = [[2(x1+m), 1], [2(x2+m), 1]], det = 2(x1 − x2).
            let det = 2.0 * (x[0] - x[1]);
            if det.abs() <= 2.0 * cfg.floor || det == 0.0 {
                return Err(QmapError::SingularQPrime { det, floor: 2.0 * cfg.floor });
            }
            let dm = (q[0] - q[1]) / det;
            let d_big_m = (2.0 * (x[0] + m) * q[1] - 2.0 * (x[1] + m) * q[0]) / det;
            let (nm, nbm) = (m - dm, big_m - d_big_m);
            let nq = q_value(lambda, omega, nm, nbm, c, data);
            if sup2(nq) >= sup2(q) {
                break;
            }
            m = nm;
            big_m = nbm;
            q = nq;
            history.push(sup2(q));
            total += 1;
        }
    }
    out.m = m;
    out.big_m = big_m;
    out.q_residual = *history.last().unwrap();
    out.history = history;
    out.iterations = total;
    Ok(out)
}

/// The four-by-four matrix `∂(λ, ω)/∂(λ, m, M)` at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMapEval {
    pub omega: [f64; 2],
    /// Row-major; rows `(λ1, λ2, ω1, ω2)`, columns `(λ1, λ2, m, M)`.
    pub jacobian: [[f64; 4]; 4],
    pub det: f64,
}

impl FrequencyMapEval {
    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.jacobian[i][j])
    }

    pub fn recomputed_det(&self) -> f64 {
        self.matrix().determinant()
    }
}

fn to_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    a
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference Jacobian of a map `R⁴ → R⁴` whose first two outputs
/// are the first two inputs.
fn central_jacobian<F: Fn([f64; 4]) -> Option<[f64; 2]>>(x: [f64; 4], f: F) -> Option<Matrix4<f64>> {
    let mut j = Matrix4::zeros();
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    for c in 0..4 {
        let h = fd_step(x[c]);
        let mut xp = x;
        let mut xm = x;
        xp[c] += h;
        xm[c] -= h;
        let fp = f(xp)?;
        let fm = f(xm)?;
        j[(2, c)] = (fp[0] - fm[0]) / (2.0 * h);
        j[(3, c)] = (fp[1] - fm[1]) / (2.0 * h);
    }
    Some(j)
}

/// Jacobian of the frequency map by central differences with `state` held
/// fixed.
pub fn jacobian(pt: &ParamPoint, state: &SectorField) -> FrequencyMapEval {
    let (omega, _) = omega_update_lenient(state, pt);
    let m = central_jacobian(pt.coords(), |c| Some(omega_update_lenient(state, &pt.with_coords(c)).0))
        .expect("frozen-state map is total");
    FrequencyMapEval {
        omega,
        jacobian: to_rows(&m),
        det: m.determinant(),
    }
}

/// Jacobian where `solve` recomputes the state at every perturbed point, so
/// that the dependence of `u` on the parameters is included.
pub fn jacobian_resolved<S>(pt: &ParamPoint, solve: S) -> Option<FrequencyMapEval>
where
    S: Fn(&ParamPoint) -> Option<SectorField>,
{
    let at = |c: [f64; 4]| {
        let q = pt.with_coords(c);
        let s = solve(&q)?;
        omega_update(&s, &q).ok()
    };
    let omega = at(pt.coords())?;
    let m = central_jacobian(pt.coords(), at)?;
    Some(FrequencyMapEval {
        omega,
        jacobian: to_rows(&m),
        det: m.determinant(),
    })
}

/// Central-difference Jacobian of `(λ, ω) ↦ (λ, m, M)` through
/// [`inverse_seed`]; columns `(λ1, λ2, ω1, ω2)`.
pub fn inverse_jacobian(
    lambda: [f64; 2],
    omega: [f64; 2],
    data: &ProblemData,
    cfg: &InverseConfig,
) -> Result<Matrix4<f64>, QmapError> {
    inverse_seed(lambda, omega, data, cfg)?;
    let x = [lambda[0], lambda[1], omega[0], omega[1]];
    central_jacobian(x, |c| {
        inverse_seed([c[0], c[1]], [c[2], c[3]], data, cfg)
            .ok()
            .map(|(m, bm)| [m, bm])
    })
    .ok_or(QmapError::DegenerateLambda {
        gap: dot(data.h_diff(), lambda),
        floor: cfg.floor,
    })
}
