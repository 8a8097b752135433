//! Physical-space reconstruction and verification of lattice solutions.
//!
//! The rescaled field is `w(t,x) = Σ 𝔞(n,j) e^{i(n·ω+M)t} e^{i(j·λ+m)x}`;
//! it solves `i w_t + w_xx = δ^{2p}|w|^{2p}w` when the lattice residual
//! vanishes, and `u = δ·w` solves `i u_t + u_xx = |u|^{2p}u`.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisors::ParamPoint;
use crate::exec::Execution;
use crate::lattice::{decay_fit, nonlinear_term, FieldRecord, Sector, SectorField};
use crate::newton::{NewtonTrace, StopReason};
use crate::qmap::omega_update_lenient;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("cannot parse solution: {0}")]
    Parse(String),
    #[error("inconsistent solution: {0}")]
    Inconsistent(String),
}

const FORMAT: &str = "quasinls-solution";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub stages: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    pub stop: Option<StopReason>,
}

impl TraceSummary {
    pub fn from_trace(t: &NewtonTrace) -> Self {
        TraceSummary {
            stages: t.stages.len().saturating_sub(1),
            converged: t.converged(),
            residuals: t.stages.iter().map(|s| s.residual).collect(),
            stop: t.stop.clone(),
        }
    }
}

/// A lattice solution with its parameters. `pt.omega` holds the frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionPackage {
    pub state: SectorField,
    pub pt: ParamPoint,
    pub trace: TraceSummary,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PackageFile {
    format: String,
    seed: Option<u64>,
    point: ParamPoint,
    trace: TraceSummary,
    coefficients: FieldRecord,
}

impl SolutionPackage {
    pub fn new(state: SectorField, pt: ParamPoint, trace: TraceSummary) -> Self {
        SolutionPackage {
            state,
            pt,
            trace,
            seed: None,
        }
    }

    pub fn omega(&self) -> [f64; 2] {
        self.pt.omega
    }

    pub fn to_json(&self) -> String {
        let rec = FieldRecord::from_field(Sector::Plus, &self.state.plus);
        let file = PackageFile {
            format: FORMAT.to_string(),
            seed: self.seed,
            point: self.pt,
            trace: self.trace.clone(),
            coefficients: rec,
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    /// Parse and check consistency.
    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        let file: PackageFile = serde_json::from_str(text).map_err(|e| VerifyError::Parse(e.to_string()))?;
        if file.format != FORMAT {
            return Err(VerifyError::Parse(format!("unknown format {:?}", file.format)));
        }
        if file.coefficients.sector != Sector::Plus {
            return Err(VerifyError::Parse("coefficients must be the plus sector".into()));
        }
        file.point
            .data
            .validate()
            .map_err(|e| VerifyError::Parse(e.to_string()))?;
        let plus = file
            .coefficients
            .to_field()
            .map_err(|e| VerifyError::Parse(e.to_string()))?;
        let sol = SolutionPackage {
            state: SectorField::from_plus(plus),
            pt: file.point,
            trace: file.trace,
            seed: file.seed,
        };
        sol.check_consistency()?;
        Ok(sol)
    }

    /// `ω` agrees with the Q-equation update of the stored state to 10⁻¹².
    pub fn check_consistency(&self) -> Result<(), VerifyError> {
        let (want, _) = omega_update_lenient(&self.state, &self.pt);
        for k in 0..2 {
            let got = self.pt.omega[k];
            if !((got - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0)) {
                return Err(VerifyError::Inconsistent(format!(
                    "omega{} = {got} but the Q-equations give {}",
                    k + 1,
                    want[k]
                )));
            }
        }
        for k in 0..2 {
            let site = self.pt.data.seed_site(k);
            if self.state.plus.get(site) != self.pt.data.a[k] {
                return Err(VerifyError::Inconsistent(format!("amplitude at {site} is not pinned")));
            }
        }
        Ok(())
    }
}

/// Uniform tensor grid over `[t0,t1] × [x0,x1]`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub t: [f64; 2],
    pub x: [f64; 2],
    pub nt: usize,
    pub nx: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            t: [0.0, 100.0],
            x: [0.0, 100.0],
            nt: 100,
            nx: 100,
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let axis = |r: [f64; 2], n: usize| -> Vec<f64> {
            match n {
                0 => vec![],
                1 => vec![r[0]],
                _ => (0..n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64).collect(),
            }
        };
        let ts = axis(self.t, self.nt);
        let xs = axis(self.x, self.nx);
        ts.iter().flat_map(|&t| xs.iter().map(move |&x| (t, x))).collect()
    }
}

/// Series terms `(c, n·ω ± M, j·λ ± m)` of one sector.
struct Terms(Vec<(f64, f64, f64)>);

impl Terms {
    fn new(sol: &SolutionPackage, s: Sector) -> Self {
        let pt = &sol.pt;
        let sg = s.sign();
        Terms(
            sol.state
                .sector(s)
                .iter()
                .map(|(k, c)| {
                    let (n, j) = (k.n(), k.j());
                    let at = n[0] as f64 * pt.omega[0] + n[1] as f64 * pt.omega[1] + sg * pt.big_m;
                    let ax = j[0] as f64 * pt.lambda[0] + j[1] as f64 * pt.lambda[1] + sg * pt.m;
                    (c, at, ax)
                })
                .collect(),
        )
    }

    /// `(w, w_t, w_xx)` at one point.
    fn eval(&self, t: f64, x: f64) -> (Complex64, Complex64, Complex64) {
        let mut w = Complex64::new(0.0, 0.0);
        let mut wt = w;
        let mut wxx = w;
        for &(c, at, ax) in &self.0 {
            let e = Complex64::cis(at * t + ax * x) * c;
            w += e;
            wt += e * Complex64::new(0.0, at);
            wxx -= e * (ax * ax);
        }
        (w, wt, wxx)
    }
}

/// Rescaled sector series `Σ 𝔞 e^{±i(...)}`; the minus sector is the
/// complex conjugate of the plus sector.
pub fn evaluate_sector(sol: &SolutionPackage, s: Sector, t: f64, x: f64) -> Complex64 {
    Terms::new(sol, s).eval(t, x).0
}

/// Physical field `u(t,x) = δ·Σ 𝔞(n,j) e^{i(n·ω+M)t} e^{i(j·λ+m)x}`.
pub fn evaluate(sol: &SolutionPackage, t: f64, x: f64) -> Complex64 {
    evaluate_sector(sol, Sector::Plus, t, x) * sol.pt.data.delta
}

/// The linear two-mode solution `δ·Σ_k a_k e^{i(−ω_k+M)t} e^{i(h_k·λ+m)x}`
/// with the package's frequencies.
pub fn linear_solution(sol: &SolutionPackage, t: f64, x: f64) -> Complex64 {
    let pt = &sol.pt;
    let lam = [pt.lambda_dot(pt.data.h1), pt.lambda_dot(pt.data.h2)];
    (0..2)
        .map(|k| {
            let phase = (-pt.omega[k] + pt.big_m) * t + (lam[k] + pt.m) * x;
            Complex64::cis(phase) * pt.data.a[k]
        })
        .sum::<Complex64>()
        * pt.data.delta
}

fn residual_at(terms: &Terms, t: f64, x: f64, d2p: f64, p: u32) -> f64 {
    let (w, wt, wxx) = terms.eval(t, x);
    let nl = w * w.norm_sqr().powi(p as i32) * d2p;
    (Complex64::i() * wt + wxx - nl).norm()
}

/// `max |i w_t + w_xx − δ^{2p}|w|^{2p}w|` over the grid, with exact
/// term-by-term derivatives of the rescaled series.
pub fn pde_residual_rescaled(sol: &SolutionPackage, grid: &[(f64, f64)], exec: Execution) -> f64 {
    let terms = Terms::new(sol, Sector::Plus);
    let (d2p, p) = (sol.pt.data.delta2p(), sol.pt.data.p);
    exec.map(grid, |&(t, x)| residual_at(&terms, t, x, d2p, p))
        .into_iter()
        .fold(0.0, f64::max)
}

/// `max |i u_t + u_xx − |u|^{2p}u|` for the physical field over the grid.
pub fn pde_residual(sol: &SolutionPackage, grid: &[(f64, f64)], exec: Execution) -> f64 {
    sol.pt.data.delta * pde_residual_rescaled(sol, grid, exec)
}

/// Sampled values for plotting: `(t, x, Re u, Im u, |residual|)`.
pub fn field_samples(sol: &SolutionPackage, grid: &[(f64, f64)], exec: Execution) -> Vec<[f64; 5]> {
    let terms = Terms::new(sol, Sector::Plus);
    let (d2p, p, d) = (sol.pt.data.delta2p(), sol.pt.data.p, sol.pt.data.delta);
    exec.map(grid, |&(t, x)| {
        let u = terms.eval(t, x).0 * d;
        [t, x, u.re, u.im, d * residual_at(&terms, t, x, d2p, p)]
    })
}

/// Whitespace-separated columns with one header comment line.
pub fn write_gnuplot<W: Write>(mut w: W, seed: Option<u64>, rows: &[[f64; 5]]) -> io::Result<()> {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    writeln!(w, "# seed={seed} t x re_u im_u abs_residual")?;
    let mut last_t = None;
    for r in rows {
        if last_t.is_some_and(|t| t != r[0]) {
            writeln!(w)?;
        }
        last_t = Some(r[0]);
        writeln!(w, "{:.12e} {:.12e} {:.12e} {:.12e} {:.6e}", r[0], r[1], r[2], r[3], r[4])?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub grid: Grid,
    pub pde_tolerance: f64,
    /// `C` in `sup|u − u_lin| ≤ C·δ^{p+1}`.
    pub closeness_constant: f64,
    /// Admissible range of the ω shift relative to its seed value.
    pub omega_band: [f64; 2],
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            grid: Grid::default(),
            pde_tolerance: 1e-8,
            closeness_constant: 1.0,
            omega_band: [0.1, 10.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaCheck {
    /// `|ω_k − (h_k·λ+m)² − M|`.
    pub gap: [f64; 2],
    /// `max_k |[(u*v)^{*p}*u](−e_k,h_k)/a_k|·δ^{2p}`.
    pub bound: f64,
    /// Gap divided by the same shift computed from the seed.
    pub seed_ratio: [Option<f64>; 2],
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub alpha: Option<f64>,
    pub c0: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessCheck {
    /// `sup |u − u_lin|` with physical amplitudes.
    pub physical: f64,
    /// The same for the rescaled field (divided by δ).
    pub rescaled: f64,
    /// `C·δ^{p+1}`.
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub omega: OmegaCheck,
    pub decay: DecayCheck,
    pub closeness: ClosenessCheck,
    pub pde_residual: f64,
    pub pde_passed: bool,
    pub grid_points: usize,
    pub passed: bool,
}

pub fn theorem_report(sol: &SolutionPackage, cfg: &VerifyConfig, exec: Execution) -> TheoremReport {
    let pt = &sol.pt;
    let d = &pt.data;
    let lin = pt.linear_frequencies();
    let d2p = d.delta2p();
    let gap = [(pt.omega[0] - lin[0]).abs(), (pt.omega[1] - lin[1]).abs()];

    let nl = nonlinear_term(&sol.state.plus, &sol.state.minus, d.p);
    let seed = d.seed();
    let nl0 = nonlinear_term(&seed.plus, &seed.minus, d.p);
    let mut bound: f64 = 0.0;
    let mut seed_ratio = [None; 2];
    for k in 0..2 {
        if d.a[k] == 0.0 {
            continue;
        }
        let site = d.seed_site(k);
        bound = bound.max((nl.get(site) / d.a[k]).abs() * d2p);
        let s0 = (nl0.get(site) / d.a[k]).abs() * d2p;
        if s0 > 0.0 {
            seed_ratio[k] = Some(gap[k] / s0);
        }
    }
    let slack = 1e-12 * lin[0].abs().max(lin[1].abs()).max(1.0);
    let in_band = seed_ratio
        .iter()
        .flatten()
        .all(|r| *r >= cfg.omega_band[0] && *r <= cfg.omega_band[1]);
    let omega = OmegaCheck {
        gap,
        bound,
        seed_ratio,
        passed: gap.iter().all(|g| *g <= bound + slack) && in_band,
    };

    let decay = match decay_fit(&sol.state.plus) {
        Ok(f) => DecayCheck {
            alpha: Some(f.alpha),
            c0: Some(f.c0),
            note: None,
        },
        Err(_) => DecayCheck {
            alpha: None,
            c0: None,
            note: Some("insufficient support".into()),
        },
    };

    let grid = cfg.grid.points();
    let terms = Terms::new(sol, Sector::Plus);
    let (p, delta) = (d.p, d.delta);
    let rows = exec.map(&grid, |&(t, x)| {
        let (w, wt, wxx) = terms.eval(t, x);
        let dev = (w * delta - linear_solution(sol, t, x)).norm();
        let nl = w * w.norm_sqr().powi(p as i32) * d2p;
        (dev, delta * (Complex64::i() * wt + wxx - nl).norm())
    });
    let physical = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let pde = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let cbound = cfg.closeness_constant * delta.powi(p as i32 + 1);
    let closeness = ClosenessCheck {
        physical,
        rescaled: if delta > 0.0 { physical / delta } else { 0.0 },
        bound: cbound,
        passed: physical <= cbound,
    };
    let pde_passed = pde <= cfg.pde_tolerance;
    TheoremReport {
        passed: omega.passed && closeness.passed && pde_passed,
        omega,
        decay,
        closeness,
        pde_residual: pde,
        pde_passed,
        grid_points: grid.len(),
    }
}
