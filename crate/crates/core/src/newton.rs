//! Multiscale Newton iteration for the P-equations, interleaved with the
//! Q-equation frequency update.
//!
//! Stage `r` solves the linearized system on the box `[−A^r, A^r]⁴` minus
//! the resonant sites, then refreshes ω so that the Q-equations hold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisors::{
    diophantine_scan, excision_scan, DiophantineMargin, ExcisionConfig, ExcisionReason, ExcisionVerdict,
    ParamError, ParamPoint,
};
use crate::lattice::{decay_fit, nonlinear_term, CoeffField, Sector, SectorField};
use crate::linearized::{assemble, solve_with_report, LinearError, Site, SiteVector, SolveConfig, SolveReport};
use crate::qmap::{omega_update, omega_update_lenient};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    /// Scale base `A`; stage `r` works on the box of radius `A^r`.
    #[serde(rename = "A")]
    pub scale_base: u32,
    pub max_stage: u32,
    /// Stop once `‖F‖₂` is at or below this.
    pub residual_target: f64,
    /// Expected lower bound on `log‖F_{r+1}‖ / log‖F_r‖`, reported only.
    pub rate_exponent: f64,
    /// Stages gated by the full pointwise divisor scan; later stages are
    /// gated by the Diophantine conditions and the Green's function bound.
    pub initial_stages: u32,
    /// Exponent `C` in the bound `‖T_N⁻¹‖ < δ^{−(p+2)}·A^{r^C}`.
    pub green_exponent: f64,
    pub solve: SolveConfig,
    /// Thresholds; `None` uses [`ExcisionConfig::for_problem`].
    pub excision: Option<ExcisionConfig>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            scale_base: 2,
            max_stage: 4,
            residual_target: 1e-12,
            rate_exponent: 4.0 / 3.0,
            initial_stages: 1,
            green_exponent: 8.0,
            solve: SolveConfig::default(),
            excision: None,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), NewtonError> {
        let bad = |m: &str| Err(NewtonError::InvalidConfig(m.to_string()));
        if self.scale_base < 2 {
            return bad("A must be at least 2");
        }
        if self.max_stage < 1 {
            return bad("max_stage must be at least 1");
        }
        if (self.scale_base as f64).powi(self.max_stage as i32) > 64.0 {
            return bad("A^max_stage must not exceed 64");
        }
        if !(self.residual_target > 0.0 && self.residual_target.is_finite()) {
            return bad("residual_target must be positive");
        }
        if !(self.solve.resonance_floor >= 0.0) {
            return bad("resonance_floor must be nonnegative");
        }
        Ok(())
    }

    pub fn stage_radius(&self, r: u32) -> i32 {
        (self.scale_base as i32).pow(r)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("excised at stage {stage}: {reason} ({detail})")]
    Excised {
        stage: u32,
        reason: ExcisionReason,
        detail: String,
    },
    #[error("no convergence at stage {stage}: {message}")]
    NoConvergence { stage: u32, message: String },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Compact record of the gate applied at one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    /// `"full"` for the pointwise divisor scan, `"diophantine"` otherwise.
    pub kind: String,
    pub passed: bool,
    pub reason: Option<ExcisionReason>,
    pub offending: Option<String>,
    pub violations: usize,
    pub min_divisor: Option<f64>,
    pub lambda_margin: DiophantineMargin,
    pub omega_margin: DiophantineMargin,
}

impl GateSummary {
    fn from_verdict(kind: &str, v: &ExcisionVerdict) -> Self {
        GateSummary {
            kind: kind.to_string(),
            passed: v.passed(),
            reason: v.reason(),
            offending: v.first_violation().map(|x| x.site_label()),
            violations: v.violations.len(),
            min_divisor: v.min_divisor,
            lambda_margin: v.lambda_margin,
            omega_margin: v.omega_margin,
        }
    }
}

/// Monitors recorded after each stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u32,
    pub box_radius: i32,
    /// `‖F(u^{(r)})‖₂` with the resonant sites zeroed.
    pub residual: f64,
    /// Part of the residual inside the stage box.
    pub box_residual: f64,
    /// Part of the residual outside the stage box.
    pub tail_residual: f64,
    /// Raw residual on the resonant sites (round-off of the Q-equations).
    pub q_residual: f64,
    pub correction: f64,
    pub support_radius: u32,
    /// Smallest `|D|` over the rows of `T_N`.
    pub min_divisor: Option<f64>,
    pub min_divisor_site: Option<Site>,
    pub omega: [f64; 2],
    pub alpha: Option<f64>,
    pub gate: Option<GateSummary>,
    /// `‖T_N⁻¹‖` on the coupled block that was inverted.
    pub green_norm: Option<f64>,
    pub solve: Option<SolveReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxStage,
    Excised { stage: u32, reason: ExcisionReason, detail: String },
    SolverFailure { stage: u32, message: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub stages: Vec<StageRecord>,
    pub flags: Vec<String>,
    pub stop: Option<StopReason>,
}

impl NewtonTrace {
    pub fn converged(&self) -> bool {
        matches!(self.stop, Some(StopReason::Converged))
    }

    pub fn final_residual(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.residual)
    }

    /// `log‖F_{r+1}‖ / log‖F_r‖` for consecutive recorded stages.
    pub fn log_ratios(&self) -> Vec<f64> {
        self.stages
            .windows(2)
            .filter(|w| w[1].correction > 0.0 || w[1].solve.is_some())
            .map(|w| w[1].residual.ln() / w[0].residual.ln())
            .collect()
    }

    /// CSV with columns `stage, residual, correction, support_radius,
    /// min_divisor, omega1, omega2, alpha`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "stage",
            "residual",
            "correction",
            "support_radius",
            "min_divisor",
            "omega1",
            "omega2",
            "alpha",
        ])
        .expect("in-memory write");
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        for s in &self.stages {
            w.write_record([
                s.stage.to_string(),
                format!("{:e}", s.residual),
                format!("{:e}", s.correction),
                s.support_radius.to_string(),
                opt(s.min_divisor),
                format!("{:e}", s.omega[0]),
                format!("{:e}", s.omega[1]),
                opt(s.alpha),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// `F(u,v)` on the union of supports, resonant sites kept.
fn raw_residual(state: &SectorField, pt: &ParamPoint) -> SectorField {
    let d2p = pt.data.delta2p();
    let p = pt.data.p;
    let sector = |s: Sector, own: &CoeffField, other: &CoeffField| {
        let mut out = if d2p == 0.0 {
            CoeffField::new()
        } else {
            nonlinear_term(own, other, p).scale(d2p)
        };
        for (k, v) in own.iter() {
            out.add_at(k, crate::divisors::divisor(k, s, pt, 0.0, 0.0) * v);
        }
        out
    };
    SectorField {
        plus: sector(Sector::Plus, &state.plus, &state.minus),
        minus: sector(Sector::Minus, &state.minus, &state.plus),
    }
}

/// `F(u,v)`: `D₊u + δ^{2p}(u*v)^{*p}*u` and `D₋v + δ^{2p}(v*u)^{*p}*v` on
/// the union of supports. When `pt.omega` is exactly the Q-equation update of
/// `state`, the four resonant sites are set to zero.
pub fn residual(state: &SectorField, pt: &ParamPoint) -> SectorField {
    let mut f = raw_residual(state, pt);
    if omega_update(state, pt).is_ok_and(|w| w == pt.omega) {
        for (s, k) in pt.data.resonant_sites() {
            match s {
                Sector::Plus => f.plus.remove(k),
                Sector::Minus => f.minus.remove(k),
            };
        }
    }
    f
}

/// Extra information from one Newton step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub correction: f64,
    pub solve: SolveReport,
    pub min_divisor: Option<(Site, f64)>,
    pub green_norm: Option<f64>,
}

/// One Newton step at box radius `n`: `u ← u − T_N⁻¹ F(u)` restricted to
/// the rows of `T_N`; the minus sector is the reflection of the new `u`.
pub fn newton_step(state: &SectorField, pt: &ParamPoint, n: i32) -> Result<(SectorField, f64), LinearError> {
    newton_step_detailed(state, pt, n, &SolveConfig::default()).map(|(s, i)| (s, i.correction))
}

pub fn newton_step_detailed(
    state: &SectorField,
    pt: &ParamPoint,
    n: i32,
    cfg: &SolveConfig,
) -> Result<(SectorField, StepInfo), LinearError> {
    let op = assemble(n, pt, state, 0.0, 0.0);
    let f = raw_residual(state, pt);
    let mut rhs = SiteVector::default();
    for (s, field) in [(Sector::Plus, &f.plus), (Sector::Minus, &f.minus)] {
        for (k, v) in field.iter() {
            let site = Site::new(s, k);
            if op.contains(site) {
                rhs.set(site, v);
            }
        }
    }
    let (x, rep) = solve_with_report(&op, &rhs, cfg)?;
    let green_norm = if rhs.is_empty() {
        None
    } else {
        let seeds: Vec<Site> = rhs.iter().map(|(s, _)| s).collect();
        op.closure(&seeds, cfg.dense_cap).map(|block| {
            let ev = op.dense_block(&block).symmetric_eigenvalues();
            1.0 / ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
        })
    };
    let new_plus = state.plus.sub(&x.plus);
    let info = StepInfo {
        correction: x.norm_l2(),
        solve: rep,
        min_divisor: op.min_abs_divisor().map(|(s, d)| (s, d.abs())),
        green_norm,
    };
    Ok((SectorField::from_plus(new_plus), info))
}

fn split_norms(f: &SectorField, pt: &ParamPoint, radius: i32) -> (f64, f64, f64) {
    let (mut inside, mut tail, mut q) = (0.0, 0.0, 0.0);
    for (s, field) in [(Sector::Plus, &f.plus), (Sector::Minus, &f.minus)] {
        for (k, v) in field.iter() {
            if pt.data.is_resonant(s, k) {
                q += v * v;
            } else if k.in_box(radius) {
                inside += v * v;
            } else {
                tail += v * v;
            }
        }
    }
    (inside.sqrt(), tail.sqrt(), q.sqrt())
}

/// Stage-by-stage driver; exposes every intermediate state.
pub struct NewtonDriver {
    config: NewtonConfig,
    excision: ExcisionConfig,
    pt: ParamPoint,
    states: Vec<SectorField>,
    trace: NewtonTrace,
    converged: bool,
    gate_after_convergence: bool,
}

impl NewtonDriver {
    /// Seed state with ω from the Q-equations; records stage 0.
    pub fn new(config: NewtonConfig, pt: ParamPoint) -> Result<Self, NewtonError> {
        config.validate()?;
        pt.data.validate()?;
        let excision = config.excision.unwrap_or_else(|| ExcisionConfig::for_problem(&pt.data));
        let seed = pt.data.seed();
        let mut d = NewtonDriver {
            config,
            excision,
            pt,
            states: Vec::new(),
            trace: NewtonTrace::default(),
            converged: false,
            gate_after_convergence: false,
        };
        d.refresh_omega(&seed);
        let rec = d.record(0, 0, &seed, 0.0, None, None, None);
        d.push(seed, rec);
        Ok(d)
    }

    /// Keep applying the stage gates after convergence, without further
    /// Newton steps, until `max_stage`. Used by parameter scans so that every
    /// sample is judged at every stage.
    pub fn gate_after_convergence(mut self, yes: bool) -> Self {
        self.gate_after_convergence = yes;
        self
    }

    pub fn point(&self) -> &ParamPoint {
        &self.pt
    }

    pub fn state(&self) -> &SectorField {
        self.states.last().expect("stage 0 exists")
    }

    /// `u^{(0)}, …, u^{(r)}`.
    pub fn states(&self) -> &[SectorField] {
        &self.states
    }

    pub fn trace(&self) -> &NewtonTrace {
        &self.trace
    }

    pub fn stage(&self) -> u32 {
        self.trace.stages.last().map_or(0, |s| s.stage)
    }

    pub fn finished(&self) -> bool {
        self.trace.stop.is_some()
    }

    fn refresh_omega(&mut self, state: &SectorField) {
        let (om, flags) = omega_update_lenient(state, &self.pt);
        for (k, f) in flags.iter().enumerate() {
            let msg = format!("a{} = 0: omega{} kept at its linear value", k + 1, k + 1);
            if *f && !self.trace.flags.contains(&msg) {
                self.trace.flags.push(msg);
            }
        }
        self.pt.omega = om;
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        stage: u32,
        radius: i32,
        state: &SectorField,
        correction: f64,
        gate: Option<GateSummary>,
        info: Option<&StepInfo>,
        carried: Option<&StageRecord>,
    ) -> StageRecord {
        let f = residual(state, &self.pt);
        let raw = raw_residual(state, &self.pt);
        let (inside, tail, _) = split_norms(&f, &self.pt, radius);
        let (_, _, q) = split_norms(&raw, &self.pt, radius);
        StageRecord {
            stage,
            box_radius: radius,
            residual: f.norm_l2(),
            box_residual: inside,
            tail_residual: tail,
            q_residual: q,
            correction,
            support_radius: state.support_radius(),
            min_divisor: info
                .and_then(|i| i.min_divisor.map(|m| m.1))
                .or_else(|| carried.and_then(|c| c.min_divisor)),
            min_divisor_site: info.and_then(|i| i.min_divisor.map(|m| m.0)),
            omega: self.pt.omega,
            alpha: decay_fit(&state.plus).ok().map(|d| d.alpha),
            gate,
            green_norm: info.and_then(|i| i.green_norm),
            solve: info.map(|i| i.solve),
        }
    }

    fn push(&mut self, state: SectorField, rec: StageRecord) {
        self.converged = rec.residual <= self.config.residual_target;
        self.trace.stages.push(rec);
        self.states.push(state);
    }

    fn stop(&mut self, reason: StopReason) {
        self.trace.stop = Some(reason);
    }

    fn gate(&self, r: u32) -> (ExcisionVerdict, &'static str) {
        if r <= self.config.initial_stages {
            (excision_scan(&self.pt, r, self.config.scale_base, &self.excision), "full")
        } else {
            (diophantine_scan(&self.pt, r, self.config.scale_base, &self.excision), "diophantine")
        }
    }

    /// `ln(δ^{−(p+2)}·A^{r^C})`.
    fn green_log_bound(&self, r: u32) -> f64 {
        let d = self.pt.data.delta;
        if d == 0.0 {
            return f64::INFINITY;
        }
        -((self.pt.data.p + 2) as f64) * d.ln()
            + (r as f64).powf(self.config.green_exponent) * (self.config.scale_base as f64).ln()
    }

    /// Run one stage. Returns `false` once the run has stopped.
    pub fn advance(&mut self) -> bool {
        if self.finished() {
            return false;
        }
        let r = self.stage() + 1;
        if r > self.config.max_stage || (self.converged && !self.gate_after_convergence) {
            let reason = if self.converged {
                StopReason::Converged
            } else {
                StopReason::MaxStage
            };
            self.stop(reason);
            return false;
        }
        let n = self.config.stage_radius(r);
        let (verdict, kind) = self.gate(r);
        let gate = GateSummary::from_verdict(kind, &verdict);
        if !verdict.passed() {
            let detail = gate.offending.clone().unwrap_or_default();
            let reason = verdict.reason().expect("failed verdict has a reason");
            let rec = StageRecord {
                gate: Some(gate),
                ..self.trace.stages.last().expect("stage 0").clone()
            };
            self.trace.stages.last_mut().expect("stage 0").gate = rec.gate;
            self.stop(StopReason::Excised { stage: r, reason, detail });
            return false;
        }
        if self.converged {
            let state = self.state().clone();
            let carried = self.trace.stages.last().cloned();
            let rec = self.record(r, n, &state, 0.0, Some(gate), None, carried.as_ref());
            self.push(state, rec);
            return true;
        }
        let step = newton_step_detailed(self.state(), &self.pt, n, &self.config.solve);
        let (state, info) = match step {
            Ok(x) => x,
            Err(LinearError::NearResonance { site, value, .. }) => {
                self.stop(StopReason::Excised {
                    stage: r,
                    reason: ExcisionReason::NearResonance,
                    detail: format!("{site}: {value:e}"),
                });
                return false;
            }
            Err(e) => {
                self.stop(StopReason::SolverFailure {
                    stage: r,
                    message: e.to_string(),
                });
                return false;
            }
        };
        self.refresh_omega(&state);
        if let Some(g) = info.green_norm {
            if g.ln() > self.green_log_bound(r) {
                self.stop(StopReason::Excised {
                    stage: r,
                    reason: ExcisionReason::GreenBound,
                    detail: format!("|T^-1| = {g:e}"),
                });
                return false;
            }
        }
        let rec = self.record(r, n, &state, info.correction, Some(gate), Some(&info), None);
        self.push(state, rec);
        true
    }

    /// Advance until the run stops.
    pub fn finish(mut self) -> (SectorField, NewtonTrace, ParamPoint) {
        while self.advance() {}
        let state = self.states.pop().expect("stage 0 exists");
        (state, self.trace, self.pt)
    }
}

/// Run the multiscale iteration. Ends at the residual target or at
/// `max_stage`; `trace.converged()` tells which.
pub fn run(config: NewtonConfig, pt: ParamPoint) -> Result<(SectorField, NewtonTrace), NewtonError> {
    let (state, trace, _) = NewtonDriver::new(config, pt)?.finish();
    match &trace.stop {
        Some(StopReason::Excised { stage, reason, detail }) => Err(NewtonError::Excised {
            stage: *stage,
            reason: *reason,
            detail: detail.clone(),
        }),
        Some(StopReason::SolverFailure { stage, message }) => Err(NewtonError::NoConvergence {
            stage: *stage,
            message: message.clone(),
        }),
        _ => Ok((state, trace)),
    }
}
