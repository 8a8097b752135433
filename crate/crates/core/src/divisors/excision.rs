use serde::{Deserialize, Serialize};

use super::diophantine::{diophantine_margin, diophantine_violations, DiophantineMargin};
use super::params::{ParamPoint, ProblemData};
use super::DivisorTable;
use crate::lattice::{LatticeIndex, Sector};

/// Thresholds used to decide whether a parameter point stays in the good set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcisionConfig {
    /// Non-resonant divisors must exceed this in absolute value.
    pub divisor_threshold: f64,
    /// Lower bound on `‖j·λ‖·|j|^ρ`.
    pub lambda_bound: f64,
    /// Lower bound on `‖n·ω‖·|n|^ρ`.
    pub omega_bound: f64,
    pub rho: f64,
    /// `|(h1−h2)·λ|` at or below this is degenerate.
    pub degenerate_floor: f64,
}

impl ExcisionConfig {
    /// Defaults tied to the coupling: `2δ^{p/2}`, `1/|log δ|`, `1/|log δ|²`,
    /// `ρ = 3.5` and `|log δ|⁻¹·|h1−h2|∞^{−ρ}`. All vanish at `δ = 0`.
    pub fn for_problem(data: &ProblemData) -> Self {
        let rho = 3.5;
        if data.delta == 0.0 {
            return ExcisionConfig {
                divisor_threshold: 0.0,
                lambda_bound: 0.0,
                omega_bound: 0.0,
                rho,
                degenerate_floor: 0.0,
            };
        }
        let l = data.delta.ln().abs();
        let hd = data.h_diff();
        let hn = hd[0].abs().max(hd[1].abs()) as f64;
        ExcisionConfig {
            divisor_threshold: 2.0 * data.delta.powf(data.p as f64 / 2.0),
            lambda_bound: 1.0 / l,
            omega_bound: 1.0 / (l * l),
            rho,
            degenerate_floor: 1.0 / (l * hn.powf(rho)),
        }
    }
}

/// Why a point left the good set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcisionReason {
    DegenerateLambda,
    DivisorThreshold,
    DiophantineLambda,
    DiophantineOmega,
    NearResonance,
    GreenBound,
}

impl ExcisionReason {
    pub const ALL: [ExcisionReason; 6] = [
        ExcisionReason::DegenerateLambda,
        ExcisionReason::DivisorThreshold,
        ExcisionReason::DiophantineLambda,
        ExcisionReason::DiophantineOmega,
        ExcisionReason::NearResonance,
        ExcisionReason::GreenBound,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExcisionReason::DegenerateLambda => "degenerate_lambda",
            ExcisionReason::DivisorThreshold => "divisor_threshold",
            ExcisionReason::DiophantineLambda => "diophantine_lambda",
            ExcisionReason::DiophantineOmega => "diophantine_omega",
            ExcisionReason::NearResonance => "near_resonance",
            ExcisionReason::GreenBound => "green_bound",
        }
    }
}

impl std::fmt::Display for ExcisionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    DegenerateLambda { value: f64, floor: f64 },
    Divisor { sector: Sector, site: LatticeIndex, value: f64 },
    DiophantineLambda { j: [i32; 2], margin: f64 },
    DiophantineOmega { n: [i32; 2], margin: f64 },
}

impl Violation {
    pub fn reason(&self) -> ExcisionReason {
        match self {
            Violation::DegenerateLambda { .. } => ExcisionReason::DegenerateLambda,
            Violation::Divisor { .. } => ExcisionReason::DivisorThreshold,
            Violation::DiophantineLambda { .. } => ExcisionReason::DiophantineLambda,
            Violation::DiophantineOmega { .. } => ExcisionReason::DiophantineOmega,
        }
    }

    /// Short human-readable site description.
    pub fn site_label(&self) -> String {
        match self {
            Violation::DegenerateLambda { .. } => "h1-h2".to_string(),
            Violation::Divisor { sector, site, .. } => format!("{sector}{site}"),
            Violation::DiophantineLambda { j, .. } => format!("j=({},{})", j[0], j[1]),
            Violation::DiophantineOmega { n, .. } => format!("n=({},{})", n[0], n[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcisionVerdict {
    pub stage: u32,
    pub box_radius: i32,
    /// `None` when the divisor part was not checked.
    pub min_divisor: Option<f64>,
    pub min_divisor_site: Option<(Sector, LatticeIndex)>,
    pub lambda_margin: DiophantineMargin,
    pub omega_margin: DiophantineMargin,
    pub violations: Vec<Violation>,
}

impl ExcisionVerdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// The most basic failure, in the order of [`ExcisionReason::ALL`].
    pub fn reason(&self) -> Option<ExcisionReason> {
        self.violations.iter().map(Violation::reason).min()
    }

    /// The first violation carrying the reported reason.
    pub fn first_violation(&self) -> Option<&Violation> {
        let r = self.reason()?;
        self.violations.iter().find(|v| v.reason() == r)
    }
}

fn stage_radius(r: u32, a: u32) -> i32 {
    let n = (a as i64).checked_pow(r).expect("stage box radius overflows");
    i32::try_from(n).expect("stage box radius overflows")
}

/// Full initial-scale check at stage `r`: non-degenerate `(h1−h2)·λ`, every
/// non-resonant divisor in `[−A^r, A^r]⁴` above threshold, and both
/// Diophantine conditions up to `A^r`.
pub fn excision_scan(pt: &ParamPoint, r: u32, a: u32, cfg: &ExcisionConfig) -> ExcisionVerdict {
    assert!(r >= 1, "excision stages start at 1");
    let mut v = diophantine_scan(pt, r, a, cfg);
    let n = v.box_radius;
    let table = DivisorTable::new(pt, n, 0.0, 0.0);
    let mut min: Option<(Sector, LatticeIndex, f64)> = None;
    let mut bad = Vec::new();
    table.for_each(&pt.data, |s, k, d| {
        if min.map_or(true, |b| d.abs() < b.2.abs()) {
            min = Some((s, k, d));
        }
        if !(d.abs() > cfg.divisor_threshold) {
            bad.push(Violation::Divisor { sector: s, site: k, value: d });
        }
    });
    v.min_divisor = min.map(|m| m.2.abs());
    v.min_divisor_site = min.map(|m| (m.0, m.1));
    // Keep violations grouped by kind.
    let split = v
        .violations
        .iter()
        .position(|x| !matches!(x, Violation::DegenerateLambda { .. }))
        .unwrap_or(v.violations.len());
    v.violations.splice(split..split, bad);
    v
}

/// The Diophantine and degeneracy part of [`excision_scan`] only.
pub fn diophantine_scan(pt: &ParamPoint, r: u32, a: u32, cfg: &ExcisionConfig) -> ExcisionVerdict {
    let n = stage_radius(r, a);
    let mut violations = Vec::new();
    let gap = pt.lambda_gap();
    if gap.abs() <= cfg.degenerate_floor {
        violations.push(Violation::DegenerateLambda {
            value: gap,
            floor: cfg.degenerate_floor,
        });
    }
    for d in diophantine_violations(pt.lambda, n, cfg.rho, cfg.lambda_bound) {
        violations.push(Violation::DiophantineLambda { j: d.argmin, margin: d.margin });
    }
    for d in diophantine_violations(pt.omega, n, cfg.rho, cfg.omega_bound) {
        violations.push(Violation::DiophantineOmega { n: d.argmin, margin: d.margin });
    }
    ExcisionVerdict {
        stage: r,
        box_radius: n,
        min_divisor: None,
        min_divisor_site: None,
        lambda_margin: diophantine_margin(pt.lambda, n, cfg.rho),
        omega_margin: diophantine_margin(pt.omega, n, cfg.rho),
        violations,
    }
}
