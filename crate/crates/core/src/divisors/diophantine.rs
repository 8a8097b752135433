use serde::{Deserialize, Serialize};

use super::params::dot;

/// Distance from `x` to the nearest point of `2πZ`.
pub fn torus_distance(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (x - tau * (x / tau).round()).abs()
}

/// Result of a Diophantine scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineMargin {
    /// `min ‖j·v‖·|j|∞^ρ` over `0 < |j|∞ ≤ range`.
    pub margin: f64,
    pub argmin: [i32; 2],
    /// `j·v` at the minimizer, before reduction mod 2π.
    pub raw: f64,
}

/// Nonzero `j` with `|j|∞ ≤ range`, one of each `±j` pair, shell by shell;
/// within a shell in descending lexicographic order.
fn half_lattice(range: i32) -> impl Iterator<Item = [i32; 2]> {
    (1..=range).flat_map(|s| {
        (0..=s).rev().flat_map(move |a| {
            (-s..=s).rev().filter_map(move |b| {
                let on_shell = a.abs().max(b.abs()) == s;
                let canonical = a > 0 || (a == 0 && b > 0);
                (on_shell && canonical).then_some([a, b])
            })
        })
    })
}

/// Smallest weighted distance `‖j·v‖_T·|j|∞^ρ`; ties keep the first `j` in
/// shell order.
pub fn diophantine_margin(v: [f64; 2], range: i32, rho: f64) -> DiophantineMargin {
    assert!(range >= 1, "range must be at least 1");
    let mut best = DiophantineMargin {
        margin: f64::INFINITY,
        argmin: [0, 0],
        raw: 0.0,
    };
    for j in half_lattice(range) {
        let raw = dot(j, v);
        let w = torus_distance(raw) * (j[0].abs().max(j[1].abs()) as f64).powf(rho);
        if w < best.margin {
            best = DiophantineMargin { margin: w, argmin: j, raw };
        }
    }
    best
}

/// Every `j` (one per `±j` pair) whose weighted distance falls below `bound`.
pub fn diophantine_violations(v: [f64; 2], range: i32, rho: f64, bound: f64) -> Vec<DiophantineMargin> {
    half_lattice(range)
        .filter_map(|j| {
            let raw = dot(j, v);
            let w = torus_distance(raw) * (j[0].abs().max(j[1].abs()) as f64).powf(rho);
            (w < bound).then_some(DiophantineMargin { margin: w, argmin: j, raw })
        })
        .collect()
}
