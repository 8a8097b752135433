use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{CoeffField, LatticeIndex, Sector, SectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("h1 = {h1:?} and h2 = {h2:?} are parallel; the construction needs non-parallel modes (h1 ∦ h2)")]
    Parallel { h1: [i32; 2], h2: [i32; 2] },
    #[error("mode h{0} must be nonzero")]
    ZeroMode(usize),
    #[error("delta = {0} must lie in [0, 1)")]
    Delta(f64),
    #[error("nonlinearity exponent p must be at least 1")]
    Exponent,
    #[error("amplitude a{k} = {value} must be finite and nonnegative")]
    Amplitude { k: usize, value: f64 },
    #[error("{name} = {value} must lie in (0, 2π)")]
    OutOfRange { name: &'static str, value: f64 },
}

/// Data held fixed along a run: modes, amplitudes, coupling and exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemData {
    pub h1: [i32; 2],
    pub h2: [i32; 2],
    pub a: [f64; 2],
    pub delta: f64,
    pub p: u32,
}

impl ProblemData {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.validate_modes_only()?;
        if cross(self.h1, self.h2) == 0 {
            return Err(ParamError::Parallel {
                h1: self.h1,
                h2: self.h2,
            });
        }
        Ok(())
    }

    /// All checks except non-parallelism.
    pub fn validate_modes_only(&self) -> Result<(), ParamError> {
        if self.h1 == [0, 0] {
            return Err(ParamError::ZeroMode(1));
        }
        if self.h2 == [0, 0] {
            return Err(ParamError::ZeroMode(2));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(ParamError::Delta(self.delta));
        }
        if self.p == 0 {
            return Err(ParamError::Exponent);
        }
        for (i, &a) in self.a.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(ParamError::Amplitude { k: i + 1, value: a });
            }
        }
        Ok(())
    }

    pub fn h(&self, k: usize) -> [i32; 2] {
        if k == 0 {
            self.h1
        } else {
            self.h2
        }
    }

    pub fn delta2p(&self) -> f64 {
        self.delta.powi(2 * self.p as i32)
    }

    pub fn h_diff(&self) -> [i32; 2] {
        [self.h1[0] - self.h2[0], self.h1[1] - self.h2[1]]
    }

    /// Plus-sector resonant site `(−e_k, h_k)`, `k ∈ {0, 1}`.
    pub fn seed_site(&self, k: usize) -> LatticeIndex {
        let mut n = [0, 0];
        n[k] = -1;
        LatticeIndex::from_parts(n, self.h(k))
    }

    /// The four sites removed from the P-equations, plus sector first.
    pub fn resonant_sites(&self) -> [(Sector, LatticeIndex); 4] {
        let s0 = self.seed_site(0);
        let s1 = self.seed_site(1);
        [
            (Sector::Plus, s0),
            (Sector::Plus, s1),
            (Sector::Minus, -s0),
            (Sector::Minus, -s1),
        ]
    }

    pub fn is_resonant(&self, s: Sector, k: LatticeIndex) -> bool {
        let k = match s {
            Sector::Plus => k,
            Sector::Minus => -k,
        };
        k == self.seed_site(0) || k == self.seed_site(1)
    }

    /// `u⁽⁰⁾ = a1·δ(−e1,h1) + a2·δ(−e2,h2)` and its reflection.
    pub fn seed(&self) -> SectorField {
        let mut u = CoeffField::new();
        u.add_at(self.seed_site(0), self.a[0]);
        u.add_at(self.seed_site(1), self.a[1]);
        SectorField::from_plus(u)
    }
}

pub(crate) fn cross(a: [i32; 2], b: [i32; 2]) -> i64 {
    a[0] as i64 * b[1] as i64 - a[1] as i64 * b[0] as i64
}

pub(crate) fn dot(j: [i32; 2], v: [f64; 2]) -> f64 {
    j[0] as f64 * v[0] + j[1] as f64 * v[1]
}

/// A point `(λ1, λ2, m, M)` with its fixed data and current frequencies ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPoint {
    pub lambda: [f64; 2],
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub omega: [f64; 2],
    pub data: ProblemData,
}

impl ParamPoint {
    /// Validated point with ω set to the linear frequencies.
    pub fn new(lambda: [f64; 2], m: f64, big_m: f64, data: ProblemData) -> Result<Self, ParamError> {
        data.validate()?;
        let tau = std::f64::consts::TAU;
        for (name, v) in [
            ("lambda1", lambda[0]),
            ("lambda2", lambda[1]),
            ("m", m),
            ("M", big_m),
        ] {
            if !(v > 0.0 && v < tau) {
                return Err(ParamError::OutOfRange { name, value: v });
            }
        }
        Ok(ParamPoint::unchecked(lambda, m, big_m, data))
    }

    /// No range or mode checks; used by tests and by divisor algebra on
    /// arbitrary real points.
    pub fn unchecked(lambda: [f64; 2], m: f64, big_m: f64, data: ProblemData) -> Self {
        let mut pt = ParamPoint {
            lambda,
            m,
            big_m,
            omega: [0.0; 2],
            data,
        };
        pt.omega = pt.linear_frequencies();
        pt
    }

    pub fn with_omega(mut self, omega: [f64; 2]) -> Self {
        self.omega = omega;
        self
    }

    pub fn lambda_dot(&self, j: [i32; 2]) -> f64 {
        dot(j, self.lambda)
    }

    /// `ω⁽⁰⁾_k = (h_k·λ + m)² + M`.
    pub fn linear_frequencies(&self) -> [f64; 2] {
        let f = |h: [i32; 2]| (self.lambda_dot(h) + self.m).powi(2) + self.big_m;
        [f(self.data.h1), f(self.data.h2)]
    }

    /// `(h1 − h2)·λ`, the quantity whose vanishing degenerates the Q-map.
    pub fn lambda_gap(&self) -> f64 {
        self.lambda_dot(self.data.h_diff())
    }

    /// The four parameters as an array `(λ1, λ2, m, M)`.
    pub fn coords(&self) -> [f64; 4] {
        [self.lambda[0], self.lambda[1], self.m, self.big_m]
    }

    pub fn with_coords(&self, c: [f64; 4]) -> Self {
        let mut pt = ParamPoint::unchecked([c[0], c[1]], c[2], c[3], self.data);
        pt.omega = pt.linear_frequencies();
        pt
    }
}
