//! Sparse real coefficient fields on Z⁴ and their convolution algebra.
//!
//! A site `k = (n1, n2, j1, j2)` carries two time modes and two space modes.
//! Fields are finitely supported maps kept in lexicographic order so that
//! every traversal, and therefore every floating-point sum, is reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entries below this magnitude are dropped from a field.
pub const PRUNE: f64 = 1e-300;

/// A lattice site `(n1, n2, j1, j2)`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct LatticeIndex {
    pub n1: i32,
    pub n2: i32,
    pub j1: i32,
    pub j2: i32,
}

impl LatticeIndex {
    pub const ORIGIN: LatticeIndex = LatticeIndex::new(0, 0, 0, 0);

    pub const fn new(n1: i32, n2: i32, j1: i32, j2: i32) -> Self {
        LatticeIndex { n1, n2, j1, j2 }
    }

    pub const fn from_parts(n: [i32; 2], j: [i32; 2]) -> Self {
        LatticeIndex::new(n[0], n[1], j[0], j[1])
    }

    pub fn n(&self) -> [i32; 2] {
        [self.n1, self.n2]
    }

    pub fn j(&self) -> [i32; 2] {
        [self.j1, self.j2]
    }

    /// `|k|∞`, the norm used in every decay statement.
    pub fn sup_norm(&self) -> u32 {
        self.n1
            .unsigned_abs()
            .max(self.n2.unsigned_abs())
            .max(self.j1.unsigned_abs())
            .max(self.j2.unsigned_abs())
    }

    pub fn in_box(&self, radius: i32) -> bool {
        self.sup_norm() as i64 <= radius as i64
    }

    pub fn to_array(&self) -> [i32; 4] {
        [self.n1, self.n2, self.j1, self.j2]
    }
}

impl fmt::Display for LatticeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n1, self.n2, self.j1, self.j2)
    }
}

impl Add for LatticeIndex {
    type Output = LatticeIndex;
    fn add(self, o: LatticeIndex) -> LatticeIndex {
        LatticeIndex::new(self.n1 + o.n1, self.n2 + o.n2, self.j1 + o.j1, self.j2 + o.j2)
    }
}

impl Sub for LatticeIndex {
    type Output = LatticeIndex;
    fn sub(self, o: LatticeIndex) -> LatticeIndex {
        LatticeIndex::new(self.n1 - o.n1, self.n2 - o.n2, self.j1 - o.j1, self.j2 - o.j2)
    }
}

impl Neg for LatticeIndex {
    type Output = LatticeIndex;
    fn neg(self) -> LatticeIndex {
        LatticeIndex::new(-self.n1, -self.n2, -self.j1, -self.j2)
    }
}

/// One Fourier sector: a finitely supported real function on Z⁴.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoeffField {
    entries: BTreeMap<LatticeIndex, f64>,
}

impl CoeffField {
    pub fn new() -> Self {
        CoeffField::default()
    }

    /// Unit mass at the origin, the convolution identity.
    pub fn unit() -> Self {
        CoeffField::from_entries([(LatticeIndex::ORIGIN, 1.0)])
    }

    pub fn from_entries<I: IntoIterator<Item = (LatticeIndex, f64)>>(it: I) -> Self {
        let mut f = CoeffField::new();
        for (k, v) in it {
            f.add_at(k, v);
        }
        f
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: LatticeIndex) -> f64 {
        self.entries.get(&k).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, k: LatticeIndex) -> bool {
        self.entries.contains_key(&k)
    }

    /// Overwrite the value at `k`; tiny values remove the entry.
    pub fn set(&mut self, k: LatticeIndex, v: f64) {
        if v.abs() < PRUNE {
            self.entries.remove(&k);
        } else {
            self.entries.insert(k, v);
        }
    }

    pub fn add_at(&mut self, k: LatticeIndex, v: f64) {
        let next = self.get(k) + v;
        self.set(k, next);
    }

    pub fn remove(&mut self, k: LatticeIndex) -> f64 {
        self.entries.remove(&k).unwrap_or(0.0)
    }

    /// Entries in lexicographic site order.
    pub fn iter(&self) -> impl Iterator<Item = (LatticeIndex, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn sites(&self) -> impl Iterator<Item = LatticeIndex> + '_ {
        self.entries.keys().copied()
    }

    /// Largest `|k|∞` over the support, 0 when empty.
    pub fn support_radius(&self) -> u32 {
        self.entries.keys().map(|k| k.sup_norm()).max().unwrap_or(0)
    }

    /// `k ↦ u(−k)`.
    pub fn reflect(&self) -> CoeffField {
        CoeffField {
            entries: self.entries.iter().map(|(k, v)| (-*k, *v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> CoeffField {
        CoeffField::from_entries(self.iter().map(|(k, v)| (k, c * v)))
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &CoeffField) -> CoeffField {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.add_at(k, c * v);
        }
        out
    }

    pub fn add(&self, other: &CoeffField) -> CoeffField {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &CoeffField) -> CoeffField {
        self.axpy(-1.0, other)
    }

    /// Keep only the entries whose site satisfies `keep`.
    pub fn filter<F: Fn(LatticeIndex) -> bool>(&self, keep: F) -> CoeffField {
        CoeffField {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(**k))
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_sup(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(a*b)(k) = Σ a(k')·b(k−k')`, by a direct double loop.
    pub fn convolve(&self, other: &CoeffField) -> CoeffField {
        let mut acc: BTreeMap<LatticeIndex, f64> = BTreeMap::new();
        for (ka, va) in &self.entries {
            for (kb, vb) in &other.entries {
                *acc.entry(*ka + *kb).or_insert(0.0) += va * vb;
            }
        }
        acc.retain(|_, v| v.abs() >= PRUNE);
        CoeffField { entries: acc }
    }
}

/// `(u*v)^{*p} * u`.
pub fn nonlinear_term(u: &CoeffField, v: &CoeffField, p: u32) -> CoeffField {
    assert!(p >= 1, "nonlinearity exponent must be positive");
    power_times(&u.convolve(v), p, u)
}

/// `w^{*e} * tail`, with `w^{*0}` the identity.
pub(crate) fn power_times(w: &CoeffField, e: u32, tail: &CoeffField) -> CoeffField {
    let mut acc = tail.clone();
    for _ in 0..e {
        acc = acc.convolve(w);
    }
    acc
}

/// Log-linear fit of `|u(k)|` against `|k|∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub c0: f64,
    /// Root-mean-square deviation of `log|u|` from the fitted line.
    pub residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("decay fit needs support on at least two |k| shells")]
    DegenerateFit,
    #[error("malformed field record: {0}")]
    Malformed(String),
}

/// Fit `log|u(k)| ≈ c0 − alpha·|k|∞` by least squares.
pub fn decay_fit(u: &CoeffField) -> Result<DecayFit, LatticeError> {
    let pts: Vec<(f64, f64)> = u
        .iter()
        .map(|(k, v)| (k.sup_norm() as f64, v.abs().ln()))
        .collect();
    line_fit(&pts)
        .map(|(slope, c0, residual)| DecayFit {
            alpha: -slope,
            c0,
            residual,
        })
        .ok_or(LatticeError::DegenerateFit)
}

/// Least-squares line `y = c0 + slope·x`; `None` when the `x` values coincide.
pub(crate) fn line_fit(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let c0 = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - c0 - slope * p.0).powi(2)).sum();
    Some((slope, c0, (ss / n).sqrt()))
}

/// Which half of the doubled lattice system a field lives in.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Plus,
    Minus,
}

impl Sector {
    pub fn sign(self) -> f64 {
        match self {
            Sector::Plus => 1.0,
            Sector::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Sector {
        match self {
            Sector::Plus => Sector::Minus,
            Sector::Minus => Sector::Plus,
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sector::Plus => "+",
            Sector::Minus => "-",
        })
    }
}

/// The pair `(u, v)` with `v(k) = u(−k)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SectorField {
    pub plus: CoeffField,
    pub minus: CoeffField,
}

impl SectorField {
    /// Build the conjugate pair from its plus sector.
    pub fn from_plus(plus: CoeffField) -> Self {
        let minus = plus.reflect();
        SectorField { plus, minus }
    }

    pub fn sector(&self, s: Sector) -> &CoeffField {
        match s {
            Sector::Plus => &self.plus,
            Sector::Minus => &self.minus,
        }
    }

    /// Largest `|minus(k) − plus(−k)|`.
    pub fn conjugacy_defect(&self) -> f64 {
        let r = self.plus.reflect();
        r.sub(&self.minus).norm_sup()
    }

    pub fn is_conjugate(&self) -> bool {
        self.minus == self.plus.reflect()
    }

    pub fn norm_l2(&self) -> f64 {
        self.plus.norm_l2().hypot(self.minus.norm_l2())
    }

    pub fn support_radius(&self) -> u32 {
        self.plus.support_radius().max(self.minus.support_radius())
    }
}

/// Serialized form of one sector: records `[n1, n2, j1, j2, value]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRecord {
    pub sector: Sector,
    pub box_radius: u32,
    pub entries: Vec<(i32, i32, i32, i32, f64)>,
}

impl FieldRecord {
    pub fn from_field(sector: Sector, u: &CoeffField) -> Self {
        FieldRecord {
            sector,
            box_radius: u.support_radius(),
            entries: u
                .iter()
                .map(|(k, v)| (k.n1, k.n2, k.j1, k.j2, v))
                .collect(),
        }
    }

    pub fn to_field(&self) -> Result<CoeffField, LatticeError> {
        let mut f = CoeffField::new();
        for &(n1, n2, j1, j2, v) in &self.entries {
            let k = LatticeIndex::new(n1, n2, j1, j2);
            if !v.is_finite() {
                return Err(LatticeError::Malformed(format!("non-finite value at {k}")));
            }
            if !k.in_box(self.box_radius as i32) {
                return Err(LatticeError::Malformed(format!(
                    "site {k} outside declared box radius {}",
                    self.box_radius
                )));
            }
            if f.contains(k) {
                return Err(LatticeError::Malformed(format!("duplicate site {k}")));
            }
            f.set(k, v);
        }
        Ok(f)
    }
}
