//! The truncated two-sector linearized operator `T = D(θ,φ) + δ^{2p}H`.
//!
//! Rows and columns are the sites of `[−N, N]⁴ × {+, −}` minus the four
//! resonant sites, ordered by `(sector, n1, n2, j1, j2)`. `H` is a block
//! convolution matrix: `H(s k, s' k') = K_{ss'}(k − k')` with
//! `K₊₊ = K₋₋ = (p+1)(u*v)^p`, `K₊₋ = p(u*v)^{p−1}*u*u` and
//! `K₋₊ = p(u*v)^{p−1}*v*v`.

mod green;
mod schur;
mod solve;

pub use green::{green_decay, GreenDecay};
pub use schur::{log_det, schur_eigenvalues, schur_effective};
pub use solve::{solve, solve_with_report, SolveConfig, SolveReport, SolveRoute};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisors::{DivisorTable, ParamPoint};
use crate::lattice::{power_times, CoeffField, LatticeIndex, Sector, SectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("divisor {value:e} at site {site} is below the resonance floor {floor:e}")]
    NearResonance { site: Site, value: f64, floor: f64 },
    #[error("linear solve did not converge (relative residual {residual:e}, coupled block of {block} sites, dense cap {cap})")]
    NoConvergence { residual: f64, block: usize, cap: usize },
    #[error("plus-sector block is singular (smallest |eigenvalue| {min_eig:e})")]
    PlusBlockSingular { min_eig: f64 },
    #[error("Green's function decay fit needs off-diagonal entries at two or more distances")]
    DegenerateFit,
}

/// A row or column label: sector and lattice site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub sector: Sector,
    pub k: LatticeIndex,
}

impl Site {
    pub fn new(sector: Sector, k: LatticeIndex) -> Self {
        Site { sector, k }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.sector, self.k)
    }
}

/// A sparse vector indexed by sites.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteVector {
    pub plus: CoeffField,
    pub minus: CoeffField,
}

impl SiteVector {
    pub fn sector(&self, s: Sector) -> &CoeffField {
        match s {
            Sector::Plus => &self.plus,
            Sector::Minus => &self.minus,
        }
    }

    fn sector_mut(&mut self, s: Sector) -> &mut CoeffField {
        match s {
            Sector::Plus => &mut self.plus,
            Sector::Minus => &mut self.minus,
        }
    }

    pub fn get(&self, site: Site) -> f64 {
        self.sector(site.sector).get(site.k)
    }

    pub fn set(&mut self, site: Site, v: f64) {
        self.sector_mut(site.sector).set(site.k, v);
    }

    pub fn add_at(&mut self, site: Site, v: f64) {
        self.sector_mut(site.sector).add_at(site.k, v);
    }

    /// Entries in site order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.plus
            .iter()
            .map(|(k, v)| (Site::new(Sector::Plus, k), v))
            .chain(self.minus.iter().map(|(k, v)| (Site::new(Sector::Minus, k), v)))
    }

    pub fn len(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_l2(&self) -> f64 {
        self.plus.norm_l2().hypot(self.minus.norm_l2())
    }

    pub fn axpy(&self, c: f64, o: &SiteVector) -> SiteVector {
        SiteVector {
            plus: self.plus.axpy(c, &o.plus),
            minus: self.minus.axpy(c, &o.minus),
        }
    }

    pub fn from_fields(f: &SectorField) -> Self {
        SiteVector {
            plus: f.plus.clone(),
            minus: f.minus.clone(),
        }
    }
}

/// The three distinct block kernels of `H`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Kernels {
    /// `(p+1)(u*v)^p`, both diagonal blocks.
    pub diag: CoeffField,
    /// `p(u*v)^{p−1}*u*u`, the `(+, −)` block.
    pub upper: CoeffField,
    /// `p(u*v)^{p−1}*v*v`, the `(−, +)` block.
    pub lower: CoeffField,
}

impl Kernels {
    pub fn from_state(state: &SectorField, p: u32) -> Self {
        assert!(p >= 1);
        let w = state.plus.convolve(&state.minus);
        let diag = power_times(&w, p, &CoeffField::unit()).scale((p + 1) as f64);
        let upper = power_times(&w, p - 1, &state.plus.convolve(&state.plus)).scale(p as f64);
        let lower = power_times(&w, p - 1, &state.minus.convolve(&state.minus)).scale(p as f64);
        Kernels { diag, upper, lower }
    }

    pub fn block(&self, row: Sector, col: Sector) -> &CoeffField {
        match (row, col) {
            (Sector::Plus, Sector::Minus) => &self.upper,
            (Sector::Minus, Sector::Plus) => &self.lower,
            _ => &self.diag,
        }
    }

    /// Same diagonal blocks, no coupling between sectors.
    pub fn decoupled(&self) -> Kernels {
        Kernels {
            diag: self.diag.clone(),
            upper: CoeffField::new(),
            lower: CoeffField::new(),
        }
    }
}

/// `T_N` at a parameter point and state.
pub struct LinearizedOp {
    radius: i32,
    pt: ParamPoint,
    theta: f64,
    phi: f64,
    delta2p: f64,
    kernels: Kernels,
    table: DivisorTable,
    /// Resonant sites inside the box, sorted.
    resonant: Vec<Site>,
}

/// Build `T_N` for `state`, which must satisfy the conjugacy constraint.
pub fn assemble(n: i32, pt: &ParamPoint, state: &SectorField, theta: f64, phi: f64) -> LinearizedOp {
    debug_assert!(state.is_conjugate(), "state violates the conjugacy constraint");
    LinearizedOp::with_kernels(n, pt, Kernels::from_state(state, pt.data.p), theta, phi)
}

impl LinearizedOp {
    pub fn with_kernels(n: i32, pt: &ParamPoint, kernels: Kernels, theta: f64, phi: f64) -> Self {
        assert!(n >= 0, "box radius must be nonnegative");
        let mut resonant: Vec<Site> = pt
            .data
            .resonant_sites()
            .iter()
            .filter(|(_, k)| k.in_box(n))
            .map(|&(s, k)| Site::new(s, k))
            .collect();
        resonant.sort();
        resonant.dedup();
        LinearizedOp {
            radius: n,
            pt: *pt,
            theta,
            phi,
            delta2p: pt.data.delta2p(),
            kernels,
            table: DivisorTable::new(pt, n, theta, phi),
            resonant,
        }
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn point(&self) -> &ParamPoint {
        &self.pt
    }

    pub fn shifts(&self) -> (f64, f64) {
        (self.theta, self.phi)
    }

    pub fn delta2p(&self) -> f64 {
        self.delta2p
    }

    pub fn kernels(&self) -> &Kernels {
        &self.kernels
    }

    fn width(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    /// Number of sites per sector before removing resonant ones.
    fn sector_volume(&self) -> usize {
        self.width().pow(4)
    }

    pub fn dim(&self) -> usize {
        2 * self.sector_volume() - self.resonant.len()
    }

    pub fn contains(&self, site: Site) -> bool {
        site.k.in_box(self.radius) && self.resonant.binary_search(&site).is_err()
    }

    /// `D_s(k)` with the operator's shifts.
    pub fn divisor(&self, site: Site) -> f64 {
        self.table.value(site.k, site.sector)
    }

    /// Smallest `|D|` over all rows.
    pub fn min_abs_divisor(&self) -> Option<(Site, f64)> {
        self.table
            .min_abs(&self.pt.data)
            .map(|(s, k, d)| (Site::new(s, k), d))
    }

    /// `T(row, col)`, or `None` when either site is not a row of `T_N`.
    pub fn entry(&self, row: Site, col: Site) -> Option<f64> {
        if !self.contains(row) || !self.contains(col) {
            return None;
        }
        let mut v = self.delta2p * self.kernels.block(row.sector, col.sector).get(row.k - col.k);
        if row == col {
            v += self.divisor(row);
        }
        Some(v)
    }

    fn lex_rank(&self, k: LatticeIndex) -> usize {
        let w = self.width();
        let r = self.radius;
        let c = |x: i32| (x + r) as usize;
        ((c(k.n1) * w + c(k.n2)) * w + c(k.j1)) * w + c(k.j2)
    }

    /// Position of `site` in the canonical ordering.
    pub fn index_of(&self, site: Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let plus_res = self.resonant.iter().filter(|s| s.sector == Sector::Plus).count();
        let base = match site.sector {
            Sector::Plus => 0,
            Sector::Minus => self.sector_volume() - plus_res,
        };
        let before = self
            .resonant
            .iter()
            .filter(|s| s.sector == site.sector && s.k < site.k)
            .count();
        Some(base + self.lex_rank(site.k) - before)
    }

    /// All rows in canonical order.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.dim());
        for s in [Sector::Plus, Sector::Minus] {
            out.extend(self.sector_sites(s));
        }
        out
    }

    pub fn sector_sites(&self, s: Sector) -> Vec<Site> {
        let r = self.radius;
        let mut out = Vec::new();
        for n1 in -r..=r {
            for n2 in -r..=r {
                for j1 in -r..=r {
                    for j2 in -r..=r {
                        let site = Site::new(s, LatticeIndex::new(n1, n2, j1, j2));
                        if self.contains(site) {
                            out.push(site);
                        }
                    }
                }
            }
        }
        out
    }

    /// Sites coupled to `site` by a nonzero off-diagonal entry.
    pub fn neighbors(&self, site: Site) -> Vec<Site> {
        if self.delta2p == 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for col in [Sector::Plus, Sector::Minus] {
            for (d, _) in self.kernels.block(site.sector, col).iter() {
                let other = Site::new(col, site.k - d);
                if other != site && self.contains(other) {
                    out.push(other);
                }
            }
        }
        out
    }

    /// The coupled block reachable from `seeds`, sorted; `None` if it
    /// exceeds `cap` sites.
    pub fn closure(&self, seeds: &[Site], cap: usize) -> Option<Vec<Site>> {
        let mut seen: BTreeSet<Site> = BTreeSet::new();
        let mut queue: VecDeque<Site> = VecDeque::new();
        for &s in seeds {
            if self.contains(s) && seen.insert(s) {
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            for t in self.neighbors(s) {
                if seen.insert(t) {
                    if seen.len() > cap {
                        return None;
                    }
                    queue.push_back(t);
                }
            }
        }
        if seen.len() > cap {
            return None;
        }
        Some(seen.into_iter().collect())
    }

    /// Connected components of the coupling graph, each sorted, in order of
    /// their first site.
    pub fn components(&self) -> Vec<Vec<Site>> {
        let sites = self.sites();
        let mut seen = vec![false; sites.len()];
        let mut out = Vec::new();
        for (i, &s) in sites.iter().enumerate() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let mut comp = vec![s];
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                for y in self.neighbors(x) {
                    let j = self.index_of(y).expect("neighbor is a row");
                    if !seen[j] {
                        seen[j] = true;
                        comp.push(y);
                        stack.push(y);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }

    /// `T x`, restricted to rows of `T_N`. `x` is taken to vanish off the rows.
    pub fn apply(&self, x: &SiteVector) -> SiteVector {
        let mut acc: BTreeMap<Site, f64> = BTreeMap::new();
        for (site, v) in x.iter() {
            if !self.contains(site) {
                continue;
            }
            *acc.entry(site).or_insert(0.0) += self.divisor(site) * v;
            if self.delta2p == 0.0 {
                continue;
            }
            for row in [Sector::Plus, Sector::Minus] {
                for (d, kv) in self.kernels.block(row, site.sector).iter() {
                    let target = Site::new(row, site.k + d);
                    if self.contains(target) {
                        *acc.entry(target).or_insert(0.0) += self.delta2p * kv * v;
                    }
                }
            }
        }
        let mut out = SiteVector::default();
        for (s, v) in acc {
            out.set(s, v);
        }
        out
    }

    /// Dense submatrix on the given sites, in the given order.
    pub fn dense_block(&self, sites: &[Site]) -> DMatrix<f64> {
        let pos: BTreeMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let n = sites.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &row) in sites.iter().enumerate() {
            m[(i, i)] += self.divisor(row);
            if self.delta2p == 0.0 {
                continue;
            }
            for col in [Sector::Plus, Sector::Minus] {
                for (d, kv) in self.kernels.block(row.sector, col).iter() {
                    if let Some(&j) = pos.get(&Site::new(col, row.k - d)) {
                        m[(i, j)] += self.delta2p * kv;
                    }
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.dense_block(&self.sites())
    }

    /// Nonzero entries as `(row, col, value)` in canonical indices.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.sites().into_iter().enumerate() {
            let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
            *cols.entry(i).or_insert(0.0) += self.divisor(row);
            if self.delta2p != 0.0 {
                for col in [Sector::Plus, Sector::Minus] {
                    for (d, kv) in self.kernels.block(row.sector, col).iter() {
                        if let Some(j) = self.index_of(Site::new(col, row.k - d)) {
                            *cols.entry(j).or_insert(0.0) += self.delta2p * kv;
                        }
                    }
                }
            }
            out.extend(cols.into_iter().filter(|(_, v)| *v != 0.0).map(|(j, v)| (i, j, v)));
        }
        out
    }

    /// Write the triplets as whitespace-separated text with a header line.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# row col value  (dim {}, N = {})", self.dim(), self.radius)?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}
