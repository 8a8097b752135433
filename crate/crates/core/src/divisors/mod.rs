//! Diagonal divisors of the lattice system, their exact integer expansion,
//! Diophantine margins and parameter excision.
//!
//! Plus sector: `D₊(k) = (n·ω+θ) + M + (j·λ+φ+m)²`.
//! Minus sector: `D₋(k) = −(n·ω+θ) + M + (j·λ+φ−m)²`, the divisor of the
//! conjugate equation, so that `D₊(k) = D₋(−k)` at `θ = φ = 0` and the minus
//! resonant sites are the reflections `(e_k, −h_k)` of the plus ones.

mod diophantine;
mod excision;
mod params;

pub use diophantine::{diophantine_margin, diophantine_violations, torus_distance, DiophantineMargin};
pub use excision::{
    excision_scan, diophantine_scan, ExcisionConfig, ExcisionReason, ExcisionVerdict, Violation,
};
pub use params::{ParamError, ParamPoint, ProblemData};
pub(crate) use params::dot;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::lattice::{LatticeIndex, Sector};

/// Divisor at site `k` of sector `s`, with auxiliary shifts `(θ, φ)`.
pub fn divisor(k: LatticeIndex, s: Sector, pt: &ParamPoint, theta: f64, phi: f64) -> f64 {
    let nw = (k.n1 as f64 * pt.omega[0] + k.n2 as f64 * pt.omega[1]) + theta;
    let jl = (k.j1 as f64 * pt.lambda[0] + k.j2 as f64 * pt.lambda[1]) + phi;
    match s {
        Sector::Plus => nw + pt.big_m + (jl + pt.m).powi(2),
        Sector::Minus => -nw + pt.big_m + (jl - pt.m).powi(2),
    }
}

/// Precomputed time and space phases over a box, giving the same values as
/// [`divisor`] bit for bit.
pub(crate) struct DivisorTable {
    radius: i32,
    nw: Vec<f64>,
    jl: Vec<f64>,
    big_m: f64,
    m: f64,
}

impl DivisorTable {
    pub fn new(pt: &ParamPoint, radius: i32, theta: f64, phi: f64) -> Self {
        let w = (2 * radius + 1) as usize;
        let mut nw = Vec::with_capacity(w * w);
        let mut jl = Vec::with_capacity(w * w);
        for a in -radius..=radius {
            for b in -radius..=radius {
                nw.push((a as f64 * pt.omega[0] + b as f64 * pt.omega[1]) + theta);
                jl.push((a as f64 * pt.lambda[0] + b as f64 * pt.lambda[1]) + phi);
            }
        }
        DivisorTable {
            radius,
            nw,
            jl,
            big_m: pt.big_m,
            m: pt.m,
        }
    }

    fn slot(&self, a: i32, b: i32) -> usize {
        let w = 2 * self.radius + 1;
        ((a + self.radius) * w + (b + self.radius)) as usize
    }

    pub fn value(&self, k: LatticeIndex, s: Sector) -> f64 {
        let nw = self.nw[self.slot(k.n1, k.n2)];
        let jl = self.jl[self.slot(k.j1, k.j2)];
        match s {
            Sector::Plus => nw + self.big_m + (jl + self.m).powi(2),
            Sector::Minus => -nw + self.big_m + (jl - self.m).powi(2),
        }
    }

    /// Visit every site of the box in both sectors, skipping resonant sites.
    pub fn for_each<F: FnMut(Sector, LatticeIndex, f64)>(&self, data: &ProblemData, mut f: F) {
        let r = self.radius;
        for s in [Sector::Plus, Sector::Minus] {
            for n1 in -r..=r {
                for n2 in -r..=r {
                    let nw = self.nw[self.slot(n1, n2)];
                    for j1 in -r..=r {
                        for j2 in -r..=r {
                            let k = LatticeIndex::new(n1, n2, j1, j2);
                            if data.is_resonant(s, k) {
                                continue;
                            }
                            let jl = self.jl[self.slot(j1, j2)];
                            let d = match s {
                                Sector::Plus => nw + self.big_m + (jl + self.m).powi(2),
                                Sector::Minus => -nw + self.big_m + (jl - self.m).powi(2),
                            };
                            f(s, k, d);
                        }
                    }
                }
            }
        }
    }

    /// Smallest `|D|` over the box minus the resonant set.
    pub fn min_abs(&self, data: &ProblemData) -> Option<(Sector, LatticeIndex, f64)> {
        let mut best: Option<(Sector, LatticeIndex, f64)> = None;
        self.for_each(data, |s, k, d| {
            if best.map_or(true, |b| d.abs() < b.2.abs()) {
                best = Some((s, k, d));
            }
        });
        best
    }
}

/// Exact expansion of a divisor at `ω = ω⁽⁰⁾`:
/// `c_l1l1·λ1² + c_l2l2·λ2² + c_l1l2·λ1λ2 + m·(c_m_lin·λ) + c_const·(m² + M)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DivisorPoly {
    pub c_l1l1: i64,
    pub c_l2l2: i64,
    pub c_l1l2: i64,
    pub c_m_lin: [i64; 2],
    pub c_const: i64,
}

impl DivisorPoly {
    pub fn is_zero(&self) -> bool {
        self.c_l1l1 == 0
            && self.c_l2l2 == 0
            && self.c_l1l2 == 0
            && self.c_m_lin == [0, 0]
            && self.c_const == 0
    }

    pub fn evaluate(&self, lambda: [f64; 2], m: f64, big_m: f64) -> f64 {
        let [l1, l2] = lambda;
        self.c_l1l1 as f64 * l1 * l1
            + self.c_l2l2 as f64 * l2 * l2
            + self.c_l1l2 as f64 * l1 * l2
            + m * (self.c_m_lin[0] as f64 * l1 + self.c_m_lin[1] as f64 * l2)
            + self.c_const as f64 * (m * m + big_m)
    }
}

/// Integer coefficients of the divisor at `k` as a polynomial in `(λ, m, M)`.
pub fn divisor_poly(k: LatticeIndex, s: Sector, h1: [i32; 2], h2: [i32; 2]) -> DivisorPoly {
    let (n1, n2) = (k.n1 as i64, k.n2 as i64);
    let (j1, j2) = (k.j1 as i64, k.j2 as i64);
    let (x, y) = (h1[0] as i64, h1[1] as i64);
    let (xp, yp) = (h2[0] as i64, h2[1] as i64);
    // σ = ±1 multiplies every ω-term; the m-linear term flips with the sector.
    let sg = match s {
        Sector::Plus => 1,
        Sector::Minus => -1,
    };
    DivisorPoly {
        c_l1l1: j1 * j1 + sg * (n1 * x * x + n2 * xp * xp),
        c_l2l2: j2 * j2 + sg * (n1 * y * y + n2 * yp * yp),
        c_l1l2: 2 * (j1 * j2 + sg * (n1 * x * y + n2 * xp * yp)),
        c_m_lin: [
            sg * 2 * (n1 * x + n2 * xp + j1),
            sg * 2 * (n1 * y + n2 * yp + j2),
        ],
        c_const: sg * (n1 + n2) + 1,
    }
}

/// Every `(sector, k)` in `[−R, R]⁴` whose divisor vanishes identically.
///
/// Plus-sector hits come first; each sector is listed in lexicographic order.
pub fn enumerate_zero_divisors(h1: [i32; 2], h2: [i32; 2], radius: i32) -> Vec<(Sector, LatticeIndex)> {
    enumerate_zero_divisors_with(h1, h2, radius, Execution::Sequential)
}

pub fn enumerate_zero_divisors_with(
    h1: [i32; 2],
    h2: [i32; 2],
    radius: i32,
    exec: Execution,
) -> Vec<(Sector, LatticeIndex)> {
    if radius < 0 {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for s in [Sector::Plus, Sector::Minus] {
        for n1 in -radius..=radius {
            rows.push((s, n1));
        }
    }
    exec.map(&rows, |&(s, n1)| {
        let mut hits = Vec::new();
        for n2 in -radius..=radius {
            // The (m² + M) coefficient must vanish first.
            if s.sign() as i32 * (n1 + n2) + 1 != 0 {
                continue;
            }
            for j1 in -radius..=radius {
                for j2 in -radius..=radius {
                    let k = LatticeIndex::new(n1, n2, j1, j2);
                    if divisor_poly(k, s, h1, h2).is_zero() {
                        hits.push((s, k));
                    }
                }
            }
        }
        hits
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(h1: [i32; 2], h2: [i32; 2]) -> ProblemData {
        ProblemData {
            h1,
            h2,
            a: [1.0, 1.0],
            delta: 0.01,
            p: 1,
        }
    }

    fn k(n1: i32, n2: i32, j1: i32, j2: i32) -> LatticeIndex {
        LatticeIndex::new(n1, n2, j1, j2)
    }

    /// Direct substitution of integer `(λ, m, M)` into the divisor with
    /// `ω = ω⁽⁰⁾`, in exact arithmetic.
    fn direct_value(kk: LatticeIndex, s: Sector, h1: [i32; 2], h2: [i32; 2], v: [i128; 4]) -> i128 {
        let [l1, l2, m, big_m] = v;
        let om = |h: [i32; 2]| {
            let t = h[0] as i128 * l1 + h[1] as i128 * l2 + m;
            t * t + big_m
        };
        let nw = kk.n1 as i128 * om(h1) + kk.n2 as i128 * om(h2);
        let jl = kk.j1 as i128 * l1 + kk.j2 as i128 * l2;
        match s {
            Sector::Plus => nw + big_m + (jl + m) * (jl + m),
            Sector::Minus => -nw + big_m + (jl - m) * (jl - m),
        }
    }

    /// Degree ≤ 2 in each variable, so vanishing on {0,1,2}⁴ means zero.
    fn oracle_is_zero(kk: LatticeIndex, s: Sector, h1: [i32; 2], h2: [i32; 2]) -> bool {
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        if direct_value(kk, s, h1, h2, [a, b, c, d]) != 0 {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    #[test]
    fn worked_divisor_value() {
        let pt = ParamPoint::unchecked([1.0, 2.0], 0.5, 1.0, data([1, 0], [0, 1])).with_omega([3.0, 4.0]);
        assert_eq!(divisor(k(1, 1, 1, 0), Sector::Plus, &pt, 0.0, 0.0), 10.25);
    }

    #[test]
    fn seed_sites_are_resonant() {
        let d = data([1, 2], [-1, 1]);
        let pt = ParamPoint::unchecked([0.7, 1.9], 0.3, 2.2, d);
        for (s, site) in d.resonant_sites() {
            assert!(divisor(site, s, &pt, 0.0, 0.0).abs() < 1e-13);
        }
    }

    #[test]
    fn polynomial_examples() {
        let p = divisor_poly(k(1, 0, 2, 0), Sector::Plus, [1, 0], [0, 1]);
        assert_eq!(p.c_l1l1, 5);
        assert!(divisor_poly(k(0, -1, 0, 1), Sector::Plus, [1, 0], [0, 1]).is_zero());
        for s in [Sector::Plus, Sector::Minus] {
            assert_eq!(divisor_poly(LatticeIndex::ORIGIN, s, [3, 1], [1, -2]).c_const, 1);
        }
    }

    #[test]
    fn polynomial_agrees_with_direct_substitution() {
        let (h1, h2) = ([2, -1], [1, 3]);
        for s in [Sector::Plus, Sector::Minus] {
            for n1 in -2..=2 {
                for j2 in -2..=2 {
                    let kk = k(n1, 1 - n1, 1, j2);
                    let poly = divisor_poly(kk, s, h1, h2);
                    for v in [[1i128, 2, 0, 1], [-3, 1, 2, 5], [0, 0, 1, 1]] {
                        let got = poly.c_l1l1 as i128 * v[0] * v[0]
                            + poly.c_l2l2 as i128 * v[1] * v[1]
                            + poly.c_l1l2 as i128 * v[0] * v[1]
                            + v[2] * (poly.c_m_lin[0] as i128 * v[0] + poly.c_m_lin[1] as i128 * v[1])
                            + poly.c_const as i128 * (v[2] * v[2] + v[3]);
                        assert_eq!(got, direct_value(kk, s, h1, h2, v));
                    }
                }
            }
        }
    }

    fn seed_four(h1: [i32; 2], h2: [i32; 2]) -> Vec<(Sector, LatticeIndex)> {
        let mut v: Vec<_> = data(h1, h2).resonant_sites().to_vec();
        v.sort();
        v
    }

    #[test]
    fn orthogonal_modes_have_only_seed_zeros() {
        let got = enumerate_zero_divisors([1, 0], [0, 1], 3);
        assert_eq!(got, seed_four([1, 0], [0, 1]));
        let got = enumerate_zero_divisors([1, 1], [1, -1], 4);
        assert_eq!(got, seed_four([1, 1], [1, -1]));
    }

    #[test]
    fn enumeration_matches_substitution_oracle() {
        for (h1, h2) in [([1, 0], [0, 1]), ([1, 0], [2, 0]), ([1, 1], [1, 1]), ([2, -1], [-1, 3])] {
            let got = enumerate_zero_divisors(h1, h2, 3);
            let mut want = Vec::new();
            for s in [Sector::Plus, Sector::Minus] {
                for n1 in -3..=3 {
                    for n2 in -3..=3 {
                        for j1 in -3..=3 {
                            for j2 in -3..=3 {
                                let kk = k(n1, n2, j1, j2);
                                if oracle_is_zero(kk, s, h1, h2) {
                                    want.push((s, kk));
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(got, want, "h1={h1:?} h2={h2:?}");
        }
    }

    #[test]
    fn distinct_parallel_modes_add_no_zeros() {
        // For h1 = a·g, h2 = b·g the extra-zero condition is n1(n1+1)(b−a)² = 0,
        // which only the seed solutions satisfy unless a = b.
        let got = enumerate_zero_divisors([1, 0], [2, 0], 3);
        assert_eq!(got, seed_four([1, 0], [2, 0]));
        let same = enumerate_zero_divisors([1, 0], [1, 0], 3);
        assert!(same.len() > 4);
        for (s, kk) in &same {
            assert!(oracle_is_zero(*kk, *s, [1, 0], [1, 0]));
        }
    }

    #[test]
    fn small_box_only_sees_its_own_sites() {
        assert!(enumerate_zero_divisors([1, 0], [0, 1], 0).is_empty());
        let par = enumerate_zero_divisors_with([2, 1], [-1, 1], 3, Execution::Parallel);
        assert_eq!(par, enumerate_zero_divisors([2, 1], [-1, 1], 3));
    }

    #[test]
    fn table_matches_pointwise_divisor() {
        let d = data([1, 0], [1, 2]);
        let pt = ParamPoint::unchecked([0.7, 1.9], 0.3, 2.2, d).with_omega([3.1, 9.4]);
        let t = DivisorTable::new(&pt, 2, 0.11, -0.4);
        let mut count = 0;
        t.for_each(&d, |s, kk, v| {
            assert_eq!(v.to_bits(), divisor(kk, s, &pt, 0.11, -0.4).to_bits());
            count += 1;
        });
        assert_eq!(count, 2 * 625 - 4);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.05f64..6.2
    }

    fn small_k() -> impl Strategy<Value = LatticeIndex> {
        (-4i32..=4, -4i32..=4, -4i32..=4, -4i32..=4).prop_map(|(a, b, c, d)| k(a, b, c, d))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn covariance_under_index_shift(
            kk in small_k(), sh in small_k(), l1 in unit(), l2 in unit(), m in unit(), bm in unit(),
            w1 in 0.0f64..40.0, w2 in 0.0f64..40.0, minus in any::<bool>()
        ) {
            let s = if minus { Sector::Minus } else { Sector::Plus };
            let pt = ParamPoint::unchecked([l1, l2], m, bm, data([1, 0], [0, 1])).with_omega([w1, w2]);
            let theta = sh.n1 as f64 * w1 + sh.n2 as f64 * w2;
            let phi = sh.j1 as f64 * l1 + sh.j2 as f64 * l2;
            let a = divisor(kk, s, &pt, theta, phi);
            let b = divisor(kk + sh, s, &pt, 0.0, 0.0);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }

        #[test]
        fn sector_identities(kk in small_k(), l1 in unit(), l2 in unit(), m in unit(), bm in unit(),
                             w1 in 0.0f64..40.0, w2 in 0.0f64..40.0) {
            let pt = ParamPoint::unchecked([l1, l2], m, bm, data([1, 0], [0, 1])).with_omega([w1, w2]);
            let dp = divisor(kk, Sector::Plus, &pt, 0.0, 0.0);
            // Reflection exchanges the sectors.
            let dm_ref = divisor(-kk, Sector::Minus, &pt, 0.0, 0.0);
            prop_assert!((dp - dm_ref).abs() <= 1e-10 * (1.0 + dp.abs()));
            // Flipping j only: the time parts cancel.
            let flip = k(kk.n1, kk.n2, -kk.j1, -kk.j2);
            let dm = divisor(flip, Sector::Minus, &pt, 0.0, 0.0);
            let jl = pt.lambda_dot(kk.j());
            let want = 2.0 * (bm + (jl + m).powi(2));
            prop_assert!((dp + dm - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }

        #[test]
        fn polynomial_matches_float(kk in small_k(), l1 in unit(), l2 in unit(), m in unit(), bm in unit(),
                                    minus in any::<bool>()) {
            let s = if minus { Sector::Minus } else { Sector::Plus };
            let (h1, h2) = ([1, -2], [3, 1]);
            let pt = ParamPoint::unchecked([l1, l2], m, bm, data(h1, h2));
            let f = divisor(kk, s, &pt, 0.0, 0.0);
            let p = divisor_poly(kk, s, h1, h2).evaluate([l1, l2], m, bm);
            let scale = 1.0 + pt.omega[0].abs().max(pt.omega[1].abs()) * 8.0;
            prop_assert!((f - p).abs() <= 1e-10 * scale.max(f.abs()));
        }

        #[test]
        fn zero_set_is_reflection_invariant(a in -2i32..=2, b in -2i32..=2, c in -2i32..=2, d in -2i32..=2) {
            let (h1, h2) = ([a, b], [c, d]);
            prop_assume!(h1 != [0, 0] && h2 != [0, 0]);
            let z = enumerate_zero_divisors(h1, h2, 3);
            let mut r: Vec<_> = z.iter().map(|(s, kk)| (s.opposite(), -*kk)).collect();
            r.sort();
            prop_assert_eq!(z, r);
        }
    }
}
