//! Coefficient rings: exact complex rationals, binary64 complex numbers,
//! truncated ħ-series, Fourier-truncated torus functions and degree-capped
//! chart polynomials.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{AddAssign, Neg, SubAssign};

use num::complex::Complex;
use num::rational::BigRational;
use num::{BigInt, Num, One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Q = BigRational;
pub type Cq = Complex<BigRational>;
pub type C64 = Complex<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalarError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cutoff mismatch: {0} vs {1}")]
    CutoffMismatch(i64, i64),
    #[error("ring mismatch: {0}")]
    RingMismatch(String),
}

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn cq(n: i64, d: i64) -> Cq {
    Cq::new(q(n, d), Q::zero())
}

pub fn cqi(re: i64, im: i64) -> Cq {
    Cq::new(Q::from_integer(re.into()), Q::from_integer(im.into()))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `num/den` rendering used by reports.
pub fn q_to_string(x: &Q) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Operations shared by the exact and the binary64 coefficient fields.
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Num
    + Neg<Output = Self>
    + for<'a> AddAssign<&'a Self>
    + for<'a> SubAssign<&'a Self>
    + Send
    + Sync
    + 'static
{
    fn from_i64(n: i64) -> Self;
    fn from_ratio(n: i64, d: i64) -> Self;
    fn from_q(x: &Q) -> Self;
    fn imag_unit() -> Self;
    fn conj(&self) -> Self;
    fn to_c64(&self) -> C64;
    fn is_exact() -> bool;
    /// Exact equality in exact mode, `|a-b| <= tol` otherwise.
    fn close(&self, other: &Self, tol: f64) -> bool;
    fn norm_f64(&self) -> f64 {
        self.to_c64().norm()
    }
    fn is_negligible(&self, tol: f64) -> bool {
        self.close(&Self::zero(), tol)
    }
    /// `Σ ±x`, with `true` meaning `+`.
    fn signed_sum<'a>(terms: impl IntoIterator<Item = (bool, &'a Self)>) -> Self {
        let mut acc = Self::zero();
        for (plus, x) in terms {
            if plus {
                acc += x;
            } else {
                acc -= x;
            }
        }
        acc
    }
}

/// Signed sum over a running common denominator, reduced once at the end.
fn q_signed_sum<'a>(terms: impl IntoIterator<Item = (bool, &'a Q)>) -> Q {
    let mut num = BigInt::zero();
    let mut den = BigInt::one();
    for (plus, x) in terms {
        if x.is_zero() {
            continue;
        }
        if *x.denom() != den {
            num *= x.denom();
            let t = x.numer() * &den;
            den *= x.denom();
            if plus {
                num += t;
            } else {
                num -= t;
            }
        } else if plus {
            num += x.numer();
        } else {
            num -= x.numer();
        }
    }
    Q::new(num, den)
}

impl Scalar for Cq {
    fn from_i64(n: i64) -> Self {
        Cq::new(Q::from_integer(n.into()), Q::zero())
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        cq(n, d)
    }
    fn from_q(x: &Q) -> Self {
        Cq::new(x.clone(), Q::zero())
    }
    fn imag_unit() -> Self {
        Cq::new(Q::zero(), Q::one())
    }
    fn conj(&self) -> Self {
        Complex::conj(self)
    }
    fn to_c64(&self) -> C64 {
        C64::new(q_to_f64(&self.re), q_to_f64(&self.im))
    }
    fn is_exact() -> bool {
        true
    }
    fn close(&self, other: &Self, _tol: f64) -> bool {
        self == other
    }
    fn signed_sum<'a>(terms: impl IntoIterator<Item = (bool, &'a Self)>) -> Self {
        let terms: Vec<(bool, &Cq)> = terms.into_iter().collect();
        Cq::new(
            q_signed_sum(terms.iter().map(|(p, z)| (*p, &z.re))),
            q_signed_sum(terms.iter().map(|(p, z)| (*p, &z.im))),
        )
    }
}

impl Scalar for C64 {
    fn from_i64(n: i64) -> Self {
        C64::new(n as f64, 0.0)
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        C64::new(n as f64 / d as f64, 0.0)
    }
    fn from_q(x: &Q) -> Self {
        C64::new(q_to_f64(x), 0.0)
    }
    fn imag_unit() -> Self {
        C64::new(0.0, 1.0)
    }
    fn conj(&self) -> Self {
        Complex::conj(self)
    }
    fn to_c64(&self) -> C64 {
        *self
    }
    fn is_exact() -> bool {
        false
    }
    fn close(&self, other: &Self, tol: f64) -> bool {
        (self - other).norm() <= tol
    }
}

pub fn cq_to_string(z: &Cq) -> String {
    if z.im.is_zero() {
        q_to_string(&z.re)
    } else {
        format!("{}+{}i", q_to_string(&z.re), q_to_string(&z.im))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarMode {
    ExactRationalComplex,
    Binary64Complex,
}

/// Runtime description of the active base field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarField {
    pub mode: ScalarMode,
    pub tol: f64,
}

impl ScalarField {
    pub fn exact() -> Self {
        Self { mode: ScalarMode::ExactRationalComplex, tol: 0.0 }
    }

    pub fn float(tol: f64) -> Self {
        Self { mode: ScalarMode::Binary64Complex, tol }
    }

    pub fn eq<S: Scalar>(&self, a: &S, b: &S) -> bool {
        match self.mode {
            ScalarMode::ExactRationalComplex => a == b,
            ScalarMode::Binary64Complex => a.close(b, self.tol),
        }
    }
}

// ---------------------------------------------------------------------------
// ħ-series

/// Truncated Laurent series `Σ_{j=-p}^{N} c_j ħ^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HbarSeries<S> {
    order: usize,
    pole: usize,
    coeffs: Vec<S>,
}

impl<S: Scalar> HbarSeries<S> {
    pub fn zero(order: usize) -> Self {
        Self { order, pole: 0, coeffs: vec![S::zero(); order + 1] }
    }

    pub fn constant(c: S, order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = c;
        s
    }

    /// `c ħ^power`; negative powers raise the pole order.
    pub fn monomial(c: S, power: i64, order: usize) -> Self {
        let pole = if power < 0 { (-power) as usize } else { 0 };
        let mut s = Self { order, pole, coeffs: vec![S::zero(); order + pole + 1] };
        if power <= order as i64 {
            s.coeffs[(power + pole as i64) as usize] = c;
        }
        s
    }

    pub fn from_coeffs(coeffs: Vec<S>, pole: usize) -> Self {
        assert!(coeffs.len() > pole, "need at least the ħ^0 slot");
        let order = coeffs.len() - pole - 1;
        Self { order, pole, coeffs }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn pole(&self) -> usize {
        self.pole
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    /// Coefficient of `ħ^j` (zero outside the stored window).
    pub fn coeff(&self, j: i64) -> S {
        let idx = j + self.pole as i64;
        if idx < 0 || j > self.order as i64 {
            S::zero()
        } else {
            self.coeffs[idx as usize].clone()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        let mut out = Self { order, pole: self.pole, coeffs: vec![S::zero(); order + self.pole + 1] };
        for j in -(self.pole as i64)..=order as i64 {
            out.coeffs[(j + self.pole as i64) as usize] = self.coeff(j);
        }
        out
    }

    fn with_pole(&self, pole: usize) -> Self {
        debug_assert!(pole >= self.pole);
        let mut out = Self { order: self.order, pole, coeffs: vec![S::zero(); self.order + pole + 1] };
        for j in -(self.pole as i64)..=self.order as i64 {
            out.coeffs[(j + pole as i64) as usize] = self.coeff(j);
        }
        out
    }

    /// Drop leading zero pole coefficients.
    pub fn normalize(mut self) -> Self {
        while self.pole > 0 && self.coeffs[0].is_zero() {
            self.coeffs.remove(0);
            self.pole -= 1;
        }
        self
    }

    pub fn add(&self, other: &Self) -> Self {
        let order = self.order.min(other.order);
        let pole = self.pole.max(other.pole);
        let a = self.truncate(order).with_pole(pole);
        let b = other.truncate(order).with_pole(pole);
        let coeffs = a.coeffs.into_iter().zip(b.coeffs).map(|(x, y)| x + y).collect();
        Self { order, pole, coeffs }.normalize()
    }

    pub fn neg(&self) -> Self {
        Self { order: self.order, pole: self.pole, coeffs: self.coeffs.iter().map(|c| -c.clone()).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &S) -> Self {
        Self {
            order: self.order,
            pole: self.pole,
            coeffs: self.coeffs.iter().map(|x| x.clone() * c.clone()).collect(),
        }
    }

    /// Multiply by `ħ^k`, keeping the truncation order.
    pub fn shift(&self, k: i64) -> Self {
        let mut out = Self::zero(self.order);
        for j in -(self.pole as i64)..=self.order as i64 {
            let c = self.coeff(j);
            if !c.is_zero() {
                out = out.add(&Self::monomial(c, j + k, self.order));
            }
        }
        out
    }

    /// `ħ ∂/∂ħ`.
    pub fn hbar_degree(&self) -> Self {
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let j = idx as i64 - self.pole as i64;
            *c = c.clone() * S::from_i64(j);
        }
        out
    }

    pub fn eval_c64(&self, hbar: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for j in -(self.pole as i64)..=self.order as i64 {
            acc += self.coeff(j).to_c64() * hbar.powi(j as i32);
        }
        acc
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> HbarSeries<T> {
        HbarSeries { order: self.order, pole: self.pole, coeffs: self.coeffs.iter().map(f).collect() }
    }
}

/// Cauchy product truncated at `ħ^{min(Na,Nb)}`; pole orders add.
pub fn series_mul<S: Scalar>(a: &HbarSeries<S>, b: &HbarSeries<S>) -> HbarSeries<S> {
    let order = a.order.min(b.order);
    let pole = a.pole + b.pole;
    let mut coeffs = vec![S::zero(); order + pole + 1];
    for (i, x) in a.coeffs.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        let pi = i as i64 - a.pole as i64;
        for (j, y) in b.coeffs.iter().enumerate() {
            let pj = j as i64 - b.pole as i64;
            let p = pi + pj;
            if p > order as i64 {
                break;
            }
            let idx = (p + pole as i64) as usize;
            coeffs[idx] = coeffs[idx].clone() + x.clone() * y.clone();
        }
    }
    HbarSeries { order, pole, coeffs }.normalize()
}

// ---------------------------------------------------------------------------
// Mixed Fourier/polynomial functions

/// Monomial `e^{i k·θ} x^e` on `Tⁿᵗ × ℝⁿᵖ`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mono {
    pub k: Vec<i64>,
    pub e: Vec<u32>,
}

impl Mono {
    pub fn one(nt: usize, np: usize) -> Self {
        Self { k: vec![0; nt], e: vec![0; np] }
    }

    pub fn degree(&self) -> u32 {
        self.e.iter().sum()
    }

    pub fn max_freq(&self) -> i64 {
        self.k.iter().map(|k| k.abs()).max().unwrap_or(0)
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        Mono {
            k: self.k.iter().zip(&other.k).map(|(a, b)| a + b).collect(),
            e: self.e.iter().zip(&other.e).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Function on `Tⁿᵗ × ℝⁿᵖ`: trigonometric in the torus angles (cutoff `K`),
/// polynomial in the chart coordinates (total degree cap `D`).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseFunction<S> {
    nt: usize,
    np: usize,
    cutoff: Option<i64>,
    cap: Option<u32>,
    terms: BTreeMap<Mono, S>,
    truncated: bool,
}

impl<S: Scalar> BaseFunction<S> {
    pub fn zero(nt: usize, np: usize, cutoff: Option<i64>, cap: Option<u32>) -> Self {
        Self { nt, np, cutoff, cap, terms: BTreeMap::new(), truncated: false }
    }

    pub fn constant(c: S, nt: usize, np: usize, cutoff: Option<i64>, cap: Option<u32>) -> Self {
        let mut f = Self::zero(nt, np, cutoff, cap);
        f.add_term(Mono::one(nt, np), c);
        f
    }

    pub fn like(&self) -> Self {
        Self::zero(self.nt, self.np, self.cutoff, self.cap)
    }

    pub fn const_like(&self, c: S) -> Self {
        Self::constant(c, self.nt, self.np, self.cutoff, self.cap)
    }

    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn np(&self) -> usize {
        self.np
    }
    pub fn cutoff(&self) -> Option<i64> {
        self.cutoff
    }
    pub fn cap(&self) -> Option<u32> {
        self.cap
    }
    pub fn truncated(&self) -> bool {
        self.truncated
    }
    pub fn terms(&self) -> &BTreeMap<Mono, S> {
        &self.terms
    }

    pub fn with_limits(mut self, cutoff: Option<i64>, cap: Option<u32>) -> Self {
        self.cutoff = cutoff;
        self.cap = cap;
        let terms = std::mem::take(&mut self.terms);
        for (m, c) in terms {
            self.add_term(m, c);
        }
        self
    }

    fn admits(&self, m: &Mono) -> (bool, bool) {
        let freq_ok = self.cutoff.map_or(true, |k| m.max_freq() <= k);
        let deg_ok = self.cap.map_or(true, |d| m.degree() <= d);
        (freq_ok, deg_ok)
    }

    /// Adds `c·m`; frequencies beyond the cutoff set the truncation flag,
    /// degrees beyond the cap are dropped silently.
    pub fn add_term(&mut self, m: Mono, c: S) {
        assert_eq!(m.k.len(), self.nt);
        assert_eq!(m.e.len(), self.np);
        if c.is_zero() {
            return;
        }
        let (freq_ok, deg_ok) = self.admits(&m);
        if !deg_ok {
            return;
        }
        if !freq_ok {
            self.truncated = true;
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().clone() + c;
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn coeff(&self, m: &Mono) -> S {
        self.terms.get(m).cloned().unwrap_or_else(S::zero)
    }

    pub fn constant_term(&self) -> S {
        self.coeff(&Mono::one(self.nt, self.np))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|m| m.degree() == 0 && m.max_freq() == 0)
    }

    /// Coordinate function: torus angles are not polynomial, so only chart
    /// coordinates qualify.
    pub fn coordinate(&self, j: usize) -> Self {
        let mut m = Mono::one(self.nt, self.np);
        m.e[j] = 1;
        let mut f = self.like();
        f.add_term(m, S::one());
        f
    }

    /// `e^{i k θ_j}`.
    pub fn wave(&self, j: usize, k: i64) -> Self {
        let mut m = Mono::one(self.nt, self.np);
        m.k[j] = k;
        let mut f = self.like();
        f.add_term(m, S::one());
        f
    }

    fn check_same(&self, other: &Self) {
        assert_eq!(self.nt, other.nt, "torus dimension mismatch");
        assert_eq!(self.np, other.np, "chart dimension mismatch");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_same(other);
        let mut out = self.clone();
        out.truncated |= other.truncated;
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &S) -> Self {
        let mut out = self.like();
        out.truncated = self.truncated;
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c.clone() * s.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_same(other);
        let mut out = self.like();
        out.truncated = self.truncated || other.truncated;
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = self.const_like(S::one());
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// ∂/∂θ_j.
    pub fn d_torus(&self, j: usize) -> Self {
        let mut out = self.like();
        out.truncated = self.truncated;
        for (m, c) in &self.terms {
            if m.k[j] != 0 {
                out.add_term(m.clone(), c.clone() * S::imag_unit() * S::from_i64(m.k[j]));
            }
        }
        out
    }

    /// ∂/∂x_j.
    pub fn d_chart(&self, j: usize) -> Self {
        let mut out = self.like();
        out.truncated = self.truncated;
        for (m, c) in &self.terms {
            if m.e[j] > 0 {
                let mut m2 = m.clone();
                m2.e[j] -= 1;
                out.add_term(m2, c.clone() * S::from_i64(m.e[j] as i64));
            }
        }
        out
    }

    /// Derivative in the combined coordinate list (torus angles first).
    pub fn d(&self, var: usize) -> Self {
        if var < self.nt {
            self.d_torus(var)
        } else {
            self.d_chart(var - self.nt)
        }
    }

    pub fn nvars(&self) -> usize {
        self.nt + self.np
    }

    pub fn eval(&self, theta: &[f64], x: &[f64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let phase: f64 = m.k.iter().zip(theta).map(|(k, t)| *k as f64 * t).sum();
            let mono: f64 = m.e.iter().zip(x).map(|(e, xv)| xv.powi(*e as i32)).product();
            acc += c.to_c64() * C64::from_polar(1.0, phase) * mono;
        }
        acc
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> BaseFunction<T> {
        let mut out = BaseFunction::zero(self.nt, self.np, self.cutoff, self.cap);
        out.truncated = self.truncated;
        for (m, c) in &self.terms {
            out.add_term(m.clone(), f(c));
        }
        out
    }

    /// Embed into a space with more chart variables appended after the
    /// existing ones.
    pub fn extend_chart(&self, extra: usize, cap: Option<u32>) -> Self {
        let mut out = BaseFunction::zero(self.nt, self.np + extra, self.cutoff, cap);
        out.truncated = self.truncated;
        for (m, c) in &self.terms {
            let mut e = m.e.clone();
            e.extend(std::iter::repeat(0).take(extra));
            out.add_term(Mono { k: m.k.clone(), e }, c.clone());
        }
        out
    }

    /// Substitute a scalar value for a chart variable (the result keeps the
    /// variable, now with degree zero).
    pub fn eval_chart_var(&self, j: usize, value: &S) -> Self {
        let mut out = self.like();
        for (m, c) in &self.terms {
            let mut m2 = m.clone();
            let e = m2.e[j];
            m2.e[j] = 0;
            let mut f = c.clone();
            for _ in 0..e {
                f = f * value.clone();
            }
            out.add_term(m2, f);
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm_f64()).fold(0.0, f64::max)
    }

    /// Inverse as a truncated geometric series on a chart base. Requires a
    /// nonzero constant term and a degree cap.
    pub fn chart_inverse(&self) -> Option<Self> {
        if self.nt > 0 {
            return if self.is_constant() && !self.constant_term().is_zero() {
                Some(self.const_like(S::one() / self.constant_term()))
            } else {
                None
            };
        }
        let c0 = self.constant_term();
        if c0.is_zero() {
            return None;
        }
        let inv0 = S::one() / c0.clone();
        if self.is_constant() {
            return Some(self.const_like(inv0));
        }
        let cap = self.cap?;
        // f = c0 (1 + u), 1/f = inv0 Σ (-u)^n
        let u = self.scale(&inv0).sub(&self.const_like(S::one()));
        let mut acc = self.const_like(S::one());
        let mut p = self.const_like(S::one());
        for _ in 0..cap {
            p = p.mul(&u.neg());
            acc = acc.add(&p);
        }
        Some(acc.scale(&inv0))
    }
}

// ---------------------------------------------------------------------------
// Torus functions

/// Trigonometric polynomial on `Tⁿ` with coefficients keyed by wave vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusFunction<S>(BaseFunction<S>);

impl<S: Scalar> TorusFunction<S> {
    pub fn zero(n: usize, cutoff: i64) -> Self {
        Self(BaseFunction::zero(n, 0, Some(cutoff), None))
    }

    pub fn constant(c: S, n: usize, cutoff: i64) -> Self {
        Self(BaseFunction::constant(c, n, 0, Some(cutoff), None))
    }

    pub fn from_modes(n: usize, cutoff: i64, modes: impl IntoIterator<Item = (Vec<i64>, S)>) -> Self {
        let mut f = Self::zero(n, cutoff);
        for (k, c) in modes {
            f.0.add_term(Mono { k, e: vec![] }, c);
        }
        f
    }

    /// `cos(k θ_j)` as a sum of two waves.
    pub fn cos_mode(n: usize, cutoff: i64, j: usize, k: i64) -> Self {
        let mut kp = vec![0; n];
        let mut km = vec![0; n];
        kp[j] = k;
        km[j] = -k;
        Self::from_modes(n, cutoff, [(kp, S::from_ratio(1, 2)), (km, S::from_ratio(1, 2))])
    }

    pub fn n(&self) -> usize {
        self.0.nt
    }

    pub fn cutoff(&self) -> i64 {
        self.0.cutoff.unwrap_or(i64::MAX)
    }

    pub fn truncated(&self) -> bool {
        self.0.truncated
    }

    pub fn coeff(&self, k: &[i64]) -> S {
        self.0.coeff(&Mono { k: k.to_vec(), e: vec![] })
    }

    pub fn modes(&self) -> impl Iterator<Item = (&Vec<i64>, &S)> {
        self.0.terms.iter().map(|(m, c)| (&m.k, c))
    }

    pub fn as_base(&self) -> &BaseFunction<S> {
        &self.0
    }

    pub fn into_base(self) -> BaseFunction<S> {
        self.0
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.add(&other.0))
    }

    pub fn scale(&self, s: &S) -> Self {
        Self(self.0.scale(s))
    }
}

/// Convolution of coefficient maps truncated to the shared cutoff.
pub fn fourier_mul<S: Scalar>(f: &TorusFunction<S>, g: &TorusFunction<S>) -> Result<TorusFunction<S>, ScalarError> {
    if f.n() != g.n() {
        return Err(ScalarError::DimensionMismatch(f.n(), g.n()));
    }
    if f.cutoff() != g.cutoff() {
        return Err(ScalarError::CutoffMismatch(f.cutoff(), g.cutoff()));
    }
    Ok(TorusFunction(f.0.mul(&g.0)))
}

/// `∫_{Tⁿ} f dθ` kept as `value × (2π)^two_pi_power` so that exact mode
/// never rounds π.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusIntegral<S> {
    pub value: S,
    pub two_pi_power: u32,
}

impl<S: Scalar> TorusIntegral<S> {
    pub fn to_c64(&self) -> C64 {
        self.value.to_c64() * (2.0 * std::f64::consts::PI).powi(self.two_pi_power as i32)
    }
}

pub fn integrate_torus<S: Scalar>(f: &TorusFunction<S>) -> TorusIntegral<S> {
    TorusIntegral { value: f.coeff(&vec![0; f.n()]), two_pi_power: f.n() as u32 }
}

// ---------------------------------------------------------------------------
// Chart polynomials

/// Polynomial in `n` variables with total degree at most `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPolynomial<S>(BaseFunction<S>);

impl<S: Scalar> ChartPolynomial<S> {
    pub fn zero(n: usize, cap: u32) -> Self {
        Self(BaseFunction::zero(0, n, None, Some(cap)))
    }

    pub fn constant(c: S, n: usize, cap: u32) -> Self {
        Self(BaseFunction::constant(c, 0, n, None, Some(cap)))
    }

    pub fn var(n: usize, cap: u32, j: usize) -> Self {
        Self(Self::zero(n, cap).0.coordinate(j))
    }

    pub fn from_terms(n: usize, cap: u32, terms: impl IntoIterator<Item = (Vec<u32>, S)>) -> Self {
        let mut p = Self::zero(n, cap);
        for (e, c) in terms {
            p.0.add_term(Mono { k: vec![], e }, c);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.0.np
    }

    pub fn cap(&self) -> u32 {
        self.0.cap.unwrap_or(u32::MAX)
    }

    pub fn coeff(&self, e: &[u32]) -> S {
        self.0.coeff(&Mono { k: vec![], e: e.to_vec() })
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &S)> {
        self.0.terms.iter().map(|(m, c)| (&m.e, c))
    }

    pub fn as_base(&self) -> &BaseFunction<S> {
        &self.0
    }

    pub fn into_base(self) -> BaseFunction<S> {
        self.0
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.sub(&other.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self(self.0.mul(&other.0))
    }

    pub fn scale(&self, s: &S) -> Self {
        Self(self.0.scale(s))
    }

    pub fn derivative(&self, j: usize) -> Self {
        Self(self.0.d_chart(j))
    }

    pub fn degree(&self) -> u32 {
        self.0.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        self.0.eval(&[], x)
    }
}
