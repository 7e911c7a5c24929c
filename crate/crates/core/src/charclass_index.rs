//! Characteristic forms on `π!A` and the characteristic side of the index
//! formula.
//!
//! The exact layer works with [`AlgebroidForm`]s over the polynomial/Fourier
//! base ring: connections, curvature, `Â` and the Chern character of
//! polynomial idempotents. The numeric layer evaluates everything pointwise on
//! `A*` (where the clutching idempotent lives, which is not polynomial) and
//! integrates on a grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num::One;
use thiserror::Error;

use crate::algebroid::{
    ce_differential, modular_cocycle, AlgebroidError, AlgebroidForm, AlgebroidPresentation, Density, PullbackAlgebroid,
};
use crate::quantize::SymbolSeries;
use crate::scalars::{BaseFunction, Scalar, C64};

#[derive(Debug, Error)]
pub enum CharClassError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not idempotent: residual {0:e}")]
    NotIdempotent(f64),
    #[error("symbol is not invertible on the test grid: min |det| = {0:e}")]
    NotElliptic(f64),
    #[error("cocycle has odd degree {0}")]
    OddDegree(usize),
    #[error("bad cutoff profile: need 0 < t0 < t1, got ({0}, {1})")]
    BadProfile(f64, f64),
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
}

// ---------------------------------------------------------------------------
// Mixed-degree forms

/// Sum of [`AlgebroidForm`]s of different degrees over one algebroid.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedForm<S> {
    rank: usize,
    zero: BaseFunction<S>,
    parts: BTreeMap<usize, AlgebroidForm<S>>,
}

impl<S: Scalar> MixedForm<S> {
    pub fn zero(rank: usize, zero: BaseFunction<S>) -> Self {
        Self { rank, zero, parts: BTreeMap::new() }
    }

    /// Degree-0 form `f`.
    pub fn function(rank: usize, f: BaseFunction<S>) -> Self {
        let zero = f.like();
        Self::from_form(rank, zero, AlgebroidForm::monomial(&[], f))
    }

    pub fn constant(rank: usize, zero: BaseFunction<S>, c: S) -> Self {
        let f = zero.const_like(c);
        Self::from_form(rank, zero, AlgebroidForm::monomial(&[], f))
    }

    pub fn from_form(rank: usize, zero: BaseFunction<S>, form: AlgebroidForm<S>) -> Self {
        let mut out = Self::zero(rank, zero);
        out.insert(form);
        out
    }

    fn like(&self) -> Self {
        Self::zero(self.rank, self.zero.clone())
    }

    fn insert(&mut self, form: AlgebroidForm<S>) {
        if form.degree > self.rank {
            return;
        }
        let d = form.degree;
        let sum = match self.parts.remove(&d) {
            Some(f) => f.add(&form),
            None => form,
        };
        if !sum.is_zero() {
            self.parts.insert(d, sum);
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn zero_fn(&self) -> &BaseFunction<S> {
        &self.zero
    }

    pub fn parts(&self) -> &BTreeMap<usize, AlgebroidForm<S>> {
        &self.parts
    }

    pub fn part(&self, d: usize) -> AlgebroidForm<S> {
        self.parts.get(&d).cloned().unwrap_or_else(|| AlgebroidForm::zero(d))
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for f in other.parts.values() {
            out.insert(f.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.like();
        for f in self.parts.values() {
            out.insert(f.neg());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &S) -> Self {
        let k = self.zero.const_like(c.clone());
        let mut out = self.like();
        for f in self.parts.values() {
            out.insert(f.scale_fn(&k));
        }
        out
    }

    pub fn wedge(&self, other: &Self) -> Self {
        let mut out = self.like();
        for (da, a) in &self.parts {
            for (db, b) in &other.parts {
                if da + db <= self.rank {
                    out.insert(a.wedge(b));
                }
            }
        }
        out
    }

    /// CE differential applied degree by degree.
    pub fn differential(&self, a: &AlgebroidPresentation<S>) -> Result<Self, CharClassError> {
        let mut out = self.like();
        for f in self.parts.values() {
            if f.degree < self.rank {
                out.insert(ce_differential(a, f)?);
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.parts.values().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    /// Pointwise value at torus angles `theta` and chart coordinates `x`.
    pub fn eval_at(&self, theta: &[f64], x: &[f64]) -> PointForm {
        let mut out = PointForm::zero(self.rank);
        for f in self.parts.values() {
            for (idx, g) in f.coeffs() {
                let mask = idx.iter().fold(0usize, |m, i| m | (1 << i));
                out.c[mask] += g.eval(theta, x);
            }
        }
        out
    }
}

/// Commutative algebra in which `Â` is expanded: even forms, or formal
/// polynomials in commuting Chern-root variables.
pub trait EvenAlgebra: Clone {
    type Coeff: Scalar;
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, other: &Self) -> Self;
    fn scaled(&self, c: &Self::Coeff) -> Self;
}

impl<S: Scalar> EvenAlgebra for MixedForm<S> {
    type Coeff = S;
    fn zero_like(&self) -> Self {
        self.like()
    }
    fn one_like(&self) -> Self {
        Self::constant(self.rank, self.zero.clone(), S::one())
    }
    fn plus(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn times(&self, other: &Self) -> Self {
        self.wedge(other)
    }
    fn scaled(&self, c: &S) -> Self {
        self.scale(c)
    }
}

/// Polynomial in commuting variables, truncated at total degree `cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormalPoly<S> {
    nvars: usize,
    cap: u32,
    terms: BTreeMap<Vec<u32>, S>,
}

impl<S: Scalar> FormalPoly<S> {
    pub fn zero(nvars: usize, cap: u32) -> Self {
        Self { nvars, cap, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, cap: u32, c: S) -> Self {
        let mut out = Self::zero(nvars, cap);
        out.add_term(vec![0; nvars], c);
        out
    }

    pub fn var(nvars: usize, cap: u32, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut out = Self::zero(nvars, cap);
        out.add_term(e, S::one());
        out
    }

    pub fn add_term(&mut self, e: Vec<u32>, c: S) {
        if e.iter().sum::<u32>() > self.cap || c.is_zero() {
            return;
        }
        let v = match self.terms.remove(&e) {
            Some(x) => x + c,
            None => c,
        };
        if !v.is_zero() {
            self.terms.insert(e, v);
        }
    }

    pub fn coeff(&self, e: &[u32]) -> S {
        self.terms.get(e).cloned().unwrap_or_else(S::zero)
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, S> {
        &self.terms
    }
}

impl<S: Scalar> EvenAlgebra for FormalPoly<S> {
    type Coeff = S;
    fn zero_like(&self) -> Self {
        Self::zero(self.nvars, self.cap)
    }
    fn one_like(&self) -> Self {
        Self::constant(self.nvars, self.cap, S::one())
    }
    fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
    fn times(&self, other: &Self) -> Self {
        let mut out = self.zero_like();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(p, q)| p + q).collect();
                out.add_term(e, ca.clone() * cb.clone());
            }
        }
        out
    }
    fn scaled(&self, c: &S) -> Self {
        let mut out = self.zero_like();
        for (e, v) in &self.terms {
            out.add_term(e.clone(), v.clone() * c.clone());
        }
        out
    }
}

fn mat_mul_alg<T: EvenAlgebra>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = a.len();
    let zero = a[0][0].zero_like();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).fold(zero.clone(), |acc, k| acc.plus(&a[i][k].times(&b[k][j])))).collect())
        .collect()
}

fn mat_trace_alg<T: EvenAlgebra>(a: &[Vec<T>]) -> T {
    (0..a.len()).fold(a[0][0].zero_like(), |acc, i| acc.plus(&a[i][i]))
}

// ---------------------------------------------------------------------------
// Â

/// Coefficients of `sinh(x/2)/(x/2)` in powers of `x²`, through `x^{2n}`.
fn sinhc_series<S: Scalar>(n: usize) -> Vec<S> {
    let mut out = vec![S::one()];
    let mut term = S::one();
    for k in 1..=n {
        term = term / S::from_i64((4 * (2 * k) * (2 * k + 1)) as i64);
        out.push(term.clone());
    }
    out
}

/// Taylor coefficients of `(x/2)/sinh(x/2)` in powers of `x²`: `1, −1/24, 7/5760, …`.
pub fn ahat_series<S: Scalar>(n: usize) -> Vec<S> {
    let s = sinhc_series::<S>(n);
    let mut inv = vec![S::one()];
    for k in 1..=n {
        let acc = (1..=k).fold(S::zero(), |acc, j| acc + s[j].clone() * inv[k - j].clone());
        inv.push(-acc);
    }
    inv
}

/// Coefficients `b_k` of `log((x/2)/sinh(x/2)) = Σ_{k≥1} b_k x^{2k}`; entry 0 is 0.
pub fn ahat_log_series<S: Scalar>(n: usize) -> Vec<S> {
    // log s from k l_k = k s_k − Σ_{j<k} j l_j s_{k−j}, then negate
    let s = sinhc_series::<S>(n);
    let mut l = vec![S::zero()];
    for k in 1..=n {
        let mut acc = S::from_i64(k as i64) * s[k].clone();
        for j in 1..k {
            acc = acc - S::from_i64(j as i64) * l[j].clone() * s[k - j].clone();
        }
        l.push(acc / S::from_i64(k as i64));
    }
    l.into_iter().map(|v| -v).collect()
}

/// `exp(½ tr log((R/2)/sinh(R/2)))` with power sums `tr R^{2k}` for `k ≤ terms`.
///
/// On a real `2r × 2r` curvature with eigenvalues `±x_i` this is
/// `Π (x_i/2)/sinh(x_i/2)`.
pub fn ahat_of<T: EvenAlgebra>(r: &[Vec<T>], terms: usize) -> T {
    let one = r[0][0].one_like();
    if terms == 0 {
        return one;
    }
    let b = ahat_log_series::<T::Coeff>(terms);
    let half = T::Coeff::from_ratio(1, 2);
    let r2 = mat_mul_alg(r, r);
    let mut power = r2.clone();
    let mut log = one.zero_like();
    for (k, bk) in b.iter().enumerate().skip(1) {
        if k > 1 {
            power = mat_mul_alg(&power, &r2);
        }
        log = log.plus(&mat_trace_alg(&power).scaled(&(bk.clone() * half.clone())));
    }
    let mut out = one.clone();
    let mut term = one;
    for n in 1..=terms {
        term = term.times(&log).scaled(&(T::Coeff::one() / T::Coeff::from_i64(n as i64)));
        out = out.plus(&term);
    }
    out
}

// ---------------------------------------------------------------------------
// Connections and curvature

/// `∇_{e_a} e_b = Σ_c Γ^c_{ab} e_c`, stored as `gamma[a][b][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebroidConnection<S> {
    pub algebroid: AlgebroidPresentation<S>,
    pub gamma: Vec<Vec<Vec<BaseFunction<S>>>>,
}

/// Matrix of 2-forms: `matrix[d][c](e_a, e_b)` is the `e_d` component of `R(e_a, e_b) e_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureForm<S> {
    pub matrix: Vec<Vec<AlgebroidForm<S>>>,
}

impl<S: Scalar> LieAlgebroidConnection<S> {
    pub fn new(algebroid: AlgebroidPresentation<S>, gamma: Vec<Vec<Vec<BaseFunction<S>>>>) -> Result<Self, CharClassError> {
        let n = algebroid.rank;
        if gamma.len() != n || gamma.iter().any(|g| g.len() != n || g.iter().any(|h| h.len() != n)) {
            return Err(CharClassError::ShapeMismatch(format!("Γ must be {n}×{n}×{n}")));
        }
        Ok(Self { algebroid, gamma })
    }

    /// The connection with `Γ = 0` in the given frame.
    pub fn trivial(algebroid: AlgebroidPresentation<S>) -> Self {
        let n = algebroid.rank;
        let z = algebroid.zero_fn();
        Self { gamma: vec![vec![vec![z; n]; n]; n], algebroid }
    }

    pub fn rank(&self) -> usize {
        self.algebroid.rank
    }

    /// `∇_X Y` for sections given by frame components.
    pub fn covariant(&self, x: &[BaseFunction<S>], y: &[BaseFunction<S>]) -> Vec<BaseFunction<S>> {
        let n = self.rank();
        let mut out = vec![self.algebroid.zero_fn(); n];
        for a in 0..n {
            if x[a].is_zero() {
                continue;
            }
            for c in 0..n {
                let mut v = self.algebroid.anchor_apply(a, &y[c]);
                for b in 0..n {
                    v = v.add(&y[b].mul(&self.gamma[a][b][c]));
                }
                out[c] = out[c].add(&x[a].mul(&v));
            }
        }
        out
    }

    /// `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_{[X,Y]}` on frame sections.
    pub fn curvature(&self) -> CurvatureForm<S> {
        let n = self.rank();
        let e = |i: usize| self.algebroid.basis_section(i);
        let mut matrix = vec![vec![AlgebroidForm::zero(2); n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let ab = self.algebroid.bracket(&e(a), &e(b));
                for c in 0..n {
                    let t1 = self.covariant(&e(a), &self.covariant(&e(b), &e(c)));
                    let t2 = self.covariant(&e(b), &self.covariant(&e(a), &e(c)));
                    let t3 = self.covariant(&ab, &e(c));
                    for d in 0..n {
                        let v = t1[d].sub(&t2[d]).sub(&t3[d]);
                        if !v.is_zero() {
                            matrix[d][c].add_at(&[a, b], v);
                        }
                    }
                }
            }
        }
        CurvatureForm { matrix }
    }

    /// Largest coefficient of `∇Θ`; zero for symplectic connections.
    pub fn symplectic_residual(&self, theta: &AlgebroidForm<S>) -> f64 {
        let n = self.rank();
        let z = self.algebroid.zero_fn();
        let e = |i: usize| self.algebroid.basis_section(i);
        let th = |u: &[BaseFunction<S>], v: &[BaseFunction<S>]| {
            let mut acc = z.clone();
            for i in 0..n {
                for j in 0..n {
                    if !u[i].is_zero() && !v[j].is_zero() {
                        acc = acc.add(&u[i].mul(&v[j]).mul(&theta.eval(&[i, j], &z)));
                    }
                }
            }
            acc
        };
        let mut worst: f64 = 0.0;
        for x in 0..n {
            for y in 0..n {
                for w in 0..n {
                    let v = self
                        .algebroid
                        .anchor_apply(x, &theta.eval(&[y, w], &z))
                        .sub(&th(&self.covariant(&e(x), &e(y)), &e(w)))
                        .sub(&th(&e(y), &self.covariant(&e(x), &e(w))));
                    worst = worst.max(v.max_abs_coeff());
                }
            }
        }
        worst
    }

    /// Largest coefficient of `[ξ, ∇_X Y] − ∇_{[ξ,X]} Y − ∇_X [ξ,Y]` over frame
    /// sections, with `ξ` the Euler section; zero for homogeneous connections.
    pub fn homogeneity_residual(&self, euler: &[BaseFunction<S>]) -> f64 {
        let n = self.rank();
        let e = |i: usize| self.algebroid.basis_section(i);
        let br = |u: &[BaseFunction<S>], v: &[BaseFunction<S>]| self.algebroid.bracket(u, v);
        let mut worst: f64 = 0.0;
        for x in 0..n {
            for y in 0..n {
                let lhs = br(euler, &self.covariant(&e(x), &e(y)));
                let r1 = self.covariant(&br(euler, &e(x)), &e(y));
                let r2 = self.covariant(&e(x), &br(euler, &e(y)));
                for c in 0..n {
                    worst = worst.max(lhs[c].sub(&r1[c]).sub(&r2[c]).max_abs_coeff());
                }
            }
        }
        worst
    }
}

impl<S: Scalar> CurvatureForm<S> {
    pub fn size(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().flatten().all(|f| f.is_zero())
    }

    fn as_mixed(&self, rank: usize, zero: &BaseFunction<S>) -> Vec<Vec<MixedForm<S>>> {
        self.matrix
            .iter()
            .map(|row| row.iter().map(|f| MixedForm::from_form(rank, zero.clone(), f.clone())).collect())
            .collect()
    }
}

/// `Â` of a curvature together with a flag for dropped degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AhatForm<S> {
    pub form: MixedForm<S>,
    /// Set when `cap` is below the top form degree, so components above `cap`
    /// were not computed.
    pub truncated: bool,
}

/// `Â(R)` through form degree `cap`.
pub fn ahat_form<S: Scalar>(r: &CurvatureForm<S>, a: &AlgebroidPresentation<S>, cap: usize) -> AhatForm<S> {
    let rank = a.rank;
    let zero = a.zero_fn();
    let truncated = cap < rank;
    let top = cap.min(rank);
    if r.size() == 0 {
        return AhatForm { form: MixedForm::constant(rank, zero, S::one()), truncated };
    }
    let m = r.as_mixed(rank, &zero);
    let mut form = ahat_of(&m, top / 4);
    form.parts.retain(|d, _| *d <= top);
    AhatForm { form, truncated }
}

// ---------------------------------------------------------------------------
// Chern character of polynomial idempotents

fn check_idempotent<S: Scalar>(e: &[Vec<BaseFunction<S>>], tol: f64) -> Result<(), CharClassError> {
    let n = e.len();
    if e.iter().any(|row| row.len() != n) {
        return Err(CharClassError::ShapeMismatch("idempotent must be square".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut v = e[i][j].neg();
            for k in 0..n {
                v = v.add(&e[i][k].mul(&e[k][j]));
            }
            worst = worst.max(v.max_abs_coeff());
        }
    }
    if worst > tol || (S::is_exact() && worst > 0.0) {
        return Err(CharClassError::NotIdempotent(worst));
    }
    Ok(())
}

/// `ch(e) = Σ_k (1/k!) tr(e (de)^{2k})` with `d` the CE differential of `a`.
/// The Chern–Weil weights `(−1)^k/(2π√−1)^k` are applied by [`index_rhs`].
pub fn chern_character_idem<S: Scalar>(
    a: &AlgebroidPresentation<S>,
    e: &[Vec<BaseFunction<S>>],
    tol: f64,
) -> Result<MixedForm<S>, CharClassError> {
    check_idempotent(e, tol)?;
    let rank = a.rank;
    let zero = a.zero_fn();
    let n = e.len();
    let em: Vec<Vec<MixedForm<S>>> = e.iter().map(|row| row.iter().map(|f| MixedForm::function(rank, f.clone())).collect()).collect();
    let mut de = vec![vec![MixedForm::zero(rank, zero.clone()); n]; n];
    for i in 0..n {
        for j in 0..n {
            de[i][j] = em[i][j].differential(a)?;
        }
    }
    let de2 = mat_mul_alg(&de, &de);
    let mut out = MixedForm::zero(rank, zero.clone());
    let mut acc = em.clone();
    let mut fact = S::one();
    for k in 0..=rank / 2 {
        if k > 0 {
            acc = mat_mul_alg(&acc, &de2);
            fact = fact * S::from_i64(k as i64);
        }
        out = out.add(&mat_trace_alg(&acc).scale(&(S::one() / fact.clone())));
    }
    Ok(out)
}

/// Principal part (ħ⁰) of a symbol as a function on `A*`, in the base ring of `π!A`.
pub fn symbol_to_pullback<S: Scalar>(sym: &SymbolSeries<S>, pb: &PullbackAlgebroid<S>) -> BaseFunction<S> {
    let r = pb.rank();
    let np = pb.source.base.np();
    let zero = pb.algebroid.zero_fn();
    let mut out = zero.clone();
    for ((h, e), f) in sym.terms() {
        if *h > 0 {
            continue;
        }
        let mut term = f.extend_chart(r, zero.cap());
        for (j, p) in e.iter().enumerate() {
            term = term.mul(&zero.coordinate(np + j).pow(*p));
        }
        out = out.add(&term);
    }
    out
}

/// `Ω_{π!A} = Θ^r ⊗ Ω` is invariant iff the modular cocycle of `π!A` for the
/// frame density `Ω / (Θ^r/r!)(e_1, …, e_{2r})` vanishes. Returns that cocycle.
pub fn volume_invariance<S: Scalar>(pb: &PullbackAlgebroid<S>, omega: &BaseFunction<S>) -> Result<AlgebroidForm<S>, CharClassError> {
    let r = pb.rank();
    let zero = pb.algebroid.zero_fn();
    let top = theta_top(pb);
    let inv = top
        .chart_inverse()
        .ok_or_else(|| CharClassError::ShapeMismatch("Θ^r is not invertible in the base ring".into()))?;
    let w = omega.extend_chart(r, zero.cap()).mul(&inv);
    Ok(modular_cocycle(&pb.algebroid, &Density::Function(w))?)
}

/// `(Θ^r / r!)(e_1, …, e_{2r})`.
pub fn theta_top<S: Scalar>(pb: &PullbackAlgebroid<S>) -> BaseFunction<S> {
    let r = pb.rank();
    let n = 2 * r;
    let zero = pb.algebroid.zero_fn();
    let th = MixedForm::from_form(n, zero.clone(), pb.theta.clone());
    let mut acc = MixedForm::constant(n, zero.clone(), S::one());
    let mut fact = S::one();
    for k in 1..=r {
        acc = acc.wedge(&th);
        fact = fact * S::from_i64(k as i64);
    }
    let idx: Vec<usize> = (0..n).collect();
    acc.part(n).eval(&idx, &zero).scale(&(S::one() / fact))
}

// ---------------------------------------------------------------------------
// Pointwise exterior algebra

/// Element of `∧(ℂ^n)*` at a point; coefficient `c[mask]` multiplies the
/// increasing wedge of the generators in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForm {
    n: usize,
    pub c: Vec<C64>,
}

fn mask_sign(i: usize, j: usize) -> f64 {
    // pairs (a in i, b in j) with a > b
    let mut swaps = 0;
    let mut jj = j;
    while jj != 0 {
        let b = jj.trailing_zeros();
        swaps += (i >> (b + 1)).count_ones();
        jj &= jj - 1;
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl PointForm {
    pub fn zero(n: usize) -> Self {
        Self { n, c: vec![C64::new(0.0, 0.0); 1 << n] }
    }

    pub fn scalar(n: usize, v: C64) -> Self {
        let mut out = Self::zero(n);
        out.c[0] = v;
        out
    }

    pub fn generator(n: usize, i: usize) -> Self {
        let mut out = Self::zero(n);
        out.c[1 << i] = C64::new(1.0, 0.0);
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { n: self.n, c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { n: self.n, c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { n: self.n, c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn wedge(&self, o: &Self) -> Self {
        let mut out = Self::zero(self.n);
        for (i, a) in self.c.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            for (j, b) in o.c.iter().enumerate() {
                if i & j != 0 || b.norm_sqr() == 0.0 {
                    continue;
                }
                out.c[i | j] += a * b * mask_sign(i, j);
            }
        }
        out
    }

    /// Component of form degree `d`.
    pub fn degree_part(&self, d: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (m, v) in self.c.iter().enumerate() {
            if m.count_ones() as usize == d {
                out.c[m] = *v;
            }
        }
        out
    }

    /// Coefficient of `e^1 ∧ … ∧ e^n`.
    pub fn top(&self) -> C64 {
        self.c[(1 << self.n) - 1]
    }

    pub fn norm(&self) -> f64 {
        self.c.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

type FormMatrix = Vec<Vec<PointForm>>;

fn fm_mul(a: &FormMatrix, b: &FormMatrix) -> FormMatrix {
    let n = a.len();
    let dim = a[0][0].dim();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).fold(PointForm::zero(dim), |acc, k| acc.add(&a[i][k].wedge(&b[k][j])))).collect())
        .collect()
}

fn fm_trace(a: &FormMatrix) -> PointForm {
    (0..a.len()).fold(PointForm::zero(a[0][0].dim()), |acc, i| acc.add(&a[i][i]))
}

// ---------------------------------------------------------------------------
// Elliptic symbols and the clutching idempotent

/// Sampling used for the invertibility witness: base points times unit
/// covectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessGrid {
    pub torus_points: usize,
    pub chart_points: usize,
    pub chart_half_width: f64,
    pub directions: usize,
}

impl Default for WitnessGrid {
    fn default() -> Self {
        Self { torus_points: 8, chart_points: 9, chart_half_width: 4.0, directions: 16 }
    }
}

/// Square matrix symbol `σ(x, ξ)`, evaluated at `ħ = 0`.
#[derive(Debug, Clone)]
pub struct EllipticSymbolData {
    entries: Vec<Vec<SymbolSeries<C64>>>,
    grads: Vec<Vec<Vec<SymbolSeries<C64>>>>,
    nt: usize,
    np: usize,
    rank: usize,
    /// Smallest `|det σ|` seen on the witness grid.
    pub witness: f64,
}

fn grid_1d(n: usize, half: f64) -> Vec<f64> {
    let h = 2.0 * half / n as f64;
    (0..n).map(|i| -half + (i as f64 + 0.5) * h).collect()
}

fn torus_1d(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

/// All tuples from per-axis point lists.
fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for ax in axes {
        let mut next = Vec::with_capacity(out.len() * ax.len());
        for p in &out {
            for v in ax {
                let mut q = p.clone();
                q.push(*v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn unit_directions(r: usize, count: usize) -> Vec<Vec<f64>> {
    match r {
        0 => vec![vec![]],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(4))
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count.max(4) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut out = vec![];
            for i in 0..r {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; r];
                    v[i] = s;
                    out.push(v);
                }
            }
            for signs in 0..(1usize << r) {
                let v = (0..r).map(|i| if signs & (1 << i) != 0 { -1.0 } else { 1.0 } / (r as f64).sqrt()).collect();
                out.push(v);
            }
            out
        }
    }
}

impl EllipticSymbolData {
    /// Checks invertibility on `grid` (base points × unit covectors).
    pub fn new(entries: Vec<Vec<SymbolSeries<C64>>>, grid: &WitnessGrid) -> Result<Self, CharClassError> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|row| row.len() != n) {
            return Err(CharClassError::ShapeMismatch("symbol must be a nonempty square matrix".into()));
        }
        let alg = entries[0][0].algebroid().clone();
        let (nt, np, rank) = (alg.base.nt(), alg.base.np(), alg.rank);
        let nvars = nt + np + rank;
        let grads = (0..nvars)
            .map(|v| entries.iter().map(|row| row.iter().map(|s| s.derivative(v)).collect()).collect())
            .collect();
        let mut out = Self { entries, grads, nt, np, rank, witness: f64::INFINITY };
        let mut axes: Vec<Vec<f64>> = (0..nt).map(|_| torus_1d(grid.torus_points)).collect();
        axes.extend((0..np).map(|_| grid_1d(grid.chart_points, grid.chart_half_width)));
        let dirs = unit_directions(rank, grid.directions);
        let mut worst = f64::INFINITY;
        for p in cartesian(&axes) {
            for d in &dirs {
                let m = out.eval(&p[..nt], &p[nt..], d);
                worst = worst.min(m.determinant().norm());
            }
        }
        if worst.is_nan() || worst <= 1e-12 {
            return Err(CharClassError::NotElliptic(worst));
        }
        out.witness = worst;
        Ok(out)
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn eval(&self, theta: &[f64], x: &[f64], xi: &[f64]) -> DMatrix<C64> {
        let n = self.size();
        let h = C64::new(0.0, 0.0);
        DMatrix::from_fn(n, n, |i, j| self.entries[i][j].eval(theta, x, xi, h))
    }

    /// `∂σ/∂v` for `v` over torus, chart and fiber coordinates in that order.
    pub fn eval_derivative(&self, v: usize, theta: &[f64], x: &[f64], xi: &[f64]) -> DMatrix<C64> {
        let n = self.size();
        let h = C64::new(0.0, 0.0);
        DMatrix::from_fn(n, n, |i, j| self.grads[v][i][j].eval(theta, x, xi, h))
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        (&p[..self.nt], &p[self.nt..self.nt + self.np], &p[self.nt + self.np..])
    }
}

/// Smooth step on `q = 1/tr((σ*σ)^{-1})`: `χ = 0` for `q ≤ t0`, `χ = 1` for `q ≥ t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffProfile {
    pub t0: f64,
    pub t1: f64,
}

fn bump_half(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

fn bump_half_d(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp() / (u * u)
    }
}

/// `C^∞` step from 0 at `u ≤ 0` to 1 at `u ≥ 1`, and its derivative.
pub fn smooth_step(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, b) = (bump_half(u), bump_half(1.0 - u));
    let (da, db) = (bump_half_d(u), -bump_half_d(1.0 - u));
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

impl CutoffProfile {
    pub fn new(t0: f64, t1: f64) -> Result<Self, CharClassError> {
        if !(t0 > 0.0 && t1 > t0) {
            return Err(CharClassError::BadProfile(t0, t1));
        }
        Ok(Self { t0, t1 })
    }

    /// `(χ(q), χ'(q))`.
    pub fn chi(&self, q: f64) -> (f64, f64) {
        let (v, d) = smooth_step((q - self.t0) / (self.t1 - self.t0));
        (v, d / (self.t1 - self.t0))
    }
}

/// Clutching idempotent of an elliptic symbol.
///
/// With `a = χ σ^{-1}` and `s = 1 − χ`,
/// `P = [[s², s(1+s)a], [sσ, 1 − s²]]` and `e∞ = diag(0, 1)`. `P` equals
/// `e∞` wherever `χ = 1`, so `ch(P) − ch(e∞)` has compact support.
#[derive(Debug, Clone)]
pub struct DifferenceIdempotent {
    pub sigma: EllipticSymbolData,
    pub profile: CutoffProfile,
}

/// Value and first derivatives of the clutching idempotent at a point.
#[derive(Debug, Clone)]
pub struct IdempotentJet {
    pub p: DMatrix<C64>,
    pub dp: Vec<DMatrix<C64>>,
    /// `χ` at the point.
    pub chi: f64,
}

pub fn difference_idempotent(sigma: EllipticSymbolData, profile: CutoffProfile) -> DifferenceIdempotent {
    DifferenceIdempotent { sigma, profile }
}

impl DifferenceIdempotent {
    /// Block size of `P`.
    pub fn size(&self) -> usize {
        2 * self.sigma.size()
    }

    pub fn e_inf(&self) -> DMatrix<C64> {
        let n = self.sigma.size();
        DMatrix::from_fn(2 * n, 2 * n, |i, j| if i == j && i >= n { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// `P` and `∂P` at `p = (θ, x, ξ)`.
    pub fn jet(&self, p: &[f64]) -> IdempotentJet {
        let n = self.sigma.size();
        let (th, x, xi) = self.sigma.split(p);
        let sig = self.sigma.eval(th, x, xi);
        let nv = p.len();
        let dsig: Vec<DMatrix<C64>> = (0..nv).map(|v| self.sigma.eval_derivative(v, th, x, xi)).collect();
        let m = sig.adjoint() * &sig;
        let minv = m.clone().try_inverse();
        let sinv = sig.clone().try_inverse();
        let (q, minv, sinv) = match (minv, sinv) {
            (Some(mi), Some(si)) => {
                let tr = mi.trace().re;
                if tr > 0.0 && tr.is_finite() {
                    (1.0 / tr, mi, si)
                } else {
                    (0.0, mi, si)
                }
            }
            _ => (0.0, DMatrix::zeros(n, n), DMatrix::zeros(n, n)),
        };
        let (chi, dchi_dq) = if q <= self.profile.t0 { (0.0, 0.0) } else { self.profile.chi(q) };
        let s = 1.0 - chi;
        let one = DMatrix::<C64>::identity(n, n);
        let c = |v: f64| C64::new(v, 0.0);
        let a = &sinv * c(chi);
        let mut p_mat = DMatrix::zeros(2 * n, 2 * n);
        p_mat.view_mut((0, 0), (n, n)).copy_from(&(&one * c(s * s)));
        p_mat.view_mut((0, n), (n, n)).copy_from(&(&a * c(s * (1.0 + s))));
        p_mat.view_mut((n, 0), (n, n)).copy_from(&(&sig * c(s)));
        p_mat.view_mut((n, n), (n, n)).copy_from(&(&one * c(1.0 - s * s)));
        let mut dp = Vec::with_capacity(nv);
        for ds in &dsig {
            let (dchi, da) = if chi > 0.0 {
                let dm = ds.adjoint() * &sig + sig.adjoint() * ds;
                let dq = q * q * (&minv * &dm * &minv).trace().re;
                let dchi = dchi_dq * dq;
                let da = &sinv * c(dchi) - &sinv * ds * &sinv * c(chi);
                (dchi, da)
            } else {
                (0.0, DMatrix::zeros(n, n))
            };
            let dsv = -dchi;
            let mut d = DMatrix::zeros(2 * n, 2 * n);
            d.view_mut((0, 0), (n, n)).copy_from(&(&one * c(2.0 * s * dsv)));
            d.view_mut((0, n), (n, n)).copy_from(&(&a * c(dsv * (1.0 + 2.0 * s)) + &da * c(s * (1.0 + s))));
            d.view_mut((n, 0), (n, n)).copy_from(&(&sig * c(dsv) + ds * c(s)));
            d.view_mut((n, n), (n, n)).copy_from(&(&one * c(-2.0 * s * dsv)));
            dp.push(d);
        }
        IdempotentJet { p: p_mat, dp, chi }
    }

    /// `‖P² − P‖` at a point.
    pub fn idempotent_residual(&self, p: &[f64]) -> f64 {
        let j = self.jet(p);
        (&j.p * &j.p - &j.p).norm()
    }
}

// ---------------------------------------------------------------------------
// index_rhs

/// Tensor grid on `A*`: periodic trapezoid in torus angles, midpoint rule on
/// `[−L, L]` in every chart and fiber coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub torus_points: usize,
    pub chart_points: usize,
    pub chart_half_width: f64,
}

/// The cocycle `α`, either on `A` (pulled back by `π*`) or already on `π!A`.
#[derive(Debug, Clone, PartialEq)]
pub enum Cocycle {
    Source(AlgebroidForm<C64>),
    Pulled(AlgebroidForm<C64>),
}

impl Cocycle {
    pub fn one(a: &AlgebroidPresentation<C64>) -> Self {
        Cocycle::Source(AlgebroidForm::monomial(&[], a.base.constant(C64::new(1.0, 0.0))))
    }

    pub fn degree(&self) -> usize {
        match self {
            Cocycle::Source(f) | Cocycle::Pulled(f) => f.degree,
        }
    }
}

/// Contribution of one `(deg α, deg Â, deg ch)` combination.
#[derive(Debug, Clone, PartialEq)]
pub struct TermBreakdown {
    pub alpha_degree: usize,
    pub ahat_degree: usize,
    pub ch_degree: usize,
    pub value: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRhsReport {
    pub value: C64,
    pub breakdown: Vec<TermBreakdown>,
    pub warning: Option<String>,
    /// Human-readable statement of the normalization used.
    pub normalization: String,
    pub ahat_truncated: bool,
}

/// Orientation of the top-degree pairing: `⟨β, Ω_{π!A}⟩` is
/// `(−1)^r · β(e_1, …, e_{2r}) · Ω / (Θ^r/r!)(e_1, …, e_{2r})` against
/// coordinate Lebesgue measure on `A*`, with the frame ordered as lifts then
/// fiber derivatives. The sign makes the Bott symbols `x + iξ` (rank 1) and
/// `[[z1, −z̄2], [z2, z̄1]]` (rank 2) integrate to `+1`.
pub fn orientation_sign(r: usize) -> f64 {
    if r % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub const NORMALIZATION: &str = "(2πi)^{-k} ∫ ⟨π*α ∧ Â ∧ ch, Ω⟩, ch = Σ_j (−1)^j/((2πi)^j j!) tr(P (dP)^{2j}) − ch(e∞)";

/// `(2π√−1)^{−k} ∫_{A*} ⟨π*α ∧ Â(π!A) ∧ ch(σ), Ω_{π!A}⟩` for `α` of degree `2k`.
pub fn index_rhs(
    pb: &PullbackAlgebroid<C64>,
    alpha: &Cocycle,
    idem: &DifferenceIdempotent,
    conn: &LieAlgebroidConnection<C64>,
    omega: &BaseFunction<C64>,
    grid: &QuadratureGrid,
) -> Result<IndexRhsReport, CharClassError> {
    let r = pb.rank();
    let n = 2 * r;
    let deg = alpha.degree();
    if deg % 2 == 1 {
        return Err(CharClassError::OddDegree(deg));
    }
    if conn.rank() != n {
        return Err(CharClassError::ShapeMismatch(format!("connection has rank {}, π!A has rank {n}", conn.rank())));
    }
    if idem.sigma.rank() != r {
        return Err(CharClassError::ShapeMismatch("symbol lives over a different algebroid".into()));
    }
    let k = deg / 2;
    let zero = pb.algebroid.zero_fn();
    let cap = zero.cap();
    let alpha_pulled = match alpha {
        Cocycle::Source(f) => {
            let mut g = AlgebroidForm::zero(f.degree);
            for (idx, c) in f.coeffs() {
                g.add_at(idx, c.extend_chart(r, cap));
            }
            g
        }
        Cocycle::Pulled(f) => f.clone(),
    };
    let alpha_m = MixedForm::from_form(n, zero.clone(), alpha_pulled);
    let ahat = ahat_form(&conn.curvature(), &conn.algebroid, n);
    let top_theta = theta_top(pb);
    let omega_ext = omega.extend_chart(r, cap);
    let mut warning = None;
    if deg > n {
        warning = Some(format!("cocycle degree {deg} exceeds the top degree {n}; the integrand has no top component"));
    }
    let nt = pb.algebroid.base.nt();
    let nc = pb.algebroid.base.np();
    let mut axes: Vec<Vec<f64>> = (0..nt).map(|_| torus_1d(grid.torus_points)).collect();
    axes.extend((0..nc).map(|_| grid_1d(grid.chart_points, grid.chart_half_width)));
    let cell = (2.0 * PI / grid.torus_points as f64).powi(nt as i32)
        * (2.0 * grid.chart_half_width / grid.chart_points as f64).powi(nc as i32);
    let bsize = idem.size();
    let e_inf_rank = idem.e_inf().trace();
    let two_pi_i = C64::new(0.0, 2.0 * PI);
    let mut weights = vec![C64::new(1.0, 0.0)];
    for j in 1..=r {
        weights.push(weights[j - 1] * C64::new(-1.0, 0.0) / (two_pi_i * j as f64));
    }
    let nvars = nt + nc;
    let mut by_term: BTreeMap<(usize, usize, usize), C64> = BTreeMap::new();
    if warning.is_none() {
        for p in cartesian(&axes) {
            let (th, xs) = (&p[..nt], &p[nt..]);
            let jet = idem.jet(&p);
            if jet.chi >= 1.0 {
                continue;
            }
            // dP(e_a) = Σ_v ρ_a^v ∂_v P
            let rho: Vec<Vec<C64>> = (0..n).map(|a| (0..nvars).map(|v| pb.algebroid.anchor[a][v].eval(th, xs)).collect()).collect();
            let pf: FormMatrix = (0..bsize).map(|i| (0..bsize).map(|j| PointForm::scalar(n, jet.p[(i, j)])).collect()).collect();
            let dpf: FormMatrix = (0..bsize)
                .map(|i| {
                    (0..bsize)
                        .map(|j| {
                            let mut f = PointForm::zero(n);
                            for a in 0..n {
                                let v: C64 = (0..nvars).map(|v| rho[a][v] * jet.dp[v][(i, j)]).sum();
                                f.c[1 << a] = v;
                            }
                            f
                        })
                        .collect()
                })
                .collect();
            let dp2 = fm_mul(&dpf, &dpf);
            let mut chs = vec![fm_trace(&pf).sub(&PointForm::scalar(n, e_inf_rank))];
            let mut acc = pf.clone();
            for j in 1..=r {
                acc = fm_mul(&acc, &dp2);
                chs.push(fm_trace(&acc).scale(weights[j]));
            }
            let a_pt = alpha_m.eval_at(th, xs);
            let h_pt = ahat.form.eval_at(th, xs);
            let dens = omega_ext.eval(th, xs) / top_theta.eval(th, xs) * orientation_sign(r) * cell;
            for (j, ch) in chs.iter().enumerate() {
                let cd = 2 * j;
                if deg + cd > n {
                    continue;
                }
                let ad = n - deg - cd;
                if ad % 4 != 0 {
                    continue;
                }
                let v = a_pt.wedge(&h_pt.degree_part(ad)).wedge(ch).top() * dens;
                *by_term.entry((deg, ad, cd)).or_insert(C64::new(0.0, 0.0)) += v;
            }
        }
    }
    let pref = C64::new(1.0, 0.0) / two_pi_i.powi(k as i32);
    let breakdown: Vec<TermBreakdown> = by_term
        .into_iter()
        .map(|((alpha_degree, ahat_degree, ch_degree), v)| TermBreakdown { alpha_degree, ahat_degree, ch_degree, value: v * pref })
        .collect();
    let value = breakdown.iter().map(|t| t.value).sum();
    Ok(IndexRhsReport { value, breakdown, warning, normalization: NORMALIZATION.to_string(), ahat_truncated: ahat.truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::{cq, Cq};

    #[test]
    fn ahat_coefficients() {
        let a = ahat_series::<Cq>(3);
        assert_eq!(a, vec![cq(1, 1), cq(-1, 24), cq(7, 5760), cq(-31, 967680)]);
        let b = ahat_log_series::<Cq>(2);
        assert_eq!(b[1], cq(-1, 24));
        assert_eq!(b[2], cq(1, 2880));
    }

    #[test]
    fn mask_signs() {
        assert_eq!(mask_sign(0b01, 0b10), 1.0);
        assert_eq!(mask_sign(0b10, 0b01), -1.0);
        assert_eq!(mask_sign(0b110, 0b001), 1.0);
        assert_eq!(mask_sign(0b100, 0b011), 1.0);
        assert_eq!(mask_sign(0b010, 0b101), -1.0);
    }

    #[test]
    fn smooth_step_is_monotone_and_matches_its_derivative() {
        let h = 1e-6;
        for i in 1..20 {
            let u = i as f64 / 20.0;
            let (v, d) = smooth_step(u);
            let fd = (smooth_step(u + h).0 - smooth_step(u - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6);
            assert!(d >= 0.0 && (0.0..=1.0).contains(&v));
        }
    }
}
