//! Symbols on `A*`: the Lie–Poisson bracket, Moyal and PBW star products,
//! the homogeneity operator, the ħ-trace, equivalences, and a Fedosov
//! recursion on a Weyl algebra with constant data.
//!
//! Convention: `a⋆b − b⋆a = −iħ{a,b} + O(ħ²)` with `{f, ξ_i} = ρ(e_i)f`
//! and `{ξ_i, ξ_j} = −c^k_{ij} ξ_k`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::algebroid::{AlgebroidPresentation, BaseModel};
use crate::scalars::{BaseFunction, HbarSeries, Scalar, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("symbols live over different algebroids")]
    AlgebroidMismatch,
    #[error("Poisson structure is not constant: {0}")]
    NotDarboux(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("symbol is not integrable: {0}")]
    NotIntegrable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Weyl curvature has a non-central part in degree {degree} (max |coeff| {residual:e})")]
    NonCentral { degree: u32, residual: f64 },
    #[error("expected a multiple of ħ before dividing")]
    NotDivisible,
}

// ---------------------------------------------------------------------------
// Symbols

/// `exp(−fiber·|ξ|²/2 − chart·|x|²/2)`, stored through inverse widths;
/// a zero entry means no weight in that direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWeight<S> {
    pub fiber: S,
    pub chart: S,
}

impl<S: Scalar> GaussianWeight<S> {
    /// `exp(−|ξ|²/(2s))`.
    pub fn fiber_width(s: S) -> Self {
        Self { fiber: S::one() / s, chart: S::zero() }
    }

    /// `exp(−|ξ|²/(2s) − |x|²/(2t))`.
    pub fn widths(s: S, t: S) -> Self {
        Self { fiber: S::one() / s, chart: S::one() / t }
    }

    fn combine(a: &Option<Self>, b: &Option<Self>) -> Option<Self> {
        match (a, b) {
            (None, None) => None,
            (Some(w), None) | (None, Some(w)) => Some(w.clone()),
            (Some(w), Some(v)) => Some(Self { fiber: w.fiber.clone() + v.fiber.clone(), chart: w.chart.clone() + v.chart.clone() }),
        }
    }
}

/// Algebroid plus truncation data shared by a family of symbols.
#[derive(Debug, Clone)]
pub struct SymbolSpace<S> {
    alg: Arc<AlgebroidPresentation<S>>,
    cap: u32,
    order: usize,
}

impl<S: Scalar> SymbolSpace<S> {
    /// Fiber polynomials of degree ≤ `cap` with ħ-powers ≤ `order`.
    pub fn new(alg: AlgebroidPresentation<S>, cap: u32, order: usize) -> Self {
        Self { alg: Arc::new(alg), cap, order }
    }

    pub fn algebroid(&self) -> &AlgebroidPresentation<S> {
        &self.alg
    }
    pub fn cap(&self) -> u32 {
        self.cap
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn rank(&self) -> usize {
        self.alg.rank
    }
    /// Number of base coordinates; fiber variable `i` has index `nb() + i`.
    pub fn nb(&self) -> usize {
        self.alg.base.nvars()
    }
    pub fn nvars(&self) -> usize {
        self.nb() + self.rank()
    }

    pub fn zero(&self) -> SymbolSeries<S> {
        SymbolSeries { space: self.clone(), weight: None, terms: BTreeMap::new(), truncated: false }
    }

    pub fn monomial(&self, hbar: u32, exps: Vec<u32>, f: BaseFunction<S>) -> SymbolSeries<S> {
        let mut s = self.zero();
        s.add_term(hbar, exps, f);
        s
    }

    pub fn base(&self, f: BaseFunction<S>) -> SymbolSeries<S> {
        self.monomial(0, vec![0; self.rank()], f)
    }

    pub fn constant(&self, c: S) -> SymbolSeries<S> {
        self.base(self.alg.base.constant(c))
    }

    pub fn one(&self) -> SymbolSeries<S> {
        self.constant(S::one())
    }

    pub fn xi(&self, i: usize) -> SymbolSeries<S> {
        let mut e = vec![0; self.rank()];
        e[i] = 1;
        self.monomial(0, e, self.alg.base.constant(S::one()))
    }

    pub fn hbar(&self) -> SymbolSeries<S> {
        self.monomial(1, vec![0; self.rank()], self.alg.base.constant(S::one()))
    }

    /// `ξ^e` with unit coefficient.
    pub fn xi_pow(&self, e: &[u32]) -> SymbolSeries<S> {
        self.monomial(0, e.to_vec(), self.alg.base.constant(S::one()))
    }

    fn same(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.alg, &other.alg) || *self.alg == *other.alg
    }
}

/// `Σ ħ^j f_{j,α}(x) ξ^α`, optionally times a shared Gaussian weight.
/// Terms are keyed by `(j, α)`.
#[derive(Debug, Clone)]
pub struct SymbolSeries<S> {
    space: SymbolSpace<S>,
    weight: Option<GaussianWeight<S>>,
    terms: BTreeMap<(u32, Vec<u32>), BaseFunction<S>>,
    truncated: bool,
}

impl<S: Scalar> PartialEq for SymbolSeries<S> {
    fn eq(&self, other: &Self) -> bool {
        self.space.same(&other.space) && self.weight == other.weight && self.terms == other.terms
    }
}

impl<S: Scalar> SymbolSeries<S> {
    pub fn space(&self) -> &SymbolSpace<S> {
        &self.space
    }
    pub fn algebroid(&self) -> &AlgebroidPresentation<S> {
        &self.space.alg
    }
    pub fn weight(&self) -> Option<&GaussianWeight<S>> {
        self.weight.as_ref()
    }
    pub fn terms(&self) -> &BTreeMap<(u32, Vec<u32>), BaseFunction<S>> {
        &self.terms
    }
    /// Set when a term was dropped by the fiber-degree cap.
    pub fn truncated(&self) -> bool {
        self.truncated || self.terms.values().any(|f| f.truncated())
    }
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn with_weight(mut self, w: GaussianWeight<S>) -> Self {
        self.weight = Some(w);
        self
    }

    pub fn without_weight(mut self) -> Self {
        self.weight = None;
        self
    }

    fn like(&self) -> Self {
        Self { space: self.space.clone(), weight: self.weight.clone(), terms: BTreeMap::new(), truncated: self.truncated }
    }

    pub fn add_term(&mut self, hbar: u32, exps: Vec<u32>, f: BaseFunction<S>) {
        if hbar as usize > self.space.order || f.is_zero() {
            return;
        }
        if exps.iter().sum::<u32>() > self.space.cap {
            self.truncated = true;
            return;
        }
        let key = (hbar, exps);
        let v = match self.terms.remove(&key) {
            Some(g) => g.add(&f),
            None => f,
        };
        if !v.is_zero() {
            self.terms.insert(key, v);
        }
    }

    fn check(&self, other: &Self) {
        assert!(self.space.same(&other.space), "symbols over different algebroids");
    }

    /// # Panics
    /// On different algebroids or different weights.
    pub fn add(&self, other: &Self) -> Self {
        self.check(other);
        assert_eq!(self.weight, other.weight, "weight must be shared by all terms");
        let mut out = self.clone();
        out.truncated |= other.truncated;
        for ((h, e), f) in &other.terms {
            out.add_term(*h, e.clone(), f.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for f in out.terms.values_mut() {
            *f = f.neg();
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &S) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            out.add_term(*h, e.clone(), f.scale(c));
        }
        out
    }

    pub fn mul_base(&self, g: &BaseFunction<S>) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            out.add_term(*h, e.clone(), f.mul(g));
        }
        out
    }

    /// Multiply by `ħ^k`.
    pub fn shift_hbar(&self, k: u32) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            out.add_term(h + k, e.clone(), f.clone());
        }
        out
    }

    /// Pointwise product; weights multiply.
    pub fn mul(&self, other: &Self) -> Self {
        self.check(other);
        let mut out = self.like();
        out.weight = GaussianWeight::combine(&self.weight, &other.weight);
        out.truncated |= other.truncated;
        for ((ha, ea), fa) in &self.terms {
            for ((hb, eb), fb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                out.add_term(ha + hb, e, fa.mul(fb));
            }
        }
        out
    }

    /// `∂/∂u` for `u` in the `A*` coordinate list (base, then fiber),
    /// acting on the weight as well.
    pub fn derivative(&self, var: usize) -> Self {
        let nb = self.space.nb();
        let base = self.space.alg.base;
        let mut out = self.like();
        if var < nb {
            let lam = self.weight.as_ref().map(|w| w.chart.clone()).unwrap_or_else(S::zero);
            let chart_var = var.checked_sub(base.nt());
            for ((h, e), f) in &self.terms {
                out.add_term(*h, e.clone(), f.d(var));
                if let (Some(j), false) = (chart_var, lam.is_zero()) {
                    out.add_term(*h, e.clone(), f.mul(&f.coordinate(j)).scale(&-lam.clone()));
                }
            }
        } else {
            let i = var - nb;
            let lam = self.weight.as_ref().map(|w| w.fiber.clone()).unwrap_or_else(S::zero);
            for ((h, e), f) in &self.terms {
                if e[i] > 0 {
                    let mut e2 = e.clone();
                    e2[i] -= 1;
                    out.add_term(*h, e2, f.scale(&S::from_i64(e[i] as i64)));
                }
                if !lam.is_zero() {
                    let mut e2 = e.clone();
                    e2[i] += 1;
                    out.add_term(*h, e2, f.scale(&-lam.clone()));
                }
            }
        }
        out
    }

    fn multi_derivative(&self, alpha: &[u32]) -> Self {
        let mut out = self.clone();
        for (v, n) in alpha.iter().enumerate() {
            for _ in 0..*n {
                out = out.derivative(v);
            }
        }
        out
    }

    /// Coefficient of `ħ^j` as an ħ-free symbol.
    pub fn hbar_coefficient(&self, j: u32) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            if *h == j {
                out.add_term(0, e.clone(), f.clone());
            }
        }
        out
    }

    /// Drop ħ-powers above `n`.
    pub fn truncate_order(&self, n: u32) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            if *h <= n {
                out.add_term(*h, e.clone(), f.clone());
            }
        }
        out
    }

    /// Lowest ħ-power carrying a nonzero term.
    pub fn lowest_hbar(&self) -> Option<u32> {
        self.terms.keys().map(|(h, _)| *h).min()
    }

    pub fn max_fiber_degree(&self) -> u32 {
        self.terms.keys().map(|(_, e)| e.iter().sum()).max().unwrap_or(0)
    }

    /// Specialize `ħ` to the number `h`.
    pub fn at_hbar(&self, h: &S) -> Self {
        let mut out = self.like();
        for ((p, e), f) in &self.terms {
            out.add_term(0, e.clone(), f.scale(&pow_s(h, *p)));
        }
        out
    }

    /// `ι_λ`: `a(x, ξ) ↦ a(x, λξ)`.
    pub fn iota(&self, lambda: &S) -> Self {
        let mut out = self.like();
        for ((h, e), f) in &self.terms {
            out.add_term(*h, e.clone(), f.scale(&pow_s(lambda, e.iter().sum())));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|f| f.max_abs_coeff()).fold(0.0, f64::max)
    }

    pub fn close(&self, other: &Self, tol: f64) -> bool {
        if S::is_exact() {
            return self == other;
        }
        self.sub(other).max_abs() <= tol
    }

    /// Value at torus angles `theta`, chart point `x`, covector `xi` and `ħ`.
    pub fn eval(&self, theta: &[f64], x: &[f64], xi: &[f64], hbar: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for ((h, e), f) in &self.terms {
            let mono: f64 = e.iter().zip(xi).map(|(p, v)| v.powi(*p as i32)).product();
            acc += f.eval(theta, x) * mono * hbar.powi(*h as i32);
        }
        if let Some(w) = &self.weight {
            let q = w.fiber.to_c64() * xi.iter().map(|v| v * v).sum::<f64>()
                + w.chart.to_c64() * x.iter().map(|v| v * v).sum::<f64>();
            acc *= (-q * 0.5).exp();
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Lie–Poisson bracket

/// `{a, b}` for the Lie–Poisson structure of `A*`.
pub fn lie_poisson<S: Scalar>(a: &SymbolSeries<S>, b: &SymbolSeries<S>) -> Result<SymbolSeries<S>, QuantizeError> {
    if !a.space.same(&b.space) {
        return Err(QuantizeError::AlgebroidMismatch);
    }
    let alg = &a.space.alg;
    let nb = a.space.nb();
    let r = alg.rank;
    let mut out = a.mul(&b.space.zero().with_weight_opt(b.weight.clone()));
    let da: Vec<_> = (0..nb + r).map(|v| a.derivative(v)).collect();
    let db: Vec<_> = (0..nb + r).map(|v| b.derivative(v)).collect();
    for i in 0..r {
        for (v, rho) in alg.anchor[i].iter().enumerate() {
            if rho.is_zero() {
                continue;
            }
            let t = da[v].mul(&db[nb + i]).sub(&da[nb + i].mul(&db[v]));
            out = out.add(&t.mul_base(rho));
        }
        for j in 0..r {
            let pij = da[nb + i].mul(&db[nb + j]);
            if pij.is_zero() {
                continue;
            }
            for k in 0..r {
                let c = &alg.structure[i][j][k];
                if !c.is_zero() {
                    out = out.sub(&pij.mul(&a.space.xi(k)).mul_base(c));
                }
            }
        }
    }
    Ok(out)
}

impl<S: Scalar> SymbolSeries<S> {
    fn with_weight_opt(mut self, w: Option<GaussianWeight<S>>) -> Self {
        self.weight = w;
        self
    }
}

/// Constant Poisson matrix on the `A*` coordinates, if the Lie–Poisson
/// structure is constant (vanishing structure functions, constant anchor).
pub fn constant_poisson_matrix<S: Scalar>(alg: &AlgebroidPresentation<S>) -> Result<Vec<Vec<S>>, QuantizeError> {
    let nb = alg.base.nvars();
    let r = alg.rank;
    let mut pi = vec![vec![S::zero(); nb + r]; nb + r];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if !alg.structure[i][j][k].is_zero() {
                    return Err(QuantizeError::NotDarboux(format!("c^{k}_{{{i}{j}}} ≠ 0")));
                }
            }
        }
        for (v, rho) in alg.anchor[i].iter().enumerate() {
            if !rho.is_constant() {
                return Err(QuantizeError::NotDarboux(format!("anchor component ({i},{v}) is not constant")));
            }
            let c = rho.constant_term();
            pi[nb + i][v] = -c.clone();
            pi[v][nb + i] = c;
        }
    }
    Ok(pi)
}

/// Multi-index coefficients of `(Σ π^{uv} ∂_u ⊗ ∂_v)^n`.
pub fn bivector_power<S: Scalar>(pi: &[Vec<S>], n: usize) -> BTreeMap<(Vec<u32>, Vec<u32>), S> {
    let m = pi.len();
    let mut cur: BTreeMap<(Vec<u32>, Vec<u32>), S> = BTreeMap::new();
    cur.insert((vec![0; m], vec![0; m]), S::one());
    for _ in 0..n {
        let mut next: BTreeMap<(Vec<u32>, Vec<u32>), S> = BTreeMap::new();
        for ((a, b), c) in &cur {
            for (u, row) in pi.iter().enumerate() {
                for (v, p) in row.iter().enumerate() {
                    if p.is_zero() {
                        continue;
                    }
                    let (mut a2, mut b2) = (a.clone(), b.clone());
                    a2[u] += 1;
                    b2[v] += 1;
                    let e = next.entry((a2, b2)).or_insert_with(S::zero);
                    *e = e.clone() + c.clone() * p.clone();
                }
            }
        }
        next.retain(|_, c| !c.is_zero());
        cur = next;
    }
    cur
}

fn moyal_core<S: Scalar>(pi: &[Vec<S>], a: &SymbolSeries<S>, b: &SymbolSeries<S>, n: usize) -> SymbolSeries<S> {
    let mut out = a.mul(b);
    let half = -S::imag_unit() * S::from_ratio(1, 2);
    let mut cache_a: HashMap<Vec<u32>, SymbolSeries<S>> = HashMap::new();
    let mut cache_b: HashMap<Vec<u32>, SymbolSeries<S>> = HashMap::new();
    let mut pref = S::one();
    for k in 1..=n.min(a.space.order) {
        pref = pref * half.clone() / S::from_i64(k as i64);
        let mut level = out.like();
        level.weight = out.weight.clone();
        let mut any = false;
        for ((al, be), c) in bivector_power(pi, k) {
            let da = cache_a.entry(al.clone()).or_insert_with(|| a.multi_derivative(&al)).clone();
            if da.is_zero() {
                continue;
            }
            let db = cache_b.entry(be.clone()).or_insert_with(|| b.multi_derivative(&be)).clone();
            if db.is_zero() {
                continue;
            }
            any = true;
            level = level.add(&da.mul(&db).scale(&c));
        }
        if !any {
            break;
        }
        out = out.add(&level.scale(&pref).shift_hbar(k as u32));
    }
    out.truncate_order(n as u32)
}

/// Moyal product for the constant Lie–Poisson structure of `A*`, through `ħ^n`.
pub fn moyal_star<S: Scalar>(a: &SymbolSeries<S>, b: &SymbolSeries<S>, n: usize) -> Result<SymbolSeries<S>, QuantizeError> {
    if !a.space.same(&b.space) {
        return Err(QuantizeError::AlgebroidMismatch);
    }
    let pi = constant_poisson_matrix(&a.space.alg)?;
    Ok(moyal_core(&pi, a, b, n))
}

/// Moyal product for an arbitrary constant bivector on the `A*` coordinates.
pub fn moyal_star_with<S: Scalar>(
    pi: &[Vec<S>],
    a: &SymbolSeries<S>,
    b: &SymbolSeries<S>,
    n: usize,
) -> Result<SymbolSeries<S>, QuantizeError> {
    if !a.space.same(&b.space) {
        return Err(QuantizeError::AlgebroidMismatch);
    }
    let m = a.space.nvars();
    if pi.len() != m || pi.iter().any(|row| row.len() != m) {
        return Err(QuantizeError::ShapeMismatch(format!("bivector must be {m}×{m}")));
    }
    Ok(moyal_core(pi, a, b, n))
}

// ---------------------------------------------------------------------------
// PBW products

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbwOrdering {
    /// Base functions left, `ξ` in increasing index order.
    Normal,
    /// Symmetrization; point bases only.
    Symmetric,
}

type Poly<S> = BTreeMap<(u32, Vec<u32>), S>;

fn poly_add<S: Scalar>(p: &mut Poly<S>, key: (u32, Vec<u32>), c: S) {
    if c.is_zero() {
        return;
    }
    let v = match p.remove(&key) {
        Some(x) => x + c,
        None => c,
    };
    if !v.is_zero() {
        p.insert(key, v);
    }
}

struct Rewriter<'a, S> {
    alg: &'a AlgebroidPresentation<S>,
    consts: Vec<Vec<Vec<S>>>,
    order: u32,
    memo: HashMap<Vec<usize>, Poly<S>>,
}

impl<'a, S: Scalar> Rewriter<'a, S> {
    fn new(alg: &'a AlgebroidPresentation<S>, order: u32) -> Result<Self, QuantizeError> {
        let r = alg.rank;
        let mut consts = vec![vec![vec![S::zero(); r]; r]; r];
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let c = &alg.structure[i][j][k];
                    if !c.is_constant() {
                        return Err(QuantizeError::Unsupported("PBW product needs constant structure functions".into()));
                    }
                    consts[i][j][k] = c.constant_term();
                }
            }
        }
        Ok(Self { alg, consts, order, memo: HashMap::new() })
    }

    fn exps(&self, word: &[usize]) -> Vec<u32> {
        let mut e = vec![0; self.alg.rank];
        for &i in word {
            e[i] += 1;
        }
        e
    }

    /// Normal-ordered form of a word in `U`, using
    /// `ξ_a ξ_b = ξ_b ξ_a + iħ c^k_{ab} ξ_k`.
    fn normal(&mut self, word: &[usize]) -> Poly<S> {
        if let Some(p) = self.memo.get(word) {
            return p.clone();
        }
        let mut out = Poly::new();
        match word.windows(2).position(|w| w[0] > w[1]) {
            None => {
                out.insert((0, self.exps(word)), S::one());
            }
            Some(p) => {
                let (a, b) = (word[p], word[p + 1]);
                let mut swapped = word.to_vec();
                swapped.swap(p, p + 1);
                for (k, c) in self.normal(&swapped) {
                    poly_add(&mut out, k, c);
                }
                if self.order > 0 {
                    for k in 0..self.alg.rank {
                        let c = self.consts[a][b][k].clone();
                        if c.is_zero() {
                            continue;
                        }
                        let mut w = word[..p].to_vec();
                        w.push(k);
                        w.extend_from_slice(&word[p + 2..]);
                        let ic = S::imag_unit() * c;
                        for ((h, e), v) in self.normal(&w) {
                            if h < self.order {
                                poly_add(&mut out, (h + 1, e), v * ic.clone());
                            }
                        }
                    }
                }
            }
        }
        self.memo.insert(word.to_vec(), out.clone());
        out
    }

    /// `w·g = Σ ħ^h g_h w_h` from `ξ_i g = g ξ_i + iħ ρ_i(g)`.
    fn push_past(&self, word: &[usize], g: &BaseFunction<S>) -> Vec<(u32, BaseFunction<S>, Vec<usize>)> {
        let Some((&last, rest)) = word.split_last() else {
            return vec![(0, g.clone(), vec![])];
        };
        let mut out: Vec<_> = self
            .push_past(rest, g)
            .into_iter()
            .map(|(h, f, mut w)| {
                w.push(last);
                (h, f, w)
            })
            .collect();
        let dg = self.alg.anchor_apply(last, g);
        if !dg.is_zero() {
            let dg = dg.scale(&S::imag_unit());
            out.extend(self.push_past(rest, &dg).into_iter().filter(|(h, _, _)| *h < self.order).map(|(h, f, w)| (h + 1, f, w)));
        }
        out
    }

    fn word(e: &[u32]) -> Vec<usize> {
        e.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat(i).take(n as usize)).collect()
    }

    fn normal_product(&mut self, a: &SymbolSeries<S>, b: &SymbolSeries<S>) -> SymbolSeries<S> {
        let mut out = a.like();
        out.weight = None;
        for ((ha, ea), f) in &a.terms {
            for ((hb, eb), g) in &b.terms {
                let h0 = ha + hb;
                if h0 > self.order {
                    continue;
                }
                for (h1, g1, mut w) in self.push_past(&Self::word(ea), g) {
                    if h0 + h1 > self.order {
                        continue;
                    }
                    w.extend(Self::word(eb));
                    let fg = f.mul(&g1);
                    for ((h2, e), c) in self.normal(&w) {
                        if h0 + h1 + h2 <= self.order {
                            out.add_term(h0 + h1 + h2, e, fg.scale(&c));
                        }
                    }
                }
            }
        }
        out
    }

    fn distinct_words(e: &[u32]) -> Vec<Vec<usize>> {
        fn rec(counts: &mut Vec<u32>, cur: &mut Vec<usize>, len: usize, out: &mut Vec<Vec<usize>>) {
            if cur.len() == len {
                out.push(cur.clone());
                return;
            }
            for i in 0..counts.len() {
                if counts[i] > 0 {
                    counts[i] -= 1;
                    cur.push(i);
                    rec(counts, cur, len, out);
                    cur.pop();
                    counts[i] += 1;
                }
            }
        }
        let mut out = vec![];
        let len = e.iter().sum::<u32>() as usize;
        rec(&mut e.to_vec(), &mut vec![], len, &mut out);
        out
    }

    /// Symmetrization of `ξ^e`, in the normal-ordered basis.
    fn sym(&mut self, e: &[u32]) -> Poly<S> {
        let words = Self::distinct_words(e);
        let w = S::one() / S::from_i64(words.len() as i64);
        let mut out = Poly::new();
        for word in words {
            for (k, c) in self.normal(&word) {
                poly_add(&mut out, k, c * w.clone());
            }
        }
        out
    }

    fn sym_poly(&mut self, p: &Poly<S>) -> Poly<S> {
        let mut out = Poly::new();
        for ((h, e), c) in p {
            for ((h2, e2), c2) in self.sym(e) {
                if h + h2 <= self.order {
                    poly_add(&mut out, (h + h2, e2), c.clone() * c2);
                }
            }
        }
        out
    }

    /// Inverse of symmetrization by peeling off the top fiber degree.
    fn unsym(&mut self, mut u: Poly<S>) -> Poly<S> {
        let mut out = Poly::new();
        loop {
            let Some(d) = u.keys().map(|(_, e)| e.iter().sum::<u32>()).max() else { break };
            let top: Poly<S> = u.iter().filter(|((_, e), _)| e.iter().sum::<u32>() == d).map(|(k, v)| (k.clone(), v.clone())).collect();
            for ((h, e), c) in self.sym_poly(&top) {
                poly_add(&mut u, (h, e), -c);
            }
            for (k, c) in top {
                poly_add(&mut out, k, c);
            }
        }
        out
    }
}

fn to_poly<S: Scalar>(a: &SymbolSeries<S>) -> Poly<S> {
    a.terms.iter().map(|(k, f)| (k.clone(), f.constant_term())).collect()
}

fn from_poly<S: Scalar>(space: &SymbolSpace<S>, p: Poly<S>) -> SymbolSeries<S> {
    let mut out = space.zero();
    for ((h, e), c) in p {
        out.add_term(h, e, space.alg.base.constant(c));
    }
    out
}

/// Product transported from the universal enveloping algebra (algebroid)
/// with `ξ` scaled by `ħ`, through `ħ^n`.
pub fn pbw_star<S: Scalar>(
    a: &SymbolSeries<S>,
    b: &SymbolSeries<S>,
    n: usize,
    ordering: PbwOrdering,
) -> Result<SymbolSeries<S>, QuantizeError> {
    if !a.space.same(&b.space) {
        return Err(QuantizeError::AlgebroidMismatch);
    }
    if a.weight.is_some() || b.weight.is_some() {
        return Err(QuantizeError::Unsupported("PBW product acts on fiber polynomials".into()));
    }
    let alg = &*a.space.alg;
    let order = n.min(a.space.order) as u32;
    let mut rw = Rewriter::new(alg, order)?;
    match ordering {
        PbwOrdering::Normal => Ok(rw.normal_product(a, b)),
        PbwOrdering::Symmetric => {
            if alg.base != BaseModel::Point {
                return Err(QuantizeError::Unsupported("symmetric ordering needs a point base".into()));
            }
            let sa = from_poly(&a.space, rw.sym_poly(&to_poly(a)));
            let sb = from_poly(&a.space, rw.sym_poly(&to_poly(b)));
            let prod = rw.normal_product(&sa, &sb);
            Ok(from_poly(&a.space, rw.unsym(to_poly(&prod))))
        }
    }
}

/// `Ξ = ħ∂_ħ + Σ ξ_i ∂_{ξ_i}`.
pub fn homogeneity_xi<S: Scalar>(a: &SymbolSeries<S>) -> SymbolSeries<S> {
    let mut out = a.like();
    for ((h, e), f) in &a.terms {
        out.add_term(*h, e.clone(), f.scale(&S::from_i64(*h as i64)));
    }
    let nb = a.space.nb();
    for i in 0..a.space.rank() {
        out = out.add(&a.derivative(nb + i).mul(&a.space.xi(i)));
    }
    out
}

// ---------------------------------------------------------------------------
// Star products as objects

#[derive(Debug, Clone, PartialEq)]
pub enum StarKind<S> {
    /// Moyal for the constant Lie–Poisson structure.
    Moyal,
    /// Moyal for a given constant bivector.
    MoyalWith(Vec<Vec<S>>),
    Pbw(PbwOrdering),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarProduct<S> {
    pub kind: StarKind<S>,
    pub order: usize,
    pub convention: &'static str,
    /// Whether `Ξ` is a derivation of the product.
    pub homogeneous: bool,
}

pub const CONVENTION: &str = "a*b - b*a = -i hbar {a,b} + O(hbar^2)";

impl<S: Scalar> StarProduct<S> {
    pub fn moyal(order: usize) -> Self {
        Self { kind: StarKind::Moyal, order, convention: CONVENTION, homogeneous: true }
    }

    /// Homogeneous exactly when every nonzero entry pairs a base and a fiber
    /// coordinate.
    pub fn moyal_with(pi: Vec<Vec<S>>, nb: usize, order: usize) -> Self {
        let homogeneous = pi
            .iter()
            .enumerate()
            .all(|(u, row)| row.iter().enumerate().all(|(v, p)| p.is_zero() || ((u < nb) != (v < nb))));
        Self { kind: StarKind::MoyalWith(pi), order, convention: CONVENTION, homogeneous }
    }

    pub fn pbw(ordering: PbwOrdering, order: usize) -> Self {
        Self { kind: StarKind::Pbw(ordering), order, convention: CONVENTION, homogeneous: true }
    }

    pub fn star(&self, a: &SymbolSeries<S>, b: &SymbolSeries<S>) -> Result<SymbolSeries<S>, QuantizeError> {
        match &self.kind {
            StarKind::Moyal => moyal_star(a, b, self.order),
            StarKind::MoyalWith(pi) => moyal_star_with(pi, a, b, self.order),
            StarKind::Pbw(o) => pbw_star(a, b, self.order, *o),
        }
    }

    /// Bidifferential coefficient `c_k(a, b)` on ħ-free symbols.
    pub fn coefficient(&self, k: u32, a: &SymbolSeries<S>, b: &SymbolSeries<S>) -> Result<SymbolSeries<S>, QuantizeError> {
        if a.terms.keys().chain(b.terms.keys()).any(|(h, _)| *h > 0) {
            return Err(QuantizeError::Unsupported("coefficients are read off on ħ-free symbols".into()));
        }
        Ok(self.star(a, b)?.hbar_coefficient(k))
    }
}

// ---------------------------------------------------------------------------
// Equivalences

/// `Σ c ħ^h ∂^α` with constant coefficients on the `A*` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOpSeries<S> {
    pub terms: Vec<(u32, Vec<u32>, S)>,
}

impl<S: Scalar> DiffOpSeries<S> {
    pub fn identity(nvars: usize) -> Self {
        Self { terms: vec![(0, vec![0; nvars], S::one())] }
    }

    /// `exp(c ħ ∂_u ∂_v)` through `ħ^order`.
    pub fn exp_second_order(nvars: usize, u: usize, v: usize, c: S, order: u32) -> Self {
        let mut terms = vec![];
        let mut coef = S::one();
        for n in 0..=order {
            if n > 0 {
                coef = coef * c.clone() / S::from_i64(n as i64);
            }
            let mut a = vec![0; nvars];
            a[u] += n;
            a[v] += n;
            terms.push((n, a, coef.clone()));
        }
        Self { terms }
    }
}

pub fn apply_equivalence<S: Scalar>(e: &DiffOpSeries<S>, a: &SymbolSeries<S>) -> SymbolSeries<S> {
    let mut out = a.like();
    for (h, alpha, c) in &e.terms {
        out = out.add(&a.multi_derivative(alpha).scale(c).shift_hbar(*h));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub passed: bool,
    /// Indices into the generating set of the first failing pair.
    pub failing_pair: Option<(usize, usize)>,
    /// Lowest ħ-power of the residual at the failing pair.
    pub residual_order: Option<u32>,
    pub residual: f64,
    pub commutes_with_xi: bool,
}

/// Checks `E(a⋆b) = E(a)⋆′E(b)` modulo `ħ^{n+1}` on all pairs from `gens`.
pub fn verify_equivalence<S: Scalar>(
    e: &DiffOpSeries<S>,
    star: &StarProduct<S>,
    star2: &StarProduct<S>,
    gens: &[SymbolSeries<S>],
    n: u32,
    tol: f64,
) -> Result<EquivalenceReport, QuantizeError> {
    let mut report = EquivalenceReport { passed: true, failing_pair: None, residual_order: None, residual: 0.0, commutes_with_xi: true };
    for (i, a) in gens.iter().enumerate() {
        for (j, b) in gens.iter().enumerate() {
            let lhs = apply_equivalence(e, &star.star(a, b)?).truncate_order(n);
            let rhs = star2.star(&apply_equivalence(e, a), &apply_equivalence(e, b))?.truncate_order(n);
            let res = lhs.sub(&rhs);
            let size = res.max_abs();
            if !(res.is_zero() || (!S::is_exact() && size <= tol)) && report.passed {
                report.passed = false;
                report.failing_pair = Some((i, j));
                report.residual_order = res.lowest_hbar();
                report.residual = size;
            }
        }
        let c = apply_equivalence(e, &homogeneity_xi(a)).sub(&homogeneity_xi(&apply_equivalence(e, a))).truncate_order(n);
        if !(c.is_zero() || (!S::is_exact() && c.max_abs() <= tol)) {
            report.commutes_with_xi = false;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// ħ-trace

/// `series × (2π)^two_pi_power × Π_λ √(2π/λ)` over the entries of `gauss`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceValue<S> {
    pub series: HbarSeries<S>,
    pub two_pi_power: u32,
    pub gauss: Vec<S>,
}

impl<S: Scalar> TraceValue<S> {
    pub fn factor(&self) -> f64 {
        let tp = 2.0 * std::f64::consts::PI;
        let g: f64 = self.gauss.iter().map(|l| (tp / l.to_c64().re).sqrt()).product();
        tp.powi(self.two_pi_power as i32) * g
    }

    /// Coefficient of `ħ^j` including the transcendental factor.
    pub fn coeff_c64(&self, j: i64) -> C64 {
        self.series.coeff(j).to_c64() * self.factor()
    }

    pub fn eval(&self, hbar: f64) -> C64 {
        self.series.eval_c64(C64::new(hbar, 0.0)) * self.factor()
    }
}

/// `∫_ℝ t^p e^{−λt²/2} dt / √(2π/λ)`.
fn gaussian_moment<S: Scalar>(p: u32, lam: &S) -> S {
    if p % 2 == 1 {
        return S::zero();
    }
    let mut out = S::one();
    for j in 0..p / 2 {
        out = out * S::from_i64((2 * j + 1) as i64) / lam.clone();
    }
    out
}

fn positive<S: Scalar>(lam: &S) -> bool {
    let z = lam.to_c64();
    z.re > 0.0 && z.im == 0.0
}

/// `τ_Ω(a) = ħ^{−r} ∫_{A*} a Ω` with Lebesgue measure `dξ` on the fibers
/// and `dθ`/`dx` on the base.
pub fn hbar_trace<S: Scalar>(a: &SymbolSeries<S>, omega: &BaseFunction<S>) -> Result<TraceValue<S>, QuantizeError> {
    let r = a.space.rank();
    let base = a.space.alg.base;
    let w = a.weight.clone().unwrap_or(GaussianWeight { fiber: S::zero(), chart: S::zero() });
    if r > 0 && !positive(&w.fiber) {
        return Err(QuantizeError::NotIntegrable("fiber directions need a Gaussian weight".into()));
    }
    if base.np() > 0 && !positive(&w.chart) {
        return Err(QuantizeError::NotIntegrable("chart directions need a Gaussian weight".into()));
    }
    let order = a.space.order.saturating_sub(r);
    let mut series = HbarSeries::zero(order);
    for ((h, e), f) in &a.terms {
        let fib = e.iter().fold(S::one(), |acc, p| acc * gaussian_moment(*p, &w.fiber));
        if fib.is_zero() {
            continue;
        }
        let mut base_int = S::zero();
        for (m, c) in f.mul(omega).terms() {
            if m.k.iter().any(|k| *k != 0) {
                continue;
            }
            base_int = base_int + m.e.iter().fold(c.clone(), |acc, p| acc * gaussian_moment(*p, &w.chart));
        }
        series = series.add(&HbarSeries::monomial(fib * base_int, *h as i64 - r as i64, order));
    }
    let mut gauss = vec![w.fiber.clone(); r];
    gauss.extend(std::iter::repeat(w.chart.clone()).take(base.np()));
    Ok(TraceValue { series, two_pi_power: base.nt() as u32, gauss })
}

fn pow_s<S: Scalar>(x: &S, p: u32) -> S {
    (0..p).fold(S::one(), |acc, _| acc * x.clone())
}

// ---------------------------------------------------------------------------
// Weyl algebra and the Fedosov recursion

/// Monomial `x^x y^y dx^forms ħ^hbar`; `forms` is a bitmask in increasing
/// index order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeylKey {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub forms: u32,
    pub hbar: u32,
}

impl WeylKey {
    /// `|y| + 2·(ħ-power)`.
    pub fn weyl_degree(&self) -> u32 {
        self.y.iter().sum::<u32>() + 2 * self.hbar
    }
    pub fn form_degree(&self) -> u32 {
        self.forms.count_ones()
    }
}

/// Element of the degree-capped Weyl algebra in `y_1..y_n` with polynomial
/// coefficients in the base coordinates `x` and constant forms `dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylFiberElement<S> {
    n: usize,
    cap: u32,
    terms: BTreeMap<WeylKey, S>,
}

impl<S: Scalar> WeylFiberElement<S> {
    pub fn zero(n: usize, cap: u32) -> Self {
        Self { n, cap, terms: BTreeMap::new() }
    }

    pub fn terms(&self) -> &BTreeMap<WeylKey, S> {
        &self.terms
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn cap(&self) -> u32 {
        self.cap
    }
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, key: WeylKey, c: S) {
        if c.is_zero() || key.weyl_degree() > self.cap {
            return;
        }
        let v = match self.terms.remove(&key) {
            Some(x) => x + c,
            None => c,
        };
        if !v.is_zero() {
            self.terms.insert(key, v);
        }
    }

    fn like(&self) -> Self {
        Self::zero(self.n, self.cap)
    }

    fn map_terms(&self, f: impl Fn(&WeylKey, &S) -> Vec<(WeylKey, S)>) -> Self {
        let mut out = self.like();
        for (k, c) in &self.terms {
            for (k2, c2) in f(k, c) {
                out.add_term(k2, c2);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(&-S::one())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &S) -> Self {
        self.map_terms(|k, v| vec![(k.clone(), v.clone() * c.clone())])
    }

    /// Terms of Weyl degree exactly `d`.
    pub fn degree_part(&self, d: u32) -> Self {
        self.map_terms(|k, v| if k.weyl_degree() == d { vec![(k.clone(), v.clone())] } else { vec![] })
    }

    /// Terms with form degree exactly `p`.
    pub fn form_part(&self, p: u32) -> Self {
        self.map_terms(|k, v| if k.form_degree() == p { vec![(k.clone(), v.clone())] } else { vec![] })
    }

    /// Central elements are those without `y`.
    pub fn is_central(&self) -> bool {
        self.terms.keys().all(|k| k.y.iter().all(|p| *p == 0))
    }

    /// `σ`: set `y = 0` and drop forms.
    pub fn sigma(&self) -> Self {
        self.map_terms(|k, v| if k.forms == 0 && k.y.iter().all(|p| *p == 0) { vec![(k.clone(), v.clone())] } else { vec![] })
    }

    /// Drop ħ-powers above `n`.
    pub fn truncate_hbar(&self, n: u32) -> Self {
        self.map_terms(|k, v| if k.hbar <= n { vec![(k.clone(), v.clone())] } else { vec![] })
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm_f64()).fold(0.0, f64::max)
    }

    /// Largest Weyl degree present.
    pub fn top_degree(&self) -> Option<u32> {
        self.terms.keys().map(|k| k.weyl_degree()).max()
    }

    pub fn close(&self, other: &Self, tol: f64) -> bool {
        if S::is_exact() {
            return self == other;
        }
        self.sub(other).max_abs() <= tol
    }
}

/// Sign of `dx^I ∧ dx^J` relative to the sorted union, or `None` if they
/// overlap.
fn wedge_sign(i: u32, j: u32) -> Option<i64> {
    if i & j != 0 {
        return None;
    }
    let mut swaps = 0;
    for b in 0..32 {
        if j & (1 << b) != 0 {
            swaps += (i >> (b + 1)).count_ones();
        }
    }
    Some(if swaps % 2 == 0 { 1 } else { -1 })
}

/// Split `a` by ħ-power, with the power removed from each slice.
fn hbar_slices<S: Scalar>(a: &WeylFiberElement<S>) -> Vec<(u32, WeylFiberElement<S>)> {
    let mut out: BTreeMap<u32, WeylFiberElement<S>> = BTreeMap::new();
    for (k, c) in &a.terms {
        let mut k2 = k.clone();
        k2.hbar = 0;
        out.entry(k.hbar).or_insert_with(|| a.like()).add_term(k2, c.clone());
    }
    out.into_iter().collect()
}

fn falling_i(n: u32, k: u32) -> i64 {
    (0..k).map(|j| (n - j) as i64).product()
}

/// Weyl algebra with the fiberwise Moyal product for a constant Poisson
/// matrix `ω`: `[y_i, y_j] = −iħ ω_{ij}`.
#[derive(Debug, Clone)]
pub struct WeylAlgebra<S> {
    n: usize,
    cap: u32,
    pi: Vec<Vec<S>>,
    lower: Vec<Vec<S>>,
    /// `((−i/2)^m / m!) π^m` by multi-index pair.
    powers: Vec<Vec<(Vec<u32>, Vec<u32>, S)>>,
}

impl<S: Scalar> WeylAlgebra<S> {
    /// Darboux form on `ℝ^{2k}`: `ω_{i,i+k} = 1`.
    pub fn darboux(k: usize, cap: u32) -> Self {
        let n = 2 * k;
        let mut pi = vec![vec![S::zero(); n]; n];
        for i in 0..k {
            pi[i][i + k] = S::one();
            pi[i + k][i] = -S::one();
        }
        // the Darboux matrix is its own negative inverse
        let lower = pi.iter().map(|row| row.iter().map(|v| -v.clone()).collect()).collect();
        let half = -S::imag_unit() * S::from_ratio(1, 2);
        let mut pref = S::one();
        let mut powers = Vec::new();
        for m in 0..=cap {
            if m > 0 {
                pref = pref * half.clone() / S::from_i64(m as i64);
            }
            powers.push(bivector_power(&pi, m as usize).into_iter().map(|((a, b), c)| (a, b, c * pref.clone())).collect());
        }
        Self { n, cap, pi, lower, powers }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn cap(&self) -> u32 {
        self.cap
    }
    pub fn poisson(&self) -> &[Vec<S>] {
        &self.pi
    }

    pub fn zero(&self) -> WeylFiberElement<S> {
        WeylFiberElement::zero(self.n, self.cap)
    }

    pub fn key(&self) -> WeylKey {
        WeylKey { x: vec![0; self.n], y: vec![0; self.n], forms: 0, hbar: 0 }
    }

    pub fn scalar(&self, c: S) -> WeylFiberElement<S> {
        let mut e = self.zero();
        e.add_term(self.key(), c);
        e
    }

    pub fn y(&self, i: usize) -> WeylFiberElement<S> {
        let mut k = self.key();
        k.y[i] = 1;
        let mut e = self.zero();
        e.add_term(k, S::one());
        e
    }

    pub fn x(&self, i: usize) -> WeylFiberElement<S> {
        let mut k = self.key();
        k.x[i] = 1;
        let mut e = self.zero();
        e.add_term(k, S::one());
        e
    }

    pub fn dx(&self, i: usize) -> WeylFiberElement<S> {
        let mut k = self.key();
        k.forms = 1 << i;
        let mut e = self.zero();
        e.add_term(k, S::one());
        e
    }

    pub fn hbar(&self) -> WeylFiberElement<S> {
        let mut k = self.key();
        k.hbar = 1;
        let mut e = self.zero();
        e.add_term(k, S::one());
        e
    }

    /// Fiberwise product `∘`, with forms multiplied by the wedge product.
    pub fn product(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        self.product_to(a, b, self.cap)
    }

    /// `∘` keeping only output of Weyl degree `≤ cap`. The product preserves
    /// Weyl degree, so lower parts are exact.
    fn product_to(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>, cap: u32) -> WeylFiberElement<S> {
        let mut out = self.zero();
        for (ka, ca) in &a.terms {
            let (da, ya) = (ka.weyl_degree(), ka.y.iter().sum::<u32>());
            for (kb, cb) in &b.terms {
                if da + kb.weyl_degree() > cap {
                    continue;
                }
                let Some(sign) = wedge_sign(ka.forms, kb.forms) else { continue };
                let c0 = ca.clone() * cb.clone() * S::from_i64(sign);
                let x: Vec<u32> = ka.x.iter().zip(&kb.x).map(|(p, q)| p + q).collect();
                let forms = ka.forms | kb.forms;
                let hb = ka.hbar + kb.hbar;
                let top = ya.min(kb.y.iter().sum::<u32>());
                for m in 0..=top {
                    for (al, be, c) in &self.powers[m as usize] {
                        if al.iter().zip(&ka.y).any(|(p, q)| p > q) || be.iter().zip(&kb.y).any(|(p, q)| p > q) {
                            continue;
                        }
                        let mut k: i64 = 1;
                        let mut y = vec![0; self.n];
                        for v in 0..self.n {
                            k *= falling_i(ka.y[v], al[v]) * falling_i(kb.y[v], be[v]);
                            y[v] = ka.y[v] - al[v] + kb.y[v] - be[v];
                        }
                        out.add_term(WeylKey { x: x.clone(), y, forms, hbar: hb + m }, c.clone() * c0.clone() * S::from_i64(k));
                    }
                }
            }
        }
        out
    }

    /// `σ(a∘b)` without forming the full product: only fully contracted
    /// pairs of form-free terms survive.
    pub fn sigma_product(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        let mut out = self.zero();
        for (ka, ca) in a.terms.iter().filter(|(k, _)| k.forms == 0) {
            let m = ka.y.iter().sum::<u32>();
            for (kb, cb) in b.terms.iter().filter(|(k, _)| k.forms == 0) {
                if kb.y.iter().sum::<u32>() != m || ka.weyl_degree() + kb.weyl_degree() > self.cap {
                    continue;
                }
                let Some((_, _, c)) = self.powers[m as usize].iter().find(|(al, be, _)| *al == ka.y && *be == kb.y) else { continue };
                let k: i64 = (0..self.n).map(|v| falling_i(ka.y[v], ka.y[v]) * falling_i(kb.y[v], kb.y[v])).product();
                let f = c.clone() * ca.clone() * cb.clone() * S::from_i64(k);
                let x = ka.x.iter().zip(&kb.x).map(|(p, q)| p + q).collect();
                out.add_term(WeylKey { x, y: vec![0; self.n], forms: 0, hbar: ka.hbar + kb.hbar + m }, f);
            }
        }
        out
    }

    /// Graded commutator.
    pub fn commutator(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        self.commutator_to(a, b, self.cap)
    }

    fn commutator_to(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>, cap: u32) -> WeylFiberElement<S> {
        let mut out = self.product_to(a, b, cap);
        for p in 0..=self.n as u32 {
            let ap = a.form_part(p);
            if ap.is_zero() {
                continue;
            }
            for q in 0..=self.n as u32 {
                let bq = b.form_part(q);
                if bq.is_zero() {
                    continue;
                }
                let ba = self.product_to(&bq, &ap, cap);
                out = if (p * q) % 2 == 0 { out.sub(&ba) } else { out.add(&ba) };
            }
        }
        out
    }

    /// `(i/ħ)·a`; every term must carry at least one ħ.
    pub fn i_over_hbar(&self, a: &WeylFiberElement<S>) -> Result<WeylFiberElement<S>, QuantizeError> {
        let mut out = self.zero();
        for (k, c) in &a.terms {
            if k.hbar == 0 {
                return Err(QuantizeError::NotDivisible);
            }
            let mut k2 = k.clone();
            k2.hbar -= 1;
            out.add_term(k2, c.clone() * S::imag_unit());
        }
        Ok(out)
    }

    /// `δ = Σ dx^k ∧ ∂/∂y^k`.
    pub fn delta(&self, a: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        a.map_terms(|k, c| {
            (0..self.n)
                .filter(|&i| k.y[i] > 0)
                .filter_map(|i| {
                    let s = wedge_sign(1 << i, k.forms)?;
                    let mut k2 = k.clone();
                    k2.y[i] -= 1;
                    k2.forms |= 1 << i;
                    Some((k2, c.clone() * S::from_i64(s * k.y[i] as i64)))
                })
                .collect()
        })
    }

    /// `δ⁻¹ = (1/(p+q)) Σ y^k ι(∂/∂x^k)` on `y`-degree `p`, form degree `q`.
    pub fn delta_inv(&self, a: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        a.map_terms(|k, c| {
            let pq = k.y.iter().sum::<u32>() + k.form_degree();
            if pq == 0 {
                return vec![];
            }
            (0..self.n)
                .filter(|&i| k.forms & (1 << i) != 0)
                .map(|i| {
                    let below = (k.forms & ((1 << i) - 1)).count_ones();
                    let s = if below % 2 == 0 { 1 } else { -1 };
                    let mut k2 = k.clone();
                    k2.forms &= !(1 << i);
                    k2.y[i] += 1;
                    (k2, c.clone() * S::from_i64(s) / S::from_i64(pq as i64))
                })
                .collect()
        })
    }

    /// de Rham differential in the base coordinates, `Σ dx^k ∧ ∂/∂x^k`.
    pub fn de_rham(&self, a: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        a.map_terms(|k, c| {
            (0..self.n)
                .filter(|&i| k.x[i] > 0)
                .filter_map(|i| {
                    let s = wedge_sign(1 << i, k.forms)?;
                    let mut k2 = k.clone();
                    k2.x[i] -= 1;
                    k2.forms |= 1 << i;
                    Some((k2, c.clone() * S::from_i64(s * k.x[i] as i64)))
                })
                .collect()
        })
    }

    /// `ω = ½ ω_{ij} dx^i ∧ dx^j` with `ω_{ij}` the inverse of the Poisson matrix.
    pub fn symplectic_form(&self) -> WeylFiberElement<S> {
        let mut out = self.zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let mut k = self.key();
                k.forms = (1 << i) | (1 << j);
                out.add_term(k, self.lower[i][j].clone());
            }
        }
        out
    }

    /// `Σ ω_{ij} y^i dx^j`; `(i/ħ)[·, a]` with it equals `−δa`.
    pub fn delta_potential(&self) -> WeylFiberElement<S> {
        let mut out = self.zero();
        for i in 0..self.n {
            for j in 0..self.n {
                let mut k = self.key();
                k.y[i] = 1;
                k.forms = 1 << j;
                out.add_term(k, self.lower[i][j].clone());
            }
        }
        out
    }
}

/// Constant Fedosov data on `ℝ^{2k}` in Darboux coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FedosovInput<S> {
    pub k: usize,
    /// Totally symmetric `Γ_{ijl}` (row-major `n³`), giving
    /// `Γ̃ = ½ Γ_{ijl} y^i y^j dx^l`.
    pub gamma: Vec<S>,
    /// Prescribed central part `Σ_j ħ^j ½ c^{(j)}_{ab} dx^a ∧ dx^b`, `j ≥ 1`,
    /// with `c^{(j)}` antisymmetric (row-major `n²`).
    pub central: Vec<(u32, Vec<S>)>,
    /// ħ-order of the induced product.
    pub order: u32,
}

impl<S: Scalar> FedosovInput<S> {
    /// `R = 0`, no central correction.
    pub fn flat(k: usize, order: u32) -> Self {
        let n = 2 * k;
        Self { k, gamma: vec![S::zero(); n * n * n], central: vec![], order }
    }
}

/// Result of the recursion: `D = ∂ − δ + (i/ħ)[Γ̃ + r, ·]`.
#[derive(Debug, Clone)]
pub struct FedosovConnection<S> {
    alg: WeylAlgebra<S>,
    gamma_tilde: WeylFiberElement<S>,
    r: WeylFiberElement<S>,
    prescribed: WeylFiberElement<S>,
    curvature: WeylFiberElement<S>,
    trusted: u32,
    order: u32,
    iterations: usize,
}

pub fn fedosov_recursion<S: Scalar>(input: &FedosovInput<S>) -> Result<FedosovConnection<S>, QuantizeError> {
    let n = 2 * input.k;
    if input.gamma.len() != n * n * n {
        return Err(QuantizeError::ShapeMismatch(format!("Γ needs {} entries", n * n * n)));
    }
    let g = |i: usize, j: usize, l: usize| input.gamma[(i * n + j) * n + l].clone();
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                if g(i, j, l) != g(j, i, l) || g(i, j, l) != g(i, l, j) {
                    return Err(QuantizeError::ShapeMismatch("Γ must be totally symmetric".into()));
                }
            }
        }
    }
    let trusted = (2 * input.order + 2).max(4);
    let cap = trusted + 3;
    let alg = WeylAlgebra::<S>::darboux(input.k, cap);
    let mut gamma_tilde = alg.zero();
    let half = S::from_ratio(1, 2);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let c = g(i, j, l);
                if c.is_zero() {
                    continue;
                }
                let mut key = alg.key();
                key.y[i] += 1;
                key.y[j] += 1;
                key.forms = 1 << l;
                gamma_tilde.add_term(key, c * half.clone());
            }
        }
    }
    let mut prescribed = alg.zero();
    for (h, c) in &input.central {
        if *h == 0 || c.len() != n * n {
            return Err(QuantizeError::ShapeMismatch("central terms need ħ^j, j ≥ 1, and n² entries".into()));
        }
        for a in 0..n {
            for b in 0..n {
                if c[a * n + b] != -c[b * n + a].clone() {
                    return Err(QuantizeError::ShapeMismatch("central 2-form must be antisymmetric".into()));
                }
                if a < b {
                    let mut key = alg.key();
                    key.forms = (1 << a) | (1 << b);
                    key.hbar = *h;
                    prescribed.add_term(key, c[a * n + b].clone());
                }
            }
        }
    }
    // δr = (i/ħ)(Γ̃ + r)∘(Γ̃ + r) − Ω₁ with δ⁻¹r = 0
    // one Weyl degree per pass: the degree-t part of r only sees lower parts
    let mut r = alg.zero();
    let mut iterations = 0;
    for t in 3..=cap {
        iterations += 1;
        let b = gamma_tilde.add(&r);
        let rhs = alg.i_over_hbar(&alg.product_to(&b, &b, t + 1))?.sub(&prescribed);
        r = alg.delta_inv(&rhs).map_terms(|k, c| if k.weyl_degree() <= t { vec![(k.clone(), c.clone())] } else { vec![] });
    }
    let gamma = alg.delta_potential().add(&gamma_tilde).add(&r);
    let curvature = alg.i_over_hbar(&alg.product(&gamma, &gamma))?;
    for d in 0..=trusted {
        let part = curvature.degree_part(d);
        if !part.is_central() {
            return Err(QuantizeError::NonCentral { degree: d, residual: part.max_abs() });
        }
    }
    Ok(FedosovConnection { alg, gamma_tilde, r, prescribed, curvature, trusted, order: input.order, iterations })
}

impl<S: Scalar> FedosovConnection<S> {
    pub fn algebra(&self) -> &WeylAlgebra<S> {
        &self.alg
    }
    pub fn gamma_tilde(&self) -> &WeylFiberElement<S> {
        &self.gamma_tilde
    }
    /// The correction `r`.
    pub fn correction(&self) -> &WeylFiberElement<S> {
        &self.r
    }
    /// Weyl curvature `Ω = (i/ħ) γ∘γ` of the full connection form.
    pub fn weyl_curvature(&self) -> &WeylFiberElement<S> {
        &self.curvature
    }
    /// `Ω` restricted to Weyl degrees that are unaffected by truncation.
    pub fn trusted_curvature(&self) -> WeylFiberElement<S> {
        (0..=self.trusted).fold(self.alg.zero(), |acc, d| acc.add(&self.curvature.degree_part(d)))
    }
    pub fn trusted_degree(&self) -> u32 {
        self.trusted
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    /// `−ω + Ω₁`, the value the curvature should take.
    pub fn expected_curvature(&self) -> WeylFiberElement<S> {
        self.prescribed.sub(&self.alg.symplectic_form())
    }
    /// `R̃ = (i/ħ) Γ̃∘Γ̃`.
    pub fn curvature_tilde(&self) -> WeylFiberElement<S> {
        self.alg.i_over_hbar(&self.alg.product(&self.gamma_tilde, &self.gamma_tilde)).expect("Γ̃∘Γ̃ is a multiple of ħ")
    }

    /// `Da = ∂a − δa + (i/ħ)[Γ̃ + r, a]`.
    pub fn covariant(&self, a: &WeylFiberElement<S>) -> WeylFiberElement<S> {
        let b = self.gamma_tilde.add(&self.r);
        let br = self.alg.i_over_hbar(&self.alg.commutator(&b, a)).expect("commutators are multiples of ħ");
        self.alg.de_rham(a).sub(&self.alg.delta(a)).add(&br)
    }

    /// Flat section with symbol `a` (a function of `x` and `ħ`).
    pub fn flat_section(&self, a: &WeylFiberElement<S>) -> Result<WeylFiberElement<S>, QuantizeError> {
        self.flat_section_to(a, self.alg.cap)
    }

    /// Flat section through Weyl degree `top`. Each pass fixes one more
    /// degree, since `δ⁻¹(∂ + (i/ħ)[Γ̃ + r, ·])` raises degree by at least one.
    fn flat_section_to(&self, a: &WeylFiberElement<S>, top: u32) -> Result<WeylFiberElement<S>, QuantizeError> {
        if a.terms.keys().any(|k| k.forms != 0 || k.y.iter().any(|p| *p > 0) || k.hbar > 0) {
            return Err(QuantizeError::Unsupported("flat sections start from ħ-free functions of x".into()));
        }
        let b = self.gamma_tilde.add(&self.r);
        let mut q = a.clone();
        for t in 1..=top {
            let br = self.alg.i_over_hbar(&self.alg.commutator_to(&b, &q, t + 1))?;
            let next = a.add(&self.alg.delta_inv(&self.alg.de_rham(&q).add(&br)));
            q = next.map_terms(|k, c| if k.weyl_degree() <= t { vec![(k.clone(), c.clone())] } else { vec![] });
        }
        Ok(q)
    }

    /// `a ⋆ b = σ(Q(a)∘Q(b))` through `ħ^order`; ħ-dependent inputs are
    /// expanded termwise.
    pub fn star(&self, a: &WeylFiberElement<S>, b: &WeylFiberElement<S>) -> Result<WeylFiberElement<S>, QuantizeError> {
        let top = 2 * self.order;
        let mut out = self.alg.zero();
        for (ha, pa) in hbar_slices(a) {
            for (hb, pb) in hbar_slices(b) {
                if ha + hb > self.order {
                    continue;
                }
                let room = 2 * (self.order - ha - hb);
                let qa = self.flat_section_to(&pa, room.min(top))?;
                let qb = self.flat_section_to(&pb, room.min(top))?;
                let prod = self.alg.sigma_product(&qa, &qb);
                out = out.add(&prod.map_terms(|k, c| {
                    let mut k2 = k.clone();
                    k2.hbar += ha + hb;
                    vec![(k2, c.clone())]
                }));
            }
        }
        Ok(out.truncate_hbar(self.order))
    }
}
