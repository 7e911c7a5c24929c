//! Localized groupoid cochains in exponential coordinates near the unit space,
//! their coboundary, and the van Est map to Chevalley–Eilenberg cochains.
//!
//! An arrow is `(x, v)` with `s = x` and `t = Fl_v(x)`, the time-one flow of
//! `ρ(v)`. Composition is `(x, v)(Fl_v x, w) = (x, BCH(v, w))`. Cochains of
//! degree `k` are polynomials in the slot variables `v_1, …, v_k ∈ ℝʳ` with
//! coefficients in the base functions, truncated above total slot degree `cap`.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::algebroid::{check_structure, increasing_tuples, AlgebroidForm, AlgebroidPresentation, BaseModel};
use crate::scalars::{BaseFunction, Scalar, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GermError {
    #[error("slot cap {cap} leaves no room for degree {degree}")]
    CapOverflow { degree: usize, cap: u32 },
    #[error("R_X needs a cochain of degree at least 1")]
    DegreeZero,
    #[error("unsupported local model: {0}")]
    Unsupported(String),
    #[error("cochains come from different models")]
    Mismatch,
}

/// Polynomial in `degree · rank` slot variables with base-function coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GermCochain<S> {
    degree: usize,
    rank: usize,
    cap: u32,
    base: BaseModel,
    terms: BTreeMap<Vec<u32>, BaseFunction<S>>,
}

impl<S: Scalar> GermCochain<S> {
    pub fn zero(base: BaseModel, rank: usize, cap: u32, degree: usize) -> Self {
        GermCochain { degree, rank, cap, base, terms: BTreeMap::new() }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, BaseFunction<S>> {
        &self.terms
    }

    fn like(&self, degree: usize) -> Self {
        Self::zero(self.base, self.rank, self.cap, degree)
    }

    /// Adds `f · v^e`; exponents above the cap are dropped.
    pub fn add_term(&mut self, e: Vec<u32>, f: BaseFunction<S>) {
        assert_eq!(e.len(), self.degree * self.rank);
        if e.iter().sum::<u32>() > self.cap || f.is_zero() {
            return;
        }
        let sum = match self.terms.get(&e) {
            Some(g) => g.add(&f),
            None => f,
        };
        if sum.is_zero() {
            self.terms.remove(&e);
        } else {
            self.terms.insert(e, sum);
        }
    }

    /// Slot-independent cochain `f(x)` of the given degree.
    pub fn from_base(base: BaseModel, rank: usize, cap: u32, degree: usize, f: BaseFunction<S>) -> Self {
        let mut out = Self::zero(base, rank, cap, degree);
        out.add_term(vec![0; degree * rank], f);
        out
    }

    /// Coordinate `v_slot^i`.
    pub fn slot_var(base: BaseModel, rank: usize, cap: u32, degree: usize, slot: usize, i: usize) -> Self {
        let mut e = vec![0; degree * rank];
        e[slot * rank + i] = 1;
        let mut out = Self::zero(base, rank, cap, degree);
        out.add_term(e, base.constant(S::one()));
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        let mut out = self.clone();
        for (e, f) in &other.terms {
            out.add_term(e.clone(), f.clone());
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
        let mut out = self.like(self.degree);
        for (e, f) in &self.terms {
            out.add_term(e.clone(), f.scale(c));
        }
        out
    }

    pub fn mul_base(&self, g: &BaseFunction<S>) -> Self {
        let mut out = self.like(self.degree);
        for (e, f) in &self.terms {
            out.add_term(e.clone(), f.mul(g));
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        let mut out = self.like(self.degree);
        for (ea, fa) in &self.terms {
            let da: u32 = ea.iter().sum();
            for (eb, fb) in &other.terms {
                if da + eb.iter().sum::<u32>() > self.cap {
                    continue;
                }
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, fa.mul(fb));
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|f| f.max_abs_coeff()).fold(0.0, f64::max)
    }

    /// Part of total slot degree exactly `d`.
    pub fn homogeneous_part(&self, d: u32) -> Self {
        let mut out = self.like(self.degree);
        for (e, f) in &self.terms {
            if e.iter().sum::<u32>() == d {
                out.add_term(e.clone(), f.clone());
            }
        }
        out
    }

    /// Value at base point `(θ, x)` and slot values `v` (flattened `degree · rank`).
    pub fn eval(&self, theta: &[f64], x: &[f64], v: &[f64]) -> C64 {
        self.terms.iter().fold(C64::new(0.0, 0.0), |acc, (e, f)| {
            let m: f64 = e.iter().zip(v).map(|(p, y)| y.powi(*p as i32)).product();
            acc + f.eval(theta, x) * m
        })
    }

    /// The slot-free coefficient of a degree-0 cochain.
    pub fn base_value(&self) -> BaseFunction<S> {
        self.terms.get(&vec![0; self.degree * self.rank]).cloned().unwrap_or_else(|| self.base.zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Translations of a chart or torus; `ρ = id`, abelian.
    Pair,
    /// Lie algebra with constant structure constants acting through `ρ`.
    Action,
}

/// Exponential-coordinate model of a groupoid near its units.
#[derive(Debug, Clone)]
pub struct LocalGroupoidModel<S> {
    algebroid: AlgebroidPresentation<S>,
    kind: ModelKind,
    cap: u32,
    consts: Vec<Vec<Vec<S>>>,
    bch: Vec<GermCochain<S>>,
}

impl<S: Scalar> LocalGroupoidModel<S> {
    /// Pair model on a chart `ℝⁿ` or torus `Tⁿ` base.
    pub fn pair(base: BaseModel, cap: u32) -> Result<Self, GermError> {
        let a = match base {
            BaseModel::Chart { n, cap: c } => AlgebroidPresentation::tangent_chart(n, c),
            BaseModel::Torus { n, cutoff } => AlgebroidPresentation::tangent_torus(n, cutoff),
            _ => return Err(GermError::Unsupported("pair model needs a chart or torus base".into())),
        };
        Self::build(a, ModelKind::Pair, cap)
    }

    /// Action model; the bracket must have constant coefficients and the
    /// anchor must be a homomorphism.
    pub fn action(a: AlgebroidPresentation<S>, cap: u32) -> Result<Self, GermError> {
        Self::build(a, ModelKind::Action, cap)
    }

    fn build(a: AlgebroidPresentation<S>, kind: ModelKind, cap: u32) -> Result<Self, GermError> {
        let r = a.rank;
        let mut consts = vec![vec![vec![S::zero(); r]; r]; r];
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let f = &a.structure[i][j][k];
                    if !f.is_constant() {
                        return Err(GermError::Unsupported("structure functions must be constant".into()));
                    }
                    consts[i][j][k] = f.constant_term();
                }
            }
        }
        let diags = check_structure(&a, 1e-12);
        if !diags.is_empty() {
            return Err(GermError::Unsupported(format!("structure check failed: {:?}", diags[0].violation)));
        }
        let mut m = LocalGroupoidModel { algebroid: a, kind, cap, consts, bch: vec![] };
        m.bch = m.compute_bch();
        Ok(m)
    }

    pub fn algebroid(&self) -> &AlgebroidPresentation<S> {
        &self.algebroid
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn rank(&self) -> usize {
        self.algebroid.rank
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn zero(&self, degree: usize) -> GermCochain<S> {
        GermCochain::zero(self.algebroid.base, self.rank(), self.cap, degree)
    }

    pub fn from_base(&self, degree: usize, f: BaseFunction<S>) -> GermCochain<S> {
        GermCochain::from_base(self.algebroid.base, self.rank(), self.cap, degree, f)
    }

    pub fn slot_var(&self, degree: usize, slot: usize, i: usize) -> GermCochain<S> {
        GermCochain::slot_var(self.algebroid.base, self.rank(), self.cap, degree, slot, i)
    }

    /// Components of `BCH(v_1, v_2)` as degree-2 cochains.
    pub fn bch(&self) -> &[GermCochain<S>] {
        &self.bch
    }

    /// `[A, B]^k = c^k_{ij} A^i B^j` for algebra-valued polynomials.
    fn bracket(&self, a: &[GermCochain<S>], b: &[GermCochain<S>]) -> Vec<GermCochain<S>> {
        let r = self.rank();
        let mut out = vec![a[0].like(a[0].degree); r];
        for i in 0..r {
            for j in 0..r {
                if (0..r).all(|k| self.consts[i][j][k].is_zero()) {
                    continue;
                }
                let p = a[i].mul(&b[j]);
                if p.is_zero() {
                    continue;
                }
                for k in 0..r {
                    if !self.consts[i][j][k].is_zero() {
                        out[k] = out[k].add(&p.scale(&self.consts[i][j][k]));
                    }
                }
            }
        }
        out
    }

    // Z(t) = BCH(v, t w) solves Z' = ad_Z / (1 - e^{-ad_Z}) w; the t-degree of a
    // term equals its w-degree, so n Z_n is the w-degree-n part of the right side
    // evaluated on Z_0 + … + Z_{n-1}.
    fn compute_bch(&self) -> Vec<GermCochain<S>> {
        let r = self.rank();
        let cap = self.cap as usize;
        // x / (1 - e^{-x}) by inverting Σ (-1)^m x^m / (m+1)!
        let mut den = vec![S::zero(); cap + 1];
        let mut fact = S::one();
        for m in 0..=cap {
            fact = fact * S::from_i64(m as i64 + 1);
            let c = S::one() / fact.clone();
            den[m] = if m % 2 == 0 { c } else { -c };
        }
        let mut b = vec![S::zero(); cap + 1];
        b[0] = S::one();
        for m in 1..=cap {
            let s = (1..=m).fold(S::zero(), |acc, j| acc + den[j].clone() * b[m - j].clone());
            b[m] = -s;
        }
        let v: Vec<GermCochain<S>> = (0..r).map(|i| self.slot_var(2, 0, i)).collect();
        let w: Vec<GermCochain<S>> = (0..r).map(|i| self.slot_var(2, 1, i)).collect();
        let mut z = v.clone();
        for n in 1..=cap {
            let mut rhs = w.clone();
            let mut ad = w.clone();
            for bm in b.iter().skip(1) {
                ad = self.bracket(&z, &ad);
                if ad.iter().all(|p| p.is_zero()) {
                    break;
                }
                for k in 0..r {
                    rhs[k] = rhs[k].add(&ad[k].scale(bm));
                }
            }
            let inv_n = S::from_ratio(1, n as i64);
            for k in 0..r {
                let mut part = z[k].like(2);
                for (e, f) in rhs[k].terms() {
                    if e[r..].iter().sum::<u32>() as usize == n {
                        part.add_term(e.clone(), f.scale(&inv_n));
                    }
                }
                z[k] = z[k].add(&part);
            }
        }
        z
    }

    /// Applies the derivation `ρ(e_i)` to every coefficient.
    pub fn derive(&self, phi: &GermCochain<S>, i: usize) -> GermCochain<S> {
        let mut out = phi.like(phi.degree);
        for (e, f) in &phi.terms {
            out.add_term(e.clone(), self.algebroid.anchor_apply(i, f));
        }
        out
    }

    /// `f(Fl_{v_slot}(x)) = Σ_n (v_slot·ρ)^n f / n!` as a degree-`degree` cochain.
    pub fn flow_pullback(&self, f: &BaseFunction<S>, degree: usize, slot: usize) -> GermCochain<S> {
        let r = self.rank();
        let vars: Vec<GermCochain<S>> = (0..r).map(|i| self.slot_var(degree, slot, i)).collect();
        let mut term = self.from_base(degree, f.clone());
        let mut out = term.clone();
        for n in 1..=self.cap {
            let mut next = self.zero(degree);
            for (i, var) in vars.iter().enumerate() {
                next = next.add(&self.derive(&term, i).mul(var));
            }
            term = next.scale(&S::from_ratio(1, n as i64));
            if term.is_zero() {
                break;
            }
            out = out.add(&term);
        }
        out
    }

    /// `φ(X(x), U_1, …, U_k)` with `X = Fl_{v_slot}` when `flow_slot` is set and
    /// slot `j`, component `i` replaced by `umap[j][i]`.
    fn substitute(
        &self,
        phi: &GermCochain<S>,
        degree: usize,
        flow_slot: Option<usize>,
        umap: &[Vec<GermCochain<S>>],
    ) -> GermCochain<S> {
        let r = self.rank();
        let mut powers: HashMap<(usize, u32), GermCochain<S>> = HashMap::new();
        let mut out = self.zero(degree);
        for (e, f) in &phi.terms {
            let mut mono = self.from_base(degree, self.algebroid.base.constant(S::one()));
            for (pos, &p) in e.iter().enumerate() {
                if p == 0 {
                    continue;
                }
                let key = (pos, p);
                if !powers.contains_key(&key) {
                    let base = &umap[pos / r][pos % r];
                    let mut acc = base.clone();
                    for _ in 1..p {
                        acc = acc.mul(base);
                    }
                    powers.insert(key, acc);
                }
                mono = mono.mul(&powers[&key]);
                if mono.is_zero() {
                    break;
                }
            }
            if mono.is_zero() {
                continue;
            }
            let coeff = match flow_slot {
                Some(s) => self.flow_pullback(f, degree, s),
                None => self.from_base(degree, f.clone()),
            };
            out = out.add(&coeff.mul(&mono));
        }
        out
    }

    /// Pull-back of a degree-`k` cochain along the face `∂_i : G_{k+1} → G_k`, `k ≥ 1`.
    pub fn face_pullback(&self, phi: &GermCochain<S>, i: usize) -> GermCochain<S> {
        let k = phi.degree;
        let r = self.rank();
        let nd = k + 1;
        let slot = |j: usize| -> Vec<GermCochain<S>> { (0..r).map(|c| self.slot_var(nd, j, c)).collect() };
        let lift_bch = || -> Vec<GermCochain<S>> {
            // BCH(v_{i-1}, v_i) in 0-based slots i-1, i of the new tuple
            let pair = [slot(i - 1), slot(i)];
            let umap: Vec<Vec<GermCochain<S>>> = pair.to_vec();
            self.bch.iter().map(|b| self.substitute(b, nd, None, &umap)).collect()
        };
        let umap: Vec<Vec<GermCochain<S>>> = if i == 0 {
            (0..k).map(|j| slot(j + 1)).collect()
        } else if i == nd {
            (0..k).map(slot).collect()
        } else {
            let mut m: Vec<Vec<GermCochain<S>>> = (0..i - 1).map(slot).collect();
            m.push(lift_bch());
            m.extend((i..k).map(|j| slot(j + 1)));
            m
        };
        self.substitute(phi, nd, if i == 0 { Some(0) } else { None }, &umap)
    }

    /// Coboundary; `dφ = φ∘s - φ∘t` in degree 0 and `Σ_i (-1)^i φ∘∂_i` above.
    pub fn germ_diff(&self, phi: &GermCochain<S>) -> Result<GermCochain<S>, GermError> {
        if phi.cap != self.cap || phi.rank != self.rank() {
            return Err(GermError::Mismatch);
        }
        let k = phi.degree;
        if (k + 1) as u32 > self.cap {
            return Err(GermError::CapOverflow { degree: k + 1, cap: self.cap });
        }
        if k == 0 {
            let f = phi.base_value();
            return Ok(self.from_base(1, f.clone()).sub(&self.flow_pullback(&f, 1, 0)));
        }
        let mut out = self.zero(k + 1);
        for i in 0..=k + 1 {
            let t = self.face_pullback(phi, i);
            out = if i % 2 == 0 { out.add(&t) } else { out.sub(&t) };
        }
        Ok(out)
    }

    /// `R_X φ` for `X = Σ_i X^i e_i`: derivative of the first slot at the unit along the
    /// curve `ε ↦ (Fl_{εX}(y), -εX)` in the target fiber over `y`,
    /// `R_X φ(y, v_2, …) = ρ(X)φ(y, 0, v_2, …) - X^i ∂_{v_1^i} φ(y, 0, v_2, …)`.
    pub fn van_est_r(&self, x: &[BaseFunction<S>], phi: &GermCochain<S>) -> Result<GermCochain<S>, GermError> {
        let k = phi.degree;
        if k == 0 {
            return Err(GermError::DegreeZero);
        }
        let r = self.rank();
        let mut out = self.zero(k - 1);
        for (e, f) in &phi.terms {
            let first: u32 = e[..r].iter().sum();
            let rest = e[r..].to_vec();
            if first == 0 {
                for (i, xi) in x.iter().enumerate() {
                    if !xi.is_zero() {
                        out.add_term(rest.clone(), xi.mul(&self.algebroid.anchor_apply(i, f)));
                    }
                }
            } else if first == 1 {
                let i = e[..r].iter().position(|&p| p == 1).unwrap();
                out.add_term(rest, x[i].mul(f).neg());
            }
        }
        Ok(out)
    }

    /// `R_{e_i}`.
    pub fn van_est_r_basis(&self, i: usize, phi: &GermCochain<S>) -> Result<GermCochain<S>, GermError> {
        let x = self.algebroid.basis_section(i);
        self.van_est_r(&x, phi)
    }

    /// `Φ(φ)(e_{i_1}, …, e_{i_k}) = Σ_σ sgn σ R_{e_{i_σ(1)}} ⋯ R_{e_{i_σ(k)}} φ`,
    /// with the rightmost operator applied first.
    pub fn van_est_phi(&self, phi: &GermCochain<S>) -> Result<AlgebroidForm<S>, GermError> {
        let k = phi.degree;
        let r = self.rank();
        let mut out = AlgebroidForm::zero(k);
        if k > r {
            return Ok(out);
        }
        for tuple in increasing_tuples(r, k) {
            let mut acc = self.algebroid.zero_fn();
            for (perm, sign) in permutations(k) {
                let mut cur = phi.clone();
                for &p in perm.iter().rev() {
                    cur = self.van_est_r_basis(tuple[p], &cur)?;
                }
                let v = cur.base_value();
                acc = if sign > 0 { acc.add(&v) } else { acc.sub(&v) };
            }
            if !acc.is_zero() {
                out.add_at(&tuple, acc);
            }
        }
        Ok(out)
    }
}

/// All permutations of `0..k` with their signs.
pub fn permutations(k: usize) -> Vec<(Vec<usize>, i64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, k: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, k, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = vec![];
    rec(&mut vec![], &mut vec![false; k], k, &mut out);
    out.into_iter()
        .map(|p| {
            let mut sign = 1;
            for i in 0..k {
                for j in i + 1..k {
                    if p[i] > p[j] {
                        sign = -sign;
                    }
                }
            }
            (p, sign)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::ce_differential;
    use crate::scalars::{cq, Cq};
    use num::One;

    #[test]
    fn degree_zero_pair_model() {
        let base = BaseModel::Chart { n: 1, cap: 6 };
        let m = LocalGroupoidModel::<Cq>::pair(base, 4).unwrap();
        let x = base.zero::<Cq>().coordinate(0);
        let f = x.mul(&x);
        let df = m.germ_diff(&m.from_base(0, f)).unwrap();
        // x² - (x+v)² = -2xv - v²
        let mut expect = m.zero(1);
        expect.add_term(vec![1], x.scale(&cq(-2, 1)));
        expect.add_term(vec![2], base.constant(cq(-1, 1)));
        assert_eq!(df, expect);
        assert!(m.germ_diff(&m.from_base(0, base.constant(cq(3, 1)))).unwrap().is_zero());
    }

    #[test]
    fn bch_low_orders_su2() {
        let m = LocalGroupoidModel::<Cq>::action(AlgebroidPresentation::su2(), 3).unwrap();
        // BCH(e1, e2) coefficient of v^1 w^2 in component 3 is 1/2
        let z = m.bch();
        assert_eq!(z[2].terms()[&vec![1, 0, 0, 0, 1, 0]].constant_term(), cq(1, 2));
        assert_eq!(z[0].terms()[&vec![1, 0, 0, 0, 0, 0]].constant_term(), cq(1, 1));
    }

    #[test]
    fn r_x_on_linear_and_quadratic() {
        let base = BaseModel::Chart { n: 1, cap: 4 };
        let m = LocalGroupoidModel::<Cq>::pair(base, 4).unwrap();
        let v = m.slot_var(1, 0, 0);
        let r = m.van_est_r_basis(0, &v.scale(&cq(3, 1))).unwrap();
        assert_eq!(r.base_value(), base.constant(cq(-3, 1)));
        assert!(m.van_est_r_basis(0, &v.mul(&v).scale(&cq(1, 2))).unwrap().is_zero());
        assert!(m.van_est_r_basis(0, &m.from_base(0, base.constant(Cq::one()))).is_err());
    }

    #[test]
    fn chain_map_degree_zero() {
        let base = BaseModel::Chart { n: 1, cap: 6 };
        let m = LocalGroupoidModel::<Cq>::pair(base, 4).unwrap();
        let x = base.zero::<Cq>().coordinate(0);
        let f = x.pow(3).add(&x);
        let lhs = m.van_est_phi(&m.germ_diff(&m.from_base(0, f.clone())).unwrap()).unwrap();
        let rhs = ce_differential(m.algebroid(), &AlgebroidForm::monomial(&[], f)).unwrap();
        assert_eq!(lhs, rhs);
    }
}
