//! Lie algebroid presentations over a point, a chart or a torus; the
//! Chevalley–Eilenberg complex, its cohomology, the modular cocycle and the
//! pull-back algebroid over `A*`.

use std::collections::BTreeMap;

use num::{One, Zero};
use thiserror::Error;

use crate::linalg;
use crate::scalars::{BaseFunction, Cq, Mono, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebroidError {
    #[error("form degree {degree} exceeds rank {rank}")]
    DegreeOverflow { degree: usize, rank: usize },
    #[error("truncated complex has dimension {dim}, above the cap {cap}")]
    ComplexTooLarge { dim: usize, cap: usize },
    #[error("cohomology needs a point or torus base")]
    UnsupportedBase,
    #[error("density vanishes or is not invertible in the base ring")]
    VanishingDensity,
    #[error("source presentation fails its structure check: {0}")]
    Malformed(String),
}

/// Base of the algebroid. `Product` is a torus times a chart and arises as
/// the base `A*` of pull-back algebroids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseModel {
    Point,
    Chart { n: usize, cap: u32 },
    Torus { n: usize, cutoff: i64 },
    Product { nt: usize, cutoff: i64, np: usize, cap: u32 },
}

impl BaseModel {
    pub fn nt(&self) -> usize {
        match *self {
            BaseModel::Torus { n, .. } => n,
            BaseModel::Product { nt, .. } => nt,
            _ => 0,
        }
    }

    pub fn np(&self) -> usize {
        match *self {
            BaseModel::Chart { n, .. } => n,
            BaseModel::Product { np, .. } => np,
            _ => 0,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nt() + self.np()
    }

    pub fn cutoff(&self) -> Option<i64> {
        match *self {
            BaseModel::Torus { cutoff, .. } | BaseModel::Product { cutoff, .. } => Some(cutoff),
            _ => None,
        }
    }

    pub fn cap(&self) -> Option<u32> {
        match *self {
            BaseModel::Chart { cap, .. } | BaseModel::Product { cap, .. } => Some(cap),
            _ => None,
        }
    }

    pub fn zero<S: Scalar>(&self) -> BaseFunction<S> {
        BaseFunction::zero(self.nt(), self.np(), self.cutoff(), self.cap())
    }

    pub fn constant<S: Scalar>(&self, c: S) -> BaseFunction<S> {
        BaseFunction::constant(c, self.nt(), self.np(), self.cutoff(), self.cap())
    }

    pub fn with_cutoff(&self, k: i64) -> Self {
        match *self {
            BaseModel::Torus { n, .. } => BaseModel::Torus { n, cutoff: k },
            BaseModel::Product { nt, np, cap, .. } => BaseModel::Product { nt, cutoff: k, np, cap },
            other => other,
        }
    }
}

/// Anchor `ρ^a_i` and structure functions `c^k_{ij}` in a fixed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebroidPresentation<S> {
    pub base: BaseModel,
    pub rank: usize,
    /// `anchor[i][a]`: component of `ρ(e_i)` along base variable `a`
    /// (torus angles first, then chart coordinates).
    pub anchor: Vec<Vec<BaseFunction<S>>>,
    /// `structure[i][j][k] = c^k_{ij}`.
    pub structure: Vec<Vec<Vec<BaseFunction<S>>>>,
}

impl<S: Scalar> AlgebroidPresentation<S> {
    pub fn zero(base: BaseModel, rank: usize) -> Self {
        let z = base.zero::<S>();
        Self {
            base,
            rank,
            anchor: vec![vec![z.clone(); base.nvars()]; rank],
            structure: vec![vec![vec![z; rank]; rank]; rank],
        }
    }

    pub fn abelian(rank: usize) -> Self {
        Self::zero(BaseModel::Point, rank)
    }

    /// Lie algebra over a point from nonzero `c^k_{ij}` with `i < j`;
    /// antisymmetric partners are filled in.
    pub fn lie_algebra(rank: usize, constants: &[(usize, usize, usize, S)]) -> Self {
        let mut a = Self::zero(BaseModel::Point, rank);
        for (i, j, k, c) in constants {
            a.structure[*i][*j][*k] = BaseModel::Point.constant(c.clone());
            a.structure[*j][*i][*k] = BaseModel::Point.constant(-c.clone());
        }
        a
    }

    /// `[e_i, e_j] = ε_{ijk} e_k`.
    pub fn su2() -> Self {
        let one = S::one();
        Self::lie_algebra(3, &[(0, 1, 2, one.clone()), (1, 2, 0, one.clone()), (0, 2, 1, -one)])
    }

    /// `[e_1, e_2] = e_3`.
    pub fn heisenberg() -> Self {
        Self::lie_algebra(3, &[(0, 1, 2, S::one())])
    }

    /// `[e_1, e_2] = e_2`.
    pub fn affine() -> Self {
        Self::lie_algebra(2, &[(0, 1, 1, S::one())])
    }

    /// Tangent algebroid of `Tⁿ` in the frame `∂/∂θ_a`.
    pub fn tangent_torus(n: usize, cutoff: i64) -> Self {
        let base = BaseModel::Torus { n, cutoff };
        let mut a = Self::zero(base, n);
        for i in 0..n {
            a.anchor[i][i] = base.constant(S::one());
        }
        a
    }

    /// Tangent algebroid of `ℝⁿ` in the frame `∂/∂x_a`.
    pub fn tangent_chart(n: usize, cap: u32) -> Self {
        let base = BaseModel::Chart { n, cap };
        let mut a = Self::zero(base, n);
        for i in 0..n {
            a.anchor[i][i] = base.constant(S::one());
        }
        a
    }

    pub fn zero_fn(&self) -> BaseFunction<S> {
        self.base.zero()
    }

    /// `ρ(e_i) f`.
    pub fn anchor_apply(&self, i: usize, f: &BaseFunction<S>) -> BaseFunction<S> {
        let mut out = self.zero_fn();
        for (a, comp) in self.anchor[i].iter().enumerate() {
            if !comp.is_zero() {
                out = out.add(&comp.mul(&f.d(a)));
            }
        }
        out
    }

    /// Coefficients of `[Σ f_i e_i, Σ g_j e_j]`.
    pub fn bracket(&self, f: &[BaseFunction<S>], g: &[BaseFunction<S>]) -> Vec<BaseFunction<S>> {
        let r = self.rank;
        let mut out = vec![self.zero_fn(); r];
        for i in 0..r {
            for j in 0..r {
                let fg = f[i].mul(&g[j]);
                if !fg.is_zero() {
                    for k in 0..r {
                        out[k] = out[k].add(&fg.mul(&self.structure[i][j][k]));
                    }
                }
            }
            // Leibniz terms: f_i ρ(e_i) g_j e_j − g_i ρ(e_i) f_j e_j
            for j in 0..r {
                if !f[i].is_zero() {
                    out[j] = out[j].add(&f[i].mul(&self.anchor_apply(i, &g[j])));
                }
                if !g[i].is_zero() {
                    out[j] = out[j].sub(&g[i].mul(&self.anchor_apply(i, &f[j])));
                }
            }
        }
        out
    }

    pub fn basis_section(&self, i: usize) -> Vec<BaseFunction<S>> {
        let mut v = vec![self.zero_fn(); self.rank];
        v[i] = self.base.constant(S::one());
        v
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T + Copy) -> AlgebroidPresentation<T> {
        AlgebroidPresentation {
            base: self.base,
            rank: self.rank,
            anchor: self.anchor.iter().map(|row| row.iter().map(|x| x.map(f)).collect()).collect(),
            structure: self
                .structure
                .iter()
                .map(|a| a.iter().map(|b| b.iter().map(|x| x.map(f)).collect()).collect())
                .collect(),
        }
    }

    pub fn with_cutoff(&self, k: i64) -> Self {
        let base = self.base.with_cutoff(k);
        let lim = |f: &BaseFunction<S>| f.clone().with_limits(base.cutoff(), base.cap());
        Self {
            base,
            rank: self.rank,
            anchor: self.anchor.iter().map(|row| row.iter().map(lim).collect()).collect(),
            structure: self.structure.iter().map(|a| a.iter().map(|b| b.iter().map(lim).collect()).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Antisymmetry { i: usize, j: usize, k: usize },
    Anchor { i: usize, j: usize, a: usize },
    Jacobi { i: usize, j: usize, k: usize, l: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub violation: Violation,
    pub residual: f64,
}

fn residual_of<S: Scalar>(f: &BaseFunction<S>, tol: f64) -> Option<f64> {
    let m = f.max_abs_coeff();
    let bad = if S::is_exact() { !f.is_zero() } else { m > tol };
    bad.then_some(m)
}

/// Lists violated identities: antisymmetry of `c`, `ρ[X,Y] = [ρX,ρY]` and
/// Jacobi on basis sections. `tol` is ignored in exact mode.
pub fn check_structure<S: Scalar>(a: &AlgebroidPresentation<S>, tol: f64) -> Vec<Diagnostic> {
    let r = a.rank;
    let nv = a.base.nvars();
    let mut out = vec![];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let s = a.structure[i][j][k].add(&a.structure[j][i][k]);
                if let Some(res) = residual_of(&s, tol) {
                    out.push(Diagnostic { violation: Violation::Antisymmetry { i, j, k }, residual: res });
                }
            }
        }
    }
    for i in 0..r {
        for j in (i + 1)..r {
            for v in 0..nv {
                let mut lhs = a.zero_fn();
                for k in 0..r {
                    lhs = lhs.add(&a.structure[i][j][k].mul(&a.anchor[k][v]));
                }
                let rhs = a.anchor_apply(i, &a.anchor[j][v]).sub(&a.anchor_apply(j, &a.anchor[i][v]));
                if let Some(res) = residual_of(&lhs.sub(&rhs), tol) {
                    out.push(Diagnostic { violation: Violation::Anchor { i, j, a: v }, residual: res });
                }
            }
        }
    }
    for i in 0..r {
        for j in (i + 1)..r {
            for k in (j + 1)..r {
                let e = |x| a.basis_section(x);
                let t1 = a.bracket(&a.bracket(&e(i), &e(j)), &e(k));
                let t2 = a.bracket(&a.bracket(&e(j), &e(k)), &e(i));
                let t3 = a.bracket(&a.bracket(&e(k), &e(i)), &e(j));
                for l in 0..r {
                    let s = t1[l].add(&t2[l]).add(&t3[l]);
                    if let Some(res) = residual_of(&s, tol) {
                        out.push(Diagnostic { violation: Violation::Jacobi { i, j, k, l }, residual: res });
                    }
                }
            }
        }
    }
    out
}

/// Scalar-valued algebroid form with strictly increasing index keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebroidForm<S> {
    pub degree: usize,
    coeffs: BTreeMap<Vec<usize>, BaseFunction<S>>,
}

/// Sign of the permutation sorting `idx`, or `None` on a repeated index.
pub fn sort_sign(idx: &[usize]) -> Option<(Vec<usize>, i64)> {
    let mut v = idx.to_vec();
    let mut sign = 1;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return None;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

/// All strictly increasing `k`-subsets of `0..r`.
pub fn increasing_tuples(r: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, r: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..r {
            cur.push(i);
            rec(i + 1, r, k, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    rec(0, r, k, &mut vec![], &mut out);
    out
}

impl<S: Scalar> AlgebroidForm<S> {
    pub fn zero(degree: usize) -> Self {
        Self { degree, coeffs: BTreeMap::new() }
    }

    /// `f ξ^{i_1} ∧ … ∧ ξ^{i_k}` for any index order.
    pub fn monomial(idx: &[usize], f: BaseFunction<S>) -> Self {
        let mut out = Self::zero(idx.len());
        out.add_at(idx, f);
        out
    }

    pub fn add_at(&mut self, idx: &[usize], f: BaseFunction<S>) {
        assert_eq!(idx.len(), self.degree);
        let Some((key, sign)) = sort_sign(idx) else { return };
        let f = if sign < 0 { f.neg() } else { f };
        let sum = match self.coeffs.get(&key) {
            Some(g) => g.add(&f),
            None => f,
        };
        if sum.is_zero() {
            self.coeffs.remove(&key);
        } else {
            self.coeffs.insert(key, sum);
        }
    }

    /// `α(e_{i_1}, …, e_{i_k})` for arbitrary indices.
    pub fn eval(&self, idx: &[usize], zero: &BaseFunction<S>) -> BaseFunction<S> {
        match sort_sign(idx) {
            None => zero.clone(),
            Some((key, sign)) => match self.coeffs.get(&key) {
                None => zero.clone(),
                Some(f) if sign > 0 => f.clone(),
                Some(f) => f.neg(),
            },
        }
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<usize>, BaseFunction<S>> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        let mut out = self.clone();
        for (k, f) in &other.coeffs {
            out.add_at(k, f.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        Self { degree: self.degree, coeffs: self.coeffs.iter().map(|(k, f)| (k.clone(), f.neg())).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale_fn(&self, g: &BaseFunction<S>) -> Self {
        let mut out = Self::zero(self.degree);
        for (k, f) in &self.coeffs {
            out.add_at(k, f.mul(g));
        }
        out
    }

    pub fn wedge(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.degree + other.degree);
        for (ka, fa) in &self.coeffs {
            for (kb, fb) in &other.coeffs {
                let mut idx = ka.clone();
                idx.extend_from_slice(kb);
                out.add_at(&idx, fa.mul(fb));
            }
        }
        out
    }

    /// Largest coefficient magnitude, for float-mode residuals.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().map(|f| f.max_abs_coeff()).fold(0.0, f64::max)
    }
}

/// Chevalley–Eilenberg differential with first-sum weight `(−1)^{i+1}` and
/// bracket-sum weight `(−1)^{i+j}` (1-based positions).
pub fn ce_differential<S: Scalar>(
    a: &AlgebroidPresentation<S>,
    alpha: &AlgebroidForm<S>,
) -> Result<AlgebroidForm<S>, AlgebroidError> {
    let k = alpha.degree;
    if k + 1 > a.rank {
        if k > a.rank {
            return Err(AlgebroidError::DegreeOverflow { degree: k, rank: a.rank });
        }
        return Ok(AlgebroidForm::zero(k + 1));
    }
    let zero = a.zero_fn();
    let mut out = AlgebroidForm::zero(k + 1);
    for tuple in increasing_tuples(a.rank, k + 1) {
        let mut val = zero.clone();
        for (pos, &ei) in tuple.iter().enumerate() {
            let rest: Vec<usize> = tuple.iter().enumerate().filter(|(p, _)| *p != pos).map(|(_, x)| *x).collect();
            let term = a.anchor_apply(ei, &alpha.eval(&rest, &zero));
            val = if pos % 2 == 0 { val.add(&term) } else { val.sub(&term) };
        }
        for p in 0..tuple.len() {
            for q in (p + 1)..tuple.len() {
                let rest: Vec<usize> =
                    tuple.iter().enumerate().filter(|(x, _)| *x != p && *x != q).map(|(_, x)| *x).collect();
                let mut term = zero.clone();
                for m in 0..a.rank {
                    let c = &a.structure[tuple[p]][tuple[q]][m];
                    if c.is_zero() {
                        continue;
                    }
                    let mut idx = vec![m];
                    idx.extend_from_slice(&rest);
                    term = term.add(&c.mul(&alpha.eval(&idx, &zero)));
                }
                val = if (p + q) % 2 == 0 { val.add(&term) } else { val.sub(&term) };
            }
        }
        if !val.is_zero() {
            out.add_at(&tuple, val);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeReport {
    pub degree: usize,
    pub dim_cochains: usize,
    pub dim_kernel: usize,
    pub dim_image: usize,
    pub betti: usize,
    pub stable: bool,
    pub representatives: Vec<AlgebroidForm<Cq>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohomologyReport {
    pub degrees: Vec<DegreeReport>,
    /// Fourier cutoffs used (empty for a point base).
    pub cutoffs: Vec<i64>,
    pub truncated: bool,
}

impl CohomologyReport {
    pub fn betti(&self) -> Vec<usize> {
        self.degrees.iter().map(|d| d.betti).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Truncation {
    /// Torus cutoff `K`; the report also recomputes at `K + 2`.
    pub cutoff: i64,
    /// Upper bound on the total dimension of the truncated complex.
    pub max_dim: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { cutoff: 2, max_dim: 4000 }
    }
}

struct CochainBasis {
    items: Vec<(Vec<usize>, Mono)>,
    index: BTreeMap<(Vec<usize>, Mono), usize>,
}

fn cochain_basis(a: &AlgebroidPresentation<Cq>, k: usize) -> CochainBasis {
    let nt = a.base.nt();
    let cutoff = a.base.cutoff().unwrap_or(0);
    let mut waves: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..nt {
        waves = waves
            .into_iter()
            .flat_map(|w| {
                (-cutoff..=cutoff).map(move |kk| {
                    let mut w2 = w.clone();
                    w2.push(kk);
                    w2
                })
            })
            .collect();
    }
    let mut items = vec![];
    for t in increasing_tuples(a.rank, k) {
        for w in &waves {
            items.push((t.clone(), Mono { k: w.clone(), e: vec![] }));
        }
    }
    let index = items.iter().cloned().enumerate().map(|(i, x)| (x, i)).collect();
    CochainBasis { items, index }
}

struct Truncated {
    dims: Vec<usize>,
    kernels: Vec<Vec<Vec<Cq>>>,
    ranks: Vec<usize>,
    bases: Vec<CochainBasis>,
    images: Vec<Vec<Vec<Cq>>>,
    truncated: bool,
}

fn differential_matrix(a: &AlgebroidPresentation<Cq>, from: &CochainBasis, to: &CochainBasis, k: usize) -> (Vec<Vec<Cq>>, bool) {
    let mut rows = vec![vec![Cq::zero(); from.items.len()]; to.items.len()];
    let mut truncated = false;
    for (col, (t, m)) in from.items.iter().enumerate() {
        let mut f = a.zero_fn();
        f.add_term(m.clone(), Cq::one());
        let d = ce_differential(a, &AlgebroidForm::monomial(t, f)).expect("degree checked");
        for (key, g) in d.coeffs() {
            truncated |= g.truncated();
            for (mono, c) in g.terms() {
                if let Some(&row) = to.index.get(&(key.clone(), mono.clone())) {
                    rows[row][col] = c.clone();
                } else {
                    truncated = true;
                }
            }
        }
    }
    let _ = k;
    (rows, truncated)
}

fn truncated_complex(a: &AlgebroidPresentation<Cq>, max_dim: usize) -> Result<Truncated, AlgebroidError> {
    let r = a.rank;
    let bases: Vec<CochainBasis> = (0..=r).map(|k| cochain_basis(a, k)).collect();
    let dims: Vec<usize> = bases.iter().map(|b| b.items.len()).collect();
    let total: usize = dims.iter().sum();
    if total > max_dim {
        return Err(AlgebroidError::ComplexTooLarge { dim: total, cap: max_dim });
    }
    let mut ranks = vec![];
    let mut kernels = vec![];
    let mut images = vec![];
    let mut truncated = false;
    for k in 0..=r {
        if k < r {
            let (m, tr) = differential_matrix(a, &bases[k], &bases[k + 1], k);
            truncated |= tr;
            ranks.push(linalg::rank_bareiss(&m));
            kernels.push(linalg::nullspace(&m, dims[k]));
            // columns of m span the image in degree k+1
            let cols: Vec<Vec<Cq>> = (0..dims[k]).map(|c| m.iter().map(|row| row[c].clone()).collect()).collect();
            images.push(cols);
        } else {
            ranks.push(0);
            kernels.push((0..dims[k]).map(|i| unit(dims[k], i)).collect());
        }
    }
    Ok(Truncated { dims, kernels, ranks, bases, images, truncated })
}

fn unit(n: usize, i: usize) -> Vec<Cq> {
    let mut v = vec![Cq::zero(); n];
    v[i] = Cq::one();
    v
}

fn representatives(tc: &Truncated, k: usize, a: &AlgebroidPresentation<Cq>) -> Vec<AlgebroidForm<Cq>> {
    let mut span: Vec<Vec<Cq>> = if k == 0 { vec![] } else { tc.images[k - 1].clone() };
    let mut rank = linalg::rank_bareiss(&span);
    let mut reps = vec![];
    for v in &tc.kernels[k] {
        span.push(v.clone());
        let r2 = linalg::rank_bareiss(&span);
        if r2 > rank {
            rank = r2;
            let mut form = AlgebroidForm::zero(k);
            for (i, c) in v.iter().enumerate() {
                if !c.is_zero() {
                    let (t, m) = &tc.bases[k].items[i];
                    let mut f = a.zero_fn();
                    f.add_term(m.clone(), c.clone());
                    form.add_at(t, f);
                }
            }
            reps.push(form);
        } else {
            span.pop();
        }
    }
    reps
}

/// Exact cohomology of the (Fourier-truncated) CE complex. Torus bases are
/// evaluated at cutoffs `K` and `K + 2`; degrees whose Betti numbers differ
/// are reported unstable.
pub fn ce_cohomology(a: &AlgebroidPresentation<Cq>, trunc: Truncation) -> Result<CohomologyReport, AlgebroidError> {
    match a.base {
        BaseModel::Point | BaseModel::Torus { .. } => {}
        _ => return Err(AlgebroidError::UnsupportedBase),
    }
    let is_torus = matches!(a.base, BaseModel::Torus { .. });
    let primary = if is_torus { a.with_cutoff(trunc.cutoff) } else { a.clone() };
    let tc = truncated_complex(&primary, trunc.max_dim)?;
    let betti_of = |t: &Truncated| -> Vec<usize> {
        (0..t.dims.len())
            .map(|k| {
                let ker = t.dims[k] - t.ranks[k];
                let im = if k == 0 { 0 } else { t.ranks[k - 1] };
                ker - im
            })
            .collect()
    };
    let b1 = betti_of(&tc);
    let (b2, cutoffs, tr2) = if is_torus {
        let t2 = truncated_complex(&a.with_cutoff(trunc.cutoff + 2), trunc.max_dim)?;
        let tr = t2.truncated;
        (betti_of(&t2), vec![trunc.cutoff, trunc.cutoff + 2], tr)
    } else {
        (b1.clone(), vec![], false)
    };
    let degrees = (0..tc.dims.len())
        .map(|k| DegreeReport {
            degree: k,
            dim_cochains: tc.dims[k],
            dim_kernel: tc.dims[k] - tc.ranks[k],
            dim_image: if k == 0 { 0 } else { tc.ranks[k - 1] },
            betti: b1[k],
            stable: b1[k] == b2[k],
            representatives: representatives(&tc, k, &primary),
        })
        .collect();
    Ok(CohomologyReport { degrees, cutoffs, truncated: tc.truncated || tr2 })
}

/// Trivializing data for `∧^top T*M ⊗ ∧^top A`.
#[derive(Debug, Clone, PartialEq)]
pub enum Density<S> {
    /// `Ω` itself; must be invertible in the base ring.
    Function(BaseFunction<S>),
    /// `Ω = e^η`, given by `η`.
    Exponential(BaseFunction<S>),
}

/// Degree-1 modular cocycle
/// `θ_Ω(e_j) = Σ_i c^i_{ij} − Σ_a ∂_a ρ^a_j − ρ(e_j) log Ω`,
/// so that `θ_Ω − θ_{e^η Ω} = dη`.
pub fn modular_cocycle<S: Scalar>(
    a: &AlgebroidPresentation<S>,
    omega: &Density<S>,
) -> Result<AlgebroidForm<S>, AlgebroidError> {
    let mut out = AlgebroidForm::zero(1);
    for j in 0..a.rank {
        let mut v = a.zero_fn();
        for i in 0..a.rank {
            v = v.add(&a.structure[i][j][i]);
        }
        for (var, comp) in a.anchor[j].iter().enumerate() {
            v = v.sub(&comp.d(var));
        }
        let log_term = match omega {
            Density::Exponential(eta) => a.anchor_apply(j, eta),
            Density::Function(w) => {
                let inv = w.chart_inverse().ok_or(AlgebroidError::VanishingDensity)?;
                a.anchor_apply(j, w).mul(&inv)
            }
        };
        v = v.sub(&log_term);
        out.add_at(&[j], v);
    }
    Ok(out)
}

/// `π!A` over `A*`: frame `lift(e_i)` (indices `0..r`) followed by the
/// vertical sections `∂/∂ξ_j` (indices `r..2r`). Fiber coordinates are
/// appended after the chart coordinates of the source base.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackAlgebroid<S> {
    pub source: AlgebroidPresentation<S>,
    pub algebroid: AlgebroidPresentation<S>,
    /// `Θ(lift e_i, ∂_{ξ_j}) = δ_{ij}`, `Θ(lift e_i, lift e_j) = ⟨ξ, [e_i,e_j]⟩`.
    pub theta: AlgebroidForm<S>,
    /// Coefficients of the Euler section in the frame.
    pub euler: Vec<BaseFunction<S>>,
}

impl<S: Scalar> PullbackAlgebroid<S> {
    pub fn rank(&self) -> usize {
        self.source.rank
    }

    /// Base-variable index of `ξ_j` in the `A*` coordinate list.
    pub fn fiber_var(&self, j: usize) -> usize {
        self.source.base.nvars() + j
    }

    /// `Θ` on the frame as a `2r × 2r` matrix of functions.
    pub fn theta_matrix(&self) -> Vec<Vec<BaseFunction<S>>> {
        let n = 2 * self.rank();
        let zero = self.algebroid.zero_fn();
        (0..n).map(|i| (0..n).map(|j| self.theta.eval(&[i, j], &zero)).collect()).collect()
    }

    /// `dπ ∘ ρ_{π!A}(lift e_i) = ρ_A(e_i)` on base coordinates and
    /// `dπ ∘ ρ(∂_{ξ_j}) = 0`.
    pub fn projects_to_source(&self) -> bool {
        let r = self.rank();
        let nv = self.source.base.nvars();
        let extra = self.algebroid.base.np() - self.source.base.np();
        for i in 0..2 * r {
            for a in 0..nv {
                let want = if i < r {
                    self.source.anchor[i][a].extend_chart(extra, self.algebroid.base.cap())
                } else {
                    self.algebroid.zero_fn()
                };
                if self.algebroid.anchor[i][a] != want {
                    return false;
                }
            }
        }
        true
    }
}

/// Pull-back of `A` along `π: A* → M` with fiber polynomial degree cap.
pub fn pullback_algebroid<S: Scalar>(
    a: &AlgebroidPresentation<S>,
    fiber_cap: u32,
) -> Result<PullbackAlgebroid<S>, AlgebroidError> {
    let diags = check_structure(a, 1e-12);
    if !diags.is_empty() {
        return Err(AlgebroidError::Malformed(format!("{:?}", diags[0])));
    }
    let r = a.rank;
    let nt = a.base.nt();
    let np = a.base.np();
    let cap = a.base.cap().unwrap_or(0).max(fiber_cap);
    let base = BaseModel::Product { nt, cutoff: a.base.cutoff().unwrap_or(0), np: np + r, cap };
    let ext = |f: &BaseFunction<S>| f.extend_chart(r, Some(cap));
    let mut p = AlgebroidPresentation::zero(base, 2 * r);
    for i in 0..r {
        for v in 0..a.base.nvars() {
            p.anchor[i][v] = ext(&a.anchor[i][v]);
        }
        p.anchor[r + i][nt + np + i] = base.constant(S::one());
        for j in 0..r {
            for k in 0..r {
                p.structure[i][j][k] = ext(&a.structure[i][j][k]);
            }
        }
    }
    let zero: BaseFunction<S> = base.zero();
    let xi = |k: usize| zero.coordinate(np + k);
    let mut theta = AlgebroidForm::zero(2);
    for i in 0..r {
        theta.add_at(&[i, r + i], base.constant(S::one()));
        for j in (i + 1)..r {
            let mut f = zero.clone();
            for k in 0..r {
                f = f.add(&xi(k).mul(&p.structure[i][j][k]));
            }
            theta.add_at(&[i, j], f);
        }
    }
    let mut euler = vec![zero.clone(); 2 * r];
    for j in 0..r {
        euler[r + j] = xi(j);
    }
    Ok(PullbackAlgebroid { source: a.clone(), algebroid: p, theta, euler })
}
