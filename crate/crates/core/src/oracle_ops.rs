//! Brute-force analytic oracles: Fredholm indices of truncated operators,
//! the heat-type parametrix idempotent on a grid, and the localized pairing
//! computed by direct sums over grid tuples.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::charclass_index::smooth_step;
use crate::scalars::C64;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("truncation size {0} too small")]
    TooSmall(usize),
    #[error("grid models need an odd number of points, got {0}")]
    EvenGrid(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parametrix idempotent residual {0:e} above tolerance")]
    NotIdempotent(f64),
    #[error("cochain of degree {degree} is nonzero at displacement {displacement} beyond the localization radius")]
    NonLocalized { degree: usize, displacement: f64 },
    #[error("cochain list must have degrees 0, 2, 4, ..; entry {0} has the wrong arity")]
    Degree(usize),
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

// ---------------------------------------------------------------------------
// Truncated operators

/// Operator description in a basis where it is banded.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// `Σ c x^j (d/dx)^k` on `L²(ℝ)` in the Hermite basis, as `(j, k, c)`.
    Hermite(Vec<(u32, u32, C64)>),
    /// `Σ c e^{imθ} (−i d/dθ)^k` on `L²(T¹)` in Fourier modes, as `(m, k, c)`.
    Fourier(Vec<(i64, u32, C64)>),
    /// A fixed finite matrix; truncation is ignored.
    Matrix(DMatrix<C64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTag {
    /// `h_0, …, h_{K−1}`.
    Hermite,
    /// `e^{inθ}`, `n = −K..K`, stored in increasing `n`.
    Fourier,
    Plain,
}

/// Rectangular truncation `V_K → V_{K+band}`: all of `op(V_K)` is kept, so the
/// kernel of the matrix is exactly the part of the kernel lying in `V_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    pub basis: BasisTag,
    pub k: usize,
    pub matrix: DMatrix<C64>,
}

impl OperatorSpec {
    fn band(&self) -> usize {
        match self {
            OperatorSpec::Hermite(t) => t.iter().map(|(j, k, _)| (j + k) as usize).max().unwrap_or(0),
            OperatorSpec::Fourier(t) => t.iter().map(|(m, _, _)| m.unsigned_abs() as usize).max().unwrap_or(0),
            OperatorSpec::Matrix(_) => 0,
        }
    }

    /// Square matrix on the first `size` basis vectors; columns below
    /// `size − band` are exact.
    fn square(&self, size: usize) -> DMatrix<C64> {
        match self {
            OperatorSpec::Hermite(terms) => {
                let mut a = DMatrix::<C64>::zeros(size, size);
                for n in 1..size {
                    a[(n - 1, n)] = c((n as f64).sqrt());
                }
                let ad = a.adjoint();
                let s = 1.0 / 2f64.sqrt();
                let x = (&a + &ad) * c(s);
                let d = (&a - &ad) * c(s);
                let mut out = DMatrix::zeros(size, size);
                for (j, k, coef) in terms {
                    let mut m = DMatrix::identity(size, size);
                    for _ in 0..*k {
                        m = &d * m;
                    }
                    for _ in 0..*j {
                        m = &x * m;
                    }
                    out += m * *coef;
                }
                out
            }
            OperatorSpec::Fourier(terms) => {
                // size = 2L + 1, mode n at index n + L
                let l = (size / 2) as i64;
                let mut out = DMatrix::zeros(size, size);
                for (m, k, coef) in terms {
                    for n in -l..=l {
                        let to = n + m;
                        if to.abs() <= l {
                            out[((to + l) as usize, (n + l) as usize)] += *coef * (n as f64).powi(*k as i32);
                        }
                    }
                }
                out
            }
            OperatorSpec::Matrix(m) => m.clone(),
        }
    }

    fn sizes(&self, k: usize) -> (usize, usize, usize) {
        let b = self.band();
        match self {
            OperatorSpec::Hermite(_) => (k, k + b, k + 2 * b),
            OperatorSpec::Fourier(_) => (2 * k + 1, 2 * (k + b) + 1, 2 * (k + 2 * b) + 1),
            OperatorSpec::Matrix(m) => (m.ncols(), m.nrows(), m.nrows().max(m.ncols())),
        }
    }

    /// Forward and adjoint truncations at size `k`.
    pub fn truncate(&self, k: usize) -> Result<(TruncatedOperator, TruncatedOperator), OracleError> {
        if k == 0 && !matches!(self, OperatorSpec::Matrix(_)) {
            return Err(OracleError::TooSmall(k));
        }
        let basis = match self {
            OperatorSpec::Hermite(_) => BasisTag::Hermite,
            OperatorSpec::Fourier(_) => BasisTag::Fourier,
            OperatorSpec::Matrix(_) => BasisTag::Plain,
        };
        if let OperatorSpec::Matrix(m) = self {
            let fwd = TruncatedOperator { basis, k, matrix: m.clone() };
            let adj = TruncatedOperator { basis, k, matrix: m.adjoint() };
            return Ok((fwd, adj));
        }
        let (dom, mid, big) = self.sizes(k);
        let m = self.square(big);
        let (off_dom, off_mid) = match self {
            OperatorSpec::Fourier(_) => ((big - dom) / 2, (big - mid) / 2),
            _ => (0, 0),
        };
        let fwd = m.view((off_mid, off_dom), (mid, dom)).clone_owned();
        // ⟨e_i, D* e_j⟩ = conj⟨e_j, D e_i⟩ for e_j in V_K, e_i in V_{K+band}
        let adj = m.view((off_dom, off_mid), (dom, mid)).adjoint();
        Ok((TruncatedOperator { basis, k, matrix: fwd }, TruncatedOperator { basis, k, matrix: adj }))
    }
}

/// One row of an index stabilization run.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub k: usize,
    pub dim_ker: usize,
    pub dim_coker: usize,
    pub index: i64,
    /// Largest fraction of a kernel or cokernel vector's mass in the top
    /// basis shell.
    pub tail_mass: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStabilizationReport {
    pub rows: Vec<TruncationRow>,
    pub stabilized: bool,
    /// Present only when the last three reliable rows agree.
    pub index: Option<i64>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOptions {
    /// Singular values at or below this count as zero.
    pub sv_tol: f64,
    /// A kernel vector with more top-shell mass than this marks the row unreliable.
    pub tail_tol: f64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self { sv_tol: 1e-8, tail_tol: 1e-6 }
    }
}

fn top_shell(basis: BasisTag, len: usize) -> Vec<usize> {
    match basis {
        BasisTag::Hermite => {
            let w = (len / 8).max(1);
            (len - w..len).collect()
        }
        BasisTag::Fourier => {
            let w = (len / 16).max(1);
            (0..w).chain(len - w..len).collect()
        }
        BasisTag::Plain => vec![],
    }
}

/// Kernel dimension and worst top-shell mass of the kernel vectors.
fn kernel_with_tail(t: &TruncatedOperator, tol: f64) -> (usize, f64) {
    let m = &t.matrix;
    let ncols = m.ncols();
    if ncols == 0 {
        return (0, 0.0);
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let shell = top_shell(t.basis, ncols);
    let mut dim = ncols.saturating_sub(svd.singular_values.len());
    let mut tail: f64 = 0.0;
    // wide matrices have ncols − nrows null directions that the thin svd
    // does not list; their tail is unknown
    if dim > 0 && !shell.is_empty() {
        tail = 1.0;
    }
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            dim += 1;
            let row = vt.row(i);
            let mass: f64 = shell.iter().map(|&j| row[j].norm_sqr()).sum();
            tail = tail.max(mass);
        }
    }
    (dim, tail)
}

/// Index by rank–nullity on each truncation of `schedule`, with the
/// cokernel taken as the kernel of the truncated adjoint.
pub fn fredholm_index_oracle(op: &OperatorSpec, schedule: &[usize], opts: &IndexOptions) -> Result<IndexStabilizationReport, OracleError> {
    let mut rows = vec![];
    for &k in schedule {
        let (fwd, adj) = op.truncate(k)?;
        let (dk, tk) = kernel_with_tail(&fwd, opts.sv_tol);
        let (dc, tc) = kernel_with_tail(&adj, opts.sv_tol);
        let tail = tk.max(tc);
        rows.push(TruncationRow {
            k,
            dim_ker: dk,
            dim_coker: dc,
            index: dk as i64 - dc as i64,
            tail_mass: tail,
            reliable: tail <= opts.tail_tol,
        });
    }
    let (stabilized, index, diagnostic) = if matches!(op, OperatorSpec::Matrix(_)) {
        (true, rows.first().map(|r| r.index), None)
    } else if rows.len() < 3 {
        (false, None, Some(format!("need at least three truncation sizes, got {}", rows.len())))
    } else {
        let last = &rows[rows.len() - 3..];
        if last.iter().any(|r| !r.reliable) {
            let bad = last.iter().find(|r| !r.reliable).unwrap();
            (false, None, Some(format!("kernel vectors reach the truncation edge at K = {} (tail mass {:e})", bad.k, bad.tail_mass)))
        } else if last.iter().all(|r| r.index == last[0].index) {
            (true, Some(last[0].index), None)
        } else {
            let idx: Vec<i64> = last.iter().map(|r| r.index).collect();
            (false, None, Some(format!("index does not stabilize over the last three sizes: {idx:?}")))
        }
    };
    Ok(IndexStabilizationReport { rows, stabilized, index, diagnostic })
}

// ---------------------------------------------------------------------------
// Grid models

/// Periodic grids with banded difference operators. On the line the box
/// `[−L, L)` is made periodic, so operators with unbounded coefficients pick
/// up an artifact at the box edge; pairings there use a partial trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridModel {
    Circle { n: usize },
    Line { n: usize, half_width: f64 },
}

impl GridModel {
    pub fn new_circle(n: usize) -> Result<Self, OracleError> {
        if n % 2 == 0 {
            return Err(OracleError::EvenGrid(n));
        }
        Ok(GridModel::Circle { n })
    }

    pub fn new_line(n: usize, half_width: f64) -> Result<Self, OracleError> {
        if n % 2 == 0 {
            return Err(OracleError::EvenGrid(n));
        }
        if half_width <= 0.0 {
            return Err(OracleError::BadParameter("half width must be positive".into()));
        }
        Ok(GridModel::Line { n, half_width })
    }

    pub fn len(&self) -> usize {
        match self {
            GridModel::Circle { n } | GridModel::Line { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn period(&self) -> f64 {
        match self {
            GridModel::Circle { .. } => 2.0 * PI,
            GridModel::Line { half_width, .. } => 2.0 * half_width,
        }
    }

    pub fn step(&self) -> f64 {
        self.period() / self.len() as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        match self {
            GridModel::Circle { .. } => j as f64 * self.step(),
            GridModel::Line { half_width, .. } => -half_width + j as f64 * self.step(),
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }

    /// `x_i − x_j`, wrapped into a half-open interval of one period (the line
    /// box is periodic too).
    pub fn displacement(&self, i: usize, j: usize) -> f64 {
        let p = self.period();
        let w = (self.point(i) - self.point(j)).rem_euclid(p);
        if w > 0.5 * p {
            w - p
        } else {
            w
        }
    }

    /// Central difference `(u_{j+1} − u_{j−1}) / 2h` with periodic wrap.
    pub fn diff_matrix(&self) -> DMatrix<C64> {
        let n = self.len();
        let h = self.step();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            d[(j, (j + 1) % n)] += c(0.5 / h);
            d[(j, (j + n - 1) % n)] -= c(0.5 / h);
        }
        d
    }

    /// Wilson term `(2u_j − u_{j+1} − u_{j−1}) / 2h`: zero on smooth data up
    /// to `O(h)`, equal to `2/h` on the alternating mode.
    pub fn wilson_matrix(&self) -> DMatrix<C64> {
        let n = self.len();
        let h = self.step();
        let mut w = DMatrix::zeros(n, n);
        for j in 0..n {
            w[(j, j)] += c(1.0 / h);
            w[(j, (j + 1) % n)] -= c(0.5 / h);
            w[(j, (j + n - 1) % n)] -= c(0.5 / h);
        }
        w
    }

    pub fn multiplication(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(self.len(), self.points().into_iter().map(f)))
    }
}

/// `d/dx + x` on a line grid (symbol `x + iξ`), with a Wilson term so the
/// alternating mode does not contribute a second, opposite index.
pub fn oscillator_operator(model: &GridModel) -> DMatrix<C64> {
    model.diff_matrix() + model.wilson_matrix() + model.multiplication(|x| c(x))
}

/// `−i d/dθ + V(θ)` on a circle grid.
pub fn circle_operator(model: &GridModel, potential: impl Fn(f64) -> C64) -> DMatrix<C64> {
    model.diff_matrix() * C64::new(0.0, -1.0) + model.multiplication(potential)
}

// ---------------------------------------------------------------------------
// Parametrix idempotent

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametrixConfig {
    /// Heat time in `E₀ = (1 − e^{−tD*D}) (D*D)^{−1} D*`.
    pub t: f64,
    /// Kernel cutoff: 1 for `|v| ≤ inner`, 0 for `|v| ≥ window`, smooth between.
    pub inner: f64,
    pub window: f64,
    pub idempotent_tol: f64,
}

impl ParametrixConfig {
    fn cutoff(&self, v: f64) -> f64 {
        1.0 - smooth_step((v.abs() - self.inner) / (self.window - self.inner)).0
    }
}

/// `P = [[S₀², S₀(1+S₀)E], [S₁D, 1 − S₁²]]`, `S₀ = 1 − ED`, `S₁ = 1 − DE`,
/// with block `(a, b)` of the grid kernel at `(x_i, x_j)` stored as
/// `p[(a·n + i, b·n + j)]`.
#[derive(Debug, Clone)]
pub struct ParametrixIdempotent {
    pub model: GridModel,
    pub p: DMatrix<C64>,
    pub e_inf: DMatrix<C64>,
    pub residual: f64,
    /// Largest entry of `P − e∞` at displacement beyond the window.
    pub leak: f64,
    pub config: ParametrixConfig,
}

impl ParametrixIdempotent {
    pub fn n(&self) -> usize {
        self.model.len()
    }

    /// `P − e∞`.
    pub fn difference(&self) -> DMatrix<C64> {
        &self.p - &self.e_inf
    }

    /// 2×2 block of `P` at grid points `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> [[C64; 2]; 2] {
        let n = self.n();
        [[self.p[(i, j)], self.p[(i, n + j)]], [self.p[(n + i, j)], self.p[(n + i, n + j)]]]
    }
}

pub fn parametrix_idempotent(model: &GridModel, d: &DMatrix<C64>, cfg: &ParametrixConfig) -> Result<ParametrixIdempotent, OracleError> {
    let n = model.len();
    if d.nrows() != n || d.ncols() != n {
        return Err(OracleError::ShapeMismatch(format!("operator is {}×{}, grid has {n} points", d.nrows(), d.ncols())));
    }
    if !(cfg.t > 0.0 && cfg.inner >= 0.0 && cfg.window > cfg.inner) {
        return Err(OracleError::BadParameter(format!("{cfg:?}")));
    }
    let dd = d.adjoint() * d;
    let eig = SymmetricEigen::new(dd);
    let g = eig.eigenvalues.map(|l| if l.abs() * cfg.t < 1e-8 { cfg.t * (1.0 - 0.5 * cfg.t * l) } else { (1.0 - (-cfg.t * l).exp()) / l });
    let v = &eig.eigenvectors;
    let mut vg = v.clone();
    for (j, mut col) in vg.column_iter_mut().enumerate() {
        col *= c(g[j]);
    }
    let e0 = vg * v.adjoint() * d.adjoint();
    let e = DMatrix::from_fn(n, n, |i, j| e0[(i, j)] * cfg.cutoff(model.displacement(i, j)));
    let one = DMatrix::<C64>::identity(n, n);
    let s0 = &one - &e * d;
    let s1 = &one - d * &e;
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&(&s0 * &s0));
    p.view_mut((0, n), (n, n)).copy_from(&(&s0 * (&one + &s0) * &e));
    p.view_mut((n, 0), (n, n)).copy_from(&(&s1 * d));
    p.view_mut((n, n), (n, n)).copy_from(&(&one - &s1 * &s1));
    let residual = (&p * &p - &p).camax();
    if residual > cfg.idempotent_tol {
        return Err(OracleError::NotIdempotent(residual));
    }
    let mut e_inf = DMatrix::zeros(2 * n, 2 * n);
    for i in n..2 * n {
        e_inf[(i, i)] = c(1.0);
    }
    let mut leak: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if model.displacement(i, j).abs() >= cfg.window {
                for (a, b) in [(0, 0), (0, n), (n, 0), (n, n)] {
                    leak = leak.max((p[(a + i, b + j)] - e_inf[(a + i, b + j)]).norm());
                }
            }
        }
    }
    Ok(ParametrixIdempotent { model: *model, p, e_inf, residual, leak, config: *cfg })
}

// ---------------------------------------------------------------------------
// Localized pairing

/// Grid cochain of degree `k`: a function of the `k + 1` points
/// `x_1 → x_2 → … → x_{k+1}` of a composable tuple.
pub type GridCochain<'a> = &'a dyn Fn(&[f64]) -> C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingOptions {
    /// Only tuples whose consecutive displacements are below this are summed.
    pub band: f64,
    /// Base points with `|x| > inner` are left out of the trace; the ones with
    /// `inner < |x| ≤ outer` form the guard band whose mass is reported.
    pub partial_trace: Option<(f64, f64)>,
    /// When set, positive-degree cochains must vanish on tuples with a
    /// displacement beyond this radius.
    pub localized: Option<f64>,
}

impl PairingOptions {
    pub fn window(band: f64) -> Self {
        Self { band, partial_trace: None, localized: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingValue {
    /// `components[i]` comes from the degree-`2i` cochain.
    pub components: Vec<C64>,
    pub total: C64,
    /// `Σ |tr (P − e∞)(x, x)|` over the guard band.
    pub guard_mass: f64,
}

fn base_weight(model: &GridModel, opts: &PairingOptions, x: usize) -> (f64, bool) {
    match opts.partial_trace {
        None => (1.0, false),
        Some((inner, outer)) => {
            let p = model.point(x).abs();
            if p <= inner {
                (1.0, false)
            } else {
                (0.0, p <= outer)
            }
        }
    }
}

type Block = [[C64; 2]; 2];

fn bmul(a: &Block, b: &Block) -> Block {
    let mut o = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

fn btrace(a: &Block) -> C64 {
    a[0][0] + a[1][1]
}

/// `Σ_i (−1)^i (2i)!/i! χ(φ_{2i})((P − ½) ⊗ P ⊗ … ⊗ P)` minus the same for `e∞`,
/// by direct sums over grid tuples inside the band. Degrees 0 and 2.
pub fn localized_pairing(idem: &ParametrixIdempotent, phis: &[GridCochain], opts: &PairingOptions) -> Result<PairingValue, OracleError> {
    if phis.is_empty() || phis.len() > 2 {
        return Err(OracleError::Degree(phis.len()));
    }
    let model = idem.model;
    let n = model.len();
    let pts = model.points();
    let e: Block = [[c(0.0), c(0.0)], [c(0.0), c(1.0)]];
    let zero: Block = [[c(0.0); 2]; 2];
    let half = |b: Block, diag: bool| -> Block {
        if diag {
            [[b[0][0] - 0.5, b[0][1]], [b[1][0], b[1][1] - 0.5]]
        } else {
            b
        }
    };
    let e_at = |i: usize, j: usize| if i == j { e } else { zero };
    let near: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| model.displacement(i, j).abs() < opts.band).collect()).collect();
    let mut components = vec![];
    let mut guard_mass = 0.0;
    // degree 0: Σ_x tr(P − ½)(x,x) φ(x) − same for e
    let mut acc = C64::new(0.0, 0.0);
    for x in 0..n {
        let (w, guard) = base_weight(&model, opts, x);
        let d = btrace(&idem.block(x, x)) - btrace(&e);
        if guard {
            guard_mass += d.norm();
        }
        if w != 0.0 {
            acc += d * phis[0](&[pts[x]]) * w;
        }
    }
    components.push(acc);
    if phis.len() == 2 {
        // χ(φ)(a0, a1, a2) = Σ tr(a0(x3,x1) a1(x1,x2) a2(x2,x3)) φ(x1,x2,x3) Ω(x3)
        let phi = phis[1];
        let mut acc = C64::new(0.0, 0.0);
        for x3 in 0..n {
            let (w, _) = base_weight(&model, opts, x3);
            if w == 0.0 {
                continue;
            }
            for &x1 in &near[x3] {
                let p31 = half(idem.block(x3, x1), x3 == x1);
                let e31 = half(e_at(x3, x1), x3 == x1);
                for &x2 in &near[x1] {
                    if model.displacement(x2, x3).abs() >= opts.band {
                        continue;
                    }
                    let f = phi(&[pts[x1], pts[x2], pts[x3]]);
                    if let Some(r) = opts.localized {
                        let worst = [model.displacement(x2, x1), model.displacement(x3, x2)].iter().fold(0f64, |m, v| m.max(v.abs()));
                        if worst > r && f.norm() > 1e-12 {
                            return Err(OracleError::NonLocalized { degree: 2, displacement: worst });
                        }
                    }
                    if f.norm() == 0.0 {
                        continue;
                    }
                    let tp = btrace(&bmul(&bmul(&p31, &idem.block(x1, x2)), &idem.block(x2, x3)));
                    let te = btrace(&bmul(&bmul(&e31, &e_at(x1, x2)), &e_at(x2, x3)));
                    acc += (tp - te) * f * w;
                }
            }
        }
        // (−1)^1 · 2!/1!
        components.push(acc * -2.0);
    }
    let total = components.iter().sum();
    Ok(PairingValue { components, total, guard_mass })
}

/// Left-hand side at two grid resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct LhsReport {
    pub value: C64,
    pub coarse: C64,
    /// `|value − coarse|`.
    pub refinement_delta: f64,
    pub components: Vec<C64>,
    pub guard_mass: f64,
    pub leak: f64,
    pub residual: f64,
}

/// Runs the parametrix and the pairing at `n_coarse` and `n_fine` points;
/// `build(n)` returns the grid and the operator matrix.
pub fn localized_pairing_lhs(
    build: &dyn Fn(usize) -> Result<(GridModel, DMatrix<C64>), OracleError>,
    n_coarse: usize,
    n_fine: usize,
    cfg: &ParametrixConfig,
    phis: &[GridCochain],
    opts: &PairingOptions,
) -> Result<LhsReport, OracleError> {
    let run = |n: usize| -> Result<(PairingValue, ParametrixIdempotent), OracleError> {
        let (model, d) = build(n)?;
        let idem = parametrix_idempotent(&model, &d, cfg)?;
        Ok((localized_pairing(&idem, phis, opts)?, idem))
    };
    let (pc, _) = run(n_coarse)?;
    let (pf, idf) = run(n_fine)?;
    Ok(LhsReport {
        value: pf.total,
        coarse: pc.total,
        refinement_delta: (pf.total - pc.total).norm(),
        components: pf.components,
        guard_mass: pf.guard_mass,
        leak: idf.leak,
        residual: idf.residual,
    })
}
