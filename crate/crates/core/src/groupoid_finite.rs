//! Finite groupoids: nerve, cochains, convolution algebra, trace, characteristic map
//! and the pairing with idempotents.
//!
//! Arrows go `s(g) -> t(g)`; `g1 g2` is defined when `t(g1) = s(g2)`.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::linalg::{mat_identity, mat_mul, mat_trace};
use crate::scalars::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupoidError {
    #[error("malformed groupoid: {0}")]
    Malformed(String),
    #[error("face index {i} out of range for degree {k}")]
    FaceOutOfRange { i: usize, k: usize },
    #[error("arrows are not composable")]
    NotComposable,
    #[error("cyclic operator needs degree >= 1")]
    DegreeZero,
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("objects belong to different groupoids")]
    GroupoidMismatch,
    #[error("matrix size mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("density weight at object {0} is not positive")]
    NonPositiveDensity(usize),
    #[error("not idempotent (residual {0:e})")]
    NotIdempotent(f64),
    #[error("P - e is not supported in the window (arrow {0})")]
    OutsideWindow(usize),
    #[error("window does not contain every unit")]
    WindowMissingUnits,
    #[error("homogeneous cochain is not invariant at {0:?}")]
    NonInvariant(Vec<usize>),
    #[error("support set misses arrow {0} carrying a nonzero value")]
    SupportViolation(usize),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Composable tuples of every degree up to `max_degree`, with face tables.
#[derive(Debug)]
pub struct Nerve {
    levels: Vec<Vec<Vec<usize>>>,
    index: Vec<HashMap<Vec<usize>, usize>>,
    faces: Vec<Vec<Vec<usize>>>,
}

impl Nerve {
    pub fn max_degree(&self) -> usize {
        self.levels.len() - 1
    }

    /// Level 0 holds `[x]` for each object; level `k >= 1` holds arrow tuples.
    pub fn level(&self, k: usize) -> &[Vec<usize>] {
        &self.levels[k]
    }

    pub fn position(&self, k: usize, tuple: &[usize]) -> Option<usize> {
        self.index[k].get(tuple).copied()
    }

    /// `faces(k)[j][i]` is the position of `∂_i` of the `j`-th tuple in level `k - 1`.
    pub fn faces(&self, k: usize) -> &[Vec<usize>] {
        &self.faces[k]
    }
}

#[derive(Debug)]
pub struct FiniteGroupoid {
    id: u64,
    objects: usize,
    src: Vec<usize>,
    tgt: Vec<usize>,
    unit: Vec<usize>,
    inv: Vec<usize>,
    comp: Vec<Option<usize>>,
    labels: Vec<String>,
    nerve: Mutex<Option<Arc<Nerve>>>,
}

impl Clone for FiniteGroupoid {
    fn clone(&self) -> Self {
        FiniteGroupoid {
            id: self.id,
            objects: self.objects,
            src: self.src.clone(),
            tgt: self.tgt.clone(),
            unit: self.unit.clone(),
            inv: self.inv.clone(),
            comp: self.comp.clone(),
            labels: self.labels.clone(),
            nerve: Mutex::new(self.nerve.lock().unwrap().clone()),
        }
    }
}

impl FiniteGroupoid {
    /// Builds and validates a groupoid from source/target lists and a composition rule,
    /// called only on composable pairs. Units and inverses are located by search.
    pub fn from_tables(
        objects: usize,
        src: Vec<usize>,
        tgt: Vec<usize>,
        compose: impl Fn(usize, usize) -> usize,
        labels: Option<Vec<String>>,
    ) -> Result<Self, GroupoidError> {
        let na = src.len();
        if tgt.len() != na {
            return Err(GroupoidError::Malformed("source/target lengths differ".into()));
        }
        if src.iter().chain(&tgt).any(|&x| x >= objects) {
            return Err(GroupoidError::Malformed("object index out of range".into()));
        }
        let mut comp = vec![None; na * na];
        for a in 0..na {
            for b in 0..na {
                if tgt[a] == src[b] {
                    let c = compose(a, b);
                    if c >= na {
                        return Err(GroupoidError::Malformed(format!("composite of {a},{b} out of range")));
                    }
                    if src[c] != src[a] || tgt[c] != tgt[b] {
                        return Err(GroupoidError::Malformed(format!("composite of {a},{b} has wrong endpoints")));
                    }
                    comp[a * na + b] = Some(c);
                }
            }
        }
        let cmp = |a: usize, b: usize| comp[a * na + b];
        for a in 0..na {
            for b in 0..na {
                let Some(ab) = cmp(a, b) else { continue };
                for c in 0..na {
                    if tgt[b] != src[c] {
                        continue;
                    }
                    if cmp(ab, c) != cmp(b, c).and_then(|bc| cmp(a, bc)) {
                        return Err(GroupoidError::Malformed(format!("associativity fails at ({a},{b},{c})")));
                    }
                }
            }
        }
        let mut unit = vec![usize::MAX; objects];
        for x in 0..objects {
            let found = (0..na).find(|&u| {
                src[u] == x
                    && tgt[u] == x
                    && (0..na).all(|g| (src[g] != x || cmp(u, g) == Some(g)) && (tgt[g] != x || cmp(g, u) == Some(g)))
            });
            unit[x] = found.ok_or_else(|| GroupoidError::Malformed(format!("no unit at object {x}")))?;
        }
        let mut inv = vec![usize::MAX; na];
        for g in 0..na {
            let found = (0..na).find(|&h| cmp(g, h) == Some(unit[src[g]]) && cmp(h, g) == Some(unit[tgt[g]]));
            inv[g] = found.ok_or_else(|| GroupoidError::Malformed(format!("arrow {g} has no inverse")))?;
        }
        let labels = match labels {
            Some(l) if l.len() == na => l,
            Some(_) => return Err(GroupoidError::Malformed("label count differs from arrow count".into())),
            None => (0..na).map(|g| format!("g{g}")).collect(),
        };
        Ok(FiniteGroupoid {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            objects,
            src,
            tgt,
            unit,
            inv,
            comp,
            labels,
            nerve: Mutex::new(None),
        })
    }

    /// Pair groupoid on `n` objects; arrow `x*n + y` is `x -> y`.
    pub fn pair(n: usize) -> Self {
        let src = (0..n * n).map(|a| a / n).collect();
        let tgt = (0..n * n).map(|a| a % n).collect();
        let labels = (0..n * n).map(|a| format!("({},{})", a / n, a % n)).collect();
        Self::from_tables(n, src, tgt, |a, b| (a / n) * n + b % n, Some(labels)).expect("pair groupoid")
    }

    /// One-object groupoid from a multiplication table.
    pub fn group(table: &[Vec<usize>]) -> Result<Self, GroupoidError> {
        let m = table.len();
        if table.iter().any(|row| row.len() != m) {
            return Err(GroupoidError::Malformed("multiplication table is not square".into()));
        }
        Self::from_tables(1, vec![0; m], vec![0; m], |a, b| table[a][b], None)
    }

    pub fn cyclic(m: usize) -> Self {
        let table: Vec<Vec<usize>> = (0..m).map(|a| (0..m).map(|b| (a + b) % m).collect()).collect();
        Self::group(&table).expect("cyclic group")
    }

    /// Symmetric group on three letters; `g1 g2` means apply `g1` first.
    pub fn symmetric3() -> Self {
        let perms: Vec<[usize; 3]> = vec![[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
        let pos = |p: [usize; 3]| perms.iter().position(|q| *q == p).unwrap();
        let table: Vec<Vec<usize>> = (0..6)
            .map(|a| {
                (0..6)
                    .map(|b| {
                        let (p, q) = (perms[a], perms[b]);
                        pos([q[p[0]], q[p[1]], q[p[2]]])
                    })
                    .collect()
            })
            .collect();
        Self::group(&table).expect("S3")
    }

    /// Action groupoid of a right action `act[x][g] = x·g` of a group on `n` points.
    /// Arrow `x*m + g` is `x -> x·g`.
    pub fn action(table: &[Vec<usize>], act: &[Vec<usize>]) -> Result<Self, GroupoidError> {
        let m = table.len();
        let n = act.len();
        if act.iter().any(|row| row.len() != m || row.iter().any(|&y| y >= n)) {
            return Err(GroupoidError::Malformed("action table has wrong shape".into()));
        }
        for x in 0..n {
            for a in 0..m {
                for b in 0..m {
                    if act[act[x][a]][b] != act[x][table[a][b]] {
                        return Err(GroupoidError::Malformed("not a right action".into()));
                    }
                }
            }
        }
        let src = (0..n * m).map(|a| a / m).collect();
        let tgt = (0..n * m).map(|a| act[a / m][a % m]).collect();
        Self::from_tables(n, src, tgt, |a, b| (a / m) * m + table[a % m][b % m], None)
    }

    pub fn disjoint_union(g: &Self, h: &Self) -> Self {
        let (na, no) = (g.arrows(), g.objects);
        let src = g.src.iter().copied().chain(h.src.iter().map(|x| x + no)).collect();
        let tgt = g.tgt.iter().copied().chain(h.tgt.iter().map(|x| x + no)).collect();
        let labels = g.labels.iter().cloned().chain(h.labels.iter().map(|l| format!("{l}'"))).collect();
        Self::from_tables(
            no + h.objects,
            src,
            tgt,
            |a, b| if a < na { g.compose(a, b).unwrap() } else { h.compose(a - na, b - na).unwrap() + na },
            Some(labels),
        )
        .expect("disjoint union")
    }

    /// Product groupoid; arrow `a*|H| + b` is `(a, b)`.
    pub fn product(g: &Self, h: &Self) -> Self {
        let nb = h.arrows();
        let no = h.objects;
        let src = (0..g.arrows() * nb).map(|a| g.src[a / nb] * no + h.src[a % nb]).collect();
        let tgt = (0..g.arrows() * nb).map(|a| g.tgt[a / nb] * no + h.tgt[a % nb]).collect();
        Self::from_tables(
            g.objects * no,
            src,
            tgt,
            |a, b| g.compose(a / nb, b / nb).unwrap() * nb + h.compose(a % nb, b % nb).unwrap(),
            None,
        )
        .expect("product groupoid")
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    pub fn arrows(&self) -> usize {
        self.src.len()
    }

    pub fn source(&self, g: usize) -> usize {
        self.src[g]
    }

    pub fn target(&self, g: usize) -> usize {
        self.tgt[g]
    }

    pub fn unit(&self, x: usize) -> usize {
        self.unit[x]
    }

    pub fn inverse(&self, g: usize) -> usize {
        self.inv[g]
    }

    pub fn label(&self, g: usize) -> &str {
        &self.labels[g]
    }

    pub fn is_unit(&self, g: usize) -> bool {
        self.unit[self.src[g]] == g
    }

    pub fn units(&self) -> BTreeSet<usize> {
        self.unit.iter().copied().collect()
    }

    pub fn compose(&self, a: usize, b: usize) -> Option<usize> {
        self.comp[a * self.arrows() + b]
    }

    /// Product `g1 g2 ⋯ gk` of a nonempty composable tuple.
    pub fn compose_all(&self, tuple: &[usize]) -> Option<usize> {
        let mut it = tuple.iter();
        let first = *it.next()?;
        it.try_fold(first, |acc, &g| self.compose(acc, g))
    }

    /// Some arrow `x -> y`, if any.
    pub fn find_arrow(&self, x: usize, y: usize) -> Option<usize> {
        (0..self.arrows()).find(|&g| self.src[g] == x && self.tgt[g] == y)
    }

    pub fn same_as(&self, other_id: u64) -> bool {
        self.id == other_id
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Nerve up to degree `k`, cached and rebuilt only when a higher degree is requested.
    pub fn nerve(&self, k: usize) -> Arc<Nerve> {
        let mut guard = self.nerve.lock().unwrap();
        if let Some(n) = guard.as_ref() {
            if n.max_degree() >= k {
                return n.clone();
            }
        }
        let n = Arc::new(self.build_nerve(k, guard.as_deref()));
        *guard = Some(n.clone());
        n
    }

    /// Extends `prior` (if any) up to degree `max`.
    fn build_nerve(&self, max: usize, prior: Option<&Nerve>) -> Nerve {
        let (mut levels, mut index, mut faces) = match prior {
            Some(n) => (n.levels.clone(), n.index.clone(), n.faces.clone()),
            None => (vec![(0..self.objects).map(|x| vec![x]).collect()], vec![], vec![vec![]]),
        };
        let start = levels.len();
        if max >= 1 && start == 1 {
            levels.push((0..self.arrows()).map(|g| vec![g]).collect());
        }
        for k in levels.len()..=max {
            let mut next = vec![];
            for t in &levels[k - 1] {
                let end = self.tgt[*t.last().unwrap()];
                for g in 0..self.arrows() {
                    if self.src[g] == end {
                        let mut u = t.clone();
                        u.push(g);
                        next.push(u);
                    }
                }
            }
            levels.push(next);
        }
        for l in &levels[index.len()..] {
            index.push(l.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect());
        }
        for k in start.max(1)..=max {
            let table = levels[k]
                .iter()
                .map(|t| {
                    (0..=k)
                        .map(|i| {
                            let f = self.face_raw(t, i);
                            index[k - 1][&f]
                        })
                        .collect()
                })
                .collect();
            faces.push(table);
        }
        Nerve { levels, index, faces }
    }

    fn face_raw(&self, t: &[usize], i: usize) -> Vec<usize> {
        let k = t.len();
        if k == 1 {
            return vec![if i == 0 { self.src[t[0]] } else { self.tgt[t[0]] }];
        }
        if i == 0 {
            t[1..].to_vec()
        } else if i == k {
            t[..k - 1].to_vec()
        } else {
            let mut f = t[..i - 1].to_vec();
            f.push(self.compose(t[i - 1], t[i]).unwrap());
            f.extend_from_slice(&t[i + 1..]);
            f
        }
    }
}

/// Element of the nerve: an object in degree 0, a composable arrow tuple otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NerveTuple {
    Object(usize),
    Arrows(Vec<usize>),
}

impl NerveTuple {
    pub fn new(g: &FiniteGroupoid, arrows: Vec<usize>) -> Result<Self, GroupoidError> {
        if arrows.iter().any(|&a| a >= g.arrows()) {
            return Err(GroupoidError::Malformed("arrow index out of range".into()));
        }
        if arrows.windows(2).any(|w| g.target(w[0]) != g.source(w[1])) {
            return Err(GroupoidError::NotComposable);
        }
        Ok(NerveTuple::Arrows(arrows))
    }

    pub fn degree(&self) -> usize {
        match self {
            NerveTuple::Object(_) => 0,
            NerveTuple::Arrows(a) => a.len(),
        }
    }

    fn key(&self) -> Vec<usize> {
        match self {
            NerveTuple::Object(x) => vec![*x],
            NerveTuple::Arrows(a) => a.clone(),
        }
    }

    fn from_key(k: usize, key: Vec<usize>) -> Self {
        if k == 0 {
            NerveTuple::Object(key[0])
        } else {
            NerveTuple::Arrows(key)
        }
    }
}

/// Face operator `∂_i`; in degree 1, `∂_0 = s` and `∂_1 = t`.
pub fn faces(g: &FiniteGroupoid, t: &NerveTuple, i: usize) -> Result<NerveTuple, GroupoidError> {
    let k = t.degree();
    if k == 0 || i > k {
        return Err(GroupoidError::FaceOutOfRange { i, k });
    }
    Ok(NerveTuple::from_key(k - 1, g.face_raw(&t.key(), i)))
}

/// Function on the degree-`k` nerve, stored in nerve order.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupoidCochain<S> {
    gid: u64,
    degree: usize,
    values: Vec<S>,
}

impl<S: Scalar> GroupoidCochain<S> {
    /// `f` receives `[x]` in degree 0 and the arrow tuple otherwise.
    pub fn from_fn(g: &FiniteGroupoid, k: usize, mut f: impl FnMut(&[usize]) -> S) -> Self {
        let nerve = g.nerve(k);
        let values = nerve.level(k).iter().map(|t| f(t)).collect();
        GroupoidCochain { gid: g.id, degree: k, values }
    }

    pub fn zero(g: &FiniteGroupoid, k: usize) -> Self {
        Self::from_fn(g, k, |_| S::zero())
    }

    pub fn constant(g: &FiniteGroupoid, k: usize, c: S) -> Self {
        Self::from_fn(g, k, |_| c.clone())
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn eval(&self, g: &FiniteGroupoid, t: &NerveTuple) -> Result<S, GroupoidError> {
        self.check(g)?;
        if t.degree() != self.degree {
            return Err(GroupoidError::DegreeMismatch { expected: self.degree, got: t.degree() });
        }
        let pos = g.nerve(self.degree).position(self.degree, &t.key()).ok_or(GroupoidError::NotComposable)?;
        Ok(self.values[pos].clone())
    }

    /// Value on a raw key (`[x]` in degree 0); panics on non-composable input.
    pub fn at(&self, g: &FiniteGroupoid, key: &[usize]) -> S {
        let pos = g.nerve(self.degree).position(self.degree, key).expect("composable tuple");
        self.values[pos].clone()
    }

    fn check(&self, g: &FiniteGroupoid) -> Result<(), GroupoidError> {
        if g.id != self.gid {
            return Err(GroupoidError::GroupoidMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.clone() + b.clone()).collect();
        GroupoidCochain { gid: self.gid, degree: self.degree, values }
    }

    pub fn scale(&self, c: &S) -> Self {
        let values = self.values.iter().map(|a| a.clone() * c.clone()).collect();
        GroupoidCochain { gid: self.gid, degree: self.degree, values }
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.values.iter().all(|v| v.is_negligible(tol))
    }

    pub fn close(&self, other: &Self, tol: f64) -> bool {
        self.degree == other.degree && self.values.iter().zip(&other.values).all(|(a, b)| a.close(b, tol))
    }
}

/// Coboundary `dφ = Σ_i (-1)^i φ∘∂_i`; in degree 0 this is `φ(s g) - φ(t g)`.
pub fn diff_d<S: Scalar>(g: &FiniteGroupoid, phi: &GroupoidCochain<S>) -> Result<GroupoidCochain<S>, GroupoidError> {
    phi.check(g)?;
    let k = phi.degree + 1;
    let nerve = g.nerve(k);
    let values = nerve
        .faces(k)
        .iter()
        .map(|fs| S::signed_sum(fs.iter().enumerate().map(|(i, &p)| (i % 2 == 0, &phi.values[p]))))
        .collect();
    Ok(GroupoidCochain { gid: g.id, degree: k, values })
}

/// `τφ(g1,…,gk) = φ((g1⋯gk)^{-1}, g1,…,g_{k-1})`.
pub fn cyclic_tau<S: Scalar>(g: &FiniteGroupoid, phi: &GroupoidCochain<S>) -> Result<GroupoidCochain<S>, GroupoidError> {
    phi.check(g)?;
    let k = phi.degree;
    if k == 0 {
        return Err(GroupoidError::DegreeZero);
    }
    let nerve = g.nerve(k);
    let values = nerve
        .level(k)
        .iter()
        .map(|t| {
            let mut key = vec![g.inverse(g.compose_all(t).unwrap())];
            key.extend_from_slice(&t[..k - 1]);
            phi.values[nerve.position(k, &key).unwrap()].clone()
        })
        .collect();
    Ok(GroupoidCochain { gid: g.id, degree: k, values })
}

/// Positive weight per object.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights<S> {
    weights: Vec<S>,
}

impl<S: Scalar> DensityWeights<S> {
    pub fn new(weights: Vec<S>) -> Result<Self, GroupoidError> {
        for (x, w) in weights.iter().enumerate() {
            let z = w.to_c64();
            if !(z.re > 0.0) || z.im != 0.0 {
                return Err(GroupoidError::NonPositiveDensity(x));
            }
        }
        Ok(DensityWeights { weights })
    }

    pub fn uniform(g: &FiniteGroupoid) -> Self {
        DensityWeights { weights: vec![S::one(); g.objects()] }
    }

    pub fn weight(&self, x: usize) -> &S {
        &self.weights[x]
    }

    fn check(&self, g: &FiniteGroupoid) -> Result<(), GroupoidError> {
        if self.weights.len() != g.objects() {
            return Err(GroupoidError::ShapeMismatch(self.weights.len(), g.objects()));
        }
        Ok(())
    }
}

/// `dim × dim` matrix (row-major) per arrow, with an optional declared support.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionElement<S> {
    gid: u64,
    dim: usize,
    values: Vec<Vec<S>>,
    support: Option<BTreeSet<usize>>,
}

impl<S: Scalar> ConvolutionElement<S> {
    pub fn zero(g: &FiniteGroupoid, dim: usize) -> Self {
        ConvolutionElement { gid: g.id, dim, values: vec![vec![S::zero(); dim * dim]; g.arrows()], support: None }
    }

    pub fn from_fn(g: &FiniteGroupoid, mut f: impl FnMut(usize) -> S) -> Self {
        let values = (0..g.arrows()).map(|a| vec![f(a)]).collect();
        ConvolutionElement { gid: g.id, dim: 1, values, support: None }
    }

    pub fn from_matrix_fn(g: &FiniteGroupoid, dim: usize, mut f: impl FnMut(usize) -> Vec<S>) -> Self {
        let values: Vec<Vec<S>> = (0..g.arrows()).map(&mut f).collect();
        assert!(values.iter().all(|v| v.len() == dim * dim), "matrix values must be dim×dim");
        ConvolutionElement { gid: g.id, dim, values, support: None }
    }

    /// Scalar delta function at one arrow.
    pub fn delta(g: &FiniteGroupoid, arrow: usize, c: S) -> Self {
        Self::from_fn(g, |a| if a == arrow { c.clone() } else { S::zero() })
    }

    /// Constant matrix `e` placed on every unit, i.e. `e ⊗ 1`.
    pub fn constant(g: &FiniteGroupoid, dim: usize, e: &[S]) -> Self {
        Self::from_matrix_fn(g, dim, |a| if g.is_unit(a) { e.to_vec() } else { vec![S::zero(); dim * dim] })
    }

    pub fn unit(g: &FiniteGroupoid, dim: usize) -> Self {
        Self::constant(g, dim, &mat_identity::<S>(dim))
    }

    /// Attaches a support set after checking it covers the nonzero values.
    pub fn with_support(mut self, support: BTreeSet<usize>, tol: f64) -> Result<Self, GroupoidError> {
        for (a, v) in self.values.iter().enumerate() {
            if !support.contains(&a) && v.iter().any(|x| !x.is_negligible(tol)) {
                return Err(GroupoidError::SupportViolation(a));
            }
        }
        self.support = Some(support);
        Ok(self)
    }

    pub fn support(&self) -> Option<&BTreeSet<usize>> {
        self.support.as_ref()
    }

    /// Arrows carrying a non-negligible value.
    pub fn actual_support(&self, tol: f64) -> BTreeSet<usize> {
        (0..self.values.len()).filter(|&a| self.values[a].iter().any(|x| !x.is_negligible(tol))).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, arrow: usize) -> &[S] {
        &self.values[arrow]
    }

    fn check(&self, g: &FiniteGroupoid) -> Result<(), GroupoidError> {
        if g.id != self.gid {
            return Err(GroupoidError::GroupoidMismatch);
        }
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(&S, &S) -> S) -> Result<Self, GroupoidError> {
        if self.gid != other.gid {
            return Err(GroupoidError::GroupoidMismatch);
        }
        if self.dim != other.dim {
            return Err(GroupoidError::ShapeMismatch(self.dim, other.dim));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(x, y)).collect())
            .collect();
        let support = match (&self.support, &other.support) {
            (Some(a), Some(b)) => Some(a.union(b).copied().collect()),
            _ => None,
        };
        Ok(ConvolutionElement { gid: self.gid, dim: self.dim, values, support })
    }

    pub fn add(&self, other: &Self) -> Result<Self, GroupoidError> {
        self.zip(other, |a, b| a.clone() + b.clone())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GroupoidError> {
        self.zip(other, |a, b| a.clone() - b.clone())
    }

    pub fn scale(&self, c: &S) -> Self {
        let values = self.values.iter().map(|v| v.iter().map(|x| x.clone() * c.clone()).collect()).collect();
        ConvolutionElement { gid: self.gid, dim: self.dim, values, support: self.support.clone() }
    }

    /// Pointwise product `(φ·a)(g) = φ(g) a(g)` with a degree-1 cochain.
    pub fn weighted_by(&self, g: &FiniteGroupoid, phi: &GroupoidCochain<S>) -> Result<Self, GroupoidError> {
        self.check(g)?;
        phi.check(g)?;
        if phi.degree != 1 {
            return Err(GroupoidError::DegreeMismatch { expected: 1, got: phi.degree });
        }
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(a, v)| v.iter().map(|x| x.clone() * phi.values[a].clone()).collect())
            .collect();
        Ok(ConvolutionElement { gid: self.gid, dim: self.dim, values, support: self.support.clone() })
    }

    pub fn close(&self, other: &Self, tol: f64) -> bool {
        self.dim == other.dim
            && self.values.iter().zip(&other.values).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.close(y, tol)))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().map(|x| x.norm_f64()).fold(0.0, f64::max)
    }
}

/// `{g1 g2 : g1 ∈ U, g2 ∈ V composable}`.
pub fn support_product(g: &FiniteGroupoid, u: &BTreeSet<usize>, v: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &a in u {
        for &b in v {
            if let Some(c) = g.compose(a, b) {
                out.insert(c);
            }
        }
    }
    out
}

/// `(f1*f2)(g) = Σ_{t(h)=t(g)} f1(g h^{-1}) f2(h)` with matrix products.
pub fn convolve<S: Scalar>(
    g: &FiniteGroupoid,
    f1: &ConvolutionElement<S>,
    f2: &ConvolutionElement<S>,
) -> Result<ConvolutionElement<S>, GroupoidError> {
    f1.check(g)?;
    f2.check(g)?;
    if f1.dim != f2.dim {
        return Err(GroupoidError::ShapeMismatch(f1.dim, f2.dim));
    }
    let n = f1.dim;
    let mut out = ConvolutionElement::<S>::zero(g, n);
    for h in 0..g.arrows() {
        if f2.values[h].iter().all(|x| x.is_zero()) {
            continue;
        }
        let hinv = g.inverse(h);
        for a in 0..g.arrows() {
            // a = g h^{-1} with t(a) = s(h); then g = a h.
            if g.target(a) != g.source(h) || f1.values[a].iter().all(|x| x.is_zero()) {
                continue;
            }
            let target = g.compose(a, h).unwrap();
            debug_assert_eq!(g.compose(target, hinv), Some(a));
            let p = mat_mul(&f1.values[a], &f2.values[h], n);
            for (o, v) in out.values[target].iter_mut().zip(p) {
                *o = o.clone() + v;
            }
        }
    }
    if let (Some(a), Some(b)) = (&f1.support, &f2.support) {
        out.support = Some(support_product(g, a, b));
    }
    Ok(out)
}

/// `τ_Ω(f) = Σ_x tr f(1_x) Ω(x)`.
pub fn trace_omega<S: Scalar>(
    g: &FiniteGroupoid,
    f: &ConvolutionElement<S>,
    omega: &DensityWeights<S>,
) -> Result<S, GroupoidError> {
    f.check(g)?;
    omega.check(g)?;
    Ok((0..g.objects()).fold(S::zero(), |acc, x| {
        acc + mat_trace(&f.values[g.unit(x)], f.dim) * omega.weights[x].clone()
    }))
}

/// `δ(g) = Ω(s g) / Ω(t g)`.
pub fn modular_function<S: Scalar>(g: &FiniteGroupoid, omega: &DensityWeights<S>) -> Result<GroupoidCochain<S>, GroupoidError> {
    omega.check(g)?;
    Ok(GroupoidCochain::from_fn(g, 1, |t| {
        omega.weights[g.source(t[0])].clone() / omega.weights[g.target(t[0])].clone()
    }))
}

/// Degree-`k` cochain `Π_i φ_i(g_i)` from degree-1 factors.
pub fn tensor_cochain<S: Scalar>(
    g: &FiniteGroupoid,
    factors: &[GroupoidCochain<S>],
) -> Result<GroupoidCochain<S>, GroupoidError> {
    for f in factors {
        f.check(g)?;
        if f.degree != 1 {
            return Err(GroupoidError::DegreeMismatch { expected: 1, got: f.degree });
        }
    }
    let k = factors.len();
    if k == 0 {
        return Ok(GroupoidCochain::constant(g, 0, S::one()));
    }
    Ok(GroupoidCochain::from_fn(g, k, |t| {
        t.iter().zip(factors).fold(S::one(), |acc, (&a, f)| acc * f.values[a].clone())
    }))
}

/// `χ_Ω(φ)(a0⊗…⊗ak)` as the sum over `g0 g1 ⋯ gk = 1_x` of
/// `tr(a0(g0) a1(g1) ⋯ ak(gk)) φ(g1,…,gk) Ω(x)`.
pub fn char_chi<S: Scalar>(
    g: &FiniteGroupoid,
    phi: &GroupoidCochain<S>,
    a: &[ConvolutionElement<S>],
    omega: &DensityWeights<S>,
) -> Result<S, GroupoidError> {
    phi.check(g)?;
    omega.check(g)?;
    let k = phi.degree;
    if a.len() != k + 1 {
        return Err(GroupoidError::DegreeMismatch { expected: k + 1, got: a.len() });
    }
    let n = a[0].dim;
    for x in a {
        x.check(g)?;
        if x.dim != n {
            return Err(GroupoidError::ShapeMismatch(n, x.dim));
        }
    }
    if k == 0 {
        return Ok((0..g.objects()).fold(S::zero(), |acc, x| {
            acc + mat_trace(&a[0].values[g.unit(x)], n) * phi.values[x].clone() * omega.weights[x].clone()
        }));
    }
    let nerve = g.nerve(k);
    let mut total = S::zero();
    for (pos, t) in nerve.level(k).iter().enumerate() {
        let w = &phi.values[pos];
        if w.is_zero() {
            continue;
        }
        let g0 = g.inverse(g.compose_all(t).unwrap());
        let x = g.source(g0);
        let mut m = a[0].values[g0].clone();
        for (i, &gi) in t.iter().enumerate() {
            m = mat_mul(&m, &a[i + 1].values[gi], n);
        }
        total = total + mat_trace(&m, n) * w.clone() * omega.weights[x].clone();
    }
    Ok(total)
}

/// `τ_Ω(a0 * (φ1·a1) * ⋯ * (φk·ak))` for degree-1 factors.
pub fn char_chi_product<S: Scalar>(
    g: &FiniteGroupoid,
    factors: &[GroupoidCochain<S>],
    a: &[ConvolutionElement<S>],
    omega: &DensityWeights<S>,
) -> Result<S, GroupoidError> {
    if a.len() != factors.len() + 1 {
        return Err(GroupoidError::DegreeMismatch { expected: factors.len() + 1, got: a.len() });
    }
    let mut acc = a[0].clone();
    for (f, x) in factors.iter().zip(&a[1..]) {
        acc = convolve(g, &acc, &x.weighted_by(g, f)?)?;
    }
    trace_omega(g, &acc, omega)
}

/// Idempotent `P` over the convolution algebra with constant part `e` and window `U`.
#[derive(Clone, Debug)]
pub struct LocalizedIdempotent<S> {
    p: ConvolutionElement<S>,
    e: Vec<S>,
    window: BTreeSet<usize>,
}

impl<S: Scalar> LocalizedIdempotent<S> {
    pub fn new(
        g: &FiniteGroupoid,
        p: ConvolutionElement<S>,
        e: Vec<S>,
        window: BTreeSet<usize>,
        tol: f64,
    ) -> Result<Self, GroupoidError> {
        p.check(g)?;
        let n = p.dim;
        if e.len() != n * n {
            return Err(GroupoidError::ShapeMismatch(e.len(), n * n));
        }
        if !g.units().is_subset(&window) {
            return Err(GroupoidError::WindowMissingUnits);
        }
        let p2 = convolve(g, &p, &p)?;
        if !p2.close(&p, tol) {
            return Err(GroupoidError::NotIdempotent(p2.sub(&p)?.max_abs()));
        }
        let e2 = mat_mul(&e, &e, n);
        if !e2.iter().zip(&e).all(|(a, b)| a.close(b, tol)) {
            let r = e2.iter().zip(&e).map(|(a, b)| (a.clone() - b.clone()).norm_f64()).fold(0.0, f64::max);
            return Err(GroupoidError::NotIdempotent(r));
        }
        let diff = p.sub(&ConvolutionElement::constant(g, n, &e))?;
        if let Some(a) = diff.actual_support(tol).difference(&window).next() {
            return Err(GroupoidError::OutsideWindow(*a));
        }
        Ok(LocalizedIdempotent { p, e, window })
    }

    pub fn p(&self) -> &ConvolutionElement<S> {
        &self.p
    }

    pub fn e(&self) -> &[S] {
        &self.e
    }

    pub fn window(&self) -> &BTreeSet<usize> {
        &self.window
    }
}

/// Pairing reported per component: `components[i]` is the term built from `φ_{2i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairingReport<S> {
    pub components: Vec<S>,
    pub total: S,
}

fn pairing_terms<S: Scalar>(
    g: &FiniteGroupoid,
    phis: &[GroupoidCochain<S>],
    e: &ConvolutionElement<S>,
    omega: &DensityWeights<S>,
) -> Result<Vec<S>, GroupoidError> {
    let half = ConvolutionElement::unit(g, e.dim).scale(&S::from_ratio(1, 2));
    let e_half = e.sub(&half)?;
    let mut out = vec![];
    let mut coef = S::one();
    for (i, phi) in phis.iter().enumerate() {
        if phi.degree != 2 * i {
            return Err(GroupoidError::DegreeMismatch { expected: 2 * i, got: phi.degree });
        }
        if i > 0 {
            // (2i)!/i! from (2i-2)!/(i-1)!, times the sign flip
            coef = -coef * S::from_i64((2 * i * (2 * i - 1) / i) as i64);
        }
        let mut args = vec![e_half.clone()];
        args.extend(std::iter::repeat(e.clone()).take(2 * i));
        out.push(coef.clone() * char_chi(g, phi, &args, omega)?);
    }
    Ok(out)
}

/// `Σ_i (-1)^i (2i)!/i! χ_Ω(φ_{2i})((e - ½) ⊗ e ⊗ ⋯ ⊗ e)` for the class `[P] - [e]`.
///
/// `phis[i]` must have degree `2i`. The constant part `e` is realized as `e ⊗ 1`
/// in the (unital) convolution algebra and its pairing is subtracted.
pub fn chern_connes_pair<S: Scalar>(
    g: &FiniteGroupoid,
    phis: &[GroupoidCochain<S>],
    p: &LocalizedIdempotent<S>,
    omega: &DensityWeights<S>,
) -> Result<PairingReport<S>, GroupoidError> {
    let n = p.p.dim;
    let tp = pairing_terms(g, phis, &p.p, omega)?;
    let te = pairing_terms(g, phis, &ConvolutionElement::constant(g, n, &p.e), omega)?;
    let components: Vec<S> = tp.into_iter().zip(te).map(|(a, b)| a - b).collect();
    let total = components.iter().fold(S::zero(), |acc, c| acc + c.clone());
    Ok(PairingReport { components, total })
}

/// Invariant function on `(k+1)`-tuples of arrows sharing a target.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousCochain<S> {
    pub degree: usize,
    pub values: HashMap<Vec<usize>, S>,
}

/// All `len`-tuples of arrows with a common target.
pub fn t_fiber_tuples(g: &FiniteGroupoid, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![];
    for x in 0..g.objects() {
        let fiber: Vec<usize> = (0..g.arrows()).filter(|&a| g.target(a) == x).collect();
        let mut cur: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..len {
            cur = cur
                .into_iter()
                .flat_map(|t| {
                    fiber.iter().map(move |&a| {
                        let mut u = t.clone();
                        u.push(a);
                        u
                    })
                })
                .collect();
        }
        out.extend(cur);
    }
    out
}

/// `ψ ↦ ψ̄`, `ψ̄(g0,…,gk) = ψ(g0 g1^{-1},…,g_{k-1} gk^{-1})`; in degree 0, `ψ̄(g0) = ψ(s g0)`.
pub fn to_homogeneous<S: Scalar>(
    g: &FiniteGroupoid,
    psi: &GroupoidCochain<S>,
) -> Result<HomogeneousCochain<S>, GroupoidError> {
    psi.check(g)?;
    let k = psi.degree;
    let mut values = HashMap::new();
    for t in t_fiber_tuples(g, k + 1) {
        let key: Vec<usize> = if k == 0 {
            vec![g.source(t[0])]
        } else {
            t.windows(2).map(|w| g.compose(w[0], g.inverse(w[1])).unwrap()).collect()
        };
        values.insert(t, psi.at(g, &key));
    }
    Ok(HomogeneousCochain { degree: k, values })
}

/// `φ ↦ φ̃`, `φ̃(g1,…,gk) = φ(g1⋯gk, g2⋯gk, …, gk, 1_{t(gk)})`, after checking invariance.
pub fn from_homogeneous<S: Scalar>(
    g: &FiniteGroupoid,
    phi: &HomogeneousCochain<S>,
    tol: f64,
) -> Result<GroupoidCochain<S>, GroupoidError> {
    let k = phi.degree;
    for (t, v) in &phi.values {
        let x = g.target(t[0]);
        for h in (0..g.arrows()).filter(|&h| g.source(h) == x) {
            let moved: Vec<usize> = t.iter().map(|&a| g.compose(a, h).unwrap()).collect();
            let w = phi.values.get(&moved).ok_or_else(|| GroupoidError::NonInvariant(moved.clone()))?;
            if !w.close(v, tol) {
                return Err(GroupoidError::NonInvariant(t.clone()));
            }
        }
    }
    let lookup = |key: &Vec<usize>| phi.values.get(key).cloned().ok_or_else(|| GroupoidError::NonInvariant(key.clone()));
    let nerve = g.nerve(k);
    let mut values = Vec::with_capacity(nerve.level(k).len());
    for t in nerve.level(k) {
        let key: Vec<usize> = if k == 0 {
            vec![g.unit(t[0])]
        } else {
            let mut key: Vec<usize> = (0..k).map(|i| g.compose_all(&t[i..]).unwrap()).collect();
            key.push(g.unit(g.target(t[k - 1])));
            key
        };
        values.push(lookup(&key)?);
    }
    Ok(GroupoidCochain { gid: g.id, degree: k, values })
}

/// Alexander-Spanier coboundary `Σ_i (-1)^i ψ(g0,…,ĝi,…,g_{k+1})`.
pub fn homogeneous_d<S: Scalar>(g: &FiniteGroupoid, phi: &HomogeneousCochain<S>) -> HomogeneousCochain<S> {
    let k = phi.degree + 1;
    let mut values = HashMap::new();
    for t in t_fiber_tuples(g, k + 1) {
        let mut acc = S::zero();
        for i in 0..=k {
            let mut u = t.clone();
            u.remove(i);
            let v = phi.values[&u].clone();
            acc = if i % 2 == 0 { acc + v } else { acc - v };
        }
        values.insert(t, acc);
    }
    HomogeneousCochain { degree: k, values }
}
