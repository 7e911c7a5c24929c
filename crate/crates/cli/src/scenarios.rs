//! One runner per scenario kind. Each returns a report or a configuration error;
//! failures inside a computation become failed records.

use std::collections::BTreeSet;

use lgindex_core::algebroid::{
    ce_cohomology, ce_differential, check_structure, increasing_tuples, modular_cocycle, pullback_algebroid, AlgebroidForm,
    AlgebroidPresentation, BaseModel, Density, Truncation,
};
use lgindex_core::charclass_index::{
    difference_idempotent, index_rhs, Cocycle, CutoffProfile, EllipticSymbolData, LieAlgebroidConnection, QuadratureGrid,
    WitnessGrid,
};
use lgindex_core::germ_vanest::{GermCochain, LocalGroupoidModel};
use lgindex_core::groupoid_finite::{
    chern_connes_pair, convolve, cyclic_tau, diff_d, trace_omega, ConvolutionElement, DensityWeights, FiniteGroupoid,
    GroupoidCochain, LocalizedIdempotent,
};
use lgindex_core::linalg::{mat_inverse, mat_mul, rank_bareiss};
use lgindex_core::oracle_ops::{
    circle_operator, fredholm_index_oracle, localized_pairing_lhs, oscillator_operator, GridModel, IndexOptions, OperatorSpec,
    PairingOptions, ParametrixConfig,
};
use lgindex_core::quantize::{homogeneity_xi, lie_poisson, moyal_star, pbw_star, PbwOrdering, SymbolSeries, SymbolSpace};
use lgindex_core::scalars::{BaseFunction, Cq, Scalar, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{bad, nonzero, AlgebroidSpec, BaseSpec, ConfigError, GroupoidSpec, Mode, Rational, ScenarioConfig, ScenarioKind};
use crate::report::{Basis, Quantity, RunReport};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Command-line overrides; they take precedence over the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

struct Ctx {
    tol: f64,
    rng: ChaCha8Rng,
}

impl Ctx {
    fn small<S: Scalar>(&mut self) -> S {
        S::from_ratio(self.rng.gen_range(-4..=4), self.rng.gen_range(1..=3))
    }

    fn small_complex<S: Scalar>(&mut self) -> S {
        let re = self.small::<S>();
        if self.rng.gen_bool(0.5) {
            re + S::imag_unit() * self.small::<S>()
        } else {
            re
        }
    }

    /// `|x| == 0` in exact mode, `|x| <= tol` otherwise.
    fn negligible<S: Scalar>(&self, x: f64) -> bool {
        if S::is_exact() {
            x == 0.0
        } else {
            x <= self.tol
        }
    }
}

pub fn run_scenario(kind: ScenarioKind, cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunReport, ConfigError> {
    if let Some(k) = cfg.scenario {
        if k != kind {
            return Err(bad(format!("scenario file is for {} but {} was requested", k.name(), kind.name())));
        }
    }
    let default_mode = if kind == ScenarioKind::IndexVerify { Mode::Float } else { Mode::Exact };
    let mode = opts.mode.or(cfg.mode).unwrap_or(default_mode);
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    let echo = serde_json::to_value(cfg).expect("config is serializable");
    let mut rep = RunReport::new(kind.name(), mode.name(), seed, echo);
    let mut ctx = Ctx { tol: cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE), rng: ChaCha8Rng::seed_from_u64(seed) };
    macro_rules! dispatch {
        ($f:ident, $inp:expr) => {
            match mode {
                Mode::Exact => $f::<Cq>(&$inp, &mut ctx, &mut rep)?,
                Mode::Float => $f::<C64>(&$inp, &mut ctx, &mut rep)?,
            }
        };
    }
    match kind {
        ScenarioKind::CheckAlgebroid => dispatch!(check_algebroid, cfg.input::<CheckAlgebroidInput>()?),
        ScenarioKind::Cohomology => {
            if mode == Mode::Float {
                return Err(bad("cohomology runs in exact mode only"));
            }
            cohomology(&cfg.input::<CohomologyInput>()?, &mut rep)?
        }
        ScenarioKind::GroupoidPairing => dispatch!(groupoid_pairing, cfg.input::<GroupoidPairingInput>()?),
        ScenarioKind::StarVerify => dispatch!(star_verify, cfg.input::<StarVerifyInput>()?),
        ScenarioKind::VanestVerify => dispatch!(vanest_verify, cfg.input::<VanestInput>()?),
        ScenarioKind::IndexVerify => {
            if mode == Mode::Exact {
                return Err(bad("index-verify runs in float mode only"));
            }
            index_verify(&cfg.input::<IndexVerifyInput>()?, &mut rep)?
        }
    }
    rep.recompute_pass();
    Ok(rep)
}

fn random_base_fn<S: Scalar>(a: &AlgebroidPresentation<S>, ctx: &mut Ctx) -> BaseFunction<S> {
    let z = a.zero_fn();
    let mut f = z.const_like(ctx.small_complex());
    match a.base {
        BaseModel::Point => {}
        BaseModel::Torus { n, cutoff } | BaseModel::Product { nt: n, cutoff, .. } if n > 0 => {
            let j = ctx.rng.gen_range(0..n);
            let k = ctx.rng.gen_range(-cutoff..=cutoff);
            f = f.add(&z.wave(j, k).scale(&ctx.small_complex()));
        }
        _ => {
            let nv = a.base.nvars();
            if nv > 0 {
                let j = ctx.rng.gen_range(0..nv);
                f = f.add(&z.coordinate(j).scale(&ctx.small_complex()));
            }
        }
    }
    f
}

fn residual_check<S: Scalar>(rep: &mut RunReport, ctx: &Ctx, name: &str, worst: f64, basis: Basis) {
    rep.check(name, Some(Quantity::Real(0.0)), Quantity::Real(worst), Some(worst), ctx.negligible::<S>(worst), basis);
}

// ---------------------------------------------------------------------------
// check-algebroid

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CheckAlgebroidInput {
    pub algebroid: AlgebroidSpec,
    /// Constant values `θ(e_j)` of the modular cocycle for `Ω = 1`.
    #[serde(default)]
    pub expected_modular: Option<Vec<Rational>>,
}

fn check_algebroid<S: Scalar>(inp: &CheckAlgebroidInput, ctx: &mut Ctx, rep: &mut RunReport) -> Result<(), ConfigError> {
    let a = inp.algebroid.build::<S>()?;
    let diags = check_structure(&a, ctx.tol);
    let worst = diags.iter().map(|d| d.residual).fold(0.0, f64::max);
    rep.check(
        "structure identities violated",
        Some(Quantity::Int(0)),
        Quantity::Int(diags.len() as i64),
        Some(worst),
        diags.is_empty(),
        Basis::Invariant,
    );
    let mut worst = 0.0f64;
    for k in 0..a.rank.saturating_sub(1) {
        for t in increasing_tuples(a.rank, k) {
            let alpha = AlgebroidForm::monomial(&t, random_base_fn(&a, ctx));
            match ce_differential(&a, &alpha).and_then(|d| ce_differential(&a, &d)) {
                Ok(dd) => worst = worst.max(dd.max_abs()),
                Err(e) => {
                    rep.error("d∘d = 0", e);
                    return Ok(());
                }
            }
        }
    }
    residual_check::<S>(rep, ctx, "d∘d = 0", worst, Basis::Invariant);

    let omega = Density::Function(a.base.constant(S::one()));
    match modular_cocycle(&a, &omega) {
        Ok(theta) => {
            let zero = a.zero_fn();
            let values: Vec<S> = (0..a.rank).map(|j| theta.eval(&[j], &zero).constant_term()).collect();
            let computed = Quantity::List(values.iter().map(Quantity::scalar).collect());
            match ce_differential(&a, &theta) {
                Ok(d) => residual_check::<S>(rep, ctx, "modular cocycle is closed", d.max_abs(), Basis::Invariant),
                Err(e) => rep.error("modular cocycle is closed", e),
            }
            match &inp.expected_modular {
                Some(exp) => {
                    if exp.len() != a.rank {
                        return Err(bad(format!("expected_modular needs {} entries", a.rank)));
                    }
                    let exp: Vec<S> = exp.iter().map(|r| r.to_q().map(|q| S::from_q(&q))).collect::<Result<_, _>>()?;
                    let res = exp.iter().zip(&values).map(|(x, y)| (x.clone() - y.clone()).norm_f64()).fold(0.0, f64::max);
                    let pass = exp.iter().zip(&values).all(|(x, y)| x.close(y, ctx.tol));
                    rep.check(
                        "modular cocycle θ(e_j), Ω = 1",
                        Some(Quantity::List(exp.iter().map(Quantity::scalar).collect())),
                        computed,
                        Some(res),
                        pass,
                        Basis::Config,
                    );
                }
                None => rep.check("modular cocycle θ(e_j), Ω = 1", None, computed, None, true, Basis::Invariant),
            }
        }
        Err(e) => rep.error("modular cocycle", e),
    }
    if a.base.cutoff().is_some() {
        rep.flag(format!("torus functions truncated at |k| <= {}", a.base.cutoff().unwrap_or(0)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cohomology

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CohomologyInput {
    pub algebroid: AlgebroidSpec,
    #[serde(default)]
    pub cutoff: Option<i64>,
    #[serde(default)]
    pub max_dim: Option<usize>,
    #[serde(default)]
    pub expected_betti: Option<Vec<usize>>,
}

/// Betti numbers of a point-base algebroid from ranks of the constant CE matrices.
fn betti_by_rank(a: &AlgebroidPresentation<Cq>) -> Option<Vec<usize>> {
    if a.base != BaseModel::Point {
        return None;
    }
    let r = a.rank;
    let zero = a.zero_fn();
    let mut ranks = vec![0usize; r + 1];
    for (k, rank) in ranks.iter_mut().enumerate().take(r) {
        let targets = increasing_tuples(r, k + 1);
        let rows: Vec<Vec<Cq>> = increasing_tuples(r, k)
            .iter()
            .map(|t| {
                let d = ce_differential(a, &AlgebroidForm::monomial(t, a.base.constant(Cq::from_i64(1)))).ok()?;
                Some(targets.iter().map(|u| d.eval(u, &zero).constant_term()).collect())
            })
            .collect::<Option<_>>()?;
        *rank = rank_bareiss(&rows);
    }
    Some(
        (0..=r)
            .map(|k| binom(r, k) - ranks[k] - if k > 0 { ranks[k - 1] } else { 0 })
            .collect(),
    )
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn cohomology(inp: &CohomologyInput, rep: &mut RunReport) -> Result<(), ConfigError> {
    let a = inp.algebroid.build::<Cq>()?;
    let mut trunc = Truncation::default();
    if let Some(c) = inp.cutoff {
        if c < 0 {
            return Err(bad("cutoff must be nonnegative"));
        }
        trunc.cutoff = c;
    }
    if let Some(m) = inp.max_dim {
        trunc.max_dim = nonzero(m, "max_dim")?;
    }
    let coh = match ce_cohomology(&a, trunc) {
        Ok(c) => c,
        Err(e) => {
            rep.error("betti numbers", e);
            return Ok(());
        }
    };
    let betti = coh.betti();
    match &inp.expected_betti {
        Some(exp) => rep.check("betti numbers", Some(Quantity::ints(exp)), Quantity::ints(&betti), None, *exp == betti, Basis::Config),
        None => rep.check("betti numbers", None, Quantity::ints(&betti), None, true, Basis::Invariant),
    }
    if let Some(oracle) = betti_by_rank(&a) {
        let pass = oracle == betti;
        rep.check("betti numbers by dense rank", Some(Quantity::ints(&oracle)), Quantity::ints(&betti), None, pass, Basis::Oracle);
    }
    let euler_b: i64 = betti.iter().enumerate().map(|(k, b)| if k % 2 == 0 { *b as i64 } else { -(*b as i64) }).sum();
    let euler_c: i64 =
        coh.degrees.iter().map(|d| if d.degree % 2 == 0 { d.dim_cochains as i64 } else { -(d.dim_cochains as i64) }).sum();
    rep.check("euler characteristic", Some(Quantity::Int(euler_c)), Quantity::Int(euler_b), None, euler_b == euler_c, Basis::Invariant);
    let stable = coh.degrees.iter().all(|d| d.stable);
    rep.check("stable under cutoff + 2", Some(Quantity::Flag(true)), Quantity::Flag(stable), None, stable, Basis::Invariant);
    if coh.truncated {
        rep.flag(format!("Fourier cutoffs {:?}", coh.cutoffs));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// groupoid-pairing

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GroupoidPairingInput {
    pub groupoid: GroupoidSpec,
    #[serde(default)]
    pub samples: Option<usize>,
    /// Largest nerve degree touched by the simplicial checks.
    #[serde(default)]
    pub max_degree: Option<usize>,
    /// Ranks of the test idempotents (pair groupoids only).
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
}

fn random_cochain<S: Scalar>(g: &FiniteGroupoid, k: usize, ctx: &mut Ctx) -> GroupoidCochain<S> {
    GroupoidCochain::from_fn(g, k, |_| ctx.small_complex())
}

fn random_matrix<S: Scalar>(m: usize, ctx: &mut Ctx) -> Vec<S> {
    (0..m * m).map(|_| ctx.small_complex()).collect()
}

/// `A (B A)^{-1} B` with random `A` (`m × rank`) and `B` (`rank × m`).
fn random_projector<S: Scalar>(m: usize, rank: usize, ctx: &mut Ctx) -> Vec<S> {
    loop {
        let a: Vec<S> = (0..m * rank).map(|_| ctx.small_complex()).collect();
        let b: Vec<S> = (0..rank * m).map(|_| ctx.small_complex()).collect();
        let ba: Vec<S> = (0..rank * rank)
            .map(|ij| (0..m).fold(S::zero(), |acc, l| acc + b[(ij / rank) * m + l].clone() * a[l * rank + ij % rank].clone()))
            .collect();
        let Some(inv) = mat_inverse(&ba, rank) else { continue };
        let ainv: Vec<S> = (0..m * rank)
            .map(|ij| (0..rank).fold(S::zero(), |acc, p| acc + a[(ij / rank) * rank + p].clone() * inv[p * rank + ij % rank].clone()))
            .collect();
        return (0..m * m)
            .map(|ij| (0..rank).fold(S::zero(), |acc, p| acc + ainv[(ij / m) * rank + p].clone() * b[p * m + ij % m].clone()))
            .collect();
    }
}

fn pair_element<S: Scalar>(g: &FiniteGroupoid, n: usize, m: &[S]) -> ConvolutionElement<S> {
    ConvolutionElement::from_matrix_fn(g, 1, |a| vec![m[g.source(a) * n + g.target(a)].clone()])
}

fn groupoid_pairing<S: Scalar>(inp: &GroupoidPairingInput, ctx: &mut Ctx, rep: &mut RunReport) -> Result<(), ConfigError> {
    let g = inp.groupoid.build()?;
    let samples = inp.samples.unwrap_or(20);
    let max_degree = inp.max_degree.unwrap_or(3);
    if max_degree > 4 {
        return Err(bad("max_degree above 4 is not supported"));
    }
    if g.objects() > 6 {
        return Err(bad("groupoids are limited to 6 objects"));
    }
    for k in 0..=max_degree.saturating_sub(2) {
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let phi = random_cochain::<S>(&g, k, ctx);
            match diff_d(&g, &phi).and_then(|d| diff_d(&g, &d)) {
                Ok(dd) => worst = worst.max(dd.values().iter().map(|x| x.norm_f64()).fold(0.0, f64::max)),
                Err(e) => return Ok(rep.error(format!("d∘d = 0, degree {k}"), e)),
            }
        }
        residual_check::<S>(rep, ctx, &format!("d∘d = 0, degree {k}"), worst, Basis::Invariant);
    }
    for k in 1..=max_degree {
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let phi = random_cochain::<S>(&g, k, ctx);
            let mut cur = phi.clone();
            for _ in 0..=k {
                cur = match cyclic_tau(&g, &cur) {
                    Ok(c) => c,
                    Err(e) => return Ok(rep.error(format!("τ^(k+1) = id, degree {k}"), e)),
                };
            }
            let res = cur.values().iter().zip(phi.values()).map(|(a, b)| (a.clone() - b.clone()).norm_f64()).fold(0.0, f64::max);
            worst = worst.max(res);
        }
        residual_check::<S>(rep, ctx, &format!("τ^(k+1) = id, degree {k}"), worst, Basis::Invariant);
    }
    let omega = DensityWeights::uniform(&g);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = ConvolutionElement::from_matrix_fn(&g, 2, |_| random_matrix::<S>(2, ctx));
        let b = ConvolutionElement::from_matrix_fn(&g, 2, |_| random_matrix::<S>(2, ctx));
        let t = convolve(&g, &a, &b)
            .and_then(|ab| convolve(&g, &b, &a).and_then(|ba| ab.sub(&ba)))
            .and_then(|c| trace_omega(&g, &c, &omega));
        match t {
            Ok(v) => worst = worst.max(v.norm_f64()),
            Err(e) => return Ok(rep.error("trace of commutators", e)),
        }
    }
    residual_check::<S>(rep, ctx, "trace of commutators", worst, Basis::Invariant);

    let Some(n) = inp.groupoid.pair_size() else {
        if inp.ranks.is_some() {
            return Err(bad("ranks are only used with pair groupoids"));
        }
        return Ok(());
    };
    let window: BTreeSet<usize> = (0..g.arrows()).collect();
    let one = GroupoidCochain::constant(&g, 0, S::one());
    let ranks = inp.ranks.clone().unwrap_or_else(|| (1..=3.min(n)).collect());
    for &r in &ranks {
        if r == 0 || r > n {
            return Err(bad(format!("rank {r} is out of range for the pair groupoid on {n} objects")));
        }
        let p = random_projector::<S>(n, r, ctx);
        let u = loop {
            let u = random_matrix::<S>(n, ctx);
            if let Some(inv) = mat_inverse(&u, n) {
                break (u, inv);
            }
        };
        let q = mat_mul(&mat_mul(&u.0, &p, n), &u.1, n);
        let mut values = vec![];
        for m in [&p, &q] {
            let li = LocalizedIdempotent::new(&g, pair_element(&g, n, m), vec![S::zero()], window.clone(), ctx.tol)
                .and_then(|li| chern_connes_pair(&g, std::slice::from_ref(&one), &li, &omega));
            match li {
                Ok(v) => values.push(v.total),
                Err(e) => return Ok(rep.error(format!("pairing rank law, rank {r}"), e)),
            }
        }
        let want = S::from_i64(r as i64);
        let res = (values[0].clone() - want.clone()).norm_f64();
        rep.check(
            format!("pairing rank law, rank {r}"),
            Some(Quantity::Int(r as i64)),
            Quantity::scalar(&values[0]),
            Some(res),
            values[0].close(&want, ctx.tol),
            Basis::Oracle,
        );
        let res = (values[1].clone() - values[0].clone()).norm_f64();
        rep.check(
            format!("pairing conjugation invariance, rank {r}"),
            Some(Quantity::scalar(&values[0])),
            Quantity::scalar(&values[1]),
            Some(res),
            values[1].close(&values[0], ctx.tol),
            Basis::Invariant,
        );
        // dβ with β vanishing on units pairs to zero in degree 2
        let beta = GroupoidCochain::from_fn(&g, 1, |t| if g.is_unit(t[0]) { S::zero() } else { ctx.small_complex() });
        let paired = diff_d(&g, &beta).and_then(|db| {
            let li = LocalizedIdempotent::new(&g, pair_element(&g, n, &p), vec![S::zero()], window.clone(), ctx.tol)?;
            chern_connes_pair(&g, &[GroupoidCochain::zero(&g, 0), db], &li, &omega)
        });
        match paired {
            Ok(v) => residual_check::<S>(rep, ctx, &format!("exact degree-2 cochain pairs to 0, rank {r}"), v.total.norm_f64(), Basis::Invariant),
            Err(e) => rep.error(format!("exact degree-2 cochain pairs to 0, rank {r}"), e),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// star-verify

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductKind {
    Moyal,
    Pbw,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StarVerifyInput {
    pub product: ProductKind,
    /// Defaults to `T*ℝ` (tangent algebroid of a chart) for Moyal.
    #[serde(default)]
    pub algebroid: Option<AlgebroidSpec>,
    /// `ħ` order `N`.
    pub order: usize,
    /// Total degree of the random test symbols.
    #[serde(default)]
    pub degree: Option<u32>,
    #[serde(default)]
    pub samples: Option<usize>,
}

fn random_symbol<S: Scalar>(space: &SymbolSpace<S>, degree: u32, ctx: &mut Ctx) -> SymbolSeries<S> {
    let a = space.algebroid().clone();
    let r = space.rank();
    let nv = a.base.nvars();
    let mut out = space.zero();
    for _ in 0..3 {
        let mut exps = vec![0u32; r];
        let mut left = ctx.rng.gen_range(0..=degree);
        let mut f = a.zero_fn().const_like(ctx.small_complex());
        if matches!(a.base, BaseModel::Chart { .. }) && left > 0 {
            let k = ctx.rng.gen_range(0..=left);
            f = f.mul(&a.zero_fn().coordinate(ctx.rng.gen_range(0..nv)).pow(k));
            left -= k;
        }
        while left > 0 && r > 0 {
            exps[ctx.rng.gen_range(0..r)] += 1;
            left -= 1;
        }
        out = out.add(&space.monomial(0, exps, f));
    }
    out
}

fn series_residual<S: Scalar>(a: &SymbolSeries<S>, b: &SymbolSeries<S>) -> f64 {
    a.sub(b).max_abs()
}

fn star_verify<S: Scalar>(inp: &StarVerifyInput, ctx: &mut Ctx, rep: &mut RunReport) -> Result<(), ConfigError> {
    let spec = match (&inp.algebroid, inp.product) {
        (Some(s), _) => s.clone(),
        (None, ProductKind::Moyal) => AlgebroidSpec::TangentChart { n: 1, cap: 12 },
        (None, ProductKind::Pbw) => return Err(bad("pbw needs an algebroid")),
    };
    let alg = spec.build::<S>()?;
    let n = inp.order;
    let degree = inp.degree.unwrap_or(2);
    let samples = inp.samples.unwrap_or(4);
    let space = SymbolSpace::new(alg.clone(), 3 * degree + 2, n);
    let star = |a: &SymbolSeries<S>, b: &SymbolSeries<S>| match inp.product {
        ProductKind::Moyal => moyal_star(a, b, n),
        ProductKind::Pbw => pbw_star(a, b, n, PbwOrdering::Normal),
    };
    let mut truncated = false;

    // generators: fiber coordinates and (chart) base coordinates
    let mut gens = (0..space.rank()).map(|i| space.xi(i)).collect::<Vec<_>>();
    if matches!(alg.base, BaseModel::Chart { .. }) {
        gens.extend((0..alg.base.nvars()).map(|j| space.base(alg.zero_fn().coordinate(j))));
    }
    let minus_i_hbar = space.hbar().scale(&-S::imag_unit());
    let mut worst = 0.0f64;
    for (p, a) in gens.iter().enumerate() {
        for b in &gens[p + 1..] {
            let lhs = star(a, b).and_then(|ab| star(b, a).map(|ba| ab.sub(&ba)));
            let rhs = lie_poisson(a, b).map(|pb| pb.mul(&minus_i_hbar));
            match (lhs, rhs) {
                (Ok(l), Ok(r)) => worst = worst.max(series_residual(&l, &r)),
                (Err(e), _) | (_, Err(e)) => return Ok(rep.error("commutator a*b - b*a = -iħ{a,b} on generators", e)),
            }
        }
    }
    residual_check::<S>(rep, ctx, "commutator a*b - b*a = -iħ{a,b} on generators", worst, Basis::Invariant);

    let mut assoc = 0.0f64;
    let mut xi_res = 0.0f64;
    for _ in 0..samples {
        let a = random_symbol(&space, degree, ctx);
        let b = random_symbol(&space, degree, ctx);
        let c = random_symbol(&space, degree, ctx);
        let r = (|| {
            let ab = star(&a, &b)?;
            let bc = star(&b, &c)?;
            let l = star(&ab, &c)?;
            let rr = star(&a, &bc)?;
            truncated |= l.truncated() || rr.truncated();
            let lhs = homogeneity_xi(&ab);
            let rhs = star(&homogeneity_xi(&a), &b)?.add(&star(&a, &homogeneity_xi(&b))?);
            Ok::<_, lgindex_core::quantize::QuantizeError>((series_residual(&l.truncate_order(n as u32), &rr.truncate_order(n as u32)), series_residual(&lhs, &rhs)))
        })();
        match r {
            Ok((x, y)) => {
                assoc = assoc.max(x);
                xi_res = xi_res.max(y);
            }
            Err(e) => return Ok(rep.error("associativity", e)),
        }
    }
    residual_check::<S>(rep, ctx, &format!("associativity modulo ħ^{}", n + 1), assoc, Basis::Invariant);
    residual_check::<S>(rep, ctx, "Ξ is a derivation", xi_res, Basis::Invariant);
    if truncated {
        rep.flag(format!("symbol degree cap {} reached", 3 * degree + 2));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// vanest-verify

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalModelSpec {
    Pair { base: BaseSpec },
    Action { algebroid: AlgebroidSpec },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VanestInput {
    pub model: LocalModelSpec,
    /// Total slot-degree cap of the germs.
    pub cap: u32,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
}

fn random_germ<S: Scalar>(model: &LocalGroupoidModel<S>, degree: usize, ctx: &mut Ctx) -> GermCochain<S> {
    let alg = model.algebroid().clone();
    let mut phi = model.zero(degree);
    let len = degree * model.rank();
    for _ in 0..4 {
        let mut e = vec![0u32; len];
        let mut left = ctx.rng.gen_range(0..=model.cap());
        while left > 0 && len > 0 {
            e[ctx.rng.gen_range(0..len)] += 1;
            left -= 1;
        }
        phi.add_term(e, random_base_fn(&alg, ctx));
    }
    phi
}

fn vanest_verify<S: Scalar>(inp: &VanestInput, ctx: &mut Ctx, rep: &mut RunReport) -> Result<(), ConfigError> {
    let model = match &inp.model {
        LocalModelSpec::Pair { base } => LocalGroupoidModel::<S>::pair(base.build()?, inp.cap),
        LocalModelSpec::Action { algebroid } => LocalGroupoidModel::<S>::action(algebroid.build()?, inp.cap),
    }
    .map_err(|e| bad(format!("model: {e}")))?;
    let degree = inp.degree.unwrap_or(1);
    if degree > model.rank() {
        return Err(bad(format!("degree {degree} exceeds the rank {}", model.rank())));
    }
    let samples = inp.samples.unwrap_or(4);
    let (mut dd, mut chain) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let phi = random_germ(&model, degree, ctx);
        let r = (|| {
            let d = model.germ_diff(&phi).map_err(|e| e.to_string())?;
            let d2 = model.germ_diff(&d).map_err(|e| e.to_string())?;
            let lhs = model.van_est_phi(&d).map_err(|e| e.to_string())?;
            let phi_ce = model.van_est_phi(&phi).map_err(|e| e.to_string())?;
            let rhs = ce_differential(model.algebroid(), &phi_ce).map_err(|e| e.to_string())?;
            Ok::<_, String>((d2.max_abs(), lhs.sub(&rhs).max_abs()))
        })();
        match r {
            Ok((a, b)) => {
                dd = dd.max(a);
                chain = chain.max(b);
            }
            Err(e) => return Ok(rep.error("van Est chain map", e)),
        }
    }
    residual_check::<S>(rep, ctx, "germ d∘d = 0 modulo cap", dd, Basis::Invariant);
    residual_check::<S>(rep, ctx, "Φ(dφ) = d_CE Φ(φ)", chain, Basis::Invariant);
    rep.flag(format!("germs truncated at total slot degree {}", inp.cap));
    Ok(())
}

// ---------------------------------------------------------------------------
// index-verify

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexModel {
    /// `d/dx + x` on the line, symbol `x + iξ`.
    Oscillator,
    /// `−i d/dθ` on the circle, symbol `ξ`.
    Circle,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridInput {
    pub n_coarse: usize,
    pub n_fine: usize,
    #[serde(default)]
    pub half_width: Option<f64>,
    pub t: f64,
    pub inner: f64,
    pub window: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IndexVerifyInput {
    pub model: IndexModel,
    #[serde(default)]
    pub lhs_tolerance: Option<f64>,
    #[serde(default)]
    pub rhs_tolerance: Option<f64>,
    #[serde(default)]
    pub grid: Option<GridInput>,
}

fn default_grid(m: IndexModel) -> GridInput {
    match m {
        IndexModel::Oscillator => GridInput { n_coarse: 285, n_fine: 571, half_width: Some(14.0), t: 0.1, inner: 3.5, window: 5.0 },
        IndexModel::Circle => GridInput { n_coarse: 127, n_fine: 255, half_width: None, t: 0.001, inner: 0.35, window: 0.5 },
    }
}

fn index_verify(inp: &IndexVerifyInput, rep: &mut RunReport) -> Result<(), ConfigError> {
    let lhs_tol = inp.lhs_tolerance.unwrap_or(1e-3);
    let rhs_tol = inp.rhs_tolerance.unwrap_or(match inp.model {
        IndexModel::Oscillator => 1e-6,
        IndexModel::Circle => 1e-8,
    });
    if !(lhs_tol > 0.0 && rhs_tol > 0.0) {
        return Err(bad("tolerances must be positive"));
    }
    let grid = inp.grid.clone().unwrap_or_else(|| default_grid(inp.model));

    let op = match inp.model {
        IndexModel::Oscillator => OperatorSpec::Hermite(vec![(1, 0, C64::new(1.0, 0.0)), (0, 1, C64::new(1.0, 0.0))]),
        IndexModel::Circle => OperatorSpec::Fourier(vec![(0, 1, C64::new(1.0, 0.0))]),
    };
    let fred = match fredholm_index_oracle(&op, &[8, 12, 16, 20], &IndexOptions::default()) {
        Ok(f) => f,
        Err(e) => return Ok(rep.error("fredholm index of the truncated operator", e)),
    };
    let Some(index) = fred.index else {
        rep.check("fredholm index of the truncated operator", None, Quantity::Exact(fred.diagnostic.unwrap_or_default()), None, false, Basis::Oracle);
        return Ok(());
    };
    rep.check("fredholm index of the truncated operator", None, Quantity::Int(index), None, true, Basis::Oracle);
    let expected = index as f64;

    // characteristic side
    let profile = CutoffProfile::new(0.2, 1.0).map_err(|e| bad(e.to_string()))?;
    let (alg, sigma) = match inp.model {
        IndexModel::Oscillator => {
            let alg = AlgebroidPresentation::<C64>::tangent_chart(1, 4);
            let space = SymbolSpace::new(alg.clone(), 4, 1);
            let x = space.base(alg.zero_fn().coordinate(0));
            (alg, x.add(&space.xi(0).scale(&C64::new(0.0, 1.0))))
        }
        IndexModel::Circle => {
            let alg = AlgebroidPresentation::<C64>::tangent_torus(1, 3);
            let space = SymbolSpace::new(alg.clone(), 4, 1);
            (alg, space.xi(0))
        }
    };
    let rhs = (|| {
        let data = EllipticSymbolData::new(vec![vec![sigma]], &WitnessGrid::default())?;
        let pb = pullback_algebroid(&alg, 4)?;
        let conn = LieAlgebroidConnection::trivial(pb.algebroid.clone());
        let omega = pb.source.base.constant(C64::new(1.0, 0.0));
        let q = QuadratureGrid { torus_points: 16, chart_points: 160, chart_half_width: 1.6 };
        index_rhs(&pb, &Cocycle::one(&pb.source), &difference_idempotent(data, profile), &conn, &omega, &q)
    })();
    let rhs = match rhs {
        Ok(r) => r,
        Err(e) => return Ok(rep.error("index_rhs", e)),
    };
    if rhs.ahat_truncated {
        rep.flag("Â series truncated");
    }
    if let Some(w) = &rhs.warning {
        rep.flag(w.clone());
    }
    let res = (rhs.value - C64::new(expected, 0.0)).norm();
    rep.check("index_rhs", Some(Quantity::Real(expected)), Quantity::complex(rhs.value), Some(res), res <= rhs_tol, Basis::Oracle);

    // operator side
    let cfg = ParametrixConfig { t: grid.t, inner: grid.inner, window: grid.window, idempotent_tol: 1e-9 };
    let one = |_: &[f64]| C64::new(1.0, 0.0);
    let lhs = match inp.model {
        IndexModel::Oscillator => {
            let hw = grid.half_width.unwrap_or(14.0);
            // partial trace well inside the periodic box, guard band beyond it
            let opts = PairingOptions { band: grid.window, partial_trace: Some((hw * 5.0 / 7.0, hw * 6.0 / 7.0)), localized: None };
            localized_pairing_lhs(
                &|n| {
                    let m = GridModel::new_line(n, hw)?;
                    let d = oscillator_operator(&m);
                    Ok((m, d))
                },
                grid.n_coarse,
                grid.n_fine,
                &cfg,
                &[&one],
                &opts,
            )
        }
        IndexModel::Circle => localized_pairing_lhs(
            &|n| {
                let m = GridModel::new_circle(n)?;
                let d = circle_operator(&m, |_| C64::new(0.0, 0.0));
                Ok((m, d))
            },
            grid.n_coarse,
            grid.n_fine,
            &cfg,
            &[&one],
            &PairingOptions::window(grid.window),
        ),
    };
    let lhs = match lhs {
        Ok(l) => l,
        Err(e) => return Ok(rep.error("localized_pairing_lhs", e)),
    };
    let res = (lhs.value - C64::new(expected, 0.0)).norm();
    rep.check("localized_pairing_lhs", Some(Quantity::Real(expected)), Quantity::complex(lhs.value), Some(res), res <= lhs_tol, Basis::Oracle);
    let res = (lhs.value - rhs.value).norm();
    rep.check("lhs = rhs", Some(Quantity::complex(rhs.value)), Quantity::complex(lhs.value), Some(res), res <= lhs_tol, Basis::Invariant);
    rep.check(
        "grid refinement change",
        Some(Quantity::Real(5.0 * lhs_tol)),
        Quantity::Real(lhs.refinement_delta),
        Some(lhs.refinement_delta),
        lhs.refinement_delta <= 5.0 * lhs_tol,
        Basis::Invariant,
    );
    rep.check("idempotent residual", Some(Quantity::Real(0.0)), Quantity::Real(lhs.residual), Some(lhs.residual), lhs.residual <= 1e-9, Basis::Invariant);
    rep.check("kernel mass outside the window", Some(Quantity::Real(0.0)), Quantity::Real(lhs.leak), Some(lhs.leak), lhs.leak <= lhs_tol, Basis::Invariant);
    if lhs.guard_mass > 0.0 {
        rep.check("guard band mass", Some(Quantity::Real(0.0)), Quantity::Real(lhs.guard_mass), Some(lhs.guard_mass), lhs.guard_mass <= lhs_tol, Basis::Invariant);
    }
    Ok(())
}
