mod common;

use common::{lie_betti_oracle, rng, small_cq};
use lgindex_core::algebroid::{
    ce_cohomology, ce_differential, check_structure, increasing_tuples, modular_cocycle, pullback_algebroid,
    AlgebroidForm, AlgebroidPresentation, BaseModel, Density, Truncation, Violation,
};
use lgindex_core::scalars::{cq, q, BaseFunction, ChartPolynomial, Cq, Scalar, Q, TorusFunction, C64};
use num::{One, Zero};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type A = AlgebroidPresentation<Cq>;

fn point(c: Cq) -> BaseFunction<Cq> {
    BaseModel::Point.constant(c)
}

fn random_fn(a: &A, r: &mut ChaCha8Rng) -> BaseFunction<Cq> {
    match a.base {
        BaseModel::Torus { n, cutoff } => {
            let modes: Vec<(Vec<i64>, Cq)> = (0..4)
                .map(|_| ((0..n).map(|_| r.gen_range(-cutoff..=cutoff)).collect(), small_cq(r)))
                .collect();
            TorusFunction::from_modes(n, cutoff, modes).into_base()
        }
        _ => point(small_cq(r)),
    }
}

fn random_form(a: &A, k: usize, r: &mut ChaCha8Rng) -> AlgebroidForm<Cq> {
    let mut f = AlgebroidForm::zero(k);
    for t in increasing_tuples(a.rank, k) {
        f.add_at(&t, random_fn(a, r));
    }
    f
}

#[test]
fn check_structure_examples() {
    assert!(check_structure(&A::su2(), 0.0).is_empty());
    assert!(check_structure(&A::abelian(3), 0.0).is_empty());
    assert!(check_structure(&A::tangent_torus(2, 3), 0.0).is_empty());

    let mut bad = A::abelian(2);
    bad.structure[0][1][0] = point(Cq::one());
    bad.structure[1][0][0] = point(Cq::one());
    let d = check_structure(&bad, 0.0);
    assert!(d.iter().any(|x| x.violation == Violation::Antisymmetry { i: 0, j: 1, k: 0 } && x.residual == 2.0));

    // [e0,e1] = e1, [e0,e2] = e0, [e1,e2] = e2 is antisymmetric but not Lie
    let jac = A::lie_algebra(3, &[(0, 1, 1, cq(1, 1)), (0, 2, 0, cq(1, 1)), (1, 2, 2, cq(1, 1))]);
    let d = check_structure(&jac, 0.0);
    assert!(!d.is_empty());
    assert!(d.iter().all(|x| matches!(x.violation, Violation::Jacobi { .. })));

    // an anchor that is not a Lie algebra map: ρ(e0) = ∂θ, ρ(e1) = 0, [e0,e1] = e0
    let mut anc = A::zero(BaseModel::Torus { n: 1, cutoff: 2 }, 2);
    anc.anchor[0][0] = anc.base.constant(Cq::one());
    anc.structure[0][1][0] = anc.base.constant(Cq::one());
    anc.structure[1][0][0] = anc.base.constant(-Cq::one());
    let d = check_structure(&anc, 0.0);
    assert!(d.iter().any(|x| matches!(x.violation, Violation::Anchor { i: 0, j: 1, a: 0 })));

    // float mode honours the tolerance
    let mut near = A::su2().map(|z| z.to_c64());
    near.structure[0][1][2] = near.structure[0][1][2].add(&BaseModel::Point.constant(C64::new(1e-14, 0.0)));
    assert!(check_structure(&near, 1e-12).is_empty());
    assert!(!check_structure(&near, 1e-16).is_empty());
}

#[test]
fn ce_differential_examples() {
    let ab = A::abelian(3);
    let mut r = rng(1);
    for k in 0..=3 {
        assert!(ce_differential(&ab, &random_form(&ab, k, &mut r)).unwrap().is_zero());
    }

    // dξ¹(e₂,e₃) = −ξ¹([e₂,e₃]) = −1 with the standard signs
    let su2 = A::su2();
    let xi1 = AlgebroidForm::monomial(&[0], point(Cq::one()));
    let d = ce_differential(&su2, &xi1).unwrap();
    let z = su2.zero_fn();
    assert_eq!(d.eval(&[1, 2], &z).constant_term(), cq(-1, 1));
    assert!(d.eval(&[0, 1], &z).is_zero() && d.eval(&[0, 2], &z).is_zero());

    // f = 2 sin θ + cos 3θ on T¹; f′ by hand
    let tt = A::tangent_torus(1, 3);
    let i = Cq::new(Q::zero(), Q::one());
    let f = TorusFunction::from_modes(
        1,
        3,
        [(vec![1], -i.clone()), (vec![-1], i.clone()), (vec![3], cq(1, 2)), (vec![-3], cq(1, 2))],
    );
    let fp = TorusFunction::from_modes(
        1,
        3,
        [(vec![1], cq(1, 1)), (vec![-1], cq(1, 1)), (vec![3], i.clone() * cq(3, 2)), (vec![-3], -i * cq(3, 2))],
    );
    let d = ce_differential(&tt, &AlgebroidForm::monomial(&[], f.into_base())).unwrap();
    assert_eq!(d.eval(&[0], &tt.zero_fn()), fp.into_base());

    assert!(ce_differential(&su2, &AlgebroidForm::zero(4)).is_err());
    assert!(ce_differential(&su2, &AlgebroidForm::zero(3)).unwrap().is_zero());
}

#[test]
fn d_squared_vanishes_on_random_forms() {
    let models = [
        ("abelian", A::abelian(3)),
        ("su2", A::su2()),
        ("h3", A::heisenberg()),
        ("affine", A::affine()),
        ("T(T1) K=4", A::tangent_torus(1, 4)),
        ("T(T2) K=2", A::tangent_torus(2, 2)),
    ];
    let mut r = rng(11);
    for (name, a) in &models {
        for trial in 0..100 {
            let k = trial % a.rank.max(1);
            let f = random_form(a, k, &mut r);
            let dd = ce_differential(a, &ce_differential(a, &f).unwrap()).unwrap();
            assert!(dd.is_zero(), "{name}, degree {k}");
        }
    }
}

fn lie(r: usize, consts: &[(usize, usize, usize, Q)]) -> A {
    let c: Vec<(usize, usize, usize, Cq)> = consts.iter().map(|(i, j, k, v)| (*i, *j, *k, Cq::new(v.clone(), Q::zero()))).collect();
    A::lie_algebra(r, &c)
}

#[test]
fn betti_numbers_match_the_dense_oracle() {
    let one = q(1, 1);
    let cases: Vec<(&str, usize, Vec<(usize, usize, usize, Q)>, Option<Vec<usize>>)> = vec![
        ("abelian 1", 1, vec![], Some(vec![1, 1])),
        ("abelian 2", 2, vec![], Some(vec![1, 2, 1])),
        ("abelian 3", 3, vec![], Some(vec![1, 3, 3, 1])),
        ("affine", 2, vec![(0, 1, 1, one.clone())], None),
        ("su2", 3, vec![(0, 1, 2, one.clone()), (1, 2, 0, one.clone()), (0, 2, 1, -one.clone())], Some(vec![1, 0, 0, 1])),
        ("h3", 3, vec![(0, 1, 2, one.clone())], Some(vec![1, 2, 2, 1])),
        ("affine + line", 3, vec![(0, 1, 1, one.clone())], None),
    ];
    for (name, r, consts, want) in cases {
        let oracle = lie_betti_oracle(r, &consts);
        if let Some(w) = want {
            assert_eq!(oracle, w, "{name} oracle");
        }
        let got = ce_cohomology(&lie(r, &consts), Truncation::default()).unwrap();
        assert_eq!(got.betti(), oracle, "{name}");
        for d in &got.degrees {
            assert_eq!(d.betti, d.dim_kernel - d.dim_image);
            assert_eq!(d.representatives.len(), d.betti);
        }
    }
}

#[test]
fn torus_cohomology_is_stable() {
    let rep = ce_cohomology(&A::tangent_torus(2, 2), Truncation::default()).unwrap();
    assert_eq!(rep.betti(), vec![1, 2, 1]);
    assert!(rep.degrees.iter().all(|d| d.stable));
    assert_eq!(rep.cutoffs, vec![2, 4]);
    let tiny = Truncation { cutoff: 2, max_dim: 10 };
    assert!(ce_cohomology(&A::tangent_torus(2, 2), tiny).is_err());
    assert!(ce_cohomology(&A::tangent_chart(1, 2), Truncation::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // r_{3,λ}: [e0,e1] = e1, [e0,e2] = λ e2
    #[test]
    fn solvable_family_betti(n in -4i64..=4, d in 1i64..=3) {
        let consts = vec![(0, 1, 1, q(1, 1)), (0, 2, 2, q(n, d))];
        let a = lie(3, &consts);
        prop_assert!(check_structure(&a, 0.0).is_empty());
        let got = ce_cohomology(&a, Truncation::default()).unwrap().betti();
        prop_assert_eq!(got, lie_betti_oracle(3, &consts));
    }

    #[test]
    fn modular_class_is_independent_of_the_density(seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = A::tangent_torus(1, 4);
        let eta = random_fn(&a, &mut r);
        let t0 = modular_cocycle(&a, &Density::Exponential(a.zero_fn())).unwrap();
        let t1 = modular_cocycle(&a, &Density::Exponential(eta.clone())).unwrap();
        prop_assert!(ce_differential(&a, &t1).unwrap().is_zero());
        let deta = ce_differential(&a, &AlgebroidForm::monomial(&[], eta)).unwrap();
        prop_assert_eq!(t0.sub(&t1), deta);
    }
}

#[test]
fn modular_cocycle_examples() {
    let one = Density::Function(point(Cq::one()));
    assert!(modular_cocycle(&A::abelian(3), &one).unwrap().is_zero());
    assert!(modular_cocycle(&A::su2(), &one).unwrap().is_zero());
    assert!(modular_cocycle(&A::heisenberg(), &one).unwrap().is_zero());

    // Σ_i c^i_{ij} computed directly
    let aff = A::affine();
    let th = modular_cocycle(&aff, &one).unwrap();
    let z = aff.zero_fn();
    for j in 0..2 {
        let trace = (0..2).fold(Cq::zero(), |s, i| s + aff.structure[i][j][i].constant_term());
        assert_eq!(th.eval(&[j], &z).constant_term(), trace);
    }
    assert_eq!(th.eval(&[0], &z).constant_term(), cq(-1, 1));
    assert!(ce_differential(&aff, &th).unwrap().is_zero());

    // chart density Ω = 2 + x: (θ_1 − θ_Ω)(e) · Ω = ρ(e) Ω
    let ch = A::tangent_chart(1, 6);
    let omega = ChartPolynomial::from_terms(1, 6, [(vec![0], cq(2, 1)), (vec![1], cq(1, 1))]).into_base();
    let t1 = modular_cocycle(&ch, &Density::Function(ch.base.constant(Cq::one()))).unwrap();
    let tw = modular_cocycle(&ch, &Density::Function(omega.clone())).unwrap();
    let diff = t1.sub(&tw).eval(&[0], &ch.zero_fn());
    assert_eq!(diff.mul(&omega), ch.anchor_apply(0, &omega));

    let zero = Density::Function(ch.zero_fn());
    assert!(modular_cocycle(&ch, &zero).is_err());
}

#[test]
fn pullback_examples() {
    // abelian rank r: rank 2r, brackets zero, Θ standard
    for r in 1..=3 {
        let p = pullback_algebroid(&A::abelian(r), 2).unwrap();
        assert_eq!(p.algebroid.rank, 2 * r);
        assert!(p.algebroid.structure.iter().flatten().flatten().all(|c| c.is_zero()));
        let th = p.theta_matrix();
        for i in 0..2 * r {
            for j in 0..2 * r {
                let want = if j == i + r {
                    cq(1, 1)
                } else if i == j + r {
                    cq(-1, 1)
                } else {
                    Cq::zero()
                };
                assert!(th[i][j].is_constant());
                assert_eq!(th[i][j].constant_term(), want, "r={r} ({i},{j})");
            }
        }
    }

    // T(T¹): Θ = dθ∧dξ, anchors ∂θ and ∂ξ
    let p = pullback_algebroid(&A::tangent_torus(1, 3), 3).unwrap();
    assert_eq!(p.algebroid.rank, 2);
    let th = p.theta_matrix();
    assert_eq!(th[0][1].constant_term(), cq(1, 1));
    assert!(th[0][1].is_constant());
    assert!(p.projects_to_source());
    assert!(check_structure(&p.algebroid, 0.0).is_empty());
    assert!(ce_differential(&p.algebroid, &p.theta).unwrap().is_zero());

    // Θ(X,Y) = ⟨π_A X, π_A* Y⟩ − ⟨π_A Y, π_A* X⟩ plus the ξ-linear bracket term on lifts
    let p = pullback_algebroid(&A::su2(), 3).unwrap();
    let th = p.theta_matrix();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(th[i][3 + j].constant_term(), if i == j { cq(1, 1) } else { Cq::zero() });
            assert!(th[3 + i][3 + j].is_zero());
        }
    }
    // Θ(lift e0, lift e1) = ξ_2
    let xi2 = p.algebroid.zero_fn().coordinate(p.fiber_var(2));
    assert_eq!(th[0][1], xi2);

    let bad = A::lie_algebra(3, &[(0, 1, 1, cq(1, 1)), (0, 2, 0, cq(1, 1)), (1, 2, 2, cq(1, 1))]);
    assert!(pullback_algebroid(&bad, 2).is_err());
}

#[test]
fn pullbacks_of_passing_sources_pass() {
    let sources = [A::abelian(2), A::su2(), A::heisenberg(), A::affine(), A::tangent_torus(1, 2), A::tangent_chart(2, 3)];
    for a in &sources {
        let p = pullback_algebroid(a, 3).unwrap();
        assert!(check_structure(&p.algebroid, 0.0).is_empty(), "{:?}", a.base);
        assert!(p.projects_to_source());
        assert!(ce_differential(&p.algebroid, &p.theta).unwrap().is_zero());
        // nondegenerate at the origin: the ξ-free part of Θ is the standard pairing
        let r = p.rank();
        let th = p.theta_matrix();
        for i in 0..r {
            assert_eq!(th[i][r + i].constant_term(), cq(1, 1));
        }
    }
}
