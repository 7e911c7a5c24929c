mod common;

use common::*;
use lgindex_core::algebroid::{ce_differential, AlgebroidPresentation, BaseModel};
use lgindex_core::germ_vanest::*;
use lgindex_core::scalars::{cq, BaseFunction, Cq, Scalar, C64};
use num::One;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `[e1, e2] = e2` acting on ℝ by `ρ(e1) = -x ∂x`, `ρ(e2) = ∂x`.
fn affine_on_line(cap: u32) -> AlgebroidPresentation<Cq> {
    let base = BaseModel::Chart { n: 1, cap };
    let mut a = AlgebroidPresentation::<Cq>::zero(base, 2);
    let x = base.zero::<Cq>().coordinate(0);
    a.anchor[0][0] = x.neg();
    a.anchor[1][0] = base.constant(Cq::one());
    a.structure[0][1][1] = base.constant(Cq::one());
    a.structure[1][0][1] = base.constant(-Cq::one());
    a
}

fn random_base(base: BaseModel, r: &mut ChaCha8Rng) -> BaseFunction<Cq> {
    let mut f = base.zero::<Cq>();
    match base {
        BaseModel::Chart { .. } => {
            let x = f.coordinate(0);
            for p in 0..3 {
                f = f.add(&x.pow(p).scale(&small_cq(r)));
            }
        }
        BaseModel::Torus { .. } => {
            for k in -1..=1 {
                f = f.add(&f.wave(0, k).scale(&small_cq(r)));
            }
        }
        _ => f = base.constant(small_cq(r)),
    }
    f
}

fn random_germ(m: &LocalGroupoidModel<Cq>, k: usize, r: &mut ChaCha8Rng) -> GermCochain<Cq> {
    let base = m.algebroid().base;
    let mut out = m.zero(k);
    let nv = k * m.rank();
    for _ in 0..8 {
        let mut e = vec![0u32; nv];
        if nv > 0 {
            let deg = r.gen_range(0..=m.cap().min(3));
            for _ in 0..deg {
                e[r.gen_range(0..nv)] += 1;
            }
        }
        out.add_term(e, random_base(base, r));
    }
    out
}

fn models() -> Vec<(&'static str, LocalGroupoidModel<Cq>)> {
    vec![
        ("pair R", LocalGroupoidModel::pair(BaseModel::Chart { n: 1, cap: 8 }, 5).unwrap()),
        ("pair R2", LocalGroupoidModel::pair(BaseModel::Chart { n: 2, cap: 6 }, 4).unwrap()),
        ("pair T1", LocalGroupoidModel::pair(BaseModel::Torus { n: 1, cutoff: 4 }, 5).unwrap()),
        ("affine on R", LocalGroupoidModel::action(affine_on_line(8), 4).unwrap()),
        ("heisenberg", LocalGroupoidModel::action(AlgebroidPresentation::heisenberg(), 3).unwrap()),
    ]
}

#[test]
fn d_squared_vanishes_modulo_cap() {
    let mut r = rng(101);
    for (name, m) in models() {
        for k in 0..=1 {
            let phi = random_germ(&m, k, &mut r);
            let dd = m.germ_diff(&m.germ_diff(&phi).unwrap()).unwrap();
            assert!(dd.is_zero(), "{name}: d² ≠ 0 in degree {k}: {:?}", dd.terms().keys().take(3).collect::<Vec<_>>());
        }
    }
}

#[test]
fn bch_is_associative_modulo_cap() {
    // d of a linear cochain ⟨ξ, v⟩ is ⟨ξ, v1 + v2 - BCH(v1, v2)⟩ and d² = 0 is associativity
    for (name, m) in models() {
        for i in 0..m.rank() {
            let lin = m.slot_var(1, 0, i);
            let dd = m.germ_diff(&m.germ_diff(&lin).unwrap()).unwrap();
            assert!(dd.is_zero(), "{name}");
        }
    }
    let m = LocalGroupoidModel::<Cq>::action(AlgebroidPresentation::su2(), 3).unwrap();
    let z = m.bch();
    // third order: (1/12)([v,[v,w]] + [w,[w,v]]); [e1,[e1,e2]] = [e1,e3] = -e2
    let key = vec![2, 0, 0, 0, 1, 0];
    assert_eq!(z[1].terms()[&key].constant_term(), cq(-1, 12));
    let dd = m.germ_diff(&m.germ_diff(&m.slot_var(1, 0, 2)).unwrap()).unwrap();
    assert!(dd.is_zero());
}

#[test]
fn cap_overflow_is_reported() {
    let m = LocalGroupoidModel::<Cq>::pair(BaseModel::Chart { n: 1, cap: 4 }, 2).unwrap();
    let phi = m.zero(2);
    assert!(matches!(m.germ_diff(&phi), Err(GermError::CapOverflow { .. })));
}

#[test]
fn van_est_is_a_chain_map() {
    let mut r = rng(103);
    for (name, m) in models() {
        for k in 0..=2usize.min(m.rank()) {
            if k + 1 > m.cap() as usize {
                continue;
            }
            for _ in 0..3 {
                let phi = random_germ(&m, k, &mut r);
                let lhs = m.van_est_phi(&m.germ_diff(&phi).unwrap()).unwrap();
                let rhs = ce_differential(m.algebroid(), &m.van_est_phi(&phi).unwrap()).unwrap();
                assert_eq!(lhs, rhs, "{name}: Φd ≠ dΦ in degree {k}");
            }
        }
    }
}

#[test]
fn phi_examples_on_the_line() {
    let base = BaseModel::Chart { n: 1, cap: 6 };
    let m = LocalGroupoidModel::<Cq>::pair(base, 4).unwrap();
    let x = base.zero::<Cq>().coordinate(0);
    let g = x.pow(2).add(&base.constant(cq(2, 1)));
    let phi = m.slot_var(1, 0, 0).mul_base(&g);
    let form = m.van_est_phi(&phi).unwrap();
    // target-fiber orientation: Φ(v·g) = -g ξ¹
    assert_eq!(form.eval(&[0], &base.zero()), g.neg());
    // t*g is constant along target fibers; s*g moves with the base point
    let t_pull = m.flow_pullback(&g, 1, 0);
    assert!(m.van_est_phi(&t_pull).unwrap().is_zero());
    let s_pull = m.from_base(1, g.clone());
    assert_eq!(m.van_est_phi(&s_pull).unwrap().eval(&[0], &base.zero()), g.d(0));
}

#[test]
fn phi_is_antisymmetric() {
    let mut r = rng(107);
    let m = LocalGroupoidModel::action(affine_on_line(8), 4).unwrap();
    let phi = random_germ(&m, 2, &mut r);
    let form = m.van_est_phi(&phi).unwrap();
    let z = m.algebroid().zero_fn();
    let r01 = m.van_est_r_basis(0, &m.van_est_r_basis(1, &phi).unwrap()).unwrap().base_value();
    let r10 = m.van_est_r_basis(1, &m.van_est_r_basis(0, &phi).unwrap()).unwrap().base_value();
    assert_eq!(form.eval(&[0, 1], &z), r01.sub(&r10));
    assert_eq!(form.eval(&[1, 0], &z), r10.sub(&r01));
    assert!(form.eval(&[1, 1], &z).is_zero());
}

#[test]
fn r_x_matches_finite_difference_along_the_fiber_curve() {
    // pair model on ℝ²: curve ε ↦ (y + εX, -εX) ends at y
    let base = BaseModel::Chart { n: 2, cap: 6 };
    let m = LocalGroupoidModel::<Cq>::pair(base, 4).unwrap();
    let mut r = rng(109);
    let phi = random_germ(&m, 2, &mut r);
    let xsec = [base.constant(cq(2, 3)), base.constant(cq(-1, 2))];
    let rx = m.van_est_r(&xsec, &phi).unwrap();
    let xv = [2.0 / 3.0, -0.5];
    let y = [0.3, -0.2];
    let v2 = [0.17, 0.11];
    let h = 1e-4;
    let at = |eps: f64| {
        let x = [y[0] + eps * xv[0], y[1] + eps * xv[1]];
        let slots = [-eps * xv[0], -eps * xv[1], v2[0], v2[1]];
        phi.eval(&[], &x, &slots)
    };
    let fd = (at(-2.0 * h) - at(-h) * 8.0 + at(h) * 8.0 - at(2.0 * h)) / (12.0 * h);
    let exact = rx.eval(&[], &y, &v2);
    assert!((fd - exact).norm() < 1e-8, "{fd} vs {exact}");
}

#[test]
fn r_x_product_rule_with_base_functions() {
    let mut r = rng(113);
    let m = LocalGroupoidModel::action(affine_on_line(10), 4).unwrap();
    let base = m.algebroid().base;
    let phi = random_germ(&m, 2, &mut r);
    let f = random_base(base, &mut r);
    for i in 0..2 {
        let lhs = m.van_est_r_basis(i, &phi.mul_base(&f)).unwrap();
        // ρ(e_i) f · φ(y, 0, v2) + f R_i φ
        let mut restricted = m.zero(1);
        for (e, c) in phi.terms() {
            if e[..2].iter().all(|p| *p == 0) {
                restricted.add_term(e[2..].to_vec(), c.clone());
            }
        }
        let rhs = restricted.mul_base(&m.algebroid().anchor_apply(i, &f)).add(&m.van_est_r_basis(i, &phi).unwrap().mul_base(&f));
        assert_eq!(lhs, rhs);
    }
}

#[test]
fn float_model_agrees_with_exact() {
    let mexact = LocalGroupoidModel::<Cq>::action(AlgebroidPresentation::heisenberg(), 3).unwrap();
    let mfloat = LocalGroupoidModel::<C64>::action(AlgebroidPresentation::heisenberg(), 3).unwrap();
    for (a, b) in mexact.bch().iter().zip(mfloat.bch()) {
        for (e, f) in a.terms() {
            let g = &b.terms()[e];
            assert!((f.constant_term().to_c64() - g.constant_term()).norm() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prop_chain_map_degree_one(seed in any::<u64>(), which in 0usize..5) {
        let (_, m) = models().swap_remove(which);
        let phi = random_germ(&m, 1, &mut rng(seed));
        let lhs = m.van_est_phi(&m.germ_diff(&phi).unwrap()).unwrap();
        let rhs = ce_differential(m.algebroid(), &m.van_est_phi(&phi).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn prop_d_squared_degree_one(seed in any::<u64>()) {
        let m = LocalGroupoidModel::<Cq>::pair(BaseModel::Chart { n: 1, cap: 8 }, 5).unwrap();
        let phi = random_germ(&m, 1, &mut rng(seed));
        prop_assert!(m.germ_diff(&m.germ_diff(&phi).unwrap()).unwrap().is_zero());
    }
}
