#![allow(dead_code)]

use lgindex_core::groupoid_finite::{ConvolutionElement, FiniteGroupoid, GroupoidCochain};
use lgindex_core::linalg::{mat_inverse, mat_mul};
use lgindex_core::scalars::{Cq, Q};
use num::{BigInt, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_q(r: &mut ChaCha8Rng) -> Q {
    Q::new(BigInt::from(r.gen_range(-5i64..=5)), BigInt::from(r.gen_range(1i64..=3)))
}

pub fn small_cq(r: &mut ChaCha8Rng) -> Cq {
    let re = small_q(r);
    let im = if r.gen_bool(0.5) { small_q(r) } else { Q::zero() };
    Cq::new(re, im)
}

pub fn random_cochain(g: &FiniteGroupoid, k: usize, r: &mut ChaCha8Rng) -> GroupoidCochain<Cq> {
    GroupoidCochain::from_fn(g, k, |_| small_cq(r))
}

pub fn random_element(g: &FiniteGroupoid, dim: usize, r: &mut ChaCha8Rng) -> ConvolutionElement<Cq> {
    ConvolutionElement::from_matrix_fn(g, dim, |_| (0..dim * dim).map(|_| small_cq(r)).collect())
}

/// Groupoids used across the finite tests.
pub fn sample_groupoids() -> Vec<(&'static str, FiniteGroupoid)> {
    let z2: Vec<Vec<usize>> = (0..2).map(|a| (0..2).map(|b| (a + b) % 2).collect()).collect();
    let flip = vec![vec![0, 1], vec![1, 0], vec![2, 2]];
    vec![
        ("pair3", FiniteGroupoid::pair(3)),
        ("S3", FiniteGroupoid::symmetric3()),
        ("Z2 on 3 points", FiniteGroupoid::action(&z2, &flip).unwrap()),
        ("pair2 + Z3", FiniteGroupoid::disjoint_union(&FiniteGroupoid::pair(2), &FiniteGroupoid::cyclic(3))),
        ("pair2 x Z2", FiniteGroupoid::product(&FiniteGroupoid::pair(2), &FiniteGroupoid::cyclic(2))),
    ]
}

/// Random rational idempotent of size `m` and rank `rank`: `A (B A)^{-1} B`.
pub fn random_projector(m: usize, rank: usize, r: &mut ChaCha8Rng) -> Vec<Cq> {
    loop {
        let a: Vec<Vec<Cq>> = (0..m).map(|_| (0..rank).map(|_| small_cq(r)).collect()).collect();
        let b: Vec<Vec<Cq>> = (0..rank).map(|_| (0..m).map(|_| small_cq(r)).collect()).collect();
        let mut ba = vec![Cq::zero(); rank * rank];
        for i in 0..rank {
            for j in 0..rank {
                ba[i * rank + j] = (0..m).fold(Cq::zero(), |acc, l| acc + b[i][l].clone() * a[l][j].clone());
            }
        }
        let Some(inv) = mat_inverse(&ba, rank) else { continue };
        let mut out = vec![Cq::zero(); m * m];
        for i in 0..m {
            for j in 0..m {
                let mut s = Cq::zero();
                for p in 0..rank {
                    for q in 0..rank {
                        s = s + a[i][p].clone() * inv[p * rank + q].clone() * b[q][j].clone();
                    }
                }
                out[i * m + j] = s;
            }
        }
        debug_assert_eq!(mat_mul(&out, &out, m), out);
        return out;
    }
}

/// Pair-groupoid element whose arrow `x -> y` carries block `(x, y)` of an `(n·dim)`-square matrix.
pub fn pair_element(g: &FiniteGroupoid, n: usize, dim: usize, m: &[Cq]) -> ConvolutionElement<Cq> {
    let big = n * dim;
    ConvolutionElement::from_matrix_fn(g, dim, |a| {
        let (x, y) = (g.source(a), g.target(a));
        let mut block = vec![];
        for i in 0..dim {
            for j in 0..dim {
                block.push(m[(x * dim + i) * big + y * dim + j].clone());
            }
        }
        block
    })
}

/// Rank over ℚ by plain row reduction.
pub fn q_rank(mut m: Vec<Vec<Q>>) -> usize {
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).find(|&r| !m[r][c].is_zero()) else { continue };
        m.swap(rank, p);
        let pivot = m[rank][c].clone();
        for r in 0..m.len() {
            if r != rank && !m[r][c].is_zero() {
                let f = m[r][c].clone() / pivot.clone();
                for cc in c..cols {
                    let v = m[rank][cc].clone() * f.clone();
                    m[r][cc] -= v;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn tuples(r: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for t in tuples(r, k - 1) {
        let start = t.last().map_or(0, |&x| x + 1);
        for x in start..r {
            let mut u = t.clone();
            u.push(x);
            out.push(u);
        }
    }
    out
}

/// Betti numbers of a Lie algebra from `[e_i, e_j] = Σ c e_k` (pairs with
/// `i < j`), by dense matrices of `d: Λᵏ → Λᵏ⁺¹` on the dual basis.
pub fn lie_betti_oracle(r: usize, brackets: &[(usize, usize, usize, Q)]) -> Vec<usize> {
    let mut c = vec![vec![vec![Q::zero(); r]; r]; r];
    for (i, j, k, v) in brackets {
        c[*i][*j][*k] = v.clone();
        c[*j][*i][*k] = -v.clone();
    }
    // (dξ^I)(e_J) = Σ_{a<b} (−1)^{a+b} ξ^I([e_ja, e_jb], e_J\{a,b})
    let d = |k: usize| -> Vec<Vec<Q>> {
        let cols = tuples(r, k);
        tuples(r, k + 1)
            .into_iter()
            .map(|j| {
                let mut row = vec![Q::zero(); cols.len()];
                for a in 0..j.len() {
                    for b in a + 1..j.len() {
                        let rest: Vec<usize> = (0..j.len()).filter(|&x| x != a && x != b).map(|x| j[x]).collect();
                        for m in 0..r {
                            let v = &c[j[a]][j[b]][m];
                            if v.is_zero() || rest.contains(&m) {
                                continue;
                            }
                            // sort (m, rest): m moves past the entries below it
                            let below = rest.iter().filter(|&&x| x < m).count();
                            let mut idx = rest.clone();
                            idx.insert(below, m);
                            let col = cols.iter().position(|t| *t == idx).unwrap();
                            let sign = if (a + b + below) % 2 == 0 { 1 } else { -1 };
                            row[col] += v.clone() * Q::from_integer(sign.into());
                        }
                    }
                }
                row
            })
            .collect()
    };
    let ranks: Vec<usize> = (0..r).map(|k| q_rank(d(k))).collect();
    (0..=r)
        .map(|k| {
            let dim = tuples(r, k).len();
            dim - if k < r { ranks[k] } else { 0 } - if k > 0 { ranks[k - 1] } else { 0 }
        })
        .collect()
}
