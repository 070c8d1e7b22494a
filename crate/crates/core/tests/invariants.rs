//! Cross-module invariants as properties over random systems, indices and
//! points.

use proptest::prelude::*;
use sobolev_lab::cavity::{glued_cavitation, GridSet};
use sobolev_lab::energy::{check_orlicz, OrliczFunction};
use sobolev_lab::geometry::Index;
use sobolev_lab::homeo::{build_g, build_l, Homeo};
use sobolev_lab::linalg::{det, from_slice, op_norm};
use sobolev_lab::{CantorSystem, Dyadic, Family, MultiIndex, TowerIndex};

fn system() -> impl Strategy<Value = CantorSystem> {
    (2usize..=3).prop_flat_map(|n| ((n as u32 + 1)..=8).prop_map(move |b| CantorSystem::new(n, b).unwrap()))
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_volume_is_closed_form(sys in system(), k in 0usize..=8) {
        let n = sys.n as u32;
        for (family, base) in [(Family::A, sys.alpha(k)), (Family::B, sys.beta_seq(k)), (Family::Tower, sys.beta_seq(k))] {
            prop_assert_eq!(sys.generation_volume(k, family).unwrap(), Dyadic::int(2).powi(n) * base.powi(n));
        }
    }

    #[test]
    fn children_nest_in_parents(sys in system(), codes in proptest::collection::vec(0u32..8, 1..=4), target in any::<bool>()) {
        let v = sys.vertex_count();
        let codes: Vec<u32> = codes.into_iter().map(|c| c % v).collect();
        let family = if target { Family::B } else { Family::A };
        let idx = |codes: &[u32]| Index::Multi(MultiIndex { family, codes: codes.to_vec() });
        let k = codes.len();
        let inner = sys.cube(&idx(&codes), false).unwrap();
        let outer = sys.cube(&idx(&codes), true).unwrap();
        prop_assert!(outer.contains_cube(&inner));
        prop_assert!(sys.cube(&idx(&codes[..k - 1]), false).unwrap().contains_cube(&outer));
        // a sibling's frame never overlaps this one
        let mut sib = codes.clone();
        sib[k - 1] = (sib[k - 1] + 1) % v;
        prop_assert!(sys.cube(&idx(&sib), true).unwrap().interiors_disjoint(&outer));
    }

    // Tower primed cubes have radius 2^{-k} beta_{k-1}, wider than a slot, so
    // only the unprimed cubes nest and separate.
    #[test]
    fn tower_cubes_stack_in_their_parent(sys in system(), slots in proptest::collection::vec(1u32..=8, 1..=4)) {
        let v = sys.vertex_count();
        let slots: Vec<u32> = slots.into_iter().map(|s| (s - 1) % v + 1).collect();
        let k = slots.len();
        let cube = |s: &[u32]| sys.cube(&Index::Tower(TowerIndex { slots: s.to_vec() }), false).unwrap();
        let child = cube(&slots);
        prop_assert!(cube(&slots[..k - 1]).contains_cube(&child));
        let mut sib = slots.clone();
        sib[k - 1] = sib[k - 1] % v + 1;
        prop_assert!(cube(&sib).interiors_disjoint(&child));
        // siblings differ only in the last coordinate
        let (a, b) = (child.center_f(), cube(&sib).center_f());
        for i in 0..sys.n - 1 {
            prop_assert_eq!(a[i], b[i]);
        }
    }

    #[test]
    fn frame_maps_round_trip(sys in system(), k in 1usize..=3, seed in point(3)) {
        let n = sys.n;
        let x = from_slice(&seed[..n]);
        let g = build_g(k, &sys).unwrap();
        let l = build_l(k, &sys).unwrap();
        for m in [&g as &dyn Homeo, &l] {
            let jet = m.eval(&x).unwrap();
            prop_assert!(jet.j > 0.0);
            prop_assert!((jet.j - det(n, &jet.d)).abs() <= 1e-9 * jet.j.max(1.0));
            // an ulp of the image costs |Dm^-1| ulps of the preimage
            let cond = op_norm(n, &m.eval_inverse(&jet.value).unwrap().d);
            let back = m.invert(&jet.value).unwrap();
            for i in 0..n {
                prop_assert!((back[i] - x[i]).abs() < 1e-13 * (1.0 + cond), "{} at {:?}", m.label(), &x[..n]);
            }
        }
    }

    #[test]
    fn frame_maps_fix_the_cube_boundary(sys in system(), k in 1usize..=3, seed in point(3), face in 0usize..6) {
        let n = sys.n;
        let mut x = from_slice(&seed[..n]);
        x[face % n] = if face < 3 { -1.0 } else { 1.0 };
        for m in [&build_g(k, &sys).unwrap() as &dyn Homeo, &build_l(k, &sys).unwrap()] {
            let y = m.apply(&x).unwrap();
            for i in 0..n {
                prop_assert!((y[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_measure_is_additive(bits_a in proptest::collection::vec(any::<bool>(), 256), bits_b in proptest::collection::vec(any::<bool>(), 256)) {
        let mut a = GridSet::empty(2, &[-1.0, -1.0], &[1.0, 1.0], 16).unwrap();
        let mut b = a.clone();
        for i in 0..256 {
            a.set(i, bits_a[i]);
            b.set(i, bits_b[i]);
        }
        let lhs = a.union(&b).unwrap().measure() + a.intersection(&b).unwrap().measure();
        prop_assert!((lhs - a.measure() - b.measure()).abs() < 1e-12);
        prop_assert!((a.measure() + a.complement().measure() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn orlicz_functions_from_increasing_knots_are_admissible(lambda in 0.01f64..10.0, gaps in proptest::collection::vec(0.01f64..5.0, 0..6)) {
        let mut t = 1.0;
        let knots: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let phi = OrliczFunction::new(lambda, knots).unwrap();
        prop_assert!(check_orlicz(&phi).passed());
    }

    #[test]
    fn glued_cavity_has_constant_jacobian(c in 0.05f64..0.4, r in 0.5f64..0.95, rad in 0.01f64..0.99, angle in 0.0f64..std::f64::consts::TAU) {
        let f = glued_cavitation(&[0.0, 0.0], c, r).unwrap();
        let t = rad * r;
        let x = from_slice(&[t * angle.cos(), t * angle.sin()]);
        let jet = f.eval(&x).unwrap();
        // rho^2 = c^2 + t^2 (1 - c^2/R^2) preserves area up to the constant factor
        let j = 1.0 - (c / r).powi(2);
        prop_assert!((jet.j - j).abs() < 1e-9);
        let rho = (jet.value[0].powi(2) + jet.value[1].powi(2)).sqrt();
        prop_assert!((rho - (c * c + t * t * j).sqrt()).abs() < 1e-12);
        let back = f.invert(&jet.value).unwrap();
        prop_assert!((back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10);
    }
}
