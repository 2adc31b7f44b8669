use panoqa_core::wavelet::{dwt2_plane, iwt2, iwt2_multilevel, Band};
use panoqa_core::Plane;
use proptest::prelude::*;

fn plane_strategy(max_half: usize) -> impl Strategy<Value = Plane> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(hw, hh)| {
        prop::collection::vec(-10.0f64..10.0, 4 * hw * hh).prop_map(move |d| Plane::new(2 * hw, 2 * hh, d).unwrap())
    })
}

fn coefficients(p: &Plane, levels: usize) -> Vec<f64> {
    let sets = dwt2_plane(p, levels).unwrap();
    let mut out = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        for b in Band::ALL {
            if b != Band::LL || i + 1 == sets.len() {
                out.extend_from_slice(s.band(b)[0].data());
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn perfect_reconstruction(p in plane_strategy(24)) {
        let sets = dwt2_plane(&p, 1).unwrap();
        let back = iwt2(&sets[0]).unwrap();
        prop_assert!(back[0].max_abs_diff(&p) < 1e-6);
    }

    #[test]
    fn parseval(p in plane_strategy(24)) {
        let e: f64 = p.energy();
        let c: f64 = coefficients(&p, 1).iter().map(|v| v * v).sum();
        prop_assert!((e - c).abs() <= 1e-6 * e.max(1e-12));
    }

    #[test]
    fn linearity(
        (x, y) in (1usize..12, 1usize..12).prop_flat_map(|(hw, hh)| {
            let n = 4 * hw * hh;
            (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))
                .prop_map(move |(a, b)| (Plane::new(2 * hw, 2 * hh, a).unwrap(), Plane::new(2 * hw, 2 * hh, b).unwrap()))
        }),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let mixed = Plane::new(
            x.width(),
            x.height(),
            x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        let cm = coefficients(&mixed, 1);
        let cx = coefficients(&x, 1);
        let cy = coefficients(&y, 1);
        for i in 0..cm.len() {
            prop_assert!((cm[i] - (alpha * cx[i] + beta * cy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn multilevel_parseval_and_inverse(hw in 1usize..6, hh in 1usize..6, seed: u64) {
        let mut s = seed;
        let p = Plane::from_fn(8 * hw, 8 * hh, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let c: f64 = coefficients(&p, 3).iter().map(|v| v * v).sum();
        prop_assert!((p.energy() - c).abs() <= 1e-9 * p.energy());
        let back = iwt2_multilevel(&dwt2_plane(&p, 3).unwrap()).unwrap();
        prop_assert!(back[0].max_abs_diff(&p) < 1e-9);
    }
}
