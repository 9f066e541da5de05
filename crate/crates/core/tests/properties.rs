//! Property checks on the bounds, the region and the verdict rules.

use proptest::prelude::*;
use rand_distr::{Binomial, Distribution};

use rarebound::bounds::{binomial_cdf, binomial_upper_bound, chebyshev_bound, markov_bound};
use rarebound::campaign::{Markers, Verdict};
use rarebound::mbis::is_member;
use rarebound::sampling::rng;

#[test]
fn binomial_bound_monotone_on_grid() {
    for n in [1u64, 7, 40, 100, 1000] {
        let mut prev_t = 0.0;
        for t in 0..=n.min(60) {
            let b = binomial_upper_bound(t, n, 0.05).unwrap();
            assert!(b >= prev_t, "T={t} N={n}");
            prev_t = b;
            let mut prev_a = f64::INFINITY;
            for a in [0.001, 0.01, 0.05, 0.2, 0.5] {
                let b = binomial_upper_bound(t, n, a).unwrap();
                if t < n {
                    assert!(b < prev_a, "alpha={a} T={t} N={n}");
                }
                prev_a = b;
            }
        }
    }
}

#[test]
fn binomial_bound_covers() {
    let (n, alpha) = (200u64, 0.05);
    let runs = 10_000;
    for p in [0.002, 0.02, 0.3] {
        let law = Binomial::new(n, p).unwrap();
        let mut g = rng(17);
        let covered = (0..runs)
            .filter(|_| p <= binomial_upper_bound(law.sample(&mut g), n, alpha).unwrap())
            .count() as f64
            / runs as f64;
        let se = (alpha * (1.0 - alpha) / runs as f64).sqrt();
        assert!(covered >= 1.0 - alpha - 3.0 * se, "p={p}: coverage {covered}");
    }
}

proptest! {
    #[test]
    fn binomial_root_certificate(n in 2u64..2000, frac in 0.0f64..1.0, alpha in 0.001f64..0.5) {
        let t = ((n as f64 * frac) as u64).clamp(1, n - 1);
        let b = binomial_upper_bound(t, n, alpha).unwrap();
        prop_assert!(b >= t as f64 / n as f64 - 1e-12 && b <= 1.0);
        prop_assert!((binomial_cdf(t, n, b) - alpha).abs() <= 1e-10);
    }

    #[test]
    fn elementary_bounds_clamp_and_increase(e in 0.0f64..2.0, de in 0.0f64..1.0, v in 0.0f64..2.0, dv in 0.0f64..1.0, alpha in 0.001f64..0.999) {
        let m0 = markov_bound(e, alpha).unwrap();
        let m1 = markov_bound(e + de, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&m0) && m0 <= m1);
        let c0 = chebyshev_bound(e.min(1.0), v, alpha).unwrap();
        let c1 = chebyshev_bound(e.min(1.0), v + dv, alpha).unwrap();
        let c2 = chebyshev_bound((e + de).min(1.0), v, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&c0) && c0 <= c1 && c0 <= c2);
    }

    #[test]
    fn region_nesting(m in -5.0f64..5.0, s in 0.0f64..3.0, rho in -1.0f64..1.0, k1 in 0.0f64..5.0, dk in 0.0f64..5.0) {
        if is_member(m, s, rho, k1) {
            prop_assert!(is_member(m, s, rho, k1 + dk));
        }
    }

    #[test]
    fn lowering_markers_never_helps(bound in 0.0f64..1.0, safe in 1e-8f64..1e-3, ratio in 2.0f64..1e4, shrink in 0.01f64..1.0) {
        let high = Markers { safe, unsafe_: (safe * ratio).min(0.9), ..Markers::default() };
        let low = Markers { safe: high.safe * shrink, unsafe_: high.unsafe_ * shrink, ..high };
        prop_assert!(Verdict::from_bound(bound, &low) >= Verdict::from_bound(bound, &high));
    }
}
