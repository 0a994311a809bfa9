use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scss::bounds::{chernoff_b1, chernoff_b2, optimized_bounds, wilson_interval, ChernoffParams};
use scss::covariance::CovMatrix;
use scss::demod::hard_decision;
use scss::estimators::ShiftPosterior;
use scss::mixture::{mix, record_rng};
use scss::signals::{complex_normal_vec, map_bits, Alphabet};
use scss::C64;

fn random_spd(l: usize, seed: u64) -> DMatrix<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_vec(l, l, complex_normal_vec(&mut rng, l * l));
    &a * a.adjoint() + DMatrix::identity(l, l) * C64::new(0.1, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_a_distribution(ll in prop::collection::vec(-1e6f64..1e6, 1..100)) {
        let p = ShiftPosterior::from_log_likes(ll.clone()).unwrap();
        let total: f64 = p.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.probs.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let best = p.argmax();
        prop_assert!(ll.iter().all(|&x| x <= ll[best]));
        prop_assert!(ll[..best].iter().all(|&x| x < ll[best]));
    }

    #[test]
    fn posterior_ties_go_low(n in 2usize..50, v in -10.0f64..10.0) {
        let p = ShiftPosterior::from_log_likes(vec![v; n]).unwrap();
        prop_assert_eq!(p.argmax(), 0);
        prop_assert!(p.probs.iter().all(|&x| (x - 1.0 / n as f64).abs() < 1e-14));
    }

    #[test]
    fn posterior_shift_invariant(ll in prop::collection::vec(-50f64..50.0, 2..40), c in -1e3f64..1e3) {
        let a = ShiftPosterior::from_log_likes(ll.clone()).unwrap();
        let b = ShiftPosterior::from_log_likes(ll.iter().map(|x| x + c).collect()).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn bit_mapping_round_trips(bits in prop::collection::vec(0u8..2, 0..64), qam in any::<bool>()) {
        let alphabet = if qam { Alphabet::Qam16 } else { Alphabet::Qpsk };
        let k = alphabet.bits_per_symbol();
        let bits = &bits[..bits.len() / k * k];
        let syms = map_bits(alphabet, bits).unwrap();
        let power = syms.iter().map(|s| s.norm_sqr()).sum::<f64>();
        prop_assert!(syms.is_empty() || power / syms.len() as f64 <= 1.8 + 1e-12);
        prop_assert_eq!(hard_decision(&syms, alphabet).unwrap(), bits.to_vec());
    }

    #[test]
    fn row_whitening_matches_vector_whitening(l in 1usize..24, rows in 1usize..9, seed in any::<u64>()) {
        let c = CovMatrix::factorize(random_spd(l, seed), 1e-9).unwrap();
        let mut rng = record_rng(seed, 1);
        let data = complex_normal_vec(&mut rng, rows * l);
        let mut m = DMatrix::from_row_slice(rows, l, &data);
        c.whiten_rows(&mut m).unwrap();
        for r in 0..rows {
            let w = c.whiten(&data[r * l..(r + 1) * l]).unwrap();
            for j in 0..l {
                prop_assert!((m[(r, j)] - w[j]).norm() < 1e-9 * (1.0 + w[j].norm()));
            }
        }
    }

    #[test]
    fn solve_inverts(l in 1usize..20, seed in any::<u64>()) {
        let raw = random_spd(l, seed);
        let c = CovMatrix::factorize(raw.clone(), 0.0).unwrap();
        let mut rng = record_rng(seed, 2);
        let y = complex_normal_vec(&mut rng, l);
        let x = c.solve(&y).unwrap();
        let back = &raw * &x;
        for (a, b) in back.iter().zip(&y) {
            prop_assert!((a - b).norm() < 1e-7 * (1.0 + raw.norm()));
        }
        let q = c.quad_form(&y).unwrap();
        let direct: C64 = y.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
        prop_assert!((q - direct.re).abs() < 1e-8 * (1.0 + q.abs()));
    }

    #[test]
    fn mixing_is_linear(sir in -30.0f64..30.0, snr in -10.0f64..40.0, seed in any::<u64>()) {
        let mut rng = record_rng(seed, 3);
        let s = complex_normal_vec(&mut rng, 16);
        let b = complex_normal_vec(&mut rng, 16);
        let w = complex_normal_vec(&mut rng, 16);
        let y = mix(&s, &b, &w, sir, snr).unwrap();
        let (ab, aw) = (10f64.powf(-sir / 20.0), 10f64.powf(-snr / 20.0));
        for i in 0..16 {
            prop_assert!((y[i] - (s[i] + b[i] * ab + w[i] * aw)).norm() < 1e-12 * (1.0 + ab + aw) * 10.0);
        }
    }

    #[test]
    fn chernoff_bounds_dominate_their_optimum(n in 2usize..5000, a in 0.01f64..0.99, frac in 0.0f64..3.0) {
        let opt = optimized_bounds(n, a).unwrap();
        let b1 = chernoff_b1(&ChernoffParams::new(n, (frac * opt.t1).min(0.999 * n as f64), a)).unwrap();
        prop_assert!(b1 >= opt.b1_star * (1.0 - 1e-9));
        let b2 = chernoff_b2(&ChernoffParams::new(n, frac * opt.t2, a)).unwrap();
        prop_assert!(b2 >= opt.b2_star * (1.0 - 1e-9));
    }

    #[test]
    fn wilson_contains_the_estimate(n in 1usize..100000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, 1.96);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}

#[test]
fn optimized_b1_matches_numerical_minimum() {
    for &(n, a) in &[(64usize, 0.25), (64, 0.5), (320, 0.1), (1000, 0.3)] {
        let opt = optimized_bounds(n, a).unwrap();
        // golden-section search on the log bound
        let f = |t: f64| chernoff_b1(&ChernoffParams::new(n, t, a)).unwrap().ln();
        let (mut lo, mut hi) = (0.0, 0.99 * n as f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if f(x1) < f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let t = 0.5 * (lo + hi);
        assert!((t - opt.t1).abs() < 1e-4 * opt.t1, "t {t} vs {}", opt.t1);
        assert!((f(t) - opt.b1_star.ln()).abs() < 1e-6);
    }
}
