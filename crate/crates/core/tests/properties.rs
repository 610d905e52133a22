use num_bigint::BigUint;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smrls_core::codec::{
    decode_hard, encode, per_antenna_rate, CodebookPolicy, SmCodebook, UserPayload,
};
use smrls_core::constellation::Constellation;
use smrls_core::detect::{apply_decision, distortion, prox_box_soft_threshold, Decision, Metric};
use smrls_core::math::{binomial, floor_log2};

fn constellation(kind: u8) -> Constellation {
    match kind % 3 {
        0 => Constellation::ssk(1.0),
        1 => Constellation::bpsk(1.0),
        _ => Constellation::qam4(1.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn encode_then_decode_is_identity(
        m_u in 2usize..=12,
        l_frac in 0.0f64..1.0,
        kind in 0u8..3,
        seeded in any::<bool>(),
        seed in any::<u64>(),
        payload_seed in any::<u64>(),
    ) {
        let l_u = 1 + ((m_u - 1) as f64 * l_frac) as usize;
        let policy = if seeded { CodebookPolicy::SeededRandom(seed) } else { CodebookPolicy::Lexicographic };
        let codebook = SmCodebook::build(m_u, l_u, policy).unwrap();
        let c = constellation(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(payload_seed);
        let payload = UserPayload::random(&mut rng, &codebook, &c);
        let x = encode(&codebook, &c, &payload).unwrap();
        prop_assert_eq!(x.len(), m_u);
        let active: Vec<usize> = (0..m_u).filter(|&a| x[a] != Complex64::new(0.0, 0.0)).collect();
        prop_assert_eq!(active.len(), l_u);
        prop_assert!(codebook.index_of(&active).is_some());
        prop_assert_eq!(decode_hard(&codebook, &c, &x).unwrap(), payload);
    }

    #[test]
    fn payload_integer_roundtrip(m_u in 2usize..=10, kind in 0u8..3, value in any::<u64>()) {
        let codebook = SmCodebook::build(m_u, 1, CodebookPolicy::Lexicographic).unwrap();
        let c = constellation(kind);
        let bits = codebook.payload_bits(&c);
        let v = value & ((1u64 << bits) - 1);
        prop_assert_eq!(UserPayload::from_integer(v, &codebook, &c).unwrap().to_integer(), v);
    }

    #[test]
    fn prox_stays_feasible_and_nonexpansive(
        w1 in -5.0f64..5.0, w2 in -5.0f64..5.0, kappa in 0.0f64..2.0,
        lower in 0.0f64..3.0, upper in 0.0f64..3.0,
    ) {
        let (a, b) = (prox_box_soft_threshold(w1, kappa, lower, upper), prox_box_soft_threshold(w2, kappa, lower, upper));
        prop_assert!(a >= -lower && a <= upper);
        prop_assert!((a - b).abs() <= (w1 - w2).abs() + 1e-15);
        if w1 <= w2 { prop_assert!(a <= b); }
    }

    #[test]
    fn metrics_are_bounded(values in proptest::collection::vec(-2.0f64..2.0, 1..40), eps in 0.0f64..1.0) {
        let soft: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let ssk = Constellation::ssk(1.0);
        let hard = apply_decision(&soft, Decision::HardThreshold(eps), &ssk).unwrap();
        prop_assert!(hard.iter().all(|v| *v == Complex64::new(0.0, 0.0) || *v == Complex64::new(1.0, 0.0)));
        let truth = vec![Complex64::new(0.0, 0.0); soft.len()];
        let er = distortion(&hard, &truth, Metric::ErrorRate).unwrap();
        prop_assert!((0.0..=1.0).contains(&er));
        prop_assert!(distortion(&soft, &truth, Metric::Mse).unwrap() >= 0.0);
    }
}

#[test]
fn rate_decomposition_holds_for_all_small_arrays() {
    let mut checked = 0;
    for m_u in 2..=64usize {
        for l_u in 1..m_u {
            let binom = binomial(m_u as u64, l_u as u64);
            let i = floor_log2(&binom);
            let two = BigUint::from(2u32);
            assert!(
                two.pow(i as u32) <= binom && binom < two.pow(i as u32 + 1),
                "M_u={m_u} L_u={l_u}"
            );
            for s in 0..=2usize {
                let rate = per_antenna_rate(m_u, l_u, s).unwrap();
                assert_eq!(u64::from(rate.index_bits), i);
                let k = rate.constants.unwrap();
                assert!(
                    k.c_lower < k.c_const && k.c_const <= k.c_upper,
                    "C bracket at M_u={m_u} L_u={l_u} S={s}: {k:?}"
                );
                assert!(
                    k.stirling_lo < rate.r_bar && rate.r_bar <= k.stirling_hi,
                    "rate bracket at M_u={m_u} L_u={l_u} S={s}: {} not in ({}, {}]",
                    rate.r_bar,
                    k.stirling_lo,
                    k.stirling_hi
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 3 * (2..=64).map(|m| m - 1).sum::<usize>());
}
