mod common;

use proptest::prelude::*;
use tacmamba::encoder::{revin_denormalize, revin_normalize, EncoderConfig, RevinState};
use tacmamba::ssm::{discretize_a, ssm_step, SelectiveParams, SsmState, StateMatrix};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn abar_in_open_unit_interval(a_log in prop::collection::vec(-5.0f64..3.0, 6), delta in 1e-4f64..3.0) {
        let a = StateMatrix::from_log(&a_log, 2, 3).unwrap();
        for v in discretize_a(&a, &[delta, delta * 0.5]).unwrap() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn zero_input_state_norm_never_grows(
        a_log in prop::collection::vec(-3.0f64..2.0, 8),
        delta in prop::collection::vec(1e-3f64..2.0, 2),
        b in prop::collection::vec(-2.0f64..2.0, 4),
        u in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let a = StateMatrix::from_log(&a_log, 2, 4).unwrap();
        let p = SelectiveParams { delta, b, c: vec![1.0; 4], d_skip: vec![0.0; 2] };
        let mut st = SsmState::zeros(2, 4);
        let mut y = vec![0.0; 2];
        ssm_step(&mut st, &u, &p, &a, &mut y).unwrap();
        let mut prev = st.norm();
        for _ in 0..50 {
            ssm_step(&mut st, &[0.0, 0.0], &p, &a, &mut y).unwrap();
            prop_assert!(st.norm() <= prev);
            prev = st.norm();
        }
    }

    #[test]
    fn bare_step_matches_scan(seed in 0u64..10_000, len in 1usize..200) {
        prop_assert!(common::ssm_step_scan_max_diff(6, 5, len, seed) <= 1e-5);
    }

    #[test]
    fn revin_roundtrip(xs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 2), 1..100),
                       gamma in 0.1f64..3.0, beta in -2.0f64..2.0) {
        let mut st = RevinState::<f64>::new(2, 0.01);
        st.gamma = vec![gamma, 1.0 / gamma];
        st.beta = vec![beta, -beta];
        for x in &xs {
            let y = revin_normalize(x, &mut st);
            let back = revin_denormalize(&y, &st);
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn encoder_step_matches_batch_at_default_size() {
    for seed in 0..3 {
        let d = common::step_scan_max_diff(&EncoderConfig::default(), 256, seed);
        assert!(d <= 1e-5, "seed {seed}: {d}");
    }
}

#[test]
fn numerics_suite_small() {
    let c = common::numerics(2);
    assert!(c.pass, "{}", c.detail);
}
