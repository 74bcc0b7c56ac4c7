use proptest::prelude::*;
use sdsr::neurons::{LifParams, LifState, SigmaDeltaState};

fn signal() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), 1..40))
}

proptest! {
    #[test]
    fn delta_reconstruction_drift_is_bounded(xs in signal(), theta in 1e-3f64..2.0) {
        let mut st = SigmaDeltaState::new(xs[0].len());
        for x in &xs {
            st.delta_step(theta, x).unwrap();
            for (r, xi) in st.delta_ref.iter().zip(x) {
                prop_assert!((r - xi).abs() <= theta / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn sigma_of_delta_is_the_reconstruction(xs in signal(), theta in 1e-3f64..2.0) {
        let n = xs[0].len();
        let mut delta = SigmaDeltaState::new(n);
        let mut sigma = SigmaDeltaState::new(n);
        for x in &xs {
            let msg = delta.delta_step(theta, x).unwrap();
            for m in &msg {
                let k = m / theta;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
            let acc = sigma.sigma_step(&msg).unwrap();
            prop_assert_eq!(acc, delta.delta_ref.as_slice());
        }
    }

    #[test]
    fn sd_relu_tracks_dense_relu(xs in signal()) {
        let theta = 1e-9;
        let n = xs[0].len();
        let mut st = SigmaDeltaState::new(n);
        let mut prev = vec![0.0; n];
        for x in &xs {
            let msg: Vec<f64> = x.iter().zip(&prev).map(|(a, b)| a - b).collect();
            st.sd_relu_step(theta, &msg).unwrap();
            for (r, xi) in st.delta_ref.iter().zip(x) {
                prop_assert!((r - xi.max(0.0)).abs() <= 1e-8);
            }
            prev.clone_from(x);
        }
    }

    #[test]
    fn sd_relu_is_silent_for_constant_input(x in prop::collection::vec(-5.0f64..5.0, 1..8), theta in 1e-3f64..1.0) {
        let mut st = SigmaDeltaState::new(x.len());
        st.sd_relu_step(theta, &x).unwrap();
        for _ in 0..5 {
            let out = st.sd_relu_step(theta, &vec![0.0; x.len()]).unwrap();
            prop_assert!(out.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn lif_spikes_are_binary_and_membrane_stays_sub_threshold(
        xs in signal(), decay in 0.0f64..1.0, threshold in 0.1f64..3.0
    ) {
        let params = LifParams { decay, threshold };
        let mut st = LifState::new(xs[0].len());
        for x in &xs {
            let s = st.step(&params, x).unwrap();
            prop_assert!(s.iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(st.membrane.iter().all(|&m| m < threshold));
        }
    }
}
