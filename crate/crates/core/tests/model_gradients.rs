use affectva::model::{EncoderFamily, EncoderSpec, ModelGrads, VaModel};
use proptest::prelude::*;

fn tiny_model(head_seed: u64) -> VaModel {
    let spec = EncoderSpec {
        checkpoint_id: "tiny-test".into(),
        hidden_size: 12,
        max_sequence_length: 10,
        family: EncoderFamily::DistilledBase,
        vocab_buckets: 40,
        attention_size: 6,
    };
    let mut model = VaModel::new(spec, head_seed).unwrap();
    model.head.weight.mapv_inplace(|w| w * 25.0);
    model
}

/// `w · prediction` as a scalar objective of every parameter.
fn objective(model: &VaModel, text: &str, w: [f64; 2]) -> f64 {
    let p = model.forward(text).unwrap().prediction;
    w[0] * p.valence + w[1] * p.arousal
}

fn max_rel_err(model: &mut VaModel, text: &str, w: [f64; 2]) -> f64 {
    let pass = model.forward(text).unwrap();
    for l in pass.logits {
        assert!((0.2 * l + 0.5) > 0.05 && (0.2 * l + 0.5) < 0.95, "logit {l} too close to saturation");
    }
    let mut grads = ModelGrads::zeros_like(model);
    model.backward(&pass, w, &mut grads);
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (slot, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let orig = model.parameters_mut()[slot].values[k];
            model.parameters_mut()[slot].values[k] = orig + h;
            let up = objective(model, text, w);
            model.parameters_mut()[slot].values[k] = orig - h;
            let down = objective(model, text, w);
            model.parameters_mut()[slot].values[k] = orig;
            *n = (up - down) / (2.0 * h);
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|y| y * y).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-8));
    }
    worst
}

#[test]
fn backward_matches_central_differences() {
    let mut model = tiny_model(5);
    for (text, w) in [
        ("sol mar tek", [1.0, 0.0]),
        ("Кабе лото, шума!", [0.0, 1.0]),
        ("a b c d e f g h i j k l", [0.7, -1.3]),
        ("one", [-0.4, 0.9]),
    ] {
        let err = max_rel_err(&mut model, text, w);
        assert!(err < 1e-4, "{text:?}: {err:e}");
    }
}

#[test]
fn saturated_outputs_have_no_gradient() {
    let mut model = tiny_model(1);
    model.head.bias[0] = 100.0;
    model.head.bias[1] = -100.0;
    let pass = model.forward("sol mar").unwrap();
    assert_eq!((pass.prediction.valence, pass.prediction.arousal), (1.0, 0.0));
    let mut grads = ModelGrads::zeros_like(&model);
    model.backward(&pass, [1.0, 1.0], &mut grads);
    assert!(grads.slices().iter().all(|s| s.iter().all(|&g| g == 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_stay_in_unit_square(
        texts in prop::collection::vec("[a-zäö ,.!]{1,40}[a-z]", 1..8),
        seed in 0u64..1000,
        gain in 0.0f64..500.0,
        shift in -50.0f64..50.0,
    ) {
        let mut model = tiny_model(seed);
        model.head.weight.mapv_inplace(|w| w * gain);
        model.head.bias.fill(shift);
        for p in model.predict_batch(&texts).unwrap() {
            prop_assert!((0.0..=1.0).contains(&p.valence));
            prop_assert!((0.0..=1.0).contains(&p.arousal));
        }
    }

    #[test]
    fn batch_prediction_equals_single(texts in prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,5}", 1..6)) {
        let model = tiny_model(3);
        let batch = model.predict_batch(&texts).unwrap();
        for (t, p) in texts.iter().zip(batch) {
            prop_assert_eq!(model.forward(t).unwrap().prediction, p);
        }
    }
}
