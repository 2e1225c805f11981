mod common;

use common::shape_suite;
use common::*;
use hfc_core::{Model, ModelConfig, Variant};
use hfc_tensor::{Graph, Tensor};

#[test]
fn shape_laws_hold_for_sampled_configs() {
    shape_suite::shape_laws_hold_for_sampled_configs();
}

#[test]
fn documented_encoder_example() {
    let mut cfg = ModelConfig::full(&[4, 8, 16], 2, (32, 32));
    cfg.gpa_max_scale = 8;
    let model = Model::new(cfg).unwrap();
    let ps = model.init_params::<f64>().unwrap();
    let mut g = Graph::new();
    let x = g.input(random_tensor(&[1, 1, 32, 32], &mut rng(1)));
    let out = model.forward(&mut g, &ps, x).unwrap();
    let shapes: Vec<Vec<usize>> = out.encoder_outputs.iter().map(|&o| g.shape(o).to_vec()).collect();
    assert_eq!(shapes, vec![vec![1, 4, 32, 32], vec![1, 8, 16, 16], vec![1, 16, 8, 8]]);
    let logits = model.decode(&mut g, &ps, &out.encoder_outputs, out.gpa).unwrap();
    assert_eq!(g.shape(logits), &[1, 1, 32, 32]);
    // Every chain slot that exists respects the configured depth.
    for &(n, i) in out.chain.main.keys() {
        assert!((1..=2).contains(&i) && (1..=3).contains(&n));
    }
    assert_eq!(out.chain.feedback.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn single_level_encoder_has_one_output() {
    let mut cfg = ModelConfig::full(&[4], 2, (8, 8));
    cfg.gpa_max_scale = 2;
    let model = Model::new(cfg).unwrap();
    let ps = model.init_params::<f64>().unwrap();
    let mut g = Graph::new();
    let x = g.input(random_tensor(&[1, 1, 8, 8], &mut rng(2)));
    let out = model.forward(&mut g, &ps, x).unwrap();
    assert_eq!(out.encoder_outputs.len(), 1);
    assert!(out.chain.main.keys().all(|&(n, _)| n == 1));
    assert!(out.chain.side.is_empty());
    assert_eq!(g.shape(out.prob), &[1, 1, 8, 8]);
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = micro_model();
    let ps = model.init_params::<f64>().unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 16, 16]));
    assert!(matches!(model.forward(&mut g, &ps, x), Err(hfc_core::CoreError::Precondition(_))));
    let mut cfg = micro_config();
    cfg.input_size = (9, 8);
    assert!(Model::new(cfg).is_err());
}

#[test]
fn batch_size_is_preserved() {
    let model = micro_model();
    let ps = model.init_params::<f64>().unwrap();
    let p = model.predict(&ps, &random_tensor(&[3, 1, 8, 8], &mut rng(3))).unwrap();
    assert_eq!(p.shape(), &[3, 1, 8, 8]);
}

#[test]
fn ablation_rows_nest_by_parameter_name() {
    let base = ModelConfig::full(&[8, 16, 32], 3, (32, 32));
    let names = |v: Variant| Model::new(v.apply(&base)).unwrap().param_names();
    let chain = [Variant::Baseline, Variant::FafcD, Variant::Fha, Variant::Full];
    for pair in chain.windows(2) {
        let (a, b) = (names(pair[0]), names(pair[1]));
        assert!(a.is_subset(&b) && a.len() < b.len(), "{} vs {}", pair[0], pair[1]);
    }
    assert!(names(Variant::Baseline).is_subset(&names(Variant::FafcR)));
    let count = |v: Variant| Model::new(v.apply(&base)).unwrap().num_params();
    assert!(count(Variant::Baseline) < count(Variant::Full));
}
