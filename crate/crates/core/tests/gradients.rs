mod common;

use common::grad_suite;
use common::*;
use hfc_tensor::Graph;

#[test]
fn encoder_matches_central_differences() {
    let r = grad_suite::encoder_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn residual_encoder_matches_central_differences() {
    let r = grad_suite::residual_encoder_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn attention_merge_matches_central_differences() {
    let r = grad_suite::attention_merge_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn pair_fusion_matches_central_differences() {
    let r = grad_suite::pair_fusion_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn pyramid_stack_matches_central_differences() {
    let r = grad_suite::pyramid_stack_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn context_modelling_matches_central_differences() {
    let r = grad_suite::context_modelling_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn micro_model_loss_matches_central_differences() {
    let r = grad_suite::micro_model_loss_matches_central_differences();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn every_skip_influences_the_output() {
    let model = micro_model();
    let mut ps = model.init_params::<f64>().unwrap();
    // The head starts at zero, which would block every path.
    jitter_params(&mut ps, 0.1, 80);
    let x = random_tensor(&[1, 1, 8, 8], &mut rng(81));
    let mut g = Graph::new();
    let xi = g.input(x);
    let (outs, _) = model.encoder().forward(&mut g, &ps, xi).unwrap();
    // Re-enter every encoder output as a tracked leaf and decode from there.
    let leaves: Vec<_> = outs.iter().map(|&o| g.input_with_grad(g.value(o).clone())).collect();
    let top = *leaves.last().unwrap();
    let gpa = model.gpa().forward(&mut g, &ps, top).unwrap();
    let logits = model.decode(&mut g, &ps, &leaves, gpa).unwrap();
    let root = g.sum(logits);
    let grads = g.backward(root).unwrap();
    for (k, leaf) in leaves.iter().enumerate() {
        let gk = grads.get(*leaf).expect("gradient reaches every level");
        assert!(gk.max_abs() > 0.0, "level {} has zero sensitivity", k + 1);
    }
}
