//! Finite-difference checks shared by the gradient tests and the acceptance run.

use super::*;
use hfc_core::layers::{init_store, ParamSpec};
use hfc_core::{ConnectionMode, Encoder, EncoderConfig, Fha, Gpa, GpaMode, MaskOverride, PairFuse, PairOverride};
use hfc_tensor::{ParamStore, Tensor};

pub const PROBES: usize = 24;

fn store(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    let mut ps = init_store(specs, seed).unwrap();
    jitter_params(&mut ps, 0.1, seed + 1);
    ps
}

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        num_levels: 3,
        depth_per_level: vec![2, 2, 2],
        channels_per_level: vec![2, 4, 4],
        connection_mode: ConnectionMode::Dense,
        feedback_enabled: true,
        chains_enabled: true,
        in_channels: 1,
    }
}

pub fn encoder_matches_central_differences() -> GradReport {
    let enc = Encoder::new(encoder_config()).unwrap();
    let mut specs = Vec::new();
    enc.specs(&mut specs);
    let mut ps = store(&specs, 11);
    with_input(&mut ps, "x", random_tensor(&[1, 1, 16, 16], &mut rng(12)));
    grad_check(&ps, PROBES, 13, |g, ps| {
        let x = g.param(ps, "x")?;
        let (outs, _) = enc.forward(g, ps, x)?;
        weighted_sum(g, &outs, 14)
    })
    .unwrap()
}

pub fn residual_encoder_matches_central_differences() -> GradReport {
    let enc = Encoder::new(EncoderConfig {
        connection_mode: ConnectionMode::Residual,
        feedback_enabled: false,
        ..encoder_config()
    })
    .unwrap();
    let mut specs = Vec::new();
    enc.specs(&mut specs);
    let ps = store(&specs, 21);
    let x = random_tensor(&[2, 1, 8, 8], &mut rng(22));
    grad_check(&ps, PROBES, 23, |g, ps| {
        let x = g.input(x.clone());
        let (outs, _) = enc.forward(g, ps, x)?;
        weighted_sum(g, &outs, 24)
    })
    .unwrap()
}

pub fn attention_merge_matches_central_differences() -> GradReport {
    let fha = Fha::new("fha", 4, 6);
    let mut specs = Vec::new();
    fha.specs(&mut specs);
    let mut ps = store(&specs, 31);
    with_input(&mut ps, "low", random_tensor(&[1, 4, 5, 5], &mut rng(32)));
    with_input(&mut ps, "high", random_tensor(&[1, 6, 5, 5], &mut rng(33)));
    grad_check(&ps, PROBES, 34, |g, ps| {
        let low = g.param(ps, "low")?;
        let high = g.param(ps, "high")?;
        fha.merge(g, ps, low, high, MaskOverride::default())
    })
    .unwrap()
}

pub fn pair_fusion_matches_central_differences() -> GradReport {
    let pair = PairFuse::new("pair", 4).unwrap();
    let mut specs = Vec::new();
    pair.specs(&mut specs);
    let mut ps = store(&specs, 41);
    with_input(&mut ps, "fd", random_tensor(&[1, 4, 3, 3], &mut rng(42)));
    with_input(&mut ps, "f2d", random_tensor(&[1, 2, 6, 6], &mut rng(43)));
    grad_check(&ps, PROBES, 44, |g, ps| {
        let fd = g.param(ps, "fd")?;
        let f2d = g.param(ps, "f2d")?;
        pair.forward(g, ps, fd, f2d, PairOverride::default())
    })
    .unwrap()
}

pub fn pyramid_stack_matches_central_differences() -> GradReport {
    let gpa = Gpa::new(8, GpaMode::PpaOnly, 8).unwrap();
    let mut specs = Vec::new();
    gpa.specs(&mut specs);
    let mut ps = store(&specs, 51);
    with_input(&mut ps, "f", random_tensor(&[1, 8, 2, 2], &mut rng(52)));
    grad_check(&ps, PROBES, 53, |g, ps| {
        let f = g.param(ps, "f")?;
        gpa.forward(g, ps, f)
    })
    .unwrap()
}

pub fn context_modelling_matches_central_differences() -> GradReport {
    let gpa = Gpa::new(4, GpaMode::GcmOnly, 1).unwrap();
    let mut specs = Vec::new();
    gpa.specs(&mut specs);
    let mut ps = store(&specs, 61);
    ps.set("gpa.gcm.alpha", Tensor::full(&[1, 1, 1, 1], 0.7)).unwrap();
    with_input(&mut ps, "f", random_tensor(&[2, 4, 3, 3], &mut rng(62)));
    grad_check(&ps, PROBES, 63, |g, ps| {
        let f = g.param(ps, "f")?;
        gpa.gcm_forward(g, ps, f)
    })
    .unwrap()
}

pub fn micro_model_loss_matches_central_differences() -> GradReport {
    let model = micro_model();
    let mut ps = model.init_params::<f64>().unwrap();
    jitter_params(&mut ps, 0.1, 71);
    // Activations grow through the unnormalised attention and fusion paths;
    // shrink the head so no probability reaches the loss clamp, where the
    // straight-through gradient deliberately differs from the flat forward.
    let head = ps.get("dec.head.w").unwrap().map(|v| v * 0.02);
    ps.set("dec.head.w", head).unwrap();
    let x = random_tensor(&[2, 1, 8, 8], &mut rng(72));
    let y = Tensor::from_fn(&[2, 1, 8, 8], |i| ((i * 5) % 7 < 2) as u8 as f64);
    let prob = model.predict(&ps, &x).unwrap();
    assert!(prob.data().iter().all(|&p| p > 1e-4 && p < 1.0 - 1e-4));
    grad_check(&ps, PROBES, 73, |g, ps| {
        let xi = g.input(x.clone());
        let out = model.forward(g, ps, xi)?;
        Ok(g.bce(out.prob, &y, true, 1e-7)?.0)
    })
    .unwrap()
}


/// Every check, by name.
pub fn all() -> Vec<(&'static str, GradReport)> {
    vec![
        ("encoder_matches_central_differences", encoder_matches_central_differences()),
        ("residual_encoder_matches_central_differences", residual_encoder_matches_central_differences()),
        ("attention_merge_matches_central_differences", attention_merge_matches_central_differences()),
        ("pair_fusion_matches_central_differences", pair_fusion_matches_central_differences()),
        ("pyramid_stack_matches_central_differences", pyramid_stack_matches_central_differences()),
        ("context_modelling_matches_central_differences", context_modelling_matches_central_differences()),
        ("micro_model_loss_matches_central_differences", micro_model_loss_matches_central_differences()),
    ]
}
