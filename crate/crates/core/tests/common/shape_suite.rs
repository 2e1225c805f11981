//! Shape laws over sampled configurations, shared with the acceptance run.

use super::*;
use hfc_core::{ConnectionMode, GpaMode, Model, ModelConfig};
use hfc_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random configuration with `levels` in {2, 3, 4} and input side in {16, 32, 64}.
pub fn sampled_config(r: &mut rand_chacha::ChaCha8Rng) -> ModelConfig {
    let levels = *[2usize, 3, 4].choose(r).unwrap();
    let size = *[16usize, 32, 64].choose(r).unwrap();
    let max_scale = *[2usize, 4, 8].choose(r).unwrap();
    let mut channels: Vec<usize> = (0..levels).map(|_| *[2usize, 4, 6].choose(r).unwrap()).collect();
    *channels.last_mut().unwrap() = max_scale * r.gen_range(1..=2);
    let depth = r.gen_range(1..=3);
    let mut c = ModelConfig::full(&channels, depth, (size, size));
    c.gpa_max_scale = max_scale;
    c.encoder.depth_per_level = (0..levels).map(|_| r.gen_range(1..=3)).collect();
    c.encoder.connection_mode = if r.gen_bool(0.5) {
        ConnectionMode::Dense
    } else {
        ConnectionMode::Residual
    };
    let fb = r.gen_bool(0.7);
    c.encoder.feedback_enabled = fb;
    c.fha_enabled = fb;
    c.gpa_mode = *[GpaMode::Full, GpaMode::PpaOnly, GpaMode::GcmOnly, GpaMode::Off].choose(r).unwrap();
    c.seed = r.gen();
    c
}

pub fn shape_laws_hold_for_sampled_configs() {
    let mut r = rng(2024);
    for case in 0..50 {
        let cfg = sampled_config(&mut r);
        let model = Model::new(cfg.clone()).unwrap_or_else(|e| panic!("case {case}: {e}"));
        let ps = model.init_params::<f32>().unwrap();
        let (h, w) = cfg.input_size;
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 1, h, w], |i| ((i * 37) % 11) as f32 / 11.0 - 0.5));
        let out = model.forward(&mut g, &ps, x).unwrap();
        for (k, &o) in out.encoder_outputs.iter().enumerate() {
            let c = cfg.encoder.channels_per_level[k];
            assert_eq!(g.shape(o), &[2, c, h >> k, w >> k], "case {case} level {}", k + 1);
        }
        for (&(n, _), &id) in out.chain.main.iter().chain(out.chain.side.iter()) {
            let s = g.shape(id);
            let expect = if out.chain.side.values().any(|&v| v == id) { n } else { n - 1 };
            assert_eq!((s[2], s[3]), (h >> expect, w >> expect), "case {case}: chain feature at level {n}");
        }
        let top = *out.encoder_outputs.last().unwrap();
        assert_eq!(g.shape(out.gpa), g.shape(top), "case {case}");
        assert_eq!(g.shape(out.prob), &[2, 1, h, w], "case {case}");
        assert!(g.value(out.prob).data().iter().all(|&p| p > 0.0 && p < 1.0));
        if cfg.gpa_mode.uses_ppa() {
            let pyr = model.gpa().build_pyramid(&mut g, &ps, top).unwrap();
            let (_, c, th, tw) = g.value(top).dims4().unwrap();
            for (scale, id) in pyr {
                assert_eq!(g.shape(id), &[2, c / scale, th * scale, tw * scale], "case {case} scale {scale}");
            }
        }
    }
}
