//! Identity anchors shared by the identity tests and the acceptance run.

use super::*;
use hfc_core::layers::{init_store, ParamSpec};
use hfc_core::{ConnectionMode, Encoder, EncoderConfig, Fha, Gpa, GpaMode, MaskOverride, PairFuse};
use hfc_tensor::{Graph, ParamStore, Tensor};
use rand::Rng;

pub fn store_of(specs: &[ParamSpec], seed: u64, jitter: f64) -> ParamStore<f64> {
    let mut ps = init_store(specs, seed).unwrap();
    jitter_params(&mut ps, jitter, seed ^ 0x55);
    ps
}

pub fn gpa_store(gpa: &Gpa, seed: u64) -> ParamStore<f64> {
    let mut specs = Vec::new();
    gpa.specs(&mut specs);
    store_of(&specs, seed, 0.1)
}

pub fn encoder_config(mode: ConnectionMode, feedback: bool) -> EncoderConfig {
    EncoderConfig {
        num_levels: 4,
        depth_per_level: vec![3, 2, 3, 2],
        channels_per_level: vec![4, 4, 8, 8],
        connection_mode: mode,
        feedback_enabled: feedback,
        chains_enabled: true,
        in_channels: 1,
    }
}

pub fn encode(enc: &Encoder, ps: &ParamStore<f64>, x: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let (outs, _) = enc.forward(&mut g, ps, xi).unwrap();
    outs.iter().map(|&o| g.take_value(o)).collect()
}

pub fn gpa_off_is_bitwise_identity() {
    let gpa = Gpa::new(8, GpaMode::Off, 8).unwrap();
    let ps = gpa_store(&gpa, 1);
    let x = random_tensor(&[2, 8, 4, 4], &mut rng(1));
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let y = gpa.forward(&mut g, &ps, xi).unwrap();
    assert!(g.value(y).bitwise_eq(&x));
}

pub fn zero_alpha_context_is_bitwise_identity() {
    for mode in [GpaMode::GcmOnly, GpaMode::Full] {
        let gpa = Gpa::new(8, mode, 2).unwrap();
        let mut ps = gpa_store(&gpa, 2);
        ps.set("gpa.gcm.alpha", Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        let x = random_tensor(&[2, 8, 4, 4], &mut rng(2));
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let y = gpa.gcm_forward(&mut g, &ps, xi).unwrap();
        assert!(g.value(y).bitwise_eq(&x), "{mode:?}");
    }
    // In context-only mode the whole unit then collapses to the identity.
    let gpa = Gpa::new(8, GpaMode::GcmOnly, 2).unwrap();
    let ps = gpa_store(&gpa, 3);
    let mut ps0 = ps.clone();
    ps0.set("gpa.gcm.alpha", Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    let x = random_tensor(&[1, 8, 4, 4], &mut rng(3));
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let y = gpa.forward(&mut g, &ps0, xi).unwrap();
    assert!(g.value(y).bitwise_eq(&x));
}

pub fn forced_masks_give_exact_residual_multiples() {
    let fha = Fha::new("fha", 4, 6);
    let mut specs = Vec::new();
    fha.specs(&mut specs);
    let ps = store_of(&specs, 4, 0.2);
    let low = random_tensor(&[2, 4, 5, 5], &mut rng(4));
    let high = random_tensor(&[2, 6, 5, 5], &mut rng(5));
    let run = |m: MaskOverride| {
        let mut g = Graph::new();
        let l = g.input(low.clone());
        let h = g.input(high.clone());
        let y = fha.merge(&mut g, &ps, l, h, m).unwrap();
        g.take_value(y)
    };
    assert!(run(MaskOverride::both(0.0)).bitwise_eq(&low));
    let four = run(MaskOverride::both(1.0));
    for (o, f) in four.data().iter().zip(low.data()) {
        assert_eq!(*o, 4.0 * f);
    }
    for v in [0.0, 0.3, 0.99, 1.0] {
        let out = run(MaskOverride::both(v));
        for (o, f) in out.data().iter().zip(low.data()) {
            assert!(o.abs() <= 4.0 * f.abs() + 1e-15);
        }
    }
}

pub fn attention_maps_lie_strictly_inside_unit_interval() {
    let mut r = rng(6);
    for case in 0..100 {
        let c = r.gen_range(1..=6) * 2;
        let (h, w) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let fha = Fha::new("fha", c, c + 2);
        let pair = PairFuse::new("pair", c).unwrap();
        let mut specs = Vec::new();
        fha.specs(&mut specs);
        pair.specs(&mut specs);
        let ps = store_of(&specs, 100 + case, 0.5);
        let scale = r.gen_range(0.1..5.0);
        let mut g = Graph::new();
        let low = g.input(random_tensor(&[1, c, h, w], &mut r).map(|v| v * scale));
        let high = g.input(random_tensor(&[1, c + 2, h, w], &mut r).map(|v| v * scale));
        let fine = g.input(random_tensor(&[1, c / 2, 2 * h, 2 * w], &mut r).map(|v| v * scale));
        let maps = [
            fha.spatial_attention(&mut g, &ps, low).unwrap(),
            fha.channel_attention(&mut g, &ps, high).unwrap(),
            pair.low_mask(&mut g, &ps, low).unwrap(),
            pair.high_mask(&mut g, &ps, fine).unwrap(),
        ];
        assert_eq!(g.shape(maps[0]), &[1, 1, h, w]);
        assert_eq!(g.shape(maps[1]), &[1, c + 2, 1, 1]);
        assert_eq!(g.shape(maps[2]), &[1, 1, 2 * h, 2 * w]);
        assert_eq!(g.shape(maps[3]), &[1, 1, h, w]);
        for m in maps {
            assert!(g.value(m).data().iter().all(|&v| v > 0.0 && v < 1.0), "case {case}");
        }
    }
}
