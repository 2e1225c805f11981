#![allow(dead_code)]

pub mod grad_suite;
pub mod identity_suite;
pub mod metric_suite;
pub mod shape_suite;

use hfc_core::{Model, ModelConfig, Result};
use hfc_tensor::{Graph, NodeId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;
/// Denominator floor for the relative error, so that gradients that are zero
/// up to rounding do not blow the ratio up.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Adds uniform noise in `[-scale, scale]` to every parameter so that no
/// probe sits on a symmetric initial value (unit gains, zero biases, zero α).
pub fn jitter_params(ps: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in ps.iter_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-scale..scale);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub probes: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.probes > 0 && self.max_rel <= GRAD_TOL
    }
}

/// Scalar objective `sum(out * w)` for a fixed random weight map `w`.
fn objective(
    ps: &ParamStore<f64>,
    seed: u64,
    f: &dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
) -> Result<(Graph<f64>, NodeId)> {
    let mut g = Graph::new();
    let out = f(&mut g, ps)?;
    let root = if g.shape(out).iter().product::<usize>() == 1 {
        out
    } else {
        let mut r = rng(seed ^ 0x9e37_79b9);
        let w = g.input(random_tensor(&g.shape(out).to_vec(), &mut r));
        let prod = g.mul(out, w)?;
        g.sum(prod)
    };
    Ok((g, root))
}

/// Central-difference check of `probes` randomly chosen parameter entries.
/// Each probe first picks a parameter tensor uniformly, then an entry inside
/// it, so small tensors are probed as often as large ones.
pub fn grad_check(
    ps: &ParamStore<f64>,
    probes: usize,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
) -> Result<GradReport> {
    let (g, root) = objective(ps, seed, &f)?;
    let grads = g.backward(root)?.into_param_grads();
    let names: Vec<String> = grads.keys().cloned().collect();
    assert!(!names.is_empty(), "objective does not depend on any parameter");
    let mut r = rng(seed);
    let mut report = GradReport {
        probes: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let (g, root) = objective(p, seed, &f)?;
        Ok(g.value(root).data()[0])
    };
    for _ in 0..probes {
        let name = &names[r.gen_range(0..names.len())];
        let numel = ps.get(name).expect("probed parameter").numel();
        let idx = r.gen_range(0..numel);
        let mut plus = ps.clone();
        plus.get_mut(name).unwrap().data_mut()[idx] += FD_STEP;
        let mut minus = ps.clone();
        minus.get_mut(name).unwrap().data_mut()[idx] -= FD_STEP;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
        let analytic = grads[name].data()[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        report.probes += 1;
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst = format!("{name}[{idx}]: analytic {analytic:.6e}, numeric {numeric:.6e}");
        }
    }
    Ok(report)
}

/// Two-level model used for end-to-end gradient checks.
pub fn micro_config() -> ModelConfig {
    let mut c = ModelConfig::full(&[2, 4], 2, (8, 8));
    c.gpa_max_scale = 2;
    c
}

pub fn micro_model() -> Model {
    Model::new(micro_config()).unwrap()
}

/// `sum_k sum(nodes[k] * w_k)` with fixed random weights.
pub fn weighted_sum(g: &mut Graph<f64>, nodes: &[NodeId], seed: u64) -> Result<NodeId> {
    let mut r = rng(seed);
    let mut terms = Vec::with_capacity(nodes.len());
    for &n in nodes {
        let w = g.input(random_tensor(&g.shape(n).to_vec(), &mut r));
        let p = g.mul(n, w)?;
        terms.push(g.sum(p));
    }
    Ok(g.add_all(&terms)?)
}

/// Registers `value` under `name` so inputs can be probed like parameters.
pub fn with_input(ps: &mut ParamStore<f64>, name: &str, value: Tensor<f64>) {
    ps.insert(name, value).unwrap();
}
