//! Full segmentation model: encoder, global pyramid attention on the deepest
//! feature, and a light skip-connected decoder ending in a sigmoid.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use hfc_tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fafc::{ChainState, ConnectionMode, Encoder, EncoderConfig};
use crate::fha::dims;
use crate::gpa::{Gpa, GpaMode};
use crate::layers::{init_store, Conv, ParamSpec};

fn default_max_scale() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gpa_mode: GpaMode,
    /// Largest pyramid scale used by pair-wise pyramid attention.
    #[serde(default = "default_max_scale")]
    pub gpa_max_scale: usize,
    pub fha_enabled: bool,
    pub decoder_channels: Vec<usize>,
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl ModelConfig {
    /// Full model with `channels.len()` levels, uniform chain depth and
    /// decoder widths mirroring the encoder.
    pub fn full(channels: &[usize], depth: usize, input_size: (usize, usize)) -> Self {
        let n = channels.len();
        ModelConfig {
            encoder: EncoderConfig {
                num_levels: n,
                depth_per_level: vec![depth; n],
                channels_per_level: channels.to_vec(),
                connection_mode: ConnectionMode::Dense,
                feedback_enabled: n >= 2,
                chains_enabled: true,
                in_channels: 1,
            },
            gpa_mode: GpaMode::Full,
            gpa_max_scale: default_max_scale(),
            fha_enabled: n >= 2,
            decoder_channels: channels[..n.saturating_sub(1)].to_vec(),
            input_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let nl = self.encoder.num_levels;
        if self.fha_enabled && nl < 2 {
            return Err(CoreError::Config("fha_enabled requires at least 2 encoder levels".into()));
        }
        if self.fha_enabled != self.encoder.feedback_enabled {
            return Err(CoreError::Config(format!(
                "fha_enabled ({}) must match encoder.feedback_enabled ({})",
                self.fha_enabled, self.encoder.feedback_enabled
            )));
        }
        if self.decoder_channels.len() != nl - 1 {
            return Err(CoreError::Config(format!(
                "decoder_channels needs num_levels - 1 = {} entries, got {}",
                nl - 1,
                self.decoder_channels.len()
            )));
        }
        if self.decoder_channels.contains(&0) {
            return Err(CoreError::Config("decoder_channels entries must be positive".into()));
        }
        let (h, w) = self.input_size;
        let m = self.encoder.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(CoreError::Config(format!(
                "input_size {h}x{w} must be a positive multiple of {m}"
            )));
        }
        if self.gpa_mode.uses_ppa() {
            let c = *self.encoder.channels_per_level.last().expect("levels");
            if c % self.gpa_max_scale != 0 {
                return Err(CoreError::Config(format!(
                    "pyramid attention needs the deepest channel count ({c}) divisible by gpa_max_scale ({})",
                    self.gpa_max_scale
                )));
            }
        }
        Ok(())
    }
}

/// The seven configurations of the module ablation, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    FafcR,
    FafcD,
    Fha,
    GpaGcm,
    GpaPpa,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::FafcR,
        Variant::FafcD,
        Variant::Fha,
        Variant::GpaGcm,
        Variant::GpaPpa,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FafcR => "fafc_r",
            Variant::FafcD => "fafc_d",
            Variant::Fha => "fha",
            Variant::GpaGcm => "gpa_gcm",
            Variant::GpaPpa => "gpa_ppa",
            Variant::Full => "full",
        }
    }

    /// Human-readable row label.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::FafcR => "+FAFC(R)",
            Variant::FafcD => "+FAFC(D)",
            Variant::Fha => "+FAFC(D)+FHA",
            Variant::GpaGcm => "+FHA+GPA(w/o Pm, w/ Gm)",
            Variant::GpaPpa => "+FHA+GPA(w/o Gm, w/ Pm)",
            Variant::Full => "+FHA+GPA(both)",
        }
    }

    /// Rewrites the ablation flags of `base`; widths, depths, sizes and seed
    /// are kept.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        let (chains, mode, fha, gpa) = match self {
            Variant::Baseline => (false, ConnectionMode::Residual, false, GpaMode::Off),
            Variant::FafcR => (true, ConnectionMode::Residual, false, GpaMode::Off),
            Variant::FafcD => (true, ConnectionMode::Dense, false, GpaMode::Off),
            Variant::Fha => (true, ConnectionMode::Dense, true, GpaMode::Off),
            Variant::GpaGcm => (true, ConnectionMode::Dense, true, GpaMode::GcmOnly),
            Variant::GpaPpa => (true, ConnectionMode::Dense, true, GpaMode::PpaOnly),
            Variant::Full => (true, ConnectionMode::Dense, true, GpaMode::Full),
        };
        c.encoder.chains_enabled = chains;
        c.encoder.connection_mode = mode;
        c.encoder.feedback_enabled = fha;
        c.fha_enabled = fha;
        c.gpa_mode = gpa;
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                CoreError::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    /// Upsampling stages from the deepest skip to the shallowest.
    stages: Vec<Conv>,
    head: Conv,
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub encoder_outputs: Vec<NodeId>,
    pub chain: ChainState,
    pub gpa: NodeId,
    pub logits: NodeId,
    pub prob: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    gpa: Gpa,
    decoder: Decoder,
}

pub fn build_model(config: ModelConfig) -> Result<Model> {
    Model::new(config)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        let enc = &config.encoder;
        let nl = enc.num_levels;
        let gpa = Gpa::new(enc.channels(nl), config.gpa_mode, config.gpa_max_scale)?;
        let mut stages = Vec::new();
        let mut below = enc.channels(nl);
        for k in (1..nl).rev() {
            let out = config.decoder_channels[k - 1];
            stages.push(Conv::new(format!("dec.up{k}"), below + enc.channels(k), out, 3));
            below = out;
        }
        let decoder = Decoder {
            stages,
            head: Conv::new("dec.head", below, 1, 1).zero_initialised(),
        };
        Ok(Model {
            config,
            encoder,
            gpa,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn gpa(&self) -> &Gpa {
        &self.gpa
    }

    pub fn gpa_mut(&mut self) -> &mut Gpa {
        &mut self.gpa
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.encoder.specs(&mut out);
        self.gpa.specs(&mut out);
        for s in &self.decoder.stages {
            s.specs(&mut out);
        }
        self.decoder.head.specs(&mut out);
        out
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        self.param_specs().into_iter().map(|s| s.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Fresh parameters drawn from the config seed.
    pub fn init_params<T: Real>(&self) -> Result<ParamStore<T>> {
        init_store(&self.param_specs(), self.config.seed)
    }

    /// Checks that `ps` holds exactly this model's parameters with the right
    /// shapes. The error names the module of the first offending parameter.
    pub fn check_params<T: Real>(&self, ps: &ParamStore<T>) -> Result<()> {
        let specs = self.param_specs();
        let module = |name: &str| name.split('.').take(2).collect::<Vec<_>>().join(".");
        for spec in &specs {
            match ps.get(&spec.name) {
                None => {
                    return Err(CoreError::Incompatible {
                        module: module(&spec.name),
                        msg: format!("parameter `{}` missing", spec.name),
                    })
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(CoreError::Incompatible {
                        module: module(&spec.name),
                        msg: format!("`{}` has shape {:?}, model expects {:?}", spec.name, t.shape(), spec.shape),
                    })
                }
                _ => {}
            }
        }
        if ps.len() != specs.len() {
            let known = self.param_names();
            let extra = ps.names().find(|n| !known.contains(*n)).unwrap_or_default();
            return Err(CoreError::Incompatible {
                module: module(extra),
                msg: format!("unexpected parameter `{extra}`"),
            });
        }
        Ok(())
    }

    /// `upsample -> concat skip -> 3x3 conv + ReLU` per level, then a 1x1
    /// head. Returns the logits.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        encoder_outputs: &[NodeId],
        gpa_output: NodeId,
    ) -> Result<NodeId> {
        let nl = self.config.encoder.num_levels;
        if encoder_outputs.len() != nl {
            return Err(CoreError::Precondition(format!(
                "decoder expects {nl} encoder outputs, got {}",
                encoder_outputs.len()
            )));
        }
        let mut x = gpa_output;
        for (stage, k) in self.decoder.stages.iter().zip((1..nl).rev()) {
            let up = g.upsample(x, 2)?;
            let skip = encoder_outputs[k - 1];
            let (_, _, uh, uw) = dims(g, up)?;
            let (_, _, sh, sw) = dims(g, skip)?;
            if (uh, uw) != (sh, sw) {
                return Err(CoreError::Precondition(format!(
                    "decoder stage {k}: upsampled {uh}x{uw} does not match skip {sh}x{sw}"
                )));
            }
            let cat = g.concat(&[up, skip])?;
            let y = stage.apply(g, ps, cat)?;
            x = g.relu(y);
        }
        self.decoder.head.apply(g, ps, x)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> Result<ModelOutput> {
        let (_, _, h, w) = dims(g, x)?;
        if (h, w) != self.config.input_size {
            return Err(CoreError::Precondition(format!(
                "input is {h}x{w}, model expects {}x{}",
                self.config.input_size.0, self.config.input_size.1
            )));
        }
        let (encoder_outputs, chain) = self.encoder.forward(g, ps, x)?;
        let top = *encoder_outputs.last().expect("at least one level");
        let gpa = self.gpa.forward(g, ps, top)?;
        let logits = self.decode(g, ps, &encoder_outputs, gpa)?;
        let prob = g.sigmoid(logits);
        Ok(ModelOutput {
            encoder_outputs,
            chain,
            gpa,
            logits,
            prob,
        })
    }

    /// Probability map for a batch `(n, c, h, w)`.
    pub fn predict<T: Real>(&self, ps: &ParamStore<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.forward(&mut g, ps, x)?;
        Ok(g.take_value(out.prob))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        let mut c = ModelConfig::full(&[4, 8, 16], 2, (32, 32));
        c.gpa_max_scale = 2;
        c
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn baseline_has_fewer_params_than_full() {
        let b = Model::new(Variant::Baseline.apply(&base())).unwrap();
        let f = Model::new(Variant::Full.apply(&base())).unwrap();
        assert!(b.num_params() < f.num_params());
    }

    #[test]
    fn fha_flag_must_match_feedback() {
        let mut c = base();
        c.fha_enabled = false;
        assert!(matches!(Model::new(c), Err(CoreError::Config(_))));
    }

    #[test]
    fn single_level_rejects_fha() {
        let mut c = ModelConfig::full(&[8], 2, (8, 8));
        c.fha_enabled = true;
        c.gpa_mode = GpaMode::Off;
        assert!(Model::new(c).is_err());
    }

    #[test]
    fn check_params_names_module() {
        let m = Model::new(base()).unwrap();
        let mut ps: ParamStore<f64> = m.init_params().unwrap();
        m.check_params(&ps).unwrap();
        let other = Model::new(Variant::Baseline.apply(&base())).unwrap();
        let err = other.check_params(&ps).unwrap_err();
        assert!(matches!(err, CoreError::Incompatible { .. }), "{err}");
        ps.set("dec.head.b", Tensor::zeros(&[1])).unwrap();
        m.check_params(&ps).unwrap();
    }
}
