//! Feature aggregation feedback chain encoder.
//!
//! Every level starts from an entry block. With chains enabled, the level
//! then runs a main chain `f̂(n,1) .. f̂(n,c)`; each chain feature can be sent
//! sideways to the next level through a stride-2 convolution (`f̄(n,i)`).
//! With feedback enabled, the chain tail is merged back into the backbone
//! `f̂(n,1)` by feature handover attention before the level hands its output
//! to the decoder skip and, max-pooled, to the next level's entry block.

use std::collections::{BTreeMap, HashMap};

use hfc_tensor::{Graph, NodeId, ParamStore, Real};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fha::{dims, Fha, MaskOverride};
use crate::layers::{Conv, ConvBlock, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionMode {
    /// Side inputs come from the immediately preceding level only.
    Residual,
    /// Side inputs from every earlier level at the same depth are concatenated.
    Dense,
}

fn default_true() -> bool {
    true
}

fn default_in_channels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_levels: usize,
    pub depth_per_level: Vec<usize>,
    pub channels_per_level: Vec<usize>,
    pub connection_mode: ConnectionMode,
    pub feedback_enabled: bool,
    /// When false the encoder is a plain one-block-per-level backbone.
    #[serde(default = "default_true")]
    pub chains_enabled: bool,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.num_levels == 0 {
            return fail("encoder.num_levels must be at least 1".into());
        }
        if self.depth_per_level.len() != self.num_levels || self.channels_per_level.len() != self.num_levels {
            return fail(format!(
                "encoder.depth_per_level ({}) and encoder.channels_per_level ({}) must both have num_levels = {} entries",
                self.depth_per_level.len(),
                self.channels_per_level.len(),
                self.num_levels
            ));
        }
        if self.depth_per_level.contains(&0) || self.channels_per_level.contains(&0) {
            return fail("encoder depths and channel widths must be positive".into());
        }
        if self.in_channels == 0 {
            return fail("encoder.in_channels must be positive".into());
        }
        if self.feedback_enabled && self.num_levels < 2 {
            return fail("feedback needs at least 2 encoder levels".into());
        }
        if self.feedback_enabled && !self.chains_enabled {
            return fail("feedback needs chains_enabled".into());
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.channels_per_level[level - 1]
    }

    pub fn depth(&self, level: usize) -> usize {
        self.depth_per_level[level - 1]
    }

    /// Input spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.num_levels - 1)
    }
}

/// Features recorded during one encoder pass, keyed by 1-based `(level, depth)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainState {
    pub main: BTreeMap<(usize, usize), NodeId>,
    pub side: BTreeMap<(usize, usize), NodeId>,
    /// Main-chain tail of each level that ran its chain to full depth.
    pub feedback: BTreeMap<usize, NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Source {
    /// `f̂(n, i-1)`, or the entry output when `i = 1`.
    Prev,
    /// `f̄(m, j)`, max-pooled down to the consuming level.
    Side { level: usize, depth: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Combine {
    /// `prev + Ω(prev)`.
    Residual,
    /// `entry + P([sides]) + Ω([sides])`.
    Entry,
    /// `P([prev, sides]) + Ω([prev, sides])`.
    Project,
}

#[derive(Debug, Clone, PartialEq)]
struct Step {
    inputs: Vec<Source>,
    combine: Combine,
    omega: ConvBlock,
    proj: Option<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    entry: ConvBlock,
    steps: Vec<Step>,
    sides: BTreeMap<usize, Conv>,
    fha: Option<Fha>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    levels: Vec<Level>,
}

/// Depths of level `m` fed to the entry step of the next level: the head,
/// the tail and depth 2, in that order, without repeats.
fn entry_depths(c: usize) -> Vec<usize> {
    let mut v = vec![1];
    for d in [c, 2] {
        if d <= c && !v.contains(&d) {
            v.push(d);
        }
    }
    v
}

fn step_inputs(cfg: &EncoderConfig, n: usize, i: usize) -> Vec<Source> {
    if !cfg.chains_enabled || n == 1 {
        return vec![Source::Prev];
    }
    let depths_from = |m: usize| -> Vec<usize> {
        if i == 1 {
            entry_depths(cfg.depth(m))
        } else if i <= cfg.depth(m) {
            vec![i]
        } else {
            Vec::new()
        }
    };
    let immediate = depths_from(n - 1);
    if immediate.is_empty() {
        return vec![Source::Prev];
    }
    let mut out = Vec::new();
    if i > 1 {
        out.push(Source::Prev);
    }
    out.extend(immediate.into_iter().map(|depth| Source::Side { level: n - 1, depth }));
    if cfg.connection_mode == ConnectionMode::Dense {
        for m in 1..n - 1 {
            out.extend(depths_from(m).into_iter().map(|depth| Source::Side { level: m, depth }));
        }
    }
    out
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let nl = cfg.num_levels;
        // Work from the deepest level up so that each level knows which of
        // its chain features are consumed further down.
        let mut used_depth = vec![0usize; nl + 1];
        let mut side_uses: Vec<Vec<usize>> = vec![Vec::new(); nl + 1];
        let mut inputs: Vec<Vec<Vec<Source>>> = vec![Vec::new(); nl + 1];
        for n in (1..=nl).rev() {
            let c = cfg.depth(n);
            used_depth[n] = if !cfg.chains_enabled {
                0
            } else if cfg.feedback_enabled {
                c
            } else {
                side_uses[n].iter().copied().max().unwrap_or(1).max(1)
            };
            for i in 1..=used_depth[n] {
                let srcs = step_inputs(cfg, n, i);
                for s in &srcs {
                    if let Source::Side { level, depth } = *s {
                        if !side_uses[level].contains(&depth) {
                            side_uses[level].push(depth);
                        }
                    }
                }
                inputs[n].push(srcs);
            }
        }
        let mut levels = Vec::with_capacity(nl);
        for n in 1..=nl {
            let cn = cfg.channels(n);
            let cin = if n == 1 { cfg.in_channels } else { cfg.channels(n - 1) };
            let entry = ConvBlock::new(format!("enc.l{n}.entry"), cin, cn, 3);
            let steps = inputs[n]
                .iter()
                .enumerate()
                .map(|(k, srcs)| {
                    let i = k + 1;
                    let width: usize = srcs
                        .iter()
                        .map(|s| match s {
                            Source::Prev => cn,
                            Source::Side { level, .. } => cfg.channels(level + 1),
                        })
                        .sum();
                    let combine = if srcs == &[Source::Prev] {
                        Combine::Residual
                    } else if i == 1 {
                        Combine::Entry
                    } else {
                        Combine::Project
                    };
                    let proj = (combine != Combine::Residual)
                        .then(|| Conv::new(format!("enc.l{n}.proj{i}"), width, cn, 1));
                    Step {
                        inputs: srcs.clone(),
                        combine,
                        omega: ConvBlock::new(format!("enc.l{n}.omega{i}"), width, cn, 3),
                        proj,
                    }
                })
                .collect();
            let mut uses = side_uses[n].clone();
            uses.sort_unstable();
            let sides = uses
                .into_iter()
                .map(|j| {
                    let conv = Conv::new(format!("enc.l{n}.side{j}"), cn, cfg.channels(n + 1), 3).strided(2);
                    (j, conv)
                })
                .collect();
            let fha = cfg.feedback_enabled.then(|| Fha::new(&format!("enc.l{n}.fha"), cn, cn));
            levels.push(Level {
                entry,
                steps,
                sides,
                fha,
            });
        }
        Ok(Encoder { config, levels })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for level in &self.levels {
            level.entry.specs(out);
            for step in &level.steps {
                step.omega.specs(out);
                if let Some(p) = &step.proj {
                    p.specs(out);
                }
            }
            for conv in level.sides.values() {
                conv.specs(out);
            }
            if let Some(fha) = &level.fha {
                fha.specs(out);
            }
        }
    }

    /// Names of the parameters that multiply side inputs from levels other
    /// than the immediately preceding one, with the channel range they own
    /// inside the weight's input axis. Empty in residual mode.
    pub fn non_immediate_slices(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (k, level) in self.levels.iter().enumerate() {
            let n = k + 1;
            for step in &level.steps {
                let mut offset = 0;
                for s in &step.inputs {
                    let width = match s {
                        Source::Prev => self.config.channels(n),
                        Source::Side { level, .. } => self.config.channels(level + 1),
                    };
                    if let Source::Side { level, .. } = s {
                        if *level + 1 != n {
                            let r = offset..offset + width;
                            out.push((step.omega.conv.weight_name(), r.clone()));
                            if let Some(p) = &step.proj {
                                out.push((p.weight_name(), r));
                            }
                        }
                    }
                    offset += width;
                }
            }
        }
        out
    }

    /// Attention unit merging the chain tail of `level` into its backbone.
    pub fn fha(&self, level: usize) -> Option<&Fha> {
        self.levels.get(level.wrapping_sub(1)).and_then(|l| l.fha.as_ref())
    }

    /// Ω: concatenation (when given several inputs), 3x3 conv, norm, ReLU.
    pub fn level_process_omega<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        inputs: &[NodeId],
        level: usize,
        depth: usize,
    ) -> Result<NodeId> {
        let step = self
            .levels
            .get(level.wrapping_sub(1))
            .and_then(|l| l.steps.get(depth.wrapping_sub(1)))
            .ok_or_else(|| CoreError::Precondition(format!("no chain step at level {level}, depth {depth}")))?;
        let cat = g.concat(inputs)?;
        step.omega.apply(g, ps, cat)
    }

    /// Φ: handover attention of the chain tail into the backbone (when
    /// feedback is enabled), then 2x max pooling.
    pub fn cross_level_process_phi<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        tail: NodeId,
        backbone: NodeId,
        level: usize,
        forced: MaskOverride,
    ) -> Result<NodeId> {
        let merged = match self.fha(level) {
            Some(fha) => fha.merge(g, ps, backbone, tail, forced)?,
            None => backbone,
        };
        pool_checked(g, merged)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: NodeId,
    ) -> Result<(Vec<NodeId>, ChainState)> {
        self.forward_with(g, ps, x, MaskOverride::default())
    }

    pub fn forward_with<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: NodeId,
        forced: MaskOverride,
    ) -> Result<(Vec<NodeId>, ChainState)> {
        let cfg = &self.config;
        let (_, c, h, w) = dims(g, x)?;
        if c != cfg.in_channels {
            return Err(CoreError::Precondition(format!(
                "encoder expects {} input channels, got {c}",
                cfg.in_channels
            )));
        }
        let m = cfg.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(CoreError::Precondition(format!(
                "input size {h}x{w} is not divisible by {m} (2^(levels-1))"
            )));
        }
        let mut state = ChainState::default();
        let mut outputs: Vec<NodeId> = Vec::with_capacity(self.levels.len());
        let mut pooled: HashMap<(usize, usize, usize), NodeId> = HashMap::new();
        for (k, level) in self.levels.iter().enumerate() {
            let n = k + 1;
            let pre = match outputs.last() {
                None => x,
                Some(&prev) => pool_checked(g, prev)?,
            };
            let entry = level.entry.apply(g, ps, pre)?;
            if level.steps.is_empty() {
                outputs.push(entry);
                continue;
            }
            let mut prev = entry;
            for (s, step) in level.steps.iter().enumerate() {
                let i = s + 1;
                let mut srcs = Vec::with_capacity(step.inputs.len());
                for src in &step.inputs {
                    let id = match *src {
                        Source::Prev => prev,
                        Source::Side { level: sl, depth } => {
                            side_at(g, &state, &mut pooled, sl, depth, n - 1 - sl)?
                        }
                    };
                    srcs.push(id);
                }
                let cat = g.concat(&srcs)?;
                let om = step.omega.apply(g, ps, cat)?;
                let f = match (step.combine, &step.proj) {
                    (Combine::Residual, _) => g.add(prev, om)?,
                    (Combine::Entry, Some(p)) => {
                        let pr = p.apply(g, ps, cat)?;
                        g.add_all(&[entry, pr, om])?
                    }
                    (Combine::Project, Some(p)) => {
                        let pr = p.apply(g, ps, cat)?;
                        g.add(pr, om)?
                    }
                    (_, None) => unreachable!("projection is built for every non-residual step"),
                };
                state.main.insert((n, i), f);
                prev = f;
            }
            let backbone = state.main[&(n, 1)];
            if level.steps.len() == cfg.depth(n) {
                state.feedback.insert(n, prev);
            }
            let out = match &level.fha {
                Some(fha) => fha.merge(g, ps, backbone, prev, forced)?,
                None => backbone,
            };
            for (&j, conv) in &level.sides {
                let f = conv.apply(g, ps, state.main[&(n, j)])?;
                state.side.insert((n, j), f);
            }
            outputs.push(out);
        }
        Ok((outputs, state))
    }
}

fn side_at<T: Real>(
    g: &mut Graph<T>,
    state: &ChainState,
    cache: &mut HashMap<(usize, usize, usize), NodeId>,
    level: usize,
    depth: usize,
    pools: usize,
) -> Result<NodeId> {
    if let Some(&id) = cache.get(&(level, depth, pools)) {
        return Ok(id);
    }
    let mut id = *state
        .side
        .get(&(level, depth))
        .ok_or_else(|| CoreError::Precondition(format!("side feature ({level}, {depth}) missing")))?;
    for _ in 0..pools {
        id = g.max_pool2(id)?;
    }
    cache.insert((level, depth, pools), id);
    Ok(id)
}

fn pool_checked<T: Real>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let (_, _, h, w) = dims(g, x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::Precondition(format!(
            "cannot halve odd spatial size {h}x{w}"
        )));
    }
    Ok(g.max_pool2(x)?)
}
