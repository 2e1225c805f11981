//! Feature handover attention: a spatial mask computed from the backbone
//! feature and a channel mask computed from the feedback feature, both
//! applied to the backbone through residual gates.

use hfc_tensor::{Graph, NodeId, ParamStore, Real};

use crate::error::{CoreError, Result};
use crate::layers::{Conv, ParamSpec};

const REDUCTION: usize = 4;
const SPATIAL_KERNEL: usize = 7;

/// Replaces computed attention maps with constants. Only meant for tests
/// and diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaskOverride {
    pub spatial: Option<f64>,
    pub channel: Option<f64>,
}

impl MaskOverride {
    pub fn both(v: f64) -> Self {
        MaskOverride {
            spatial: Some(v),
            channel: Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fha {
    pub low_channels: usize,
    pub high_channels: usize,
    spatial: Conv,
    fc1: Conv,
    fc2: Conv,
    proj: Option<Conv>,
}

impl Fha {
    pub fn new(prefix: &str, low_channels: usize, high_channels: usize) -> Self {
        let hidden = if high_channels < REDUCTION {
            high_channels
        } else {
            high_channels / REDUCTION
        };
        let proj = (high_channels != low_channels)
            .then(|| Conv::new(format!("{prefix}.ca.proj"), high_channels, low_channels, 1));
        Fha {
            low_channels,
            high_channels,
            spatial: Conv::new(format!("{prefix}.sa.conv"), 2, 1, SPATIAL_KERNEL),
            fc1: Conv::new(format!("{prefix}.ca.fc1"), high_channels, hidden, 1),
            fc2: Conv::new(format!("{prefix}.ca.fc2"), hidden, high_channels, 1),
            proj,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.spatial.specs(out);
        self.fc1.specs(out);
        self.fc2.specs(out);
        if let Some(p) = &self.proj {
            p.specs(out);
        }
    }

    /// Spatial map `(n, 1, h, w)`: channel mean and max, 7x7 conv, sigmoid.
    pub fn spatial_attention<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_low: NodeId) -> Result<NodeId> {
        let avg = g.channel_mean(f_low)?;
        let max = g.channel_max(f_low)?;
        let desc = g.concat(&[avg, max])?;
        let logits = self.spatial.apply(g, ps, desc)?;
        Ok(g.sigmoid(logits))
    }

    fn channel_logits<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_high: NodeId) -> Result<NodeId> {
        let avg = g.spatial_mean(f_high)?;
        let max = g.spatial_max(f_high)?;
        let branch = |g: &mut Graph<T>, v: NodeId| -> Result<NodeId> {
            let h = self.fc1.apply(g, ps, v)?;
            let h = g.relu(h);
            self.fc2.apply(g, ps, h)
        };
        let a = branch(g, avg)?;
        let m = branch(g, max)?;
        Ok(g.add(a, m)?)
    }

    /// Channel map `(n, c_high, 1, 1)` from spatial mean and max through a
    /// shared bottleneck, summed, sigmoid.
    pub fn channel_attention<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_high: NodeId) -> Result<NodeId> {
        let logits = self.channel_logits(g, ps, f_high)?;
        Ok(g.sigmoid(logits))
    }

    /// Channel map as applied to the backbone: `(n, c_low, 1, 1)`. When the
    /// channel counts differ the logits pass through a 1x1 projection first.
    fn merge_channel_mask<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_high: NodeId) -> Result<NodeId> {
        let logits = self.channel_logits(g, ps, f_high)?;
        let logits = match &self.proj {
            Some(p) => p.apply(g, ps, logits)?,
            None => logits,
        };
        Ok(g.sigmoid(logits))
    }

    /// `f' = f_low * A_s + f_low`, then `out = f' * A_c + f'`.
    pub fn merge<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_low: NodeId,
        f_high: NodeId,
        forced: MaskOverride,
    ) -> Result<NodeId> {
        let (n, cl, h, w) = dims(g, f_low)?;
        let (nh, ch, hh, wh) = dims(g, f_high)?;
        if cl != self.low_channels || ch != self.high_channels {
            return Err(CoreError::Precondition(format!(
                "attention built for {}/{} channels, got {cl}/{ch}",
                self.low_channels, self.high_channels
            )));
        }
        if (n, h, w) != (nh, hh, wh) {
            return Err(CoreError::Precondition(format!(
                "backbone {:?} and feedback {:?} differ in batch or spatial size",
                g.shape(f_low),
                g.shape(f_high)
            )));
        }
        let a_s = match forced.spatial {
            Some(v) => g.constant(&[n, 1, h, w], T::of(v)),
            None => self.spatial_attention(g, ps, f_low)?,
        };
        let gated = g.mul(f_low, a_s)?;
        let f1 = g.add(gated, f_low)?;
        let a_c = match forced.channel {
            Some(v) => g.constant(&[n, cl, 1, 1], T::of(v)),
            None => self.merge_channel_mask(g, ps, f_high)?,
        };
        let gated = g.mul(f1, a_c)?;
        Ok(g.add(gated, f1)?)
    }
}

pub(crate) fn dims<T: Real>(g: &Graph<T>, x: NodeId) -> Result<(usize, usize, usize, usize)> {
    Ok(g.value(x).dims4()?)
}
