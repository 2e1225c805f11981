//! Global pyramid attention: pair-wise pyramid attention over an upsampled
//! pyramid of the deepest encoder feature, followed by global context
//! modelling with a pixel-pair correlation map.

use hfc_tensor::{Graph, NodeId, ParamStore, Real};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fha::dims;
use crate::layers::{Conv, Init, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpaMode {
    Full,
    PpaOnly,
    GcmOnly,
    Off,
}

impl GpaMode {
    pub fn uses_ppa(self) -> bool {
        matches!(self, GpaMode::Full | GpaMode::PpaOnly)
    }

    pub fn uses_gcm(self) -> bool {
        matches!(self, GpaMode::Full | GpaMode::GcmOnly)
    }
}

const L2_EPS: f64 = 1e-12;

/// Constant replacements for the two pair-fusion masks (tests only).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairOverride {
    pub low: Option<f64>,
    pub high: Option<f64>,
}

/// Fusion of a feature `f_d` with a feature `f_2d` at twice the resolution and
/// half the channels. Output matches `f_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFuse {
    pub channels: usize,
    att_low: Conv,
    down: Conv,
    att_high: Conv,
    mix: Conv,
    out: Conv,
}

impl PairFuse {
    pub fn new(prefix: &str, channels: usize) -> Result<Self> {
        if channels < 2 || channels % 2 != 0 {
            return Err(CoreError::Config(format!(
                "pair fusion needs an even channel count, got {channels}"
            )));
        }
        let half = channels / 2;
        Ok(PairFuse {
            channels,
            att_low: Conv::new(format!("{prefix}.att_low"), channels, 1, 1),
            down: Conv::new(format!("{prefix}.down"), half, half, 3).strided(2),
            att_high: Conv::new(format!("{prefix}.att_high"), half, 1, 1),
            mix: Conv::new(format!("{prefix}.mix"), channels, channels, 1).without_bias(),
            out: Conv::new(format!("{prefix}.out"), channels + half, channels, 1),
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for c in [&self.att_low, &self.down, &self.att_high, &self.mix, &self.out] {
            c.specs(out);
        }
    }

    /// Mask from the coarse feature, at the fine resolution: `(n, 1, 2h, 2w)`.
    pub fn low_mask<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_d: NodeId) -> Result<NodeId> {
        let up = g.upsample(f_d, 2)?;
        let a = g.relu(up);
        let a = self.att_low.apply(g, ps, a)?;
        Ok(g.sigmoid(a))
    }

    /// Mask from the fine feature, at the coarse resolution: `(n, 1, h, w)`.
    pub fn high_mask<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_2d: NodeId) -> Result<NodeId> {
        let a = self.down.apply(g, ps, f_2d)?;
        let a = g.relu(a);
        let a = self.att_high.apply(g, ps, a)?;
        Ok(g.sigmoid(a))
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_d: NodeId,
        f_2d: NodeId,
        forced: PairOverride,
    ) -> Result<NodeId> {
        let (n, c, h, w) = dims(g, f_d)?;
        let (n2, c2, h2, w2) = dims(g, f_2d)?;
        if c != self.channels || c2 * 2 != c || n2 != n || h2 != 2 * h || w2 != 2 * w {
            return Err(CoreError::Precondition(format!(
                "pair fusion of {:?} with {:?}: second operand must have twice the size and half the channels",
                g.shape(f_d),
                g.shape(f_2d)
            )));
        }
        let a_low = match forced.low {
            Some(v) => g.constant(&[n, 1, 2 * h, 2 * w], T::of(v)),
            None => self.low_mask(g, ps, f_d)?,
        };
        let a_high = match forced.high {
            Some(v) => g.constant(&[n, 1, h, w], T::of(v)),
            None => self.high_mask(g, ps, f_2d)?,
        };
        let coarse = g.mul(a_high, f_d)?;
        let coarse = self.mix.apply(g, ps, coarse)?;
        let fine = g.mul(a_low, f_2d)?;
        let fine = g.avg_pool2(fine)?;
        let cat = g.concat(&[coarse, fine])?;
        self.out.apply(g, ps, cat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gpa {
    pub channels: usize,
    pub mode: GpaMode,
    pub max_scale: usize,
    reduce: Vec<(usize, Conv)>,
    pairs: Vec<(usize, PairFuse)>,
    alpha: Option<String>,
    /// Disables the per-pixel L2 normalisation inside context modelling.
    /// Only for tests of the raw correlation algebra.
    pub normalize: bool,
}

impl Gpa {
    pub fn new(channels: usize, mode: GpaMode, max_scale: usize) -> Result<Self> {
        let mut reduce = Vec::new();
        let mut pairs = Vec::new();
        if mode.uses_ppa() {
            if !max_scale.is_power_of_two() || max_scale < 2 {
                return Err(CoreError::Config(format!(
                    "gpa max_scale must be a power of two >= 2, got {max_scale}"
                )));
            }
            if channels % max_scale != 0 {
                return Err(CoreError::Config(format!(
                    "gpa channels ({channels}) must be divisible by max_scale ({max_scale})"
                )));
            }
            let mut r = 2;
            while r <= max_scale {
                reduce.push((r, Conv::new(format!("gpa.pyr{r}"), channels, channels / r, 1)));
                r *= 2;
            }
            let mut r = max_scale / 2;
            loop {
                pairs.push((r, PairFuse::new(&format!("gpa.pair{r}"), channels / r)?));
                if r == 1 {
                    break;
                }
                r /= 2;
            }
        }
        Ok(Gpa {
            channels,
            mode,
            max_scale,
            reduce,
            pairs,
            alpha: mode.uses_gcm().then(|| "gpa.gcm.alpha".to_string()),
            normalize: true,
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for (_, c) in &self.reduce {
            c.specs(out);
        }
        for (_, p) in &self.pairs {
            p.specs(out);
        }
        if let Some(name) = &self.alpha {
            out.push(ParamSpec {
                name: name.clone(),
                shape: vec![1, 1, 1, 1],
                init: Init::Constant(0.0),
            });
        }
    }

    pub fn pair(&self, scale: usize) -> Option<&PairFuse> {
        self.pairs.iter().find(|(r, _)| *r == scale).map(|(_, p)| p)
    }

    /// `[(1, f_top), (2, f_2), .., (max_scale, f_max)]`; `f_r` has `C/r`
    /// channels at `r` times the resolution. The 1x1 reduction runs before the
    /// bilinear upsampling; both are linear and the interpolation weights sum
    /// to one, so the order does not change the result.
    pub fn build_pyramid<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_top: NodeId,
    ) -> Result<Vec<(usize, NodeId)>> {
        let mut out = vec![(1, f_top)];
        for (r, conv) in &self.reduce {
            let reduced = conv.apply(g, ps, f_top)?;
            out.push((*r, g.upsample(reduced, *r)?));
        }
        Ok(out)
    }

    /// `F = pair(f_{S/2}, f_S)`, then `F = pair(f_r, F)` down to `r = 1`.
    pub fn ppa_forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        pyramid: &[(usize, NodeId)],
    ) -> Result<NodeId> {
        let get = |r: usize| {
            pyramid
                .iter()
                .find(|(s, _)| *s == r)
                .map(|(_, id)| *id)
                .ok_or_else(|| CoreError::Precondition(format!("pyramid scale {r} missing")))
        };
        let mut acc = get(self.max_scale)?;
        for (r, pair) in &self.pairs {
            acc = pair.forward(g, ps, get(*r)?, acc, PairOverride::default())?;
        }
        Ok(acc)
    }

    /// Pixel-pair correlation `f_c = (R^T R)^T` of the normalised feature,
    /// returned with the reshaped feature `R` (`(n, c, p)`).
    pub fn correlation<T: Real>(&self, g: &mut Graph<T>, f: NodeId) -> Result<(NodeId, NodeId)> {
        let (n, c, h, w) = dims(g, f)?;
        let f_norm = if self.normalize {
            g.pixel_l2_normalize(f, L2_EPS)?
        } else {
            f
        };
        let r = g.reshape(f_norm, &[n, c, h * w])?;
        let gram = g.matmul(r, r, true, false)?;
        Ok((g.transpose(gram)?, r))
    }

    /// `f* = f + alpha * (f ⊙ f_g)` with `f_g = R f_c` reshaped back.
    pub fn gcm_forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f: NodeId) -> Result<NodeId> {
        let name = self
            .alpha
            .as_ref()
            .ok_or_else(|| CoreError::Precondition("context modelling is disabled in this mode".into()))?;
        let shape = g.shape(f).to_vec();
        let (fc, r) = self.correlation(g, f)?;
        let fg = g.matmul(r, fc, false, false)?;
        let fg = g.reshape(fg, &shape)?;
        if !g.value(fg).all_finite() {
            return Err(CoreError::NonFinite(format!(
                "context map magnitude {}",
                g.value(fg).max_abs()
            )));
        }
        let alpha = g.param(ps, name)?;
        let prod = g.mul(f, fg)?;
        let scaled = g.mul(prod, alpha)?;
        Ok(g.add(f, scaled)?)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f: NodeId) -> Result<NodeId> {
        let (_, c, _, _) = dims(g, f)?;
        if c != self.channels {
            return Err(CoreError::Precondition(format!(
                "gpa built for {} channels, got {c}",
                self.channels
            )));
        }
        let mut x = f;
        if self.mode.uses_ppa() {
            let pyramid = self.build_pyramid(g, ps, x)?;
            x = self.ppa_forward(g, ps, &pyramid)?;
        }
        if self.mode.uses_gcm() {
            x = self.gcm_forward(g, ps, x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use hfc_tensor::Tensor;

    use super::*;
    use crate::layers::init_store;

    fn store(gpa: &Gpa) -> ParamStore<f64> {
        let mut specs = Vec::new();
        gpa.specs(&mut specs);
        init_store(&specs, 1).unwrap()
    }

    #[test]
    fn pyramid_shapes() {
        let gpa = Gpa::new(64, GpaMode::Full, 8).unwrap();
        let ps = store(&gpa);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[1, 64, 4, 4], |i| (i as f64).cos()));
        let pyr = gpa.build_pyramid(&mut g, &ps, x).unwrap();
        let shapes: Vec<_> = pyr.iter().map(|(_, id)| g.shape(*id).to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![1, 64, 4, 4], vec![1, 32, 8, 8], vec![1, 16, 16, 16], vec![1, 8, 32, 32]]
        );
        let out = gpa.ppa_forward(&mut g, &ps, &pyr).unwrap();
        assert_eq!(g.shape(out), &[1, 64, 4, 4]);
    }

    #[test]
    fn hand_evaluated_correlation() {
        let mut gpa = Gpa::new(1, GpaMode::GcmOnly, 8).unwrap();
        gpa.normalize = false;
        let mut g = Graph::new();
        let f = g.input(Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let (fc, r) = gpa.correlation(&mut g, f).unwrap();
        let mut expected = vec![0.0; 16];
        expected[0] = 1.0;
        assert_eq!(g.value(fc).data(), &expected[..]);
        let fg = g.matmul(r, fc, false, false).unwrap();
        assert_eq!(g.value(fg).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_divisibility_is_checked() {
        assert!(Gpa::new(12, GpaMode::Full, 8).is_err());
        assert!(Gpa::new(12, GpaMode::GcmOnly, 8).is_ok());
        assert!(Gpa::new(4, GpaMode::PpaOnly, 2).is_ok());
    }

    #[test]
    fn masks_forced_to_zero_leave_bias() {
        let pair = PairFuse::new("p", 4).unwrap();
        let mut specs = Vec::new();
        pair.specs(&mut specs);
        let mut ps: ParamStore<f64> = init_store(&specs, 2).unwrap();
        ps.set("p.out.b", Tensor::from_vec(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let fd = g.input(Tensor::from_fn(&[1, 4, 2, 2], |i| i as f64));
        let f2d = g.input(Tensor::from_fn(&[1, 2, 4, 4], |i| -(i as f64)));
        let forced = PairOverride {
            low: Some(0.0),
            high: Some(0.0),
        };
        let out = pair.forward(&mut g, &ps, fd, f2d, forced).unwrap();
        let v = g.value(out);
        for c in 0..4 {
            for q in 0..4 {
                assert_eq!(v.data()[c * 4 + q], [0.5, -1.0, 2.0, 0.0][c]);
            }
        }
    }
}
