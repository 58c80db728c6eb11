use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine stage of the network. Convolutions are always followed by LIF
/// dynamics; a dense layer is spiking unless it is the readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        spiking: bool,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn dense(in_features: usize, out_features: usize, spiking: bool) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
            spiking,
        }
    }

    pub fn spiking(&self) -> bool {
        match *self {
            LayerSpec::Conv2d { .. } => true,
            LayerSpec::Dense { spiking, .. } => spiking,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. })
    }

    pub fn outputs(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. } => out_channels,
            LayerSpec::Dense { out_features, .. } => out_features,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
            LayerSpec::Dense { in_features, .. } => in_features,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => vec![out_channels, in_channels, kernel_h, kernel_w],
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => vec![out_features, in_features],
        }
    }
}

/// Input/output extents of a layer. Dense layers use `c = features, h = w = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerGeom {
    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Spatial positions per output channel.
    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Input shape plus the ordered layer list.
///
/// Activations are flattened channel-major `(channel, row, col)` right
/// before the first dense layer, so dense column `c·H·W + y·W + x` reads
/// channel `c` of the preceding convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// Checks the layer invariants and returns the per-layer geometry.
    pub fn geometry(&self) -> Result<Vec<LayerGeom>> {
        let bad = |msg: String| Err(Error::IncompatibleShapes(msg));
        if self.layers.is_empty() {
            return bad("architecture has no layers".into());
        }
        let [mut c, mut h, mut w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return bad(format!("input shape {:?} has a zero dimension", self.input));
        }
        let last = self.layers.len() - 1;
        let mut seen_dense = false;
        let mut geoms = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            if spec.outputs() == 0 {
                return bad(format!("layer {i} has no outputs"));
            }
            if spec.spiking() == (i == last) {
                return bad(format!(
                    "exactly the last layer must be the non-spiking readout (layer {i})"
                ));
            }
            match *spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                } => {
                    if seen_dense {
                        return bad(format!("convolution {i} follows a dense layer"));
                    }
                    if kernel_h == 0 || kernel_w == 0 || stride == 0 {
                        return bad(format!("layer {i} has a zero kernel dim or stride"));
                    }
                    if in_channels != c {
                        return bad(format!("layer {i} expects {in_channels} input channels, gets {c}"));
                    }
                    if h + 2 * padding < kernel_h || w + 2 * padding < kernel_w {
                        return bad(format!("layer {i} kernel larger than padded input"));
                    }
                    let oh = (h + 2 * padding - kernel_h) / stride + 1;
                    let ow = (w + 2 * padding - kernel_w) / stride + 1;
                    geoms.push(LayerGeom {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: out_channels,
                        out_h: oh,
                        out_w: ow,
                        kh: kernel_h,
                        kw: kernel_w,
                        stride,
                        pad: padding,
                    });
                    (c, h, w) = (out_channels, oh, ow);
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    ..
                } => {
                    seen_dense = true;
                    if in_features != c * h * w {
                        return bad(format!(
                            "dense layer {i} expects {in_features} features, gets {}",
                            c * h * w
                        ));
                    }
                    geoms.push(LayerGeom {
                        in_c: in_features,
                        in_h: 1,
                        in_w: 1,
                        out_c: out_features,
                        out_h: 1,
                        out_w: 1,
                        kh: 1,
                        kw: 1,
                        stride: 1,
                        pad: 0,
                    });
                    (c, h, w) = (out_features, 1, 1);
                }
            }
        }
        if !matches!(self.layers[last], LayerSpec::Dense { .. }) {
            return bad("readout must be a dense layer".into());
        }
        Ok(geoms)
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// Layer indices of the prunable (convolution) layers, in order.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .map(|(i, _)| i)
            .collect()
    }

    /// Stable 64-bit FNV-1a digest of the structure, used to bind masks to networks.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("architecture serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// The small two-convolution network used by the desk profile.
    pub fn desk(img_size: usize, num_classes: usize) -> Self {
        let c1 = 8;
        let c2 = 16;
        let half = img_size.div_ceil(2);
        Self::new(
            [1, img_size, img_size],
            vec![
                LayerSpec::conv(1, c1, 3, 1, 1),
                LayerSpec::conv(c1, c2, 3, 2, 1),
                LayerSpec::dense(c2 * half * half, num_classes, false),
            ],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    HardZero,
}

/// Discrete-time leaky integrate-and-fire parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifConfig {
    pub decay: f32,
    pub threshold: f32,
    pub timesteps: usize,
    pub reset: Reset,
    pub surrogate_width: f32,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            threshold: 1.0,
            timesteps: 4,
            reset: Reset::HardZero,
            surrogate_width: 1.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::ConfigInvalid(format!("decay {} outside (0,1]", self.decay)));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::ConfigInvalid(format!("threshold {} must be > 0", self.threshold)));
        }
        if self.timesteps == 0 {
            return Err(Error::ConfigInvalid("timesteps must be positive".into()));
        }
        if !(self.surrogate_width > 0.0) || !self.surrogate_width.is_finite() {
            return Err(Error::ConfigInvalid("surrogate width must be > 0".into()));
        }
        Ok(())
    }
}
