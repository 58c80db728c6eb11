//! Filter masks, masked views, physical materialization of pruned networks
//! and FLOPs accounting.

mod mask;

pub use mask::{FilterMask, Segment};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{Architecture, LayerParams, LayerSpec, NetView, Network};
use crate::tensor::Tensor;

/// A network evaluated with pruned filters silenced.
pub type MaskedView<'a> = NetView<'a>;

pub fn all_ones_mask(net: &Network) -> FilterMask {
    FilterMask::all_ones(net)
}

/// The network restricted to its retained filters, without copying weights.
pub fn apply_mask<'a>(net: &'a Network, mask: &'a FilterMask) -> Result<MaskedView<'a>> {
    NetView::masked(net, mask)
}

/// Builds the physically smaller network: pruned rows of each convolution
/// are dropped, along with the matching input slices of the next layer
/// (kernel input channels, or the flattened dense columns of that channel).
pub fn materialize(net: &Network, mask: &FilterMask) -> Result<Network> {
    mask.check(net)?;
    for (i, seg) in mask.segments().iter().enumerate() {
        if seg.count_ones() == 0 {
            return Err(Error::EmptyLayer(i));
        }
    }
    let view = NetView::masked(net, mask)?;
    let specs = net.specs();
    let geoms = net.geoms();
    let mut new_specs = Vec::with_capacity(specs.len());
    let mut new_params = Vec::with_capacity(specs.len());
    // Retained input channels of the current layer and their spatial plane size.
    let mut in_keep: Option<(Vec<usize>, usize)> = None;

    for (l, (spec, p)) in specs.iter().zip(net.params()).enumerate() {
        let g = &geoms[l];
        let out_keep: Vec<usize> = match view.keep(l) {
            Some(k) => k.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
            None => (0..spec.outputs()).collect(),
        };
        let (new_spec, weight) = match *spec {
            LayerSpec::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => {
                let ins: Vec<usize> = match &in_keep {
                    Some((k, _)) => k.clone(),
                    None => (0..in_channels).collect(),
                };
                let ksz = kernel_h * kernel_w;
                let w = p.weight.data();
                let mut data = Vec::with_capacity(out_keep.len() * ins.len() * ksz);
                for &o in &out_keep {
                    for &i in &ins {
                        let at = (o * in_channels + i) * ksz;
                        data.extend_from_slice(&w[at..at + ksz]);
                    }
                }
                let spec = LayerSpec::Conv2d {
                    in_channels: ins.len(),
                    out_channels: out_keep.len(),
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                };
                (spec, Tensor::new(spec.weight_shape(), data)?)
            }
            LayerSpec::Dense {
                in_features, spiking, ..
            } => {
                let cols: Vec<usize> = match &in_keep {
                    Some((k, plane)) => k.iter().flat_map(|&c| c * plane..(c + 1) * plane).collect(),
                    None => (0..in_features).collect(),
                };
                let w = p.weight.data();
                let mut data = Vec::with_capacity(out_keep.len() * cols.len());
                for &o in &out_keep {
                    let row = &w[o * in_features..(o + 1) * in_features];
                    data.extend(cols.iter().map(|&c| row[c]));
                }
                let spec = LayerSpec::Dense {
                    in_features: cols.len(),
                    out_features: out_keep.len(),
                    spiking,
                };
                (spec, Tensor::new(spec.weight_shape(), data)?)
            }
        };
        let bias = Tensor::new(vec![out_keep.len()], out_keep.iter().map(|&o| p.bias.data()[o]).collect())?;
        new_specs.push(new_spec);
        new_params.push(LayerParams { weight, bias });
        in_keep = view.keep(l).map(|_| (out_keep, g.out_plane()));
    }
    let arch = Architecture::new(net.input_shape(), new_specs);
    Network::from_parts(arch, new_params, *net.lif(), net.seed_tag())
}

/// Multiply-accumulate counts for one simulated timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_layer: Vec<u64>,
    /// `2 × Σ per_layer`.
    pub total_flops: u64,
    /// Fraction of a reference network's FLOPs, when one was supplied.
    pub ratio_vs: Option<f64>,
}

impl FlopsReport {
    pub fn total_macs(&self) -> u64 {
        self.per_layer.iter().sum()
    }

    pub fn relative_to(mut self, reference: &FlopsReport) -> Self {
        self.ratio_vs = Some(self.total_flops as f64 / reference.total_flops as f64);
        self
    }

    /// FLOPs removed relative to the reference, in percent.
    pub fn reduction_pct(&self) -> Option<f64> {
        self.ratio_vs.map(|r| 100.0 * (1.0 - r))
    }
}

/// Conv MACs are `out·in·K_h·K_w·H_out·W_out`, dense MACs `in·out`, counting
/// only retained filters and their surviving input channels.
pub fn count_flops(view: &NetView) -> FlopsReport {
    let net = view.network();
    let specs = net.specs();
    let geoms = net.geoms();
    let mut per_layer = Vec::with_capacity(specs.len());
    // Retained channel count of the previous layer, with its plane size.
    let mut prev: Option<(usize, usize)> = None;
    for (l, spec) in specs.iter().enumerate() {
        let g = &geoms[l];
        let out = view.keep(l).map_or(spec.outputs(), |k| k.iter().filter(|&&b| b).count());
        let macs = match *spec {
            LayerSpec::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => {
                let ins = prev.map_or(in_channels, |(c, _)| c);
                (out * ins * kernel_h * kernel_w * g.out_h * g.out_w) as u64
            }
            LayerSpec::Dense { in_features, .. } => {
                let ins = prev.map_or(in_features, |(c, plane)| c * plane);
                (ins * out) as u64
            }
        };
        per_layer.push(macs);
        prev = view.keep(l).map(|_| (out, g.out_plane()));
    }
    let total_flops = 2 * per_layer.iter().sum::<u64>();
    FlopsReport {
        per_layer,
        total_flops,
        ratio_vs: None,
    }
}
