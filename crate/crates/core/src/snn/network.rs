use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};

use super::layer::{Architecture, LayerGeom, LayerSpec, LifConfig};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(spec: &LayerSpec) -> Self {
        Self {
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros(vec![spec.outputs()]),
        }
    }
}

/// A feed-forward spiking network: architecture, weights and neuron dynamics.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    geoms: Vec<LayerGeom>,
    params: Vec<LayerParams>,
    lif: LifConfig,
    seed_tag: u64,
    // Changes whenever weights are handed out mutably; traces record it.
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params && self.lif == other.lif && self.seed_tag == other.seed_tag
    }
}

impl Network {
    /// Assembles a network from explicit parameters.
    pub fn from_parts(arch: Architecture, params: Vec<LayerParams>, lif: LifConfig, seed_tag: u64) -> Result<Self> {
        lif.validate()?;
        let geoms = arch.geometry()?;
        if params.len() != arch.layers.len() {
            return Err(Error::IncompatibleShapes(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                arch.layers.len()
            )));
        }
        for (spec, p) in arch.layers.iter().zip(&params) {
            let ws = spec.weight_shape();
            if p.weight.shape() != ws.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: ws,
                    got: p.weight.shape().to_vec(),
                });
            }
            if p.bias.shape() != [spec.outputs()] {
                return Err(Error::ShapeMismatch {
                    expected: vec![spec.outputs()],
                    got: p.bias.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            arch,
            geoms,
            params,
            lif,
            seed_tag,
            version: fresh_version(),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    pub fn geoms(&self) -> &[LayerGeom] {
        &self.geoms
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Mutable weights. Invalidates every trace recorded so far.
    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn lif(&self) -> &LifConfig {
        &self.lif
    }

    pub fn seed_tag(&self) -> u64 {
        self.seed_tag
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn prunable_layers(&self) -> Vec<usize> {
        self.arch.prunable_layers()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }
}

/// He-normal initialisation (`std = sqrt(2 / fan_in)`, zero bias), deterministic in `seed`.
pub fn init_network(arch: Architecture, lif: LifConfig, seed: u64) -> Result<Network> {
    arch.geometry()?;
    let mut rng = rng::child_rng(seed, &[tag::INIT]);
    let params = arch
        .layers
        .iter()
        .map(|spec| {
            let std = (2.0 / spec.fan_in() as f32).sqrt();
            let normal = Normal::new(0.0f32, std).expect("positive std");
            let mut p = LayerParams::zeros_like(spec);
            for w in p.weight.data_mut() {
                *w = normal.sample(&mut rng);
            }
            p
        })
        .collect();
    Network::from_parts(arch, params, lif, seed)
}
