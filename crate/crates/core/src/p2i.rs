//! The prompt-to-intervention controller.
//!
//! A dense tanh network maps a prompt embedding to `2 n^2` numbers, reshaped
//! row-major into an `n x n` [`VectorField`] with the x component first.
//!
//! Genome layout: for each layer in order, the `fan_out x fan_in` weight
//! matrix in row-major order (one row per output unit), then the `fan_out`
//! biases.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{PromptEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::io::{read_json, ser_f64_slice, write_json_atomic};
use crate::sim::VectorField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub grid_n: usize,
    pub output_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_dim: EMBEDDING_DIM,
            hidden_dims: vec![64],
            grid_n: 2,
            output_scale: 1.0,
        }
    }
}

impl ArchConfig {
    pub fn for_grid(grid_n: usize) -> Self {
        ArchConfig {
            grid_n,
            ..Self::default()
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.grid_n * self.grid_n
    }

    /// `(fan_in, fan_out)` of every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.grid_n == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("all layer sizes must be >= 1: {self:?}")));
        }
        if !self.output_scale.is_finite() {
            return Err(Error::Config("output_scale must be finite".into()));
        }
        Ok(())
    }
}

pub fn param_count(arch: &ArchConfig) -> usize {
    arch.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
}

/// Flat vector of every controller parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome(Vec<f64>);

impl Genome {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("genome entry {k} is not finite")));
        }
        Ok(Genome(values))
    }

    pub fn zeros(len: usize) -> Self {
        Genome(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.fan_in)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2IModel {
    arch: ArchConfig,
    layers: Vec<Layer>,
}

/// Gaussian weights with standard deviation `1 / sqrt(fan_in)`, zero biases.
pub fn new_model(arch: &ArchConfig, seed: u64) -> Result<P2IModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            Layer {
                fan_in,
                fan_out,
                weights: (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(P2IModel {
        arch: arch.clone(),
        layers,
    })
}

pub fn load_weights(arch: &ArchConfig, genome: &Genome) -> Result<P2IModel> {
    arch.validate()?;
    let expected = param_count(arch);
    if genome.len() != expected {
        return Err(Error::Input(format!(
            "genome length mismatch: expected {expected}, got {}",
            genome.len()
        )));
    }
    let mut rest = genome.as_slice();
    let mut take = |k: usize| {
        let (head, tail) = rest.split_at(k);
        rest = tail;
        head.to_vec()
    };
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| Layer {
            fan_in,
            fan_out,
            weights: take(fan_in * fan_out),
            biases: take(fan_out),
        })
        .collect();
    Ok(P2IModel {
        arch: arch.clone(),
        layers,
    })
}

pub fn flatten_weights(model: &P2IModel) -> Genome {
    let mut values = Vec::with_capacity(model.param_count());
    for layer in &model.layers {
        values.extend_from_slice(&layer.weights);
        values.extend_from_slice(&layer.biases);
    }
    Genome(values)
}

impl P2IModel {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn flatten(&self) -> Genome {
        flatten_weights(self)
    }

    /// Raw network output before reshaping.
    pub fn forward_flat(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.arch.input_dim {
            return Err(Error::Input(format!(
                "input has dimension {}, model expects {}",
                input.len(),
                self.arch.input_dim
            )));
        }
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut act = input.to_vec();
        for layer in hidden {
            act = layer.affine(&act).into_iter().map(f64::tanh).collect();
        }
        Ok(last
            .affine(&act)
            .into_iter()
            .map(|z| z * self.arch.output_scale)
            .collect())
    }

    pub fn forward(&self, emb: &PromptEmbedding) -> Result<VectorField> {
        let flat = self.forward_flat(emb.vector())?;
        VectorField::from_flat(self.arch.grid_n, &flat)
    }

    /// Forward-mode derivative of [`forward_flat`](Self::forward_flat) with
    /// respect to the parameters, along `direction` (genome layout).
    pub fn directional_derivative(&self, input: &[f64], direction: &Genome) -> Result<Vec<f64>> {
        if direction.len() != self.param_count() {
            return Err(Error::Input(format!(
                "direction length mismatch: expected {}, got {}",
                self.param_count(),
                direction.len()
            )));
        }
        let tangent = load_weights(&self.arch, direction)?;
        let mut act = input.to_vec();
        let mut d_act = vec![0.0; input.len()];
        let n_layers = self.layers.len();
        for (k, (layer, d_layer)) in self.layers.iter().zip(&tangent.layers).enumerate() {
            let z = layer.affine(&act);
            // dz = dW a + W da + db
            let dz: Vec<f64> = d_layer
                .affine(&act)
                .iter()
                .zip(layer.weights.chunks_exact(layer.fan_in))
                .map(|(dwa_db, row)| dwa_db + row.iter().zip(&d_act).map(|(w, da)| w * da).sum::<f64>())
                .collect();
            if k + 1 == n_layers {
                let s = self.arch.output_scale;
                return Ok(dz.into_iter().map(|v| v * s).collect());
            }
            act = z.iter().map(|v| v.tanh()).collect();
            d_act = dz.iter().zip(&act).map(|(d, t)| d * (1.0 - t * t)).collect();
        }
        unreachable!("loop returns at the output layer")
    }
}

/// On-disk genome: `{"arch": {...}, "values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeFile {
    pub arch: ArchConfig,
    #[serde(serialize_with = "ser_f64_slice")]
    pub values: Vec<f64>,
}

impl GenomeFile {
    pub fn new(arch: &ArchConfig, genome: &Genome) -> Self {
        GenomeFile {
            arch: arch.clone(),
            values: genome.as_slice().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn into_model(self) -> Result<P2IModel> {
        let genome = Genome::new(self.values)?;
        load_weights(&self.arch, &genome)
    }
}
