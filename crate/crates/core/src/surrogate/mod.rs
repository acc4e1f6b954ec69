//! Learned local DtN maps `DtÑ_{H,i}`: one scalar network per output component.

pub mod data;
pub mod loss;
pub mod net;
pub mod train;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use data::{generate_dataset, provenance_hash, sample_grid, DatasetMeta, DtnSampleSet};
pub use loss::{LossConfig, LossTerms, Monotonicity, Quadrature, Targets};
pub use net::{Scaling, SurrogateNet};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};

/// The `d` component networks of one local DtN surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    nets: Vec<SurrogateNet>,
    train: TrainConfig,
    provenance_hash: String,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major, `fan_out` rows of `fan_in` entries.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    component: usize,
    scaling: Scaling,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    hidden: Vec<usize>,
    activation: String,
    train: TrainConfig,
    provenance_hash: String,
    nets: Vec<NetFile>,
}

const ACTIVATION: &str = "relu_squared";

impl SurrogateModel {
    pub fn new(nets: Vec<SurrogateNet>, train: TrainConfig, provenance_hash: String) -> Result<Self> {
        let d = nets.first().map(SurrogateNet::input_dim).unwrap_or(0);
        if d == 0 || nets.len() != d || nets.iter().enumerate().any(|(l, n)| n.input_dim() != d || n.component() != l) {
            return Err(Error::InvalidInput("need one network per component with matching input size".into()));
        }
        Ok(SurrogateModel { nets, train, provenance_hash })
    }

    pub fn input_dim(&self) -> usize {
        self.nets.len()
    }

    pub fn nets(&self) -> &[SurrogateNet] {
        &self.nets
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn provenance_hash(&self) -> &str {
        &self.provenance_hash
    }

    /// Input box shared by all component networks.
    pub fn training_box(&self) -> (f64, f64) {
        self.nets.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), n| {
            let s = n.scaling();
            (lo.max(s.u_min), hi.min(s.u_max))
        })
    }

    /// `DtÑ(v)` and its Jacobian.
    pub fn evaluate(&self, v: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let d = self.input_dim();
        let mut values = Vec::with_capacity(d);
        let mut jac = DMatrix::zeros(d, d);
        for (l, net) in self.nets.iter().enumerate() {
            let (y, g) = net.forward_with_input_jacobian(v)?;
            values.push(y);
            for (k, gk) in g.into_iter().enumerate() {
                jac[(l, k)] = gk;
            }
        }
        Ok((values, jac))
    }

    /// `DtÑ` continued outside the training box. With `p` the nearest box
    /// point and `w = v - p`, component `l` is
    /// `N_l(p) + ∇N_l(p)·w + κ_l w_l |w_l|`, `κ_l = output_scale_l / (hi - lo)²`.
    /// The quadratic term keeps the continuation monotone far from the box.
    /// Value and Jacobian are continuous across the box boundary and the
    /// returned Jacobian is exact (it includes the curvature term along the
    /// unclamped inputs). Inside the box this is [`Self::evaluate`].
    pub fn evaluate_extended(&self, v: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (lo, hi) = self.training_box();
        let p: Vec<f64> = v.iter().map(|x| x.clamp(lo, hi)).collect();
        let (mut values, mut jac) = self.evaluate(&p)?;
        if p.as_slice() == v {
            return Ok((values, jac));
        }
        let w: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        let gradients = jac.clone();
        for (l, net) in self.nets.iter().enumerate() {
            values[l] += gradients.row(l).iter().zip(&w).map(|(g, dw)| g * dw).sum::<f64>();
            let kappa = net.scaling().output_scale / ((hi - lo) * (hi - lo));
            values[l] += kappa * w[l] * w[l].abs();
            jac[(l, l)] += 2.0 * kappa * w[l].abs();
            let hw = net.input_hessian_vector(&p, &w)?;
            for (j, hj) in hw.into_iter().enumerate() {
                if w[j] == 0.0 && p[j] > lo && p[j] < hi {
                    jac[(l, j)] += hj;
                }
            }
        }
        Ok((values, jac))
    }

    /// Values only, for many points at once.
    pub fn evaluate_batch(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![vec![0.0; self.input_dim()]; points.len()];
        for (l, net) in self.nets.iter().enumerate() {
            let tape = net.forward_batch(points, false)?;
            for (s, row) in out.iter_mut().enumerate() {
                row[l] = tape.value(net, s);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let nets = self
            .nets
            .iter()
            .map(|net| {
                let mut params = net.params();
                let layers = net
                    .layer_shapes()
                    .map(|(nin, nout)| {
                        let (w, rest) = params.split_at(nin * nout);
                        let (b, rest) = rest.split_at(nout);
                        params = rest;
                        LayerFile { weights: w.chunks(nin).map(<[f64]>::to_vec).collect(), bias: b.to_vec() }
                    })
                    .collect();
                NetFile { component: net.component(), scaling: net.scaling(), layers }
            })
            .collect();
        let file = ModelFile {
            input_dim: self.input_dim(),
            hidden: self.nets[0].hidden().to_vec(),
            activation: ACTIVATION.into(),
            train: self.train.clone(),
            provenance_hash: self.provenance_hash.clone(),
            nets,
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Loads a model, checking the input size. A provenance mismatch against
    /// `expected_hash` is not fatal and is returned as a warning.
    pub fn load(path: &Path, expected_dim: Option<usize>, expected_hash: Option<&str>) -> Result<(Self, Vec<String>)> {
        let malformed = |reason: String| Error::Malformed { path: path.display().to_string(), reason };
        let file: ModelFile =
            serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| malformed(e.to_string()))?;
        if file.activation != ACTIVATION {
            return Err(malformed(format!("unsupported activation {}", file.activation)));
        }
        if let Some(d) = expected_dim {
            if file.input_dim != d {
                return Err(malformed(format!("model input_dim {} but {d} expected", file.input_dim)));
            }
        }
        let mut nets = Vec::with_capacity(file.nets.len());
        for nf in file.nets {
            let mut params = Vec::new();
            for layer in nf.layers {
                params.extend(layer.weights.into_iter().flatten());
                params.extend(layer.bias);
            }
            let net = SurrogateNet::from_params(file.input_dim, &file.hidden, nf.component, nf.scaling, params)
                .map_err(|e| malformed(e.to_string()))?;
            nets.push(net);
        }
        let mut warnings = Vec::new();
        if let Some(h) = expected_hash {
            if h != file.provenance_hash {
                warnings.push(format!(
                    "provenance hash mismatch: model {} vs problem {h}; the model was trained for a different local operator",
                    file.provenance_hash
                ));
            }
        }
        let model = SurrogateModel::new(nets, file.train, file.provenance_hash).map_err(|e| malformed(e.to_string()))?;
        Ok((model, warnings))
    }
}

/// Surrogates by subdomain: one shared model for periodic coefficients, with
/// optional per-subdomain overrides.
#[derive(Debug, Clone, Default)]
pub struct SurrogateRegistry {
    shared: Option<SurrogateModel>,
    per_subdomain: BTreeMap<usize, SurrogateModel>,
}

impl SurrogateRegistry {
    pub fn shared(model: SurrogateModel) -> Self {
        SurrogateRegistry { shared: Some(model), per_subdomain: BTreeMap::new() }
    }

    pub fn insert(&mut self, subdomain: usize, model: SurrogateModel) {
        self.per_subdomain.insert(subdomain, model);
    }

    pub fn model_for(&self, subdomain: usize) -> Result<&SurrogateModel> {
        self.per_subdomain
            .get(&subdomain)
            .or(self.shared.as_ref())
            .ok_or_else(|| Error::InvalidInput(format!("no surrogate registered for subdomain {subdomain}")))
    }
}
