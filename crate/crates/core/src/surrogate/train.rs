//! Full-batch Adam training, one network per output component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::DtnSampleSet;
use super::loss::{self, midpoint_grid, monte_carlo_points, LossConfig, LossTerms, Quadrature};
use super::net::{Scaling, SurrogateNet};
use super::SurrogateModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// Adam step size at the first epoch.
    pub learning_rate: f64,
    /// Step size at the last epoch; geometric decay in between.
    pub final_learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden widths {:?}", self.hidden)));
        }
        let lr_ok = |v: f64| v.is_finite() && v > 0.0;
        if !lr_ok(self.learning_rate) || !lr_ok(self.final_learning_rate) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn step_size(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (self.final_learning_rate / self.learning_rate).powf(t)
    }
}

/// Loss of one component before and after training, on the same quadrature nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component: usize,
    pub initial: LossTerms,
    pub last: LossTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub components: Vec<ComponentReport>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains component `l`. The random stream is `(seed, l)`, so components are
/// independent of each other and of the training order.
pub fn train_component(dataset: &DtnSampleSet, l: usize, cfg: &TrainConfig) -> Result<(SurrogateNet, ComponentReport)> {
    let d = dataset.dim;
    let lc = &cfg.loss;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(l as u64);
    let targets = dataset.targets(l);
    let peak = targets.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scaling = Scaling { u_min: lc.u_min, u_max: lc.u_max, output_scale: if peak > 0.0 { peak } else { 1.0 } };
    let mut net = SurrogateNet::new(d, &cfg.hidden, l, scaling, &mut rng)?;
    let fixed = match lc.quadrature {
        Quadrature::Grid { per_axis } => midpoint_grid(d, per_axis, lc.u_min, lc.u_max),
        Quadrature::MonteCarlo { points } => monte_carlo_points(&mut rng, d, points, lc.u_min, lc.u_max),
    };
    let diverged = |step: usize, e: Error, loss: f64| match e {
        Error::NonFinite(_) => Error::TrainingDiverged { step, loss },
        other => other,
    };
    let (initial, _) = loss::loss(&net, &targets, lc, &fixed, false).map_err(|e| diverged(0, e, f64::NAN))?;
    let mut adam = Adam::new(net.n_params());
    for epoch in 0..cfg.epochs {
        let resampled;
        let mon = match lc.quadrature {
            Quadrature::Grid { .. } => &fixed,
            Quadrature::MonteCarlo { points } => {
                resampled = monte_carlo_points(&mut rng, d, points, lc.u_min, lc.u_max);
                &resampled
            }
        };
        let (terms, grad) = loss::loss(&net, &targets, lc, mon, true).map_err(|e| diverged(epoch, e, f64::NAN))?;
        let grad = grad.expect("gradient requested");
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::TrainingDiverged { step: epoch, loss: terms.total });
        }
        adam.step(net.params_mut(), &grad, cfg.step_size(epoch));
    }
    let (last, _) = loss::loss(&net, &targets, lc, &fixed, false).map_err(|e| diverged(cfg.epochs, e, f64::NAN))?;
    Ok((net, ComponentReport { component: l, initial, last }))
}

/// Trains all `d` component networks.
pub fn train(dataset: &DtnSampleSet, cfg: &TrainConfig) -> Result<(SurrogateModel, TrainReport)> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    let mut nets = Vec::with_capacity(dataset.dim);
    let mut components = Vec::with_capacity(dataset.dim);
    for l in 0..dataset.dim {
        let (net, report) = train_component(dataset, l, cfg)?;
        nets.push(net);
        components.push(report);
    }
    let model = SurrogateModel::new(nets, cfg.clone(), dataset.meta.provenance_hash.clone())?;
    Ok((model, TrainReport { components }))
}
