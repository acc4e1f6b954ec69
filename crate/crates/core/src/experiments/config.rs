//! Case presets and the flat `key = value` configuration format.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dtn::LocalSolverConfig;
use crate::error::{Error, Result};
use crate::fem::{BoundaryData, Coefficient, Flux, Problem};
use crate::mesh::{build_coarse_basis, build_fine_mesh, build_partition, CoarseBasis, CoarsePartition, FineMesh};
use crate::newton::NewtonConfig;
use crate::surrogate::{sample_grid, LossConfig, Monotonicity, Quadrature, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Pme1d,
    Plap1d,
    Pme2d,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Pme1d, Case::Plap1d, Case::Pme2d];

    pub fn dim(self) -> usize {
        match self {
            Case::Pme1d | Case::Plap1d => 1,
            Case::Pme2d => 2,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Pme1d => "pme1d",
            Case::Plap1d => "plap1d",
            Case::Pme2d => "pme2d",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pme1d" => Ok(Case::Pme1d),
            "plap1d" => Ok(Case::Plap1d),
            "pme2d" => Ok(Case::Pme2d),
            other => Err(Error::Config(format!("unknown case '{other}' (expected pme1d, plap1d or pme2d)"))),
        }
    }
}

/// Everything a case run depends on. Start from [`CaseConfig::preset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: Case,
    pub n_sub: usize,
    pub cells_per_subdomain: usize,
    pub a: f64,
    /// `p` of the porous-medium potential `u^p` or of the flux `|∇u|^p ∇u`.
    pub exponent: f64,
    /// 1D: the values of `u(0)` (with `u(1) = 0`), one solve each.
    /// 2D: the `u_max` of the ramp data `max(u_max (x + y - 1), 0)`.
    pub boundary_values: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    /// Sampling points per axis; `n_s = ns^d` (plus centers if enabled).
    pub ns: usize,
    pub with_centers: bool,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub seed: u64,
    pub c0: f64,
    pub c1: f64,
    pub c_mon: f64,
    /// 1D monotonicity grid cells per axis.
    pub mon_grid: usize,
    /// 2D Monte Carlo points per step.
    pub mc_points: usize,
    pub local_tol: f64,
    pub outer_tol: f64,
    pub surrogate_tol: f64,
    /// Relative to the residual norm at the zero initial guess.
    pub reference_tol: f64,
    pub max_iter: usize,
}

/// Partition, fine mesh and coarse basis of a case.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub partition: CoarsePartition,
    pub mesh: FineMesh,
    pub basis: CoarseBasis,
}

impl CaseConfig {
    pub fn preset(case: Case) -> Self {
        let base = CaseConfig {
            case,
            n_sub: 5,
            cells_per_subdomain: 40,
            a: 20.0,
            exponent: 4.0,
            boundary_values: vec![1.0, 2.0, 3.0, 4.0],
            u_min: 0.0,
            u_max: 4.0,
            ns: 3,
            with_centers: true,
            hidden: vec![64, 64],
            epochs: 20000,
            learning_rate: 1e-3,
            final_learning_rate: 1e-3,
            seed: 7,
            c0: 1.0,
            c1: 0.1,
            c_mon: 4.0,
            mon_grid: 40,
            mc_points: 200,
            local_tol: 1e-12,
            outer_tol: 1e-10,
            surrogate_tol: 1e-8,
            reference_tol: 1e-12,
            max_iter: 50,
        };
        match case {
            Case::Pme1d => base,
            Case::Plap1d => CaseConfig { a: 5.0, exponent: 2.0, ..base },
            Case::Pme2d => CaseConfig {
                cells_per_subdomain: 18,
                a: 1.0,
                boundary_values: vec![1.2],
                u_max: 1.2,
                with_centers: false,
                hidden: vec![20, 20],
                c_mon: 10.0,
                ..base
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.case.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_sub == 0 || self.cells_per_subdomain < 2 {
            return bad("need n_sub >= 1 and cells_per_subdomain >= 2");
        }
        if self.boundary_values.is_empty() || !self.boundary_values.iter().all(|v| v.is_finite()) {
            return bad("boundary_values must be a non-empty list of finite numbers");
        }
        if self.ns < 2 {
            return bad("ns must be at least 2");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        for (name, tol) in [
            ("local_tol", self.local_tol),
            ("outer_tol", self.outer_tol),
            ("surrogate_tol", self.surrogate_tol),
            ("reference_tol", self.reference_tol),
        ] {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.problem(self.boundary_values[0]).map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()
    }

    pub fn problem(&self, boundary_value: f64) -> Result<Problem> {
        let (coefficient, boundary) = match self.case {
            Case::Pme1d | Case::Plap1d => {
                (Coefficient::Layered1d, BoundaryData::Affine1d { left: boundary_value, right: 0.0 })
            }
            Case::Pme2d => (Coefficient::Checkerboard2d, BoundaryData::Ramp2d { u_max: boundary_value }),
        };
        let flux = match self.case {
            Case::Plap1d => Flux::PLaplace { p: self.exponent },
            _ => Flux::PorousMedia { p: self.exponent },
        };
        Problem::new(self.dim(), self.a, coefficient, flux, boundary)
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let partition = build_partition(self.dim(), self.n_sub)?;
        let mesh = build_fine_mesh(&partition, self.cells_per_subdomain)?;
        let basis = build_coarse_basis(&partition, &mesh)?;
        Ok(Geometry { partition, mesh, basis })
    }

    /// Number of coarse inputs of one local map.
    pub fn input_dim(&self) -> usize {
        1 << self.dim()
    }

    pub fn samples(&self) -> Result<Vec<Vec<f64>>> {
        sample_grid(self.input_dim(), self.ns, self.u_min, self.u_max, self.with_centers)
    }

    pub fn loss_config(&self) -> LossConfig {
        let (monotonicity, quadrature) = if self.dim() == 1 {
            (Monotonicity::FullSign, Quadrature::Grid { per_axis: self.mon_grid })
        } else {
            (Monotonicity::DiagonalOnly, Quadrature::MonteCarlo { points: self.mc_points })
        };
        LossConfig {
            c0: self.c0,
            c1: self.c1,
            c_mon: self.c_mon,
            monotonicity,
            quadrature,
            u_min: self.u_min,
            u_max: self.u_max,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            final_learning_rate: self.final_learning_rate,
            seed: self.seed,
            loss: self.loss_config(),
        }
    }

    pub fn local_config(&self) -> LocalSolverConfig {
        LocalSolverConfig::with_tol(self.local_tol)
    }

    pub fn newton(&self, tol: f64) -> NewtonConfig {
        NewtonConfig { tol, max_iter: self.max_iter, ..NewtonConfig::default() }
    }

    /// Sets one key; keys are the field names, lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("cannot parse '{v}' for {key}")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
        }
        let v = value.trim();
        match key.trim() {
            "case" => {
                let case: Case = v.parse()?;
                if case != self.case {
                    return Err(Error::Config(format!("'case = {case}' must come first or match the preset")));
                }
            }
            "n_sub" => self.n_sub = num(key, v)?,
            "cells_per_subdomain" => self.cells_per_subdomain = num(key, v)?,
            "a" => self.a = num(key, v)?,
            "exponent" => self.exponent = num(key, v)?,
            "boundary_values" => self.boundary_values = list(key, v)?,
            "u_min" => self.u_min = num(key, v)?,
            "u_max" => self.u_max = num(key, v)?,
            "ns" => self.ns = num(key, v)?,
            "with_centers" => self.with_centers = num(key, v)?,
            "hidden" => self.hidden = list(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "final_learning_rate" => self.final_learning_rate = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "c0" => self.c0 = num(key, v)?,
            "c1" => self.c1 = num(key, v)?,
            "c_mon" => self.c_mon = num(key, v)?,
            "loss" => {
                let w: Vec<f64> = list(key, v)?;
                if w.len() != 3 {
                    return Err(Error::Config(format!("loss needs three weights c0,c1,cmon, got '{v}'")));
                }
                (self.c0, self.c1, self.c_mon) = (w[0], w[1], w[2]);
            }
            "mon_grid" => self.mon_grid = num(key, v)?,
            "mc_points" => self.mc_points = num(key, v)?,
            "local_tol" => self.local_tol = num(key, v)?,
            "outer_tol" => self.outer_tol = num(key, v)?,
            "surrogate_tol" => self.surrogate_tol = num(key, v)?,
            "reference_tol" => self.reference_tol = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines (`#` starts a comment). The preset is taken
    /// from a `case` line, else from `default_case`.
    pub fn parse(text: &str, default_case: Option<Case>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let case = match pairs.iter().find(|(k, _)| k == "case") {
            Some((_, v)) => v.parse()?,
            None => default_case.ok_or_else(|| Error::Config("no case given".into()))?,
        };
        let mut cfg = CaseConfig::preset(case);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration in the format read by [`CaseConfig::parse`].
    pub fn to_kv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "case = {}", self.case);
        let _ = writeln!(s, "n_sub = {}", self.n_sub);
        let _ = writeln!(s, "cells_per_subdomain = {}", self.cells_per_subdomain);
        let _ = writeln!(s, "a = {}", self.a);
        let _ = writeln!(s, "exponent = {}", self.exponent);
        let _ = writeln!(s, "boundary_values = {}", join(&self.boundary_values));
        let _ = writeln!(s, "u_min = {}", self.u_min);
        let _ = writeln!(s, "u_max = {}", self.u_max);
        let _ = writeln!(s, "ns = {}", self.ns);
        let _ = writeln!(s, "with_centers = {}", self.with_centers);
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "final_learning_rate = {}", self.final_learning_rate);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "loss = {}", join(&[self.c0, self.c1, self.c_mon]));
        let _ = writeln!(s, "mon_grid = {}", self.mon_grid);
        let _ = writeln!(s, "mc_points = {}", self.mc_points);
        let _ = writeln!(s, "local_tol = {:e}", self.local_tol);
        let _ = writeln!(s, "outer_tol = {:e}", self.outer_tol);
        let _ = writeln!(s, "surrogate_tol = {:e}", self.surrogate_tol);
        let _ = writeln!(s, "reference_tol = {:e}", self.reference_tol);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        s
    }
}
