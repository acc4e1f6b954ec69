//! Sampling of the training box and DtN datasets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::Targets;
use crate::dtn::{LocalDtn, LocalSolverConfig};
use crate::error::{Error, Result};
use crate::fem::Problem;
use crate::mesh::{CoarseBasis, FineMesh};

/// Tensor grid with `m` equally spaced points per axis in `[u_min, u_max]`,
/// first coordinate fastest; `with_centers` appends the `(m-1)^d` cell centers.
pub fn sample_grid(d: usize, m: usize, u_min: f64, u_max: f64, with_centers: bool) -> Result<Vec<Vec<f64>>> {
    if d == 0 || m < 2 || !(u_max > u_min) {
        return Err(Error::InvalidInput(format!("sample grid needs d >= 1, m >= 2, u_max > u_min (d={d}, m={m})")));
    }
    let h = (u_max - u_min) / (m - 1) as f64;
    let tensor = |n: usize, offset: f64| -> Vec<Vec<f64>> {
        (0..n.pow(d as u32))
            .map(|mut k| {
                (0..d)
                    .map(|_| {
                        let c = k % n;
                        k /= n;
                        if offset == 0.0 && c == m - 1 {
                            u_max
                        } else {
                            u_min + (c as f64 + offset) * h
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let mut points = tensor(m, 0.0);
    if with_centers {
        points.extend(tensor(m - 1, 0.5));
    }
    Ok(points)
}

/// Identifies the local operator a dataset was sampled from. The Dirichlet
/// data on `∂Ω` does not enter the local maps and is left out.
pub fn provenance_hash(problem: &Problem, mesh: &FineMesh, subdomain: usize, local_tol: f64) -> String {
    let key = serde_json::json!({
        "dim": problem.dim,
        "a": problem.a,
        "coefficient": problem.coefficient,
        "flux": problem.flux,
        "n_sub_per_axis": mesh.n_sub_per_axis(),
        "cells_per_subdomain": mesh.cells_per_subdomain(),
        "subdomain": subdomain,
        "local_tol": local_tol,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: Problem,
    pub n_sub_per_axis: usize,
    pub cells_per_subdomain: usize,
    pub subdomain: usize,
    pub local_tol: f64,
    pub provenance_hash: String,
}

/// Samples `u^s` with `DtN_{H,i}(u^s)` and `DtN'_{H,i}(u^s)` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DtnSampleSet {
    pub dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub jacobians: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl DtnSampleSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let n = self.inputs.len();
        if d == 0 || self.values.len() != n || self.jacobians.len() != n {
            return Err(Error::InvalidInput("dataset counts are inconsistent".into()));
        }
        for s in 0..n {
            if self.inputs[s].len() != d || self.values[s].len() != d || self.jacobians[s].len() != d * d {
                return Err(Error::InvalidInput(format!("sample {s} has wrong dimensions")));
            }
            let all = self.inputs[s].iter().chain(&self.values[s]).chain(&self.jacobians[s]);
            if !all.into_iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
        }
        Ok(())
    }

    /// Training targets of component `l`.
    pub fn targets(&self, l: usize) -> Targets {
        let d = self.dim;
        Targets {
            inputs: self.inputs.clone(),
            values: self.values.iter().map(|v| v[l]).collect(),
            gradients: self.jacobians.iter().map(|j| j[l * d..(l + 1) * d].to_vec()).collect(),
        }
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    /// CSV `u_1..u_d, f_1..f_d, J_11..J_dd` plus `<path>.meta.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let d = self.dim;
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=d).map(|k| format!("u_{k}")).collect();
        header.extend((1..=d).map(|k| format!("f_{k}")));
        for r in 1..=d {
            header.extend((1..=d).map(|c| format!("J_{r}{c}")));
        }
        w.write_record(&header)?;
        for s in 0..self.len() {
            let row = self.inputs[s].iter().chain(&self.values[s]).chain(&self.jacobians[s]).map(|v| format!("{v:e}"));
            w.write_record(row)?;
        }
        w.flush()?;
        std::fs::write(Self::sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed { path: path.display().to_string(), reason };
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(Self::sidecar(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len();
        let d = (((width + 1) as f64).sqrt().round() as usize).saturating_sub(1);
        if d == 0 || d * d + 2 * d != width {
            return Err(malformed(format!("{width} columns do not match any input dimension")));
        }
        let mut set = DtnSampleSet { dim: d, inputs: vec![], values: vec![], jacobians: vec![], meta };
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| malformed(format!("row {}: {e}", line + 1)))?;
            if row.len() != width {
                return Err(malformed(format!("row {} has {} fields", line + 1, row.len())));
            }
            set.inputs.push(row[..d].to_vec());
            set.values.push(row[d..2 * d].to_vec());
            set.jacobians.push(row[2 * d..].to_vec());
        }
        set.validate().map_err(|e| malformed(e.to_string()))?;
        Ok(set)
    }
}

/// Evaluates `DtN_{H,i}` and its Jacobian at every sample. Each local solve
/// starts from the previous converged interior state.
pub fn generate_dataset(
    problem: &Problem,
    mesh: &FineMesh,
    basis: &CoarseBasis,
    i: usize,
    samples: &[Vec<f64>],
    cfg: &LocalSolverConfig,
) -> Result<DtnSampleSet> {
    cfg.validate()?;
    let local = LocalDtn::new(problem, mesh, i)?;
    let phi = basis.local(i);
    let d = phi.ncols();
    let meta = DatasetMeta {
        problem: *problem,
        n_sub_per_axis: mesh.n_sub_per_axis(),
        cells_per_subdomain: mesh.cells_per_subdomain(),
        subdomain: i,
        local_tol: cfg.newton.tol,
        provenance_hash: provenance_hash(problem, mesh, i, cfg.newton.tol),
    };
    let mut set = DtnSampleSet { dim: d, inputs: vec![], values: vec![], jacobians: vec![], meta };
    let mut warm: Option<Vec<f64>> = None;
    for (index, v) in samples.iter().enumerate() {
        let attach = |e: Error| Error::Sample { index, input: v.clone(), source: Box::new(e) };
        let r = local.dtn_coarse(phi, v, cfg, true, warm.as_deref()).map_err(attach)?;
        let jac = r.jacobian.expect("Jacobian requested");
        set.inputs.push(v.clone());
        set.values.push(r.flux);
        set.jacobians.push(jac.transpose().as_slice().to_vec());
        warm = Some(r.interior_state);
    }
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_corners_and_centers() {
        let g = sample_grid(2, 2, 0.0, 4.0, false).unwrap();
        assert_eq!(g, vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0], vec![4.0, 4.0]]);
        let g = sample_grid(2, 2, 0.0, 4.0, true).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], vec![2.0, 2.0]);
        assert_eq!(sample_grid(4, 3, 0.0, 1.2, false).unwrap().len(), 81);
        assert_eq!(sample_grid(2, 3, 0.0, 4.0, true).unwrap().len(), 13);
        assert!(sample_grid(2, 1, 0.0, 1.0, false).is_err());
    }
}
