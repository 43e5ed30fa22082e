//! White-noise loads W = R xi with Cov(W) = M_w, where R R^T = M_w.
//!
//! Lumped mass factors entrywise in linear time; consistent mass goes
//! through the natural-order sparse Cholesky, whose fill-in on
//! vertex-coupled meshes is the cost the lumped path avoids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::assembly::{MassMatrix, MassMode};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Prolongation};
use crate::sparse::SparseCholesky;

#[derive(Debug, Clone)]
pub enum NoiseFactor {
    Lumped(Vec<f64>),
    Consistent(SparseCholesky),
}

impl NoiseFactor {
    pub fn mode(&self) -> MassMode {
        match self {
            NoiseFactor::Lumped(_) => MassMode::Lumped,
            NoiseFactor::Consistent(_) => MassMode::Consistent,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseFactor::Lumped(d) => d.len(),
            NoiseFactor::Consistent(l) => l.n(),
        }
    }

    /// R xi.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            NoiseFactor::Lumped(d) => d.iter().zip(xi).map(|(r, x)| r * x).collect(),
            NoiseFactor::Consistent(l) => l.apply(xi),
        }
    }
}

/// Factors M_w = R R^T.
pub fn factor(mass: &MassMatrix) -> Result<NoiseFactor> {
    match mass {
        MassMatrix::Lumped(diag) => {
            for (i, &d) in diag.iter().enumerate() {
                if !(d > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: d });
                }
            }
            Ok(NoiseFactor::Lumped(diag.iter().map(|d| d.sqrt()).collect()))
        }
        MassMatrix::Consistent(m) => Ok(NoiseFactor::Consistent(SparseCholesky::factor(m)?)),
    }
}

/// A white-noise realization in global mesh ordering: the interior blocks
/// edge by edge, then the vertex block.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    values: Vec<f64>,
}

impl NoiseVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// W_I restricted to edge e.
    pub fn interior_block<'a>(&'a self, mesh: &Mesh, e: usize) -> &'a [f64] {
        let off = mesh.edge(e).interior_offset;
        &self.values[off..off + mesh.num_interior(e)]
    }

    /// W_Gamma, one entry per vertex.
    pub fn vertex_block<'a>(&'a self, mesh: &Mesh) -> &'a [f64] {
        &self.values[mesh.total_interior()..]
    }
}

/// Draws W = R xi with xi standard normal from a ChaCha stream seeded by
/// `seed`. Deterministic per seed within one build.
pub fn sample(factor: &NoiseFactor, seed: u64) -> NoiseVector {
    sample_with_rng(factor, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_with_rng<R: Rng + ?Sized>(factor: &NoiseFactor, rng: &mut R) -> NoiseVector {
    let xi: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
    NoiseVector {
        values: factor.apply(&xi),
    }
}

/// Restriction of fine white noise onto a coarse nested mesh: P^T W.
pub fn project_noise(p: &Prolongation, fine: &NoiseVector) -> Result<NoiseVector> {
    Ok(NoiseVector {
        values: p.apply_transpose(fine.as_slice())?,
    })
}
