//! Non-overlapping domain decomposition for one shifted resolvent solve
//! `A u = W` with `A = c_id * M_w + c_op * (kappa^2 M_w + G)`.
//!
//! Every edge is a subdomain and every topological vertex an interface
//! unknown. Interior blocks are tridiagonal, so eliminating them gives the
//! Schur system `S u_Gamma = g_Gamma` on the vertices, with
//! `S = sum_e (A_GG^e - A_GI^e (A_II^e)^-1 A_IG^e)`. S is applied
//! matrix-free through cached Thomas factorizations; the preconditioner
//! solves one local Neumann problem per edge, scaled by inverse vertex
//! degrees on the way in and out. Per step this costs exactly two
//! factorizations per edge (interior and full-edge), independent of the
//! iteration count.

use crate::assembly::{edge_blocks, MassMode};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// LU factors of a tridiagonal matrix: unit lower bidiagonal (multipliers)
/// and upper bidiagonal (modified diagonal plus the original superdiagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct ThomasFactorization {
    diag: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

pub fn thomas_factorize(diag: &[f64], lower: &[f64], upper: &[f64]) -> Result<ThomasFactorization> {
    let n = diag.len();
    if lower.len() != n.saturating_sub(1) {
        return Err(Error::DimensionMismatch {
            expected: n.saturating_sub(1),
            actual: lower.len(),
        });
    }
    if upper.len() != lower.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            actual: upper.len(),
        });
    }
    let mut dm = Vec::with_capacity(n);
    let mut lm = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        let d = if i == 0 {
            diag[0]
        } else {
            let l = lower[i - 1] / dm[i - 1];
            lm.push(l);
            diag[i] - l * upper[i - 1]
        };
        if d == 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: i, pivot: d });
        }
        dm.push(d);
    }
    Ok(ThomasFactorization {
        diag: dm,
        lower: lm,
        upper: upper.to_vec(),
    })
}

impl ThomasFactorization {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn modified_diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.lower
    }

    /// Forward elimination then back substitution, overwriting `b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.diag.len();
        debug_assert_eq!(b.len(), n);
        for i in 1..n {
            b[i] -= self.lower[i - 1] * b[i - 1];
        }
        if n > 0 {
            b[n - 1] /= self.diag[n - 1];
            for i in (0..n - 1).rev() {
                b[i] = (b[i] - self.upper[i] * b[i + 1]) / self.diag[i];
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

struct EdgeSolver {
    source: usize,
    target: usize,
    interior_offset: usize,
    n_interior: usize,
    coupling_left: f64,
    coupling_right: f64,
    gamma_left: f64,
    gamma_right: f64,
    gamma_off: f64,
    interior: ThomasFactorization,
    /// Factorization of the full edge permuted to [source, interior..,
    /// target]. Absent only if that local matrix was singular, which valid
    /// quadrature coefficients (c_id > 0) cannot produce.
    neumann: Option<ThomasFactorization>,
}

/// Matrix-free Schur system for one quadrature step: per-edge couplings,
/// vertex-block shares, cached factorizations, and the inverse degrees used
/// by the preconditioner.
pub struct SchurSystem {
    num_vertices: usize,
    total_interior: usize,
    inv_degree: Vec<f64>,
    edges: Vec<EdgeSolver>,
    max_interior: usize,
    factorization_count: usize,
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub u_gamma: Vec<f64>,
    pub iterations: usize,
    /// Achieved relative residual.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct StepSolution {
    /// Full nodal solution in mesh ordering.
    pub values: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_PCG_TOL: f64 = 1e-10;

/// Default iteration cap: the Schur system has one unknown per vertex.
pub fn default_max_iter(num_vertices: usize) -> usize {
    num_vertices + 10
}

impl SchurSystem {
    pub fn build(mesh: &Mesh, mode: MassMode, kappa: f64, c_id: f64, c_op: f64) -> Result<Self> {
        let degrees = mesh.graph().degrees();
        let inv_degree: Vec<f64> = degrees.as_slice().iter().map(|&d| 1.0 / d as f64).collect();
        let mut edges = Vec::with_capacity(mesh.graph().num_edges());
        let mut factorization_count = 0usize;
        let mut max_interior = 0usize;
        for e in 0..mesh.graph().num_edges() {
            let b = edge_blocks(mesh, mode, kappa, c_id, c_op, e);
            let interior = thomas_factorize(&b.diag, &b.off, &b.off)?;
            factorization_count += 1;
            let n = b.diag.len();
            max_interior = max_interior.max(n);
            let mut full_diag = Vec::with_capacity(n + 2);
            full_diag.push(b.gamma_left);
            full_diag.extend_from_slice(&b.diag);
            full_diag.push(b.gamma_right);
            let mut full_off = Vec::with_capacity(n + 1);
            if n == 0 {
                full_off.push(b.gamma_off);
            } else {
                full_off.push(b.coupling_left);
                full_off.extend_from_slice(&b.off);
                full_off.push(b.coupling_right);
            }
            let neumann = match thomas_factorize(&full_diag, &full_off, &full_off) {
                Ok(f) => {
                    factorization_count += 1;
                    Some(f)
                }
                Err(_) => None,
            };
            let ge = mesh.graph().edge(e);
            edges.push(EdgeSolver {
                source: ge.source,
                target: ge.target,
                interior_offset: mesh.edge(e).interior_offset,
                n_interior: n,
                coupling_left: b.coupling_left,
                coupling_right: b.coupling_right,
                gamma_left: b.gamma_left,
                gamma_right: b.gamma_right,
                gamma_off: b.gamma_off,
                interior,
                neumann,
            });
        }
        Ok(SchurSystem {
            num_vertices: mesh.graph().num_vertices(),
            total_interior: mesh.total_interior(),
            inv_degree,
            edges,
            max_interior,
            factorization_count,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_nodes(&self) -> usize {
        self.total_interior + self.num_vertices
    }

    /// Thomas factorizations performed while building this system. Applying
    /// the operator, the preconditioner, or PCG never adds to it.
    pub fn factorization_count(&self) -> usize {
        self.factorization_count
    }

    /// Condensed right-hand side `g = W_Gamma - sum_e A_GI (A_II)^-1 W_I`.
    /// The vertex noise enters once, globally; edges contribute only their
    /// interior corrections.
    pub fn condense(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes(),
                actual: w.len(),
            });
        }
        let mut g = w[self.total_interior..].to_vec();
        let mut scratch = Vec::with_capacity(self.max_interior);
        for es in &self.edges {
            let n = es.n_interior;
            if n == 0 {
                continue;
            }
            scratch.clear();
            scratch.extend_from_slice(&w[es.interior_offset..es.interior_offset + n]);
            es.interior.solve_in_place(&mut scratch);
            g[es.source] -= es.coupling_left * scratch[0];
            g[es.target] -= es.coupling_right * scratch[n - 1];
        }
        Ok(g)
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        out.fill(0.0);
        for es in &self.edges {
            let (ul, ur) = (u[es.source], u[es.target]);
            if es.n_interior == 0 {
                out[es.source] += es.gamma_left * ul + es.gamma_off * ur;
                out[es.target] += es.gamma_off * ul + es.gamma_right * ur;
            } else {
                let n = es.n_interior;
                scratch.clear();
                scratch.resize(n, 0.0);
                scratch[0] += es.coupling_left * ul;
                scratch[n - 1] += es.coupling_right * ur;
                es.interior.solve_in_place(scratch);
                out[es.source] += es.gamma_left * ul - es.coupling_left * scratch[0];
                out[es.target] += es.gamma_right * ur - es.coupling_right * scratch[n - 1];
            }
        }
    }

    /// S u_Gamma without materializing S.
    pub fn schur_apply(&self, u_gamma: &[f64]) -> Result<Vec<f64>> {
        if u_gamma.len() != self.num_vertices {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices,
                actual: u_gamma.len(),
            });
        }
        let mut out = vec![0.0; self.num_vertices];
        let mut scratch = Vec::with_capacity(self.max_interior);
        self.apply_into(u_gamma, &mut out, &mut scratch);
        Ok(out)
    }

    fn precondition_into(&self, r: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) -> Result<()> {
        out.fill(0.0);
        for es in &self.edges {
            let fact = es.neumann.as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "edge {}-{}: local Neumann matrix is singular, preconditioner unavailable",
                    es.source, es.target
                ))
            })?;
            let nfull = es.n_interior + 2;
            scratch.clear();
            scratch.resize(nfull, 0.0);
            scratch[0] = r[es.source] * self.inv_degree[es.source];
            scratch[nfull - 1] = r[es.target] * self.inv_degree[es.target];
            fact.solve_in_place(scratch);
            out[es.source] += scratch[0] * self.inv_degree[es.source];
            out[es.target] += scratch[nfull - 1] * self.inv_degree[es.target];
        }
        Ok(())
    }

    /// Neumann-Neumann preconditioner: degree-scaled residual in, one local
    /// Neumann solve per edge, degree-scaled boundary displacement out.
    pub fn neumann_precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.num_vertices {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices,
                actual: r.len(),
            });
        }
        let mut out = vec![0.0; self.num_vertices];
        let mut scratch = Vec::with_capacity(self.max_interior + 2);
        self.precondition_into(r, &mut out, &mut scratch)?;
        Ok(out)
    }

    /// Preconditioned conjugate gradients on (S, g) from a zero initial
    /// guess, stopping at ||r|| <= tol * ||g||.
    pub fn pcg(&self, g: &[f64], tol: f64, max_iter: usize) -> Result<PcgOutcome> {
        let nv = self.num_vertices;
        if g.len() != nv {
            return Err(Error::DimensionMismatch {
                expected: nv,
                actual: g.len(),
            });
        }
        let gnorm = norm2(g);
        if gnorm == 0.0 {
            return Ok(PcgOutcome {
                u_gamma: vec![0.0; nv],
                iterations: 0,
                residual: 0.0,
            });
        }
        // Iterate on g / ||g|| and rescale at the end. Condensed right-hand
        // sides can sit hundreds of orders of magnitude below 1 (a unit
        // vector deep inside a stiff edge condenses to ~1e-160), where the
        // inner products below would underflow to 0/0.
        let mut scratch = Vec::with_capacity(self.max_interior + 2);
        let mut x = vec![0.0; nv];
        let mut r: Vec<f64> = g.iter().map(|v| v / gnorm).collect();
        let mut z = vec![0.0; nv];
        self.precondition_into(&r, &mut z, &mut scratch)?;
        let mut p = z.clone();
        let mut q = vec![0.0; nv];
        let mut rz = dot(&r, &z);
        let mut rel = 1.0;
        for it in 1..=max_iter {
            self.apply_into(&p, &mut q, &mut scratch);
            let alpha = rz / dot(&p, &q);
            for i in 0..nv {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            rel = norm2(&r);
            if rel <= tol {
                for v in &mut x {
                    *v *= gnorm;
                }
                return Ok(PcgOutcome {
                    u_gamma: x,
                    iterations: it,
                    residual: rel,
                });
            }
            self.precondition_into(&r, &mut z, &mut scratch)?;
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            for i in 0..nv {
                p[i] = z[i] + beta * p[i];
            }
            rz = rz_next;
        }
        Err(Error::NoConvergence {
            max_iter,
            residual: rel,
        })
    }

    /// Back substitution for the interiors: per edge solve
    /// `A_II u_I = W_I - A_IG u_Gamma`, then place the blocks and the vertex
    /// values into one mesh-ordered vector.
    pub fn recover_interior(&self, u_gamma: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if u_gamma.len() != self.num_vertices {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices,
                actual: u_gamma.len(),
            });
        }
        if w.len() != self.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes(),
                actual: w.len(),
            });
        }
        let mut out = vec![0.0; self.num_nodes()];
        out[self.total_interior..].copy_from_slice(u_gamma);
        let mut scratch = Vec::with_capacity(self.max_interior);
        for es in &self.edges {
            let n = es.n_interior;
            if n == 0 {
                continue;
            }
            scratch.clear();
            scratch.extend_from_slice(&w[es.interior_offset..es.interior_offset + n]);
            scratch[0] -= es.coupling_left * u_gamma[es.source];
            scratch[n - 1] -= es.coupling_right * u_gamma[es.target];
            es.interior.solve_in_place(&mut scratch);
            out[es.interior_offset..es.interior_offset + n].copy_from_slice(&scratch);
        }
        Ok(out)
    }

    /// Full step solve: condense, PCG on the Schur system, recover.
    pub fn solve(&self, w: &[f64], tol: f64, max_iter: usize) -> Result<StepSolution> {
        let g = self.condense(w)?;
        let outcome = self.pcg(&g, tol, max_iter)?;
        let values = self.recover_interior(&outcome.u_gamma, w)?;
        Ok(StepSolution {
            values,
            iterations: outcome.iterations,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
