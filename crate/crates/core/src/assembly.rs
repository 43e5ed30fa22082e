//! Linear FEM assembly on a meshed metric graph.
//!
//! Every segment of length h contributes the element matrices
//! `h/6 [[2,1],[1,2]]` (mass) and `1/h [[1,-1],[-1,1]]` (stiffness) to its
//! two nodes. Lumping replaces the element mass by its row sums, `h/2` per
//! node. Stiffness is never lumped.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{SparseSym, SparseSymBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    Lumped,
    Consistent,
}

impl fmt::Display for MassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MassMode::Lumped => write!(f, "lumped"),
            MassMode::Consistent => write!(f, "consistent"),
        }
    }
}

impl FromStr for MassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lumped" => Ok(MassMode::Lumped),
            "consistent" => Ok(MassMode::Consistent),
            other => Err(Error::InvalidParameter(format!(
                "unknown mass mode `{other}` (expected lumped or consistent)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MassMatrix {
    Lumped(Vec<f64>),
    Consistent(SparseSym),
}

impl MassMatrix {
    pub fn mode(&self) -> MassMode {
        match self {
            MassMatrix::Lumped(_) => MassMode::Lumped,
            MassMatrix::Consistent(_) => MassMode::Consistent,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MassMatrix::Lumped(d) => d.len(),
            MassMatrix::Consistent(m) => m.n(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MassMatrix::Lumped(d) => d.iter().zip(x).map(|(m, v)| m * v).collect(),
            MassMatrix::Consistent(m) => m.matvec(x),
        }
    }

    /// x^T M x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        match self {
            MassMatrix::Lumped(d) => d.iter().zip(x).map(|(m, v)| m * v * v).sum(),
            MassMatrix::Consistent(m) => m.quadratic_form(x),
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        match self {
            MassMatrix::Lumped(d) => d.clone(),
            MassMatrix::Consistent(m) => m.diag(),
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        match self {
            MassMatrix::Lumped(d) => {
                nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d))
            }
            MassMatrix::Consistent(m) => m.to_dense(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StiffnessMatrix(pub SparseSym);

impl StiffnessMatrix {
    pub fn dim(&self) -> usize {
        self.0.n()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.0.matvec(x)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        self.0.to_dense()
    }

    pub fn as_sparse(&self) -> &SparseSym {
        &self.0
    }
}

/// Node pair of segment s on edge e, in global indices.
fn segment_nodes(mesh: &Mesh, e: usize, s: usize) -> (usize, usize) {
    let n = mesh.edge(e).segments;
    let g = mesh.graph().edge(e);
    let left = if s == 0 {
        mesh.vertex_node(g.source)
    } else {
        mesh.interior_node(e, s)
    };
    let right = if s == n - 1 {
        mesh.vertex_node(g.target)
    } else {
        mesh.interior_node(e, s + 1)
    };
    (left, right)
}

pub fn assemble_mass(mesh: &Mesh, mode: MassMode) -> MassMatrix {
    let n = mesh.num_nodes();
    match mode {
        MassMode::Lumped => {
            let mut diag = vec![0.0; n];
            for e in 0..mesh.edges().len() {
                let h = mesh.edge(e).spacing;
                for s in 0..mesh.edge(e).segments {
                    let (a, b) = segment_nodes(mesh, e, s);
                    diag[a] += h / 2.0;
                    diag[b] += h / 2.0;
                }
            }
            MassMatrix::Lumped(diag)
        }
        MassMode::Consistent => {
            let mut b = SparseSymBuilder::new(n);
            for e in 0..mesh.edges().len() {
                let h = mesh.edge(e).spacing;
                for s in 0..mesh.edge(e).segments {
                    let (i, j) = segment_nodes(mesh, e, s);
                    b.add_diag(i, h / 3.0);
                    b.add_diag(j, h / 3.0);
                    b.add_sym(i, j, h / 6.0);
                }
            }
            MassMatrix::Consistent(b.build())
        }
    }
}

pub fn assemble_stiffness(mesh: &Mesh) -> StiffnessMatrix {
    let n = mesh.num_nodes();
    let mut b = SparseSymBuilder::new(n);
    for e in 0..mesh.edges().len() {
        let h = mesh.edge(e).spacing;
        for s in 0..mesh.edge(e).segments {
            let (i, j) = segment_nodes(mesh, e, s);
            b.add_diag(i, 1.0 / h);
            b.add_diag(j, 1.0 / h);
            b.add_sym(i, j, -1.0 / h);
        }
    }
    StiffnessMatrix(b.build())
}

/// Tridiagonal blocks of one edge's contribution to
/// `A = c_id * M + c_op * (kappa^2 * M + G)`, split into the interior block
/// A_II, the interior/vertex couplings A_GammaI, and this edge's share of
/// the vertex block A_GammaGamma.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOperatorBlocks {
    pub edge: usize,
    /// Interior diagonal of A_II, length n_e - 1.
    pub diag: Vec<f64>,
    /// Interior off-diagonal of A_II (symmetric), length max(n_e - 2, 0).
    pub off: Vec<f64>,
    /// Coupling between the source vertex and the first interior node;
    /// zero when the edge has no interior nodes.
    pub coupling_left: f64,
    /// Coupling between the last interior node and the target vertex.
    pub coupling_right: f64,
    /// Edge share of the vertex-block diagonal at the source vertex.
    pub gamma_left: f64,
    /// Edge share of the vertex-block diagonal at the target vertex.
    pub gamma_right: f64,
    /// Direct vertex-vertex coupling; nonzero only for single-segment edges.
    pub gamma_off: f64,
}

pub fn edge_blocks(
    mesh: &Mesh,
    mode: MassMode,
    kappa: f64,
    c_id: f64,
    c_op: f64,
    e: usize,
) -> EdgeOperatorBlocks {
    let n = mesh.edge(e).segments;
    let h = mesh.edge(e).spacing;
    // Mass carries both the identity weight and the kappa^2 shift.
    let s = c_id + kappa * kappa * c_op;
    let (m_int_diag, m_vertex, m_off) = match mode {
        MassMode::Lumped => (h, h / 2.0, 0.0),
        MassMode::Consistent => (2.0 * (h / 3.0), h / 3.0, h / 6.0),
    };
    let gamma = s * m_vertex + c_op / h;
    if n == 1 {
        return EdgeOperatorBlocks {
            edge: e,
            diag: Vec::new(),
            off: Vec::new(),
            coupling_left: 0.0,
            coupling_right: 0.0,
            gamma_left: gamma,
            gamma_right: gamma,
            gamma_off: s * m_off - c_op / h,
        };
    }
    let coupling = s * m_off - c_op / h;
    EdgeOperatorBlocks {
        edge: e,
        diag: vec![s * m_int_diag + 2.0 * (c_op / h); n - 1],
        off: vec![coupling; n - 2],
        coupling_left: coupling,
        coupling_right: coupling,
        gamma_left: gamma,
        gamma_right: gamma,
        gamma_off: 0.0,
    }
}
