//! Uniform 1D meshes over every edge of a metric graph.
//!
//! Edge e is split into `n_e = ceil(len_e / h)` segments of exact spacing
//! `h_e = len_e / n_e <= h`. Global node ordering: the interior nodes of
//! edge 0, then edge 1, ..., and finally the topological vertices. Interior
//! node j of an edge (j = 1..n_e-1) sits at local coordinate `j * h_e`
//! measured from the edge source.

use crate::error::{Error, Result};
use crate::graph::MetricGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMesh {
    /// Segment count n_e.
    pub segments: usize,
    /// Exact spacing h_e = len_e / n_e.
    pub spacing: f64,
    /// Global index of this edge's first interior node.
    pub interior_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    graph: MetricGraph,
    edges: Vec<EdgeMesh>,
    total_interior: usize,
    width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePosition {
    Interior { edge: usize, x: f64 },
    Vertex(usize),
}

impl Mesh {
    pub fn build(graph: &MetricGraph, h: f64) -> Mesh {
        assert!(h > 0.0 && h.is_finite(), "mesh width must be positive");
        let mut edges = Vec::with_capacity(graph.num_edges());
        let mut offset = 0usize;
        for e in graph.edges() {
            let segments = (e.length / h).ceil() as usize;
            let segments = segments.max(1);
            edges.push(EdgeMesh {
                segments,
                spacing: e.length / segments as f64,
                interior_offset: offset,
            });
            offset += segments - 1;
        }
        Mesh {
            graph: graph.clone(),
            edges,
            total_interior: offset,
            width: h,
        }
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    /// The width bound the mesh was built with; per-edge spacings never
    /// exceed it.
    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn edges(&self) -> &[EdgeMesh] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &EdgeMesh {
        &self.edges[e]
    }

    /// Interior nodes of edge e (n_e - 1 of them).
    pub fn num_interior(&self, e: usize) -> usize {
        self.edges[e].segments - 1
    }

    pub fn total_interior(&self) -> usize {
        self.total_interior
    }

    /// N = |V| + sum_e (n_e - 1).
    pub fn num_nodes(&self) -> usize {
        self.total_interior + self.graph.num_vertices()
    }

    /// Global index of vertex v.
    pub fn vertex_node(&self, v: usize) -> usize {
        self.total_interior + v
    }

    /// Global index of interior node j of edge e, j in 1..n_e-1 inclusive.
    pub fn interior_node(&self, e: usize, j: usize) -> usize {
        debug_assert!(j >= 1 && j < self.edges[e].segments);
        self.edges[e].interior_offset + j - 1
    }

    pub fn node_position(&self, index: usize) -> Result<NodePosition> {
        let n = self.num_nodes();
        if index >= n {
            return Err(Error::OutOfRange { index, size: n });
        }
        if index >= self.total_interior {
            return Ok(NodePosition::Vertex(index - self.total_interior));
        }
        // Interior offsets increase with the edge id; binary search for the
        // edge owning this index.
        let e = self
            .edges
            .partition_point(|em| em.interior_offset <= index)
            - 1;
        let j = index - self.edges[e].interior_offset + 1;
        Ok(NodePosition::Interior {
            edge: e,
            x: j as f64 * self.edges[e].spacing,
        })
    }
}

/// Linear interpolation from a coarse mesh to a nested fine mesh on the
/// same graph, stored by fine rows. Each row holds the hat-function weights
/// of the coarse nodes covering that fine node, so rows sum to one and the
/// rows of coincident nodes are identity rows.
#[derive(Debug, Clone)]
pub struct Prolongation {
    n_coarse: usize,
    n_fine: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Prolongation {
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| (self.col_idx[k], self.values[k]))
    }

    /// P x: interpolate coarse nodal values onto the fine mesh.
    pub fn apply(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.n_coarse {
            return Err(Error::DimensionMismatch {
                expected: self.n_coarse,
                actual: coarse.len(),
            });
        }
        let mut out = vec![0.0; self.n_fine];
        for i in 0..self.n_fine {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * coarse[self.col_idx[k]];
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// P^T x: restrict fine nodal values onto the coarse mesh.
    pub fn apply_transpose(&self, fine: &[f64]) -> Result<Vec<f64>> {
        if fine.len() != self.n_fine {
            return Err(Error::DimensionMismatch {
                expected: self.n_fine,
                actual: fine.len(),
            });
        }
        let mut out = vec![0.0; self.n_coarse];
        for i in 0..self.n_fine {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[k]] += self.values[k] * fine[i];
            }
        }
        Ok(out)
    }
}

/// Builds the prolongation from `coarse` to `fine`. The meshes must live on
/// the same graph and every fine segment count must be an integer multiple
/// of the coarse one.
pub fn prolongation(coarse: &Mesh, fine: &Mesh) -> Result<Prolongation> {
    if coarse.graph() != fine.graph() {
        return Err(Error::NotNested(
            "meshes are built on different graphs".into(),
        ));
    }
    for e in 0..coarse.edges.len() {
        let (nc, nf) = (coarse.edges[e].segments, fine.edges[e].segments);
        if nf % nc != 0 {
            return Err(Error::NotNested(format!(
                "edge {e}: fine segment count {nf} is not a multiple of coarse {nc}"
            )));
        }
    }
    let n_fine = fine.num_nodes();
    let mut row_ptr = Vec::with_capacity(n_fine + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    // Coarse node covering local index q on edge e, as a global coarse index.
    let coarse_node = |e: usize, q: usize| -> usize {
        let em = &coarse.edges[e];
        if q == 0 {
            coarse.vertex_node(coarse.graph.edge(e).source)
        } else if q == em.segments {
            coarse.vertex_node(coarse.graph.edge(e).target)
        } else {
            coarse.interior_node(e, q)
        }
    };
    for e in 0..fine.edges.len() {
        let ratio = fine.edges[e].segments / coarse.edges[e].segments;
        for j in 1..fine.edges[e].segments {
            let (q, rem) = (j / ratio, j % ratio);
            if rem == 0 {
                col_idx.push(coarse_node(e, q));
                values.push(1.0);
            } else {
                let t = rem as f64 / ratio as f64;
                col_idx.push(coarse_node(e, q));
                values.push(1.0 - t);
                col_idx.push(coarse_node(e, q + 1));
                values.push(t);
            }
            row_ptr.push(col_idx.len());
        }
    }
    for v in 0..fine.graph.num_vertices() {
        col_idx.push(coarse.vertex_node(v));
        values.push(1.0);
        row_ptr.push(col_idx.len());
    }
    Ok(Prolongation {
        n_coarse: coarse.num_nodes(),
        n_fine,
        row_ptr,
        col_idx,
        values,
    })
}
