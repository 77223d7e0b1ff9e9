//! Block-sparsity pattern of the structured feedback set and gain matrices
//! conforming to it.

use nalgebra::DMatrix;

use crate::dynamics::linearize::StateLayout;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Boolean sparsity pattern for a gain of shape 3N_f × (2N_g + 4N_f). The
/// (j, ℓ) block is all-true iff GFM j and node ℓ share a communication link;
/// a GFM is always linked to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GainMask {
    pub m: DMatrix<bool>,
    pub layout: StateLayout,
    /// Communication edges (node ids, SG nodes first) the mask was built from.
    pub edges: Vec<(usize, usize)>,
}

impl GainMask {
    /// All-entries-free mask of arbitrary shape, for unstructured problems
    /// and toy test systems.
    pub fn full(nrows: usize, ncols: usize) -> Self {
        GainMask {
            m: DMatrix::from_element(nrows, ncols, true),
            layout: StateLayout { n_sg: 0, n_gfm: 0 },
            edges: Vec::new(),
        }
    }

    /// Mask from an explicit boolean pattern.
    pub fn from_pattern(m: DMatrix<bool>) -> Self {
        GainMask { m, layout: StateLayout { n_sg: 0, n_gfm: 0 }, edges: Vec::new() }
    }

    pub fn n_free(&self) -> usize {
        self.m.iter().filter(|b| **b).count()
    }

    /// Row indices of gain entries actuating GFM `j`: one row per input
    /// channel [ΔV^s, ΔP^s, ΔQ^s].
    fn rows_of_gfm(layout: &StateLayout, j: usize) -> [usize; 3] {
        [layout.u_vset(j), layout.u_pset(j), layout.u_qset(j)]
    }

    /// State columns observed from node `l` (2 for an SG, 4 for a GFM).
    fn cols_of_node(layout: &StateLayout, l: usize) -> Vec<usize> {
        if l < layout.n_sg {
            vec![layout.delta_sg(l), layout.omega_sg(l)]
        } else {
            let j = l - layout.n_sg;
            vec![layout.delta_gfm(j), layout.omega_gfm(j), layout.verr_gfm(j), layout.v_gfm(j)]
        }
    }
}

/// Build the mask from an undirected communication edge list over node ids
/// 0..N_g+N_f (SG nodes first). Self links for every GFM are implicit.
pub fn build_mask(edges: &[(usize, usize)], n_sg: usize, n_gfm: usize) -> Result<GainMask> {
    let layout = StateLayout { n_sg, n_gfm };
    let n_nodes = n_sg + n_gfm;
    for &(a, b) in edges {
        if a >= n_nodes || b >= n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "communication edge ({a},{b}) references a node outside 0..{n_nodes}"
            )));
        }
    }
    let mut m = DMatrix::from_element(layout.input_dim(), layout.state_dim(), false);
    let mut connected = vec![vec![false; n_nodes]; n_nodes];
    for &(a, b) in edges {
        connected[a][b] = true;
        connected[b][a] = true;
    }
    for l in 0..n_nodes {
        connected[l][l] = true;
    }
    for j in 0..n_gfm {
        let node_j = n_sg + j;
        for l in 0..n_nodes {
            if !connected[node_j][l] {
                continue;
            }
            for &r in &GainMask::rows_of_gfm(&layout, j) {
                for &c in &GainMask::cols_of_node(&layout, l) {
                    m[(r, c)] = true;
                }
            }
        }
    }
    Ok(GainMask { m, layout, edges: edges.to_vec() })
}

/// A feedback gain together with the mask it conforms to; entries outside the
/// mask are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Scalar> {
    k: DMatrix<T>,
    mask: GainMask,
}

impl<T: Scalar> Policy<T> {
    /// Wrap a gain that already conforms to the mask.
    pub fn new(k: DMatrix<T>, mask: GainMask) -> Result<Self> {
        if k.nrows() != mask.m.nrows() || k.ncols() != mask.m.ncols() {
            return Err(Error::DimensionMismatch("gain shape does not match mask".into()));
        }
        for (kv, mv) in k.iter().zip(mask.m.iter()) {
            if !*mv && *kv != T::zero() {
                return Err(Error::MaskViolation);
            }
        }
        Ok(Policy { k, mask })
    }

    pub fn gain(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn mask(&self) -> &GainMask {
        &self.mask
    }

    pub fn zero(mask: GainMask) -> Self {
        let k = DMatrix::zeros(mask.m.nrows(), mask.m.ncols());
        Policy { k, mask }
    }
}

/// Zero every entry outside the mask, leaving masked entries unchanged.
pub fn project_to_mask<T: Scalar>(dense: &DMatrix<T>, mask: &GainMask) -> Result<Policy<T>> {
    if dense.nrows() != mask.m.nrows() || dense.ncols() != mask.m.ncols() {
        return Err(Error::DimensionMismatch("gain shape does not match mask".into()));
    }
    let k = DMatrix::from_fn(dense.nrows(), dense.ncols(), |r, c| {
        if mask.m[(r, c)] {
            dense[(r, c)]
        } else {
            T::zero()
        }
    });
    Ok(Policy { k, mask: mask.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_all_true() {
        let edges: Vec<(usize, usize)> = (0..3).flat_map(|a| (a + 1..3).map(move |b| (a, b))).collect();
        let mask = build_mask(&edges, 1, 2).unwrap();
        assert_eq!(mask.n_free(), 3 * 2 * (2 * 1 + 4 * 2));
    }

    #[test]
    fn self_loops_only() {
        let mask = build_mask(&[], 2, 3).unwrap();
        assert_eq!(mask.n_free(), 12 * 3);
    }

    #[test]
    fn one_gfm_one_sg_block_count() {
        let mask = build_mask(&[(0, 1)], 1, 1).unwrap();
        assert_eq!(mask.n_free(), 3 * 2 + 3 * 4);
    }

    #[test]
    fn unknown_vertex_rejected() {
        assert!(build_mask(&[(0, 9)], 1, 1).is_err());
    }

    #[test]
    fn projection_idempotent_and_zeroing() {
        let mask = build_mask(&[], 1, 1).unwrap();
        let dense = DMatrix::from_fn(3, 6, |r, c| (r * 10 + c) as f64 + 1.0);
        let p = project_to_mask(&dense, &mask).unwrap();
        let p2 = project_to_mask(p.gain(), &mask).unwrap();
        assert_eq!(p.gain(), p2.gain());
        for r in 0..3 {
            for c in 0..6 {
                if mask.m[(r, c)] {
                    assert_eq!(p.gain()[(r, c)], dense[(r, c)]);
                } else {
                    assert_eq!(p.gain()[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn nonconforming_gain_rejected() {
        let mask = build_mask(&[], 1, 1).unwrap();
        // SG columns (0,1) are outside the self-loop-only mask.
        let mut k = DMatrix::zeros(3, 6);
        k[(0, 0)] = 1.0f64;
        assert!(Policy::new(k, mask).is_err());
    }
}
