use nalgebra::{DMatrix, DVector, Matrix3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

/// Block-sparse Jacobian with 3×3 blocks.
///
/// Row block `k` is the k-th residual (correspondences first, then directed
/// edges). Column block `i < n` is the rotation increment φ_i of node `i`;
/// column block `n + i` is its translation t_i.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseJacobian {
    node_count: usize,
    rows: Vec<Vec<(usize, Matrix3<f64>)>>,
}

impl SparseJacobian {
    pub(crate) fn new(node_count: usize, rows: Vec<Vec<(usize, Matrix3<f64>)>>) -> Self {
        Self { node_count, rows }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn row_blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn nrows(&self) -> usize {
        3 * self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        6 * self.node_count
    }

    /// Column block of the rotation increment of `node`.
    pub fn phi_block(&self, node: usize) -> usize {
        node
    }

    /// Column block of the translation of `node`.
    pub fn t_block(&self, node: usize) -> usize {
        self.node_count + node
    }

    /// Non-zero blocks of one row block as `(column block, block)`.
    pub fn row(&self, row_block: usize) -> &[(usize, Matrix3<f64>)] {
        &self.rows[row_block]
    }

    pub fn block(&self, row_block: usize, col_block: usize) -> Option<&Matrix3<f64>> {
        self.rows[row_block]
            .iter()
            .find(|(c, _)| *c == col_block)
            .map(|(_, m)| m)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for (rb, row) in self.rows.iter().enumerate() {
            for (cb, m) in row {
                out.fixed_view_mut::<3, 3>(3 * rb, 3 * cb).copy_from(m);
            }
        }
        out
    }

    /// `Jᵀ r`.
    pub fn transpose_mul(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        for (rb, row) in self.rows.iter().enumerate() {
            let rv = r.fixed_rows::<3>(3 * rb);
            for (cb, m) in row {
                let mut seg = out.fixed_rows_mut::<3>(3 * cb);
                seg += m.transpose() * rv;
            }
        }
        out
    }

    /// Dense `JᵀJ`.
    pub fn normal_matrix_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.ncols(), self.ncols());
        for row in &self.rows {
            for (ca, a) in row {
                for (cb, b) in row {
                    let mut view = h.fixed_view_mut::<3, 3>(3 * ca, 3 * cb);
                    view += a.transpose() * b;
                }
            }
        }
        h
    }

    /// Sparse `JᵀJ + μ I` in compressed-column form, with scalar column
    /// `c` moved to `perm[c]`.
    pub fn normal_matrix_sparse(&self, damping: f64, perm: &[usize]) -> CscMatrix<f64> {
        let n = self.ncols();
        let mut coo = CooMatrix::new(n, n);
        for row in &self.rows {
            for (ca, a) in row {
                for (cb, b) in row {
                    let prod = a.transpose() * b;
                    for r in 0..3 {
                        for c in 0..3 {
                            let v = prod[(r, c)];
                            if v != 0.0 {
                                coo.push(perm[3 * ca + r], perm[3 * cb + c], v);
                            }
                        }
                    }
                }
            }
        }
        for d in 0..n {
            coo.push(d, d, damping);
        }
        // Duplicate entries are summed on conversion.
        CscMatrix::from(&coo)
    }

    /// Scalar column permutation for the sparse factorization: nodes in
    /// reverse Cuthill–McKee order over the coupling graph of `JᵀJ`, with
    /// each node's φ and t columns adjacent.
    pub fn fill_reducing_permutation(&self) -> Vec<usize> {
        let n = self.node_count;
        let mut adjacency = vec![Vec::new(); n];
        for row in &self.rows {
            for (ca, _) in row {
                for (cb, _) in row {
                    let (a, b) = (ca % n, cb % n);
                    if a != b {
                        adjacency[a].push(b);
                    }
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let order = reverse_cuthill_mckee(&adjacency);
        let mut position = vec![0; n];
        for (pos, &node) in order.iter().enumerate() {
            position[node] = pos;
        }
        (0..self.ncols())
            .map(|c| {
                let (block, r) = (c / 3, c % 3);
                let (node, kind) = (block % n, block / n);
                6 * position[node] + 3 * kind + r
            })
            .collect()
    }
}

fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| adjacency[v].len());
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| adjacency[u].len());
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Solves `(JᵀJ + μ I) Δ = −Jᵀr`; `None` when the factorization fails.
pub(crate) fn solve_normal_equations(
    jac: &SparseJacobian,
    gradient: &DVector<f64>,
    damping: f64,
    dense: bool,
) -> Option<DVector<f64>> {
    let rhs = -gradient;
    let delta = if dense {
        let mut h = jac.normal_matrix_dense();
        for d in 0..h.nrows() {
            h[(d, d)] += damping;
        }
        h.lu().solve(&rhs)?
    } else {
        let perm = jac.fill_reducing_permutation();
        let h = jac.normal_matrix_sparse(damping, &perm);
        let chol = CscCholesky::factor(&h).ok()?;
        let mut b = DMatrix::zeros(rhs.len(), 1);
        for (c, &p) in perm.iter().enumerate() {
            b[p] = rhs[c];
        }
        let sol = chol.solve(&b);
        DVector::from_iterator(rhs.len(), perm.iter().map(|&p| sol[p]))
    };
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_a_bijection_keeping_node_columns_together() {
        let rows = vec![
            vec![(0, Matrix3::identity()), (3, Matrix3::identity())],
            vec![(2, Matrix3::identity()), (5, Matrix3::identity()), (4, Matrix3::identity())],
        ];
        let jac = SparseJacobian::new(3, rows);
        let perm = jac.fill_reducing_permutation();
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..18).collect::<Vec<_>>());
        for node in 0..3 {
            let phi = perm[3 * node] / 6;
            let t = perm[3 * (3 + node)] / 6;
            assert_eq!(phi, t);
        }
    }

    #[test]
    fn rcm_path_is_banded() {
        // Path 0-3-1-4-2 must come out as a contiguous walk.
        let adjacency = vec![vec![3], vec![3, 4], vec![4], vec![0, 1], vec![1, 2]];
        let order = reverse_cuthill_mckee(&adjacency);
        for w in order.windows(2) {
            assert!(adjacency[w[0]].contains(&w[1]));
        }
    }
}
