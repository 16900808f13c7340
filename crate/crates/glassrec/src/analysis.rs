//! Structure discovery over embedding tables: cosine distance matrices,
//! Ward-linkage agglomerative clustering with Newick export, and PCA via
//! cyclic Jacobi eigendecomposition.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pairwise cosine distance `1 - cos(v_i, v_j)` between the rows of `matrix`.
///
/// `labels` names each row for error messages. Rows with zero norm have no
/// direction and are rejected. The result is exactly symmetric with an
/// exactly zero diagonal; entries lie in `[0, 2]`.
pub fn cosine_distance_matrix(labels: &[String], matrix: &Tensor) -> Result<Tensor> {
    let n = matrix.rows();
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if n < 2 {
        return Err(Error::Config(
            "need at least two rows to compute pairwise distances".into(),
        ));
    }
    let dim = matrix.last_dim();
    let norms: Vec<f64> = (0..n)
        .map(|i| matrix.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for (i, norm) in norms.iter().enumerate() {
        if *norm == 0.0 {
            return Err(Error::Config(format!(
                "cannot compute cosine distance: '{}' has a zero embedding vector",
                labels[i]
            )));
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = matrix.row(i);
            let b = matrix.row(j);
            let dot: f64 = (0..dim).map(|d| a[d] * b[d]).sum();
            let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let dist = 1.0 - cos;
            out[i * n + j] = dist;
            out[j * n + i] = dist;
        }
    }
    Tensor::new(vec![n, n], out)
}

/// One agglomeration step. `left` and `right` are cluster ids: leaves are
/// `0..n-1`, the cluster created by merge `t` gets id `n + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Full agglomeration history of a hierarchical clustering run.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    leaf_count: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Members (leaf indices, ascending) of the cluster with the given id.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        if cluster < self.leaf_count {
            return vec![cluster];
        }
        let merge = &self.merges[cluster - self.leaf_count];
        let mut out = self.members(merge.left);
        out.extend(self.members(merge.right));
        out.sort_unstable();
        out
    }

    /// Serialize as a rooted Newick tree. Branch lengths are the drop in
    /// merge height from parent to child (leaves sit at height zero).
    pub fn to_newick(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.leaf_count {
            return Err(Error::Contract(format!(
                "{} labels for {} leaves",
                labels.len(),
                self.leaf_count
            )));
        }
        let root = self.leaf_count + self.merges.len() - 1;
        let root_height = self.merges.last().map_or(0.0, |m| m.height);
        let mut text = self.newick_node(root, root_height, labels);
        text.push(';');
        Ok(text)
    }

    fn newick_node(&self, cluster: usize, parent_height: f64, labels: &[String]) -> String {
        if cluster < self.leaf_count {
            return format!("{}:{}", labels[cluster], parent_height);
        }
        let merge = &self.merges[cluster - self.leaf_count];
        let left = self.newick_node(merge.left, merge.height, labels);
        let right = self.newick_node(merge.right, merge.height, labels);
        format!("({},{}):{}", left, right, parent_height - merge.height)
    }
}

/// Agglomerative clustering with Ward linkage on a precomputed distance
/// matrix, updated with the Lance-Williams recurrence.
///
/// At each step the pair of active clusters at minimum linkage distance is
/// merged; ties break toward the lexicographically smallest id pair, so the
/// result is fully deterministic.
pub fn ward_cluster(distances: &Tensor) -> Result<Dendrogram> {
    let n = distances.rows();
    if distances.shape() != [n, n] {
        return Err(Error::Dimension(format!(
            "distance matrix must be square, got {:?}",
            distances.shape()
        )));
    }
    if n < 2 {
        return Err(Error::Config(
            "need at least two observations to cluster".into(),
        ));
    }
    let total = 2 * n - 1; // leaves plus merged clusters
    let mut dist = vec![f64::NAN; total * total];
    for i in 0..n {
        for j in 0..n {
            dist[i * total + j] = distances.at(i, j);
        }
    }
    let mut size = vec![0usize; total];
    for s in size.iter_mut().take(n) {
        *s = 1;
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        // Find the closest active pair; ties resolve to the smallest (i, j).
        let mut best: Option<(f64, usize, usize)> = None;
        for (a_pos, &a) in active.iter().enumerate() {
            for &b in &active[a_pos + 1..] {
                let d = dist[a * total + b];
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (height, a, b) = best.expect("at least two active clusters");
        let new = n + step;
        size[new] = size[a] + size[b];
        merges.push(Merge {
            left: a,
            right: b,
            height,
            size: size[new],
        });
        active.retain(|&c| c != a && c != b);
        // Lance-Williams update of squared Ward distances to the new cluster.
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &c in &active {
            let nc = size[c] as f64;
            let dca = dist[c * total + a];
            let dcb = dist[c * total + b];
            let d2 = ((na + nc) * dca * dca + (nb + nc) * dcb * dcb - nc * height * height)
                / (na + nb + nc);
            let d = d2.max(0.0).sqrt();
            dist[c * total + new] = d;
            dist[new * total + c] = d;
        }
        active.push(new);
    }

    Ok(Dendrogram {
        leaf_count: n,
        merges,
    })
}

/// Principal-component projection of the rows of a data matrix.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `[n, components]` coordinates of each input row.
    pub coords: Tensor,
    /// `[dim, components]` orthonormal component directions (columns).
    pub components: Tensor,
    /// Column means subtracted before projecting.
    pub mean: Vec<f64>,
    /// Fraction of total variance captured by each kept component.
    pub explained: Vec<f64>,
}

/// Project rows onto their top principal components.
///
/// Centers columns, forms the sample covariance, and diagonalizes it with
/// cyclic Jacobi rotations. Components are ordered by descending eigenvalue
/// with a deterministic sign convention: the largest-magnitude entry of each
/// direction vector is made positive. Requesting more components than the
/// numerical rank of the data is an error.
pub fn pca_project(matrix: &Tensor, components: usize) -> Result<PcaProjection> {
    let n = matrix.rows();
    let dim = matrix.last_dim();
    if n < 2 {
        return Err(Error::Config(
            "need at least two rows for a principal-component analysis".into(),
        ));
    }
    if components == 0 {
        return Err(Error::Config("components must be at least 1".into()));
    }
    if components > dim {
        return Err(Error::Config(format!(
            "cannot extract {components} components from {dim}-dimensional data"
        )));
    }

    let mean: Vec<f64> = (0..dim)
        .map(|d| (0..n).map(|i| matrix.at(i, d)).sum::<f64>() / n as f64)
        .collect();
    let mut centered = vec![0.0; n * dim];
    for i in 0..n {
        for d in 0..dim {
            centered[i * dim + d] = matrix.at(i, d) - mean[d];
        }
    }
    // Sample covariance, dim x dim.
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in a..dim {
            let mut acc = 0.0;
            for row in centered.chunks(dim) {
                acc += row[a] * row[b];
            }
            let v = acc / (n - 1) as f64;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&mut cov, dim);
    // Order eigenpairs by descending eigenvalue (stable on ties).
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));

    let lambda_max = eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * lambda_max.max(1e-300);
    let rank = order
        .iter()
        .take_while(|&&idx| eigenvalues[idx] > tol)
        .count();
    if rank < components {
        return Err(Error::Config(format!(
            "data is degenerate: numerical rank {rank} is below the {components} requested components"
        )));
    }
    let total_variance: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();

    let mut directions = vec![0.0; dim * components];
    let mut explained = Vec::with_capacity(components);
    for (c, &idx) in order.iter().take(components).enumerate() {
        let mut col: Vec<f64> = (0..dim).map(|d| vectors[d * dim + idx]).collect();
        // Sign convention: largest-magnitude entry positive.
        let lead = (0..dim)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap_or(0);
        if col[lead] < 0.0 {
            for v in col.iter_mut() {
                *v = -*v;
            }
        }
        for d in 0..dim {
            directions[d * components + c] = col[d];
        }
        explained.push(eigenvalues[idx].max(0.0) / total_variance);
    }

    let mut coords = vec![0.0; n * components];
    for i in 0..n {
        for c in 0..components {
            let mut acc = 0.0;
            for d in 0..dim {
                acc += centered[i * dim + d] * directions[d * components + c];
            }
            coords[i * components + c] = acc;
        }
    }

    Ok(PcaProjection {
        coords: Tensor::new(vec![n, components], coords)?,
        components: Tensor::new(vec![dim, components], directions)?,
        mean,
        explained,
    })
}

/// Cyclic Jacobi diagonalization of a symmetric matrix stored row-major in
/// `a`. Returns (eigenvalues, eigenvector matrix with eigenvectors in
/// columns). `a` is destroyed.
fn jacobi_eigen(a: &mut [f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; dim * dim];
    for d in 0..dim {
        v[d * dim + d] = 1.0;
    }
    if dim == 1 {
        return (vec![a[0]], v);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off += a[p * dim + q] * a[p * dim + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable choice of the smaller rotation angle.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..dim).map(|d| a[d * dim + d]).collect();
    (eigenvalues, v)
}
