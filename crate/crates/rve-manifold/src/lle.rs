//! Locally linear embedding: exhaustive nearest-neighbor search, constrained
//! local reconstruction weights, spectral embedding, out-of-sample
//! projection, and output reconstruction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A fitted LLE manifold.
///
/// `x` holds the N×𝒟 training inputs, `y` the N×𝓛 embedding, and `weights`
/// the sparse reconstruction weights (one `(neighbor, weight)` list per row,
/// sorted by neighbor index, `k1` entries each, rows summing to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub weights: Vec<Vec<(usize, f64)>>,
    pub k1: usize,
    pub dim: usize,
    pub reg: f64,
}

/// Out-of-sample reconstruction output.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Reconstructed output vector `Z* = Σ w_j Z_j`.
    pub z_star: DVector<f64>,
    /// Distance to the manifold: `‖X* − Σ_{j∈S*} w_j X_j‖` with the
    /// low-dimensional neighbor set and weights.
    pub distance: f64,
    /// Low-dimensional neighbor set S*.
    pub neighbors: Vec<usize>,
    /// Low-dimensional reconstruction weights (sum to 1).
    pub weights: Vec<f64>,
    /// High-dimensional weight-fit residual from the embedding step.
    pub fit_residual: f64,
}

/// Default relative Gram regularization.
pub const DEFAULT_REG: f64 = 1e-3;

fn sq_dist_row(data: &DMatrix<f64>, row: usize, query: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..data.ncols() {
        let d = data[(row, c)] - query[c];
        s += d * d;
    }
    s
}

/// Indices of the `k` rows of `data` closest to `query` in the l²-norm,
/// ordered by (distance, index); ties break toward the smaller index and
/// `exclude` is never returned.
pub fn knn(
    data: &DMatrix<f64>,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Result<Vec<usize>> {
    let n = data.nrows();
    let available = n - usize::from(exclude.map_or(false, |e| e < n));
    if k == 0 || k > available {
        return Err(Error::Config(format!(
            "k = {k} out of range for {available} candidate rows"
        )));
    }
    if query.len() != data.ncols() {
        return Err(Error::Dimension(format!(
            "query has {} entries, data has {} columns",
            query.len(),
            data.ncols()
        )));
    }
    let mut order: Vec<(f64, usize)> = (0..n)
        .filter(|&i| Some(i) != exclude)
        .map(|i| (sq_dist_row(data, i, query), i))
        .collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order[..k].iter().map(|&(_, i)| i).collect())
}

/// Constrained local reconstruction weights:
/// `argmin ‖query − Σ w_j n_j‖²` subject to `Σ w_j = 1`, computed by solving
/// `(C + reg·tr(C)·I/k) w = 𝟙` and normalizing, where `C` is the Gram matrix
/// of the differences `query − n_j`.
pub fn local_weights(query: &[f64], neighbors: &DMatrix<f64>, reg: f64) -> Result<Vec<f64>> {
    let k = neighbors.nrows();
    if k == 0 {
        return Err(Error::Config("need at least one neighbor".into()));
    }
    if neighbors.ncols() != query.len() {
        return Err(Error::Dimension(format!(
            "neighbors have {} columns, query has {} entries",
            neighbors.ncols(),
            query.len()
        )));
    }
    if reg < 0.0 {
        return Err(Error::Config(format!("reg must be >= 0, got {reg}")));
    }
    // Gram matrix of query - n_j.
    let mut diffs = DMatrix::zeros(k, query.len());
    for j in 0..k {
        for c in 0..query.len() {
            diffs[(j, c)] = query[c] - neighbors[(j, c)];
        }
    }
    let mut gram = &diffs * diffs.transpose();
    let trace = gram.trace();
    if trace == 0.0 {
        // Every neighbor coincides with the query; any convex combination is
        // an exact reconstruction.
        return Ok(vec![1.0 / k as f64; k]);
    }
    if reg > 0.0 {
        let ridge = reg * trace / k as f64;
        for j in 0..k {
            gram[(j, j)] += ridge;
        }
    }
    let ones = DVector::from_element(k, 1.0);
    let solved = nalgebra::Cholesky::new(gram.clone())
        .map(|ch| ch.solve(&ones))
        .or_else(|| gram.lu().solve(&ones));
    let w = solved.ok_or_else(|| {
        Error::Numerical(
            "singular local Gram system; retry with reg > 0".into(),
        )
    })?;
    let sum: f64 = w.iter().sum();
    if !sum.is_finite() || sum == 0.0 {
        return Err(Error::Numerical(
            "degenerate local weight normalization; retry with reg > 0".into(),
        ));
    }
    Ok(w.iter().map(|v| v / sum).collect())
}

/// Fits the manifold: row-wise neighbor weights, then the spectral embedding
/// from the 2nd through (𝓛+1)th smallest eigenpairs of `M = (I−W)ᵀ(I−W)`.
pub fn fit(x: DMatrix<f64>, k1: usize, dim: usize, reg: f64) -> Result<Manifold> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 samples, got {n}")));
    }
    if k1 == 0 || k1 >= n {
        return Err(Error::Config(format!("k1 = {k1} must satisfy 1 <= k1 < N = {n}")));
    }
    if dim == 0 || dim >= n - 1 {
        return Err(Error::Config(format!(
            "embedding dimension {dim} must satisfy 1 <= dim < N-1 = {}",
            n - 1
        )));
    }

    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let weights: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, f64)>> {
            let nbrs = knn(&x, &rows[i], k1, Some(i))?;
            let mut nb_mat = DMatrix::zeros(k1, x.ncols());
            for (r, &j) in nbrs.iter().enumerate() {
                for c in 0..x.ncols() {
                    nb_mat[(r, c)] = x[(j, c)];
                }
            }
            let w = local_weights(&rows[i], &nb_mat, reg)?;
            let mut pairs: Vec<(usize, f64)> =
                nbrs.into_iter().zip(w.into_iter()).collect();
            pairs.sort_unstable_by_key(|&(j, _)| j);
            Ok(pairs)
        })
        .collect::<Result<Vec<_>>>()?;

    // M = (I - W)ᵀ(I - W), built densely.
    let mut m: DMatrix<f64> = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] += 1.0;
        for &(j, wj) in &weights[i] {
            m[(i, j)] -= wj;
            m[(j, i)] -= wj;
            for &(kk, wk) in &weights[i] {
                m[(j, kk)] += wj * wk;
            }
        }
    }

    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    // Discard the bottom (near-zero, constant) eigenvector; take the next
    // `dim`, unit-norm, sign fixed so the largest-magnitude entry is positive.
    let mut y = DMatrix::zeros(n, dim);
    for (c, &idx) in order[1..=dim].iter().enumerate() {
        let col = eig.eigenvectors.column(idx);
        let norm = col.norm();
        if !(norm > 0.0) {
            return Err(Error::Numerical("zero eigenvector from the embedding".into()));
        }
        let mut best = 0;
        for r in 1..n {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            y[(r, c)] = sign * col[r] / norm;
        }
    }

    Ok(Manifold {
        x,
        y,
        weights,
        k1,
        dim,
        reg,
    })
}

/// Weighted combination of rows of `data` (over `idx`, weights `w`).
fn combine(data: &DMatrix<f64>, idx: &[usize], w: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(data.ncols());
    for (&i, &wi) in idx.iter().zip(w) {
        for c in 0..data.ncols() {
            out[c] += wi * data[(i, c)];
        }
    }
    out
}

fn residual_norm(query: &[f64], data: &DMatrix<f64>, idx: &[usize], w: &[f64]) -> f64 {
    let comb = combine(data, idx, w);
    query
        .iter()
        .zip(comb.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Neighbor weights against rows of `data`, with an exact-coincidence
/// shortcut: when the query coincides bit-for-bit with the nearest row, the
/// unregularized constrained minimum is the one-hot vector, so no ridge is
/// applied.
fn weights_for(
    data: &DMatrix<f64>,
    query: &[f64],
    nbrs: &[usize],
    reg: f64,
) -> Result<Vec<f64>> {
    if sq_dist_row(data, nbrs[0], query) == 0.0 {
        let mut w = vec![0.0; nbrs.len()];
        w[0] = 1.0;
        return Ok(w);
    }
    let mut nb_mat = DMatrix::zeros(nbrs.len(), data.ncols());
    for (r, &j) in nbrs.iter().enumerate() {
        for c in 0..data.ncols() {
            nb_mat[(r, c)] = data[(j, c)];
        }
    }
    local_weights(query, &nb_mat, reg)
}

/// Projects a new input onto the manifold: `k2` nearest neighbors in X,
/// constrained weights, then `Y* = Σ w_j Y_j`. Also returns the
/// high-dimensional fit residual `‖X* − Σ w_j X_j‖`.
pub fn embed_new(man: &Manifold, x_star: &[f64], k2: usize) -> Result<(DVector<f64>, f64)> {
    let nbrs = knn(&man.x, x_star, k2, None)?;
    let w = weights_for(&man.x, x_star, &nbrs, man.reg)?;
    let y_star = combine(&man.y, &nbrs, &w);
    let fit_residual = residual_norm(x_star, &man.x, &nbrs, &w);
    Ok((y_star, fit_residual))
}

/// Three-step output reconstruction: embed the input, find the `k2` nearest
/// embedded training points, and combine their outputs with locally linear
/// weights. `z_train` rows must align with the training rows of `man.x`.
pub fn reconstruct(
    man: &Manifold,
    x_star: &[f64],
    k2: usize,
    z_train: &DMatrix<f64>,
) -> Result<ReconstructionResult> {
    if z_train.nrows() != man.x.nrows() {
        return Err(Error::Dimension(format!(
            "z_train has {} rows, manifold has {} training points",
            z_train.nrows(),
            man.x.nrows()
        )));
    }
    let (y_star, fit_residual) = embed_new(man, x_star, k2)?;
    let yq: Vec<f64> = y_star.iter().copied().collect();
    let neighbors = knn(&man.y, &yq, k2, None)?;
    let weights = weights_for(&man.y, &yq, &neighbors, man.reg)?;
    let z_star = combine(z_train, &neighbors, &weights);
    let distance = residual_norm(x_star, &man.x, &neighbors, &weights);
    Ok(ReconstructionResult {
        z_star,
        distance,
        neighbors,
        weights,
        fit_residual,
    })
}

/// Leave-one-out distance of training row `i` to the manifold spanned by the
/// other rows (used for gate threshold calibration).
pub fn loo_distance(man: &Manifold, i: usize, k2: usize) -> Result<f64> {
    let yq: Vec<f64> = man.y.row(i).iter().copied().collect();
    let nbrs = knn(&man.y, &yq, k2, Some(i))?;
    let w = weights_for(&man.y, &yq, &nbrs, man.reg)?;
    let xq: Vec<f64> = man.x.row(i).iter().copied().collect();
    Ok(residual_norm(&xq, &man.x, &nbrs, &w))
}
