//! End-to-end orchestration: dataset generation, training, cross-validation
//! over hyperparameter grids, test evaluation, and the distance-based
//! accept/reject gate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::lle::{self, Manifold};
use crate::mesh::{build_mesh, MaterialParams, MeshConfig, RveMesh};
use crate::phase::{
    equilibrate_seed, homogenize, random_seed, solve_evolution, CrackSeed, LoadCase,
    SolverControls,
};

/// Everything needed to regenerate a dataset deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mesh: MeshConfig,
    pub material: MaterialParams,
    pub load: LoadCase,
    pub controls: SolverControls,
    pub rng_seed: u64,
}

impl DatasetMeta {
    /// Physical compatibility (seed excluded): same mesh, material, load.
    pub fn compatible_with(&self, other: &DatasetMeta) -> bool {
        self.mesh == other.mesh && self.material == other.material && self.load == other.load
    }
}

/// Row-aligned training data: equilibrated inputs `x`, evolved phase fields
/// `z_pf`, homogenized stresses `z_sig` (N×4).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub z_pf: DMatrix<f64>,
    pub z_sig: DMatrix<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Splits off the last `test_count` rows as a test set.
    pub fn split_tail(&self, test_count: usize) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if test_count == 0 || test_count >= n {
            return Err(Error::Config(format!(
                "test split of {test_count} rows out of {n} is not usable"
            )));
        }
        let train: Vec<usize> = (0..n - test_count).collect();
        let test: Vec<usize> = (n - test_count..n).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: select_rows(&self.x, rows),
            z_pf: select_rows(&self.z_pf, rows),
            z_sig: select_rows(&self.z_sig, rows),
            meta: self.meta,
        }
    }

    pub fn outputs(&self, kind: OutputKind) -> &DMatrix<f64> {
        match kind {
            OutputKind::PhaseField => &self.z_pf,
            OutputKind::Stress => &self.z_sig,
        }
    }
}

/// Which output the surrogate reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    PhaseField,
    Stress,
}

/// Samples that failed to converge, reported with their crack seeds.
#[derive(Debug, Clone)]
pub struct GenerationReport {
    pub requested: usize,
    pub excluded: Vec<(CrackSeed, String)>,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..m.ncols() {
            out[(r, c)] = m[(i, c)];
        }
    }
    out
}

/// Generates `n_samples` training samples from random crack seeds.
///
/// Deterministic for a fixed `rng_seed` and independent of worker thread
/// count (seeds are drawn sequentially; solves run in parallel and are
/// collected in order). Samples that fail to converge are excluded and
/// reported; generation fails when exclusions exceed 10%.
pub fn generate_dataset(
    n_samples: usize,
    mesh_cfg: &MeshConfig,
    mat: &MaterialParams,
    load: &LoadCase,
    ctrl: &SolverControls,
    rng_seed: u64,
) -> Result<(Dataset, GenerationReport)> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be > 0".into()));
    }
    mat.validate()?;
    let mesh = build_mesh(mesh_cfg.half_width, mesh_cfg.n, mesh_cfg.fiber_radius, mat.l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seen = HashSet::new();
    let mut seeds = Vec::with_capacity(n_samples);
    let mut draws = 0usize;
    while seeds.len() < n_samples {
        draws += 1;
        if draws > 1000 * n_samples {
            return Err(Error::Config(format!(
                "could not draw {n_samples} distinct crack seeds on this mesh"
            )));
        }
        let seed = random_seed(&mesh, &mut rng)?;
        if seen.insert(seed.canonical()) {
            seeds.push(seed);
        }
    }

    let results: Vec<std::result::Result<(Vec<f64>, Vec<f64>, [f64; 4]), String>> = seeds
        .par_iter()
        .map(|seed| {
            let run = || -> Result<(Vec<f64>, Vec<f64>, [f64; 4])> {
                let x = equilibrate_seed(seed, &mesh, mat)?;
                let (z_pf, state, _) = solve_evolution(&x, &seed.nodes, &mesh, mat, load, ctrl)?;
                let sig = homogenize(&state, &mesh, mat)?;
                Ok((x, z_pf, sig.to_vec()))
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut excluded = Vec::new();
    let mut x_rows = Vec::new();
    let mut zpf_rows = Vec::new();
    let mut zsig_rows = Vec::new();
    for (seed, res) in seeds.iter().zip(results) {
        match res {
            Ok((x, z, s)) => {
                x_rows.push(x);
                zpf_rows.push(z);
                zsig_rows.push(s.to_vec());
            }
            Err(msg) => excluded.push((*seed, msg)),
        }
    }
    if excluded.len() * 10 > n_samples {
        return Err(Error::Solver(format!(
            "{} of {} samples failed to converge (exclusion budget is 10%)",
            excluded.len(),
            n_samples
        )));
    }
    let d = mesh.num_nodes();
    let flat = |rows: &[Vec<f64>], cols: usize| {
        let mut v = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            v.extend_from_slice(r);
        }
        DMatrix::from_row_slice(rows.len(), cols, &v)
    };
    let ds = Dataset {
        x: flat(&x_rows, d),
        z_pf: flat(&zpf_rows, d),
        z_sig: flat(&zsig_rows, 4),
        meta: DatasetMeta {
            mesh: *mesh_cfg,
            material: *mat,
            load: *load,
            controls: *ctrl,
            rng_seed,
        },
    };
    Ok((
        ds,
        GenerationReport {
            requested: n_samples,
            excluded,
        },
    ))
}

/// Rebuilds the mesh a dataset was generated on.
pub fn dataset_mesh(ds: &Dataset) -> Result<RveMesh> {
    build_mesh(
        ds.meta.mesh.half_width,
        ds.meta.mesh.n,
        ds.meta.mesh.fiber_radius,
        ds.meta.material.l,
    )
}

/// One cross-validation cell.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub k1: usize,
    pub k2: usize,
    pub dim: usize,
    /// Per-fold error `Σ_i ‖Z*−Z‖/‖Z‖` over the fold's points.
    pub fold_errors: Vec<f64>,
    /// Mean of `fold_errors` (the CV error R).
    pub mean: f64,
    /// Failure marker; failed cells are kept, not dropped.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub cells: Vec<CvCell>,
    pub folds: usize,
    pub used_rows: usize,
    pub truncated_rows: usize,
}

/// n-fold cross-validation over a hyperparameter grid.
///
/// The shuffled fold assignment is shared across all cells; rows beyond the
/// largest multiple of `folds` are truncated and reported.
pub fn cross_validate(
    ds: &Dataset,
    folds: usize,
    grid: &[(usize, usize, usize)],
    output: OutputKind,
    reg: f64,
    rng_seed: u64,
) -> Result<CvReport> {
    let n = ds.len();
    if folds < 2 || folds > n {
        return Err(Error::Config(format!(
            "fold count {folds} out of range for {n} rows"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let usable = n - n % folds;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    shuffle(&mut idx, &mut rng);
    idx.truncate(usable);
    let fold_size = usable / folds;
    let fold_sets: Vec<Vec<usize>> = (0..folds)
        .map(|j| idx[j * fold_size..(j + 1) * fold_size].to_vec())
        .collect();

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds).map(move |j| (c, j)))
        .collect();
    let fold_results: Vec<std::result::Result<f64, String>> = tasks
        .par_iter()
        .map(|&(c, j)| {
            let (k1, k2, dim) = grid[c];
            cv_fold_error(ds, &fold_sets, j, k1, k2, dim, output, reg).map_err(|e| e.to_string())
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    for (c, &(k1, k2, dim)) in grid.iter().enumerate() {
        let mut fold_errors = Vec::with_capacity(folds);
        let mut failure = None;
        for j in 0..folds {
            match &fold_results[c * folds + j] {
                Ok(e) => fold_errors.push(*e),
                Err(msg) => {
                    failure.get_or_insert_with(|| format!("fold {j}: {msg}"));
                }
            }
        }
        let mean = if failure.is_none() {
            fold_errors.iter().sum::<f64>() / folds as f64
        } else {
            f64::NAN
        };
        cells.push(CvCell {
            k1,
            k2,
            dim,
            fold_errors,
            mean,
            failure,
        });
    }
    Ok(CvReport {
        cells,
        folds,
        used_rows: usable,
        truncated_rows: n - usable,
    })
}

fn cv_fold_error(
    ds: &Dataset,
    fold_sets: &[Vec<usize>],
    j: usize,
    k1: usize,
    k2: usize,
    dim: usize,
    output: OutputKind,
    reg: f64,
) -> Result<f64> {
    let train_rows: Vec<usize> = fold_sets
        .iter()
        .enumerate()
        .filter(|&(jj, _)| jj != j)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    let x_train = select_rows(&ds.x, &train_rows);
    let z_train = select_rows(ds.outputs(output), &train_rows);
    let man = lle::fit(x_train, k1, dim, reg)?;
    let mut sum = 0.0;
    for &i in &fold_sets[j] {
        let query: Vec<f64> = ds.x.row(i).iter().copied().collect();
        let rec = lle::reconstruct(&man, &query, k2, &z_train)?;
        let truth = ds.outputs(output).row(i);
        let denom = truth.norm();
        if denom == 0.0 {
            return Err(Error::Numerical(format!(
                "zero-norm reference output at row {i}"
            )));
        }
        sum += (rec.z_star.transpose() - truth).norm() / denom;
    }
    Ok(sum)
}

// Fisher-Yates via the seeded stream; kept local so the fold assignment is
// stable across rand versions.
fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Per-test-point evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub index: usize,
    pub error: f64,
    pub distance: f64,
    pub fit_residual: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    /// Pearson correlation between distance and error.
    pub pearson_r: f64,
}

/// Fits on `train`, reconstructs every `test` row, and reports normalized
/// errors with their distance-to-manifold indicators.
pub fn evaluate(
    train: &Dataset,
    test: &Dataset,
    k1: usize,
    k2: usize,
    dim: usize,
    reg: f64,
    output: OutputKind,
) -> Result<EvalReport> {
    if !train.meta.compatible_with(&test.meta) {
        return Err(Error::Config(
            "train and test datasets have different mesh/material/load metadata".into(),
        ));
    }
    let man = lle::fit(train.x.clone(), k1, dim, reg)?;
    evaluate_with_manifold(&man, train, test, k2, output)
}

/// Same as [`evaluate`] but reuses a fitted manifold.
pub fn evaluate_with_manifold(
    man: &Manifold,
    train: &Dataset,
    test: &Dataset,
    k2: usize,
    output: OutputKind,
) -> Result<EvalReport> {
    let z_train = train.outputs(output);
    let mut records = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let query: Vec<f64> = test.x.row(i).iter().copied().collect();
        let rec = lle::reconstruct(man, &query, k2, z_train)?;
        let truth = test.outputs(output).row(i);
        let denom = truth.norm();
        if denom == 0.0 {
            return Err(Error::Numerical(format!(
                "zero-norm reference output at test row {i}"
            )));
        }
        records.push(EvalRecord {
            index: i,
            error: (rec.z_star.transpose() - truth).norm() / denom,
            distance: rec.distance,
            fit_residual: rec.fit_residual,
        });
    }
    let xs: Vec<f64> = records.iter().map(|r| r.distance).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.error).collect();
    Ok(EvalReport {
        records,
        pearson_r: pearson(&xs, &ys),
    })
}

/// Sample Pearson correlation; NaN when either variance is zero.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Accept/reject decision for a reconstruction request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Close enough to the manifold: use the surrogate.
    Reconstruct,
    /// Too far: fall back to the high-fidelity solve (or augment).
    HighFidelity,
}

#[derive(Debug, Clone, Copy)]
pub struct GateVerdict {
    pub distance: f64,
    pub threshold: f64,
    pub decision: Decision,
}

/// Gates on the distance-to-manifold indicator: reconstruct iff
/// `distance <= threshold`.
pub fn gate(distance: f64, threshold: f64) -> Result<GateVerdict> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!(
            "gate threshold must be > 0, got {threshold}"
        )));
    }
    let decision = if distance <= threshold {
        Decision::Reconstruct
    } else {
        Decision::HighFidelity
    };
    Ok(GateVerdict {
        distance,
        threshold,
        decision,
    })
}

/// Default gate threshold: the `q`-th percentile (nearest-rank) of the
/// leave-one-out distances of the training points.
pub fn percentile_threshold(man: &Manifold, k2: usize, q: f64) -> Result<f64> {
    if !(0.0 < q && q <= 100.0) {
        return Err(Error::Config(format!("percentile {q} out of (0, 100]")));
    }
    let n = man.x.nrows();
    let mut dists = Vec::with_capacity(n);
    for i in 0..n {
        dists.push(lle::loo_distance(man, i, k2.min(n - 2).max(1))?);
    }
    dists.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    Ok(dists[rank.saturating_sub(1).min(n - 1)])
}

/// Leave-one-out distances of all training rows.
pub fn loo_distances(man: &Manifold, k2: usize) -> Result<Vec<f64>> {
    (0..man.x.nrows())
        .map(|i| lle::loo_distance(man, i, k2))
        .collect()
}

/// Adds one input and its freshly computed high-fidelity outputs to the
/// training set. Seed nodes are recovered as the nodes where the
/// equilibrated input is pinned at 1. Returns the grown dataset and whether
/// the input duplicated an existing row (allowed, but flagged).
pub fn augment(train: &Dataset, x_star: &[f64]) -> Result<(Dataset, bool)> {
    if x_star.len() != train.x.ncols() {
        return Err(Error::Dimension(format!(
            "input has {} entries, dataset rows have {}",
            x_star.len(),
            train.x.ncols()
        )));
    }
    let mesh = dataset_mesh(train)?;
    let pinned: Vec<usize> = x_star
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v >= 1.0 - 1e-9)
        .map(|(i, _)| i)
        .collect();
    let (z_pf, state, _) = solve_evolution(
        x_star,
        &pinned,
        &mesh,
        &train.meta.material,
        &train.meta.load,
        &train.meta.controls,
    )?;
    let sig = homogenize(&state, &mesh, &train.meta.material)?;

    let duplicate = (0..train.len()).any(|i| {
        (0..train.x.ncols()).all(|c| train.x[(i, c)] == x_star[c])
    });

    let append = |m: &DMatrix<f64>, row: &[f64]| {
        let mut out = DMatrix::zeros(m.nrows() + 1, m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out[(r, c)] = m[(r, c)];
            }
        }
        for c in 0..m.ncols() {
            out[(m.nrows(), c)] = row[c];
        }
        out
    };
    let grown = Dataset {
        x: append(&train.x, x_star),
        z_pf: append(&train.z_pf, &z_pf),
        z_sig: append(&train.z_sig, &sig.to_vec()),
        meta: train.meta,
    };
    Ok((grown, duplicate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_decisions() {
        let v = gate(0.1, 0.5).unwrap();
        assert_eq!(v.decision, Decision::Reconstruct);
        let v = gate(0.6, 0.5).unwrap();
        assert_eq!(v.decision, Decision::HighFidelity);
        assert!(gate(0.1, 0.0).is_err());
    }

    #[test]
    fn gate_is_monotone_in_distance() {
        let tau = 0.37;
        let mut last_high = false;
        for i in 0..100 {
            let d = i as f64 * 0.01;
            let high = gate(d, tau).unwrap().decision == Decision::HighFidelity;
            assert!(!last_high || high, "verdict not monotone at d = {d}");
            last_high = high;
        }
    }

    #[test]
    fn pearson_on_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let y_neg = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&x, &y_neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fold_partition_covers_truncated_index_set() {
        let n = 23;
        let folds = 5;
        let usable = n - n % folds;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        shuffle(&mut idx, &mut rng);
        idx.truncate(usable);
        let fold_size = usable / folds;
        let mut seen = HashSet::new();
        for j in 0..folds {
            for &i in &idx[j * fold_size..(j + 1) * fold_size] {
                assert!(seen.insert(i), "row {i} appears in two folds");
            }
        }
        assert_eq!(seen.len(), usable);
    }
}
