//! Symmetric sparse systems with Dirichlet constraints and a conjugate
//! gradient solver used by both the displacement and phase subproblems.

use crate::error::{Error, Result};

/// Relative residual the solver must reach (contract: 1e-10).
const RESIDUAL_CONTRACT: f64 = 1e-10;
/// Tighter internal target so the contract holds with margin.
const CG_TARGET: f64 = 1e-13;

/// Symmetric sparse system assembled from element contributions.
///
/// Entries are accumulated in triplet form (both halves of the symmetric
/// matrix must be added by the assembler). Dirichlet constraints are applied
/// by row/column elimination with RHS correction, so constrained dofs take
/// their prescribed values exactly.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
    rhs: Vec<f64>,
    constraints: Vec<(usize, f64)>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            n,
            entries: Vec::new(),
            rhs: vec![0.0; n],
            constraints: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] += v;
    }

    /// Prescribe `value` at `dof`. Later constraints on the same dof win.
    pub fn constrain(&mut self, dof: usize, value: f64) {
        self.constraints.push((dof, value));
    }

    fn constraint_map(&self) -> Vec<Option<f64>> {
        let mut m = vec![None; self.n];
        for &(dof, v) in &self.constraints {
            m[dof] = Some(v);
        }
        m
    }

    /// Eliminate constraints and compress to CSR.
    fn reduce(&self) -> (Csr, Vec<f64>) {
        let fixed = self.constraint_map();
        let mut rhs = self.rhs.clone();
        // RHS correction: move A[:,c]*v_c to the right-hand side.
        for &(i, j, v) in &self.entries {
            let (i, j) = (i as usize, j as usize);
            if fixed[i].is_none() {
                if let Some(val) = fixed[j] {
                    rhs[i] -= v * val;
                }
            }
        }
        let mut kept: Vec<(u32, u32, f64)> = self
            .entries
            .iter()
            .copied()
            .filter(|&(i, j, _)| fixed[i as usize].is_none() && fixed[j as usize].is_none())
            .collect();
        for (dof, v) in fixed.iter().enumerate() {
            if let Some(val) = v {
                kept.push((dof as u32, dof as u32, 1.0));
                rhs[dof] = *val;
            }
        }
        (Csr::from_triplets(self.n, &mut kept), rhs)
    }

    /// Solve the constrained SPD system with Jacobi-preconditioned CG.
    ///
    /// Guarantees `‖Ax−b‖ ≤ 1e-10·‖b‖` on the reduced system and exact
    /// values at constrained dofs.
    pub fn solve_spd(&self) -> Result<Vec<f64>> {
        let (a, b) = self.reduce();
        let mut x = cg(&a, &b)?;
        // Constrained rows are identity rows; enforce exactness against
        // any leftover CG perturbation.
        for &(dof, v) in &self.constraints {
            x[dof] = v;
        }
        let r = a.residual_norm(&x, &b);
        let bnorm = norm(&b);
        if r > RESIDUAL_CONTRACT * bnorm.max(f64::MIN_POSITIVE) {
            return Err(Error::Solver(format!(
                "CG residual {:.3e} exceeds contract {:.3e}",
                r,
                RESIDUAL_CONTRACT * bnorm
            )));
        }
        Ok(x)
    }
}

/// Compressed sparse row matrix (values summed over duplicate triplets).
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    fn from_triplets(n: usize, entries: &mut Vec<(u32, u32, f64)>) -> Self {
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for &(i, j, v) in entries.iter() {
            match merged.last_mut() {
                Some((li, lj, lv)) if *li == i && *lj == j => *lv += v,
                _ => merged.push((i, j, v)),
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &merged {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col = merged.iter().map(|&(_, j, _)| j).collect();
        let val = merged.iter().map(|&(_, _, v)| v).collect();
        Csr {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] = s;
        }
    }

    fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] as usize == i {
                    d[i] += self.val[k];
                }
            }
        }
        d
    }

    fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n];
        self.matvec(x, &mut ax);
        let mut s = 0.0;
        for i in 0..self.n {
            let r = b[i] - ax[i];
            s += r * r;
        }
        s.sqrt()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cg(a: &Csr, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let diag = a.diag();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::Solver(
            "matrix has a non-positive diagonal entry; not SPD".into(),
        ));
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = (20 * n).max(2000);
    let tol = CG_TARGET * bnorm;

    for it in 0..max_iter {
        if norm(&r) <= tol {
            return Ok(x);
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver(format!(
                "CG breakdown at iteration {it}: pᵀAp = {pap:.3e} (matrix not SPD)"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // Periodic true-residual refresh against drift.
        if it % 256 == 255 {
            a.matvec(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm(&r) <= RESIDUAL_CONTRACT * bnorm {
        return Ok(x);
    }
    Err(Error::Solver(format!(
        "CG did not converge in {max_iter} iterations; final relative residual {:.3e}",
        norm(&r) / bnorm
    )))
}
