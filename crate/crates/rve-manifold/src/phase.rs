//! Phase-field fracture on the RVE: crack seeding, input equilibration,
//! staggered evolution under a fixed macroscopic strain, energy evaluation,
//! and homogenized stress.
//!
//! The strain energy of the matrix uses the volumetric/deviatoric split:
//! `Ψ(ε,d) = g(d)Ψ₊ + Ψ₋` with `Ψ₊ = (K/2)⟨tr ε⟩₊² + μ‖dev ε‖²`,
//! `Ψ₋ = (K/2)⟨tr ε⟩₋²`, `g(d) = (1−d)² + k_res`, and the 3D deviator
//! convention with plane-strain `ε₃₃ = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    gauss_points, shape, shape_grad, MaterialParams, Phase, RveMesh, GPA_TO_MJ_PER_MM3,
};
use crate::sparse::SparseSystem;

/// Nodal phase field `d` (length 𝒟) and nodal displacements `u` (length 2𝒟,
/// dof order `[u_x(0), u_y(0), u_x(1), …]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub d: Vec<f64>,
    pub u: Vec<f64>,
}

impl FieldState {
    pub fn zeros(num_nodes: usize) -> Self {
        FieldState {
            d: vec![0.0; num_nodes],
            u: vec![0.0; 2 * num_nodes],
        }
    }
}

/// Imposed macroscopic strain; boundary displacements are `u = ε̄·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    pub eps_xx: f64,
    pub eps_yy: f64,
    pub eps_xy: f64,
}

impl LoadCase {
    /// Uniaxial macroscopic tension `ε̄ = ε̄₂₂ e₂⊗e₂`.
    pub fn uniaxial_yy(eps_yy: f64) -> Self {
        LoadCase {
            eps_xx: 0.0,
            eps_yy,
            eps_xy: 0.0,
        }
    }

    pub fn boundary_displacement(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.eps_xx * x + self.eps_xy * y,
            self.eps_xy * x + self.eps_yy * y,
        )
    }

    /// Load with x and y roles swapped (transposed macroscopic strain axes).
    pub fn transposed(&self) -> Self {
        LoadCase {
            eps_xx: self.eps_yy,
            eps_yy: self.eps_xx,
            eps_xy: self.eps_xy,
        }
    }
}

/// Initial crack: three connected nodes forming a two-edge path in the
/// matrix, away from the boundary and the fiber. The two edges may not
/// belong to a single common element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrackSeed {
    pub nodes: [usize; 3],
}

impl CrackSeed {
    pub fn new(nodes: [usize; 3], mesh: &RveMesh) -> Result<Self> {
        let seed = CrackSeed { nodes };
        seed.validate(mesh)?;
        Ok(seed)
    }

    pub fn validate(&self, mesh: &RveMesh) -> Result<()> {
        let [a, b, c] = self.nodes;
        if a == b || b == c || a == c {
            return Err(Error::Config("crack seed nodes must be distinct".into()));
        }
        for &n in &self.nodes {
            if n >= mesh.num_nodes() {
                return Err(Error::Config(format!("seed node {n} out of range")));
            }
            if mesh.is_boundary_node(n) {
                return Err(Error::Config(format!("seed node {n} lies on the boundary")));
            }
            if !mesh.is_matrix_node(n) {
                return Err(Error::Config(format!(
                    "seed node {n} touches a fiber element"
                )));
            }
        }
        if !mesh.nodes_share_edge(a, b) || !mesh.nodes_share_edge(b, c) {
            return Err(Error::Config(
                "consecutive seed nodes must share a mesh edge".into(),
            ));
        }
        let ea = mesh.edge_elements(a, b);
        let eb = mesh.edge_elements(b, c);
        if ea.iter().any(|e| eb.contains(e)) {
            return Err(Error::Config(
                "the two seed edges belong to a common element".into(),
            ));
        }
        Ok(())
    }

    /// Canonical (orientation-independent) form for duplicate detection.
    pub fn canonical(&self) -> [usize; 3] {
        let [a, b, c] = self.nodes;
        if a <= c {
            [a, b, c]
        } else {
            [c, b, a]
        }
    }
}

/// Draws a random crack seed: a uniformly random matrix node at distance
/// greater than `max(2h, 0.1L)` from the boundary and the fiber, extended by
/// two random axis-aligned unit edge steps; invalid paths are redrawn.
pub fn random_seed<R: Rng>(mesh: &RveMesh, rng: &mut R) -> Result<CrackSeed> {
    let margin = (2.0 * mesh.h()).max(0.1 * mesh.half_width);
    let l = mesh.half_width;
    let centers: Vec<usize> = (0..mesh.num_nodes())
        .filter(|&n| {
            if !mesh.is_matrix_node(n) || mesh.is_boundary_node(n) {
                return false;
            }
            let [x, y] = mesh.coords[n];
            let to_boundary = (l - x.abs()).min(l - y.abs());
            if to_boundary <= margin {
                return false;
            }
            if mesh.fiber_radius > 0.0 {
                let to_fiber = (x * x + y * y).sqrt() - mesh.fiber_radius;
                if to_fiber <= margin {
                    return false;
                }
            }
            true
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::Config(
            "no node is far enough from the boundary and the fiber to seed a crack".into(),
        ));
    }
    const STEPS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    for _ in 0..100_000 {
        let start = centers[rng.gen_range(0..centers.len())];
        let (i0, j0) = mesh.node_grid_pos(start);
        let (di1, dj1) = STEPS[rng.gen_range(0..4)];
        let (di2, dj2) = STEPS[rng.gen_range(0..4)];
        let i1 = i0 as isize + di1;
        let j1 = j0 as isize + dj1;
        let i2 = i1 + di2;
        let j2 = j1 + dj2;
        let in_grid = |i: isize, j: isize| {
            i >= 0 && j >= 0 && i <= mesh.nx as isize && j <= mesh.ny as isize
        };
        if !in_grid(i1, j1) || !in_grid(i2, j2) {
            continue;
        }
        let n1 = mesh.node_id(i1 as usize, j1 as usize);
        let n2 = mesh.node_id(i2 as usize, j2 as usize);
        let seed = CrackSeed {
            nodes: [start, n1, n2],
        };
        if seed.validate(mesh).is_ok() {
            return Ok(seed);
        }
    }
    Err(Error::Solver(
        "crack seeding failed to find a valid path after 100000 draws".into(),
    ))
}

/// Staggered solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControls {
    /// Stop when `‖d^{m+1} − d^m‖_∞ < tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            tol: 1e-3,
            max_iter: 200,
        }
    }
}

/// Per-run solver diagnostics; `energy_trace` records Π_l after every
/// staggered half-step.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    pub final_increment: f64,
    pub energy_trace: Vec<f64>,
}

/// Volume-averaged stress over the RVE (GPa).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizedStress {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub sxy: f64,
}

impl HomogenizedStress {
    pub fn to_vec(self) -> [f64; 4] {
        [self.sx, self.sy, self.sz, self.sxy]
    }
}

/// In-plane strain at a quadrature point.
#[derive(Debug, Clone, Copy, Default)]
struct Strain {
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Strain {
    fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Squared norm of the 3D deviator with ε₃₃ = 0.
    fn dev_norm_sq(&self) -> f64 {
        let t3 = self.trace() / 3.0;
        let dxx = self.xx - t3;
        let dyy = self.yy - t3;
        let dzz = -t3;
        dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * self.xy * self.xy
    }
}

fn strain_at(u: &[f64], conn: &[usize; 4], dndx: &[f64; 4], dndy: &[f64; 4]) -> Strain {
    let mut e = Strain::default();
    for a in 0..4 {
        let ux = u[2 * conn[a]];
        let uy = u[2 * conn[a] + 1];
        e.xx += dndx[a] * ux;
        e.yy += dndy[a] * uy;
        e.xy += 0.5 * (dndy[a] * ux + dndx[a] * uy);
    }
    e
}

fn degradation(d: f64, k_res: f64) -> f64 {
    (1.0 - d) * (1.0 - d) + k_res
}

/// Tensile part of the split energy density (GPa units).
fn psi_plus(e: &Strain, mat: &MaterialParams) -> f64 {
    let k = mat.bulk_modulus();
    let tr = e.trace();
    let trp = tr.max(0.0);
    0.5 * k * trp * trp + mat.mu_m * e.dev_norm_sq()
}

fn psi_minus(e: &Strain, mat: &MaterialParams) -> f64 {
    let k = mat.bulk_modulus();
    let trm = e.trace().min(0.0);
    0.5 * k * trm * trm
}

/// Fiber energy density Ψ₁ = (λ₁/2)(tr ε)² + μ₁ ε:ε (GPa units).
fn psi_fiber(e: &Strain, mat: &MaterialParams) -> f64 {
    let tr = e.trace();
    let dd = e.xx * e.xx + e.yy * e.yy + 2.0 * e.xy * e.xy;
    0.5 * mat.lambda_f * tr * tr + mat.mu_f * dd
}

/// In-plane stress (σxx, σyy, σxy) in GPa at a quadrature point.
fn stress(e: &Strain, d: f64, phase: Phase, mat: &MaterialParams) -> (f64, f64, f64) {
    match phase {
        Phase::Fiber => {
            let tr = e.trace();
            (
                mat.lambda_f * tr + 2.0 * mat.mu_f * e.xx,
                mat.lambda_f * tr + 2.0 * mat.mu_f * e.yy,
                2.0 * mat.mu_f * e.xy,
            )
        }
        Phase::Matrix => {
            let g = degradation(d, mat.k_res);
            let k = mat.bulk_modulus();
            let tr = e.trace();
            let (kp, km) = (tr.max(0.0), tr.min(0.0));
            let t3 = tr / 3.0;
            let vol = g * k * kp + k * km;
            (
                vol + g * 2.0 * mat.mu_m * (e.xx - t3),
                vol + g * 2.0 * mat.mu_m * (e.yy - t3),
                g * 2.0 * mat.mu_m * e.xy,
            )
        }
    }
}

/// Total regularized energy Π_l in mJ (per unit thickness).
pub fn energy(state: &FieldState, mesh: &RveMesh, mat: &MaterialParams) -> Result<f64> {
    let nn = mesh.num_nodes();
    if state.d.len() != nn || state.u.len() != 2 * nn {
        return Err(Error::Dimension(format!(
            "state has {} phase / {} displacement entries for a mesh with {} nodes",
            state.d.len(),
            state.u.len(),
            nn
        )));
    }
    let h = mesh.h();
    let jac = 0.25 * h * h;
    let mut total = 0.0;
    for (e, conn) in mesh.elems.iter().enumerate() {
        let phase = mesh.elem_phase[e];
        for &([xi, eta], w) in gauss_points().iter() {
            let nfun = shape(xi, eta);
            let (dndx, dndy) = shape_grad(xi, eta, h);
            let strain = strain_at(&state.u, conn, &dndx, &dndy);
            let density = match phase {
                Phase::Fiber => psi_fiber(&strain, mat) * GPA_TO_MJ_PER_MM3,
                Phase::Matrix => {
                    let mut dq = 0.0;
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for a in 0..4 {
                        dq += nfun[a] * state.d[conn[a]];
                        gx += dndx[a] * state.d[conn[a]];
                        gy += dndy[a] * state.d[conn[a]];
                    }
                    let elastic = (degradation(dq, mat.k_res) * psi_plus(&strain, mat)
                        + psi_minus(&strain, mat))
                        * GPA_TO_MJ_PER_MM3;
                    let crack = 0.5 * mat.g_c * (dq * dq / mat.l + mat.l * (gx * gx + gy * gy));
                    elastic + crack
                }
            };
            total += density * w * jac;
        }
    }
    Ok(total)
}

/// Collects the Dirichlet set for the phase field: `d = 1` at pinned nodes,
/// `d = 0` at fiber nodes.
fn phase_constraints(sys: &mut SparseSystem, mesh: &RveMesh, pinned: &[usize]) {
    for n in 0..mesh.num_nodes() {
        if mesh.is_fiber_node(n) {
            sys.constrain(n, 0.0);
        }
    }
    for &n in pinned {
        sys.constrain(n, 1.0);
    }
}

/// Solves the linear phase subproblem at fixed `u`:
/// `∫ (2Ψ₊ + g_c/l) d φ + g_c l ∇d·∇φ = ∫ 2Ψ₊ φ` over the matrix, with
/// `d = 1` at pinned nodes and `d = 0` at fiber nodes, then clamps to [0,1].
///
/// `psi_plus_qp[e][q]` is Ψ₊ in mJ/mm³ at quadrature point `q` of element
/// `e` (ignored on fiber elements).
pub fn solve_phase_subproblem(
    mesh: &RveMesh,
    mat: &MaterialParams,
    psi_plus_qp: &[[f64; 4]],
    pinned: &[usize],
) -> Result<Vec<f64>> {
    if psi_plus_qp.len() != mesh.num_elems() {
        return Err(Error::Dimension(format!(
            "psi_plus has {} elements, mesh has {}",
            psi_plus_qp.len(),
            mesh.num_elems()
        )));
    }
    let h = mesh.h();
    let jac = 0.25 * h * h;
    let mut sys = SparseSystem::new(mesh.num_nodes());
    for (e, conn) in mesh.elems.iter().enumerate() {
        if mesh.elem_phase[e] == Phase::Fiber {
            continue;
        }
        for (q, &([xi, eta], w)) in gauss_points().iter().enumerate() {
            let nfun = shape(xi, eta);
            let (dndx, dndy) = shape_grad(xi, eta, h);
            let two_psi = 2.0 * psi_plus_qp[e][q];
            let mass = two_psi + mat.g_c / mat.l;
            let stiff = mat.g_c * mat.l;
            let scale = w * jac;
            for a in 0..4 {
                sys.add_rhs(conn[a], two_psi * nfun[a] * scale);
                for b in 0..4 {
                    let v = mass * nfun[a] * nfun[b] + stiff * (dndx[a] * dndx[b] + dndy[a] * dndy[b]);
                    sys.add(conn[a], conn[b], v * scale);
                }
            }
        }
    }
    phase_constraints(&mut sys, mesh, pinned);
    let mut d = sys.solve_spd()?;
    for v in &mut d {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(d)
}

/// Minimizes the crack-surface energy with `d = 1` at the given nodes and
/// `u ≡ 0` (the elastic terms are then d-independent).
pub fn equilibrate_nodes(mesh: &RveMesh, mat: &MaterialParams, pinned: &[usize]) -> Result<Vec<f64>> {
    let zero = vec![[0.0; 4]; mesh.num_elems()];
    solve_phase_subproblem(mesh, mat, &zero, pinned)
}

/// Produces the equilibrated input phase field for a crack seed.
pub fn equilibrate_seed(seed: &CrackSeed, mesh: &RveMesh, mat: &MaterialParams) -> Result<Vec<f64>> {
    seed.validate(mesh)?;
    equilibrate_nodes(mesh, mat, &seed.nodes)
}

/// Per-quadrature-point sign of `tr ε` (true = non-negative).
fn trace_signs(mesh: &RveMesh, u: &[f64]) -> Vec<[bool; 4]> {
    let h = mesh.h();
    mesh.elems
        .iter()
        .map(|conn| {
            let mut s = [true; 4];
            for (q, &([xi, eta], _)) in gauss_points().iter().enumerate() {
                let (dndx, dndy) = shape_grad(xi, eta, h);
                s[q] = strain_at(u, conn, &dndx, &dndy).trace() >= 0.0;
            }
            s
        })
        .collect()
}

/// Solves the linearized displacement subproblem at fixed `d`, with the
/// volumetric split sign frozen per quadrature point (`signs[e][q]` is the
/// sign of `tr ε` from the previous iterate; pass all-true on the first
/// iteration under tensile load).
pub fn solve_displacement_subproblem(
    mesh: &RveMesh,
    mat: &MaterialParams,
    d: &[f64],
    signs: &[[bool; 4]],
    load: &LoadCase,
) -> Result<Vec<f64>> {
    if d.len() != mesh.num_nodes() {
        return Err(Error::Dimension(format!(
            "phase field has {} entries, mesh has {} nodes",
            d.len(),
            mesh.num_nodes()
        )));
    }
    let h = mesh.h();
    let jac = 0.25 * h * h;
    let k_bulk = mat.bulk_modulus();
    let mut sys = SparseSystem::new(2 * mesh.num_nodes());
    for (e, conn) in mesh.elems.iter().enumerate() {
        let phase = mesh.elem_phase[e];
        for (q, &([xi, eta], w)) in gauss_points().iter().enumerate() {
            let nfun = shape(xi, eta);
            let (dndx, dndy) = shape_grad(xi, eta, h);
            // Effective Lamé pair at this point.
            let (lam, mu) = match phase {
                Phase::Fiber => (mat.lambda_f, mat.mu_f),
                Phase::Matrix => {
                    let mut dq = 0.0;
                    for a in 0..4 {
                        dq += nfun[a] * d[conn[a]];
                    }
                    let g = degradation(dq.clamp(0.0, 1.0), mat.k_res);
                    let k_eff = if signs[e][q] { g * k_bulk } else { k_bulk };
                    let mu_eff = g * mat.mu_m;
                    (k_eff - 2.0 * mu_eff / 3.0, mu_eff)
                }
            };
            let scale = w * jac;
            for a in 0..4 {
                for b in 0..4 {
                    let (nax, nay) = (dndx[a], dndy[a]);
                    let (nbx, nby) = (dndx[b], dndy[b]);
                    sys.add(
                        2 * conn[a],
                        2 * conn[b],
                        ((lam + 2.0 * mu) * nax * nbx + mu * nay * nby) * scale,
                    );
                    sys.add(
                        2 * conn[a],
                        2 * conn[b] + 1,
                        (lam * nax * nby + mu * nay * nbx) * scale,
                    );
                    sys.add(
                        2 * conn[a] + 1,
                        2 * conn[b],
                        (lam * nay * nbx + mu * nax * nby) * scale,
                    );
                    sys.add(
                        2 * conn[a] + 1,
                        2 * conn[b] + 1,
                        ((lam + 2.0 * mu) * nay * nby + mu * nax * nbx) * scale,
                    );
                }
            }
        }
    }
    for n in 0..mesh.num_nodes() {
        if mesh.is_boundary_node(n) {
            let [x, y] = mesh.coords[n];
            let (ux, uy) = load.boundary_displacement(x, y);
            sys.constrain(2 * n, ux);
            sys.constrain(2 * n + 1, uy);
        }
    }
    sys.solve_spd()
}

/// Ψ₊ (mJ/mm³) at every quadrature point of the current displacement field.
fn psi_plus_field(mesh: &RveMesh, mat: &MaterialParams, u: &[f64]) -> Vec<[f64; 4]> {
    let h = mesh.h();
    mesh.elems
        .iter()
        .map(|conn| {
            let mut out = [0.0; 4];
            for (q, &([xi, eta], _)) in gauss_points().iter().enumerate() {
                let (dndx, dndy) = shape_grad(xi, eta, h);
                let e = strain_at(u, conn, &dndx, &dndy);
                out[q] = psi_plus(&e, mat) * GPA_TO_MJ_PER_MM3;
            }
            out
        })
        .collect()
}

/// Alternate minimization at a fixed load, starting from an equilibrated
/// input phase field `x0` with `d = 1` pinned at `pinned`.
///
/// Returns the evolved phase field, the converged state, and diagnostics.
pub fn solve_evolution(
    x0: &[f64],
    pinned: &[usize],
    mesh: &RveMesh,
    mat: &MaterialParams,
    load: &LoadCase,
    ctrl: &SolverControls,
) -> Result<(Vec<f64>, FieldState, SolveStats)> {
    if x0.len() != mesh.num_nodes() {
        return Err(Error::Dimension(format!(
            "input field has {} entries, mesh has {} nodes",
            x0.len(),
            mesh.num_nodes()
        )));
    }
    let mut state = FieldState {
        d: x0.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        u: vec![0.0; 2 * mesh.num_nodes()],
    };
    let mut trace = Vec::with_capacity(2 * ctrl.max_iter);
    let mut increment = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for m in 0..ctrl.max_iter {
        iterations = m + 1;
        // u-step: sign field lagged from the previous iterate (all '+' when
        // u = 0 on the first pass).
        let signs = trace_signs(mesh, &state.u);
        state.u = solve_displacement_subproblem(mesh, mat, &state.d, &signs, load)?;
        trace.push(energy(&state, mesh, mat)?);
        // d-step.
        let psi = psi_plus_field(mesh, mat, &state.u);
        let d_new = solve_phase_subproblem(mesh, mat, &psi, pinned)?;
        increment = state
            .d
            .iter()
            .zip(&d_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        state.d = d_new;
        trace.push(energy(&state, mesh, mat)?);
        if increment < ctrl.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Solver(format!(
            "staggered solve did not converge after {} iterations; last ‖Δd‖_∞ = {:.3e}",
            ctrl.max_iter, increment
        )));
    }
    let stats = SolveStats {
        iterations,
        converged,
        final_increment: increment,
        energy_trace: trace,
    };
    Ok((state.d.clone(), state, stats))
}

/// Volume average of the stress over the RVE, with the out-of-plane
/// component closed pointwise as `σz = ν_phase (σx + σy)`.
pub fn homogenize(
    state: &FieldState,
    mesh: &RveMesh,
    mat: &MaterialParams,
) -> Result<HomogenizedStress> {
    average_stress(state, mesh, mat, |_| true)
}

/// Volume average of the stress over the elements selected by `filter`,
/// normalized by the full RVE area (so `filter = |_| true` is the
/// homogenized stress).
pub fn average_stress<F: Fn(usize) -> bool>(
    state: &FieldState,
    mesh: &RveMesh,
    mat: &MaterialParams,
    filter: F,
) -> Result<HomogenizedStress> {
    let nn = mesh.num_nodes();
    if state.d.len() != nn || state.u.len() != 2 * nn {
        return Err(Error::Dimension("state does not match the mesh".into()));
    }
    let h = mesh.h();
    let jac = 0.25 * h * h;
    let area = (2.0 * mesh.half_width) * (2.0 * mesh.half_width);
    let (mut sx, mut sy, mut sz, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (e, conn) in mesh.elems.iter().enumerate() {
        if !filter(e) {
            continue;
        }
        let phase = mesh.elem_phase[e];
        let nu = match phase {
            Phase::Matrix => mat.nu_matrix(),
            Phase::Fiber => mat.nu_fiber(),
        };
        for &([xi, eta], w) in gauss_points().iter() {
            let nfun = shape(xi, eta);
            let (dndx, dndy) = shape_grad(xi, eta, h);
            let strain = strain_at(&state.u, conn, &dndx, &dndy);
            let mut dq = 0.0;
            for a in 0..4 {
                dq += nfun[a] * state.d[conn[a]];
            }
            let (qx, qy, qxy) = stress(&strain, dq.clamp(0.0, 1.0), phase, mat);
            let scale = w * jac / area;
            sx += qx * scale;
            sy += qy * scale;
            sz += nu * (qx + qy) * scale;
            sxy += qxy * scale;
        }
    }
    Ok(HomogenizedStress { sx, sy, sz, sxy })
}

/// Exposed for consistency tests: Ψ₊, Ψ₋ and the split stress at a single
/// strain/damage pair.
#[doc(hidden)]
pub mod pointwise {
    use super::*;

    pub fn split_energy(exx: f64, eyy: f64, exy: f64, d: f64, mat: &MaterialParams) -> f64 {
        let e = Strain {
            xx: exx,
            yy: eyy,
            xy: exy,
        };
        degradation(d, mat.k_res) * psi_plus(&e, mat) + psi_minus(&e, mat)
    }

    pub fn split_stress(
        exx: f64,
        eyy: f64,
        exy: f64,
        d: f64,
        mat: &MaterialParams,
    ) -> (f64, f64, f64) {
        let e = Strain {
            xx: exx,
            yy: eyy,
            xy: exy,
        };
        stress(&e, d, Phase::Matrix, mat)
    }

    pub fn isotropic_energy(exx: f64, eyy: f64, exy: f64, mat: &MaterialParams) -> f64 {
        let tr = exx + eyy;
        0.5 * mat.lambda_m * tr * tr + mat.mu_m * (exx * exx + eyy * eyy + 2.0 * exy * exy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat_unit(l: f64) -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 2.0, 3.0, 0.5, l, 1e-6).unwrap()
    }

    /// All-matrix unit-scale mesh (L = 1, no fiber).
    fn matrix_mesh(n: usize, l: f64) -> RveMesh {
        build_mesh(1.0, n, 0.0, l).unwrap()
    }

    #[test]
    fn energy_of_zero_state_is_zero() {
        let mesh = matrix_mesh(8, 1.0);
        let mat = mat_unit(1.0);
        let e = energy(&FieldState::zeros(mesh.num_nodes()), &mesh, &mat).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn constant_damage_gives_closed_form_crack_energy() {
        let mesh = matrix_mesh(8, 1.0);
        let mat = mat_unit(1.0);
        let d0 = 0.3;
        let state = FieldState {
            d: vec![d0; mesh.num_nodes()],
            u: vec![0.0; 2 * mesh.num_nodes()],
        };
        // u = 0 kills the elastic terms; ∇d = 0 kills the gradient term, so
        // Π_l = (g_c/2)(d₀²/l)·|𝓑|, |𝓑| = (2L)² = 4.
        let expected = 0.5 * mat.g_c * d0 * d0 / mat.l * 4.0;
        assert_relative_eq!(energy(&state, &mesh, &mat).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn uniform_strain_energy_matches_pointwise_density() {
        let mesh = matrix_mesh(6, 1.0);
        let mat = mat_unit(1.0);
        let (exx, eyy, exy) = (0.2, -0.35, 0.05);
        let mut u = vec![0.0; 2 * mesh.num_nodes()];
        for n in 0..mesh.num_nodes() {
            let [x, y] = mesh.coords[n];
            u[2 * n] = exx * x + exy * y;
            u[2 * n + 1] = exy * x + eyy * y;
        }
        let state = FieldState {
            d: vec![0.0; mesh.num_nodes()],
            u,
        };
        let density = pointwise::split_energy(exx, eyy, exy, 0.0, &mat);
        let expected = density * GPA_TO_MJ_PER_MM3 * 4.0;
        assert_relative_eq!(energy(&state, &mesh, &mat).unwrap(), expected, max_relative = 1e-10);
    }

    #[test]
    fn uniform_driving_force_gives_constant_stationary_damage() {
        let mesh = matrix_mesh(8, 1.0);
        let mat = mat_unit(1.0);
        let psi = 1.0;
        let qp = vec![[psi; 4]; mesh.num_elems()];
        // With no Dirichlet constraints the stationary field is spatially
        // constant: d = 2Ψ₊ / (2Ψ₊ + g_c/l).
        let d = solve_phase_subproblem(&mesh, &mat, &qp, &[]).unwrap();
        let expected = 2.0 * psi / (2.0 * psi + mat.g_c / mat.l);
        for v in d {
            assert_relative_eq!(v, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn equilibrated_crack_peaks_at_pin_and_decays() {
        let mesh = matrix_mesh(20, 0.2);
        let mat = mat_unit(0.2);
        let center = mesh.node_id(10, 10);
        let d = equilibrate_nodes(&mesh, &mat, &[center]).unwrap();
        assert_eq!(d[center], 1.0);
        for (n, v) in d.iter().enumerate() {
            assert!((0.0..=1.0).contains(v));
            if n != center {
                assert!(*v < 1.0);
            }
        }
        // Roughly exponential decay: five length scales out, the field is
        // nearly gone.
        let corner = mesh.node_id(0, 0);
        assert!(d[corner] < 0.05, "d at corner = {}", d[corner]);
    }

    #[test]
    fn displacement_patch_test_is_exact() {
        let mesh = matrix_mesh(6, 1.0);
        let mat = MaterialParams::new(121.15, 80.77, 105.58, 172.27, 2.7, 1.0, 1e-12).unwrap();
        let d = vec![0.0; mesh.num_nodes()];
        let signs = vec![[true; 4]; mesh.num_elems()];
        let load = LoadCase {
            eps_xx: 3e-4,
            eps_yy: 1.4e-4,
            eps_xy: -2e-4,
        };
        let u = solve_displacement_subproblem(&mesh, &mat, &d, &signs, &load).unwrap();
        for n in 0..mesh.num_nodes() {
            let [x, y] = mesh.coords[n];
            let (ux, uy) = load.boundary_displacement(x, y);
            assert!((u[2 * n] - ux).abs() < 1e-12, "node {n}: {} vs {ux}", u[2 * n]);
            assert!((u[2 * n + 1] - uy).abs() < 1e-12);
        }

        // The homogenized stress of the uniform state matches the pointwise
        // constitutive law, with σz closed as ν(σx + σy).
        let state = FieldState { d, u };
        let s = homogenize(&state, &mesh, &mat).unwrap();
        let (qx, qy, qxy) =
            pointwise::split_stress(load.eps_xx, load.eps_yy, load.eps_xy, 0.0, &mat);
        assert_relative_eq!(s.sx, qx, max_relative = 1e-9);
        assert_relative_eq!(s.sy, qy, max_relative = 1e-9);
        assert_relative_eq!(s.sxy, qxy, max_relative = 1e-9);
        assert_relative_eq!(s.sz, mat.nu_matrix() * (qx + qy), max_relative = 1e-9);
    }

    #[test]
    fn split_stress_is_energy_gradient() {
        let mat = mat_unit(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..50 {
            let exx: f64 = rng.gen_range(-1.0..1.0);
            let eyy: f64 = rng.gen_range(-1.0..1.0);
            let exy: f64 = rng.gen_range(-1.0..1.0);
            let d: f64 = rng.gen_range(0.0..1.0);
            // Stay away from the tr ε = 0 kink where Ψ is only C¹.
            if (exx + eyy).abs() < 1e-2 {
                continue;
            }
            let (sx, sy, sxy) = pointwise::split_stress(exx, eyy, exy, d, &mat);
            let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
            let gx = fd(&|t| pointwise::split_energy(exx + t, eyy, exy, d, &mat));
            let gy = fd(&|t| pointwise::split_energy(exx, eyy + t, exy, d, &mat));
            // ∂Ψ/∂ε₁₂ counts both off-diagonal entries, hence 2σxy.
            let gxy = fd(&|t| pointwise::split_energy(exx, eyy, exy + t, d, &mat));
            assert_relative_eq!(gx, sx, max_relative = 1e-5, epsilon = 1e-8);
            assert_relative_eq!(gy, sy, max_relative = 1e-5, epsilon = 1e-8);
            assert_relative_eq!(gxy, 2.0 * sxy, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn trace_signs_of_rest_state_are_positive() {
        let mesh = matrix_mesh(4, 1.0);
        let signs = trace_signs(&mesh, &vec![0.0; 2 * mesh.num_nodes()]);
        assert!(signs.iter().all(|s| s.iter().all(|&b| b)));
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let mesh = matrix_mesh(4, 1.0);
        let mat = mat_unit(1.0);
        let signs = vec![[true; 4]; mesh.num_elems()];
        let load = LoadCase::uniaxial_yy(1e-4);
        assert!(matches!(
            solve_displacement_subproblem(&mesh, &mat, &[0.0; 3], &signs, &load),
            Err(Error::Dimension(_))
        ));
        let bad = FieldState {
            d: vec![0.0; 2],
            u: vec![0.0; 2 * mesh.num_nodes()],
        };
        assert!(matches!(energy(&bad, &mesh, &mat), Err(Error::Dimension(_))));
    }

    #[test]
    fn random_seed_is_valid_and_reproducible() {
        let mesh = build_mesh(250.0, 32, 100.0, 40.0).unwrap();
        let a = random_seed(&mesh, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = random_seed(&mesh, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        a.validate(&mesh).unwrap();
    }

    #[test]
    fn evolution_converges_and_extends_the_crack() {
        let mesh = build_mesh(250.0, 32, 100.0, 40.0).unwrap();
        let mat = MaterialParams::default();
        // Two-edge vertical path in the matrix, left of the fiber.
        let seed = CrackSeed::new(
            [mesh.node_id(2, 7), mesh.node_id(2, 8), mesh.node_id(2, 9)],
            &mesh,
        )
        .unwrap();
        let x0 = equilibrate_seed(&seed, &mesh, &mat).unwrap();
        let load = LoadCase::uniaxial_yy(1.4e-4);
        let ctrl = SolverControls::default();
        let (z, state, stats) = solve_evolution(&x0, &seed.nodes, &mesh, &mat, &load, &ctrl).unwrap();
        assert!(stats.converged);
        assert_eq!(z, state.d);
        for &n in &seed.nodes {
            assert_eq!(z[n], 1.0);
        }
        // Loading cannot heal the equilibrated input anywhere by more than
        // the solver tolerance, and should grow it somewhere.
        let grown = z
            .iter()
            .zip(&x0)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(grown > 1e-3, "max growth = {grown}");
    }
}
