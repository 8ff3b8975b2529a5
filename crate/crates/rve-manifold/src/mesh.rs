//! Structured quadrilateral mesh over the RVE `(-L, L)²`, fiber/matrix
//! element tagging, and the bilinear (Q1) reference element with 2×2 Gauss
//! quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Material phase of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Matrix,
    Fiber,
}

/// Mesh configuration, persisted with datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Half-width L of the square domain (mm).
    pub half_width: f64,
    /// Elements per side.
    pub n: usize,
    /// Fiber radius (mm).
    pub fiber_radius: f64,
}

/// Structured mesh of square bilinear quadrilaterals over `(-L, L)²`.
///
/// Nodes are numbered row-major from `(-L, -L)`; element `e = ey*nx + ex`
/// has counter-clockwise connectivity starting at its lower-left node.
#[derive(Debug, Clone)]
pub struct RveMesh {
    pub half_width: f64,
    pub nx: usize,
    pub ny: usize,
    pub fiber_radius: f64,
    pub coords: Vec<[f64; 2]>,
    pub elems: Vec<[usize; 4]>,
    pub elem_phase: Vec<Phase>,
    /// Nodes incident to at least one fiber element (phase field pinned to 0).
    fiber_nodes: Vec<bool>,
}

/// Material parameters (moduli in GPa, g_c in mJ/mm², lengths in mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda_m: f64,
    pub mu_m: f64,
    pub lambda_f: f64,
    pub mu_f: f64,
    pub g_c: f64,
    pub l: f64,
    pub k_res: f64,
}

/// 1 GPa expressed as an energy density in mJ/mm³; keeps the elastic terms
/// (GPa·strain²) and the crack term (g_c in mJ/mm² over l in mm) in one
/// consistent energy unit.
pub const GPA_TO_MJ_PER_MM3: f64 = 1000.0;

impl MaterialParams {
    /// Table-style constructor; validates positivity.
    pub fn new(
        lambda_m: f64,
        mu_m: f64,
        lambda_f: f64,
        mu_f: f64,
        g_c: f64,
        l: f64,
        k_res: f64,
    ) -> Result<Self> {
        let p = MaterialParams {
            lambda_m,
            mu_m,
            lambda_f,
            mu_f,
            g_c,
            l,
            k_res,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lambda_m", self.lambda_m),
            ("mu_m", self.mu_m),
            ("lambda_f", self.lambda_f),
            ("mu_f", self.mu_f),
            ("g_c", self.g_c),
            ("l", self.l),
            ("k_res", self.k_res),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.k_res >= 1.0 {
            return Err(Error::Config(format!(
                "k_res must satisfy 0 < k_res << 1, got {}",
                self.k_res
            )));
        }
        Ok(())
    }

    /// Bulk modulus K = λ + 2μ/3 (GPa).
    pub fn bulk_modulus(&self) -> f64 {
        self.lambda_m + 2.0 * self.mu_m / 3.0
    }

    /// Matrix Poisson ratio ν = λ / (2(λ+μ)).
    pub fn nu_matrix(&self) -> f64 {
        self.lambda_m / (2.0 * (self.lambda_m + self.mu_m))
    }

    /// Fiber Poisson ratio.
    pub fn nu_fiber(&self) -> f64 {
        self.lambda_f / (2.0 * (self.lambda_f + self.mu_f))
    }
}

/// Defaults from the high-fidelity simulation setup.
impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            lambda_m: 121.15,
            mu_m: 80.77,
            lambda_f: 105.58,
            mu_f: 172.27,
            g_c: 2.7,
            l: 40.0,
            k_res: 1e-6,
        }
    }
}

/// Builds the structured mesh.
///
/// Fails with a message naming the violated inequality when `n < 4`, the
/// fiber is not strictly interior (`fiber_radius + h >= L`), or the mesh is
/// too coarse for the length scale (`h > l/2`).
pub fn build_mesh(half_width: f64, n: usize, fiber_radius: f64, l: f64) -> Result<RveMesh> {
    if !(half_width > 0.0) {
        return Err(Error::Config(format!("L must be > 0, got {half_width}")));
    }
    if n < 4 {
        return Err(Error::Config(format!("n >= 4 required, got n = {n}")));
    }
    if fiber_radius < 0.0 {
        return Err(Error::Config(format!(
            "fiber_radius must be >= 0, got {fiber_radius}"
        )));
    }
    let h = 2.0 * half_width / n as f64;
    if fiber_radius + h >= half_width {
        return Err(Error::Config(format!(
            "fiber not strictly interior: fiber_radius + h = {} + {} >= L = {}",
            fiber_radius, h, half_width
        )));
    }
    if h > l / 2.0 {
        return Err(Error::Config(format!(
            "mesh too coarse for the length scale: h = {} > l/2 = {}",
            h,
            l / 2.0
        )));
    }

    let nn = n + 1;
    let mut coords = Vec::with_capacity(nn * nn);
    for j in 0..nn {
        for i in 0..nn {
            coords.push([
                -half_width + h * i as f64,
                -half_width + h * j as f64,
            ]);
        }
    }
    let mut elems = Vec::with_capacity(n * n);
    let mut elem_phase = Vec::with_capacity(n * n);
    for ey in 0..n {
        for ex in 0..n {
            let n0 = ey * nn + ex;
            elems.push([n0, n0 + 1, n0 + nn + 1, n0 + nn]);
            let cx = -half_width + h * (ex as f64 + 0.5);
            let cy = -half_width + h * (ey as f64 + 0.5);
            let phase = if (cx * cx + cy * cy).sqrt() <= fiber_radius {
                Phase::Fiber
            } else {
                Phase::Matrix
            };
            elem_phase.push(phase);
        }
    }
    let mut fiber_nodes = vec![false; nn * nn];
    for (e, conn) in elems.iter().enumerate() {
        if elem_phase[e] == Phase::Fiber {
            for &nd in conn {
                fiber_nodes[nd] = true;
            }
        }
    }
    Ok(RveMesh {
        half_width,
        nx: n,
        ny: n,
        fiber_radius,
        coords,
        elems,
        elem_phase,
        fiber_nodes,
    })
}

impl RveMesh {
    pub fn config(&self) -> MeshConfig {
        MeshConfig {
            half_width: self.half_width,
            n: self.nx,
            fiber_radius: self.fiber_radius,
        }
    }

    /// Mesh size h = 2L/n.
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    /// Node count 𝒟.
    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_grid_pos(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (i, j) = self.node_grid_pos(node);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// True when the node touches a fiber element.
    pub fn is_fiber_node(&self, node: usize) -> bool {
        self.fiber_nodes[node]
    }

    /// True when every element incident to the node is matrix-tagged.
    pub fn is_matrix_node(&self, node: usize) -> bool {
        !self.fiber_nodes[node]
    }

    /// Whether two nodes share a mesh edge (axis-aligned unit step).
    pub fn nodes_share_edge(&self, a: usize, b: usize) -> bool {
        let (ai, aj) = self.node_grid_pos(a);
        let (bi, bj) = self.node_grid_pos(b);
        (ai == bi && aj.abs_diff(bj) == 1) || (aj == bj && ai.abs_diff(bi) == 1)
    }

    /// Elements containing the edge (a, b); empty when not an edge.
    pub fn edge_elements(&self, a: usize, b: usize) -> Vec<usize> {
        if !self.nodes_share_edge(a, b) {
            return Vec::new();
        }
        let (ai, aj) = self.node_grid_pos(a);
        let (bi, bj) = self.node_grid_pos(b);
        let mut out = Vec::new();
        if aj == bj {
            // horizontal edge between columns min(ai,bi) and +1, row aj
            let ex = ai.min(bi);
            if aj > 0 {
                out.push((aj - 1) * self.nx + ex);
            }
            if aj < self.ny {
                out.push(aj * self.nx + ex);
            }
        } else {
            let ey = aj.min(bj);
            if ai > 0 {
                out.push(ey * self.nx + ai - 1);
            }
            if ai < self.nx {
                out.push(ey * self.nx + ai);
            }
        }
        out
    }
}

/// 2×2 Gauss rule on the reference square [-1,1]²: four points at
/// (±1/√3, ±1/√3), each with weight 1.
pub fn gauss_points() -> [([f64; 2], f64); 4] {
    let g = 1.0 / 3.0_f64.sqrt();
    [
        ([-g, -g], 1.0),
        ([g, -g], 1.0),
        ([g, g], 1.0),
        ([-g, g], 1.0),
    ]
}

/// Bilinear shape functions at a reference point, local nodes ordered CCW
/// from (-1,-1).
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

/// Physical-coordinate shape gradients for a square element of size h:
/// returns `[[dN/dx; 4], [dN/dy; 4]]`.
pub fn shape_grad(xi: f64, eta: f64, h: f64) -> ([f64; 4], [f64; 4]) {
    let s = 2.0 / h; // d(xi)/dx for the affine map
    let dxi = [
        -0.25 * (1.0 - eta),
        0.25 * (1.0 - eta),
        0.25 * (1.0 + eta),
        -0.25 * (1.0 + eta),
    ];
    let deta = [
        -0.25 * (1.0 - xi),
        -0.25 * (1.0 + xi),
        0.25 * (1.0 + xi),
        0.25 * (1.0 - xi),
    ];
    (
        [dxi[0] * s, dxi[1] * s, dxi[2] * s, dxi[3] * s],
        [deta[0] * s, deta[1] * s, deta[2] * s, deta[3] * s],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_mesh() {
        let m = build_mesh(500.0, 50, 200.0, 40.0).unwrap();
        assert_eq!(m.h(), 20.0);
        assert_eq!(m.num_nodes(), 2601);
        assert!(m.h() <= 40.0 / 2.0);
    }

    #[test]
    fn tiny_mesh_fiber_tagging_by_centroid() {
        // 16 centroids at (±0.25,±0.25), (±0.75, ·): the closest four sit at
        // distance sqrt(2)*0.25 ≈ 0.354 > 0.3, so no element is fiber-tagged.
        let m = build_mesh(1.0, 4, 0.3, 1.0).unwrap();
        assert_eq!(m.num_nodes(), 25);
        assert_eq!(m.num_elems(), 16);
        let fiber = m
            .elem_phase
            .iter()
            .filter(|&&p| p == Phase::Fiber)
            .count();
        assert_eq!(fiber, 0);
        // Enlarging the radius past 0.354 captures exactly the 4 center elements.
        let m2 = build_mesh(1.0, 4, 0.4, 2.0).unwrap();
        let fiber2 = m2
            .elem_phase
            .iter()
            .filter(|&&p| p == Phase::Fiber)
            .count();
        assert_eq!(fiber2, 4);
    }

    #[test]
    fn fiber_not_interior_rejected() {
        let err = build_mesh(1.0, 4, 0.9, 4.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("strictly interior"), "{msg}");
    }

    #[test]
    fn coarse_mesh_rejected() {
        let err = build_mesh(500.0, 8, 100.0, 40.0).unwrap_err();
        assert!(err.to_string().contains("h ="), "{err}");
    }

    #[test]
    fn small_n_rejected() {
        assert!(build_mesh(1.0, 3, 0.1, 2.0).is_err());
    }

    #[test]
    fn gauss_weights_sum_to_reference_measure() {
        let pts = gauss_points();
        let s: f64 = pts.iter().map(|&(_, w)| w).sum();
        assert_eq!(s, 4.0);
    }

    #[test]
    fn constant_integrand_gives_element_area() {
        let m = build_mesh(1.0, 4, 0.0, 2.0).unwrap();
        let h = m.h();
        let jac = (h / 2.0) * (h / 2.0);
        let integral: f64 = gauss_points().iter().map(|&(_, w)| w * jac).sum();
        assert!((integral - h * h).abs() < 1e-14);
    }

    #[test]
    fn bilinear_xy_integrates_to_zero_on_reference_square() {
        let integral: f64 = gauss_points()
            .iter()
            .map(|&([xi, eta], w)| w * xi * eta)
            .sum();
        assert!(integral.abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity() {
        for &([xi, eta], _) in gauss_points().iter() {
            let s: f64 = shape(xi, eta).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn derived_constants_consistent() {
        let p = MaterialParams::default();
        assert_eq!(p.bulk_modulus(), p.lambda_m + 2.0 * p.mu_m / 3.0);
        let nu = p.nu_matrix();
        assert!(nu > 0.0 && nu < 0.5);
    }
}
