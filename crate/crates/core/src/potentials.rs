//! Laplace transmission problem on a reference shape, solved with a
//! Nyström single-layer formulation, and the resulting polarization tensor.
//!
//! With `S phi(x) = int G(x - y) phi(y) ds`, `G = log|x| / (2 pi)`, the normal
//! derivative of `S phi` has the limits `(+-1/2 + K*) phi` from outside and
//! inside respectively. The transmission condition
//! `k dPhi/dnu|inside - dPhi/dnu|outside = -nu` becomes
//! `((k + 1)/2 - (k - 1) K*) phi = nu`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InclusionShape;

/// Quadrature nodes on the boundary of a reference shape.
#[derive(Clone, Debug)]
pub struct ShapeBoundary {
    pub params: Vec<f64>,
    pub nodes: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    /// Arclength weights `|z'(t_j)| 2 pi / n`.
    pub weights: Vec<f64>,
    pub speed: Vec<f64>,
    pub curvature: Vec<f64>,
    pub area: f64,
}

impl ShapeBoundary {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int nu_k y_l ds`, which equals `|B| delta_kl` for a closed curve.
    pub fn moment(&self, k: usize, l: usize) -> f64 {
        (0..self.len())
            .map(|j| self.normals[j][k] * self.nodes[j][l] * self.weights[j])
            .sum()
    }
}

pub fn discretize_shape(shape: &InclusionShape, n: usize) -> Result<ShapeBoundary> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 nodes, got {n}")));
    }
    let curve = shape.curve()?;
    let mut b = ShapeBoundary {
        params: Vec::with_capacity(n),
        nodes: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        speed: Vec::with_capacity(n),
        curvature: Vec::with_capacity(n),
        area: curve.area(),
    };
    for j in 0..n {
        let t = 2.0 * PI * j as f64 / n as f64;
        let z = curve.point(t);
        let d = curve.tangent(t);
        let dd = curve.second_derivative(t);
        let sp = d[0].hypot(d[1]);
        if !(sp > 1e-14) {
            return Err(Error::DegenerateShape("parametrization has zero speed".into()));
        }
        b.params.push(t);
        b.nodes.push(z);
        b.normals.push([d[1] / sp, -d[0] / sp]);
        b.weights.push(sp * 2.0 * PI / n as f64);
        b.speed.push(sp);
        b.curvature.push((d[0] * dd[1] - d[1] * dd[0]) / sp.powi(3));
    }
    Ok(b)
}

/// Which one-sided normal derivative enters the tensor integrand.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSide {
    /// Limit from inside the shape; gives `2|B|/(k+1)` for a disk.
    #[default]
    Inside,
    /// Limit from outside the shape; gives `2k|B|/(k+1)` for a disk.
    Outside,
}

#[derive(Clone, Debug)]
pub struct TransmissionSolution {
    pub k: f64,
    /// Single-layer density for each Cartesian component of `Phi`.
    pub density: [Vec<f64>; 2],
    pub dphi_inside: [Vec<f64>; 2],
    pub dphi_outside: [Vec<f64>; 2],
}

impl TransmissionSolution {
    pub fn dphi(&self, side: DerivativeSide) -> &[Vec<f64>; 2] {
        match side {
            DerivativeSide::Inside => &self.dphi_inside,
            DerivativeSide::Outside => &self.dphi_outside,
        }
    }
}

/// Nyström matrix of the adjoint double-layer operator `K*`.
fn adjoint_double_layer(b: &ShapeBoundary) -> DMatrix<f64> {
    let n = b.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            b.curvature[i] / (4.0 * PI) * b.weights[j]
        } else {
            let dx = b.nodes[i][0] - b.nodes[j][0];
            let dy = b.nodes[i][1] - b.nodes[j][1];
            let r2 = dx * dx + dy * dy;
            (dx * b.normals[i][0] + dy * b.normals[i][1]) / (2.0 * PI * r2) * b.weights[j]
        }
    })
}

pub fn solve_transmission(b: &ShapeBoundary, k: f64) -> Result<TransmissionSolution> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("contrast must be positive, got {k}")));
    }
    let n = b.len();
    if k == 1.0 {
        let z = vec![0.0; n];
        return Ok(TransmissionSolution {
            k,
            density: [z.clone(), z.clone()],
            dphi_inside: [z.clone(), z.clone()],
            dphi_outside: [z.clone(), z],
        });
    }
    let kstar = adjoint_double_layer(b);
    let a = DMatrix::<f64>::identity(n, n) * (0.5 * (k + 1.0)) - &kstar * (k - 1.0);
    let lu = a.clone().lu();
    let mut density: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut inside: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut outside: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let rhs = DVector::from_fn(n, |i, _| b.normals[i][c]);
        let phi = lu
            .solve(&rhs)
            .ok_or_else(|| Error::IllConditioned(format!("singular system at k = {k}")))?;
        let residual = (&a * &phi - &rhs).norm() / rhs.norm();
        if !(residual < 1e-8) {
            return Err(Error::IllConditioned(format!(
                "relative residual {residual:.2e} at k = {k}"
            )));
        }
        let kphi = &kstar * &phi;
        inside[c] = (0..n).map(|i| -0.5 * phi[i] + kphi[i]).collect();
        outside[c] = (0..n).map(|i| 0.5 * phi[i] + kphi[i]).collect();
        density[c] = phi.iter().copied().collect();
    }
    Ok(TransmissionSolution {
        k,
        density,
        dphi_inside: inside,
        dphi_outside: outside,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationTensor {
    pub m: [[f64; 2]; 2],
    pub k: f64,
    pub nodes: usize,
    pub symmetry_defect: f64,
    pub convention: DerivativeSide,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<InclusionShape>,
}

impl PolarizationTensor {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1])
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = SymmetricEigen::new(self.matrix()).eigenvalues;
        [e[0].min(e[1]), e[0].max(e[1])]
    }

    pub fn frobenius(&self) -> f64 {
        self.matrix().norm()
    }
}

pub fn polarization_tensor(b: &ShapeBoundary, k: f64) -> Result<PolarizationTensor> {
    polarization_tensor_with(b, k, DerivativeSide::default())
}

pub fn polarization_tensor_with(
    b: &ShapeBoundary,
    k: f64,
    side: DerivativeSide,
) -> Result<PolarizationTensor> {
    let nodes = b.len();
    if k == 1.0 {
        return Ok(PolarizationTensor {
            m: [[b.area, 0.0], [0.0, b.area]],
            k,
            nodes,
            symmetry_defect: 0.0,
            convention: side,
            shape: None,
        });
    }
    let sol = solve_transmission(b, k)?;
    let d = sol.dphi(side);
    let mut m = [[0.0; 2]; 2];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..nodes)
                .map(|j| (b.normals[j][r] + (k - 1.0) * d[r][j]) * b.nodes[j][c] * b.weights[j])
                .sum();
        }
    }
    let full = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
    let symmetry_defect = (full - full.transpose()).norm() / full.norm();
    let off = 0.5 * (m[0][1] + m[1][0]);
    m[0][1] = off;
    m[1][0] = off;
    Ok(PolarizationTensor {
        m,
        k,
        nodes,
        symmetry_defect,
        convention: side,
        shape: None,
    })
}

/// Tensor of a shape at contrast `k`, recording the shape.
pub fn shape_tensor(
    shape: &InclusionShape,
    k: f64,
    nodes: usize,
    side: DerivativeSide,
) -> Result<PolarizationTensor> {
    let b = discretize_shape(shape, nodes)?;
    let mut t = polarization_tensor_with(&b, k, side)?;
    t.shape = Some(shape.clone());
    Ok(t)
}

/// Single-layer potential of `density` evaluated at the nodes themselves,
/// with the logarithmic singularity integrated exactly (needs an even node count).
pub fn single_layer_on_boundary(b: &ShapeBoundary, density: &[f64]) -> Result<Vec<f64>> {
    let n2 = b.len();
    if !n2.is_multiple_of(2) || density.len() != n2 {
        return Err(Error::InvalidArgument(
            "single-layer evaluation needs an even node count and a matching density".into(),
        ));
    }
    let n = n2 / 2;
    let psi: Vec<f64> = density.iter().zip(&b.speed).map(|(p, s)| p * s).collect();
    let mut out = vec![0.0; n2];
    for i in 0..n2 {
        let mut acc = 0.0;
        for j in 0..n2 {
            let d = b.params[i] - b.params[j];
            let mut r = -(PI / (n * n) as f64) * (n as f64 * d).cos();
            for m in 1..n {
                r -= (2.0 * PI / n as f64) * (m as f64 * d).cos() / m as f64;
            }
            let smooth = if i == j {
                b.speed[i].ln()
            } else {
                let dx = b.nodes[i][0] - b.nodes[j][0];
                let dy = b.nodes[i][1] - b.nodes[j][1];
                0.5 * (dx * dx + dy * dy).ln() - 0.5 * (4.0 * (0.5 * d).sin().powi(2)).ln()
            };
            acc += (0.5 * r + PI / n as f64 * smooth) * psi[j];
        }
        out[i] = acc / (2.0 * PI);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn unit_disk_nodes_and_moments() {
        let b = discretize_shape(&InclusionShape::disk(1.0), 64).unwrap();
        assert!(b.weights.iter().all(|w| (w - 2.0 * PI / 64.0).abs() < 1e-14));
        assert!(b.nodes.iter().all(|p| (p[0].hypot(p[1]) - 1.0).abs() < 1e-14));
        let s0: f64 = (0..64).map(|j| b.normals[j][0] * b.weights[j]).sum();
        let s1: f64 = (0..64).map(|j| b.normals[j][1] * b.weights[j]).sum();
        assert!(s0.abs() < 1e-12 && s1.abs() < 1e-12);
        assert!((b.moment(0, 0) - PI).abs() < 1e-12);
        assert!(b.moment(0, 1).abs() < 1e-12);
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(discretize_shape(&InclusionShape::disk(1.0), 8).is_err());
    }

    #[test]
    fn disk_normal_derivative_oracle() {
        let b = discretize_shape(&InclusionShape::disk(1.0), 64).unwrap();
        for k in [0.3, 3.0, 7.0] {
            let s = solve_transmission(&b, k).unwrap();
            for j in 0..64 {
                for c in 0..2 {
                    let want = -b.normals[j][c] / (k + 1.0);
                    assert!((s.dphi_inside[c][j] - want).abs() < 1e-12);
                }
            }
        }
        let s = solve_transmission(&b, 3.0).unwrap();
        assert!((s.dphi_inside[0][0] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn density_has_zero_mean() {
        let b = discretize_shape(&InclusionShape::ellipse(2.0, 1.0).rotated(0.4), 128).unwrap();
        let s = solve_transmission(&b, 5.0).unwrap();
        for c in 0..2 {
            let m: f64 = s.density[c].iter().zip(&b.weights).map(|(p, w)| p * w).sum();
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn unit_contrast_short_circuits() {
        let b = discretize_shape(&InclusionShape::star(1.0, 0.2, 5), 128).unwrap();
        let s = solve_transmission(&b, 1.0).unwrap();
        assert!(s.dphi_inside[0].iter().all(|v| *v == 0.0));
        let m = polarization_tensor(&b, 1.0).unwrap();
        assert!(rel(m.m[0][0], b.area) < 1e-12 && m.m[0][1] == 0.0);
    }

    #[test]
    fn disk_tensor_conventions() {
        let b = discretize_shape(&InclusionShape::disk(1.0), 64).unwrap();
        let m = polarization_tensor(&b, 2.0).unwrap();
        assert!(rel(m.m[0][0], 2.0 * PI / 3.0) < 1e-12);
        assert!(rel(m.m[1][1], 2.0 * PI / 3.0) < 1e-12);
        let o = polarization_tensor_with(&b, 2.0, DerivativeSide::Outside).unwrap();
        assert!(rel(o.m[0][0], 4.0 * PI / 3.0) < 1e-12);
    }

    #[test]
    fn ellipse_coarse_matches_refined() {
        let shape = InclusionShape::ellipse(2.0, 1.0);
        let fine = shape_tensor(&shape, 3.0, 1024, DerivativeSide::Inside).unwrap();
        let coarse = shape_tensor(&shape, 3.0, 64, DerivativeSide::Inside).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((fine.m[r][c] - coarse.m[r][c]).abs() <= 1e-6 * fine.frobenius());
            }
        }
    }

    #[test]
    fn single_layer_of_cosine_on_circle() {
        let b = discretize_shape(&InclusionShape::disk(1.0), 64).unwrap();
        let d: Vec<f64> = b.params.iter().map(|t| t.cos()).collect();
        let s = single_layer_on_boundary(&b, &d).unwrap();
        for (v, t) in s.iter().zip(&b.params) {
            assert!((v + 0.5 * t.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_contrast_rejected() {
        let b = discretize_shape(&InclusionShape::disk(1.0), 32).unwrap();
        assert!(solve_transmission(&b, -1.0).is_err());
        assert!(solve_transmission(&b, f64::NAN).is_err());
    }
}
