//! Finite-difference Laplace solve over the cylindrical voxel grid.
//!
//! The PDE is Laplace's equation in cylindrical coordinates,
//!
//! ```text
//! (1/r) ∂p/∂r + ∂²p/∂r² + (1/r²) ∂²p/∂θ² + ∂²p/∂z² = 0
//! ```
//!
//! discretized with central differences at voxel centers. Dirichlet rows pin
//! the inner radial ring to a positive value, the outer ring to a negative
//! value, the voxels nearest the patient surface to zero, and the two z-cap
//! planes to a 2D polar solve with the same radial conditions. Interior rows
//! are scaled by dr² so their coefficients are O(1); this leaves the solution
//! unchanged but keeps the least-squares weighting of the fitting stage
//! independent of the grid resolution.

use crate::error::{Error, Result};
use crate::grid::{surface_boundary_voxels, CylindricalGrid, VoxelIndex};
use crate::sparse::{bicgstab, conjugate_gradient, CsrMatrix};
use crate::surface::SurfaceModel;

/// Default relative tolerance on ‖Lp − b‖∞ / ‖b‖∞.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-8;
/// Default iteration cap for the field solves.
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Dirichlet values for the radial boundaries. The surface condition is
/// always zero and is not configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub inner_value: f64,
    pub outer_value: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec {
            inner_value: 1.0,
            outer_value: -1.0,
        }
    }
}

impl BoundarySpec {
    /// Pipeline validation: the signs must oppose so the solved field is
    /// positive inside the surface shell and negative outside. Assembly
    /// itself accepts any values (a constant field is still harmonic).
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_value.is_finite() && self.outer_value.is_finite()) {
            return Err(Error::Config("boundary values must be finite".into()));
        }
        if self.inner_value * self.outer_value >= 0.0 {
            return Err(Error::Config(format!(
                "inner ({}) and outer ({}) boundary values must have opposite signs",
                self.inner_value, self.outer_value
            )));
        }
        Ok(())
    }
}

/// One scalar potential value per voxel, ordered by the grid's flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
}

impl PotentialField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("potential field has non-finite values".into()));
        }
        Ok(())
    }
}

/// Collision query: a voxel is inside the patient iff its potential is
/// strictly positive.
pub fn is_inside(field: &PotentialField, flat: usize) -> bool {
    field.values[flat] > 0.0
}

/// Assembled linear system L p = b plus the Dirichlet mask used to build it.
#[derive(Debug, Clone)]
pub struct LaplaceSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// True on rows that carry a Dirichlet condition.
    pub dirichlet: Vec<bool>,
    pub grid: CylindricalGrid,
}

/// Stencil coefficients at one radial position, scaled by dr².
struct Stencil {
    radial_plus: f64,
    radial_minus: f64,
    angular: f64,
    axial: f64,
    center: f64,
}

fn stencil_at(grid: &CylindricalGrid, ir: usize, with_z: bool) -> Stencil {
    let rc = grid.r_center(ir);
    let dr2 = grid.dr * grid.dr;
    let radial_plus = 1.0 + grid.dr / (2.0 * rc);
    let radial_minus = 1.0 - grid.dr / (2.0 * rc);
    let angular = dr2 / (rc * rc * grid.dtheta * grid.dtheta);
    let axial = if with_z { dr2 / (grid.dz * grid.dz) } else { 0.0 };
    Stencil {
        radial_plus,
        radial_minus,
        angular,
        axial,
        center: -2.0 - 2.0 * angular - 2.0 * axial,
    }
}

/// Solves the 2D polar Laplace problem (no z terms) on the grid's (r, θ)
/// plane: inner/outer Dirichlet rings from `boundary`, optional zero rows at
/// the voxels nearest the given per-θ surface radii. The result (indexed
/// ir + nr·iθ) is what the 3D assembly pins the z-cap planes to.
pub fn solve_polar_slice(
    grid: &CylindricalGrid,
    boundary: &BoundarySpec,
    surface_radii: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<f64>> {
    grid.validate()?;
    if let Some(radii) = surface_radii {
        if radii.len() != grid.ntheta {
            return Err(Error::Dimension(format!(
                "expected {} surface radii, got {}",
                grid.ntheta,
                radii.len()
            )));
        }
    }
    let (nr, ntheta) = (grid.nr, grid.ntheta);
    let n = nr * ntheta;
    let mut dirichlet: Vec<Option<f64>> = vec![None; n];
    for it in 0..ntheta {
        dirichlet[nr * it] = Some(boundary.inner_value);
        dirichlet[nr - 1 + nr * it] = Some(boundary.outer_value);
        if let Some(radii) = surface_radii {
            let ir = grid.nearest_radial_center(radii[it])?;
            dirichlet[ir + nr * it] = Some(0.0);
        }
    }

    let mut triplets = Vec::with_capacity(5 * n);
    let mut rhs = vec![0.0; n];
    for it in 0..ntheta {
        for ir in 0..nr {
            let row = ir + nr * it;
            if let Some(value) = dirichlet[row] {
                triplets.push((row, row, 1.0));
                rhs[row] = value;
                continue;
            }
            let s = stencil_at(grid, ir, false);
            triplets.push((row, row, s.center));
            triplets.push((row, ir + 1 + nr * it, s.radial_plus));
            triplets.push((row, ir - 1 + nr * it, s.radial_minus));
            let it_prev = (it + ntheta - 1) % ntheta;
            let it_next = (it + 1) % ntheta;
            triplets.push((row, ir + nr * it_prev, s.angular));
            triplets.push((row, ir + nr * it_next, s.angular));
        }
    }
    let matrix = CsrMatrix::from_triplets(n, n, &triplets)?;
    robust_solve(&matrix, &rhs, tol, DEFAULT_MAX_ITER)
}

/// BiCGSTAB first; on breakdown or stagnation, retries with conjugate
/// gradient on the SPD normal equations.
fn robust_solve(matrix: &CsrMatrix, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    match bicgstab(matrix, rhs, tol, max_iter) {
        Ok((x, _)) => Ok(x),
        Err(_) => {
            let gram = matrix.gram()?;
            let mut atb = vec![0.0; rhs.len()];
            matrix.matvec_transpose(rhs, &mut atb);
            let (x, _) = conjugate_gradient(&gram, &atb, tol * 1e-2, max_iter)?;
            Ok(x)
        }
    }
}

/// Assembles the 3D system: 7-point stencil on interior voxels, identity
/// rows at the inner/outer rings, the z caps (pinned to the polar-slice
/// solution at each cap), and the surface voxels (pinned to zero) when a
/// surface model is given.
pub fn assemble_laplace(
    grid: &CylindricalGrid,
    surface: Option<&SurfaceModel>,
    boundary: &BoundarySpec,
) -> Result<LaplaceSystem> {
    grid.validate()?;
    let n = grid.num_voxels();
    let mut dirichlet: Vec<Option<f64>> = vec![None; n];

    // radial rings
    for iz in 0..grid.nz {
        for it in 0..grid.ntheta {
            let inner = grid.flat_index(VoxelIndex {
                ir: 0,
                itheta: it,
                iz,
            });
            let outer = grid.flat_index(VoxelIndex {
                ir: grid.nr - 1,
                itheta: it,
                iz,
            });
            dirichlet[inner] = Some(boundary.inner_value);
            dirichlet[outer] = Some(boundary.outer_value);
        }
    }

    // z caps: 2D polar solves at the cap planes
    let cap_tol = 1e-12;
    for iz in [0, grid.nz - 1] {
        let cap_radii: Option<Vec<f64>> = surface.map(|s| {
            (0..grid.ntheta)
                .map(|it| s.radius_at(grid.theta_center(it), grid.z_center(iz)))
                .collect()
        });
        let cap = solve_polar_slice(grid, boundary, cap_radii.as_deref(), cap_tol)?;
        for it in 0..grid.ntheta {
            for ir in 0..grid.nr {
                let flat = grid.flat_index(VoxelIndex {
                    ir,
                    itheta: it,
                    iz,
                });
                dirichlet[flat] = Some(cap[ir + grid.nr * it]);
            }
        }
    }

    // surface shell: zero rows, one voxel per (θ, z) column
    if let Some(s) = surface {
        for flat in surface_boundary_voxels(s, grid)? {
            dirichlet[flat] = Some(0.0);
        }
    }

    let mut triplets = Vec::with_capacity(7 * n);
    let mut rhs = vec![0.0; n];
    for iz in 0..grid.nz {
        for it in 0..grid.ntheta {
            for ir in 0..grid.nr {
                let v = VoxelIndex {
                    ir,
                    itheta: it,
                    iz,
                };
                let row = grid.flat_index(v);
                if let Some(value) = dirichlet[row] {
                    triplets.push((row, row, 1.0));
                    rhs[row] = value;
                    continue;
                }
                let s = stencil_at(grid, ir, true);
                triplets.push((row, row, s.center));
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex { ir: ir + 1, ..v }),
                    s.radial_plus,
                ));
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex { ir: ir - 1, ..v }),
                    s.radial_minus,
                ));
                let it_prev = (it + grid.ntheta - 1) % grid.ntheta;
                let it_next = (it + 1) % grid.ntheta;
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex {
                        itheta: it_prev,
                        ..v
                    }),
                    s.angular,
                ));
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex {
                        itheta: it_next,
                        ..v
                    }),
                    s.angular,
                ));
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex { iz: iz + 1, ..v }),
                    s.axial,
                ));
                triplets.push((
                    row,
                    grid.flat_index(VoxelIndex { iz: iz - 1, ..v }),
                    s.axial,
                ));
            }
        }
    }

    Ok(LaplaceSystem {
        matrix: CsrMatrix::from_triplets(n, n, &triplets)?,
        rhs,
        dirichlet: dirichlet.iter().map(Option::is_some).collect(),
        grid: *grid,
    })
}

/// Solves L p = b to ‖Lp − b‖∞ ≤ tol·‖b‖∞. BiCGSTAB first; if it breaks
/// down, retries on the SPD normal equations with conjugate gradient.
pub fn solve_laplace_with(
    system: &LaplaceSystem,
    tol: f64,
    max_iter: usize,
) -> Result<PotentialField> {
    let b = &system.rhs;
    let norm_inf = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if norm_inf == 0.0 {
        return Ok(PotentialField {
            values: vec![0.0; b.len()],
        });
    }
    let norm_2 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // ‖r‖∞ ≤ ‖r‖₂, so a 2-norm target of tol·‖b‖∞ guarantees the contract
    let tol_2 = (tol * norm_inf / norm_2).min(tol);

    let values = robust_solve(&system.matrix, b, tol_2, max_iter)?;

    let residual = system.matrix.residual_inf(&values, b);
    if residual > tol * norm_inf {
        return Err(Error::Solver(format!(
            "field solve stalled: ‖Lp−b‖∞ = {residual:.3e} exceeds {:.3e}",
            tol * norm_inf
        )));
    }
    let field = PotentialField { values };
    field.validate()?;
    Ok(field)
}

/// [`solve_laplace_with`] at the default tolerance and iteration cap.
pub fn solve_laplace(system: &LaplaceSystem) -> Result<PotentialField> {
    solve_laplace_with(system, DEFAULT_SOLVE_TOL, DEFAULT_MAX_ITER)
}
