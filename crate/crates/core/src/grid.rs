//! Cylindrical voxel grid over the patient interior.
//!
//! Voxels are annular cells with constant steps in r, θ, z; the finite
//! difference nodes and all stored field values live at cell centers. The
//! flat ordering is v = ir + nr·(iθ + nθ·iz).

use crate::error::{Error, Result};
use crate::surface::{Cylindrical, SurfaceModel};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Index triple of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelIndex {
    pub ir: usize,
    pub itheta: usize,
    pub iz: usize,
}

/// Result of locating a point in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelQuery {
    Inside(VoxelIndex),
    Outside,
}

impl VoxelQuery {
    pub fn inside(self) -> Option<VoxelIndex> {
        match self {
            VoxelQuery::Inside(v) => Some(v),
            VoxelQuery::Outside => None,
        }
    }
}

/// Annular cylindrical grid: inner radial edge r0 > 0 (no axis singularity),
/// full θ circle with nθ·dθ = 2π, and axial span [z0, z0 + nz·dz].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylindricalGrid {
    pub r0: f64,
    pub dr: f64,
    pub nr: usize,
    pub dtheta: f64,
    pub ntheta: usize,
    pub z0: f64,
    pub dz: f64,
    pub nz: usize,
}

impl CylindricalGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) {
            return Err(Error::Config(format!(
                "inner radial edge r0 = {} must be > 0",
                self.r0
            )));
        }
        if !(self.dr > 0.0 && self.dtheta > 0.0 && self.dz > 0.0) {
            return Err(Error::Config("voxel steps must be > 0".into()));
        }
        if self.nr < 3 || self.ntheta < 3 || self.nz < 3 {
            return Err(Error::Config(format!(
                "grid needs ≥ 3 voxels per dimension, got ({}, {}, {})",
                self.nr, self.ntheta, self.nz
            )));
        }
        let closure = self.ntheta as f64 * self.dtheta;
        if (closure - TWO_PI).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "angular bins do not close the circle: nθ·dθ = {closure}"
            )));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.nr * self.ntheta * self.nz
    }

    pub fn flat_index(&self, v: VoxelIndex) -> usize {
        debug_assert!(v.ir < self.nr && v.itheta < self.ntheta && v.iz < self.nz);
        v.ir + self.nr * (v.itheta + self.ntheta * v.iz)
    }

    pub fn voxel_at(&self, flat: usize) -> VoxelIndex {
        let ir = flat % self.nr;
        let rest = flat / self.nr;
        VoxelIndex {
            ir,
            itheta: rest % self.ntheta,
            iz: rest / self.ntheta,
        }
    }

    pub fn r_center(&self, ir: usize) -> f64 {
        self.r0 + (ir as f64 + 0.5) * self.dr
    }

    pub fn theta_center(&self, itheta: usize) -> f64 {
        (itheta as f64 + 0.5) * self.dtheta
    }

    pub fn z_center(&self, iz: usize) -> f64 {
        self.z0 + (iz as f64 + 0.5) * self.dz
    }

    pub fn center(&self, v: VoxelIndex) -> Cylindrical {
        Cylindrical {
            r: self.r_center(v.ir),
            theta: self.theta_center(v.itheta),
            z: self.z_center(v.iz),
        }
    }

    pub fn r_outer(&self) -> f64 {
        self.r0 + self.nr as f64 * self.dr
    }

    pub fn z_end(&self) -> f64 {
        self.z0 + self.nz as f64 * self.dz
    }

    /// Constant-time voxel lookup: floor division in r and z, modular wrap
    /// in θ. Points outside the radial or axial span return `Outside`.
    pub fn voxel_of(&self, p: &Cylindrical) -> VoxelQuery {
        if p.r < self.r0 || p.z < self.z0 {
            return VoxelQuery::Outside;
        }
        let ir = ((p.r - self.r0) / self.dr) as usize;
        let iz = ((p.z - self.z0) / self.dz) as usize;
        if ir >= self.nr || iz >= self.nz {
            return VoxelQuery::Outside;
        }
        let itheta = ((p.theta.rem_euclid(TWO_PI)) / self.dtheta) as usize % self.ntheta;
        VoxelQuery::Inside(VoxelIndex { ir, itheta, iz })
    }

    /// Nearest radial cell-center index for a radius; ties between two
    /// centers break toward the interior (smaller index).
    pub fn nearest_radial_center(&self, r: f64) -> Result<usize> {
        let t = (r - self.r0) / self.dr - 0.5; // center k sits at t = k
        if t < -0.5 || t > self.nr as f64 - 0.5 {
            return Err(Error::Config(format!(
                "radius {r} outside the grid's radial span [{}, {}]",
                self.r0,
                self.r_outer()
            )));
        }
        let lower = t.floor();
        let frac = t - lower;
        let k = if frac > 0.5 { lower + 1.0 } else { lower };
        Ok((k.max(0.0) as usize).min(self.nr - 1))
    }
}

/// Builds a grid that covers the surface with margins: the inner edge sits at
/// 20% of the minimum surface radius, the outer edge at least one voxel above
/// the maximum radius, and the axial span covers the slice centers.
pub fn build_grid(surface: &SurfaceModel, resolution: (f64, f64, f64)) -> Result<CylindricalGrid> {
    let (dr, dtheta_target, dz) = resolution;
    if !(dr > 0.0 && dtheta_target > 0.0 && dz > 0.0) {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    surface.validate()?;

    let ntheta = ((TWO_PI / dtheta_target).round() as usize).max(3);
    let dtheta = TWO_PI / ntheta as f64;

    let min_r = surface.min_radius();
    let max_r = surface.max_radius();
    let r0 = 0.2 * min_r;
    let nr = (((max_r + 2.0 * dr) - r0) / dr).ceil() as usize;
    // the surface shell must fit strictly between the Dirichlet rings
    if nr < 5 {
        return Err(Error::Config(format!(
            "radial step {dr} too coarse for surface radii in [{min_r}, {max_r}]"
        )));
    }

    let z_lo = surface.slice_z.first().copied().unwrap();
    let z_hi = surface.slice_z.last().copied().unwrap();
    if !(z_hi > z_lo) {
        return Err(Error::Config(
            "surface must span more than one z position to build a grid".into(),
        ));
    }
    if dz > z_hi - z_lo {
        return Err(Error::Config(format!(
            "axial step {dz} exceeds the surface z extent {}",
            z_hi - z_lo
        )));
    }
    let nz = (((z_hi - z_lo) / dz).ceil() as usize).max(3);

    let grid = CylindricalGrid {
        r0,
        dr,
        nr,
        dtheta,
        ntheta,
        z0: z_lo,
        dz,
        nz,
    };
    grid.validate()?;
    Ok(grid)
}

/// For every (θ, z) column, the voxel whose radial center is nearest the
/// interpolated surface radius. Returns flat indices, one per column.
pub fn surface_boundary_voxels(
    surface: &SurfaceModel,
    grid: &CylindricalGrid,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(grid.ntheta * grid.nz);
    for iz in 0..grid.nz {
        for itheta in 0..grid.ntheta {
            let radius = surface.radius_at(grid.theta_center(itheta), grid.z_center(iz));
            let ir = grid.nearest_radial_center(radius)?;
            out.push(grid.flat_index(VoxelIndex { ir, itheta, iz }));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::BodyAxis;
    use nalgebra::Vector3;

    fn flat_surface(radius: f64) -> SurfaceModel {
        let axis = BodyAxis::new(Vector3::zeros(), Vector3::z(), Vector3::x()).unwrap();
        SurfaceModel {
            axis,
            slice_z: vec![-0.2, 0.0, 0.2],
            radii: vec![vec![radius; 12]; 3],
        }
    }

    fn small_grid() -> CylindricalGrid {
        CylindricalGrid {
            r0: 0.02,
            dr: 0.01,
            nr: 14,
            dtheta: TWO_PI / 12.0,
            ntheta: 12,
            z0: -0.2,
            dz: 0.05,
            nz: 8,
        }
    }

    #[test]
    fn build_grid_spans_surface_radially() {
        let grid = build_grid(&flat_surface(0.1), (0.01, 0.1, 0.05)).unwrap();
        assert!(grid.r0 < 0.1 && grid.r_outer() > 0.1);
        assert!(grid.r0 > 0.0);
        // outer edge at least one margin voxel above the surface
        assert!(grid.r_outer() >= 0.1 + grid.dr);
    }

    #[test]
    fn build_grid_closes_the_circle() {
        let grid = build_grid(&flat_surface(0.1), (0.01, 0.07, 0.05)).unwrap();
        assert!((grid.ntheta as f64 * grid.dtheta - TWO_PI).abs() < 1e-12);
        assert_eq!(grid.ntheta, (TWO_PI / 0.07).round() as usize);
    }

    #[test]
    fn build_grid_covers_elliptic_surface() {
        let axis = BodyAxis::new(Vector3::zeros(), Vector3::z(), Vector3::x()).unwrap();
        let radii: Vec<f64> = (0..24)
            .map(|k| {
                let th = TWO_PI * k as f64 / 24.0;
                0.15 * 0.10 / ((0.01 * th.cos().powi(2) + 0.0225 * th.sin().powi(2)).sqrt())
            })
            .collect();
        let surface = SurfaceModel {
            axis,
            slice_z: vec![-0.1, 0.1],
            radii: vec![radii.clone(), radii],
        };
        let grid = build_grid(&surface, (0.005, 0.1, 0.01)).unwrap();
        assert!(grid.r_outer() >= surface.max_radius() + grid.dr);
        assert!(grid.r0 <= 0.2 * surface.min_radius() + 1e-12);
    }

    #[test]
    fn too_coarse_resolution_is_config_error() {
        let err = build_grid(&flat_surface(0.01), (1.0, 0.1, 0.05)).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn voxel_of_center_returns_that_voxel() {
        let grid = small_grid();
        let v = VoxelIndex {
            ir: 5,
            itheta: 7,
            iz: 2,
        };
        assert_eq!(grid.voxel_of(&grid.center(v)), VoxelQuery::Inside(v));
    }

    #[test]
    fn theta_wraps_at_two_pi() {
        let grid = small_grid();
        let near = Cylindrical {
            r: 0.05,
            theta: TWO_PI - 1e-12,
            z: 0.0,
        };
        let wrapped = Cylindrical {
            r: 0.05,
            theta: TWO_PI,
            z: 0.0,
        };
        assert_eq!(
            grid.voxel_of(&near).inside().unwrap().itheta,
            grid.ntheta - 1
        );
        assert_eq!(grid.voxel_of(&wrapped).inside().unwrap().itheta, 0);
    }

    #[test]
    fn below_inner_edge_is_outside() {
        let grid = small_grid();
        let p = Cylindrical {
            r: grid.r0 * 0.5,
            theta: 0.0,
            z: 0.0,
        };
        assert_eq!(grid.voxel_of(&p), VoxelQuery::Outside);
    }

    #[test]
    fn flat_index_roundtrip() {
        let grid = small_grid();
        for flat in [0usize, 1, 13, 14, 167, 1343] {
            assert_eq!(grid.flat_index(grid.voxel_at(flat)), flat);
        }
    }

    #[test]
    fn surface_voxels_constant_radius_at_exact_center() {
        let grid = small_grid();
        // radius exactly at the center of radial cell 8
        let radius = grid.r_center(8);
        let surface = flat_surface(radius);
        let voxels = surface_boundary_voxels(&surface, &grid).unwrap();
        assert_eq!(voxels.len(), grid.ntheta * grid.nz);
        for &flat in &voxels {
            assert_eq!(grid.voxel_at(flat).ir, 8);
        }
    }

    #[test]
    fn surface_voxel_tie_breaks_toward_interior() {
        let grid = small_grid();
        let midway = 0.5 * (grid.r_center(8) + grid.r_center(9));
        let surface = flat_surface(midway);
        let voxels = surface_boundary_voxels(&surface, &grid).unwrap();
        for &flat in &voxels {
            assert_eq!(grid.voxel_at(flat).ir, 8);
        }
    }

    #[test]
    fn surface_voxels_match_exhaustive_nearest_search() {
        let grid = small_grid();
        let axis = BodyAxis::new(Vector3::zeros(), Vector3::z(), Vector3::x()).unwrap();
        let radii: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                (0..12)
                    .map(|k| {
                        let th = TWO_PI * k as f64 / 12.0;
                        0.09 + 0.02 * th.cos() + 0.003 * j as f64
                    })
                    .collect()
            })
            .collect();
        let surface = SurfaceModel {
            axis,
            slice_z: vec![-0.15, 0.0, 0.15],
            radii,
        };
        let voxels = surface_boundary_voxels(&surface, &grid).unwrap();
        let mut i = 0;
        for iz in 0..grid.nz {
            for itheta in 0..grid.ntheta {
                let radius = surface.radius_at(grid.theta_center(itheta), grid.z_center(iz));
                // brute-force nearest center, interior-biased tie-break
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for ir in 0..grid.nr {
                    let d = (grid.r_center(ir) - radius).abs();
                    if d < best_d {
                        best_d = d;
                        best = ir;
                    }
                }
                assert_eq!(grid.voxel_at(voxels[i]).ir, best, "column ({itheta}, {iz})");
                i += 1;
            }
        }
    }

    #[test]
    fn surface_radius_outside_span_is_config_error() {
        let grid = small_grid();
        let err = surface_boundary_voxels(&flat_surface(5.0), &grid).unwrap_err();
        assert_eq!(err.category(), "config");
    }
}
