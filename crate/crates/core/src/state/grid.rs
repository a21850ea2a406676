use serde::{Deserialize, Serialize};

use super::Wavefunction;
use crate::error::{Result, WfeError};
use crate::linalg::C64;

/// Shape of a periodic grid holding one or two particles.
///
/// Amplitudes are stored row-major over the spatial axes in the order
/// `(p0.x, [p0.y], p1.x, [p1.y])`, with the spin indices (if any) last and
/// particle 0's spin the slower one. Spin index 0 is `s = +1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub n_particles: usize,
    pub dims: usize,
    pub points: usize,
    pub half_width: f64,
    pub spin_levels: usize,
}

impl GridGeometry {
    pub fn new(n_particles: usize, dims: usize, points: usize, half_width: f64, spin_levels: usize) -> Result<Self> {
        let g = Self {
            n_particles,
            dims,
            points,
            half_width,
            spin_levels,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_particles) {
            return Err(WfeError::param("n_particles", "must be 1 or 2"));
        }
        if !(1..=2).contains(&self.dims) {
            return Err(WfeError::param("dims", "must be 1 or 2"));
        }
        if !(1..=2).contains(&self.spin_levels) {
            return Err(WfeError::param("spin_levels", "must be 1 or 2"));
        }
        if self.points < 4 || !self.points.is_multiple_of(2) {
            return Err(WfeError::param("points", "must be even and at least 4"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(WfeError::param("half_width", "must be positive"));
        }
        if self.len() > 1 << 26 {
            return Err(WfeError::param("points", "grid too large"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn n_axes(&self) -> usize {
        self.n_particles * self.dims
    }

    pub fn spatial_len(&self) -> usize {
        self.points.pow(self.n_axes() as u32)
    }

    pub fn spin_dim(&self) -> usize {
        self.spin_levels.pow(self.n_particles as u32)
    }

    pub fn len(&self) -> usize {
        self.spatial_len() * self.spin_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `h^(dims * n_particles)`.
    pub fn measure(&self) -> f64 {
        self.spacing().powi(self.n_axes() as i32)
    }

    pub fn coord(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.coord(j)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let g = self.points;
        let dk = std::f64::consts::PI / self.half_width;
        (0..g)
            .map(|j| dk * if j < g / 2 { j as f64 } else { j as f64 - g as f64 })
            .collect()
    }

    /// Axis index of coordinate `d` of particle `p`.
    pub fn axis(&self, particle: usize, d: usize) -> usize {
        particle * self.dims + d
    }

    pub fn axis_stride(&self, axis: usize) -> usize {
        self.points.pow((self.n_axes() - 1 - axis) as u32) * self.spin_dim()
    }

    pub fn spin_stride(&self, particle: usize) -> usize {
        self.spin_levels.pow((self.n_particles - 1 - particle) as u32)
    }

    /// Grid index along `axis` of flat amplitude index `idx`.
    #[inline]
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.axis_stride(axis)) % self.points
    }

    /// `s_z` of `particle` at flat index `idx`; zero for spinless grids.
    #[inline]
    pub fn spin_z(&self, idx: usize, particle: usize) -> f64 {
        if self.spin_levels == 1 {
            return 0.0;
        }
        if (idx / self.spin_stride(particle)).is_multiple_of(2) {
            0.5
        } else {
            -0.5
        }
    }

    /// Diagonal of a function of one coordinate along `axis`.
    pub fn axis_diagonal(&self, axis: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let vals: Vec<f64> = self.coords().into_iter().map(f).collect();
        (0..self.len()).map(|i| vals[self.axis_index(i, axis)]).collect()
    }
}

/// Isotropic Gaussian packet for one particle: density variance `sigma^2`
/// per axis, centred at `center`, carrying plane-wave momentum `momentum`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub center: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub momentum: Vec<f64>,
}

impl GaussianSpec {
    pub fn at(center: Vec<f64>, sigma: f64) -> Self {
        Self {
            center,
            sigma,
            momentum: Vec::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: Vec<f64>) -> Self {
        self.momentum = momentum;
        self
    }

    /// Unnormalized amplitude at `x`.
    pub fn eval(&self, x: &[f64]) -> C64 {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for (d, xd) in x.iter().enumerate() {
            let c = self.center.get(d).copied().unwrap_or(0.0);
            r2 += (xd - c).powi(2);
            phase += self.momentum.get(d).copied().unwrap_or(0.0) * xd;
        }
        C64::from_polar((-r2 / (4.0 * self.sigma * self.sigma)).exp(), phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    geometry: GridGeometry,
    amplitudes: Vec<C64>,
    /// Free-form diagnostics attached by builders (overlap warnings etc.).
    pub notes: Vec<String>,
}

impl GridState {
    pub fn new(geometry: GridGeometry, amplitudes: Vec<C64>) -> Result<Self> {
        geometry.validate()?;
        if amplitudes.len() != geometry.len() {
            return Err(WfeError::ShapeMismatch(format!(
                "{} amplitudes for grid of length {}",
                amplitudes.len(),
                geometry.len()
            )));
        }
        Ok(Self {
            geometry,
            amplitudes,
            notes: Vec::new(),
        })
    }

    pub fn zeros(geometry: GridGeometry) -> Result<Self> {
        geometry.validate()?;
        Self::new(geometry, vec![C64::new(0.0, 0.0); geometry.len()])
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Tensor product of single-particle spatial amplitudes (each of length
    /// `G^dims`) and single-particle spinors (length `spin_levels`).
    pub fn from_product(geometry: GridGeometry, spatial: &[Vec<C64>], spinors: &[[C64; 2]]) -> Result<Self> {
        geometry.validate()?;
        let per = geometry.points.pow(geometry.dims as u32);
        if spatial.len() != geometry.n_particles || spatial.iter().any(|s| s.len() != per) {
            return Err(WfeError::ShapeMismatch("spatial factors do not match geometry".into()));
        }
        if geometry.spin_levels == 2 && spinors.len() != geometry.n_particles {
            return Err(WfeError::ShapeMismatch("one spinor per particle required".into()));
        }
        let sd = geometry.spin_dim();
        let mut amps = Vec::with_capacity(geometry.len());
        for idx in 0..geometry.len() {
            let sp = idx / sd;
            let spin = idx % sd;
            let mut z = C64::new(1.0, 0.0);
            for p in 0..geometry.n_particles {
                let local = (sp / per.pow((geometry.n_particles - 1 - p) as u32)) % per;
                z *= spatial[p][local];
                if geometry.spin_levels == 2 {
                    let bit = (spin / geometry.spin_stride(p)) % 2;
                    z *= spinors[p][bit];
                }
            }
            amps.push(z);
        }
        Self::new(geometry, amps)
    }

    /// Samples `f` on the single-particle grid (`G^dims` points).
    pub fn sample_single(geometry: &GridGeometry, f: impl Fn(&[f64]) -> C64) -> Vec<C64> {
        let g = geometry.points;
        let per = g.pow(geometry.dims as u32);
        let mut x = vec![0.0; geometry.dims];
        (0..per)
            .map(|i| {
                for d in 0..geometry.dims {
                    let j = (i / g.pow((geometry.dims - 1 - d) as u32)) % g;
                    x[d] = geometry.coord(j);
                }
                f(&x)
            })
            .collect()
    }
}

impl Wavefunction for GridState {
    fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    fn measure(&self) -> f64 {
        self.geometry.measure()
    }

    fn shape_matches(&self, other: &Self) -> bool {
        self.geometry == other.geometry
    }

    fn shape_string(&self) -> String {
        let g = &self.geometry;
        format!(
            "GridState(particles={}, dims={}, G={}, L={}, spin_levels={})",
            g.n_particles, g.dims, g.points, g.half_width, g.spin_levels
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_strides() {
        let g = GridGeometry::new(2, 2, 4, 1.0, 2).unwrap();
        assert_eq!(g.len(), 256 * 4);
        assert_eq!(g.axis_stride(3), 4);
        assert_eq!(g.axis_stride(0), 64 * 4);
        assert_eq!(g.spin_stride(0), 2);
        let idx = 3 * g.axis_stride(1) + 1; // p0.y = 3, p1 spin down
        assert_eq!(g.axis_index(idx, 1), 3);
        assert_eq!(g.spin_z(idx, 0), 0.5);
        assert_eq!(g.spin_z(idx, 1), -0.5);
    }

    #[test]
    fn wavenumbers_fft_order() {
        let g = GridGeometry::new(1, 1, 4, std::f64::consts::PI, 1).unwrap();
        assert_eq!(g.wavenumbers(), vec![0.0, 1.0, -2.0, -1.0]);
    }
}
