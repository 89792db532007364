//! Spatial grids, the Whittle correlation kernel, correlation matrices, and
//! the Gaussian linear-algebra contract every other module draws through.

mod bessel;
mod chol;
mod gaussian;

pub use bessel::bessel_k1;
pub use chol::FactoredMatrix;
pub use gaussian::{
    gaussian_precision_with_noise, sample_gaussian_precision, sample_gaussian_precision_factored,
};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Hard upper bound on correlation ranges; matches the uniform prior support.
pub const MAX_RANGE: f64 = 1e6;

/// Distance metric applied to site coordinates.
///
/// `Euclidean` treats coordinates as planar (simulation grids, or lon/lat
/// degrees over a single small region). `HaversineKm` interprets them as
/// (longitude, latitude) in degrees and yields great-circle kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Metric {
    Euclidean,
    HaversineKm,
}

impl Metric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            Metric::Euclidean => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            Metric::HaversineKm => haversine_km(a, b),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "haversine-km" => Ok(Metric::HaversineKm),
            other => Err(Error::domain(format!("unknown metric `{other}`"))),
        }
    }
}

fn haversine_km(a: [f64; 2], b: [f64; 2]) -> f64 {
    const R_EARTH_KM: f64 = 6_371.008_8;
    let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
    let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * R_EARTH_KM * s.sqrt().min(1.0).asin()
}

/// The spatial sites and pairwise distances shared by every field.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    sites: Vec<[f64; 2]>,
    dist: DMatrix<f64>,
    metric: Metric,
}

impl Grid {
    pub fn new(sites: Vec<[f64; 2]>, metric: Metric) -> Result<Grid> {
        if sites.is_empty() {
            return Err(Error::domain("grid needs at least one site"));
        }
        if sites.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::domain("grid coordinates must be finite"));
        }
        let n = sites.len();
        let mut dist = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance(sites[i], sites[j]);
                dist[(i, j)] = d;
                dist[(j, i)] = d;
            }
        }
        Ok(Grid { sites, dist, metric })
    }

    /// Regular side x side grid on [0,1]^2, x varying fastest, Euclidean.
    pub fn regular(side: usize) -> Grid {
        assert!(side >= 1);
        let mut sites = Vec::with_capacity(side * side);
        let denom = (side.max(2) - 1) as f64;
        for iy in 0..side {
            for ix in 0..side {
                sites.push([ix as f64 / denom, iy as f64 / denom]);
            }
        }
        Grid::new(sites, Metric::Euclidean).expect("regular grid is always valid")
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn dist(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Largest pairwise distance; used to pick starting correlation ranges.
    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }
}

/// Whittle kernel with a positive range parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    range: f64,
}

impl CorrelationSpec {
    pub fn whittle(range: f64) -> Result<CorrelationSpec> {
        if !range.is_finite() || range <= 0.0 || range > MAX_RANGE {
            return Err(Error::domain(format!(
                "correlation range must lie in (0, {MAX_RANGE:e}], got {range}"
            )));
        }
        Ok(CorrelationSpec { range })
    }

    pub fn range(&self) -> f64 {
        self.range
    }
}

/// Whittle correlation c(d; gamma) = (d/gamma) K1(d/gamma), with c(0) = 1.
///
/// Strictly decreasing in d, tending to 0 as d grows.
pub fn whittle_correlation(d: f64, gamma: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::domain(format!(
            "whittle_correlation requires gamma > 0, got {gamma}"
        )));
    }
    if !d.is_finite() || d < 0.0 {
        return Err(Error::domain(format!(
            "whittle_correlation requires d >= 0, got {d}"
        )));
    }
    Ok(whittle_unchecked(d, gamma))
}

#[inline]
fn whittle_unchecked(d: f64, gamma: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        bessel::x_times_k1(d / gamma)
    }
}

/// Correlation matrix over the grid: symmetric, unit diagonal, entries
/// c(dist[i][j]; range). Deterministic in the inputs.
///
/// Kernel values are cached per distinct distance; regular grids have
/// O(n) distinct distances against O(n^2) pairs, and the Metropolis range
/// updates rebuild this matrix on every proposal.
pub fn build_correlation(grid: &Grid, spec: &CorrelationSpec) -> DMatrix<f64> {
    let n = grid.n();
    let gamma = spec.range();
    let mut cache: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = grid.dist()[(i, j)];
            let c = *cache
                .entry(d.to_bits())
                .or_insert_with(|| whittle_unchecked(d, gamma));
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}
