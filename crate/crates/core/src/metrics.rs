//! Two-point validation statistics: indicator variograms, E-type maps, local
//! variance maps, and category proportions.
//!
//! All variograms run on 0/1 indicators of a chosen category, so the sill of
//! a stationary field approaches p(1-p) for category proportion p.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{CategoricalGrid, UNKNOWN};

/// A set of realizations sharing dims and categories, all fully informed.
#[derive(Debug, Clone)]
pub struct Ensemble {
    realizations: Vec<CategoricalGrid>,
}

impl Ensemble {
    pub fn new(realizations: Vec<CategoricalGrid>) -> Result<Self> {
        let first = realizations
            .first()
            .ok_or_else(|| Error::InvalidArg("empty ensemble".into()))?;
        let (dims, k) = (first.dims(), first.num_categories());
        for (r, g) in realizations.iter().enumerate() {
            if g.dims() != dims || g.num_categories() != k {
                return Err(Error::Shape(format!(
                    "realization {r} is {:?}/{} categories, expected {:?}/{}",
                    g.dims(),
                    g.num_categories(),
                    dims,
                    k
                )));
            }
            if !g.is_fully_informed() {
                return Err(Error::State(format!(
                    "realization {r} contains unknown nodes"
                )));
            }
        }
        Ok(Ensemble { realizations })
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.realizations[0].dims()
    }

    pub fn members(&self) -> &[CategoricalGrid] {
        &self.realizations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// All in-plane (dx, dy, 0) vectors, pooled by nearest-integer Euclidean
    /// length.
    OmniHorizontal,
    /// Pure z-axis offsets.
    Vertical,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::OmniHorizontal => write!(f, "omni-horizontal"),
            Direction::Vertical => write!(f, "vertical"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramLag {
    pub lag: usize,
    pub gamma: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramResult {
    pub direction: Direction,
    /// Ascending by lag; empty bins are omitted.
    pub lags: Vec<VariogramLag>,
}

impl VariogramResult {
    /// Semivariance at one lag, if that bin had pairs.
    pub fn gamma_at(&self, lag: usize) -> Option<f64> {
        self.lags.iter().find(|l| l.lag == lag).map(|l| l.gamma)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write =
            |s: String| -> Result<()> { w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e)) };
        write("direction,lag,gamma,pairs\n".into())?;
        for l in &self.lags {
            write(format!("{},{},{},{}\n", self.direction, l.lag, l.gamma, l.pairs))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn indicator_field(grid: &CategoricalGrid, category: u8) -> Result<Vec<f64>> {
    if grid.values().contains(&UNKNOWN) {
        return Err(Error::State(
            "variogram requires a fully informed grid".into(),
        ));
    }
    Ok(grid
        .values()
        .iter()
        .map(|&v| if v == category { 1.0 } else { 0.0 })
        .collect())
}

/// Experimental indicator semivariogram
/// `gamma(h) = 1/(2|N(h)|) * sum (z(u) - z(u+h))^2`
/// on the 0/1 indicator of `category`.
pub fn indicator_variogram(
    grid: &CategoricalGrid,
    category: u8,
    direction: Direction,
    max_lag: usize,
) -> Result<VariogramResult> {
    let [nx, ny, nz] = grid.dims();
    let extent = match direction {
        Direction::OmniHorizontal => nx.max(ny),
        Direction::Vertical => nz,
    };
    if max_lag == 0 || max_lag >= extent {
        return Err(Error::InvalidArg(format!(
            "max lag {max_lag} outside 1..{extent}"
        )));
    }
    let z = indicator_field(grid, category)?;
    let mut sums = vec![0.0f64; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];

    match direction {
        Direction::Vertical => {
            for h in 1..=max_lag {
                let plane = nx * ny;
                for iz in 0..nz - h {
                    let a = iz * plane;
                    let b = (iz + h) * plane;
                    let mut s = 0.0;
                    for i in 0..plane {
                        let d = z[a + i] - z[b + i];
                        s += d * d;
                    }
                    sums[h] += s;
                    counts[h] += plane;
                }
            }
        }
        Direction::OmniHorizontal => {
            // enumerate distinct in-plane offsets once; (dx,dy) with dy>0 or
            // (dx>0, dy==0) covers every unordered pair exactly once
            let mut offsets: Vec<(isize, isize, usize)> = Vec::new();
            let dmax = max_lag as isize;
            for dy in 0..=dmax {
                for dx in -dmax..=dmax {
                    if dy == 0 && dx <= 0 {
                        continue;
                    }
                    let lag = ((dx * dx + dy * dy) as f64).sqrt().round() as usize;
                    if lag >= 1 && lag <= max_lag {
                        offsets.push((dx, dy, lag));
                    }
                }
            }
            for (dx, dy, lag) in offsets {
                let mut s = 0.0;
                let mut c = 0usize;
                let x_range = if dx >= 0 {
                    0..(nx as isize - dx).max(0)
                } else {
                    (-dx)..nx as isize
                };
                for izp in 0..nz {
                    let plane = izp * nx * ny;
                    for iy in 0..(ny as isize - dy).max(0) {
                        let row_a = plane + iy as usize * nx;
                        let row_b = plane + (iy + dy) as usize * nx;
                        for ix in x_range.clone() {
                            let d = z[row_a + ix as usize] - z[row_b + (ix + dx) as usize];
                            s += d * d;
                            c += 1;
                        }
                    }
                }
                sums[lag] += s;
                counts[lag] += c;
            }
        }
    }

    let lags = (1..=max_lag)
        .filter(|&h| counts[h] > 0)
        .map(|h| VariogramLag {
            lag: h,
            gamma: sums[h] / (2.0 * counts[h] as f64),
            pairs: counts[h],
        })
        .collect();
    Ok(VariogramResult { direction, lags })
}

/// Per-node mean of the category indicator across realizations: the
/// empirical probability of the category.
pub fn etype(ensemble: &Ensemble, category: u8) -> Vec<f64> {
    let n = ensemble.dims();
    let mut map = vec![0.0; n[0] * n[1] * n[2]];
    for g in ensemble.members() {
        for (m, &v) in map.iter_mut().zip(g.values()) {
            if v == category {
                *m += 1.0;
            }
        }
    }
    let r = ensemble.len() as f64;
    for m in &mut map {
        *m /= r;
    }
    map
}

/// Per-node population variance of the category indicator; for a 0/1
/// indicator this is exactly p(1-p) with p the E-type value.
pub fn variance_map(ensemble: &Ensemble, category: u8) -> Vec<f64> {
    etype(ensemble, category)
        .into_iter()
        .map(|p| p * (1.0 - p))
        .collect()
}

/// Fraction of nodes per category code 1..K.
pub fn proportions(grid: &CategoricalGrid) -> Result<Vec<f64>> {
    if grid.values().contains(&UNKNOWN) {
        return Err(Error::State(
            "proportions require a fully informed grid".into(),
        ));
    }
    let mut counts = vec![0usize; grid.num_categories()];
    for &v in grid.values() {
        counts[v as usize - 1] += 1;
    }
    let n = grid.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Indicator variance of one category: p(1-p).
pub fn indicator_variance(grid: &CategoricalGrid, category: u8) -> Result<f64> {
    let p = proportions(grid)?[category as usize - 1];
    Ok(p * (1.0 - p))
}

/// Mean semivariance at the largest available lag, averaged over the two
/// direction classes: the experimental stand-in for the sill.
pub fn sill_estimate(grid: &CategoricalGrid, category: u8) -> Result<f64> {
    let [nx, ny, nz] = grid.dims();
    let h_lag = (nx.max(ny) / 2).max(1);
    let v_lag = (nz / 2).max(1);
    let h = indicator_variogram(grid, category, Direction::OmniHorizontal, h_lag)?;
    let v = indicator_variogram(grid, category, Direction::Vertical, v_lag)?;
    let hg = h.lags.last().map(|l| l.gamma).ok_or_else(|| {
        Error::State("no horizontal lag bins".into())
    })?;
    let vg = v.lags.last().map(|l| l.gamma).ok_or_else(|| {
        Error::State("no vertical lag bins".into())
    })?;
    Ok(0.5 * (hg + vg))
}
