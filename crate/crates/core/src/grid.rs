//! Categorical 3D lattices, conditioning data, window extraction and file I/O.
//!
//! Grids store one category code per node, x-fastest then y then z (GSLIB
//! convention). Code 0 is reserved for "unknown" everywhere: uninformed
//! simulation nodes, window padding outside the grid, and the dedicated
//! indicator channel produced by [`one_hot_encode`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::TensorBlock;

/// Reserved code for uninformed nodes and out-of-grid padding.
pub const UNKNOWN: u8 = 0;

/// Dense categorical lattice; training images, simulation domains and
/// realizations are all instances of this type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    num_categories: usize,
    values: Vec<u8>,
}

impl CategoricalGrid {
    /// All-unknown grid with `k` real categories.
    pub fn unknown(nx: usize, ny: usize, nz: usize, k: usize) -> Self {
        CategoricalGrid {
            nx,
            ny,
            nz,
            num_categories: k,
            values: vec![UNKNOWN; nx * ny * nz],
        }
    }

    pub fn from_values(
        nx: usize,
        ny: usize,
        nz: usize,
        k: usize,
        values: Vec<u8>,
    ) -> Result<Self> {
        if values.len() != nx * ny * nz {
            return Err(Error::Shape(format!(
                "grid values length {} != {}x{}x{} = {}",
                values.len(),
                nx,
                ny,
                nz,
                nx * ny * nz
            )));
        }
        if let Some(bad) = values.iter().position(|&v| v as usize > k) {
            return Err(Error::InvalidArg(format!(
                "category code {} at node {} outside 0..={}",
                values[bad], bad, k
            )));
        }
        Ok(CategoricalGrid {
            nx,
            ny,
            nz,
            num_categories: k,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn node_coords(&self, index: usize) -> [usize; 3] {
        let ix = index % self.nx;
        let iy = (index / self.nx) % self.ny;
        let iz = index / (self.nx * self.ny);
        [ix, iy, iz]
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> u8 {
        self.values[self.node_index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, v: u8) {
        debug_assert!(v as usize <= self.num_categories);
        let i = self.node_index(ix, iy, iz);
        self.values[i] = v;
    }

    #[inline]
    pub fn value_at(&self, index: usize) -> u8 {
        self.values[index]
    }

    #[inline]
    pub fn set_at(&mut self, index: usize, v: u8) {
        debug_assert!(v as usize <= self.num_categories);
        self.values[index] = v;
    }

    pub fn unknown_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == UNKNOWN).count()
    }

    pub fn is_fully_informed(&self) -> bool {
        self.values.iter().all(|&v| v != UNKNOWN)
    }

    /// Sub-block copy. `origin + dims` must fit inside the grid.
    pub fn crop(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<CategoricalGrid> {
        for a in 0..3 {
            if origin[a] + dims[a] > self.dims()[a] {
                return Err(Error::InvalidArg(format!(
                    "crop origin {:?} + dims {:?} exceeds grid {:?}",
                    origin,
                    dims,
                    self.dims()
                )));
            }
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let row = self.node_index(origin[0], origin[1] + y, origin[2] + z);
                values.extend_from_slice(&self.values[row..row + dims[0]]);
            }
        }
        CategoricalGrid::from_values(dims[0], dims[1], dims[2], self.num_categories, values)
    }

    /// Read a grid from the GSLIB-like text layout: title line, variable count
    /// (always 1), variable name, then one integer code per line, x-fastest.
    /// Dimensions and the category count come from the caller.
    pub fn load_gslib(path: &Path, dims: [usize; 3], k: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let mut next_line = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::parse(path, i + 1, e.to_string())),
                None => Err(Error::parse(path, 0, format!("missing {expect}"))),
            }
        };

        let _title = next_line("title line")?;
        let (nvar_line, nvar) = next_line("variable count line")?;
        let nvar: usize = nvar.trim().parse().map_err(|_| {
            Error::parse(path, nvar_line, format!("variable count is not an integer: {nvar:?}"))
        })?;
        if nvar != 1 {
            return Err(Error::parse(
                path,
                nvar_line,
                format!("expected 1 variable, file declares {nvar}"),
            ));
        }
        let _name = next_line("variable name line")?;

        let expect = dims[0] * dims[1] * dims[2];
        let mut values = Vec::with_capacity(expect);
        for (i, line) in lines {
            let lineno = i + 1;
            let t = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let t = t.trim();
            if t.is_empty() {
                continue;
            }
            let code: i64 = t
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("not an integer code: {t:?}")))?;
            if code < 0 || code as usize > k {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("category code {code} outside 0..={k}"),
                ));
            }
            if values.len() == expect {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("more than {expect} records for dims {dims:?}"),
                ));
            }
            values.push(code as u8);
        }
        if values.len() != expect {
            return Err(Error::parse(
                path,
                0,
                format!("expected {} records for dims {:?}, found {}", expect, dims, values.len()),
            ));
        }
        CategoricalGrid::from_values(dims[0], dims[1], dims[2], k, values)
    }

    pub fn save_gslib(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |s: String| -> Result<()> {
            w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
        };
        write(format!(
            "categorical grid {} {} {} (codes 0..={})\n",
            self.nx, self.ny, self.nz, self.num_categories
        ))?;
        write("1\n".into())?;
        write("category\n".into())?;
        for &v in &self.values {
            write(format!("{v}\n"))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Real-valued companion writer for E-type and variance maps, same layout with
/// one real per line.
pub fn save_real_gslib(path: &Path, dims: [usize; 3], name: &str, data: &[f64]) -> Result<()> {
    if data.len() != dims[0] * dims[1] * dims[2] {
        return Err(Error::Shape(format!(
            "map length {} != dims {:?}",
            data.len(),
            dims
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write =
        |s: String| -> Result<()> { w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e)) };
    write(format!("real grid {} {} {}\n", dims[0], dims[1], dims[2]))?;
    write("1\n".into())?;
    write(format!("{name}\n"))?;
    for v in data {
        write(format!("{v}\n"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One conditioning sample. Coordinates are in node units; synthetic drill
/// holes sit exactly on nodes, CSV input may be off-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DrillHoleSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub category: u8,
}

/// Conditioning data; never carries the unknown code.
#[derive(Debug, Clone, PartialEq)]
pub struct DrillHoleSet {
    pub samples: Vec<DrillHoleSample>,
    /// Fraction of TI nodes the sampling targeted, for provenance.
    pub source_fraction: f64,
}

impl DrillHoleSet {
    pub fn new(samples: Vec<DrillHoleSample>, source_fraction: f64) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| s.category == UNKNOWN) {
            return Err(Error::InvalidArg(format!(
                "drill-hole sample {i} carries the unknown code"
            )));
        }
        Ok(DrillHoleSet {
            samples,
            source_fraction,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Read `x,y,z,category` rows.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if lineno == 1 {
                if t != "x,y,z,category" {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected header x,y,z,category, found {t:?}"),
                    ));
                }
                continue;
            }
            let fields: Vec<&str> = t.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let coord = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad coordinate {s:?}")))
            };
            let category: i64 = fields[3].trim().parse().map_err(|_| {
                Error::parse(path, lineno, format!("bad category {:?}", fields[3]))
            })?;
            if category < 1 || category > u8::MAX as i64 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("category {category} outside 1..={}", u8::MAX),
                ));
            }
            samples.push(DrillHoleSample {
                x: coord(fields[0])?,
                y: coord(fields[1])?,
                z: coord(fields[2])?,
                category: category as u8,
            });
        }
        DrillHoleSet::new(samples, 0.0)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write =
            |s: String| -> Result<()> { w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e)) };
        write("x,y,z,category\n".into())?;
        for s in &self.samples {
            write(format!("{},{},{},{}\n", s.x, s.y, s.z, s.category))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MigrationReport {
    /// Distinct nodes that received a conditioning category.
    pub informed_nodes: usize,
    /// Samples whose nearest node was already claimed by an earlier sample
    /// with a different category (first sample wins).
    pub conflicts: usize,
}

/// Assign every sample to its nearest node (Euclidean distance on node
/// centers, which on a unit lattice is per-axis rounding), clamped to the grid.
/// Earlier samples win conflicting nodes; all other nodes are left unchanged.
pub fn migrate_hard_data(
    grid: &CategoricalGrid,
    dh: &DrillHoleSet,
) -> Result<(CategoricalGrid, MigrationReport)> {
    let mut out = grid.clone();
    let dims = grid.dims();
    let mut claimed: Vec<bool> = vec![false; grid.len()];
    let mut report = MigrationReport::default();
    for s in &dh.samples {
        if s.category as usize > grid.num_categories() {
            return Err(Error::InvalidArg(format!(
                "sample category {} exceeds grid categories {}",
                s.category,
                grid.num_categories()
            )));
        }
        let nearest = |c: f64, n: usize| -> usize {
            let r = c.round();
            if r < 0.0 {
                0
            } else if r as usize >= n {
                n - 1
            } else {
                r as usize
            }
        };
        let ix = nearest(s.x, dims[0]);
        let iy = nearest(s.y, dims[1]);
        let iz = nearest(s.z, dims[2]);
        let node = out.node_index(ix, iy, iz);
        if claimed[node] {
            if out.value_at(node) != s.category {
                report.conflicts += 1;
            }
            continue;
        }
        claimed[node] = true;
        out.set_at(node, s.category);
        report.informed_nodes += 1;
    }
    if report.conflicts > 0 {
        log::warn!(
            "hard-data migration: {} conflicting samples resolved first-wins",
            report.conflicts
        );
    }
    Ok((out, report))
}

/// Odd-dimensioned search-grid / inner-pattern geometry sharing one center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    sg: [usize; 3],
    ip: [usize; 3],
}

impl WindowSpec {
    pub fn new(sg: [usize; 3], ip: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if sg[a].is_multiple_of(2) || sg[a] == 0 || ip[a].is_multiple_of(2) || ip[a] == 0 {
                return Err(Error::InvalidArg(format!(
                    "window dims must be odd positive, got sg {sg:?} ip {ip:?}"
                )));
            }
            if ip[a] > sg[a] {
                return Err(Error::InvalidArg(format!(
                    "inner pattern {ip:?} exceeds search grid {sg:?} on axis {a}"
                )));
            }
        }
        Ok(WindowSpec { sg, ip })
    }

    pub fn sg(&self) -> [usize; 3] {
        self.sg
    }

    pub fn ip(&self) -> [usize; 3] {
        self.ip
    }

    pub fn ip_len(&self) -> usize {
        self.ip[0] * self.ip[1] * self.ip[2]
    }
}

/// A small block of category codes cut from a grid, x-fastest like its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    dims: [usize; 3],
    values: Vec<u8>,
}

impl Window {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

/// Cut a `dims` window centered on `center`; positions outside the grid are
/// filled with the unknown code, so boundaries look exactly like unsimulated
/// interior regions.
pub fn extract_window(
    grid: &CategoricalGrid,
    center: [usize; 3],
    dims: [usize; 3],
) -> Result<Window> {
    let gdims = grid.dims();
    for a in 0..3 {
        if dims[a].is_multiple_of(2) || dims[a] == 0 {
            return Err(Error::InvalidArg(format!(
                "window dims must be odd positive, got {dims:?}"
            )));
        }
        if center[a] >= gdims[a] {
            return Err(Error::InvalidArg(format!(
                "window center {center:?} outside grid {gdims:?}"
            )));
        }
    }
    let half = [
        (dims[0] / 2) as isize,
        (dims[1] / 2) as isize,
        (dims[2] / 2) as isize,
    ];
    let mut values = vec![UNKNOWN; dims[0] * dims[1] * dims[2]];
    let mut w = 0usize;
    for dz in 0..dims[2] as isize {
        let gz = center[2] as isize + dz - half[2];
        for dy in 0..dims[1] as isize {
            let gy = center[1] as isize + dy - half[1];
            let in_plane = gz >= 0 && gz < gdims[2] as isize && gy >= 0 && gy < gdims[1] as isize;
            if !in_plane {
                w += dims[0];
                continue;
            }
            let gx0 = center[0] as isize - half[0];
            let x_lo = (-gx0).max(0) as usize;
            let x_hi = ((gdims[0] as isize - gx0).min(dims[0] as isize)).max(0) as usize;
            if x_lo < x_hi {
                let row = grid.node_index((gx0 + x_lo as isize) as usize, gy as usize, gz as usize);
                values[w + x_lo..w + x_hi]
                    .copy_from_slice(&grid.values()[row..row + (x_hi - x_lo)]);
            }
            w += dims[0];
        }
    }
    Ok(Window { dims, values })
}

/// Indicator encoding with K+1 channels: channel 0 flags unknown, channel k
/// flags category k. Exactly one channel is 1 at every position.
pub fn one_hot_encode(window: &Window, k: usize) -> Result<TensorBlock> {
    let dims = window.dims();
    let n = dims[0] * dims[1] * dims[2];
    let mut t = TensorBlock::zeros(k + 1, dims);
    for (i, &code) in window.values().iter().enumerate() {
        if code as usize > k {
            return Err(Error::InvalidArg(format!(
                "category code {code} outside 0..={k}"
            )));
        }
        t.data_mut()[code as usize * n + i] = 1.0;
    }
    Ok(t)
}

/// Pick random full vertical columns until the sampled node count first
/// reaches `fraction` of the grid; every node of a chosen column becomes a
/// sample carrying the TI category.
pub fn sample_drillholes(
    ti: &CategoricalGrid,
    fraction: f64,
    seed: u64,
) -> Result<DrillHoleSet> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    if !ti.is_fully_informed() {
        return Err(Error::State(
            "drill holes must be sampled from a fully informed grid".into(),
        ));
    }
    let [nx, ny, nz] = ti.dims();
    let mut columns: Vec<(usize, usize)> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .collect();
    let mut rng = rng_from_seed(seed);
    columns.shuffle(&mut rng);

    let target = fraction * ti.len() as f64;
    let mut samples = Vec::new();
    for &(ix, iy) in &columns {
        if samples.len() as f64 >= target {
            break;
        }
        for iz in 0..nz {
            samples.push(DrillHoleSample {
                x: ix as f64,
                y: iy as f64,
                z: iz as f64,
                category: ti.get(ix, iy, iz),
            });
        }
    }
    DrillHoleSet::new(samples, fraction)
}

/// Pick random individual nodes until the count first reaches `fraction` of
/// the grid; used for the hard-data anchors planted during training.
pub fn sample_random_nodes(
    ti: &CategoricalGrid,
    fraction: f64,
    seed: u64,
) -> Result<DrillHoleSet> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    if !ti.is_fully_informed() {
        return Err(Error::State(
            "hard data must be sampled from a fully informed grid".into(),
        ));
    }
    let mut nodes: Vec<usize> = (0..ti.len()).collect();
    let mut rng = rng_from_seed(seed);
    nodes.shuffle(&mut rng);
    let count = (fraction * ti.len() as f64).ceil() as usize;
    let samples = nodes[..count.max(1)]
        .iter()
        .map(|&i| {
            let [x, y, z] = ti.node_coords(i);
            DrillHoleSample {
                x: x as f64,
                y: y as f64,
                z: z as f64,
                category: ti.value_at(i),
            }
        })
        .collect();
    DrillHoleSet::new(samples, fraction)
}
