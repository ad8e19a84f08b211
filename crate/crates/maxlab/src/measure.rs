//! Piecewise-constant measures and functions on dyadic lattices.
//!
//! A [`LatticeSpec`] fixes a grid of half-open cells of side `2^-res_exp`
//! anchored at an integer corner. [`CellMeasure`] carries one nonnegative
//! density per cell and answers exact box-mass queries via an n-dimensional
//! summed-area table; partially covered border cells contribute the exact
//! per-axis overlap fractions, so `integrate` is closed-form for any box.
//!
//! All coordinate arithmetic happens in lattice units relative to the origin.
//! Multiplying by `2^res_exp` and shifting by an integer are both exact in
//! f64, which makes integrals invariant bit for bit under common lattice
//! translations of the measure and the query.

use crate::error::{Error, Result};
use crate::geom::{pow2, Rect};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Maximum number of cells a single lattice may hold.
pub const MAX_CELLS: usize = 1 << 26;

/// Geometry of a dyadic cell lattice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Ambient dimension, 1 to 3.
    pub dim: usize,
    /// Cells have side `2^-res_exp`.
    pub res_exp: i32,
    /// Lower corner in lattice units: geometric corner is `origin * 2^-res_exp`.
    pub origin: Vec<i64>,
    /// Cells per axis.
    pub extent: Vec<usize>,
}

impl LatticeSpec {
    pub fn new(dim: usize, res_exp: i32, origin: Vec<i64>, extent: Vec<usize>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::guard(format!("dim must be 1..=3, got {dim}")));
        }
        if origin.len() != dim || extent.len() != dim {
            return Err(Error::guard("origin/extent length must equal dim"));
        }
        if extent.iter().any(|&e| e == 0) {
            return Err(Error::guard("extent must be positive on every axis"));
        }
        let cells: usize = extent.iter().product();
        if cells > MAX_CELLS {
            return Err(Error::guard(format!(
                "lattice holds {cells} cells, cap is {MAX_CELLS}"
            )));
        }
        Ok(LatticeSpec {
            dim,
            res_exp,
            origin,
            extent,
        })
    }

    /// Side of one cell.
    pub fn cell_side(&self) -> f64 {
        pow2(-self.res_exp)
    }

    pub fn cell_volume(&self) -> f64 {
        pow2(-self.res_exp * self.dim as i32)
    }

    pub fn n_cells(&self) -> usize {
        self.extent.iter().product()
    }

    /// Flatten a multi-index (lexicographic layout, first axis slowest).
    pub fn flat(&self, k: &[usize]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            debug_assert!(k[a] < self.extent[a]);
            idx = idx * self.extent[a] + k[a];
        }
        idx
    }

    /// Inverse of [`flat`](Self::flat).
    pub fn unflat(&self, mut idx: usize) -> Vec<usize> {
        let mut k = vec![0usize; self.dim];
        for a in (0..self.dim).rev() {
            k[a] = idx % self.extent[a];
            idx /= self.extent[a];
        }
        k
    }

    /// Geometric coordinate of the cell corner `origin + k`.
    pub fn corner_coord(&self, axis: usize, k: i64) -> f64 {
        (self.origin[axis] + k) as f64 * self.cell_side()
    }

    /// Geometric box of cell `k`.
    pub fn cell_rect(&self, k: &[usize]) -> Rect {
        let lo: Vec<f64> = (0..self.dim)
            .map(|a| self.corner_coord(a, k[a] as i64))
            .collect();
        Rect::cube(&lo, self.cell_side())
    }

    /// Geometric bounding box of the whole lattice.
    pub fn bbox(&self) -> Rect {
        let lo: Vec<f64> = (0..self.dim).map(|a| self.corner_coord(a, 0)).collect();
        let hi: Vec<f64> = (0..self.dim)
            .map(|a| self.corner_coord(a, self.extent[a] as i64))
            .collect();
        Rect::new(lo, hi)
    }

    /// Map a geometric coordinate to lattice units relative to the origin.
    /// Exact for dyadic inputs in range.
    pub fn to_lattice(&self, axis: usize, x: f64) -> f64 {
        x * pow2(self.res_exp) - self.origin[axis] as f64
    }
}

/// One axis of a box query, decomposed into covered cells.
enum Seg {
    /// Cells `lo..hi`, fully covered.
    Full { lo: usize, hi: usize },
    /// Single cell, covered with fraction `w` in `(0,1)`.
    Part { idx: usize, w: f64 },
}

/// Decompose the lattice-unit interval `[a, b]` into full/partial cell
/// segments, clipped to `[0, extent]`. Returns up to three segments.
fn axis_segments(a: f64, b: f64, extent: usize) -> Vec<Seg> {
    let a = a.max(0.0);
    let b = b.min(extent as f64);
    let mut segs = Vec::with_capacity(3);
    if a >= b {
        return segs;
    }
    let ia = a.floor() as usize;
    // Last cell index whose interior meets [a, b].
    let ib = (b.ceil() as usize - 1).min(extent - 1);
    if ia == ib {
        let w = b - a;
        if w >= 1.0 {
            segs.push(Seg::Full { lo: ia, hi: ia + 1 });
        } else {
            segs.push(Seg::Part { idx: ia, w });
        }
        return segs;
    }
    let w_lo = (ia + 1) as f64 - a;
    let w_hi = b - ib as f64;
    let full_lo = if w_lo < 1.0 { ia + 1 } else { ia };
    let full_hi = if w_hi < 1.0 { ib } else { ib + 1 };
    if w_lo < 1.0 {
        segs.push(Seg::Part { idx: ia, w: w_lo });
    }
    if full_lo < full_hi {
        segs.push(Seg::Full {
            lo: full_lo,
            hi: full_hi,
        });
    }
    if w_hi < 1.0 {
        segs.push(Seg::Part { idx: ib, w: w_hi });
    }
    segs
}

/// Nonnegative piecewise-constant density on a [`LatticeSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeasure {
    spec: LatticeSpec,
    density: Vec<f64>,
    /// Summed-area table over density values, built lexicographically.
    #[serde(skip)]
    prefix: Vec<f64>,
}

impl CellMeasure {
    pub fn new(spec: LatticeSpec, density: Vec<f64>) -> Result<Self> {
        if density.len() != spec.n_cells() {
            return Err(Error::guard(format!(
                "density has {} entries, lattice has {} cells",
                density.len(),
                spec.n_cells()
            )));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::guard("densities must be finite and nonnegative"));
        }
        let prefix = build_prefix(&spec, &density);
        Ok(CellMeasure {
            spec,
            density,
            prefix,
        })
    }

    /// Measure that is identically zero on the lattice.
    pub fn zero(spec: LatticeSpec) -> Self {
        let density = vec![0.0; spec.n_cells()];
        let prefix = build_prefix(&spec, &density);
        CellMeasure {
            spec,
            density,
            prefix,
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn density_at(&self, k: &[usize]) -> f64 {
        self.density[self.spec.flat(k)]
    }

    /// Total mass, accumulated in lexicographic cell order.
    pub fn total_mass(&self) -> f64 {
        let mut s = 0.0;
        for &d in &self.density {
            s += d;
        }
        s * self.spec.cell_volume()
    }

    /// Exact mass of a geometric box.
    pub fn integrate(&self, r: &Rect) -> f64 {
        assert_eq!(r.dim(), self.spec.dim, "query dimension mismatch");
        let dim = self.spec.dim;
        let mut axis_segs: Vec<Vec<Seg>> = Vec::with_capacity(dim);
        for a in 0..dim {
            let lo = self.spec.to_lattice(a, r.lo[a]);
            let hi = self.spec.to_lattice(a, r.hi[a]);
            let segs = axis_segments(lo, hi, self.spec.extent[a]);
            if segs.is_empty() {
                return 0.0;
            }
            axis_segs.push(segs);
        }
        // Cartesian product of per-axis segments; each combination is one
        // index box with a constant weight.
        let mut total = 0.0;
        let mut choice = vec![0usize; dim];
        'outer: loop {
            let mut w = 1.0;
            let mut lo = vec![0usize; dim];
            let mut hi = vec![0usize; dim];
            for a in 0..dim {
                match axis_segs[a][choice[a]] {
                    Seg::Full { lo: l, hi: h } => {
                        lo[a] = l;
                        hi[a] = h;
                    }
                    Seg::Part { idx, w: pw } => {
                        lo[a] = idx;
                        hi[a] = idx + 1;
                        w *= pw;
                    }
                }
            }
            total += w * self.box_density_sum(&lo, &hi);
            for a in (0..dim).rev() {
                choice[a] += 1;
                if choice[a] < axis_segs[a].len() {
                    continue 'outer;
                }
                choice[a] = 0;
                if a == 0 {
                    break 'outer;
                }
            }
        }
        total * self.spec.cell_volume()
    }

    /// Mass of `r` clipped to `clip` (used for restricted measures without
    /// materializing them).
    pub fn integrate_clipped(&self, r: &Rect, clip: &Rect) -> f64 {
        let lo: Vec<f64> = r.lo.iter().zip(&clip.lo).map(|(&a, &b)| a.max(b)).collect();
        let hi: Vec<f64> = r.hi.iter().zip(&clip.hi).map(|(&a, &b)| a.min(b)).collect();
        if lo.iter().zip(&hi).any(|(&a, &b)| a >= b) {
            return 0.0;
        }
        self.integrate(&Rect::new(lo, hi))
    }

    /// Sum of density values over the index box `[lo, hi)`.
    fn box_density_sum(&self, lo: &[usize], hi: &[usize]) -> f64 {
        let dim = self.spec.dim;
        // Strides of the prefix table, whose extents are extent+1.
        let mut total = 0.0;
        for mask in 0..(1u32 << dim) {
            let mut idx = 0usize;
            let mut sign = 1.0;
            for a in 0..dim {
                let pick_hi = mask & (1 << a) == 0;
                let coord = if pick_hi {
                    hi[a]
                } else {
                    sign = -sign;
                    lo[a]
                };
                idx = idx * (self.spec.extent[a] + 1) + coord;
            }
            total += sign * self.prefix[idx];
        }
        total
    }

    /// Pointwise scaling by a nonnegative constant.
    pub fn scale(&self, c: f64) -> Result<CellMeasure> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::guard("scale factor must be finite and nonnegative"));
        }
        let density: Vec<f64> = self.density.iter().map(|&d| c * d).collect();
        CellMeasure::new(self.spec.clone(), density)
    }

    /// Translation by an integer lattice vector (exact).
    pub fn translate(&self, v: &[i64]) -> Result<CellMeasure> {
        if v.len() != self.spec.dim {
            return Err(Error::guard("translation vector length must equal dim"));
        }
        let mut spec = self.spec.clone();
        for a in 0..spec.dim {
            spec.origin[a] += v[a];
        }
        CellMeasure::new(spec, self.density.clone())
    }

    /// Bounding box of cells with positive density, if any.
    pub fn support_bbox(&self) -> Option<Rect> {
        let dim = self.spec.dim;
        let mut lo = vec![usize::MAX; dim];
        let mut hi = vec![0usize; dim];
        let mut any = false;
        for (i, &d) in self.density.iter().enumerate() {
            if d > 0.0 {
                any = true;
                let k = self.spec.unflat(i);
                for a in 0..dim {
                    lo[a] = lo[a].min(k[a]);
                    hi[a] = hi[a].max(k[a] + 1);
                }
            }
        }
        if !any {
            return None;
        }
        let glo: Vec<f64> = (0..dim)
            .map(|a| self.spec.corner_coord(a, lo[a] as i64))
            .collect();
        let ghi: Vec<f64> = (0..dim)
            .map(|a| self.spec.corner_coord(a, hi[a] as i64))
            .collect();
        Some(Rect::new(glo, ghi))
    }
}

fn build_prefix(spec: &LatticeSpec, density: &[f64]) -> Vec<f64> {
    let dim = spec.dim;
    let pext: Vec<usize> = spec.extent.iter().map(|&e| e + 1).collect();
    let plen: usize = pext.iter().product();
    let mut prefix = vec![0.0; plen];
    // Strides of prefix table and of the density array.
    let mut pstride = vec![1usize; dim];
    let mut dstride = vec![1usize; dim];
    for a in (0..dim.saturating_sub(1)).rev() {
        pstride[a] = pstride[a + 1] * pext[a + 1];
        dstride[a] = dstride[a + 1] * spec.extent[a + 1];
    }
    let mut k = vec![0usize; dim];
    'fill: loop {
        let di: usize = (0..dim).map(|a| k[a] * dstride[a]).sum();
        let pi: usize = (0..dim).map(|a| (k[a] + 1) * pstride[a]).sum();
        let mut v = density[di];
        for mask in 1..(1u32 << dim) {
            let mut idx = pi;
            let mut ok = true;
            for a in 0..dim {
                if mask & (1 << a) != 0 {
                    // k[a]+1 >= 1 always, so the step back stays in range.
                    idx -= pstride[a];
                    if k[a] + 1 == 0 {
                        ok = false;
                    }
                }
            }
            debug_assert!(ok);
            let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            v += sign * prefix[idx];
        }
        prefix[pi] = v;
        for a in (0..dim).rev() {
            k[a] += 1;
            if k[a] < spec.extent[a] {
                continue 'fill;
            }
            k[a] = 0;
            if a == 0 {
                break 'fill;
            }
        }
    }
    prefix
}

/// Piecewise-constant function on the same lattices as [`CellMeasure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    spec: LatticeSpec,
    values: Vec<f64>,
}

impl CellFunction {
    pub fn new(spec: LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_cells() {
            return Err(Error::guard("value count must equal cell count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::guard("values must be finite"));
        }
        Ok(CellFunction { spec, values })
    }

    pub fn constant(spec: LatticeSpec, v: f64) -> Result<Self> {
        let n = spec.n_cells();
        CellFunction::new(spec, vec![v; n])
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The measure `f dmu`. Requires matching lattices and `f >= 0`.
    pub fn weigh(&self, mu: &CellMeasure) -> Result<CellMeasure> {
        if self.spec != *mu.spec() {
            return Err(Error::mismatch("function and measure lattices differ"));
        }
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::guard("weigh requires nonnegative values"));
        }
        let density: Vec<f64> = self
            .values
            .iter()
            .zip(mu.density())
            .map(|(&f, &d)| f * d)
            .collect();
        CellMeasure::new(self.spec.clone(), density)
    }

    /// `integral of f^2 dmu` over the whole lattice.
    pub fn norm_sq(&self, mu: &CellMeasure) -> Result<f64> {
        if self.spec != *mu.spec() {
            return Err(Error::mismatch("function and measure lattices differ"));
        }
        let mut s = 0.0;
        for (&f, &d) in self.values.iter().zip(mu.density()) {
            s += f * f * d;
        }
        Ok(s * self.spec.cell_volume())
    }
}

/// Serialize a measure to the plain-text cell format.
///
/// Header lines `dim`, `res`, `origin`, `extent`, then one line per nonzero
/// cell: the cell's integer multi-index (relative to the origin) followed by
/// its density. Cells are written in lexicographic index order with LF line
/// endings, so equal measures serialize byte-identically.
pub fn write_measure_text(m: &CellMeasure) -> String {
    let spec = m.spec();
    let mut out = String::new();
    writeln!(out, "dim {}", spec.dim).unwrap();
    writeln!(out, "res {}", spec.res_exp).unwrap();
    let join = |v: &[i64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "origin {}", join(&spec.origin)).unwrap();
    writeln!(
        out,
        "extent {}",
        spec.extent
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )
    .unwrap();
    for (i, &d) in m.density().iter().enumerate() {
        if d != 0.0 {
            let k = spec.unflat(i);
            for (a, ka) in k.iter().enumerate() {
                if a > 0 {
                    out.push(' ');
                }
                write!(out, "{ka}").unwrap();
            }
            writeln!(out, " {d}").unwrap();
        }
    }
    out
}

/// Parse the plain-text cell format. Accepts cells in any order; rejects
/// duplicate cells, indices outside the extent, and negative densities.
pub fn read_measure_text(text: &str) -> Result<CellMeasure> {
    let mut lines = text.lines().enumerate();
    let mut header = |name: &str| -> Result<(usize, Vec<String>)> {
        for (i, line) in lines.by_ref() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let mut parts = t.split_whitespace();
            let key = parts.next().unwrap_or("");
            if key != name {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected header '{name}', found '{key}'"),
                });
            }
            return Ok((i + 1, parts.map(|s| s.to_string()).collect()));
        }
        Err(Error::Parse {
            line: 0,
            msg: format!("missing header '{name}'"),
        })
    };

    let (ln, dims) = header("dim")?;
    let dim: usize = parse_one(&dims, ln, "dim")?;
    let (ln, ress) = header("res")?;
    let res_exp: i32 = parse_one(&ress, ln, "res")?;
    let (ln, origins) = header("origin")?;
    let origin = parse_vec::<i64>(&origins, ln, "origin", dim)?;
    let (ln, extents) = header("extent")?;
    let extent_i = parse_vec::<i64>(&extents, ln, "extent", dim)?;
    if extent_i.iter().any(|&e| e <= 0) {
        return Err(Error::Parse {
            line: ln,
            msg: "extent entries must be positive".into(),
        });
    }
    let extent: Vec<usize> = extent_i.iter().map(|&e| e as usize).collect();
    let spec = LatticeSpec::new(dim, res_exp, origin, extent)?;

    let mut density = vec![0.0; spec.n_cells()];
    let mut seen = vec![false; spec.n_cells()];
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != dim + 1 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {} fields, found {}", dim + 1, parts.len()),
            });
        }
        let mut k = vec![0usize; dim];
        for a in 0..dim {
            let v: i64 = parts[a].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad cell index '{}'", parts[a]),
            })?;
            if v < 0 || v as usize >= spec.extent[a] {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("cell index {v} outside extent on axis {a}"),
                });
            }
            k[a] = v as usize;
        }
        let d: f64 = parts[dim].parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad density '{}'", parts[dim]),
        })?;
        if !d.is_finite() || d < 0.0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "density must be finite and nonnegative".into(),
            });
        }
        let idx = spec.flat(&k);
        if seen[idx] {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate cell {k:?}"),
            });
        }
        seen[idx] = true;
        density[idx] = d;
    }
    CellMeasure::new(spec, density)
}

fn parse_one<T: std::str::FromStr>(fields: &[String], line: usize, what: &str) -> Result<T> {
    if fields.len() != 1 {
        return Err(Error::Parse {
            line,
            msg: format!("header '{what}' takes exactly one value"),
        });
    }
    fields[0].parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value for '{what}'"),
    })
}

fn parse_vec<T: std::str::FromStr>(
    fields: &[String],
    line: usize,
    what: &str,
    dim: usize,
) -> Result<Vec<T>> {
    if fields.len() != dim {
        return Err(Error::Parse {
            line,
            msg: format!("header '{what}' needs {dim} values"),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad value '{f}' for '{what}'"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell() -> CellMeasure {
        // Densities 2 and 4 on [0,1) and [1,2).
        let spec = LatticeSpec::new(1, 0, vec![0], vec![2]).unwrap();
        CellMeasure::new(spec, vec![2.0, 4.0]).unwrap()
    }

    #[test]
    fn integrate_straddling_interval() {
        let m = two_cell();
        let v = m.integrate(&Rect::new(vec![0.5], vec![1.5]));
        assert_eq!(v, 3.0);
    }

    #[test]
    fn integrate_outside_support_is_zero() {
        let m = two_cell();
        assert_eq!(m.integrate(&Rect::new(vec![5.0], vec![9.0])), 0.0);
        assert_eq!(m.integrate(&Rect::new(vec![-3.0], vec![0.0])), 0.0);
    }

    #[test]
    fn integrate_whole_lattice_is_total_mass() {
        let m = two_cell();
        assert_eq!(m.integrate(&m.spec().bbox()), m.total_mass());
        assert_eq!(m.total_mass(), 6.0);
    }

    #[test]
    fn integrate_subcell_fraction() {
        let m = two_cell();
        let v = m.integrate(&Rect::new(vec![0.25], vec![0.75]));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn integrate_clipped_matches_intersection() {
        let m = two_cell();
        let r = Rect::new(vec![0.0], vec![2.0]);
        let clip = Rect::new(vec![0.5], vec![1.5]);
        assert_eq!(m.integrate_clipped(&r, &clip), 3.0);
    }

    #[test]
    fn translation_is_bit_exact() {
        let m = two_cell();
        let t = m.translate(&[7]).unwrap();
        let a = m.integrate(&Rect::new(vec![0.5], vec![1.5]));
        let b = t.integrate(&Rect::new(vec![7.5], vec![8.5]));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn scale_is_homogeneous() {
        let m = two_cell();
        let s = m.scale(4.0).unwrap();
        let r = Rect::new(vec![0.3], vec![1.9]);
        assert_eq!(s.integrate(&r), 4.0 * m.integrate(&r));
    }

    #[test]
    fn negative_density_rejected() {
        let spec = LatticeSpec::new(1, 0, vec![0], vec![2]).unwrap();
        assert!(CellMeasure::new(spec, vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn prefix_matches_naive_on_2d() {
        let spec = LatticeSpec::new(2, 1, vec![-2, 0], vec![5, 4]).unwrap();
        let mut vals = Vec::new();
        for i in 0..20u32 {
            vals.push(((i * 7 + 3) % 11) as f64 / 11.0);
        }
        let m = CellMeasure::new(spec.clone(), vals.clone()).unwrap();
        let r = Rect::new(vec![-0.8, 0.3], vec![0.9, 1.7]);
        // Naive loop over cells with per-axis overlap products.
        let h = spec.cell_side();
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                let cell = spec.cell_rect(&[i, j]);
                let ox = (cell.hi[0].min(r.hi[0]) - cell.lo[0].max(r.lo[0])).max(0.0);
                let oy = (cell.hi[1].min(r.hi[1]) - cell.lo[1].max(r.lo[1])).max(0.0);
                naive += vals[spec.flat(&[i, j])] * ox * oy;
            }
        }
        let _ = h;
        let got = m.integrate(&r);
        assert!((got - naive).abs() <= 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn roundtrip_text_format() {
        let spec = LatticeSpec::new(2, 3, vec![-1, 4], vec![3, 2]).unwrap();
        let m = CellMeasure::new(spec, vec![0.0, 1.5, 0.25, 0.0, 3.0, 0.125]).unwrap();
        let text = write_measure_text(&m);
        let back = read_measure_text(&text).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.density(), m.density());
        // Writing again reproduces the bytes.
        assert_eq!(write_measure_text(&back), text);
    }

    #[test]
    fn reader_rejects_duplicates_and_negatives() {
        let dup = "dim 1\nres 0\norigin 0\nextent 2\n0 1.0\n0 2.0\n";
        assert!(matches!(
            read_measure_text(dup),
            Err(Error::Parse { line: 6, .. })
        ));
        let neg = "dim 1\nres 0\norigin 0\nextent 2\n1 -1.0\n";
        assert!(read_measure_text(neg).is_err());
        let oob = "dim 1\nres 0\norigin 0\nextent 2\n2 1.0\n";
        assert!(read_measure_text(oob).is_err());
    }

    #[test]
    fn weigh_multiplies_densities() {
        let m = two_cell();
        let f = CellFunction::new(m.spec().clone(), vec![0.5, 2.0]).unwrap();
        let fm = f.weigh(&m).unwrap();
        assert_eq!(fm.density(), &[1.0, 8.0]);
        assert_eq!(f.norm_sq(&m).unwrap(), 0.25 * 2.0 + 4.0 * 4.0);
    }

    #[test]
    fn weigh_rejects_mismatched_lattice() {
        let m = two_cell();
        let other = LatticeSpec::new(1, 1, vec![0], vec![2]).unwrap();
        let f = CellFunction::constant(other, 1.0).unwrap();
        assert!(f.weigh(&m).is_err());
    }
}
