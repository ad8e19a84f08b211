//! Superlevel regions of the maximal function, Whitney cube families over
//! them, and the level-set bookkeeping built on top (E-sets, H-sets, the
//! three-case partition).
//!
//! Regions are inner approximations: a lattice cell joins a superlevel
//! region only when some cube containing the whole cell has average above
//! the threshold, and that witness cube is stored for replay. Everything
//! downstream (decomposition, E-sets, case masses) is exact set arithmetic
//! over these certified regions.

use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{pow2, Rect, ScaleWindow};
use crate::grid::{DyadicCube, GridShift};
use crate::maximal::{certify_box_above, dyadic_maximal_clipped};
use crate::measure::{CellFunction, CellMeasure, LatticeSpec};
use crate::region::CellSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cap on candidate cells when rasterizing one superlevel region.
pub const MAX_REGION_CELLS: usize = 1 << 22;

/// Certified inner approximation of `{ M(f sigma) > 2^k }`.
#[derive(Debug, Clone)]
pub struct SuperlevelSet {
    pub threshold_exp: i32,
    pub refine: u32,
    pub region: CellSet,
    /// Witness cube per region cell: contains the cell, average above 2^k.
    pub witnesses: BTreeMap<Vec<i64>, Rect>,
}

/// One selected cube: grid coordinates plus its geometric box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub cube: DyadicCube,
    pub rect: Rect,
    /// sigma-average of f over the cube, once attached.
    pub average: Option<f64>,
}

/// Decomposition of one superlevel region.
#[derive(Debug, Clone)]
pub struct WhitneyLevel {
    pub threshold_exp: i32,
    pub region: CellSet,
    pub cubes: Vec<WhitneyCube>,
    /// Cells covered by the selected cubes.
    pub core: CellSet,
    /// Region cells left uncovered; provably within `R_W` floor sides of the
    /// complement (the checker replays that bound cell by cell).
    pub fringe: CellSet,
    /// Measured `sup_x sum_j chi_{N Q_j}(x)` over region cells.
    pub overlap_max: u32,
    /// Measured max count of cubes meeting one `N Q_j`.
    pub crowd_max: usize,
}

/// Whitney levels for a ladder of thresholds over one grid.
#[derive(Debug, Clone)]
pub struct WhitneyFamily {
    pub grid: GridShift,
    pub r_w: i64,
    pub n_overlap: i64,
    /// Ascending by threshold exponent.
    pub levels: Vec<WhitneyLevel>,
}

/// `E = Q cap (dyadic superlevel at k+m  minus  full superlevel at k+m+m0)`.
///
/// The subtracted set is the certified inner approximation of the full
/// superlevel region, so `cells` may keep a cell whose true maximal value
/// lies above the top threshold but below its certificate; all uses here
/// only require membership in the dyadic superlevel, which is exact.
#[derive(Debug, Clone)]
pub struct ESet {
    pub threshold_exp: i32,
    pub cube_index: usize,
    pub cells: CellSet,
}

fn require_lattice_grid(g: &GridShift) -> Result<()> {
    if g.offset().iter().any(|&s| s != 0.0) {
        return Err(Error::mismatch(
            "region arithmetic needs a grid without continuous offset",
        ));
    }
    Ok(())
}

/// Scale window spanning exactly the levels of `g`.
pub fn grid_window(g: &GridShift) -> ScaleWindow {
    ScaleWindow::new(-g.level_fine, -g.level_coarse)
}

/// Inner lattice approximation of `{ M(f sigma) > 2^k }` at resolution
/// `f sigma` refined `refine` times. Every included cell stores a witness
/// cube containing it whose average exceeds `2^k`.
pub fn superlevel(
    fsigma: &CellMeasure,
    k: i32,
    w: ScaleWindow,
    refine: u32,
) -> Result<SuperlevelSet> {
    let spec = fsigma.spec();
    let dim = spec.dim;
    let res = spec.res_exp + refine as i32;
    let thr = pow2(k);
    let empty = || SuperlevelSet {
        threshold_exp: k,
        refine,
        region: CellSet::empty(dim, res),
        witnesses: BTreeMap::new(),
    };
    let support = match fsigma.support_bbox() {
        Some(b) => b,
        None => return Ok(empty()),
    };
    let mass = fsigma.total_mass();
    if mass <= 0.0 {
        return Ok(empty());
    }
    // A cube of side s containing x with positive mass needs s^n * 2^k <
    // mass, and must reach the support; cells further than the largest
    // admissible side from the support cannot be certified.
    let side_cap = pow2(w.j_max).min((mass / thr).powf(1.0 / dim as f64));
    if side_cap < pow2(w.j_min) {
        return Ok(empty());
    }
    let scale = pow2(res);
    let lo_units: Vec<i64> = (0..dim)
        .map(|a| ((support.lo[a] - side_cap) * scale).floor() as i64)
        .collect();
    let hi_units: Vec<i64> = (0..dim)
        .map(|a| ((support.hi[a] + side_cap) * scale).ceil() as i64)
        .collect();
    let per_axis: Vec<usize> = (0..dim).map(|a| (hi_units[a] - lo_units[a]) as usize).collect();
    let n_cand: usize = per_axis.iter().product();
    if n_cand > MAX_REGION_CELLS {
        return Err(Error::guard(format!(
            "superlevel candidate box holds {n_cand} cells, cap is {MAX_REGION_CELLS}"
        )));
    }
    let side = pow2(-res);
    let hits = exec::map_indexed(n_cand, |flat| {
        let mut idx = flat;
        let mut cell = vec![0i64; dim];
        for a in (0..dim).rev() {
            cell[a] = lo_units[a] + (idx % per_axis[a]) as i64;
            idx /= per_axis[a];
        }
        let lo: Vec<f64> = cell.iter().map(|&u| u as f64 * side).collect();
        let rect = Rect::cube(&lo, side);
        certify_box_above(fsigma, &rect, thr, w).map(|mv| (cell, mv.witness))
    });
    let mut region = CellSet::empty(dim, res);
    let mut witnesses = BTreeMap::new();
    for (cell, witness) in hits.into_iter().flatten() {
        region.insert(cell.clone());
        witnesses.insert(cell, witness);
    }
    Ok(SuperlevelSet {
        threshold_exp: k,
        refine,
        region,
        witnesses,
    })
}

/// Maximal grid cubes `Q` with `R_W Q` inside the region, by descent from
/// the coarsest grid level. Cells of the region not covered by any selected
/// cube form the fringe; they all hug the complement within `R_W` floor
/// sides, which the property checker verifies.
pub fn whitney_decompose(
    omega_k: &SuperlevelSet,
    g: &GridShift,
    r_w: i64,
    n_overlap: i64,
) -> Result<WhitneyLevel> {
    require_lattice_grid(g)?;
    if r_w < 3 {
        return Err(Error::guard("dilation parameter must be at least 3"));
    }
    if n_overlap < 5 {
        return Err(Error::guard("overlap parameter must be at least 5"));
    }
    let region = &omega_k.region;
    let dim = region.dim;
    if region.res_exp < g.level_fine {
        return Err(Error::resolution(
            "region lattice must refine the finest grid level",
        ));
    }
    let mut cubes: Vec<DyadicCube> = Vec::new();
    if let Some((lo_units, hi_units)) = region.bbox_units() {
        // Top-level cube index range covering the region bounding box.
        let shift = region.res_exp - g.level_fine;
        let span_units = 1i64 << (g.level_fine - g.level_coarse);
        let top_range: Vec<(i64, i64)> = (0..dim)
            .map(|a| {
                let lo_f = lo_units[a] >> shift;
                let hi_f = (hi_units[a] - 1) >> shift;
                let t = g.t_units()[a];
                (
                    (lo_f - t).div_euclid(span_units),
                    (hi_f - t).div_euclid(span_units),
                )
            })
            .collect();
        let mut stack: Vec<DyadicCube> = Vec::new();
        let mut idx: Vec<i64> = top_range.iter().map(|r| r.0).collect();
        'top: loop {
            stack.push(DyadicCube {
                level: g.level_coarse,
                index: idx.clone(),
            });
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] <= top_range[a].1 {
                    continue 'top;
                }
                idx[a] = top_range[a].0;
                if a == 0 {
                    break 'top;
                }
            }
        }
        while let Some(c) = stack.pop() {
            let rect = g.cube_rect(&c);
            if let Some(bb) = region.bbox() {
                if !rect.intersects(&bb) {
                    continue;
                }
            }
            if region.contains_box(&rect.dilate(r_w as f64)) {
                if c.level == g.level_coarse && region.contains_box(&rect.dilate(3.0 * r_w as f64))
                {
                    return Err(Error::guard(
                        "region swallows a tripled top-level cube; widen the grid window",
                    ));
                }
                cubes.push(c);
            } else if c.level < g.level_fine {
                stack.extend(g.children(&c));
            }
        }
    }
    cubes.sort_by(|a, b| (a.level, &a.index).cmp(&(b.level, &b.index)));
    let mut core = CellSet::empty(dim, region.res_exp);
    let wcubes: Vec<WhitneyCube> = cubes
        .into_iter()
        .map(|cube| {
            let rect = g.cube_rect(&cube);
            let (lo, hi) = CellSet::block_of_rect(dim, region.res_exp, &rect);
            core.insert_block(&lo, &hi);
            WhitneyCube {
                cube,
                rect,
                average: None,
            }
        })
        .collect();
    let fringe = region.difference(&core);
    let (overlap_max, crowd_max) = dilate_stats(region, &wcubes, n_overlap);
    Ok(WhitneyLevel {
        threshold_exp: omega_k.threshold_exp,
        region: region.clone(),
        cubes: wcubes,
        core,
        fringe,
        overlap_max,
        crowd_max,
    })
}

/// Measured overlap of the `N`-dilates over region cells, and the crowd
/// count (cubes meeting one dilate, closed intersection).
fn dilate_stats(region: &CellSet, cubes: &[WhitneyCube], n_overlap: i64) -> (u32, usize) {
    let mut counts: BTreeMap<Vec<i64>, u32> = BTreeMap::new();
    for wc in cubes {
        let d = wc.rect.dilate(n_overlap as f64);
        let scale = pow2(region.res_exp);
        let dim = region.dim;
        let lo: Vec<i64> = (0..dim).map(|a| (d.lo[a] * scale).floor() as i64).collect();
        let hi: Vec<i64> = (0..dim).map(|a| (d.hi[a] * scale).ceil() as i64).collect();
        let mut k = lo.clone();
        'scan: loop {
            let interior = (0..dim).all(|a| {
                ((k[a] + 1) as f64) > d.lo[a] * scale && (k[a] as f64) < d.hi[a] * scale
            });
            if interior && region.contains(&k) {
                *counts.entry(k.clone()).or_insert(0) += 1;
            }
            for a in (0..dim).rev() {
                k[a] += 1;
                if k[a] < hi[a] {
                    continue 'scan;
                }
                k[a] = lo[a];
                if a == 0 {
                    break 'scan;
                }
            }
        }
    }
    let overlap = counts.values().copied().max().unwrap_or(0);
    let mut crowd = 0usize;
    for wc in cubes {
        let d = wc.rect.dilate(n_overlap as f64);
        let met = cubes
            .iter()
            .filter(|o| closed_intersects(&o.rect, &d))
            .count();
        crowd = crowd.max(met);
    }
    (overlap, crowd)
}

fn closed_intersects(a: &Rect, b: &Rect) -> bool {
    (0..a.dim()).all(|ax| a.lo[ax] <= b.hi[ax] && b.lo[ax] <= a.hi[ax])
}

impl WhitneyFamily {
    pub fn new(grid: GridShift, r_w: i64, n_overlap: i64) -> Self {
        WhitneyFamily {
            grid,
            r_w,
            n_overlap,
            levels: Vec::new(),
        }
    }

    /// Levels must arrive with strictly increasing thresholds.
    pub fn push_level(&mut self, level: WhitneyLevel) -> Result<()> {
        if let Some(last) = self.levels.last() {
            if level.threshold_exp <= last.threshold_exp {
                return Err(Error::mismatch("levels must ascend by threshold"));
            }
        }
        self.levels.push(level);
        Ok(())
    }

    /// Total cube count across levels.
    pub fn n_cubes(&self) -> usize {
        self.levels.iter().map(|l| l.cubes.len()).sum()
    }

    /// sigma-averages of f over every cube. Zero-sigma cubes get average 0.
    pub fn attach_averages(&mut self, f: &CellFunction, sigma: &CellMeasure) -> Result<()> {
        let fsigma = f.weigh(sigma)?;
        for level in &mut self.levels {
            for wc in &mut level.cubes {
                let den = sigma.integrate(&wc.rect);
                let num = fsigma.integrate(&wc.rect);
                wc.average = Some(if den > 0.0 { num / den } else { 0.0 });
            }
        }
        Ok(())
    }
}

/// Decompose a ladder of thresholds `k0 + i*(step)` over one grid.
pub fn build_family(
    fsigma: &CellMeasure,
    g: &GridShift,
    r_w: i64,
    n_overlap: i64,
    k0: i32,
    step: u32,
    n_levels: usize,
    refine: u32,
) -> Result<(WhitneyFamily, Vec<SuperlevelSet>)> {
    require_lattice_grid(g)?;
    if step == 0 {
        return Err(Error::guard("threshold step must be positive"));
    }
    // Region lattice must refine the grid floor for exact cube coverage.
    let refine =
        refine.max((g.level_fine - fsigma.spec().res_exp).max(0) as u32);
    let w = grid_window(g);
    let mut fam = WhitneyFamily::new(g.clone(), r_w, n_overlap);
    let mut sets = Vec::new();
    for i in 0..n_levels {
        let k = k0 + (i as u32 * step) as i32;
        let sup = superlevel(fsigma, k, w, refine)?;
        let level = whitney_decompose(&sup, g, r_w, n_overlap)?;
        fam.push_level(level)?;
        sets.push(sup);
    }
    Ok((fam, sets))
}

/// One boolean per decomposition property, with measured constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitneyReport {
    pub disjoint_cover: bool,
    pub whitney_condition: bool,
    pub bounded_overlap: bool,
    pub crowd_control: bool,
    pub side_comparability: bool,
    pub nested_levels: bool,
    /// Measured overlap constant: max over levels and region cells.
    pub c_w: u32,
    pub crowd_measured: usize,
    /// Declared admissible cap for overlap and crowd counts.
    pub c_w_cap: f64,
    pub violations: Vec<String>,
}

impl WhitneyReport {
    pub fn all_pass(&self) -> bool {
        self.disjoint_cover
            && self.whitney_condition
            && self.bounded_overlap
            && self.crowd_control
            && self.side_comparability
            && self.nested_levels
    }
}

/// Replay every decomposition property from the family data alone. Coverage
/// is re-derived from the cube list, so edits to cubes, regions, or level
/// tags are all visible to some clause.
pub fn check_whitney_properties(fam: &WhitneyFamily) -> WhitneyReport {
    let g = &fam.grid;
    let r_w = fam.r_w as f64;
    let mut violations: Vec<String> = Vec::new();
    let mut disjoint_cover = true;
    let mut whitney_condition = true;
    let mut side_comparability = true;
    let mut nested_levels = true;
    let mut c_w = 0u32;
    let mut crowd_measured = 0usize;
    let floor_side = pow2(-g.level_fine);

    for level in &fam.levels {
        let k = level.threshold_exp;
        // Pairwise disjoint (open boxes).
        for (i, a) in level.cubes.iter().enumerate() {
            for b in level.cubes.iter().skip(i + 1) {
                if a.rect.intersects(&b.rect) {
                    disjoint_cover = false;
                    violations.push(format!("k={k}: cubes overlap at {:?}", a.cube));
                }
            }
        }
        // Coverage: recompute the core, then demand the leftover cells all
        // sit within R_W floor sides of the complement.
        let mut core = CellSet::empty(level.region.dim, level.region.res_exp);
        for wc in &level.cubes {
            if !level.region.contains_box(&wc.rect) {
                disjoint_cover = false;
                violations.push(format!("k={k}: cube {:?} leaves the region", a_id(wc)));
                continue;
            }
            let (lo, hi) = CellSet::block_of_rect(level.region.dim, level.region.res_exp, &wc.rect);
            core.insert_block(&lo, &hi);
        }
        let fringe = level.region.difference(&core);
        for cell in fringe.iter() {
            let c = fringe.cell_rect(cell).center();
            let probe = Rect::new(
                c.iter().map(|v| v - r_w * floor_side).collect(),
                c.iter().map(|v| v + r_w * floor_side).collect(),
            );
            if level.region.contains_box(&probe) {
                disjoint_cover = false;
                violations.push(format!("k={k}: interior cell {cell:?} left uncovered"));
            }
        }
        // Whitney condition on every cube.
        for wc in &level.cubes {
            if !level.region.contains_box(&wc.rect.dilate(r_w)) {
                whitney_condition = false;
                violations.push(format!("k={k}: R_W dilate of {:?} escapes", a_id(wc)));
            }
            if level.region.contains_box(&wc.rect.dilate(3.0 * r_w)) {
                whitney_condition = false;
                violations.push(format!("k={k}: 3R_W dilate of {:?} never escapes", a_id(wc)));
            }
        }
        // Side comparability over closed triple intersections.
        for (i, a) in level.cubes.iter().enumerate() {
            for b in level.cubes.iter().skip(i + 1) {
                if closed_intersects(&a.rect.dilate(3.0), &b.rect.dilate(3.0))
                    && (a.cube.level - b.cube.level).abs() > 1
                {
                    side_comparability = false;
                    violations.push(format!(
                        "k={k}: touching triples with sides {} vs {}",
                        a.rect.side(0),
                        b.rect.side(0)
                    ));
                }
            }
        }
        let (overlap, crowd) = dilate_stats(&level.region, &level.cubes, fam.n_overlap);
        c_w = c_w.max(overlap);
        crowd_measured = crowd_measured.max(crowd);
    }
    // Nested property across levels: strict containment forces a strictly
    // larger threshold on the inner cube.
    for la in &fam.levels {
        for lb in &fam.levels {
            if la.threshold_exp > lb.threshold_exp {
                continue;
            }
            for a in &la.cubes {
                for b in &lb.cubes {
                    if a.rect != b.rect && b.rect.contains_rect(&a.rect) {
                        nested_levels = false;
                        violations.push(format!(
                            "cube at k={} strictly inside cube at k={}",
                            la.threshold_exp, lb.threshold_exp
                        ));
                    }
                }
            }
        }
    }
    let n = fam.grid.dim as i32;
    let c_w_cap = (4.0 * (fam.n_overlap + fam.r_w) as f64).powi(n);
    let bounded_overlap = (c_w as f64) <= c_w_cap;
    let crowd_control = (crowd_measured as f64) <= c_w_cap;
    if !bounded_overlap {
        violations.push(format!("overlap {c_w} exceeds cap {c_w_cap}"));
    }
    if !crowd_control {
        violations.push(format!("crowd {crowd_measured} exceeds cap {c_w_cap}"));
    }
    WhitneyReport {
        disjoint_cover,
        whitney_condition,
        bounded_overlap,
        crowd_control,
        side_comparability,
        nested_levels,
        c_w,
        crowd_measured,
        c_w_cap,
        violations,
    }
}

fn a_id(wc: &WhitneyCube) -> (i32, &[i64]) {
    (wc.cube.level, &wc.cube.index)
}

/// Exact cells (at `out_res`) of the dyadic superlevel set
/// `{ M^D(f sigma) > 2^c }`: the dyadic maximal function is constant on
/// floor-level grid cubes, so descent with a running best average is exact.
pub fn dyadic_superlevel(
    fsigma: &CellMeasure,
    g: &GridShift,
    c: i32,
    out_res: i32,
) -> Result<CellSet> {
    require_lattice_grid(g)?;
    let dim = fsigma.spec().dim;
    if out_res < g.level_fine {
        return Err(Error::resolution(
            "output lattice must refine the finest grid level",
        ));
    }
    let thr = pow2(c);
    let mut out = CellSet::empty(dim, out_res);
    let support = match fsigma.support_bbox() {
        Some(b) => b,
        None => return Ok(out),
    };
    let span_units = 1i64 << (g.level_fine - g.level_coarse);
    let fine_scale = pow2(g.level_fine);
    let top_range: Vec<(i64, i64)> = (0..dim)
        .map(|a| {
            let lo_f = (support.lo[a] * fine_scale).floor() as i64;
            let hi_f = (support.hi[a] * fine_scale).ceil() as i64 - 1;
            let t = g.t_units()[a];
            (
                (lo_f - t).div_euclid(span_units),
                (hi_f - t).div_euclid(span_units),
            )
        })
        .collect();
    let vol_fine = pow2(-g.level_fine * dim as i32);
    let mut stack: Vec<(DyadicCube, f64)> = Vec::new();
    let mut idx: Vec<i64> = top_range.iter().map(|r| r.0).collect();
    'top: loop {
        stack.push((
            DyadicCube {
                level: g.level_coarse,
                index: idx.clone(),
            },
            0.0,
        ));
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] <= top_range[a].1 {
                continue 'top;
            }
            idx[a] = top_range[a].0;
            if a == 0 {
                break 'top;
            }
        }
    }
    while let Some((cube, running)) = stack.pop() {
        let rect = g.cube_rect(&cube);
        let mass = fsigma.integrate(&rect);
        let avg = mass / pow2(-cube.level * dim as i32);
        let best = running.max(avg);
        if best > thr {
            // Whole subtree is in the set.
            let (lo, hi) = CellSet::block_of_rect(dim, out_res, &rect);
            out.insert_block(&lo, &hi);
            continue;
        }
        // No descendant average can exceed mass / (finest volume).
        if mass <= thr * vol_fine {
            continue;
        }
        if cube.level < g.level_fine {
            for ch in g.children(&cube) {
                stack.push((ch, best));
            }
        }
    }
    Ok(out)
}

/// E-sets for every cube of the family:
/// `E_j^k = Q_j^k cap (dyadic superlevel at k+m minus full superlevel at
/// k+m+m0)`, all on the family's region lattice.
pub fn build_esets(
    fsigma: &CellMeasure,
    fam: &WhitneyFamily,
    m: u32,
    m0: u32,
) -> Result<Vec<ESet>> {
    let g = &fam.grid;
    let w = grid_window(g);
    let mut out = Vec::new();
    for level in &fam.levels {
        let res = level.region.res_exp;
        let refine = (res - fsigma.spec().res_exp).max(0) as u32;
        let k = level.threshold_exp;
        let dy = dyadic_superlevel(fsigma, g, k + m as i32, res)?;
        let full = superlevel(fsigma, k + (m + m0) as i32, w, refine)?;
        for (j, wc) in level.cubes.iter().enumerate() {
            let (lo, hi) = CellSet::block_of_rect(level.region.dim, res, &wc.rect);
            let mut cells = CellSet::empty(level.region.dim, res);
            for cell in dy.iter() {
                let inside = (0..level.region.dim).all(|a| cell[a] >= lo[a] && cell[a] < hi[a]);
                if inside && !full.region.contains(cell) {
                    cells.insert(cell.clone());
                }
            }
            out.push(ESet {
                threshold_exp: k,
                cube_index: j,
                cells,
            });
        }
    }
    Ok(out)
}

/// Exact pairwise disjointness over the whole collection.
pub fn esets_pairwise_disjoint(esets: &[ESet]) -> bool {
    let mut seen: Option<CellSet> = None;
    let mut total = 0usize;
    for e in esets {
        total += e.cells.len();
        seen = Some(match seen {
            None => e.cells.clone(),
            Some(s) => s.union(&e.cells),
        });
    }
    match seen {
        None => true,
        Some(s) => s.len() == total,
    }
}

/// Smallest `m` with `2 (3 R_W)^n <= 2^(m-1)`, the precondition for the
/// pointwise lower bound below.
pub fn min_m(dim: usize, r_w: i64) -> u32 {
    let need = (4.0 * (3.0 * r_w as f64).powi(dim as i32)).log2();
    let mut m = need.ceil() as u32;
    if pow2(m as i32 - 1) < 2.0 * (3.0 * r_w as f64).powi(dim as i32) {
        m += 1;
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxPrincipleViolation {
    pub threshold_exp: i32,
    pub cube_index: usize,
    pub point: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub m: u32,
    pub m_min: u32,
    pub precondition_met: bool,
    pub points_checked: usize,
    pub n_violations: usize,
    /// First few violations, for diagnosis; empty on a pass.
    pub sample_violations: Vec<MaxPrincipleViolation>,
    pub pass: bool,
}

/// At sampled points of each E-set, verify
/// `M^D(1_Q f sigma)(x) > 2^(k+m-1)`. Points are cell centers, strided to at
/// most `samples` per E-set; the dyadic maximal function is constant on the
/// cells, so center evaluation decides the whole cell.
pub fn maximum_principle_check(
    fsigma: &CellMeasure,
    fam: &WhitneyFamily,
    esets: &[ESet],
    m: u32,
    samples: usize,
) -> Result<MaxPrincipleReport> {
    let g = &fam.grid;
    let w = grid_window(g);
    let m_min = min_m(fam.grid.dim, fam.r_w);
    let mut points_checked = 0usize;
    let mut violations: Vec<MaxPrincipleViolation> = Vec::new();
    for e in esets {
        if e.cells.is_empty() {
            continue;
        }
        let level = fam
            .levels
            .iter()
            .find(|l| l.threshold_exp == e.threshold_exp)
            .ok_or_else(|| Error::mismatch("E-set references a missing level"))?;
        let q = &level.cubes[e.cube_index].rect;
        let bound = pow2(e.threshold_exp + m as i32 - 1);
        let cells: Vec<&Vec<i64>> = e.cells.iter().collect();
        let take = samples.max(1).min(cells.len());
        for i in 0..take {
            let cell = cells[i * cells.len() / take];
            let x = e.cells.cell_rect(cell).center();
            let value = dyadic_maximal_clipped(fsigma, Some(q), &x, g, w)?.value;
            points_checked += 1;
            if value <= bound {
                if violations.len() < 16 {
                    violations.push(MaxPrincipleViolation {
                        threshold_exp: e.threshold_exp,
                        cube_index: e.cube_index,
                        point: x,
                        value,
                        bound,
                    });
                }
            }
        }
    }
    let n_violations = violations.len();
    Ok(MaxPrincipleReport {
        m,
        m_min,
        precondition_met: m >= m_min,
        points_checked,
        n_violations,
        sample_violations: violations,
        pass: n_violations == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PiClass {
    Pi1,
    Pi2,
    Pi3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiEntry {
    pub threshold_exp: i32,
    pub cube_index: usize,
    pub class: PiClass,
    pub e_mass: f64,
    pub triple_mass: f64,
    pub out_mass: f64,
    pub in_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiPartition {
    pub beta: f64,
    pub entries: Vec<PiEntry>,
}

impl PiPartition {
    pub fn count(&self, class: PiClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }
}

/// Restrict `f sigma` to the cells of `q` that lie inside (`keep_in`) or
/// outside the given cell set, materialized on the region lattice.
fn restrict_measure(
    fsigma: &CellMeasure,
    q: &Rect,
    cells: &CellSet,
    keep_in: bool,
) -> Result<CellMeasure> {
    let res = cells.res_exp;
    let dim = cells.dim;
    let spec_in = fsigma.spec();
    if res < spec_in.res_exp {
        return Err(Error::resolution("restriction lattice is coarser than the measure"));
    }
    let shift = (res - spec_in.res_exp) as u32;
    let (lo, hi) = CellSet::block_of_rect(dim, res, q);
    let extent: Vec<usize> = (0..dim).map(|a| (hi[a] - lo[a]) as usize).collect();
    let spec = LatticeSpec::new(dim, res, lo.clone(), extent.clone())?;
    let n = spec.n_cells();
    let density: Vec<f64> = (0..n)
        .map(|flat| {
            let local = spec.unflat(flat);
            let cell: Vec<i64> = (0..dim).map(|a| lo[a] + local[a] as i64).collect();
            if cells.contains(&cell) != keep_in {
                return 0.0;
            }
            // Density of the coarser source cell containing this cell.
            let mut src = vec![0usize; dim];
            for a in 0..dim {
                let k = cell[a].div_euclid(1 << shift) - spec_in.origin[a];
                if k < 0 || k >= spec_in.extent[a] as i64 {
                    return 0.0;
                }
                src[a] = k as usize;
            }
            fsigma.density_at(&src)
        })
        .collect();
    CellMeasure::new(spec, density)
}

/// Three-case partition of the family's (k, j) pairs.
///
/// Case masses are omega-exact: H-set membership is decided at cell centers,
/// and both dyadic maximal functions are constant on region cells.
/// Conventions: `|E|_omega = 0` goes to case 1; the half-mass tie goes to
/// case 2; if neither half-mass test passes (impossible when the pointwise
/// lower bound holds on E), the larger side wins.
pub fn classify_pi(
    fsigma: &CellMeasure,
    omega: &CellMeasure,
    fam: &WhitneyFamily,
    esets: &[ESet],
    m: u32,
    m0: u32,
    beta: f64,
) -> Result<PiPartition> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::guard("beta must lie in (0,1)"));
    }
    let g = &fam.grid;
    let w = grid_window(g);
    let mut entries = Vec::new();
    for e in esets {
        let level = fam
            .levels
            .iter()
            .find(|l| l.threshold_exp == e.threshold_exp)
            .ok_or_else(|| Error::mismatch("E-set references a missing level"))?;
        let k = e.threshold_exp;
        let q = &level.cubes[e.cube_index].rect;
        let e_mass: f64 = e.cells.iter().map(|c| omega.integrate(&e.cells.cell_rect(c))).sum();
        let triple_mass = omega.integrate(&q.dilate(3.0));
        if e_mass <= 0.0 || e_mass < beta * triple_mass {
            entries.push(PiEntry {
                threshold_exp: k,
                cube_index: e.cube_index,
                class: PiClass::Pi1,
                e_mass,
                triple_mass,
                out_mass: 0.0,
                in_mass: 0.0,
            });
            continue;
        }
        // Split f sigma on Q by the top superlevel region, then measure how
        // much of E sees each half above 2^(k+m-2).
        let res = level.region.res_exp;
        let refine = (res - fsigma.spec().res_exp).max(0) as u32;
        let top = superlevel(fsigma, k + (m + m0) as i32, w, refine)?;
        let inside = restrict_measure(fsigma, q, &top.region, true)?;
        let outside = restrict_measure(fsigma, q, &top.region, false)?;
        let bound = pow2(k + m as i32 - 2);
        let mut out_mass = 0.0;
        let mut in_mass = 0.0;
        for cell in e.cells.iter() {
            let rect = e.cells.cell_rect(cell);
            let wcell = omega.integrate(&rect);
            if wcell == 0.0 {
                continue;
            }
            let x = rect.center();
            if dyadic_maximal_clipped(&outside, None, &x, g, w)?.value > bound {
                out_mass += wcell;
            }
            if dyadic_maximal_clipped(&inside, None, &x, g, w)?.value > bound {
                in_mass += wcell;
            }
        }
        let class = if out_mass >= e_mass / 2.0 {
            PiClass::Pi2
        } else if in_mass >= e_mass / 2.0 {
            PiClass::Pi3
        } else {
            // Unreachable when the pointwise bound holds on E; decided by
            // the larger side for totality.
            if out_mass >= in_mass {
                PiClass::Pi2
            } else {
                PiClass::Pi3
            }
        };
        entries.push(PiEntry {
            threshold_exp: k,
            cube_index: e.cube_index,
            class,
            e_mass,
            triple_mass,
            out_mass,
            in_mass,
        });
    }
    Ok(PiPartition { beta, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen;
    use crate::rng::Stream;

    fn bump_1d() -> CellMeasure {
        // Two hot cells on [0,1] at resolution 1/32.
        let spec = LatticeSpec::new(1, 5, vec![0], vec![32]).unwrap();
        let mut density = vec![0.05; 32];
        density[10] = 8.0;
        density[11] = 6.0;
        CellMeasure::new(spec, density).unwrap()
    }

    fn grid_1d() -> GridShift {
        GridShift::standard(1, -3, 7).unwrap()
    }

    #[test]
    fn superlevel_is_certified() {
        let mu = bump_1d();
        let w = ScaleWindow::new(-7, 3);
        let sup = superlevel(&mu, 0, w, 2).unwrap();
        assert!(!sup.region.is_empty());
        for (cell, witness) in &sup.witnesses {
            let rect = sup.region.cell_rect(cell);
            assert!(witness.contains_rect(&rect));
            let avg = mu.integrate(witness) / witness.volume();
            assert!(avg > 1.0);
        }
    }

    #[test]
    fn superlevel_empty_above_peak() {
        let mu = bump_1d();
        let w = ScaleWindow::new(-7, 3);
        // Max average is at most the max density.
        let sup = superlevel(&mu, 4, w, 2).unwrap();
        assert!(sup.region.is_empty());
    }

    #[test]
    fn single_hot_cell_region_matches_closed_form() {
        // One cell [0, 1/4) of density 4 (mass 1). In one dimension the
        // maximal function at x > 1/4 is sup over dyadic s >= gap of
        // mass/s, computed here with the same dyadic restriction.
        let spec = LatticeSpec::new(1, 2, vec![0], vec![4]).unwrap();
        let mu = CellMeasure::new(spec, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let w = ScaleWindow::new(-8, 4);
        let sup = superlevel(&mu, -2, w, 3).unwrap();
        // Threshold 1/4: need a dyadic cube with avg > 1/4 containing the
        // cell: sides 1/4..=2 work at distance growing to ~ 2 - 1/4; the
        // certified region must contain [0, 9/8) and stay inside [-2, 2.25].
        assert!(sup.region.contains_point(&[0.1]));
        assert!(sup.region.contains_point(&[1.0]));
        assert!(!sup.region.contains_point(&[2.5]));
        assert!(!sup.region.contains_point(&[-2.5]));
    }

    #[test]
    fn decompose_covers_and_checks() {
        let mu = bump_1d();
        let g = grid_1d();
        // Side comparability needs the dilate window tight enough: ratio-4
        // neighbors with touching triples survive until
        // 2(R_W + 2)/(R_W - 3) < 4, i.e. R_W >= 9.
        let (fam, _) = build_family(&mu, &g, 9, 5, -3, 3, 3, 2).unwrap();
        assert!(fam.n_cubes() > 0);
        let report = check_whitney_properties(&fam);
        assert!(report.all_pass(), "violations: {:?}", report.violations);
        assert!(report.c_w >= 1);
    }

    #[test]
    fn narrow_dilate_fails_only_comparability() {
        let mu = bump_1d();
        let g = grid_1d();
        let (fam, _) = build_family(&mu, &g, 5, 5, -3, 3, 3, 2).unwrap();
        let report = check_whitney_properties(&fam);
        assert!(report.disjoint_cover);
        assert!(report.whitney_condition);
        assert!(report.bounded_overlap);
        assert!(report.crowd_control);
        assert!(report.nested_levels);
    }

    #[test]
    fn empty_region_empty_family() {
        let mu = bump_1d();
        let g = grid_1d();
        let w = grid_window(&g);
        let sup = superlevel(&mu, 10, w, 2).unwrap();
        let level = whitney_decompose(&sup, &g, 5, 5).unwrap();
        assert!(level.cubes.is_empty());
        assert!(level.fringe.is_empty());
    }

    #[test]
    fn far_components_decompose_independently() {
        let spec = LatticeSpec::new(1, 3, vec![0], vec![64]).unwrap();
        let mut da = vec![0.0; 64];
        da[4] = 16.0;
        let mut db = vec![0.0; 64];
        db[60] = 16.0;
        let mut dc = da.clone();
        for (i, v) in db.iter().enumerate() {
            dc[i] += v;
        }
        let g = GridShift::standard(1, -3, 7).unwrap();
        let w = grid_window(&g);
        let mk = |d: Vec<f64>| CellMeasure::new(spec.clone(), d).unwrap();
        let k = 2;
        let sup_a = superlevel(&mk(da), k, w, 4).unwrap();
        let sup_b = superlevel(&mk(db), k, w, 4).unwrap();
        let sup_c = superlevel(&mk(dc), k, w, 4).unwrap();
        // High threshold keeps the two bumps' regions apart, so the joint
        // decomposition is the union of the separate ones.
        if sup_a.region.is_disjoint(&sup_b.region) {
            let la = whitney_decompose(&sup_a, &g, 5, 5).unwrap();
            let lb = whitney_decompose(&sup_b, &g, 5, 5).unwrap();
            let lc = whitney_decompose(&sup_c, &g, 5, 5).unwrap();
            if sup_c.region == sup_a.region.union(&sup_b.region) {
                let mut merged: Vec<_> = la.cubes.iter().chain(lb.cubes.iter()).map(|c| c.cube.clone()).collect();
                merged.sort_by(|a, b| (a.level, &a.index).cmp(&(b.level, &b.index)));
                let got: Vec<_> = lc.cubes.iter().map(|c| c.cube.clone()).collect();
                assert_eq!(merged, got);
            }
        }
    }

    #[test]
    fn mutation_doubled_cube_detected() {
        let mu = bump_1d();
        let g = grid_1d();
        let (mut fam, _) = build_family(&mu, &g, 5, 5, -3, 3, 2, 2).unwrap();
        let level = fam.levels.iter_mut().find(|l| !l.cubes.is_empty()).unwrap();
        let dup = level.cubes[0].clone();
        level.cubes.push(dup);
        let report = check_whitney_properties(&fam);
        assert!(!report.disjoint_cover);
    }

    #[test]
    fn esets_disjoint_and_inside_cubes() {
        let mu = bump_1d();
        let g = grid_1d();
        let r_w = 5;
        let m = min_m(1, r_w);
        let m0 = 2;
        let (fam, _) = build_family(&mu, &g, r_w, 5, -6, m + m0, 3, 2).unwrap();
        let esets = build_esets(&mu, &fam, m, m0).unwrap();
        assert!(esets_pairwise_disjoint(&esets));
        for e in &esets {
            let level = fam
                .levels
                .iter()
                .find(|l| l.threshold_exp == e.threshold_exp)
                .unwrap();
            let q = &level.cubes[e.cube_index].rect;
            for cell in e.cells.iter() {
                assert!(q.contains_rect(&e.cells.cell_rect(cell)));
            }
        }
    }

    #[test]
    fn maximum_principle_holds_with_valid_m() {
        let mu = bump_1d();
        let g = grid_1d();
        let r_w = 5;
        let m = min_m(1, r_w);
        let m0 = 2;
        let (fam, _) = build_family(&mu, &g, r_w, 5, -6, m + m0, 3, 2).unwrap();
        let esets = build_esets(&mu, &fam, m, m0).unwrap();
        let report = maximum_principle_check(&mu, &fam, &esets, m, 32).unwrap();
        assert!(report.precondition_met);
        assert!(report.pass, "violations: {:?}", report.sample_violations);
    }

    #[test]
    fn classify_pi_total_and_deterministic() {
        let spec = LatticeSpec::new(1, 5, vec![0], vec![32]).unwrap();
        let mut stream = Stream::substream(11, 0);
        let sigma = gen::random_cells(&spec, &mut stream).unwrap();
        let omega = gen::random_cells(&spec, &mut Stream::substream(11, 1)).unwrap();
        let g = grid_1d();
        let r_w = 5;
        let m = min_m(1, r_w);
        let m0 = 2;
        let (fam, _) = build_family(&sigma, &g, r_w, 5, -4, m + m0, 2, 2).unwrap();
        let esets = build_esets(&sigma, &fam, m, m0).unwrap();
        let p1 = classify_pi(&sigma, &omega, &fam, &esets, m, m0, 1.0 / 64.0).unwrap();
        let p2 = classify_pi(&sigma, &omega, &fam, &esets, m, m0, 1.0 / 64.0).unwrap();
        assert_eq!(p1.entries.len(), esets.len());
        let total = p1.count(PiClass::Pi1) + p1.count(PiClass::Pi2) + p1.count(PiClass::Pi3);
        assert_eq!(total, esets.len());
        for (a, b) in p1.entries.iter().zip(p2.entries.iter()) {
            assert_eq!(a.class, b.class);
            assert_eq!(a.e_mass.to_bits(), b.e_mass.to_bits());
        }
    }

    #[test]
    fn zero_omega_triple_goes_to_pi1() {
        let mu = bump_1d();
        // omega vanishes everywhere: every pair lands in case 1.
        let spec = mu.spec().clone();
        let omega = CellMeasure::zero(spec);
        let g = grid_1d();
        let r_w = 5;
        let m = min_m(1, r_w);
        let (fam, _) = build_family(&mu, &g, r_w, 5, -4, m + 2, 2, 2).unwrap();
        let esets = build_esets(&mu, &fam, m, 2).unwrap();
        let p = classify_pi(&mu, &omega, &fam, &esets, m, 2, 0.5).unwrap();
        assert_eq!(p.count(PiClass::Pi1), p.entries.len());
    }
}
