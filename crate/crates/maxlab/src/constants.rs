//! Scale-invariant constants attached to a pair of lattice measures.
//!
//! Everything here takes a sup over one shared family of candidate cubes:
//! dyadic side lengths from a scale window, corners on the cell lattice
//! refined by a configurable number of extra levels. The joint-density
//! constant and both testing ratios are exact up to that discretization
//! (masses are closed-form); [`stabilize`] reruns a constant on a widened
//! window as a sufficiency check instead of an exactness claim.
//!
//! The operator-norm estimator returns a certified lower bound only: every
//! reported value is the exact quotient of some explicitly evaluated
//! function, so it can understate the norm but never overstate it.

use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{pow2, Rect, ScaleWindow};
use crate::maximal::{maximal, maximal_clipped};
use crate::measure::{CellFunction, CellMeasure, LatticeSpec};
use crate::mollify::{mollify, MollifierKernel};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Cap on the candidate-cube family size.
pub const MAX_CANDIDATES: usize = 1 << 22;
/// Cap on the quadrature node count.
pub const MAX_NODES: usize = 1 << 22;
/// Indicator seeds drawn from the candidate family per norm search.
const INDICATOR_CAP: usize = 24;
/// Power-iteration stopping: relative Rayleigh change and iteration cap.
const POWER_TOL: f64 = 1e-10;
const POWER_CAP: usize = 500;
/// Base stream for the oscillation spot checks.
const OSC_SEED: u64 = 0x05C1_11E9;

/// Knobs shared by every constant estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestingParams {
    /// Concentric dilation factor for testing denominators.
    pub gamma: f64,
    /// Doubling threshold for the restricted variant.
    pub d: f64,
    /// Admissible cube sides `2^j`.
    pub window: ScaleWindow,
    /// Extra dyadic levels refining candidate corner positions.
    pub position_refine: u32,
    /// Quadrature subdivisions per measure cell per axis.
    pub quad_sub: u32,
}

impl TestingParams {
    /// Defaults: gamma 3, doubling threshold `2^(2n+1) + 1`, one extra
    /// corner level, two quadrature subdivisions per axis.
    pub fn standard(dim: usize, window: ScaleWindow) -> Self {
        TestingParams {
            gamma: 3.0,
            d: pow2(2 * dim as i32 + 1) + 1.0,
            window,
            position_refine: 1,
            quad_sub: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(Error::guard("gamma must be finite and exceed 1"));
        }
        if !(self.d.is_finite() && self.d > 1.0) {
            return Err(Error::guard("doubling threshold must exceed 1"));
        }
        if self.quad_sub == 0 {
            return Err(Error::guard("quad_sub must be positive"));
        }
        Ok(())
    }
}

/// One scale of the candidate family: retained corner positions per axis
/// in units of `2^-step_exp`, cubes of side `2^side_exp`.
#[derive(Debug, Clone)]
struct ScaleBlock {
    side_exp: i32,
    axes: Vec<Vec<i64>>,
    offset: usize,
    len: usize,
}

/// Shared candidate-cube family. Enumeration order is scale ascending,
/// then corner lexicographic; sup loops keep the first maximizer, so
/// witnesses are deterministic and favor the smallest cube.
#[derive(Debug, Clone)]
pub struct CandidateCubes {
    dim: usize,
    step_exp: i32,
    scales: Vec<ScaleBlock>,
    total: usize,
}

impl CandidateCubes {
    /// Candidates covering the joint support of the pair. Empty when
    /// neither measure has support.
    pub fn build(
        sigma: &CellMeasure,
        omega: &CellMeasure,
        p: &TestingParams,
    ) -> Result<CandidateCubes> {
        p.validate()?;
        if sigma.spec().dim != omega.spec().dim {
            return Err(Error::mismatch("measure dimensions differ"));
        }
        let dim = sigma.spec().dim;
        let res = sigma.spec().res_exp.max(omega.spec().res_exp);
        let step_exp = res + p.position_refine as i32;
        let hull = match (sigma.support_bbox(), omega.support_bbox()) {
            (Some(a), Some(b)) => Some(a.hull(&b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        let mut out = CandidateCubes {
            dim,
            step_exp,
            scales: Vec::new(),
            total: 0,
        };
        let Some(hull) = hull else { return Ok(out) };
        let scale = pow2(step_exp);
        for j in p.window.exponents() {
            let side = pow2(j);
            let mut axes = Vec::with_capacity(dim);
            let mut len = 1usize;
            for a in 0..dim {
                // Corners c with (c*step, c*step + side) meeting the open hull.
                let lo_u = ((hull.lo[a] - side) * scale).floor() as i64 + 1;
                let hi_u = ((hull.hi[a]) * scale).ceil() as i64 - 1;
                // Corners whose cube covers the whole hull on this axis give
                // identical masses for every objective here (coverage is a
                // per-axis property of the integration segments), so the
                // covering range keeps only its first corner.
                let cov_lo = ((hull.hi[a] - side) * scale).ceil() as i64;
                let cov_hi = ((hull.lo[a]) * scale).floor() as i64;
                let mut corners = Vec::new();
                let mut c = lo_u;
                while c <= hi_u {
                    corners.push(c);
                    c = if c >= cov_lo && c <= cov_hi {
                        cov_hi + 1
                    } else {
                        c + 1
                    };
                }
                len = len.saturating_mul(corners.len());
                axes.push(corners);
            }
            if len == 0 {
                continue;
            }
            out.scales.push(ScaleBlock {
                side_exp: j,
                axes,
                offset: out.total,
                len,
            });
            out.total += len;
            if out.total > MAX_CANDIDATES {
                return Err(Error::guard(format!(
                    "candidate family exceeds {MAX_CANDIDATES} cubes; shrink the window or refinement"
                )));
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Corner step between neighboring candidates.
    pub fn step(&self) -> f64 {
        pow2(-self.step_exp)
    }

    /// The `i`-th candidate cube.
    pub fn rect(&self, i: usize) -> Rect {
        assert!(i < self.total, "candidate index out of range");
        let blk = self
            .scales
            .iter()
            .find(|b| i < b.offset + b.len)
            .expect("index within total");
        let mut local = i - blk.offset;
        let mut k = vec![0usize; self.dim];
        for a in (0..self.dim).rev() {
            k[a] = local % blk.axes[a].len();
            local /= blk.axes[a].len();
        }
        let step = self.step();
        let corner: Vec<f64> = (0..self.dim)
            .map(|a| blk.axes[a][k[a]] as f64 * step)
            .collect();
        Rect::cube(&corner, pow2(blk.side_exp))
    }

    /// Same family with scales below `2^j_floor` dropped.
    pub fn restrict_min_side(&self, j_floor: i32) -> CandidateCubes {
        let mut out = CandidateCubes {
            dim: self.dim,
            step_exp: self.step_exp,
            scales: Vec::new(),
            total: 0,
        };
        for blk in &self.scales {
            if blk.side_exp < j_floor {
                continue;
            }
            let mut b = blk.clone();
            b.offset = out.total;
            out.total += b.len;
            out.scales.push(b);
        }
        out
    }
}

/// A sup together with the cube achieving it. `witness` is `None` exactly
/// when every candidate evaluated to zero (or there were none).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupResult {
    pub value: f64,
    pub witness: Option<Rect>,
}

/// First-maximizer sup over the candidate family. Values are clamped
/// below at zero, matching the nonnegative objectives used here.
fn sup_over_candidates(
    cands: &CandidateCubes,
    eval: impl Fn(&Rect) -> f64 + Sync + Send,
) -> SupResult {
    let vals = exec::map_indexed(cands.len(), |i| eval(&cands.rect(i)));
    let mut best = 0.0;
    let mut wit = None;
    for (i, &v) in vals.iter().enumerate() {
        if v > best {
            best = v;
            wit = Some(i);
        }
    }
    SupResult {
        value: best,
        witness: wit.map(|i| cands.rect(i)),
    }
}

/// Joint-density constant: sup over candidates of the product of the two
/// averages, with exact masses.
pub fn a2_constant(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
) -> Result<SupResult> {
    let cands = CandidateCubes::build(sigma, omega, p)?;
    Ok(sup_over_candidates(&cands, |q| {
        let vol = q.volume();
        sigma.integrate(q) * omega.integrate(q) / (vol * vol)
    }))
}

/// Inclusive cell-index range of `spec` cells meeting `(lo, hi)` on one axis,
/// returned half-open.
fn cell_index_range(spec: &LatticeSpec, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
    let a = spec.to_lattice(axis, lo).max(0.0);
    let b = spec.to_lattice(axis, hi).min(spec.extent[axis] as f64);
    if a >= b {
        return (0, 0);
    }
    (a.floor() as usize, b.ceil() as usize)
}

/// Odometer over the index box `[lo, hi)`.
fn for_each_index(lo: &[usize], hi: &[usize], mut f: impl FnMut(&[usize])) {
    let dim = lo.len();
    if (0..dim).any(|a| lo[a] >= hi[a]) {
        return;
    }
    let mut k = lo.to_vec();
    'outer: loop {
        f(&k);
        for a in (0..dim).rev() {
            k[a] += 1;
            if k[a] < hi[a] {
                continue 'outer;
            }
            k[a] = lo[a];
            if a == 0 {
                break 'outer;
            }
        }
    }
}

/// Quadrature for `integral over q of M(1_q sigma)^2 domega`: the omega
/// cells meeting `q` split into `quad^n` congruent subcells, and every
/// subcell whose center lies in `q` contributes the maximal value at its
/// center weighted by the subcell's exact mass. With the default corner
/// refinement, subcell boundaries align with candidate faces for any even
/// `quad`, so the rule is exact in the geometry and approximate only in
/// the integrand.
fn restricted_max_sq_integral(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    q: &Rect,
    quad: u32,
    window: ScaleWindow,
) -> f64 {
    let spec = omega.spec();
    let dim = spec.dim;
    let mut lo = vec![0usize; dim];
    let mut hi = vec![0usize; dim];
    for a in 0..dim {
        let (l, h) = cell_index_range(spec, a, q.lo[a], q.hi[a]);
        lo[a] = l;
        hi[a] = h;
    }
    let sub = quad as usize;
    let sub_side = spec.cell_side() / quad as f64;
    let sub_vol = sub_side.powi(dim as i32);
    let mut acc = 0.0;
    for_each_index(&lo, &hi, |k| {
        let d = omega.density_at(k);
        if d == 0.0 {
            return;
        }
        let corner: Vec<f64> = (0..dim)
            .map(|a| spec.corner_coord(a, k[a] as i64))
            .collect();
        for_each_index(&vec![0; dim], &vec![sub; dim], |t| {
            let z: Vec<f64> = (0..dim)
                .map(|a| corner[a] + (t[a] as f64 + 0.5) * sub_side)
                .collect();
            if !q.contains_point(&z) {
                return;
            }
            let m = maximal_clipped(sigma, Some(q), &z, window).value;
            acc += d * sub_vol * m * m;
        });
    });
    acc
}

/// Per-cube testing ratio `sqrt(quad integral / sigma(gamma q))` at an
/// explicit dilation. Zero over zero is zero; a positive numerator over a
/// zero denominator cannot occur and is asserted away.
pub fn cube_testing_ratio(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    q: &Rect,
    gamma: f64,
    quad: u32,
    window: ScaleWindow,
) -> f64 {
    let den = sigma.integrate(&q.dilate(gamma));
    let num = restricted_max_sq_integral(sigma, omega, q, quad, window);
    if den == 0.0 {
        assert!(
            num == 0.0,
            "positive testing numerator over an invisible dilated cube"
        );
        return 0.0;
    }
    (num / den).sqrt()
}

/// Testing ratio sup with quadrature diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestingResult {
    pub value: f64,
    pub witness: Option<Rect>,
    /// Relative spread between the sups computed with one and with four
    /// quadrature subdivisions per axis.
    pub quad_spread: f64,
    /// The spread exceeds five percent.
    pub quad_unstable: bool,
}

/// Restricted testing sup: candidates filtered by the doubling condition
/// `sigma(gamma q) <= d * sigma(q)`, both masses exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictedTestingResult {
    pub value: f64,
    pub witness: Option<Rect>,
    pub n_doubling: usize,
    /// No candidate passed the doubling filter; the value is zero.
    pub empty_filter: bool,
    pub quad_spread: f64,
    pub quad_unstable: bool,
}

/// One sweep evaluating every candidate at the configured quadrature, with
/// an optional doubling filter. The instability diagnostic reevaluates the
/// winning cube at one and at four subdivisions per axis.
fn testing_sweep(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
    cands: &CandidateCubes,
    filter_d: Option<f64>,
) -> (SupResult, f64, f64, usize) {
    let per = exec::map_indexed(cands.len(), |i| {
        let q = cands.rect(i);
        let pass = match filter_d {
            None => true,
            Some(d) => sigma.integrate(&q.dilate(p.gamma)) <= d * sigma.integrate(&q),
        };
        if !pass {
            return (false, 0.0);
        }
        (
            true,
            cube_testing_ratio(sigma, omega, &q, p.gamma, p.quad_sub, p.window),
        )
    });
    let mut best = 0.0;
    let mut wit = None;
    let mut n_pass = 0usize;
    for (i, &(pass, main)) in per.iter().enumerate() {
        if !pass {
            continue;
        }
        n_pass += 1;
        if main > best {
            best = main;
            wit = Some(i);
        }
    }
    let (lo, hi) = match wit {
        Some(i) => {
            let q = cands.rect(i);
            (
                cube_testing_ratio(sigma, omega, &q, p.gamma, 1, p.window),
                cube_testing_ratio(sigma, omega, &q, p.gamma, 4, p.window),
            )
        }
        None => (0.0, 0.0),
    };
    (
        SupResult {
            value: best,
            witness: wit.map(|i| cands.rect(i)),
        },
        lo,
        hi,
        n_pass,
    )
}

fn quad_spread(lo: f64, hi: f64) -> f64 {
    let base = lo.abs().max(hi.abs());
    if base == 0.0 {
        0.0
    } else {
        (hi - lo).abs() / base
    }
}

/// Testing constant over the shared candidate family.
pub fn testing_constant(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
) -> Result<TestingResult> {
    let cands = CandidateCubes::build(sigma, omega, p)?;
    let (sup, lo, hi, _) = testing_sweep(sigma, omega, p, &cands, None);
    let spread = quad_spread(lo, hi);
    Ok(TestingResult {
        value: sup.value,
        witness: sup.witness,
        quad_spread: spread,
        quad_unstable: spread > 0.05,
    })
}

/// Testing constant restricted to doubling candidates.
pub fn restricted_testing_constant(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
) -> Result<RestrictedTestingResult> {
    let cands = CandidateCubes::build(sigma, omega, p)?;
    restricted_over(sigma, omega, p, &cands)
}

fn restricted_over(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
    cands: &CandidateCubes,
) -> Result<RestrictedTestingResult> {
    let (sup, lo, hi, n_doubling) = testing_sweep(sigma, omega, p, cands, Some(p.d));
    let spread = quad_spread(lo, hi);
    Ok(RestrictedTestingResult {
        value: sup.value,
        witness: sup.witness,
        n_doubling,
        empty_filter: n_doubling == 0,
        quad_spread: spread,
        quad_unstable: spread > 0.05,
    })
}

/// One quadrature node: a point and the exact mass of the subcell it
/// represents.
#[derive(Debug, Clone)]
pub struct QuadNode {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Global midpoint nodes over every positive-density cell of `omega`.
pub fn quadrature_nodes(omega: &CellMeasure, quad: u32) -> Result<Vec<QuadNode>> {
    if quad == 0 {
        return Err(Error::guard("quad_sub must be positive"));
    }
    let spec = omega.spec();
    let dim = spec.dim;
    let sub = quad as usize;
    let sub_side = spec.cell_side() / quad as f64;
    let sub_vol = sub_side.powi(dim as i32);
    let nnz = omega.density().iter().filter(|&&d| d > 0.0).count();
    let count = nnz.saturating_mul(sub.pow(dim as u32));
    if count > MAX_NODES {
        return Err(Error::guard(format!(
            "quadrature would use {count} nodes, cap is {MAX_NODES}"
        )));
    }
    let mut nodes = Vec::with_capacity(count);
    for idx in 0..spec.n_cells() {
        let d = omega.density()[idx];
        if d == 0.0 {
            continue;
        }
        let k = spec.unflat(idx);
        let corner: Vec<f64> = (0..dim)
            .map(|a| spec.corner_coord(a, k[a] as i64))
            .collect();
        for_each_index(&vec![0; dim], &vec![sub; dim], |t| {
            let point: Vec<f64> = (0..dim)
                .map(|a| corner[a] + (t[a] as f64 + 0.5) * sub_side)
                .collect();
            nodes.push(QuadNode {
                point,
                weight: d * sub_vol,
            });
        });
    }
    Ok(nodes)
}

/// Search budget for the norm lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Random nonnegative seed functions.
    pub restarts: usize,
    /// Outer reassignment rounds per seed.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            restarts: 4,
            iterations: 8,
            seed: 0x4e4f_524d,
        }
    }
}

/// Certified lower bound for the operator norm, with the function (or
/// cube) achieving it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    /// Best function found by the alternating search, normalized in the
    /// sigma norm. When `extremal_cube` is set, the bound itself comes
    /// from the exact indicator of that cube and `extremal` is its
    /// lattice projection.
    pub extremal: CellFunction,
    pub extremal_cube: Option<Rect>,
    /// Every power iteration met the Rayleigh tolerance before the cap.
    pub converged: bool,
    /// Every outer loop reached a fixed assignment before the cap.
    pub assignments_stable: bool,
    /// The nonnegativity projection never fired (the frozen map has a
    /// nonnegative kernel, so it must not).
    pub clamp_was_noop: bool,
}

/// Deterministic stride subsample of the candidate family used for
/// indicator seeding.
pub fn indicator_picks(n_candidates: usize) -> Vec<usize> {
    if n_candidates == 0 {
        return Vec::new();
    }
    let stride = n_candidates.div_ceil(INDICATOR_CAP).max(1);
    (0..n_candidates).step_by(stride).collect()
}

/// Fraction of each cell covered by `q`.
fn indicator_projection(spec: &LatticeSpec, q: &Rect) -> Vec<f64> {
    let dim = spec.dim;
    let mut vals = vec![0.0; spec.n_cells()];
    let side = spec.cell_side();
    let mut lo = vec![0usize; dim];
    let mut hi = vec![0usize; dim];
    for a in 0..dim {
        let (l, h) = cell_index_range(spec, a, q.lo[a], q.hi[a]);
        lo[a] = l;
        hi[a] = h;
    }
    for_each_index(&lo, &hi, |k| {
        let mut frac = 1.0;
        for a in 0..dim {
            let c0 = spec.corner_coord(a, k[a] as i64);
            let c1 = c0 + side;
            frac *= (q.hi[a].min(c1) - q.lo[a].max(c0)).max(0.0) / side;
        }
        vals[spec.flat(k)] = frac;
    });
    vals
}

fn norm_sq_weighted(spec: &LatticeSpec, f: &[f64], sigma: &CellMeasure) -> f64 {
    let mut s = 0.0;
    for (v, d) in f.iter().zip(sigma.density()) {
        s += v * v * d;
    }
    s * spec.cell_volume()
}

/// Exact quotient of `f` (nonnegative cell values): quadrature of the true
/// maximal function squared over the nodes, over the squared sigma norm.
fn true_quotient(
    sigma: &CellMeasure,
    nodes: &[QuadNode],
    f: &[f64],
    window: ScaleWindow,
) -> Result<f64> {
    let spec = sigma.spec().clone();
    let den = norm_sq_weighted(&spec, f, sigma);
    if den == 0.0 {
        return Ok(0.0);
    }
    let density: Vec<f64> = f.iter().zip(sigma.density()).map(|(v, d)| v * d).collect();
    let fs = CellMeasure::new(spec, density)?;
    let mut num = 0.0;
    for node in nodes {
        let m = maximal(&fs, &node.point, window).value;
        num += node.weight * m * m;
    }
    Ok((num / den).sqrt())
}

struct RunOutcome {
    value: f64,
    f: Vec<f64>,
    converged: bool,
    stable: bool,
    clamp_noop: bool,
}

/// Alternating maximization from one seed: assign each node its argmax
/// cube, maximize the frozen linear model by power iteration, reassign,
/// repeat until the assignment fixes or the round cap hits. The reported
/// value is always a true quotient, never the frozen model's.
fn alternating_run(
    sigma: &CellMeasure,
    nodes: &[QuadNode],
    window: ScaleWindow,
    seed_values: Vec<f64>,
    rounds: usize,
) -> Result<RunOutcome> {
    let spec = sigma.spec().clone();
    let mut f = seed_values;
    let nrm = norm_sq_weighted(&spec, &f, sigma).sqrt();
    if nrm == 0.0 {
        return Ok(RunOutcome {
            value: 0.0,
            f,
            converged: true,
            stable: true,
            clamp_noop: true,
        });
    }
    for v in f.iter_mut() {
        *v /= nrm;
    }
    let mut best_value = true_quotient(sigma, nodes, &f, window)?;
    let mut best_f = f.clone();
    let mut converged = true;
    let mut clamp_noop = true;
    let mut stable = false;
    let mut prev_assign: Option<Vec<Rect>> = None;
    for _ in 0..rounds {
        let density: Vec<f64> = f.iter().zip(sigma.density()).map(|(v, d)| v * d).collect();
        let fs = CellMeasure::new(spec.clone(), density)?;
        let assign: Vec<Rect> = nodes
            .iter()
            .map(|node| maximal(&fs, &node.point, window).witness)
            .collect();
        if prev_assign.as_ref() == Some(&assign) {
            stable = true;
            break;
        }
        let power = power_iterate(sigma, nodes, &assign, &f)?;
        converged &= power.converged;
        clamp_noop &= power.clamp_noop;
        f = power.f;
        if norm_sq_weighted(&spec, &f, sigma) == 0.0 {
            stable = true;
            break;
        }
        let q = true_quotient(sigma, nodes, &f, window)?;
        if q > best_value {
            best_value = q;
            best_f = f.clone();
        }
        prev_assign = Some(assign);
    }
    Ok(RunOutcome {
        value: best_value,
        f: best_f,
        converged,
        stable,
        clamp_noop,
    })
}

struct PowerOutcome {
    f: Vec<f64>,
    converged: bool,
    clamp_noop: bool,
}

/// Power iteration on the normal operator of the assignment-frozen map.
/// The map sends `f` to its average over each node's assigned cube; the
/// adjoint scatters node values back over the overlapped cells. All
/// coefficients are nonnegative, so the clamp is expected to be inert.
fn power_iterate(
    sigma: &CellMeasure,
    nodes: &[QuadNode],
    assign: &[Rect],
    start: &[f64],
) -> Result<PowerOutcome> {
    let spec = sigma.spec().clone();
    let dim = spec.dim;
    let cell_vol = spec.cell_volume();
    let mut f = start.to_vec();
    let mut rayleigh = f64::NAN;
    let mut converged = false;
    let mut clamp_noop = true;
    for _ in 0..POWER_CAP {
        let density: Vec<f64> = f.iter().zip(sigma.density()).map(|(v, d)| v * d).collect();
        let fs = CellMeasure::new(spec.clone(), density)?;
        let y: Vec<f64> = nodes
            .iter()
            .zip(assign)
            .map(|(node, w)| {
                let vol = w.volume();
                if vol > 0.0 {
                    fs.integrate(w) / vol
                } else {
                    let _ = node;
                    0.0
                }
            })
            .collect();
        let r_new: f64 = nodes
            .iter()
            .zip(&y)
            .map(|(node, &yi)| node.weight * yi * yi)
            .sum();
        if rayleigh.is_finite() && (r_new - rayleigh).abs() <= POWER_TOL * r_new.abs().max(1e-300) {
            converged = true;
            break;
        }
        rayleigh = r_new;
        // Adjoint scatter: node z adds weight * y_z / vol(W_z) times the
        // overlap volume to every cell its cube touches.
        let mut g = vec![0.0; spec.n_cells()];
        for (node, (w, &yz)) in nodes.iter().zip(assign.iter().zip(&y)) {
            let vol = w.volume();
            if yz == 0.0 || vol <= 0.0 {
                continue;
            }
            let lam = node.weight * yz / vol;
            let mut lo = vec![0usize; dim];
            let mut hi = vec![0usize; dim];
            for a in 0..dim {
                let (l, h) = cell_index_range(&spec, a, w.lo[a], w.hi[a]);
                lo[a] = l;
                hi[a] = h;
            }
            let side = spec.cell_side();
            for_each_index(&lo, &hi, |k| {
                let mut ov = 1.0;
                for a in 0..dim {
                    let c0 = spec.corner_coord(a, k[a] as i64);
                    let c1 = c0 + side;
                    ov *= (w.hi[a].min(c1) - w.lo[a].max(c0)).max(0.0);
                }
                g[spec.flat(k)] += lam * ov;
            });
        }
        for (i, gi) in g.iter_mut().enumerate() {
            if sigma.density()[i] > 0.0 {
                *gi /= cell_vol;
            } else {
                *gi = 0.0;
            }
            if *gi < 0.0 {
                clamp_noop = false;
                *gi = 0.0;
            }
        }
        let nrm = norm_sq_weighted(&spec, &g, sigma).sqrt();
        if nrm == 0.0 {
            converged = true;
            f = g;
            break;
        }
        for gi in g.iter_mut() {
            *gi /= nrm;
        }
        f = g;
    }
    Ok(PowerOutcome {
        f,
        converged,
        clamp_noop,
    })
}

/// Lower bound for the operator norm of the maximal map from the sigma
/// space to the omega space, searched by alternating maximization over
/// indicator and random seeds. Guaranteed at least the quotient of every
/// sampled indicator, because those quotients are evaluated exactly and
/// the maximum includes them.
pub fn estimate_norm_lower(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
    search: &SearchBudget,
) -> Result<NormEstimate> {
    p.validate()?;
    if !(sigma.total_mass() > 0.0) {
        return Err(Error::guard("sigma must have positive total mass"));
    }
    let spec = sigma.spec().clone();
    let nodes = quadrature_nodes(omega, p.quad_sub)?;
    let cands = CandidateCubes::build(sigma, omega, p)?;
    let picks = indicator_picks(cands.len());

    // Exact indicator quotients: the measure restricted to the cube, not
    // its lattice projection.
    let exact: Vec<f64> = exec::map_indexed(picks.len(), |t| {
        let q = cands.rect(picks[t]);
        let den = sigma.integrate(&q);
        if den == 0.0 {
            return 0.0;
        }
        let mut num = 0.0;
        for node in &nodes {
            let m = maximal_clipped(sigma, Some(&q), &node.point, p.window).value;
            num += node.weight * m * m;
        }
        (num / den).sqrt()
    });

    // Alternating runs: warm starts from the same indicators' projections,
    // then random nonnegative seeds.
    let n_runs = picks.len() + search.restarts;
    let runs: Vec<Result<RunOutcome>> = exec::map_indexed(n_runs, |r| {
        let seed_values = if r < picks.len() {
            indicator_projection(&spec, &cands.rect(picks[r]))
        } else {
            let mut rng = Stream::substream(search.seed, (r - picks.len()) as u64);
            (0..spec.n_cells()).map(|_| rng.next_f64()).collect()
        };
        alternating_run(sigma, &nodes, p.window, seed_values, search.iterations)
    });

    let mut best_value = 0.0f64;
    let mut best_f: Option<Vec<f64>> = None;
    let mut best_cube: Option<usize> = None;
    let mut converged = true;
    let mut stable = true;
    let mut clamp_noop = true;
    for (t, &q) in exact.iter().enumerate() {
        if q > best_value {
            best_value = q;
            best_cube = Some(picks[t]);
            best_f = None;
        }
    }
    for run in runs {
        let run = run?;
        converged &= run.converged;
        stable &= run.stable;
        clamp_noop &= run.clamp_noop;
        if run.value > best_value {
            best_value = run.value;
            best_f = Some(run.f);
            best_cube = None;
        }
    }
    let (values, cube) = match (best_f, best_cube) {
        (Some(f), _) => (f, None),
        (None, Some(i)) => (indicator_projection(&spec, &cands.rect(i)), Some(cands.rect(i))),
        (None, None) => (vec![0.0; spec.n_cells()], None),
    };
    Ok(NormEstimate {
        value: best_value,
        extremal: CellFunction::new(spec, values)?,
        extremal_cube: cube,
        converged,
        assignments_stable: stable,
        clamp_was_noop: clamp_noop,
    })
}

/// A constant recomputed on a widened scale window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stabilized {
    pub value: f64,
    pub widened_value: f64,
    pub rel_change: f64,
    /// Relative change at most `1e-6`.
    pub stable: bool,
    pub window: ScaleWindow,
    pub widened_window: ScaleWindow,
}

/// Rerun `compute` with the window widened by `extra_levels` on both ends
/// and compare. A tiny relative change certifies the window saw every
/// scale that matters; a large one means the sup is window-limited.
pub fn stabilize(
    compute: impl Fn(&TestingParams) -> Result<f64>,
    p: &TestingParams,
    extra_levels: i32,
) -> Result<Stabilized> {
    let value = compute(p)?;
    let mut wide = p.clone();
    wide.window = p.window.widen(extra_levels);
    let widened_value = compute(&wide)?;
    let base = value.abs().max(widened_value.abs());
    let rel_change = if base == 0.0 {
        0.0
    } else {
        (widened_value - value).abs() / base
    };
    Ok(Stabilized {
        value,
        widened_value,
        rel_change,
        stable: rel_change <= 1e-6,
        window: p.window,
        widened_window: wide.window,
    })
}

/// Every constant for one measure pair, with stabilization flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub params: TestingParams,
    pub a2: SupResult,
    pub t_gamma: TestingResult,
    pub t_d_gamma: RestrictedTestingResult,
    pub norm_lb: NormEstimate,
    /// `norm_lb / (t_d_gamma + sqrt(a2))`; zero when the denominator is.
    pub ratio: f64,
    pub a2_stable: bool,
    pub t_stable: bool,
    pub t_d_stable: bool,
}

pub fn constants_report(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    p: &TestingParams,
    search: &SearchBudget,
    stabilize_extra: i32,
) -> Result<ConstantsReport> {
    let a2 = stabilize(|q| Ok(a2_constant(sigma, omega, q)?.value), p, stabilize_extra)?;
    let t = stabilize(
        |q| Ok(testing_constant(sigma, omega, q)?.value),
        p,
        stabilize_extra,
    )?;
    let td = stabilize(
        |q| Ok(restricted_testing_constant(sigma, omega, q)?.value),
        p,
        stabilize_extra,
    )?;
    let a2_full = a2_constant(sigma, omega, p)?;
    let t_full = testing_constant(sigma, omega, p)?;
    let td_full = restricted_testing_constant(sigma, omega, p)?;
    let norm_lb = estimate_norm_lower(sigma, omega, p, search)?;
    let den = td_full.value + a2_full.value.sqrt();
    let ratio = if den > 0.0 { norm_lb.value / den } else { 0.0 };
    Ok(ConstantsReport {
        params: p.clone(),
        a2: a2_full,
        t_gamma: t_full,
        t_d_gamma: td_full,
        norm_lb,
        ratio,
        a2_stable: a2.stable,
        t_stable: t.stable,
        t_d_stable: td.stable,
    })
}

/// One row of the smoothing comparison: constants of the smoothed pair
/// (sigma at `8 eps`, omega at `eps`) against the originals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifiedRow {
    pub eps: f64,
    pub a2: f64,
    /// Against the unsmoothed value; zero over zero is zero.
    pub a2_ratio: f64,
    pub t_restricted: f64,
    pub t_ratio: f64,
    /// Smallest admitted side exponent after the side floor `eps <= alpha * side`.
    pub min_side_exp: i32,
    /// The side floor emptied the window; the testing value is zero.
    pub window_emptied: bool,
    /// Max over the spot checks of the smoothed-average oscillation
    /// quotient; infinite if a check had a vanishing right side.
    pub osc_max_c: f64,
    pub osc_checked: usize,
    pub osc_skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifiedReport {
    pub gamma_prime: f64,
    pub d_prime: f64,
    pub alpha: f64,
    pub base_a2: f64,
    pub base_t_restricted: f64,
    pub rows: Vec<MollifiedRow>,
}

/// Number of oscillation spot checks per row.
const OSC_CHECKS: usize = 50;

/// Stability of the constants under smoothing. For each width the pair is
/// smoothed asymmetrically (sigma eight times wider), the joint-density
/// and restricted-testing constants are recomputed with the dilation
/// bumped by one and candidate sides floored at `eps / alpha`, and the
/// sharper smoothing of sigma is spot-checked to dominate pointwise after
/// a sub-`eps` shift.
pub fn mollified_stability_report(
    sigma: &CellMeasure,
    omega: &CellMeasure,
    eps_list: &[f64],
    p: &TestingParams,
) -> Result<MollifiedReport> {
    p.validate()?;
    let dim = sigma.spec().dim;
    if dim != omega.spec().dim {
        return Err(Error::mismatch("measure dimensions differ"));
    }
    let kernel = MollifierKernel::standard(dim)?;
    let gamma_prime = p.gamma + 1.0;
    let alpha = ((gamma_prime / p.gamma - 1.0) / 288.0).min(1.0 / 32.0);
    let d_prime = p.d;
    let base_a2 = a2_constant(sigma, omega, p)?.value;
    let base_t = restricted_testing_constant(sigma, omega, p)?.value;

    let mut rows = Vec::with_capacity(eps_list.len());
    for (row_idx, &eps) in eps_list.iter().enumerate() {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::guard("smoothing widths must be positive"));
        }
        // Output cells no wider than eps/2, the resolution the narrower
        // smoothing supports.
        let out_res = (2.0 / eps).log2().ceil() as i32;
        let sigma_wide = mollify(sigma, 8.0 * eps, &kernel, out_res)?;
        let sigma_narrow = mollify(sigma, eps, &kernel, out_res)?;
        let omega_eps = mollify(omega, eps, &kernel, out_res)?;

        let mut pe = p.clone();
        pe.gamma = gamma_prime;
        pe.d = d_prime;
        // Smallest dyadic side with eps <= alpha * side. The floor applies
        // to candidate cubes only; the maximal operator inside the testing
        // integral keeps the full window.
        let mut j_floor = p.window.j_min;
        while j_floor <= p.window.j_max && alpha * pow2(j_floor) < eps {
            j_floor += 1;
        }
        let a2_eps = a2_constant(&sigma_wide, &omega_eps, &pe)?.value;
        let floored =
            CandidateCubes::build(&sigma_wide, &omega_eps, &pe)?.restrict_min_side(j_floor);
        let window_emptied = j_floor > p.window.j_max || floored.is_empty();
        let t_eps = if window_emptied {
            0.0
        } else {
            restricted_over(&sigma_wide, &omega_eps, &pe, &floored)?.value
        };

        // Oscillation spot checks: the narrow smoothing at x against the
        // wide smoothing at a point within eps of x.
        let cands = CandidateCubes::build(&sigma_wide, &omega_eps, p)?;
        let mut rng = Stream::substream(OSC_SEED, row_idx as u64);
        let mut osc_max: f64 = 0.0;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for _ in 0..OSC_CHECKS {
            if cands.is_empty() {
                break;
            }
            let q = cands.rect(rng.below(cands.len() as u64) as usize);
            let probe = q.dilate(p.gamma);
            let x: Vec<f64> = (0..dim)
                .map(|a| probe.lo[a] + rng.next_f64() * (probe.hi[a] - probe.lo[a]))
                .collect();
            let h = loop {
                let h: Vec<f64> = (0..dim).map(|_| (2.0 * rng.next_f64() - 1.0) * eps).collect();
                if h.iter().map(|v| v * v).sum::<f64>() < eps * eps {
                    break h;
                }
            };
            let num = maximal_clipped(&sigma_narrow, Some(&q), &x, p.window).value;
            if num == 0.0 {
                skipped += 1;
                continue;
            }
            let y: Vec<f64> = x.iter().zip(&h).map(|(&a, &b)| a + b).collect();
            let den = maximal_clipped(&sigma_wide, Some(&q), &y, p.window).value;
            checked += 1;
            osc_max = osc_max.max(if den > 0.0 { num / den } else { f64::INFINITY });
        }

        rows.push(MollifiedRow {
            eps,
            a2: a2_eps,
            a2_ratio: ratio_or_zero(a2_eps, base_a2),
            t_restricted: t_eps,
            t_ratio: ratio_or_zero(t_eps, base_t),
            min_side_exp: j_floor,
            window_emptied,
            osc_max_c: osc_max,
            osc_checked: checked,
            osc_skipped: skipped,
        });
    }
    Ok(MollifiedReport {
        gamma_prime,
        d_prime,
        alpha,
        base_a2,
        base_t_restricted: base_t,
        rows,
    })
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen;

    fn unit_uniform(res: i32) -> CellMeasure {
        let cells = 1usize << res.max(0);
        let spec = LatticeSpec::new(1, res, vec![0], vec![cells]).unwrap();
        gen::uniform(&spec, 1.0).unwrap()
    }

    fn params(window: ScaleWindow) -> TestingParams {
        TestingParams::standard(1, window)
    }

    #[test]
    fn a2_of_uniform_pair_is_one() {
        let s = unit_uniform(3);
        let w = unit_uniform(3);
        let r = a2_constant(&s, &w, &params(ScaleWindow::new(-3, 1))).unwrap();
        assert_eq!(r.value, 1.0);
        let q = r.witness.unwrap();
        assert!(q.lo[0] >= 0.0 && q.hi[0] <= 1.0);
    }

    #[test]
    fn a2_scales_linearly_in_each_measure() {
        let s = unit_uniform(2);
        let w = unit_uniform(2);
        let p = params(ScaleWindow::new(-2, 1));
        let base = a2_constant(&s, &w, &p).unwrap().value;
        let s4 = s.scale(4.0).unwrap();
        let quad = a2_constant(&s4, &w, &p).unwrap().value;
        assert_eq!(quad.to_bits(), (4.0 * base).to_bits());
    }

    #[test]
    fn a2_of_disjoint_neighbors_peaks_at_quarter() {
        let s_spec = LatticeSpec::new(1, 0, vec![0], vec![1]).unwrap();
        let w_spec = LatticeSpec::new(1, 0, vec![1], vec![1]).unwrap();
        let s = gen::uniform(&s_spec, 1.0).unwrap();
        let w = gen::uniform(&w_spec, 1.0).unwrap();
        let r = a2_constant(&s, &w, &params(ScaleWindow::new(-2, 2))).unwrap();
        assert!((r.value - 0.25).abs() < 1e-12, "value {}", r.value);
        // Scales scan ascending, so the first maximizer is the side-1 cube
        // straddling the interface.
        let q = r.witness.unwrap();
        assert_eq!(q.side(0), 1.0);
        assert_eq!(q.lo[0], 0.5);
    }

    #[test]
    fn testing_of_zero_omega_is_zero() {
        let s = unit_uniform(2);
        let w = CellMeasure::zero(s.spec().clone());
        let r = testing_constant(&s, &w, &params(ScaleWindow::new(-2, 1))).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.witness.is_none());
        assert!(!r.quad_unstable);
    }

    #[test]
    fn testing_scales_by_sqrt_of_sigma_factor() {
        let mut rng = Stream::new(41);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![8]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-3, 1));
        let base = testing_constant(&s, &w, &p).unwrap().value;
        let s4 = s.scale(4.0).unwrap();
        let scaled = testing_constant(&s4, &w, &p).unwrap().value;
        assert_eq!(scaled.to_bits(), (2.0 * base).to_bits());
    }

    #[test]
    fn restricted_below_testing_and_monotone_in_d() {
        let mut rng = Stream::new(97);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![8]).unwrap();
        for _ in 0..6 {
            let s = gen::random_cells(&spec, &mut rng).unwrap();
            let w = gen::random_cells(&spec, &mut rng).unwrap();
            let p = params(ScaleWindow::new(-3, 1));
            let t = testing_constant(&s, &w, &p).unwrap();
            let td = restricted_testing_constant(&s, &w, &p).unwrap();
            assert!(td.value <= t.value);
            let mut tight = p.clone();
            tight.d = 2.0;
            let td_tight = restricted_testing_constant(&s, &w, &tight).unwrap();
            assert!(td_tight.value <= td.value);
            assert!(td_tight.n_doubling <= td.n_doubling);
        }
    }

    #[test]
    fn testing_antitone_in_gamma() {
        let mut rng = Stream::new(53);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![8]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let mut p = params(ScaleWindow::new(-3, 1));
        let t3 = testing_constant(&s, &w, &p).unwrap().value;
        p.gamma = 2.0;
        let t2 = testing_constant(&s, &w, &p).unwrap().value;
        assert!(t2 >= t3);
    }

    #[test]
    fn uniform_pair_has_doubling_candidates() {
        let s = unit_uniform(3);
        let w = unit_uniform(3);
        let p = params(ScaleWindow::new(-3, 0));
        let td = restricted_testing_constant(&s, &w, &p).unwrap();
        assert!(td.n_doubling > 0);
        assert!(!td.empty_filter);
        let t = testing_constant(&s, &w, &p).unwrap();
        assert!(td.value <= t.value);
    }

    #[test]
    fn norm_bound_dominates_indicator_ratios() {
        let mut rng = Stream::new(7);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![4]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-2, 0));
        let est = estimate_norm_lower(&s, &w, &p, &SearchBudget::default()).unwrap();
        let nodes = quadrature_nodes(&w, p.quad_sub).unwrap();
        let cands = CandidateCubes::build(&s, &w, &p).unwrap();
        for &i in &indicator_picks(cands.len()) {
            let q = cands.rect(i);
            let den = s.integrate(&q);
            if den == 0.0 {
                continue;
            }
            let mut num = 0.0;
            for node in &nodes {
                let m = maximal_clipped(&s, Some(&q), &node.point, p.window).value;
                num += node.weight * m * m;
            }
            assert!(est.value >= (num / den).sqrt());
        }
        assert!(est.clamp_was_noop);
    }

    #[test]
    fn norm_bound_exceeds_unit_dilation_cube_ratios() {
        // Quadrature of the square over a cube never exceeds the same sum
        // over every node, and the undilated cube mass matches the
        // indicator's squared norm, so each candidate's ratio is a floor.
        let mut rng = Stream::new(11);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![4]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-2, 0));
        let est = estimate_norm_lower(&s, &w, &p, &SearchBudget::default()).unwrap();
        let cands = CandidateCubes::build(&s, &w, &p).unwrap();
        for &i in &indicator_picks(cands.len()) {
            let q = cands.rect(i);
            let ratio = cube_testing_ratio(&s, &w, &q, 1.0, p.quad_sub, p.window);
            assert!(
                est.value >= ratio,
                "norm {} below unit-dilation ratio {ratio}",
                est.value
            );
        }
    }

    #[test]
    fn norm_homogeneity_is_exact_with_power_of_two_scaling() {
        let mut rng = Stream::new(23);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![4]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-2, 0));
        let search = SearchBudget::default();
        let base = estimate_norm_lower(&s, &w, &p, &search).unwrap();
        let s4 = s.scale(4.0).unwrap();
        let scaled = estimate_norm_lower(&s4, &w, &p, &search).unwrap();
        assert_eq!(scaled.value.to_bits(), (2.0 * base.value).to_bits());
        assert_eq!(scaled.converged, base.converged);
        assert_eq!(scaled.assignments_stable, base.assignments_stable);
    }

    #[test]
    fn constants_are_translation_invariant_bitwise() {
        let mut rng = Stream::new(83);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![8]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-3, 1));
        let a = a2_constant(&s, &w, &p).unwrap();
        let t = testing_constant(&s, &w, &p).unwrap();
        let shift = 20i64;
        let st = s.translate(&[shift]).unwrap();
        let wt = w.translate(&[shift]).unwrap();
        let at = a2_constant(&st, &wt, &p).unwrap();
        let tt = testing_constant(&st, &wt, &p).unwrap();
        assert_eq!(a.value.to_bits(), at.value.to_bits());
        assert_eq!(t.value.to_bits(), tt.value.to_bits());
        let moved = shift as f64 * s.spec().cell_side();
        let (qa, qat) = (a.witness.unwrap(), at.witness.unwrap());
        assert_eq!(qa.lo[0] + moved, qat.lo[0]);
        let (qt, qtt) = (t.witness.unwrap(), tt.witness.unwrap());
        assert_eq!(qt.lo[0] + moved, qtt.lo[0]);
    }

    #[test]
    fn stabilize_flags_uniform_pair_immediately() {
        let s = unit_uniform(2);
        let w = unit_uniform(2);
        let p = params(ScaleWindow::new(-2, 3));
        let st = stabilize(|q| Ok(a2_constant(&s, &w, q)?.value), &p, 2).unwrap();
        assert!(st.stable);
        assert_eq!(st.value, st.widened_value);
    }

    #[test]
    fn widening_the_top_does_not_change_a2_of_tiny_support() {
        // Support diameter far below the top scale: averages only dilute.
        let spec = LatticeSpec::new(1, 4, vec![0], vec![2]).unwrap();
        let s = gen::uniform(&spec, 1.0).unwrap();
        let w = gen::uniform(&spec, 1.0).unwrap();
        let p = params(ScaleWindow::new(-4, 4));
        let base = a2_constant(&s, &w, &p).unwrap().value;
        let mut top = p.clone();
        top.window = ScaleWindow::new(-4, 7);
        let widened = a2_constant(&s, &w, &top).unwrap().value;
        assert_eq!(base.to_bits(), widened.to_bits());
    }

    #[test]
    fn stabilize_converges_on_random_pair_seed_13() {
        let mut rng = Stream::new(13);
        let spec = LatticeSpec::new(1, 2, vec![0], vec![8]).unwrap();
        let s = gen::random_cells(&spec, &mut rng).unwrap();
        let w = gen::random_cells(&spec, &mut rng).unwrap();
        let p = params(ScaleWindow::new(-4, 3));
        let st = stabilize(|q| Ok(a2_constant(&s, &w, q)?.value), &p, 2).unwrap();
        assert!(st.stable, "rel change {}", st.rel_change);
    }

    #[test]
    fn candidate_family_is_deterministic_and_in_scale_order() {
        let s = unit_uniform(2);
        let w = unit_uniform(2);
        let p = params(ScaleWindow::new(-2, 1));
        let c = CandidateCubes::build(&s, &w, &p).unwrap();
        assert!(c.len() > 0);
        let mut last_side = 0.0;
        for i in 0..c.len() {
            let side = c.rect(i).side(0);
            assert!(side >= last_side);
            last_side = side;
        }
        let floored = c.restrict_min_side(0);
        assert!(floored.len() < c.len());
        for i in 0..floored.len() {
            assert!(floored.rect(i).side(0) >= 1.0);
        }
    }

    #[test]
    fn mollified_uniform_constants_stay_within_ten_percent() {
        let s = unit_uniform(2);
        let w = unit_uniform(2);
        // The candidate side floor needs scales up to 864 eps, hence the
        // tall window.
        let p = params(ScaleWindow::new(-2, 6));
        // Width a quarter cell.
        let rep = mollified_stability_report(&s, &w, &[1.0 / 16.0], &p).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let row = &rep.rows[0];
        assert!(
            (row.a2_ratio - 1.0).abs() <= 0.10,
            "a2 ratio {}",
            row.a2_ratio
        );
        assert!(!row.window_emptied);
        assert!(
            (row.t_ratio - 1.0).abs() <= 0.10,
            "testing ratio {}",
            row.t_ratio
        );
        assert!(row.osc_max_c.is_finite());
        assert!(row.osc_checked > 0);
    }
}
