//! Maximal-operator evaluation.
//!
//! For a lattice measure the average over the cube `[c, c+s]^n` is piecewise
//! multilinear in the corner `c` with breakpoints only where a cube face
//! crosses a cell boundary. The supremum over all cubes of dyadic side
//! containing a point is therefore attained on a finite candidate set of
//! corners per axis: cell boundaries, cell boundaries shifted down by the
//! side, and the two clamp positions. Dimensions one and two enumerate the
//! full candidate product; dimension three runs coordinate ascent over the
//! candidate lists with deterministic restarts and is flagged as heuristic.

use crate::error::Result;
use crate::exec;
use crate::geom::{pow2, Rect, ScaleWindow};
use crate::grid::{sample_grid, DyadicCube, GridFamily, GridShift};
use crate::measure::{CellMeasure, LatticeSpec};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Value of a maximal function at a point, with the cube that achieves it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximalValue {
    pub value: f64,
    /// Cube realizing `value` (average of the measure over `witness`).
    pub witness: Rect,
    /// The witness side sits at an edge of the scale window, so widening
    /// the window could change the value.
    pub scale_saturated: bool,
    /// False when the position search was exhaustive over the candidate
    /// set (dimensions one and two); true for the coordinate-ascent path.
    pub heuristic: bool,
}

/// Per-axis corner candidates for maximizing cube mass.
fn axis_candidates(
    spec: &LatticeSpec,
    clip: Option<&Rect>,
    axis: usize,
    s: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let mut cand = vec![lo, hi];
    let mut push = |b: f64| {
        if b >= lo && b <= hi {
            cand.push(b);
        }
        let shifted = b - s;
        if shifted >= lo && shifted <= hi {
            cand.push(shifted);
        }
    };
    for k in 0..=spec.extent[axis] {
        push(spec.corner_coord(axis, k as i64));
    }
    if let Some(c) = clip {
        push(c.lo[axis]);
        push(c.hi[axis]);
    }
    cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cand.dedup();
    cand
}

fn cube_mass(mu: &CellMeasure, clip: Option<&Rect>, corner: &[f64], s: f64) -> f64 {
    let r = Rect::cube(corner, s);
    match clip {
        Some(c) => mu.integrate_clipped(&r, c),
        None => mu.integrate(&r),
    }
}

/// Maximize the mass of `[c, c+s]^n` over corners `c` in the box
/// `[lo, hi]` (per axis). Returns `(mass, corner, exhaustive)`.
fn max_mass_over_corners(
    mu: &CellMeasure,
    clip: Option<&Rect>,
    s: f64,
    lo: &[f64],
    hi: &[f64],
) -> (f64, Vec<f64>, bool) {
    let spec = mu.spec();
    let dim = spec.dim;
    let cands: Vec<Vec<f64>> = (0..dim)
        .map(|a| axis_candidates(spec, clip, a, s, lo[a], hi[a]))
        .collect();
    match dim {
        1 => {
            let mut best = f64::NEG_INFINITY;
            let mut best_c = vec![cands[0][0]];
            for &c in &cands[0] {
                let m = cube_mass(mu, clip, &[c], s);
                if m > best {
                    best = m;
                    best_c = vec![c];
                }
            }
            (best, best_c, true)
        }
        2 => {
            let mut best = f64::NEG_INFINITY;
            let mut best_c = vec![cands[0][0], cands[1][0]];
            for &c0 in &cands[0] {
                for &c1 in &cands[1] {
                    let m = cube_mass(mu, clip, &[c0, c1], s);
                    if m > best {
                        best = m;
                        best_c = vec![c0, c1];
                    }
                }
            }
            (best, best_c, true)
        }
        _ => {
            // Coordinate ascent with deterministic restarts. Exactness is not
            // guaranteed; callers see the heuristic flag.
            let mut best = f64::NEG_INFINITY;
            let mut best_c = vec![0.0; dim];
            const ASCENT_SEED: u64 = 0xA5CE17;
            for restart in 0..8u64 {
                let mut rng = Stream::substream(ASCENT_SEED, restart);
                let mut c: Vec<f64> = (0..dim)
                    .map(|a| cands[a][rng.below(cands[a].len() as u64) as usize])
                    .collect();
                let mut cur = cube_mass(mu, clip, &c, s);
                loop {
                    let mut improved = false;
                    for a in 0..dim {
                        let mut axis_best = cur;
                        let mut axis_c = c[a];
                        for &cc in &cands[a] {
                            let mut probe = c.clone();
                            probe[a] = cc;
                            let m = cube_mass(mu, clip, &probe, s);
                            if m > axis_best {
                                axis_best = m;
                                axis_c = cc;
                            }
                        }
                        if axis_best > cur {
                            cur = axis_best;
                            c[a] = axis_c;
                            improved = true;
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                if cur > best {
                    best = cur;
                    best_c = c;
                }
            }
            (best, best_c, false)
        }
    }
}

/// Maximal average of `mu` over cubes of dyadic side containing `x`.
pub fn maximal(mu: &CellMeasure, x: &[f64], w: ScaleWindow) -> MaximalValue {
    maximal_clipped(mu, None, x, w)
}

/// Same as [`maximal`] but for the measure restricted to `clip` (the
/// restriction is never materialized; masses are clipped box queries).
pub fn maximal_clipped(
    mu: &CellMeasure,
    clip: Option<&Rect>,
    x: &[f64],
    w: ScaleWindow,
) -> MaximalValue {
    let dim = mu.spec().dim;
    assert_eq!(x.len(), dim);
    let mut best: Option<MaximalValue> = None;
    for j in w.exponents() {
        let s = pow2(j);
        let lo: Vec<f64> = x.iter().map(|&xi| xi - s).collect();
        let (mass, corner, exhaustive) = max_mass_over_corners(mu, clip, s, &lo, x);
        let value = mass / pow2(j * dim as i32);
        let better = match &best {
            None => true,
            Some(b) => value > b.value,
        };
        if better {
            best = Some(MaximalValue {
                value,
                witness: Rect::cube(&corner, s),
                scale_saturated: j == w.j_min || j == w.j_max,
                heuristic: !exhaustive,
            });
        }
    }
    best.expect("scale window is nonempty")
}

/// Maximal average over cubes of dyadic side **containing the box** `b`.
/// Used to certify lower bounds that hold at every point of `b`.
pub fn maximal_over_box(
    mu: &CellMeasure,
    clip: Option<&Rect>,
    b: &Rect,
    w: ScaleWindow,
) -> Option<MaximalValue> {
    let dim = mu.spec().dim;
    let max_side = (0..dim).map(|a| b.side(a)).fold(0.0f64, f64::max);
    let mut best: Option<MaximalValue> = None;
    for j in w.exponents() {
        let s = pow2(j);
        if s < max_side {
            continue;
        }
        // Corner must satisfy c <= b.lo and c + s >= b.hi per axis.
        let lo: Vec<f64> = b.hi.iter().map(|&v| v - s).collect();
        let (mass, corner, exhaustive) = max_mass_over_corners(mu, clip, s, &lo, &b.lo);
        let value = mass / pow2(j * dim as i32);
        let better = match &best {
            None => true,
            Some(bst) => value > bst.value,
        };
        if better {
            best = Some(MaximalValue {
                value,
                witness: Rect::cube(&corner, s),
                scale_saturated: j == w.j_min || j == w.j_max,
                heuristic: !exhaustive,
            });
        }
    }
    best
}

/// First cube of dyadic side containing `b` whose average exceeds `thr`,
/// scanning scales small to large and stopping at the first certificate.
/// Sound by construction: the returned witness average is exact, so every
/// point of `b` has maximal function above `thr`. `None` means the full
/// candidate sweep found no such cube.
pub fn certify_box_above(
    mu: &CellMeasure,
    b: &Rect,
    thr: f64,
    w: ScaleWindow,
) -> Option<MaximalValue> {
    let dim = mu.spec().dim;
    let max_side = (0..dim).map(|a| b.side(a)).fold(0.0f64, f64::max);
    for j in w.exponents() {
        let s = pow2(j);
        if s < max_side {
            continue;
        }
        let lo: Vec<f64> = b.hi.iter().map(|&v| v - s).collect();
        let (mass, corner, exhaustive) = max_mass_over_corners(mu, None, s, &lo, &b.lo);
        let value = mass / pow2(j * dim as i32);
        if value > thr {
            return Some(MaximalValue {
                value,
                witness: Rect::cube(&corner, s),
                scale_saturated: j == w.j_min || j == w.j_max,
                heuristic: !exhaustive,
            });
        }
    }
    None
}

/// Dyadic maximal average: sup over the tower of grid cubes containing `x`,
/// restricted to levels whose side lies in the scale window.
pub fn dyadic_maximal(
    mu: &CellMeasure,
    x: &[f64],
    g: &GridShift,
    w: ScaleWindow,
) -> Result<MaximalValue> {
    dyadic_maximal_clipped(mu, None, x, g, w)
}

/// [`dyadic_maximal`] for the measure restricted to `clip`.
pub fn dyadic_maximal_clipped(
    mu: &CellMeasure,
    clip: Option<&Rect>,
    x: &[f64],
    g: &GridShift,
    w: ScaleWindow,
) -> Result<MaximalValue> {
    let dim = mu.spec().dim;
    let lo_level = g.level_coarse.max(-w.j_max);
    let hi_level = g.level_fine.min(-w.j_min);
    let mut best: Option<MaximalValue> = None;
    for level in lo_level..=hi_level {
        let cube = g.containing_cube(x, level)?;
        let rect = g.cube_rect(&cube);
        let mass = match clip {
            Some(c) => mu.integrate_clipped(&rect, c),
            None => mu.integrate(&rect),
        };
        let value = mass / pow2(-level * dim as i32);
        let better = match &best {
            None => true,
            Some(b) => value > b.value,
        };
        if better {
            best = Some(MaximalValue {
                value,
                witness: rect,
                scale_saturated: level == lo_level || level == hi_level,
                heuristic: false,
            });
        }
    }
    best.ok_or_else(|| {
        crate::error::Error::guard("scale window does not meet the grid's level range")
    })
}

/// Weighted dyadic maximal function: sup over the tower of grid cubes of
/// the omega-average of `h`, skipping cubes with `omega(Q) = 0`; an empty
/// supremum is zero.
pub fn weighted_dyadic_maximal(
    h: &crate::measure::CellFunction,
    omega: &CellMeasure,
    x: &[f64],
    g: &GridShift,
    w: ScaleWindow,
) -> Result<f64> {
    let hw = h.weigh(omega)?;
    let lo_level = g.level_coarse.max(-w.j_max);
    let hi_level = g.level_fine.min(-w.j_min);
    let mut best = 0.0f64;
    for level in lo_level..=hi_level {
        let cube = g.containing_cube(x, level)?;
        let rect = g.cube_rect(&cube);
        let wq = omega.integrate(&rect);
        if wq == 0.0 {
            continue;
        }
        let v = hw.integrate(&rect) / wq;
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// One point's Monte Carlo domination comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointDomination {
    pub point: Vec<f64>,
    /// Exact maximal-function value.
    pub exact: f64,
    /// Mean of the dyadic maximal value over sampled shifted grids.
    pub sampled_mean: f64,
    pub stderr: f64,
    /// `2^(n+3) * (mean + 3 stderr)`: the exact value must stay below it.
    pub bound: f64,
    pub pass: bool,
}

/// Monte Carlo check that the maximal function is dominated by a constant
/// times the expected dyadic maximal function over random shifted grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    /// The comparison constant `2^(n+3)`.
    pub constant: f64,
    pub samples: usize,
    pub family: GridFamily,
    pub points: Vec<PointDomination>,
    pub all_pass: bool,
}

/// Run the domination comparison at each point. Grids are drawn from the
/// given family over `[level_coarse, level_fine]`; the dyadic maximal uses
/// the full level range of each sampled grid. Sample `i` draws from
/// substream `i`, so the report does not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn domination_check(
    mu: &CellMeasure,
    points: &[Vec<f64>],
    level_coarse: i32,
    level_fine: i32,
    family: GridFamily,
    samples: usize,
    seed: u64,
    w: ScaleWindow,
) -> Result<DominationReport> {
    let dim = mu.spec().dim;
    let constant = pow2(dim as i32 + 3);
    let grid_window = ScaleWindow::new(-level_fine, -level_coarse);
    let mut out = Vec::with_capacity(points.len());
    for (pi, x) in points.iter().enumerate() {
        let exact = maximal(mu, x, w).value;
        let vals: Vec<Result<f64>> = exec::map_indexed(samples, |i| {
            let mut rng = Stream::substream(seed, (pi * samples + i) as u64);
            let g = sample_grid(dim, level_coarse, level_fine, family, &mut rng)?;
            Ok(dyadic_maximal(mu, x, &g, grid_window)?.value)
        });
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for v in &vals {
            let v = *v.as_ref().map_err(|e| crate::error::Error::guard(e.to_string()))?;
            sum += v;
            sumsq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = ((sumsq / n) - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        let stderr = (var / n).sqrt();
        let bound = constant * (mean + 3.0 * stderr);
        out.push(PointDomination {
            point: x.clone(),
            exact,
            sampled_mean: mean,
            stderr,
            bound,
            pass: exact <= bound,
        });
    }
    let all_pass = out.iter().all(|p| p.pass);
    Ok(DominationReport {
        constant,
        samples,
        family,
        points: out,
        all_pass,
    })
}

/// The tower of grid cubes containing `x` (coarse to fine), for callers
/// that need the cubes themselves.
pub fn tower(g: &GridShift, x: &[f64]) -> Result<Vec<DyadicCube>> {
    (g.level_coarse..=g.level_fine)
        .map(|level| g.containing_cube(x, level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::CellMeasure;

    fn two_cell() -> CellMeasure {
        let spec = LatticeSpec::new(1, 0, vec![0], vec![2]).unwrap();
        CellMeasure::new(spec, vec![2.0, 4.0]).unwrap()
    }

    #[test]
    fn single_scale_witness_slides_to_the_heavy_side() {
        let m = two_cell();
        let mv = maximal(&m, &[0.25], ScaleWindow::new(0, 0));
        assert_eq!(mv.value, 2.5);
        assert_eq!(mv.witness, Rect::new(vec![0.25], vec![1.25]));
        assert!(!mv.heuristic);
    }

    #[test]
    fn witness_replays_exactly() {
        let m = two_cell();
        let mv = maximal(&m, &[0.8], ScaleWindow::new(-3, 2));
        let replay = m.integrate(&mv.witness) / mv.witness.volume();
        assert_eq!(mv.value.to_bits(), replay.to_bits());
        assert!(mv.witness.contains_point(&[0.8]));
    }

    #[test]
    fn zero_measure_gives_zero() {
        let spec = LatticeSpec::new(1, 0, vec![0], vec![4]).unwrap();
        let m = CellMeasure::zero(spec);
        let mv = maximal(&m, &[1.0], ScaleWindow::new(-2, 2));
        assert_eq!(mv.value, 0.0);
    }

    #[test]
    fn value_scales_linearly_with_the_measure() {
        let m = two_cell();
        let m4 = m.scale(4.0).unwrap();
        let w = ScaleWindow::new(-3, 2);
        let a = maximal(&m, &[0.6], w);
        let b = maximal(&m4, &[0.6], w);
        assert_eq!(b.value, 4.0 * a.value);
        assert_eq!(a.witness, b.witness);
    }

    #[test]
    fn dense_sweep_agrees_in_1d() {
        let spec = LatticeSpec::new(1, 2, vec![-3], vec![9]).unwrap();
        let density: Vec<f64> = (0..9).map(|i| ((i * 5 + 1) % 7) as f64 / 3.0).collect();
        let m = CellMeasure::new(spec, density).unwrap();
        let x = [0.3];
        let w = ScaleWindow::new(-4, 1);
        let got = maximal(&m, &x, w).value;
        // Dense sweep over absolute corner positions on a grid fine enough
        // to contain every breakpoint (cell boundaries and their downshifts
        // by a dyadic side), plus the two clamp corners.
        let step = pow2(-(2 + 6));
        let mut best = 0.0f64;
        for j in w.exponents() {
            let s = pow2(j);
            let k_lo = ((x[0] - s) / step).ceil() as i64;
            let k_hi = (x[0] / step).floor() as i64;
            let mut corners: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64 * step).collect();
            corners.push(x[0] - s);
            corners.push(x[0]);
            for c in corners {
                let v = m.integrate(&Rect::new(vec![c], vec![c + s])) / s;
                if v > best {
                    best = v;
                }
            }
        }
        assert!(got >= best - 1e-12);
        assert!((got - best).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn dyadic_maximal_is_dominated_by_full() {
        let m = two_cell();
        let g = GridShift::from_translation(1, -2, 3, vec![9]).unwrap();
        let w = ScaleWindow::new(-3, 2);
        for &x in &[0.1, 0.5, 0.9, 1.5, 1.9] {
            let d = dyadic_maximal(&m, &[x], &g, w).unwrap();
            let f = maximal(&m, &[x], w);
            assert!(d.value <= f.value + 1e-12);
            assert!(d.witness.contains_point(&[x]));
        }
    }

    #[test]
    fn weighted_maximal_empty_sup_is_zero() {
        let spec = LatticeSpec::new(1, 0, vec![0], vec![2]).unwrap();
        let omega = CellMeasure::zero(spec.clone());
        let h = crate::measure::CellFunction::constant(spec, 1.0).unwrap();
        let g = GridShift::standard(1, -1, 2).unwrap();
        let v =
            weighted_dyadic_maximal(&h, &omega, &[0.5], &g, ScaleWindow::new(-2, 1)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn maximal_over_box_is_a_lower_bound_for_points_inside() {
        let m = two_cell();
        let b = Rect::new(vec![0.5], vec![0.75]);
        let w = ScaleWindow::new(-3, 2);
        let certified = maximal_over_box(&m, None, &b, w).unwrap().value;
        for &x in &[0.5, 0.6, 0.749] {
            assert!(maximal(&m, &[x], w).value >= certified - 1e-12);
        }
    }

    #[test]
    fn domination_holds_on_a_simple_measure() {
        let m = two_cell();
        let rep = domination_check(
            &m,
            &[vec![0.25], vec![1.6]],
            -2,
            4,
            GridFamily::Phi,
            400,
            42,
            ScaleWindow::new(-4, 2),
        )
        .unwrap();
        assert!(rep.all_pass, "{rep:?}");
        assert_eq!(rep.constant, 16.0);
    }
}
