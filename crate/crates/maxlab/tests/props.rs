//! Randomized invariants over the public surface. Each case derives its
//! instance from a proptest-drawn seed through the crate's own stream, so
//! a failure shrinks to a small reproducible seed rather than a raw blob.

use maxlab::constants::{
    a2_constant, restricted_testing_constant, testing_constant, TestingParams,
};
use maxlab::gen;
use maxlab::geom::{pow2, Rect, ScaleWindow};
use maxlab::grid::GridShift;
use maxlab::maximal::maximal;
use maxlab::measure::{
    read_measure_text, write_measure_text, CellFunction, CellMeasure, LatticeSpec,
};
use maxlab::mollify::MollifierKernel;
use maxlab::rng::Stream;
use maxlab::whitney::superlevel;
use proptest::prelude::*;

fn unit_spec(dim: usize, res: i32) -> LatticeSpec {
    LatticeSpec::new(dim, res, vec![0; dim], vec![1usize << res; dim]).unwrap()
}

fn random_measure(seed: u64, dim: usize, res: i32) -> CellMeasure {
    gen::random_cells(&unit_spec(dim, res), &mut Stream::substream(seed, 0)).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Point drawn uniformly from `r`, axes independent.
fn point_in(r: &Rect, rng: &mut Stream) -> Vec<f64> {
    (0..r.dim())
        .map(|a| r.lo[a] + rng.next_f64() * (r.hi[a] - r.lo[a]))
        .collect()
}

/// Per-cell reference integral: overlap volume times density, no prefix sums.
fn cell_sum_integral(m: &CellMeasure, r: &Rect) -> f64 {
    let spec = m.spec();
    let mut total = 0.0;
    for idx in 0..spec.n_cells() {
        let cell = spec.cell_rect(&spec.unflat(idx));
        let mut overlap = 1.0;
        for a in 0..spec.dim {
            overlap *= (cell.hi[a].min(r.hi[a]) - cell.lo[a].max(r.lo[a])).max(0.0);
        }
        total += overlap * m.density()[idx];
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Splitting the bounding box into finitely many boxes along arbitrary
    /// (non-lattice) cuts leaves the total mass unchanged.
    #[test]
    fn mass_adds_over_box_partitions(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
        n_splits in 1usize..=6,
    ) {
        let m = random_measure(seed, dim, res);
        let mut rng = Stream::substream(seed, 1);
        let mut parts = vec![m.spec().bbox()];
        for _ in 0..n_splits {
            let i = rng.below(parts.len() as u64) as usize;
            let r = parts.swap_remove(i);
            let a = rng.below(dim as u64) as usize;
            let t = r.lo[a] + (0.05 + 0.9 * rng.next_f64()) * (r.hi[a] - r.lo[a]);
            let mut left = r.clone();
            let mut right = r;
            left.hi[a] = t;
            right.lo[a] = t;
            parts.push(left);
            parts.push(right);
        }
        let sum: f64 = parts.iter().map(|p| m.integrate(p)).sum();
        prop_assert!(
            rel_close(sum, m.total_mass(), 1e-12),
            "sum {} vs mass {}", sum, m.total_mass()
        );
    }

    /// The prefix-sum path agrees with the per-cell overlap sum on boxes
    /// that may stick out of the support.
    #[test]
    fn box_integral_matches_cell_sum(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
    ) {
        let m = random_measure(seed, dim, res);
        let mut rng = Stream::substream(seed, 2);
        let outer = m.spec().bbox().dilate(1.5);
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for a in 0..dim {
            let u = outer.lo[a] + rng.next_f64() * (outer.hi[a] - outer.lo[a]);
            let v = outer.lo[a] + rng.next_f64() * (outer.hi[a] - outer.lo[a]);
            lo.push(u.min(v));
            hi.push(u.max(v));
        }
        let r = Rect::new(lo, hi);
        let fast = m.integrate(&r);
        let slow = cell_sum_integral(&m, &r);
        prop_assert!(rel_close(fast, slow, 1e-12), "fast {} vs slow {}", fast, slow);
    }

    /// Text serialization round-trips the lattice and every density bit.
    #[test]
    fn measure_text_round_trips(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
    ) {
        let m = random_measure(seed, dim, res);
        let back = read_measure_text(&write_measure_text(&m)).unwrap();
        prop_assert_eq!(back.spec(), m.spec());
        prop_assert_eq!(back.density().len(), m.density().len());
        for (a, b) in back.density().iter().zip(m.density()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scaling the measure by a power of two scales the maximal value
    /// bit-for-bit and leaves the witness cube and flags untouched.
    #[test]
    fn dyadic_scaling_carries_through_maximal(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
        e in -3i32..=3,
    ) {
        let m = random_measure(seed, dim, res);
        let x = point_in(&m.spec().bbox().dilate(2.0), &mut Stream::substream(seed, 3));
        let w = ScaleWindow::new(-res - 1, 2);
        let c = pow2(e);
        let base = maximal(&m, &x, w);
        let scaled = maximal(&m.scale(c).unwrap(), &x, w);
        prop_assert_eq!(scaled.value.to_bits(), (c * base.value).to_bits());
        prop_assert_eq!(&scaled.witness.lo, &base.witness.lo);
        prop_assert_eq!(&scaled.witness.hi, &base.witness.hi);
        prop_assert_eq!(scaled.scale_saturated, base.scale_saturated);
        prop_assert_eq!(scaled.heuristic, base.heuristic);
    }

    /// Widening the scale window never decreases the maximal value.
    #[test]
    fn wider_window_never_decreases_maximal(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
        j0 in -5i32..=-1,
        j1 in 0i32..=2,
        ext_lo in 0i32..=2,
        ext_hi in 0i32..=2,
    ) {
        let m = random_measure(seed, dim, res);
        let x = point_in(&m.spec().bbox().dilate(2.0), &mut Stream::substream(seed, 3));
        let narrow = maximal(&m, &x, ScaleWindow::new(j0, j1));
        let wide = maximal(&m, &x, ScaleWindow::new(j0 - ext_lo, j1 + ext_hi));
        prop_assert!(
            wide.value >= narrow.value,
            "wide {} < narrow {}", wide.value, narrow.value
        );
    }

    /// Re-integrating the reported witness reproduces the reported value.
    #[test]
    fn maximal_witness_replays_value(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=4,
    ) {
        let m = random_measure(seed, dim, res);
        let x = point_in(&m.spec().bbox().dilate(2.0), &mut Stream::substream(seed, 3));
        let v = maximal(&m, &x, ScaleWindow::new(-res - 1, 2));
        prop_assert!(v.witness.contains_point(&x));
        let replay = m.integrate(&v.witness) / v.witness.volume();
        prop_assert!(
            rel_close(v.value, replay, 1e-12),
            "value {} vs replay {}", v.value, replay
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Two cubes of one shifted grid are disjoint up to boundary or nested.
    #[test]
    fn grid_cubes_disjoint_or_nested(
        seed in any::<u64>(),
        dim in 1usize..=2,
        coarse in -2i32..=0,
        span in 2u32..=4,
        la_off in 0u32..=4,
        lb_off in 0u32..=4,
    ) {
        let fine = coarse + span as i32;
        let mut rng = Stream::substream(seed, 4);
        let t: Vec<i64> = (0..dim).map(|_| rng.below(1u64 << span) as i64).collect();
        let g = GridShift::from_translation(dim, coarse, fine, t).unwrap();
        let la = coarse + (la_off.min(span)) as i32;
        let lb = coarse + (lb_off.min(span)) as i32;
        let sample = Rect::cube(&vec![-2.0; dim], 4.0);
        let a = g.containing_cube(&point_in(&sample, &mut rng), la).unwrap();
        let b = g.containing_cube(&point_in(&sample, &mut rng), lb).unwrap();
        let (ra, rb) = (g.cube_rect(&a), g.cube_rect(&b));
        prop_assert!(
            !ra.intersects(&rb) || ra.contains_rect(&rb) || rb.contains_rect(&ra),
            "overlapping non-nested cubes {:?} and {:?}", a, b
        );
    }

    /// Locating a point one level up equals taking the parent of its cube.
    #[test]
    fn containing_cube_commutes_with_parent(
        seed in any::<u64>(),
        dim in 1usize..=2,
        coarse in -2i32..=0,
        span in 2u32..=4,
        l_off in 1u32..=4,
    ) {
        let fine = coarse + span as i32;
        let mut rng = Stream::substream(seed, 5);
        let t: Vec<i64> = (0..dim).map(|_| rng.below(1u64 << span) as i64).collect();
        let g = GridShift::from_translation(dim, coarse, fine, t).unwrap();
        let level = coarse + (l_off.min(span)) as i32;
        let x = point_in(&Rect::cube(&vec![-2.0; dim], 4.0), &mut rng);
        let child = g.containing_cube(&x, level).unwrap();
        let up = g.containing_cube(&x, level - 1).unwrap();
        prop_assert_eq!(g.parent(&child).unwrap(), up);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Pointwise kernel shape: vanishes outside the width box, sits at the
    /// flat-top height inside the half-width box, and the translation
    /// bound holds with the constant reported at construction.
    #[test]
    fn kernel_pointwise_bounds(
        seed in any::<u64>(),
        dim in 1usize..=3,
        e in 0i32..=6,
    ) {
        let k = MollifierKernel::standard(dim).unwrap();
        let eps = pow2(-e);
        let mut rng = Stream::substream(seed, 6);
        let z: Vec<f64> = (0..dim)
            .map(|_| (rng.next_f64() - 0.5) * 2.4 * eps)
            .collect();
        let v = k.eval(&z, eps);
        prop_assert!(v >= 0.0);
        let top = (8.0 / 13.0 / eps).powi(dim as i32);
        prop_assert!(v <= top * (1.0 + 1e-12), "{} above flat top {}", v, top);
        if z.iter().any(|&zi| zi.abs() >= eps) {
            prop_assert_eq!(v, 0.0);
        }
        if z.iter().all(|&zi| zi.abs() <= eps / 2.0) {
            prop_assert!(v >= pow2(-(dim as i32)) / eps.powi(dim as i32));
        }
        let h: Vec<f64> = (0..dim)
            .map(|_| (rng.next_f64() - 0.5) * 2.0 * eps * 0.999)
            .collect();
        if v > 0.0 {
            let zh: Vec<f64> = z.iter().zip(&h).map(|(&a, &b)| a + b).collect();
            let dominating = k.eval(&zh, 8.0 * eps);
            prop_assert!(
                v <= k.c_phi * dominating * (1.0 + 1e-12),
                "z {:?} h {:?}", z, h
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Restricted testing never exceeds plain testing, growing the dilation
    /// never grows the testing constant, and relaxing the doubling
    /// threshold never shrinks the restricted constant.
    #[test]
    fn testing_constants_respect_parameter_order(
        seed in any::<u64>(),
        res in 2i32..=3,
        g_a in 1.2f64..5.0,
        g_b in 1.2f64..5.0,
        d_a in 1.5f64..30.0,
        d_b in 1.5f64..30.0,
    ) {
        let spec = unit_spec(1, res);
        let sigma = gen::random_cells(&spec, &mut Stream::substream(seed, 0)).unwrap();
        let omega = gen::random_cells(&spec, &mut Stream::substream(seed, 1)).unwrap();
        let p = |gamma: f64, d: f64| TestingParams {
            gamma,
            d,
            window: ScaleWindow::new(-3, 1),
            position_refine: 1,
            quad_sub: 2,
        };
        let (g1, g2) = (g_a.min(g_b), g_a.max(g_b));
        let (d1, d2) = (d_a.min(d_b), d_a.max(d_b));
        let t1 = testing_constant(&sigma, &omega, &p(g1, d1)).unwrap().value;
        let t2 = testing_constant(&sigma, &omega, &p(g2, d1)).unwrap().value;
        prop_assert!(t2 <= t1 * (1.0 + 1e-12), "gamma {} -> {} grew {} -> {}", g1, g2, t1, t2);
        let td1 = restricted_testing_constant(&sigma, &omega, &p(g1, d1)).unwrap().value;
        let td2 = restricted_testing_constant(&sigma, &omega, &p(g1, d2)).unwrap().value;
        prop_assert!(td1 <= t1 * (1.0 + 1e-12), "restricted {} above testing {}", td1, t1);
        prop_assert!(td1 <= td2 * (1.0 + 1e-12), "d {} -> {} shrank {} -> {}", d1, d2, td1, td2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Translating both measures by a common lattice vector leaves every
    /// constant bit-identical and moves witnesses by exactly that vector.
    #[test]
    fn constants_ignore_common_translation(
        seed in any::<u64>(),
        shift in -40i64..=40,
    ) {
        let spec = unit_spec(1, 2);
        let sigma = gen::random_cells(&spec, &mut Stream::substream(seed, 0)).unwrap();
        let omega = gen::random_cells(&spec, &mut Stream::substream(seed, 1)).unwrap();
        let p = TestingParams::standard(1, ScaleWindow::new(-3, 1));
        let st = sigma.translate(&[shift]).unwrap();
        let wt = omega.translate(&[shift]).unwrap();
        let moved = shift as f64 * spec.cell_side();
        let a = a2_constant(&sigma, &omega, &p).unwrap();
        let at = a2_constant(&st, &wt, &p).unwrap();
        prop_assert_eq!(a.value.to_bits(), at.value.to_bits());
        let t = testing_constant(&sigma, &omega, &p).unwrap();
        let tt = testing_constant(&st, &wt, &p).unwrap();
        prop_assert_eq!(t.value.to_bits(), tt.value.to_bits());
        if let (Some(q), Some(qt)) = (t.witness, tt.witness) {
            prop_assert_eq!(q.lo[0] + moved, qt.lo[0]);
        }
        let td = restricted_testing_constant(&sigma, &omega, &p).unwrap();
        let tdt = restricted_testing_constant(&st, &wt, &p).unwrap();
        prop_assert_eq!(td.value.to_bits(), tdt.value.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every cell the superlevel approximation keeps carries a witness
    /// cube that contains it, has admissible dyadic side, and averages
    /// strictly above the threshold.
    #[test]
    fn superlevel_cells_are_certified(
        seed in any::<u64>(),
        dim in 1usize..=2,
        res in 2i32..=3,
        k in -3i32..=1,
    ) {
        let spec = unit_spec(dim, res);
        let sigma = gen::random_cells(&spec, &mut Stream::substream(seed, 0)).unwrap();
        let raw = gen::random_cells(&spec, &mut Stream::substream(seed, 1)).unwrap();
        let f = CellFunction::new(spec.clone(), raw.density().to_vec()).unwrap();
        let fsigma = f.weigh(&sigma).unwrap();
        let w = ScaleWindow::new(-res - 2, 3);
        let set = superlevel(&fsigma, k, w, 1).unwrap();
        let thr = pow2(k);
        for cell in set.region.iter().take(80) {
            let witness = set.witnesses.get(cell);
            prop_assert!(witness.is_some(), "region cell {:?} lacks a witness", cell);
            let q = witness.unwrap();
            prop_assert!(q.contains_rect(&set.region.cell_rect(cell)));
            let side = q.side(0);
            let j = side.log2().round() as i32;
            prop_assert_eq!(pow2(j).to_bits(), side.to_bits());
            prop_assert!(w.contains(j), "witness side 2^{} outside window", j);
            for a in 1..dim {
                prop_assert_eq!(q.side(a).to_bits(), side.to_bits());
            }
            let avg = fsigma.integrate(q) / q.volume();
            prop_assert!(avg > thr, "witness average {} at threshold {}", avg, thr);
        }
        for cell in set.witnesses.keys() {
            prop_assert!(set.region.contains(cell));
        }
    }
}
