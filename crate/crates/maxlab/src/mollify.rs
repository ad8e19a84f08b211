//! Mollification of lattice measures.
//!
//! The kernel is a tensor product of an even trapezoid profile: flat top of
//! height 8/13 on `[-5/8, 5/8]`, linear decay to zero at `±1`, unit integral
//! per axis. Smoothing at width `eps` convolves with the rescaled kernel and
//! projects back to a lattice by exact cell averaging: per axis the double
//! integral of the kernel over an (output cell, input cell) pair is a
//! piecewise-quadratic integral evaluated in closed form, and the full
//! n-dimensional update is the separable contraction of those per-axis
//! tables. Total mass is preserved up to rounding and the support grows by
//! at most `eps` per side.

use crate::error::{Error, Result};
use crate::exec;
use crate::geom::pow2;
use crate::measure::{CellMeasure, LatticeSpec};
use serde::{Deserialize, Serialize};

/// Flat-top half-width of the trapezoid profile.
const FLAT: f64 = 5.0 / 8.0;
/// Height making the profile integrate to one.
const HEIGHT: f64 = 8.0 / 13.0;

/// Tensor-product trapezoid mollifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifierKernel {
    pub dim: usize,
    /// Translation-dominance constant: `phi_eps(z) <= c_phi * phi_{8 eps}(z + h)`
    /// for every `|h| < eps`. Evaluated numerically at construction.
    pub c_phi: f64,
}

/// The 1-D profile: even, trapezoid, support `(-1, 1)`, values in `[0, 1]`,
/// unit integral.
pub fn profile(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else if a <= FLAT {
        HEIGHT
    } else {
        HEIGHT * (1.0 - a) / (1.0 - FLAT)
    }
}

impl MollifierKernel {
    pub fn standard(dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::guard("kernel dim must be 1..=3"));
        }
        // Scan the worst ratio phi_eps(z) / phi_{8 eps}(z + h) over the
        // support and all |h| <= eps (scale-invariant, so eps = 1).
        let mut per_axis: f64 = 0.0;
        let steps = 4096;
        for i in 0..=steps {
            let u = -1.0 + 2.0 * i as f64 / steps as f64;
            let num = profile(u);
            if num == 0.0 {
                continue;
            }
            for j in 0..=16 {
                let h = -1.0 + 2.0 * j as f64 / 16.0;
                // Width-8 kernel at the shifted point; never zero here since
                // |u + h| <= 2 stays inside its flat top.
                let den = profile((u + h) / 8.0) / 8.0;
                per_axis = per_axis.max(num / den);
            }
        }
        Ok(MollifierKernel {
            dim,
            c_phi: per_axis.powi(dim as i32),
        })
    }

    /// Kernel value at `z` for width `eps`.
    pub fn eval(&self, z: &[f64], eps: f64) -> f64 {
        assert_eq!(z.len(), self.dim);
        let mut v = pow2(0);
        for &zi in z {
            v *= profile(zi / eps) / eps;
        }
        v
    }
}

/// Exact integral of `G(u) * profile(u / eps) / eps` over all `u`, where
/// `G` is the overlap length of `[a0, a1]` and `[b0, b1] + u`. Both factors
/// are piecewise linear, so the product integrates exactly by Simpson on
/// each merged piece.
fn pair_integral(a0: f64, a1: f64, b0: f64, b1: f64, eps: f64) -> f64 {
    let g = |u: f64| -> f64 { (a1.min(b1 + u) - a0.max(b0 + u)).max(0.0) };
    let psi = |u: f64| -> f64 { profile(u / eps) / eps };
    let mut brk = vec![
        a0 - b1,
        a1 - b1,
        a0 - b0,
        a1 - b0,
        -eps,
        -FLAT * eps,
        FLAT * eps,
        eps,
    ];
    brk.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let lo = (a0 - b1).max(-eps);
    let hi = (a1 - b0).min(eps);
    if lo >= hi {
        return 0.0;
    }
    let mut total = 0.0;
    let mut prev = lo;
    for &b in &brk {
        let b = b.clamp(lo, hi);
        if b > prev {
            let mid = 0.5 * (prev + b);
            let w = b - prev;
            total += w / 6.0 * (g(prev) * psi(prev) + 4.0 * g(mid) * psi(mid) + g(b) * psi(b));
            prev = b;
        }
    }
    if hi > prev {
        let mid = 0.5 * (prev + hi);
        let w = hi - prev;
        total += w / 6.0 * (g(prev) * psi(prev) + 4.0 * g(mid) * psi(mid) + g(hi) * psi(hi));
    }
    total
}

/// Smooth `m` at width `eps` and project to the lattice of resolution
/// `out_res_exp` by cell averaging.
pub fn mollify(
    m: &CellMeasure,
    eps: f64,
    kernel: &MollifierKernel,
    out_res_exp: i32,
) -> Result<CellMeasure> {
    let spec = m.spec();
    if kernel.dim != spec.dim {
        return Err(Error::mismatch("kernel and measure dimensions differ"));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::guard("eps must be positive"));
    }
    let out_side = pow2(-out_res_exp);
    if eps < 2.0 * out_side {
        return Err(Error::resolution(format!(
            "eps = {eps} is below twice the output cell side {out_side}"
        )));
    }
    let dim = spec.dim;
    // Output lattice covers the input bounding box dilated by eps.
    let bbox = spec.bbox();
    let mut origin = vec![0i64; dim];
    let mut extent = vec![0usize; dim];
    for a in 0..dim {
        let lo = ((bbox.lo[a] - eps) * pow2(out_res_exp)).floor() as i64;
        let hi = ((bbox.hi[a] + eps) * pow2(out_res_exp)).ceil() as i64;
        origin[a] = lo;
        extent[a] = (hi - lo) as usize;
    }
    let out_spec = LatticeSpec::new(dim, out_res_exp, origin, extent)?;

    // Per-axis tables of pair integrals: tables[a][in_cell][out_cell].
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut t = vec![vec![0.0; out_spec.extent[a]]; spec.extent[a]];
        for (ci, row) in t.iter_mut().enumerate() {
            let b0 = spec.corner_coord(a, ci as i64);
            let b1 = spec.corner_coord(a, ci as i64 + 1);
            for (oi, v) in row.iter_mut().enumerate() {
                let a0 = out_spec.corner_coord(a, oi as i64);
                let a1 = out_spec.corner_coord(a, oi as i64 + 1);
                *v = pair_integral(a0, a1, b0, b1, eps);
            }
        }
        tables.push(t);
    }

    // Separable contraction, one axis at a time: the running tensor starts
    // as the density over input cells and each pass replaces one input axis
    // with the corresponding output axis.
    let mut cur = m.density().to_vec();
    let mut shape: Vec<usize> = spec.extent.clone();
    for a in 0..dim {
        let in_len = shape[a];
        let out_len = out_spec.extent[a];
        let inner: usize = shape[a + 1..].iter().product();
        let outer: usize = shape[..a].iter().product();
        let table = &tables[a];
        let src = &cur;
        let next: Vec<f64> = exec::map_indexed(outer * out_len * inner, |idx| {
            let o_in = idx / (out_len * inner);
            let rem = idx % (out_len * inner);
            let oa = rem / inner;
            let i_in = rem % inner;
            let mut acc = 0.0;
            for ci in 0..in_len {
                acc += src[(o_in * in_len + ci) * inner + i_in] * table[ci][oa];
            }
            acc
        });
        cur = next;
        shape[a] = out_len;
    }

    // `cur` now holds the mass of the smoothed measure in each output cell.
    let vol = out_spec.cell_volume();
    let density: Vec<f64> = cur.iter().map(|&mass| (mass / vol).max(0.0)).collect();
    CellMeasure::new(out_spec, density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;

    fn bump() -> CellMeasure {
        let spec = LatticeSpec::new(1, 3, vec![0], vec![8]).unwrap();
        CellMeasure::new(spec, vec![0.0, 1.0, 3.0, 2.0, 2.0, 0.5, 0.0, 0.25]).unwrap()
    }

    #[test]
    fn profile_shape() {
        assert_eq!(profile(0.0), HEIGHT);
        assert_eq!(profile(FLAT), HEIGHT);
        assert_eq!(profile(1.0), 0.0);
        assert!(profile(0.8) > 0.0 && profile(0.8) < HEIGHT);
        // Unit integral, by the trapezoid area formula.
        assert!((HEIGHT * (1.0 + FLAT) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_translation_dominance() {
        let k = MollifierKernel::standard(2).unwrap();
        let eps = 0.05;
        let mut rng = crate::rng::Stream::new(17);
        for _ in 0..500 {
            let z: Vec<f64> = (0..2).map(|_| (rng.next_f64() - 0.5) * 2.2 * eps).collect();
            let h: Vec<f64> = (0..2)
                .map(|_| (rng.next_f64() - 0.5) * 2.0 * eps * 0.999)
                .collect();
            let num = k.eval(&z, eps);
            if num == 0.0 {
                continue;
            }
            let zh: Vec<f64> = z.iter().zip(&h).map(|(&a, &b)| a + b).collect();
            let den = k.eval(&zh, 8.0 * eps);
            assert!(num <= k.c_phi * den * (1.0 + 1e-12), "z={z:?} h={h:?}");
        }
    }

    #[test]
    fn c_phi_matches_the_closed_form_for_this_profile() {
        // The shifted argument stays inside the flat top, so the worst ratio
        // per axis is 8.
        let k = MollifierKernel::standard(1).unwrap();
        assert!((k.c_phi - 8.0).abs() < 1e-9, "c_phi = {}", k.c_phi);
        let k3 = MollifierKernel::standard(3).unwrap();
        assert!((k3.c_phi - 512.0).abs() < 1e-6);
    }

    #[test]
    fn mass_is_preserved() {
        let m = bump();
        let k = MollifierKernel::standard(1).unwrap();
        for eps in [0.05, 0.1, 0.25] {
            let sm = mollify(&m, eps, &k, 6).unwrap();
            let rel = (sm.total_mass() - m.total_mass()).abs() / m.total_mass();
            assert!(rel <= 1e-12, "eps={eps}: rel={rel}");
        }
    }

    #[test]
    fn support_grows_by_at_most_eps() {
        let m = bump();
        let k = MollifierKernel::standard(1).unwrap();
        let eps = 0.125;
        let sm = mollify(&m, eps, &k, 6).unwrap();
        let orig = m.support_bbox().unwrap();
        let out = sm.support_bbox().unwrap();
        assert!(out.lo[0] >= orig.lo[0] - eps - 1e-12);
        assert!(out.hi[0] <= orig.hi[0] + eps + 1e-12);
    }

    #[test]
    fn rejects_eps_below_lattice_resolution() {
        let m = bump();
        let k = MollifierKernel::standard(1).unwrap();
        assert!(matches!(
            mollify(&m, 0.01, &k, 6),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn mass_sandwich_on_aligned_cubes() {
        let m = bump();
        let k = MollifierKernel::standard(1).unwrap();
        let eps = 1.0 / 16.0;
        let sm = mollify(&m, eps, &k, 6).unwrap();
        // Aligned cube: side 1/2, corner 1/4, both on the output lattice.
        let q = Rect::new(vec![0.25], vec![0.75]);
        let len = 0.5;
        let inner = q.dilate(1.0 - 2.0 * eps / len);
        let outer = q.dilate(1.0 + 2.0 * eps / len);
        let mid = sm.integrate(&q);
        assert!(m.integrate(&inner) <= mid * (1.0 + 1e-12));
        assert!(mid <= m.integrate(&outer) * (1.0 + 1e-12));
    }

    #[test]
    fn smoothing_twice_at_coarser_width_spreads_more() {
        let m = bump();
        let k = MollifierKernel::standard(1).unwrap();
        let narrow = mollify(&m, 0.0625, &k, 7).unwrap();
        let wide = mollify(&m, 0.5, &k, 7).unwrap();
        // Peak density can only drop under wider smoothing of a fixed mass.
        let peak = |mm: &CellMeasure| mm.density().iter().cloned().fold(0.0f64, f64::max);
        assert!(peak(&wide) < peak(&narrow));
    }
}
