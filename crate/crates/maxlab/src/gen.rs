//! Seeded generators for test measures.
//!
//! Every generator is deterministic in its arguments (and stream state), so
//! any instance that shows up in a report can be rebuilt from its parameters
//! alone.

use crate::error::{Error, Result};
use crate::measure::{CellMeasure, LatticeSpec};
use crate::rng::Stream;

/// Constant density `value` on the whole lattice box.
pub fn uniform(spec: &LatticeSpec, value: f64) -> Result<CellMeasure> {
    let n = spec.n_cells();
    CellMeasure::new(spec.clone(), vec![value; n])
}

/// Independent U[0,1) densities per cell.
pub fn random_cells(spec: &LatticeSpec, stream: &mut Stream) -> Result<CellMeasure> {
    let n = spec.n_cells();
    let density: Vec<f64> = (0..n).map(|_| stream.next_f64()).collect();
    CellMeasure::new(spec.clone(), density)
}

/// Middle-half Cantor construction on [0,1]: each stage keeps the outer
/// quarter at both ends of every surviving interval. After `depth` stages the
/// survivors are 2^depth intervals of length 4^-depth carrying equal mass,
/// normalized to total mass one. One-dimensional only.
pub fn cantor_middle_half(depth: u32) -> Result<CellMeasure> {
    if depth > 12 {
        return Err(Error::guard(format!("cantor depth {depth} exceeds 12")));
    }
    let res_exp = (2 * depth) as i32;
    let spec = LatticeSpec::new(1, res_exp, vec![0], vec![1usize << (2 * depth)])?;
    // Survivor left endpoints in units of 4^-depth.
    let mut starts: Vec<i64> = vec![0];
    for stage in 0..depth {
        // Interval length at this stage, in units of the final resolution.
        let len = 1i64 << (2 * (depth - stage));
        let mut next = Vec::with_capacity(starts.len() * 2);
        for s in starts {
            next.push(s);
            next.push(s + 3 * len / 4);
        }
        starts = next;
    }
    let mut density = vec![0.0; spec.n_cells()];
    // Each survivor is one cell; equal mass summing to one.
    let value = 2f64.powi(depth as i32);
    for s in starts {
        density[s as usize] = value;
    }
    CellMeasure::new(spec, density)
}

/// Density |x|^a sampled at cell centers (Euclidean norm). Integrable
/// exponents only: requires a > -dim.
pub fn power_law(spec: &LatticeSpec, a: f64) -> Result<CellMeasure> {
    if a <= -(spec.dim as f64) {
        return Err(Error::guard(format!(
            "power exponent {a} is not integrable in dimension {}",
            spec.dim
        )));
    }
    let n = spec.n_cells();
    let density: Vec<f64> = (0..n)
        .map(|flat| {
            let c = spec.cell_rect(&spec.unflat(flat)).center();
            let r = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.powf(a)
        })
        .collect();
    CellMeasure::new(spec.clone(), density)
}

/// Two unit point masses smeared over single cells at the given coordinates.
pub fn point_pair(spec: &LatticeSpec, cell_a: &[i64], cell_b: &[i64]) -> Result<CellMeasure> {
    let vol = spec.cell_volume();
    let mut density = vec![0.0; spec.n_cells()];
    for cell in [cell_a, cell_b] {
        let local: Vec<i64> = (0..spec.dim).map(|a| cell[a] - spec.origin[a]).collect();
        if (0..spec.dim).any(|a| local[a] < 0 || local[a] >= spec.extent[a] as i64) {
            return Err(Error::guard(format!("pair cell {cell:?} is outside the lattice")));
        }
        let idx: Vec<usize> = local.iter().map(|&k| k as usize).collect();
        density[spec.flat(&idx)] += 1.0 / vol;
    }
    CellMeasure::new(spec.clone(), density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;

    #[test]
    fn cantor_masses_and_gaps() {
        let mu = cantor_middle_half(3).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        // The middle half of [0,1] is empty from stage one on.
        assert_eq!(mu.integrate(&Rect::new(vec![0.25], vec![0.75])), 0.0);
        // Self-similarity: the left quarter carries half the mass.
        let left = mu.integrate(&Rect::new(vec![0.0], vec![0.25]));
        assert!((left - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cantor_survivor_count() {
        let mu = cantor_middle_half(4).unwrap();
        let positive = (0..mu.spec().n_cells())
            .filter(|&i| mu.density()[i] > 0.0)
            .count();
        assert_eq!(positive, 16);
    }

    #[test]
    fn power_law_rejects_nonintegrable() {
        let spec = LatticeSpec::new(1, 3, vec![-8], vec![16]).unwrap();
        assert!(power_law(&spec, -1.0).is_err());
        assert!(power_law(&spec, -0.5).is_ok());
    }

    #[test]
    fn power_law_symmetry() {
        let spec = LatticeSpec::new(1, 3, vec![-8], vec![16]).unwrap();
        let mu = power_law(&spec, 0.5).unwrap();
        let l = mu.integrate(&Rect::new(vec![-1.0], vec![0.0]));
        let r = mu.integrate(&Rect::new(vec![0.0], vec![1.0]));
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn point_pair_masses() {
        let spec = LatticeSpec::new(2, 2, vec![0, 0], vec![8, 8]).unwrap();
        let mu = point_pair(&spec, &[0, 0], &[7, 7]).unwrap();
        assert!((mu.total_mass() - 2.0).abs() < 1e-12);
        assert!(point_pair(&spec, &[0, 0], &[8, 0]).is_err());
    }

    #[test]
    fn random_cells_deterministic() {
        let spec = LatticeSpec::new(1, 2, vec![0], vec![4]).unwrap();
        let a = random_cells(&spec, &mut Stream::substream(7, 0)).unwrap();
        let b = random_cells(&spec, &mut Stream::substream(7, 0)).unwrap();
        assert_eq!(a.density(), b.density());
        let c = random_cells(&spec, &mut Stream::substream(7, 1)).unwrap();
        assert_ne!(a.density(), c.density());
    }
}
