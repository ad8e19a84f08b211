//! Finite sets of lattice cells with exact set arithmetic.
//!
//! A [`CellSet`] is a collection of half-open cells `k + [0,1)^n` (in units
//! of `2^-res_exp`) identified by absolute integer coordinates. Geometric
//! queries against arbitrary real boxes reduce to strict float comparisons
//! on cell corners, which are exact for the dyadic coordinates used
//! throughout, so coverage and containment here are genuinely set-exact.

use crate::geom::{pow2, Rect};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Set of lattice cells at one resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSet {
    pub dim: usize,
    pub res_exp: i32,
    cells: BTreeSet<Vec<i64>>,
}

impl CellSet {
    pub fn empty(dim: usize, res_exp: i32) -> Self {
        CellSet {
            dim,
            res_exp,
            cells: BTreeSet::new(),
        }
    }

    pub fn from_cells(dim: usize, res_exp: i32, cells: impl IntoIterator<Item = Vec<i64>>) -> Self {
        let cells: BTreeSet<Vec<i64>> = cells.into_iter().inspect(|c| {
            assert_eq!(c.len(), dim);
        }).collect();
        CellSet {
            dim,
            res_exp,
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn insert(&mut self, cell: Vec<i64>) {
        assert_eq!(cell.len(), self.dim);
        self.cells.insert(cell);
    }

    pub fn contains(&self, cell: &[i64]) -> bool {
        self.cells.contains(cell)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<i64>> {
        self.cells.iter()
    }

    pub fn cell_side(&self) -> f64 {
        pow2(-self.res_exp)
    }

    /// Total volume of the cells.
    pub fn volume(&self) -> f64 {
        self.cells.len() as f64 * pow2(-self.res_exp * self.dim as i32)
    }

    /// Geometric box of one cell.
    pub fn cell_rect(&self, cell: &[i64]) -> Rect {
        let side = self.cell_side();
        let lo: Vec<f64> = cell.iter().map(|&k| k as f64 * side).collect();
        Rect::cube(&lo, side)
    }

    /// Cell containing the point (by half-open convention).
    pub fn cell_of(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .map(|&xi| (xi * pow2(self.res_exp)).floor() as i64)
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.cells.contains(&self.cell_of(x))
    }

    /// Whether every cell meeting the interior of `r` belongs to the set.
    /// Empty and degenerate boxes are trivially contained.
    pub fn contains_box(&self, r: &Rect) -> bool {
        assert_eq!(r.dim(), self.dim);
        let scale = pow2(self.res_exp);
        let mut lo = vec![0i64; self.dim];
        let mut hi = vec![0i64; self.dim];
        for a in 0..self.dim {
            if r.lo[a] >= r.hi[a] {
                return true;
            }
            // Cells k with k+1 > lo*scale and k < hi*scale meet the interior;
            // the smallest such k is floor(lo*scale), the bound below is
            // exclusive.
            let la = r.lo[a] * scale;
            let ha = r.hi[a] * scale;
            lo[a] = la.floor() as i64;
            hi[a] = ha.ceil() as i64;
        }
        let mut k = lo.clone();
        'scan: loop {
            // Skip cells that only touch the boundary.
            let interior = (0..self.dim).all(|a| {
                let la = r.lo[a] * scale;
                let ha = r.hi[a] * scale;
                ((k[a] + 1) as f64) > la && (k[a] as f64) < ha
            });
            if interior && !self.cells.contains(&k) {
                return false;
            }
            for a in (0..self.dim).rev() {
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
        true
    }

    /// Whether the interior of `r` meets any cell outside the set (i.e. the
    /// complement). This is the negation of [`contains_box`] for nonempty
    /// boxes.
    pub fn box_escapes(&self, r: &Rect) -> bool {
        !self.contains_box(r)
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        assert_eq!((self.dim, self.res_exp), (other.dim, other.res_exp));
        CellSet {
            dim: self.dim,
            res_exp: self.res_exp,
            cells: self.cells.union(&other.cells).cloned().collect(),
        }
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        assert_eq!((self.dim, self.res_exp), (other.dim, other.res_exp));
        CellSet {
            dim: self.dim,
            res_exp: self.res_exp,
            cells: self.cells.intersection(&other.cells).cloned().collect(),
        }
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        assert_eq!((self.dim, self.res_exp), (other.dim, other.res_exp));
        CellSet {
            dim: self.dim,
            res_exp: self.res_exp,
            cells: self.cells.difference(&other.cells).cloned().collect(),
        }
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.cells.is_subset(&other.cells)
    }

    pub fn is_disjoint(&self, other: &CellSet) -> bool {
        self.cells.is_disjoint(&other.cells)
    }

    /// Insert every cell covered by the box `[lo_units, hi_units)` given in
    /// cell units.
    pub fn insert_block(&mut self, lo_units: &[i64], hi_units: &[i64]) {
        assert_eq!(lo_units.len(), self.dim);
        let mut k = lo_units.to_vec();
        if (0..self.dim).any(|a| lo_units[a] >= hi_units[a]) {
            return;
        }
        'scan: loop {
            self.cells.insert(k.clone());
            for a in (0..self.dim).rev() {
                k[a] += 1;
                if k[a] < hi_units[a] {
                    continue 'scan;
                }
                k[a] = lo_units[a];
                if a == 0 {
                    break 'scan;
                }
            }
        }
    }

    /// The cells of an axis box whose corners lie exactly on this lattice.
    /// Panics if a corner is off-lattice; callers guarantee commensurability.
    pub fn block_of_rect(dim: usize, res_exp: i32, r: &Rect) -> (Vec<i64>, Vec<i64>) {
        let scale = pow2(res_exp);
        let to_units = |x: f64| -> i64 {
            let u = x * scale;
            let r = u.round();
            assert!(
                (u - r).abs() < 1e-9,
                "box corner {x} is not on the 2^-{res_exp} lattice"
            );
            r as i64
        };
        let lo: Vec<i64> = (0..dim).map(|a| to_units(r.lo[a])).collect();
        let hi: Vec<i64> = (0..dim).map(|a| to_units(r.hi[a])).collect();
        (lo, hi)
    }

    /// Bounding box in cell units, if nonempty: `(lo, hi)` with `hi` exclusive.
    pub fn bbox_units(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        if self.cells.is_empty() {
            return None;
        }
        let mut lo = vec![i64::MAX; self.dim];
        let mut hi = vec![i64::MIN; self.dim];
        for c in &self.cells {
            for a in 0..self.dim {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox(&self) -> Option<Rect> {
        let (lo, hi) = self.bbox_units()?;
        let side = self.cell_side();
        Some(Rect::new(
            lo.iter().map(|&k| k as f64 * side).collect(),
            hi.iter().map(|&k| k as f64 * side).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip() -> CellSet {
        // Cells 0..8 at resolution 1/4: the interval [0, 2).
        CellSet::from_cells(1, 2, (0..8).map(|k| vec![k]))
    }

    #[test]
    fn contains_box_on_and_off_lattice() {
        let s = strip();
        assert!(s.contains_box(&Rect::new(vec![0.0], vec![2.0])));
        assert!(s.contains_box(&Rect::new(vec![0.3], vec![1.9])));
        assert!(!s.contains_box(&Rect::new(vec![-0.1], vec![1.0])));
        assert!(!s.contains_box(&Rect::new(vec![1.0], vec![2.25])));
        // Touching the outside boundary only is still inside.
        assert!(s.contains_box(&Rect::new(vec![0.0], vec![2.0])));
    }

    #[test]
    fn boundary_touch_does_not_escape() {
        let s = strip();
        // [2.0, 2.0] is degenerate; [1.75, 2.0) covers the last cell exactly.
        assert!(s.contains_box(&Rect::new(vec![1.75], vec![2.0])));
        assert!(s.box_escapes(&Rect::new(vec![1.75], vec![2.1])));
    }

    #[test]
    fn set_algebra() {
        let a = CellSet::from_cells(1, 0, vec![vec![0], vec![1], vec![2]]);
        let b = CellSet::from_cells(1, 0, vec![vec![2], vec![3]]);
        assert_eq!(a.union(&b).len(), 4);
        assert_eq!(a.intersection(&b).len(), 1);
        assert_eq!(a.difference(&b).len(), 2);
        assert!(!a.is_disjoint(&b));
        assert!(a.intersection(&b).is_subset(&a));
    }

    #[test]
    fn block_insertion_matches_rect() {
        let mut s = CellSet::empty(2, 1);
        let r = Rect::new(vec![0.0, 0.5], vec![1.0, 1.5]);
        let (lo, hi) = CellSet::block_of_rect(2, 1, &r);
        s.insert_block(&lo, &hi);
        assert_eq!(s.len(), 4);
        assert!(s.contains_box(&r));
        assert_eq!(s.volume(), 1.0);
    }

    #[test]
    fn volume_counts_cells() {
        assert_eq!(strip().volume(), 2.0);
    }
}
