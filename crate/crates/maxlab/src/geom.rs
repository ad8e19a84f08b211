//! Axis-aligned boxes and dyadic scale windows.

use serde::{Deserialize, Serialize};

/// Closed axis-aligned box `[lo, hi]` in geometric coordinates.
///
/// Measures here are absolutely continuous, so whether faces are open or
/// closed never changes an integral; `Rect` is the common currency for
/// integration queries, witness cubes, and dilations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Rect { lo, hi }
    }

    /// Cube with corner `lo` and side `side`.
    pub fn cube(lo: &[f64], side: f64) -> Self {
        Rect {
            lo: lo.to_vec(),
            hi: lo.iter().map(|&a| a + side).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| (b - a).max(0.0))
            .product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&a, &b))| a <= xi && xi <= b)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.lo
            .iter()
            .zip(&other.lo)
            .all(|(&a, &oa)| a <= oa)
            && self.hi.iter().zip(&other.hi).all(|(&b, &ob)| ob <= b)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((&a, &b), (&c, &d))| a < d && c < b)
    }

    /// Concentric dilation by `factor` (same center, sides scaled).
    pub fn dilate(&self, factor: f64) -> Rect {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b) - 0.5 * factor * (b - a))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b) + 0.5 * factor * (b - a))
            .collect();
        Rect { lo, hi }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Rect) -> Rect {
        Rect {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(&a, &b)| a.min(b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(&a, &b)| a.max(b))
                .collect(),
        }
    }
}

/// Range of admissible dyadic side lengths `2^j`, `j_min <= j <= j_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleWindow {
    pub j_min: i32,
    pub j_max: i32,
}

impl ScaleWindow {
    pub fn new(j_min: i32, j_max: i32) -> Self {
        assert!(j_min <= j_max, "empty scale window");
        ScaleWindow { j_min, j_max }
    }

    /// Iterator over exponents, fine to coarse.
    pub fn exponents(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    pub fn contains(&self, j: i32) -> bool {
        self.j_min <= j && j <= self.j_max
    }

    /// Widened by `extra` levels on both ends.
    pub fn widen(&self, extra: i32) -> ScaleWindow {
        ScaleWindow::new(self.j_min - extra, self.j_max + extra)
    }
}

/// `2^j` as an exact f64 (exponents in the f64 range used here).
pub fn pow2(j: i32) -> f64 {
    (2.0f64).powi(j)
}
