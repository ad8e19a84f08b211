//! Shifted truncated dyadic grids.
//!
//! A grid holds cubes of side `2^-level` for `level` between `level_coarse`
//! and `level_fine`. Two equivalent parameterizations are supported:
//!
//! * **Scales**: one binary choice vector per level below the top; the cube
//!   tiling at each level is offset by the weighted sum of the choices at all
//!   finer levels.
//! * **Translation**: a single shift of the standard grid by an integer
//!   multiple of the finest cell side, smaller than the coarsest cell side.
//!
//! Both forms reduce to the same canonical translation vector (the binary
//! digits of the shift), which is what all geometry runs on: in translation
//! form the parent of a cube is plain floor division of its index, so
//! ancestor, offset, and containment queries are exact integer arithmetic.
//! A grid may additionally carry a continuous sub-cell offset, used when
//! sampling the enlarged family that averages over fractional positions.

use crate::error::{Error, Result};
use crate::geom::{pow2, Rect};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Cap on `dim * (level_fine - level_coarse)` for full enumeration.
pub const MAX_ENUM_BITS: u32 = 24;

/// Which shifted-grid family to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridFamily {
    /// Integer shifts only.
    Omega,
    /// Integer shifts plus a continuous offset below the finest cell side.
    Phi,
}

/// One cube of a grid: side `2^-level`, corner at the grid shift plus
/// `index * 2^-level`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn side(&self) -> f64 {
        pow2(-self.level)
    }
}

/// How a shift was specified (kept for reporting; geometry uses the
/// canonical translation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftForm {
    /// `choices[i]` is the binary vector for level `level_coarse + 1 + i`,
    /// one bit per axis.
    Scales(Vec<Vec<u8>>),
    /// Shift in units of the finest cell side, per axis.
    Translation(Vec<i64>),
}

/// A truncated dyadic grid, possibly shifted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridShift {
    pub dim: usize,
    /// Coarsest level: largest cubes have side `2^-level_coarse`.
    pub level_coarse: i32,
    /// Finest level: smallest cubes have side `2^-level_fine`.
    pub level_fine: i32,
    pub form: ShiftForm,
    /// Canonical translation, per axis, in units of `2^-level_fine`;
    /// each entry lies in `[0, 2^(level_fine-level_coarse))`.
    t_units: Vec<i64>,
    /// Continuous offset in `[0, 2^-level_fine)` per axis; zero for Omega.
    offset: Vec<f64>,
}

impl GridShift {
    fn validate_levels(dim: usize, coarse: i32, fine: i32) -> Result<()> {
        if !(1..=3).contains(&dim) {
            return Err(Error::guard("grid dim must be 1..=3"));
        }
        if coarse > fine {
            return Err(Error::guard("level_coarse must not exceed level_fine"));
        }
        if (fine - coarse) as u32 > 62 {
            return Err(Error::guard("level span too large"));
        }
        Ok(())
    }

    /// Standard (unshifted) grid.
    pub fn standard(dim: usize, level_coarse: i32, level_fine: i32) -> Result<Self> {
        GridShift::from_translation(dim, level_coarse, level_fine, vec![0; dim])
    }

    /// Translation form: `t_units` in units of the finest cell side, each
    /// entry in `[0, 2^(level_fine-level_coarse))`.
    pub fn from_translation(
        dim: usize,
        level_coarse: i32,
        level_fine: i32,
        t_units: Vec<i64>,
    ) -> Result<Self> {
        Self::validate_levels(dim, level_coarse, level_fine)?;
        if t_units.len() != dim {
            return Err(Error::guard("translation length must equal dim"));
        }
        let span = 1i64 << (level_fine - level_coarse);
        if t_units.iter().any(|&t| t < 0 || t >= span) {
            return Err(Error::guard(
                "translation units must lie in [0, 2^(fine-coarse))",
            ));
        }
        Ok(GridShift {
            dim,
            level_coarse,
            level_fine,
            form: ShiftForm::Translation(t_units.clone()),
            t_units,
            offset: vec![0.0; dim],
        })
    }

    /// Scales form: `choices[i]` is the binary vector (one bit per axis) for
    /// level `level_coarse + 1 + i`; there are `level_fine - level_coarse`
    /// of them. The canonical translation is the weighted binary sum: the
    /// choice at level `l` contributes `2^(level_fine - l)` finest units.
    pub fn from_scale_choices(
        dim: usize,
        level_coarse: i32,
        level_fine: i32,
        choices: Vec<Vec<u8>>,
    ) -> Result<Self> {
        Self::validate_levels(dim, level_coarse, level_fine)?;
        let n_levels = (level_fine - level_coarse) as usize;
        if choices.len() != n_levels {
            return Err(Error::guard(format!(
                "expected {n_levels} choice vectors, got {}",
                choices.len()
            )));
        }
        let mut t_units = vec![0i64; dim];
        for (i, c) in choices.iter().enumerate() {
            if c.len() != dim || c.iter().any(|&b| b > 1) {
                return Err(Error::guard("choice vectors must be 0/1 per axis"));
            }
            // Level of this choice is coarse+1+i; weight 2^(fine-level).
            let w = 1i64 << (n_levels - 1 - i);
            for a in 0..dim {
                t_units[a] += w * c[a] as i64;
            }
        }
        Ok(GridShift {
            dim,
            level_coarse,
            level_fine,
            form: ShiftForm::Scales(choices),
            t_units,
            offset: vec![0.0; dim],
        })
    }

    /// Attach a continuous offset (entries in `[0, 2^-level_fine)`).
    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::guard("offset length must equal dim"));
        }
        let cell = pow2(-self.level_fine);
        if offset.iter().any(|&s| !(0.0..cell).contains(&s)) {
            return Err(Error::guard("offset entries must lie in [0, cell side)"));
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn t_units(&self) -> &[i64] {
        &self.t_units
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Number of levels below the top.
    pub fn span(&self) -> i32 {
        self.level_fine - self.level_coarse
    }

    /// Grid equality: same window, same canonical shift. The canonical
    /// shift determines the top-level tiling, and with it every finer tiling.
    pub fn same_grid(&self, other: &GridShift) -> bool {
        self.dim == other.dim
            && self.level_coarse == other.level_coarse
            && self.level_fine == other.level_fine
            && self.t_units == other.t_units
            && self.offset == other.offset
    }

    pub fn contains_level(&self, level: i32) -> bool {
        self.level_coarse <= level && level <= self.level_fine
    }

    /// Geometric shift of the whole grid, per axis.
    pub fn shift_coord(&self, axis: usize) -> f64 {
        self.t_units[axis] as f64 * pow2(-self.level_fine) + self.offset[axis]
    }

    /// Geometric box of a cube.
    pub fn cube_rect(&self, c: &DyadicCube) -> Rect {
        let side = c.side();
        let lo: Vec<f64> = (0..self.dim)
            .map(|a| self.shift_coord(a) + c.index[a] as f64 * side)
            .collect();
        Rect::cube(&lo, side)
    }

    /// The unique grid cube of `level` containing `x`.
    pub fn containing_cube(&self, x: &[f64], level: i32) -> Result<DyadicCube> {
        if !self.contains_level(level) {
            return Err(Error::guard(format!(
                "level {level} outside grid window [{}, {}]",
                self.level_coarse, self.level_fine
            )));
        }
        let index = (0..self.dim)
            .map(|a| ((x[a] - self.shift_coord(a)) * pow2(level)).floor() as i64)
            .collect();
        Ok(DyadicCube { level, index })
    }

    /// Parent cube (one level coarser), if still inside the window.
    pub fn parent(&self, c: &DyadicCube) -> Option<DyadicCube> {
        if c.level - 1 < self.level_coarse {
            return None;
        }
        Some(DyadicCube {
            level: c.level - 1,
            index: c.index.iter().map(|&k| k.div_euclid(2)).collect(),
        })
    }

    /// Ancestor `r` levels up, if inside the window.
    pub fn ancestor(&self, c: &DyadicCube, r: u32) -> Option<DyadicCube> {
        let level = c.level - r as i32;
        if level < self.level_coarse {
            return None;
        }
        Some(DyadicCube {
            level,
            index: c
                .index
                .iter()
                .map(|&k| k.div_euclid(1i64 << r))
                .collect(),
        })
    }

    /// The `2^dim` children, one level finer.
    pub fn children(&self, c: &DyadicCube) -> Vec<DyadicCube> {
        assert!(c.level + 1 <= self.level_fine, "children below finest level");
        let mut out = Vec::with_capacity(1 << self.dim);
        for mask in 0..(1u32 << self.dim) {
            let index: Vec<i64> = (0..self.dim)
                .map(|a| 2 * c.index[a] + ((mask >> a) & 1) as i64)
                .collect();
            out.push(DyadicCube {
                level: c.level + 1,
                index,
            });
        }
        out
    }

    /// Offset of `c` inside its level-`r` ancestor, per axis, in `[0, 2^r)`.
    pub fn offset_in_ancestor(&self, c: &DyadicCube, r: u32) -> Vec<i64> {
        c.index
            .iter()
            .map(|&k| k.rem_euclid(1i64 << r))
            .collect()
    }

    /// Whether the dilate-by-3 of `c` reaches the boundary of the level-`r`
    /// ancestor. Per axis with offset `k` inside the ancestor, the triple
    /// stays strictly inside exactly when `2 <= k <= 2^r - 3`; the cube is
    /// bad when some axis violates that. A cube whose ancestor lies outside
    /// the truncation window counts as good.
    pub fn is_r_bad(&self, c: &DyadicCube, r: u32) -> bool {
        if r == 0 || self.ancestor(c, r).is_none() {
            return false;
        }
        let span = 1i64 << r;
        self.offset_in_ancestor(c, r)
            .iter()
            .any(|&k| k < 2 || k > span - 3)
    }
}

/// Exact fraction of offsets inside a level-`r` ancestor that are bad:
/// `((2^r)^n - max(2^r - 4, 0)^n) / 2^(n r)`, reduced.
pub fn bad_fraction(dim: usize, r: u32) -> Result<(u128, u128)> {
    if !(1..=3).contains(&dim) || r == 0 || r > 40 {
        return Err(Error::guard("bad_fraction needs dim in 1..=3, r in 1..=40"));
    }
    let side = 1u128 << r;
    let good_side = side.saturating_sub(4);
    let total = side.pow(dim as u32);
    let good = good_side.pow(dim as u32);
    let num = total - good;
    let g = gcd(num, total);
    Ok((num / g, total / g))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// All grids of the family (integer shifts). Guarded: the family has
/// `2^(dim * span)` members, and `dim * span` may not exceed
/// [`MAX_ENUM_BITS`].
pub fn enumerate_grids(
    dim: usize,
    level_coarse: i32,
    level_fine: i32,
    family: GridFamily,
) -> Result<Vec<GridShift>> {
    if family == GridFamily::Phi {
        return Err(Error::guard(
            "the continuous family is uncountable; enumerate integer shifts only",
        ));
    }
    let span = (level_fine - level_coarse) as u32;
    let bits = dim as u32 * span;
    if bits > MAX_ENUM_BITS {
        return Err(Error::guard(format!(
            "enumeration needs {bits} bits, cap is {MAX_ENUM_BITS}"
        )));
    }
    let per_axis = 1i64 << span;
    let total = 1usize << bits;
    let mut grids = Vec::with_capacity(total);
    for code in 0..total {
        let mut t = vec![0i64; dim];
        let mut c = code as i64;
        for a in (0..dim).rev() {
            t[a] = c % per_axis;
            c /= per_axis;
        }
        grids.push(GridShift::from_translation(
            dim,
            level_coarse,
            level_fine,
            t,
        )?);
    }
    Ok(grids)
}

/// Draw one grid uniformly: integer shift per axis, plus a continuous
/// offset when the family is Phi.
pub fn sample_grid(
    dim: usize,
    level_coarse: i32,
    level_fine: i32,
    family: GridFamily,
    rng: &mut Stream,
) -> Result<GridShift> {
    GridShift::validate_levels(dim, level_coarse, level_fine)?;
    let per_axis = 1u64 << (level_fine - level_coarse);
    let t: Vec<i64> = (0..dim).map(|_| rng.below(per_axis) as i64).collect();
    let g = GridShift::from_translation(dim, level_coarse, level_fine, t)?;
    match family {
        GridFamily::Omega => Ok(g),
        GridFamily::Phi => {
            let cell = pow2(-level_fine);
            let s: Vec<f64> = (0..dim).map(|_| rng.next_f64() * cell).collect();
            g.with_offset(s)
        }
    }
}
