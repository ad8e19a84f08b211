//! Stopping-time selection over a Whitney family: principal cubes chosen by
//! average jumps, the two selection clauses replayed exhaustively, the
//! Carleson ratio of the selected family, and the good/bad split of cubes by
//! their position inside level-r grid ancestors.

use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::grid::{bad_fraction, DyadicCube, GridShift};
use crate::measure::{CellFunction, CellMeasure};
use crate::rng::Stream;
use crate::whitney::{ESet, WhitneyFamily};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One distinguished cube: a geometric cube kept at the largest threshold
/// where it appears in the family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub threshold_exp: i32,
    pub cube_index: usize,
    pub cube: DyadicCube,
    pub rect: Rect,
    pub average: f64,
    pub sigma_mass: f64,
}

/// Deduplicate the family by geometric cube, keeping the largest threshold.
/// Nodes come out sorted coarse to fine (so ancestors precede descendants).
pub fn distinguished(fam: &WhitneyFamily) -> Result<Vec<Node>> {
    let mut by_cube: BTreeMap<(i32, Vec<i64>), Node> = BTreeMap::new();
    for level in &fam.levels {
        for (j, wc) in level.cubes.iter().enumerate() {
            let average = wc.average.ok_or_else(|| {
                Error::mismatch("averages must be attached before stopping-time work")
            })?;
            let key = (wc.cube.level, wc.cube.index.clone());
            let node = Node {
                threshold_exp: level.threshold_exp,
                cube_index: j,
                cube: wc.cube.clone(),
                rect: wc.rect.clone(),
                average,
                sigma_mass: 0.0,
            };
            match by_cube.get(&key) {
                Some(prev) if prev.threshold_exp >= level.threshold_exp => {}
                _ => {
                    by_cube.insert(key, node);
                }
            }
        }
    }
    Ok(by_cube.into_values().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalFamily {
    pub eta: f64,
    pub coarsest_threshold: i32,
    pub nodes: Vec<Node>,
    /// Parallel to `nodes`: generation number for principal nodes.
    pub generation: Vec<Option<u32>>,
    /// Smallest principal cube containing each node (itself when principal).
    pub predecessor: Vec<usize>,
    /// For principal non-roots: the governing principal node whose average
    /// was exceeded by the eta factor (the selection witness).
    pub witness: Vec<Option<usize>>,
    pub norm_sq_f: f64,
}

impl PrincipalFamily {
    pub fn is_principal(&self, i: usize) -> bool {
        self.generation[i].is_some()
    }

    pub fn generation_members(&self, g: u32) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.generation[i] == Some(g))
            .collect()
    }

    pub fn n_principal(&self) -> usize {
        self.generation.iter().filter(|g| g.is_some()).count()
    }
}

/// Strict-ancestor test in the family's grid.
fn strictly_contains(g: &GridShift, outer: &DyadicCube, inner: &DyadicCube) -> bool {
    if outer.level >= inner.level {
        return false;
    }
    match g.ancestor(inner, (inner.level - outer.level) as u32) {
        Some(a) => a == *outer,
        None => false,
    }
}

/// Principal-cube selection. Roots are the containment-maximal cubes among
/// levels with threshold at least `coarsest`; below them a cube becomes
/// principal exactly when its average exceeds `eta` times the average of its
/// nearest principal strict ancestor. Processing coarse to fine makes this
/// equivalent to the generational two-clause recursion: any intermediate
/// cube violating clause (i) against the governor would itself have been
/// selected first.
pub fn build_principal(
    fam: &WhitneyFamily,
    f: &CellFunction,
    sigma: &CellMeasure,
    eta: f64,
    coarsest: i32,
) -> Result<PrincipalFamily> {
    if eta <= 1.0 {
        return Err(Error::guard("eta must exceed 1"));
    }
    if f.values().iter().any(|&v| v < 0.0) {
        return Err(Error::guard("stopping times need a nonnegative integrand"));
    }
    let g = &fam.grid;
    let mut nodes: Vec<Node> = distinguished(fam)?
        .into_iter()
        .filter(|n| n.threshold_exp >= coarsest)
        .collect();
    for n in &mut nodes {
        n.sigma_mass = sigma.integrate(&n.rect);
    }
    // Coarse-to-fine; ties broken by index for determinism.
    nodes.sort_by(|a, b| (a.cube.level, &a.cube.index).cmp(&(b.cube.level, &b.cube.index)));
    let n = nodes.len();
    let mut generation: Vec<Option<u32>> = vec![None; n];
    let mut predecessor: Vec<usize> = vec![0; n];
    let mut witness: Vec<Option<usize>> = vec![None; n];
    // Index by (level, index) for ancestor walks.
    let mut lookup: BTreeMap<(i32, Vec<i64>), usize> = BTreeMap::new();
    let levels_present: Vec<i32> = {
        let mut ls: Vec<i32> = nodes.iter().map(|nd| nd.cube.level).collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    };
    for i in 0..n {
        let cube = nodes[i].cube.clone();
        // Nearest principal strict ancestor, walking levels fine to coarse.
        let mut governor: Option<usize> = None;
        for &lvl in levels_present.iter().rev() {
            if lvl >= cube.level {
                continue;
            }
            if let Some(anc) = g.ancestor(&cube, (cube.level - lvl) as u32) {
                if let Some(&ai) = lookup.get(&(anc.level, anc.index.clone())) {
                    if generation[ai].is_some() {
                        governor = Some(ai);
                        break;
                    }
                }
            }
        }
        match governor {
            None => {
                // Containment-maximal: a root of the forest.
                generation[i] = Some(0);
                predecessor[i] = i;
            }
            Some(p) => {
                if nodes[i].average > eta * nodes[p].average {
                    generation[i] = Some(generation[p].unwrap() + 1);
                    predecessor[i] = i;
                    witness[i] = Some(p);
                } else {
                    predecessor[i] = p;
                }
            }
        }
        lookup.insert((cube.level, cube.index), i);
    }
    Ok(PrincipalFamily {
        eta,
        coarsest_threshold: coarsest,
        nodes,
        generation,
        predecessor,
        witness,
        norm_sq_f: f.norm_sq(sigma)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalReport {
    /// Clause (i): every cube's average at most eta times its predecessor's.
    pub clause_i: bool,
    /// Clause (ii): nested principal pairs jump by more than eta.
    pub clause_ii: bool,
    /// Predecessors are the smallest principal cubes containing each node.
    pub predecessor_minimal: bool,
    /// Sum of average^2 * sigma-mass over principal cubes, divided by the
    /// squared L2(sigma) norm of f. Reported, not capped.
    pub carleson_ratio: f64,
    pub n_nodes: usize,
    pub n_principal: usize,
    pub n_generations: u32,
}

impl PrincipalReport {
    pub fn all_pass(&self) -> bool {
        self.clause_i && self.clause_ii && self.predecessor_minimal
    }
}

/// Exhaustive replay of both selection clauses plus predecessor minimality,
/// and the Carleson ratio of the selected family.
pub fn check_principal(pf: &PrincipalFamily, g: &GridShift) -> PrincipalReport {
    let n = pf.nodes.len();
    let mut clause_i = true;
    let mut clause_ii = true;
    let mut predecessor_minimal = true;
    for i in 0..n {
        let p = pf.predecessor[i];
        if !pf.is_principal(p) {
            predecessor_minimal = false;
        }
        if pf.nodes[i].average > pf.eta * pf.nodes[p].average && p != i {
            clause_i = false;
        }
        // Smallest principal ancestor-or-self must be the recorded one.
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !pf.is_principal(j) {
                continue;
            }
            let contains = j == i
                || strictly_contains(g, &pf.nodes[j].cube, &pf.nodes[i].cube);
            if contains {
                best = match best {
                    None => Some(j),
                    Some(b) => {
                        if pf.nodes[j].cube.level > pf.nodes[b].cube.level {
                            Some(j)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
        }
        if best != Some(p) {
            predecessor_minimal = false;
        }
    }
    for i in 0..n {
        if !pf.is_principal(i) {
            continue;
        }
        for j in 0..n {
            if i == j || !pf.is_principal(j) {
                continue;
            }
            if strictly_contains(g, &pf.nodes[j].cube, &pf.nodes[i].cube)
                && pf.nodes[i].average <= pf.eta * pf.nodes[j].average
            {
                clause_ii = false;
            }
        }
    }
    let sum: f64 = (0..n)
        .filter(|&i| pf.is_principal(i))
        .map(|i| pf.nodes[i].average.powi(2) * pf.nodes[i].sigma_mass)
        .sum();
    let carleson_ratio = if pf.norm_sq_f > 0.0 {
        sum / pf.norm_sq_f
    } else {
        0.0
    };
    PrincipalReport {
        clause_i,
        clause_ii,
        predecessor_minimal,
        carleson_ratio,
        n_nodes: n,
        n_principal: pf.n_principal(),
        n_generations: pf
            .generation
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |g| g + 1),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodBadSplit {
    pub r: u32,
    /// (threshold_exp, cube_index) pairs, in family order.
    pub good: Vec<(i32, usize)>,
    pub bad: Vec<(i32, usize)>,
}

/// Partition of the family's cubes by badness in their own grid: a cube is
/// r-bad when its offset inside its level-r ancestor touches the two outer
/// shells; cubes without a level-r ancestor in the truncation are good.
pub fn split_good_bad(fam: &WhitneyFamily, r: u32) -> GoodBadSplit {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for level in &fam.levels {
        for (j, wc) in level.cubes.iter().enumerate() {
            if fam.grid.is_r_bad(&wc.cube, r) {
                bad.push((level.threshold_exp, j));
            } else {
                good.push((level.threshold_exp, j));
            }
        }
    }
    GoodBadSplit { r, good, bad }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BadMassReport {
    pub r: u32,
    pub samples: usize,
    /// Expected bad fraction for a free cube: exact enumeration value.
    pub exact_fraction: f64,
    /// Closed-form cap 4 n 2^-r.
    pub cap: f64,
    pub mean: f64,
    pub stderr: f64,
    /// mean <= cap + 3 stderr (vacuous when total weight is zero).
    pub pass: bool,
    pub total_weight: f64,
}

/// Monte Carlo check that re-randomizing the grid around each distinguished
/// cube keeps the omega-weighted bad share within `4 n 2^-r` plus noise.
///
/// For a cube of level l with corner at `c` (units of the fine level), the
/// translations whose grid contains the cube are exactly
/// `c mod 2^(M-l) + 2^(M-l) * v`, so drawing `v` uniformly is the conditional
/// law of the random grid given that it contains the cube. Weights are the
/// omega-masses of the cubes' E-sets.
pub fn bad_mass_check(
    fam: &WhitneyFamily,
    esets: &[ESet],
    omega: &CellMeasure,
    r: u32,
    samples: usize,
    seed: u64,
) -> Result<BadMassReport> {
    let g = &fam.grid;
    let dim = g.dim;
    let span = g.level_fine - g.level_coarse;
    // Weight per (threshold, cube_index): omega-mass of the E-set.
    let mut weight: BTreeMap<(i32, usize), f64> = BTreeMap::new();
    for e in esets {
        let w: f64 = e
            .cells
            .iter()
            .map(|c| omega.integrate(&e.cells.cell_rect(c)))
            .sum();
        weight.insert((e.threshold_exp, e.cube_index), w);
    }
    let nodes = distinguished(fam)?;
    let mut weighted: Vec<(&Node, f64)> = Vec::new();
    let mut total_weight = 0.0;
    for node in &nodes {
        let w = *weight
            .get(&(node.threshold_exp, node.cube_index))
            .unwrap_or(&0.0);
        if w > 0.0 {
            total_weight += w;
            weighted.push((node, w));
        }
    }
    let (num, den) = bad_fraction(dim, r)?;
    let exact_fraction = num as f64 / den as f64;
    let cap = 4.0 * dim as f64 * 2f64.powi(-(r as i32));
    if weighted.is_empty() || samples == 0 {
        return Ok(BadMassReport {
            r,
            samples,
            exact_fraction,
            cap,
            mean: 0.0,
            stderr: 0.0,
            pass: true,
            total_weight,
        });
    }
    let mut fractions = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut stream = Stream::substream(seed, i as u64);
        let mut bad_w = 0.0;
        for (node, w) in &weighted {
            let l = node.cube.level;
            let level_units = 1i64 << (g.level_fine - l);
            // Corner in fine-level units, then the conditional translation.
            let mut t_units = vec![0i64; dim];
            let mut index = vec![0i64; dim];
            for a in 0..dim {
                let corner = node.cube.index[a] * level_units + g.t_units()[a];
                let base = corner.rem_euclid(level_units);
                let v = if l > g.level_coarse {
                    stream.below(1u64 << (l - g.level_coarse)) as i64
                } else {
                    0
                };
                t_units[a] = base + level_units * v;
                index[a] = (corner - t_units[a]).div_euclid(level_units);
            }
            let g2 = GridShift::from_translation(dim, g.level_coarse, g.level_fine, t_units)?;
            debug_assert_eq!(span, g2.level_fine - g2.level_coarse);
            let cube2 = DyadicCube {
                level: l,
                index,
            };
            debug_assert_eq!(g2.cube_rect(&cube2), node.rect);
            if g2.is_r_bad(&cube2, r) {
                bad_w += w;
            }
        }
        fractions.push(bad_w / total_weight);
    }
    let mean = fractions.iter().sum::<f64>() / samples as f64;
    let var = fractions
        .iter()
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / (samples.max(2) - 1) as f64;
    let stderr = (var / samples as f64).sqrt();
    Ok(BadMassReport {
        r,
        samples,
        exact_fraction,
        cap,
        mean,
        stderr,
        pass: mean <= cap + 3.0 * stderr,
        total_weight,
    })
}
