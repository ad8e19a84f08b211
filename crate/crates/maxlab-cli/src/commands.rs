//! One runner per subcommand. Each resolves its settings (flag beats file
//! beats default), runs the experiment, writes `STEM.csv` and
//! `STEM.report.json`, prints a one-line verdict, and returns whether every
//! asserted property held. Any failed property names itself both on stdout
//! and under `"failed"` in the report.

use crate::config::{pick, FileConfig, GenSpec, PairSettings};
use crate::emit::{fmt_bool, Emitter};
use clap::Args;
use maxlab::constants::{
    a2_constant, constants_report, estimate_norm_lower, mollified_stability_report,
    restricted_testing_constant, testing_constant, SearchBudget, TestingParams,
};
use maxlab::error::{Error, Result};
use maxlab::exec;
use maxlab::geom::ScaleWindow;
use maxlab::grid::{bad_fraction, enumerate_grids, DyadicCube, GridFamily, GridShift};
use maxlab::maximal::domination_check;
use maxlab::measure::{read_measure_text, write_measure_text, CellFunction, CellMeasure};
use maxlab::report::{
    constants_cells, constants_columns, fmt_f64, fmt_rect, CsvTable, DefaultParams,
    SCHEMA_VERSION,
};
use maxlab::rng::Stream;
use maxlab::stopping::{bad_mass_check, build_principal, check_principal, split_good_bad};
use maxlab::whitney::{
    build_esets, build_family, check_whitney_properties, classify_pi, esets_pairwise_disjoint,
    maximum_principle_check, min_m, PiClass,
};
use serde_json::{json, Value};

// Shared flag blocks. Defaults live in the resolve_* helpers so the file
// config can sit between a flag and its default.

#[derive(Args, Debug, Clone)]
pub struct PairArgs {
    /// Ambient dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Master seed; every random choice in the run derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// First measure: uniform | random-cells | cantor:D | power:A |
    /// point-pair:G | file:PATH.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Second measure, same forms.
    #[arg(long)]
    pub omega: Option<String>,
    /// Lattice resolution exponent: cells have side 2^-RES.
    #[arg(long)]
    pub res: Option<i32>,
    /// Total mass each generated measure is normalized to.
    #[arg(long)]
    pub mass: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Smallest admissible cube side exponent (side 2^LO).
    #[arg(long)]
    pub window_lo: Option<i32>,
    /// Largest admissible cube side exponent.
    #[arg(long)]
    pub window_hi: Option<i32>,
}

#[derive(Args, Debug, Clone)]
pub struct TestingArgs {
    /// Concentric dilation factor for testing denominators.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Doubling threshold for the restricted variant.
    #[arg(long)]
    pub d: Option<f64>,
    /// Extra dyadic levels refining candidate corner positions.
    #[arg(long)]
    pub refine: Option<u32>,
    /// Quadrature subdivisions per measure cell per axis.
    #[arg(long)]
    pub quad: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Random restarts for the norm search.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Alternating-maximization rounds per start.
    #[arg(long)]
    pub iterations: Option<usize>,
}

fn resolve_pair(
    fc: &FileConfig,
    a: &PairArgs,
    sigma_default: &str,
    omega_default: &str,
) -> Result<PairSettings> {
    let sigma = GenSpec::parse(&pick(
        a.sigma.clone(),
        fc.sigma.clone(),
        sigma_default.into(),
    ))?;
    let omega = GenSpec::parse(&pick(
        a.omega.clone(),
        fc.omega.clone(),
        omega_default.into(),
    ))?;
    Ok(PairSettings {
        dim: pick(a.dim, fc.dim, 1),
        res: pick(a.res, fc.res, 4),
        mass: pick(a.mass, fc.mass, 1.0),
        seed: pick(a.seed, fc.seed, 1729),
        sigma,
        omega,
    })
}

fn resolve_window(fc: &FileConfig, a: &WindowArgs, lo: i32, hi: i32) -> Result<ScaleWindow> {
    let lo = pick(a.window_lo, fc.window_lo, lo);
    let hi = pick(a.window_hi, fc.window_hi, hi);
    if lo > hi {
        return Err(Error::guard(format!(
            "window is empty: lo {lo} exceeds hi {hi}"
        )));
    }
    Ok(ScaleWindow::new(lo, hi))
}

fn resolve_testing(
    fc: &FileConfig,
    a: &TestingArgs,
    dim: usize,
    window: ScaleWindow,
) -> Result<TestingParams> {
    let defaults = DefaultParams::for_dim(dim);
    let p = TestingParams {
        gamma: pick(a.gamma, fc.gamma, defaults.gamma),
        d: pick(a.d, fc.d, defaults.d),
        window,
        position_refine: pick(a.refine, fc.refine, 1),
        quad_sub: pick(a.quad, fc.quad, 2),
    };
    p.validate()?;
    Ok(p)
}

fn resolve_search(fc: &FileConfig, a: &SearchArgs, seed: u64) -> SearchBudget {
    SearchBudget {
        restarts: pick(a.restarts, fc.restarts, 4),
        iterations: pick(a.iterations, fc.iterations, 8),
        seed,
    }
}

fn window_json(w: ScaleWindow) -> Value {
    json!({ "lo": w.j_min, "hi": w.j_max })
}

fn verdict(failed: &[&str]) -> String {
    if failed.is_empty() {
        "ok".into()
    } else {
        format!("FAIL: {}", failed.join(", "))
    }
}

// ----- constants -----

#[derive(Args, Debug, Clone)]
pub struct ConstantsArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Extra dyadic levels for the stability recomputation.
    #[arg(long)]
    pub widen: Option<i32>,
}

pub fn constants(fc: &FileConfig, a: &ConstantsArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let pair = resolve_pair(fc, &a.pair, "random-cells", "random-cells")?;
    let window = resolve_window(fc, &a.window, -6, 2)?;
    let p = resolve_testing(fc, &a.testing, pair.dim, window)?;
    let search = resolve_search(fc, &a.search, pair.seed);
    let widen = pick(a.widen, fc.widen, 1);
    let (sigma, omega) = pair.build(0)?;
    let rep = constants_report(&sigma, &omega, &p, &search, widen)?;

    let mut failed = Vec::new();
    // The restricted sup ranges over a subset of the same ratios.
    if !(rep.t_d_gamma.value <= rep.t_gamma.value) {
        failed.push("restricted-testing-below-testing");
    }
    if !(rep.a2.value.is_finite()
        && rep.t_gamma.value.is_finite()
        && rep.norm_lb.value.is_finite())
    {
        failed.push("finite-constants");
    }

    let mut t = CsvTable::new(&constants_columns());
    t.push_row(constants_cells(&rep));
    let config = json!({
        "command": "constants",
        "pair": pair,
        "window": window_json(window),
        "gamma": p.gamma,
        "d": p.d,
        "position_refine": p.position_refine,
        "quad_sub": p.quad_sub,
        "search": { "restarts": search.restarts, "iterations": search.iterations,
                    "seed": search.seed },
        "widen": widen,
    });
    let rest = json!({ "report": rep, "failed": failed, "pass": failed.is_empty() });
    em.write(&t, "constants", &DefaultParams::for_dim(pair.dim), config, rest)?;
    println!(
        "a2 {}  testing {}  restricted {}  norm-lb {}  ratio {}  [{}]",
        fmt_f64(rep.a2.value),
        fmt_f64(rep.t_gamma.value),
        fmt_f64(rep.t_d_gamma.value),
        fmt_f64(rep.norm_lb.value),
        fmt_f64(rep.ratio),
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- norm -----

#[derive(Args, Debug, Clone)]
pub struct NormArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

pub fn norm(fc: &FileConfig, a: &NormArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let pair = resolve_pair(fc, &a.pair, "random-cells", "random-cells")?;
    let window = resolve_window(fc, &a.window, -6, 2)?;
    let p = resolve_testing(fc, &a.testing, pair.dim, window)?;
    let search = resolve_search(fc, &a.search, pair.seed);
    let (sigma, omega) = pair.build(0)?;
    let est = estimate_norm_lower(&sigma, &omega, &p, &search)?;

    let mut failed = Vec::new();
    if !est.value.is_finite() {
        failed.push("finite-norm");
    }

    let mut t = CsvTable::new(&[
        "schema",
        "norm_lb",
        "converged",
        "assignments_stable",
        "clamp_noop",
        "extremal_cube",
    ]);
    t.push_row(vec![
        SCHEMA_VERSION.to_string(),
        fmt_f64(est.value),
        fmt_bool(est.converged),
        fmt_bool(est.assignments_stable),
        fmt_bool(est.clamp_was_noop),
        est.extremal_cube
            .as_ref()
            .map(fmt_rect)
            .unwrap_or_else(|| "none".into()),
    ]);
    let config = json!({
        "command": "norm",
        "pair": pair,
        "window": window_json(window),
        "gamma": p.gamma,
        "d": p.d,
        "position_refine": p.position_refine,
        "quad_sub": p.quad_sub,
        "search": { "restarts": search.restarts, "iterations": search.iterations,
                    "seed": search.seed },
    });
    let rest = json!({ "estimate": est, "failed": failed, "pass": failed.is_empty() });
    em.write(&t, "norm", &DefaultParams::for_dim(pair.dim), config, rest)?;
    println!("norm lower bound {}  [{}]", fmt_f64(est.value), verdict(&failed));
    Ok(failed.is_empty())
}

// ----- whitney -----

#[derive(Args, Debug, Clone)]
pub struct WhitneyArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Integrand recipe for averages and stopping times (same lattice as
    /// the first measure).
    #[arg(long)]
    pub f: Option<String>,
    /// Coarsest grid level: top cubes have side 2^-COARSE.
    #[arg(long)]
    pub coarse: Option<i32>,
    /// Finest grid level.
    #[arg(long)]
    pub fine: Option<i32>,
    /// Whitney dilation parameter.
    #[arg(long)]
    pub r_w: Option<i64>,
    /// Admissible overlap count.
    #[arg(long)]
    pub n_overlap: Option<i64>,
    /// Lowest threshold exponent of the ladder.
    #[arg(long)]
    pub k0: Option<i32>,
    /// Exponent step between ladder levels.
    #[arg(long)]
    pub step: Option<u32>,
    /// Number of ladder levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Region lattice refinement beyond the measure lattice.
    #[arg(long)]
    pub refine: Option<u32>,
    /// Dyadic drop separating a cube's threshold from its core set; 0 picks
    /// the smallest admissible value for the dimension and dilation.
    #[arg(long)]
    pub m: Option<u32>,
    /// Extra drop for the core set's upper cut.
    #[arg(long)]
    pub m0: Option<u32>,
    /// Average jump factor for stopping-time selection.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Ancestor depth for the good/bad split.
    #[arg(long)]
    pub r: Option<u32>,
    /// Mass-share threshold for the three-case partition.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Sample budget per core set and per grid re-randomization.
    #[arg(long)]
    pub samples: Option<usize>,
}

pub fn whitney(fc: &FileConfig, a: &WhitneyArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let pair = resolve_pair(fc, &a.pair, "random-cells", "uniform")?;
    let defaults = DefaultParams::for_dim(pair.dim);
    let f_spec = GenSpec::parse(&pick(a.f.clone(), fc.f.clone(), "random-cells".into()))?;
    let coarse = pick(a.coarse, fc.coarse, -2);
    let fine = pick(a.fine, fc.fine, pair.res);
    let r_w = pick(a.r_w, fc.r_w, defaults.r_w);
    let n_overlap = pick(a.n_overlap, fc.n_overlap, 5);
    let k0 = pick(a.k0, fc.k0, -1);
    let step = pick(a.step, fc.step, 1);
    let levels = pick(a.levels, fc.levels, 4);
    let refine = pick(a.refine, fc.refine, 1);
    let m = match pick(a.m, fc.m, 0) {
        0 => min_m(pair.dim, r_w),
        m => m,
    };
    let m0 = pick(a.m0, fc.m0, defaults.m0);
    let eta = pick(a.eta, fc.eta, defaults.eta);
    let r = pick(a.r, fc.r, defaults.r);
    let beta = pick(a.beta, fc.beta, defaults.beta);
    let samples = pick(a.samples, fc.samples, 64);

    let (sigma, omega) = pair.build(0)?;
    let mut s2 = Stream::substream(pair.seed, 2);
    let f_measure = f_spec.generate(pair.dim, pair.res, 1.0, &mut s2)?;
    if f_measure.spec() != sigma.spec() {
        return Err(Error::mismatch(
            "integrand lattice differs from the first measure's",
        ));
    }
    let f = CellFunction::new(sigma.spec().clone(), f_measure.density().to_vec())?;
    let fsigma = f.weigh(&sigma)?;

    let g = GridShift::standard(pair.dim, coarse, fine)?;
    let (mut fam, _sets) = build_family(&fsigma, &g, r_w, n_overlap, k0, step, levels, refine)?;
    fam.attach_averages(&f, &sigma)?;
    let wr = check_whitney_properties(&fam);
    let esets = build_esets(&fsigma, &fam, m, m0)?;
    let disjoint = esets_pairwise_disjoint(&esets);
    let maxp = maximum_principle_check(&fsigma, &fam, &esets, m, samples)?;
    let pi = classify_pi(&fsigma, &omega, &fam, &esets, m, m0, beta)?;
    let pf = build_principal(&fam, &f, &sigma, eta, k0)?;
    let pr = check_principal(&pf, &g);
    let gb = split_good_bad(&fam, r);
    let bad_seed = Stream::substream(pair.seed, 3).next_u64();
    let bm = bad_mass_check(&fam, &esets, &omega, r, samples, bad_seed)?;

    let mut failed = Vec::new();
    if !wr.all_pass() {
        failed.push("whitney-properties");
    }
    if !disjoint {
        failed.push("core-sets-disjoint");
    }
    if !maxp.pass {
        failed.push("maximum-principle");
    }
    if !pr.all_pass() {
        failed.push("stopping-clauses");
    }
    if !bm.pass {
        failed.push("bad-mass-cap");
    }

    let columns = [
        "schema",
        "n_cubes",
        "n_levels",
        "disjoint_cover",
        "whitney_condition",
        "bounded_overlap",
        "crowd_control",
        "side_comparability",
        "nested_levels",
        "c_w",
        "crowd_measured",
        "esets_disjoint",
        "maxp_points",
        "maxp_violations",
        "maxp_pass",
        "pi1",
        "pi2",
        "pi3",
        "clause_i",
        "clause_ii",
        "predecessor_minimal",
        "carleson_ratio",
        "n_principal",
        "n_generations",
        "good",
        "bad",
        "bad_fraction_exact",
        "bad_cap",
        "bad_mean",
        "bad_stderr",
        "bad_pass",
        "pass",
    ];
    let mut t = CsvTable::new(&columns);
    t.push_row(vec![
        SCHEMA_VERSION.to_string(),
        fam.n_cubes().to_string(),
        fam.levels.len().to_string(),
        fmt_bool(wr.disjoint_cover),
        fmt_bool(wr.whitney_condition),
        fmt_bool(wr.bounded_overlap),
        fmt_bool(wr.crowd_control),
        fmt_bool(wr.side_comparability),
        fmt_bool(wr.nested_levels),
        wr.c_w.to_string(),
        wr.crowd_measured.to_string(),
        fmt_bool(disjoint),
        maxp.points_checked.to_string(),
        maxp.n_violations.to_string(),
        fmt_bool(maxp.pass),
        pi.count(PiClass::Pi1).to_string(),
        pi.count(PiClass::Pi2).to_string(),
        pi.count(PiClass::Pi3).to_string(),
        fmt_bool(pr.clause_i),
        fmt_bool(pr.clause_ii),
        fmt_bool(pr.predecessor_minimal),
        fmt_f64(pr.carleson_ratio),
        pr.n_principal.to_string(),
        pr.n_generations.to_string(),
        gb.good.len().to_string(),
        gb.bad.len().to_string(),
        fmt_f64(bm.exact_fraction),
        fmt_f64(bm.cap),
        fmt_f64(bm.mean),
        fmt_f64(bm.stderr),
        fmt_bool(bm.pass),
        fmt_bool(failed.is_empty()),
    ]);
    let config = json!({
        "command": "whitney",
        "pair": pair,
        "f": f_spec,
        "grid": { "coarse": coarse, "fine": fine },
        "r_w": r_w,
        "n_overlap": n_overlap,
        "ladder": { "k0": k0, "step": step, "levels": levels, "refine": refine },
        "m": m,
        "m0": m0,
        "eta": eta,
        "r": r,
        "beta": beta,
        "samples": samples,
    });
    let rest = json!({
        "whitney": wr,
        "esets_disjoint": disjoint,
        "max_principle": maxp,
        "pi": { "beta": beta,
                "pi1": pi.count(PiClass::Pi1),
                "pi2": pi.count(PiClass::Pi2),
                "pi3": pi.count(PiClass::Pi3) },
        "principal": pr,
        "split": { "good": gb.good.len(), "bad": gb.bad.len() },
        "bad_mass": bm,
        "failed": failed,
        "pass": failed.is_empty(),
    });
    em.write(&t, "whitney", &defaults, config, rest)?;
    println!(
        "{} cubes over {} levels  overlap {}  principal {}/{}  [{}]",
        fam.n_cubes(),
        fam.levels.len(),
        wr.c_w,
        pr.n_principal,
        pr.n_nodes,
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- badness -----

#[derive(Args, Debug, Clone)]
pub struct BadnessArgs {
    /// Ambient dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Ancestor depth.
    #[arg(long)]
    pub r: Option<u32>,
}

/// Count bad offsets by brute force: every position of a level-r descendant
/// inside one ancestor, tested through the public badness predicate.
fn enumerate_bad(n: usize, r: u32) -> Result<(u128, u128)> {
    let g = GridShift::standard(n, 0, r as i32)?;
    let side = 1i64 << r;
    let total = (side as u128).pow(n as u32);
    let mut bad = 0u128;
    let mut index = vec![0i64; n];
    loop {
        let cube = DyadicCube {
            level: r as i32,
            index: index.clone(),
        };
        if g.is_r_bad(&cube, r) {
            bad += 1;
        }
        let mut axis = n;
        for a in (0..n).rev() {
            index[a] += 1;
            if index[a] < side {
                axis = a;
                break;
            }
            index[a] = 0;
        }
        if axis == n {
            break;
        }
    }
    Ok((bad, total))
}

pub fn badness(fc: &FileConfig, a: &BadnessArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let n = pick(a.n, fc.n, 2);
    let r = pick(a.r, fc.r, 4);
    let (num, den) = bad_fraction(n, r)?;
    // Unreduced closed form, for display alongside the enumeration.
    let side = 1u128 << r;
    let bad_formula = side.pow(n as u32) - side.saturating_sub(4).pow(n as u32);
    let total = side.pow(n as u32);
    let can_enumerate = n as u32 * r <= 24;
    let (bad_enum, enum_match) = if can_enumerate {
        let (b, t) = enumerate_bad(n, r)?;
        (Some(b), b == bad_formula && t == total)
    } else {
        (None, true)
    };
    // The library value is the reduced fraction; cross-multiply to compare.
    let reduced_match = bad_formula * den == total * num;
    let fraction = num as f64 / den as f64;
    let cap = 4.0 * n as f64 * maxlab::geom::pow2(-(r as i32));
    let within_cap = fraction <= cap;

    let mut failed = Vec::new();
    if !(enum_match && reduced_match) {
        failed.push("enumeration-matches-formula");
    }
    if !within_cap {
        failed.push("fraction-within-cap");
    }

    let mut t = CsvTable::new(&[
        "schema",
        "n",
        "r",
        "bad",
        "total",
        "enumerated",
        "fraction",
        "cap",
        "within_cap",
        "enumeration_match",
    ]);
    t.push_row(vec![
        SCHEMA_VERSION.to_string(),
        n.to_string(),
        r.to_string(),
        bad_formula.to_string(),
        total.to_string(),
        bad_enum.map(|b| b.to_string()).unwrap_or_else(|| "skipped".into()),
        fmt_f64(fraction),
        fmt_f64(cap),
        fmt_bool(within_cap),
        fmt_bool(enum_match && reduced_match),
    ]);
    let config = json!({ "command": "badness", "n": n, "r": r });
    let rest = json!({
        "bad": bad_formula.to_string(),
        "total": total.to_string(),
        "enumerated": bad_enum.map(|b| b.to_string()),
        "reduced": { "num": num.to_string(), "den": den.to_string() },
        "fraction": fraction,
        "cap": cap,
        "failed": failed,
        "pass": failed.is_empty(),
    });
    em.write(&t, "badness", &DefaultParams::for_dim(n), config, rest)?;
    match bad_enum {
        Some(b) => println!(
            "{bad_formula}/{total} offsets are bad; enumeration found {b}/{total}  [{}]",
            verdict(&failed)
        ),
        None => println!(
            "{bad_formula}/{total} offsets are bad; enumeration skipped (too large)  [{}]",
            verdict(&failed)
        ),
    }
    Ok(failed.is_empty())
}

// ----- domination -----

#[derive(Args, Debug, Clone)]
pub struct DominationArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Coarsest grid level for the sampled grids.
    #[arg(long)]
    pub coarse: Option<i32>,
    /// Finest grid level.
    #[arg(long)]
    pub fine: Option<i32>,
    /// Grid family: omega (integer shifts) or phi (with continuous offset).
    #[arg(long)]
    pub family: Option<String>,
    /// Grids sampled per evaluation point.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Number of evaluation points.
    #[arg(long)]
    pub points: Option<usize>,
}

fn parse_family(s: &str) -> Result<GridFamily> {
    match s {
        "omega" => Ok(GridFamily::Omega),
        "phi" => Ok(GridFamily::Phi),
        other => Err(Error::guard(format!(
            "unknown grid family {other:?}; families: omega, phi"
        ))),
    }
}

pub fn domination(fc: &FileConfig, a: &DominationArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let pair = resolve_pair(fc, &a.pair, "random-cells", "uniform")?;
    let window = resolve_window(fc, &a.window, -6, 2)?;
    let coarse = pick(a.coarse, fc.coarse, -2);
    let fine = pick(a.fine, fc.fine, pair.res);
    let family_name = pick(a.family.clone(), fc.family.clone(), "phi".into());
    let family = parse_family(&family_name)?;
    let samples = pick(a.samples, fc.samples, 200);
    let n_points = pick(a.points, fc.points, 8);

    let (mu, _omega) = pair.build(0)?;
    let hull = mu
        .support_bbox()
        .ok_or_else(|| Error::guard("the measure has no support"))?;
    // Points land inside the support hull; substream 2 keeps them clear of
    // the generator streams.
    let mut s2 = Stream::substream(pair.seed, 2);
    let points: Vec<Vec<f64>> = (0..n_points)
        .map(|_| {
            (0..pair.dim)
                .map(|ax| {
                    let u = s2.next_f64();
                    hull.lo[ax] + u * (hull.hi[ax] - hull.lo[ax])
                })
                .collect()
        })
        .collect();
    let grid_seed = Stream::substream(pair.seed, 3).next_u64();
    let rep = domination_check(
        &mu, &points, coarse, fine, family, samples, grid_seed, window,
    )?;

    let mut failed = Vec::new();
    if !rep.all_pass {
        failed.push("dyadic-domination");
    }

    let mut t = CsvTable::new(&[
        "schema", "id", "point", "exact", "mean", "stderr", "bound", "pass",
    ]);
    for (i, p) in rep.points.iter().enumerate() {
        let coords: Vec<String> = p.point.iter().map(|&c| fmt_f64(c)).collect();
        t.push_row(vec![
            SCHEMA_VERSION.to_string(),
            i.to_string(),
            coords.join(" "),
            fmt_f64(p.exact),
            fmt_f64(p.sampled_mean),
            fmt_f64(p.stderr),
            fmt_f64(p.bound),
            fmt_bool(p.pass),
        ]);
    }
    let config = json!({
        "command": "domination",
        "pair": pair,
        "window": window_json(window),
        "grid": { "coarse": coarse, "fine": fine },
        "family": family_name,
        "samples": samples,
        "points": n_points,
    });
    let rest = json!({ "report": rep, "failed": failed, "pass": failed.is_empty() });
    em.write(&t, "domination", &DefaultParams::for_dim(pair.dim), config, rest)?;
    println!(
        "{} points, {} grids each, constant {}  [{}]",
        n_points,
        samples,
        fmt_f64(rep.constant),
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- mollify -----

#[derive(Args, Debug, Clone)]
pub struct MollifyArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    /// Smoothing widths, comma separated.
    #[arg(long)]
    pub eps: Option<String>,
}

pub fn mollify(fc: &FileConfig, a: &MollifyArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let pair = resolve_pair(fc, &a.pair, "random-cells", "random-cells")?;
    // The dilation-stability argument needs sides of at least eps times a
    // large dimensional factor, so the default window reaches high.
    let window = resolve_window(fc, &a.window, -6, 6)?;
    let p = resolve_testing(fc, &a.testing, pair.dim, window)?;
    let eps_list: Vec<f64> = match (&a.eps, &fc.eps) {
        (Some(s), _) => {
            let mut v = Vec::new();
            for part in s.split(',') {
                v.push(part.trim().parse::<f64>().map_err(|_| {
                    Error::guard(format!("bad smoothing width {part:?}"))
                })?);
            }
            v
        }
        (None, Some(v)) => v.clone(),
        (None, None) => vec![0.0625],
    };
    let (sigma, omega) = pair.build(0)?;
    let rep = mollified_stability_report(&sigma, &omega, &eps_list, &p)?;

    let mut failed = Vec::new();
    if !rep.rows.iter().all(|row| row.osc_max_c.is_finite()) {
        failed.push("oscillation-bounded");
    }

    let mut t = CsvTable::new(&[
        "schema",
        "eps",
        "a2",
        "a2_ratio",
        "t_restricted",
        "t_ratio",
        "min_side_exp",
        "window_emptied",
        "osc_max_c",
        "osc_checked",
        "osc_skipped",
    ]);
    for row in &rep.rows {
        t.push_row(vec![
            SCHEMA_VERSION.to_string(),
            fmt_f64(row.eps),
            fmt_f64(row.a2),
            fmt_f64(row.a2_ratio),
            fmt_f64(row.t_restricted),
            fmt_f64(row.t_ratio),
            row.min_side_exp.to_string(),
            fmt_bool(row.window_emptied),
            fmt_f64(row.osc_max_c),
            row.osc_checked.to_string(),
            row.osc_skipped.to_string(),
        ]);
    }
    let config = json!({
        "command": "mollify",
        "pair": pair,
        "window": window_json(window),
        "gamma": p.gamma,
        "d": p.d,
        "position_refine": p.position_refine,
        "quad_sub": p.quad_sub,
        "eps": eps_list,
    });
    let rest = json!({ "report": rep, "failed": failed, "pass": failed.is_empty() });
    em.write(&t, "mollify", &DefaultParams::for_dim(pair.dim), config, rest)?;
    println!(
        "{} widths, base a2 {}, base restricted testing {}  [{}]",
        rep.rows.len(),
        fmt_f64(rep.base_a2),
        fmt_f64(rep.base_t_restricted),
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- ratio-sweep -----

#[derive(Args, Debug, Clone)]
pub struct RatioSweepArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Number of instances.
    #[arg(long)]
    pub count: Option<usize>,
    /// Ambient dimension (alias for --dim).
    #[arg(long)]
    pub n: Option<usize>,
    /// Shorthand setting both measures to the same family.
    #[arg(long)]
    pub family: Option<String>,
    /// Extra dyadic levels for the stability recomputation.
    #[arg(long)]
    pub widen: Option<i32>,
}

pub fn ratio_sweep(fc: &FileConfig, a: &RatioSweepArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let mut pair_flags = a.pair.clone();
    pair_flags.dim = a.n.or(a.pair.dim);
    if let Some(fam) = a.family.clone().or_else(|| fc.family.clone()) {
        pair_flags.sigma.get_or_insert(fam.clone());
        pair_flags.omega.get_or_insert(fam);
    }
    let pair = resolve_pair(fc, &pair_flags, "random-cells", "random-cells")?;
    let window = resolve_window(fc, &a.window, -6, 2)?;
    let p = resolve_testing(fc, &a.testing, pair.dim, window)?;
    let restarts = pick(a.search.restarts, fc.restarts, 4);
    let iterations = pick(a.search.iterations, fc.iterations, 8);
    let widen = pick(a.widen, fc.widen, 1);
    let count = pick(a.count, fc.count, 50);
    if count == 0 {
        return Err(Error::guard("sweep needs at least one instance"));
    }

    // Instance i draws measures from substreams 2i, 2i+1 and its search
    // seed from a high substream block, so rows do not depend on count.
    let rows: Vec<Result<(Vec<String>, f64, bool)>> = exec::map_indexed(count, |i| {
        let (sigma, omega) = pair.build(i as u64)?;
        let search_seed = Stream::substream(pair.seed, (1u64 << 40) + i as u64).next_u64();
        let search = SearchBudget {
            restarts,
            iterations,
            seed: search_seed,
        };
        let rep = constants_report(&sigma, &omega, &p, &search, widen)?;
        let ordering_ok = rep.t_d_gamma.value <= rep.t_gamma.value
            && rep.a2.value.is_finite()
            && rep.norm_lb.value.is_finite();
        let mut cells = vec![
            i.to_string(),
            search_seed.to_string(),
            pair.sigma.label(),
            pair.omega.label(),
        ];
        cells.extend(constants_cells(&rep));
        cells.push(fmt_bool(ordering_ok));
        Ok((cells, rep.ratio, ordering_ok))
    });

    let mut columns: Vec<&str> = vec!["id", "seed", "sigma", "omega"];
    columns.extend(constants_columns());
    columns.push("ordering_ok");
    let mut t = CsvTable::new(&columns);
    let mut max_ratio = f64::NEG_INFINITY;
    let mut max_id = 0usize;
    let mut all_ok = true;
    for (i, row) in rows.into_iter().enumerate() {
        let (cells, ratio, ok) = row?;
        if ratio > max_ratio {
            max_ratio = ratio;
            max_id = i;
        }
        all_ok &= ok;
        t.push_row(cells);
    }

    let mut failed = Vec::new();
    if !all_ok {
        failed.push("per-instance-ordering");
    }

    let config = json!({
        "command": "ratio-sweep",
        "pair": pair,
        "window": window_json(window),
        "gamma": p.gamma,
        "d": p.d,
        "position_refine": p.position_refine,
        "quad_sub": p.quad_sub,
        "search": { "restarts": restarts, "iterations": iterations },
        "widen": widen,
        "count": count,
    });
    let rest = json!({
        "count": count,
        "max_ratio": max_ratio,
        "max_ratio_id": max_id,
        "failed": failed,
        "pass": failed.is_empty(),
    });
    em.write(&t, "ratio-sweep", &DefaultParams::for_dim(pair.dim), config, rest)?;
    println!(
        "{} instances, max ratio {} at instance {}  [{}]",
        count,
        fmt_f64(max_ratio),
        max_id,
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- gridcheck -----

#[derive(Args, Debug, Clone)]
pub struct GridcheckArgs {
    /// Ambient dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Coarsest level.
    #[arg(long)]
    pub coarse: Option<i32>,
    /// Finest level.
    #[arg(long)]
    pub fine: Option<i32>,
}

pub fn gridcheck(fc: &FileConfig, a: &GridcheckArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let n = pick(a.n, fc.n, 2);
    let coarse = pick(a.coarse, fc.coarse, -2);
    let fine = pick(a.fine, fc.fine, 1);
    let grids = enumerate_grids(n, coarse, fine, GridFamily::Omega)?;
    let span = (fine - coarse) as u32;
    let expected = 1usize << (n as u32 * span);

    // Independent construction: every per-level binary choice matrix. The
    // two parameterizations must produce the same set of grids.
    let mut by_scales: Vec<Vec<i64>> = Vec::with_capacity(expected);
    let bits = n as u32 * span;
    for code in 0..1usize << bits {
        let mut choices = vec![vec![0u8; n]; span as usize];
        for b in 0..bits {
            if code >> b & 1 == 1 {
                choices[(b / n as u32) as usize][(b % n as u32) as usize] = 1;
            }
        }
        let g = GridShift::from_scale_choices(n, coarse, fine, choices)?;
        by_scales.push(g.t_units().to_vec());
    }
    by_scales.sort();
    by_scales.dedup();
    let mut by_translation: Vec<Vec<i64>> = grids.iter().map(|g| g.t_units().to_vec()).collect();
    by_translation.sort();
    let sets_match = by_scales == by_translation;

    let mut failed = Vec::new();
    if grids.len() != expected {
        failed.push("translation-count");
    }
    if by_scales.len() != expected {
        failed.push("scale-choice-count");
    }
    if !sets_match {
        failed.push("construction-equivalence");
    }

    let mut t = CsvTable::new(&[
        "schema",
        "n",
        "coarse",
        "fine",
        "expected",
        "translations",
        "scale_choices",
        "sets_match",
    ]);
    t.push_row(vec![
        SCHEMA_VERSION.to_string(),
        n.to_string(),
        coarse.to_string(),
        fine.to_string(),
        expected.to_string(),
        grids.len().to_string(),
        by_scales.len().to_string(),
        fmt_bool(sets_match),
    ]);
    let config = json!({ "command": "gridcheck", "n": n, "coarse": coarse, "fine": fine });
    let rest = json!({
        "expected": expected,
        "translations": grids.len(),
        "scale_choices": by_scales.len(),
        "sets_match": sets_match,
        "failed": failed,
        "pass": failed.is_empty(),
    });
    em.write(&t, "gridcheck", &DefaultParams::for_dim(n), config, rest)?;
    println!(
        "{} grids expected, {} by translation, {} by scale choices  [{}]",
        expected,
        grids.len(),
        by_scales.len(),
        verdict(&failed),
    );
    Ok(failed.is_empty())
}

// ----- selftest -----

#[derive(Args, Debug, Clone)]
pub struct SelftestArgs {}

fn tiny_pair(seed: u64) -> Result<(CellMeasure, CellMeasure)> {
    let spec = GenSpec::RandomCells;
    let sigma = spec.generate(1, 3, 1.0, &mut Stream::substream(seed, 0))?;
    let omega = spec.generate(1, 3, 1.0, &mut Stream::substream(seed, 1))?;
    Ok((sigma, omega))
}

fn tiny_params() -> TestingParams {
    TestingParams::standard(1, ScaleWindow::new(-4, 1))
}

fn check_measure_roundtrip() -> Result<bool> {
    let m = GenSpec::RandomCells.generate(2, 2, 1.0, &mut Stream::new(3))?;
    let back = read_measure_text(&write_measure_text(&m))?;
    Ok(back.spec() == m.spec() && back.density() == m.density())
}

fn check_uniform_a2() -> Result<bool> {
    let s = GenSpec::Uniform.generate(1, 3, 1.0, &mut Stream::new(0))?;
    let a2 = a2_constant(&s, &s, &tiny_params())?;
    Ok(a2.value == 1.0 && a2.witness.is_some())
}

fn check_testing_order() -> Result<bool> {
    let (sigma, omega) = tiny_pair(5)?;
    let p = tiny_params();
    let t = testing_constant(&sigma, &omega, &p)?;
    let td = restricted_testing_constant(&sigma, &omega, &p)?;
    Ok(td.value <= t.value && t.value.is_finite())
}

fn check_norm_homogeneity() -> Result<bool> {
    let (sigma, omega) = tiny_pair(7)?;
    let p = tiny_params();
    let search = SearchBudget {
        restarts: 2,
        iterations: 4,
        seed: 99,
    };
    let base = estimate_norm_lower(&sigma, &omega, &p, &search)?;
    let scaled = estimate_norm_lower(&sigma.scale(4.0)?, &omega, &p, &search)?;
    Ok(scaled.value == 2.0 * base.value)
}

struct TinyWhitney {
    fam: maxlab::whitney::WhitneyFamily,
    esets: Vec<maxlab::whitney::ESet>,
    fsigma: CellMeasure,
    f: CellFunction,
    sigma: CellMeasure,
    g: GridShift,
    m: u32,
}

fn tiny_whitney() -> Result<TinyWhitney> {
    let sigma = GenSpec::RandomCells.generate(1, 3, 1.0, &mut Stream::new(11))?;
    let fm = GenSpec::RandomCells.generate(1, 3, 1.0, &mut Stream::new(12))?;
    let f = CellFunction::new(sigma.spec().clone(), fm.density().to_vec())?;
    let fsigma = f.weigh(&sigma)?;
    let g = GridShift::standard(1, -1, 3)?;
    let (mut fam, _) = build_family(&fsigma, &g, 5, 5, -1, 1, 3, 1)?;
    fam.attach_averages(&f, &sigma)?;
    let m = min_m(1, 5);
    let esets = build_esets(&fsigma, &fam, m, 2)?;
    Ok(TinyWhitney {
        fam,
        esets,
        fsigma,
        f,
        sigma,
        g,
        m,
    })
}

fn check_whitney_props() -> Result<bool> {
    Ok(check_whitney_properties(&tiny_whitney()?.fam).all_pass())
}

fn check_esets_disjoint() -> Result<bool> {
    Ok(esets_pairwise_disjoint(&tiny_whitney()?.esets))
}

fn check_max_principle() -> Result<bool> {
    let w = tiny_whitney()?;
    let rep = maximum_principle_check(&w.fsigma, &w.fam, &w.esets, w.m, 32)?;
    Ok(rep.pass && rep.precondition_met)
}

fn check_principal_clauses() -> Result<bool> {
    let w = tiny_whitney()?;
    let pf = build_principal(&w.fam, &w.f, &w.sigma, 4.0, -1)?;
    Ok(check_principal(&pf, &w.g).all_pass())
}

fn check_bad_fraction() -> Result<bool> {
    let (b, t) = enumerate_bad(2, 4)?;
    let (num, den) = bad_fraction(2, 4)?;
    Ok(b == 112 && t == 256 && b * den == t * num)
}

fn check_grid_count() -> Result<bool> {
    let grids = enumerate_grids(1, -1, 2, GridFamily::Omega)?;
    let mut units: Vec<Vec<i64>> = grids.iter().map(|g| g.t_units().to_vec()).collect();
    units.sort();
    units.dedup();
    Ok(grids.len() == 8 && units.len() == 8)
}

fn check_domination() -> Result<bool> {
    let mu = GenSpec::RandomCells.generate(1, 2, 1.0, &mut Stream::new(21))?;
    let points = vec![vec![0.3], vec![0.55], vec![0.8]];
    let rep = domination_check(
        &mu,
        &points,
        -1,
        2,
        GridFamily::Phi,
        60,
        77,
        ScaleWindow::new(-3, 1),
    )?;
    Ok(rep.all_pass)
}

fn check_mollify_uniform() -> Result<bool> {
    let s = GenSpec::Uniform.generate(1, 2, 1.0, &mut Stream::new(0))?;
    let p = TestingParams::standard(1, ScaleWindow::new(-2, 6));
    let rep = mollified_stability_report(&s, &s, &[1.0 / 16.0], &p)?;
    let row = &rep.rows[0];
    Ok(!row.window_emptied
        && (row.a2_ratio - 1.0).abs() <= 0.1
        && (row.t_ratio - 1.0).abs() <= 0.1
        && row.osc_max_c.is_finite())
}

fn check_par_seq_agree() -> Result<bool> {
    let (sigma, omega) = tiny_pair(5)?;
    let p = tiny_params();
    let par = a2_constant(&sigma, &omega, &p)?.value;
    exec::force_sequential(true);
    let seq = a2_constant(&sigma, &omega, &p)?.value;
    exec::force_sequential(false);
    Ok(par.to_bits() == seq.to_bits())
}

pub fn selftest(_fc: &FileConfig, _a: &SelftestArgs, stem: String) -> Result<bool> {
    let em = Emitter::new(stem);
    let checks: Vec<(&str, fn() -> Result<bool>)> = vec![
        ("measure-roundtrip", check_measure_roundtrip),
        ("uniform-a2", check_uniform_a2),
        ("testing-order", check_testing_order),
        ("norm-homogeneity", check_norm_homogeneity),
        ("whitney-properties", check_whitney_props),
        ("core-sets-disjoint", check_esets_disjoint),
        ("maximum-principle", check_max_principle),
        ("stopping-clauses", check_principal_clauses),
        ("bad-fraction", check_bad_fraction),
        ("grid-count", check_grid_count),
        ("dyadic-domination", check_domination),
        ("smoothing-stability", check_mollify_uniform),
        ("parallel-sequential-agree", check_par_seq_agree),
    ];
    let mut t = CsvTable::new(&["schema", "check", "pass"]);
    let mut failed: Vec<&str> = Vec::new();
    let mut results = Vec::new();
    for (name, run) in checks {
        let pass = run()?;
        println!("{} {name}", if pass { "ok  " } else { "FAIL" });
        if !pass {
            failed.push(name);
        }
        t.push_row(vec![
            SCHEMA_VERSION.to_string(),
            name.to_string(),
            fmt_bool(pass),
        ]);
        results.push(json!({ "check": name, "pass": pass }));
    }
    let config = json!({ "command": "selftest" });
    let rest = json!({ "results": results, "failed": failed, "pass": failed.is_empty() });
    em.write(&t, "selftest", &DefaultParams::for_dim(1), config, rest)?;
    println!(
        "{} checks  [{}]",
        results.len(),
        verdict(&failed),
    );
    Ok(failed.is_empty())
}
