//! Stable report emission: flat CSV tables and JSON-shaped structured
//! reports.
//!
//! Both formats are deterministic byte for byte: floats print in Rust's
//! shortest round-trip form (always `.` as the decimal separator), CSV
//! cells join with `,` and rows with LF, and structured reports serialize
//! with declaration-order fields. Timings never enter a CSV; they would
//! break the rerun-identical contract, so they live in the structured
//! report only.

use crate::constants::ConstantsReport;
use crate::geom::{pow2, Rect};
use crate::whitney::min_m;
use serde::{Deserialize, Serialize};
use serde_json::to_string_pretty;

/// Bumped when column sets or field layouts change incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// The default knob values, printed into every report for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultParams {
    pub dim: usize,
    pub gamma: f64,
    pub d: f64,
    pub eta: f64,
    pub r_w: i64,
    pub m: u32,
    pub m0: u32,
    pub r: u32,
    pub beta: f64,
}

impl DefaultParams {
    pub fn for_dim(dim: usize) -> Self {
        let r_w = 5;
        DefaultParams {
            dim,
            gamma: 3.0,
            d: pow2(2 * dim as i32 + 1) + 1.0,
            eta: 4.0,
            r_w,
            m: min_m(dim, r_w),
            m0: 2,
            r: 6,
            beta: 1.0 / 64.0,
        }
    }
}

/// Shortest round-trip decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// One CSV cell for a rect: corner coordinates then the first side,
/// space separated (cubes are the only rects reported).
pub fn fmt_rect(r: &Rect) -> String {
    let mut s = String::new();
    for (i, lo) in r.lo.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&fmt_f64(*lo));
    }
    s.push_str(" s ");
    s.push_str(&fmt_f64(r.side(0)));
    s
}

fn fmt_opt_rect(r: &Option<Rect>) -> String {
    match r {
        Some(r) => fmt_rect(r),
        None => "none".to_string(),
    }
}

/// Quote a cell if it holds a separator, quote, or line break.
fn csv_escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// In-memory CSV with a fixed column set.
#[derive(Debug, Clone)]
pub struct CsvTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        assert_eq!(
            cells.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(cells);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Header plus rows, LF endings, trailing newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let emit = |line: &[String], out: &mut String| {
            for (i, cell) in line.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&csv_escape(cell));
            }
            out.push('\n');
        };
        emit(&self.columns, &mut out);
        for row in &self.rows {
            emit(row, &mut out);
        }
        out
    }
}

/// Envelope for the JSON-shaped structured report.
#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    defaults: &'a DefaultParams,
    body: &'a T,
}

/// Pretty JSON with a schema header and the default-knob provenance block.
pub fn structured<T: Serialize>(kind: &str, defaults: &DefaultParams, body: &T) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        defaults,
        body,
    };
    let mut s = to_string_pretty(&env).expect("report types serialize infallibly");
    s.push('\n');
    s
}

/// Column set of a flattened [`ConstantsReport`]. Stable within a schema
/// version; new columns append.
pub fn constants_columns() -> Vec<&'static str> {
    vec![
        "schema",
        "gamma",
        "d",
        "window_lo",
        "window_hi",
        "position_refine",
        "quad_sub",
        "a2",
        "a2_witness",
        "a2_stable",
        "t_gamma",
        "t_witness",
        "t_quad_spread",
        "t_quad_unstable",
        "t_stable",
        "t_d_gamma",
        "t_d_witness",
        "t_d_doubling",
        "t_d_empty_filter",
        "t_d_quad_spread",
        "t_d_quad_unstable",
        "t_d_stable",
        "norm_lb",
        "norm_converged",
        "norm_assignments_stable",
        "norm_clamp_noop",
        "ratio",
    ]
}

/// Flatten one report into cells matching [`constants_columns`].
pub fn constants_cells(rep: &ConstantsReport) -> Vec<String> {
    vec![
        SCHEMA_VERSION.to_string(),
        fmt_f64(rep.params.gamma),
        fmt_f64(rep.params.d),
        rep.params.window.j_min.to_string(),
        rep.params.window.j_max.to_string(),
        rep.params.position_refine.to_string(),
        rep.params.quad_sub.to_string(),
        fmt_f64(rep.a2.value),
        fmt_opt_rect(&rep.a2.witness),
        rep.a2_stable.to_string(),
        fmt_f64(rep.t_gamma.value),
        fmt_opt_rect(&rep.t_gamma.witness),
        fmt_f64(rep.t_gamma.quad_spread),
        rep.t_gamma.quad_unstable.to_string(),
        rep.t_stable.to_string(),
        fmt_f64(rep.t_d_gamma.value),
        fmt_opt_rect(&rep.t_d_gamma.witness),
        rep.t_d_gamma.n_doubling.to_string(),
        rep.t_d_gamma.empty_filter.to_string(),
        fmt_f64(rep.t_d_gamma.quad_spread),
        rep.t_d_gamma.quad_unstable.to_string(),
        rep.t_d_stable.to_string(),
        fmt_f64(rep.norm_lb.value),
        rep.norm_lb.converged.to_string(),
        rep.norm_lb.assignments_stable.to_string(),
        rep.norm_lb.clamp_was_noop.to_string(),
        fmt_f64(rep.ratio),
    ]
}
