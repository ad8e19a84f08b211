//! Report emission: every command writes `STEM.csv` and `STEM.report.json`.
//! The CSV is the regression artifact and must be byte-identical across
//! reruns of one config, so wall time goes only into the JSON report.

use maxlab::error::Result;
use maxlab::report::{structured, CsvTable, DefaultParams};
use serde::Serialize;
use serde_json::Value;
use std::time::Instant;

pub struct Emitter {
    stem: String,
    started: Instant,
}

#[derive(Serialize)]
struct Body {
    config: Value,
    elapsed_seconds: f64,
    #[serde(flatten)]
    rest: Value,
}

impl Emitter {
    pub fn new(stem: String) -> Self {
        Emitter {
            stem,
            started: Instant::now(),
        }
    }

    /// Write both artifacts and print where they went. `rest` carries the
    /// command-specific report fields; `config` echoes the resolved run
    /// configuration so the pair is self-describing.
    pub fn write(
        &self,
        table: &CsvTable,
        kind: &str,
        defaults: &DefaultParams,
        config: Value,
        rest: Value,
    ) -> Result<()> {
        let csv_path = format!("{}.csv", self.stem);
        let json_path = format!("{}.report.json", self.stem);
        let body = Body {
            config,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            rest,
        };
        std::fs::write(&csv_path, table.render())?;
        std::fs::write(&json_path, structured(kind, defaults, &body))?;
        println!("wrote {csv_path} and {json_path}");
        Ok(())
    }
}

/// `true`/`false` cell text; CSVs avoid locale-dependent forms.
pub fn fmt_bool(b: bool) -> String {
    if b { "true" } else { "false" }.into()
}
