//! Run configuration: an optional flat TOML file plus command-line flags,
//! flags winning. Every command resolves its effective settings through
//! [`pick`], echoes them into its structured report, and derives all
//! randomness from the one seed, so a report is a pure function of the
//! resolved configuration.

use maxlab::error::{Error, Result};
use maxlab::gen;
use maxlab::measure::{read_measure_text, CellMeasure, LatticeSpec};
use maxlab::rng::Stream;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Flat key-value config file. Keys match the long flag names; unknown keys
/// are rejected so a typo cannot silently fall back to a default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
    pub sequential: Option<bool>,
    pub sigma: Option<String>,
    pub omega: Option<String>,
    pub f: Option<String>,
    pub res: Option<i32>,
    pub mass: Option<f64>,
    pub window_lo: Option<i32>,
    pub window_hi: Option<i32>,
    pub gamma: Option<f64>,
    pub d: Option<f64>,
    pub refine: Option<u32>,
    pub quad: Option<u32>,
    pub restarts: Option<usize>,
    pub iterations: Option<usize>,
    pub widen: Option<i32>,
    pub coarse: Option<i32>,
    pub fine: Option<i32>,
    pub r_w: Option<i64>,
    pub n_overlap: Option<i64>,
    pub k0: Option<i32>,
    pub step: Option<u32>,
    pub levels: Option<usize>,
    pub m: Option<u32>,
    pub m0: Option<u32>,
    pub eta: Option<f64>,
    pub r: Option<u32>,
    pub beta: Option<f64>,
    pub samples: Option<usize>,
    pub points: Option<usize>,
    pub count: Option<usize>,
    pub eps: Option<Vec<f64>>,
    pub family: Option<String>,
    pub n: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let path = match path {
            Some(p) => p,
            None => return Ok(FileConfig::default()),
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })
    }
}

/// Flag beats file beats default.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// A measure recipe in compact text form:
/// `uniform`, `random-cells`, `cantor:DEPTH`, `power:EXPONENT`,
/// `point-pair:GAP`, or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GenSpec {
    Uniform,
    RandomCells,
    Cantor { depth: u32 },
    Power { exponent: f64 },
    PointPair { gap: i64 },
    File { path: String },
}

impl GenSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let need = |what: &str| -> Result<&str> {
            arg.ok_or_else(|| Error::guard(format!("{name} needs {what}, e.g. {name}:4")))
        };
        let none = || -> Result<()> {
            match arg {
                Some(_) => Err(Error::guard(format!("{name} takes no parameter"))),
                None => Ok(()),
            }
        };
        match name {
            "uniform" => {
                none()?;
                Ok(GenSpec::Uniform)
            }
            "random-cells" => {
                none()?;
                Ok(GenSpec::RandomCells)
            }
            "cantor" => {
                let a = need("a depth")?;
                let depth = a
                    .parse()
                    .map_err(|_| Error::guard(format!("bad cantor depth {a:?}")))?;
                Ok(GenSpec::Cantor { depth })
            }
            "power" => {
                let a = need("an exponent")?;
                let exponent = a
                    .parse()
                    .map_err(|_| Error::guard(format!("bad power exponent {a:?}")))?;
                Ok(GenSpec::Power { exponent })
            }
            "point-pair" => {
                let a = need("a cell gap")?;
                let gap = a
                    .parse()
                    .map_err(|_| Error::guard(format!("bad point-pair gap {a:?}")))?;
                Ok(GenSpec::PointPair { gap })
            }
            "file" => Ok(GenSpec::File {
                path: need("a path")?.to_string(),
            }),
            other => Err(Error::guard(format!(
                "unknown family {other:?}; families: uniform, random-cells, \
                 cantor:D, power:A, point-pair:G, file:PATH"
            ))),
        }
    }

    /// Short text form for report rows.
    pub fn label(&self) -> String {
        match self {
            GenSpec::Uniform => "uniform".into(),
            GenSpec::RandomCells => "random-cells".into(),
            GenSpec::Cantor { depth } => format!("cantor:{depth}"),
            GenSpec::Power { exponent } => format!("power:{exponent}"),
            GenSpec::PointPair { gap } => format!("point-pair:{gap}"),
            GenSpec::File { path } => format!("file:{path}"),
        }
    }

    /// Materialize on the standard domain: `[0,1]^dim` at resolution `res`,
    /// except `power` which is centered (`[-1,1]^dim`) so the singularity
    /// sits inside, and `cantor` which fixes its own lattice. Total mass is
    /// normalized to `mass`. Only `random-cells` consumes the stream.
    pub fn generate(
        &self,
        dim: usize,
        res: i32,
        mass: f64,
        stream: &mut Stream,
    ) -> Result<CellMeasure> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::guard("target mass must be positive"));
        }
        let cells = 1usize << res;
        let unit = || LatticeSpec::new(dim, res, vec![0; dim], vec![cells; dim]);
        let raw = match self {
            GenSpec::Uniform => gen::uniform(&unit()?, 1.0)?,
            GenSpec::RandomCells => gen::random_cells(&unit()?, stream)?,
            GenSpec::Cantor { depth } => {
                if dim != 1 {
                    return Err(Error::guard("cantor measures are one-dimensional"));
                }
                gen::cantor_middle_half(*depth)?
            }
            GenSpec::Power { exponent } => {
                let spec =
                    LatticeSpec::new(dim, res, vec![-(cells as i64); dim], vec![2 * cells; dim])?;
                gen::power_law(&spec, *exponent)?
            }
            GenSpec::PointPair { gap } => {
                let g = *gap;
                if g < 1 || g >= cells as i64 {
                    return Err(Error::guard(format!(
                        "point-pair gap must lie in [1, {})",
                        cells
                    )));
                }
                let a = vec![0i64; dim];
                let b = vec![g; dim];
                gen::point_pair(&unit()?, &a, &b)?
            }
            GenSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let m = read_measure_text(&text)?;
                if m.spec().dim != dim {
                    return Err(Error::mismatch(format!(
                        "{path}: measure is {}-dimensional, run wants {dim}",
                        m.spec().dim
                    )));
                }
                m
            }
        };
        let total = raw.total_mass();
        if total <= 0.0 {
            return Err(Error::guard("generated measure has no mass"));
        }
        raw.scale(mass / total)
    }
}

/// The measure pair plus the integrand most commands share.
#[derive(Debug, Clone, Serialize)]
pub struct PairSettings {
    pub dim: usize,
    pub res: i32,
    pub mass: f64,
    pub seed: u64,
    pub sigma: GenSpec,
    pub omega: GenSpec,
}

impl PairSettings {
    /// Substreams 0 and 1 of the run seed; instance `i` of a sweep shifts
    /// the substream index by `2 i`.
    pub fn build(&self, instance: u64) -> Result<(CellMeasure, CellMeasure)> {
        let mut s0 = Stream::substream(self.seed, 2 * instance);
        let mut s1 = Stream::substream(self.seed, 2 * instance + 1);
        let sigma = self.sigma.generate(self.dim, self.res, self.mass, &mut s0)?;
        let omega = self.omega.generate(self.dim, self.res, self.mass, &mut s1)?;
        Ok((sigma, omega))
    }
}
