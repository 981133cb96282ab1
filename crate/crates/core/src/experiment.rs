//! Batch experiments that write reproducible CSV tables.
//!
//! Every row carries the parameters and derived seed needed to recompute it
//! with the matching library call, and rows are emitted in sweep order
//! regardless of how the work was scheduled.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Result, WaxError};
use crate::lossy::{
    approx_mf, db_to_linear, panel_select_rate, rate_report, refine_rate, RateMethod, RateReport,
    DEFAULT_EVAL_BUDGET,
};
use crate::matrix::full_precision;
use crate::model::{sample_gaussian, splitmix64, t_opt, Dims, RngSpec};
use crate::solver::{wax_decompose, DEFAULT_MAX_ATTEMPTS};
use crate::sparse::{minimize_ones_restarts, valid_fraction, DEFAULT_SEARCH_BUDGET};
use crate::validity::{ones_lower_bound, RMax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    T,
    L,
    #[serde(rename = "ones_fraction")]
    OnesFraction,
}

/// Inclusive integer range over one parameter. `ones_fraction` is in percent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for Sweep {
    type Err = WaxError;

    /// Parses `axis:lo:hi`, e.g. `T:1:10` or `ones_fraction:5:40`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [axis, lo, hi] = parts[..] else {
            return Err(WaxError::InvalidInput(format!(
                "sweep '{s}' is not axis:lo:hi"
            )));
        };
        let axis = match axis {
            "T" | "t" => SweepAxis::T,
            "L" | "l" => SweepAxis::L,
            "ones_fraction" => SweepAxis::OnesFraction,
            other => {
                return Err(WaxError::InvalidInput(format!(
                    "unknown sweep axis '{other}' (expected T, L or ones_fraction)"
                )))
            }
        };
        let num = |v: &str| {
            v.parse::<usize>().map_err(|_| {
                WaxError::InvalidInput(format!("sweep bound '{v}' is not a non-negative integer"))
            })
        };
        Ok(Sweep {
            axis,
            lo: num(lo)?,
            hi: num(hi)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dims: Dims,
    pub seed: u64,
    pub trials: usize,
    pub snr_db: f64,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    pub out_path: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validate,
    SparseSearch,
    RateCurve,
    BoundTable,
}

impl ExperimentKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Validate => &[
                "M",
                "K",
                "L",
                "T",
                "ones_percent",
                "trials",
                "valid_fraction",
                "std_err",
                "seed",
                "error",
            ],
            ExperimentKind::SparseSearch => &[
                "M",
                "K",
                "L",
                "T",
                "ones",
                "sum_modules",
                "valid",
                "seed",
                "iterations",
                "error",
            ],
            ExperimentKind::RateCurve => &[
                "M",
                "K",
                "L",
                "T",
                "snr_db",
                "seed",
                "method",
                "i_lossless",
                "i_achieved",
                "relative",
                "error",
            ],
            ExperimentKind::BoundTable => &["M", "K", "L", "T", "r_max", "Q", "min_ones", "error"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::SparseSearch => "sparse-search",
            ExperimentKind::RateCurve => "rate-curve",
            ExperimentKind::BoundTable => "bound-table",
        })
    }
}

/// Seed recorded in a CSV row, derived from the configured seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(base ^ splitmix64(a ^ splitmix64(b)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Point {
    dims: Dims,
    ones_percent: Option<usize>,
    /// Sweep coordinate, used for seeding.
    coord: u64,
}

fn points(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
) -> Result<Vec<std::result::Result<Point, (Dims, String)>>> {
    let base = cfg.dims;
    let Some(sweep) = cfg.sweep else {
        return Ok(vec![Ok(Point {
            dims: base,
            ones_percent: None,
            coord: 0,
        })]);
    };
    if sweep.lo > sweep.hi {
        return Err(WaxError::InvalidInput(format!(
            "empty sweep range {}..={}",
            sweep.lo, sweep.hi
        )));
    }
    let supported = match sweep.axis {
        SweepAxis::OnesFraction => kind == ExperimentKind::Validate,
        SweepAxis::T | SweepAxis::L => true,
    };
    if !supported {
        return Err(WaxError::InvalidInput(format!(
            "{kind} experiments cannot sweep ones_fraction"
        )));
    }
    if sweep.lo == 0 || (sweep.axis == SweepAxis::OnesFraction && sweep.hi > 100) {
        return Err(WaxError::InvalidInput(format!(
            "sweep range {}..={} is outside the parameter's domain",
            sweep.lo, sweep.hi
        )));
    }
    Ok((sweep.lo..=sweep.hi)
        .map(|v| {
            let coord = v as u64;
            match sweep.axis {
                SweepAxis::T => Ok(Point {
                    dims: base.with_t(v),
                    ones_percent: None,
                    coord,
                }),
                SweepAxis::OnesFraction => Ok(Point {
                    dims: base,
                    ones_percent: Some(v),
                    coord,
                }),
                SweepAxis::L => {
                    // Rate curves keep T; the combiner tables are defined at T_opt.
                    let t = if kind == ExperimentKind::RateCurve {
                        base.t
                    } else {
                        t_opt(base.m, base.k, v)
                    };
                    Dims::square(base.m, base.k, v, t)
                        .map(|dims| Point {
                            dims,
                            ones_percent: None,
                            coord,
                        })
                        .map_err(|e| {
                            (
                                Dims {
                                    l: v,
                                    n: v,
                                    t,
                                    ..base
                                },
                                e.to_string(),
                            )
                        })
                }
            }
        })
        .collect())
}

type Row = Vec<String>;

fn dims_cells(d: &Dims) -> Row {
    vec![
        d.m.to_string(),
        d.k.to_string(),
        d.l.to_string(),
        d.t.to_string(),
    ]
}

fn with_error(mut row: Row, width: usize, err: &str) -> Row {
    row.resize(width - 1, String::new());
    row.push(err.to_string());
    row
}

/// The per-instance computation behind one rate-curve seed: `H` from stream 0
/// and `A` from stream 1 of `seed`.
pub fn rate_point(dims: &Dims, seed: u64, snr_db: f64) -> Vec<(RateMethod, Result<RateReport>)> {
    let snr = db_to_linear(snr_db);
    let h = sample_gaussian(RngSpec::new(seed, 0), dims.m, dims.k);
    let a = sample_gaussian(RngSpec::new(seed, 1), dims.m, dims.t);
    let (h, a) = match (h, a) {
        (Ok(h), Ok(a)) => (h, a),
        (Err(e), _) | (_, Err(e)) => {
            let msg = e.to_string();
            return vec![(RateMethod::MinNorm, Err(WaxError::InvalidInput(msg)))];
        }
    };
    let mut out = Vec::new();
    if dims.admits_wax() {
        let wax = wax_decompose(&h, &a, dims, RngSpec::new(seed, 2), DEFAULT_MAX_ATTEMPTS)
            .and_then(|f| rate_report(&h, &a, &f.w, snr, RateMethod::Wax));
        out.push((RateMethod::Wax, wax));
    }
    match approx_mf(&h, &a, dims, snr) {
        Ok(mf) => {
            out.push((RateMethod::MinNorm, Ok(mf.report)));
            let refined = refine_rate(
                &h,
                &a,
                dims,
                snr,
                &mf.w,
                DEFAULT_EVAL_BUDGET,
                RngSpec::new(seed, 3),
            )
            .map(|r| r.report);
            out.push((RateMethod::Refined, refined));
        }
        Err(e) => {
            let msg = e.to_string();
            out.push((RateMethod::MinNorm, Err(e)));
            out.push((
                RateMethod::Refined,
                Err(WaxError::Degenerate(format!("no starting point: {msg}"))),
            ));
        }
    }
    if dims.t >= dims.k {
        out.push((
            RateMethod::PanelSelect,
            panel_select_rate(&h, &a, dims, snr, RngSpec::new(seed, 4)).map(|(_, r)| r),
        ));
    }
    out
}

fn rows_for(kind: ExperimentKind, cfg: &ExperimentConfig, point: &Point) -> Vec<Row> {
    let width = kind.header().len();
    let d = &point.dims;
    match kind {
        ExperimentKind::BoundTable => {
            let row = dims_cells(d);
            match ones_lower_bound(d.m, d.k, d.l, d.t) {
                Ok(b) => {
                    let mut row = row;
                    row.push(match b.r_max {
                        RMax::Finite(v) => v.to_string(),
                        RMax::Unbounded => "unbounded".into(),
                    });
                    row.push(b.q.to_string());
                    row.push(b.min_ones.to_string());
                    row.push(String::new());
                    vec![row]
                }
                Err(e) => vec![with_error(row, width, &e.to_string())],
            }
        }
        ExperimentKind::SparseSearch => {
            let seed = derive_seed(cfg.seed, point.coord, 0);
            let mut row = dims_cells(d);
            match minimize_ones_restarts(
                d,
                RngSpec::new(seed, 0),
                DEFAULT_SEARCH_BUDGET,
                cfg.trials,
            ) {
                Ok(r) => {
                    row.extend([
                        r.ones.to_string(),
                        r.sum_modules.to_string(),
                        r.valid.to_string(),
                        seed.to_string(),
                        r.iterations.to_string(),
                        String::new(),
                    ]);
                    vec![row]
                }
                Err(e) => {
                    row.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        seed.to_string(),
                    ]);
                    vec![with_error(row, width, &e.to_string())]
                }
            }
        }
        ExperimentKind::Validate => {
            let seed = derive_seed(cfg.seed, point.coord, 0);
            let mut row = dims_cells(d);
            row.push(point.ones_percent.map_or(String::new(), |p| p.to_string()));
            row.push(cfg.trials.to_string());
            match validate_point(d, point.ones_percent, cfg.trials, seed) {
                Ok((f, se)) => {
                    row.extend([
                        full_precision(f),
                        full_precision(se),
                        seed.to_string(),
                        String::new(),
                    ]);
                    vec![row]
                }
                Err(e) => {
                    row.extend([String::new(), String::new(), seed.to_string()]);
                    vec![with_error(row, width, &e.to_string())]
                }
            }
        }
        ExperimentKind::RateCurve => (0..cfg.trials as u64)
            .into_par_iter()
            .flat_map_iter(|trial| {
                // Seeds depend on the trial only, so every sweep point sees the same channel.
                let seed = derive_seed(cfg.seed, trial, 0);
                rate_point(d, seed, cfg.snr_db)
                    .into_iter()
                    .map(move |(method, r)| {
                        let mut row = dims_cells(d);
                        row.extend([
                            full_precision(cfg.snr_db),
                            seed.to_string(),
                            method.as_str().to_string(),
                        ]);
                        match r {
                            Ok(rep) => {
                                row.extend([
                                    full_precision(rep.i_lossless),
                                    full_precision(rep.i_achieved),
                                    full_precision(rep.relative),
                                    String::new(),
                                ]);
                                row
                            }
                            Err(e) => with_error(row, width, &e.to_string()),
                        }
                    })
            })
            .collect(),
    }
}

/// Valid fraction at one point: random sparse combiners when a ones
/// percentage is given, seeded Gaussian combiners otherwise.
pub fn validate_point(
    dims: &Dims,
    ones_percent: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let rng = RngSpec::new(seed, 0);
    match ones_percent {
        Some(p) => {
            valid_fraction(dims, p as f64 / 100.0, trials, rng).map(|e| (e.fraction, e.std_err))
        }
        None => {
            if trials == 0 {
                return Err(WaxError::InvalidInput("trials must be at least 1".into()));
            }
            let outcomes: Vec<bool> = (0..trials as u64)
                .into_par_iter()
                .map(|i| {
                    let a = sample_gaussian(rng.child(2 * i), dims.m, dims.t)?;
                    Ok(
                        crate::validity::validate_combiner(&a, dims, rng.child(2 * i + 1), 1)?
                            .valid,
                    )
                })
                .collect::<Result<_>>()?;
            let n = trials as f64;
            let f = outcomes.iter().filter(|&&v| v).count() as f64 / n;
            Ok((f, (f * (1.0 - f) / n).sqrt()))
        }
    }
}

/// CSV text for an experiment plus `(rows, failed rows)`.
pub fn render_csv(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<(String, usize, usize)> {
    if cfg.trials == 0 {
        return Err(WaxError::InvalidInput("trials must be at least 1".into()));
    }
    if !cfg.snr_db.is_finite() {
        return Err(WaxError::InvalidInput("snr_db must be finite".into()));
    }
    let width = kind.header().len();
    let pts = points(kind, cfg)?;
    let rows: Vec<Row> = pts
        .par_iter()
        .flat_map_iter(|p| match p {
            Ok(point) => rows_for(kind, cfg, point),
            Err((dims, msg)) => vec![with_error(dims_cells(dims), width, msg)],
        })
        .collect();
    let failed = rows.iter().filter(|r| !r[width - 1].is_empty()).count();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(kind.header()).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| WaxError::Io(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv output is UTF-8");
    Ok((text, rows.len(), failed))
}

fn csv_err(e: csv::Error) -> WaxError {
    WaxError::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentOutcome {
    pub csv_path: PathBuf,
    pub meta_path: PathBuf,
    pub rows: usize,
    pub failed_rows: usize,
}

impl ExperimentOutcome {
    pub fn all_failed(&self) -> bool {
        self.rows > 0 && self.failed_rows == self.rows
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    kind: ExperimentKind,
    config: &'a ExperimentConfig,
    version: &'static str,
    created_unix: u64,
    rows: usize,
    failed_rows: usize,
}

/// `<out>.meta.json` next to the CSV.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| WaxError::Io(e.error))?;
    Ok(())
}

/// Runs the experiment and writes the CSV and its metadata atomically.
///
/// Nothing is written when the configuration itself is rejected.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (csv, rows, failed_rows) = render_csv(kind, cfg)?;
    write_atomic(&cfg.out_path, csv.as_bytes())?;
    let meta = Meta {
        kind,
        config: cfg,
        version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        rows,
        failed_rows,
    };
    let meta_file = meta_path(&cfg.out_path);
    write_atomic(&meta_file, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(ExperimentOutcome {
        csv_path: cfg.out_path.clone(),
        meta_path: meta_file,
        rows,
        failed_rows,
    })
}
