//! Drivers behind the command line: Monte-Carlo scans over the `(d, t)`
//! plane, per-instance identity checks and transfer-matrix spectroscopy.
//!
//! Samples are generated from `seed::sample_rng(master_seed, index)` and
//! reduced in index order, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use crate::circuits::{build_floquet, matrix_unitarity_defect, FloquetOperator, TwoQubitGate};
use crate::config::{Format, Geometry, Quantity, RunConfig};
use crate::eigencorr::{diagonalize, f_xy_quartet};
use crate::geometry::{far_side_clear, local_in_window, local_sites, HalfInt, MacroGeometry, SubsystemSpec};
use crate::opent::DoubledState;
use crate::replica::{self, Kind, TransferMatrix};
use crate::scrambling::{otoc_avg, single_site_probe, two_point_avg, two_point_lightcone, ProbeRow, MAX_OPERATOR_L};
use crate::seed::{sample_rng, sample_seed};
use crate::{Error, Result};

/// Relative tolerance of cells that hold exactly for every sample.
pub const EXACT_TOL: f64 = 1e-10;
/// Looser exact tolerance for cells that go through a full-ring purity.
pub const PURITY_TOL: f64 = 1e-8;
/// Statistical cells pass within this many standard errors.
pub const SIGMAS: f64 = 3.0;
/// Largest ring for `verify`, which needs dense eigendecompositions.
pub const VERIFY_MAX_L: usize = 8;
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    Statistical {
        sigmas: f64,
    },
    /// Every sample within `rel_tol` of the prediction.
    Exact {
        rel_tol: f64,
    },
    Unasserted {
        reason: String,
    },
    Skipped {
        reason: String,
    },
}

impl Check {
    fn tolerance(&self) -> Option<f64> {
        match self {
            Check::Statistical { sigmas } => Some(*sigmas),
            Check::Exact { rel_tol } => Some(*rel_tol),
            _ => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Check::Statistical { .. } => "sigma",
            Check::Exact { .. } => "exact",
            Check::Unasserted { .. } => "unasserted",
            Check::Skipped { .. } => "skipped",
        }
    }

    fn reason(&self) -> &str {
        match self {
            Check::Unasserted { reason } | Check::Skipped { reason } => reason,
            _ => "",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub d: HalfInt,
    pub t: usize,
    pub n: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub prediction: Option<f64>,
    pub sigma_discrepancy: Option<f64>,
    /// Largest per-sample relative deviation from the prediction.
    pub max_deviation: Option<f64>,
    pub check: Check,
    pub pass: Option<bool>,
}

impl Cell {
    pub fn asserted(&self) -> bool {
        self.pass.is_some()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub program: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub timestamp: u64,
    pub wall_time_s: f64,
}

impl Provenance {
    fn new(command: &'static str, config: &RunConfig, warnings: Vec<String>, start: Instant) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.clone(),
            warnings,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    }

    /// `#` comment header for CSV files. Only the last line varies between
    /// identical runs.
    fn csv_header(&self) -> String {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let mut out = format!("# {} {} {}\n# config: {config}\n", self.program, self.version, self.command);
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out.push_str(&format!("# timestamp: {} wall_time_s: {:.3}\n", self.timestamp, self.wall_time_s));
        out
    }
}

fn num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.16e}"),
        Some(v) => v.to_string(),
        None => String::new(),
    }
}

fn csv_body(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Anything the command line writes out.
pub trait Report: Serialize {
    fn to_csv(&self) -> String;

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Whether every asserted item passed.
    fn passed(&self) -> bool;
}

// ---- scan ----

#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    pub provenance: Provenance,
    pub quantity: Quantity,
    pub geometry: Geometry,
    pub cells: Vec<Cell>,
}

impl ScanResult {
    pub fn cell(&self, d: HalfInt, t: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.d == d && c.t == t)
    }

    pub fn failures(&self) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.pass == Some(false)).collect()
    }
}

impl Report for ScanResult {
    fn to_csv(&self) -> String {
        let header = [
            "d",
            "t",
            "n",
            "mean",
            "stderr",
            "prediction",
            "sigma_discrepancy",
            "max_deviation",
            "check",
            "tolerance",
            "status",
            "note",
        ];
        let rows = self.cells.iter().map(|c| {
            let status = match c.pass {
                Some(true) => "pass",
                Some(false) => "fail",
                None => c.check.label(),
            };
            vec![
                c.d.to_string(),
                c.t.to_string(),
                c.n.to_string(),
                num(c.mean),
                num(c.stderr),
                num(c.prediction),
                num(c.sigma_discrepancy),
                num(c.max_deviation),
                c.check.label().to_string(),
                num(c.check.tolerance()),
                status.to_string(),
                c.check.reason().to_string(),
            ]
        });
        self.provenance.csv_header() + &csv_body(&header, rows)
    }

    fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

#[derive(Clone, Debug)]
enum Placement {
    Local { x: usize, y: usize },
    Block(MacroGeometry),
}

#[derive(Clone, Debug)]
struct Plan {
    d: HalfInt,
    t: usize,
    prediction: Option<f64>,
    check: Check,
    placement: Option<Placement>,
}

fn skipped(d: HalfInt, t: usize, reason: String) -> Plan {
    Plan { d, t, prediction: None, check: Check::Skipped { reason }, placement: None }
}

/// Output site of the probe: the parity that puts X on an even site.
fn probe_site(d: HalfInt) -> usize {
    if d.is_integer() {
        0
    } else {
        1
    }
}

fn local_placement(l: usize, t: usize, d: HalfInt) -> Placement {
    let y = probe_site(d);
    let x = (y as i64 - 2 * t as i64 - d.twice() as i64).rem_euclid(l as i64) as usize;
    debug_assert_eq!(local_sites(l, t, d, x), y);
    Placement::Local { x, y }
}

fn dense_bytes(l: usize) -> usize {
    16usize << (2 * l)
}

struct Planner<'a> {
    cfg: &'a RunConfig,
    t2: BTreeMap<HalfInt, std::result::Result<TransferMatrix, String>>,
}

impl Planner<'_> {
    fn t2(&mut self, d: HalfInt) -> std::result::Result<&TransferMatrix, String> {
        let j = self.cfg.j;
        let steps = self.cfg.max_iterations;
        self.t2
            .entry(d)
            .or_insert_with(|| replica::build_t2(j, d).map(|m| m.with_krylov_steps(steps)).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn dense_budget(&self) -> std::result::Result<(), String> {
        let l = self.cfg.l;
        if l > MAX_OPERATOR_L {
            return Err(format!("dense operators need L <= {MAX_OPERATOR_L}"));
        }
        if dense_bytes(l) > self.cfg.max_memory_mb << 20 {
            return Err(format!("a dense 4^{l} object exceeds max_memory_mb = {}", self.cfg.max_memory_mb));
        }
        Ok(())
    }

    fn plan(&mut self, d: HalfInt, t: usize) -> Plan {
        let cfg = self.cfg;
        let (l, j) = (cfg.l, cfg.j);
        match cfg.geometry {
            Geometry::LocalEven | Geometry::LocalOddEven => {
                let placement = Some(local_placement(l, t, d));
                let outside = || Check::Unasserted { reason: "outside the validity window".into() };
                let wrapped =
                    || Check::Unasserted { reason: "the light cones meet round the far side of the ring".into() };
                match cfg.quantity {
                    Quantity::Fxy | Quantity::TwoPoint => {
                        let scale = if cfg.quantity == Quantity::Fxy { 1.0 } else { 4f64.powi(-(l as i32) - 1) };
                        let (prediction, check) = if !local_in_window(l, t, d) {
                            (None, outside())
                        } else if d.twice() == 0 {
                            (Some(replica::f_local(l, t, d, j) * scale), Check::Statistical { sigmas: SIGMAS })
                        } else if d.twice() < 0 && !far_side_clear(l, t, d) {
                            (Some(replica::f_local(l, t, d, j) * scale), wrapped())
                        } else {
                            (Some(replica::f_local(l, t, d, j) * scale), Check::Exact { rel_tol: EXACT_TOL })
                        };
                        Plan { d, t, prediction, check, placement }
                    }
                    Quantity::Fxybar | Quantity::Otoc => {
                        if let Err(reason) = self.dense_budget() {
                            return skipped(d, t, reason);
                        }
                        let scale = if cfg.quantity == Quantity::Fxybar { 1.0 } else { 2f64.powi(-(l as i32) - 2) };
                        let (prediction, check) = if !local_in_window(l, t, d) {
                            (None, outside())
                        } else if d.twice() > 0 && !far_side_clear(l, t, d) {
                            (Some(4.0 * 2f64.powi(l as i32) * scale), wrapped())
                        } else if d.twice() > 0 {
                            (Some(4.0 * 2f64.powi(l as i32) * scale), Check::Exact { rel_tol: EXACT_TOL })
                        } else {
                            match self.t2(d).and_then(|m| m.predict(l, t).map_err(|e| e.to_string())) {
                                Ok(v) => (Some(v * scale), Check::Statistical { sigmas: SIGMAS }),
                                Err(reason) => (None, Check::Unasserted { reason }),
                            }
                        };
                        Plan { d, t, prediction, check, placement }
                    }
                    q => skipped(d, t, format!("quantity {q} is not a local quantity")),
                }
            }
            Geometry::Macro => {
                let Some(di) = d.as_int() else {
                    return skipped(d, t, "macroscopic cells need integer d".into());
                };
                match cfg.quantity {
                    Quantity::Opmi => {
                        let g = match MacroGeometry::fit(l, t, di, cfg.max_block) {
                            Ok(g) => g,
                            Err(e) => return skipped(d, t, e.to_string()),
                        };
                        let (prediction, check) = if di > 0 {
                            (Some(1.0), Check::Exact { rel_tol: EXACT_TOL })
                        } else if di == 0 {
                            (Some(replica::opmi_macro(t, 0, j)), Check::Statistical { sigmas: SIGMAS })
                        } else {
                            let reason = "leading-order prediction; blocks that fit on the ring are too small \
                                          for the asymptotic regime"
                                .to_string();
                            let p = (2 * t as i32 >= -di).then(|| replica::opmi_macro(t, di, j));
                            (p, Check::Unasserted { reason })
                        };
                        Plan { d, t, prediction, check, placement: Some(Placement::Block(g)) }
                    }
                    Quantity::Fxybar => {
                        if let Err(reason) = self.dense_budget() {
                            return skipped(d, t, reason);
                        }
                        match MacroGeometry::fit_for_complement(l, t, di) {
                            Ok(g) => Plan {
                                d,
                                t,
                                prediction: Some(replica::exp_delta_opmi_macro(di)),
                                check: Check::Exact { rel_tol: PURITY_TOL },
                                placement: Some(Placement::Block(g)),
                            },
                            Err(e) => skipped(d, t, e.to_string()),
                        }
                    }
                    q => skipped(d, t, format!("quantity {q} is not defined for the macro geometry")),
                }
            }
        }
    }
}

/// Per-sample values of every planned cell.
fn sample_values(cfg: &RunConfig, plans: &[Plan], index: usize) -> Vec<Option<Result<f64>>> {
    let mut out: Vec<Option<Result<f64>>> = (0..plans.len()).map(|_| None).collect();
    let mut rng = sample_rng(cfg.master_seed, index as u64);
    let u = match build_floquet(cfg.j, cfg.l, &mut rng) {
        Ok(u) => u,
        Err(e) => {
            let msg = e.to_string();
            for (k, p) in plans.iter().enumerate() {
                if p.placement.is_some() {
                    out[k] = Some(Err(Error::Numerical(msg.clone())));
                }
            }
            return out;
        }
    };
    let l = cfg.l;
    let t_top = plans.iter().filter(|p| p.placement.is_some()).map(|p| p.t).max().unwrap_or(0);
    let mut probes: BTreeMap<usize, Result<Vec<ProbeRow>>> = BTreeMap::new();
    let mut state: Option<Result<DoubledState>> = None;
    // Ascending t lets the doubled state advance in place.
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by_key(|&k| plans[k].t);
    for k in order {
        let p = &plans[k];
        let Some(placement) = &p.placement else { continue };
        let value = match (cfg.quantity, placement) {
            (Quantity::Fxy | Quantity::TwoPoint, Placement::Local { x, y }) => {
                let c = two_point_lightcone(&u, p.t, &SubsystemSpec::input([*x]), &SubsystemSpec::output([*y]));
                let scale = if cfg.quantity == Quantity::Fxy { 4f64.powi(l as i32 + 1) } else { 1.0 };
                c.map(|c| c * scale)
            }
            (Quantity::Fxybar | Quantity::Otoc, Placement::Local { x, y }) => {
                let rows = probes.entry(*y).or_insert_with(|| single_site_probe(&u, *y, t_top));
                match rows {
                    Ok(rows) => {
                        let dv = rows[p.t].d[*x];
                        Ok(if cfg.quantity == Quantity::Fxybar { 2f64.powi(l as i32 + 2) * dv } else { dv })
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            (Quantity::Opmi, Placement::Block(g)) => {
                two_point_lightcone(&u, p.t, &g.x, &g.y).map(|c| c * 4f64.powi((g.x.len() + g.y.len()) as i32))
            }
            (Quantity::Fxybar, Placement::Block(g)) => {
                let st = state.get_or_insert_with(|| DoubledState::new(&u, 0));
                match st {
                    Ok(s) => {
                        let mut res = Ok(());
                        while s.t() < p.t && res.is_ok() {
                            res = s.advance(&u);
                        }
                        res.and_then(|_| {
                            let ybar = g.y.complement(l);
                            s.opmi(&g.x, &ybar).map(|i| (i - 2.0 * g.x.len() as f64 * LN_2).exp())
                        })
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            _ => Err(Error::Invalid("placement does not match the quantity".into())),
        };
        out[k] = Some(value);
    }
    out
}

fn mean_stderr(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn finish(plan: Plan, samples: Vec<Result<f64>>) -> Cell {
    let Plan { d, t, prediction, mut check, placement } = plan;
    let empty = |check| Cell {
        d,
        t,
        n: 0,
        mean: None,
        stderr: None,
        prediction,
        sigma_discrepancy: None,
        max_deviation: None,
        check,
        pass: None,
    };
    if placement.is_none() {
        return empty(check);
    }
    let mut values = Vec::with_capacity(samples.len());
    for s in samples {
        match s {
            Ok(v) => values.push(v),
            Err(e) => return empty(Check::Skipped { reason: e.to_string() }),
        }
    }
    if values.is_empty() {
        return empty(Check::Skipped { reason: "no samples".into() });
    }
    let (mean, stderr) = mean_stderr(&values);
    let mut cell = Cell { n: values.len(), mean: Some(mean), stderr, ..empty(check.clone()) };
    let Some(pred) = prediction else { return cell };
    let diff = mean - pred;
    let floor = EXACT_TOL * pred.abs();
    cell.sigma_discrepancy = match stderr {
        Some(se) if se > 0.0 => Some(diff / se),
        _ if diff.abs() <= floor => Some(0.0),
        _ => None,
    };
    cell.max_deviation = Some(values.iter().map(|v| (v - pred).abs()).fold(0.0, f64::max) / pred.abs());
    cell.pass = match &check {
        Check::Statistical { sigmas } => match stderr {
            Some(se) => Some(diff.abs() <= sigmas * se + floor),
            None => {
                check = Check::Unasserted { reason: "a single sample has no standard error".into() };
                None
            }
        },
        Check::Exact { rel_tol } => cell.max_deviation.map(|m| m < *rel_tol),
        _ => None,
    };
    cell.check = check;
    cell
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Monte-Carlo means over the `(d, t)` grid, `t = 0..=t_max`.
pub fn cmd_scan(cfg: &RunConfig) -> Result<ScanResult> {
    let start = Instant::now();
    let warnings = cfg.validate()?;
    if cfg.quantity == Quantity::Spectrum {
        return Err(Error::Config("quantity spectrum belongs to the spectrum command".into()));
    }
    let mut planner = Planner { cfg, t2: BTreeMap::new() };
    let plans: Vec<Plan> = cfg
        .d_values
        .iter()
        .flat_map(|&d| (0..=cfg.t_max).map(move |t| (d, t)))
        .map(|(d, t)| planner.plan(d, t))
        .collect();
    let per_sample = in_pool(cfg.threads, || {
        (0..cfg.n_samples).into_par_iter().map(|i| sample_values(cfg, &plans, i)).collect::<Vec<_>>()
    })?;
    let mut columns: Vec<Vec<Result<f64>>> = (0..plans.len()).map(|_| Vec::new()).collect();
    for row in per_sample {
        for (k, v) in row.into_iter().enumerate() {
            if let Some(v) = v {
                columns[k].push(v);
            }
        }
    }
    let cells = plans.into_iter().zip(columns).map(|(p, s)| finish(p, s)).collect();
    Ok(ScanResult {
        provenance: Provenance::new("scan", cfg, warnings, start),
        quantity: cfg.quantity,
        geometry: cfg.geometry,
        cells,
    })
}

// ---- verify ----

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub sample: usize,
    pub seed: u64,
    pub t: Option<usize>,
    pub d: Option<HalfInt>,
    pub value: f64,
    pub reference: f64,
    /// Relative deviation, or absolute when the reference is zero.
    pub defect: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub provenance: Provenance,
    pub checks: Vec<IdentityCheck>,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

impl Report for VerifyReport {
    fn to_csv(&self) -> String {
        let header =
            ["check", "sample", "seed", "t", "d", "value", "reference", "defect", "tolerance", "status", "note"];
        let rows = self.checks.iter().map(|c| {
            vec![
                c.name.to_string(),
                c.sample.to_string(),
                c.seed.to_string(),
                c.t.map(|t| t.to_string()).unwrap_or_default(),
                c.d.map(|d| d.to_string()).unwrap_or_default(),
                num(Some(c.value)),
                num(Some(c.reference)),
                num(Some(c.defect)),
                num(Some(c.tolerance)),
                if c.pass { "pass" } else { "fail" }.to_string(),
                c.note.clone(),
            ]
        });
        self.provenance.csv_header() + &csv_body(&header, rows)
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Checker {
    sample: usize,
    seed: u64,
    out: Vec<IdentityCheck>,
}

impl Checker {
    fn compare(
        &mut self,
        name: &'static str,
        at: (Option<usize>, Option<HalfInt>),
        value: Result<f64>,
        reference: Result<f64>,
        tol: f64,
    ) {
        let (t, d) = at;
        let mut c = IdentityCheck {
            name,
            sample: self.sample,
            seed: self.seed,
            t,
            d,
            value: f64::NAN,
            reference: f64::NAN,
            defect: f64::INFINITY,
            tolerance: tol,
            pass: false,
            note: String::new(),
        };
        match (value, reference) {
            (Ok(v), Ok(r)) => {
                c.value = v;
                c.reference = r;
                c.defect = if r == 0.0 { v.abs() } else { (v - r).abs() / r.abs() };
                c.pass = c.defect < tol;
            }
            (Err(e), _) | (_, Err(e)) => c.note = e.to_string(),
        }
        self.out.push(c);
    }
}

fn verify_sample(
    cfg: &RunConfig,
    index: usize,
    tamper: &(dyn Fn(usize, &mut [TwoQubitGate]) + Sync),
) -> Vec<IdentityCheck> {
    let seed = sample_seed(cfg.master_seed, index as u64);
    let mut ck = Checker { sample: index, seed, out: Vec::new() };
    let l = cfg.l;
    let u = build_floquet(cfg.j, l, &mut sample_rng(cfg.master_seed, index as u64)).and_then(|u| {
        let mut gates = u.gates().to_vec();
        tamper(index, &mut gates);
        FloquetOperator::from_gates(l, gates)
    });
    let u = match u {
        Ok(u) => u,
        Err(e) => {
            ck.compare("circuit construction", (None, None), Err(e), Ok(0.0), 0.0);
            return ck.out;
        }
    };
    let none = (None, None);
    let defects = u.gate_defects();
    let worst = |f: fn(&(f64, f64)) -> f64| Ok(defects.iter().map(f).fold(0.0, f64::max));
    ck.compare("gate unitarity", none, worst(|d| d.0), Ok(0.0), EXACT_TOL);
    ck.compare("gate dual-unitarity", none, worst(|d| d.1), Ok(0.0), EXACT_TOL);
    ck.compare("Floquet unitarity", none, u.matrix().map(|m| matrix_unitarity_defect(&m)), Ok(0.0), EXACT_TOL);
    let eig = diagonalize(&u);
    if let Err(e) = &eig {
        ck.compare("eigendecomposition", none, Err(e.clone()), Ok(0.0), 0.0);
    }
    for t in 0..=cfg.t_max {
        let state = match DoubledState::new(&u, t) {
            Ok(s) => s,
            Err(e) => {
                ck.compare("doubled state", (Some(t), None), Err(e), Ok(0.0), 0.0);
                continue;
            }
        };
        ck.compare("doubled-state norm", (Some(t), None), Ok(state.norm()), Ok(1.0), IDENTITY_TOL);
        for &d in &cfg.d_values {
            let at = (Some(t), Some(d));
            let x = SubsystemSpec::input([0]);
            let y = SubsystemSpec::output([local_sites(l, t, d, 0)]);
            let ybar = y.complement(l);
            let f_purity = state.f_from_purity(&x, &y);
            let reference = || f_purity.as_ref().map(|v| *v).map_err(|e| Error::Numerical(e.to_string()));
            if let Ok(e) = &eig {
                ck.compare("quartet sum = purity route", at, f_xy_quartet(e, &x, &y, t), reference(), IDENTITY_TOL);
            }
            let c_dense = two_point_avg(&u, t, &x, &y);
            let c_ref = c_dense.as_ref().map(|v| *v).map_err(|e| Error::Numerical(e.to_string()));
            ck.compare(
                "two-point correlator = purity route",
                at,
                c_dense.map(|c| 4f64.powi(l as i32 + 1) * c),
                reference(),
                IDENTITY_TOL,
            );
            ck.compare("light-cone two-point = dense", at, two_point_lightcone(&u, t, &x, &y), c_ref, IDENTITY_TOL);
            ck.compare(
                "OTOC = complement purity route",
                at,
                otoc_avg(&u, t, &x, &y).map(|dv| 2f64.powi(l as i32 + 2) * dv),
                state.f_from_purity(&x, &ybar),
                IDENTITY_TOL,
            );
            let xbar = x.complement(l);
            ck.compare(
                "purity of a part = purity of its complement",
                at,
                state.purity(&[&x, &y]),
                state.purity(&[&xbar, &ybar]),
                IDENTITY_TOL,
            );
            if let Some(di) = d.as_int() {
                if let Ok(g) = MacroGeometry::fit_for_complement(l, t, di) {
                    let gbar = g.y.complement(l);
                    let jump = state.opmi(&g.x, &gbar).map(|i| (i - 2.0 * g.x.len() as f64 * LN_2).exp());
                    ck.compare("opMI jump", at, jump, Ok(replica::exp_delta_opmi_macro(di)), IDENTITY_TOL);
                }
            }
        }
    }
    ck.out
}

/// Identity suite on `n_samples` fresh circuits.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    cmd_verify_with(cfg, &|_, _| {})
}

/// As `cmd_verify`, letting `tamper` edit the gates of each sample before
/// any check runs.
pub fn cmd_verify_with(cfg: &RunConfig, tamper: &(dyn Fn(usize, &mut [TwoQubitGate]) + Sync)) -> Result<VerifyReport> {
    let start = Instant::now();
    let warnings = cfg.validate()?;
    if cfg.l > VERIFY_MAX_L {
        return Err(Error::Config(format!("verify needs L <= {VERIFY_MAX_L}, got {}", cfg.l)));
    }
    let checks = in_pool(cfg.threads, || {
        (0..cfg.n_samples).into_par_iter().flat_map_iter(|i| verify_sample(cfg, i, tamper)).collect::<Vec<_>>()
    })?;
    Ok(VerifyReport { provenance: Provenance::new("verify", cfg, warnings, start), checks })
}

// ---- spectrum ----

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub kind: String,
    pub j: f64,
    pub d: HalfInt,
    pub rank: usize,
    pub re: Option<f64>,
    pub im: Option<f64>,
    pub multiplicity: usize,
    pub weight: Option<f64>,
    pub residual: Option<f64>,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub e_d: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub provenance: Provenance,
    pub rows: Vec<SpectrumRow>,
}

impl Report for SpectrumReport {
    fn to_csv(&self) -> String {
        let header = [
            "kind",
            "J",
            "d",
            "rank",
            "re",
            "im",
            "multiplicity",
            "weight",
            "residual",
            "lambda",
            "gamma",
            "c",
            "e_d",
            "status",
        ];
        let rows = self.rows.iter().map(|r| {
            vec![
                r.kind.clone(),
                num(Some(r.j)),
                r.d.to_string(),
                r.rank.to_string(),
                num(r.re),
                num(r.im),
                r.multiplicity.to_string(),
                num(r.weight),
                num(r.residual),
                num(Some(r.lambda)),
                num(r.gamma),
                num(r.c),
                num(r.e_d),
                r.status.clone(),
            ]
        });
        self.provenance.csv_header() + &csv_body(&header, rows)
    }

    fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status == "ok")
    }
}

fn spectrum_rows(cfg: &RunConfig, j: f64, d: HalfInt) -> Vec<SpectrumRow> {
    let kind = cfg.kind;
    let base = SpectrumRow {
        kind: format!("{kind:?}"),
        j,
        d,
        rank: 0,
        re: None,
        im: None,
        multiplicity: 0,
        weight: None,
        residual: None,
        lambda: replica::lambda(j),
        gamma: None,
        c: None,
        e_d: None,
        status: "ok".into(),
    };
    let built = match kind {
        Kind::T1 => replica::build_t1(j),
        Kind::T2 => replica::build_t2(j, d),
        Kind::T3 => replica::build_t3(j, d),
    }
    .map(|m| m.with_krylov_steps(cfg.max_iterations));
    let fail = |e: Error| vec![SpectrumRow { status: format!("error: {e}"), ..base.clone() }];
    let m = match built {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let lines = match m.leading_spectrum(cfg.k) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let mut derived = base.clone();
    if d.twice() < 0 {
        match kind {
            Kind::T2 => match replica::t2_decay(&m) {
                Ok(dec) => {
                    derived.gamma = Some(dec.gamma);
                    derived.c = Some(dec.c);
                }
                Err(e) => derived.status = format!("derived columns: {e}"),
            },
            Kind::T3 => match replica::t3_e_d(&m) {
                Ok((_, e)) => derived.e_d = Some(e),
                Err(e) => derived.status = format!("derived columns: {e}"),
            },
            Kind::T1 => {}
        }
    }
    lines
        .into_iter()
        .enumerate()
        .map(|(rank, line)| SpectrumRow {
            rank,
            re: Some(line.value.re),
            im: Some(line.value.im),
            multiplicity: line.multiplicity,
            weight: Some(line.weight),
            residual: Some(line.residual),
            ..derived.clone()
        })
        .collect()
}

/// Leading eigenvalues and boundary weights for every `(J, d)` pair; `J`
/// runs over `j_values` when given, else the single `J`. T1 ignores `d`.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<SpectrumReport> {
    let start = Instant::now();
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if cfg.j_values.iter().chain([&cfg.j]).any(|j| !j.is_finite()) {
        return Err(Error::Config("J must be finite".into()));
    }
    let js = if cfg.j_values.is_empty() { vec![cfg.j] } else { cfg.j_values.clone() };
    let ds = if cfg.kind == Kind::T1 { vec![HalfInt::int(0)] } else { cfg.d_values.clone() };
    let jobs: Vec<(f64, HalfInt)> = js.iter().flat_map(|&j| ds.iter().map(move |&d| (j, d))).collect();
    let rows =
        in_pool(cfg.threads, || jobs.par_iter().flat_map_iter(|&(j, d)| spectrum_rows(cfg, j, d)).collect::<Vec<_>>())?;
    Ok(SpectrumReport { provenance: Provenance::new("spectrum", cfg, Vec::new(), start), rows })
}
