//! Monte Carlo experiments: repeated generate → delete → fit, then bias,
//! spread and coverage summaries per method and reported coefficient.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, inject_mar, ScenarioSpec, REPORTED_COEFFICIENTS, TRUE_THETA};
use crate::error::{Error, Result};
use crate::ipw::{fit_cc, fit_gs, fit_ipw_pooled, fit_ppipw, IpwConfig};
use crate::mi::{fit_mi_naive, fit_mi_pooled, fit_ppmi, MiConfig, VarianceMode};
use crate::model::{CiKind, FitResult, Method, VerticalDataset};
use crate::netsim::{LedgerDetail, MessageLedger, Network};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Share of failed replications above which a method's rows are flagged.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TableFormat {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Parse(format!("unknown table format `{other}`"))),
        }
    }
}

/// Settings shared by every estimator in a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodConfig {
    pub ipw: IpwConfig,
    pub mi: MiConfig,
}

/// Runs one estimator by name.
pub fn fit_method<T: Scalar>(
    method: Method,
    ds: &VerticalDataset<T>,
    cfg: &MethodConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    match method {
        Method::Gs => fit_gs(ds, &cfg.ipw, net, seeds),
        Method::Cc => fit_cc(ds, &cfg.ipw, net, seeds),
        Method::IpwPooled => fit_ipw_pooled(ds, &cfg.ipw, net, seeds),
        Method::PpipwV => fit_ppipw(ds, &cfg.ipw, net, seeds),
        Method::MiNaive => fit_mi_naive(ds, &cfg.mi, net, seeds),
        Method::MiPooled => fit_mi_pooled(ds, &cfg.mi, net, seeds),
        Method::PpmiV => fit_ppmi(ds, &cfg.mi, net, seeds),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: u8,
    pub n: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Imputations per MI fit.
    pub m: usize,
    /// Bootstrap replicates for IPW-family SEs and the imputation-model covariance.
    pub bootstrap_b: usize,
    pub lambda: f64,
    pub seed: u64,
    pub variance_mode: VarianceMode,
    /// When false, IPW-family fits skip their bootstrap (SE and CR are NA).
    pub standard_errors: bool,
    pub ledger_detail: LedgerDetail,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: 1,
            n: 1000,
            replications: 200,
            methods: Method::ALL.to_vec(),
            m: 100,
            bootstrap_b: 200,
            lambda: 1.0,
            seed: 2024,
            variance_mode: VarianceMode::Gram,
            standard_errors: true,
            ledger_detail: LedgerDetail::TotalsOnly,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ScenarioSpec::new(self.scenario, self.n)?;
        if self.replications < 1 {
            return Err(Error::Invalid("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("no methods requested".into()));
        }
        self.method_config().ipw.validate()?;
        if self.methods.iter().any(|m| m.is_multiple_imputation()) {
            self.method_config().mi.validate()?;
        }
        Ok(())
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig {
            ipw: IpwConfig {
                lambda: self.lambda,
                bootstrap_b: if self.standard_errors { self.bootstrap_b } else { 0 },
                ..IpwConfig::default()
            },
            mi: MiConfig {
                m: self.m,
                alpha_bootstrap_b: self.bootstrap_b,
                variance_mode: self.variance_mode,
                ..MiConfig::default()
            },
        }
    }

    /// Requested methods in table order, without repeats.
    pub fn ordered_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}

/// One method's result on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub estimate: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub ci_kind: CiKind,
    pub error: Option<String>,
    /// Pooled reads made by the fit.
    pub pooled_reads: usize,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    /// `theta1`, `theta3` or `theta5`.
    pub coefficient: String,
    /// Mean relative bias in percent.
    pub rbias: f64,
    /// Mean estimated standard error; NaN when none were computed.
    pub se: f64,
    /// Monte Carlo standard deviation (divisor R − 1).
    pub sd: f64,
    pub mse: f64,
    /// Coverage of the 95% intervals in percent; NaN without intervals.
    pub cr: f64,
}

fn round3(v: f64) -> f64 {
    if v.is_finite() {
        let r = (v * 1000.0).round() / 1000.0;
        if r == 0.0 {
            0.0
        } else {
            r
        }
    } else {
        v
    }
}

impl MetricsRow {
    /// Values as they appear in emitted tables.
    pub fn rounded(&self) -> Self {
        Self {
            rbias: round3(self.rbias),
            se: round3(self.se),
            sd: round3(self.sd),
            mse: round3(self.mse),
            cr: round3(self.cr),
            ..self.clone()
        }
    }

    /// Field-wise equality with NaN equal to NaN.
    pub fn same_values(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.method == other.method
            && self.coefficient == other.coefficient
            && eq(self.rbias, other.rbias)
            && eq(self.se, other.se)
            && eq(self.sd, other.sd)
            && eq(self.mse, other.mse)
            && eq(self.cr, other.cr)
    }
}

/// Summary statistics for one coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMetrics {
    pub rbias: f64,
    pub se: f64,
    pub sd: f64,
    pub mse: f64,
    pub cr: f64,
}

/// RBias, SE, SD, MSE and CR over replications. `ses` and `cis` may hold
/// `None` where a replication produced no interval; SE and CR then use the
/// replications that did, and are NaN if none did.
pub fn compute_metrics(
    estimates: &[f64],
    ses: &[Option<f64>],
    cis: &[Option<(f64, f64)>],
    truth: f64,
) -> Result<CoefficientMetrics> {
    if truth == 0.0 {
        return Err(Error::Invalid("relative bias is undefined for a zero true value".into()));
    }
    let r = estimates.len();
    if r == 0 {
        return Err(Error::Invalid("no estimates to summarize".into()));
    }
    if ses.len() != r || cis.len() != r {
        return Err(Error::Shape(format!("{r} estimates, {} SEs, {} intervals", ses.len(), cis.len())));
    }
    let rf = r as f64;
    let mean = estimates.iter().sum::<f64>() / rf;
    let rbias = 100.0 * estimates.iter().map(|&t| (t - truth) / truth).sum::<f64>() / rf;
    let sd = if r > 1 { (estimates.iter().map(|&t| (t - mean).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt() } else { 0.0 };
    let mse = estimates.iter().map(|&t| (t - truth).powi(2)).sum::<f64>() / rf;
    let avail: Vec<f64> = ses.iter().flatten().copied().collect();
    let se = if avail.is_empty() { f64::NAN } else { avail.iter().sum::<f64>() / avail.len() as f64 };
    let ints: Vec<(f64, f64)> = cis.iter().flatten().copied().collect();
    let cr = if ints.is_empty() {
        f64::NAN
    } else {
        100.0 * ints.iter().filter(|&&(lo, hi)| lo <= truth && truth <= hi).count() as f64 / ints.len() as f64
    };
    Ok(CoefficientMetrics { rbias, se, sd, mse, cr })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// Annotations printed below markdown tables.
    pub footer: Vec<String>,
}

pub const TABLE_HEADER: [&str; 7] = ["method", "coefficient", "rbias_pct", "se", "sd", "mse", "cr_pct"];

fn fmt3(v: f64) -> String {
    if v.is_nan() {
        crate::csvio::NA.to_string()
    } else {
        format!("{:.3}", round3(v))
    }
}

fn parse3(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    if s == crate::csvio::NA {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Parse(format!("line {line}: bad number `{s}`")))
}

impl MetricsTable {
    pub fn row(&self, method: Method, coefficient: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.coefficient == coefficient)
    }

    fn cells(row: &MetricsRow) -> [String; 7] {
        [
            row.method.label().to_string(),
            row.coefficient.clone(),
            fmt3(row.rbias),
            fmt3(row.se),
            fmt3(row.sd),
            fmt3(row.mse),
            fmt3(row.cr),
        ]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TABLE_HEADER)?;
        for row in &self.rows {
            w.write_record(Self::cells(row))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", TABLE_HEADER.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(TABLE_HEADER.len()));
        for row in &self.rows {
            let _ = writeln!(s, "| {} |", Self::cells(row).join(" | "));
        }
        if !self.footer.is_empty() {
            s.push('\n');
            for line in &self.footer {
                let _ = writeln!(s, "{line}");
            }
        }
        s
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf).expect("writing to memory");
                String::from_utf8(buf).expect("csv is utf-8")
            }
            TableFormat::Markdown => self.to_markdown(),
        }
    }

    pub fn write_path(&self, path: &Path, format: TableFormat) -> Result<()> {
        std::fs::write(path, self.render(format))?;
        Ok(())
    }

    /// Reads a table written by [`Self::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(TABLE_HEADER.iter().copied()) {
            return Err(Error::Parse(format!("unexpected table header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != TABLE_HEADER.len() {
                return Err(Error::Parse(format!("line {line}: expected {} fields", TABLE_HEADER.len())));
            }
            rows.push(MetricsRow {
                method: rec[0].parse()?,
                coefficient: rec[1].trim().to_string(),
                rbias: parse3(&rec[2], line)?,
                se: parse3(&rec[3], line)?,
                sd: parse3(&rec[4], line)?,
                mse: parse3(&rec[5], line)?,
                cr: parse3(&rec[6], line)?,
            });
        }
        Ok(Self { rows, footer: Vec::new() })
    }
}

pub fn coefficient_name(index: usize) -> String {
    format!("theta{index}")
}

/// Everything a Monte Carlo run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub records: Vec<RepRecord>,
    pub table: MetricsTable,
    pub ledger: MessageLedger,
    pub failures: BTreeMap<Method, usize>,
    /// Pooled reads by methods that are not pooled baselines.
    pub pooled_violations: usize,
    /// Overall missing fraction across replications.
    pub missing_fraction: f64,
}

impl ExperimentOutcome {
    pub fn estimates(&self, method: Method) -> Vec<(usize, Vec<f64>)> {
        self.records
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.estimate.clone().map(|e| (r.rep, e)))
            .collect()
    }

    pub fn unreliable(&self, method: Method) -> bool {
        let failed = self.failures.get(&method).copied().unwrap_or(0);
        failed as f64 > MAX_FAILED_SHARE * self.config.replications as f64
    }
}

/// The dataset of replication `rep`.
pub fn replicate_data(cfg: &ExperimentConfig, rep: usize) -> Result<VerticalDataset<f64>> {
    let spec = ScenarioSpec::new(cfg.scenario, cfg.n)?;
    let mut rng = SeedTree::new(cfg.seed).child(rep as u64).tagged("data").rng();
    let full = generate(&spec, &mut rng)?;
    inject_mar(&full, cfg.scenario, &mut rng)
}

fn run_replication(cfg: &ExperimentConfig, methods: &[Method], rep: usize) -> Result<(Vec<RepRecord>, Network, usize)> {
    let ds = replicate_data(cfg, rep)?;
    let seeds = SeedTree::new(cfg.seed).child(rep as u64);
    let mcfg = cfg.method_config();
    let mut net = Network::new(cfg.n, ds.layout().widths(), cfg.ledger_detail);
    let mut records = Vec::with_capacity(methods.len());
    for &method in methods {
        let local = ds.with_fresh_tracker();
        let mut child = net.child();
        let res = fit_method(method, &local, &mcfg, &mut child, &seeds.tagged(method.label()));
        net.absorb_network(child);
        let pooled_reads = local.pool_tracker().count();
        records.push(match res {
            Ok(fit) => RepRecord {
                rep,
                method,
                estimate: Some(fit.estimate),
                se: fit.se,
                ci: fit.ci,
                ci_kind: fit.diagnostics.ci_kind,
                error: None,
                pooled_reads,
            },
            Err(e) => RepRecord {
                rep,
                method,
                estimate: None,
                se: None,
                ci: None,
                ci_kind: CiKind::Normal,
                error: Some(e.to_string()),
                pooled_reads,
            },
        });
    }
    Ok((records, net, ds.missing_count()))
}

/// Runs every replication (in parallel) and summarizes per method.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let methods = cfg.ordered_methods();
    let spec = ScenarioSpec::new(cfg.scenario, cfg.n)?;
    let runs: Vec<Result<(Vec<RepRecord>, Network, usize)>> =
        (0..cfg.replications).into_par_iter().map(|rep| run_replication(cfg, &methods, rep)).collect();
    let widths = crate::datagen::scenario_layout().widths();
    let mut net = Network::new(spec.n, widths, cfg.ledger_detail);
    let mut records = Vec::new();
    let mut missing = 0usize;
    for run in runs {
        let (recs, child, miss) = run?;
        net.absorb_network(child);
        records.extend(recs);
        missing += miss;
    }
    let mut failures = BTreeMap::new();
    let mut pooled_violations = 0;
    for r in &records {
        if r.failed() {
            *failures.entry(r.method).or_insert(0) += 1;
        }
        if !r.method.is_pooled() {
            pooled_violations += r.pooled_reads;
        }
    }
    let mut outcome = ExperimentOutcome {
        config: cfg.clone(),
        records,
        table: MetricsTable::default(),
        ledger: net.into_ledger(),
        failures,
        pooled_violations,
        missing_fraction: missing as f64 / (cfg.n * cfg.replications) as f64,
    };
    outcome.table = summarize(&outcome, &methods)?;
    Ok(outcome)
}

fn summarize(outcome: &ExperimentOutcome, methods: &[Method]) -> Result<MetricsTable> {
    let cfg = &outcome.config;
    let mut table = MetricsTable::default();
    for &method in methods {
        let ok: Vec<&RepRecord> = outcome.records.iter().filter(|r| r.method == method && !r.failed()).collect();
        let failed = outcome.failures.get(&method).copied().unwrap_or(0);
        if ok.is_empty() {
            table.footer.push(format!("{method}: all {failed} replications failed"));
            continue;
        }
        for &j in &REPORTED_COEFFICIENTS {
            let est: Vec<f64> = ok.iter().map(|r| r.estimate.as_ref().expect("successful fit")[j]).collect();
            let ses: Vec<Option<f64>> = ok.iter().map(|r| r.se.as_ref().map(|s| s[j])).collect();
            let cis: Vec<Option<(f64, f64)>> = ok.iter().map(|r| r.ci.as_ref().map(|c| c[j])).collect();
            let m = compute_metrics(&est, &ses, &cis, TRUE_THETA[j])?;
            table.rows.push(MetricsRow {
                method,
                coefficient: coefficient_name(j),
                rbias: m.rbias,
                se: m.se,
                sd: m.sd,
                mse: m.mse,
                cr: m.cr,
            });
        }
        if failed > 0 {
            let flag = if outcome.unreliable(method) { " (unreliable)" } else { "" };
            table.footer.push(format!("{method}: {failed} of {} replications failed{flag}", cfg.replications));
        }
    }
    let by_kind = |kind: CiKind| -> Vec<&str> {
        methods
            .iter()
            .filter(|&&m| (kind == CiKind::StudentT) == m.is_multiple_imputation())
            .map(|m| m.label())
            .collect()
    };
    let normal = by_kind(CiKind::Normal);
    let student = by_kind(CiKind::StudentT);
    if !normal.is_empty() {
        table.footer.push(format!("CI: normal quantile with bootstrap SE for {}", normal.join(", ")));
    }
    if !student.is_empty() {
        table.footer.push(format!("CI: Student t with Rubin df for {}", student.join(", ")));
    }
    table.footer.push(format!(
        "scenario {}, n = {}, {} replications, seed {}",
        cfg.scenario, cfg.n, cfg.replications, cfg.seed
    ));
    Ok(table)
}

/// Per-phase, per-kind totals of a ledger as CSV.
pub fn ledger_totals_csv(ledger: &MessageLedger) -> String {
    let mut s = String::from("phase,kind,messages,bytes\n");
    for (&(phase, kind), t) in ledger.totals() {
        let _ = writeln!(s, "{phase},{kind},{},{}", t.messages, t.bytes);
    }
    s
}
