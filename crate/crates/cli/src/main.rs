use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vertfed::csvio::{self, Table, NA};
use vertfed::datagen::{self, registry_coefficients};
use vertfed::harness::{self, ledger_totals_csv, ExperimentConfig, MethodConfig, TableFormat};
use vertfed::ipw::IpwConfig;
use vertfed::mi::{MiConfig, VarianceMode};
use vertfed::netsim::{audit_ledger, audit_ledger_csv, LedgerDetail, Network};
use vertfed::{Fit, Method, SeedTree};

#[derive(Parser, Debug)]
#[command(name = "vertfed", version, about = "Regression with a missing covariate over vertically partitioned sites")]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo experiment over a simulation scenario.
    Simulate(SimulateArgs),
    /// Fit one estimator to site CSV files.
    Fit(FitArgs),
    /// Delete entries of a column with a logistic missingness model.
    InjectMissing(InjectArgs),
    /// Check an exported ledger against the payload allowlist.
    Audit(AuditArgs),
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated, e.g. GS,CC,PPIPW-V.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    variance_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip bootstrap standard errors for the IPW-family methods.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_se: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Per-phase, per-kind message totals.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Binned selection probabilities of the first replication.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FitArgs {
    /// One file per site, in layout order.
    #[arg(long, num_args = 1..)]
    site_csv: Option<Vec<PathBuf>>,
    #[arg(long)]
    outcome_csv: Option<PathBuf>,
    /// A single file with every column, instead of per-site files.
    #[arg(long, conflicts_with_all = ["site_csv", "outcome_csv"])]
    data_csv: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    variance_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Estimates as CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full message ledger as CSV.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct InjectArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// `name=value`, repeatable; `intercept` is the constant. Defaults to
    /// the registry model.
    #[arg(long = "coef")]
    coef: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct AuditArgs {
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    simulate: SimulateArgs,
    #[serde(default)]
    fit: FitArgs,
    #[serde(default)]
    inject_missing: InjectArgs,
    #[serde(default)]
    audit: AuditArgs,
}

/// Fills every unset flag from the config file.
macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),+ $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )+
    };
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn parse_variance_mode(s: Option<&str>) -> anyhow::Result<VarianceMode> {
    Ok(s.map(str::parse).transpose()?.unwrap_or_default())
}

fn simulate(mut a: SimulateArgs, mut file: SimulateArgs) -> anyhow::Result<()> {
    overlay!(
        a,
        file,
        scenario,
        n,
        reps,
        methods,
        m,
        bootstrap,
        lambda,
        variance_mode,
        seed,
        no_se,
        out,
        format,
        ledger,
        histogram,
        bins
    );
    let base = ExperimentConfig::default();
    let methods = match &a.methods {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<Method>, _>>()?,
        None => base.methods.clone(),
    };
    let cfg = ExperimentConfig {
        scenario: a.scenario.unwrap_or(base.scenario),
        n: a.n.unwrap_or(base.n),
        replications: a.reps.unwrap_or(base.replications),
        methods,
        m: a.m.unwrap_or(base.m),
        bootstrap_b: a.bootstrap.unwrap_or(base.bootstrap_b),
        lambda: a.lambda.unwrap_or(base.lambda),
        seed: a.seed.unwrap_or(base.seed),
        variance_mode: parse_variance_mode(a.variance_mode.as_deref())?,
        standard_errors: !a.no_se.unwrap_or(false),
        ledger_detail: LedgerDetail::TotalsOnly,
    };
    let format: TableFormat = a.format.as_deref().map(str::parse).transpose()?.unwrap_or_default();
    let outcome = harness::run_monte_carlo(&cfg)?;
    let rendered = outcome.table.render(format);
    match &a.out {
        Some(p) => fs::write(p, &rendered).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{rendered}"),
    }
    if let Some(p) = &a.ledger {
        fs::write(p, ledger_totals_csv(&outcome.ledger)).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.histogram {
        let ds = harness::replicate_data(&cfg, 0)?;
        let probs = datagen::selection_probs(&ds, cfg.scenario)?;
        let mut s = String::from("lower,upper,count\n");
        for (lo, hi, c) in datagen::probability_histogram(&probs, a.bins.unwrap_or(20)) {
            let _ = writeln!(s, "{lo},{hi},{c}");
        }
        fs::write(p, s).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "{} replications, missing fraction {:.3}, pooled reads outside pooled baselines: {}",
        cfg.replications, outcome.missing_fraction, outcome.pooled_violations
    );
    for (method, failed) in &outcome.failures {
        eprintln!("{method}: {failed} failed replication(s)");
    }
    Ok(())
}

fn fit_rows(fit: &Fit) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |x| x.to_string());
    let mut s = String::from("coefficient,site,estimate,se,ci_lower,ci_upper\n");
    for j in 0..fit.estimate.len() {
        let se = fit.se.as_ref().map(|v| v[j]);
        let ci = fit.ci.as_ref().map(|v| v[j]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fit.names[j],
            fit.sites[j],
            fit.estimate[j],
            cell(se),
            cell(ci.map(|c| c.0)),
            cell(ci.map(|c| c.1))
        );
    }
    s
}

fn fit(mut a: FitArgs, mut file: FitArgs) -> anyhow::Result<()> {
    overlay!(
        a,
        file,
        site_csv,
        outcome_csv,
        data_csv,
        layout,
        method,
        m,
        bootstrap,
        lambda,
        variance_mode,
        seed,
        out,
        ledger
    );
    let layout_path = a.layout.as_ref().context("--layout is required")?;
    let spec = csvio::read_layout(layout_path)?;
    let ds = match (&a.data_csv, &a.site_csv, &a.outcome_csv) {
        (Some(p), _, _) => csvio::load_single(&spec, &Table::read_path(p)?)?,
        (None, Some(sites), Some(outcome)) => {
            let tables = sites.iter().map(Table::read_path).collect::<Result<Vec<_>, _>>()?;
            csvio::load_sites(&spec, &tables, &Table::read_path(outcome)?)?
        }
        _ => bail!("give --data-csv, or --site-csv with --outcome-csv"),
    };
    let method: Method = a.method.as_deref().unwrap_or("PPIPW-V").parse()?;
    let ipw = IpwConfig::default();
    let mi = MiConfig::default();
    let cfg = MethodConfig {
        ipw: IpwConfig {
            lambda: a.lambda.unwrap_or(ipw.lambda),
            bootstrap_b: a.bootstrap.unwrap_or(ipw.bootstrap_b),
            ..ipw
        },
        mi: MiConfig {
            m: a.m.unwrap_or(mi.m),
            alpha_bootstrap_b: a.bootstrap.unwrap_or(mi.alpha_bootstrap_b),
            variance_mode: parse_variance_mode(a.variance_mode.as_deref())?,
            ..mi
        },
    };
    let detail = if a.ledger.is_some() { LedgerDetail::FullWithShares } else { LedgerDetail::TotalsOnly };
    let mut net = Network::new(ds.n(), ds.layout().widths(), detail);
    let seeds = SeedTree::new(a.seed.unwrap_or(1));
    let fit = harness::fit_method(method, &ds, &cfg, &mut net, &seeds)?;
    let rows = fit_rows(&fit);
    match &a.out {
        Some(p) => fs::write(p, &rows).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{rows}"),
    }
    if let Some(p) = &a.ledger {
        let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        net.ledger().write_csv(std::io::BufWriter::new(file))?;
    }
    let report = audit_ledger(net.ledger(), &ds);
    eprintln!(
        "{method}: {} rows ({} complete), {} messages, {} bytes",
        ds.n(),
        ds.complete_count(),
        fit.diagnostics.messages,
        fit.diagnostics.bytes
    );
    if report.cross_site_identity_shares() > 0 {
        eprintln!("warning: {} share(s) reproduced another site's raw column", report.cross_site_identity_shares());
    }
    for note in &fit.diagnostics.notes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn parse_coefficients(list: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    list.iter()
        .map(|item| {
            let (k, v) = item.split_once('=').with_context(|| format!("expected name=value, got `{item}`"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("bad coefficient value in `{item}`"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn inject(mut a: InjectArgs, mut file: InjectArgs) -> anyhow::Result<()> {
    overlay!(a, file, input, target, coef, seed, output);
    let input = a.input.as_ref().context("--input is required")?;
    let output = a.output.as_ref().context("--output is required")?;
    let target = a.target.as_deref().unwrap_or("X3");
    let coefs = match &a.coef {
        Some(list) if !list.is_empty() => parse_coefficients(list)?,
        _ => registry_coefficients(),
    };
    let table = Table::read_path(input)?;
    let mut rng = SeedTree::new(a.seed.unwrap_or(1)).tagged("inject-missing").rng();
    let (out, deleted) = datagen::inject_missing_table(&table, target, &coefs, &mut rng)?;
    out.write_path(output)?;
    let missing = out.missing_count(target).unwrap_or(0);
    eprintln!(
        "{target}: {deleted} entries deleted, {missing} of {} now {NA} ({:.1}%)",
        out.rows(),
        100.0 * missing as f64 / out.rows().max(1) as f64
    );
    Ok(())
}

fn audit(mut a: AuditArgs, mut file: AuditArgs) -> anyhow::Result<bool> {
    overlay!(a, file, ledger);
    let path = a.ledger.as_ref().context("--ledger is required")?;
    let reader = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let report = audit_ledger_csv(std::io::BufReader::new(reader))?;
    println!("records: {}", report.records);
    for (kind, t) in &report.summary.per_kind {
        println!("  {kind}: {} messages, {} bytes", t.messages, t.bytes);
    }
    for (phase, t) in &report.summary.per_phase {
        println!("  phase {phase}: {} messages, {} bytes", t.messages, t.bytes);
    }
    for (line, kind) in &report.non_allowlisted {
        println!("line {line}: payload kind `{kind}` is not allowlisted");
    }
    for line in &report.inconsistent_bytes {
        println!("line {line}: byte count does not match dims");
    }
    println!("{}", if report.clean() { "clean" } else { "violations found" });
    Ok(report.clean())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, std::mem::take(&mut file.simulate)).map(|()| true),
        Command::Fit(a) => fit(a, std::mem::take(&mut file.fit)).map(|()| true),
        Command::InjectMissing(a) => inject(a, std::mem::take(&mut file.inject_missing)).map(|()| true),
        Command::Audit(a) => audit(a, std::mem::take(&mut file.audit)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
