use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use freqmask::audit::{audit_release, AuditError, AuditOptions, ReleaseMechanism, DEFAULT_CELL_BUDGET};
use freqmask::synth::{generate_synthetic, KeyColumn, SynthError, SynthSpec};
use freqmask::table::{
    aggregate_table, build_finest_table, ingest_csv_path, load_finest_table, query_cell, save_finest_table,
    write_atomic, AggregatedTable, AggregationRequest, CellQuery, FinestTable, HierarchySpec, IngestOptions,
    TableError, DEFAULT_KEY_THR,
};
use freqmask::Threshold;

const EXIT_VALIDATION: u8 = 1;
const EXIT_AUDIT_FAILED: u8 = 2;
const EXIT_IO: u8 = 3;

/// Frequency-table masking for hierarchical microdata.
#[derive(Debug, Parser)]
#[command(name = "freqmask", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and save the SCA-masked finest-level table from microdata.
    Build(BuildArgs),
    /// Write a masked coarser table and its information-loss summary.
    Aggregate(AggregateArgs),
    /// Print the masked frequency of a single cell.
    Query(QueryArgs),
    /// Attack every released cell of an aggregation and report exposures.
    Audit(AuditArgs),
    /// Generate seeded census-style microdata.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Microdata file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Hierarchical variables, coarse to fine unless --hkey-rank is given.
    #[arg(long, value_delimiter = ',', required = true)]
    hkey: Vec<String>,
    /// Rank of each --hkey variable, 1 = coarsest.
    #[arg(long, value_delimiter = ',')]
    hkey_rank: Option<Vec<u32>>,
    /// Key variables; defaults to every non-hierarchical column.
    #[arg(long, value_delimiter = ',')]
    key: Option<Vec<String>>,
    #[arg(long, default_value_t = Threshold::DEFAULT.get())]
    mask_thr: u64,
    /// Drop keys with more categories than this.
    #[arg(long, default_value_t = DEFAULT_KEY_THR)]
    key_thr: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = ',', value_parser = parse_delimiter)]
    delimiter: char,
    /// Directory to save the finest table in.
    #[arg(long, default_value = "full_tb")]
    output_tb: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Saved finest table.
    #[arg(long, default_value = "full_tb")]
    input: PathBuf,
    #[arg(long)]
    hkey_level: usize,
    /// Key variables to keep; empty gives per-unit totals.
    #[arg(long, value_delimiter = ',')]
    key: Vec<String>,
    #[arg(long, default_value = "agg_tb.csv")]
    output_tb: PathBuf,
    #[arg(long, default_value = "info_loss.csv")]
    output_il: PathBuf,
    #[arg(long, default_value_t = ',', value_parser = parse_delimiter)]
    delimiter: char,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long, default_value = "full_tb")]
    input: PathBuf,
    #[arg(long)]
    hkey_level: usize,
    /// Unit code at --hkey-level.
    #[arg(long)]
    hkey_value: String,
    #[arg(long, value_delimiter = ',')]
    key: Vec<String>,
    /// Either values parallel to --key, or name=value pairs.
    #[arg(long, value_delimiter = ',')]
    key_value: Vec<String>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long, default_value = "full_tb")]
    input: PathBuf,
    #[arg(long)]
    hkey_level: usize,
    #[arg(long, value_delimiter = ',')]
    key: Vec<String>,
    /// JSON report.
    #[arg(long, default_value = "audit.json")]
    output: PathBuf,
    /// Largest K^|S| attacked by brute force; bigger groups use the exact
    /// interval method.
    #[arg(long, default_value_t = DEFAULT_CELL_BUDGET)]
    cell_budget: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Audit SCA applied to group sums instead of iLBA.
    #[arg(long, hide = true)]
    unsafe_naive: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "synthetic.csv")]
    output: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    records: u64,
    #[arg(long, value_delimiter = ',', default_value = "LA1,LA2,LA3,OA")]
    hkey: Vec<String>,
    /// Number of units per hierarchy level, coarse to fine.
    #[arg(long, value_delimiter = ',', default_value = "1,5,78,2506")]
    level_units: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "gender,age,edu,mar,htype")]
    key: Vec<String>,
    /// Category count of each --key.
    #[arg(long, value_delimiter = ',', default_value = "2,18,9,5,21")]
    categories: Vec<u32>,
    /// Category weight is 1/rank^skew; larger means more small cells.
    #[arg(long, default_value_t = SynthSpec::default().skew)]
    skew: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_delimiter(s: &str) -> Result<char, String> {
    let s = if s == "\\t" { "\t" } else { s };
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii() => Ok(c),
        _ => Err(format!("delimiter must be one ASCII character, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.command {
        Command::Build(a) => run_build(a),
        Command::Aggregate(a) => run_aggregate(a),
        Command::Query(a) => run_query(a, cli.verbose > 0),
        Command::Audit(a) => run_audit(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_io(&e) { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}

fn is_io(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        if let Some(t) = c.downcast_ref::<TableError>() {
            t.is_io()
        } else if let Some(s) = c.downcast_ref::<SynthError>() {
            s.is_io()
        } else if let Some(AuditError::Table(t)) = c.downcast_ref::<AuditError>() {
            t.is_io()
        } else {
            c.is::<std::io::Error>()
        }
    })
}

fn load(path: &Path) -> Result<FinestTable> {
    let t = load_finest_table(path).with_context(|| format!("loading table from {}", path.display()))?;
    info!("loaded {} rows, K = {}", t.n_rows(), t.k());
    Ok(t)
}

fn run_build(a: BuildArgs) -> Result<ExitCode> {
    let k = Threshold::new(a.mask_thr)?;
    let hierarchy = HierarchySpec::new(a.hkey, a.hkey_rank)?;
    let mut opts = IngestOptions::new(hierarchy);
    opts.keys = a.key;
    opts.key_thr = a.key_thr;
    opts.delimiter = a.delimiter as u8;
    let data = ingest_csv_path(&a.input, &opts)?;
    let table = build_finest_table(&data, k, a.seed)?;
    save_finest_table(&table, &a.output_tb)?;

    println!("Hierarchical variables (level: name):");
    for (i, name) in table.hierarchy().levels().iter().enumerate() {
        println!("  {}: {name}", i + 1);
    }
    let keys = &table.keys().names;
    let depth = table.depth();
    let described: Vec<String> = keys
        .iter()
        .zip(&table.dims()[depth..])
        .map(|(n, d)| format!("{n} ({})", d.cardinality()))
        .collect();
    println!("Key variables: {}", described.join(", "));
    if !table.keys().excluded.is_empty() {
        println!(
            "Excluded (over {} categories): {}",
            table.keys().key_thr,
            table.keys().excluded.join(", ")
        );
    }
    println!("Masking threshold K: {}", k);
    println!("Records: {}  Finest rows: {}", data.n_records(), table.n_rows());
    println!("Saved to: {}", a.output_tb.display());
    Ok(ExitCode::SUCCESS)
}

fn run_aggregate(a: AggregateArgs) -> Result<ExitCode> {
    let table = load(&a.input)?;
    let agg = aggregate_table(&table, &AggregationRequest::new(a.hkey_level, a.key))?;
    let delim = a.delimiter as u8;

    let mut buf = Vec::new();
    agg.write_csv(&mut buf, delim)?;
    write_atomic(&a.output_tb, &buf)?;
    let loss = agg.info_loss();
    buf.clear();
    loss.write_csv(&mut buf, delim)?;
    write_atomic(&a.output_il, &buf)?;

    println!("Header of aggregated masked table");
    print_preview(&agg, 6);
    println!();
    println!("Distribution of information loss");
    println!("{loss}");
    println!();
    println!("Saved {} rows to {}", agg.rows.len(), a.output_tb.display());
    println!("Saved loss summary to {}", a.output_il.display());
    Ok(ExitCode::SUCCESS)
}

fn print_preview(agg: &AggregatedTable, n: usize) {
    let mut lines: Vec<Vec<String>> = vec![agg
        .column_names()
        .chain(["N_masked", "type1", "type2"])
        .map(String::from)
        .collect()];
    for row in agg.rows.iter().take(n) {
        let mut l: Vec<String> = agg.labels(row).map(String::from).collect();
        l.push(row.masked_count.to_string());
        l.push(u8::from(row.type1()).to_string());
        l.push(u8::from(row.type2()).to_string());
        lines.push(l);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    for l in &lines {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        println!("  {}", cells.join(" ").trim_end());
    }
}

/// Pairs --key with --key-value, accepting `name=value` or positional values.
fn key_assignments(keys: &[String], values: &[String]) -> Result<Vec<(String, String)>> {
    let named: Vec<Option<(&str, &str)>> = values.iter().map(|v| v.split_once('=')).collect();
    if !named.is_empty() && named.iter().all(Option::is_some) {
        let pairs: Vec<(String, String)> = named
            .into_iter()
            .flatten()
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        if !keys.is_empty() {
            let mut a: Vec<&str> = keys.iter().map(String::as_str).collect();
            let mut b: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).collect();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                bail!("--key {keys:?} does not match the keys named in --key-value");
            }
        }
        return Ok(pairs);
    }
    if named.iter().any(Option::is_some) {
        bail!("--key-value must be all name=value pairs or all plain values");
    }
    if keys.len() != values.len() {
        bail!("{} keys but {} key values", keys.len(), values.len());
    }
    Ok(keys.iter().cloned().zip(values.iter().cloned()).collect())
}

fn run_query(a: QueryArgs, verbose: bool) -> Result<ExitCode> {
    let keys = key_assignments(&a.key, &a.key_value)?;
    let table = load(&a.input)?;
    let q = CellQuery {
        level: a.hkey_level,
        unit: a.hkey_value,
        keys,
    };
    let ans = query_cell(&table, &q)?;
    println!("{}", ans.masked_count);
    if verbose {
        let p = &ans.partition;
        eprintln!("finest rows matched: {}", ans.matched_rows);
        eprintln!(
            "small cells: |S0| = {}, |SK| = {}; large-cell sum = {}",
            p.s0_size, p.sk_size, p.f_large
        );
        eprintln!("case: {:?}, shift: {:?}", ans.trace.case, ans.trace.shift());
        if let Some(s) = &ans.trace.steps {
            eprintln!(
                "centre {} -> {}{}",
                s.center1,
                s.center2,
                if s.post_processed { " (post-processed)" } else { "" }
            );
        }
        eprintln!("masked small-cell sum: {}", ans.trace.masked_small);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_audit(a: AuditArgs) -> Result<ExitCode> {
    let table = load(&a.input)?;
    let mechanism = if a.unsafe_naive {
        warn!("auditing SCA applied to group sums; this release is not safe to publish");
        ReleaseMechanism::NaiveScaOfSum { seed: a.seed }
    } else {
        ReleaseMechanism::Ilba
    };
    let opts = AuditOptions {
        mechanism,
        cell_budget: a.cell_budget,
    };
    let report = audit_release(&table, &AggregationRequest::new(a.hkey_level, a.key), &opts)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&a.output, &json)?;

    let s = &report.summary;
    println!("Mechanism: {}  K: {}", s.mechanism, s.k);
    println!(
        "Released cells: {}  audited (two or more small cells): {}",
        s.cells, s.audited
    );
    match s.min_ambiguity {
        Some(m) => println!("Smallest number of plausible small-cell sums: {m}"),
        None => println!("No cell has two or more small cells"),
    }
    println!("Failed cells: {}", s.failed);
    for c in report.failures().take(10) {
        println!(
            "  {}: released {}, {} of {} small cells exposed, {} plausible sums",
            c.group.join(" "),
            c.released,
            c.sk_violations + c.s0_violations,
            c.s0_size + c.sk_size,
            c.ambiguity
        );
    }
    println!("Report: {}", a.output.display());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_AUDIT_FAILED)
    })
}

fn run_synth(a: SynthArgs) -> Result<ExitCode> {
    if a.key.len() != a.categories.len() {
        bail!("{} keys but {} category counts", a.key.len(), a.categories.len());
    }
    let spec = SynthSpec {
        records: a.records,
        hierarchy: a.hkey,
        level_units: a.level_units,
        keys: a
            .key
            .into_iter()
            .zip(a.categories)
            .map(|(name, categories)| KeyColumn { name, categories })
            .collect(),
        skew: a.skew,
        seed: a.seed,
    };
    let mut buf = Vec::new();
    generate_synthetic(&spec, &mut buf)?;
    write_atomic(&a.output, &buf)?;
    println!("Wrote {} records to {}", spec.records, a.output.display());
    Ok(ExitCode::SUCCESS)
}
