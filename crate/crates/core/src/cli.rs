//! The `mpgemmfi` command line.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 usage, config
//! or input error. Machine-readable output goes to stdout, diagnostics to
//! stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::campaign::{guard_efficacy, run_bit_sweep, run_campaign, summarize, Campaign, CampaignConfig};
use crate::config::{load_config, ResolvedConfig};
use crate::fault::{sample_bits, trial_rng, BitMode, FaultSite, FaultSpec};
use crate::fp_codec::FpFormat;
use crate::guard::GuardKind;
use crate::record::{read_jsonl, write_jsonl, Outcome, TrialRecord};
use crate::verify::run_suites;
use crate::workload::{ValueDistribution, WorkloadSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MPGEMMFI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mpgemmfi", version, about = "Fault injection for simulated tensor-core GEMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a fault-injection campaign and write records.jsonl and summary.json.
    Campaign(CampaignArgs),
    /// Run one trial and print its record.
    Inject(InjectArgs),
    /// Compare mean accuracy loss with and without each guard (bf16 mlp).
    Guards(CampaignArgs),
    /// Tabulate a record file.
    Analyze(AnalyzeArgs),
    /// Run the mapping, HMMA, GEMM and codec self-tests.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Inline {
    /// fp16, bf16 or tf32.
    #[arg(long)]
    format: Option<FpFormat>,
    /// `mlp`, `mlp:64-128-64-10`, `gemm` or `gemm:MxNxK[:uniform|normal|integer]`.
    #[arg(long)]
    workload: Option<String>,
    /// Seed of the workload's data and weights.
    #[arg(long)]
    workload_seed: Option<u64>,
    /// Number of flipped bits: 1, 2 or 4.
    #[arg(long)]
    bits: Option<u32>,
    /// Fixed bit position (single-bit faults).
    #[arg(long)]
    position: Option<u32>,
    #[arg(long)]
    guard: Option<GuardKind>,
    /// Master seed of the site sampler.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// TOML config; excludes the inline flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    inline: Inline,
    #[arg(long)]
    trials: Option<usize>,
    /// Sweep every bit position with `trials` trials each.
    #[arg(long)]
    sweep: bool,
    /// Relative tolerance of the output comparison; 0 is bit-exact.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InjectArgs {
    #[command(flatten)]
    inline: Inline,
    /// Pins the site, e.g. `instr=3,lane=5,dreg=1,term=7`.
    #[arg(long)]
    site: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Zerodiff,
    Ecdf,
    Bitpos,
    Guard,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// One or more records.jsonl files.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, value_enum)]
    report: Report,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Defaults to all three formats.
    #[arg(long)]
    format: Option<FpFormat>,
    #[arg(long, hide = true)]
    corrupt_map: bool,
}

/// A failed command: message for stderr and exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

type CmdResult = Result<u8, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(pool) => pool,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            return f.code;
        }
    };
    let mut out = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::Campaign(a) => cmd_campaign(a, &mut out),
        Command::Inject(a) => cmd_inject(a, &mut out),
        Command::Guards(a) => cmd_guards(a, &mut out),
        Command::Analyze(a) => cmd_analyze(a, &mut out),
        Command::Verify(a) => cmd_verify(a, &mut out),
    });
    if let Err(e) = stdout.write_all(&out).and_then(|_| stdout.flush()) {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_FAILURE;
    }
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| usage(e.to_string()))
}

/// Parses `mlp`, `mlp:D0-D1-..`, `gemm` and `gemm:MxNxK[:dist]`.
/// `seed` defaults to 42 for the mlp and 0 for a gemm.
pub fn parse_workload(s: &str, format: FpFormat, seed: Option<u64>) -> Result<WorkloadSpec, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "mlp" => {
            let mut spec = WorkloadSpec::default_mlp(format);
            spec.seed = seed.unwrap_or(spec.seed);
            if !rest.is_empty() {
                let dims = rest
                    .split('-')
                    .map(|d| d.parse::<usize>().map_err(|_| format!("bad layer dim `{d}` in `{s}`")))
                    .collect::<Result<Vec<_>, _>>()?;
                if let crate::workload::WorkloadKind::Mlp { layer_dims, .. } = &mut spec.kind {
                    *layer_dims = dims;
                }
            }
            Ok(spec)
        }
        "gemm" => {
            let (dims, dist) = rest.split_once(':').unwrap_or((rest, "uniform"));
            let dims = if dims.is_empty() { "64x32x64" } else { dims };
            let parsed = dims
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| format!("bad extent `{d}` in `{s}`")))
                .collect::<Result<Vec<_>, _>>()?;
            let [m, n, k] = parsed[..] else {
                return Err(format!("expected MxNxK in `{s}`"));
            };
            let dist: ValueDistribution = dist
                .parse()
                .map_err(|e: crate::workload::WorkloadError| e.to_string())?;
            Ok(WorkloadSpec::random_gemm(format, (m, n, k), dist, seed.unwrap_or(0)))
        }
        _ => Err(format!("unknown workload `{s}` (expected mlp or gemm)")),
    }
}

impl Inline {
    fn any_set(&self) -> bool {
        self.format.is_some()
            || self.workload.is_some()
            || self.workload_seed.is_some()
            || self.bits.is_some()
            || self.position.is_some()
            || self.guard.is_some()
            || self.seed.is_some()
    }

    fn fault_spec(&self) -> Result<FaultSpec, Failure> {
        let bits = self.bits.unwrap_or(1);
        let mode = self.position.map_or(BitMode::RandomPositions, BitMode::FixedPosition);
        FaultSpec::new(bits, mode).map_err(|e| usage(format!("--bits: {e}")))
    }

    fn config(&self, trials: usize, tolerance: f64) -> Result<CampaignConfig, Failure> {
        let format = self
            .format
            .ok_or_else(|| usage("--format is required without --config"))?;
        let workload = parse_workload(self.workload.as_deref().unwrap_or("gemm"), format, self.workload_seed)
            .map_err(|e| usage(format!("--workload: {e}")))?;
        let cfg = CampaignConfig::new(workload, self.fault_spec()?, trials, self.seed.unwrap_or(0))
            .with_guard(self.guard.unwrap_or(GuardKind::None))
            .with_tolerance(tolerance);
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

fn resolve_campaign(a: &CampaignArgs) -> Result<ResolvedConfig, Failure> {
    match &a.config {
        Some(path) => {
            if a.inline.any_set() || a.trials.is_some() || a.sweep || a.tolerance.is_some() {
                return Err(usage("--config cannot be combined with inline campaign flags"));
            }
            load_config(path).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        None => {
            let mut campaign = a.inline.config(a.trials.unwrap_or(1000), a.tolerance.unwrap_or(0.0))?;
            if a.sweep {
                if a.inline.position.is_some() || campaign.fault.n_bits() != 1 {
                    return Err(usage("--sweep takes single-bit faults without --position"));
                }
                campaign.fault = FaultSpec::fixed(0);
            }
            Ok(ResolvedConfig {
                campaign,
                sweep: a.sweep,
            })
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

fn cmd_campaign(a: CampaignArgs, stdout: &mut dyn Write) -> CmdResult {
    let resolved = resolve_campaign(&a)?;
    let (records, summary) = if resolved.sweep {
        run_bit_sweep(&resolved.campaign)
    } else {
        run_campaign(&resolved.campaign)
    }
    .map_err(usage)?;

    fs::create_dir_all(&a.out).map_err(|e| usage(format!("creating {}: {e}", a.out.display())))?;
    let records_path = a.out.join("records.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).expect("writing to memory");
    write_file(&records_path, &buf)?;
    let summary_path = a.out.join("summary.json");
    write_file(&summary_path, to_json(&summary).as_bytes())?;
    let mut written = vec![records_path, summary_path];
    let ecdf_path = a.out.join("ecdf.csv");
    write_file(&ecdf_path, summary.ecdf_csv().as_bytes())?;
    written.push(ecdf_path);
    if let Some(csv) = summary.bitpos_csv() {
        let path = a.out.join("bitpos.csv");
        write_file(&path, csv.as_bytes())?;
        written.push(path);
    }
    for p in written {
        writeln!(stdout, "{}", p.display()).map_err(io_failure)?;
    }
    Ok(EXIT_OK)
}

fn io_failure(e: io::Error) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: e.to_string(),
    }
}

/// Parses `instr=..,lane=..,dreg=..,term=..`; all four keys are required.
pub fn parse_site(s: &str) -> Result<[usize; 4], String> {
    let keys = ["instr", "lane", "dreg", "term"];
    let mut values = [None; 4];
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let idx = keys
            .iter()
            .position(|&key| key == k.trim())
            .ok_or_else(|| format!("unknown site key `{k}` (expected instr, lane, dreg, term)"))?;
        let v = v
            .trim()
            .parse()
            .map_err(|_| format!("`{k}` needs a non-negative integer, got `{v}`"))?;
        if values[idx].replace(v).is_some() {
            return Err(format!("`{k}` given twice"));
        }
    }
    let mut out = [0; 4];
    for (i, key) in keys.iter().enumerate() {
        out[i] = values[i].ok_or_else(|| format!("missing `{key}`"))?;
    }
    Ok(out)
}

fn cmd_inject(a: InjectArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = a.inline.config(1, a.tolerance.unwrap_or(0.0))?;
    let campaign = Campaign::new(cfg.clone()).map_err(usage)?;
    let site = match &a.site {
        None => campaign.site(0),
        Some(s) => {
            let [instr_index, lane, dreg, term_k] = parse_site(s).map_err(|e| usage(format!("--site: {e}")))?;
            let mut rng = trial_rng(cfg.master_seed, 0);
            let site = FaultSite {
                instr_index,
                lane,
                dreg,
                term_k,
                bits: sample_bits(&mut rng, &cfg.fault, cfg.workload.format),
            };
            campaign
                .workload()
                .site_space()
                .check(&site)
                .map_err(|e| usage(format!("--site: {e}")))?;
            site
        }
    };
    let result = campaign.run_trial_at(0, &site, cfg.guard).map_err(usage)?;
    writeln!(stdout, "{}", result.record.to_json_line()).map_err(io_failure)?;
    Ok(EXIT_OK)
}

fn cmd_guards(a: CampaignArgs, stdout: &mut dyn Write) -> CmdResult {
    let resolved = resolve_campaign(&a)?;
    if resolved.sweep {
        return Err(usage("guard comparison does not take a bit sweep"));
    }
    let guards = [
        GuardKind::BoundCheck,
        GuardKind::RangeCheckMax,
        GuardKind::RangeCheckFlip,
    ];
    let report = guard_efficacy(&resolved.campaign.with_guard(GuardKind::None), &guards).map_err(usage)?;
    stdout.write_all(to_json(&report).as_bytes()).map_err(io_failure)?;
    Ok(EXIT_OK)
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<TrialRecord>, Failure> {
    let mut records = Vec::new();
    for path in paths {
        let file = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut more = read_jsonl(BufReader::new(file)).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        records.append(&mut more);
    }
    if records.is_empty() {
        return Err(usage("no records"));
    }
    let format = records[0].format;
    if let Some(other) = records.iter().find(|r| r.format != format) {
        return Err(usage(format!(
            "mixed formats: trial {} is {} but trial {} is {}",
            records[0].trial_id, format, other.trial_id, other.format
        )));
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
struct GuardRow {
    guard: GuardKind,
    trials: usize,
    detections: usize,
    detection_rate: f64,
    sdc_rate: f64,
    mean_metric_delta: Option<f64>,
}

/// Renders one analysis table from records.
fn analyze(records: &[TrialRecord], report: Report) -> Result<String, Failure> {
    let format: FpFormat = records[0].format;
    match report {
        Report::Zerodiff => {
            let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for r in records {
                let g = groups.entry(r.site.bits.len()).or_default();
                g.0 += 1;
                g.1 += (r.diff == 0.0) as usize;
            }
            let mut out = String::from("format,n_bits,trials,zero_diff,zero_diff_pct\n");
            for (bits, (n, zero)) in groups {
                let pct = 100.0 * zero as f64 / n as f64;
                out.push_str(&format!("{format},{bits},{n},{zero},{pct}\n"));
            }
            Ok(out)
        }
        Report::Ecdf => Ok(summarize(records, false).map_err(usage)?.ecdf_csv()),
        Report::Bitpos => {
            let summary = summarize(records, true).map_err(usage)?;
            Ok(summary.bitpos_csv().expect("per-bit map requested"))
        }
        Report::Guard => {
            let mut groups: BTreeMap<GuardKind, Vec<&TrialRecord>> = BTreeMap::new();
            for r in records {
                groups.entry(r.guard.kind).or_default().push(r);
            }
            let rows: Vec<GuardRow> = groups
                .into_iter()
                .map(|(guard, rs)| {
                    let n = rs.len();
                    let detections = rs.iter().filter(|r| r.guard.detected).count();
                    let sdc = rs.iter().filter(|r| r.outcome == Outcome::Sdc).count();
                    let deltas: Vec<f64> = rs.iter().filter_map(|r| r.metric_delta).collect();
                    GuardRow {
                        guard,
                        trials: n,
                        detections,
                        detection_rate: detections as f64 / n as f64,
                        sdc_rate: sdc as f64 / n as f64,
                        mean_metric_delta: (!deltas.is_empty())
                            .then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
                    }
                })
                .collect();
            Ok(to_json(&rows))
        }
    }
}

fn cmd_analyze(a: AnalyzeArgs, stdout: &mut dyn Write) -> CmdResult {
    let records = load_records(&a.records)?;
    let table = analyze(&records, a.report)?;
    match &a.out {
        Some(path) => {
            write_file(path, table.as_bytes())?;
            writeln!(stdout, "{}", path.display()).map_err(io_failure)?;
        }
        None => stdout.write_all(table.as_bytes()).map_err(io_failure)?,
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: VerifyArgs, stdout: &mut dyn Write) -> CmdResult {
    let formats = a.format.map_or(FpFormat::ALL.to_vec(), |f| vec![f]);
    let mut all_passed = true;
    for f in formats {
        for r in run_suites(f, a.corrupt_map) {
            all_passed &= r.passed;
            writeln!(stdout, "{r}").map_err(io_failure)?;
        }
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_FAILURE })
}
