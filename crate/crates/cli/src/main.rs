//! `fidsta`: batch front end for the rank-statistics fidelity toolkit.
//!
//! Exit codes: 0 success, 2 input parse error, 3 estimation failure,
//! 4 configuration error, 1 anything else.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fidsta_core::estimator::{estimate, EstimationResult, EstimatorOptions, LikelihoodCurve, Method, RankSelection};
use fidsta_core::io::{ingest_headerless, to_canonical_json, to_record, write_json, Dataset, ShotFormat, Table};
use fidsta_core::noise::{DeformedRankPdf, JacobianMode, NoiseModel};
use fidsta_core::orderstat::{second_moment, Dims, FormPolicy, PdfForm, RankPdf};
use fidsta_core::simulator::{
    default_shot_ceiling, error_scaling_experiment, min_shots_bisection, simulate, Probe, ShotLaw, SimConfig,
    SuccessStatistic,
};
use fidsta_core::{Error, Result};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fidsta", version, about = "Fidelity estimation from top-ranked bitstring statistics")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Density of the k-th largest probability on a grid, as CSV `x,pdf`.
    Dist(DistArgs),
    /// Closed-form rank moments, as CSV `k,mean,second_moment,variance`.
    Moments(MomentsArgs),
    /// Maximum-likelihood fidelity from a records file.
    Estimate(EstimateArgs),
    /// Count-MLE trials on synthetic data, as CSV `trial,f_hat,rel_error`.
    Simulate(SimulateArgs),
    /// Smallest shot count meeting a relative-error threshold.
    MinShots(MinShotsArgs),
    /// Estimator error against qubit count, as CSV `n_qubits,mean_error,std_error`.
    Scaling(ScalingArgs),
    /// Shot files to a records file.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    Auto,
    Exact,
    Approx,
}

impl From<FormArg> for FormPolicy {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Auto => FormPolicy::Auto,
            FormArg::Exact => FormPolicy::Exact,
            FormArg::Approx => FormPolicy::Approx,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl From<Toggle> for JacobianMode {
    fn from(t: Toggle) -> Self {
        match t {
            Toggle::On => JacobianMode::WithJacobian,
            Toggle::Off => JacobianMode::PaperLiteral,
        }
    }
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long)]
    n_qubits: u32,
    #[arg(long)]
    rank: u64,
    #[arg(long, value_enum, default_value = "auto")]
    form: FormArg,
    /// Number of grid points.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Deform the density with a depolarizing channel of this fidelity.
    #[arg(long)]
    fidelity: Option<f64>,
    #[arg(long, value_enum, default_value = "on")]
    jacobian: Toggle,
    /// Right end of the grid; defaults to the support edge (exact) or far
    /// into the tail (approximate).
    #[arg(long)]
    x_max: Option<f64>,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[arg(long)]
    n_qubits: u32,
    /// `a..b` or a comma list.
    #[arg(long)]
    ranks: RankSelection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Prob,
    Count,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Prob => Method::ProbabilityMle,
            MethodArg::Count => Method::CountMle,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    /// One estimate per selected rank, combining all circuits.
    FixedRank,
    /// One estimate per circuit, combining the selected ranks.
    PerCircuit,
    /// A single estimate over all circuits and selected ranks.
    Combined,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Records file written by `fidsta ingest`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "prob")]
    method: MethodArg,
    #[arg(long, default_value = "1..20")]
    ranks: RankSelection,
    #[arg(long, value_enum, default_value = "per-circuit")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "on")]
    jacobian: Toggle,
    #[arg(long, value_enum, default_value = "auto")]
    form: FormArg,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Also write each likelihood curve as CSV `f,loglik`; with several
    /// estimates the label is appended to the file stem.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LawArg {
    Poisson,
    Binomial,
}

impl From<LawArg> for ShotLaw {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::Poisson => ShotLaw::Poisson,
            LawArg::Binomial => ShotLaw::Binomial,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n_qubits: u32,
    #[arg(long)]
    fidelity: f64,
    #[arg(long)]
    shots: u64,
    #[arg(long, default_value_t = 500)]
    top_k: u64,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, value_enum, default_value = "poisson")]
    law: LawArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatisticArg {
    Mean,
    Median,
}

impl From<StatisticArg> for SuccessStatistic {
    fn from(s: StatisticArg) -> Self {
        match s {
            StatisticArg::Mean => SuccessStatistic::Mean,
            StatisticArg::Median => SuccessStatistic::Median,
        }
    }
}

#[derive(Debug, Args)]
struct MinShotsArgs {
    #[arg(long)]
    n_qubits: u32,
    #[arg(long)]
    fidelity: f64,
    #[arg(long, default_value_t = 0.1)]
    eps_rel: f64,
    #[arg(long, default_value_t = 200)]
    trials: u64,
    #[arg(long, default_value_t = 500)]
    top_k: u64,
    /// Lower bracket; defaults to 2^N/(4N).
    #[arg(long)]
    s_lo: Option<u64>,
    /// Upper bracket, doubled until it succeeds; defaults to 2^N/N.
    #[arg(long)]
    s_hi: Option<u64>,
    /// Largest shot count tried; defaults to 2^(N+4).
    #[arg(long)]
    ceiling: Option<u64>,
    #[arg(long, value_enum, default_value = "mean")]
    statistic: StatisticArg,
    #[arg(long, value_enum, default_value = "poisson")]
    law: LawArg,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long, default_value_t = 12)]
    n_min: u32,
    #[arg(long, default_value_t = 28)]
    n_max: u32,
    #[arg(long, default_value_t = 4)]
    n_step: u32,
    #[arg(long, default_value_t = 0.48)]
    fidelity: f64,
    #[arg(long, default_value = "1,2,3,5,6")]
    ranks: RankSelection,
    /// Haar realizations per qubit count.
    #[arg(long, default_value_t = 10)]
    records: u64,
    #[arg(long, value_enum, default_value = "on")]
    jacobian: Toggle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Counts,
    Shots,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Shot files, one circuit each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "counts")]
    format: FormatArg,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// Read headerless one-bitstring-per-line files of this width; circuit
    /// ids are taken from the file stems.
    #[arg(long)]
    raw_n_qubits: Option<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(4),
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Parse { kind, .. } = &e {
                eprintln!("code: {}", kind.code());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Dist(a) => emit_table(out, &dist(a)?),
        Command::Moments(a) => emit_table(out, &moments(a)?),
        Command::Estimate(a) => estimate_cmd(a, out),
        Command::Simulate(a) => emit_table(out, &simulate_cmd(a, cli.seed)?),
        Command::MinShots(a) => emit_json(out, &min_shots_cmd(a, cli.seed)?),
        Command::Scaling(a) => emit_table(out, &scaling_cmd(a, cli.seed)?),
        Command::Ingest(a) => emit_json(out, &ingest_cmd(a)?),
    }
}

fn emit_table(out: Option<&Path>, table: &Table) -> Result<()> {
    match out {
        Some(p) => table.write(p),
        None => write_stdout(&table.to_csv()?),
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => write_stdout(&to_canonical_json(value)?),
    }
}

fn write_stdout(text: &str) -> Result<()> {
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })
}

fn dist(a: &DistArgs) -> Result<Table> {
    let dims = Dims::new(a.n_qubits)?;
    if a.grid < 2 {
        return Err(Error::Config("--grid needs at least 2 points".into()));
    }
    let form = FormPolicy::from(a.form).resolve(dims);
    let base = RankPdf::new(dims, a.rank, form)?;
    let x_max = a.x_max.unwrap_or_else(|| match form {
        PdfForm::ExactSeries => base.support_max(),
        PdfForm::LargeDApprox => {
            let d = dims.dim_f64();
            ((d / a.rank as f64).ln() + 40.0).min(d - 2.0) / (d - 2.0)
        }
    });
    if !(x_max > 0.0 && x_max <= 1.0) {
        return Err(Error::Config(format!("--x-max {x_max} outside (0, 1]")));
    }
    let mut table = Table::new(vec!["x", "pdf"]);
    let step = |i: usize| i as f64 / (a.grid - 1) as f64;
    match a.fidelity {
        None => {
            for i in 0..a.grid {
                let x = x_max * step(i);
                table.push(vec![x.into(), base.pdf(x)?.into()]);
            }
        }
        Some(f) => {
            let noise = NoiseModel::new(f)?;
            let def = DeformedRankPdf::new(base, noise, a.jacobian.into());
            let lo = noise.offset(dims);
            let hi = f * x_max + lo;
            for i in 0..a.grid {
                let x = lo + (hi - lo) * step(i);
                table.push(vec![x.into(), def.pdf(x)?.into()]);
            }
        }
    }
    Ok(table)
}

fn moments(a: &MomentsArgs) -> Result<Table> {
    let dims = Dims::new(a.n_qubits)?;
    let mut table = Table::new(vec!["k", "mean", "second_moment", "variance"]);
    for &k in a.ranks.ranks() {
        let m = second_moment(dims, k)?;
        table.push(vec![k.into(), m.mean.into(), m.second_moment.into(), m.variance.into()]);
    }
    Ok(table)
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    n_qubits: u32,
    results: Vec<EstimationResult>,
}

fn estimate_cmd(a: &EstimateArgs, out: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(&a.input)?;
    let method = Method::from(a.method);
    let mut opts = EstimatorOptions {
        jacobian: a.jacobian.into(),
        form: a.form.into(),
        ..EstimatorOptions::default()
    };
    opts.maximize.grid_points = a.grid;

    let mut runs: Vec<(String, EstimationResult, LikelihoodCurve)> = Vec::new();
    match a.mode {
        ModeArg::FixedRank => {
            for &k in a.ranks.ranks() {
                let (r, c) = estimate(&ds.records, &RankSelection::single(k)?, ds.dims, method, &opts)?;
                runs.push((format!("k{k}"), r, c));
            }
        }
        ModeArg::PerCircuit => {
            for rec in &ds.records {
                let (r, c) = estimate(std::slice::from_ref(rec), &a.ranks, ds.dims, method, &opts)?;
                runs.push((rec.circuit_id().to_owned(), r, c));
            }
        }
        ModeArg::Combined => {
            let (r, c) = estimate(&ds.records, &a.ranks, ds.dims, method, &opts)?;
            runs.push(("all".into(), r, c));
        }
    }
    for (label, r, _) in &runs {
        log::info!("{label}: f_hat = {:.6}", r.f_hat);
    }

    if let Some(path) = &a.curve {
        let single = runs.len() == 1;
        for (label, _, curve) in &runs {
            let target = if single { path.clone() } else { labelled_path(path, label) };
            curve_table(curve).write(&target)?;
        }
    }
    emit_json(
        out,
        &EstimateReport {
            n_qubits: ds.dims.n_qubits(),
            results: runs.into_iter().map(|(_, r, _)| r).collect(),
        },
    )
}

fn labelled_path(path: &Path, label: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-{label}.{ext}"),
        None => format!("{stem}-{label}"),
    };
    path.with_file_name(name)
}

fn curve_table(curve: &LikelihoodCurve) -> Table {
    let mut t = Table::new(vec!["f", "loglik"]);
    for &(f, v) in &curve.grid {
        t.push(vec![f.into(), v.into()]);
    }
    t
}

fn simulate_cmd(a: &SimulateArgs, seed: u64) -> Result<Table> {
    let mut cfg = SimConfig::new(Dims::new(a.n_qubits)?, a.fidelity, a.shots, a.top_k, a.trials, seed)?;
    cfg.law = a.law.into();
    let mut t = Table::new(vec!["trial", "f_hat", "rel_error"]);
    for o in simulate(&cfg)? {
        t.push(vec![o.trial.into(), o.f_hat.into(), o.rel_error.into()]);
    }
    Ok(t)
}

#[derive(Debug, Serialize)]
struct MinShotsReport {
    n_qubits: u32,
    fidelity: f64,
    eps_rel: f64,
    top_k: u64,
    trials: u64,
    seed: u64,
    statistic: SuccessStatistic,
    law: ShotLaw,
    /// 2^N / N.
    reference_shots: u64,
    min_shots: u64,
    probes: Vec<Probe>,
}

fn min_shots_cmd(a: &MinShotsArgs, seed: u64) -> Result<MinShotsReport> {
    let dims = Dims::new(a.n_qubits)?;
    let reference = (dims.dim() / a.n_qubits as u64).max(2);
    let mut cfg = SimConfig::new(dims, a.fidelity, 1, a.top_k, a.trials, seed)?;
    cfg.eps_rel = a.eps_rel;
    cfg.statistic = a.statistic.into();
    cfg.law = a.law.into();
    let s_hi = a.s_hi.unwrap_or(reference);
    let s_lo = a.s_lo.unwrap_or((reference / 4).max(1));
    let ceiling = a.ceiling.unwrap_or_else(|| default_shot_ceiling(dims));
    let r = min_shots_bisection(&cfg, s_lo, s_hi, ceiling)?;
    Ok(MinShotsReport {
        n_qubits: a.n_qubits,
        fidelity: a.fidelity,
        eps_rel: a.eps_rel,
        top_k: a.top_k,
        trials: a.trials,
        seed,
        statistic: cfg.statistic,
        law: cfg.law,
        reference_shots: reference,
        min_shots: r.min_shots,
        probes: r.probes,
    })
}

fn scaling_cmd(a: &ScalingArgs, seed: u64) -> Result<Table> {
    if a.n_step == 0 || a.n_min > a.n_max {
        return Err(Error::Config("need n_min <= n_max and n_step > 0".into()));
    }
    let ns: Vec<u32> = (a.n_min..=a.n_max).step_by(a.n_step as usize).collect();
    let opts = EstimatorOptions {
        jacobian: a.jacobian.into(),
        ..EstimatorOptions::default()
    };
    let rows = error_scaling_experiment(&ns, a.fidelity, &a.ranks, a.records, seed, &opts)?;
    let mut t = Table::new(vec!["n_qubits", "mean_error", "std_error"]);
    for r in rows {
        t.push(vec![r.n_qubits.into(), r.mean_error.into(), r.std_error.into()]);
    }
    Ok(t)
}

fn ingest_cmd(a: &IngestArgs) -> Result<Dataset> {
    match a.raw_n_qubits {
        None => {
            let format = match a.format {
                FormatArg::Counts => ShotFormat::BitstringCounts,
                FormatArg::Shots => ShotFormat::ShotList,
            };
            Dataset::from_files(&a.inputs, format, a.top_k)
        }
        Some(n) => {
            let mut records = Vec::with_capacity(a.inputs.len());
            let mut provenance = Vec::with_capacity(a.inputs.len());
            for p in &a.inputs {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("circuit");
                let raw = ingest_headerless(p, n, id)?;
                records.push(to_record(&raw, a.top_k)?);
                let bytes = std::fs::read(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                provenance.push(fidsta_core::io::digest(p, &bytes));
            }
            Dataset::new(Dims::new(n)?, records, provenance)
        }
    }
}
