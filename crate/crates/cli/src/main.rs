mod manifest;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use splicequant::distributions::{fit_distributions, read_distributions, write_length_pmf, write_start_cdf, DEFAULT_MIN_EXON_LEN};
use splicequant::genome::load_islands;
use splicequant::inference::{EmOptions, MhOptions};
use splicequant::pathing::{count_paths, open_fragments, read_path_counts, write_path_counts, write_unmapped, FragmentAlignment, IslandIndex, PathCountTable};
use splicequant::quantify::{failure_fraction, quantify_all, write_estimates, write_prob_dump, write_samples, QuantifyOptions, DEFAULT_DIGITS};
use splicequant::simulate::{run_simulation, write_report, write_summary, SimConfig};
use splicequant::{simulate, Error};

use manifest::RunManifest;

const EXIT_INPUT: u8 = 2;
const EXIT_NO_DATA: u8 = 3;
const EXIT_TOO_MANY_FAILURES: u8 = 4;

#[derive(Parser)]
#[command(name = "splicequant", version, about = "Quantify splicing variants from paired-end exon paths")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "SPLICEQUANT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count exon paths per gene island
    CountPaths(CountPathsArgs),
    /// Fit fragment length and relative start distributions
    FitDist(FitDistArgs),
    /// Estimate variant proportions per island
    Quantify(QuantifyArgs),
    /// Simulate fragments from known proportions and score the estimator
    Simulate(SimulateArgs),
}

#[derive(Args, Serialize)]
struct CountPathsArgs {
    #[arg(long)]
    annotation: PathBuf,
    #[arg(long)]
    fragments: PathBuf,
    /// Path counts TSV; the unmapped report goes to `<out>.unmapped.tsv`
    #[arg(long)]
    out: PathBuf,
    /// Per-end read length (default: longest aligned end)
    #[arg(long)]
    read_length: Option<i64>,
}

#[derive(Args, Serialize)]
struct FitDistArgs {
    #[arg(long)]
    annotation: PathBuf,
    #[arg(long)]
    fragments: PathBuf,
    #[arg(long)]
    out_length: PathBuf,
    #[arg(long)]
    out_start: PathBuf,
    /// Only exon pieces longer than this contribute fragment lengths
    #[arg(long, default_value_t = DEFAULT_MIN_EXON_LEN)]
    min_exon_len: i64,
    /// Transcript-length bin edges, e.g. 3000,5000
    #[arg(long, value_delimiter = ',')]
    bins: Vec<i64>,
    /// Skip single-variant genes with fewer fragments than this
    #[arg(long, default_value_t = 1)]
    min_fragments: usize,
    #[arg(long)]
    read_length: Option<i64>,
}

#[derive(Args, Serialize)]
struct QuantifyArgs {
    #[arg(long)]
    annotation: PathBuf,
    /// Precomputed path counts TSV
    #[arg(long, conflicts_with = "fragments", required_unless_present = "fragments")]
    counts: Option<PathBuf>,
    /// Fragments TSV, counted on the fly
    #[arg(long)]
    fragments: Option<PathBuf>,
    #[arg(long)]
    length_pmf: PathBuf,
    #[arg(long)]
    start_cdf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Symmetric Dirichlet parameter (1 = maximum likelihood)
    #[arg(long, default_value_t = 2.0)]
    prior_q: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Metropolis-Hastings iterations per island (off by default)
    #[arg(long)]
    mcmc: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on the sampler's proposal covariance
    #[arg(long, default_value_t = 1.0)]
    proposal_scale: f64,
    /// Required with --counts; inferred from fragments otherwise
    #[arg(long)]
    read_length: Option<i64>,
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Dump every path probability used
    #[arg(long)]
    probs_out: Option<PathBuf>,
    /// Significant digits in probability columns (0 = full precision)
    #[arg(long, default_value_t = DEFAULT_DIGITS)]
    precision: usize,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// TOML simulation config
    #[arg(long)]
    config: PathBuf,
    /// Per-variant report TSV; a summary goes to `<out>.summary.txt`
    #[arg(long)]
    out: PathBuf,
    /// Fragments of the first replicate
    #[arg(long)]
    fragments_out: Option<PathBuf>,
    /// Per-replicate estimates
    #[arg(long)]
    estimates_out: Option<PathBuf>,
    /// Classify fragments directly to paths (no genomic coordinates)
    #[arg(long)]
    counts_only: bool,
    #[arg(long, default_value_t = DEFAULT_DIGITS)]
    precision: usize,
}

/// Failure with a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NoQualifyingData(_)) => EXIT_NO_DATA,
        Some(e) if e.is_input_error() => EXIT_INPUT,
        _ => 1,
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn digits(precision: usize) -> Option<usize> {
    (precision > 0).then_some(precision)
}

fn read_fragments(path: &Path) -> anyhow::Result<Vec<FragmentAlignment>> {
    Ok(open_fragments(path)?.collect::<splicequant::Result<Vec<_>>>()?)
}

fn longest_end(frags: &[FragmentAlignment]) -> Option<i64> {
    frags.iter().map(|f| {
        let (a, b) = f.end_lengths();
        a.max(b)
    }).max()
}

fn cmd_count_paths(a: &CountPathsArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    m.input(&a.annotation)?;
    m.input(&a.fragments)?;
    let index = IslandIndex::new(load_islands(&a.annotation)?);
    let counts = count_paths(open_fragments(&a.fragments)?, &index, a.read_length)?;
    log::info!(
        "{} fragments mapped to {} islands, {} unmapped",
        counts.mapped,
        counts.tables.len(),
        counts.n_unmapped()
    );
    write_file(&a.out, |w| write_path_counts(w, counts.tables.values()))?;
    let unmapped = sibling(&a.out, ".unmapped.tsv");
    write_file(&unmapped, |w| write_unmapped(w, &counts))?;
    m.output(&a.out)?;
    m.output(&unmapped)?;
    Ok(())
}

fn cmd_fit_dist(a: &FitDistArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    m.input(&a.annotation)?;
    m.input(&a.fragments)?;
    let index = IslandIndex::new(load_islands(&a.annotation)?);
    let frags = read_fragments(&a.fragments)?;
    let Some(read_length) = a.read_length.or_else(|| longest_end(&frags)) else {
        return Err(Error::NoQualifyingData(format!(
            "{} contains no fragments; distributions need fragments from long exons and single-variant genes",
            a.fragments.display()
        ))
        .into());
    };
    let dists = fit_distributions(&frags, &index, read_length, a.min_exon_len, &a.bins, a.min_fragments)?;
    write_file(&a.out_length, |w| write_length_pmf(w, &dists))?;
    write_file(&a.out_start, |w| write_start_cdf(w, &dists))?;
    m.output(&a.out_length)?;
    m.output(&a.out_start)?;
    Ok(())
}

fn cmd_quantify(a: &QuantifyArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    if a.prior_q < 1.0 {
        return Err(Error::InvalidInput(format!("--prior-q {} must be >= 1", a.prior_q)).into());
    }
    if !(a.ci_level > 0.0 && a.ci_level < 1.0) {
        return Err(Error::InvalidInput(format!("--ci-level {} must be in (0, 1)", a.ci_level)).into());
    }
    m.input(&a.annotation)?;
    m.input(&a.length_pmf)?;
    m.input(&a.start_cdf)?;
    let islands = load_islands(&a.annotation)?;
    let dists = read_distributions(&a.length_pmf, &a.start_cdf)?;

    let (tables, read_length): (BTreeMap<String, PathCountTable>, i64) = match (&a.counts, &a.fragments) {
        (Some(c), _) => {
            m.input(c)?;
            let Some(r) = a.read_length else {
                return Err(Error::InvalidInput("--read-length is required with --counts".into()).into());
            };
            (read_path_counts(c)?, r)
        }
        (None, Some(f)) => {
            m.input(f)?;
            let index = IslandIndex::new(islands.clone());
            let counts = count_paths(open_fragments(f)?, &index, a.read_length)?;
            let r = counts.read_length.or(a.read_length).unwrap_or(1);
            (counts.tables, r)
        }
        (None, None) => bail!("one of --counts or --fragments is required"),
    };

    let opts = QuantifyOptions {
        prior_q: a.prior_q,
        em: EmOptions {
            tol: a.tol,
            max_iter: a.max_iter,
            trace: false,
        },
        ci_level: a.ci_level,
        mcmc: a.mcmc.map(|n| MhOptions {
            n,
            burnin: a.burnin.min(n),
            seed: a.seed,
            scale: a.proposal_scale,
            record: false,
        }),
    };
    let results = quantify_all(&islands, &tables, &dists, read_length, &opts)?;
    let d = digits(a.precision);
    write_file(&a.out, |w| write_estimates(w, &results, d))?;
    m.output(&a.out)?;
    if let Some(p) = &a.samples_out {
        write_file(p, |w| write_samples(w, &results, d))?;
        m.output(p)?;
    }
    if let Some(p) = &a.probs_out {
        write_file(p, |w| write_prob_dump(w, &results, d))?;
        m.output(p)?;
    }
    let failed = failure_fraction(&results);
    if failed > 0.5 {
        return Err(Exit(
            EXIT_TOO_MANY_FAILURES,
            format!("inference failed for {:.0}% of islands; see the flags column", 100.0 * failed),
        )
        .into());
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    m.input(&a.config)?;
    let mut cfg = SimConfig::load(&a.config)?;
    cfg.counts_only |= a.counts_only;
    if cfg.counts_only && a.fragments_out.is_some() {
        return Err(Error::InvalidInput("--fragments-out needs fragment simulation; drop --counts-only".into()).into());
    }
    m.seed = Some(cfg.seed);
    let run = run_simulation(&cfg)?;
    if run.failed_islands > 0 {
        log::warn!("{} island fits failed and were left out of the score", run.failed_islands);
    }
    let d = digits(a.precision);
    write_file(&a.out, |w| write_report(w, &run.report, d))?;
    let summary = sibling(&a.out, ".summary.txt");
    write_file(&summary, |w| write_summary(w, &run.report))?;
    m.output(&a.out)?;
    m.output(&summary)?;
    if let Some(p) = &a.fragments_out {
        write_file(p, |w| splicequant::pathing::write_fragments(w, &run.fragments))?;
        m.output(p)?;
    }
    if let Some(p) = &a.estimates_out {
        write_file(p, |w| simulate::write_estimates(w, &run.report, d))?;
        m.output(p)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let started = Instant::now();
    let (name, out, flags, result) = match &cli.command {
        Command::CountPaths(a) => {
            let mut m = RunManifest::new("count-paths", a)?;
            let r = cmd_count_paths(a, &mut m);
            ("count-paths", a.out.clone(), m, r)
        }
        Command::FitDist(a) => {
            let mut m = RunManifest::new("fit-dist", a)?;
            let r = cmd_fit_dist(a, &mut m);
            ("fit-dist", a.out_length.clone(), m, r)
        }
        Command::Quantify(a) => {
            let mut m = RunManifest::new("quantify", a)?;
            m.seed = a.mcmc.map(|_| a.seed);
            let r = cmd_quantify(a, &mut m);
            ("quantify", a.out.clone(), m, r)
        }
        Command::Simulate(a) => {
            let mut m = RunManifest::new("simulate", a)?;
            let r = cmd_simulate(a, &mut m);
            ("simulate", a.out.clone(), m, r)
        }
    };
    let mut manifest = flags;
    manifest.threads = cli.threads;
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    manifest.exit_code = result.as_ref().map_or_else(exit_code, |_| 0);
    let path = sibling(&out, ".manifest.json");
    if let Err(e) = manifest.write(&path) {
        log::warn!("{name}: {e:#}");
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
