use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use probekit::analysis;
use probekit::config::RunConfig;
use probekit::data::{SiteFilter, Store};
use probekit::synth::{write_synth, SynthSpec};
use probekit::{Error, ErrorClass};

/// Linear probes, permutation tests and entanglement analysis over a
/// feature store and a human rating table.
#[derive(Parser)]
#[command(name = "probekit", version)]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lists the sites of a store and verifies every checksum.
    Inspect { store: PathBuf },
    /// Runs nested cross-validated probes and writes the report directory.
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Site filters overriding the config, e.g. `clip_hidden:1..12`.
        #[arg(long, num_args = 1..)]
        sites: Option<Vec<String>>,
        /// Output directory overriding the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Attribute entanglement in the human and probe domains.
    Entangle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generates a synthetic store, ratings and ground truth.
    Synth {
        /// TOML spec file, or `default`.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Probe summaries restricted to attribute groups and their complements.
    Subgroups {
        #[arg(long)]
        config: PathBuf,
        /// Bundled group names (spatial, non_spatial, animacy, size,
        /// perceptual) or files with one question per line.
        #[arg(long, num_args = 1..)]
        group: Vec<String>,
        #[arg(long, num_args = 1..)]
        sites: Option<Vec<String>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::class) {
        Some(ErrorClass::Config) => 1,
        Some(ErrorClass::Numerical) => 3,
        Some(ErrorClass::Data) | None => 2,
    }
}

/// The error chain, skipping causes already quoted by an outer message.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn load_config(path: &PathBuf, output: Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(o) = output {
        c.output = o;
    }
    Ok(c)
}

fn parse_filters(sites: Option<Vec<String>>) -> anyhow::Result<Option<Vec<SiteFilter>>> {
    sites
        .map(|v| v.iter().map(|s| s.parse::<SiteFilter>()).collect::<Result<Vec<_>, _>>())
        .transpose()
        .context("parsing --sites")
}

fn inspect(path: &PathBuf) -> anyhow::Result<()> {
    let store = Store::open(path).with_context(|| format!("opening store {}", path.display()))?;
    let m = store.manifest();
    println!(
        "store {}: {} stimuli, {} seeds per U-Net stimulus",
        path.display(),
        m.n_stimuli(),
        m.seeds.len()
    );
    if !m.sites.is_empty() {
        println!("{:<20} {:>8} {:>8}  checksum", "site", "d", "rows");
    }
    let mut failures: Vec<(String, Error)> = Vec::new();
    for e in &m.sites {
        let status = match store.load(&e.site) {
            Ok(_) => "ok".to_string(),
            Err(err) => {
                let s = format!("FAILED ({err})");
                failures.push((e.site.to_string(), err));
                s
            }
        };
        println!("{:<20} {:>8} {:>8}  {status}", e.site.to_string(), e.d, e.rows);
    }
    println!("{} sites", m.sites.len());
    let n = failures.len();
    match failures.into_iter().next() {
        Some((site, err)) => Err(anyhow::Error::new(err).context(format!("{n} corrupt site(s), first: {site}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Inspect { store } => inspect(&store),
        Command::Probe { config, sites, output } => {
            let c = load_config(&config, output)?;
            let filters = parse_filters(sites)?;
            let out = analysis::probe(&c, filters.as_deref()).inspect_err(|_e| {
                eprintln!("FAILED: partial results in {}", c.output.display());
            })?;
            println!(
                "{} probe results over {} sites written to {}",
                out.run.records.len(),
                out.summaries.len(),
                out.output.display()
            );
            Ok(())
        }
        Command::Entangle { config, output } => {
            let c = load_config(&config, output)?;
            let out = analysis::entangle(&c).inspect_err(|_e| {
                eprintln!("FAILED: partial results in {}", c.output.display());
            })?;
            let hs = out.human.state_percentages();
            println!(
                "human domain: {} pairs, {:.1}% positive, {:.1}% negative, {:.1}% disentangled",
                hs.n_pairs, hs.positive, hs.negative, hs.disentangled
            );
            println!("{:<20} {:>8} {:>8} {:>8}", "site", "humans+", "probes+", "agree");
            for (site, _, s) in &out.per_site {
                println!(
                    "{:<20} {:>8.1} {:>8.1} {:>8.1}",
                    site.to_string(),
                    s.pct_humans_disentangle_more,
                    s.pct_probes_disentangle_more,
                    s.pct_agreement
                );
            }
            Ok(())
        }
        Command::Synth { spec, out } => {
            let s = if spec == "default" {
                SynthSpec::default()
            } else {
                let text = std::fs::read_to_string(&spec).with_context(|| format!("reading spec {spec}"))?;
                toml::from_str::<SynthSpec>(&text)
                    .map_err(|e| Error::config("spec", e.message().to_string()))
                    .with_context(|| format!("parsing spec {spec}"))?
            };
            let data = write_synth(&s, &out)?;
            println!(
                "wrote {} sites, {} stimuli, {} attributes to {}",
                data.matrices.len(),
                s.n_stimuli,
                s.m_attributes,
                out.display()
            );
            Ok(())
        }
        Command::Subgroups { config, group, sites, output } => {
            let c = load_config(&config, output)?;
            let filters = parse_filters(sites)?;
            let summaries = analysis::subgroups(&c, &group, filters.as_deref()).inspect_err(|_e| {
                eprintln!("FAILED: partial results in {}", c.output.display());
            })?;
            println!("{} group summaries written to {}", summaries.len(), c.output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
