//! Command-line interface and run configuration.
//!
//! Settings are resolved in three layers: built-in defaults, then the TOML
//! file given with `--config`, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::{compare_covariance_structures, FitOptions};
use crate::io::{self, DataSchema, Provenance};
use crate::mcmc::LabelUpdate;
use crate::mfm::Partition;
use crate::posterior::SCHEMA_VERSION;
use crate::sim::{self, SimDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: u8,
    pub model: u8,
    pub reps: usize,
    pub n_sites: usize,
    pub sites_seed: u64,
    /// Also write each replicate's dataset as `data_<rep>.csv`.
    pub write_datasets: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            design: 2,
            model: 1,
            reps: 20,
            n_sites: sim::N_SITES,
            sites_seed: sim::SITES_SEED,
            write_datasets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub structures: Vec<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            structures: ["acac", "unity", "exponential", "gaussian"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// `fit.json` of the run to score.
    pub fit: Option<PathBuf>,
    /// `site_id,cluster` file with the reference partition.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: DataSchema,
    pub fit: FitOptions,
    pub simulate: SimulateConfig,
    pub compare: CompareConfig,
    pub evaluate: EvaluateConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            schema: DataSchema::default(),
            fit: FitOptions::default(),
            simulate: SimulateConfig::default(),
            compare: CompareConfig::default(),
            evaluate: EvaluateConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self, command: &str) -> Result<()> {
        self.fit.chain.validate()?;
        self.fit.hyper.validate()?;
        let known = crate::spatial::CovarianceRegistry::builtin(self.fit.acac_gcd);
        known.get(&self.fit.covariance)?;
        if command == "compare-cov" {
            if self.compare.structures.is_empty() {
                return Err(Error::Config("no covariance structures to compare".into()));
            }
            for s in &self.compare.structures {
                known.get(s)?;
            }
        }
        let need_file = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            match p {
                None => Err(Error::Config(format!("`{command}` needs {what}"))),
                Some(p) if !p.is_file() => Err(Error::Config(format!("{what} `{}` does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match command {
            "fit" | "compare-cov" => need_file(&self.data, "a data file")?,
            "evaluate" => {
                need_file(&self.evaluate.fit, "a fit report")?;
                need_file(&self.evaluate.truth, "a reference labels file")?;
            }
            "simulate" => {
                sim::design_sizes(self.simulate.design)?;
                if !(1..=3).contains(&self.simulate.model) {
                    return Err(Error::Config(format!(
                        "generating model must be 1, 2 or 3, got {}",
                        self.simulate.model
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 over the command, the resolved settings except the output
    /// directory, and the bytes of every input file.
    pub fn hash(&self, command: &str) -> Result<String> {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(serde_json::to_vec(&canon)?);
        for p in [&self.data, &self.evaluate.fit, &self.evaluate.truth]
            .into_iter()
            .flatten()
        {
            if let Ok(bytes) = fs::read(p) {
                h.update([0u8]);
                h.update(&bytes);
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Debug, Parser)]
#[command(name = "bccr", version, about = "Spatially clustered coefficient regression by MCMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one dataset.
    Fit(FitArgs),
    /// Run simulation replicates.
    Simulate(SimulateArgs),
    /// Score a fit against a reference partition.
    Evaluate(EvaluateArgs),
    /// Fit several covariance structures and rank them by LPML.
    CompareCov(CompareArgs),
    /// Print or write the expected CSV header for the county data.
    MakeGeorgiaTemplate(TemplateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Evaluate(_) => "evaluate",
            Command::CompareCov(_) => "compare-cov",
            Command::MakeGeorgiaTemplate(_) => "make-georgia-template",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ChainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Discarded draws, counted after thinning.
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub cov: Option<String>,
    #[arg(long, value_enum)]
    pub label_update: Option<LabelUpdateArg>,
    /// `mfm` or `dp`.
    #[arg(long)]
    pub cluster_prior: Option<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LabelUpdateArg {
    Conditional,
    Blocked,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub common: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub design: Option<u8>,
    #[arg(long)]
    pub model: Option<u8>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub write_datasets: bool,
    #[command(flatten)]
    pub common: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub common: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated structure names.
    #[arg(long, value_delimiter = ',')]
    pub structures: Option<Vec<String>>,
    #[command(flatten)]
    pub common: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TemplateArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn apply_common(cfg: &mut RunConfig, a: &ChainArgs) {
    if let Some(v) = a.seed {
        cfg.fit.chain.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.iters {
        cfg.fit.chain.n_iter = v;
    }
    if let Some(v) = a.thin {
        cfg.fit.chain.thin = v;
    }
    if let Some(v) = a.burnin {
        cfg.fit.chain.burn_in = v;
    }
    if let Some(v) = &a.cov {
        cfg.fit.covariance = v.clone();
    }
    if let Some(v) = a.label_update {
        cfg.fit.chain.label_update = match v {
            LabelUpdateArg::Conditional => LabelUpdate::Conditional,
            LabelUpdateArg::Blocked => LabelUpdate::Blocked,
        };
    }
    if let Some(v) = &a.cluster_prior {
        cfg.fit.hyper.cluster_prior = v.clone();
    }
}

fn common(cmd: &Command) -> Option<&ChainArgs> {
    match cmd {
        Command::Fit(a) => Some(&a.common),
        Command::Simulate(a) => Some(&a.common),
        Command::Evaluate(a) => Some(&a.common),
        Command::CompareCov(a) => Some(&a.common),
        Command::MakeGeorgiaTemplate(_) => None,
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cmd: &Command) -> Result<RunConfig> {
    let Some(c) = common(cmd) else {
        return Ok(RunConfig::default());
    };
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, c);
    match cmd {
        Command::Fit(a) => {
            if let Some(d) = &a.data {
                cfg.data = Some(d.clone());
            }
        }
        Command::Simulate(a) => {
            if let Some(v) = a.design {
                cfg.simulate.design = v;
            }
            if let Some(v) = a.model {
                cfg.simulate.model = v;
            }
            if let Some(v) = a.reps {
                cfg.simulate.reps = v;
            }
            if a.write_datasets {
                cfg.simulate.write_datasets = true;
            }
        }
        Command::Evaluate(a) => {
            if let Some(v) = &a.fit {
                cfg.evaluate.fit = Some(v.clone());
            }
            if let Some(v) = &a.truth {
                cfg.evaluate.truth = Some(v.clone());
            }
        }
        Command::CompareCov(a) => {
            if let Some(d) = &a.data {
                cfg.data = Some(d.clone());
            }
            if let Some(v) = &a.structures {
                cfg.compare.structures = v.clone();
            }
        }
        Command::MakeGeorgiaTemplate(_) => {}
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Command::MakeGeorgiaTemplate(a) = &cli.command {
        let text = io::georgia_template();
        return match &a.out {
            Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
            None => {
                print!("{text}");
                Ok(())
            }
        };
    }
    let name = cli.command.name();
    let cfg = resolve_config(&cli.command)?;
    cfg.validate(name)?;
    let prov = Provenance {
        seed: cfg.fit.chain.seed,
        config_hash: cfg.hash(name)?,
    };
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    match name {
        "fit" => run_fit(&cfg, &prov),
        "simulate" => run_simulate(&cfg, &prov),
        "evaluate" => run_evaluate(&cfg, &prov),
        "compare-cov" => run_compare(&cfg, &prov),
        _ => unreachable!(),
    }
}

fn data_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.data.as_deref().ok_or_else(|| Error::Config("no data file".into()))
}

pub fn run_fit(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let data = io::load_dataset(data_path(cfg)?, &cfg.schema)?;
    let model = crate::fit::build_model(&data, &cfg.fit)?;
    let out = crate::mcmc::run_chain(&data, &model, &cfg.fit.chain)?;
    let mut report = crate::posterior::summarize_chain(&out, &data, &model)?;
    report.seed = prov.seed;
    report.config_hash = prov.config_hash.clone();
    io::write_json(&cfg.out.join("fit.json"), &report)?;
    io::write_labels(&cfg.out.join("labels.csv"), &report, prov)?;
    io::write_trace(&cfg.out.join("trace.csv"), &out, &model.cov, prov)?;
    log::info!("k_hat = {}, LPML = {:.3}", report.k_hat, report.lpml);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReplicateRow<'a> {
    rep_id: usize,
    seed: u64,
    ri: f64,
    k_hat: usize,
    lpml: f64,
    error: &'a str,
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    k: usize,
    count: usize,
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    coefficient: &'a str,
    mab: f64,
    msd: f64,
    mmse: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub summary: sim::SimSummary,
    pub replicates: Vec<sim::ReplicateResult>,
}

pub fn run_simulate(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let s = &cfg.simulate;
    let locs = sim::synthetic_sites(s.n_sites, s.sites_seed);
    let design = SimDesign::new(s.design, s.model, &locs)?;
    if s.write_datasets {
        for r in 0..s.reps {
            let (data, _) = sim::generate_dataset(&design, &locs, &mut sim::replicate_rng(prov.seed, r))?;
            io::write_dataset(&cfg.out.join(format!("data_{r:03}.csv")), &data, Some(prov))?;
        }
    }
    let results = sim::run_replicates(&design, &locs, &cfg.fit, s.reps, prov.seed);
    let summary = sim::summarize_replicates(s.design, &design, &results)?;
    let rows: Vec<ReplicateRow> = results
        .iter()
        .map(|r| ReplicateRow {
            rep_id: r.rep_id,
            seed: r.seed,
            ri: r.ri,
            k_hat: r.k_hat,
            lpml: r.lpml,
            error: r.error.as_deref().unwrap_or(""),
        })
        .collect();
    io::write_records(
        &cfg.out.join("replicates.csv"),
        &["rep_id", "seed", "ri", "k_hat", "lpml", "error"],
        &rows,
        prov,
    )?;
    let hist: Vec<HistogramRow> = summary
        .k_histogram
        .iter()
        .map(|(&k, &count)| HistogramRow { k, count })
        .collect();
    io::write_records(&cfg.out.join("k_histogram.csv"), &["k", "count"], &hist, prov)?;
    let names = ["x1", "x2", "x3"];
    let metrics: Vec<MetricRow> = summary
        .metrics
        .iter()
        .flatten()
        .zip(names)
        .map(|(m, coefficient)| MetricRow {
            coefficient,
            mab: m.mab,
            msd: m.msd,
            mmse: m.mmse,
        })
        .collect();
    io::write_records(
        &cfg.out.join("metrics.csv"),
        &["coefficient", "mab", "msd", "mmse"],
        &metrics,
        prov,
    )?;
    log::info!(
        "mean RI = {:.4}, k histogram = {:?}",
        summary.mean_ri,
        summary.k_histogram
    );
    io::write_json(
        &cfg.out.join("summary.json"),
        &SimulationReport {
            schema_version: SCHEMA_VERSION,
            seed: prov.seed,
            config_hash: prov.config_hash.clone(),
            summary,
            replicates: results,
        },
    )
}

#[derive(Debug, Serialize)]
struct EvaluationRow {
    n_sites: usize,
    ri: f64,
    k_hat: usize,
    k_true: usize,
}

pub fn run_evaluate(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let missing = || Error::Config("evaluate needs a fit report and a reference labels file".into());
    let report = io::read_fit_report(cfg.evaluate.fit.as_deref().ok_or_else(missing)?)?;
    let truth_path = cfg.evaluate.truth.as_deref().ok_or_else(missing)?;
    let truth: BTreeMap<String, usize> = io::read_labels(truth_path)?.into_iter().collect();
    let reference: Vec<usize> = report
        .site_ids
        .iter()
        .map(|id| {
            truth
                .get(id)
                .copied()
                .ok_or_else(|| Error::Input(format!("site `{id}` missing from {}", truth_path.display())))
        })
        .collect::<Result<_>>()?;
    let a = Partition::from_labels(&report.modal_labels);
    let b = Partition::from_labels(&reference);
    let row = EvaluationRow {
        n_sites: a.n(),
        ri: sim::rand_index(&a, &b)?,
        k_hat: report.k_hat,
        k_true: b.k_active(),
    };
    io::write_records(
        &cfg.out.join("metrics.csv"),
        &["n_sites", "ri", "k_hat", "k_true"],
        &[row],
        prov,
    )
}

pub fn run_compare(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let data = io::load_dataset(data_path(cfg)?, &cfg.schema)?;
    let rows = compare_covariance_structures(&data, &cfg.fit, &cfg.compare.structures);
    #[derive(Serialize)]
    struct Row<'a> {
        structure: &'a str,
        lpml: f64,
        k_hat: usize,
        best: bool,
        error: &'a str,
    }
    let csv_rows: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            structure: &r.structure,
            lpml: r.lpml,
            k_hat: r.k_hat,
            best: r.best,
            error: r.error.as_deref().unwrap_or(""),
        })
        .collect();
    io::write_records(
        &cfg.out.join("compare.csv"),
        &["structure", "lpml", "k_hat", "best", "error"],
        &csv_rows,
        prov,
    )
}
