//! Command-line front end: `gen`, `index`, `run`, `reduce` and `sweep`.
//!
//! Every experiment flag can also come from a JSON file given with
//! `--config`; flags win over the file. Exit status is 0 on success, 2 for
//! usage errors (bad flags, unknown policy or family) and 1 for everything
//! else, with a diagnostic on stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{IndexCache, PolicyKind, SelectorConfig};
use crate::index::{IndexTable, DEFAULT_TOL};
use crate::instances::{generate, load_doc, Family, FamilyParams, InstanceDoc, DEFAULT_BETA};
use crate::model::derive_seed;
use crate::prob::{EstimatorKind, ProbEstimator, DEFAULT_ENUMERATION_CAP, DEFAULT_MC_SAMPLES};
use crate::reduction::{verify_reduction, ReductionParams, TmSpec};
use crate::sim::{
    run_experiment, standard_policies, write_aggregate_csv, write_runs_csv, PolicyRuns, Scenario,
    DEFAULT_HORIZON, DEFAULT_REPS,
};

/// Header of the CSV written by `sweep`.
pub const SWEEP_CSV_HEADER: &str = "vary,value,policy,mean_cost,std_cost,violation_rate";

const DEFAULT_POLICIES: &str = "greedy_min,increasing_budget,truncated_reward,random,all_active";
const DEFAULT_N: usize = 20;
const DEFAULT_RHO: f64 = 0.9;
const DEFAULT_THRESHOLD: f64 = 1.0;

/// Repetition `k` of a generated family uses instance seed
/// `derive_seed(derive_seed(seed, INSTANCE_STREAM), k)`.
const INSTANCE_STREAM: u64 = u64::MAX;

#[derive(Debug, Parser)]
#[command(
    name = "rmab",
    version,
    about = "Cost-minimizing restless bandits under a reward threshold"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance as JSON.
    Gen(GenArgs),
    /// Write the index table of an instance as CSV.
    Index(IndexArgs),
    /// Simulate policies and write per-step and aggregate CSVs.
    Run(RunArgs),
    /// Compile a Turing machine and audit the resulting instance.
    Reduce(ReduceArgs),
    /// Repeat `run` over a grid of one parameter.
    Sweep(SweepArgs),
}

/// Experiment settings, as read from `--config`. Missing fields take the
/// flag defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Option<String>,
    pub instance: Option<PathBuf>,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    #[serde(rename = "R")]
    pub threshold: Option<f64>,
    pub beta: Option<f64>,
    pub horizon_k: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    pub reps: Option<usize>,
    pub policies: Option<String>,
    pub m: Option<f64>,
    pub prob_estimator: Option<String>,
    pub mc_samples: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Fields set in `self` win over `base`.
    pub fn or(self, base: ExperimentConfig) -> Self {
        ExperimentConfig {
            family: self.family.or(base.family),
            instance: self.instance.or(base.instance),
            n: self.n.or(base.n),
            rho: self.rho.or(base.rho),
            threshold: self.threshold.or(base.threshold),
            beta: self.beta.or(base.beta),
            horizon_k: self.horizon_k.or(base.horizon_k),
            seed: self.seed.or(base.seed),
            horizon: self.horizon.or(base.horizon),
            reps: self.reps.or(base.reps),
            policies: self.policies.or(base.policies),
            m: self.m.or(base.m),
            prob_estimator: self.prob_estimator.or(base.prob_estimator),
            mc_samples: self.mc_samples.or(base.mc_samples),
            out: self.out.or(base.out),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `file` when an instance path is given, otherwise the named family.
    pub fn family(&self) -> Result<Family> {
        match (&self.family, &self.instance) {
            (Some(f), _) => f.parse(),
            (None, Some(_)) => Ok(Family::File),
            (None, None) => Err(Error::arg("give --family or --instance")),
        }
    }

    pub fn family_params(&self) -> Result<FamilyParams> {
        Ok(FamilyParams {
            family: self.family()?,
            n: self.n.unwrap_or(DEFAULT_N),
            rho: self.rho.unwrap_or(DEFAULT_RHO),
            threshold: self.threshold.unwrap_or(DEFAULT_THRESHOLD),
            seed: self.seed(),
            beta: self.beta.unwrap_or(DEFAULT_BETA),
        })
    }

    /// The instance for repetition `rep`. Generated families draw a fresh
    /// instance per repetition; a file instance is the same every time,
    /// with any `rho`, `R` or `beta` flags applied on top.
    pub fn doc(&self, rep: u64) -> Result<InstanceDoc> {
        let mut doc = match self.family()? {
            Family::File => {
                let path = self
                    .instance
                    .as_ref()
                    .ok_or_else(|| Error::arg("--family file needs --instance"))?;
                let mut doc = load_doc(path)?;
                doc.rho = self.rho.unwrap_or(doc.rho);
                doc.threshold = self.threshold.unwrap_or(doc.threshold);
                doc.beta = self.beta.unwrap_or(doc.beta);
                doc
            }
            _ => {
                let mut params = self.family_params()?;
                params.seed = derive_seed(derive_seed(params.seed, INSTANCE_STREAM), rep);
                generate(&params)?
            }
        };
        if let Some(k) = self.horizon_k {
            doc.horizon_k = k;
        }
        doc.validate()?;
        Ok(doc)
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        let list = self.policies.as_deref().unwrap_or(DEFAULT_POLICIES);
        let kinds = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<PolicyKind>>>()?;
        if kinds.is_empty() {
            return Err(Error::arg("no policies given"));
        }
        Ok(kinds)
    }

    pub fn selector_config(&self, doc: &InstanceDoc) -> Result<SelectorConfig> {
        let kind: EstimatorKind = self.prob_estimator.as_deref().unwrap_or("exact").parse()?;
        let mut cfg = SelectorConfig::new(doc.rho, doc.threshold);
        cfg.m = self.m.unwrap_or(cfg.m);
        cfg.estimator = ProbEstimator {
            kind,
            cap: DEFAULT_ENUMERATION_CAP,
            mc_samples: self.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs the configured policies.
    pub fn run(&self) -> Result<Vec<PolicyRuns>> {
        let first = self.doc(0)?;
        let cfg = self.selector_config(&first)?;
        let kinds = self.policy_kinds()?;
        let cache = Arc::new(IndexCache::new(first.beta, DEFAULT_TOL)?);
        let policies = standard_policies(&kinds, cfg, cache)?;
        let scenario = |k: usize| -> Result<Scenario> {
            if k == 0 {
                first.scenario()
            } else {
                self.doc(k as u64)?.scenario()
            }
        };
        run_experiment(
            &scenario,
            &policies,
            self.reps.unwrap_or(DEFAULT_REPS),
            self.horizon.unwrap_or(DEFAULT_HORIZON),
            self.seed(),
        )
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct InstanceArgs {
    /// claim1, adversarial, uniform or file.
    #[arg(long)]
    pub family: Option<String>,
    /// Instance JSON file (implies --family file).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Reward threshold.
    #[arg(long = "R")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Surrogate horizon of hidden two-state arms.
    #[arg(long = "K")]
    pub horizon_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with default values for any of the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl InstanceArgs {
    fn partial(&self) -> ExperimentConfig {
        ExperimentConfig {
            family: self.family.clone(),
            instance: self.instance.clone(),
            n: self.n,
            rho: self.rho,
            threshold: self.threshold,
            beta: self.beta,
            horizon_k: self.horizon_k,
            seed: self.seed,
            ..Default::default()
        }
    }

    fn base(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Comma-separated policy names.
    #[arg(long)]
    pub policies: Option<String>,
    /// Steps per episode.
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Budget multiplier.
    #[arg(long)]
    pub m: Option<f64>,
    /// exact, mc or hoeffding.
    #[arg(long)]
    pub prob_estimator: Option<String>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

impl ExperimentArgs {
    fn config(&self, out: Option<PathBuf>) -> Result<ExperimentConfig> {
        let flags = ExperimentConfig {
            policies: self.policies.clone(),
            horizon: self.horizon,
            reps: self.reps,
            m: self.m,
            prob_estimator: self.prob_estimator.clone(),
            mc_samples: self.mc_samples,
            out,
            ..self.instance.partial()
        };
        Ok(flags.or(self.instance.base()?))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Directory for runs.csv and aggregate.csv; without it the aggregate
    /// table goes to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReduceArgs {
    /// Turing machine JSON file.
    #[arg(long)]
    pub tm: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long = "R", default_value_t = 1.0)]
    pub threshold: f64,
    /// Machine steps to simulate.
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    /// Report JSON file; without it the report goes to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vary {
    #[value(name = "R")]
    R,
    #[value(name = "n")]
    N,
    #[value(name = "rho")]
    Rho,
}

impl Vary {
    fn name(self) -> &'static str {
        match self {
            Vary::R => "R",
            Vary::N => "n",
            Vary::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_enum)]
    pub vary: Vary,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    /// Sweep CSV file; without it the table goes to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Optional line chart of mean cost against the varied parameter.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
    }
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?
        .to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn emit(out: &Option<PathBuf>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => Ok(stdout.write_all(bytes)?),
    }
}

/// Executes a parsed command, writing tables to `stdout` unless an output
/// path is given.
pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen(a) => {
            let cfg = a.instance.partial().or(a.instance.base()?);
            let doc = generate(&cfg.family_params()?)?;
            emit(&a.out, (doc.to_json() + "\n").as_bytes(), stdout)
        }
        Command::Index(a) => {
            let cfg = a.instance.partial().or(a.instance.base()?);
            let doc = cfg.doc(0)?;
            let table = IndexTable::compute(&doc.model_arms()?, doc.beta, a.tol)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            emit(&a.out, &buf, stdout)
        }
        Command::Run(a) => {
            let cfg = a.experiment.config(a.out.clone())?;
            let results = cfg.run()?;
            let mut agg = Vec::new();
            write_aggregate_csv(&results, &mut agg)?;
            match &cfg.out {
                Some(dir) => {
                    let mut runs = Vec::new();
                    write_runs_csv(&results, &mut runs)?;
                    std::fs::create_dir_all(dir)?;
                    write_atomic(&dir.join("runs.csv"), &runs)?;
                    write_atomic(&dir.join("aggregate.csv"), &agg)
                }
                None => Ok(stdout.write_all(&agg)?),
            }
        }
        Command::Reduce(a) => {
            let tm = TmSpec::load(&a.tm)?;
            let params = ReductionParams {
                reward: a.threshold,
                ..ReductionParams::new(a.alpha)
            };
            let report = verify_reduction(&tm, &params, a.horizon)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            emit(&a.out, json.as_bytes(), stdout)?;
            if report.all_ok() {
                Ok(())
            } else {
                Err(Error::Verification(
                    "reduction audit failed; see the report for the failing checks".into(),
                ))
            }
        }
        Command::Sweep(a) => {
            let base = a.experiment.config(a.out.clone())?;
            let mut rows = Vec::new();
            for &value in &a.grid {
                let mut cfg = base.clone();
                match a.vary {
                    Vary::R => cfg.threshold = Some(value),
                    Vary::Rho => cfg.rho = Some(value),
                    Vary::N => {
                        if value < 1.0 || value.fract() != 0.0 {
                            return Err(Error::arg(format!(
                                "n must be a positive integer, got {value}"
                            )));
                        }
                        cfg.n = Some(value as usize);
                    }
                }
                for pr in cfg.run()? {
                    rows.push((value, pr.aggregate));
                }
            }
            let mut buf = Vec::new();
            writeln!(buf, "{SWEEP_CSV_HEADER}")?;
            for (value, g) in &rows {
                writeln!(
                    buf,
                    "{},{},{},{},{},{}",
                    a.vary.name(),
                    value,
                    g.policy,
                    g.mean_cost,
                    g.std_cost,
                    g.violation_rate
                )?;
            }
            if let Some(svg) = &a.svg {
                let series: Vec<(String, Vec<(f64, f64)>)> = {
                    let mut names: Vec<String> = Vec::new();
                    for (_, g) in &rows {
                        if !names.contains(&g.policy) {
                            names.push(g.policy.clone());
                        }
                    }
                    names
                        .into_iter()
                        .map(|name| {
                            let pts = rows
                                .iter()
                                .filter(|(_, g)| g.policy == name)
                                .map(|(v, g)| (*v, g.mean_cost))
                                .collect();
                            (name, pts)
                        })
                        .collect()
                };
                write_atomic(svg, line_chart(a.vary.name(), &series).as_bytes())?;
            }
            emit(&base.out, &buf, stdout)
        }
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// A bare SVG line chart, one polyline per series.
pub fn line_chart(x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, 0.0f64, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!(
        "<line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    );
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        w / 2.0,
        h - 10.0
    );
    s += &format!("<text x=\"{pad}\" y=\"{}\">{x0}</text>\n", h - pad + 15.0);
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1}</text>\n",
        w - pad,
        h - pad + 15.0
    );
    s += &format!("<text x=\"5\" y=\"{}\">{y0:.3}</text>\n", h - pad);
    s += &format!("<text x=\"5\" y=\"{}\">{y1:.3}</text>\n", pad);
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            w - pad - 120.0,
            pad + 15.0 * i as f64
        );
    }
    s + "</svg>\n"
}

/// Exit status for an error: 2 for bad arguments, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point of the `rmab` binary.
pub fn main() -> i32 {
    main_with(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    )
}
