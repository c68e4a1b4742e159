//! Command-line front end: batch runs to CSV and statistical comparison.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{evolve, Algorithm, ParameterError, Parameters, RunRecord};
use crate::grammar::parse_grammar;
use crate::problems::{BooleanProblem, Problem, ProblemError, Regression, BOSTON_FEATURES};
use crate::stats::{compare_groups, Comparison, StatsError};

pub const RUN_HEADER: &str = "run,generation,best_fitness,mean_fitness,invalid_count,best_phenotype";
pub const PROBLEMS: [&str; 5] = ["pagie", "boston", "parity5", "multiplexer11", "multiplexer11-full"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("--algorithm: {0}")]
    UnknownAlgorithm(String),
    #[error("--problem: unknown problem `{0}` (expected one of pagie, boston, parity5, multiplexer11, multiplexer11-full)")]
    UnknownProblem(String),
    #[error(transparent)]
    Range(#[from] ParameterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::UnknownAlgorithm(_) => 3,
            CliError::UnknownProblem(_) => 4,
            CliError::Range(_) => 5,
            CliError::Io { .. } => 6,
            CliError::Data(_) => 7,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Io { path, source } => CliError::Io {
                path: path.into(),
                source,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "copsge", version, about = "Grammar-based genetic programming experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded experiments and write per-run and aggregate CSVs.
    Run(Box<RunArgs>),
    /// Compare final fitness samples of several algorithms on one problem.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithm name or comma-separated list (ge, pge, sge, copsge).
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Problem name or comma-separated list.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub runs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub grammar: Option<String>,
    /// CSV with 13 feature columns and a target column (boston).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long = "split_seed", alias = "split-seed")]
    pub split_seed: Option<String>,
    #[arg(long = "multiplexer_msb_first", alias = "multiplexer-msb-first")]
    pub multiplexer_msb_first: Option<String>,
    #[arg(long = "population_size", alias = "population-size")]
    pub population_size: Option<String>,
    #[arg(long)]
    pub generations: Option<String>,
    #[arg(long = "elitism_count", alias = "elitism-count")]
    pub elitism_count: Option<String>,
    #[arg(long = "mutation_rate", alias = "mutation-rate")]
    pub mutation_rate: Option<String>,
    #[arg(long = "crossover_rate", alias = "crossover-rate")]
    pub crossover_rate: Option<String>,
    #[arg(long = "tournament_size", alias = "tournament-size")]
    pub tournament_size: Option<String>,
    #[arg(long = "genotype_size", alias = "genotype-size")]
    pub genotype_size: Option<String>,
    #[arg(long = "max_depth", alias = "max-depth")]
    pub max_depth: Option<String>,
    #[arg(long = "grammar_mutation_prob", alias = "grammar-mutation-prob")]
    pub grammar_mutation_prob: Option<String>,
    #[arg(long = "grammar_mutation_sd", alias = "grammar-mutation-sd")]
    pub grammar_mutation_sd: Option<String>,
    #[arg(long = "learning_factor", alias = "learning-factor")]
    pub learning_factor: Option<String>,
    /// true or false.
    #[arg(long)]
    pub parallel: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs = [
            ("algorithm", &self.algorithm),
            ("problem", &self.problem),
            ("runs", &self.runs),
            ("seed", &self.seed),
            ("out", &self.out),
            ("grammar", &self.grammar),
            ("dataset", &self.dataset),
            ("split_seed", &self.split_seed),
            ("multiplexer_msb_first", &self.multiplexer_msb_first),
            ("population_size", &self.population_size),
            ("generations", &self.generations),
            ("elitism_count", &self.elitism_count),
            ("mutation_rate", &self.mutation_rate),
            ("crossover_rate", &self.crossover_rate),
            ("tournament_size", &self.tournament_size),
            ("genotype_size", &self.genotype_size),
            ("max_depth", &self.max_depth),
            ("grammar_mutation_prob", &self.grammar_mutation_prob),
            ("grammar_mutation_sd", &self.grammar_mutation_sd),
            ("learning_factor", &self.learning_factor),
            ("parallel", &self.parallel),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Sample statistic: final best training fitness or its test error.
    #[arg(long, default_value = "best", value_parser = ["best", "test"])]
    pub statistic: String,
    /// Algorithm compared against every other one. Defaults to copsge when
    /// present; otherwise all pairs are compared.
    #[arg(long)]
    pub reference: Option<String>,
    /// Compare all pairs even when a reference is available.
    #[arg(long)]
    pub all_pairs: bool,
    /// Also write the pairwise table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output directories of `run`, or any directory above them.
    #[arg(required = true, num_args = 1..)]
    pub dirs: Vec<PathBuf>,
}

pub const CONFIG_KEYS: [&str; 21] = [
    "algorithm",
    "problem",
    "runs",
    "seed",
    "out",
    "grammar",
    "dataset",
    "split_seed",
    "multiplexer_msb_first",
    "population_size",
    "generations",
    "elitism_count",
    "mutation_rate",
    "crossover_rate",
    "tournament_size",
    "genotype_size",
    "max_depth",
    "grammar_mutation_prob",
    "grammar_mutation_sd",
    "learning_factor",
    "parallel",
];

/// Everything needed to execute `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub params: Parameters,
    pub algorithms: Vec<Algorithm>,
    pub problems: Vec<String>,
    pub runs: usize,
    pub out: PathBuf,
    pub grammar: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split_seed: u64,
    pub multiplexer_msb_first: bool,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_entries(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut entries = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected `key = value`", n + 1)));
        };
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", n + 1)));
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(entries)
}

fn typed<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, CliError> {
    match entries.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{v}`"))),
    }
}

/// Builds an experiment from config entries. Parameters default to the
/// standard settings; `algorithm` and `problem` are required.
pub fn experiment_from_entries(entries: &BTreeMap<String, String>) -> Result<Experiment, CliError> {
    let d = Parameters::default();
    let params = Parameters {
        population_size: typed(entries, "population_size", d.population_size)?,
        generations: typed(entries, "generations", d.generations)?,
        elitism_count: typed(entries, "elitism_count", d.elitism_count)?,
        mutation_rate: typed(entries, "mutation_rate", d.mutation_rate)?,
        crossover_rate: typed(entries, "crossover_rate", d.crossover_rate)?,
        tournament_size: typed(entries, "tournament_size", d.tournament_size)?,
        genotype_size: typed(entries, "genotype_size", d.genotype_size)?,
        max_depth: typed(entries, "max_depth", d.max_depth)?,
        grammar_mutation_prob: typed(entries, "grammar_mutation_prob", d.grammar_mutation_prob)?,
        grammar_mutation_sd: typed(entries, "grammar_mutation_sd", d.grammar_mutation_sd)?,
        learning_factor: typed(entries, "learning_factor", d.learning_factor)?,
        seed: typed(entries, "seed", d.seed)?,
        parallel: typed(entries, "parallel", d.parallel)?,
    };
    params.validate()?;

    let required = |key: &str| {
        entries
            .get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required key `{key}`")))
    };
    let list = |v: &str| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>();
    let algorithms = list(required("algorithm")?)
        .iter()
        .map(|a| a.parse().map_err(|e: crate::engine::UnknownAlgorithm| CliError::UnknownAlgorithm(e.to_string())))
        .collect::<Result<Vec<Algorithm>, _>>()?;
    let problems = list(required("problem")?);
    if algorithms.is_empty() || problems.is_empty() {
        return Err(CliError::Usage("`algorithm` and `problem` must name at least one entry".into()));
    }
    if let Some(p) = problems.iter().find(|p| !PROBLEMS.contains(&p.as_str())) {
        return Err(CliError::UnknownProblem(p.clone()));
    }
    let runs: usize = typed(entries, "runs", 100)?;
    if runs == 0 {
        return Err(ParameterError {
            name: "runs",
            value: "0".into(),
            reason: "must be at least 1",
        }
        .into());
    }
    Ok(Experiment {
        params,
        algorithms,
        problems,
        runs,
        out: entries.get("out").map_or_else(|| PathBuf::from("results"), PathBuf::from),
        grammar: entries.get("grammar").map(PathBuf::from),
        dataset: entries.get("dataset").map(PathBuf::from),
        split_seed: typed(entries, "split_seed", 0)?,
        multiplexer_msb_first: typed(entries, "multiplexer_msb_first", true)?,
    })
}

/// Config file contents overlaid with command-line values.
pub fn parse_config(text: &str, overrides: &[(&str, &str)]) -> Result<Experiment, CliError> {
    let mut entries = parse_config_entries(text)?;
    for (k, v) in overrides {
        entries.insert(k.to_string(), v.to_string());
    }
    experiment_from_entries(&entries)
}

pub fn build_problem(name: &str, exp: &Experiment) -> Result<Box<dyn Problem>, CliError> {
    let grammar_text = match &exp.grammar {
        Some(path) => Some(fs::read_to_string(path).map_err(io_error(path))?),
        None => None,
    };
    let grammar = |features| -> Result<_, CliError> {
        grammar_text
            .as_deref()
            .map(|t| parse_grammar(t, features).map_err(|e| CliError::Data(format!("grammar: {e}"))))
            .transpose()
    };
    let problem: Box<dyn Problem> = match name {
        "pagie" => {
            let p = Regression::pagie();
            match grammar(Some(2))? {
                Some(g) => Box::new(p.with_grammar(g)),
                None => Box::new(p),
            }
        }
        "boston" => {
            let path = exp
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::Usage("problem boston needs the `dataset` key".into()))?;
            let p = Regression::boston(path, exp.split_seed, None)?;
            match grammar(Some(BOSTON_FEATURES))? {
                Some(g) => Box::new(p.with_grammar(g)),
                None => Box::new(p),
            }
        }
        "parity5" | "multiplexer11" | "multiplexer11-full" => {
            let p = match name {
                "parity5" => BooleanProblem::parity5(),
                "multiplexer11" => BooleanProblem::multiplexer11(exp.multiplexer_msb_first, false),
                _ => BooleanProblem::multiplexer11(exp.multiplexer_msb_first, true),
            };
            match grammar(None)? {
                Some(g) => Box::new(p.with_grammar(g)),
                None => Box::new(p),
            }
        }
        other => return Err(CliError::UnknownProblem(other.to_string())),
    };
    Ok(problem)
}

fn quote(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

/// Per-generation CSV of one run.
pub fn run_csv(run: usize, record: &RunRecord, with_test: bool) -> String {
    let mut out = String::from(RUN_HEADER);
    if with_test {
        out.push_str(",best_test_fitness");
    }
    out.push('\n');
    for g in &record.generations {
        let _ = write!(
            out,
            "{run},{},{},{},{},{}",
            g.generation,
            g.best_fitness,
            g.mean_fitness,
            g.invalid_count,
            quote(&g.best_phenotype)
        );
        if with_test {
            let _ = write!(out, ",{}", g.best_test_fitness.unwrap_or(f64::INFINITY));
        }
        out.push('\n');
    }
    out
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Mean and standard deviation of best fitness per generation across runs.
pub fn aggregate_csv(records: &[RunRecord], with_test: bool) -> String {
    let mut out = String::from("algorithm,problem,generation,runs,mean_best_fitness,sd_best_fitness");
    if with_test {
        out.push_str(",mean_best_test_fitness,sd_best_test_fitness");
    }
    out.push('\n');
    let first = &records[0];
    for (i, g) in first.generations.iter().enumerate() {
        let best: Vec<f64> = records.iter().map(|r| r.generations[i].best_fitness).collect();
        let (mean, sd) = mean_sd(&best);
        let _ = write!(
            out,
            "{},{},{},{},{mean},{sd}",
            first.algorithm,
            first.problem,
            g.generation,
            records.len()
        );
        if with_test {
            let test: Vec<f64> = records
                .iter()
                .map(|r| r.generations[i].best_test_fitness.unwrap_or(f64::INFINITY))
                .collect();
            let (mean, sd) = mean_sd(&test);
            let _ = write!(out, ",{mean},{sd}");
        }
        out.push('\n');
    }
    out
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}

pub fn run_directory(out: &Path, problem: &str, algorithm: Algorithm) -> PathBuf {
    out.join(problem).join(algorithm.name())
}

/// Executes every (problem, algorithm) pair of the experiment and returns
/// the files written.
pub fn execute(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for name in &exp.problems {
        let problem = build_problem(name, exp)?;
        let with_test = problem.has_test_set();
        for &algorithm in &exp.algorithms {
            let dir = run_directory(&exp.out, name, algorithm);
            let run = |r: usize| {
                let params = Parameters {
                    seed: exp.params.seed.wrapping_add(r as u64),
                    ..exp.params.clone()
                };
                evolve(problem.as_ref(), algorithm, params)
            };
            let records: Vec<RunRecord> = if exp.params.parallel {
                (0..exp.runs).into_par_iter().map(run).collect::<Result<_, _>>()?
            } else {
                (0..exp.runs).map(run).collect::<Result<_, _>>()?
            };
            for (r, record) in records.iter().enumerate() {
                let path = dir.join(format!("run_{r:03}.csv"));
                write_atomic(&path, &run_csv(r, record, with_test))?;
                written.push(path);
            }
            let path = dir.join("aggregate.csv");
            write_atomic(&path, &aggregate_csv(&records, with_test))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn command_run(args: &RunArgs) -> Result<Vec<PathBuf>, CliError> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path).map_err(io_error(path))?,
        None => String::new(),
    };
    let overrides: Vec<(&str, &str)> = args.overrides().into_iter().map(|(k, v)| (k, v.as_str())).collect();
    let exp = parse_config(&text, &overrides)?;
    execute(&exp)
}

/// Final-generation samples of one algorithm on one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub algorithm: String,
    pub problem: String,
    pub dir: PathBuf,
    pub values: Vec<f64>,
}

fn find_run_dirs(root: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if root.join("aggregate.csv").is_file() {
        found.push(root.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_error(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_run_dirs(&e, found)?;
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Data(format!("{}: no `{name}` column", path.display())))
}

/// Loads the final-generation statistic of every run below `dir`.
pub fn load_samples(dir: &Path, statistic: &str) -> Result<SampleSet, CliError> {
    let aggregate = dir.join("aggregate.csv");
    let (header, rows) = read_records(&aggregate)?;
    let first = rows
        .first()
        .ok_or_else(|| CliError::Data(format!("{}: empty", aggregate.display())))?;
    let algorithm = first[column(&header, "algorithm", &aggregate)?].to_string();
    let problem = first[column(&header, "problem", &aggregate)?].to_string();

    let mut runs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_error(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".csv"))
        })
        .collect();
    runs.sort();
    let wanted = if statistic == "test" {
        "best_test_fitness"
    } else {
        "best_fitness"
    };
    let mut values = Vec::with_capacity(runs.len());
    for run in &runs {
        let (header, rows) = read_records(run)?;
        let col = column(&header, wanted, run)?;
        let last = rows
            .last()
            .ok_or_else(|| CliError::Data(format!("{}: no generations", run.display())))?;
        let v: f64 = last[col]
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad value `{}`", run.display(), &last[col])))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::Data(format!("{}: no run files", dir.display())));
    }
    Ok(SampleSet {
        algorithm,
        problem,
        dir: dir.to_path_buf(),
        values,
    })
}

pub struct CompareReport {
    pub problem: String,
    pub samples: Vec<SampleSet>,
    pub reference: Option<usize>,
    pub alpha: f64,
    pub comparison: Comparison,
}

pub fn compare_dirs(
    dirs: &[PathBuf],
    statistic: &str,
    alpha: f64,
    reference: Option<&str>,
    all_pairs: bool,
) -> Result<CompareReport, CliError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ParameterError {
            name: "alpha",
            value: alpha.to_string(),
            reason: "must lie in [0, 1]",
        }
        .into());
    }
    let mut found = Vec::new();
    for d in dirs {
        find_run_dirs(d, &mut found)?;
    }
    found.dedup();
    let samples = found
        .iter()
        .map(|d| load_samples(d, statistic))
        .collect::<Result<Vec<_>, _>>()?;
    if samples.len() < 2 {
        return Err(CliError::Usage(format!("need at least two sample sets, found {}", samples.len())));
    }
    let problem = samples[0].problem.clone();
    if let Some(s) = samples.iter().find(|s| s.problem != problem) {
        return Err(CliError::Data(format!(
            "mismatched problems: `{problem}` and `{}` ({})",
            s.problem,
            s.dir.display()
        )));
    }
    let reference = if all_pairs {
        None
    } else {
        match reference {
            Some(name) => Some(
                samples
                    .iter()
                    .position(|s| s.algorithm == name)
                    .ok_or_else(|| CliError::Usage(format!("--reference: no samples for `{name}`")))?,
            ),
            None => samples.iter().position(|s| s.algorithm == Algorithm::Copsge.name()),
        }
    };
    let groups: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let comparison = compare_groups(&groups, reference, alpha)?;
    Ok(CompareReport {
        problem,
        samples,
        reference,
        alpha,
        comparison,
    })
}

fn label(samples: &[SampleSet], i: usize) -> String {
    let s = &samples[i];
    if samples.iter().filter(|o| o.algorithm == s.algorithm).count() > 1 {
        format!("{} ({})", s.algorithm, s.dir.display())
    } else {
        s.algorithm.clone()
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl CompareReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        let c = &self.comparison;
        let _ = writeln!(out, "problem: {}", self.problem);
        let _ = writeln!(out, "{:<24} {:>5} {:>14} {:>14}", "algorithm", "runs", "mean", "median");
        for (i, s) in self.samples.iter().enumerate() {
            let (mean, _) = mean_sd(&s.values);
            let _ = writeln!(
                out,
                "{:<24} {:>5} {:>14.6} {:>14.6}",
                label(&self.samples, i),
                s.values.len(),
                mean,
                median(&s.values)
            );
        }
        let _ = writeln!(
            out,
            "Kruskal-Wallis H = {:.4}, df = {}, p = {:.3e}",
            c.kruskal.h, c.kruskal.df, c.kruskal.p
        );
        if !c.significant {
            let _ = writeln!(out, "no significant differences at alpha = {}", self.alpha);
            return out;
        }
        let _ = writeln!(
            out,
            "{:<36} {:>10} {:>10} {:>7} {:>6}  result",
            "comparison", "p", "p_bonf", "r", "effect"
        );
        for p in &c.pairs {
            let verdict = if !p.significant {
                "not significant".to_string()
            } else if p.first_better {
                format!("{} better", label(&self.samples, p.first))
            } else {
                format!("{} better", label(&self.samples, p.second))
            };
            let _ = writeln!(
                out,
                "{:<36} {:>10.3e} {:>10.3e} {:>7.3} {:>6}  {verdict}",
                format!("{} vs {}", label(&self.samples, p.first), label(&self.samples, p.second)),
                p.test.p,
                p.p_adjusted,
                p.r,
                p.effect.symbol(p.first_better)
            );
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("problem,first,second,u,p,p_adjusted,z,r,effect,symbol,significant,better\n");
        for p in &self.comparison.pairs {
            let better = if !p.significant {
                String::new()
            } else if p.first_better {
                self.samples[p.first].algorithm.clone()
            } else {
                self.samples[p.second].algorithm.clone()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.problem,
                self.samples[p.first].algorithm,
                self.samples[p.second].algorithm,
                p.test.u,
                p.test.p,
                p.p_adjusted,
                p.test.z,
                p.r,
                p.effect.name(),
                p.effect.symbol(p.first_better),
                p.significant,
                better
            );
        }
        out
    }
}

pub fn command_compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let report = compare_dirs(
        &args.dirs,
        &args.statistic,
        args.alpha,
        args.reference.as_deref(),
        args.all_pairs,
    )?;
    if let Some(path) = &args.out {
        write_atomic(path, &report.csv())?;
    }
    Ok(report)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => command_run(args).map(|files| {
            println!("wrote {} files", files.len());
        }),
        Command::Compare(args) => command_compare(args).map(|report| print!("{}", report.text())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
