//! Command-line front end: `estimate`, `benchmark` and `capacity`.
//!
//! Settings come from a flat `key = value` file (`--config`), then
//! `--set key=value` overrides, then dedicated flags. Every run needs a
//! seed. Output files start with a header recording the crate version, a
//! hash of the resolved settings and the seed.
//!
//! Exit codes: 0 success, 1 runtime or training failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::benchmark::{
    aggregate, derive_seed, evaluate, evaluate_ksg, reports_to_csv, sweep, train_estimator, Method, SweepGrid,
    TrainConfig, TrialOutcome,
};
use crate::capacity::{cooperative_train, trajectory_to_csv, CoopConfig};
use crate::channels::{closed_form_awgn_mi, snr_db_to_sigma2, ChannelSpec};
use crate::estimators::{select_alpha, EstimatorKind, DEFAULT_ALPHA_BETA, DEFAULT_MINE_EMA_RATE, DEFAULT_SMILE_TAU};
use crate::ksg::KsgConfig;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mimcap", version, about = "Neural mutual-information estimation and capacity learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one estimator on one channel.
    Estimate(EstimateArgs),
    /// Repeated-training sweep over estimators, dimensions and SNRs.
    Benchmark(BenchmarkArgs),
    /// Cooperative generator/discriminator capacity learning.
    Capacity(CapacityArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Report information in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Estimator, e.g. `mmie`, `alpha-mmie(alpha=-0.3)`, `ddime(alpha=0.1)`, `ksg`.
    #[arg(long)]
    pub est: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated estimators.
    #[arg(long)]
    pub est: Option<String>,
    /// Comma-separated dimensions.
    #[arg(long)]
    pub d: Option<String>,
    /// Comma-separated SNRs in dB.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<String>,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `continuous` or `discrete`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of messages (discrete mode).
    #[arg(long = "M")]
    pub messages: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub est: Option<String>,
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidInput(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved settings: sorted `key -> value` text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut s = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            s.apply(line)
                .map_err(|_| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
        }
        Ok(s)
    }

    /// Applies one `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> CliResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {assignment:?}")))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Usage(format!("empty key in {assignment:?}")));
        }
        self.values.insert(key, v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        self.parsed(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting {key}")))
    }

    fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown setting {k:?}"))),
            None => Ok(()),
        }
    }

    /// SHA-256 of the canonical `key=value\n` listing, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn load_settings(common: &CommonArgs) -> CliResult<Settings> {
    let mut s = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            Settings::parse(&text)?
        }
        None => Settings::default(),
    };
    for a in &common.set {
        s.apply(a)?;
    }
    if let Some(seed) = common.seed {
        s.set("seed", seed);
    }
    if common.bits {
        s.set("units", "bits");
    }
    Ok(s)
}

/// Splits on commas outside parentheses.
fn split_list(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> CliResult<Vec<T>> {
    let items = split_list(text);
    if items.is_empty() {
        return Err(CliError::Usage(format!("{key} must not be empty")));
    }
    items
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Usage(format!("invalid value {v:?} in {key}")))
        })
        .collect()
}

/// Parses `name` or `name(key=value, ...)`.
///
/// `alpha-mmie` without `alpha` takes `select_alpha(d, sigma2, messages, beta)`.
pub fn parse_method(text: &str, d: usize, sigma2: f64, messages: Option<usize>) -> CliResult<Method> {
    let text = text.trim();
    let (name, params) = match text.split_once('(') {
        Some((n, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| CliError::Usage(format!("unbalanced parentheses in {text:?}")))?;
            (n.trim(), inner)
        }
        None => (text, ""),
    };
    let mut p = BTreeMap::new();
    for kv in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value in {text:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid number in {text:?}")))?;
        p.insert(k.trim().to_string(), v);
    }
    let take = |p: &mut BTreeMap<String, f64>, key: &str| p.remove(key);
    let method = match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "mmie" => Method::Neural(EstimatorKind::Mmie),
        "alpha-mmie" | "ammie" => {
            let alpha = match take(&mut p, "alpha") {
                Some(a) => a,
                None => {
                    let beta = take(&mut p, "beta").unwrap_or(DEFAULT_ALPHA_BETA);
                    select_alpha(d, sigma2, messages, beta)?
                }
            };
            Method::Neural(EstimatorKind::AlphaMmie { alpha })
        }
        "mine" => Method::Neural(EstimatorKind::Mine {
            ema_rate: take(&mut p, "ema_rate").unwrap_or(DEFAULT_MINE_EMA_RATE),
        }),
        "nwj" => Method::Neural(EstimatorKind::Nwj),
        "smile" => Method::Neural(EstimatorKind::Smile {
            tau: take(&mut p, "tau").unwrap_or(DEFAULT_SMILE_TAU),
        }),
        "idime" => Method::Neural(EstimatorKind::Idime),
        "ddime" => Method::Neural(EstimatorKind::Ddime {
            alpha: take(&mut p, "alpha").unwrap_or(1.0),
        }),
        "ksg" => {
            let k = take(&mut p, "k").unwrap_or(3.0);
            if k < 1.0 || k.fract() != 0.0 {
                return Err(CliError::Usage(format!("ksg k must be a positive integer, got {k}")));
            }
            Method::Ksg(KsgConfig { k: k as usize })
        }
        other => return Err(CliError::Usage(format!("unknown estimator {other:?}"))),
    };
    if let Some(k) = p.keys().next() {
        return Err(CliError::Usage(format!("unknown parameter {k:?} for {name}")));
    }
    if let Method::Neural(kind) = &method {
        kind.validate()?;
    }
    Ok(method)
}

const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "train_iterations",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "n_estimators",
    "n_test_batches",
];

fn train_config(s: &Settings) -> CliResult<(TrainConfig, &'static str)> {
    let (base, scale) = match s.get("scale").unwrap_or("desk") {
        "desk" => (TrainConfig::desk(), "desk"),
        "full" => (TrainConfig::full(), "full"),
        other => return Err(CliError::Usage(format!("scale must be desk or full, got {other:?}"))),
    };
    let cfg = TrainConfig {
        batch_size: s.or("batch_size", base.batch_size)?,
        train_iterations: s.or("train_iterations", base.train_iterations)?,
        learning_rate: s.or("learning_rate", base.learning_rate)?,
        adam_beta1: s.or("adam_beta1", base.adam_beta1)?,
        adam_beta2: s.or("adam_beta2", base.adam_beta2)?,
        n_estimators: s.or("n_estimators", base.n_estimators)?,
        n_test_batches: s.or("n_test_batches", base.n_test_batches)?,
    };
    cfg.validate()?;
    Ok((cfg, scale))
}

fn require_seed(s: &Settings) -> CliResult<u64> {
    s.parsed::<u64>("seed")?
        .ok_or_else(|| CliError::Usage("a seed is required (--seed N or seed = N)".into()))
}

fn units(s: &Settings) -> CliResult<(f64, &'static str)> {
    match s.get("units").unwrap_or("nats") {
        "nats" => Ok((1.0, "nats")),
        "bits" => Ok((1.0 / std::f64::consts::LN_2, "bits")),
        other => Err(CliError::Usage(format!("units must be nats or bits, got {other:?}"))),
    }
}

fn header(command: &str, s: &Settings, seed: u64, extra: &[String]) -> String {
    let mut h = String::new();
    writeln!(h, "# mimcap {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(h, "# command: {command}").unwrap();
    writeln!(h, "# config_hash: {}", s.hash()).unwrap();
    writeln!(h, "# seed: {seed}").unwrap();
    for line in extra {
        writeln!(h, "# {line}").unwrap();
    }
    h
}

fn meta_json(command: &str, s: &Settings, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_hash": s.hash(),
        "seed": seed,
        "settings": s.values,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn to_json(v: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(v).expect("serialisable");
    text.push('\n');
    text
}

/// Scales every number under the listed keys, recursively.
fn scale_json(v: &mut serde_json::Value, keys: &[&str], factor: f64) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if keys.contains(&k.as_str()) {
                    if let Some(x) = child.as_f64() {
                        *child = serde_json::json!(x * factor);
                        continue;
                    }
                }
                scale_json(child, keys, factor);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|c| scale_json(c, keys, factor)),
        _ => {}
    }
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<String> {
    let mut s = load_settings(&args.common)?;
    if let Some(e) = &args.est {
        s.set("est", e);
    }
    if let Some(d) = args.d {
        s.set("d", d);
    }
    if let Some(x) = args.snr_db {
        s.set("snr_db", x);
    }
    let mut allowed = vec!["seed", "units", "scale", "est", "d", "snr_db"];
    allowed.extend_from_slice(TRAIN_KEYS);
    s.check_keys(&allowed)?;
    let seed = require_seed(&s)?;
    let (scale, unit) = units(&s)?;
    let d: usize = s.require("d")?;
    let snr_db: f64 = s.require("snr_db")?;
    let sigma2 = snr_db_to_sigma2(snr_db);
    let ch = ChannelSpec::continuous(d, sigma2)?;
    let method = parse_method(s.get("est").unwrap_or("mmie"), d, sigma2, None)?;
    let (cfg, _) = train_config(&s)?;
    let truth = closed_form_awgn_mi(d, sigma2);

    let eval_seed = derive_seed(seed, &[1]);
    let outcome = match &method {
        Method::Neural(kind) => {
            let trained = train_estimator(&cfg, kind, &ch, derive_seed(seed, &[0]))?;
            evaluate(&trained, &ch, cfg.n_test_batches, cfg.batch_size, eval_seed)?
        }
        Method::Ksg(k) => evaluate_ksg(k, &ch, cfg.n_test_batches, cfg.batch_size, eval_seed)?,
    };
    let report = aggregate(&method.label(), d, snr_db, std::slice::from_ref(&outcome), truth)?;
    let head = header(
        "estimate",
        &s,
        seed,
        &[
            format!("{} test batches of {}", cfg.n_test_batches, cfg.batch_size),
            format!("units: {unit}"),
        ],
    );
    let path = write_file(&args.common.out, "estimate.csv", &(head + &reports_to_csv(&[report.clone()], scale)))?;
    match (&outcome, report.mean_estimate, report.variance) {
        (TrialOutcome::Valid { estimates }, Some(mean), Some(var)) => {
            let n = estimates.iter().flatten().count() as f64;
            Ok(format!(
                "{}: {:.4} +- {:.4} {unit} (closed form {:.4}); wrote {}",
                method.label(),
                mean * scale,
                (var / n).sqrt() * scale,
                truth * scale,
                path.display()
            ))
        }
        _ => Err(CliError::Runtime(format!(
            "{} failed to train (non-finite outputs); wrote {}",
            method.label(),
            path.display()
        ))),
    }
}

pub fn run_benchmark(args: &BenchmarkArgs) -> CliResult<String> {
    let mut s = load_settings(&args.common)?;
    if let Some(e) = &args.est {
        s.set("estimators", e);
    }
    if let Some(d) = &args.d {
        s.set("dims", d);
    }
    if let Some(x) = &args.snr_db {
        s.set("snrs_db", x);
    }
    let mut allowed = vec!["seed", "units", "scale", "estimators", "dims", "snrs_db", "write_json"];
    allowed.extend_from_slice(TRAIN_KEYS);
    s.check_keys(&allowed)?;
    let seed = require_seed(&s)?;
    let (scale, unit) = units(&s)?;
    let (cfg, scale_name) = train_config(&s)?;
    let dims: Vec<usize> = parse_list("dims", s.get("dims").unwrap_or("2"))?;
    let snrs_db: Vec<f64> = parse_list("snrs_db", s.get("snrs_db").unwrap_or("0,5,10"))?;
    let names = split_list(s.get("estimators").unwrap_or("mmie,alpha-mmie"));
    if names.is_empty() {
        return Err(CliError::Usage("estimators must not be empty".into()));
    }

    // alpha-mmie without an explicit alpha depends on (d, SNR), so each cell
    // resolves its own method
    let mut results = Vec::new();
    let mut cell = 0u64;
    for name in &names {
        for &d in &dims {
            for &snr in &snrs_db {
                let method = parse_method(name, d, snr_db_to_sigma2(snr), None)?;
                let grid = SweepGrid {
                    methods: vec![method],
                    dims: vec![d],
                    snrs_db: vec![snr],
                };
                results.extend(sweep(&grid, &cfg, derive_seed(seed, &[cell]))?);
                cell += 1;
            }
        }
    }
    let reports: Vec<_> = results.iter().map(|c| c.report.clone()).collect();
    let head = header(
        "benchmark",
        &s,
        seed,
        &[
            format!(
                "scale: {scale_name} ({} estimators x {} test batches of {}, {} iterations)",
                cfg.n_estimators, cfg.n_test_batches, cfg.batch_size, cfg.train_iterations
            ),
            format!("units: {unit}"),
        ],
    );
    let csv_path = write_file(&args.common.out, "benchmark.csv", &(head + &reports_to_csv(&reports, scale)))?;
    if s.or("write_json", true)? {
        let mut cells = serde_json::to_value(&results).expect("serialisable");
        scale_json(
            &mut cells,
            &["truth", "mean_estimate", "bias", "rmse"],
            scale,
        );
        scale_json(&mut cells, &["variance"], scale * scale);
        if scale != 1.0 {
            scale_estimates(&mut cells, scale);
        }
        let doc = serde_json::json!({ "meta": meta_json("benchmark", &s, seed), "units": unit, "cells": cells });
        write_file(&args.common.out, "benchmark.json", &to_json(&doc))?;
    }
    let failed = reports.iter().filter(|r| r.n_valid_estimators == 0).count();
    Ok(format!(
        "{} cells ({} with every trial failed); wrote {}",
        reports.len(),
        failed,
        csv_path.display()
    ))
}

fn scale_estimates(v: &mut serde_json::Value, factor: f64) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if k == "estimates" {
                    if let Some(items) = child.as_array_mut() {
                        for e in items.iter_mut() {
                            if let Some(x) = e.as_f64() {
                                *e = serde_json::json!(x * factor);
                            }
                        }
                        continue;
                    }
                }
                scale_estimates(child, factor);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|c| scale_estimates(c, factor)),
        _ => {}
    }
}

pub fn run_capacity(args: &CapacityArgs) -> CliResult<String> {
    let mut s = load_settings(&args.common)?;
    if let Some(m) = &args.mode {
        s.set("mode", m);
    }
    if let Some(m) = args.messages {
        s.set("messages", m);
    }
    if let Some(d) = args.d {
        s.set("d", d);
    }
    if let Some(x) = args.snr_db {
        s.set("snr_db", x);
    }
    if let Some(e) = &args.est {
        s.set("est", e);
    }
    s.check_keys(&[
        "seed",
        "units",
        "mode",
        "messages",
        "d",
        "snr_db",
        "est",
        "disc_iters_per_gen_iter",
        "total_disc_iters",
        "gen_learning_rate",
        "disc_learning_rate",
        "batch_size",
        "adam_beta1",
        "adam_beta2",
        "final_window",
        "n_mc",
    ])?;
    let seed = require_seed(&s)?;
    let (scale, unit) = units(&s)?;
    let d: usize = s.or("d", 2)?;
    let snr_db: f64 = s.require("snr_db")?;
    let sigma2 = snr_db_to_sigma2(snr_db);
    let (ch, messages) = match s.get("mode").unwrap_or("discrete") {
        "continuous" => (ChannelSpec::continuous(d, sigma2)?, None),
        "discrete" => {
            let m: usize = s.or("messages", 8)?;
            (ChannelSpec::discrete(d, sigma2, m)?, Some(m))
        }
        other => return Err(CliError::Usage(format!("mode must be continuous or discrete, got {other:?}"))),
    };
    let kind = match parse_method(s.get("est").unwrap_or("alpha-mmie"), d, sigma2, messages)? {
        Method::Neural(k) => k,
        Method::Ksg(_) => return Err(CliError::Usage("capacity learning needs a neural estimator".into())),
    };
    let base = CoopConfig::default();
    let cfg = CoopConfig {
        disc_iters_per_gen_iter: s.or("disc_iters_per_gen_iter", base.disc_iters_per_gen_iter)?,
        total_disc_iters: s.or("total_disc_iters", base.total_disc_iters)?,
        gen_learning_rate: s.or("gen_learning_rate", base.gen_learning_rate)?,
        disc_learning_rate: s.or("disc_learning_rate", base.disc_learning_rate)?,
        batch_size: s.or("batch_size", base.batch_size)?,
        adam_beta1: s.or("adam_beta1", base.adam_beta1)?,
        adam_beta2: s.or("adam_beta2", base.adam_beta2)?,
        estimator: kind,
        final_window: s.or("final_window", base.final_window)?,
        n_mc: s.or("n_mc", base.n_mc)?,
    };
    cfg.validate()?;
    let run = cooperative_train(&cfg, &ch, seed)?;
    let r = &run.result;
    let out = &args.common.out;
    let head = header("capacity", &s, seed, &[format!("units: {unit}")]);
    if let Some(book) = &r.codebook {
        write_file(out, "codebook.csv", &(head.clone() + &book.to_csv()))?;
    }
    write_file(out, "trajectory.csv", &(head + &trajectory_to_csv(&run.trajectory, scale)))?;
    let mut result = serde_json::to_value(r).expect("serialisable");
    scale_json(
        &mut result,
        &["capacity_estimate", "supportive_estimate", "renyi_capacity_estimate"],
        scale,
    );
    let doc = serde_json::json!({
        "meta": meta_json("capacity", &s, seed),
        "units": unit,
        "estimator": kind.label(),
        "closed_form_awgn_mi": closed_form_awgn_mi(d, sigma2) * scale,
        "result": result,
    });
    let path = write_file(out, "result.json", &to_json(&doc))?;
    if !r.valid {
        return Err(CliError::Runtime(format!(
            "training failed at iteration {:?}; wrote {}",
            r.failed_at,
            path.display()
        )));
    }
    let mut msg = format!("capacity estimate {:.4} {unit}", r.capacity_estimate * scale);
    if let Some(mi) = r.supportive_estimate {
        write!(msg, ", supportive {:.4} {unit}", mi * scale).unwrap();
    }
    write!(msg, "; wrote {}", path.display()).unwrap();
    Ok(msg)
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Benchmark(a) => run_benchmark(a),
        Command::Capacity(a) => run_capacity(a),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            let (CliError::Usage(m) | CliError::Runtime(m)) = &e;
            eprintln!("error: {m}");
            e.exit_code()
        }
    }
}
