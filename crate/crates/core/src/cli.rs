//! Batch command-line front end: dataset ingestion (CSV or synthetic
//! mixture), kernel configuration, selection runs, selection diagnostics,
//! and strategy sweeps. Every command is a pure function of its config and
//! input files; outputs use fixed float formatting (17 significant digits)
//! and are written atomically, so re-runs reproduce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde_json::Value;

use crate::approx;
use crate::data::{self, ConditionalDistribution, Dataset, SelectionMask};
use crate::error::{Error, Result};
use crate::eval::{self, SweepOptions};
use crate::kernel::{self, KernelFamily, KernelSpec};
use crate::select::{self, Strategy};

/// Keys accepted in a config file. The union over all subcommands, so one
/// archived config can drive a whole select/diagnose/sweep pipeline.
const KNOWN_KEYS: [&str; 26] = [
    "data",
    "label-col",
    "mixture-n",
    "mixture-centers",
    "mixture-sigma",
    "kernel",
    "gamma",
    "scale",
    "degree",
    "coef0",
    "seed",
    "out",
    "knn-k",
    "strategy",
    "strategies",
    "m",
    "fraction",
    "fractions",
    "ridge",
    "ted-gamma",
    "ted-scale",
    "ted-max-iter",
    "ted-tol",
    "selection",
    "spectral-tol",
    "weights",
];

#[derive(Debug, Parser)]
#[command(
    name = "kselect",
    version,
    about = "Kernel-based training-data selection and diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one selection strategy; writes selection.json and indices.txt.
    Select(SelectArgs),
    /// Diagnose an existing selection; writes bound_report.json and
    /// power_profile.csv.
    Diagnose(DiagnoseArgs),
    /// Evaluate strategies across labelling fractions; writes sweep.csv and
    /// summary.json.
    Sweep(SweepArgs),
    /// Export the full kernel matrix; writes gram.csv.
    Gram(GramArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct CommonArgs {
    /// Flat key=value config file; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Headed CSV dataset (all feature columns numeric).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Header of the label column inside --data.
    #[arg(long)]
    label_col: Option<String>,
    /// Synthetic mixture: points drawn per class.
    #[arg(long)]
    mixture_n: Option<usize>,
    /// Synthetic mixture centers, one ;-separated group of comma-separated
    /// coordinates per class, e.g. "0,0;3,3".
    #[arg(long)]
    mixture_centers: Option<String>,
    /// Synthetic mixture: isotropic standard deviation (default 1).
    #[arg(long)]
    mixture_sigma: Option<f64>,
    /// Kernel family: linear, rbf, cosine, poly (default rbf).
    #[arg(long)]
    kernel: Option<String>,
    /// RBF bandwidth; defaults to 1/(d * total variance).
    #[arg(long)]
    gamma: Option<f64>,
    /// Positive multiplicative kernel scale (default 1).
    #[arg(long)]
    scale: Option<f64>,
    /// Polynomial kernel degree (default 2).
    #[arg(long)]
    degree: Option<u32>,
    /// Polynomial kernel additive constant (default 1).
    #[arg(long)]
    coef0: Option<f64>,
    /// Seed for all randomized pieces (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if absent (default current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Neighbour count for k-NN evaluation and bootstraps (default 5).
    #[arg(long)]
    knn_k: Option<usize>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Strategy id: random, facility, facility-weighted, ted-greedy,
    /// ted-sequential, inverse-diagonal, uncertainty.
    #[arg(long)]
    strategy: Option<String>,
    /// Number of points to select. Exactly one of --m and --fraction.
    #[arg(long)]
    m: Option<usize>,
    /// Fraction of the dataset to select, in (0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    /// Ridge added to the selected block in the greedy trace objective
    /// (default 0).
    #[arg(long)]
    ridge: Option<f64>,
    /// Sparsity strength for the alternating ranking (default 1).
    #[arg(long)]
    ted_gamma: Option<f64>,
    /// Regularizer weight for the alternating ranking (default 1).
    #[arg(long)]
    ted_scale: Option<f64>,
    /// Iteration cap for the alternating ranking (default 50).
    #[arg(long)]
    ted_max_iter: Option<usize>,
    /// Relative-change tolerance for the alternating ranking (default 1e-6).
    #[arg(long)]
    ted_tol: Option<f64>,
    /// Per-point weights file, one value per line (facility-weighted).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Selection indices file, one index per line (as written by select).
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Relative eigenvalue cutoff for the empirical spectrum
    /// (default 1e-12).
    #[arg(long)]
    spectral_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated strategy ids (default
    /// random,facility,ted-greedy,inverse-diagonal,uncertainty).
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated labelling fractions in (0, 1]
    /// (default 0.05 to 0.90 in 0.05 steps).
    #[arg(long)]
    fractions: Option<String>,
    /// Ridge for the greedy trace strategy (default 0).
    #[arg(long)]
    ridge: Option<f64>,
    /// Sparsity strength for the alternating ranking (default 1).
    #[arg(long)]
    ted_gamma: Option<f64>,
    /// Regularizer weight for the alternating ranking (default 1).
    #[arg(long)]
    ted_scale: Option<f64>,
    /// Iteration cap for the alternating ranking (default 50).
    #[arg(long)]
    ted_max_iter: Option<usize>,
    /// Relative-change tolerance for the alternating ranking (default 1e-6).
    #[arg(long)]
    ted_tol: Option<f64>,
    /// Per-point weights file, one value per line (facility-weighted).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GramArgs {
    #[command(flatten)]
    common: CommonArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gram(a) => cmd_gram(a),
    }
}

/// Dataset, exact posterior when synthetic, kernel, and shared scalars
/// after merging config file and flags.
struct Resolved {
    dataset: Dataset,
    truth: Option<ConditionalDistribution>,
    spec: KernelSpec,
    seed: u64,
    out: PathBuf,
    knn_k: usize,
}

fn load_config(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    const OP: &str = "load_config";
    let mut map = BTreeMap::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(OP, e))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::invalid(
                OP,
                format!("line {}: expected key=value", lineno + 1),
            ));
        };
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::invalid(
                OP,
                format!("line {}: unknown key \"{key}\"", lineno + 1),
            ));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Flag value if given, else the config entry parsed to the same type.
fn pick<T>(flag: Option<T>, cfg: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| Error::invalid("load_config", format!("bad value for {key}: {e}"))),
    }
}

fn resolve_common(args: &CommonArgs, cfg: &BTreeMap<String, String>) -> Result<Resolved> {
    const OP: &str = "resolve_config";
    // The dataset source is one logical setting: when any source flag is
    // present the config's source keys are ignored wholesale, so a flag can
    // replace an archived csv with a mixture (or vice versa) cleanly.
    let flags_have_source = args.data.is_some() || args.mixture_centers.is_some();
    let (data_path, label_col, mixture_n, mixture_centers, mixture_sigma) = if flags_have_source {
        (
            args.data.clone(),
            args.label_col.clone(),
            args.mixture_n,
            args.mixture_centers.clone(),
            args.mixture_sigma,
        )
    } else {
        (
            pick(args.data.clone(), cfg, "data")?,
            pick(args.label_col.clone(), cfg, "label-col")?,
            pick(args.mixture_n, cfg, "mixture-n")?,
            pick(args.mixture_centers.clone(), cfg, "mixture-centers")?,
            pick(args.mixture_sigma, cfg, "mixture-sigma")?,
        )
    };
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);

    let (dataset, truth) = match (&data_path, &mixture_centers) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(Error::invalid(
                OP,
                "exactly one dataset source: --data or --mixture-centers",
            ));
        }
        (Some(path), None) => {
            if mixture_n.is_some() || mixture_sigma.is_some() {
                return Err(Error::invalid(
                    OP,
                    "exactly one dataset source: mixture settings given with --data",
                ));
            }
            (data::load_csv(path, label_col.as_deref())?, None)
        }
        (None, Some(centers)) => {
            if label_col.is_some() {
                return Err(Error::invalid(OP, "label-col applies to csv datasets"));
            }
            let n_per_class = mixture_n
                .ok_or_else(|| Error::invalid(OP, "mixture-n is required with mixture-centers"))?;
            let centers = parse_centers(centers)?;
            let sigma = mixture_sigma.unwrap_or(1.0);
            let (ds, posterior) =
                data::make_gaussian_mixture(seed, n_per_class, centers.view(), sigma)?;
            (ds, Some(posterior))
        }
    };

    let family_name = pick(args.kernel.clone(), cfg, "kernel")?.unwrap_or_else(|| "rbf".into());
    let gamma = pick(args.gamma, cfg, "gamma")?;
    let scale = pick(args.scale, cfg, "scale")?.unwrap_or(1.0);
    let degree = pick(args.degree, cfg, "degree")?.unwrap_or(2);
    let coef0 = pick(args.coef0, cfg, "coef0")?.unwrap_or(1.0);
    let family = match family_name.as_str() {
        "linear" => KernelFamily::Linear,
        "rbf" => KernelFamily::Rbf {
            gamma: match gamma {
                Some(g) => g,
                None => kernel::default_rbf_gamma(dataset.features())?,
            },
        },
        "cosine" => KernelFamily::Cosine,
        "poly" => KernelFamily::Polynomial { degree, coef0 },
        other => {
            return Err(Error::invalid(
                OP,
                format!("unknown kernel \"{other}\" (linear, rbf, cosine, poly)"),
            ));
        }
    };
    let spec = KernelSpec::new(family, scale)?;

    let out = pick(args.out.clone(), cfg, "out")?.unwrap_or_else(|| PathBuf::from("."));
    let knn_k = pick(args.knn_k, cfg, "knn-k")?.unwrap_or(5);
    if knn_k == 0 {
        return Err(Error::invalid(OP, "knn-k must be positive"));
    }
    Ok(Resolved {
        dataset,
        truth,
        spec,
        seed,
        out,
        knn_k,
    })
}

fn parse_centers(s: &str) -> Result<Array2<f64>> {
    const OP: &str = "parse_centers";
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for group in s.split(';') {
        let vals = parse_floats(group, OP)?;
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(Error::invalid(OP, "centers differ in dimension"));
            }
        }
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::invalid(OP, "need at least 2 centers"));
    }
    let mut arr = Array2::<f64>::zeros((rows.len(), rows[0].len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            arr[(i, j)] = *v;
        }
    }
    Ok(arr)
}

fn parse_floats(s: &str, op: &'static str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            return Err(Error::invalid(op, "empty number"));
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::invalid(op, format!("bad number \"{tok}\"")))?;
        out.push(v);
    }
    Ok(out)
}

fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        out.push(Strategy::from_str(tok.trim())?);
    }
    Ok(out)
}

fn load_weights(path: &Path, n: usize) -> Result<Array1<f64>> {
    const OP: &str = "load_weights";
    let text = fs::read_to_string(path).map_err(|e| Error::io(OP, e))?;
    let mut vals = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::invalid(OP, format!("line {}: not a number", lineno + 1)))?;
        vals.push(v);
    }
    if vals.len() != n {
        return Err(Error::invalid(
            OP,
            format!("{} weights for {} points", vals.len(), n),
        ));
    }
    Ok(Array1::from_vec(vals))
}

fn load_indices(path: &Path) -> Result<Vec<usize>> {
    const OP: &str = "load_indices";
    let text = fs::read_to_string(path).map_err(|e| Error::io(OP, e))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| Error::invalid(OP, format!("line {}: not an index", lineno + 1)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::invalid(OP, "no indices in file"));
    }
    Ok(out)
}

/// Fixed scientific formatting with 17 significant digits: enough to
/// round-trip any f64, and stable across runs and platforms.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_json_string(s: &str, out: &mut String) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_json(value: &Value, depth: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Value::Number(n) => {
            // Integers print bare; every float uses the fixed 17-digit form.
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&fmt_float(n.as_f64().expect("finite number")));
            }
        }
        Value::String(s) => write_json_string(s, out),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(depth + 1, out);
                write_json(item, depth + 1, out);
            }
            out.push('\n');
            push_indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            // Alphabetical keys keep the bytes independent of field order.
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, v)) in sorted.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(depth + 1, out);
                write_json_string(k, out);
                out.push_str(": ");
                write_json(v, depth + 1, out);
            }
            out.push('\n');
            push_indent(depth, out);
            out.push('}');
        }
    }
}

fn render_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, 0, &mut out);
    out.push('\n');
    out
}

/// Write into the output directory via a temp file and rename, so readers
/// never observe a half-written file.
fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<()> {
    const OP: &str = "write_output";
    fs::create_dir_all(dir).map_err(|e| Error::io(OP, e))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content).map_err(|e| Error::io(OP, e))?;
    fs::rename(&tmp, dir.join(name)).map_err(|e| Error::io(OP, e))
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    const OP: &str = "cmd_select";
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &cfg)?;
    let n = r.dataset.n();

    let strategy_name = pick(args.strategy.clone(), &cfg, "strategy")?
        .ok_or_else(|| Error::invalid(OP, "strategy is required"))?;
    let strategy = Strategy::from_str(&strategy_name)?;
    // m/fraction is one logical setting: a flag for either replaces both
    // config entries.
    let (m_flag, fraction) = if args.m.is_some() || args.fraction.is_some() {
        (args.m, args.fraction)
    } else {
        (pick(None, &cfg, "m")?, pick(None, &cfg, "fraction")?)
    };
    let m = match (m_flag, fraction) {
        (Some(m), None) => m,
        (None, Some(f)) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(OP, "fraction must lie in (0, 1]"));
            }
            ((f * n as f64).round() as usize).clamp(1, n)
        }
        _ => {
            return Err(Error::invalid(OP, "exactly one of m and fraction is required"));
        }
    };
    let ridge = pick(args.ridge, &cfg, "ridge")?.unwrap_or(0.0);
    let ted_gamma = pick(args.ted_gamma, &cfg, "ted-gamma")?.unwrap_or(1.0);
    let ted_scale = pick(args.ted_scale, &cfg, "ted-scale")?.unwrap_or(1.0);
    let ted_max_iter = pick(args.ted_max_iter, &cfg, "ted-max-iter")?.unwrap_or(50);
    let ted_tol = pick(args.ted_tol, &cfg, "ted-tol")?.unwrap_or(1e-6);
    let weights_path: Option<PathBuf> = pick(args.weights.clone(), &cfg, "weights")?;

    let result = match strategy {
        Strategy::Random => select::select_random(n, m, r.seed)?,
        Strategy::Facility => select::select_facility_location(r.dataset.features(), m)?,
        Strategy::FacilityWeighted => {
            let path = weights_path
                .ok_or_else(|| Error::invalid(OP, "facility-weighted requires a weights file"))?;
            let w = load_weights(&path, n)?;
            select::select_facility_location_weighted(r.dataset.features(), m, w.view())?
        }
        Strategy::TedGreedy => {
            let k = kernel::gram(&r.spec, r.dataset.features())?;
            select::select_ted_greedy(&k, m, ridge)?
        }
        Strategy::TedSequential => {
            let k = kernel::gram(&r.spec, r.dataset.features())?;
            select::select_ted_sequential(&k, m, ted_gamma, ted_scale, ted_max_iter, ted_tol)?
        }
        Strategy::InverseDiagonal => {
            let k = kernel::gram(&r.spec, r.dataset.features())?;
            select::select_inverse_diagonal(&k, m)?
        }
        Strategy::Uncertainty => {
            let posterior = match &r.truth {
                Some(t) => t.clone(),
                None => {
                    let labels = r.dataset.labels().ok_or_else(|| {
                        Error::invalid(OP, "uncertainty requires labels or a synthetic source")
                    })?;
                    eval::bootstrap_posterior(&r.dataset, labels, r.knn_k, r.seed)?
                }
            };
            select::select_uncertainty(&posterior, m)?
        }
    };

    let json = serde_json::to_value(&result).map_err(|e| Error::invalid(OP, e.to_string()))?;
    write_atomic(&r.out, "selection.json", &render_json(&json))?;
    write_atomic(&r.out, "indices.txt", &result.indices_text())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    const OP: &str = "cmd_diagnose";
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &cfg)?;
    let n = r.dataset.n();

    let sel_path: PathBuf = pick(args.selection.clone(), &cfg, "selection")?
        .ok_or_else(|| Error::invalid(OP, "selection file is required"))?;
    let mask = SelectionMask::new(load_indices(&sel_path)?, n)?;
    let spectral_tol = pick(args.spectral_tol, &cfg, "spectral-tol")?.unwrap_or(1e-12);

    let k = kernel::gram(&r.spec, r.dataset.features())?;
    let profile = approx::power_profile(&k, &mask)?;
    let mut csv = String::from("index,value\n");
    for (i, v) in profile.values.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", fmt_float(*v));
    }

    // The bound needs a conditional distribution: the exact synthetic
    // posterior when available, otherwise point masses on the labels. With
    // neither, the report keeps its schema and nulls the label-dependent
    // fields.
    let p = match &r.truth {
        Some(t) => Some(t.clone()),
        None => match r.dataset.labels() {
            Some(l) => Some(data::one_hot(l)?),
            None => None,
        },
    };
    let spectrum = kernel::spectral_model(&k, spectral_tol)?;
    let report_json = match &p {
        Some(p) => {
            let report = approx::bound_report(&k, &mask, &spectrum, p)?;
            serde_json::to_value(&report).map_err(|e| Error::invalid(OP, e.to_string()))?
        }
        None => {
            let ted_half: f64 = profile.values.iter().sum();
            let trace_k = spectrum.trace();
            let first_term = ted_half / (2.0 * n as f64) * trace_k.sqrt();
            serde_json::json!({
                "ted_half": ted_half,
                "trace_k": trace_k,
                "first_term": first_term,
                "clamped_count": profile.clamped_count,
                "eps_h_per_class": Value::Null,
                "total": Value::Null,
                "rkhs_variant": Value::Null,
            })
        }
    };
    write_atomic(&r.out, "bound_report.json", &render_json(&report_json))?;
    write_atomic(&r.out, "power_profile.csv", &csv)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    const OP: &str = "cmd_sweep";
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &cfg)?;
    let n = r.dataset.n();

    let strategies = match pick(args.strategies.clone(), &cfg, "strategies")? {
        Some(list) => parse_strategies(&list)?,
        None => vec![
            Strategy::Random,
            Strategy::Facility,
            Strategy::TedGreedy,
            Strategy::InverseDiagonal,
            Strategy::Uncertainty,
        ],
    };
    let fractions = match pick(args.fractions.clone(), &cfg, "fractions")? {
        Some(list) => parse_floats(&list, OP)?,
        None => eval::default_fractions(),
    };

    let mut opts = SweepOptions::new(strategies, fractions, r.seed);
    opts.knn_k = r.knn_k;
    opts.ridge = pick(args.ridge, &cfg, "ridge")?.unwrap_or(0.0);
    opts.sequential_gamma = pick(args.ted_gamma, &cfg, "ted-gamma")?.unwrap_or(1.0);
    opts.sequential_scale = pick(args.ted_scale, &cfg, "ted-scale")?.unwrap_or(1.0);
    opts.sequential_max_iter = pick(args.ted_max_iter, &cfg, "ted-max-iter")?.unwrap_or(50);
    opts.sequential_tol = pick(args.ted_tol, &cfg, "ted-tol")?.unwrap_or(1e-6);
    opts.truth = r.truth.clone();
    if let Some(path) = pick::<PathBuf>(args.weights.clone(), &cfg, "weights")? {
        opts.weights = Some(load_weights(&path, n)?);
    }

    let records = eval::run_sweep(&r.dataset, &r.spec, &opts)?;

    let mut csv = String::from(
        "strategy,fraction,m,ted_half_trace,facility_value,error_rate,delta_tv,bound_total\n",
    );
    for rec in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            rec.strategy_id,
            fmt_float(rec.fraction),
            rec.m,
            fmt_float(rec.ted_half_trace),
            fmt_float(rec.facility_value),
            fmt_float(rec.error_rate),
            rec.delta_tv.map(fmt_float).unwrap_or_default(),
            rec.bound_total.map(fmt_float).unwrap_or_default(),
        );
    }
    write_atomic(&r.out, "sweep.csv", &csv)?;

    // Per-strategy rank correlation between the trace term and the error,
    // over cells with a nonempty unlabelled set; null when fewer than 3
    // cells or a constant column makes the correlation undefined.
    let mut summary = serde_json::Map::new();
    for strat in &opts.strategies {
        let id = strat.id();
        let xs: Vec<f64> = records
            .iter()
            .filter(|rec| rec.strategy_id == id && !rec.degenerate_eval)
            .map(|rec| rec.ted_half_trace)
            .collect();
        let ys: Vec<f64> = records
            .iter()
            .filter(|rec| rec.strategy_id == id && !rec.degenerate_eval)
            .map(|rec| rec.error_rate)
            .collect();
        let value = match eval::spearman(&xs, &ys) {
            Ok(v) => Value::from(v),
            Err(_) => Value::Null,
        };
        summary.insert(id.to_string(), value);
    }
    write_atomic(&r.out, "summary.json", &render_json(&Value::Object(summary)))
}

fn cmd_gram(args: &GramArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_common(&args.common, &cfg)?;
    let k = kernel::gram(&r.spec, r.dataset.features())?;
    let v = k.values();
    let mut csv = String::new();
    for i in 0..v.nrows() {
        for j in 0..v.ncols() {
            if j > 0 {
                csv.push(',');
            }
            csv.push_str(&fmt_float(v[(i, j)]));
        }
        csv.push('\n');
    }
    write_atomic(&r.out, "gram.csv", &csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn fixed_float_form_is_17_significant_digits() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_float(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_float(-3.25), "-3.2500000000000000e0");
        // Round-trips exactly.
        let v = 0.929_873_495_032_193_7;
        assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn json_renderer_sorts_keys_and_formats_floats() {
        let value = serde_json::json!({
            "zeta": [1.0, 2],
            "alpha": null,
            "mid": {"b": true, "a": "x\"y"},
        });
        let text = render_json(&value);
        let alpha = text.find("\"alpha\"").unwrap();
        let mid = text.find("\"mid\"").unwrap();
        let zeta = text.find("\"zeta\"").unwrap();
        assert!(alpha < mid && mid < zeta);
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.contains("\n    2\n"));
        assert!(text.contains("\\\"y\""));
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn config_file_parses_and_flags_win() {
        let f = write_temp("# comment\nseed = 9\nkernel=linear\nted_gamma = 0.25\n");
        let cfg = load_config(Some(f.path())).unwrap();
        assert_eq!(cfg.get("seed").map(String::as_str), Some("9"));
        // Underscored keys normalize to the flag spelling.
        assert_eq!(cfg.get("ted-gamma").map(String::as_str), Some("0.25"));
        let seed: Option<u64> = pick(Some(3), &cfg, "seed").unwrap();
        assert_eq!(seed, Some(3));
        let seed: Option<u64> = pick(None, &cfg, "seed").unwrap();
        assert_eq!(seed, Some(9));
        let absent: Option<f64> = pick(None, &cfg, "ridge").unwrap();
        assert_eq!(absent, None);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_lines() {
        let f = write_temp("serial = 1\n");
        assert!(load_config(Some(f.path())).is_err());
        let f = write_temp("just-a-token\n");
        assert!(load_config(Some(f.path())).is_err());
        let f = write_temp("seed = x\n");
        let cfg = load_config(Some(f.path())).unwrap();
        assert!(pick::<u64>(None, &cfg, "seed").is_err());
    }

    #[test]
    fn centers_parse_and_reject_ragged_groups() {
        let c = parse_centers("0,0;3,3").unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c[(1, 0)], 3.0);
        assert!(parse_centers("0,0;1").is_err());
        assert!(parse_centers("0,0").is_err());
        assert!(parse_centers("0,zz;1,1").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "file.txt", "one\n").unwrap();
        write_atomic(dir.path(), "file.txt", "two\n").unwrap();
        let text = fs::read_to_string(dir.path().join("file.txt")).unwrap();
        assert_eq!(text, "two\n");
        assert!(!dir.path().join(".file.txt.tmp").exists());
    }

    #[test]
    fn indices_and_weights_loaders_validate() {
        let f = write_temp("2\n0\n\n5\n");
        assert_eq!(load_indices(f.path()).unwrap(), vec![2, 0, 5]);
        let f = write_temp("x\n");
        assert!(load_indices(f.path()).is_err());
        let f = write_temp("");
        assert!(load_indices(f.path()).is_err());
        let f = write_temp("1.5\n2.5\n");
        assert_eq!(
            load_weights(f.path(), 2).unwrap().to_vec(),
            vec![1.5, 2.5]
        );
        assert!(load_weights(f.path(), 3).is_err());
    }
}
