//! Command implementations behind the `adascan` binary.
//!
//! Every `cmd_*` function returns a structured report so the same code path
//! serves the binary and the test suites. [`run_from`] maps outcomes onto
//! exit codes: 0 success, 1 runtime failure, 2 usage error.

pub mod args;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use adascan::data::{generate_synthetic, load_jsonl_with_classes, save_jsonl, SynthConfig};
use adascan::model::{check_gradients, init_params, Dims, ForwardOptions, HyperParams, BLOCK_NAMES};
use adascan::numcore::{GradCheckReport, OpKind, Tensor};
use adascan::pooling::FeatureSequence;
use adascan::train::{self, evaluate, predict_all, EpochRecord, Metrics, SELECT_THRESHOLD};
use adascan::{Dataset, ModelParams, Pooler};
use anyhow::Context;
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use args::{Cli, Command, DataArgs, EvalArgs, GenDataArgs, GradcheckArgs, HyperArgs, SweepArgs, TraceArgs, TrainArgs};

/// Relative error bound for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<adascan::Error> for CliError {
    fn from(e: adascan::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => {
            let report = cmd_train(a)?;
            for r in &report.log {
                println!("{}", format_record(r));
            }
            println!("wrote {} and {}", report.model_path.display(), report.metrics_path.display());
        }
        Command::Eval(a) => {
            let m = cmd_eval(a)?;
            println!("{}", serde_json::to_string(&m).context("encoding metrics")?);
        }
        Command::Trace(a) => {
            let traces = cmd_trace(a)?;
            if a.bars {
                for t in traces.iter().take(a.limit) {
                    print!("{}", render_bars(t, 40));
                }
            }
            println!("wrote {} traces to {}", traces.len(), a.out.join("trace.jsonl").display());
        }
        Command::Sweep(a) => {
            let rows = cmd_sweep(a)?;
            print!("{}", sweep_csv(&rows));
        }
        Command::Gradcheck(a) => {
            let summary = cmd_gradcheck(a)?;
            print!("{summary}");
            if !summary.passed() {
                let w = summary.worst();
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "gradient check failed: block {} coordinate {} has relative error {:.3e} (analytic {:.9e}, numeric {:.9e})",
                    w.name,
                    w.worst_coord,
                    w.max_rel_error,
                    w.analytic,
                    w.numeric
                )));
            }
        }
        Command::GenData(a) => {
            let s = cmd_gen_data(a)?;
            println!("{s}");
        }
    }
    Ok(())
}

fn format_record(r: &EpochRecord) -> String {
    let mut line = format!(
        "epoch {:>3} {:<5} acc {:.4} loss {:.4}",
        r.epoch, r.split, r.accuracy, r.mean_loss
    );
    if let Some(f) = r.mean_selected_fraction {
        line.push_str(&format!(" selected {f:.3}"));
    }
    if let Some(g) = r.signal_gap {
        line.push_str(&format!(" gap {g:.3}"));
    }
    line
}

/// Resolves `--synthetic`: a preset name, inline JSON, or a JSON file.
pub fn synth_config(spec: &str) -> CliResult<SynthConfig> {
    let cfg = if let Some(c) = SynthConfig::preset(spec) {
        c
    } else if spec.trim_start().starts_with('{') {
        serde_json::from_str(spec).map_err(|e| usage(format!("invalid synthetic config JSON: {e}")))?
    } else if Path::new(spec).is_file() {
        let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid synthetic config in {spec}: {e}")))?
    } else {
        return Err(usage(format!(
            "unknown synthetic config '{spec}' (expected standard, default, hard, tiny, JSON, or a JSON file)"
        )));
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Training split and optional held-out split.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl LoadedData {
    /// The split used for evaluation and tracing.
    pub fn eval_split(&self) -> &Dataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

pub fn load_data(args: &DataArgs) -> CliResult<LoadedData> {
    let (mut train, mut test) = match &args.data {
        Some(path) => {
            let train = load_jsonl_with_classes::<f64>(path, args.classes)
                .with_context(|| format!("loading {}", path.display()))?;
            let test = match &args.test_data {
                Some(p) => Some(
                    load_jsonl_with_classes::<f64>(p, args.classes)
                        .with_context(|| format!("loading {}", p.display()))?,
                ),
                None => None,
            };
            (train, test)
        }
        None => {
            let cfg = synth_config(args.synthetic.as_deref().unwrap_or("standard"))?;
            let (train, test) = generate_synthetic::<f64>(&cfg)?;
            (train, Some(test))
        }
    };
    if let Some(t) = &mut test {
        if t.feat_dim != train.feat_dim {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "train has D = {}, test has D = {}",
                train.feat_dim,
                t.feat_dim
            )));
        }
        let c = train.num_classes.max(t.num_classes);
        train.num_classes = c;
        t.num_classes = c;
    }
    if let Some(n) = args.subsample {
        if n == 0 {
            return Err(usage("--subsample must be at least 1"));
        }
        train = train.subsample(n)?;
        test = test.map(|t| t.subsample(n)).transpose()?;
    }
    Ok(LoadedData { train, test })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> CliResult<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).context("encoding JSON line")?);
        out.push('\n');
    }
    Ok(out)
}

fn checked_hyper(h: &HyperArgs) -> CliResult<HyperParams> {
    let hyper = h.to_hyper();
    hyper.validate().map_err(|e| usage(e.to_string()))?;
    Ok(hyper)
}

/// Trains one model on `data` without touching the filesystem.
pub fn fit(data: &LoadedData, pooler: Pooler, hyper: HyperParams) -> CliResult<adascan::TrainOutcome> {
    let dims = Dims::new(data.train.feat_dim, data.train.num_classes, hyper.hidden);
    let seed = hyper.seed;
    let params = init_params::<f64>(dims, hyper, pooler, seed)?;
    Ok(train::train(&data.train, data.test.as_ref(), params, seed)?)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub model_path: PathBuf,
    pub metrics_path: PathBuf,
}

impl TrainReport {
    /// Last logged record of `split`.
    pub fn final_record(&self, split: &str) -> Option<&EpochRecord> {
        self.log.iter().rev().find(|r| r.split == split)
    }
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainReport> {
    let hyper = checked_hyper(&args.hyper)?;
    let data = load_data(&args.data)?;
    create_dir(&args.out)?;
    let outcome = fit(&data, args.pooler, hyper)?;
    let model_path = args.out.join("model.json");
    let metrics_path = args.out.join("metrics.jsonl");
    write_file(&model_path, outcome.params.to_json()?.as_bytes())?;
    write_file(&metrics_path, jsonl(&outcome.log)?.as_bytes())?;
    Ok(TrainReport {
        params: outcome.params,
        log: outcome.log,
        model_path,
        metrics_path,
    })
}

fn load_model(path: &Path) -> CliResult<ModelParams> {
    Ok(ModelParams::load(path).with_context(|| format!("loading model {}", path.display()))?)
}

fn check_fit(params: &ModelParams, ds: &Dataset) -> CliResult<()> {
    if ds.feat_dim != params.dims.feat_dim || ds.num_classes > params.dims.num_classes {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "dataset (D = {}, C = {}) does not fit the model (D = {}, C = {})",
            ds.feat_dim,
            ds.num_classes,
            params.dims.feat_dim,
            params.dims.num_classes
        )));
    }
    Ok(())
}

/// Evaluates a saved model on the held-out split (or `--data` alone).
pub fn cmd_eval(args: &EvalArgs) -> CliResult<Metrics> {
    let params = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let ds = data.eval_split();
    check_fit(&params, ds)?;
    let metrics = evaluate(ds, &params)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let mut text = serde_json::to_string_pretty(&metrics).context("encoding metrics")?;
        text.push('\n');
        write_file(&dir.join("eval.json"), text.as_bytes())?;
    }
    Ok(metrics)
}

/// One line of `trace.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub id: String,
    pub label: usize,
    pub pred: usize,
    pub gammas: Vec<f64>,
    pub selected: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_mask: Option<Vec<bool>>,
}

impl TraceRecord {
    /// Frame with the largest predicted importance, excluding the fixed first
    /// frame. `None` for single-frame sequences.
    pub fn peak_frame(&self) -> Option<usize> {
        (1..self.gammas.len()).reduce(|best, t| if self.gammas[t] > self.gammas[best] { t } else { best })
    }
}

pub fn cmd_trace(args: &TraceArgs) -> CliResult<Vec<TraceRecord>> {
    let params = load_model(&args.model)?;
    if params.pooler != Pooler::AdaScan {
        return Err(usage(format!(
            "trace needs an adascan model; {} was trained with pooler {}",
            args.model.display(),
            params.pooler.name()
        )));
    }
    let data = load_data(&args.data)?;
    let ds = data.eval_split();
    check_fit(&params, ds)?;
    let traces = trace_dataset(ds, &params)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("trace.jsonl"), jsonl(&traces)?.as_bytes())?;
    Ok(traces)
}

/// Eval-mode importance traces, using the same forward pass as evaluation.
pub fn trace_dataset(ds: &Dataset, params: &ModelParams) -> CliResult<Vec<TraceRecord>> {
    let preds = predict_all(ds, params, &ForwardOptions::eval())?;
    ds.samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let gammas = p
                .gammas
                .ok_or_else(|| anyhow::anyhow!("sample '{}' produced no importance trace", s.id))?;
            Ok(TraceRecord {
                id: s.id.clone(),
                label: s.label,
                pred: p.predicted,
                selected: gammas.iter().map(|&g| g > SELECT_THRESHOLD).collect(),
                gammas,
                signal_mask: s.signal_mask().map(<[bool]>::to_vec),
            })
        })
        .collect()
}

/// One bar row per frame, scaled so γ = 1 spans `width` cells.
/// Signal frames are marked with `*` when the mask is known.
pub fn render_bars(t: &TraceRecord, width: usize) -> String {
    let mut out = format!("{}  label {}  pred {}\n", t.id, t.label, t.pred);
    for (i, &g) in t.gammas.iter().enumerate() {
        let cells = (g * width as f64).round() as usize;
        let mark = match &t.signal_mask {
            Some(m) if m[i] => " *",
            _ => "",
        };
        out.push_str(&format!(
            "{i:>4} {g:.3} |{}{}|{mark}\n",
            "█".repeat(cells),
            " ".repeat(width - cells.min(width))
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub mean_selected_fraction: f64,
}

/// Trains one adaptive model per λ with identical seeds; rows sorted by λ.
pub fn cmd_sweep(args: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    if args.lambdas.is_empty() {
        return Err(usage("--lambdas must not be empty"));
    }
    let mut lambdas = args.lambdas.clone();
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(usage(format!("lambda must be a non-negative number, got {bad}")));
    }
    lambdas.sort_by(f64::total_cmp);
    let base = checked_hyper(&args.hyper)?;
    let data = load_data(&args.data)?;
    create_dir(&args.out)?;

    let mut rows = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        let hyper = HyperParams { lambda, ..base.clone() };
        let outcome = fit(&data, Pooler::AdaScan, hyper)?;
        let m = evaluate(data.eval_split(), &outcome.params)?;
        rows.push(SweepRow {
            lambda,
            accuracy: m.accuracy,
            mean_selected_fraction: m
                .mean_selected_fraction
                .ok_or_else(|| anyhow::anyhow!("adaptive model reported no selected fraction"))?,
        });
    }
    write_file(&args.out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,accuracy,mean_selected_fraction\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.lambda, r.accuracy, r.mean_selected_fraction));
    }
    out
}

/// Worst coordinate of one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSummary {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSummary {
    pub blocks: Vec<BlockSummary>,
    pub tolerance: f64,
}

impl GradcheckSummary {
    fn from_report(report: &GradCheckReport<f64>) -> Self {
        let blocks = report
            .blocks
            .iter()
            .map(|b| BlockSummary {
                name: BLOCK_NAMES[b.block],
                max_rel_error: b.max_rel_error,
                worst_coord: b.worst_coord,
                analytic: b.analytic,
                numeric: b.numeric,
            })
            .collect();
        Self {
            blocks,
            tolerance: GRADCHECK_TOL,
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> &BlockSummary {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("eight blocks")
    }
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let verdict = if b.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<7} max_rel_error {:.3e} at coord {:>3}  {verdict}",
                b.name, b.max_rel_error, b.worst_coord
            )?;
        }
        writeln!(f, "overall {:.3e} (tolerance {:.0e})", self.max_rel_error(), self.tolerance)
    }
}

/// Seeded D = 8, T = 5, C = 3 instance with nonzero biases.
pub fn gradcheck_instance(seed: u64, pooler: Pooler) -> CliResult<(FeatureSequence<f64>, ModelParams)> {
    let (d, t, c, hidden) = (8, 5, 3, (6, 4));
    let hyper = HyperParams {
        hidden,
        lambda: 1.0,
        seed,
        ..HyperParams::default()
    };
    let mut params = init_params::<f64>(Dims::new(d, c, hidden), hyper, pooler, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(adascan::mix_seed(seed, 1));
    for (i, block) in params.blocks_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            for v in block.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let frames: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let label = rng.random_range(0..c);
    let seq = FeatureSequence::new("gradcheck", label, Tensor::new(vec![t, d], frames)?, None)?;
    Ok((seq, params))
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<GradcheckSummary> {
    if !(args.step > 0.0) {
        return Err(usage("--step must be positive"));
    }
    let corrupt = match &args.corrupt_grad {
        Some(name) => Some(name.parse::<OpKind>().map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let (seq, params) = gradcheck_instance(args.seed, args.pooler)?;
    let report = check_gradients(&seq, &params, &ForwardOptions::eval(), args.step, corrupt)?;
    Ok(GradcheckSummary::from_report(&report))
}

/// Writes `train.jsonl` and `test.jsonl`; returns a one-line summary.
pub fn cmd_gen_data(args: &GenDataArgs) -> CliResult<String> {
    let cfg = synth_config(&args.synthetic)?;
    let (train, test) = generate_synthetic::<f64>(&cfg)?;
    create_dir(&args.out)?;
    for (ds, name) in [(&train, "train.jsonl"), (&test, "test.jsonl")] {
        let path = args.out.join(name);
        save_jsonl(ds, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(format!(
        "C={} D={} T={} train={} test={} -> {}",
        cfg.num_classes,
        cfg.feat_dim,
        cfg.seq_len,
        train.len(),
        test.len(),
        args.out.display()
    ))
}
