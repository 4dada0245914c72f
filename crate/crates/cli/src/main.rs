//! Command-line front end: train a one-hidden-layer PWL network with
//! message-passing descent or gradient baselines, run head-to-head
//! comparisons, and run a small-scale self-test of the core properties.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 property failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpd_core::baselines::{train_gd, GdConfig, GdMethod};
use mpd_core::data::{
    load_csv, split_80_20, standardize, synthetic_rugged, Dataset, DataError, Split, SyntheticKind,
};
use mpd_core::nn::{
    build_message, gradient, loss, param_count, NetworkParams, NetworkShape, ParamRef, Sample,
};
use mpd_core::pwp::{compose_activation, sum_pwp, PwlActivation, PwpFunction};
use mpd_core::train::{init_params, mpd_step, train, GrowthSchedule, TrainConfig, TrainLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "mpd", version, about = "Message-passing descent benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method and write its loss curve and final parameters.
    Train(RunArgs),
    /// Train several methods from one shared initialization and write a
    /// combined loss-curve CSV plus a summary line.
    Compare(RunArgs),
    /// Run the small-scale property suite (pointwise oracles, monotone
    /// descent, gradient checks).
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Training method(s): mpd, adam, nag (comma-separated for compare).
    #[arg(long, value_delimiter = ',', default_values_t = vec![String::from("mpd")])]
    method: Vec<String>,

    /// CSV dataset path; mutually exclusive with --synthetic.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Zero-based input columns of the CSV (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0usize])]
    x_cols: Vec<usize>,

    /// Zero-based target columns of the CSV (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize])]
    y_cols: Vec<usize>,

    /// Synthetic dataset kind: terrain or teacher (default when no --csv).
    #[arg(long)]
    synthetic: Option<String>,

    /// Number of synthetic samples.
    #[arg(long, default_value_t = 1024)]
    samples: usize,

    /// Hidden-layer width.
    #[arg(long, default_value_t = 500)]
    hidden: usize,

    /// Batch steps (each covers every training sample once).
    #[arg(long, default_value_t = 50)]
    steps: usize,

    /// Mini-batch size; defaults to 2048 for mpd, 256 for adam/nag.
    #[arg(long)]
    minibatch: Option<usize>,

    /// Enable mini-batch growth (doubling on a fixed schedule) up to this cap.
    #[arg(long)]
    minibatch_growth: Option<usize>,

    /// Learning rate for the gradient methods.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,

    /// Seed for initialization, splitting, mini-batching, and synthesis.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for CSVs and parameter dumps.
    #[arg(long, default_value = "out")]
    outdir: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run only checks whose name contains this substring.
    #[arg(long)]
    filter: Option<String>,
}

enum AppError {
    Usage(String),
    Data(String),
    Property(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Property(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Property(m) => m,
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(raw) = std::env::var("MPD_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MPD_THREADS must be a positive integer, got {raw:?}");
                return ExitCode::from(1);
            }
        }
    }
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Selftest(args) => cmd_selftest(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

/// True when any selected cell of the first CSV line fails to parse as a
/// number, which marks that line as a header row.
fn csv_has_header(path: &Path, x_cols: &[usize], y_cols: &[usize]) -> Result<bool, AppError> {
    let body = fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("cannot read {}: {e}", path.display())))?;
    let first = body.lines().next().unwrap_or("");
    let cells: Vec<&str> = first.split(',').map(str::trim).collect();
    for &c in x_cols.iter().chain(y_cols) {
        match cells.get(c) {
            Some(cell) if cell.parse::<f64>().is_ok() => {}
            _ => return Ok(true),
        }
    }
    Ok(false)
}

fn resolve_dataset(args: &RunArgs) -> Result<Dataset, AppError> {
    if args.csv.is_some() && args.synthetic.is_some() {
        return Err(AppError::Usage(
            "--csv and --synthetic are mutually exclusive".into(),
        ));
    }
    let raw = if let Some(path) = &args.csv {
        let header = csv_has_header(path, &args.x_cols, &args.y_cols)?;
        load_csv(path, &args.x_cols, &args.y_cols, header)?
    } else {
        let kind = match args.synthetic.as_deref().unwrap_or("terrain") {
            "terrain" => SyntheticKind::Terrain,
            "teacher" | "teacher_pwl" => SyntheticKind::TeacherPwl,
            other => {
                return Err(AppError::Usage(format!(
                    "unknown synthetic kind {other:?}; expected terrain or teacher"
                )))
            }
        };
        synthetic_rugged(kind, args.samples, 2, args.seed)
    };
    Ok(standardize(&raw)?)
}

// ---------------------------------------------------------------------------
// train / compare
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    Mpd,
    Adam,
    Nag,
}

impl Method {
    fn parse(name: &str) -> Result<Self, AppError> {
        match name {
            "mpd" => Ok(Method::Mpd),
            "adam" => Ok(Method::Adam),
            "nag" => Ok(Method::Nag),
            other => Err(AppError::Usage(format!(
                "unknown method {other:?}; expected mpd, adam, or nag"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Mpd => "mpd",
            Method::Adam => "adam",
            Method::Nag => "nag",
        }
    }

    fn default_minibatch(self) -> usize {
        match self {
            Method::Mpd => 2048,
            Method::Adam | Method::Nag => 256,
        }
    }
}

fn run_method(
    method: Method,
    shape: &NetworkShape,
    samples: &[Sample],
    split: &Split,
    args: &RunArgs,
) -> Result<TrainLog, AppError> {
    let n_train = split.train_indices.len();
    let s_prime = args
        .minibatch
        .unwrap_or_else(|| method.default_minibatch())
        .min(n_train);
    if s_prime == 0 {
        return Err(AppError::Usage("--minibatch must be at least 1".into()));
    }
    let log = match method {
        Method::Mpd => {
            let mut config = TrainConfig::new(args.steps, s_prime, args.seed);
            config.growth = args
                .minibatch_growth
                .map(|cap| GrowthSchedule::paper_default(cap.min(n_train)));
            train(shape, samples, &split.train_indices, &split.val_indices, &config)
        }
        Method::Adam | Method::Nag => {
            let config = GdConfig::new(args.lr, s_prime, args.steps, args.seed);
            let gd = if method == Method::Adam {
                GdMethod::Adam
            } else {
                GdMethod::Nag
            };
            train_gd(shape, samples, &split.train_indices, &split.val_indices, &config, gd)
        }
    };
    log.map_err(|e| AppError::Property(format!("{} training failed: {e}", method.name())))
}

fn prepare(args: &RunArgs) -> Result<(NetworkShape, Vec<Sample>, Split), AppError> {
    if args.hidden == 0 {
        return Err(AppError::Usage("--hidden must be at least 1".into()));
    }
    let dataset = resolve_dataset(args)?;
    let d_in = dataset.samples[0].x.len();
    let d_out = dataset.samples[0].y.len();
    let shape = NetworkShape::new(d_in, args.hidden, d_out, PwlActivation::leaky_hard_tanh(0.01));
    let split = split_80_20(dataset.samples.len(), args.seed)?;
    Ok((shape, dataset.samples, split))
}

fn cmd_train(args: &RunArgs) -> Result<(), AppError> {
    if args.method.len() != 1 {
        return Err(AppError::Usage(
            "train takes exactly one --method; use compare for several".into(),
        ));
    }
    let method = Method::parse(&args.method[0])?;
    let (shape, samples, split) = prepare(args)?;
    let log = run_method(method, &shape, &samples, &split, args)?;
    fs::create_dir_all(&args.outdir)?;
    fs::write(args.outdir.join(format!("{}_loss.csv", method.name())), log.to_csv())?;
    let mut dump = String::new();
    for v in log.final_params.to_flat() {
        let _ = writeln!(dump, "{v:.17e}");
    }
    fs::write(args.outdir.join(format!("{}_params.txt", method.name())), dump)?;
    let train_set: Vec<Sample> = split.train_indices.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = split.val_indices.iter().map(|&i| samples[i].clone()).collect();
    let tl = loss(&shape, &log.final_params, &train_set)
        .map_err(|e| AppError::Property(e.to_string()))?;
    let vl = loss(&shape, &log.final_params, &val_set)
        .map_err(|e| AppError::Property(e.to_string()))?;
    println!("{}: final train loss {tl:.10e}, val loss {vl:.10e}", method.name());
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> Result<(), AppError> {
    if args.method.len() < 2 {
        return Err(AppError::Usage("compare needs at least two --method values".into()));
    }
    let methods: Vec<Method> = args
        .method
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<_, _>>()?;
    let (shape, samples, split) = prepare(args)?;
    let train_set: Vec<Sample> = split.train_indices.iter().map(|&i| samples[i].clone()).collect();

    // Every method starts from the same seeded initialization; its loss is
    // the shared step-0 row of the combined curve.
    let initial = init_params(&shape, args.seed);
    let initial_loss =
        loss(&shape, &initial, &train_set).map_err(|e| AppError::Property(e.to_string()))?;

    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut finals: Vec<f64> = Vec::new();
    for &method in &methods {
        let log = run_method(method, &shape, &samples, &split, args)?;
        let curve: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
        finals.push(curve.last().copied().unwrap_or(initial_loss));
        curves.push(curve);
    }

    let mut csv = String::from("step");
    for &m in &methods {
        let _ = write!(csv, ",{}", m.name());
    }
    csv.push('\n');
    let _ = write!(csv, "0");
    for _ in &methods {
        let _ = write!(csv, ",{initial_loss:.10e}");
    }
    csv.push('\n');
    for t in 0..args.steps {
        let _ = write!(csv, "{}", t + 1);
        for curve in &curves {
            let _ = write!(csv, ",{:.10e}", curve[t]);
        }
        csv.push('\n');
    }
    fs::create_dir_all(&args.outdir)?;
    fs::write(args.outdir.join("compare_loss.csv"), &csv)?;

    let best = finals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| methods[i])
        .unwrap();
    let mut summary = String::from("summary:");
    for (m, f) in methods.iter().zip(&finals) {
        let _ = write!(summary, " {}={:.10e}", m.name(), f);
    }
    let _ = write!(summary, "; least train loss: {}", best.name());
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

fn random_quadratic(rng: &mut ChaCha8Rng, max_breaks: usize) -> PwpFunction {
    let mut mesh: Vec<f64> = (0..rng.random_range(0..=max_breaks))
        .map(|_| rng.random_range(-5.0..5.0))
        .collect();
    mesh.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mesh.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    let coeffs = (0..mesh.len() + 1)
        .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    PwpFunction::new(2, mesh, coeffs).unwrap()
}

fn random_pwl(rng: &mut ChaCha8Rng, max_breaks: usize) -> PwpFunction {
    let mut mesh: Vec<f64> = (0..rng.random_range(0..=max_breaks))
        .map(|_| rng.random_range(-5.0..5.0))
        .collect();
    mesh.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mesh.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    let coeffs = (0..mesh.len() + 1)
        .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    PwpFunction::new(1, mesh, coeffs).unwrap()
}

fn random_net(rng: &mut ChaCha8Rng, d_in: usize, d_hidden: usize) -> (NetworkShape, NetworkParams) {
    let shape = NetworkShape::new(d_in, d_hidden, 1, PwlActivation::leaky_hard_tanh(0.01));
    let params = init_params(&shape, rng.random());
    (shape, params)
}

fn check_sum_pointwise() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fs: Vec<PwpFunction> = (0..10).map(|_| random_quadratic(&mut rng, 6)).collect();
    let mut s = sum_pwp(&fs).map_err(|e| e.to_string())?;
    if std::env::var("MPD_SELFTEST_CORRUPT").as_deref() == Ok("sum_pwp") {
        // Mutation hook: deliberately damage the merged function so the
        // oracle below must catch it.
        let mut coeffs: Vec<Vec<f64>> = s.coeffs().to_vec();
        coeffs[0][0] += 1e-3;
        s = PwpFunction::new(2, s.mesh().to_vec(), coeffs).unwrap();
    }
    for _ in 0..200 {
        let x = rng.random_range(-8.0..8.0);
        let expect: f64 = fs.iter().map(|f| f.eval(x).unwrap()).sum();
        let got = s.eval(x).map_err(|e| e.to_string())?;
        let scale = fs.iter().map(|f| f.eval(x).unwrap().abs()).sum::<f64>().max(1.0);
        if (got - expect).abs() > 1e-9 * scale {
            return Err(format!("merged sum {got} != pointwise sum {expect} at {x}"));
        }
    }
    Ok(())
}

fn check_sum_permutation() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut fs: Vec<PwpFunction> = (0..8).map(|_| random_quadratic(&mut rng, 5)).collect();
    let base = sum_pwp(&fs).map_err(|e| e.to_string())?;
    for _ in 0..5 {
        use rand::seq::SliceRandom;
        fs.shuffle(&mut rng);
        let permuted = sum_pwp(&fs).map_err(|e| e.to_string())?;
        if permuted != base {
            return Err("sum not bit-identical under input permutation".into());
        }
    }
    Ok(())
}

fn check_global_min_grid() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let f = random_pwl(&mut rng, 10);
        let y = rng.random_range(-3.0..3.0);
        let h = PwpFunction::square_residual(y, &f).map_err(|e| e.to_string())?;
        let m = h.global_min(0.0).map_err(|e| e.to_string())?;
        let grid = 10_000;
        let (lo, hi) = (-12.0, 12.0);
        let step = (hi - lo) / grid as f64;
        for g in 0..=grid {
            let x = lo + step * g as f64;
            if h.eval(x).unwrap() < m.min_value - 1e-8 {
                return Err(format!("grid point {x} undercuts analytic minimum"));
            }
        }
    }
    Ok(())
}

fn check_compose_oracle() -> Result<(), String> {
    let act = PwlActivation::leaky_hard_tanh(0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let inner = random_pwl(&mut rng, 5);
        let out = compose_activation(&act, &inner).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let x = rng.random_range(-8.0..8.0);
            let expect = act.eval(inner.eval(x).unwrap());
            let got = out.eval(x).unwrap();
            if (got - expect).abs() > 1e-9 * expect.abs().max(1.0) {
                return Err(format!("composition {got} != {expect} at {x}"));
            }
        }
    }
    Ok(())
}

fn check_message_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let (shape, mut params) = random_net(&mut rng, 2, 6);
        let sample = Sample {
            x: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            y: vec![rng.random_range(-2.0..2.0)],
        };
        let flat = rng.random_range(0..param_count(&shape));
        let p = ParamRef::from_flat(&shape, flat).map_err(|e| e.to_string())?;
        let msg = build_message(&shape, &params, &sample, p).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let theta = rng.random_range(-4.0..4.0);
            let saved = params.get(p);
            params.set(p, theta);
            let direct = loss(&shape, &params, std::slice::from_ref(&sample))
                .map_err(|e| e.to_string())?;
            params.set(p, saved);
            let via_msg = msg.eval(theta).unwrap();
            if (via_msg - direct).abs() > 1e-10 * direct.abs().max(1.0) {
                return Err(format!("message {via_msg} != substituted loss {direct}"));
            }
        }
    }
    Ok(())
}

fn check_gradient_fd() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut checked = 0;
    while checked < 20 {
        let (shape, params) = random_net(&mut rng, 2, 5);
        let sample = Sample {
            x: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            y: vec![rng.random_range(-2.0..2.0)],
        };
        // Central differences are only valid away from the activation kinks.
        let pre_ok = (0..shape.d_hidden).all(|h| {
            let z: f64 = (0..shape.d_in)
                .map(|d| params.w1[h * shape.d_in + d] * sample.x[d])
                .sum::<f64>()
                + params.b1[h];
            (z - 1.0).abs() > 1e-3 && (z + 1.0).abs() > 1e-3
        });
        if !pre_ok {
            continue;
        }
        let samples = [sample];
        let grad = gradient(&shape, &params, &samples).map_err(|e| e.to_string())?;
        let flat = params.to_flat();
        for i in 0..flat.len() {
            let h = 1e-6;
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let lp = loss(&shape, &NetworkParams::from_flat(&shape, &plus).unwrap(), &samples)
                .unwrap();
            let lm = loss(&shape, &NetworkParams::from_flat(&shape, &minus).unwrap(), &samples)
                .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            if (grad[i] - fd).abs() > 1e-5 * fd.abs().max(1.0) {
                return Err(format!("gradient[{i}] {} != finite difference {fd}", grad[i]));
            }
        }
        checked += 1;
    }
    Ok(())
}

fn check_monotone_full_batch() -> Result<(), String> {
    let dataset = synthetic_rugged(SyntheticKind::Terrain, 64, 2, 7);
    let shape = NetworkShape::new(2, 8, 1, PwlActivation::leaky_hard_tanh(0.01));
    let mut params = init_params(&shape, 7);
    let batch: Vec<usize> = (0..dataset.samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut prev = loss(&shape, &params, &dataset.samples).map_err(|e| e.to_string())?;
    for step in 0..30 {
        let flat = rng.random_range(0..param_count(&shape));
        let p = ParamRef::from_flat(&shape, flat).map_err(|e| e.to_string())?;
        mpd_step(&shape, &mut params, &dataset.samples, &batch, p).map_err(|e| e.to_string())?;
        let now = loss(&shape, &params, &dataset.samples).map_err(|e| e.to_string())?;
        if now > prev + 1e-12 {
            return Err(format!("loss rose from {prev} to {now} at step {step}"));
        }
        prev = now;
    }
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> Result<(), AppError> {
    let checks: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("pwp::sum_pointwise", check_sum_pointwise),
        ("pwp::sum_permutation", check_sum_permutation),
        ("pwp::global_min_grid", check_global_min_grid),
        ("pwp::compose_oracle", check_compose_oracle),
        ("nn::message_oracle", check_message_oracle),
        ("nn::gradient_fd", check_gradient_fd),
        ("train::monotone_full_batch", check_monotone_full_batch),
    ];
    let mut ran = 0;
    let mut failures = 0;
    for (name, check) in checks {
        if let Some(f) = &args.filter {
            if !name.contains(f.as_str()) {
                continue;
            }
        }
        ran += 1;
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failures += 1;
            }
        }
    }
    if ran == 0 {
        return Err(AppError::Usage(format!(
            "no self-test matches filter {:?}",
            args.filter.as_deref().unwrap_or("")
        )));
    }
    if failures > 0 {
        return Err(AppError::Property(format!("{failures}/{ran} self-tests failed")));
    }
    println!("all {ran} self-tests passed");
    Ok(())
}
