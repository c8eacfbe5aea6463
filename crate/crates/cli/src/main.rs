mod svg;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lagrange_core::error::Error;
use lagrange_core::experiments::{
    run_experiment, write_metrics_csv, write_trace_csv, ExperimentConfig, TraceLog,
};
use lagrange_core::operator_params::{
    betas_first, betas_fourth, design_roots, poly_roots, roots_to_params_first,
    roots_to_params_second, routh_hurwitz, DesignSpec, DEFAULT_FRACTIONS,
};
use lagrange_core::rootspace::{
    characteristic_poly, partial_fraction_coefficients, PolyCoeffs, RootSet,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use svg::{Panel, Series};

/// Weights drawn one per panel up to this count; beyond it panels hold
/// several overlaid weights.
const SOLO_PANELS: usize = 8;
/// Cap on samples of g drawn next to a run.
const MAX_G_SAMPLES: usize = 200_000;

#[derive(Parser)]
#[command(
    name = "lagrange",
    version,
    about = "Weight dynamics driven by damped linear operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write trace.csv and metrics.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: RunOutput,
    },
    /// Run several configs in parallel, each into <out>/<name>/.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        out: RunOutput,
    },
    /// Sample the impulse response g of a root set or operator.
    Impulse {
        #[command(flatten)]
        source: RootSource,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Number of samples on [0, T], T = 40 / min|Re λ|.
        #[arg(long, default_value_t = 4001)]
        points: usize,
        #[arg(long)]
        svg: bool,
    },
    /// Routh–Hurwitz report for an operator or a polynomial.
    Stability {
        #[command(flatten)]
        source: PolySource,
        #[arg(long)]
        json: bool,
    },
    /// Characteristic polynomial and roots of an operator.
    Params2roots {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        json: bool,
    },
    /// Operator parameters realizing a root set of degree 2 or 4.
    Roots2params {
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        roots: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Quartic root set with memory span a and fast roots tied to θ.
    Design {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunOutput {
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Also write weights.svg and g.svg.
    #[arg(long)]
    svg: bool,
    /// Exit with status 2 if any weight diverges.
    #[arg(long)]
    fail_on_divergence: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long)]
    theta: Option<f64>,
    /// α0,α1 for first order or α0,α1,α2 for second order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Vec<f64>,
}

#[derive(Args)]
struct PolySource {
    #[command(flatten)]
    params: ParamArgs,
    /// Monic polynomial coefficients β0,…,β_{n-1}, lowest order first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["theta", "alphas"])]
    beta: Vec<f64>,
}

#[derive(Args)]
struct RootSource {
    #[command(flatten)]
    params: ParamArgs,
    /// Roots such as -1,-4 or -0.5+2i,-0.5-2i.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["theta", "alphas"])]
    roots: Vec<String>,
}

enum Failure {
    Input(String),
    Numeric(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Diverged(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out, &out.out),
        Command::Sweep { configs, out } => cmd_sweep(&configs, &out),
        Command::Impulse {
            source,
            out,
            points,
            svg,
        } => cmd_impulse(&source, &out, points, svg),
        Command::Stability { source, json } => cmd_stability(&source, json),
        Command::Params2roots { params, json } => cmd_params2roots(&params, json),
        Command::Roots2params { roots, json } => cmd_roots2params(&roots, json),
        Command::Design {
            a,
            theta,
            fractions,
            json,
        } => cmd_design(a, theta, fractions, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn parse_roots(raw: &[String]) -> Result<RootSet, Failure> {
    if raw.is_empty() {
        return Err(Failure::Input("no roots given".into()));
    }
    let values = raw
        .iter()
        .map(|s| {
            s.trim()
                .parse::<Complex64>()
                .map_err(|_| Failure::Input(format!("cannot parse root `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RootSet::from_values(&values)?)
}

fn params_poly(p: &ParamArgs) -> Result<PolyCoeffs, Failure> {
    let theta = p
        .theta
        .ok_or_else(|| Failure::Input("--theta is required with --alphas".into()))?;
    let poly = match p.alphas.as_slice() {
        [a0, a1] => betas_first(theta, *a0, *a1)?,
        [a0, a1, a2] => betas_fourth(theta, *a0, *a1, *a2)?,
        other => {
            return Err(Failure::Input(format!(
                "--alphas takes 2 values (first order) or 3 (second order), got {}",
                other.len()
            )))
        }
    };
    Ok(poly)
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON values serialize")
    );
}

fn fmt_root(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

fn print_roots(roots: &RootSet) {
    for r in roots.roots() {
        if r.multiplicity > 1 {
            println!("  {} (multiplicity {})", fmt_root(r.value), r.multiplicity);
        } else {
            println!("  {}", fmt_root(r.value));
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::from_path(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure::Input(format!("{}: {other}", path.display())),
    })?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn cmd_run(path: &Path, opts: &RunOutput, dir: &Path) -> CmdResult {
    let config = load_config(path, opts.seed)?;
    let log = run_experiment(&config)?;
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    write_outputs(&config, &log, dir, opts.svg)?;

    println!(
        "{}: {} steps, t = {:.4}",
        config.name,
        steps(&log),
        log.phases.last().map_or(0.0, |p| p.t_end)
    );
    for p in &log.phases {
        if p.last_iteration_mean.len() <= SOLO_PANELS {
            let means: Vec<String> = log
                .weight_names
                .iter()
                .zip(&p.last_iteration_mean)
                .map(|(n, v)| format!("{n} = {v:.6}"))
                .collect();
            println!(
                "  phase {}: last-iteration mean {}",
                p.phase,
                means.join(", ")
            );
        }
    }
    if let Some(m) = log
        .metrics
        .iter()
        .rev()
        .find(|m| m.phase + 1 == log.phases.len())
    {
        let acc = m
            .metrics
            .accuracy
            .map(|a| format!(", accuracy {a:.4}"))
            .unwrap_or_default();
        println!("  {} MSE {:.6e}{acc}", m.set, m.metrics.mse);
    }
    println!("  wrote {}", dir.display());
    if let Some(d) = &log.divergence {
        let msg = format!(
            "{}: weight `{}` diverged at t = {:.4} (phase {}, iteration {})",
            config.name,
            d.weight,
            d.t,
            d.phase,
            d.iteration + 1
        );
        if opts.fail_on_divergence {
            return Err(Failure::Diverged(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

fn steps(log: &TraceLog) -> u64 {
    log.divergence.as_ref().map_or(0, |d| d.step).max(
        log.phases
            .last()
            .map_or(0, |p| (p.t_end / p.tau).round() as u64),
    )
}

fn write_outputs(
    config: &ExperimentConfig,
    log: &TraceLog,
    dir: &Path,
    with_svg: bool,
) -> CmdResult {
    let create = |name: &str| {
        let path = dir.join(name);
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| io_failure(&path, e))
    };
    write_trace_csv(log, create("trace.csv")?)?;
    write_metrics_csv(log, create("metrics.csv")?)?;
    if !with_svg {
        return Ok(());
    }
    let panels = weight_panels(log);
    let path = dir.join("weights.svg");
    fs::write(&path, svg::render(&panels)).map_err(|e| io_failure(&path, e))?;

    let roots = config.operator.roots(config.tau)?;
    let dt = config.tau / 10.0;
    let horizon = 40.0 / roots.min_abs_real();
    let mut count = (horizon / dt).ceil() as usize + 1;
    if count > MAX_G_SAMPLES {
        log::warn!(
            "g.svg: {count} samples at τ/10 exceed the cap; drawing the first {MAX_G_SAMPLES}"
        );
        count = MAX_G_SAMPLES;
    }
    let g = sample_g(&roots, dt, count)?;
    let path = dir.join("g.svg");
    fs::write(&path, svg::render(&[g_panel(&roots, g)])).map_err(|e| io_failure(&path, e))?;
    Ok(())
}

fn weight_panels(log: &TraceLog) -> Vec<Panel> {
    let n = log.weight_names.len();
    let per_panel = if n <= SOLO_PANELS {
        1
    } else {
        n.div_ceil(SOLO_PANELS)
    };
    (0..n)
        .collect::<Vec<_>>()
        .chunks(per_panel)
        .map(|idx| Panel {
            title: if idx.len() == 1 {
                log.weight_names[idx[0]].clone()
            } else {
                format!(
                    "{} … {}",
                    log.weight_names[idx[0]],
                    log.weight_names[*idx.last().unwrap()]
                )
            },
            series: idx
                .iter()
                .map(|&i| Series {
                    label: log.weight_names[i].clone(),
                    points: log.series(i),
                })
                .collect(),
        })
        .collect()
}

fn sample_g(roots: &RootSet, dt: f64, count: usize) -> Result<Vec<(f64, f64)>, Failure> {
    let coeffs = partial_fraction_coefficients(roots)?;
    (0..count)
        .map(|k| {
            let t = k as f64 * dt;
            Ok((t, coeffs.eval(t)?))
        })
        .collect()
}

fn g_panel(roots: &RootSet, g: Vec<(f64, f64)>) -> Panel {
    let label: Vec<String> = roots.values().into_iter().map(fmt_root).collect();
    Panel {
        title: format!("g(t), roots {}", label.join(", ")),
        series: vec![Series {
            label: "g".into(),
            points: g,
        }],
    }
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("LAGRANGE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| {
                Failure::Input(format!(
                    "LAGRANGE_THREADS must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(None),
    }
}

fn cmd_sweep(configs: &[PathBuf], opts: &RunOutput) -> CmdResult {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
    let results: Vec<CmdResult> = pool.install(|| {
        configs
            .par_iter()
            .map(|path| {
                let name = load_config(path, opts.seed)?.name;
                cmd_run(path, opts, &opts.out.join(name))
            })
            .collect()
    });
    let failures: Vec<Failure> = results.into_iter().filter_map(Result::err).collect();
    for f in &failures {
        eprintln!("error: {}", f.message());
    }
    match failures.into_iter().max_by_key(Failure::code) {
        None => Ok(()),
        Some(worst) => Err(match worst {
            Failure::Input(_) => Failure::Input("some configs failed".into()),
            Failure::Numeric(_) => Failure::Numeric("some runs hit numeric failures".into()),
            Failure::Diverged(_) => Failure::Diverged("some runs diverged".into()),
        }),
    }
}

fn cmd_impulse(source: &RootSource, out: &Path, points: usize, with_svg: bool) -> CmdResult {
    let roots = if source.roots.is_empty() {
        poly_roots(&params_poly(&source.params)?)?
    } else {
        parse_roots(&source.roots)?
    };
    if points < 2 {
        return Err(Failure::Input("--points must be at least 2".into()));
    }
    let min_re = roots.min_abs_real();
    if !(min_re > 0.0 && min_re.is_finite()) {
        return Err(Failure::Input(
            "impulse horizon needs every root off the imaginary axis".into(),
        ));
    }
    let horizon = 40.0 / min_re;
    let dt = horizon / (points - 1) as f64;
    let g = sample_g(&roots, dt, points)?;

    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let mut csv = String::from("t,g\n");
    for (t, v) in &g {
        csv.push_str(&format!("{t:.16e},{v:.16e}\n"));
    }
    let path = out.join("g.csv");
    fs::write(&path, csv).map_err(|e| io_failure(&path, e))?;
    let peak = g.iter().copied().fold(
        (0.0, f64::NEG_INFINITY),
        |m, s| if s.1 > m.1 { s } else { m },
    );
    println!("g sampled at {points} points on [0, {horizon:.6}], step {dt:.3e}");
    println!("  max g = {:.6e} at t = {:.6}", peak.1, peak.0);
    if with_svg {
        let path = out.join("g.svg");
        fs::write(&path, svg::render(&[g_panel(&roots, g)])).map_err(|e| io_failure(&path, e))?;
    }
    println!("  wrote {}", out.display());
    Ok(())
}

fn cmd_stability(source: &PolySource, json: bool) -> CmdResult {
    let poly = if source.beta.is_empty() {
        params_poly(&source.params)?
    } else {
        PolyCoeffs::new(source.beta.clone())?
    };
    let report = routh_hurwitz(&poly)?;
    if json {
        print_json(
            &json!({ "beta": poly.beta(), "stable": report.stable, "conditions": report.conditions }),
        );
        return Ok(());
    }
    println!("beta = {:?}", poly.beta());
    for c in &report.conditions {
        println!(
            "  {:<45} margin {:>14.6e}  {}",
            c.name,
            c.margin,
            if c.satisfied { "ok" } else { "violated" }
        );
    }
    println!("{}", if report.stable { "stable" } else { "unstable" });
    Ok(())
}

fn cmd_params2roots(params: &ParamArgs, json: bool) -> CmdResult {
    let poly = params_poly(params)?;
    let roots = poly_roots(&poly)?;
    let stable = roots.is_stable();
    if json {
        print_json(&json!({ "beta": poly.beta(), "roots": roots.roots(), "stable": stable }));
        return Ok(());
    }
    println!("beta = {:?}", poly.beta());
    println!("roots:");
    print_roots(&roots);
    println!("{}", if stable { "stable" } else { "unstable" });
    Ok(())
}

fn cmd_roots2params(raw: &[String], json: bool) -> CmdResult {
    let roots = parse_roots(raw)?;
    match roots.degree() {
        2 => {
            let fit = roots_to_params_first(&roots)?;
            if json {
                print_json(&json!({ "order": 1, "theta": fit.theta, "nu": fit.nu }));
            } else {
                println!("first order: θ = {}", fit.theta);
                for nu in &fit.nu {
                    println!("  ν = α0/α1 = {nu}");
                }
            }
        }
        4 => {
            let fit = roots_to_params_second(&roots)?;
            if json {
                print_json(&json!({ "order": 2, "theta": fit.theta, "branches": fit.branches }));
            } else {
                println!("second order: θ = {}", fit.theta);
                for b in &fit.branches {
                    println!("  ν0 = {}, ν1 = {}, α1 = {}", b.nu0, b.nu1, b.alpha1);
                }
            }
        }
        d => {
            return Err(Failure::Input(format!(
                "expected 2 or 4 roots, got degree {d}"
            )))
        }
    }
    Ok(())
}

fn cmd_design(a: f64, theta: f64, fractions: Option<Vec<f64>>, json: bool) -> CmdResult {
    let fractions: [f64; 3] = match fractions {
        None => DEFAULT_FRACTIONS,
        Some(f) => f
            .try_into()
            .map_err(|_| Failure::Input("--fractions takes 3 values".into()))?,
    };
    let design = design_roots(&DesignSpec { a, fractions }, theta)?;
    let poly = characteristic_poly(&design.roots)?;
    if json {
        print_json(&json!({
            "roots": design.roots.roots(),
            "beta": poly.beta(),
            "warnings": design.warnings,
        }));
        return Ok(());
    }
    println!("roots:");
    print_roots(&design.roots);
    println!("beta = {:?}", poly.beta());
    for w in &design.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
