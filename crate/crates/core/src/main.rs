use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dispflow::discrete;
use dispflow::flows::{self, FlowParams};
use dispflow::io::config::eval_expr;
use dispflow::io::experiment::{self, ExperimentConfig};
use dispflow::io::{
    metrics, read_image, read_sinogram, run_experiment, write_image, write_sinogram,
};
use dispflow::tomo::{self, Filter, PhantomVariant, Sinogram};
use dispflow::varsolve::{self, EnergyParams};
use dispflow::{Axis, Error, Result, ScalarField};

#[derive(Parser)]
#[command(
    name = "dispflow",
    version,
    about = "Displacement-error correction for images and sinograms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn expr(s: &str) -> std::result::Result<f64, String> {
    eval_expr(s)
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the Shepp-Logan phantom.
    Phantom {
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value = "modified")]
        variant: PhantomVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radon transform of a square image.
    Sinogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = expr, default_value = "pi/90")]
        angle_step: f64,
        /// Detector bins; defaults to the image diagonal.
        #[arg(long)]
        offsets: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radon transform with perturbed beam directions and additive noise.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = expr, default_value = "pi/90")]
        angle_step: f64,
        /// Displacements are drawn from Uniform[0, a].
        #[arg(long, value_parser = expr, default_value = "0")]
        a: f64,
        /// Noise standard deviation as a fraction of the clean sinogram maximum.
        #[arg(long, value_parser = expr, default_value = "0")]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        offsets: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the drawn displacements as CSV.
        #[arg(long)]
        displacements: Option<PathBuf>,
    },
    /// Evolve a field (image or sinogram) under a nonlinear flow.
    Flow(FlowArgs),
    /// Run the lagged convex iteration.
    Varsolve(VarsolveArgs),
    /// Exhaustive row-jitter correction.
    Jitter(DiscreteArgs),
    /// Heuristic block assignment of columns.
    Assign(DiscreteArgs),
    /// Filtered backprojection of a sinogram.
    Fbp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value = "ram-lak")]
        filter: Filter,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a field against a reference.
    Metrics {
        field: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Run a configured experiment pipeline.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "x1")]
    axis: Axis,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    q: usize,
    /// Stopping time; omit together with --steady to run to a steady state.
    #[arg(long, value_parser = expr)]
    t_end: Option<f64>,
    /// Run until ||rhs||_inf drops below this fraction of its initial value.
    #[arg(long, value_parser = expr, conflicts_with = "t_end")]
    steady: Option<f64>,
    #[arg(long, value_parser = expr, default_value = "1e12")]
    t_max: f64,
    #[arg(long, value_parser = expr)]
    beta: Option<f64>,
    #[arg(long, value_parser = expr, default_value = "0")]
    epsilon: f64,
    #[arg(long, value_parser = expr, default_value = "0.9")]
    cfl: f64,
    #[arg(long, value_parser = expr)]
    dt_max: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Write ||rhs||_inf per step as CSV.
    #[arg(long)]
    residuals: Option<PathBuf>,
}

#[derive(Args)]
struct VarsolveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "x1")]
    axis: Axis,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long, value_parser = expr, default_value = "1e-4")]
    alpha: f64,
    /// Defaults to 1e-3 * range^2.
    #[arg(long, value_parser = expr)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = expr)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Defaults to 1e-6 * ||input||_L2.
    #[arg(long, value_parser = expr)]
    stop_tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DiscreteArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write the recovered integer shifts as CSV.
    #[arg(long)]
    shifts: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, `section.key=value`; may repeat.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides experiment.output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    angle_step: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Instead of running, pick flow.t_end on this validation seed.
    #[arg(long, value_name = "SEED")]
    calibrate: Option<u64>,
}

/// A field read from disk, remembering whether it carried sinogram geometry.
enum Data {
    Image(ScalarField),
    Sino(Sinogram),
}

impl Data {
    fn load(path: &Path) -> Result<Data> {
        let is_sino = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
            && std::fs::read_to_string(path)
                .map_err(Error::file(path))?
                .starts_with("# sinogram");
        Ok(if is_sino {
            Data::Sino(read_sinogram(path)?)
        } else {
            Data::Image(read_image(path)?)
        })
    }

    fn field(&self) -> &ScalarField {
        match self {
            Data::Image(f) => f,
            Data::Sino(s) => s.field(),
        }
    }

    fn save(&self, values: ScalarField, path: &Path) -> Result<()> {
        match self {
            Data::Image(_) => write_image(path, &values),
            Data::Sino(s) => write_sinogram(path, &s.with_values(values)?),
        }
    }
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body)?;
    Ok(())
}

fn run_flow(a: FlowArgs) -> Result<()> {
    let data = Data::load(&a.input)?;
    let u0 = data.field();
    let mut params = FlowParams::new(a.axis, a.k, a.p, a.q)
        .with_beta(
            a.beta
                .unwrap_or_else(|| FlowParams::default_beta(u0.range())),
        )
        .with_epsilon(a.epsilon);
    params.cfl = a.cfl;
    if let Some(d) = a.dt_max {
        params = params.with_dt_max(d);
    }
    let ev = match (a.t_end, a.steady) {
        (Some(t), _) => flows::evolve(u0, &params, t, None)?,
        (None, Some(tol)) => flows::evolve_to_steady(u0, &params, tol, a.t_max)?,
        (None, None) => return Err(Error::InvalidParams("give --t-end or --steady".into())),
    };
    eprintln!(
        "steps={} time={:e} converged={}",
        ev.state.steps, ev.state.time, ev.converged
    );
    if let Some(p) = a.residuals {
        let mut s = String::from("step,rhs_linf\n");
        for (i, r) in ev.residuals.iter().enumerate() {
            s.push_str(&format!("{i},{r:e}\n"));
        }
        write_text(&p, &s)?;
    }
    data.save(ev.state.u, &a.out)
}

fn run_varsolve(a: VarsolveArgs) -> Result<()> {
    let data = Data::load(&a.input)?;
    let u0 = data.field();
    let range = u0.range();
    let params = EnergyParams::new(
        a.axis,
        a.k,
        a.p,
        a.q,
        a.alpha,
        a.epsilon
            .unwrap_or_else(|| EnergyParams::default_epsilon(range)),
    )
    .with_beta(a.beta.unwrap_or_else(|| FlowParams::default_beta(range)));
    let tol = a.stop_tol.unwrap_or_else(|| varsolve::default_stop_tol(u0));
    let (u, trace) = varsolve::iterate(u0, &params, a.iterations, tol)?;
    eprintln!(
        "iterations={} converged={} monotone={}",
        trace.records.len(),
        trace.converged,
        trace.is_monotone()
    );
    for v in &trace.violations {
        eprintln!("warning: {v:?}");
    }
    if let Some(p) = a.trace {
        write_text(&p, &trace.to_csv())?;
    }
    data.save(u, &a.out)
}

fn run_discrete(a: DiscreteArgs, rows: bool) -> Result<()> {
    let data = Data::load(&a.input)?;
    let (u, shifts) = if rows {
        discrete::jitter_correct_rows(data.field(), a.m, a.k)?
    } else {
        discrete::block_assign_columns(data.field(), a.m, a.k)?
    };
    if let Some(p) = a.shifts {
        write_text(&p, &shifts.to_csv())?;
    }
    data.save(u, &a.out)
}

fn run_experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut overrides = Vec::new();
    for (key, value) in [
        ("n", &a.n),
        ("angle_step", &a.angle_step),
        ("a", &a.a),
        ("noise", &a.noise),
        ("seed", &a.seed),
    ] {
        if let Some(v) = value {
            overrides.push(format!("tomography.{key}={v}"));
        }
    }
    overrides.extend(a.set);
    let mut cfg = ExperimentConfig::load(&a.config, &overrides)?;
    if let Some(out) = a.out {
        cfg.output = Some(out);
    }
    if let Some(seed) = a.calibrate {
        let cal = experiment::calibrate_t_end(&cfg, seed, &experiment::default_t_end_candidates())?;
        println!("t_end,rmse");
        for (t, r) in &cal.table {
            println!("{t:e},{r:.6e}");
        }
        println!("# best t_end = {:e}", cal.best_t_end);
        return Ok(());
    }
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { n, variant, out } => write_image(&out, &tomo::shepp_logan(n, variant)?),
        Command::Sinogram {
            input,
            angle_step,
            offsets,
            out,
        } => {
            let f = read_image(&input)?;
            let angles = tomo::angles_with_step(angle_step)?;
            let s = tomo::radon(
                &f,
                &angles,
                offsets.unwrap_or_else(|| tomo::default_offsets(f.n1())),
            )?;
            write_sinogram(&out, &s)
        }
        Command::Perturb {
            input,
            angle_step,
            a,
            noise,
            seed,
            offsets,
            out,
            displacements,
        } => {
            let f = read_image(&input)?;
            let angles = tomo::angles_with_step(angle_step)?;
            let offsets = offsets.unwrap_or_else(|| tomo::default_offsets(f.n1()));
            if !(noise >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "noise must be non-negative, got {noise}"
                )));
            }
            let sigma = if noise > 0.0 {
                noise * tomo::radon(&f, &angles, offsets)?.field().max()
            } else {
                0.0
            };
            let pert = tomo::sample_uniform_displacement(&angles, a, seed)?;
            let s = tomo::radon_perturbed(&f, &angles, offsets, &pert, sigma)?;
            if let Some(p) = displacements {
                let mut body = format!(
                    "# seed={seed} bound={a:e} sigma={sigma:e}\nindex,angle,displacement\n"
                );
                for (j, (t, d)) in angles.iter().zip(&pert.displacements).enumerate() {
                    body.push_str(&format!("{j},{t:e},{d:e}\n"));
                }
                write_text(&p, &body)?;
            }
            write_sinogram(&out, &s)
        }
        Command::Flow(a) => run_flow(a),
        Command::Varsolve(a) => run_varsolve(a),
        Command::Jitter(a) => run_discrete(a, true),
        Command::Assign(a) => run_discrete(a, false),
        Command::Fbp {
            input,
            n,
            filter,
            out,
        } => {
            let s = read_sinogram(&input)?;
            let f = tomo::fbp(&s, n, filter)?;
            write_image(&out, &f)
        }
        Command::Metrics {
            field,
            reference,
            csv,
        } => {
            let m = metrics::metrics(&read_image(&field)?, &read_image(&reference)?)?;
            if csv {
                print!("{}", m.to_csv());
            } else {
                println!("{m}");
            }
            Ok(())
        }
        Command::Experiment(a) => run_experiment_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
