//! Experiment pipelines.
//!
//! A tomography experiment runs phantom -> perturbed sinogram -> correction ->
//! FBP -> metrics. Correction stages are alternatives: each one is applied to
//! the same perturbed sinogram and reconstructed on its own, next to the
//! uncorrected and unperturbed reconstructions. Strip and interface
//! experiments evolve a synthetic field under every `(k, p)` flow pair.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::discrete::{self, IntShiftField};
use crate::error::{Error, Result};
use crate::flows::{self, Evolution, FlowParams};
use crate::grid::{Axis, ScalarField};
use crate::io::config::Config;
use crate::io::formats::{write_angles, write_image, write_sinogram};
use crate::io::metrics::{self, MetricReport};
use crate::tomo::{self, Filter, PhantomVariant, Sinogram};
use crate::varsolve::{self, EnergyParams, IterTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Tomography,
    Strip,
    Interface,
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tomography" => Ok(Kind::Tomography),
            "strip" => Ok(Kind::Strip),
            "interface" => Ok(Kind::Interface),
            other => Err(Error::InvalidParams(format!(
                "unknown experiment kind `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    Sinogram,
    Flow,
    Varsolve,
    Assign,
    Fbp,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Sinogram => "sinogram",
            Stage::Flow => "flow",
            Stage::Varsolve => "varsolve",
            Stage::Assign => "assign",
            Stage::Fbp => "fbp",
            Stage::Metrics => "metrics",
        }
    }

    fn is_correction(self) -> bool {
        matches!(self, Stage::Flow | Stage::Varsolve | Stage::Assign)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "phantom" => Stage::Phantom,
            "sinogram" => Stage::Sinogram,
            "flow" => Stage::Flow,
            "varsolve" => Stage::Varsolve,
            "assign" => Stage::Assign,
            "fbp" => Stage::Fbp,
            "metrics" => Stage::Metrics,
            other => return Err(Error::InvalidParams(format!("unknown stage `{other}`"))),
        })
    }
}

/// Checks that every stage has its inputs produced by an earlier stage.
pub fn validate_stages(stages: &[Stage]) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidParams(msg));
    if stages.first() != Some(&Stage::Phantom) {
        return bad("the first stage must be `phantom`".into());
    }
    for (i, s) in stages.iter().enumerate() {
        if stages[..i].contains(s) {
            return bad(format!("stage `{}` listed twice", s.name()));
        }
        let before = &stages[..i];
        let needs = match s {
            Stage::Phantom => None,
            Stage::Sinogram => Some(Stage::Phantom),
            Stage::Flow | Stage::Varsolve | Stage::Assign | Stage::Fbp => Some(Stage::Sinogram),
            Stage::Metrics => Some(Stage::Fbp),
        };
        if let Some(need) = needs {
            if !before.contains(&need) {
                return bad(format!(
                    "stage `{}` needs `{}` earlier in the list",
                    s.name(),
                    need.name()
                ));
            }
        }
        if s.is_correction() && before.contains(&Stage::Fbp) {
            return bad(format!(
                "correction stage `{}` must come before `fbp`",
                s.name()
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographySettings {
    pub n: usize,
    pub angle_step: f64,
    /// Displacements are drawn from `Uniform[0, a]`.
    pub a: f64,
    /// Noise standard deviation as a fraction of the clean sinogram maximum.
    pub noise: f64,
    pub seed: u64,
    pub variant: PhantomVariant,
    pub filter: Filter,
    pub offsets: usize,
}

impl TomographySettings {
    pub fn new(n: usize) -> Self {
        TomographySettings {
            n,
            angle_step: PI / 90.0,
            a: 0.0,
            noise: 0.0,
            seed: 0,
            variant: PhantomVariant::default(),
            filter: Filter::RamLak,
            offsets: tomo::default_offsets(n),
        }
    }
}

/// Flow applied to the sinogram along the angle axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStage {
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub t_end: f64,
    /// Defaults to [`FlowParams::default_beta`] of the sinogram range.
    pub beta: Option<f64>,
    pub epsilon: f64,
}

impl FlowStage {
    pub fn params(&self, data: &ScalarField) -> FlowParams {
        FlowParams::new(Axis::X1, self.k, self.p, self.q)
            .with_beta(
                self.beta
                    .unwrap_or_else(|| FlowParams::default_beta(data.range())),
            )
            .with_epsilon(self.epsilon)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarsolveStage {
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
    /// Defaults to [`EnergyParams::default_epsilon`] of the sinogram range.
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: usize,
    /// Defaults to [`varsolve::default_stop_tol`].
    pub stop_tol: Option<f64>,
}

impl VarsolveStage {
    pub fn params(&self, data: &ScalarField) -> EnergyParams {
        let range = data.range();
        let eps = self
            .epsilon
            .unwrap_or_else(|| EnergyParams::default_epsilon(range));
        EnergyParams::new(Axis::X1, self.k, self.p, self.q, self.alpha, eps)
            .with_beta(self.beta.unwrap_or_else(|| FlowParams::default_beta(range)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignStage {
    pub m: usize,
    pub k: usize,
}

/// A bright vertical strip on a dark background.
#[derive(Clone, Debug, PartialEq)]
pub struct StripSettings {
    pub n1: usize,
    pub n2: usize,
    pub dx: f64,
    /// Strip width in cells, centred in `x1`.
    pub width: usize,
    pub high: f64,
    pub t_end: f64,
    pub q: usize,
    /// `beta = beta_scale * high / dx^k`.
    pub beta_scale: f64,
    pub pairs: Vec<(usize, usize)>,
}

impl Default for StripSettings {
    fn default() -> Self {
        StripSettings {
            n1: 64,
            n2: 8,
            dx: 0.1,
            width: 2,
            high: 255.0,
            t_end: 1e-6,
            q: 2,
            beta_scale: 1e-3,
            pairs: ALL_PAIRS.to_vec(),
        }
    }
}

/// A smooth step across `x1` whose level line bends with `x2`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceSettings {
    pub n1: usize,
    pub n2: usize,
    /// Width of the `tanh` profile on the unit square.
    pub width: f64,
    /// Horizontal excursion of the interface, `0.5 + amplitude * cos(pi x2)`.
    pub amplitude: f64,
    pub q: usize,
    /// `beta = beta_scale * range`.
    pub beta_scale: f64,
    /// `epsilon = epsilon_scale * max |d1 u0|^q`.
    pub epsilon_scale: f64,
    pub rel_tol: f64,
    pub t_max: f64,
    pub pairs: Vec<(usize, usize)>,
}

impl Default for InterfaceSettings {
    fn default() -> Self {
        InterfaceSettings {
            n1: 32,
            n2: 8,
            width: 0.25,
            amplitude: 0.15,
            q: 2,
            beta_scale: 1e-2,
            epsilon_scale: 0.2,
            rel_tol: 1e-6,
            t_max: 1e12,
            pairs: ALL_PAIRS.to_vec(),
        }
    }
}

/// `(k, p)` pairs in the order they are reported.
pub const ALL_PAIRS: [(usize, usize); 4] = [(1, 1), (1, 2), (2, 2), (2, 1)];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: Kind,
    pub stages: Vec<Stage>,
    pub tomography: TomographySettings,
    pub flow: FlowStage,
    pub varsolve: VarsolveStage,
    pub assign: AssignStage,
    pub strip: StripSettings,
    pub interface: InterfaceSettings,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            kind: Kind::Tomography,
            stages: vec![Stage::Phantom, Stage::Sinogram, Stage::Fbp, Stage::Metrics],
            tomography: TomographySettings::new(128),
            flow: FlowStage {
                k: 1,
                p: 2,
                q: 1,
                t_end: 3e-3,
                beta: None,
                epsilon: 0.0,
            },
            varsolve: VarsolveStage {
                k: 1,
                p: 2,
                q: 2,
                alpha: 1e-4,
                epsilon: None,
                beta: None,
                iterations: 50,
                stop_tol: None,
            },
            assign: AssignStage { m: 5, k: 1 },
            strip: StripSettings::default(),
            interface: InterfaceSettings::default(),
            output: None,
        }
    }
}

fn parse_with<T: FromStr<Err = Error>>(
    c: &Config,
    section: &str,
    key: &str,
    default: T,
    expected: &str,
) -> Result<T> {
    match c.get_str(section, key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| c.invalid(section, key, expected)),
    }
}

fn parse_pairs(c: &Config, section: &str) -> Result<Vec<(usize, usize)>> {
    let Some(text) = c.get_str(section, "pairs") else {
        return Ok(ALL_PAIRS.to_vec());
    };
    text.split(',')
        .map(|item| {
            let (k, p) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| c.invalid(section, "pairs", "a list like `1:1, 2:1`"))?;
            match (k.trim().parse(), p.trim().parse()) {
                (Ok(k), Ok(p)) => Ok((k, p)),
                _ => Err(c.invalid(section, "pairs", "a list like `1:1, 2:1`")),
            }
        })
        .collect()
}

fn optional_f64(c: &Config, section: &str, key: &str) -> Result<Option<f64>> {
    match c.get_str(section, key) {
        Some(v) if v.eq_ignore_ascii_case("auto") => Ok(None),
        _ => c.get_f64(section, key),
    }
}

impl ExperimentConfig {
    /// Reads every known section; missing keys keep their defaults.
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = ExperimentConfig::default();
        let kind = parse_with(
            c,
            "experiment",
            "kind",
            d.kind,
            "tomography, strip or interface",
        )?;
        let stages = match c.get_str("experiment", "stages") {
            None => d.stages.clone(),
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.parse::<Stage>().map_err(|_| {
                        c.invalid(
                            "experiment",
                            "stages",
                            "phantom, sinogram, flow, varsolve, assign, fbp, metrics",
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if kind == Kind::Tomography {
            validate_stages(&stages).map_err(|e| Error::Config {
                line: 0,
                reason: format!("experiment.stages: {e}"),
            })?;
        }

        let t = "tomography";
        let n = c.usize_or(t, "n", d.tomography.n)?;
        let tomography = TomographySettings {
            n,
            angle_step: c.f64_or(t, "angle_step", d.tomography.angle_step)?,
            a: c.f64_or(t, "a", 0.0)?,
            noise: c.f64_or(t, "noise", 0.0)?,
            seed: c.u64_or(t, "seed", 0)?,
            variant: parse_with(
                c,
                t,
                "variant",
                PhantomVariant::default(),
                "standard or modified",
            )?,
            filter: parse_with(
                c,
                t,
                "filter",
                Filter::RamLak,
                "ram-lak, shepp-logan or none",
            )?,
            offsets: c.usize_or(t, "offsets", tomo::default_offsets(n))?,
        };

        let f = "flow";
        let flow = FlowStage {
            k: c.usize_or(f, "k", d.flow.k)?,
            p: c.usize_or(f, "p", d.flow.p)?,
            q: c.usize_or(f, "q", d.flow.q)?,
            t_end: c.f64_or(f, "t_end", d.flow.t_end)?,
            beta: optional_f64(c, f, "beta")?,
            epsilon: c.f64_or(f, "epsilon", 0.0)?,
        };

        let v = "varsolve";
        let varsolve = VarsolveStage {
            k: c.usize_or(v, "k", d.varsolve.k)?,
            p: c.usize_or(v, "p", d.varsolve.p)?,
            q: c.usize_or(v, "q", d.varsolve.q)?,
            alpha: c.f64_or(v, "alpha", d.varsolve.alpha)?,
            epsilon: optional_f64(c, v, "epsilon")?,
            beta: optional_f64(c, v, "beta")?,
            iterations: c.usize_or(v, "iterations", d.varsolve.iterations)?,
            stop_tol: optional_f64(c, v, "stop_tol")?,
        };

        let assign = AssignStage {
            m: c.usize_or("assign", "m", d.assign.m)?,
            k: c.usize_or("assign", "k", d.assign.k)?,
        };

        let s = "strip";
        let ds = StripSettings::default();
        let strip = StripSettings {
            n1: c.usize_or(s, "n1", ds.n1)?,
            n2: c.usize_or(s, "n2", ds.n2)?,
            dx: c.f64_or(s, "dx", ds.dx)?,
            width: c.usize_or(s, "width", ds.width)?,
            high: c.f64_or(s, "high", ds.high)?,
            t_end: c.f64_or(s, "t_end", ds.t_end)?,
            q: c.usize_or(s, "q", ds.q)?,
            beta_scale: c.f64_or(s, "beta_scale", ds.beta_scale)?,
            pairs: parse_pairs(c, s)?,
        };

        let i = "interface";
        let di = InterfaceSettings::default();
        let interface = InterfaceSettings {
            n1: c.usize_or(i, "n1", di.n1)?,
            n2: c.usize_or(i, "n2", di.n2)?,
            width: c.f64_or(i, "width", di.width)?,
            amplitude: c.f64_or(i, "amplitude", di.amplitude)?,
            q: c.usize_or(i, "q", di.q)?,
            beta_scale: c.f64_or(i, "beta_scale", di.beta_scale)?,
            epsilon_scale: c.f64_or(i, "epsilon_scale", di.epsilon_scale)?,
            rel_tol: c.f64_or(i, "rel_tol", di.rel_tol)?,
            t_max: c.f64_or(i, "t_max", di.t_max)?,
            pairs: parse_pairs(c, i)?,
        };

        Ok(ExperimentConfig {
            name: c.str_or("experiment", "name", &d.name).to_string(),
            kind,
            stages,
            tomography,
            flow,
            varsolve,
            assign,
            strip,
            interface,
            output: c.get_str("experiment", "output").map(PathBuf::from),
        })
    }

    /// Loads a config file and applies `section.key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut c = Config::load(path)?;
        for o in overrides {
            c.apply_override(o)?;
        }
        ExperimentConfig::from_config(&c)
    }
}

/// Phantom, clean and perturbed sinograms of one tomography setting.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub phantom: ScalarField,
    pub clean: Sinogram,
    pub perturbed: Sinogram,
    pub perturbation: tomo::AngularPerturbation,
    /// Absolute noise standard deviation that was added.
    pub sigma: f64,
}

pub fn measure(t: &TomographySettings) -> Result<Measurement> {
    let phantom = tomo::shepp_logan(t.n, t.variant)?;
    let angles = tomo::angles_with_step(t.angle_step)?;
    let clean = tomo::radon(&phantom, &angles, t.offsets)?;
    let perturbation = tomo::sample_uniform_displacement(&angles, t.a, t.seed)?;
    if !(t.noise >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "noise fraction must be non-negative, got {}",
            t.noise
        )));
    }
    let sigma = t.noise * clean.field().max();
    let perturbed = tomo::radon_perturbed(&phantom, &angles, t.offsets, &perturbation, sigma)?;
    Ok(Measurement {
        phantom,
        clean,
        perturbed,
        perturbation,
        sigma,
    })
}

/// Output of one correction stage.
#[derive(Clone, Debug)]
pub struct Correction {
    pub stage: Stage,
    pub sinogram: Sinogram,
    /// `||rhs||_inf` per flow step.
    pub residuals: Option<Vec<f64>>,
    pub trace: Option<IterTrace>,
    pub shifts: Option<IntShiftField>,
}

/// Applies one correction stage to a sinogram.
pub fn correct(cfg: &ExperimentConfig, stage: Stage, s: &Sinogram) -> Result<Correction> {
    let data = s.field();
    let mut out = Correction {
        stage,
        sinogram: s.clone(),
        residuals: None,
        trace: None,
        shifts: None,
    };
    match stage {
        Stage::Flow => {
            let Evolution {
                state, residuals, ..
            } = flows::evolve(data, &cfg.flow.params(data), cfg.flow.t_end, None)?;
            out.sinogram = s.with_values(state.u)?;
            out.residuals = Some(residuals);
        }
        Stage::Varsolve => {
            let v = &cfg.varsolve;
            let tol = v
                .stop_tol
                .unwrap_or_else(|| varsolve::default_stop_tol(data));
            let (u, trace) = varsolve::iterate(data, &v.params(data), v.iterations, tol)?;
            out.sinogram = s.with_values(u)?;
            out.trace = Some(trace);
        }
        Stage::Assign => {
            let (u, shifts) = discrete::block_assign_columns(data, cfg.assign.m, cfg.assign.k)?;
            out.sinogram = s.with_values(u)?;
            out.shifts = Some(shifts);
        }
        other => {
            return Err(Error::InvalidParams(format!(
                "`{}` is not a correction stage",
                other.name()
            )));
        }
    }
    Ok(out)
}

/// One labelled line of an experiment report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub metrics: MetricReport,
    /// Free-form detail such as step counts.
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let opt =
            |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6e}"));
        let num = |v: f64| {
            if v == f64::INFINITY {
                "inf".to_string()
            } else {
                format!("{v:.6e}")
            }
        };
        let mut s = String::from("label,rmse,psnr,rel_l2,fwhm,interface_variance,detail\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.label,
                num(m.rmse),
                num(m.psnr),
                opt(m.rel_l2),
                opt(m.fwhm),
                opt(m.interface_variance),
                r.detail
            );
        }
        s
    }
}

/// Writes artifacts when an output directory is configured.
struct Sink<'a> {
    dir: Option<&'a Path>,
}

impl Sink<'_> {
    fn image(&self, name: &str, f: &ScalarField) -> Result<()> {
        if let Some(d) = self.dir {
            write_image(&d.join(format!("{name}.csv")), f)?;
            write_image(&d.join(format!("{name}.pgm")), f)?;
        }
        Ok(())
    }

    fn sinogram(&self, name: &str, s: &Sinogram) -> Result<()> {
        if let Some(d) = self.dir {
            write_sinogram(&d.join(format!("{name}.csv")), s)?;
            write_image(&d.join(format!("{name}.pgm")), s.field())?;
        }
        Ok(())
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        if let Some(d) = self.dir {
            fs::write(d.join(name), body)?;
        }
        Ok(())
    }
}

fn stage_err(stage: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn residual_csv(res: &[f64]) -> String {
    let mut s = String::from("step,rhs_linf\n");
    for (i, r) in res.iter().enumerate() {
        let _ = writeln!(s, "{i},{r:e}");
    }
    s
}

/// Runs the configured experiment. With an output directory every intermediate
/// field is written there; if a stage fails, an `INCOMPLETE` file names it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if let Some(d) = &cfg.output {
        fs::create_dir_all(d)?;
        let stale = d.join("INCOMPLETE");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    let sink = Sink {
        dir: cfg.output.as_deref(),
    };
    let result = match cfg.kind {
        Kind::Tomography => run_tomography(cfg, &sink),
        Kind::Strip => run_strip(&cfg.strip, &sink),
        Kind::Interface => run_interface(&cfg.interface, &sink),
    };
    match result {
        Ok(rows) => {
            let report = ExperimentReport {
                name: cfg.name.clone(),
                rows,
            };
            sink.text("metrics.csv", &report.to_csv())?;
            Ok(report)
        }
        Err(e) => {
            if let Some(d) = &cfg.output {
                // best effort: the original error matters more than this one
                let _ = fs::write(d.join("INCOMPLETE"), format!("{e}\n"));
            }
            Err(e)
        }
    }
}

fn run_tomography(cfg: &ExperimentConfig, sink: &Sink) -> Result<Vec<ReportRow>> {
    validate_stages(&cfg.stages)?;
    let t = &cfg.tomography;
    let has = |s: Stage| cfg.stages.contains(&s);

    let phantom = tomo::shepp_logan(t.n, t.variant).map_err(stage_err("phantom"))?;
    sink.image("phantom", &phantom)?;
    if !has(Stage::Sinogram) {
        return Ok(Vec::new());
    }
    let m = measure(t).map_err(stage_err("sinogram"))?;
    sink.sinogram("sinogram_clean", &m.clean)?;
    sink.sinogram("sinogram_perturbed", &m.perturbed)?;
    if let Some(d) = sink.dir {
        write_angles(&d.join("angles.csv"), m.clean.angles())?;
    }
    let mut disp = format!(
        "# seed={} bound={:e} sigma={:e}\nindex,angle,displacement\n",
        t.seed, t.a, m.sigma
    );
    for (j, (a, d)) in m
        .clean
        .angles()
        .iter()
        .zip(&m.perturbation.displacements)
        .enumerate()
    {
        let _ = writeln!(disp, "{j},{a:e},{d:e}");
    }
    sink.text("displacements.csv", &disp)?;

    let mut corrections = Vec::new();
    for &stage in cfg.stages.iter().filter(|s| s.is_correction()) {
        let c = correct(cfg, stage, &m.perturbed).map_err(stage_err(stage.name()))?;
        sink.sinogram(&format!("sinogram_{}", stage.name()), &c.sinogram)?;
        if let Some(r) = &c.residuals {
            sink.text(&format!("residuals_{}.csv", stage.name()), &residual_csv(r))?;
        }
        if let Some(tr) = &c.trace {
            sink.text(&format!("trace_{}.csv", stage.name()), &tr.to_csv())?;
        }
        if let Some(sh) = &c.shifts {
            sink.text(&format!("shifts_{}.csv", stage.name()), &sh.to_csv())?;
        }
        corrections.push(c);
    }
    if !has(Stage::Fbp) {
        return Ok(Vec::new());
    }

    let recon = |s: &Sinogram| tomo::fbp(s, t.n, t.filter).map_err(stage_err("fbp"));
    let mut outputs = vec![
        ("unperturbed".to_string(), recon(&m.clean)?, String::new()),
        (
            "uncorrected".to_string(),
            recon(&m.perturbed)?,
            String::new(),
        ),
    ];
    for c in &corrections {
        let detail = match (&c.residuals, &c.trace, &c.shifts) {
            (Some(r), _, _) => format!("steps={}", r.len()),
            (_, Some(tr), _) => format!(
                "iterations={} monotone={}",
                tr.records.len(),
                tr.is_monotone()
            ),
            (_, _, Some(sh)) => format!(
                "moved_columns={}",
                sh.shifts().iter().filter(|&&s| s != 0).count()
            ),
            _ => String::new(),
        };
        outputs.push((c.stage.name().to_string(), recon(&c.sinogram)?, detail));
    }
    for (label, f, _) in &outputs {
        sink.image(&format!("recon_{label}"), f)?;
    }
    if !has(Stage::Metrics) {
        return Ok(Vec::new());
    }
    outputs
        .into_iter()
        .map(|(label, f, detail)| {
            Ok(ReportRow {
                label,
                metrics: metrics::metrics(&f, &m.phantom).map_err(stage_err("metrics"))?,
                detail,
            })
        })
        .collect()
}

/// Result of calibrating the flow stopping time.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub best_t_end: f64,
    /// `(t_end, reconstruction RMSE)` for every candidate.
    pub table: Vec<(f64, f64)>,
}

/// Default stopping-time candidates: `{1, 2, 5} x 10^e` for `e = -5..=-2`.
pub fn default_t_end_candidates() -> Vec<f64> {
    (-5..=-2)
        .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
        .collect()
}

/// Picks the flow `t_end` that minimizes reconstruction RMSE for the
/// configured tomography setting drawn with `validation_seed`.
pub fn calibrate_t_end(
    cfg: &ExperimentConfig,
    validation_seed: u64,
    candidates: &[f64],
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("no t_end candidates".into()));
    }
    let mut t = cfg.tomography.clone();
    t.seed = validation_seed;
    let m = measure(&t)?;
    let mut table = Vec::with_capacity(candidates.len());
    for &t_end in candidates {
        let mut c = cfg.clone();
        c.flow.t_end = t_end;
        let out = correct(&c, Stage::Flow, &m.perturbed)?;
        let rec = tomo::fbp(&out.sinogram, t.n, t.filter)?;
        table.push((t_end, metrics::rmse(&rec, &m.phantom)?));
    }
    let best_t_end = table
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|r| r.0)
        .expect("table is not empty");
    Ok(Calibration { best_t_end, table })
}

/// The strip input of [`StripSettings`].
pub fn strip_input(s: &StripSettings) -> Result<ScalarField> {
    if s.width == 0 || s.width >= s.n1 {
        return Err(Error::InvalidParams(format!(
            "strip width must lie in 1..{}, got {}",
            s.n1, s.width
        )));
    }
    let mut u = ScalarField::zeros(s.n1, s.n2).with_spacing(s.dx, s.dx);
    let start = s.n1 / 2 - s.width / 2;
    for j2 in 0..s.n2 {
        for j1 in start..start + s.width {
            u.set(j1, j2, s.high);
        }
    }
    Ok(u)
}

#[derive(Clone, Debug)]
pub struct StripRun {
    pub k: usize,
    pub p: usize,
    pub field: ScalarField,
    pub steps: usize,
    /// Strip width per row, before and after.
    pub fwhm_before: Vec<f64>,
    pub fwhm_after: Vec<f64>,
}

impl StripRun {
    /// Smallest and largest per-row width increase.
    pub fn growth_range(&self) -> (f64, f64) {
        self.fwhm_after
            .iter()
            .zip(&self.fwhm_before)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
                (lo.min(g), hi.max(g))
            })
    }
}

fn widths(f: &ScalarField) -> Result<Vec<f64>> {
    metrics::row_fwhm(f)
        .into_iter()
        .map(|w| w.ok_or_else(|| Error::InvalidParams("strip profile became flat".into())))
        .collect()
}

/// Evolves the strip under `u_t = |d1 u|^q (-1)^(k-1) d1^k q_p(d1^k u)` for one pair.
pub fn strip_flow(s: &StripSettings, k: usize, p: usize) -> Result<StripRun> {
    let u0 = strip_input(s)?;
    let beta = s.beta_scale * s.high.abs() / s.dx.powi(k as i32);
    let params = FlowParams::new(Axis::X1, k, p, s.q).with_beta(beta);
    let ev = flows::evolve(&u0, &params, s.t_end, None)?;
    Ok(StripRun {
        k,
        p,
        fwhm_before: widths(&u0)?,
        fwhm_after: widths(&ev.state.u)?,
        steps: ev.state.steps,
        field: ev.state.u,
    })
}

fn run_strip(s: &StripSettings, sink: &Sink) -> Result<Vec<ReportRow>> {
    let u0 = strip_input(s).map_err(stage_err("input"))?;
    sink.image("input", &u0)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut rows = vec![ReportRow {
        label: "input".into(),
        metrics: MetricReport {
            fwhm: Some(mean(&widths(&u0)?)),
            ..metrics::metrics(&u0, &u0)?
        },
        detail: String::new(),
    }];
    for &(k, p) in &s.pairs {
        let label = format!("k{k}_p{p}");
        let run = strip_flow(s, k, p).map_err(stage_err(&label))?;
        sink.image(&label, &run.field)?;
        let (lo, hi) = run.growth_range();
        rows.push(ReportRow {
            metrics: MetricReport {
                fwhm: Some(mean(&run.fwhm_after)),
                ..metrics::metrics(&run.field, &u0)?
            },
            detail: format!("steps={} growth_min={lo:.4} growth_max={hi:.4}", run.steps),
            label,
        });
    }
    Ok(rows)
}

/// The curved-interface input of [`InterfaceSettings`], on a grid of unit spacing.
pub fn interface_input(s: &InterfaceSettings) -> Result<ScalarField> {
    if !(s.width > 0.0) {
        return Err(Error::InvalidParams(format!(
            "interface width must be positive, got {}",
            s.width
        )));
    }
    let (w, a) = (s.width, s.amplitude);
    Ok(ScalarField::from_fn(s.n1, s.n2, |x1, x2| {
        ((x1 - 0.5 - a * (PI * x2).cos()) / w).tanh()
    })
    .with_spacing(1.0, 1.0))
}

#[derive(Clone, Debug)]
pub struct InterfaceRun {
    pub k: usize,
    pub p: usize,
    pub evolution: Evolution,
    pub variance_before: f64,
    pub variance_after: f64,
}

/// Flow along `x2` to a steady residual for one pair.
pub fn interface_flow(s: &InterfaceSettings, k: usize, p: usize) -> Result<InterfaceRun> {
    let u0 = interface_input(s)?;
    let base = FlowParams::new(Axis::X2, k, p, s.q);
    let slope = flows::mobility(&u0, &base)?.max();
    let params = base
        .with_beta(s.beta_scale * u0.range())
        .with_epsilon(s.epsilon_scale * slope)
        .with_dt_max(f64::INFINITY);
    let ev = flows::evolve_to_steady(&u0, &params, s.rel_tol, s.t_max)?;
    let var = |f: &ScalarField| {
        metrics::interface_variance(f)
            .ok_or_else(|| Error::InvalidParams("a row lost its interface crossing".into()))
    };
    Ok(InterfaceRun {
        k,
        p,
        variance_before: var(&u0)?,
        variance_after: var(&ev.state.u)?,
        evolution: ev,
    })
}

fn run_interface(s: &InterfaceSettings, sink: &Sink) -> Result<Vec<ReportRow>> {
    let u0 = interface_input(s).map_err(stage_err("input"))?;
    sink.image("input", &u0)?;
    let mut rows = vec![ReportRow {
        label: "input".into(),
        metrics: MetricReport {
            interface_variance: metrics::interface_variance(&u0),
            ..metrics::metrics(&u0, &u0)?
        },
        detail: String::new(),
    }];
    for &(k, p) in &s.pairs {
        let label = format!("k{k}_p{p}");
        let run = interface_flow(s, k, p).map_err(stage_err(&label))?;
        let u = &run.evolution.state.u;
        sink.image(&label, u)?;
        sink.text(
            &format!("residuals_{label}.csv"),
            &residual_csv(&run.evolution.residuals),
        )?;
        rows.push(ReportRow {
            metrics: MetricReport {
                interface_variance: Some(run.variance_after),
                ..metrics::metrics(u, &u0)?
            },
            detail: format!(
                "steps={} time={:e} converged={}",
                run.evolution.state.steps, run.evolution.state.time, run.evolution.converged
            ),
            label,
        });
    }
    Ok(rows)
}
