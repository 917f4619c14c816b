//! Config-driven experiments: scenario construction, ensembles, sweeps and
//! CSV output.
//!
//! Numbers are written with 17 significant digits. Every estimate column is
//! followed by its standard error or a 95% confidence interval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{run_ensemble, ChainError, RunOptions, StartLaw, TrajectorySummary};
use crate::engine::{engine_ensemble, engine_run_with, EngineError, EngineParams, EngineRunOptions};
use crate::entropy::{
    bootstrap_se, entropy_production, potential_term, report_from_p, three_temperature_heats,
    two_plates_entropy, EntropyError,
};
use crate::geometry::{BoundaryComponent, GeometryError, Point, Table, Thermostat};
use crate::rng::{lanes, RngStream};
use crate::sampling::{
    reciprocity_test, reciprocity_test_with, reflect, sample_knudsen_cosine, sample_maxwellian,
    speed_cdf, EnergyConvention, MomentSet, ReflectionLaw,
};
use crate::stationary::{
    build_linear_system, delta_method, estimate_transition_matrix, solve_stationary,
    stationary_energies, StationaryError, TransitionMatrix,
};
use crate::stats::{ks_one_sample, RunningStats, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TwoPlates,
    Triangle,
    DiscUnion,
    Engine,
    CustomPolygon,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub separation: Option<f64>,
    pub side: Option<f64>,
    pub radius: Option<f64>,
    pub ratio: Option<f64>,
    pub vertices: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub temperature: f64,
    #[serde(default = "one")]
    pub accommodation: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Collisions per trajectory, burn-in included.
    pub n_steps: u64,
    pub burn_in: u64,
    /// Number of trajectories; 0 skips the chain simulation.
    pub ensemble: usize,
    pub transition_samples: u64,
    pub master_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub mass: f64,
    /// Potential value on each component.
    pub potential: Option<Vec<f64>>,
    /// Bootstrap resamples for the `e_p` standard error; 0 disables.
    pub bootstrap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_steps: 100_000,
            burn_in: 1_000,
            ensemble: 10,
            transition_samples: 1_000_000,
            master_seed: 0,
            workers: 0,
            mass: 1.0,
            potential: None,
            bootstrap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub t_hot: f64,
    pub t_cold: f64,
    pub alpha_hot: f64,
    pub alpha_cold: f64,
    pub belt_mass: f64,
    pub particle_mass: f64,
    pub force: f64,
    pub belt_length: f64,
    pub side: f64,
    pub n_collisions: u64,
    pub burn_in: u64,
    pub runs: usize,
    /// Row stride of `trajectory.csv`.
    pub trajectory_stride: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let p = EngineParams::default();
        Self {
            t_hot: p.t_hot,
            t_cold: p.t_cold,
            alpha_hot: p.alpha_hot,
            alpha_cold: p.alpha_cold,
            belt_mass: p.belt_mass,
            particle_mass: p.particle_mass,
            force: p.force,
            belt_length: p.belt_length,
            side: p.side,
            n_collisions: 1_000,
            burn_in: 0,
            runs: 200,
            trajectory_stride: 1,
        }
    }
}

impl EngineConfig {
    pub fn params(&self) -> EngineParams {
        EngineParams {
            t_hot: self.t_hot,
            t_cold: self.t_cold,
            alpha_hot: self.alpha_hot,
            alpha_cold: self.alpha_cold,
            belt_mass: self.belt_mass,
            particle_mass: self.particle_mass,
            force: self.force,
            belt_length: self.belt_length,
            side: self.side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the config (`geometry.ratio`, `components.1.temperature`,
    /// `engine.force`, ...) or `delta_t`, which sets the second temperature to
    /// the first plus the value.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub output_dir: Option<String>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub components: Vec<ComponentConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    /// Sweep axes; several axes are combined as a Cartesian product with the
    /// first axis varying slowest.
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl ExperimentError {
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ExperimentError {
            fn from(e: $t) -> Self {
                ExperimentError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(ChainError, EngineError, EntropyError, StationaryError, GeometryError);

/// A parsed config together with its raw tree, which sweeps edit.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub raw: toml::Table,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(Self { raw, config })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_raw(raw: toml::Table) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::Value::Table(raw.clone())
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(Self { raw, config })
    }

    /// Apply command-line overrides.
    pub fn with_overrides(
        &self,
        seed: Option<u64>,
        workers: Option<usize>,
        out: Option<&Path>,
    ) -> Result<Self, ConfigError> {
        let mut raw = self.raw.clone();
        if let Some(seed) = seed {
            set_path(&mut raw, "run.master_seed", Number::Int(seed as i64))?;
        }
        if let Some(workers) = workers {
            set_path(&mut raw, "run.workers", Number::Int(workers as i64))?;
        }
        if let Some(out) = out {
            raw.insert("output_dir".into(), toml::Value::String(out.display().to_string()));
        }
        Self::from_raw(raw)
    }
}

const INTEGER_FIELDS: &[&str] = &[
    "n_steps",
    "burn_in",
    "ensemble",
    "transition_samples",
    "master_seed",
    "workers",
    "bootstrap",
    "n_collisions",
    "runs",
    "trajectory_stride",
];

#[derive(Debug, Clone, Copy)]
enum Number {
    Int(i64),
    Float(f64),
}

fn set_path(raw: &mut toml::Table, path: &str, value: Number) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    let field = || path.to_string();
    let leaf = *parts.last().ok_or_else(|| invalid(field(), "empty parameter path"))?;
    let mut node: &mut toml::Value = raw
        .entry(parts[0].to_string())
        .or_insert_with(|| {
            if parts.len() > 1 {
                toml::Value::Table(toml::Table::new())
            } else {
                toml::Value::Float(0.0)
            }
        });
    for part in &parts[1..] {
        node = match node {
            toml::Value::Table(t) => t
                .entry(part.to_string())
                .or_insert(toml::Value::Float(0.0)),
            toml::Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| invalid(field(), format!("'{part}' is not an array index")))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| invalid(field(), format!("index {i} out of range (length {len})")))?
            }
            _ => return Err(invalid(field(), format!("'{part}' does not name a section"))),
        };
    }
    let integer = matches!(node, toml::Value::Integer(_)) || INTEGER_FIELDS.contains(&leaf);
    *node = match value {
        Number::Int(i) if integer => toml::Value::Integer(i),
        Number::Int(i) => toml::Value::Float(i as f64),
        Number::Float(x) if integer => {
            if x.fract() != 0.0 || x < 0.0 {
                return Err(invalid(field(), format!("{x} is not a non-negative integer")));
            }
            toml::Value::Integer(x as i64)
        }
        Number::Float(x) => toml::Value::Float(x),
    };
    Ok(())
}

fn set_sweep_value(raw: &mut toml::Table, scenario: Scenario, parameter: &str, value: f64) -> Result<(), ConfigError> {
    if parameter != "delta_t" {
        return set_path(raw, parameter, Number::Float(value));
    }
    if scenario == Scenario::Engine {
        let t_cold = raw
            .get("engine")
            .and_then(|e| e.get("t_cold"))
            .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
            .unwrap_or(EngineConfig::default().t_cold);
        return set_path(raw, "engine.t_hot", Number::Float(t_cold + value));
    }
    let base = raw
        .get("components")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("temperature"))
        .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
        .ok_or_else(|| invalid("sweep.delta_t", "needs components[0].temperature"))?;
    set_path(raw, "components.1.temperature", Number::Float(base + value))
}

impl ExperimentConfig {
    pub fn expected_components(&self) -> usize {
        match self.scenario {
            Scenario::TwoPlates | Scenario::DiscUnion => 2,
            Scenario::Triangle => 3,
            Scenario::Engine => 0,
            Scenario::CustomPolygon => self.geometry.vertices.as_ref().map_or(0, |v| v.len()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        let need = |name: &str, v: Option<f64>| -> Result<f64, ConfigError> {
            let v = v.ok_or_else(|| invalid(format!("geometry.{name}"), "required for this scenario"))?;
            if !v.is_finite() {
                return Err(invalid(format!("geometry.{name}"), "must be finite"));
            }
            Ok(v)
        };
        match self.scenario {
            Scenario::TwoPlates => {
                need("separation", g.separation)?;
            }
            Scenario::Triangle => {
                need("side", g.side)?;
            }
            Scenario::DiscUnion => {
                need("radius", g.radius)?;
                need("ratio", g.ratio)?;
            }
            Scenario::CustomPolygon => {
                if g.vertices.is_none() {
                    return Err(invalid("geometry.vertices", "required for this scenario"));
                }
            }
            Scenario::Engine => {}
        }
        let expected = self.expected_components();
        if self.components.len() != expected {
            return Err(invalid(
                "components",
                format!("scenario needs {expected} entries, found {}", self.components.len()),
            ));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.temperature.is_finite() && c.temperature > 0.0) {
                return Err(invalid(format!("components[{i}].temperature"), format!("must be > 0, got {}", c.temperature)));
            }
            if !(c.accommodation > 0.0 && c.accommodation <= 1.0) {
                return Err(invalid(
                    format!("components[{i}].accommodation"),
                    format!("must lie in (0, 1], got {}", c.accommodation),
                ));
            }
        }
        let r = &self.run;
        if self.scenario != Scenario::Engine {
            if r.ensemble > 0 && r.n_steps <= r.burn_in {
                return Err(invalid("run.n_steps", format!("must exceed run.burn_in ({})", r.burn_in)));
            }
            if r.transition_samples < crate::stationary::MIN_SAMPLES {
                return Err(invalid(
                    "run.transition_samples",
                    format!("must be at least {}", crate::stationary::MIN_SAMPLES),
                ));
            }
            if !(r.mass.is_finite() && r.mass > 0.0) {
                return Err(invalid("run.mass", "must be > 0"));
            }
            if let Some(phi) = &r.potential {
                if phi.len() != expected {
                    return Err(invalid("run.potential", format!("needs {expected} values")));
                }
                if phi.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("run.potential", "values must be finite"));
                }
            }
            self.table()?;
        } else {
            let e = &self.engine;
            e.params().validate().map_err(|err| invalid("engine", err.to_string()))?;
            if e.n_collisions <= e.burn_in {
                return Err(invalid("engine.n_collisions", "must exceed engine.burn_in"));
            }
            if e.runs < 2 {
                return Err(invalid("engine.runs", "need at least 2 runs for standard errors"));
            }
            if e.trajectory_stride == 0 {
                return Err(invalid("engine.trajectory_stride", "must be >= 1"));
            }
        }
        for (k, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(invalid(format!("sweep[{k}].values"), "must not be empty"));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("sweep[{k}].values"), "values must be finite"));
            }
        }
        Ok(())
    }

    fn thermostats(&self) -> Vec<Thermostat> {
        self.components
            .iter()
            .map(|c| Thermostat::new(c.temperature, c.accommodation))
            .collect()
    }

    /// Table for a non-engine scenario.
    pub fn table(&self) -> Result<Table, ConfigError> {
        let th = self.thermostats();
        let g = &self.geometry;
        let table = match self.scenario {
            Scenario::TwoPlates => Table::two_plates(g.separation.unwrap_or(1.0), [th[0], th[1]]),
            Scenario::Triangle => Table::equilateral_triangle(g.side.unwrap_or(1.0), [th[0], th[1], th[2]]),
            Scenario::DiscUnion => Table::disc_union(g.radius.unwrap_or(1.0), g.ratio.unwrap_or(0.5), [th[0], th[1]]),
            Scenario::CustomPolygon => {
                let vertices: Vec<Point> = g
                    .vertices
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|v| Point::new(v[0], v[1]))
                    .collect();
                Table::polygon(&vertices, &th)
            }
            Scenario::Engine => return Err(invalid("scenario", "the engine has no fixed table")),
        };
        table.map_err(|e| invalid("geometry", e.to_string()))
    }
}

/// What a single experiment produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TransitionMatrix,
    Stationary,
    Entropy,
    Simulate,
    Engine,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    /// `(file name, content)` in write order.
    pub files: Vec<(String, String)>,
    pub summary: String,
    /// Headline numbers, used for sweep summaries.
    pub metrics: Vec<(String, f64)>,
}

impl ExperimentOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, content) in &self.files {
            fs::write(dir.join(name), content)?;
        }
        fs::write(dir.join("summary.txt"), &self.summary)
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Csv(String);

impl Csv {
    fn new(header: &str) -> Self {
        Csv(format!("{header}\n"))
    }

    fn row(&mut self, fields: &[String]) {
        self.0.push_str(&fields.join(","));
        self.0.push('\n');
    }
}

fn est(value: f64, se: f64) -> [String; 4] {
    [num(value), num(se), num(value - Z95 * se), num(value + Z95 * se)]
}

/// Run `f` on a pool of `workers` threads (0: rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

/// Run one experiment (no sweep) on the current thread pool.
pub fn run_experiment(config: &ExperimentConfig, mode: Mode) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    match (config.scenario, mode) {
        (Scenario::Engine, Mode::Engine | Mode::Simulate) => run_engine(config),
        (Scenario::Engine, _) => Err(invalid("scenario", "the engine scenario only supports the engine and simulate commands").into()),
        (_, Mode::Engine) => Err(invalid("scenario", "the engine command needs scenario = \"engine\"").into()),
        _ => run_table(config, mode),
    }
}

fn transition_csv(p: &TransitionMatrix) -> String {
    let mut csv = Csv::new("i,j,count,p,se");
    for i in 0..p.len() {
        for j in 0..p.len() {
            csv.row(&[
                i.to_string(),
                j.to_string(),
                p.counts[(i, j)].to_string(),
                num(p.p[(i, j)]),
                num(p.se[(i, j)]),
            ]);
        }
    }
    csv.0
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Closed-form transition matrix when the geometry provides one.
fn exact_matrix(config: &ExperimentConfig) -> Option<TransitionMatrix> {
    match config.scenario {
        Scenario::TwoPlates => Some(crate::stationary::two_plates_matrix()),
        Scenario::Triangle => Some(crate::stationary::triangle_matrix(config.geometry.side.unwrap_or(1.0))),
        _ => None,
    }
}

fn run_table(config: &ExperimentConfig, mode: Mode) -> Result<ExperimentOutput, ExperimentError> {
    let table = config.table()?;
    let components = table.components();
    let n = components.len();
    let dim = table.dimension();
    let run = &config.run;
    let seed = run.master_seed;
    let mut out = ExperimentOutput::default();
    let mut summary = String::new();
    let temps: Vec<String> = components.iter().map(|c| format!("{}", c.temperature)).collect();
    let alphas: Vec<String> = components.iter().map(|c| format!("{}", c.accommodation)).collect();
    writeln!(summary, "scenario: {:?}", config.scenario).unwrap();
    writeln!(summary, "master seed: {seed}").unwrap();
    writeln!(summary, "temperatures: [{}]", temps.join(", ")).unwrap();
    writeln!(summary, "accommodation: [{}]", alphas.join(", ")).unwrap();

    let p = estimate_transition_matrix(&table, run.transition_samples, seed)?;
    out.files.push(("transition_matrix.csv".into(), transition_csv(&p)));
    writeln!(summary, "transition samples: {}", p.n_samples).unwrap();
    if mode == Mode::TransitionMatrix {
        out.summary = summary;
        return Ok(out);
    }

    let system = build_linear_system(&p, components)?;
    let mix = solve_stationary(&system)?;
    let weight_se = delta_method(&p, |q| {
        let sys = build_linear_system(q, components)?;
        Ok::<_, StationaryError>(flatten(&solve_stationary(&sys)?.weights))
    })?;
    let mut csv = Csv::new("component,source,source_temperature,weight,weight_se");
    for i in 0..n {
        for k in 0..n {
            csv.row(&[
                i.to_string(),
                k.to_string(),
                num(mix.temperatures[k]),
                num(mix.weights[(i, k)]),
                num(weight_se[i * n + k]),
            ]);
        }
    }
    out.files.push(("stationary.csv".into(), csv.0));
    writeln!(summary, "fixed-point residual: {:e}", mix.fixed_point_residual).unwrap();
    if mode == Mode::Stationary {
        out.summary = summary;
        return Ok(out);
    }

    // analytic rows for both energy conventions
    let mut csv = Csv::new("quantity,i,j,convention,value,se,ci_low,ci_high");
    let push = |csv: &mut Csv, q: &str, i: Option<usize>, j: Option<usize>, conv: &str, value: f64, se: f64| {
        let mut row = vec![
            q.to_string(),
            i.map(|x| x.to_string()).unwrap_or_default(),
            j.map(|x| x.to_string()).unwrap_or_default(),
            conv.to_string(),
        ];
        row.extend(est(value, se));
        csv.row(&row);
    };
    for convention in [EnergyConvention::Quadrature, EnergyConvention::Quoted] {
        let moments = MomentSet::new(dim, convention);
        let label = match convention {
            EnergyConvention::Quadrature => "quadrature",
            EnergyConvention::Quoted => "quoted",
        };
        let report = entropy_production(&p, components, &moments)?;
        // e_p, pair form, heats, pair fluxes, post and pre energies
        let ses = delta_method(&p, |q| {
            let r = report_from_p(q, components, &moments)?;
            let (_, e) = stationary_energies(q, components, &moments)?;
            let mut v = vec![r.e_p, r.e_p_pair_form];
            v.extend(&r.heats);
            v.extend(flatten(&r.pair_fluxes));
            v.extend(&e.post);
            v.extend(&e.pre);
            Ok::<_, EntropyError>(v)
        })?;
        let (_, energies) = stationary_energies(&p, components, &moments)?;
        push(&mut csv, "e_p", None, None, label, report.e_p, ses[0]);
        push(&mut csv, "e_p_pair_form", None, None, label, report.e_p_pair_form, ses[1]);
        for j in 0..n {
            push(&mut csv, "heat", Some(j), None, label, report.heats[j], ses[2 + j]);
        }
        for j in 0..n {
            for i in 0..n {
                push(&mut csv, "pair_flux", Some(j), Some(i), label, report.pair_fluxes[(j, i)], ses[2 + n + j * n + i]);
            }
        }
        let base = 2 + n + n * n;
        for j in 0..n {
            push(&mut csv, "post_energy", Some(j), None, label, energies.post[j], ses[base + j]);
        }
        for j in 0..n {
            push(&mut csv, "pre_energy", Some(j), None, label, energies.pre[j], ses[base + n + j]);
        }
        if let Some(exact) = exact_matrix(config) {
            let closed = match config.scenario {
                Scenario::TwoPlates => {
                    two_plates_entropy(
                        components[0].accommodation,
                        components[1].accommodation,
                        components[0].temperature,
                        components[1].temperature,
                        &moments,
                    )?
                    .e_p
                }
                _ => {
                    let alpha = [0, 1, 2].map(|i| components[i].accommodation);
                    let t = [0, 1, 2].map(|i| components[i].temperature);
                    let (q, _) = three_temperature_heats(alpha, t, &moments)?;
                    -(0..3).map(|i| q[i] / t[i]).sum::<f64>()
                }
            };
            push(&mut csv, "e_p_closed_form", None, None, label, closed, 0.0);
            let exact_report = entropy_production(&exact, components, &moments)?;
            push(&mut csv, "e_p_exact_matrix", None, None, label, exact_report.e_p, 0.0);
        }
        match convention {
            EnergyConvention::Quadrature => {
                let se = report.se.unwrap_or(0.0);
                out.metrics.push(("e_p".into(), report.e_p));
                out.metrics.push(("e_p_se".into(), se));
                out.metrics.push(("e_p_ci_low".into(), report.e_p - Z95 * se));
                out.metrics.push(("e_p_ci_high".into(), report.e_p + Z95 * se));
                writeln!(summary, "e_p (quadrature constant): {} +/- {} (SE)", num(report.e_p), num(se)).unwrap();
                if run.bootstrap > 0 {
                    let b = bootstrap_se(&p, components, &moments, run.bootstrap, seed)?;
                    push(&mut csv, "e_p_bootstrap_se", None, None, label, b, 0.0);
                    writeln!(summary, "bootstrap SE ({} resamples): {}", run.bootstrap, num(b)).unwrap();
                }
            }
            EnergyConvention::Quoted => {
                out.metrics.push(("e_p_quoted".into(), report.e_p));
                out.metrics.push(("e_p_quoted_se".into(), report.se.unwrap_or(0.0)));
                writeln!(summary, "e_p (quoted constant): {}", num(report.e_p)).unwrap();
            }
        }
    }
    if let Some(phi) = &run.potential {
        let term = potential_term(&p, components, phi)?;
        let se = delta_method(&p, |q| potential_term(q, components, phi).map(|t| vec![t]))?[0];
        push(&mut csv, "potential", None, None, "none", term, se);
        writeln!(summary, "potential term: {}", num(term)).unwrap();
    }

    if mode == Mode::Simulate && run.ensemble > 0 {
        let law = ReflectionLaw::maxwell_smoluchowski(dim).with_mass(run.mass);
        let options = RunOptions::new(run.n_steps, run.burn_in);
        let (merged, parts) = run_ensemble(&table, &law, StartLaw::LocalMaxwellian, run.ensemble, &options, seed)?;
        let sim = SimulationStats::new(&parts, components);
        push(&mut csv, "e_p", None, None, "simulation", sim.e_p.mean(), sim.e_p.std_error());
        for j in 0..n {
            push(&mut csv, "heat", Some(j), None, "simulation", sim.heat[j].mean(), sim.heat[j].std_error());
        }
        for j in 0..n {
            push(&mut csv, "post_energy", Some(j), None, "simulation", sim.post[j].mean(), sim.post[j].std_error());
        }
        for j in 0..n {
            push(&mut csv, "pre_energy", Some(j), None, "simulation", sim.pre[j].mean(), sim.pre[j].std_error());
        }
        let mut chain = Csv::new(
            "component,visits,visit_fraction,visit_fraction_se,area_fraction,post_energy,post_energy_se,pre_energy,pre_energy_se",
        );
        let areas = table.normalized_areas();
        for j in 0..n {
            chain.row(&[
                j.to_string(),
                merged.visits[j].to_string(),
                num(sim.visit[j].mean()),
                num(sim.visit[j].std_error()),
                num(areas[j]),
                num(sim.post[j].mean()),
                num(sim.post[j].std_error()),
                num(sim.pre[j].mean()),
                num(sim.pre[j].std_error()),
            ]);
        }
        out.files.push(("chain.csv".into(), chain.0));
        out.metrics.push(("e_p_simulated".into(), sim.e_p.mean()));
        out.metrics.push(("e_p_simulated_se".into(), sim.e_p.std_error()));
        out.metrics.push(("aborted".into(), merged.aborted.len() as f64));
        writeln!(
            summary,
            "simulated e_p: {} +/- {} (SE over {} trajectories of {} collisions, burn-in {})",
            num(sim.e_p.mean()),
            num(sim.e_p.std_error()),
            run.ensemble,
            run.n_steps,
            run.burn_in
        )
        .unwrap();
        if table.len() > 2 && table.components().iter().any(|c| c.accommodation < 1.0) {
            // specular bounces make the wall sequence history dependent
            writeln!(
                summary,
                "note: with specular reflection on a table of more than two walls the linear-system \
                 law is approximate; expect a small gap to the simulated e_p"
            )
            .unwrap();
        }
        writeln!(summary, "aborted trajectories: {}", merged.aborted.len()).unwrap();
        for a in &merged.aborted {
            writeln!(summary, "  after {} collisions: {}", a.steps_completed, a.reason).unwrap();
        }
    }
    out.files.push(("entropy.csv".into(), csv.0));
    out.summary = summary;
    Ok(out)
}

/// Across-trajectory statistics of per-trajectory estimates.
pub struct SimulationStats {
    pub e_p: RunningStats,
    pub heat: Vec<RunningStats>,
    pub post: Vec<RunningStats>,
    pub pre: Vec<RunningStats>,
    pub visit: Vec<RunningStats>,
}

impl SimulationStats {
    pub fn new(parts: &[TrajectorySummary], components: &[BoundaryComponent]) -> Self {
        let n = components.len();
        let temps: Vec<f64> = components.iter().map(|c| c.temperature).collect();
        let mut s = Self {
            e_p: RunningStats::new(),
            heat: vec![RunningStats::new(); n],
            post: vec![RunningStats::new(); n],
            pre: vec![RunningStats::new(); n],
            visit: vec![RunningStats::new(); n],
        };
        for part in parts.iter().filter(|p| p.recorded() > 0) {
            s.e_p.push(part.entropy_production(&temps));
            let fractions = part.visit_fractions();
            for j in 0..n {
                s.visit[j].push(fractions[j]);
                if part.visits[j] > 0 {
                    let post = part.post_energy[j].mean();
                    let pre = part.pre_energy[j].mean();
                    s.post[j].push(post);
                    s.pre[j].push(pre);
                    s.heat[j].push(fractions[j] * (post - pre));
                }
            }
        }
        s
    }
}

fn run_engine(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    let e = &config.engine;
    let params = e.params();
    let seed = config.run.master_seed;
    let options = EngineRunOptions {
        n_collisions: e.n_collisions,
        burn_in: e.burn_in,
        stride: 1,
    };
    let ensemble = engine_ensemble(&params, &options, e.runs, seed)?;
    let traj_options = EngineRunOptions {
        stride: e.trajectory_stride,
        ..options
    };
    let mut rng = RngStream::new(seed, lanes::ENGINE);
    let record = engine_run_with(&params, &traj_options, &mut rng)?;

    let mut out = ExperimentOutput::default();
    let mut traj = Csv::new("t,x_w,w,q_hot,q_cold,work,energy,first_law_residual");
    for k in 0..record.len() {
        traj.row(&[
            num(record.t[k]),
            num(record.x_w[k]),
            num(record.w[k]),
            num(record.q_hot[k]),
            num(record.q_cold[k]),
            num(record.work[k]),
            num(record.energy[k]),
            num(record.residual[k]),
        ]);
    }
    out.files.push(("trajectory.csv".into(), traj.0));

    let mut csv = Csv::new("quantity,value,se,ci_low,ci_high");
    let mut row = |name: &str, value: f64, se: f64| {
        let mut r = vec![name.to_string()];
        r.extend(est(value, se));
        csv.row(&r);
    };
    row("drift_rate", ensemble.drift_rate.mean(), ensemble.drift_rate.std_error());
    row("displacement", ensemble.displacement.mean(), ensemble.displacement.std_error());
    row("q_hot", ensemble.q_hot.mean(), ensemble.q_hot.std_error());
    row("q_cold", ensemble.q_cold.mean(), ensemble.q_cold.std_error());
    row("work", ensemble.work.mean(), ensemble.work.std_error());
    row("epsilon", ensemble.epsilon.0, ensemble.epsilon.1);
    row("epsilon_bar", ensemble.epsilon_bar.0, ensemble.epsilon_bar.1);
    out.files.push(("ensemble.csv".into(), csv.0));

    let max_residual = ensemble.runs.iter().map(|r| r.max_residual).fold(0.0, f64::max);
    out.metrics = vec![
        ("drift_rate".into(), ensemble.drift_rate.mean()),
        ("drift_rate_se".into(), ensemble.drift_rate.std_error()),
        ("epsilon".into(), ensemble.epsilon.0),
        ("epsilon_se".into(), ensemble.epsilon.1),
        ("epsilon_bar".into(), ensemble.epsilon_bar.0),
        ("epsilon_bar_se".into(), ensemble.epsilon_bar.1),
        ("q_hot".into(), ensemble.q_hot.mean()),
        ("q_hot_se".into(), ensemble.q_hot.std_error()),
        ("aborted".into(), ensemble.aborted as f64),
        ("first_law_violations".into(), ensemble.first_law_violations as f64),
    ];
    let mut s = String::new();
    writeln!(s, "scenario: Engine").unwrap();
    writeln!(s, "master seed: {seed}").unwrap();
    writeln!(
        s,
        "T_h = {}, T_c = {}, m1 = {}, m2 = {}, F = {}",
        e.t_hot, e.t_cold, e.belt_mass, e.particle_mass, e.force
    )
    .unwrap();
    writeln!(s, "runs: {} x {} collisions (burn-in {})", e.runs, e.n_collisions, e.burn_in).unwrap();
    writeln!(s, "drift rate: {} +/- {} (SE)", num(ensemble.drift_rate.mean()), num(ensemble.drift_rate.std_error())).unwrap();
    writeln!(s, "epsilon: {} +/- {} (SE)", num(ensemble.epsilon.0), num(ensemble.epsilon.1)).unwrap();
    writeln!(s, "epsilon_bar: {} +/- {} (SE)", num(ensemble.epsilon_bar.0), num(ensemble.epsilon_bar.1)).unwrap();
    writeln!(s, "max first-law residual: {max_residual:e}").unwrap();
    writeln!(s, "first-law violations: {}", ensemble.first_law_violations).unwrap();
    writeln!(s, "aborted runs: {}", ensemble.aborted).unwrap();
    out.summary = s;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutput {
    /// One entry per sweep point: the point's values and its output.
    pub points: Vec<(Vec<f64>, ExperimentOutput)>,
    pub parameters: Vec<String>,
    /// `sweep.csv` plus the tagged concatenation of every per-point file.
    pub files: Vec<(String, String)>,
}

impl SweepOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (k, (_, out)) in self.points.iter().enumerate() {
            out.write_to(&dir.join(format!("sweep_{k}")))?;
        }
        for (name, content) in &self.files {
            fs::write(dir.join(name), content)?;
        }
        Ok(())
    }
}

fn sweep_points(axes: &[SweepAxis]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

/// One sub-experiment per sweep point, point `k` seeded with
/// `master_seed ^ k`.
pub fn run_sweep(loaded: &LoadedConfig, mode: Mode) -> Result<SweepOutput, ExperimentError> {
    let config = &loaded.config;
    if config.sweep.is_empty() {
        return Err(invalid("sweep", "no sweep axes given").into());
    }
    let names: Vec<String> = config.sweep.iter().map(|a| a.parameter.clone()).collect();
    let points = sweep_points(&config.sweep);
    // validate every point before running any
    let mut configs = Vec::with_capacity(points.len());
    for (k, point) in points.iter().enumerate() {
        let mut raw = loaded.raw.clone();
        raw.remove("sweep");
        for (name, &value) in names.iter().zip(point) {
            set_sweep_value(&mut raw, config.scenario, name, value)?;
        }
        set_path(&mut raw, "run.master_seed", Number::Int((config.run.master_seed ^ k as u64) as i64))?;
        configs.push(LoadedConfig::from_raw(raw)?.config);
    }
    let mut out = SweepOutput {
        parameters: names.clone(),
        ..Default::default()
    };
    for (point, cfg) in points.into_iter().zip(&configs) {
        let result = run_experiment(cfg, mode)?;
        out.points.push((point, result));
    }

    let tag_header = names.join(",");
    let mut summary = Csv::new(&format!(
        "index,seed,{tag_header},{}",
        out.points[0].1.metrics.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(",")
    ));
    let mut tagged: BTreeMap<String, String> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (k, ((point, result), cfg)) in out.points.iter().zip(&configs).enumerate() {
        let tags: Vec<String> = point.iter().map(|&v| num(v)).collect();
        let mut row = vec![k.to_string(), cfg.run.master_seed.to_string()];
        row.extend(tags.iter().cloned());
        row.extend(result.metrics.iter().map(|(_, v)| num(*v)));
        summary.row(&row);
        for (name, content) in &result.files {
            let mut lines = content.lines();
            let header = lines.next().unwrap_or_default();
            let entry = tagged.entry(name.clone()).or_insert_with(|| {
                order.push(name.clone());
                format!("{tag_header},{header}\n")
            });
            for line in lines {
                entry.push_str(&tags.join(","));
                entry.push(',');
                entry.push_str(line);
                entry.push('\n');
            }
        }
    }
    out.files.push(("sweep.csv".into(), summary.0));
    for name in order {
        let content = tagged.remove(&name).unwrap_or_default();
        out.files.push((format!("sweep_{name}"), content));
    }
    Ok(out)
}

/// Output directory: the config's, else `out`.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(config.output_dir.clone().unwrap_or_else(|| "out".into()))
}

/// One line of the self-test report.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Reciprocity and sampler goodness-of-fit checks.
pub fn selftest(seed: u64, samples: usize) -> Vec<SelfTestLine> {
    let mut lines = Vec::new();
    let mut stream = 0u64;
    let mut next_rng = || {
        stream += 1;
        RngStream::new(seed, lanes::SELFTEST + stream)
    };
    for &(dim, t, alpha) in &[(3usize, 1.0, 1.0), (2, 1.0, 1.0), (3, 2.0, 0.3), (2, 0.5, 0.6)] {
        let c = BoundaryComponent::new(0, crate::geometry::Shape::Plate {
            side: crate::geometry::PlateSide::First,
            separation: 1.0,
        }, t, alpha)
        .expect("valid component");
        let r = reciprocity_test(&c, dim, samples, &mut next_rng());
        lines.push(SelfTestLine {
            name: format!("reciprocity n={dim} T={t} alpha={alpha}"),
            passed: r.passed,
            detail: format!("max |z| = {:.3} over {} moments", r.max_discrepancy, r.moments_tested),
        });
    }
    // a reflection that adds energy must be caught
    let mut normal = crate::geometry::Vec3::zeros();
    normal[2] = 1.0;
    let r = reciprocity_test_with(1.0, 1.0, 3, samples, &mut next_rng(), |u, _| {
        crate::geometry::specular(u, &normal) * 1.1
    });
    lines.push(SelfTestLine {
        name: "reciprocity rejects 1.1x specular gain".into(),
        passed: !r.passed,
        detail: format!("max |z| = {:.3}", r.max_discrepancy),
    });
    for dim in [2usize, 3] {
        for t in [0.5, 1.0, 50.0] {
            let mut rng = next_rng();
            let speeds: Vec<f64> = (0..samples).map(|_| sample_maxwellian(t, 1.0, dim, &mut rng).norm()).collect();
            let ks = ks_one_sample(&speeds, |s| speed_cdf(s, t, 1.0, dim));
            lines.push(SelfTestLine {
                name: format!("Maxwellian speed KS n={dim} T={t}"),
                passed: ks.passes(1e-3),
                detail: format!("D = {:.5}, p = {:.4}", ks.statistic, ks.p_value),
            });
        }
        let mut rng = next_rng();
        // n = 2: sin(theta) is uniform on (-1, 1); n = 3: cos^2(theta) is uniform on (0, 1)
        let xs: Vec<f64> = (0..samples)
            .map(|_| {
                let v = sample_knudsen_cosine(dim, &mut rng);
                if dim == 2 {
                    0.5 * (v.x + 1.0)
                } else {
                    v.z * v.z
                }
            })
            .collect();
        let ks = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        lines.push(SelfTestLine {
            name: format!("cosine law KS n={dim}"),
            passed: ks.passes(1e-3),
            detail: format!("D = {:.5}, p = {:.4}", ks.statistic, ks.p_value),
        });
    }
    // the mixture law keeps the wall Maxwellian invariant
    let c = BoundaryComponent::new(0, crate::geometry::Shape::Plate {
        side: crate::geometry::PlateSide::First,
        separation: 1.0,
    }, 1.5, 0.4)
    .expect("valid component");
    let law = ReflectionLaw::maxwell_smoluchowski(3);
    let mut rng = next_rng();
    let speeds: Vec<f64> = (0..samples)
        .map(|_| {
            let u = -sample_maxwellian(1.5, 1.0, 3, &mut rng);
            let (v, _) = reflect(&law, &c, &u, &normal, &mut rng).expect("incoming velocity");
            v.norm()
        })
        .collect();
    let ks = ks_one_sample(&speeds, |s| speed_cdf(s, 1.5, 1.0, 3));
    lines.push(SelfTestLine {
        name: "mixture reflection preserves wall Maxwellian".into(),
        passed: ks.passes(1e-3),
        detail: format!("D = {:.5}, p = {:.4}", ks.statistic, ks.p_value),
    });
    lines
}
