//! TOML run configuration with full-error validation.

use std::fmt;
use std::path::Path;

use dnlspde_core::coefficients::{BFunction, Coefficients, FluxFunction, NoiseFunction};
use dnlspde_core::dynamics::{SolverSettings, DEFAULT_MAX_ITER, DEFAULT_NEWTON_TOL};
use dnlspde_core::ldp::{EventKind, OptimizerSettings};
use serde::Serialize;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Validate,
    Skeleton,
    Simulate,
    Ldp,
    Invariant,
    Convergence,
}

impl Experiment {
    pub const NAMES: [&'static str; 6] = ["validate", "skeleton", "simulate", "ldp", "invariant", "convergence"];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    fn from_name(s: &str) -> Option<Self> {
        use Experiment::*;
        [Validate, Skeleton, Simulate, Ldp, Invariant, Convergence]
            .into_iter()
            .find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialCfg {
    Zero,
    /// `amplitude · sin(mode·πx/L)`.
    Sine { amplitude: f64, mode: u32 },
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ControlCfg {
    Zero,
    Constant { value: f64 },
    /// `offset + amplitude · sin(2π·frequency·t)`, projected onto the time grid.
    Sine { amplitude: f64, frequency: f64, offset: f64 },
    /// One value per time step.
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventTarget {
    /// `amplitude · sin(mode·πx/L)` at every knot.
    Sine { amplitude: f64, mode: u32 },
    /// The skeleton trajectory for the constant control `control_value`.
    Skeleton { control_value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventCfg {
    pub kind: EventKind,
    pub radius: f64,
    pub target: EventTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloCfg {
    pub paths: usize,
    pub base_seed: u64,
    pub eps_list: Vec<f64>,
    pub worker_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCfg {
    pub t_long: f64,
    pub window: f64,
    pub steps_per_window: usize,
    pub dissipativity_samples: usize,
    pub moment_paths: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCfg {
    pub frequencies: Vec<u32>,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputCfg {
    pub directory: String,
    pub dump_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n_interior: usize,
    pub length: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub coefficients: Coefficients,
    pub validation_samples: usize,
    pub initial: InitialCfg,
    pub control: ControlCfg,
    pub solver: SolverSettings,
    pub monte_carlo: MonteCarloCfg,
    pub optimizer: OptimizerSettings,
    pub event: EventCfg,
    pub invariant: InvariantCfg,
    pub convergence: ConvergenceCfg,
    pub output: OutputCfg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const TOP: &[&str] = &[
    "experiment",
    "grid",
    "time",
    "coefficients",
    "validation",
    "initial",
    "control",
    "solver",
    "monte_carlo",
    "optimizer",
    "event",
    "invariant",
    "convergence",
    "output",
];

fn nearest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .min_by_key(|c| strsim::levenshtein(key, c))
        .copied()
}

struct Reader {
    errors: Vec<ConfigError>,
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl Reader {
    fn err(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ConfigError {
            key: key.into(),
            message: message.into(),
        });
    }

    fn section<'a>(&mut self, root: &'a Table, name: &'static str, allowed: &[&str]) -> Section<'a> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(name, "expected a table");
                None
            }
        };
        if let Some(t) = table {
            for key in t.keys() {
                if !allowed.contains(&key.as_str()) {
                    let hint = nearest(key, allowed)
                        .map(|n| format!("; nearest valid key is `{name}.{n}`"))
                        .unwrap_or_default();
                    self.err(format!("{name}.{key}"), format!("unknown key{hint}"));
                }
            }
        }
        Section { name, table }
    }

    fn raw<'a>(&self, s: &Section<'a>, key: &str) -> Option<&'a Value> {
        s.table.and_then(|t| t.get(key))
    }

    fn f64(&mut self, s: &Section, key: &str, default: f64) -> f64 {
        match self.raw(s, key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected a number");
                default
            }
        }
    }

    fn positive(&mut self, s: &Section, key: &str, default: f64) -> f64 {
        let x = self.f64(s, key, default);
        if !(x > 0.0 && x.is_finite()) {
            self.err(format!("{}.{key}", s.name), format!("must be a positive number, got {x}"));
        }
        x
    }

    fn int(&mut self, s: &Section, key: &str, default: i64) -> i64 {
        match self.raw(s, key) {
            None => default,
            Some(Value::Integer(i)) => *i,
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected an integer");
                default
            }
        }
    }

    fn count(&mut self, s: &Section, key: &str, default: usize, min: usize) -> usize {
        let i = self.int(s, key, default as i64);
        if i < min as i64 {
            self.err(format!("{}.{key}", s.name), format!("must be >= {min}, got {i}"));
            return default.max(min);
        }
        i as usize
    }

    fn seed(&mut self, s: &Section, key: &str) -> u64 {
        let i = self.int(s, key, 0);
        if i < 0 {
            self.err(format!("{}.{key}", s.name), "must be nonnegative");
            return 0;
        }
        i as u64
    }

    fn boolean(&mut self, s: &Section, key: &str, default: bool) -> bool {
        match self.raw(s, key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected true or false");
                default
            }
        }
    }

    fn choice(&mut self, s: &Section, key: &str, default: &'static str, choices: &[&'static str]) -> &'static str {
        match self.raw(s, key) {
            None => default,
            Some(Value::String(v)) => match choices.iter().find(|c| **c == v) {
                Some(c) => c,
                None => {
                    self.err(
                        format!("{}.{key}", s.name),
                        format!("`{v}` is not one of {}", choices.join(", ")),
                    );
                    default
                }
            },
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected a string");
                default
            }
        }
    }

    fn string(&mut self, s: &Section, key: &str, default: &str) -> String {
        match self.raw(s, key) {
            None => default.to_string(),
            Some(Value::String(v)) => v.clone(),
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected a string");
                default.to_string()
            }
        }
    }

    fn f64_list(&mut self, s: &Section, key: &str, default: &[f64]) -> Vec<f64> {
        match self.raw(s, key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.iter().enumerate() {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(x) => out.push(*x as f64),
                        _ => self.err(format!("{}.{key}[{i}]", s.name), "expected a number"),
                    }
                }
                out
            }
            Some(_) => {
                self.err(format!("{}.{key}", s.name), "expected an array of numbers");
                default.to_vec()
            }
        }
    }

    fn mode(&mut self, s: &Section, key: &str) -> u32 {
        let m = self.int(s, key, 1);
        if !(1..=u32::MAX as i64).contains(&m) {
            self.err(format!("{}.{key}", s.name), format!("must be >= 1, got {m}"));
            return 1;
        }
        m as u32
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            key: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        }])
    })?;
    parse_str(&text)
}

/// Validates configuration text; every problem is reported, not just the first.
pub fn parse_str(text: &str) -> Result<RunConfig, ConfigErrors> {
    let root: Table = toml::from_str(text).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            key: String::new(),
            message: format!("malformed TOML: {}", e.message()),
        }])
    })?;
    let mut r = Reader { errors: Vec::new() };
    for key in root.keys() {
        if !TOP.contains(&key.as_str()) {
            let hint = nearest(key, TOP)
                .map(|n| format!("; nearest valid key is `{n}`"))
                .unwrap_or_default();
            r.err(key.clone(), format!("unknown key{hint}"));
        }
    }

    let experiment = match root.get("experiment") {
        None => Experiment::Skeleton,
        Some(Value::String(s)) => Experiment::from_name(s).unwrap_or_else(|| {
            r.err("experiment", format!("`{s}` is not one of {}", Experiment::NAMES.join(", ")));
            Experiment::Skeleton
        }),
        Some(_) => {
            r.err("experiment", "expected a string");
            Experiment::Skeleton
        }
    };

    let s = r.section(&root, "grid", &["n_interior", "length"]);
    let n_interior = r.count(&s, "n_interior", 32, 1);
    let length = r.positive(&s, "length", 1.0);

    let s = r.section(&root, "time", &["T", "N"]);
    let horizon = r.positive(&s, "T", 1.0);
    let n_steps = r.count(&s, "N", 64, 1);

    let coefficients = read_coefficients(&mut r, &root);

    let s = r.section(&root, "validation", &["samples"]);
    let validation_samples = r.count(&s, "samples", 100_000, 1);

    let s = r.section(&root, "initial", &["kind", "amplitude", "mode", "values"]);
    let initial = match r.choice(&s, "kind", "sine", &["zero", "sine", "tabulated"]) {
        "zero" => InitialCfg::Zero,
        "sine" => InitialCfg::Sine {
            amplitude: r.f64(&s, "amplitude", 1.0),
            mode: r.mode(&s, "mode"),
        },
        _ => {
            let v = r.f64_list(&s, "values", &[]);
            if v.len() != n_interior {
                r.err("initial.values", format!("expected {n_interior} values, got {}", v.len()));
            }
            InitialCfg::Tabulated(v)
        }
    };

    let s = r.section(&root, "control", &["kind", "value", "amplitude", "frequency", "offset", "values"]);
    let control = match r.choice(&s, "kind", "zero", &["zero", "constant", "sine", "tabulated"]) {
        "zero" => ControlCfg::Zero,
        "constant" => ControlCfg::Constant {
            value: r.f64(&s, "value", 0.0),
        },
        "sine" => ControlCfg::Sine {
            amplitude: r.f64(&s, "amplitude", 1.0),
            frequency: r.f64(&s, "frequency", 1.0),
            offset: r.f64(&s, "offset", 0.0),
        },
        _ => {
            let v = r.f64_list(&s, "values", &[]);
            if v.len() != n_steps {
                r.err("control.values", format!("expected {n_steps} values (one per step), got {}", v.len()));
            }
            ControlCfg::Tabulated(v)
        }
    };

    let s = r.section(&root, "solver", &["newton_tol", "max_iter", "max_halvings", "regularize_initial"]);
    let defaults = SolverSettings::default();
    let solver = SolverSettings {
        newton_tol: r.positive(&s, "newton_tol", DEFAULT_NEWTON_TOL),
        max_iter: r.count(&s, "max_iter", DEFAULT_MAX_ITER, 1),
        max_halvings: r.count(&s, "max_halvings", defaults.max_halvings, 0),
        regularize_initial: r.boolean(&s, "regularize_initial", true),
    };

    let s = r.section(&root, "monte_carlo", &["M_paths", "base_seed", "eps_list", "worker_count"]);
    let paths = r.count(&s, "M_paths", 100, 1);
    let base_seed = r.seed(&s, "base_seed");
    let eps_list = r.f64_list(&s, "eps_list", &[0.1, 0.01, 0.001]);
    if eps_list.is_empty() {
        r.err("monte_carlo.eps_list", "must not be empty");
    }
    for (i, e) in eps_list.iter().enumerate() {
        if !(*e >= 0.0 && e.is_finite()) {
            r.err(format!("monte_carlo.eps_list[{i}]"), format!("must be >= 0, got {e}"));
        }
    }
    let worker_count = r.raw(&s, "worker_count").is_some().then(|| r.count(&s, "worker_count", 1, 1));
    let monte_carlo = MonteCarloCfg {
        paths,
        base_seed,
        eps_list,
        worker_count,
    };

    let s = r.section(
        &root,
        "optimizer",
        &["penalty_schedule", "fd_step", "max_iters_per_stage", "grad_tol", "feasibility_tol"],
    );
    let od = OptimizerSettings::default();
    let penalty_schedule = r.f64_list(&s, "penalty_schedule", &od.penalty_schedule);
    if penalty_schedule.is_empty() || penalty_schedule.iter().any(|l| !(*l > 0.0)) {
        r.err("optimizer.penalty_schedule", "must be a nonempty list of positive weights");
    }
    let optimizer = OptimizerSettings {
        penalty_schedule,
        fd_step: r.positive(&s, "fd_step", od.fd_step),
        max_iters_per_stage: r.count(&s, "max_iters_per_stage", od.max_iters_per_stage, 1),
        grad_tol: r.positive(&s, "grad_tol", od.grad_tol),
        feasibility_tol: r.positive(&s, "feasibility_tol", od.feasibility_tol),
    };

    let s = r.section(&root, "event", &["kind", "radius", "target", "amplitude", "mode", "control_value"]);
    let kind = match r.choice(&s, "kind", "endpoint_ball", &["endpoint_ball", "sup_tube"]) {
        "endpoint_ball" => EventKind::EndpointBall,
        _ => EventKind::SupTube,
    };
    let radius = r.positive(&s, "radius", 0.1);
    let target = match r.choice(&s, "target", "sine", &["sine", "skeleton"]) {
        "sine" => EventTarget::Sine {
            amplitude: r.f64(&s, "amplitude", 0.0),
            mode: r.mode(&s, "mode"),
        },
        _ => EventTarget::Skeleton {
            control_value: r.f64(&s, "control_value", 0.0),
        },
    };
    let event = EventCfg { kind, radius, target };

    let s = r.section(
        &root,
        "invariant",
        &["T_long", "window", "steps_per_window", "dissipativity_samples", "moment_paths", "slack"],
    );
    let invariant = InvariantCfg {
        t_long: r.positive(&s, "T_long", 50.0),
        window: r.positive(&s, "window", 5.0),
        steps_per_window: r.count(&s, "steps_per_window", 20, 1),
        dissipativity_samples: r.count(&s, "dissipativity_samples", 1000, 1),
        moment_paths: r.count(&s, "moment_paths", 64, 1),
        slack: r.f64(&s, "slack", 0.1),
    };
    if invariant.slack < 0.0 {
        r.err("invariant.slack", "must be >= 0");
    }
    if invariant.t_long < invariant.window {
        r.err("invariant.T_long", "must be at least one window");
    } else {
        let w = invariant.t_long / invariant.window;
        if (w - w.round()).abs() > 1e-9 * w {
            r.err("invariant.T_long", "must be a whole number of windows");
        }
    }

    let s = r.section(&root, "convergence", &["frequencies", "levels"]);
    let freqs = r.f64_list(&s, "frequencies", &[1.0, 2.0, 4.0, 8.0, 16.0]);
    let mut frequencies = Vec::with_capacity(freqs.len());
    for (i, f) in freqs.iter().enumerate() {
        if *f < 0.0 || f.fract() != 0.0 {
            r.err(format!("convergence.frequencies[{i}]"), "must be a nonnegative integer");
        } else {
            frequencies.push(*f as u32);
        }
    }
    let convergence = ConvergenceCfg {
        frequencies,
        levels: r.count(&s, "levels", 3, 1),
    };

    let s = r.section(&root, "output", &["directory", "dump_interval"]);
    let output = OutputCfg {
        directory: r.string(&s, "directory", "out"),
        dump_interval: r.count(&s, "dump_interval", 1, 1),
    };

    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    Ok(RunConfig {
        experiment,
        n_interior,
        length,
        horizon,
        n_steps,
        coefficients,
        validation_samples,
        initial,
        control,
        solver,
        monte_carlo,
        optimizer,
        event,
        invariant,
        convergence,
        output,
    })
}

fn read_coefficients(r: &mut Reader, root: &Table) -> Coefficients {
    let s = r.section(
        root,
        "coefficients",
        &[
            "flux", "p", "slope", "kappa", "mu", "delta_reg", "C1", "C2", "K1", "K2", "b", "beta", "gamma", "sigma",
            "c_sigma",
        ],
    );
    let default = Coefficients::default();
    let p = r.f64(&s, "p", 4.0);
    let flux = match r.choice(&s, "flux", "p_laplacian", &["p_laplacian", "linear", "regularized"]) {
        "p_laplacian" => FluxFunction::p_laplacian(p).map_err(|e| e.to_string()),
        "linear" => Ok(FluxFunction::linear(r.f64(&s, "slope", 1.0))),
        _ => {
            let kappa = r.positive(&s, "kappa", 1.0);
            let mu = r.positive(&s, "mu", 1.0);
            FluxFunction::regularized(p, kappa, mu).map_err(|e| e.to_string())
        }
    };
    let mut flux = match flux {
        Ok(f) => f,
        Err(e) => {
            r.err("coefficients.p", e);
            default.flux
        }
    };
    let (c1, c2) = (r.f64(&s, "C1", flux.c1), r.f64(&s, "C2", flux.c2));
    let (k1, k2) = (r.f64(&s, "K1", flux.k1), r.f64(&s, "K2", flux.k2));
    for (key, v) in [("C1", c1), ("C2", c2), ("K1", k1), ("K2", k2)] {
        if v < 0.0 {
            r.err(format!("coefficients.{key}"), "must be >= 0");
        }
    }
    flux = flux.with_constants(c1, c2, k1, k2);
    if r.raw(&s, "delta_reg").is_some() {
        let d = r.f64(&s, "delta_reg", 0.0);
        if d < 0.0 {
            r.err("coefficients.delta_reg", "must be >= 0");
        }
        flux = flux.with_delta_reg(d);
    }

    let b = match r.choice(&s, "b", "wave", &["identity", "linear", "wave"]) {
        "identity" => Ok(BFunction::identity()),
        "linear" => BFunction::linear(r.f64(&s, "beta", 1.0)),
        _ => BFunction::wave(r.f64(&s, "beta", 2.0), r.f64(&s, "gamma", 1.0)),
    };
    let b = b.unwrap_or_else(|e| {
        r.err("coefficients.beta", e.to_string());
        default.b
    });

    let c_sigma = r.f64(&s, "c_sigma", 1.0);
    if c_sigma < 0.0 {
        r.err("coefficients.c_sigma", "must be >= 0");
    }
    let sigma = match r.choice(&s, "sigma", "linear", &["linear", "soft_quadratic", "zero"]) {
        "linear" => NoiseFunction::linear(c_sigma),
        "soft_quadratic" => NoiseFunction::soft_quadratic(c_sigma),
        _ => NoiseFunction::zero(),
    };
    Coefficients::new(flux, b, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_str("").unwrap();
        assert_eq!(cfg.experiment, Experiment::Skeleton);
        assert_eq!(cfg.n_interior, 32);
        assert_eq!(cfg.n_steps, 64);
        assert_eq!(cfg.coefficients, Coefficients::default());
        assert_eq!(cfg.solver, SolverSettings::default());
        assert_eq!(cfg.optimizer, OptimizerSettings::default());
        assert_eq!(cfg.output.directory, "out");
    }

    #[test]
    fn zero_steps_names_the_key() {
        let err = parse_str("[time]\nN = 0\n").unwrap_err();
        assert!(err.0.iter().any(|e| e.key == "time.N"), "{err}");
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let err = parse_str("[grid]\nn_interor = 8\n").unwrap_err();
        let e = &err.0[0];
        assert_eq!(e.key, "grid.n_interor");
        assert!(e.message.contains("grid.n_interior"), "{e}");
        let err = parse_str("[monte_carl]\nM_paths = 3\n").unwrap_err();
        assert!(err.0[0].message.contains("monte_carlo"));
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "experiment = \"nope\"\n[grid]\nlength = -1\n[time]\nN = 0\nT = 0\n[coefficients]\nsigma = \"cubic\"\n";
        let err = parse_str(text).unwrap_err();
        let keys: Vec<&str> = err.0.iter().map(|e| e.key.as_str()).collect();
        for k in ["experiment", "grid.length", "time.N", "time.T", "coefficients.sigma"] {
            assert!(keys.contains(&k), "missing {k} in {keys:?}");
        }
    }

    #[test]
    fn tabulated_lengths_are_checked() {
        let err = parse_str("[grid]\nn_interior = 3\n[initial]\nkind = \"tabulated\"\nvalues = [1, 2]\n").unwrap_err();
        assert_eq!(err.0[0].key, "initial.values");
        let ok = parse_str("[time]\nN = 2\n[control]\nkind = \"tabulated\"\nvalues = [1.0, 2]\n").unwrap();
        assert_eq!(ok.control, ControlCfg::Tabulated(vec![1.0, 2.0]));
    }

    #[test]
    fn coefficient_families() {
        let cfg = parse_str(
            "[coefficients]\nflux = \"regularized\"\np = 3\nkappa = 2\nmu = 0.5\nb = \"identity\"\nsigma = \"soft_quadratic\"\nc_sigma = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.coefficients.flux, FluxFunction::regularized(3.0, 2.0, 0.5).unwrap());
        assert_eq!(cfg.coefficients.sigma, NoiseFunction::soft_quadratic(0.5));
        let err = parse_str("[coefficients]\np = 1\n").unwrap_err();
        assert_eq!(err.0[0].key, "coefficients.p");
    }
}
