//! Scenario configuration: a strict line-based `key = value` format with
//! `[section]` headers and `#` comments.  Parsing validates everything and
//! reports every problem at once; unknown sections, unknown keys, and
//! duplicate keys are errors.  Serialization emits a canonical form that
//! parses back to an equal config.

use crate::error::{ConfigIssue, Error, Result};
use crate::fields::MagneticFieldModel;
use crate::grid::TAU;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    ExbDrift,
    GradbDrift,
    MuInvariance,
    Gc2d,
    PicRun,
    DefectScan,
    Convergence,
}

impl ScenarioKind {
    pub fn all() -> [ScenarioKind; 7] {
        [
            Self::ExbDrift,
            Self::GradbDrift,
            Self::MuInvariance,
            Self::Gc2d,
            Self::PicRun,
            Self::DefectScan,
            Self::Convergence,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ExbDrift => "exb-drift",
            Self::GradbDrift => "gradb-drift",
            Self::MuInvariance => "mu-invariance",
            Self::Gc2d => "gc2d",
            Self::PicRun => "pic-run",
            Self::DefectScan => "defect-scan",
            Self::Convergence => "convergence",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|s| s.name() == name)
    }

    /// One-line description for `list-scenarios`.
    pub fn summary(self) -> &'static str {
        match self {
            Self::ExbDrift => "single-particle orbit in uniform E and b; measured drift vs (E_y, -E_x)/b",
            Self::GradbDrift => "single-particle orbit in a field gradient; measured drift vs -(w^2/2) perp(grad b)/b^2",
            Self::MuInvariance => "drift-orbit integration in nonuniform b; magnetic moment conservation",
            Self::Gc2d => "2D guiding-center shear layer; energy, mass, and L^p bookkeeping",
            Self::PicRun => "self-consistent particle run with field diagnostics and snapshots",
            Self::DefectScan => "transport defect of the corrected steady state across an epsilon list",
            Self::Convergence => "tracer guiding-center displacement, particle run vs drift orbit, across epsilon",
        }
    }
}

/// External magnetic field selection; `Bump` is periodic over the domain,
/// `Ramp` is for free-space orbit scenarios only.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Uniform { b0: f64 },
    Bump { b0: f64, amplitude: f64 },
    Ramp { b0: f64, grad: [f64; 2] },
}

impl FieldSpec {
    pub fn build(&self, lengths: [f64; 2]) -> MagneticFieldModel {
        match *self {
            Self::Uniform { b0 } => MagneticFieldModel::Uniform { b0 },
            Self::Bump { b0, amplitude } => MagneticFieldModel::PeriodicBump { b0, amplitude, lengths },
            Self::Ramp { b0, grad } => MagneticFieldModel::LinearRamp { b0, grad },
        }
    }
}

/// `[domain]`: square periodic box, `length` per side (default 2π),
/// `nodes` per side (default 64, power of two).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub length: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadingKind {
    Quiet,
    Random,
}

impl LoadingKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Quiet => "quiet",
            Self::Random => "random",
        }
    }
}

/// `[pic]`: particle count (default 4096; quiet loading needs a perfect
/// square), fast-time step `ds` (default auto: gyroperiod/64), step
/// count (default 2000), output interval (default 10), RNG seed
/// (default 1), loading (default quiet), perturbation mode and
/// amplitude for the initial density 1 + δcos(2πm x/L) (defaults 1,
/// 0.05), thermal speed (default 1; 0 selects the cold beam), and the
/// beam velocity used when thermal = 0 (default (0.2, 0, 0)).
#[derive(Debug, Clone, PartialEq)]
pub struct PicConfig {
    pub particles: usize,
    pub ds: Option<f64>,
    pub steps: usize,
    pub output_every: usize,
    pub seed: u64,
    pub loading: LoadingKind,
    pub mode: usize,
    pub perturbation: f64,
    pub thermal: f64,
    pub v0: [f64; 3],
}

/// `[gc2d]`: grid nodes per side (default 128), time step (default
/// 0.02), end time (default 10), output interval in steps (default 25),
/// shear-layer perturbation amplitude (default 0.05), layer width
/// (default 0.25), and background density level (default 6).
#[derive(Debug, Clone, PartialEq)]
pub struct Gc2dConfig {
    pub nodes: usize,
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    pub perturbation: f64,
    pub shear_width: f64,
    pub background: f64,
}

/// `[orbit]`: initial perpendicular position (default (π, π)), speed w
/// (default 1), parallel velocity (default 0), time step (default 1e-3),
/// end time (default 10), uniform field strength `e0` for the drift
/// scenarios (default 0.2, applied as E = (−e0, 0)), and the frozen
/// potential gradient for mu-invariance (default (0.1, −0.05)).
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitConfig {
    pub x: [f64; 2],
    pub w: f64,
    pub v_par: f64,
    pub dt: f64,
    pub t_end: f64,
    pub e0: f64,
    pub phi_grad: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VortexKind {
    Eigenstate,
    Exponential,
}

impl VortexKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eigenstate => "eigenstate",
            Self::Exponential => "exponential",
        }
    }
}

/// `[defect]`: grid sizes for the corrected-state defect scan (defaults
/// nodes 16 per spatial side, n_theta 8, n_w 33, n_v 33, w_max 4,
/// v_max 4), the steady vortex family (default eigenstate), and its
/// amplitude (default 0.05; for `exponential` this is the target sup
/// of φ).  The spatial grid is separate from `[domain]` because the
/// gyro-resolved arrays scale as nodes² · n_theta · n_w · n_v.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectConfig {
    pub nodes: usize,
    pub n_theta: usize,
    pub n_w: usize,
    pub n_v: usize,
    pub w_max: f64,
    pub v_max: f64,
    pub vortex: VortexKind,
    pub amplitude: f64,
}

/// `[convergence]`: comparison window in slow time (default 1.2567,
/// just past two gyroperiods at ε = 0.1 so every scan entry covers a
/// whole number of periods), steady vortex amplitude (default 0.08),
/// tracer lattice offset (default (π, π/2)), tracer perpendicular speed
/// (default 1), and fast-time steps per gyroperiod at the largest ε
/// (default 64; refined entries scale it up).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub window: f64,
    pub amplitude: f64,
    pub tracer_x: [f64; 2],
    pub tracer_w: f64,
    pub steps_per_gyration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// `[output] dir`: output directory (default "out"); the CLI `--out`
    /// flag overrides it.
    pub out_dir: String,
    pub domain: DomainConfig,
    pub field: FieldSpec,
    /// `[epsilon] value`: scale ratio for single-ε scenarios (default 0.05).
    pub epsilon: f64,
    /// `[epsilon] list`: strictly decreasing ε ladder for scan scenarios
    /// (default 0.1, 0.05, 0.025).
    pub epsilon_list: Vec<f64>,
    pub pic: PicConfig,
    pub gc2d: Gc2dConfig,
    pub orbit: OrbitConfig,
    pub defect: DefectConfig,
    pub convergence: ConvergenceConfig,
}

/// The field default depends on the scenario: the field-gradient drift
/// needs a gradient and moment conservation is only informative in a
/// nonuniform field.
pub fn default_field(scenario: ScenarioKind) -> FieldSpec {
    match scenario {
        ScenarioKind::GradbDrift => FieldSpec::Ramp { b0: 1.0, grad: [-0.05, 0.0] },
        ScenarioKind::MuInvariance => FieldSpec::Bump { b0: 1.0, amplitude: 0.3 },
        _ => FieldSpec::Uniform { b0: 1.0 },
    }
}

impl ScenarioConfig {
    pub fn defaults(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            out_dir: "out".into(),
            domain: DomainConfig { length: TAU, nodes: 64 },
            field: default_field(scenario),
            epsilon: 0.05,
            epsilon_list: vec![0.1, 0.05, 0.025],
            pic: PicConfig {
                particles: 4096,
                ds: None,
                steps: 2000,
                output_every: 10,
                seed: 1,
                loading: LoadingKind::Quiet,
                mode: 1,
                perturbation: 0.05,
                thermal: 1.0,
                v0: [0.2, 0.0, 0.0],
            },
            gc2d: Gc2dConfig {
                nodes: 128,
                dt: 0.02,
                t_end: 10.0,
                output_every: 25,
                perturbation: 0.05,
                shear_width: 0.25,
                background: 6.0,
            },
            orbit: OrbitConfig {
                x: [0.5 * TAU, 0.5 * TAU],
                w: 1.0,
                v_par: 0.0,
                dt: 1e-3,
                t_end: 10.0,
                e0: 0.2,
                phi_grad: [0.1, -0.05],
            },
            defect: DefectConfig {
                nodes: 16,
                n_theta: 8,
                n_w: 33,
                n_v: 33,
                w_max: 4.0,
                v_max: 4.0,
                vortex: VortexKind::Eigenstate,
                amplitude: 0.05,
            },
            convergence: ConvergenceConfig {
                window: 1.2567,
                amplitude: 0.08,
                tracer_x: [0.5 * TAU, 0.25 * TAU],
                tracer_w: 1.0,
                steps_per_gyration: 64,
            },
        }
    }
}

const SECTIONS_ALL: [&str; 9] = [
    "output", "domain", "field", "epsilon", "pic", "gc2d", "orbit", "defect", "convergence",
];

struct Parsed {
    /// section.key -> (line, raw value)
    map: BTreeMap<String, (usize, String)>,
    issues: Vec<ConfigIssue>,
}

fn issue(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        line,
        key: key.map(|k| k.to_string()),
        message: message.into(),
    }
}

fn syntax_pass(text: &str) -> Parsed {
    let mut map = BTreeMap::new();
    let mut issues = Vec::new();
    let mut section = String::new();
    let mut section_known = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if SECTIONS_ALL.contains(&name) => {
                    section = name.to_string();
                    section_known = true;
                }
                Some(name) => {
                    issues.push(issue(
                        Some(line_no),
                        None,
                        format!("unknown section `[{name}]` (known: {})", SECTIONS_ALL.join(", ")),
                    ));
                    section = name.to_string();
                    section_known = false;
                }
                None => {
                    issues.push(issue(Some(line_no), None, "unterminated section header"));
                    section_known = false;
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(issue(
                Some(line_no),
                None,
                format!("expected `key = value`, got `{line}`"),
            ));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            issues.push(issue(
                Some(line_no),
                Some(key),
                "keys are lowercase [a-z0-9_] words",
            ));
            continue;
        }
        if !section_known {
            // The section itself was already reported; skip its keys.
            continue;
        }
        let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        if let Some(&(first, _)) = map.get(&full).as_ref() {
            issues.push(issue(
                Some(line_no),
                Some(&full),
                format!("duplicate key (first set on line {first})"),
            ));
            continue;
        }
        map.insert(full, (line_no, value.to_string()));
    }
    Parsed { map, issues }
}

/// Typed extraction over the parsed map; every getter records issues
/// instead of failing fast, and consumed keys are tracked so leftovers
/// can be reported as unknown.
struct Extractor {
    map: BTreeMap<String, (usize, String)>,
    issues: Vec<ConfigIssue>,
}

impl Extractor {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn f64_checked(
        &mut self,
        key: &str,
        default: f64,
        check: impl Fn(f64) -> Option<String>,
    ) -> f64 {
        match self.take(key) {
            None => default,
            Some((line, raw)) => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if let Some(msg) = check(v) {
                        self.issues.push(issue(Some(line), Some(key), msg));
                        default
                    } else {
                        v
                    }
                }
                _ => {
                    self.issues.push(issue(
                        Some(line),
                        Some(key),
                        format!("expected a finite number, got `{raw}`"),
                    ));
                    default
                }
            },
        }
    }

    fn positive_f64(&mut self, key: &str, default: f64) -> f64 {
        self.f64_checked(key, default, |v| {
            (v <= 0.0).then(|| format!("must be positive, got {v}"))
        })
    }

    fn any_f64(&mut self, key: &str, default: f64) -> f64 {
        self.f64_checked(key, default, |_| None)
    }

    fn usize_checked(
        &mut self,
        key: &str,
        default: usize,
        check: impl Fn(usize) -> Option<String>,
    ) -> usize {
        match self.take(key) {
            None => default,
            Some((line, raw)) => match raw.parse::<usize>() {
                Ok(v) => {
                    if let Some(msg) = check(v) {
                        self.issues.push(issue(Some(line), Some(key), msg));
                        default
                    } else {
                        v
                    }
                }
                Err(_) => {
                    self.issues.push(issue(
                        Some(line),
                        Some(key),
                        format!("expected a nonnegative integer, got `{raw}`"),
                    ));
                    default
                }
            },
        }
    }

    fn count(&mut self, key: &str, default: usize) -> usize {
        self.usize_checked(key, default, |v| (v == 0).then(|| "must be at least 1".to_string()))
    }

    fn power_of_two(&mut self, key: &str, default: usize) -> usize {
        self.usize_checked(key, default, |v| {
            (!v.is_power_of_two() || v < 8)
                .then(|| format!("must be a power of two >= 8, got {v}"))
        })
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        match self.take(key) {
            None => default,
            Some((line, raw)) => raw.parse::<u64>().unwrap_or_else(|_| {
                self.issues.push(issue(
                    Some(line),
                    Some(key),
                    format!("expected an unsigned integer, got `{raw}`"),
                ));
                default
            }),
        }
    }

    fn pair_f64(&mut self, key: &str, default: [f64; 2]) -> [f64; 2] {
        match self.take(key) {
            None => default,
            Some((line, raw)) => {
                let parts: Vec<_> = raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
                match parts.as_slice() {
                    [Ok(a), Ok(b)] if a.is_finite() && b.is_finite() => [*a, *b],
                    _ => {
                        self.issues.push(issue(
                            Some(line),
                            Some(key),
                            format!("expected two comma-separated numbers, got `{raw}`"),
                        ));
                        default
                    }
                }
            }
        }
    }

    fn triple_f64(&mut self, key: &str, default: [f64; 3]) -> [f64; 3] {
        match self.take(key) {
            None => default,
            Some((line, raw)) => {
                let parts: Vec<_> = raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
                match parts.as_slice() {
                    [Ok(a), Ok(b), Ok(c)] if [a, b, c].iter().all(|v| v.is_finite()) => [*a, *b, *c],
                    _ => {
                        self.issues.push(issue(
                            Some(line),
                            Some(key),
                            format!("expected three comma-separated numbers, got `{raw}`"),
                        ));
                        default
                    }
                }
            }
        }
    }

    fn list_f64(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.take(key) {
            None => default.to_vec(),
            Some((line, raw)) => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
                match parsed {
                    Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => v,
                    _ => {
                        self.issues.push(issue(
                            Some(line),
                            Some(key),
                            format!("expected comma-separated numbers, got `{raw}`"),
                        ));
                        default.to_vec()
                    }
                }
            }
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.take(key) {
            None => default.to_string(),
            Some((_, raw)) => raw,
        }
    }

    fn keyword(&mut self, key: &str, options: &[&str], default: &str) -> String {
        match self.take(key) {
            None => default.to_string(),
            Some((line, raw)) => {
                if options.contains(&raw.as_str()) {
                    raw
                } else {
                    self.issues.push(issue(
                        Some(line),
                        Some(key),
                        format!("expected one of {}, got `{raw}`", options.join(", ")),
                    ));
                    default.to_string()
                }
            }
        }
    }
}

/// Parse and validate a scenario config, reporting every issue found.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let Parsed { map, issues } = syntax_pass(text);
    let mut ex = Extractor { map, issues };

    let scenario = match ex.take("scenario") {
        None => {
            ex.issues.push(issue(None, Some("scenario"), "missing required key"));
            None
        }
        Some((line, raw)) => match ScenarioKind::from_name(&raw) {
            Some(s) => Some(s),
            None => {
                ex.issues.push(issue(
                    Some(line),
                    Some("scenario"),
                    format!(
                        "unknown scenario `{raw}` (known: {})",
                        ScenarioKind::all().map(|s| s.name()).join(", ")
                    ),
                ));
                None
            }
        },
    };

    let out_dir = ex.string("output.dir", "out");
    if out_dir.is_empty() {
        ex.issues.push(issue(None, Some("output.dir"), "must not be empty"));
    }

    let domain = DomainConfig {
        length: ex.positive_f64("domain.length", TAU),
        nodes: ex.power_of_two("domain.nodes", 64),
    };

    let b0 = ex.positive_f64("field.b0", 1.0);
    let amplitude = ex.f64_checked("field.amplitude", 0.3, |v| {
        (v.abs() >= 1.0).then(|| format!("bump relative amplitude must satisfy |a| < 1, got {v}"))
    });
    let grad = ex.pair_f64("field.grad", [-0.05, 0.0]);
    let default_model = scenario.map_or("uniform", |s| match default_field(s) {
        FieldSpec::Uniform { .. } => "uniform",
        FieldSpec::Bump { .. } => "bump",
        FieldSpec::Ramp { .. } => "ramp",
    });
    let model = ex.keyword("field.model", &["uniform", "bump", "ramp"], default_model);
    let field = match model.as_str() {
        "bump" => FieldSpec::Bump { b0, amplitude },
        "ramp" => FieldSpec::Ramp { b0, grad },
        _ => FieldSpec::Uniform { b0 },
    };

    let epsilon = ex.f64_checked("epsilon.value", 0.05, |v| {
        (v <= 0.0 || v >= 1.0).then(|| format!("scale ratio must lie in (0, 1), got {v}"))
    });
    let epsilon_list = ex.list_f64("epsilon.list", &[0.1, 0.05, 0.025]);
    if epsilon_list.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        ex.issues.push(issue(None, Some("epsilon.list"), "every entry must lie in (0, 1)"));
    } else if epsilon_list.windows(2).any(|p| p[1] >= p[0]) {
        ex.issues.push(issue(None, Some("epsilon.list"), "entries must be strictly decreasing"));
    }

    let pic = PicConfig {
        particles: ex.count("pic.particles", 4096),
        ds: match ex.take("pic.ds") {
            None => None,
            Some((line, raw)) => match raw.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Some(v),
                _ => {
                    ex.issues.push(issue(
                        Some(line),
                        Some("pic.ds"),
                        format!("expected a positive number, got `{raw}`"),
                    ));
                    None
                }
            },
        },
        steps: ex.count("pic.steps", 2000),
        output_every: ex.count("pic.output_every", 10),
        seed: ex.u64("pic.seed", 1),
        loading: match ex.keyword("pic.loading", &["quiet", "random"], "quiet").as_str() {
            "random" => LoadingKind::Random,
            _ => LoadingKind::Quiet,
        },
        mode: ex.count("pic.mode", 1),
        perturbation: ex.f64_checked("pic.perturbation", 0.05, |v| {
            (v.abs() >= 1.0).then(|| format!("density perturbation must satisfy |d| < 1, got {v}"))
        }),
        thermal: ex.f64_checked("pic.thermal", 1.0, |v| {
            (v < 0.0).then(|| format!("thermal speed must be nonnegative, got {v}"))
        }),
        v0: ex.triple_f64("pic.v0", [0.2, 0.0, 0.0]),
    };

    let gc2d = Gc2dConfig {
        nodes: ex.power_of_two("gc2d.nodes", 128),
        dt: ex.positive_f64("gc2d.dt", 0.02),
        t_end: ex.positive_f64("gc2d.t_end", 10.0),
        output_every: ex.count("gc2d.output_every", 25),
        perturbation: ex.f64_checked("gc2d.perturbation", 0.05, |v| {
            (v.abs() > 1.0).then(|| format!("shear perturbation must satisfy |d| <= 1, got {v}"))
        }),
        shear_width: ex.positive_f64("gc2d.shear_width", 0.25),
        background: ex.any_f64("gc2d.background", 6.0),
    };

    let orbit = OrbitConfig {
        x: ex.pair_f64("orbit.x", [0.5 * TAU, 0.5 * TAU]),
        w: ex.f64_checked("orbit.w", 1.0, |v| {
            (v < 0.0).then(|| format!("perpendicular speed must be nonnegative, got {v}"))
        }),
        v_par: ex.any_f64("orbit.v_par", 0.0),
        dt: ex.positive_f64("orbit.dt", 1e-3),
        t_end: ex.positive_f64("orbit.t_end", 10.0),
        e0: ex.any_f64("orbit.e0", 0.2),
        phi_grad: ex.pair_f64("orbit.phi_grad", [0.1, -0.05]),
    };

    let defect = DefectConfig {
        nodes: ex.power_of_two("defect.nodes", 16),
        n_theta: ex.usize_checked("defect.n_theta", 8, |v| {
            (v < 4 || v % 2 != 0).then(|| format!("gyrophase count must be even and >= 4, got {v}"))
        }),
        n_w: ex.usize_checked("defect.n_w", 33, |v| {
            (v < 3).then(|| format!("speed grid needs >= 3 nodes, got {v}"))
        }),
        n_v: ex.usize_checked("defect.n_v", 33, |v| {
            (v < 3).then(|| format!("parallel grid needs >= 3 nodes, got {v}"))
        }),
        w_max: ex.positive_f64("defect.w_max", 4.0),
        v_max: ex.positive_f64("defect.v_max", 4.0),
        vortex: match ex.keyword("defect.vortex", &["eigenstate", "exponential"], "eigenstate").as_str() {
            "exponential" => VortexKind::Exponential,
            _ => VortexKind::Eigenstate,
        },
        amplitude: ex.positive_f64("defect.amplitude", 0.05),
    };

    let convergence = ConvergenceConfig {
        window: ex.positive_f64("convergence.window", 1.2567),
        amplitude: ex.positive_f64("convergence.amplitude", 0.08),
        tracer_x: ex.pair_f64("convergence.tracer_x", [0.5 * TAU, 0.25 * TAU]),
        tracer_w: ex.positive_f64("convergence.tracer_w", 1.0),
        steps_per_gyration: ex.usize_checked("convergence.steps_per_gyration", 64, |v| {
            (v < 16).then(|| format!("need >= 16 steps per gyration, got {v}"))
        }),
    };

    // Scenario-dependent requirements.
    if matches!(scenario, Some(ScenarioKind::DefectScan | ScenarioKind::Convergence))
        && epsilon_list.len() < 3
    {
        ex.issues.push(issue(
            None,
            Some("epsilon.list"),
            format!("scan scenarios need at least 3 entries, got {}", epsilon_list.len()),
        ));
    }
    if matches!(scenario, Some(ScenarioKind::Gc2d)) && gc2d.dt > gc2d.t_end {
        ex.issues.push(issue(None, Some("gc2d.dt"), "time step exceeds the end time"));
    }
    if orbit.dt > orbit.t_end {
        ex.issues.push(issue(None, Some("orbit.dt"), "time step exceeds the end time"));
    }

    // Anything left in the map was never consumed.
    let leftovers: Vec<(String, usize)> =
        ex.map.iter().map(|(k, &(line, _))| (k.clone(), line)).collect();
    for (key, line) in leftovers {
        ex.issues.push(issue(Some(line), Some(&key), "unknown key"));
    }

    if !ex.issues.is_empty() {
        ex.issues.sort_by_key(|i| i.line.unwrap_or(0));
        return Err(Error::Config(ex.issues));
    }
    let scenario = scenario.expect("missing scenario was recorded as an issue");
    Ok(ScenarioConfig {
        scenario,
        out_dir,
        domain,
        field,
        epsilon,
        epsilon_list,
        pic,
        gc2d,
        orbit,
        defect,
        convergence,
    })
}

fn write_list(out: &mut String, key: &str, values: &[f64]) {
    let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
    writeln!(out, "{key} = {joined}").unwrap();
}

/// Canonical form: every key explicit (except absent optionals), fixed
/// order, shortest round-trip float formatting.  Guaranteed to parse
/// back to an equal config.
pub fn serialize_config(c: &ScenarioConfig) -> String {
    let mut out = String::new();
    writeln!(out, "scenario = {}", c.scenario.name()).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[output]").unwrap();
    writeln!(out, "dir = {}", c.out_dir).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[domain]").unwrap();
    writeln!(out, "length = {}", c.domain.length).unwrap();
    writeln!(out, "nodes = {}", c.domain.nodes).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[field]").unwrap();
    match &c.field {
        FieldSpec::Uniform { b0 } => {
            writeln!(out, "model = uniform").unwrap();
            writeln!(out, "b0 = {b0}").unwrap();
        }
        FieldSpec::Bump { b0, amplitude } => {
            writeln!(out, "model = bump").unwrap();
            writeln!(out, "b0 = {b0}").unwrap();
            writeln!(out, "amplitude = {amplitude}").unwrap();
        }
        FieldSpec::Ramp { b0, grad } => {
            writeln!(out, "model = ramp").unwrap();
            writeln!(out, "b0 = {b0}").unwrap();
            write_list(&mut out, "grad", grad);
        }
    }
    writeln!(out).unwrap();
    writeln!(out, "[epsilon]").unwrap();
    writeln!(out, "value = {}", c.epsilon).unwrap();
    write_list(&mut out, "list", &c.epsilon_list);
    writeln!(out).unwrap();
    writeln!(out, "[pic]").unwrap();
    writeln!(out, "particles = {}", c.pic.particles).unwrap();
    if let Some(ds) = c.pic.ds {
        writeln!(out, "ds = {ds}").unwrap();
    }
    writeln!(out, "steps = {}", c.pic.steps).unwrap();
    writeln!(out, "output_every = {}", c.pic.output_every).unwrap();
    writeln!(out, "seed = {}", c.pic.seed).unwrap();
    writeln!(out, "loading = {}", c.pic.loading.name()).unwrap();
    writeln!(out, "mode = {}", c.pic.mode).unwrap();
    writeln!(out, "perturbation = {}", c.pic.perturbation).unwrap();
    writeln!(out, "thermal = {}", c.pic.thermal).unwrap();
    write_list(&mut out, "v0", &c.pic.v0);
    writeln!(out).unwrap();
    writeln!(out, "[gc2d]").unwrap();
    writeln!(out, "nodes = {}", c.gc2d.nodes).unwrap();
    writeln!(out, "dt = {}", c.gc2d.dt).unwrap();
    writeln!(out, "t_end = {}", c.gc2d.t_end).unwrap();
    writeln!(out, "output_every = {}", c.gc2d.output_every).unwrap();
    writeln!(out, "perturbation = {}", c.gc2d.perturbation).unwrap();
    writeln!(out, "shear_width = {}", c.gc2d.shear_width).unwrap();
    writeln!(out, "background = {}", c.gc2d.background).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[orbit]").unwrap();
    write_list(&mut out, "x", &c.orbit.x);
    writeln!(out, "w = {}", c.orbit.w).unwrap();
    writeln!(out, "v_par = {}", c.orbit.v_par).unwrap();
    writeln!(out, "dt = {}", c.orbit.dt).unwrap();
    writeln!(out, "t_end = {}", c.orbit.t_end).unwrap();
    writeln!(out, "e0 = {}", c.orbit.e0).unwrap();
    write_list(&mut out, "phi_grad", &c.orbit.phi_grad);
    writeln!(out).unwrap();
    writeln!(out, "[defect]").unwrap();
    writeln!(out, "nodes = {}", c.defect.nodes).unwrap();
    writeln!(out, "n_theta = {}", c.defect.n_theta).unwrap();
    writeln!(out, "n_w = {}", c.defect.n_w).unwrap();
    writeln!(out, "n_v = {}", c.defect.n_v).unwrap();
    writeln!(out, "w_max = {}", c.defect.w_max).unwrap();
    writeln!(out, "v_max = {}", c.defect.v_max).unwrap();
    writeln!(out, "vortex = {}", c.defect.vortex.name()).unwrap();
    writeln!(out, "amplitude = {}", c.defect.amplitude).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[convergence]").unwrap();
    writeln!(out, "window = {}", c.convergence.window).unwrap();
    writeln!(out, "amplitude = {}", c.convergence.amplitude).unwrap();
    write_list(&mut out, "tracer_x", &c.convergence.tracer_x);
    writeln!(out, "tracer_w = {}", c.convergence.tracer_w).unwrap();
    writeln!(out, "steps_per_gyration = {}", c.convergence.steps_per_gyration).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn issues_of(text: &str) -> Vec<ConfigIssue> {
        match parse_config(text) {
            Err(Error::Config(issues)) => issues,
            other => panic!("expected config issues, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("scenario = gc2d\n").unwrap();
        assert_eq!(c.scenario, ScenarioKind::Gc2d);
        assert_eq!(c.out_dir, "out");
        assert_eq!(c.domain.nodes, 64);
        assert_eq!(c.gc2d.nodes, 128);
        assert_eq!(c.epsilon, 0.05);
        assert_eq!(c.field, FieldSpec::Uniform { b0: 1.0 });
        for kind in ScenarioKind::all() {
            let minimal = parse_config(&format!("scenario = {}\n", kind.name())).unwrap();
            assert_eq!(minimal, ScenarioConfig::defaults(kind), "{}", kind.name());
        }
        let gradb = ScenarioConfig::defaults(ScenarioKind::GradbDrift);
        assert!(matches!(gradb.field, FieldSpec::Ramp { .. }));
    }

    #[test]
    fn every_scenario_round_trips() {
        for kind in ScenarioKind::all() {
            let c = ScenarioConfig::defaults(kind);
            let text = serialize_config(&c);
            let back = parse_config(&text).unwrap();
            assert_eq!(c, back, "round trip failed for {}", kind.name());
            assert_eq!(text, serialize_config(&back));
        }
    }

    #[test]
    fn custom_config_round_trips() {
        let text = "\
scenario = defect-scan

[field]
model = bump
b0 = 1.25
amplitude = 0.17

[epsilon]
list = 0.2, 0.1, 0.05, 0.025

[defect]
vortex = exponential
amplitude = 0.4
n_w = 65

[pic]
ds = 0.0125
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.defect.vortex, VortexKind::Exponential);
        assert_eq!(c.pic.ds, Some(0.0125));
        assert_eq!(c.epsilon_list.len(), 4);
        let back = parse_config(&serialize_config(&c)).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn all_errors_reported_with_lines() {
        let text = "\
scenario = exb-drift
mystery = 1

[domain]
nodes = 100

[epsilon]
value = -0.1
value = 0.2

[typofield]
b0 = 2
";
        let issues = issues_of(text);
        let text_of = |key: &str| -> &ConfigIssue {
            issues
                .iter()
                .find(|i| i.key.as_deref() == Some(key))
                .unwrap_or_else(|| panic!("no issue for {key}: {issues:?}"))
        };
        assert_eq!(text_of("mystery").line, Some(2));
        assert!(text_of("mystery").message.contains("unknown key"));
        assert_eq!(text_of("domain.nodes").line, Some(5));
        assert!(text_of("domain.nodes").message.contains("power of two"));
        assert_eq!(text_of("epsilon.value").line, Some(8));
        assert!(text_of("epsilon.value").message.contains("(0, 1)"));
        let dup = issues.iter().find(|i| i.message.contains("duplicate")).unwrap();
        assert_eq!(dup.line, Some(9));
        assert!(issues.iter().any(|i| i.message.contains("unknown section")));
        assert_eq!(issues.len(), 5, "{issues:?}");
    }

    #[test]
    fn scenario_key_is_required_and_checked() {
        let issues = issues_of("");
        assert!(issues.iter().any(|i| i.key.as_deref() == Some("scenario")
            && i.message.contains("missing")));

        let issues = issues_of("scenario = warp-drive\n");
        assert!(issues[0].message.contains("unknown scenario"));
    }

    #[test]
    fn list_validation() {
        let issues = issues_of("scenario = convergence\n[epsilon]\nlist = 0.1, 0.2, 0.05\n");
        assert!(issues.iter().any(|i| i.message.contains("strictly decreasing")));

        let issues = issues_of("scenario = convergence\n[epsilon]\nlist = 0.1, 0.05\n");
        assert!(issues.iter().any(|i| i.message.contains("at least 3")));

        let issues = issues_of("scenario = defect-scan\n[epsilon]\nlist = pony\n");
        assert!(issues.iter().any(|i| i.message.contains("comma-separated")));
    }

    #[test]
    fn garbage_lines_are_reported_not_fatal() {
        let issues = issues_of("scenario = gc2d\nthis is not a key value line\n[unclosed\n");
        assert_eq!(issues.len(), 2);
        assert!(issues[0].message.contains("key = value"));
        assert!(issues[1].message.contains("unterminated"));
    }

    #[test]
    fn comments_and_spacing_are_free() {
        let c = parse_config(
            "# leading comment\n  scenario = gc2d  # trailing\n\n[gc2d]\n  dt  =  0.01\n",
        )
        .unwrap();
        assert_eq!(c.gc2d.dt, 0.01);
    }
}
