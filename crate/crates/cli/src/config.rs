//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key is optional except `domain`, `beta` and one of `f` / `f_file`
//! (which the standard verification suite does not need). Command-line
//! `--override key=value` pairs replace file values; the subcommand and
//! `--out` must agree with `command` and `out` if the file sets them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use singular_elliptic::grid::{Axis, Domain, Source};
use singular_elliptic::solver::ContinuationSchedule;
use singular_elliptic::variational::ObstacleSettings;
use singular_elliptic::verify::DEFAULT_SEED;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Obstacle,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Obstacle => "obstacle",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "solve" => Command::Solve,
            "obstacle" => Command::Obstacle,
            "verify" => Command::Verify,
            "sweep" => Command::Sweep,
            _ => return Err(format!("unknown command '{s}'")),
        })
    }
}

/// Where the source term comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Expr(String),
    /// Absolute path of a `x[,y],value` CSV.
    Csv(PathBuf),
}

impl SourceSpec {
    pub fn load(&self) -> singular_elliptic::Result<Source> {
        match self {
            SourceSpec::Expr(e) => Source::parse(e),
            SourceSpec::Csv(p) => {
                let file = std::fs::File::open(p)?;
                Source::read_csv(std::io::BufReader::new(file))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Checks built from this configuration's problem.
    Config,
    /// The fixed built-in suite.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CheckKind {
    Uniqueness,
    Comparison,
    Symmetry,
    Scaling,
    Boundary,
    Energy,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::Uniqueness,
        CheckKind::Comparison,
        CheckKind::Symmetry,
        CheckKind::Scaling,
        CheckKind::Boundary,
        CheckKind::Energy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Uniqueness => "uniqueness",
            CheckKind::Comparison => "comparison",
            CheckKind::Symmetry => "symmetry",
            CheckKind::Scaling => "scaling",
            CheckKind::Boundary => "boundary",
            CheckKind::Energy => "energy",
        }
    }
}

/// `None` selects every check that applies to the problem.
pub type CheckSelection = Option<Vec<CheckKind>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyTolerances {
    pub uniqueness: f64,
    pub comparison: f64,
    pub symmetry: f64,
    pub scaling: f64,
    pub boundary: f64,
    pub certificate: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances {
            uniqueness: 1e-6,
            comparison: 1e-9,
            symmetry: 1e-10,
            scaling: 1e-7,
            boundary: 0.05,
            certificate: 1e-8,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub domain: Option<Domain>,
    pub beta: Option<f64>,
    pub f: Option<SourceSpec>,
    pub m: usize,
    pub schedule: ContinuationSchedule,
    pub out: PathBuf,
    pub seed: u64,
    /// Truncation level of the obstacle functional.
    pub k: f64,
    pub obstacle: ObstacleSettings,
    pub suite: Suite,
    pub checks: CheckSelection,
    pub tolerances: VerifyTolerances,
    pub lambda: f64,
    pub axes: Vec<Axis>,
    pub ladder: Vec<usize>,
    pub pairs: usize,
    pub eps: f64,
    pub tau: f64,
    pub sweep_beta: Vec<f64>,
    pub sweep_m: Vec<usize>,
    pub sweep_growth: Vec<f64>,
    /// Add a wall-time column to sweep summaries.
    pub timing: bool,
}

const KEYS: &[&str] = &[
    "command",
    "domain",
    "beta",
    "f",
    "f_file",
    "m",
    "n0",
    "growth",
    "n_max",
    "interior_tol",
    "margin",
    "limit_solve",
    "newton_tol",
    "newton_max_iters",
    "damping",
    "out",
    "seed",
    "k",
    "obstacle_tol",
    "obstacle_max_iters",
    "suite",
    "checks",
    "uniqueness_tol",
    "comparison_tol",
    "symmetry_tol",
    "scaling_tol",
    "boundary_tol",
    "certificate_tol",
    "lambda",
    "axes",
    "ladder",
    "pairs",
    "eps",
    "tau",
    "sweep_beta",
    "sweep_m",
    "sweep_growth",
    "timing",
];

/// Where a value was set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override(n) => write!(f, "override #{n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Syntax { origin: Origin, message: String },
    #[error("{origin}: unknown key '{key}'")]
    UnknownKey { origin: Origin, key: String },
    #[error("{origin}: duplicate key '{key}' (already set on {first})")]
    Duplicate {
        origin: Origin,
        key: String,
        first: Origin,
    },
    #[error("{origin}: invalid value for '{key}': {message}")]
    Invalid {
        origin: Origin,
        key: String,
        message: String,
    },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("conflicting values for '{key}': config file has '{file}', command line has '{flag}'")]
    Conflict {
        key: &'static str,
        file: String,
        flag: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Values given on the command line.
#[derive(Debug, Clone)]
pub struct CliArgs {
    pub command: Command,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

type Entries = BTreeMap<String, (Origin, String)>;

fn split_entry(text: &str, origin: Origin) -> Result<Option<(String, String)>, ConfigError> {
    let text = text.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
        origin,
        message: format!("expected 'key = value', found '{text}'"),
    })?;
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(ConfigError::Syntax {
            origin,
            message: format!("malformed key '{key}'"),
        });
    }
    if value.is_empty() {
        return Err(ConfigError::Syntax {
            origin,
            message: format!("empty value for '{key}'"),
        });
    }
    if !KEYS.contains(&key) {
        return Err(ConfigError::UnknownKey {
            origin,
            key: key.to_string(),
        });
    }
    Ok(Some((key.to_string(), value.to_string())))
}

/// Read `path` and resolve it against the command line. Relative `f_file`
/// and `out` paths in the file are taken relative to the file's directory.
pub fn load_config(path: &Path, cli: &CliArgs) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base, cli)
}

pub fn parse_config(text: &str, base: &Path, cli: &CliArgs) -> Result<RunConfig, ConfigError> {
    let mut entries = Entries::new();
    for (i, line) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        if let Some((key, value)) = split_entry(line, origin)? {
            if let Some((first, _)) = entries.get(&key) {
                return Err(ConfigError::Duplicate {
                    origin,
                    key,
                    first: *first,
                });
            }
            entries.insert(key, (origin, value));
        }
    }

    if let Some((_, file_cmd)) = entries.get("command") {
        if file_cmd != cli.command.name() {
            return Err(ConfigError::Conflict {
                key: "command",
                file: file_cmd.clone(),
                flag: cli.command.name().to_string(),
            });
        }
    }
    if let (Some((_, file_out)), Some(flag)) = (entries.get("out"), &cli.out) {
        if absolute(&base.join(file_out)) != absolute(flag) {
            return Err(ConfigError::Conflict {
                key: "out",
                file: file_out.clone(),
                flag: flag.display().to_string(),
            });
        }
    }

    for (i, o) in cli.overrides.iter().enumerate() {
        let origin = Origin::Override(i + 1);
        match split_entry(o, origin)? {
            Some((key, _)) if key == "command" => {
                return Err(ConfigError::Syntax {
                    origin,
                    message: "the command is set by the subcommand".into(),
                })
            }
            Some((key, value)) => {
                entries.insert(key, (origin, value));
            }
            None => {
                return Err(ConfigError::Syntax {
                    origin,
                    message: "empty override".into(),
                })
            }
        }
    }

    let r = Reader { entries: &entries };
    let defaults = ContinuationSchedule::default();
    let newton_defaults = defaults.newton;
    let obstacle_defaults = ObstacleSettings::default();
    let tol_defaults = VerifyTolerances::default();

    let f = match (entries.get("f"), entries.get("f_file")) {
        (Some(_), Some((origin, _))) => {
            return Err(ConfigError::Invalid {
                origin: *origin,
                key: "f_file".into(),
                message: "set either 'f' or 'f_file', not both".into(),
            })
        }
        (Some((origin, e)), None) => {
            Source::parse(e).map_err(|err| ConfigError::Invalid {
                origin: *origin,
                key: "f".into(),
                message: err.to_string(),
            })?;
            Some(SourceSpec::Expr(e.clone()))
        }
        (None, Some((origin, p))) => {
            let path = absolute(&base.join(p));
            if !path.is_file() {
                return Err(ConfigError::Invalid {
                    origin: *origin,
                    key: "f_file".into(),
                    message: format!("no such file {}", path.display()),
                });
            }
            Some(SourceSpec::Csv(path))
        }
        (None, None) => None,
    };

    let out = match (&cli.out, entries.get("out")) {
        (Some(flag), _) => absolute(flag),
        (None, Some((_, p))) => absolute(&base.join(p)),
        (None, None) => absolute(Path::new("out")),
    };

    let cfg = RunConfig {
        command: cli.command,
        domain: r.opt("domain", |s| s.parse::<Domain>().map_err(|e| e.to_string()))?,
        beta: r.opt("beta", parse_f64)?,
        f,
        m: r.get("m", 129, parse_usize)?,
        schedule: ContinuationSchedule {
            n0: r.get("n0", defaults.n0, parse_f64)?,
            growth: r.get("growth", defaults.growth, parse_f64)?,
            n_max: r.get("n_max", defaults.n_max, parse_f64)?,
            interior_tol: r.get("interior_tol", defaults.interior_tol, parse_f64)?,
            margin: r.get("margin", defaults.margin, |s| {
                if s == "auto" {
                    Ok(None)
                } else {
                    parse_f64(s).map(Some)
                }
            })?,
            limit_solve: r.get("limit_solve", defaults.limit_solve, parse_bool)?,
            newton: singular_elliptic::solver::NewtonSettings {
                tol: r.get("newton_tol", newton_defaults.tol, parse_f64)?,
                max_iters: r.get("newton_max_iters", newton_defaults.max_iters, parse_usize)?,
                damping: r.get("damping", newton_defaults.damping, parse_f64)?,
            },
        },
        out,
        seed: r.get("seed", DEFAULT_SEED, |s| {
            s.parse::<u64>().map_err(|e| e.to_string())
        })?,
        k: r.get("k", 1e4, parse_f64)?,
        obstacle: ObstacleSettings {
            tol: r.get("obstacle_tol", obstacle_defaults.tol, parse_f64)?,
            max_iters: r.get(
                "obstacle_max_iters",
                obstacle_defaults.max_iters,
                parse_usize,
            )?,
        },
        suite: r.get("suite", Suite::Config, |s| match s {
            "config" => Ok(Suite::Config),
            "standard" => Ok(Suite::Standard),
            _ => Err("expected 'config' or 'standard'".into()),
        })?,
        checks: r.get("checks", None, parse_checks)?,
        tolerances: VerifyTolerances {
            uniqueness: r.get("uniqueness_tol", tol_defaults.uniqueness, parse_f64)?,
            comparison: r.get("comparison_tol", tol_defaults.comparison, parse_f64)?,
            symmetry: r.get("symmetry_tol", tol_defaults.symmetry, parse_f64)?,
            scaling: r.get("scaling_tol", tol_defaults.scaling, parse_f64)?,
            boundary: r.get("boundary_tol", tol_defaults.boundary, parse_f64)?,
            certificate: r.get("certificate_tol", tol_defaults.certificate, parse_f64)?,
        },
        lambda: r.get("lambda", 3.0, parse_f64)?,
        axes: r.get("axes", vec![Axis::X], parse_axes)?,
        ladder: r.get("ladder", vec![65, 129, 257, 513], |s| {
            parse_list(s, parse_usize)
        })?,
        pairs: r.get("pairs", 20, parse_usize)?,
        eps: r.get("eps", 0.05, parse_f64)?,
        tau: r.get("tau", 1.0, parse_f64)?,
        sweep_beta: r.get("sweep_beta", Vec::new(), |s| parse_list(s, parse_f64))?,
        sweep_m: r.get("sweep_m", Vec::new(), |s| parse_list(s, parse_usize))?,
        sweep_growth: r.get("sweep_growth", Vec::new(), |s| parse_list(s, parse_f64))?,
        timing: r.get("timing", false, parse_bool)?,
    };
    validate(&cfg, &entries)?;
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl Reader<'_> {
    fn get<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((origin, v)) => parse(v).map_err(|message| ConfigError::Invalid {
                origin: *origin,
                key: key.to_string(),
                message,
            }),
        }
    }

    fn opt<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        self.get(key, None, |s| parse(s).map(Some))
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse()
        .map_err(|_| format!("'{s}' is not a nonnegative integer"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("'{s}' is not 'true' or 'false'")),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',').map(|p| item(p.trim())).collect()
}

fn parse_axes(s: &str) -> Result<Vec<Axis>, String> {
    let axes: Vec<Axis> = s
        .chars()
        .map(|c| match c {
            'x' => Ok(Axis::X),
            'y' => Ok(Axis::Y),
            _ => Err(format!("'{s}' is not a combination of 'x' and 'y'")),
        })
        .collect::<Result<_, _>>()?;
    if axes.is_empty() {
        return Err("no axis given".into());
    }
    Ok(axes)
}

fn parse_checks(s: &str) -> Result<CheckSelection, String> {
    if s == "auto" {
        return Ok(None);
    }
    let mut out = parse_list(s, |p| {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == p)
            .ok_or_else(|| format!("unknown check '{p}'"))
    })?;
    out.sort();
    out.dedup();
    Ok(Some(out))
}

fn validate(cfg: &RunConfig, entries: &Entries) -> Result<(), ConfigError> {
    let invalid = |key: &str, message: String| {
        let origin = entries.get(key).map(|e| e.0).unwrap_or(Origin::Line(0));
        Err(ConfigError::Invalid {
            origin,
            key: key.to_string(),
            message,
        })
    };
    if let Some(beta) = cfg.beta {
        if !(beta > 0.0) {
            return invalid("beta", format!("beta = {beta} must be positive"));
        }
    }
    if cfg.m < 3 {
        return invalid("m", format!("m = {} must be at least 3", cfg.m));
    }
    let s = &cfg.schedule;
    if !(s.n0 >= 1.0) {
        return invalid("n0", "n0 must be at least 1".into());
    }
    if !(s.growth > 1.0) {
        return invalid("growth", "growth must exceed 1".into());
    }
    if !(s.n_max >= s.n0) {
        return invalid("n_max", "n_max must be at least n0".into());
    }
    if !(s.interior_tol > 0.0) {
        return invalid("interior_tol", "interior_tol must be positive".into());
    }
    if !(s.newton.tol > 0.0) {
        return invalid("newton_tol", "newton_tol must be positive".into());
    }
    if !(s.newton.damping > 0.0 && s.newton.damping < 1.0) {
        return invalid("damping", "damping must lie in (0, 1)".into());
    }
    if s.newton.max_iters == 0 {
        return invalid(
            "newton_max_iters",
            "newton_max_iters must be positive".into(),
        );
    }
    if s.margin.is_some_and(|m| !(m >= 0.0)) {
        return invalid("margin", "margin must be nonnegative".into());
    }
    if !(cfg.k >= 1.0) {
        return invalid("k", "k must be at least 1".into());
    }
    if !(cfg.lambda > 0.0) {
        return invalid("lambda", "lambda must be positive".into());
    }
    if !(cfg.eps > 0.0) {
        return invalid("eps", "eps must be positive".into());
    }
    if !(cfg.tau > 0.0) {
        return invalid("tau", "tau must be positive".into());
    }
    if let Some(b) = cfg.sweep_beta.iter().find(|b| !(**b > 0.0)) {
        return invalid("sweep_beta", format!("beta = {b} must be positive"));
    }
    if cfg.sweep_growth.iter().any(|g| !(*g > 1.0)) {
        return invalid("sweep_growth", "every growth factor must exceed 1".into());
    }
    let needs_problem = !(cfg.command == Command::Verify && cfg.suite == Suite::Standard);
    if needs_problem {
        if cfg.domain.is_none() {
            return Err(ConfigError::Missing("domain"));
        }
        if cfg.beta.is_none() && !(cfg.command == Command::Sweep && !cfg.sweep_beta.is_empty()) {
            return Err(ConfigError::Missing("beta"));
        }
        if cfg.f.is_none() {
            return Err(ConfigError::Missing("f"));
        }
    }
    Ok(())
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    /// The resolved configuration in the file format. Parsing it back with
    /// the same subcommand reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut lines: Vec<(&str, String)> = vec![("command", self.command.name().into())];
        if let Some(d) = &self.domain {
            lines.push(("domain", d.to_string()));
        }
        if let Some(b) = self.beta {
            lines.push(("beta", b.to_string()));
        }
        match &self.f {
            Some(SourceSpec::Expr(e)) => lines.push(("f", e.clone())),
            Some(SourceSpec::Csv(p)) => lines.push(("f_file", p.display().to_string())),
            None => {}
        }
        let s = &self.schedule;
        let t = &self.tolerances;
        lines.extend([
            ("m", self.m.to_string()),
            ("n0", s.n0.to_string()),
            ("growth", s.growth.to_string()),
            ("n_max", s.n_max.to_string()),
            ("interior_tol", s.interior_tol.to_string()),
            ("margin", s.margin.map_or("auto".into(), |m| m.to_string())),
            ("limit_solve", s.limit_solve.to_string()),
            ("newton_tol", s.newton.tol.to_string()),
            ("newton_max_iters", s.newton.max_iters.to_string()),
            ("damping", s.newton.damping.to_string()),
            ("out", absolute(&self.out).display().to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("obstacle_tol", self.obstacle.tol.to_string()),
            ("obstacle_max_iters", self.obstacle.max_iters.to_string()),
            (
                "suite",
                match self.suite {
                    Suite::Config => "config".into(),
                    Suite::Standard => "standard".into(),
                },
            ),
            (
                "checks",
                match &self.checks {
                    None => "auto".into(),
                    Some(c) => c.iter().map(|c| c.name()).collect::<Vec<_>>().join(", "),
                },
            ),
            ("uniqueness_tol", t.uniqueness.to_string()),
            ("comparison_tol", t.comparison.to_string()),
            ("symmetry_tol", t.symmetry.to_string()),
            ("scaling_tol", t.scaling.to_string()),
            ("boundary_tol", t.boundary.to_string()),
            ("certificate_tol", t.certificate.to_string()),
            ("lambda", self.lambda.to_string()),
            (
                "axes",
                self.axes
                    .iter()
                    .map(|a| if *a == Axis::X { 'x' } else { 'y' })
                    .collect(),
            ),
            ("ladder", join(&self.ladder)),
            ("pairs", self.pairs.to_string()),
            ("eps", self.eps.to_string()),
            ("tau", self.tau.to_string()),
        ]);
        for (key, v) in [
            ("sweep_beta", join(&self.sweep_beta)),
            ("sweep_growth", join(&self.sweep_growth)),
        ] {
            if !v.is_empty() {
                lines.push((key, v));
            }
        }
        if !self.sweep_m.is_empty() {
            lines.push(("sweep_m", join(&self.sweep_m)));
        }
        lines.push(("timing", self.timing.to_string()));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
