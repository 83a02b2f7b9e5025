//! Run configuration: sectioned key=value text files (INI style) with quoted
//! expression strings, plus the built-in `section4` preset.
//!
//! ```text
//! [grid]
//! n = 33            # nodes per axis (required)
//! dim = 3           # required unless a preset supplies it
//! lo = -1
//! hi = 1
//! domain = "chi_ball(0,0,0,1)"
//!
//! [exponents]
//! preset = "section4"     # or the eleven expression keys p,q,r,s,beta,
//!                         # alpha,gamma,mu1,mu2,m1,m2
//!
//! [solver]
//! battery = 4             # all keys optional, defaults documented in README
//!
//! [run]
//! lambda = 1e-4           # single value or whitespace-separated list
//! seed = 42
//! out_dir = "out"
//! ```
//!
//! Full-line comments start with `#` or `;`. Values may be double-quoted;
//! quoting is required when a value contains `#`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{self, ParseError};
use crate::grid::{build_grid, GridError, GridSpec};
use crate::solver::SolverConfig;
use crate::spaces::{ExponentExprs, ExponentSet, SpacesError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing key `{section}.{key}`")]
    Missing { section: &'static str, key: &'static str },
    #[error("bad value for `{section}.{key}`: {msg}")]
    BadValue { section: &'static str, key: &'static str, msg: String },
    #[error("unknown key `{section}.{key}`")]
    Unknown { section: String, key: String },
    #[error("`{key}` may not be set together with `exponents.preset`")]
    PresetConflict { key: String },
    #[error("unknown preset `{0}` (available: section4)")]
    UnknownPreset(String),
    #[error("expression for `{key}` does not parse: {source}")]
    Expr {
        key: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub domain: String,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub exponents: ExponentExprs,
    pub preset: Option<String>,
    pub solver: SolverConfig,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

/// The built-in preset: the concrete exponents and weights of the worked
/// ball-domain instance (dim 3, domain `chi_ball(0,0,0,1)` on [-1,1]^3).
/// `alpha` and `gamma` are constants chosen so the conjugate-exponent
/// conditions hold on the unit ball.
pub fn section4_exprs() -> ExponentExprs {
    ExponentExprs {
        p: "2+absx/3".into(),
        q: "2.5+absx/3".into(),
        r: "3+absx/3".into(),
        s: "4.8+sin(3.141592653589793*absx*absx)".into(),
        beta: "0.5+0.4*absx".into(),
        alpha: "1.1".into(),
        gamma: "6".into(),
        mu1: "1/(1+absx)".into(),
        mu2: "1/(2+absx)".into(),
        m1: "chi_ball(0,0,0,0.5)".into(),
        m2: "exp(-absx*absx)".into(),
    }
}

const SECTION4_DOMAIN: &str = "chi_ball(0,0,0,1)";

// ------------------------- raw INI parsing -------------------------

struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn parse_ini(text: &str) -> Result<RawConfig, ConfigError> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                line: lineno + 1,
                msg: "unterminated section header".into(),
            })?;
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
            line: lineno + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        if current.is_empty() {
            return Err(ConfigError::Parse {
                line: lineno + 1,
                msg: "key outside of any [section]".into(),
            });
        }
        let key = key.trim().to_string();
        let mut value = value.trim().to_string();
        if value.starts_with('"') {
            if value.len() < 2 || !value.ends_with('"') {
                return Err(ConfigError::Parse {
                    line: lineno + 1,
                    msg: "unterminated quoted value".into(),
                });
            }
            value = value[1..value.len() - 1].to_string();
        }
        let section = sections.entry(current.clone()).or_default();
        if section.insert(key.clone(), value).is_some() {
            return Err(ConfigError::Parse {
                line: lineno + 1,
                msg: format!("duplicate key `{current}.{key}`"),
            });
        }
    }
    Ok(RawConfig { sections })
}

struct SectionReader<'a> {
    name: &'static str,
    map: Option<&'a BTreeMap<String, String>>,
    taken: Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(raw: &'a RawConfig, name: &'static str) -> Self {
        SectionReader { name, map: raw.sections.get(name), taken: Vec::new() }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a str> {
        self.taken.push(key.to_string());
        self.map.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    fn require(&mut self, key: &'static str) -> Result<&'a str, ConfigError> {
        self.get(key).ok_or(ConfigError::Missing { section: self.name, key })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|e| ConfigError::BadValue {
                section: self.name,
                key,
                msg: e.to_string(),
            }),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(map) = self.map {
            for key in map.keys() {
                if !self.taken.contains(key) {
                    return Err(ConfigError::Unknown {
                        section: self.name.to_string(),
                        key: key.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

// ------------------------- typed loading -------------------------

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw = parse_ini(text)?;
    for section in raw.sections.keys() {
        if !matches!(section.as_str(), "grid" | "exponents" | "solver" | "run") {
            return Err(ConfigError::Unknown { section: section.clone(), key: String::new() });
        }
    }

    let mut exps = SectionReader::new(&raw, "exponents");
    let preset = exps.get("preset").map(|s| s.to_string());
    let exponents = match &preset {
        Some(name) => {
            if name != "section4" {
                return Err(ConfigError::UnknownPreset(name.clone()));
            }
            // preset and explicit expressions are mutually exclusive
            for key in
                ["p", "q", "r", "s", "beta", "alpha", "gamma", "mu1", "mu2", "m1", "m2"]
            {
                if exps.get(key).is_some() {
                    return Err(ConfigError::PresetConflict { key: format!("exponents.{key}") });
                }
            }
            section4_exprs()
        }
        None => ExponentExprs {
            p: exps.require("p")?.to_string(),
            q: exps.require("q")?.to_string(),
            r: exps.require("r")?.to_string(),
            s: exps.require("s")?.to_string(),
            beta: exps.require("beta")?.to_string(),
            alpha: exps.require("alpha")?.to_string(),
            gamma: exps.require("gamma")?.to_string(),
            mu1: exps.require("mu1")?.to_string(),
            mu2: exps.require("mu2")?.to_string(),
            m1: exps.require("m1")?.to_string(),
            m2: exps.require("m2")?.to_string(),
        },
    };
    exps.finish()?;

    let mut grid = SectionReader::new(&raw, "grid");
    let n = grid
        .parse::<usize>("n")?
        .ok_or(ConfigError::Missing { section: "grid", key: "n" })?;
    let (dim, lo, hi, domain) = if preset.is_some() {
        for key in ["dim", "domain"] {
            if grid.get(key).is_some() {
                return Err(ConfigError::PresetConflict { key: format!("grid.{key}") });
            }
        }
        let lo = grid.parse::<f64>("lo")?.unwrap_or(-1.0);
        let hi = grid.parse::<f64>("hi")?.unwrap_or(1.0);
        (3usize, lo, hi, SECTION4_DOMAIN.to_string())
    } else {
        let dim = grid
            .parse::<usize>("dim")?
            .ok_or(ConfigError::Missing { section: "grid", key: "dim" })?;
        let lo = grid
            .parse::<f64>("lo")?
            .ok_or(ConfigError::Missing { section: "grid", key: "lo" })?;
        let hi = grid
            .parse::<f64>("hi")?
            .ok_or(ConfigError::Missing { section: "grid", key: "hi" })?;
        let domain = grid.require("domain")?.to_string();
        (dim, lo, hi, domain)
    };
    grid.finish()?;

    // every referenced expression must parse at load time
    for (key, src) in [
        ("grid.domain", domain.as_str()),
        ("exponents.p", &exponents.p),
        ("exponents.q", &exponents.q),
        ("exponents.r", &exponents.r),
        ("exponents.s", &exponents.s),
        ("exponents.beta", &exponents.beta),
        ("exponents.alpha", &exponents.alpha),
        ("exponents.gamma", &exponents.gamma),
        ("exponents.mu1", &exponents.mu1),
        ("exponents.mu2", &exponents.mu2),
        ("exponents.m1", &exponents.m1),
        ("exponents.m2", &exponents.m2),
    ] {
        expr::parse(src).map_err(|source| ConfigError::Expr { key: key.to_string(), source })?;
    }

    let mut run = SectionReader::new(&raw, "run");
    let lambdas = match run.get("lambda") {
        None => Vec::new(),
        Some(list) => {
            let mut out = Vec::new();
            for tok in list.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| ConfigError::BadValue {
                    section: "run",
                    key: "lambda",
                    msg: format!("`{tok}` is not a number"),
                })?;
                if !(v >= 0.0) {
                    return Err(ConfigError::BadValue {
                        section: "run",
                        key: "lambda",
                        msg: "lambda must be non-negative".into(),
                    });
                }
                out.push(v);
            }
            out
        }
    };
    let seed = run.parse::<u64>("seed")?.unwrap_or(42);
    let out_dir = run.get("out_dir").map(PathBuf::from);
    run.finish()?;

    let mut solver_sec = SectionReader::new(&raw, "solver");
    let mut solver = SolverConfig { seed, ..Default::default() };
    if let Some(v) = solver_sec.parse::<usize>("max_outer_iters")? {
        solver.max_outer_iters = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("grad_tol")? {
        solver.grad_tol = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("energy_tol")? {
        solver.energy_tol = v;
    }
    if let Some(v) = solver_sec.parse::<usize>("battery")? {
        solver.battery = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("armijo_c")? {
        solver.armijo_c = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("backtrack")? {
        solver.backtrack = v;
    }
    if let Some(v) = solver_sec.parse::<usize>("max_backtracks")? {
        solver.max_backtracks = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("step_init")? {
        solver.step_init = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("eps_u_rel")? {
        solver.eps_u_rel = v;
    }
    if let Some(v) = solver_sec.parse::<f64>("eps_x")? {
        solver.eps_x = Some(v);
    }
    solver_sec.finish()?;

    let cfg = RunConfig {
        grid: GridConfig { dim, n, lo, hi, domain },
        exponents,
        preset,
        solver,
        lambdas,
        seed,
        out_dir,
    };
    validate_invariants(&cfg)?;
    Ok(cfg)
}

fn validate_invariants(cfg: &RunConfig) -> Result<(), ConfigError> {
    if cfg.grid.n < 3 {
        return Err(ConfigError::BadValue {
            section: "grid",
            key: "n",
            msg: "need at least 3 nodes per axis".into(),
        });
    }
    if !(cfg.grid.hi > cfg.grid.lo) {
        return Err(ConfigError::BadValue {
            section: "grid",
            key: "hi",
            msg: "bounding box is degenerate".into(),
        });
    }
    if cfg.solver.grad_tol <= 0.0 || cfg.solver.energy_tol <= 0.0 {
        return Err(ConfigError::BadValue {
            section: "solver",
            key: "grad_tol",
            msg: "tolerances must be positive".into(),
        });
    }
    if cfg.solver.max_outer_iters == 0 {
        return Err(ConfigError::BadValue {
            section: "solver",
            key: "max_outer_iters",
            msg: "need at least one iteration".into(),
        });
    }
    Ok(())
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<Arc<GridSpec>, ConfigError> {
        let domain = expr::parse(&self.grid.domain)
            .map_err(|source| ConfigError::Expr { key: "grid.domain".into(), source })?;
        Ok(build_grid(self.grid.dim, self.grid.n, self.grid.lo, self.grid.hi, &domain)?)
    }

    pub fn exponent_set(&self, grid: &Arc<GridSpec>) -> Result<ExponentSet, ConfigError> {
        Ok(ExponentSet::from_exprs(grid.clone(), &self.exponents)?)
    }

    /// Resolved output directory: config value, else `MULTIPHASE_OUT_DIR`,
    /// else `./out`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(env) = std::env::var("MULTIPHASE_OUT_DIR") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from("out")
    }

    /// Config echo for the manifest: every resolved value plus the pinned
    /// numeric tolerances, sufficient to reproduce a run bit for bit.
    pub fn manifest_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("grid.dim".to_string(), self.grid.dim.to_string()),
            ("grid.n".to_string(), self.grid.n.to_string()),
            ("grid.lo".to_string(), format!("{:?}", self.grid.lo)),
            ("grid.hi".to_string(), format!("{:?}", self.grid.hi)),
            ("grid.domain".to_string(), self.grid.domain.clone()),
            (
                "exponents.preset".to_string(),
                self.preset.clone().unwrap_or_else(|| "none".into()),
            ),
        ];
        for (k, v) in [
            ("p", &self.exponents.p),
            ("q", &self.exponents.q),
            ("r", &self.exponents.r),
            ("s", &self.exponents.s),
            ("beta", &self.exponents.beta),
            ("alpha", &self.exponents.alpha),
            ("gamma", &self.exponents.gamma),
            ("mu1", &self.exponents.mu1),
            ("mu2", &self.exponents.mu2),
            ("m1", &self.exponents.m1),
            ("m2", &self.exponents.m2),
        ] {
            kv.push((format!("exponents.{k}"), v.clone()));
        }
        kv.extend(self.solver.to_kv());
        let lambda_list: Vec<String> = self.lambdas.iter().map(|v| format!("{v:?}")).collect();
        kv.push(("run.lambda".to_string(), lambda_list.join(" ")));
        kv.push(("run.seed".to_string(), self.seed.to_string()));
        kv.push(("tol.luxemburg".to_string(), format!("{:?}", crate::spaces::TOL_LUX)));
        kv.push(("tol.root".to_string(), format!("{:?}", crate::nehari::TOL_ROOT)));
        kv.push(("tol.class".to_string(), format!("{:?}", crate::nehari::TOL_CLASS)));
        kv.push(("scan.points".to_string(), crate::nehari::SCAN_POINTS.to_string()));
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRESET_CFG: &str = "\
[grid]
n = 9

[exponents]
preset = \"section4\"

[run]
lambda = 1e-4
seed = 7
";

    #[test]
    fn preset_expands_to_the_worked_instance() {
        let cfg = parse_config(PRESET_CFG).unwrap();
        assert_eq!(cfg.grid.dim, 3);
        assert_eq!(cfg.grid.lo, -1.0);
        assert_eq!(cfg.grid.hi, 1.0);
        assert_eq!(cfg.grid.domain, "chi_ball(0,0,0,1)");
        assert_eq!(cfg.exponents, section4_exprs());
        assert_eq!(cfg.exponents.p, "2+absx/3");
        assert_eq!(cfg.exponents.m1, "chi_ball(0,0,0,0.5)");
        assert_eq!(cfg.lambdas, vec![1e-4]);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver.seed, 7);
        // the preset instance passes validation
        let grid = cfg.build_grid().unwrap();
        let es = cfg.exponent_set(&grid).unwrap();
        let report = crate::spaces::validate(&es);
        assert!(report.all_pass(), "{:?}", report.to_kv());
    }

    #[test]
    fn explicit_exponents_load_even_when_hypotheses_fail() {
        let text = "\
[grid]
dim = 1
n = 11
lo = 0
hi = 1
domain = \"1\"

[exponents]
p = \"3+absx\"
q = \"2\"
r = \"4\"
s = \"5\"
beta = \"0.5\"
alpha = \"1.1\"
gamma = \"6\"
mu1 = \"0\"
mu2 = \"0\"
m1 = \"1\"
m2 = \"1\"
";
        let cfg = parse_config(text).unwrap();
        let grid = cfg.build_grid().unwrap();
        let es = cfg.exponent_set(&grid).unwrap();
        let report = crate::spaces::validate(&es);
        assert!(!report.h1.pass); // q < p everywhere
    }

    #[test]
    fn preset_conflicts_and_unknown_keys_are_rejected() {
        let conflicting = format!("{PRESET_CFG}\n[exponents2]\n");
        assert!(matches!(
            parse_config(&conflicting),
            Err(ConfigError::Unknown { .. })
        ));
        let text = "\
[grid]
n = 9

[exponents]
preset = \"section4\"
p = \"2\"
";
        assert!(matches!(parse_config(text), Err(ConfigError::PresetConflict { .. })));
        let text = "\
[grid]
n = 9
dim = 3

[exponents]
preset = \"section4\"
";
        assert!(matches!(parse_config(text), Err(ConfigError::PresetConflict { .. })));
    }

    #[test]
    fn missing_file_is_a_config_error() {
        assert!(matches!(
            load_config(Path::new("/nonexistent/config.ini")),
            Err(ConfigError::Io { .. })
        ));
    }

    #[test]
    fn bad_expression_is_reported_with_its_key() {
        let text = PRESET_CFG.replace("preset = \"section4\"", "p = \"2+\"\nq = \"2\"\nr = \"3\"\ns = \"4\"\nbeta = \"0.5\"\nalpha = \"1.1\"\ngamma = \"6\"\nmu1 = \"0\"\nmu2 = \"0\"\nm1 = \"1\"\nm2 = \"1\"");
        let text = text.replace("n = 9", "n = 9\ndim = 3\nlo = -1\nhi = 1\ndomain = \"1\"");
        match parse_config(&text) {
            Err(ConfigError::Expr { key, .. }) => assert_eq!(key, "exponents.p"),
            other => panic!("expected Expr error, got {other:?}"),
        }
    }

    #[test]
    fn lambda_list_parses() {
        let text = PRESET_CFG.replace("lambda = 1e-4", "lambda = 1e-5 1e-4 1e-3");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.lambdas, vec![1e-5, 1e-4, 1e-3]);
    }

    #[test]
    fn manifest_echo_is_deterministic() {
        let a = parse_config(PRESET_CFG).unwrap().manifest_kv();
        let b = parse_config(PRESET_CFG).unwrap().manifest_kv();
        assert_eq!(a, b);
    }
}
