use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use multiphase::config::{load_config, ConfigError, RunConfig};
use multiphase::energy::{
    estimate_embedding_constants, hardy_check_lower, hardy_check_upper, RegularizationPolicy,
};
use multiphase::expr;
use multiphase::grid::{GridSpec, ScalarField};
use multiphase::nehari::{fibering_scan, lambda_bounds, project_to_nehari, FiberError};
use multiphase::report::{fmt_f64, kv_block, write_text, CsvWriter};
use multiphase::solver::{lambda_sweep, solve_two, LogRow, SolveReport};
use multiphase::spaces::{validate, ExponentSet};

/// Two-branch Nehari solver for singular multi-phase variable-exponent
/// Dirichlet problems on Cartesian grids.
#[derive(Parser)]
#[command(name = "multiphase", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the structural hypotheses and print exponent bounds and the
    /// analytic lambda thresholds.
    Validate { config: PathBuf },
    /// Scan the fibering map along one direction and locate its critical
    /// points.
    Fibering {
        config: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Direction as an expression of x (sampled, made non-negative,
        /// zeroed outside the interior). Default: centered parabolic bump.
        #[arg(long)]
        direction: Option<String>,
    },
    /// Minimize the energy on both Nehari branches and write the two fields.
    Solve {
        config: PathBuf,
        /// Overrides the single `run.lambda` from the config.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run solve over the `run.lambda` list and tabulate both branches.
    Sweep { config: PathBuf },
    /// Check the Hardy-type inequality (both directions) on a field battery.
    Hardy {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        battery: usize,
    },
}

enum CliError {
    Config(String),
    Hypothesis,
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hypothesis => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(msg) => eprintln!("config error: {msg}"),
                CliError::Hypothesis => eprintln!("hypothesis validation failed"),
                CliError::Runtime(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(e.code())
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    grid: Arc<GridSpec>,
    es: ExponentSet,
    out_dir: PathBuf,
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let cfg = load_config(path)?;
    let grid = cfg.build_grid()?;
    let es = cfg.exponent_set(&grid)?;
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    write_text(&out_dir.join("manifest.txt"), &kv_block(&cfg.manifest_kv()))?;
    Ok(Loaded { cfg, grid, es, out_dir })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Validate { config } => cmd_validate(&config),
        Cmd::Fibering { config, lambda, direction } => cmd_fibering(&config, lambda, direction),
        Cmd::Solve { config, lambda } => cmd_solve(&config, lambda),
        Cmd::Sweep { config } => cmd_sweep(&config),
        Cmd::Hardy { config, battery } => cmd_hardy(&config, battery),
    }
}

fn hypothesis_block(es: &ExponentSet) -> (String, bool) {
    let report = validate(es);
    let mut kv = report.to_kv();
    for (k, v) in lambda_bounds(es).to_kv() {
        kv.push((format!("lambda_bounds.{k}"), v));
    }
    (kv_block(&kv), report.all_pass())
}

fn cmd_validate(config: &Path) -> Result<(), CliError> {
    let loaded = load(config)?;
    let (text, pass) = hypothesis_block(&loaded.es);
    print!("{text}");
    write_text(&loaded.out_dir.join("hypotheses.txt"), &text)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Hypothesis)
    }
}

fn direction_field(
    loaded: &Loaded,
    direction: Option<String>,
) -> Result<ScalarField, CliError> {
    match direction {
        Some(src) => {
            let e = expr::parse(&src)
                .map_err(|err| CliError::Config(format!("--direction: {err}")))?;
            let mut f = ScalarField::sample_expr(&loaded.grid, &e)
                .map_err(|err| CliError::Runtime(format!("--direction: {err}")))?;
            f.abs_in_place();
            f.zero_non_interior();
            Ok(f)
        }
        None => Ok(multiphase::battery::bump_battery(&loaded.grid, 1, loaded.cfg.seed)
            .remove(0)),
    }
}

fn cmd_fibering(config: &Path, lambda: f64, direction: Option<String>) -> Result<(), CliError> {
    let loaded = load(config)?;
    let regpol = loaded.cfg.solver.regpol(&loaded.grid);
    let u = direction_field(&loaded, direction)?;

    let norm = multiphase::spaces::sobolev_norm(&u, &loaded.es);
    if !(norm > 0.0) {
        return Err(CliError::Runtime("direction is zero on the interior".into()));
    }
    let t_grid: Vec<f64> = {
        let lo = (1e-6 / norm).ln();
        let hi = (1e6 / norm).ln();
        (0..512).map(|k| (lo + (hi - lo) * k as f64 / 511.0).exp()).collect()
    };
    let rows = fibering_scan(&u, &loaded.es, lambda, &t_grid, &regpol)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = CsvWriter::new("t,phi,phi1");
    for r in &rows {
        csv.row(&[fmt_f64(r.t), fmt_f64(r.phi), fmt_f64(r.phi1)]);
    }
    write_text(&loaded.out_dir.join("fibering.csv"), &csv.finish())?;

    let mut kv: Vec<(String, String)> = vec![
        ("lambda".into(), fmt_f64(lambda)),
        ("direction_norm".into(), fmt_f64(norm)),
    ];
    match project_to_nehari(&u, &loaded.es, lambda, &regpol) {
        Ok(res) => {
            kv.push(("roots".into(), res.roots.len().to_string()));
            for (k, root) in res.roots.iter().enumerate() {
                kv.push((format!("root{k}.t"), fmt_f64(root.t)));
                kv.push((format!("root{k}.phi"), fmt_f64(root.phi)));
                kv.push((format!("root{k}.phi1"), fmt_f64(root.phi1)));
                kv.push((format!("root{k}.phi2"), fmt_f64(root.phi2)));
                kv.push((format!("root{k}.branch"), root.branch.label().to_string()));
            }
            for (k, v) in lambda_bounds(&loaded.es).to_kv() {
                kv.push((format!("lambda_bounds.{k}"), v));
            }
            let text = kv_block(&kv);
            print!("{text}");
            write_text(&loaded.out_dir.join("roots.txt"), &text)?;
            Ok(())
        }
        Err(FiberError::NoRoot { .. }) => {
            kv.push(("roots".into(), "0".to_string()));
            let text = kv_block(&kv);
            print!("{text}");
            write_text(&loaded.out_dir.join("roots.txt"), &text)?;
            Err(CliError::Runtime(
                "no fibering critical point on the scan bracket (scan written for diagnosis)"
                    .into(),
            ))
        }
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}

fn runlog_csv(rows: &[LogRow]) -> String {
    let mut csv = CsvWriter::new("iter,lambda,rho_grad,hardy,source,singular,total,nehari_residual");
    for r in rows {
        csv.row(&[
            r.iter.to_string(),
            fmt_f64(r.lambda),
            fmt_f64(r.breakdown.rho_grad),
            fmt_f64(r.breakdown.hardy),
            fmt_f64(r.breakdown.source),
            fmt_f64(r.breakdown.singular),
            fmt_f64(r.breakdown.total),
            fmt_f64(r.nehari_residual),
        ]);
    }
    csv.finish()
}

fn write_solve_outputs(out_dir: &Path, rep: &SolveReport) -> Result<(), CliError> {
    write_text(&out_dir.join("report.txt"), &kv_block(&rep.to_kv()))?;
    let mut buf = Vec::new();
    rep.u_plus.write_csv(&mut buf)?;
    write_text(&out_dir.join("u_plus.csv"), &String::from_utf8(buf).unwrap())?;
    let mut buf = Vec::new();
    rep.u_minus.write_csv(&mut buf)?;
    write_text(&out_dir.join("u_minus.csv"), &String::from_utf8(buf).unwrap())?;
    write_text(&out_dir.join("runlog_plus.csv"), &runlog_csv(&rep.trace_plus))?;
    write_text(&out_dir.join("runlog_minus.csv"), &runlog_csv(&rep.trace_minus))?;
    Ok(())
}

fn single_lambda(cfg: &RunConfig, flag: Option<f64>) -> Result<f64, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match cfg.lambdas.as_slice() {
        [v] => Ok(*v),
        [] => Err(CliError::Config(
            "no lambda: pass --lambda or set a single `run.lambda`".into(),
        )),
        _ => Err(CliError::Config(
            "`run.lambda` is a list; pass --lambda or use the sweep command".into(),
        )),
    }
}

fn gate_hypotheses(loaded: &Loaded) -> Result<(), CliError> {
    let report = validate(&loaded.es);
    if !report.all_pass() {
        let (text, _) = hypothesis_block(&loaded.es);
        eprint!("{text}");
        return Err(CliError::Hypothesis);
    }
    Ok(())
}

fn cmd_solve(config: &Path, lambda: Option<f64>) -> Result<(), CliError> {
    let loaded = load(config)?;
    gate_hypotheses(&loaded)?;
    let lambda = single_lambda(&loaded.cfg, lambda)?;
    let bounds = lambda_bounds(&loaded.es);
    if lambda >= bounds.lambda_star_analytic {
        eprintln!(
            "warning: lambda {lambda:?} is at or above lambda_star_analytic {:?}; \
             the two-branch structure is not guaranteed",
            bounds.lambda_star_analytic
        );
    }
    let rep = solve_two(&loaded.es, lambda, &loaded.cfg.solver)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_solve_outputs(&loaded.out_dir, &rep)?;
    println!("m_plus={}", fmt_f64(rep.m_plus));
    println!("m_minus={}", fmt_f64(rep.m_minus));
    println!("delta_obs={}", fmt_f64(rep.delta_obs));
    Ok(())
}

fn cmd_sweep(config: &Path) -> Result<(), CliError> {
    let loaded = load(config)?;
    gate_hypotheses(&loaded)?;
    let lambdas = &loaded.cfg.lambdas;
    if lambdas.is_empty() {
        return Err(CliError::Config("sweep needs a `run.lambda` list".into()));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("`run.lambda` list must be strictly increasing".into()));
    }
    let table = lambda_sweep(&loaded.es, lambdas, &loaded.cfg.solver);
    let mut csv = CsvWriter::new(
        "lambda,m_plus,m_minus,res_plus,res_minus,found_plus,found_minus,delta_obs",
    );
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), fmt_f64);
    for row in &table.rows {
        csv.row(&[
            fmt_f64(row.lambda),
            opt(row.m_plus),
            opt(row.m_minus),
            opt(row.res_plus),
            opt(row.res_minus),
            (row.found_plus as u8).to_string(),
            (row.found_minus as u8).to_string(),
            opt(row.delta_obs),
        ]);
    }
    write_text(&loaded.out_dir.join("sweep.csv"), &csv.finish())?;
    let kv = vec![
        (
            "lambda_star_empirical".to_string(),
            table.lambda_star_empirical.map_or("none".into(), fmt_f64),
        ),
        ("lambda_star_analytic".to_string(), fmt_f64(table.lambda_star_analytic)),
    ];
    let text = kv_block(&kv);
    print!("{text}");
    write_text(&loaded.out_dir.join("sweep_summary.txt"), &text)?;
    Ok(())
}

fn cmd_hardy(config: &Path, battery: usize) -> Result<(), CliError> {
    let loaded = load(config)?;
    let regpol = RegularizationPolicy::with_eps_x(
        &loaded.grid,
        loaded.cfg.solver.eps_x,
        loaded.cfg.solver.eps_u_rel,
    );
    let emb = estimate_embedding_constants(&loaded.es, &regpol, 2 * battery, loaded.cfg.seed ^ 1)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rng = multiphase::battery::rng_for(loaded.cfg.seed);
    let mut csv =
        CsvWriter::new("k,sobolev_norm,upper_lhs,upper_rhs,upper_pass,lower_lhs,lower_rhs,lower_pass");
    let mut upper_fail = 0usize;
    let mut lower_fail = 0usize;
    for k in 0..battery {
        use rand::Rng;
        let mut u = multiphase::battery::random_smooth_dirichlet(&loaded.grid, &mut rng);
        u.abs_in_place();
        u.zero_non_interior();
        let scale: f64 = rng.random_range(-1.5..1.5);
        let u = u.scaled(10f64.powf(scale));
        let up = hardy_check_upper(&u, &loaded.es, &regpol, &emb)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let lo = hardy_check_lower(&u, &loaded.es, &regpol);
        if !up.pass {
            upper_fail += 1;
        }
        if !lo.pass {
            lower_fail += 1;
        }
        csv.row(&[
            k.to_string(),
            fmt_f64(up.sobolev_norm),
            fmt_f64(up.lhs),
            fmt_f64(up.rhs),
            (up.pass as u8).to_string(),
            fmt_f64(lo.lhs),
            fmt_f64(lo.rhs),
            (lo.pass as u8).to_string(),
        ]);
    }
    write_text(&loaded.out_dir.join("hardy.csv"), &csv.finish())?;
    let kv = vec![
        ("battery".to_string(), battery.to_string()),
        ("estimator_battery".to_string(), emb.battery.to_string()),
        ("c_hat1".to_string(), fmt_f64(emb.c_hat1)),
        ("c_hat2".to_string(), fmt_f64(emb.c_hat2)),
        ("c_hat_m".to_string(), fmt_f64(emb.c_hat_m)),
        ("upper_failures".to_string(), upper_fail.to_string()),
        ("lower_failures".to_string(), lower_fail.to_string()),
    ];
    let text = kv_block(&kv);
    print!("{text}");
    write_text(&loaded.out_dir.join("hardy_summary.txt"), &text)?;
    Ok(())
}
