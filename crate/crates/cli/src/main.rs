//! Command line front end: classify parameter regimes, simulate filtered
//! paths, run the 1-D and 2-D solvers, extract boundaries, value by
//! independent oracles, and run the invariant check suite.
//!
//! Every run reads a TOML config (see `RunConfig` in the library), applies
//! `-O section.key=value` overrides and the dedicated flags, and writes its
//! outputs as CSV files named `<subcommand>-<confighash>...` under the output
//! directory. Each output embeds the config hash and tool version in a
//! header comment. Exit codes: 0 success, 1 config error, 2 solver error,
//! 3 check-suite failure.
//!
//! Worker count is controlled by the `RAYON_NUM_THREADS` environment
//! variable; results do not depend on it.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use stockloan::boundary1d::{extract_boundary, solve_vi_1d, DriftBranch, SolverOptions};
use stockloan::config::RunConfig;
use stockloan::error::Error as CoreError;
use stockloan::filter;
use stockloan::grid::Grid1D;
use stockloan::mc_oracle::{european_value, lattice_value, lsmc_value, BasisSpec};
use stockloan::model::{classify_regime, theoretical_constraints};
use stockloan::properties::{
    check_belief_section_unimodal, check_boundary_monotonicity, check_bounds, check_lipschitz,
    check_monotone_convex, check_regions, write_reports, CheckReport, FieldView,
};
use stockloan::vi2d::{extract_boundaries, refine_epsilon, solve_vi_2d, ValueSurface};
use stockloan::ModelParams;

#[derive(Parser)]
#[command(
    name = "stockloan",
    version,
    about = "Stock-loan redemption valuation under bull/bear drift uncertainty"
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(short, long, global = true, default_value = "stockloan.toml")]
    config: PathBuf,

    /// Override a config value, e.g. -O model.a=0.12 (repeatable).
    #[arg(
        short = 'O',
        long = "override",
        global = true,
        value_name = "KEY=VALUE"
    )]
    overrides: Vec<String>,

    /// Random seed (overrides mc.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Contact tolerance relative to K (overrides solver.tol).
    #[arg(long, global = true)]
    tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the parameter regime and its analytic region constraints.
    Classify,
    /// Simulate filtered price/belief paths and export them as CSV.
    Simulate,
    /// Solve the bear-face 1-D problem; dump the curve and its boundary.
    Solve1d,
    /// Solve the 2-D problem (with regularization refinement) and dump the surface.
    Solve2d,
    /// Solve the 2-D problem and dump the extracted free boundaries.
    Boundaries,
    /// Run the European, regression Monte Carlo, and lattice oracles.
    Oracle,
    /// Run the full invariant check suite; exit 3 on any failure.
    Check,
    /// Write boundary CSVs shaped for plotting t-sections of the geometry.
    EmitFigure,
}

/// Config error (exit 1) vs solver error (exit 2) vs check failure (exit 3).
enum RunError {
    Config(String),
    Solver(String),
    Checks,
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Domain(_) | CoreError::Grid(_) => RunError::Config(e.to_string()),
            _ => RunError::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Solver(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(RunError::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Checks) => {
            eprintln!("check suite reported failures");
            ExitCode::from(3)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    params: ModelParams,
    hash: String,
    out_dir: PathBuf,
}

impl Ctx {
    fn out_path(&self, stem: &str) -> PathBuf {
        self.out_dir.join(format!("{stem}-{}.csv", self.hash))
    }

    fn create(&self, stem: &str) -> Result<(PathBuf, fs::File), RunError> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_path(stem);
        let mut file = fs::File::create(&path)?;
        writeln!(
            file,
            "# config={} version={}",
            self.hash,
            env!("CARGO_PKG_VERSION")
        )?;
        Ok((path, file))
    }

    fn opts(&self) -> SolverOptions {
        SolverOptions {
            rho: Some(self.cfg.rho(&self.params)),
            contact_tol: self.cfg.solver.tol,
            ..SolverOptions::default()
        }
    }
}

fn load_ctx(cli: &Cli) -> Result<Ctx, RunError> {
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| RunError::Config(e.to_string()))?;
    for ov in &cli.overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("override `{ov}` is not KEY=VALUE")))?;
        cfg.apply_override(key, value)
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.display().to_string();
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = tol;
    }
    let params = cfg.params().map_err(|e| RunError::Config(e.to_string()))?;
    // Hash the content-relevant config only: where outputs land must not
    // change what they contain.
    let mut canonical_cfg = cfg.clone();
    canonical_cfg.output.dir = String::new();
    let canonical = canonical_cfg.to_toml_string();
    let digest = Sha256::digest(canonical.as_bytes());
    let hash = digest[..6]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let out_dir = PathBuf::from(&cfg.output.dir);
    Ok(Ctx {
        cfg,
        params,
        hash,
        out_dir,
    })
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let ctx = load_ctx(cli)?;
    match cli.command {
        Command::Classify => classify(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Solve1d => solve1d(&ctx),
        Command::Solve2d => solve2d(&ctx),
        Command::Boundaries => boundaries(&ctx),
        Command::Oracle => oracle(&ctx),
        Command::Check => check(&ctx),
        Command::EmitFigure => emit_figure(&ctx),
    }
}

fn classify(ctx: &Ctx) -> Result<(), RunError> {
    let case = classify_regime(&ctx.params);
    let constraints = theoretical_constraints(&case, &ctx.params);
    let mut lines = vec![case.to_string()];
    for c in &constraints {
        lines.push(c.to_string());
    }
    for line in &lines {
        println!("{line}");
    }
    let (path, mut file) = ctx.create("classify")?;
    for line in &lines {
        writeln!(file, "{line}")?;
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn mc_point(ctx: &Ctx) -> (f64, f64) {
    let x0 = if ctx.cfg.mc.x0 > 0.0 {
        ctx.cfg.mc.x0
    } else {
        ctx.params.k
    };
    (x0, ctx.cfg.mc.pi0)
}

fn simulate(ctx: &Ctx) -> Result<(), RunError> {
    let (x0, pi0) = mc_point(ctx);
    let t = ctx.params.maturity;
    let n_steps = ((t * 200.0).round() as usize).max(1);
    let bundle = filter::simulate(
        &ctx.params,
        x0,
        pi0,
        t / n_steps as f64,
        n_steps,
        ctx.cfg.mc.paths,
        ctx.cfg.mc.seed,
    )?;
    let (path, mut file) = ctx.create("simulate")?;
    bundle.write_csv(&mut file)?;
    println!(
        "simulate: {} paths x {} nodes, seed {} -> {}",
        bundle.n_paths(),
        bundle.n_nodes(),
        bundle.seed(),
        path.display()
    );
    Ok(())
}

fn solve1d(ctx: &Ctx) -> Result<(), RunError> {
    let grid = ctx.cfg.grid_1d(&ctx.params)?;
    let curve = solve_vi_1d(&ctx.params, DriftBranch::Bear, &grid, &ctx.opts())?;
    let boundary = extract_boundary(&curve, ctx.cfg.solver.tol);
    let (path, mut file) = ctx.create("solve1d")?;
    curve.write_csv(&mut file)?;
    let (bpath, mut bfile) = ctx.create("solve1d-boundary")?;
    boundary.write_csv(&mut bfile, grid.horizon())?;
    println!(
        "solve1d: structure {} penalty residual {:.2e} -> {}, {}",
        boundary.structure,
        curve.penalty_residual(),
        path.display(),
        bpath.display()
    );
    Ok(())
}

fn solve_surface(ctx: &Ctx) -> Result<ValueSurface, RunError> {
    let grid = ctx.cfg.grid_2d(&ctx.params)?;
    let opts = ctx.opts();
    if ctx.cfg.solver.eps.is_empty() {
        Ok(solve_vi_2d(&ctx.params, &grid, 0.0, &opts)?)
    } else {
        let (surface, report) = refine_epsilon(&ctx.params, &grid, &ctx.cfg.solver.eps, &opts)?;
        if !report.max_diffs.is_empty() {
            println!(
                "eps refinement: diffs {:?} ratios {:?}",
                report.max_diffs, report.contraction_ratios
            );
        }
        // The refined sequence anchors the limit; the shipped surface is the
        // direct degenerate solve.
        let direct = solve_vi_2d(&ctx.params, &grid, 0.0, &opts)?;
        let gap = direct.max_abs_diff(&surface).unwrap_or(f64::NAN);
        println!("eps limit vs direct gap: {gap:.3e}");
        Ok(direct)
    }
}

fn solve2d(ctx: &Ctx) -> Result<(), RunError> {
    let surface = solve_surface(ctx)?;
    let (x0, pi0) = mc_point(ctx);
    let (path, mut file) = ctx.create("solve2d")?;
    surface.write_csv(&mut file, &ctx.params)?;
    println!(
        "solve2d: u({x0}, {pi0}, 0) = {:.6}, penalty residual {:.2e}, substeps {} -> {}",
        surface.interp_value(0, x0, pi0),
        surface.penalty_residual(),
        surface.cross_substeps(),
        path.display()
    );
    Ok(())
}

fn boundaries(ctx: &Ctx) -> Result<(), RunError> {
    let surface = solve_surface(ctx)?;
    let boundary = extract_boundaries(&surface, ctx.cfg.solver.tol);
    let (ipath, mut ifile) = ctx.create("boundaries-interval")?;
    boundary.write_interval_csv(&mut ifile)?;
    let (bpath, mut bfile) = ctx.create("boundaries-belief")?;
    boundary.write_belief_csv(&mut bfile)?;
    println!(
        "boundaries: contact {} interval violations {} -> {}, {}",
        boundary.any_contact(),
        boundary.interval_violations,
        ipath.display(),
        bpath.display()
    );
    Ok(())
}

fn oracle(ctx: &Ctx) -> Result<(), RunError> {
    let (x0, pi0) = mc_point(ctx);
    let basis = BasisSpec {
        x_degree: ctx.cfg.mc.basis_x_degree,
        pi_degree: ctx.cfg.mc.basis_pi_degree,
        cross_term: true,
    };
    let eur = european_value(&ctx.params, x0, pi0, ctx.cfg.mc.paths, ctx.cfg.mc.seed)?;
    let lsmc = lsmc_value(
        &ctx.params,
        x0,
        pi0,
        ctx.cfg.mc.paths,
        ctx.cfg.mc.dates,
        &basis,
        ctx.cfg.mc.seed.wrapping_add(1),
        false,
    )?;
    let lat = lattice_value(
        &ctx.params,
        x0,
        pi0,
        ctx.cfg.mc.lattice_time,
        ctx.cfg.mc.lattice_space,
    )?;
    let (path, mut file) = ctx.create("oracle")?;
    writeln!(file, "method,estimate,stderr,n,seed")?;
    for est in [&eur, &lsmc, &lat] {
        println!("{}", est.csv_line());
        writeln!(file, "{}", est.csv_line())?;
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn check(ctx: &Ctx) -> Result<(), RunError> {
    let tol = ctx.cfg.solver.tol;
    let case = classify_regime(&ctx.params);
    println!("{case}");
    let surface = solve_surface(ctx)?;
    let boundary = extract_boundaries(&surface, tol);
    let constraints = theoretical_constraints(&case, &ctx.params);

    let field = FieldView::from_surface(&surface);
    let grid2 = surface.grid();
    let mut reports: Vec<CheckReport> = vec![
        check_bounds(&field, &ctx.params, tol),
        check_monotone_convex(&field, tol),
        check_lipschitz(&field, &ctx.params, tol),
        check_regions(&surface, &boundary, &constraints, &ctx.params, tol),
        check_boundary_monotonicity(&boundary, grid2.dy(), grid2.dpi()),
        check_belief_section_unimodal(&boundary, grid2.dpi()),
    ];

    // Face consistency against the standalone 1-D solutions.
    let grid = surface.grid();
    let grid1 = Grid1D::new(
        grid.x_axis().x_min(),
        grid.x_axis().x_max(),
        grid.nx(),
        ctx.params.maturity,
        grid.nt(),
        ctx.params.k,
    )?;
    let opts = ctx.opts();
    let bear = solve_vi_1d(&ctx.params, DriftBranch::Bear, &grid1, &opts)?;
    let bull = solve_vi_1d(&ctx.params, DriftBranch::Bull, &grid1, &opts)?;
    let mut worst = 0.0f64;
    for m in 0..=grid.nt() {
        for i in 0..grid.nx() {
            worst = worst.max((surface.value(m, 0, i) - bear.value(m, i)).abs());
            worst = worst.max((surface.value(m, grid.npi() - 1, i) - bull.value(m, i)).abs());
        }
    }
    let face = CheckReport {
        name: "face-consistency".to_string(),
        pass: worst <= 1e-3 * ctx.params.k,
        worst,
        location: None,
        tol: 1e-3 * ctx.params.k,
    };
    reports.push(face);

    let (path, mut file) = ctx.create("check")?;
    let all_pass = write_reports(&mut file, &reports)?;
    for r in &reports {
        println!("{}", r.csv_line());
    }
    eprintln!("wrote {}", path.display());
    if all_pass {
        Ok(())
    } else {
        Err(RunError::Checks)
    }
}

fn emit_figure(ctx: &Ctx) -> Result<(), RunError> {
    // Face-problem boundary over calendar time.
    let grid1 = ctx.cfg.grid_1d(&ctx.params)?;
    let curve = solve_vi_1d(&ctx.params, DriftBranch::Bear, &grid1, &ctx.opts())?;
    let face_boundary = extract_boundary(&curve, ctx.cfg.solver.tol);
    let (fpath, mut ffile) = ctx.create("emit-figure-face")?;
    face_boundary.write_csv(&mut ffile, grid1.horizon())?;

    // Plane sections of the 2-D geometry at the start, midpoint, and the
    // last stored time before maturity (where the contact set is widest).
    let surface = solve_surface(ctx)?;
    let boundary = extract_boundaries(&surface, ctx.cfg.solver.tol);
    let nt = boundary.ts().len();
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut written = vec![fpath.display().to_string()];
    for (tag, m) in [("t0", 0usize), ("tmid", nt / 2), ("tend", nt - 1)] {
        let (spath, mut sfile) = ctx.create(&format!("emit-figure-section-interval-{tag}"))?;
        writeln!(sfile, "# t={}", boundary.ts()[m])?;
        writeln!(sfile, "pi,x1,x2")?;
        for (jj, &pi) in boundary.pis_interior().iter().enumerate() {
            writeln!(
                sfile,
                "{},{},{}",
                pi,
                fmt_opt(boundary.x_lower(m, jj)),
                fmt_opt(boundary.x_upper(m, jj))
            )?;
        }
        let (bpath, mut bfile) = ctx.create(&format!("emit-figure-section-belief-{tag}"))?;
        writeln!(bfile, "# t={}", boundary.ts()[m])?;
        writeln!(bfile, "x,Pi")?;
        for (i, &x) in boundary.xs().iter().enumerate() {
            writeln!(bfile, "{},{}", x, boundary.pi_crit(m, i))?;
        }
        written.push(spath.display().to_string());
        written.push(bpath.display().to_string());
    }
    println!("emit-figure -> {}", written.join(", "));
    Ok(())
}
