//! Config-to-artifact pipeline: parse a run configuration, solve, extract,
//! check, and export, exercising the same flow the CLI drives.

use stockloan::boundary1d::{extract_boundary, solve_vi_1d, DriftBranch, SolverOptions};
use stockloan::config::RunConfig;
use stockloan::model::{classify_regime, theoretical_constraints, RegimeId};
use stockloan::properties::{check_bounds, check_regions, write_reports, FieldView};
use stockloan::vi2d::{extract_boundaries, solve_vi_2d};

const CONFIG: &str = r#"
[model]
a = 0.15
b = 0.06
gamma = 0.10
r = 0.02
K = 100.0
T = 1.0

[grid]
nx = 128
npi = 31
nt = 96

[solver]
tol = 1e-6
"#;

#[test]
fn config_drives_solvers_checks_and_exports() {
    let cfg = RunConfig::from_toml_str(CONFIG).unwrap();
    let params = cfg.params().unwrap();
    let case = classify_regime(&params);
    assert_eq!(case.id, RegimeId::Case2);

    let opts = SolverOptions {
        rho: Some(cfg.rho(&params)),
        contact_tol: cfg.solver.tol,
        ..SolverOptions::default()
    };

    // Face problem and its boundary export.
    let grid1 = cfg.grid_1d(&params).unwrap();
    let curve = solve_vi_1d(&params, DriftBranch::Bear, &grid1, &opts).unwrap();
    let boundary1 = extract_boundary(&curve, cfg.solver.tol);
    let mut csv = Vec::new();
    boundary1.write_csv(&mut csv, grid1.horizon()).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("t,x1,x2,structure\n"));

    // Full surface, boundary geometry, and the check reports.
    let grid2 = cfg.grid_2d(&params).unwrap();
    let surface = solve_vi_2d(&params, &grid2, 0.0, &opts).unwrap();
    let boundary2 = extract_boundaries(&surface, cfg.solver.tol);
    assert!(boundary2.any_contact());
    assert_eq!(boundary2.interval_violations, 0);

    let constraints = theoretical_constraints(&case, &params);
    let reports = vec![
        check_bounds(&FieldView::from_surface(&surface), &params, cfg.solver.tol),
        check_regions(&surface, &boundary2, &constraints, &params, cfg.solver.tol),
    ];
    let mut out = Vec::new();
    let all_pass = write_reports(&mut out, &reports).unwrap();
    assert!(all_pass, "{}", String::from_utf8(out).unwrap());
}
