//! Executable invariant suites over value surfaces, boundaries, and paths.
//!
//! Each check scans a solved field and reports pass/fail with the worst
//! violation and its location, so a failing run points straight at the
//! offending node. Checks accept both the 2-D surface and 1-D face curves
//! through a common read-only view.
//!
//! Tolerances follow the shipped defaults: value comparisons at `tol * K`
//! with `tol = 1e-6`, slope comparisons at `1e-6`, and comparisons across
//! the belief-face seam at `1e-3 * K` (the faces march the exact 1-D
//! systems, so their agreement with the interior is governed by the face
//! consistency contract, not by the interior scheme's structure).
//!
//! Checks scan the nodes where the generator is cleanly discretized: the
//! absorbing left edge, the extended far column, and the far node whose
//! equation folds that extension are boundary closures and are skipped,
//! as are forward differences that would read the fold node.

use std::io::{self, Write};

use crate::boundary1d::ValueCurve1D;
use crate::mc_oracle::{OracleEstimate, OracleMethod};
use crate::model::{ConstraintKind, ModelParams, RegionConstraint};
use crate::vi2d::{FreeBoundary2D, ValueSurface};

/// Default value tolerance relative to the principal.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Tolerance for comparisons across the belief-face seam, relative to K.
pub const FACE_SEAM_TOL: f64 = 1e-3;
/// Allowed growth of normalized difference quotients under a 2x refinement.
pub const REFINEMENT_RATIO_CAP: f64 = 1.5;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Worst violation magnitude (zero when the check passes cleanly).
    pub worst: f64,
    /// `(t, pi, x)` indices of the worst violation, when applicable.
    pub location: Option<(usize, usize, usize)>,
    pub tol: f64,
}

impl CheckReport {
    fn new(name: &str, tol: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            pass: true,
            worst: 0.0,
            location: None,
            tol,
        }
    }

    fn record(&mut self, violation: f64, loc: (usize, usize, usize)) {
        if violation > self.worst {
            self.worst = violation;
            self.location = Some(loc);
        }
        if violation > self.tol {
            self.pass = false;
        }
    }

    /// `check,pass,worst,loc,tol` line; `loc` is `t:pi:x` or empty.
    pub fn csv_line(&self) -> String {
        let loc = self
            .location
            .map(|(m, j, i)| format!("{m}:{j}:{i}"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.name, self.pass, self.worst, loc, self.tol
        )
    }
}

/// Writes the `check,pass,worst,loc,tol` header and one line per report;
/// returns whether every check passed.
pub fn write_reports<W: Write>(out: &mut W, reports: &[CheckReport]) -> io::Result<bool> {
    writeln!(out, "check,pass,worst,loc,tol")?;
    for r in reports {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(reports.iter().all(|r| r.pass))
}

/// Read-only view of a solved field, shared by 1-D curves and 2-D surfaces.
pub struct FieldView<'a> {
    xs: &'a [f64],
    pis: Vec<f64>,
    ts: &'a [f64],
    k: f64,
    source: Source<'a>,
}

enum Source<'a> {
    Surface(&'a ValueSurface),
    Curve(&'a ValueCurve1D),
}

impl<'a> FieldView<'a> {
    pub fn from_surface(surface: &'a ValueSurface) -> Self {
        let grid = surface.grid();
        FieldView {
            xs: grid.xs(),
            pis: grid.pis().to_vec(),
            ts: grid.ts(),
            k: surface.k(),
            source: Source::Surface(surface),
        }
    }

    pub fn from_curve(curve: &'a ValueCurve1D, pi_face: f64) -> Self {
        let grid = curve.grid();
        FieldView {
            xs: grid.xs(),
            pis: vec![pi_face],
            ts: grid.ts(),
            k: curve.k(),
            source: Source::Curve(curve),
        }
    }

    #[inline]
    fn at(&self, m: usize, j: usize, i: usize) -> f64 {
        match self.source {
            Source::Surface(s) => s.value(m, j, i),
            Source::Curve(c) => c.value(m, i),
        }
    }

    fn payoff(&self, i: usize) -> f64 {
        (self.xs[i] - self.k).max(0.0)
    }

    fn npi(&self) -> usize {
        self.pis.len()
    }

    fn nx(&self) -> usize {
        self.xs.len()
    }

    fn nt(&self) -> usize {
        self.ts.len() - 1
    }

    fn horizon(&self) -> f64 {
        *self.ts.last().unwrap()
    }
}

/// Obstacle and growth bounds: `payoff - tol K <= u <= x e^{(a-r)^+ (T-t)} + tol K`.
pub fn check_bounds(field: &FieldView, params: &ModelParams, tol: f64) -> CheckReport {
    let mut report = CheckReport::new("bounds", tol * field.k);
    let rate = (params.a - params.r).max(0.0);
    for m in 0..=field.nt() {
        let growth = (rate * (field.horizon() - field.ts[m])).exp();
        for j in 0..field.npi() {
            for i in 1..field.nx() - 2 {
                let u = field.at(m, j, i);
                let low = field.payoff(i) - u;
                let high = u - field.xs[i] * growth;
                report.record(low.max(high), (m, j, i));
            }
        }
    }
    report
}

/// Discrete monotonicity (up in belief, down in time, up in price) and
/// convexity in price. Belief comparisons across the face seam use
/// [`FACE_SEAM_TOL`]; everything else uses `tol`.
pub fn check_monotone_convex(field: &FieldView, tol: f64) -> CheckReport {
    let value_tol = tol * field.k;
    let seam_tol = FACE_SEAM_TOL * field.k;
    let mut report = CheckReport::new("monotone-convex", value_tol);
    let npi = field.npi();
    for m in 0..=field.nt() {
        for j in 0..npi {
            for i in 1..field.nx() - 2 {
                let u = field.at(m, j, i);
                if j + 1 < npi {
                    let seam = j == 0 || j + 1 == npi - 1;
                    let gap = u - field.at(m, j + 1, i);
                    let allowed = if seam { seam_tol } else { value_tol };
                    // Normalize seam violations onto the report tolerance so
                    // one threshold governs the pass flag.
                    if gap > allowed {
                        report.record(value_tol + (gap - allowed), (m, j, i));
                    } else {
                        report.record(gap.min(value_tol), (m, j, i));
                    }
                }
                if m < field.nt() {
                    report.record(field.at(m + 1, j, i) - u, (m, j, i));
                }
                if i + 1 < field.nx() - 2 {
                    report.record(u - field.at(m, j, i + 1), (m, j, i));
                    let left = (u - field.at(m, j, i - 1)) / (field.xs[i] - field.xs[i - 1]);
                    let right = (field.at(m, j, i + 1) - u) / (field.xs[i + 1] - field.xs[i]);
                    // Dimensionless slope difference, scaled by K so the
                    // single value threshold governs it at the same level.
                    report.record((left - right) * field.k, (m, j, i));
                }
            }
        }
    }
    report
}

/// Price-slope bounds: forward slopes stay below `e^{(a-r)^+ (T-t)}`
/// (and below one when `r >= a`), within `tol`.
///
/// On the top belief face the cap is asymptotically attained (the face value
/// grows at exactly the capped rate far from the principal), so face rows
/// carry a tenfold allowance covering the far-field slope noise; interior
/// rows keep a genuine margin proportional to `(1 - pi)` and are held to
/// `tol` itself.
pub fn check_lipschitz(field: &FieldView, params: &ModelParams, tol: f64) -> CheckReport {
    let mut report = CheckReport::new("lipschitz", tol);
    let rate = (params.a - params.r).max(0.0);
    let npi = field.npi();
    for m in 0..=field.nt() {
        let cap = (rate * (field.horizon() - field.ts[m])).exp();
        for j in 0..npi {
            let saturated = npi > 1 && j == npi - 1 && rate > 0.0;
            let allowance = if saturated { 9.0 * tol } else { 0.0 };
            for i in 1..field.nx() - 3 {
                let slope =
                    (field.at(m, j, i + 1) - field.at(m, j, i)) / (field.xs[i + 1] - field.xs[i]);
                report.record(slope - cap - allowance, (m, j, i));
                report.record(-slope, (m, j, i));
            }
        }
    }
    report
}

/// Largest belief- and time-difference quotients, normalized as
/// `|du| / (x (T-t) dpi)` and `|du| / (x sqrt(dt))`.
pub fn normalized_quotients(field: &FieldView) -> (f64, f64) {
    let mut q_pi = 0.0f64;
    let mut q_t = 0.0f64;
    let npi = field.npi();
    let horizon = field.horizon();
    for m in 0..=field.nt() {
        let remaining = horizon - field.ts[m];
        for j in 0..npi {
            for i in 1..field.nx() - 2 {
                let u = field.at(m, j, i);
                // Interior belief pairs only: across the face seam the
                // difference is dominated by the face-consistency error, not
                // by the field's own modulus.
                if j + 1 < npi.saturating_sub(1) && j >= 1 && remaining > 0.0 {
                    let dpi = field.pis[j + 1] - field.pis[j];
                    let q = (field.at(m, j + 1, i) - u).abs() / (field.xs[i] * remaining * dpi);
                    q_pi = q_pi.max(q);
                }
                if m < field.nt() {
                    let dt = field.ts[m + 1] - field.ts[m];
                    let q = (u - field.at(m + 1, j, i)).abs() / (field.xs[i] * dt.sqrt());
                    q_t = q_t.max(q);
                }
            }
        }
    }
    (q_pi, q_t)
}

/// Structural restatement of the belief/time moduli: the normalized
/// quotients must not grow by more than [`REFINEMENT_RATIO_CAP`] across a
/// 2x grid refinement.
pub fn check_quotient_stability(coarse: &FieldView, fine: &FieldView) -> CheckReport {
    let mut report = CheckReport::new("quotient-stability", REFINEMENT_RATIO_CAP);
    let (cq_pi, cq_t) = normalized_quotients(coarse);
    let (fq_pi, fq_t) = normalized_quotients(fine);
    let ratio_pi = if cq_pi > 0.0 { fq_pi / cq_pi } else { 1.0 };
    let ratio_t = if cq_t > 0.0 { fq_t / cq_t } else { 1.0 };
    // Report the ratios themselves; pass while both stay under the cap.
    report.worst = ratio_pi.max(ratio_t);
    report.pass = report.worst <= REFINEMENT_RATIO_CAP;
    report
}

/// Evaluates every analytic region constraint on the computed contact set;
/// `worst` is the number of violating nodes (zero to pass).
pub fn check_regions(
    surface: &ValueSurface,
    boundary: &FreeBoundary2D,
    constraints: &[RegionConstraint],
    params: &ModelParams,
    tol: f64,
) -> CheckReport {
    let grid = surface.grid();
    let (nx, npi, nt) = (grid.nx(), grid.npi(), grid.nt());
    let xs = grid.xs();
    let pis = grid.pis();
    let k = params.k;
    let contact_tol = tol * k;
    let dpi = grid.dpi();
    let mut report = CheckReport::new("regions", 0.0);
    let mut violations = 0usize;
    let mut worst_loc = None;

    let mut fail = |loc: (usize, usize, usize), count: &mut usize| {
        *count += 1;
        if worst_loc.is_none() {
            worst_loc = Some(loc);
        }
    };

    for c in constraints {
        match &c.kind {
            ConstraintKind::ContinuationIncludes(pred) => {
                for m in 0..nt {
                    for j in 1..npi - 1 {
                        for i in 1..nx - 1 {
                            // One belief cell of slack around the envelope.
                            if !pred.holds_with_margin(xs[i], pis[j], dpi) {
                                continue;
                            }
                            let u = surface.value(m, j, i);
                            let payoff = (xs[i] - k).max(0.0);
                            let in_continuation = if xs[i] <= k {
                                u > payoff
                            } else {
                                u - payoff > contact_tol
                            };
                            if !in_continuation {
                                fail((m, j, i), &mut violations);
                            }
                        }
                    }
                }
            }
            ConstraintKind::RedeemEmpty => {
                if boundary.any_contact() {
                    fail((0, 0, 0), &mut violations);
                }
            }
            ConstraintKind::RedeemAboveK => {
                // At prices up to the principal the value must stay strictly
                // above the (zero payoff) obstacle.
                for m in 0..nt {
                    for j in 1..npi - 1 {
                        for i in 1..=grid.k_index() {
                            if surface.value(m, j, i) <= (xs[i] - k).max(0.0) {
                                fail((m, j, i), &mut violations);
                            }
                        }
                    }
                }
            }
            ConstraintKind::LowerBoundaryAboveK => {
                for m in 0..nt {
                    for jj in 0..boundary.pis_interior().len() {
                        if let Some(lo) = boundary.x_lower(m, jj) {
                            if lo <= k {
                                fail((m, jj, 0), &mut violations);
                            }
                        }
                    }
                }
            }
            ConstraintKind::UpperBoundaryBelow(cap) => {
                for m in 0..nt {
                    for jj in 0..boundary.pis_interior().len() {
                        if let Some(hi) = boundary.x_upper(m, jj) {
                            if hi >= *cap {
                                fail((m, jj, 0), &mut violations);
                            }
                        }
                    }
                }
            }
            ConstraintKind::UpperBoundaryAbsent => {
                for m in 0..nt {
                    for jj in 0..boundary.pis_interior().len() {
                        if let Some(hi) = boundary.x_upper(m, jj) {
                            if hi < boundary.far_field() {
                                fail((m, jj, 0), &mut violations);
                            }
                        }
                    }
                }
            }
            ConstraintKind::CriticalBeliefBelow(cap) => {
                for m in 0..nt {
                    for i in 1..nx - 1 {
                        let crit = boundary.pi_crit(m, i);
                        // One belief cell of extraction slack.
                        if crit > 0.0 && crit >= cap + dpi {
                            fail((m, 0, i), &mut violations);
                        }
                    }
                }
            }
            ConstraintKind::CriticalBeliefPositiveFarField => {
                for m in 0..nt {
                    if boundary.pi_crit(m, nx - 2) <= 0.0 {
                        fail((m, 0, nx - 2), &mut violations);
                    }
                }
            }
        }
    }

    report.worst = violations as f64;
    report.location = worst_loc;
    report.pass = violations == 0;
    report
}

/// Directional monotonicity of the extracted boundaries with one grid cell
/// of slack: the lower price boundary must not rise with calendar time nor
/// fall with the belief, the upper boundary mirrors it, the critical belief
/// must not fall with calendar time, and a contact interval present at some
/// time must persist at later times. `worst` counts violating pairs.
pub fn check_boundary_monotonicity(boundary: &FreeBoundary2D, dy: f64, dpi: f64) -> CheckReport {
    let mut report = CheckReport::new("boundary-monotonicity", 0.0);
    let mut violations = 0usize;
    let cell = dy.exp();
    let nt = boundary.ts().len();
    let npi = boundary.pis_interior().len();
    for m in 0..nt {
        for jj in 0..npi {
            // Calendar-time direction.
            if m + 1 < nt {
                match (boundary.x_lower(m, jj), boundary.x_lower(m + 1, jj)) {
                    (Some(now), Some(later)) if later > now * cell => violations += 1,
                    (Some(_), None) => violations += 1,
                    _ => {}
                }
                if let (Some(now), Some(later)) =
                    (boundary.x_upper(m, jj), boundary.x_upper(m + 1, jj))
                {
                    if later < now / cell {
                        violations += 1;
                    }
                }
            }
            // Belief direction.
            if jj + 1 < npi {
                if let (Some(lo), Some(hi)) = (boundary.x_lower(m, jj), boundary.x_lower(m, jj + 1))
                {
                    if hi < lo / cell {
                        violations += 1;
                    }
                }
                if let (Some(lo), Some(hi)) = (boundary.x_upper(m, jj), boundary.x_upper(m, jj + 1))
                {
                    if hi > lo * cell {
                        violations += 1;
                    }
                }
            }
        }
        if m + 1 < nt {
            for i in 0..boundary.xs().len() {
                if boundary.pi_crit(m + 1, i) < boundary.pi_crit(m, i) - dpi {
                    violations += 1;
                }
            }
        }
    }
    report.worst = violations as f64;
    report.pass = violations == 0;
    report
}

/// The critical-belief section is first non-decreasing and then
/// non-increasing in price, within one belief cell of slack; `worst` counts
/// violating nodes.
pub fn check_belief_section_unimodal(boundary: &FreeBoundary2D, dpi: f64) -> CheckReport {
    let mut report = CheckReport::new("belief-section-unimodal", 0.0);
    let mut violations = 0usize;
    let nx = boundary.xs().len();
    for m in 0..boundary.ts().len() {
        let mut descending = false;
        let mut prev: Option<f64> = None;
        for i in 0..nx {
            let crit = boundary.pi_crit(m, i);
            if crit <= 0.0 {
                if prev.is_some() {
                    // The section ended; treat the tail as descended.
                    descending = true;
                }
                continue;
            }
            if let Some(p) = prev {
                if crit < p - dpi {
                    descending = true;
                } else if descending && crit > p + dpi {
                    violations += 1;
                }
            }
            prev = Some(crit);
        }
    }
    report.worst = violations as f64;
    report.pass = violations == 0;
    report
}

/// Cross-method agreement at one point: each estimate must lie within
/// `2 stderr + solver_tol (+ resolution error)` of the surface value;
/// hold-to-maturity estimates are one-sided lower bounds.
pub fn check_oracle_agreement(
    surface_value: f64,
    estimates: &[OracleEstimate],
    solver_tol: f64,
) -> CheckReport {
    let mut report = CheckReport::new("oracle-agreement", solver_tol);
    for (idx, est) in estimates.iter().enumerate() {
        let band = 2.0 * est.stderr + solver_tol + est.resolution_error.unwrap_or(0.0);
        let excess = match est.method {
            OracleMethod::European => est.value - surface_value - band,
            _ => (est.value - surface_value).abs() - band,
        };
        if excess > 0.0 {
            report.worst = report.worst.max(solver_tol + excess);
            report.location = Some((idx, 0, 0));
            report.pass = false;
        }
    }
    report
}
