//! Obstacle problems on the belief faces, where the drift is known.
//!
//! On the faces the value solves a one-dimensional variational inequality
//! with operator `u_t + x^2 u_xx / 2 + (d - gamma) x u_x + (gamma - r) u`,
//! terminal data `(x - K)^+`, and drift `d` equal to the bear or bull rate.
//! The obstacle constraint is enforced by a stiff penalty solved implicitly
//! with an active-set iteration; the same time stepper drives the face rows
//! of the two-dimensional solver so the faces of both agree exactly.
//!
//! Alongside the solver live the closed-form companions: the European lower
//! bound, the power super-solution that pins an interior contact point, the
//! capped super-solution bounding the single boundary when the bear drift
//! equals the risk-free rate, and boundary extraction with terminal limits.

use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::model::ModelParams;
use crate::tridiag::{self, ThomasScratch};

/// Which face the one-dimensional problem lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftBranch {
    /// Belief pinned on the bear face: drift `b`.
    Bear,
    /// Belief pinned on the bull face: drift `a`.
    Bull,
}

impl DriftBranch {
    pub fn drift(&self, params: &ModelParams) -> f64 {
        match self {
            DriftBranch::Bear => params.b,
            DriftBranch::Bull => params.a,
        }
    }
}

/// Solver knobs shared by the 1-D and 2-D marches.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Penalty coefficient; `None` derives `1e8 * (gamma - r)`.
    pub rho: Option<f64>,
    /// Contact tolerance relative to K.
    pub contact_tol: f64,
    /// Cap on active-set sweeps per time step.
    pub max_penalty_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rho: None,
            contact_tol: 1e-6,
            max_penalty_iters: 50,
        }
    }
}

impl SolverOptions {
    pub fn rho_for(&self, params: &ModelParams) -> f64 {
        self.rho.unwrap_or(1e8 * (params.gamma - params.r))
    }
}

/// One implicit penalty step of the 1-D face equation.
///
/// The unknowns are the interior nodes; the left edge carries an absorbing
/// zero value and the right edge is extended linearly in the price, folded
/// into the last interior row so the system stays tridiagonal.
pub(crate) struct ImplicitStepper1D {
    nx: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    beta: f64,
    rho_dt: f64,
    payoff: Vec<f64>,
}

/// Reusable buffers for [`ImplicitStepper1D::step`].
pub(crate) struct StepScratch {
    thomas: ThomasScratch,
    diag: Vec<f64>,
    rhs: Vec<f64>,
    sol: Vec<f64>,
    active: Vec<bool>,
    next_active: Vec<bool>,
}

impl StepScratch {
    pub(crate) fn new(nx: usize) -> Self {
        let n = nx.saturating_sub(2);
        StepScratch {
            thomas: ThomasScratch::with_capacity(n),
            diag: vec![0.0; n],
            rhs: vec![0.0; n],
            sol: vec![0.0; n],
            active: vec![false; n],
            next_active: vec![false; n],
        }
    }
}

impl ImplicitStepper1D {
    pub(crate) fn new(
        params: &ModelParams,
        drift_value: f64,
        xs: &[f64],
        dy: f64,
        dt_sub: f64,
        rho: f64,
    ) -> Self {
        let nx = xs.len();
        let n = nx - 2;
        let advection = drift_value - params.gamma - 0.5;
        let growth = params.gamma - params.r;
        let diffusion = 0.5 / (dy * dy);

        // Central differencing keeps the matrix an M-matrix only while
        // |advection| dy <= 1; switch to upwind beyond that.
        let central_ok = advection.abs() * dy <= 1.0;
        let (lo, hi, extra_diag) = if central_ok {
            let adv = advection / (2.0 * dy);
            (diffusion - adv, diffusion + adv, 0.0)
        } else if advection > 0.0 {
            (diffusion, diffusion + advection / dy, advection / dy)
        } else {
            (diffusion - advection / dy, diffusion, -advection / dy)
        };

        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            lower[i] = -dt_sub * lo;
            diag[i] = 1.0 + dt_sub * (2.0 * diffusion + extra_diag) - dt_sub * growth;
            upper[i] = -dt_sub * hi;
        }
        // Left neighbour of the first unknown is the absorbing edge (zero
        // value), so its coefficient drops.
        lower[0] = 0.0;
        // Fold the linear-price extension u[nx-1] = (1+beta) u[nx-2] - beta u[nx-3]
        // into the last interior row.
        let beta = (xs[nx - 1] - xs[nx - 2]) / (xs[nx - 2] - xs[nx - 3]);
        let tail = upper[n - 1];
        diag[n - 1] += tail * (1.0 + beta);
        lower[n - 1] -= tail * beta;
        upper[n - 1] = 0.0;

        let payoff: Vec<f64> = xs.iter().map(|&x| params.payoff(x)).collect();

        ImplicitStepper1D {
            nx,
            lower,
            diag,
            upper,
            beta,
            rho_dt: rho * dt_sub,
            payoff,
        }
    }

    /// Advances one substep backward in time: `next` holds the later-time
    /// slice, `out` receives the earlier one. Returns the number of
    /// active-set sweeps used.
    pub(crate) fn step(
        &self,
        next: &[f64],
        out: &mut [f64],
        scratch: &mut StepScratch,
        max_iters: usize,
    ) -> Result<usize> {
        let n = self.nx - 2;
        // The active set warm-starts from the previous call.
        for iter in 1..=max_iters {
            for i in 0..n {
                let pen = if scratch.active[i] { self.rho_dt } else { 0.0 };
                scratch.diag[i] = self.diag[i] + pen;
                scratch.rhs[i] = next[i + 1] + pen * self.payoff[i + 1];
            }
            tridiag::solve(
                &self.lower,
                &scratch.diag,
                &self.upper,
                &scratch.rhs,
                &mut scratch.sol,
                &mut scratch.thomas,
            );
            let mut stable = true;
            for i in 0..n {
                let want = scratch.sol[i] < self.payoff[i + 1];
                if want != scratch.active[i] {
                    stable = false;
                }
                scratch.next_active[i] = want;
            }
            std::mem::swap(&mut scratch.active, &mut scratch.next_active);
            if stable {
                out[0] = 0.0;
                out[1..=n].copy_from_slice(&scratch.sol);
                out[self.nx - 1] =
                    (1.0 + self.beta) * out[self.nx - 2] - self.beta * out[self.nx - 3];
                return Ok(iter);
            }
        }
        Err(Error::Convergence(format!(
            "penalty active-set iteration exceeded {max_iters} sweeps"
        )))
    }
}

/// Solved value samples `u(x, t)` on one face.
#[derive(Debug, Clone)]
pub struct ValueCurve1D {
    grid: Grid1D,
    drift: DriftBranch,
    values: Vec<f64>,
    penalty_residual: f64,
    params: ModelParams,
}

impl ValueCurve1D {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn drift(&self) -> DriftBranch {
        self.drift
    }

    /// Largest obstacle violation `(payoff - u)^+` over the enforced nodes
    /// (the extended far column is excluded).
    pub fn penalty_residual(&self) -> f64 {
        self.penalty_residual
    }

    pub fn value(&self, t_index: usize, x_index: usize) -> f64 {
        self.values[t_index * self.grid.nx() + x_index]
    }

    pub fn slice(&self, t_index: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.values[t_index * nx..(t_index + 1) * nx]
    }

    pub fn k(&self) -> f64 {
        self.params.k
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Log-linear interpolation in price at one time slice.
    pub fn interp_value(&self, t_index: usize, x: f64) -> f64 {
        let xs = self.grid.xs();
        let slice = self.slice(t_index);
        if x <= xs[0] {
            return slice[0];
        }
        if x >= xs[xs.len() - 1] {
            return slice[xs.len() - 1];
        }
        let pos = (x / xs[0]).ln() / self.grid.dy();
        let i = (pos.floor() as usize).min(xs.len() - 2);
        let w = ((x / xs[i]).ln() / self.grid.dy()).clamp(0.0, 1.0);
        slice[i] * (1.0 - w) + slice[i + 1] * w
    }

    /// Writes a `# grid: ...` header plus `t,x,u` rows, time-major.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(
            out,
            "# grid: nx={} nt={} xmin={} xmax={}",
            self.grid.nx(),
            self.grid.nt(),
            self.grid.x_min(),
            self.grid.x_max()
        )?;
        writeln!(out, "t,x,u")?;
        for (m, &t) in self.grid.ts().iter().enumerate() {
            for (i, &x) in self.grid.xs().iter().enumerate() {
                writeln!(out, "{},{},{}", t, x, self.value(m, i))?;
            }
        }
        Ok(())
    }
}

/// Backward penalty march of the face equation for the given drift branch.
pub fn solve_vi_1d(
    params: &ModelParams,
    drift: DriftBranch,
    grid: &Grid1D,
    opts: &SolverOptions,
) -> Result<ValueCurve1D> {
    params.validated()?;
    grid.validate_domain(params)?;
    check_growth_step(params, grid.dt())?;
    if let Some(rho) = opts.rho {
        if !(rho > 0.0) {
            return Err(Error::domain(format!(
                "penalty coefficient must be positive, got {rho}"
            )));
        }
    }
    let nx = grid.nx();
    let nt = grid.nt();
    let stepper = ImplicitStepper1D::new(
        params,
        drift.drift(params),
        grid.xs(),
        grid.dy(),
        grid.dt(),
        opts.rho_for(params),
    );
    let mut scratch = StepScratch::new(nx);

    let mut values = vec![0.0f64; (nt + 1) * nx];
    // Terminal slice is the payoff exactly.
    for (i, &x) in grid.xs().iter().enumerate() {
        values[nt * nx + i] = params.payoff(x);
    }
    for m in (0..nt).rev() {
        let (head, tail) = values.split_at_mut((m + 1) * nx);
        let cur = &mut head[m * nx..];
        let next = &tail[..nx];
        stepper.step(next, cur, &mut scratch, opts.max_penalty_iters)?;
    }

    // Residual over the enforced domain (the extended far column may dip
    // below the payoff when the contact edge decays steeply toward it).
    let mut residual = 0.0f64;
    for m in 0..=nt {
        for (i, &x) in grid.xs().iter().enumerate().take(nx - 1) {
            residual = residual.max(params.payoff(x) - values[m * nx + i]);
        }
    }

    Ok(ValueCurve1D {
        grid: grid.clone(),
        drift,
        values,
        penalty_residual: residual.max(0.0),
        params: *params,
    })
}

/// The implicit step keeps its sign structure only while the value-growth
/// term stays well inside the unit ball per step.
pub(crate) fn check_growth_step(params: &ModelParams, dt: f64) -> Result<()> {
    let growth = params.gamma - params.r;
    if dt * growth > 0.9 {
        return Err(Error::Stability(format!(
            "time step {dt} with rate spread {growth} destabilizes the              implicit march; use at least {} steps per unit time",
            (growth / 0.9).ceil().max(1.0)
        )));
    }
    Ok(())
}

/// Hold-to-maturity value on the bear face (a European lower bound):
/// `g(x,t) = x e^{(b-r)(T-t)} N(d1) - K e^{(gamma-r)(T-t)} N(d2)` with
/// `d1 = (log(x/K) - (gamma-b-1/2)(T-t)) / sqrt(T-t)` and
/// `d2 = (log(x/K) - (gamma-b+1/2)(T-t)) / sqrt(T-t)`.
pub fn european_lower_bound(params: &ModelParams, x: f64, t: f64) -> f64 {
    let s = params.maturity - t;
    if x <= 0.0 {
        return 0.0;
    }
    if s <= 0.0 {
        return params.payoff(x);
    }
    let sqrt_s = s.sqrt();
    let log_m = (x / params.k).ln();
    let d1 = (log_m - (params.gamma - params.b - 0.5) * s) / sqrt_s;
    let d2 = (log_m - (params.gamma - params.b + 0.5) * s) / sqrt_s;
    x * ((params.b - params.r) * s).exp() * norm_cdf(d1)
        - params.k * ((params.gamma - params.r) * s).exp() * norm_cdf(d2)
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Convex power barrier touching the payoff at a single interior point,
/// dominating the bear-face value when the loan rate is high enough.
#[derive(Debug, Clone, Copy)]
pub struct TouchSupersolution {
    pub exponent: f64,
    pub touch_point: f64,
    k: f64,
}

impl TouchSupersolution {
    pub fn eval(&self, x: f64) -> f64 {
        (x / self.exponent).powf(self.exponent)
            * ((self.exponent - 1.0) / self.k).powf(self.exponent - 1.0)
    }
}

/// Requires `gamma > b > r` and a loan rate at or above the threshold
/// `b + 1/2 + sqrt(2b - 2r)`; the barrier with exponent `1 + sqrt(2b - 2r)`
/// then touches the payoff exactly at `(1 + 1/sqrt(2b - 2r)) K`.
pub fn touch_supersolution(params: &ModelParams) -> Result<TouchSupersolution> {
    if !(params.gamma > params.b && params.b > params.r) {
        return Err(Error::domain(format!(
            "touch barrier needs gamma > b > r, got gamma={} b={} r={}",
            params.gamma, params.b, params.r
        )));
    }
    let root = (2.0 * (params.b - params.r)).sqrt();
    let threshold = params.b + 0.5 + root;
    if params.gamma < threshold {
        return Err(Error::domain(format!(
            "loan rate {} is below the barrier threshold {threshold}",
            params.gamma
        )));
    }
    let exponent = 1.0 + root;
    Ok(TouchSupersolution {
        exponent,
        touch_point: exponent / (exponent - 1.0) * params.k,
        k: params.k,
    })
}

/// Power barrier capped by the payoff, dominating the face value when the
/// bear drift equals the risk-free rate and `gamma > r + 1/2`.
#[derive(Debug, Clone, Copy)]
pub struct CapSupersolution {
    pub exponent: f64,
    pub cap_point: f64,
    k: f64,
}

impl CapSupersolution {
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.cap_point {
            (x / self.exponent).powf(self.exponent)
                * ((self.exponent - 1.0) / self.k).powf(self.exponent - 1.0)
        } else {
            (x - self.k).max(0.0)
        }
    }
}

pub fn cap_supersolution(params: &ModelParams) -> Result<CapSupersolution> {
    if params.r != params.b {
        return Err(Error::domain(format!(
            "cap barrier needs r = b exactly, got r={} b={}",
            params.r, params.b
        )));
    }
    if !(params.gamma > params.r + 0.5) {
        return Err(Error::domain(format!(
            "cap barrier needs gamma > r + 1/2, got gamma={} r={}",
            params.gamma, params.r
        )));
    }
    let exponent = 2.0 * (params.gamma - params.r);
    Ok(CapSupersolution {
        exponent,
        cap_point: exponent / (exponent - 1.0) * params.k,
        k: params.k,
    })
}

/// Shape of the redeeming set over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryStructure {
    /// Contact set empty at every pre-terminal time.
    NoBoundary,
    /// Contact reaches the truncated far field whenever present.
    SingleBoundary,
    /// A bounded contact interval at every pre-terminal time.
    TwoBoundaries,
    /// Bounded contact near maturity that empties at earlier times.
    TwoBoundariesVanishing,
}

impl fmt::Display for BoundaryStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryStructure::NoBoundary => "none",
            BoundaryStructure::SingleBoundary => "single",
            BoundaryStructure::TwoBoundaries => "two",
            BoundaryStructure::TwoBoundariesVanishing => "two-vanishing",
        };
        f.write_str(s)
    }
}

/// Redeeming boundaries of a 1-D curve: per-time grid-node values plus
/// terminal limits obtained by square-root-of-time-to-go extrapolation.
#[derive(Debug, Clone)]
pub struct Boundary1D {
    ts: Vec<f64>,
    x1: Vec<Option<f64>>,
    x2: Vec<Option<f64>>,
    pub terminal_x1: Option<f64>,
    pub terminal_x2: Option<f64>,
    pub structure: BoundaryStructure,
    /// Calendar time below which the contact set is empty, when it vanishes.
    pub vanish_time: Option<f64>,
    far_field: f64,
}

impl Boundary1D {
    /// Pre-terminal time nodes.
    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn x1(&self) -> &[Option<f64>] {
        &self.x1
    }

    pub fn x2(&self) -> &[Option<f64>] {
        &self.x2
    }

    /// Largest price node participating in extraction (the truncation edge).
    pub fn far_field(&self) -> f64 {
        self.far_field
    }

    /// Writes `t,x1,x2,structure` rows; absent boundaries are empty fields.
    /// The final row carries the extrapolated terminal values.
    pub fn write_csv<W: Write>(&self, out: &mut W, horizon: f64) -> io::Result<()> {
        writeln!(out, "t,x1,x2,structure")?;
        let fmt_opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (m, t) in self.ts.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                t,
                fmt_opt(&self.x1[m]),
                fmt_opt(&self.x2[m]),
                self.structure
            )?;
        }
        writeln!(
            out,
            "{},{},{},{}",
            horizon,
            fmt_opt(&self.terminal_x1),
            fmt_opt(&self.terminal_x2),
            self.structure
        )
    }
}

/// Terminal limits of the contact interval via the instantaneous obstacle
/// balance: at maturity the constraint binds exactly where the discrete
/// spatial generator applied to the payoff is nonpositive. The principal is
/// a grid node, so the payoff kink never enters the stencils at the probed
/// nodes, and the computed crossing matches the analytic terminal boundary
/// to the grid resolution.
fn terminal_balance(
    params: &ModelParams,
    drift_value: f64,
    grid: &Grid1D,
) -> (Option<f64>, Option<f64>) {
    let xs = grid.xs();
    let nx = grid.nx();
    let dy = grid.dy();
    let advection = drift_value - params.gamma - 0.5;
    let growth = params.gamma - params.r;
    let payoff = |i: usize| (xs[i] - params.k).max(0.0);
    let mut lo = None;
    let mut hi = None;
    for i in grid.k_index() + 1..nx - 1 {
        let diffusion = 0.5 * (payoff(i - 1) - 2.0 * payoff(i) + payoff(i + 1)) / (dy * dy);
        let drift = advection * (payoff(i + 1) - payoff(i - 1)) / (2.0 * dy);
        let generator = diffusion + drift + growth * payoff(i);
        if generator <= 0.0 {
            if lo.is_none() {
                lo = Some(xs[i]);
            }
            hi = Some(xs[i]);
        }
    }
    (lo, hi)
}

/// Extracts the contact interval per pre-terminal time node.
///
/// Contact is `u - payoff <= tol * K` restricted to prices strictly above the
/// principal; the extended last node is excluded. The terminal values are the
/// maturity limits computed from the instantaneous obstacle balance of the
/// discrete generator (the detected contact set at finite times from maturity
/// is inflated by the payoff kink's diffusive time value and cannot resolve
/// the limit directly).
pub fn extract_boundary(curve: &ValueCurve1D, contact_tol: f64) -> Boundary1D {
    let grid = curve.grid();
    let nx = grid.nx();
    let nt = grid.nt();
    let xs = grid.xs();
    let k = curve.k();
    let tol = contact_tol * k;
    let first = grid.k_index() + 1;
    let last = nx - 2;

    let mut x1 = vec![None; nt];
    let mut x2 = vec![None; nt];
    let mut pinned_whenever_present = true;
    let mut any = false;

    for m in 0..nt {
        let slice = curve.slice(m);
        let gap = |i: usize| slice[i] - (xs[i] - k).max(0.0);
        let mut lo = None;
        let mut hi = None;
        for i in first..=last {
            if gap(i) <= tol {
                if lo.is_none() {
                    lo = Some(i);
                }
                hi = Some(i);
            }
        }
        if let (Some(lo), Some(hi)) = (lo, hi) {
            any = true;
            x1[m] = Some(xs[lo]);
            x2[m] = Some(xs[hi]);
            if hi != last {
                pinned_whenever_present = false;
            }
        }
    }

    let mut structure = if !any {
        BoundaryStructure::NoBoundary
    } else if x1.iter().position(|v| v.is_some()).unwrap_or(0) > 0 {
        BoundaryStructure::TwoBoundariesVanishing
    } else if pinned_whenever_present {
        BoundaryStructure::SingleBoundary
    } else {
        BoundaryStructure::TwoBoundaries
    };
    // A vanishing pattern whose contact always reaches the edge is a single
    // boundary leaving the truncated domain, not a genuine vanishing pair.
    if structure == BoundaryStructure::TwoBoundariesVanishing && pinned_whenever_present {
        structure = BoundaryStructure::SingleBoundary;
    }

    let vanish_time = if structure == BoundaryStructure::TwoBoundariesVanishing {
        let m_first = x1.iter().position(|v| v.is_some()).unwrap();
        Some((grid.ts()[m_first - 1] + grid.ts()[m_first]) / 2.0)
    } else {
        None
    };

    let (balance_lo, balance_hi) =
        terminal_balance(curve.params(), curve.drift().drift(curve.params()), grid);
    let terminal_x1 = if any { balance_lo } else { None };
    let terminal_x2 = if structure == BoundaryStructure::SingleBoundary {
        Some(xs[last])
    } else if any {
        balance_hi
    } else {
        None
    };

    Boundary1D {
        ts: grid.ts()[..nt].to_vec(),
        x1,
        x2,
        terminal_x1,
        terminal_x2,
        structure,
        vanish_time,
        far_field: xs[last],
    }
}

/// Re-solves the bear-face problem at several horizons and reports the lower
/// boundary at calendar time zero for each.
///
/// Requires the bear drift to equal the risk-free rate. Fails with a grid
/// error when the boundary reaches the truncated far field or no contact
/// exists at time zero, signalling that `x_max` must be enlarged.
pub fn boundary_growth_probe(
    params: &ModelParams,
    horizons: &[f64],
    x_max: f64,
    nx: usize,
    steps_per_year: f64,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    if params.r != params.b {
        return Err(Error::domain(format!(
            "growth probe needs r = b exactly, got r={} b={}",
            params.r, params.b
        )));
    }
    let mut out = Vec::with_capacity(horizons.len());
    for &horizon in horizons {
        let p = ModelParams {
            maturity: horizon,
            ..*params
        };
        let nt = ((horizon * steps_per_year).round() as usize).max(64);
        let grid = Grid1D::new(p.k / 50.0, x_max, nx, horizon, nt, p.k)?;
        let curve = solve_vi_1d(&p, DriftBranch::Bear, &grid, opts)?;
        let boundary = extract_boundary(&curve, opts.contact_tol);
        match boundary.x1()[0] {
            None => {
                return Err(Error::grid(format!(
                    "no contact at time zero for horizon {horizon}; enlarge x_max={x_max}"
                )))
            }
            Some(x1) if x1 >= boundary.far_field() => {
                return Err(Error::grid(format!(
                    "lower boundary hit the truncation edge for horizon {horizon}; \
                     enlarge x_max={x_max}"
                )))
            }
            Some(x1) => out.push(x1),
        }
    }
    Ok(out)
}
