//! Spatial/temporal grids shared by the finite-difference solvers.
//!
//! Price nodes are log-uniform and anchored so that the principal `K` falls
//! exactly on a node; the payoff kink is then grid-aligned for every solve,
//! which keeps contact-set detection consistent across grids.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Log-uniform price grid times a uniform time grid on `[0, T]`.
#[derive(Debug, Clone)]
pub struct Grid1D {
    xs: Vec<f64>,
    ts: Vec<f64>,
    dy: f64,
    dt: f64,
    k_index: usize,
}

impl Grid1D {
    /// Builds a grid with `nx` log-uniform price nodes spanning roughly
    /// `[x_min, x_max]` (shifted by at most half a cell so that `k_anchor` is
    /// a node) and `nt` time steps over `[0, horizon]`.
    pub fn new(
        x_min: f64,
        x_max: f64,
        nx: usize,
        horizon: f64,
        nt: usize,
        k_anchor: f64,
    ) -> Result<Self> {
        if !(x_min > 0.0) || !(x_max > x_min) {
            return Err(Error::grid(format!(
                "price range must satisfy 0 < x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if nx < 16 || nt < 16 {
            return Err(Error::grid(format!(
                "node counts must be >= 16, got nx={nx} nt={nt}"
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::grid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(k_anchor > x_min && k_anchor < x_max) {
            return Err(Error::grid(format!(
                "anchor {k_anchor} must lie strictly inside [{x_min}, {x_max}]"
            )));
        }
        let dy = (x_max / x_min).ln() / (nx - 1) as f64;
        let k_index = ((k_anchor / x_min).ln() / dy).round() as usize;
        let k_index = k_index.clamp(1, nx - 2);
        let xs: Vec<f64> = (0..nx)
            .map(|i| k_anchor * ((i as f64 - k_index as f64) * dy).exp())
            .collect();
        let dt = horizon / nt as f64;
        let ts: Vec<f64> = (0..=nt).map(|m| m as f64 * dt).collect();
        Ok(Grid1D {
            xs,
            ts,
            dy,
            dt,
            k_index,
        })
    }

    /// Default solver grid for the given parameters: 400 price nodes over
    /// `[K/50, 4*max(K, upper-contact bound)]`, time step near 1/200 year.
    pub fn default_for(params: &ModelParams) -> Result<Self> {
        let x_max = 4.0 * params.contact_upper_bound();
        let nt = ((params.maturity * 200.0).round() as usize).max(64);
        Grid1D::new(params.k / 50.0, x_max, 400, params.maturity, nt, params.k)
    }

    /// Checks that the truncated domain is wide enough for the contact set of
    /// `params` (redemption never extends past four times the analytic upper
    /// bound on the contact interval).
    pub fn validate_domain(&self, params: &ModelParams) -> Result<()> {
        let required = 4.0 * params.contact_upper_bound();
        let have = self.x_max();
        // Half a cell of anchoring slack.
        if have < required * (-self.dy / 2.0).exp() {
            return Err(Error::grid(format!(
                "x_max={have:.3} is below the required domain width {required:.3}"
            )));
        }
        Ok(())
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    /// Number of time steps (`ts` has `nt() + 1` nodes).
    pub fn nt(&self) -> usize {
        self.ts.len() - 1
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    /// Index of the node equal to the anchor `K`.
    pub fn k_index(&self) -> usize {
        self.k_index
    }
}

/// Price-by-belief-by-time grid; belief nodes include both faces.
#[derive(Debug, Clone)]
pub struct Grid2D {
    x: Grid1D,
    pis: Vec<f64>,
}

impl Grid2D {
    pub fn new(
        x_min: f64,
        x_max: f64,
        nx: usize,
        npi: usize,
        horizon: f64,
        nt: usize,
        k_anchor: f64,
    ) -> Result<Self> {
        if npi < 16 {
            return Err(Error::grid(format!(
                "belief node count must be >= 16, got {npi}"
            )));
        }
        let x = Grid1D::new(x_min, x_max, nx, horizon, nt, k_anchor)?;
        let dpi = 1.0 / (npi - 1) as f64;
        let mut pis: Vec<f64> = (0..npi).map(|j| j as f64 * dpi).collect();
        // Nail the faces exactly.
        pis[0] = 0.0;
        pis[npi - 1] = 1.0;
        Ok(Grid2D { x, pis })
    }

    /// Default 2-D grid: 200 x-nodes, 101 belief nodes, time step near 1/200.
    pub fn default_for(params: &ModelParams) -> Result<Self> {
        let x_max = 4.0 * params.contact_upper_bound();
        let nt = ((params.maturity * 200.0).round() as usize).max(64);
        Grid2D::new(
            params.k / 50.0,
            x_max,
            200,
            101,
            params.maturity,
            nt,
            params.k,
        )
    }

    pub fn x_axis(&self) -> &Grid1D {
        &self.x
    }

    pub fn xs(&self) -> &[f64] {
        self.x.xs()
    }

    pub fn ts(&self) -> &[f64] {
        self.x.ts()
    }

    pub fn pis(&self) -> &[f64] {
        &self.pis
    }

    pub fn nx(&self) -> usize {
        self.x.nx()
    }

    pub fn npi(&self) -> usize {
        self.pis.len()
    }

    pub fn nt(&self) -> usize {
        self.x.nt()
    }

    pub fn dy(&self) -> f64 {
        self.x.dy()
    }

    pub fn dpi(&self) -> f64 {
        1.0 / (self.npi() - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.x.dt()
    }

    pub fn k_index(&self) -> usize {
        self.x.k_index()
    }
}
