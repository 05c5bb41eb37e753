//! Thomas algorithm for tridiagonal systems.

/// Reusable forward-elimination buffers.
#[derive(Debug, Default, Clone)]
pub(crate) struct ThomasScratch {
    cp: Vec<f64>,
    dp: Vec<f64>,
}

impl ThomasScratch {
    pub(crate) fn with_capacity(n: usize) -> Self {
        ThomasScratch {
            cp: vec![0.0; n],
            dp: vec![0.0; n],
        }
    }
}

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` in place
/// of `out`. `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    out: &mut [f64],
    scratch: &mut ThomasScratch,
) {
    let n = diag.len();
    debug_assert!(n > 0 && lower.len() == n && upper.len() == n && rhs.len() == n);
    scratch.cp.resize(n, 0.0);
    scratch.dp.resize(n, 0.0);
    let cp = &mut scratch.cp;
    let dp = &mut scratch.dp;

    let mut denom = diag[0];
    cp[0] = upper[0] / denom;
    dp[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / denom;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom;
    }
    out[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = dp[i] - cp[i] * out[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_known_system() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3, 10, 9] -> x = [0.5, 2, 3.5]
        let lower = [0.0, 1.0, 1.0];
        let diag = [2.0, 3.0, 2.0];
        let upper = [1.0, 1.0, 0.0];
        let rhs = [3.0, 10.0, 9.0];
        let mut out = [0.0; 3];
        let mut scratch = ThomasScratch::default();
        solve(&lower, &diag, &upper, &rhs, &mut out, &mut scratch);
        for (got, want) in out.iter().zip([0.5, 2.0, 3.5]) {
            assert!((got - want).abs() < 1e-12, "{out:?}");
        }
    }
}
