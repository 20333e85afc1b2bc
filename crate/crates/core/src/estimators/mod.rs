//! Conditional-mean and conditional-quantile estimation.
//!
//! The wage model is estimated twice over: once by least squares for the mean
//! coefficients, and once per grid quantile by check-loss minimization. The
//! spread of the quantile coefficients around the mean coefficients is then
//! summarized by the dispersion matrix [`GammaCovariance`], the key input of
//! the within (heterogeneity) channel of the decomposition.

mod interior_point;

pub use interior_point::{GAP_TOLERANCE, MAX_ITERATIONS};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model_frame::DesignMatrix;

/// Relative eigenvalue band inside which the dispersion matrix is clipped to
/// positive semidefinite; anything lower is a hard error.
pub const OMEGA_PSD_BAND: f64 = 1e-10;

/// Residual scale below which the least-squares fit interpolates the data and
/// is returned as the quantile solution for every tau (zero check loss).
const EXACT_FIT_REL: f64 = 1e-12;

/// Least-squares fit of the conditional mean.
///
/// `fitted + residuals` reassembles `w` (up to one rounding each), and the
/// residuals are orthogonal to the columns of the design.
#[derive(Debug, Clone)]
pub struct MeanFit {
    /// Coefficients, ordered like the design columns.
    pub beta: DVector<f64>,
    /// `w - X beta`.
    pub residuals: DVector<f64>,
    /// `X beta`.
    pub fitted: DVector<f64>,
}

/// Uniform, symmetric quantile grid on `[t, 1 - t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    taus: Vec<f64>,
    trim: f64,
    mesh: f64,
}

impl QuantileGrid {
    /// Builds the grid `{lo, lo + step, ..., hi}`.
    ///
    /// # Errors
    /// [`Error::InvalidGrid`] unless `0 < lo < 0.5`, `hi == 1 - lo` (to 1e-12),
    /// the step divides the span evenly (spacing uniform to 1e-12) and every
    /// point lies strictly inside (0, 1).
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let fail = |reason: &str| Error::InvalidGrid {
            reason: format!("{reason} (lo={lo}, hi={hi}, step={step})"),
        };
        if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0) {
            return Err(fail("endpoints and step must be finite, step positive"));
        }
        if !(0.0 < lo && lo < 0.5) {
            return Err(fail("lower trim must satisfy 0 < t < 0.5"));
        }
        if ((1.0 - hi) - lo).abs() > 1e-12 {
            return Err(fail("grid must be symmetric: hi = 1 - lo"));
        }
        let count = ((hi - lo) / step).round() as usize + 1;
        if count < 2 {
            return Err(fail("grid needs at least two points"));
        }
        let last = lo + (count - 1) as f64 * step;
        if (last - hi).abs() > 1e-12 {
            return Err(fail("step does not divide the span evenly"));
        }
        let taus: Vec<f64> = (0..count).map(|m| lo + m as f64 * step).collect();
        if taus.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
            return Err(fail("all grid points must lie strictly inside (0, 1)"));
        }
        Ok(QuantileGrid {
            taus,
            trim: lo,
            mesh: step,
        })
    }

    /// Grid points, strictly increasing.
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Number of grid points M.
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    /// True when the grid is empty (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Symmetric trim t with `taus[0] = t` and `taus[M-1] = 1 - t`.
    pub fn trim(&self) -> f64 {
        self.trim
    }

    /// Common spacing between adjacent grid points.
    pub fn mesh(&self) -> f64 {
        self.mesh
    }
}

impl Default for QuantileGrid {
    /// The 199-point grid `{0.005, 0.010, ..., 0.990, 0.995}`.
    fn default() -> Self {
        QuantileGrid::new(0.005, 0.995, 0.005).expect("default grid is valid")
    }
}

/// Quantile-regression coefficients over a grid, one row per grid point.
#[derive(Debug, Clone)]
pub struct QuantileProfile {
    /// The grid the rows were fitted on.
    pub grid: QuantileGrid,
    /// M-by-p coefficient matrix; row m solves the check-loss problem at tau_m.
    pub alpha: DMatrix<f64>,
}

/// Dispersion of the quantile coefficients around the mean coefficients:
/// the average outer product of `alpha(tau_m) - beta` over the grid.
///
/// Symmetric positive semidefinite by construction (tiny negative rounding
/// eigenvalues are clipped; see [`estimate_omega`]).
#[derive(Debug, Clone)]
pub struct GammaCovariance {
    omega: DMatrix<f64>,
}

impl GammaCovariance {
    /// The p-by-p dispersion matrix.
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Wraps an externally built dispersion matrix (e.g. an analytic one),
    /// enforcing symmetry and the PSD band.
    pub fn from_matrix(omega: DMatrix<f64>) -> Result<Self> {
        if omega.nrows() != omega.ncols() {
            return Err(Error::DimensionMismatch {
                context: "estimators: dispersion matrix",
                left: omega.nrows(),
                right: omega.ncols(),
            });
        }
        let sym = (&omega + omega.transpose()) * 0.5;
        repair_psd(sym)
    }
}

/// Fits the conditional mean by least squares.
///
/// # Errors
/// [`Error::SingularSystem`] if the factorization cannot solve the normal
/// problem (the design rank check makes this unlikely).
pub fn fit_ols(design: &DesignMatrix) -> Result<MeanFit> {
    let qr = design.x().clone().col_piv_qr();
    let beta = qr
        .solve(design.w())
        .ok_or(Error::SingularSystem { context: "least squares" })?;
    let fitted = design.x() * &beta;
    let residuals = design.w() - &fitted;
    Ok(MeanFit {
        beta,
        residuals,
        fitted,
    })
}

/// Check-loss objective `sum_i rho_tau(w_i - x_i' beta)` of a coefficient
/// vector, with `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(design: &DesignMatrix, beta: &DVector<f64>, tau: f64) -> f64 {
    let r = design.w() - design.x() * beta;
    r.iter()
        .map(|&u| (tau * u).max((tau - 1.0) * u))
        .sum()
}

/// Centered wage scale `mean |w - mean(w)|` used for scale-free stopping.
fn centered_scale(w: &DVector<f64>) -> f64 {
    let mean = w.mean();
    w.iter().map(|wi| (wi - mean).abs()).sum::<f64>() / w.len() as f64
}

/// Fits one quantile regression by the interior-point method.
///
/// The solver returns *a* minimizer of the (possibly non-unique) convex
/// problem; downstream comparisons should go through objective values or
/// fitted quantiles unless the optimum is unique.
///
/// # Errors
/// [`Error::InvalidTau`] outside (0, 1), plus solver failures as in
/// [`interior_point::solve`].
pub fn fit_quantile(design: &DesignMatrix, tau: f64) -> Result<DVector<f64>> {
    let ols = fit_ols(design)?;
    let scale = centered_scale(design.w());
    fit_quantile_with_start(design, tau, &ols, scale)
}

/// Shared implementation: one quantile fit reusing a precomputed mean fit.
fn fit_quantile_with_start(
    design: &DesignMatrix,
    tau: f64,
    ols: &MeanFit,
    scale: f64,
) -> Result<DVector<f64>> {
    if !(tau.is_finite() && 0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    // Constant wages, or wages fitted exactly by the mean equation: the
    // least-squares coefficients interpolate, so the check loss is (near)
    // zero at every tau and no iteration is needed.
    let max_resid = ols.residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    if scale == 0.0 || max_resid <= EXACT_FIT_REL * scale {
        return Ok(ols.beta.clone());
    }
    interior_point::solve(design.x(), design.w(), tau, &ols.beta, scale)
}

/// Fits the whole quantile grid, distributing quantiles across workers.
///
/// Row m equals `fit_quantile(design, taus[m])`; rows are assembled by grid
/// index, so the profile is identical regardless of worker count.
///
/// # Errors
/// Propagates the first per-quantile failure (the error names the tau).
pub fn fit_profile(design: &DesignMatrix, grid: &QuantileGrid) -> Result<QuantileProfile> {
    let ols = fit_ols(design)?;
    let scale = centered_scale(design.w());
    let rows: Vec<DVector<f64>> = grid
        .taus()
        .par_iter()
        .map(|&tau| fit_quantile_with_start(design, tau, &ols, scale))
        .collect::<Result<_>>()?;
    let p = design.p();
    let mut alpha = DMatrix::<f64>::zeros(grid.len(), p);
    for (m, row) in rows.iter().enumerate() {
        for j in 0..p {
            alpha[(m, j)] = row[j];
        }
    }
    Ok(QuantileProfile {
        grid: grid.clone(),
        alpha,
    })
}

/// Builds the dispersion matrix: the grid average of the outer products of
/// `alpha(tau_m) - beta`.
///
/// # Errors
/// [`Error::DimensionMismatch`] when the profile and the mean fit disagree on
/// p, and [`Error::NotPositiveSemidefinite`] when rounding damage exceeds the
/// [`OMEGA_PSD_BAND`] repair band (within the band, negative eigenvalues are
/// clipped to zero).
pub fn estimate_omega(profile: &QuantileProfile, mean_fit: &MeanFit) -> Result<GammaCovariance> {
    let p = mean_fit.beta.len();
    if profile.alpha.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "estimators: profile vs mean fit",
            left: profile.alpha.ncols(),
            right: p,
        });
    }
    let m_count = profile.alpha.nrows();
    let mut omega = DMatrix::<f64>::zeros(p, p);
    let mut dev = DVector::<f64>::zeros(p);
    for m in 0..m_count {
        for j in 0..p {
            dev[j] = profile.alpha[(m, j)] - mean_fit.beta[j];
        }
        for j in 0..p {
            for k in j..p {
                omega[(j, k)] += dev[j] * dev[k];
            }
        }
    }
    let inv_m = 1.0 / m_count as f64;
    for j in 0..p {
        for k in j..p {
            let value = omega[(j, k)] * inv_m;
            omega[(j, k)] = value;
            omega[(k, j)] = value;
        }
    }
    repair_psd(omega)
}

/// Clips eigenvalues in `(-OMEGA_PSD_BAND * trace, 0)` to zero; larger
/// violations are reported as errors.
fn repair_psd(omega: DMatrix<f64>) -> Result<GammaCovariance> {
    let trace = omega.trace();
    let eigen = omega.clone().symmetric_eigen();
    let min_eig = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        return Ok(GammaCovariance { omega });
    }
    if min_eig < -OMEGA_PSD_BAND * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite {
            eigenvalue: min_eig,
            trace,
        });
    }
    let mut clipped = eigen.eigenvalues.clone();
    clipped.iter_mut().for_each(|l| *l = l.max(0.0));
    let rebuilt =
        &eigen.eigenvectors * DMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
    let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
    Ok(GammaCovariance { omega: sym })
}

/// Exhaustive exact oracle for small check-loss problems.
///
/// Some optimal solution of the convex check-loss problem interpolates p
/// observations, so enumerating every p-row subset, solving it exactly and
/// keeping the feasible candidate with the smallest objective yields the
/// global optimum. Intended for tests; the budget caps the combinatorics.
///
/// # Errors
/// [`Error::OracleBudget`] for `n > 15` or `p > 4`, [`Error::OracleDegenerate`]
/// when every subset is singular, [`Error::InvalidTau`] outside (0, 1).
pub fn qr_oracle_smalln(design: &DesignMatrix, tau: f64) -> Result<DVector<f64>> {
    if !(tau.is_finite() && 0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    let n = design.n();
    let p = design.p();
    if n > 15 || p > 4 {
        return Err(Error::OracleBudget { n, p });
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = (0..p).collect();
    loop {
        if let Some(candidate) = solve_subset(design, &subset) {
            let objective = check_loss(design, &candidate, tau);
            let better = match &best {
                None => true,
                Some((obj, _)) => objective < *obj,
            };
            if better {
                best = Some((objective, candidate));
            }
        }
        if !advance_combination(&mut subset, n) {
            break;
        }
    }
    match best {
        Some((_, beta)) => Ok(beta),
        None => Err(Error::OracleDegenerate { p }),
    }
}

/// Interpolates the rows in `subset` exactly, if they are independent.
fn solve_subset(design: &DesignMatrix, subset: &[usize]) -> Option<DVector<f64>> {
    let p = subset.len();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (row, &i) in subset.iter().enumerate() {
        for j in 0..p {
            a[(row, j)] = design.x()[(i, j)];
        }
        rhs[row] = design.w()[i];
    }
    let solution = a.full_piv_lu().solve(&rhs)?;
    solution.iter().all(|v| v.is_finite()).then_some(solution)
}

/// Advances `subset` to the next p-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn advance_combination(subset: &mut [usize], n: usize) -> bool {
    let p = subset.len();
    let mut i = p;
    while i > 0 {
        i -= 1;
        if subset[i] < n - (p - i) {
            subset[i] += 1;
            for k in i + 1..p {
                subset[k] = subset[k - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn intercept_only(w: &[f64]) -> DesignMatrix {
        DesignMatrix::from_parts(
            DVector::from_column_slice(w),
            DMatrix::from_element(w.len(), 1, 1.0),
        )
        .unwrap()
    }

    fn squared_design(h: &[f64], w: &[f64]) -> DesignMatrix {
        let n = h.len();
        let mut x = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = h[i];
            x[(i, 2)] = h[i] * h[i];
        }
        DesignMatrix::from_parts(DVector::from_column_slice(w), x).unwrap()
    }

    #[test]
    fn ols_recovers_an_exact_quadratic() {
        let design = squared_design(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]);
        let fit = fit_ols(&design).unwrap();
        assert_relative_eq!(fit.beta[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[2], 1.0, epsilon = 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn intercept_only_ols_is_the_mean() {
        let fit = fit_ols(&intercept_only(&[1.0, 2.0, 3.0])).unwrap();
        assert_relative_eq!(fit.beta[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ols_residuals_are_orthogonal_and_reassemble_w() {
        // Deterministic pseudo-random instance, n=50, p=3.
        let n = 50;
        let mut h = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut state = 88172645463325252u64;
        let mut unit = || {
            // xorshift; plenty for a fixture
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..n {
            let hi = 16.0 * unit();
            h.push(hi);
            w.push(0.5 + 0.08 * hi + 0.003 * hi * hi + (unit() - 0.5));
        }
        let design = squared_design(&h, &w);
        let fit = fit_ols(&design).unwrap();
        let xtr = design.x().transpose() * &fit.residuals;
        let max_x = design.x().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-8 * n as f64 * max_x;
        assert!(xtr.iter().all(|v| v.abs() <= tol), "X'r = {xtr:?}");
        for i in 0..n {
            assert_relative_eq!(
                fit.fitted[i] + fit.residuals[i],
                design.w()[i],
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn median_of_three_is_the_middle_value() {
        let design = intercept_only(&[1.0, 2.0, 3.0]);
        let alpha = fit_quantile(&design, 0.5).unwrap();
        assert_relative_eq!(alpha[0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(check_loss(&design, &alpha, 0.5), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn even_sample_median_is_checked_by_objective_value() {
        // Any value in [2, 3] minimizes; the optimum objective is 5.0:
        // 0.5(|1-a| + |2-a| + |3-a| + |10-a|) = 5 for a in [2, 3].
        let design = intercept_only(&[1.0, 2.0, 3.0, 10.0]);
        let alpha = fit_quantile(&design, 0.5).unwrap();
        assert!(alpha[0] >= 2.0 - 1e-6 && alpha[0] <= 3.0 + 1e-6, "{}", alpha[0]);
        assert_relative_eq!(check_loss(&design, &alpha, 0.5), 5.0, epsilon = 1e-7);
    }

    #[test]
    fn default_grid_matches_the_reporting_convention() {
        let grid = QuantileGrid::default();
        assert_eq!(grid.len(), 199);
        assert_relative_eq!(grid.taus()[0], 0.005, epsilon = 1e-15);
        assert_relative_eq!(grid.taus()[198], 0.995, epsilon = 1e-12);
        assert_relative_eq!(grid.mesh(), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn asymmetric_grid_is_rejected() {
        assert!(QuantileGrid::new(0.01, 0.95, 0.01).is_err());
        assert!(QuantileGrid::new(0.0, 1.0, 0.1).is_err());
        assert!(QuantileGrid::new(0.1, 0.9, 0.15).is_err());
    }

    #[test]
    fn profile_rows_match_breakpoint_quantiles() {
        // Intercept-only w = {1,2,3,4}: the check-loss optimum at tau is an
        // order statistic whenever n*tau is not an integer; at tau in
        // {0.25, 0.5, 0.75} the objective is checked against enumeration.
        let design = intercept_only(&[1.0, 2.0, 3.0, 4.0]);
        let grid = QuantileGrid::new(0.25, 0.75, 0.25).unwrap();
        let profile = fit_profile(&design, &grid).unwrap();
        for (m, &tau) in grid.taus().iter().enumerate() {
            let fitted = DVector::from_column_slice(&[profile.alpha[(m, 0)]]);
            let oracle = qr_oracle_smalln(&design, tau).unwrap();
            assert_relative_eq!(
                check_loss(&design, &fitted, tau),
                check_loss(&design, &oracle, tau),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn constant_wages_fit_with_zero_loss() {
        let design = squared_design(&[0.0, 1.0, 2.0, 3.0], &[5.0, 5.0, 5.0, 5.0]);
        let grid = QuantileGrid::new(0.25, 0.75, 0.25).unwrap();
        let profile = fit_profile(&design, &grid).unwrap();
        for m in 0..grid.len() {
            let beta = DVector::from_column_slice(&[
                profile.alpha[(m, 0)],
                profile.alpha[(m, 1)],
                profile.alpha[(m, 2)],
            ]);
            let fitted = design.x() * &beta;
            assert!(fitted.iter().all(|f| (f - 5.0).abs() < 1e-9));
            assert!(check_loss(&design, &beta, grid.taus()[m]).abs() < 1e-9);
        }
    }

    #[test]
    fn omega_of_a_constant_profile_is_zero() {
        let design = squared_design(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.5, 9.0]);
        let fit = fit_ols(&design).unwrap();
        let mut alpha = DMatrix::<f64>::zeros(4, 3);
        for m in 0..4 {
            for j in 0..3 {
                alpha[(m, j)] = fit.beta[j];
            }
        }
        let profile = QuantileProfile {
            grid: QuantileGrid::new(0.2, 0.8, 0.2).unwrap(),
            alpha,
        };
        let omega = estimate_omega(&profile, &fit).unwrap();
        assert!(omega.omega().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn omega_of_a_symmetric_two_row_profile() {
        let design = squared_design(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.5, 9.0]);
        let fit = fit_ols(&design).unwrap();
        let mut alpha = DMatrix::<f64>::zeros(2, 3);
        for (m, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            alpha[(m, 0)] = fit.beta[0] + sign;
            alpha[(m, 1)] = fit.beta[1];
            alpha[(m, 2)] = fit.beta[2];
        }
        let profile = QuantileProfile {
            grid: QuantileGrid::new(0.25, 0.75, 0.5).unwrap(),
            alpha,
        };
        let omega = estimate_omega(&profile, &fit).unwrap();
        assert_relative_eq!(omega.omega()[(0, 0)], 1.0, epsilon = 1e-14);
        for (j, k) in [(0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
            assert_eq!(omega.omega()[(j, k)], 0.0, "({j},{k})");
        }
    }

    #[test]
    fn oracle_handles_the_trivial_median() {
        let design = intercept_only(&[1.0, 2.0, 3.0]);
        let beta = qr_oracle_smalln(&design, 0.5).unwrap();
        assert_relative_eq!(check_loss(&design, &beta, 0.5), 1.0, epsilon = 1e-14);
        assert_relative_eq!(beta[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn oracle_budget_guard_fires_at_sixteen_rows() {
        let w: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let design = intercept_only(&w);
        assert!(matches!(
            qr_oracle_smalln(&design, 0.5),
            Err(Error::OracleBudget { n: 16, p: 1 })
        ));
    }

    #[test]
    fn combination_generator_is_exhaustive() {
        let mut subset = vec![0usize, 1];
        let mut seen = vec![subset.clone()];
        while advance_combination(&mut subset, 4) {
            seen.push(subset.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }
}
