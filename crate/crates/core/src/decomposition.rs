//! Covariate moments, their location-shift derivatives, and the
//! between/within decomposition of the inequality response.
//!
//! The inequality index is the variance of log wages, which the model splits
//! as `I = beta'V beta + tr(Omega V) + E'Omega E` (law of total variance under
//! the random-coefficient wage equation). A small uniform translation of
//! education moves the covariate moments; their derivatives have closed forms
//! (`de`, `dv` below), and the chain rule splits the total response into
//!
//! * **between** — `beta' dv beta`, driven by convexity of the mean equation;
//! * **within** — `tr(Omega dv) + 2 E' Omega de`, driven by heterogeneity of
//!   the quantile coefficients around the mean coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::GammaCovariance;
use crate::model_frame::DesignMatrix;

/// Totals below this magnitude get no percentage shares (division would be
/// numerically meaningless).
pub const SHARE_TOTAL_FLOOR: f64 = 1e-12;

/// Denominator convention for covariance estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentConvention {
    /// Divide by n. Default: the moment identities `V_jk = E_{j+k} - E_j E_k`
    /// that make the closed-form and matrix decompositions agree exactly hold
    /// only under this convention.
    Population,
    /// Divide by n - 1 (the unbiased sample estimator); differs from the
    /// population convention by O(1/n).
    Sample,
}

impl std::fmt::Display for MomentConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MomentConvention::Population => write!(f, "population"),
            MomentConvention::Sample => write!(f, "sample"),
        }
    }
}

/// Covariate means, covariances, and their location-shift derivatives.
#[derive(Debug, Clone)]
pub struct MomentSet {
    /// Column means of the design (entry 0 is exactly 1).
    pub e: DVector<f64>,
    /// Covariance matrix of the design columns (row/col 0 identically zero).
    pub v: DMatrix<f64>,
    /// Derivative of `e` under a unit education shift: `(0, 1, 2 E_1, 0...)`.
    pub de: DVector<f64>,
    /// Derivative of `v` under a unit education shift; nonzero entries are
    /// `dv[1,2] = dv[2,1] = 2 V_11`, `dv[2,2] = 4 V_12` and the square-column
    /// control block `dv[2,z] = dv[z,2] = 2 Cov(h, z)`.
    pub dv: DMatrix<f64>,
    /// Denominator convention both `v` and `dv` were computed under.
    pub convention: MomentConvention,
}

/// Scalar population moments of the no-controls wage model, the inputs of the
/// worked-example closed form.
#[derive(Debug, Clone, Copy)]
pub struct SimpleMoments {
    /// Mean education.
    pub e1: f64,
    /// Mean squared education.
    pub e2: f64,
    /// Mean cubed education.
    pub e3: f64,
    /// Variance of education.
    pub v11: f64,
    /// Covariance of education and its square.
    pub v12: f64,
}

/// Output of [`decompose`].
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionResult {
    /// Level of the inequality index implied by the inputs.
    pub inequality_level: f64,
    /// Convexity channel `beta' dv beta`.
    pub ef_between: f64,
    /// Heterogeneity channel `tr(Omega dv) + 2 E' Omega de`.
    pub ef_within: f64,
    /// Total response; always the exact floating-point sum of the two effects.
    pub total: f64,
    /// `ef_between / total`, absent when |total| < [`SHARE_TOTAL_FLOOR`].
    pub share_between: Option<f64>,
    /// `ef_within / total`, absent when |total| < [`SHARE_TOTAL_FLOOR`].
    pub share_within: Option<f64>,
}

/// The three additive pieces of the inequality level.
#[derive(Debug, Clone, Copy)]
pub struct InequalityTerms {
    /// `beta' V beta`: variance of the conditional mean.
    pub mean_variance: f64,
    /// `tr(Omega V)`: dispersion of the slopes across quantiles.
    pub slope_dispersion: f64,
    /// `E' Omega E`: dispersion evaluated at the mean covariates.
    pub mean_point_dispersion: f64,
}

impl InequalityTerms {
    /// Sum of the three terms.
    pub fn level(&self) -> f64 {
        self.mean_variance + self.slope_dispersion + self.mean_point_dispersion
    }
}

/// Computes covariate moments and their shift derivatives from a design.
///
/// # Arguments
/// * `design` - a wage-layout design matrix `[1, h, h^2, z...]`.
/// * `convention` - denominator for the covariances.
///
/// # Errors
/// Layout violations ([`DesignMatrix::check_wage_layout`]) and
/// [`Error::SampleTooSmall`] for the sample convention with n < 2.
pub fn compute_moments(design: &DesignMatrix, convention: MomentConvention) -> Result<MomentSet> {
    design.check_wage_layout()?;
    let n = design.n();
    let p = design.p();
    if convention == MomentConvention::Sample && n < 2 {
        return Err(Error::SampleTooSmall { n });
    }
    let denominator = match convention {
        MomentConvention::Population => n as f64,
        MomentConvention::Sample => (n - 1) as f64,
    };

    let x = design.x();
    let mut e = DVector::<f64>::zeros(p);
    for j in 0..p {
        e[j] = x.column(j).sum() / n as f64;
    }
    e[0] = 1.0;

    // Two-pass centered covariances; the intercept row/col stays exactly zero.
    let mut v = DMatrix::<f64>::zeros(p, p);
    for j in 1..p {
        for k in j..p {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (x[(i, j)] - e[j]) * (x[(i, k)] - e[k]);
            }
            let value = acc / denominator;
            v[(j, k)] = value;
            v[(k, j)] = value;
        }
    }

    let mut de = DVector::<f64>::zeros(p);
    de[1] = 1.0;
    de[2] = 2.0 * e[1];

    let mut dv = DMatrix::<f64>::zeros(p, p);
    dv[(1, 2)] = 2.0 * v[(1, 1)];
    dv[(2, 1)] = dv[(1, 2)];
    dv[(2, 2)] = 4.0 * v[(1, 2)];
    for j in 3..p {
        dv[(2, j)] = 2.0 * v[(1, j)];
        dv[(j, 2)] = dv[(2, j)];
    }

    Ok(MomentSet {
        e,
        v,
        de,
        dv,
        convention,
    })
}

impl MomentSet {
    /// Builds an analytic no-controls moment set from scalar moments, filling
    /// the shift derivatives by their closed forms.
    ///
    /// `v22` is the variance of squared education (it never enters the
    /// derivatives, but the covariance matrix needs it). The caller is
    /// responsible for using population-consistent scalars when exact
    /// agreement with the worked-example formulas is needed.
    pub fn from_simple(simple: SimpleMoments, v22: f64) -> Self {
        let e = DVector::from_column_slice(&[1.0, simple.e1, simple.e2]);
        let mut v = DMatrix::<f64>::zeros(3, 3);
        v[(1, 1)] = simple.v11;
        v[(1, 2)] = simple.v12;
        v[(2, 1)] = simple.v12;
        v[(2, 2)] = v22;
        let de = DVector::from_column_slice(&[0.0, 1.0, 2.0 * simple.e1]);
        let mut dv = DMatrix::<f64>::zeros(3, 3);
        dv[(1, 2)] = 2.0 * simple.v11;
        dv[(2, 1)] = dv[(1, 2)];
        dv[(2, 2)] = 4.0 * simple.v12;
        MomentSet {
            e,
            v,
            de,
            dv,
            convention: MomentConvention::Population,
        }
    }

    fn check_dims(&self, beta: &DVector<f64>, omega: &GammaCovariance) -> Result<()> {
        let p = self.e.len();
        if beta.len() != p {
            return Err(Error::DimensionMismatch {
                context: "decomposition: beta vs moments",
                left: beta.len(),
                right: p,
            });
        }
        if omega.omega().nrows() != p {
            return Err(Error::DimensionMismatch {
                context: "decomposition: omega vs moments",
                left: omega.omega().nrows(),
                right: p,
            });
        }
        Ok(())
    }
}

/// The three additive terms of the inequality level, separately.
pub fn inequality_terms(
    beta: &DVector<f64>,
    omega: &GammaCovariance,
    moments: &MomentSet,
) -> Result<InequalityTerms> {
    moments.check_dims(beta, omega)?;
    let om = omega.omega();
    Ok(InequalityTerms {
        mean_variance: quadratic_form(&moments.v, beta),
        slope_dispersion: trace_product(om, &moments.v),
        mean_point_dispersion: quadratic_form(om, &moments.e),
    })
}

/// Level of the inequality index: `beta'V beta + tr(Omega V) + E'Omega E`.
pub fn inequality_level(
    beta: &DVector<f64>,
    omega: &GammaCovariance,
    moments: &MomentSet,
) -> Result<f64> {
    Ok(inequality_terms(beta, omega, moments)?.level())
}

/// Splits the location-shift response of the inequality level into the
/// between (convexity) and within (heterogeneity) channels.
pub fn decompose(
    beta: &DVector<f64>,
    omega: &GammaCovariance,
    moments: &MomentSet,
) -> Result<DecompositionResult> {
    moments.check_dims(beta, omega)?;
    let om = omega.omega();
    let ef_between = quadratic_form(&moments.dv, beta);
    let ef_within = trace_product(om, &moments.dv) + 2.0 * bilinear_form(om, &moments.e, &moments.de);
    let total = ef_between + ef_within;
    let (share_between, share_within) = if total.abs() < SHARE_TOTAL_FLOOR {
        (None, None)
    } else {
        (Some(ef_between / total), Some(ef_within / total))
    };
    Ok(DecompositionResult {
        inequality_level: inequality_level(beta, omega, moments)?,
        ef_between,
        ef_within,
        total,
        share_between,
        share_within,
    })
}

/// Worked-example closed forms for the no-controls model:
/// `between = 4 (beta1 V11 + beta2 V12) beta2` and
/// `within = 2 [Omega01 + 2 Omega02 E1 + 3 Omega12 E2 + Omega11 E1 + 2 Omega22 E3]`.
///
/// Agrees with [`decompose`] exactly (to rounding) whenever the scalar moments
/// satisfy the population identities `E2 = V11 + E1^2` and `E3 = V12 + E1 E2`.
///
/// # Errors
/// [`Error::DimensionMismatch`] unless `omega` is 3-by-3.
pub fn closed_form_simple(
    beta: &[f64; 3],
    omega: &DMatrix<f64>,
    simple: SimpleMoments,
) -> Result<(f64, f64)> {
    if omega.nrows() != 3 || omega.ncols() != 3 {
        return Err(Error::DimensionMismatch {
            context: "decomposition: closed form omega",
            left: omega.nrows(),
            right: 3,
        });
    }
    let between = 4.0 * (beta[1] * simple.v11 + beta[2] * simple.v12) * beta[2];
    let within = 2.0
        * (omega[(0, 1)]
            + 2.0 * omega[(0, 2)] * simple.e1
            + 3.0 * omega[(1, 2)] * simple.e2
            + omega[(1, 1)] * simple.e1
            + 2.0 * omega[(2, 2)] * simple.e3);
    Ok((between, within))
}

/// The three textbook special cases of the no-controls model.
#[derive(Debug, Clone, Copy)]
pub enum CaseSpec {
    /// Linear homoskedastic wages: no convexity, no slope heterogeneity.
    LinearHomoskedastic,
    /// Quadratic mean with homoskedastic noise; only the convexity channel is
    /// active. The printed formula `4 V12 beta2^2` further assumes a zero
    /// linear coefficient, which this variant inherits.
    QuadraticHomoskedastic { beta2: f64, v12: f64 },
    /// Linear mean with slope heterogeneity; only the within channel is
    /// active: `2 Omega11 E1 + 4 Omega22 E3`.
    LinearHeteroskedastic {
        omega11: f64,
        omega22: f64,
        e1: f64,
        e3: f64,
    },
}

/// Evaluates the per-case closed forms for (between, within).
///
/// # Errors
/// [`Error::InvalidInput`] when a case is handed parameters that violate its
/// zero restrictions (negative variances, negative education moments).
pub fn case_formulas(case: CaseSpec) -> Result<(f64, f64)> {
    match case {
        CaseSpec::LinearHomoskedastic => Ok((0.0, 0.0)),
        CaseSpec::QuadraticHomoskedastic { beta2, v12 } => {
            if !(beta2.is_finite() && v12.is_finite()) {
                return Err(Error::invalid_input(
                    "decomposition",
                    "quadratic case needs finite beta2 and V12",
                ));
            }
            Ok((4.0 * v12 * beta2 * beta2, 0.0))
        }
        CaseSpec::LinearHeteroskedastic {
            omega11,
            omega22,
            e1,
            e3,
        } => {
            if omega11 < 0.0 || omega22 < 0.0 {
                return Err(Error::invalid_input(
                    "decomposition",
                    "dispersion diagonals must be non-negative",
                ));
            }
            if e1 < 0.0 || e3 < 0.0 {
                return Err(Error::invalid_input(
                    "decomposition",
                    "education moments must be non-negative",
                ));
            }
            Ok((0.0, 2.0 * omega11 * e1 + 4.0 * omega22 * e3))
        }
    }
}

fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    bilinear_form(m, x, x)
}

fn bilinear_form(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.nrows() {
        let mut row = 0.0;
        for k in 0..m.ncols() {
            row += m[(j, k)] * y[k];
        }
        acc += x[j] * row;
    }
    acc
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_frame::DesignMatrix;
    use approx::assert_relative_eq;

    pub(crate) fn design_012() -> DesignMatrix {
        let h = [0.0, 1.0, 2.0];
        let mut x = DMatrix::<f64>::zeros(3, 3);
        for (i, &hi) in h.iter().enumerate() {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = hi;
            x[(i, 2)] = hi * hi;
        }
        DesignMatrix::from_parts(DVector::from_column_slice(&[0.0, 1.0, 4.0]), x).unwrap()
    }

    fn zero_omega(p: usize) -> GammaCovariance {
        GammaCovariance::from_matrix(DMatrix::zeros(p, p)).unwrap()
    }

    #[test]
    fn moments_of_the_three_point_fixture() {
        // h in {0,1,2}: E[h]=1, E[h^2]=5/3, V11=2/3, V12=4/3, V22=26/9.
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        assert_relative_eq!(m.e[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.e[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.e[2], 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.v[(1, 1)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.v[(1, 2)], 4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.v[(2, 2)], 26.0 / 9.0, epsilon = 1e-14);
        assert_eq!(m.v[(0, 0)], 0.0);
        assert_eq!(m.v[(0, 1)], 0.0);
        assert_eq!(m.v[(0, 2)], 0.0);
    }

    #[test]
    fn shift_derivatives_of_the_three_point_fixture() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        assert_eq!(m.de.as_slice(), &[0.0, 1.0, 2.0]);
        assert_relative_eq!(m.dv[(1, 2)], 4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.dv[(2, 2)], 16.0 / 3.0, epsilon = 1e-14);
        assert_eq!(m.dv[(0, 0)], 0.0);
        assert_eq!(m.dv[(1, 1)], 0.0);
        for j in 0..3 {
            assert_eq!(m.dv[(0, j)], 0.0);
            assert_eq!(m.dv[(j, 0)], 0.0);
        }
    }

    #[test]
    fn shift_derivatives_match_finite_differences_of_shifted_moments() {
        // Central finite difference of the shifted-sample moments at 1e-5
        // must agree with the closed forms to 1e-6.
        let design = design_012();
        let eps = 1e-5;
        for convention in [MomentConvention::Population, MomentConvention::Sample] {
            let m = compute_moments(&design, convention).unwrap();
            let plus =
                compute_moments(&crate::model_frame::shift_education(&design, eps), convention)
                    .unwrap();
            let minus =
                compute_moments(&crate::model_frame::shift_education(&design, -eps), convention)
                    .unwrap();
            for j in 0..3 {
                let fd = (plus.e[j] - minus.e[j]) / (2.0 * eps);
                assert_relative_eq!(fd, m.de[j], epsilon = 1e-6);
                for k in 0..3 {
                    let fd = (plus.v[(j, k)] - minus.v[(j, k)]) / (2.0 * eps);
                    assert_relative_eq!(fd, m.dv[(j, k)], epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn intercept_row_of_dv_is_zero_for_designs_with_controls() {
        let n = 8;
        let mut x = DMatrix::<f64>::zeros(n, 4);
        let mut w = DVector::<f64>::zeros(n);
        for i in 0..n {
            let h = i as f64;
            x[(i, 0)] = 1.0;
            x[(i, 1)] = h;
            x[(i, 2)] = h * h;
            x[(i, 3)] = if i % 2 == 0 { 1.0 } else { -0.5 } + 0.1 * h;
            w[i] = h.sin();
        }
        let design = DesignMatrix::from_parts(w, x).unwrap();
        let m = compute_moments(&design, MomentConvention::Population).unwrap();
        for j in 0..4 {
            assert_eq!(m.dv[(0, j)], 0.0);
            assert_eq!(m.dv[(j, 0)], 0.0);
        }
        // z-z block is zero; the only control entries sit against column 2.
        assert_eq!(m.dv[(3, 3)], 0.0);
        assert_relative_eq!(m.dv[(2, 3)], 2.0 * m.v[(1, 3)], epsilon = 1e-14);
        assert_eq!(m.dv[(1, 3)], 0.0);
    }

    #[test]
    fn population_moment_identities_hold() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        // V_jk = E_{j+k} - E_j E_k for the power columns; E3 = mean h^3 = 3.
        let e3 = 3.0;
        assert_relative_eq!(m.v[(1, 1)], m.e[2] - m.e[1] * m.e[1], epsilon = 1e-14);
        assert_relative_eq!(m.v[(1, 2)], e3 - m.e[1] * m.e[2], epsilon = 1e-14);
    }

    #[test]
    fn level_reduces_to_v11_for_a_pure_slope() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let beta = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        let level = inequality_level(&beta, &zero_omega(3), &m).unwrap();
        assert_relative_eq!(level, 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn level_reduces_to_intercept_dispersion_for_pure_noise() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let beta = DVector::zeros(3);
        let mut om = DMatrix::<f64>::zeros(3, 3);
        om[(0, 0)] = 0.49;
        let omega = GammaCovariance::from_matrix(om).unwrap();
        let terms = inequality_terms(&beta, &omega, &m).unwrap();
        assert_eq!(terms.mean_variance, 0.0);
        assert_eq!(terms.slope_dispersion, 0.0); // V00 = 0
        assert_relative_eq!(terms.mean_point_dispersion, 0.49, epsilon = 1e-15);
    }

    #[test]
    fn pure_convexity_between_effect_is_sixteen_thirds() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let beta = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let result = decompose(&beta, &zero_omega(3), &m).unwrap();
        assert_relative_eq!(result.ef_between, 16.0 / 3.0, epsilon = 1e-13);
        assert_eq!(result.ef_within, 0.0);
        assert_eq!(result.total, result.ef_between + result.ef_within);
    }

    #[test]
    fn pure_heterogeneity_within_effect_is_fourteen() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let beta = DVector::from_column_slice(&[0.7, 0.2, 0.0]);
        let mut om = DMatrix::<f64>::zeros(3, 3);
        om[(1, 1)] = 1.0;
        om[(2, 2)] = 1.0;
        let omega = GammaCovariance::from_matrix(om).unwrap();
        let result = decompose(&beta, &omega, &m).unwrap();
        // 2*Omega11*E1 + 4*Omega22*E3 with E1=1, E3=3.
        assert_relative_eq!(result.ef_within, 14.0, epsilon = 1e-12);
        assert_relative_eq!(result.ef_between, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn intercept_noise_only_has_no_effect_at_all() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let beta = DVector::from_column_slice(&[1.2, 0.3, 0.0]);
        let mut om = DMatrix::<f64>::zeros(3, 3);
        om[(0, 0)] = 2.5;
        let omega = GammaCovariance::from_matrix(om).unwrap();
        let result = decompose(&beta, &omega, &m).unwrap();
        assert_eq!(result.ef_between, 0.0);
        assert_eq!(result.ef_within, 0.0);
        assert!(result.share_between.is_none());
        assert!(result.share_within.is_none());
    }

    #[test]
    fn closed_form_matches_matrix_path_on_the_fixture() {
        let m = compute_moments(&design_012(), MomentConvention::Population).unwrap();
        let simple = SimpleMoments {
            e1: m.e[1],
            e2: m.e[2],
            e3: 3.0,
            v11: m.v[(1, 1)],
            v12: m.v[(1, 2)],
        };
        let beta = [0.0, 0.0, 1.0];
        let omega = DMatrix::<f64>::zeros(3, 3);
        let (between, within) = closed_form_simple(&beta, &omega, simple).unwrap();
        assert_relative_eq!(between, 16.0 / 3.0, epsilon = 1e-13);
        assert_eq!(within, 0.0);

        let mut om = DMatrix::<f64>::zeros(3, 3);
        om[(1, 1)] = 1.0;
        om[(2, 2)] = 1.0;
        let (_, within) = closed_form_simple(&[0.5, 0.1, 0.0], &om, simple).unwrap();
        assert_relative_eq!(within, 14.0, epsilon = 1e-12);

        let (b0, w0) =
            closed_form_simple(&[0.0; 3], &DMatrix::zeros(3, 3), simple).unwrap();
        assert_eq!((b0, w0), (0.0, 0.0));
    }

    #[test]
    fn case_formulas_match_their_pinned_values() {
        assert_eq!(case_formulas(CaseSpec::LinearHomoskedastic).unwrap(), (0.0, 0.0));
        let (between, within) =
            case_formulas(CaseSpec::QuadraticHomoskedastic { beta2: 1.0, v12: 4.0 / 3.0 })
                .unwrap();
        assert_relative_eq!(between, 16.0 / 3.0, epsilon = 1e-14);
        assert_eq!(within, 0.0);
        let (between, within) = case_formulas(CaseSpec::LinearHeteroskedastic {
            omega11: 1.0,
            omega22: 1.0,
            e1: 1.0,
            e3: 3.0,
        })
        .unwrap();
        assert_eq!(between, 0.0);
        assert_relative_eq!(within, 14.0, epsilon = 1e-14);
        assert!(case_formulas(CaseSpec::LinearHeteroskedastic {
            omega11: -1.0,
            omega22: 0.0,
            e1: 1.0,
            e3: 1.0,
        })
        .is_err());
    }

    #[test]
    fn sample_convention_rescales_covariances() {
        let design = design_012();
        let pop = compute_moments(&design, MomentConvention::Population).unwrap();
        let sample = compute_moments(&design, MomentConvention::Sample).unwrap();
        let ratio = 3.0 / 2.0; // n / (n - 1)
        assert_relative_eq!(sample.v[(1, 1)], pop.v[(1, 1)] * ratio, epsilon = 1e-14);
        assert_relative_eq!(sample.dv[(2, 2)], pop.dv[(2, 2)] * ratio, epsilon = 1e-14);
        assert_eq!(sample.de, pop.de);
    }
}
