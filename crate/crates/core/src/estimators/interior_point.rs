//! Primal-dual interior-point solver for check-loss minimization.
//!
//! The quantile-regression problem `min_y sum_i rho_tau(w_i - x_i'y)` is the
//! dual of the box-constrained linear program
//!
//! ```text
//!   max  w'a   subject to   X'a = (1 - tau) X'1,   0 <= a <= 1,
//! ```
//!
//! whose equality multiplier is exactly the coefficient vector `y`. This
//! module runs a Mehrotra predictor-corrector iteration on that LP. With
//! slacks `s = 1 - a` and box multipliers `z, v >= 0` the KKT system is
//!
//! ```text
//!   X'a = b,   a + s = 1,   Xy + v - z = w,   a.z = mu,   s.v = mu,
//! ```
//!
//! and each Newton step reduces to one p-by-p positive-definite solve with
//! the weighted normal matrix `X' D X`, `D = 1/(z/a + v/s)`.
//!
//! The iteration is started from a feasible point built off a least-squares
//! fit and stops on the duality gap `a'z + s'v`, which bounds the check-loss
//! suboptimality of `y` from above. Every quantity in the iteration is
//! homogeneous of degree zero or one in `w`, and the stopping threshold is
//! proportional to the centered wage scale supplied by the caller, so scaling
//! wages scales the whole iterate path (coefficient equivariance) and adding
//! a constant to wages cannot change it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Iteration budget of the interior-point solver.
pub const MAX_ITERATIONS: usize = 200;

/// Duality-gap stopping tolerance, relative to the centered wage scale.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Fraction of the step to the positivity boundary actually taken.
const STEP_DAMPING: f64 = 0.99995;

/// Solves the check-loss problem at quantile `tau`.
///
/// # Arguments
/// * `x` - n-by-p full-rank regressor matrix.
/// * `w` - response vector.
/// * `tau` - quantile index strictly inside (0, 1).
/// * `start` - initial coefficient guess (the least-squares fit).
/// * `scale` - centered wage scale `mean |w - mean(w)|`, must be positive.
///
/// # Errors
/// [`Error::NoConvergence`] when the duality gap is still above
/// `GAP_TOLERANCE * scale` after [`MAX_ITERATIONS`] iterations, and
/// [`Error::SingularSystem`] if the weighted normal matrix loses definiteness
/// beyond repair.
pub fn solve(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    tau: f64,
    start: &DVector<f64>,
    scale: f64,
) -> Result<DVector<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    debug_assert!(scale > 0.0, "caller must handle degenerate scales");
    let xs = x.as_slice(); // column-major backing store
    let col = |j: usize| &xs[j * n..(j + 1) * n];
    let ws = w.as_slice();
    let tol = GAP_TOLERANCE * scale;

    // Equality right-hand side b = (1 - tau) X'1.
    let b_eq: Vec<f64> = (0..p).map(|j| (1.0 - tau) * col(j).iter().sum::<f64>()).collect();

    // Feasible start: a interior with X'a = b exactly, duals split off the
    // least-squares residual so that Xy + v - z = w holds at entry.
    let mut a = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let mut y: Vec<f64> = start.as_slice().to_vec();
    let mut r = vec![0.0; n];
    residual(ws, xs, n, &y, &mut r);
    let mean_abs_r = r.iter().map(|ri| ri.abs()).sum::<f64>() / n as f64;
    // Keep the entry duals interior even for a near-interpolating start.
    let delta = 0.1 * mean_abs_r + 1e-8 * scale;
    let mut z: Vec<f64> = r.iter().map(|&ri| ri.max(0.0) + delta).collect();
    let mut v: Vec<f64> = r.iter().map(|&ri| (-ri).max(0.0) + delta).collect();

    // Workspace reused across iterations.
    let mut d = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut xdy = vec![0.0; n];
    let mut da = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut da_aff = vec![0.0; n];
    let mut ds_aff = vec![0.0; n];
    let mut dz_aff = vec![0.0; n];
    let mut dv_aff = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);

    let mut gap = dot(&a, &z) + dot(&s, &v);
    for _iter in 0..MAX_ITERATIONS {
        if !gap.is_finite() {
            return Err(Error::NoConvergence {
                tau,
                iterations: _iter,
                gap,
            });
        }
        if gap <= tol {
            return Ok(DVector::from_vec(y));
        }

        // Residuals. The start is feasible, so f1/f2 only absorb rounding
        // drift; r is recomputed from y to anchor the dual-feasibility row.
        residual(ws, xs, n, &y, &mut r);
        for i in 0..n {
            f2[i] = a[i] + s[i] - 1.0;
        }
        let f1: Vec<f64> = (0..p)
            .map(|j| dot(col(j), &a) - b_eq[j])
            .collect();

        for i in 0..n {
            d[i] = 1.0 / (z[i] / a[i] + v[i] / s[i]);
        }

        // One factorization per iteration, shared by both Newton solves.
        build_normal(&mut normal, xs, n, p, &d);
        let chol = factor(&normal, p)?;

        // Predictor (affine scaling, mu = 0).
        for i in 0..n {
            g[i] = r[i] - v[i] / s[i] * f2[i];
        }
        solve_step(&chol, xs, n, p, &d, &g, &f1, &mut rhs);
        let dy_aff = rhs.clone();
        apply(xs, n, p, dy_aff.as_slice(), &mut xdy);
        for i in 0..n {
            da_aff[i] = d[i] * (g[i] - xdy[i]);
            ds_aff[i] = -f2[i] - da_aff[i];
            dz_aff[i] = -z[i] - z[i] / a[i] * da_aff[i];
            dv_aff[i] = -v[i] - v[i] / s[i] * ds_aff[i];
        }
        let alpha_p_aff = block_step(&a, &da_aff, &s, &ds_aff, 1.0);
        let alpha_d_aff = block_step(&z, &dz_aff, &v, &dv_aff, 1.0);
        let mut gap_aff = 0.0;
        for i in 0..n {
            gap_aff += (a[i] + alpha_p_aff * da_aff[i]) * (z[i] + alpha_d_aff * dz_aff[i])
                + (s[i] + alpha_p_aff * ds_aff[i]) * (v[i] + alpha_d_aff * dv_aff[i]);
        }
        let sigma = (gap_aff / gap).powi(3).clamp(0.0, 1.0);
        let mu = sigma * gap / (2.0 * n as f64);

        // Corrector with centering mu and the second-order Mehrotra terms.
        for i in 0..n {
            g[i] = r[i] - v[i] / s[i] * f2[i] + mu / a[i] - mu / s[i]
                + ds_aff[i] * dv_aff[i] / s[i]
                - da_aff[i] * dz_aff[i] / a[i];
        }
        solve_step(&chol, xs, n, p, &d, &g, &f1, &mut rhs);
        apply(xs, n, p, rhs.as_slice(), &mut xdy);
        for i in 0..n {
            da[i] = d[i] * (g[i] - xdy[i]);
            ds[i] = -f2[i] - da[i];
            dz[i] = mu / a[i] - z[i] - z[i] / a[i] * da[i] - da_aff[i] * dz_aff[i] / a[i];
            dv[i] = mu / s[i] - v[i] - v[i] / s[i] * ds[i] - ds_aff[i] * dv_aff[i] / s[i];
        }
        let alpha_p = block_step(&a, &da, &s, &ds, STEP_DAMPING);
        let alpha_d = block_step(&z, &dz, &v, &dv, STEP_DAMPING);

        for i in 0..n {
            a[i] += alpha_p * da[i];
            s[i] += alpha_p * ds[i];
            z[i] += alpha_d * dz[i];
            v[i] += alpha_d * dv[i];
        }
        for j in 0..p {
            y[j] += alpha_d * rhs[j];
        }
        gap = dot(&a, &z) + dot(&s, &v);
    }
    Err(Error::NoConvergence {
        tau,
        iterations: MAX_ITERATIONS,
        gap,
    })
}

/// r = w - X y.
fn residual(w: &[f64], xs: &[f64], n: usize, y: &[f64], r: &mut [f64]) {
    r.copy_from_slice(w);
    for (j, yj) in y.iter().enumerate() {
        let cj = &xs[j * n..(j + 1) * n];
        for i in 0..n {
            r[i] -= yj * cj[i];
        }
    }
}

/// out = X dy.
fn apply(xs: &[f64], n: usize, p: usize, dy: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..p {
        let cj = &xs[j * n..(j + 1) * n];
        let dyj = dy[j];
        for i in 0..n {
            out[i] += dyj * cj[i];
        }
    }
}

/// normal = X' diag(d) X (upper triangle computed, mirrored).
fn build_normal(normal: &mut DMatrix<f64>, xs: &[f64], n: usize, p: usize, d: &[f64]) {
    for j in 0..p {
        let cj = &xs[j * n..(j + 1) * n];
        for k in j..p {
            let ck = &xs[k * n..(k + 1) * n];
            let m = dot3(d, cj, ck);
            normal[(j, k)] = m;
            normal[(k, j)] = m;
        }
    }
}

/// Cholesky with escalating ridge repair for nearly semidefinite systems.
fn factor(normal: &DMatrix<f64>, p: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let trace: f64 = (0..p).map(|j| normal[(j, j)]).sum();
    let mut ridge = 0.0;
    for attempt in 0..4 {
        let mut m = normal.clone();
        if ridge > 0.0 {
            for j in 0..p {
                m[(j, j)] += ridge;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            return Ok(chol);
        }
        ridge = trace * 1e-14 * 10f64.powi(2 * attempt as i32);
    }
    Err(Error::SingularSystem {
        context: "quantile interior point",
    })
}

/// rhs = X'(d . g) + f1, solved in place against the factored normal matrix.
fn solve_step(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    xs: &[f64],
    n: usize,
    p: usize,
    d: &[f64],
    g: &[f64],
    f1: &[f64],
    rhs: &mut DVector<f64>,
) {
    for j in 0..p {
        let cj = &xs[j * n..(j + 1) * n];
        rhs[j] = dot3(d, cj, g) + f1[j];
    }
    chol.solve_mut(rhs);
}

/// Largest feasible fraction of a step keeping both slack pairs positive.
fn block_step(u: &[f64], du: &[f64], t: &[f64], dt: &[f64], damping: f64) -> f64 {
    let mut alpha = 1.0f64 / damping;
    for i in 0..u.len() {
        if du[i] < 0.0 {
            let ratio = u[i] / -du[i];
            if ratio < alpha {
                alpha = ratio;
            }
        }
        if dt[i] < 0.0 {
            let ratio = t[i] / -dt[i];
            if ratio < alpha {
                alpha = ratio;
            }
        }
    }
    (damping * alpha).min(1.0)
}

/// Four-lane unrolled dot product (deterministic summation order).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i + 4 <= len {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < len {
        tail += a[i] * b[i];
        i += 1;
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// Four-lane unrolled triple product sum (deterministic summation order).
fn dot3(d: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let len = d.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i + 4 <= len {
        s0 += d[i] * a[i] * b[i];
        s1 += d[i + 1] * a[i + 1] * b[i + 1];
        s2 += d[i + 2] * a[i + 2] * b[i + 2];
        s3 += d[i + 3] * a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < len {
        tail += d[i] * a[i] * b[i];
        i += 1;
    }
    (s0 + s1) + (s2 + s3) + tail
}
