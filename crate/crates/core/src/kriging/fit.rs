//! Maximum-likelihood estimation of `(beta, sigma2, theta)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{checked_design, correlation_matrix, GpModel, JitterLadder, KernelSpec, Trend};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::sampling::{derive_seed, rng};

/// Search settings for the correlation scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of random starting points (log-uniform in `theta_range`).
    pub starts: usize,
    pub theta_range: (f64, f64),
    /// One scale per input dimension instead of a single shared one.
    pub anisotropic: bool,
    /// Likelihood evaluations allowed per local polish.
    pub max_evals: usize,
    pub jitter: JitterLadder,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            starts: 10,
            theta_range: (1e-3, 1e3),
            anisotropic: false,
            max_evals: 200,
            jitter: JitterLadder::default(),
        }
    }
}

pub(crate) struct Gls {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub degenerate: bool,
}

/// Generalized least squares given the Cholesky factor `L` of the
/// correlation matrix, plus the concentrated log-likelihood
/// `-(n/2) ln sigma2 - (1/2) ln |R|`.
pub(crate) fn gls(chol: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<Gls> {
    let n = y.len();
    let columns = h.ncols();
    let ft = chol
        .solve_lower_triangular(h)
        .ok_or(Error::SingularCovariance { jitter: 0.0 })?;
    let yt = chol
        .solve_lower_triangular(y)
        .ok_or(Error::SingularCovariance { jitter: 0.0 })?;
    let qr = ft.clone().qr();
    let r = qr.r();
    let rmax = (0..columns).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..columns).any(|i| !(r[(i, i)].abs() > 1e-10 * rmax)) {
        return Err(Error::RankDeficientTrend { columns });
    }
    let qty = qr.q().tr_mul(&yt);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficientTrend { columns })?;
    let resid = &yt - &ft * &beta;
    let rss = resid.norm_squared();
    let scale = yt.norm_squared().max(f64::MIN_POSITIVE);
    let degenerate = rss <= 1e-24 * scale;
    let sigma2 = if degenerate { 0.0 } else { rss / n as f64 };
    let log_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_likelihood = if degenerate {
        f64::INFINITY
    } else {
        -0.5 * n as f64 * sigma2.ln() - 0.5 * log_det
    };
    Ok(Gls { beta, sigma2, log_likelihood, degenerate })
}

/// Fits the Kriging model by maximizing the concentrated likelihood over
/// `log theta` with a multi-start bounded Nelder–Mead.
pub fn fit_mle(design: &Design, trend: Trend, config: &FitConfig, seed: u64) -> Result<GpModel> {
    let (points, y) = checked_design(design, trend)?;
    let dim = points[0].len();
    let h = trend.matrix(&points);
    let (lo, hi) = config.theta_range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid("theta range must satisfy 0 < lo < hi"));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let k = if config.anisotropic { dim } else { 1 };

    // Outputs already in the span of the trend: every theta gives zero
    // residuals, so pick a mid-range scale and flag the model.
    let ols = h.clone().svd(true, true).solve(&y, 1e-12).map_err(Error::invalid)?;
    let ols_resid = &y - &h * &ols;
    let ymax = y.amax();
    if ols_resid.amax() <= 1e-12 * (1.0 + ymax) {
        let kernel = KernelSpec::new(vec![((llo + lhi) / 2.0).exp(); k])?;
        let r = correlation_matrix(&kernel, &points);
        let (chol, jitter) = config.jitter.factor(&r, 1.0)?;
        let g = gls(&chol, &h, &y)?;
        return Ok(GpModel::assemble(
            points,
            y,
            trend,
            kernel,
            g.beta,
            0.0,
            jitter,
            f64::INFINITY,
            true,
            chol,
        ));
    }

    let objective = |log_theta: &[f64]| -> f64 {
        let theta: Vec<f64> = log_theta.iter().map(|t| t.clamp(llo, lhi).exp()).collect();
        let kernel = KernelSpec { theta };
        let r = correlation_matrix(&kernel, &points);
        match config.jitter.factor(&r, 1.0).and_then(|(l, _)| gls(&l, &h, &y)) {
            Ok(g) if g.log_likelihood.is_finite() => -g.log_likelihood,
            _ => f64::INFINITY,
        }
    };

    let mut r = rng(derive_seed(seed, 0x6d6c65));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..config.starts.max(1) {
        let start: Vec<f64> = (0..k).map(|_| r.random_range(llo..lhi)).collect();
        let (x, fx) = nelder_mead(&objective, &start, 1.0, (llo, lhi), config.max_evals);
        if fx.is_finite() && best.as_ref().is_none_or(|(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let (log_theta, _) = best.ok_or(Error::SingularCovariance { jitter: config.jitter.max })?;
    let kernel = KernelSpec::new(log_theta.iter().map(|t| t.clamp(llo, lhi).exp()).collect())?;
    let rmat = correlation_matrix(&kernel, &points);
    let (chol, jitter) = config.jitter.factor(&rmat, 1.0)?;
    let g = gls(&chol, &h, &y)?;
    Ok(GpModel::assemble(
        points,
        y,
        trend,
        kernel,
        g.beta,
        g.sigma2,
        jitter,
        g.log_likelihood,
        g.degenerate,
        chol,
    ))
}

/// Bounded Nelder–Mead minimization; points are clamped into `bounds` on
/// every coordinate. Returns the best vertex and its value.
pub(crate) fn nelder_mead<F>(f: &F, start: &[f64], step: f64, bounds: (f64, f64), max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let k = start.len();
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|t| t.clamp(bounds.0, bounds.1)).collect() };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let x0 = clamp(start.to_vec());
    let f0 = eval(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..k {
        let mut x = x0.clone();
        x[i] += if x[i] + step <= bounds.1 { step } else { -step };
        let x = clamp(x);
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let cmp = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while evals.get() < max_evals {
        simplex.sort_by(cmp);
        let (best, worst) = (simplex[0].1, simplex[k].1);
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < 1e-6 || (best.is_finite() && (worst - best).abs() <= 1e-10 * (1.0 + best.abs())) {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|(x, _)| x[j]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&simplex[k].0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[k].1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[k].1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = clamp(x_best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect());
                    let fx = eval(&x);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(cmp);
    simplex.swap_remove(0)
}
