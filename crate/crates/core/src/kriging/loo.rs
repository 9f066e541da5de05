//! Virtual leave-one-out residuals with the correlation scales held fixed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::GpModel;
use crate::error::{Error, Result};

/// How the leave-one-out error is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LooScaling {
    /// Divide by the leave-one-out standard deviation.
    #[default]
    StdDev,
    /// Divide by the leave-one-out variance.
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub scaling: LooScaling,
    /// `y_i - m_{-i}(x_i)`
    pub errors: Vec<f64>,
    pub variances: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fraction_within_3: f64,
    pub max_abs: f64,
}

/// Leave-one-out errors and variances from one factorization.
///
/// With `Q = R^{-1} - R^{-1} H (H^T R^{-1} H)^{-1} H^T R^{-1}`, dropping point
/// `i` and re-estimating `beta` by least squares gives
/// `y_i - m_{-i}(x_i) = (Q y)_i / Q_ii` and variance `sigma2 / Q_ii`.
pub fn loo_residuals(model: &GpModel, scaling: LooScaling) -> Result<LooReport> {
    let n = model.n();
    let l = model.trend().len(model.dim());
    if n < l + 2 {
        return Err(Error::invalid(format!("leave-one-out needs n >= {} points, got {n}", l + 2)));
    }
    let sigma2 = model.sigma2();
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateLeaveOut { index: 0 });
    }
    let lit = model.chol_inv_t();
    let rinv = lit * lit.transpose();
    let h = model.trend().matrix(model.points());
    let rinv_h = &rinv * &h;
    let a = h.tr_mul(&rinv_h);
    let a_inv = a
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficientTrend { columns: l })?;
    let q: DMatrix<f64> = &rinv - &rinv_h * a_inv * rinv_h.transpose();
    let qy = &q * model.y_vec();

    let mut errors = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let qii = q[(i, i)];
        if !(qii > 0.0) {
            return Err(Error::DegenerateLeaveOut { index: i });
        }
        let e = qy[i] / qii;
        let v = sigma2 / qii;
        errors.push(e);
        variances.push(v);
        residuals.push(match scaling {
            LooScaling::StdDev => e / v.sqrt(),
            LooScaling::Variance => e / v,
        });
    }
    let within = residuals.iter().filter(|r| r.abs() <= 3.0).count();
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(LooReport {
        scaling,
        errors,
        variances,
        residuals,
        fraction_within_3: within as f64 / n as f64,
        max_abs,
    })
}
