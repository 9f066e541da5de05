//! Universal Kriging with a Gaussian correlation kernel.
//!
//! The model treats `f` as a draw of `H(x)^T beta + zeta(x)` with
//! `Cov(zeta(x), zeta(x')) = sigma^2 exp(-sum_k theta_k (x_k - x'_k)^2)`.
//! Hyperparameters are estimated by maximum likelihood and then plugged in:
//! conditioning treats them as known.

mod fit;
mod loo;
mod simulate;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

pub use fit::{fit_mle, FitConfig};
pub use loo::{loo_residuals, LooReport, LooScaling};
pub use simulate::{
    conditional_simulate, grid_repair, regular_grid, ConditionalSimulation, DEFAULT_REPAIR_ATTEMPTS,
};

/// Current version of the serialized model record.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Regression basis `h_1..h_L`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    /// `h(x) = 1`.
    #[default]
    Constant,
    /// `h(x) = (1, x_1, ..., x_d)`.
    Linear,
}

impl Trend {
    pub fn len(&self, dim: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear => dim + 1,
        }
    }

    pub fn basis(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Trend::Constant => vec![1.0],
            Trend::Linear => std::iter::once(1.0).chain(x.iter().copied()).collect(),
        }
    }

    pub(crate) fn matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let dim = points.first().map_or(0, Vec::len);
        let l = self.len(dim);
        DMatrix::from_fn(points.len(), l, |i, j| match (self, j) {
            (_, 0) => 1.0,
            (Trend::Linear, j) => points[i][j - 1],
            _ => unreachable!(),
        })
    }
}

/// Gaussian correlation `K(x, x') = exp(-sum_k theta_k (x_k - x'_k)^2)`.
///
/// One `theta` is isotropic; `d` of them give one scale per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub theta: Vec<f64>,
}

impl KernelSpec {
    pub fn isotropic(theta: f64) -> Result<Self> {
        KernelSpec::new(vec![theta])
    }

    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("kernel scales must be finite and positive"));
        }
        Ok(KernelSpec { theta })
    }

    pub fn is_isotropic(&self) -> bool {
        self.theta.len() == 1
    }

    #[inline]
    pub fn correlation(&self, a: &[f64], b: &[f64]) -> f64 {
        let q: f64 = if self.theta.len() == 1 {
            self.theta[0] * crate::design::sq_dist(a, b)
        } else {
            a.iter()
                .zip(b)
                .zip(&self.theta)
                .map(|((x, y), t)| t * (x - y) * (x - y))
                .sum()
        };
        (-q).exp()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.theta.len() == 1 || self.theta.len() == dim {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "kernel has {} scales but inputs have dimension {dim}",
                self.theta.len()
            )))
        }
    }
}

/// Jitter escalation used whenever a correlation matrix is factorized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterLadder {
    pub initial: f64,
    pub max: f64,
    pub factor: f64,
}

impl Default for JitterLadder {
    fn default() -> Self {
        JitterLadder { initial: 1e-10, max: 1e-4, factor: 10.0 }
    }
}

impl JitterLadder {
    /// Cholesky factor of `a + jitter * scale * I` with the smallest ladder
    /// jitter that succeeds. Returns the lower factor and the relative jitter.
    pub(crate) fn factor(&self, a: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
        let mut jitter = self.initial;
        loop {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter * scale;
            }
            if let Some(ch) = m.cholesky() {
                return Ok((ch.unpack(), jitter));
            }
            if jitter >= self.max {
                return Err(Error::SingularCovariance { jitter: self.max });
            }
            jitter = (jitter * self.factor).min(self.max);
        }
    }
}

pub(crate) fn cholesky_exact(a: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    m.cholesky()
        .map(|c| c.unpack())
        .ok_or(Error::SingularCovariance { jitter })
}

pub(crate) fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("factor has a positive diagonal")
}

/// A fitted Kriging metamodel. Immutable; concurrent queries are safe.
#[derive(Debug, Clone)]
pub struct GpModel {
    points: Vec<Vec<f64>>,
    y: DVector<f64>,
    trend: Trend,
    kernel: KernelSpec,
    beta: DVector<f64>,
    sigma2: f64,
    jitter: f64,
    log_likelihood: f64,
    degenerate: bool,
    /// `(L^{-1})^T`, so that whitened cross-correlations are one product.
    chol_inv_t: DMatrix<f64>,
    /// `(R + jitter I)^{-1} (y - H beta)`.
    alpha: DVector<f64>,
}

/// Serialized form of a [`GpModel`], enough for a bit-identical reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub schema_version: u32,
    pub points: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub trend: Trend,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub jitter: f64,
    pub log_likelihood: f64,
    pub degenerate: bool,
}

impl GpModel {
    /// Builds a model with every parameter given. `beta` / `sigma2` left as
    /// `None` are set to their maximum-likelihood values for this kernel.
    pub fn with_parameters(
        design: &Design,
        trend: Trend,
        kernel: KernelSpec,
        beta: Option<Vec<f64>>,
        sigma2: Option<f64>,
        ladder: &JitterLadder,
    ) -> Result<Self> {
        let (points, y) = checked_design(design, trend)?;
        kernel.check_dim(points[0].len())?;
        let r = correlation_matrix(&kernel, &points);
        let (chol, jitter) = ladder.factor(&r, 1.0)?;
        let gls = fit::gls(&chol, &trend.matrix(&points), &y)?;
        let beta = match beta {
            Some(b) if b.len() == gls.beta.len() => DVector::from_vec(b),
            Some(_) => return Err(Error::invalid("beta length does not match the trend")),
            None => gls.beta.clone(),
        };
        let sigma2 = match sigma2 {
            Some(s) if s >= 0.0 => s,
            Some(_) => return Err(Error::invalid("sigma2 must be nonnegative")),
            None => gls.sigma2,
        };
        let degenerate = sigma2 == 0.0 || gls.degenerate;
        Ok(Self::assemble(points, y, trend, kernel, beta, sigma2, jitter, gls.log_likelihood, degenerate, chol))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        points: Vec<Vec<f64>>,
        y: DVector<f64>,
        trend: Trend,
        kernel: KernelSpec,
        beta: DVector<f64>,
        sigma2: f64,
        jitter: f64,
        log_likelihood: f64,
        degenerate: bool,
        chol: DMatrix<f64>,
    ) -> Self {
        let h = trend.matrix(&points);
        let resid = &y - &h * &beta;
        let z = chol.solve_lower_triangular(&resid).expect("positive diagonal");
        let alpha = chol.tr_solve_lower_triangular(&z).expect("positive diagonal");
        let chol_inv_t = lower_inverse(&chol).transpose();
        GpModel {
            points,
            y,
            trend,
            kernel,
            beta,
            sigma2,
            jitter,
            log_likelihood,
            degenerate,
            chol_inv_t,
            alpha,
        }
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn outputs(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn design(&self) -> Design {
        Design::with_outputs(self.points.clone(), self.y.iter().copied().collect())
            .expect("model design is consistent")
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn beta(&self) -> &[f64] {
        self.beta.as_slice()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// True when the residuals vanish (`sigma2 = 0`): the posterior is a point mass.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub(crate) fn chol_inv_t(&self) -> &DMatrix<f64> {
        &self.chol_inv_t
    }

    pub(crate) fn y_vec(&self) -> &DVector<f64> {
        &self.y
    }

    fn trend_value(&self, x: &[f64]) -> f64 {
        self.trend.basis(x).iter().zip(self.beta.iter()).map(|(h, b)| h * b).sum()
    }

    fn cross_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.points.iter().map(|p| self.kernel.correlation(x, p)))
    }

    /// `L^{-1} r(x)` as a row vector.
    fn whitened(&self, x: &[f64]) -> DVector<f64> {
        self.chol_inv_t.tr_mul(&self.cross_vector(x))
    }

    /// Cross-correlations of a block of query points with the design (`B x n`).
    pub(crate) fn cross_block(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.n();
        let mut k = DMatrix::zeros(xs.len(), n);
        for (j, p) in self.points.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                k[(i, j)] = self.kernel.correlation(x, p);
            }
        }
        k
    }

    /// Posterior mean `m(x) = H(x)^T beta + r(x)^T R^{-1} (y - H beta)`.
    pub fn posterior_mean(&self, x: &[f64]) -> f64 {
        self.trend_value(x) + self.cross_vector(x).dot(&self.alpha)
    }

    /// Posterior covariance `sigma2 (K(x, x') - r(x)^T R^{-1} r(x'))`.
    /// Symmetric by construction; may be slightly negative on the diagonal
    /// near design points.
    pub fn posterior_cov(&self, x: &[f64], x2: &[f64]) -> f64 {
        let (a, b) = (self.whitened(x), self.whitened(x2));
        // sum in a fixed order so cov(x, x') == cov(x', x) bit for bit
        let dot: f64 = a.iter().zip(b.iter()).map(|(u, v)| u * v).sum();
        self.sigma2 * (self.kernel.correlation(x, x2) - dot)
    }

    /// Posterior variance clamped to `[0, sigma2]`.
    pub fn posterior_var(&self, x: &[f64]) -> f64 {
        let w = self.whitened(x);
        (self.sigma2 * (1.0 - w.norm_squared())).clamp(0.0, self.sigma2)
    }

    /// Posterior mean and clamped variance for a batch of points.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(crate::sampling::BLOCK) {
            let (m, v) = self.predict_block(chunk);
            out.extend(m.into_iter().zip(v));
        }
        out
    }

    /// Vectorized mean / clamped variance for one block.
    pub(crate) fn predict_block(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let (m, v, _) = self.predict_block_whitened(xs);
        (m, v)
    }

    /// Like [`Self::predict_block`], also returning the whitened
    /// cross-correlations `W = K L^{-T}` (`B x n`).
    pub(crate) fn predict_block_whitened(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let k = self.cross_block(xs);
        let w = &k * &self.chol_inv_t;
        let ka = &k * &self.alpha;
        let means = xs
            .iter()
            .enumerate()
            .map(|(i, x)| self.trend_value(x) + ka[i])
            .collect();
        let vars = (0..xs.len())
            .map(|i| {
                let s: f64 = w.row(i).iter().map(|v| v * v).sum();
                (self.sigma2 * (1.0 - s)).clamp(0.0, self.sigma2)
            })
            .collect();
        (means, vars, w)
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            schema_version: MODEL_SCHEMA_VERSION,
            points: self.points.clone(),
            y: self.y.iter().copied().collect(),
            trend: self.trend,
            theta: self.kernel.theta.clone(),
            beta: self.beta.iter().copied().collect(),
            sigma2: self.sigma2,
            jitter: self.jitter,
            log_likelihood: self.log_likelihood,
            degenerate: self.degenerate,
        }
    }

    /// Rebuilds the model using exactly the recorded jitter.
    pub fn from_record(rec: &ModelRecord) -> Result<Self> {
        if rec.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported model schema {}", rec.schema_version)));
        }
        let design = Design::with_outputs(rec.points.clone(), rec.y.clone())?;
        let (points, y) = checked_design(&design, rec.trend)?;
        let kernel = KernelSpec::new(rec.theta.clone())?;
        kernel.check_dim(points[0].len())?;
        if rec.beta.len() != rec.trend.len(points[0].len()) {
            return Err(Error::Parse("beta length does not match trend".into()));
        }
        let chol = cholesky_exact(&correlation_matrix(&kernel, &points), rec.jitter)?;
        Ok(Self::assemble(
            points,
            y,
            rec.trend,
            kernel,
            DVector::from_vec(rec.beta.clone()),
            rec.sigma2,
            rec.jitter,
            rec.log_likelihood,
            rec.degenerate,
            chol,
        ))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_record())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let rec: ModelRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_record(&rec)
    }
}

pub(crate) fn correlation_matrix(kernel: &KernelSpec, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel.correlation(&points[i], &points[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

fn checked_design(design: &Design, trend: Trend) -> Result<(Vec<Vec<f64>>, DVector<f64>)> {
    let y = design
        .outputs
        .as_ref()
        .ok_or_else(|| Error::invalid("design has no outputs"))?;
    if design.is_empty() {
        return Err(Error::invalid("empty design"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("outputs must be finite"));
    }
    let l = trend.len(design.dim());
    if design.len() <= l {
        return Err(Error::RankDeficientTrend { columns: l });
    }
    if !design.has_distinct_points() {
        return Err(Error::invalid("design points must be distinct"));
    }
    Ok((design.points.clone(), DVector::from_vec(y.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point_model() -> GpModel {
        let d = Design::with_outputs(vec![vec![0.0]], vec![1.0]).unwrap();
        // n = 1 with a constant trend would violate n > L, so build directly
        let kernel = KernelSpec::isotropic(1.0).unwrap();
        let r = correlation_matrix(&kernel, &d.points);
        let chol = cholesky_exact(&r, 0.0).unwrap();
        GpModel::assemble(
            d.points.clone(),
            DVector::from_vec(vec![1.0]),
            Trend::Constant,
            kernel,
            DVector::from_vec(vec![0.0]),
            1.0,
            0.0,
            0.0,
            false,
            chol,
        )
    }

    #[test]
    fn one_point_hand_values() {
        let m = one_point_model();
        assert!((m.posterior_mean(&[0.5]) - (-0.25f64).exp()).abs() < 1e-15);
        assert!((m.posterior_mean(&[0.5]) - 0.7788).abs() < 1e-4);
        let v = m.posterior_cov(&[0.5], &[0.5]);
        assert!((v - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 0.3935).abs() < 1e-4);
        assert_eq!(m.posterior_mean(&[0.0]), 1.0);
        assert!(m.posterior_var(&[0.0]) <= 1e-15);
    }

    #[test]
    fn far_queries_recover_prior() {
        let m = one_point_model();
        assert!((m.posterior_mean(&[100.0]) - 0.0).abs() < 1e-10);
        assert!((m.posterior_var(&[100.0]) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn block_prediction_matches_pointwise() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.7, (i * i) as f64 * 0.1]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p[0].sin() + p[1]).collect();
        let design = Design::with_outputs(pts, y).unwrap();
        let m = GpModel::with_parameters(
            &design,
            Trend::Linear,
            KernelSpec::new(vec![0.8, 1.3]).unwrap(),
            None,
            None,
            &JitterLadder::default(),
        )
        .unwrap();
        let qs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.2, 1.0 - i as f64 * 0.05]).collect();
        for (q, (mean, var)) in qs.iter().zip(m.predict_many(&qs)) {
            assert!((mean - m.posterior_mean(q)).abs() < 1e-12);
            assert!((var - m.posterior_var(q)).abs() < 1e-12);
        }
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64 * 1.37) % 3.0, i as f64 / 3.0]).collect();
        let y: Vec<f64> = pts.iter().map(|p| (p[0] * p[1]).cos()).collect();
        let design = Design::with_outputs(pts, y).unwrap();
        let m = fit_mle(&design, Trend::Constant, &FitConfig::default(), 3).unwrap();
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let back = GpModel::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        for q in [[0.3, 0.9], [2.5, 0.1], [1.0, 2.0]] {
            assert_eq!(m.posterior_mean(&q).to_bits(), back.posterior_mean(&q).to_bits());
            assert_eq!(m.posterior_var(&q).to_bits(), back.posterior_var(&q).to_bits());
        }
        let mut rec = m.to_record();
        rec.schema_version = 99;
        assert!(GpModel::from_record(&rec).is_err());
    }

    #[test]
    fn n_not_above_trend_length_is_rejected() {
        let d = Design::with_outputs(vec![vec![0.0]], vec![1.0]).unwrap();
        let r = fit_mle(&d, Trend::Constant, &FitConfig::default(), 0);
        assert!(matches!(r, Err(Error::RankDeficientTrend { columns: 1 })));
        let d = Design::with_outputs(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]], vec![1.0, 2.0, 3.0]).unwrap();
        let r = fit_mle(&d, Trend::Linear, &FitConfig::default(), 0);
        assert!(matches!(r, Err(Error::RankDeficientTrend { columns: 3 })));
    }
}
