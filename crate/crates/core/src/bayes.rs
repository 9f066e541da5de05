//! Posterior moments of the random failure probability `Pi` and the credible
//! bound obtained by conditional simulation.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::blackbox::{BoxDomain, InputDistribution};
use crate::bounds::{BoundMethod, BoundReport};
use crate::design::{lhs, scale_to_box};
use crate::error::{Error, Result};
use crate::kriging::{conditional_simulate, grid_repair, regular_grid, GpModel, DEFAULT_REPAIR_ATTEMPTS};
use crate::numeric::{gauss_legendre, normal_cdf, standardized_margin, upper_order_statistic};
use crate::sampling::{blocks, derive_seed, par_map, rng, substream, MeanAccumulator, BLOCK};

/// `P(X < h, Y < k)` for a standard bivariate normal with correlation `r`.
///
/// Genz's BVND scheme: Gauss–Legendre quadrature of the Plackett form for
/// moderate `|r|`, and of the Drezner expansion around `|r| = 1` otherwise.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r.clamp(-1.0, 1.0))
}

/// `P(X > dh, Y > dk)`.
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { normal_cdf(-dk) };
    }
    if dk == f64::NEG_INFINITY {
        return normal_cdf(-dh);
    }
    if r == 0.0 {
        return normal_cdf(-dh) * normal_cdf(-dk);
    }
    let tp = 2.0 * PI;
    let points = if r.abs() < 0.3 {
        6
    } else if r.abs() < 0.75 {
        12
    } else {
        20
    };
    // nodes mapped from [-1, 1] to [0, 2]; weights sum to 2
    let (x, w) = gauss_legendre(points);
    let x: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
    let (h, mut k) = (dh, dk);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (xi, wi) in x.iter().zip(&w) {
            let sn = (asr * xi).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / tp + normal_cdf(-h) * normal_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_s = 1.0 - r * r;
            let mut a = a_s.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / a_s + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * normal_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut sum = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                let xs = (a * xi) * (a * xi);
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    sum += wi * asr.exp() * (sp - ep);
                }
            }
            bvn = (a * sum - bvn) / tp;
        }
        if r > 0.0 {
            bvn += normal_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                normal_cdf(k) - normal_cdf(h)
            } else {
                normal_cdf(-h) - normal_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Monte Carlo summary of the law of `Pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiPosteriorSummary {
    pub mean: f64,
    pub mean_std_error: f64,
    pub mc_samples: usize,
    pub variance: Option<f64>,
    pub variance_std_error: Option<f64>,
    pub pair_samples: Option<usize>,
    /// The variance estimate is within two standard errors of zero.
    #[serde(default)]
    pub numerical_warning: bool,
}

fn check_model_dist(model: &GpModel, dist: &InputDistribution) -> Result<()> {
    if model.dim() != dist.dim() {
        return Err(Error::invalid(format!(
            "model dimension {} differs from input dimension {}",
            model.dim(),
            dist.dim()
        )));
    }
    Ok(())
}

/// `E(Pi) = E_X[Phi((rho - m(X)) / s(X))]` by Monte Carlo over `M` draws.
/// Points with zero posterior variance contribute `1{m(x) < rho}`.
pub fn posterior_pi_mean(
    model: &GpModel,
    dist: &InputDistribution,
    m: usize,
    rho: f64,
    seed: u64,
) -> Result<PiPosteriorSummary> {
    check_model_dist(model, dist)?;
    if m == 0 {
        return Err(Error::invalid("posterior mean needs M >= 1"));
    }
    let parts = par_map(blocks(m, BLOCK), |(b, _, len)| {
        let mut r = rng(derive_seed(seed, b as u64));
        let xs = dist.sample_many(&mut r, len);
        let (means, vars) = model.predict_block(&xs);
        let mut acc = MeanAccumulator::default();
        for (mu, v) in means.iter().zip(&vars) {
            acc.push(normal_cdf(standardized_margin(rho, *mu, v.sqrt())));
        }
        acc
    });
    let mut acc = MeanAccumulator::default();
    for p in &parts {
        acc.merge(p);
    }
    Ok(PiPosteriorSummary {
        mean: acc.mean().clamp(0.0, 1.0),
        mean_std_error: acc.std_error(),
        mc_samples: m,
        variance: None,
        variance_std_error: None,
        pair_samples: None,
        numerical_warning: false,
    })
}

/// Integrand of the posterior variance for one pair of points:
/// `BVN(u, u'; r) - Phi(u) Phi(u')`.
pub fn indicator_covariance(u: f64, u2: f64, corr: f64) -> f64 {
    if !u.is_finite() || !u2.is_finite() {
        return 0.0;
    }
    bvn_cdf(u, u2, corr) - normal_cdf(u) * normal_cdf(u2)
}

/// `V(Pi)` as the double integral of the covariance of failure indicators,
/// by Monte Carlo over `M_pairs` independent pairs.
pub fn posterior_pi_variance(
    model: &GpModel,
    dist: &InputDistribution,
    m_pairs: usize,
    rho: f64,
    seed: u64,
) -> Result<PiPosteriorSummary> {
    check_model_dist(model, dist)?;
    if m_pairs < 2 {
        return Err(Error::invalid("posterior variance needs at least 2 pairs"));
    }
    let sigma2 = model.sigma2();
    let parts = par_map(blocks(m_pairs, BLOCK), |(b, _, len)| {
        let mut r = rng(derive_seed(seed, b as u64));
        let xs = dist.sample_many(&mut r, len);
        let xs2 = dist.sample_many(&mut r, len);
        let (m1, v1, w1) = model.predict_block_whitened(&xs);
        let (m2, v2, w2) = model.predict_block_whitened(&xs2);
        let mut cov_acc = MeanAccumulator::default();
        let mut mean_acc = MeanAccumulator::default();
        for i in 0..len {
            let (s1, s2) = (v1[i].sqrt(), v2[i].sqrt());
            let (u1, u2) = (standardized_margin(rho, m1[i], s1), standardized_margin(rho, m2[i], s2));
            mean_acc.push(0.5 * (normal_cdf(u1) + normal_cdf(u2)));
            let term = if s1 > 0.0 && s2 > 0.0 {
                let dot: f64 = w1.row(i).iter().zip(w2.row(i).iter()).map(|(a, b)| a * b).sum();
                let cov = sigma2 * (model.kernel().correlation(&xs[i], &xs2[i]) - dot);
                indicator_covariance(u1, u2, (cov / (s1 * s2)).clamp(-1.0, 1.0))
            } else {
                0.0
            };
            cov_acc.push(term);
        }
        (cov_acc, mean_acc)
    });
    let (mut cov, mut mean) = (MeanAccumulator::default(), MeanAccumulator::default());
    for (c, m) in &parts {
        cov.merge(c);
        mean.merge(m);
    }
    let p = mean.mean().clamp(0.0, 1.0);
    let est = cov.mean();
    let se = cov.std_error();
    Ok(PiPosteriorSummary {
        mean: p,
        mean_std_error: mean.std_error(),
        mc_samples: m_pairs,
        variance: Some(est.clamp(0.0, p * (1.0 - p))),
        variance_std_error: Some(se),
        pair_samples: Some(m_pairs),
        numerical_warning: est.abs() < 2.0 * se,
    })
}

/// Settings for [`credible_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleConfig {
    pub realizations: usize,
    /// X-draws used to integrate each realization.
    pub m_int: usize,
    /// The bound is the empirical quantile of order `1 - alpha`.
    pub alpha: f64,
    /// Largest input dimension accepted.
    pub max_dim: usize,
}

impl Default for CredibleConfig {
    fn default() -> Self {
        CredibleConfig { realizations: 1000, m_int: 100_000, alpha: 0.02, max_dim: 10 }
    }
}

pub const MIN_REALIZATIONS: usize = 100;
pub const MIN_M_INT: usize = 10_000;

/// The credible bound together with the simulated sample of `Pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleResult {
    pub report: BoundReport,
    pub pi_sample: Vec<f64>,
}

impl CredibleResult {
    pub fn write_sample_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["realization", "pi"])?;
        for (i, p) in self.pi_sample.iter().enumerate() {
            w.write_record([i.to_string(), format!("{p:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Discretization grid of `t` points, pushed away from the design by
/// `1%` of the box diagonal. Regular grid of cell centres for `d <= 3`,
/// Latin hypercube otherwise.
pub fn default_grid(model: &GpModel, domain: &BoxDomain, t: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = domain.dim();
    let raw = if d <= 3 {
        let per_axis = (t as f64).powf(1.0 / d as f64).round().max(1.0) as usize;
        regular_grid(domain, per_axis)
    } else {
        scale_to_box(&lhs(t.max(2), d, substream(seed, "grid-lhs"))?, domain)?.points
    };
    grid_repair(
        &raw,
        model.points(),
        domain,
        0.01 * domain.diagonal(),
        substream(seed, "grid-repair"),
        DEFAULT_REPAIR_ATTEMPTS,
    )
}

/// Credible upper bound on `Pi` by conditional simulation.
///
/// Each realization is drawn jointly on `grid`, extended to the whole domain
/// by conditioning on the design and the grid, and integrated over one
/// common sample of `m_int` inputs. The bound is the order statistic at rank
/// `ceil((1 - alpha) R)`.
pub fn credible_bound(
    model: &GpModel,
    dist: &InputDistribution,
    grid: &[Vec<f64>],
    rho: f64,
    config: &CredibleConfig,
    seed: u64,
) -> Result<CredibleResult> {
    check_model_dist(model, dist)?;
    if model.dim() > config.max_dim {
        return Err(Error::DimensionTooHigh { dim: model.dim(), limit: config.max_dim });
    }
    if config.realizations < MIN_REALIZATIONS || config.m_int < MIN_M_INT {
        return Err(Error::invalid(format!(
            "credible bound needs >= {MIN_REALIZATIONS} realizations and >= {MIN_M_INT} integration points"
        )));
    }
    if !(0.0..1.0).contains(&config.alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1)"));
    }
    let r = config.realizations;
    let sim = conditional_simulate(model, grid, r, substream(seed, "realizations"))?;
    let x_seed = substream(seed, "integration");
    let counts = par_map(blocks(config.m_int, BLOCK), |(b, _, len)| {
        let mut g = rng(derive_seed(x_seed, b as u64));
        let xs = dist.sample_many(&mut g, len);
        let values = sim.evaluate_block(&xs);
        let mut c = vec![0u64; r];
        for (j, slot) in c.iter_mut().enumerate() {
            *slot = values.column(j).iter().filter(|v| **v < rho).count() as u64;
        }
        c
    });
    let mut totals = vec![0u64; r];
    for c in &counts {
        for (t, v) in totals.iter_mut().zip(c) {
            *t += v;
        }
    }
    let pi_sample: Vec<f64> = totals.iter().map(|c| *c as f64 / config.m_int as f64).collect();
    let mut sorted = pi_sample.clone();
    sorted.sort_by(f64::total_cmp);
    let bound = upper_order_statistic(&sorted, 1.0 - config.alpha);
    let mut report = BoundReport::new(BoundMethod::BayesCredible, bound, 1.0 - config.alpha)
        .with_input("rho", rho)
        .with_input("alpha", config.alpha)
        .with_input("realizations", r)
        .with_input("m_int", config.m_int)
        .with_input("grid_points", grid.len())
        .with_input("grid_jitter", sim.jitter())
        .with_input("design_points", model.n());
    report.seed = Some(seed);
    report
        .notes
        .push("grid discretization bias is not bounded".to_string());
    Ok(CredibleResult { report, pi_sample })
}
