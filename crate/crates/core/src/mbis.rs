//! Metamodel-based importance sampling: the critical region, its tuning, the
//! importance-sampling estimator and the stochastic upper bound built on it.

use serde::{Deserialize, Serialize};

use crate::blackbox::{BudgetedObjective, InputDistribution};
use crate::bounds::{binomial_upper_bound, BoundMethod, BoundReport};
use crate::error::{Error, Result};
use crate::kriging::GpModel;
use crate::numeric::normal_cdf;
use crate::sampling::{blocks, derive_seed, par_map, rng, substream, MeanAccumulator, BLOCK};

pub const MBIS_SCHEMA_VERSION: u32 = 1;
pub const MIN_REGION_SAMPLES: usize = 10_000;
pub const DEFAULT_MAX_DRAWS: usize = 100_000_000;

/// Membership rule `m(x) < rho + kappa s(x)`, reducing to `m(x) < rho` where
/// the posterior variance vanishes.
#[inline]
pub fn is_member(mean: f64, sd: f64, rho: f64, kappa: f64) -> bool {
    if sd > 0.0 {
        mean < rho + kappa * sd
    } else {
        mean < rho
    }
}

/// `t(x) = (m(x) - rho) / s(x)`, with `-inf` / `+inf` where `s = 0`.
/// A point is a member exactly when `t < kappa`.
#[inline]
pub fn margin_t(mean: f64, sd: f64, rho: f64) -> f64 {
    if sd > 0.0 {
        (mean - rho) / sd
    } else if mean < rho {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CriticalRegion<'a> {
    model: &'a GpModel,
    rho: f64,
    kappa: f64,
}

impl<'a> CriticalRegion<'a> {
    pub fn new(model: &'a GpModel, rho: f64, kappa: f64) -> Self {
        CriticalRegion { model, rho, kappa }
    }

    pub fn model(&self) -> &'a GpModel {
        self.model
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        is_member(self.model.posterior_mean(x), self.model.posterior_var(x).sqrt(), self.rho, self.kappa)
    }

    pub fn contains_block(&self, xs: &[Vec<f64>]) -> Vec<bool> {
        let (means, vars) = self.model.predict_block(xs);
        means
            .iter()
            .zip(&vars)
            .map(|(m, v)| is_member(*m, v.sqrt(), self.rho, self.kappa))
            .collect()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    fn from_acc(acc: &MeanAccumulator) -> Self {
        Estimate { value: acc.mean(), std_error: acc.std_error(), samples: acc.count }
    }
}

/// `P_X(region)` and `c(kappa)` from one pass over the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStatistics {
    pub probability: Estimate,
    pub c_kappa: Estimate,
    /// No draw fell in the region.
    pub zero_region: bool,
}

/// Membership frequency and `E[Phi(u) 1{u < -kappa}]`, `u = (rho - m) / s`,
/// over `M` draws of `X`. Uses no evaluations of `f`.
pub fn region_statistics(
    region: &CriticalRegion<'_>,
    dist: &InputDistribution,
    m: usize,
    seed: u64,
) -> Result<RegionStatistics> {
    if m < MIN_REGION_SAMPLES {
        return Err(Error::invalid(format!("region integration needs M >= {MIN_REGION_SAMPLES}")));
    }
    let (rho, kappa) = (region.rho, region.kappa);
    let parts = par_map(blocks(m, BLOCK), |(b, _, len)| {
        let mut r = rng(derive_seed(seed, b as u64));
        let xs = dist.sample_many(&mut r, len);
        let (means, vars) = region.model.predict_block(&xs);
        let (mut p, mut c) = (MeanAccumulator::default(), MeanAccumulator::default());
        for (mu, v) in means.iter().zip(&vars) {
            let sd = v.sqrt();
            let inside = is_member(*mu, sd, rho, kappa);
            p.push(if inside { 1.0 } else { 0.0 });
            // outside with s > 0 means u < -kappa; outside with s = 0 means m >= rho, Phi(u) = 0
            c.push(if !inside && sd > 0.0 { normal_cdf((rho - mu) / sd) } else { 0.0 });
        }
        (p, c)
    });
    let (mut p, mut c) = (MeanAccumulator::default(), MeanAccumulator::default());
    for (a, b) in &parts {
        p.merge(a);
        c.merge(b);
    }
    Ok(RegionStatistics {
        probability: Estimate::from_acc(&p),
        c_kappa: Estimate::from_acc(&c),
        zero_region: p.sum == 0.0,
    })
}

/// `P_X(region)` by Monte Carlo.
pub fn region_probability(
    region: &CriticalRegion<'_>,
    dist: &InputDistribution,
    m: usize,
    seed: u64,
) -> Result<(Estimate, bool)> {
    let s = region_statistics(region, dist, m, seed)?;
    Ok((s.probability, s.zero_region))
}

/// `c(kappa) = E[Phi(u) 1{u < -kappa}]`, the Markov-side bound on the
/// failures left outside the region.
pub fn bias_bound_c(region: &CriticalRegion<'_>, dist: &InputDistribution, m: usize, seed: u64) -> Result<Estimate> {
    if m < 10 * MIN_REGION_SAMPLES {
        return Err(Error::invalid("c(kappa) integration needs M >= 100000"));
    }
    Ok(region_statistics(region, dist, m, seed)?.c_kappa)
}

/// Result of [`tune_kappa`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedRegion {
    pub kappa: f64,
    /// `m_target / M`
    pub probability: f64,
    /// `c(kappa)` estimated on the same draws.
    pub c_kappa: Estimate,
    /// The `m_target` draws that fall in the region, in draw order.
    pub retained: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Picks `kappa` so that exactly `m_target` of `M` draws fall in the region:
/// the midpoint of the `m_target`-th and `(m_target+1)`-th smallest `t`.
///
/// When the next order statistic is `+inf` (or the lower one `-inf`) the
/// midpoint is replaced by a unit offset from the finite one.
pub fn tune_kappa(
    model: &GpModel,
    rho: f64,
    dist: &InputDistribution,
    m: usize,
    m_target: usize,
    seed: u64,
) -> Result<TunedRegion> {
    if m_target == 0 || m_target > m {
        return Err(Error::invalid("need M >= m_target >= 1"));
    }
    let chunks = par_map(blocks(m, BLOCK), |(b, _, len)| {
        let mut r = rng(derive_seed(seed, b as u64));
        let xs = dist.sample_many(&mut r, len);
        let (means, vars) = model.predict_block(&xs);
        means
            .iter()
            .zip(&vars)
            .map(|(mu, v)| margin_t(*mu, v.sqrt(), rho))
            .collect::<Vec<f64>>()
    });
    let t: Vec<f64> = chunks.into_iter().flatten().collect();
    let kappa = kappa_from_margins(&t, m_target)?;

    let mut c = MeanAccumulator::default();
    for v in &t {
        // u = -t; outside means t > kappa
        c.push(if *v > kappa && v.is_finite() { normal_cdf(-v) } else { 0.0 });
    }
    let mut retained = Vec::with_capacity(m_target);
    for (b, start, len) in blocks(m, BLOCK) {
        if !t[start..start + len].iter().any(|v| *v < kappa) {
            continue;
        }
        let mut r = rng(derive_seed(seed, b as u64));
        let xs = dist.sample_many(&mut r, len);
        for (x, v) in xs.into_iter().zip(&t[start..start + len]) {
            if *v < kappa {
                retained.push(x);
            }
        }
    }
    debug_assert_eq!(retained.len(), m_target);
    Ok(TunedRegion {
        kappa,
        probability: m_target as f64 / m as f64,
        c_kappa: Estimate::from_acc(&c),
        retained,
        samples: m,
    })
}

/// `kappa` placing exactly `m_target` of the margins `t` strictly below it.
pub fn kappa_from_margins(t: &[f64], m_target: usize) -> Result<f64> {
    let m = t.len();
    if m_target == 0 || m_target > m {
        return Err(Error::invalid("need M >= m_target >= 1"));
    }
    let possible = t.iter().filter(|v| **v < f64::INFINITY).count();
    if possible < m_target {
        return Err(Error::InfeasibleTarget { available: possible, target: m_target });
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lower = sorted[m_target - 1];
    if m_target == m {
        return Ok(lower + lower.abs().max(1.0) * 1e-9);
    }
    let upper = sorted[m_target];
    let tie = Error::TieFailure { rank: m_target, next: m_target + 1, value: lower };
    if lower == upper {
        return Err(tie);
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => Ok(0.5 * (lower + upper)),
        (true, false) => Ok(lower + 1.0),
        (false, true) => Ok(upper - 1.0),
        (false, false) => Err(tie),
    }
}

/// `m` i.i.d. draws from `P_X(. | region)` by rejection. Fails if nothing is
/// accepted within `max_draws` proposals.
pub fn sample_importance(
    region: &CriticalRegion<'_>,
    dist: &InputDistribution,
    m: usize,
    seed: u64,
    max_draws: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(m);
    let mut drawn = 0usize;
    let mut b = 0u64;
    while out.len() < m {
        if out.is_empty() && drawn >= max_draws {
            return Err(Error::RejectionStall { draws: drawn });
        }
        let mut r = rng(derive_seed(seed, b));
        b += 1;
        let xs = dist.sample_many(&mut r, BLOCK);
        drawn += BLOCK;
        let inside = region.contains_block(&xs);
        for (x, keep) in xs.into_iter().zip(inside) {
            if keep && out.len() < m {
                out.push(x);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    pub gamma: u64,
    pub m: u64,
    pub estimate: f64,
}

/// `P_X(region) / m * sum 1{f(Z_k) < rho}`; consumes exactly `m` evaluations.
pub fn is_estimate(obj: &BudgetedObjective, z: &[Vec<f64>], rho: f64, prob_region: f64) -> Result<IsEstimate> {
    if obj.remaining() < z.len() {
        return Err(Error::BudgetExhausted { used: obj.used(), total: obj.budget_total() });
    }
    let ys = obj.eval_many(z)?;
    let gamma = ys.iter().filter(|y| **y < rho).count() as u64;
    let m = z.len() as u64;
    let estimate = if m == 0 { 0.0 } else { prob_region * gamma as f64 / m as f64 };
    Ok(IsEstimate { gamma, m, estimate })
}

fn check_levels(alpha: f64, beta: f64) -> Result<()> {
    if alpha > 0.0 && beta > 0.0 && alpha + beta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("need alpha, beta > 0 and alpha + beta < 1"))
    }
}

/// `b(Gamma, m, alpha) P + c / beta`, clamped to `[0, 1]`, at level `1 - (alpha + beta)`.
pub fn mbis_bound(gamma: u64, m: u64, prob_region: f64, c: f64, alpha: f64, beta: f64) -> Result<BoundReport> {
    check_levels(alpha, beta)?;
    if !(0.0..=1.0).contains(&prob_region) || !(c >= 0.0) {
        return Err(Error::invalid("need P in [0, 1] and c >= 0"));
    }
    let b = binomial_upper_bound(gamma, m, alpha)?;
    let bound = (b * prob_region + c / beta).clamp(0.0, 1.0);
    let mut rep = BoundReport::new(BoundMethod::Mbis, bound, 1.0 - (alpha + beta))
        .with_input("prob_region", prob_region)
        .with_input("c_kappa", c)
        .with_input("alpha", alpha)
        .with_input("beta", beta)
        .with_input("binomial_bound", b);
    rep.successes = Some(gamma);
    rep.trials = Some(m);
    Ok(rep)
}

/// Level-matched refinement: smallest `alpha` in `[1e-12, 1/2]` with
/// `b(Gamma, m, alpha) P + c / alpha <= 2 alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alpha0 {
    pub alpha0: f64,
    /// `2 alpha0`, a bound at level `1 - 2 alpha0`.
    pub bound: f64,
    /// Every `(alpha, g(alpha))` evaluated during the search.
    pub trace: Vec<(f64, f64)>,
}

pub const ALPHA0_BRACKET: (f64, f64) = (1e-12, 0.5);

pub fn alpha0_search(gamma: u64, m: u64, prob_region: f64, c: f64) -> Result<Alpha0> {
    if !(0.0..=1.0).contains(&prob_region) || !(c >= 0.0) || m == 0 || gamma > m {
        return Err(Error::invalid("alpha0 search needs 0 <= Gamma <= m, m >= 1, P in [0, 1], c >= 0"));
    }
    let mut trace = Vec::new();
    let mut g = |a: f64| -> Result<f64> {
        let v = binomial_upper_bound(gamma, m, a)? * prob_region + c / a;
        trace.push((a, v));
        Ok(v)
    };
    let (mut lo, mut hi) = ALPHA0_BRACKET;
    if g(hi)? - 2.0 * hi > 0.0 {
        return Err(Error::NoCrossing { lo, hi });
    }
    if g(lo)? - 2.0 * lo <= 0.0 {
        hi = lo;
    } else {
        while hi - lo > 1e-9 * hi {
            // geometric midpoint: the root can sit many decades below 1/2
            let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if g(mid)? - 2.0 * mid <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(Alpha0 { alpha0: hi, bound: 2.0 * hi, trace })
}

/// How the region inflation `kappa` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum KappaRule {
    Fixed { kappa: f64 },
    /// Exactly `m` of the `m_region` draws fall in the region.
    Tuned,
}

/// Where the importance sample comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceSource {
    #[default]
    Rejection,
    /// The draws retained while tuning `kappa` (tuned rule only).
    Retained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbisConfig {
    /// Number of black-box evaluations.
    pub m: usize,
    /// Draws used to integrate `P_X(region)` and `c(kappa)`.
    pub m_region: usize,
    pub kappa: KappaRule,
    #[serde(default)]
    pub source: ImportanceSource,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_max_draws")]
    pub max_draws: usize,
}

fn default_max_draws() -> usize {
    DEFAULT_MAX_DRAWS
}

impl Default for MbisConfig {
    fn default() -> Self {
        MbisConfig {
            m: 50,
            m_region: 1_000_000,
            kappa: KappaRule::Fixed { kappa: 3.0 },
            source: ImportanceSource::Rejection,
            alpha: 0.01,
            beta: 0.01,
            max_draws: DEFAULT_MAX_DRAWS,
        }
    }
}

/// Everything needed to re-derive an importance-sampling bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbisResult {
    pub schema_version: u32,
    pub gamma: u64,
    pub m: u64,
    pub kappa: f64,
    pub rho: f64,
    pub prob_region: f64,
    pub prob_region_std_error: f64,
    pub c_kappa: f64,
    pub c_kappa_std_error: f64,
    pub m_region: usize,
    pub alpha: f64,
    pub beta: f64,
    pub bound: f64,
    pub level: f64,
    pub estimate: f64,
    pub budget_used: usize,
    pub seed: u64,
    pub zero_region: bool,
}

impl MbisResult {
    pub fn to_report(&self) -> BoundReport {
        let mut rep = BoundReport::new(BoundMethod::Mbis, self.bound, self.level)
            .with_input("kappa", self.kappa)
            .with_input("rho", self.rho)
            .with_input("prob_region", self.prob_region)
            .with_input("prob_region_std_error", self.prob_region_std_error)
            .with_input("c_kappa", self.c_kappa)
            .with_input("c_kappa_std_error", self.c_kappa_std_error)
            .with_input("m_region", self.m_region)
            .with_input("alpha", self.alpha)
            .with_input("beta", self.beta)
            .with_input("estimate", self.estimate)
            .with_input("budget_used", self.budget_used);
        rep.successes = Some(self.gamma);
        rep.trials = Some(self.m);
        rep.seed = Some(self.seed);
        if self.zero_region {
            rep.notes.push("empty critical region: the bound reduces to c/beta".into());
        }
        rep.notes
            .push("Monte Carlo error of P_X(region) is reported but not folded into the bound".into());
        rep
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Region, importance sample, `m` evaluations of `f`, bound.
pub fn run_mbis(
    model: &GpModel,
    obj: &BudgetedObjective,
    dist: &InputDistribution,
    rho: f64,
    config: &MbisConfig,
    seed: u64,
) -> Result<MbisResult> {
    check_levels(config.alpha, config.beta)?;
    if obj.remaining() < config.m {
        return Err(Error::BudgetExhausted { used: obj.used(), total: obj.budget_total() });
    }
    let region_seed = substream(seed, "region");
    let (kappa, prob, prob_se, c, c_se, zero, retained) = match config.kappa {
        KappaRule::Fixed { kappa } => {
            let region = CriticalRegion::new(model, rho, kappa);
            let s = region_statistics(&region, dist, config.m_region, region_seed)?;
            (
                kappa,
                s.probability.value,
                s.probability.std_error,
                s.c_kappa.value,
                s.c_kappa.std_error,
                s.zero_region,
                None,
            )
        }
        KappaRule::Tuned => {
            let t = tune_kappa(model, rho, dist, config.m_region, config.m, region_seed)?;
            (t.kappa, t.probability, 0.0, t.c_kappa.value, t.c_kappa.std_error, false, Some(t.retained))
        }
    };
    let z = match (config.source, retained) {
        (ImportanceSource::Retained, Some(r)) => r,
        (ImportanceSource::Retained, None) => {
            return Err(Error::invalid("retained importance sample requires the tuned kappa rule"))
        }
        _ if zero => Vec::new(),
        _ => sample_importance(
            &CriticalRegion::new(model, rho, kappa),
            dist,
            config.m,
            substream(seed, "importance"),
            config.max_draws,
        )?,
    };
    let before = obj.used();
    let est = if z.is_empty() {
        IsEstimate { gamma: 0, m: config.m as u64, estimate: 0.0 }
    } else {
        is_estimate(obj, &z, rho, prob)?
    };
    let rep = mbis_bound(est.gamma, est.m, prob, c, config.alpha, config.beta)?;
    Ok(MbisResult {
        schema_version: MBIS_SCHEMA_VERSION,
        gamma: est.gamma,
        m: est.m,
        kappa,
        rho,
        prob_region: prob,
        prob_region_std_error: prob_se,
        c_kappa: c,
        c_kappa_std_error: c_se,
        m_region: config.m_region,
        alpha: config.alpha,
        beta: config.beta,
        bound: rep.bound,
        level: rep.level,
        estimate: est.estimate,
        budget_used: obj.used() - before,
        seed,
        zero_region: zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{toy_distribution, toy_domain, toy_f};
    use crate::design::Design;
    use crate::kriging::{JitterLadder, KernelSpec, Trend};

    fn toy_model() -> GpModel {
        let pts: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![-9.0 + 18.0 * ((i * 7) % 16) as f64 / 15.0, -9.0 + 18.0 * i as f64 / 15.0])
            .collect();
        let y: Vec<f64> = pts.iter().map(|p| toy_f(p[0], p[1])).collect();
        GpModel::with_parameters(
            &Design::with_outputs(pts, y).unwrap(),
            Trend::Constant,
            KernelSpec::isotropic(0.05).unwrap(),
            None,
            None,
            &JitterLadder::default(),
        )
        .unwrap()
    }

    #[test]
    fn membership_rules() {
        assert!(is_member(0.5, 1.0, 1.0, 0.0));
        assert!(!is_member(1.0, 1.0, 1.0, 0.0));
        assert!(is_member(3.9, 1.0, 1.0, 3.0));
        assert!(!is_member(0.5, 0.0, 0.4, 1e6));
        assert_eq!(margin_t(0.0, 0.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(margin_t(1.0, 0.0, 1.0), f64::INFINITY);
        let m = toy_model();
        let r = CriticalRegion::new(&m, 0.01, 3.0);
        for (p, y) in m.points().iter().zip(m.outputs()) {
            assert_eq!(r.contains(p), *y < 0.01);
        }
    }

    #[test]
    fn nesting() {
        let m = toy_model();
        let dist = toy_distribution();
        let xs = dist.sample_many(&mut rng(5), 20_000);
        let a = CriticalRegion::new(&m, 0.01, 1.0).contains_block(&xs);
        let b = CriticalRegion::new(&m, 0.01, 2.5).contains_block(&xs);
        assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
    }

    #[test]
    fn whole_box_region() {
        let m = toy_model();
        let dist = toy_distribution();
        let r = CriticalRegion::new(&m, 1e6, 0.0);
        let s = region_statistics(&r, &dist, 20_000, 1).unwrap();
        assert_eq!(s.probability.value, 1.0);
        assert_eq!(s.c_kappa.value, 0.0);
        let r = CriticalRegion::new(&m, -1e6, 0.0);
        let s = region_statistics(&r, &dist, 20_000, 1).unwrap();
        assert_eq!(s.probability.value, 0.0);
        assert!(s.zero_region);
    }

    #[test]
    fn c_terms_bounded_by_tail() {
        let m = toy_model();
        let r = CriticalRegion::new(&m, 0.01, 3.0);
        let s = region_statistics(&r, &toy_distribution(), 50_000, 2).unwrap();
        assert!(s.c_kappa.value <= normal_cdf(-3.0));
    }

    #[test]
    fn kappa_order_statistics() {
        assert_eq!(kappa_from_margins(&[-2.0, 0.0, 5.0], 2).unwrap(), 2.5);
        assert_eq!(kappa_from_margins(&[5.0, -2.0, 0.0], 1).unwrap(), -1.0);
        let k = kappa_from_margins(&[-2.0, 0.0, 5.0], 3).unwrap();
        assert!(k > 5.0 && k < 5.0 + 1e-6);
        assert!(matches!(kappa_from_margins(&[1.0, 1.0, 3.0], 1), Err(Error::TieFailure { .. })));
        assert!(matches!(
            kappa_from_margins(&[f64::INFINITY, 0.0, f64::INFINITY], 2),
            Err(Error::InfeasibleTarget { available: 1, target: 2 })
        ));
        assert_eq!(kappa_from_margins(&[f64::NEG_INFINITY, 0.5, f64::INFINITY], 2).unwrap(), 1.5);
        assert!(matches!(
            kappa_from_margins(&[f64::NEG_INFINITY, f64::NEG_INFINITY, 1.0], 1),
            Err(Error::TieFailure { .. })
        ));
    }

    #[test]
    fn tune_kappa_recount() {
        let m = toy_model();
        let dist = toy_distribution();
        let t = tune_kappa(&m, 0.01, &dist, 100_000, 200, 8).unwrap();
        assert_eq!(t.retained.len(), 200);
        let region = CriticalRegion::new(&m, 0.01, t.kappa);
        assert!(t.retained.iter().all(|x| region.contains(x)));
        // recount over the same draws
        let mut count = 0;
        for (b, _, len) in blocks(100_000, BLOCK) {
            let xs = dist.sample_many(&mut rng(derive_seed(8, b as u64)), len);
            count += region.contains_block(&xs).iter().filter(|v| **v).count();
        }
        assert_eq!(count, 200);
        let all = tune_kappa(&m, 0.01, &dist, 5000, 5000, 1).unwrap();
        assert_eq!(all.retained.len(), 5000);
    }

    #[test]
    fn rejection_sample_members() {
        let m = toy_model();
        let region = CriticalRegion::new(&m, 0.01, 3.0);
        let z = sample_importance(&region, &toy_distribution(), 100, 4, DEFAULT_MAX_DRAWS).unwrap();
        assert_eq!(z.len(), 100);
        assert!(z.iter().all(|x| region.contains(x)));
        assert!(sample_importance(&region, &toy_distribution(), 0, 4, 10).unwrap().is_empty());
        let empty = CriticalRegion::new(&m, -1e9, 0.0);
        assert!(matches!(
            sample_importance(&empty, &toy_distribution(), 3, 4, 10_000),
            Err(Error::RejectionStall { .. })
        ));
    }

    #[test]
    fn whole_box_rejection_is_the_input_law() {
        let m = toy_model();
        let region = CriticalRegion::new(&m, 1e9, 0.0);
        let z = sample_importance(&region, &toy_distribution(), 10_000, 6, DEFAULT_MAX_DRAWS).unwrap();
        // Kolmogorov–Smirnov distance of the first marginal against U(-10, 10)
        let mut x: Vec<f64> = z.iter().map(|p| p[0]).collect();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = (v + 10.0) / 20.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "ks = {ks}");
    }

    #[test]
    fn is_estimate_edges() {
        let dom = toy_domain();
        let never = BudgetedObjective::from_fn(|_| 1.0, dom.clone(), 10);
        let z = vec![vec![0.0, 0.0]; 5];
        let e = is_estimate(&never, &z, 0.5, 0.2).unwrap();
        assert_eq!((e.gamma, e.estimate), (0, 0.0));
        let always = BudgetedObjective::from_fn(|_| 0.0, dom, 10);
        let e = is_estimate(&always, &z, 0.5, 0.2).unwrap();
        assert_eq!((e.gamma, e.estimate), (5, 0.2));
        assert_eq!(always.used(), 5);
        assert!(matches!(is_estimate(&always, &vec![vec![0.0, 0.0]; 6], 0.5, 0.2), Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn bound_examples() {
        let r = mbis_bound(0, 50, 0.01, 0.0, 0.01, 0.01).unwrap();
        let expected = (1.0 - 0.01f64.powf(1.0 / 50.0)) * 0.01;
        assert!((r.bound - expected).abs() < 1e-15);
        assert!((r.bound - 8.80e-4).abs() < 1e-6);
        assert!((r.level - 0.98).abs() < 1e-15);
        let a = mbis_bound(3, 50, 0.01, 0.0, 0.01, 0.01).unwrap();
        let b = mbis_bound(3, 50, 0.01, 0.0, 0.01, 0.2).unwrap();
        assert_eq!(a.bound, b.bound);
        assert_eq!(mbis_bound(50, 50, 1.0, 0.0, 0.01, 0.01).unwrap().bound, 1.0);
    }

    #[test]
    fn alpha0_examples() {
        let a = alpha0_search(0, 1000, 1e-3, 0.0).unwrap();
        assert!((a.bound - 1.2e-5).abs() < 0.1 * 1.2e-5, "{}", a.bound);
        // closed form check: (1 - a^{1/m}) P = 2 a at the root
        let lhs = -(a.alpha0.ln() / 1000.0).exp_m1() * 1e-3;
        assert!((lhs - 2.0 * a.alpha0).abs() < 1e-8 * a.alpha0);
        // crossing certificate
        let h = |x: f64| binomial_upper_bound(0, 1000, x).unwrap() * 1e-3 - 2.0 * x;
        assert!(h(a.alpha0) <= 0.0 && h(a.alpha0 * (1.0 - 1e-6)) > 0.0);
        // g evaluated-decreasing along the trace
        let mut tr = a.trace.clone();
        tr.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert!(tr.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(matches!(alpha0_search(0, 1000, 1e-3, 1.0), Err(Error::NoCrossing { .. })));
    }

    #[test]
    fn pipeline_runs_with_both_kappa_rules() {
        let m = toy_model();
        let dist = toy_distribution();
        let obj = crate::blackbox::toy_objective(200);
        let cfg = MbisConfig { m_region: 100_000, ..MbisConfig::default() };
        let r = run_mbis(&m, &obj, &dist, 0.01, &cfg, 1).unwrap();
        assert_eq!(r.budget_used, 50);
        assert!(r.bound >= 0.0 && r.bound <= 1.0);
        let tuned = MbisConfig { kappa: KappaRule::Tuned, source: ImportanceSource::Retained, ..cfg };
        let r = run_mbis(&m, &obj, &dist, 0.01, &tuned, 2).unwrap();
        assert_eq!(r.budget_used, 50);
        assert!((r.prob_region - 50.0 / 100_000.0).abs() < 1e-15);
        let back: MbisResult = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
