//! Experiment orchestration: the two-step classification of a design point,
//! the repeated toy study and the reference Monte Carlo oracle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bayes::{credible_bound, default_grid, posterior_pi_mean, CredibleConfig, PiPosteriorSummary};
use crate::blackbox::{
    external_eval_adapter, toy_distribution, toy_f, toy_objective, BoxDomain, BudgetedObjective, InputDistribution,
    ProtocolConfig,
};
use crate::bounds::{markov_bound, BoundMethod, BoundReport};
use crate::design::{lhs_maximin, scale_to_box, sequential_augment, Design};
use crate::error::{Error, Result};
use crate::kriging::{fit_mle, FitConfig, GpModel, Trend};
use crate::mbis::{
    alpha0_search, is_estimate, run_mbis, sample_importance, tune_kappa, CriticalRegion, ImportanceSource,
    KappaRule, MbisConfig, MbisResult, DEFAULT_MAX_DRAWS,
};
use crate::sampling::{blocks, derive_seed, par_map, rng, substream, MeanAccumulator, BLOCK};

pub const CAMPAIGN_SCHEMA_VERSION: u32 = 1;
pub const MIN_ORACLE_SAMPLES: usize = 1_000_000;

/// Which black box to study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    /// The 2-D toy function under the uniform law on `[-10, 10]^2`.
    #[default]
    Toy,
    /// A line-protocol child process; inputs uniform on the box.
    External {
        command: String,
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
    /// Smooth synthetic score on `[-1, 1]^dim`; not derived from real data.
    Synthetic { dim: usize, shift: f64, seed: u64 },
}

impl ObjectiveSpec {
    pub fn distribution(&self) -> Result<InputDistribution> {
        Ok(match self {
            ObjectiveSpec::Toy => toy_distribution(),
            ObjectiveSpec::External { lower, upper, .. } => {
                InputDistribution::uniform(BoxDomain::new(lower.clone(), upper.clone())?)
            }
            ObjectiveSpec::Synthetic { dim, .. } => InputDistribution::uniform(BoxDomain::cube(*dim, -1.0, 1.0)?),
        })
    }

    /// A fresh budgeted objective with `budget` calls.
    pub fn build(&self, budget: usize) -> Result<BudgetedObjective> {
        match self {
            ObjectiveSpec::Toy => Ok(toy_objective(budget)),
            ObjectiveSpec::External { command, timeout_secs, .. } => {
                let config = ProtocolConfig {
                    timeout: timeout_secs
                        .map(std::time::Duration::from_secs_f64)
                        .or(ProtocolConfig::default().timeout),
                };
                external_eval_adapter(command, self.distribution()?.domain().clone(), budget, config)
            }
            ObjectiveSpec::Synthetic { dim, shift, seed } => {
                let s = Synthetic::new(*dim, *shift, *seed)?;
                let domain = BoxDomain::cube(*dim, -1.0, 1.0)?;
                Ok(BudgetedObjective::from_fn(move |x: &[f64]| s.eval(x), domain, budget))
            }
        }
    }
}

/// Synthetic high-dimensional score
/// `shift + (1/sqrt d) sum w_i x_i + (0.5/d) sum x_i^2 + 0.1 sin(pi sum x_i / sqrt d)`
/// with weights `w_i` uniform in `[0.5, 1.5]`. Failure means a value below 0;
/// `shift` moves the failure probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub weights: Vec<f64>,
    pub shift: f64,
}

impl Synthetic {
    pub fn new(dim: usize, shift: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        use rand::Rng as _;
        let mut r = rng(substream(seed, "synthetic-weights"));
        let weights = (0..dim).map(|_| r.random_range(0.5..1.5)).collect();
        Ok(Synthetic { weights, shift })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.weights.len() as f64;
        let lin: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() / d.sqrt();
        let quad: f64 = 0.5 * x.iter().map(|v| v * v).sum::<f64>() / d;
        let s: f64 = x.iter().sum::<f64>() / d.sqrt();
        self.shift + lin + quad + 0.1 * (std::f64::consts::PI * s).sin()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    #[default]
    LhsMaximin,
    /// LHS-maximin on a first fraction of the points, then one point at a
    /// time by the misclassification proxy.
    SequentialProxy,
}

/// Safety markers on the failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Markers {
    /// At or below: totally safe.
    pub safe: f64,
    /// At or above: unsafe.
    pub unsafe_: f64,
    /// Stage-1 exit as totally safe when `E(Pi)` is at most this.
    pub stage1_safe_mean: f64,
}

impl Default for Markers {
    fn default() -> Self {
        Markers { safe: 1e-5, unsafe_: 1e-2, stage1_safe_mean: 0.5e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub objective: ObjectiveSpec,
    /// Total evaluation budget `N`.
    pub budget: usize,
    /// Design size.
    pub n: usize,
    /// Importance-sampling evaluations.
    pub m: usize,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub markers: Markers,
    pub design: DesignMethod,
    pub anneal_iterations: usize,
    /// Share of the design laid out before sequential augmentation.
    pub initial_fraction: f64,
    /// Refit the hyperparameters after this many added points.
    pub refit_every: usize,
    /// Candidate draws per sequential step.
    pub candidates: usize,
    pub trend: Trend,
    pub fit: FitConfig,
    /// Draws for `E(Pi)` in the first stage.
    pub m_mean: usize,
    /// Draws for the region probability, `c(kappa)` and the tuning of `kappa`.
    pub m_region: usize,
    /// Fixed `kappa` used by the toy study.
    pub kappa: f64,
    pub source: ImportanceSource,
    pub grid_points: usize,
    pub realizations: usize,
    pub m_int: usize,
    /// Level parameter of the credible bound.
    pub credible_alpha: f64,
    pub oracle_samples: usize,
    /// Design size of the credible-bound strategy in the toy study.
    pub bayes_n: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            objective: ObjectiveSpec::Toy,
            budget: 100,
            n: 50,
            m: 50,
            rho: 0.01,
            alpha: 0.01,
            beta: 0.01,
            markers: Markers::default(),
            design: DesignMethod::LhsMaximin,
            anneal_iterations: 10_000,
            initial_fraction: 0.8,
            refit_every: 1,
            candidates: 1000,
            trend: Trend::Constant,
            fit: FitConfig::default(),
            m_mean: 1_000_000,
            m_region: 1_000_000,
            kappa: 3.0,
            source: ImportanceSource::Rejection,
            grid_points: 100,
            realizations: 1000,
            m_int: 100_000,
            credible_alpha: 0.02,
            oracle_samples: 10_000_000,
            bayes_n: 100,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n + self.m > self.budget {
            return Err(Error::invalid(format!(
                "n + m = {} exceeds the budget {}",
                self.n + self.m,
                self.budget
            )));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha + self.beta < 1.0) {
            return Err(Error::invalid("need alpha, beta > 0 and alpha + beta < 1"));
        }
        if !(self.markers.safe < self.markers.unsafe_) {
            return Err(Error::invalid("safe marker must be below the unsafe marker"));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) || self.refit_every == 0 {
            return Err(Error::invalid("need initial_fraction in (0, 1] and refit_every >= 1"));
        }
        Ok(())
    }
}

/// Evaluates an `n`-point design and fits the model.
pub fn build_design(
    obj: &BudgetedObjective,
    dist: &InputDistribution,
    config: &CampaignConfig,
    n: usize,
    seed: u64,
) -> Result<GpModel> {
    let domain = dist.domain();
    let d = domain.dim();
    let first = match config.design {
        DesignMethod::LhsMaximin => n,
        DesignMethod::SequentialProxy => ((n as f64 * config.initial_fraction).ceil() as usize).clamp(2, n),
    };
    let unit = lhs_maximin(first, d, config.anneal_iterations, substream(seed, "design"))?;
    let points = scale_to_box(&unit, domain)?.points;
    let y = obj.eval_many(&points)?;
    let fit_seed = substream(seed, "fit");
    let mut model = fit_mle(&Design::with_outputs(points, y)?, config.trend, &config.fit, fit_seed)?;
    let mut since_refit = 0;
    for step in first..n {
        let mut r = rng(derive_seed(substream(seed, "candidates"), step as u64));
        let candidates = dist.sample_many(&mut r, config.candidates.max(1));
        let aug = sequential_augment(&model, config.rho, &candidates)?;
        let y = obj.eval(&aug.point)?;
        let mut design = model.design();
        design.points.push(aug.point);
        design.outputs.as_mut().expect("fitted design has outputs").push(y);
        since_refit += 1;
        model = if since_refit >= config.refit_every || step + 1 == n {
            since_refit = 0;
            fit_mle(&design, config.trend, &config.fit, derive_seed(fit_seed, step as u64))?
        } else {
            GpModel::with_parameters(&design, config.trend, model.kernel().clone(), None, None, &config.fit.jitter)?
        };
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    TotallySafe,
    RelativelySafe,
    Unsafe,
}

impl Verdict {
    /// Reads a verdict off an upper bound and the two markers.
    pub fn from_bound(bound: f64, markers: &Markers) -> Self {
        if bound <= markers.safe {
            Verdict::TotallySafe
        } else if bound >= markers.unsafe_ {
            Verdict::Unsafe
        } else {
            Verdict::RelativelySafe
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub schema_version: u32,
    pub verdict: Verdict,
    pub stage: u8,
    pub reports: Vec<BoundReport>,
    pub pi_mean: PiPosteriorSummary,
    pub budget_used: usize,
    pub flags: Vec<String>,
    pub seed: u64,
}

/// Two-step classification of one design point.
///
/// Stage 1 fits the model on `n` points and reads `E(Pi)`: at most
/// `stage1_safe_mean` exits as totally safe, at least the unsafe marker exits
/// as unsafe. Otherwise stage 2 tunes `kappa` so that `m` of `m_region` draws
/// are in the region, spends `m` evaluations there and reports `2 alpha0`.
///
/// The stage-1 Markov report applies `P(Pi >= E/alpha) <= alpha` as is,
/// with `alpha = stage1_safe_mean / safe`. With the default markers a mean
/// of `0.5e-10` therefore reads as a bound of `1e-5` at level `1 - 0.5e-5`,
/// not `0.5e-5` at that level.
pub fn classify_point(
    obj: &BudgetedObjective,
    dist: &InputDistribution,
    config: &CampaignConfig,
    seed: u64,
) -> Result<Classification> {
    config.validate()?;
    if obj.remaining() < config.n {
        return Err(Error::BudgetExhausted { used: obj.used(), total: obj.budget_total() });
    }
    let start = obj.used();
    let model = build_design(obj, dist, config, config.n, substream(seed, "stage1"))?;
    let pm = posterior_pi_mean(&model, dist, config.m_mean, config.rho, substream(seed, "pi-mean"))?;
    let markers = &config.markers;
    // Markov at the level that turns the stage-1 threshold into the safe marker
    let markov_alpha = (markers.stage1_safe_mean / markers.safe).clamp(f64::MIN_POSITIVE, 0.5);
    let mut stage1 = BoundReport::new(BoundMethod::Markov, markov_bound(pm.mean, markov_alpha)?, 1.0 - markov_alpha)
        .with_input("pi_mean", pm.mean)
        .with_input("pi_mean_std_error", pm.mean_std_error)
        .with_input("m_mean", config.m_mean)
        .with_input("n", config.n);
    stage1.seed = Some(seed);
    let mut out = Classification {
        schema_version: CAMPAIGN_SCHEMA_VERSION,
        verdict: Verdict::RelativelySafe,
        stage: 1,
        reports: vec![stage1],
        pi_mean: pm.clone(),
        budget_used: 0,
        flags: Vec::new(),
        seed,
    };
    if pm.mean <= markers.stage1_safe_mean || pm.mean >= markers.unsafe_ {
        out.verdict = if pm.mean <= markers.stage1_safe_mean {
            Verdict::TotallySafe
        } else {
            Verdict::Unsafe
        };
        if pm.mean == 0.0 {
            out.flags.push(format!("E(Pi) is numerically zero over {} draws", config.m_mean));
        }
        out.budget_used = obj.used() - start;
        return Ok(out);
    }

    out.stage = 2;
    if obj.remaining() < config.m {
        return Err(Error::BudgetExhausted { used: obj.used(), total: obj.budget_total() });
    }
    let tuned = tune_kappa(&model, config.rho, dist, config.m_region, config.m, substream(seed, "tune"))?;
    let z = match config.source {
        ImportanceSource::Retained => tuned.retained.clone(),
        ImportanceSource::Rejection => sample_importance(
            &CriticalRegion::new(&model, config.rho, tuned.kappa),
            dist,
            config.m,
            substream(seed, "importance"),
            DEFAULT_MAX_DRAWS,
        )?,
    };
    let est = is_estimate(obj, &z, config.rho, tuned.probability)?;
    let c = tuned.c_kappa.value;
    let mut report = match alpha0_search(est.gamma, est.m, tuned.probability, c) {
        Ok(a0) => {
            out.verdict = Verdict::from_bound(a0.bound, markers);
            BoundReport::new(BoundMethod::Mbis, a0.bound, 1.0 - a0.bound).with_input("alpha0", a0.alpha0)
        }
        Err(Error::NoCrossing { .. }) => {
            out.verdict = Verdict::RelativelySafe;
            out.flags.push("no level-matched bound below 1/2: alpha0 search found no crossing".into());
            BoundReport::new(BoundMethod::Mbis, 1.0, 0.0)
        }
        Err(e) => return Err(e),
    };
    report = report
        .with_input("kappa", tuned.kappa)
        .with_input("prob_region", tuned.probability)
        .with_input("c_kappa", c)
        .with_input("c_kappa_std_error", tuned.c_kappa.std_error)
        .with_input("m_region", config.m_region)
        .with_input("estimate", est.estimate);
    report.successes = Some(est.gamma);
    report.trials = Some(est.m);
    report.seed = Some(seed);
    out.reports.push(report);
    out.budget_used = obj.used() - start;
    Ok(out)
}

/// Direct Monte Carlo estimate of `P(f(X) < rho)` with the true function.
/// Uses no budget; intended as a reference value.
pub fn oracle_pi<F>(f: F, dist: &InputDistribution, rho: f64, m: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if m < MIN_ORACLE_SAMPLES {
        return Err(Error::invalid(format!("oracle needs M >= {MIN_ORACLE_SAMPLES}")));
    }
    let parts = par_map(blocks(m, BLOCK), |(b, _, len)| {
        let mut r = rng(derive_seed(seed, b as u64));
        let mut acc = MeanAccumulator::default();
        for _ in 0..len {
            let x = dist.sample(&mut r);
            acc.push(if f(&x) < rho { 1.0 } else { 0.0 });
        }
        acc
    });
    let mut acc = MeanAccumulator::default();
    parts.iter().for_each(|p| acc.merge(p));
    Ok((acc.mean(), acc.std_error()))
}

pub fn toy_oracle_pi(rho: f64, m: usize, seed: u64) -> Result<(f64, f64)> {
    oracle_pi(|x| toy_f(x[0], x[1]), &toy_distribution(), rho, m, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMethod {
    Mbis,
    Bayes,
}

/// One repetition of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub repetition: usize,
    pub method: StudyMethod,
    pub bound: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
    /// Simulated `Pi` values (credible bound only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pi_sample: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbis: Option<MbisResult>,
}

/// Six-number summary in units of `1e-4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub min: f64,
    pub q1: f64,
    pub mean: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub coverage: f64,
    pub nominal_level: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub schema_version: u32,
    pub repetitions: usize,
    pub seed: u64,
    pub oracle_pi: f64,
    pub oracle_std_error: f64,
    pub rows: Vec<StudyRow>,
    pub summaries: Vec<MethodSummary>,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(method: StudyMethod, rows: &[StudyRow], nominal_level: f64) -> Option<MethodSummary> {
    let rows: Vec<&StudyRow> = rows.iter().filter(|r| r.method == method).collect();
    let mut b: Vec<f64> = rows.iter().filter_map(|r| r.bound).collect();
    if b.is_empty() {
        return None;
    }
    b.sort_by(f64::total_cmp);
    let covered = rows.iter().filter(|r| r.covered == Some(true)).count();
    let scale = 1e4;
    Some(MethodSummary {
        method,
        min: b[0] * scale,
        q1: quantile(&b, 0.25) * scale,
        mean: b.iter().sum::<f64>() / b.len() as f64 * scale,
        median: quantile(&b, 0.5) * scale,
        q3: quantile(&b, 0.75) * scale,
        max: b[b.len() - 1] * scale,
        coverage: covered as f64 / b.len() as f64,
        nominal_level,
        successes: b.len(),
        failures: rows.len() - b.len(),
    })
}

/// One repetition of the importance-sampling strategy on the toy problem.
pub fn toy_mbis_repetition(config: &CampaignConfig, seed: u64) -> Result<MbisResult> {
    let dist = toy_distribution();
    let obj = toy_objective(config.n + config.m);
    let model = build_design(&obj, &dist, config, config.n, substream(seed, "design"))?;
    let mc = MbisConfig {
        m: config.m,
        m_region: config.m_region,
        kappa: KappaRule::Fixed { kappa: config.kappa },
        source: ImportanceSource::Rejection,
        alpha: config.alpha,
        beta: config.beta,
        max_draws: DEFAULT_MAX_DRAWS,
    };
    run_mbis(&model, &obj, &dist, config.rho, &mc, substream(seed, "mbis"))
}

/// One repetition of the credible-bound strategy on the toy problem.
pub fn toy_bayes_repetition(config: &CampaignConfig, seed: u64) -> Result<crate::bayes::CredibleResult> {
    let dist = toy_distribution();
    let obj = toy_objective(config.bayes_n);
    let model = build_design(&obj, &dist, config, config.bayes_n, substream(seed, "design"))?;
    let grid = default_grid(&model, dist.domain(), config.grid_points, substream(seed, "grid"))?;
    let cc = CredibleConfig {
        realizations: config.realizations,
        m_int: config.m_int,
        alpha: config.credible_alpha,
        ..CredibleConfig::default()
    };
    credible_bound(&model, &dist, &grid, config.rho, &cc, substream(seed, "credible"))
}

/// Repeats each strategy on fresh designs and summarizes the bounds.
pub fn run_toy_study(
    config: &CampaignConfig,
    methods: &[StudyMethod],
    repetitions: usize,
    seed: u64,
) -> Result<StudyResult> {
    if repetitions == 0 {
        return Err(Error::invalid("need at least one repetition"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no study method selected"));
    }
    let (oracle, oracle_se) = toy_oracle_pi(config.rho, config.oracle_samples, substream(seed, "oracle"))?;
    let mut jobs = Vec::new();
    for rep in 0..repetitions {
        for m in methods {
            jobs.push((rep, *m));
        }
    }
    let rows = par_map(jobs, |(rep, method)| {
        let s = derive_seed(substream(seed, method_label(method)), rep as u64);
        let mut row = StudyRow {
            repetition: rep,
            method,
            bound: None,
            covered: None,
            error: None,
            pi_sample: Vec::new(),
            mbis: None,
        };
        let res = match method {
            StudyMethod::Mbis => toy_mbis_repetition(config, s).map(|r| {
                row.mbis = Some(r.clone());
                r.bound
            }),
            StudyMethod::Bayes => toy_bayes_repetition(config, s).map(|r| {
                row.pi_sample = r.pi_sample;
                r.report.bound
            }),
        };
        match res {
            Ok(b) => {
                row.bound = Some(b);
                row.covered = Some(b >= oracle);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    });
    let mut summaries = Vec::new();
    for m in methods {
        let nominal = match m {
            StudyMethod::Mbis => 1.0 - (config.alpha + config.beta),
            StudyMethod::Bayes => 1.0 - config.credible_alpha,
        };
        if let Some(s) = summarize(*m, &rows, nominal) {
            summaries.push(s);
        }
    }
    Ok(StudyResult {
        schema_version: CAMPAIGN_SCHEMA_VERSION,
        repetitions,
        seed,
        oracle_pi: oracle,
        oracle_std_error: oracle_se,
        rows,
        summaries,
    })
}

fn method_label(m: StudyMethod) -> &'static str {
    match m {
        StudyMethod::Mbis => "study-mbis",
        StudyMethod::Bayes => "study-bayes",
    }
}

impl StudyResult {
    /// Per-repetition bounds.
    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["repetition", "method", "bound", "covered", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.repetition.to_string(),
                method_label(r.method).trim_start_matches("study-").to_string(),
                r.bound.map(|b| format!("{b:e}")).unwrap_or_default(),
                r.covered.map(|c| c.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary table, statistics multiplied by `1e4`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method", "min", "q1", "mean", "median", "q3", "max", "coverage", "nominal", "ok", "failed",
        ])?;
        for s in &self.summaries {
            w.write_record([
                method_label(s.method).trim_start_matches("study-").to_string(),
                format!("{:.3}", s.min),
                format!("{:.3}", s.q1),
                format!("{:.3}", s.mean),
                format!("{:.3}", s.median),
                format!("{:.3}", s.q3),
                format!("{:.3}", s.max),
                format!("{:.3}", s.coverage),
                format!("{:.3}", s.nominal_level),
                s.successes.to_string(),
                s.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, method: StudyMethod) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_config(n: usize) -> CampaignConfig {
        CampaignConfig {
            objective: ObjectiveSpec::Synthetic { dim: 3, shift: 0.0, seed: 1 },
            budget: 2 * n,
            n,
            m: n,
            rho: 0.0,
            anneal_iterations: 200,
            m_mean: 100_000,
            m_region: 100_000,
            ..CampaignConfig::default()
        }
    }

    #[test]
    fn never_failing_is_totally_safe_at_stage_one() {
        let cfg = const_config(10);
        let domain = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        let obj = BudgetedObjective::from_fn(|_| 1.0, domain.clone(), 20);
        let dist = InputDistribution::uniform(domain);
        let c = classify_point(&obj, &dist, &cfg, 3).unwrap();
        assert_eq!(c.verdict, Verdict::TotallySafe);
        assert_eq!(c.stage, 1);
        assert_eq!(c.budget_used, 10);
        assert_eq!(obj.used(), 10);
    }

    #[test]
    fn always_failing_is_unsafe() {
        let cfg = const_config(10);
        let domain = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        let obj = BudgetedObjective::from_fn(|_| -1.0, domain.clone(), 20);
        let dist = InputDistribution::uniform(domain);
        let c = classify_point(&obj, &dist, &cfg, 3).unwrap();
        assert_eq!(c.verdict, Verdict::Unsafe);
        assert_eq!(c.stage, 1);
        assert_eq!(c.budget_used, 10);
    }

    #[test]
    fn verdict_markers() {
        let m = Markers::default();
        assert_eq!(Verdict::from_bound(1.2e-5, &m), Verdict::RelativelySafe);
        assert_eq!(Verdict::from_bound(1e-5, &m), Verdict::TotallySafe);
        assert_eq!(Verdict::from_bound(1e-2, &m), Verdict::Unsafe);
        // lowering both markers never moves a verdict toward safer
        let lower = Markers { safe: 1e-6, unsafe_: 1e-3, ..m };
        for b in [1e-7, 5e-6, 1.2e-5, 5e-4, 5e-3, 0.5] {
            assert!(Verdict::from_bound(b, &lower) >= Verdict::from_bound(b, &m));
        }
    }

    #[test]
    fn synthetic_stage_two() {
        // at this shift E(Pi) is about 1e-6, so stage 1 neither clears nor condemns the point
        let spec = ObjectiveSpec::Synthetic { dim: 4, shift: 1.2, seed: 2 };
        let cfg = CampaignConfig {
            objective: spec.clone(),
            budget: 60,
            n: 30,
            m: 30,
            rho: 0.0,
            anneal_iterations: 500,
            m_mean: 100_000,
            m_region: 100_000,
            ..CampaignConfig::default()
        };
        let obj = spec.build(cfg.budget).unwrap();
        let dist = spec.distribution().unwrap();
        let c = classify_point(&obj, &dist, &cfg, 5).unwrap();
        assert_eq!(c.stage, 2);
        assert_eq!(c.budget_used, 60);
        assert_eq!(c.reports.len(), 2);
        assert_eq!(c.reports[1].trials, Some(30));
        let again = classify_point(&spec.build(cfg.budget).unwrap(), &dist, &cfg, 5).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn oracle_edges() {
        assert_eq!(toy_oracle_pi(-1.0, 1_000_000, 1).unwrap().0, 0.0);
        assert_eq!(toy_oracle_pi(10.0, 1_000_000, 1).unwrap().0, 1.0);
        assert!(toy_oracle_pi(0.01, 10, 1).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn single_repetition_study() {
        let cfg = CampaignConfig {
            anneal_iterations: 500,
            m_region: 100_000,
            oracle_samples: 1_000_000,
            ..CampaignConfig::default()
        };
        let s = run_toy_study(&cfg, &[StudyMethod::Mbis], 1, 4).unwrap();
        let sum = s.summary(StudyMethod::Mbis).unwrap();
        assert_eq!(sum.successes + sum.failures, 1);
        if sum.successes == 1 {
            assert!(sum.min == sum.max && sum.q1 == sum.median && sum.mean == sum.q3);
        }
        let mut buf = Vec::new();
        s.write_summary_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("method,min,q1"));
    }

    #[test]
    fn sequential_design_respects_budget() {
        let cfg = CampaignConfig {
            design: DesignMethod::SequentialProxy,
            anneal_iterations: 200,
            candidates: 200,
            refit_every: 2,
            ..CampaignConfig::default()
        };
        let obj = toy_objective(20);
        let m = build_design(&obj, &toy_distribution(), &cfg, 20, 7).unwrap();
        assert_eq!(m.n(), 20);
        assert_eq!(obj.used(), 20);
    }
}
