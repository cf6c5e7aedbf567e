//! Data generators and experiment runners.
//!
//! Single-test experiments draw `T_h ~ family(theta, 1)` for the first
//! `r_star` coordinates and location zero elsewhere, then record how often
//! each test rejects. Multiple-testing experiments draw a batch of
//! hypotheses with known null status and report the empirical FDR and power
//! of each p-value source combined with BH or Storey.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::adjustment::AdjustmentTable;
use crate::combining::{
    base_pvalue, check_r, order_by_magnitude, standard_pch_pvalue, CombiningMethod, StatVector,
};
use crate::distributions::{normal_quantile, LocationFamily};
use crate::engine::{CpchEngine, Evaluation};
use crate::error::{domain, Error, Result};
use crate::multiple_testing::{benjamini_hochberg, storey, PValueBatch};
use crate::rng::{derive_seed, open_unit, substream};

/// Stand-in for an infinitely separated conditioned mean.
pub const LFN_PROXY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    /// Fisher or Simes applied to the small block; Max-P when `r = m`.
    Standard,
    /// Unconditional law of the statistic with the MLE plug-in.
    Marginal,
    /// Unconditional law with the true parameter.
    MarginalOracle,
    Unadjusted,
    /// Unadjusted p-value compared with `a(alpha)` from the table.
    Adjusted,
    /// Conditional law with the true parameter.
    Oracle,
    /// Adjusted test under a normal model applied to `W_i = Phi^-1(1 - p_i / 2)`.
    Misspecified,
}

impl TestKind {
    pub const ALL: [TestKind; 7] = [
        TestKind::Standard,
        TestKind::Marginal,
        TestKind::MarginalOracle,
        TestKind::Unadjusted,
        TestKind::Adjusted,
        TestKind::Oracle,
        TestKind::Misspecified,
    ];

    fn name(self) -> &'static str {
        match self {
            TestKind::Standard => "standard",
            TestKind::Marginal => "marginal",
            TestKind::MarginalOracle => "marginal_oracle",
            TestKind::Unadjusted => "unadjusted",
            TestKind::Adjusted => "adjusted",
            TestKind::Oracle => "oracle",
            TestKind::Misspecified => "misspecified",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown test '{s}'")))
    }
}

/// How the signal is spread over the first `r_star` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalProfile {
    /// Every non-null coordinate at `theta`.
    #[default]
    Flat,
    /// Coordinate `h < r_star` at `theta (h + 1) / r_star`, e.g. `(theta/2, theta)`.
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleScenario {
    pub m: usize,
    pub r: usize,
    pub r_star: usize,
    pub theta: f64,
    pub family: LocationFamily,
    pub reps: usize,
    pub profile: SignalProfile,
}

impl SingleScenario {
    /// Normal family, flat profile.
    pub fn new(m: usize, r: usize, r_star: usize, theta: f64, reps: usize) -> Self {
        Self {
            m,
            r,
            r_star,
            theta,
            family: LocationFamily::Normal,
            reps,
            profile: SignalProfile::Flat,
        }
    }

    pub fn with_family(self, family: LocationFamily) -> Self {
        Self { family, ..self }
    }

    pub fn with_profile(self, profile: SignalProfile) -> Self {
        Self { profile, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check_r(self.m, self.r)?;
        if self.r_star > self.m {
            return domain(format!("r_star = {} exceeds m = {}", self.r_star, self.m));
        }
        if !self.theta.is_finite() {
            return domain("theta must be finite");
        }
        if self.reps == 0 {
            return domain("reps must be at least 1");
        }
        Ok(())
    }

    pub fn true_theta(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| match self.profile {
                _ if i >= self.r_star => 0.0,
                SignalProfile::Flat => self.theta,
                SignalProfile::Ramp => self.theta * (i + 1) as f64 / self.r_star as f64,
            })
            .collect()
    }

    pub fn is_null(&self) -> bool {
        self.r_star < self.r
    }
}

/// Draw from the family at location zero.
pub fn standard_draw<R: Rng + ?Sized>(family: LocationFamily, rng: &mut R) -> f64 {
    let u = open_unit(rng);
    match family {
        LocationFamily::Normal => normal_quantile(u),
        _ => family.quantile_raw(u),
    }
}

fn draw_vector(theta: &[f64], family: LocationFamily, seed: u64) -> Result<StatVector> {
    let mut rng = substream(seed, &[]);
    StatVector::new(
        theta
            .iter()
            .map(|&t| t + standard_draw(family, &mut rng))
            .collect(),
        family,
    )
}

pub fn gen_single(s: &SingleScenario, seed: u64) -> Result<Vec<StatVector>> {
    s.validate()?;
    let theta = s.true_theta();
    (0..s.reps)
        .into_par_iter()
        .map(|i| draw_vector(&theta, s.family, derive_seed(seed, &[i as u64])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureScenario {
    pub hypotheses: usize,
    pub pi1: f64,
    pub w: f64,
    pub theta: f64,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateScenario {
    pub hypotheses: usize,
    pub theta: f64,
    pub threshold: f64,
    pub base_rate: f64,
}

impl CovariateScenario {
    pub fn new(hypotheses: usize, theta: f64) -> Self {
        Self {
            hypotheses,
            theta,
            threshold: 0.95,
            base_rate: 0.1,
        }
    }
}

/// A generated batch with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledBatch {
    pub stats: Vec<StatVector>,
    /// Number of nonzero means per hypothesis.
    pub r_star: Vec<usize>,
    pub covariates: Option<Vec<f64>>,
}

fn check_prob(x: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        domain(format!("{name} must lie in [0, 1], got {x}"))
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    open_unit(rng) < p
}

pub fn gen_mixture(s: &MixtureScenario, seed: u64) -> Result<LabelledBatch> {
    check_prob(s.pi1, "pi1")?;
    check_prob(s.w, "w")?;
    if s.m < 2 {
        return domain("m must be at least 2");
    }
    let rows = (0..s.hypotheses)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, &[j as u64]);
            let b = bernoulli(s.pi1, &mut rng);
            let gamma: Vec<bool> = (0..s.m)
                .map(|_| {
                    if bernoulli(s.w, &mut rng) {
                        b
                    } else {
                        bernoulli(s.pi1, &mut rng)
                    }
                })
                .collect();
            let values = gamma
                .iter()
                .map(|&g| if g { s.theta } else { 0.0 } + standard_draw(LocationFamily::Normal, &mut rng))
                .collect();
            Ok((StatVector::normal(values)?, gamma.iter().filter(|&&g| g).count()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (stats, r_star) = rows.into_iter().unzip();
    Ok(LabelledBatch {
        stats,
        r_star,
        covariates: None,
    })
}

pub fn gen_covariate(s: &CovariateScenario, seed: u64) -> Result<LabelledBatch> {
    check_prob(s.threshold, "threshold")?;
    check_prob(s.base_rate, "base_rate")?;
    let rows = (0..s.hypotheses)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, &[j as u64]);
            let x = open_unit(&mut rng);
            let pi = if x >= s.threshold { 1.0 } else { s.base_rate };
            let gamma = [bernoulli(pi, &mut rng), bernoulli(pi, &mut rng)];
            let values = gamma
                .iter()
                .map(|&g| if g { s.theta } else { 0.0 } + standard_draw(LocationFamily::Normal, &mut rng))
                .collect();
            Ok((StatVector::normal(values)?, gamma.iter().filter(|&&g| g).count(), x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut batch = LabelledBatch {
        stats: Vec::with_capacity(rows.len()),
        r_star: Vec::with_capacity(rows.len()),
        covariates: Some(Vec::with_capacity(rows.len())),
    };
    for (v, k, x) in rows {
        batch.stats.push(v);
        batch.r_star.push(k);
        batch.covariates.as_mut().unwrap().push(x);
    }
    Ok(batch)
}

/// Conditional p-value with the true null parameter as plug-in: exact for
/// `m = r = 2`, Monte Carlo with `n` draws per component otherwise.
pub fn oracle_cpch_pvalue(
    v: &StatVector,
    true_theta: &[f64],
    r: usize,
    method: CombiningMethod,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if true_theta.len() != v.m() {
        return domain("true_theta length must equal m");
    }
    let evaluation = if v.m() == 2 && r == 2 {
        Evaluation::Analytic
    } else {
        Evaluation::MonteCarlo { n }
    };
    let engine = CpchEngine::new(v.m(), r, method, v.family())?;
    Ok(engine
        .oracle_pvalue(v.values(), true_theta, evaluation, seed)?
        .pvalue)
}

/// Unconditional survival of the statistic under the MLE plug-in, by Monte
/// Carlo with `n` draws.
pub fn marginal_pch_pvalue(
    v: &StatVector,
    r: usize,
    method: CombiningMethod,
    n: usize,
    seed: u64,
) -> Result<f64> {
    marginal_pvalue_with(v, r, method, None, Evaluation::MonteCarlo { n }, seed)
}

/// Marginal p-value under `plugin` (model coordinates, any order) or the
/// MLE plug-in when `None`. Single-coordinate blocks are evaluated exactly
/// unless Monte Carlo is requested.
pub fn marginal_pvalue_with(
    v: &StatVector,
    r: usize,
    method: CombiningMethod,
    plugin: Option<&[f64]>,
    evaluation: Evaluation,
    seed: u64,
) -> Result<f64> {
    let decomp = order_by_magnitude(v, r)?;
    let family = v.family();
    let theta: Vec<f64> = match plugin {
        Some(t) if t.len() == v.m() => t.to_vec(),
        Some(_) => return domain("plugin length must equal m"),
        None => {
            let mut t = vec![0.0; decomp.k()];
            t.extend_from_slice(decomp.conditioned());
            t
        }
    };
    let k = decomp.k();
    let use_exact = match evaluation {
        Evaluation::Analytic => {
            if k > 1 {
                return Err(Error::Unsupported(k));
            }
            true
        }
        Evaluation::Auto { .. } => k == 1,
        Evaluation::MonteCarlo { .. } => false,
    };
    if use_exact {
        // the smallest magnitude exceeds f iff every coordinate does
        let f = decomp.small()[0].abs();
        return Ok(theta
            .iter()
            .map(|&mu| 1.0 - family.interval_prob(-f - mu, f - mu))
            .product::<f64>()
            .clamp(0.0, 1.0));
    }
    let n = match evaluation {
        Evaluation::MonteCarlo { n } | Evaluation::Auto { n } => n,
        Evaluation::Analytic => unreachable!(),
    };
    if n == 0 {
        return domain("Monte Carlo sample count must be positive");
    }
    let f_obs = method.statistic(decomp.small(), family);
    let mut rng = substream(seed, &[]);
    let mut draw = vec![0.0; v.m()];
    let mut hits = 0usize;
    for _ in 0..n {
        for (x, &mu) in draw.iter_mut().zip(&theta) {
            *x = mu + standard_draw(family, &mut rng);
        }
        draw.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        if method.statistic(&draw[..k], family) >= f_obs {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (n + 1) as f64)
}

/// `W_i = Phi^-1(1 - p_i / 2)` from the base p-values under the data's own
/// family, i.e. what an analyst seeing only p-values would feed a normal
/// model.
pub fn normal_scores(v: &StatVector) -> Result<StatVector> {
    let w = v
        .values()
        .iter()
        .map(|&t| -normal_quantile(0.5 * base_pvalue(t, v.family()).max(1e-300)))
        .collect();
    StatVector::normal(w)
}

/// Settings shared by the single-test runners.
#[derive(Debug, Clone)]
pub struct SingleTestConfig {
    pub method: CombiningMethod,
    pub alpha: f64,
    pub evaluation: Evaluation,
    pub table: AdjustmentTable,
}

impl SingleTestConfig {
    pub fn new(method: CombiningMethod, alpha: f64) -> Self {
        Self {
            method,
            alpha,
            evaluation: Evaluation::Auto { n: 10_000 },
            table: AdjustmentTable::bundled(),
        }
    }
}

/// One row of a tidy result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub test: String,
    pub method: CombiningMethod,
    pub m: usize,
    pub r: usize,
    pub r_star: usize,
    pub theta: f64,
    pub alpha_or_q: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
}

pub const RESULT_HEADER: &str = "test,method,m,r,r_star,theta,alpha_or_q,metric,value,stderr,reps";

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULT_HEADER}\n");
    for x in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            x.test,
            x.method,
            x.m,
            x.r,
            x.r_star,
            x.theta,
            x.alpha_or_q,
            x.metric,
            x.value,
            x.stderr,
            x.reps
        );
    }
    out
}

/// Engines and the adjusted threshold for one scenario.
struct Runner<'a> {
    s: &'a SingleScenario,
    cfg: &'a SingleTestConfig,
    truth: Vec<f64>,
    engine: CpchEngine,
    normal_engine: CpchEngine,
    a_alpha: Option<f64>,
}

impl<'a> Runner<'a> {
    fn new(s: &'a SingleScenario, cfg: &'a SingleTestConfig, tests: &[TestKind]) -> Result<Self> {
        let needs_table = tests
            .iter()
            .any(|t| matches!(t, TestKind::Adjusted | TestKind::Misspecified));
        let a_alpha = if needs_table {
            Some(cfg.table.interpolate(s.m, s.r, cfg.method, cfg.alpha)?)
        } else {
            None
        };
        let truth = s.true_theta();
        Ok(Self {
            s,
            cfg,
            // oracles need a null parameter; under alternatives the true
            // parameter is not in the null and they are skipped
            truth,
            engine: CpchEngine::new(s.m, s.r, cfg.method, s.family)?,
            normal_engine: CpchEngine::new(s.m, s.r, cfg.method, LocationFamily::Normal)?,
            a_alpha,
        })
    }

    fn rejects(&self, test: TestKind, v: &StatVector, seed: u64) -> Result<bool> {
        let (s, cfg) = (self.s, self.cfg);
        let alpha = cfg.alpha;
        let ev = cfg.evaluation;
        Ok(match test {
            TestKind::Standard => standard_pch_pvalue(v, s.r, cfg.method)? <= alpha,
            TestKind::Marginal => marginal_pvalue_with(v, s.r, cfg.method, None, ev, seed)? < alpha,
            TestKind::MarginalOracle => {
                marginal_pvalue_with(v, s.r, cfg.method, Some(&self.truth), ev, seed)? < alpha
            }
            TestKind::Unadjusted => self.engine.pvalue(v.values(), ev, seed)?.pvalue < alpha,
            TestKind::Adjusted => {
                self.engine.pvalue(v.values(), ev, seed)?.pvalue < self.a_alpha.unwrap()
            }
            TestKind::Oracle => {
                self.engine
                    .oracle_pvalue(v.values(), &self.truth, ev, seed)?
                    .pvalue
                    < alpha
            }
            TestKind::Misspecified => {
                let w = normal_scores(v)?;
                self.normal_engine.pvalue(w.values(), ev, seed)?.pvalue < self.a_alpha.unwrap()
            }
        })
    }
}

/// Rejection rate of every test at every scenario. All tests at a scenario
/// see the same data. The metric is `type1` for null scenarios and `power`
/// otherwise. Oracles are skipped at alternatives, where the true parameter
/// is not a null parameter.
pub fn run_rejection_curve(
    scenarios: &[SingleScenario],
    tests: &[TestKind],
    cfg: &SingleTestConfig,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    if scenarios.is_empty() {
        return domain("scenario grid is empty");
    }
    let mut rows = Vec::new();
    for (pt, s) in scenarios.iter().enumerate() {
        s.validate()?;
        let tests: Vec<TestKind> = tests
            .iter()
            .copied()
            .filter(|t| s.is_null() || !matches!(t, TestKind::Oracle | TestKind::MarginalOracle))
            .collect();
        let runner = Runner::new(s, cfg, &tests)?;
        let point_seed = derive_seed(seed, &[pt as u64]);
        let data = gen_single(s, point_seed)?;
        let counts = data
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let rep_seed = derive_seed(point_seed, &[i as u64, 1]);
                tests
                    .iter()
                    .map(|&t| runner.rejects(t, v, rep_seed).map(usize::from))
                    .collect::<Result<Vec<_>>>()
            })
            .try_reduce(
                || vec![0; tests.len()],
                |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            )?;
        for (t, hits) in tests.iter().zip(counts) {
            let value = hits as f64 / s.reps as f64;
            rows.push(ResultRow {
                test: t.to_string(),
                method: cfg.method,
                m: s.m,
                r: s.r,
                r_star: s.r_star,
                theta: s.theta,
                alpha_or_q: cfg.alpha,
                metric: if s.is_null() { "type1" } else { "power" }.into(),
                value,
                stderr: (value * (1.0 - value) / s.reps as f64).sqrt(),
                reps: s.reps,
            });
        }
    }
    Ok(rows)
}

pub fn run_type1_curve(
    scenarios: &[SingleScenario],
    tests: &[TestKind],
    cfg: &SingleTestConfig,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    if let Some(s) = scenarios.iter().find(|s| !s.is_null()) {
        return domain(format!(
            "r_star = {} is not a null configuration for r = {}",
            s.r_star, s.r
        ));
    }
    run_rejection_curve(scenarios, tests, cfg, seed)
}

pub fn run_power_curve(
    scenarios: &[SingleScenario],
    tests: &[TestKind],
    cfg: &SingleTestConfig,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    if let Some(s) = scenarios.iter().find(|s| s.is_null()) {
        return domain(format!(
            "r_star = {} is a null configuration for r = {}",
            s.r_star, s.r
        ));
    }
    run_rejection_curve(scenarios, tests, cfg, seed)
}

/// Ratio of each power row to the matching `baseline` row, with a
/// delta-method standard error that ignores the correlation between tests.
pub fn normalized_power(rows: &[ResultRow], baseline: TestKind) -> Vec<ResultRow> {
    let base = baseline.to_string();
    rows.iter()
        .filter(|x| x.metric == "power" && x.test != base)
        .filter_map(|x| {
            let b = rows.iter().find(|y| {
                y.test == base
                    && y.metric == "power"
                    && (y.m, y.r, y.r_star) == (x.m, x.r, x.r_star)
                    && y.theta == x.theta
            })?;
            if b.value == 0.0 {
                return None;
            }
            let ratio = x.value / b.value;
            let rel = |v: f64, se: f64| if v > 0.0 { se / v } else { 0.0 };
            Some(ResultRow {
                metric: format!("power_ratio_{base}"),
                value: ratio,
                stderr: ratio
                    * (rel(x.value, x.stderr).powi(2) + rel(b.value, b.stderr).powi(2)).sqrt(),
                ..x.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Procedure {
    Bh,
    Storey { lambda: f64 },
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Procedure::Bh => "bh",
            Procedure::Storey { .. } => "storey",
        })
    }
}

impl Procedure {
    pub fn apply(&self, batch: &PValueBatch, q: f64) -> Result<Vec<usize>> {
        match *self {
            Procedure::Bh => benjamini_hochberg(batch, q),
            Procedure::Storey { lambda } => storey(batch, q, lambda),
        }
    }
}

/// Which single-test p-values feed the procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PValueSource {
    Standard,
    /// Unadjusted conditional p-values.
    Cpch,
}

impl fmt::Display for PValueSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PValueSource::Standard => "standard",
            PValueSource::Cpch => "cpch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline {
    pub source: PValueSource,
    pub procedure: Procedure,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.source, self.procedure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdrScenario {
    Mixture(MixtureScenario),
    Covariate(CovariateScenario),
}

impl FdrScenario {
    fn generate(&self, seed: u64) -> Result<LabelledBatch> {
        match self {
            FdrScenario::Mixture(s) => gen_mixture(s, seed),
            FdrScenario::Covariate(s) => gen_covariate(s, seed),
        }
    }

    fn m(&self) -> usize {
        match self {
            FdrScenario::Mixture(s) => s.m,
            FdrScenario::Covariate(_) => 2,
        }
    }

    fn theta(&self) -> f64 {
        match self {
            FdrScenario::Mixture(s) => s.theta,
            FdrScenario::Covariate(s) => s.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrConfig {
    pub r: usize,
    pub method: CombiningMethod,
    pub q: f64,
    pub replicates: usize,
    pub evaluation: Evaluation,
}

/// Per-replicate false discovery proportion and power of each pipeline,
/// summarised as means with standard errors across replicates.
pub fn run_fdr_experiment(
    scenario: &FdrScenario,
    pipelines: &[Pipeline],
    cfg: &FdrConfig,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    if cfg.replicates == 0 || pipelines.is_empty() {
        return domain("need at least one replicate and one pipeline");
    }
    let m = scenario.m();
    let engine = CpchEngine::new(m, cfg.r, cfg.method, LocationFamily::Normal)?;
    let need_cpch = pipelines.iter().any(|p| p.source == PValueSource::Cpch);
    let mut fdp = vec![Vec::with_capacity(cfg.replicates); pipelines.len()];
    let mut pow = vec![Vec::with_capacity(cfg.replicates); pipelines.len()];
    for rep in 0..cfg.replicates {
        let rep_seed = derive_seed(seed, &[rep as u64]);
        let batch = scenario.generate(rep_seed)?;
        let standard = batch
            .stats
            .iter()
            .map(|v| standard_pch_pvalue(v, cfg.r, cfg.method))
            .collect::<Result<Vec<_>>>()?;
        let cpch = if need_cpch {
            batch
                .stats
                .par_iter()
                .enumerate()
                .map(|(j, v)| {
                    Ok(engine
                        .pvalue(
                            v.values(),
                            cfg.evaluation,
                            derive_seed(rep_seed, &[j as u64, 1]),
                        )?
                        .pvalue)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let standard = PValueBatch::new(standard)?;
        let cpch = PValueBatch::new(cpch)?;
        let non_null: Vec<bool> = batch.r_star.iter().map(|&k| k >= cfg.r).collect();
        let n_alt = non_null.iter().filter(|&&x| x).count();
        for (i, p) in pipelines.iter().enumerate() {
            let source = match p.source {
                PValueSource::Standard => &standard,
                PValueSource::Cpch => &cpch,
            };
            let rej = p.procedure.apply(source, cfg.q)?;
            let true_rej = rej.iter().filter(|&&j| non_null[j]).count();
            fdp[i].push((rej.len() - true_rej) as f64 / rej.len().max(1) as f64);
            pow[i].push(if n_alt == 0 {
                0.0
            } else {
                true_rej as f64 / n_alt as f64
            });
        }
    }
    let mut rows = Vec::new();
    for (i, p) in pipelines.iter().enumerate() {
        for (metric, xs) in [("fdr", &fdp[i]), ("power", &pow[i])] {
            let (mean, se) = mean_se(xs);
            rows.push(ResultRow {
                test: p.to_string(),
                method: cfg.method,
                m,
                r: cfg.r,
                r_star: 0,
                theta: scenario.theta(),
                alpha_or_q: cfg.q,
                metric: metric.into(),
                value: mean,
                stderr: se,
                reps: cfg.replicates,
            });
        }
    }
    Ok(rows)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_generator_shapes() {
        let s = SingleScenario::new(3, 2, 0, 5.0, 50);
        let a = gen_single(&s, 1).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, gen_single(&s, 1).unwrap());
        assert!(a.iter().all(|v| v.values().iter().all(|x| x.abs() < 6.0)));
    }

    #[test]
    fn mixture_edge_cases() {
        let s = MixtureScenario {
            hypotheses: 200,
            pi1: 0.0,
            w: 0.9,
            theta: 3.0,
            m: 4,
        };
        assert!(gen_mixture(&s, 2).unwrap().r_star.iter().all(|&k| k == 0));
        let bad = MixtureScenario { pi1: 1.5, ..s };
        assert!(gen_mixture(&bad, 2).is_err());
    }

    #[test]
    fn covariate_high_x_is_full_alternative() {
        let b = gen_covariate(&CovariateScenario::new(2000, 2.0), 3).unwrap();
        let xs = b.covariates.unwrap();
        for (x, k) in xs.iter().zip(&b.r_star) {
            if *x >= 0.95 {
                assert_eq!(*k, 2);
            }
        }
    }

    #[test]
    fn marginal_examples() {
        let v = StatVector::normal(vec![0.0, 2.5]).unwrap();
        for ev in [Evaluation::Analytic, Evaluation::MonteCarlo { n: 200 }] {
            let p = marginal_pvalue_with(&v, 2, CombiningMethod::Fisher, None, ev, 0).unwrap();
            assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn marginal_exact_matches_mc() {
        let v = StatVector::normal(vec![1.1, -2.0]).unwrap();
        let f = CombiningMethod::Fisher;
        let ex = marginal_pvalue_with(&v, 2, f, None, Evaluation::Analytic, 0).unwrap();
        let mc = marginal_pch_pvalue(&v, 2, f, 200_000, 5).unwrap();
        assert!((ex - mc).abs() < 4.0 * (ex * (1.0 - ex) / 2e5).sqrt());
    }

    #[test]
    fn normal_scores_are_identity_in_magnitude_for_normal_data() {
        let v = StatVector::normal(vec![0.3, -1.7, 4.2]).unwrap();
        let w = normal_scores(&v).unwrap();
        for (a, b) in v.values().iter().zip(w.values()) {
            assert!((a.abs() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn test_kind_round_trip() {
        for t in TestKind::ALL {
            assert_eq!(t.to_string().parse::<TestKind>().unwrap(), t);
        }
        assert!("maxp".parse::<TestKind>().is_err());
    }
}
