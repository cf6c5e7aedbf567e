//! Conditional partial conjunction p-values.
//!
//! The conditional law of the combined block given the `r - 1` largest
//! magnitudes is a finite mixture. Each component fixes which model
//! coordinates fall in the small block and which coordinate produced each
//! conditioned value; its weight is a product of interval probabilities and
//! densities, and given the component the small-block coordinates are
//! independent truncated draws. Components are evaluated either by Monte
//! Carlo (any block size) or analytically when the block has one or two
//! coordinates.

use std::sync::OnceLock;

use rand::Rng;

use crate::adjustment::AdjustmentTable;
use crate::combining::{
    base_pvalue, check_r, order_by_magnitude, CombiningMethod, OrderedDecomposition, StatVector,
};
use crate::distributions::{LocationFamily, TruncatedSampler};
use crate::error::{domain, Error, Result};
use crate::rng::substream;

/// Default Monte Carlo sample count per mixture component.
pub const DEFAULT_SAMPLES: usize = 10_000;

/// One way the model coordinates can produce the observed ordering.
///
/// `small` holds the `m - r + 1` model coordinates forming the combined
/// block; `matched[s]` is the model coordinate that produced conditioned
/// slot `s` (slots ordered by ascending magnitude).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub small: Vec<usize>,
    pub matched: Vec<usize>,
}

/// All `m! / (m - r + 1)!` assignments in a fixed canonical order:
/// small sets in lexicographic order, then matchings in lexicographic order.
pub fn enumerate_assignments(m: usize, r: usize) -> Result<Vec<Assignment>> {
    check_r(m, r)?;
    let k = m - r + 1;
    let mut out = Vec::new();
    for small in combinations(m, k) {
        let rest: Vec<usize> = (0..m).filter(|i| !small.contains(i)).collect();
        for matched in permutations(&rest) {
            out.push(Assignment {
                small: small.clone(),
                matched,
            });
        }
    }
    Ok(out)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Null parameter the conditional law is evaluated under.
///
/// Model coordinates `0..k` carry location zero and coordinates `k..m`
/// carry the conditioned values (the plug-in MLE) or, for the oracle, the
/// true nonzero means ordered by magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPlugin {
    theta: Vec<f64>,
}

impl NullPlugin {
    pub fn mle(decomp: &OrderedDecomposition) -> Self {
        let mut theta = vec![0.0; decomp.k()];
        theta.extend_from_slice(decomp.conditioned());
        Self { theta }
    }

    /// Plugin built from a known null parameter with at most `r - 1`
    /// nonzero entries.
    pub fn from_null_theta(theta: &[f64], r: usize) -> Result<Self> {
        let m = theta.len();
        check_r(m, r)?;
        let mut nonzero: Vec<f64> = theta.iter().copied().filter(|&t| t != 0.0).collect();
        if nonzero.len() > r - 1 {
            return domain(format!(
                "theta has {} nonzero entries; the r={r} null allows at most {}",
                nonzero.len(),
                r - 1
            ));
        }
        if nonzero.iter().any(|t| !t.is_finite()) {
            return domain("theta must be finite");
        }
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let mut out = vec![0.0; m - nonzero.len()];
        out.extend(nonzero);
        Ok(Self { theta: out })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// How mixture components are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// `n` truncated draws per component with the `(1 + hits) / (n + 1)` estimator.
    MonteCarlo { n: usize },
    /// Closed form / one-dimensional quadrature; block size at most 2.
    Analytic,
    /// Analytic when the block size allows, Monte Carlo otherwise.
    Auto { n: usize },
}

/// Outcome of one conditional p-value computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PchResult {
    pub pvalue: f64,
    pub f_obs: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub method: CombiningMethod,
    pub exact: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Reject,
    Retain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpchTestOutcome {
    pub decision: Decision,
    pub a_alpha: f64,
    pub result: PchResult,
}

/// Cached assignment list for a fixed `(m, r, method, family)`.
#[derive(Debug, Clone)]
pub struct CpchEngine {
    m: usize,
    r: usize,
    method: CombiningMethod,
    family: LocationFamily,
    assignments: Vec<Assignment>,
}

impl CpchEngine {
    pub fn new(
        m: usize,
        r: usize,
        method: CombiningMethod,
        family: LocationFamily,
    ) -> Result<Self> {
        Ok(Self {
            m,
            r,
            method,
            family,
            assignments: enumerate_assignments(m, r)?,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn method(&self) -> CombiningMethod {
        self.method
    }

    pub fn family(&self) -> LocationFamily {
        self.family
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    fn decompose(&self, values: &[f64]) -> Result<OrderedDecomposition> {
        if values.len() != self.m {
            return domain(format!(
                "expected {} statistics, got {}",
                self.m,
                values.len()
            ));
        }
        order_by_magnitude(&StatVector::new(values.to_vec(), self.family)?, self.r)
    }

    /// Unadjusted p-value with the MLE plugin.
    pub fn pvalue(&self, values: &[f64], evaluation: Evaluation, seed: u64) -> Result<PchResult> {
        let decomp = self.decompose(values)?;
        let plugin = NullPlugin::mle(&decomp);
        self.pvalue_under(&decomp, &plugin, evaluation, seed)
    }

    /// Oracle p-value: the plugin is the true null parameter.
    pub fn oracle_pvalue(
        &self,
        values: &[f64],
        true_theta: &[f64],
        evaluation: Evaluation,
        seed: u64,
    ) -> Result<PchResult> {
        let decomp = self.decompose(values)?;
        let plugin = NullPlugin::from_null_theta(true_theta, self.r)?;
        self.pvalue_under(&decomp, &plugin, evaluation, seed)
    }

    pub fn pvalue_under(
        &self,
        decomp: &OrderedDecomposition,
        plugin: &NullPlugin,
        evaluation: Evaluation,
        seed: u64,
    ) -> Result<PchResult> {
        let k = decomp.k();
        let f_obs = self.method.statistic(decomp.small(), self.family);
        let mut result = PchResult {
            pvalue: 1.0,
            f_obs,
            n_samples: 0,
            seed,
            method: self.method,
            exact: false,
            degenerate: false,
        };
        let bound = decomp.bound();
        if bound == 0.0 {
            result.degenerate = true;
            return Ok(result);
        }
        let weights = weights_for(decomp, plugin, self.family, &self.assignments)?;
        let total: f64 = weights.iter().sum();
        let analytic = match evaluation {
            Evaluation::Analytic => {
                if k > 2 {
                    return Err(Error::Unsupported(k));
                }
                true
            }
            Evaluation::Auto { .. } => k <= 2,
            Evaluation::MonteCarlo { .. } => false,
        };
        // components depend only on the small set, and assignments sharing
        // one are enumerated consecutively
        let mut groups: Vec<(&Assignment, f64)> = Vec::new();
        for (a, &w) in self.assignments.iter().zip(&weights) {
            match groups.last_mut() {
                Some((g, sum)) if g.small == a.small => *sum += w,
                _ => groups.push((a, w)),
            }
        }
        if analytic {
            let mut p = 0.0;
            for &(a, w) in &groups {
                if w > 0.0 {
                    p +=
                        w * component_pvalue_analytic(a, plugin, decomp, self.method, self.family)?;
                }
            }
            result.pvalue = (p / total).clamp(0.0, 1.0);
            result.exact = true;
        } else {
            let n = match evaluation {
                Evaluation::MonteCarlo { n } | Evaluation::Auto { n } => n,
                Evaluation::Analytic => unreachable!(),
            };
            if n == 0 {
                return domain("Monte Carlo sample count must be positive");
            }
            let mut p = 0.0;
            for (l, &(a, w)) in groups.iter().enumerate() {
                if w > 0.0 {
                    let mut rng = substream(seed, &[l as u64]);
                    p += w * component_pvalue_mc(
                        a,
                        plugin,
                        bound,
                        f_obs,
                        self.method,
                        self.family,
                        n,
                        &mut rng,
                    )?;
                }
            }
            result.pvalue = (p / total).clamp(1.0 / (n + 1) as f64, 1.0);
            result.n_samples = n;
        }
        Ok(result)
    }
}

fn log_numerators(
    decomp: &OrderedDecomposition,
    plugin: &NullPlugin,
    family: LocationFamily,
    assignments: &[Assignment],
) -> Vec<f64> {
    let theta = plugin.theta();
    let bound = decomp.bound();
    let cond = decomp.conditioned();
    assignments
        .iter()
        .map(|a| {
            let small: f64 = a
                .small
                .iter()
                .map(|&h| family.ln_symmetric_interval_prob(theta[h], bound))
                .sum();
            let matched: f64 = a
                .matched
                .iter()
                .zip(cond)
                .map(|(&j, &t)| family.ln_pdf(t - theta[j]))
                .sum();
            small + matched
        })
        .collect()
}

/// Weights scaled so the largest is 1.
fn weights_for(
    decomp: &OrderedDecomposition,
    plugin: &NullPlugin,
    family: LocationFamily,
    assignments: &[Assignment],
) -> Result<Vec<f64>> {
    if plugin.theta().len() != decomp.m() {
        return domain("plugin and decomposition disagree on m");
    }
    let logs = log_numerators(decomp, plugin, family, assignments);
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateConditioning);
    }
    Ok(logs.iter().map(|&l| (l - max).exp()).collect())
}

/// Posterior probabilities of each assignment (in
/// [`enumerate_assignments`] order) given the conditioned values.
pub fn mixture_weights(
    decomp: &OrderedDecomposition,
    plugin: &NullPlugin,
    family: LocationFamily,
) -> Result<Vec<f64>> {
    let assignments = enumerate_assignments(decomp.m(), decomp.r())?;
    let mut w = weights_for(decomp, plugin, family, &assignments)?;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Monte Carlo estimate of one component's survival probability at `f_obs`.
#[allow(clippy::too_many_arguments)]
pub fn component_pvalue_mc<R: Rng + ?Sized>(
    assignment: &Assignment,
    plugin: &NullPlugin,
    bound: f64,
    f_obs: f64,
    method: CombiningMethod,
    family: LocationFamily,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return domain("Monte Carlo sample count must be positive");
    }
    let samplers = assignment
        .small
        .iter()
        .map(|&h| TruncatedSampler::new(family, plugin.theta()[h], bound))
        .collect::<Result<Vec<_>>>()?;
    let mut draw = vec![0.0; samplers.len()];
    let mut scratch = Vec::with_capacity(samplers.len());
    let mut hits = 0usize;
    for _ in 0..n {
        for (x, s) in draw.iter_mut().zip(&samplers) {
            *x = s.sample(rng);
        }
        if method.statistic_with(&draw, family, &mut scratch) >= f_obs {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (n + 1) as f64)
}

fn component_pvalue_analytic(
    assignment: &Assignment,
    plugin: &NullPlugin,
    decomp: &OrderedDecomposition,
    method: CombiningMethod,
    family: LocationFamily,
) -> Result<f64> {
    let theta = plugin.theta();
    let bound = decomp.bound();
    let small = decomp.small();
    match assignment.small.as_slice() {
        // Both combining functions are decreasing in the base p-value, so a
        // single-coordinate block reduces to a magnitude threshold.
        &[h] => Ok(magnitude_survival(family, theta[h], bound, small[0].abs())),
        &[h1, h2] => {
            let a = TruncatedMagnitude::new(family, theta[h1], bound);
            let b = TruncatedMagnitude::new(family, theta[h2], bound);
            Ok(match method {
                CombiningMethod::Simes => {
                    let c = -method.statistic(small, family);
                    simes_pair_survival(&a, &b, c)
                }
                CombiningMethod::Fisher => {
                    let c = base_pvalue(small[0], family) * base_pvalue(small[1], family);
                    fisher_pair_survival(&a, &b, c)
                }
            }
            .clamp(0.0, 1.0))
        }
        other => Err(Error::Unsupported(other.len())),
    }
}

/// `P(|X| >= f | |X| < b)` for `X = location + family`.
fn magnitude_survival(family: LocationFamily, location: f64, bound: f64, f: f64) -> f64 {
    if f >= bound {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    let ln_den = family.ln_symmetric_interval_prob(location, bound);
    let upper = family.ln_interval_prob(f - location, bound - location);
    let lower = family.ln_interval_prob(-bound - location, -f - location);
    let hi = upper.max(lower);
    if hi == f64::NEG_INFINITY {
        return 0.0;
    }
    let lo = upper.min(lower);
    let ln_num = hi + (lo - hi).exp().ln_1p();
    (ln_num - ln_den).exp().min(1.0)
}

/// Law of `|X|` for `X = location + family` truncated to `(-bound, bound)`.
struct TruncatedMagnitude {
    family: LocationFamily,
    location: f64,
    bound: f64,
    /// base p-value at the truncation bound, the smallest attainable.
    p_min: f64,
}

impl TruncatedMagnitude {
    fn new(family: LocationFamily, location: f64, bound: f64) -> Self {
        Self {
            family,
            location,
            bound,
            p_min: base_pvalue(bound, family),
        }
    }

    /// Magnitude whose base p-value equals `s`.
    fn magnitude_at(&self, s: f64) -> f64 {
        -self.family.quantile_raw(0.5 * s)
    }

    /// `P(p(X) <= s)` under the truncated law.
    fn pvalue_cdf(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 1.0;
        }
        if s <= self.p_min {
            return 0.0;
        }
        magnitude_survival(self.family, self.location, self.bound, self.magnitude_at(s))
    }

    /// Unnormalised density of `|X|` at `u`, divided by the truncation mass.
    fn magnitude_density(&self, u: f64, ln_mass: f64) -> f64 {
        (self.family.ln_pdf(u - self.location) - ln_mass).exp()
            + (self.family.ln_pdf(-u - self.location) - ln_mass).exp()
    }
}

/// `P(Simes(p1, p2) <= c)` for independent truncated coordinates.
fn simes_pair_survival(a: &TruncatedMagnitude, b: &TruncatedMagnitude, c: f64) -> f64 {
    let (a_half, b_half) = (a.pvalue_cdf(0.5 * c), b.pvalue_cdf(0.5 * c));
    let (a_full, b_full) = (a.pvalue_cdf(c), b.pvalue_cdf(c));
    // {min <= c/2} plus the disjoint event {both p in (c/2, c]}
    1.0 - (1.0 - a_half) * (1.0 - b_half) + (a_full - a_half) * (b_full - b_half)
}

/// `P(p1 p2 <= c)` for independent truncated coordinates, integrating the
/// first magnitude numerically against the exact conditional law of the
/// second.
fn fisher_pair_survival(a: &TruncatedMagnitude, b: &TruncatedMagnitude, c: f64) -> f64 {
    if c >= 1.0 {
        return 1.0;
    }
    let bound = a.bound;
    // Below u_lo the second coordinate cannot reach p <= c / p1; above
    // u_hi the first coordinate alone already has p1 <= c.
    let u_lo = if c < b.p_min {
        a.magnitude_at(c / b.p_min)
    } else {
        0.0
    };
    let u_hi = a.magnitude_at(c).min(bound);
    let tail = magnitude_survival(a.family, a.location, bound, u_hi);
    if u_lo >= u_hi {
        return tail;
    }
    let ln_mass = a.family.ln_symmetric_interval_prob(a.location, bound);
    let (lo, hi) = effective_range(a, u_lo, u_hi);
    let integrand = |u: f64| {
        let p1 = base_pvalue(u, a.family);
        a.magnitude_density(u, ln_mass) * b.pvalue_cdf(c / p1)
    };
    tail + composite_gauss_legendre(integrand, lo, hi, 2.0)
}

/// Shrink `[lo, hi]` to where the magnitude density is within e^-40 of its
/// maximum on the interval (normal family only; heavy tails keep the range).
fn effective_range(a: &TruncatedMagnitude, lo: f64, hi: f64) -> (f64, f64) {
    if a.family != LocationFamily::Normal {
        return (lo, hi);
    }
    let mu = a.location.abs();
    let peak = mu.clamp(lo, hi);
    let radius = ((peak - mu).powi(2) + 80.0).sqrt();
    ((mu - radius).max(lo), (mu + radius).min(hi))
}

fn gauss_legendre_20() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre_nodes(20))
}

/// Nodes and weights on [-1, 1] by Newton iteration on P_n.
pub(crate) fn gauss_legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn composite_gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64, max_width: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let pieces = ((hi - lo) / max_width).ceil().max(1.0) as usize;
    let h = (hi - lo) / pieces as f64;
    let nodes = gauss_legendre_20();
    let mut total = 0.0;
    for i in 0..pieces {
        let a = lo + i as f64 * h;
        let mid = a + 0.5 * h;
        total += 0.5
            * h
            * nodes
                .iter()
                .map(|&(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>();
    }
    total
}

/// Unadjusted conditional p-value with the MLE plugin: exact for
/// `m = r = 2`, Monte Carlo with `n` draws per component otherwise.
pub fn unadjusted_cpch_pvalue(
    v: &StatVector,
    r: usize,
    method: CombiningMethod,
    n: usize,
    seed: u64,
) -> Result<PchResult> {
    if v.m() == 2 && r == 2 {
        let mut res = exact_cpch_2_2(v, method)?;
        res.seed = seed;
        return Ok(res);
    }
    let engine = CpchEngine::new(v.m(), r, method, v.family())?;
    engine.pvalue(v.values(), Evaluation::MonteCarlo { n }, seed)
}

/// Closed-form unadjusted p-value for two base statistics.
pub fn exact_cpch_2_2(v: &StatVector, method: CombiningMethod) -> Result<PchResult> {
    if v.m() != 2 {
        return domain(format!("exact path needs m = 2, got m = {}", v.m()));
    }
    CpchEngine::new(2, 2, method, v.family())?.pvalue(v.values(), Evaluation::Analytic, 0)
}

/// Level-`alpha` adjusted test: reject when the unadjusted p-value falls
/// below `a(alpha)` from the table.
pub fn cpch_test(
    v: &StatVector,
    r: usize,
    method: CombiningMethod,
    alpha: f64,
    table: &AdjustmentTable,
    n: usize,
    seed: u64,
) -> Result<CpchTestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    check_r(v.m(), r)?;
    let a_alpha = table.interpolate(v.m(), r, method, alpha)?;
    let result = unadjusted_cpch_pvalue(v, r, method, n, seed)?;
    let decision = if result.pvalue < a_alpha {
        Decision::Reject
    } else {
        Decision::Retain
    };
    Ok(CpchTestOutcome {
        decision,
        a_alpha,
        result,
    })
}
