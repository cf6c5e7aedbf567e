//! Level adjustment for the conditional test.
//!
//! `a(alpha)` is the nominal level at which the unadjusted test's maximum
//! Type I error over the composite null equals `alpha`. The maximum is found
//! by projected stochastic gradient ascent over the null cone, and the level
//! by bisection. Results are stored in an [`AdjustmentTable`]; the crate
//! ships a default table.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::combining::{check_r, CombiningMethod};
use crate::distributions::{sample_truncated, LocationFamily};
use crate::engine::{CpchEngine, Evaluation};
use crate::error::{domain, Error, Result};
use crate::rng::{derive_seed, standard_normal, substream};

/// Default bisection tolerance on the achieved maximum Type I error.
pub const DEFAULT_TOLERANCE: f64 = 0.002;

const BUNDLED_TABLE: &str = include_str!("../data/adjustment_table.csv");

const EVAL_LABEL: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub max_batches: usize,
    pub lr0: f64,
    pub decay: f64,
    pub init_sigma: f64,
    pub restarts: usize,
    /// Replicates for the terminal re-evaluation of each chain.
    pub eval_reps: usize,
    /// Batches per plateau window; 0 disables the plateau test.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub evaluation: Evaluation,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 2_000,
            max_batches: 200,
            lr0: 20.0,
            decay: 0.98,
            init_sigma: 2.0,
            restarts: 5,
            eval_reps: 100_000,
            plateau_window: 50,
            plateau_tol: 0.001,
            evaluation: Evaluation::Auto { n: 2_000 },
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_batches == 0
            || self.restarts == 0
            || self.eval_reps == 0
        {
            return domain("batch_size, max_batches, restarts and eval_reps must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.init_sigma > 0.0) {
            return domain("lr0 and init_sigma must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return domain(format!("decay must lie in (0, 1), got {}", self.decay));
        }
        Ok(())
    }
}

/// Rejection-rate estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Type1Estimate {
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
}

impl Type1Estimate {
    fn from_count(hits: usize, reps: usize) -> Self {
        let value = hits as f64 / reps as f64;
        Self {
            value,
            stderr: (value * (1.0 - value) / reps as f64).sqrt(),
            reps,
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        domain(format!("level must lie in (0, 1), got {level}"))
    }
}

fn check_null(theta: &[f64], r: usize) -> Result<()> {
    let nonzero = theta.iter().filter(|t| **t != 0.0).count();
    if nonzero > r - 1 {
        return domain(format!(
            "theta has {nonzero} nonzero entries; the r={r} null allows at most {}",
            r - 1
        ));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return domain("theta must be finite");
    }
    Ok(())
}

fn rejects(
    engine: &CpchEngine,
    t: &[f64],
    level: f64,
    evaluation: Evaluation,
    seed: u64,
) -> Result<bool> {
    Ok(engine.pvalue(t, evaluation, seed)?.pvalue < level)
}

/// Monte Carlo size of the unadjusted normal-model test at `theta`.
///
/// Blocks of one or two coordinates are evaluated analytically; larger
/// blocks use `n_mc` draws per component.
#[allow(clippy::too_many_arguments)]
pub fn type1_error_at(
    theta: &[f64],
    m: usize,
    r: usize,
    method: CombiningMethod,
    level: f64,
    n_reps: usize,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if theta.len() != m {
        return domain(format!("theta has length {}, expected {m}", theta.len()));
    }
    let engine = CpchEngine::new(m, r, method, LocationFamily::Normal)?;
    Ok(type1_error_with(
        &engine,
        theta,
        level,
        n_reps,
        Evaluation::Auto { n: n_mc },
        seed,
    )?
    .value)
}

pub fn type1_error_with(
    engine: &CpchEngine,
    theta: &[f64],
    level: f64,
    n_reps: usize,
    evaluation: Evaluation,
    seed: u64,
) -> Result<Type1Estimate> {
    check_level(level)?;
    check_null(theta, engine.r())?;
    if theta.len() != engine.m() || n_reps == 0 {
        return domain("theta length must equal m and n_reps must be positive");
    }
    let hits = (0..n_reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[i as u64]);
            let t: Vec<f64> = theta
                .iter()
                .map(|&th| th + standard_normal(&mut rng))
                .collect();
            rejects(
                engine,
                &t,
                level,
                evaluation,
                derive_seed(seed, &[i as u64, 1]),
            )
            .map(usize::from)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(Type1Estimate::from_count(hits, n_reps))
}

/// `n^-1 sum Z_i 1{reject at Z_i + theta}`, an unbiased estimate of the
/// gradient of the size surface (the sign follows from differentiating the
/// Gaussian density in its location).
pub fn sgd_gradient(
    engine: &CpchEngine,
    theta: &[f64],
    level: f64,
    batch: &[Vec<f64>],
    evaluation: Evaluation,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(gradient_and_size(engine, theta, level, batch, evaluation, seed)?.0)
}

fn gradient_and_size(
    engine: &CpchEngine,
    theta: &[f64],
    level: f64,
    batch: &[Vec<f64>],
    evaluation: Evaluation,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return domain("gradient batch is empty");
    }
    let m = theta.len();
    let flags = batch
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let t: Vec<f64> = z.iter().zip(theta).map(|(a, b)| a + b).collect();
            rejects(
                engine,
                &t,
                level,
                evaluation,
                derive_seed(seed, &[i as u64]),
            )
        })
        .collect::<Result<Vec<bool>>>()?;
    let mut g = vec![0.0; m];
    let mut hits = 0usize;
    for (z, &rej) in batch.iter().zip(&flags) {
        if rej {
            hits += 1;
            g.iter_mut().zip(z).for_each(|(gi, zi)| *gi += zi);
        }
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|gi| *gi /= n);
    Ok((g, hits as f64 / n))
}

/// Euclidean projection onto `{theta_1 >= ... >= theta_{r-1} >= 0, rest = 0}`.
pub fn isotonic_cone_projection(theta: &[f64], r: usize) -> Vec<f64> {
    let lead = (r.max(1) - 1).min(theta.len());
    let mut out = pava_decreasing(&theta[..lead]);
    out.iter_mut().for_each(|x| *x = x.max(0.0));
    out.resize(theta.len(), 0.0);
    out
}

/// Pool-adjacent-violators fit of a nonincreasing sequence.
fn pava_decreasing(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub theta: Vec<f64>,
    pub t1e: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdOutcome {
    pub theta_star: Vec<f64>,
    pub max_t1e: f64,
    pub stderr: f64,
    pub chains: Vec<ChainSummary>,
    /// Terminal estimates of the chains differ by more than 0.005.
    pub non_convergent: bool,
}

pub fn sgd_max_type1(
    m: usize,
    r: usize,
    method: CombiningMethod,
    level: f64,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<SgdOutcome> {
    let engine = CpchEngine::new(m, r, method, LocationFamily::Normal)?;
    sgd_max_type1_with(&engine, level, cfg, seed, None)
}

/// Projected SGD maximisation of the size surface. When `warm` is given,
/// the first chain starts there instead of at a random point.
pub fn sgd_max_type1_with(
    engine: &CpchEngine,
    level: f64,
    cfg: &SgdConfig,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<SgdOutcome> {
    check_level(level)?;
    cfg.validate()?;
    let eval_seed = derive_seed(seed, &[EVAL_LABEL]);
    let chains = (0..cfg.restarts)
        .into_par_iter()
        .map(|c| {
            let start = match (c, warm) {
                (0, Some(w)) => isotonic_cone_projection(w, engine.r()),
                _ => random_start(
                    engine.m(),
                    engine.r(),
                    cfg.init_sigma,
                    derive_seed(seed, &[c as u64, 0]),
                ),
            };
            let (theta, batches) =
                run_chain(engine, level, cfg, start, derive_seed(seed, &[c as u64, 1]))?;
            // every chain is scored on the same replicates
            let est = type1_error_with(
                engine,
                &theta,
                level,
                cfg.eval_reps,
                cfg.evaluation,
                eval_seed,
            )?;
            Ok((
                ChainSummary {
                    theta,
                    t1e: est.value,
                    batches,
                },
                est.stderr,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best, stderr) = chains
        .iter()
        .max_by(|a, b| a.0.t1e.total_cmp(&b.0.t1e))
        .cloned()
        .expect("at least one chain");
    let lo = chains.iter().map(|c| c.0.t1e).fold(f64::INFINITY, f64::min);
    Ok(SgdOutcome {
        theta_star: best.theta,
        max_t1e: best.t1e,
        stderr,
        non_convergent: best.t1e - lo > 0.005,
        chains: chains.into_iter().map(|c| c.0).collect(),
    })
}

fn random_start(m: usize, r: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, &[]);
    let mut theta = vec![0.0; m];
    let mut prev = f64::INFINITY;
    for th in theta.iter_mut().take(r - 1) {
        let draw = if prev.is_infinite() {
            sigma * standard_normal(&mut rng)
        } else if prev > 0.0 {
            sigma
                * sample_truncated(LocationFamily::Normal, 0.0, prev / sigma, &mut rng)
                    .unwrap_or(0.0)
        } else {
            0.0
        };
        *th = draw.abs();
        prev = th.abs();
    }
    isotonic_cone_projection(&theta, r)
}

fn run_chain(
    engine: &CpchEngine,
    level: f64,
    cfg: &SgdConfig,
    mut theta: Vec<f64>,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let m = engine.m();
    let window = cfg.plateau_window;
    let mut sizes = Vec::with_capacity(cfg.max_batches);
    let mut path: Vec<Vec<f64>> = Vec::with_capacity(cfg.max_batches);
    let mut lr = cfg.lr0;
    for t in 0..cfg.max_batches {
        let mut rng = substream(seed, &[t as u64]);
        let batch: Vec<Vec<f64>> = (0..cfg.batch_size)
            .map(|_| (0..m).map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let (g, size) = gradient_and_size(
            engine,
            &theta,
            level,
            &batch,
            cfg.evaluation,
            derive_seed(seed, &[t as u64, 1]),
        )?;
        let stepped: Vec<f64> = theta.iter().zip(&g).map(|(th, gi)| th + lr * gi).collect();
        theta = isotonic_cone_projection(&stepped, engine.r());
        lr *= cfg.decay;
        sizes.push(size);
        path.push(theta.clone());
        let done = sizes.len();
        if window > 0 && done >= 2 * window && done % window == 0 {
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let recent = mean(&sizes[done - window..]);
            let before = mean(&sizes[done - 2 * window..done - window]);
            if recent - before < cfg.plateau_tol {
                break;
            }
        }
    }
    // average of the last window of iterates
    let tail = if window == 0 {
        1
    } else {
        window.min(path.len())
    };
    let mut avg = vec![0.0; m];
    for th in &path[path.len() - tail..] {
        avg.iter_mut()
            .zip(th)
            .for_each(|(a, b)| *a += b / tail as f64);
    }
    Ok((isotonic_cone_projection(&avg, engine.r()), path.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSolution {
    pub a_alpha: f64,
    pub max_t1e: f64,
    pub stderr: f64,
    pub theta_star: Vec<f64>,
    /// `(level, estimated maximum size)` for every bisection probe.
    pub probes: Vec<(f64, f64)>,
    /// Some probe at a higher level had a clearly smaller maximum size.
    pub non_monotone: bool,
}

/// Bisection on the nominal level with the default tolerance
/// `min(0.002, 0.04 alpha)`.
pub fn solve_adjustment(
    m: usize,
    r: usize,
    method: CombiningMethod,
    alpha: f64,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<AdjustmentSolution> {
    let engine = CpchEngine::new(m, r, method, LocationFamily::Normal)?;
    solve_adjustment_with(
        &engine,
        alpha,
        DEFAULT_TOLERANCE.min(0.04 * alpha),
        cfg,
        seed,
    )
}

/// Finds the largest probed level whose maximum size lies in
/// `[alpha - tol, alpha]`, stopping early once the bracket is below 1e-4.
pub fn solve_adjustment_with(
    engine: &CpchEngine,
    alpha: f64,
    tol: f64,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<AdjustmentSolution> {
    check_level(alpha)?;
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let (mut lo, mut hi) = (0.0, alpha);
    let mut level = alpha;
    let mut warm: Option<Vec<f64>> = None;
    let mut probes: Vec<(f64, SgdOutcome)> = Vec::new();
    for step in 0..64u64 {
        let out = sgd_max_type1_with(
            engine,
            level,
            cfg,
            derive_seed(seed, &[step]),
            warm.as_deref(),
        )?;
        warm = Some(out.theta_star.clone());
        let size = out.max_t1e;
        probes.push((level, out));
        if size <= alpha {
            lo = level;
            if size >= alpha - tol {
                break;
            }
        } else {
            hi = level;
        }
        if hi - lo <= 1e-4 {
            break;
        }
        level = 0.5 * (lo + hi);
    }
    let non_monotone = probes.iter().any(|(la, a)| {
        probes.iter().any(|(lb, b)| {
            lb > la && a.max_t1e - b.max_t1e > 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
        })
    });
    let safe = probes.iter().filter(|(_, o)| o.max_t1e <= alpha);
    let chosen = if non_monotone {
        safe.min_by(|a, b| a.0.total_cmp(&b.0))
    } else {
        safe.max_by(|a, b| a.0.total_cmp(&b.0))
    };
    let summary = probes.iter().map(|(l, o)| (*l, o.max_t1e)).collect();
    Ok(match chosen {
        Some((l, o)) => AdjustmentSolution {
            a_alpha: *l,
            max_t1e: o.max_t1e,
            stderr: o.stderr,
            theta_star: o.theta_star.clone(),
            probes: summary,
            non_monotone,
        },
        None => AdjustmentSolution {
            a_alpha: lo,
            max_t1e: 0.0,
            stderr: 0.0,
            theta_star: vec![0.0; engine.m()],
            probes: summary,
            non_monotone,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustmentRow {
    pub m: usize,
    pub r: usize,
    pub alpha: f64,
    pub method: CombiningMethod,
    pub a_alpha: f64,
    pub max_t1e: f64,
}

impl AdjustmentRow {
    fn key(&self) -> (usize, usize, u8, f64) {
        let method = match self.method {
            CombiningMethod::Fisher => 0,
            CombiningMethod::Simes => 1,
        };
        (self.m, self.r, method, self.alpha)
    }
}

/// Grid of `(m, r, alpha, method) -> a(alpha)`, kept in CSV row order
/// (m, r, method, alpha ascending).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjustmentTable {
    rows: Vec<AdjustmentRow>,
}

impl AdjustmentTable {
    pub fn new(rows: Vec<AdjustmentRow>) -> Result<Self> {
        let mut table = Self::default();
        for row in rows {
            table.insert(row)?;
        }
        table.validate()?;
        Ok(table)
    }

    /// The table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED_TABLE).expect("bundled adjustment table is valid")
    }

    pub fn rows(&self) -> &[AdjustmentRow] {
        &self.rows
    }

    /// Insert or replace the row with the same `(m, r, alpha, method)`.
    pub fn insert(&mut self, row: AdjustmentRow) -> Result<()> {
        check_r(row.m, row.r)?;
        check_level(row.alpha)?;
        if !(row.a_alpha >= 0.0 && row.a_alpha <= row.alpha) || !(0.0..=1.0).contains(&row.max_t1e)
        {
            return Err(Error::Input(format!(
                "a_alpha must lie in [0, alpha] and max_t1e in [0, 1] (m={}, r={}, alpha={})",
                row.m, row.r, row.alpha
            )));
        }
        let key = row.key();
        match self
            .rows
            .binary_search_by(|x| x.key().partial_cmp(&key).unwrap())
        {
            Ok(i) => self.rows[i] = row,
            Err(i) => self.rows.insert(i, row),
        }
        Ok(())
    }

    /// Checks that `a_alpha` is nondecreasing in `alpha` within every group.
    pub fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if (a.m, a.r, a.method) == (b.m, b.r, b.method) && b.a_alpha < a.a_alpha {
                return Err(Error::Input(format!(
                    "a_alpha decreases in alpha for m={}, r={}, method={}",
                    a.m, a.r, a.method
                )));
            }
        }
        Ok(())
    }

    fn group(&self, m: usize, r: usize, method: CombiningMethod) -> Vec<AdjustmentRow> {
        self.rows
            .iter()
            .filter(|x| x.m == m && x.r == r && x.method == method)
            .copied()
            .collect()
    }

    pub fn covers(&self, m: usize, r: usize, method: CombiningMethod) -> bool {
        !self.group(m, r, method).is_empty()
    }

    /// Linear interpolation in `alpha`; outside the grid the nearest
    /// endpoint's ratio `a / alpha` is applied.
    pub fn interpolate(
        &self,
        m: usize,
        r: usize,
        method: CombiningMethod,
        alpha: f64,
    ) -> Result<f64> {
        check_level(alpha)?;
        let group = self.group(m, r, method);
        let (first, last) = match (group.first(), group.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::MissingAdjustment { m, r, method }),
        };
        if let Some(row) = group.iter().find(|x| x.alpha == alpha) {
            return Ok(row.a_alpha);
        }
        if alpha <= first.alpha {
            return Ok(alpha * first.a_alpha / first.alpha);
        }
        if alpha >= last.alpha {
            return Ok((alpha * last.a_alpha / last.alpha).min(alpha));
        }
        let i = group.partition_point(|x| x.alpha <= alpha);
        let (a, b) = (group[i - 1], group[i]);
        let w = (alpha - a.alpha) / (b.alpha - a.alpha);
        Ok(a.a_alpha + w * (b.a_alpha - a.a_alpha))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let expected = ["m", "r", "alpha", "method", "a_alpha", "max_t1e"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Input(format!(
                "adjustment table header must be {}",
                expected.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| Error::Input(format!("row {}: bad {what}", line + 1));
            let int = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
            let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
            rows.push(AdjustmentRow {
                m: int(0, "m")?,
                r: int(1, "r")?,
                alpha: num(2, "alpha")?,
                method: rec[3].parse().map_err(|_| bad("method"))?,
                a_alpha: num(4, "a_alpha")?,
                max_t1e: num(5, "max_t1e")?,
            });
        }
        Self::new(rows)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("m,r,alpha,method,a_alpha,max_t1e\n");
        for x in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                x.m, x.r, x.alpha, x.method, x.a_alpha, x.max_t1e
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("malformed adjustment table: {e}"))
}

/// Free-function form of [`AdjustmentTable::interpolate`].
pub fn interpolate_adjustment(
    table: &AdjustmentTable,
    m: usize,
    r: usize,
    method: CombiningMethod,
    alpha: f64,
) -> Result<f64> {
    table.interpolate(m, r, method, alpha)
}

/// Solves every `(m, r, method, alpha)` cell and returns the resulting
/// table. Each cell gets its own seed substream.
pub fn generate_table(
    cells: &[(usize, usize, CombiningMethod, f64)],
    cfg: &SgdConfig,
    seed: u64,
) -> Result<AdjustmentTable> {
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(m, r, method, alpha))| {
            let sol = solve_adjustment(m, r, method, alpha, cfg, derive_seed(seed, &[i as u64]))?;
            Ok(AdjustmentRow {
                m,
                r,
                alpha,
                method,
                a_alpha: sol.a_alpha,
                max_t1e: sol.max_t1e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = AdjustmentTable::default();
    for row in rows {
        table.insert(row)?;
    }
    // bisection noise can leave neighbouring cells out of order
    table.make_monotone();
    Ok(table)
}

impl AdjustmentTable {
    /// Replaces each `a_alpha` by the running minimum from the right within
    /// its group, the largest nondecreasing table not above the input.
    pub fn make_monotone(&mut self) {
        let n = self.rows.len();
        for i in (0..n.saturating_sub(1)).rev() {
            let (a, b) = (self.rows[i], self.rows[i + 1]);
            if (a.m, a.r, a.method) == (b.m, b.r, b.method) && a.a_alpha > b.a_alpha {
                self.rows[i].a_alpha = b.a_alpha;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: CombiningMethod = CombiningMethod::Fisher;

    #[test]
    fn projection_examples() {
        assert_eq!(
            isotonic_cone_projection(&[3.0, 1.0, 0.0], 3),
            vec![3.0, 1.0, 0.0]
        );
        assert_eq!(
            isotonic_cone_projection(&[1.0, 2.0, 0.0], 3),
            vec![1.5, 1.5, 0.0]
        );
        assert_eq!(
            isotonic_cone_projection(&[-1.0, -2.0, 0.0], 3),
            vec![0.0, 0.0, 0.0]
        );
        assert_eq!(isotonic_cone_projection(&[2.0, 5.0], 2), vec![2.0, 0.0]);
        assert_eq!(
            isotonic_cone_projection(&[1.0, 3.0, 2.0, 7.0], 4),
            vec![2.0, 2.0, 2.0, 0.0]
        );
    }

    #[test]
    fn gradient_trivial_batches() {
        let engine = CpchEngine::new(2, 2, F, LocationFamily::Normal).unwrap();
        let ev = Evaluation::Analytic;
        // (0, 0) + small z: unadjusted p-value is large
        let g = sgd_gradient(&engine, &[0.0, 0.0], 0.05, &[vec![0.1, 0.3]], ev, 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        // equal magnitudes give p = 0
        let z = vec![2.0, 2.0];
        let g = sgd_gradient(&engine, &[0.0, 0.0], 0.05, std::slice::from_ref(&z), ev, 0).unwrap();
        assert_eq!(g, z);
        assert!(sgd_gradient(&engine, &[0.0, 0.0], 0.05, &[], ev, 0).is_err());
    }

    #[test]
    fn type1_rejects_non_null_theta() {
        assert!(type1_error_at(&[1.0, 2.0], 2, 2, F, 0.05, 10, 10, 0).is_err());
        assert!(type1_error_at(&[0.0, 2.0], 2, 2, F, 1.5, 10, 10, 0).is_err());
    }

    #[test]
    fn bundled_table_contents() {
        let t = AdjustmentTable::bundled();
        assert_eq!(t.interpolate(2, 2, F, 0.05).unwrap(), 0.0425);
        assert_eq!(t.interpolate(3, 3, F, 0.01).unwrap(), 0.0075);
        assert!((t.interpolate(2, 2, F, 0.075).unwrap() - 0.06375).abs() < 1e-15);
        assert!(t.interpolate(2, 2, F, 1e-9).unwrap() < 1e-9);
        assert!(t.rows().iter().all(|x| x.a_alpha <= x.alpha));
        let again = AdjustmentTable::from_csv_str(&t.to_csv_string()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn table_errors() {
        let t = AdjustmentTable::bundled();
        assert_eq!(
            t.interpolate(9, 2, F, 0.05),
            Err(Error::MissingAdjustment {
                m: 9,
                r: 2,
                method: F
            })
        );
        assert!(AdjustmentTable::from_csv_str("m,r,alpha\n2,2,0.05\n").is_err());
        let bad = "m,r,alpha,method,a_alpha,max_t1e\n2,2,0.05,fisher,0.06,0.05\n";
        assert!(AdjustmentTable::from_csv_str(bad).is_err());
        let nonmono = "m,r,alpha,method,a_alpha,max_t1e\n2,2,0.05,fisher,0.04,0.05\n2,2,0.06,fisher,0.03,0.05\n";
        assert!(AdjustmentTable::from_csv_str(nonmono).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        let cfg = SgdConfig {
            decay: 1.0,
            ..SgdConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
