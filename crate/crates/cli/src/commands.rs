use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use cpch::adjustment::{generate_table, AdjustmentTable, SgdConfig};
use cpch::engine::{cpch_test, unadjusted_cpch_pvalue, Decision, PchResult, DEFAULT_SAMPLES};
use cpch::multiple_testing::PValueBatch;
use cpch::rng::derive_seed;
use cpch::simulation::{
    normalized_power, results_to_csv, run_fdr_experiment, run_rejection_curve, CovariateScenario,
    FdrConfig, FdrScenario, MixtureScenario, PValueSource, Pipeline, Procedure, ResultRow,
    SignalProfile, SingleScenario, SingleTestConfig, TestKind, RESULT_HEADER,
};
use cpch::{CombiningMethod, Evaluation, LocationFamily, StatVector};

use crate::input::{parse_records, read_source, Matrix};
use crate::{
    AdjustArgs, CliError, Common, MulttestArgs, ProcedureArg, PvalueArgs, Scenario, SimulateArgs,
    TestArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const SINGLE_REPS: usize = 10_000;
const FDR_REPLICATES: usize = 20;
const FDR_SAMPLES: usize = 1_000;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

/// Writes a table as CSV, or as a JSON array of records.
fn emit(common: &Common, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    if common.json {
        let records: Vec<serde_json::Value> = rows
            .iter()
            .map(|row| {
                let obj = header
                    .iter()
                    .zip(row)
                    .map(|(k, v)| {
                        let value = if *k == "label" {
                            v.as_str().into()
                        } else {
                            json_value(v)
                        };
                        (k.to_string(), value)
                    })
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::to_writer_pretty(&mut buf, &records)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        buf.push(b'\n');
    } else {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io_err = |e: csv::Error| CliError::Usage(e.to_string());
        w.write_record(header).map_err(io_err)?;
        for row in rows {
            w.write_record(row).map_err(io_err)?;
        }
        w.flush().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    write_output(common.output.as_deref(), &buf)
}

fn json_value(cell: &str) -> serde_json::Value {
    match cell {
        "true" => true.into(),
        "false" => false.into(),
        _ => match cell
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
        {
            Some(n)
                if !cell.is_empty()
                    && cell
                        .bytes()
                        .all(|b| b.is_ascii_digit() || b".-+eE".contains(&b)) =>
            {
                serde_json::Value::Number(n)
            }
            _ => cell.into(),
        },
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let res = match path {
        Some(p) => File::create(p).and_then(|mut f| f.write_all(bytes)),
        None => io::stdout().lock().write_all(bytes),
    };
    res.map_err(|e| CliError::Usage(format!("cannot write output: {e}")))
}

/// Summary lines go to standard output unless it carries the table.
fn summary(common: &Common, line: &str) {
    if common.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn read_matrix(common: &Common, m: Option<usize>) -> Result<Matrix> {
    let matrix = parse_records(&read_source(common.input.as_deref())?)?.into_matrix()?;
    check_width(&matrix, m)?;
    Ok(matrix)
}

fn check_width(matrix: &Matrix, m: Option<usize>) -> Result<()> {
    match (matrix.width(), m) {
        (Some(w), Some(m)) if w != m => usage(format!("input rows have {w} values but --m is {m}")),
        (Some(w), _) if w < 2 => usage(format!("need at least 2 statistics per row, got {w}")),
        (None, Some(m)) if m < 2 => usage(format!("m must be at least 2, got {m}")),
        _ => Ok(()),
    }
}

fn check_r(matrix: &Matrix, r: usize) -> Result<()> {
    match matrix.width() {
        Some(m) if r < 2 || r > m => usage(format!("r must satisfy 2 <= r <= m = {m}, got {r}")),
        None if r < 2 => usage(format!("r must be at least 2, got {r}")),
        _ => Ok(()),
    }
}

fn finite(p: f64, label: &str) -> Result<f64> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(CliError::Numerical(format!(
            "p-value for '{label}' is not finite"
        )))
    }
}

/// Row `i` uses the substream `(seed, i)`, so results do not depend on
/// thread scheduling.
fn row_pvalues(
    matrix: &Matrix,
    r: usize,
    method: CombiningMethod,
    family: LocationFamily,
    n: usize,
    seed: u64,
) -> Result<Vec<PchResult>> {
    let results = matrix
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let v = StatVector::new(v.clone(), family)?;
            unadjusted_cpch_pvalue(&v, r, method, n, derive_seed(seed, &[i as u64]))
        })
        .collect::<cpch::Result<Vec<_>>>()?;
    for (res, label) in results.iter().zip(&matrix.labels) {
        finite(res.pvalue, label)?;
    }
    Ok(results)
}

pub fn pvalue(a: &PvalueArgs) -> Result<()> {
    let c = &a.common;
    let matrix = read_matrix(c, a.m)?;
    check_r(&matrix, a.r)?;
    let n = c.samples.unwrap_or(DEFAULT_SAMPLES);
    let results = row_pvalues(&matrix, a.r, a.method, c.family, n, c.seed)?;
    let rows: Vec<Vec<String>> = matrix
        .labels
        .iter()
        .zip(&results)
        .map(|(l, res)| {
            vec![
                l.clone(),
                res.pvalue.to_string(),
                res.f_obs.to_string(),
                res.exact.to_string(),
            ]
        })
        .collect();
    emit(c, &["label", "p_unadjusted", "f_obs", "exact"], &rows)
}

fn load_table(path: Option<&Path>) -> Result<AdjustmentTable> {
    match path {
        Some(p) => Ok(AdjustmentTable::read(p)?),
        None => Ok(AdjustmentTable::bundled()),
    }
}

pub fn test(a: &TestArgs) -> Result<()> {
    let pv = &a.pv;
    let c = &pv.common;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return usage(format!("alpha must lie in (0, 1), got {}", a.alpha));
    }
    let table = load_table(a.table.as_deref())?;
    let matrix = read_matrix(c, pv.m)?;
    check_r(&matrix, pv.r)?;
    let n = c.samples.unwrap_or(DEFAULT_SAMPLES);
    let outcomes = matrix
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let v = StatVector::new(v.clone(), c.family)?;
            cpch_test(
                &v,
                pv.r,
                pv.method,
                a.alpha,
                &table,
                n,
                derive_seed(c.seed, &[i as u64]),
            )
        })
        .collect::<cpch::Result<Vec<_>>>()?;
    let mut rejected = 0;
    let mut rows = Vec::with_capacity(outcomes.len());
    for (l, o) in matrix.labels.iter().zip(&outcomes) {
        finite(o.result.pvalue, l)?;
        let reject = o.decision == Decision::Reject;
        rejected += usize::from(reject);
        rows.push(vec![
            l.clone(),
            o.result.pvalue.to_string(),
            o.a_alpha.to_string(),
            reject.to_string(),
        ]);
    }
    emit(c, &["label", "p_unadjusted", "a_alpha", "rejected"], &rows)?;
    summary(
        c,
        &format!(
            "rejected {rejected} of {} at alpha = {}",
            rows.len(),
            a.alpha
        ),
    );
    Ok(())
}

pub fn multtest(a: &MulttestArgs) -> Result<()> {
    let c = &a.common;
    if !(a.q > 0.0 && a.q < 1.0) {
        return usage(format!("q must lie in (0, 1), got {}", a.q));
    }
    let procedure = match a.procedure {
        ProcedureArg::Bh => Procedure::Bh,
        ProcedureArg::Storey => Procedure::Storey { lambda: a.lambda },
    };
    let records = parse_records(&read_source(c.input.as_deref())?)?;
    let named = ["p_unadjusted", "p_value", "pvalue", "p"]
        .iter()
        .find_map(|name| records.column(name));
    let (labels, pvalues) = match named {
        Some(col) => records.named_column(col)?,
        None => {
            let matrix = records.into_matrix()?;
            if matrix.width() == Some(1) {
                let p = matrix.rows.iter().map(|row| row[0]).collect();
                (matrix.labels, p)
            } else {
                check_width(&matrix, a.m)?;
                let Some(r) = a.r else {
                    return usage("raw statistics need --r");
                };
                check_r(&matrix, r)?;
                let n = c.samples.unwrap_or(DEFAULT_SAMPLES);
                let p = row_pvalues(&matrix, r, a.method, c.family, n, c.seed)?
                    .iter()
                    .map(|res| res.pvalue)
                    .collect();
                (matrix.labels, p)
            }
        }
    };
    let batch = PValueBatch::new(pvalues)?;
    let rejected = procedure.apply(&batch, a.q)?;
    let mut flags = vec![false; batch.len()];
    for &j in &rejected {
        flags[j] = true;
    }
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(batch.pvalues())
        .zip(&flags)
        .map(|((l, p), f)| vec![l.clone(), p.to_string(), f.to_string()])
        .collect();
    emit(c, &["label", "p_value", "rejected"], &rows)?;
    summary(
        c,
        &format!(
            "{} rejections of {} ({procedure}, q = {})",
            rejected.len(),
            rows.len(),
            a.q
        ),
    );
    Ok(())
}

pub fn adjust_table(a: &AdjustArgs) -> Result<()> {
    let c = &a.common;
    if c.family != LocationFamily::Normal {
        return usage("adjustment tables are solved under the normal model only");
    }
    let methods = if a.methods.is_empty() {
        vec![CombiningMethod::Fisher, CombiningMethod::Simes]
    } else {
        a.methods.clone()
    };
    if let Some(alpha) = a.alpha.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return usage(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let mut cells = Vec::new();
    for &m in &a.m {
        let rs: Vec<usize> = if a.r.is_empty() {
            (2..=m).collect()
        } else {
            a.r.clone()
        };
        for r in rs {
            if r > m || r < 2 {
                eprintln!("warning: skipping cell m = {m}, r = {r} (need 2 <= r <= m)");
                continue;
            }
            for &method in &methods {
                for &alpha in &a.alpha {
                    cells.push((m, r, method, alpha));
                }
            }
        }
    }
    let mut cfg = SgdConfig::default();
    if let Some(reps) = a.reps {
        cfg.eval_reps = reps;
    }
    if let Some(n) = c.samples {
        cfg.evaluation = Evaluation::Auto { n };
    }
    cfg.validate()?;
    let start = Instant::now();
    let table = if cells.is_empty() {
        AdjustmentTable::default()
    } else {
        generate_table(&cells, &cfg, c.seed)?
    };
    eprintln!(
        "solved {} cells in {:.1}s",
        cells.len(),
        start.elapsed().as_secs_f64()
    );
    let text = table.to_csv_string();
    if c.json {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let rows: Vec<Vec<String>> = lines
            .map(|l| l.split(',').map(str::to_owned).collect())
            .collect();
        emit(c, &header, &rows)
    } else {
        write_output(c.output.as_deref(), text.as_bytes())
    }
}

fn grid_or(theta: &[f64], default: &[f64]) -> Vec<f64> {
    if theta.is_empty() {
        default.to_vec()
    } else {
        theta.to_vec()
    }
}

fn half_steps(from: usize, to: usize) -> Vec<f64> {
    (from..=to).map(|i| 0.5 * i as f64).collect()
}

/// `(r, r_star)` pairs: the requested ones, or every null / alternative pair.
fn configurations(
    m: usize,
    r: Option<usize>,
    r_star: Option<usize>,
    null: bool,
) -> Vec<(usize, usize)> {
    let rs: Vec<usize> = r.map_or_else(|| (2..=m).collect(), |r| vec![r]);
    let mut out = Vec::new();
    for r in rs {
        let stars: Vec<usize> = match r_star {
            Some(k) => vec![k],
            None if null => (0..r).collect(),
            None => (r..=m).collect(),
        };
        out.extend(stars.into_iter().map(|k| (r, k)));
    }
    out
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let c = &a.common;
    if a.reps == Some(0) {
        return usage("reps must be at least 1");
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return usage(format!("alpha must lie in (0, 1), got {}", a.alpha));
    }
    let start = Instant::now();
    let rows = match a.scenario {
        Scenario::MixtureFdr | Scenario::Covariate => simulate_fdr(a)?,
        _ => simulate_single(a)?,
    };
    let text = results_to_csv(&rows);
    if c.json {
        let header: Vec<&str> = RESULT_HEADER.split(',').collect();
        let body: Vec<Vec<String>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_owned).collect())
            .collect();
        emit(c, &header, &body)?;
    } else {
        write_output(c.output.as_deref(), text.as_bytes())?;
    }
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn simulate_single(a: &SimulateArgs) -> Result<Vec<ResultRow>> {
    use TestKind::*;
    let c = &a.common;
    let reps = a.reps.unwrap_or(SINGLE_REPS);
    let mut cfg = SingleTestConfig::new(a.method, a.alpha);
    cfg.table = load_table(a.table.as_deref())?;
    if let Some(n) = c.samples {
        cfg.evaluation = Evaluation::Auto { n };
    }
    let (m, family, thetas, pairs, tests, profile): (_, _, _, _, Vec<TestKind>, _) =
        match a.scenario {
            Scenario::Fig1Type1 => {
                let m = a.m.unwrap_or(2);
                let r = a.r.unwrap_or(m);
                let pairs = vec![(r, a.r_star.unwrap_or(r.saturating_sub(1)))];
                let tests = vec![
                    Standard,
                    Marginal,
                    MarginalOracle,
                    Unadjusted,
                    Adjusted,
                    Oracle,
                ];
                (
                    m,
                    c.family,
                    grid_or(&a.theta, &half_steps(0, 12)),
                    pairs,
                    tests,
                    SignalProfile::Flat,
                )
            }
            Scenario::Fig1Power => {
                let m = a.m.unwrap_or(2);
                let r = a.r.unwrap_or(m);
                let pairs = vec![(r, a.r_star.unwrap_or(m))];
                let tests = vec![Standard, Marginal, Unadjusted, Adjusted];
                (
                    m,
                    c.family,
                    grid_or(&a.theta, &half_steps(1, 12)),
                    pairs,
                    tests,
                    SignalProfile::Ramp,
                )
            }
            Scenario::SingleType1 | Scenario::SinglePower => {
                let m = a.m.unwrap_or(3);
                let null = a.scenario == Scenario::SingleType1;
                let pairs = configurations(m, a.r, a.r_star, null);
                (
                    m,
                    c.family,
                    grid_or(&a.theta, &[1.0, 2.0, 3.0, 4.0]),
                    pairs,
                    vec![Standard, Adjusted],
                    SignalProfile::Flat,
                )
            }
            Scenario::Robustness => {
                let m = a.m.unwrap_or(3);
                let family = match c.family {
                    LocationFamily::Normal => LocationFamily::StudentT { df: 10.0 },
                    f => f,
                };
                let pairs = configurations(m, a.r, a.r_star, true);
                (
                    m,
                    family,
                    grid_or(&a.theta, &[4.0]),
                    pairs,
                    vec![Misspecified, Adjusted, Standard],
                    SignalProfile::Flat,
                )
            }
            Scenario::MixtureFdr | Scenario::Covariate => unreachable!(),
        };
    let mut grid = Vec::new();
    for &(r, r_star) in &pairs {
        for &theta in &thetas {
            let s = SingleScenario::new(m, r, r_star, theta, reps)
                .with_family(family)
                .with_profile(profile);
            s.validate()?;
            grid.push(s);
        }
    }
    let mut rows = run_rejection_curve(&grid, &tests, &cfg, c.seed)?;
    if a.scenario == Scenario::Fig1Power {
        rows.extend(normalized_power(&rows, Standard));
    }
    Ok(rows)
}

fn simulate_fdr(a: &SimulateArgs) -> Result<Vec<ResultRow>> {
    let c = &a.common;
    if !(a.q > 0.0 && a.q < 1.0) {
        return usage(format!("q must lie in (0, 1), got {}", a.q));
    }
    let covariate = a.scenario == Scenario::Covariate;
    let m = a.m.unwrap_or(if covariate { 2 } else { 4 });
    if covariate && m != 2 {
        return usage("the covariate scenario has m = 2");
    }
    let cfg = FdrConfig {
        r: a.r.unwrap_or(2),
        method: a.method,
        q: a.q,
        replicates: a.reps.unwrap_or(FDR_REPLICATES),
        evaluation: Evaluation::Auto {
            n: c.samples.unwrap_or(FDR_SAMPLES),
        },
    };
    let mut pipelines = Vec::new();
    for source in [PValueSource::Standard, PValueSource::Cpch] {
        for procedure in [Procedure::Bh, Procedure::Storey { lambda: a.lambda }] {
            pipelines.push(Pipeline { source, procedure });
        }
    }
    let mut rows = Vec::new();
    for (i, &theta) in grid_or(&a.theta, &[3.0]).iter().enumerate() {
        let scenario = if covariate {
            FdrScenario::Covariate(CovariateScenario::new(a.hypotheses, theta))
        } else {
            FdrScenario::Mixture(MixtureScenario {
                hypotheses: a.hypotheses,
                pi1: a.pi1,
                w: a.w,
                theta,
                m,
            })
        };
        rows.extend(run_fdr_experiment(
            &scenario,
            &pipelines,
            &cfg,
            derive_seed(c.seed, &[i as u64]),
        )?);
    }
    Ok(rows)
}
