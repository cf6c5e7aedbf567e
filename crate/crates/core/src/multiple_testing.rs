//! False discovery rate control over a batch of p-values.

use crate::error::{domain, Result};

/// Default Storey tuning parameter.
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PValueBatch {
    pvalues: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl PValueBatch {
    pub fn new(pvalues: Vec<f64>) -> Result<Self> {
        if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return domain(format!("p-values must lie in [0, 1], got {p}"));
        }
        Ok(Self {
            pvalues,
            labels: None,
        })
    }

    pub fn with_labels(pvalues: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != pvalues.len() {
            return domain(format!(
                "{} labels for {} p-values",
                labels.len(),
                pvalues.len()
            ));
        }
        let mut batch = Self::new(pvalues)?;
        batch.labels = Some(labels);
        Ok(batch)
    }

    pub fn pvalues(&self) -> &[f64] {
        &self.pvalues
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pvalues.is_empty()
    }
}

fn check_open(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        domain(format!("{name} must lie in (0, 1), got {x}"))
    }
}

/// Step-up rule at level `q`: rejects the `i*` smallest p-values, where
/// `i*` is the largest `i` with `p_(i) <= i q / M`. Returns sorted indices.
pub fn benjamini_hochberg(batch: &PValueBatch, q: f64) -> Result<Vec<usize>> {
    check_open(q, "q")?;
    Ok(step_up(batch.pvalues(), q))
}

fn step_up(p: &[f64], level: f64) -> Vec<usize> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let cut = order
        .iter()
        .enumerate()
        .rev()
        .find(|&(i, &j)| p[j] <= (i + 1) as f64 * level / m as f64)
        .map_or(0, |(i, _)| i + 1);
    // ties at the cutoff value share fate
    let threshold = if cut == 0 {
        return Vec::new();
    } else {
        p[order[cut - 1]]
    };
    let mut out: Vec<usize> = (0..m).filter(|&j| p[j] <= threshold).collect();
    out.sort_unstable();
    out
}

/// `(1 + #{p > lambda}) / (M (1 - lambda))`, clamped to `(0, 1]`.
pub fn storey_pi0(batch: &PValueBatch, lambda: f64) -> Result<f64> {
    check_open(lambda, "lambda")?;
    if batch.is_empty() {
        return Ok(1.0);
    }
    let above = batch.pvalues().iter().filter(|&&p| p > lambda).count();
    Ok(((1 + above) as f64 / (batch.len() as f64 * (1.0 - lambda))).min(1.0))
}

/// BH at level `q / pi0_hat`.
pub fn storey(batch: &PValueBatch, q: f64, lambda: f64) -> Result<Vec<usize>> {
    check_open(q, "q")?;
    let pi0 = storey_pi0(batch, lambda)?;
    Ok(step_up(batch.pvalues(), q / pi0))
}
