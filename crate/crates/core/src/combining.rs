//! Base p-values, magnitude ordering, and the Fisher / Simes combining
//! functions, plus the classical (unconditional) partial conjunction tests.
//!
//! Both combining functions are expressed so that larger values are more
//! significant: Fisher is the usual `-2 sum ln p`, Simes is reported as the
//! negated Simes p-value.

use std::fmt;
use std::str::FromStr;

use crate::distributions::{chi_square_survival, LocationFamily};
use crate::error::{domain, Error, Result};

const P_FLOOR: f64 = 1e-300;

/// Base test statistics for one partial conjunction hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector {
    values: Vec<f64>,
    family: LocationFamily,
}

impl StatVector {
    pub fn new(values: Vec<f64>, family: LocationFamily) -> Result<Self> {
        if values.len() < 2 {
            return domain(format!(
                "need at least 2 base statistics, got {}",
                values.len()
            ));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return domain(format!("base statistic {i} is not finite ({v})"));
        }
        Ok(Self { values, family })
    }

    pub fn normal(values: Vec<f64>) -> Result<Self> {
        Self::new(values, LocationFamily::Normal)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn family(&self) -> LocationFamily {
        self.family
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }
}

/// Magnitude-sorted view of a [`StatVector`].
///
/// `sorted[i] = values[perm[i]]`, ascending in `|.|`, ties broken by the
/// original index. The first `m - r + 1` entries are the block fed to the
/// combining function; the last `r - 1` are the conditioned values.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedDecomposition {
    sorted: Vec<f64>,
    perm: Vec<usize>,
    r: usize,
}

impl OrderedDecomposition {
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn m(&self) -> usize {
        self.sorted.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Size of the combined block, `m - r + 1`.
    pub fn k(&self) -> usize {
        self.sorted.len() - self.r + 1
    }

    pub fn small(&self) -> &[f64] {
        &self.sorted[..self.k()]
    }

    pub fn conditioned(&self) -> &[f64] {
        &self.sorted[self.k()..]
    }

    /// Truncation bound `|T_(m-r+2)|`, the smallest conditioned magnitude.
    pub fn bound(&self) -> f64 {
        self.sorted[self.k()].abs()
    }

    /// Undo the sort.
    pub fn unsorted(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.sorted.len()];
        for (pos, &orig) in self.perm.iter().enumerate() {
            out[orig] = self.sorted[pos];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CombiningMethod {
    Fisher,
    Simes,
}

impl fmt::Display for CombiningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombiningMethod::Fisher => "fisher",
            CombiningMethod::Simes => "simes",
        })
    }
}

impl FromStr for CombiningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fisher" => Ok(CombiningMethod::Fisher),
            "simes" => Ok(CombiningMethod::Simes),
            other => Err(Error::Input(format!(
                "unknown combining method '{other}' (expected fisher or simes)"
            ))),
        }
    }
}

impl CombiningMethod {
    /// Combining statistic on raw test statistics; larger is more significant.
    pub fn statistic(&self, values: &[f64], family: LocationFamily) -> f64 {
        match self {
            CombiningMethod::Fisher => fisher_stat(values, family),
            CombiningMethod::Simes => simes_stat(values, family),
        }
    }

    /// Same as [`statistic`](Self::statistic) but reuses `scratch` for the
    /// Simes sort; used in the Monte Carlo inner loops.
    #[inline]
    pub(crate) fn statistic_with(
        &self,
        values: &[f64],
        family: LocationFamily,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        match self {
            CombiningMethod::Fisher => fisher_stat(values, family),
            CombiningMethod::Simes => {
                scratch.clear();
                scratch.extend(values.iter().map(|&t| base_pvalue(t, family)));
                -simes_pvalue_in_place(scratch)
            }
        }
    }
}

/// Two-sided base p-value `2 (1 - F(|t|))`.
#[inline]
pub fn base_pvalue(t: f64, family: LocationFamily) -> f64 {
    (2.0 * family.sf(t.abs())).min(1.0)
}

pub fn order_by_magnitude(v: &StatVector, r: usize) -> Result<OrderedDecomposition> {
    check_r(v.m(), r)?;
    let mut perm: Vec<usize> = (0..v.m()).collect();
    // stable sort keeps ascending original index among equal magnitudes
    perm.sort_by(|&a, &b| v.values[a].abs().total_cmp(&v.values[b].abs()));
    let sorted = perm.iter().map(|&i| v.values[i]).collect();
    Ok(OrderedDecomposition { sorted, perm, r })
}

pub(crate) fn check_r(m: usize, r: usize) -> Result<()> {
    if r < 2 || r > m {
        return domain(format!("r must satisfy 2 <= r <= m (m={m}, r={r})"));
    }
    Ok(())
}

/// `-2 sum ln p_i` with base p-values floored at 1e-300.
#[inline]
pub fn fisher_stat(values: &[f64], family: LocationFamily) -> f64 {
    0.0 - 2.0
        * values
            .iter()
            .map(|&t| base_pvalue(t, family).max(P_FLOOR).ln())
            .sum::<f64>()
}

/// Negated Simes p-value of the block.
pub fn simes_stat(values: &[f64], family: LocationFamily) -> f64 {
    let mut p: Vec<f64> = values.iter().map(|&t| base_pvalue(t, family)).collect();
    -simes_pvalue_in_place(&mut p)
}

/// Simes p-value `min_i (k / i) p_(i)`; sorts its argument.
pub fn simes_pvalue_in_place(p: &mut [f64]) -> f64 {
    if p.len() == 1 {
        return p[0].min(1.0);
    }
    p.sort_unstable_by(f64::total_cmp);
    let k = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &pi)| k / (i + 1) as f64 * pi)
        .fold(1.0, f64::min)
}

/// Classical partial conjunction p-value: the global-null combination of
/// the `m - r + 1` largest base p-values.
pub fn standard_pch_pvalue(v: &StatVector, r: usize, method: CombiningMethod) -> Result<f64> {
    let decomp = order_by_magnitude(v, r)?;
    standard_pvalue_of_block(decomp.small(), v.family(), method)
}

pub(crate) fn standard_pvalue_of_block(
    small: &[f64],
    family: LocationFamily,
    method: CombiningMethod,
) -> Result<f64> {
    match method {
        CombiningMethod::Fisher => {
            let stat = fisher_stat(small, family);
            chi_square_survival(stat, 2 * small.len() as u32)
        }
        CombiningMethod::Simes => Ok(-simes_stat(small, family)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N: LocationFamily = LocationFamily::Normal;

    #[test]
    fn base_pvalue_examples() {
        assert_eq!(base_pvalue(0.0, N), 1.0);
        assert!((base_pvalue(1.959964, N) - 0.05).abs() < 1e-6);
        assert_eq!(base_pvalue(-1.959964, N), base_pvalue(1.959964, N));
    }

    #[test]
    fn ordering_examples() {
        let v = StatVector::normal(vec![3.0, -1.0, 2.0]).unwrap();
        let d = order_by_magnitude(&v, 2).unwrap();
        assert_eq!(d.sorted(), &[-1.0, 2.0, 3.0]);
        assert_eq!(d.conditioned(), &[3.0]);
        assert_eq!(d.small(), &[-1.0, 2.0]);
        assert_eq!(d.perm(), &[1, 2, 0]);

        let tie = StatVector::normal(vec![1.0, -1.0]).unwrap();
        assert_eq!(order_by_magnitude(&tie, 2).unwrap().sorted(), &[1.0, -1.0]);

        let v = StatVector::normal(vec![0.5, -2.5, 1.5, -0.1]).unwrap();
        let d = order_by_magnitude(&v, 3).unwrap();
        assert_eq!(d.conditioned(), &[1.5, -2.5]);
        assert_eq!(d.bound(), 1.5);
        assert_eq!(d.unsorted(), v.values());

        assert!(order_by_magnitude(&v, 1).is_err());
        assert!(order_by_magnitude(&v, 5).is_err());
    }

    #[test]
    fn stat_vector_validation() {
        assert!(StatVector::normal(vec![1.0]).is_err());
        assert!(StatVector::normal(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_stat(&[0.0], N), 0.0);
        assert_eq!(fisher_stat(&[0.0, 0.0], N), 0.0);
        assert!((fisher_stat(&[1.959964], N) - 5.9915).abs() < 1e-3);
        // floor keeps extreme statistics finite
        assert!(fisher_stat(&[60.0], N).is_finite());
    }

    #[test]
    fn simes_examples() {
        assert_eq!(simes_stat(&[0.0], N), -1.0);
        let mut p = [0.2, 0.3];
        assert!((simes_pvalue_in_place(&mut p) - 0.3).abs() < 1e-15);
        let mut p = [0.3, 0.1];
        assert!((simes_pvalue_in_place(&mut p) - 0.2).abs() < 1e-15);
        let t = 1.3;
        assert_eq!(-simes_stat(&[t], N), base_pvalue(t, N));
    }

    #[test]
    fn standard_examples() {
        let v = StatVector::normal(vec![0.0, 0.0]).unwrap();
        assert_eq!(
            standard_pch_pvalue(&v, 2, CombiningMethod::Fisher).unwrap(),
            1.0
        );
        let v = StatVector::normal(vec![2.0, 3.0]).unwrap();
        let p = standard_pch_pvalue(&v, 2, CombiningMethod::Fisher).unwrap();
        assert!((p - base_pvalue(2.0, N)).abs() < 1e-12);
        assert!((p - 0.0455).abs() < 1e-4);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(
            "Fisher".parse::<CombiningMethod>().unwrap(),
            CombiningMethod::Fisher
        );
        assert_eq!(
            "simes".parse::<CombiningMethod>().unwrap(),
            CombiningMethod::Simes
        );
        assert!("bonferroni".parse::<CombiningMethod>().is_err());
    }

    fn stat_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..6)
    }

    proptest! {
        #[test]
        fn max_p_reduction(v in stat_vec()) {
            let m = v.len();
            let sv = StatVector::normal(v.clone()).unwrap();
            let fisher = standard_pch_pvalue(&sv, m, CombiningMethod::Fisher).unwrap();
            let simes = standard_pch_pvalue(&sv, m, CombiningMethod::Simes).unwrap();
            let max_p = v.iter().map(|&t| base_pvalue(t, N)).fold(0.0, f64::max);
            prop_assert!((fisher - max_p).abs() < 1e-10);
            prop_assert!((simes - max_p).abs() < 1e-12);
        }

        #[test]
        fn permutation_and_sign_invariance(v in stat_vec(), seed in 0usize..100, flips in any::<u8>()) {
            let m = v.len();
            let mut w = v.clone();
            w.rotate_left(seed % m);
            for (i, x) in w.iter_mut().enumerate() {
                if flips >> i & 1 == 1 { *x = -*x; }
            }
            for r in 2..=m {
                for method in [CombiningMethod::Fisher, CombiningMethod::Simes] {
                    let a = standard_pch_pvalue(&StatVector::normal(v.clone()).unwrap(), r, method).unwrap();
                    let b = standard_pch_pvalue(&StatVector::normal(w.clone()).unwrap(), r, method).unwrap();
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn monotone_in_magnitude(v in stat_vec(), idx in 0usize..6, bump in 0.0f64..3.0) {
            let m = v.len();
            let mut w = v.clone();
            let i = idx % m;
            w[i] = w[i].signum() * (w[i].abs() + bump);
            for r in 2..=m {
                for method in [CombiningMethod::Fisher, CombiningMethod::Simes] {
                    let a = standard_pch_pvalue(&StatVector::normal(v.clone()).unwrap(), r, method).unwrap();
                    let b = standard_pch_pvalue(&StatVector::normal(w.clone()).unwrap(), r, method).unwrap();
                    prop_assert!(b <= a + 1e-12);
                }
            }
        }
    }

    #[test]
    fn conservative_under_global_null() {
        use crate::rng::{standard_normal, substream};
        let mut rng = substream(42, &[]);
        let reps = 100_000;
        for method in [CombiningMethod::Fisher, CombiningMethod::Simes] {
            let mut hits = 0;
            for _ in 0..reps {
                let v = vec![
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                let p = standard_pch_pvalue(&StatVector::normal(v).unwrap(), 2, method).unwrap();
                hits += (p <= 0.05) as usize;
            }
            assert!((hits as f64 / reps as f64) < 0.05);
        }
    }
}
