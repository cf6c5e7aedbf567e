//! Unit-scale location families: the standard normal and central Student t.
//!
//! Everything above this module only ever asks for probabilities of
//! symmetric or one-sided intervals, densities, quantiles, and draws from
//! a shifted copy of the family truncated to `(-|bound|, |bound|)`. The
//! functions here are written so that intervals deep in a tail keep their
//! relative precision (the lower tail of the CDF is used wherever possible).

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use statrs::function::beta::{beta_reg, inv_beta_reg};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{domain, Error, Result};
use crate::rng::open_unit;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A unit-scale, zero-centred symmetric family; locations are added on top.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LocationFamily {
    #[default]
    Normal,
    StudentT {
        df: f64,
    },
}

impl fmt::Display for LocationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocationFamily::Normal => write!(f, "normal"),
            LocationFamily::StudentT { df } => write!(f, "t:{df}"),
        }
    }
}

impl FromStr for LocationFamily {
    type Err = Error;

    /// Accepts `normal` or `t:<df>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("normal") {
            return Ok(LocationFamily::Normal);
        }
        match s.split_once(':') {
            Some((kind, df)) if kind.eq_ignore_ascii_case("t") => {
                let df: f64 = df
                    .trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("bad degrees of freedom in '{s}'")))?;
                LocationFamily::student_t(df)
            }
            _ => Err(Error::Input(format!(
                "unknown family '{s}' (expected 'normal' or 't:<df>')"
            ))),
        }
    }
}

impl LocationFamily {
    pub fn student_t(df: f64) -> Result<Self> {
        if !(df.is_finite() && df > 0.0) {
            return domain(format!("degrees of freedom must be positive, got {df}"));
        }
        Ok(LocationFamily::StudentT { df })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return domain(format!("cdf argument must be finite, got {x}"));
        }
        Ok(self.cdf_raw(x))
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("quantile probability must lie in (0, 1), got {p}"));
        }
        Ok(self.quantile_raw(p))
    }

    #[inline]
    pub(crate) fn cdf_raw(&self, x: f64) -> f64 {
        match *self {
            LocationFamily::Normal => normal_cdf(x),
            LocationFamily::StudentT { df } => t_cdf(x, df),
        }
    }

    /// Upper tail `1 - F(x)`, accurate for large `x`.
    #[inline]
    pub fn sf(&self, x: f64) -> f64 {
        self.cdf_raw(-x)
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    #[inline]
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            LocationFamily::Normal => -0.5 * x * x - LN_SQRT_2PI,
            LocationFamily::StudentT { df } => {
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - 0.5 * (df + 1.0) * (x * x / df).ln_1p()
            }
        }
    }

    /// `ln F(x)`, finite far into the lower tail.
    pub fn ln_cdf(&self, x: f64) -> f64 {
        match *self {
            LocationFamily::Normal if x < -30.0 => ln_normal_cdf_asymptotic(x),
            _ => self.cdf_raw(x).ln(),
        }
    }

    pub(crate) fn quantile_raw(&self, p: f64) -> f64 {
        match *self {
            LocationFamily::Normal => normal_quantile(p),
            LocationFamily::StudentT { df } => t_quantile(p, df),
        }
    }

    /// `P(lo < X < hi)` for the zero-centred family.
    pub fn interval_prob(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let (lo, hi) = if lo >= 0.0 { (-hi, -lo) } else { (lo, hi) };
        if hi <= 0.0 {
            (self.cdf_raw(hi) - self.cdf_raw(lo)).max(0.0)
        } else {
            (1.0 - self.cdf_raw(lo) - self.cdf_raw(-hi)).max(0.0)
        }
    }

    /// `ln P(lo < X < hi)`; `-inf` for an empty interval.
    pub fn ln_interval_prob(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return f64::NEG_INFINITY;
        }
        let (lo, hi) = if lo >= 0.0 { (-hi, -lo) } else { (lo, hi) };
        if hi <= 0.0 {
            let ln_hi = self.ln_cdf(hi);
            let ln_lo = self.ln_cdf(lo);
            if ln_hi == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            ln_hi + (-(ln_lo - ln_hi).exp()).ln_1p()
        } else {
            (-(self.cdf_raw(lo) + self.cdf_raw(-hi))).ln_1p()
        }
    }

    /// `P(|X + location| < bound)`.
    #[inline]
    pub fn symmetric_interval_prob(&self, location: f64, bound: f64) -> f64 {
        let b = bound.abs();
        self.interval_prob(-b - location, b - location)
    }

    #[inline]
    pub fn ln_symmetric_interval_prob(&self, location: f64, bound: f64) -> f64 {
        let b = bound.abs();
        self.ln_interval_prob(-b - location, b - location)
    }
}

/// Free-function form of [`LocationFamily::cdf`].
pub fn cdf(family: LocationFamily, x: f64) -> Result<f64> {
    family.cdf(x)
}

/// Free-function form of [`LocationFamily::quantile`].
pub fn quantile(family: LocationFamily, p: f64) -> Result<f64> {
    family.quantile(p)
}

/// `P(chi^2_k >= x)`.
pub fn chi_square_survival(x: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return domain("chi-square degrees of freedom must be positive");
    }
    if x.is_nan() || x < 0.0 {
        return domain(format!("chi-square argument must be nonnegative, got {x}"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(0.5 * k as f64, 0.5 * x).clamp(0.0, 1.0))
}

/// One draw from `family + location` restricted to `(-|bound|, |bound|)`.
pub fn sample_truncated<R: Rng + ?Sized>(
    family: LocationFamily,
    location: f64,
    bound: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(TruncatedSampler::new(family, location, bound)?.sample(rng))
}

#[derive(Debug, Clone, Copy)]
enum SamplerMode {
    /// Inverse CDF on `(lo_cdf, lo_cdf + mass)`.
    InverseCdf { lo_cdf: f64, mass: f64 },
    /// Both endpoints so far in the normal lower tail that the CDF
    /// underflows; the density there is `exp(-z^2/2)` to within a factor
    /// that varies by less than the interval width over `|z|`.
    NormalTail { y0: f64, y1: f64 },
    /// Interval carries mass below the CDF's resolution; density is flat.
    Uniform,
}

/// Reusable truncated sampler; the CDF endpoints are computed once.
///
/// Locations are canonicalised to be nonnegative and the draw is negated
/// afterwards, so a sampler for `-mu` produces exactly the negated draws of
/// the sampler for `mu` on the same random stream.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedSampler {
    family: LocationFamily,
    flip: bool,
    mu: f64,
    bound: f64,
    z_lo: f64,
    z_hi: f64,
    mode: SamplerMode,
}

impl TruncatedSampler {
    pub fn new(family: LocationFamily, location: f64, bound: f64) -> Result<Self> {
        let b = bound.abs();
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::DegenerateInterval(bound));
        }
        if !location.is_finite() {
            return domain(format!(
                "truncated-sampler location must be finite, got {location}"
            ));
        }
        let flip = location < 0.0;
        let mu = location.abs();
        let z_lo = -b - mu;
        let z_hi = b - mu;
        let lo_cdf = family.cdf_raw(z_lo);
        let hi_cdf = family.cdf_raw(z_hi);
        let mass = hi_cdf - lo_cdf;
        let mode = if hi_cdf < 1e-290 && family == LocationFamily::Normal {
            SamplerMode::NormalTail {
                y0: -z_hi,
                y1: -z_lo,
            }
        } else if !(mass > 1e-15 * hi_cdf) {
            SamplerMode::Uniform
        } else {
            SamplerMode::InverseCdf { lo_cdf, mass }
        };
        Ok(Self {
            family,
            flip,
            mu,
            bound: b,
            z_lo,
            z_hi,
            mode,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_unit(rng);
        let z = match self.mode {
            SamplerMode::InverseCdf { lo_cdf, mass } => {
                let z = self.family.quantile_raw(lo_cdf + u * mass);
                z.clamp(self.z_lo, self.z_hi)
            }
            SamplerMode::NormalTail { y0, y1 } => {
                // Inverse CDF of the density y exp(-y^2/2) on (y0, y1).
                let span = 0.5 * (y1 * y1 - y0 * y0);
                let y2 = y0 * y0 - 2.0 * (-u * (-(-span).exp_m1())).ln_1p();
                -(y2.sqrt().clamp(y0, y1))
            }
            SamplerMode::Uniform => self.z_lo + u * (self.z_hi - self.z_lo),
        };
        let mut x = self.mu + z;
        if x >= self.bound {
            x = self.bound.next_down();
        } else if x <= -self.bound {
            x = (-self.bound).next_up();
        }
        if self.flip {
            -x
        } else {
            x
        }
    }
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

fn ln_normal_cdf_asymptotic(x: f64) -> f64 {
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Standard normal quantile (Wichura's AS 241, relative error ~1e-16).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_879e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn t_cdf(x: f64, df: f64) -> f64 {
    let x2 = x * x;
    if x2 < df {
        // Small |x|: the complementary incomplete-beta form keeps precision.
        let half = 0.5 * beta_reg(0.5, 0.5 * df, x2 / (df + x2));
        if x < 0.0 {
            0.5 - half
        } else {
            0.5 + half
        }
    } else {
        let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x2));
        if x < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }
}

fn t_quantile(p: f64, df: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if df == 1.0 {
        return if p < 0.5 {
            -1.0 / (PI * p).tan()
        } else {
            1.0 / (PI * (1.0 - p)).tan()
        };
    }
    if df == 2.0 {
        return (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
    }
    let lower = p < 0.5;
    let tail = if lower { p } else { 1.0 - p };
    let x = inv_beta_reg(0.5 * df, 0.5, 2.0 * tail);
    let mut t = -(df * (1.0 - x) / x).sqrt();
    if !t.is_finite() {
        t = normal_quantile(tail);
    }
    let family = LocationFamily::StudentT { df };
    // Newton polish on the lower tail, safeguarded by a bisection bracket.
    let (mut lo, mut hi) = (f64::NEG_INFINITY, 0.0_f64);
    for _ in 0..60 {
        let err = t_cdf(t, df) - tail;
        if err.abs() <= 1e-15 * tail {
            break;
        }
        if err > 0.0 {
            hi = hi.min(t);
        } else {
            lo = lo.max(t);
        }
        let step = err / family.pdf(t);
        let mut next = t - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if lo.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * hi.min(-1.0)
            };
        }
        if (next - t).abs() <= 1e-15 * t.abs() {
            t = next;
            break;
        }
        t = next;
    }
    if lower {
        t
    } else {
        -t
    }
}
