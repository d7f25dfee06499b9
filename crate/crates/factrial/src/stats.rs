//! Hypothesis tests and descriptive-statistic helpers.

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::glm::FittedGlm;

/// Negative LRT statistics within this tolerance are numerical noise and
/// clamp to zero; anything more negative is a caller error.
pub const LRT_NEGATIVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Likelihood-ratio test of `reduced` against `full`. The models must be fit
/// to the same observations and the reduced model's columns must be a strict
/// subset of the full model's.
pub fn likelihood_ratio_test(full: &FittedGlm, reduced: &FittedGlm) -> Result<TestResult> {
    if full.n_obs != reduced.n_obs {
        return Err(Error::NotNested(format!(
            "models fit to different observation counts ({} vs {})",
            full.n_obs, reduced.n_obs
        )));
    }
    if !reduced.column_names.iter().all(|c| full.column_names.contains(c)) {
        return Err(Error::NotNested(format!(
            "reduced columns {:?} are not a subset of full columns {:?}",
            reduced.column_names, full.column_names
        )));
    }
    let df = full.n_params() as f64 - reduced.n_params() as f64;
    if df <= 0.0 {
        return Err(Error::NotNested("full model adds no parameters over reduced".into()));
    }
    let mut statistic = 2.0 * (full.log_likelihood - reduced.log_likelihood);
    if statistic < 0.0 {
        if statistic < -LRT_NEGATIVE_TOL {
            return Err(Error::NegativeLrt(statistic));
        }
        statistic = 0.0;
    }
    let chi = ChiSquared::new(df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(TestResult {
        statistic,
        df,
        p_value: chi.sf(statistic).clamp(0.0, 1.0),
        method: "likelihood_ratio".into(),
        note: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestVariant {
    Pooled,
    Welch,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of a sample (the `h = (n-1)q` convention).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q));
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in quantile input"));
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Two-sided two-sample t test; pooled variance by default, Welch for unequal
/// variances.
pub fn two_sample_t_test(x: &[f64], y: &[f64], variant: TTestVariant) -> Result<TestResult> {
    let n1 = x.len();
    let n2 = y.len();
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidInput(format!(
            "t test needs at least 2 observations per group, got {n1} and {n2}"
        )));
    }
    let m1 = mean(x);
    let m2 = mean(y);
    let v1 = sample_sd(x).powi(2);
    let v2 = sample_sd(y).powi(2);
    if v1 == 0.0 && v2 == 0.0 {
        return Err(Error::ZeroDenominator("both groups have zero variance".into()));
    }

    let (t, df, method) = match variant {
        TTestVariant::Pooled => {
            let df = (n1 + n2 - 2) as f64;
            let sp2 = ((n1 - 1) as f64 * v1 + (n2 - 1) as f64 * v2) / df;
            let se = (sp2 * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
            ((m1 - m2) / se, df, "t_test_pooled")
        }
        TTestVariant::Welch => {
            let a = v1 / n1 as f64;
            let b = v2 / n2 as f64;
            let se = (a + b).sqrt();
            let df = (a + b).powi(2) / (a * a / (n1 - 1) as f64 + b * b / (n2 - 1) as f64);
            ((m1 - m2) / se, df, "t_test_welch")
        }
    };

    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TestResult { statistic: t, df, p_value: p, method: method.into(), note: None })
}

fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Exact two-sided Fisher p-value for a 2x2 table by the point-probability
/// method: sum the hypergeometric probabilities of all tables (at the observed
/// margins) no more probable than the observed one. Inclusion is decided by
/// exact integer comparison and the sum is an exact rational.
pub fn fisher_exact_2x2_rational(table: [[u64; 2]; 2]) -> Ratio<BigInt> {
    let [[a, b], [c, d]] = table;
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let n = r1 + r2;
    if r1 == 0 || r2 == 0 || c1 == 0 || c1 == n {
        return Ratio::one();
    }

    let k_min = c1.saturating_sub(r2);
    let k_max = r1.min(c1);
    let observed = binomial(r1, a) * binomial(r2, c1 - a);

    let mut included = BigInt::zero();
    for k in k_min..=k_max {
        let weight = binomial(r1, k) * binomial(r2, c1 - k);
        if weight <= observed {
            included += weight;
        }
    }
    Ratio::new(included, binomial(n, c1))
}

/// Fisher's exact test. The statistic reported is the observed table's
/// hypergeometric point probability.
pub fn fisher_exact_2x2(table: [[u64; 2]; 2]) -> TestResult {
    let [[a, b], [c, d]] = table;
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let n = r1 + r2;
    if r1 == 0 || r2 == 0 || c1 == 0 || c1 == n {
        return TestResult {
            statistic: 1.0,
            df: 1.0,
            p_value: 1.0,
            method: "fisher_exact_point_probability".into(),
            note: Some("degenerate table: a margin is zero".into()),
        };
    }
    let point = Ratio::new(binomial(r1, a) * binomial(r2, c1 - a), binomial(n, c1));
    let p = fisher_exact_2x2_rational(table);
    TestResult {
        statistic: point.to_f64().unwrap_or(f64::NAN),
        df: 1.0,
        p_value: p.to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0),
        method: "fisher_exact_point_probability".into(),
        note: None,
    }
}

/// Jarque-Bera normality check on residuals; flags when a continuous outcome
/// would need a transformation before linear modeling.
pub fn jarque_bera(residuals: &[f64]) -> Result<TestResult> {
    let n = residuals.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!("normality check needs at least 8 residuals, got {n}")));
    }
    let m = mean(residuals);
    let nf = n as f64;
    let m2 = residuals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(Error::ZeroDenominator("residuals have zero variance".into()));
    }
    let m3 = residuals.iter().map(|v| (v - m).powi(3)).sum::<f64>() / nf;
    let m4 = residuals.iter().map(|v| (v - m).powi(4)).sum::<f64>() / nf;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let statistic = nf / 6.0 * (skew * skew + kurt * kurt / 4.0);
    let chi = ChiSquared::new(2.0).expect("df 2 is valid");
    Ok(TestResult {
        statistic,
        df: 2.0,
        p_value: chi.sf(statistic).clamp(0.0, 1.0),
        method: "jarque_bera".into(),
        note: None,
    })
}
