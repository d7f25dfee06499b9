//! Logistic (IRLS) and linear (least-squares) model fitting.
//!
//! Both fitters run a single always-weighted code path; the unweighted entry
//! points pass a vector of ones, so weighted calls with unit weights reproduce
//! unweighted results bit for bit.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Guard on the logit scale: a coefficient walking past this is treated as
/// separation rather than a usable estimate.
pub const SEPARATION_GUARD: f64 = 15.0;
const MAX_ITERATIONS: usize = 50;
const DEVIANCE_TOL: f64 = 1e-10;
const COEF_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// n x p regressor matrix; first column is the intercept.
    pub matrix: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
}

impl DesignMatrix {
    /// Build from named columns, all the same length. Row ids are optional
    /// labels for diagnostics.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, row_ids: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("design matrix needs at least one column".into()));
        }
        let n = columns[0].1.len();
        if columns.iter().any(|(_, c)| c.len() != n) {
            return Err(Error::InvalidInput("design matrix columns differ in length".into()));
        }
        if !row_ids.is_empty() && row_ids.len() != n {
            return Err(Error::InvalidInput("row_ids length does not match columns".into()));
        }
        let p = columns.len();
        let mut matrix = DMatrix::zeros(n, p);
        let mut column_names = Vec::with_capacity(p);
        for (j, (name, col)) in columns.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                matrix[(i, j)] = v;
            }
            column_names.push(name);
        }
        Ok(DesignMatrix { matrix, column_names, row_ids })
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Copy with one column overwritten by a constant, for counterfactual
    /// prediction.
    pub fn with_column_set(&self, name: &str, value: f64) -> Result<Self> {
        let j = self.column_index(name)?;
        let mut out = self.clone();
        for i in 0..out.matrix.nrows() {
            out.matrix[(i, j)] = value;
        }
        Ok(out)
    }

    /// Copy with additional columns appended on the right.
    pub fn with_extra_columns(&self, extra: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut columns: Vec<(String, Vec<f64>)> = self
            .column_names
            .iter()
            .enumerate()
            .map(|(j, name)| (name.clone(), self.matrix.column(j).iter().copied().collect()))
            .collect();
        columns.extend(extra);
        DesignMatrix::from_columns(columns, self.row_ids.clone())
    }

    /// Copy keeping only the listed rows, in the given order. Column names
    /// are unchanged, so the result stays comparable with fits of the full
    /// design.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.matrix.nrows()) {
            return Err(Error::InvalidInput(format!(
                "row index {bad} out of range for {} rows",
                self.matrix.nrows()
            )));
        }
        Ok(DesignMatrix {
            matrix: self.matrix.select_rows(rows.iter()),
            column_names: self.column_names.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
        })
    }

    /// Copy keeping only the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Self> {
        let mut cols = Vec::with_capacity(names.len());
        for name in names {
            cols.push(self.column_index(name)?);
        }
        let n = self.matrix.nrows();
        let mut matrix = DMatrix::zeros(n, cols.len());
        for (jj, &j) in cols.iter().enumerate() {
            for i in 0..n {
                matrix[(i, jj)] = self.matrix[(i, j)];
            }
        }
        Ok(DesignMatrix {
            matrix,
            column_names: names.iter().map(|s| s.to_string()).collect(),
            row_ids: self.row_ids.clone(),
        })
    }

    fn check_full_rank(&self) -> Result<()> {
        let xtx = self.matrix.transpose() * &self.matrix;
        let eigen = SymmetricEigen::new(xtx);
        let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max.is_finite()) || max <= 0.0 || min < RANK_TOL * max {
            return Err(Error::RankDeficient(format!(
                "design matrix with columns {:?} is not full column rank",
                self.column_names
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedGlm {
    pub family: ModelFamily,
    pub coefficients: DVector<f64>,
    /// Inverse observed information (logistic) or sigma^2 (X'WX)^-1 (linear).
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub weights_used: Option<DVector<f64>>,
    pub column_names: Vec<String>,
}

impl FittedGlm {
    pub fn coefficient(&self, name: &str) -> Result<f64> {
        let j = self
            .column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(self.coefficients[j])
    }

    pub fn standard_error(&self, name: &str) -> Result<f64> {
        let j = self
            .column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(self.covariance[(j, j)].sqrt())
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }
}

/// Numerically stable inverse logit.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn bernoulli_log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += w[i] * (y[i] * eta[i] - log1p_exp(eta[i]));
    }
    ll
}

fn validate_inputs(x: &DesignMatrix, n_y: usize, weights: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n_y != n {
        return Err(Error::InvalidInput(format!("response length {n_y} != design rows {n}")));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!("need more observations ({n}) than parameters ({p})")));
    }
    x.check_full_rank()?;
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidInput(format!("weights length {} != design rows {n}", w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidInput("weights must be finite and positive".into()));
            }
            w.clone()
        }
        None => DVector::from_element(n, 1.0),
    };
    Ok(w)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let (r, c) = m.shape();
    debug_assert_eq!(r, c);
    for i in 0..r {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Maximum-likelihood logistic regression by iteratively reweighted least
/// squares (Newton steps with step-halving). `weights` multiply each
/// observation's log-likelihood contribution.
pub fn fit_logistic(x: &DesignMatrix, y: &[f64], weights: Option<&DVector<f64>>) -> Result<FittedGlm> {
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be coded 0/1".into()));
    }
    let w = validate_inputs(x, y.len(), weights)?;
    let xm = &x.matrix;
    let yv = DVector::from_column_slice(y);
    let n = x.n_rows();
    let p = x.n_cols();

    let mut beta = DVector::zeros(p);
    let mut ll = bernoulli_log_likelihood(xm, &yv, &w, &beta);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;

        let eta = xm * &beta;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let mu = expit(eta[i]);
            let wi = w[i];
            let resid = wi * (yv[i] - mu);
            let curv = wi * mu * (1.0 - mu);
            for a in 0..p {
                let xa = xm[(i, a)];
                score[a] += resid * xa;
                for b in 0..=a {
                    info[(a, b)] += curv * xa * xm[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                info[(a, b)] = info[(b, a)];
            }
        }

        let chol = Cholesky::new(info).ok_or_else(|| separation_or_rank(x, &beta))?;
        let mut step = chol.solve(&score);

        let mut candidate = &beta + &step;
        let mut ll_new = bernoulli_log_likelihood(xm, &yv, &w, &candidate);
        // Only a decrease beyond rounding noise triggers halving; otherwise
        // noise near the optimum would neuter the final Newton step and leave
        // coefficients short of the MLE.
        let slack = 1e-12 * (1.0 + ll.abs());
        let mut halvings = 0;
        while ll_new < ll - slack && halvings < 30 {
            step *= 0.5;
            candidate = &beta + &step;
            ll_new = bernoulli_log_likelihood(xm, &yv, &w, &candidate);
            halvings += 1;
        }

        let deviance_change = 2.0 * (ll_new - ll);
        let max_coef_change = step.amax();
        beta = candidate;

        if let Some(j) = (0..p).find(|&j| beta[j].abs() > SEPARATION_GUARD) {
            return Err(Error::Separation { column: x.column_names[j].clone(), guard: SEPARATION_GUARD });
        }

        ll = ll_new;
        if deviance_change.abs() < DEVIANCE_TOL && max_coef_change < COEF_TOL {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence { iterations, deviance: -2.0 * ll });
    }

    // Covariance from the information at the converged coefficients.
    let eta = xm * &beta;
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let mu = expit(eta[i]);
        let curv = w[i] * mu * (1.0 - mu);
        for a in 0..p {
            for b in 0..=a {
                info[(a, b)] += curv * xm[(i, a)] * xm[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            info[(a, b)] = info[(b, a)];
        }
    }
    let chol = Cholesky::new(info).ok_or_else(|| separation_or_rank(x, &beta))?;
    let mut covariance = chol.inverse();
    symmetrize(&mut covariance);

    Ok(FittedGlm {
        family: ModelFamily::Logistic,
        coefficients: beta,
        covariance,
        log_likelihood: ll,
        n_obs: n,
        converged,
        iterations,
        weights_used: weights.cloned(),
        column_names: x.column_names.clone(),
    })
}

fn separation_or_rank(x: &DesignMatrix, beta: &DVector<f64>) -> Error {
    if let Some(j) = (0..beta.len()).find(|&j| beta[j].abs() > SEPARATION_GUARD) {
        Error::Separation { column: x.column_names[j].clone(), guard: SEPARATION_GUARD }
    } else {
        Error::RankDeficient("information matrix is not positive definite".into())
    }
}

/// Weighted least squares. Covariance uses the unbiased variance estimator;
/// the stored log-likelihood is the Gaussian ML value so nested linear fits
/// can be compared.
pub fn fit_linear(x: &DesignMatrix, y: &[f64], weights: Option<&DVector<f64>>) -> Result<FittedGlm> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("linear response must be finite".into()));
    }
    let w = validate_inputs(x, y.len(), weights)?;
    let xm = &x.matrix;
    let yv = DVector::from_column_slice(y);
    let n = x.n_rows();
    let p = x.n_cols();
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "linear model needs more observations than parameters ({n} rows, {p} columns)"
        )));
    }

    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let wi = w[i];
        for a in 0..p {
            let xa = xm[(i, a)];
            xtwy[a] += wi * xa * yv[i];
            for b in 0..=a {
                xtwx[(a, b)] += wi * xa * xm[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }

    let chol = Cholesky::new(xtwx)
        .ok_or_else(|| Error::RankDeficient("weighted cross-product matrix is not positive definite".into()))?;
    let beta = chol.solve(&xtwy);

    let fitted = xm * &beta;
    let mut rss = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let e = yv[i] - fitted[i];
        rss += w[i] * e * e;
        wsum += w[i];
    }

    let sigma2_unbiased = rss / (n - p) as f64;
    let mut covariance = chol.inverse() * sigma2_unbiased;
    symmetrize(&mut covariance);

    // Gaussian ML log-likelihood with the ML variance estimate, floored so an
    // exact fit stays finite.
    let sigma2_ml = (rss / wsum).max(f64::MIN_POSITIVE);
    let log_likelihood = -0.5 * wsum * ((2.0 * std::f64::consts::PI * sigma2_ml).ln() + rss / (wsum * sigma2_ml));

    Ok(FittedGlm {
        family: ModelFamily::Linear,
        coefficients: beta,
        covariance,
        log_likelihood,
        n_obs: n,
        converged: true,
        iterations: 1,
        weights_used: weights.cloned(),
        column_names: x.column_names.clone(),
    })
}
