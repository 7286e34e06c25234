//! Maximum-likelihood logistic regression by iteratively reweighted least
//! squares (Newton-Raphson on the Bernoulli log-likelihood).
//!
//! Columns are standardized internally for conditioning; coefficients and
//! the reported score are on the original scale. Rows are bucketed by their
//! pattern of 0/1 columns, so each iteration is one fixed-order pass that
//! touches only the continuous columns per row while accumulating the
//! log-likelihood, the score (compensated) and the curvature matrix. A step that lowers the
//! likelihood is halved until it does not.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::stats::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iterations: usize,
    /// Stop once two consecutive steps change the log-likelihood by less
    /// than this relative amount.
    pub relative_ll_tol: f64,
    /// Stop once every original-scale score component is below this.
    pub score_tol: f64,
    /// Added to the curvature diagonal before solving for the step.
    pub ridge: f64,
    pub max_step_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iterations: 100,
            relative_ll_tol: 1e-10,
            score_tol: 1e-8,
            ridge: 1e-8,
            max_step_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrlsError {
    #[error("design matrix has no rows")]
    Empty,
    #[error("{labels} labels for {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("label at row {0} is not 0/1")]
    InvalidLabel(usize),
    #[error("all labels are {0}; the intercept is not identified")]
    NoContrast(u8),
    #[error("column {0} is constant; its coefficient is not identified")]
    ConstantColumn(usize),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("curvature matrix is not positive definite at iteration {0}")]
    Singular(usize),
    #[error("log-likelihood became non-finite at iteration {0}")]
    Diverged(usize),
}

/// Row-major matrix of raw covariate values, without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl DesignMatrix {
    pub fn with_capacity(n_cols: usize, n_rows: usize) -> Self {
        DesignMatrix {
            data: Vec::with_capacity(n_cols * n_rows),
            n_cols,
        }
    }

    pub fn from_rows(n_cols: usize, rows: &[Vec<f64>]) -> Self {
        let mut m = Self::with_capacity(n_cols, rows.len());
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_cols.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub intercept: f64,
    /// One per design column, original scale.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Accepted Newton steps.
    pub iterations: usize,
    /// Largest absolute original-scale score component (intercept included)
    /// at the returned coefficients.
    pub max_abs_score: f64,
    /// Log-likelihood at the start and after every accepted step.
    pub log_likelihood: Vec<f64>,
    std_coefficients: Vec<f64>,
    means: Vec<f64>,
    inv_sds: Vec<f64>,
}

impl LogisticFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap()
    }

    /// Fitted probability for one row of raw covariates.
    pub fn probability(&self, row: &[f64]) -> f64 {
        let mut eta = self.std_coefficients[0];
        for (j, x) in row.iter().enumerate() {
            eta += self.std_coefficients[j + 1] * (x - self.means[j]) * self.inv_sds[j];
        }
        sigmoid(eta)
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    let e = (-eta.abs()).exp();
    if eta >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

struct Pass {
    ll: f64,
    /// Score on the standardized scale: intercept first.
    score: Vec<f64>,
    /// Upper triangle of X'WX (row-major, dim x dim).
    curvature: Vec<f64>,
}

const LOG_BLOCK: usize = 256;

/// Running Bernoulli log-likelihood. `log(1 + exp(-|eta|))` is taken on
/// blocks of the running product rather than per row; each factor lies in
/// (1, 2], so a block cannot overflow.
struct LogLikelihood {
    sum: f64,
    product: f64,
    block: usize,
}

impl Default for LogLikelihood {
    fn default() -> Self {
        LogLikelihood {
            sum: 0.0,
            product: 1.0,
            block: 0,
        }
    }
}

impl LogLikelihood {
    /// Adds one row and returns its residual `y - p` and weight `p (1 - p)`.
    #[inline(always)]
    fn row(&mut self, eta: f64, y: u8) -> (f64, f64) {
        let e = (-eta.abs()).exp();
        let denom = 1.0 + e;
        let prob = if eta >= 0.0 { 1.0 / denom } else { e / denom };
        let yf = f64::from(y);
        self.sum += yf * eta - eta.max(0.0);
        self.product *= denom;
        self.block += 1;
        if self.block == LOG_BLOCK {
            self.sum -= self.product.ln();
            self.product = 1.0;
            self.block = 0;
        }
        (yf - prob, prob * (1.0 - prob))
    }

    fn value(&self) -> f64 {
        self.sum - self.product.ln()
    }
}

/// Rows sharing the same values in every 0/1 column.
struct Group {
    /// Standardized value of each 0/1 column for this group.
    z_binary: Vec<f64>,
    start: usize,
    end: usize,
}

/// The standardized problem, with rows bucketed by their 0/1 pattern so that
/// only the remaining (continuous) columns are touched per row.
struct Standardized {
    means: Vec<f64>,
    inv_sds: Vec<f64>,
    /// Original indices of the 0/1 columns and of the other columns.
    binary_cols: Vec<usize>,
    continuous_cols: Vec<usize>,
    groups: Vec<Group>,
    /// Standardized continuous values, row-major, rows ordered by group.
    z_continuous: Vec<f64>,
    labels: Vec<u8>,
}

impl Standardized {
    fn new(design: &DesignMatrix, labels: &[u8], means: Vec<f64>, inv_sds: Vec<f64>) -> Self {
        let p = means.len();
        // at most 64 0/1 columns are used for grouping; any others are
        // treated like continuous ones
        let mut is_binary = vec![true; p];
        for row in design.rows() {
            for (flag, x) in is_binary.iter_mut().zip(row) {
                *flag &= *x == 0.0 || *x == 1.0;
            }
        }
        let mut binary_cols = Vec::new();
        let mut continuous_cols = Vec::new();
        for (j, &flag) in is_binary.iter().enumerate() {
            if flag && binary_cols.len() < 64 {
                binary_cols.push(j);
            } else {
                continuous_cols.push(j);
            }
        }

        // dense lookup for the usual handful of 0/1 columns
        let mut dense = if binary_cols.len() <= 16 {
            vec![usize::MAX; 1 << binary_cols.len()]
        } else {
            Vec::new()
        };
        let mut sparse: HashMap<u64, usize> = HashMap::new();
        let mut patterns: Vec<u64> = Vec::new();
        let mut group_of = Vec::with_capacity(labels.len());
        for row in design.rows() {
            let mut key = 0u64;
            for (b, &j) in binary_cols.iter().enumerate() {
                if row[j] == 1.0 {
                    key |= 1 << b;
                }
            }
            let next = patterns.len();
            let g = if dense.is_empty() {
                *sparse.entry(key).or_insert(next)
            } else {
                let slot = &mut dense[key as usize];
                if *slot == usize::MAX {
                    *slot = next;
                }
                *slot
            };
            if g == next {
                patterns.push(key);
            }
            group_of.push(g);
        }

        let mut counts = vec![0usize; patterns.len()];
        for &g in &group_of {
            counts[g] += 1;
        }
        let mut groups = Vec::with_capacity(patterns.len());
        let mut start = 0;
        for (pattern, count) in patterns.iter().zip(&counts) {
            let z_binary = binary_cols
                .iter()
                .enumerate()
                .map(|(b, &j)| {
                    let x = ((pattern >> b) & 1) as f64;
                    (x - means[j]) * inv_sds[j]
                })
                .collect();
            groups.push(Group {
                z_binary,
                start,
                end: start + count,
            });
            start += count;
        }

        let c = continuous_cols.len();
        let mut cursor: Vec<usize> = groups.iter().map(|g| g.start).collect();
        let mut z_continuous = vec![0.0; labels.len() * c];
        let mut sorted_labels = vec![0u8; labels.len()];
        for ((row, &y), &g) in design.rows().zip(labels).zip(&group_of) {
            let slot = cursor[g];
            cursor[g] += 1;
            sorted_labels[slot] = y;
            for (k, &j) in continuous_cols.iter().enumerate() {
                z_continuous[slot * c + k] = (row[j] - means[j]) * inv_sds[j];
            }
        }

        Standardized {
            means,
            inv_sds,
            binary_cols,
            continuous_cols,
            groups,
            z_continuous,
            labels: sorted_labels,
        }
    }

    fn dim(&self) -> usize {
        self.means.len() + 1
    }

    fn evaluate(&self, beta: &[f64]) -> Pass {
        let dim = self.dim();
        let c = self.continuous_cols.len();
        let beta_c: Vec<f64> = self.continuous_cols.iter().map(|&j| beta[j + 1]).collect();

        let mut ll = CompensatedSum::new();
        let mut score = vec![CompensatedSum::new(); dim];
        let mut curv = vec![0.0; dim * dim];

        // plain sums within a group, compensated sums across groups
        let mut s_rz = vec![0.0; c];
        let mut s_wz = vec![0.0; c];
        let mut s_wzz = vec![0.0; c * c];
        // coefficient of each standardized dimension when constant within the group
        let mut constant = vec![0.0; dim];
        constant[0] = 1.0;

        for group in &self.groups {
            let mut base = beta[0];
            for (b, &j) in self.binary_cols.iter().enumerate() {
                base += beta[j + 1] * group.z_binary[b];
                constant[j + 1] = group.z_binary[b];
            }
            let mut s_r = 0.0;
            s_rz.fill(0.0);
            let mut s_w = 0.0;
            s_wz.fill(0.0);
            s_wzz.fill(0.0);
            let mut group_ll = LogLikelihood::default();

            if c == 1 {
                // the common case of a single continuous column (age)
                let b1 = beta_c[0];
                let (mut rz, mut wz, mut wzz) = (0.0, 0.0, 0.0);
                for i in group.start..group.end {
                    let z = self.z_continuous[i];
                    let eta = base + b1 * z;
                    let (r, w) = group_ll.row(eta, self.labels[i]);
                    s_r += r;
                    s_w += w;
                    rz += r * z;
                    wz += w * z;
                    wzz += w * z * z;
                }
                s_rz[0] = rz;
                s_wz[0] = wz;
                s_wzz[0] = wzz;
            } else {
                for i in group.start..group.end {
                    let z = &self.z_continuous[i * c..(i + 1) * c];
                    let mut eta = base;
                    for k in 0..c {
                        eta += beta_c[k] * z[k];
                    }
                    let (r, w) = group_ll.row(eta, self.labels[i]);
                    s_r += r;
                    s_w += w;
                    for k in 0..c {
                        s_rz[k] += r * z[k];
                        let wz = w * z[k];
                        s_wz[k] += wz;
                        for l in k..c {
                            s_wzz[k * c + l] += wz * z[l];
                        }
                    }
                }
            }

            ll.add(group_ll.value());
            let sr = s_r;
            score[0].add(sr);
            for &j in &self.binary_cols {
                score[j + 1].add(constant[j + 1] * sr);
            }
            for (k, &j) in self.continuous_cols.iter().enumerate() {
                score[j + 1].add(s_rz[k]);
            }

            // dimension -> position among the continuous columns, if any
            let slot = |d: usize| -> Option<usize> {
                if d == 0 {
                    None
                } else {
                    self.continuous_cols.iter().position(|&j| j + 1 == d)
                }
            };
            for a in 0..dim {
                let sa = slot(a);
                for b in a..dim {
                    curv[a * dim + b] += match (sa, slot(b)) {
                        (None, None) => constant[a] * constant[b] * s_w,
                        (None, Some(kb)) => constant[a] * s_wz[kb],
                        (Some(ka), None) => constant[b] * s_wz[ka],
                        (Some(ka), Some(kb)) => s_wzz[ka.min(kb) * c + ka.max(kb)],
                    };
                }
            }
        }
        Pass {
            ll: ll.value(),
            score: score.iter().map(CompensatedSum::value).collect(),
            curvature: curv,
        }
    }

    /// Score with respect to the original-scale coefficients.
    fn original_score(&self, std_score: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(std_score.len());
        out.push(std_score[0]);
        for j in 0..self.means.len() {
            // x = m + z / inv_sd  =>  sum r x = sum r z / inv_sd + m sum r
            out.push(std_score[j + 1] / self.inv_sds[j] + self.means[j] * std_score[0]);
        }
        out
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton_step(pass: &Pass, ridge: f64, iteration: usize) -> Result<DVector<f64>, IrlsError> {
    let dim = pass.score.len();
    let h = DMatrix::from_fn(dim, dim, |i, j| {
        let v = if i <= j {
            pass.curvature[i * dim + j]
        } else {
            pass.curvature[j * dim + i]
        };
        if i == j {
            v + ridge
        } else {
            v
        }
    });
    let chol = h.cholesky().ok_or(IrlsError::Singular(iteration))?;
    Ok(chol.solve(&DVector::from_column_slice(&pass.score)))
}

/// Fits `P(y = 1 | x) = sigmoid(b0 + b'x)`.
pub fn fit_logistic(design: &DesignMatrix, labels: &[u8], opts: &IrlsOptions) -> Result<LogisticFit, IrlsError> {
    let n = design.n_rows();
    if n == 0 {
        return Err(IrlsError::Empty);
    }
    if labels.len() != n {
        return Err(IrlsError::LabelMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(IrlsError::InvalidLabel(i));
    }
    let positives: usize = labels.iter().map(|&y| y as usize).sum();
    if positives == 0 {
        return Err(IrlsError::NoContrast(0));
    }
    if positives == n {
        return Err(IrlsError::NoContrast(1));
    }

    let p = design.n_cols();
    // centering and scaling only condition the problem, so plain sums suffice
    let mut sums = vec![0.0; p];
    for (i, row) in design.rows().enumerate() {
        for (j, x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(IrlsError::NonFinite { row: i, col: j });
            }
            sums[j] += *x;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; p];
    for row in design.rows() {
        for j in 0..p {
            let d = row[j] - means[j];
            sq[j] += d * d;
        }
    }
    let mut inv_sds = Vec::with_capacity(p);
    for j in 0..p {
        let sd = (sq[j] / n as f64).sqrt();
        if sd.is_nan() || sd <= 1e-12 * (1.0 + means[j].abs()) {
            return Err(IrlsError::ConstantColumn(j));
        }
        inv_sds.push(1.0 / sd);
    }

    let problem = Standardized::new(design, labels, means, inv_sds);
    let ybar = positives as f64 / n as f64;
    let mut beta = vec![0.0; problem.dim()];
    beta[0] = (ybar / (1.0 - ybar)).ln();

    let mut current = problem.evaluate(&beta);
    let mut trace = vec![current.ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut previous_small = false;

    for iteration in 1..=opts.max_iterations {
        if max_abs(&problem.original_score(&current.score)) < opts.score_tol {
            converged = true;
            break;
        }
        let step = newton_step(&current, opts.ridge, iteration)?;
        let floor = current.ll - 1e-12 * current.ll.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_step_halvings {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let pass = problem.evaluate(&candidate);
            if pass.ll.is_finite() && pass.ll >= floor {
                accepted = Some((candidate, pass));
                break;
            }
            t *= 0.5;
        }
        let Some((candidate, pass)) = accepted else {
            if !current.ll.is_finite() {
                return Err(IrlsError::Diverged(iteration));
            }
            break;
        };
        let relative = (pass.ll - current.ll).abs() / current.ll.abs().max(f64::MIN_POSITIVE);
        beta = candidate;
        current = pass;
        trace.push(current.ll);
        iterations = iteration;
        let small = relative < opts.relative_ll_tol;
        // one small change can precede a last quadratic-convergence step;
        // two in a row means the iterate has stopped moving
        if small && previous_small {
            converged = true;
            break;
        }
        previous_small = small;
    }

    let score = problem.original_score(&current.score);
    let mut coefficients = Vec::with_capacity(p);
    let mut intercept = beta[0];
    for j in 0..p {
        let b = beta[j + 1] * problem.inv_sds[j];
        intercept -= b * problem.means[j];
        coefficients.push(b);
    }
    Ok(LogisticFit {
        intercept,
        coefficients,
        converged,
        iterations,
        max_abs_score: max_abs(&score),
        log_likelihood: trace,
        std_coefficients: beta,
        means: problem.means,
        inv_sds: problem.inv_sds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic(n: usize, b0: f64, b1: f64, seed: u64) -> (DesignMatrix, Vec<u8>) {
        let mut rng = crate::seed::rng(seed);
        let mut x = DesignMatrix::with_capacity(1, n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f64 = rng.random::<f64>() * 4.0 - 2.0;
            x.push_row(&[v]);
            y.push(u8::from(rng.random::<f64>() < sigmoid(b0 + b1 * v)));
        }
        (x, y)
    }

    #[test]
    fn score_vanishes_at_convergence() {
        let (x, y) = synthetic(4000, -2.0, 0.8, 1);
        let fit = fit_logistic(&x, &y, &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        let (mut s0, mut s1) = (0.0, 0.0);
        for (row, &yi) in x.rows().zip(&y) {
            let r = f64::from(yi) - sigmoid(fit.intercept + fit.coefficients[0] * row[0]);
            s0 += r;
            s1 += r * row[0];
        }
        assert!(s0.abs() < 1e-6 && s1.abs() < 1e-6, "{s0} {s1}");
        assert!(fit.max_abs_score < 1e-6);
    }

    #[test]
    fn likelihood_never_decreases() {
        let (x, y) = synthetic(3000, 1.0, -1.5, 2);
        let fit = fit_logistic(&x, &y, &IrlsOptions::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        assert!(fit.iterations >= 2);
    }

    #[test]
    fn degenerate_inputs() {
        let x = DesignMatrix::from_rows(1, &[vec![1.0], vec![2.0]]);
        assert_eq!(
            fit_logistic(&x, &[1, 1], &IrlsOptions::default()),
            Err(IrlsError::NoContrast(1))
        );
        assert!(matches!(
            fit_logistic(&x, &[1], &IrlsOptions::default()),
            Err(IrlsError::LabelMismatch { .. })
        ));
        let c = DesignMatrix::from_rows(1, &[vec![3.0], vec![3.0], vec![3.0]]);
        assert_eq!(
            fit_logistic(&c, &[1, 0, 1], &IrlsOptions::default()),
            Err(IrlsError::ConstantColumn(0))
        );
        let e = DesignMatrix::with_capacity(2, 0);
        assert_eq!(fit_logistic(&e, &[], &IrlsOptions::default()), Err(IrlsError::Empty));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (x, y) = synthetic(2000, 0.5, 3.0, 3);
        let opts = IrlsOptions {
            max_iterations: 2,
            ..IrlsOptions::default()
        };
        let fit = fit_logistic(&x, &y, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
        assert!(fit.max_abs_score > opts.score_tol);
    }
}
