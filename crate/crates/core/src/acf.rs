//! Control-function production-function estimator and the productivity
//! grouping built on it.
//!
//! The estimator proceeds in two stages. The first stage projects log output
//! on a complete polynomial in the log factors plus time dummies; the fitted
//! value Φ̂ absorbs everything output responds to except noise, so the
//! residual purges measurement error. The second stage picks the factor
//! elasticities β so that the innovation of the implied productivity series
//! ω(β) = Φ̂ − β'x, under an AR(1) law of motion, is orthogonal to inputs
//! dated early enough to be uncorrelated with that innovation: current
//! capital and labor (decided before the productivity shock lands) and
//! lagged freely-adjusting inputs.
//!
//! The recovered productivity level `exp(y − β̂'x)` keeps the unit's fixed
//! component and is used only for *ranking*: farms are scored by their
//! median productivity and split into Low / Medium / High terciles within
//! each country.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::panel::PanelDataset;

/// Canonical log-factor columns, in order.
const ALL_FACTORS: [&str; 5] = ["k", "l", "n", "m", "g"];

/// Settings for the two-stage control-function estimator.
#[derive(Clone, Debug)]
pub struct AcfConfig {
    /// Order of the complete polynomial in the first-stage projection.
    pub poly_degree: usize,
    /// Whether subsidies (g) enter the factor list. They are a declared
    /// production factor in the main specification, so the default keeps
    /// them; switch off to probe sensitivity.
    pub include_g: bool,
    /// Second-stage instruments as (column, lag) pairs. The default is
    /// current k and l plus the first lags of n, m, g: each is dated before
    /// the current productivity innovation under the timing assumptions.
    pub instruments: Vec<(String, u32)>,
    /// Simplex convergence tolerance for the criterion minimization.
    pub tolerance: f64,
    /// Iteration cap per start.
    pub max_iter: usize,
    /// Number of multistart points for the criterion search.
    pub n_starts: usize,
    /// Relative coordinate spread of the random starts around the center.
    pub start_spread: f64,
    /// Search box: candidates with any |β_j| beyond this are rejected.
    /// Log-log elasticities are O(1); the exactly-identified moment system
    /// has additional exact roots at large coefficients (where the implied
    /// productivity is dominated by a self-predictable input combination),
    /// and the box keeps the search away from them.
    pub max_abs_beta: f64,
    /// Center of the multistart cloud, ordered like the factor list. This
    /// is normally the minimum-distance elasticities from the dynamic-panel
    /// step; when absent, the slopes of a degree-1 first stage are used.
    pub start_beta: Option<Vec<f64>>,
    /// Seed for the start-point perturbations (the search is deterministic
    /// given the config).
    pub seed: u64,
}

impl Default for AcfConfig {
    fn default() -> Self {
        Self {
            poly_degree: 3,
            include_g: true,
            instruments: default_instruments(true),
            tolerance: 1e-10,
            max_iter: 2000,
            n_starts: 8,
            start_spread: 0.5,
            max_abs_beta: 3.0,
            start_beta: None,
            seed: 0,
        }
    }
}

/// The default instrument set for a factor list with or without g.
pub fn default_instruments(include_g: bool) -> Vec<(String, u32)> {
    let mut v = vec![
        ("k".to_string(), 0),
        ("l".to_string(), 0),
        ("n".to_string(), 1),
        ("m".to_string(), 1),
    ];
    if include_g {
        v.push(("g".to_string(), 1));
    }
    v
}

impl AcfConfig {
    /// Factor list implied by the configuration.
    pub fn factors(&self) -> Vec<String> {
        ALL_FACTORS
            .iter()
            .filter(|f| self.include_g || **f != "g")
            .map(|f| f.to_string())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.poly_degree) {
            return Err(Error::config("poly_degree must be between 1 and 4"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return Err(Error::config("max_iter and n_starts must be at least 1"));
        }
        if !(self.max_abs_beta > 0.0) {
            return Err(Error::config("max_abs_beta must be positive"));
        }
        let n_factors = self.factors().len();
        if self.instruments.len() < n_factors {
            return Err(Error::config(format!(
                "{} instruments cannot identify {} elasticities",
                self.instruments.len(),
                n_factors
            )));
        }
        if let Some(b) = &self.start_beta {
            if b.len() != n_factors {
                return Err(Error::config(format!(
                    "start_beta has {} entries for {} factors",
                    b.len(),
                    n_factors
                )));
            }
        }
        Ok(())
    }
}

/// First-stage projection of log output on the polynomial series.
#[derive(Clone, Debug)]
pub struct FirstStage {
    /// Factor columns the polynomial was built from.
    pub factors: Vec<String>,
    /// Design column labels: constant, year dummies, then polynomial terms.
    pub term_labels: Vec<String>,
    /// Coefficients in `term_labels` order (used to predict Φ̂ on rows
    /// outside the estimation sample).
    pub coefficients: DVector<f64>,
    /// Fitted Φ̂ per dataset row; absent where a factor or output is missing.
    pub phi: Vec<Option<f64>>,
    /// Purged residual y − Φ̂ per dataset row.
    pub residuals: Vec<Option<f64>>,
    /// R² over the estimation sample; absent when output has no variance.
    pub r_squared: Option<f64>,
    /// Whether each row entered the projection. Units without a single
    /// pair of consecutive complete years contribute no second-stage
    /// moments, so they are excluded here too: dropping them must not move
    /// the estimate.
    pub in_sample: Vec<bool>,
    pub poly_degree: usize,
}

/// One multistart search outcome, kept for transparency: spurious local
/// minima show up as converged starts with distinct criterion values.
#[derive(Clone, Debug)]
pub struct StartReport {
    pub start: Vec<f64>,
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Second-stage estimate and the productivity levels derived from it.
#[derive(Clone, Debug)]
pub struct AcfFit {
    pub factor_names: Vec<String>,
    /// Factor elasticities, ordered like `factor_names`.
    pub beta: Vec<f64>,
    /// AR(1) coefficient of the recovered productivity series at β̂.
    pub rho: f64,
    /// Final value of the moment criterion.
    pub objective_value: f64,
    pub first_stage: FirstStage,
    /// Productivity level exp(y − β̂'x) per dataset row, fixed component
    /// included; absent where output or a factor is missing.
    pub tfp_acf: Vec<Option<f64>>,
    /// All multistart outcomes, best first.
    pub trace: Vec<StartReport>,
}

/// Complete-polynomial exponent sets of total degree 1..=d over `v`
/// variables, as non-decreasing index sequences (degree-major, then
/// lexicographic).
fn monomials(v: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn extend(v: usize, left: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(current.clone());
            return;
        }
        for i in start..v {
            current.push(i);
            extend(v, left - 1, i, current, out);
            current.pop();
        }
    }
    for degree in 1..=d {
        extend(v, degree, 0, &mut current, &mut out);
    }
    out
}

fn monomial_label(indices: &[usize], names: &[String]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < indices.len() {
        let var = indices[i];
        let mut power = 0;
        while i < indices.len() && indices[i] == var {
            power += 1;
            i += 1;
        }
        if power == 1 {
            parts.push(names[var].clone());
        } else {
            parts.push(format!("{}^{}", names[var], power));
        }
    }
    parts.join("*")
}

/// Rows with output and every factor present, plus the within-unit
/// consecutive-year pair index the second stage runs on.
struct UsableRows {
    /// Complete rows, per dataset row.
    complete: Vec<bool>,
    /// (row at t−1, row at t) with both complete and years adjacent.
    pairs: Vec<(usize, usize)>,
    /// Units owning at least one pair.
    contributing_units: Vec<bool>,
}

fn scan_rows(ds: &PanelDataset, factors: &[String]) -> Result<UsableRows> {
    let y = ds.column("y")?;
    let cols: Vec<&[Option<f64>]> =
        factors.iter().map(|f| ds.column(f)).collect::<Result<_>>()?;
    let n = ds.n_rows();
    let mut complete = vec![false; n];
    for r in 0..n {
        complete[r] = y[r].is_some() && cols.iter().all(|c| c[r].is_some());
    }
    let years = ds.years();
    let mut pairs = Vec::new();
    let mut contributing_units = vec![false; ds.n_units()];
    for u in 0..ds.n_units() {
        let (lo, hi) = ds.unit_range(u);
        for r in lo + 1..hi {
            if complete[r] && complete[r - 1] && years[r] == years[r - 1] + 1 {
                pairs.push((r - 1, r));
                contributing_units[u] = true;
            }
        }
    }
    Ok(UsableRows { complete, pairs, contributing_units })
}

/// Least-squares projection of log output on a complete polynomial of
/// degree `cfg.poly_degree` in the log factors, plus time dummies and a
/// constant.
///
/// The estimation sample is the complete rows of units that contribute at
/// least one consecutive-year pair (others carry no second-stage
/// information). Fitted values are still predicted for every complete row.
pub fn acf_first_stage(ds: &PanelDataset, cfg: &AcfConfig) -> Result<FirstStage> {
    cfg.validate()?;
    let factors = cfg.factors();
    let usable = scan_rows(ds, &factors)?;
    let y = ds.column("y")?;
    let cols: Vec<&[Option<f64>]> =
        factors.iter().map(|f| ds.column(f)).collect::<Result<_>>()?;

    let sample: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| usable.complete[r] && usable.contributing_units[ds.row_units()[r]])
        .collect();
    if sample.len() < factors.len() + 2 {
        return Err(Error::data(format!(
            "{} usable rows cannot support the first-stage projection",
            sample.len()
        )));
    }

    // dummy years from the sample, first year as the base
    let years = ds.years();
    let mut dummy_years: Vec<i32> = sample.iter().map(|&r| years[r]).collect();
    dummy_years.sort_unstable();
    dummy_years.dedup();
    dummy_years.remove(0);

    let monos = monomials(factors.len(), cfg.poly_degree);
    let mut term_labels = vec!["const".to_string()];
    term_labels.extend(dummy_years.iter().map(|t| format!("yr{t}")));
    term_labels.extend(monos.iter().map(|m| monomial_label(m, &factors)));

    // design value of term `j` on dataset row `r`
    let term_value = |j: usize, r: usize| -> f64 {
        if j == 0 {
            return 1.0;
        }
        if j <= dummy_years.len() {
            return if years[r] == dummy_years[j - 1] { 1.0 } else { 0.0 };
        }
        let mono = &monos[j - 1 - dummy_years.len()];
        mono.iter().map(|&v| cols[v][r].unwrap()).product()
    };

    let p = term_labels.len();
    let rows = sample.len();
    let mut x = DMatrix::zeros(rows, p);
    let mut yv = DVector::zeros(rows);
    for (i, &r) in sample.iter().enumerate() {
        for j in 0..p {
            x[(i, j)] = term_value(j, r);
        }
        yv[i] = y[r].unwrap();
    }

    // Modified Gram-Schmidt with reorthogonalization: produces Q
    // (orthonormal) and R (triangular) and names any column that is
    // linearly dependent on its predecessors.
    let mut q = DMatrix::zeros(rows, p);
    let mut rmat = DMatrix::zeros(p, p);
    let mut collinear: Vec<String> = Vec::new();
    for j in 0..p {
        let mut v = x.column(j).clone_owned();
        let scale = v.norm();
        for _pass in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&v);
                rmat[(i, j)] += c;
                v -= c * q.column(i);
            }
        }
        let nrm = v.norm();
        if nrm <= scale * 1e-9 {
            collinear.push(term_labels[j].clone());
            rmat[(j, j)] = 0.0;
        } else {
            rmat[(j, j)] = nrm;
            q.set_column(j, &(v / nrm));
        }
    }
    if !collinear.is_empty() {
        return Err(Error::numeric(format!(
            "first-stage design is rank deficient; collinear terms: {}",
            collinear.join(", ")
        )));
    }

    // coefficients by back substitution through R
    let qty = q.transpose() * &yv;
    let mut coef = DVector::zeros(p);
    for j in (0..p).rev() {
        let mut s = qty[j];
        for i in j + 1..p {
            s -= rmat[(j, i)] * coef[i];
        }
        coef[j] = s / rmat[(j, j)];
    }

    // fitted values for every complete row, residuals alongside
    let mut phi = vec![None; ds.n_rows()];
    let mut residuals = vec![None; ds.n_rows()];
    for r in 0..ds.n_rows() {
        if !usable.complete[r] {
            continue;
        }
        let mut f = 0.0;
        for j in 0..p {
            f += coef[j] * term_value(j, r);
        }
        phi[r] = Some(f);
        residuals[r] = Some(y[r].unwrap() - f);
    }

    let mean = yv.sum() / rows as f64;
    let sst: f64 = yv.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ssr: f64 = sample
        .iter()
        .map(|&r| {
            let e = residuals[r].unwrap();
            e * e
        })
        .sum();
    let r_squared = if sst > 0.0 { Some(1.0 - ssr / sst) } else { None };

    let mut in_sample = vec![false; ds.n_rows()];
    for &r in &sample {
        in_sample[r] = true;
    }
    Ok(FirstStage {
        factors,
        term_labels,
        coefficients: coef,
        phi,
        residuals,
        r_squared,
        in_sample,
        poly_degree: cfg.poly_degree,
    })
}

/// Cross-moment tables that let the criterion be evaluated in O(factors²)
/// per candidate instead of a pass over the data. With a = (Φ̂_t, x_t) and
/// b = (Φ̂_{t−1}, x_{t−1}), the productivity values are ω_t = w'a and
/// ω_{t−1} = w'b for w = (1, −β), so every regression and moment the
/// criterion needs is bilinear in w.
struct MomentTables {
    s_aa: DMatrix<f64>,
    s_bb: DMatrix<f64>,
    s_ab: DMatrix<f64>,
    s_a: DVector<f64>,
    s_b: DVector<f64>,
    z_a: DMatrix<f64>,
    z_b: DMatrix<f64>,
    s_z: DVector<f64>,
    n: f64,
}

impl MomentTables {
    /// (criterion, ρ̂, intercept) at candidate elasticities.
    ///
    /// The criterion is the squared norm of the mean innovation × instrument
    /// moments divided by the innovation variance. The division makes the
    /// criterion invariant to the scale of the implied productivity series:
    /// without it, any candidate that shrinks ω(β) toward a degenerate
    /// series (for example by stripping the common productivity component
    /// out of all inputs that share it) drives the raw moments to zero
    /// through σ_ξ → 0 and masquerades as a perfect fit.
    fn evaluate(&self, beta: &[f64]) -> (f64, f64, f64) {
        let k = self.s_a.len();
        let mut w = DVector::zeros(k);
        w[0] = 1.0;
        for (i, b) in beta.iter().enumerate() {
            w[i + 1] = -b;
        }
        let mean_a = w.dot(&self.s_a) / self.n;
        let mean_b = w.dot(&self.s_b) / self.n;
        let var_a = (w.transpose() * &self.s_aa * &w)[(0, 0)] / self.n - mean_a * mean_a;
        let cross = (w.transpose() * &self.s_ab * &w)[(0, 0)] / self.n - mean_a * mean_b;
        let var_b = (w.transpose() * &self.s_bb * &w)[(0, 0)] / self.n - mean_b * mean_b;
        let scale = (w.transpose() * &self.s_bb * &w)[(0, 0)].abs() / self.n;
        if !(var_b > scale * 1e-12) {
            // lagged productivity has no variance at this candidate: the
            // AR(1) projection is undefined, treat as out of bounds
            return (f64::INFINITY, f64::NAN, f64::NAN);
        }
        let rho = cross / var_b;
        let intercept = mean_a - rho * mean_b;
        let resid_var = var_a - rho * cross;
        if !(resid_var > scale * 1e-12) {
            // perfectly self-predictable productivity: same degeneracy
            return (f64::INFINITY, f64::NAN, f64::NAN);
        }
        let m = (&self.z_a * &w - rho * (&self.z_b * &w) - intercept * &self.s_z) / self.n;
        (m.dot(&m) / resid_var, rho, intercept)
    }
}

fn build_tables(
    ds: &PanelDataset,
    first_stage: &FirstStage,
    cfg: &AcfConfig,
) -> Result<MomentTables> {
    let factors = &first_stage.factors;
    let cols: Vec<&[Option<f64>]> =
        factors.iter().map(|f| ds.column(f)).collect::<Result<_>>()?;
    let z_cols: Vec<&[Option<f64>]> = cfg
        .instruments
        .iter()
        .map(|(name, _)| ds.column(name))
        .collect::<Result<_>>()?;

    let usable = scan_rows(ds, factors)?;
    let years = ds.years();
    let row_units = ds.row_units();
    let k = 1 + factors.len();
    let q = cfg.instruments.len();
    let mut t = MomentTables {
        s_aa: DMatrix::zeros(k, k),
        s_bb: DMatrix::zeros(k, k),
        s_ab: DMatrix::zeros(k, k),
        s_a: DVector::zeros(k),
        s_b: DVector::zeros(k),
        z_a: DMatrix::zeros(q, k),
        z_b: DMatrix::zeros(q, k),
        s_z: DVector::zeros(q),
        n: 0.0,
    };

    let mut a = DVector::zeros(k);
    let mut b = DVector::zeros(k);
    let mut z = DVector::zeros(q);
    'pairs: for &(r_prev, r) in &usable.pairs {
        // instruments at their declared lags; a pair without them carries
        // no moment
        for (j, (_, lag)) in cfg.instruments.iter().enumerate() {
            let target = years[r] - *lag as i32;
            let Some(zr) = ds.row_for_year(row_units[r], target) else {
                continue 'pairs;
            };
            let Some(v) = z_cols[j][zr] else {
                continue 'pairs;
            };
            z[j] = v;
        }
        a[0] = first_stage.phi[r].ok_or_else(|| Error::numeric("missing fitted value"))?;
        b[0] = first_stage.phi[r_prev].ok_or_else(|| Error::numeric("missing fitted value"))?;
        for (i, c) in cols.iter().enumerate() {
            a[i + 1] = c[r].unwrap();
            b[i + 1] = c[r_prev].unwrap();
        }
        t.s_aa += &a * a.transpose();
        t.s_bb += &b * b.transpose();
        t.s_ab += &a * b.transpose();
        t.s_a += &a;
        t.s_b += &b;
        t.z_a += &z * a.transpose();
        t.z_b += &z * b.transpose();
        t.s_z += &z;
        t.n += 1.0;
    }
    if t.n < (k + q) as f64 {
        return Err(Error::data(format!(
            "only {} consecutive-year pairs with instruments; too few for the moment criterion",
            t.n
        )));
    }
    Ok(t)
}

/// Minimize the moment criterion over the elasticities by multistart
/// simplex search and recover the productivity levels.
///
/// For each candidate β the productivity series ω(β) = Φ̂ − β'x is
/// projected on its own lag (with intercept); the criterion is the squared
/// norm of the sample mean of innovation × instrument. The identity
/// weighting keeps the exactly-identified default sharp: at the solution
/// every moment is zero up to the solver tolerance.
pub fn acf_second_stage(
    ds: &PanelDataset,
    first_stage: &FirstStage,
    cfg: &AcfConfig,
) -> Result<AcfFit> {
    cfg.validate()?;
    if first_stage.factors != cfg.factors() {
        return Err(Error::config("first stage was built for a different factor list"));
    }
    let tables = build_tables(ds, first_stage, cfg)?;
    let n_factors = first_stage.factors.len();

    // multistart center: caller-provided elasticities, else the linear
    // slopes of a degree-1 projection
    let center: Vec<f64> = match &cfg.start_beta {
        Some(b) => b.clone(),
        None => {
            let linear = if first_stage.poly_degree == 1 {
                first_stage.clone()
            } else {
                acf_first_stage(ds, &AcfConfig { poly_degree: 1, ..cfg.clone() })?
            };
            let offset = linear.term_labels.len() - n_factors;
            (0..n_factors).map(|i| linear.coefficients[offset + i]).collect()
        }
    };
    let typical = center.iter().map(|c| c.abs()).sum::<f64>() / n_factors as f64;

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let opts = NelderMeadOptions {
        max_iter: cfg.max_iter,
        tolerance: cfg.tolerance,
        initial_step: 0.1,
    };
    let objective = |beta: &[f64]| {
        if beta.iter().any(|b| b.abs() > cfg.max_abs_beta) {
            return f64::INFINITY;
        }
        tables.evaluate(beta).0
    };
    let mut trace: Vec<StartReport> = Vec::with_capacity(cfg.n_starts);
    for s in 0..cfg.n_starts {
        let start: Vec<f64> = if s == 0 {
            center.clone()
        } else {
            center
                .iter()
                .map(|&c| {
                    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    c + cfg.start_spread * c.abs().max(0.2 * typical) * u
                })
                .collect()
        };
        let min = nelder_mead(objective, &start, &opts);
        trace.push(StartReport {
            start,
            minimizer: min.point,
            value: min.value,
            iterations: min.iterations,
            converged: min.converged,
        });
    }
    trace.sort_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(a.value.total_cmp(&b.value))
    });
    // An exactly identified moment system can have several exact roots.
    // When more than one converged start reaches the bottom of the
    // criterion, prefer the root nearest the multistart center: the center
    // comes from an estimator that is consistent for the same elasticities,
    // so the economically relevant root is the one in its neighbourhood.
    let dist2 = |p: &[f64]| -> f64 {
        p.iter()
            .zip(&center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum()
    };
    let floor = trace[0].value;
    let window = floor + 1e-6 * (1.0 + floor.abs());
    let n_tied = trace
        .iter()
        .take_while(|r| r.converged && r.value <= window)
        .count();
    trace[..n_tied].sort_by(|a, b| dist2(&a.minimizer).total_cmp(&dist2(&b.minimizer)));
    let best = &trace[0];
    if !best.converged {
        let lines: Vec<String> = trace
            .iter()
            .map(|r| {
                format!(
                    "start {:?} -> value {:.3e} after {} iterations",
                    r.start, r.value, r.iterations
                )
            })
            .collect();
        return Err(Error::numeric(format!(
            "criterion search did not converge from any start; best candidate {:?} (criterion {:.3e});\n{}",
            best.minimizer,
            best.value,
            lines.join("\n")
        )));
    }

    let beta = best.minimizer.clone();
    let (objective_value, rho, _intercept) = tables.evaluate(&beta);

    // productivity level with the fixed component kept in
    let y = ds.column("y")?;
    let cols: Vec<&[Option<f64>]> = first_stage
        .factors
        .iter()
        .map(|f| ds.column(f))
        .collect::<Result<_>>()?;
    let mut tfp_acf = vec![None; ds.n_rows()];
    for r in 0..ds.n_rows() {
        let Some(yr) = y[r] else { continue };
        let mut bx = 0.0;
        let mut ok = true;
        for (i, c) in cols.iter().enumerate() {
            match c[r] {
                Some(v) => bx += beta[i] * v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            tfp_acf[r] = Some((yr - bx).exp());
        }
    }

    Ok(AcfFit {
        factor_names: first_stage.factors.clone(),
        beta,
        rho,
        objective_value,
        first_stage: first_stage.clone(),
        tfp_acf,
        trace,
    })
}

/// Evaluate the second-stage criterion at one candidate without running the
/// search: landscape inspection, root verification, trace audits.
pub fn acf_criterion(
    ds: &PanelDataset,
    first_stage: &FirstStage,
    cfg: &AcfConfig,
    beta: &[f64],
) -> Result<f64> {
    cfg.validate()?;
    if beta.len() != first_stage.factors.len() {
        return Err(Error::config(format!(
            "candidate has {} coefficients for {} factors",
            beta.len(),
            first_stage.factors.len()
        )));
    }
    let tables = build_tables(ds, first_stage, cfg)?;
    Ok(tables.evaluate(beta).0)
}

/// Convenience wrapper running both stages.
pub fn estimate_acf(ds: &PanelDataset, cfg: &AcfConfig) -> Result<AcfFit> {
    let first = acf_first_stage(ds, cfg)?;
    acf_second_stage(ds, &first, cfg)
}

/// Productivity tercile of a farm within its country.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    Low,
    Medium,
    High,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Low => "Low",
            Group::Medium => "Medium",
            Group::High => "High",
        }
    }
}

/// One farm's score and assigned group.
#[derive(Clone, Debug)]
pub struct FarmScore {
    pub unit: String,
    pub country: String,
    /// Median productivity level over the farm's years.
    pub score: f64,
    pub group: Group,
}

/// Per-unit grouping, ordered like the dataset's units.
#[derive(Clone, Debug)]
pub struct GroupTable {
    pub rows: Vec<FarmScore>,
}

impl GroupTable {
    pub fn group_of(&self, unit: &str) -> Option<Group> {
        self.rows.iter().find(|r| r.unit == unit).map(|r| r.group)
    }

    /// Units per (country, group).
    pub fn counts(&self) -> BTreeMap<(String, Group), usize> {
        let mut map = BTreeMap::new();
        for r in &self.rows {
            *map.entry((r.country.clone(), r.group)).or_insert(0) += 1;
        }
        map
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Score each farm by its median productivity and split farms into
/// Low / Medium / High terciles within each country.
///
/// The cut points are the empirical 1/3 and 2/3 quantiles (order statistic
/// at ceil(n·p)); scores tied with a cut point go to the lower group, so
/// membership depends only on ranks and any strictly monotone transform of
/// the scores leaves the grouping unchanged.
pub fn classify_groups(ds: &PanelDataset, tfp_acf: &[Option<f64>]) -> Result<GroupTable> {
    if tfp_acf.len() != ds.n_rows() {
        return Err(Error::config("productivity series does not match the dataset rows"));
    }
    let countries = ds.text_column("country")?;

    let mut scores: Vec<(String, String, f64)> = Vec::with_capacity(ds.n_units());
    for u in 0..ds.n_units() {
        let (lo, hi) = ds.unit_range(u);
        let mut values: Vec<f64> = (lo..hi).filter_map(|r| tfp_acf[r]).collect();
        if values.is_empty() {
            return Err(Error::data(format!(
                "unit `{}` has no productivity values to score",
                ds.unit_id(u)
            )));
        }
        values.sort_by(f64::total_cmp);
        scores.push((
            ds.unit_id(u).to_string(),
            countries[lo].clone(),
            median(&values),
        ));
    }

    // within-country cut points
    let mut by_country: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (_, country, score) in &scores {
        by_country.entry(country).or_default().push(*score);
    }
    let mut cuts: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (country, mut vals) in by_country {
        let n = vals.len();
        if n < 3 {
            return Err(Error::data(format!(
                "country `{country}` has {n} farms; three groups need at least 3"
            )));
        }
        vals.sort_by(f64::total_cmp);
        // order statistics at ceil(n/3) and ceil(2n/3), 1-based
        let q1 = vals[(n + 2) / 3 - 1];
        let q2 = vals[(2 * n + 2) / 3 - 1];
        cuts.insert(country.to_string(), (q1, q2));
    }

    let rows = scores
        .into_iter()
        .map(|(unit, country, score)| {
            let (q1, q2) = cuts[&country];
            let group = if score <= q1 {
                Group::Low
            } else if score <= q2 {
                Group::Medium
            } else {
                Group::High
            };
            FarmScore { unit, country, score, group }
        })
        .collect();
    Ok(GroupTable { rows })
}
