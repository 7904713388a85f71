//! Production-function estimation and TFP recovery.
//!
//! The output elasticity system is estimated in its dynamic unrestricted
//! form: output regressed on its own lag and on each factor at t and t-1,
//! with year dummies and a levels constant. The unrestricted coefficients
//! obey a common-factor restriction (each factor's lagged coefficient equals
//! minus the persistence times its current one); [`minimum_distance`]
//! imposes it to recover the structural elasticities and the persistence.
//! [`compute_tfp`] then forms the Solow residual in levels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{
    ar_test, sargan, sargan_one_step, wald_coefficients, wald_time, TestResult,
};
use crate::error::{Error, Result};
use crate::gmm::{estimate_one_step, estimate_two_step, windmeijer_correct, GmmFit, ModelSpec};
use crate::instruments::{
    assemble_system, build_difference_instruments, build_level_instruments, InstrumentSpec,
    VariableInstrument,
};
use crate::linalg::{inv_psd, pinv_psd, symmetrize, RANK_REL_TOL};
use crate::panel::{PanelDataset, TransformState};

/// Canonical factor order; fixed so that coefficient positions line up with
/// the unrestricted-coefficient indexing everywhere.
pub const FACTORS: [&str; 5] = ["k", "l", "n", "m", "g"];

/// The assembled estimation recipe for the production function.
#[derive(Clone, Debug)]
pub struct ProductionSpec {
    /// Log output column.
    pub output: String,
    /// Log factor columns, always (k, l, n, m, g).
    pub factors: Vec<String>,
    /// Text column carrying the country code (used for TFP reporting).
    pub country_column: String,
    pub model: ModelSpec,
    pub instruments: InstrumentSpec,
}

/// Unrestricted coefficient estimates with their covariance.
///
/// `substantive` names, in order, the persistence slot (lagged output) and
/// the (current, lagged) pair per factor — the part that the common-factor
/// restriction constrains. Dummies and the constant ride along in
/// `labels`/`values` but stay out of the restriction.
#[derive(Clone, Debug)]
pub struct PiVector {
    pub labels: Vec<String>,
    pub values: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub substantive: Vec<String>,
}

impl PiVector {
    /// Indices of the substantive coefficients inside `labels`.
    fn substantive_indices(&self) -> Result<Vec<usize>> {
        self.substantive
            .iter()
            .map(|s| {
                self.labels
                    .iter()
                    .position(|l| l == s)
                    .ok_or_else(|| Error::config(format!("coefficient `{s}` missing from fit")))
            })
            .collect()
    }
}

/// A fitted unrestricted production function: coefficients plus the
/// specification-test battery.
#[derive(Clone, Debug)]
pub struct ProductionFit {
    pub pi: PiVector,
    pub fit: GmmFit,
    pub tests: Vec<TestResult>,
    pub warnings: Vec<String>,
}

/// Structural parameters recovered by minimum distance.
#[derive(Clone, Debug)]
pub struct MdResult {
    pub factor_names: Vec<String>,
    /// Elasticities, ordered like `factor_names`.
    pub beta: Vec<f64>,
    /// Productivity persistence.
    pub rho: f64,
    /// Minimized quadratic distance (chi-square-ish under the restriction).
    pub distance: f64,
    /// Covariance of (beta..., rho).
    pub vcov_theta: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl MdResult {
    /// (estimate, standard error) for one factor's elasticity.
    pub fn elasticity(&self, factor: &str) -> Option<(f64, f64)> {
        let i = self.factor_names.iter().position(|f| f == factor)?;
        Some((self.beta[i], self.vcov_theta[(i, i)].max(0.0).sqrt()))
    }

    pub fn rho_std_error(&self) -> f64 {
        let i = self.factor_names.len();
        self.vcov_theta[(i, i)].max(0.0).sqrt()
    }
}

/// TFP levels per observation plus per-country yearly means.
#[derive(Clone, Debug)]
pub struct TfpSeries {
    pub units: Vec<String>,
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    /// Level TFP, strictly positive.
    pub values: Vec<f64>,
    pub yearly_means: Vec<YearlyMean>,
}

/// Arithmetic mean of TFP over the observations of one country-year.
#[derive(Clone, Debug, PartialEq)]
pub struct YearlyMean {
    pub country: String,
    pub year: i32,
    pub mean: f64,
    pub count: usize,
}

/// Build the default estimation recipe and attach the lag columns it needs.
///
/// Requires logged columns y, k, l, n, m, g. Classification defaults:
/// lagged output instruments from lag 2; capital and labor are treated as
/// state variables (predetermined, instruments from lag 1); intermediate
/// inputs n, m, g respond to current productivity (endogenous, instruments
/// from lag 2). Set `collapse` to cap instrument counts on small panels.
pub fn build_production_spec(
    ds: &PanelDataset,
    collapse: bool,
) -> Result<(PanelDataset, ProductionSpec)> {
    for name in ["y", "k", "l", "n", "m", "g"] {
        let info = ds
            .variable_info(name)
            .ok_or_else(|| Error::data(format!("missing required variable `{name}`")))?;
        if info.state != TransformState::Logged {
            return Err(Error::data(format!(
                "variable `{name}` must be in logs before estimation"
            )));
        }
    }
    ds.text_column("country")?;

    let mut augmented = ds.clone();
    let mut regressors = vec!["y_lag_1".to_string()];
    for name in std::iter::once("y").chain(FACTORS) {
        let lagged = format!("{name}_lag_1");
        if !augmented.has_column(&lagged) {
            augmented = augmented.lag(name, 1)?;
        }
        if name != "y" {
            regressors.push(name.to_string());
            regressors.push(lagged);
        }
    }

    let model = ModelSpec {
        dependent: "y".to_string(),
        regressors,
        time_dummies: true,
        constant_in_levels: true,
    };
    let maybe_collapse = |vi: VariableInstrument| if collapse { vi.collapsed() } else { vi };
    let instruments = InstrumentSpec {
        variables: vec![
            ("y".to_string(), maybe_collapse(VariableInstrument::predetermined().with_lags(2, Some(3)))),
            ("k".to_string(), maybe_collapse(VariableInstrument::predetermined())),
            ("l".to_string(), maybe_collapse(VariableInstrument::predetermined())),
            ("n".to_string(), maybe_collapse(VariableInstrument::endogenous())),
            ("m".to_string(), maybe_collapse(VariableInstrument::endogenous())),
            ("g".to_string(), maybe_collapse(VariableInstrument::endogenous())),
        ],
        include_time_dummies: true,
    };
    let spec = ProductionSpec {
        output: "y".to_string(),
        factors: FACTORS.iter().map(|s| s.to_string()).collect(),
        country_column: "country".to_string(),
        model,
        instruments,
    };
    Ok((augmented, spec))
}

/// The substantive coefficient labels in unrestricted order: lagged output,
/// then (current, lagged) per factor.
fn substantive_labels(spec: &ProductionSpec) -> Vec<String> {
    let mut labels = vec![format!("{}_lag_1", spec.output)];
    for f in &spec.factors {
        labels.push(f.clone());
        labels.push(format!("{f}_lag_1"));
    }
    labels
}

/// Estimate the unrestricted dynamic form: two-step system estimation with
/// the finite-sample covariance correction, plus the specification battery
/// (overidentification both ways, serial correlation orders 1 and 2, Wald
/// on coefficients and on time dummies).
pub fn estimate_pi(ds: &PanelDataset, spec: &ProductionSpec) -> Result<ProductionFit> {
    let diff = build_difference_instruments(ds, &spec.instruments, &spec.model)?;
    let level = build_level_instruments(ds, &spec.instruments, &spec.model)?;
    let z = assemble_system(&diff, &level)?;

    let fit1 = estimate_one_step(ds, &spec.model, &z)?;
    let fit2 = estimate_two_step(fit1, ds, &spec.model, &z)?;
    let fit = windmeijer_correct(fit2, ds, &spec.model, &z)?;

    let tests = vec![
        sargan(&fit, &z)?,
        sargan_one_step(&fit, &z)?,
        ar_test(&fit, 1)?,
        ar_test(&fit, 2)?,
        wald_coefficients(&fit)?,
        wald_time(&fit)?,
    ];

    let pi = PiVector {
        labels: fit.labels.clone(),
        values: fit.coefficients.clone(),
        vcov: fit.vcov().clone(),
        substantive: substantive_labels(spec),
    };
    let warnings = fit.warnings.clone();
    Ok(ProductionFit { pi, fit, tests, warnings })
}

/// Impose the common-factor restriction by minimum distance.
///
/// Writing pi1 for the lagged-output coefficient and, per factor, (pi_c,
/// pi_l) for the current and lagged coefficients, the transformed moments
/// `g = (pi_c, -pi_l/pi1, ..., pi1)` all equal `(beta, beta, ..., rho)`
/// under the restriction, which is linear in (beta, rho). The weighting is
/// the delta-method covariance of g, so the minimizer is a closed-form
/// weighted least-squares solve; its value is the reported distance.
pub fn minimum_distance(pi: &PiVector) -> Result<MdResult> {
    let idx = pi.substantive_indices()?;
    let q = idx.len(); // 1 + 2 per factor
    if q < 3 || q % 2 == 0 {
        return Err(Error::config(format!(
            "common-factor mapping needs coefficients (lagged output + pairs), got {q}"
        )));
    }
    let n_factors = (q - 1) / 2;
    let pi1 = pi.values[idx[0]];
    if pi1.abs() < 1e-8 {
        return Err(Error::numeric(
            "persistence coefficient too close to zero for common-factor mapping",
        ));
    }

    // substantive sub-vector and sub-covariance, in canonical order
    let sub = DVector::from_fn(q, |r, _| pi.values[idx[r]]);
    let vsub = DMatrix::from_fn(q, q, |r, c| pi.vcov[(idx[r], idx[c])]);

    // transformed moments g and their Jacobian in the substantive ordering
    // (pi1 first, then pairs)
    let mut g = DVector::zeros(q);
    let mut jac = DMatrix::zeros(q, q);
    for f in 0..n_factors {
        let (cur, lag) = (1 + 2 * f, 2 + 2 * f);
        g[2 * f] = sub[cur];
        jac[(2 * f, cur)] = 1.0;
        g[2 * f + 1] = -sub[lag] / pi1;
        jac[(2 * f + 1, lag)] = -1.0 / pi1;
        jac[(2 * f + 1, 0)] = sub[lag] / (pi1 * pi1);
    }
    g[q - 1] = pi1;
    jac[(q - 1, 0)] = 1.0;

    let omega = symmetrize(&(&jac * &vsub * jac.transpose()));

    // restriction design: each factor's two moments share one elasticity,
    // the last moment is the persistence
    let theta_dim = n_factors + 1;
    let mut r = DMatrix::zeros(q, theta_dim);
    for f in 0..n_factors {
        r[(2 * f, f)] = 1.0;
        r[(2 * f + 1, f)] = 1.0;
    }
    r[(q - 1, n_factors)] = 1.0;

    let mut warnings = Vec::new();
    let (omega_inv, rank) = pinv_psd(&omega)?;
    if rank < q {
        warnings.push(format!(
            "transformed-moment covariance is rank deficient ({rank} of {q}); \
             distance uses its pseudo-inverse"
        ));
    }

    let factor_names: Vec<String> = (0..n_factors)
        .map(|f| pi.substantive[1 + 2 * f].clone())
        .collect();
    let mut theta_labels: Vec<String> =
        factor_names.iter().map(|f| format!("beta_{f}")).collect();
    theta_labels.push("rho".to_string());

    let rtw = r.transpose() * &omega_inv; // theta_dim x q
    let a = symmetrize(&(&rtw * &r));
    let a_inv = inv_psd(&a, &theta_labels, "minimum-distance system")?;
    let theta = &a_inv * (&rtw * &g);
    let residual = &g - &r * &theta;
    let distance = (residual.transpose() * &omega_inv * &residual)[(0, 0)].max(0.0);

    let rho = theta[n_factors];
    if rho.abs() >= 1.0 {
        warnings.push(format!(
            "recovered persistence {rho:.4} lies outside the stationary region"
        ));
    }

    Ok(MdResult {
        factor_names,
        beta: (0..n_factors).map(|f| theta[f]).collect(),
        rho,
        distance,
        vcov_theta: symmetrize(&a_inv),
        warnings,
    })
}

/// Solow-residual TFP in levels: `exp(y - sum_f beta_f * f)`, defined on
/// every row where output and all five factors are present, with arithmetic
/// per-country yearly means for reporting.
pub fn compute_tfp(ds: &PanelDataset, spec: &ProductionSpec, md: &MdResult) -> Result<TfpSeries> {
    if md.factor_names != spec.factors {
        return Err(Error::config("elasticities do not match the factor list"));
    }
    for b in &md.beta {
        if !b.is_finite() {
            return Err(Error::numeric("non-finite elasticity in TFP computation"));
        }
    }
    let y = ds.column(&spec.output)?;
    let factor_cols: Vec<&[Option<f64>]> = spec
        .factors
        .iter()
        .map(|f| ds.column(f))
        .collect::<Result<_>>()?;
    let country = ds.text_column(&spec.country_column)?;

    let mut units = Vec::new();
    let mut countries = Vec::new();
    let mut years = Vec::new();
    let mut values = Vec::new();
    let mut bucket: BTreeMap<(String, i32), (f64, usize)> = BTreeMap::new();
    for row in 0..ds.n_rows() {
        let Some(out) = y[row] else { continue };
        let mut log_tfp = out;
        let mut complete = true;
        for (b, col) in md.beta.iter().zip(&factor_cols) {
            match col[row] {
                Some(v) => log_tfp -= b * v,
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        let tfp = log_tfp.exp();
        let unit = ds.unit_id(ds.row_units()[row]).to_string();
        let year = ds.years()[row];
        let entry = bucket.entry((country[row].clone(), year)).or_insert((0.0, 0));
        entry.0 += tfp;
        entry.1 += 1;
        units.push(unit);
        countries.push(country[row].clone());
        years.push(year);
        values.push(tfp);
    }

    let yearly_means = bucket
        .into_iter()
        .map(|((country, year), (sum, count))| YearlyMean {
            country,
            year,
            mean: sum / count as f64,
            count,
        })
        .collect();

    Ok(TfpSeries { units, countries, years, values, yearly_means })
}

/// One year of the variation table.
#[derive(Clone, Debug)]
pub struct VariationRow {
    pub year: i32,
    pub mean: f64,
    /// Absolute change from the previous year (absent for the base year).
    pub delta: Option<f64>,
    /// Relative change from the previous year.
    pub percent: Option<f64>,
    /// Chained index, base year = 1.000.
    pub cumulated: f64,
}

/// Year-over-year variation of yearly mean TFP per country.
#[derive(Clone, Debug)]
pub struct VariationTable {
    pub countries: Vec<(String, Vec<VariationRow>)>,
}

/// Chain a mean series into (delta, percent, cumulated) rows.
pub fn variation_rows(means: &[(i32, f64)]) -> Vec<VariationRow> {
    let mut rows: Vec<VariationRow> = Vec::with_capacity(means.len());
    let mut cumulated = 1.0;
    for (i, &(year, mean)) in means.iter().enumerate() {
        let (delta, percent) = if i == 0 {
            (None, None)
        } else {
            let prev = means[i - 1].1;
            let d = mean - prev;
            (Some(d), Some(d / prev))
        };
        if let Some(p) = percent {
            cumulated *= 1.0 + p;
        }
        rows.push(VariationRow { year, mean, delta, percent, cumulated });
    }
    rows
}

/// Build the per-country variation table from a TFP series.
///
/// Needs at least two yearly means per country, else the chained index is
/// undefined.
pub fn tfp_variation_table(tfp: &TfpSeries) -> Result<VariationTable> {
    let mut per_country: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();
    for ym in &tfp.yearly_means {
        per_country
            .entry(ym.country.as_str())
            .or_default()
            .push((ym.year, ym.mean));
    }
    if per_country.is_empty() {
        return Err(Error::data("no yearly means to tabulate"));
    }
    let mut countries = Vec::with_capacity(per_country.len());
    for (country, mut means) in per_country {
        means.sort_by_key(|&(year, _)| year);
        if means.len() < 2 {
            return Err(Error::data(format!(
                "country `{country}` has {} yearly mean(s); need at least 2 for variation",
                means.len()
            )));
        }
        countries.push((country.to_string(), variation_rows(&means)));
    }
    Ok(VariationTable { countries })
}

/// Relative tolerance used when tests compare covariance rescalings.
pub const MD_RESCALE_TOL: f64 = 1e-10;

#[allow(dead_code)]
fn _rank_tol_is_shared() -> f64 {
    // the MD pseudo-inverse shares the library-wide rank tolerance
    RANK_REL_TOL
}
