//! Specification tests for fitted systems: overidentification (Sargan),
//! serial correlation of the differenced residuals (AR(1)/AR(2)), and Wald
//! tests on coefficient subsets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::{h_kernel, GmmFit, GmmStage};
use crate::instruments::InstrumentMatrix;
use crate::linalg::solve_psd;
use crate::stats::{chi_square_sf, normal_two_sided_p};

/// One diagnostic outcome. `applicable` is false when the statistic is
/// undefined for the fit at hand (exactly identified system, too few
/// periods, degenerate variance); renderers print those as n/a.
#[derive(Clone, Debug)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    /// Chi-square degrees of freedom; `None` for normal-based tests.
    pub dof: Option<usize>,
    pub p_value: f64,
    pub applicable: bool,
}

impl TestResult {
    fn not_applicable(name: &str, statistic: f64, dof: Option<usize>) -> Self {
        Self { name: name.to_string(), statistic, dof, p_value: f64::NAN, applicable: false }
    }
}

fn check_instruments(fit: &GmmFit, z: &InstrumentMatrix) -> Result<()> {
    if fit.instrument_labels != z.labels {
        return Err(Error::config(
            "instrument matrix does not match the one the system was fitted with",
        ));
    }
    Ok(())
}

fn total_moment(fit: &GmmFit) -> DVector<f64> {
    let mut m = DVector::zeros(fit.instrument_count);
    for u in &fit.zte {
        m += u;
    }
    m
}

/// Overidentification test at this fit's weighting: `J = (Z'e)' W (Z'e)`,
/// chi-square with (independent moment conditions - coefficients) degrees
/// of freedom.
///
/// On a two-step fit this is the Hansen form (two-step residuals and
/// weighting), reported as "Sargan" to match the conventional table label;
/// see [`sargan_one_step`] for the companion statistic from first-step
/// residuals. Exactly identified systems zero the moments by construction
/// and come back flagged not-applicable.
///
/// The moment count is the rank of the moment covariance behind the
/// two-step weighting, not the raw instrument column count. In a stacked
/// difference + level system each difference residual is exactly the change
/// in two adjacent level residuals, so instruments that repeat the same
/// deterministic pattern in every unit (time dummies and the constant, which
/// enter both blocks) make one moment condition per difference period
/// linearly redundant even though the instrument columns themselves are
/// independent. The pseudo-inverse weighting already projects those
/// directions out of J; using the raw column count here would overstate the
/// degrees of freedom and push the p-values toward 1.
pub fn sargan(fit: &GmmFit, z: &InstrumentMatrix) -> Result<TestResult> {
    check_instruments(fit, z)?;
    let name = match fit.stage {
        GmmStage::TwoStep => "Sargan",
        GmmStage::OneStep => "Sargan (one-step)",
    };
    let m = total_moment(fit);
    let mut j = (m.transpose() * &fit.weight * &m)[(0, 0)];
    let mut moments = fit.instrument_count;
    match fit.stage {
        GmmStage::OneStep => j /= one_step_error_scale(fit),
        GmmStage::TwoStep => moments = fit.weight_rank.min(fit.instrument_count),
    }
    finish_sargan(name, j, moments, fit.labels.len())
}

/// One-step overidentification statistic: first-step residual moments under
/// the homoskedastic weighting, scaled by the pooled residual variance.
pub fn sargan_one_step(fit: &GmmFit, z: &InstrumentMatrix) -> Result<TestResult> {
    check_instruments(fit, z)?;
    if fit.stage == GmmStage::OneStep {
        return sargan(fit, z);
    }
    let e1 = fit
        .one_step_residuals
        .as_ref()
        .ok_or_else(|| Error::config("two-step fit is missing its first-step residuals"))?;
    let mut m = DVector::zeros(fit.instrument_count);
    for (e, blk) in e1.iter().zip(&z.units) {
        m += blk.z.transpose() * e;
    }
    let mut sigma2 = 0.0;
    let mut rows = 0usize;
    for (e, d) in e1.iter().zip(&fit.design.units) {
        let h = h_kernel(&d.diff_years, d.level_years.len());
        sigma2 += (e.transpose() * h * e)[(0, 0)];
        rows += e.len();
    }
    sigma2 /= rows as f64;
    let j = (m.transpose() * &fit.weight_one_step * &m)[(0, 0)] / sigma2;
    finish_sargan("Sargan (one-step)", j, fit.instrument_count, fit.labels.len())
}

/// Pooled one-step residual variance under the homoskedastic kernel.
fn one_step_error_scale(fit: &GmmFit) -> f64 {
    let mut sigma2 = 0.0;
    let mut rows = 0usize;
    for (e, d) in fit.residuals.iter().zip(&fit.design.units) {
        let h = h_kernel(&d.diff_years, d.level_years.len());
        sigma2 += (e.transpose() * h * e)[(0, 0)];
        rows += e.len();
    }
    sigma2 / rows as f64
}

fn finish_sargan(name: &str, j: f64, instruments: usize, coefficients: usize) -> Result<TestResult> {
    if instruments <= coefficients {
        return Ok(TestResult::not_applicable(name, j, Some(0)));
    }
    let dof = instruments - coefficients;
    Ok(TestResult {
        name: name.to_string(),
        statistic: j,
        dof: Some(dof),
        p_value: chi_square_sf(j, dof),
        applicable: true,
    })
}

/// Arellano–Bond test for order-`order` serial correlation in the
/// differenced residuals.
///
/// The statistic is the lag-`order` residual cross product over its standard
/// error under the null; the variance accounts for estimated coefficients
/// through the fitted system's weighting and covariance. Differenced errors
/// of iid level shocks are MA(1), so order 1 rejects by construction and
/// order 2 is the informative one. Units contribute only rows whose
/// calendar-lagged partner is itself a usable differenced equation.
pub fn ar_test(fit: &GmmFit, order: usize) -> Result<TestResult> {
    if order != 1 && order != 2 {
        return Err(Error::config(format!(
            "serial-correlation test supports orders 1 and 2, got {order}"
        )));
    }
    let name = format!("AR({order})");
    let p = fit.labels.len();
    let nz = fit.instrument_count;

    let mut d = 0.0;
    let mut term1 = 0.0;
    let mut xel = DVector::zeros(p);
    let mut zeel = DVector::zeros(nz);
    let mut pairs = 0usize;
    for ((design, e), zte) in fit.design.units.iter().zip(&fit.residuals).zip(&fit.zte) {
        let nd = design.diff_years.len();
        let mut el = DVector::zeros(e.len());
        for (r, &year) in design.diff_years.iter().enumerate() {
            if let Ok(partner) = design.diff_years.binary_search(&(year - order as i32)) {
                el[r] = e[partner];
                pairs += 1;
            }
        }
        if nd == 0 {
            continue;
        }
        let c = el.dot(e);
        d += c;
        term1 += c * c;
        xel += design.x.transpose() * &el;
        zeel += zte * c;
    }
    if pairs == 0 {
        return Ok(TestResult::not_applicable(&name, f64::NAN, None));
    }

    let term2 = -2.0 * xel.dot(&(&fit.gamma * &zeel));
    let term3 = (xel.transpose() * fit.vcov() * &xel)[(0, 0)];
    let variance = term1 + term2 + term3;
    if !(variance > 0.0) {
        return Ok(TestResult::not_applicable(&name, f64::NAN, None));
    }
    let m = d / variance.sqrt();
    Ok(TestResult {
        name,
        statistic: m,
        dof: None,
        p_value: normal_two_sided_p(m),
        applicable: true,
    })
}

/// Wald test that the named coefficients are jointly zero, using the fit's
/// inference covariance (corrected when present).
pub fn wald(fit: &GmmFit, name: &str, subset: &[String]) -> Result<TestResult> {
    if subset.is_empty() {
        return Err(Error::config("Wald test needs a non-empty coefficient subset"));
    }
    let mut idx = Vec::with_capacity(subset.len());
    for label in subset {
        let i = fit
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::config(format!("unknown coefficient `{label}`")))?;
        idx.push(i);
    }
    let v = fit.vcov();
    let beta = DVector::from_fn(idx.len(), |r, _| fit.coefficients[idx[r]]);
    let vs = DMatrix::from_fn(idx.len(), idx.len(), |r, c| v[(idx[r], idx[c])]);
    let solved = solve_psd(&vs, &beta, subset, &format!("covariance of {name}"))?;
    let w = beta.dot(&solved);
    let dof = idx.len();
    Ok(TestResult {
        name: name.to_string(),
        statistic: w,
        dof: Some(dof),
        p_value: chi_square_sf(w, dof),
        applicable: true,
    })
}

/// Preset: every coefficient except the constant and the year dummies.
pub fn wald_coefficients(fit: &GmmFit) -> Result<TestResult> {
    let subset: Vec<String> = fit
        .labels
        .iter()
        .filter(|l| l.as_str() != "const" && !l.starts_with("yr"))
        .cloned()
        .collect();
    wald(fit, "Wald coefficients", &subset)
}

/// Preset: year dummies only; not-applicable when the model has none.
pub fn wald_time(fit: &GmmFit) -> Result<TestResult> {
    let subset: Vec<String> =
        fit.labels.iter().filter(|l| l.starts_with("yr")).cloned().collect();
    if subset.is_empty() {
        return Ok(TestResult::not_applicable("Wald time", f64::NAN, None));
    }
    wald(fit, "Wald time", &subset)
}
