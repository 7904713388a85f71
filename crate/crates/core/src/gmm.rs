//! Linear GMM for dynamic panels on stacked difference + level equations.
//!
//! All moment sums are unnormalized (plain sums over units), so estimates are
//! invariant to how the weighting matrix is scaled. The one-step weighting
//! assumes homoskedastic differenced errors (the familiar 2/-1 band on the
//! difference block, identity on levels); the two-step weighting is built
//! from first-step residual moments. Two-step standard errors carry the
//! small-sample downward bias corrected by [`windmeijer_correct`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::instruments::{build_layout, InstrumentMatrix, SystemLayout};
use crate::linalg::{inv_psd, pinv_psd, symmetrize};
use crate::panel::PanelDataset;

/// Equation system to estimate: one dependent, a list of regressor columns
/// (lagged terms enter as their own columns, e.g. `y_lag_1`), plus optional
/// year dummies and a levels-equation constant.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dependent: String,
    pub regressors: Vec<String>,
    pub time_dummies: bool,
    /// Intercept identified from the level equations (it differences away).
    pub constant_in_levels: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dependent.is_empty() {
            return Err(Error::config("model has no dependent variable"));
        }
        if self.regressors.is_empty() {
            return Err(Error::config("model has no regressors"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.regressors {
            if r == &self.dependent {
                return Err(Error::config(format!(
                    "dependent `{r}` cannot be its own regressor (lag it first)"
                )));
            }
            if !seen.insert(r) {
                return Err(Error::config(format!("regressor `{r}` listed twice")));
            }
        }
        Ok(())
    }
}

/// Design rows of one unit: difference equations stacked above level
/// equations, in the layout's year order.
#[derive(Clone, Debug)]
pub struct UnitDesign {
    pub unit: usize,
    pub diff_years: Vec<i32>,
    pub level_years: Vec<i32>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Stacked design for the whole system.
#[derive(Clone, Debug)]
pub struct SystemDesign {
    /// Coefficient labels: regressors, then year dummies, then the constant.
    pub labels: Vec<String>,
    pub units: Vec<UnitDesign>,
}

impl SystemDesign {
    pub fn coefficient_count(&self) -> usize {
        self.labels.len()
    }

    pub fn total_rows(&self) -> usize {
        self.units.iter().map(|u| u.y.len()).sum()
    }
}

/// Materialize regressor/dependent rows for every usable equation in the
/// layout. Difference rows hold year-over-year changes (dummies too);
/// level rows hold the values, the dummy indicators, and the constant.
pub fn build_design(
    ds: &PanelDataset,
    model: &ModelSpec,
    layout: &SystemLayout,
) -> Result<SystemDesign> {
    model.validate()?;
    let dep = ds.column(&model.dependent)?;
    let regs: Vec<&[Option<f64>]> = model
        .regressors
        .iter()
        .map(|r| ds.column(r))
        .collect::<Result<_>>()?;

    let mut labels = model.regressors.clone();
    for &t in &layout.dummy_periods {
        labels.push(format!("yr{t}"));
    }
    if model.constant_in_levels {
        labels.push("const".to_string());
    }
    let p = labels.len();
    let n_dummies = layout.dummy_periods.len();

    let mut units = Vec::with_capacity(layout.units.len());
    for ue in &layout.units {
        let (nd, nl) = (ue.diff_years.len(), ue.level_years.len());
        let mut x = DMatrix::zeros(nd + nl, p);
        let mut y = DVector::zeros(nd + nl);
        let at = |col: &[Option<f64>], year: i32| -> f64 {
            let row = ds
                .row_for_year(ue.unit, year)
                .expect("layout guarantees the row exists");
            col[row].expect("layout guarantees the value is present")
        };
        for (r, &year) in ue.diff_years.iter().enumerate() {
            y[r] = at(dep, year) - at(dep, year - 1);
            for (j, col) in regs.iter().enumerate() {
                x[(r, j)] = at(col, year) - at(col, year - 1);
            }
            for (k, &t) in layout.dummy_periods.iter().enumerate() {
                x[(r, regs.len() + k)] = (if year == t { 1.0 } else { 0.0 })
                    - (if year - 1 == t { 1.0 } else { 0.0 });
            }
            // constant differences away: stays 0 on difference rows
        }
        for (r, &year) in ue.level_years.iter().enumerate() {
            let row = nd + r;
            y[row] = at(dep, year);
            for (j, col) in regs.iter().enumerate() {
                x[(row, j)] = at(col, year);
            }
            for (k, &t) in layout.dummy_periods.iter().enumerate() {
                x[(row, regs.len() + k)] = if year == t { 1.0 } else { 0.0 };
            }
            if model.constant_in_levels {
                x[(row, regs.len() + n_dummies)] = 1.0;
            }
        }
        units.push(UnitDesign {
            unit: ue.unit,
            diff_years: ue.diff_years.clone(),
            level_years: ue.level_years.clone(),
            x,
            y,
        });
    }
    Ok(SystemDesign { labels, units })
}

/// Which weighting the fit used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GmmStage {
    OneStep,
    TwoStep,
}

/// A fitted system, carrying everything the diagnostics need.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub labels: Vec<String>,
    pub coefficients: DVector<f64>,
    pub stage: GmmStage,
    /// Cluster-robust one-step covariance (sandwich over unit blocks).
    pub vcov_one_step: DMatrix<f64>,
    /// Conventional (uncorrected) two-step covariance.
    pub vcov_two_step: Option<DMatrix<f64>>,
    /// Finite-sample corrected two-step covariance.
    pub vcov_corrected: Option<DMatrix<f64>>,
    /// Weighting matrix of this stage.
    pub weight: DMatrix<f64>,
    /// Rank used when the weighting matrix was (pseudo-)inverted.
    pub weight_rank: usize,
    /// One-step weighting matrix, kept for the one-step overidentification
    /// statistic.
    pub weight_one_step: DMatrix<f64>,
    pub instrument_labels: Vec<String>,
    pub instrument_count: usize,
    pub unit_count: usize,
    /// (difference rows, level rows) actually stacked.
    pub equation_counts: (usize, usize),
    pub design: SystemDesign,
    /// Per-unit residuals at this stage's coefficients (difference rows
    /// stacked above level rows).
    pub residuals: Vec<DVector<f64>>,
    /// First-step residuals (populated on two-step fits).
    pub one_step_residuals: Option<Vec<DVector<f64>>>,
    /// Per-unit instrument moments Z_i' e_i at this stage's residuals.
    pub zte: Vec<DVector<f64>>,
    /// A^{-1} X'Z W at this stage (reused by serial-correlation tests).
    pub gamma: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl GmmFit {
    /// Covariance used for inference: corrected when available, then
    /// two-step, then robust one-step.
    pub fn vcov(&self) -> &DMatrix<f64> {
        self.vcov_corrected
            .as_ref()
            .or(self.vcov_two_step.as_ref())
            .unwrap_or(&self.vcov_one_step)
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let v = self.vcov();
        (0..v.nrows()).map(|i| v[(i, i)].max(0.0).sqrt()).collect()
    }

    /// (estimate, standard error) for a named coefficient.
    pub fn coefficient(&self, label: &str) -> Option<(f64, f64)> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some((self.coefficients[i], self.std_errors()[i]))
    }
}

/// Homoskedastic weighting kernel of one unit: 2 on the difference-block
/// diagonal, -1 between calendar-adjacent difference rows, identity on the
/// level block, zero between blocks.
pub(crate) fn h_kernel(diff_years: &[i32], n_level: usize) -> DMatrix<f64> {
    let nd = diff_years.len();
    let n = nd + n_level;
    let mut h = DMatrix::zeros(n, n);
    for r in 0..nd {
        h[(r, r)] = 2.0;
        for s in (r + 1)..nd {
            if (diff_years[s] - diff_years[r]).abs() == 1 {
                h[(r, s)] = -1.0;
                h[(s, r)] = -1.0;
            }
        }
    }
    for r in nd..n {
        h[(r, r)] = 1.0;
    }
    h
}

/// Cross-moment sums Σ Z_i'X_i and Σ Z_i'y_i, with alignment checks.
fn cross_moments(
    design: &SystemDesign,
    z: &InstrumentMatrix,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if design.units.len() != z.units.len() {
        return Err(Error::config("design and instrument unit counts differ"));
    }
    let (nz, p) = (z.column_count(), design.coefficient_count());
    let mut szx = DMatrix::zeros(nz, p);
    let mut szy = DVector::zeros(nz);
    for (d, b) in design.units.iter().zip(&z.units) {
        if d.unit != b.unit || d.y.len() != b.z.nrows() {
            return Err(Error::config("design and instrument blocks are misaligned"));
        }
        szx += b.z.transpose() * &d.x;
        szy += b.z.transpose() * &d.y;
    }
    Ok((szx, szy))
}

fn residual_moment_outer(
    residuals: &[DVector<f64>],
    z: &InstrumentMatrix,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let nz = z.column_count();
    let mut b = DMatrix::zeros(nz, nz);
    let mut zte = Vec::with_capacity(residuals.len());
    for (e, blk) in residuals.iter().zip(&z.units) {
        let u = blk.z.transpose() * e;
        b += &u * u.transpose();
        zte.push(u);
    }
    (b, zte)
}

fn check_layout(ds: &PanelDataset, model: &ModelSpec, z: &InstrumentMatrix) -> Result<()> {
    let layout = build_layout(ds, model)?;
    if layout != z.layout {
        return Err(Error::config(
            "instrument matrix was built for a different model or dataset",
        ));
    }
    Ok(())
}

/// One-step system estimator with the homoskedastic weighting kernel and a
/// cluster-robust covariance.
pub fn estimate_one_step(
    ds: &PanelDataset,
    model: &ModelSpec,
    z: &InstrumentMatrix,
) -> Result<GmmFit> {
    check_layout(ds, model, z)?;
    let design = build_design(ds, model, &z.layout)?;
    let p = design.coefficient_count();
    let rows = design.total_rows();
    if rows < p {
        return Err(Error::data(format!(
            "{rows} usable equations cannot identify {p} coefficients"
        )));
    }

    let (szx, szy) = cross_moments(&design, z)?;
    let nz = z.column_count();
    let mut szhz = DMatrix::zeros(nz, nz);
    for (d, b) in design.units.iter().zip(&z.units) {
        let h = h_kernel(&d.diff_years, d.level_years.len());
        szhz += b.z.transpose() * h * &b.z;
    }
    let w1 = inv_psd(&szhz, &z.labels, "one-step weighting matrix")?;

    let xzw = szx.transpose() * &w1; // p x z
    let a = symmetrize(&(&xzw * &szx));
    let a_inv = inv_psd(&a, &design.labels, "one-step coefficient system")?;
    let beta = &a_inv * (&xzw * &szy);

    let residuals: Vec<DVector<f64>> =
        design.units.iter().map(|d| &d.y - &d.x * &beta).collect();
    let (b1, zte) = residual_moment_outer(&residuals, z);
    let g = &a_inv * &xzw; // p x z
    let vcov = symmetrize(&(&g * &b1 * g.transpose()));

    Ok(GmmFit {
        labels: design.labels.clone(),
        coefficients: beta,
        stage: GmmStage::OneStep,
        vcov_one_step: vcov,
        vcov_two_step: None,
        vcov_corrected: None,
        weight: w1.clone(),
        weight_rank: nz,
        weight_one_step: w1,
        instrument_labels: z.labels.clone(),
        instrument_count: nz,
        unit_count: z.units.len(),
        equation_counts: (z.layout.n_diff_rows, z.layout.n_level_rows),
        design,
        residuals,
        one_step_residuals: None,
        zte,
        gamma: g,
        warnings: z.warnings.clone(),
    })
}

/// Two-step estimator: re-weight with the inverse of the first-step residual
/// moment matrix (pseudo-inverse when singular, which is routine once the
/// instrument count passes the unit count).
pub fn estimate_two_step(
    fit1: GmmFit,
    ds: &PanelDataset,
    model: &ModelSpec,
    z: &InstrumentMatrix,
) -> Result<GmmFit> {
    if fit1.stage != GmmStage::OneStep {
        return Err(Error::config("two-step estimation starts from a one-step fit"));
    }
    check_layout(ds, model, z)?;
    let design = fit1.design;
    let p = design.coefficient_count();

    let (b1, _) = residual_moment_outer(&fit1.residuals, z);
    let (w2, rank) = pinv_psd(&b1)?;
    if rank < p {
        return Err(Error::numeric(format!(
            "two-step weighting matrix has rank {rank}, below the {p} coefficients; \
             first-step residuals carry too little variation"
        )));
    }

    let (szx, szy) = cross_moments(&design, z)?;
    let xzw = szx.transpose() * &w2;
    let a = symmetrize(&(&xzw * &szx));
    let a_inv = inv_psd(&a, &design.labels, "two-step coefficient system")?;
    let beta = &a_inv * (&xzw * &szy);

    let residuals: Vec<DVector<f64>> =
        design.units.iter().map(|d| &d.y - &d.x * &beta).collect();
    let (_, zte) = residual_moment_outer(&residuals, z);
    let g = &a_inv * &xzw;

    Ok(GmmFit {
        labels: design.labels.clone(),
        coefficients: beta,
        stage: GmmStage::TwoStep,
        vcov_one_step: fit1.vcov_one_step,
        vcov_two_step: Some(symmetrize(&a_inv)),
        vcov_corrected: None,
        weight: w2,
        weight_rank: rank,
        weight_one_step: fit1.weight_one_step,
        instrument_labels: z.labels.clone(),
        instrument_count: z.column_count(),
        unit_count: z.units.len(),
        equation_counts: (z.layout.n_diff_rows, z.layout.n_level_rows),
        design,
        residuals,
        one_step_residuals: Some(fit1.residuals),
        zte,
        gamma: g,
        warnings: z.warnings.clone(),
    })
}

/// Finite-sample correction of the two-step covariance.
///
/// The two-step weighting depends on first-step residuals; ignoring that
/// dependence understates the two-step variance. The correction linearizes
/// the estimator in the first-step coefficients:
/// `V_c = V2 + D V2 + V2 D' + D V1 D'`, where column j of `D` is
/// `A2^{-1} X'Z W2 [Σ_i Z_i'(x_ij e1_i' + e1_i x_ij')Z_i] W2 Z'e2`.
/// Under exact identification `Z'e2 = 0`, so `D = 0` and the covariance is
/// unchanged.
pub fn windmeijer_correct(
    fit2: GmmFit,
    ds: &PanelDataset,
    model: &ModelSpec,
    z: &InstrumentMatrix,
) -> Result<GmmFit> {
    if fit2.stage != GmmStage::TwoStep {
        return Err(Error::config("the finite-sample correction applies to two-step fits"));
    }
    check_layout(ds, model, z)?;
    let e1 = fit2
        .one_step_residuals
        .as_ref()
        .ok_or_else(|| Error::config("two-step fit is missing its first-step residuals"))?;
    let v2 = fit2
        .vcov_two_step
        .clone()
        .ok_or_else(|| Error::config("two-step fit is missing its covariance"))?;

    let design = &fit2.design;
    let p = design.coefficient_count();
    let w2 = &fit2.weight;

    // trailing moment W2 Z'e2 and per-unit pieces
    let nz = fit2.instrument_count;
    let mut zte2 = DVector::zeros(nz);
    for u in &fit2.zte {
        zte2 += u;
    }
    let s = w2 * &zte2;

    // u_i = Z_i' e1_i and c_ij = Z_i' x_ij are all that is needed:
    // [Σ_i Z_i'(x_ij e1' + e1 x_ij')Z_i] s = Σ_i (u_i's) c_ij + (c_ij's) u_i
    let mut m = DMatrix::zeros(nz, p);
    for ((d, b), e1_i) in design.units.iter().zip(&z.units).zip(e1) {
        let u_i = b.z.transpose() * e1_i;
        let c_i = b.z.transpose() * &d.x; // z x p
        let a_i = u_i.dot(&s);
        for j in 0..p {
            let c_ij = c_i.column(j);
            let b_ij = c_ij.dot(&s);
            for r in 0..nz {
                m[(r, j)] += a_i * c_ij[r] + b_ij * u_i[r];
            }
        }
    }
    let d_mat = &fit2.gamma * m; // p x p; gamma = A2^{-1} X'Z W2

    let v1 = &fit2.vcov_one_step;
    let vc = symmetrize(
        &(&v2 + &d_mat * &v2 + &v2 * d_mat.transpose() + &d_mat * v1 * d_mat.transpose()),
    );

    Ok(GmmFit { vcov_corrected: Some(vc), ..fit2 })
}
