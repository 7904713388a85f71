//! Instrument matrices for the system estimator: lagged levels instrument
//! the first-differenced equations, lagged first differences instrument the
//! level equations.
//!
//! Columns are enumerated deterministically from the global period range and
//! the per-variable lag windows; cells whose lag falls outside a unit's
//! observed years are zero-filled (the equation row itself exists only when
//! usable). GMM-style matrices carry one column per (variable, period, lag);
//! collapsed matrices sum those columns per lag, which caps the instrument
//! count at the price of some efficiency.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gmm::ModelSpec;
use crate::panel::PanelDataset;

/// Instrument-validity class of a regressor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableClass {
    /// Correlated with current and past shocks; difference-equation
    /// instruments start at lag 2.
    Endogenous,
    /// Correlated with past shocks only; difference-equation instruments may
    /// start at lag 1.
    Predetermined,
    /// Uncorrelated with shocks at all leads and lags; instruments itself.
    Exogenous,
}

/// Instrument recipe for one variable.
#[derive(Clone, Debug)]
pub struct VariableInstrument {
    pub class: VariableClass,
    /// Shallowest level lag used in the difference equations.
    pub lag_min: u32,
    /// Deepest lag; `None` means bounded only by the data start.
    pub lag_max: Option<u32>,
    /// One column per lag (summed over periods) instead of one per
    /// (period, lag).
    pub collapsed: bool,
}

impl VariableInstrument {
    /// Endogenous default: lags 2..3 (the window is capped at lag_min+1 to
    /// limit instrument proliferation).
    pub fn endogenous() -> Self {
        Self { class: VariableClass::Endogenous, lag_min: 2, lag_max: Some(3), collapsed: false }
    }

    /// Predetermined default: lags 1..2.
    pub fn predetermined() -> Self {
        Self { class: VariableClass::Predetermined, lag_min: 1, lag_max: Some(2), collapsed: false }
    }

    /// Exogenous variables instrument themselves; lag fields are unused.
    pub fn exogenous() -> Self {
        Self { class: VariableClass::Exogenous, lag_min: 0, lag_max: Some(0), collapsed: false }
    }

    pub fn with_lags(mut self, lag_min: u32, lag_max: Option<u32>) -> Self {
        self.lag_min = lag_min;
        self.lag_max = lag_max;
        self
    }

    pub fn collapsed(mut self) -> Self {
        self.collapsed = true;
        self
    }
}

/// Full instrument recipe: per-variable rules plus time-dummy columns.
#[derive(Clone, Debug)]
pub struct InstrumentSpec {
    /// (base variable name, rule); order fixes column order.
    pub variables: Vec<(String, VariableInstrument)>,
    pub include_time_dummies: bool,
}

impl InstrumentSpec {
    pub fn validate(&self, ds: &PanelDataset) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, vi) in &self.variables {
            if !seen.insert(name.clone()) {
                return Err(Error::config(format!("variable `{name}` instrumented twice")));
            }
            ds.column(name)?;
            match vi.class {
                VariableClass::Endogenous => {
                    if vi.lag_min < 2 {
                        return Err(Error::config(format!(
                            "endogenous `{name}` needs lag_min >= 2, got {}",
                            vi.lag_min
                        )));
                    }
                }
                VariableClass::Predetermined => {
                    if vi.lag_min < 1 {
                        return Err(Error::config(format!(
                            "predetermined `{name}` needs lag_min >= 1, got {}",
                            vi.lag_min
                        )));
                    }
                }
                VariableClass::Exogenous => {}
            }
            if let Some(max) = vi.lag_max {
                if vi.class != VariableClass::Exogenous && max < vi.lag_min {
                    return Err(Error::config(format!(
                        "`{name}`: lag_max {max} below lag_min {}",
                        vi.lag_min
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Usable equations of one unit (calendar years, ascending).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitEquations {
    /// Index into the dataset's unit list.
    pub unit: usize,
    /// Years t with a usable differenced equation (rows t and t-1 complete).
    pub diff_years: Vec<i32>,
    /// Years t with a usable level equation (row t complete).
    pub level_years: Vec<i32>,
}

/// Which equations exist, globally and per unit, for a (dataset, model).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemLayout {
    /// Earliest year observed anywhere in the dataset (lag availability
    /// bound; instruments cannot reach before it).
    pub first_year: i32,
    /// Distinct years with at least one usable differenced equation.
    pub diff_periods: Vec<i32>,
    /// Distinct years with at least one usable level equation.
    pub level_periods: Vec<i32>,
    /// Years that get a time dummy (empty when the model has none); excludes
    /// the first level period when a constant is present.
    pub dummy_periods: Vec<i32>,
    /// Units with at least one usable equation.
    pub units: Vec<UnitEquations>,
    pub n_diff_rows: usize,
    pub n_level_rows: usize,
}

/// Determine usable equations: a level equation at t needs the dependent and
/// every regressor present at t; a differenced equation additionally needs
/// the calendar-previous row complete (gaps break differencing).
pub fn build_layout(ds: &PanelDataset, model: &ModelSpec) -> Result<SystemLayout> {
    model.validate()?;
    let dep = ds.column(&model.dependent)?;
    let regs: Vec<&[Option<f64>]> = model
        .regressors
        .iter()
        .map(|r| ds.column(r))
        .collect::<Result<_>>()?;

    let years = ds.years();
    let first_year = *years.iter().min().ok_or_else(|| Error::data("empty dataset"))?;
    let complete =
        |row: usize| dep[row].is_some() && regs.iter().all(|c| c[row].is_some());

    let mut units = Vec::new();
    let mut diff_set = BTreeSet::new();
    let mut level_set = BTreeSet::new();
    let (mut n_diff_rows, mut n_level_rows) = (0usize, 0usize);
    for u in 0..ds.n_units() {
        let (start, end) = ds.unit_range(u);
        let mut diff_years = Vec::new();
        let mut level_years = Vec::new();
        for row in start..end {
            if !complete(row) {
                continue;
            }
            let year = years[row];
            level_years.push(year);
            if let Some(prev) = ds.row_for_year(u, year - 1) {
                if complete(prev) {
                    diff_years.push(year);
                }
            }
        }
        if !level_years.is_empty() {
            diff_set.extend(diff_years.iter().copied());
            level_set.extend(level_years.iter().copied());
            n_diff_rows += diff_years.len();
            n_level_rows += level_years.len();
            units.push(UnitEquations { unit: u, diff_years, level_years });
        }
    }
    if n_level_rows + n_diff_rows == 0 {
        return Err(Error::data("no usable equations"));
    }

    let level_periods: Vec<i32> = level_set.into_iter().collect();
    let dummy_periods: Vec<i32> = if model.time_dummies {
        if model.constant_in_levels {
            level_periods.iter().skip(1).copied().collect()
        } else {
            level_periods.clone()
        }
    } else {
        Vec::new()
    };

    Ok(SystemLayout {
        first_year,
        diff_periods: diff_set.into_iter().collect(),
        level_periods,
        dummy_periods,
        units,
        n_diff_rows,
        n_level_rows,
    })
}

/// Which equation block a partial instrument matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Difference,
    Level,
}

/// Instrument columns for one block (difference or level equations).
#[derive(Clone, Debug)]
pub struct PartialInstruments {
    pub block: BlockKind,
    pub labels: Vec<String>,
    /// Per-unit value matrix, rows = that unit's equations of this block.
    pub blocks: Vec<DMatrix<f64>>,
    pub layout: SystemLayout,
}

fn value_at(ds: &PanelDataset, col: &[Option<f64>], unit: usize, year: i32) -> Option<f64> {
    ds.row_for_year(unit, year).and_then(|row| col[row])
}

fn diff_at(ds: &PanelDataset, col: &[Option<f64>], unit: usize, year: i32) -> Option<f64> {
    match (value_at(ds, col, unit, year), value_at(ds, col, unit, year - 1)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    }
}

enum DiffColumn {
    /// Level of `var` dated period−lag, nonzero only on rows of `period`.
    GmmLag { var: usize, period: i32, lag: u32 },
    /// Level of `var` lagged `lag` years, on every difference row.
    CollapsedLag { var: usize, lag: u32 },
    /// First difference of an exogenous variable, on every difference row.
    SelfDifference { var: usize },
    /// Differenced time dummy for `period`.
    DeltaDummy { period: i32 },
}

/// Build the difference-equation instrument block: lagged levels per the
/// per-variable lag windows, self-instruments for exogenous variables, and
/// differenced time dummies.
pub fn build_difference_instruments(
    ds: &PanelDataset,
    spec: &InstrumentSpec,
    model: &ModelSpec,
) -> Result<PartialInstruments> {
    spec.validate(ds)?;
    let layout = build_layout(ds, model)?;
    let cols: Vec<&[Option<f64>]> = spec
        .variables
        .iter()
        .map(|(name, _)| ds.column(name))
        .collect::<Result<_>>()?;

    // deterministic column enumeration from the global period range
    let mut columns: Vec<DiffColumn> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let max_depth = |period: i32, vi: &VariableInstrument| -> u32 {
        let data_bound = (period - layout.first_year).max(0) as u32;
        match vi.lag_max {
            Some(m) => m.min(data_bound),
            None => data_bound,
        }
    };
    for (v, (name, vi)) in spec.variables.iter().enumerate() {
        match vi.class {
            VariableClass::Exogenous => {
                columns.push(DiffColumn::SelfDifference { var: v });
                labels.push(format!("d.D.{name}"));
            }
            _ if vi.collapsed => {
                let deepest = layout
                    .diff_periods
                    .iter()
                    .map(|&t| max_depth(t, vi))
                    .max()
                    .unwrap_or(0);
                for lag in vi.lag_min..=deepest.max(vi.lag_min) {
                    if lag > deepest {
                        break;
                    }
                    columns.push(DiffColumn::CollapsedLag { var: v, lag });
                    labels.push(format!("d.{name}.L{lag}c"));
                }
            }
            _ => {
                for &t in &layout.diff_periods {
                    let deepest = max_depth(t, vi);
                    for lag in vi.lag_min..=deepest.max(vi.lag_min) {
                        if lag > deepest {
                            break;
                        }
                        columns.push(DiffColumn::GmmLag { var: v, period: t, lag });
                        labels.push(format!("d.{name}[t{t}]L{lag}"));
                    }
                }
            }
        }
    }
    if model.time_dummies {
        for &t in &layout.dummy_periods {
            columns.push(DiffColumn::DeltaDummy { period: t });
            labels.push(format!("d.Dyr{t}"));
        }
    }

    let mut blocks = Vec::with_capacity(layout.units.len());
    for ue in &layout.units {
        let mut z = DMatrix::zeros(ue.diff_years.len(), columns.len());
        for (r, &year) in ue.diff_years.iter().enumerate() {
            for (c, rule) in columns.iter().enumerate() {
                z[(r, c)] = match *rule {
                    DiffColumn::GmmLag { var, period, lag } => {
                        if year == period {
                            value_at(ds, cols[var], ue.unit, year - lag as i32).unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    }
                    DiffColumn::CollapsedLag { var, lag } => {
                        value_at(ds, cols[var], ue.unit, year - lag as i32).unwrap_or(0.0)
                    }
                    DiffColumn::SelfDifference { var } => {
                        diff_at(ds, cols[var], ue.unit, year).unwrap_or(0.0)
                    }
                    DiffColumn::DeltaDummy { period } => {
                        // d(t) - d(t-1) for the indicator of `period`
                        (if year == period { 1.0 } else { 0.0 })
                            - (if year - 1 == period { 1.0 } else { 0.0 })
                    }
                };
            }
        }
        blocks.push(z);
    }

    Ok(PartialInstruments { block: BlockKind::Difference, labels, blocks, layout })
}

enum LevelColumn {
    /// Lagged first difference of `var`, nonzero only on rows of `period`.
    GmmDiff { var: usize, period: i32, exogenous: bool },
    /// Lagged first difference of `var` on every level row.
    CollapsedDiff { var: usize, exogenous: bool },
    Constant,
    Dummy { period: i32 },
}

/// Build the level-equation instrument block: lagged first differences
/// (contemporaneous differences for exogenous variables), plus the constant
/// and time-dummy columns when the model declares them.
pub fn build_level_instruments(
    ds: &PanelDataset,
    spec: &InstrumentSpec,
    model: &ModelSpec,
) -> Result<PartialInstruments> {
    spec.validate(ds)?;
    let layout = build_layout(ds, model)?;
    let cols: Vec<&[Option<f64>]> = spec
        .variables
        .iter()
        .map(|(name, _)| ds.column(name))
        .collect::<Result<_>>()?;

    let mut columns: Vec<LevelColumn> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (v, (name, vi)) in spec.variables.iter().enumerate() {
        let exogenous = vi.class == VariableClass::Exogenous;
        if vi.collapsed {
            columns.push(LevelColumn::CollapsedDiff { var: v, exogenous });
            labels.push(format!("l.D{name}c"));
        } else {
            for &t in &layout.level_periods {
                // the difference must be formable from observed years:
                // D var_{t-1} reaches back to t-2, D var_t to t-1
                let reach = if exogenous { t - 1 } else { t - 2 };
                if reach < layout.first_year {
                    continue;
                }
                columns.push(LevelColumn::GmmDiff { var: v, period: t, exogenous });
                labels.push(format!("l.D{name}[t{t}]"));
            }
        }
    }
    if model.constant_in_levels {
        columns.push(LevelColumn::Constant);
        labels.push("l.const".to_string());
    }
    if model.time_dummies {
        for &t in &layout.dummy_periods {
            columns.push(LevelColumn::Dummy { period: t });
            labels.push(format!("l.yr{t}"));
        }
    }

    let mut blocks = Vec::with_capacity(layout.units.len());
    for ue in &layout.units {
        let mut z = DMatrix::zeros(ue.level_years.len(), columns.len());
        for (r, &year) in ue.level_years.iter().enumerate() {
            for (c, rule) in columns.iter().enumerate() {
                z[(r, c)] = match *rule {
                    LevelColumn::GmmDiff { var, period, exogenous } => {
                        if year == period {
                            let date = if exogenous { year } else { year - 1 };
                            diff_at(ds, cols[var], ue.unit, date).unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    }
                    LevelColumn::CollapsedDiff { var, exogenous } => {
                        let date = if exogenous { year } else { year - 1 };
                        diff_at(ds, cols[var], ue.unit, date).unwrap_or(0.0)
                    }
                    LevelColumn::Constant => 1.0,
                    LevelColumn::Dummy { period } => {
                        if year == period {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        blocks.push(z);
    }

    Ok(PartialInstruments { block: BlockKind::Level, labels, blocks, layout })
}

/// Instrument block of one unit: differenced-equation rows stacked above
/// level-equation rows, one column per instrument.
#[derive(Clone, Debug)]
pub struct UnitBlock {
    pub unit: usize,
    pub diff_years: Vec<i32>,
    pub level_years: Vec<i32>,
    pub z: DMatrix<f64>,
}

/// The assembled system instrument matrix.
#[derive(Clone, Debug)]
pub struct InstrumentMatrix {
    pub labels: Vec<String>,
    pub units: Vec<UnitBlock>,
    pub layout: SystemLayout,
    /// Construction warnings (instrument proliferation and the like).
    pub warnings: Vec<String>,
}

impl InstrumentMatrix {
    pub fn column_count(&self) -> usize {
        self.labels.len()
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn total_rows(&self) -> usize {
        self.units.iter().map(|b| b.z.nrows()).sum()
    }

    /// Direct constructor for callers that assemble their own blocks (used
    /// by exactly-identified test systems where Z is set to X).
    pub fn from_blocks(
        labels: Vec<String>,
        units: Vec<UnitBlock>,
        layout: SystemLayout,
    ) -> Result<Self> {
        for b in &units {
            if b.z.ncols() != labels.len() {
                return Err(Error::config("instrument block column count mismatch"));
            }
            if b.z.nrows() != b.diff_years.len() + b.level_years.len() {
                return Err(Error::config("instrument block row count mismatch"));
            }
        }
        Ok(Self { labels, units, layout, warnings: Vec::new() })
    }
}

/// Stack the two partial blocks block-diagonally per unit: difference
/// instruments are zero on level rows and vice versa.
///
/// Emits a warning when the instrument count reaches the unit count (the
/// too-many-instruments rule of thumb).
pub fn assemble_system(
    diff: &PartialInstruments,
    level: &PartialInstruments,
) -> Result<InstrumentMatrix> {
    if diff.block != BlockKind::Difference || level.block != BlockKind::Level {
        return Err(Error::config("assemble_system needs one block of each kind"));
    }
    if diff.layout != level.layout {
        return Err(Error::config(
            "difference and level instruments were built from different layouts",
        ));
    }
    let layout = &diff.layout;
    if layout.n_diff_rows + layout.n_level_rows == 0 {
        return Err(Error::data("no usable equations"));
    }

    let zd = diff.labels.len();
    let zl = level.labels.len();
    let mut labels = diff.labels.clone();
    labels.extend(level.labels.iter().cloned());

    let mut units = Vec::with_capacity(layout.units.len());
    for (i, ue) in layout.units.iter().enumerate() {
        let (nd, nl) = (ue.diff_years.len(), ue.level_years.len());
        let mut z = DMatrix::zeros(nd + nl, zd + zl);
        z.view_mut((0, 0), (nd, zd)).copy_from(&diff.blocks[i]);
        z.view_mut((nd, zd), (nl, zl)).copy_from(&level.blocks[i]);
        units.push(UnitBlock {
            unit: ue.unit,
            diff_years: ue.diff_years.clone(),
            level_years: ue.level_years.clone(),
            z,
        });
    }

    let mut warnings = Vec::new();
    if zd + zl >= units.len() {
        warnings.push(format!(
            "instrument count {} is at or above the unit count {}; estimates may overfit \
             the endogenous variables (consider collapsed instruments)",
            zd + zl,
            units.len()
        ));
    }

    Ok(InstrumentMatrix { labels, units, layout: layout.clone(), warnings })
}
