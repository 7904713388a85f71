//! Long-format panel data: ingestion, deflation, log transforms, lags.
//!
//! A [`PanelDataset`] holds farm-by-year observations in column-oriented form,
//! sorted by (unit, year) with rows of each unit contiguous. Missing values
//! are explicit (`Option<f64>`), never sentinel numbers. Years are calendar
//! integers and may have gaps; lag operations respect the calendar, so a lag
//! across a gap is missing rather than the previous stored row.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transform state of a variable column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformState {
    Raw,
    Deflated,
    Logged,
}

/// Registry entry for one variable column.
#[derive(Clone, Debug)]
pub struct VariableInfo {
    pub unit_of_measure: String,
    pub state: TransformState,
}

/// Price indices keyed by (country, year, category), base period = 1.0.
#[derive(Clone, Debug, Default)]
pub struct PriceIndexTable {
    entries: BTreeMap<(String, i32, String), f64>,
}

impl PriceIndexTable {
    /// Build a table from (country, year, category, index) tuples.
    ///
    /// Every index must be strictly positive and each (country, category)
    /// group must contain a base period with index 1.0.
    pub fn from_entries(entries: Vec<(String, i32, String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (country, year, category, value) in entries {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::data(format!(
                    "price index for ({country}, {year}, {category}) must be positive, got {value}"
                )));
            }
            if map.insert((country.clone(), year, category.clone()), value).is_some() {
                return Err(Error::data(format!(
                    "duplicate price index entry ({country}, {year}, {category})"
                )));
            }
        }
        // every (country, category) needs a base period
        let mut has_base: BTreeMap<(String, String), bool> = BTreeMap::new();
        for ((country, _, category), value) in &map {
            let entry = has_base
                .entry((country.clone(), category.clone()))
                .or_insert(false);
            if (value - 1.0).abs() < 1e-9 {
                *entry = true;
            }
        }
        for ((country, category), ok) in &has_base {
            if !ok {
                return Err(Error::data(format!(
                    "price index group ({country}, {category}) has no base period with index 1.0"
                )));
            }
        }
        Ok(Self { entries: map })
    }

    /// Load from a CSV file with header `country,year,category,index`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 4 {
                return Err(Error::data(format!(
                    "price index row {}: expected 4 fields, got {}",
                    i + 2,
                    record.len()
                )));
            }
            let year: i32 = record[1].trim().parse().map_err(|_| {
                Error::data(format!("price index row {}: bad year `{}`", i + 2, &record[1]))
            })?;
            let value: f64 = record[3].trim().parse().map_err(|_| {
                Error::data(format!("price index row {}: bad index `{}`", i + 2, &record[3]))
            })?;
            entries.push((record[0].trim().to_string(), year, record[2].trim().to_string(), value));
        }
        Self::from_entries(entries)
    }

    pub fn get(&self, country: &str, year: i32, category: &str) -> Option<f64> {
        self.entries
            .get(&(country.to_string(), year, category.to_string()))
            .copied()
    }
}

/// Maps logical variable names to CSV column headers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelSchema {
    /// Header of the unit identifier column.
    pub unit: String,
    /// Header of the calendar year column.
    pub year: String,
    /// Numeric variables: logical name -> column header.
    #[serde(default)]
    pub variables: BTreeMap<String, String>,
    /// Text variables (country, region, ...): logical name -> column header.
    #[serde(default)]
    pub text: BTreeMap<String, String>,
}

/// One unparseable numeric cell found during ingestion.
#[derive(Clone, Debug)]
pub struct BadCell {
    /// 1-based data row index (header excluded).
    pub row: usize,
    pub column: String,
    pub content: String,
}

/// Ingestion outcome: row count plus cells that failed numeric parsing.
/// Bad cells become missing values; the rows are retained.
#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub rows_read: usize,
    pub bad_cells: Vec<BadCell>,
}

/// Policy for non-positive values encountered by [`PanelDataset::log_transform`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogPolicy {
    /// Any zero or negative value is a hard error.
    Error,
    /// Rows containing a non-positive value in any transformed variable are
    /// dropped; the report records how many and which.
    DropRows,
}

/// Outcome of a log transform under [`LogPolicy::DropRows`].
#[derive(Clone, Debug, Default)]
pub struct LogReport {
    pub rows_dropped: usize,
    /// (unit, year, variable) of each non-positive cell that caused a drop.
    pub offenders: Vec<(String, i32, String)>,
}

/// Column-oriented unbalanced panel, rows sorted by (unit, year).
#[derive(Clone, Debug)]
pub struct PanelDataset {
    /// Unique unit identifiers, sorted; parallel to `unit_ranges`.
    unit_names: Vec<String>,
    /// Half-open row range [start, end) of each unit.
    unit_ranges: Vec<(usize, usize)>,
    /// Per-row index into `unit_names`.
    row_unit: Vec<usize>,
    /// Per-row calendar year.
    years: Vec<i32>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
    text_columns: BTreeMap<String, Vec<String>>,
    registry: BTreeMap<String, VariableInfo>,
}

impl PanelDataset {
    /// Assemble a panel from parallel per-row vectors.
    ///
    /// Rows may arrive in any order; they are sorted by (unit, year) and a
    /// duplicate (unit, year) pair is a hard error.
    pub fn from_parts(
        units: Vec<String>,
        years: Vec<i32>,
        numeric: Vec<(String, Vec<Option<f64>>)>,
        text: Vec<(String, Vec<String>)>,
    ) -> Result<Self> {
        let n = units.len();
        if years.len() != n {
            return Err(Error::data("unit and year vectors differ in length"));
        }
        for (name, col) in &numeric {
            if col.len() != n {
                return Err(Error::data(format!("column `{name}` has wrong length")));
            }
        }
        for (name, col) in &text {
            if col.len() != n {
                return Err(Error::data(format!("text column `{name}` has wrong length")));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| units[a].cmp(&units[b]).then(years[a].cmp(&years[b])));
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            if units[a] == units[b] && years[a] == years[b] {
                return Err(Error::data(format!(
                    "duplicate observation (unit `{}`, year {})",
                    units[a], years[a]
                )));
            }
        }

        let sorted_years: Vec<i32> = order.iter().map(|&i| years[i]).collect();
        let mut unit_names: Vec<String> = Vec::new();
        let mut unit_ranges: Vec<(usize, usize)> = Vec::new();
        let mut row_unit: Vec<usize> = Vec::with_capacity(n);
        for (pos, &i) in order.iter().enumerate() {
            if unit_names.last().map(String::as_str) != Some(units[i].as_str()) {
                if let Some(last) = unit_ranges.last_mut() {
                    last.1 = pos;
                }
                unit_names.push(units[i].clone());
                unit_ranges.push((pos, n));
            }
            row_unit.push(unit_names.len() - 1);
        }

        let mut columns = BTreeMap::new();
        let mut registry = BTreeMap::new();
        for (name, col) in numeric {
            let sorted: Vec<Option<f64>> = order.iter().map(|&i| col[i]).collect();
            if columns.insert(name.clone(), sorted).is_some() {
                return Err(Error::data(format!("duplicate column name `{name}`")));
            }
            registry.insert(
                name,
                VariableInfo {
                    unit_of_measure: String::from("unspecified"),
                    state: TransformState::Raw,
                },
            );
        }
        let mut text_columns = BTreeMap::new();
        for (name, col) in text {
            if columns.contains_key(&name) {
                return Err(Error::data(format!(
                    "column `{name}` declared both numeric and text"
                )));
            }
            let sorted: Vec<String> = order.iter().map(|&i| col[i].clone()).collect();
            if text_columns.insert(name.clone(), sorted).is_some() {
                return Err(Error::data(format!("duplicate text column name `{name}`")));
            }
        }

        Ok(Self {
            unit_names,
            unit_ranges,
            row_unit,
            years: sorted_years,
            columns,
            text_columns,
            registry,
        })
    }

    /// Numeric-only convenience wrapper around [`PanelDataset::from_parts`].
    pub fn from_columns(
        units: Vec<String>,
        years: Vec<i32>,
        numeric: Vec<(String, Vec<Option<f64>>)>,
    ) -> Result<Self> {
        Self::from_parts(units, years, numeric, Vec::new())
    }

    pub fn n_rows(&self) -> usize {
        self.years.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_names.len()
    }

    /// Unique unit identifiers in row order.
    pub fn unit_names(&self) -> &[String] {
        &self.unit_names
    }

    /// Half-open row range of unit `u`.
    pub fn unit_range(&self, u: usize) -> (usize, usize) {
        self.unit_ranges[u]
    }

    pub fn unit_id(&self, u: usize) -> &str {
        &self.unit_names[u]
    }

    /// Per-row unit index (parallel to rows).
    pub fn row_units(&self) -> &[usize] {
        &self.row_unit
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    /// Row index of (unit `u`, calendar `year`), if observed.
    pub fn row_for_year(&self, u: usize, year: i32) -> Option<usize> {
        let (start, end) = self.unit_ranges[u];
        self.years[start..end]
            .binary_search(&year)
            .ok()
            .map(|off| start + off)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::data(format!("unknown variable `{name}`")))
    }

    pub fn text_column(&self, name: &str) -> Result<&[String]> {
        self.text_columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::data(format!("unknown text column `{name}`")))
    }

    pub fn text_column_names(&self) -> Vec<&str> {
        self.text_columns.keys().map(String::as_str).collect()
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.columns.keys().map(String::as_str).collect()
    }

    pub fn variable_info(&self, name: &str) -> Option<&VariableInfo> {
        self.registry.get(name)
    }

    /// Set the unit of measure recorded for a variable.
    pub fn set_unit_of_measure(&mut self, name: &str, uom: &str) -> Result<()> {
        let info = self
            .registry
            .get_mut(name)
            .ok_or_else(|| Error::data(format!("unknown variable `{name}`")))?;
        info.unit_of_measure = uom.to_string();
        Ok(())
    }

    /// Declare the transform state of an externally constructed column
    /// (e.g. a synthetic panel whose variables are generated in logs).
    pub fn declare_state(&mut self, name: &str, state: TransformState) -> Result<()> {
        let info = self
            .registry
            .get_mut(name)
            .ok_or_else(|| Error::data(format!("unknown variable `{name}`")))?;
        info.state = state;
        Ok(())
    }

    /// Add a derived numeric column (same row order as the dataset).
    pub fn insert_column(&mut self, name: &str, values: Vec<Option<f64>>, state: TransformState) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::data(format!("column `{name}` has wrong length")));
        }
        if self.columns.contains_key(name) || self.text_columns.contains_key(name) {
            return Err(Error::data(format!("column `{name}` already exists")));
        }
        self.columns.insert(name.to_string(), values);
        self.registry.insert(
            name.to_string(),
            VariableInfo {
                unit_of_measure: String::from("unspecified"),
                state,
            },
        );
        Ok(())
    }

    /// Remove a variable column and its registry entry.
    pub fn drop_column(&mut self, name: &str) -> Result<()> {
        if self.columns.remove(name).is_none() {
            return Err(Error::data(format!("unknown variable `{name}`")));
        }
        self.registry.remove(name);
        Ok(())
    }

    /// Replace the values of an existing column, keeping its registry entry.
    pub fn replace_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::data(format!("column `{name}` has wrong length")));
        }
        match self.columns.get_mut(name) {
            Some(col) => {
                *col = values;
                Ok(())
            }
            None => Err(Error::data(format!("unknown variable `{name}`"))),
        }
    }

    /// Append `var_lag_k`: the value of `var` at calendar year t−k of the
    /// same unit, missing when that year is unobserved (gaps break lags).
    pub fn lag(&self, var: &str, k: u32) -> Result<PanelDataset> {
        if k == 0 {
            return Err(Error::config("lag order must be at least 1"));
        }
        let source = self.column(var)?.to_vec();
        let state = self.registry[var].state;
        let mut lagged: Vec<Option<f64>> = vec![None; self.n_rows()];
        for u in 0..self.n_units() {
            let (start, end) = self.unit_ranges[u];
            for row in start..end {
                let target_year = self.years[row] - k as i32;
                if let Some(src) = self.row_for_year(u, target_year) {
                    lagged[row] = source[src];
                }
            }
        }
        let mut out = self.clone();
        out.insert_column(&format!("{var}_lag_{k}"), lagged, state)?;
        Ok(out)
    }

    /// Divide each mapped variable by its (country, year, category) price
    /// index. Requires a `country` text column; every index needed by a
    /// present value must exist.
    pub fn deflate(
        &self,
        idx: &PriceIndexTable,
        mapping: &BTreeMap<String, String>,
    ) -> Result<PanelDataset> {
        let country = self
            .text_columns
            .get("country")
            .ok_or_else(|| Error::data("deflation requires a `country` text column"))?
            .clone();
        let mut out = self.clone();
        let mut missing: BTreeSet<(String, i32, String)> = BTreeSet::new();
        for (var, category) in mapping {
            let info = out
                .registry
                .get(var)
                .ok_or_else(|| Error::data(format!("unknown variable `{var}`")))?;
            if info.state != TransformState::Raw {
                return Err(Error::data(format!(
                    "variable `{var}` is not raw (state {:?}); refusing to deflate twice",
                    info.state
                )));
            }
            let col = out.columns.get_mut(var).expect("registry and columns agree");
            for row in 0..col.len() {
                if let Some(v) = col[row] {
                    match idx.get(&country[row], self.years[row], category) {
                        Some(index) => col[row] = Some(v / index),
                        None => {
                            missing.insert((
                                country[row].clone(),
                                self.years[row],
                                category.clone(),
                            ));
                        }
                    }
                }
            }
        }
        if !missing.is_empty() {
            let list: Vec<String> = missing
                .iter()
                .map(|(c, y, cat)| format!("({c}, {y}, {cat})"))
                .collect();
            return Err(Error::data(format!(
                "missing price index entries: {}",
                list.join(", ")
            )));
        }
        for var in mapping.keys() {
            out.registry.get_mut(var).expect("checked above").state = TransformState::Deflated;
        }
        Ok(out)
    }

    /// Natural-log transform the listed variables in place.
    ///
    /// Non-positive values are a hard error under [`LogPolicy::Error`]; under
    /// [`LogPolicy::DropRows`] the offending rows are removed and reported.
    pub fn log_transform(
        &self,
        vars: &[&str],
        policy: LogPolicy,
    ) -> Result<(PanelDataset, LogReport)> {
        for var in vars {
            let info = self
                .registry
                .get(*var)
                .ok_or_else(|| Error::data(format!("unknown variable `{var}`")))?;
            if info.state == TransformState::Logged {
                return Err(Error::data(format!(
                    "variable `{var}` is already logged"
                )));
            }
        }

        // locate non-positive cells first
        let mut report = LogReport::default();
        let mut drop_row = vec![false; self.n_rows()];
        for var in vars {
            let col = &self.columns[*var];
            for row in 0..col.len() {
                if let Some(v) = col[row] {
                    if v <= 0.0 {
                        let unit = self.unit_names[self.row_unit[row]].clone();
                        match policy {
                            LogPolicy::Error => {
                                return Err(Error::data(format!(
                                    "log of non-positive value {v} at (unit `{unit}`, year {}, variable `{var}`)",
                                    self.years[row]
                                )));
                            }
                            LogPolicy::DropRows => {
                                report
                                    .offenders
                                    .push((unit, self.years[row], (*var).to_string()));
                                drop_row[row] = true;
                            }
                        }
                    }
                }
            }
        }

        let mut out = if drop_row.iter().any(|&d| d) {
            report.rows_dropped = drop_row.iter().filter(|&&d| d).count();
            self.retain_rows(&drop_row.iter().map(|&d| !d).collect::<Vec<bool>>())
        } else {
            self.clone()
        };
        for var in vars {
            let col = out.columns.get_mut(*var).expect("retain preserves columns");
            for cell in col.iter_mut() {
                if let Some(v) = *cell {
                    *cell = Some(v.ln());
                }
            }
            out.registry.get_mut(*var).expect("checked").state = TransformState::Logged;
        }
        Ok((out, report))
    }

    /// Keep rows flagged true, preserving order and rebuilding unit ranges.
    fn retain_rows(&self, keep: &[bool]) -> PanelDataset {
        let units: Vec<String> = (0..self.n_rows())
            .filter(|&r| keep[r])
            .map(|r| self.unit_names[self.row_unit[r]].clone())
            .collect();
        let years: Vec<i32> = (0..self.n_rows()).filter(|&r| keep[r]).map(|r| self.years[r]).collect();
        let numeric: Vec<(String, Vec<Option<f64>>)> = self
            .columns
            .iter()
            .map(|(name, col)| {
                (
                    name.clone(),
                    (0..col.len()).filter(|&r| keep[r]).map(|r| col[r]).collect(),
                )
            })
            .collect();
        let text: Vec<(String, Vec<String>)> = self
            .text_columns
            .iter()
            .map(|(name, col)| {
                (
                    name.clone(),
                    (0..col.len())
                        .filter(|&r| keep[r])
                        .map(|r| col[r].clone())
                        .collect(),
                )
            })
            .collect();
        let mut out = PanelDataset::from_parts(units, years, numeric, text)
            .expect("filtered rows keep (unit, year) unique");
        out.registry = self.registry.clone();
        out
    }

    /// Write the panel back to CSV (unit, year, text columns, variables).
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["unit".to_string(), "year".to_string()];
        let text_names: Vec<String> = self.text_columns.keys().cloned().collect();
        let var_names: Vec<String> = self.columns.keys().cloned().collect();
        header.extend(text_names.iter().cloned());
        header.extend(var_names.iter().cloned());
        writer.write_record(&header)?;
        for row in 0..self.n_rows() {
            let mut record = vec![
                self.unit_names[self.row_unit[row]].clone(),
                self.years[row].to_string(),
            ];
            for name in &text_names {
                record.push(self.text_columns[name][row].clone());
            }
            for name in &var_names {
                record.push(match self.columns[name][row] {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Load a CSV panel using `schema` to map logical names to headers.
///
/// Unparseable numeric cells become missing values and are collected in the
/// report with their row index; duplicate (unit, year) pairs are hard errors.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<(PanelDataset, IngestReport)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |header: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == header)
            .ok_or_else(|| Error::data(format!("column `{header}` not found in {}", path.display())))
    };

    let unit_pos = position(&schema.unit)?;
    let year_pos = position(&schema.year)?;
    let var_pos: Vec<(String, usize)> = schema
        .variables
        .iter()
        .map(|(name, header)| Ok((name.clone(), position(header)?)))
        .collect::<Result<_>>()?;
    let text_pos: Vec<(String, usize)> = schema
        .text
        .iter()
        .map(|(name, header)| Ok((name.clone(), position(header)?)))
        .collect::<Result<_>>()?;

    let mut units: Vec<String> = Vec::new();
    let mut years: Vec<i32> = Vec::new();
    let mut numeric: Vec<(String, Vec<Option<f64>>)> =
        var_pos.iter().map(|(name, _)| (name.clone(), Vec::new())).collect();
    let mut text: Vec<(String, Vec<String>)> =
        text_pos.iter().map(|(name, _)| (name.clone(), Vec::new())).collect();
    let mut report = IngestReport::default();

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_index = i + 1; // 1-based data row
        let unit = record
            .get(unit_pos)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::data(format!("row {row_index}: empty unit identifier")))?;
        let year_text = record.get(year_pos).map(str::trim).unwrap_or("");
        let year: i32 = year_text.parse().map_err(|_| {
            Error::data(format!("row {row_index}: unparseable year `{year_text}`"))
        })?;
        units.push(unit.to_string());
        years.push(year);
        for (j, (name, pos)) in var_pos.iter().enumerate() {
            let cell = record.get(*pos).map(str::trim).unwrap_or("");
            let value = if cell.is_empty() {
                None
            } else {
                match cell.parse::<f64>() {
                    Ok(v) => Some(v),
                    Err(_) => {
                        report.bad_cells.push(BadCell {
                            row: row_index,
                            column: name.clone(),
                            content: cell.to_string(),
                        });
                        None
                    }
                }
            };
            numeric[j].1.push(value);
        }
        for (j, (_, pos)) in text_pos.iter().enumerate() {
            text[j].1.push(record.get(*pos).map(str::trim).unwrap_or("").to_string());
        }
        report.rows_read += 1;
    }

    let ds = PanelDataset::from_parts(units, years, numeric, text)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use std::io::Write;

    fn two_farm_panel() -> PanelDataset {
        PanelDataset::from_columns(
            vec!["a".into(), "a".into(), "a".into(), "b".into(), "b".into()],
            vec![2009, 2010, 2011, 2009, 2011],
            vec![(
                "x".to_string(),
                vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)],
            )],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_unit_year_is_error() {
        let err = PanelDataset::from_columns(
            vec!["a".into(), "a".into()],
            vec![2010, 2010],
            vec![("x".to_string(), vec![Some(1.0), Some(2.0)])],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a") && msg.contains("2010"), "got: {msg}");
    }

    #[test]
    fn lag_respects_calendar_gaps() {
        // farm a: 2009-2011 consecutive; farm b: 2009, 2011 with a gap
        let ds = two_farm_panel().lag("x", 1).unwrap();
        let lagged = ds.column("x_lag_1").unwrap();
        // farm a rows are 2009, 2010, 2011 -> (missing, 1, 2)
        assert_eq!(lagged[0], None);
        assert_eq!(lagged[1], Some(1.0));
        assert_eq!(lagged[2], Some(2.0));
        // farm b 2011 lags across the 2010 gap -> missing
        assert_eq!(lagged[3], None);
        assert_eq!(lagged[4], None);
    }

    #[test]
    fn lag_two_on_two_year_unit_is_all_missing() {
        let ds = PanelDataset::from_columns(
            vec!["a".into(), "a".into()],
            vec![2009, 2010],
            vec![("x".to_string(), vec![Some(1.0), Some(2.0)])],
        )
        .unwrap()
        .lag("x", 2)
        .unwrap();
        assert!(ds.column("x_lag_2").unwrap().iter().all(Option::is_none));
    }

    #[test]
    fn lag_composition_matches_double_lag() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut units = Vec::new();
        let mut years = Vec::new();
        let mut values = Vec::new();
        for u in 0..20 {
            for year in 2008..2018 {
                // random gaps
                if rng.random::<f64>() < 0.25 {
                    continue;
                }
                units.push(format!("farm{u}"));
                years.push(year);
                values.push(Some(rng.random::<f64>()));
            }
        }
        let ds = PanelDataset::from_columns(units, years, vec![("x".to_string(), values)]).unwrap();
        let one_one = ds.lag("x", 1).unwrap().lag("x_lag_1", 1).unwrap();
        let two = ds.lag("x", 2).unwrap();
        let a = one_one.column("x_lag_1_lag_1").unwrap();
        let b = two.column("x_lag_2").unwrap();
        for (row, (&ai, &bi)) in a.iter().zip(b.iter()).enumerate() {
            if let (Some(x), Some(y)) = (ai, bi) {
                assert_eq!(x, y, "row {row}");
            }
            // lag(lag(x,1),1) can only be defined where the intermediate
            // year exists, so it is missing at least as often as lag 2
            if ai.is_some() {
                assert!(bi.is_some(), "row {row}: composed lag defined but direct lag missing");
            }
        }
    }

    #[test]
    fn deflate_divides_by_index() {
        let ds = PanelDataset::from_parts(
            vec!["a".into(), "a".into()],
            vec![2009, 2010],
            vec![("v".to_string(), vec![Some(110.0), Some(121.0)])],
            vec![("country".to_string(), vec!["IT".into(), "IT".into()])],
        )
        .unwrap();
        let idx = PriceIndexTable::from_entries(vec![
            ("IT".into(), 2009, "output".into(), 1.10),
            ("IT".into(), 2010, "output".into(), 1.21),
            ("IT".into(), 2008, "output".into(), 1.0),
        ])
        .unwrap();
        let mapping = BTreeMap::from([("v".to_string(), "output".to_string())]);
        let out = ds.deflate(&idx, &mapping).unwrap();
        let col = out.column("v").unwrap();
        assert!((col[0].unwrap() - 100.0).abs() < 1e-12);
        assert!((col[1].unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(out.variable_info("v").unwrap().state, TransformState::Deflated);

        // deflating again is a state error
        assert!(out.deflate(&idx, &mapping).is_err());
    }

    #[test]
    fn deflate_missing_index_lists_triples() {
        let ds = PanelDataset::from_parts(
            vec!["a".into()],
            vec![2012],
            vec![("v".to_string(), vec![Some(1.0)])],
            vec![("country".to_string(), vec!["FR".into()])],
        )
        .unwrap();
        let idx = PriceIndexTable::from_entries(vec![("FR".into(), 2011, "output".into(), 1.0)]).unwrap();
        let mapping = BTreeMap::from([("v".to_string(), "output".to_string())]);
        let msg = ds.deflate(&idx, &mapping).unwrap_err().to_string();
        assert!(msg.contains("FR") && msg.contains("2012") && msg.contains("output"), "got: {msg}");
    }

    #[test]
    fn log_transform_values_and_policies() {
        let ds = PanelDataset::from_columns(
            vec!["a".into(), "a".into(), "a".into()],
            vec![2009, 2010, 2011],
            vec![("x".to_string(), vec![Some(std::f64::consts::E), Some(1.0), Some(0.0)])],
        )
        .unwrap();
        // hard error policy names the offender
        let msg = ds.log_transform(&["x"], LogPolicy::Error).unwrap_err().to_string();
        assert!(msg.contains("2011") && msg.contains("x"), "got: {msg}");

        // drop policy removes the zero row and reports it
        let (out, report) = ds.log_transform(&["x"], LogPolicy::DropRows).unwrap();
        assert_eq!(report.rows_dropped, 1);
        assert_eq!(report.offenders, vec![("a".to_string(), 2011, "x".to_string())]);
        let col = out.column("x").unwrap();
        assert_eq!(out.n_rows(), 2);
        assert!((col[0].unwrap() - 1.0).abs() < 1e-15);
        assert!((col[1].unwrap() - 0.0).abs() < 1e-15);
        assert_eq!(out.variable_info("x").unwrap().state, TransformState::Logged);

        // logging twice is a state error
        assert!(out.log_transform(&["x"], LogPolicy::Error).is_err());
    }

    #[test]
    fn log_round_trip_and_deflate_commute() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 200;
        let units: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        let years: Vec<i32> = vec![2010; n];
        let values: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random::<f64>() * 1e4 + 0.5)).collect();
        let ds = PanelDataset::from_parts(
            units.clone(),
            years.clone(),
            vec![("v".to_string(), values.clone())],
            vec![("country".to_string(), vec!["IT".to_string(); n])],
        )
        .unwrap();

        // exp(log x) == x to 1e-12 relative (columns compared in dataset
        // row order, which sorts by unit id)
        let (logged, _) = ds.log_transform(&["v"], LogPolicy::Error).unwrap();
        for (orig, log_v) in ds.column("v").unwrap().iter().zip(logged.column("v").unwrap()) {
            let (o, l) = (orig.unwrap(), log_v.unwrap());
            assert!((l.exp() - o).abs() / o < 1e-12);
        }

        // deflate-then-log == log-then-subtract-log-index
        let index_value = 1.37;
        let idx = PriceIndexTable::from_entries(vec![
            ("IT".into(), 2010, "output".into(), index_value),
            ("IT".into(), 2009, "output".into(), 1.0),
        ])
        .unwrap();
        let mapping = BTreeMap::from([("v".to_string(), "output".to_string())]);
        let (deflate_log, _) = ds
            .deflate(&idx, &mapping)
            .unwrap()
            .log_transform(&["v"], LogPolicy::Error)
            .unwrap();
        for (a, b) in deflate_log.column("v").unwrap().iter().zip(logged.column("v").unwrap()) {
            let lhs = a.unwrap();
            let rhs = b.unwrap() - index_value.ln();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn load_panel_counts_and_reports() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "id,yr,output").unwrap();
        writeln!(file, "a,2010,10.5").unwrap();
        writeln!(file, "a,2011,oops").unwrap();
        writeln!(file, "b,2010,").unwrap();
        file.flush().unwrap();

        let schema = PanelSchema {
            unit: "id".into(),
            year: "yr".into(),
            variables: BTreeMap::from([("y".to_string(), "output".to_string())]),
            text: BTreeMap::new(),
        };
        let (ds, report) = load_panel(file.path(), &schema).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_units(), 2);
        assert_eq!(report.rows_read, 3);
        // the unparseable cell is reported with its row, not dropped
        assert_eq!(report.bad_cells.len(), 1);
        assert_eq!(report.bad_cells[0].row, 2);
        assert_eq!(report.bad_cells[0].content, "oops");
        let y = ds.column("y").unwrap();
        assert_eq!(y[0], Some(10.5));
        assert_eq!(y[1], None); // bad cell
        assert_eq!(y[2], None); // empty cell

        // duplicated (unit, year) in the file is a hard error
        let mut dup = tempfile::NamedTempFile::new().unwrap();
        writeln!(dup, "id,yr,output").unwrap();
        writeln!(dup, "a,2010,1").unwrap();
        writeln!(dup, "a,2010,2").unwrap();
        dup.flush().unwrap();
        let err = load_panel(dup.path(), &schema).unwrap_err().to_string();
        assert!(err.contains("a") && err.contains("2010"), "got: {err}");
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let ds = two_farm_panel();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        ds.to_csv(&path).unwrap();
        let schema = PanelSchema {
            unit: "unit".into(),
            year: "year".into(),
            variables: BTreeMap::from([("x".to_string(), "x".to_string())]),
            text: BTreeMap::new(),
        };
        let (back, report) = load_panel(&path, &schema).unwrap();
        assert!(report.bad_cells.is_empty());
        assert_eq!(back.n_rows(), ds.n_rows());
        assert_eq!(back.column("x").unwrap(), ds.column("x").unwrap());
        assert_eq!(back.years(), ds.years());
    }
}
