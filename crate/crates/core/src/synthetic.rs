//! Synthetic panels with known parameters: the correctness oracle for the
//! estimators and the Monte Carlo harness.
//!
//! The production DGP follows the dynamic law used by the estimators: log
//! output is elasticity-weighted log inputs plus a farm fixed effect, an
//! AR(1) productivity term with |rho| < 1 initialized at its stationary
//! distribution, a year effect, and optional measurement error. State inputs
//! (capital, labour) evolve independently of current productivity shocks;
//! free inputs (intermediate inputs, materials, subsidies) load on current
//! productivity with configurable strength, which is exactly the
//! simultaneity the GMM estimators must overcome. In `acf_timing` mode,
//! materials instead follows an invertible demand in observed capital,
//! labour, and current productivity — the scalar-unobservable setting the
//! control-function estimator needs to read productivity off the inputs.
//!
//! Reproducibility: one ChaCha12 generator seeded from the configured seed,
//! with stream 0 reserved for panel-wide draws (year effects) and stream
//! i+1 for unit i. Units can therefore be generated in any order, or in
//! parallel, with bit-identical results.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, TransformState};

/// Shape of the measurement-error process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorType {
    /// Homoskedastic white noise.
    Iid,
    /// Per-unit error scale (log-normal with mean 1) on both the
    /// productivity innovation and the measurement error.
    Heteroskedastic,
    /// First-order moving-average measurement error with coefficient 0.5,
    /// normalized to keep the configured variance. Breaks the MA(0)
    /// assumption the serial-correlation diagnostics check.
    Ma1,
}

/// Configuration of the production-function DGP.
///
/// `beta` and `input_means` are ordered (capital, labour, intermediate
/// inputs, materials, subsidies) = (k, l, n, m, g).
#[derive(Clone, Debug)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Productivity persistence, |rho| < 1.
    pub rho: f64,
    /// Factor elasticities (k, l, n, m, g).
    pub beta: [f64; 5],
    /// Intercept of log output.
    pub alpha: f64,
    /// Standard deviation of the drawn year effects.
    pub year_effect_sd: f64,
    /// Standard deviation of the farm fixed effect eta.
    pub fixed_effect_sd: f64,
    /// Standard deviation of the productivity innovation xi. Keep this
    /// comparable to `input_shock_sd`: productivity variation is what lets
    /// deep-lag instruments tell an input apart from its own first lag, so a
    /// near-silent omega leaves the unrestricted dynamic coefficients on the
    /// endogenous inputs weakly identified.
    pub tfp_shock_sd: f64,
    /// Standard deviation of measurement error epsilon. The default is 0:
    /// with rho != 0, measurement error makes second-lag instruments
    /// invalid, so noise is opt-in for tests that want exactly that.
    pub measurement_sd: f64,
    /// Loading of the free inputs (n, m, g) on current productivity omega.
    pub endogeneity_strength: f64,
    /// Generate materials by an invertible demand function instead of an
    /// autonomous process: m responds to observed capital, labour, and
    /// current productivity, with no shock of its own, so productivity is an
    /// exact function of observables. This is the setting the
    /// control-function estimator assumes (it recovers productivity from the
    /// first-stage projection); under the default `false`, materials carry
    /// an independent AR(2) component and no estimator can read productivity
    /// off the observed inputs. Pair with `fixed_effect_sd = 0` when the
    /// control-function estimator is the target: a farm effect in output is
    /// invisible to the demand function and poisons the recovered series.
    pub acf_timing: bool,
    pub error_type: ErrorType,
    /// Log-scale means of the five inputs.
    pub input_means: [f64; 5],
    /// AR(1) persistence of the state-input (k, l) deviation processes.
    pub input_persistence: f64,
    /// AR(2) coefficients of the free-input (n, m, g) deviation processes.
    /// Two distinct autoregressive roots give the deep-lag instruments a
    /// second direction of variation per input, which keeps the current and
    /// lagged coefficients of an endogenous input separately identified;
    /// `[phi, 0.0]` collapses to the state-input AR(1) case and re-creates
    /// that degeneracy on purpose.
    pub free_input_persistence: [f64; 2],
    /// Innovation standard deviation of the input processes.
    pub input_shock_sd: f64,
    /// Loading of every input on the farm fixed effect.
    pub input_fixed_loading: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_units: 500,
            n_periods: 8,
            rho: 0.2,
            beta: [0.3, 0.1, 0.2, 0.6, 0.05],
            alpha: 0.5,
            year_effect_sd: 0.05,
            fixed_effect_sd: 0.3,
            tfp_shock_sd: 0.3,
            measurement_sd: 0.0,
            endogeneity_strength: 0.5,
            acf_timing: false,
            error_type: ErrorType::Iid,
            input_means: [12.0, 10.0, 8.0, 10.0, 9.0],
            input_persistence: 0.8,
            free_input_persistence: [0.2, 0.6],
            input_shock_sd: 0.25,
            input_fixed_loading: 0.5,
            seed: 42,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::config("need at least 2 units"));
        }
        if self.n_periods < 4 {
            return Err(Error::config("need at least 4 periods"));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::config(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.input_persistence.abs() >= 1.0 {
            return Err(Error::config("|input_persistence| must be < 1"));
        }
        let [p1, p2] = self.free_input_persistence;
        if p2.abs() >= 1.0 || p1 + p2 >= 1.0 || p2 - p1 >= 1.0 {
            return Err(Error::config(
                "free_input_persistence must lie in the AR(2) stationarity triangle",
            ));
        }
        for (name, sd) in [
            ("year_effect_sd", self.year_effect_sd),
            ("fixed_effect_sd", self.fixed_effect_sd),
            ("tfp_shock_sd", self.tfp_shock_sd),
            ("measurement_sd", self.measurement_sd),
            ("input_shock_sd", self.input_shock_sd),
        ] {
            if sd < 0.0 {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// The hidden state behind a generated panel, row-aligned with it.
#[derive(Clone, Debug)]
pub struct DgpTruth {
    pub alpha: f64,
    pub rho: f64,
    pub beta: [f64; 5],
    /// Fixed effect per unit (indexed like the panel's units).
    pub eta: Vec<f64>,
    /// Year effect per period offset 0..T.
    pub year_effects: Vec<f64>,
    /// Productivity state per row.
    pub omega: Vec<f64>,
    /// Measurement error per row.
    pub epsilon: Vec<f64>,
}

/// A generated panel plus the truth that produced it.
#[derive(Clone, Debug)]
pub struct SyntheticPanel {
    pub panel: PanelDataset,
    pub truth: DgpTruth,
}

/// First calendar year of generated panels.
pub const BASE_YEAR: i32 = 2009;

const INPUT_NAMES: [&str; 5] = ["k", "l", "n", "m", "g"];
/// Free inputs load on current productivity; state inputs do not.
const FREE_INPUT: [bool; 5] = [false, false, true, true, true];
/// Column index of materials, the proxy input in `acf_timing` mode.
const MATERIALS: usize = 3;

/// Materials-demand response to capital and labour deviations in
/// `acf_timing` mode.
const MATERIALS_CAPITAL_SLOPE: f64 = 0.3;
const MATERIALS_LABOUR_SLOPE: f64 = 0.2;
/// Curvature of the materials demand (interaction and cubic terms in the
/// state-input deviations). The curvature is what pins down the materials
/// elasticity: a linear demand would make "raise the materials coefficient,
/// lower capital and labour by the demand slopes, shrink productivity"
/// observationally equivalent to the truth, because the residual series
/// stays a perfect AR(1). No coefficient tilt can absorb these terms, and
/// their own serial correlation keeps the quasi-differenced residual
/// correlated with lagged materials, so the equivalence ray is cut.
///
/// The cubic is Hermite-adjusted — x^3 − 3 Var(x) x — which for the
/// Gaussian state deviations is uncorrelated with the deviations at every
/// lag. A raw cubic at this weight would make materials nearly collinear
/// with capital (corr(x^3, x) ≈ 0.77) and no estimator could tell the two
/// elasticities apart; the adjusted form adds curvature without collinearity.
const MATERIALS_INTERACTION: f64 = 0.5;
const MATERIALS_CUBIC: f64 = 1.5;

fn unit_name(i: usize, width: usize) -> String {
    format!("u{i:0width$}")
}

fn name_width(n_units: usize) -> usize {
    std::cmp::max(4, n_units.saturating_sub(1).to_string().len())
}

fn draw(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generate a production panel from the configured DGP.
///
/// The emitted columns y, k, l, n, m, g are logs (registry state Logged).
/// A `country` text column is attached with the single code "SIM".
pub fn generate(cfg: &DgpConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let (n, t) = (cfg.n_units, cfg.n_periods);
    let width = name_width(n);

    // panel-wide draws live on stream 0
    let mut common = ChaCha12Rng::seed_from_u64(cfg.seed);
    common.set_stream(0);
    let year_effects: Vec<f64> = (0..t).map(|_| cfg.year_effect_sd * draw(&mut common)).collect();

    let rows = n * t;
    let mut units = Vec::with_capacity(rows);
    let mut years = Vec::with_capacity(rows);
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(rows); 6]; // y + 5 inputs
    let mut eta_all = Vec::with_capacity(n);
    let mut omega_all = Vec::with_capacity(rows);
    let mut epsilon_all = Vec::with_capacity(rows);

    let stationary_omega_sd = cfg.tfp_shock_sd / (1.0 - cfg.rho * cfg.rho).sqrt();
    let stationary_input_sd =
        cfg.input_shock_sd / (1.0 - cfg.input_persistence * cfg.input_persistence).sqrt();
    // Stationary variance and lag-1 autocorrelation of the free-input AR(2).
    let [phi1, phi2] = cfg.free_input_persistence;
    let shock_var = cfg.input_shock_sd * cfg.input_shock_sd;
    let free_var = shock_var * (1.0 - phi2)
        / ((1.0 + phi2) * ((1.0 - phi2) * (1.0 - phi2) - phi1 * phi1));
    let free_r1 = phi1 / (1.0 - phi2);

    for i in 0..n {
        // each unit draws from its own stream: order-independent generation
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);

        // fixed draw order per unit: eta, error scale, omega path, input
        // paths (k, l, n, m, g), measurement path
        let eta = cfg.fixed_effect_sd * draw(&mut rng);
        let scale_draw = draw(&mut rng);
        let unit_scale = match cfg.error_type {
            ErrorType::Heteroskedastic => (0.5 * scale_draw - 0.125).exp(),
            _ => 1.0,
        };

        let mut omega = vec![0.0; t];
        omega[0] = unit_scale * stationary_omega_sd * draw(&mut rng);
        for s in 1..t {
            omega[s] = cfg.rho * omega[s - 1] + unit_scale * cfg.tfp_shock_sd * draw(&mut rng);
        }

        let mut inputs = vec![vec![0.0; t]; 5];
        for j in 0..5 {
            if cfg.acf_timing && j == MATERIALS {
                // invertible materials demand: a deterministic function of
                // the observed state inputs and current productivity, with
                // no draws of its own (k and l are already generated)
                let (state, rest) = inputs.split_at_mut(MATERIALS);
                let h3 = |x: f64| x * x * x - 3.0 * stationary_input_sd * stationary_input_sd * x;
                for s in 0..t {
                    let dk = state[0][s] - cfg.input_means[0];
                    let dl = state[1][s] - cfg.input_means[1];
                    rest[0][s] = cfg.input_means[j]
                        + cfg.input_fixed_loading * eta
                        + MATERIALS_CAPITAL_SLOPE * dk
                        + MATERIALS_LABOUR_SLOPE * dl
                        + MATERIALS_INTERACTION * dk * dl
                        + MATERIALS_CUBIC * (h3(dk) + h3(dl))
                        + cfg.endogeneity_strength * omega[s];
                }
            } else if FREE_INPUT[j] {
                // AR(2) deviations, initialized from the joint stationary law
                // of two consecutive values.
                let input = &mut inputs[j];
                let mut prev2 = free_var.sqrt() * draw(&mut rng);
                let mut prev = free_r1 * prev2
                    + (free_var * (1.0 - free_r1 * free_r1)).sqrt() * draw(&mut rng);
                for (s, cell) in input.iter_mut().enumerate() {
                    if s > 0 {
                        let next =
                            phi1 * prev + phi2 * prev2 + cfg.input_shock_sd * draw(&mut rng);
                        prev2 = prev;
                        prev = next;
                    }
                    *cell = cfg.input_means[j]
                        + cfg.input_fixed_loading * eta
                        + prev
                        + cfg.endogeneity_strength * omega[s];
                }
            } else {
                let input = &mut inputs[j];
                let mut dev = stationary_input_sd * draw(&mut rng);
                for (s, cell) in input.iter_mut().enumerate() {
                    if s > 0 {
                        dev = cfg.input_persistence * dev + cfg.input_shock_sd * draw(&mut rng);
                    }
                    *cell = cfg.input_means[j] + cfg.input_fixed_loading * eta + dev;
                }
            }
        }

        // measurement error: T+1 underlying draws so the MA(1) has a
        // predecessor at the first period
        let u: Vec<f64> = (0..=t).map(|_| draw(&mut rng)).collect();
        let epsilon: Vec<f64> = (0..t)
            .map(|s| match cfg.error_type {
                ErrorType::Ma1 => {
                    unit_scale * cfg.measurement_sd * (u[s + 1] + 0.5 * u[s]) / 1.25f64.sqrt()
                }
                _ => unit_scale * cfg.measurement_sd * u[s + 1],
            })
            .collect();

        let name = unit_name(i, width);
        for s in 0..t {
            units.push(name.clone());
            years.push(BASE_YEAR + s as i32);
            let mut y = cfg.alpha + year_effects[s] + eta + omega[s] + epsilon[s];
            for j in 0..5 {
                y += cfg.beta[j] * inputs[j][s];
            }
            columns[0].push(Some(y));
            for j in 0..5 {
                columns[j + 1].push(Some(inputs[j][s]));
            }
            omega_all.push(omega[s]);
            epsilon_all.push(epsilon[s]);
        }
        eta_all.push(eta);
    }

    let mut named: Vec<(String, Vec<Option<f64>>)> = Vec::with_capacity(6);
    named.push(("y".to_string(), std::mem::take(&mut columns[0])));
    for (j, name) in INPUT_NAMES.iter().enumerate() {
        named.push((name.to_string(), std::mem::take(&mut columns[j + 1])));
    }
    let text = vec![("country".to_string(), vec!["SIM".to_string(); rows])];
    let mut panel = PanelDataset::from_parts(units, years, named, text)?;
    for name in ["y", "k", "l", "n", "m", "g"] {
        panel.declare_state(name, TransformState::Logged)?;
        panel.set_unit_of_measure(name, "log units")?;
    }

    Ok(SyntheticPanel {
        panel,
        truth: DgpTruth {
            alpha: cfg.alpha,
            rho: cfg.rho,
            beta: cfg.beta,
            eta: eta_all,
            year_effects,
            omega: omega_all,
            epsilon: epsilon_all,
        },
    })
}

const POLICY_NAMES: [&str; 6] = ["CDP", "DDP", "AES", "LFA", "RDP_Other", "RDP_inv"];
const POLICY_MEANS: [f64; 6] = [4_000.0, 12_000.0, 3_000.0, 2_000.0, 2_500.0, 1_500.0];

/// Attach subsidy-category and economic-size columns to a production panel,
/// for end-to-end pipeline runs on simulated data.
///
/// The categories are persistent positive processes loaded on the farm fixed
/// effect; they carry no built-in productivity effect. Economic size is
/// capital in level terms divided by 1000. Draws use streams n_units+1+i so
/// the production columns are untouched.
pub fn attach_policy_columns(sp: &mut SyntheticPanel, cfg: &DgpConfig) -> Result<()> {
    let n = cfg.n_units;
    let t = cfg.n_periods;
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n * t); 6];
    for i in 0..n {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(n as u64 + 1 + i as u64);
        let eta_std = if cfg.fixed_effect_sd > 0.0 {
            sp.truth.eta[i] / cfg.fixed_effect_sd
        } else {
            0.0
        };
        for (j, col) in columns.iter_mut().enumerate() {
            let mut dev = 0.3 * draw(&mut rng);
            for _ in 0..t {
                dev = 0.6 * dev + 0.24 * draw(&mut rng);
                let value = POLICY_MEANS[j] * (1.0 + 0.4 * eta_std + dev);
                col.push(Some(value.max(0.0)));
            }
        }
    }
    let k_col = sp.panel.column("k")?.to_vec();
    let size: Vec<Option<f64>> = k_col
        .iter()
        .map(|v| v.map(|k| k.exp() / 1000.0))
        .collect();
    for (j, name) in POLICY_NAMES.iter().enumerate() {
        sp.panel
            .insert_column(name, std::mem::take(&mut columns[j]), TransformState::Raw)?;
        sp.panel.set_unit_of_measure(name, "currency")?;
    }
    sp.panel.insert_column("EconomicSize", size, TransformState::Raw)?;
    sp.panel.set_unit_of_measure("EconomicSize", "1000 currency")?;
    Ok(())
}

/// Configuration of the subsidy-impact DGP (step-3 oracle).
///
/// Productivity in levels follows a dynamic law with farm fixed effects:
/// TFP_t = intercept + rho * TFP_{t-1} + theta'(subsidies/1000)
///         + theta_size * size + eta + u_t,
/// where the subsidy processes are persistent, load on the fixed effect, and
/// respond to the current shock u_t (endogenous policy allocation).
#[derive(Clone, Debug)]
pub struct ImpactDgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Persistence of productivity, |rho| < 1.
    pub rho: f64,
    /// Effects per thousand currency units, ordered
    /// (CDP, DDP, AES, LFA, RDP_Other, RDP_inv).
    pub theta: [f64; 6],
    /// Effect of economic size (already in thousands).
    pub theta_size: f64,
    pub intercept: f64,
    pub fixed_effect_sd: f64,
    /// Standard deviation of the productivity shock u.
    pub shock_sd: f64,
    /// Mean subsidy level per category, currency units.
    pub subsidy_mean: [f64; 6],
    /// Relative dispersion of the subsidy processes.
    pub subsidy_rel_sd: f64,
    /// AR(1) persistence of subsidy deviations.
    pub subsidy_persistence: f64,
    /// Loading of subsidies on the standardized fixed effect.
    pub subsidy_eta_loading: f64,
    /// Loading of subsidies on the standardized current shock (endogeneity).
    pub subsidy_shock_loading: f64,
    pub seed: u64,
}

impl Default for ImpactDgpConfig {
    fn default() -> Self {
        Self {
            n_units: 2000,
            n_periods: 8,
            rho: 0.5,
            theta: [-0.002, 0.001, 0.0, 0.0, 0.0, 0.0],
            theta_size: 0.0005,
            intercept: 0.79,
            fixed_effect_sd: 0.15,
            shock_sd: 0.05,
            subsidy_mean: [20_000.0, 12_000.0, 3_000.0, 2_000.0, 2_500.0, 1_500.0],
            subsidy_rel_sd: 0.4,
            subsidy_persistence: 0.6,
            subsidy_eta_loading: 0.5,
            subsidy_shock_loading: 0.3,
            seed: 99,
        }
    }
}

impl ImpactDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::config("need at least 2 units"));
        }
        if self.n_periods < 4 {
            return Err(Error::config("need at least 4 periods"));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::config("|rho| must be < 1"));
        }
        if self.subsidy_persistence.abs() >= 1.0 {
            return Err(Error::config("|subsidy_persistence| must be < 1"));
        }
        if self.shock_sd < 0.0 || self.fixed_effect_sd < 0.0 || self.subsidy_rel_sd < 0.0 {
            return Err(Error::config("standard deviations must be non-negative"));
        }
        Ok(())
    }
}

/// Truth behind an impact panel.
#[derive(Clone, Debug)]
pub struct ImpactTruth {
    pub rho: f64,
    pub theta: [f64; 6],
    pub theta_size: f64,
    pub eta: Vec<f64>,
    /// Productivity shock per row (burn-in discarded).
    pub shock: Vec<f64>,
}

/// Panel of productivity levels and subsidy categories with known effects.
pub struct ImpactPanel {
    pub panel: PanelDataset,
    pub truth: ImpactTruth,
}

/// Number of pre-sample periods simulated and discarded so that the joint
/// (TFP, subsidies) process starts at its stationary distribution. Required
/// for the level-equation instruments to be valid.
const IMPACT_BURN_IN: usize = 100;

/// Generate a subsidy-impact panel (columns TFP, EconomicSize, and the six
/// subsidy categories in currency levels).
pub fn generate_impact(cfg: &ImpactDgpConfig) -> Result<ImpactPanel> {
    cfg.validate()?;
    let (n, t) = (cfg.n_units, cfg.n_periods);
    let width = name_width(n);
    let total = IMPACT_BURN_IN + t;

    let rows = n * t;
    let mut units = Vec::with_capacity(rows);
    let mut years = Vec::with_capacity(rows);
    let mut tfp_col = Vec::with_capacity(rows);
    let mut size_col = Vec::with_capacity(rows);
    let mut subsidy_cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(rows); 6];
    let mut eta_all = Vec::with_capacity(n);
    let mut shock_all = Vec::with_capacity(rows);

    for i in 0..n {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let eta = cfg.fixed_effect_sd * draw(&mut rng);
        let eta_std = if cfg.fixed_effect_sd > 0.0 { eta / cfg.fixed_effect_sd } else { 0.0 };

        // joint burn-in of shocks, subsidies, size, and productivity
        let dev_innov_sd =
            cfg.subsidy_rel_sd * (1.0 - cfg.subsidy_persistence * cfg.subsidy_persistence).sqrt();
        let mut sub_dev = [0.0f64; 6];
        for d in sub_dev.iter_mut() {
            *d = cfg.subsidy_rel_sd * draw(&mut rng);
        }
        let mut size_dev = 0.3 * draw(&mut rng);
        let mut tfp_prev = 0.0f64;
        let mut initialized = false;

        let name = unit_name(i, width);
        for s in 0..total {
            let u = cfg.shock_sd * draw(&mut rng);
            let u_std = if cfg.shock_sd > 0.0 { u / cfg.shock_sd } else { 0.0 };
            if s > 0 {
                for d in sub_dev.iter_mut() {
                    *d = cfg.subsidy_persistence * *d + dev_innov_sd * draw(&mut rng);
                }
                size_dev = 0.6 * size_dev + 0.24 * draw(&mut rng);
            }
            let mut subsidies = [0.0f64; 6];
            for j in 0..6 {
                let level = cfg.subsidy_mean[j]
                    * (1.0
                        + cfg.subsidy_eta_loading * eta_std
                        + sub_dev[j]
                        + cfg.subsidy_shock_loading * u_std);
                subsidies[j] = level.max(0.0);
            }
            let size = 100.0 * (1.0 + 0.2 * eta_std + size_dev).max(0.01);

            let mut tfp = cfg.intercept + eta + u + cfg.theta_size * size;
            for j in 0..6 {
                tfp += cfg.theta[j] * subsidies[j] / 1000.0;
            }
            if initialized {
                tfp += cfg.rho * tfp_prev;
            } else {
                // start the recursion at the location implied by the
                // current regressors so the burn-in converges quickly
                tfp /= 1.0 - cfg.rho;
                initialized = true;
            }
            tfp_prev = tfp;

            if s >= IMPACT_BURN_IN {
                units.push(name.clone());
                years.push(BASE_YEAR + (s - IMPACT_BURN_IN) as i32);
                tfp_col.push(Some(tfp));
                size_col.push(Some(size));
                for j in 0..6 {
                    subsidy_cols[j].push(Some(subsidies[j]));
                }
                shock_all.push(u);
            }
        }
        eta_all.push(eta);
    }

    let mut numeric = vec![
        ("TFP".to_string(), tfp_col),
        ("EconomicSize".to_string(), size_col),
    ];
    for (j, name) in POLICY_NAMES.iter().enumerate() {
        numeric.push((name.to_string(), std::mem::take(&mut subsidy_cols[j])));
    }
    let text = vec![("country".to_string(), vec!["SIM".to_string(); rows])];
    let mut panel = PanelDataset::from_parts(units, years, numeric, text)?;
    for name in POLICY_NAMES {
        panel.set_unit_of_measure(name, "currency")?;
    }
    panel.set_unit_of_measure("EconomicSize", "1000 currency")?;

    Ok(ImpactPanel {
        panel,
        truth: ImpactTruth {
            rho: cfg.rho,
            theta: cfg.theta,
            theta_size: cfg.theta_size,
            eta: eta_all,
            shock: shock_all,
        },
    })
}

/// Result of one Monte Carlo replication, fed back to the harness.
#[derive(Clone, Debug)]
pub struct McOutcome {
    /// Parameter names, stable across replications.
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub truth: Vec<f64>,
    /// Named test p-values, counted as rejections at the 5% level.
    pub p_values: Vec<(String, f64)>,
}

/// Monte Carlo summary over replications.
#[derive(Clone, Debug)]
pub struct McSummary {
    pub names: Vec<String>,
    pub mean_bias: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Share of replications whose 95% normal CI covers the truth.
    pub coverage95: Vec<f64>,
    /// Rejection rate at the 5% level per named test.
    pub rejection_rates: Vec<(String, f64)>,
    pub replications: usize,
    pub failures: usize,
}

/// Run `estimate` on `replications` fresh panels (seeds seed, seed+1, ...).
///
/// Individual replication failures are tolerated up to a 10% failure rate;
/// beyond that the whole run errors out.
pub fn monte_carlo<F>(cfg: &DgpConfig, replications: usize, estimate: F) -> Result<McSummary>
where
    F: Fn(&SyntheticPanel) -> Result<McOutcome>,
{
    if replications == 0 {
        return Err(Error::config("need at least 1 replication"));
    }
    let mut outcomes: Vec<McOutcome> = Vec::with_capacity(replications);
    let mut failures = 0usize;
    for r in 0..replications {
        let mut rep_cfg = cfg.clone();
        rep_cfg.seed = cfg.seed.wrapping_add(r as u64);
        let sp = generate(&rep_cfg)?;
        match estimate(&sp) {
            Ok(outcome) => outcomes.push(outcome),
            Err(_) => failures += 1,
        }
    }
    summarize_mc(outcomes, failures, replications)
}

/// Shared summary logic for any per-replication estimator (also used by the
/// impact-DGP acceptance runs, which generate their own panels).
pub fn summarize_mc(
    outcomes: Vec<McOutcome>,
    failures: usize,
    replications: usize,
) -> Result<McSummary> {
    if 10 * failures > replications {
        return Err(Error::numeric(format!(
            "{failures} of {replications} replications failed (more than 10%)"
        )));
    }
    let first = outcomes
        .first()
        .ok_or_else(|| Error::numeric("no successful replications"))?;
    let names = first.names.clone();
    let p = names.len();
    let done = outcomes.len() as f64;

    let mut mean_bias = vec![0.0; p];
    let mut mse = vec![0.0; p];
    let mut covered = vec![0.0; p];
    let mut rejections: Vec<(String, f64)> = first
        .p_values
        .iter()
        .map(|(name, _)| (name.clone(), 0.0))
        .collect();
    for outcome in &outcomes {
        if outcome.names != names {
            return Err(Error::numeric("replication outcomes disagree on parameter names"));
        }
        for j in 0..p {
            let err = outcome.estimates[j] - outcome.truth[j];
            mean_bias[j] += err / done;
            mse[j] += err * err / done;
            if err.abs() <= 1.959963984540054 * outcome.std_errors[j] {
                covered[j] += 1.0 / done;
            }
        }
        for (slot, (name, pv)) in rejections.iter_mut().zip(&outcome.p_values) {
            debug_assert_eq!(&slot.0, name);
            if *pv < 0.05 {
                slot.1 += 1.0 / done;
            }
        }
    }
    Ok(McSummary {
        names,
        mean_bias,
        rmse: mse.into_iter().map(f64::sqrt).collect(),
        coverage95: covered,
        rejection_rates: rejections,
        replications: outcomes.len(),
        failures,
    })
}
