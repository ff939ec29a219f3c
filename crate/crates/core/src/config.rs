//! Scenario configuration files (TOML).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::gauge::SolveOptions;
use crate::geometry::{Endpoint, GeometrySpec};
use crate::kato::KatoBoundFn;
use crate::profile::Profile;

/// Checks a scenario can request, in the order they are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Kato,
    Gauge,
    Semigroup,
    Transformation,
    Be,
    BishopGromov,
    Doubling,
    Monotonicity,
    Gauss2d,
}

impl CheckName {
    pub const ALL: [CheckName; 9] = [
        CheckName::Kato,
        CheckName::Gauge,
        CheckName::Semigroup,
        CheckName::Transformation,
        CheckName::Be,
        CheckName::BishopGromov,
        CheckName::Doubling,
        CheckName::Monotonicity,
        CheckName::Gauss2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Kato => "kato",
            CheckName::Gauge => "gauge",
            CheckName::Semigroup => "semigroup",
            CheckName::Transformation => "transformation",
            CheckName::Be => "be",
            CheckName::BishopGromov => "bishop_gromov",
            CheckName::Doubling => "doubling",
            CheckName::Monotonicity => "monotonicity",
            CheckName::Gauss2d => "gauss2d",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            CheckName::Kato => "Kato profile k_t(Ric-), quadrature oracle, regime conditions",
            CheckName::Gauge => "gauge function by Neumann series vs direct solve, bounds, residual",
            CheckName::Semigroup => "Lp bounds of the Schrodinger semigroup, I against exact propagation",
            CheckName::Transformation => "Bochner baseline and the conformal transformation rule at two resolutions",
            CheckName::Be => "Bakry-Emery certificate for the time-changed operator, with falsification control",
            CheckName::BishopGromov => "volume ratios and the comparison bound for balls of the changed metric",
            CheckName::Doubling => "volume doubling for the original metric with pipeline constants",
            CheckName::Monotonicity => "almost monotonicity of the volume ratio with a fitted constant",
            CheckName::Gauss2d => "Gauss curvature lower bound and Gauss-Bonnet on a conformal torus",
        }
    }
}

/// A length given as a number or a constant expression such as `"pi/2"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Value(f64),
    Text(String),
}

impl Scalar {
    pub fn value(&self, key: &str) -> Result<f64> {
        match self {
            Scalar::Value(v) => Ok(*v),
            Scalar::Text(t) => {
                let e = Expr::parse(t, &[]).map_err(|e| Error::Config(format!("{key}: {e}")))?;
                Ok(e.eval(&[]))
            }
        }
    }
}

fn two_pi() -> Scalar {
    Scalar::Value(2.0 * PI)
}

fn default_1d_resolution() -> usize {
    512
}

fn default_torus_resolution() -> usize {
    32
}

fn zero_text() -> String {
    "0".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    Warped {
        dimension: usize,
        r_max: Scalar,
        left: Endpoint,
        right: Endpoint,
        #[serde(default)]
        warp: Option<String>,
        /// CSV with columns `r,w[,dw]`, relative to the config file.
        #[serde(default)]
        warp_csv: Option<PathBuf>,
        #[serde(default = "default_1d_resolution")]
        resolution: usize,
    },
    Circle {
        dimension: usize,
        #[serde(default = "two_pi")]
        length: Scalar,
        #[serde(default = "zero_text")]
        exponent: String,
        #[serde(default = "default_1d_resolution")]
        resolution: usize,
    },
    Torus {
        #[serde(default = "two_pi")]
        side: Scalar,
        exponent: String,
        #[serde(default = "default_torus_resolution")]
        resolution: usize,
    },
}

impl GeometryConfig {
    pub fn resolution(&self) -> usize {
        match self {
            GeometryConfig::Warped { resolution, .. }
            | GeometryConfig::Circle { resolution, .. }
            | GeometryConfig::Torus { resolution, .. } => *resolution,
        }
    }

    pub fn set_resolution(&mut self, res: usize) {
        match self {
            GeometryConfig::Warped { resolution, .. }
            | GeometryConfig::Circle { resolution, .. }
            | GeometryConfig::Torus { resolution, .. } => *resolution = res,
        }
    }

    pub fn to_spec(&self, base_dir: &Path) -> Result<GeometrySpec> {
        Ok(match self {
            GeometryConfig::Warped {
                dimension,
                r_max,
                left,
                right,
                warp,
                warp_csv,
                resolution,
            } => {
                let warp = match (warp, warp_csv) {
                    (Some(text), None) => Profile::parse(text, "r")?,
                    (None, Some(path)) => Profile::from_csv(&base_dir.join(path))?,
                    _ => {
                        return Err(Error::Config(
                            "geometry: give exactly one of `warp` and `warp_csv`".into(),
                        ))
                    }
                };
                GeometrySpec::Warped {
                    dimension: *dimension,
                    r_max: r_max.value("geometry.r_max")?,
                    left: *left,
                    right: *right,
                    warp,
                    resolution: *resolution,
                }
            }
            GeometryConfig::Circle {
                dimension,
                length,
                exponent,
                resolution,
            } => GeometrySpec::Circle {
                dimension: *dimension,
                length: length.value("geometry.length")?,
                exponent: Profile::parse(exponent, "theta")?,
                resolution: *resolution,
            },
            GeometryConfig::Torus {
                side,
                exponent,
                resolution,
            } => GeometrySpec::Torus {
                side: side.value("geometry.side")?,
                exponent: Expr::parse(exponent, &["x", "y"])?,
                resolution: *resolution,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum RegimeConfig {
    /// Integral smallness `k_T ≤ γ` with `γ < 1/(n−2)`.
    #[serde(rename = "D")]
    D { gamma: f64 },
    /// Measured `k_T < 1/(3(n−2))`.
    #[serde(rename = "Dprime")]
    Dprime,
    #[serde(rename = "dim2")]
    Dim2,
    /// Strong Kato bound; no curvature certificate.
    #[serde(rename = "SK")]
    Sk { bound: KatoBoundFn },
}

impl RegimeConfig {
    pub fn label(&self) -> &'static str {
        match self {
            RegimeConfig::D { .. } => "D",
            RegimeConfig::Dprime => "Dprime",
            RegimeConfig::Dim2 => "dim2",
            RegimeConfig::Sk { .. } => "SK",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KatoConfig {
    /// Number of equally spaced profile times in `(0, T]`.
    pub samples: usize,
    /// Composite Simpson intervals for the time-quadrature oracle.
    pub oracle_intervals: usize,
    pub oracle_rtol: f64,
}

impl Default for KatoConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            oracle_intervals: 400,
            oracle_rtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeConfig {
    pub tol: f64,
    pub intervals: usize,
    pub ratio: f64,
    pub max_terms: usize,
    pub bound_slack: f64,
    pub residual_tol: f64,
    pub oracle_tol: f64,
    pub contraction_slack: f64,
    /// Re-solve on a grid with twice the intervals and report the change.
    pub time_doubling: bool,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            tol: o.tol,
            intervals: o.intervals,
            ratio: o.ratio,
            max_terms: o.max_terms,
            bound_slack: o.bound_slack,
            residual_tol: 1e-6,
            oracle_tol: 1e-6,
            contraction_slack: 1e-6,
            time_doubling: true,
        }
    }
}

impl GaugeConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            intervals: self.intervals,
            ratio: self.ratio,
            max_terms: self.max_terms,
            bound_slack: self.bound_slack,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemigroupConfig {
    /// Times as multiples of `T`.
    pub times: Vec<f64>,
    pub ordering_tol: f64,
    pub oracle_tol: f64,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            times: vec![0.25, 0.5, 1.0, 2.0],
            ordering_tol: 1e-7,
            oracle_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub count: usize,
    pub modes: usize,
    pub kappa: f64,
    /// Extra `q` values for the transformation rule (`inf` allowed).
    pub q_values: Vec<f64>,
    /// Exponent used by the transformation check instead of the pipeline one.
    pub exponent: Option<String>,
    /// Resolutions of the refinement study; defaults to half and full.
    pub resolutions: Option<Vec<usize>>,
    /// Curvature multiplier of the falsification control.
    pub control_factor: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 100,
            modes: 12,
            kappa: 10.0,
            q_values: vec![0.5, 2.0, f64::INFINITY],
            exponent: None,
            resolutions: None,
            control_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeConfig {
    /// Radii of the volume-ratio curve, equally spaced up to `√T`.
    pub radii: usize,
    /// Radii per axis of the `(r, R)` grid.
    pub pair_grid: usize,
    pub etas: Vec<f64>,
    /// `N` is lowered to `n − control_drop` in the comparison control.
    pub control_drop: f64,
    pub drift_tol: f64,
    pub eta_spread_tol: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            radii: 40,
            pair_grid: 20,
            etas: vec![0.05, 0.1, 0.2],
            control_drop: 0.5,
            drift_tol: 0.2,
            eta_spread_tol: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub f_bound: f64,
    pub gauss_curvature: f64,
    pub gauss_bonnet: f64,
    pub identity_order: f64,
    pub violation_order: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            f_bound: 1e-6,
            gauss_curvature: 1e-4,
            gauss_bonnet: 1e-6,
            identity_order: 1.8,
            violation_order: 1.0,
        }
    }
}

/// Axis of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    /// Target Kato constant; `T` is solved so that `k_T` matches it.
    KTarget,
    Resolution,
    Eta,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "k_target" | "k-target" => Ok(SweepAxis::KTarget),
            "resolution" => Ok(SweepAxis::Resolution),
            "eta" => Ok(SweepAxis::Eta),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (gamma, k_target, resolution, eta)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub t_final: f64,
    pub checks: Vec<CheckName>,
    pub geometry: GeometryConfig,
    pub regime: RegimeConfig,
    #[serde(default)]
    pub kato: KatoConfig,
    #[serde(default)]
    pub gauge: GaugeConfig,
    #[serde(default)]
    pub semigroup: SemigroupConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default)]
    pub volume: VolumeConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(
                "name must be non-empty and contain no path separators".into(),
            ));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.checks.is_empty() {
            return Err(Error::Config("checks must list at least one check".into()));
        }
        let unique: BTreeSet<_> = self.checks.iter().collect();
        if unique.len() != self.checks.len() {
            return Err(Error::Config("checks contains duplicates".into()));
        }
        if let RegimeConfig::Dim2 = self.regime {
            if !matches!(self.geometry, GeometryConfig::Torus { .. }) {
                return Err(Error::Config("regime dim2 needs a torus geometry".into()));
            }
        }
        if self.checks.contains(&CheckName::Gauss2d) && !matches!(self.geometry, GeometryConfig::Torus { .. }) {
            return Err(Error::Config("check gauss2d needs a torus geometry".into()));
        }
        if self.suite.count == 0 || self.suite.modes == 0 {
            return Err(Error::Config("suite.count and suite.modes must be positive".into()));
        }
        if self.volume.radii < 2 || self.volume.pair_grid < 2 {
            return Err(Error::Config(
                "volume.radii and volume.pair_grid must be at least 2".into(),
            ));
        }
        if self.kato.samples == 0 || self.kato.oracle_intervals < 2 {
            return Err(Error::Config(
                "kato.samples and kato.oracle_intervals are too small".into(),
            ));
        }
        Ok(())
    }

    /// Checks in execution order.
    pub fn ordered_checks(&self) -> Vec<CheckName> {
        let set: BTreeSet<_> = self.checks.iter().cloned().collect();
        set.into_iter().collect()
    }

    pub fn refinement_resolutions(&self) -> Vec<usize> {
        self.suite.resolutions.clone().unwrap_or_else(|| {
            let r = self.geometry.resolution();
            vec![r / 2, r]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMBBELL: &str = r#"
name = "dumbbell"
seed = 7
t_final = 0.15
checks = ["be", "kato", "gauge"]

[geometry]
kind = "warped"
dimension = 3
r_max = "pi"
left = "pole"
right = "pole"
warp = "sin(r)*(1-0.3*sin(r)^4)"

[regime]
kind = "Dprime"

[suite]
q_values = [1.0, inf]
"#;

    #[test]
    fn parses_and_orders_checks() {
        let cfg = ScenarioConfig::from_toml(DUMBBELL).unwrap();
        assert_eq!(
            cfg.ordered_checks(),
            vec![CheckName::Kato, CheckName::Gauge, CheckName::Be]
        );
        assert_eq!(cfg.geometry.resolution(), 512);
        assert!(cfg.suite.q_values[1].is_infinite());
        let spec = cfg.geometry.to_spec(Path::new(".")).unwrap();
        assert!((spec_length(&spec) - PI).abs() < 1e-15);
        assert_eq!(cfg.refinement_resolutions(), vec![256, 512]);
    }

    fn spec_length(spec: &GeometrySpec) -> f64 {
        match spec {
            GeometrySpec::Warped { r_max, .. } => *r_max,
            _ => unreachable!(),
        }
    }

    #[test]
    fn reports_unknown_keys_and_duplicates() {
        let bad = DUMBBELL.replace("seed = 7", "sed = 7");
        let err = ScenarioConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
        let dup = DUMBBELL.replace(r#"["be", "kato", "gauge"]"#, r#"["be", "be"]"#);
        assert!(ScenarioConfig::from_toml(&dup).is_err());
        let regime = DUMBBELL.replace(r#"kind = "Dprime""#, r#"kind = "D""#);
        assert!(ScenarioConfig::from_toml(&regime).is_err());
    }

    #[test]
    fn strong_kato_bound_parses() {
        let text = DUMBBELL.replace(
            r#"kind = "Dprime""#,
            "kind = \"SK\"\nbound = { kind = \"power_law\", c = 0.5, alpha = 0.5 }",
        );
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        assert!(matches!(
            cfg.regime,
            RegimeConfig::Sk {
                bound: KatoBoundFn::PowerLaw { .. }
            }
        ));
    }
}
