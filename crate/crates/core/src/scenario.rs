//! Running scenarios: the pipeline from geometry to certificates, the
//! individual checks, and parameter sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{CheckName, GeometryConfig, RegimeConfig, ScenarioConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::gauge::{
    direct_solve_phi, gauge_phi, lp_rows, solve_I, spectral_bound_check, GaugeResult, LpNorm, SchrodingerSemigroup,
};
use crate::geometry::{
    build_geometry, ricci_minus_field, write_fields_csv, DiscreteField, GeometryKind, ModelGeometry,
};
use crate::kato::{check_conditions, kato_by_time_quadrature, kato_of_potential, KatoBoundFn, KatoProfile};
use crate::report::{
    observed_order, write_table, CheckReport, Provenance, RegimeReport, Report, Status, SCHEMA_VERSION,
};
use crate::spectral::{decompose, SpectralDecomposition};
use crate::time_change::{
    be_margins, bochner_margins, build_conformal, chain_rule_residual, gauss_curvature_check_2d, low_mode_suite,
    select_parameters_d, select_parameters_dim2, select_parameters_dprime, transformation_margins, verify_be,
    verify_bochner_baseline, verify_transformation_rule, BEParameters, ConformalData, MarginReport,
};
use crate::volume::{
    almost_monotonicity_check, bg_bound_check, comparison_volume, doubling_check, doubling_constant, radius_pairs,
    relative_drift, uniform_radii, volume_ratio_curve, MonotonicityReport,
};

/// Negative parts of Γ₂ margins below this are roundoff.
const NEGATIVE_PART_FLOOR: f64 = 1e-8;

/// Report plus wall-clock timings, kept apart so reports stay reproducible.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: Report,
    pub timings: BTreeMap<String, f64>,
}

/// Why a check could not produce a verdict of its own.
enum Blocked {
    Skip(String),
    Fail(String),
}

impl From<Error> for Blocked {
    fn from(e: Error) -> Self {
        match e {
            Error::HypothesisViolated(m) => Blocked::Skip(format!("hypothesis violated: {m}")),
            other => Blocked::Fail(other.to_string()),
        }
    }
}

type CheckResult = std::result::Result<CheckReport, Blocked>;

/// Geometry, spectrum and the certificate chain at one resolution.
struct Level {
    geom: ModelGeometry,
    dec: SpectralDecomposition,
    ric: DiscreteField,
    profile: KatoProfile,
    kato: f64,
    params: std::result::Result<BEParameters, String>,
}

struct Pipeline {
    params: BEParameters,
    v: Vec<f64>,
    gauge: GaugeResult,
    conf: ConformalData,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    base_dir: &'a Path,
    out: Option<&'a Path>,
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
}

/// Parse a config file and run it, writing artifacts under `out_dir/<name>`.
pub fn run_config_file(path: &Path, out_dir: Option<&Path>, seed: Option<u64>) -> Result<ScenarioOutcome> {
    let mut cfg = ScenarioConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    run_scenario(&cfg, base, out_dir)
}

/// Run every requested check. With `out_dir` set, CSV curves, `report.json`
/// and `timings.json` are written to `out_dir/<name>/`.
pub fn run_scenario(cfg: &ScenarioConfig, base_dir: &Path, out_dir: Option<&Path>) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let dir = match out_dir {
        Some(d) => {
            let dir = d.join(&cfg.name);
            std::fs::create_dir_all(&dir)?;
            Some(dir)
        }
        None => None,
    };
    let mut runner = Runner {
        cfg,
        base_dir,
        out: dir.as_deref(),
        artifacts: Vec::new(),
        timings: BTreeMap::new(),
    };
    let report = runner.run()?;
    if let Some(dir) = &dir {
        std::fs::write(dir.join("report.json"), report.to_json()?)?;
        std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&runner.timings)?)?;
    }
    Ok(ScenarioOutcome {
        report,
        timings: runner.timings,
    })
}

fn select_params(cfg: &ScenarioConfig, n: usize, kato: f64) -> std::result::Result<BEParameters, String> {
    let t = cfg.t_final;
    match &cfg.regime {
        RegimeConfig::D { gamma } => {
            let p = select_parameters_d(n, *gamma, t).map_err(|e| format!("(D) violated: {e}"))?;
            if kato > *gamma {
                return Err(format!("(D) violated: k_T = {kato:.6e} exceeds gamma = {gamma}"));
            }
            Ok(p)
        }
        RegimeConfig::Dprime => select_parameters_dprime(n, kato, t).map_err(|e| format!("(D') violated: {e}")),
        RegimeConfig::Dim2 => select_parameters_dim2(kato, t).map_err(|e| e.to_string()),
        RegimeConfig::Sk { .. } => Err("no curvature certificate in the SK regime".into()),
    }
}

/// Max-norm of `a − b` and the node where it is attained.
fn max_diff(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter().zip(b).enumerate().fold((0.0, 0), |acc, (i, (x, y))| {
        let d = (x - y).abs();
        if d > acc.0 {
            (d, i)
        } else {
            acc
        }
    })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn margin_summary(prefix: &str, r: &MarginReport, out: &mut BTreeMap<String, f64>) {
    out.insert(format!("{prefix}.worst_margin"), r.worst_margin);
    out.insert(format!("{prefix}.worst_ratio"), r.worst_ratio);
    out.insert(format!("{prefix}.violations"), r.violations as f64);
    out.insert(format!("{prefix}.negative_part"), r.negative_part);
}

fn q_label(q: f64) -> String {
    if q.is_infinite() {
        "inf".into()
    } else {
        format!("{q}")
    }
}

impl Runner<'_> {
    fn time<T>(&mut self, key: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(key.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    fn artifact(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if let Some(dir) = self.out {
            write(&dir.join(name))?;
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn level(&mut self, resolution: usize) -> Result<Level> {
        let mut gc = self.cfg.geometry.clone();
        gc.set_resolution(resolution);
        let spec = gc.to_spec(self.base_dir)?;
        let geom = self.time("geometry", || build_geometry(&spec))?;
        let dec = self.time("decompose", || decompose(&geom, None))?;
        let ric = ricci_minus_field(&geom);
        let times = KatoProfile::uniform_times(self.cfg.t_final, self.cfg.kato.samples);
        let n = geom.dimension();
        let profile = self.time("kato", || KatoProfile::compute(&dec, &ric, &times, "ric_minus", n))?;
        let kato = profile.final_value();
        let params = select_params(self.cfg, n, kato);
        Ok(Level {
            geom,
            dec,
            ric,
            profile,
            kato,
            params,
        })
    }

    fn pipeline(&mut self, level: &Level) -> std::result::Result<Pipeline, Blocked> {
        let params = level.params.clone().map_err(Blocked::Skip)?;
        let v = params.potential(&level.ric);
        let opts = self.cfg.gauge.solve_options();
        let t = self.cfg.t_final;
        let gauge = self.time("gauge", || {
            gauge_phi(&level.geom, &level.dec, &v, params.beta, t, &opts)
        })?;
        let conf = build_conformal(&level.geom, &gauge.phi, params.lambda)?;
        let mut gauge = gauge;
        gauge.f = Some(conf.f.clone());
        gauge.lambda = Some(params.lambda);
        Ok(Pipeline { params, v, gauge, conf })
    }

    fn run(&mut self) -> Result<Report> {
        let cfg = self.cfg;
        let primary = self.level(cfg.geometry.resolution())?;
        let n = primary.geom.dimension();
        let gamma = match &cfg.regime {
            RegimeConfig::D { gamma } if *gamma > 0.0 && *gamma < crate::kato::gamma_upper(n) => Some(*gamma),
            _ => None,
        };
        let bound = match &cfg.regime {
            RegimeConfig::Sk { bound } => Some(bound),
            _ => None,
        };
        let conditions = check_conditions(&primary.profile, n, gamma, bound).ok();
        let needs_pipeline = cfg.checks.iter().any(|c| {
            matches!(
                c,
                CheckName::Gauge | CheckName::Semigroup | CheckName::Be | CheckName::BishopGromov | CheckName::Doubling
            )
        }) || (cfg.checks.contains(&CheckName::Transformation) && cfg.suite.exponent.is_none());
        let pipeline = if needs_pipeline && primary.params.is_ok() {
            Some(self.pipeline(&primary))
        } else {
            None
        };
        let mut checks = Vec::new();
        for name in cfg.ordered_checks() {
            let result = match name {
                CheckName::Kato => self.check_kato(&primary, conditions.as_ref()),
                CheckName::Gauge => self.with_pipeline(&primary, &pipeline, |r, p| r.check_gauge(&primary, p)),
                CheckName::Semigroup => self.with_pipeline(&primary, &pipeline, |r, p| r.check_semigroup(&primary, p)),
                CheckName::Transformation => self.check_transformation(&primary),
                CheckName::Be => self.with_pipeline(&primary, &pipeline, |r, p| r.check_be(&primary, p)),
                CheckName::BishopGromov => {
                    self.with_pipeline(&primary, &pipeline, |r, p| r.check_bishop_gromov(&primary, p))
                }
                CheckName::Doubling => self.with_pipeline(&primary, &pipeline, |r, p| r.check_doubling(&primary, p)),
                CheckName::Monotonicity => self.check_monotonicity(&primary, conditions.as_ref()),
                CheckName::Gauss2d => self.check_gauss2d(&primary),
            };
            checks.push(match result {
                Ok(c) => c,
                Err(Blocked::Skip(r)) => CheckReport::skipped(name, r),
                Err(Blocked::Fail(r)) => CheckReport::failed(name, r),
            });
        }
        let write_fields = pipeline.as_ref().and_then(|p| p.as_ref().ok());
        let phi = write_fields.map(|p| p.gauge.phi.to_vec());
        let f = write_fields.map(|p| p.conf.f.to_vec());
        let v = write_fields.map(|p| p.v.clone());
        self.artifact("fields.csv", |path| {
            let mut cols: Vec<(&str, &[f64])> = vec![
                ("ric_minus", &primary.ric),
                ("ricci_lowest", primary.geom.ricci_lowest()),
            ];
            if let (Some(v), Some(phi), Some(f)) = (&v, &phi, &f) {
                cols.push(("potential", v));
                cols.push(("phi", phi));
                cols.push(("f", f));
            }
            write_fields_csv(&primary.geom, path, &cols)
        })?;
        self.artifact("eigenvalues.csv", |path| primary.dec.write_eigenvalues_csv(path))?;
        self.artifact("kato_profile.csv", |path| primary.profile.write_csv(path))?;
        let status = Report::overall(&checks);
        let regime = RegimeReport {
            kind: cfg.regime.label().into(),
            kato: primary.kato,
            certificate: primary.params.clone().ok(),
            hypothesis_violation: primary.params.clone().err(),
            conditions,
        };
        let provenance = Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            geometry: primary.geom.spec().describe(),
            dimension: n,
            resolution: cfg.geometry.resolution(),
            nodes: primary.geom.node_count(),
            modes: primary.dec.mode_count(),
            spacing: primary.geom.spacing(),
            t_final: cfg.t_final,
            seed: cfg.seed,
            refinement_resolutions: cfg.refinement_resolutions(),
            settings: json!({
                "kato": to_json(&cfg.kato),
                "gauge": to_json(&cfg.gauge),
                "semigroup": to_json(&cfg.semigroup),
                "suite": to_json(&cfg.suite),
                "volume": to_json(&cfg.volume),
                "tolerances": to_json(&cfg.tolerances),
            }),
        };
        let mut artifacts = self.artifacts.clone();
        artifacts.sort();
        Ok(Report {
            schema_version: SCHEMA_VERSION,
            scenario: cfg.name.clone(),
            status,
            provenance,
            regime,
            checks,
            artifacts,
        })
    }

    fn with_pipeline(
        &mut self,
        primary: &Level,
        pipeline: &Option<std::result::Result<Pipeline, Blocked>>,
        f: impl FnOnce(&mut Self, &Pipeline) -> CheckResult,
    ) -> CheckResult {
        match pipeline {
            Some(Ok(p)) => f(self, p),
            Some(Err(Blocked::Skip(r))) => Err(Blocked::Skip(r.clone())),
            Some(Err(Blocked::Fail(r))) => Err(Blocked::Fail(format!("pipeline failed: {r}"))),
            None => Err(Blocked::Skip(
                primary
                    .params
                    .clone()
                    .err()
                    .unwrap_or_else(|| "pipeline not run".into()),
            )),
        }
    }

    fn check_kato(&mut self, level: &Level, conditions: Option<&crate::kato::ConditionReport>) -> CheckResult {
        let cfg = self.cfg;
        let t = cfg.t_final;
        let oracle = self.time("kato", || {
            kato_by_time_quadrature(&level.dec, &level.ric, t, cfg.kato.oracle_intervals)
        })?;
        let diff = (oracle - level.kato).abs();
        let oracle_ok = diff <= cfg.kato.oracle_rtol * level.kato.abs() + 1e-14;
        let monotone = level.profile.is_monotone(1e-12);
        let warnings = level.dec.warnings(t, 1e-12);
        let mut summary = BTreeMap::new();
        summary.insert("k_T".into(), level.kato);
        summary.insert("oracle_diff".into(), diff);
        summary.insert("monotone".into(), f64::from(u8::from(monotone)));
        if let Some(c) = conditions {
            summary.insert("dprime_threshold".into(), c.dprime_threshold);
        }
        let argmax = *level.profile.argmax.last().unwrap_or(&0);
        let status = if oracle_ok && monotone {
            Status::Pass
        } else {
            Status::Fail
        };
        let reason = match (oracle_ok, monotone) {
            (true, true) => None,
            (false, _) => Some(format!("quadrature oracle differs by {diff:.3e}")),
            (true, false) => Some("profile is not monotone".into()),
        };
        Ok(CheckReport {
            name: CheckName::Kato,
            status,
            reason,
            worst: Some(format!("sup attained at node {argmax}")),
            summary,
            details: json!({
                "oracle": oracle,
                "argmax_node": argmax,
                "conditions": to_json(&conditions),
                "warnings": warnings,
            }),
        })
    }

    fn check_gauge(&mut self, level: &Level, p: &Pipeline) -> CheckResult {
        let cfg = self.cfg;
        let g = &p.gauge;
        let direct = self.time("direct_solve", || direct_solve_phi(&level.geom, &p.v, p.params.beta))?;
        let (diff, node) = max_diff(&g.phi, &direct);
        let oracle_tol = cfg.gauge.oracle_tol.max(10.0 * g.tail_bound);
        let spectral = spectral_bound_check(&level.geom, &p.v, p.params.beta)?;
        let doubling = if cfg.gauge.time_doubling {
            let mut opts = cfg.gauge.solve_options();
            opts.intervals *= 2;
            let t = cfg.t_final;
            let fine = self.time("gauge", || {
                gauge_phi(&level.geom, &level.dec, &p.v, p.params.beta, t, &opts)
            })?;
            Some(max_diff(&g.phi, &fine.phi).0)
        } else {
            None
        };
        let contraction_ok = g.max_contraction <= g.kato_v + cfg.gauge.contraction_slack;
        let residual_ok = g.pde_residual <= cfg.gauge.residual_tol;
        let mut problems = Vec::new();
        if diff > oracle_tol {
            problems.push(format!("direct solve differs by {diff:.3e}"));
        }
        if !contraction_ok {
            problems.push(format!(
                "contraction {:.6} exceeds k_T(V) = {:.6}",
                g.max_contraction, g.kato_v
            ));
        }
        if !g.bounds_ok {
            problems.push(format!(
                "phi range [{:.8}, {:.8}] outside [1, {:.8}]",
                g.phi_min, g.phi_max, g.phi_upper
            ));
        }
        if !g.i_bounds_ok {
            problems.push("I leaves [1, e^{beta(T+t)}]".into());
        }
        if !residual_ok {
            problems.push(format!(
                "residual {:.3e} exceeds {:.1e}",
                g.pde_residual, cfg.gauge.residual_tol
            ));
        }
        if !spectral.holds {
            problems.push(format!("lowest eigenvalue {:.6} below -beta", spectral.lowest));
        }
        let mut summary = BTreeMap::new();
        summary.insert("oracle_diff".into(), diff);
        summary.insert("pde_residual".into(), g.pde_residual);
        summary.insert("phi_min".into(), g.phi_min);
        summary.insert("phi_max".into(), g.phi_max);
        summary.insert("phi_upper".into(), g.phi_upper);
        summary.insert("kato_v".into(), g.kato_v);
        summary.insert("max_contraction".into(), g.max_contraction);
        summary.insert("series_terms".into(), g.series_terms as f64);
        summary.insert("spectral_margin".into(), spectral.margin);
        summary.insert("identity_residual".into(), p.conf.identity_residual);
        if let Some(d) = doubling {
            summary.insert("time_doubling_change".into(), d);
        }
        let phi_direct = direct.to_vec();
        self.artifact("gauge.csv", |path| {
            write_fields_csv(&level.geom, path, &[("phi", &g.phi), ("phi_direct", &phi_direct)])
        })?;
        Ok(CheckReport {
            name: CheckName::Gauge,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: Some(format!("largest oracle difference at node {node}")),
            summary,
            details: json!({
                "gauge": to_json(g),
                "spectral_bound": to_json(&spectral),
                "oracle_tol": oracle_tol,
            }),
        })
    }

    fn check_semigroup(&mut self, level: &Level, p: &Pipeline) -> CheckResult {
        let cfg = self.cfg;
        let t = cfg.t_final;
        let beta = p.params.beta;
        let sg = self.time("semigroup", || SchrodingerSemigroup::new(&level.geom, &p.v))?;
        let times: Vec<f64> = cfg.semigroup.times.iter().map(|s| s * t).collect();
        let mut lp = Vec::new();
        for norm in [LpNorm::One, LpNorm::Two, LpNorm::Inf] {
            lp.push(self.time("semigroup", || lp_rows(&level.geom, &sg, beta, t, &times, norm))?);
        }
        let opts = cfg.gauge.solve_options();
        let sol = self.time("semigroup", || solve_I(&level.dec, &p.v, beta, t, t, &opts))?;
        let window = sol.first_window();
        let ones = vec![1.0; level.geom.node_count()];
        let mut oracle_diff: f64 = 0.0;
        let mut ordering_gap = f64::NEG_INFINITY;
        let mut worst = (0.0, 0);
        for (j, &tj) in window.times().iter().enumerate() {
            let exact = sg.apply(tj, &ones);
            let approx = window.slice(j);
            for (i, (e, a)) in exact.iter().zip(&approx).enumerate() {
                oracle_diff = oracle_diff.max((e - a).abs());
                if e - a > ordering_gap {
                    ordering_gap = e - a;
                    worst = (tj, i);
                }
            }
        }
        let mut problems = Vec::new();
        for r in &lp {
            if !r.holds {
                problems.push(format!("{:?} bound fails", r.p));
            }
        }
        if oracle_diff > cfg.semigroup.oracle_tol {
            problems.push(format!("I differs from exact propagation by {oracle_diff:.3e}"));
        }
        if ordering_gap > cfg.semigroup.ordering_tol {
            problems.push(format!("J exceeds I by {ordering_gap:.3e}"));
        }
        let mut summary = BTreeMap::new();
        for r in &lp {
            let margin = r
                .rows
                .iter()
                .map(|x| (x.bound / x.norm).ln())
                .fold(f64::INFINITY, f64::min);
            summary.insert(
                format!("lp_{}_log_margin", to_json(&r.p).as_str().unwrap_or("?")),
                margin,
            );
        }
        summary.insert("i_oracle_diff".into(), oracle_diff);
        summary.insert("ordering_gap".into(), ordering_gap);
        summary.insert("lowest_eigenvalue".into(), sg.lowest());
        let rows: Vec<Vec<f64>> = lp
            .iter()
            .flat_map(|r| {
                let p = match r.p {
                    LpNorm::One => 1.0,
                    LpNorm::Two => 2.0,
                    LpNorm::Inf => f64::INFINITY,
                };
                r.rows.iter().map(move |x| vec![p, x.t, x.norm, x.bound])
            })
            .collect();
        self.artifact("semigroup_lp.csv", |path| {
            write_table(path, &["p", "t", "norm", "bound"], &rows)
        })?;
        Ok(CheckReport {
            name: CheckName::Semigroup,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: Some(format!("largest J - I at t = {:.6e}, node {}", worst.0, worst.1)),
            summary,
            details: json!({ "lp": to_json(&lp), "terms": sol.terms_per_window }),
        })
    }

    /// Exponent for the transformation rule at one level.
    fn exponent_at(&mut self, level: &Level) -> std::result::Result<(ConformalData, Option<f64>), Blocked> {
        match &self.cfg.suite.exponent {
            Some(text) => {
                let vars: &[&str] = match self.cfg.geometry {
                    GeometryConfig::Warped { .. } => &["r"],
                    GeometryConfig::Circle { .. } => &["theta"],
                    GeometryConfig::Torus { .. } => &["x", "y"],
                };
                let e = Expr::parse(text, vars)?;
                let f: Vec<f64> = level
                    .geom
                    .coordinates()
                    .iter()
                    .map(|c| e.eval(&c[..vars.len()]))
                    .collect();
                Ok((ConformalData::from_exponent(&level.geom, f, f64::INFINITY), None))
            }
            None => {
                let p = self.pipeline(level)?;
                let q = (p.params.q > 0.0).then_some(p.params.q);
                Ok((p.conf, q))
            }
        }
    }

    fn check_transformation(&mut self, primary: &Level) -> CheckResult {
        let cfg = self.cfg;
        let resolutions = cfg.refinement_resolutions();
        let mut levels_summary = Vec::new();
        let mut summary = BTreeMap::new();
        let mut problems = Vec::new();
        // per check label: (spacing, negative part) at each resolution
        let mut negative: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        let mut identity: Vec<(f64, f64)> = Vec::new();
        let mut chain: Vec<(f64, f64)> = Vec::new();
        let mut worst = None;
        for &res in &resolutions {
            let owned;
            let level = if res == primary.geom.spec().resolution() {
                primary
            } else {
                owned = self.level(res)?;
                &owned
            };
            let (conf, pipeline_q) = self.exponent_at(level)?;
            let suite = low_mode_suite(&level.dec, cfg.suite.count, cfg.suite.modes, cfg.seed);
            let h = level.geom.spacing();
            let kappa = cfg.suite.kappa;
            let mut reports = Vec::new();
            let base = self.time("transformation", || verify_bochner_baseline(&level.geom, &suite, kappa));
            reports.push(("bochner".to_string(), base));
            let mut qs: Vec<f64> = pipeline_q.into_iter().collect();
            qs.extend(cfg.suite.q_values.iter().cloned());
            for (k, q) in qs.iter().enumerate() {
                let label = if k == 0 && pipeline_q.is_some() {
                    "transformation_q_pipeline".to_string()
                } else {
                    format!("transformation_q_{}", q_label(*q))
                };
                let r = self.time("transformation", || {
                    verify_transformation_rule(&level.geom, &conf, *q, &suite, kappa)
                });
                reports.push((label, r));
            }
            // with f ≡ 0 and q = ∞ the rule is the baseline plus (Δu)²/n
            let flat = ConformalData::flat(&level.geom);
            let n = level.geom.dimension() as f64;
            let mut identity_gap: f64 = 0.0;
            for u in &suite {
                let b = bochner_margins(&level.geom, u);
                let t = transformation_margins(&level.geom, &flat, f64::INFINITY, u);
                let lu = level.geom.laplacian(u);
                for i in 0..u.len() {
                    let expect = b[i] + lu[i] * lu[i] / n;
                    identity_gap = identity_gap.max((t[i] - expect).abs() / (1.0 + expect.abs()));
                }
            }
            if identity_gap > 1e-9 {
                problems.push(format!("q = inf identity off by {identity_gap:.3e} at {res}"));
            }
            let chain_res = chain_rule_residual(&level.geom, &suite[0], |s| {
                let e = (0.5 * s).exp();
                (e, 0.5 * e, 0.25 * e)
            });
            chain.push((h, chain_res));
            if pipeline_q.is_some() || cfg.suite.exponent.is_none() {
                identity.push((h, conf.identity_residual));
            }
            for (label, r) in &reports {
                if !r.passed {
                    problems.push(format!("{label} has {} violations at {res}", r.violations));
                }
                if worst.as_ref().is_none_or(|(ratio, _)| r.worst_ratio < *ratio) {
                    let text = format!(
                        "{label} at {res}: function {}, node {}, margin {:.3e}",
                        r.worst_function, r.worst_node, r.worst_margin
                    );
                    worst = Some((r.worst_ratio, text));
                }
                negative.entry(label.clone()).or_default().push((h, r.negative_part));
                margin_summary(&format!("{label}.{res}"), r, &mut summary);
                let name = format!("margins_{label}_{res}.csv");
                self.artifact(&name, |path| r.write_csv(path))?;
            }
            levels_summary.push(json!({
                "resolution": res,
                "spacing": h,
                "reports": reports.iter().map(|(l, r)| json!({"label": l, "report": to_json(r)})).collect::<Vec<_>>(),
                "q_inf_identity_gap": identity_gap,
                "chain_rule_residual": chain_res,
                "identity_residual": conf.identity_residual,
            }));
        }
        let mut orders = BTreeMap::new();
        for (label, vals) in &negative {
            for w in vals.windows(2) {
                let (hc, nc) = w[0];
                let (hf, nf) = w[1];
                let order = if nf <= NEGATIVE_PART_FLOOR {
                    f64::INFINITY
                } else if nc <= NEGATIVE_PART_FLOOR {
                    f64::NEG_INFINITY
                } else {
                    observed_order(nc, nf, hc, hf)
                };
                if order < cfg.tolerances.violation_order {
                    problems.push(format!("{label}: negative part decreases at order {order:.2}"));
                }
                orders.insert(label.clone(), order);
                summary.insert(format!("{label}.negative_part_order"), order);
            }
        }
        for w in identity.windows(2) {
            let order = observed_order(w[0].1, w[1].1, w[0].0, w[1].0);
            summary.insert("identity_residual_order".into(), order);
            if order < cfg.tolerances.identity_order {
                problems.push(format!("identity residual converges at order {order:.2}"));
            }
        }
        for w in chain.windows(2) {
            summary.insert(
                "chain_rule_order".into(),
                observed_order(w[0].1, w[1].1, w[0].0, w[1].0),
            );
        }
        Ok(CheckReport {
            name: CheckName::Transformation,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: worst.map(|(_, text)| text),
            summary,
            details: json!({ "levels": levels_summary, "negative_part_orders": to_json(&orders) }),
        })
    }

    fn check_be(&mut self, level: &Level, p: &Pipeline) -> CheckResult {
        let cfg = self.cfg;
        let suite = low_mode_suite(&level.dec, cfg.suite.count, cfg.suite.modes, cfg.seed);
        let kappa = cfg.suite.kappa;
        let be = self.time("be", || verify_be(&level.geom, &p.conf, &p.params, &suite, kappa));
        let control_k = cfg.suite.control_factor * p.params.k.abs();
        let control = if p.params.k != 0.0 {
            let tightened = p.params.with_k(control_k);
            Some(self.time("be", || verify_be(&level.geom, &p.conf, &tightened, &suite, kappa)))
        } else {
            None
        };
        let f_tol = cfg.tolerances.f_bound;
        let f_ok = p.conf.f_min >= -f_tol && p.conf.f_max <= p.params.c + f_tol;
        // with f ≡ 0, K = 0 and N = n the certificate is the baseline itself
        let flat = p.conf.f_max == 0.0 && p.params.k == 0.0 && p.params.n_upper == level.geom.dimension() as f64;
        let baseline_gap = flat.then(|| {
            suite
                .iter()
                .map(|u| {
                    max_diff(
                        &be_margins(&level.geom, &p.conf, &p.params, u),
                        &bochner_margins(&level.geom, u),
                    )
                    .0
                })
                .fold(0.0, f64::max)
        });
        let mut problems = Vec::new();
        if !be.passed {
            problems.push(format!("{} certificate violations", be.violations));
        }
        if !f_ok {
            problems.push(format!(
                "f range [{:.3e}, {:.3e}] outside [0, C = {:.3e}]",
                p.conf.f_min, p.conf.f_max, p.params.c
            ));
        }
        if let Some(c) = &control {
            if c.violations == 0 {
                problems.push("falsification control produced no violations".into());
            }
        }
        let mut summary = BTreeMap::new();
        margin_summary("certificate", &be, &mut summary);
        if let Some(c) = &control {
            margin_summary("control", c, &mut summary);
        }
        summary.insert("f_min".into(), p.conf.f_min);
        summary.insert("f_max".into(), p.conf.f_max);
        summary.insert("f_bound".into(), p.params.c);
        summary.insert("curvature_bound".into(), p.params.curvature_bound());
        if let Some(g) = baseline_gap {
            summary.insert("baseline_gap".into(), g);
        }
        self.artifact("margins_be.csv", |path| be.write_csv(path))?;
        if let Some(c) = &control {
            self.artifact("margins_be_control.csv", |path| c.write_csv(path))?;
        }
        Ok(CheckReport {
            name: CheckName::Be,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: Some(format!(
                "function {}, node {}, margin {:.3e}",
                be.worst_function, be.worst_node, be.worst_margin
            )),
            summary,
            details: json!({
                "certificate": to_json(&p.params),
                "report": to_json(&be),
                "control": match &control {
                    Some(c) => json!({ "K": control_k, "report": to_json(c) }),
                    None => json!("not applicable: K = 0"),
                },
            }),
        })
    }

    fn pole_radius(&self, level: &Level) -> std::result::Result<f64, Blocked> {
        if level.geom.pole().is_none() {
            return Err(Blocked::Skip("not applicable: geometry has no pole".into()));
        }
        Ok(self.cfg.t_final.sqrt())
    }

    fn check_bishop_gromov(&mut self, level: &Level, p: &Pipeline) -> CheckResult {
        let cfg = self.cfg;
        let r_top = self.pole_radius(level)?;
        let pairs = radius_pairs(r_top, cfg.volume.pair_grid);
        let kappa_sq = -p.params.curvature_bound();
        let n = level.geom.dimension() as f64;
        let bg = self.time("volume", || {
            bg_bound_check(&level.geom, &p.conf, kappa_sq, p.params.n_upper, &pairs)
        })?;
        let lowered = n - cfg.volume.control_drop;
        let control = self.time("volume", || {
            bg_bound_check(&level.geom, &p.conf, kappa_sq, lowered, &pairs)
        })?;
        let curve = volume_ratio_curve(&level.geom, &uniform_radii(r_top, cfg.volume.radii))?;
        // the printed comparison profile against the same bound, for reference
        let kappa = kappa_sq.sqrt();
        let mut profile_violations = 0usize;
        for &(r, big) in &pairs {
            let ratio =
                comparison_volume(kappa, p.params.n_upper, big)? / comparison_volume(kappa, p.params.n_upper, r)?;
            if ratio > crate::volume::bg_bound(kappa_sq, p.params.n_upper, r, big) * (1.0 + 1e-10) {
                profile_violations += 1;
            }
        }
        let mut problems = Vec::new();
        if !bg.passed {
            problems.push(format!("{} pairs violate the bound", bg.violations));
        }
        if control.violations == 0 {
            problems.push(format!("control with N = {lowered} produced no violations"));
        }
        let mut summary = BTreeMap::new();
        summary.insert("violations".into(), bg.violations as f64);
        summary.insert("worst_log_margin".into(), bg.worst_log_margin);
        summary.insert("control_violations".into(), control.violations as f64);
        summary.insert("kappa_sq".into(), kappa_sq);
        summary.insert("comparison_profile_violations".into(), profile_violations as f64);
        self.artifact("volume_ratio.csv", |path| curve.write_csv(path))?;
        self.artifact("bg_pairs.csv", |path| bg.write_csv(path))?;
        self.artifact("bg_control_pairs.csv", |path| control.write_csv(path))?;
        Ok(CheckReport {
            name: CheckName::BishopGromov,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: bg.worst_pair.map(|(r, big)| format!("pair r = {r:.6}, R = {big:.6}")),
            summary,
            details: json!({ "bound": to_json(&bg), "control": to_json(&control), "curve": to_json(&curve) }),
        })
    }

    fn check_doubling(&mut self, level: &Level, p: &Pipeline) -> CheckResult {
        let r_top = self.pole_radius(level)?;
        let pairs = radius_pairs(r_top, self.cfg.volume.pair_grid);
        let constant = doubling_constant(p.conf.f_max.max(0.0), p.params.k, p.params.n_upper);
        let rep = self.time("volume", || {
            doubling_check(&level.geom, constant, p.params.n_upper, &pairs)
        })?;
        let mut summary = BTreeMap::new();
        summary.insert("constant".into(), constant);
        summary.insert("violations".into(), rep.violations as f64);
        summary.insert("worst_log_margin".into(), rep.worst_log_margin);
        self.artifact("doubling_pairs.csv", |path| rep.write_csv(path))?;
        Ok(CheckReport {
            name: CheckName::Doubling,
            status: if rep.passed { Status::Pass } else { Status::Fail },
            reason: (!rep.passed).then(|| format!("{} pairs violate the doubling bound", rep.violations)),
            worst: rep.worst_pair.map(|(s, r)| format!("pair s = {s:.6}, r = {r:.6}")),
            summary,
            details: json!({ "constant": constant, "report": to_json(&rep) }),
        })
    }

    fn monotonicity_reports(&mut self, level: &Level) -> std::result::Result<Vec<MonotonicityReport>, Blocked> {
        let cfg = self.cfg;
        let bound = match &cfg.regime {
            RegimeConfig::Sk { bound } => bound.clone(),
            _ => KatoBoundFn::from_profile(&level.profile),
        };
        let curve = volume_ratio_curve(&level.geom, &uniform_radii(cfg.t_final.sqrt(), cfg.volume.radii))?;
        let mut out = Vec::new();
        for &eta in &cfg.volume.etas {
            out.push(self.time("volume", || almost_monotonicity_check(&curve, &bound, eta))?);
        }
        Ok(out)
    }

    fn check_monotonicity(
        &mut self,
        primary: &Level,
        conditions: Option<&crate::kato::ConditionReport>,
    ) -> CheckResult {
        let cfg = self.cfg;
        self.pole_radius(primary)?;
        if let (RegimeConfig::Sk { .. }, Some(c)) = (&cfg.regime, conditions) {
            if c.sk_ok == Some(false) {
                return Err(Blocked::Skip(format!(
                    "(SK) violated: {}",
                    c.sk_detail.clone().unwrap_or_default()
                )));
            }
        }
        let mut per_res = Vec::new();
        for &res in &cfg.refinement_resolutions() {
            let owned;
            let level = if res == primary.geom.spec().resolution() {
                primary
            } else {
                owned = self.level(res)?;
                &owned
            };
            per_res.push((res, self.monotonicity_reports(level)?));
        }
        let (_, finest) = per_res.last().expect("at least one resolution");
        let mut problems = Vec::new();
        let mut summary = BTreeMap::new();
        for r in finest {
            if !r.c_star.is_finite() {
                problems.push(format!("eta = {}: volume ratio grows where Phi is flat", r.eta));
            }
            summary.insert(format!("c_star.eta_{}", r.eta), r.c_star);
            summary.insert(format!("c_star_scaled.eta_{}", r.eta), r.c_star_scaled);
        }
        let mut max_drift: f64 = 0.0;
        for w in per_res.windows(2) {
            for (a, b) in w[0].1.iter().zip(&w[1].1) {
                max_drift = max_drift.max(relative_drift(a.c_star, b.c_star));
            }
        }
        if max_drift > cfg.volume.drift_tol {
            problems.push(format!("C* drifts by {:.1}% under refinement", 100.0 * max_drift));
        }
        let scaled: Vec<f64> = finest.iter().map(|r| r.c_star_scaled).collect();
        let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = if hi == 0.0 {
            0.0
        } else if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo - 1.0
        };
        if scaled.len() > 1 && spread > cfg.volume.eta_spread_tol {
            problems.push(format!("C*·ln(1/(1-eta)) varies by {:.1}% across eta", 100.0 * spread));
        }
        let vacuous = finest.iter().all(|r| r.vacuous);
        summary.insert("drift".into(), max_drift);
        summary.insert("eta_spread".into(), spread);
        summary.insert("vacuous".into(), f64::from(u8::from(vacuous)));
        let rows: Vec<Vec<f64>> = per_res
            .iter()
            .flat_map(|(res, reps)| {
                reps.iter()
                    .map(move |r| vec![*res as f64, r.eta, r.c_star, r.c_star_scaled, r.active_pairs as f64])
            })
            .collect();
        self.artifact("monotonicity.csv", |path| {
            write_table(
                path,
                &["resolution", "eta", "c_star", "c_star_scaled", "active_pairs"],
                &rows,
            )
        })?;
        let worst = finest
            .iter()
            .filter_map(|r| {
                r.worst_pair
                    .map(|(a, b)| format!("eta = {}: pair r = {a:.6}, R = {b:.6}", r.eta))
            })
            .last();
        Ok(CheckReport {
            name: CheckName::Monotonicity,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: if !problems.is_empty() {
                Some(problems.join("; "))
            } else if vacuous {
                Some("vacuous: the volume ratio never grows on the admissible pairs".into())
            } else {
                None
            },
            worst,
            summary,
            details: json!({
                "levels": per_res.iter().map(|(res, reps)| json!({"resolution": res, "reports": to_json(reps)})).collect::<Vec<_>>(),
            }),
        })
    }

    fn check_gauss2d(&mut self, level: &Level) -> CheckResult {
        let cfg = self.cfg;
        if level.geom.kind() != GeometryKind::ConformalTorus2d {
            return Err(Blocked::Skip("not applicable: needs a conformal torus".into()));
        }
        let opts = cfg.gauge.solve_options();
        let tol = cfg.tolerances.gauss_curvature;
        let t = cfg.t_final;
        let rep = self.time("gauss2d", || {
            gauss_curvature_check_2d(&level.geom, &level.dec, t, &opts, tol)
        })?;
        let gb_tol = cfg.tolerances.gauss_bonnet;
        let mut problems = Vec::new();
        if !rep.passed {
            problems.push(format!(
                "curvature {:.6e} below bound {:.6e} or f outside [0, {:.3e}]",
                rep.curvature_min, rep.curvature_bound, rep.f_bound
            ));
        }
        if rep.gauss_bonnet_before.abs() > gb_tol || rep.gauss_bonnet_after.abs() > gb_tol {
            problems.push(format!(
                "Gauss-Bonnet integrals {:.3e} / {:.3e}",
                rep.gauss_bonnet_before, rep.gauss_bonnet_after
            ));
        }
        let mut summary = BTreeMap::new();
        summary.insert("curvature_min".into(), rep.curvature_min);
        summary.insert("curvature_bound".into(), rep.curvature_bound);
        summary.insert("margin".into(), rep.margin);
        summary.insert("gauss_bonnet_before".into(), rep.gauss_bonnet_before);
        summary.insert("gauss_bonnet_after".into(), rep.gauss_bonnet_after);
        summary.insert("f_max".into(), rep.f_max);
        summary.insert("f_bound".into(), rep.f_bound);
        Ok(CheckReport {
            name: CheckName::Gauss2d,
            status: if problems.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            reason: (!problems.is_empty()).then(|| problems.join("; ")),
            worst: Some(format!("lowest curvature at node {}", rep.worst_node)),
            summary,
            details: to_json(&rep),
        })
    }
}

/// `T` with `k_T(Ric₋) = target`, by bisection on the increasing map
/// `t ↦ k_t`.
pub fn time_for_kato(dec: &SpectralDecomposition, ric: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Config(format!("k_target must be positive, got {target}")));
    }
    let mut hi = 1e-3;
    let mut k_hi = kato_of_potential(dec, ric, hi)?;
    let mut steps = 0;
    while k_hi < target {
        hi *= 2.0;
        k_hi = kato_of_potential(dec, ric, hi)?;
        steps += 1;
        if steps > 60 {
            return Err(Error::Config(format!("k_t never reaches {target}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kato_of_potential(dec, ric, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub scenario: String,
    pub status: Status,
    pub check_status: BTreeMap<String, Status>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Observed orders of every column between consecutive rows (resolution axis).
    pub orders: Option<BTreeMap<String, Vec<f64>>>,
}

impl SweepTable {
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.rows.iter().flat_map(|r| r.values.keys().cloned()).collect();
        cols.sort();
        cols.dedup();
        cols
    }

    pub fn status(&self) -> Status {
        if self.rows.iter().any(|r| r.status == Status::Fail) {
            Status::Fail
        } else {
            Status::Pass
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let cols = self.columns();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["value".to_string(), "scenario".into(), "status".into()];
        header.extend(cols.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                crate::geometry::fmt(r.value),
                r.scenario.clone(),
                r.status.as_str().into(),
            ];
            rec.extend(
                cols.iter()
                    .map(|c| r.values.get(c).map(|v| crate::geometry::fmt(*v)).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One scenario per axis value, run concurrently; each writes into its own
/// directory `out_dir/<name>_<axis>_<index>`.
pub fn sweep(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    base_dir: &Path,
    out_dir: Option<&Path>,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, &v)| sweep_config(cfg, axis, v, i, base_dir))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = configs
        .par_iter()
        .map(|c| run_scenario(c, base_dir, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = outcomes
        .iter()
        .zip(values)
        .map(|(o, &value)| SweepRow {
            value,
            scenario: o.report.scenario.clone(),
            status: o.report.status,
            check_status: o
                .report
                .checks
                .iter()
                .map(|c| (c.name.as_str().to_string(), c.status))
                .collect(),
            values: o.report.flat_summary(),
        })
        .collect();
    let mut table = SweepTable {
        axis,
        rows,
        orders: None,
    };
    if axis == SweepAxis::Resolution {
        let mut orders = BTreeMap::new();
        for col in table.columns() {
            let mut o = Vec::new();
            for w in table.rows.windows(2) {
                match (w[0].values.get(&col), w[1].values.get(&col)) {
                    (Some(&a), Some(&b)) if a > 0.0 && b >= 0.0 => {
                        o.push(observed_order(a, b, 1.0 / w[0].value, 1.0 / w[1].value))
                    }
                    _ => o.push(f64::NAN),
                }
            }
            orders.insert(col, o);
        }
        table.orders = Some(orders);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let stem = format!("{}_sweep_{}", cfg.name, axis_label(axis));
        table.write_csv(&dir.join(format!("{stem}.csv")))?;
        if let Some(orders) = &table.orders {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_orders.csv")))?;
            let mut header = vec!["column".to_string()];
            header.extend(table.rows.windows(2).map(|p| format!("{}->{}", p[0].value, p[1].value)));
            w.write_record(&header)?;
            for (col, o) in orders {
                let mut rec = vec![col.clone()];
                rec.extend(o.iter().map(|v| crate::geometry::fmt(*v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&table)?)?;
    }
    Ok(table)
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Gamma => "gamma",
        SweepAxis::KTarget => "k_target",
        SweepAxis::Resolution => "resolution",
        SweepAxis::Eta => "eta",
    }
}

fn sweep_config(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    value: f64,
    index: usize,
    base_dir: &Path,
) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    c.name = format!("{}_{}_{index}", cfg.name, axis_label(axis));
    c.sweep = None;
    match axis {
        SweepAxis::Gamma => match &mut c.regime {
            RegimeConfig::D { gamma } => *gamma = value,
            _ => return Err(Error::Config("a gamma sweep needs regime D".into())),
        },
        SweepAxis::KTarget => {
            let spec = c.geometry.to_spec(base_dir)?;
            let geom = build_geometry(&spec)?;
            let dec = decompose(&geom, None)?;
            let ric = ricci_minus_field(&geom);
            c.t_final = time_for_kato(&dec, &ric, value)?;
        }
        SweepAxis::Resolution => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Config(format!(
                    "resolution must be a positive integer, got {value}"
                )));
            }
            c.geometry.set_resolution(value as usize);
            c.suite.resolutions = None;
        }
        SweepAxis::Eta => c.volume.etas = vec![value],
    }
    c.validate()?;
    Ok(c)
}

/// Output directory: the environment override wins over the flag.
pub fn resolve_out_dir(flag: Option<PathBuf>, env: Option<String>) -> PathBuf {
    match env.filter(|s| !s.is_empty()) {
        Some(e) => PathBuf::from(e),
        None => flag.unwrap_or_else(|| PathBuf::from("katolab-out")),
    }
}
