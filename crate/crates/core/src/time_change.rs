//! Parameter selection for the conformal time change, the conformal data
//! itself, and pointwise Bakry–Émery margin checks.

use std::f64::consts::LN_2;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{gauge_phi, SolveOptions};
use crate::geometry::{fmt, ricci_minus_field, DiscreteField, Endpoint, GeometryKind, GeometrySpec, ModelGeometry};
use crate::kato::{dprime_threshold, gamma_upper, kato_of_manifold};
use crate::spectral::SpectralDecomposition;

/// Slack allowed below `φ = 1` before the exponent is rejected.
pub const PHI_FLOOR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    D,
    Dprime,
    #[serde(rename = "dim2")]
    Dim2,
}

/// A curvature-dimension certificate together with the parameters that
/// produced it. `k` is a numerator: the curvature bound is `k / t_final`.
#[derive(Debug, Clone, Serialize)]
pub struct BEParameters {
    pub regime: Regime,
    pub dimension: usize,
    pub t_final: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "N")]
    pub n_upper: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    pub beta: f64,
    pub q: f64,
    /// `−2βT/λ`, the curvature numerator the construction actually yields.
    pub k_proof: f64,
    pub gamma: Option<f64>,
    pub kato: Option<f64>,
    /// Set when the curvature numerator uses `(n−2)γ` inside the logarithm.
    pub typo_corrected: bool,
}

impl BEParameters {
    /// Curvature lower bound `K/T`.
    pub fn curvature_bound(&self) -> f64 {
        self.k / self.t_final
    }

    /// Potential `λ Ric₋` fed to the gauge equation.
    pub fn potential(&self, ric_minus: &[f64]) -> Vec<f64> {
        ric_minus
            .iter()
            .map(|&r| if r == 0.0 { 0.0 } else { self.lambda * r })
            .collect()
    }

    /// The same certificate with the curvature numerator replaced.
    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..self.clone() }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "T",
            value: t,
            range: "(0, ∞)".into(),
        })
    }
}

/// Parameters under an integral smallness condition `k_T ≤ γ`.
pub fn select_parameters_d(n: usize, gamma: f64, t_final: f64) -> Result<BEParameters> {
    check_time(t_final)?;
    let upper = gamma_upper(n);
    if !(gamma > 0.0 && gamma < upper) {
        return Err(Error::OutOfRange {
            what: "gamma",
            value: gamma,
            range: format!("(0, {upper})"),
        });
    }
    let m = (n - 2) as f64;
    let lambda = 0.5 * (m + 1.0 / gamma);
    let half = 0.5 * (1.0 - m * gamma);
    let beta = -half.ln() / t_final;
    let q = 2.0 * m * m * gamma / (1.0 - m * gamma);
    let k = 4.0 * half.ln() / (m + 1.0 / gamma);
    let c = (2.0 * (beta * t_final).exp()).ln() / lambda;
    Ok(BEParameters {
        regime: Regime::D,
        dimension: n,
        t_final,
        k,
        n_upper: n as f64 + q,
        c,
        lambda,
        beta,
        q,
        k_proof: -2.0 * beta * t_final / lambda,
        gamma: Some(gamma),
        kato: None,
        typo_corrected: n > 2,
    })
}

/// Parameters from a measured Kato constant below `1/(3(n−2))`.
pub fn select_parameters_dprime(n: usize, kato: f64, t_final: f64) -> Result<BEParameters> {
    check_time(t_final)?;
    let threshold = dprime_threshold(n);
    if !(kato >= 0.0 && kato < threshold) {
        return Err(Error::HypothesisViolated(format!(
            "k_T = {kato} is not below 1/(3(n-2)) = {threshold}"
        )));
    }
    let m = (n - 2) as f64;
    let a = 1.0 - (-1.0f64).exp();
    let beta = 1.0 / t_final;
    let (lambda, q) = if kato == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (a / kato, m * m * kato / (a - m * kato))
    };
    let params = BEParameters {
        regime: Regime::Dprime,
        dimension: n,
        t_final,
        k: -4.0 * kato,
        n_upper: n as f64 + 4.0 * m * m * kato,
        c: 4.0 * kato,
        lambda,
        beta,
        q,
        k_proof: if kato == 0.0 {
            0.0
        } else {
            -2.0 * beta * t_final / lambda
        },
        gamma: None,
        kato: Some(kato),
        typo_corrected: false,
    };
    // the statement-level certificate is weaker than what the proof yields
    let bridge = [
        (kato == 0.0 || 1.0 / lambda <= 2.0 * kato, "1/λ ≤ 2k_T"),
        (q <= 4.0 * m * m * kato * (1.0 + 1e-12), "q ≤ 4(n−2)²k_T"),
        (kato == 0.0 || (LN_2 + 1.0) / lambda <= 4.0 * kato, "(1/λ)ln(2e) ≤ 4k_T"),
    ];
    for (ok, what) in bridge {
        if !ok {
            return Err(Error::HypothesisViolated(format!("bridging inequality {what} fails")));
        }
    }
    Ok(params)
}

/// Two-dimensional parameters: `V = Ric₋/(2k_T)`, `f = 2k_T ln φ`, and a
/// Gauss curvature bound `−2k_T ln 4 / T`.
pub fn select_parameters_dim2(kato: f64, t_final: f64) -> Result<BEParameters> {
    check_time(t_final)?;
    if !(kato >= 0.0 && kato.is_finite()) {
        return Err(Error::OutOfRange {
            what: "k_T",
            value: kato,
            range: "[0, ∞)".into(),
        });
    }
    let beta = LN_2 / t_final;
    let lambda = if kato == 0.0 { f64::INFINITY } else { 1.0 / (2.0 * kato) };
    let ln4 = 4.0f64.ln();
    Ok(BEParameters {
        regime: Regime::Dim2,
        dimension: 2,
        t_final,
        k: -2.0 * kato * ln4,
        n_upper: 2.0,
        c: 2.0 * kato * ln4,
        lambda,
        beta,
        q: 0.0,
        k_proof: -2.0 * kato * ln4,
        gamma: None,
        kato: Some(kato),
        typo_corrected: false,
    })
}

/// `c(n, q) = (n−2)(n+q−2)/q`, with its limit `n−2` at `q = ∞` and `0`
/// when `n = 2`.
pub fn c_coefficient(n: usize, q: f64) -> f64 {
    let m = (n - 2) as f64;
    if n == 2 {
        0.0
    } else if q.is_infinite() {
        m
    } else {
        m * (m + q) / q
    }
}

/// Exponent `f`, the scale `e^{2f}`, and the weighted masses `e^{2f} m`.
#[derive(Debug, Clone, Serialize)]
pub struct ConformalData {
    pub f: DiscreteField,
    #[serde(skip)]
    pub scale: Vec<f64>,
    #[serde(skip)]
    pub weights_bar: Vec<f64>,
    pub lambda: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// `sup |Δf − Δφ/(λφ) − λ|df|²|`.
    pub identity_residual: f64,
}

impl ConformalData {
    pub fn flat(geom: &ModelGeometry) -> Self {
        Self::from_exponent(geom, vec![0.0; geom.node_count()], f64::INFINITY)
    }

    /// Conformal data for an arbitrary exponent (no gauge identity).
    pub fn from_exponent(geom: &ModelGeometry, f: Vec<f64>, lambda: f64) -> Self {
        let scale: Vec<f64> = f.iter().map(|x| (2.0 * x).exp()).collect();
        let weights_bar = geom.weights().iter().zip(&scale).map(|(m, s)| m * s).collect();
        let f_min = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let f_max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            f: DiscreteField::from_values(f),
            scale,
            weights_bar,
            lambda,
            f_min,
            f_max,
            identity_residual: 0.0,
        }
    }

    pub fn exponent(&self) -> &[f64] {
        &self.f
    }

    /// `Lu = e^{−2f}Δu`.
    pub fn apply_l(&self, geom: &ModelGeometry, u: &[f64]) -> Vec<f64> {
        let mut out = geom.laplacian(u);
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o /= s;
        }
        out
    }

    /// `⟨du, dv⟩` in the changed metric.
    pub fn grad_dot_bar(&self, geom: &ModelGeometry, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = geom.grad_dot(u, v);
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o /= s;
        }
        out
    }

    pub fn total_weighted_volume(&self) -> f64 {
        self.weights_bar.iter().sum()
    }
}

/// `f = (1/λ) ln φ` with the identity residual.
pub fn build_conformal(geom: &ModelGeometry, phi: &[f64], lambda: f64) -> Result<ConformalData> {
    let n = geom.node_count();
    if phi.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    if let Some((i, &p)) = phi.iter().enumerate().find(|(_, &p)| !(p >= 1.0 - PHI_FLOOR_TOL)) {
        return Err(Error::OutOfRange {
            what: "gauge function",
            value: p,
            range: format!("[1, ∞) at node {i}"),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::OutOfRange {
            what: "lambda",
            value: lambda,
            range: "(0, ∞]".into(),
        });
    }
    if lambda.is_infinite() {
        return Ok(ConformalData::flat(geom));
    }
    let f: Vec<f64> = phi.iter().map(|p| p.ln() / lambda).collect();
    let lap_f = geom.laplacian(&f);
    let lap_phi = geom.laplacian(phi);
    let df2 = geom.grad_dot(&f, &f);
    let residual = (0..n)
        .map(|i| (lap_f[i] - lap_phi[i] / (lambda * phi[i]) - lambda * df2[i]).abs())
        .fold(0.0, f64::max);
    let mut data = ConformalData::from_exponent(geom, f, lambda);
    data.identity_residual = residual;
    Ok(data)
}

/// `sup |Δ(χ∘φ) − χ'(φ)Δφ + χ''(φ)|dφ|²|`, a self-test of the discrete
/// calculus.
pub fn chain_rule_residual(geom: &ModelGeometry, phi: &[f64], chi: impl Fn(f64) -> (f64, f64, f64)) -> f64 {
    let comp: Vec<f64> = phi.iter().map(|&p| chi(p).0).collect();
    let lhs = geom.laplacian(&comp);
    let lap = geom.laplacian(phi);
    let grad = geom.grad_dot(phi, phi);
    (0..phi.len())
        .map(|i| {
            let (_, d1, d2) = chi(phi[i]);
            (lhs[i] - d1 * lap[i] + d2 * grad[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Seeded random combinations of the lowest eigenfields with coefficients
/// uniform in `[−1, 1]`.
pub fn low_mode_suite(dec: &SpectralDecomposition, count: usize, modes: usize, seed: u64) -> Vec<Vec<f64>> {
    let modes = modes.min(dec.mode_count());
    let fields: Vec<Vec<f64>> = (0..modes).map(|k| dec.eigenfield(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut u = vec![0.0; dec.node_count()];
            for psi in &fields {
                let c: f64 = rng.random_range(-1.0..=1.0);
                for (o, p) in u.iter_mut().zip(psi) {
                    *o += c * p;
                }
            }
            u
        })
        .collect()
}

/// Nodes at which pointwise inequalities are asserted: everything except
/// the two cells next to a reflecting end.
pub fn interior_mask(geom: &ModelGeometry) -> Vec<bool> {
    let n = geom.node_count();
    let mut mask = vec![true; n];
    if let GeometrySpec::Warped { left, right, .. } = geom.spec() {
        if *left == Endpoint::Reflecting {
            mask[..2].iter_mut().for_each(|m| *m = false);
        }
        if *right == Endpoint::Reflecting {
            mask[n - 2..].iter_mut().for_each(|m| *m = false);
        }
    }
    mask
}

/// Grid tolerance for a pointwise Γ₂ inequality: `κ h² D_u² (1 + D_f)²`
/// where `D_u` is the largest difference quotient of `u` up to third order
/// and `D_f` the largest of `f` up to second order.
pub fn grid_tolerance(geom: &ModelGeometry, kappa: f64, u: &[f64], f: &[f64]) -> f64 {
    let h = geom.spacing();
    let du = geom.derivative_scale(u);
    let df = geom.derivative_scale_to(f, 2);
    kappa * h * h * du * du * (1.0 + df) * (1.0 + df)
}

/// The two sides of the Γ₂ inequality at every node for one function.
#[derive(Debug, Clone)]
pub struct Gamma2Terms {
    /// `⟨dLu, du⟩ − ½L|du|²` in the changed metric.
    pub gamma2: Vec<f64>,
    pub lu: Vec<f64>,
    /// `|du|²` in the changed metric.
    pub grad2: Vec<f64>,
}

pub fn gamma2_terms(geom: &ModelGeometry, conf: &ConformalData, u: &[f64]) -> Gamma2Terms {
    let lu = conf.apply_l(geom, u);
    let grad2 = conf.grad_dot_bar(geom, u, u);
    let cross = conf.grad_dot_bar(geom, &lu, u);
    let l_grad = conf.apply_l(geom, &grad2);
    let gamma2 = cross.iter().zip(&l_grad).map(|(c, l)| c - 0.5 * l).collect();
    Gamma2Terms { gamma2, lu, grad2 }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionMargin {
    pub index: usize,
    pub min_margin: f64,
    pub node: usize,
    pub tolerance: f64,
    pub violations: usize,
    /// `∫ max(0, −margin) dν` over the checked nodes.
    pub negative_part: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub check: String,
    pub functions: usize,
    pub nodes_checked: usize,
    pub kappa: f64,
    pub worst_margin: f64,
    /// Worst margin divided by its tolerance.
    pub worst_ratio: f64,
    pub worst_function: usize,
    pub worst_node: usize,
    pub violations: usize,
    /// Largest `∫ max(0, −margin) dν` over the suite.
    pub negative_part: f64,
    pub passed: bool,
    #[serde(skip)]
    pub per_function: Vec<FunctionMargin>,
}

impl MarginReport {
    fn collect(check: &str, kappa: f64, nodes: usize, per_function: Vec<FunctionMargin>) -> Self {
        let mut worst = (f64::INFINITY, f64::INFINITY, 0, 0);
        for fm in &per_function {
            let ratio = fm.min_margin / fm.tolerance.max(f64::MIN_POSITIVE);
            if ratio < worst.1 {
                worst = (fm.min_margin, ratio, fm.index, fm.node);
            }
        }
        let violations = per_function.iter().map(|f| f.violations).sum();
        let negative_part = per_function.iter().map(|f| f.negative_part).fold(0.0, f64::max);
        Self {
            check: check.to_string(),
            functions: per_function.len(),
            nodes_checked: nodes,
            kappa,
            worst_margin: worst.0,
            worst_ratio: worst.1,
            worst_function: worst.2,
            worst_node: worst.3,
            violations,
            negative_part,
            passed: violations == 0,
            per_function,
        }
    }

    /// Per-function minimum margins and tolerances.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "function",
            "min_margin",
            "node",
            "tolerance",
            "violations",
            "negative_part",
        ])?;
        for f in &self.per_function {
            w.write_record([
                f.index.to_string(),
                fmt(f.min_margin),
                f.node.to_string(),
                fmt(f.tolerance),
                f.violations.to_string(),
                fmt(f.negative_part),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate a per-node margin field over the suite on the interior mask.
fn margin_check(
    check: &str,
    geom: &ModelGeometry,
    f: &[f64],
    suite: &[Vec<f64>],
    kappa: f64,
    margins: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> MarginReport {
    let mask = interior_mask(geom);
    let nodes = mask.iter().filter(|m| **m).count();
    let weights = geom.weights();
    let per_function: Vec<FunctionMargin> = suite
        .par_iter()
        .enumerate()
        .map(|(index, u)| {
            let m = margins(u);
            let tol = grid_tolerance(geom, kappa, u, f);
            let mut min = (f64::INFINITY, 0);
            let mut violations = 0;
            let mut negative_part = 0.0;
            for (i, &mi) in m.iter().enumerate().filter(|(i, _)| mask[*i]) {
                if mi < min.0 {
                    min = (mi, i);
                }
                if mi < -tol {
                    violations += 1;
                }
                negative_part += weights[i] * (-mi).max(0.0);
            }
            FunctionMargin {
                index,
                min_margin: min.0,
                node: min.1,
                tolerance: tol,
                violations,
                negative_part,
            }
        })
        .collect();
    MarginReport::collect(check, kappa, nodes, per_function)
}

/// `Γ₂(u) − (Δu)²/n + Ric₋|du|²` for the unchanged metric.
pub fn bochner_margins(geom: &ModelGeometry, u: &[f64]) -> Vec<f64> {
    let conf = ConformalData::flat(geom);
    let n = geom.dimension() as f64;
    let ric = ricci_minus_field(geom);
    let t = gamma2_terms(geom, &conf, u);
    (0..u.len())
        .map(|i| t.gamma2[i] - t.lu[i] * t.lu[i] / n + ric[i] * t.grad2[i])
        .collect()
}

/// Margin of the transformation rule
/// `Γ₂^L(u) ≥ (Lu)²/(n+q) + (−Ric₋ + Δf − c(n,q)|df|²) e^{−2f}|du|²_ḡ`.
/// `q = ∞` drops the first term.
pub fn transformation_margins(geom: &ModelGeometry, conf: &ConformalData, q: f64, u: &[f64]) -> Vec<f64> {
    let n = geom.dimension();
    let c = c_coefficient(n, q);
    let inv_dim = if q.is_infinite() { 0.0 } else { 1.0 / (n as f64 + q) };
    let ric = ricci_minus_field(geom);
    let f = conf.exponent();
    let lap_f = geom.laplacian(f);
    let df2 = geom.grad_dot(f, f);
    let t = gamma2_terms(geom, conf, u);
    (0..u.len())
        .map(|i| {
            let pot = (-ric[i] + lap_f[i] - c * df2[i]) / conf.scale[i];
            t.gamma2[i] - t.lu[i] * t.lu[i] * inv_dim - pot * t.grad2[i]
        })
        .collect()
}

/// Margin of `Γ₂^L(u) ≥ (Lu)²/N + (K/T)|du|²_ḡ`.
pub fn be_margins(geom: &ModelGeometry, conf: &ConformalData, params: &BEParameters, u: &[f64]) -> Vec<f64> {
    let inv_dim = 1.0 / params.n_upper;
    let kt = params.curvature_bound();
    let t = gamma2_terms(geom, conf, u);
    (0..u.len())
        .map(|i| t.gamma2[i] - t.lu[i] * t.lu[i] * inv_dim - kt * t.grad2[i])
        .collect()
}

pub fn verify_bochner_baseline(geom: &ModelGeometry, suite: &[Vec<f64>], kappa: f64) -> MarginReport {
    let zero = vec![0.0; geom.node_count()];
    margin_check("bochner", geom, &zero, suite, kappa, |u| bochner_margins(geom, u))
}

pub fn verify_transformation_rule(
    geom: &ModelGeometry,
    conf: &ConformalData,
    q: f64,
    suite: &[Vec<f64>],
    kappa: f64,
) -> MarginReport {
    margin_check("transformation", geom, conf.exponent(), suite, kappa, |u| {
        transformation_margins(geom, conf, q, u)
    })
}

pub fn verify_be(
    geom: &ModelGeometry,
    conf: &ConformalData,
    params: &BEParameters,
    suite: &[Vec<f64>],
    kappa: f64,
) -> MarginReport {
    margin_check("be", geom, conf.exponent(), suite, kappa, |u| {
        be_margins(geom, conf, params, u)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Gauss2dReport {
    pub kato: f64,
    pub params: BEParameters,
    pub f_min: f64,
    pub f_max: f64,
    pub f_bound: f64,
    pub curvature_min: f64,
    pub curvature_bound: f64,
    pub margin: f64,
    pub worst_node: usize,
    pub gauss_bonnet_before: f64,
    pub gauss_bonnet_after: f64,
    pub gauge_residual: f64,
    pub passed: bool,
}

/// Gauss curvature of `e^{2f}g`: `e^{−2f}(Δf + K_g)`.
pub fn changed_gauss_curvature(geom: &ModelGeometry, f: &[f64]) -> Vec<f64> {
    let lap = geom.laplacian(f);
    lap.iter()
        .zip(geom.ricci_lowest())
        .zip(f)
        .map(|((l, k), fi)| (-2.0 * fi).exp() * (l + k))
        .collect()
}

/// Two-dimensional pipeline on a conformal torus: Kato constant, gauge,
/// `f = 2k_T ln φ`, and the curvature lower bound `−2k_T ln 4 / T`.
pub fn gauss_curvature_check_2d(
    geom: &ModelGeometry,
    dec: &SpectralDecomposition,
    t_final: f64,
    opts: &SolveOptions,
    tol: f64,
) -> Result<Gauss2dReport> {
    if geom.kind() != GeometryKind::ConformalTorus2d {
        return Err(Error::InvalidGeometry(
            "the Gauss curvature check needs a conformal torus".into(),
        ));
    }
    let kato = kato_of_manifold(geom, dec, t_final)?;
    let params = select_parameters_dim2(kato, t_final)?;
    let ric = ricci_minus_field(geom);
    let gb_before = geom.integral(geom.ricci_lowest());
    let (f, residual) = if kato == 0.0 {
        (vec![0.0; geom.node_count()], 0.0)
    } else {
        let v = params.potential(&ric);
        let g = gauge_phi(geom, dec, &v, params.beta, t_final, opts)?;
        let f = g.phi.iter().map(|p| 2.0 * kato * p.ln()).collect();
        (f, g.pde_residual)
    };
    let k_new = changed_gauss_curvature(geom, &f);
    let conf = ConformalData::from_exponent(geom, f, params.lambda);
    let gb_after: f64 = k_new.iter().zip(&conf.weights_bar).map(|(k, m)| k * m).sum();
    let (curvature_min, worst_node) =
        k_new
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (i, &k)| if k < acc.0 { (k, i) } else { acc });
    let bound = params.curvature_bound();
    let f_bound = params.c;
    let margin = curvature_min - bound;
    let passed = margin >= -tol && conf.f_min >= -tol && conf.f_max <= f_bound + tol;
    Ok(Gauss2dReport {
        kato,
        params,
        f_min: conf.f_min,
        f_max: conf.f_max,
        f_bound,
        curvature_min,
        curvature_bound: bound,
        margin,
        worst_node,
        gauss_bonnet_before: gb_before,
        gauss_bonnet_after: gb_after,
        gauge_residual: residual,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;
    use crate::spectral::decompose;

    #[test]
    fn regime_d_hand_example() {
        let p = select_parameters_d(3, 0.5, 1.0).unwrap();
        assert!((p.lambda - 1.5).abs() < 1e-14);
        assert!((p.beta - 4.0f64.ln()).abs() < 1e-14);
        assert!((p.q - 2.0).abs() < 1e-14);
        assert!((p.n_upper - 5.0).abs() < 1e-14);
        assert!((p.k + 2.0 * 4.0f64.ln() / 1.5).abs() < 1e-12);
        assert!((p.c - 8.0f64.ln() / 1.5).abs() < 1e-12);
        assert!((p.curvature_bound() + 2.0 * p.beta / p.lambda).abs() < 1e-12);
        assert!(select_parameters_d(3, 1.0, 1.0).is_err());
        let two = select_parameters_d(2, 0.25, 2.0).unwrap();
        assert_eq!(two.q, 0.0);
        assert_eq!(two.n_upper, 2.0);
        assert!((two.lambda - 2.0).abs() < 1e-14);
        assert!(((-two.beta * 2.0).exp() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn regime_dprime_hand_example() {
        let p = select_parameters_dprime(3, 0.1, 1.0).unwrap();
        let a = 1.0 - (-1.0f64).exp();
        assert_eq!(p.beta, 1.0);
        assert!((p.lambda - a / 0.1).abs() < 1e-12);
        assert!((p.q - 0.1 / (a - 0.1)).abs() < 1e-12);
        assert!((p.q - 0.18794).abs() < 2e-5);
        assert!((p.k + 0.4).abs() < 1e-15);
        assert!((p.n_upper - 3.4).abs() < 1e-15);
        assert!((p.c - 0.4).abs() < 1e-15);
        assert!(select_parameters_dprime(4, 0.15, 1.0).is_ok());
        assert!(select_parameters_dprime(4, 0.17, 1.0).is_err());
        let zero = select_parameters_dprime(3, 0.0, 1.0).unwrap();
        assert_eq!((zero.k, zero.n_upper, zero.c), (0.0, 3.0, 0.0));
    }

    #[test]
    fn c_coefficient_cases() {
        assert_eq!(c_coefficient(4, 2.0), 4.0);
        assert_eq!(c_coefficient(5, f64::INFINITY), 3.0);
        assert_eq!(c_coefficient(2, 0.0), 0.0);
    }

    #[test]
    fn constant_phi_gives_constant_exponent() {
        let geom = build_geometry(&GeometrySpec::round_sphere(3, 64)).unwrap();
        let conf = build_conformal(&geom, &vec![3.0; 64], 2.0).unwrap();
        assert!(conf.f.iter().all(|f| (f - 3.0f64.ln() / 2.0).abs() < 1e-15));
        assert!(conf.identity_residual < 1e-12);
        assert!(build_conformal(&geom, &vec![0.9; 64], 2.0).is_err());
        let one = build_conformal(&geom, &vec![1.0; 64], 2.0).unwrap();
        assert_eq!(one.weights_bar, geom.weights());
    }

    #[test]
    fn infinite_q_matches_baseline_plus_dimension_term() {
        let geom = build_geometry(&GeometrySpec::round_sphere(3, 128)).unwrap();
        let dec = decompose(&geom, None).unwrap();
        let conf = ConformalData::flat(&geom);
        for u in low_mode_suite(&dec, 5, 12, 7) {
            let base = bochner_margins(&geom, &u);
            let tr = transformation_margins(&geom, &conf, f64::INFINITY, &u);
            let lu = geom.laplacian(&u);
            for i in 0..u.len() {
                let expect = base[i] + lu[i] * lu[i] / 3.0;
                assert!((tr[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
