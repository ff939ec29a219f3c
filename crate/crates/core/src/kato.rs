//! Kato constants `k_t(V)`, the Dynkin / strong-Kato conditions and the
//! integral `Φ(τ)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ricci_minus_field, ModelGeometry};
use crate::quadrature::integrate_with_limit;
use crate::spectral::SpectralDecomposition;

const NEGATIVE_SLACK: f64 = 1e-12;

pub(crate) fn check_potential(v: &[f64]) -> Result<()> {
    if let Some((node, value)) = v.iter().enumerate().find(|(_, x)| **x < -NEGATIVE_SLACK) {
        return Err(Error::NegativePotential { node, value: *value });
    }
    Ok(())
}

/// `(1 − e^{−μt})/μ`, equal to `t` on the zero mode.
pub(crate) fn time_factor(mu: f64, t: f64) -> f64 {
    let z = mu * t;
    if z < 1e-8 {
        t * (1.0 - 0.5 * z)
    } else {
        -(-z).exp_m1() / mu
    }
}

/// The whole function `x ↦ ∫₀^t (e^{−sΔ}V)(x) ds`.
pub fn integrated_semigroup(dec: &SpectralDecomposition, v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_potential(v)?;
    if !(t >= 0.0) {
        return Err(Error::OutOfRange {
            what: "time",
            value: t,
            range: "[0, inf)".into(),
        });
    }
    let mut c = dec.coefficients(v)?;
    for (ck, mu) in c.iter_mut().zip(dec.eigenvalues()) {
        *ck *= time_factor(*mu, t);
    }
    Ok(dec.synthesize(&c))
}

/// `k_t(V)` together with the node where the supremum is attained.
pub fn kato_of_potential_at(dec: &SpectralDecomposition, v: &[f64], t: f64) -> Result<(f64, usize)> {
    let field = integrated_semigroup(dec, v, t)?;
    let (node, k) = field.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, x)| if *x > bv { (i, *x) } else { (bi, bv) },
    );
    Ok((k.max(0.0), node))
}

pub fn kato_of_potential(dec: &SpectralDecomposition, v: &[f64], t: f64) -> Result<f64> {
    Ok(kato_of_potential_at(dec, v, t)?.0)
}

pub fn kato_of_manifold(geom: &ModelGeometry, dec: &SpectralDecomposition, t: f64) -> Result<f64> {
    kato_of_potential(dec, &ricci_minus_field(geom), t)
}

/// Oracle path: composite Simpson in `s` of the semigroup applied to `V`.
pub fn kato_by_time_quadrature(dec: &SpectralDecomposition, v: &[f64], t: f64, intervals: usize) -> Result<f64> {
    check_potential(v)?;
    let n = intervals.max(2) + intervals % 2;
    let h = t / n as f64;
    let c = dec.coefficients(v)?;
    let mut acc = vec![0.0; dec.node_count()];
    for j in 0..=n {
        let s = j as f64 * h;
        let wj = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let cs: Vec<f64> = c
            .iter()
            .zip(dec.eigenvalues())
            .map(|(ck, mu)| ck * (-mu * s).exp())
            .collect();
        for (a, x) in acc.iter_mut().zip(dec.synthesize(&cs)) {
            *a += wj * x;
        }
    }
    Ok(acc.iter().fold(0.0f64, |m, x| m.max(x * h / 3.0)))
}

/// `t ↦ k_t(V)` on a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct KatoProfile {
    pub potential: String,
    pub dimension: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Node index realizing the supremum at each time.
    pub argmax: Vec<usize>,
}

impl KatoProfile {
    pub fn compute(
        dec: &SpectralDecomposition,
        v: &[f64],
        times: &[f64],
        potential: &str,
        dimension: usize,
    ) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|t| *t <= 0.0) {
            return Err(Error::Config("Kato time grid must be positive and increasing".into()));
        }
        let mut values = Vec::with_capacity(times.len());
        let mut argmax = Vec::with_capacity(times.len());
        for &t in times {
            let (k, x) = kato_of_potential_at(dec, v, t)?;
            values.push(k);
            argmax.push(x);
        }
        Ok(Self {
            potential: potential.to_string(),
            dimension,
            times: times.to_vec(),
            values,
            argmax,
        })
    }

    /// Uniform grid of `count` times ending at `t_final`.
    pub fn uniform_times(t_final: f64, count: usize) -> Vec<f64> {
        (1..=count).map(|i| t_final * i as f64 / count as f64).collect()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - tol)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "k_t"])?;
        for (t, k) in self.times.iter().zip(&self.values) {
            w.write_record([format!("{t:.12e}"), format!("{k:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nondecreasing bound function on `(0, T]` for the strong Kato condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KatoBoundFn {
    /// `c·t^α`
    PowerLaw { c: f64, alpha: f64 },
    /// `c / ln²(e + 1/t)`
    InverseLogSquared { c: f64 },
    /// Piecewise linear through the samples, linear to zero below the first.
    Samples { times: Vec<f64>, values: Vec<f64> },
}

impl KatoBoundFn {
    pub fn from_profile(p: &KatoProfile) -> Self {
        KatoBoundFn::Samples {
            times: p.times.clone(),
            values: p.values.clone(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            KatoBoundFn::Samples { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0] * t / times[0];
                }
                let n = times.len();
                if t >= times[n - 1] {
                    if n == 1 {
                        return values[0] * t / times[0];
                    }
                    let slope = (values[n - 1] - values[n - 2]) / (times[n - 1] - times[n - 2]);
                    return values[n - 1] + slope.max(0.0) * (t - times[n - 1]);
                }
                let i = times.partition_point(|x| *x <= t) - 1;
                let a = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] + a * (values[i + 1] - values[i])
            }
            _ => self.eval_ln(t.ln()),
        }
    }

    /// `bound(e^ℓ)`, usable far below the smallest positive double.
    pub fn eval_ln(&self, ell: f64) -> f64 {
        match self {
            KatoBoundFn::PowerLaw { c, alpha } => {
                if *alpha == 0.0 {
                    *c
                } else {
                    c * (alpha * ell).exp()
                }
            }
            KatoBoundFn::InverseLogSquared { c } => {
                // ln(e + e^{−ℓ}) = −ℓ + ln(1 + e^{1+ℓ})
                let l = -ell + (1.0 + ell).exp().ln_1p();
                c / (l * l)
            }
            KatoBoundFn::Samples { .. } => self.eval(ell.exp()),
        }
    }

    /// Nondecreasing check on a fine grid of `(0, T]`.
    pub fn is_nondecreasing(&self, t_final: f64) -> bool {
        let m = 512;
        let mut prev = 0.0;
        for i in 1..=m {
            let v = self.eval(t_final * i as f64 / m as f64);
            if v < prev - 1e-14 {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// Default cap above which `Φ` is reported as divergent.
pub const PHI_CAP: f64 = 1e6;

/// `Φ(τ) = ∫₀^τ bound(s²)/s ds`.
///
/// With `s² = τ² e^{−v}` the integral becomes `½∫₀^∞ bound(τ²e^{−v}) dv`,
/// which is mapped to `[0, 1)` by `v = u/(1−u)`.
pub fn phi_integral(bound: &KatoBoundFn, tau: f64) -> Result<f64> {
    phi_integral_capped(bound, tau, PHI_CAP)
}

pub fn phi_integral_capped(bound: &KatoBoundFn, tau: f64, cap: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::OutOfRange {
            what: "tau",
            value: tau,
            range: "[0, inf)".into(),
        });
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    let ln_t2 = 2.0 * tau.ln();
    let g = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let one = 1.0 - u;
        let v = u / one;
        0.5 * bound.eval_ln(ln_t2 - v) / (one * one)
    };
    let val = integrate_with_limit(g, 0.0, 1.0, 1e-11, 1e-15, 4000)?;
    if val > cap {
        return Err(Error::Divergent(format!(
            "Phi({tau}) = {val:.3e} exceeds cap {cap:.1e}"
        )));
    }
    Ok(val)
}

/// Outcome of the Dynkin, (D′) and strong-Kato tests.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub k_final: f64,
    pub final_time: f64,
    /// Smallest admissible γ, that is `k_T` itself.
    pub dynkin_gamma: f64,
    pub gamma: Option<f64>,
    pub dynkin_ok: Option<bool>,
    pub dprime_threshold: f64,
    pub dprime_ok: bool,
    pub sk_ok: Option<bool>,
    pub sk_detail: Option<String>,
}

/// `1/(3(n−2))`, infinite for surfaces.
pub fn dprime_threshold(n: usize) -> f64 {
    if n <= 2 {
        f64::INFINITY
    } else {
        1.0 / (3.0 * (n as f64 - 2.0))
    }
}

/// `1/(n−2)`, infinite for surfaces.
pub fn gamma_upper(n: usize) -> f64 {
    if n <= 2 {
        f64::INFINITY
    } else {
        1.0 / (n as f64 - 2.0)
    }
}

pub fn check_conditions(
    profile: &KatoProfile,
    n: usize,
    gamma: Option<f64>,
    bound: Option<&KatoBoundFn>,
) -> Result<ConditionReport> {
    if let Some(g) = gamma {
        if !(g > 0.0 && g < gamma_upper(n)) {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: g,
                range: format!("(0, {})", gamma_upper(n)),
            });
        }
    }
    let k = profile.final_value();
    let thr = dprime_threshold(n);
    let (sk_ok, sk_detail) = match bound {
        None => (None, None),
        Some(b) => {
            let t_final = profile.final_time();
            let mut problems = Vec::new();
            if !b.is_nondecreasing(t_final) {
                problems.push("bound is not nondecreasing".to_string());
            }
            if b.eval(t_final) > thr {
                problems.push(format!("bound(T) = {:.6} exceeds {:.6}", b.eval(t_final), thr));
            }
            if let Some((t, kt)) = profile
                .times
                .iter()
                .zip(&profile.values)
                .find(|(t, kt)| **kt > b.eval(**t) * (1.0 + 1e-12) + 1e-15)
            {
                problems.push(format!(
                    "k_t = {kt:.6e} exceeds bound {:.6e} at t = {t:.4e}",
                    b.eval(*t)
                ));
            }
            if let Err(e) = phi_integral(b, t_final.sqrt()) {
                problems.push(e.to_string());
            }
            (Some(problems.is_empty()), Some(problems.join("; ")))
        }
    };
    Ok(ConditionReport {
        k_final: k,
        final_time: profile.final_time(),
        dynkin_gamma: k,
        gamma,
        dynkin_ok: gamma.map(|g| k <= g),
        dprime_threshold: thr,
        dprime_ok: k < thr,
        sk_ok,
        sk_detail,
    })
}
