//! Pole-centred ball volumes, the comparison profile, the Bishop–Gromov
//! type bound for the changed metric, almost monotonicity of the volume
//! ratio and a doubling check.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{fmt, sphere_area, unit_ball_volume, GeometrySpec, ModelGeometry, PoleEnd};
use crate::kato::{phi_integral, KatoBoundFn};
use crate::quadrature::{gauss_legendre8, integrate};
use crate::time_change::ConformalData;

/// Relative slack granted to quadrature in otherwise exact comparisons.
pub const QUADRATURE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct VolumeRatioCurve {
    pub dimension: usize,
    pub center: String,
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl VolumeRatioCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["radius", "volume", "ratio"])?;
        for i in 0..self.radii.len() {
            w.write_record([fmt(self.radii[i]), fmt(self.volumes[i]), fmt(self.ratios[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `ν(B_r)/(ω_n rⁿ)` around the pole.
pub fn volume_ratio_curve(geom: &ModelGeometry, radii: &[f64]) -> Result<VolumeRatioCurve> {
    check_radii(radii)?;
    let n = geom.dimension();
    let omega = unit_ball_volume(n);
    let volumes = radii.iter().map(|&r| geom.ball_volume(r)).collect::<Result<Vec<_>>>()?;
    let ratios = volumes
        .iter()
        .zip(radii)
        .map(|(v, r)| v / (omega * r.powi(n as i32)))
        .collect();
    let center = match geom.pole() {
        Some(PoleEnd::Left) => "pole r = 0",
        Some(PoleEnd::Right) => "pole r = r_max",
        None => "none",
    };
    Ok(VolumeRatioCurve {
        dimension: n,
        center: center.into(),
        radii: radii.to_vec(),
        volumes,
        ratios,
    })
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("radii must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// `count` equally spaced radii ending at `r_max`.
pub fn uniform_radii(r_max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| r_max * i as f64 / count as f64).collect()
}

/// `∫₀^ρ sinh^{N−1}(κs) ds`, and `ρ^N/N` for `κ = 0`.
pub fn comparison_volume(kappa: f64, n_upper: f64, rho: f64) -> Result<f64> {
    if n_upper < 1.0 {
        return Err(Error::OutOfRange {
            what: "N",
            value: n_upper,
            range: "[1, ∞)".into(),
        });
    }
    if !(rho > 0.0) || !(kappa >= 0.0) {
        return Err(Error::OutOfRange {
            what: "rho",
            value: rho,
            range: "(0, ∞) with κ ≥ 0".into(),
        });
    }
    if kappa == 0.0 {
        return Ok(rho.powf(n_upper) / n_upper);
    }
    integrate(|s| (kappa * s).sinh().powf(n_upper - 1.0), 0.0, rho, 1e-12, 0.0)
}

/// `e^{C̄κ²R²}(R/r)^N` with `C̄ = (N−1)/4`.
pub fn bg_bound(kappa_sq: f64, n_upper: f64, r: f64, big_r: f64) -> f64 {
    ((n_upper - 1.0) / 4.0 * kappa_sq * big_r * big_r).exp() * (big_r / r).powf(n_upper)
}

/// Balls of the changed metric `e^{2f}g` around the pole, measured with
/// `e^{2f}ν`. The exponent is interpolated linearly between cell centres
/// and held constant beyond the first and last centre.
pub struct ChangedBalls<'a> {
    geom: &'a ModelGeometry,
    // breakpoints in distance from the pole, exponent there, and the
    // changed distance accumulated up to each breakpoint
    knots: Vec<f64>,
    f: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> ChangedBalls<'a> {
    pub fn new(geom: &'a ModelGeometry, conf: &ConformalData) -> Result<Self> {
        let end = geom.pole().ok_or(Error::NoPole)?;
        let r_max = geom.domain_length();
        let mut pairs: Vec<(f64, f64)> = geom
            .pole_distance()?
            .into_iter()
            .zip(conf.exponent().iter().cloned())
            .collect();
        if end == PoleEnd::Right {
            pairs.reverse();
        }
        let mut knots = vec![0.0];
        let mut f = vec![pairs[0].1];
        for (r, fi) in &pairs {
            knots.push(*r);
            f.push(*fi);
        }
        knots.push(r_max);
        f.push(pairs[pairs.len() - 1].1);
        let mut s = vec![0.0; knots.len()];
        for k in 1..knots.len() {
            s[k] = s[k - 1] + exp_linear_integral(f[k - 1], f[k], knots[k] - knots[k - 1], 1.0);
        }
        Ok(Self { geom, knots, f, s })
    }

    /// Changed distance from the pole to the far end.
    pub fn max_radius(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// Original radius whose changed distance is `rho`.
    pub fn original_radius(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho <= self.max_radius()) {
            return Err(Error::OutOfRange {
                what: "changed ball radius",
                value: rho,
                range: format!("(0, {}]", self.max_radius()),
            });
        }
        let k = self.s.partition_point(|s| *s < rho).max(1) - 1;
        let len = self.knots[k + 1] - self.knots[k];
        let b = (self.f[k + 1] - self.f[k]) / len;
        let rest = rho - self.s[k];
        let a = self.f[k].exp();
        let d = if (b * len).abs() < 1e-12 {
            rest / a
        } else {
            (b * rest / a).ln_1p() / b
        };
        Ok(self.knots[k] + d.clamp(0.0, len))
    }

    fn exponent_at(&self, r: f64) -> f64 {
        let k = (self.knots.partition_point(|x| *x <= r).max(1) - 1).min(self.knots.len() - 2);
        let t = (r - self.knots[k]) / (self.knots[k + 1] - self.knots[k]);
        self.f[k] + t * (self.f[k + 1] - self.f[k])
    }

    /// `∫_{B̄_ρ} e^{2f} dν`.
    pub fn volume(&self, rho: f64) -> Result<f64> {
        let GeometrySpec::Warped { dimension, warp, .. } = self.geom.spec() else {
            return Err(Error::NoPole);
        };
        let r_star = self.original_radius(rho)?;
        let p = (*dimension - 1) as i32;
        let r_max = self.geom.domain_length();
        let right = self.geom.pole() == Some(PoleEnd::Right);
        let density = |r: f64| {
            let x = if right { r_max - r } else { r };
            (2.0 * self.exponent_at(r)).exp() * warp.value(x).powi(p)
        };
        let mut total = 0.0;
        for k in 0..self.knots.len() - 1 {
            let a = self.knots[k];
            if a >= r_star {
                break;
            }
            let b = self.knots[k + 1].min(r_star);
            if b > a {
                total += gauss_legendre8(&density, a, b);
            }
        }
        Ok(sphere_area(*dimension - 1) * total)
    }
}

/// `∫₀^len e^{c(f0 + (f1 − f0)x/len)} dx`.
fn exp_linear_integral(f0: f64, f1: f64, len: f64, c: f64) -> f64 {
    let z = c * (f1 - f0);
    if z.abs() < 1e-12 {
        len * (c * f0).exp()
    } else {
        len * (c * f0).exp() * z.exp_m1() / z
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMargin {
    pub r: f64,
    pub big_r: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BgReport {
    pub kappa_sq: f64,
    pub n_upper: f64,
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `ln(rhs/lhs)` over the pairs.
    pub worst_log_margin: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub passed: bool,
    #[serde(skip)]
    pub rows: Vec<PairMargin>,
}

fn summarize(kappa_sq: f64, n_upper: f64, rows: Vec<PairMargin>) -> BgReport {
    let mut worst = (f64::INFINITY, None);
    let mut violations = 0;
    for row in &rows {
        let m = (row.rhs / row.lhs).ln();
        if m < worst.0 {
            worst = (m, Some((row.r, row.big_r)));
        }
        if row.lhs > row.rhs * (1.0 + QUADRATURE_RTOL) {
            violations += 1;
        }
    }
    BgReport {
        kappa_sq,
        n_upper,
        pairs: rows.len(),
        violations,
        worst_log_margin: worst.0,
        worst_pair: worst.1,
        passed: violations == 0,
        rows,
    }
}

impl BgReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_pairs(path, &self.rows)
    }
}

fn write_pairs(path: &Path, rows: &[PairMargin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r", "R", "lhs", "rhs"])?;
    for row in rows {
        w.write_record([fmt(row.r), fmt(row.big_r), fmt(row.lhs), fmt(row.rhs)])?;
    }
    w.flush()?;
    Ok(())
}

/// All `(r, R)` with `r < R` from `count` equally spaced radii up to `r_max`.
pub fn radius_pairs(r_max: f64, count: usize) -> Vec<(f64, f64)> {
    let radii = uniform_radii(r_max, count);
    let mut pairs = Vec::new();
    for &r in &radii {
        for &big in &radii {
            if r < big {
                pairs.push((r, big));
            }
        }
    }
    pairs
}

/// `ν̄(B̄_R)/ν̄(B̄_r) ≤ e^{C̄κ²R²}(R/r)^N` for balls of the changed metric.
pub fn bg_bound_check(
    geom: &ModelGeometry,
    conf: &ConformalData,
    kappa_sq: f64,
    n_upper: f64,
    pairs: &[(f64, f64)],
) -> Result<BgReport> {
    let balls = ChangedBalls::new(geom, conf)?;
    let rows = pairs
        .par_iter()
        .map(|&(r, big_r)| {
            let lhs = balls.volume(big_r)? / balls.volume(r)?;
            Ok(PairMargin {
                r,
                big_r,
                lhs,
                rhs: bg_bound(kappa_sq, n_upper, r, big_r),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(kappa_sq, n_upper, rows))
}

/// `ν(B_r) ≤ C (r/s)^N ν(B_s)` for balls of the original metric.
pub fn doubling_check(geom: &ModelGeometry, constant: f64, n_upper: f64, pairs: &[(f64, f64)]) -> Result<BgReport> {
    let rows = pairs
        .par_iter()
        .map(|&(s, r)| {
            Ok(PairMargin {
                r: s,
                big_r: r,
                lhs: geom.ball_volume(r)? / geom.ball_volume(s)?,
                rhs: constant * (r / s).powf(n_upper),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(0.0, n_upper, rows))
}

/// Doubling constant for original-metric balls of radius up to `√T`,
/// obtained from the changed-metric bound through `ν ≤ ν̄ ≤ e^{2C_f}ν` and
/// `B_{e^{−C_f}ρ} ⊂ B̄_ρ ⊂ B_ρ`:
/// `exp((N+2)C_f + (N−1)/4 · |K| e^{2C_f})`.
pub fn doubling_constant(f_bound: f64, k: f64, n_upper: f64) -> f64 {
    ((n_upper + 2.0) * f_bound + (n_upper - 1.0) / 4.0 * k.abs() * (2.0 * f_bound).exp()).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub eta: f64,
    /// Smallest constant making the inequality hold on every admissible
    /// pair; infinite when a pair with `Φ(R) = Φ(r)` has a growing ratio.
    pub c_star: f64,
    /// `C*·ln(1/(1−η))`.
    pub c_star_scaled: f64,
    pub pairs: usize,
    /// Pairs on which the volume ratio grows.
    pub active_pairs: usize,
    pub worst_pair: Option<(f64, f64)>,
    pub phi_max: f64,
    /// True when no pair constrains the constant.
    pub vacuous: bool,
}

/// Fit `C*` in `𝒱(R) e^{−CΦ(R)/η} ≤ 𝒱(r) e^{−CΦ(r)/η}` over pairs with
/// `r ≤ (1−η)R`.
pub fn almost_monotonicity_check(
    curve: &VolumeRatioCurve,
    bound: &KatoBoundFn,
    eta: f64,
) -> Result<MonotonicityReport> {
    let eta_max = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    if !(eta > 0.0 && eta < eta_max) {
        return Err(Error::OutOfRange {
            what: "eta",
            value: eta,
            range: format!("(0, {eta_max})"),
        });
    }
    let phi = curve
        .radii
        .iter()
        .map(|&r| phi_integral(bound, r))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = curve.ratios.iter().map(|v| v.ln()).collect();
    let mut c_star: f64 = 0.0;
    let mut worst = None;
    let mut pairs = 0;
    let mut active = 0;
    for j in 0..curve.radii.len() {
        for i in 0..j {
            if curve.radii[i] > (1.0 - eta) * curve.radii[j] {
                continue;
            }
            pairs += 1;
            let growth = logs[j] - logs[i];
            if growth <= QUADRATURE_RTOL {
                continue;
            }
            active += 1;
            let dphi = phi[j] - phi[i];
            let c = if dphi > 0.0 { eta * growth / dphi } else { f64::INFINITY };
            if c > c_star {
                c_star = c;
                worst = Some((curve.radii[i], curve.radii[j]));
            }
        }
    }
    Ok(MonotonicityReport {
        eta,
        c_star,
        c_star_scaled: c_star * (1.0 / (1.0 - eta)).ln(),
        pairs,
        active_pairs: active,
        worst_pair: worst,
        phi_max: phi.last().cloned().unwrap_or(0.0),
        vacuous: active == 0,
    })
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_drift(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, Endpoint};
    use crate::profile::Profile;

    fn cap(warp: &str, r_max: f64, n: usize) -> ModelGeometry {
        build_geometry(&GeometrySpec::Warped {
            dimension: n,
            r_max,
            left: Endpoint::Pole,
            right: Endpoint::Reflecting,
            warp: Profile::parse(warp, "r").unwrap(),
            resolution: 64,
        })
        .unwrap()
    }

    #[test]
    fn sphere_and_hyperbolic_ratios_match_closed_forms() {
        let radii = uniform_radii(1.5, 15);
        let s = volume_ratio_curve(&cap("sin(r)", 3.0, 2), &radii).unwrap();
        let h = volume_ratio_curve(&cap("sinh(r)", 3.0, 2), &radii).unwrap();
        for (i, r) in radii.iter().enumerate() {
            assert!((s.ratios[i] - 2.0 * (1.0 - r.cos()) / (r * r)).abs() < 1e-10);
            assert!((h.ratios[i] - 2.0 * (r.cosh() - 1.0) / (r * r)).abs() < 1e-10);
        }
        assert!(volume_ratio_curve(&cap("r", 1.0, 2), &[0.5, 2.0]).is_err());
    }

    #[test]
    fn comparison_volume_cases() {
        let v = comparison_volume(1.0, 2.0, 1.0).unwrap();
        assert!((v - (1.0f64.cosh() - 1.0)).abs() < 1e-10);
        assert_eq!(comparison_volume(0.0, 3.0, 2.0).unwrap(), 8.0 / 3.0);
        assert!(comparison_volume(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn flat_changed_balls_reduce_to_original() {
        let g = cap("r", 2.0, 3);
        let conf = ConformalData::flat(&g);
        let balls = ChangedBalls::new(&g, &conf).unwrap();
        for rho in [0.1, 0.7, 1.9] {
            let v = balls.volume(rho).unwrap();
            assert!((v - 4.0 / 3.0 * std::f64::consts::PI * rho.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_exponent_scales_distance_and_measure() {
        let g = cap("r", 2.0, 2);
        let c = 0.3f64;
        let conf = ConformalData::from_exponent(&g, vec![c; g.node_count()], 1.0);
        let balls = ChangedBalls::new(&g, &conf).unwrap();
        let rho = 1.2;
        let r = rho / c.exp();
        assert!((balls.original_radius(rho).unwrap() - r).abs() < 1e-12);
        let expect = (2.0 * c).exp() * std::f64::consts::PI * r * r;
        assert!((balls.volume(rho).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_bound_is_exact_monotonicity() {
        let radii = uniform_radii(1.0, 20);
        let bound = KatoBoundFn::PowerLaw { c: 0.0, alpha: 1.0 };
        let sphere = volume_ratio_curve(&cap("sin(r)", 3.0, 3), &radii).unwrap();
        let rep = almost_monotonicity_check(&sphere, &bound, 0.1).unwrap();
        assert_eq!(rep.c_star, 0.0);
        assert!(rep.vacuous);
        let hyp = volume_ratio_curve(&cap("sinh(r)", 3.0, 3), &radii).unwrap();
        let rep = almost_monotonicity_check(&hyp, &bound, 0.1).unwrap();
        assert!(rep.c_star.is_infinite());
    }

    #[test]
    fn bg_bound_dimension_control() {
        let g = cap("r", 2.0, 3);
        let conf = ConformalData::flat(&g);
        let pairs = radius_pairs(1.0, 10);
        assert!(bg_bound_check(&g, &conf, 0.0, 3.0, &pairs).unwrap().passed);
        assert!(!bg_bound_check(&g, &conf, 0.0, 2.5, &pairs).unwrap().passed);
        assert!(doubling_check(&g, 1.0, 3.0, &pairs).unwrap().passed);
        assert_eq!(doubling_constant(0.0, 0.0, 3.0), 1.0);
    }
}
