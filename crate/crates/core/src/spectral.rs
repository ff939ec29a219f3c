//! Dense spectral decomposition of the discrete Laplacian and the heat
//! semigroup built on it.

use std::path::Path;

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::geometry::ModelGeometry;

/// Eigenpairs of `Δψ = μψ` for the mass-weighted generalized problem.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    // column k holds ψ_k at every node
    psi: Mat<f64>,
    weights: Vec<f64>,
    // first discarded eigenvalue when the basis is truncated
    next_eigenvalue: Option<f64>,
    spacing: f64,
}

/// Dense symmetric stiffness matrix `A` with `Δ = M^{-1}A`.
pub fn stiffness_matrix(geom: &ModelGeometry) -> Mat<f64> {
    let n = geom.node_count();
    let mut a = Mat::<f64>::zeros(n, n);
    for e in geom.edges() {
        a[(e.a, e.a)] += e.conductance;
        a[(e.b, e.b)] += e.conductance;
        a[(e.a, e.b)] -= e.conductance;
        a[(e.b, e.a)] -= e.conductance;
    }
    a
}

/// Smallest `m` eigenpairs (all of them when `m` is `None`).
pub fn decompose(geom: &ModelGeometry, m: Option<usize>) -> Result<SpectralDecomposition> {
    let n = geom.node_count();
    let m = m.unwrap_or(n);
    if m == 0 || m > n {
        return Err(Error::OutOfRange {
            what: "mode count",
            value: m as f64,
            range: format!("[1, {n}]"),
        });
    }
    let w = geom.weights();
    let inv_sqrt: Vec<f64> = w.iter().map(|m| 1.0 / m.sqrt()).collect();
    let a = stiffness_matrix(geom);
    let s = Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let evd = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals = evd.S().column_vector();
    let q = evd.U();
    let mut eigenvalues: Vec<f64> = (0..m).map(|k| vals[k]).collect();
    let mut psi = Mat::<f64>::from_fn(n, m, |i, k| q[(i, k)] * inv_sqrt[i]);
    // The grids are connected with no-flux or periodic ends, so the kernel
    // is exactly the constants; pin it to remove rounding.
    eigenvalues[0] = 0.0;
    let c = 1.0 / geom.total_volume().sqrt();
    for i in 0..n {
        psi[(i, 0)] = c;
    }
    for k in 1..m {
        eigenvalues[k] = eigenvalues[k].max(0.0);
    }
    let next_eigenvalue = if m < n { Some(vals[m]) } else { None };
    Ok(SpectralDecomposition {
        eigenvalues,
        psi,
        weights: w.to_vec(),
        next_eigenvalue,
        spacing: geom.spacing(),
    })
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_truncated(&self) -> bool {
        self.next_eigenvalue.is_some()
    }

    pub fn eigenfields(&self) -> MatRef<'_, f64> {
        self.psi.as_ref()
    }

    pub fn eigenfield(&self, k: usize) -> Vec<f64> {
        self.psi.col_as_slice(k).to_vec()
    }

    /// Smallest time at which truncated kernels are trusted to stay positive.
    pub fn min_time(&self) -> f64 {
        10.0 * self.spacing * self.spacing
    }

    /// Bound on the pointwise kernel error from discarded modes.
    pub fn truncation_bound(&self, t: f64) -> f64 {
        match self.next_eigenvalue {
            None => 0.0,
            Some(mu) => {
                let mmin = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
                (-mu * t).exp() / mmin
            }
        }
    }

    /// Warnings attached to evaluating the semigroup at time `t`.
    pub fn warnings(&self, t: f64, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if t < self.min_time() {
            out.push(format!(
                "t = {t:.3e} is below the resolved time 10h² = {:.3e}",
                self.min_time()
            ));
        }
        let tail = self.truncation_bound(t);
        if tail > tol {
            out.push(format!(
                "mode truncation tail {tail:.3e} exceeds {tol:.1e} at t = {t:.3e}"
            ));
        }
        out
    }

    /// `⟨u, ψ_k⟩_ν` for every mode.
    pub fn coefficients(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mu: Vec<f64> = u.iter().zip(&self.weights).map(|(a, m)| a * m).collect();
        Ok((0..self.mode_count())
            .map(|k| self.psi.col_as_slice(k).iter().zip(&mu).map(|(p, v)| p * v).sum())
            .collect())
    }

    /// Mode coefficients of every column of `u` (nodes × columns).
    pub fn coefficients_batch(&self, u: MatRef<'_, f64>) -> Mat<f64> {
        let mu = Mat::<f64>::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * self.weights[i]);
        self.psi.transpose() * &mu
    }

    /// `Σ_k c_k ψ_k`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for (k, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.psi.col_as_slice(k)) {
                *o += c * p;
            }
        }
        out
    }

    /// Synthesize every column of a modes × columns coefficient matrix.
    pub fn synthesize_batch(&self, coeffs: MatRef<'_, f64>) -> Mat<f64> {
        &self.psi * coeffs
    }

    pub fn heat_kernel(&self, t: f64, x: usize, y: usize) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                range: "(0, inf)".into(),
            });
        }
        self.check_index(x)?;
        self.check_index(y)?;
        Ok((0..self.mode_count())
            .map(|k| (-self.eigenvalues[k] * t).exp() * self.psi[(x, k)] * self.psi[(y, k)])
            .sum())
    }

    /// Full kernel matrix `H(t, x, y)`.
    pub fn heat_kernel_matrix(&self, t: f64) -> Result<Mat<f64>> {
        if !(t > 0.0) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                range: "(0, inf)".into(),
            });
        }
        let scaled = Mat::<f64>::from_fn(self.node_count(), self.mode_count(), |i, k| {
            self.psi[(i, k)] * (-self.eigenvalues[k] * t).exp()
        });
        Ok(&scaled * self.psi.transpose())
    }

    /// `e^{−tΔ}u` on the retained modes.
    pub fn apply_semigroup(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                range: "[0, inf)".into(),
            });
        }
        let mut c = self.coefficients(u)?;
        for (ck, mu) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= (-mu * t).exp();
        }
        Ok(self.synthesize(&c))
    }

    pub fn write_eigenvalues_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["mode", "eigenvalue"])?;
        for (k, mu) in self.eigenvalues.iter().enumerate() {
            w.write_record([k.to_string(), format!("{mu:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.node_count() {
            return Err(Error::LengthMismatch {
                expected: self.node_count(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_index(&self, x: usize) -> Result<()> {
        if x >= self.node_count() {
            return Err(Error::OutOfRange {
                what: "node index",
                value: x as f64,
                range: format!("[0, {})", self.node_count()),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometrySpec};
    use std::f64::consts::PI;

    #[test]
    fn circle_spectrum_is_k_squared() {
        let g = build_geometry(&GeometrySpec::flat_circle(2, 256)).unwrap();
        let d = decompose(&g, None).unwrap();
        let h = 2.0 * PI / 256.0;
        let expected = [0.0, 1.0, 1.0, 4.0, 4.0, 9.0, 9.0];
        for (mu, k2) in d.eigenvalues().iter().zip(expected) {
            // second-order stencil error k⁴h²/12
            assert!((mu - k2).abs() <= k2 * k2 * h * h / 12.0 + 1e-10);
        }
    }

    #[test]
    fn orthonormal_and_residual() {
        let g = build_geometry(&GeometrySpec::round_sphere(3, 96)).unwrap();
        let d = decompose(&g, None).unwrap();
        for j in 0..6 {
            let pj = d.eigenfield(j);
            for k in 0..6 {
                let pk = d.eigenfield(k);
                let ip = g.inner(&pj, &pk);
                assert!((ip - if j == k { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
            let lap = g.laplacian(&pj);
            let res: f64 = lap
                .iter()
                .zip(&pj)
                .map(|(a, b)| (a - d.eigenvalues()[j] * b).abs())
                .fold(0.0, f64::max);
            let scale = pj.iter().fold(0.0f64, |s, v| s.max(v.abs())) * d.eigenvalues()[j].max(1.0);
            assert!(res <= 1e-8 * scale);
        }
    }

    #[test]
    fn sphere_first_eigenvalue_converges_to_three() {
        let mut errs = Vec::new();
        for res in [64, 128, 256] {
            let g = build_geometry(&GeometrySpec::round_sphere(3, res)).unwrap();
            let d = decompose(&g, Some(4)).unwrap();
            errs.push((d.eigenvalues()[1] - 3.0).abs());
        }
        assert!(errs[2] < 1e-3);
        assert!(errs[1] / errs[2] > 3.0);
    }

    #[test]
    fn theta_series_on_the_circle() {
        let g = build_geometry(&GeometrySpec::flat_circle(2, 512)).unwrap();
        let d = decompose(&g, None).unwrap();
        for t in [0.05, 0.2, 1.0] {
            let theta: f64 = (1.0 + 2.0 * (1..200).map(|k| (-(k * k) as f64 * t).exp()).sum::<f64>()) / (2.0 * PI);
            let h = d.heat_kernel(t, 7, 7).unwrap();
            // stencil error of the modes that matter at this t
            assert!((h - theta).abs() < 2e-3 * theta);
        }
    }

    #[test]
    fn semigroup_law_and_mass() {
        let g = build_geometry(&GeometrySpec::round_sphere(3, 64)).unwrap();
        let d = decompose(&g, None).unwrap();
        let (t, s) = (0.05, 0.11);
        let ht = d.heat_kernel_matrix(t).unwrap();
        let hs = d.heat_kernel_matrix(s).unwrap();
        let hts = d.heat_kernel_matrix(t + s).unwrap();
        for (x, y) in [(0, 0), (3, 40), (63, 10)] {
            let conv: f64 = (0..64).map(|z| ht[(x, z)] * hs[(z, y)] * g.weights()[z]).sum();
            assert!((conv - hts[(x, y)]).abs() < 1e-9 * hts[(x, y)].abs().max(1.0));
            assert!((ht[(x, y)] - ht[(y, x)]).abs() < 1e-12 * ht[(x, y)].abs().max(1.0));
        }
        for x in 0..64 {
            let mass: f64 = (0..64).map(|y| ht[(x, y)] * g.weights()[y]).sum();
            assert!((mass - 1.0).abs() < 1e-10);
        }
        let one = vec![1.0; 64];
        assert!(d
            .apply_semigroup(3.0, &one)
            .unwrap()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-12));
        assert!(d.heat_kernel(0.0, 0, 0).is_err());
    }
}
