//! Discretized model manifolds.
//!
//! Three families are supported:
//!
//! * warped products `dr² + w(r)² g_{S^{n-1}}` reduced to radial functions on
//!   `[0, R]`, with pole, reflecting or periodic ends;
//! * a conformal circle `e^{2u(θ)} dθ²`, carried as the first factor of a
//!   product with a flat unit-volume torus so that the declared dimension
//!   `n ≥ 2` is kept while only θ-dependent functions are resolved;
//! * a conformal flat torus `e^{2u(x,y)}(dx² + dy²)`.
//!
//! All Laplacians are non-negative and assembled in divergence form from
//! node masses and edge conductances, so they are symmetric for the mass
//! inner product by construction.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::profile::Profile;
use crate::quadrature::{gauss_legendre8, integrate};

const POLE_TOL: f64 = 1e-8;
pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Pole,
    Reflecting,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    WarpedProduct,
    ConformalCircle,
    ConformalTorus2d,
}

#[derive(Debug, Clone)]
pub enum GeometrySpec {
    Warped {
        dimension: usize,
        r_max: f64,
        left: Endpoint,
        right: Endpoint,
        warp: Profile,
        resolution: usize,
    },
    Circle {
        dimension: usize,
        length: f64,
        exponent: Profile,
        resolution: usize,
    },
    Torus {
        side: f64,
        exponent: Expr,
        resolution: usize,
    },
}

impl GeometrySpec {
    pub fn kind(&self) -> GeometryKind {
        match self {
            GeometrySpec::Warped { .. } => GeometryKind::WarpedProduct,
            GeometrySpec::Circle { .. } => GeometryKind::ConformalCircle,
            GeometrySpec::Torus { .. } => GeometryKind::ConformalTorus2d,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            GeometrySpec::Warped { dimension, .. } | GeometrySpec::Circle { dimension, .. } => *dimension,
            GeometrySpec::Torus { .. } => 2,
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            GeometrySpec::Warped { resolution, .. }
            | GeometrySpec::Circle { resolution, .. }
            | GeometrySpec::Torus { resolution, .. } => *resolution,
        }
    }

    /// Same spec at another resolution.
    pub fn with_resolution(&self, n: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            GeometrySpec::Warped { resolution, .. }
            | GeometrySpec::Circle { resolution, .. }
            | GeometrySpec::Torus { resolution, .. } => *resolution = n,
        }
        s
    }

    /// Round sphere `w = sin r` on `[0, π]` with poles at both ends.
    pub fn round_sphere(dimension: usize, resolution: usize) -> Self {
        GeometrySpec::Warped {
            dimension,
            r_max: PI,
            left: Endpoint::Pole,
            right: Endpoint::Pole,
            warp: Profile::parse("sin(r)", "r").expect("valid expression"),
            resolution,
        }
    }

    /// Flat circle of length `2π` (`u ≡ 0`).
    pub fn flat_circle(dimension: usize, resolution: usize) -> Self {
        GeometrySpec::Circle {
            dimension,
            length: 2.0 * PI,
            exponent: Profile::closed(Expr::constant(0.0, &["theta"])),
            resolution,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            GeometrySpec::Warped {
                warp,
                r_max,
                left,
                right,
                ..
            } => {
                format!("warped w(r) = {} on [0, {r_max}] ({left:?}/{right:?})", warp.describe())
            }
            GeometrySpec::Circle { exponent, length, .. } => {
                format!("conformal circle u(theta) = {} length {length}", exponent.describe())
            }
            GeometrySpec::Torus { exponent, side, .. } => {
                format!("conformal torus u(x,y) = {} side {side}", exponent.source())
            }
        }
    }
}

/// One edge of the discrete Laplacian.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub conductance: f64,
}

/// Grid values of a function, one per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DiscreteField {
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(geom: &ModelGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.node_count() {
            return Err(Error::LengthMismatch {
                expected: geom.node_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite field value at node {i}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(geom: &ModelGeometry, c: f64) -> Self {
        Self {
            values: vec![c; geom.node_count()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl Deref for DiscreteField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Which end of a warped product carries a pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleEnd {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct ModelGeometry {
    spec: GeometrySpec,
    h: f64,
    coords: Vec<[f64; 2]>,
    weights: Vec<f64>,
    edges: Vec<Edge>,
    ric_min: Vec<f64>,
    metric_factor: Vec<f64>,
    // central-difference neighbours per axis; a node is its own neighbour
    // across a pole or reflecting end (even ghost reflection)
    axis_x: Vec<[usize; 2]>,
    axis_y: Vec<[usize; 2]>,
}

/// Area of the unit sphere `S^{k}`.
pub fn sphere_area(k: usize) -> f64 {
    let d = (k + 1) as f64;
    2.0 * PI.powf(d / 2.0) / gamma(d / 2.0)
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let d = n as f64;
    PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0)
}

pub fn build_geometry(spec: &GeometrySpec) -> Result<ModelGeometry> {
    let n = spec.dimension();
    if n < 2 {
        return Err(Error::InvalidGeometry(format!("dimension {n} < 2")));
    }
    let res = spec.resolution();
    if res < MIN_RESOLUTION {
        return Err(Error::ResolutionTooSmall(res));
    }
    match spec {
        GeometrySpec::Warped {
            dimension,
            r_max,
            left,
            right,
            warp,
            resolution,
        } => build_warped(spec, *dimension, *r_max, *left, *right, warp, *resolution),
        GeometrySpec::Circle {
            length,
            exponent,
            resolution,
            ..
        } => build_circle(spec, *length, exponent, *resolution),
        GeometrySpec::Torus {
            side,
            exponent,
            resolution,
        } => build_torus(spec, *side, exponent, *resolution),
    }
}

fn build_warped(
    spec: &GeometrySpec,
    n: usize,
    r_max: f64,
    left: Endpoint,
    right: Endpoint,
    warp: &Profile,
    res: usize,
) -> Result<ModelGeometry> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::InvalidGeometry(format!("r_max = {r_max}")));
    }
    let periodic = left == Endpoint::Periodic || right == Endpoint::Periodic;
    if periodic && left != right {
        return Err(Error::InvalidGeometry("periodic ends must be paired".into()));
    }
    for (end, at, slope) in [(left, 0.0, 1.0), (right, r_max, -1.0)] {
        if end == Endpoint::Pole {
            let w = warp.value(at);
            let dw = warp.d1(at);
            if w.abs() > POLE_TOL || (dw - slope).abs() > POLE_TOL {
                return Err(Error::PoleCondition { at, w, dw });
            }
        }
    }
    let h = r_max / res as f64;
    let offset = if periodic { 0.0 } else { 0.5 };
    let sigma = sphere_area(n - 1);
    let p = (n - 1) as i32;
    let mut coords = Vec::with_capacity(res);
    let mut weights = Vec::with_capacity(res);
    let mut ric_min = Vec::with_capacity(res);
    for i in 0..res {
        let r = (i as f64 + offset) * h;
        let w = warp.value(r);
        if !(w > 0.0) {
            return Err(Error::NonPositiveWarp { at: r, w });
        }
        coords.push([r, 0.0]);
        let m = sigma * gauss_legendre8(|s| warp.value(s).powi(p), r - 0.5 * h, r + 0.5 * h);
        weights.push(m);
        let (w1, w2) = (warp.d1(r), warp.d2(r));
        let radial = -(n as f64 - 1.0) * w2 / w;
        let tangential = -w2 / w + (n as f64 - 2.0) * (1.0 - w1 * w1) / (w * w);
        let rm = radial.min(tangential);
        if !rm.is_finite() {
            return Err(Error::InvalidGeometry(format!("curvature undefined at r = {r}")));
        }
        ric_min.push(rm);
    }
    let mut edges = Vec::with_capacity(res);
    let face = |r: f64| -> Result<f64> {
        let w = warp.value(r);
        if !(w > 0.0) {
            return Err(Error::NonPositiveWarp { at: r, w });
        }
        Ok(sigma * w.powi(p) / h)
    };
    for i in 0..res - 1 {
        let rf = (i as f64 + offset + 0.5) * h;
        edges.push(Edge {
            a: i,
            b: i + 1,
            conductance: face(rf)?,
        });
    }
    if periodic {
        edges.push(Edge {
            a: res - 1,
            b: 0,
            conductance: face(r_max - 0.5 * h)?,
        });
    }
    let axis_x = line_neighbours(res, periodic);
    Ok(ModelGeometry {
        spec: spec.clone(),
        h,
        coords,
        weights,
        edges,
        ric_min,
        metric_factor: vec![1.0; res],
        axis_x,
        axis_y: Vec::new(),
    })
}

fn line_neighbours(res: usize, periodic: bool) -> Vec<[usize; 2]> {
    (0..res)
        .map(|i| {
            let prev = if i > 0 {
                i - 1
            } else if periodic {
                res - 1
            } else {
                0
            };
            let next = if i + 1 < res {
                i + 1
            } else if periodic {
                0
            } else {
                res - 1
            };
            [prev, next]
        })
        .collect()
}

fn build_circle(spec: &GeometrySpec, length: f64, u: &Profile, res: usize) -> Result<ModelGeometry> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidGeometry(format!("circle length = {length}")));
    }
    let h = length / res as f64;
    let coords: Vec<[f64; 2]> = (0..res).map(|i| [i as f64 * h, 0.0]).collect();
    let weights: Vec<f64> = coords
        .iter()
        .map(|c| gauss_legendre8(|s| u.value(s).exp(), c[0] - 0.5 * h, c[0] + 0.5 * h))
        .collect();
    let edges = (0..res)
        .map(|i| {
            let theta = (i as f64 + 0.5) * h;
            Edge {
                a: i,
                b: (i + 1) % res,
                conductance: (-u.value(theta)).exp() / h,
            }
        })
        .collect();
    let metric_factor = coords.iter().map(|c| (-2.0 * u.value(c[0])).exp()).collect();
    Ok(ModelGeometry {
        spec: spec.clone(),
        h,
        coords,
        weights,
        edges,
        ric_min: vec![0.0; res],
        metric_factor,
        axis_x: line_neighbours(res, true),
        axis_y: Vec::new(),
    })
}

fn build_torus(spec: &GeometrySpec, side: f64, u: &Expr, res: usize) -> Result<ModelGeometry> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidGeometry(format!("torus side = {side}")));
    }
    if u.variables().len() != 2 {
        return Err(Error::InvalidGeometry(
            "torus exponent must be a function of (x, y)".into(),
        ));
    }
    let h = side / res as f64;
    let uxx = u.derivative(0).derivative(0);
    let uyy = u.derivative(1).derivative(1);
    let total = res * res;
    let mut coords = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut ric_min = Vec::with_capacity(total);
    let mut metric_factor = Vec::with_capacity(total);
    let mut edges = Vec::with_capacity(2 * total);
    let mut axis_x = Vec::with_capacity(total);
    let mut axis_y = Vec::with_capacity(total);
    let idx = |i: usize, j: usize| (i % res) * res + (j % res);
    for i in 0..res {
        for j in 0..res {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let uv = u.eval(&[x, y]);
            coords.push([x, y]);
            weights.push((2.0 * uv).exp() * h * h);
            metric_factor.push((-2.0 * uv).exp());
            let lap = uxx.eval(&[x, y]) + uyy.eval(&[x, y]);
            ric_min.push(-(-2.0 * uv).exp() * lap);
            edges.push(Edge {
                a: idx(i, j),
                b: idx(i + 1, j),
                conductance: 1.0,
            });
            edges.push(Edge {
                a: idx(i, j),
                b: idx(i, j + 1),
                conductance: 1.0,
            });
            axis_x.push([idx(i + res - 1, j), idx(i + 1, j)]);
            axis_y.push([idx(i, j + res - 1), idx(i, j + 1)]);
        }
    }
    Ok(ModelGeometry {
        spec: spec.clone(),
        h,
        coords,
        weights,
        edges,
        ric_min,
        metric_factor,
        axis_x,
        axis_y,
    })
}

impl ModelGeometry {
    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    pub fn kind(&self) -> GeometryKind {
        self.spec.kind()
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Grid spacing along each axis.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Node coordinates; the second entry is zero on one-dimensional grids.
    pub fn coordinates(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Signed lowest Ricci eigenvalue per node.
    pub fn ricci_lowest(&self) -> &[f64] {
        &self.ric_min
    }

    /// Factor converting squared coordinate gradients into `|du|²_g`.
    pub fn metric_factor(&self) -> &[f64] {
        &self.metric_factor
    }

    /// True when no end is a reflecting truncation.
    pub fn is_closed(&self) -> bool {
        match &self.spec {
            GeometrySpec::Warped { left, right, .. } => *left != Endpoint::Reflecting && *right != Endpoint::Reflecting,
            _ => true,
        }
    }

    pub fn pole(&self) -> Option<PoleEnd> {
        match &self.spec {
            GeometrySpec::Warped { left, right, .. } => {
                if *left == Endpoint::Pole {
                    Some(PoleEnd::Left)
                } else if *right == Endpoint::Pole {
                    Some(PoleEnd::Right)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Distance of each node from the pole used for balls.
    pub fn pole_distance(&self) -> Result<Vec<f64>> {
        let end = self.pole().ok_or(Error::NoPole)?;
        let r_max = self.domain_length();
        Ok(self
            .coords
            .iter()
            .map(|c| match end {
                PoleEnd::Left => c[0],
                PoleEnd::Right => r_max - c[0],
            })
            .collect())
    }

    /// Length of the coordinate domain along the first axis.
    pub fn domain_length(&self) -> f64 {
        match &self.spec {
            GeometrySpec::Warped { r_max, .. } => *r_max,
            GeometrySpec::Circle { length, .. } => *length,
            GeometrySpec::Torus { side, .. } => *side,
        }
    }

    /// `Δu` with the non-negative sign convention.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for e in &self.edges {
            let flux = e.conductance * (u[e.a] - u[e.b]);
            out[e.a] += flux;
            out[e.b] -= flux;
        }
        for (o, m) in out.iter_mut().zip(&self.weights) {
            *o /= m;
        }
        out
    }

    /// Discrete Dirichlet form `Σ_edges c (u_a − u_b)(v_a − v_b)`.
    pub fn dirichlet_form(&self, u: &[f64], v: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| e.conductance * (u[e.a] - u[e.b]) * (v[e.a] - v[e.b]))
            .sum()
    }

    /// Mass-weighted inner product.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weights.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    pub fn integral(&self, u: &[f64]) -> f64 {
        self.weights.iter().zip(u).map(|(m, a)| m * a).sum()
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        self.integral(u) / self.total_volume()
    }

    /// Central-difference coordinate gradient components at every node.
    pub fn coordinate_gradient(&self, u: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let inv = 0.5 / self.h;
        let gx = self.axis_x.iter().map(|[p, q]| (u[*q] - u[*p]) * inv).collect();
        let gy = if self.axis_y.is_empty() {
            None
        } else {
            Some(self.axis_y.iter().map(|[p, q]| (u[*q] - u[*p]) * inv).collect())
        };
        (gx, gy)
    }

    /// Pointwise metric pairing `⟨du, dv⟩_g`.
    pub fn grad_dot(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let (ux, uy) = self.coordinate_gradient(u);
        let (vx, vy) = self.coordinate_gradient(v);
        let mut out: Vec<f64> = ux.iter().zip(&vx).map(|(a, b)| a * b).collect();
        if let (Some(uy), Some(vy)) = (uy, vy) {
            for ((o, a), b) in out.iter_mut().zip(&uy).zip(&vy) {
                *o += a * b;
            }
        }
        for (o, g) in out.iter_mut().zip(&self.metric_factor) {
            *o *= g;
        }
        out
    }

    /// Largest coordinate first, second and third difference quotients of
    /// `u`, used to scale pointwise tolerances.
    pub fn derivative_scale(&self, u: &[f64]) -> f64 {
        self.derivative_scale_to(u, 3)
    }

    /// Largest coordinate difference quotient of order `1..=order`.
    pub fn derivative_scale_to(&self, u: &[f64], order: usize) -> f64 {
        let mut scale: f64 = 0.0;
        let axes: [&[[usize; 2]]; 2] = [&self.axis_x, &self.axis_y];
        for axis in axes {
            if axis.is_empty() {
                continue;
            }
            let d1: Vec<f64> = axis.iter().map(|[p, q]| (u[*q] - u[*p]) / (2.0 * self.h)).collect();
            let d2: Vec<f64> = axis
                .iter()
                .enumerate()
                .map(|(i, [p, q])| (u[*q] - 2.0 * u[i] + u[*p]) / (self.h * self.h))
                .collect();
            let d3: Vec<f64> = axis.iter().map(|[p, q]| (d2[*q] - d2[*p]) / (2.0 * self.h)).collect();
            for d in [&d1, &d2, &d3].into_iter().take(order) {
                scale = d.iter().fold(scale, |s, v| s.max(v.abs()));
            }
        }
        scale
    }

    /// `σ_{n−1} ∫₀^r w^{n−1}` for a ball around the pole.
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        let GeometrySpec::Warped {
            dimension, r_max, warp, ..
        } = &self.spec
        else {
            return Err(Error::NoPole);
        };
        let end = self.pole().ok_or(Error::NoPole)?;
        if !(r > 0.0 && r <= *r_max) {
            return Err(Error::OutOfRange {
                what: "ball radius",
                value: r,
                range: format!("(0, {r_max}]"),
            });
        }
        let p = (*dimension - 1) as i32;
        let (a, b) = match end {
            PoleEnd::Left => (0.0, r),
            PoleEnd::Right => (r_max - r, *r_max),
        };
        let v = integrate(|s| warp.value(s).powi(p), a, b, 1e-12, 0.0)?;
        Ok(sphere_area(*dimension - 1) * v)
    }

    /// Write `node,x[,y],value` rows.
    pub fn write_field_csv(&self, path: &Path, name: &str, values: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let two_d = self.kind() == GeometryKind::ConformalTorus2d;
        if two_d {
            w.write_record(["node", "x", "y", name])?;
        } else {
            w.write_record(["node", "x", name])?;
        }
        for (i, (c, v)) in self.coords.iter().zip(values).enumerate() {
            if two_d {
                w.write_record([i.to_string(), fmt(c[0]), fmt(c[1]), fmt(*v)])?;
            } else {
                w.write_record([i.to_string(), fmt(c[0]), fmt(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// `Ric₋ = max(0, −min spec Ric)` per node.
pub fn ricci_minus_field(geom: &ModelGeometry) -> DiscreteField {
    DiscreteField {
        values: geom.ric_min.iter().map(|r| (-r).max(0.0)).collect(),
    }
}

/// Dump several named fields side by side.
pub fn write_fields_csv(geom: &ModelGeometry, path: &Path, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["node".to_string(), "x".to_string()];
    if geom.kind() == GeometryKind::ConformalTorus2d {
        header.push("y".into());
    }
    header.extend(fields.iter().map(|(n, _)| n.to_string()));
    writeln!(file, "{}", header.join(","))?;
    for (i, c) in geom.coords.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt(c[0])];
        if geom.kind() == GeometryKind::ConformalTorus2d {
            row.push(fmt(c[1]));
        }
        row.extend(fields.iter().map(|(_, v)| fmt(v[i])));
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn warped(expr: &str, n: usize, r_max: f64, left: Endpoint, right: Endpoint, res: usize) -> GeometrySpec {
        GeometrySpec::Warped {
            dimension: n,
            r_max,
            left,
            right,
            warp: Profile::parse(expr, "r").unwrap(),
            resolution: res,
        }
    }

    #[test]
    fn flat_circle_weights_are_uniform() {
        let g = build_geometry(&GeometrySpec::flat_circle(2, 256)).unwrap();
        for m in g.weights() {
            assert!((m - 2.0 * PI / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_sphere_volume() {
        let g = build_geometry(&GeometrySpec::round_sphere(3, 512)).unwrap();
        assert!((g.total_volume() - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn disk_ball_volume() {
        let g = build_geometry(&warped("r", 2, 1.0, Endpoint::Pole, Endpoint::Reflecting, 64)).unwrap();
        for r in [0.1, 0.5, 1.0] {
            let v = g.ball_volume(r).unwrap();
            assert!((v / (PI * r * r) - 1.0).abs() < 1e-6);
        }
        let g3 = build_geometry(&warped("r", 3, 1.0, Endpoint::Pole, Endpoint::Reflecting, 64)).unwrap();
        assert!((g3.ball_volume(1.0).unwrap() / (4.0 * PI / 3.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hemisphere_area() {
        let g = build_geometry(&GeometrySpec::round_sphere(2, 128)).unwrap();
        assert!((g.ball_volume(PI / 2.0).unwrap() - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn small_ball_density_tends_to_one() {
        let g = build_geometry(&GeometrySpec::round_sphere(3, 128)).unwrap();
        let mut prev = f64::INFINITY;
        for r in [0.4, 0.2, 0.1, 0.05] {
            let dev = (g.ball_volume(r).unwrap() / (unit_ball_volume(3) * r.powi(3)) - 1.0).abs();
            assert!(dev < 0.5 * r * r);
            assert!(dev < prev);
            prev = dev;
        }
    }

    #[test]
    fn ricci_minus_of_models() {
        let g = build_geometry(&GeometrySpec::round_sphere(3, 64)).unwrap();
        assert!(ricci_minus_field(&g).iter().all(|v| *v == 0.0));
        assert!(g.ricci_lowest().iter().all(|v| (v - 2.0).abs() < 1e-8));
        let hyp = build_geometry(&warped("sinh(r)", 2, 2.0, Endpoint::Pole, Endpoint::Reflecting, 64)).unwrap();
        assert!(ricci_minus_field(&hyp).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn torus_curvature_against_finite_differences() {
        let u = Expr::parse("0.1*cos(x)", &["x", "y"]).unwrap();
        let g = build_geometry(&GeometrySpec::Torus {
            side: 2.0 * PI,
            exponent: u.clone(),
            resolution: 32,
        })
        .unwrap();
        let ric = ricci_minus_field(&g);
        let d = 1e-4;
        for (k, c) in g.coordinates().iter().enumerate() {
            let (x, y) = (c[0], c[1]);
            let lap = (u.eval(&[x + d, y]) + u.eval(&[x - d, y]) + u.eval(&[x, y + d]) + u.eval(&[x, y - d])
                - 4.0 * u.eval(&[x, y]))
                / (d * d);
            let k_gauss = -(-2.0 * u.eval(&[x, y])).exp() * lap;
            assert!((ric[k] - (-k_gauss).max(0.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn pole_and_positivity_errors() {
        let bad_pole = warped("2*sin(r)", 3, PI, Endpoint::Pole, Endpoint::Pole, 64);
        assert!(matches!(build_geometry(&bad_pole), Err(Error::PoleCondition { .. })));
        let neg = warped("sin(r)", 3, 4.0, Endpoint::Pole, Endpoint::Reflecting, 64);
        assert!(matches!(build_geometry(&neg), Err(Error::NonPositiveWarp { .. })));
        let tiny = GeometrySpec::round_sphere(3, 8);
        assert!(matches!(build_geometry(&tiny), Err(Error::ResolutionTooSmall(8))));
    }

    #[test]
    fn green_identity_and_symmetry() {
        let g = build_geometry(&warped(
            "sin(r)*(1-0.3*sin(r)^4)",
            3,
            PI,
            Endpoint::Pole,
            Endpoint::Pole,
            128,
        ))
        .unwrap();
        let u: Vec<f64> = g
            .coordinates()
            .iter()
            .map(|c| c[0].cos() + 0.3 * (2.0 * c[0]).sin())
            .collect();
        let v: Vec<f64> = g.coordinates().iter().map(|c| (c[0] * c[0]).cos()).collect();
        let lhs = g.dirichlet_form(&u, &v);
        let rhs = g.inner(&u, &g.laplacian(&v));
        let sym = g.inner(&g.laplacian(&u), &v);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert!((rhs - sym).abs() <= 1e-12 * rhs.abs().max(1.0));
        let ones = vec![1.0; g.node_count()];
        assert!(g.laplacian(&ones).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn volume_converges_at_second_order() {
        // reflecting truncation makes the cell quadrature the only error source
        let w = "r + 0.3*r^3";
        let exact = {
            let g = build_geometry(&warped(w, 3, 1.0, Endpoint::Pole, Endpoint::Reflecting, 16)).unwrap();
            g.ball_volume(1.0).unwrap()
        };
        let v1 = build_geometry(&warped(w, 3, 1.0, Endpoint::Pole, Endpoint::Reflecting, 32))
            .unwrap()
            .total_volume();
        assert!((v1 - exact).abs() < 1e-10 * exact);
    }
}
