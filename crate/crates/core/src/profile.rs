//! One-variable profiles (warp functions, conformal exponents) given either
//! in closed form or as samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::expr::Expr;

/// A twice-differentiable function of one variable.
#[derive(Debug, Clone)]
pub enum Profile {
    Closed { f: Expr, df: Expr, d2f: Expr },
    Samples(CubicSpline),
}

impl Profile {
    pub fn closed(f: Expr) -> Self {
        let df = f.derivative(0);
        let d2f = df.derivative(0);
        Profile::Closed { f, df, d2f }
    }

    pub fn parse(text: &str, var: &str) -> Result<Self> {
        Ok(Self::closed(Expr::parse(text, &[var])?))
    }

    /// Read `x,value[,derivative]` rows from a CSV file with a header line.
    /// When the derivative column is present the spline is clamped to the
    /// end slopes it gives; otherwise a natural spline is used.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ds = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let get = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Config(format!("{}: row {} has too few columns", path.display(), line + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), line + 2)))
            };
            xs.push(get(0)?);
            ys.push(get(1)?);
            if rec.len() > 2 {
                ds.push(get(2)?);
            }
        }
        let ends = if ds.len() == xs.len() && !ds.is_empty() {
            SplineEnds::Clamped(ds[0], ds[ds.len() - 1])
        } else {
            SplineEnds::Natural
        };
        Ok(Profile::Samples(CubicSpline::new(xs, ys, ends)?))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Closed { f, .. } => f.eval1(x),
            Profile::Samples(s) => s.eval(x).0,
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Profile::Closed { df, .. } => df.eval1(x),
            Profile::Samples(s) => s.eval(x).1,
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Profile::Closed { d2f, .. } => d2f.eval1(x),
            Profile::Samples(s) => s.eval(x).2,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Profile::Closed { f, .. } => f.source().to_string(),
            Profile::Samples(s) => format!("samples({} points)", s.xs.len()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SplineEnds {
    Natural,
    Clamped(f64, f64),
}

/// Interpolating cubic spline on strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, ends: SplineEnds) -> Result<Self> {
        let n = xs.len();
        if n < 4 || ys.len() != n {
            return Err(Error::Config("spline needs at least 4 samples".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("spline knots must be strictly increasing".into()));
        }
        // Tridiagonal system for the knot second derivatives.
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            sub[i] = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            sup[i] = h1 / 6.0;
            rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
        }
        match ends {
            SplineEnds::Natural => {
                diag[0] = 1.0;
                diag[n - 1] = 1.0;
            }
            SplineEnds::Clamped(d0, dn) => {
                let h0 = xs[1] - xs[0];
                diag[0] = h0 / 3.0;
                sup[0] = h0 / 6.0;
                rhs[0] = (ys[1] - ys[0]) / h0 - d0;
                let hn = xs[n - 1] - xs[n - 2];
                sub[n - 1] = hn / 6.0;
                diag[n - 1] = hn / 3.0;
                rhs[n - 1] = dn - (ys[n - 1] - ys[n - 2]) / hn;
            }
        }
        let second = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        Ok(Self { xs, ys, second })
    }

    /// Value, first and second derivative at `x` (linear extrapolation of
    /// the end cubic outside the knot range).
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
