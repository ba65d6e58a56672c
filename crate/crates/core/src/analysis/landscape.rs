//! Two-dimensional loss-landscape slices through three checkpoints.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::params::ParameterVector;
use crate::tasks::Split;
use crate::train::evaluate;

/// Norm below which a basis direction counts as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-10;

/// Orthonormal `(u, v)` spanning the plane through `a`, `b`, `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneBasis {
    pub origin: ParameterVector,
    pub u: ParameterVector,
    pub v: ParameterVector,
}

impl PlaneBasis {
    pub fn new(a: &ParameterVector, b: &ParameterVector, c: &ParameterVector) -> Result<Self> {
        if a.len() != b.len() || a.len() != c.len() {
            return Err(Error::Layout("checkpoints differ in length".into()));
        }
        let u = b.sub(a);
        let nu = u.norm();
        if nu < DEGENERATE_NORM {
            return Err(Error::DegenerateBasis(nu));
        }
        let u = u.scaled(1.0 / nu);
        let w = c.sub(a);
        let v = w.axpy(-w.dot(&u), &u);
        let nv = v.norm();
        if nv < DEGENERATE_NORM {
            return Err(Error::DegenerateBasis(nv));
        }
        Ok(Self { origin: a.clone(), u, v: v.scaled(1.0 / nv) })
    }

    /// In-plane coordinates of `p` relative to the origin.
    pub fn coords(&self, p: &ParameterVector) -> (f64, f64) {
        let d = p.sub(&self.origin);
        (d.dot(&self.u), d.dot(&self.v))
    }

    pub fn point(&self, x: f64, y: f64) -> ParameterVector {
        ParameterVector(
            self.origin.0.iter().zip(&self.u.0).zip(&self.v.0).map(|((o, u), v)| o + x * u + y * v).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub names: [String; 3],
    /// `(x, y)` of the three checkpoints.
    pub checkpoints: [(f64, f64); 3],
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `error[iy][ix]` is the test error at `(xs[ix], ys[iy])`.
    pub error: Vec<Vec<f64>>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Test error over an `n x n` grid spanning the checkpoints' bounding box,
/// widened on every side by `margin` times its extent.
pub fn landscape_2d(
    backbone: &Backbone,
    test: &Split,
    checkpoints: [(&str, &ExpertWeights); 3],
    n: usize,
    margin: f64,
) -> Result<Landscape> {
    if n == 0 {
        return Err(Error::Config("grid size must be >= 1".into()));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Config(format!("margin must be non-negative, got {margin}")));
    }
    let [a, b, c] = checkpoints;
    for (name, e) in [b, c] {
        if e.config != a.1.config || !e.layout.is_compatible(&a.1.layout) {
            return Err(Error::Layout(format!("checkpoint `{name}` differs in layout from `{}`", a.0)));
        }
    }
    let basis = PlaneBasis::new(&a.1.values, &b.1.values, &c.1.values)?;
    let pts = [(0.0, 0.0), basis.coords(&b.1.values), basis.coords(&c.1.values)];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (mx, my) = (margin * (x1 - x0), margin * (y1 - y0));
    let xs = axis(x0 - mx, x1 + mx, n);
    let ys = axis(y0 - my, y1 + my, n);
    let cells: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let errs = cells
        .par_iter()
        .map(|&(x, y)| {
            let e = a.1.with_values(basis.point(x, y))?;
            Ok(evaluate(backbone, Some(&e), test)?.error())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Landscape {
        names: [a.0.to_string(), b.0.to_string(), c.0.to_string()],
        checkpoints: pts,
        error: errs.chunks(n).map(|r| r.to_vec()).collect(),
        xs,
        ys,
    })
}

impl Landscape {
    /// Long form: one `x,y,error` row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,error\n");
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let _ = writeln!(s, "{x:?},{y:?},{:?}", self.error[iy][ix]);
            }
        }
        s
    }

    /// Checkpoint names and coordinates, as JSON.
    pub fn sidecar_json(&self) -> String {
        let cps: Vec<_> = self
            .names
            .iter()
            .zip(&self.checkpoints)
            .map(|(n, (x, y))| serde_json::json!({ "name": n, "x": x, "y": y }))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "checkpoints": cps, "n": self.xs.len() }))
            .expect("sidecar serialises")
    }

    pub fn to_svg(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>();
        let rows: Vec<Vec<f64>> = self.error.iter().rev().cloned().collect();
        let ys: Vec<String> = fmt(&self.ys).into_iter().rev().collect();
        super::svg::heatmap(&ys, &fmt(&self.xs), &rows, (0.0, 1.0))
    }
}
