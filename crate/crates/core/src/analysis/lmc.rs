//! Linear mode connectivity scans and error barriers.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::params::ParameterVector;
use crate::tasks::Split;
use crate::train::evaluate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmcCurve {
    pub from: String,
    pub to: String,
    pub alphas: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub error: Vec<f64>,
}

/// `0, h, 2h, ...` below 1, then exactly 1.
pub fn alpha_grid(interval: f64) -> Result<Vec<f64>> {
    if !(interval > 0.0 && interval <= 0.5) {
        return Err(Error::Config(format!("interval must lie in (0, 0.5], got {interval}")));
    }
    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let a = i as f64 * interval;
        if a >= 1.0 - 1e-9 {
            break;
        }
        grid.push(a);
        i += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

/// `(1 - a) * from + a * to` per coordinate; the endpoints are returned unblended.
pub fn blend(from: &ExpertWeights, to: &ExpertWeights, a: f64) -> Result<ExpertWeights> {
    if a == 0.0 {
        return Ok(from.clone());
    }
    if a == 1.0 {
        return to.with_values(to.values.clone()).map(|mut e| {
            e.provenance = from.provenance.clone();
            e
        });
    }
    let v = from.values.0.iter().zip(&to.values.0).map(|(x, y)| (1.0 - a) * x + a * y).collect();
    from.with_values(ParameterVector(v))
}

pub fn lmc_scan(
    backbone: &Backbone,
    test: &Split,
    from: (&str, &ExpertWeights),
    to: (&str, &ExpertWeights),
    interval: f64,
) -> Result<LmcCurve> {
    let (fe, te) = (from.1, to.1);
    if fe.config != te.config || !fe.layout.is_compatible(&te.layout) {
        return Err(Error::Layout(format!("experts `{}` and `{}` have different layouts", from.0, to.0)));
    }
    let alphas = alpha_grid(interval)?;
    let metrics =
        alphas.par_iter().map(|&a| evaluate(backbone, Some(&blend(fe, te, a)?), test)).collect::<Result<Vec<_>>>()?;
    Ok(LmcCurve {
        from: from.0.to_string(),
        to: to.0.to_string(),
        accuracy: metrics.iter().map(|m| m.accuracy).collect(),
        error: metrics.iter().map(|m| m.error()).collect(),
        alphas,
    })
}

/// Largest excess of path error over the chord between the endpoint errors.
pub fn barrier(curve: &LmcCurve) -> f64 {
    let (Some(&e0), Some(&e1)) = (curve.error.first(), curve.error.last()) else {
        return 0.0;
    };
    curve
        .alphas
        .iter()
        .zip(&curve.error)
        .map(|(&a, &e)| e - ((1.0 - a) * e0 + a * e1))
        .fold(f64::NEG_INFINITY, f64::max)
}

impl LmcCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,accuracy,error\n");
        for ((a, acc), e) in self.alphas.iter().zip(&self.accuracy).zip(&self.error) {
            let _ = writeln!(s, "{a:?},{acc:?},{e:?}");
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self.alphas.iter().copied().zip(self.error.iter().copied()).collect();
        super::svg::line_plot(&format!("test error {} -> {}", self.from, self.to), &pts)
    }
}

/// Per-source transfer record used to relate embedding similarity to
/// interpolation behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source: String,
    pub similarity: f64,
    /// Source expert applied directly to the target (path end).
    pub direct_accuracy: f64,
    pub best_on_path: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub records: Vec<TransferRecord>,
    pub spearman_direct: f64,
    pub spearman_best: f64,
}

/// Scans target-to-source paths for each `(id, similarity, expert)` source
/// and correlates similarity with direct and best-on-path accuracy.
pub fn transfer_correlation(
    backbone: &Backbone,
    test: &Split,
    target: (&str, &ExpertWeights),
    sources: &[(String, f64, ExpertWeights)],
    interval: f64,
) -> Result<TransferReport> {
    let records = sources
        .iter()
        .map(|(id, sim, e)| {
            let c = lmc_scan(backbone, test, target, (id, e), interval)?;
            Ok(TransferRecord {
                source: id.clone(),
                similarity: *sim,
                direct_accuracy: *c.accuracy.last().unwrap(),
                best_on_path: c.accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sims: Vec<f64> = records.iter().map(|r| r.similarity).collect();
    let direct: Vec<f64> = records.iter().map(|r| r.direct_accuracy).collect();
    let best: Vec<f64> = records.iter().map(|r| r.best_on_path).collect();
    Ok(TransferReport {
        spearman_direct: super::stats::spearman(&sims, &direct),
        spearman_best: super::stats::spearman(&sims, &best),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(alphas: &[f64], error: &[f64]) -> LmcCurve {
        LmcCurve {
            from: "a".into(),
            to: "b".into(),
            alphas: alphas.to_vec(),
            accuracy: error.iter().map(|e| 1.0 - e).collect(),
            error: error.to_vec(),
        }
    }

    #[test]
    fn grid_cardinality() {
        let g = alpha_grid(0.05).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[20]), (0.0, 1.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(alpha_grid(0.5).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(alpha_grid(0.25).unwrap().len(), 5);
        assert!(alpha_grid(0.0).is_err() && alpha_grid(0.6).is_err());
    }

    #[test]
    fn barrier_examples() {
        assert!((barrier(&curve(&[0.0, 0.5, 1.0], &[0.1, 0.5, 0.1])) - 0.4).abs() < 1e-15);
        assert_eq!(barrier(&curve(&[0.0, 0.5, 1.0], &[0.2, 0.2, 0.2])), 0.0);
        assert_eq!(barrier(&curve(&[0.0, 0.5, 1.0], &[0.4, 0.1, 0.2])), 0.0);
    }
}
