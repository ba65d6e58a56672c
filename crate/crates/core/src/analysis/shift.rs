//! Cross-domain relative performance drop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::tasks::Split;
use crate::train::evaluate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftMatrix {
    pub domains: Vec<String>,
    /// `drop[e][d]`, in percent: how much worse domain `e`'s expert does on
    /// domain `d` than `d`'s own expert.
    pub drop: Vec<Vec<f64>>,
}

pub fn shift_eval(
    backbone: &Backbone,
    experts: &BTreeMap<String, ExpertWeights>,
    tests: &BTreeMap<String, Split>,
) -> Result<ShiftMatrix> {
    for d in experts.keys() {
        if !tests.contains_key(d) {
            return Err(Error::Data(format!("domain `{d}` has an expert but no test split")));
        }
    }
    for d in tests.keys() {
        if !experts.contains_key(d) {
            return Err(Error::Data(format!("domain `{d}` has a test split but no expert")));
        }
    }
    let domains: Vec<String> = experts.keys().cloned().collect();
    let mut acc = vec![vec![0.0; domains.len()]; domains.len()];
    for (i, e) in domains.iter().enumerate() {
        for (j, d) in domains.iter().enumerate() {
            acc[i][j] = evaluate(backbone, Some(&experts[e]), &tests[d])?.accuracy;
        }
    }
    let mut drop = vec![vec![0.0; domains.len()]; domains.len()];
    for j in 0..domains.len() {
        let own = acc[j][j];
        if own <= 0.0 {
            return Err(Error::Numerical {
                step: 0,
                detail: format!("domain `{}` expert has zero accuracy on its own domain", domains[j]),
            });
        }
        for i in 0..domains.len() {
            drop[i][j] = if i == j { 0.0 } else { 100.0 * (own - acc[i][j]) / own };
        }
    }
    Ok(ShiftMatrix { domains, drop })
}

impl ShiftMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.domains.len();
        if n < 2 {
            return 0.0;
        }
        let s: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| self.drop[i][j])
            .sum();
        s / (n * (n - 1)) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("expert");
        for d in &self.domains {
            let _ = write!(s, ",{d}");
        }
        s.push('\n');
        for (e, row) in self.domains.iter().zip(&self.drop) {
            s.push_str(e);
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }
}
