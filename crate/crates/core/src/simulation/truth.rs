//! True estimand values on a simulated superpopulation.

use serde::Serialize;

use super::dgp::DgpConfig;
use super::rng::{SimRng, SUPERPOP_STREAM};
use crate::data::{PotentialOutcomeSample, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::{estimand_decomposition_check, population_wate};
use crate::linalg::compensated_sum;
use crate::weights::selection_value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthEntry {
    pub estimand: WeightScheme,
    pub truth: f64,
    /// Linearized Monte Carlo standard error of the ratio `Σgτ / Σg`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTable {
    pub n: usize,
    /// Realized proportion treated.
    pub p: f64,
    /// Mean true propensity score.
    pub p_true: f64,
    /// Var(e | z = 1) / Var(e | z = 0) of the true propensity scores.
    pub r: f64,
    pub entries: Vec<TruthEntry>,
    /// Mean of Y(1) − Y(0) over treated rows.
    pub att_empirical: f64,
    /// |ATE − (p·ATT + (1 − p)·ATC)| with `p` the mean true propensity.
    pub decomposition_gap: f64,
    pub decomposition_mc_se: f64,
}

impl TruthTable {
    pub fn get(&self, scheme: &WeightScheme) -> Option<f64> {
        self.entries.iter().find(|e| &e.estimand == scheme).map(|e| e.truth)
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = compensated_sum(v.iter().copied()) / n;
    let var = compensated_sum(v.iter().map(|x| (x - m) * (x - m))) / (n - 1.0);
    (m, var)
}

/// Evaluates every requested estimand at the true propensity scores.
pub fn true_estimands(sample: &PotentialOutcomeSample, schemes: &[WeightScheme]) -> Result<TruthTable> {
    let tau = sample.tau();
    let e = &sample.e_true;
    let z = sample.data.z();
    let n = tau.len();
    if e.len() != n || n < 2 {
        return Err(Error::Dimension(format!("{} effects against {} propensity scores", n, e.len())));
    }

    let mut entries = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let truth = population_wate(&tau, e, z, scheme)?;
        let g = e
            .iter()
            .zip(z)
            .map(|(&ei, &zi)| selection_value(scheme, ei, zi))
            .collect::<Result<Vec<f64>>>()?;
        let sg = compensated_sum(g.iter().copied());
        let ss = compensated_sum(g.iter().zip(&tau).map(|(gi, ti)| (gi * (ti - truth)).powi(2)));
        entries.push(TruthEntry {
            estimand: *scheme,
            truth,
            mc_se: ss.sqrt() / sg,
        });
    }

    let treated: Vec<f64> = (0..n).filter(|&i| z[i]).map(|i| e[i]).collect();
    let control: Vec<f64> = (0..n).filter(|&i| !z[i]).map(|i| e[i]).collect();
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::DegenerateData("superpopulation needs two rows per arm".into()));
    }
    let r = mean_var(&treated).1 / mean_var(&control).1;
    let att_empirical = compensated_sum((0..n).filter(|&i| z[i]).map(|i| tau[i])) / treated.len() as f64;
    let (_, _, gap) = estimand_decomposition_check(sample)?;
    let (_, tau_var) = mean_var(&tau);

    Ok(TruthTable {
        n,
        p: treated.len() as f64 / n as f64,
        p_true: compensated_sum(e.iter().copied()) / n as f64,
        r,
        entries,
        att_empirical,
        decomposition_gap: gap,
        decomposition_mc_se: (tau_var / n as f64).sqrt(),
    })
}

/// Superpopulation draw on its reserved stream.
pub fn superpopulation(cfg: &DgpConfig) -> Result<PotentialOutcomeSample> {
    let mut rng = SimRng::new(cfg.seed, SUPERPOP_STREAM);
    cfg.generate(cfg.superpop_n, &mut rng)
}

/// Truth table for every estimand the configuration's study reports.
pub fn truth_for_config(cfg: &DgpConfig) -> Result<TruthTable> {
    cfg.validate()?;
    let schemes = WeightScheme::estimand_set(&cfg.trims)?;
    true_estimands(&superpopulation(cfg)?, &schemes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::dgp::{gen_main, DgpOptions, Effect};

    #[test]
    fn constant_effect_truths_are_four() {
        let mut rng = SimRng::new(1, SUPERPOP_STREAM);
        let s = gen_main(3, Effect::Constant, 20_000, &mut rng, &DgpOptions::default()).unwrap();
        let schemes = WeightScheme::estimand_set(&[0.05, 0.1, 0.15]).unwrap();
        let t = true_estimands(&s, &schemes).unwrap();
        for e in &t.entries {
            assert!((e.truth - 4.0).abs() < 1e-9, "{e:?}");
            assert!(e.mc_se < 1e-9);
        }
        assert!((t.att_empirical - 4.0).abs() < 1e-9);
    }

    #[test]
    fn decomposition_gap_is_within_mc_error() {
        let mut rng = SimRng::new(2, SUPERPOP_STREAM);
        let s = gen_main(2, Effect::Heterogeneous, 50_000, &mut rng, &DgpOptions::default()).unwrap();
        let t = true_estimands(&s, &[WeightScheme::Ate]).unwrap();
        assert!(t.decomposition_gap <= 3.0 * t.decomposition_mc_se);
        assert!(t.p > 0.1 && t.p < 0.3);
    }
}
