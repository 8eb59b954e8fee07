//! Data-generating processes: a two-covariate illustration and the six-model
//! main study with constant or heterogeneous effects.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::metrics::ReConvention;
use super::rng::SimRng;
use crate::data::{Dataset, Flavor, PotentialOutcomeSample, Thresholds};
use crate::error::{Error, Result};
use crate::glm::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Toy,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    /// δ(X) = 4.
    Constant,
    /// δ(X) = 4 + 3(X₁ + X₂)² + X₁X₃.
    Heterogeneous,
}

/// Which nuisance models are correctly specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Weighting only, correct propensity model.
    A,
    /// Augmented, both models correct.
    B,
    /// Augmented, propensity correct, outcome misspecified.
    C,
    /// Augmented, outcome correct, propensity misspecified.
    D,
    /// Augmented, both misspecified.
    E,
}

impl Scenario {
    fn ps_correct(&self) -> bool {
        matches!(self, Scenario::A | Scenario::B | Scenario::C)
    }

    fn or_correct(&self) -> bool {
        matches!(self, Scenario::A | Scenario::B | Scenario::D)
    }

    /// Flavors estimated under this scenario.
    pub fn flavors(&self) -> Vec<Flavor> {
        match self {
            Scenario::A => vec![Flavor::Hajek],
            _ => vec![Flavor::Hajek, Flavor::Augmented],
        }
    }
}

/// Whether the second parameter in N(μ, s) denotes a variance or a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    Variance,
    StdDev,
}

impl VarianceConvention {
    fn sd(&self, s: f64) -> f64 {
        match self {
            VarianceConvention::Variance => s.sqrt(),
            VarianceConvention::StdDev => s,
        }
    }
}

/// Design-matrix columns (intercept = 0) of the main study's covariates
/// X₁..X₇; the misspecified view omits the squared and product terms.
pub const MAIN_FULL_COLUMNS: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];
pub const MAIN_MISSPECIFIED_COLUMNS: [usize; 5] = [0, 1, 2, 3, 4];
pub const TOY_COLUMNS: [usize; 3] = [0, 1, 2];

/// Propensity coefficients (β₀, …, β₇) of main-study models 1–6.
pub fn main_beta(model_id: u8) -> Result<[f64; 8]> {
    const A: [f64; 7] = [0.3, 0.4, 0.4, 0.4, -0.1, -0.1, 0.1];
    const B: [f64; 7] = [-0.25, 0.45, -0.3, 0.65, -0.03, -0.03, 0.07];
    let (b0, rest) = match model_id {
        1 => (-3.07, A),
        2 => (-1.82, B),
        3 => (-0.37, B),
        4 => (0.98, A),
        5 => (1.86, A),
        6 => (1.12, B),
        _ => return Err(Error::Config(format!("model id {model_id} outside 1..=6"))),
    };
    let mut b = [0.0; 8];
    b[0] = b0;
    b[1..].copy_from_slice(&rest);
    Ok(b)
}

/// Simulation study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub family: Family,
    /// Main-study model, 1..=6.
    pub model_id: u8,
    /// Intercept of the illustration's propensity model.
    pub beta0: f64,
    pub effect: Effect,
    /// Rows per replicate.
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub scenario: Scenario,
    /// Rows of the superpopulation used for true values.
    pub superpop_n: usize,
    pub convention: VarianceConvention,
    /// Multiplier on the outcome noise; 0 removes it.
    pub noise_scale: f64,
    pub trims: Vec<f64>,
    pub level: f64,
    pub refit_after_trim: bool,
    pub re_convention: ReConvention,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            family: Family::Main,
            model_id: 1,
            beta0: -3.5,
            effect: Effect::Heterogeneous,
            n: 1000,
            reps: 500,
            seed: 20_240_601,
            scenario: Scenario::B,
            superpop_n: 1_000_000,
            convention: VarianceConvention::Variance,
            noise_scale: 1.0,
            trims: vec![0.05, 0.1, 0.15],
            level: 0.95,
            refit_after_trim: false,
            re_convention: ReConvention::SdOverMeanSe,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Config(format!("n = {} is below the minimum of 50", self.n)));
        }
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.superpop_n < 2 {
            return Err(Error::Config("superpopulation needs at least 2 rows".into()));
        }
        if self.family == Family::Main {
            main_beta(self.model_id)?;
        }
        if !self.beta0.is_finite() {
            return Err(Error::Config("beta0 must be finite".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be finite and non-negative".into()));
        }
        if !(self.level > 0.5 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0.5, 1)", self.level)));
        }
        for &a in &self.trims {
            Thresholds::symmetric(a).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Propensity-model columns used for estimation under the scenario.
    pub fn ps_columns(&self) -> Vec<usize> {
        match self.family {
            Family::Toy => TOY_COLUMNS.to_vec(),
            Family::Main if self.scenario.ps_correct() => MAIN_FULL_COLUMNS.to_vec(),
            Family::Main => MAIN_MISSPECIFIED_COLUMNS.to_vec(),
        }
    }

    /// Outcome-model columns used for estimation under the scenario.
    pub fn or_columns(&self) -> Vec<usize> {
        match self.family {
            Family::Toy => TOY_COLUMNS.to_vec(),
            Family::Main if self.scenario.or_correct() => MAIN_FULL_COLUMNS.to_vec(),
            Family::Main => MAIN_MISSPECIFIED_COLUMNS.to_vec(),
        }
    }

    /// One draw of `n` rows from this configuration's DGP.
    pub fn generate(&self, n: usize, rng: &mut SimRng) -> Result<PotentialOutcomeSample> {
        let opts = DgpOptions {
            convention: self.convention,
            noise_scale: self.noise_scale,
        };
        match self.family {
            Family::Toy => gen_toy(self.beta0, n, rng, &opts),
            Family::Main => gen_main(self.model_id, self.effect, n, rng, &opts),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpOptions {
    pub convention: VarianceConvention,
    pub noise_scale: f64,
}

impl Default for DgpOptions {
    fn default() -> Self {
        DgpOptions {
            convention: VarianceConvention::Variance,
            noise_scale: 1.0,
        }
    }
}

fn assemble(
    z: Vec<bool>,
    y0: Vec<f64>,
    y1: Vec<f64>,
    e_true: Vec<f64>,
    cov: DMatrix<f64>,
    names: Vec<String>,
) -> Result<PotentialOutcomeSample> {
    let y = z
        .iter()
        .zip(y0.iter().zip(&y1))
        .map(|(&t, (&a, &b))| if t { b } else { a })
        .collect();
    let data = Dataset::new(z, y, cov, names)?;
    Ok(PotentialOutcomeSample { data, y0, y1, e_true })
}

/// X₁ ~ N(6, 9), X₂ ~ Bern(0.75), logit e = β₀ + 0.2X₁ + 0.8X₂,
/// Y(0) = −X₁ + 2X₂ + ε with ε ~ N(0, 1), Y(1) = Y(0) + (X₁ + X₂)².
pub fn gen_toy(beta0: f64, n: usize, rng: &mut SimRng, opts: &DgpOptions) -> Result<PotentialOutcomeSample> {
    let sd_x1 = opts.convention.sd(9.0);
    let sd_eps = opts.convention.sd(1.0) * opts.noise_scale;
    let mut cov = DMatrix::zeros(n, 2);
    let (mut z, mut y0, mut y1, mut e) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let x1 = 6.0 + sd_x1 * rng.normal();
        let x2 = if rng.bernoulli(0.75) { 1.0 } else { 0.0 };
        let p = expit(beta0 + 0.2 * x1 + 0.8 * x2);
        let t = rng.bernoulli(p);
        let base = -x1 + 2.0 * x2 + sd_eps * rng.normal();
        cov[(i, 0)] = x1;
        cov[(i, 1)] = x2;
        z.push(t);
        e.push(p);
        y0.push(base);
        y1.push(base + (x1 + x2).powi(2));
    }
    assemble(z, y0, y1, e, cov, vec!["x1".into(), "x2".into()])
}

/// Main-study covariates: X₄ ~ Bern(0.5), X₃ | X₄ ~ Bern(0.4 + 0.2X₄),
/// (X₁, X₂) | X₃, X₄ bivariate normal with mean
/// (X₄ − X₃ + 0.5X₃X₄, X₃ − X₄ + X₃X₄) and covariance
/// X₃·[[1, .5], [.5, 1]] + (1 − X₃)·[[2, .25], [.25, 2]]; X₅ = X₁², X₆ = X₁X₂,
/// X₇ = X₂². Y(0) = 0.5 + X₁ + 0.6X₂ + 2.2X₃ − 1.2X₄ + (X₁ + X₂)² + ε with
/// ε ~ N(0, 4).
pub fn gen_main(
    model_id: u8,
    effect: Effect,
    n: usize,
    rng: &mut SimRng,
    opts: &DgpOptions,
) -> Result<PotentialOutcomeSample> {
    let beta = main_beta(model_id)?;
    let sd_eps = opts.convention.sd(4.0) * opts.noise_scale;
    // Cholesky factors of the two conditional covariances.
    let chol = |a: f64, b: f64| {
        let l11 = a.sqrt();
        let l21 = b / l11;
        (l11, l21, (a - l21 * l21).sqrt())
    };
    let c1 = chol(1.0, 0.5);
    let c0 = chol(2.0, 0.25);

    let mut cov = DMatrix::zeros(n, 7);
    let (mut z, mut y0, mut y1, mut e) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let x4 = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
        let x3 = if rng.bernoulli(0.4 + 0.2 * x4) { 1.0 } else { 0.0 };
        let m1 = x4 - x3 + 0.5 * x3 * x4;
        let m2 = x3 - x4 + x3 * x4;
        let (l11, l21, l22) = if x3 == 1.0 { c1 } else { c0 };
        let (u1, u2) = (rng.normal(), rng.normal());
        let x1 = m1 + l11 * u1;
        let x2 = m2 + l21 * u1 + l22 * u2;
        let row = [x1, x2, x3, x4, x1 * x1, x1 * x2, x2 * x2];
        let eta = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        let p = expit(eta);
        let t = rng.bernoulli(p);
        let s = x1 + x2;
        let base = 0.5 + x1 + 0.6 * x2 + 2.2 * x3 - 1.2 * x4 + s * s + sd_eps * rng.normal();
        let delta = match effect {
            Effect::Constant => 4.0,
            Effect::Heterogeneous => 4.0 + 3.0 * s * s + x1 * x3,
        };
        for (j, v) in row.iter().enumerate() {
            cov[(i, j)] = *v;
        }
        z.push(t);
        e.push(p);
        y0.push(base);
        y1.push(base + delta);
    }
    let names = (1..=7).map(|j| format!("x{j}")).collect();
    assemble(z, y0, y1, e, cov, names)
}
