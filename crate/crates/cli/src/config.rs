//! Command-line flags merged over an optional JSON config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use psweight::analysis::AnalysisOptions;
use psweight::data::CsvSpec;
use psweight::simulation::{DgpConfig, Effect, Family, Scenario};
use psweight::{Dataset, Flavor, NuisanceSpec, WeightScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Debug, Default)]
pub struct AnalysisArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Treatment column (0/1).
    #[arg(long)]
    pub treatment: Option<String>,
    /// Outcome column.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Covariate columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Propensity-model covariates (default: all covariates).
    #[arg(long, value_delimiter = ',')]
    pub ps_cols: Option<Vec<String>>,
    /// Outcome-model covariates (default: all covariates).
    #[arg(long, value_delimiter = ',')]
    pub or_cols: Option<Vec<String>>,
    /// Estimands, e.g. ate,att,atc,ato,atm,aten,trim(0.1),trunc(0.05,0.1).
    #[arg(long)]
    pub schemes: Option<Vec<String>>,
    /// hajek, augmented (doubly-robust where applicable).
    #[arg(long, value_delimiter = ',')]
    pub flavors: Option<Vec<String>>,
    /// Symmetric trimming thresholds.
    #[arg(long, value_delimiter = ',')]
    pub trim: Option<Vec<f64>>,
    /// Confidence level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Refit the nuisance models on the rows kept by each trimming threshold.
    #[arg(long)]
    pub refit_after_trim: bool,
    /// Covariates to expand into indicator columns.
    #[arg(long, value_delimiter = ',')]
    pub expand_categoricals: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Recorded with the output.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalysisFile {
    data: Option<PathBuf>,
    treatment: Option<String>,
    outcome: Option<String>,
    covariates: Option<Vec<String>>,
    ps_cols: Option<Vec<String>>,
    or_cols: Option<Vec<String>>,
    schemes: Option<Vec<String>>,
    flavors: Option<Vec<String>>,
    trim: Option<Vec<f64>>,
    level: Option<f64>,
    refit_after_trim: Option<bool>,
    expand_categoricals: Option<Vec<String>>,
    format: Option<Format>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub data: PathBuf,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub ps_cols: Option<Vec<String>>,
    pub or_cols: Option<Vec<String>>,
    pub schemes: Vec<WeightScheme>,
    pub flavors: Vec<Flavor>,
    pub trims: Vec<f64>,
    pub level: f64,
    pub refit_after_trim: bool,
    pub categorical: Vec<String>,
    pub format: Format,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Splits on commas outside parentheses.
pub fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    out.into_iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

pub fn parse_flavor(s: &str) -> Result<Flavor> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "hajek" | "weighting" => Flavor::Hajek,
        "augmented" | "aug" => Flavor::Augmented,
        "dr" | "doubly-robust" => Flavor::DoublyRobust,
        other => bail!("unknown flavor '{other}'"),
    })
}

impl AnalysisConfig {
    pub fn resolve(a: AnalysisArgs) -> Result<Self> {
        let f: AnalysisFile = match &a.config {
            Some(p) => read_json(p)?,
            None => AnalysisFile::default(),
        };
        let data = a.data.or(f.data).context("--data is required")?;
        let treatment = a.treatment.or(f.treatment).context("--treatment is required")?;
        let outcome = a.outcome.or(f.outcome).context("--outcome is required")?;
        let trims = a.trim.or(f.trim).unwrap_or_else(|| vec![0.05, 0.1, 0.15]);
        let schemes = match a.schemes.or(f.schemes) {
            Some(list) => list
                .iter()
                .flat_map(|s| split_top_level(s))
                .map(|s| s.parse::<WeightScheme>())
                .collect::<psweight::Result<Vec<_>>>()?,
            None => WeightScheme::estimand_set(&trims)?,
        };
        let flavors = match a.flavors.or(f.flavors) {
            Some(list) => list.iter().map(|s| parse_flavor(s)).collect::<Result<Vec<_>>>()?,
            None => vec![Flavor::Hajek, Flavor::Augmented],
        };
        let cfg = AnalysisConfig {
            data,
            treatment,
            outcome,
            covariates: a.covariates.or(f.covariates).unwrap_or_default(),
            ps_cols: a.ps_cols.or(f.ps_cols),
            or_cols: a.or_cols.or(f.or_cols),
            schemes,
            flavors,
            trims,
            level: a.level.or(f.level).unwrap_or(0.95),
            refit_after_trim: a.refit_after_trim || f.refit_after_trim.unwrap_or(false),
            categorical: a.expand_categoricals.or(f.expand_categoricals).unwrap_or_default(),
            format: a.format.or(f.format).unwrap_or_default(),
            seed: a.seed.or(f.seed),
            out: a.out.or(f.out).unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.options().validate()?;
        Ok(cfg)
    }

    pub fn csv_spec(&self) -> CsvSpec {
        CsvSpec {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            covariates: self.covariates.clone(),
            categorical: self.categorical.clone(),
        }
    }

    /// Column names resolve to design columns; a categorical name selects all its indicators.
    pub fn nuisance_spec(&self, d: &Dataset) -> Result<NuisanceSpec> {
        let all: Vec<usize> = (0..d.ncols()).collect();
        let pick = |names: &Option<Vec<String>>| -> Result<Vec<usize>> {
            match names {
                // `--ps-cols ""` asks for an intercept-only model.
                Some(n) => {
                    let n: Vec<String> = n.iter().filter(|s| !s.trim().is_empty()).cloned().collect();
                    Ok(d.resolve_columns(&n)?)
                }
                None => Ok(all.clone()),
            }
        };
        Ok(NuisanceSpec::new(&pick(&self.ps_cols)?, &pick(&self.or_cols)?, d.ncols())?)
    }

    pub fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            schemes: self.schemes.clone(),
            flavors: self.flavors.clone(),
            level: self.level,
            refit_after_trim: self.refit_after_trim,
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// JSON file with simulation settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// toy or main.
    #[arg(long)]
    pub family: Option<String>,
    /// Main-study model, 1–6.
    #[arg(long)]
    pub model: Option<u8>,
    /// constant or heterogeneous.
    #[arg(long)]
    pub effect: Option<String>,
    /// A (weighting only) through E.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Rows per replicate.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Superpopulation size for the true values.
    #[arg(long)]
    pub superpop_n: Option<usize>,
    /// Propensity intercept of the two-covariate study.
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub trim: Option<Vec<f64>>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub refit_after_trim: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_family(s: &str) -> Result<Family> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "toy" => Family::Toy,
        "main" => Family::Main,
        o => bail!("unknown family '{o}'"),
    })
}

fn parse_effect(s: &str) -> Result<Effect> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "constant" => Effect::Constant,
        "heterogeneous" => Effect::Heterogeneous,
        o => bail!("unknown effect '{o}'"),
    })
}

fn parse_scenario(s: &str) -> Result<Scenario> {
    Ok(match s.to_ascii_uppercase().as_str() {
        "A" => Scenario::A,
        "B" => Scenario::B,
        "C" => Scenario::C,
        "D" => Scenario::D,
        "E" => Scenario::E,
        o => bail!("unknown scenario '{o}'"),
    })
}

impl SimulateArgs {
    pub fn resolve(self) -> Result<(DgpConfig, Format, PathBuf)> {
        let mut c: DgpConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => DgpConfig::default(),
        };
        if let Some(v) = &self.family {
            c.family = parse_family(v)?;
        }
        if let Some(v) = self.model {
            c.model_id = v;
        }
        if let Some(v) = &self.effect {
            c.effect = parse_effect(v)?;
        }
        if let Some(v) = &self.scenario {
            c.scenario = parse_scenario(v)?;
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        if let Some(v) = self.superpop_n {
            c.superpop_n = v;
        }
        if let Some(v) = self.beta0 {
            c.beta0 = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.trim {
            c.trims = v;
        }
        if let Some(v) = self.level {
            c.level = v;
        }
        c.refit_after_trim |= self.refit_after_trim;
        Ok((c, self.format.unwrap_or_default(), self.out.unwrap_or_else(|| PathBuf::from("."))))
    }
}
