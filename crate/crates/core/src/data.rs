//! Observational data, nuisance-model column sets, weight schemes and
//! per-estimand results.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::variance::VarianceStatus;

pub const INTERCEPT: &str = "(Intercept)";

/// Treatment indicators, outcomes and a covariate matrix whose first column
/// is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    z: Vec<bool>,
    y: Vec<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from covariates without an intercept column; the
    /// intercept is prepended.
    pub fn new(z: Vec<bool>, y: Vec<f64>, covariates: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = z.len();
        if covariates.nrows() != n {
            return Err(Error::Dimension(format!(
                "covariate matrix has {} rows, treatment has {}",
                covariates.nrows(),
                n
            )));
        }
        if names.len() != covariates.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                covariates.ncols()
            )));
        }
        let p = covariates.ncols();
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] });
        let mut all = Vec::with_capacity(p + 1);
        all.push(INTERCEPT.to_string());
        all.extend(names);
        Self::from_design(z, y, x, all)
    }

    /// Builds a dataset from a full design whose column 0 must be all ones.
    pub fn from_design(z: Vec<bool>, y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = z.len();
        if y.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "row counts differ: z {}, y {}, x {}",
                n,
                y.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} names for {} design columns",
                names.len(),
                x.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::DegenerateData(format!("need at least 2 rows, got {n}")));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::DegenerateData("design column 0 must be identically 1".into()));
        }
        if let Some((i, _)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::DegenerateData(format!("non-finite outcome at row {}", i + 1)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite covariate value".into()));
        }
        let treated = z.iter().filter(|&&t| t).count();
        if treated == 0 || treated == n {
            return Err(Error::DegenerateData(format!(
                "treatment must contain both arms ({treated} treated of {n})"
            )));
        }
        Ok(Dataset { z, y, x, names })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Number of design columns including the intercept.
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let z = rows.iter().map(|&i| self.z[i]).collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = crate::linalg::select_rows(&self.x, rows);
        Self::from_design(z, y, x, self.names.clone())
    }

    /// Same design and treatment with a replacement outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_design(self.z.clone(), y, self.x.clone(), self.names.clone())
    }

    /// Resolves covariate names to design column indices. A name also matches
    /// every indicator column `name=level` produced by categorical expansion.
    pub fn resolve_columns(&self, wanted: &[String]) -> Result<Vec<usize>> {
        let mut out = BTreeSet::new();
        for w in wanted {
            let prefix = format!("{w}=");
            let hits: Vec<usize> = self
                .names
                .iter()
                .enumerate()
                .filter(|(_, n)| *n == w || n.starts_with(&prefix))
                .map(|(i, _)| i)
                .collect();
            if hits.is_empty() {
                return Err(Error::Schema(format!("unknown covariate '{w}'")));
            }
            out.extend(hits);
        }
        out.insert(0);
        Ok(out.into_iter().collect())
    }
}

/// Sample proportion of treated units.
pub fn proportion_treated(d: &Dataset) -> f64 {
    d.n_treated() as f64 / d.n() as f64
}

/// Column index sets for the propensity (V) and outcome (W) models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    ps_columns: Vec<usize>,
    or_columns: Vec<usize>,
}

impl NuisanceSpec {
    /// Validates both sets against a design with `ncols` columns. Column 0 is
    /// added when absent; sets are kept in ascending order.
    pub fn new(ps_columns: &[usize], or_columns: &[usize], ncols: usize) -> Result<Self> {
        Ok(NuisanceSpec {
            ps_columns: Self::check(ps_columns, ncols, "propensity")?,
            or_columns: Self::check(or_columns, ncols, "outcome")?,
        })
    }

    /// Every design column in both models.
    pub fn full(d: &Dataset) -> Self {
        let all: Vec<usize> = (0..d.ncols()).collect();
        NuisanceSpec {
            ps_columns: all.clone(),
            or_columns: all,
        }
    }

    fn check(cols: &[usize], ncols: usize, what: &str) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        for &c in cols {
            if c >= ncols {
                return Err(Error::Schema(format!(
                    "{what} column {c} out of range (design has {ncols} columns)"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Schema(format!("{what} column {c} listed twice")));
            }
        }
        seen.insert(0);
        Ok(seen.into_iter().collect())
    }

    pub fn ps_columns(&self) -> &[usize] {
        &self.ps_columns
    }

    pub fn or_columns(&self) -> &[usize] {
        &self.or_columns
    }
}

/// Trimming or truncation thresholds `(α₁, α₂)`, both in `(0, 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    lower: f64,
    upper: f64,
}

impl Thresholds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        for a in [lower, upper] {
            if !(a > 0.0 && a < 0.5) {
                return Err(Error::Domain(format!("threshold {a} outside (0, 0.5)")));
            }
        }
        Ok(Thresholds { lower, upper })
    }

    pub fn symmetric(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha)
    }

    /// α₁: units with `e < α₁` are affected.
    pub fn lower(&self) -> f64 {
        self.lower
    }

    /// α₂: units with `e > 1 − α₂` are affected.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    fn fmt_args(&self) -> String {
        if self.lower == self.upper {
            format!("{}", self.lower)
        } else {
            format!("{}, {}", self.lower, self.upper)
        }
    }
}

/// Selection function defining the target population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Ate,
    Att,
    Atc,
    TrimmedAte(Thresholds),
    TruncatedAte(Thresholds),
    Overlap,
    Matching,
    Entropy,
}

impl WeightScheme {
    /// Estimand label: ATE, ATE (0.05), ATO, ATM, ATEN, ATC, ATT.
    pub fn label(&self) -> String {
        match self {
            WeightScheme::Ate => "ATE".into(),
            WeightScheme::Att => "ATT".into(),
            WeightScheme::Atc => "ATC".into(),
            WeightScheme::TrimmedAte(t) => format!("ATE ({})", t.fmt_args()),
            WeightScheme::TruncatedAte(t) => format!("ATE-trunc ({})", t.fmt_args()),
            WeightScheme::Overlap => "ATO".into(),
            WeightScheme::Matching => "ATM".into(),
            WeightScheme::Entropy => "ATEN".into(),
        }
    }

    /// Weighting-method label: IPW, IPW (0.05), OW, MW, EW, IPWC, IPWT.
    pub fn method(&self) -> String {
        match self {
            WeightScheme::Ate => "IPW".into(),
            WeightScheme::Att => "IPWT".into(),
            WeightScheme::Atc => "IPWC".into(),
            WeightScheme::TrimmedAte(t) => format!("IPW ({})", t.fmt_args()),
            WeightScheme::TruncatedAte(t) => format!("IPW-trunc ({})", t.fmt_args()),
            WeightScheme::Overlap => "OW".into(),
            WeightScheme::Matching => "MW".into(),
            WeightScheme::Entropy => "EW".into(),
        }
    }

    pub fn is_equipoise(&self) -> bool {
        matches!(self, WeightScheme::Overlap | WeightScheme::Matching | WeightScheme::Entropy)
    }

    pub fn is_trimmed(&self) -> bool {
        matches!(self, WeightScheme::TrimmedAte(_))
    }

    /// ATE, trimmed ATEs at each threshold, ATO, ATM, ATEN, ATT, ATC.
    pub fn estimand_set(trims: &[f64]) -> Result<Vec<WeightScheme>> {
        let mut v = vec![WeightScheme::Ate];
        for &a in trims {
            v.push(WeightScheme::TrimmedAte(Thresholds::symmetric(a)?));
        }
        v.extend([
            WeightScheme::Overlap,
            WeightScheme::Matching,
            WeightScheme::Entropy,
            WeightScheme::Att,
            WeightScheme::Atc,
        ]);
        Ok(v)
    }

    /// IPW, IPW (α)…, OW, MW, EW, IPWC, IPWT — the effective-sample-size table order.
    pub fn ess_table_set(trims: &[f64]) -> Result<Vec<WeightScheme>> {
        let mut v = vec![WeightScheme::Ate];
        for &a in trims {
            v.push(WeightScheme::TrimmedAte(Thresholds::symmetric(a)?));
        }
        v.extend([
            WeightScheme::Overlap,
            WeightScheme::Matching,
            WeightScheme::Entropy,
            WeightScheme::Atc,
            WeightScheme::Att,
        ]);
        Ok(v)
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_args(inner: &str) -> Result<Thresholds> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|s| s.parse::<f64>()).collect();
    let nums = nums.map_err(|_| Error::Config(format!("bad threshold list '{inner}'")))?;
    match nums.as_slice() {
        [a] => Thresholds::symmetric(*a),
        [a, b] => Thresholds::new(*a, *b),
        _ => Err(Error::Config(format!("expected one or two thresholds in '{inner}'"))),
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        let (head, args) = match lower.find(['(', ':']) {
            Some(pos) => {
                let rest = lower[pos + 1..].trim_end_matches(')');
                (lower[..pos].trim().to_string(), Some(rest.to_string()))
            }
            None => (lower.clone(), None),
        };
        let scheme = match (head.as_str(), args) {
            ("ate" | "ipw", None) => WeightScheme::Ate,
            ("att" | "ipwt", None) => WeightScheme::Att,
            ("atc" | "ipwc", None) => WeightScheme::Atc,
            ("ato" | "ow" | "overlap", None) => WeightScheme::Overlap,
            ("atm" | "mw" | "matching", None) => WeightScheme::Matching,
            ("aten" | "ew" | "entropy", None) => WeightScheme::Entropy,
            ("ate" | "ipw" | "trim" | "trimmed", Some(a)) => WeightScheme::TrimmedAte(parse_args(&a)?),
            ("trunc" | "truncated" | "ate-trunc" | "ipw-trunc", Some(a)) => {
                WeightScheme::TruncatedAte(parse_args(&a)?)
            }
            _ => return Err(Error::Config(format!("unknown weight scheme '{s}'"))),
        };
        Ok(scheme)
    }
}

impl Serialize for WeightScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for WeightScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    /// Weighted Hájek-type ratio estimator.
    Hajek,
    /// Outcome-augmented estimator for the equipoise estimands.
    Augmented,
    /// Doubly-robust estimator for ATE (including trimmed ATE), ATT and ATC.
    DoublyRobust,
}

impl Flavor {
    /// The outcome-augmented flavor appropriate for `scheme`.
    pub fn augmented_for(scheme: &WeightScheme) -> Option<Flavor> {
        match scheme {
            WeightScheme::Overlap | WeightScheme::Matching | WeightScheme::Entropy => Some(Flavor::Augmented),
            WeightScheme::Ate | WeightScheme::Att | WeightScheme::Atc | WeightScheme::TrimmedAte(_) => {
                Some(Flavor::DoublyRobust)
            }
            WeightScheme::TruncatedAte(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Hajek => "hajek",
            Flavor::Augmented => "augmented",
            Flavor::DoublyRobust => "doubly-robust",
        }
    }
}

/// Estimate, sandwich inference and weight diagnostics for one
/// (scheme, flavor) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WateResult {
    pub estimand: WeightScheme,
    pub flavor: Flavor,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub level: f64,
    pub ess_treated: f64,
    pub ess_control: f64,
    pub vi: f64,
    pub n_used: usize,
    pub variance_status: VarianceStatus,
    pub condition_number: f64,
}

/// A simulated sample together with both potential outcomes and the true
/// propensity scores.
#[derive(Debug, Clone)]
pub struct PotentialOutcomeSample {
    pub data: Dataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub e_true: Vec<f64>,
}

impl PotentialOutcomeSample {
    /// Unit-level effects `Y(1) − Y(0)`.
    pub fn tau(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }
}

/// CSV loading options.
#[derive(Debug, Clone, Default)]
pub struct CsvSpec {
    pub treatment: String,
    pub outcome: String,
    /// Empty means every column other than treatment and outcome.
    pub covariates: Vec<String>,
    /// Covariates read as categorical labels and expanded to indicator
    /// columns `name=level` (first level in sorted order is the reference).
    pub categorical: Vec<String>,
}

enum ColumnKind {
    Numeric(Vec<f64>),
    Indicators(Vec<(String, Vec<f64>)>),
}

/// Reads an RFC-4180 CSV with a header row.
pub fn load_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, spec)
}

/// As [`load_csv`], from any reader.
pub fn read_csv<R: std::io::Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
    };
    let zi = find(&spec.treatment)?;
    let yi = find(&spec.outcome)?;
    // No explicit covariates: every other column.
    let covariates: Vec<String> = if spec.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != zi && i != yi)
            .map(|(_, h)| h.trim().to_string())
            .collect()
    } else {
        spec.covariates.clone()
    };
    let cov_idx: Vec<usize> = covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    for c in &spec.categorical {
        if !covariates.contains(c) {
            return Err(Error::Schema(format!("categorical column '{c}' is not a listed covariate")));
        }
    }

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let n = records.len();

    let parse_num = |row: usize, col: &str, raw: &str| -> Result<f64> {
        let t = raw.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
            return Err(Error::Parse {
                row: row + 1,
                column: col.to_string(),
                message: "missing value".into(),
            });
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            row: row + 1,
            column: col.to_string(),
            message: format!("'{t}' is not numeric"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                row: row + 1,
                column: col.to_string(),
                message: format!("'{t}' is not finite"),
            });
        }
        Ok(v)
    };

    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (r, rec) in records.iter().enumerate() {
        let zv = parse_num(r, &spec.treatment, rec.get(zi).unwrap_or(""))?;
        if zv == 0.0 {
            z.push(false);
        } else if zv == 1.0 {
            z.push(true);
        } else {
            return Err(Error::DegenerateData(format!(
                "treatment value {zv} at row {} is not 0 or 1",
                r + 1
            )));
        }
        y.push(parse_num(r, &spec.outcome, rec.get(yi).unwrap_or(""))?);
    }

    let mut columns = Vec::with_capacity(cov_idx.len());
    for (name, &ci) in covariates.iter().zip(&cov_idx) {
        if spec.categorical.contains(name) {
            let mut labels = Vec::with_capacity(n);
            for (r, rec) in records.iter().enumerate() {
                let t = rec.get(ci).unwrap_or("").trim();
                if t.is_empty() || t.eq_ignore_ascii_case("na") {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: name.clone(),
                        message: "missing value".into(),
                    });
                }
                labels.push(t.to_string());
            }
            let levels: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
            let indicators = levels
                .iter()
                .skip(1)
                .map(|lvl| {
                    let col = labels.iter().map(|l| if l == lvl { 1.0 } else { 0.0 }).collect();
                    (format!("{name}={lvl}"), col)
                })
                .collect();
            columns.push(ColumnKind::Indicators(indicators));
        } else {
            let col = records
                .iter()
                .enumerate()
                .map(|(r, rec)| parse_num(r, name, rec.get(ci).unwrap_or("")))
                .collect::<Result<Vec<f64>>>()?;
            columns.push(ColumnKind::Numeric(col));
        }
    }

    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (name, kind) in covariates.iter().zip(columns) {
        match kind {
            ColumnKind::Numeric(c) => {
                names.push(name.clone());
                cols.push(c);
            }
            ColumnKind::Indicators(list) => {
                for (nm, c) in list {
                    names.push(nm);
                    cols.push(c);
                }
            }
        }
    }
    let cov = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Dataset::new(z, y, cov, names)
}

/// Writes the dataset (without the intercept) as CSV. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>, treatment: &str, outcome: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![treatment.to_string(), outcome.to_string()];
    header.extend(d.names().iter().skip(1).cloned());
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![if d.z()[i] { "1".to_string() } else { "0".to_string() }, d.y()[i].to_string()];
        for j in 1..d.ncols() {
            rec.push(d.x()[(i, j)].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
