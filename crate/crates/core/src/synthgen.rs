//! Synthetic choice datasets: covariates, generative choice probabilities,
//! simulated choices and their aggregation into empirical shares.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::rng::{Domain, Stream};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("covariate table must be non-empty and finite: {0}")]
    InvalidTable(String),
    #[error("row {row}: probabilities must lie in [0, 1] and sum to 1 (sum = {sum})")]
    NotAProbabilityVector { row: usize, sum: f64 },
    #[error("gave up after {attempts} row regenerations (limit {limit})")]
    RegenerationLimit { attempts: usize, limit: usize },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// J rows of r explanatory variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    values: DMatrix<f64>,
}

impl CovariateTable {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(SynthError::InvalidTable("need at least one row and column".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(SynthError::InvalidTable(format!("entry ({row}, x{col}) is not finite")));
        }
        Ok(CovariateTable { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != r) {
            return Err(SynthError::InvalidTable("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), r, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Observed choice shares, one column per alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProbabilities {
    shares: DMatrix<f64>,
    /// Choice draws per row; unknown when loaded from a CSV.
    replicates: Option<u32>,
}

impl EmpiricalProbabilities {
    pub fn new(shares: DMatrix<f64>, replicates: Option<u32>) -> Result<Self> {
        for (row, values) in shares.row_iter().enumerate() {
            let sum: f64 = values.iter().sum();
            let in_range = values.iter().all(|p| (0.0..=1.0).contains(p));
            if !in_range || (shares.ncols() >= 2 && (sum - 1.0).abs() > 1e-12) {
                return Err(SynthError::NotAProbabilityVector { row, sum });
            }
        }
        Ok(EmpiricalProbabilities { shares, replicates })
    }

    pub fn shares(&self) -> &DMatrix<f64> {
        &self.shares
    }

    pub fn alternatives(&self) -> usize {
        self.shares.ncols()
    }

    pub fn replicates(&self) -> Option<u32> {
        self.replicates
    }

    pub fn column(&self, alternative: usize) -> Vec<f64> {
        self.shares.column(alternative).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Two alternatives, logit of a linear-plus-interactions utility.
    BinaryLogit,
    /// Two alternatives, ratio of two nonlinear utilities.
    ComplexFractional,
}

impl Scenario {
    pub fn covariate_count(self) -> usize {
        match self {
            Scenario::BinaryLogit => 5,
            Scenario::ComplexFractional => 40,
        }
    }

    pub fn covariate_range(self) -> (f64, f64) {
        match self {
            Scenario::BinaryLogit => (-1.0, 1.0),
            Scenario::ComplexFractional => (0.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub scenario: Scenario,
    pub rows: usize,
    pub replicates: u32,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(SynthError::InvalidConfig("J must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(SynthError::InvalidConfig("R must be at least 1".into()));
        }
        Ok(())
    }

    fn expect(&self, scenario: Scenario) -> Result<()> {
        self.validate()?;
        if self.scenario != scenario {
            return Err(SynthError::InvalidConfig(format!("expected scenario {scenario:?}, got {:?}", self.scenario)));
        }
        Ok(())
    }
}

/// Utility of the binary scenario; `x` holds the five covariates in order.
pub fn binary_utility(x: &[f64]) -> f64 {
    2.0 * x[0] + 3.0 * x[1] + 0.5 * x[2] * x[3] + x[2] * x[4]
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Draws the binary-logit covariates and the probability of alternative 0.
pub fn gen_binary(config: &GeneratorConfig) -> Result<(CovariateTable, Vec<f64>)> {
    config.expect(Scenario::BinaryLogit)?;
    let (lo, hi) = Scenario::BinaryLogit.covariate_range();
    let mut values = DMatrix::zeros(config.rows, 5);
    let mut probs = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        let mut stream = Stream::new(config.seed, Domain::Covariates, i as u64);
        let x: Vec<f64> = (0..5).map(|_| stream.uniform(lo, hi)).collect();
        for (j, v) in x.iter().enumerate() {
            values[(i, j)] = *v;
        }
        probs.push(logistic(binary_utility(&x)));
    }
    Ok((CovariateTable::new(values)?, probs))
}

/// Utilities of the complex scenario over the 40 covariates.
pub fn complex_utilities(x: &[f64]) -> (f64, f64) {
    let v1 = 0.5 * x[31].powi(2) + x[33].abs().sqrt() + x[35].powi(3) + 2.0 * x[37].ln() + 4.0 * x[39].exp();
    let v2 = 0.8 * x[21].sin() + 0.6 * x[22].cos() + 0.4 * x[23].tanh() + 0.2 * x[24].exp();
    (v1, v2)
}

/// `(v1, v2) / (v1 + v2)` with saturation when exactly one utility is +∞.
/// `None` marks a row that cannot yield valid shares.
pub fn fractional_shares(v1: f64, v2: f64) -> Option<(f64, f64)> {
    if v1.is_nan() || v2.is_nan() || v1 == f64::NEG_INFINITY || v2 == f64::NEG_INFINITY {
        return None;
    }
    match (v1.is_infinite(), v2.is_infinite()) {
        (true, true) => return None,
        (true, false) => return Some((1.0, 0.0)),
        (false, true) => return Some((0.0, 1.0)),
        _ => {}
    }
    let total = v1 + v2;
    if total <= 0.0 || v1 < 0.0 || v2 < 0.0 {
        return None;
    }
    if total.is_infinite() {
        // both finite but the sum overflowed
        let (a, b) = (v1 / 2.0, v2 / 2.0);
        return Some((a / (a + b), b / (a + b)));
    }
    Some((v1 / total, v2 / total))
}

#[derive(Debug, Clone)]
pub struct ComplexDraw {
    pub covariates: CovariateTable,
    /// J × 2 generative shares.
    pub probabilities: DMatrix<f64>,
    /// Rows redrawn because their utilities gave no valid shares.
    pub regenerated: usize,
}

pub fn gen_complex(config: &GeneratorConfig) -> Result<ComplexDraw> {
    config.expect(Scenario::ComplexFractional)?;
    let r = Scenario::ComplexFractional.covariate_count();
    let (lo, hi) = Scenario::ComplexFractional.covariate_range();
    let limit = 1000 * config.rows;
    let mut values = DMatrix::zeros(config.rows, r);
    let mut probabilities = DMatrix::zeros(config.rows, 2);
    let mut regenerated = 0;
    for i in 0..config.rows {
        let mut stream = Stream::new(config.seed, Domain::Covariates, i as u64);
        loop {
            let x: Vec<f64> = (0..r).map(|_| stream.uniform(lo, hi)).collect();
            let (v1, v2) = complex_utilities(&x);
            if let Some((p1, p2)) = fractional_shares(v1, v2) {
                for (j, v) in x.iter().enumerate() {
                    values[(i, j)] = *v;
                }
                probabilities[(i, 0)] = p1;
                probabilities[(i, 1)] = p2;
                break;
            }
            regenerated += 1;
            if regenerated > limit {
                return Err(SynthError::RegenerationLimit { attempts: regenerated, limit });
            }
        }
    }
    if regenerated > 0 {
        log::info!("complex scenario: regenerated {regenerated} rows");
    }
    Ok(ComplexDraw { covariates: CovariateTable::new(values)?, probabilities, regenerated })
}

/// Covariates plus the J × A generative probabilities for either scenario.
pub fn true_probabilities(config: &GeneratorConfig) -> Result<(CovariateTable, DMatrix<f64>)> {
    match config.scenario {
        Scenario::BinaryLogit => {
            let (table, p) = gen_binary(config)?;
            let probs = DMatrix::from_fn(p.len(), 2, |i, a| if a == 0 { p[i] } else { 1.0 - p[i] });
            Ok((table, probs))
        }
        Scenario::ComplexFractional => {
            let draw = gen_complex(config)?;
            Ok((draw.covariates, draw.probabilities))
        }
    }
}

/// Simulates `replicates` categorical choices per row and returns the shares.
pub fn draw_and_aggregate(true_probs: &DMatrix<f64>, replicates: u32, seed: u64) -> Result<EmpiricalProbabilities> {
    if replicates == 0 {
        return Err(SynthError::InvalidConfig("R must be at least 1".into()));
    }
    let alternatives = true_probs.ncols();
    let mut shares = DMatrix::zeros(true_probs.nrows(), alternatives);
    for (i, row) in true_probs.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::NotAProbabilityVector { row: i, sum });
        }
        let cumulative: Vec<f64> = row
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut counts = vec![0u32; alternatives];
        let mut stream = Stream::new(seed, Domain::Choices, i as u64);
        for _ in 0..replicates {
            let u = stream.next_f64();
            // zero-probability alternatives are never chosen
            let pick = cumulative
                .iter()
                .zip(row.iter())
                .position(|(c, p)| *p > 0.0 && u < *c)
                .unwrap_or_else(|| row.iter().rposition(|p| *p > 0.0).unwrap_or(alternatives - 1));
            counts[pick] += 1;
        }
        for (a, c) in counts.iter().enumerate() {
            shares[(i, a)] = f64::from(*c) / f64::from(replicates);
        }
    }
    EmpiricalProbabilities::new(shares, Some(replicates))
}

/// An aggregated dataset as exchanged through `dataset.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariates: CovariateTable,
    pub observed: EmpiricalProbabilities,
}

impl Dataset {
    pub fn generate(config: &GeneratorConfig, choice_seed: u64) -> Result<Self> {
        let (covariates, probs) = true_probabilities(config)?;
        let observed = draw_and_aggregate(&probs, config.replicates, choice_seed)?;
        Ok(Dataset { covariates, observed })
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let r = self.covariates.cols();
        let a = self.observed.alternatives();
        let header: Vec<String> = (0..r).map(|j| format!("x{j}")).chain((0..a).map(|j| format!("p{j}"))).collect();
        w.write_record(&header)?;
        for i in 0..self.covariates.rows() {
            let record: Vec<String> = (0..r)
                .map(|j| self.covariates.get(i, j).to_string())
                .chain((0..a).map(|j| self.observed.shares()[(i, j)].to_string()))
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let header = rd.headers()?.clone();
        let r = header.iter().take_while(|h| h.starts_with('x')).count();
        let a = header.len() - r;
        for (j, h) in header.iter().enumerate() {
            let expected = if j < r { format!("x{j}") } else { format!("p{}", j - r) };
            if h != expected {
                return Err(SynthError::Format(format!("header column {j} is `{h}`, expected `{expected}`")));
            }
        }
        let mut rows = Vec::new();
        for record in rd.records() {
            let record = record?;
            let values: std::result::Result<Vec<f64>, _> = record.iter().map(|s| s.trim().parse::<f64>()).collect();
            rows.push(values.map_err(|e| SynthError::Format(e.to_string()))?);
        }
        if rows.is_empty() || a == 0 {
            return Err(SynthError::Format("dataset needs rows and at least one p column".into()));
        }
        let covariates = CovariateTable::new(DMatrix::from_fn(rows.len(), r, |i, j| rows[i][j]))?;
        let shares = DMatrix::from_fn(rows.len(), a, |i, j| rows[i][r + j]);
        Ok(Dataset { covariates, observed: EmpiricalProbabilities::new(shares, None)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(scenario: Scenario, rows: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig { scenario, rows, replicates: 100, seed }
    }

    #[test]
    fn binary_utility_examples() {
        assert_eq!(logistic(binary_utility(&[0.0; 5])), 0.5);
        let v = binary_utility(&[1.0; 5]);
        assert_eq!(v, 6.5);
        assert_eq!(logistic(v), 1.0 / (1.0 + (-6.5f64).exp()));
    }

    #[test]
    fn binary_is_seed_deterministic() {
        let c = config(Scenario::BinaryLogit, 50, 11);
        let (t1, p1) = gen_binary(&c).unwrap();
        let (t2, p2) = gen_binary(&c).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        assert!(t1.values().iter().all(|v| (-1.0..1.0).contains(v)));
        let (t3, _) = gen_binary(&config(Scenario::BinaryLogit, 50, 12)).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn complex_all_ones_row() {
        // hand-computed: V1 = 0.5 + 1 + 1 + 0 + 4e, V2 = 0.8 sin1 + 0.6 cos1 + 0.4 tanh1 + 0.2e
        let (v1, v2) = complex_utilities(&[1.0; 40]);
        assert!((v1 - 13.373_127_3).abs() < 1e-6, "{v1}");
        assert!((v2 - 1.845_652_2).abs() < 1e-6, "{v2}");
        let (p1, p2) = fractional_shares(v1, v2).unwrap();
        assert!((p1 - 0.8787).abs() < 1e-4);
        assert!((p1 + p2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn complex_large_exponent_saturates_in_double_precision() {
        let mut x = [1.0; 40];
        x[39] = 100.0;
        let (v1, v2) = complex_utilities(&x);
        assert!(v1.is_finite()); // e^100 is representable
        let (p1, p2) = fractional_shares(v1, v2).unwrap();
        assert_eq!(p1, 1.0);
        assert!(p2 < 1e-40);
    }

    #[test]
    fn share_saturation_rules() {
        assert_eq!(fractional_shares(f64::INFINITY, 3.0), Some((1.0, 0.0)));
        assert_eq!(fractional_shares(2.0, f64::INFINITY), Some((0.0, 1.0)));
        assert_eq!(fractional_shares(f64::INFINITY, f64::INFINITY), None);
        assert_eq!(fractional_shares(-1.0, 0.5), None);
        assert_eq!(fractional_shares(-1.0, -0.5), None);
        assert_eq!(fractional_shares(f64::NEG_INFINITY, 1.0), None);
        let (a, b) = fractional_shares(1e308, 1e308).unwrap();
        assert_eq!((a, b), (0.5, 0.5));
    }

    #[test]
    fn complex_rows_sum_to_one() {
        let draw = gen_complex(&config(Scenario::ComplexFractional, 200, 3)).unwrap();
        assert_eq!(draw.covariates.cols(), 40);
        for row in draw.probabilities.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn scenario_mismatch_and_zero_sizes_rejected() {
        assert!(gen_binary(&config(Scenario::ComplexFractional, 5, 1)).is_err());
        assert!(gen_binary(&config(Scenario::BinaryLogit, 0, 1)).is_err());
        let mut c = config(Scenario::BinaryLogit, 5, 1);
        c.replicates = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_and_single_draw_aggregation() {
        let probs = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.3, 0.7]);
        let o = draw_and_aggregate(&probs, 57, 9).unwrap();
        assert_eq!(o.shares()[(0, 0)], 1.0);
        assert_eq!(o.shares()[(1, 1)], 1.0);
        let single = draw_and_aggregate(&probs, 1, 9).unwrap();
        assert!(single.shares().iter().all(|s| *s == 0.0 || *s == 1.0));
    }

    #[test]
    fn aggregation_rejects_non_distributions() {
        let bad = DMatrix::from_row_slice(1, 2, &[0.6, 0.6]);
        assert!(matches!(draw_and_aggregate(&bad, 10, 0), Err(SynthError::NotAProbabilityVector { row: 0, .. })));
    }

    #[test]
    fn fair_coin_concentration() {
        // |share - 0.5| <= 0.02 at R = 10000 is a 4-sigma event per seed
        let probs = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let hits = (0..100u64)
            .filter(|&seed| {
                let o = draw_and_aggregate(&probs, 10_000, seed).unwrap();
                (o.shares()[(0, 0)] - 0.5).abs() <= 0.02
            })
            .count();
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn law_of_large_numbers() {
        let (_, probs) = true_probabilities(&config(Scenario::BinaryLogit, 100, 4)).unwrap();
        let err = |r: u32| {
            let o = draw_and_aggregate(&probs, r, 5).unwrap();
            (o.shares() - &probs).abs().max()
        };
        let (e100, e10k) = (err(100), err(10_000));
        assert!(e100 < 0.25, "{e100}");
        assert!(e10k < 0.025, "{e10k}");
        assert!(e10k < e100);
    }

    #[test]
    fn csv_round_trip() {
        let c = config(Scenario::BinaryLogit, 20, 2);
        let d = Dataset::generate(&c, 3).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,x2,x3,x4,p0,p1\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.covariates, d.covariates);
        assert_eq!(back.observed.shares(), d.observed.shares());
    }

    proptest! {
        #[test]
        fn shares_are_valid_multiples_of_one_over_r(
            p in 0.0f64..=1.0, r in 1u32..300, seed in any::<u64>()
        ) {
            let probs = DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - p, p]);
            let o = draw_and_aggregate(&probs, r, seed).unwrap();
            for row in o.shares().row_iter() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                for s in row.iter() {
                    prop_assert!((0.0..=1.0).contains(s));
                    let k = s * f64::from(r);
                    prop_assert!((k - k.round()).abs() < 1e-9);
                }
            }
        }
    }
}
