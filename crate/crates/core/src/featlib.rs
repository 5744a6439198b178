//! Library of base functions: the declared build plan and the evaluated
//! J × k design matrix.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exprlib::{eval_expr, parse_expr, EvalErrorKind, Expr, ParseError};
use crate::sparsesolve::CoefficientMatrix;
use crate::synthgen::CovariateTable;

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("empty library")]
    EmptyLibrary,
    #[error("entry {entry} (`{expr}`): {source}")]
    Parse { entry: usize, expr: String, source: ParseError },
    #[error("entry {entry} (`{expr}`): {message}")]
    InvalidEntry { entry: usize, expr: String, message: String },
    #[error("entry {entry}: {space:?} target {target} out of range (limit {limit})")]
    IndexOutOfRange { entry: usize, target: usize, space: Space, limit: usize },
    #[error("column `{label}` row {row}: {kind}")]
    Evaluation { label: String, row: usize, kind: EvalErrorKind },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed library csv: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LibraryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Covariate,
    Library,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    None,
    UnitL2,
}

/// Target indices as written in a config: a literal list or a half-open range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    List(Vec<usize>),
    Range {
        start: usize,
        end: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exclude: Vec<usize>,
    },
}

impl TargetSpec {
    pub fn indices(&self) -> Vec<usize> {
        match self {
            TargetSpec::List(v) => v.clone(),
            TargetSpec::Range { start, end, exclude } => (*start..*end).filter(|i| !exclude.contains(i)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryConfig {
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSpec>,
    #[serde(default = "default_space")]
    pub space: Space,
}

fn default_space() -> Space {
    Space::Covariate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySpecConfig {
    #[serde(default)]
    pub name_base: usize,
    pub entries: Vec<EntryConfig>,
}

/// One line of the build plan. A template with a slot is applied once per
/// target; a slot-free expression contributes a single column.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub source: String,
    pub template: Expr,
    pub targets: Vec<usize>,
    pub space: Space,
}

impl LibraryEntry {
    pub fn column_count(&self) -> usize {
        if self.template.has_slot() {
            self.targets.len()
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LibrarySpecConfig", into = "LibrarySpecConfig")]
pub struct LibrarySpec {
    /// Number used for the first column's `f` name.
    pub name_base: usize,
    pub entries: Vec<LibraryEntry>,
}

impl TryFrom<LibrarySpecConfig> for LibrarySpec {
    type Error = LibraryError;

    fn try_from(config: LibrarySpecConfig) -> Result<Self> {
        let entries = config
            .entries
            .into_iter()
            .enumerate()
            .map(|(entry, e)| {
                let template = parse_expr(&e.expr).map_err(|source| LibraryError::Parse {
                    entry,
                    expr: e.expr.clone(),
                    source,
                })?;
                let targets = e.targets.as_ref().map(TargetSpec::indices);
                let invalid =
                    |message: &str| LibraryError::InvalidEntry { entry, expr: e.expr.clone(), message: message.into() };
                let targets = match (template.has_slot(), targets) {
                    (true, Some(t)) => t,
                    (true, None) => return Err(invalid("template with slot `x` needs targets")),
                    (false, None) => Vec::new(),
                    (false, Some(_)) => return Err(invalid("targets given but the expression has no slot `x`")),
                };
                Ok(LibraryEntry { source: e.expr, template, targets, space: e.space })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LibrarySpec { name_base: config.name_base, entries })
    }
}

impl From<LibrarySpec> for LibrarySpecConfig {
    fn from(spec: LibrarySpec) -> Self {
        LibrarySpecConfig {
            name_base: spec.name_base,
            entries: spec
                .entries
                .into_iter()
                .map(|e| EntryConfig {
                    targets: e.template.has_slot().then(|| TargetSpec::List(e.targets)),
                    expr: e.source,
                    space: e.space,
                })
                .collect(),
        }
    }
}

impl LibrarySpec {
    pub fn column_count(&self) -> usize {
        self.entries.iter().map(LibraryEntry::column_count).sum()
    }

    fn from_entries(name_base: usize, entries: Vec<EntryConfig>) -> Self {
        LibrarySpec::try_from(LibrarySpecConfig { name_base, entries }).expect("built-in library specs parse")
    }

    /// The ten-function library of the binary experiment, named f1..f10.
    /// f9 is the generative utility and f10 its logistic transform.
    pub fn binary_logit() -> Self {
        let exprs = [
            "x0",
            "x1",
            "x2",
            "x3",
            "x4",
            "x1 * x2",
            "x2 * x3",
            "x2 * x4",
            "2 * x0 + 3 * x1 + 0.5 * x2 * x3 + x2 * x4",
            "1 / (1 + exp(-2 * x0 - 3 * x1 - 0.5 * x2 * x3 - x2 * x4))",
        ];
        let entries =
            exprs.iter().map(|e| EntryConfig { expr: (*e).into(), targets: None, space: Space::Covariate }).collect();
        Self::from_entries(1, entries)
    }

    /// The compositional library over `r` covariates: powers, roots and
    /// trigonometric/hyperbolic transforms of every covariate, then a
    /// protected logarithm of the first `8r` library columns.
    pub fn compositional(r: usize) -> Self {
        let all = || TargetSpec::Range { start: 0, end: r, exclude: vec![] };
        let cov = |expr: &str, targets: TargetSpec| EntryConfig {
            expr: expr.into(),
            targets: Some(targets),
            space: Space::Covariate,
        };
        let entries = vec![
            cov("x", all()),
            cov("power(x, 2)", all()),
            cov("power(x, 3)", all()),
            cov("power(x, 4)", all()),
            cov("power(x, 5)", all()),
            cov("sqrt(abs(x))", all()),
            cov("arcsin(clip(x, -1, 1)) / (clip(x, -1, 1) + 1e-9)", all()),
            cov(
                "arccos(clip(x, -1, 1)) / (clip(x, -1, 1) + 1e-9)",
                TargetSpec::Range { start: 0, end: r, exclude: vec![r / 2] },
            ),
            cov("arctan(x) + 1e-9", all()),
            cov("cosh(clip(x, -700, 700)) - 1", all()),
            cov("tanh(x)", all()),
            EntryConfig {
                expr: "log(clip(x, 1e-9, inf)) / (clip(x, 1e-9, inf) + 1e-9)".into(),
                targets: Some(TargetSpec::Range { start: 0, end: 8 * r, exclude: vec![] }),
                space: Space::Library,
            },
        ];
        Self::from_entries(0, entries)
    }
}

/// The evaluated library, J × k, stored column-scaled when `scaling` is
/// `UnitL2` (column j is the raw column times `scale_factors[j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
    labels: Vec<String>,
    scaling: Scaling,
    scale_factors: Vec<f64>,
    original_norms: Vec<f64>,
    zero_columns: Vec<usize>,
    duplicate_pairs: Vec<(usize, usize)>,
}

impl LibraryMatrix {
    /// Wraps an already evaluated matrix, e.g. for solver tests.
    pub fn from_matrix(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(LibraryError::DimensionMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        if values.ncols() == 0 {
            return Err(LibraryError::EmptyLibrary);
        }
        let names = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        Ok(Self::assemble(values, names, labels, Scaling::None))
    }

    pub fn unlabeled(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.ncols()).map(|j| format!("c{j}")).collect();
        Self::from_matrix(values, labels)
    }

    fn assemble(mut values: DMatrix<f64>, names: Vec<String>, labels: Vec<String>, scaling: Scaling) -> Self {
        let k = values.ncols();
        let original_norms: Vec<f64> = (0..k).map(|j| values.column(j).norm()).collect();
        let zero_columns: Vec<usize> = (0..k).filter(|&j| values.column(j).iter().all(|v| *v == 0.0)).collect();
        let scale_factors: Vec<f64> = match scaling {
            Scaling::None => vec![1.0; k],
            Scaling::UnitL2 => {
                original_norms.iter().map(|n| if *n > 0.0 && n.is_finite() { 1.0 / n } else { 1.0 }).collect()
            }
        };
        if scaling == Scaling::UnitL2 {
            for (j, s) in scale_factors.iter().enumerate() {
                values.column_mut(j).scale_mut(*s);
            }
        }
        let duplicate_pairs = find_duplicates(&values);
        for j in &zero_columns {
            log::warn!("library column {} (`{}`) is identically zero", names[*j], labels[*j]);
        }
        if !duplicate_pairs.is_empty() {
            log::info!("library has {} exact duplicate column pairs", duplicate_pairs.len());
        }
        LibraryMatrix { values, names, labels, scaling, scale_factors, original_norms, zero_columns, duplicate_pairs }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn scale_factors(&self) -> &[f64] {
        &self.scale_factors
    }

    pub fn original_norms(&self) -> &[f64] {
        &self.original_norms
    }

    pub fn zero_columns(&self) -> &[usize] {
        &self.zero_columns
    }

    pub fn duplicate_pairs(&self) -> &[(usize, usize)] {
        &self.duplicate_pairs
    }

    /// Converts coefficients on the stored (possibly scaled) columns into
    /// coefficients on the raw expressions.
    pub fn to_original_units(&self, coefficients: &[f64]) -> Vec<f64> {
        coefficients.iter().zip(&self.scale_factors).map(|(c, s)| c * s).collect()
    }

    pub fn predict(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.cols() {
            return Err(LibraryError::DimensionMismatch(format!(
                "{} coefficients for {} columns",
                coefficients.len(),
                self.cols()
            )));
        }
        let z = nalgebra::DVector::from_column_slice(coefficients);
        Ok((&self.values * z).iter().copied().collect())
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.labels)?;
        for row in self.values.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let labels: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for record in rd.records() {
            let record = record?;
            for field in record.iter() {
                data.push(field.parse::<f64>().map_err(|e| LibraryError::Format(e.to_string()))?);
            }
            rows += 1;
        }
        if data.len() != rows * labels.len() {
            return Err(LibraryError::Format("ragged rows".into()));
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, labels.len(), &data), labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn find_duplicates(values: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for j in 0..values.ncols() {
        let key: Vec<u64> = values.column(j).iter().map(|v| v.to_bits()).collect();
        match seen.get(&key) {
            Some(&first) => pairs.push((first, j)),
            None => {
                seen.insert(key, j);
            }
        }
    }
    pairs
}

/// Evaluates the plan column by column. Library-space targets see every
/// column appended by earlier entries.
pub fn build_library(spec: &LibrarySpec, covariates: &CovariateTable, scaling: Scaling) -> Result<LibraryMatrix> {
    if spec.column_count() == 0 {
        return Err(LibraryError::EmptyLibrary);
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(spec.column_count());
    let mut exprs: Vec<Expr> = Vec::with_capacity(spec.column_count());
    for (entry_index, entry) in spec.entries.iter().enumerate() {
        let planned: Vec<(Expr, Expr)> = if entry.template.has_slot() {
            entry
                .targets
                .iter()
                .map(|&t| {
                    let (limit, slot) = match entry.space {
                        Space::Covariate => (covariates.cols(), Expr::Var(t)),
                        Space::Library => (columns.len(), Expr::Column(t)),
                    };
                    if t >= limit {
                        return Err(LibraryError::IndexOutOfRange {
                            entry: entry_index,
                            target: t,
                            space: entry.space,
                            limit,
                        });
                    }
                    let expr = entry.template.fill_slot(&slot);
                    let expanded = expand(&expr, &exprs);
                    Ok((expr, expanded))
                })
                .collect::<Result<_>>()?
        } else {
            if let Some(c) = entry.template.max_column().filter(|&c| c >= columns.len()) {
                return Err(LibraryError::IndexOutOfRange {
                    entry: entry_index,
                    target: c,
                    space: Space::Library,
                    limit: columns.len(),
                });
            }
            let expanded = expand(&entry.template, &exprs);
            vec![(entry.template.clone(), expanded)]
        };
        let evaluated: Vec<Vec<f64>> = planned
            .par_iter()
            .map(|(expr, expanded)| {
                eval_expr(expr, covariates, &columns).map_err(|e| LibraryError::Evaluation {
                    label: expanded.to_string(),
                    row: e.row,
                    kind: e.kind,
                })
            })
            .collect::<Result<_>>()?;
        columns.extend(evaluated);
        exprs.extend(planned.into_iter().map(|(_, expanded)| expanded));
    }
    let rows = covariates.rows();
    let values = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
    let names = (0..columns.len()).map(|j| format!("f{}", j + spec.name_base)).collect();
    let labels = exprs.iter().map(Expr::to_string).collect();
    Ok(LibraryMatrix::assemble(values, names, labels, scaling))
}

fn expand(expr: &Expr, built: &[Expr]) -> Expr {
    expr.substitute(&|e| match e {
        Expr::Column(i) => Some(built[*i].clone()),
        _ => None,
    })
}

/// Linear reconstruction `F · ζ[:, a]`, unclamped.
pub fn reconstruct(library: &LibraryMatrix, coefficients: &CoefficientMatrix, alternative: usize) -> Result<Vec<f64>> {
    if coefficients.rows() != library.cols() {
        return Err(LibraryError::DimensionMismatch(format!(
            "coefficient matrix has {} rows, library has {} columns",
            coefficients.rows(),
            library.cols()
        )));
    }
    if alternative >= coefficients.alternatives() {
        return Err(LibraryError::DimensionMismatch(format!(
            "alternative {alternative} out of range ({} solved)",
            coefficients.alternatives()
        )));
    }
    library.predict(&coefficients.column(alternative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_binary, gen_complex, GeneratorConfig, Scenario};

    fn binary_table(rows: usize) -> CovariateTable {
        let c = GeneratorConfig { scenario: Scenario::BinaryLogit, rows, replicates: 1, seed: 5 };
        gen_binary(&c).unwrap().0
    }

    fn complex_table(rows: usize) -> CovariateTable {
        let c = GeneratorConfig { scenario: Scenario::ComplexFractional, rows, replicates: 1, seed: 5 };
        gen_complex(&c).unwrap().covariates
    }

    #[test]
    fn binary_library_has_ten_named_columns() {
        let spec = LibrarySpec::binary_logit();
        assert_eq!(spec.column_count(), 10);
        let lib = build_library(&spec, &binary_table(30), Scaling::None).unwrap();
        assert_eq!(lib.cols(), 10);
        let names: Vec<String> = (1..=10).map(|i| format!("f{i}")).collect();
        assert_eq!(lib.names(), names.as_slice());
        assert_eq!(lib.labels()[6], "x2 * x3");
    }

    #[test]
    fn compositional_library_count() {
        let spec = LibrarySpec::compositional(40);
        assert_eq!(spec.column_count(), 759);
        let lib = build_library(&spec, &complex_table(25), Scaling::None).unwrap();
        assert_eq!(lib.cols(), 759);
        assert_eq!(lib.names().last().unwrap(), "f758");
        // the log block starts after the 439 covariate-space columns
        assert!(lib.labels()[439].starts_with("log(clip(x0, 1e-9, inf))"));
        // arccos skips covariate r/2
        assert!(!lib.labels()[280..319].iter().any(|l| l.contains("x20,")));
    }

    #[test]
    fn empty_spec_is_an_error() {
        let spec = LibrarySpec { name_base: 0, entries: vec![] };
        assert!(matches!(build_library(&spec, &binary_table(3), Scaling::None), Err(LibraryError::EmptyLibrary)));
    }

    #[test]
    fn out_of_range_and_forward_references() {
        let cfg: LibrarySpecConfig = serde_json::from_str(r#"{"entries":[{"expr":"x","targets":[0,7]}]}"#).unwrap();
        let spec = LibrarySpec::try_from(cfg).unwrap();
        assert!(matches!(
            build_library(&spec, &binary_table(3), Scaling::None),
            Err(LibraryError::IndexOutOfRange { target: 7, .. })
        ));
        let cfg: LibrarySpecConfig = serde_json::from_str(
            r#"{"entries":[{"expr":"x","targets":[0]},{"expr":"tanh(x)","targets":[1],"space":"library"}]}"#,
        )
        .unwrap();
        let spec = LibrarySpec::try_from(cfg).unwrap();
        assert!(matches!(
            build_library(&spec, &binary_table(3), Scaling::None),
            Err(LibraryError::IndexOutOfRange { target: 1, space: Space::Library, .. })
        ));
    }

    #[test]
    fn evaluation_errors_carry_label_and_row() {
        let cfg: LibrarySpecConfig = serde_json::from_str(r#"{"entries":[{"expr":"log(x)","targets":[0]}]}"#).unwrap();
        let spec = LibrarySpec::try_from(cfg).unwrap();
        let table = CovariateTable::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        match build_library(&spec, &table, Scaling::None) {
            Err(LibraryError::Evaluation { label, row, .. }) => {
                assert_eq!(label, "log(x0)");
                assert_eq!(row, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slot_and_target_consistency() {
        let bad: LibrarySpecConfig = serde_json::from_str(r#"{"entries":[{"expr":"x0","targets":[0]}]}"#).unwrap();
        assert!(LibrarySpec::try_from(bad).is_err());
        let bad: LibrarySpecConfig = serde_json::from_str(r#"{"entries":[{"expr":"x"}]}"#).unwrap();
        assert!(LibrarySpec::try_from(bad).is_err());
    }

    #[test]
    fn zero_and_duplicate_diagnostics() {
        let cfg: LibrarySpecConfig =
            serde_json::from_str(r#"{"entries":[{"expr":"x","targets":[0,0]},{"expr":"x0 - x0"}]}"#).unwrap();
        let lib = build_library(&LibrarySpec::try_from(cfg).unwrap(), &binary_table(4), Scaling::None).unwrap();
        assert_eq!(lib.duplicate_pairs(), &[(0, 1)]);
        assert_eq!(lib.zero_columns(), &[2]);
        assert_eq!(lib.cols(), 3);
    }

    #[test]
    fn unit_l2_scaling_keeps_norms() {
        let lib = build_library(&LibrarySpec::binary_logit(), &binary_table(40), Scaling::UnitL2).unwrap();
        for j in 0..lib.cols() {
            assert!((lib.values().column(j).norm() - 1.0).abs() < 1e-12);
            assert!((lib.original_norms()[j] * lib.scale_factors()[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_round_trip_of_reconstruction() {
        let table = binary_table(40);
        let raw = build_library(&LibrarySpec::binary_logit(), &table, Scaling::None).unwrap();
        let scaled = build_library(&LibrarySpec::binary_logit(), &table, Scaling::UnitL2).unwrap();
        let zeta_scaled: Vec<f64> = (0..10).map(|j| (j as f64 - 4.5) * 0.3).collect();
        let zeta_raw = scaled.to_original_units(&zeta_scaled);
        let a = scaled.predict(&zeta_scaled).unwrap();
        let b = raw.predict(&zeta_raw).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn labels_evaluate_back_to_their_columns() {
        let table = complex_table(12);
        let lib = build_library(&LibrarySpec::compositional(40), &table, Scaling::None).unwrap();
        for (j, label) in lib.labels().iter().enumerate() {
            let col = eval_expr(&parse_expr(label).unwrap(), &table, &[]).unwrap();
            for (i, v) in col.iter().enumerate() {
                let f = lib.values()[(i, j)];
                assert!((v - f).abs() <= 1e-12 * f.abs().max(1.0), "column {j} row {i}");
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let table = complex_table(10);
        let spec = LibrarySpec::compositional(40);
        let a = build_library(&spec, &table, Scaling::None).unwrap();
        let b = build_library(&spec, &table, Scaling::None).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn csv_dump_round_trip() {
        let lib = build_library(&LibrarySpec::binary_logit(), &binary_table(6), Scaling::None).unwrap();
        let mut buf = Vec::new();
        lib.write_csv(&mut buf).unwrap();
        let back = LibraryMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), lib.values());
        assert_eq!(back.labels(), lib.labels());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = LibrarySpec::compositional(40);
        let json = serde_json::to_string(&spec).unwrap();
        let back: LibrarySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
