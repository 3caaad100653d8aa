//! Tabular dataset model: covariates, a numeric outcome and a binary
//! treatment indicator, with CSV load/save and validation.
//!
//! Unit ids are opaque strings kept for reporting; all algorithmic code
//! works with integer row indices. Missing values are rejected outright:
//! every covariate and outcome cell must parse to a finite double.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numfmt::float17;

/// Validated rectangular dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    ids: Vec<String>,
    covariates: Vec<f64>,
    outcomes: Vec<f64>,
    treatment: Vec<bool>,
    n_cov: usize,
}

impl Dataset {
    /// Builds a dataset from columns, enforcing the structural invariants:
    /// at least two rows, at least one covariate, equal row lengths and no
    /// non-finite values.
    pub fn from_parts(
        ids: Vec<String>,
        covariate_rows: Vec<Vec<f64>>,
        outcomes: Vec<f64>,
        treatment: Vec<bool>,
    ) -> Result<Self> {
        let n = covariate_rows.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "dataset needs at least 2 rows, got {n}"
            )));
        }
        if ids.len() != n || outcomes.len() != n || treatment.len() != n {
            return Err(Error::Validation(format!(
                "column lengths disagree: {} ids, {} covariate rows, {} outcomes, {} treatment flags",
                ids.len(),
                n,
                outcomes.len(),
                treatment.len()
            )));
        }
        let n_cov = covariate_rows[0].len();
        if n_cov == 0 {
            return Err(Error::Validation(
                "dataset needs at least one covariate".into(),
            ));
        }
        let mut covariates = Vec::with_capacity(n * n_cov);
        for (i, row) in covariate_rows.iter().enumerate() {
            if row.len() != n_cov {
                return Err(Error::Validation(format!(
                    "covariate row {i} has {} entries, expected {n_cov}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite covariate value in row {i}"
                    )));
                }
            }
            covariates.extend_from_slice(row);
        }
        for (i, &y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite outcome value in row {i}"
                )));
            }
        }
        Ok(Dataset {
            ids,
            covariates,
            outcomes,
            treatment,
            n_cov,
        })
    }

    /// Convenience constructor with row indices as ids.
    pub fn with_index_ids(
        covariate_rows: Vec<Vec<f64>>,
        outcomes: Vec<f64>,
        treatment: Vec<bool>,
    ) -> Result<Self> {
        let ids = (0..covariate_rows.len()).map(|i| i.to_string()).collect();
        Self::from_parts(ids, covariate_rows, outcomes, treatment)
    }

    /// Number of rows.
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of covariates.
    pub fn n_cov(&self) -> usize {
        self.n_cov
    }

    /// Unit id for a row.
    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// Covariate row `i`.
    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_cov..(i + 1) * self.n_cov]
    }

    /// Outcome for row `i`.
    pub fn outcome(&self, i: usize) -> f64 {
        self.outcomes[i]
    }

    /// All outcomes in row order.
    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Whether row `i` is treated.
    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i]
    }

    /// Row indices of treated and control units, each sorted ascending.
    pub fn split_by_treatment(&self) -> (Vec<usize>, Vec<usize>) {
        let mut treated = Vec::new();
        let mut controls = Vec::new();
        for (i, &z) in self.treatment.iter().enumerate() {
            if z {
                treated.push(i);
            } else {
                controls.push(i);
            }
        }
        (treated, controls)
    }

    /// Errors unless the dataset has at least one treated and one control
    /// unit, the entry condition for every estimation routine.
    pub fn check_estimable(&self) -> Result<()> {
        let n_treated = self.treatment.iter().filter(|&&z| z).count();
        if n_treated == 0 {
            return Err(Error::Validation("dataset has no treated units".into()));
        }
        if n_treated == self.n() {
            return Err(Error::Validation("dataset has no control units".into()));
        }
        Ok(())
    }

    /// Per-covariate standard deviation over all rows (denominator `n`).
    pub fn covariate_sds(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let mut mean = vec![0.0; self.n_cov];
        for i in 0..self.n() {
            for (m, &v) in mean.iter_mut().zip(self.covariates(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; self.n_cov];
        for i in 0..self.n() {
            for ((s, &v), &m) in var.iter_mut().zip(self.covariates(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.into_iter().map(|s| (s / n).sqrt()).collect()
    }

    /// Returns a copy with every covariate divided by its full-sample
    /// standard deviation; constant columns are left unscaled.
    pub fn standardized_covariates(&self) -> Dataset {
        let sds = self.covariate_sds();
        let mut out = self.clone();
        for i in 0..out.n() {
            for (c, &sd) in (i * out.n_cov..(i + 1) * out.n_cov).zip(&sds) {
                if sd > 0.0 {
                    out.covariates[c] /= sd;
                }
            }
        }
        out
    }
}

/// Ground truth carried alongside simulated datasets.
#[derive(Debug, Clone)]
pub struct TruthInfo {
    /// Noiseless control outcome per unit.
    pub f0_values: Vec<f64>,
    /// Unit-level treatment effect per unit.
    pub tau_values: Vec<f64>,
    /// Standard deviation of the additive outcome noise.
    pub noise_sd: f64,
    /// Mean treatment effect over the treated rows of this realisation.
    pub satt: f64,
    /// Mean treatment effect over the treated population.
    pub population_att: f64,
}

impl TruthInfo {
    /// Assembles truth values for `data`, deriving the sample ATT from the
    /// per-unit effects so the consistency invariant holds by construction.
    pub fn new(
        data: &Dataset,
        f0_values: Vec<f64>,
        tau_values: Vec<f64>,
        noise_sd: f64,
        population_att: f64,
    ) -> Result<Self> {
        if f0_values.len() != data.n() || tau_values.len() != data.n() {
            return Err(Error::Validation(
                "truth vectors must have one entry per dataset row".into(),
            ));
        }
        let (treated, _) = data.split_by_treatment();
        if treated.is_empty() {
            return Err(Error::Validation(
                "truth info requires at least one treated unit".into(),
            ));
        }
        let satt = treated.iter().map(|&t| tau_values[t]).sum::<f64>() / treated.len() as f64;
        Ok(TruthInfo {
            f0_values,
            tau_values,
            noise_sd,
            satt,
            population_att,
        })
    }

    /// Checks the stored sample ATT against the per-unit effects.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let (treated, _) = data.split_by_treatment();
        let mean = treated.iter().map(|&t| self.tau_values[t]).sum::<f64>() / treated.len() as f64;
        if (mean - self.satt).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "stored sample ATT {} disagrees with mean treated effect {mean}",
                self.satt
            )));
        }
        Ok(())
    }
}

/// Column mapping for CSV input and output. Covariate columns are listed
/// explicitly; nothing is inferred from header contents.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub id: Option<String>,
}

/// Returns the header row of a CSV file, in file order.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_to_io)?;
    let headers = reader.headers().map_err(csv_to_io)?;
    Ok(headers.iter().map(str::to_owned).collect())
}

/// Loads a dataset from a UTF-8, comma-delimited CSV file with a header row.
///
/// Row numbers in error messages are 1-based file line numbers (the header
/// is line 1).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_to_io)?;
    let headers = reader.headers().map_err(csv_to_io)?.clone();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };

    if schema.covariates.is_empty() {
        return Err(Error::Schema(
            "schema must name at least one covariate column".into(),
        ));
    }
    let outcome_col = col(&schema.outcome)?;
    let treatment_col = col(&schema.treatment)?;
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let id_col = schema.id.as_deref().map(col).transpose()?;

    let mut ids = Vec::new();
    let mut covariate_rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut treatment = Vec::new();

    for record in reader.records() {
        let record = record.map_err(csv_to_io)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| Error::Parse {
                row: line,
                column: name.to_string(),
                detail: "missing cell".into(),
            })?;
            let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: name.to_string(),
                detail: format!("'{raw}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value '{raw}' in column '{name}' at row {line}"
                )));
            }
            Ok(value)
        };

        let mut row = Vec::with_capacity(cov_cols.len());
        for (idx, name) in cov_cols.iter().zip(&schema.covariates) {
            row.push(cell(*idx, name)?);
        }
        covariate_rows.push(row);
        outcomes.push(cell(outcome_col, &schema.outcome)?);

        let z = cell(treatment_col, &schema.treatment)?;
        if z == 0.0 {
            treatment.push(false);
        } else if z == 1.0 {
            treatment.push(true);
        } else {
            return Err(Error::Validation(format!(
                "treatment value {z} at row {line} is not 0 or 1"
            )));
        }

        ids.push(match id_col {
            Some(idx) => record.get(idx).unwrap_or_default().to_string(),
            None => (covariate_rows.len() - 1).to_string(),
        });
    }

    Dataset::from_parts(ids, covariate_rows, outcomes, treatment)
}

/// Writes a dataset as CSV using the schema's column names, with floats at
/// 17 significant digits so a reload reproduces the exact values.
pub fn save_csv(data: &Dataset, path: &Path, schema: &CsvSchema) -> Result<()> {
    if schema.covariates.len() != data.n_cov() {
        return Err(Error::Schema(format!(
            "schema names {} covariate columns, dataset has {}",
            schema.covariates.len(),
            data.n_cov()
        )));
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_to_io)?;
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &schema.id {
        header.push(id);
    }
    header.extend(schema.covariates.iter().map(String::as_str));
    header.push(&schema.outcome);
    header.push(&schema.treatment);
    writer.write_record(&header).map_err(csv_to_io)?;

    for i in 0..data.n() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        if schema.id.is_some() {
            record.push(data.id(i).to_string());
        }
        record.extend(data.covariates(i).iter().map(|&v| float17(v)));
        record.push(float17(data.outcome(i)));
        record.push(if data.is_treated(i) { "1" } else { "0" }.to_string());
        writer.write_record(&record).map_err(csv_to_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_to_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv error: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy_schema() -> CsvSchema {
        CsvSchema {
            outcome: "y".into(),
            treatment: "z".into(),
            covariates: vec!["x1".into(), "x2".into()],
            id: None,
        }
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_file("x1,x2,y,z\n0.0,1.0,2.5,1\n1.0,0.0,1.5,0\n2.0,2.0,3.5,0\n");
        let d = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.n_cov(), 2);
        assert_eq!(d.covariates(0), &[0.0, 1.0]);
        assert_eq!(d.outcome(2), 3.5);
        assert!(d.is_treated(0));
        assert!(!d.is_treated(1));
        let (treated, controls) = d.split_by_treatment();
        assert_eq!(treated, vec![0]);
        assert_eq!(controls, vec![1, 2]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_file("x1,y,z\n0.0,2.5,1\n1.0,1.5,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
        assert!(err.to_string().contains("x2"));
    }

    #[test]
    fn non_numeric_cell_is_parse_error_with_location() {
        let f = write_file("x1,x2,y,z\n0.0,1.0,2.5,1\n1.0,oops,1.5,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "x2");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn non_finite_cell_is_validation_error() {
        let f = write_file("x1,x2,y,z\n0.0,1.0,2.5,1\nNaN,0.0,1.5,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn bad_treatment_value_names_its_row() {
        // Header is line 1, so the fourth data row is file line 5.
        let f = write_file(
            "x1,x2,y,z\n0.0,1.0,2.5,1\n1.0,0.0,1.5,0\n2.0,2.0,3.5,0\n3.0,1.0,4.0,2\n",
        );
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("row 5"), "{msg}");
        assert!(msg.contains('2'), "{msg}");
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let d = Dataset::with_index_ids(
            vec![
                vec![0.1, 1.0 / 3.0],
                vec![std::f64::consts::PI, -2.5e-13],
                vec![1e17, 4.9e-300],
            ],
            vec![1.0 / 7.0, -0.0, 3.25],
            vec![true, false, false],
        )
        .unwrap();
        let schema = CsvSchema {
            id: Some("id".into()),
            ..toy_schema()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&d, &path, &schema).unwrap();
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(back.n(), d.n());
        for i in 0..d.n() {
            assert_eq!(back.outcome(i).to_bits(), d.outcome(i).to_bits());
            assert_eq!(back.is_treated(i), d.is_treated(i));
            for (a, b) in back.covariates(i).iter().zip(d.covariates(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(Dataset::with_index_ids(vec![vec![1.0]], vec![1.0], vec![true]).is_err());
        assert!(Dataset::with_index_ids(
            vec![vec![], vec![]],
            vec![1.0, 2.0],
            vec![true, false]
        )
        .is_err());
        assert!(Dataset::with_index_ids(
            vec![vec![1.0], vec![f64::INFINITY]],
            vec![1.0, 2.0],
            vec![true, false]
        )
        .is_err());
        let ragged = Dataset::with_index_ids(
            vec![vec![1.0, 2.0], vec![1.0]],
            vec![1.0, 2.0],
            vec![true, false],
        );
        assert!(ragged.is_err());
    }

    #[test]
    fn estimable_requires_both_groups() {
        let all_treated = Dataset::with_index_ids(
            vec![vec![1.0], vec![2.0]],
            vec![1.0, 2.0],
            vec![true, true],
        )
        .unwrap();
        assert!(all_treated.check_estimable().is_err());
        let mixed = Dataset::with_index_ids(
            vec![vec![1.0], vec![2.0]],
            vec![1.0, 2.0],
            vec![true, false],
        )
        .unwrap();
        assert!(mixed.check_estimable().is_ok());
    }

    #[test]
    fn truth_info_satt_matches_treated_mean() {
        let d = Dataset::with_index_ids(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
        )
        .unwrap();
        let t = TruthInfo::new(&d, vec![0.0; 3], vec![1.0, 3.0, 99.0], 0.5, 2.0).unwrap();
        assert!((t.satt - 2.0).abs() < 1e-15);
        t.validate(&d).unwrap();
    }

    #[test]
    fn standardized_covariates_have_unit_sd() {
        let d = Dataset::with_index_ids(
            vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0], vec![7.0, 5.0]],
            vec![0.0; 4],
            vec![true, false, false, false],
        )
        .unwrap();
        let s = d.standardized_covariates();
        let sds = s.covariate_sds();
        assert!((sds[0] - 1.0).abs() < 1e-12);
        // constant column untouched
        assert_eq!(s.covariates(0)[1], 5.0);
    }
}
