//! CSV ingestion into a [`Dataset`].

use std::path::Path;

use nalgebra::DMatrix;
use vcqr::vcm::Dataset;

use crate::error::{CliError, CliResult};

/// Which columns play which part in the model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Roles {
    pub response: String,
    pub index: String,
    pub covariates: Vec<String>,
    /// Products such as `H*S`; factors may be any columns of the file.
    pub interactions: Vec<String>,
}

fn factors(term: &str) -> Vec<&str> {
    term.split(['*', ':']).map(str::trim).collect()
}

/// Reads `path` and assembles `(t, [1, covariates, interactions], y)`. The
/// index range observed in the file becomes the unit-interval map.
pub fn ingest_csv(path: &Path, roles: &Roles, min_rows: usize) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| -> CliResult<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("column '{name}' not found in {}", path.display())))
    };
    let y_col = col(&roles.response)?;
    let t_col = col(&roles.index)?;
    let x_cols = roles.covariates.iter().map(|c| col(c)).collect::<CliResult<Vec<_>>>()?;
    let inter_cols = roles
        .interactions
        .iter()
        .map(|term| {
            let f = factors(term);
            if f.len() < 2 || f.iter().any(|s| s.is_empty()) {
                return Err(CliError::Config(format!("interaction '{term}' must look like A*B")));
            }
            f.iter().map(|c| col(c)).collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let mut values = vec![f64::NAN; header.len()];
        let used = std::iter::once(y_col)
            .chain(std::iter::once(t_col))
            .chain(x_cols.iter().copied())
            .chain(inter_cols.iter().flatten().copied());
        for c in used {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CliError::Data(format!(
                    "row {row}, column '{}': cannot parse '{cell}' as a number",
                    header[c]
                ))
            })?;
            values[c] = v;
        }
        rows.push(values);
    }
    let n = rows.len();
    if n < min_rows {
        return Err(CliError::Data(format!(
            "{} has {n} data rows; at least {min_rows} are required",
            path.display()
        )));
    }
    let width = 1 + x_cols.len() + inter_cols.len();
    let x = DMatrix::from_fn(n, width, |i, j| {
        if j == 0 {
            1.0
        } else if j <= x_cols.len() {
            rows[i][x_cols[j - 1]]
        } else {
            inter_cols[j - 1 - x_cols.len()].iter().map(|&c| rows[i][c]).product()
        }
    });
    let t = rows.iter().map(|r| r[t_col]).collect();
    let y = rows.iter().map(|r| r[y_col]).collect();
    let mut names = vec!["intercept".to_string()];
    names.extend(roles.covariates.iter().cloned());
    names.extend(roles.interactions.iter().map(|s| factors(s).join("*")));
    let data = Dataset::new(t, x, y, names).map_err(|e| CliError::Data(e.to_string()))?;
    data.index_domain()
        .map_err(|_| CliError::Data(format!("index column '{}' is constant", roles.index)))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn roles(cov: &[&str], inter: &[&str]) -> Roles {
        Roles {
            response: "y".into(),
            index: "t".into(),
            covariates: cov.iter().map(|s| s.to_string()).collect(),
            interactions: inter.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn three_rows() {
        let f = file("t,x,y\n0,1,2\n0.5,2,3\n1,3,5\n");
        let d = ingest_csv(f.path(), &roles(&["x"], &[]), 1).unwrap();
        assert_eq!((d.n(), d.p()), (3, 1));
        assert_eq!(d.column_names, vec!["intercept", "x"]);
        assert_eq!(d.y, vec![2.0, 3.0, 5.0]);
        assert!(ingest_csv(f.path(), &roles(&["x"], &[]), 10).is_err());
    }

    #[test]
    fn interaction_product() {
        let f = file("t,H,S,y\n1,60,1,2\n2,62,0,3\n3,65,1,4\n");
        let d = ingest_csv(f.path(), &roles(&["H", "S"], &["H*S"]), 1).unwrap();
        assert_eq!(d.column_names[3], "H*S");
        for i in 0..3 {
            assert_eq!(d.x[(i, 3)], d.x[(i, 1)] * d.x[(i, 2)]);
        }
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let f = file("t,x,y\n0,1,2\n0.5,abc,3\n");
        let e = ingest_csv(f.path(), &roles(&["x"], &[]), 1).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("row 2") && msg.contains("'x'"), "{msg}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn missing_column_is_config_error() {
        let f = file("t,x,y\n0,1,2\n");
        let e = ingest_csv(f.path(), &roles(&["z"], &[]), 1).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
