//! Wide-format CSV ingestion.
//!
//! One person per row. A required `group` column holds 0 or 1, an
//! optional `cluster` column is carried as metadata, and every other
//! column is an item scored 0, 1, or empty for missing. Persons with no
//! observed responses are dropped and counted.

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// When set, numeric item cells are recoded to 1 when at least the
    /// threshold and 0 otherwise. Without it, any cell other than 0, 1,
    /// or empty is rejected; polytomous data must be recoded
    /// explicitly.
    pub binarize_threshold: Option<f64>,
}

fn parse_cell(
    raw: &str,
    rowno: usize,
    column: &str,
    options: &IngestOptions,
) -> Result<Option<u8>> {
    if raw.is_empty() {
        return Ok(None);
    }
    match options.binarize_threshold {
        None => match raw {
            "0" => Ok(Some(0)),
            "1" => Ok(Some(1)),
            other => Err(Error::SchemaError(format!(
                "row {rowno}, column `{column}`: value `{other}` is not binary \
                 (pass --binarize-threshold to recode polytomous scores)"
            ))),
        },
        Some(threshold) => {
            let x: f64 = raw.parse().map_err(|_| {
                Error::SchemaError(format!(
                    "row {rowno}, column `{column}`: value `{raw}` is not numeric"
                ))
            })?;
            if x.is_nan() {
                return Err(Error::SchemaError(format!(
                    "row {rowno}, column `{column}`: value is NaN"
                )));
            }
            Ok(Some(u8::from(x >= threshold)))
        }
    }
}

pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<ResponseDataset> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile(path.display().to_string()));
    }

    let mut group_col = None;
    let mut cluster_col = None;
    let mut item_cols = Vec::new();
    let mut item_names = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        match name {
            "group" => {
                if group_col.replace(i).is_some() {
                    return Err(Error::SchemaError("duplicate `group` column".into()));
                }
            }
            "cluster" => {
                if cluster_col.replace(i).is_some() {
                    return Err(Error::SchemaError("duplicate `cluster` column".into()));
                }
            }
            "" => {
                return Err(Error::SchemaError(format!(
                    "column {} has an empty name",
                    i + 1
                )))
            }
            other => {
                if item_names.iter().any(|n| n == other) {
                    return Err(Error::SchemaError(format!(
                        "duplicate item column `{other}`"
                    )));
                }
                item_cols.push(i);
                item_names.push(other.to_string());
            }
        }
    }
    let group_col =
        group_col.ok_or_else(|| Error::SchemaError("missing required column `group`".into()))?;
    if item_names.is_empty() {
        return Err(Error::SchemaError("no item columns".into()));
    }

    let mut group = Vec::new();
    let mut rows = Vec::new();
    let mut cluster = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        // the header is row 1 of the file
        let rowno = idx + 2;
        let g = match record.get(group_col).unwrap_or("") {
            "0" => 0u8,
            "1" => 1,
            other => {
                return Err(Error::SchemaError(format!(
                    "row {rowno}, column `group`: value `{other}` not in {{0,1}}"
                )))
            }
        };
        group.push(g);
        if let Some(c) = cluster_col {
            cluster.push(record.get(c).unwrap_or("").to_string());
        }
        let mut row = Vec::with_capacity(item_cols.len());
        for (&col, name) in item_cols.iter().zip(&item_names) {
            row.push(parse_cell(
                record.get(col).unwrap_or(""),
                rowno,
                name,
                options,
            )?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let data = ResponseDataset::from_rows(item_names, group, &rows)?;
    let data = if cluster_col.is_some() {
        data.with_cluster(cluster)?
    } else {
        data
    };
    data.drop_unobserved_persons()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn ingest(content: &str) -> Result<ResponseDataset> {
        ingest_csv(write_csv(content).path(), &IngestOptions::default())
    }

    #[test]
    fn parses_small_file() {
        let d = ingest("group,q1,q2\n0,1,0\n1,0,1\n1,1,\n").unwrap();
        assert_eq!(d.n_persons(), 3);
        assert_eq!(d.n_items(), 2);
        assert_eq!(d.n_group(0), 1);
        assert_eq!(d.n_group(1), 2);
        assert_eq!(d.get(2, 1), None);
        assert_eq!(d.item_names(), ["q1".to_string(), "q2".to_string()]);
    }

    #[test]
    fn group_column_position_is_free() {
        let d = ingest("q1,group,q2\n1,0,0\n0,1,1\n").unwrap();
        assert_eq!(d.get(0, 0), Some(1));
        assert_eq!(d.get(0, 1), Some(0));
        assert_eq!(d.group_label(1), 1);
    }

    #[test]
    fn rejects_nonbinary_cell() {
        let err = ingest("group,q1\n0,1\n1,2\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::SchemaError(_)));
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("q1"), "{msg}");
    }

    #[test]
    fn rejects_bad_group_value() {
        let err = ingest("group,q1\n2,1\n").unwrap_err();
        assert!(err.to_string().contains("group"));
    }

    #[test]
    fn rejects_missing_group_column() {
        let err = ingest("q1,q2\n0,1\n").unwrap_err();
        assert!(err.to_string().contains("group"));
    }

    #[test]
    fn rejects_duplicate_items() {
        let err = ingest("group,q1,q1\n0,1,0\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(ingest(""), Err(Error::EmptyFile(_))));
        assert!(matches!(ingest("group,q1\n"), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err =
            ingest_csv(Path::new("/nonexistent/som.csv"), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/som.csv"));
    }

    #[test]
    fn cluster_carried_and_empty_persons_dropped() {
        let d = ingest("group,cluster,q1,q2\n0,s1,1,0\n0,s1,,\n1,s2,0,1\n").unwrap();
        assert_eq!(d.n_persons(), 2);
        assert_eq!(d.dropped_empty_persons(), 1);
        assert_eq!(d.cluster().unwrap(), ["s1".to_string(), "s2".to_string()]);
    }

    #[test]
    fn binarize_recodes_numeric_scores() {
        let opts = IngestOptions {
            binarize_threshold: Some(2.0),
        };
        let d = ingest_csv(
            write_csv("group,q1,q2\n0,3,1.5\n1,2,0\n1,,4\n").path(),
            &opts,
        )
        .unwrap();
        assert_eq!(d.get(0, 0), Some(1));
        assert_eq!(d.get(0, 1), Some(0));
        assert_eq!(d.get(1, 0), Some(1));
        assert_eq!(d.get(2, 0), None);
        assert_eq!(d.get(2, 1), Some(1));

        let err = ingest_csv(write_csv("group,q1\n0,abc\n").path(), &opts).unwrap_err();
        assert!(err.to_string().contains("abc"));
    }
}
