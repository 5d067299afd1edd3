//! CSV persistence with a JSON schema sidecar. Missing values are empty
//! fields; floats are written in shortest round-trip form so that reloads
//! are value-exact.

use std::fs;
use std::path::Path;

use crate::data::{ColumnRole, Dataset, FinancialRow, Schema};
use crate::error::{Error, Result};

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_schema(schema: &Schema, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(schema)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a dataset whose header must match the schema's column names.
pub fn load_dataset(csv_path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(csv_path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {}", csv_path.display(), e)))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("bad csv header: {}", e)))?
        .clone();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::InvalidInput(format!(
            "csv header {:?} does not match schema {:?}",
            got, expected
        )));
    }

    let mut feature_names = Vec::new();
    let mut feature_types = Vec::new();
    for c in &schema.columns {
        if c.role == ColumnRole::Feature {
            feature_names.push(c.name.clone());
            feature_types.push(c.ctype);
        }
    }
    let has_financial = schema.columns.iter().any(|c| c.role == ColumnRole::Portfolio);

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut entity_ids = Vec::new();
    let mut financial = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| Error::InvalidInput(format!("csv read error at line {}: {}", line, e)))?;
        if record.len() != schema.columns.len() {
            return Err(Error::CsvArity {
                line,
                expected: schema.columns.len(),
                got: record.len(),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        let mut label: Option<u8> = None;
        let mut entity: Option<String> = None;
        let mut fin = FinancialRow {
            portfolio: 0.0,
            default_rate: 0.0,
            zero_target: 0.0,
        };
        for (col, cell) in schema.columns.iter().zip(record.iter()) {
            match col.role {
                ColumnRole::Feature => {
                    if cell.is_empty() {
                        row.push(None);
                    } else {
                        row.push(Some(parse_number(cell, line, &col.name)?));
                    }
                }
                ColumnRole::Label => {
                    let v = parse_number(cell, line, &col.name)?;
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::CsvCell {
                            line,
                            column: col.name.clone(),
                            reason: format!("label must be 0 or 1, got {}", v),
                        });
                    }
                    label = Some(v as u8);
                }
                ColumnRole::EntityId => {
                    if cell.is_empty() {
                        return Err(Error::CsvCell {
                            line,
                            column: col.name.clone(),
                            reason: "entity id must not be empty".into(),
                        });
                    }
                    entity = Some(cell.to_string());
                }
                ColumnRole::Portfolio => fin.portfolio = parse_number(cell, line, &col.name)?,
                ColumnRole::DefaultRate => fin.default_rate = parse_number(cell, line, &col.name)?,
                ColumnRole::ZeroTarget => fin.zero_target = parse_number(cell, line, &col.name)?,
            }
        }
        rows.push(row);
        labels.push(label.ok_or_else(|| Error::InvalidInput(format!("row {} has no label column", line)))?);
        entity_ids.push(entity.ok_or_else(|| Error::InvalidInput(format!("row {} has no entity column", line)))?);
        if has_financial {
            financial.push(fin);
        }
    }

    let dataset = Dataset {
        feature_names,
        feature_types,
        rows,
        labels,
        entity_ids,
        financial: if has_financial { Some(financial) } else { None },
    };
    dataset.validate()?;
    Ok(dataset)
}

fn parse_number(cell: &str, line: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::CsvCell {
        line,
        column: column.to_string(),
        reason: format!("cannot parse `{}` as a number", cell),
    })
}

/// Write `data.csv` plus its schema sidecar.
pub fn save_dataset(dataset: &Dataset, csv_path: &Path, schema_path: &Path) -> Result<()> {
    dataset.validate()?;
    let schema = dataset.schema();
    save_schema(&schema, schema_path)?;

    let mut writer = csv::Writer::from_path(csv_path)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {}", csv_path.display(), e)))?;
    let header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::InvalidInput(format!("csv write error: {}", e)))?;
    for r in 0..dataset.n_rows() {
        let mut record: Vec<String> = Vec::with_capacity(schema.columns.len());
        record.push(dataset.entity_ids[r].clone());
        for f in 0..dataset.n_features() {
            record.push(match dataset.rows[r][f] {
                Some(v) => format!("{}", v),
                None => String::new(),
            });
        }
        record.push(format!("{}", dataset.labels[r]));
        if let Some(fin) = &dataset.financial {
            record.push(format!("{}", fin[r].portfolio));
            record.push(format!("{}", fin[r].default_rate));
            record.push(format!("{}", fin[r].zero_target));
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::InvalidInput(format!("csv write error: {}", e)))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSpec, ColumnType};
    use std::io::Write;

    fn sample() -> Dataset {
        Dataset {
            feature_names: vec!["x1".into(), "x2".into()],
            feature_types: vec![ColumnType::Numeric, ColumnType::Categorical],
            rows: vec![
                vec![Some(0.1), Some(2.0)],
                vec![None, Some(1.0)],
                vec![Some(-3.25), None],
            ],
            labels: vec![0, 1, 0],
            entity_ids: vec!["p1".into(), "p2".into(), "p1".into()],
            financial: Some(vec![
                FinancialRow { portfolio: 1000.0, default_rate: 0.1, zero_target: 0.05 },
                FinancialRow { portfolio: 2000.0, default_rate: 0.5, zero_target: 0.05 },
                FinancialRow { portfolio: 1000.0, default_rate: 0.1, zero_target: 0.05 },
            ]),
        }
    }

    #[test]
    fn round_trip_preserves_values_and_missing_markers() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let schema_path = dir.path().join("d.schema.json");
        let ds = sample();
        save_dataset(&ds, &csv, &schema_path).unwrap();
        let schema = load_schema(&schema_path).unwrap();
        let back = load_dataset(&csv, &schema).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let mut file = std::fs::File::create(&csv).unwrap();
        writeln!(file, "entity_id,x1,label").unwrap();
        writeln!(file, "e1,1.5,0").unwrap();
        writeln!(file, "e2,not_a_number,1").unwrap();
        let schema = Schema {
            columns: vec![
                ColumnSpec { name: "entity_id".into(), ctype: ColumnType::Categorical, role: ColumnRole::EntityId },
                ColumnSpec { name: "x1".into(), ctype: ColumnType::Numeric, role: ColumnRole::Feature },
                ColumnSpec { name: "label".into(), ctype: ColumnType::Numeric, role: ColumnRole::Label },
            ],
        };
        let err = load_dataset(&csv, &schema).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{}", err);
        assert!(err.contains("x1"), "{}", err);
    }

    #[test]
    fn arity_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let mut file = std::fs::File::create(&csv).unwrap();
        writeln!(file, "entity_id,x1,label").unwrap();
        writeln!(file, "e1,1.5,0,extra").unwrap();
        let schema = Schema {
            columns: vec![
                ColumnSpec { name: "entity_id".into(), ctype: ColumnType::Categorical, role: ColumnRole::EntityId },
                ColumnSpec { name: "x1".into(), ctype: ColumnType::Numeric, role: ColumnRole::Feature },
                ColumnSpec { name: "label".into(), ctype: ColumnType::Numeric, role: ColumnRole::Label },
            ],
        };
        let err = load_dataset(&csv, &schema).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{}", err);
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let schema_path = dir.path().join("d.schema.json");
        let ds = sample();
        save_dataset(&ds, &csv, &schema_path).unwrap();
        let mut schema = load_schema(&schema_path).unwrap();
        schema.columns[1].name = "renamed".into();
        assert!(load_dataset(&csv, &schema).is_err());
    }
}
