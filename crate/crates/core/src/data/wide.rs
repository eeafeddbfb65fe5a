use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use super::csv_io::{ENTITY_COLUMN, PERIOD_COLUMN};
use crate::error::{Error, Result};

/// One wide per-period file: a row per entity, a column per field.
#[derive(Clone, Debug)]
pub struct WideInput {
    pub period: i64,
    pub path: PathBuf,
}

/// Converts wide per-period files into the long format.
///
/// `entity_column = None` takes the first column as the entity id. Rows are
/// written sorted by entity id, then period. A label cell may be empty except
/// on an entity's final period.
pub fn wide_to_long<W: Write>(
    inputs: &[WideInput],
    entity_column: Option<&str>,
    label_column: &str,
    fields: &[String],
    out: W,
) -> Result<usize> {
    // entity -> period -> (label cell, field cells)
    let mut table: BTreeMap<String, BTreeMap<i64, (String, Vec<String>)>> = BTreeMap::new();
    for input in inputs {
        let file = File::open(&input.path).map_err(|e| Error::io(&input.path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(format!("{name} (in {})", input.path.display())))
        };
        let entity_col = match entity_column {
            Some(name) => col(name)?,
            None => 0,
        };
        let label_col = col(label_column)?;
        let field_cols = fields.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
        for record in rdr.records() {
            let record = record?;
            let entity = record[entity_col].trim().to_string();
            let label = record[label_col].trim().to_string();
            let cells = field_cols.iter().map(|&c| record[c].trim().to_string()).collect();
            let periods = table.entry(entity.clone()).or_default();
            if periods.insert(input.period, (label, cells)).is_some() {
                return Err(Error::Ingest(format!(
                    "duplicate (entity, period) pair ({entity}, {})",
                    input.period
                )));
            }
        }
    }

    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![ENTITY_COLUMN.to_string(), PERIOD_COLUMN.to_string(), label_column.to_string()];
    header.extend(fields.iter().cloned());
    wtr.write_record(&header)?;
    let mut rows = 0;
    for (entity, periods) in &table {
        if let Some((period, (label, _))) = periods.iter().next_back() {
            if label.is_empty() {
                return Err(Error::Ingest(format!(
                    "entity `{entity}` has no label on its final period {period}"
                )));
            }
        }
        for (period, (label, cells)) in periods {
            let mut rec = vec![entity.clone(), period.to_string(), label.clone()];
            rec.extend(cells.iter().cloned());
            wtr.write_record(&rec)?;
            rows += 1;
        }
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(rows)
}
