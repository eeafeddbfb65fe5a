use std::collections::HashMap;
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use log::warn;

use super::{format_distribution, parse_distribution, FieldKind, FieldSpec, RawValue, SequencedSample};
use crate::error::{Error, Result};

pub const ENTITY_COLUMN: &str = "entity_id";
pub const PERIOD_COLUMN: &str = "period_index";

/// What to read from a long-format CSV.
#[derive(Clone, Debug)]
pub struct IngestConfig {
    pub fields: Vec<FieldSpec>,
    pub label_column: String,
    /// Number of consecutive periods per sample.
    pub time_span: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    /// 1-based line number in the file, counting the header as line 1.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOutcome {
    pub samples: Vec<SequencedSample>,
    /// Entities without `time_span` consecutive trailing periods or without a final label.
    pub dropped_entities: usize,
    pub row_errors: Vec<RowError>,
    pub missing_cells: usize,
}

struct Row {
    period: i64,
    label: Option<usize>,
    values: Vec<RawValue>,
}

/// Reads the long format: one row per `(entity_id, period_index)`.
///
/// Entities keep their order of first appearance. Each sample is built from
/// the entity's last `time_span` periods, which must be consecutive, and takes
/// its label from the final one.
pub fn load_csv(path: impl AsRef<Path>, config: &IngestConfig) -> Result<LoadOutcome> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_long(file, config)
}

pub(crate) fn read_long<R: std::io::Read>(reader: R, config: &IngestConfig) -> Result<LoadOutcome> {
    if config.time_span == 0 {
        return Err(Error::config("T", "time span must be at least 1"));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut outcome = LoadOutcome::default();
    if headers.is_empty() {
        warn!("empty input file, no samples loaded");
        return Ok(outcome);
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let entity_col = col(ENTITY_COLUMN)?;
    let period_col = col(PERIOD_COLUMN)?;
    let label_col = col(&config.label_column)?;
    let field_cols = config
        .fields
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                outcome.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&record, period_col, label_col, &field_cols, &config.fields) {
            Ok((row, missing)) => {
                outcome.missing_cells += missing;
                let entity = record[entity_col].trim().to_string();
                let list = rows.entry(entity.clone()).or_insert_with(|| {
                    order.push(entity);
                    Vec::new()
                });
                if list.iter().any(|r| r.period == row.period) {
                    outcome.row_errors.push(RowError {
                        line,
                        message: format!("duplicate period {}", row.period),
                    });
                    continue;
                }
                list.push(row);
            }
            Err(message) => outcome.row_errors.push(RowError { line, message }),
        }
    }
    for e in &outcome.row_errors {
        warn!("line {}: {} (row skipped)", e.line, e.message);
    }

    let fields = Arc::new(config.fields.clone());
    let t = config.time_span;
    for entity in order {
        let mut list = rows.remove(&entity).unwrap_or_default();
        list.sort_by_key(|r| r.period);
        if list.len() < t {
            outcome.dropped_entities += 1;
            continue;
        }
        let window = list.split_off(list.len() - t);
        let consecutive = window.windows(2).all(|w| w[1].period == w[0].period + 1);
        let label = window.last().and_then(|r| r.label);
        match (consecutive, label) {
            (true, Some(label)) => outcome.samples.push(SequencedSample {
                entity_id: entity,
                fields: Arc::clone(&fields),
                steps: window.into_iter().map(|r| r.values).collect(),
                label,
            }),
            _ => outcome.dropped_entities += 1,
        }
    }
    if outcome.dropped_entities > 0 {
        warn!(
            "dropped {} entities lacking {t} consecutive labelled periods",
            outcome.dropped_entities
        );
    }
    if outcome.missing_cells > 0 {
        warn!(
            "{} missing numeric cells will be imputed with the training mean",
            outcome.missing_cells
        );
    }
    if outcome.samples.is_empty() {
        warn!("no samples loaded");
    }
    Ok(outcome)
}

fn parse_row(
    record: &csv::StringRecord,
    period_col: usize,
    label_col: usize,
    field_cols: &[usize],
    fields: &[FieldSpec],
) -> std::result::Result<(Row, usize), String> {
    let period_cell = record[period_col].trim();
    let period: i64 = period_cell
        .parse()
        .map_err(|_| format!("non-integer {PERIOD_COLUMN} `{period_cell}`"))?;
    let label_cell = record[label_col].trim();
    let label = if label_cell.is_empty() {
        None
    } else {
        Some(
            label_cell
                .parse::<usize>()
                .map_err(|_| format!("non-integer label `{label_cell}`"))?,
        )
    };
    let mut missing = 0;
    let mut values = Vec::with_capacity(fields.len());
    for (spec, &c) in fields.iter().zip(field_cols) {
        let cell = record[c].trim();
        let v = match spec.kind {
            FieldKind::Numerical if cell.is_empty() => {
                missing += 1;
                RawValue::Number(None)
            }
            FieldKind::Numerical => {
                let x: f64 = cell
                    .parse()
                    .map_err(|_| format!("non-numeric value `{cell}` in field `{}`", spec.name))?;
                if !x.is_finite() {
                    return Err(format!("non-finite value in field `{}`", spec.name));
                }
                RawValue::Number(Some(x))
            }
            FieldKind::Categorical => RawValue::Category(cell.to_string()),
            FieldKind::MultiValued => RawValue::Distribution(
                parse_distribution(cell).map_err(|e| format!("field `{}`: {e}", spec.name))?,
            ),
        };
        values.push(v);
    }
    Ok((Row { period, label, values }, missing))
}

/// Writes samples in the long format read by [`load_csv`]. Periods are numbered
/// from 0 and the label is written on the final period only.
pub fn write_csv(path: impl AsRef<Path>, samples: &[SequencedSample], label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_long(file, samples, label_column)
}

pub(crate) fn write_long<W: std::io::Write>(writer: W, samples: &[SequencedSample], label_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = samples.first() else {
        wtr.write_record([ENTITY_COLUMN, PERIOD_COLUMN, label_column])?;
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        return Ok(());
    };
    let mut header = vec![ENTITY_COLUMN.to_string(), PERIOD_COLUMN.to_string(), label_column.to_string()];
    header.extend(first.fields.iter().map(|f| f.name.clone()));
    wtr.write_record(&header)?;
    for s in samples {
        if s.fields != first.fields {
            return Err(Error::Contract(format!(
                "sample `{}` has a different field set",
                s.entity_id
            )));
        }
        let last = s.steps.len().saturating_sub(1);
        for (t, step) in s.steps.iter().enumerate() {
            let mut rec = vec![
                s.entity_id.clone(),
                t.to_string(),
                if t == last { s.label.to_string() } else { String::new() },
            ];
            rec.extend(step.iter().map(|v| match v {
                RawValue::Number(Some(x)) => format!("{x}"),
                RawValue::Number(None) => String::new(),
                RawValue::Category(c) => c.clone(),
                RawValue::Distribution(d) => format_distribution(d),
            }));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
