use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{EmbeddingTable, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Parquet,
    Csv,
    Jsonl,
}

impl TableFormat {
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("parquet") | Some("pq") => Ok(TableFormat::Parquet),
            Some("csv") => Ok(TableFormat::Csv),
            Some("jsonl") | Some("ndjson") => Ok(TableFormat::Jsonl),
            _ => Err(IngestError::UnknownFormat(path.to_path_buf())),
        }
    }
}

const ID: &str = "id";
const MODEL: &str = "model_name";
const EMBEDDING: &str = "embedding";

fn is_reserved(name: &str) -> bool {
    matches!(name, ID | MODEL | EMBEDDING)
}

pub fn read_embedding_table(path: &Path, format: TableFormat) -> Result<EmbeddingTable, IngestError> {
    match format {
        TableFormat::Csv => read_csv(path),
        TableFormat::Jsonl => read_jsonl(path),
        TableFormat::Parquet => read_parquet(path),
    }
}

pub fn write_embedding_table(table: &EmbeddingTable, path: &Path, format: TableFormat) -> Result<(), IngestError> {
    match format {
        TableFormat::Csv => write_csv(table, path),
        TableFormat::Jsonl => write_jsonl(table, path),
        TableFormat::Parquet => write_parquet(table, path),
    }
}

/// Parse `[a, b, c]` into `f32`s. Each element goes through `f32::from_str`,
/// which rounds correctly, so shortest-form output reads back bit-exactly.
fn parse_f32_array(text: &str) -> Result<Vec<f32>, String> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("embedding `{}` is not a bracketed array", truncate(text)))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f32>().map_err(|e| format!("bad embedding value `{tok}`: {e}"))
        })
        .collect()
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(40) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn format_f32_array(values: &[f32]) -> String {
    let mut out = String::with_capacity(values.len() * 10 + 2);
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out.push(']');
    out
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn read_csv(path: &Path) -> Result<EmbeddingTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (id_col, model_col, emb_col) = (find(ID)?, find(MODEL)?, find(EMBEDDING)?);
    let label_idx: Vec<usize> = (0..headers.len()).filter(|&i| !is_reserved(&headers[i])).collect();
    let label_names = label_idx.iter().map(|&i| headers[i].to_string()).collect();
    let mut builder = EmbeddingTable::builder(label_names);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let id = rec[id_col].trim().parse::<u32>().map_err(|e| parse_err(path, line, format!("id: {e}")))?;
        let labels = label_idx
            .iter()
            .map(|&i| {
                rec[i]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| parse_err(path, line, format!("label `{}`: {e}", &headers[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let emb = parse_f32_array(&rec[emb_col]).map_err(|m| parse_err(path, line, m))?;
        builder.push(id, &rec[model_col], labels, emb)?;
    }
    Ok(builder.finish())
}

fn write_csv(table: &EmbeddingTable, path: &Path) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![ID.to_string()];
    header.extend(table.label_columns().iter().cloned());
    header.push(MODEL.into());
    header.push(EMBEDDING.into());
    w.write_record(&header)?;
    let model = table.model_name().unwrap_or_default();
    for row in table.rows() {
        let mut rec = vec![row.id.to_string()];
        rec.extend(row.labels.iter().map(i64::to_string));
        rec.push(model.to_string());
        rec.push(format_f32_array(&row.embedding));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl(path: &Path) -> Result<EmbeddingTable, IngestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut builder: Option<(super::TableBuilder, Vec<String>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: BTreeMap<String, Box<RawValue>> =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let get = |name: &str| fields.get(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));
        let id: u32 = serde_json::from_str(get(ID)?.get()).map_err(|e| parse_err(path, lineno, format!("id: {e}")))?;
        let model: String =
            serde_json::from_str(get(MODEL)?.get()).map_err(|e| parse_err(path, lineno, format!("model_name: {e}")))?;
        let emb = parse_f32_array(get(EMBEDDING)?.get()).map_err(|m| parse_err(path, lineno, m))?;
        let (b, names) = builder.get_or_insert_with(|| {
            let names: Vec<String> = fields.keys().filter(|k| !is_reserved(k)).cloned().collect();
            (EmbeddingTable::builder(names.clone()), names)
        });
        if fields.len() != names.len() + 3 {
            let extra = fields.keys().find(|k| !is_reserved(k) && !names.contains(k)).cloned();
            return Err(IngestError::MissingColumn(extra.unwrap_or_else(|| "label".into())));
        }
        let labels = names
            .iter()
            .map(|n| {
                let raw = fields.get(n).ok_or_else(|| IngestError::MissingColumn(n.clone()))?;
                serde_json::from_str::<i64>(raw.get()).map_err(|e| parse_err(path, lineno, format!("label `{n}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        b.push(id, &model, labels, emb)?;
    }
    Ok(match builder {
        Some((b, _)) => b.finish(),
        None => EmbeddingTable::builder(Vec::new()).finish(),
    })
}

fn write_jsonl(table: &EmbeddingTable, path: &Path) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    let model = serde_json::to_string(table.model_name().unwrap_or_default()).expect("string serializes");
    let label_keys: Vec<String> = table
        .label_columns()
        .iter()
        .map(|c| serde_json::to_string(c).expect("string serializes"))
        .collect();
    for row in table.rows() {
        write!(w, "{{\"id\":{}", row.id)?;
        for (key, v) in label_keys.iter().zip(&row.labels) {
            write!(w, ",{key}:{v}")?;
        }
        writeln!(w, ",\"model_name\":{model},\"embedding\":{}}}", format_f32_array(&row.embedding))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(feature = "parquet")]
fn read_parquet(path: &Path) -> Result<EmbeddingTable, IngestError> {
    use arrow::array::{Array, AsArray, RecordBatchReader};
    use arrow::compute::cast;
    use arrow::datatypes::{DataType, Float32Type, Int64Type, UInt32Type};
    use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;

    let reader = ParquetRecordBatchReaderBuilder::try_new(File::open(path)?)?.build()?;
    let schema = reader.schema();
    for name in [ID, MODEL, EMBEDDING] {
        if schema.index_of(name).is_err() {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let label_names: Vec<String> = schema
        .fields()
        .iter()
        .map(|f| f.name().clone())
        .filter(|n| !is_reserved(n))
        .collect();
    let mut builder = EmbeddingTable::builder(label_names.clone());
    let mut row_offset = 0;
    for batch in reader {
        let batch = batch?;
        let ids = cast(batch.column_by_name(ID).expect("checked"), &DataType::UInt32)?;
        let ids = ids.as_primitive::<UInt32Type>();
        let models = cast(batch.column_by_name(MODEL).expect("checked"), &DataType::Utf8)?;
        let models = models.as_string::<i32>();
        let labels = label_names
            .iter()
            .map(|n| cast(batch.column_by_name(n).expect("from schema"), &DataType::Int64))
            .collect::<Result<Vec<_>, _>>()?;
        let emb_col = batch.column_by_name(EMBEDDING).expect("checked");
        let emb_list = cast(emb_col, &DataType::new_list(DataType::Float32, true))?;
        let emb_list = emb_list.as_list::<i32>();
        for r in 0..batch.num_rows() {
            let line = row_offset + r + 1;
            if ids.is_null(r) || models.is_null(r) || emb_list.is_null(r) {
                return Err(parse_err(path, line, "null in a required column"));
            }
            let values = emb_list.value(r);
            let values = values.as_primitive::<Float32Type>();
            if values.null_count() > 0 {
                return Err(parse_err(path, line, "null inside embedding"));
            }
            let row_labels = labels
                .iter()
                .zip(&label_names)
                .map(|(col, name)| {
                    let col = col.as_primitive::<Int64Type>();
                    if col.is_null(r) {
                        Err(parse_err(path, line, format!("null label `{name}`")))
                    } else {
                        Ok(col.value(r))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            builder.push(ids.value(r), models.value(r), row_labels, values.values().to_vec())?;
        }
        row_offset += batch.num_rows();
    }
    Ok(builder.finish())
}

#[cfg(feature = "parquet")]
fn write_parquet(table: &EmbeddingTable, path: &Path) -> Result<(), IngestError> {
    use std::sync::Arc;

    use arrow::array::{ArrayRef, Int64Array, ListArray, RecordBatch, StringArray, UInt32Array};
    use arrow::datatypes::{DataType, Field, Float32Type, Schema};
    use parquet::arrow::ArrowWriter;

    let mut fields = vec![Field::new(ID, DataType::UInt32, false)];
    let mut columns: Vec<ArrayRef> = vec![Arc::new(UInt32Array::from_iter_values(table.rows().iter().map(|r| r.id)))];
    for (c, name) in table.label_columns().iter().enumerate() {
        fields.push(Field::new(name, DataType::Int64, false));
        columns.push(Arc::new(Int64Array::from_iter_values(table.rows().iter().map(|r| r.labels[c]))));
    }
    fields.push(Field::new(MODEL, DataType::Utf8, false));
    let model = table.model_name().unwrap_or_default();
    columns.push(Arc::new(StringArray::from_iter_values(table.rows().iter().map(|_| model))));
    fields.push(Field::new(EMBEDDING, DataType::new_list(DataType::Float32, true), false));
    columns.push(Arc::new(ListArray::from_iter_primitive::<Float32Type, _, _>(
        table.rows().iter().map(|r| Some(r.embedding.iter().map(|&v| Some(v)))),
    )));
    let schema = Arc::new(Schema::new(fields));
    let batch = RecordBatch::try_new(schema.clone(), columns)?;
    let mut writer = ArrowWriter::try_new(File::create(path)?, schema, None)?;
    writer.write(&batch)?;
    writer.close()?;
    Ok(())
}

#[cfg(not(feature = "parquet"))]
fn read_parquet(_: &Path) -> Result<EmbeddingTable, IngestError> {
    Err(IngestError::ParquetDisabled)
}

#[cfg(not(feature = "parquet"))]
fn write_parquet(_: &EmbeddingTable, _: &Path) -> Result<(), IngestError> {
    Err(IngestError::ParquetDisabled)
}

/// Read a whole table-shaped file (CSV or Parquet) as string cells keyed by column.
pub(super) fn read_string_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>), IngestError> {
    match TableFormat::from_path(path)? {
        TableFormat::Parquet => read_parquet_strings(path),
        _ => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
            let headers = rdr.headers()?.iter().map(str::to_string).collect();
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                rows.push(rec.iter().map(|s| Some(s.to_string())).collect());
            }
            Ok((headers, rows))
        }
    }
}

#[cfg(feature = "parquet")]
fn read_parquet_strings(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>), IngestError> {
    use arrow::array::{Array, AsArray, RecordBatchReader};
    use arrow::compute::cast;
    use arrow::datatypes::DataType;
    use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;

    let reader = ParquetRecordBatchReaderBuilder::try_new(File::open(path)?)?.build()?;
    let headers: Vec<String> = reader.schema().fields().iter().map(|f| f.name().clone()).collect();
    let mut rows = Vec::new();
    for batch in reader {
        let batch = batch?;
        let cols = batch
            .columns()
            .iter()
            .map(|c| cast(c, &DataType::Utf8))
            .collect::<Result<Vec<_>, _>>()?;
        for r in 0..batch.num_rows() {
            rows.push(
                cols.iter()
                    .map(|c| {
                        let s = c.as_string::<i32>();
                        (!s.is_null(r)).then(|| s.value(r).to_string())
                    })
                    .collect(),
            );
        }
    }
    Ok((headers, rows))
}

#[cfg(not(feature = "parquet"))]
fn read_parquet_strings(_: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>), IngestError> {
    Err(IngestError::ParquetDisabled)
}
