use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::schema::{
    standardize, EntityId, LinkedPairSet, Provenance, Record, RecordSet, Schema, ValueDictionary,
};

/// How a delimited text file is laid out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextFormat {
    pub delimiter: u8,
    /// Compared after standardization.
    pub null_markers: Vec<String>,
    /// Header name of the entity id column. When absent from the header,
    /// ids are assigned as `id_offset + row_index`.
    pub id_column: String,
    pub id_offset: u64,
}

impl Default for TextFormat {
    fn default() -> Self {
        TextFormat {
            delimiter: b';',
            null_markers: vec!["".into(), "illegible".into(), "na".into()],
            id_column: "id".into(),
            id_offset: 0,
        }
    }
}

impl TextFormat {
    pub fn comma() -> Self {
        TextFormat {
            delimiter: b',',
            ..Self::default()
        }
    }

    fn is_null(&self, standardized: &str) -> bool {
        self.null_markers
            .iter()
            .any(|m| standardize(m) == standardized)
    }
}

pub fn load_records(path: &Path, schema: &Schema, format: &TextFormat) -> Result<(RecordSet, ValueDictionary)> {
    let mut dict = ValueDictionary::new(schema);
    let records = load_records_into(path, schema, format, &mut dict)?;
    Ok((records, dict))
}

/// Load records, interning values into an existing dictionary so that two
/// sources share value ids.
pub fn load_records_into(
    path: &Path,
    schema: &Schema,
    format: &TextFormat,
    dict: &mut ValueDictionary,
) -> Result<RecordSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, path, schema, format, dict)
}

pub(crate) fn read_records<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &Schema,
    format: &TextFormat,
    dict: &mut ValueDictionary,
) -> Result<RecordSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut id_col = None;
    // column -> attribute position
    let mut columns = Vec::with_capacity(header.len());
    for (i, name) in header.iter().enumerate() {
        if name.trim().eq_ignore_ascii_case(&format.id_column) {
            id_col = Some(i);
            columns.push(None);
            continue;
        }
        match schema.attribute_id(name) {
            Some(a) => columns.push(Some(a)),
            None => {
                return Err(Error::SchemaMismatch(format!(
                    "{}: header column `{}` is not a schema attribute",
                    path.display(),
                    name.trim()
                )))
            }
        }
    }
    for a in schema.ids() {
        if !columns.contains(&Some(a)) {
            return Err(Error::SchemaMismatch(format!(
                "{}: header lacks attribute `{}`",
                path.display(),
                schema.name(a)
            )));
        }
    }

    let mut set = RecordSet::new();
    let mut row = csv::StringRecord::new();
    let mut index = 0u64;
    loop {
        match rdr.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != header.len() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
        let id = match id_col {
            Some(c) => {
                let raw = row[c].trim();
                raw.parse::<u64>().map(EntityId).map_err(|_| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    message: format!("entity id `{raw}` is not an unsigned integer"),
                })?
            }
            None => EntityId(format.id_offset + index),
        };
        let mut values = vec![None; schema.len()];
        for (c, cell) in row.iter().enumerate() {
            if let Some(a) = columns[c] {
                let key = standardize(cell);
                if !format.is_null(&key) {
                    values[a.index()] = Some(dict.intern(a, &key));
                }
            }
        }
        set.push(Record::new(id, values)).map_err(|_| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: format!("duplicate entity id {id}"),
        })?;
        index += 1;
    }
    Ok(set)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Write records with an `id` column followed by every schema attribute.
/// Missing values are written as empty cells.
pub fn write_records(
    path: &Path,
    schema: &Schema,
    dict: &ValueDictionary,
    records: &RecordSet,
    delimiter: u8,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let io = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    let mut header = vec!["id".to_string()];
    header.extend(schema.names().iter().cloned());
    w.write_record(&header).map_err(io)?;
    for r in records {
        let mut row = vec![r.id.0.to_string()];
        for a in schema.ids() {
            row.push(
                r.value(a)
                    .and_then(|v| dict.key(v))
                    .unwrap_or("")
                    .to_string(),
            );
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Two-column `a_id,b_id` file of true links.
pub fn load_links(path: &Path, provenance: Provenance) -> Result<LinkedPairSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let mut pairs = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 2 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("expected 2 columns, found {}", row.len()),
            });
        }
        let parse = |s: &str| {
            s.trim().parse::<u64>().map(EntityId).map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("entity id `{s}` is not an unsigned integer"),
            })
        };
        pairs.push((parse(&row[0])?, parse(&row[1])?));
    }
    Ok(LinkedPairSet::new(pairs, provenance))
}

pub fn write_links(path: &Path, links: &LinkedPairSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "a_id,b_id").map_err(io)?;
    for (a, b) in links.pairs() {
        writeln!(w, "{a},{b}").map_err(io)?;
    }
    w.flush().map_err(io)
}
