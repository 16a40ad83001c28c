use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, InteractionRecord, ViewSpec};
use crate::error::{Error, Result};

const CSV_HEADER: [&str; 5] = ["student_id", "attempt", "view", "material_id", "value"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` selects JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Declared properties of one view, used at ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSchema {
    pub name: String,
    #[serde(default = "default_graded")]
    pub graded: bool,
    /// Raw score maximum; graded values are divided by it.
    #[serde(default = "default_max_score")]
    pub max_score: f64,
    /// Fixed material registry; defaults to the observed ids in lexical order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<Vec<String>>,
}

fn default_graded() -> bool {
    true
}

fn default_max_score() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub views: Vec<ViewSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub students: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// When absent for CSV input, `<path>.schema.json` is used if it exists;
    /// otherwise views are ordered lexically and a view is non-graded iff every
    /// value in it is exactly 1.
    pub schema: Option<DatasetSchema>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    student_id: String,
    attempt: usize,
    view: String,
    material_id: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    views: Vec<ViewSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    students: Option<Vec<String>>,
    records: Vec<RawRecord>,
}

pub(crate) fn schema_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".schema.json");
    PathBuf::from(name)
}

pub fn load_dataset(path: &Path, format: Format, opts: &LoadOptions) -> Result<Dataset> {
    match format {
        Format::Csv => {
            let raw = read_csv(path)?;
            let schema = match &opts.schema {
                Some(s) => Some(s.clone()),
                None => {
                    let sidecar = schema_sidecar(path);
                    if sidecar.exists() {
                        let text = std::fs::read_to_string(&sidecar)
                            .map_err(|e| Error::io(&sidecar, e))?;
                        Some(serde_json::from_str(&text)?)
                    } else {
                        None
                    }
                }
            };
            assemble(raw, schema)
        }
        Format::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let json: JsonDataset = serde_json::from_str(&text)?;
            let schema = opts.schema.clone().unwrap_or(DatasetSchema {
                views: json.views,
                students: json.students,
            });
            let raw = json
                .records
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i as u64 + 1, r))
                .collect();
            assemble(raw, Some(schema))
        }
    }
}

fn read_csv(path: &Path) -> Result<Vec<(u64, RawRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), header),
        });
    }
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(e, line)
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse { line, message: format!("expected 5 fields, found {}", row.len()) });
        }
        let attempt = row[1].trim().parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("attempt {:?}: {e}", &row[1]),
        })?;
        let value = row[4].trim().parse::<f64>().map_err(|e| Error::Parse {
            line,
            message: format!("value {:?}: {e}", &row[4]),
        })?;
        rows.push((
            line,
            RawRecord {
                student_id: row[0].trim().to_string(),
                attempt,
                view: row[2].trim().to_string(),
                material_id: row[3].trim().to_string(),
                value,
            },
        ));
    }
    Ok(rows)
}

fn csv_error(e: csv::Error, line: u64) -> Error {
    Error::Parse { line, message: e.to_string() }
}

fn assemble(raw: Vec<(u64, RawRecord)>, schema: Option<DatasetSchema>) -> Result<Dataset> {
    let schema = match schema {
        Some(s) => s,
        None => infer_schema(&raw),
    };
    let view_index: HashMap<&str, usize> = schema
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    for v in &schema.views {
        if !(v.max_score.is_finite() && v.max_score > 0.0) {
            return Err(Error::Config(format!("view {:?}: max_score must be positive", v.name)));
        }
    }

    let student_ids: Vec<String> = match &schema.students {
        Some(ids) => ids.clone(),
        None => raw
            .iter()
            .map(|(_, r)| r.student_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut material_ids: Vec<Vec<String>> = Vec::with_capacity(schema.views.len());
    for (r, v) in schema.views.iter().enumerate() {
        material_ids.push(match &v.materials {
            Some(ids) => ids.clone(),
            None => raw
                .iter()
                .filter(|(_, rec)| view_index.get(rec.view.as_str()) == Some(&r))
                .map(|(_, rec)| rec.material_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        });
    }

    let student_index: HashMap<&str, usize> =
        student_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let material_index: Vec<HashMap<&str, usize>> = material_ids
        .iter()
        .map(|ids| ids.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect())
        .collect();

    let mut records = Vec::with_capacity(raw.len());
    let mut seen: HashMap<(usize, usize), u64> = HashMap::with_capacity(raw.len());
    for (line, r) in &raw {
        let line = *line;
        let view = *view_index.get(r.view.as_str()).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown view {:?}", r.view),
        })?;
        let student = *student_index.get(r.student_id.as_str()).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown student {:?}", r.student_id),
        })?;
        let material = *material_index[view].get(r.material_id.as_str()).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown material {:?} in view {:?}", r.material_id, r.view),
        })?;
        let vs = &schema.views[view];
        let value = if vs.graded { r.value / vs.max_score } else { r.value };
        if vs.graded && !(value.is_finite() && (0.0..=1.0).contains(&value)) {
            return Err(Error::Range(format!(
                "line {line}: graded value {} outside [0, {}]",
                r.value, vs.max_score
            )));
        }
        if let Some(prev) = seen.insert((student, r.attempt), line) {
            return Err(Error::Integrity(format!(
                "line {line}: student {:?} already has an interaction at attempt {} (line {prev})",
                r.student_id, r.attempt
            )));
        }
        records.push(InteractionRecord { student, attempt: r.attempt, view, material, value });
    }

    let views = schema
        .views
        .iter()
        .enumerate()
        .map(|(r, v)| ViewSpec {
            view_id: r,
            name: v.name.clone(),
            graded: v.graded,
            num_materials: material_ids[r].len(),
        })
        .collect();
    Dataset::new(views, records, student_ids, material_ids)
}

fn infer_schema(raw: &[(u64, RawRecord)]) -> DatasetSchema {
    let names: BTreeSet<&str> = raw.iter().map(|(_, r)| r.view.as_str()).collect();
    let views = names
        .into_iter()
        .map(|name| ViewSchema {
            name: name.to_string(),
            graded: raw.iter().any(|(_, r)| r.view == name && r.value != 1.0),
            max_score: 1.0,
            materials: None,
        })
        .collect();
    DatasetSchema { views, students: None }
}

/// Registry-complete schema of `ds` (values already normalized, so `max_score` is 1).
pub(crate) fn dataset_schema(ds: &Dataset) -> DatasetSchema {
    DatasetSchema {
        views: ds
            .views()
            .iter()
            .map(|v| ViewSchema {
                name: v.name.clone(),
                graded: v.graded,
                max_score: 1.0,
                materials: Some(ds.material_ids(v.view_id).to_vec()),
            })
            .collect(),
        students: Some(ds.student_ids().to_vec()),
    }
}

fn raw_records(ds: &Dataset) -> impl Iterator<Item = RawRecord> + '_ {
    ds.records().iter().map(|r| RawRecord {
        student_id: ds.student_ids()[r.student].clone(),
        attempt: r.attempt,
        view: ds.view(r.view).name.clone(),
        material_id: ds.material_ids(r.view)[r.material].clone(),
        value: r.value,
    })
}

/// Writes `ds`; CSV output is accompanied by a `<path>.schema.json` sidecar holding
/// the view flags and registries so that loading it back yields an equal dataset.
pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut writer = csv::Writer::from_writer(BufWriter::new(file));
            let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
            writer.write_record(CSV_HEADER).map_err(io_err)?;
            for r in raw_records(ds) {
                writer
                    .write_record([
                        r.student_id,
                        r.attempt.to_string(),
                        r.view,
                        r.material_id,
                        r.value.to_string(),
                    ])
                    .map_err(io_err)?;
            }
            writer.flush().map_err(|e| Error::io(path, e))?;
            let sidecar = schema_sidecar(path);
            write_json(&sidecar, &dataset_schema(ds))
        }
        Format::Json => {
            let schema = dataset_schema(ds);
            let json = JsonDataset {
                views: schema.views,
                students: schema.students,
                records: raw_records(ds).collect(),
            };
            write_json(path, &json)
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
