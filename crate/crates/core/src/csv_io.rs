//! CSV ingestion and canonical serialization.
//!
//! Cohort files carry one sample per row: `athlete_id, timestamp, sex, label`
//! followed by one column per marker. Detection-limit flags are encoded
//! either as sentinel strings (`<LOQ` / `<LOD`) in the value column or in
//! `<marker>_flag` companion columns, selected by [`FlagEncoding`]. Missing
//! values are `NA`. Baseline files drop the athlete/timestamp/label columns.
//!
//! Serialization is canonical — stable column order, shortest round-trip
//! float formatting — so ingest → serialize → ingest is the identity.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::markers::{LimitFlag, MarkerId, MarkerKind, Sex, ALL_MARKERS};
use crate::profile::{
    AthleteSeries, BaselineSample, Label, Measurement, ProfileCollection, RawSample,
};

const MISSING: &str = "NA";

/// How detection-limit flags are written in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagEncoding {
    /// `<LOQ` / `<LOD` sentinel strings in the value column itself.
    Sentinel,
    /// A `<marker>_flag` column next to each concentration column.
    FlagColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CsvSchema {
    pub flag_encoding: FlagEncoding,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { flag_encoding: FlagEncoding::Sentinel }
    }
}

/// A row that failed validation, with the 1-based line number and the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Result of an ingestion pass: the collection plus every rejected row.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub collection: ProfileCollection,
    pub rejects: Vec<RejectedRow>,
}

struct Header {
    athlete_id: usize,
    timestamp: usize,
    sex: usize,
    label: Option<usize>,
    markers: Vec<(MarkerId, usize)>,
    flags: BTreeMap<MarkerId, usize>,
}

fn parse_header(headers: &csv::StringRecord, cohort: bool) -> Result<Header> {
    let mut athlete_id = None;
    let mut timestamp = None;
    let mut sex = None;
    let mut label = None;
    let mut markers = Vec::new();
    let mut flags = BTreeMap::new();
    for (idx, name) in headers.iter().enumerate() {
        match name {
            "athlete_id" => athlete_id = Some(idx),
            "timestamp" => timestamp = Some(idx),
            "sex" => sex = Some(idx),
            "label" => label = Some(idx),
            other => {
                if let Some(m) = MarkerId::from_column_name(other) {
                    markers.push((m, idx));
                } else if let Some(stem) = other.strip_suffix("_flag") {
                    match MarkerId::from_column_name(stem) {
                        Some(m) if m.kind() == MarkerKind::Concentration => {
                            flags.insert(m, idx);
                        }
                        _ => {
                            return Err(Error::UnknownMarkerColumn { column: other.to_string() })
                        }
                    }
                } else {
                    return Err(Error::UnknownMarkerColumn { column: other.to_string() });
                }
            }
        }
    }
    let missing = |what: &str| Error::MalformedRow {
        line: 1,
        reason: format!("header is missing required column `{what}`"),
    };
    if cohort {
        Ok(Header {
            athlete_id: athlete_id.ok_or_else(|| missing("athlete_id"))?,
            timestamp: timestamp.ok_or_else(|| missing("timestamp"))?,
            sex: sex.ok_or_else(|| missing("sex"))?,
            label,
            markers,
            flags,
        })
    } else {
        Ok(Header {
            athlete_id: 0,
            timestamp: 0,
            sex: sex.ok_or_else(|| missing("sex"))?,
            label: None,
            markers,
            flags,
        })
    }
}

fn parse_cell(
    record: &csv::StringRecord,
    header: &Header,
    marker: MarkerId,
    col: usize,
    schema: &CsvSchema,
) -> std::result::Result<Option<Measurement>, String> {
    let raw = record.get(col).unwrap_or("").trim();
    if raw.is_empty() || raw == MISSING {
        return Ok(None);
    }
    let mut flag = LimitFlag::Measured;
    match schema.flag_encoding {
        FlagEncoding::Sentinel => {
            if raw == "<LOQ" {
                return Ok(Some(Measurement { value: 0.0, flag: LimitFlag::BelowLoq }));
            }
            if raw == "<LOD" {
                return Ok(Some(Measurement { value: 0.0, flag: LimitFlag::BelowLod }));
            }
        }
        FlagEncoding::FlagColumns => {
            if let Some(&fcol) = header.flags.get(&marker) {
                match record.get(fcol).unwrap_or("").trim() {
                    "" => {}
                    "<LOQ" => flag = LimitFlag::BelowLoq,
                    "<LOD" => flag = LimitFlag::BelowLod,
                    other => return Err(format!("unknown flag `{other}` for {marker}")),
                }
            }
        }
    }
    let value: f64 = raw
        .parse()
        .map_err(|_| format!("cannot parse `{raw}` as a number for {marker}"))?;
    if flag == LimitFlag::Measured && value <= 0.0 {
        return Err(format!("non-positive measured value {value} for {marker}"));
    }
    Ok(Some(Measurement { value, flag }))
}

/// Ingest a cohort CSV. Rows that fail validation land in the rejects list;
/// duplicated (athlete, timestamp) pairs abort the whole ingest.
pub fn ingest_cohort_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let header = parse_header(&headers, true)?;

    let mut order: Vec<String> = Vec::new();
    let mut athletes: BTreeMap<String, AthleteSeries> = BTreeMap::new();
    let mut rejects = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejects.push(RejectedRow { line, reason: e.to_string() });
                continue;
            }
        };
        if record.len() != headers.len() {
            rejects.push(RejectedRow {
                line,
                reason: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
            continue;
        }
        let athlete_id = record.get(header.athlete_id).unwrap_or("").trim().to_string();
        if athlete_id.is_empty() {
            rejects.push(RejectedRow { line, reason: "empty athlete_id".into() });
            continue;
        }
        let timestamp: u64 = match record.get(header.timestamp).unwrap_or("").trim().parse() {
            Ok(t) => t,
            Err(_) => {
                rejects.push(RejectedRow { line, reason: "unparseable timestamp".into() });
                continue;
            }
        };
        let sex = match Sex::parse(record.get(header.sex).unwrap_or("")) {
            Some(s) => s,
            None => {
                rejects.push(RejectedRow { line, reason: "unknown sex".into() });
                continue;
            }
        };
        let true_label = match header.label {
            Some(col) => {
                let cell = record.get(col).unwrap_or("").trim();
                if cell.is_empty() || cell == MISSING {
                    None
                } else {
                    match Label::parse(cell) {
                        Some(l) => Some(l),
                        None => {
                            rejects.push(RejectedRow {
                                line,
                                reason: format!("unknown label `{cell}`"),
                            });
                            continue;
                        }
                    }
                }
            }
            None => None,
        };

        let mut values = BTreeMap::new();
        let mut row_error = None;
        for &(marker, col) in &header.markers {
            match parse_cell(&record, &header, marker, col, schema) {
                Ok(Some(m)) => {
                    values.insert(marker, m);
                }
                Ok(None) => {}
                Err(reason) => {
                    row_error = Some(reason);
                    break;
                }
            }
        }
        if let Some(reason) = row_error {
            rejects.push(RejectedRow { line, reason });
            continue;
        }

        let entry = athletes.entry(athlete_id.clone()).or_insert_with(|| {
            order.push(athlete_id.clone());
            AthleteSeries { athlete_id: athlete_id.clone(), sex, samples: Vec::new() }
        });
        if entry.sex != sex {
            rejects.push(RejectedRow {
                line,
                reason: format!("sex conflicts with earlier rows for `{athlete_id}`"),
            });
            continue;
        }
        if entry.samples.iter().any(|s| s.timestamp == timestamp) {
            return Err(Error::DuplicateTimestamp { athlete_id, timestamp });
        }
        entry.samples.push(RawSample { athlete_id: athlete_id.clone(), timestamp, sex, values, true_label });
    }

    let mut collection = ProfileCollection::default();
    for id in order {
        let mut series = athletes.remove(&id).expect("inserted above");
        series.samples.sort_by_key(|s| s.timestamp);
        collection.athletes.push(series);
    }
    Ok(IngestReport { collection, rejects })
}

/// Ingest a baseline CSV (`sex` + marker columns, one volunteer per row).
pub fn ingest_baseline_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<BaselineSample>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let header = parse_header(&headers, false)?;
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::MalformedRow { line, reason: e.to_string() })?;
        let sex = Sex::parse(record.get(header.sex).unwrap_or(""))
            .ok_or_else(|| Error::MalformedRow { line, reason: "unknown sex".into() })?;
        let mut values = BTreeMap::new();
        for &(marker, col) in &header.markers {
            match parse_cell(&record, &header, marker, col, schema) {
                Ok(Some(m)) => {
                    values.insert(marker, m);
                }
                Ok(None) => {}
                Err(reason) => return Err(Error::MalformedRow { line, reason }),
            }
        }
        out.push(BaselineSample { sex, values });
    }
    Ok(out)
}

fn markers_in_use<'a>(samples: impl Iterator<Item = &'a BTreeMap<MarkerId, Measurement>>) -> Vec<MarkerId> {
    let mut present = [false; ALL_MARKERS.len()];
    for values in samples {
        for marker in values.keys() {
            present[marker.canonical_index()] = true;
        }
    }
    ALL_MARKERS.iter().copied().filter(|m| present[m.canonical_index()]).collect()
}

fn format_cell(
    m: Option<&Measurement>,
    marker: MarkerId,
    schema: &CsvSchema,
) -> (String, Option<String>) {
    let flag_cell = |f: LimitFlag| match f {
        LimitFlag::Measured => String::new(),
        other => other.as_str().to_string(),
    };
    match (m, schema.flag_encoding) {
        (None, FlagEncoding::Sentinel) => (MISSING.to_string(), None),
        (None, FlagEncoding::FlagColumns) => {
            let f = (marker.kind() == MarkerKind::Concentration).then(String::new);
            (MISSING.to_string(), f)
        }
        (Some(m), FlagEncoding::Sentinel) => {
            let text = match m.flag {
                LimitFlag::Measured => m.value.to_string(),
                other => other.as_str().to_string(),
            };
            (text, None)
        }
        (Some(m), FlagEncoding::FlagColumns) => {
            let f = (marker.kind() == MarkerKind::Concentration).then(|| flag_cell(m.flag));
            (m.value.to_string(), f)
        }
    }
}

fn write_header<W: Write>(
    wtr: &mut csv::Writer<W>,
    fixed: &[&str],
    markers: &[MarkerId],
    schema: &CsvSchema,
) -> Result<()> {
    let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for &m in markers {
        cols.push(m.column_name().to_string());
        if schema.flag_encoding == FlagEncoding::FlagColumns
            && m.kind() == MarkerKind::Concentration
        {
            cols.push(format!("{}_flag", m.column_name()));
        }
    }
    wtr.write_record(&cols).map_err(io_error)
}

fn io_error(e: csv::Error) -> Error {
    Error::MalformedRow { line: 0, reason: e.to_string() }
}

/// Serialize the athletes of a collection in canonical form.
pub fn write_cohort_csv<W: Write>(
    collection: &ProfileCollection,
    schema: &CsvSchema,
    writer: W,
) -> Result<()> {
    let markers =
        markers_in_use(collection.athletes.iter().flat_map(|a| a.samples.iter()).map(|s| &s.values));
    let mut wtr = csv::Writer::from_writer(writer);
    write_header(&mut wtr, &["athlete_id", "timestamp", "sex", "label"], &markers, schema)?;
    for athlete in &collection.athletes {
        for s in &athlete.samples {
            let mut row = vec![
                s.athlete_id.clone(),
                s.timestamp.to_string(),
                s.sex.as_str().to_string(),
                s.true_label.map(|l| l.as_str().to_string()).unwrap_or_else(|| MISSING.into()),
            ];
            for &m in &markers {
                let (value, flag) = format_cell(s.values.get(&m), m, schema);
                row.push(value);
                if let Some(f) = flag {
                    row.push(f);
                }
            }
            wtr.write_record(&row).map_err(io_error)?;
        }
    }
    wtr.flush().map_err(|e| Error::MalformedRow { line: 0, reason: e.to_string() })
}

/// Serialize the baseline population in canonical form.
pub fn write_baseline_csv<W: Write>(
    baseline: &[BaselineSample],
    schema: &CsvSchema,
    writer: W,
) -> Result<()> {
    let markers = markers_in_use(baseline.iter().map(|b| &b.values));
    let mut wtr = csv::Writer::from_writer(writer);
    write_header(&mut wtr, &["sex"], &markers, schema)?;
    for b in baseline {
        let mut row = vec![b.sex.as_str().to_string()];
        for &m in &markers {
            let (value, flag) = format_cell(b.values.get(&m), m, schema);
            row.push(value);
            if let Some(f) = flag {
                row.push(f);
            }
        }
        wtr.write_record(&row).map_err(io_error)?;
    }
    wtr.flush().map_err(|e| Error::MalformedRow { line: 0, reason: e.to_string() })
}
