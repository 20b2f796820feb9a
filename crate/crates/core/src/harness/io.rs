//! Comma-separated file formats.
//!
//! Every file is a CSV table with a header row. Lines starting with `#` come
//! first and hold `key=value` metadata; readers skip them as comments.
//!
//! | file    | columns |
//! |---------|---------|
//! | world   | `query,response,reward` |
//! | policy  | `query,response,logit` |
//! | dataset | `query,y1,y2,label,clean_label,flipped` (labels 0/1, `eta` in metadata) |
//! | results | one column per [`SweepResult`] field; empty cells are absent values |
//! | trace   | `step,risk,grad_norm,margin_0,…` with run settings in metadata |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SweepResult;
use crate::error::{Error, Result};
use crate::noise::{DatasetRecord, NoisyDataset};
use crate::prefmodel::{Policy, QueryId, ResponseId, World};
use crate::trainer::TrainTrace;

pub type Metadata = BTreeMap<String, String>;

fn write_meta<W: Write>(w: &mut W, meta: &Metadata) -> Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

/// Splits leading `#` lines off as metadata and returns the rest of the text.
fn split_meta<R: Read>(r: R) -> Result<(Metadata, String)> {
    let mut meta = Metadata::new();
    let mut body = String::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("metadata line without '=': {line}"),
            })?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    Ok((meta, body))
}

fn write_grid<W: Write>(w: W, header: [&str; 3], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for (q, row) in rows.iter().enumerate() {
        for (r, v) in row.iter().enumerate() {
            out.serialize((q, r, v))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads `(query, response, value)` rows into a ragged table. Rows may come
/// in any order but every `(query, response)` in the table must appear once.
fn read_grid<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    for (i, rec) in reader.deserialize::<(QueryId, ResponseId, f64)>().enumerate() {
        let (QueryId(q), ResponseId(r), value) = rec?;
        if cells.len() <= q {
            cells.resize(q + 1, Vec::new());
        }
        if cells[q].len() <= r {
            cells[q].resize(r + 1, None);
        }
        if cells[q][r].replace(value).is_some() {
            return Err(Error::Parse { line: i + 2, msg: format!("duplicate entry for query {q}, response {r}") });
        }
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(q, row)| {
            row.into_iter()
                .enumerate()
                .map(|(r, v)| {
                    v.ok_or_else(|| Error::Parse { line: 0, msg: format!("missing entry for query {q}, response {r}") })
                })
                .collect()
        })
        .collect()
}

pub fn write_world<W: Write>(w: W, world: &World) -> Result<()> {
    write_grid(w, ["query", "response", "reward"], world.rewards())
}

pub fn read_world<R: Read>(r: R) -> Result<World> {
    World::new(read_grid(r)?)
}

pub fn write_policy<W: Write>(w: W, policy: &Policy) -> Result<()> {
    write_grid(w, ["query", "response", "logit"], policy.logits())
}

pub fn read_policy<R: Read>(r: R) -> Result<Policy> {
    Policy::new(read_grid(r)?)
}

pub fn write_dataset<W: Write>(mut w: W, data: &NoisyDataset) -> Result<()> {
    write_meta(&mut w, &Metadata::from([("eta".to_string(), data.eta().to_string())]))?;
    let mut out = csv::Writer::from_writer(w);
    for rec in data.records() {
        out.serialize(rec)?;
    }
    if data.is_empty() {
        out.write_record(["query", "y1", "y2", "label", "clean_label", "flipped"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<NoisyDataset> {
    let (meta, body) = split_meta(r)?;
    let eta = match meta.get("eta") {
        Some(v) => v.parse().map_err(|_| Error::Parse { line: 1, msg: format!("bad eta '{v}'") })?,
        None => 0.0,
    };
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let records = reader.deserialize().collect::<std::result::Result<Vec<DatasetRecord>, _>>()?;
    NoisyDataset::from_records(&records, eta)
}

pub fn results_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

pub fn write_results<W: Write>(w: W, rows: &[SweepResult]) -> Result<()> {
    let mut out = results_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<SweepResult>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    Ok(reader.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Writes the trace with `meta` on top; callers should include the clip bound.
pub fn write_trace<W: Write>(mut w: W, trace: &TrainTrace, meta: &Metadata) -> Result<()> {
    let mut meta = meta.clone();
    meta.insert("converged".into(), trace.converged.to_string());
    meta.insert("steps_taken".into(), trace.steps_taken.to_string());
    write_meta(&mut w, &meta)?;
    let n_margins = trace.steps.first().map_or(0, |s| s.margins.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "risk".into(), "grad_norm".into()];
    header.extend((0..n_margins).map(|i| format!("margin_{i}")));
    out.write_record(&header)?;
    for s in &trace.steps {
        let mut rec = vec![s.step.to_string(), s.risk.to_string(), s.grad_norm.to_string()];
        rec.extend(s.margins.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Trace rows as `(step, risk, grad_norm, margins)` plus the metadata.
pub type TraceRow = (usize, f64, f64, Vec<f64>);

pub fn read_trace<R: Read>(r: R) -> Result<(Metadata, Vec<TraceRow>)> {
    let (meta, body) = split_meta(r)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse { line: i + 2, msg };
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| bad(format!("missing column {j}")))?
                .parse()
                .map_err(|_| bad(format!("column {j} is not a number")))
        };
        let step = rec.get(0).unwrap_or_default().parse().map_err(|_| bad("bad step".into()))?;
        let margins = (3..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        rows.push((step, num(1)?, num(2)?, margins));
    }
    Ok((meta, rows))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}
