//! On-disk tag stream format.
//!
//! Tags are a CSV file with header `channel,timestamp_ps`; run metadata sits
//! next to it in `<stem>.meta.json`. Histograms are written as
//! `bin_index,tau_ps,count` CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sim::{StreamMeta, TagRecord, TagStream};
use crate::tagproc::BeatHistogram;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("metadata {path}: {msg}")]
    Meta { path: PathBuf, msg: String },
}

impl TagFileError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TagFileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// `runs/tags.csv` -> `runs/tags.meta.json`.
pub fn sidecar_path(tags: &Path) -> PathBuf {
    tags.with_extension("meta.json")
}

pub fn write_records<W: Write>(writer: W, records: &[TagRecord]) -> Result<(), TagFileError> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| TagFileError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        msg: e.to_string(),
    };
    w.write_record(["channel", "timestamp_ps"]).map_err(wrap)?;
    for r in records {
        w.write_record([r.channel.to_string(), r.timestamp_ps.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| TagFileError::Parse {
        line: 0,
        msg: e.to_string(),
    })
}

/// Parses tag records. Errors name the offending line (the header is line 1).
pub fn read_records<R: Read>(reader: R) -> Result<Vec<TagRecord>, TagFileError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.byte_headers().map_err(|e| TagFileError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != b"channel" || &headers[1] != b"timestamp_ps" {
        return Err(TagFileError::Parse {
            line: 1,
            msg: format!(
                "expected header `channel,timestamp_ps`, got `{}`",
                headers
                    .iter()
                    .map(String::from_utf8_lossy)
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        });
    }
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(TagFileError::Parse {
                    line: e.position().map_or(0, |p| p.line()),
                    msg: e.to_string(),
                })
            }
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(TagFileError::Parse {
                line,
                msg: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let field = |i: usize, name: &str| -> Result<&str, TagFileError> {
            std::str::from_utf8(&rec[i])
                .map(str::trim)
                .map_err(|_| TagFileError::Parse {
                    line,
                    msg: format!("{name} is not valid UTF-8"),
                })
        };
        let channel = field(0, "channel")?;
        let channel = channel.parse::<u16>().map_err(|e| TagFileError::Parse {
            line,
            msg: format!("channel `{channel}`: {e}"),
        })?;
        let ts = field(1, "timestamp_ps")?;
        let timestamp_ps = ts.parse::<u64>().map_err(|e| TagFileError::Parse {
            line,
            msg: format!("timestamp_ps `{ts}`: {e}"),
        })?;
        out.push(TagRecord { timestamp_ps, channel });
    }
    Ok(out)
}

pub fn read_meta(path: &Path) -> Result<StreamMeta, TagFileError> {
    let text = std::fs::read_to_string(path).map_err(|e| TagFileError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TagFileError::Meta {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Writes the tags CSV and its metadata sidecar.
pub fn write_stream(path: &Path, stream: &TagStream) -> Result<PathBuf, TagFileError> {
    let file = File::create(path).map_err(|e| TagFileError::io(path, e))?;
    write_records(BufWriter::new(file), &stream.records)?;
    let meta_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(&stream.meta).expect("metadata serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| TagFileError::io(&meta_path, e))?;
    Ok(meta_path)
}

/// Reads a tags CSV and, when present, its sidecar metadata.
pub fn read_stream(path: &Path) -> Result<(Vec<TagRecord>, Option<StreamMeta>), TagFileError> {
    let file = File::open(path).map_err(|e| TagFileError::io(path, e))?;
    let records = read_records(BufReader::new(file))?;
    let meta_path = sidecar_path(path);
    let meta = if meta_path.exists() {
        Some(read_meta(&meta_path)?)
    } else {
        None
    };
    Ok((records, meta))
}

pub fn write_histogram<W: Write>(writer: W, hist: &BeatHistogram) -> Result<(), TagFileError> {
    let mut w = BufWriter::new(writer);
    let io = |e| TagFileError::Io {
        path: PathBuf::from("<histogram>"),
        source: e,
    };
    writeln!(w, "bin_index,tau_ps,count").map_err(io)?;
    for (k, count) in hist.counts.iter().enumerate() {
        writeln!(w, "{k},{},{count}", hist.bin_center_ps(k)).map_err(io)?;
    }
    w.flush().map_err(io)
}
