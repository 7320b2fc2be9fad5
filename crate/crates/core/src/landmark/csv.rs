use std::fmt::Write as _;

use super::{FrameRecord, LandmarkLayout};
use crate::error::{Error, Result};

/// Token written for an undetected coordinate.
pub const MISSING_TOKEN: &str = "None";

/// Parses landmark CSV text. Line numbers in errors are 1-based.
pub fn parse_landmark_csv(text: &str, layout: &LandmarkLayout) -> Result<Vec<FrameRecord>> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let header = layout.csv_header();
    match lines.next() {
        Some((_, line)) if line == header => {}
        _ => return Err(Error::HeaderMismatch { line: 1 }),
    }
    let expected = layout.feature_count() + 3;
    let mut records = Vec::new();
    let mut pending_blank = None;
    for (line_no, line) in lines {
        if line.is_empty() {
            pending_blank.get_or_insert(line_no);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(Error::MalformedRow { line: blank, expected, found: 0 });
        }
        records.push(parse_row(line, line_no, expected)?);
    }
    Ok(records)
}

fn parse_row(line: &str, line_no: usize, expected: usize) -> Result<FrameRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::MalformedRow { line: line_no, expected, found: fields.len() });
    }
    let bad = |field: usize| Error::BadNumber { line: line_no, field, value: fields[field].to_owned() };
    let frame_index = fields[1].parse::<u64>().map_err(|_| bad(1))?;
    let features = fields[2..expected - 1]
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            if f == MISSING_TOKEN {
                Ok(None)
            } else {
                f.parse::<f32>().map(Some).map_err(|_| bad(i + 2))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameRecord {
        video_id: fields[0].to_owned(),
        frame_index,
        features,
        label: fields[expected - 1].to_owned(),
    })
}

/// Serializes records with the layout header; floats use the shortest text
/// that parses back to the same `f32`.
pub fn write_landmark_csv(records: &[FrameRecord], layout: &LandmarkLayout) -> String {
    let mut out = layout.csv_header();
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.video_id, r.frame_index);
        for v in &r.features {
            match v {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => {
                    out.push(',');
                    out.push_str(MISSING_TOKEN);
                }
            }
        }
        out.push(',');
        out.push_str(&r.label);
        out.push('\n');
    }
    out
}
