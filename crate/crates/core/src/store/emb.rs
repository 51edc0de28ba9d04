//! EMB1 binary embedding files and the CSV fallback.
//!
//! EMB1 layout, all integers little-endian:
//!
//! ```text
//! "EMB1" | u32 dim | u32 row_count |
//!   row_count x ( u16 id_len | id bytes (UTF-8) | u8 flag | dim x f32 )
//! ```
//!
//! `flag` is 0 for an absent modality (values must be zero), 1 for a present
//! vector and 2 for a present vector that is allowed to be all zeros.
//! The CSV fallback has the header `item_id,present,v0,...,v{dim-1}` and uses
//! the same flag values in the `present` column.

use std::collections::HashSet;
use std::io::{Read, Write};

use super::{EmbeddingRecord, ModalityId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

/// Reads EMB1 (detected by magic) or CSV records for one modality, in file
/// order.
pub fn load_embeddings<T: Scalar, R: Read>(
    mut source: R,
    expected: &ModalityId,
) -> Result<Vec<EmbeddingRecord<T>>> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let records = if buf.starts_with(EMB1_MAGIC) {
        parse_emb1(&buf, expected)?
    } else {
        parse_csv(&buf, expected)?
    };
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.item_id.as_str()) {
            return Err(Error::Duplicate(r.item_id.clone()));
        }
    }
    Ok(records)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated stream while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn finish_record<T: Scalar>(
    row: usize,
    item_id: String,
    flag: u8,
    vector: Vec<T>,
    expected: &ModalityId,
) -> Result<EmbeddingRecord<T>> {
    match flag {
        0 => {
            if vector.iter().any(|v| !v.is_zero()) {
                return Err(Error::Format(format!(
                    "row {row} (`{item_id}`): absent row carries nonzero values"
                )));
            }
            Ok(EmbeddingRecord::absent(item_id, expected))
        }
        1 => EmbeddingRecord::present(item_id, expected, vector),
        2 => Ok(EmbeddingRecord {
            item_id,
            modality: expected.clone(),
            vector,
            present: true,
            allow_zero: true,
        }),
        f => Err(Error::Format(format!("row {row}: unknown presence flag {f}"))),
    }
}

fn parse_emb1<T: Scalar>(buf: &[u8], expected: &ModalityId) -> Result<Vec<EmbeddingRecord<T>>> {
    let mut cur = Cursor { buf, pos: 4 };
    let dim = cur.u32("dim")? as usize;
    if dim != expected.dim {
        return Err(Error::dim(
            format!("EMB1 header for `{}`", expected.name),
            dim,
            expected.dim,
        ));
    }
    let rows = cur.u32("row count")? as usize;
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "item id")?)
            .map_err(|_| Error::Format(format!("row {row}: item id is not UTF-8")))?
            .to_owned();
        let flag = cur.u8("presence flag")?;
        let raw = cur.take(4 * dim, "vector values")?;
        let vector: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        if let Some(bad) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("row {row}: value {bad} is not finite")));
        }
        out.push(finish_record(row, id, flag, vector, expected)?);
    }
    if cur.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {rows} rows",
            buf.len() - cur.pos
        )));
    }
    Ok(out)
}

fn parse_csv<T: Scalar>(buf: &[u8], expected: &ModalityId) -> Result<Vec<EmbeddingRecord<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(buf);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .clone();
    if headers.get(0) != Some("item_id") || headers.get(1) != Some("present") {
        return Err(Error::Format(
            "csv header must start with `item_id,present`".into(),
        ));
    }
    let header_dim = headers.len().saturating_sub(2);
    if header_dim != expected.dim {
        return Err(Error::dim(
            format!("csv header for `{}`", expected.name),
            header_dim,
            expected.dim,
        ));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("csv row {row}: {e}")))?;
        let got = rec.len().saturating_sub(2);
        if got != expected.dim {
            return Err(Error::dim(format!("csv row {row}"), got, expected.dim));
        }
        let id = rec[0].to_owned();
        let flag: u8 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("csv row {row}: bad presence flag `{}`", &rec[1])))?;
        let vector = rec
            .iter()
            .skip(2)
            .map(|s| {
                // stored as f32 on disk in both formats
                s.trim()
                    .parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| T::of(v as f64))
                    .ok_or_else(|| Error::Format(format!("csv row {row}: bad value `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        out.push(finish_record(row, id, flag, vector, expected)?);
    }
    Ok(out)
}

/// Writes records in EMB1. Values are narrowed to `f32`.
pub fn save_embeddings<T: Scalar, W: Write>(
    records: &[EmbeddingRecord<T>],
    dim: usize,
    mut sink: W,
) -> Result<()> {
    let rows = u32::try_from(records.len())
        .map_err(|_| Error::Format("too many rows for EMB1".into()))?;
    let mut buf = Vec::with_capacity(12 + records.len() * (3 + 16 + 4 * dim));
    buf.extend_from_slice(EMB1_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    for (row, r) in records.iter().enumerate() {
        if r.vector.len() != dim {
            return Err(Error::dim(format!("row {row}"), r.vector.len(), dim));
        }
        let id = r.item_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Format(format!("row {row}: item id longer than 65535 bytes")))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.push(r.flag());
        for v in &r.vector {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn save_csv<T: Scalar, W: Write>(
    records: &[EmbeddingRecord<T>],
    dim: usize,
    sink: W,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("csv write: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["item_id".to_owned(), "present".to_owned()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.item_id.clone(), r.flag().to_string()];
        row.extend(r.vector.iter().map(|v| (v.as_f64() as f32).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modality(dim: usize) -> ModalityId {
        ModalityId::new("title", dim).unwrap()
    }

    fn rows(m: &ModalityId, n: usize) -> Vec<EmbeddingRecord<f64>> {
        (0..n)
            .map(|i| {
                let v = (0..m.dim).map(|j| (i * m.dim + j) as f64 * 0.25 + 1.0).collect();
                EmbeddingRecord::present(format!("item{i}"), m, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn emb1_three_rows_of_768() {
        let m = modality(768);
        let mut buf = Vec::new();
        save_embeddings(&rows(&m, 3), 768, &mut buf).unwrap();
        let back: Vec<EmbeddingRecord<f64>> = load_embeddings(&buf[..], &m).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.iter().all(|r| r.vector.len() == 768 && r.present));
        assert_eq!(back[2].item_id, "item2");
    }

    #[test]
    fn absent_row_is_zero_sentinel() {
        let m = modality(768);
        let mut recs = rows(&m, 2);
        recs.push(EmbeddingRecord::absent("gone", &m));
        let mut buf = Vec::new();
        save_embeddings(&recs, 768, &mut buf).unwrap();
        let back: Vec<EmbeddingRecord<f64>> = load_embeddings(&buf[..], &m).unwrap();
        assert!(!back[2].present);
        assert_eq!(back[2].vector, vec![0.0; 768]);
    }

    #[test]
    fn header_dim_mismatch() {
        let m = modality(768);
        let mut buf = Vec::new();
        save_embeddings(&rows(&m, 1), 768, &mut buf).unwrap();
        let err = load_embeddings::<f64, _>(&buf[..], &modality(767)).unwrap_err();
        assert!(matches!(err, Error::Dim { got: 768, want: 767, .. }), "{err}");
    }

    #[test]
    fn short_binary_row_is_truncation() {
        let m = modality(768);
        let mut buf = Vec::new();
        save_embeddings(&rows(&m, 1), 768, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        let err = load_embeddings::<f64, _>(&buf[..], &m).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn short_csv_row_is_dim_error() {
        let m = modality(768);
        let mut csv = String::from("item_id,present");
        for i in 0..768 {
            csv.push_str(&format!(",v{i}"));
        }
        csv.push('\n');
        csv.push_str("a,1");
        for _ in 0..768 {
            csv.push_str(",0.5");
        }
        csv.push_str("\nb,1");
        for _ in 0..767 {
            csv.push_str(",0.5");
        }
        csv.push('\n');
        let err = load_embeddings::<f64, _>(csv.as_bytes(), &m).unwrap_err();
        assert!(
            matches!(err, Error::Dim { got: 767, want: 768, ref context } if context == "csv row 1"),
            "{err}"
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = modality(2);
        let recs = vec![
            EmbeddingRecord::present("x", &m, vec![1.0f64, 2.0]).unwrap(),
            EmbeddingRecord::present("x", &m, vec![3.0, 4.0]).unwrap(),
        ];
        let mut buf = Vec::new();
        save_embeddings(&recs, 2, &mut buf).unwrap();
        let err = load_embeddings::<f64, _>(&buf[..], &m).unwrap_err();
        assert!(matches!(err, Error::Duplicate(ref id) if id == "x"));
    }

    #[test]
    fn csv_round_trip_matches_binary() {
        let m = modality(3);
        let mut recs = rows(&m, 4);
        recs.push(EmbeddingRecord::absent("none", &m));
        let mut csv = Vec::new();
        save_csv(&recs, 3, &mut csv).unwrap();
        let from_csv: Vec<EmbeddingRecord<f64>> = load_embeddings(&csv[..], &m).unwrap();
        assert_eq!(from_csv, recs);
    }

    #[test]
    fn present_all_zero_needs_allow_zero() {
        let m = modality(2);
        let mut buf = Vec::new();
        let rec = EmbeddingRecord {
            item_id: "z".into(),
            modality: m.clone(),
            vector: vec![0.0f64; 2],
            present: true,
            allow_zero: true,
        };
        save_embeddings(std::slice::from_ref(&rec), 2, &mut buf).unwrap();
        let back: Vec<EmbeddingRecord<f64>> = load_embeddings(&buf[..], &m).unwrap();
        assert_eq!(back[0], rec);
        // flip flag byte from 2 to 1
        let flag_pos = 12 + 2 + 1;
        buf[flag_pos] = 1;
        assert!(load_embeddings::<f64, _>(&buf[..], &m).is_err());
    }
}
