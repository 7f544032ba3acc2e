//! Dataset loaders (delimited text and IDX) and atomic file output.
//!
//! CSV: comma separated, optional header line, one instance per row. The
//! label column may be any column and may hold arbitrary tokens; labels are
//! remapped to `0..K` in order of first occurrence. Values are written back
//! with 17 significant digits so a round trip is exact.
//!
//! IDX: big-endian magic `0x00000803` (u8 images, rank 3) and `0x00000801`
//! (u8 labels, rank 1), optionally gzip-compressed. Pixels are scaled to
//! `[0, 1]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DataMatrix, FeatureKind};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    Last,
    Index(usize),
    None,
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "none" => Ok(Self::None),
            other => other
                .parse()
                .map(Self::Index)
                .map_err(|_| Error::invalid(format!("label column must be last, none or an index, got {other:?}"))),
        }
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path, label_column: LabelColumn) -> Result<DataMatrix> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "not UTF-8 text".into(),
    })?;
    parse_csv(&text, label_column, path)
}

pub fn parse_csv(text: &str, label_column: LabelColumn, path: &Path) -> Result<DataMatrix> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width = None;
    let mut first_data = true;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let label_idx = match label_column {
            LabelColumn::Last => Some(fields.len() - 1),
            LabelColumn::Index(i) => {
                if i >= fields.len() {
                    return Err(parse_err(
                        lineno,
                        format!("label column {i} beyond {} fields", fields.len()),
                    ));
                }
                Some(i)
            }
            LabelColumn::None => None,
        };
        let mut values = Vec::with_capacity(fields.len());
        let mut bad = None;
        for (c, f) in fields.iter().enumerate() {
            if Some(c) == label_idx {
                continue;
            }
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    bad = Some((c, *f));
                    break;
                }
            }
        }
        if let Some((c, f)) = bad {
            if first_data {
                // header line
                first_data = false;
                continue;
            }
            return Err(parse_err(
                lineno,
                format!("field {} is not a finite number: {f:?}", c + 1),
            ));
        }
        first_data = false;
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {w} fields, found {}", fields.len()),
                ));
            }
            _ => {}
        }
        if let Some(l) = label_idx {
            raw_labels.push(fields[l].to_string());
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no feature columns".into(),
        });
    }
    let values =
        Array2::from_shape_vec((rows.len(), d), rows.into_iter().flatten().collect()).expect("rows have equal width");
    let labels = (label_column != LabelColumn::None).then(|| remap_labels(&raw_labels));
    DataMatrix::new(values, labels, FeatureKind::Continuous)
}

/// Maps label tokens to `0..K` by first occurrence.
pub fn remap_labels<S: AsRef<str>>(raw: &[S]) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = ids.len();
            *ids.entry(s.as_ref()).or_insert(next)
        })
        .collect()
}

/// CSV with 17 significant digits per value; labels (if any) go last.
pub fn write_csv(path: &Path, data: &DataMatrix) -> Result<()> {
    write_atomic(path, format_csv(data).as_bytes())
}

pub fn format_csv(data: &DataMatrix) -> String {
    let mut out = String::new();
    for (i, row) in data.values().rows().into_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        if let Some(labels) = data.labels() {
            write!(out, ",{}", labels[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = read_file(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(buf[at..at + 4].try_into().unwrap())
}

fn idx_payload<'a>(buf: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let fmt = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if buf.len() < 4 {
        return Err(fmt("file shorter than the IDX header".into()));
    }
    let found = be_u32(buf, 0);
    if found != magic {
        return Err(fmt(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if buf.len() < header {
        return Err(fmt("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..rank).map(|r| be_u32(buf, 4 + 4 * r) as usize).collect();
    let expected: usize = dims.iter().product();
    let body = &buf[header..];
    if body.len() != expected {
        return Err(fmt(format!("{} payload bytes for dimensions {dims:?}", body.len())));
    }
    Ok((dims, body))
}

/// Flattened images scaled to `[0,1]` with their labels. With `limit`, a
/// uniform subsample of that many rows (kept in file order) is drawn.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>, rng: &mut SeededRng) -> Result<DataMatrix> {
    let img_buf = read_maybe_gz(images)?;
    let lab_buf = read_maybe_gz(labels)?;
    let (dims, pixels) = idx_payload(&img_buf, images, IMAGE_MAGIC)?;
    let (ldims, labs) = idx_payload(&lab_buf, labels, LABEL_MAGIC)?;
    let n = dims[0];
    if ldims[0] != n {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            message: format!("{} labels for {n} images", ldims[0]),
        });
    }
    let d = dims[1] * dims[2];
    if n == 0 || d == 0 {
        return Err(Error::Format {
            path: images.to_path_buf(),
            message: "empty image set".into(),
        });
    }
    let rows: Vec<usize> = match limit {
        Some(m) if m < n => {
            if m == 0 {
                return Err(Error::invalid("limit must be positive"));
            }
            let mut pick = sample(rng, n, m).into_vec();
            pick.sort_unstable();
            pick
        }
        _ => (0..n).collect(),
    };
    let mut values = Array2::zeros((rows.len(), d));
    for (r, &src) in rows.iter().enumerate() {
        for (c, &p) in pixels[src * d..(src + 1) * d].iter().enumerate() {
            values[[r, c]] = p as f64 / 255.0;
        }
    }
    let raw: Vec<usize> = rows.iter().map(|&i| labs[i] as usize).collect();
    let labels = crate::numeric::densify_labels(&raw);
    DataMatrix::new(values, Some(labels), FeatureKind::Binary)
}
