//! On-disk formats.
//!
//! Binary matrix container (`.wsm`):
//!
//! ```text
//! offset 0   8 bytes   magic "WSMAT01\n"
//! offset 8   u32 LE    rows
//! offset 12  u32 LE    cols
//! offset 16  rows*cols IEEE-754 f32 LE values, row-major
//! ```
//!
//! Class identities live in a UTF-8 sidecar with one line per row:
//! `<id>` or `<id>\t<name>`. Matrices may also be read from CSV with a header
//! row when the path ends in `.csv`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{ClassId, ClassifierHead, DescriptorSet, FeatureSet, SplitManifest};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"WSMAT01\n";
const HEADER_LEN: usize = 16;

/// Serialises `m` into the binary container. Values are narrowed to f32.
pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::InvalidConfig(format!("{} rows exceed u32", m.rows())))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::InvalidConfig(format!("{} cols exceed u32", m.cols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses one container from the front of `bytes`, returning the matrix and
/// the number of bytes consumed. `path` and `base` only label errors.
pub fn decode_matrix_prefix(bytes: &[u8], path: &Path, base: u64) -> Result<(Matrix, usize)> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: base + offset as u64,
        message,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail(0, "bad magic, expected \"WSMAT01\\n\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, format!("dimensions {rows}x{cols} overflow")))?;
    let end = HEADER_LEN
        .checked_add(payload)
        .ok_or_else(|| fail(8, format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() < end {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: {rows}x{cols} needs {payload} bytes, found {}", bytes.len() - HEADER_LEN),
        ));
    }
    let data = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((Matrix::from_vec(rows, cols, data)?, end))
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let (m, used) = decode_matrix_prefix(bytes, path, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: used as u64,
            message: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(m)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a binary container, or CSV when the extension is `.csv`.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_matrix_csv(path);
    }
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// CSV with a header row; every following record is one matrix row.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let cols = reader.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Data(format!(
                "{}: csv row {} has {} fields, header has {cols}",
                path.display(),
                r + 2,
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            data.push(field.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "{}: csv row {} column {}: `{field}` is not a number",
                    path.display(),
                    r + 2,
                    c + 1
                ))
            })?);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.cols()).map(|c| format!("c{c}")))?;
    for row in m.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads an id sidecar. Names are returned only if every line carries one.
pub fn read_ids(path: impl AsRef<Path>) -> Result<(Vec<ClassId>, Option<Vec<String>>)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut ids = Vec::new();
    let mut names = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let id = parts.next().unwrap_or("");
        ids.push(id.parse::<ClassId>().map_err(|_| {
            Error::Data(format!("{}:{}: invalid class id `{id}`", path.display(), lineno + 1))
        })?);
        if let Some(name) = parts.next() {
            names.push(name.trim().to_string());
        }
    }
    let names = (names.len() == ids.len() && !ids.is_empty()).then_some(names);
    Ok((ids, names))
}

pub fn write_ids(path: impl AsRef<Path>, ids: &[ClassId], names: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        match names {
            Some(n) => out.push_str(&format!("{id}\t{}\n", n[i])),
            None => out.push_str(&format!("{id}\n")),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    SplitManifest::parse(&read_text(path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn save_manifest(path: impl AsRef<Path>, m: &SplitManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_text()).map_err(|e| Error::io(path, e))
}

fn with_context<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_descriptors(matrix: impl AsRef<Path>, ids: impl AsRef<Path>) -> Result<DescriptorSet> {
    let m = load_matrix(matrix.as_ref())?;
    let (class_ids, names) = read_ids(ids.as_ref())?;
    let set = with_context(DescriptorSet::new(class_ids, m), matrix.as_ref())?;
    match names {
        Some(n) => set.with_names(n),
        None => Ok(set),
    }
}

pub fn save_descriptors(matrix: impl AsRef<Path>, ids: impl AsRef<Path>, d: &DescriptorSet) -> Result<()> {
    save_matrix(matrix, &d.matrix)?;
    write_ids(ids, &d.class_ids, d.names.as_deref())
}

/// Loads a head; `bias` is an optional `n x 1` matrix. Seen flags are taken
/// from `manifest` when given, otherwise every class is flagged seen.
pub fn load_head(
    matrix: impl AsRef<Path>,
    ids: impl AsRef<Path>,
    bias: Option<&Path>,
    manifest: Option<&SplitManifest>,
) -> Result<ClassifierHead> {
    let weights = load_matrix(matrix.as_ref())?;
    let (class_ids, _) = read_ids(ids.as_ref())?;
    let biases = match bias {
        Some(p) => {
            let b = load_matrix(p)?;
            if b.cols() != 1 {
                return Err(Error::Data(format!(
                    "{}: bias matrix must have one column, found {}",
                    p.display(),
                    b.cols()
                )));
            }
            Some(b.into_data())
        }
        None => None,
    };
    let seen = match manifest {
        Some(m) => class_ids.iter().map(|c| !m.unseen.contains(c)).collect(),
        None => vec![true; class_ids.len()],
    };
    with_context(
        ClassifierHead::with_flags(class_ids, weights, biases, seen),
        matrix.as_ref(),
    )
}

pub fn save_head(
    matrix: impl AsRef<Path>,
    ids: impl AsRef<Path>,
    bias: Option<&Path>,
    head: &ClassifierHead,
) -> Result<()> {
    save_matrix(matrix, &head.weights)?;
    write_ids(ids, &head.class_ids, None)?;
    if let (Some(p), Some(b)) = (bias, &head.biases) {
        save_matrix(p, &Matrix::from_vec(b.len(), 1, b.clone())?)?;
    }
    Ok(())
}

/// Features plus a label sidecar with one class id per sample row.
pub fn load_features(matrix: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<FeatureSet> {
    let m = load_matrix(matrix.as_ref())?;
    let (l, _) = read_ids(labels.as_ref())?;
    with_context(FeatureSet::new(m, l), matrix.as_ref())
}

pub fn save_features(matrix: impl AsRef<Path>, labels: impl AsRef<Path>, f: &FeatureSet) -> Result<()> {
    save_matrix(matrix, &f.features)?;
    write_ids(labels, &f.labels, None)
}

/// Writes `bytes` to `path` via a writer, used for composite files.
pub(crate) fn write_all(path: &Path, parts: &[&[u8]]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in parts {
        f.write_all(p).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
