//! EMBC: a small self-describing binary container for embedding tables.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "EMBC"            4 bytes
//! version u32 = 1
//! n       u64               rows
//! d       u32               columns
//! flags   u32               bit0 = has_labels, bit1 = normalized
//! data    n*d f32           row-major
//! labels  n i32             only when has_labels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::table::{DatasetBundle, EmbeddingTable, LabelVector, PrototypeTable};
use crate::error::{CacheError, Error, Result};

pub const EMBC_MAGIC: &[u8; 4] = b"EMBC";
pub const EMBC_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;
const FLAG_LABELS: u32 = 1;
const FLAG_NORMALIZED: u32 = 1 << 1;

pub fn save_cache(table: &EmbeddingTable, labels: Option<&LabelVector>, path: &Path) -> Result<()> {
    let bytes = encode(table, labels)?;
    fs::write(path, bytes).map_err(|source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn encode(table: &EmbeddingTable, labels: Option<&LabelVector>) -> Result<Vec<u8>> {
    let d = u32::try_from(table.d()).map_err(|_| CacheError::Overflow {
        what: "d",
        value: table.d() as u64,
    })?;
    let mut flags = 0;
    if let Some(l) = labels {
        if l.len() != table.n() {
            return Err(Error::DimensionMismatch {
                expected: table.n(),
                got: l.len(),
            });
        }
        flags |= FLAG_LABELS;
    }
    if table.is_normalized() {
        flags |= FLAG_NORMALIZED;
    }
    let label_bytes = labels.map_or(0, |l| 4 * l.len());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * table.as_slice().len() + label_bytes);
    out.extend_from_slice(EMBC_MAGIC);
    out.extend_from_slice(&EMBC_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.n() as u64).to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for v in table.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = labels {
        for &y in l.as_slice() {
            let y = i32::try_from(y).map_err(|_| CacheError::Overflow {
                what: "label",
                value: u64::from(y),
            })?;
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_cache(path: &Path) -> Result<(EmbeddingTable, Option<LabelVector>)> {
    let bytes = fs::read(path).map_err(|source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<(EmbeddingTable, Option<LabelVector>)> {
    let p = || path.to_path_buf();
    if bytes.len() >= 4 && &bytes[..4] != EMBC_MAGIC {
        return Err(CacheError::BadMagic { path: p() }.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(CacheError::TruncatedHeader {
            path: p(),
            expected: HEADER_LEN,
            got: bytes.len(),
        }
        .into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != EMBC_VERSION {
        return Err(CacheError::UnsupportedVersion { path: p(), version }.into());
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32_at(16) as usize;
    let flags = u32_at(20);
    if flags & !(FLAG_LABELS | FLAG_NORMALIZED) != 0 {
        return Err(CacheError::Malformed {
            path: p(),
            reason: format!("unknown flag bits {flags:#x}"),
        }
        .into());
    }
    if n == 0 || d == 0 {
        return Err(CacheError::Malformed {
            path: p(),
            reason: format!("empty shape {n}x{d}"),
        }
        .into());
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let n = usize::try_from(n).map_err(|_| CacheError::Overflow { what: "n", value: n })?;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(if has_labels { n } else { 0 }))
        .and_then(|words| words.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or(CacheError::Overflow {
            what: "payload size",
            value: n as u64,
        })?;
    if bytes.len() < expected {
        return Err(CacheError::TruncatedPayload {
            path: p(),
            expected,
            got: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(CacheError::Malformed {
            path: p(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        }
        .into());
    }
    let payload_end = HEADER_LEN + 4 * n * d;
    let data: Vec<f32> = bytes[HEADER_LEN..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
        return Err(CacheError::NonFinite { path: p(), offset }.into());
    }
    let labels = if has_labels {
        let mut out = Vec::with_capacity(n);
        for (row, c) in bytes[payload_end..].chunks_exact(4).enumerate() {
            let y = i32::from_le_bytes(c.try_into().unwrap());
            if y < 0 {
                return Err(CacheError::InvalidLabel {
                    path: p(),
                    row,
                    label: i64::from(y),
                }
                .into());
            }
            out.push(y as u32);
        }
        Some(LabelVector::new(out))
    } else {
        None
    };
    let table = EmbeddingTable::with_flag(n, d, data, flags & FLAG_NORMALIZED != 0).map_err(|e| {
        CacheError::Malformed {
            path: p(),
            reason: e.to_string(),
        }
    })?;
    Ok((table, labels))
}

/// File names of a dataset bundle inside a cache directory.
#[derive(Clone, Debug)]
pub struct BundleFiles {
    pub train_student: PathBuf,
    pub train_teacher: PathBuf,
    pub test_student: PathBuf,
    pub test_teacher: PathBuf,
    pub prototypes: PathBuf,
    pub class_names: PathBuf,
}

impl BundleFiles {
    pub fn in_dir(dir: &Path) -> Self {
        BundleFiles {
            train_student: dir.join("train_student.embc"),
            train_teacher: dir.join("train_teacher.embc"),
            test_student: dir.join("test_student.embc"),
            test_teacher: dir.join("test_teacher.embc"),
            prototypes: dir.join("prototypes.embc"),
            class_names: dir.join("class_names.txt"),
        }
    }
}

/// Writes a bundle as four labeled EMBC tables, a prototype table and a
/// class-name file.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<BundleFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = BundleFiles::in_dir(dir);
    save_cache(&bundle.train_student, Some(&bundle.train_labels), &files.train_student)?;
    save_cache(&bundle.train_teacher, Some(&bundle.train_labels), &files.train_teacher)?;
    save_cache(&bundle.test_student, Some(&bundle.test_labels), &files.test_student)?;
    save_cache(&bundle.test_teacher, Some(&bundle.test_labels), &files.test_teacher)?;
    save_cache(bundle.prototypes.table(), None, &files.prototypes)?;
    let mut names = bundle.class_names.join("\n");
    names.push('\n');
    fs::write(&files.class_names, names).map_err(|e| Error::io(&files.class_names, e))?;
    Ok(files)
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let files = BundleFiles::in_dir(dir);
    let labeled = |path: &Path| -> Result<(EmbeddingTable, LabelVector)> {
        let (table, labels) = load_cache(path)?;
        let labels = labels.ok_or_else(|| CacheError::Malformed {
            path: path.to_path_buf(),
            reason: "labels required".into(),
        })?;
        Ok((table, labels))
    };
    let (train_student, train_labels) = labeled(&files.train_student)?;
    let (train_teacher, teacher_labels) = labeled(&files.train_teacher)?;
    let (test_student, test_labels) = labeled(&files.test_student)?;
    let (test_teacher, test_teacher_labels) = labeled(&files.test_teacher)?;
    if teacher_labels != train_labels || test_teacher_labels != test_labels {
        return Err(Error::invalid("student and teacher caches disagree on labels"));
    }
    let (protos, _) = load_cache(&files.prototypes)?;
    let names = fs::read_to_string(&files.class_names).map_err(|e| Error::io(&files.class_names, e))?;
    let class_names: Vec<String> = names.lines().map(str::to_owned).filter(|s| !s.is_empty()).collect();
    let bundle = DatasetBundle {
        train_student,
        train_teacher,
        test_student,
        test_teacher,
        train_labels,
        test_labels,
        prototypes: PrototypeTable::new(protos)?,
        class_names,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_three_layout() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let bytes = encode(&t, None).unwrap();
        assert_eq!(&bytes[..4], b"EMBC");
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(bytes[44..48].try_into().unwrap()), 6.0);
    }

    #[test]
    fn labels_trail_payload() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let labels = LabelVector::new(vec![0, 1]);
        let bytes = encode(&t, Some(&labels)).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()) & 1, 1);
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(i32::from_le_bytes(tail[..4].try_into().unwrap()), 0);
        assert_eq!(i32::from_le_bytes(tail[4..].try_into().unwrap()), 1);
    }

    #[test]
    fn normalized_flag_round_trips() {
        let t = EmbeddingTable::with_flag(1, 2, vec![0.6, 0.8], true).unwrap();
        let bytes = encode(&t, None).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        let (back, _) = decode(&bytes, Path::new("mem")).unwrap();
        assert!(back.is_normalized());
    }

    #[test]
    fn negative_label_rejected() {
        let t = EmbeddingTable::from_rows(&[vec![1.0]]).unwrap();
        let mut bytes = encode(&t, Some(&LabelVector::new(vec![0]))).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&(-1i32).to_le_bytes());
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::Cache(CacheError::InvalidLabel { .. }))
        ));
    }

    #[test]
    fn nan_payload_rejected() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut bytes = encode(&t, None).unwrap();
        bytes[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::Cache(CacheError::NonFinite { offset: 1, .. }))
        ));
    }
}
