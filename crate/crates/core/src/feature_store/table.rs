use crate::error::{Error, Result};

/// Rows flagged as normalized must have unit norm within this slack.
pub const NORM_TOLERANCE: f64 = 1e-5;

const MIN_NORM: f64 = 1e-12;

/// Dense `n x d` row-major `f32` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    n: usize,
    d: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingTable {
    /// Builds a table, rejecting empty shapes and non-finite entries.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_flag(n, d, data, false)
    }

    /// Builds a table carrying the normalized flag; every row is checked
    /// against [`NORM_TOLERANCE`] when the flag is set.
    pub fn with_flag(n: usize, d: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("table shape {n}x{d} must be non-empty")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        let table = EmbeddingTable {
            n,
            d,
            data,
            normalized,
        };
        if normalized {
            for i in 0..n {
                let norm = row_norm(table.row(i));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "row {i} has norm {norm} but the table is flagged normalized"
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Gathers the listed rows (in order) into a new table; the normalized
    /// flag carries over.
    pub fn select(&self, indices: &[usize]) -> Result<EmbeddingTable> {
        if indices.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!("row {i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingTable {
            n: indices.len(),
            d: self.d,
            data,
            normalized: self.normalized,
        })
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Divides every row by its Euclidean norm and sets the normalized flag.
pub fn l2_normalize(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let mut data = Vec::with_capacity(table.data.len());
    for (i, row) in table.iter_rows().enumerate() {
        let norm = row_norm(row);
        if norm < MIN_NORM {
            return Err(Error::ZeroNorm { row: i });
        }
        data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    Ok(EmbeddingTable {
        n: table.n,
        d: table.d,
        data,
        normalized: true,
    })
}

/// Text prototypes, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeTable(EmbeddingTable);

impl PrototypeTable {
    pub fn new(table: EmbeddingTable) -> Result<Self> {
        if table.n() < 2 {
            return Err(Error::invalid(format!(
                "prototype table needs at least 2 classes, got {}",
                table.n()
            )));
        }
        Ok(PrototypeTable(table))
    }

    pub fn num_classes(&self) -> usize {
        self.0.n()
    }

    pub fn d(&self) -> usize {
        self.0.d()
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.0
    }

    pub fn normalized(&self) -> Result<PrototypeTable> {
        if self.0.is_normalized() {
            Ok(self.clone())
        } else {
            Ok(PrototypeTable(l2_normalize(&self.0)?))
        }
    }
}

/// Zero-based class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector(Vec<u32>);

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Self {
        LabelVector(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn max_label(&self) -> Option<u32> {
        self.0.iter().copied().max()
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.0.iter().position(|&l| l as usize >= num_classes) {
            Some(i) => Err(Error::invalid(format!(
                "label {} at row {i} is outside [0, {num_classes})",
                self.0[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// Everything one experiment reads: student and teacher features for both
/// splits, labels, class prototypes and names.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub train_student: EmbeddingTable,
    pub train_teacher: EmbeddingTable,
    pub test_student: EmbeddingTable,
    pub test_teacher: EmbeddingTable,
    pub train_labels: LabelVector,
    pub test_labels: LabelVector,
    pub prototypes: PrototypeTable,
    pub class_names: Vec<String>,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.prototypes.num_classes()
    }

    pub fn n_train(&self) -> usize {
        self.train_student.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.train_student.n();
        for (name, got) in [
            ("train teacher", self.train_teacher.n()),
            ("train labels", self.train_labels.len()),
        ] {
            if got != n {
                return Err(Error::invalid(format!("{name} has {got} rows, expected {n}")));
            }
        }
        let m = self.test_student.n();
        for (name, got) in [
            ("test teacher", self.test_teacher.n()),
            ("test labels", self.test_labels.len()),
        ] {
            if got != m {
                return Err(Error::invalid(format!("{name} has {got} rows, expected {m}")));
            }
        }
        if self.train_student.d() != self.test_student.d() {
            return Err(Error::DimensionMismatch {
                expected: self.train_student.d(),
                got: self.test_student.d(),
            });
        }
        let dt = self.prototypes.d();
        for got in [self.train_teacher.d(), self.test_teacher.d()] {
            if got != dt {
                return Err(Error::DimensionMismatch { expected: dt, got });
            }
        }
        let c = self.num_classes();
        if self.class_names.len() != c {
            return Err(Error::invalid(format!(
                "{} class names for {c} prototypes",
                self.class_names.len()
            )));
        }
        let max_label = self
            .train_labels
            .max_label()
            .into_iter()
            .chain(self.test_labels.max_label())
            .max()
            .unwrap_or(0) as usize;
        if max_label + 1 != c {
            return Err(Error::invalid(format!(
                "largest label is {max_label} but there are {c} classes"
            )));
        }
        Ok(())
    }
}
