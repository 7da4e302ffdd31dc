use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::table::{l2_normalize, DatasetBundle, EmbeddingTable, LabelVector, PrototypeTable};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, EngineRng};

/// Parameters of the Gaussian-mixture stand-in for frozen encoder features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d_student: usize,
    pub d_teacher: usize,
    /// Radius of the sphere holding the class means in teacher space.
    pub class_separation: f64,
    /// Std of the Gaussian perturbation applied to the text prototypes.
    pub teacher_noise: f64,
    /// Std of the noise added after projecting into student space.
    pub student_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            n_train: 2000,
            n_test: 1000,
            d_student: 48,
            d_teacher: 32,
            class_separation: 6.0,
            teacher_noise: 0.32,
            student_noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("synthetic spec needs at least 2 classes"));
        }
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("d_student", self.d_student),
            ("d_teacher", self.d_teacher),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::invalid("class_separation must be positive and finite"));
        }
        for (name, v) in [("teacher_noise", self.teacher_noise), ("student_noise", self.student_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut EngineRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

struct Geometry<'a> {
    spec: &'a SyntheticSpec,
    means: Vec<Vec<f64>>,
    /// `d_student x d_teacher`, row-major.
    projection: Vec<f64>,
}

impl Geometry<'_> {
    fn split(&self, n: usize, stream: &str) -> Result<(EmbeddingTable, EmbeddingTable, LabelVector)> {
        let spec = self.spec;
        let mut rng = rng_from_seed(derive_seed(spec.seed, stream, 0));
        let mut labels: Vec<u32> = (0..n).map(|i| (i % spec.num_classes) as u32).collect();
        labels.shuffle(&mut rng);

        let (dt, ds) = (spec.d_teacher, spec.d_student);
        let mut teacher = Vec::with_capacity(n * dt);
        let mut student = Vec::with_capacity(n * ds);
        for &y in &labels {
            let noise = gaussian(&mut rng, dt);
            let phi = unit(
                self.means[y as usize]
                    .iter()
                    .zip(&noise)
                    .map(|(m, e)| m + e)
                    .collect(),
            );
            let phi32: Vec<f32> = phi.iter().map(|&v| v as f32).collect();
            for row in self.projection.chunks_exact(dt) {
                let z: f64 = row.iter().zip(&phi32).map(|(a, &b)| a * f64::from(b)).sum();
                let e: f64 = rng.sample(StandardNormal);
                student.push((z + spec.student_noise * e) as f32);
            }
            teacher.extend(phi32);
        }
        // Re-normalize in f32 so the flag invariant holds exactly as stored.
        let teacher = l2_normalize(&EmbeddingTable::new(n, dt, teacher)?)?;
        Ok((EmbeddingTable::new(n, ds, student)?, teacher, LabelVector::new(labels)))
    }
}

/// Draws a full dataset bundle; the output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let c = spec.num_classes;
    let (dt, ds) = (spec.d_teacher, spec.d_student);

    let mut rng = rng_from_seed(derive_seed(spec.seed, "synthetic-geometry", 0));
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            unit(gaussian(&mut rng, dt))
                .into_iter()
                .map(|v| v * spec.class_separation)
                .collect()
        })
        .collect();
    let mut protos = Vec::with_capacity(c * dt);
    for mean in &means {
        let noise = gaussian(&mut rng, dt);
        let perturbed: Vec<f64> = unit(mean.clone())
            .iter()
            .zip(&noise)
            .map(|(m, e)| m + spec.teacher_noise * e)
            .collect();
        protos.extend(perturbed.iter().map(|&v| v as f32));
    }
    let prototypes = PrototypeTable::new(l2_normalize(&EmbeddingTable::new(c, dt, protos)?)?)?;
    let projection = gaussian(&mut rng, ds * dt);

    let geometry = Geometry {
        spec,
        means,
        projection,
    };
    let (train_student, train_teacher, train_labels) = geometry.split(spec.n_train, "synthetic-train")?;
    let (test_student, test_teacher, test_labels) = geometry.split(spec.n_test, "synthetic-test")?;
    let class_names = (0..c).map(|i| format!("class_{i:03}")).collect();
    let bundle = DatasetBundle {
        train_student,
        train_teacher,
        test_student,
        test_teacher,
        train_labels,
        test_labels,
        prototypes,
        class_names,
    };
    if spec.n_train >= c || spec.n_test >= c {
        bundle.validate()?;
    }
    Ok(bundle)
}
