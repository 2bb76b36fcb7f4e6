//! Deterministic synthetic classification data: Gaussian cluster tasks,
//! uniform label-noise injection, ID/OOD pairs, and JSONL file I/O.
//!
//! Generation is reproducible: a [`ClusterSpec`] plus its seed fully
//! determines the dataset. Samples are emitted in class-blocked order
//! (all of class 0, then class 1, ...), so callers that need mixed-class
//! batches should shuffle indices themselves with their own seed.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EvibError, Result};
use crate::tensor::Tensor;

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    Ood,
}

/// Feature matrix with labels, the pre-noise labels, and the noise mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// N x d feature matrix.
    pub features: Tensor,
    /// Current (possibly noise-corrupted) labels, each `< class_count`.
    pub labels: Vec<usize>,
    /// Labels before noise injection.
    pub clean_labels: Vec<usize>,
    /// True exactly where `labels[i] != clean_labels[i]`.
    pub noise_mask: Vec<bool>,
    /// Split this dataset represents.
    pub split_tag: SplitTag,
    /// Number of classes C.
    pub class_count: usize,
}

impl LabeledDataset {
    /// Sample count N.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of noise-flipped labels.
    pub fn noisy_count(&self) -> usize {
        self.noise_mask.iter().filter(|&&m| m).count()
    }

    /// Returns a new dataset holding the rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize], split_tag: SplitTag) -> LabeledDataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        let mut clean = Vec::with_capacity(indices.len());
        let mut mask = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row_slice(i));
            labels.push(self.labels[i]);
            clean.push(self.clean_labels[i]);
            mask.push(self.noise_mask[i]);
        }
        LabeledDataset {
            features: Tensor::from_vec(indices.len(), d, data),
            labels,
            clean_labels: clean,
            noise_mask: mask,
            split_tag,
            class_count: self.class_count,
        }
    }
}

/// Recipe for an isotropic Gaussian cluster task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Number of classes C.
    pub class_count: usize,
    /// Feature dimension d.
    pub dim: usize,
    /// C cluster means, each of length d; pairwise distinct.
    pub means: Vec<Vec<f64>>,
    /// Isotropic standard deviation shared by every cluster.
    pub scale: f64,
    /// Samples drawn per class.
    pub samples_per_class: usize,
    /// Generator seed.
    pub seed: u64,
}

fn validate_spec(spec: &ClusterSpec) -> Result<()> {
    if spec.class_count < 1 || spec.dim < 1 {
        return Err(EvibError::Config(format!(
            "class_count and dim must be positive, got {} and {}",
            spec.class_count, spec.dim
        )));
    }
    if spec.samples_per_class < 1 {
        return Err(EvibError::Config(format!(
            "samples_per_class must be at least 1, got {}",
            spec.samples_per_class
        )));
    }
    if !(spec.scale >= 0.0) {
        return Err(EvibError::Config(format!(
            "scale must be non-negative, got {}",
            spec.scale
        )));
    }
    if spec.means.len() != spec.class_count {
        return Err(EvibError::Config(format!(
            "expected {} means, got {}",
            spec.class_count,
            spec.means.len()
        )));
    }
    for (c, m) in spec.means.iter().enumerate() {
        if m.len() != spec.dim {
            return Err(EvibError::Config(format!(
                "mean {c} has {} coordinates, expected {}",
                m.len(),
                spec.dim
            )));
        }
    }
    for a in 0..spec.means.len() {
        for b in a + 1..spec.means.len() {
            if spec.means[a] == spec.means[b] {
                return Err(EvibError::Config(format!(
                    "cluster means {a} and {b} coincide"
                )));
            }
        }
    }
    Ok(())
}

/// Evenly spaced cluster means on a circle in the first two dimensions,
/// zeros elsewhere. The radius is chosen so adjacent means sit exactly
/// `separation` apart, making the pairwise Bayes error independent of the
/// class count. Requires `dim >= 2` (errors otherwise); a single class sits
/// on the positive first axis.
pub fn ring_means(class_count: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if dim < 2 {
        return Err(EvibError::Config(format!(
            "ring means need dim >= 2, got {dim}"
        )));
    }
    if class_count < 1 {
        return Err(EvibError::Config("class_count must be positive".into()));
    }
    if !(separation > 0.0) {
        return Err(EvibError::Config(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let radius = if class_count == 1 {
        separation
    } else {
        separation / (2.0 * (std::f64::consts::PI / class_count as f64).sin())
    };
    Ok((0..class_count)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / class_count as f64;
            let mut mean = vec![0.0; dim];
            mean[0] = radius * angle.cos();
            mean[1] = radius * angle.sin();
            mean
        })
        .collect())
}

/// Draws `samples_per_class` isotropic Gaussian samples around each class
/// mean, in class-blocked order. Deterministic per seed.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<LabeledDataset> {
    generate_clusters_tagged(spec, SplitTag::Train)
}

/// [`generate_clusters`] with an explicit split tag.
pub fn generate_clusters_tagged(spec: &ClusterSpec, split_tag: SplitTag) -> Result<LabeledDataset> {
    validate_spec(spec)?;
    let n = spec.class_count * spec.samples_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for &m in mean {
                let noise: f64 = if spec.scale == 0.0 {
                    0.0
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.scale * z
                };
                data.push(m + noise);
            }
            labels.push(c);
        }
    }
    Ok(LabeledDataset {
        features: Tensor::from_vec(n, spec.dim, data),
        clean_labels: labels.clone(),
        noise_mask: vec![false; n],
        labels,
        split_tag,
        class_count: spec.class_count,
    })
}

/// Flips exactly `round(fraction * N)` labels, chosen uniformly without
/// replacement; each flipped label is redrawn uniformly from the other
/// C - 1 classes. The input's current labels become `clean_labels`.
pub fn inject_label_noise(
    ds: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(EvibError::Config(format!(
            "noise fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n = ds.len();
    let flip_count = (fraction * n as f64).round() as usize;
    if flip_count > 0 && ds.class_count < 2 {
        return Err(EvibError::Config(
            "label noise needs at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first flip_count entries are a uniform
    // draw without replacement.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..flip_count.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut labels = ds.labels.clone();
    let mut mask = vec![false; n];
    for &i in indices.iter().take(flip_count) {
        let clean = labels[i];
        // Uniform over the other C - 1 classes.
        let mut pick = rng.random_range(0..ds.class_count - 1);
        if pick >= clean {
            pick += 1;
        }
        labels[i] = pick;
        mask[i] = true;
    }
    Ok(LabeledDataset {
        features: ds.features.clone(),
        clean_labels: ds.labels.clone(),
        labels,
        noise_mask: mask,
        split_tag: ds.split_tag,
        class_count: ds.class_count,
    })
}

/// Mean-shift defining an OOD companion task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shift {
    /// Added to every coordinate of every mean.
    Scalar(f64),
    /// Added coordinate-wise; length must equal the spec dimension.
    Vector(Vec<f64>),
}

impl Shift {
    fn as_vector(&self, dim: usize) -> Result<Vec<f64>> {
        let v = match self {
            Shift::Scalar(s) => vec![*s; dim],
            Shift::Vector(v) => {
                if v.len() != dim {
                    return Err(EvibError::Config(format!(
                        "shift vector has {} coordinates, expected {dim}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if v.iter().all(|&x| x == 0.0) {
            return Err(EvibError::Config(
                "OOD shift must be nonzero (a zero shift makes the OOD set degenerate)".into(),
            ));
        }
        Ok(v)
    }
}

/// Generates an in-distribution test set from `id_spec` and an OOD set
/// from the same spec with every mean translated by `shift`. The OOD draw
/// uses `id_spec.seed + 1` so the two sets are independent.
pub fn make_ood_pair(
    id_spec: &ClusterSpec,
    shift: &Shift,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let delta = shift.as_vector(id_spec.dim)?;
    let id_test = generate_clusters_tagged(id_spec, SplitTag::Test)?;
    let ood_spec = ClusterSpec {
        means: id_spec
            .means
            .iter()
            .map(|m| m.iter().zip(&delta).map(|(a, b)| a + b).collect())
            .collect(),
        seed: id_spec.seed + 1,
        ..id_spec.clone()
    };
    let ood_test = generate_clusters_tagged(&ood_spec, SplitTag::Ood)?;
    Ok((id_test, ood_test))
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

/// First line of a dataset file.
#[derive(Debug, Serialize, Deserialize)]
struct Header {
    c: usize,
    d: usize,
    n: usize,
    noise_fraction: f64,
}

/// One sample record.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    features: Vec<f64>,
    label: usize,
    clean_label: usize,
    noisy: bool,
    split: SplitTag,
}

/// Writes a dataset as JSONL: a header line `{c, d, n, noise_fraction}`
/// followed by one record per sample.
pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        c: ds.class_count,
        d: ds.dim(),
        n: ds.len(),
        noise_fraction: if ds.is_empty() {
            0.0
        } else {
            ds.noisy_count() as f64 / ds.len() as f64
        },
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for i in 0..ds.len() {
        let rec = Record {
            features: ds.features.row_slice(i).to_vec(),
            label: ds.labels[i],
            clean_label: ds.clean_labels[i],
            noisy: ds.noise_mask[i],
            split: ds.split_tag,
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL dataset, validating every record against the header.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(&path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();

    let header_line = lines
        .next()
        .ok_or_else(|| EvibError::Parse("dataset file is empty, expected a header line".into()))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| EvibError::Parse(format!("line 1: invalid header: {e}")))?;
    if header.c < 1 || header.d < 1 {
        return Err(EvibError::Data(format!(
            "header declares c = {}, d = {}; both must be positive",
            header.c, header.d
        )));
    }

    let mut data = Vec::with_capacity(header.n * header.d);
    let mut labels = Vec::with_capacity(header.n);
    let mut clean = Vec::with_capacity(header.n);
    let mut mask = Vec::with_capacity(header.n);
    let mut split: Option<SplitTag> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| EvibError::Parse(format!("line {line_no}: {e}")))?;
        if rec.features.len() != header.d {
            return Err(EvibError::Data(format!(
                "line {line_no}: record has {} features but the header declares d = {}",
                rec.features.len(),
                header.d
            )));
        }
        if rec.label >= header.c || rec.clean_label >= header.c {
            return Err(EvibError::Data(format!(
                "line {line_no}: label {} outside [0, {})",
                rec.label.max(rec.clean_label),
                header.c
            )));
        }
        if rec.noisy != (rec.label != rec.clean_label) {
            return Err(EvibError::Data(format!(
                "line {line_no}: noisy flag disagrees with label/clean_label"
            )));
        }
        match split {
            None => split = Some(rec.split),
            Some(s) if s != rec.split => {
                return Err(EvibError::Data(format!(
                    "line {line_no}: split {:?} differs from the file's split {s:?}",
                    rec.split
                )));
            }
            _ => {}
        }
        data.extend_from_slice(&rec.features);
        labels.push(rec.label);
        clean.push(rec.clean_label);
        mask.push(rec.noisy);
    }
    if labels.len() != header.n {
        return Err(EvibError::Data(format!(
            "header declares n = {} but the file holds {} records",
            header.n,
            labels.len()
        )));
    }
    Ok(LabeledDataset {
        features: Tensor::from_vec(labels.len(), header.d, data),
        labels,
        clean_labels: clean,
        noise_mask: mask,
        split_tag: split.unwrap_or(SplitTag::Train),
        class_count: header.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_spec() -> ClusterSpec {
        ClusterSpec {
            class_count: 4,
            dim: 2,
            means: vec![
                vec![3.0, 0.0],
                vec![0.0, 3.0],
                vec![-3.0, 0.0],
                vec![0.0, -3.0],
            ],
            scale: 1.0,
            samples_per_class: 500,
            seed: 5,
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let spec = demo_spec();
        let a = generate_clusters(&spec).unwrap();
        let b = generate_clusters(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 500);
        }
        let other = generate_clusters(&ClusterSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.features, other.features);
    }

    #[test]
    fn zero_scale_reproduces_means() {
        let spec = ClusterSpec { scale: 0.0, samples_per_class: 3, ..demo_spec() };
        let ds = generate_clusters(&spec).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features.row_slice(i), spec.means[ds.labels[i]].as_slice());
        }
    }

    #[test]
    fn spec_validation() {
        let mut bad = demo_spec();
        bad.samples_per_class = 0;
        assert!(matches!(generate_clusters(&bad), Err(EvibError::Config(_))));

        let mut dup = demo_spec();
        dup.means[2] = dup.means[0].clone();
        assert!(matches!(generate_clusters(&dup), Err(EvibError::Config(_))));
    }

    #[test]
    fn noise_injection_contract() {
        let ds = generate_clusters(&demo_spec()).unwrap();

        let clean = inject_label_noise(&ds, 0.0, 9).unwrap();
        assert_eq!(clean.labels, ds.labels);
        assert!(clean.noise_mask.iter().all(|&m| !m));

        let noisy = inject_label_noise(&ds, 0.3, 9).unwrap();
        assert_eq!(noisy.noisy_count(), 600);
        for i in 0..noisy.len() {
            assert_eq!(noisy.noise_mask[i], noisy.labels[i] != noisy.clean_labels[i]);
            if noisy.noise_mask[i] {
                assert_ne!(noisy.labels[i], noisy.clean_labels[i]);
                assert!(noisy.labels[i] < 4);
            }
        }
        assert_eq!(noisy.features, ds.features);
        // Deterministic per seed, different across seeds.
        assert_eq!(inject_label_noise(&ds, 0.3, 9).unwrap(), noisy);
        assert_ne!(inject_label_noise(&ds, 0.3, 10).unwrap().labels, noisy.labels);

        let all = inject_label_noise(&ds, 1.0, 9).unwrap();
        assert!(all
            .labels
            .iter()
            .zip(&all.clean_labels)
            .all(|(a, b)| a != b));

        assert!(matches!(
            inject_label_noise(&ds, 1.5, 9),
            Err(EvibError::Config(_))
        ));
    }

    #[test]
    fn small_dataset_noise_count_is_exact() {
        let spec = ClusterSpec { samples_per_class: 5, class_count: 2, means: vec![vec![0.0, 0.0], vec![3.0, 3.0]], ..demo_spec() };
        let ds = generate_clusters(&spec).unwrap();
        assert_eq!(ds.len(), 10);
        let noisy = inject_label_noise(&ds, 0.3, 1).unwrap();
        assert_eq!(noisy.noisy_count(), 3);
    }

    #[test]
    fn ood_pair_contract() {
        let spec = demo_spec();
        let (id_test, ood) = make_ood_pair(&spec, &Shift::Scalar(10.0)).unwrap();
        assert_eq!(id_test.split_tag, SplitTag::Test);
        assert_eq!(ood.split_tag, SplitTag::Ood);
        assert_eq!(ood.len(), id_test.len());

        // Scalar broadcast equals the equivalent vector shift.
        let (_, ood_vec) = make_ood_pair(&spec, &Shift::Vector(vec![10.0, 10.0])).unwrap();
        assert_eq!(ood, ood_vec);

        assert!(matches!(
            make_ood_pair(&spec, &Shift::Scalar(0.0)),
            Err(EvibError::Config(_))
        ));
        assert!(matches!(
            make_ood_pair(&spec, &Shift::Vector(vec![0.0, 0.0])),
            Err(EvibError::Config(_))
        ));
        assert!(matches!(
            make_ood_pair(&spec, &Shift::Vector(vec![1.0])),
            Err(EvibError::Config(_))
        ));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let spec = ClusterSpec { samples_per_class: 25, ..demo_spec() };
        let ds = inject_label_noise(&generate_clusters(&spec).unwrap(), 0.2, 3).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);

        // Header carries the realized noise fraction.
        let text = std::fs::read_to_string(&path).unwrap();
        let header: Header = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header.c, 4);
        assert_eq!(header.d, 2);
        assert_eq!(header.n, 100);
        assert_eq!(header.noise_fraction, 0.2);

        // Same dataset written twice is byte-identical.
        let path2 = dir.path().join("data2.jsonl");
        write_dataset(&ds, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_files_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();

        // A record (with a string label) where the header should be.
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"features\":[0.0,0.0],\"label\":\"zero\",\"clean_label\":0,\"noisy\":false,\"split\":\"train\"}\n",
        )
        .unwrap();
        let err = read_dataset(&bad).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        // Malformed record after a valid header.
        let bad2 = dir.path().join("bad2.jsonl");
        std::fs::write(
            &bad2,
            "{\"c\":2,\"d\":2,\"n\":1,\"noise_fraction\":0.0}\n{\"features\":[0.0,0.0],\"label\":\"x\",\"clean_label\":0,\"noisy\":false,\"split\":\"train\"}\n",
        )
        .unwrap();
        let err = read_dataset(&bad2).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        // Label outside the header's class count.
        let bad3 = dir.path().join("bad3.jsonl");
        std::fs::write(
            &bad3,
            "{\"c\":2,\"d\":2,\"n\":1,\"noise_fraction\":0.0}\n{\"features\":[0.0,0.0],\"label\":5,\"clean_label\":0,\"noisy\":true,\"split\":\"train\"}\n",
        )
        .unwrap();
        assert!(matches!(read_dataset(&bad3), Err(EvibError::Data(_))));

        // Record count disagreeing with the header.
        let bad4 = dir.path().join("bad4.jsonl");
        std::fs::write(
            &bad4,
            "{\"c\":2,\"d\":2,\"n\":3,\"noise_fraction\":0.0}\n{\"features\":[0.0,0.0],\"label\":1,\"clean_label\":1,\"noisy\":false,\"split\":\"train\"}\n",
        )
        .unwrap();
        assert!(matches!(read_dataset(&bad4), Err(EvibError::Data(_))));
    }

    #[test]
    fn subset_selects_rows() {
        let ds = generate_clusters(&ClusterSpec { samples_per_class: 3, ..demo_spec() }).unwrap();
        let sub = ds.subset(&[0, 5, 11], SplitTag::Test);
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.labels, vec![ds.labels[0], ds.labels[5], ds.labels[11]]);
        assert_eq!(sub.features.row_slice(1), ds.features.row_slice(5));
        assert_eq!(sub.split_tag, SplitTag::Test);
    }
}
