//! The dual-head classifier: a shared tanh trunk `g` feeding two affine
//! heads, `h^mu` (pre-evidence mean, also the logits head for baseline
//! modes) and `h^sigma` (pre-evidence standard deviation via SoftPlus).
//!
//! Both heads are initialized identically, standing in for the shared
//! pretrained-head initialization of the original setup, then trained
//! independently. Checkpoints are JSON objects mapping parameter name to
//! `{shape: [rows, cols], data: [row-major reals]}`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{linear_combine, Node, Parameter};
use crate::error::{EvibError, Result};
use crate::tensor::Tensor;

/// Scale applied to the shared head initialization. Keeping initial head
/// weights small starts every class near zero pre-evidence, i.e. near the
/// maximally ignorant alpha = eta state, which stabilizes early evidential
/// training.
pub const HEAD_INIT_GAIN: f64 = 0.2;

/// Shared-trunk, two-head multilayer perceptron.
#[derive(Debug)]
pub struct DualHeadModel {
    trunk: Vec<(Parameter, Parameter)>,
    head_mu: (Parameter, Parameter),
    head_sigma: (Parameter, Parameter),
    class_count: usize,
}

/// One named tensor in a checkpoint file.
#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    shape: [usize; 2],
    data: Vec<f64>,
}

fn xavier_uniform(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let a = gain * (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Builds a model with scaled-uniform (Xavier) trunk weights, identically
/// initialized heads (shared draw scaled by [`HEAD_INIT_GAIN`]), and zero
/// biases. `layer_sizes` lists the input dimension followed by at least
/// one hidden width, e.g. `[8, 64]`.
pub fn build_model(layer_sizes: &[usize], class_count: usize, seed: u64) -> Result<DualHeadModel> {
    if layer_sizes.len() < 2 {
        return Err(EvibError::Config(format!(
            "layer_sizes needs the input dimension and at least one hidden layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) || class_count == 0 {
        return Err(EvibError::Config(format!(
            "layer sizes and class count must be positive, got {layer_sizes:?} with {class_count} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunk = Vec::new();
    for (i, pair) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = Parameter::new(
            format!("trunk.{i}.w"),
            xavier_uniform(fan_in, fan_out, 1.0, &mut rng),
        );
        let b = Parameter::new(format!("trunk.{i}.b"), Tensor::zeros(1, fan_out));
        trunk.push((w, b));
    }
    let hidden = *layer_sizes.last().expect("length checked above");
    // One shared draw so both heads start identical.
    let head_w = xavier_uniform(hidden, class_count, HEAD_INIT_GAIN, &mut rng);
    let head_mu = (
        Parameter::new("head_mu.w", head_w.clone()),
        Parameter::new("head_mu.b", Tensor::zeros(1, class_count)),
    );
    let head_sigma = (
        Parameter::new("head_sigma.w", head_w),
        Parameter::new("head_sigma.b", Tensor::zeros(1, class_count)),
    );
    Ok(DualHeadModel { trunk, head_mu, head_sigma, class_count })
}

impl DualHeadModel {
    /// Feature dimension expected by the first trunk layer.
    pub fn input_dim(&self) -> usize {
        self.trunk[0].0.node.shape().0
    }

    /// Hidden layer widths in order.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.trunk.iter().map(|(w, _)| w.node.shape().1).collect()
    }

    /// Number of output classes C.
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// All trainable parameters in checkpoint order.
    pub fn params(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        for (w, b) in &self.trunk {
            out.push(w.clone());
            out.push(b.clone());
        }
        out.push(self.head_mu.0.clone());
        out.push(self.head_mu.1.clone());
        out.push(self.head_sigma.0.clone());
        out.push(self.head_sigma.1.clone());
        out
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.node.value().len()).sum()
    }

    fn check_input(&self, x: &Node) -> Result<()> {
        let (_, d) = x.shape();
        if d != self.input_dim() {
            return Err(EvibError::Dimension(format!(
                "input has {d} features but the model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Trunk forward pass: affine + tanh per layer. Input is B x d.
    pub fn forward_trunk(&self, x: &Node) -> Result<Node> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (w, b) in &self.trunk {
            h = linear_combine(&h, w, b)?.tanh();
        }
        Ok(h)
    }

    /// Single pass producing both Gaussian parameter heads:
    /// `mu` unconstrained, `sigma = softplus(head_sigma output) > 0`.
    pub fn forward_dual(&self, x: &Node) -> Result<(Node, Node)> {
        let h = self.forward_trunk(x)?;
        let mu = linear_combine(&h, &self.head_mu.0, &self.head_mu.1)?;
        let sigma = linear_combine(&h, &self.head_sigma.0, &self.head_sigma.1)?.softplus();
        Ok((mu, sigma))
    }

    /// Mean-head-only pass: the deterministic pre-evidence (or logits)
    /// used by the single-head baseline modes.
    pub fn forward_mu(&self, x: &Node) -> Result<Node> {
        let h = self.forward_trunk(x)?;
        linear_combine(&h, &self.head_mu.0, &self.head_mu.1)
    }
}

/// Writes the model's parameters as checkpoint JSON.
pub fn save_checkpoint(model: &DualHeadModel, path: impl AsRef<Path>) -> Result<()> {
    let map: BTreeMap<String, CheckpointEntry> = model
        .params()
        .into_iter()
        .map(|p| {
            let v = p.node.value();
            (
                p.name.clone(),
                CheckpointEntry { shape: [v.rows(), v.cols()], data: v.data().to_vec() },
            )
        })
        .collect();
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &map)
        .map_err(|e| EvibError::Io(e.into()))?;
    Ok(())
}

/// Reads a checkpoint and reconstructs the model, inferring the
/// architecture from parameter names and shapes. Inconsistent shapes fail
/// with an error naming the offending parameter.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DualHeadModel> {
    let text = std::fs::read_to_string(&path)?;
    let map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(&text).map_err(|e| {
        EvibError::Parse(format!(
            "checkpoint {}: {e}",
            path.as_ref().display()
        ))
    })?;

    let fetch = |name: &str| -> Result<Tensor> {
        let entry = map
            .get(name)
            .ok_or_else(|| EvibError::Parse(format!("checkpoint is missing parameter {name}")))?;
        if entry.data.len() != entry.shape[0] * entry.shape[1] {
            return Err(EvibError::Parse(format!(
                "parameter {name} declares shape {:?} but holds {} values",
                entry.shape,
                entry.data.len()
            )));
        }
        Ok(Tensor::from_vec(entry.shape[0], entry.shape[1], entry.data.clone()))
    };

    // Trunk layers must be contiguous from zero.
    let mut trunk = Vec::new();
    let mut i = 0;
    while map.contains_key(&format!("trunk.{i}.w")) {
        let w = fetch(&format!("trunk.{i}.w"))?;
        let b = fetch(&format!("trunk.{i}.b"))?;
        if b.shape() != (1, w.cols()) {
            return Err(EvibError::Dimension(format!(
                "trunk.{i}.b has shape {:?} but trunk.{i}.w expects (1, {})",
                b.shape(),
                w.cols()
            )));
        }
        if let Some((prev_w, _)) = trunk.last() {
            let prev: &Parameter = prev_w;
            if w.rows() != prev.node.shape().1 {
                return Err(EvibError::Dimension(format!(
                    "trunk.{i}.w has {} input rows but the previous layer is {} wide",
                    w.rows(),
                    prev.node.shape().1
                )));
            }
        }
        trunk.push((
            Parameter::new(format!("trunk.{i}.w"), w),
            Parameter::new(format!("trunk.{i}.b"), b),
        ));
        i += 1;
    }
    if trunk.is_empty() {
        return Err(EvibError::Parse("checkpoint has no trunk.0.w parameter".into()));
    }
    let hidden = trunk.last().expect("non-empty").0.node.shape().1;

    let head = |prefix: &str| -> Result<(Parameter, Parameter)> {
        let w = fetch(&format!("{prefix}.w"))?;
        let b = fetch(&format!("{prefix}.b"))?;
        if w.rows() != hidden {
            return Err(EvibError::Dimension(format!(
                "{prefix}.w has {} input rows but the trunk output is {hidden} wide",
                w.rows()
            )));
        }
        if b.shape() != (1, w.cols()) {
            return Err(EvibError::Dimension(format!(
                "{prefix}.b has shape {:?} but {prefix}.w expects (1, {})",
                b.shape(),
                w.cols()
            )));
        }
        Ok((
            Parameter::new(format!("{prefix}.w"), w),
            Parameter::new(format!("{prefix}.b"), b),
        ))
    };
    let head_mu = head("head_mu")?;
    let head_sigma = head("head_sigma")?;
    if head_sigma.0.node.shape() != head_mu.0.node.shape() {
        return Err(EvibError::Dimension(format!(
            "head_sigma.w shape {:?} does not match head_mu.w shape {:?}",
            head_sigma.0.node.shape(),
            head_mu.0.node.shape()
        )));
    }
    let class_count = head_mu.0.node.shape().1;
    Ok(DualHeadModel { trunk, head_mu, head_sigma, class_count })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_input(rows: usize, cols: usize, v: f64) -> Node {
        Node::constant(Tensor::full(rows, cols, v))
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = build_model(&[2, 32], 4, 9).unwrap();
        let b = build_model(&[2, 32], 4, 9).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.node.value().data(), pb.node.value().data());
        }
        let c = build_model(&[2, 32], 4, 10).unwrap();
        assert_ne!(
            a.params()[0].node.value().data(),
            c.params()[0].node.value().data()
        );
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // 2*32 trunk weights + 32 biases + two heads of (32*4 + 4) each.
        let m = build_model(&[2, 32], 4, 1).unwrap();
        assert_eq!(m.parameter_count(), 2 * 32 + 32 + 2 * (32 * 4 + 4));
        assert_eq!(m.parameter_count(), 360);
        assert_eq!(m.input_dim(), 2);
        assert_eq!(m.class_count(), 4);
        assert_eq!(m.hidden_sizes(), vec![32]);
    }

    #[test]
    fn zero_input_forward_is_finite_with_positive_sigma() {
        let m = build_model(&[3, 16, 8], 5, 2).unwrap();
        let x = constant_input(4, 3, 0.0);
        let (mu, sigma) = m.forward_dual(&x).unwrap();
        assert_eq!(mu.shape(), (4, 5));
        assert_eq!(sigma.shape(), (4, 5));
        assert!(mu.value().all_finite());
        assert!(sigma.value().data().iter().all(|&s| s > 0.0 && s.is_finite()));
    }

    #[test]
    fn heads_start_identical() {
        let m = build_model(&[2, 8], 3, 3).unwrap();
        let params = m.params();
        let mu_w = params.iter().find(|p| p.name == "head_mu.w").unwrap();
        let sg_w = params.iter().find(|p| p.name == "head_sigma.w").unwrap();
        assert_eq!(mu_w.node.value().data(), sg_w.node.value().data());
    }

    #[test]
    fn forward_is_deterministic_and_trunk_is_shared() {
        let m = build_model(&[2, 8], 3, 4).unwrap();
        let x = Node::constant(Tensor::row(&[0.3, -0.7]));
        let (mu1, s1) = m.forward_dual(&x).unwrap();
        let (mu2, s2) = m.forward_dual(&x).unwrap();
        assert_eq!(mu1.value().data(), mu2.value().data());
        assert_eq!(s1.value().data(), s2.value().data());

        // Perturbing one trunk weight moves both heads.
        let w0 = &m.params()[0];
        let mut bumped = w0.node.value_clone();
        bumped.data_mut()[0] += 0.05;
        w0.node.set_value(bumped);
        let (mu3, s3) = m.forward_dual(&x).unwrap();
        assert_ne!(mu1.value().data(), mu3.value().data());
        assert_ne!(s1.value().data(), s3.value().data());
    }

    #[test]
    fn input_dimension_is_checked() {
        let m = build_model(&[2, 8], 3, 5).unwrap();
        let bad = constant_input(1, 5, 0.0);
        assert!(matches!(m.forward_dual(&bad), Err(EvibError::Dimension(_))));
        assert!(matches!(
            build_model(&[], 3, 5),
            Err(EvibError::Config(_))
        ));
        assert!(matches!(
            build_model(&[4], 3, 5),
            Err(EvibError::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = build_model(&[2, 16], 4, 7).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        for (pa, pb) in m.params().iter().zip(loaded.params().iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.node.value().data(), pb.node.value().data());
        }

        // Identical predictions on random inputs.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let x = Tensor::row(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let xa = Node::constant(x.clone());
            let (mu_a, s_a) = m.forward_dual(&xa).unwrap();
            let (mu_b, s_b) = loaded.forward_dual(&xa).unwrap();
            assert_eq!(mu_a.value().data(), mu_b.value().data());
            assert_eq!(s_a.value().data(), s_b.value().data());
        }

        // Checkpoints of two same-seed builds are byte-identical.
        let path2 = dir.path().join("model2.json");
        save_checkpoint(&build_model(&[2, 16], 4, 7).unwrap(), &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{ not json").unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(EvibError::Parse(_))));

        // Shape-inconsistent heads are named in the error.
        let m = build_model(&[2, 8], 3, 6).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(&text).unwrap();
        map.get_mut("head_sigma.w").unwrap().shape = [4, 6];
        map.get_mut("head_sigma.w").unwrap().data = vec![0.0; 24];
        let tampered = dir.path().join("tampered.json");
        std::fs::write(&tampered, serde_json::to_string(&map).unwrap()).unwrap();
        let err = load_checkpoint(&tampered).unwrap_err().to_string();
        assert!(err.contains("head_sigma.w"), "error should name the parameter: {err}");

        // Truncated data array is caught.
        let mut map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(&text).unwrap();
        map.get_mut("trunk.0.w").unwrap().data.pop();
        let truncated = dir.path().join("truncated.json");
        std::fs::write(&truncated, serde_json::to_string(&map).unwrap()).unwrap();
        let err = load_checkpoint(&truncated).unwrap_err().to_string();
        assert!(err.contains("trunk.0.w"));
    }
}
