//! Encoder, mixture density head, and linear classifier.
//!
//! All weights live in one flat `f64` buffer; named tensors index into it.
//! Every layer has a plain forward pass (inference) and a tape forward pass
//! (training). Both perform the same floating-point operations in the same
//! order, so their outputs agree bit for bit.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{input, numeric, Result};
use crate::gmm::{IsoGaussianMixture, VARIANCE_FLOOR};
use crate::grad::{sigmoid, Tape, Var};
use crate::rng;

/// Norms below this are rejected by the hypersphere projection.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Self::Elu => elu(x),
            Self::Tanh => x.tanh(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Self::Relu => tape.relu(x),
            Self::Elu => tape.elu(x),
            Self::Tanh => tape.tanh(x),
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Maps a raw head output to a variance: `ELU(a) + 2`, bounded below by 1.
pub fn variance_activation(raw: f64) -> f64 {
    elu(raw) + (VARIANCE_FLOOR + 1.0)
}

/// Softmax shifted by the maximum.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Projects onto the unit sphere.
pub fn l2_normalize(xs: &[f64]) -> Result<Vec<f64>> {
    let norm = xs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= NORM_GUARD) {
        return numeric(format!("cannot normalize vector with norm {norm}"));
    }
    Ok(xs.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    /// Encoder output dimension `H`.
    pub embed_dim: usize,
    /// Dimension `n` of the space the mixtures live in.
    pub mixture_dim: usize,
    pub num_classes: usize,
    pub mdn_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            encoder_hidden: vec![64],
            embed_dim: 32,
            mixture_dim: 4,
            num_classes: 6,
            mdn_hidden: vec![128, 64],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.embed_dim, self.mixture_dim, self.num_classes];
        if dims.iter().chain(&self.encoder_hidden).chain(&self.mdn_hidden).any(|d| *d == 0) {
            return input("all model dimensions must be at least 1");
        }
        if self.mdn_hidden.is_empty() {
            return input("mixture head needs at least one hidden layer");
        }
        Ok(())
    }

    /// `(name, group, fan_in, fan_out)` for every dense layer.
    fn layers(&self) -> Vec<(String, Group, usize, usize)> {
        let mut out = Vec::new();
        let mut prev = self.input_dim;
        for (i, &h) in self.encoder_hidden.iter().chain([&self.embed_dim]).enumerate() {
            out.push((format!("encoder.{i}"), Group::Encoder, prev, h));
            prev = h;
        }
        prev = self.embed_dim;
        for (i, &h) in self.mdn_hidden.iter().enumerate() {
            out.push((format!("mdn.hidden.{i}"), Group::Mdn, prev, h));
            prev = h;
        }
        for head in ["mdn.pi", "mdn.mean", "mdn.var"] {
            out.push((head.to_string(), Group::Mdn, prev, self.num_classes));
        }
        out.push(("mdn.z".to_string(), Group::Mdn, self.embed_dim, self.mixture_dim));
        out.push(("classifier".to_string(), Group::Classifier, self.embed_dim, self.num_classes));
        out
    }

    /// `(name, group, rows, cols)` of every tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, Group, usize, usize)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, group, fan_in, fan_out)| {
                [(format!("{name}.weight"), group, fan_out, fan_in), (format!("{name}.bias"), group, fan_out, 1)]
            })
            .collect()
    }

    /// Analytic number of scalars per group.
    pub fn param_count(&self, group: Group) -> usize {
        self.layers().iter().filter(|l| l.1 == group).map(|(_, _, i, o)| i * o + o).sum()
    }
}

/// Which part of the network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Mdn,
    Classifier,
}

impl Group {
    pub fn code(self) -> u8 {
        match self {
            Self::Encoder => 0,
            Self::Mdn => 1,
            Self::Classifier => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Encoder),
            1 => Some(Self::Mdn),
            2 => Some(Self::Classifier),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable weights, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub tensors: Vec<TensorSpec>,
    pub data: Vec<f64>,
}

/// Weight (`out × in`, row-major) and bias tensors of one dense layer.
#[derive(Debug, Clone, Copy)]
struct Dense<'a> {
    weight: &'a TensorSpec,
    bias: &'a TensorSpec,
}

impl Dense<'_> {
    fn fan_in(&self) -> usize {
        self.weight.cols
    }

    fn forward(&self, data: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &data[self.weight.range()];
        let b = &data[self.bias.range()];
        let k = self.fan_in();
        (0..self.weight.rows)
            .map(|o| {
                let mut v = 0.0;
                for (wi, xi) in w[o * k..(o + 1) * k].iter().zip(x) {
                    v += wi * xi;
                }
                v + b[o]
            })
            .collect()
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], x: &[Var]) -> Vec<Var> {
        let w = &vars[self.weight.range()];
        let b = &vars[self.bias.range()];
        let k = self.fan_in();
        (0..self.weight.rows).map(|o| tape.dot(&w[o * k..(o + 1) * k], x, b[o])).collect()
    }

    fn record_const(&self, tape: &mut Tape, vars: &[Var], x: &[f64]) -> Vec<Var> {
        let w = &vars[self.weight.range()];
        let b = &vars[self.bias.range()];
        let k = self.fan_in();
        (0..self.weight.rows).map(|o| tape.dot_const(&w[o * k..(o + 1) * k], x, b[o])).collect()
    }
}

/// Mixture head output recorded on a tape.
#[derive(Debug, Clone)]
pub struct MixtureVars {
    pub weights: Vec<Var>,
    pub means: Vec<Var>,
    pub variances: Vec<Var>,
    pub z: Vec<Var>,
}

impl MixtureVars {
    /// Reads the recorded values back as a mixture.
    pub fn to_mixture(&self, tape: &Tape) -> Result<IsoGaussianMixture> {
        IsoGaussianMixture::from_parts(
            tape.values(&self.weights),
            tape.values(&self.means),
            tape.values(&self.variances),
            self.z.len(),
        )
    }
}

impl ModelParams {
    /// Fresh parameters. Every weight and bias is drawn from
    /// `U[−1/√fan_in, 1/√fan_in]` except the variance head, whose weights are
    /// all exactly 1 and whose bias is 0.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for (name, group, fan_in, fan_out) in config.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for (suffix, rows, cols) in [("weight", fan_out, fan_in), ("bias", fan_out, 1)] {
                let spec = TensorSpec { name: format!("{name}.{suffix}"), group, rows, cols, offset: data.len() };
                for _ in 0..spec.len() {
                    let v = if name == "mdn.var" {
                        if suffix == "weight" {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        rng.random_range(-bound..=bound)
                    };
                    data.push(v);
                }
                tensors.push(spec);
            }
        }
        Ok(Self { config: config.clone(), seed, tensors, data })
    }

    pub fn tensor_spec(&self, name: &str) -> Result<&TensorSpec> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| crate::Error::Input(format!("missing tensor {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.data[self.tensor_spec(name)?.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.tensor_spec(name)?.range();
        Ok(&mut self.data[range])
    }

    pub fn has_group(&self, group: Group) -> bool {
        self.tensors.iter().any(|t| t.group == group)
    }

    /// Number of scalars in `group`.
    pub fn count(&self, group: Group) -> usize {
        self.tensors.iter().filter(|t| t.group == group).map(TensorSpec::len).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.data.len()
    }

    /// `true` for every scalar belonging to one of `groups`.
    pub fn mask(&self, groups: &[Group]) -> Vec<bool> {
        let mut m = vec![false; self.data.len()];
        for t in self.tensors.iter().filter(|t| groups.contains(&t.group)) {
            m[t.range()].iter_mut().for_each(|x| *x = true);
        }
        m
    }

    /// Copy with every tensor of `group` removed.
    pub fn without(&self, group: Group) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for t in self.tensors.iter().filter(|t| t.group != group) {
            let mut spec = t.clone();
            spec.offset = data.len();
            data.extend_from_slice(&self.data[t.range()]);
            tensors.push(spec);
        }
        Self { config: self.config.clone(), seed: self.seed, tensors, data }
    }

    /// Raw bytes of one group, for freeze checks.
    pub fn group_bytes(&self, group: Group) -> Vec<u8> {
        self.tensors
            .iter()
            .filter(|t| t.group == group)
            .flat_map(|t| self.data[t.range()].iter().flat_map(|x| x.to_le_bytes()))
            .collect()
    }

    fn dense(&self, name: &str) -> Result<Dense<'_>> {
        Ok(Dense { weight: self.tensor_spec(&format!("{name}.weight"))?, bias: self.tensor_spec(&format!("{name}.bias"))? })
    }

    fn encoder_layers(&self) -> Result<Vec<Dense<'_>>> {
        (0..=self.config.encoder_hidden.len()).map(|i| self.dense(&format!("encoder.{i}"))).collect()
    }

    fn mdn_hidden_layers(&self) -> Result<Vec<Dense<'_>>> {
        (0..self.config.mdn_hidden.len()).map(|i| self.dense(&format!("mdn.hidden.{i}"))).collect()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return input(format!("{what} has dimension {got}, expected {want}"));
    }
    Ok(())
}

/// MLP then projection onto the unit sphere. The last layer is linear.
pub fn encoder_forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_len("input", x.len(), params.config.input_dim)?;
    let layers = params.encoder_layers()?;
    let mut h = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(&params.data, &h);
        if i + 1 < layers.len() {
            h.iter_mut().for_each(|v| *v = params.config.activation.apply(*v));
        }
    }
    l2_normalize(&h)
}

/// Mixture parameters and the projected feature `z` for an embedding.
pub fn mdn_forward(params: &ModelParams, h: &[f64]) -> Result<(IsoGaussianMixture, Vec<f64>)> {
    check_len("embedding", h.len(), params.config.embed_dim)?;
    let mut a = h.to_vec();
    for layer in params.mdn_hidden_layers()? {
        a = layer.forward(&params.data, &a);
        a.iter_mut().for_each(|v| *v = params.config.activation.apply(*v));
    }
    let weights = softmax(&params.dense("mdn.pi")?.forward(&params.data, &a));
    let means = params.dense("mdn.mean")?.forward(&params.data, &a);
    let variances = params.dense("mdn.var")?.forward(&params.data, &a).into_iter().map(variance_activation).collect();
    let z = params.dense("mdn.z")?.forward(&params.data, h);
    let gmm = IsoGaussianMixture::from_parts(weights, means, variances, params.config.mixture_dim)?;
    Ok((gmm, z))
}

/// Per-class probabilities `sigmoid(W h + b)`.
pub fn classifier_forward(params: &ModelParams, h: &[f64]) -> Result<Vec<f64>> {
    check_len("embedding", h.len(), params.config.embed_dim)?;
    Ok(params.dense("classifier")?.forward(&params.data, h).into_iter().map(sigmoid).collect())
}

/// Tape version of [`encoder_forward`].
pub fn record_encoder(tape: &mut Tape, params: &ModelParams, vars: &[Var], x: &[f64]) -> Result<Vec<Var>> {
    check_len("input", x.len(), params.config.input_dim)?;
    let layers = params.encoder_layers()?;
    let mut h = layers[0].record_const(tape, vars, x);
    for layer in &layers[1..] {
        let act: Vec<Var> = h.iter().map(|v| params.config.activation.record(tape, *v)).collect();
        h = layer.record(tape, vars, &act);
    }
    record_l2_normalize(tape, &h)
}

/// Tape version of [`l2_normalize`]: `∂y_i/∂x_j = (δ_ij − y_i y_j)/‖x‖`.
pub fn record_l2_normalize(tape: &mut Tape, xs: &[Var]) -> Result<Vec<Var>> {
    let vals = tape.values(xs);
    let norm = vals.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ys = l2_normalize(&vals)?;
    let mut partials = Vec::with_capacity(xs.len());
    Ok((0..xs.len())
        .map(|i| {
            partials.clear();
            partials.extend(
                xs.iter()
                    .enumerate()
                    .map(|(j, x)| (*x, (f64::from(u8::from(i == j)) - ys[i] * ys[j]) / norm)),
            );
            tape.custom("l2_normalize", ys[i], &partials)
        })
        .collect())
}

/// Tape softmax: `∂π_i/∂x_j = π_i(δ_ij − π_j)`.
pub fn record_softmax(tape: &mut Tape, xs: &[Var]) -> Vec<Var> {
    let probs = softmax(&tape.values(xs));
    (0..xs.len())
        .map(|i| {
            let partials: Vec<(Var, f64)> = xs
                .iter()
                .enumerate()
                .map(|(j, x)| (*x, probs[i] * (f64::from(u8::from(i == j)) - probs[j])))
                .collect();
            tape.custom("softmax", probs[i], &partials)
        })
        .collect()
}

/// Tape version of [`mdn_forward`].
pub fn record_mdn(tape: &mut Tape, params: &ModelParams, vars: &[Var], h: &[Var]) -> Result<MixtureVars> {
    check_len("embedding", h.len(), params.config.embed_dim)?;
    let mut a = h.to_vec();
    for layer in params.mdn_hidden_layers()? {
        let pre = layer.record(tape, vars, &a);
        a = pre.iter().map(|v| params.config.activation.record(tape, *v)).collect();
    }
    let logits = params.dense("mdn.pi")?.record(tape, vars, &a);
    let weights = record_softmax(tape, &logits);
    let means = params.dense("mdn.mean")?.record(tape, vars, &a);
    let raw = params.dense("mdn.var")?.record(tape, vars, &a);
    let variances = raw
        .iter()
        .map(|r| {
            let e = tape.elu(*r);
            tape.add_const(e, VARIANCE_FLOOR + 1.0)
        })
        .collect();
    let z = params.dense("mdn.z")?.record(tape, vars, h);
    Ok(MixtureVars { weights, means, variances, z })
}

/// Tape version of [`classifier_forward`] on a constant embedding.
pub fn record_classifier(tape: &mut Tape, params: &ModelParams, vars: &[Var], h: &[f64]) -> Result<Vec<Var>> {
    check_len("embedding", h.len(), params.config.embed_dim)?;
    let logits = params.dense("classifier")?.record_const(tape, vars, h);
    Ok(logits.iter().map(|l| tape.sigmoid(*l)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            encoder_hidden: vec![7],
            embed_dim: 4,
            mixture_dim: 3,
            num_classes: 3,
            mdn_hidden: vec![6, 5],
            activation: Activation::Relu,
        }
    }

    fn input(seed: u64, d: usize) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn encoder_output_on_unit_sphere_and_deterministic() {
        let p = ModelParams::init(&small(), 3).unwrap();
        for s in 0..20 {
            let h = encoder_forward(&p, &input(s, 5)).unwrap();
            let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-9);
            assert_eq!(h, encoder_forward(&p, &input(s, 5)).unwrap());
        }
        assert!(encoder_forward(&p, &[0.0; 4]).is_err());
    }

    #[test]
    fn identity_encoder_passes_unit_vectors_through() {
        let cfg = ModelConfig { input_dim: 3, encoder_hidden: vec![], embed_dim: 3, ..small() };
        let mut p = ModelParams::init(&cfg, 0).unwrap();
        let w = p.tensor_mut("encoder.0.weight").unwrap();
        w.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        p.tensor_mut("encoder.0.bias").unwrap().fill(0.0);
        let x = [0.6, 0.0, -0.8];
        assert_eq!(encoder_forward(&p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn mixture_head_activations() {
        let mut p = ModelParams::init(&small(), 9).unwrap();
        p.tensor_mut("mdn.pi.weight").unwrap().fill(0.0);
        p.tensor_mut("mdn.pi.bias").unwrap().fill(0.0);
        p.tensor_mut("mdn.var.weight").unwrap().fill(0.0);
        let h = encoder_forward(&p, &input(1, 5)).unwrap();
        let (gmm, z) = mdn_forward(&p, &h).unwrap();
        assert_eq!(gmm.weights(), &[1.0 / 3.0; 3]);
        assert_eq!(gmm.variances(), &[2.0; 3]);
        assert_eq!(z.len(), 3);
        assert_eq!(variance_activation(0.0), 2.0);
        assert!(variance_activation(-800.0) >= 1.0);
        assert!(variance_activation(-30.0) - 1.0 < 1e-12);
    }

    #[test]
    fn mixture_validity_for_extreme_embeddings() {
        let p = ModelParams::init(&small(), 2).unwrap();
        for scale in [1e-6, 1.0, 1e3, 1e6] {
            let h: Vec<f64> = input(5, 4).iter().map(|x| x * scale).collect();
            let (gmm, _) = mdn_forward(&p, &h).unwrap();
            IsoGaussianMixture::new(gmm.weights().to_vec(), gmm.means().to_vec(), gmm.variances().to_vec(), 3)
                .expect("head output must satisfy mixture invariants");
        }
    }

    #[test]
    fn classifier_zero_weights_give_half() {
        let mut p = ModelParams::init(&small(), 2).unwrap();
        p.tensor_mut("classifier.weight").unwrap().fill(0.0);
        p.tensor_mut("classifier.bias").unwrap().fill(0.0);
        assert_eq!(classifier_forward(&p, &[0.5, 0.5, 0.5, 0.5]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn classifier_matches_hand_computation() {
        let p = ModelParams::init(&small(), 6).unwrap();
        let h = [0.1, -0.7, 0.4, 0.2];
        let w = p.tensor("classifier.weight").unwrap();
        let b = p.tensor("classifier.bias").unwrap();
        let got = classifier_forward(&p, &h).unwrap();
        for c in 0..3 {
            let logit: f64 = (0..4).map(|j| w[c * 4 + j] * h[j]).sum::<f64>() + b[c];
            let expected = 1.0 / (1.0 + (-logit).exp());
            assert!((got[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn init_contract() {
        let cfg = small();
        let a = ModelParams::init(&cfg, 17).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 17).unwrap());
        assert_ne!(a.data, ModelParams::init(&cfg, 18).unwrap().data);
        assert!(a.tensor("mdn.var.weight").unwrap().iter().all(|w| *w == 1.0));
        for t in a.tensors.iter().filter(|t| !t.name.starts_with("mdn.var")) {
            let fan_in = if t.name.ends_with("bias") {
                a.tensor_spec(&t.name.replace("bias", "weight")).unwrap().cols
            } else {
                t.cols
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            assert!(a.data[t.range()].iter().all(|w| w.abs() <= bound), "{}", t.name);
        }
    }

    #[test]
    fn parameter_count_matches_layer_shapes() {
        let cfg = small();
        let p = ModelParams::init(&cfg, 1).unwrap();
        // encoder 5→7→4, mdn 4→6→5 then 3 heads of 5→3, z 4→3, classifier 4→3
        let encoder = (5 * 7 + 7) + (7 * 4 + 4);
        let mdn = (4 * 6 + 6) + (6 * 5 + 5) + 3 * (5 * 3 + 3) + (4 * 3 + 3);
        let classifier = 4 * 3 + 3;
        assert_eq!(p.count(Group::Encoder), encoder);
        assert_eq!(p.count(Group::Mdn), mdn);
        assert_eq!(p.count(Group::Classifier), classifier);
        assert_eq!(cfg.param_count(Group::Mdn), mdn);
        assert_eq!(p.num_trainable(), encoder + mdn + classifier);
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        for act in [Activation::Relu, Activation::Elu, Activation::Tanh] {
            let cfg = ModelConfig { activation: act, ..small() };
            let p = ModelParams::init(&cfg, 4).unwrap();
            let x = input(8, 5);
            let h = encoder_forward(&p, &x).unwrap();
            let (gmm, z) = mdn_forward(&p, &h).unwrap();
            let probs = classifier_forward(&p, &h).unwrap();

            let mut tape = Tape::new();
            let vars = tape.leaves(&p.data);
            let hv = record_encoder(&mut tape, &p, &vars, &x).unwrap();
            assert_eq!(tape.values(&hv), h);
            let mv = record_mdn(&mut tape, &p, &vars, &hv).unwrap();
            assert_eq!(mv.to_mixture(&tape).unwrap(), gmm);
            assert_eq!(tape.values(&mv.z), z);
            let pv = record_classifier(&mut tape, &p, &vars, &h).unwrap();
            assert_eq!(tape.values(&pv), probs);
        }
    }

    #[test]
    fn without_mdn_drops_head() {
        let p = ModelParams::init(&small(), 1).unwrap();
        let q = p.without(Group::Mdn);
        assert!(!q.has_group(Group::Mdn));
        assert_eq!(q.group_bytes(Group::Encoder), p.group_bytes(Group::Encoder));
        let h = encoder_forward(&q, &input(2, 5)).unwrap();
        assert_eq!(h, encoder_forward(&p, &input(2, 5)).unwrap());
        assert!(mdn_forward(&q, &h).is_err());
    }
}
