//! MLP classifiers with optional feature views and a freezable prefix.
//!
//! Layer `l` owns `layer{l}.weight` (`fan_in × fan_out`) and `layer{l}.bias`
//! (`1 × fan_out`). Hidden layers use ReLU. When a `view_mask` is present,
//! first-hidden-layer units whose mask entry is false are multiplied by zero
//! after the activation, so a model only "sees" its own slice of a shared
//! representation. An `input_mask` does the same on raw input features.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Which first-hidden-layer units reach the rest of the network.
    #[serde(default)]
    pub view_mask: Option<Vec<bool>>,
    /// Which input features the model receives.
    #[serde(default)]
    pub input_mask: Option<Vec<bool>>,
    /// Number of leading layers whose parameters are never updated.
    #[serde(default)]
    pub frozen_prefix: usize,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden_widths: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_widths,
            num_classes,
            activation: Activation::Relu,
            view_mask: None,
            input_mask: None,
            frozen_prefix: 0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// `(fan_in, fan_out)` for each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.num_classes)) {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn is_frozen_layer(&self, layer: usize) -> bool {
        layer < self.frozen_prefix
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden_widths", "every width must be positive"));
        }
        if self.frozen_prefix > self.num_layers() {
            return Err(Error::config(
                "frozen_prefix",
                format!("{} exceeds the {} layers", self.frozen_prefix, self.num_layers()),
            ));
        }
        if let Some(mask) = &self.view_mask {
            let Some(&width) = self.hidden_widths.first() else {
                return Err(Error::config("view_mask", "requires at least one hidden layer"));
            };
            if mask.len() != width {
                return Err(Error::config(
                    "view_mask",
                    format!("length {} does not match first hidden width {width}", mask.len()),
                ));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::config("view_mask", "at least one unit must be visible"));
            }
        }
        if let Some(mask) = &self.input_mask {
            if mask.len() != self.input_dim {
                return Err(Error::config(
                    "input_mask",
                    format!("length {} does not match input_dim {}", mask.len(), self.input_dim),
                ));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::config("input_mask", "at least one feature must be visible"));
            }
        }
        Ok(())
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Layer index and kind recovered from a parameter name.
fn parse_name(name: &str) -> Option<(usize, bool)> {
    let rest = name.strip_prefix("layer")?;
    let (idx, kind) = rest.split_once('.')?;
    let idx = idx.parse().ok()?;
    match kind {
        "weight" => Some((idx, true)),
        "bias" => Some((idx, false)),
        _ => None,
    }
}

/// Named parameter tensors of one model, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    tensors: IndexMap<String, Tensor>,
}

impl Parameters {
    pub fn from_map(tensors: IndexMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Glorot-uniform weights, zero biases; bit-identical for identical
    /// `(spec, seed)`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeding::rng(seed);
        let mut tensors = IndexMap::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            tensors.insert(weight_name(l), Tensor::new(vec![fan_in, fan_out], data)?);
            tensors.insert(bias_name(l), Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self { tensors })
    }

    /// Checks names and shapes against a spec.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let dims = spec.layer_dims();
        if self.tensors.len() != 2 * dims.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, found {}",
                2 * dims.len(),
                self.tensors.len()
            )));
        }
        for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            for (name, shape) in [(weight_name(l), vec![fan_in, fan_out]), (bias_name(l), vec![1, fan_out])] {
                let t = self
                    .tensors
                    .get(&name)
                    .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Dimension {
                        op: "parameters",
                        left: t.shape().to_vec(),
                        right: shape,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Whether `name` belongs to a layer frozen under `spec`.
    pub fn is_frozen(spec: &ModelSpec, name: &str) -> bool {
        parse_name(name).is_some_and(|(l, _)| spec.is_frozen_layer(l))
    }

    pub fn is_weight(name: &str) -> bool {
        parse_name(name).is_some_and(|(_, w)| w)
    }

    /// Euclidean distance over every parameter, summed in table order.
    pub fn distance(&self, other: &Parameters) -> f64 {
        let mut acc = 0.0;
        for (name, t) in &self.tensors {
            let o = &other.tensors[name];
            for (a, b) in t.data().iter().zip(o.data()) {
                let d = a - b;
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    pub fn bit_eq(&self, other: &Parameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .all(|(n, t)| other.tensors.get(n).is_some_and(|o| t.bit_eq(o)))
    }

    /// Flat binary encoding. Layout, all integers little-endian:
    ///
    /// ```text
    /// magic   8 bytes  "CDSTPRM1"
    /// count   u32      number of tensors
    /// table   count × { name_len u16, name bytes, rank u8, dims u32 × rank }
    /// payload count × row-major f64 values, in table order
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::contract("bad parameter blob magic"));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::contract("parameter name is not UTF-8"))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            table.push((name, shape));
        }
        let mut tensors = IndexMap::with_capacity(count);
        for (name, shape) in table {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.array().map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::contract("trailing bytes after parameter payload"));
        }
        Ok(Self { tensors })
    }

    fn encoded_len(&self) -> usize {
        let table: usize = self
            .tensors
            .iter()
            .map(|(n, t)| 2 + n.len() + 1 + 4 * t.shape().len())
            .sum();
        MAGIC.len() + 4 + table + 8 * self.num_scalars()
    }
}

const MAGIC: &[u8; 8] = b"CDSTPRM1";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::contract("parameter blob truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Serialized size in bytes of a spec's parameters, without building them.
pub fn encoded_len(spec: &ModelSpec) -> usize {
    let mut len = MAGIC.len() + 4;
    let mut scalars = 0;
    for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        len += 2 + weight_name(l).len() + 1 + 8;
        len += 2 + bias_name(l).len() + 1 + 8;
        scalars += fan_in * fan_out + fan_out;
    }
    len + 8 * scalars
}

/// Bits to ship one model, `8 × encoded_len`.
pub fn model_bits(spec: &ModelSpec) -> u64 {
    8 * encoded_len(spec) as u64
}

fn mask_row(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
}

fn masked_columns(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let row = Tensor::new(vec![mask.len()], mask_row(mask))?;
    let rows = x.rows();
    let full = Tensor::new(
        vec![rows, mask.len()],
        (0..rows).flat_map(|_| row.data().iter().copied()).collect(),
    )?;
    x.mul(&full)
}

/// Logits `B × num_classes` for inputs `B × input_dim`.
pub fn forward(spec: &ModelSpec, params: &Parameters, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            left: x.shape().to_vec(),
            right: vec![x.rows(), spec.input_dim],
        });
    }
    let mut h = match &spec.input_mask {
        Some(mask) => masked_columns(x, mask)?,
        None => x.clone(),
    };
    let layers = spec.num_layers();
    for l in 0..layers {
        let w = params
            .get(&weight_name(l))
            .ok_or_else(|| Error::contract(format!("missing {}", weight_name(l))))?;
        let b = params
            .get(&bias_name(l))
            .ok_or_else(|| Error::contract(format!("missing {}", bias_name(l))))?;
        h = h.matmul(w)?.add_row(b)?;
        if l + 1 < layers {
            h = h.relu();
            if l == 0 {
                if let Some(mask) = &spec.view_mask {
                    h = masked_columns(&h, mask)?;
                }
            }
        }
    }
    Ok(h)
}

/// Records the forward pass on `tape`. Frozen layers enter as constants;
/// trainable tensors are registered under their parameter names.
pub fn forward_on_tape(tape: &mut Tape, spec: &ModelSpec, params: &Parameters, x: Var) -> Result<Var> {
    let x_val = tape.value(x);
    if x_val.shape().len() != 2 || x_val.cols() != spec.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            left: x_val.shape().to_vec(),
            right: vec![x_val.rows(), spec.input_dim],
        });
    }
    let batch = x_val.rows();
    let mut h = x;
    if let Some(mask) = &spec.input_mask {
        let m = tape.constant(masked_columns(&Tensor::ones(&[batch, spec.input_dim]), mask)?);
        h = tape.mul(h, m)?;
    }
    let ones = tape.constant(Tensor::ones(&[batch, 1]));
    let layers = spec.num_layers();
    for l in 0..layers {
        let (wn, bn) = (weight_name(l), bias_name(l));
        let w_val = params
            .get(&wn)
            .ok_or_else(|| Error::contract(format!("missing {wn}")))?
            .clone();
        let b_val = params
            .get(&bn)
            .ok_or_else(|| Error::contract(format!("missing {bn}")))?
            .clone();
        let (w, b) = if spec.is_frozen_layer(l) {
            (tape.constant(w_val), tape.constant(b_val))
        } else {
            (tape.param(wn, w_val)?, tape.param(bn, b_val)?)
        };
        let z = tape.matmul(h, w)?;
        let bias = tape.matmul(ones, b)?;
        h = tape.add(z, bias)?;
        if l + 1 < layers {
            h = tape.relu(h);
            if l == 0 {
                if let Some(mask) = &spec.view_mask {
                    let width = mask.len();
                    let m = tape.constant(masked_columns(&Tensor::ones(&[batch, width]), mask)?);
                    h = tape.mul(h, m)?;
                }
            }
        }
    }
    Ok(h)
}

/// The three initialisation regimes of a split family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArm {
    /// First layer copied from the pretrained model and never updated.
    Frozen,
    /// First layer copied from the pretrained model, then trained.
    PretrainedNotFrozen,
    /// Fresh initialization throughout.
    RandomInit,
}

impl SplitArm {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitArm::Frozen => "frozen",
            SplitArm::PretrainedNotFrozen => "pretrained_not_frozen",
            SplitArm::RandomInit => "random_init",
        }
    }
}

/// Builds `n_splits` models that each see a disjoint, equal-size block of
/// first-hidden-layer units. Layers after the first are always freshly
/// initialized from `seed`.
pub fn make_split_family(
    pretrained: &Parameters,
    spec: &ModelSpec,
    n_splits: usize,
    arm: SplitArm,
    seed: u64,
) -> Result<Vec<(ModelSpec, Parameters)>> {
    spec.validate()?;
    let Some(&width) = spec.hidden_widths.first() else {
        return Err(Error::config("hidden_widths", "split family needs a hidden layer"));
    };
    if n_splits == 0 || width % n_splits != 0 {
        return Err(Error::config(
            "n_splits",
            format!("first hidden width {width} is not divisible by {n_splits}"),
        ));
    }
    pretrained.check_against(&ModelSpec {
        view_mask: None,
        frozen_prefix: 0,
        ..spec.clone()
    })?;
    let chunk = width / n_splits;
    (0..n_splits)
        .map(|i| {
            let mask = (0..width).map(|u| u / chunk == i).collect();
            let member = ModelSpec {
                view_mask: Some(mask),
                frozen_prefix: if arm == SplitArm::Frozen { 1 } else { 0 },
                ..spec.clone()
            };
            let mut params = Parameters::init(&member, seeding::derive_seed(seed, Stream::SplitReset, i as u64))?;
            if arm != SplitArm::RandomInit {
                for name in [weight_name(0), bias_name(0)] {
                    let src = pretrained.get(&name).expect("checked above").clone();
                    *params.get_mut(&name).expect("same spec") = src;
                }
            }
            Ok((member, params))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelSpec {
        ModelSpec::mlp(3, vec![4, 5], 2)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = Parameters::init(&small(), 11).unwrap();
        let b = Parameters::init(&small(), 11).unwrap();
        let c = Parameters::init(&small(), 12).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
        a.check_against(&small()).unwrap();
        assert_eq!(a.get("layer0.bias").unwrap(), &Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn init_weights_within_glorot_bounds_and_centered() {
        let spec = ModelSpec::mlp(100, vec![], 100);
        let p = Parameters::init(&spec, 3).unwrap();
        let w = p.get("layer0.weight").unwrap();
        let limit = (6.0f64 / 200.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        // uniform(-a, a): variance a²/3, so the mean of 10⁴ draws has sd a/√(3·10⁴)
        let mean = w.sum() / w.len() as f64;
        let sd_mean = limit / (3.0f64 * w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd_mean, "mean {mean} vs 3σ {}", 3.0 * sd_mean);
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let spec = small();
        let mut p = Parameters::init(&spec, 0).unwrap();
        for (_, t) in p.iter_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 4.0]]);
        assert_eq!(forward(&spec, &p, &x).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn hand_computed_single_unit_network() {
        // x=2, h = relu(0.5·2 + 0.25) = 1.25, logit = -3·1.25 + 1 = -2.75
        let spec = ModelSpec::mlp(1, vec![1], 1);
        let mut map = IndexMap::new();
        map.insert("layer0.weight".into(), Tensor::from_rows(&[&[0.5]]));
        map.insert("layer0.bias".into(), Tensor::from_rows(&[&[0.25]]));
        map.insert("layer1.weight".into(), Tensor::from_rows(&[&[-3.0]]));
        map.insert("layer1.bias".into(), Tensor::from_rows(&[&[1.0]]));
        let p = Parameters::from_map(map);
        let out = forward(&spec, &p, &Tensor::from_rows(&[&[2.0]])).unwrap();
        assert_eq!(out.data(), &[-2.75]);
    }

    #[test]
    fn all_true_view_mask_is_identity() {
        let spec = small();
        let masked = ModelSpec {
            view_mask: Some(vec![true; 4]),
            input_mask: Some(vec![true; 3]),
            ..small()
        };
        let p = Parameters::init(&spec, 5).unwrap();
        let x = Tensor::from_rows(&[&[0.3, -0.7, 1.1], &[2.0, 0.1, -0.4]]);
        assert!(forward(&spec, &p, &x).unwrap().bit_eq(&forward(&masked, &p, &x).unwrap()));
    }

    #[test]
    fn taped_and_plain_forward_agree_bitwise() {
        let spec = ModelSpec {
            view_mask: Some(vec![true, false, true, true]),
            frozen_prefix: 1,
            ..small()
        };
        let p = Parameters::init(&spec, 9).unwrap();
        let x = Tensor::from_rows(&[&[0.3, -0.7, 1.1], &[2.0, 0.1, -0.4]]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = forward_on_tape(&mut tape, &spec, &p, xv).unwrap();
        assert!(tape.value(out).bit_eq(&forward(&spec, &p, &x).unwrap()));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = Parameters::init(&small(), 0).unwrap();
        assert!(matches!(
            forward(&small(), &p, &Tensor::zeros(&[2, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let bad_mask = ModelSpec {
            view_mask: Some(vec![true; 3]),
            ..small()
        };
        assert!(bad_mask.validate().is_err());
        let empty_mask = ModelSpec {
            view_mask: Some(vec![false; 4]),
            ..small()
        };
        assert!(empty_mask.validate().is_err());
        let too_frozen = ModelSpec {
            frozen_prefix: 4,
            ..small()
        };
        assert!(too_frozen.validate().is_err());
    }

    #[test]
    fn serialization_round_trips_and_length_is_spec_determined() {
        let spec = small();
        let p = Parameters::init(&spec, 1).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), encoded_len(&spec));
        assert_eq!(model_bits(&spec), 8 * bytes.len() as u64);
        assert!(Parameters::from_bytes(&bytes).unwrap().bit_eq(&p));
        assert!(Parameters::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn split_family_of_eight_on_160_units() {
        let spec = ModelSpec::mlp(8, vec![160, 16], 4);
        let pre = Parameters::init(&spec, 0).unwrap();
        let fam = make_split_family(&pre, &spec, 8, SplitArm::Frozen, 1).unwrap();
        assert_eq!(fam.len(), 8);
        let masks: Vec<&Vec<bool>> = fam.iter().map(|(s, _)| s.view_mask.as_ref().unwrap()).collect();
        for m in &masks {
            assert_eq!(m.iter().filter(|&&b| b).count(), 20);
        }
        for u in 0..160 {
            assert_eq!(masks.iter().filter(|m| m[u]).count(), 1, "unit {u}");
        }
        for (s, p) in &fam {
            assert_eq!(s.frozen_prefix, 1);
            assert!(p.get("layer0.weight").unwrap().bit_eq(pre.get("layer0.weight").unwrap()));
            assert!(!p.get("layer1.weight").unwrap().bit_eq(pre.get("layer1.weight").unwrap()));
        }
    }

    #[test]
    fn split_family_arms() {
        let spec = ModelSpec::mlp(8, vec![16, 8], 3);
        let pre = Parameters::init(&spec, 0).unwrap();
        let nf = make_split_family(&pre, &spec, 4, SplitArm::PretrainedNotFrozen, 1).unwrap();
        assert!(nf.iter().all(|(s, p)| s.frozen_prefix == 0
            && p.get("layer0.weight").unwrap().bit_eq(pre.get("layer0.weight").unwrap())));
        let ri = make_split_family(&pre, &spec, 4, SplitArm::RandomInit, 1).unwrap();
        assert!(ri.iter().all(|(s, p)| s.frozen_prefix == 0
            && !p.get("layer0.weight").unwrap().bit_eq(pre.get("layer0.weight").unwrap())));
        assert!(make_split_family(&pre, &spec, 3, SplitArm::Frozen, 1).is_err());
    }

    #[test]
    fn single_split_behaves_like_the_unsplit_model() {
        let spec = ModelSpec::mlp(3, vec![6], 2);
        let pre = Parameters::init(&spec, 4).unwrap();
        let fam = make_split_family(&pre, &spec, 1, SplitArm::PretrainedNotFrozen, 2).unwrap();
        let (member, params) = &fam[0];
        assert!(member.view_mask.as_ref().unwrap().iter().all(|&b| b));
        let x = Tensor::from_rows(&[&[0.1, 0.2, 0.3]]);
        let unmasked = ModelSpec { view_mask: None, ..member.clone() };
        assert!(forward(member, params, &x).unwrap().bit_eq(&forward(&unmasked, params, &x).unwrap()));
    }
}
