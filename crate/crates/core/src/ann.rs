//! Single-hidden-layer feed-forward classifier over the eight switching
//! states.
//!
//! Hidden units apply a saturating activation to an affine map of the
//! standardized features; the output layer is a softmax over eight logits
//! trained with mean cross-entropy. Training is full-batch scaled conjugate
//! gradient (Møller's algorithm) with early stopping on validation loss,
//! swept over a list of hidden-layer widths. Minibatch Adam is available as
//! an alternative optimizer.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureVariant, FeatureVector};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 8;
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "fcmli-mlp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Tanh,
    Sigmoid,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => z.tanh(),
            HiddenActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation value.
    fn slope(self, h: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - h * h,
            HiddenActivation::Sigmoid => h * (1.0 - h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HiddenActivation::Tanh => "tanh",
            HiddenActivation::Sigmoid => "sigmoid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(HiddenActivation::Tanh),
            "sigmoid" => Some(HiddenActivation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        "softmax"
    }
}

/// Per-component standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Statistics over the expanded features of `data`. One-hot columns are
    /// left untouched.
    pub fn fit(data: &Dataset) -> Self {
        let variant = data.variant;
        let width = variant.expanded_len();
        let mut norm = Self::identity(width);
        let n = data.len();
        if n == 0 {
            return norm;
        }
        let continuous: Vec<usize> = variant.expanded_continuous_columns();
        let mut buf = vec![0.0; width];
        let mut sum = vec![0.0; width];
        for r in 0..n {
            variant.expand_into(data.row(r), &mut buf);
            for &c in &continuous {
                sum[c] += buf[c];
            }
        }
        for &c in &continuous {
            norm.mean[c] = sum[c] / n as f64;
        }
        let mut sq = vec![0.0; width];
        for r in 0..n {
            variant.expand_into(data.row(r), &mut buf);
            for &c in &continuous {
                let d = buf[c] - norm.mean[c];
                sq[c] += d * d;
            }
        }
        for &c in &continuous {
            let sd = (sq[c] / n as f64).sqrt();
            norm.std[c] = if sd > 1e-12 { sd } else { 1.0 };
        }
        norm
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Normalized, one-hot expanded inputs with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub width: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], label: u8) {
        debug_assert_eq!(x.len(), self.width);
        self.inputs.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.width..(r + 1) * self.width]
    }

    /// Expands and standardizes every record of `data`.
    pub fn from_dataset(data: &Dataset, norm: &Normalization) -> Self {
        let width = data.variant.expanded_len();
        let mut batch = Batch::new(width);
        batch.inputs.reserve(data.len() * width);
        let mut buf = vec![0.0; width];
        for r in 0..data.len() {
            data.variant.expand_into(data.row(r), &mut buf);
            norm.apply(&mut buf);
            batch.push(&buf, data.labels[r]);
        }
        batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub variant: FeatureVariant,
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden x inputs`, row-major.
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// `NUM_CLASSES x hidden`, row-major.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub norm: Normalization,
}

/// Layer widths of a flat parameter vector laid out as
/// `[w_in, b_in, w_out, b_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    inputs: usize,
    hidden: usize,
}

impl Dims {
    fn len(self) -> usize {
        self.hidden * self.inputs + self.hidden + NUM_CLASSES * self.hidden + NUM_CLASSES
    }

    fn split(self, p: &[f64]) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w_in, rest) = p.split_at(self.hidden * self.inputs);
        let (b_in, rest) = rest.split_at(self.hidden);
        let (w_out, b_out) = rest.split_at(NUM_CLASSES * self.hidden);
        (w_in, b_in, w_out, b_out)
    }

    fn split_mut(self, p: &mut [f64]) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let (w_in, rest) = p.split_at_mut(self.hidden * self.inputs);
        let (b_in, rest) = rest.split_at_mut(self.hidden);
        let (w_out, b_out) = rest.split_at_mut(NUM_CLASSES * self.hidden);
        (w_in, b_in, w_out, b_out)
    }
}

impl MlpModel {
    /// Symmetric uniform initialization with bound `1/sqrt(fan_in)`.
    pub fn init(variant: FeatureVariant, hidden: usize, norm: Normalization, rng: &mut impl Rng) -> Self {
        let inputs = variant.expanded_len();
        let a_in = 1.0 / (inputs as f64).sqrt();
        let a_out = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize, a: f64| (0..n).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>();
        let w_in = draw(hidden * inputs, a_in);
        let b_in = draw(hidden, a_in);
        let w_out = draw(NUM_CLASSES * hidden, a_out);
        let b_out = draw(NUM_CLASSES, a_out);
        Self {
            variant,
            inputs,
            hidden,
            w_in,
            b_in,
            w_out,
            b_out,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Softmax,
            norm,
        }
    }

    pub fn zeros(variant: FeatureVariant, hidden: usize) -> Self {
        let inputs = variant.expanded_len();
        Self {
            variant,
            inputs,
            hidden,
            w_in: vec![0.0; hidden * inputs],
            b_in: vec![0.0; hidden],
            w_out: vec![0.0; NUM_CLASSES * hidden],
            b_out: vec![0.0; NUM_CLASSES],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Softmax,
            norm: Normalization::identity(inputs),
        }
    }

    fn dims(&self) -> Dims {
        Dims {
            inputs: self.inputs,
            hidden: self.hidden,
        }
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dims().len());
        p.extend_from_slice(&self.w_in);
        p.extend_from_slice(&self.b_in);
        p.extend_from_slice(&self.w_out);
        p.extend_from_slice(&self.b_out);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let (w_in, b_in, w_out, b_out) = self.dims().split(p);
        self.w_in.copy_from_slice(w_in);
        self.b_in.copy_from_slice(b_in);
        self.w_out.copy_from_slice(w_out);
        self.b_out.copy_from_slice(b_out);
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::format("model", format!("{what}: expected {expected} values, got {got}")))
            }
        };
        check("inputs vs variant", self.inputs, self.variant.expanded_len())?;
        check("w_in", self.w_in.len(), self.hidden * self.inputs)?;
        check("b_in", self.b_in.len(), self.hidden)?;
        check("w_out", self.w_out.len(), NUM_CLASSES * self.hidden)?;
        check("b_out", self.b_out.len(), NUM_CLASSES)?;
        check("norm mean", self.norm.mean.len(), self.inputs)?;
        check("norm std", self.norm.std.len(), self.inputs)?;
        Ok(())
    }

    /// Class probabilities for an already expanded and normalized input.
    pub fn forward(&self, x: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                got: x.len(),
            });
        }
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = [0.0; NUM_CLASSES];
        forward_raw(
            self.dims(),
            &self.w_in,
            &self.b_in,
            &self.w_out,
            &self.b_out,
            self.hidden_activation,
            x,
            &mut hidden,
            &mut logits,
        );
        Ok(softmax(&logits))
    }

    /// Expands, normalizes and evaluates a raw feature vector.
    pub fn probabilities(&self, features: &FeatureVector) -> Result<[f64; NUM_CLASSES]> {
        if features.variant != self.variant {
            return Err(Error::VariantMismatch {
                model: self.variant.to_string(),
                requested: features.variant.to_string(),
            });
        }
        let mut x = features.expand();
        self.norm.apply(&mut x);
        self.forward(&x)
    }

    /// Most probable class, lowest index on ties.
    pub fn classify(&self, features: &FeatureVector) -> Result<u8> {
        Ok(argmax(&self.probabilities(features)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Plain-text model file. Floats use the shortest representation that
    /// parses back to the identical value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, v: &[f64]| {
            let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        };
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_FORMAT_VERSION}");
        let _ = writeln!(s, "variant {}", self.variant);
        let _ = writeln!(s, "layers {} {} {NUM_CLASSES}", self.inputs, self.hidden);
        let _ = writeln!(s, "hidden_activation {}", self.hidden_activation.name());
        let _ = writeln!(s, "output_activation {}", self.output_activation.name());
        s.push_str("norm_mean ");
        row(&mut s, &self.norm.mean);
        s.push_str("norm_std ");
        row(&mut s, &self.norm.std);
        let _ = writeln!(s, "w_in {} {}", self.hidden, self.inputs);
        for r in self.w_in.chunks(self.inputs) {
            row(&mut s, r);
        }
        let _ = writeln!(s, "b_in {}", self.hidden);
        row(&mut s, &self.b_in);
        let _ = writeln!(s, "w_out {NUM_CLASSES} {}", self.hidden);
        for r in self.w_out.chunks(self.hidden) {
            row(&mut s, r);
        }
        let _ = writeln!(s, "b_out {NUM_CLASSES}");
        row(&mut s, &self.b_out);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("model file", d);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
        let keyed = |line: &str, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(format!("expected `{key}`, found `{line}`")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let floats = |parts: &[String]| -> Result<Vec<f64>> {
            parts
                .iter()
                .map(|p| p.parse::<f64>().map_err(|e| bad(format!("{e}: `{p}`"))))
                .collect()
        };
        let ints = |parts: &[String]| -> Result<Vec<usize>> {
            parts
                .iter()
                .map(|p| p.parse::<usize>().map_err(|e| bad(format!("{e}: `{p}`"))))
                .collect()
        };

        let header = keyed(next("header")?, MODEL_MAGIC)?;
        let version: u32 = header
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing format version".into()))?;
        if version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let variant: FeatureVariant = keyed(next("variant")?, "variant")?
            .first()
            .ok_or_else(|| bad("missing variant".into()))?
            .parse()?;
        let layers = ints(&keyed(next("layers")?, "layers")?)?;
        if layers.len() != 3 || layers[2] != NUM_CLASSES {
            return Err(bad(format!("layers must be `M J {NUM_CLASSES}`, got {layers:?}")));
        }
        let (inputs, hidden) = (layers[0], layers[1]);
        let hidden_activation = keyed(next("hidden_activation")?, "hidden_activation")?
            .first()
            .and_then(|a| HiddenActivation::parse(a))
            .ok_or_else(|| bad("unknown hidden activation".into()))?;
        let out_act = keyed(next("output_activation")?, "output_activation")?;
        if out_act.first().map(String::as_str) != Some("softmax") {
            return Err(bad(format!("unknown output activation {out_act:?}")));
        }
        let mean = floats(&keyed(next("norm_mean")?, "norm_mean")?)?;
        let std = floats(&keyed(next("norm_std")?, "norm_std")?)?;

        let mut block = |key: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let dims = ints(&keyed(next(key)?, key)?)?;
            let expected: Vec<usize> = if key.starts_with('w') { vec![rows, cols] } else { vec![cols] };
            if dims != expected {
                return Err(bad(format!("{key} dims {dims:?}, expected {expected:?}")));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let parts: Vec<String> = next(key)?.split_whitespace().map(str::to_string).collect();
                let vals = floats(&parts)?;
                if vals.len() != cols {
                    return Err(bad(format!("{key} row has {} values, expected {cols}", vals.len())));
                }
                out.extend(vals);
            }
            Ok(out)
        };
        let w_in = block("w_in", hidden, inputs)?;
        let b_in = block("b_in", 1, hidden)?;
        let w_out = block("w_out", NUM_CLASSES, hidden)?;
        let b_out = block("b_out", 1, NUM_CLASSES)?;

        let model = Self {
            variant,
            inputs,
            hidden,
            w_in,
            b_in,
            w_out,
            b_out,
            hidden_activation,
            output_activation: OutputActivation::Softmax,
            norm: Normalization { mean, std },
        };
        model.validate()?;
        Ok(model)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(p: &[f64]) -> u8 {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best as u8
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn forward_raw(
    dims: Dims,
    w_in: &[f64],
    b_in: &[f64],
    w_out: &[f64],
    b_out: &[f64],
    act: HiddenActivation,
    x: &[f64],
    hidden: &mut [f64],
    logits: &mut [f64; NUM_CLASSES],
) {
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &w_in[j * dims.inputs..(j + 1) * dims.inputs];
        let mut z = b_in[j];
        for (w, &xm) in row.iter().zip(x) {
            // one-hot blocks are mostly zeros
            if xm != 0.0 {
                z += w * xm;
            }
        }
        *h = act.apply(z);
    }
    for (n, l) in logits.iter_mut().enumerate() {
        let row = &w_out[n * dims.hidden..(n + 1) * dims.hidden];
        let mut z = b_out[n];
        for (w, h) in row.iter().zip(hidden.iter()) {
            z += w * h;
        }
        *l = z;
    }
}

/// Mean cross-entropy of `p` over `batch`; with `grad`, also its gradient.
fn objective(dims: Dims, act: HiddenActivation, p: &[f64], batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
    let (w_in, b_in, w_out, b_out) = dims.split(p);
    let mut hidden = vec![0.0; dims.hidden];
    let mut dh = vec![0.0; dims.hidden];
    let mut logits = [0.0; NUM_CLASSES];
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut loss = 0.0;
    for r in 0..batch.len() {
        let x = batch.row(r);
        let label = batch.labels[r] as usize;
        forward_raw(dims, w_in, b_in, w_out, b_out, act, x, &mut hidden, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut e = [0.0; NUM_CLASSES];
        for (ek, &z) in e.iter_mut().zip(&logits) {
            *ek = (z - max).exp();
            sum += *ek;
        }
        loss += sum.ln() + max - logits[label];

        let Some(g) = grad.as_deref_mut() else { continue };
        let (gw_in, gb_in, gw_out, gb_out) = dims.split_mut(g);
        dh.fill(0.0);
        for n in 0..NUM_CLASSES {
            let d = e[n] / sum - if n == label { 1.0 } else { 0.0 };
            gb_out[n] += d;
            let row = &w_out[n * dims.hidden..(n + 1) * dims.hidden];
            let grow = &mut gw_out[n * dims.hidden..(n + 1) * dims.hidden];
            for j in 0..dims.hidden {
                grow[j] += d * hidden[j];
                dh[j] += d * row[j];
            }
        }
        for j in 0..dims.hidden {
            let dz = dh[j] * act.slope(hidden[j]);
            gb_in[j] += dz;
            let grow = &mut gw_in[j * dims.inputs..(j + 1) * dims.inputs];
            for (gw, &xm) in grow.iter_mut().zip(x) {
                if xm != 0.0 {
                    *gw += dz * xm;
                }
            }
        }
    }
    let n = batch.len().max(1) as f64;
    if let Some(g) = grad {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    loss / n
}

/// Mean cross-entropy of `model` over `batch`.
pub fn loss(model: &MlpModel, batch: &Batch) -> f64 {
    objective(model.dims(), model.hidden_activation, &model.params(), batch, None)
}

/// Analytic gradient, flattened as `[w_in, b_in, w_out, b_out]`.
pub fn gradient(model: &MlpModel, batch: &Batch) -> Vec<f64> {
    let mut g = vec![0.0; model.dims().len()];
    objective(model.dims(), model.hidden_activation, &model.params(), batch, Some(&mut g));
    g
}

/// Worst relative deviation between the analytic gradient and central
/// finite differences.
pub fn gradient_check(model: &MlpModel, batch: &Batch) -> f64 {
    compare_gradients(model, batch, &gradient(model, batch))
}

/// Worst relative deviation between `analytic` and central differences of
/// the loss, `|a - n| / max(|a| + |n|, 1e-4)`.
pub fn compare_gradients(model: &MlpModel, batch: &Batch, analytic: &[f64]) -> f64 {
    const EPS: f64 = 1e-6;
    let dims = model.dims();
    let mut p = model.params();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = p[k];
        p[k] = orig + EPS;
        let up = objective(dims, model.hidden_activation, &p, batch, None);
        p[k] = orig - EPS;
        let down = objective(dims, model.hidden_activation, &p, batch, None);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let dev = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4);
        worst = worst.max(dev);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Scaled conjugate gradient, full batch; one epoch is one iteration.
    Scg { sigma: f64, lambda: f64 },
    /// Minibatch Adam; one epoch is one pass over the shuffled training set.
    Adam { learning_rate: f64, batch_size: usize },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Scg {
            sigma: 5e-5,
            lambda: 5e-7,
        }
    }
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Scg { .. } => "scaled-conjugate-gradient",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub hidden_activation: HiddenActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![8, 16, 24, 32],
            max_epochs: 1000,
            patience: 50,
            seed: 0,
            optimizer: Optimizer::default(),
            hidden_activation: HiddenActivation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidParams("need at least one non-zero hidden size".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParams("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of training one hidden-layer width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub hidden: usize,
    pub best_val_loss: f64,
    pub best_val_error: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// `None` when training finished; otherwise why it was aborted.
    pub failure: Option<String>,
    /// Training loss after each epoch.
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// NaN where a class was never predicted.
    pub precision: [f64; NUM_CLASSES],
    /// NaN where a class is absent from the labels.
    pub recall: [f64; NUM_CLASSES],
    pub class_counts: [u64; NUM_CLASSES],
}

impl EvalReport {
    pub fn from_predictions(labels: &[u8], predicted: &[u8]) -> Self {
        assert_eq!(labels.len(), predicted.len());
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in labels.iter().zip(predicted) {
            confusion[t as usize][p as usize] += 1;
        }
        let total = labels.len() as u64;
        let correct: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        let class_counts: [u64; NUM_CLASSES] = std::array::from_fn(|k| confusion[k].iter().sum());
        let predicted_counts: [u64; NUM_CLASSES] = std::array::from_fn(|k| (0..NUM_CLASSES).map(|t| confusion[t][k]).sum());
        let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        Self {
            total,
            correct,
            accuracy: ratio(correct, total),
            confusion,
            precision: std::array::from_fn(|k| ratio(confusion[k][k], predicted_counts[k])),
            recall: std::array::from_fn(|k| ratio(confusion[k][k], class_counts[k])),
            class_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCounts {
    pub train: u64,
    pub validation: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: String,
    pub variant: String,
    pub seed: u64,
    pub best_hidden: usize,
    pub best_val_loss: f64,
    pub best_val_error: f64,
    pub best_epoch: usize,
    pub instances: InstanceCounts,
    pub sweep: Vec<SweepPoint>,
    pub test: Option<EvalReport>,
}

impl TrainReport {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Predictions of `model` on every row of `batch`.
pub fn predict_batch(model: &MlpModel, batch: &Batch) -> Vec<u8> {
    let mut hidden = vec![0.0; model.hidden];
    let mut logits = [0.0; NUM_CLASSES];
    (0..batch.len())
        .map(|r| {
            forward_raw(
                model.dims(),
                &model.w_in,
                &model.b_in,
                &model.w_out,
                &model.b_out,
                model.hidden_activation,
                batch.row(r),
                &mut hidden,
                &mut logits,
            );
            argmax(&logits)
        })
        .collect()
}

pub fn evaluate(model: &MlpModel, batch: &Batch) -> EvalReport {
    EvalReport::from_predictions(&batch.labels, &predict_batch(model, batch))
}

/// Trains every configured hidden width on `train`, early-stopping on
/// `val`, and returns the width with the lowest validation loss. The
/// normalization statistics come from `train` only.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.variant != val.variant {
        return Err(Error::VariantMismatch {
            model: train.variant.to_string(),
            requested: val.variant.to_string(),
        });
    }
    let norm = Normalization::fit(train);
    let train_batch = Batch::from_dataset(train, &norm);
    let val_batch = Batch::from_dataset(val, &norm);
    train_batches(train.variant, norm, &train_batch, &val_batch, cfg)
}

/// `train` on pre-built batches.
pub fn train_batches(
    variant: FeatureVariant,
    norm: Normalization,
    train: &Batch,
    val: &Batch,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // One stream per width, seeded with `seed + width`.
    let fitted: Vec<(MlpModel, SweepPoint)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .hidden_sizes
            .iter()
            .map(|&hidden| {
                let norm = norm.clone();
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(hidden as u64));
                    let mut model = MlpModel::init(variant, hidden, norm, &mut rng);
                    model.hidden_activation = cfg.hidden_activation;
                    let point = fit(&mut model, train, val, cfg, &mut rng);
                    (model, point)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut best: Option<(MlpModel, usize)> = None;
    let mut sweep = Vec::new();
    for (slot, (model, point)) in fitted.into_iter().enumerate() {
        let better = point.failure.is_none()
            && best
                .as_ref()
                .map_or(true, |(_, b)| point.best_val_loss < sweep_loss(&sweep, *b));
        sweep.push(point);
        if better {
            best = Some((model, slot));
        }
    }
    let Some((model, slot)) = best else {
        let why: Vec<String> = sweep
            .iter()
            .map(|p| format!("J={}: {}", p.hidden, p.failure.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Divergence(why.join("; ")));
    };
    let chosen = &sweep[slot];
    let report = TrainReport {
        optimizer: cfg.optimizer.name().to_string(),
        variant: variant.to_string(),
        seed: cfg.seed,
        best_hidden: chosen.hidden,
        best_val_loss: chosen.best_val_loss,
        best_val_error: chosen.best_val_error,
        best_epoch: chosen.best_epoch,
        instances: InstanceCounts {
            train: train.len() as u64,
            validation: val.len() as u64,
            test: 0,
        },
        sweep,
        test: None,
    };
    Ok((model, report))
}

fn sweep_loss(sweep: &[SweepPoint], slot: usize) -> f64 {
    sweep[slot].best_val_loss
}

/// Tracks the best validation loss and decides when to stop.
struct EarlyStop {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    best_params: Vec<f64>,
    since_best: usize,
}

impl EarlyStop {
    fn new(patience: usize, params: &[f64], val_loss: f64) -> Self {
        Self {
            patience,
            best_loss: val_loss,
            best_epoch: 0,
            best_params: params.to_vec(),
            since_best: 0,
        }
    }

    /// Returns `true` when training should stop.
    fn observe(&mut self, epoch: usize, params: &[f64], val_loss: f64) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.best_params.copy_from_slice(params);
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best >= self.patience
        }
    }
}

fn fit(model: &mut MlpModel, train: &Batch, val: &Batch, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> SweepPoint {
    let dims = model.dims();
    let act = model.hidden_activation;
    let mut params = model.params();
    let val_loss = |p: &[f64]| objective(dims, act, p, val, None);
    let mut stop = EarlyStop::new(cfg.patience, &params, val_loss(&params));
    let mut train_loss = Vec::new();
    let mut failure = None;

    match &cfg.optimizer {
        Optimizer::Scg { sigma, lambda } => {
            let mut scg = Scg::new(dims, act, &params, train, *sigma, *lambda);
            for epoch in 1..=cfg.max_epochs {
                match scg.iterate(&mut params) {
                    Ok(done) => {
                        train_loss.push(scg.loss);
                        if stop.observe(epoch, &params, val_loss(&params)) || done {
                            break;
                        }
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
        }
        Optimizer::Adam { learning_rate, batch_size } => {
            let mut adam = Adam::new(params.len(), *learning_rate);
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut mini = Batch::new(train.width);
            let mut grad = vec![0.0; params.len()];
            for epoch in 1..=cfg.max_epochs {
                order.shuffle(rng);
                for chunk in order.chunks((*batch_size).max(1)) {
                    mini.inputs.clear();
                    mini.labels.clear();
                    for &r in chunk {
                        mini.push(train.row(r), train.labels[r]);
                    }
                    objective(dims, act, &params, &mini, Some(&mut grad));
                    adam.step(&mut params, &grad);
                }
                let l = objective(dims, act, &params, train, None);
                if !l.is_finite() {
                    failure = Some(format!("non-finite training loss at epoch {epoch}"));
                    break;
                }
                train_loss.push(l);
                if stop.observe(epoch, &params, val_loss(&params)) {
                    break;
                }
            }
        }
    }

    let epochs_run = train_loss.len();
    model.set_params(&stop.best_params);
    let best_val_error = 1.0 - evaluate(model, val).accuracy;
    SweepPoint {
        hidden: model.hidden,
        best_val_loss: stop.best_loss,
        best_val_error,
        best_epoch: stop.best_epoch,
        epochs_run,
        failure,
        train_loss,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Møller's scaled conjugate gradient state.
struct Scg<'a> {
    dims: Dims,
    act: HiddenActivation,
    train: &'a Batch,
    sigma0: f64,
    lambda: f64,
    lambda_bar: f64,
    delta: f64,
    success: bool,
    loss: f64,
    /// Negative gradient at the current weights.
    r: Vec<f64>,
    p: Vec<f64>,
    k: usize,
    scratch: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Scg<'a> {
    fn new(dims: Dims, act: HiddenActivation, params: &[f64], train: &'a Batch, sigma0: f64, lambda: f64) -> Self {
        let mut grad = vec![0.0; params.len()];
        let loss = objective(dims, act, params, train, Some(&mut grad));
        let r: Vec<f64> = grad.iter().map(|g| -g).collect();
        Self {
            dims,
            act,
            train,
            sigma0,
            lambda,
            lambda_bar: 0.0,
            delta: 0.0,
            success: true,
            loss,
            p: r.clone(),
            r,
            k: 1,
            scratch: vec![0.0; params.len()],
            grad,
        }
    }

    fn eval(&mut self, at: &[f64]) -> f64 {
        objective(self.dims, self.act, at, self.train, Some(&mut self.grad))
    }

    /// One iteration. `Ok(true)` once the gradient has vanished.
    fn iterate(&mut self, w: &mut [f64]) -> Result<bool> {
        let n = w.len();
        let p_sq = dot(&self.p, &self.p);
        if p_sq < 1e-30 {
            return Ok(true);
        }
        if self.success {
            let sigma = self.sigma0 / p_sq.sqrt();
            let mut probe = std::mem::take(&mut self.scratch);
            for ((q, &wi), &pi) in probe.iter_mut().zip(w.iter()).zip(&self.p) {
                *q = wi + sigma * pi;
            }
            self.eval(&probe);
            self.scratch = probe;
            // s = (E'(w + σp) - E'(w)) / σ, with E'(w) = -r
            self.delta = self
                .grad
                .iter()
                .zip(&self.r)
                .zip(&self.p)
                .map(|((g, r), p)| (g + r) / sigma * p)
                .sum();
        }
        self.delta += (self.lambda - self.lambda_bar) * p_sq;
        if self.delta <= 0.0 {
            self.lambda_bar = 2.0 * (self.lambda - self.delta / p_sq);
            self.delta = -self.delta + self.lambda * p_sq;
            self.lambda = self.lambda_bar;
        }
        let mu = dot(&self.p, &self.r);
        let alpha = mu / self.delta;

        let mut trial = std::mem::take(&mut self.scratch);
        for ((q, &wi), &pi) in trial.iter_mut().zip(w.iter()).zip(&self.p) {
            *q = wi + alpha * pi;
        }
        let trial_loss = self.eval(&trial);
        if !trial_loss.is_finite() && !self.loss.is_finite() {
            return Err(Error::Divergence("non-finite training loss".into()));
        }
        let comparison = if trial_loss.is_finite() {
            2.0 * self.delta * (self.loss - trial_loss) / (mu * mu)
        } else {
            -1.0
        };

        if comparison >= 0.0 {
            w.copy_from_slice(&trial);
            self.loss = trial_loss;
            let r_new: Vec<f64> = self.grad.iter().map(|g| -g).collect();
            self.lambda_bar = 0.0;
            self.success = true;
            if self.k % n == 0 {
                self.p.copy_from_slice(&r_new);
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &self.r)) / mu;
                for (pi, ri) in self.p.iter_mut().zip(&r_new) {
                    *pi = ri + beta * *pi;
                }
            }
            self.r = r_new;
            if comparison >= 0.75 {
                self.lambda /= 4.0;
            }
        } else {
            self.lambda_bar = self.lambda;
            self.success = false;
        }
        self.scratch = trial;
        if comparison < 0.25 {
            self.lambda += self.delta * (1.0 - comparison) / p_sq;
        }
        if !self.lambda.is_finite() {
            return Err(Error::Divergence("scale parameter overflowed".into()));
        }
        self.k += 1;
        Ok(dot(&self.r, &self.r) < 1e-30)
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..w.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
            w[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(variant: FeatureVariant, hidden: usize, seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel::init(variant, hidden, Normalization::identity(variant.expanded_len()), &mut rng)
    }

    fn random_batch(width: usize, n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Batch::new(width);
        for _ in 0..n {
            let x: Vec<f64> = (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect();
            b.push(&x, rng.gen_range(0..NUM_CLASSES as u8));
        }
        b
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(FeatureVariant::X5, 4);
        let p = m.forward(&vec![0.3; m.inputs]).unwrap();
        for v in p {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_shift_is_invisible() {
        let m = random_model(FeatureVariant::X2, 6, 1);
        let x: Vec<f64> = (0..m.inputs).map(|k| (k as f64 * 0.37).sin()).collect();
        let p = m.forward(&x).unwrap();
        let mut shifted = m.clone();
        for b in &mut shifted.b_out {
            *b += 3.25;
        }
        let q = shifted.forward(&x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = random_model(FeatureVariant::X2, 6, 1);
        assert!(matches!(
            m.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let m = random_model(FeatureVariant::X2, 5, seed);
            let b = random_batch(m.inputs, 12, seed + 100);
            let dev = gradient_check(&m, &b);
            assert!(dev < 1e-5, "seed {seed}: deviation {dev}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let m = random_model(FeatureVariant::X4, 4, 7);
        let b = random_batch(m.inputs, 10, 8);
        let mut g = gradient(&m, &b);
        g[3] += 0.5;
        assert!(compare_gradients(&m, &b, &g) > 1e-2);
    }

    #[test]
    fn saturated_fit_has_finite_deviation() {
        let mut m = MlpModel::zeros(FeatureVariant::X5, 2);
        m.b_out[3] = 60.0;
        let mut b = Batch::new(m.inputs);
        b.push(&vec![0.0; m.inputs], 3);
        let dev = gradient_check(&m, &b);
        assert!(dev.is_finite());
    }

    #[test]
    fn sigmoid_gradient_also_checks() {
        let mut m = random_model(FeatureVariant::X1, 3, 11);
        m.hidden_activation = HiddenActivation::Sigmoid;
        let b = random_batch(m.inputs, 8, 12);
        assert!(gradient_check(&m, &b) < 1e-5);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut m = random_model(FeatureVariant::X2, 7, 3);
        m.norm.mean[0] = 123.456789012345;
        m.norm.std[0] = 1.0 / 3.0;
        let back = MlpModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_model_files_are_rejected() {
        let m = random_model(FeatureVariant::X2, 3, 3);
        let text = m.to_text();
        assert!(MlpModel::from_text(&text.replace("fcmli-mlp 1", "fcmli-mlp 9")).is_err());
        assert!(MlpModel::from_text(&text.replace("variant X2", "variant X7")).is_err());
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(MlpModel::from_text(&truncated).is_err());
    }

    #[test]
    fn eval_perfect_and_constant() {
        let labels = [0u8, 1, 2, 2, 7, 0, 0];
        let perfect = EvalReport::from_predictions(&labels, &labels);
        assert_eq!(perfect.accuracy, 1.0);
        for t in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                if t != p {
                    assert_eq!(perfect.confusion[t][p], 0);
                }
            }
        }
        let constant = EvalReport::from_predictions(&labels, &[0; 7]);
        assert!((constant.accuracy - 3.0 / 7.0).abs() < 1e-15);
        for k in 0..NUM_CLASSES {
            assert_eq!(constant.confusion[k].iter().sum::<u64>(), constant.class_counts[k]);
        }
        assert!(constant.precision[1].is_nan());
        assert!(constant.recall[3].is_nan());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4, 0.0]), 1);
        assert_eq!(argmax(&[0.125; 8]), 0);
    }
}
