//! A small fully connected feedforward network trained by backpropagation
//! to represent the optimal feedback control map `(t_g, x) -> u`.
//!
//! Inputs and targets are standardized to zero mean and unit variance with
//! statistics taken from the training split; the stop criterion applies to
//! the mean-squared error on the normalized targets (mean over samples and
//! output components). Hidden layers use tanh, the output layer is linear.

use crate::dataset::Dataset;
use crate::error::Error;
use crate::util::fmt_f64;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        match self {
            Activation::Tanh => z.apply(|v| *v = v.tanh()),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Per-feature affine normalization `(v - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub shift: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Norm {
    fn identity(dim: usize) -> Self {
        Self { shift: DVector::zeros(dim), scale: DVector::from_element(dim, 1.0) }
    }

    /// Mean/std statistics per row of a design matrix; constant features
    /// keep scale 1 so normalization stays invertible.
    fn from_columns(data: &DMatrix<f64>) -> Self {
        let dim = data.nrows();
        let count = data.ncols().max(1) as f64;
        let mut shift = DVector::zeros(dim);
        let mut scale = DVector::zeros(dim);
        for i in 0..dim {
            let row = data.row(i);
            let mean = row.sum() / count;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            shift[i] = mean;
            let std = var.sqrt();
            scale[i] = if std < 1e-12 { 1.0 } else { std };
        }
        Self { shift, scale }
    }

    fn normalize_in_place(&self, data: &mut DMatrix<f64>) {
        for mut col in data.column_iter_mut() {
            col -= &self.shift;
            col.component_div_assign(&self.scale);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in` weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Weights, biases, and normalization of the feedback approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `[1 + n, hidden.., m]`.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub input_norm: Norm,
    pub output_norm: Norm,
}

impl MlpModel {
    /// Fresh model with fan-in-scaled uniform weights.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut ChaCha20Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("train.arch: need nonzero input/output sizes".into()));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound));
            layers.push(Layer { w, b: DVector::zeros(fan_out) });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
            input_norm: Norm::identity(layer_sizes[0]),
            output_norm: Norm::identity(*layer_sizes.last().unwrap()),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Forward pass in normalized coordinates, batched over columns.
    fn forward_normalized(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = input.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * a;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if l != last {
                self.activation.apply(&mut z);
            }
            a = z;
        }
        a
    }
}

/// Single-query inference: normalize, run the affine/activation chain, and
/// de-normalize. Pure and deterministic.
pub fn infer(model: &MlpModel, t_g: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !t_g.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::ContractViolation("non-finite inference input".into()));
    }
    if 1 + x.len() != model.input_dim() {
        return Err(Error::ContractViolation(format!(
            "inference input dim {} does not match model input {}",
            1 + x.len(),
            model.input_dim()
        )));
    }
    let mut v = DVector::zeros(model.input_dim());
    v[0] = t_g;
    v.rows_mut(1, x.len()).copy_from(x);
    v -= &model.input_norm.shift;
    v.component_div_assign(&model.input_norm.scale);

    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        v = &layer.w * v + &layer.b;
        if l != last {
            match model.activation {
                Activation::Tanh => v.apply(|z| *z = z.tanh()),
            }
        }
    }
    v.component_mul_assign(&model.output_norm.scale);
    v += &model.output_norm.shift;
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the train MSE on normalized targets drops below this.
    pub target_mse: f64,
    /// Fraction of samples held out for the advisory validation metric.
    pub val_split: f64,
    pub seed: u64,
    /// Epochs without validation improvement before the log flags a plateau
    /// (advisory only; the stop rule is train MSE or the epoch budget).
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 2000,
            target_mse: 1e-6,
            val_split: 0.1,
            seed: 0,
            patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mse > 0.0) {
            return Err(Error::Config("train.target_mse: must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::Config("train.val_split: must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch: must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("train.lr: must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    EpochBudget,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub stop: StopReason,
    /// Set when validation stalled for `patience` epochs at some point.
    pub val_plateau_at: Option<usize>,
}

impl TrainLog {
    /// CSV with a header note pinning the MSE convention.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# mse on normalized targets, mean over samples and outputs\n");
        out.push_str("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{}\n",
                e.epoch,
                fmt_f64(e.train_mse),
                e.val_mse.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }
}

struct AdamState {
    mw: Vec<DMatrix<f64>>,
    vw: Vec<DMatrix<f64>>,
    mb: Vec<DVector<f64>>,
    vb: Vec<DVector<f64>>,
    t: usize,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        Self {
            mw: model.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            vw: model.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            mb: model.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
            vb: model.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
            t: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &[(DMatrix<f64>, DVector<f64>)], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (l, (gw, gb)) in grads.iter().enumerate() {
            let mw = &mut self.mw[l];
            let vw = &mut self.vw[l];
            mw.zip_apply(gw, |m, g| *m = B1 * *m + (1.0 - B1) * g);
            vw.zip_apply(gw, |v, g| *v = B2 * *v + (1.0 - B2) * g * g);
            model.layers[l]
                .w
                .zip_zip_apply(mw, vw, |w, m, v| *w -= lr * (m / c1) / ((v / c2).sqrt() + EPS));
            let mb = &mut self.mb[l];
            let vb = &mut self.vb[l];
            mb.zip_apply(gb, |m, g| *m = B1 * *m + (1.0 - B1) * g);
            vb.zip_apply(gb, |v, g| *v = B2 * *v + (1.0 - B2) * g * g);
            model.layers[l]
                .b
                .zip_zip_apply(mb, vb, |b, m, v| *b -= lr * (m / c1) / ((v / c2).sqrt() + EPS));
        }
    }
}

/// Batched loss and parameter gradients in normalized coordinates; the MSE
/// is averaged over both batch columns and output components.
fn loss_and_grads(
    model: &MlpModel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> (f64, Vec<(DMatrix<f64>, DVector<f64>)>) {
    let batch = inputs.ncols() as f64;
    let out_dim = targets.nrows() as f64;
    let last = model.layers.len() - 1;

    // Forward, keeping activations per layer.
    let mut activations = Vec::with_capacity(model.layers.len() + 1);
    activations.push(inputs.clone());
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z = &layer.w * activations.last().unwrap();
        for mut col in z.column_iter_mut() {
            col += &layer.b;
        }
        if l != last {
            model.activation.apply(&mut z);
        }
        activations.push(z);
    }

    let residual = activations.last().unwrap() - targets;
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / (batch * out_dim);

    // Backward.
    let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); model.layers.len()];
    let mut delta = residual * (2.0 / (batch * out_dim));
    for l in (0..model.layers.len()).rev() {
        let gw = &delta * activations[l].transpose();
        let gb = delta.column_sum();
        grads[l] = (gw, gb);
        if l > 0 {
            let mut back = model.layers[l].w.transpose() * delta;
            back.zip_apply(&activations[l], |d, a| {
                *d *= model.activation.derivative_from_output(a)
            });
            delta = back;
        }
    }
    (loss, grads)
}

fn mse_batched(model: &MlpModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    let total = inputs.ncols();
    if total == 0 {
        return 0.0;
    }
    let out_dim = targets.nrows() as f64;
    let mut acc = 0.0;
    let chunk = 4096;
    let mut start = 0;
    while start < total {
        let cols = chunk.min(total - start);
        let pred = model.forward_normalized(&inputs.columns(start, cols).into_owned());
        let res = pred - targets.columns(start, cols);
        acc += res.iter().map(|r| r * r).sum::<f64>();
        start += cols;
    }
    acc / (total as f64 * out_dim)
}

/// Trains on raw design matrices (`features x samples`, `targets x samples`).
pub fn train_arrays(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    cfg.validate()?;
    let total = inputs.ncols();
    if total == 0 {
        return Err(Error::ContractViolation("training set is empty".into()));
    }
    if !inputs.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
        return Err(Error::ContractViolation("non-finite training data".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(inputs.nrows());
    sizes.extend_from_slice(hidden);
    sizes.push(targets.nrows());
    let mut model = MlpModel::init(&sizes, Activation::Tanh, &mut rng)?;

    // Shuffled split; normalization statistics come from the train part only.
    let mut order: Vec<usize> = (0..total).collect();
    shuffle(&mut order, &mut rng);
    let val_count = ((total as f64) * cfg.val_split).floor() as usize;
    let train_count = total - val_count;
    let (train_idx, val_idx) = order.split_at(train_count);

    let gather = |idx: &[usize], src: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(src.nrows(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out.set_column(k, &src.column(i));
        }
        out
    };
    let mut train_x = gather(train_idx, inputs);
    let mut train_y = gather(train_idx, targets);
    let mut val_x = gather(val_idx, inputs);
    let mut val_y = gather(val_idx, targets);

    model.input_norm = Norm::from_columns(&train_x);
    model.output_norm = Norm::from_columns(&train_y);
    model.input_norm.normalize_in_place(&mut train_x);
    model.output_norm.normalize_in_place(&mut train_y);
    model.input_norm.normalize_in_place(&mut val_x);
    model.output_norm.normalize_in_place(&mut val_y);

    let mut adam = AdamState::new(&model);
    let mut log = TrainLog { epochs: Vec::new(), stop: StopReason::EpochBudget, val_plateau_at: None };
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;
    let mut batch_order: Vec<usize> = (0..train_count).collect();

    for epoch in 0..cfg.max_epochs {
        // Cosine annealing over the epoch budget, floored at 1e-3 of the
        // configured rate; late epochs settle instead of bouncing on the
        // minibatch noise floor.
        let progress = epoch as f64 / cfg.max_epochs as f64;
        let lr = cfg.learning_rate
            * (1e-3 + (1.0 - 1e-3) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        shuffle(&mut batch_order, &mut rng);
        let mut start = 0;
        while start < train_count {
            let cols = cfg.batch_size.min(train_count - start);
            let batch_idx = &batch_order[start..start + cols];
            let bx = gather(batch_idx, &train_x);
            let by = gather(batch_idx, &train_y);
            let (loss, mut grads) = loss_and_grads(&model, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            clip_global_norm(&mut grads, 1.0);
            adam.update(&mut model, &grads, lr);
            start += cols;
        }

        let train_mse = mse_batched(&model, &train_x, &train_y);
        if !train_mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_mse = (!val_idx.is_empty()).then(|| mse_batched(&model, &val_x, &val_y));
        log.epochs.push(EpochStats { epoch, train_mse, val_mse });

        if let Some(v) = val_mse {
            if v < best_val * (1.0 - 1e-4) {
                best_val = v;
                stale = 0;
            } else {
                stale += 1;
                if stale == cfg.patience && log.val_plateau_at.is_none() {
                    log.val_plateau_at = Some(epoch);
                    log::warn!("validation MSE stalled for {} epochs at epoch {epoch}", cfg.patience);
                }
            }
        }
        if train_mse < cfg.target_mse {
            log.stop = StopReason::TargetReached;
            break;
        }
    }
    Ok((model, log))
}

/// Trains the feedback map on a dataset: inputs `(t_g, x)`, targets `u`.
pub fn train(ds: &Dataset, hidden: &[usize], cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ds.meta.state_dim;
    let m = ds.meta.control_dim;
    let total = ds.records.len();
    let mut inputs = DMatrix::zeros(1 + n, total);
    let mut targets = DMatrix::zeros(m, total);
    for (k, r) in ds.records.iter().enumerate() {
        inputs[(0, k)] = r.t_g;
        inputs.view_mut((1, k), (n, 1)).copy_from(&r.x);
        targets.set_column(k, &r.u);
    }
    train_arrays(&inputs, &targets, hidden, cfg)
}

/// Rescales the whole gradient when its global norm exceeds `max_norm`;
/// caps the update spikes caused by rare large-residual records.
fn clip_global_norm(grads: &mut [(DMatrix<f64>, DVector<f64>)], max_norm: f64) {
    let norm: f64 = grads
        .iter()
        .map(|(w, b)| w.norm_squared() + b.norm_squared())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for (w, b) in grads.iter_mut() {
            *w *= factor;
            *b *= factor;
        }
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha20Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Max relative disagreement between backprop and central finite differences
/// (step 1e-6) over every parameter, for the MSE loss on the given batch in
/// normalized coordinates.
pub fn gradient_check(model: &MlpModel, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    const STEP: f64 = 1e-6;
    let (_, grads) = loss_and_grads(model, inputs, targets);
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let (rows, cols) = (model.layers[l].w.nrows(), model.layers[l].w.ncols());
        for r in 0..rows {
            for c in 0..cols {
                probe.layers[l].w[(r, c)] = model.layers[l].w[(r, c)] + STEP;
                let (up, _) = loss_and_grads(&probe, inputs, targets);
                probe.layers[l].w[(r, c)] = model.layers[l].w[(r, c)] - STEP;
                let (dn, _) = loss_and_grads(&probe, inputs, targets);
                probe.layers[l].w[(r, c)] = model.layers[l].w[(r, c)];
                let fd = (up - dn) / (2.0 * STEP);
                let bp = grads[l].0[(r, c)];
                worst = worst.max((bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-3));
            }
            probe.layers[l].b[r] = model.layers[l].b[r] + STEP;
            let (up, _) = loss_and_grads(&probe, inputs, targets);
            probe.layers[l].b[r] = model.layers[l].b[r] - STEP;
            let (dn, _) = loss_and_grads(&probe, inputs, targets);
            probe.layers[l].b[r] = model.layers[l].b[r];
            let fd = (up - dn) / (2.0 * STEP);
            let bp = grads[l].1[r];
            worst = worst.max((bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-3));
        }
    }
    worst
}

#[derive(Serialize, Deserialize)]
struct NormFile {
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    output_shift: Vec<f64>,
    output_scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major weight rows.
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    arch: Vec<usize>,
    activation: Activation,
    norm_stats: NormFile,
    layers: Vec<LayerFile>,
}

pub fn model_to_json(model: &MlpModel) -> Result<String> {
    let file = ModelFile {
        arch: model.layer_sizes.clone(),
        activation: model.activation,
        norm_stats: NormFile {
            input_shift: model.input_norm.shift.iter().copied().collect(),
            input_scale: model.input_norm.scale.iter().copied().collect(),
            output_shift: model.output_norm.shift.iter().copied().collect(),
            output_scale: model.output_norm.scale.iter().copied().collect(),
        },
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                w: (0..l.w.nrows())
                    .map(|r| l.w.row(r).iter().copied().collect())
                    .collect(),
                b: l.b.iter().copied().collect(),
            })
            .collect(),
    };
    Ok(crate::util::to_json_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<MlpModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.arch.len() < 2 || file.layers.len() + 1 != file.arch.len() {
        return Err(Error::ContractViolation("model file: arch/layers mismatch".into()));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (l, lf) in file.layers.iter().enumerate() {
        let (out_dim, in_dim) = (file.arch[l + 1], file.arch[l]);
        if lf.w.len() != out_dim || lf.w.iter().any(|row| row.len() != in_dim) || lf.b.len() != out_dim
        {
            return Err(Error::ContractViolation(format!(
                "model file: layer {l} shape does not chain {in_dim} -> {out_dim}"
            )));
        }
        let w = DMatrix::from_fn(out_dim, in_dim, |r, c| lf.w[r][c]);
        layers.push(Layer { w, b: DVector::from_vec(lf.b.clone()) });
    }
    let dim_in = file.arch[0];
    let dim_out = *file.arch.last().unwrap();
    let ns = &file.norm_stats;
    if ns.input_shift.len() != dim_in
        || ns.input_scale.len() != dim_in
        || ns.output_shift.len() != dim_out
        || ns.output_scale.len() != dim_out
    {
        return Err(Error::ContractViolation("model file: normalization dims mismatch".into()));
    }
    Ok(MlpModel {
        layer_sizes: file.arch,
        activation: file.activation,
        layers,
        input_norm: Norm {
            shift: DVector::from_vec(ns.input_shift.clone()),
            scale: DVector::from_vec(ns.input_scale.clone()),
        },
        output_norm: Norm {
            shift: DVector::from_vec(ns.output_shift.clone()),
            scale: DVector::from_vec(ns.output_scale.clone()),
        },
    })
}

pub fn write_model(model: &MlpModel, path: &Path) -> Result<()> {
    let text = model_to_json(model)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<MlpModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn linear_map_data(count: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        // u = 2 * t_g with one dummy state coordinate.
        let mut inputs = DMatrix::zeros(2, count);
        let mut targets = DMatrix::zeros(1, count);
        for k in 0..count {
            let t = k as f64 / count as f64;
            inputs[(0, k)] = t;
            inputs[(1, k)] = (k as f64 * 0.7).sin();
            targets[(0, k)] = 2.0 * t;
        }
        (inputs, targets)
    }

    #[test]
    fn linear_target_reaches_paper_threshold() {
        let (x, y) = linear_map_data(1000);
        let cfg = TrainConfig {
            max_epochs: 2000,
            seed: 3,
            learning_rate: 3e-2,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let (model, log) = train_arrays(&x, &y, &[16], &cfg).unwrap();
        assert_eq!(log.stop, StopReason::TargetReached);
        assert!(log.epochs.last().unwrap().train_mse < 1e-6);
        assert!(log.epochs.len() <= 2000);
        let u = infer(&model, 0.5, &DVector::from_vec(vec![0.0])).unwrap();
        assert_relative_eq!(u[0], 1.0, epsilon = 2e-2);
    }

    #[test]
    fn zero_epoch_budget_returns_initial_model() {
        let (x, y) = linear_map_data(100);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let (model, log) = train_arrays(&x, &y, &[4], &cfg).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(model.layer_sizes, vec![2, 4, 1]);
    }

    #[test]
    fn constant_targets_converge_to_the_constant() {
        let mut inputs = DMatrix::zeros(2, 200);
        for k in 0..200 {
            inputs[(0, k)] = k as f64 * 0.01;
            inputs[(1, k)] = (k as f64 * 0.3).cos();
        }
        let targets = DMatrix::from_element(1, 200, 4.25);
        // Pointwise 1e-6 agreement needs the normalized outputs driven to
        // ~1e-6, hence the much tighter stop threshold.
        let cfg = TrainConfig {
            max_epochs: 4000,
            val_split: 0.0,
            learning_rate: 3e-2,
            batch_size: 64,
            target_mse: 1e-13,
            ..TrainConfig::default()
        };
        let (model, _) = train_arrays(&inputs, &targets, &[4], &cfg).unwrap();
        let u = infer(&model, 1.3, &DVector::from_vec(vec![0.2])).unwrap();
        assert_relative_eq!(u[0], 4.25, epsilon = 1e-6);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let model = MlpModel::init(&[3, 5, 4, 2], Activation::Tanh, &mut rng).unwrap();
            let inputs = DMatrix::from_fn(3, 7, |_, _| rng.gen_range(-1.0..1.0));
            let targets = DMatrix::from_fn(2, 7, |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.max(gradient_check(&model, &inputs, &targets));
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn linear_model_gradient_is_exact_least_squares() {
        // Single linear layer: dL/dW = 2/(B*m) * (W X + b - Y) X^T.
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut model = MlpModel::init(&[2, 1], Activation::Tanh, &mut rng).unwrap();
        model.layers[0].w = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        model.layers[0].b = DVector::from_vec(vec![0.1]);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -0.5, 0.5, -1.0, 0.25]);
        let y = DMatrix::from_row_slice(1, 3, &[0.2, -0.3, 0.8]);
        let (_, grads) = loss_and_grads(&model, &x, &y);
        let residual = &model.layers[0].w * &x + DMatrix::from_element(1, 3, 0.1) - &y;
        let want_w = &residual * x.transpose() * (2.0 / 3.0);
        let want_b = residual.column_sum() * (2.0 / 3.0);
        assert!((grads[0].0.clone() - want_w).amax() < 1e-12);
        assert!((grads[0].1.clone() - want_b).amax() < 1e-12);
    }

    #[test]
    fn zero_input_bias_gradient_is_twice_mean_residual() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut model = MlpModel::init(&[2, 1], Activation::Tanh, &mut rng).unwrap();
        model.layers[0].b = DVector::from_vec(vec![1.5]);
        let x = DMatrix::zeros(2, 4);
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 0.0, -1.0]);
        let (_, grads) = loss_and_grads(&model, &x, &y);
        // Output is b for every column; mean residual = 1.5 - 0.5 = 1.0.
        assert_relative_eq!(grads[0].1[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_model_outputs_target_mean() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut model = MlpModel::init(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        for l in &mut model.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        model.output_norm = Norm {
            shift: DVector::from_vec(vec![7.5]),
            scale: DVector::from_vec(vec![2.0]),
        };
        let u = infer(&model, 0.3, &DVector::from_vec(vec![0.4])).unwrap();
        assert_eq!(u[0], 7.5);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut model = MlpModel::init(&[3, 2], Activation::Tanh, &mut rng).unwrap();
        model.layers[0].w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        model.layers[0].b = DVector::from_vec(vec![0.25, -0.5]);
        let u = infer(&model, 2.0, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        // W [t_g, x] + b with identity normalization.
        assert_relative_eq!(u[0], 1.0 * 2.0 + 2.0 * 1.0 + 3.0 * (-1.0) + 0.25, epsilon = 1e-14);
        assert_relative_eq!(u[1], -1.0 * 2.0 + 0.5 * 1.0 + 0.0 - 0.5, epsilon = 1e-14);
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut model = MlpModel::init(&[4, 6, 6, 2], Activation::Tanh, &mut rng).unwrap();
        model.input_norm = Norm {
            shift: DVector::from_fn(4, |i, _| i as f64 * 0.317),
            scale: DVector::from_fn(4, |i, _| 1.0 + i as f64),
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&model, &path).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(model, back);
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let a = infer(&model, 0.7, &x).unwrap();
        let b = infer(&back, 0.7, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let model = MlpModel::init(&[2, 2, 1], Activation::Tanh, &mut rng).unwrap();
        assert!(infer(&model, f64::NAN, &DVector::from_vec(vec![0.0])).is_err());
        assert!(infer(&model, 0.0, &DVector::from_vec(vec![f64::INFINITY])).is_err());
    }
}
