//! Epoch loop with early stopping on validation prediction loss, and
//! evaluation in original units.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::data::{persistence_forecast, Batch, Dataset, Split, Window};
use crate::error::{Error, Result};
use crate::losses::LossComponents;
use crate::model::BasisFormer;
use crate::optim::{AdaBelief, StepOutcome};
use crate::tensor::Tensor;

/// Tracks the best validation score and how long ago it was seen.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records a 1-based epoch's score. Returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    /// A loss term became non-finite; the best parameters so far were kept.
    NonFinite(String),
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::MaxEpochs => f.write_str("max-epochs"),
            StopReason::Patience => f.write_str("patience"),
            StopReason::NonFinite(term) => write!(f, "non-finite {term}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossComponents,
    pub val: LossComponents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub header: String,
    pub epochs: Vec<EpochRecord>,
    /// 1-based; 0 if no epoch completed.
    pub best_epoch: usize,
    pub stop: StopReason,
    pub skipped_steps: usize,
    /// Seconds per epoch. Not part of [`TrainReport::to_csv`].
    pub wall_clock: Vec<f64>,
}

impl TrainReport {
    pub fn best_val_pred(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|r| r.val.pred)
    }

    pub fn aborted(&self) -> bool {
        matches!(self.stop, StopReason::NonFinite(_))
    }

    /// Per-epoch losses. Deterministic for a fixed seed.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\n", self.header);
        s.push_str("epoch,train_pred,train_align,train_smooth,train_total,val_pred,val_align,val_smooth,val_total\n");
        for r in &self.epochs {
            let (t, v) = (&r.train, &r.val);
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, t.pred, t.align, t.smooth, t.total, v.pred, v.align, v.smooth, v.total
            )
            .unwrap();
        }
        writeln!(
            s,
            "# best_epoch={} stop={} skipped_steps={}",
            self.best_epoch, self.stop, self.skipped_steps
        )
        .unwrap();
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for (i, t) in self.wall_clock.iter().enumerate() {
            writeln!(s, "{},{t:.3}", i + 1).unwrap();
        }
        s
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub optimizer: AdaBelief,
}

fn mean_components(sum: LossComponents, count: usize) -> LossComponents {
    let n = count as f64;
    LossComponents {
        pred: sum.pred / n,
        align: sum.align / n,
        smooth: sum.smooth / n,
        total: sum.total / n,
    }
}

fn accumulate(sum: &mut LossComponents, c: LossComponents, weight: usize) {
    let w = weight as f64;
    sum.pred += c.pred * w;
    sum.align += c.align * w;
    sum.smooth += c.smooth * w;
    sum.total += c.total * w;
}

/// Window-weighted mean of every loss component over `windows`, without
/// gradients.
pub fn loss_over(model: &BasisFormer, data: &Dataset, windows: &[Window]) -> Result<LossComponents> {
    if windows.is_empty() {
        return Err(Error::Input("no windows to evaluate".into()));
    }
    let mut sum = LossComponents::default();
    for chunk in windows.chunks(model.config.batch_size) {
        let g = Graph::new();
        let p = model.store.bind_frozen(&g);
        let out = model.forward_train(&g, &p, &data.batch(chunk))?;
        accumulate(&mut sum, out.components(), chunk.len());
    }
    Ok(mean_components(sum, windows.len()))
}

/// Trains `model` in place. On return the model holds the parameters of the
/// best validation epoch.
pub fn train(model: &mut BasisFormer, data: &Dataset) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    if data.channels() != cfg.channels || data.input_len != cfg.input_len || data.output_len != cfg.output_len {
        return Err(Error::Input("dataset windows do not match the model configuration".into()));
    }
    let train_windows = data.windows(Split::Train, cfg.stride);
    let val_windows = data.windows(Split::Val, cfg.eval_stride);
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Input("train and val splits both need at least one window".into()));
    }
    let mut optimizer = AdaBelief::new(cfg.optimizer(), model.store.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.store.tensors().to_vec();
    let mut report = TrainReport {
        header: cfg.echo(),
        epochs: Vec::new(),
        best_epoch: 0,
        stop: StopReason::MaxEpochs,
        skipped_steps: 0,
        wall_clock: Vec::new(),
    };

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order = train_windows.clone();
        order.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk);
            match train_step(model, &mut optimizer, &batch) {
                Ok((components, outcome)) => {
                    if outcome == StepOutcome::Skipped {
                        report.skipped_steps += 1;
                    }
                    accumulate(&mut sum, components, chunk.len());
                }
                Err(Error::NonFinite(term)) => {
                    warn!("epoch {epoch}: {term} is not finite; keeping epoch {} parameters", stopper.best_epoch());
                    report.stop = StopReason::NonFinite(term);
                    report.wall_clock.push(started.elapsed().as_secs_f64());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = mean_components(sum, order.len());
        let val = match loss_over(model, data, &val_windows) {
            Ok(v) => v,
            Err(Error::NonFinite(term)) => {
                report.stop = StopReason::NonFinite(format!("validation {term}"));
                report.wall_clock.push(started.elapsed().as_secs_f64());
                break;
            }
            Err(e) => return Err(e),
        };
        report.epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            val,
        });
        if stopper.observe(epoch, val.pred) {
            best_params.clone_from_slice(model.store.tensors());
        }
        report.wall_clock.push(started.elapsed().as_secs_f64());
        info!(
            "epoch {epoch}: train {:.5} (pred {:.5}) val pred {:.5}",
            train_loss.total, train_loss.pred, val.pred
        );
        if stopper.should_stop() {
            report.stop = StopReason::Patience;
            break;
        }
    }
    report.best_epoch = stopper.best_epoch();
    model.store.tensors_mut().clone_from_slice(&best_params);
    Ok(TrainOutcome { report, optimizer })
}

fn train_step(model: &mut BasisFormer, optimizer: &mut AdaBelief, batch: &Batch) -> Result<(LossComponents, StepOutcome)> {
    let (components, grads) = {
        let g = Graph::new();
        let p = model.store.bind(&g);
        let out = model.forward_train(&g, &p, batch)?;
        g.backward(out.total)?;
        (out.components(), p.grads(&g))
    };
    let outcome = optimizer.step(model.store.tensors_mut(), &grads)?;
    Ok((components, outcome))
}

/// Mean squared and absolute error in original units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Runs `predict` on batches of `split` windows (normalized `[B, C, I]` in,
/// normalized `[B, C, O]` out) and scores the inverse-normalized forecasts
/// against the inverse-normalized targets.
pub fn evaluate_with<F>(data: &Dataset, split: Split, stride: usize, batch_size: usize, mut predict: F) -> Result<Metrics>
where
    F: FnMut(&Batch) -> Result<Tensor>,
{
    let windows = data.windows(split, stride);
    if windows.is_empty() {
        return Err(Error::Input(format!("{split} split has no complete windows")));
    }
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk);
        let pred = predict(&batch)?;
        if pred.shape() != batch.y.shape() {
            return Err(Error::shape("evaluate", pred.shape(), batch.y.shape()));
        }
        let pred = data.normalizer.invert_tensor(&pred);
        let target = data.normalizer.invert_tensor(&batch.y);
        for (a, b) in pred.data().iter().zip(target.data()) {
            let d = a - b;
            se += d * d;
            ae += d.abs();
        }
        count += pred.numel();
    }
    Ok(Metrics {
        mse: se / count as f64,
        mae: ae / count as f64,
        windows: windows.len(),
    })
}

pub fn evaluate(model: &BasisFormer, data: &Dataset, split: Split) -> Result<Metrics> {
    evaluate_with(data, split, model.config.eval_stride, model.config.batch_size, |b| {
        model.forecast_batch(&b.x, &b.taus)
    })
}

/// Scores the repeat-the-last-steps baseline.
pub fn evaluate_persistence(data: &Dataset, split: Split, stride: usize) -> Result<Metrics> {
    let o = data.output_len;
    evaluate_with(data, split, stride, 64, |b| Ok(persistence_forecast(&b.x, o)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{synth_generate, SynthSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 2,
            input_len: 8,
            output_len: 8,
            n_basis: 3,
            heads: 2,
            layers: 1,
            d_c: 6,
            bottleneck: 4,
            basis_hidden: 8,
            epochs: 3,
            batch_size: 8,
            split: [0.6, 0.2, 0.2],
            ..Default::default()
        }
    }

    fn data(cfg: &ModelConfig) -> Dataset {
        let spec = SynthSpec::multi_tone(cfg.channels, 160, &[8.0, 16.0], 0.1, 7);
        Dataset::prepare(synth_generate(&spec).unwrap(), cfg).unwrap()
    }

    #[test]
    fn patience_stops_three_epochs_after_best() {
        let mut s = EarlyStopping::new(3);
        let vals = [5.0, 4.0, 6.0, 6.0, 6.0, 1.0];
        let mut stopped_at = None;
        for (i, &v) in vals.iter().enumerate() {
            s.observe(i + 1, v);
            if s.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best(), 4.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = ModelConfig { lr: 0.0, ..tiny() };
        let d = data(&cfg);
        let mut m = BasisFormer::new(&cfg).unwrap();
        let before = m.store.clone();
        train(&mut m, &d).unwrap();
        assert_eq!(m.store, before);
    }

    #[test]
    fn training_is_reproducible_and_keeps_best() {
        let cfg = tiny();
        let d = data(&cfg);
        let mut a = BasisFormer::new(&cfg).unwrap();
        let mut b = BasisFormer::new(&cfg).unwrap();
        let ra = train(&mut a, &d).unwrap().report;
        let rb = train(&mut b, &d).unwrap().report;
        assert_eq!(ra.to_csv(), rb.to_csv());
        assert_eq!(a.store, b.store);
        assert_eq!(ra.epochs.len(), 3);
        let best = ra.best_val_pred().unwrap();
        assert!(best <= ra.epochs.last().unwrap().val.pred);
        // The restored parameters reproduce the best epoch's validation loss.
        let again = loss_over(&a, &d, &d.windows(Split::Val, 1)).unwrap();
        assert_eq!(again.pred, best);
        assert!(ra.to_csv().starts_with("# C=2 I=8 O=8 N=3 H=2 M=1"));
    }

    #[test]
    fn training_reduces_loss() {
        let cfg = ModelConfig { epochs: 5, lr: 3e-3, ..tiny() };
        let d = data(&cfg);
        let mut m = BasisFormer::new(&cfg).unwrap();
        let report = train(&mut m, &d).unwrap().report;
        let first = report.epochs[0].train.total;
        let last = report.epochs.last().unwrap().train.total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn metrics_for_stub_predictors() {
        let cfg = tiny();
        let d = data(&cfg);
        let perfect = evaluate_with(&d, Split::Test, 1, 4, |b| Ok(b.y.clone())).unwrap();
        assert!(perfect.mse < 1e-24 && perfect.mae < 1e-12);

        let delta = 0.75;
        let n = d.normalizer.clone();
        let offset = evaluate_with(&d, Split::Test, 1, 4, |b| {
            let raw = n.invert_tensor(&b.y);
            let shifted = Tensor::new(raw.shape(), raw.data().iter().map(|v| v + delta).collect())?;
            Ok(n.apply_tensor(&shifted))
        })
        .unwrap();
        assert!((offset.mse - delta * delta).abs() < 1e-9);
        assert!((offset.mae - delta).abs() < 1e-9);
    }

    #[test]
    fn persistence_on_pure_sinusoid() {
        // Period 8 with I = O = 8: the last 8 steps repeat exactly.
        let cfg = ModelConfig { channels: 1, ..tiny() };
        let spec = SynthSpec::multi_tone(1, 160, &[8.0], 0.0, 1);
        let d = Dataset::prepare(synth_generate(&spec).unwrap(), &cfg).unwrap();
        assert!(evaluate_persistence(&d, Split::Test, 1).unwrap().mse < 1e-20);

        // Period 16 with I = O = 8: ŷ[k] = sin(θ + k) vs y[k] = sin(θ + k + π),
        // so the error is 2 sin(·) and the MSE is 4 · mean sin² over the window.
        let spec = SynthSpec::multi_tone(1, 160, &[16.0], 0.0, 1);
        let series = synth_generate(&spec).unwrap();
        let d = Dataset::prepare(series.clone(), &cfg).unwrap();
        let got = evaluate_persistence(&d, Split::Test, 1).unwrap();
        let mut oracle = 0.0;
        let mut count = 0;
        for w in d.windows(Split::Test, 1) {
            for k in 0..8 {
                let y = series.get(w.t + 8 + k, 0);
                oracle += 4.0 * y * y;
                count += 1;
            }
        }
        assert!((got.mse - oracle / count as f64).abs() < 1e-9);
    }

    #[test]
    fn persistence_mae_scales_with_data() {
        let cfg = tiny();
        let raw = synth_generate(&SynthSpec::multi_tone(2, 160, &[5.0, 11.0], 0.3, 2)).unwrap();
        let base = evaluate_persistence(&Dataset::prepare(raw.clone(), &cfg).unwrap(), Split::Test, 1).unwrap();
        let big = evaluate_persistence(&Dataset::prepare(raw.scaled(10.0), &cfg).unwrap(), Split::Test, 1).unwrap();
        assert!((big.mae / base.mae - 10.0).abs() < 1e-6 * 10.0);
    }

    #[test]
    fn empty_split_is_an_input_error() {
        let cfg = tiny();
        let d = data(&cfg);
        assert!(matches!(evaluate_persistence(&d, Split::Test, 1000), Ok(_)));
        let mut short = d.clone();
        short.segments[2].len = 3;
        assert!(matches!(evaluate_persistence(&short, Split::Test, 1), Err(Error::Input(_))));
    }
}
