//! Composite losses and the alternating discriminator/generator loop with
//! early stopping on validation MAE.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aaim::{aaim_forward, real_interactions, sample_fake_with, ForwardOutputs};
use crate::autodiff::{bce_value, AdamW, AdamWConfig, Graph, ParamStore, Tensor, Var};
use crate::data::{QoSDataset, Section, Split, Triplet};
use crate::error::{Error, Result};
use crate::eval::{score, QosPredictor, Scale};
use crate::model::QoSDiff;
use crate::nn::Mode;

/// Binary cross-entropy of `σ(x)` against label `y`.
pub fn bce(x: f64, y: f64) -> f64 {
    bce_value(x, y)
}

pub fn mse(x: f64, y: f64) -> f64 {
    (x - y) * (x - y)
}

/// Graph nodes of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    /// Mean squared error of the real predictions.
    pub regression: Var,
    /// Mean `BCE(d̂_r, 1)`.
    pub adversarial: Var,
}

/// `L_G = (1 - λ)·mean BCE(d̂_r, 1) + λ·mean MSE(ŷ_r, y)`.
pub fn generator_loss(
    g: &mut Graph,
    outputs: &ForwardOutputs,
    targets: &[f64],
    lambda: f64,
) -> Result<GeneratorLoss> {
    let b = g.shape(outputs.y_real)[0];
    if targets.len() != b {
        return Err(Error::shape(
            "generator_loss",
            format!("{b} predictions for {} targets", targets.len()),
        ));
    }
    let se = g.squared_error(outputs.y_real, Tensor::column(targets.to_vec()))?;
    let regression = g.mean(se);
    let adv = g.bce(outputs.d_real, Tensor::filled(b, 1, 1.0))?;
    let adversarial = g.mean(adv);
    let a = g.scale(adversarial, 1.0 - lambda);
    let r = g.scale(regression, lambda);
    let total = g.add(a, r)?;
    Ok(GeneratorLoss {
        total,
        regression,
        adversarial,
    })
}

/// `L_D = mean[BCE(d̂_r, 1) + BCE(d̂_f, 0)]`.
pub fn discriminator_loss(g: &mut Graph, outputs: &ForwardOutputs) -> Result<Var> {
    let [b, _] = g.shape(outputs.d_real);
    let [bf, _] = g.shape(outputs.d_fake);
    if b != bf {
        return Err(Error::shape(
            "discriminator_loss",
            format!("{b} real scores vs {bf} fake scores"),
        ));
    }
    let real = g.bce(outputs.d_real, Tensor::filled(b, 1, 1.0))?;
    let fake = g.bce(outputs.d_fake, Tensor::filled(b, 1, 0.0))?;
    let both = g.add(real, fake)?;
    Ok(g.mean(both))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub generator: AdamWConfig,
    pub discriminator: AdamWConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.2,
            batch_size: 256,
            max_epochs: 150,
            patience: 15,
            generator: AdamWConfig::default(),
            discriminator: AdamWConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("λ must lie in [0, 1], got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Shuffled mini-batches of `len` items. A trailing batch of one item is
/// folded into its predecessor because batch statistics need two rows.
pub fn batch_ranges<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map(Vec::len) == Some(1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Per-batch losses of one generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStepLosses {
    pub total: f64,
    pub regression: f64,
    pub adversarial: f64,
}

/// Mean losses and validation metrics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub generator: f64,
    pub regression: f64,
    pub adversarial: f64,
    pub discriminator: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,L_G,L_reg,L_adv_G,L_D,val_MAE,val_RMSE";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.generator,
            self.regression,
            self.adversarial,
            self.discriminator,
            self.val_mae,
            self.val_rmse
        )
    }
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out
}

/// Holds the two optimizers and the training random stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: LossConfig,
    generator_opt: AdamW,
    discriminator_opt: AdamW,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &QoSDiff, config: LossConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            generator_opt: AdamW::new(&model.store, model.generator_params(), config.generator),
            discriminator_opt: AdamW::new(
                &model.store,
                model.discriminator_params(),
                config.discriminator,
            ),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Minimizes `L_D` with the generator fixed. The generator runs in a
    /// separate graph and its outputs enter the discriminator as constants.
    pub fn discriminator_step(&mut self, model: &mut QoSDiff, batch: &[Triplet]) -> Result<f64> {
        let (users, services): (Vec<usize>, Vec<usize>) =
            batch.iter().map(|t| (t.user, t.service)).unzip();
        let (y_real, y_fake) = {
            let mut g = Graph::new();
            let t_real = real_interactions(
                &mut g,
                &model.store,
                &model.bank,
                &users,
                &services,
                Mode::Train,
                &mut self.rng,
            )?;
            let fake = sample_fake_with(batch.len(), model.bank.dim, model.config.tau, &mut self.rng)?;
            let t_fake = g.input(fake);
            let yr = model.generator.forward(&mut g, &model.store, t_real)?;
            let yf = model.generator.forward(&mut g, &model.store, t_fake)?;
            (g.value(yr).clone(), g.value(yf).clone())
        };
        let mut g = Graph::new();
        let yr = g.input(y_real);
        let yf = g.input(y_fake);
        let d_real = model
            .discriminator
            .forward(&mut g, &model.store, yr, Mode::Train, &mut self.rng)?;
        let d_fake = model
            .discriminator
            .forward(&mut g, &model.store, yf, Mode::Train, &mut self.rng)?;
        let outputs = ForwardOutputs {
            y_real: yr,
            y_fake: yf,
            d_real,
            d_fake,
        };
        let loss = discriminator_loss(&mut g, &outputs)?;
        g.check_finite(loss, "discriminator loss L_D")?;
        model.store.zero_grads();
        g.backward(loss, &mut model.store)?;
        self.discriminator_opt.step(&mut model.store)?;
        g.commit_buffers(&mut model.store)?;
        model.store.zero_grads();
        Ok(g.value(loss).item())
    }

    /// Minimizes `L_G` with the discriminator frozen: gradients flow through
    /// it but only generator and embedding parameters are stepped, and its
    /// running statistics are left untouched.
    pub fn generator_step(&mut self, model: &mut QoSDiff, batch: &[Triplet]) -> Result<GeneratorStepLosses> {
        let (users, services): (Vec<usize>, Vec<usize>) =
            batch.iter().map(|t| (t.user, t.service)).unzip();
        let targets: Vec<f64> = batch.iter().map(|t| t.value).collect();
        let mut g = Graph::new();
        let outputs = aaim_forward(
            &mut g,
            &model.store,
            &model.bank,
            &model.generator,
            &model.discriminator,
            &users,
            &services,
            model.config.tau,
            Mode::Train,
            &mut self.rng,
        )?;
        let loss = generator_loss(&mut g, &outputs, &targets, self.config.lambda)?;
        g.check_finite(loss.regression, "regression loss L_reg")?;
        g.check_finite(loss.adversarial, "adversarial loss L_adv_G")?;
        g.check_finite(loss.total, "generator loss L_G")?;
        model.store.zero_grads();
        g.backward(loss.total, &mut model.store)?;
        self.generator_opt.step(&mut model.store)?;
        g.discard_buffers();
        model.store.zero_grads();
        Ok(GeneratorStepLosses {
            total: g.value(loss.total).item(),
            regression: g.value(loss.regression).item(),
            adversarial: g.value(loss.adversarial).item(),
        })
    }

    /// One pass over `train` in shuffled mini-batches, each running a
    /// discriminator step then a generator step. Validation fields are NaN.
    pub fn train_epoch(&mut self, model: &mut QoSDiff, train: &[Triplet], epoch: usize) -> Result<EpochLog> {
        if train.len() < 2 {
            return Err(Error::InsufficientObservations {
                required: 2,
                available: train.len(),
            });
        }
        let batches = batch_ranges(train.len(), self.config.batch_size, &mut self.rng);
        let (mut lg, mut lr, mut la, mut ld) = (0.0, 0.0, 0.0, 0.0);
        for idx in &batches {
            let batch: Vec<Triplet> = idx.iter().map(|&i| train[i]).collect();
            ld += self.discriminator_step(model, &batch)?;
            let gl = self.generator_step(model, &batch)?;
            lg += gl.total;
            lr += gl.regression;
            la += gl.adversarial;
        }
        let n = batches.len() as f64;
        Ok(EpochLog {
            epoch,
            batches: batches.len(),
            generator: lg / n,
            regression: lr / n,
            adversarial: la / n,
            discriminator: ld / n,
            val_mae: f64::NAN,
            val_rmse: f64::NAN,
        })
    }
}

/// Patience-based stopping rule on a metric where lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the metric of `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub stopping: EarlyStopping,
    pub best_params: Option<ParamStore>,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    /// Infinite when training ran without a validation set.
    pub fn best_val_mae(&self) -> f64 {
        self.stopping.best
    }
}

/// Raw-scale MAE and RMSE of `model` on `triplets` in evaluation mode.
pub fn validation_metrics(model: &QoSDiff, triplets: &[Triplet], ds: &QoSDataset) -> Result<(f64, f64)> {
    let pairs: Vec<(usize, usize)> = triplets.iter().map(|t| (t.user, t.service)).collect();
    let pred = model.predict(&pairs)?;
    score(&pred, triplets, ds, Scale::Raw)
}

/// Trains until `max_epochs` or until validation MAE stalls for `patience`
/// epochs, then restores the best-validation parameters into `model`.
///
/// Without validation entries every epoch counts as an improvement and the
/// final parameters are kept.
pub fn fit(
    model: &mut QoSDiff,
    ds: &QoSDataset,
    split: &Split,
    config: &LossConfig,
    seed: u64,
) -> Result<TrainState> {
    fit_with(model, ds, split, config, seed, |_| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with(
    model: &mut QoSDiff,
    ds: &QoSDataset,
    split: &Split,
    config: &LossConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState> {
    if !ds.is_normalized() {
        return Err(Error::InvalidArgument("training expects a normalized dataset".into()));
    }
    let train = split.triplets(ds, Section::Train);
    let val = split.triplets(ds, Section::Val);
    let mut trainer = Trainer::new(model, config.clone(), seed)?;
    let mut state = TrainState {
        epoch: 0,
        stopping: EarlyStopping::new(config.patience),
        best_params: None,
        log: Vec::new(),
    };
    for epoch in 1..=config.max_epochs {
        let mut entry = trainer.train_epoch(model, &train, epoch)?;
        let improved = if val.is_empty() {
            true
        } else {
            let (mae, rmse) = validation_metrics(model, &val, ds)?;
            entry.val_mae = mae;
            entry.val_rmse = rmse;
            state.stopping.observe(epoch, mae)
        };
        if improved {
            state.best_params = Some(model.store.clone());
        }
        log::debug!(
            "epoch {epoch}: L_G={:.6} L_D={:.6} val_MAE={:.6}",
            entry.generator,
            entry.discriminator,
            entry.val_mae
        );
        on_epoch(&entry);
        state.log.push(entry);
        state.epoch = epoch;
        if state.stopping.should_stop() {
            break;
        }
    }
    if let Some(best) = &state.best_params {
        model.store.load_values_from(best)?;
    }
    Ok(state)
}
