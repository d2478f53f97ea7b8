//! Adam and the alternating generator/discriminator schedule.

mod adam;
mod log;

pub use adam::{AdamConfig, AdamState};
pub use log::{TrainLog, TrainRecord, LOG_HEADER};

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Batcher, InputKind, PairedSample, DEFAULT_BINARY_THRESHOLD};
use crate::error::{Error, Result};
use crate::losses::{
    combined_generator_loss, discriminator_fake_term, discriminator_real_term, mse_loss, LossConfig,
};
use crate::models::{
    build_discriminator, build_generator, Architecture, Checkpoint, DiscriminatorNet,
    GeneratorNet, OptimizerState,
};
use crate::tensor::{BnMode, Rng, Tensor};

const GENERATOR_INIT_STREAM: u64 = 1;
const DISCRIMINATOR_INIT_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Adversarial training on `lambda * mse + adv`.
    #[default]
    Gan,
    /// Generator trained on MSE alone; the discriminator is never touched.
    MseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub mode: TrainMode,
    pub input_kind: InputKind,
    pub binary_threshold: f32,
    /// Discriminator updates per generator update.
    pub k_disc: usize,
    pub log_every: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    pub width_divisor: usize,
    /// Record zero wall time so logs are byte-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lambda: LossConfig::default().lambda,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 64,
            total_steps: 1000,
            seed: 0,
            mode: TrainMode::Gan,
            input_kind: InputKind::Depth,
            binary_threshold: DEFAULT_BINARY_THRESHOLD,
            k_disc: 1,
            log_every: 1,
            checkpoint_every: 0,
            width_divisor: 1,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        Architecture::new(self.width_divisor)?;
        let finite_pos = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_pos(self.lr) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.k_disc == 0 {
            return Err(Error::config("K (discriminator steps per generator step) must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log interval must be >= 1"));
        }
        if !(-1.0..1.0).contains(&self.binary_threshold) {
            return Err(Error::config(format!(
                "binary threshold must be in [-1, 1), got {}",
                self.binary_threshold
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            width_divisor: self.width_divisor,
        }
    }
}

/// Both networks, their optimizers and the step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    /// Completed generator updates.
    pub step: u64,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture();
        let generator = build_generator(arch, &mut Rng::stream(config.seed, GENERATOR_INIT_STREAM))?;
        let discriminator =
            build_discriminator(arch, &mut Rng::stream(config.seed, DISCRIMINATOR_INIT_STREAM))?;
        let g_opt = AdamState::new(config.adam(), &generator.params());
        let d_opt = AdamState::new(config.adam(), &discriminator.params());
        Ok(Trainer {
            generator,
            discriminator,
            g_opt,
            d_opt,
            step: 0,
            config,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ck.config.clone()).map_err(|e| {
            Error::Checkpoint(format!("checkpoint has no usable training config: {e}"))
        })?;
        let discriminator = ck
            .discriminator
            .ok_or_else(|| Error::Checkpoint("training resume needs a discriminator".into()))?;
        let opt = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("training resume needs optimizer state".into()))?;
        let d_opt = opt
            .discriminator
            .ok_or_else(|| Error::Checkpoint("missing discriminator optimizer state".into()))?;
        Ok(Trainer {
            generator: ck.generator,
            discriminator,
            g_opt: opt.generator,
            d_opt,
            step: ck.step,
            config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generator: self.generator.clone(),
            discriminator: Some(self.discriminator.clone()),
            optimizer: Some(OptimizerState {
                generator: self.g_opt.clone(),
                discriminator: Some(self.d_opt.clone()),
            }),
            step: self.step,
            config: serde_json::to_value(&self.config).expect("config serializes"),
        }
    }

    /// One round of the schedule on `batch` (already in the configured input
    /// kind). Losses are measured before the update they drive.
    pub fn train_step(&mut self, batch: &Batch) -> Result<TrainRecord> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let started = Instant::now();
        let step = self.step + 1;
        let abort = |what: &str, v: f64| {
            Error::Numeric(format!("step {step}: {what} is {v}; aborting before the update"))
        };

        let mut record = match self.config.mode {
            TrainMode::MseOnly => {
                let fake = self.generator.forward(&batch.depth, BnMode::Train)?;
                let mse = mse_loss(&fake, &batch.rgb)?;
                if !mse.value.is_finite() {
                    return Err(abort("mse loss", mse.value));
                }
                self.generator.zero_grad();
                self.generator.backward(&mse.grad)?;
                self.g_opt.step(self.generator.params_mut())?;
                TrainRecord {
                    step,
                    d_loss: None,
                    g_total: mse.value,
                    g_mse: mse.value,
                    g_adv: None,
                    ms: 0,
                }
            }
            TrainMode::Gan => {
                let fake = self.generator.forward(&batch.depth, BnMode::Train)?;
                let detached = fake.detach();

                let mut d_loss = 0.0;
                for _ in 0..self.config.k_disc {
                    self.discriminator.zero_grad();
                    let d_real = self.discriminator.forward(&batch.rgb, BnMode::Train)?;
                    let real = discriminator_real_term(&d_real)?;
                    self.discriminator.backward(&real.grad)?;
                    let d_fake = self.discriminator.forward(&detached, BnMode::Train)?;
                    let fake_term = discriminator_fake_term(&d_fake)?;
                    self.discriminator.backward(&fake_term.grad)?;
                    d_loss = real.value + fake_term.value;
                    if !d_loss.is_finite() {
                        return Err(abort("discriminator loss", d_loss));
                    }
                    self.d_opt.step(self.discriminator.params_mut())?;
                }

                let d_on_fake = self.discriminator.forward(&fake, BnMode::Train)?;
                let g = combined_generator_loss(&fake, &batch.rgb, &d_on_fake, self.config.loss())?;
                if !g.value.total.is_finite() {
                    return Err(abort("generator loss", g.value.total));
                }
                let through_d = self.discriminator.backward(&g.grad_d_fake)?;
                self.discriminator.zero_grad();
                let grad: Vec<f32> = g
                    .grad_gen
                    .data()
                    .iter()
                    .zip(through_d.data())
                    .map(|(a, b)| a + b)
                    .collect();
                self.generator.zero_grad();
                self.generator.backward(&Tensor::from_vec(fake.shape(), grad)?)?;
                self.g_opt.step(self.generator.params_mut())?;
                TrainRecord {
                    step,
                    d_loss: Some(d_loss),
                    g_total: g.value.total,
                    g_mse: g.value.mse.unwrap_or_default(),
                    g_adv: g.value.adversarial,
                    ms: 0,
                }
            }
        };
        self.step = step;
        if !self.config.deterministic {
            record.ms = started.elapsed().as_millis() as u64;
        }
        Ok(record)
    }
}

impl Trainer {
    /// Runs steps until `config.total_steps`, writing periodic checkpoints,
    /// `final.d2fc` and `log.csv` into `run_dir` when given. On a numeric
    /// abort the log so far is still written and earlier checkpoints are left
    /// untouched.
    pub fn fit(&mut self, samples: &[PairedSample], run_dir: Option<&Path>) -> Result<TrainLog> {
        let cfg = self.config.clone();
        let mut batcher = Batcher::new(samples, cfg.batch_size, cfg.seed)?;
        if let Some(dir) = run_dir {
            let ck_dir = dir.join("checkpoints");
            fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
        }
        let mut log = TrainLog::default();
        while self.step < cfg.total_steps {
            let batch = batcher
                .batch_at(self.step)?
                .with_input_kind(cfg.input_kind, cfg.binary_threshold);
            let record = match self.train_step(&batch) {
                Ok(r) => r,
                Err(e) => {
                    if let Some(dir) = run_dir {
                        log.write_csv(&dir.join("log.csv"))?;
                    }
                    return Err(e);
                }
            };
            if record.step % cfg.log_every == 0 || record.step == cfg.total_steps {
                log.push(record);
            }
            if let Some(dir) = run_dir {
                if cfg.checkpoint_every > 0 && self.step.is_multiple_of(cfg.checkpoint_every) {
                    let path = dir.join("checkpoints").join(format!("step_{:06}.d2fc", self.step));
                    self.checkpoint().save(&path)?;
                }
            }
        }
        if let Some(dir) = run_dir {
            self.checkpoint().save(&dir.join("final.d2fc"))?;
            log.write_csv(&dir.join("log.csv"))?;
        }
        Ok(log)
    }
}

/// Eval-mode generator outputs for a batch of generator inputs, processed
/// in chunks to bound memory.
pub fn generate(generator: &mut GeneratorNet, inputs: &Tensor) -> Result<Tensor> {
    const CHUNK: usize = 16;
    let n = inputs.shape().n();
    let mut outputs = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let items: Vec<f32> = (start..end).flat_map(|i| inputs.item(i).to_vec()).collect();
        let s = inputs.shape();
        let chunk = Tensor::from_vec(crate::tensor::Shape::new(end - start, s.c(), s.h(), s.w()), items)?;
        outputs.push(generator.forward(&chunk, BnMode::Eval)?);
        start = end;
    }
    generator.clear_cache();
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Tensor::stack(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, SynthSpec};

    fn tiny_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            total_steps: 2,
            seed: 11,
            mode,
            width_divisor: 32,
            deterministic: true,
            ..TrainConfig::default()
        }
    }

    fn data() -> Vec<PairedSample> {
        synthesize_dataset(&SynthSpec {
            seed: 2,
            count: 8,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn bits(ts: Vec<&Tensor>) -> Vec<u32> {
        ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        for mode in [TrainMode::Gan, TrainMode::MseOnly] {
            let mut t = Trainer::new(TrainConfig {
                lr: 0.0,
                ..tiny_config(mode)
            })
            .unwrap();
            let g0 = bits(t.generator.params());
            let d0 = bits(t.discriminator.params());
            let ds = data();
            let batch = Batcher::new(&ds, 4, 0).unwrap().batch_at(0).unwrap();
            t.train_step(&batch).unwrap();
            assert_eq!(bits(t.generator.params()), g0);
            assert_eq!(bits(t.discriminator.params()), d0);
            assert_eq!(t.step, 1);
        }
    }

    #[test]
    fn mse_only_leaves_discriminator_alone() {
        let mut t = Trainer::new(tiny_config(TrainMode::MseOnly)).unwrap();
        let d0 = bits(t.discriminator.params());
        let g0 = bits(t.generator.params());
        let ds = data();
        let log = t.fit(&ds, None).unwrap();
        assert_eq!(log.records().len(), 2);
        assert!(log.records().iter().all(|r| r.d_loss.is_none() && r.g_adv.is_none()));
        assert_eq!(bits(t.discriminator.params()), d0);
        assert_ne!(bits(t.generator.params()), g0);
    }

    #[test]
    fn first_step_is_reproducible() {
        let ds = data();
        let run = || {
            let mut t = Trainer::new(tiny_config(TrainMode::Gan)).unwrap();
            let batch = Batcher::new(&ds, 4, 11).unwrap().batch_at(0).unwrap();
            t.train_step(&batch).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.g_total.to_bits(), b.g_total.to_bits());
        assert_eq!(a.d_loss.unwrap().to_bits(), b.d_loss.unwrap().to_bits());
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let fresh = Trainer::new(TrainConfig {
            total_steps: 0,
            ..tiny_config(TrainMode::Gan)
        })
        .unwrap();
        let mut t = fresh.clone();
        let log = t.fit(&data(), None).unwrap();
        assert!(log.records().is_empty());
        assert_eq!(bits(t.generator.params()), bits(fresh.generator.params()));
        assert_eq!(bits(t.discriminator.params()), bits(fresh.discriminator.params()));
    }

    #[test]
    fn default_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!(
            (cfg.lambda, cfg.lr, cfg.beta1, cfg.beta2, cfg.batch_size, cfg.k_disc),
            (0.1, 2e-4, 0.5, 0.999, 64, 1)
        );
        assert_eq!((cfg.mode, cfg.width_divisor), (TrainMode::Gan, 1));
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { k_disc: 0, ..TrainConfig::default() },
            TrainConfig { lambda: -0.1, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { width_divisor: 5, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = tiny_config(TrainMode::MseOnly);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"mse-only\""));
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
