use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::adam_step;
use super::evaluate::evaluate;
use crate::checkpoint::Checkpoint;
use crate::config::{OptimizerConfig, TrainConfig};
use crate::data::{batch, expand_eightfold, Sample};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, generator_loss};
use crate::metrics::Aggregation;
use crate::networks::{Discriminator, Generator};
use crate::nn::{Mode, Module};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub gen_loss: f64,
    pub disc_loss: f64,
}

/// Step counter, the run's single random source, and the loss history.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub rng_seed: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            step: 0,
            rng_seed: seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
        }
    }

    pub fn loss_log_csv(&self) -> String {
        let mut s = String::from("step,gen_loss,disc_loss\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{}", r.step, r.gen_loss, r.disc_loss);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub steps: u64,
    pub last: Option<LossRecord>,
    /// Best validation Jaccard index and the step it was reached at.
    pub best: Option<(f64, u64)>,
    pub stopped_early: bool,
    pub final_checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub state: TrainState,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl Trainer {
    /// Build both networks from the configuration, drawing initial weights from the run's
    /// random source seeded with `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut state = TrainState::new(config.seed);
        let generator = Generator::new(&config.model, &mut state.rng)?;
        let discriminator = Discriminator::new(&config.model, &mut state.rng)?;
        Ok(Trainer {
            config,
            generator,
            discriminator,
            state,
        })
    }

    /// One discriminator update on the detached generator output, then one generator update
    /// against the freshly updated discriminator. Returns `(gen_loss, disc_loss)`.
    pub fn train_step(&mut self, images: &Tensor, masks: &Tensor) -> Result<LossRecord> {
        let step = self.state.step + 1;
        let record = self.step_inner(images, masks, step).map_err(|e| e.at_step(step))?;
        self.state.step = step;
        self.state.history.push(record);
        Ok(record)
    }

    fn step_inner(&mut self, images: &Tensor, masks: &Tensor, step: u64) -> Result<LossRecord> {
        let opt = OptimizerConfig {
            lr: self.config.lr_at(step),
            ..self.config.optimizer
        };
        let weights = self.config.model.loss_weights();
        let x = Var::constant(images.clone());
        let y = Var::constant(masks.clone());
        let mut mode = Mode::Train(&mut self.state.rng);
        let fake = self.generator.forward(&x, &mut mode)?;

        let real_out = self.discriminator.forward(&x, &y, &mut mode)?;
        let fake_out = self.discriminator.forward(&x, &fake.detach(), &mut mode)?;
        let d_loss = discriminator_loss(&real_out, &fake_out)?;
        d_loss.backward()?;
        adam_step(&mut self.discriminator, &opt, step)?;

        let fake_out = self.discriminator.forward(&x, &fake, &mut mode)?;
        let g_loss = generator_loss(&fake_out, &fake, masks, weights)?;
        g_loss.backward()?;
        adam_step(&mut self.generator, &opt, step)?;
        // The generator pass also filled discriminator gradients; they must not leak into
        // the next discriminator update.
        self.discriminator.zero_grad();
        Ok(LossRecord {
            step,
            gen_loss: g_loss.value().item()? as f64,
            disc_loss: d_loss.value().item()? as f64,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.state.step, &self.generator, Some(&self.discriminator))
    }

    /// Run the configured number of epochs (or `max_steps`). With `out_dir`, writes
    /// `step_XXXXXX.ckpt` every `checkpoint_every` steps, `final.ckpt`, `loss_log.csv`,
    /// `best.ckpt` when validating, and `augment_recipes.tsv` when augmenting.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        out_dir: Option<&Path>,
    ) -> Result<FitSummary> {
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let expanded;
        let train = if self.config.augment {
            let (samples, recipes) = expand_eightfold(train, &mut self.state.rng)?;
            if let Some(dir) = out_dir {
                let mut text = String::from("id\trecipe\n");
                for (id, r) in &recipes {
                    let _ = writeln!(text, "{id}\t{r}");
                }
                write_file(&dir.join("augment_recipes.tsv"), text)?;
            }
            expanded = samples;
            &expanded[..]
        } else {
            train
        };

        let mut summary = FitSummary {
            steps: 0,
            last: None,
            best: None,
            stopped_early: false,
            final_checkpoint: None,
        };
        let mut stale = 0usize;
        let max_steps = self.config.max_steps;
        'epochs: for epoch in 0..self.config.epochs {
            let batches: Vec<(Tensor, Tensor)> =
                batch(train, self.config.batch_size, Some(&mut self.state.rng))?.collect();
            for (x, y) in batches {
                let r = self.train_step(&x, &y)?;
                summary.last = Some(r);
                log::debug!("epoch {epoch} step {} gen {:.5} disc {:.5}", r.step, r.gen_loss, r.disc_loss);
                if r.step % self.config.checkpoint_every == 0 {
                    log::info!("step {} gen {:.5} disc {:.5}", r.step, r.gen_loss, r.disc_loss);
                    if let Some(dir) = out_dir {
                        self.checkpoint().save(&dir.join(format!("step_{:06}.ckpt", r.step)))?;
                        write_file(&dir.join("loss_log.csv"), self.state.loss_log_csv())?;
                    }
                    if let Some(val) = val {
                        let jsc = evaluate(&self.generator, val, 0.5, Aggregation::PerImage)?
                            .aggregate
                            .jsc;
                        log::info!("step {} validation JSC {jsc:.4}", r.step);
                        if summary.best.map_or(true, |(b, _)| jsc > b) {
                            summary.best = Some((jsc, r.step));
                            stale = 0;
                            if let Some(dir) = out_dir {
                                self.checkpoint().save(&dir.join("best.ckpt"))?;
                            }
                        } else {
                            stale += 1;
                            let patience = self.config.early_stop_patience;
                            if patience > 0 && stale >= patience {
                                summary.stopped_early = true;
                                break 'epochs;
                            }
                        }
                    }
                }
                if max_steps > 0 && r.step >= max_steps {
                    break 'epochs;
                }
            }
        }
        summary.steps = self.state.step;
        if let Some(dir) = out_dir {
            let path = dir.join("final.ckpt");
            self.checkpoint().save(&path)?;
            write_file(&dir.join("loss_log.csv"), self.state.loss_log_csv())?;
            summary.final_checkpoint = Some(path);
        }
        Ok(summary)
    }
}
