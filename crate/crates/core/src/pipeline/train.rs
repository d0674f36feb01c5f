use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::numerics::{Graph, ParamGrads, ParamStore, Tensor};
use crate::pipeline::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use crate::pipeline::config::{ModelConfig, Scheduler};
use crate::pipeline::decode::{beam_search, greedy_decode, ModelStepper};
use crate::pipeline::model::{Model, Sample};
use crate::pipeline::optim::{clip_grad_norm, lsce_loss, warmup_cosine_lr, pad_targets, Adam};
use crate::text::{Tokenizer, Vocabulary, EOS};

/// Progress counters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub lr: f64,
    pub best_bleu4: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    /// Mean batch loss of every optimizer step so far in this process.
    pub losses: Vec<f64>,
}

/// Mixes seed components into one RNG seed (SplitMix64 finaliser).
fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// Model, parameters, optimizer and vocabulary bundled for training.
pub struct Trainer {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub model: Model,
    pub store: ParamStore,
    pub adam: Adam,
    pub state: TrainState,
    /// Steps over which the cosine schedule decays.
    pub total_steps: u64,
}

impl Trainer {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Model::new(&config, vocab.len(), &mut store)?;
        let adam = Adam::new(&store, config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Trainer {
            state: TrainState {
                step: 0,
                epoch: 0,
                lr: config.lr,
                best_bleu4: None,
                best_checkpoint: None,
                losses: Vec::new(),
            },
            config,
            vocab,
            model,
            store,
            adam,
            total_steps: 0,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.config.batch_size) as u64
    }

    /// Length of the schedule: all epochs, or `max_steps` when that is set.
    pub fn schedule_length(&self, n_train: usize) -> u64 {
        let full = self.steps_per_epoch(n_train) * self.config.epochs as u64;
        if self.config.max_steps > 0 {
            full.min(self.config.max_steps)
        } else {
            full
        }
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        let warmup = self.config.warmup_steps;
        match self.config.scheduler {
            Scheduler::Cosine => warmup_cosine_lr(step, self.total_steps, warmup, self.config.lr),
            Scheduler::Constant if step < warmup => self.config.lr * (step + 1) as f64 / warmup as f64,
            Scheduler::Constant => self.config.lr,
        }
    }

    /// Adds the gradient of one sample's summed loss divided by `normalizer`
    /// into `grads`; returns that summed loss.
    fn sample_gradients(
        &self,
        sample: &Sample,
        normalizer: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut ParamGrads,
    ) -> Result<f64> {
        let ids = self.vocab.encode(&sample.text);
        let inputs = &ids[..ids.len() - 1];
        let targets = pad_targets(&ids[1..]);
        let count = targets.iter().flatten().count();
        let mut g = Graph::new();
        let mut rng = rng;
        let memory = self.model.encode(
            &mut g,
            &self.store,
            &sample.keypoints,
            sample.features.as_ref(),
            rng.as_deref_mut(),
        )?;
        let logits = self.model.decode_logits(&mut g, &self.store, memory, inputs, rng)?;
        let mean = lsce_loss(
            &mut g,
            logits,
            &targets,
            self.config.label_smoothing,
            self.config.literal_lsce,
        )?;
        let scaled = g.scale(mean, count as f64 / normalizer);
        g.gradients_into(scaled, grads)?;
        Ok(g.value(mean).item() * count as f64)
    }

    /// One optimizer update on `batch`; returns the token-averaged loss.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let tokens: usize = batch
            .iter()
            .map(|s| self.vocab.encode(&s.text).len() - 1)
            .sum();
        let normalizer = tokens as f64;
        let mut total = ParamGrads::default();
        let mut loss_sum = 0.0;
        let dropout = self.config.dropout > 0.0;
        for (i, s) in batch.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.config.seed, self.state.step, i as u64]));
            loss_sum += self.sample_gradients(s, normalizer, dropout.then_some(&mut rng), &mut total)?;
        }
        let loss = loss_sum / normalizer;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.state.step,
            });
        }
        self.store.zero_grad();
        self.store.accumulate(&total);
        clip_grad_norm(&mut self.store, self.config.max_grad_norm);
        let lr = self.learning_rate(self.state.step);
        self.adam.step(&mut self.store, lr);
        self.state.lr = lr;
        self.state.step += 1;
        self.state.losses.push(loss);
        Ok(loss)
    }

    /// Sample order for `epoch`, a pure function of the seed and epoch.
    pub fn epoch_order(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.config.seed, 0xe90c, epoch]));
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch (or fewer steps if `max_steps` is reached).
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<Vec<f64>> {
        let order = self.epoch_order(data.len(), self.state.epoch);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            if self.config.max_steps > 0 && self.state.step >= self.config.max_steps {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            losses.push(self.train_step(&batch)?);
        }
        self.state.epoch += 1;
        Ok(losses)
    }

    pub fn translate(&self, sample: &Sample, beam_size: usize) -> Result<String> {
        let stepper = ModelStepper::new(&self.model, &self.store, sample)?;
        let h = if beam_size <= 1 {
            greedy_decode(&stepper, self.config.max_len)?
        } else {
            beam_search(&stepper, beam_size, self.config.max_len, self.config.length_norm)?
        };
        Ok(self.vocab.decode(h.content(EOS)))
    }

    /// Corpus BLEU-4 of decoded `data` against its reference sentences.
    pub fn evaluate_bleu(&self, data: &[Sample], beam_size: usize) -> Result<crate::metrics::BleuReport> {
        let hyps = data
            .iter()
            .map(|s| self.translate(s, beam_size))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
        corpus_bleu(&hyps, &refs)
    }

    /// Full training loop. Validates every `validate_every` epochs, keeping
    /// `best.ckpt` (by BLEU-4) and `last.ckpt` under `out_dir` when given.
    pub fn fit(
        &mut self,
        train: &[Sample],
        valid: &[Sample],
        out_dir: Option<&Path>,
        log: &mut dyn FnMut(&str),
    ) -> Result<TrainState> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.total_steps = self.schedule_length(train.len());
        log(&format!("parameters: {}", self.parameter_count()));
        while (self.state.epoch as usize) < self.config.epochs
            && (self.config.max_steps == 0 || self.state.step < self.config.max_steps)
        {
            let losses = self.run_epoch(train)?;
            let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
            log(&format!(
                "epoch {} step {} lr {:.3e} loss {mean:.6}",
                self.state.epoch, self.state.step, self.state.lr
            ));
            let every = self.config.validate_every.max(1) as u64;
            if !valid.is_empty() && self.state.epoch % every == 0 {
                let bleu4 = self.evaluate_bleu(valid, self.config.beam_size)?.bleu(4);
                log(&format!("validation BLEU-4 {bleu4:.2}"));
                if self.state.best_bleu4.is_none_or(|b| bleu4 > b) {
                    self.state.best_bleu4 = Some(bleu4);
                    if let Some(dir) = out_dir {
                        let p = dir.join("best.ckpt");
                        self.save(&p)?;
                        self.state.best_checkpoint = Some(p);
                    }
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join("last.ckpt"))?;
        }
        Ok(self.state.clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        for ((_, p), m) in self.store.iter().zip(&self.adam.m) {
            tensors.push((format!("adam.m/{}", p.name), m.clone()));
        }
        for ((_, p), v) in self.store.iter().zip(&self.adam.v) {
            tensors.push((format!("adam.v/{}", p.name), v.clone()));
        }
        let counters = [
            ("adam.t", self.adam.t as f64),
            ("state.step", self.state.step as f64),
            ("state.epoch", self.state.epoch as f64),
            ("state.total_steps", self.total_steps as f64),
            ("state.best_bleu4", self.state.best_bleu4.unwrap_or(-1.0)),
        ];
        for (name, v) in counters {
            tensors.push((name.to_string(), Tensor::scalar(v)));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_text: self.config.to_text(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Vocabulary) -> Result<Self> {
        let config = ModelConfig::parse(&ckpt.config_text, Path::new("<checkpoint>"))?;
        let mut t = Trainer::new(config, vocab)?;
        let expected = 3 * t.store.len() + 5;
        if ckpt.tensors.len() != expected {
            return Err(Error::CheckpointMismatch(format!(
                "expected {expected} tensors, found {}",
                ckpt.tensors.len()
            )));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = ckpt
                .get(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name:?}")))?;
            if t.shape() != shape {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {name:?} has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let names: Vec<(String, Vec<usize>)> = t
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        for (i, (name, shape)) in names.iter().enumerate() {
            t.store.iter_mut().nth(i).expect("index in range").value = fetch(name, shape)?;
            t.adam.m[i] = fetch(&format!("adam.m/{name}"), shape)?;
            t.adam.v[i] = fetch(&format!("adam.v/{name}"), shape)?;
        }
        let counter = |name: &str| fetch(name, &[]).map(|t| t.item());
        t.adam.t = counter("adam.t")? as u64;
        t.state.step = counter("state.step")? as u64;
        t.state.epoch = counter("state.epoch")? as u64;
        t.total_steps = counter("state.total_steps")? as u64;
        let best = counter("state.best_bleu4")?;
        t.state.best_bleu4 = (best >= 0.0).then_some(best);
        t.state.lr = t.learning_rate(t.state.step);
        Ok(t)
    }

    /// Writes the checkpoint and its `.vocab` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint())?;
        self.vocab.save(&vocab_sidecar(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let vocab = Vocabulary::load(&vocab_sidecar(path))?;
        Self::from_checkpoint(&ckpt, vocab)
    }
}

/// `<checkpoint>.vocab`.
pub fn vocab_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}
