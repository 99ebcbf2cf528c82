//! Mini-batch training with Adam and the step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::data::{Batch, Sample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossReport};
use crate::model::{FusionPolicy, ModelConfig, SiaTrans};
use crate::nn::{ParamBuilder, ParamStore, Session};
use crate::optim::Adam;

/// Offset separating the shuffling stream from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// A model and its freshly initialized parameters.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<(SiaTrans, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SiaTrans::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
    Ok((model, store))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Zero-based.
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Means over the epoch's steps.
    pub total: f64,
    pub terms: [f64; 7],
    pub classification: f64,
}

impl EpochStats {
    fn accumulate(epoch: usize, lr: f64, reports: &[LossReport]) -> Self {
        let n = reports.len() as f64;
        let mut terms = [0.0; 7];
        for r in reports {
            for (t, v) in terms.iter_mut().zip(r.terms) {
                *t += v / n;
            }
        }
        Self {
            epoch,
            lr,
            steps: reports.len(),
            total: reports.iter().map(|r| r.total).sum::<f64>() / n,
            terms,
            classification: reports.iter().map(|r| r.classification).sum::<f64>() / n,
        }
    }
}

pub struct Trainer {
    pub run: RunConfig,
    pub model: SiaTrans,
    pub store: ParamStore,
    adam: Adam,
    steps: usize,
}

impl Trainer {
    pub fn new(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        let (model, store) = init_model(&run.model_config()?, run.seed)?;
        Ok(Self {
            run: run.clone(),
            model,
            store,
            adam: Adam::new(run.adam()),
            steps: 0,
        })
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Forward, backward and one parameter update on a batch.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<LossReport> {
        let tape = Tape::new();
        let s = Session::training(&tape, &self.store);
        let pred = self.model.forward(&s, s.input(batch.rgb.clone()), s.input(batch.depth.clone()), FusionPolicy::Cross)?;
        let labels = match (&batch.labels, self.run.classification_loss) {
            (Some(l), true) => Some(s.input(l.clone())),
            (None, true) => {
                return Err(Error::Usage(
                    "the classification loss needs depth-quality labels; run label-depth or disable it".into(),
                ))
            }
            (_, false) => None,
        };
        let gt = s.input(batch.gt.clone());
        let (loss, report) = total_loss(&pred.supervised_maps(), gt, pred.class_logit, labels, &self.run.loss_weights)?;
        if let Some(term) = report.non_finite_term() {
            return Err(Error::Numeric {
                context: format!("step {}", self.steps + 1),
                detail: format!("loss term {term} is not finite ({report:?})"),
            });
        }
        let grads = tape.backward(loss)?;
        let param_grads = s.param_grads(&grads);
        if let Some((id, _)) = param_grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::Numeric {
                context: format!("step {}", self.steps + 1),
                detail: format!("gradient of {} is not finite", self.store.entry(*id).name),
            });
        }
        let updates = s.take_state_updates();
        drop(s);
        self.adam.step(&mut self.store, &param_grads, lr)?;
        self.store.apply_state_updates(updates)?;
        self.steps += 1;
        Ok(report)
    }

    /// Runs the configured epochs (or steps). `on_epoch` sees each epoch's
    /// statistics and the trainer, e.g. to write checkpoints.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        labels: Option<&[f64]>,
        mut on_epoch: impl FnMut(&EpochStats, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochStats>> {
        let bs = self.run.batch_size;
        if samples.len() < 2 {
            return Err(Error::Data(format!("{} training pairs; at least 2 are needed", samples.len())));
        }
        if let Some(l) = labels {
            if l.len() != samples.len() {
                return Err(Error::Data(format!("{} labels for {} pairs", l.len(), samples.len())));
            }
        }
        let schedule = self.run.schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed.wrapping_add(SHUFFLE_STREAM));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::new();
        'epochs: for epoch in 0..self.run.epochs {
            let lr = schedule.lr(epoch);
            order.shuffle(&mut rng);
            let mut reports = Vec::new();
            for chunk in order.chunks(bs) {
                if chunk.len() < 2 {
                    // a lone sample has no batch statistics
                    continue;
                }
                let picked: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let picked_labels: Option<Vec<f64>> = labels.map(|l| chunk.iter().map(|&i| l[i]).collect());
                let batch = Batch::collate(&picked, picked_labels.as_deref())?;
                reports.push(self.step(&batch, lr)?);
                if self.run.max_steps.is_some_and(|m| self.steps >= m) {
                    let stats = EpochStats::accumulate(epoch, lr, &reports);
                    log_epoch(&stats);
                    on_epoch(&stats, self)?;
                    history.push(stats);
                    break 'epochs;
                }
            }
            let stats = EpochStats::accumulate(epoch, lr, &reports);
            log_epoch(&stats);
            on_epoch(&stats, self)?;
            history.push(stats);
        }
        Ok(history)
    }
}

fn log_epoch(s: &EpochStats) {
    log::info!(
        "epoch {:>4}  lr {:.1e}  steps {:>3}  loss {:.5}  (final {:.5}, class {:.5})",
        s.epoch + 1,
        s.lr,
        s.steps,
        s.total,
        s.terms[6],
        s.classification
    );
}
