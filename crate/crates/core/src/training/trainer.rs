use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mse_loss_graph, stochastic_depth_plan, Adam, AdamConfig, ClassWeights, TrainError};
use crate::bors::{generate_sequences, random_sequences, OrderMode, SamplingParams, SequenceSet};
use crate::data::{LabeledVideo, PackedVideo};
use crate::model::{forward, infer, CavtConfig, CavtParams};
use crate::numerics::{Graph, Tensor};

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stochastic-depth rate, uniform across branches.
    pub drop_rate: f64,
    pub class_weights: Option<ClassWeights>,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 20,
            batch_size: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            drop_rate: 0.05,
            class_weights: None,
            seed: DEFAULT_SEED,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(TrainError::Config("drop_rate must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::Config("adam betas must be in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(TrainError::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// How training sequences are drawn from each video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Ordered(OrderMode),
    /// Uniform draws per window, seeded from the training seed.
    Random,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Ordered(OrderMode::Bfs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CavtParams,
    pub log: Vec<LossRecord>,
    /// Number of sequences in the augmented training set.
    pub items: usize,
}

/// `epoch,step,loss` lines under a header; values use the shortest exact representation.
pub fn format_loss_log(log: &[LossRecord]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for r in log {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.step, r.loss);
    }
    out
}

/// One training sequence: a video, its frame indices, and the video's label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub video: usize,
    pub frames: Vec<usize>,
    pub label: f64,
}

fn check_video(
    video: &PackedVideo,
    sampling: &SamplingParams,
    model: &CavtConfig,
) -> Result<(), TrainError> {
    let reject = |reason: String| TrainError::Video {
        id: video.id.clone(),
        reason,
    };
    sampling
        .check_frames(video.frames)
        .map_err(|e| reject(e.to_string()))?;
    if (video.height, video.width) != (model.height, model.width) {
        return Err(reject(format!(
            "frames are {}x{}, model expects {}x{}",
            video.height, video.width, model.height, model.width
        )));
    }
    Ok(())
}

fn check_sampling(sampling: &SamplingParams, model: &CavtConfig) -> Result<(), TrainError> {
    sampling.validate()?;
    if sampling.windows != model.frames {
        return Err(TrainError::Config(format!(
            "sampling produces {} frames per sequence, model expects {}",
            sampling.windows, model.frames
        )));
    }
    Ok(())
}

/// Expands every video into its `r` sequences, each carrying the video's label.
pub fn augment(
    dataset: &[LabeledVideo],
    sampling: &SamplingParams,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<TrainItem>, TrainError> {
    let mut items = Vec::with_capacity(dataset.len() * sampling.r);
    for (v, lv) in dataset.iter().enumerate() {
        let set: SequenceSet = match sampler {
            Sampler::Ordered(mode) => generate_sequences(lv.video.frames, sampling, mode),
            Sampler::Random => {
                random_sequences(lv.video.frames, sampling, seed.wrapping_add(v as u64))
            }
        }
        .map_err(|e| TrainError::Video {
            id: lv.video.id.clone(),
            reason: e.to_string(),
        })?;
        items.extend(set.sequences.into_iter().map(|frames| TrainItem {
            video: v,
            frames,
            label: lv.label,
        }));
    }
    Ok(items)
}

/// Mini-batch Adam over the sequence-augmented dataset.
///
/// Every video is checked up front. The training set holds `r` sequences per video,
/// reshuffled each epoch. Initialisation, shuffling, stochastic depth, and random sampling
/// all draw from streams derived from `train.seed`.
pub fn train(
    dataset: &[LabeledVideo],
    sampling: &SamplingParams,
    sampler: Sampler,
    model: &CavtConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train.validate()?;
    model.validate()?;
    check_sampling(sampling, model)?;
    for lv in dataset {
        check_video(&lv.video, sampling, model)?;
    }

    let mut root = ChaCha8Rng::seed_from_u64(train.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let mut depth_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let sampling_seed = root.next_u64();

    let items = augment(dataset, sampling, sampler, sampling_seed)?;
    let mut params = CavtParams::init(model, &mut init_rng)?;
    let mut adam = Adam::new(train.adam(), &params.tensors);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let max_steps = train.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 1..=train.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(train.batch_size) {
            if log.len() >= max_steps {
                break 'epochs;
            }
            let mut g = Graph::new();
            let vars = params.bind(&mut g);
            let mut preds = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let item = &items[i];
                let clip = dataset[item.video].video.clip(&item.frames)?;
                let plan = stochastic_depth_plan(
                    model.sa_blocks,
                    model.ca_blocks,
                    train.drop_rate,
                    &mut depth_rng,
                )?;
                let trace = forward(&mut g, &params, &vars, &clip, &plan)?;
                preds.push(trace.y);
                labels.push(item.label);
            }
            let loss = mse_loss_graph(&mut g, &preds, &labels, train.class_weights.as_ref())?;
            g.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(&params.tensors)
                .map(|(&v, p)| {
                    g.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape()))
                })
                .collect();
            adam.step(&mut params.tensors, &grads)?;
            log.push(LossRecord {
                epoch,
                step: log.len() + 1,
                loss: g.value(loss).item(),
            });
        }
    }

    Ok(TrainOutcome {
        params,
        log,
        items: items.len(),
    })
}

/// First BFS sequence `S^1` of a video: the root of every window.
pub fn first_sequence(
    video: &PackedVideo,
    sampling: &SamplingParams,
) -> Result<Vec<usize>, TrainError> {
    let first = SamplingParams { r: 1, ..*sampling };
    let set = generate_sequences(video.frames, &first, OrderMode::Bfs).map_err(|e| {
        TrainError::Video {
            id: video.id.clone(),
            reason: e.to_string(),
        }
    })?;
    Ok(set.sequences.into_iter().next().expect("r = 1"))
}

/// Inference on the first sequence of a video.
pub fn predict(
    video: &PackedVideo,
    sampling: &SamplingParams,
    params: &CavtParams,
) -> Result<f64, TrainError> {
    check_sampling(sampling, &params.config)?;
    check_video(video, sampling, &params.config)?;
    let clip = video.clip(&first_sequence(video, sampling)?)?;
    Ok(infer(params, &clip)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn sampling(r: usize) -> SamplingParams {
        SamplingParams {
            gamma: 1,
            windows: 4,
            alpha: 2,
            r,
        }
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            epochs,
            batch_size: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn augmentation_multiplies_the_dataset() {
        let data = synth_dataset(5, 10, 8, 8, 1);
        for r in 1..=3 {
            let items = augment(&data, &sampling(r), Sampler::default(), 0).unwrap();
            assert_eq!(items.len(), r * data.len());
        }
        let items = augment(&data, &sampling(1), Sampler::default(), 0).unwrap();
        for (item, lv) in items.iter().zip(&data) {
            assert_eq!(
                item.frames,
                first_sequence(&lv.video, &sampling(1)).unwrap()
            );
        }
    }

    #[test]
    fn short_videos_are_rejected_by_id() {
        let mut data = synth_dataset(3, 10, 8, 8, 1);
        data[1] = synth_dataset(1, 4, 8, 8, 2).remove(0);
        data[1].video.id = "too-short".into();
        let err = train(
            &data,
            &sampling(1),
            Sampler::default(),
            &CavtConfig::tiny(),
            &quick(1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("too-short"), "{err}");
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = synth_dataset(4, 10, 8, 8, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..quick(0)
        };
        let out = train(
            &data,
            &sampling(1),
            Sampler::default(),
            &CavtConfig::tiny(),
            &cfg,
        )
        .unwrap();
        assert!(out.log.is_empty());
        let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
        assert_eq!(
            out.params,
            CavtParams::init(&CavtConfig::tiny(), &mut init_rng).unwrap()
        );
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let data = synth_dataset(4, 10, 8, 8, 1);
        let a = train(
            &data,
            &sampling(2),
            Sampler::Random,
            &CavtConfig::tiny(),
            &quick(2),
        )
        .unwrap();
        let b = train(
            &data,
            &sampling(2),
            Sampler::Random,
            &CavtConfig::tiny(),
            &quick(2),
        )
        .unwrap();
        assert_eq!(format_loss_log(&a.log), format_loss_log(&b.log));
        assert_eq!(a.log.len(), 6);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn max_steps_caps_training() {
        let data = synth_dataset(4, 10, 8, 8, 1);
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..quick(10)
        };
        let out = train(
            &data,
            &sampling(2),
            Sampler::default(),
            &CavtConfig::tiny(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.log.len(), 3);
        assert_eq!(out.log.last().unwrap().step, 3);
    }

    #[test]
    fn prediction_uses_the_first_sequence() {
        let data = synth_dataset(2, 10, 8, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = CavtParams::init(&CavtConfig::tiny(), &mut rng).unwrap();
        let v = &data[0].video;
        let manual = v.clip(&first_sequence(v, &sampling(1)).unwrap()).unwrap();
        assert_eq!(
            predict(v, &sampling(3), &params).unwrap(),
            infer(&params, &manual).unwrap()
        );
    }

    #[test]
    fn constant_model_predicts_the_same_everywhere() {
        let data = synth_dataset(4, 10, 8, 8, 3);
        let params = CavtParams::zeros(&CavtConfig::tiny()).unwrap();
        for lv in &data {
            assert_eq!(predict(&lv.video, &sampling(1), &params).unwrap(), 0.5);
        }
    }

    #[test]
    fn sequence_length_must_match_model() {
        let data = synth_dataset(2, 10, 8, 8, 3);
        let s = SamplingParams {
            windows: 3,
            ..sampling(1)
        };
        assert!(train(
            &data,
            &s,
            Sampler::default(),
            &CavtConfig::tiny(),
            &quick(1)
        )
        .is_err());
    }
}
