//! Mini-batch Adam training of the restoration network.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{RngStream, Stream};

use super::adam::{adam_step, AdamState, TrainConfig};
use super::augment::TrainingPatch;
use super::conv::Volume;
use super::model::{ChannelPlan, CnnModel, Gradients};

/// Fisher-Yates permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, epoch: usize, rng: &RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut cur = rng.cursor(Stream::Shuffle, epoch as u64, 0);
    for i in (1..n).rev() {
        let j = cur.below(i + 1);
        order.swap(i, j);
    }
    order
}

/// Train a freshly initialised model. See [`train_from`].
pub fn train(
    dataset: &[TrainingPatch],
    plan: ChannelPlan,
    cfg: &TrainConfig,
    rng: &RngStream,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(CnnModel, Vec<f64>)> {
    let model = CnnModel::init(plan, rng)?;
    train_from(model, dataset, cfg, rng, on_epoch)
}

/// Continue training `model` for `cfg.epochs` epochs and return it with the
/// mean per-sample loss of each epoch (measured before each batch's update).
/// `on_epoch` receives the 1-based epoch and its mean loss.
pub fn train_from(
    mut model: CnnModel,
    dataset: &[TrainingPatch],
    cfg: &TrainConfig,
    rng: &RngStream,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(CnnModel, Vec<f64>)> {
    cfg.validate()?;
    model.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty dataset".into()));
    }
    let volumes: Vec<(Volume, Volume)> = dataset.iter().map(|p| (p.input.to_volume(), p.target.to_volume())).collect();
    let mut state = AdamState::new(&model);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(dataset.len(), epoch, rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<(f64, Gradients)>> =
                batch.par_iter().map(|&i| model.backward(&volumes[i].0, &volumes[i].1)).collect();
            let mut grads = Gradients::zeros_like(&model);
            let scale = 1.0 / batch.len() as f32;
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += loss;
                grads.add_scaled(&g, scale);
            }
            adam_step(&mut state, &mut model, &grads, cfg);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || model.params().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok((model, curve))
}

pub fn write_loss_curve(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_mse"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::augment::Patch;

    fn smooth_patch(k: usize) -> Patch {
        let e = 6;
        let mut data = Vec::new();
        for x in 0..e {
            for y in 0..e {
                for z in 0..e {
                    let d = (x as f32 - 2.5 - k as f32 * 0.3).powi(2) + (y as f32 - 2.5).powi(2) + (z as f32 - 2.0).powi(2);
                    data.push((-d / 6.0).exp());
                }
            }
        }
        Patch::new([e; 3], data).unwrap()
    }

    fn toy_dataset() -> Vec<TrainingPatch> {
        (0..6)
            .map(|k| {
                let target = smooth_patch(k);
                let input = crate::neural::augment::gaussian_blur(&target, 1.0);
                TrainingPatch { input, target }
            })
            .collect()
    }

    #[test]
    fn shuffles_are_permutations() {
        let r = RngStream::new(4);
        let mut o = epoch_order(37, 2, &r);
        assert_ne!(o, epoch_order(37, 3, &r));
        o.sort();
        assert_eq!(o, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn identity_model_on_clean_pairs_stays_at_zero_loss() {
        let data: Vec<TrainingPatch> =
            (0..4).map(|k| TrainingPatch { input: smooth_patch(k), target: smooth_patch(k) }).collect();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let m = CnnModel::identity(ChannelPlan::TINY).unwrap();
        let (_, curve) = train_from(m, &data, &cfg, &RngStream::new(1), |_, _| {}).unwrap();
        assert!(curve[0] < 1e-12, "{curve:?}");
        assert!(curve.iter().all(|l| *l <= curve[0] + 1e-12));
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let data = toy_dataset();
        let cfg = TrainConfig { epochs: 40, lr: 3e-3, ..TrainConfig::default() };
        let plan = ChannelPlan([1, 4, 4, 4, 4, 4, 1]);
        let rng = RngStream::new(11);
        let mut seen = Vec::new();
        let (m1, c1) = train(&data, plan, &cfg, &rng, |e, l| seen.push((e, l))).unwrap();
        assert!(c1.last().unwrap() < &(0.5 * c1[0]), "{c1:?}");
        assert_eq!(seen.len(), 40);
        assert_eq!(seen[0].0, 1);
        let (m2, c2) = train(&data, plan, &cfg, &rng, |_, _| {}).unwrap();
        assert_eq!(c1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(m1, m2);
    }

    #[test]
    fn diverging_training_reports_the_epoch() {
        let mut data = toy_dataset();
        data[0].target.data[0] = f32::INFINITY;
        let err = train(&data, ChannelPlan::TINY, &TrainConfig::default(), &RngStream::new(1), |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1 }), "{err}");
        assert!(train(&[], ChannelPlan::TINY, &TrainConfig::default(), &RngStream::new(1), |_, _| {}).is_err());
    }

    #[test]
    fn loss_curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss_curve.csv");
        write_loss_curve(&[0.5, 0.25], &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next(), Some("epoch,mean_mse"));
        assert_eq!(text.lines().count(), 3);
    }
}
