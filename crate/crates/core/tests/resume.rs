use geonca::data::{synth_generate, MapSample, SynthConfig};
use geonca::trainer::{Checkpoint, TrainConfig, TrainSet, Trainer};
use geonca::ChannelLayout;

fn train_set<S: geonca::Scalar>() -> TrainSet<S> {
    let ds = synth_generate(&SynthConfig {
        seed: 9,
        per_location: 6,
        height: 14,
        width: 14,
        ..SynthConfig::default()
    })
    .unwrap();
    let refs: Vec<&MapSample> = ds.samples.iter().collect();
    TrainSet::from_samples(&refs, 4).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        steps: 6,
        batch_size: 3,
        pool_size: 6,
        hidden: 12,
        epochs: 6,
        ..TrainConfig::default()
    }
}

fn resumed_run_matches_uninterrupted<S: geonca::Scalar>() {
    let mut straight = Trainer::<S>::new(config(), ChannelLayout::default(), train_set()).unwrap();
    let straight_logs = straight.fit(|_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = Trainer::<S>::new(config(), ChannelLayout::default(), train_set()).unwrap();
    for _ in 0..3 {
        first.run_epoch().unwrap();
    }
    first.save_checkpoint(&path).unwrap();
    drop(first);

    let ckpt = Checkpoint::read(&path).unwrap();
    let mut second = Trainer::<S>::resume(&ckpt, train_set()).unwrap();
    let tail = second.fit(|_, _| Ok(())).unwrap();

    assert_eq!(second.epoch(), 6);
    assert_eq!(second.checkpoint_bytes(), straight.checkpoint_bytes());
    for (a, b) in tail.iter().zip(&straight_logs[3..]) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.tasks, b.tasks);
    }
}

#[test]
fn resume_is_bitwise_continuous_f32() {
    resumed_run_matches_uninterrupted::<f32>();
}

#[test]
fn resume_is_bitwise_continuous_f64() {
    resumed_run_matches_uninterrupted::<f64>();
}

#[test]
fn zero_epoch_checkpoint_holds_initial_parameters() {
    let cfg = TrainConfig { epochs: 0, ..config() };
    let t = Trainer::<f32>::new(cfg, ChannelLayout::default(), train_set()).unwrap();
    let ckpt = Checkpoint::from_bytes(&t.checkpoint_bytes()).unwrap();
    assert_eq!(ckpt.epoch, 0);
    assert_eq!(&ckpt.params::<f32>().unwrap(), t.params());
}
