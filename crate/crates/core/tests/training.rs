use tgan_core::data::{synthesize, DataConfig};
use tgan_core::lipschitz::{certify, ClipReport};
use tgan_core::model::{is_discriminator, is_generator, Model, ModelConfig};
use tgan_core::train::{ClipKind, LossKind, MetricRecord, TrainConfig, TrainObserver, Trainer};
use tgan_core::{Error, Result};

#[derive(Default)]
struct Log {
    records: Vec<MetricRecord>,
    clips: Vec<u64>,
    worst_k: f64,
    checkpoints: Vec<u64>,
}

impl TrainObserver<f64> for Log {
    fn on_record(&mut self, r: &MetricRecord) -> Result<()> {
        self.records.push(r.clone());
        Ok(())
    }

    fn on_clip(&mut self, iter: u64, report: &ClipReport) -> Result<()> {
        self.clips.push(iter);
        assert!(report.worst() <= 1.0 + 1e-6);
        Ok(())
    }

    fn on_checkpoint(&mut self, iter: u64, model: &Model<f64>) -> Result<()> {
        self.checkpoints.push(iter);
        let k = certify(&model.store, is_discriminator)?.k;
        self.worst_k = self.worst_k.max(k);
        Ok(())
    }
}

fn data(labeled: bool) -> tgan_core::data::ClipSet<f64> {
    let c = DataConfig { clip_len: 6, frames: 4, radius: 2, labeled, ..DataConfig::new(12, 8, 1) };
    synthesize(&c).unwrap()
}

fn tiny() -> Model<f64> {
    Model::build(ModelConfig::preset("tiny").unwrap(), 2).unwrap()
}

#[test]
fn clipping_schedule_and_update_counts() {
    let cfg = TrainConfig { batch_size: 2, checkpoint_every: 10, ..TrainConfig::new(30) };
    let mut t = Trainer::new(cfg, tiny()).unwrap();
    let mut log = Log::default();
    let s = t.run(&data(false), &mut log).unwrap();
    assert_eq!(s.clip_events, [1, 6, 11, 16, 21, 26]);
    assert_eq!(log.clips, s.clip_events);
    assert_eq!((s.critic_updates, s.generator_updates), (30, 30));
    let iters: Vec<u64> = log.records.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (1..=30).collect::<Vec<_>>());
    assert!(log.records.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
    assert!(log.records.iter().all(|r| r.max_sigma.is_some() == s.clip_events.contains(&r.iter)));
    assert_eq!(log.checkpoints, [10, 20, 30]);
}

#[test]
fn several_critic_steps_per_iteration() {
    let cfg = TrainConfig { batch_size: 2, n_critic: 3, n_clip: 1, ..TrainConfig::new(4) };
    let mut t = Trainer::new(cfg, tiny()).unwrap();
    let s = t.run(&data(false), &mut Log::default()).unwrap();
    assert_eq!((s.critic_updates, s.generator_updates), (12, 4));
    assert_eq!(s.clip_events, [1, 2, 3, 4]);
    assert!(certify(&t.model.store, is_discriminator).unwrap().k <= 1.0 + 1e-5);
}

#[test]
fn runs_replay_from_the_seed() {
    let run = || {
        let cfg = TrainConfig { batch_size: 2, seed: 5, ..TrainConfig::new(6) };
        let mut t = Trainer::new(cfg, tiny()).unwrap();
        let mut log = Log::default();
        t.run(&data(false), &mut log).unwrap();
        (log.records, t.model.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn weight_clipping_boxes_the_critic() {
    let cfg = TrainConfig { batch_size: 2, clip: ClipKind::Weight, clip_bound: 0.05, ..TrainConfig::new(3) };
    let mut t = Trainer::new(cfg, tiny()).unwrap();
    let s = t.run(&data(false), &mut Log::default()).unwrap();
    assert!(s.clip_events.is_empty());
    for (name, w) in t.model.store.iter() {
        if is_discriminator(name) && tgan_core::model::is_trainable(name) {
            assert!(w.data().iter().all(|v| v.abs() <= 0.05), "{name}");
        }
    }
}

#[test]
fn gan_loss_leaves_critic_gamma_fixed() {
    let cfg = TrainConfig { batch_size: 2, loss: LossKind::Gan, clip: ClipKind::None, ..TrainConfig::new(3) };
    let before = tiny();
    let mut t = Trainer::new(cfg, before.clone()).unwrap();
    t.run(&data(false), &mut Log::default()).unwrap();
    for (name, w) in t.model.store.iter() {
        let old = before.store.get(name).unwrap();
        if name.starts_with("d.") && name.ends_with(".gamma") {
            assert_eq!(w, old);
        }
        if is_generator(name) && name.ends_with(".w") {
            assert_ne!(w, old, "{name} did not train");
        }
    }
}

#[test]
fn conditional_training() {
    let cfg = TrainConfig { batch_size: 3, ..TrainConfig::new(5) };
    let model = Model::build(ModelConfig::preset("tiny").unwrap().with_categories(3), 4).unwrap();
    let mut t = Trainer::new(cfg.clone(), model).unwrap();
    t.run(&data(true), &mut Log::default()).unwrap();
    // Category counts must agree.
    let mut t = Trainer::new(cfg, tiny()).unwrap();
    assert!(t.run(&data(true), &mut Log::default()).is_err());
}

#[test]
fn divergence_is_reported() {
    struct Watch(Option<u64>);
    impl TrainObserver<f64> for Watch {
        fn on_divergence(&mut self, iter: u64, _: &Model<f64>) -> Result<()> {
            self.0 = Some(iter);
            Ok(())
        }
    }
    let mut model = tiny();
    for v in model.store.get_mut("d.0.w").unwrap().data_mut() {
        *v = f64::NAN;
    }
    let mut t = Trainer::new(TrainConfig { batch_size: 2, ..TrainConfig::new(3) }, model).unwrap();
    let mut w = Watch(None);
    assert!(matches!(t.run(&data(false), &mut w), Err(Error::Divergence { iter: 1, .. })));
    assert_eq!(w.0, Some(1));
}

#[test]
fn config_validation() {
    for bad in [
        TrainConfig { n_critic: 0, ..TrainConfig::new(1) },
        TrainConfig { n_clip: 0, ..TrainConfig::new(1) },
        TrainConfig { clip_bound: 0.0, ..TrainConfig::new(1) },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::new(1) },
        TrainConfig { noise_sigma: -0.1, ..TrainConfig::new(1) },
        TrainConfig { batch_size: 1, ..TrainConfig::new(1) },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"iterations": 3, "bogus": 1}"#);
    assert!(parsed.is_err());
}
