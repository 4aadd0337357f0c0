use vmgp_core::baselines::{AlpacaConfig, DktConfig};
use vmgp_core::environments::{EnvId, TaskSampler};
use vmgp_core::tensor::Checkpoint;
use vmgp_core::training::{meta_train, seeded, MetaLearner, TrainConfig};
use vmgp_core::vmgp::VmgpConfig;
use vmgp_core::{AlpacaModel, DktModel, Matrix, VmgpModel};

fn small() -> TrainConfig {
    TrainConfig {
        iterations: 15,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn sampler() -> TaskSampler {
    TaskSampler::new("sin-standard".parse::<EnvId>().unwrap())
}

fn vmgp() -> VmgpModel {
    VmgpModel::new(VmgpConfig::default(), &mut seeded(0)).unwrap()
}

fn dkt() -> DktModel {
    DktModel::new(&DktConfig::default(), &mut seeded(0))
}

fn alpaca() -> AlpacaModel {
    AlpacaModel::new(&AlpacaConfig::default(), &mut seeded(0))
}

fn train<M: MetaLearner<f64>>(mut model: M, cfg: &TrainConfig) -> (Vec<f64>, Checkpoint) {
    let trace = meta_train(&mut model, &sampler(), cfg).unwrap();
    (trace, model.checkpoint())
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn training_is_bit_identical_across_runs_and_thread_counts() {
    let cfg = small();
    let a = in_pool(1, || train(vmgp(), &cfg));
    let b = in_pool(4, || train(vmgp(), &cfg));
    assert_eq!(a, b);
    assert_eq!(
        in_pool(1, || train(dkt(), &cfg)),
        in_pool(3, || train(dkt(), &cfg))
    );
    assert_eq!(
        in_pool(2, || train(alpaca(), &cfg)),
        in_pool(1, || train(alpaca(), &cfg))
    );

    let other = TrainConfig { seed: 1, ..cfg };
    assert_ne!(train(vmgp(), &other).0, a.0);
}

#[test]
fn zero_iterations_leave_parameters_untouched() {
    let cfg = TrainConfig {
        iterations: 0,
        ..small()
    };
    let fresh = vmgp().checkpoint();
    let (trace, ckpt) = train(vmgp(), &cfg);
    assert!(trace.is_empty());
    assert_eq!(ckpt, fresh);
}

#[test]
fn invalid_train_config_is_rejected() {
    let mut model = dkt();
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..small()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..small()
        },
        TrainConfig {
            jitter: -1.0,
            ..small()
        },
    ] {
        assert!(meta_train(&mut model, &sampler(), &cfg).is_err());
    }
}

fn roundtrip<M: MetaLearner<f64>>(trained: M, mut blank: M) {
    let json = serde_json::to_string(&trained.checkpoint()).unwrap();
    blank
        .load_checkpoint(&serde_json::from_str(&json).unwrap())
        .unwrap();
    let task = sampler().sample(&mut seeded(50));
    let draw = |m: &M| -> Matrix {
        m.predictive_samples(&task, 9, 1e-6, &mut seeded(51))
            .unwrap()
    };
    assert_eq!(draw(&trained), draw(&blank), "{}", trained.name());
}

#[test]
fn checkpoints_restore_trained_predictions() {
    let cfg = small();
    let mut m = vmgp();
    meta_train(&mut m, &sampler(), &cfg).unwrap();
    roundtrip(
        m,
        VmgpModel::new(VmgpConfig::default(), &mut seeded(9)).unwrap(),
    );
    let mut m = dkt();
    meta_train(&mut m, &sampler(), &cfg).unwrap();
    roundtrip(m, DktModel::new(&DktConfig::default(), &mut seeded(9)));
    let mut m = alpaca();
    meta_train(&mut m, &sampler(), &cfg).unwrap();
    roundtrip(
        m,
        AlpacaModel::new(&AlpacaConfig::default(), &mut seeded(9)),
    );
}

#[test]
fn checkpoint_with_missing_parameter_is_rejected() {
    let mut ckpt = dkt().checkpoint();
    let first = ckpt.keys().next().unwrap().clone();
    ckpt.remove(&first);
    assert!(dkt().load_checkpoint(&ckpt).is_err());
}
