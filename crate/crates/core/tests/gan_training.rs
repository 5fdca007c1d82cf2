use std::collections::BTreeMap;

use tsgan_core::data::{make_windows, ChannelSeries, WindowBatch};
use tsgan_core::gan::{train_gan, GanModel, GanTrainConfig, GanTrainer, NoHook};
use tsgan_core::nn::Parameters;
use tsgan_core::tensor::Tensor;

fn corpus() -> WindowBatch {
    let n = 400;
    let rain: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin().max(0.0)).collect();
    let flow: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.11).cos()).collect();
    let s = ChannelSeries {
        names: vec!["precipitation_mm".into(), "flow".into()],
        log1p: vec![false, true],
        values: vec![rain, flow],
    };
    make_windows(&s, 24, 1).unwrap()
}

fn tiny() -> GanTrainConfig {
    GanTrainConfig {
        generator_layers: 1,
        generator_hidden: 6,
        critic_layers: 1,
        critic_hidden: 5,
        batch_size: 8,
        total_generator_steps: 4,
        eval_every: 2,
        eval_samples: 16,
        seed: 21,
        ..Default::default()
    }
}

fn snapshot<M: Parameters>(m: &M) -> Vec<Tensor> {
    m.params().into_iter().cloned().collect()
}

fn same(a: &[Tensor], b: &[Tensor]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

fn trainer(data: &WindowBatch) -> GanTrainer {
    let token = tsgan_core::data::compute_start_token(data).unwrap();
    GanTrainer::new(GanModel::new(tiny(), data.channels().to_vec(), token).unwrap())
}

#[test]
fn updates_touch_only_their_own_network() {
    let data = corpus();
    let mut t = trainer(&data);
    let (g0, c0) = (snapshot(&t.model.generator), snapshot(&t.model.critic));
    t.critic_step(&data).unwrap();
    assert!(same(&g0, &snapshot(&t.model.generator)));
    assert!(!same(&c0, &snapshot(&t.model.critic)));
    let c1 = snapshot(&t.model.critic);
    t.generator_step().unwrap();
    assert!(same(&c1, &snapshot(&t.model.critic)));
    assert!(!same(&g0, &snapshot(&t.model.generator)));
}

#[test]
fn critic_updates_are_five_per_generator_step() {
    let (model, log) = train_gan(tiny(), &corpus(), &mut NoHook).unwrap();
    assert_eq!(model.generator_steps, 4);
    assert_eq!(model.critic_updates, 20);
    assert_eq!(log.entries().len(), 4);
    assert_eq!(log.jsd_curve().iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4]);
}

#[test]
fn rerun_reproduces_log_bit_exactly() {
    let (_, a) = train_gan(tiny(), &corpus(), &mut NoHook).unwrap();
    let (_, b) = train_gan(tiny(), &corpus(), &mut NoHook).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn resume_from_state_matches_uninterrupted_run() {
    let data = corpus();
    let mut straight = trainer(&data);
    straight.run(&data, 4, &mut NoHook).unwrap();

    let mut first = trainer(&data);
    first.run(&data, 2, &mut NoHook).unwrap();
    let state: BTreeMap<String, Tensor> = first.model.state_tensors().into_iter().collect();
    let model = GanModel::from_state(tiny(), data.channels().to_vec(), &state).unwrap();
    let mut resumed = GanTrainer::new(model);
    resumed.run(&data, 2, &mut NoHook).unwrap();

    assert!(same(&snapshot(&straight.model.generator), &snapshot(&resumed.model.generator)));
    assert!(same(&snapshot(&straight.model.critic), &snapshot(&resumed.model.critic)));
    assert_eq!(straight.model.critic_updates, resumed.model.critic_updates);
}

#[test]
fn generation_is_seeded_and_tagged_synthetic() {
    let (model, _) = train_gan(tiny(), &corpus(), &mut NoHook).unwrap();
    let a = model.generate(300, 4).unwrap();
    let b = model.generate(300, 4).unwrap();
    assert_eq!(a.data().shape(), &[300, 24, 2]);
    assert!(a.data().bit_eq(b.data()));
    assert!(!a.data().bit_eq(model.generate(300, 5).unwrap().data()));
    assert!(a.provenance().iter().all(|p| p.as_str() == "synthetic"));
}

#[test]
fn empty_or_mismatched_data_is_rejected() {
    let data = corpus();
    let mut t = trainer(&data);
    let empty = WindowBatch::empty(24, data.channels().to_vec());
    assert!(t.train_step(&empty, &mut NoHook).is_err());
    let bad = GanTrainConfig { lambda_gp: 0.0, ..tiny() };
    assert!(train_gan(bad, &data, &mut NoHook).is_err());
}
