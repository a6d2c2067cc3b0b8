mod common;

use diffir::data::{Batch, Task};
use diffir::denoiser::Backprop;
use diffir::model::{self, ModelConfig};
use diffir::params::ParamStore;
use diffir::schedule::NoiseSchedule;
use diffir::training::{self, Mode, Stage2Draw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

struct Setup {
    model: ModelConfig,
    params: ParamStore,
    batch: Batch,
    schedule: NoiseSchedule,
}

fn setup(task: Task) -> Setup {
    let model = common::toy_model(task);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s1 = ParamStore::from_specs(&model.specs_s1(), &mut rng);
    let params = common::randomize(&model::init_stage2(&model, &s1, &mut rng).unwrap(), 12, 0.15);
    let samples = common::samples(task, 2, 8, 5);
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());
    Setup {
        model,
        params,
        batch,
        schedule: NoiseSchedule::default_four_step(),
    }
}

fn assert_groups(results: &[(String, autograd::gradcheck::GradCheck)], expect: &[&str]) {
    let groups = common::worst_by_group(results);
    for g in expect {
        assert!(groups.iter().any(|(n, _, _)| n == g), "group {g} not checked: {groups:?}");
    }
    for (name, c) in results {
        assert!(c.max_rel_err <= TOL, "{name}: rel err {} (abs {})", c.max_rel_err, c.max_abs_err);
    }
    // something must actually flow into every group
    for (g, _, n) in &groups {
        assert!(*n > 0, "{g}");
    }
}

fn stage2_check(mode: Mode, task: Task) -> Vec<(String, autograd::gradcheck::GradCheck)> {
    let st = setup(task);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draw = Stage2Draw::sample(&mut rng, &st.schedule, mode, st.batch.len(), st.model.cpen.ipr_len());
    let loss: &common::LossFn = &|tape, b| {
        training::stage2_graph(tape, b, &st.model, &st.schedule, &st.batch, mode, Backprop::Full, &draw)
            .unwrap()
            .total
    };
    common::check_param_grads(&st.params, &|n| mode.trains(n), loss, 4)
}

#[test]
fn joint_objective_through_all_reverse_steps() {
    let r = stage2_check(Mode::V3Joint, Task::Inpainting);
    assert_groups(&r, &["cpen_s2", "denoiser", "dirformer"]);
    // every trainable tensor reached the loss
    let nonzero = r.iter().filter(|(_, c)| c.max_abs_err.is_finite()).count();
    assert_eq!(nonzero, r.len());
}

#[test]
fn joint_objective_with_injected_noise() {
    let r = stage2_check(Mode::V4JointNoise, Task::Deblur);
    assert_groups(&r, &["cpen_s2", "denoiser", "dirformer"]);
}

#[test]
fn condition_only_objective() {
    let r = stage2_check(Mode::V1NoDm, Task::Sr);
    assert_groups(&r, &["cpen_s2", "dirformer"]);
}

#[test]
fn noise_prediction_objective() {
    let r = stage2_check(Mode::V2Traditional, Task::Inpainting);
    assert_groups(&r, &["cpen_s2", "denoiser"]);
}

#[test]
fn stage1_objective() {
    let st = setup(Task::Inpainting);
    let loss: &common::LossFn = &|t, b| training::stage1_graph(t, b, &st.model, &st.batch).unwrap();
    let r = common::check_param_grads(&st.params, &training::trains_in_stage1, loss, 4);
    assert_groups(&r, &["cpen_s1", "dirformer"]);
}



