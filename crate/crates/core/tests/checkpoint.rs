mod common;

use std::fs;
use std::path::Path;

use diffir::data::{Batch, Task};
use diffir::model;
use diffir::params::ParamStore;
use diffir::rng::{self, Purpose};
use diffir::training::checkpoint::{round_to_f32, MANIFEST_FILE, WEIGHTS_FILE};
use diffir::training::{self, Checkpoint, Mode, Stage, TrainConfig};
use diffir::Error;
use sha2::{Digest, Sha256};

fn toy_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        patch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn trained(steps: u64) -> Checkpoint {
    let model = common::toy_model(Task::Inpainting);
    let data = common::samples(Task::Inpainting, 6, 8, 3);
    training::pretrain_stage1(&toy_cfg(steps), &model, &data, &mut |_| Ok(()))
        .unwrap()
        .checkpoint
}

fn read_dir_bytes(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (
        fs::read(dir.join(MANIFEST_FILE)).unwrap(),
        fs::read(dir.join(WEIGHTS_FILE)).unwrap(),
    )
}

#[test]
fn save_load_save_is_byte_identical() {
    let ck = trained(3);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ck.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&b).unwrap();
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
}

#[test]
fn manifest_describes_the_blob() {
    let ck = trained(1);
    let tmp = tempfile::tempdir().unwrap();
    ck.save(tmp.path()).unwrap();
    let (manifest, blob) = read_dir_bytes(tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(v["version"], 1);
    let digest: String = Sha256::digest(&blob).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(v["checksum"], format!("sha256:{digest}"));
    let mut end = 0;
    for (rec, (name, t)) in v["tensors"].as_array().unwrap().iter().zip(ck.params.iter()) {
        assert_eq!(rec["name"], name.as_str());
        assert_eq!(rec["dtype"], "f32");
        assert_eq!(rec["offset"].as_u64().unwrap(), end);
        let len = rec["length"].as_u64().unwrap();
        assert_eq!(len, 4 * t.len() as u64);
        let off = end as usize;
        let first = f32::from_le_bytes(blob[off..off + 4].try_into().unwrap());
        assert_eq!(first as f64, t.data()[0]);
        end += len;
    }
    assert_eq!(end, blob.len() as u64);
    assert_eq!(v["stage"], "s1");
    assert_eq!(v["step"], 1);
}

#[test]
fn corrupted_byte_fails_checksum() {
    let tmp = tempfile::tempdir().unwrap();
    trained(1).save(tmp.path()).unwrap();
    let path = tmp.path().join(WEIGHTS_FILE);
    let mut blob = fs::read(&path).unwrap();
    blob[17] ^= 0x40;
    fs::write(&path, blob).unwrap();
    assert!(matches!(Checkpoint::load(tmp.path()), Err(Error::Checksum { .. })));
}

/// Rewrites the manifest checksum so that only the extent check can fail.
fn truncate_consistently(dir: &Path, keep: usize) {
    let path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&path).unwrap();
    let blob = &blob[..keep];
    fs::write(&path, blob).unwrap();
    let mpath = dir.join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
    let digest: String = Sha256::digest(blob).iter().map(|b| format!("{b:02x}")).collect();
    v["checksum"] = format!("sha256:{digest}").into();
    fs::write(&mpath, serde_json::to_vec(&v).unwrap()).unwrap();
}

#[test]
fn truncated_blob_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    trained(1).save(tmp.path()).unwrap();
    // plain truncation trips the checksum first
    let path = tmp.path().join(WEIGHTS_FILE);
    let blob = fs::read(&path).unwrap();
    fs::write(&path, &blob[..blob.len() - 4]).unwrap();
    assert!(Checkpoint::load(tmp.path()).is_err());
    truncate_consistently(tmp.path(), blob.len() - 8);
    assert!(matches!(Checkpoint::load(tmp.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn unknown_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    trained(1).save(tmp.path()).unwrap();
    let mpath = tmp.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
    v["version"] = 2.into();
    fs::write(&mpath, serde_json::to_vec(&v).unwrap()).unwrap();
    assert!(matches!(Checkpoint::load(tmp.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_files_are_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let err = Checkpoint::load(&tmp.path().join("nothing")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn zero_steps_is_the_initialization() {
    let ck = trained(0);
    let model = common::toy_model(Task::Inpainting);
    let init = ParamStore::from_specs(&model.specs_s1(), &mut rng::stream(7, Purpose::Init, 1));
    assert_eq!(ck.params, round_to_f32(&init));
    assert_eq!(ck.step, 0);
}

#[test]
fn reload_gives_identical_forward_pass() {
    let ck = trained(2);
    let tmp = tempfile::tempdir().unwrap();
    ck.save(tmp.path()).unwrap();
    let loaded = Checkpoint::load(tmp.path()).unwrap();
    let samples = common::samples(Task::Inpainting, 2, 8, 9);
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());
    let m = &ck.config.model;
    let a = model::restore_s1(&ck.params, m, &batch.input, batch.mask.as_ref(), &batch.gt).unwrap();
    let b = model::restore_s1(&loaded.params, m, &batch.input, batch.mask.as_ref(), &batch.gt).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn stage2_init_copies_stage1_weights() {
    let ck = trained(2);
    let model = &ck.config.model;
    let p = model::init_stage2(model, &ck.params, &mut rng::stream(1, Purpose::Init, 2)).unwrap();
    for (name, t) in ck.params.iter() {
        assert_eq!(p.get(name), Some(t), "{name}");
    }
    let fresh = model::init_stage2(model, &ck.params, &mut rng::stream(2, Purpose::Init, 2)).unwrap();
    let mut denoiser = 0;
    for (name, t) in p.iter().filter(|(n, _)| n.starts_with("denoiser.")) {
        denoiser += 1;
        assert!(!ck.params.contains(name));
        // weights come from the rng, not from stage 1
        if name.ends_with("weight") {
            assert_ne!(fresh.get(name), Some(t), "{name}");
        }
    }
    assert!(denoiser > 0);
    for (name, t) in p.iter().filter(|(n, _)| n.starts_with("cpen_s2.")) {
        let twin = ck.params.get(&name.replacen("cpen_s2", "cpen_s1", 1)).unwrap();
        if name == "cpen_s2.stem.weight" {
            assert_ne!(t.shape(), twin.shape());
        } else if !name.starts_with("cpen_s2.stem.") {
            assert_eq!(t, twin, "{name}");
        }
    }
}

#[test]
fn stage2_records_mode_and_schedule() {
    let ck1 = trained(1);
    let data = common::samples(Task::Inpainting, 4, 8, 3);
    let cfg = TrainConfig {
        stage: Stage::S2,
        mode: Some(Mode::V4JointNoise),
        timesteps: 2,
        ..toy_cfg(1)
    };
    let ck2 = training::train_stage2(&cfg, &ck1, &data, &mut |_| Ok(())).unwrap().checkpoint;
    let tmp = tempfile::tempdir().unwrap();
    ck2.save(tmp.path()).unwrap();
    let back = Checkpoint::load(tmp.path()).unwrap();
    assert_eq!(back.stage, Stage::S2);
    assert_eq!(back.mode, Some(Mode::V4JointNoise));
    assert_eq!(back.schedule.as_ref().unwrap().steps(), 2);
    assert!(training::train_stage2(&cfg, &ck2, &data, &mut |_| Ok(())).is_err());
}
