mod common;

use diffir::data::{self, BatchIter, Degradation, Image, Task};
use proptest::prelude::*;

fn coverage(m: &Image) -> f64 {
    m.data.iter().sum::<f64>() / m.data.len() as f64
}

#[test]
fn corpus_contract() {
    let imgs = data::gen_corpus(1, 4, 64).unwrap();
    assert_eq!(imgs.len(), 4);
    for img in &imgs {
        assert_eq!((img.channels, img.height, img.width), (3, 64, 64));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(data::gen_corpus(1, 1, 12).is_err());
}

#[test]
fn corpus_is_seeded() {
    let a = data::gen_corpus(5, 6, 16).unwrap();
    assert_eq!(a, data::gen_corpus(5, 6, 16).unwrap());
    let b = data::gen_corpus(6, 6, 16).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.data.iter().zip(&y.data).any(|(p, q)| p != q));
    }
    // a prefix of a larger corpus is the smaller corpus
    assert_eq!(&data::gen_corpus(5, 9, 16).unwrap()[..6], &a[..]);
}

#[test]
fn mask_coverage_in_band() {
    let imgs = data::gen_corpus(2, 8, 32).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        for band in [(0.1, 0.3), (0.01, 0.1), (0.1, 0.4)] {
            let p = data::apply_mask(img, i as u64, band).unwrap();
            let m = p.mask.as_ref().unwrap();
            let c = coverage(m);
            assert!(c >= band.0 && c <= band.1, "{c} outside {band:?}");
            for y in 0..32 {
                for x in 0..32 {
                    let missing = m.at(0, y, x) == 1.0;
                    for ch in 0..3 {
                        let want = if missing { 0.0 } else { img.at(ch, y, x) };
                        assert_eq!(p.lq.at(ch, y, x), want);
                    }
                }
            }
        }
    }
}

#[test]
fn empty_mask_band_is_identity() {
    let img = &data::gen_corpus(3, 1, 16).unwrap()[0];
    let p = data::apply_mask(img, 0, (0.0, 0.0)).unwrap();
    assert_eq!(&p.lq, img);
    assert_eq!(coverage(p.mask.as_ref().unwrap()), 0.0);
}

#[test]
fn mask_is_seeded_and_bands_validated() {
    let img = &data::gen_corpus(3, 1, 16).unwrap()[0];
    let a = data::apply_mask(img, 42, (0.1, 0.3)).unwrap();
    assert_eq!(a, data::apply_mask(img, 42, (0.1, 0.3)).unwrap());
    assert_ne!(a.mask, data::apply_mask(img, 43, (0.1, 0.3)).unwrap().mask);
    assert!(data::apply_mask(img, 1, (0.3, 0.2)).is_err());
    assert!(data::apply_mask(img, 1, (0.5, 0.95)).is_err());
}

#[test]
fn blur_examples() {
    let img = &data::gen_corpus(4, 1, 16).unwrap()[0];
    assert_eq!(&data::apply_blur(img, 0, 1, 0.3).unwrap().lq, img);
    assert!(data::apply_blur(img, 0, 4, 0.3).is_err());

    let flat = Image::filled(3, 16, 16, 0.37);
    let out = data::apply_blur(&flat, 0, 7, 1.1).unwrap().lq;
    assert!(out.data.iter().all(|v| (v - 0.37).abs() < 1e-12));

    for (len, angle) in [(7, 0.0), (5, 0.6), (9, 2.3)] {
        let k = data::motion_kernel(len, angle).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut imp = Image::filled(1, 21, 21, 0.0);
        imp.set(0, 10, 10, 1.0);
        let out = data::apply_blur(&imp, 0, len, angle).unwrap().lq;
        let r = len / 2;
        for y in 0..21 {
            for x in 0..21 {
                let inside = y + r >= 10 && y <= 10 + r && x + r >= 10 && x <= 10 + r;
                let want = if inside { k[(y + r - 10) * len + (x + r - 10)] } else { 0.0 };
                assert!((out.at(0, y, x) - want).abs() < 1e-15, "({y},{x})");
            }
        }
    }
}

#[test]
fn horizontal_motion_kernel_is_a_line() {
    let k = data::motion_kernel(5, 0.0).unwrap();
    for y in 0..5 {
        for x in 0..5 {
            let want = if y == 2 { 0.2 } else { 0.0 };
            assert!((k[y * 5 + x] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn downsample_examples() {
    let img = &data::gen_corpus(5, 1, 64).unwrap()[0];
    let p = data::apply_downsample(img, 4).unwrap();
    assert_eq!((p.lq.height, p.lq.width), (16, 16));
    assert!(data::apply_downsample(&Image::filled(3, 18, 16, 0.0), 4).is_err());

    let flat = Image::filled(3, 64, 64, 0.61);
    let out = data::apply_downsample(&flat, 4).unwrap().lq;
    assert!(out.data.iter().all(|v| (v - 0.61).abs() <= 1e-6));

    // ramp along x: away from the borders every tap window is symmetric, so
    // the output samples the ramp at the output pixel centre 4o + 1.5
    let ramp = Image::from_fn(3, 64, 64, |_, _, x| x as f64 / 63.0);
    let out = data::apply_downsample(&ramp, 4).unwrap().lq;
    for y in 0..16 {
        for o in 2..14 {
            let want = (4.0 * o as f64 + 1.5) / 63.0;
            assert!((out.at(0, y, o) - want).abs() < 1e-3, "o={o}");
        }
    }
}

#[test]
fn sr_sample_is_upsampled_to_gt_size() {
    let s = &common::samples(Task::Sr, 1, 32, 1)[0];
    assert_eq!((s.input.height, s.input.width), (32, 32));
    let pairs = data::degrade_all(&data::gen_corpus(1, 1, 32).unwrap(), Task::Sr, 1, &Default::default()).unwrap();
    assert_eq!((pairs[0].lq.height, pairs[0].lq.width), (8, 8));
}

#[test]
fn provenance_regenerates_the_pair() {
    let imgs = data::gen_corpus(6, 3, 16).unwrap();
    for task in [Task::Inpainting, Task::Sr, Task::Deblur] {
        for p in data::degrade_all(&imgs, task, 9, &Default::default()).unwrap() {
            assert_eq!(p.provenance.apply(&p.gt).unwrap(), p);
        }
    }
    let id = Degradation::Identity.apply(&imgs[0]).unwrap();
    assert_eq!(id.lq, imgs[0]);
}

#[test]
fn batch_iter_is_reproducible_and_crops() {
    let samples = common::samples(Task::Inpainting, 5, 32, 2);
    let take = |seed| {
        let it = BatchIter::new(&samples, 3, 16, seed).unwrap();
        it.take(4).map(|b| b.gt.into_data()).collect::<Vec<_>>()
    };
    assert_eq!(take(1), take(1));
    assert_ne!(take(1), take(2));
    let b = BatchIter::new(&samples, 3, 16, 1).unwrap().next_batch();
    assert_eq!(b.gt.shape(), &[3, 3, 16, 16]);
    assert_eq!(b.input.shape(), &[3, 3, 16, 16]);
    assert_eq!(b.mask.unwrap().shape(), &[3, 1, 16, 16]);
    assert!(BatchIter::new(&samples, 3, 12, 1).is_err());
    assert!(BatchIter::new(&samples, 3, 40, 1).is_err());
    assert!(BatchIter::new(&[], 3, 16, 1).is_err());
}

#[test]
fn each_epoch_is_a_permutation() {
    // tag every sample by a constant ground-truth value
    let samples: Vec<data::Sample> = (0..7)
        .map(|i| {
            let img = Image::filled(3, 8, 8, i as f64 / 10.0);
            data::Sample {
                gt: img.clone(),
                input: img,
                mask: None,
            }
        })
        .collect();
    let mut it = BatchIter::new(&samples, 1, 8, 3).unwrap();
    let mut seen = Vec::new();
    for _ in 0..21 {
        seen.push((it.next_batch().gt.data()[0] * 10.0).round() as usize);
    }
    for epoch in seen.chunks(7) {
        let mut e = epoch.to_vec();
        e.sort();
        assert_eq!(e, (0..7).collect::<Vec<_>>());
    }
    assert_ne!(seen[..7], seen[7..14]);
}

#[test]
fn oversized_batch_spans_epochs() {
    let samples = common::samples(Task::Deblur, 3, 8, 1);
    let b = BatchIter::new(&samples, 5, 8, 0).unwrap().next_batch();
    assert_eq!(b.len(), 5);
}

#[test]
fn folder_and_corpus_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = data::gen_corpus(8, 3, 16).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        let ext = if i == 1 { "ppm" } else { "png" };
        data::save_image(&tmp.path().join(format!("img{i}.{ext}")), img).unwrap();
    }
    let back = data::load_folder(tmp.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in imgs.iter().zip(&back) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    let pairs = data::degrade_all(&back, Task::Inpainting, 4, &Default::default()).unwrap();
    let dir = tmp.path().join("corpus");
    data::write_corpus(&dir, &pairs, 4).unwrap();
    let index = std::fs::read_to_string(dir.join(data::INDEX_FILE)).unwrap();
    assert!(index.starts_with("file\tseed\tdegradation\n"));
    assert_eq!(index.lines().count(), 4);
    // 8-bit ground truths survive exactly, so every pair regenerates exactly
    assert_eq!(data::read_corpus(&dir).unwrap(), pairs);
    assert!(data::load_folder(&dir.join("missing")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn degradations_stay_in_range(seed in 0u64..1000, len in prop::sample::select(vec![3usize, 5, 7]), angle in 0.0f64..std::f64::consts::PI) {
        let img = &data::gen_corpus(seed, 1, 16).unwrap()[0];
        let blur = data::apply_blur(img, seed, len, angle).unwrap().lq;
        prop_assert!(blur.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let k = data::motion_kernel(len, angle).unwrap();
        for i in 0..k.len() {
            prop_assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
        let sr = data::apply_downsample(img, 4).unwrap().lq;
        prop_assert!(sr.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let m = data::apply_mask(img, seed, (0.01, 0.1)).unwrap();
        let c = coverage(m.mask.as_ref().unwrap());
        prop_assert!((0.01..=0.1).contains(&c));
    }
}
