use std::sync::Arc;

use dictseg::phantom::{self, TextureParams};
use dictseg::prelude::*;
use dictseg::transfer::{ModelMetadata, StackOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn texture_session(seed: u64) -> (PixelGrid, Segmenter, UserMarking) {
    let p = phantom::two_texture(&TextureParams { width: 48, height: 40, seed, ..Default::default() }).unwrap();
    let config = DictionaryConfig {
        patch_size: 5,
        tree: TreeParams { branching: 3, layers: 2, iterations: 4, seed },
        subsample: Subsample::All,
        ..Default::default()
    };
    let seg = Segmenter::build(&p.image, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marks = UserMarking::new(p.truth.len(), 2).unwrap();
    for _ in 0..40 {
        let i = rng.random_range(0..p.truth.len());
        marks.set(i, p.truth[i] as usize).unwrap();
    }
    (p.image, seg, marks)
}

fn train(seg: &Segmenter, marks: &UserMarking, opts: &UpdateOptions) -> (ProbabilityStack, TrainedModel) {
    let result = seg.update(marks, opts).unwrap();
    let model = TrainedModel::train(
        Arc::clone(seg.tree()),
        seg.transforms(),
        &result.final_labels,
        ModelMetadata::default(),
    )
    .unwrap();
    (result.probabilities, model)
}

#[test]
fn training_image_reproduces_single_step_probabilities() {
    for seed in 0..3 {
        let (image, seg, marks) = texture_session(seed);
        let (p, model) = train(&seg, &marks, &UpdateOptions::single_step());
        let q = apply_to_image(&image, &model).unwrap();
        assert!(p.max_abs_diff(&q) <= 1e-12);
    }
}

#[test]
fn training_image_reproduces_two_step_probabilities() {
    let (image, seg, marks) = texture_session(5);
    let (p, model) = train(&seg, &marks, &UpdateOptions::default());
    let q = apply_to_image(&image, &model).unwrap();
    assert!(p.max_abs_diff(&q) <= 1e-12);
}

#[test]
fn model_bytes_round_trip() {
    let (image, seg, marks) = texture_session(1);
    let (_, model) = train(&seg, &marks, &UpdateOptions::default());
    let bytes = model.to_bytes();
    let back = TrainedModel::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes(), bytes);
    let a = apply_to_image(&image, &model).unwrap();
    let b = apply_to_image(&image, &back).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dsm");
    model.save(&path).unwrap();
    assert_eq!(TrainedModel::load(&path).unwrap(), model);
}

#[test]
fn truncated_model_is_rejected() {
    let (_, seg, marks) = texture_session(2);
    let (_, model) = train(&seg, &marks, &UpdateOptions::single_step());
    let bytes = model.to_bytes();
    for cut in [0, 7, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(TrainedModel::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn identical_slices_give_identical_outputs() {
    let (image, seg, marks) = texture_session(3);
    let (_, model) = train(&seg, &marks, &UpdateOptions::default());
    let stack = vec![image.clone(), image.clone(), image];
    let out = apply_to_stack(&stack, &model, &StackOptions::default(), &|_, _| {}).unwrap();
    assert_eq!(out.probabilities[0], out.probabilities[1]);
    assert_eq!(out.probabilities[1], out.probabilities[2]);
    assert_eq!(out.labels.depth(), 3);
    assert_eq!(out.labels.slice(0), out.labels.slice(2));
}

#[test]
fn mismatched_slice_is_reported_by_index() {
    let (image, seg, marks) = texture_session(4);
    let (_, model) = train(&seg, &marks, &UpdateOptions::default());
    let odd = PixelGrid::constant(30, 30, 1, 0.5).unwrap();
    match apply_to_stack(&[image, odd], &model, &StackOptions::default(), &|_, _| {}) {
        Err(Error::Slice { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected a slice error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stack_equals_map_of_single_images(seed in 0u64..1000, depth in 1usize..4) {
        let (_, seg, marks) = texture_session(seed % 7);
        let (_, model) = train(&seg, &marks, &UpdateOptions::default());
        let slices: Vec<PixelGrid> = (0..depth)
            .map(|z| phantom::two_texture(&TextureParams { width: 48, height: 40, seed: seed + z as u64, ..Default::default() }).unwrap().image)
            .collect();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let out = apply_to_stack(&slices, &model, &StackOptions::default(), &|done, total| {
            assert!(done <= total);
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        }).unwrap();
        prop_assert_eq!(calls.into_inner(), depth);
        for (z, s) in slices.iter().enumerate() {
            let single = apply_to_image(s, &model).unwrap();
            prop_assert_eq!(&out.probabilities[z], &single);
            let labels = segment(&single, DEFAULT_EPSILON);
            prop_assert_eq!(out.labels.slice(z), labels.as_slice());
        }
    }
}
