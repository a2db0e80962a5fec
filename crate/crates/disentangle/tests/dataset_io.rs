use std::fs;

use disentangle::dataset_io::{dataset_from_bytes, dataset_to_bytes, load_dataset, load_image_folder, save_dataset};
use disentangle::AppError;
use disentangle_core::{generate_synthetic_dataset, SyntheticSpec};

fn write_png(path: &std::path::Path, value: u8) {
    image::GrayImage::from_pixel(20, 12, image::Luma([value])).save(path).unwrap();
}

#[test]
fn folder_labels_follow_sorted_class_names() {
    let dir = tempfile::tempdir().unwrap();
    for (class, v) in [("happy", 200u8), ("angry", 50)] {
        fs::create_dir(dir.path().join(class)).unwrap();
        for k in 0..3 {
            write_png(&dir.path().join(class).join(format!("{k}.png")), v);
        }
    }
    let load = load_image_folder(dir.path(), 16, 1, None).unwrap();
    assert_eq!(load.class_names, ["angry", "happy"]);
    assert_eq!(load.skipped, 0);
    let ds = load.dataset;
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.exp_labels(), [0, 0, 0, 1, 1, 1]);
    assert!(ds.id_labels().iter().all(|&i| i == 0));
    assert_eq!(ds.samples[0].image.len(), 16 * 16);
    assert!((ds.samples[0].image[0] - 50.0 / 255.0).abs() < 1e-12);
}

#[test]
fn non_images_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("a")).unwrap();
    write_png(&dir.path().join("a/x.png"), 1);
    fs::write(dir.path().join("a/notes.txt"), "hello").unwrap();
    let load = load_image_folder(dir.path(), 16, 3, None).unwrap();
    assert_eq!(load.skipped, 1);
    assert_eq!(load.dataset.len(), 1);
    assert_eq!(load.dataset.samples[0].image.len(), 16 * 16 * 3);
}

#[test]
fn empty_layouts_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_image_folder(dir.path(), 16, 1, None), Err(AppError::Config(_))));
    fs::create_dir(dir.path().join("empty")).unwrap();
    assert!(matches!(load_image_folder(dir.path(), 16, 1, None), Err(AppError::Config(_))));
    assert!(matches!(load_image_folder(&dir.path().join("missing"), 16, 1, None), Err(AppError::DatasetNotFound(_))));
}

#[test]
fn identity_label_file_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("a")).unwrap();
    write_png(&dir.path().join("a/p.png"), 1);
    write_png(&dir.path().join("a/q.png"), 2);
    let ids = dir.path().join("ids.csv");
    fs::write(&ids, "a/p.png,0\na/q.png,2\n").unwrap();
    let ds = load_image_folder(dir.path(), 16, 1, Some(&ids)).unwrap().dataset;
    assert_eq!(ds.id_labels(), [0, 2]);
    assert_eq!(ds.n_id_classes, 3);
}

#[test]
fn cache_round_trip_and_damage() {
    let spec = SyntheticSpec { image_size: 16, samples_per_combo: 2, ..SyntheticSpec::default() };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);

    let bytes = dataset_to_bytes(&ds);
    assert!(matches!(dataset_from_bytes(&bytes[..bytes.len() / 2]), Err(AppError::DatasetLoad { .. })));
    let mut wrong = bytes.clone();
    wrong[8] = 2;
    assert!(dataset_from_bytes(&wrong).unwrap_err().to_string().contains("version 2"));
    assert!(matches!(load_dataset(&dir.path().join("none.bin")), Err(AppError::DatasetNotFound(_))));
}
