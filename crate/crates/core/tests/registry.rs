mod common;

use std::fs;

use pitune_core::registry::TaskRegistry;
use pitune_core::tasks::{Manifest, ManifestRecord};
use pitune_core::{build_expert, ExpertConfig, TaskSpec};

fn manifest(shots: Option<usize>) -> Manifest {
    let task = ["r0", "r30"]
        .iter()
        .zip([0.0f64, 30.0])
        .map(|(id, deg)| ManifestRecord {
            spec: TaskSpec::rotation(*id, deg.to_radians()),
            data_seed: 11,
            sizes: common::small_sizes(),
            pretrain: false,
            shots,
        })
        .collect();
    Manifest { task }
}

#[test]
fn datasets_regenerate_identically_after_cache_loss() {
    let dir = tempfile::tempdir().unwrap();
    let reg = TaskRegistry::create(dir.path(), manifest(None)).unwrap();
    let first = reg.dataset("r30").unwrap();
    fs::remove_file(reg.dataset_path("r30")).unwrap();
    assert_eq!(reg.dataset("r30").unwrap(), first);
    assert!(reg.fsck().is_empty(), "{:?}", reg.fsck());
}

#[test]
fn low_shot_records_keep_a_few_rows_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let reg = TaskRegistry::create(dir.path(), manifest(Some(3))).unwrap();
    let ds = reg.dataset("r0").unwrap();
    assert_eq!(ds.train.len(), 3 * ds.spec.classes);
    assert_eq!(ds.test.len(), common::small_sizes().test);
}

#[test]
fn fsck_reports_each_kind_of_damage() {
    let dir = tempfile::tempdir().unwrap();
    let reg = TaskRegistry::create(dir.path(), manifest(None)).unwrap();
    let bb = common::backbone(0);
    reg.save_backbone(&bb).unwrap();
    reg.dataset("r0").unwrap();
    let e = build_expert(&ExpertConfig::adapter(2), &bb, 0).unwrap();
    reg.save_expert("r0", &e).unwrap();
    assert!(reg.fsck().is_empty(), "{:?}", reg.fsck());

    fs::create_dir(dir.path().join("tasks/stray")).unwrap();
    fs::write(reg.spec_path("r30"), "id = \"other\"\n").unwrap();
    let mut bytes = fs::read(reg.dataset_path("r0")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(reg.dataset_path("r0"), bytes).unwrap();
    fs::write(reg.backbone_path(), b"not a backbone").unwrap();

    let problems = reg.fsck();
    for needle in ["stray", "r30: spec.toml", "r0: dataset", "backbone"] {
        assert!(problems.iter().any(|p| p.contains(needle)), "missing `{needle}` in {problems:?}");
    }
}
