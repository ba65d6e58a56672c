//! Task registry: a directory of task specs, cached datasets, experts and
//! embeddings, plus the in-memory [`ExpertPool`] that retrieval runs over.
//!
//! ```text
//! <root>/manifest.toml
//! <root>/backbone.pifb
//! <root>/tasks/<id>/spec.toml
//! <root>/tasks/<id>/data.pifd
//! <root>/tasks/<id>/expert-<kind>.pifx
//! <root>/tasks/<id>/embed-<kind>.pife
//! <root>/.lock
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::fisher::{EmbeddingPool, TaskEmbedding};
use crate::tasks::{few_shot, realize, Manifest, ManifestRecord, TaskDataset};

fn spec_toml(rec: &ManifestRecord) -> String {
    toml::to_string(rec).expect("record serialises")
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub expert: ExpertWeights,
    pub embedding: TaskEmbedding,
}

/// Experts and their embeddings keyed by task id. All entries share one
/// expert config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpertPool {
    entries: BTreeMap<String, PoolEntry>,
}

impl ExpertPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, expert: ExpertWeights, embedding: TaskEmbedding) -> Result<()> {
        let id = id.into();
        if embedding.config_hash != expert.config.hash() {
            return Err(Error::Layout(format!("embedding of `{id}` was computed over a different expert config")));
        }
        if let Some((other, e)) = self.entries.iter().next() {
            if !e.expert.layout.is_compatible(&expert.layout) || e.expert.config != expert.config {
                return Err(Error::Layout(format!("expert of `{id}` is incompatible with the pool (e.g. `{other}`)")));
            }
        }
        self.entries.insert(id, PoolEntry { expert, embedding });
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<PoolEntry> {
        self.entries.remove(id)
    }

    pub fn get(&self, id: &str) -> Result<&PoolEntry> {
        self.entries.get(id).ok_or_else(|| Error::Retrieval(format!("task `{id}` is not in the pool")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embeddings(&self) -> EmbeddingPool {
        self.entries.iter().map(|(k, v)| (k.clone(), v.embedding.clone())).collect()
    }
}

/// Exclusive advisory lock on a registry; released on drop.
#[derive(Debug)]
pub struct RegistryLock {
    file: File,
}

impl RegistryLock {
    /// Blocks until the lock file under `root` is held; `root` must exist.
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(".lock");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        Ok(Self { file })
    }
}

impl Drop for RegistryLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

#[derive(Clone, Debug)]
pub struct TaskRegistry {
    root: PathBuf,
    manifest: Manifest,
}

impl TaskRegistry {
    /// Initialises `root` with `manifest`, replacing any previous manifest.
    pub fn create(root: &Path, manifest: Manifest) -> Result<Self> {
        fs::create_dir_all(root.join("tasks")).map_err(|e| Error::io(root, e))?;
        let reg = Self { root: root.to_path_buf(), manifest };
        for rec in &reg.manifest.task {
            let dir = reg.task_dir(&rec.spec.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            crate::format::write_atomic(&reg.spec_path(&rec.spec.id), spec_toml(rec).as_bytes())?;
        }
        crate::format::write_atomic(&reg.manifest_path(), reg.manifest.to_toml().as_bytes())?;
        Ok(reg)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.toml");
        if !path.exists() {
            return Err(Error::Data(format!("no registry at {} (manifest.toml missing)", root.display())));
        }
        Ok(Self { root: root.to_path_buf(), manifest: Manifest::load(&path)? })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.task.iter().map(|r| r.spec.id.clone()).collect()
    }

    pub fn record(&self, id: &str) -> Result<&ManifestRecord> {
        self.manifest.get(id).ok_or_else(|| Error::Data(format!("unknown task `{id}`")))
    }

    pub fn lock(&self) -> Result<RegistryLock> {
        RegistryLock::acquire(&self.root)
    }

    pub fn task_dir(&self, id: &str) -> PathBuf {
        self.root.join("tasks").join(id)
    }

    pub fn spec_path(&self, id: &str) -> PathBuf {
        self.task_dir(id).join("spec.toml")
    }

    pub fn dataset_path(&self, id: &str) -> PathBuf {
        self.task_dir(id).join("data.pifd")
    }

    pub fn expert_path(&self, id: &str, kind: &str) -> PathBuf {
        self.task_dir(id).join(format!("expert-{kind}.pifx"))
    }

    pub fn embedding_path(&self, id: &str, kind: &str) -> PathBuf {
        self.task_dir(id).join(format!("embed-{kind}.pife"))
    }

    pub fn backbone_path(&self) -> PathBuf {
        self.root.join("backbone.pifb")
    }

    /// Cached dataset; regenerated from the manifest record on a cache miss.
    pub fn dataset(&self, id: &str) -> Result<TaskDataset> {
        let rec = self.record(id)?;
        let path = self.dataset_path(id);
        if path.exists() {
            return TaskDataset::load(&path, rec.spec.clone());
        }
        let mut ds = realize(&rec.spec, rec.sizes, rec.data_seed)?;
        if let Some(shots) = rec.shots {
            ds = few_shot(&ds, shots, rec.data_seed)?;
        }
        ds.save(&path)?;
        Ok(ds)
    }

    pub fn save_backbone(&self, bb: &Backbone) -> Result<()> {
        bb.save(&self.backbone_path())
    }

    pub fn backbone(&self) -> Result<Backbone> {
        let path = self.backbone_path();
        if !path.exists() {
            return Err(Error::Data(format!("registry has no backbone; run pretrain first ({})", path.display())));
        }
        Backbone::load(&path)
    }

    pub fn save_expert(&self, id: &str, expert: &ExpertWeights) -> Result<PathBuf> {
        self.record(id)?;
        let path = self.expert_path(id, expert.kind().name());
        expert.save(&path)?;
        Ok(path)
    }

    pub fn expert(&self, id: &str, kind: &str) -> Result<ExpertWeights> {
        self.record(id)?;
        let path = self.expert_path(id, kind);
        if !path.exists() {
            return Err(Error::Data(format!("task `{id}` has no {kind} expert")));
        }
        ExpertWeights::load(&path)
    }

    /// Stores `emb` next to the expert it was computed from; the config
    /// hashes must agree.
    pub fn save_embedding(&self, id: &str, kind: &str, emb: &TaskEmbedding) -> Result<PathBuf> {
        let expert = self.expert(id, kind)?;
        if expert.config.hash() != emb.config_hash {
            return Err(Error::Layout(format!(
                "embedding config hash {} does not match the stored {kind} expert of `{id}` ({})",
                emb.config_hash,
                expert.config.hash()
            )));
        }
        let path = self.embedding_path(id, kind);
        emb.save(&path)?;
        Ok(path)
    }

    pub fn embedding(&self, id: &str, kind: &str) -> Result<TaskEmbedding> {
        self.record(id)?;
        let path = self.embedding_path(id, kind);
        if !path.exists() {
            return Err(Error::Data(format!("task `{id}` has no {kind} embedding")));
        }
        TaskEmbedding::load(&path)
    }

    /// Every task that has both an expert and an embedding of `kind`.
    pub fn pool(&self, kind: &str) -> Result<ExpertPool> {
        let mut pool = ExpertPool::new();
        for id in self.ids() {
            if self.expert_path(&id, kind).exists() && self.embedding_path(&id, kind).exists() {
                pool.insert(id.clone(), self.expert(&id, kind)?, self.embedding(&id, kind)?)?;
            }
        }
        Ok(pool)
    }

    /// Consistency check; returns one line per problem found.
    pub fn fsck(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.backbone_path().exists() {
            if let Err(e) = Backbone::load(&self.backbone_path()) {
                problems.push(format!("backbone: {e}"));
            }
        }
        let known: Vec<String> = self.ids();
        if let Ok(dir) = fs::read_dir(self.root.join("tasks")) {
            for entry in dir.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if !known.contains(&name) {
                    problems.push(format!("tasks/{name}: not in manifest"));
                }
            }
        }
        for id in &known {
            let expected = self.record(id).map(spec_toml).unwrap_or_default();
            match fs::read_to_string(self.spec_path(id)) {
                Ok(text) if text == expected => {}
                Ok(_) => problems.push(format!("{id}: spec.toml disagrees with the manifest")),
                Err(_) => problems.push(format!("{id}: spec.toml missing")),
            }
            let data = self.dataset_path(id);
            if data.exists() {
                let spec = self.record(id).map(|r| r.spec.clone());
                if let Err(e) = spec.and_then(|s| TaskDataset::load(&data, s)) {
                    problems.push(format!("{id}: dataset: {e}"));
                }
            }
            for kind in ["adapter", "lora", "prompt", "bitfit"] {
                let ep = self.expert_path(id, kind);
                let expert = if ep.exists() {
                    match ExpertWeights::load(&ep) {
                        Ok(e) => Some(e),
                        Err(e) => {
                            problems.push(format!("{id}: {kind} expert: {e}"));
                            None
                        }
                    }
                } else {
                    None
                };
                let mp = self.embedding_path(id, kind);
                if !mp.exists() {
                    continue;
                }
                match (TaskEmbedding::load(&mp), expert) {
                    (Err(e), _) => problems.push(format!("{id}: {kind} embedding: {e}")),
                    (Ok(_), None) if !ep.exists() => problems.push(format!("{id}: {kind} embedding has no expert")),
                    (Ok(m), Some(x)) => {
                        if m.config_hash != x.config.hash() {
                            problems.push(format!("{id}: {kind} embedding config hash does not match expert"));
                        } else if m.len() != x.len() {
                            problems.push(format!("{id}: {kind} embedding length does not match expert"));
                        }
                    }
                    _ => {}
                }
            }
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::experts::{build_expert, ExpertConfig};
    use crate::params::ParameterVector;
    use crate::tasks::{SplitSizes, TaskSpec};

    fn small_bb() -> Backbone {
        let cfg =
            BackboneConfig { layers: 1, dim: 8, tokens: 2, input_dim: 4, mlp_dim: 8, classes: 3, ..Default::default() };
        Backbone::init(cfg, 0).unwrap().freeze()
    }

    fn manifest() -> Manifest {
        let spec = TaskSpec { classes: 3, permutation: vec![0, 1, 2], ..TaskSpec::rotation("t0", 0.0) }.with_dim(4);
        Manifest {
            task: vec![ManifestRecord {
                spec,
                data_seed: 7,
                sizes: SplitSizes { train: 12, val: 6, test: 6 },
                pretrain: false,
                shots: None,
            }],
        }
    }

    #[test]
    fn roundtrip_and_fsck() {
        let dir = tempfile::tempdir().unwrap();
        let reg = TaskRegistry::create(dir.path(), manifest()).unwrap();
        let bb = small_bb();
        reg.save_backbone(&bb).unwrap();
        let ds = reg.dataset("t0").unwrap();
        assert_eq!(reg.dataset("t0").unwrap(), ds);
        let e = build_expert(&ExpertConfig::adapter(2), &bb, 0).unwrap();
        reg.save_expert("t0", &e).unwrap();
        let emb = TaskEmbedding {
            task_id: "t0".into(),
            config_hash: e.config.hash(),
            values: ParameterVector(vec![1.0; e.len()]),
            samples: 3,
        };
        reg.save_embedding("t0", "adapter", &emb).unwrap();
        let reopened = TaskRegistry::open(dir.path()).unwrap();
        assert_eq!(reopened.expert("t0", "adapter").unwrap(), e);
        assert_eq!(reopened.pool("adapter").unwrap().len(), 1);
        assert!(reopened.fsck().is_empty(), "{:?}", reopened.fsck());
        let _guard = reopened.lock().unwrap();

        let bad = TaskEmbedding { config_hash: "zz".into(), ..emb };
        assert!(reg.save_embedding("t0", "adapter", &bad).is_err());
        assert!(reg.expert("nope", "adapter").is_err());
        fs::write(reg.expert_path("t0", "adapter"), b"junk").unwrap();
        assert!(!reg.fsck().is_empty());
    }

    #[test]
    fn missing_registry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(TaskRegistry::open(dir.path()), Err(Error::Data(_))));
    }
}
