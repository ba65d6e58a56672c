use std::path::{Path, PathBuf};

use pitune_core::interp::TuneMode;
use pitune_core::{Error, ExpertConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a command resolved before doing work. Saved beside the
/// command's outputs so a run can be inspected or repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub registry: PathBuf,
    pub backbone: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TuneMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<ExpertConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl RunConfig {
    pub fn new(command: &str, registry: &Path, out: Option<&Path>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            registry: registry.to_path_buf(),
            backbone: registry.join("backbone.pifb"),
            manifest: registry.join("manifest.toml"),
            out: out.map(Path::to_path_buf).unwrap_or_else(|| registry.join("out")),
            seed,
            mode: None,
            k: None,
            expert: None,
            train: None,
        }
    }

    /// Fails unless the registry manifest exists and, when `needs_backbone`,
    /// the backbone file too.
    pub fn check_paths(&self, needs_backbone: bool) -> Result<(), Error> {
        if !self.manifest.exists() {
            return Err(Error::Data(format!(
                "no registry at {} (manifest.toml missing; run gen-tasks)",
                self.registry.display()
            )));
        }
        if needs_backbone && !self.backbone.exists() {
            return Err(Error::Data(format!("registry has no backbone at {} (run pretrain)", self.backbone.display())));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_through_toml() {
        let mut rc = RunConfig::new("pi-tune", Path::new("/tmp/reg"), None, 42);
        rc.mode = Some(TuneMode::ScaleOnly);
        rc.k = Some(2);
        rc.expert = Some(ExpertConfig::adapter(8).at(vec![0, 3]));
        rc.train = Some(TrainConfig { lr: 0.1 + 0.2, ..TrainConfig::interpolation() });
        let back = RunConfig::from_toml(&rc.to_toml()).unwrap();
        assert_eq!(back, rc);
        assert_eq!(back.out, Path::new("/tmp/reg/out"));

        let bare = RunConfig::new("fsck", Path::new("r"), Some(Path::new("o")), 0);
        assert_eq!(RunConfig::from_toml(&bare.to_toml()).unwrap(), bare);
        for kind in ["adapter", "lora", "prompt", "bitfit"] {
            let rc = RunConfig { expert: Some(ExpertConfig::default_for(kind).unwrap()), ..bare.clone() };
            assert_eq!(RunConfig::from_toml(&rc.to_toml()).unwrap(), rc);
        }
    }
}
