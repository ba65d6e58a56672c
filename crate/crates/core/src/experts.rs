//! Parameter-efficient experts: adapter, LoRA, prefix prompt and BitFit.
//!
//! An expert is a flat [`ParameterVector`] plus a [`Layout`] whose segment
//! names bind each slice to an attachment point on the backbone:
//!
//! | kind    | segments                                                      |
//! |---------|---------------------------------------------------------------|
//! | adapter | `adapter{site}.down.w [h,r]`, `.down.b [r]`, `.up.w [r,h]`, `.up.b [h]` |
//! | lora    | `layer{l}.{q,v}.lora_a [h,r]`, `layer{l}.{q,v}.lora_b [r,h]`  |
//! | prompt  | `layer{l}.prefix.k [len,h]`, `layer{l}.prefix.v [len,h]`      |
//! | bitfit  | `bitfit.<backbone bias name>`                                 |
//!
//! Adapter sites index sublayers: site `2l` follows layer `l`'s attention and
//! site `2l+1` its MLP. Default sizes are scaled to the 32-wide backbone.

use std::fmt;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::format::{self, Header, EXPERT_MAGIC};
use crate::params::{Layout, ParameterVector};
use crate::rng::labelled_rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExpertKind {
    Adapter { bottleneck: usize },
    Lora { rank: usize },
    Prompt { length: usize },
    Bitfit,
}

impl ExpertKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExpertKind::Adapter { .. } => "adapter",
            ExpertKind::Lora { .. } => "lora",
            ExpertKind::Prompt { .. } => "prompt",
            ExpertKind::Bitfit => "bitfit",
        }
    }
}

/// Which layers (or adapter sites) an expert attaches to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Insertion {
    All,
    Points(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub kind: ExpertKind,
    pub insertion: Insertion,
}

impl ExpertConfig {
    pub fn adapter(bottleneck: usize) -> Self {
        Self { kind: ExpertKind::Adapter { bottleneck }, insertion: Insertion::All }
    }

    pub fn lora(rank: usize) -> Self {
        Self { kind: ExpertKind::Lora { rank }, insertion: Insertion::All }
    }

    pub fn prompt(length: usize) -> Self {
        Self { kind: ExpertKind::Prompt { length }, insertion: Insertion::All }
    }

    pub fn bitfit() -> Self {
        Self { kind: ExpertKind::Bitfit, insertion: Insertion::All }
    }

    /// Desk-scale default for each kind name: adapter r=8, LoRA r=4, prompt l=8.
    pub fn default_for(kind: &str) -> Result<Self> {
        match kind {
            "adapter" => Ok(Self::adapter(8)),
            "lora" => Ok(Self::lora(4)),
            "prompt" => Ok(Self::prompt(8)),
            "bitfit" => Ok(Self::bitfit()),
            other => Err(Error::Config(format!("unknown expert kind `{other}` (expected adapter|lora|prompt|bitfit)"))),
        }
    }

    pub fn at(mut self, points: Vec<usize>) -> Self {
        self.insertion = Insertion::Points(points);
        self
    }

    fn slots(&self, bb: &BackboneConfig) -> usize {
        match self.kind {
            ExpertKind::Adapter { .. } => bb.adapter_sites(),
            _ => bb.layers,
        }
    }

    /// Insertion points resolved against a backbone, sorted.
    pub fn points(&self, bb: &BackboneConfig) -> Vec<usize> {
        match &self.insertion {
            Insertion::All => (0..self.slots(bb)).collect(),
            Insertion::Points(p) => {
                let mut p = p.clone();
                p.sort_unstable();
                p
            }
        }
    }

    pub fn validate(&self, bb: &BackboneConfig) -> Result<()> {
        let h = bb.dim;
        match self.kind {
            ExpertKind::Adapter { bottleneck: r } | ExpertKind::Lora { rank: r } => {
                if r == 0 || r >= h {
                    return Err(Error::Config(format!("{} size r={r} must satisfy 1 <= r < h={h}", self.kind.name())));
                }
            }
            ExpertKind::Prompt { length: 0 } => {
                return Err(Error::Config("prompt length must be >= 1".into()));
            }
            _ => {}
        }
        if let Insertion::Points(p) = &self.insertion {
            let slots = self.slots(bb);
            let mut seen = p.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != p.len() {
                return Err(Error::Config(format!("duplicate insertion points in {p:?}")));
            }
            if let Some(bad) = p.iter().find(|&&i| i >= slots) {
                return Err(Error::Config(format!("insertion point {bad} out of range (0..{slots})")));
            }
        }
        Ok(())
    }

    /// Layout this config produces on a backbone.
    pub fn layout(&self, bb: &BackboneConfig) -> Result<Layout> {
        self.validate(bb)?;
        let h = bb.dim;
        let points = self.points(bb);
        let mut parts: Vec<(String, Vec<usize>)> = Vec::new();
        match self.kind {
            ExpertKind::Adapter { bottleneck: r } => {
                for s in points {
                    parts.push((format!("adapter{s}.down.w"), vec![h, r]));
                    parts.push((format!("adapter{s}.down.b"), vec![r]));
                    parts.push((format!("adapter{s}.up.w"), vec![r, h]));
                    parts.push((format!("adapter{s}.up.b"), vec![h]));
                }
            }
            ExpertKind::Lora { rank: r } => {
                for l in points {
                    for proj in ["q", "v"] {
                        parts.push((format!("layer{l}.{proj}.lora_a"), vec![h, r]));
                        parts.push((format!("layer{l}.{proj}.lora_b"), vec![r, h]));
                    }
                }
            }
            ExpertKind::Prompt { length } => {
                for l in points {
                    parts.push((format!("layer{l}.prefix.k"), vec![length, h]));
                    parts.push((format!("layer{l}.prefix.v"), vec![length, h]));
                }
            }
            ExpertKind::Bitfit => {
                let bl = bb.layout()?;
                for name in bb.linear_biases(&points) {
                    let shape = bl.get(&name).expect("bias segment").shape.clone();
                    parts.push((format!("bitfit.{name}"), shape));
                }
            }
        }
        Layout::from_shapes(parts)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, bb: &BackboneConfig) -> usize {
        let h = bb.dim;
        let n = self.points(bb).len();
        match self.kind {
            ExpertKind::Adapter { bottleneck: r } => n * (h * r + r + r * h + h),
            ExpertKind::Lora { rank: r } => n * 2 * (h * r + r * h),
            ExpertKind::Prompt { length } => n * 2 * length * h,
            ExpertKind::Bitfit => h + n * (4 * h + bb.mlp_dim + h) + bb.classes,
        }
    }

    /// Canonical serialisation; its SHA-256 is the config hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    fn header(&self, h: &mut Header) {
        h.push("kind", self.kind.name());
        match self.kind {
            ExpertKind::Adapter { bottleneck } => {
                h.push("bottleneck", bottleneck);
            }
            ExpertKind::Lora { rank } => {
                h.push("rank", rank);
            }
            ExpertKind::Prompt { length } => {
                h.push("length", length);
            }
            ExpertKind::Bitfit => {}
        }
        match &self.insertion {
            Insertion::All => h.push("insertion", "all"),
            Insertion::Points(p) => h.push("insertion", format::join_usize(p)),
        };
    }

    fn from_header(h: &Header, path: &Path) -> Result<Self> {
        let kind = match h.require("kind", path)? {
            "adapter" => ExpertKind::Adapter { bottleneck: h.parse("bottleneck", path)? },
            "lora" => ExpertKind::Lora { rank: h.parse("rank", path)? },
            "prompt" => ExpertKind::Prompt { length: h.parse("length", path)? },
            "bitfit" => ExpertKind::Bitfit,
            other => return Err(Error::format(path, format!("unknown expert kind `{other}`"))),
        };
        let insertion = match h.require("insertion", path)? {
            "all" => Insertion::All,
            list => Insertion::Points(format::split_usize(list, "insertion", path)?),
        };
        Ok(Self { kind, insertion })
    }
}

impl fmt::Display for ExpertConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ExpertKind::Adapter { bottleneck } => write!(f, "adapter(r={bottleneck})"),
            ExpertKind::Lora { rank } => write!(f, "lora(r={rank})"),
            ExpertKind::Prompt { length } => write!(f, "prompt(l={length})"),
            ExpertKind::Bitfit => write!(f, "bitfit"),
        }
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub task_id: String,
    /// Hash of expert config, train config and seed.
    pub train_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertWeights {
    pub config: ExpertConfig,
    pub layout: Layout,
    pub values: ParameterVector,
    pub provenance: Provenance,
}

impl ExpertWeights {
    pub fn kind(&self) -> &ExpertKind {
        &self.config.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same config and layout, new values.
    pub fn with_values(&self, values: ParameterVector) -> Result<Self> {
        unflatten(&self.config, &self.layout, values).map(|mut e| {
            e.provenance = self.provenance.clone();
            e
        })
    }

    /// Fails unless this expert's layout is exactly what its config produces on `bb`.
    pub fn check_attachable(&self, bb: &BackboneConfig) -> Result<()> {
        let expected = self.config.layout(bb)?;
        expected.check_compatible(&self.layout)?;
        if self.values.len() != self.layout.total_len() {
            return Err(Error::Layout(format!(
                "expert holds {} values, layout needs {}",
                self.values.len(),
                self.layout.total_len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(EXPERT_MAGIC, &self.header(), &self.values.0)
    }

    fn header(&self) -> Header {
        let mut h = Header::new();
        self.config.header(&mut h);
        h.push("config_hash", self.config.hash());
        h.push("task", &self.provenance.task_id);
        h.push("train_hash", &self.provenance.train_hash);
        for line in self.layout.manifest() {
            h.push("segment", line);
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_file(path, EXPERT_MAGIC, &self.header(), &self.values.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload) = format::read_file(path, EXPERT_MAGIC)?;
        let config = ExpertConfig::from_header(&h, path)?;
        if h.require("config_hash", path)? != config.hash() {
            return Err(Error::format(path, "config hash does not match stored config"));
        }
        let layout = Layout::parse_manifest(&h.get_all("segment"))?;
        let mut e = unflatten(&config, &layout, ParameterVector(payload))?;
        e.provenance = Provenance {
            task_id: h.require("task", path)?.to_string(),
            train_hash: h.require("train_hash", path)?.to_string(),
        };
        Ok(e)
    }
}

/// The expert's values in layout segment order.
pub fn flatten(expert: &ExpertWeights) -> ParameterVector {
    expert.values.clone()
}

pub fn unflatten(config: &ExpertConfig, layout: &Layout, values: ParameterVector) -> Result<ExpertWeights> {
    if values.len() != layout.total_len() {
        return Err(Error::Layout(format!(
            "vector of length {} does not fit layout of length {}",
            values.len(),
            layout.total_len()
        )));
    }
    if !values.is_finite() {
        return Err(Error::Numerical { step: 0, detail: "expert values must be finite".into() });
    }
    Ok(ExpertWeights { config: config.clone(), layout: layout.clone(), values, provenance: Provenance::default() })
}

/// Fresh expert. Adapter up-projections and LoRA `B` start at zero, and BitFit
/// offsets at zero, so the initial function equals the frozen backbone. Other
/// weight matrices and prompt vectors are drawn from N(0, 1/h).
pub fn build_expert(cfg: &ExpertConfig, backbone: &Backbone, seed: u64) -> Result<ExpertWeights> {
    let bb = backbone.config();
    let layout = cfg.layout(bb)?;
    let mut rng = labelled_rng(seed, &format!("expert-init/{}", cfg.canonical()));
    let normal = Normal::new(0.0, 1.0 / (bb.dim as f64).sqrt()).unwrap();
    let mut values = vec![0.0; layout.total_len()];
    for seg in layout.segments() {
        let n = seg.name.as_str();
        let random = n.ends_with(".down.w") || n.ends_with(".lora_a") || n.contains(".prefix.");
        if random {
            values[seg.range()].iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
    }
    Ok(ExpertWeights {
        config: cfg.clone(),
        layout,
        values: ParameterVector(values),
        provenance: Provenance::default(),
    })
}

/// An expert's flat vector on a tape, sliced on demand by the backbone.
pub struct ExpertView<'a> {
    pub layout: &'a Layout,
    pub flat: Var,
}

impl ExpertView<'_> {
    fn seg(&self, tape: &mut Tape, name: &str) -> Option<Var> {
        let s = self.layout.get(name)?;
        Some(tape.slice(self.flat, s.offset, s.shape.clone()))
    }

    pub(crate) fn bias_offset(&self, tape: &mut Tape, bias: &str) -> Option<Var> {
        self.seg(tape, &format!("bitfit.{bias}"))
    }

    pub(crate) fn lora(&self, tape: &mut Tape, layer: usize, proj: &str) -> Option<(Var, Var)> {
        let a = self.seg(tape, &format!("layer{layer}.{proj}.lora_a"))?;
        let b = self.seg(tape, &format!("layer{layer}.{proj}.lora_b"))?;
        Some((a, b))
    }

    pub(crate) fn prefix(&self, tape: &mut Tape, layer: usize) -> Option<(Var, Var)> {
        let k = self.seg(tape, &format!("layer{layer}.prefix.k"))?;
        let v = self.seg(tape, &format!("layer{layer}.prefix.v"))?;
        Some((k, v))
    }

    /// `x + up(tanh(down(x)))` if an adapter sits at `site`, else `x`.
    pub(crate) fn adapter(&self, tape: &mut Tape, site: usize, x: Var) -> Var {
        let Some(dw) = self.seg(tape, &format!("adapter{site}.down.w")) else {
            return x;
        };
        let db = self.seg(tape, &format!("adapter{site}.down.b")).expect("adapter down.b");
        let uw = self.seg(tape, &format!("adapter{site}.up.w")).expect("adapter up.w");
        let ub = self.seg(tape, &format!("adapter{site}.up.b")).expect("adapter up.b");
        let d = tape.matmul(x, dw);
        let d = tape.add_bcast(d, db);
        let d = tape.tanh(d);
        let u = tape.matmul(d, uw);
        let u = tape.add_bcast(u, ub);
        tape.add(x, u)
    }
}

/// Logits of the backbone with `expert` attached (or bare, if `None`).
pub fn apply(backbone: &Backbone, expert: Option<&ExpertWeights>, x: &Tensor) -> Result<Tensor> {
    backbone.check_input(x)?;
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::vector(backbone.params().0.clone()));
    let xv = tape.constant(x.clone());
    let logits = match expert {
        Some(e) => {
            e.check_attachable(backbone.config())?;
            if e.is_empty() {
                backbone.forward(&mut tape, theta, None, xv)
            } else {
                let flat = tape.constant(Tensor::vector(e.values.0.clone()));
                let view = ExpertView { layout: &e.layout, flat };
                backbone.forward(&mut tape, theta, Some(&view), xv)
            }
        }
        None => backbone.forward(&mut tape, theta, None, xv),
    };
    Ok(tape.value(logits).clone())
}
