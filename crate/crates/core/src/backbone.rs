//! Frozen transformer-encoder backbone.
//!
//! Inputs of width `input_dim` are cut into `tokens` chunks, each mapped to
//! `dim` by a shared linear tokenizer, plus a learned position table. Each
//! pre-norm layer runs single-head self-attention and a tanh MLP, each with a
//! residual connection. A final layer norm, mean pooling over tokens and a
//! linear head give the class logits.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::experts::ExpertView;
use crate::format::{self, Header, BACKBONE_MAGIC};
use crate::params::{Layout, ParameterVector};
use crate::rng::labelled_rng;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Tokens per input; the input is split into this many equal chunks.
    pub tokens: usize,
    pub input_dim: usize,
    pub mlp_dim: usize,
    pub classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { layers: 2, dim: 32, heads: 1, tokens: 4, input_dim: 128, mlp_dim: 64, classes: 5 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.tokens == 0 || self.mlp_dim == 0 {
            return Err(Error::Config(format!("backbone extents must be positive: {self:?}")));
        }
        if self.heads != 1 {
            return Err(Error::Config(format!("only single-head attention is supported, got {} heads", self.heads)));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if !self.input_dim.is_multiple_of(self.tokens) {
            return Err(Error::Config(format!(
                "input_dim {} is not divisible into {} tokens",
                self.input_dim, self.tokens
            )));
        }
        Ok(())
    }

    pub fn chunk(&self) -> usize {
        self.input_dim / self.tokens
    }

    /// Adapter sites: `2*l` follows layer `l`'s attention, `2*l+1` its MLP.
    pub fn adapter_sites(&self) -> usize {
        2 * self.layers
    }

    pub fn layout(&self) -> Result<Layout> {
        let (h, m) = (self.dim, self.mlp_dim);
        let mut parts: Vec<(String, Vec<usize>)> = vec![
            ("tok.w".into(), vec![self.chunk(), h]),
            ("tok.b".into(), vec![h]),
            ("pos".into(), vec![self.tokens, h]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            parts.push((p("ln1.g"), vec![h]));
            parts.push((p("ln1.b"), vec![h]));
            for proj in ["q", "k", "v", "o"] {
                parts.push((p(&format!("attn.{proj}.w")), vec![h, h]));
                parts.push((p(&format!("attn.{proj}.b")), vec![h]));
            }
            parts.push((p("ln2.g"), vec![h]));
            parts.push((p("ln2.b"), vec![h]));
            parts.push((p("mlp.fc1.w"), vec![h, m]));
            parts.push((p("mlp.fc1.b"), vec![m]));
            parts.push((p("mlp.fc2.w"), vec![m, h]));
            parts.push((p("mlp.fc2.b"), vec![h]));
        }
        parts.push(("lnf.g".into(), vec![h]));
        parts.push(("lnf.b".into(), vec![h]));
        parts.push(("head.w".into(), vec![h, self.classes]));
        parts.push(("head.b".into(), vec![self.classes]));
        Layout::from_shapes(parts)
    }

    /// Names of every linear-layer bias, in layout order.
    pub fn linear_biases(&self, layers: &[usize]) -> Vec<String> {
        let mut out = vec!["tok.b".to_string()];
        for &l in layers {
            for proj in ["q", "k", "v", "o"] {
                out.push(format!("layer{l}.attn.{proj}.b"));
            }
            out.push(format!("layer{l}.mlp.fc1.b"));
            out.push(format!("layer{l}.mlp.fc2.b"));
        }
        out.push("head.b".to_string());
        out
    }

    fn header(&self, h: &mut Header) {
        h.push("layers", self.layers)
            .push("dim", self.dim)
            .push("heads", self.heads)
            .push("tokens", self.tokens)
            .push("input_dim", self.input_dim)
            .push("mlp_dim", self.mlp_dim)
            .push("classes", self.classes);
    }

    fn from_header(h: &Header, path: &Path) -> Result<Self> {
        Ok(Self {
            layers: h.parse("layers", path)?,
            dim: h.parse("dim", path)?,
            heads: h.parse("heads", path)?,
            tokens: h.parse("tokens", path)?,
            input_dim: h.parse("input_dim", path)?,
            mlp_dim: h.parse("mlp_dim", path)?,
            classes: h.parse("classes", path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    layout: Layout,
    theta: ParameterVector,
    frozen: bool,
}

impl Backbone {
    /// Randomly initialised, unfrozen backbone.
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let mut rng = labelled_rng(seed, "backbone-init");
        let mut theta = vec![0.0; layout.total_len()];
        for seg in layout.segments() {
            let vals = &mut theta[seg.range()];
            let name = seg.name.as_str();
            if name.ends_with(".g") {
                vals.fill(1.0);
            } else if name == "pos" {
                let n = Normal::new(0.0, 0.1).unwrap();
                vals.iter_mut().for_each(|v| *v = n.sample(&mut rng));
            } else if name.ends_with(".w") {
                let fan_in = seg.shape[0] as f64;
                let n = Normal::new(0.0, 1.0 / fan_in.sqrt()).unwrap();
                vals.iter_mut().for_each(|v| *v = n.sample(&mut rng));
            }
        }
        Ok(Self { config, layout, theta: ParameterVector(theta), frozen: false })
    }

    /// Replaces the weights of an unfrozen backbone.
    pub fn with_params(mut self, theta: ParameterVector) -> Result<Self> {
        if self.frozen {
            return Err(Error::Config("backbone is frozen".into()));
        }
        if theta.len() != self.layout.total_len() {
            return Err(Error::Layout(format!(
                "backbone expects {} params, got {}",
                self.layout.total_len(),
                theta.len()
            )));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParameterVector {
        &self.theta
    }

    /// SHA-256 over the little-endian weight bytes.
    pub fn theta_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.theta.0 {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut h = Header::new();
        self.config.header(&mut h);
        h.push("frozen", self.frozen);
        format::write_file(path, BACKBONE_MAGIC, &h, &self.theta.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload) = format::read_file(path, BACKBONE_MAGIC)?;
        let config = BackboneConfig::from_header(&h, path)?;
        config.validate()?;
        let layout = config.layout()?;
        if payload.len() != layout.total_len() {
            return Err(Error::format(
                path,
                format!("payload has {} floats, layout needs {}", payload.len(), layout.total_len()),
            ));
        }
        Ok(Self { config, layout, theta: ParameterVector(payload), frozen: h.parse("frozen", path)? })
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.config.input_dim {
            return Err(Error::Layout(format!(
                "batch shape {:?} does not match backbone input width {}",
                x.shape(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. `theta` must hold this backbone's
    /// flat weights (a constant for expert training, a param for pretraining).
    pub fn forward(&self, tape: &mut Tape, theta: Var, expert: Option<&ExpertView<'_>>, x: Var) -> Var {
        let cfg = &self.config;
        let (t, h) = (cfg.tokens, cfg.dim);
        let bs = tape.value(x).shape()[0];
        let w = |tape: &mut Tape, name: &str| -> Var {
            let seg = self.layout.get(name).expect("backbone segment");
            tape.slice(theta, seg.offset, seg.shape.clone())
        };
        // bias plus the optional bitfit offset
        let bias = |tape: &mut Tape, name: &str| -> Var {
            let b = w(tape, name);
            match expert.and_then(|e| e.bias_offset(tape, name)) {
                Some(off) => tape.add(b, off),
                None => b,
            }
        };
        let norm = |tape: &mut Tape, v: Var, g: &str, b: &str| -> Var {
            let n = tape.layer_norm(v, LN_EPS);
            let gv = w(tape, g);
            let n = tape.mul_bcast(n, gv);
            let bv = w(tape, b);
            tape.add_bcast(n, bv)
        };

        let chunks = tape.reshape(x, vec![bs * t, cfg.chunk()]);
        let tw = w(tape, "tok.w");
        let e = tape.matmul(chunks, tw);
        let tb = bias(tape, "tok.b");
        let e = tape.add_bcast(e, tb);
        let e = tape.reshape(e, vec![bs, t, h]);
        let pos = w(tape, "pos");
        let mut hs = tape.add_bcast(e, pos);

        for l in 0..cfg.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            let a = norm(tape, hs, &p("ln1.g"), &p("ln1.b"));
            let proj = |tape: &mut Tape, name: &str| -> Var {
                let wv = w(tape, &p(&format!("attn.{name}.w")));
                let mut out = tape.matmul(a, wv);
                if let Some((la, lb)) = expert.and_then(|e| e.lora(tape, l, name)) {
                    let down = tape.matmul(a, la);
                    let up = tape.matmul(down, lb);
                    out = tape.add(out, up);
                }
                let bv = bias(tape, &p(&format!("attn.{name}.b")));
                tape.add_bcast(out, bv)
            };
            let q = proj(tape, "q");
            let mut k = proj(tape, "k");
            let mut v = proj(tape, "v");
            if let Some((pk, pv)) = expert.and_then(|e| e.prefix(tape, l)) {
                k = tape.prepend(pk, k);
                v = tape.prepend(pv, v);
            }
            let scores = tape.bmm(q, k, true);
            let scores = tape.scale(scores, 1.0 / (h as f64).sqrt());
            let attn = tape.softmax(scores);
            let ctx = tape.bmm(attn, v, false);
            let ow = w(tape, &p("attn.o.w"));
            let o = tape.matmul(ctx, ow);
            let ob = bias(tape, &p("attn.o.b"));
            let mut o = tape.add_bcast(o, ob);
            if let Some(e) = expert {
                o = e.adapter(tape, 2 * l, o);
            }
            hs = tape.add(hs, o);

            let a2 = norm(tape, hs, &p("ln2.g"), &p("ln2.b"));
            let w1 = w(tape, &p("mlp.fc1.w"));
            let m = tape.matmul(a2, w1);
            let b1 = bias(tape, &p("mlp.fc1.b"));
            let m = tape.add_bcast(m, b1);
            let m = tape.tanh(m);
            let w2 = w(tape, &p("mlp.fc2.w"));
            let m = tape.matmul(m, w2);
            let b2 = bias(tape, &p("mlp.fc2.b"));
            let mut m = tape.add_bcast(m, b2);
            if let Some(e) = expert {
                m = e.adapter(tape, 2 * l + 1, m);
            }
            hs = tape.add(hs, m);
        }

        let f = norm(tape, hs, "lnf.g", "lnf.b");
        let pooled = tape.mean_tokens(f);
        let hw = w(tape, "head.w");
        let logits = tape.matmul(pooled, hw);
        let hb = bias(tape, "head.b");
        tape.add_bcast(logits, hb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = BackboneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.chunk(), 32);
        assert!(BackboneConfig { heads: 2, ..cfg.clone() }.validate().is_err());
        assert!(BackboneConfig { input_dim: 130, ..cfg }.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bb.pifb");
        let b = Backbone::init(BackboneConfig::default(), 3).unwrap().freeze();
        b.save(&p).unwrap();
        let back = Backbone::load(&p).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.theta_hash(), b.theta_hash());
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PIFB");
    }

    #[test]
    fn frozen_backbone_refuses_new_params() {
        let b = Backbone::init(BackboneConfig::default(), 1).unwrap().freeze();
        let n = b.params().len();
        assert!(b.with_params(ParameterVector::zeros(n)).is_err());
    }
}
