//! Flat parameter vectors with a named-segment layout manifest.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous, non-overlapping segments. Two layouts are compatible
/// iff their segment lists are equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    /// Packs `(name, shape)` pairs back to back.
    pub fn from_shapes<I, S>(parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let mut segments: Vec<Segment> = Vec::new();
        for (name, shape) in parts {
            let name = name.into();
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Layout(format!("invalid segment name {name:?}")));
            }
            if segments.iter().any(|s| s.name == name) {
                return Err(Error::Layout(format!("duplicate segment `{name}`")));
            }
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Layout(format!("segment `{name}` has empty shape {shape:?}")));
            }
            let seg = Segment { name, shape, offset };
            offset += seg.len();
            segments.push(seg);
        }
        Ok(Self { segments })
    }

    /// Validates an explicit segment list (e.g. read from disk).
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut expect = 0;
        for s in &segments {
            if s.offset != expect {
                return Err(Error::Layout(format!(
                    "segment `{}` at offset {} but expected {expect}",
                    s.name, s.offset
                )));
            }
            expect += s.len();
        }
        let rebuilt = Self::from_shapes(segments.iter().map(|s| (s.name.clone(), s.shape.clone())))?;
        debug_assert_eq!(rebuilt.segments, segments);
        Ok(rebuilt)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn is_compatible(&self, other: &Layout) -> bool {
        self == other
    }

    pub fn check_compatible(&self, other: &Layout) -> Result<()> {
        if self.is_compatible(other) {
            return Ok(());
        }
        let first = self
            .segments
            .iter()
            .zip(&other.segments)
            .position(|(a, b)| a != b)
            .unwrap_or(self.segments.len().min(other.segments.len()));
        Err(Error::Layout(format!(
            "incompatible layouts ({} vs {} segments, first difference at segment {first})",
            self.segments.len(),
            other.segments.len()
        )))
    }

    /// One `name shape @offset` line per segment, e.g. `tok.w 32x32 @0`.
    pub fn manifest(&self) -> Vec<String> {
        self.segments
            .iter()
            .map(|s| {
                let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
                format!("{} {} @{}", s.name, dims.join("x"), s.offset)
            })
            .collect()
    }

    pub fn parse_manifest<S: AsRef<str>>(lines: &[S]) -> Result<Self> {
        let mut segments = Vec::with_capacity(lines.len());
        for line in lines {
            let line = line.as_ref();
            let bad = || Error::Layout(format!("malformed manifest line {line:?}"));
            let mut it = line.split_whitespace();
            let name = it.next().ok_or_else(bad)?;
            let shape = it
                .next()
                .ok_or_else(bad)?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let offset =
                it.next().and_then(|o| o.strip_prefix('@')).ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
            if it.next().is_some() {
                return Err(bad());
            }
            segments.push(Segment { name: name.to_string(), shape, offset });
        }
        Self::from_segments(segments)
    }
}

/// Flat real-valued parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn segment<'a>(&'a self, seg: &Segment) -> &'a [f64] {
        &self.0[seg.range()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|a| a * s).collect())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.manifest() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}
