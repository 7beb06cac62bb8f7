use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of hidden layers exposed by the text encoder.
pub const CLIP_HIDDEN_LAYERS: u32 = 12;

/// Where in the generation pipeline a representation was tapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    ClipHidden,
    ClipFinal,
    UnetBottleneck,
    UnetOutput,
}

impl SiteKind {
    pub const ALL: [SiteKind; 4] = [
        SiteKind::ClipHidden,
        SiteKind::ClipFinal,
        SiteKind::UnetBottleneck,
        SiteKind::UnetOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::ClipHidden => "clip_hidden",
            SiteKind::ClipFinal => "clip_final",
            SiteKind::UnetBottleneck => "unet_bottleneck",
            SiteKind::UnetOutput => "unet_output",
        }
    }

    /// Text-encoder sites carry one row per stimulus; U-Net sites one row per
    /// (stimulus, noise seed).
    pub fn is_clip(self) -> bool {
        matches!(self, SiteKind::ClipHidden | SiteKind::ClipFinal)
    }

    /// Hyperparameter-sharing group this kind belongs to.
    pub fn group(self) -> SiteGroup {
        match self {
            SiteKind::ClipHidden | SiteKind::ClipFinal => SiteGroup::Clip,
            SiteKind::UnetBottleneck => SiteGroup::UnetBottleneck,
            SiteKind::UnetOutput => SiteGroup::UnetOutput,
        }
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SiteKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::SiteSpec(s.to_string()))
    }
}

/// Sites whose probes share one hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteGroup {
    Clip,
    UnetBottleneck,
    UnetOutput,
}

impl SiteGroup {
    pub const ALL: [SiteGroup; 3] = [SiteGroup::Clip, SiteGroup::UnetBottleneck, SiteGroup::UnetOutput];

    pub fn as_str(self) -> &'static str {
        match self {
            SiteGroup::Clip => "clip",
            SiteGroup::UnetBottleneck => "unet_bottleneck",
            SiteGroup::UnetOutput => "unet_output",
        }
    }
}

impl fmt::Display for SiteGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tap point: CLIP hidden layer `l` (1..=12), the CLIP output (index 0),
/// or the U-Net bottleneck / output at denoising iteration `k` (1..=K).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId {
    pub kind: SiteKind,
    pub index: u32,
}

impl SiteId {
    pub fn new(kind: SiteKind, index: u32) -> Result<Self> {
        let site = SiteId { kind, index };
        site.validate()?;
        Ok(site)
    }

    pub fn clip_hidden(layer: u32) -> Self {
        SiteId { kind: SiteKind::ClipHidden, index: layer }
    }

    pub fn clip_final() -> Self {
        SiteId { kind: SiteKind::ClipFinal, index: 0 }
    }

    pub fn unet_bottleneck(iteration: u32) -> Self {
        SiteId { kind: SiteKind::UnetBottleneck, index: iteration }
    }

    pub fn unet_output(iteration: u32) -> Self {
        SiteId { kind: SiteKind::UnetOutput, index: iteration }
    }

    /// Checks the index range for the kind. The upper bound on U-Net
    /// iterations is a property of the store, not of the id.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SiteKind::ClipHidden => (1..=CLIP_HIDDEN_LAYERS).contains(&self.index),
            SiteKind::ClipFinal => self.index == 0,
            SiteKind::UnetBottleneck | SiteKind::UnetOutput => self.index >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SiteSpec(self.to_string()))
        }
    }

    /// File-system friendly name, e.g. `unet_output_007`.
    pub fn file_stem(&self) -> String {
        format!("{}_{:03}", self.kind, self.index)
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.index)
    }
}

impl FromStr for SiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, index) = match s.split_once(':') {
            Some((k, i)) => (k, Some(i)),
            None => (s, None),
        };
        let kind: SiteKind = kind.trim().parse()?;
        let index = match index {
            Some(i) => i.trim().parse().map_err(|_| Error::SiteSpec(s.to_string()))?,
            None if kind == SiteKind::ClipFinal => 0,
            None => return Err(Error::SiteSpec(s.to_string())),
        };
        SiteId::new(kind, index)
    }
}

/// Site filter such as `clip_hidden:1..12`, `unet_output:10`, or
/// `unet_bottleneck` (all indices). Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteFilter {
    pub kind: SiteKind,
    pub first: Option<u32>,
    pub last: Option<u32>,
}

impl SiteFilter {
    pub fn matches(&self, site: &SiteId) -> bool {
        site.kind == self.kind
            && self.first.is_none_or(|f| site.index >= f)
            && self.last.is_none_or(|l| site.index <= l)
    }

    /// True if any filter in the list matches; an empty list matches all.
    pub fn any_matches(filters: &[SiteFilter], site: &SiteId) -> bool {
        filters.is_empty() || filters.iter().any(|f| f.matches(site))
    }
}

impl FromStr for SiteFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::SiteSpec(s.to_string());
        let (kind, range) = match s.split_once(':') {
            Some((k, r)) => (k.trim().parse::<SiteKind>()?, Some(r.trim())),
            None => (s.trim().parse::<SiteKind>()?, None),
        };
        let (first, last) = match range {
            None | Some("") => (None, None),
            Some(r) => match r.split_once("..") {
                Some((a, b)) => {
                    let a = a.trim();
                    let b = b.trim().trim_start_matches('=');
                    let a = if a.is_empty() { None } else { Some(a.parse().map_err(|_| bad())?) };
                    let b = if b.is_empty() { None } else { Some(b.parse().map_err(|_| bad())?) };
                    (a, b)
                }
                None => {
                    let v: u32 = r.parse().map_err(|_| bad())?;
                    (Some(v), Some(v))
                }
            },
        };
        if let (Some(a), Some(b)) = (first, last) {
            if a > b {
                return Err(bad());
            }
        }
        Ok(SiteFilter { kind, first, last })
    }
}

impl fmt::Display for SiteFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.first, self.last) {
            (None, None) => write!(f, "{}", self.kind),
            (Some(a), Some(b)) if a == b => write!(f, "{}:{}", self.kind, a),
            (a, b) => write!(
                f,
                "{}:{}..{}",
                self.kind,
                a.map(|v| v.to_string()).unwrap_or_default(),
                b.map(|v| v.to_string()).unwrap_or_default()
            ),
        }
    }
}
