use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The registered degradation families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    GaussianBlur,
    GaussianNoise,
    JpegCompression,
    ResizeRescale,
    SaturationShift,
    ContrastChange,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 6] = [
        DegradationKind::GaussianBlur,
        DegradationKind::GaussianNoise,
        DegradationKind::JpegCompression,
        DegradationKind::ResizeRescale,
        DegradationKind::SaturationShift,
        DegradationKind::ContrastChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::GaussianBlur => "gaussian_blur",
            DegradationKind::GaussianNoise => "gaussian_noise",
            DegradationKind::JpegCompression => "jpeg_compression",
            DegradationKind::ResizeRescale => "resize_rescale",
            DegradationKind::SaturationShift => "saturation_shift",
            DegradationKind::ContrastChange => "contrast_change",
        }
    }

    /// Stable small integer, used in random-stream keys.
    pub fn index(self) -> u64 {
        self as u64
    }

    /// Physical parameter range used by the default palette.
    pub fn default_range(self) -> (f32, f32) {
        match self {
            DegradationKind::GaussianBlur => (0.5, 4.0),
            DegradationKind::GaussianNoise => (0.01, 0.15),
            DegradationKind::JpegCompression => (10.0, 70.0),
            DegradationKind::ResizeRescale => (0.25, 0.9),
            DegradationKind::SaturationShift => (0.4, 1.6),
            DegradationKind::ContrastChange => (0.5, 1.5),
        }
    }

    /// Whether the kind degrades in two directions around an identity value
    /// of 1 (scale up or scale down).
    pub fn is_bidirectional(self) -> bool {
        matches!(
            self,
            DegradationKind::SaturationShift | DegradationKind::ContrastChange
        )
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Palette(format!("unknown degradation kind `{s}`")))
    }
}

/// One registered kind with its physical range and selection probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteEntry {
    pub kind: DegradationKind,
    /// Physical parameter bounds `(min, max)`; see [`DegradationKind::default_range`].
    pub range: (f32, f32),
    pub selection_probability: f32,
}

impl PaletteEntry {
    pub fn new(kind: DegradationKind, range: (f32, f32), selection_probability: f32) -> Self {
        Self {
            kind,
            range,
            selection_probability,
        }
    }

    pub fn with_default_range(kind: DegradationKind, selection_probability: f32) -> Self {
        Self::new(kind, kind.default_range(), selection_probability)
    }
}

/// A frozen set of degradation kinds that recipes are sampled from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, kind: DegradationKind) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.kind == kind)
    }

    /// All six kinds at their default ranges with selection probability 0.5.
    pub fn default_six() -> Self {
        Self::with_probability(0.5)
    }

    pub fn with_probability(p: f32) -> Self {
        register_palette(
            DegradationKind::ALL
                .iter()
                .map(|&k| PaletteEntry::with_default_range(k, p))
                .collect(),
        )
        .expect("default palette is valid")
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.entries).expect("palette serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Parses a JSON array of entries (the `--palette-config` file format).
    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<PaletteEntry> = serde_json::from_str(text)
            .map_err(|e| Error::Palette(format!("cannot parse palette config: {e}")))?;
        register_palette(entries)
    }
}

/// Validates and freezes a palette.
pub fn register_palette(entries: Vec<PaletteEntry>) -> Result<Palette> {
    if entries.is_empty() {
        return Err(Error::Palette("palette must contain at least one kind".into()));
    }
    for (i, e) in entries.iter().enumerate() {
        if entries[..i].iter().any(|o| o.kind == e.kind) {
            return Err(Error::Palette(format!("duplicate kind `{}`", e.kind)));
        }
        if !(0.0..=1.0).contains(&e.selection_probability) {
            return Err(Error::Palette(format!(
                "selection probability {} for `{}` is outside [0,1]",
                e.selection_probability, e.kind
            )));
        }
        let (lo, hi) = e.range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Palette(format!(
                "range ({lo}, {hi}) for `{}` is not an ordered finite interval",
                e.kind
            )));
        }
        let ok = match e.kind {
            DegradationKind::GaussianBlur => lo >= 0.0,
            DegradationKind::GaussianNoise => lo >= 0.0,
            DegradationKind::JpegCompression => lo >= 1.0 && hi <= 100.0,
            DegradationKind::ResizeRescale => lo > 0.0 && hi <= 1.0,
            DegradationKind::SaturationShift | DegradationKind::ContrastChange => {
                lo >= 0.0 && lo <= 1.0 && hi >= 1.0
            }
        };
        if !ok {
            return Err(Error::Palette(format!(
                "range ({lo}, {hi}) is not meaningful for `{}`",
                e.kind
            )));
        }
    }
    Ok(Palette { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_palette_has_six_kinds() {
        assert_eq!(Palette::default_six().len(), 6);
    }

    #[test]
    fn duplicate_kind_is_rejected() {
        let e = PaletteEntry::with_default_range(DegradationKind::GaussianNoise, 0.5);
        let err = register_palette(vec![e.clone(), e]).unwrap_err();
        assert!(matches!(err, Error::Palette(m) if m.contains("duplicate")));
    }

    #[test]
    fn empty_palette_is_rejected() {
        assert!(register_palette(vec![]).is_err());
    }

    #[test]
    fn bad_probability_is_rejected() {
        let e = PaletteEntry::with_default_range(DegradationKind::GaussianBlur, 1.5);
        assert!(register_palette(vec![e]).is_err());
    }

    #[test]
    fn json_round_trip_and_hash_stability() {
        let p = Palette::default_six();
        let json = serde_json::to_string(p.entries()).unwrap();
        let q = Palette::from_json(&json).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());
        assert_ne!(p.hash(), Palette::with_probability(0.3).hash());
    }

    #[test]
    fn kind_names_parse() {
        for k in DegradationKind::ALL {
            assert_eq!(k.as_str().parse::<DegradationKind>().unwrap(), k);
        }
        assert!("sharpen".parse::<DegradationKind>().is_err());
    }
}
