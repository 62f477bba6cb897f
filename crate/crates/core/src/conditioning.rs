//! Structured prompts and their fixed block one-hot embedding.
//!
//! A prompt is factored into a motion class, appearance attributes and
//! background attributes. The embedding concatenates one block per factor so
//! that dropping appearance and background is an exact zeroing of known
//! coordinates.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident, $field:literal, [$($variant:ident => $text:literal),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn parse(text: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == text)
                    .ok_or_else(|| VmcError::UnknownCategory {
                        field: $field,
                        value: text.to_string(),
                    })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                Self::parse(&text).map_err(serde::de::Error::custom)
            }
        }
    };
}

vocabulary!(
    /// What the subject does over the clip.
    MotionClass, "motion", [
        TranslateRight => "translate-right",
        TranslateLeft => "translate-left",
        TranslateUp => "translate-up",
        TranslateDown => "translate-down",
        DiagonalDown => "diagonal-down",
        DiagonalUp => "diagonal-up",
        Bounce => "bounce",
        Orbit => "orbit",
    ]
);

vocabulary!(Shape, "shape", [
    Square => "square",
    Disk => "disk",
    Diamond => "diamond",
    Plus => "plus",
    Cross => "cross",
    Triangle => "triangle",
    HBar => "hbar",
    VBar => "vbar",
]);

vocabulary!(IntensityBand, "intensity", [
    Dim => "dim",
    Medium => "medium",
    Bright => "bright",
    Vivid => "vivid",
]);

vocabulary!(Texture, "texture", [
    Flat => "flat",
    Stripes => "stripes",
    Checker => "checker",
    Grain => "grain",
]);

vocabulary!(BackgroundLevel, "background level", [
    Black => "black",
    Dark => "dark",
    Gray => "gray",
    Pale => "pale",
]);

impl MotionClass {
    /// Accepts the canonical names plus a couple of everyday synonyms.
    pub fn parse_loose(text: &str) -> Result<Self> {
        match text {
            "walk" | "walk-forward" => Ok(MotionClass::TranslateRight),
            "walk-backward" => Ok(MotionClass::TranslateLeft),
            other => Self::parse(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AppearanceAttr {
    Shape(Shape),
    Intensity(IntensityBand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackgroundAttr {
    Texture(Texture),
    Level(BackgroundLevel),
}

impl AppearanceAttr {
    pub fn name(self) -> &'static str {
        match self {
            AppearanceAttr::Shape(s) => s.name(),
            AppearanceAttr::Intensity(b) => b.name(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Shape::parse(text)
            .map(AppearanceAttr::Shape)
            .or_else(|_| IntensityBand::parse(text).map(AppearanceAttr::Intensity))
            .map_err(|_| VmcError::UnknownCategory {
                field: "appearance",
                value: text.to_string(),
            })
    }
}

impl BackgroundAttr {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundAttr::Texture(t) => t.name(),
            BackgroundAttr::Level(l) => l.name(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Texture::parse(text)
            .map(BackgroundAttr::Texture)
            .or_else(|_| BackgroundLevel::parse(text).map(BackgroundAttr::Level))
            .map_err(|_| VmcError::UnknownCategory {
                field: "background",
                value: text.to_string(),
            })
    }
}

/// Factored description of a clip: the stand-in for a text prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructuredPrompt {
    pub motion: MotionClass,
    pub appearance: Vec<AppearanceAttr>,
    pub background: Vec<BackgroundAttr>,
}

impl StructuredPrompt {
    pub fn new(motion: MotionClass) -> Self {
        Self {
            motion,
            appearance: Vec::new(),
            background: Vec::new(),
        }
    }

    pub fn full(
        motion: MotionClass,
        shape: Shape,
        intensity: IntensityBand,
        texture: Texture,
        level: BackgroundLevel,
    ) -> Self {
        Self {
            motion,
            appearance: vec![
                AppearanceAttr::Shape(shape),
                AppearanceAttr::Intensity(intensity),
            ],
            background: vec![BackgroundAttr::Texture(texture), BackgroundAttr::Level(level)],
        }
    }

    pub fn shape(&self) -> Option<Shape> {
        self.appearance.iter().find_map(|a| match a {
            AppearanceAttr::Shape(s) => Some(*s),
            _ => None,
        })
    }

    pub fn intensity(&self) -> Option<IntensityBand> {
        self.appearance.iter().find_map(|a| match a {
            AppearanceAttr::Intensity(b) => Some(*b),
            _ => None,
        })
    }

    pub fn texture(&self) -> Option<Texture> {
        self.background.iter().find_map(|a| match a {
            BackgroundAttr::Texture(t) => Some(*t),
            _ => None,
        })
    }

    pub fn level(&self) -> Option<BackgroundLevel> {
        self.background.iter().find_map(|a| match a {
            BackgroundAttr::Level(l) => Some(*l),
            _ => None,
        })
    }

    /// True when the prompt carries nothing but its motion class.
    pub fn is_appearance_invariant(&self) -> bool {
        self.appearance.is_empty() && self.background.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PromptJson::from(self)).expect("prompt json")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PromptJson = serde_json::from_str(text)?;
        raw.try_into()
    }
}

impl fmt::Display for StructuredPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.motion)?;
        for a in &self.appearance {
            write!(f, " {}", a.name())?;
        }
        if !self.background.is_empty() {
            write!(f, " on")?;
            for b in &self.background {
                write!(f, " {}", b.name())?;
            }
        }
        Ok(())
    }
}

/// `{"motion": str, "appearance": [str], "background": [str]}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptJson {
    pub motion: String,
    #[serde(default)]
    pub appearance: Vec<String>,
    #[serde(default)]
    pub background: Vec<String>,
}

impl From<&StructuredPrompt> for PromptJson {
    fn from(p: &StructuredPrompt) -> Self {
        Self {
            motion: p.motion.name().to_string(),
            appearance: p.appearance.iter().map(|a| a.name().to_string()).collect(),
            background: p.background.iter().map(|b| b.name().to_string()).collect(),
        }
    }
}

impl TryFrom<PromptJson> for StructuredPrompt {
    type Error = VmcError;

    fn try_from(raw: PromptJson) -> Result<Self> {
        Ok(Self {
            motion: MotionClass::parse_loose(&raw.motion)?,
            appearance: raw
                .appearance
                .iter()
                .map(|s| AppearanceAttr::parse(s))
                .collect::<Result<_>>()?,
            background: raw
                .background
                .iter()
                .map(|s| BackgroundAttr::parse(s))
                .collect::<Result<_>>()?,
        })
    }
}

impl Serialize for StructuredPrompt {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PromptJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StructuredPrompt {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PromptJson::deserialize(d)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

pub const MOTION_BLOCK: Range<usize> = 0..8;
pub const SHAPE_BLOCK: Range<usize> = 8..16;
pub const INTENSITY_BLOCK: Range<usize> = 16..20;
pub const TEXTURE_BLOCK: Range<usize> = 20..24;
pub const LEVEL_BLOCK: Range<usize> = 24..28;
/// Shape and intensity coordinates.
pub const APPEARANCE_BLOCK: Range<usize> = 8..20;
/// Texture and level coordinates.
pub const BACKGROUND_BLOCK: Range<usize> = 20..28;
pub const EMBED_DIM: usize = 28;

/// The conditioning vector fed to the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    embedding: [f64; EMBED_DIM],
}

impl Conditioning {
    /// All-zero conditioning, used by stages that are not prompt-driven.
    pub fn null() -> Self {
        Self {
            embedding: [0.0; EMBED_DIM],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let embedding: [f64; EMBED_DIM] = values
            .try_into()
            .map_err(|_| VmcError::shape(EMBED_DIM, values.len()))?;
        Ok(Self { embedding })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.embedding
    }

    pub fn dim(&self) -> usize {
        EMBED_DIM
    }
}

pub fn encode_prompt(p: &StructuredPrompt) -> Conditioning {
    let mut e = [0.0; EMBED_DIM];
    e[MOTION_BLOCK.start + p.motion.index()] = 1.0;
    for a in &p.appearance {
        match a {
            AppearanceAttr::Shape(s) => e[SHAPE_BLOCK.start + s.index()] = 1.0,
            AppearanceAttr::Intensity(b) => e[INTENSITY_BLOCK.start + b.index()] = 1.0,
        }
    }
    for b in &p.background {
        match b {
            BackgroundAttr::Texture(t) => e[TEXTURE_BLOCK.start + t.index()] = 1.0,
            BackgroundAttr::Level(l) => e[LEVEL_BLOCK.start + l.index()] = 1.0,
        }
    }
    Conditioning { embedding: e }
}

/// Strips appearance and background, keeping only the motion class.
pub fn appearance_invariant(p: &StructuredPrompt) -> StructuredPrompt {
    StructuredPrompt::new(p.motion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn walk_prompt() -> StructuredPrompt {
        StructuredPrompt::full(
            MotionClass::TranslateRight,
            Shape::Disk,
            IntensityBand::Bright,
            Texture::Stripes,
            BackgroundLevel::Dark,
        )
    }

    #[test]
    fn motion_only_prompt_has_empty_blocks() {
        let c = encode_prompt(&StructuredPrompt::new(MotionClass::Bounce));
        let e = c.as_slice();
        assert!(e[APPEARANCE_BLOCK].iter().all(|v| *v == 0.0));
        assert!(e[BACKGROUND_BLOCK].iter().all(|v| *v == 0.0));
        assert_eq!(e[MOTION_BLOCK].iter().sum::<f64>(), 1.0);
        assert_eq!(e[MOTION_BLOCK.start + MotionClass::Bounce.index()], 1.0);
    }

    #[test]
    fn identical_prompts_identical_embeddings() {
        assert_eq!(encode_prompt(&walk_prompt()), encode_prompt(&walk_prompt()));
    }

    #[test]
    fn background_change_touches_only_background_block() {
        let a = walk_prompt();
        let mut b = walk_prompt();
        b.background = vec![
            BackgroundAttr::Texture(Texture::Grain),
            BackgroundAttr::Level(BackgroundLevel::Pale),
        ];
        let (ea, eb) = (encode_prompt(&a), encode_prompt(&b));
        for i in 0..EMBED_DIM {
            let differs = ea.as_slice()[i] != eb.as_slice()[i];
            if differs {
                assert!(BACKGROUND_BLOCK.contains(&i), "coordinate {i} changed");
            }
        }
        assert_ne!(ea, eb);
    }

    #[test]
    fn invariant_prompt_strips_context() {
        let inv = appearance_invariant(&walk_prompt());
        assert_eq!(inv, StructuredPrompt::new(MotionClass::TranslateRight));
        let bounce = StructuredPrompt::new(MotionClass::Bounce);
        assert_eq!(appearance_invariant(&bounce), bounce);
    }

    #[test]
    fn prompt_json_shape() {
        let p = walk_prompt();
        let text = p.to_json();
        assert_eq!(
            text,
            r#"{"motion":"translate-right","appearance":["disk","bright"],"background":["stripes","dark"]}"#
        );
        assert_eq!(StructuredPrompt::from_json(&text).unwrap(), p);
        let walk = StructuredPrompt::from_json(r#"{"motion":"walk","appearance":["square"]}"#)
            .unwrap();
        assert_eq!(walk.motion, MotionClass::TranslateRight);
        assert!(matches!(
            StructuredPrompt::from_json(r#"{"motion":"walk","appearance":["duck"]}"#),
            Err(VmcError::UnknownCategory { .. })
        ));
    }

    fn arb_prompt() -> impl Strategy<Value = StructuredPrompt> {
        (
            0..8usize,
            proptest::option::of(0..8usize),
            proptest::option::of(0..4usize),
            proptest::option::of(0..4usize),
            proptest::option::of(0..4usize),
        )
            .prop_map(|(m, s, i, t, l)| StructuredPrompt {
                motion: MotionClass::from_index(m).unwrap(),
                appearance: s
                    .map(|s| AppearanceAttr::Shape(Shape::from_index(s).unwrap()))
                    .into_iter()
                    .chain(i.map(|i| {
                        AppearanceAttr::Intensity(IntensityBand::from_index(i).unwrap())
                    }))
                    .collect(),
                background: t
                    .map(|t| BackgroundAttr::Texture(Texture::from_index(t).unwrap()))
                    .into_iter()
                    .chain(l.map(|l| {
                        BackgroundAttr::Level(BackgroundLevel::from_index(l).unwrap())
                    }))
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn invariance_is_idempotent_and_zeroes_blocks(p in arb_prompt()) {
            let once = appearance_invariant(&p);
            prop_assert_eq!(appearance_invariant(&once), once.clone());
            prop_assert_eq!(once.motion, p.motion);
            let e = encode_prompt(&once);
            prop_assert!(e.as_slice()[APPEARANCE_BLOCK].iter().all(|v| *v == 0.0));
            prop_assert!(e.as_slice()[BACKGROUND_BLOCK].iter().all(|v| *v == 0.0));
        }

        #[test]
        fn json_round_trip(p in arb_prompt()) {
            prop_assert_eq!(StructuredPrompt::from_json(&p.to_json()).unwrap(), p);
        }
    }
}
