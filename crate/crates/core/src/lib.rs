//! Measures and closes the amortization gap of learned video entropy models.
//!
//! A learned codec codes its side latents with per-channel factorized pmfs and
//! its main latents with discretized Gaussians picked from a fixed scale table.
//! Both models are trained once and amortized over a dataset, so on any given
//! video they waste bits relative to the latents' own statistics. This crate
//!
//! - measures that waste ([`bit_accounting`]),
//! - refits the worst tables with small parametric models whose 10-bit
//!   parameters are signalled per frame and reused across inter frames
//!   ([`reparam_fit`], [`selector`]),
//! - and produces real, decodable bitstreams with a range coder
//!   ([`entropy_coder`], [`container_io`], [`codec`]).

pub mod analysis;
pub mod bit_accounting;
pub mod bits;
pub mod codec;
pub mod container_io;
pub mod entropy_coder;
pub mod latent_model;
pub mod reparam_fit;
pub mod selector;
pub mod synth;
pub mod verify;

use std::fmt;
use std::str::FromStr;

/// Frame coding type. Intra frames carry no motion information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Intra,
    Predicted,
    Bidirectional,
}

impl FrameKind {
    pub const ALL: [FrameKind; 3] = [FrameKind::Intra, FrameKind::Predicted, FrameKind::Bidirectional];

    pub fn code(self) -> u8 {
        match self {
            FrameKind::Intra => 0,
            FrameKind::Predicted => 1,
            FrameKind::Bidirectional => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FrameKind::Intra),
            1 => Some(FrameKind::Predicted),
            2 => Some(FrameKind::Bidirectional),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            FrameKind::Intra => 'I',
            FrameKind::Predicted => 'P',
            FrameKind::Bidirectional => 'B',
        }
    }

    pub fn is_inter(self) -> bool {
        self != FrameKind::Intra
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for FrameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "I" | "i" => Ok(FrameKind::Intra),
            "P" | "p" => Ok(FrameKind::Predicted),
            "B" | "b" => Ok(FrameKind::Bidirectional),
            other => Err(format!("unknown frame kind {other:?}")),
        }
    }
}

/// The four information types of a frame, in bitstream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamKind {
    MotionSide,
    MotionMain,
    ResidualSide,
    ResidualMain,
}

impl StreamKind {
    pub const ALL: [StreamKind; 4] = [
        StreamKind::MotionSide,
        StreamKind::MotionMain,
        StreamKind::ResidualSide,
        StreamKind::ResidualMain,
    ];

    /// Bit of this stream in a presence mask.
    pub fn mask_bit(self) -> u8 {
        1 << self as u8
    }

    pub fn is_motion(self) -> bool {
        matches!(self, StreamKind::MotionSide | StreamKind::MotionMain)
    }

    /// Side streams use factorized models, main streams the hyperprior.
    pub fn is_side(self) -> bool {
        matches!(self, StreamKind::MotionSide | StreamKind::ResidualSide)
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::MotionSide => "motion-side",
            StreamKind::MotionMain => "motion-main",
            StreamKind::ResidualSide => "residual-side",
            StreamKind::ResidualMain => "residual-main",
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
