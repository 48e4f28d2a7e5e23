//! Raw video container, augmentation operators and synthetic scenes.

mod augment;
mod container;
mod synth;

pub use augment::{apply_gray_shift, apply_salt_pepper, augment_frames, augment_video, AugmentSpec, Draw};
pub use container::{read_video, read_video_all, write_video, Video, VideoReader, VideoWriter, MAGIC};
pub use synth::{labels_path, synth_scene, BackgroundKind, GroundTruth, SynthScene};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imgproc::GrayImage;

/// One 8-bit grayscale frame and its position in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub image: GrayImage,
}

impl Frame {
    pub fn new(index: u64, image: GrayImage) -> Self {
        Self { index, image }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn pixels(&self) -> &[u8] {
        self.image.data()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub width: u32,
    pub height: u32,
    pub fps: u16,
    pub frame_count: u32,
}

impl VideoMeta {
    pub const MIN_DIM: u32 = 32;

    pub fn validate(&self) -> Result<()> {
        if self.fps < 1 {
            return invalid("fps must be at least 1");
        }
        if self.width < Self::MIN_DIM || self.height < Self::MIN_DIM {
            return invalid(format!(
                "video must be at least {0}x{0}, got {1}x{2}",
                Self::MIN_DIM,
                self.width,
                self.height
            ));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }
}

/// SplitMix64 finalizer, used to derive independent per-frame seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
