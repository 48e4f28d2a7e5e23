//! `RGV1` raw grayscale container.
//!
//! Layout (little-endian): magic `"RGV1"`, `u32` width, `u32` height,
//! `u16` fps, `u32` frame count, then `frame_count` frames of
//! `width × height` bytes each, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Frame, VideoMeta};
use crate::error::{invalid, Error, Result};
use crate::imgproc::GrayImage;

pub const MAGIC: &[u8; 4] = b"RGV1";
const HEADER_LEN: u64 = 18;

/// A fully decoded video.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub meta: VideoMeta,
    pub frames: Vec<Frame>,
}

/// Streaming frame reader over any byte source.
pub struct VideoReader<R> {
    inner: R,
    meta: VideoMeta,
    next: u32,
    offset: u64,
}

/// Reads as many bytes as available into `buf`; returns the count.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

impl<R: Read> VideoReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut hdr = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut inner, &mut hdr)?;
        if got < 4 || &hdr[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"RGV1\"",
                String::from_utf8_lossy(&hdr[..got.min(4)])
            )));
        }
        if got < hdr.len() {
            return Err(Error::Corrupt {
                offset: got as u64,
                reason: "truncated header".into(),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(hdr[i..i + 4].try_into().unwrap());
        let meta = VideoMeta {
            width: u32_at(4),
            height: u32_at(8),
            fps: u16::from_le_bytes([hdr[12], hdr[13]]),
            frame_count: u32_at(14),
        };
        if meta.width == 0 || meta.height == 0 {
            return Err(Error::Format(format!("zero frame size {}x{}", meta.width, meta.height)));
        }
        Ok(Self {
            inner,
            meta,
            next: 0,
            offset: HEADER_LEN,
        })
    }

    pub fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    /// Next frame, `None` after the last one the header announced.
    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        if self.next >= self.meta.frame_count {
            return Ok(None);
        }
        let mut buf = vec![0u8; self.meta.frame_len()];
        let got = read_full(&mut self.inner, &mut buf)?;
        if got < buf.len() {
            return Err(Error::Corrupt {
                offset: self.offset + got as u64,
                reason: format!("frame {} truncated: expected {} bytes, got {got}", self.next, buf.len()),
            });
        }
        self.offset += got as u64;
        let (w, h) = self.meta.dims();
        let frame = Frame::new(self.next as u64, GrayImage::from_vec(w, h, buf)?);
        self.next += 1;
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for VideoReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Opens a video file for streaming.
pub fn read_video(path: impl AsRef<Path>) -> Result<(VideoMeta, VideoReader<BufReader<File>>)> {
    let reader = VideoReader::new(BufReader::new(File::open(path)?))?;
    Ok((*reader.meta(), reader))
}

/// Reads a whole video into memory.
pub fn read_video_all(path: impl AsRef<Path>) -> Result<Video> {
    let (meta, reader) = read_video(path)?;
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok(Video { meta, frames })
}

/// Streaming writer; the frame count is fixed by the header.
pub struct VideoWriter<W: Write> {
    inner: W,
    meta: VideoMeta,
    written: u32,
}

impl<W: Write> VideoWriter<W> {
    pub fn new(mut inner: W, meta: VideoMeta) -> Result<Self> {
        if meta.width == 0 || meta.height == 0 {
            return invalid("video dimensions must be positive");
        }
        inner.write_all(MAGIC)?;
        inner.write_all(&meta.width.to_le_bytes())?;
        inner.write_all(&meta.height.to_le_bytes())?;
        inner.write_all(&meta.fps.to_le_bytes())?;
        inner.write_all(&meta.frame_count.to_le_bytes())?;
        Ok(Self {
            inner,
            meta,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<()> {
        let (w, h) = self.meta.dims();
        if frame.width() != w || frame.height() != h {
            return Err(Error::InvalidArgument(format!(
                "frame {} is {}x{}, video is {w}x{h}",
                frame.index,
                frame.width(),
                frame.height()
            )));
        }
        if self.written >= self.meta.frame_count {
            return invalid(format!("more than {} frames written", self.meta.frame_count));
        }
        self.inner.write_all(frame.pixels())?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.meta.frame_count {
            return invalid(format!(
                "header announces {} frames, {} written",
                self.meta.frame_count, self.written
            ));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes `frames` as an `RGV1` file; their count must equal
/// `meta.frame_count`.
pub fn write_video<'a>(
    meta: &VideoMeta,
    frames: impl IntoIterator<Item = &'a Frame>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = VideoWriter::new(BufWriter::new(File::create(path)?), *meta)?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}
