//! Performance capture ingest: frame sampling, transcription and motion
//! description.

pub mod avi;
pub mod synth;

use std::io::Cursor;
use std::sync::Arc;

use image::{DynamicImage, GenericImageView, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AudioClip, CompletionRequest, EncodedImage, Gateway, GatewayError, TokenUsage};
use crate::prompt::{Bindings, PromptError, TemplateId, TemplateRegistry};

/// Runtime sampling ratio: one frame per second of video.
pub const DEFAULT_FPS_SKIP_RATIO: f64 = 1.0;
pub const MAX_SAMPLED_FRAMES: usize = 60;
pub const MAX_FRAME_SIDE: u32 = 768;
pub const JPEG_QUALITY: u8 = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediaError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("cannot decode media: {0}")]
    Decode(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Stride between sampled frames: `int(fps * fps_skip_ratio)`, clamped to
/// at least 1.
pub fn compute_frames_to_skip(fps: f64, fps_skip_ratio: f64) -> Result<usize, MediaError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(MediaError::Validation(format!("fps must be positive, got {fps}")));
    }
    if !(fps_skip_ratio.is_finite() && fps_skip_ratio > 0.0) {
        return Err(MediaError::Validation(format!(
            "fps_skip_ratio must be positive, got {fps_skip_ratio}"
        )));
    }
    Ok(((fps * fps_skip_ratio) as usize).max(1))
}

/// Indices `0, k, 2k, ...` below `frame_count`, thinned uniformly to at most
/// `max_frames`.
pub fn sample_indices(frame_count: usize, stride: usize, max_frames: usize) -> Vec<usize> {
    if frame_count == 0 || max_frames == 0 {
        return Vec::new();
    }
    let stride = stride.max(1);
    let all: Vec<usize> = (0..frame_count).step_by(stride).collect();
    if all.len() <= max_frames {
        return all;
    }
    (0..max_frames).map(|j| all[j * all.len() / max_frames]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoInfo {
    pub fps: f64,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
}

/// Seam over video containers.
pub trait VideoDecoder: Send + Sync {
    fn probe(&self, bytes: &[u8]) -> Result<VideoInfo, MediaError>;

    /// Decodes the frames at `indices`, in the given order.
    fn decode_frames(&self, bytes: &[u8], indices: &[usize]) -> Result<Vec<RgbImage>, MediaError>;

    /// Audio carried inside the video container, as a standalone clip.
    fn extract_audio(&self, _bytes: &[u8]) -> Result<Option<Vec<u8>>, MediaError> {
        Ok(None)
    }
}

/// Motion-JPEG in an AVI container.
#[derive(Debug, Clone, Copy, Default)]
pub struct MjpegAviDecoder;

impl VideoDecoder for MjpegAviDecoder {
    fn probe(&self, bytes: &[u8]) -> Result<VideoInfo, MediaError> {
        let layout = avi::AviLayout::parse(bytes)?;
        Ok(VideoInfo {
            fps: layout.fps,
            frame_count: layout.frames.len(),
            width: layout.width,
            height: layout.height,
        })
    }

    fn decode_frames(&self, bytes: &[u8], indices: &[usize]) -> Result<Vec<RgbImage>, MediaError> {
        let layout = avi::AviLayout::parse(bytes)?;
        indices
            .iter()
            .map(|&i| {
                let range = layout
                    .frames
                    .get(i)
                    .ok_or_else(|| MediaError::Decode(format!("frame {i} out of range")))?;
                image::load_from_memory_with_format(&bytes[range.clone()], ImageFormat::Jpeg)
                    .map(|img| img.to_rgb8())
                    .map_err(|e| MediaError::Decode(format!("frame {i}: {e}")))
            })
            .collect()
    }

    fn extract_audio(&self, bytes: &[u8]) -> Result<Option<Vec<u8>>, MediaError> {
        let layout = avi::AviLayout::parse(bytes)?;
        Ok(layout.audio_wav(bytes))
    }
}

#[derive(Clone, PartialEq)]
pub struct VideoTrack {
    pub bytes: Vec<u8>,
    pub fps: f64,
    pub frame_count: usize,
}

impl VideoTrack {
    pub fn probe(bytes: Vec<u8>, decoder: &dyn VideoDecoder) -> Result<Self, MediaError> {
        if bytes.is_empty() {
            return Err(MediaError::Decode("empty video payload".into()));
        }
        let info = decoder.probe(&bytes)?;
        if info.frame_count == 0 {
            return Err(MediaError::Decode("video has no frames".into()));
        }
        Ok(Self {
            bytes,
            fps: info.fps,
            frame_count: info.frame_count,
        })
    }
}

impl std::fmt::Debug for VideoTrack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VideoTrack")
            .field("bytes", &self.bytes.len())
            .field("fps", &self.fps)
            .field("frame_count", &self.frame_count)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceCapture {
    pub video: VideoTrack,
    pub audio: AudioClip,
    pub duration_secs: f64,
}

impl PerformanceCapture {
    /// Probes `video` and pairs it with `audio`. With no separate audio
    /// track, audio embedded in the video container is used.
    pub fn from_uploads(
        video: Vec<u8>,
        audio: Option<Vec<u8>>,
        decoder: &dyn VideoDecoder,
    ) -> Result<Self, MediaError> {
        let video = VideoTrack::probe(video, decoder)?;
        let audio_bytes = match audio {
            Some(bytes) => bytes,
            None => decoder
                .extract_audio(&video.bytes)?
                .ok_or_else(|| MediaError::Validation("no audio track uploaded or embedded".into()))?,
        };
        let audio = AudioClip::from_bytes(audio_bytes)?;
        let capture = Self {
            duration_secs: video.frame_count as f64 / video.fps,
            video,
            audio,
        };
        capture.validate()?;
        Ok(capture)
    }

    pub fn validate(&self) -> Result<(), MediaError> {
        if self.video.fps.is_nan() || self.video.fps <= 0.0 {
            return Err(MediaError::Validation("fps must be positive".into()));
        }
        if self.duration_secs.is_nan() || self.duration_secs <= 0.0 {
            return Err(MediaError::Validation("duration must be positive".into()));
        }
        let expected = self.video.fps * self.duration_secs;
        if (self.video.frame_count as f64 - expected).abs() > 1.0 {
            return Err(MediaError::Validation(format!(
                "{} frames is inconsistent with {:.3} fps over {:.3} s",
                self.video.frame_count, self.video.fps, self.duration_secs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFrame {
    pub index: usize,
    pub image: EncodedImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceAnalysis {
    pub transcript: String,
    pub motion_description: String,
    pub sampled_frame_indices: Vec<usize>,
    pub token_usage: TokenUsage,
}

impl PerformanceAnalysis {
    pub fn validate(&self) -> Result<(), String> {
        if self.transcript.trim().is_empty() && self.motion_description.trim().is_empty() {
            return Err("analysis has neither a transcript nor a motion description".into());
        }
        if self.sampled_frame_indices.first().is_some_and(|&i| i != 0) {
            return Err("sampled frames must start at index 0".into());
        }
        if self.sampled_frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err("sampled frame indices must be strictly increasing".into());
        }
        Ok(())
    }
}

/// Scales so the longest side is at most `max_side`, then encodes JPEG.
pub fn encode_frame(frame: &RgbImage, max_side: u32, quality: u8) -> Result<EncodedImage, MediaError> {
    let (w, h) = frame.dimensions();
    let longest = w.max(h);
    let img = DynamicImage::ImageRgb8(frame.clone());
    let img = if longest > max_side {
        let scale = max_side as f64 / longest as f64;
        let nw = ((w as f64 * scale).round() as u32).max(1);
        let nh = ((h as f64 * scale).round() as u32).max(1);
        img.resize_exact(nw, nh, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    debug_assert!(img.dimensions().0.max(img.dimensions().1) <= max_side);
    let mut out = Cursor::new(Vec::new());
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    img.write_with_encoder(encoder)
        .map_err(|e| MediaError::Decode(format!("jpeg encode: {e}")))?;
    Ok(EncodedImage::jpeg(out.into_inner()))
}

/// Wording of the optional context line in the motion prompt.
pub fn context_line(context: Option<&str>) -> String {
    match context.map(str::trim).filter(|c| !c.is_empty()) {
        Some(c) => format!("Context: {c}\n"),
        None => String::new(),
    }
}

#[derive(Clone)]
pub struct MediaIngest {
    decoder: Arc<dyn VideoDecoder>,
    registry: Arc<TemplateRegistry>,
    pub max_frames: usize,
    pub max_side: u32,
    pub jpeg_quality: u8,
    pub max_duration_secs: f64,
}

impl std::fmt::Debug for MediaIngest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MediaIngest")
            .field("max_frames", &self.max_frames)
            .field("max_duration_secs", &self.max_duration_secs)
            .finish()
    }
}

impl MediaIngest {
    pub fn new(decoder: Arc<dyn VideoDecoder>, registry: Arc<TemplateRegistry>) -> Self {
        Self {
            decoder,
            registry,
            max_frames: MAX_SAMPLED_FRAMES,
            max_side: MAX_FRAME_SIDE,
            jpeg_quality: JPEG_QUALITY,
            max_duration_secs: 120.0,
        }
    }

    pub fn mjpeg(registry: Arc<TemplateRegistry>) -> Self {
        Self::new(Arc::new(MjpegAviDecoder), registry)
    }

    pub fn registry(&self) -> &Arc<TemplateRegistry> {
        &self.registry
    }

    pub fn decoder(&self) -> &dyn VideoDecoder {
        self.decoder.as_ref()
    }

    pub fn capture(&self, video: Vec<u8>, audio: Option<Vec<u8>>) -> Result<PerformanceCapture, MediaError> {
        let capture = PerformanceCapture::from_uploads(video, audio, self.decoder.as_ref())?;
        if capture.duration_secs > self.max_duration_secs {
            return Err(MediaError::Validation(format!(
                "capture lasts {:.1} s, over the {:.0} s limit",
                capture.duration_secs, self.max_duration_secs
            )));
        }
        Ok(capture)
    }

    pub fn sample_frames(
        &self,
        capture: &PerformanceCapture,
        fps_skip_ratio: f64,
    ) -> Result<Vec<SampledFrame>, MediaError> {
        capture.validate()?;
        self.sample_video(&capture.video, fps_skip_ratio)
    }

    /// Frame sampling for a video on its own, without an audio track.
    pub fn sample_video(&self, video: &VideoTrack, fps_skip_ratio: f64) -> Result<Vec<SampledFrame>, MediaError> {
        let stride = compute_frames_to_skip(video.fps, fps_skip_ratio)?;
        let indices = sample_indices(video.frame_count, stride, self.max_frames);
        let frames = self.decoder.decode_frames(&video.bytes, &indices)?;
        indices
            .into_iter()
            .zip(frames)
            .map(|(index, frame)| {
                Ok(SampledFrame {
                    index,
                    image: encode_frame(&frame, self.max_side, self.jpeg_quality)?,
                })
            })
            .collect()
    }

    /// Renders the motion prompt and asks the model to describe the frames.
    pub fn describe_motion(
        &self,
        gateway: &Gateway,
        frames: &[SampledFrame],
        context: Option<&str>,
        seed: Option<u64>,
    ) -> Result<(String, TokenUsage), MediaError> {
        let prompt = self.registry.render(
            TemplateId::MotionLabel,
            &Bindings::new().with("context", context_line(context)),
        )?;
        let mut request = CompletionRequest::text(prompt)
            .with_images(frames.iter().map(|f| f.image.clone()).collect())
            .with_temperature(0.2);
        request.max_output_tokens = 200;
        request.seed = seed;
        let completion = gateway.complete(&request)?;
        Ok((completion.text.trim().to_string(), completion.usage))
    }

    pub fn analyze_performance(
        &self,
        gateway: &Gateway,
        capture: &PerformanceCapture,
        fps_skip_ratio: Option<f64>,
        context: Option<&str>,
    ) -> Result<PerformanceAnalysis, MediaError> {
        let ratio = fps_skip_ratio.unwrap_or(DEFAULT_FPS_SKIP_RATIO);
        let frames = self.sample_frames(capture, ratio)?;
        let transcript = gateway.transcribe(&capture.audio)?;
        let (motion_description, token_usage) = self.describe_motion(gateway, &frames, context, None)?;
        Ok(PerformanceAnalysis {
            transcript: transcript.trim().to_string(),
            motion_description,
            sampled_frame_indices: frames.iter().map(|f| f.index).collect(),
            token_usage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Oracle: floor of the product, then the clamp.
    fn stride_oracle(fps: f64, ratio: f64) -> usize {
        ((fps * ratio).floor() as i64).max(1) as usize
    }

    #[test]
    fn published_strides() {
        assert_eq!(compute_frames_to_skip(30.0, 0.1).unwrap(), 3);
        assert_eq!(compute_frames_to_skip(30.0, 1.0).unwrap(), 30);
        assert_eq!(compute_frames_to_skip(24.0, 0.5).unwrap(), 12);
        assert_eq!(compute_frames_to_skip(8.0, 0.1).unwrap(), 1);
    }

    #[test]
    fn non_positive_inputs_rejected() {
        for (fps, ratio) in [(0.0, 1.0), (-30.0, 1.0), (30.0, 0.0), (30.0, -0.1), (f64::NAN, 1.0)] {
            assert!(matches!(
                compute_frames_to_skip(fps, ratio),
                Err(MediaError::Validation(_))
            ));
        }
    }

    #[test]
    fn index_arithmetic() {
        let stride = compute_frames_to_skip(30.0, 1.0).unwrap();
        assert_eq!(sample_indices(90, stride, 60), [0, 30, 60]);
        let dense = sample_indices(90, compute_frames_to_skip(30.0, 0.1).unwrap(), 60);
        assert_eq!(dense.len(), 30);
        assert!(dense.iter().enumerate().all(|(i, &f)| f == 3 * i));
        assert_eq!(sample_indices(1, 30, 60), [0]);
    }

    #[test]
    fn thinning_caps_the_count() {
        let idx = sample_indices(3600, 1, 60);
        assert_eq!(idx.len(), 60);
        assert_eq!(idx[0], 0);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn frames_are_downscaled_and_jpeg() {
        let frame = RgbImage::from_pixel(1920, 1080, image::Rgb([10, 200, 30]));
        let encoded = encode_frame(&frame, MAX_FRAME_SIDE, JPEG_QUALITY).unwrap();
        assert_eq!(encoded.media_type, "image/jpeg");
        let back = image::load_from_memory(&encoded.data).unwrap();
        assert_eq!(back.dimensions(), (768, 432));
        let small = encode_frame(&RgbImage::new(64, 48), MAX_FRAME_SIDE, JPEG_QUALITY).unwrap();
        assert_eq!(image::load_from_memory(&small.data).unwrap().dimensions(), (64, 48));
    }

    #[test]
    fn analysis_validation() {
        let ok = PerformanceAnalysis {
            transcript: "hi".into(),
            motion_description: String::new(),
            sampled_frame_indices: vec![0, 30],
            token_usage: TokenUsage::default(),
        };
        assert!(ok.validate().is_ok());
        let empty = PerformanceAnalysis {
            transcript: " ".into(),
            ..ok.clone()
        };
        assert!(empty.validate().is_err());
        let unordered = PerformanceAnalysis {
            sampled_frame_indices: vec![0, 30, 30],
            ..ok
        };
        assert!(unordered.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn stride_matches_floor_oracle(fps in 1e-3f64..=120.0, ratio in 1e-3f64..=2.0) {
            prop_assert_eq!(compute_frames_to_skip(fps, ratio).unwrap(), stride_oracle(fps, ratio));
        }

        #[test]
        fn count_formula_and_validity(frames in 1usize..2000, fps in 1.0f64..120.0, ratio in 0.01f64..2.0) {
            let k = compute_frames_to_skip(fps, ratio).unwrap();
            let idx = sample_indices(frames, k, usize::MAX);
            prop_assert_eq!(idx.len(), (frames - 1) / k + 1);
            prop_assert_eq!(idx[0], 0);
            prop_assert!(idx.iter().all(|&i| i < frames));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn larger_ratio_never_samples_more(frames in 1usize..3000, fps in 1.0f64..120.0, a in 0.01f64..2.0, b in 0.01f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let n = |r| sample_indices(frames, compute_frames_to_skip(fps, r).unwrap(), MAX_SAMPLED_FRAMES).len();
            prop_assert!(n(hi) <= n(lo));
        }
    }
}
