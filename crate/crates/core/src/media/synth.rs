//! Programmatically generated media: synthetic motion clips for the bench
//! fixture set, plain audio clips, and "frame index" videos whose frames
//! encode their own position (for tests that need no codec).

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::avi::{self, PcmFormat};
use super::{MediaError, VideoDecoder, VideoInfo};

pub const PCM_16K_MONO: PcmFormat = PcmFormat {
    channels: 1,
    sample_rate: 16_000,
    bits_per_sample: 16,
};

fn pcm_samples(secs: f64, mut sample: impl FnMut(f64) -> f64) -> Vec<u8> {
    let n = (secs * PCM_16K_MONO.sample_rate as f64).round() as usize;
    (0..n)
        .flat_map(|i| {
            let t = i as f64 / PCM_16K_MONO.sample_rate as f64;
            ((sample(t).clamp(-1.0, 1.0) * i16::MAX as f64) as i16).to_le_bytes()
        })
        .collect()
}

pub fn silent_pcm(secs: f64) -> Vec<u8> {
    pcm_samples(secs, |_| 0.0)
}

/// A two-tone "speech-like" signal; distinct seeds give distinct clips.
pub fn voice_pcm(secs: f64, seed: u32) -> Vec<u8> {
    let base = 140.0 + f64::from(seed % 17) * 11.0;
    pcm_samples(secs, |t| {
        let envelope = (t * 3.0 * std::f64::consts::PI).sin().abs();
        0.4 * envelope * ((t * base * std::f64::consts::TAU).sin() + 0.5 * (t * base * 2.7 * std::f64::consts::TAU).sin())
    })
}

pub fn silent_wav(secs: f64) -> Vec<u8> {
    avi::wav_from_pcm(PCM_16K_MONO, &silent_pcm(secs))
}

pub fn voice_wav(secs: f64, seed: u32) -> Vec<u8> {
    avi::wav_from_pcm(PCM_16K_MONO, &voice_pcm(secs, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMotion {
    Wave,
    Jump,
    Spin,
    Walk,
    Stand,
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Draws a blocky figure mid-motion at time `t` seconds.
pub fn draw_figure(motion: SyntheticMotion, t: f64, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([200, 205, 210]));
    let (w, h) = (width as f64, height as f64);
    let phase = t * std::f64::consts::TAU;
    let (mut cx, mut ground) = (w / 2.0, h * 0.9);
    let mut torso_half = w * 0.06;
    match motion {
        SyntheticMotion::Walk => cx = w * (0.15 + 0.7 * (t / 3.0).fract()),
        SyntheticMotion::Jump => ground -= h * 0.15 * (phase.sin().abs()),
        SyntheticMotion::Spin => torso_half *= 0.3 + 0.7 * phase.cos().abs(),
        SyntheticMotion::Wave | SyntheticMotion::Stand => {}
    }
    let body = Rgb([40, 60, 120]);
    let skin = Rgb([230, 180, 140]);
    let torso_top = ground - h * 0.55;
    // legs
    let stride = if motion == SyntheticMotion::Walk { (phase * 2.0).sin() * w * 0.03 } else { 0.0 };
    fill_rect(&mut img, (cx - torso_half + stride) as i64, (ground - h * 0.25) as i64, (cx - 1.0 + stride) as i64, ground as i64, body);
    fill_rect(&mut img, (cx + 1.0 - stride) as i64, (ground - h * 0.25) as i64, (cx + torso_half - stride) as i64, ground as i64, body);
    // torso and head
    fill_rect(&mut img, (cx - torso_half) as i64, torso_top as i64, (cx + torso_half) as i64, (ground - h * 0.25) as i64, body);
    fill_rect(&mut img, (cx - w * 0.04) as i64, (torso_top - h * 0.12) as i64, (cx + w * 0.04) as i64, torso_top as i64, skin);
    // right arm
    let arm_len = h * 0.2;
    let (ax, ay) = match motion {
        SyntheticMotion::Wave => (cx + torso_half + w * 0.05 * (phase * 2.0).sin(), torso_top - arm_len),
        _ => (cx + torso_half + 2.0, torso_top + arm_len),
    };
    let (x0, x1) = ((cx + torso_half).min(ax), (cx + torso_half).max(ax) + 3.0);
    let (y0, y1) = (torso_top.min(ay), torso_top.max(ay) + 3.0);
    fill_rect(&mut img, x0 as i64, y0 as i64, x1 as i64, y1 as i64, skin);
    // left arm hangs
    fill_rect(&mut img, (cx - torso_half - 3.0) as i64, torso_top as i64, (cx - torso_half) as i64, (torso_top + arm_len) as i64, skin);
    img
}

fn jpeg(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, 85);
    img.write_with_encoder(encoder).expect("in-memory jpeg");
    out.into_inner()
}

/// MJPEG AVI of `motion`, with `audio` PCM embedded when given.
pub fn motion_clip(
    motion: SyntheticMotion,
    fps: u32,
    secs: f64,
    width: u32,
    height: u32,
    audio: Option<&[u8]>,
) -> Vec<u8> {
    let n = (secs * fps as f64).round() as usize;
    let frames: Vec<Vec<u8>> = (0..n)
        .map(|i| jpeg(&draw_figure(motion, i as f64 / fps as f64, width, height)))
        .collect();
    avi::write_mjpeg(width, height, fps, &frames, audio.map(|a| (PCM_16K_MONO, a)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticClipSpec {
    pub id: &'static str,
    pub motion: SyntheticMotion,
    pub title: &'static str,
    pub label: &'static str,
}

pub const BENCH_CLIPS: [SyntheticClipSpec; 5] = [
    SyntheticClipSpec {
        id: "clip-wave",
        motion: SyntheticMotion::Wave,
        title: "Waving hello",
        label: "a person raises the right arm and waves the hand from side to side",
    },
    SyntheticClipSpec {
        id: "clip-jump",
        motion: SyntheticMotion::Jump,
        title: "Jumping in place",
        label: "a person jumps up and down in place with both feet",
    },
    SyntheticClipSpec {
        id: "clip-spin",
        motion: SyntheticMotion::Spin,
        title: "Turning around",
        label: "a person turns around in a full circle on the spot",
    },
    SyntheticClipSpec {
        id: "clip-walk",
        motion: SyntheticMotion::Walk,
        title: "Walking across the room",
        label: "a person walks forward from the left side of the room to the right",
    },
    SyntheticClipSpec {
        id: "clip-stand",
        motion: SyntheticMotion::Stand,
        title: "Standing idle",
        label: "a person stands still with the arms resting at the sides",
    },
];

pub const BENCH_FPS: u32 = 30;
pub const BENCH_SECS: f64 = 3.0;
pub const BENCH_SIZE: (u32, u32) = (96, 72);

/// Writes the five bench clips under `dir/clips/` and `dir/manifest.jsonl`.
pub fn write_bench_fixtures(dir: &Path) -> std::io::Result<PathBuf> {
    let clips = dir.join("clips");
    std::fs::create_dir_all(&clips)?;
    let mut manifest = String::new();
    for spec in &BENCH_CLIPS {
        let file = format!("{}.avi", spec.id);
        let bytes = motion_clip(spec.motion, BENCH_FPS, BENCH_SECS, BENCH_SIZE.0, BENCH_SIZE.1, None);
        std::fs::write(clips.join(&file), bytes)?;
        let line = serde_json::json!({
            "id": spec.id,
            "video": format!("clips/{file}"),
            "label": spec.label,
            "title": spec.title,
        });
        manifest.push_str(&line.to_string());
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

/// The performance fixture used in service and engine tests: a 2 s waving
/// clip with separate audio, the same clip with the audio embedded, and a
/// silent clip.
pub struct PerformanceFixture {
    pub video: Vec<u8>,
    pub audio: Vec<u8>,
    pub muxed: Vec<u8>,
    pub silence: Vec<u8>,
}

pub fn performance_fixture() -> PerformanceFixture {
    let pcm = voice_pcm(2.0, 7);
    PerformanceFixture {
        video: motion_clip(SyntheticMotion::Wave, 30, 2.0, 160, 120, None),
        audio: avi::wav_from_pcm(PCM_16K_MONO, &pcm),
        muxed: motion_clip(SyntheticMotion::Wave, 30, 2.0, 160, 120, Some(&pcm)),
        silence: silent_wav(2.0),
    }
}

const INDEX_MAGIC: &[u8; 4] = b"SYNV";

/// A container-free video: header only, frame `i` is a solid colour
/// encoding `i`.
pub fn index_video(fps: f64, frame_count: u32) -> Vec<u8> {
    let mut out = INDEX_MAGIC.to_vec();
    out.extend_from_slice(&fps.to_le_bytes());
    out.extend_from_slice(&frame_count.to_le_bytes());
    out
}

pub fn index_color(i: usize) -> Rgb<u8> {
    Rgb([(i & 0xFF) as u8, ((i >> 8) & 0xFF) as u8, 77])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IndexVideoDecoder;

impl IndexVideoDecoder {
    fn header(bytes: &[u8]) -> Result<(f64, usize), MediaError> {
        if bytes.len() != 16 || &bytes[..4] != INDEX_MAGIC {
            return Err(MediaError::Decode("not an index video".into()));
        }
        let fps = f64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        Ok((fps, count))
    }
}

impl VideoDecoder for IndexVideoDecoder {
    fn probe(&self, bytes: &[u8]) -> Result<VideoInfo, MediaError> {
        let (fps, frame_count) = Self::header(bytes)?;
        Ok(VideoInfo {
            fps,
            frame_count,
            width: 8,
            height: 8,
        })
    }

    fn decode_frames(&self, bytes: &[u8], indices: &[usize]) -> Result<Vec<RgbImage>, MediaError> {
        let (_, count) = Self::header(bytes)?;
        indices
            .iter()
            .map(|&i| {
                if i >= count {
                    return Err(MediaError::Decode(format!("frame {i} out of range")));
                }
                Ok(RgbImage::from_pixel(8, 8, index_color(i)))
            })
            .collect()
    }
}
