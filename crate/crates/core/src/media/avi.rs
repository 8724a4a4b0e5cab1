//! Minimal RIFF/AVI support for Motion-JPEG video with optional PCM audio.
//!
//! Enough to read what common capture tools write with an MJPEG codec and
//! to write the synthetic fixture clips.

use std::ops::Range;

use super::MediaError;

fn fourcc(bytes: &[u8]) -> [u8; 4] {
    [bytes[0], bytes[1], bytes[2], bytes[3]]
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(fourcc(&bytes[at..]))
}

fn decode_err(msg: impl Into<String>) -> MediaError {
    MediaError::Decode(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcmFormat {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
}

#[derive(Debug, Clone, Default)]
struct StreamInfo {
    kind: [u8; 4],
    handler: [u8; 4],
    scale: u32,
    rate: u32,
    pcm: Option<PcmFormat>,
}

/// Parsed layout of an AVI file; frame payloads are ranges into the input.
#[derive(Debug, Clone)]
pub struct AviLayout {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: Vec<Range<usize>>,
    pub audio_format: Option<PcmFormat>,
    pub audio_chunks: Vec<Range<usize>>,
}

impl AviLayout {
    pub fn parse(bytes: &[u8]) -> Result<Self, MediaError> {
        if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"AVI " {
            return Err(decode_err("not an AVI file"));
        }
        let riff_end = 8 + u32_at(bytes, 4) as usize;
        if riff_end > bytes.len() {
            return Err(decode_err(format!(
                "truncated file: header declares {riff_end} bytes, got {}",
                bytes.len()
            )));
        }
        let mut state = ParseState::default();
        walk(bytes, 12..riff_end, &mut state)?;

        let video_index = state
            .streams
            .iter()
            .position(|s| &s.kind == b"vids")
            .ok_or_else(|| decode_err("no video stream"))?;
        let video = &state.streams[video_index];
        if !matches!(&video.handler, b"MJPG" | b"mjpg") && state.compression != Some(*b"MJPG") {
            return Err(decode_err(format!(
                "unsupported video codec `{}`",
                String::from_utf8_lossy(&video.handler)
            )));
        }
        let fps = if video.scale > 0 && video.rate > 0 {
            video.rate as f64 / video.scale as f64
        } else if state.micros_per_frame > 0 {
            1_000_000.0 / state.micros_per_frame as f64
        } else {
            return Err(decode_err("frame rate missing"));
        };
        let video_tag = format!("{video_index:02}");
        let frames = state
            .data_chunks
            .iter()
            .filter(|(id, r)| id.starts_with(video_tag.as_bytes()) && (&id[2..] == b"dc" || &id[2..] == b"db") && !r.is_empty())
            .map(|(_, r)| r.clone())
            .collect();
        let audio_index = state.streams.iter().position(|s| &s.kind == b"auds");
        let (audio_format, audio_chunks) = match audio_index {
            Some(i) => {
                let tag = format!("{i:02}wb");
                (
                    state.streams[i].pcm,
                    state
                        .data_chunks
                        .iter()
                        .filter(|(id, _)| id == tag.as_bytes())
                        .map(|(_, r)| r.clone())
                        .collect(),
                )
            }
            None => (None, Vec::new()),
        };
        Ok(Self {
            width: state.width,
            height: state.height,
            fps,
            frames,
            audio_format,
            audio_chunks,
        })
    }

    /// Concatenated PCM audio as a WAV file, when the AVI carries any.
    pub fn audio_wav(&self, bytes: &[u8]) -> Option<Vec<u8>> {
        let format = self.audio_format?;
        if self.audio_chunks.is_empty() {
            return None;
        }
        let data: Vec<u8> = self.audio_chunks.iter().flat_map(|r| bytes[r.clone()].iter().copied()).collect();
        Some(wav_from_pcm(format, &data))
    }
}

pub fn wav_from_pcm(format: PcmFormat, data: &[u8]) -> Vec<u8> {
    let block = u32::from(format.channels) * u32::from(format.bits_per_sample / 8);
    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&format.channels.to_le_bytes());
    out.extend_from_slice(&format.sample_rate.to_le_bytes());
    out.extend_from_slice(&(format.sample_rate * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&format.bits_per_sample.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
    out
}

#[derive(Default)]
struct ParseState {
    width: u32,
    height: u32,
    micros_per_frame: u32,
    compression: Option<[u8; 4]>,
    streams: Vec<StreamInfo>,
    data_chunks: Vec<([u8; 4], Range<usize>)>,
}

fn walk(bytes: &[u8], range: Range<usize>, state: &mut ParseState) -> Result<(), MediaError> {
    let mut at = range.start;
    while at + 8 <= range.end {
        let id = fourcc(&bytes[at..]);
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        let end = body.checked_add(size).filter(|&e| e <= range.end).ok_or_else(|| {
            decode_err(format!("chunk `{}` overruns its container", String::from_utf8_lossy(&id)))
        })?;
        match &id {
            b"LIST" if size >= 4 => {
                let list_type = fourcc(&bytes[body..]);
                if &list_type == b"strl" {
                    state.streams.push(StreamInfo::default());
                }
                walk(bytes, body + 4..end, state)?;
            }
            b"avih" if size >= 40 => {
                state.micros_per_frame = u32_at(bytes, body);
                state.width = u32_at(bytes, body + 32);
                state.height = u32_at(bytes, body + 36);
            }
            b"strh" if size >= 36 => {
                let stream = state.streams.last_mut().ok_or_else(|| decode_err("strh outside strl"))?;
                stream.kind = fourcc(&bytes[body..]);
                stream.handler = fourcc(&bytes[body + 4..]);
                stream.scale = u32_at(bytes, body + 20);
                stream.rate = u32_at(bytes, body + 24);
            }
            b"strf" => {
                let stream = state.streams.last_mut().ok_or_else(|| decode_err("strf outside strl"))?;
                if &stream.kind == b"vids" && size >= 20 {
                    state.compression = Some(fourcc(&bytes[body + 16..]));
                } else if &stream.kind == b"auds" && size >= 16 && u16_at(bytes, body) == 1 {
                    stream.pcm = Some(PcmFormat {
                        channels: u16_at(bytes, body + 2),
                        sample_rate: u32_at(bytes, body + 4),
                        bits_per_sample: u16_at(bytes, body + 14),
                    });
                }
            }
            _ if id[0].is_ascii_digit() && id[1].is_ascii_digit() => {
                state.data_chunks.push((id, body..end));
            }
            _ => {}
        }
        at = end + (size & 1);
    }
    Ok(())
}

/// Writes an MJPEG AVI from already-encoded JPEG frames, with optional
/// 16-bit PCM audio interleaved as one chunk per frame.
pub fn write_mjpeg(
    width: u32,
    height: u32,
    fps: u32,
    frames: &[Vec<u8>],
    audio: Option<(PcmFormat, &[u8])>,
) -> Vec<u8> {
    fn chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
        out.extend_from_slice(id);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(body);
        if body.len() % 2 == 1 {
            out.push(0);
        }
    }
    fn list(out: &mut Vec<u8>, kind: &[u8; 4], body: &[u8]) {
        let mut inner = kind.to_vec();
        inner.extend_from_slice(body);
        chunk(out, b"LIST", &inner);
    }
    fn words(values: &[u32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    let n = frames.len() as u32;
    let max_frame = frames.iter().map(Vec::len).max().unwrap_or(0) as u32;

    let mut avih = words(&[1_000_000 / fps.max(1), max_frame * fps, 0, 0x10, n, 0]);
    avih.extend(words(&[if audio.is_some() { 2 } else { 1 }, max_frame, width, height, 0, 0, 0, 0]));

    let mut strh = b"vidsMJPG".to_vec();
    strh.extend(words(&[0, 0, 0, 1, fps, 0, n, max_frame, u32::MAX, 0]));
    strh.extend_from_slice(&[0, 0, 0, 0]);
    strh.extend_from_slice(&(width as u16).to_le_bytes());
    strh.extend_from_slice(&(height as u16).to_le_bytes());

    let mut strf = words(&[40, width, height]);
    strf.extend_from_slice(&1u16.to_le_bytes());
    strf.extend_from_slice(&24u16.to_le_bytes());
    strf.extend_from_slice(b"MJPG");
    strf.extend(words(&[width * height * 3, 0, 0, 0, 0]));

    let mut strl = Vec::new();
    chunk(&mut strl, b"strh", &strh);
    chunk(&mut strl, b"strf", &strf);
    let mut hdrl = Vec::new();
    chunk(&mut hdrl, b"avih", &avih);
    list(&mut hdrl, b"strl", &strl);

    let audio_slices: Vec<&[u8]> = match audio {
        Some((format, pcm)) => {
            let block = usize::from(format.channels) * usize::from(format.bits_per_sample / 8);
            let per_frame = (pcm.len() / block).div_ceil(frames.len().max(1)) * block;
            let per_frame = per_frame.max(block);
            let mut a_strh = b"auds\0\0\0\0".to_vec();
            a_strh.extend(words(&[0, 0, 0, block as u32, format.sample_rate * block as u32, 0]));
            a_strh.extend(words(&[(pcm.len() / block) as u32, 0, u32::MAX, block as u32, 0, 0]));
            let mut a_strf = Vec::new();
            a_strf.extend_from_slice(&1u16.to_le_bytes());
            a_strf.extend_from_slice(&format.channels.to_le_bytes());
            a_strf.extend_from_slice(&format.sample_rate.to_le_bytes());
            a_strf.extend_from_slice(&(format.sample_rate * block as u32).to_le_bytes());
            a_strf.extend_from_slice(&(block as u16).to_le_bytes());
            a_strf.extend_from_slice(&format.bits_per_sample.to_le_bytes());
            let mut a_strl = Vec::new();
            chunk(&mut a_strl, b"strh", &a_strh);
            chunk(&mut a_strl, b"strf", &a_strf);
            list(&mut hdrl, b"strl", &a_strl);
            pcm.chunks(per_frame).collect()
        }
        None => Vec::new(),
    };

    let mut movi = Vec::new();
    let mut index = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        index.extend_from_slice(b"00dc");
        index.extend(words(&[0x10, movi.len() as u32 + 4, frame.len() as u32]));
        chunk(&mut movi, b"00dc", frame);
        if let Some(slice) = audio_slices.get(i) {
            index.extend_from_slice(b"01wb");
            index.extend(words(&[0, movi.len() as u32 + 4, slice.len() as u32]));
            chunk(&mut movi, b"01wb", slice);
        }
    }

    let mut body = b"AVI ".to_vec();
    list(&mut body, b"hdrl", &hdrl);
    list(&mut body, b"movi", &movi);
    chunk(&mut body, b"idx1", &index);
    let mut out = Vec::with_capacity(body.len() + 8);
    chunk(&mut out, b"RIFF", &body);
    out
}
