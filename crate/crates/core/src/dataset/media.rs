use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::process::{Command, Stdio};

use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Video,
    Image,
}

impl MediaKind {
    pub fn from_path(path: &Path) -> Option<MediaKind> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "mp4" | "avi" | "mov" | "mkv" | "y4m" => Some(MediaKind::Video),
            "jpg" | "jpeg" | "png" => Some(MediaKind::Image),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MediaInfo {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frame_count: u64,
    pub duration: f64,
}

fn is_y4m(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("y4m"))
}

/// True when an `ffmpeg`/`ffprobe` pair is on `PATH`; needed for mp4/avi/mov/mkv.
pub fn ffmpeg_available() -> bool {
    let ok = |bin: &str| {
        Command::new(bin)
            .arg("-version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    ok("ffmpeg") && ok("ffprobe")
}

pub(crate) fn probe(path: &Path, kind: MediaKind) -> Result<MediaInfo, String> {
    match kind {
        MediaKind::Image => {
            let (width, height) = image::image_dimensions(path).map_err(|e| e.to_string())?;
            Ok(MediaInfo {
                width,
                height,
                fps: 0.0,
                frame_count: 1,
                duration: 0.0,
            })
        }
        MediaKind::Video if is_y4m(path) => probe_y4m(path),
        MediaKind::Video => probe_ffprobe(path),
    }
}

/// Calls `sink` with `(source_index, frame)` for indices `0, stride, 2*stride, ...`,
/// stopping after `limit` frames when given.
pub(crate) fn decode_strided<F>(
    path: &Path,
    kind: MediaKind,
    info: &MediaInfo,
    stride: usize,
    limit: Option<usize>,
    mut sink: F,
) -> Result<usize, String>
where
    F: FnMut(u64, RgbImage) -> Result<(), String>,
{
    let stride = stride.max(1) as u64;
    let limit = limit.unwrap_or(usize::MAX);
    if limit == 0 {
        return Ok(0);
    }
    match kind {
        MediaKind::Image => {
            let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
            sink(0, img)?;
            Ok(1)
        }
        MediaKind::Video if is_y4m(path) => {
            let file = File::open(path).map_err(|e| e.to_string())?;
            let mut decoder = y4m::decode(BufReader::new(file)).map_err(|e| format!("{e:?}"))?;
            let (w, h) = (decoder.get_width(), decoder.get_height());
            let colorspace = decoder.get_colorspace();
            let mut emitted = 0usize;
            let mut index = 0u64;
            loop {
                let frame = match decoder.read_frame() {
                    Ok(f) => f,
                    Err(y4m::Error::EOF) => break,
                    Err(e) => return Err(format!("frame {index}: {e:?}")),
                };
                if index % stride == 0 {
                    let rgb = yuv_frame_to_rgb(&frame, w, h, colorspace)?;
                    sink(index, rgb)?;
                    emitted += 1;
                    if emitted >= limit {
                        break;
                    }
                }
                index += 1;
            }
            Ok(emitted)
        }
        MediaKind::Video => decode_ffmpeg(path, info, stride, limit, sink),
    }
}

fn probe_y4m(path: &Path) -> Result<MediaInfo, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let mut decoder = y4m::decode(BufReader::new(file)).map_err(|e| format!("{e:?}"))?;
    let rate = decoder.get_framerate();
    if rate.den == 0 || rate.num == 0 {
        return Err("y4m header has a zero frame rate".into());
    }
    let fps = rate.num as f64 / rate.den as f64;
    let (width, height) = (decoder.get_width() as u32, decoder.get_height() as u32);
    let mut frame_count = 0u64;
    loop {
        match decoder.read_frame() {
            Ok(_) => frame_count += 1,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(format!("frame {frame_count}: {e:?}")),
        }
    }
    if frame_count == 0 {
        return Err("y4m stream contains no frames".into());
    }
    Ok(MediaInfo {
        width,
        height,
        fps,
        frame_count,
        duration: frame_count as f64 / fps,
    })
}

fn sample(plane: &[u8], idx: usize, bytes: usize, depth: usize) -> f32 {
    if bytes == 1 {
        plane[idx] as f32
    } else {
        let v = u16::from_le_bytes([plane[2 * idx], plane[2 * idx + 1]]);
        (v >> (depth - 8)) as f32
    }
}

/// BT.601 limited-range YCbCr to RGB.
fn yuv_frame_to_rgb(
    frame: &y4m::Frame<'_>,
    w: usize,
    h: usize,
    cs: y4m::Colorspace,
) -> Result<RgbImage, String> {
    use y4m::Colorspace as C;
    let bytes = cs.get_bytes_per_sample();
    let depth = cs.get_bit_depth();
    let (cw, ch, mono) = match cs {
        C::Cmono | C::Cmono12 => (0, 0, true),
        C::C420 | C::C420p10 | C::C420p12 | C::C420jpeg | C::C420paldv | C::C420mpeg2 => {
            (w.div_ceil(2), h.div_ceil(2), false)
        }
        C::C422 | C::C422p10 | C::C422p12 => (w.div_ceil(2), h, false),
        C::C444 | C::C444p10 | C::C444p12 => (w, h, false),
        other => return Err(format!("unsupported y4m colorspace {other:?}")),
    };
    let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
    if yp.len() < w * h * bytes || (!mono && (up.len() < cw * ch * bytes || vp.len() < cw * ch * bytes)) {
        return Err("truncated y4m frame".into());
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let luma = 1.164 * (sample(yp, y * w + x, bytes, depth) - 16.0);
            let (cb, cr) = if mono {
                (0.0, 0.0)
            } else {
                let cx = x * cw / w;
                let cy = y * ch / h;
                (
                    sample(up, cy * cw + cx, bytes, depth) - 128.0,
                    sample(vp, cy * cw + cx, bytes, depth) - 128.0,
                )
            };
            let r = luma + 1.596 * cr;
            let g = luma - 0.392 * cb - 0.813 * cr;
            let b = luma + 2.017 * cb;
            let px = [r, g, b].map(|v| v.round().clamp(0.0, 255.0) as u8);
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct FfprobeOutput {
    #[serde(default)]
    streams: Vec<FfprobeStream>,
    format: Option<FfprobeFormat>,
}

#[derive(Deserialize)]
struct FfprobeStream {
    width: Option<u32>,
    height: Option<u32>,
    avg_frame_rate: Option<String>,
    r_frame_rate: Option<String>,
    nb_frames: Option<String>,
    nb_read_packets: Option<String>,
    duration: Option<String>,
}

#[derive(Deserialize)]
struct FfprobeFormat {
    duration: Option<String>,
}

fn parse_rate(s: &str) -> Option<f64> {
    let (num, den) = s.split_once('/').unwrap_or((s, "1"));
    let (num, den): (f64, f64) = (num.parse().ok()?, den.parse().ok()?);
    (den > 0.0 && num > 0.0).then_some(num / den)
}

fn probe_ffprobe(path: &Path) -> Result<MediaInfo, String> {
    let out = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-count_packets",
            "-show_entries",
            "stream=width,height,avg_frame_rate,r_frame_rate,nb_frames,nb_read_packets,duration:format=duration",
            "-of",
            "json",
        ])
        .arg(path)
        .output()
        .map_err(|e| format!("ffprobe not runnable ({e}); install ffmpeg or convert clips to .y4m"))?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    let parsed: FfprobeOutput = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let stream = parsed.streams.first().ok_or("no video stream")?;
    let (width, height) = match (stream.width, stream.height) {
        (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
        _ => return Err("video stream without dimensions".into()),
    };
    let fps = stream
        .avg_frame_rate
        .as_deref()
        .and_then(parse_rate)
        .or_else(|| stream.r_frame_rate.as_deref().and_then(parse_rate))
        .ok_or("unknown frame rate")?;
    let duration = stream
        .duration
        .as_deref()
        .or(parsed.format.as_ref().and_then(|f| f.duration.as_deref()))
        .and_then(|d| d.parse::<f64>().ok());
    let frame_count = stream
        .nb_read_packets
        .as_deref()
        .or(stream.nb_frames.as_deref())
        .and_then(|n| n.parse::<u64>().ok())
        .or_else(|| duration.map(|d| (d * fps).round() as u64))
        .ok_or("unknown frame count")?;
    Ok(MediaInfo {
        width,
        height,
        fps,
        frame_count,
        duration: duration.unwrap_or(frame_count as f64 / fps),
    })
}

fn decode_ffmpeg<F>(
    path: &Path,
    info: &MediaInfo,
    stride: u64,
    limit: usize,
    mut sink: F,
) -> Result<usize, String>
where
    F: FnMut(u64, RgbImage) -> Result<(), String>,
{
    let mut cmd = Command::new("ffmpeg");
    cmd.args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-vf", &format!("select=not(mod(n\\,{stride}))"), "-fps_mode", "passthrough"]);
    if limit != usize::MAX {
        cmd.args(["-frames:v", &limit.to_string()]);
    }
    let mut child = cmd
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("ffmpeg not runnable ({e})"))?;
    let mut stdout = child.stdout.take().ok_or("ffmpeg stdout unavailable")?;
    let frame_len = info.width as usize * info.height as usize * 3;
    let mut buf = vec![0u8; frame_len];
    let mut emitted = 0usize;
    loop {
        match stdout.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.to_string()),
        }
        let img = RgbImage::from_raw(info.width, info.height, buf.clone())
            .ok_or("ffmpeg produced a short frame")?;
        sink(emitted as u64 * stride, img)?;
        emitted += 1;
        if emitted >= limit {
            break;
        }
    }
    drop(stdout);
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if emitted == 0 {
        let msg = String::from_utf8_lossy(&out.stderr);
        return Err(format!("ffmpeg decoded no frames: {}", msg.trim()));
    }
    Ok(emitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn media_kind_by_extension() {
        assert_eq!(MediaKind::from_path(Path::new("a/b.MP4")), Some(MediaKind::Video));
        assert_eq!(MediaKind::from_path(Path::new("a/b.y4m")), Some(MediaKind::Video));
        assert_eq!(MediaKind::from_path(Path::new("a/b.jpeg")), Some(MediaKind::Image));
        assert_eq!(MediaKind::from_path(Path::new("a/b.txt")), None);
        assert_eq!(MediaKind::from_path(Path::new("a/noext")), None);
    }

    #[test]
    fn frame_rates() {
        assert_eq!(parse_rate("30/1"), Some(30.0));
        assert!((parse_rate("30000/1001").unwrap() - 29.97).abs() < 1e-3);
        assert_eq!(parse_rate("0/0"), None);
        assert_eq!(parse_rate("25"), Some(25.0));
    }
}
