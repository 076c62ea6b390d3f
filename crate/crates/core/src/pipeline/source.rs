use std::io::{ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::prepost::RgbImage;

const IMAGE_EXTENSIONS: &[&str] = &["ppm", "pnm", "png", "jpg", "jpeg"];

/// Decodes a binary (P6) portable pixmap with maxval ≤ 255.
pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let fail = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| fail("empty file".into()))?;
    if magic != "P6" {
        return Err(fail(format!(
            "unsupported PPM variant {magic:?}, only binary P6 is read"
        )));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| fail(format!("missing or invalid {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(fail(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail(format!("maxval {maxval} unsupported, expected 1..=255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height * 3;
    if bytes.len() < start + len {
        return Err(fail(format!(
            "raster truncated: {} of {len} bytes",
            bytes.len().saturating_sub(start)
        )));
    }
    let mut data = bytes[start..start + len].to_vec();
    if maxval != 255 {
        data.iter_mut()
            .for_each(|v| *v = ((*v as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8);
    }
    RgbImage::new(width, height, data)
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.data.len() + 32);
    encode_ppm(img, &mut out).map_err(|e| Error::io("encoding PPM", e))?;
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads an image file; PPM is decoded in-crate, PNG and JPEG through the `image` crate.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ext = extension(path);
    if ext == "ppm" || ext == "pnm" || bytes.starts_with(b"P6") {
        return parse_ppm(&bytes, path);
    }
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    RgbImage::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Image files in `dir` with a supported extension, in lexicographic order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        if p.is_file() && IMAGE_EXTENSIONS.contains(&extension(&p).as_str()) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// One ingested frame; `image` holds the decode error for frames that failed.
pub struct Frame {
    pub index: usize,
    pub name: String,
    pub image: Result<RgbImage>,
}

/// Where frames come from.
pub enum FrameSource {
    ImageDir {
        files: Vec<PathBuf>,
        next: usize,
    },
    RawStream {
        reader: Box<dyn Read + Send>,
        width: usize,
        height: usize,
        next: usize,
        done: bool,
    },
}

impl FrameSource {
    pub fn image_dir(dir: &Path) -> Result<Self> {
        let files = list_images(dir)?;
        if files.is_empty() {
            return Err(Error::invalid(
                "FrameSource",
                format!("no images found in {}", dir.display()),
            ));
        }
        Ok(FrameSource::ImageDir { files, next: 0 })
    }

    /// Packed RGB24 frames of a fixed size, back to back.
    pub fn raw_stream(reader: Box<dyn Read + Send>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "FrameSource",
                "raw streams need positive --width and --height",
            ));
        }
        Ok(FrameSource::RawStream {
            reader,
            width,
            height,
            next: 0,
            done: false,
        })
    }
}

impl Iterator for FrameSource {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        match self {
            FrameSource::ImageDir { files, next } => {
                let path = files.get(*next)?;
                let index = *next;
                *next += 1;
                Some(Frame {
                    index,
                    name: path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    image: read_image(path),
                })
            }
            FrameSource::RawStream {
                reader,
                width,
                height,
                next,
                done,
            } => {
                if *done {
                    return None;
                }
                let mut buf = vec![0u8; *width * *height * 3];
                let mut filled = 0;
                while filled < buf.len() {
                    match reader.read(&mut buf[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == ErrorKind::Interrupted => {}
                        Err(e) => {
                            *done = true;
                            return Some(Frame {
                                index: *next,
                                name: format!("stream:{}", *next),
                                image: Err(Error::io("reading raw stream", e)),
                            });
                        }
                    }
                }
                if filled == 0 {
                    *done = true;
                    return None;
                }
                let index = *next;
                *next += 1;
                let image = if filled < buf.len() {
                    *done = true;
                    Err(Error::invalid(
                        "raw stream",
                        format!("partial frame: {filled} of {} bytes", buf.len()),
                    ))
                } else {
                    RgbImage::new(*width, *height, buf)
                };
                Some(Frame {
                    index,
                    name: format!("stream:{index}"),
                    image,
                })
            }
        }
    }
}

/// Encodes an image as a P6 pixmap into any writer.
pub fn encode_ppm(img: &RgbImage, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)
}
