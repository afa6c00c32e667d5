//! Binary 8-bit PGM (P5) and PPM (P6).

use std::fs;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Data(format!("unsupported PNM magic {m:?}"))),
    };
    let width = parse_num(&next_token(bytes, &mut pos)?)?;
    let height = parse_num(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_num(&next_token(bytes, &mut pos)?)?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Data(format!(
            "maxval {maxval} is not an 8-bit format"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Data("image dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Data(format!("truncated raster: need {n} bytes")))?;
    if maxval == 255 {
        return ImageBuffer::from_u8(width, height, channels, raster);
    }
    let scaled: Vec<u8> = raster
        .iter()
        .map(|&b| {
            ((u32::from(b.min(maxval as u8)) * 255 + maxval as u32 / 2) / maxval as u32) as u8
        })
        .collect();
    ImageBuffer::from_u8(width, height, channels, &scaled)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Data("truncated PNM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Data(format!("invalid PNM header field {tok:?}"))),
    }
}

pub fn encode(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
