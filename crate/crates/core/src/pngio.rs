//! PNG encode/decode to and from RGB8 buffers.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_png(bytes: &[u8]) -> Result<Rgb8> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (width, height) = (info.width as usize, info.height as usize);
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => {
            return Err(Error::Png("palette image was not expanded".into()));
        }
    };
    Ok(Rgb8 {
        width,
        height,
        pixels,
    })
}

pub fn encode_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height * 3 {
        return Err(Error::invalid("png encode: buffer length mismatch"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Rgb8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn write_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(width, height, pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pixels: Vec<u8> = (0..7 * 5 * 3).map(|i| (i * 13) as u8).collect();
        let bytes = encode_png(7, 5, &pixels).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!((back.width, back.height), (7, 5));
        assert_eq!(back.pixels, pixels);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(matches!(decode_png(b"not a png"), Err(Error::Png(_))));
    }
}
