//! Image ingest and result export.
//!
//! Inputs: PNG (8/16-bit gray, 8-bit RGB; alpha is dropped) and TIFF
//! (single- or multi-page, 8/16-bit gray or RGB). Outputs: indexed PNG label
//! maps, 8-bit probability PNGs (`round(255·p)`), multi-page TIFF volumes
//! and a lossless probability file.
//!
//! Probability file layout, little-endian:
//!
//! ```text
//! 8 bytes "DSEGPROB", u32 version (1), u32 width, u32 height, u32 classes,
//! width·height·classes f64 values, pixel-major
//! ```

use std::io::{BufReader, Cursor as IoCursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use tiff::decoder::{Decoder as TiffDecoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};
use crate::grid::{ClassStack, GridShape, PixelGrid};
use crate::modelfile::{f64s_to_bytes, Cursor};

const PROB_MAGIC: &[u8; 8] = b"DSEGPROB";

/// Class colours: unmarked black, then cyan, magenta, purple, and further
/// distinct hues.
pub const PALETTE: [[u8; 3]; 9] = [
    [0, 0, 0],
    [0, 255, 255],
    [255, 0, 255],
    [102, 51, 255],
    [255, 204, 0],
    [0, 204, 0],
    [255, 64, 64],
    [64, 64, 255],
    [255, 255, 255],
];

fn png_err(e: png::DecodingError) -> Error {
    Error::Unsupported(format!("PNG decoding: {e}"))
}

fn png_enc_err(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::Unsupported(format!("PNG encoding: {other}")),
    }
}

fn tiff_err(e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::Io(io),
        other => Error::Unsupported(format!("TIFF: {other}")),
    }
}

/// Decodes a PNG or TIFF byte buffer into one grid per page.
pub fn decode_image(bytes: &[u8]) -> Result<Vec<PixelGrid>> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes).map(|g| vec![g])
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        decode_tiff(bytes)
    } else {
        Err(Error::Unsupported("expected a PNG or TIFF image".into()))
    }
}

pub fn read_image(path: &Path) -> Result<Vec<PixelGrid>> {
    decode_image(&std::fs::read(path)?)
}

pub fn decode_png(bytes: &[u8]) -> Result<PixelGrid> {
    let mut decoder = png::Decoder::new(BufReader::new(IoCursor::new(bytes)));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| {
        Error::Unsupported("PNG too large".into())
    })?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::Unsupported("unexpanded palette PNG".into())),
    };
    match info.bit_depth {
        BitDepth::Sixteen => {
            let raw: Vec<u16> = buf
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            PixelGrid::from_u16(w, h, keep, &drop_channels(&raw, channels, keep))
        }
        BitDepth::Eight => PixelGrid::from_u8(w, h, keep, &drop_channels(&buf, channels, keep)),
        other => Err(Error::Unsupported(format!("PNG bit depth {other:?}"))),
    }
}

fn drop_channels<T: Copy>(raw: &[T], channels: usize, keep: usize) -> Vec<T> {
    if channels == keep {
        return raw.to_vec();
    }
    raw.chunks_exact(channels)
        .flat_map(|p| p[..keep].iter().copied())
        .collect()
}

pub fn decode_tiff(bytes: &[u8]) -> Result<Vec<PixelGrid>> {
    let mut decoder = TiffDecoder::new(IoCursor::new(bytes)).map_err(tiff_err)?;
    let mut pages = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(tiff_err)?;
        let (w, h) = (w as usize, h as usize);
        let (channels, keep) = match decoder.colortype().map_err(tiff_err)? {
            tiff::ColorType::Gray(_) => (1, 1),
            tiff::ColorType::GrayA(_) => (2, 1),
            tiff::ColorType::RGB(_) => (3, 3),
            tiff::ColorType::RGBA(_) => (4, 3),
            other => return Err(Error::Unsupported(format!("TIFF colour type {other:?}"))),
        };
        let page = match decoder.read_image().map_err(tiff_err)? {
            DecodingResult::U8(raw) => {
                PixelGrid::from_u8(w, h, keep, &drop_channels(&raw, channels, keep))?
            }
            DecodingResult::U16(raw) => {
                PixelGrid::from_u16(w, h, keep, &drop_channels(&raw, channels, keep))?
            }
            _ => return Err(Error::Unsupported("TIFF sample format".into())),
        };
        pages.push(page);
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(tiff_err)?;
    }
    Ok(pages)
}

/// Reads a label PNG: palette index (indexed PNG) or gray value is the class.
pub fn decode_label_png(bytes: &[u8]) -> Result<(GridShape, Vec<u16>)> {
    let mut decoder = png::Decoder::new(BufReader::new(IoCursor::new(bytes)));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| {
        Error::Unsupported("PNG too large".into())
    })?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if !matches!(info.color_type, ColorType::Indexed | ColorType::Grayscale) {
        return Err(Error::Unsupported(format!(
            "label PNG must be indexed or grayscale, got {:?}",
            info.color_type
        )));
    }
    let bits = match info.bit_depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => 16,
    };
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks_exact(info.line_size).take(h) {
        match bits {
            16 => labels.extend(row.chunks_exact(2).take(w).map(|c| u16::from_be_bytes([c[0], c[1]]))),
            8 => labels.extend(row.iter().take(w).map(|&v| v as u16)),
            _ => {
                let per_byte = 8 / bits;
                let mask = (1u16 << bits) - 1;
                labels.extend((0..w).map(|x| {
                    let byte = row[x / per_byte] as u16;
                    let shift = 8 - bits * (x % per_byte + 1);
                    (byte >> shift) & mask
                }));
            }
        }
    }
    Ok((GridShape::new(w, h), labels))
}

pub fn read_label_png(path: &Path) -> Result<(GridShape, Vec<u16>)> {
    decode_label_png(&std::fs::read(path)?)
}

/// Indexed 8-bit PNG of a label map with [`PALETTE`] colours.
pub fn encode_label_png(shape: GridShape, labels: &[u16]) -> Result<Vec<u8>> {
    if labels.len() != shape.len() {
        return Err(Error::shape(shape.len(), labels.len()));
    }
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    if max > 255 {
        return Err(Error::Unsupported(format!("label {max} does not fit a palette")));
    }
    let mut palette = Vec::with_capacity(3 * (max + 1));
    for c in 0..=max {
        let rgb = PALETTE
            .get(c)
            .copied()
            .unwrap_or([(c * 53 % 256) as u8, (c * 97 % 256) as u8, (c * 151 % 256) as u8]);
        palette.extend_from_slice(&rgb);
    }
    let data: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    encode_png(shape, ColorType::Indexed, Some(palette), &data)
}

/// 8-bit grayscale PNG.
pub fn encode_gray_png(shape: GridShape, data: &[u8]) -> Result<Vec<u8>> {
    if data.len() != shape.len() {
        return Err(Error::shape(shape.len(), data.len()));
    }
    encode_png(shape, ColorType::Grayscale, None, data)
}

/// 8-bit PNG of one image grid (gray or RGB).
pub fn encode_grid_png(grid: &PixelGrid) -> Result<Vec<u8>> {
    let color = match grid.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(Error::Unsupported(format!("{c}-channel PNG export"))),
    };
    let data: Vec<u8> = grid.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    encode_png(grid.shape(), color, None, &data)
}

/// Probability layer quantized to `round(255·p)`.
pub fn encode_probability_png(shape: GridShape, layer: &[f64]) -> Result<Vec<u8>> {
    let data: Vec<u8> = layer.iter().map(|&p| quantize_u8(p)).collect();
    encode_gray_png(shape, &data)
}

pub fn quantize_u8(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize_u16(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn encode_png(shape: GridShape, color: ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, shape.width as u32, shape.height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header().map_err(png_enc_err)?;
        writer.write_image_data(data).map_err(png_enc_err)?;
        writer.finish().map_err(png_enc_err)?;
    }
    Ok(out)
}

/// Multi-page 8-bit grayscale TIFF, one page per slice.
pub fn encode_tiff_u8(shape: GridShape, pages: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = IoCursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut out).map_err(tiff_err)?;
        for page in pages {
            enc.write_image::<colortype::Gray8>(shape.width as u32, shape.height as u32, page)
                .map_err(tiff_err)?;
        }
    }
    Ok(out.into_inner())
}

/// Multi-page 16-bit grayscale TIFF, one page per slice.
pub fn encode_tiff_u16(shape: GridShape, pages: &[Vec<u16>]) -> Result<Vec<u8>> {
    let mut out = IoCursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut out).map_err(tiff_err)?;
        for page in pages {
            enc.write_image::<colortype::Gray16>(shape.width as u32, shape.height as u32, page)
                .map_err(tiff_err)?;
        }
    }
    Ok(out.into_inner())
}

pub fn encode_probabilities(shape: GridShape, stack: &ClassStack) -> Result<Vec<u8>> {
    if stack.rows() != shape.len() {
        return Err(Error::shape(shape.len(), stack.rows()));
    }
    let mut out = Vec::with_capacity(24 + 8 * stack.data().len());
    out.extend_from_slice(PROB_MAGIC);
    for v in [1, shape.width as u32, shape.height as u32, stack.classes() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(f64s_to_bytes(stack.data()));
    Ok(out)
}

pub fn decode_probabilities(bytes: &[u8]) -> Result<(GridShape, ClassStack)> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8)? != PROB_MAGIC {
        return Err(Error::Corruption("not a probability file".into()));
    }
    let version = cur.u32()?;
    if version != 1 {
        return Err(Error::Unsupported(format!("probability file version {version}")));
    }
    let w = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    let values = cur.f64s(w * h * classes)?;
    if !cur.is_done() {
        return Err(Error::Corruption("trailing bytes in probability file".into()));
    }
    Ok((GridShape::new(w, h), ClassStack::from_vec(w * h, classes, values)?))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_png_roundtrip() {
        let shape = GridShape::new(5, 3);
        let labels: Vec<u16> = (0..15).map(|i| (i % 4) as u16).collect();
        let bytes = encode_label_png(shape, &labels).unwrap();
        let (s, back) = decode_label_png(&bytes).unwrap();
        assert_eq!(s, shape);
        assert_eq!(back, labels);
        // Same input, same bytes.
        assert_eq!(encode_label_png(shape, &labels).unwrap(), bytes);
    }

    #[test]
    fn gray_png_is_read_as_labels_and_image() {
        let shape = GridShape::new(4, 2);
        let data = [0u8, 1, 2, 255, 3, 0, 0, 1];
        let bytes = encode_gray_png(shape, &data).unwrap();
        let (_, labels) = decode_label_png(&bytes).unwrap();
        assert_eq!(labels, data.iter().map(|&v| v as u16).collect::<Vec<_>>());
        let grid = decode_png(&bytes).unwrap();
        assert_eq!(grid.channels(), 1);
        assert_eq!(grid.get(3, 0, 0), 1.0);
    }

    #[test]
    fn sixteen_bit_png_normalizes() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(ColorType::Grayscale);
            enc.set_depth(BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0xff, 0xff, 0x80, 0x00]).unwrap();
        }
        let g = decode_image(&out).unwrap().remove(0);
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert!((g.get(1, 0, 0) - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn rgb_png_roundtrip() {
        let g = PixelGrid::from_u8(2, 2, 3, &[0, 51, 102, 153, 204, 255, 1, 2, 3, 4, 5, 6]).unwrap();
        let back = decode_image(&encode_grid_png(&g).unwrap()).unwrap().remove(0);
        assert_eq!(back, g);
    }

    #[test]
    fn multipage_tiff_roundtrip() {
        let shape = GridShape::new(3, 2);
        let pages = vec![vec![0u16, 1, 2, 3, 4, 65535], vec![7u16; 6]];
        let bytes = encode_tiff_u16(shape, &pages).unwrap();
        let grids = decode_image(&bytes).unwrap();
        assert_eq!(grids.len(), 2);
        assert_eq!(grids[0].get(2, 1, 0), 1.0);
        assert_eq!(grids[1].get(0, 0, 0), 7.0 / 65535.0);
        let bytes = encode_tiff_u8(shape, &[vec![255u8; 6]]).unwrap();
        assert_eq!(decode_image(&bytes).unwrap()[0].get(1, 1, 0), 1.0);
    }

    #[test]
    fn probability_file_roundtrip() {
        let shape = GridShape::new(2, 2);
        let stack = ClassStack::from_vec(4, 2, vec![0.1, 0.9, 0.5, 0.5, 1.0, 0.0, 1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let bytes = encode_probabilities(shape, &stack).unwrap();
        let (s, back) = decode_probabilities(&bytes).unwrap();
        assert_eq!(s, shape);
        assert_eq!(back, stack);
        assert!(decode_probabilities(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u16(1.0), 65535);
        assert_eq!(quantize_u8(-0.1), 0);
    }

    #[test]
    fn rejects_unknown_format() {
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Unsupported(_))));
    }
}
