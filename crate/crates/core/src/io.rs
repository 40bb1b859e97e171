//! Image and label-map files.
//!
//! Color images are read as 8-bit RGB and scaled to `[0, 1]`. Label maps are
//! 8-bit single-channel images whose pixel values are class indices: indexed
//! (palette) PNGs are read without palette expansion, gray PNGs and PGM files
//! are read as-is. Label maps are written as palette PNGs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// 13 well-separated colors, cycled for larger label counts.
pub const PALETTE: [[u8; 3]; 13] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
];

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), reason: reason.to_string() }
}

/// `h x w x 3` RGB image with channels in `[0, 1]`.
pub fn rgb_to_array(img: &image::RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        f64::from(img.get_pixel(c as u32, r as u32)[ch]) / 255.0
    })
}

pub fn array_to_rgb(image: &Array3<f64>) -> image::RgbImage {
    let (h, w, d) = image.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let at = |ch: usize| (image[[r as usize, c as usize, ch.min(d - 1)]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    })
}

/// Decodes PNG/PPM/PGM bytes into an RGB array.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<Array3<f64>, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    Ok(rgb_to_array(&img.to_rgb8()))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(rgb_to_array(&img.to_rgb8()))
}

pub fn save_image(path: impl AsRef<Path>, image: &Array3<f64>) -> Result<()> {
    let path = path.as_ref();
    array_to_rgb(image).save(path).map_err(|e| image_err(path, e))
}

/// Decodes an 8-bit label map from PNG (indexed or gray) or PNM bytes.
pub fn decode_label_map(bytes: &[u8]) -> std::result::Result<Array2<u8>, String> {
    if bytes.starts_with(b"\x89PNG") {
        return decode_label_png(bytes);
    }
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    if img.color().channel_count() != 1 {
        return Err(format!("label map must be single-channel, found {:?}", img.color()));
    }
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), gray.into_raw()).map_err(|e| e.to_string())
}

fn decode_label_png(bytes: &[u8]) -> std::result::Result<Array2<u8>, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(format!("label PNG must be 8-bit, found {:?}", frame.bit_depth));
    }
    match frame.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => return Err(format!("label PNG must be indexed or gray, found {other:?}")),
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data: Vec<u8> = (0..h).flat_map(|r| buf[r * frame.line_size..r * frame.line_size + w].to_vec()).collect();
    Array2::from_shape_vec((h, w), data).map_err(|e| e.to_string())
}

pub fn load_label_map(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_label_map(&bytes).map_err(|e| image_err(path, e))
}

/// Encodes a label map as an 8-bit palette PNG; index 0 is black and index
/// `v > 0` takes palette color `v - 1`.
pub fn encode_label_png(labels: &Array2<u8>) -> Vec<u8> {
    let (h, w) = labels.dim();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        let mut palette = vec![0u8; 3];
        for v in 1..256usize {
            palette.extend_from_slice(&PALETTE[(v - 1) % PALETTE.len()]);
        }
        encoder.set_palette(palette);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        let data: Vec<u8> = labels.iter().copied().collect();
        writer.write_image_data(&data).expect("in-memory PNG data");
    }
    out
}

pub fn save_label_map(path: impl AsRef<Path>, labels: &Array2<u8>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&encode_label_png(labels))?;
    file.flush()?;
    Ok(())
}

/// Converts 0-based class indices to stored values `class + 1`.
pub fn classes_to_label_map(classes: &Array2<usize>) -> Result<Array2<u8>> {
    if let Some(c) = classes.iter().find(|c| **c >= 255) {
        return Err(Error::Config(format!("class {c} does not fit an 8-bit label map")));
    }
    Ok(classes.mapv(|c| (c + 1) as u8))
}

/// Blends palette colors of the (0-based) classes over the image.
pub fn overlay(image: &Array3<f64>, classes: &Array2<usize>, alpha: f64) -> Array3<f64> {
    let (h, w, d) = image.dim();
    Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        let base = image[[r, c, ch.min(d - 1)]];
        let color = f64::from(PALETTE[classes[[r, c]] % PALETTE.len()][ch]) / 255.0;
        (1.0 - alpha) * base + alpha * color
    })
}
