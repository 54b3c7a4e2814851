//! Grayscale PNG rendering of signal and error maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::propagation::FLOOR_DBM;

pub const RAMP_TOP_DBM: f32 = -30.0;
/// Error at which the error ramp saturates to white.
pub const ERROR_RAMP_MAX_DB: f64 = 30.0;

fn to_u8(t: f64) -> u8 {
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// −160 dBm → 0 (black), −30 dBm → 255 (white), clamped.
pub fn dbm_level(v: f32) -> u8 {
    to_u8((v - FLOOR_DBM) as f64 / (RAMP_TOP_DBM - FLOOR_DBM) as f64)
}

/// 0 dB → black, [`ERROR_RAMP_MAX_DB`] and above → white.
pub fn error_level(e: f64) -> u8 {
    to_u8(e / ERROR_RAMP_MAX_DB)
}

pub fn encode_gray_png(pixels: &[u8], height: usize, width: usize, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    if pixels.len() != height * width || height == 0 {
        return Err(Error::Shape(format!("{} pixels for a {height}x{width} image", pixels.len())));
    }
    let img = |e: png::EncodingError| Error::Image(e.to_string());
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.to_string()).map_err(img)?;
        }
        let mut w = enc.write_header().map_err(img)?;
        w.write_image_data(pixels).map_err(img)?;
        w.finish().map_err(img)?;
    }
    Ok(out)
}

pub fn render_signal(values: &Grid<f32>, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let px: Vec<u8> = values.iter().map(|v| dbm_level(*v)).collect();
    encode_gray_png(&px, values.height(), values.width(), text)
}

pub fn render_error(errors: &Grid<f64>, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let px: Vec<u8> = errors.iter().map(|e| error_level(*e)).collect();
    encode_gray_png(&px, errors.height(), errors.width(), text)
}

pub fn write_png(bytes: &[u8], path: &Path) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(dbm_level(-160.0), 0);
        assert_eq!(dbm_level(-30.0), 255);
        assert_eq!(dbm_level(-200.0), 0);
        assert_eq!(dbm_level(0.0), 255);
        assert_eq!(dbm_level(-95.0), 128);
        assert_eq!(error_level(0.0), 0);
        assert_eq!(error_level(ERROR_RAMP_MAX_DB * 2.0), 255);
    }

    #[test]
    fn png_roundtrip_with_text() {
        let g = Grid::from_vec(2, 3, vec![-160.0, -30.0, -95.0, -160.0, -160.0, -30.0]).unwrap();
        let bytes = render_signal(&g, &[("config_hash", "abc")]).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let info = reader.info();
        assert_eq!((info.width, info.height), (3, 2));
        assert!(info.uncompressed_latin1_text.iter().any(|t| t.keyword == "config_hash" && t.text == "abc"));
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..6], &[0, 255, 128, 0, 0, 255]);
    }
}
