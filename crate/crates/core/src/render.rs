//! Class maps as binary PPM images.

use crate::error::{Error, Result};

/// Golden-angle hue rotation per class; class 0 is black.
pub fn class_color(class: u16) -> [u8; 3] {
    if class == 0 {
        return [0, 0, 0];
    }
    let hue = (f64::from(class - 1) * 137.507_764_050_037_85) % 360.0;
    hsv_to_rgb(hue, 0.75, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// P6 encoding of a row-major class map.
pub fn render_ppm(map: &[u16], height: usize, width: usize) -> Result<Vec<u8>> {
    if map.len() != height * width {
        return Err(Error::shape("render_ppm", "map length differs from height×width"));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(map.len() * 3);
    for &k in map {
        out.extend_from_slice(&class_color(k));
    }
    Ok(out)
}
