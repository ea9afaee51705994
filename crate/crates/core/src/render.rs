//! Binary PPM (P6) rendering of fields and graphs.
//!
//! One pixel per cell, grid row `height - 1` at the top of the image. The
//! SLP value sets the brightness; where a direction distribution is given,
//! its argmax bin sets the hue. Graph edges are drawn in white on top.

use std::path::Path;

use crate::directional::{argmax, bin_center, DirField};
use crate::error::{DslpError, Result};
use crate::field::{for_each_segment_cell, GridField};
use crate::graphgen::LaneGraph;

pub const EDGE_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (y * self.width + x);
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// PPM with a `# manifest <hash>` comment line in the header.
    pub fn to_ppm_stamped(&self, manifest_hash: &str) -> Vec<u8> {
        let mut out = format!("P6\n# manifest {manifest_hash}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

/// HSV with `s = 1` to RGB; `hue` in turns.
fn hue_rgb(hue: f64, value: f64) -> [f64; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let f = h - h.floor();
    let (q, t) = (value * (1.0 - f), value * f);
    match h.floor() as u32 % 6 {
        0 => [value, t, 0.0],
        1 => [q, value, 0.0],
        2 => [0.0, value, t],
        3 => [0.0, q, value],
        4 => [t, 0.0, value],
        _ => [value, 0.0, q],
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render(slp: &GridField, dp: Option<&DirField>, graph: Option<&LaneGraph>) -> Result<Image> {
    let (w, h) = slp.dims();
    if let Some(d) = dp {
        if d.dims() != (w, h) {
            return Err(DslpError::DimensionMismatch(format!(
                "SLP {w}x{h} vs DP {}x{}",
                d.width(),
                d.height()
            )));
        }
    }
    let mut pixels = vec![0u8; 3 * w * h];
    let mut put = |i: usize, j: usize, rgb: [u8; 3]| {
        let k = 3 * ((h - 1 - j) * w + i);
        pixels[k..k + 3].copy_from_slice(&rgb);
    };
    for j in 0..h {
        for i in 0..w {
            let v = slp.get(i, j).clamp(0.0, 1.0);
            let rgb = match dp.and_then(|d| d.dist(i, j)) {
                Some(dist) => {
                    let turns = bin_center(argmax(dist), dist.len()) / std::f64::consts::TAU;
                    hue_rgb(turns, v)
                }
                None => [v; 3],
            };
            put(i, j, rgb.map(to_byte));
        }
    }
    if let Some(g) = graph {
        for e in &g.edges {
            if e.polyline.len() == 1 {
                for_each_segment_cell(e.polyline[0], e.polyline[0], w, h, |i, j| put(i, j, EDGE_COLOR));
            }
            for s in e.polyline.windows(2) {
                for_each_segment_cell(s[0], s[1], w, h, |i, j| put(i, j, EDGE_COLOR));
            }
        }
    }
    Ok(Image {
        width: w,
        height: h,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_black() {
        let z = GridField::zeros(12, 9, 1.0).unwrap();
        let d = DirField::uniform(16, 12, 9, 1.0).unwrap();
        let img = render(&z, Some(&d), None).unwrap();
        assert_eq!((img.width, img.height), (12, 9));
        assert!(img.pixels.iter().all(|&p| p == 0));
        assert!(img.to_ppm().starts_with(b"P6\n12 9\n255\n"));
        assert_eq!(img.to_ppm().len(), 12 + 3 * 12 * 9);
    }

    #[test]
    fn top_row_is_last_grid_row() {
        let f = GridField::from_fn(8, 8, 1.0, |_, j| if j == 7 { 1.0 } else { 0.0 }).unwrap();
        let img = render(&f, None, None).unwrap();
        assert_eq!(img.pixel(0, 0), [255; 3]);
        assert_eq!(img.pixel(0, 7), [0; 3]);
    }

    #[test]
    fn hue_wheel_primaries() {
        assert_eq!(hue_rgb(0.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hue_rgb(1.0 / 3.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hue_rgb(2.0 / 3.0, 1.0), [0.0, 0.0, 1.0]);
    }
}
