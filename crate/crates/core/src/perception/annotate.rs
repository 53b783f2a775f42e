//! Numeral overlays for telling identical objects apart.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Pixel;
use crate::gateway::ImageAttachment;

/// Disc radius of a numeral mark, pixels.
pub const MARK_RADIUS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumeralMark {
    pub number: u32,
    pub at: Pixel,
}

/// An image that can be sent to a vision backend, with or without marks.
pub trait MarkableImage {
    fn attachment(&self) -> ImageAttachment;

    fn with_marks(&self, marks: &[NumeralMark]) -> ImageAttachment;
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut data = vec![0; width as usize * height as usize * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill_disc(&mut self, center: Pixel, radius: u32, rgb: [u8; 3]) {
        let (cx, cy) = center.index();
        let r = i64::from(radius);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, rgb);
                }
            }
        }
    }

    /// Draws `number` centred on `center` with the built-in 3x5 digit font.
    pub fn draw_number(&mut self, center: Pixel, number: u32, scale: u32, rgb: [u8; 3]) {
        let digits: Vec<usize> = format!("{number}")
            .bytes()
            .map(|b| usize::from(b - b'0'))
            .collect();
        let s = i64::from(scale.max(1));
        let glyph_w = 3 * s;
        let total_w = digits.len() as i64 * glyph_w + (digits.len() as i64 - 1) * s;
        let (cx, cy) = center.index();
        let x0 = cx - total_w / 2;
        let y0 = cy - (5 * s) / 2;
        for (n, d) in digits.iter().enumerate() {
            let gx = x0 + n as i64 * (glyph_w + s);
            for (row, bits) in FONT[*d].iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        for yy in 0..s {
                            for xx in 0..s {
                                self.put(gx + col * s + xx, y0 + row as i64 * s + yy, rgb);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Binary PPM (`P6`) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub const PPM_MEDIA_TYPE: &str = "image/x-portable-pixmap";

impl MarkableImage for RgbImage {
    fn attachment(&self) -> ImageAttachment {
        ImageAttachment::new(PPM_MEDIA_TYPE, self.to_ppm())
    }

    fn with_marks(&self, marks: &[NumeralMark]) -> ImageAttachment {
        let mut copy = self.clone();
        for mark in marks {
            copy.fill_disc(mark.at, MARK_RADIUS, [20, 20, 20]);
            copy.draw_number(mark.at, mark.number, 3, [255, 255, 255]);
        }
        copy.attachment()
    }
}

const FONT: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marks_leave_original_untouched() {
        let img = RgbImage::new(64, 48, [200, 100, 50]);
        let marked = img.with_marks(&[NumeralMark {
            number: 2,
            at: Pixel::new(32.0, 24.0),
        }]);
        assert_eq!(img.get(32, 24), [200, 100, 50]);
        assert_ne!(marked, img.attachment());
        assert!(marked.data.starts_with(b"P6\n64 48\n255\n"));
    }

    #[test]
    fn numeral_is_white_on_dark_disc() {
        let mut img = RgbImage::new(64, 48, [200, 200, 200]);
        let at = Pixel::new(32.5, 24.5);
        img.fill_disc(at, MARK_RADIUS, [20, 20, 20]);
        img.draw_number(at, 1, 3, [255, 255, 255]);
        // disc edge stays dark, the stem of the "1" is white
        assert_eq!(img.get(32 + 11, 24), [20, 20, 20]);
        assert_eq!(img.get(32, 24), [255, 255, 255]);
        assert_eq!(img.get(32 + 13, 24), [200, 200, 200]);
    }
}
