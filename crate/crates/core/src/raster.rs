//! RGB8 rasters with patch statistics and convex polygon fill.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{cross2, OrientedBox, Vec2};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRaster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageRaster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid(
                "raster",
                alloc::format!("{} bytes for a {}x{} RGB image", pixels.len(), width, height),
            ));
        }
        Ok(ImageRaster { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = vec![0u8; width as usize * height as usize * 3];
        for px in pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        ImageRaster { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma of one pixel.
    pub fn luminance(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.get(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    }

    /// Mean luminance over pixel centers inside the box. Fails if any
    /// corner lies outside the raster or no pixel center is covered.
    pub fn patch_mean_luminance(&self, patch: &OrientedBox) -> Result<f64> {
        let (lo, hi) = patch.bounds();
        if lo.x < 0.0 || lo.y < 0.0 || hi.x > self.width as f64 || hi.y > self.height as f64 {
            return Err(Error::invalid("patch", "extends outside the raster"));
        }
        let corners = patch.corners();
        let mut sum = 0.0;
        let mut count = 0usize;
        self.for_each_covered(&corners, |x, y| {
            sum += self.luminance(x, y);
            count += 1;
        });
        if count == 0 {
            return Err(Error::invalid("patch", "covers no pixel centers"));
        }
        Ok(sum / count as f64)
    }

    /// Fills every pixel whose center lies inside the convex polygon.
    pub fn fill_convex(&mut self, poly: &[Vec2], rgb: [u8; 3]) {
        let mut hits = Vec::new();
        self.for_each_covered(poly, |x, y| hits.push((x, y)));
        for (x, y) in hits {
            self.set(x, y, rgb);
        }
    }

    fn for_each_covered(&self, poly: &[Vec2], mut f: impl FnMut(u32, u32)) {
        if poly.len() < 3 || self.width == 0 || self.height == 0 {
            return;
        }
        let mut lo = poly[0];
        let mut hi = poly[0];
        for p in poly {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let x0 = libm::floor(lo.x - 0.5).max(0.0) as u32;
        let y0 = libm::floor(lo.y - 0.5).max(0.0) as u32;
        let x1 = (libm::ceil(hi.x).max(0.0) as u32).min(self.width - 1);
        let y1 = (libm::ceil(hi.y).max(0.0) as u32).min(self.height - 1);
        if lo.x > self.width as f64 || lo.y > self.height as f64 {
            return;
        }
        let orient = if crate::geom::polygon_area(poly) >= 0.0 { 1.0 } else { -1.0 };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let inside = (0..poly.len()).all(|i| {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    orient * cross2(&(b - a), &(c - a)) >= 0.0
                });
                if inside {
                    f(x, y);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(ImageRaster::new(10, 10, vec![0; 150]).is_err());
        assert!(ImageRaster::new(2, 2, vec![255; 12]).is_ok());
    }

    #[test]
    fn patch_mean_of_two_tone_image() {
        let mut img = ImageRaster::filled(20, 10, [100, 100, 100]);
        img.fill_convex(
            &[Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0), Vec2::new(20.0, 10.0), Vec2::new(10.0, 10.0)],
            [200, 200, 200],
        );
        let left = OrientedBox::new(Vec2::new(5.0, 5.0), 8.0, 8.0, 0.0).unwrap();
        let both = OrientedBox::new(Vec2::new(10.0, 5.0), 10.0, 4.0, 0.0).unwrap();
        assert!((img.patch_mean_luminance(&left).unwrap() - 100.0).abs() < 1e-9);
        assert!((img.patch_mean_luminance(&both).unwrap() - 150.0).abs() < 1e-9);
        let outside = OrientedBox::new(Vec2::new(19.0, 5.0), 8.0, 8.0, 0.0).unwrap();
        assert!(img.patch_mean_luminance(&outside).is_err());
    }
}
