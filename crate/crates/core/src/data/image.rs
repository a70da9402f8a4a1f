use serde::{Deserialize, Serialize};

/// Grayscale image, row-major, values in `[0, 1]` with 1 as white paper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel count does not match {height}x{width}");
        GrayImage { height, width, pixels }
    }

    pub fn blank(height: usize, width: usize) -> Self {
        GrayImage { height, width, pixels: vec![1.0; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample with white outside the image.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let at = |yy: f64, xx: f64| {
            if yy < 0.0 || xx < 0.0 || yy >= self.height as f64 || xx >= self.width as f64 {
                1.0
            } else {
                self.get(yy as usize, xx as usize)
            }
        };
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
        let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Box-filter downscale by an integer factor (trailing pixels dropped).
    pub fn downscale(&self, factor: usize) -> GrayImage {
        if factor <= 1 {
            return self.clone();
        }
        let (h, w) = ((self.height / factor).max(1), (self.width / factor).max(1));
        let mut out = GrayImage::blank(h, w);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let (yy, xx) = (y * factor + dy, x * factor + dx);
                        if yy < self.height && xx < self.width {
                            s += self.get(yy, xx);
                            n += 1.0;
                        }
                    }
                }
                out.set(y, x, s / n);
            }
        }
        out
    }

    /// Crops or right-pads (white) to `width`.
    pub fn fit_width(&self, width: usize) -> GrayImage {
        let mut out = GrayImage::blank(self.height, width);
        for y in 0..self.height {
            for x in 0..width.min(self.width) {
                out.set(y, x, self.get(y, x));
            }
        }
        out
    }
}
