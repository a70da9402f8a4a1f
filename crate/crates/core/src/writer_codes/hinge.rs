use super::{CodeKind, WriterCode, WriterCodeError};
use crate::data::GrayImage;

pub const HINGE_BINS: usize = 30;
pub const HINGE_DIM: usize = HINGE_BINS * (HINGE_BINS + 1) / 2;
pub const LEG_LENGTH: usize = 5;
pub const MIN_CONTOUR_PIXELS: usize = 50;

/// Otsu threshold over 256 gray levels; returns a value in `[0, 1]`.
/// Pixels strictly below it count as ink.
pub fn otsu_threshold(img: &GrayImage) -> f64 {
    let mut hist = [0usize; 256];
    for &p in &img.pixels {
        hist[(p.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let total = img.pixels.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = t;
        }
    }
    // Levels 0..=best form the dark class.
    (best as f64 + 0.5) / 255.0
}

fn binarize(img: &GrayImage) -> Vec<bool> {
    let t = otsu_threshold(img);
    img.pixels.iter().map(|&p| p < t).collect()
}

/// Unit steps for headings east, south, west, north (image rows grow down).
const STEP: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

/// Ordered boundary pixels `(y, x)` of every 8-connected ink region, outer
/// and hole boundaries alike.
///
/// The walk follows pixel edges between ink and background with ink on the
/// right, so each such edge belongs to exactly one contour and the result is
/// independent of where a walk starts. The pixel sequence is the Moore
/// neighbourhood boundary of the region.
pub fn trace_contours(ink: &[bool], h: usize, w: usize) -> Vec<Vec<(usize, usize)>> {
    trace_contours_ordered(ink, h, w, false)
}

fn trace_contours_ordered(ink: &[bool], h: usize, w: usize, reverse: bool) -> Vec<Vec<(usize, usize)>> {
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && ink[y as usize * w + x as usize];
    let mut visited = vec![false; h * w * 4];
    let mut contours = Vec::new();
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..h * w).rev()) } else { Box::new(0..h * w) };
    for idx in order {
        if !ink[idx] {
            continue;
        }
        let (y, x) = ((idx / w) as isize, (idx % w) as isize);
        for heading in 0..4 {
            let left = STEP[(heading + 3) % 4];
            if visited[idx * 4 + heading] || at(y + left.0, x + left.1) {
                continue;
            }
            let mut contour: Vec<(usize, usize)> = Vec::new();
            let (mut p, mut hd) = ((y, x), heading);
            loop {
                visited[(p.0 as usize * w + p.1 as usize) * 4 + hd] = true;
                let cell = (p.0 as usize, p.1 as usize);
                if contour.last() != Some(&cell) {
                    contour.push(cell);
                }
                let (f, l) = (STEP[hd], STEP[(hd + 3) % 4]);
                let ahead_left = (p.0 + l.0 + f.0, p.1 + l.1 + f.1);
                let ahead_right = (p.0 + f.0, p.1 + f.1);
                (p, hd) = if at(ahead_left.0, ahead_left.1) {
                    (ahead_left, (hd + 3) % 4)
                } else if at(ahead_right.0, ahead_right.1) {
                    (ahead_right, hd)
                } else {
                    (p, (hd + 1) % 4)
                };
                if (p, hd) == ((y, x), heading) {
                    break;
                }
            }
            if contour.len() > 1 && contour.first() == contour.last() {
                contour.pop();
            }
            contours.push(contour);
        }
    }
    contours
}

/// Position of the unordered bin pair `(a, b)`, `a <= b`, in the packed
/// upper triangle.
pub fn hinge_index(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * HINGE_BINS - a * a.saturating_sub(1) / 2 + (b - a)
}

fn angle_bin(dy: isize, dx: isize) -> usize {
    let mut deg = (-(dy as f64)).atan2(dx as f64).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    ((deg / (360.0 / HINGE_BINS as f64)).floor() as usize) % HINGE_BINS
}

/// Normalized histogram of hinge angle pairs over all contours of the image.
pub fn hinge_histogram(img: &GrayImage) -> Result<WriterCode, WriterCodeError> {
    let ink = binarize(img);
    histogram_of(&trace_contours(&ink, img.height, img.width))
}

fn histogram_of(contours: &[Vec<(usize, usize)>]) -> Result<WriterCode, WriterCodeError> {
    let found: usize = contours.iter().map(Vec::len).sum();
    if found < MIN_CONTOUR_PIXELS {
        return Err(WriterCodeError::InsufficientInk { found, needed: MIN_CONTOUR_PIXELS });
    }
    let mut counts = vec![0u64; HINGE_DIM];
    for c in contours.iter().filter(|c| c.len() > 2 * LEG_LENGTH) {
        let n = c.len();
        for i in 0..n {
            let (y, x) = (c[i].0 as isize, c[i].1 as isize);
            let f = c[(i + LEG_LENGTH) % n];
            let b = c[(i + n - LEG_LENGTH) % n];
            let a1 = angle_bin(f.0 as isize - y, f.1 as isize - x);
            let a2 = angle_bin(b.0 as isize - y, b.1 as isize - x);
            counts[hinge_index(a1, a2)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(WriterCodeError::InsufficientInk { found: 0, needed: MIN_CONTOUR_PIXELS });
    }
    Ok(WriterCode {
        kind: CodeKind::Hinge,
        id: String::new(),
        values: counts.iter().map(|&k| k as f64 / total as f64).collect(),
    })
}
