//! Per-pixel scalar fields: local entropy, Sobel gradient magnitude and a
//! Canny-style classical edge map. Borders are handled by edge replication
//! everywhere, so every map keeps its source dimensions.

use std::collections::VecDeque;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::PixelRect;
use crate::num::Scalar;

pub const DEFAULT_ENTROPY_WINDOW: usize = 9;
pub const CANNY_SIGMA: f64 = 1.4;
pub const DEFAULT_EDGE_LOW: f64 = 40.0;
pub const DEFAULT_EDGE_HIGH: f64 = 100.0;

/// Row-major per-pixel field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap<T> {
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl<T: Scalar> ScalarMap<T> {
    pub fn new(width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::param(format!(
                "scalar map of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(ScalarMap { width, height, values })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> T) -> Self {
        let values = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        ScalarMap { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> T {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Values inside `rect`, row-major.
    pub fn region(&self, rect: PixelRect) -> impl Iterator<Item = T> + '_ {
        (rect.y..rect.y2()).flat_map(move |y| (rect.x..rect.x2()).map(move |x| self.get(x, y)))
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::zero(), T::max)
    }

    /// Linear rescale to 8-bit, mapping 0 to black and the map maximum (or
    /// `scale_max` when given) to white.
    pub fn to_gray_image(&self, scale_max: Option<T>) -> GrayImage {
        let max = scale_max.unwrap_or_else(|| self.max_value());
        crate::io::gray_from_fn(self.width, self.height, |x, y| {
            if max <= T::zero() {
                return 0;
            }
            let v = (self.get(x, y) / max).max(T::zero()).min(T::one());
            (v.as_f64() * 255.0).round() as u8
        })
    }
}

/// Edge strength normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap<T> {
    map: ScalarMap<T>,
}

impl<T: Scalar> EdgeMap<T> {
    pub fn new(width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::param("edge map values must lie in [0, 1]"));
        }
        Ok(EdgeMap { map: ScalarMap::new(width, height, values)? })
    }

    pub fn width(&self) -> u32 {
        self.map.width
    }

    pub fn height(&self) -> u32 {
        self.map.height
    }

    pub fn get(&self, x: u32, y: u32) -> T {
        self.map.get(x, y)
    }

    pub fn values(&self) -> &[T] {
        &self.map.values
    }

    pub fn as_scalar_map(&self) -> &ScalarMap<T> {
        &self.map
    }

    pub fn to_gray_image(&self) -> GrayImage {
        self.map.to_gray_image(Some(T::one()))
    }

    /// Decodes an 8-bit grayscale raster, mapping 255 to 1.0.
    pub fn from_gray_image(img: &GrayImage) -> Self {
        let values = img.pixels().map(|p| T::of(p[0] as f64) / T::of(255.0)).collect();
        EdgeMap { map: ScalarMap { width: img.width(), height: img.height(), values } }
    }
}

/// ITU-R 601 luma, rounded to nearest.
pub fn to_grayscale(image: &RgbImage) -> GrayImage {
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        let [r, g, b] = image.get_pixel(x, y).0;
        let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        Luma([luma.round().min(255.0) as u8])
    })
}

#[inline]
fn clamp_index(i: i64, len: u32) -> u32 {
    i.clamp(0, len as i64 - 1) as u32
}

/// Shannon entropy in bits of the 256-bin histogram over a centered
/// `window x window` neighbourhood of every pixel.
pub fn local_entropy<T: Scalar>(gray: &GrayImage, window: usize) -> Result<ScalarMap<T>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::param(format!("entropy window must be odd and >= 3, got {window}")));
    }
    let (w, h) = gray.dimensions();
    if (w as usize) < window || (h as usize) < window {
        return Err(Error::param(format!("entropy window {window} exceeds image {w}x{h}")));
    }
    let r = (window / 2) as i64;
    let n = window * window;
    // c * log2(c) for every possible bin count
    let clog: Vec<T> = (0..=n)
        .map(|c| if c == 0 { T::zero() } else { T::of_usize(c) * T::of_usize(c).log2() })
        .collect();
    let n_t = T::of_usize(n);
    let log_n = n_t.log2();
    let px = |x: i64, y: i64| gray.get_pixel(clamp_index(x, w), clamp_index(y, h))[0] as usize;

    let mut values = Vec::with_capacity(w as usize * h as usize);
    let mut hist = [0usize; 256];
    for y in 0..h as i64 {
        hist.fill(0);
        for dy in -r..=r {
            for dx in -r..=r {
                hist[px(dx, y + dy)] += 1;
            }
        }
        for x in 0..w as i64 {
            if x > 0 {
                for dy in -r..=r {
                    hist[px(x - 1 - r, y + dy)] -= 1;
                    hist[px(x + r, y + dy)] += 1;
                }
            }
            let s: T = hist.iter().filter(|&&c| c > 0).map(|&c| clog[c]).sum();
            let e = log_n - s / n_t;
            values.push(e.max(T::zero()));
        }
    }
    Ok(ScalarMap { width: w, height: h, values })
}

fn sobel<T: Scalar>(width: u32, height: u32, at: impl Fn(i64, i64) -> T) -> (Vec<T>, Vec<T>) {
    let two = T::of(2.0);
    let mut gx = Vec::with_capacity(width as usize * height as usize);
    let mut gy = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let p = |dx: i64, dy: i64| at(x + dx, y + dy);
            gx.push((p(1, -1) + two * p(1, 0) + p(1, 1)) - (p(-1, -1) + two * p(-1, 0) + p(-1, 1)));
            gy.push((p(-1, 1) + two * p(0, 1) + p(1, 1)) - (p(-1, -1) + two * p(0, -1) + p(1, -1)));
        }
    }
    (gx, gy)
}

/// Sobel 3x3 gradient magnitude `sqrt(gx^2 + gy^2)`.
pub fn gradient_magnitude<T: Scalar>(gray: &GrayImage) -> Result<ScalarMap<T>> {
    let (w, h) = gray.dimensions();
    if w < 3 || h < 3 {
        return Err(Error::param(format!("gradient needs at least 3x3, got {w}x{h}")));
    }
    let (gx, gy) = sobel(w, h, |x, y| T::of(gray.get_pixel(clamp_index(x, w), clamp_index(y, h))[0] as f64));
    let values = gx.iter().zip(&gy).map(|(&a, &b)| (a * a + b * b).sqrt()).collect();
    Ok(ScalarMap { width: w, height: h, values })
}

fn gaussian_kernel<T: Scalar>(sigma: f64) -> Vec<T> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::of(v / total)).collect()
}

fn gaussian_blur<T: Scalar>(gray: &GrayImage, sigma: f64) -> Vec<T> {
    let (w, h) = gray.dimensions();
    let kernel = gaussian_kernel::<T>(sigma);
    let r = (kernel.len() / 2) as i64;
    let mut horiz = vec![T::zero(); w as usize * h as usize];
    for y in 0..h {
        for x in 0..w as i64 {
            let mut acc = T::zero();
            for (k, &g) in kernel.iter().enumerate() {
                let sx = clamp_index(x + k as i64 - r, w);
                acc = acc + g * T::of(gray.get_pixel(sx, y)[0] as f64);
            }
            horiz[y as usize * w as usize + x as usize] = acc;
        }
    }
    let mut out = vec![T::zero(); w as usize * h as usize];
    for y in 0..h as i64 {
        for x in 0..w as usize {
            let mut acc = T::zero();
            for (k, &g) in kernel.iter().enumerate() {
                let sy = clamp_index(y + k as i64 - r, h) as usize;
                acc = acc + g * horiz[sy * w as usize + x];
            }
            out[y as usize * w as usize + x] = acc;
        }
    }
    out
}

/// Canny-style binary edges: Gaussian smoothing (sigma 1.4), Sobel
/// gradients, non-maximum suppression and hysteresis between `low` and
/// `high` (gradient-magnitude units of the smoothed image).
pub fn edge_map_classical<T: Scalar>(gray: &GrayImage, low: T, high: T) -> Result<EdgeMap<T>> {
    if !(low >= T::zero() && low < high) {
        return Err(Error::param(format!("edge thresholds need 0 <= low < high, got {low}, {high}")));
    }
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::param("edge map of an empty image"));
    }
    let smooth = gaussian_blur::<T>(gray, CANNY_SIGMA);
    let idx = |x: i64, y: i64| clamp_index(y, h) as usize * w as usize + clamp_index(x, w) as usize;
    let (gx, gy) = sobel(w, h, |x, y| smooth[idx(x, y)]);
    let mag: Vec<T> = gx.iter().zip(&gy).map(|(&a, &b)| (a * a + b * b).sqrt()).collect();

    // Non-maximum suppression. Strict against the trailing neighbour and
    // non-strict against the leading one, so plateaus of equal magnitude
    // across an edge thin to a single pixel.
    let mut thin = vec![T::zero(); mag.len()];
    let at = |x: i64, y: i64| -> T {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            T::zero()
        } else {
            mag[y as usize * w as usize + x as usize]
        }
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w as usize + x as usize;
            let m = mag[i];
            if m <= T::zero() {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < T::zero() {
                angle = angle + T::of(180.0);
            }
            let a = angle.as_f64();
            let (dx, dy) = if !(22.5..157.5).contains(&a) {
                (1, 0)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            if m > at(x - dx, y - dy) && m >= at(x + dx, y + dy) {
                thin[i] = m;
            }
        }
    }

    let mut out = vec![T::zero(); mag.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            out[i] = T::one();
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w as usize) as i64, (i / w as usize) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w as usize + nx as usize;
                if out[j] == T::zero() && thin[j] >= low {
                    out[j] = T::one();
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeMap::new(w, h, out)
}

/// Classical edges with the crate's default thresholds.
pub fn default_edges<T: Scalar>(gray: &GrayImage) -> Result<EdgeMap<T>> {
    edge_map_classical(gray, T::of(DEFAULT_EDGE_LOW), T::of(DEFAULT_EDGE_HIGH))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn constant(w: u32, h: u32, v: u8) -> GrayImage {
        GrayImage::from_pixel(w, h, Luma([v]))
    }

    fn vertical_step(w: u32, h: u32, at: u32, lo: u8, hi: u8) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| Luma([if x < at { lo } else { hi }]))
    }

    #[test]
    fn grayscale_luma() {
        let img = RgbImage::from_fn(3, 1, |x, _| match x {
            0 => Rgb([255, 255, 255]),
            1 => Rgb([255, 0, 0]),
            _ => Rgb([37, 37, 37]),
        });
        let g = to_grayscale(&img);
        assert_eq!(g.get_pixel(0, 0)[0], 255);
        assert_eq!(g.get_pixel(1, 0)[0], 76);
        assert_eq!(g.get_pixel(2, 0)[0], 37);
    }

    #[test]
    fn entropy_of_constant_is_zero() {
        let e = local_entropy::<f64>(&constant(12, 12, 77), 9).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    fn binary_entropy(k: f64, n: f64) -> f64 {
        let p = k / n;
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    // An odd window always holds an odd pixel count, so a perfect 50/50 split
    // cannot occur; two-symbol windows are checked against the closed form.
    #[test]
    fn entropy_two_symbols_closed_form() {
        let img = GrayImage::from_fn(9, 9, |x, y| Luma([if (x + y) % 2 == 0 { 10 } else { 20 }]));
        let e = local_entropy::<f64>(&img, 3).unwrap();
        assert!((e.get(4, 4) - binary_entropy(5.0, 9.0)).abs() < 1e-12);
        assert!((e.get(3, 4) - binary_entropy(4.0, 9.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_replicates_borders() {
        let mut img = constant(3, 3, 0);
        img.put_pixel(0, 0, Luma([255]));
        let e = local_entropy::<f64>(&img, 3).unwrap();
        // the corner pixel is replicated into 4 of the 9 window cells
        assert!((e.get(0, 0) - binary_entropy(4.0, 9.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_bad_windows() {
        let img = constant(10, 10, 0);
        assert!(local_entropy::<f64>(&img, 4).is_err());
        assert!(local_entropy::<f64>(&img, 1).is_err());
        assert!(local_entropy::<f64>(&img, 11).is_err());
    }

    #[test]
    fn sobel_on_step() {
        let g = gradient_magnitude::<f64>(&vertical_step(8, 6, 4, 10, 30)).unwrap();
        for y in 0..6 {
            assert_eq!(g.get(3, y), 80.0);
            assert_eq!(g.get(4, y), 80.0);
            assert_eq!(g.get(1, y), 0.0);
            assert_eq!(g.get(6, y), 0.0);
        }
        assert!(gradient_magnitude::<f64>(&constant(2, 5, 0)).is_err());
    }

    #[test]
    fn sobel_constant_offset_invariance() {
        let base = GrayImage::from_fn(9, 7, |x, y| Luma([((x * 17 + y * 31) % 100) as u8]));
        let shifted = GrayImage::from_fn(9, 7, |x, y| Luma([base.get_pixel(x, y)[0] + 50]));
        assert_eq!(
            gradient_magnitude::<f64>(&base).unwrap(),
            gradient_magnitude::<f64>(&shifted).unwrap()
        );
    }

    #[test]
    fn canny_constant_and_step() {
        let z = edge_map_classical::<f64>(&constant(16, 16, 90), 10.0, 30.0).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));

        let e = edge_map_classical::<f64>(&vertical_step(20, 12, 10, 0, 200), 20.0, 60.0).unwrap();
        for y in 0..12 {
            let row: Vec<u32> = (0..20).filter(|&x| e.get(x, y) == 1.0).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
            assert!(row[0] == 9 || row[0] == 10);
        }
        assert!(e.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn canny_threshold_order() {
        assert!(edge_map_classical::<f32>(&constant(4, 4, 0), 5.0, 5.0).is_err());
        assert!(edge_map_classical::<f32>(&constant(4, 4, 0), -1.0, 5.0).is_err());
    }

    #[test]
    fn edge_map_range_validated() {
        assert!(EdgeMap::<f32>::new(1, 1, vec![1.5]).is_err());
        assert!(EdgeMap::<f32>::new(1, 2, vec![0.0, 1.0]).is_ok());
    }
}
