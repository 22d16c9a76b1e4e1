//! Box types: continuous `BBox` in COCO `[x, y, w, h]` form and the integer
//! `PixelRect` used to address rasters.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;

/// Axis-aligned box with top-left origin, serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> From<[T; 4]> for BBox<T> {
    fn from([x, y, w, h]: [T; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl<T: Scalar> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        BBox { x, y, w, h }
    }

    pub fn x2(&self) -> T {
        self.x + self.w
    }

    pub fn y2(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn scaled(&self, factor: T) -> Self {
        BBox::new(self.x * factor, self.y * factor, self.w * factor, self.h * factor)
    }

    /// Intersection area with `other`; zero when disjoint.
    pub fn intersection_area(&self, other: &Self) -> T {
        let iw = self.x2().min(other.x2()) - self.x.max(other.x);
        let ih = self.y2().min(other.y2()) - self.y.max(other.y);
        if iw <= T::zero() || ih <= T::zero() {
            T::zero()
        } else {
            iw * ih
        }
    }

    /// Smallest pixel rectangle covering the box, clipped to `width x height`.
    pub fn to_pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let x0 = self.x.floor().max(T::zero()).as_f64() as u32;
        let y0 = self.y.floor().max(T::zero()).as_f64() as u32;
        let x1 = (self.x2().ceil().as_f64() as u32).min(width);
        let y1 = (self.y2().ceil().as_f64() as u32).min(height);
        let x0 = x0.min(x1);
        let y0 = y0.min(y1);
        PixelRect::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Integer pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        PixelRect { x, y, w, h }
    }

    pub fn x2(&self) -> u32 {
        self.x + self.w
    }

    pub fn y2(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x2() && y >= self.y && y < self.y2()
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x < other.x2()
            && other.x < self.x2()
            && self.y < other.y2()
            && other.y < self.y2()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x2() <= width && self.y2() <= height
    }

    pub fn to_bbox<T: Scalar>(&self) -> BBox<T> {
        BBox::new(
            T::of(self.x as f64),
            T::of(self.y as f64),
            T::of(self.w as f64),
            T::of(self.h as f64),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_serializes_as_coco_array() {
        let b = BBox::new(1.0f64, 2.0, 3.5, 4.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.0,2.0,3.5,4.0]");
        let back: BBox<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn pixel_rect_covers_fractional_box() {
        let r = BBox::new(1.5f64, 2.2, 3.0, 1.0).to_pixel_rect(100, 100);
        assert_eq!(r, PixelRect::new(1, 2, 4, 2));
        let clipped = BBox::new(95.0f64, 0.0, 10.0, 5.0).to_pixel_rect(100, 100);
        assert_eq!(clipped, PixelRect::new(95, 0, 5, 5));
    }

    #[test]
    fn rect_intersection_is_half_open() {
        let a = PixelRect::new(0, 0, 10, 10);
        assert!(!a.intersects(&PixelRect::new(10, 0, 5, 5)));
        assert!(a.intersects(&PixelRect::new(9, 9, 5, 5)));
    }
}
