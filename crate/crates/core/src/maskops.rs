//! Binary mask algebra on column-major RLE.
//!
//! Intersections are computed by merging foreground intervals straight from
//! the run lists; [`DenseMask`] exists for construction and as a test oracle.

use crate::error::{Error, Result};
use crate::model::{BBox, RleMask};

/// Column-major bit grid: pixel `(x, y)` lives at `x * height + y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    pub height: u32,
    pub width: u32,
    pub bits: Vec<bool>,
}

impl DenseMask {
    pub fn new(height: u32, width: u32) -> Self {
        DenseMask {
            height,
            width,
            bits: vec![false; height as usize * width as usize],
        }
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height as usize * width as usize);
        for x in 0..width {
            for y in 0..height {
                bits.push(f(x, y));
            }
        }
        DenseMask {
            height,
            width,
            bits,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[x as usize * self.height as usize + y as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let h = self.height as usize;
        self.bits[x as usize * h + y as usize] = value;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Tight pixel box `[x1, y1, x2, y2)`; `None` when empty.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for x in 0..self.width {
            for y in 0..self.height {
                if self.get(x, y) {
                    any = true;
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        any.then(|| BBox::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32))
    }
}

pub fn rle_encode(mask: &DenseMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in &mask.bits {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<DenseMask> {
    rle.check()?;
    let mut bits = Vec::with_capacity(rle.num_pixels() as usize);
    for (i, &run) in rle.counts.iter().enumerate() {
        let fg = i % 2 == 1;
        bits.extend(std::iter::repeat_n(fg, run as usize));
    }
    Ok(DenseMask {
        height: rle.height,
        width: rle.width,
        bits,
    })
}

/// Foreground intervals `[start, end)` in column-major pixel order.
fn foreground_runs(rle: &RleMask) -> impl Iterator<Item = (u64, u64)> + '_ {
    let mut pos = 0u64;
    rle.counts.iter().enumerate().filter_map(move |(i, &c)| {
        let start = pos;
        pos += u64::from(c);
        (i % 2 == 1 && c > 0).then_some((start, pos))
    })
}

fn check_same_dims(a: &RleMask, b: &RleMask) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::InvalidMask(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Foreground overlap of two masks of equal size.
pub fn intersection_area(a: &RleMask, b: &RleMask) -> Result<u64> {
    check_same_dims(a, b)?;
    a.check()?;
    b.check()?;
    let mut ia = foreground_runs(a).peekable();
    let mut ib = foreground_runs(b).peekable();
    let mut total = 0u64;
    while let (Some(&(s1, e1)), Some(&(s2, e2))) = (ia.peek(), ib.peek()) {
        let lo = s1.max(s2);
        let hi = e1.min(e2);
        if hi > lo {
            total += hi - lo;
        }
        if e1 <= e2 {
            ia.next();
        } else {
            ib.next();
        }
    }
    Ok(total)
}

/// `(intersection, union)` pixel counts.
pub fn overlap(a: &RleMask, b: &RleMask) -> Result<(u64, u64)> {
    let inter = intersection_area(a, b)?;
    Ok((inter, a.area() + b.area() - inter))
}

/// Mask IoU; 0.0 when both masks are empty.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64> {
    let (inter, union) = overlap(a, b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Spatio-temporal IoU over aligned frame sequences; `None` is an empty mask.
pub fn st_iou(pred: &[Option<&RleMask>], gt: &[Option<&RleMask>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "sequence lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (p, g) in pred.iter().zip(gt) {
        match (p, g) {
            (Some(p), Some(g)) => {
                let (i, u) = overlap(p, g)?;
                inter += i;
                union += u;
            }
            (Some(m), None) | (None, Some(m)) => union += m.area(),
            (None, None) => {}
        }
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Axis-aligned box IoU; 0.0 when the union has no area.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (f64::from(a.x2.min(b.x2)) - f64::from(a.x1.max(b.x1))).max(0.0);
    let ih = (f64::from(a.y2.min(b.y2)) - f64::from(a.y1.max(b.y1))).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
