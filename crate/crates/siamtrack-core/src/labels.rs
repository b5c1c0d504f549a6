//! Training-target construction: Gaussian score labels, sub-stride offset
//! targets and log-space size targets.
//!
//! All positions here are measured in instance-patch pixels from the map
//! origin, i.e. the patch point that score-map cell (0, 0) scores. Cell
//! `(x, y)` sits at `(x*stride, y*stride)`, so the map covers
//! `[0, stride*map_size)` on each axis; callers translate true patch
//! coordinates into this frame (the tracker does so through its crop
//! origin).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box, center + size, in whatever pixel frame the context
/// defines (frame pixels for tracking, patch pixels for targets).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid(
                "bbox",
                format!("need positive size and finite center, got ({cx}, {cy}, {w}, {h})"),
            ));
        }
        Ok(BBox { cx, cy, w, h })
    }

    /// Top-left corner, as used by the annotation file format.
    pub fn top_left(&self) -> (f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0)
    }

    pub fn from_top_left(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x + w / 2.0, y + h / 2.0, w, h)
    }
}

/// Targets for one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTargets {
    /// `[1, M, M]` Gaussian label with value exactly 1 at `center_cell`.
    pub score_label: Tensor,
    /// Sub-stride remainder of the center, each component in `[0, 1)`.
    pub delta: (f64, f64),
    /// `(ln w, ln h)` of the box in patch pixels.
    pub size_log: (f64, f64),
    /// Cell owning the center: `floor(center / stride)`.
    pub center_cell: (usize, usize),
}

/// Raw head maps for one instance patch.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[1, M, M]` post-sigmoid score, strictly inside (0, 1).
    pub score: Tensor,
    /// `[2, M, M]` predicted sub-stride offsets (x then y channel).
    pub offset: Tensor,
    /// `[2, M, M]` predicted log sizes (width then height channel).
    pub size: Tensor,
}

fn check_covered(center: (f64, f64), map_size: usize, stride: usize) -> Result<()> {
    let limit = (map_size * stride) as f64;
    if !(0.0..limit).contains(&center.0) || !(0.0..limit).contains(&center.1) {
        return Err(Error::invalid(
            "target center",
            format!(
                "({}, {}) outside the region covered by a {map_size}x{map_size} map at stride {stride}",
                center.0, center.1
            ),
        ));
    }
    Ok(())
}

/// Gaussian classification label: standard deviation one sixth of the box
/// width/height, peak forced to exactly 1 at the cell owning the center.
pub fn gaussian_label(bbox_patch: &BBox, map_size: usize, stride: usize) -> Result<Tensor> {
    check_covered((bbox_patch.cx, bbox_patch.cy), map_size, stride)?;
    let (mu1, mu2) = (bbox_patch.cx, bbox_patch.cy);
    let sigma1 = bbox_patch.w / 6.0;
    let sigma2 = bbox_patch.h / 6.0;
    let mut data = Vec::with_capacity(map_size * map_size);
    for y in 0..map_size {
        for x in 0..map_size {
            let dx = (x * stride) as f64 - mu1;
            let dy = (y * stride) as f64 - mu2;
            let v = (-0.5 * ((dx / sigma1).powi(2) + (dy / sigma2).powi(2))).exp();
            data.push(v.min(1.0));
        }
    }
    let (cell, _) = offset_target((mu1, mu2), stride)?;
    data[cell.1 * map_size + cell.0] = 1.0;
    Tensor::new(vec![1, map_size, map_size], data)
}

/// Splits a patch-pixel center into its owning cell and the sub-stride
/// remainder that the offset branch regresses.
pub fn offset_target(center: (f64, f64), stride: usize) -> Result<((usize, usize), (f64, f64))> {
    if center.0 < 0.0 || center.1 < 0.0 {
        return Err(Error::invalid(
            "target center",
            format!("({}, {}) has a negative component", center.0, center.1),
        ));
    }
    let s = stride as f64;
    let cell_x = (center.0 / s).floor();
    let cell_y = (center.1 / s).floor();
    let delta = (center.0 / s - cell_x, center.1 / s - cell_y);
    Ok(((cell_x as usize, cell_y as usize), delta))
}

/// Log-space size target `(ln w, ln h)`.
pub fn scale_target(bbox_patch: &BBox) -> Result<(f64, f64)> {
    if !(bbox_patch.w > 0.0 && bbox_patch.h > 0.0) {
        return Err(Error::invalid(
            "scale target",
            format!("non-positive size ({}, {})", bbox_patch.w, bbox_patch.h),
        ));
    }
    Ok((bbox_patch.w.ln(), bbox_patch.h.ln()))
}

/// Builds the full target triple for a box in map coordinates.
pub fn head_targets(bbox_patch: &BBox, map_size: usize, stride: usize) -> Result<HeadTargets> {
    let score_label = gaussian_label(bbox_patch, map_size, stride)?;
    let (center_cell, delta) = offset_target((bbox_patch.cx, bbox_patch.cy), stride)?;
    let size_log = scale_target(bbox_patch)?;
    Ok(HeadTargets {
        score_label,
        delta,
        size_log,
        center_cell,
    })
}
