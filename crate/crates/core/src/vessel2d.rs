//! Per-plexus 2D vessel segmentation: vesselness enhancement, global
//! thresholding, centerline thinning and radius annotation.
//!
//! The output of [`segment_plexus_2d`] is a binary vessel map (consumed by
//! the 2D avascular-zone measurement) plus a radius-annotated skeleton
//! (consumed by the 3D reconstruction).

use std::sync::OnceLock;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{BinaryImage, Image, ScalarImage};
use crate::preprocess::gaussian_smooth_2d;

/// One centerline point with its estimated vessel radius in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkelPoint2 {
    pub x: u32,
    pub y: u32,
    /// Always >= 1; a zero radius would generate no 3D voxels.
    pub radius: u32,
}

/// Radius-annotated vessel centerline. Points are stored in raster order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Skeleton2D {
    pub points: Vec<SkelPoint2>,
}

impl Skeleton2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// ===========================================================================
// Vesselness enhancement
// ===========================================================================

/// Multi-scale Hessian vesselness for bright ridges on a dark background.
///
/// Per scale sigma the image is Gaussian-smoothed, the Hessian is taken by
/// central differences (exactly zero on constant inputs) and scale-normalized
/// by sigma^2; with eigenvalues |l1| <= |l2| the response is
///   V = exp(-(l1/l2)^2 / (2 b1^2)) * (1 - exp(-(l1^2+l2^2) / (2 b2^2))),
/// suppressed to 0 where l2 >= 0 (dark ridge or flat). The output is the
/// per-pixel maximum over scales and lies in [0, 1].
///
/// beta_two is an absolute contrast scale: with the default 22 the S-term
/// only engages for images in a roughly 8-bit intensity range.
pub fn frangi_enhance(img: &ScalarImage, cfg: &PipelineConfig) -> ScalarImage {
    debug_assert!(img.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    let (nx, ny) = (img.nx(), img.ny());
    let b1 = cfg.frangi_beta_one;
    let b2 = cfg.frangi_beta_two;
    let mut out = Image::filled(nx, ny, 0f32);
    for sigma in cfg.frangi_scales() {
        let l = gaussian_smooth_2d(img, sigma);
        let s2 = (sigma * sigma) as f32;
        let at = |x: i64, y: i64| -> f32 {
            l.at(
                x.clamp(0, nx as i64 - 1) as usize,
                y.clamp(0, ny as i64 - 1) as usize,
            )
        };
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let c = at(x, y);
                let hxx = s2 * (at(x - 1, y) - 2.0 * c + at(x + 1, y));
                let hyy = s2 * (at(x, y - 1) - 2.0 * c + at(x, y + 1));
                let hxy = s2 * 0.25
                    * ((at(x + 1, y + 1) + at(x - 1, y - 1))
                        - at(x + 1, y - 1)
                        - at(x - 1, y + 1));
                let mean = 0.5 * (hxx + hyy) as f64;
                let diff = 0.5 * (hxx - hyy) as f64;
                let q = (diff * diff + (hxy as f64) * (hxy as f64)).sqrt();
                let (e1, e2) = (mean - q, mean + q);
                // l2 is the eigenvalue with the larger magnitude.
                let (l1, l2) = if e1.abs() <= e2.abs() { (e1, e2) } else { (e2, e1) };
                if l2 >= 0.0 {
                    continue;
                }
                let rb = l1 / l2;
                let s_sq = l1 * l1 + l2 * l2;
                let v = (-(rb * rb) / (2.0 * b1 * b1)).exp()
                    * (1.0 - (-s_sq / (2.0 * b2 * b2)).exp());
                let i = (x + nx as i64 * y) as usize;
                if v as f32 > out.data()[i] {
                    out.data_mut()[i] = v as f32;
                }
            }
        }
    }
    out
}

// ===========================================================================
// Otsu thresholding
// ===========================================================================

/// Between-class variance of the cut "bins 0..=t vs bins t+1..", computed
/// from exact integer histogram prefix sums. Shared with the exhaustive
/// oracle in tests so both sides round identically.
pub fn between_class_variance(w0: u64, s0: u64, w1: u64, s1: u64) -> f64 {
    let m0 = s0 as f64 / w0 as f64;
    let m1 = s1 as f64 / w1 as f64;
    (w0 as f64) * (w1 as f64) * (m0 - m1) * (m0 - m1)
}

/// Global Otsu binarization over a `cfg.otsu_bins`-bin histogram spanning
/// [min, max]. The threshold sits at the upper edge of the chosen cut bin;
/// output is true strictly above it. Constant images are an error, or an
/// all-false mask when `otsu_constant_empty` is set.
pub fn otsu_threshold(img: &ScalarImage, cfg: &PipelineConfig) -> Result<BinaryImage> {
    let bins = cfg.otsu_bins;
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in img.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo < hi) {
        if cfg.otsu_constant_empty {
            return Ok(Image::filled(img.nx(), img.ny(), false));
        }
        return Err(Error::Degenerate(format!(
            "constant image (value {lo}): no threshold separates it"
        )));
    }

    let mut hist = vec![0u64; bins];
    let span = (hi - lo) as f64;
    for &v in img.data() {
        let idx = (((v - lo) as f64 / span) * bins as f64) as usize;
        hist[idx.min(bins - 1)] += 1;
    }
    let n: u64 = img.len() as u64;
    let total: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();

    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0u64;
    let mut s0 = 0u64;
    for t in 0..bins - 1 {
        w0 += hist[t];
        s0 += t as u64 * hist[t];
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let var = between_class_variance(w0, s0, w1, total - s0);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }

    let thr = lo as f64 + span * (best_t + 1) as f64 / bins as f64;
    let data = img.data().iter().map(|&v| (v as f64) > thr).collect();
    Ok(Image::from_vec(img.nx(), img.ny(), data))
}

// ===========================================================================
// Skeletonization
// ===========================================================================

// Neighbor bit layout, clockwise from north:
// bit 0 = N, 1 = NE, 2 = E, 3 = SE, 4 = S, 5 = SW, 6 = W, 7 = NW.
const NB_OFF: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// Simple-point table for 8-connected foreground over 4-connected
/// background: deleting the center preserves topology iff the foreground
/// neighbors form exactly one 8-component and the background neighbors form
/// exactly one 4-component that touches an edge neighbor.
fn simple_lut() -> &'static [bool; 256] {
    static LUT: OnceLock<[bool; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let adjacent = |a: usize, b: usize, diag: bool| -> bool {
            let (ax, ay) = NB_OFF[a];
            let (bx, by) = NB_OFF[b];
            let (dx, dy) = ((ax - bx).abs(), (ay - by).abs());
            if diag {
                dx <= 1 && dy <= 1
            } else {
                dx + dy == 1
            }
        };
        let components = |members: &[usize], diag: bool| -> Vec<Vec<usize>> {
            let mut seen = vec![false; members.len()];
            let mut comps = Vec::new();
            for i in 0..members.len() {
                if seen[i] {
                    continue;
                }
                let mut comp = vec![members[i]];
                seen[i] = true;
                let mut stack = vec![i];
                while let Some(a) = stack.pop() {
                    for b in 0..members.len() {
                        if !seen[b] && adjacent(members[a], members[b], diag) {
                            seen[b] = true;
                            comp.push(members[b]);
                            stack.push(b);
                        }
                    }
                }
                comps.push(comp);
            }
            comps
        };
        let mut lut = [false; 256];
        for (code, entry) in lut.iter_mut().enumerate() {
            let fg: Vec<usize> = (0..8).filter(|b| code & (1 << b) != 0).collect();
            let bg: Vec<usize> = (0..8).filter(|b| code & (1 << b) == 0).collect();
            let fg_ok = components(&fg, true).len() == 1;
            let bg_edge = components(&bg, false)
                .iter()
                .filter(|c| c.iter().any(|&p| p % 2 == 0))
                .count();
            *entry = fg_ok && bg_edge == 1;
        }
        lut
    })
}

fn neighbor_code(mask: &BinaryImage, x: usize, y: usize) -> u8 {
    let (nx, ny) = (mask.nx() as i64, mask.ny() as i64);
    let mut code = 0u8;
    for (bit, (dx, dy)) in NB_OFF.iter().enumerate() {
        let (qx, qy) = (x as i64 + dx, y as i64 + dy);
        if qx >= 0 && qy >= 0 && qx < nx && qy < ny && mask.at(qx as usize, qy as usize) {
            code |= 1 << bit;
        }
    }
    code
}

/// Directional boundary masks of the two thinning subcycles (N/E/S/W are
/// bits 0/2/4/6). Subcycle 0 peels south-east boundaries, 1 north-west.
fn directional_ok(sub: usize, code: u8) -> bool {
    let n = code & 1 != 0;
    let e = code & 4 != 0;
    let s = code & 16 != 0;
    let w = code & 64 != 0;
    if sub == 0 {
        !(n && e && s) && !(e && s && w)
    } else {
        !(n && e && w) && !(n && s && w)
    }
}

/// Thins a mask to a unit-width, 8-connected skeleton.
///
/// Two alternating directional subcycles select candidates against the
/// frozen pass state (for symmetric, centered erosion), but each deletion is
/// re-validated against the live mask with the simple-point table, so every
/// removal provably preserves both foreground and background topology.
/// Within a subcycle, sparsely connected candidates (corners, line ends)
/// are removed first; otherwise a boundary pixel deleted ahead of its
/// corner neighbor turns that corner into a protected endpoint and the
/// skeleton grows an off-axis tail.
pub fn skeletonize(mask: &BinaryImage) -> BinaryImage {
    let (nx, ny) = (mask.nx(), mask.ny());
    let lut = simple_lut();
    let mut cur = mask.clone();
    let mut candidates: Vec<(u32, usize, usize)> = Vec::new();
    loop {
        let mut deleted = 0usize;
        for sub in 0..2 {
            candidates.clear();
            for y in 0..ny {
                for x in 0..nx {
                    if !cur.at(x, y) {
                        continue;
                    }
                    let code = neighbor_code(&cur, x, y);
                    // Floor of 3 frozen neighbors: classical two-neighbor
                    // thinning erodes a bar end twice per pass; requiring one
                    // more neighbor keeps line ends within a pixel of the
                    // original extent without touching interior peeling.
                    if code.count_ones() >= 3 && directional_ok(sub, code) && lut[code as usize] {
                        candidates.push((code.count_ones(), x, y));
                    }
                }
            }
            candidates.sort_by_key(|&(count, x, y)| (count, y, x));
            for &(_, x, y) in &candidates {
                let code = neighbor_code(&cur, x, y);
                if code.count_ones() >= 2 && lut[code as usize] {
                    cur.set(x, y, false);
                    deleted += 1;
                }
            }
        }
        if deleted == 0 {
            return cur;
        }
    }
}

// ===========================================================================
// Chamfer distance transform
// ===========================================================================

/// Distance values are carried as exact (straight, diagonal) step counts
/// until display so the two raster passes and any brute-force oracle
/// materialize bit-identical floats. u32::MAX marks "unreached".
#[derive(Clone, Copy, PartialEq, Eq)]
struct Steps {
    straight: u32,
    diagonal: u32,
}

const UNREACHED: Steps = Steps {
    straight: u32::MAX,
    diagonal: u32::MAX,
};

impl Steps {
    fn value(self, w: [f64; 2]) -> f64 {
        if self.straight == u32::MAX {
            f64::INFINITY
        } else {
            self.straight as f64 * w[0] + self.diagonal as f64 * w[1]
        }
    }

    fn plus(self, diagonal: bool) -> Steps {
        if self.straight == u32::MAX {
            return UNREACHED;
        }
        Steps {
            straight: self.straight + !diagonal as u32,
            diagonal: self.diagonal + diagonal as u32,
        }
    }
}

/// Chamfer distance from every true pixel to the nearest false pixel, in
/// exactly one forward and one backward raster pass over a 3x3 neighborhood
/// with weights (straight, diagonal) from `cfg.chamfer_weights`. False
/// pixels map to 0; a mask with no background maps to infinity.
pub fn distance_transform(mask: &BinaryImage, cfg: &PipelineConfig) -> ScalarImage {
    let (nx, ny) = (mask.nx(), mask.ny());
    let w = cfg.chamfer_weights;
    let zero = Steps {
        straight: 0,
        diagonal: 0,
    };
    let mut grid: Vec<Steps> = mask
        .data()
        .iter()
        .map(|&fg| if fg { UNREACHED } else { zero })
        .collect();

    let relax = |grid: &mut Vec<Steps>, x: i64, y: i64, forward: bool| {
        let i = (x + nx as i64 * y) as usize;
        let mut best = grid[i];
        let mut best_v = best.value(w);
        // Forward mask: the four already-visited neighbors (W, NW, N, NE);
        // backward is the mirror (E, SE, S, SW).
        let nb: [(i64, i64, bool); 4] = if forward {
            [(-1, 0, false), (-1, -1, true), (0, -1, false), (1, -1, true)]
        } else {
            [(1, 0, false), (1, 1, true), (0, 1, false), (-1, 1, true)]
        };
        for (dx, dy, diag) in nb {
            let (qx, qy) = (x + dx, y + dy);
            if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
                continue;
            }
            let cand = grid[(qx + nx as i64 * qy) as usize].plus(diag);
            let v = cand.value(w);
            if v < best_v {
                best = cand;
                best_v = v;
            }
        }
        grid[i] = best;
    };

    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            relax(&mut grid, x, y, true);
        }
    }
    for y in (0..ny as i64).rev() {
        for x in (0..nx as i64).rev() {
            relax(&mut grid, x, y, false);
        }
    }
    let data = grid.iter().map(|s| s.value(w) as f32).collect();
    Image::from_vec(nx, ny, data)
}

// ===========================================================================
// Skeleton radii
// ===========================================================================

/// Annotates skeleton points with vessel radii: the full distance field is
/// Gaussian-smoothed (sigma = cfg.sigma_radius), sampled at each skeleton
/// pixel, rounded, and floored at 1. Points come out in raster order.
pub fn skeleton_radii(
    skeleton: &BinaryImage,
    dt: &ScalarImage,
    cfg: &PipelineConfig,
) -> Skeleton2D {
    debug_assert!(skeleton.nx() == dt.nx() && skeleton.ny() == dt.ny());
    let mut points = Vec::new();
    if skeleton.count_true() == 0 {
        return Skeleton2D { points };
    }
    let smoothed = gaussian_smooth_2d(dt, cfg.sigma_radius);
    for y in 0..skeleton.ny() {
        for x in 0..skeleton.nx() {
            if skeleton.at(x, y) {
                let r = smoothed.at(x, y).round().max(1.0) as u32;
                points.push(SkelPoint2 {
                    x: x as u32,
                    y: y as u32,
                    radius: r,
                });
            }
        }
    }
    Skeleton2D { points }
}

// ===========================================================================
// Composed per-plexus segmentation
// ===========================================================================

/// All intermediates of one plexus segmentation, kept for stage dumps and
/// overlay rendering.
#[derive(Clone, Debug)]
pub struct PlexusSegmentation {
    pub enhanced: ScalarImage,
    pub mask: BinaryImage,
    pub skeleton_mask: BinaryImage,
    pub dt: ScalarImage,
    pub skeleton: Skeleton2D,
}

/// Runs enhancement -> thresholding -> thinning + distance transform ->
/// radius annotation on one en-face image.
pub fn segment_plexus_2d(enface: &ScalarImage, cfg: &PipelineConfig) -> Result<PlexusSegmentation> {
    let enhanced = frangi_enhance(enface, cfg);
    let mask = otsu_threshold(&enhanced, cfg)?;
    let skeleton_mask = skeletonize(&mask);
    let dt = distance_transform(&mask, cfg);
    let skeleton = skeleton_radii(&skeleton_mask, &dt, cfg);
    Ok(PlexusSegmentation {
        enhanced,
        mask,
        skeleton_mask,
        dt,
        skeleton,
    })
}
