//! Binary morphology shared across stages: connected components, exact
//! squared Euclidean distance transforms and round-structuring-element
//! dilation built on them.
//!
//! Dilation by a disk/ball of radius r is computed as a threshold on the
//! squared EDT: a point belongs to the dilation iff its squared distance to
//! the nearest foreground sample is <= r^2. That set equals the union of
//! radius-r balls stamped on every foreground sample, so the EDT route is
//! exact, not an approximation.

use crate::grid::{BinaryImage, BinaryVolume, Image, Volume};

/// Squared-distance sentinel for "no foreground anywhere". Kept far from
/// i64::MAX so envelope arithmetic cannot overflow.
pub const SQ_INF: i64 = i64::MAX / 4;

// ===========================================================================
// Connected components
// ===========================================================================

/// Dense component labeling: 0 is background, components are 1..=count.
pub struct ComponentMap {
    pub labels: Vec<u32>,
    /// sizes[k - 1] is the pixel/voxel count of label k.
    pub sizes: Vec<usize>,
}

impl ComponentMap {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Labels 8-connected foreground components of a 2D mask.
pub fn label_components_2d(mask: &BinaryImage) -> ComponentMap {
    let (nx, ny) = (mask.nx(), mask.ny());
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % nx, i / nx);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (qx, qy) = (x as i64 + dx, y as i64 + dy);
                    if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
                        continue;
                    }
                    let j = qx as usize + nx * qy as usize;
                    if mask.data()[j] && labels[j] == 0 {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    ComponentMap { labels, sizes }
}

/// Labels 26-connected foreground components of a 3D mask.
pub fn label_components_3d(mask: &BinaryVolume) -> ComponentMap {
    let (nx, ny, nz) = mask.dims();
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if qx < 0
                            || qy < 0
                            || qz < 0
                            || qx >= nx as i64
                            || qy >= ny as i64
                            || qz >= nz as i64
                        {
                            continue;
                        }
                        let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                        if mask.data()[j] && labels[j] == 0 {
                            labels[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    ComponentMap { labels, sizes }
}

/// Drops 8-connected components smaller than `min_px` pixels.
pub fn remove_small_components_2d(mask: &BinaryImage, min_px: usize) -> BinaryImage {
    let cm = label_components_2d(mask);
    let keep: Vec<bool> = cm.sizes.iter().map(|&s| s >= min_px).collect();
    let data = cm
        .labels
        .iter()
        .map(|&l| l != 0 && keep[l as usize - 1])
        .collect();
    Image::from_vec(mask.nx(), mask.ny(), data)
}

/// Drops 26-connected components smaller than `min_px` voxels.
pub fn remove_small_components_3d(mask: &BinaryVolume, min_px: usize) -> BinaryVolume {
    let cm = label_components_3d(mask);
    let keep: Vec<bool> = cm.sizes.iter().map(|&s| s >= min_px).collect();
    let data = cm
        .labels
        .iter()
        .map(|&l| l != 0 && keep[l as usize - 1])
        .collect();
    let (nx, ny, nz) = mask.dims();
    Volume::from_vec(nx, ny, nz, data)
}

// ===========================================================================
// Squared Euclidean distance transform
// ===========================================================================

/// One-dimensional squared distance transform by lower-envelope-of-parabolas.
/// `f` holds per-sample offsets (0 for sources, SQ_INF otherwise); writes the
/// exact integer squared distances into `d`.
fn dt1d(f: &[i64], d: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    debug_assert!(d.len() == n && v.len() == n && z.len() == n + 1);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qi = q as i64;
        loop {
            let p = v[k] as i64;
            // Abscissa where parabola q overtakes parabola v[k].
            let s = ((f[q] + qi * qi) - (f[v[k]] + p * p)) as f64 / (2 * (qi - p)) as f64;
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k] as i64;
        let dq = q as i64 - p;
        d[q] = (dq * dq + f[v[k]]).min(SQ_INF);
    }
}

/// Exact squared Euclidean distance (in pixels^2) from every pixel to the
/// nearest `true` pixel, or [`SQ_INF`] when the mask is empty.
pub fn sq_edt_2d(mask: &BinaryImage) -> Vec<i64> {
    let (nx, ny) = (mask.nx(), mask.ny());
    let mut grid: Vec<i64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0 } else { SQ_INF })
        .collect();
    let n = nx.max(ny);
    let mut f = vec![0i64; n];
    let mut d = vec![0i64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];

    for y in 0..ny {
        let row = &mut grid[y * nx..(y + 1) * nx];
        f[..nx].copy_from_slice(row);
        dt1d(&f[..nx], &mut d[..nx], &mut v[..nx], &mut z[..nx + 1]);
        row.copy_from_slice(&d[..nx]);
    }
    for x in 0..nx {
        for y in 0..ny {
            f[y] = grid[x + nx * y];
        }
        dt1d(&f[..ny], &mut d[..ny], &mut v[..ny], &mut z[..ny + 1]);
        for y in 0..ny {
            grid[x + nx * y] = d[y];
        }
    }
    grid
}

/// 3D counterpart of [`sq_edt_2d`] (distances in voxels^2).
pub fn sq_edt_3d(mask: &BinaryVolume) -> Vec<i64> {
    let (nx, ny, nz) = mask.dims();
    let mut grid: Vec<i64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0 } else { SQ_INF })
        .collect();
    let n = nx.max(ny).max(nz);
    let mut f = vec![0i64; n];
    let mut d = vec![0i64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];

    for zi in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * zi);
            let row = &mut grid[base..base + nx];
            f[..nx].copy_from_slice(row);
            dt1d(&f[..nx], &mut d[..nx], &mut v[..nx], &mut z[..nx + 1]);
            row.copy_from_slice(&d[..nx]);
        }
    }
    for zi in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                f[y] = grid[x + nx * (y + ny * zi)];
            }
            dt1d(&f[..ny], &mut d[..ny], &mut v[..ny], &mut z[..ny + 1]);
            for y in 0..ny {
                grid[x + nx * (y + ny * zi)] = d[y];
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            for zi in 0..nz {
                f[zi] = grid[x + nx * (y + ny * zi)];
            }
            dt1d(&f[..nz], &mut d[..nz], &mut v[..nz], &mut z[..nz + 1]);
            for zi in 0..nz {
                grid[x + nx * (y + ny * zi)] = d[zi];
            }
        }
    }
    grid
}

// ===========================================================================
// Dilation by disk / ball
// ===========================================================================

/// Dilates by a Euclidean disk of radius `r` pixels. Exactly equal to
/// stamping a digital disk {(dx,dy) : dx^2+dy^2 <= r^2} on every true pixel.
pub fn dilate_disk(mask: &BinaryImage, r: f64) -> BinaryImage {
    assert!(r >= 0.0, "dilation radius must be non-negative");
    let r2 = r * r;
    let d2 = sq_edt_2d(mask);
    let data = d2.iter().map(|&d| (d as f64) <= r2).collect();
    Image::from_vec(mask.nx(), mask.ny(), data)
}

/// Dilates by a Euclidean ball of radius `r` voxels.
pub fn dilate_ball(mask: &BinaryVolume, r: f64) -> BinaryVolume {
    assert!(r >= 0.0, "dilation radius must be non-negative");
    let r2 = r * r;
    let d2 = sq_edt_3d(mask);
    let data = d2.iter().map(|&d| (d as f64) <= r2).collect();
    let (nx, ny, nz) = mask.dims();
    Volume::from_vec(nx, ny, nz, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(nx: usize, ny: usize, on: &[(usize, usize)]) -> BinaryImage {
        let mut m = Image::filled(nx, ny, false);
        for &(x, y) in on {
            m.set(x, y, true);
        }
        m
    }

    fn brute_sq_edt_2d(mask: &BinaryImage) -> Vec<i64> {
        let (nx, ny) = (mask.nx(), mask.ny());
        let mut out = vec![SQ_INF; nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let mut best = SQ_INF;
                for sy in 0..ny {
                    for sx in 0..nx {
                        if mask.at(sx, sy) {
                            let dx = x as i64 - sx as i64;
                            let dy = y as i64 - sy as i64;
                            best = best.min(dx * dx + dy * dy);
                        }
                    }
                }
                out[x + nx * y] = best;
            }
        }
        out
    }

    #[test]
    fn diagonal_pixels_are_one_component_under_8_connectivity() {
        let cm = label_components_2d(&img(4, 4, &[(0, 0), (1, 1), (2, 2)]));
        assert_eq!(cm.count(), 1);
        assert_eq!(cm.sizes, vec![3]);
    }

    #[test]
    fn separated_pixels_are_two_components() {
        let cm = label_components_2d(&img(5, 5, &[(0, 0), (0, 1), (4, 4)]));
        assert_eq!(cm.count(), 2);
        let mut sizes = cm.sizes.clone();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn corner_touching_voxels_are_one_component_under_26_connectivity() {
        let mut m = Volume::filled(3, 3, 3, false);
        m.set(0, 0, 0, true);
        m.set(1, 1, 1, true);
        m.set(2, 2, 2, true);
        let cm = label_components_3d(&m);
        assert_eq!(cm.count(), 1);
    }

    #[test]
    fn small_components_are_removed_large_kept() {
        let m = img(10, 4, &[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (8, 3)]);
        let cleaned = remove_small_components_2d(&m, 5);
        assert_eq!(cleaned.count_true(), 5);
        assert!(!cleaned.at(8, 3));
        assert!(cleaned.at(0, 0));
    }

    #[test]
    fn single_source_edt_is_the_squared_distance_field() {
        let m = img(7, 6, &[(2, 3)]);
        let d = sq_edt_2d(&m);
        for y in 0..6 {
            for x in 0..7 {
                let dx = x as i64 - 2;
                let dy = y as i64 - 3;
                assert_eq!(d[x + 7 * y], dx * dx + dy * dy, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn empty_mask_edt_is_infinite_and_dilation_stays_empty() {
        let m = Image::filled(5, 5, false);
        assert!(sq_edt_2d(&m).iter().all(|&d| d == SQ_INF));
        assert_eq!(dilate_disk(&m, 15.0).count_true(), 0);
    }

    #[test]
    fn unit_disk_dilation_of_a_point_is_a_plus_shape() {
        let d = dilate_disk(&img(5, 5, &[(2, 2)]), 1.0);
        assert_eq!(d.count_true(), 5);
        for (x, y) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
            assert!(d.at(x, y));
        }
    }

    #[test]
    fn unit_ball_dilation_of_a_voxel_is_a_seven_voxel_cross() {
        let mut m = Volume::filled(5, 5, 5, false);
        m.set(2, 2, 2, true);
        let d = dilate_ball(&m, 1.0);
        assert_eq!(d.count_true(), 7);
        assert!(d.at(2, 2, 2) && d.at(1, 2, 2) && d.at(2, 2, 3));
    }

    #[test]
    fn edt_3d_matches_brute_force_on_a_fixed_mask() {
        let mut m = Volume::filled(6, 5, 4, false);
        for &(x, y, z) in &[(0, 0, 0), (5, 4, 3), (2, 2, 1), (3, 1, 2)] {
            m.set(x, y, z, true);
        }
        let d = sq_edt_3d(&m);
        for z in 0..4usize {
            for y in 0..5usize {
                for x in 0..6usize {
                    let mut best = SQ_INF;
                    for &(sx, sy, sz) in &[(0, 0, 0), (5, 4, 3), (2, 2, 1), (3, 1, 2)] {
                        let dd = [
                            x as i64 - sx as i64,
                            y as i64 - sy as i64,
                            z as i64 - sz as i64,
                        ];
                        best = best.min(dd.iter().map(|v| v * v).sum());
                    }
                    assert_eq!(d[x + 6 * (y + 5 * z)], best, "at ({x},{y},{z})");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn edt_2d_matches_brute_force(mask in prop::collection::vec(prop::bool::weighted(0.15), 12 * 9)) {
            let m = Image::from_vec(12, 9, mask);
            prop_assert_eq!(sq_edt_2d(&m), brute_sq_edt_2d(&m));
        }

        #[test]
        fn disk_dilation_equals_stamped_disk_union(
            mask in prop::collection::vec(prop::bool::weighted(0.08), 14 * 11),
            r in 0.5f64..4.5,
        ) {
            let m = Image::from_vec(14, 11, mask);
            let got = dilate_disk(&m, r);
            let mut want = Image::filled(14, 11, false);
            let ir = r.floor() as i64;
            for y in 0..11i64 {
                for x in 0..14i64 {
                    if !m.at(x as usize, y as usize) {
                        continue;
                    }
                    for dy in -ir..=ir {
                        for dx in -ir..=ir {
                            if (dx * dx + dy * dy) as f64 <= r * r {
                                let (qx, qy) = (x + dx, y + dy);
                                if qx >= 0 && qy >= 0 && qx < 14 && qy < 11 {
                                    want.set(qx as usize, qy as usize, true);
                                }
                            }
                        }
                    }
                }
            }
            prop_assert_eq!(got.data(), want.data());
        }

        #[test]
        fn dilation_is_extensive_and_monotone(
            mask in prop::collection::vec(prop::bool::weighted(0.1), 10 * 10),
            r in 0.0f64..5.0,
        ) {
            let m = Image::from_vec(10, 10, mask);
            let d1 = dilate_disk(&m, r);
            let d2 = dilate_disk(&m, r + 1.0);
            for i in 0..m.len() {
                prop_assert!(!m.data()[i] || d1.data()[i], "extensive");
                prop_assert!(!d1.data()[i] || d2.data()[i], "monotone in r");
            }
        }
    }
}
