//! Lifts 2D vessel skeletons into the volume: per-point axial localization
//! inside the plexus slab, inflation of points to spheres sized by the 2D
//! radius estimate, and merging of the three plexus networks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{BinaryVolume, ScalarImage, Volume};
use crate::vessel2d::Skeleton2D;

/// One 3D centerline point with its vessel radius in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkelPoint3 {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub radius: u32,
}

/// Axially localized skeleton; point order matches the source 2D skeleton.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Skeleton3D {
    pub points: Vec<SkelPoint3>,
}

impl Skeleton3D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Assigns each 2D skeleton point the depth of the brightest voxel in its
/// column, restricted to the open slab interval (upper(x,y), lower(x,y)).
///
/// Bounds stay fractional and are compared strictly, so the candidate
/// depths are the integers floor(upper)+1 ..= ceil(lower)-1 clipped to the
/// volume. Ties take the smallest (anterior-most) z. Points whose slab
/// interval contains no integer depth are dropped; the second return value
/// counts them (degenerate slabs occur where retinal layers converge).
pub fn locate_axial(
    sk: &Skeleton2D,
    vol: &Volume<f32>,
    upper: &ScalarImage,
    lower: &ScalarImage,
) -> (Skeleton3D, usize) {
    let (_, _, nz) = vol.dims();
    let mut points = Vec::with_capacity(sk.len());
    let mut dropped = 0usize;
    for p in &sk.points {
        let (x, y) = (p.x as usize, p.y as usize);
        let u = upper.at(x, y) as f64;
        let l = lower.at(x, y) as f64;
        let z0 = ((u.floor() as i64) + 1).max(0);
        let z1 = ((l.ceil() as i64) - 1).min(nz as i64 - 1);
        if z0 > z1 {
            dropped += 1;
            continue;
        }
        let mut best_z = z0;
        let mut best_v = vol.at(x, y, z0 as usize);
        for z in (z0 + 1)..=z1 {
            let v = vol.at(x, y, z as usize);
            if v > best_v {
                best_v = v;
                best_z = z;
            }
        }
        points.push(SkelPoint3 {
            x: p.x,
            y: p.y,
            z: best_z as u32,
            radius: p.radius,
        });
    }
    (Skeleton3D { points }, dropped)
}

/// Voxel offsets of the Euclidean ball {d : |d|^2 <= r^2}.
pub fn ball_offsets(r: u32) -> Vec<(i64, i64, i64)> {
    let ri = r as i64;
    let r2 = ri * ri;
    let mut out = Vec::new();
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if dx * dx + dy * dy + dz * dz <= r2 {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

/// Renders the skeleton as a binary network: each point is dilated by a
/// Euclidean ball of its own radius (points grouped per radius, results
/// OR-combined), clipped at the volume faces.
pub fn inflate_network(sk: &Skeleton3D, dims: (usize, usize, usize)) -> BinaryVolume {
    let (nx, ny, nz) = dims;
    let mut out = Volume::filled(nx, ny, nz, false);
    let mut by_radius: BTreeMap<u32, Vec<&SkelPoint3>> = BTreeMap::new();
    for p in &sk.points {
        by_radius.entry(p.radius).or_default().push(p);
    }
    for (r, pts) in by_radius {
        let offsets = ball_offsets(r);
        for p in pts {
            for &(dx, dy, dz) in &offsets {
                let qx = p.x as i64 + dx;
                let qy = p.y as i64 + dy;
                let qz = p.z as i64 + dz;
                if qx >= 0
                    && qy >= 0
                    && qz >= 0
                    && qx < nx as i64
                    && qy < ny as i64
                    && qz < nz as i64
                {
                    out.set(qx as usize, qy as usize, qz as usize, true);
                }
            }
        }
    }
    out
}

/// Voxelwise OR of the three per-plexus networks.
pub fn merge_networks(
    svc: &BinaryVolume,
    icp: &BinaryVolume,
    dcp: &BinaryVolume,
) -> Result<BinaryVolume> {
    if svc.dims() != icp.dims() || svc.dims() != dcp.dims() {
        return Err(Error::DimMismatch(format!(
            "network dims differ: {:?} / {:?} / {:?}",
            svc.dims(),
            icp.dims(),
            dcp.dims()
        )));
    }
    let data = svc
        .data()
        .iter()
        .zip(icp.data())
        .zip(dcp.data())
        .map(|((&a, &b), &c)| a || b || c)
        .collect();
    let (nx, ny, nz) = svc.dims();
    Ok(Volume::from_vec(nx, ny, nz, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Image;
    use crate::vessel2d::SkelPoint2;
    use proptest::prelude::*;

    fn sk2(points: &[(u32, u32, u32)]) -> Skeleton2D {
        Skeleton2D {
            points: points
                .iter()
                .map(|&(x, y, radius)| SkelPoint2 { x, y, radius })
                .collect(),
        }
    }

    fn bounds(nx: usize, ny: usize, u: f32, l: f32) -> (ScalarImage, ScalarImage) {
        (Image::filled(nx, ny, u), Image::filled(nx, ny, l))
    }

    #[test]
    fn planted_bright_voxel_is_located_exactly() {
        let mut vol = Volume::filled(8, 8, 16, 1f32);
        vol.set(3, 4, 5, 40.0);
        let (upper, lower) = bounds(8, 8, 2.0, 9.0);
        let (sk3, dropped) = locate_axial(&sk2(&[(3, 4, 2)]), &vol, &upper, &lower);
        assert_eq!(dropped, 0);
        assert_eq!(
            sk3.points,
            vec![SkelPoint3 { x: 3, y: 4, z: 5, radius: 2 }]
        );
    }

    #[test]
    fn brighter_voxel_outside_the_slab_is_ignored() {
        let mut vol = Volume::filled(8, 8, 16, 1f32);
        vol.set(3, 4, 5, 40.0);
        vol.set(3, 4, 12, 90.0);
        let (upper, lower) = bounds(8, 8, 2.0, 9.0);
        let (sk3, _) = locate_axial(&sk2(&[(3, 4, 1)]), &vol, &upper, &lower);
        assert_eq!(sk3.points[0].z, 5);
    }

    #[test]
    fn integer_bounds_are_strict() {
        let mut vol = Volume::filled(4, 4, 16, 0f32);
        // Maxima parked exactly on both bounds must lose to interior voxels.
        vol.set(1, 1, 3, 50.0);
        vol.set(1, 1, 9, 50.0);
        vol.set(1, 1, 6, 10.0);
        let (upper, lower) = bounds(4, 4, 3.0, 9.0);
        let (sk3, _) = locate_axial(&sk2(&[(1, 1, 1)]), &vol, &upper, &lower);
        assert_eq!(sk3.points[0].z, 6);
    }

    #[test]
    fn axial_ties_break_to_the_smallest_depth() {
        let mut vol = Volume::filled(4, 4, 16, 0f32);
        vol.set(2, 2, 5, 7.0);
        vol.set(2, 2, 8, 7.0);
        let (upper, lower) = bounds(4, 4, 2.0, 12.0);
        let (sk3, _) = locate_axial(&sk2(&[(2, 2, 1)]), &vol, &upper, &lower);
        assert_eq!(sk3.points[0].z, 5);
    }

    #[test]
    fn slab_without_integer_depths_drops_the_point() {
        let vol = Volume::filled(4, 4, 16, 1f32);
        let (upper, lower) = bounds(4, 4, 5.4, 5.6);
        let (sk3, dropped) = locate_axial(&sk2(&[(0, 0, 1), (1, 1, 1)]), &vol, &upper, &lower);
        assert!(sk3.is_empty());
        assert_eq!(dropped, 2);
    }

    #[test]
    fn surviving_points_keep_their_planar_coordinates_and_radii() {
        let vol = Volume::filled(16, 16, 32, 1f32);
        let (upper, lower) = bounds(16, 16, 4.0, 20.0);
        let src = sk2(&[(1, 2, 1), (5, 9, 3), (15, 0, 2)]);
        let (sk3, dropped) = locate_axial(&src, &vol, &upper, &lower);
        assert_eq!(dropped, 0);
        assert_eq!(sk3.len(), src.len());
        for (p3, p2) in sk3.points.iter().zip(&src.points) {
            assert_eq!((p3.x, p3.y, p3.radius), (p2.x, p2.y, p2.radius));
            assert!(4.0 < p3.z as f64 && (p3.z as f64) < 20.0);
        }
    }

    #[test]
    fn unit_ball_inflation_is_a_seven_voxel_cross() {
        let sk = Skeleton3D {
            points: vec![SkelPoint3 { x: 4, y: 4, z: 4, radius: 1 }],
        };
        let net = inflate_network(&sk, (9, 9, 9));
        assert_eq!(net.count_true(), 7);
        assert!(net.at(4, 4, 4) && net.at(3, 4, 4) && net.at(4, 4, 5));
        assert!(!net.at(3, 3, 4));
    }

    #[test]
    fn distant_equal_radius_points_inflate_to_disjoint_balls() {
        let sk = Skeleton3D {
            points: vec![
                SkelPoint3 { x: 5, y: 10, z: 10, radius: 2 },
                SkelPoint3 { x: 15, y: 10, z: 10, radius: 2 },
            ],
        };
        let net = inflate_network(&sk, (24, 20, 20));
        assert_eq!(net.count_true(), 2 * ball_offsets(2).len());
    }

    #[test]
    fn corner_point_ball_is_clipped() {
        let sk = Skeleton3D {
            points: vec![SkelPoint3 { x: 0, y: 0, z: 0, radius: 2 }],
        };
        let net = inflate_network(&sk, (10, 10, 10));
        let octant = ball_offsets(2)
            .iter()
            .filter(|(dx, dy, dz)| *dx >= 0 && *dy >= 0 && *dz >= 0)
            .count();
        assert_eq!(net.count_true(), octant);
    }

    proptest! {
        #[test]
        fn inflation_is_monotone_in_the_point_set(
            xs in prop::collection::vec((0u32..12, 0u32..12, 0u32..12, 1u32..4), 1..8),
            extra in (0u32..12, 0u32..12, 0u32..12, 1u32..4),
        ) {
            let mk = |pts: &[(u32, u32, u32, u32)]| Skeleton3D {
                points: pts
                    .iter()
                    .map(|&(x, y, z, radius)| SkelPoint3 { x, y, z, radius })
                    .collect(),
            };
            let base = inflate_network(&mk(&xs), (12, 12, 12));
            let mut more = xs.clone();
            more.push(extra);
            let grown = inflate_network(&mk(&more), (12, 12, 12));
            for i in 0..base.len() {
                prop_assert!(!base.data()[i] || grown.data()[i]);
            }
        }
    }

    #[test]
    fn merge_of_disjoint_networks_sums_their_sizes() {
        let mut a = Volume::filled(6, 6, 6, false);
        let mut b = Volume::filled(6, 6, 6, false);
        let mut c = Volume::filled(6, 6, 6, false);
        a.set(0, 0, 0, true);
        b.set(3, 3, 3, true);
        c.set(5, 5, 5, true);
        let m = merge_networks(&a, &b, &c).unwrap();
        assert_eq!(m.count_true(), 3);
    }

    #[test]
    fn merge_is_idempotent_on_identical_inputs() {
        let mut a = Volume::filled(5, 5, 5, false);
        a.set(2, 2, 2, true);
        a.set(1, 4, 3, true);
        let m = merge_networks(&a, &a, &a).unwrap();
        assert_eq!(m.data(), a.data());
    }

    #[test]
    fn merge_rejects_dimension_mismatch() {
        let a = Volume::filled(5, 5, 5, false);
        let b = Volume::filled(5, 5, 6, false);
        assert!(merge_networks(&a, &b, &a).is_err());
    }
}
