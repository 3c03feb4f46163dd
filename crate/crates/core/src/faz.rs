//! Avascular-zone extraction: per-plexus 2D regions from vessel masks, the
//! 3D region from the merged network, and the end-to-end `measure` driver.
//!
//! Both extractions share one scheme: drop tiny specks, dilate vessels by
//! the closing radius, take the complement, pick the enclosed component,
//! dilate it back by the same radius. The second dilation can never re-enter
//! the vessel set (any vessel point keeps distance > radius to the eroded
//! complement), so FAZ and vessels stay disjoint by construction.

use std::time::Instant;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::grid::{BinaryImage, BinaryVolume, Image, Plexus, ScalarImage, Volume};
use crate::morph::{
    dilate_ball, dilate_disk, label_components_2d, label_components_3d, remove_small_components_2d,
    remove_small_components_3d, ComponentMap,
};
use crate::preprocess;
use crate::reconstruct3d::{inflate_network, locate_axial, merge_networks, Skeleton3D};
use crate::vessel2d::{segment_plexus_2d, PlexusSegmentation};
use crate::volume_io::{FazMeasurement, GroupLabel, Scan};

/// 2D avascular zone of one plexus.
#[derive(Clone, Debug)]
pub struct FazRegion2D {
    pub mask: BinaryImage,
    pub area_mm2: f64,
    /// True when no interior component qualified and the region was taken
    /// from the component under the frame center instead.
    pub used_center_fallback: bool,
}

/// 3D avascular zone of the merged network, restricted to [ILM, OPL].
#[derive(Clone, Debug)]
pub struct FazRegion3D {
    pub mask: BinaryVolume,
    pub volume_mm3: f64,
    pub used_center_fallback: bool,
}

/// Largest component not touching the frame border; when every component
/// touches it (vignetted or unbounded fields), falls back to the component
/// under the frame center, which is valid because scans are fovea-centered.
/// Returns (label, fallback-used); label 0 means no component exists.
fn choose_component(cm: &ComponentMap, touches_border: &[bool], center_label: u32) -> (u32, bool) {
    let mut best = 0u32;
    let mut best_size = 0usize;
    for (i, &size) in cm.sizes.iter().enumerate() {
        if !touches_border[i] && size > best_size {
            best = i as u32 + 1;
            best_size = size;
        }
    }
    if best != 0 {
        (best, false)
    } else {
        (center_label, center_label != 0)
    }
}

/// Extracts the 2D avascular zone from a binary vessel map.
///
/// Pipeline: remove 8-connected components below `min_component_px`, dilate
/// by `faz_dilation_radius`, invert, choose the enclosed component, dilate
/// it back, convert the pixel count to mm^2. An all-vessel frame yields an
/// empty zero-area region.
pub fn faz_2d(vessel_mask: &BinaryImage, res_plane_um: f64, cfg: &PipelineConfig) -> FazRegion2D {
    let (nx, ny) = (vessel_mask.nx(), vessel_mask.ny());
    let px_mm2 = (res_plane_um / 1000.0) * (res_plane_um / 1000.0);
    let cleaned = remove_small_components_2d(vessel_mask, cfg.min_component_px);
    let dilated = dilate_disk(&cleaned, cfg.faz_dilation_radius);
    let inverted = Image::from_vec(nx, ny, dilated.data().iter().map(|&b| !b).collect());
    if inverted.count_true() == 0 {
        return FazRegion2D {
            mask: Image::filled(nx, ny, false),
            area_mm2: 0.0,
            used_center_fallback: false,
        };
    }

    let cm = label_components_2d(&inverted);
    let mut touches = vec![false; cm.count()];
    for y in 0..ny {
        for x in 0..nx {
            let l = cm.labels[x + nx * y];
            if l != 0 && (x == 0 || y == 0 || x == nx - 1 || y == ny - 1) {
                touches[l as usize - 1] = true;
            }
        }
    }
    let center_label = cm.labels[nx / 2 + nx * (ny / 2)];
    let (label, fallback) = choose_component(&cm, &touches, center_label);
    if label == 0 {
        return FazRegion2D {
            mask: Image::filled(nx, ny, false),
            area_mm2: 0.0,
            used_center_fallback: false,
        };
    }
    let selected = Image::from_vec(nx, ny, cm.labels.iter().map(|&l| l == label).collect());
    let mask = dilate_disk(&selected, cfg.faz_dilation_radius);
    let area_mm2 = mask.count_true() as f64 * px_mm2;
    FazRegion2D {
        mask,
        area_mm2,
        used_center_fallback: fallback,
    }
}

/// Extracts the 3D avascular zone from the merged capillary network.
///
/// Same scheme as [`faz_2d`] with a ball element and 26-connectivity; the
/// axial restriction to ilm(x,y) <= z <= opl(x,y) happens after the final
/// dilation, and the voxel count is taken after the restriction.
pub fn faz_3d(
    network: &BinaryVolume,
    ilm: &ScalarImage,
    opl: &ScalarImage,
    res_plane_um: f64,
    cfg: &PipelineConfig,
) -> FazRegion3D {
    let (nx, ny, nz) = network.dims();
    let vx_mm3 = (res_plane_um / 1000.0).powi(3);
    let cleaned = remove_small_components_3d(network, cfg.min_component_px);
    let dilated = dilate_ball(&cleaned, cfg.faz_dilation_radius);
    let inverted = Volume::from_vec(
        nx,
        ny,
        nz,
        dilated.data().iter().map(|&b| !b).collect(),
    );
    let empty = || FazRegion3D {
        mask: Volume::filled(nx, ny, nz, false),
        volume_mm3: 0.0,
        used_center_fallback: false,
    };
    if inverted.count_true() == 0 {
        return empty();
    }

    let cm = label_components_3d(&inverted);
    let mut touches = vec![false; cm.count()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1 {
                    let l = cm.labels[x + nx * (y + ny * z)];
                    if l != 0 {
                        touches[l as usize - 1] = true;
                    }
                }
            }
        }
    }
    let (cx, cy) = (nx / 2, ny / 2);
    let cz = (0.5 * (ilm.at(cx, cy) + opl.at(cx, cy)))
        .round()
        .clamp(0.0, nz as f32 - 1.0) as usize;
    let center_label = cm.labels[cx + nx * (cy + ny * cz)];
    let (label, fallback) = choose_component(&cm, &touches, center_label);
    if label == 0 {
        return empty();
    }
    let selected = Volume::from_vec(
        nx,
        ny,
        nz,
        cm.labels.iter().map(|&l| l == label).collect(),
    );
    let mut mask = dilate_ball(&selected, cfg.faz_dilation_radius);
    for y in 0..ny {
        for x in 0..nx {
            let lo = ilm.at(x, y) as f64;
            let hi = opl.at(x, y) as f64;
            for z in 0..nz {
                let zf = z as f64;
                if !(lo <= zf && zf <= hi) {
                    mask.set(x, y, z, false);
                }
            }
        }
    }
    let volume_mm3 = mask.count_true() as f64 * vx_mm3;
    FazRegion3D {
        mask,
        volume_mm3,
        used_center_fallback: fallback,
    }
}

// ===========================================================================
// End-to-end measurement
// ===========================================================================

/// Everything one scan measurement produces: the record plus the
/// intermediates wanted by stage dumps, overlays and diagnostics.
#[derive(Debug)]
pub struct MeasureOutput {
    pub measurement: FazMeasurement,
    pub segmentations: [PlexusSegmentation; 3],
    pub skeletons3d: [Skeleton3D; 3],
    pub network: BinaryVolume,
    pub faz2d: [FazRegion2D; 3],
    pub faz3d: FazRegion3D,
    /// Skeleton points per plexus whose slab held no integer depth.
    pub dropped_points: [usize; 3],
    /// Wall-clock seconds per pipeline stage, in execution order.
    pub stage_seconds: Vec<(&'static str, f64)>,
}

/// Runs the full pipeline on one loaded scan: preprocessing, per-plexus 2D
/// segmentation, 3D reconstruction, and both avascular-zone measurements.
/// Errors come back tagged with the stage that raised them.
pub fn measure(
    scan: &Scan,
    scan_id: &str,
    group_label: Option<GroupLabel>,
    cfg: &PipelineConfig,
) -> Result<MeasureOutput> {
    let started = Instant::now();
    let res_plane_um = scan.volume.res_plane_um;
    let mut stage_seconds: Vec<(&'static str, f64)> = Vec::new();
    let mut stamp = Instant::now();
    let mut lap = |stages: &mut Vec<(&'static str, f64)>, name: &'static str| {
        stages.push((name, stamp.elapsed().as_secs_f64()));
        stamp = Instant::now();
    };

    let (vol, surfaces) = preprocess::resample_to_isotropic(&scan.volume, &scan.surfaces)
        .map_err(|e| e.at_stage("resample"))?;
    lap(&mut stage_seconds, "resample");
    let mut surfaces =
        preprocess::regularize_surfaces(&surfaces, cfg).map_err(|e| e.at_stage("regularize"))?;
    lap(&mut stage_seconds, "regularize");
    let mut data = vol.data;
    preprocess::flatten_on_rpe(&mut data, &mut surfaces).map_err(|e| e.at_stage("flatten"))?;
    lap(&mut stage_seconds, "flatten");
    preprocess::derive_plexus_bounds(&mut surfaces, res_plane_um, cfg)
        .map_err(|e| e.at_stage("plexus_bounds"))?;
    lap(&mut stage_seconds, "plexus_bounds");

    let seg_stage = |p: Plexus| match p {
        Plexus::Superficial => "segment_superficial",
        Plexus::Intermediate => "segment_intermediate",
        Plexus::Deep => "segment_deep",
    };
    let mut segmentations = Vec::with_capacity(3);
    for (i, plexus) in Plexus::ALL.into_iter().enumerate() {
        debug_assert_eq!(scan.enfaces[i].plexus, plexus);
        let seg = segment_plexus_2d(&scan.enfaces[i].image, cfg)
            .map_err(|e| e.at_stage(seg_stage(plexus)))?;
        segmentations.push(seg);
        lap(&mut stage_seconds, seg_stage(plexus));
    }
    let segmentations: [PlexusSegmentation; 3] = segmentations.try_into().ok().unwrap();

    // Axial localization reads the smoothed volume; the buffer is scoped so
    // it is freed before the memory-heavy 3D morphology below.
    let dims = data.dims();
    let mut skeletons3d = Vec::with_capacity(3);
    let mut dropped_points = [0usize; 3];
    {
        let smoothed = preprocess::gaussian_smooth_3d(&data, cfg.sigma_volume);
        lap(&mut stage_seconds, "smooth");
        for (i, plexus) in Plexus::ALL.into_iter().enumerate() {
            let (upper, lower) =
                preprocess::slab_bounds(&surfaces, plexus).map_err(|e| e.at_stage("locate"))?;
            let (sk3, dropped) =
                locate_axial(&segmentations[i].skeleton, &smoothed, upper, lower);
            skeletons3d.push(sk3);
            dropped_points[i] = dropped;
        }
        lap(&mut stage_seconds, "locate");
    }
    let skeletons3d: [Skeleton3D; 3] = skeletons3d.try_into().ok().unwrap();
    drop(data);

    let nets: Vec<BinaryVolume> = skeletons3d
        .iter()
        .map(|sk| inflate_network(sk, dims))
        .collect();
    let network = merge_networks(&nets[0], &nets[1], &nets[2]).map_err(|e| e.at_stage("merge"))?;
    drop(nets);
    lap(&mut stage_seconds, "reconstruct");

    let faz2d = [
        faz_2d(&segmentations[0].mask, res_plane_um, cfg),
        faz_2d(&segmentations[1].mask, res_plane_um, cfg),
        faz_2d(&segmentations[2].mask, res_plane_um, cfg),
    ];
    lap(&mut stage_seconds, "faz_2d");
    let faz3d = faz_3d(&network, &surfaces.ilm, &surfaces.opl, res_plane_um, cfg);
    lap(&mut stage_seconds, "faz_3d");

    let measurement = FazMeasurement {
        scan_id: scan_id.to_string(),
        group_label,
        res_plane_um,
        area_svc_mm2: faz2d[0].area_mm2,
        area_icp_mm2: faz2d[1].area_mm2,
        area_dcp_mm2: faz2d[2].area_mm2,
        volume_mm3: faz3d.volume_mm3,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(MeasureOutput {
        measurement,
        segmentations,
        skeletons3d,
        network,
        faz2d,
        faz3d,
        dropped_points,
        stage_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume_io::{EnFaceImage, OctaVolume, SurfaceSet};
    use proptest::prelude::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn ring_mask(n: usize, r_in: f64, r_out: f64) -> BinaryImage {
        let c = n as f64 / 2.0;
        Image::from_fn(n, n, |x, y| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (r_in..=r_out).contains(&d)
        })
    }

    // ---- 2D ----

    #[test]
    fn full_ring_recovers_the_enclosed_disk_area() {
        let res = 5.7;
        let faz = faz_2d(&ring_mask(128, 40.0, 50.0), res, &cfg());
        assert!(!faz.used_center_fallback);
        let want = std::f64::consts::PI * (40.0 * res / 1000.0).powi(2);
        let err = (faz.area_mm2 - want).abs() / want;
        assert!(err < 0.10, "area {} vs {} ({:.1}%)", faz.area_mm2, want, err * 100.0);
    }

    #[test]
    fn empty_vessel_mask_falls_back_to_the_center_component() {
        let n = 64;
        let faz = faz_2d(&Image::filled(n, n, false), 5.7, &cfg());
        assert!(faz.used_center_fallback);
        // The whole frame is one avascular component.
        assert_eq!(faz.mask.count_true(), n * n);
    }

    #[test]
    fn all_vessel_mask_yields_a_zero_area_region() {
        let faz = faz_2d(&Image::filled(64, 64, true), 5.7, &cfg());
        assert_eq!(faz.area_mm2, 0.0);
        assert_eq!(faz.mask.count_true(), 0);
    }

    #[test]
    fn sub_threshold_specks_inside_the_zone_are_ignored() {
        let clean = ring_mask(128, 40.0, 50.0);
        let mut speckled = clean.clone();
        for &(x, y) in &[(64, 64), (60, 58), (70, 67), (57, 66)] {
            speckled.set(x, y, true);
        }
        let a = faz_2d(&clean, 5.7, &cfg());
        let b = faz_2d(&speckled, 5.7, &cfg());
        assert_eq!(a.mask.data(), b.mask.data());
        assert_eq!(a.area_mm2, b.area_mm2);
    }

    #[test]
    fn adding_vessels_never_grows_the_zone() {
        let base = ring_mask(128, 40.0, 50.0);
        let mut more = base.clone();
        // A blob well above the speck threshold, protruding into the zone.
        for y in 58..70 {
            for x in 88..97 {
                let d = ((x as f64 - 64.0).powi(2) + (y as f64 - 64.0).powi(2)).sqrt();
                if d < 40.0 {
                    more.set(x, y, true);
                }
            }
        }
        let a = faz_2d(&base, 5.7, &cfg());
        let b = faz_2d(&more, 5.7, &cfg());
        assert!(b.area_mm2 < a.area_mm2);
        for i in 0..b.mask.len() {
            assert!(!b.mask.data()[i] || a.mask.data()[i], "zone must shrink, not move");
        }
    }

    #[test]
    fn area_scales_quadratically_with_pitch() {
        let mask = ring_mask(96, 30.0, 40.0);
        let a = faz_2d(&mask, 5.7, &cfg());
        let b = faz_2d(&mask, 11.4, &cfg());
        assert!((b.area_mm2 / a.area_mm2 - 4.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn zone_and_vessels_stay_disjoint(seed in 0u64..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mask = ring_mask(96, 26.0, 34.0);
            for _ in 0..rng.random_range(0..30) {
                let x = rng.random_range(0..96);
                let y = rng.random_range(0..96);
                mask.set(x, y, true);
            }
            let c = cfg();
            let faz = faz_2d(&mask, 5.7, &c);
            let cleaned = remove_small_components_2d(&mask, c.min_component_px);
            for i in 0..mask.len() {
                prop_assert!(
                    !(faz.mask.data()[i] && cleaned.data()[i]),
                    "zone overlaps a vessel at {}",
                    i
                );
            }
        }
    }

    // ---- 3D ----

    /// Hollow vertical cylinder spanning the full height, thick enough that
    /// its dilation seals the frame corners.
    fn cylinder_network(n: usize, nz: usize, r_in: f64, r_out: f64) -> BinaryVolume {
        let c = n as f64 / 2.0;
        Volume::from_fn(n, n, nz, |x, y, _| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (r_in..=r_out).contains(&d)
        })
    }

    #[test]
    fn hollow_cylinder_recovers_the_inner_column_volume() {
        let res = 5.7;
        let net = cylinder_network(96, 48, 40.0, 55.0);
        let ilm = Image::filled(96, 96, 10.0f32);
        let opl = Image::filled(96, 96, 38.0f32);
        let faz = faz_3d(&net, &ilm, &opl, res, &cfg());
        // The inner column runs the full height, so it touches both z faces
        // and selection must go through the centered fallback.
        assert!(faz.used_center_fallback);
        let s = res / 1000.0;
        let want = std::f64::consts::PI * (40.0 * s).powi(2) * (28.0 * s);
        let err = (faz.volume_mm3 - want).abs() / want;
        assert!(err < 0.15, "volume {} vs {} ({:.1}%)", faz.volume_mm3, want, err * 100.0);
    }

    #[test]
    fn restriction_keeps_every_voxel_between_the_surfaces() {
        let net = cylinder_network(64, 40, 20.0, 36.0);
        let ilm = Image::from_fn(64, 64, |x, _| 8.0 + 0.02 * x as f32);
        let opl = Image::filled(64, 64, 30.0f32);
        let faz = faz_3d(&net, &ilm, &opl, 5.7, &cfg());
        for z in 0..40 {
            for y in 0..64 {
                for x in 0..64 {
                    if faz.mask.at(x, y, z) {
                        let zf = z as f32;
                        assert!(zf >= ilm.at(x, y) && zf <= opl.at(x, y));
                    }
                }
            }
        }
        assert!(faz.volume_mm3 > 0.0);
    }

    #[test]
    fn slab_saturated_network_leaves_no_avascular_volume() {
        // Tubes every 8 voxels over z 10..30 in a 40-deep volume: after
        // dilation by 15 nothing inverted survives anywhere.
        let net = Volume::from_fn(48, 48, 40, |x, _, z| x % 8 == 0 && (10..30).contains(&z));
        let ilm = Image::filled(48, 48, 10.0f32);
        let opl = Image::filled(48, 48, 30.0f32);
        let faz = faz_3d(&net, &ilm, &opl, 5.7, &cfg());
        assert_eq!(faz.volume_mm3, 0.0);
        assert_eq!(faz.mask.count_true(), 0);
    }

    #[test]
    fn volume_scales_cubically_with_pitch() {
        let net = cylinder_network(64, 40, 20.0, 36.0);
        let ilm = Image::filled(64, 64, 8.0f32);
        let opl = Image::filled(64, 64, 30.0f32);
        let a = faz_3d(&net, &ilm, &opl, 5.7, &cfg());
        let b = faz_3d(&net, &ilm, &opl, 11.4, &cfg());
        assert!((b.volume_mm3 / a.volume_mm3 - 8.0).abs() < 1e-9);
    }

    // ---- measure ----

    /// Minimal hand-built scan: textured en faces, planar layers, uniform
    /// volume with one bright plane per plexus slab.
    fn tiny_scan(constant_enface: Option<usize>) -> Scan {
        let (nx, ny, nz) = (32, 32, 48);
        let mut vol = Volume::filled(nx, ny, nz, 5.0f32);
        for z in [14, 22, 30] {
            for y in 0..ny {
                for x in 0..nx {
                    vol.set(x, y, z, 60.0);
                }
            }
        }
        let surfaces = SurfaceSet::new(
            Image::filled(nx, ny, 10.0),
            Image::filled(nx, ny, 20.0),
            Image::filled(nx, ny, 34.0),
            Image::filled(nx, ny, 44.0),
        );
        let textured = |i: usize| {
            Image::from_fn(nx, ny, |x, y| {
                if (y + i * 3) % 9 < 2 && x > 2 && x < 29 {
                    180.0
                } else {
                    15.0
                }
            })
        };
        let enfaces = [
            EnFaceImage { plexus: Plexus::Superficial, image: textured(0) },
            EnFaceImage { plexus: Plexus::Intermediate, image: textured(1) },
            EnFaceImage { plexus: Plexus::Deep, image: textured(2) },
        ];
        let mut scan = Scan {
            volume: OctaVolume {
                data: vol,
                res_plane_um: 5.7,
                res_axial_um: 5.7,
            },
            surfaces,
            enfaces,
        };
        if let Some(i) = constant_enface {
            scan.enfaces[i].image = Image::filled(nx, ny, 15.0);
        }
        scan
    }

    #[test]
    fn measure_populates_all_metrics_and_timing() {
        let scan = tiny_scan(None);
        let out = measure(&scan, "t1", Some(GroupLabel::Healthy), &cfg()).unwrap();
        let m = &out.measurement;
        assert_eq!(m.scan_id, "t1");
        assert!(m.elapsed_seconds > 0.0);
        assert_eq!(m.res_plane_um, 5.7);
        assert!(m.area_svc_mm2.is_finite() && m.area_svc_mm2 >= 0.0);
        assert!(m.volume_mm3.is_finite() && m.volume_mm3 >= 0.0);
        for seg in &out.segmentations {
            assert!(seg.mask.count_true() > 0);
        }
        let names: Vec<&str> = out.stage_seconds.iter().map(|&(n, _)| n).collect();
        for expected in ["resample", "flatten", "smooth", "reconstruct", "faz_3d"] {
            assert!(names.contains(&expected), "missing stage {expected}");
        }
        assert!(out.stage_seconds.iter().all(|&(_, s)| s >= 0.0));
    }

    #[test]
    fn degenerate_plexus_aborts_with_a_stage_tag() {
        let scan = tiny_scan(Some(1));
        let err = measure(&scan, "t2", None, &cfg()).unwrap_err();
        assert_eq!(err.stage(), Some("segment_intermediate"));
        assert!(matches!(err, crate::error::Error::Stage { .. }));
    }
}
