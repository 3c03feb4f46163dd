//! Synthetic OCTA scans with known geometry, used as measurement oracles.
//!
//! A phantom is rendered on the native anisotropic grid in micrometer space:
//! tubes are solid balls swept along continuous centerlines, the same solid
//! the reconstruction stage uses when it inflates skeletons. Ring networks
//! leave a central avascular column whose area and volume have closed forms,
//! which is what makes the phantom an oracle rather than a fixture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Plexus, ScalarImage, Volume};
use crate::preprocess::max_projection;
use crate::volume_io::{EnFaceImage, OctaVolume, Scan, SurfaceSet};

fn d_res_axial() -> f64 {
    3.87
}
fn d_vessel() -> f32 {
    180.0
}
fn d_background() -> f32 {
    15.0
}
fn d_off_minus() -> f64 {
    -17.0
}
fn d_off_plus() -> f64 {
    22.0
}
fn d_depth_fracs() -> Vec<f64> {
    vec![0.2, 0.8]
}

/// One straight tube running along x at a fixed lateral and axial position.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineTube {
    /// Lateral position as a fraction of the y extent.
    pub y_frac: f64,
    /// Axial position as a fraction of the feasible band inside the plexus
    /// slab: 0 puts the tube surface flush with the slab top, 1 with the
    /// bottom. The tube never leaves its slab for any value in [0, 1].
    pub depth_frac: f64,
    pub radius_um: f64,
}

/// Centerline depth for a tube of radius `r_um` placed at `frac` of the
/// feasible band of slab [upper, lower].
fn depth_in_slab(upper: f64, lower: f64, r_um: f64, frac: f64) -> f64 {
    (upper + r_um) + frac * ((lower - r_um) - (upper + r_um))
}

/// Vascular pattern of one plexus.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Concentric circular tubes around the frame center leaving a clear
    /// central void: the void extends to the first tube surface, so the
    /// innermost centerline sits at `faz_radius_um + tube_radius_um`.
    /// Each entry of `depth_fracs` lays a full set of rings at that
    /// fraction of the slab depth. `ring_count: None` adds rings until the
    /// frame corners are covered.
    Rings {
        faz_radius_um: f64,
        tube_radius_um: f64,
        ring_pitch_um: f64,
        #[serde(default)]
        ring_count: Option<u32>,
        #[serde(default = "d_depth_fracs")]
        depth_fracs: Vec<f64>,
    },
    /// Straight tubes along x, one per entry.
    Lines { tubes: Vec<LineTube> },
    /// No vessels at all; the en face comes out constant.
    Empty,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Networks {
    pub superficial: NetworkSpec,
    pub intermediate: NetworkSpec,
    pub deep: NetworkSpec,
}

impl Networks {
    pub fn get(&self, plexus: Plexus) -> &NetworkSpec {
        match plexus {
            Plexus::Superficial => &self.superficial,
            Plexus::Intermediate => &self.intermediate,
            Plexus::Deep => &self.deep,
        }
    }
}

/// Complete description of a synthetic scan. Layer depths are micrometers
/// from the volume top; the volume is generated on the native grid
/// (`res_axial_um` axial pitch) and carries planar layer surfaces.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub res_plane_um: f64,
    #[serde(default = "d_res_axial")]
    pub res_axial_um: f64,
    pub ilm_um: f64,
    pub ipl_um: f64,
    pub opl_um: f64,
    pub rpe_um: f64,
    #[serde(default = "d_vessel")]
    pub vessel_intensity: f32,
    #[serde(default = "d_background")]
    pub background_intensity: f32,
    /// Additive Gaussian noise level; 0 disables.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Multiplicative speckle level; 0 disables.
    #[serde(default)]
    pub speckle_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_off_minus")]
    pub offset_ipl_minus_um: f64,
    #[serde(default = "d_off_plus")]
    pub offset_ipl_plus_um: f64,
    pub networks: Networks,
}

/// Expected depth of one straight tube, for localization checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineTruth {
    pub plexus: Plexus,
    /// Lateral position in plane pixels.
    pub y_px: f64,
    /// Axial position in micrometers from the volume top.
    pub depth_um: f64,
}

/// Closed-form values the measurement should reproduce.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per plexus, `pi * r^2` of the central void; None for non-ring specs.
    pub faz_area_mm2: [Option<f64>; 3],
    /// Avascular column over the full [ILM, OPL] slab, summed over the
    /// per-plexus sub-slabs; None unless all three plexuses carry rings.
    pub faz_volume_mm3: Option<f64>,
    pub lines: Vec<LineTruth>,
}

impl PhantomSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: PhantomSpec =
            toml::from_str(s).map_err(|e| Error::Config(format!("phantom spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Slab bounds in micrometers for one plexus, matching how the
    /// measurement pipeline partitions the inner retina.
    pub fn slab_um(&self, plexus: Plexus) -> (f64, f64) {
        let minus = self.ipl_um + self.offset_ipl_minus_um;
        let plus = self.ipl_um + self.offset_ipl_plus_um;
        match plexus {
            Plexus::Superficial => (self.ilm_um, minus),
            Plexus::Intermediate => (minus, plus),
            Plexus::Deep => (plus, self.opl_um),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.nx < 8 || self.ny < 8 || self.nz < 8 {
            return fail(format!("dims {}x{}x{} too small", self.nx, self.ny, self.nz));
        }
        if !(self.res_plane_um > 0.0) || !(self.res_axial_um > 0.0) {
            return fail("resolutions must be positive".into());
        }
        let minus = self.ipl_um + self.offset_ipl_minus_um;
        let plus = self.ipl_um + self.offset_ipl_plus_um;
        let depth_um = (self.nz as f64 - 1.0) * self.res_axial_um;
        let ordered = 0.0 < self.ilm_um
            && self.ilm_um < minus
            && minus < plus
            && plus < self.opl_um
            && self.opl_um < self.rpe_um
            && self.rpe_um <= depth_um;
        if !ordered {
            return fail(format!(
                "layers must satisfy 0 < ilm < ipl{:+} < ipl{:+} < opl < rpe <= {depth_um}",
                self.offset_ipl_minus_um, self.offset_ipl_plus_um
            ));
        }
        if self.vessel_intensity <= self.background_intensity || self.background_intensity < 0.0 {
            return fail("need vessel_intensity > background_intensity >= 0".into());
        }
        if self.noise_sigma < 0.0 || self.speckle_amplitude < 0.0 {
            return fail("noise levels must be non-negative".into());
        }
        for plexus in Plexus::ALL {
            let (upper, lower) = self.slab_um(plexus);
            match self.networks.get(plexus) {
                NetworkSpec::Rings {
                    faz_radius_um,
                    tube_radius_um,
                    ring_pitch_um,
                    depth_fracs,
                    ..
                } => {
                    if !(*faz_radius_um > 0.0) || !(*tube_radius_um > 0.0) {
                        return fail(format!("{}: radii must be positive", plexus.label()));
                    }
                    if !(*ring_pitch_um >= 2.0 * tube_radius_um) {
                        return fail(format!(
                            "{}: ring pitch must be at least one tube diameter",
                            plexus.label()
                        ));
                    }
                    if depth_fracs.is_empty() {
                        return fail(format!("{}: depth_fracs is empty", plexus.label()));
                    }
                    if lower - upper < 2.0 * tube_radius_um {
                        return fail(format!(
                            "{}: tube diameter {} exceeds slab [{upper}, {lower}]",
                            plexus.label(),
                            2.0 * tube_radius_um
                        ));
                    }
                    for &f in depth_fracs {
                        if !(0.0..=1.0).contains(&f) {
                            return fail(format!(
                                "{}: depth frac {f} outside [0, 1]",
                                plexus.label()
                            ));
                        }
                    }
                }
                NetworkSpec::Lines { tubes } => {
                    for t in tubes {
                        if !(0.0..=1.0).contains(&t.y_frac)
                            || !(0.0..=1.0).contains(&t.depth_frac)
                            || !(t.radius_um > 0.0)
                            || lower - upper < 2.0 * t.radius_um
                        {
                            return fail(format!(
                                "{}: tube at y_frac {} depth_frac {} radius {} does not fit its slab",
                                plexus.label(),
                                t.y_frac,
                                t.depth_frac,
                                t.radius_um
                            ));
                        }
                    }
                }
                NetworkSpec::Empty => {}
            }
        }
        Ok(())
    }

    fn ground_truth(&self) -> GroundTruth {
        let mut areas = [None; 3];
        let mut lines = Vec::new();
        let mut column = Some(0.0f64);
        for (i, plexus) in Plexus::ALL.into_iter().enumerate() {
            let (upper, lower) = self.slab_um(plexus);
            match self.networks.get(plexus) {
                NetworkSpec::Rings { faz_radius_um, .. } => {
                    let r_mm = faz_radius_um / 1000.0;
                    areas[i] = Some(std::f64::consts::PI * r_mm * r_mm);
                    if let Some(v) = column.as_mut() {
                        *v += std::f64::consts::PI * r_mm * r_mm * ((lower - upper) / 1000.0);
                    }
                }
                NetworkSpec::Lines { tubes } => {
                    column = None;
                    for t in tubes {
                        lines.push(LineTruth {
                            plexus,
                            y_px: t.y_frac * (self.ny as f64 - 1.0),
                            depth_um: depth_in_slab(upper, lower, t.radius_um, t.depth_frac),
                        });
                    }
                }
                NetworkSpec::Empty => column = None,
            }
        }
        GroundTruth {
            faz_area_mm2: areas,
            faz_volume_mm3: column,
            lines,
        }
    }
}

/// Paints one full set of rings at a single depth. One plane sweep finds
/// the nearest ring per pixel, then fills its axial extent; exact because
/// the distance from a point to a centered circle separates into the
/// in-plane radial error and the axial offset.
fn render_ring_layer(
    vol: &mut Volume<f32>,
    spec: &PhantomSpec,
    r0_um: f64,
    pitch_um: f64,
    count: Option<u32>,
    tube_r_um: f64,
    depth_um: f64,
) {
    let (nx, ny, nz) = vol.dims();
    let (rp, ra) = (spec.res_plane_um, spec.res_axial_um);
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0 * rp, (ny as f64 - 1.0) / 2.0 * rp);
    let half_diag = (cx * cx + cy * cy).sqrt();
    let k_max = match count {
        Some(c) => c as i64 - 1,
        // Cover past the corners so closing finds no lateral gaps.
        None => ((half_diag + pitch_um - r0_um) / pitch_um).ceil() as i64 + 1,
    };
    if k_max < 0 {
        return;
    }
    for y in 0..ny {
        for x in 0..nx {
            let dx = x as f64 * rp - cx;
            let dy = y as f64 * rp - cy;
            let d = (dx * dx + dy * dy).sqrt();
            if d < r0_um - tube_r_um {
                continue;
            }
            let k = ((d - r0_um) / pitch_um).round().clamp(0.0, k_max as f64);
            let radial = d - (r0_um + k * pitch_um);
            let rem2 = tube_r_um * tube_r_um - radial * radial;
            if rem2 < 0.0 {
                continue;
            }
            let rem = rem2.sqrt();
            let z0 = ((depth_um - rem) / ra).ceil().max(0.0) as usize;
            let z1 = ((depth_um + rem) / ra).floor().min(nz as f64 - 1.0) as usize;
            for z in z0..=z1 {
                vol.set(x, y, z, spec.vessel_intensity);
            }
        }
    }
}

fn render_line_tube(vol: &mut Volume<f32>, spec: &PhantomSpec, y0_um: f64, depth_um: f64, r_um: f64) {
    let (nx, ny, nz) = vol.dims();
    let (rp, ra) = (spec.res_plane_um, spec.res_axial_um);
    let y_lo = ((y0_um - r_um) / rp).ceil().max(0.0) as usize;
    let y_hi = ((y0_um + r_um) / rp).floor().min(ny as f64 - 1.0) as usize;
    for y in y_lo..=y_hi {
        let dy = y as f64 * rp - y0_um;
        let rem2 = r_um * r_um - dy * dy;
        if rem2 < 0.0 {
            continue;
        }
        let rem = rem2.sqrt();
        let z0 = ((depth_um - rem) / ra).ceil().max(0.0) as usize;
        let z1 = ((depth_um + rem) / ra).floor().min(nz as f64 - 1.0) as usize;
        for z in z0..=z1 {
            for x in 0..nx {
                vol.set(x, y, z, spec.vessel_intensity);
            }
        }
    }
}

/// Renders the phantom and returns it as a ready-to-measure scan together
/// with its analytic ground truth. Same spec, same bytes: the noise stream
/// is a fixed-seed counter RNG drawn in storage order.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Scan, GroundTruth)> {
    spec.validate()?;
    let (nx, ny, nz) = (spec.nx, spec.ny, spec.nz);
    let ra = spec.res_axial_um;
    let mut vol = Volume::filled(nx, ny, nz, spec.background_intensity);

    for plexus in Plexus::ALL {
        let (upper, lower) = spec.slab_um(plexus);
        match spec.networks.get(plexus) {
            NetworkSpec::Rings {
                faz_radius_um,
                tube_radius_um,
                ring_pitch_um,
                ring_count,
                depth_fracs,
            } => {
                let r0 = faz_radius_um + tube_radius_um;
                for &f in depth_fracs {
                    let depth = depth_in_slab(upper, lower, *tube_radius_um, f);
                    render_ring_layer(
                        &mut vol,
                        spec,
                        r0,
                        *ring_pitch_um,
                        *ring_count,
                        *tube_radius_um,
                        depth,
                    );
                }
            }
            NetworkSpec::Lines { tubes } => {
                for t in tubes {
                    let y0 = t.y_frac * (ny as f64 - 1.0) * spec.res_plane_um;
                    let depth = depth_in_slab(upper, lower, t.radius_um, t.depth_frac);
                    render_line_tube(&mut vol, spec, y0, depth, t.radius_um);
                }
            }
            NetworkSpec::Empty => {}
        }
    }

    if spec.noise_sigma > 0.0 || spec.speckle_amplitude > 0.0 {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
        let (sigma, amp) = (spec.noise_sigma, spec.speckle_amplitude);
        // Speckle is a multiplicative uniform factor in [1-a, 1+a]; additive
        // detector noise is Gaussian. Draw order is fixed (two draws per
        // voxel, storage order) so outputs are reproducible bit for bit.
        for v in vol.data_mut() {
            let n: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let g: f64 = rng.random_range(-1.0..=1.0);
            let speckle = (1.0 + amp * g).max(0.0);
            *v = ((*v as f64 + sigma * n) * speckle).max(0.0) as f32;
        }
    }

    let plane = |um: f64| -> ScalarImage { Image::filled(nx, ny, (um / ra) as f32) };
    let surfaces = SurfaceSet::new(
        plane(spec.ilm_um),
        plane(spec.ipl_um),
        plane(spec.opl_um),
        plane(spec.rpe_um),
    );

    let mut enfaces = Vec::with_capacity(3);
    for plexus in Plexus::ALL {
        let (upper, lower) = spec.slab_um(plexus);
        let image = max_projection(&vol, &plane(upper), &plane(lower));
        enfaces.push(EnFaceImage { plexus, image });
    }
    let enfaces: [EnFaceImage; 3] = enfaces.try_into().ok().unwrap();

    let truth = spec.ground_truth();
    let scan = Scan {
        volume: OctaVolume {
            data: vol,
            res_plane_um: spec.res_plane_um,
            res_axial_um: spec.res_axial_um,
        },
        surfaces,
        enfaces,
    };
    Ok((scan, truth))
}
