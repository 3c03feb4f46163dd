//! Scan container I/O and the measurement record.
//!
//! A scan is a directory holding a structured-text `meta` sidecar plus raw
//! little-endian float32 payloads:
//!
//! ```text
//! scan/
//!   meta                      dims, resolutions, dtype, axis order
//!   volume.raw                nx*ny*nz float32, x-fastest, z slowest
//!   surface_ilm.raw           nx*ny float32 axial positions (voxels)
//!   surface_ipl.raw
//!   surface_opl.raw
//!   surface_rpe.raw
//!   enface_superficial.raw    nx*ny float32 en-face projections
//!   enface_intermediate.raw
//!   enface_deep.raw
//! ```
//!
//! `save_scan` followed by `load_scan` is bit-exact for every field.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Image, Plexus, ScalarImage, Volume};

const META_MAGIC: &str = "octa-scan v1";
const AXIS_ORDER: &str = "x-fast, y-bscan, z-axial";
const DTYPE: &str = "float32";

// ===========================================================================
// Core scan types
// ===========================================================================

/// A structural OCT / OCTA intensity volume with its sampling pitches.
///
/// Invariant: all intensities are finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct OctaVolume {
    pub data: Volume<f32>,
    /// In-plane (x and y) pitch, µm per voxel.
    pub res_plane_um: f64,
    /// Axial (z) pitch, µm per voxel.
    pub res_axial_um: f64,
}

impl OctaVolume {
    pub fn is_isotropic(&self) -> bool {
        (self.res_axial_um - self.res_plane_um).abs() < 1e-9
    }
}

/// Retinal layer boundaries as fractional axial voxel positions per (x, y).
///
/// After regularization the ordering ilm <= ipl <= opl <= rpe holds per
/// column; the derived slab boundaries `ipl_minus`/`ipl_plus` are filled by
/// [`crate::preprocess::derive_plexus_bounds`].
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSet {
    pub ilm: ScalarImage,
    pub ipl: ScalarImage,
    pub opl: ScalarImage,
    pub rpe: ScalarImage,
    pub ipl_minus: Option<ScalarImage>,
    pub ipl_plus: Option<ScalarImage>,
}

impl SurfaceSet {
    pub fn new(ilm: ScalarImage, ipl: ScalarImage, opl: ScalarImage, rpe: ScalarImage) -> Self {
        SurfaceSet {
            ilm,
            ipl,
            opl,
            rpe,
            ipl_minus: None,
            ipl_plus: None,
        }
    }

    pub fn named(&self) -> [(&'static str, &ScalarImage); 4] {
        [
            ("ilm", &self.ilm),
            ("ipl", &self.ipl),
            ("opl", &self.opl),
            ("rpe", &self.rpe),
        ]
    }
}

/// Manufacturer-style en-face projection of one plexus slab.
#[derive(Clone, Debug, PartialEq)]
pub struct EnFaceImage {
    pub plexus: Plexus,
    pub image: ScalarImage,
}

/// One scan as loaded from a container: volume, layer surfaces and the
/// three per-plexus en-face projections (superficial, intermediate, deep).
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub volume: OctaVolume,
    pub surfaces: SurfaceSet,
    pub enfaces: [EnFaceImage; 3],
}

// ===========================================================================
// Measurement record
// ===========================================================================

/// Cohort label carried through from the run manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupLabel {
    Healthy,
    DiabetesNoDr,
    DiabetesDr,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 3] = [
        GroupLabel::Healthy,
        GroupLabel::DiabetesNoDr,
        GroupLabel::DiabetesDr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::Healthy => "healthy",
            GroupLabel::DiabetesNoDr => "diabetes_no_dr",
            GroupLabel::DiabetesDr => "diabetes_dr",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(GroupLabel::Healthy),
            "diabetes_no_dr" => Ok(GroupLabel::DiabetesNoDr),
            "diabetes_dr" => Ok(GroupLabel::DiabetesDr),
            other => Err(Error::Config(format!("unknown group label: {other:?}"))),
        }
    }
}

/// Final per-scan result: per-plexus 2D avascular-zone areas and the 3D
/// avascular volume, plus wall-clock processing time.
#[derive(Clone, Debug, PartialEq)]
pub struct FazMeasurement {
    pub scan_id: String,
    pub group_label: Option<GroupLabel>,
    pub res_plane_um: f64,
    pub area_svc_mm2: f64,
    pub area_icp_mm2: f64,
    pub area_dcp_mm2: f64,
    pub volume_mm3: f64,
    pub elapsed_seconds: f64,
}

impl FazMeasurement {
    pub fn area_mm2(&self, plexus: Plexus) -> f64 {
        match plexus {
            Plexus::Superficial => self.area_svc_mm2,
            Plexus::Intermediate => self.area_icp_mm2,
            Plexus::Deep => self.area_dcp_mm2,
        }
    }
}

// ===========================================================================
// Container reading / writing
// ===========================================================================

struct Meta {
    nx: usize,
    ny: usize,
    nz: usize,
    res_plane_um: f64,
    res_axial_um: f64,
}

fn parse_meta(text: &str) -> Result<Meta> {
    let corrupt = |why: String| Error::Container(format!("corrupt meta: {why}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(line) if line.trim() == META_MAGIC => {}
        other => {
            return Err(corrupt(format!(
                "expected magic {META_MAGIC:?}, found {other:?}"
            )))
        }
    }

    let mut nx = None;
    let mut ny = None;
    let mut nz = None;
    let mut res_plane = None;
    let mut res_axial = None;
    let mut dtype = None;
    let mut axis_order = None;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| corrupt(format!("malformed line {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "nx" => nx = Some(value.parse::<usize>()),
            "ny" => ny = Some(value.parse::<usize>()),
            "nz" => nz = Some(value.parse::<usize>()),
            "res_plane_um" => res_plane = Some(value.parse::<f64>()),
            "res_axial_um" => res_axial = Some(value.parse::<f64>()),
            "dtype" => dtype = Some(value.to_string()),
            "axis_order" => axis_order = Some(value.to_string()),
            other => return Err(corrupt(format!("unknown key {other:?}"))),
        }
    }

    fn req<T>(name: &str, v: Option<std::result::Result<T, impl fmt::Display>>) -> Result<T> {
        match v {
            Some(Ok(v)) => Ok(v),
            Some(Err(e)) => Err(Error::Container(format!(
                "corrupt meta: bad value for {name}: {e}"
            ))),
            None => Err(Error::Container(format!("corrupt meta: missing {name}"))),
        }
    }

    let meta = Meta {
        nx: req("nx", nx)?,
        ny: req("ny", ny)?,
        nz: req("nz", nz)?,
        res_plane_um: req("res_plane_um", res_plane)?,
        res_axial_um: req("res_axial_um", res_axial)?,
    };
    match dtype.as_deref() {
        Some(DTYPE) => {}
        other => return Err(corrupt(format!("unsupported dtype {other:?}"))),
    }
    match axis_order.as_deref() {
        Some(AXIS_ORDER) => {}
        other => return Err(corrupt(format!("unsupported axis order {other:?}"))),
    }
    if meta.nx == 0 || meta.ny == 0 || meta.nz == 0 {
        return Err(corrupt("zero dimension".into()));
    }
    if !(meta.res_plane_um > 0.0 && meta.res_axial_um > 0.0) {
        return Err(corrupt("non-positive resolution".into()));
    }
    Ok(meta)
}

fn format_meta(meta: &Meta) -> String {
    // f64 Display produces the shortest representation that parses back to
    // the same value, which keeps the meta roundtrip bit-exact.
    format!(
        "{META_MAGIC}\nnx: {}\nny: {}\nnz: {}\nres_plane_um: {}\nres_axial_um: {}\ndtype: {DTYPE}\naxis_order: {AXIS_ORDER}\n",
        meta.nx, meta.ny, meta.nz, meta.res_plane_um, meta.res_axial_um
    )
}

fn read_f32_raw(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;
    if bytes.len() != expected * 4 {
        return Err(Error::DimMismatch(format!(
            "{}: expected {} bytes ({} float32), found {}",
            path.display(),
            expected * 4,
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_raw(path: &Path, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn check_finite(name: &str, data: &[f32]) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "{name}: non-finite value at linear index {i}"
        )));
    }
    Ok(())
}

fn clamp_surface(mut img: ScalarImage, nz: usize) -> ScalarImage {
    // Surfaces live in [0, nz); the top of the range is open because a
    // fractional position inside the last voxel is still addressable.
    let hi = (nz as f32).next_down();
    for v in img.data_mut() {
        *v = v.clamp(0.0, hi);
    }
    img
}

fn surface_in_range(name: &str, img: &ScalarImage, nz: usize) -> Result<()> {
    let hi = nz as f32;
    for (i, v) in img.data().iter().enumerate() {
        if !v.is_finite() || *v < 0.0 || *v >= hi {
            return Err(Error::InvalidData(format!(
                "surface {name}: value {v} at linear index {i} outside [0, {nz})"
            )));
        }
    }
    Ok(())
}

/// Reads a scan container directory.
///
/// Surfaces are clamped into [0, nz) after a finiteness check; volume
/// intensities must be finite and non-negative.
pub fn load_scan(dir: &Path) -> Result<Scan> {
    let meta_path = dir.join("meta");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::Container(format!("{}: {e}", meta_path.display())))?;
    let meta = parse_meta(&meta_text)?;
    let (nx, ny, nz) = (meta.nx, meta.ny, meta.nz);

    let volume_data = read_f32_raw(&dir.join("volume.raw"), nx * ny * nz)?;
    check_finite("volume", &volume_data)?;
    if let Some(i) = volume_data.iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidData(format!(
            "volume: negative intensity at linear index {i}"
        )));
    }

    let load_surface = |name: &str| -> Result<ScalarImage> {
        let data = read_f32_raw(&dir.join(format!("surface_{name}.raw")), nx * ny)?;
        check_finite(&format!("surface {name}"), &data)?;
        Ok(clamp_surface(Image::from_vec(nx, ny, data), nz))
    };
    let surfaces = SurfaceSet::new(
        load_surface("ilm")?,
        load_surface("ipl")?,
        load_surface("opl")?,
        load_surface("rpe")?,
    );

    let load_enface = |plexus: Plexus| -> Result<EnFaceImage> {
        let data = read_f32_raw(&dir.join(format!("enface_{}.raw", plexus.label())), nx * ny)?;
        check_finite(&format!("enface {}", plexus.label()), &data)?;
        Ok(EnFaceImage {
            plexus,
            image: Image::from_vec(nx, ny, data),
        })
    };
    let enfaces = [
        load_enface(Plexus::Superficial)?,
        load_enface(Plexus::Intermediate)?,
        load_enface(Plexus::Deep)?,
    ];

    Ok(Scan {
        volume: OctaVolume {
            data: Volume::from_vec(nx, ny, nz, volume_data),
            res_plane_um: meta.res_plane_um,
            res_axial_um: meta.res_axial_um,
        },
        surfaces,
        enfaces,
    })
}

/// Writes a scan container directory (created if needed).
///
/// Validates the same invariants `load_scan` enforces, so a successful
/// save/load cycle reproduces every field bit-exactly.
pub fn save_scan(dir: &Path, scan: &Scan) -> Result<()> {
    let (nx, ny, nz) = scan.volume.data.dims();
    for (name, surf) in scan.surfaces.named() {
        if surf.nx() != nx || surf.ny() != ny {
            return Err(Error::DimMismatch(format!(
                "surface {name} is {}x{}, volume plane is {nx}x{ny}",
                surf.nx(),
                surf.ny()
            )));
        }
        surface_in_range(name, surf, nz)?;
    }
    for ef in &scan.enfaces {
        if ef.image.nx() != nx || ef.image.ny() != ny {
            return Err(Error::DimMismatch(format!(
                "enface {} is {}x{}, volume plane is {nx}x{ny}",
                ef.plexus.label(),
                ef.image.nx(),
                ef.image.ny()
            )));
        }
        check_finite(&format!("enface {}", ef.plexus.label()), ef.image.data())?;
    }
    check_finite("volume", scan.volume.data.data())?;
    if scan.volume.data.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidData("volume: negative intensity".into()));
    }

    std::fs::create_dir_all(dir)?;
    let meta = Meta {
        nx,
        ny,
        nz,
        res_plane_um: scan.volume.res_plane_um,
        res_axial_um: scan.volume.res_axial_um,
    };
    std::fs::write(dir.join("meta"), format_meta(&meta))?;
    write_f32_raw(&dir.join("volume.raw"), scan.volume.data.data())?;
    for (name, surf) in scan.surfaces.named() {
        write_f32_raw(&dir.join(format!("surface_{name}.raw")), surf.data())?;
    }
    for ef in &scan.enfaces {
        write_f32_raw(
            &dir.join(format!("enface_{}.raw", ef.plexus.label())),
            ef.image.data(),
        )?;
    }
    Ok(())
}

// ===========================================================================
// Measurement CSV
// ===========================================================================

pub const MEASUREMENTS_HEADER: &str = "scan_id,group_label,res_plane_um,area_svc_mm2,area_icp_mm2,area_dcp_mm2,volume_mm3,elapsed_seconds";

fn check_csv_field(what: &str, s: &str) -> Result<()> {
    if s.contains([',', '"', '\n', '\r']) {
        return Err(Error::InvalidData(format!(
            "{what} {s:?} contains a CSV delimiter or line break"
        )));
    }
    Ok(())
}

/// Writes measurement rows as CSV, in the order given.
///
/// All numeric columns use fixed 6-decimal formatting so identical inputs
/// always produce identical bytes.
pub fn write_measurements<W: Write>(w: &mut W, rows: &[FazMeasurement]) -> Result<()> {
    writeln!(w, "{MEASUREMENTS_HEADER}")?;
    for r in rows {
        check_csv_field("scan_id", &r.scan_id)?;
        let group = r.group_label.map(|g| g.as_str()).unwrap_or("");
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.scan_id,
            group,
            r.res_plane_um,
            r.area_svc_mm2,
            r.area_icp_mm2,
            r.area_dcp_mm2,
            r.volume_mm3,
            r.elapsed_seconds
        )?;
    }
    Ok(())
}

/// Parses CSV produced by [`write_measurements`].
pub fn read_measurements(text: &str) -> Result<Vec<FazMeasurement>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MEASUREMENTS_HEADER => {}
        other => {
            return Err(Error::InvalidData(format!(
                "measurements csv: unexpected header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::InvalidData(format!(
                "measurements csv line {}: expected 8 fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| {
                Error::InvalidData(format!(
                    "measurements csv line {}: field {}: {e}",
                    lineno + 2,
                    i + 1
                ))
            })
        };
        rows.push(FazMeasurement {
            scan_id: fields[0].to_string(),
            group_label: if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse()?)
            },
            res_plane_um: num(2)?,
            area_svc_mm2: num(3)?,
            area_icp_mm2: num(4)?,
            area_dcp_mm2: num(5)?,
            volume_mm3: num(6)?,
            elapsed_seconds: num(7)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Image;
    use rand::{Rng, SeedableRng};

    fn test_scan(nx: usize, ny: usize, nz: usize, seed: u64) -> Scan {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..nx * ny * nz)
            .map(|_| rng.random_range(0.0f32..250.0))
            .collect();
        let surf = |frac: f32| {
            Image::from_fn(nx, ny, |x, y| {
                nz as f32 * frac + 0.001 * x as f32 + 0.002 * y as f32
            })
        };
        let ef = |p: Plexus, off: f32| EnFaceImage {
            plexus: p,
            image: Image::from_fn(nx, ny, |x, y| off + (x + y) as f32),
        };
        Scan {
            volume: OctaVolume {
                data: Volume::from_vec(nx, ny, nz, data),
                res_plane_um: 5.7,
                res_axial_um: 3.87,
            },
            surfaces: SurfaceSet::new(surf(0.1), surf(0.3), surf(0.5), surf(0.8)),
            enfaces: [
                ef(Plexus::Superficial, 0.0),
                ef(Plexus::Intermediate, 1.0),
                ef(Plexus::Deep, 2.0),
            ],
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let scan = test_scan(17, 13, 29, 1);
        save_scan(dir.path(), &scan).unwrap();
        let loaded = load_scan(dir.path()).unwrap();
        assert_eq!(loaded, scan);
    }

    #[test]
    fn roundtrip_checksum_matches_over_serialized_bytes() {
        use sha2::{Digest, Sha256};
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let scan = test_scan(64, 64, 48, 2);
        save_scan(dir1.path(), &scan).unwrap();
        let loaded = load_scan(dir1.path()).unwrap();
        save_scan(dir2.path(), &loaded).unwrap();
        let digest_of = |dir: &Path| {
            let mut names: Vec<_> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            let mut hasher = Sha256::new();
            for name in names {
                hasher.update(name.as_encoded_bytes());
                hasher.update(std::fs::read(dir.join(&name)).unwrap());
            }
            hasher.finalize()
        };
        assert_eq!(digest_of(dir1.path()), digest_of(dir2.path()));
    }

    /// Full-size variant of the checksum roundtrip; ~520 MB on disk per
    /// copy, so it only runs with `cargo test -- --ignored`.
    #[test]
    #[ignore]
    fn roundtrip_checksum_full_clinical_size() {
        use sha2::{Digest, Sha256};
        let dir = tempfile::tempdir().unwrap();
        let scan = test_scan(512, 512, 496, 3);
        save_scan(dir.path(), &scan).unwrap();
        let before = Sha256::digest(std::fs::read(dir.path().join("volume.raw")).unwrap());
        let loaded = load_scan(dir.path()).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_scan(dir2.path(), &loaded).unwrap();
        let after = Sha256::digest(std::fs::read(dir2.path().join("volume.raw")).unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn volume_layout_on_disk_is_x_fastest() {
        let dir = tempfile::tempdir().unwrap();
        let mut scan = test_scan(4, 3, 2, 4);
        scan.volume.data.set(1, 2, 1, 777.0);
        save_scan(dir.path(), &scan).unwrap();
        let bytes = std::fs::read(dir.path().join("volume.raw")).unwrap();
        let off = 4 * (1 + 4 * (2 + 3 * 1));
        let v = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        assert_eq!(v, 777.0);
    }

    #[test]
    fn resolution_survives_meta_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut scan = test_scan(4, 4, 4, 5);
        scan.volume.res_plane_um = 5.7;
        scan.volume.res_axial_um = 3.87;
        save_scan(dir.path(), &scan).unwrap();
        let loaded = load_scan(dir.path()).unwrap();
        assert_eq!(loaded.volume.res_plane_um.to_bits(), 5.7f64.to_bits());
        assert_eq!(loaded.volume.res_axial_um.to_bits(), 3.87f64.to_bits());
    }

    #[test]
    fn truncated_volume_is_a_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let scan = test_scan(8, 8, 8, 6);
        save_scan(dir.path(), &scan).unwrap();
        let path = dir.path().join("volume.raw");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn flipped_header_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_scan(dir.path(), &test_scan(6, 6, 6, 7)).unwrap();
        let path = dir.path().join("meta");
        let text = std::fs::read_to_string(&path).unwrap();
        let corrupted = text.replace("float32", "float3Z");
        assert_ne!(text, corrupted);
        std::fs::write(&path, corrupted).unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::Container(_))));
    }

    #[test]
    fn missing_enface_is_a_container_error() {
        let dir = tempfile::tempdir().unwrap();
        save_scan(dir.path(), &test_scan(6, 6, 6, 8)).unwrap();
        std::fs::remove_file(dir.path().join("enface_deep.raw")).unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::Container(_))));
    }

    #[test]
    fn non_finite_voxel_is_invalid_data() {
        let dir = tempfile::tempdir().unwrap();
        save_scan(dir.path(), &test_scan(6, 6, 6, 9)).unwrap();
        let path = dir.path().join("volume.raw");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::InvalidData(_))));
    }

    #[test]
    fn negative_voxel_is_invalid_data() {
        let dir = tempfile::tempdir().unwrap();
        save_scan(dir.path(), &test_scan(6, 6, 6, 10)).unwrap();
        let path = dir.path().join("volume.raw");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(&(-1.0f32).to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_scan(dir.path()), Err(Error::InvalidData(_))));
    }

    #[test]
    fn out_of_range_surface_is_clamped_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let scan = test_scan(6, 6, 6, 11);
        save_scan(dir.path(), &scan).unwrap();
        let path = dir.path().join("surface_ilm.raw");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(&1e9f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let loaded = load_scan(dir.path()).unwrap();
        let v = loaded.surfaces.ilm.at(0, 0);
        assert!(v < 6.0, "clamped surface value, got {v}");
    }

    #[test]
    fn measurement_row_formats_six_decimals() {
        let row = FazMeasurement {
            scan_id: "eye01".into(),
            group_label: Some(GroupLabel::Healthy),
            res_plane_um: 5.7,
            area_svc_mm2: 0.525,
            area_icp_mm2: 0.216,
            area_dcp_mm2: 0.465,
            volume_mm3: 0.013,
            elapsed_seconds: 38.7,
        };
        let mut buf = Vec::new();
        write_measurements(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), MEASUREMENTS_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "eye01,healthy,5.700000,0.525000,0.216000,0.465000,0.013000,38.700000"
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn empty_input_writes_header_only() {
        let mut buf = Vec::new();
        write_measurements(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{MEASUREMENTS_HEADER}\n"));
    }

    #[test]
    fn measurements_roundtrip_through_csv() {
        let rows = vec![
            FazMeasurement {
                scan_id: "a".into(),
                group_label: None,
                res_plane_um: 5.7,
                area_svc_mm2: 0.5,
                area_icp_mm2: 0.25,
                area_dcp_mm2: 0.4375,
                volume_mm3: 0.015625,
                elapsed_seconds: 1.5,
            },
            FazMeasurement {
                scan_id: "b".into(),
                group_label: Some(GroupLabel::DiabetesDr),
                res_plane_um: 3.87,
                area_svc_mm2: 0.75,
                area_icp_mm2: 0.5,
                area_dcp_mm2: 0.625,
                volume_mm3: 0.03125,
                elapsed_seconds: 2.0,
            },
        ];
        let mut buf = Vec::new();
        write_measurements(&mut buf, &rows).unwrap();
        let parsed = read_measurements(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn scan_id_with_comma_is_rejected() {
        let row = FazMeasurement {
            scan_id: "a,b".into(),
            group_label: None,
            res_plane_um: 5.7,
            area_svc_mm2: 0.0,
            area_icp_mm2: 0.0,
            area_dcp_mm2: 0.0,
            volume_mm3: 0.0,
            elapsed_seconds: 0.0,
        };
        let mut buf = Vec::new();
        assert!(write_measurements(&mut buf, &[row]).is_err());
    }
}
