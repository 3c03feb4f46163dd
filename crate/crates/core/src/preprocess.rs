//! Volume preprocessing: axial resampling to isotropic voxels, robust
//! surface regularization, retina flattening and separable 3D Gaussian
//! smoothing, plus slab bookkeeping (plexus bounds and max-projection).
//!
//! Stage order is fixed: resample -> regularize -> flatten -> smooth.

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{Image, Plexus, ScalarImage, Volume};
use crate::volume_io::{OctaVolume, SurfaceSet};

// ===========================================================================
// Axial resampling
// ===========================================================================

/// Resamples the axial (z) axis so voxels become isotropic at the in-plane
/// pitch, and rescales surface maps into the new axial coordinates.
///
/// The output depth is round(nz * res_axial / res_plane); each output sample
/// takes the linearly interpolated value at z_in = z_out * res_plane /
/// res_axial, clamped to the input range. When the two pitches are equal the
/// volume is passed through bit-exactly.
pub fn resample_to_isotropic(
    vol: &OctaVolume,
    surfaces: &SurfaceSet,
) -> Result<(OctaVolume, SurfaceSet)> {
    if !(vol.res_plane_um > 0.0) || !(vol.res_axial_um > 0.0) {
        return Err(Error::InvalidData(format!(
            "non-positive voxel pitch: plane {} um, axial {} um",
            vol.res_plane_um, vol.res_axial_um
        )));
    }
    let (nx, ny, nz) = vol.data.dims();
    let ratio = vol.res_axial_um / vol.res_plane_um;
    let nz_out = ((nz as f64 * ratio).round() as usize).max(1);

    let plane = nx * ny;
    let mut out = Volume::filled(nx, ny, nz_out, 0f32);
    for zo in 0..nz_out {
        let zin = (zo as f64 / ratio).clamp(0.0, (nz - 1) as f64);
        let i0 = zin.floor() as usize;
        let t = zin - i0 as f64;
        let i1 = (i0 + 1).min(nz - 1);
        let src0 = &vol.data.data()[i0 * plane..(i0 + 1) * plane];
        let dst = &mut out.data_mut()[zo * plane..(zo + 1) * plane];
        if t == 0.0 {
            // Exact pass-through keeps identity and integer decimation
            // bit-exact.
            dst.copy_from_slice(src0);
        } else {
            let src1 = &vol.data.data()[i1 * plane..(i1 + 1) * plane];
            let (a, b) = ((1.0 - t) as f32, t as f32);
            for i in 0..plane {
                dst[i] = a * src0[i] + b * src1[i];
            }
        }
    }

    let hi = (nz_out as f32).next_down();
    let scale = |img: &ScalarImage| -> ScalarImage {
        Image::from_vec(
            img.nx(),
            img.ny(),
            img.data()
                .iter()
                .map(|&v| ((v as f64 * ratio) as f32).clamp(0.0, hi))
                .collect(),
        )
    };
    let scaled = SurfaceSet {
        ilm: scale(&surfaces.ilm),
        ipl: scale(&surfaces.ipl),
        opl: scale(&surfaces.opl),
        rpe: scale(&surfaces.rpe),
        ipl_minus: surfaces.ipl_minus.as_ref().map(&scale),
        ipl_plus: surfaces.ipl_plus.as_ref().map(&scale),
    };
    Ok((
        OctaVolume {
            data: out,
            res_plane_um: vol.res_plane_um,
            res_axial_um: vol.res_plane_um,
        },
        scaled,
    ))
}

// ===========================================================================
// Surface regularization
// ===========================================================================

/// Median of a scratch buffer; reorders it. Even counts (clipped border
/// windows) average the two middle elements.
fn median_in_place(buf: &mut [f32]) -> f32 {
    let n = buf.len();
    debug_assert!(n > 0);
    let (lo, mid, _) = buf.select_nth_unstable_by(n / 2, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        *mid
    } else {
        let lower = lo.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        (lower + *mid) * 0.5
    }
}

/// Natural cubic spline with linear extrapolation beyond the end knots.
/// Reproduces affine data exactly, which is what keeps regularization
/// unbiased on planar surfaces.
struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    m: Vec<f64>,
}

impl CubicSpline {
    /// `t` strictly increasing, len >= 2.
    fn natural(t: Vec<f64>, y: Vec<f64>) -> CubicSpline {
        let n = t.len();
        debug_assert!(n >= 2 && y.len() == n);
        let mut m = vec![0f64; n];
        if n > 2 {
            // Thomas algorithm on the natural-spline tridiagonal system.
            let k = n - 2;
            let mut diag = vec![0f64; k];
            let mut upper = vec![0f64; k];
            let mut rhs = vec![0f64; k];
            for i in 0..k {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        CubicSpline { t, y, m }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x <= self.t[0] {
            let h = self.t[1] - self.t[0];
            let slope = (self.y[1] - self.y[0]) / h - h * self.m[1] / 6.0;
            return self.y[0] + slope * (x - self.t[0]);
        }
        if x >= self.t[n - 1] {
            let h = self.t[n - 1] - self.t[n - 2];
            let slope = (self.y[n - 1] - self.y[n - 2]) / h + h * self.m[n - 2] / 6.0;
            return self.y[n - 1] + slope * (x - self.t[n - 1]);
        }
        let i = match self.t.partition_point(|&k| k <= x) {
            0 => 0,
            p => p - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Detects surface outliers against a moving-window median and replaces
/// them by cubic-spline interpolation through the non-outlier samples.
///
/// A sample is an outlier when its deviation from the window median exceeds
/// max(outlier_sigma_mult * 1.4826 * window MAD, outlier_floor_voxels); the
/// 1.4826 factor converts MAD to a Gaussian sigma estimate. Replacement
/// averages a row spline and a column spline through the surviving samples.
/// Outlier-free surfaces are returned unchanged.
pub fn regularize_surface(surface: &ScalarImage, cfg: &PipelineConfig) -> Result<ScalarImage> {
    let w = cfg.median_window;
    let half = w / 2;
    let (nx, ny) = (surface.nx(), surface.ny());
    if nx < w || ny < w {
        return Err(Error::InvalidData(format!(
            "surface {nx}x{ny} smaller than the {w}x{w} median window"
        )));
    }

    let mut outlier = vec![false; nx * ny];
    let mut n_outliers = 0usize;
    let mut buf: Vec<f32> = Vec::with_capacity(w * w);
    for y in 0..ny {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half).min(ny - 1);
        for x in 0..nx {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half).min(nx - 1);
            buf.clear();
            for wy in y0..=y1 {
                for wx in x0..=x1 {
                    buf.push(surface.at(wx, wy));
                }
            }
            let med = median_in_place(&mut buf);
            for v in buf.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median_in_place(&mut buf);
            let thr = (cfg.outlier_sigma_mult * 1.4826 * mad as f64).max(cfg.outlier_floor_voxels);
            if ((surface.at(x, y) - med).abs() as f64) > thr {
                outlier[x + nx * y] = true;
                n_outliers += 1;
            }
        }
    }

    if n_outliers == 0 {
        return Ok(surface.clone());
    }
    if n_outliers == nx * ny {
        return Err(Error::Degenerate(
            "surface regularization: every sample flagged as an outlier".into(),
        ));
    }

    // Per-row and per-column spline estimates at the flagged sites.
    let nan = f32::NAN;
    let mut row_est = vec![nan; nx * ny];
    let mut col_est = vec![nan; nx * ny];
    let mut knots_t = Vec::with_capacity(nx.max(ny));
    let mut knots_y = Vec::with_capacity(nx.max(ny));
    for y in 0..ny {
        if !(0..nx).any(|x| outlier[x + nx * y]) {
            continue;
        }
        knots_t.clear();
        knots_y.clear();
        for x in 0..nx {
            if !outlier[x + nx * y] {
                knots_t.push(x as f64);
                knots_y.push(surface.at(x, y) as f64);
            }
        }
        if knots_t.len() < 2 {
            continue;
        }
        let sp = CubicSpline::natural(knots_t.clone(), knots_y.clone());
        for x in 0..nx {
            if outlier[x + nx * y] {
                row_est[x + nx * y] = sp.eval(x as f64) as f32;
            }
        }
    }
    for x in 0..nx {
        if !(0..ny).any(|y| outlier[x + nx * y]) {
            continue;
        }
        knots_t.clear();
        knots_y.clear();
        for y in 0..ny {
            if !outlier[x + nx * y] {
                knots_t.push(y as f64);
                knots_y.push(surface.at(x, y) as f64);
            }
        }
        if knots_t.len() < 2 {
            continue;
        }
        let sp = CubicSpline::natural(knots_t.clone(), knots_y.clone());
        for y in 0..ny {
            if outlier[x + nx * y] {
                col_est[x + nx * y] = sp.eval(y as f64) as f32;
            }
        }
    }

    // Fallback for sites whose row and column both lack enough survivors.
    let mut survivors: Vec<f32> = surface
        .data()
        .iter()
        .zip(&outlier)
        .filter(|(_, &o)| !o)
        .map(|(&v, _)| v)
        .collect();
    let global = median_in_place(&mut survivors);

    let mut out = surface.clone();
    for i in 0..nx * ny {
        if !outlier[i] {
            continue;
        }
        let v = match (row_est[i].is_nan(), col_est[i].is_nan()) {
            (false, false) => 0.5 * (row_est[i] + col_est[i]),
            (false, true) => row_est[i],
            (true, false) => col_est[i],
            (true, true) => global,
        };
        out.data_mut()[i] = v;
    }
    Ok(out)
}

/// Regularizes the four segmented surfaces in place.
pub fn regularize_surfaces(surfaces: &SurfaceSet, cfg: &PipelineConfig) -> Result<SurfaceSet> {
    Ok(SurfaceSet::new(
        regularize_surface(&surfaces.ilm, cfg)?,
        regularize_surface(&surfaces.ipl, cfg)?,
        regularize_surface(&surfaces.opl, cfg)?,
        regularize_surface(&surfaces.rpe, cfg)?,
    ))
}

// ===========================================================================
// Flattening
// ===========================================================================

/// Shifts every (x, y) column by the integer amount that moves its RPE
/// position to the bottom sample (z = nz - 1), with zero fill; surface maps
/// carry the fractional residual. Content pushed past the bottom (below the
/// RPE) or above the top is discarded.
pub fn flatten_on_rpe(vol: &mut Volume<f32>, surfaces: &mut SurfaceSet) -> Result<()> {
    let (nx, ny, nz) = vol.dims();
    if surfaces.rpe.nx() != nx || surfaces.rpe.ny() != ny {
        return Err(Error::DimMismatch(format!(
            "surfaces are {}x{}, volume plane is {nx}x{ny}",
            surfaces.rpe.nx(),
            surfaces.rpe.ny()
        )));
    }
    for (i, &r) in surfaces.rpe.data().iter().enumerate() {
        if !(r >= 0.0 && r < nz as f32) {
            return Err(Error::InvalidData(format!(
                "rpe value {r} at linear index {i} outside [0, {nz})"
            )));
        }
    }

    let mut shifts = vec![0i64; nx];
    for y in 0..ny {
        for (x, s) in shifts.iter_mut().enumerate() {
            *s = (nz as i64 - 1) - surfaces.rpe.at(x, y).round() as i64;
        }
        // In-place column shift: descending z for downward shifts reads
        // samples not yet overwritten; ascending handles the rare upward
        // case (RPE within half a voxel of the bottom rounding past it).
        let data = vol.data_mut();
        for zo in (0..nz).rev() {
            let base = nx * (y + ny * zo);
            for x in 0..nx {
                let s = shifts[x];
                if s <= 0 {
                    continue;
                }
                let zi = zo as i64 - s;
                data[base + x] = if zi >= 0 {
                    data[x + nx * (y + ny * zi as usize)]
                } else {
                    0.0
                };
            }
        }
        for zo in 0..nz {
            let base = nx * (y + ny * zo);
            for x in 0..nx {
                let s = shifts[x];
                if s >= 0 {
                    continue;
                }
                let zi = zo as i64 - s;
                data[base + x] = if zi < nz as i64 {
                    data[x + nx * (y + ny * zi as usize)]
                } else {
                    0.0
                };
            }
        }
        let apply = |img: &mut ScalarImage| {
            for (x, &s) in shifts.iter().enumerate() {
                let v = img.at(x, y) + s as f32;
                img.set(x, y, v);
            }
        };
        apply(&mut surfaces.ilm);
        apply(&mut surfaces.ipl);
        apply(&mut surfaces.opl);
        apply(&mut surfaces.rpe);
        if let Some(s) = surfaces.ipl_minus.as_mut() {
            apply(s);
        }
        if let Some(s) = surfaces.ipl_plus.as_mut() {
            apply(s);
        }
    }
    Ok(())
}

// ===========================================================================
// 3D Gaussian smoothing
// ===========================================================================

/// Normalized sampled Gaussian, truncated at radius ceil(4 sigma).
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    assert!(sigma > 0.0);
    let r = (4.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter().map(|v| (v / sum) as f32).collect()
}

/// Separable 2D Gaussian smoothing with replicate borders.
pub fn gaussian_smooth_2d(img: &ScalarImage, sigma: f64) -> ScalarImage {
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() / 2;
    let (nx, ny) = (img.nx(), img.ny());

    let mut a = vec![0f32; img.len()];
    let mut pad = vec![0f32; nx + 2 * r];
    for y in 0..ny {
        let src = &img.data()[y * nx..(y + 1) * nx];
        pad[r..r + nx].copy_from_slice(src);
        pad[..r].fill(src[0]);
        pad[r + nx..].fill(src[nx - 1]);
        let dst = &mut a[y * nx..(y + 1) * nx];
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * pad[i + k];
            }
            *d = acc;
        }
    }
    let mut b = vec![0f32; img.len()];
    for yo in 0..ny {
        let dst = &mut b[yo * nx..(yo + 1) * nx];
        dst.fill(0.0);
        for (k, &w) in kernel.iter().enumerate() {
            let ys = (yo + k).saturating_sub(r).min(ny - 1);
            let src = &a[ys * nx..(ys + 1) * nx];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Image::from_vec(nx, ny, b)
}

/// Separable 3D Gaussian smoothing with replicate borders.
pub fn gaussian_smooth_3d(vol: &Volume<f32>, sigma: f64) -> Volume<f32> {
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() / 2;
    let (nx, ny, nz) = vol.dims();
    let plane = nx * ny;

    // x pass: contiguous rows against a replicate-padded scratch row.
    let mut a = vec![0f32; vol.len()];
    let mut pad = vec![0f32; nx + 2 * r];
    for row in 0..ny * nz {
        let src = &vol.data()[row * nx..(row + 1) * nx];
        pad[r..r + nx].copy_from_slice(src);
        pad[..r].fill(src[0]);
        pad[r + nx..].fill(src[nx - 1]);
        let dst = &mut a[row * nx..(row + 1) * nx];
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (k, &w) in kernel.iter().enumerate() {
                acc += w * pad[i + k];
            }
            *d = acc;
        }
    }

    // y pass: per z-slice accumulation of weighted clamped rows.
    let mut b = vec![0f32; vol.len()];
    for z in 0..nz {
        let slice_in = &a[z * plane..(z + 1) * plane];
        let slice_out = &mut b[z * plane..(z + 1) * plane];
        for yo in 0..ny {
            let dst = &mut slice_out[yo * nx..(yo + 1) * nx];
            dst.fill(0.0);
            for (k, &w) in kernel.iter().enumerate() {
                let ys = (yo + k).saturating_sub(r).min(ny - 1);
                let src = &slice_in[ys * nx..(ys + 1) * nx];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    // z pass: accumulation of weighted clamped planes, reusing buffer a.
    for zo in 0..nz {
        let dst = &mut a[zo * plane..(zo + 1) * plane];
        dst.fill(0.0);
        for (k, &w) in kernel.iter().enumerate() {
            let zs = (zo + k).saturating_sub(r).min(nz - 1);
            let src = &b[zs * plane..(zs + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Volume::from_vec(nx, ny, nz, a)
}

// ===========================================================================
// Plexus slab bounds
// ===========================================================================

/// Fills `ipl_minus`/`ipl_plus` from the IPL surface and the configured
/// micrometer offsets (negative = anterior, toward smaller z), clamped into
/// [ilm, opl] per column. Voxel units are the isotropic in-plane pitch.
pub fn derive_plexus_bounds(
    surfaces: &mut SurfaceSet,
    res_plane_um: f64,
    cfg: &PipelineConfig,
) -> Result<()> {
    if !(res_plane_um > 0.0) {
        return Err(Error::InvalidData(format!(
            "non-positive in-plane pitch {res_plane_um}"
        )));
    }
    let (nx, ny) = (surfaces.ipl.nx(), surfaces.ipl.ny());
    let off_minus = cfg.offset_ipl_minus_um / res_plane_um;
    let off_plus = cfg.offset_ipl_plus_um / res_plane_um;
    let mut minus = Image::filled(nx, ny, 0f32);
    let mut plus = Image::filled(nx, ny, 0f32);
    for y in 0..ny {
        for x in 0..nx {
            let ilm = surfaces.ilm.at(x, y) as f64;
            let opl = surfaces.opl.at(x, y) as f64;
            if ilm > opl {
                return Err(Error::InvalidData(format!(
                    "layer ordering violated at ({x},{y}): ilm {ilm} > opl {opl}"
                )));
            }
            let ipl = surfaces.ipl.at(x, y) as f64;
            minus.set(x, y, (ipl + off_minus).clamp(ilm, opl) as f32);
            plus.set(x, y, (ipl + off_plus).clamp(ilm, opl) as f32);
        }
    }
    surfaces.ipl_minus = Some(minus);
    surfaces.ipl_plus = Some(plus);
    Ok(())
}

/// The (upper, lower) axial bounds of one plexus slab. Requires
/// [`derive_plexus_bounds`] to have run.
pub fn slab_bounds(surfaces: &SurfaceSet, plexus: Plexus) -> Result<(&ScalarImage, &ScalarImage)> {
    let minus = surfaces
        .ipl_minus
        .as_ref()
        .ok_or_else(|| Error::InvalidData("plexus bounds not derived".into()))?;
    let plus = surfaces
        .ipl_plus
        .as_ref()
        .ok_or_else(|| Error::InvalidData("plexus bounds not derived".into()))?;
    Ok(match plexus {
        Plexus::Superficial => (&surfaces.ilm, minus),
        Plexus::Intermediate => (minus, plus),
        Plexus::Deep => (plus, &surfaces.opl),
    })
}

// ===========================================================================
// Slab max-projection
// ===========================================================================

/// Per-column maximum intensity over the closed axial interval
/// [upper(x,y), lower(x,y)]; columns whose interval holds no integer sample
/// project to 0.
pub fn max_projection(
    vol: &Volume<f32>,
    upper: &ScalarImage,
    lower: &ScalarImage,
) -> ScalarImage {
    let (nx, ny, nz) = vol.dims();
    debug_assert!(upper.nx() == nx && upper.ny() == ny);
    debug_assert!(lower.nx() == nx && lower.ny() == ny);
    let mut z0 = vec![0i64; nx * ny];
    let mut z1 = vec![-1i64; nx * ny];
    for i in 0..nx * ny {
        z0[i] = (upper.data()[i].ceil() as i64).max(0);
        z1[i] = (lower.data()[i].floor() as i64).min(nz as i64 - 1);
    }
    let mut out = Image::filled(nx, ny, 0f32);
    let plane = nx * ny;
    for z in 0..nz as i64 {
        let slice = &vol.data()[z as usize * plane..(z as usize + 1) * plane];
        let acc = out.data_mut();
        for i in 0..plane {
            if z >= z0[i] && z <= z1[i] && slice[i] > acc[i] {
                acc[i] = slice[i];
            }
        }
    }
    out
}
