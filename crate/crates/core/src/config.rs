//! Pipeline configuration.
//!
//! Every tunable the pipeline uses lives here with its default. A config
//! file (TOML, flat keys) may override any subset of fields; unknown keys
//! are rejected so typos do not silently fall back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sigma (voxels) of the isotropic 3D Gaussian applied to the volume.
    pub sigma_volume: f64,
    /// Side of the square moving window used for surface regularization.
    pub median_window: usize,
    /// Surface outliers are flagged where the deviation from the windowed
    /// median exceeds `outlier_sigma_mult` robust sigmas (1.4826 * MAD).
    pub outlier_sigma_mult: f64,
    /// Lower bound (voxels) on the outlier threshold so that flat windows
    /// with near-zero MAD do not flag everything.
    pub outlier_floor_voxels: f64,
    /// Inclusive vesselness scale range (pixels).
    pub frangi_scale_range: [f64; 2],
    /// Step between vesselness scales.
    pub frangi_scale_ratio: f64,
    /// Blobness sensitivity (the eigenvalue-ratio term).
    pub frangi_beta_one: f64,
    /// Structureness sensitivity (the eigenvalue-magnitude term).
    pub frangi_beta_two: f64,
    /// Histogram bins for automatic thresholding.
    pub otsu_bins: usize,
    /// A constant image cannot be thresholded. `true` maps it to an empty
    /// mask, `false` makes it an error.
    pub otsu_constant_empty: bool,
    /// Chamfer propagation weights: `[straight, diagonal]`.
    pub chamfer_weights: [f64; 2],
    /// Sigma (pixels) of the Gaussian applied to the distance field before
    /// vessel radii are read at skeleton points.
    pub sigma_radius: f64,
    /// Connected components smaller than this are removed before the
    /// avascular-zone morphology (pixels in 2D, voxels in 3D).
    pub min_component_px: usize,
    /// Radius (pixels/voxels) of the disk/ball used by the avascular-zone
    /// dilation steps.
    pub faz_dilation_radius: f64,
    /// Offset (µm) from the IPL surface to the upper slab boundary of the
    /// intermediate plexus; negative means above the IPL.
    pub offset_ipl_minus_um: f64,
    /// Offset (µm) from the IPL surface to the lower slab boundary of the
    /// intermediate plexus.
    pub offset_ipl_plus_um: f64,
    /// Native axial sampling pitch (µm) the scanner acquires at.
    pub axial_native_um: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sigma_volume: 3.0,
            median_window: 15,
            outlier_sigma_mult: 3.0,
            outlier_floor_voxels: 2.0,
            frangi_scale_range: [2.0, 3.0],
            frangi_scale_ratio: 1.0,
            frangi_beta_one: 0.6,
            frangi_beta_two: 22.0,
            otsu_bins: 256,
            otsu_constant_empty: false,
            chamfer_weights: [1.0, std::f64::consts::SQRT_2],
            sigma_radius: 1.0,
            min_component_px: 5,
            faz_dilation_radius: 15.0,
            offset_ipl_minus_um: -17.0,
            offset_ipl_plus_um: 22.0,
            axial_native_um: 3.87,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }
        positive("sigma_volume", self.sigma_volume)?;
        positive("sigma_radius", self.sigma_radius)?;
        positive("frangi_scale_ratio", self.frangi_scale_ratio)?;
        positive("frangi_beta_one", self.frangi_beta_one)?;
        positive("frangi_beta_two", self.frangi_beta_two)?;
        positive("axial_native_um", self.axial_native_um)?;
        positive("faz_dilation_radius", self.faz_dilation_radius)?;
        positive("chamfer straight weight", self.chamfer_weights[0])?;
        positive("chamfer diagonal weight", self.chamfer_weights[1])?;
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return Err(Error::Config(format!(
                "median_window must be odd and positive, got {}",
                self.median_window
            )));
        }
        if self.otsu_bins < 2 {
            return Err(Error::Config("otsu_bins must be at least 2".into()));
        }
        let [lo, hi] = self.frangi_scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "frangi_scale_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.offset_ipl_minus_um > self.offset_ipl_plus_um {
            return Err(Error::Config(
                "offset_ipl_minus_um must not exceed offset_ipl_plus_um".into(),
            ));
        }
        Ok(())
    }

    /// Vesselness scales: `scale_range[0]`, stepping by `scale_ratio`, up
    /// to and including `scale_range[1]` (within fp slack).
    pub fn frangi_scales(&self) -> Vec<f64> {
        let [lo, hi] = self.frangi_scale_range;
        let mut scales = Vec::new();
        let mut s = lo;
        while s <= hi + 1e-9 {
            scales.push(s);
            s += self.frangi_scale_ratio;
        }
        scales
    }
}
