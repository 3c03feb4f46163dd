//! Python bindings for the avascular-zone pipeline: phantom generation,
//! scan measurement and the resulting metrics, exposed as the extension
//! module `faz3d_py`.
//!
//! Build with `cargo build -p faz3d-py --release`; the cdylib in
//! `target/release/` loads directly via `importlib` (see
//! `python/smoke_test.py`) or can be packaged by any PEP 517 frontend.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use faz3d_core::{
    generate_phantom as core_generate, load_scan, measure as core_measure, save_scan, Error,
    GroupLabel, PhantomSpec, PipelineConfig,
};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_config(config_toml: Option<&str>) -> PyResult<PipelineConfig> {
    match config_toml {
        Some(text) => PipelineConfig::from_toml_str(text).map_err(to_py_err),
        None => Ok(PipelineConfig::default()),
    }
}

fn parse_group(group: Option<&str>) -> PyResult<Option<GroupLabel>> {
    group
        .map(|g| GroupLabel::from_str(g).map_err(to_py_err))
        .transpose()
}

/// Per-scan metrics: per-plexus 2D avascular areas and the 3D volume.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct Measurement {
    scan_id: String,
    group_label: Option<String>,
    res_plane_um: f64,
    area_svc_mm2: f64,
    area_icp_mm2: f64,
    area_dcp_mm2: f64,
    volume_mm3: f64,
    elapsed_seconds: f64,
}

#[pymethods]
impl Measurement {
    fn __repr__(&self) -> String {
        format!(
            "Measurement(scan_id={:?}, group_label={:?}, area_svc_mm2={:.6}, \
             area_icp_mm2={:.6}, area_dcp_mm2={:.6}, volume_mm3={:.6})",
            self.scan_id, self.group_label, self.area_svc_mm2, self.area_icp_mm2,
            self.area_dcp_mm2, self.volume_mm3
        )
    }
}

impl Measurement {
    fn from_core(m: faz3d_core::FazMeasurement) -> Measurement {
        Measurement {
            scan_id: m.scan_id,
            group_label: m.group_label.map(|g| g.as_str().to_string()),
            res_plane_um: m.res_plane_um,
            area_svc_mm2: m.area_svc_mm2,
            area_icp_mm2: m.area_icp_mm2,
            area_dcp_mm2: m.area_dcp_mm2,
            volume_mm3: m.volume_mm3,
            elapsed_seconds: m.elapsed_seconds,
        }
    }
}

/// Closed-form truth of a generated phantom: per-plexus void areas
/// (superficial, intermediate, deep; None for non-ring networks) and the
/// avascular column volume (None unless every plexus carries rings).
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PhantomTruth {
    faz_area_mm2: Vec<Option<f64>>,
    faz_volume_mm3: Option<f64>,
}

#[pymethods]
impl PhantomTruth {
    fn __repr__(&self) -> String {
        let py_opt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "None".to_string(),
        };
        let areas: Vec<String> = self.faz_area_mm2.iter().map(py_opt).collect();
        format!(
            "PhantomTruth(faz_area_mm2=[{}], faz_volume_mm3={})",
            areas.join(", "),
            py_opt(&self.faz_volume_mm3)
        )
    }
}

/// Generates a synthetic scan from a TOML phantom spec and writes it as a
/// scan container directory. `seed` overrides the spec's seed when given.
/// Returns the analytic ground truth.
#[pyfunction]
#[pyo3(signature = (spec_toml, out_dir, seed=None))]
fn generate_phantom(spec_toml: &str, out_dir: PathBuf, seed: Option<u64>) -> PyResult<PhantomTruth> {
    let mut spec = PhantomSpec::from_toml_str(spec_toml).map_err(to_py_err)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (scan, truth) = core_generate(&spec).map_err(to_py_err)?;
    save_scan(&out_dir, &scan).map_err(to_py_err)?;
    Ok(PhantomTruth {
        faz_area_mm2: truth.faz_area_mm2.to_vec(),
        faz_volume_mm3: truth.faz_volume_mm3,
    })
}

/// Measures one scan container directory. `scan_id` defaults to the
/// directory name; `group` is one of "healthy", "diabetes_no_dr",
/// "diabetes_dr"; `config_toml` overrides pipeline parameters.
#[pyfunction]
#[pyo3(signature = (scan_dir, scan_id=None, group=None, config_toml=None))]
fn measure_scan(
    scan_dir: PathBuf,
    scan_id: Option<String>,
    group: Option<&str>,
    config_toml: Option<&str>,
) -> PyResult<Measurement> {
    let cfg = parse_config(config_toml)?;
    let group = parse_group(group)?;
    let id = match scan_id {
        Some(id) => id,
        None => scan_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scan".to_string()),
    };
    let scan = load_scan(&scan_dir).map_err(to_py_err)?;
    let out = core_measure(&scan, &id, group, &cfg).map_err(to_py_err)?;
    Ok(Measurement::from_core(out.measurement))
}

/// Generates a phantom in memory and measures it in one call, returning
/// (measurement, truth). Bypasses the container round trip.
#[pyfunction]
#[pyo3(signature = (spec_toml, seed=None, config_toml=None))]
fn measure_phantom(
    spec_toml: &str,
    seed: Option<u64>,
    config_toml: Option<&str>,
) -> PyResult<(Measurement, PhantomTruth)> {
    let cfg = parse_config(config_toml)?;
    let mut spec = PhantomSpec::from_toml_str(spec_toml).map_err(to_py_err)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (scan, truth) = core_generate(&spec).map_err(to_py_err)?;
    let out = core_measure(&scan, "phantom", None, &cfg).map_err(to_py_err)?;
    Ok((
        Measurement::from_core(out.measurement),
        PhantomTruth {
            faz_area_mm2: truth.faz_area_mm2.to_vec(),
            faz_volume_mm3: truth.faz_volume_mm3,
        },
    ))
}

#[pymodule]
fn faz3d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Measurement>()?;
    m.add_class::<PhantomTruth>()?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(measure_scan, m)?)?;
    m.add_function(wrap_pyfunction!(measure_phantom, m)?)?;
    Ok(())
}
