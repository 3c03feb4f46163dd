//! Batch front-end over the measurement pipeline: manifest parsing, a
//! parallel-over-scans batch runner with CSV/dump/overlay outputs, and the
//! descriptive reporting used by the `summarize` and `bench` subcommands.
//!
//! Scans are processed in parallel but every per-scan pipeline is pure, so
//! the written CSV bytes depend only on the manifest, the config and the
//! input scans, never on the worker count. Rows come out in manifest order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use faz3d_core::volume_io::write_measurements;
use faz3d_core::{
    load_scan, measure, Error, FazMeasurement, GroupLabel, MeasureOutput, PipelineConfig, Plexus,
    Result,
};

// ===========================================================================
// Manifest
// ===========================================================================

/// One scan to process: container path, unique id, optional group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scan_path: PathBuf,
    pub scan_id: String,
    pub group_label: Option<GroupLabel>,
}

/// Whether per-scan wall-clock timing is recorded in outputs. `None` zeroes
/// the elapsed column and suppresses timing files so that re-runs of an
/// identical manifest produce byte-identical outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimingMode {
    Wall,
    None,
}

/// A full batch run description: the scan list plus output and behavior
/// settings. `scan_id`s are unique by construction.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dump_stages: bool,
    pub overlays: bool,
    /// Worker threads for the scan pool; 0 picks the rayon default.
    pub threads: usize,
    pub timing: TimingMode,
}

impl RunManifest {
    pub fn new(entries: Vec<ManifestEntry>, out_dir: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.scan_id.as_str()) {
                return Err(Error::Config(format!(
                    "manifest: duplicate scan_id {:?}",
                    e.scan_id
                )));
            }
        }
        Ok(RunManifest {
            entries,
            config_path: None,
            out_dir,
            dump_stages: false,
            overlays: false,
            threads: 0,
            timing: TimingMode::Wall,
        })
    }

    /// Parses a manifest CSV file. Relative scan paths are resolved against
    /// the manifest file's directory.
    pub fn entries_from_path(path: &Path) -> Result<Vec<ManifestEntry>> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::entries_from_str(&text, base)
    }

    /// Parses manifest CSV text: header `scan_path,scan_id,group_label`,
    /// one scan per line, empty group column for unlabeled scans.
    pub fn entries_from_str(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("scan_path,scan_id,group_label") => {}
            other => {
                return Err(Error::Config(format!(
                    "manifest: expected header scan_path,scan_id,group_label, found {other:?}"
                )))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "manifest line {}: expected 3 fields, found {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let (path, id, group) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if path.is_empty() || id.is_empty() {
                return Err(Error::Config(format!(
                    "manifest line {}: empty scan_path or scan_id",
                    lineno + 2
                )));
            }
            let group_label = if group.is_empty() {
                None
            } else {
                Some(group.parse::<GroupLabel>()?)
            };
            let raw = PathBuf::from(path);
            let scan_path = if raw.is_absolute() { raw } else { base_dir.join(raw) };
            entries.push(ManifestEntry {
                scan_path,
                scan_id: id.to_string(),
                group_label,
            });
        }
        Ok(entries)
    }
}

// ===========================================================================
// Batch runner
// ===========================================================================

/// A scan that could not be measured; the batch continues past it.
#[derive(Clone, Debug)]
pub struct ScanFailure {
    pub scan_id: String,
    pub message: String,
}

/// Outcome of a batch: successful rows and failures, both in manifest
/// order, plus per-scan stage timings when wall timing is on.
#[derive(Debug, Default)]
pub struct BatchResult {
    pub measurements: Vec<FazMeasurement>,
    pub failures: Vec<ScanFailure>,
    pub stage_reports: Vec<(String, Vec<(&'static str, f64)>)>,
}

fn process_one(
    entry: &ManifestEntry,
    cfg: &PipelineConfig,
    manifest: &RunManifest,
) -> std::result::Result<(FazMeasurement, Vec<(&'static str, f64)>), ScanFailure> {
    let fail = |message: String| ScanFailure {
        scan_id: entry.scan_id.clone(),
        message,
    };
    let scan = load_scan(&entry.scan_path)
        .map_err(|e| fail(format!("{}: {e}", entry.scan_path.display())))?;
    let mut out = measure(&scan, &entry.scan_id, entry.group_label, cfg)
        .map_err(|e| fail(e.to_string()))?;
    if manifest.timing == TimingMode::None {
        out.measurement.elapsed_seconds = 0.0;
    }
    if manifest.dump_stages || manifest.overlays {
        let scan_dir = manifest.out_dir.join(&entry.scan_id);
        fs::create_dir_all(&scan_dir).map_err(|e| fail(format!("output dir: {e}")))?;
        if manifest.dump_stages {
            dump_stages(&scan_dir, &out, manifest.timing).map_err(|e| fail(e.to_string()))?;
        }
        if manifest.overlays {
            write_overlays(&scan_dir, &out).map_err(|e| fail(e.to_string()))?;
        }
    }
    let stages = std::mem::take(&mut out.stage_seconds);
    Ok((out.measurement, stages))
}

/// Runs every scan in the manifest, writes `measurements.csv` (and
/// `failures.csv` when scans failed) under the output directory, and
/// returns all results in manifest order. Individual scan failures never
/// abort the batch; an error is returned only when nothing succeeded.
pub fn run_batch(manifest: &RunManifest, cfg: &PipelineConfig) -> Result<BatchResult> {
    use rayon::prelude::*;

    fs::create_dir_all(&manifest.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| process_one(entry, cfg, manifest))
            .collect()
    });

    let mut result = BatchResult::default();
    for outcome in outcomes {
        match outcome {
            Ok((m, stages)) => {
                result.stage_reports.push((m.scan_id.clone(), stages));
                result.measurements.push(m);
            }
            Err(f) => result.failures.push(f),
        }
    }

    let mut csv = Vec::new();
    write_measurements(&mut csv, &result.measurements)?;
    fs::write(manifest.out_dir.join("measurements.csv"), csv)?;
    if !result.failures.is_empty() {
        let mut text = String::from("scan_id,error\n");
        for f in &result.failures {
            let clean: String = f
                .message
                .chars()
                .map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c })
                .collect();
            writeln!(text, "{},{}", f.scan_id, clean).unwrap();
        }
        fs::write(manifest.out_dir.join("failures.csv"), text)?;
    }
    if !manifest.entries.is_empty() && result.measurements.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} scans failed; see failures.csv",
            manifest.entries.len()
        )));
    }
    Ok(result)
}

// ===========================================================================
// Stage dumps and overlays
// ===========================================================================

fn plexus_key(p: Plexus) -> &'static str {
    match p {
        Plexus::Superficial => "superficial",
        Plexus::Intermediate => "intermediate",
        Plexus::Deep => "deep",
    }
}

fn write_bool_raw(path: &Path, data: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().map(|&b| b as u8).collect();
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes per-plexus vessel masks and skeleton point lists, the merged 3D
/// network mask, the avascular-zone masks, and (with wall timing) a stage
/// timing file. Raw masks are one byte per element, x-fastest.
fn dump_stages(dir: &Path, out: &MeasureOutput, timing: TimingMode) -> Result<()> {
    for (i, plexus) in Plexus::ALL.into_iter().enumerate() {
        let key = plexus_key(plexus);
        let seg = &out.segmentations[i];
        write_bool_raw(&dir.join(format!("mask_{key}.raw")), seg.mask.data())?;
        write_bool_raw(&dir.join(format!("faz2d_{key}.raw")), out.faz2d[i].mask.data())?;
        let mut csv = String::from("x,y,z,radius\n");
        for p in &out.skeletons3d[i].points {
            writeln!(csv, "{},{},{},{}", p.x, p.y, p.z, p.radius).unwrap();
        }
        fs::write(dir.join(format!("skeleton_{key}.csv")), csv)?;
    }
    write_bool_raw(&dir.join("network.raw"), out.network.data())?;

    let mask = &out.faz3d.mask;
    let mut cloud = String::from("x,y,z\n");
    for z in 0..mask.nz() {
        for y in 0..mask.ny() {
            for x in 0..mask.nx() {
                if mask.at(x, y, z) {
                    writeln!(cloud, "{x},{y},{z}").unwrap();
                }
            }
        }
    }
    fs::write(dir.join("faz3d_points.csv"), cloud)?;

    if timing == TimingMode::Wall {
        let mut text = String::from("stage,seconds\n");
        for (name, secs) in &out.stage_seconds {
            writeln!(text, "{name},{secs:.6}").unwrap();
        }
        fs::write(dir.join("timing.csv"), text)?;
    }
    Ok(())
}

/// Renders the vessel-enhanced image in grayscale with the 2D avascular
/// zone's contour in red, one PNG per plexus.
fn write_overlays(dir: &Path, out: &MeasureOutput) -> Result<()> {
    for (i, plexus) in Plexus::ALL.into_iter().enumerate() {
        let seg = &out.segmentations[i];
        let (nx, ny) = (seg.enhanced.nx(), seg.enhanced.ny());
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in seg.enhanced.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        let faz = &out.faz2d[i].mask;
        let contour = |x: usize, y: usize| -> bool {
            if !faz.at(x, y) {
                return false;
            }
            x == 0
                || y == 0
                || x + 1 == nx
                || y + 1 == ny
                || !faz.at(x - 1, y)
                || !faz.at(x + 1, y)
                || !faz.at(x, y - 1)
                || !faz.at(x, y + 1)
        };
        let img = image::RgbImage::from_fn(nx as u32, ny as u32, |px, py| {
            let (x, y) = (px as usize, py as usize);
            if contour(x, y) {
                image::Rgb([255, 0, 0])
            } else {
                let g = ((seg.enhanced.at(x, y) - lo) / span * 255.0).round() as u8;
                image::Rgb([g, g, g])
            }
        });
        img.save(dir.join(format!("overlay_{}.png", plexus_key(plexus))))
            .map_err(|e| Error::InvalidData(format!("overlay png: {e}")))?;
    }
    Ok(())
}

// ===========================================================================
// Descriptive summaries
// ===========================================================================

/// Mean, sample SD, median and quartiles of one metric within one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Descriptive statistics for one group across the four reported metrics.
#[derive(Clone, Debug)]
pub struct GroupSummary {
    /// `None` is the bucket for scans without a manifest label.
    pub group: Option<GroupLabel>,
    pub n: usize,
    pub area_svc: MetricStats,
    pub area_icp: MetricStats,
    pub area_dcp: MetricStats,
    pub volume: MetricStats,
}

fn metric_stats(values: &mut [f64]) -> MetricStats {
    let n = values.len();
    assert!(n > 0);
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    // Linearly interpolated quantiles at rank (n-1)p, the common default in
    // statistics packages.
    let quantile = |vals: &[f64], p: f64| -> f64 {
        let rank = (vals.len() - 1) as f64 * p;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let t = rank - lo as f64;
        vals[lo] * (1.0 - t) + vals[hi] * t
    };
    MetricStats {
        mean,
        sd,
        median: quantile(values, 0.5),
        q1: quantile(values, 0.25),
        q3: quantile(values, 0.75),
    }
}

/// Groups measurements by label and computes descriptive statistics for
/// each of the four metrics. Groups come back in fixed clinical order
/// (healthy, diabetes_no_dr, diabetes_dr, then unlabeled); empty groups
/// are omitted. Errors on empty input.
pub fn summarize_groups(rows: &[FazMeasurement]) -> Result<Vec<GroupSummary>> {
    if rows.is_empty() {
        return Err(Error::Degenerate("summarize: no measurements".into()));
    }
    let buckets: [Option<GroupLabel>; 4] = [
        Some(GroupLabel::Healthy),
        Some(GroupLabel::DiabetesNoDr),
        Some(GroupLabel::DiabetesDr),
        None,
    ];
    let mut summaries = Vec::new();
    for bucket in buckets {
        let members: Vec<&FazMeasurement> =
            rows.iter().filter(|r| r.group_label == bucket).collect();
        if members.is_empty() {
            continue;
        }
        let collect = |f: fn(&FazMeasurement) -> f64| -> MetricStats {
            let mut vals: Vec<f64> = members.iter().map(|m| f(m)).collect();
            metric_stats(&mut vals)
        };
        summaries.push(GroupSummary {
            group: bucket,
            n: members.len(),
            area_svc: collect(|m| m.area_svc_mm2),
            area_icp: collect(|m| m.area_icp_mm2),
            area_dcp: collect(|m| m.area_dcp_mm2),
            volume: collect(|m| m.volume_mm3),
        });
    }
    Ok(summaries)
}

/// Renders group summaries as an aligned text table, one line per
/// (group, metric).
pub fn format_summary(summaries: &[GroupSummary]) -> String {
    let mut text = String::new();
    writeln!(
        text,
        "{:<16} {:>4}  {:<14} {:>10} {:>10} {:>10} {:>22}",
        "group", "n", "metric", "mean", "sd", "median", "iqr"
    )
    .unwrap();
    for s in summaries {
        let group = s.group.map(|g| g.as_str()).unwrap_or("unlabeled");
        let metrics = [
            ("area_svc_mm2", &s.area_svc),
            ("area_icp_mm2", &s.area_icp),
            ("area_dcp_mm2", &s.area_dcp),
            ("volume_mm3", &s.volume),
        ];
        for (name, m) in metrics {
            writeln!(
                text,
                "{:<16} {:>4}  {:<14} {:>10.6} {:>10.6} {:>10.6} [{:>9.6}, {:>9.6}]",
                group, s.n, name, m.mean, m.sd, m.median, m.q1, m.q3
            )
            .unwrap();
        }
    }
    text
}

// ===========================================================================
// Timing report
// ===========================================================================

/// Formats mean/SD/min/max of per-scan processing time plus a mean
/// per-stage breakdown when stage timings were recorded. The fixed
/// reference line gives the throughput the pipeline is expected to match
/// on clinical hardware.
pub fn report_timing(
    rows: &[FazMeasurement],
    stage_reports: &[(String, Vec<(&'static str, f64)>)],
) -> String {
    let mut text = String::new();
    if rows.is_empty() {
        writeln!(text, "processing time: no scans").unwrap();
        return text;
    }
    let times: Vec<f64> = rows.iter().map(|r| r.elapsed_seconds).collect();
    let n = times.len();
    let mean = times.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    writeln!(
        text,
        "processing time over {n} scans: mean {mean:.2} s, sd {sd:.2} s, min {min:.2} s, max {max:.2} s"
    )
    .unwrap();
    writeln!(text, "reference: 38.7 (2.6) s").unwrap();

    // Stage names in first-seen order, averaged across scans that ran them.
    let mut order: Vec<&'static str> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (_, stages) in stage_reports {
        for &(name, secs) in stages {
            match order.iter().position(|&n| n == name) {
                Some(i) => {
                    sums[i].0 += secs;
                    sums[i].1 += 1;
                }
                None => {
                    order.push(name);
                    sums.push((secs, 1));
                }
            }
        }
    }
    if !order.is_empty() {
        writeln!(text, "per-stage mean seconds:").unwrap();
        for (name, (sum, count)) in order.iter().zip(&sums) {
            writeln!(text, "  {:<22} {:>8.3}", name, sum / *count as f64).unwrap();
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, group: Option<GroupLabel>, v: f64) -> FazMeasurement {
        FazMeasurement {
            scan_id: id.to_string(),
            group_label: group,
            res_plane_um: 5.7,
            area_svc_mm2: v,
            area_icp_mm2: v * 2.0,
            area_dcp_mm2: v * 3.0,
            volume_mm3: v / 10.0,
            elapsed_seconds: 1.0,
        }
    }

    #[test]
    fn manifest_parses_paths_ids_and_labels() {
        let text = "scan_path,scan_id,group_label\n\
                    scans/a,eye-a,healthy\n\
                    /abs/b,eye-b,\n\
                    c,eye-c,diabetes_dr\n";
        let entries = RunManifest::entries_from_str(text, Path::new("/data")).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].scan_path, Path::new("/data/scans/a"));
        assert_eq!(entries[0].group_label, Some(GroupLabel::Healthy));
        assert_eq!(entries[1].scan_path, Path::new("/abs/b"));
        assert_eq!(entries[1].group_label, None);
        assert_eq!(entries[2].group_label, Some(GroupLabel::DiabetesDr));
    }

    #[test]
    fn manifest_rejects_bad_header_label_and_field_count() {
        let base = Path::new(".");
        assert!(RunManifest::entries_from_str("x,y\n", base).is_err());
        let bad_label = "scan_path,scan_id,group_label\na,b,sick\n";
        assert!(RunManifest::entries_from_str(bad_label, base).is_err());
        let four = "scan_path,scan_id,group_label\na,b,healthy,extra\n";
        assert!(RunManifest::entries_from_str(four, base).is_err());
    }

    #[test]
    fn duplicate_scan_ids_are_rejected() {
        let entries = vec![
            ManifestEntry {
                scan_path: "a".into(),
                scan_id: "same".into(),
                group_label: None,
            },
            ManifestEntry {
                scan_path: "b".into(),
                scan_id: "same".into(),
                group_label: None,
            },
        ];
        assert!(RunManifest::new(entries, "out".into()).is_err());
    }

    #[test]
    fn summary_matches_hand_arithmetic() {
        // Volumes 0.01 and 0.02: mean 0.015, sample SD = 0.01/sqrt(2).
        let rows = vec![
            row("a", Some(GroupLabel::Healthy), 0.1),
            row("b", Some(GroupLabel::Healthy), 0.2),
        ];
        let s = summarize_groups(&rows).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 2);
        assert!((s[0].volume.mean - 0.015).abs() < 1e-12);
        assert!((s[0].volume.sd - 0.00707).abs() < 5e-6);
        assert!((s[0].volume.median - 0.015).abs() < 1e-12);
    }

    #[test]
    fn groups_come_out_in_clinical_order_with_unlabeled_last() {
        let rows = vec![
            row("u", None, 0.1),
            row("d", Some(GroupLabel::DiabetesDr), 0.2),
            row("h", Some(GroupLabel::Healthy), 0.3),
            row("n", Some(GroupLabel::DiabetesNoDr), 0.4),
        ];
        let groups: Vec<Option<GroupLabel>> = summarize_groups(&rows)
            .unwrap()
            .into_iter()
            .map(|s| s.group)
            .collect();
        assert_eq!(
            groups,
            vec![
                Some(GroupLabel::Healthy),
                Some(GroupLabel::DiabetesNoDr),
                Some(GroupLabel::DiabetesDr),
                None,
            ]
        );
    }

    #[test]
    fn summarize_rejects_empty_input() {
        assert!(summarize_groups(&[]).is_err());
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let mut vals = vec![1.0, 2.0, 3.0, 4.0];
        let m = metric_stats(&mut vals);
        assert!((m.q1 - 1.75).abs() < 1e-12);
        assert!((m.median - 2.5).abs() < 1e-12);
        assert!((m.q3 - 3.25).abs() < 1e-12);
    }

    #[test]
    fn timing_report_has_mean_sd_and_reference_line() {
        let mut a = row("a", None, 0.1);
        let mut b = row("b", None, 0.1);
        a.elapsed_seconds = 30.0;
        b.elapsed_seconds = 50.0;
        let text = report_timing(&[a, b], &[]);
        assert!(text.contains("mean 40.00 s"));
        assert!(text.contains("sd 14.14 s"));
        assert!(text.contains("min 30.00 s"));
        assert!(text.contains("max 50.00 s"));
        assert!(text.contains("reference: 38.7 (2.6) s"));
    }

    #[test]
    fn timing_report_handles_no_scans() {
        let text = report_timing(&[], &[]);
        assert!(text.contains("no scans"));
    }

    #[test]
    fn stage_breakdown_averages_across_scans() {
        let rows = vec![row("a", None, 0.1)];
        let reports = vec![
            ("a".to_string(), vec![("resample", 1.0), ("smooth", 3.0)]),
            ("b".to_string(), vec![("resample", 2.0), ("smooth", 5.0)]),
        ];
        let text = report_timing(&rows, &reports);
        assert!(text.contains("per-stage mean seconds"));
        assert!(text.contains("resample"));
        assert!(text.contains("1.500"));
        assert!(text.contains("4.000"));
    }
}
