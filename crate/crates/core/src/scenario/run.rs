//! Scenario execution.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{load_checked, Checked, Comparison, Diagnostic, Scenario, TrapConfig};
use crate::analysis::{self, fit_rabi, heating_rate, Estimate, FitResult, HeatingRate, RabiFitOptions, RabiTrace};
use crate::detection::{detection_report, CountModel, DetectionReport};
use crate::dynamics::{
    lamb_dicke, rabi_rate_from_intensity, simulate_trace, time_grid, DriveSpec, MotionalMode, RabiReference, TracePoint,
};
use crate::num::{consts, units, Vec3};
use crate::photonics::{db_to_fraction, loss_budget, GaussianBeam, LossBudget, LossChain, LossElement, SplitterSpec};
use crate::rng;
use crate::solver::{shuttle_waveform, solve_wells, CompensationMode, SolveOptions, VoltageSolution, WellSpec};
use crate::trap::{
    axial_frequency, total_potential, BasisFile, DemoTrap, Domain, ElectrodeBasis, IonSpecies, PotentialSample,
    TrapError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario failed validation with {} diagnostic(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub name: String,
    pub status: StepStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    /// SHA-256 of the scenario file bytes, hex.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub toolkit_version: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RfSummary {
    pub amplitude_v: f64,
    pub frequency_mhz: f64,
    pub null_um: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WellSummary {
    pub site: String,
    pub position_um: [f64; 3],
    pub target_axial_mhz: f64,
    /// From the curvature of the solved DC (+RF) potential along the axis.
    pub achieved_axial_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf: Option<RfSummary>,
    pub electrodes: Vec<String>,
    pub voltages: Vec<f64>,
    pub residual_norm: f64,
    pub max_abs_voltage: f64,
    pub clipped: Vec<String>,
    pub zeroed: Vec<String>,
    pub wells: Vec<WellSummary>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShuttleSummary {
    pub stage: usize,
    pub from: Vec<String>,
    pub to: Vec<String>,
    pub steps: usize,
    pub max_abs_voltage: f64,
    pub max_residual_norm: f64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StraySummary {
    pub site: String,
    pub fraction: f64,
    pub intensity_w_per_m2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeamSummary {
    pub id: String,
    pub site: String,
    pub wavelength_nm: f64,
    pub launch_power_w: f64,
    pub power_w: f64,
    pub budget: LossBudget,
    pub fwhm_um: f64,
    pub peak_intensity_w_per_m2: f64,
    pub site_intensity_w_per_m2: f64,
    pub stray: Vec<StraySummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriveSummary {
    pub id: String,
    pub site: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity_w_per_m2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition: Option<String>,
    pub omega0_rad_s: f64,
    pub omega0_khz: f64,
    pub pi_time_us: f64,
    pub a: f64,
    pub eta: f64,
    pub nbar: f64,
    pub lamb_dicke_valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSummary {
    pub drive: String,
    pub points: usize,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriveFit {
    pub drive: String,
    pub omega0_khz: f64,
    pub omega0_khz_sigma: f64,
    pub fit: FitResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub kind: &'static str,
    pub drives: Vec<String>,
    pub value: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    /// Whether `expected` lies within three standard errors of `value`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatingPoint {
    pub wait_ms: f64,
    pub true_nbar: f64,
    pub nbar: f64,
    pub nbar_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatingSummary {
    pub drive: String,
    pub points: Vec<HeatingPoint>,
    pub fit: HeatingRate,
    pub file: String,
}

/// Everything a run produced. Serialised as the report file; wall time is
/// kept out of the file so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub provenance: Provenance,
    pub steps: Vec<StepRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shuttle: Vec<ShuttleSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub beams: Vec<BeamSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub drives: Vec<DriveSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<TraceSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<DriveFit>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ComparisonResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heating: Option<HeatingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
    /// Output directory the artifacts were written to.
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn failed_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.status == StepStatus::Failed)
    }

    pub fn succeeded(&self) -> bool {
        self.failed_steps().next().is_none()
    }

    pub fn step(&self, name: &str) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.name == name)
    }
}

/// Basis with some electrodes removed (held at 0 V).
struct MaskedBasis {
    inner: Arc<dyn ElectrodeBasis<f64>>,
    keep: Vec<usize>,
    names: Vec<String>,
}

impl ElectrodeBasis<f64> for MaskedBasis {
    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn domain(&self) -> Domain<f64> {
        self.inner.domain()
    }

    fn sample(&self, electrode: usize, point: &Vec3<f64>) -> Result<PotentialSample<f64>, TrapError> {
        self.inner.sample(self.keep[electrode], point)
    }
}

/// Beam summaries and the beam models keyed by id.
type OpticsOutput = (Vec<BeamSummary>, HashMap<String, GaussianBeam<f64>>);

/// A simulated trace and the seed it was drawn with.
type SimOutcome = (Result<Vec<TracePoint>, String>, Option<u64>);

struct TrapState {
    basis: Arc<dyn ElectrodeBasis<f64>>,
    rf: Option<(crate::trap::RfDrive<f64>, RfSummary)>,
}

struct Runner<'a> {
    s: &'a Scenario,
    species: IonSpecies<f64>,
    seed: Option<u64>,
    out_dir: PathBuf,
    steps: Vec<StepRecord>,
}

/// Writes `contents` to `path` via a temporary file and rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("creating {}: {e}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, contents).map_err(|e| format!("writing {}: {e}", tmp.display()))?;
    std::fs::rename(&tmp, path).map_err(|e| format!("renaming to {}: {e}", path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialise");
    v.push(b'\n');
    v
}

/// Trace CSV with columns `t_us,population[,stderr,shots]`.
pub fn trace_csv(points: &[TracePoint]) -> String {
    let noisy = points.iter().all(|p| p.stderr.is_some() && p.shots.is_some());
    let mut out = String::from(if noisy { "t_us,population,stderr,shots\n" } else { "t_us,population\n" });
    for p in points {
        let t_us = p.t / units::MICROSECOND;
        if noisy {
            let _ = writeln!(out, "{},{},{},{}", t_us, p.population, p.stderr.unwrap_or(0.0), p.shots.unwrap_or(0));
        } else {
            let _ = writeln!(out, "{},{}", t_us, p.population);
        }
    }
    out
}

fn um(p: &Vec3<f64>) -> [f64; 3] {
    [p[0] / units::MICRON, p[1] / units::MICRON, p[2] / units::MICRON]
}

fn from_um(p: [f64; 3]) -> Vec3<f64> {
    Vec3::new(p[0] * units::MICRON, p[1] * units::MICRON, p[2] * units::MICRON)
}

impl Runner<'_> {
    /// Runs `f` unless a dependency did not succeed; records the outcome.
    fn step<T>(&mut self, name: &str, deps: &[String], f: impl FnOnce(&mut Self) -> Result<T, String>) -> Option<T> {
        let blocked: Vec<&String> =
            deps.iter().filter(|d| !self.steps.iter().any(|s| &s.name == *d && s.status == StepStatus::Ok)).collect();
        if !blocked.is_empty() {
            let list: Vec<&str> = blocked.iter().map(|s| s.as_str()).collect();
            self.steps.push(StepRecord {
                name: name.into(),
                status: StepStatus::Skipped,
                error: Some(format!("dependency did not succeed: {}", list.join(", "))),
                depends_on: deps.to_vec(),
            });
            return None;
        }
        let out = f(self);
        let (status, error) = match &out {
            Ok(_) => (StepStatus::Ok, None),
            Err(e) => (StepStatus::Failed, Some(e.clone())),
        };
        self.steps.push(StepRecord { name: name.into(), status, error, depends_on: deps.to_vec() });
        out.ok()
    }

    fn site(&self, id: &str) -> &super::config::SiteConfig {
        self.s.sites.iter().find(|s| s.id == id).expect("validated site reference")
    }

    fn well(&self, id: &str) -> WellSpec<f64> {
        let site = self.site(id);
        let w = WellSpec::with_frequency(from_um(site.position_um), units::mhz_to_rad_s(site.axial_mhz), &self.species);
        match site.compensation_v_per_m {
            Some(c) => w.compensated(Vec3::from(c)),
            None => w,
        }
    }

    fn child_seed(&self, label: &str) -> u64 {
        rng::child_seed(self.seed.expect("validated: seed present for stochastic steps"), label)
    }

    fn out_path(&self, rel: &Path) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn build_trap(&mut self, base_dir: &Path) -> Result<TrapState, String> {
        match self.s.trap.as_ref().expect("trap step runs only with a trap") {
            TrapConfig::Demo { rf } => {
                let demo = DemoTrap::<f64>::new();
                let rf = match rf {
                    Some(cal) => {
                        let (drive, null) = demo
                            .calibrated_rf(&self.species, cal.x_um * units::MICRON, units::mhz_to_rad_s(cal.radial_mhz))
                            .map_err(|e| format!("RF calibration: {e}"))?;
                        let summary = RfSummary {
                            amplitude_v: drive.amplitude,
                            frequency_mhz: units::rad_s_to_mhz(drive.frequency),
                            null_um: um(&null),
                        };
                        Some((drive, summary))
                    }
                    None => None,
                };
                Ok(TrapState { basis: demo.dc.clone(), rf })
            }
            TrapConfig::BasisFile { path } => {
                let b = BasisFile::load(base_dir.join(path)).map_err(|e| e.to_string())?;
                Ok(TrapState { basis: Arc::new(b), rf: None })
            }
        }
    }

    fn solve(&mut self, trap: &TrapState) -> Result<SolveSummary, String> {
        let cfg = self.s.plan.solve.as_ref().expect("solve configured");
        let ids: Vec<String> = cfg.sites.clone().unwrap_or_else(|| self.s.sites.iter().map(|s| s.id.clone()).collect());
        let wells: Vec<WellSpec<f64>> = ids.iter().map(|id| self.well(id)).collect();
        let all_names = trap.basis.electrode_names().to_vec();
        let keep: Vec<usize> =
            (0..all_names.len()).filter(|&i| !cfg.exclude_electrodes.contains(&all_names[i])).collect();
        let masked = MaskedBasis {
            inner: trap.basis.clone(),
            names: keep.iter().map(|&i| all_names[i].clone()).collect(),
            keep: keep.clone(),
        };
        let mut opts = SolveOptions::with_bound(cfg.bound_v);
        opts.sparsify = cfg.sparsify;
        if cfg.additive_compensation {
            opts.compensation = CompensationMode::Additive;
        }
        let sol: VoltageSolution<f64> = solve_wells(&wells, &masked, &opts).map_err(|e| e.to_string())?;
        let mut voltages = vec![0.0; all_names.len()];
        let mut clipped = Vec::new();
        let mut zeroed: Vec<String> = cfg.exclude_electrodes.clone();
        for (k, &i) in keep.iter().enumerate() {
            voltages[i] = sol.voltages[k];
            if sol.clipped[k] {
                clipped.push(all_names[i].clone());
            }
            if sol.zeroed[k] {
                zeroed.push(all_names[i].clone());
            }
        }
        let rf = trap.rf.as_ref().map(|(d, _)| d);
        let mut summaries = Vec::new();
        for (id, w) in ids.iter().zip(&wells) {
            let e = total_potential(trap.basis.as_ref(), &voltages, rf, &self.species, &w.position)
                .map_err(|e| format!("evaluating well '{id}': {e}"))?;
            summaries.push(WellSummary {
                site: id.clone(),
                position_um: um(&w.position),
                target_axial_mhz: self.site(id).axial_mhz,
                achieved_axial_mhz: units::rad_s_to_mhz(axial_frequency(&e.hessian, &self.species, &Vec3::x())),
            });
        }
        let summary = SolveSummary {
            rf: trap.rf.as_ref().map(|(_, s)| s.clone()),
            electrodes: all_names,
            voltages,
            residual_norm: sol.residual_norm(),
            max_abs_voltage: sol.max_abs_voltage(),
            clipped,
            zeroed,
            wells: summaries,
            file: self.s.outputs.voltages.display().to_string(),
        };
        write_atomic(&self.out_path(&self.s.outputs.voltages), &json_bytes(&summary))?;
        Ok(summary)
    }

    fn shuttle(&mut self, trap: &TrapState, stage: usize) -> Result<ShuttleSummary, String> {
        let st = &self.s.plan.shuttle[stage];
        let from: Vec<WellSpec<f64>> = st.from.iter().map(|id| self.well(id)).collect();
        let to: Vec<WellSpec<f64>> = st.to.iter().map(|id| self.well(id)).collect();
        let sols = shuttle_waveform(&from, &to, st.steps, trap.basis.as_ref(), &SolveOptions::with_bound(st.bound_v))
            .map_err(|e| e.to_string())?;
        let names = trap.basis.electrode_names();
        let mut csv = String::from("step");
        for n in names {
            csv.push(',');
            csv.push_str(n);
        }
        csv.push('\n');
        for (k, s) in sols.iter().enumerate() {
            csv.push_str(&k.to_string());
            for v in &s.voltages {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
        let file = self.s.outputs.shuttle.replace("{stage}", &stage.to_string());
        write_atomic(&self.out_path(Path::new(&file)), csv.as_bytes())?;
        Ok(ShuttleSummary {
            stage,
            from: st.from.clone(),
            to: st.to.clone(),
            steps: st.steps,
            max_abs_voltage: sols.iter().map(|s| s.max_abs_voltage()).fold(0.0, f64::max),
            max_residual_norm: sols.iter().map(|s| s.residual_norm()).fold(0.0, f64::max),
            file,
        })
    }

    fn optics(&mut self) -> Result<OpticsOutput, String> {
        let o = self.s.optics.as_ref().expect("optics configured");
        // Each node carries (power W, accumulated chain, wavelength m).
        let mut nodes: HashMap<String, (f64, LossChain, f64)> = HashMap::new();
        for src in &o.sources {
            nodes.insert(
                src.id.clone(),
                (src.power_mw * units::MILLIWATT, src.chain.clone(), src.wavelength_nm * units::NANOMETER),
            );
        }
        let mut launch: HashMap<String, f64> = HashMap::new();
        for src in &o.sources {
            launch.insert(src.id.clone(), src.power_mw * units::MILLIWATT);
        }
        for sp in &o.splitters {
            let (p_in, chain, lambda) = nodes.get(&sp.input).cloned().expect("validated splitter input");
            let spec = match (&sp.ratios, sp.rabi_imbalance) {
                (Some(r), _) => SplitterSpec { ratios: r.clone(), insertion_loss_db: sp.insertion_loss_db },
                (None, Some(d)) => SplitterSpec::for_rabi_imbalance(d, sp.insertion_loss_db),
                (None, None) => unreachable!("validated splitter"),
            };
            let _ = crate::photonics::split(p_in, &spec).map_err(|e| format!("splitter '{}': {e}", sp.id))?;
            let root = sp.input.split('.').next().unwrap_or(&sp.input).to_string();
            let l0 = launch.get(&root).copied().unwrap_or(p_in);
            for (k, r) in spec.ratios.iter().enumerate() {
                let db = -10.0 * r.log10() + spec.insertion_loss_db;
                let chain = chain
                    .clone()
                    .then(&LossChain::new(vec![LossElement::lumped(format!("splitter {}.{k}", sp.id), db)]));
                let id = format!("{}.{k}", sp.id);
                launch.insert(id.clone(), l0);
                nodes.insert(id, (p_in * r * db_to_fraction(spec.insertion_loss_db), chain, lambda));
            }
        }
        let mut summaries = Vec::new();
        let mut beams = HashMap::new();
        for b in &o.beams {
            let (_, chain, lambda) = nodes.get(&b.input).cloned().expect("validated beam input");
            let root = b.input.split('.').next().unwrap_or(&b.input);
            let launch_w = o.sources.iter().find(|s| s.id == root).map(|s| s.power_mw * units::MILLIWATT);
            let launch_w = launch_w.unwrap_or_else(|| launch.get(&b.input).copied().unwrap_or(0.0));
            let full = chain.then(&b.chain);
            let budget = if full.elements.is_empty() {
                LossBudget { total_db: 0.0, transmission: 1.0, table: Vec::new() }
            } else {
                loss_budget(&full).map_err(|e| format!("beam '{}': {e}", b.id))?
            };
            let power = budget.deliver(launch_w);
            let site = self.site(&b.site);
            let site_pos = from_um(site.position_um);
            let focus = site_pos + from_um(b.focus_offset_um);
            let dir = b.direction.map(Vec3::from).unwrap_or_else(GaussianBeam::grating_direction);
            let beam = GaussianBeam::new(focus, dir, lambda, b.fwhm_um * units::MICRON, power)
                .map_err(|e| format!("beam '{}': {e}", b.id))?;
            let stray = b
                .stray
                .iter()
                .map(|st| StraySummary {
                    site: st.site.clone(),
                    fraction: st.fraction,
                    intensity_w_per_m2: st.fraction * beam.peak_intensity(),
                })
                .collect();
            summaries.push(BeamSummary {
                id: b.id.clone(),
                site: b.site.clone(),
                wavelength_nm: lambda / units::NANOMETER,
                launch_power_w: launch_w,
                power_w: power,
                budget,
                fwhm_um: b.fwhm_um,
                peak_intensity_w_per_m2: beam.peak_intensity(),
                site_intensity_w_per_m2: beam.intensity(&site_pos),
                stray,
            });
            beams.insert(b.id.clone(), beam);
        }
        Ok((summaries, beams))
    }

    /// Intensity of `beam_id` at `site`: the Gaussian profile at the site
    /// plus any configured scattered fraction of its peak.
    fn intensity_at(&self, beams: &HashMap<String, GaussianBeam<f64>>, beam_id: &str, site: &str) -> f64 {
        let beam = &beams[beam_id];
        let cfg =
            self.s.optics.as_ref().and_then(|o| o.beams.iter().find(|b| b.id == beam_id)).expect("validated beam");
        let direct = beam.intensity(&from_um(self.site(site).position_um));
        let stray: f64 = cfg.stray.iter().filter(|s| s.site == site).map(|s| s.fraction * beam.peak_intensity()).sum();
        direct + stray
    }

    fn drives(&mut self, beams: &HashMap<String, GaussianBeam<f64>>) -> Result<Vec<DriveSummary>, String> {
        let reference = self.s.optics.as_ref().and_then(|o| o.rabi_reference.as_ref()).map(|r| RabiReference {
            intensity: beams.get(&r.beam).map(|b| b.peak_intensity()).unwrap_or(f64::NAN),
            omega: units::khz_to_rad_s(r.omega0_khz),
        });
        let mut out = Vec::new();
        for d in &self.s.drives {
            let site = self.site(&d.site);
            let (omega_raw, intensity) = match (&d.beam, d.omega0_khz) {
                (_, Some(w)) => (units::khz_to_rad_s(w), None),
                (Some(b), None) => {
                    let i = self.intensity_at(beams, b, &d.site);
                    let r = reference.as_ref().expect("validated reference");
                    if !(r.intensity > 0.0) {
                        return Err("reference beam has zero peak intensity".into());
                    }
                    (rabi_rate_from_intensity(i, r), Some(i))
                }
                (None, None) => unreachable!("validated drive"),
            };
            let scale = d.transition.as_ref().map(|t| t.scale).unwrap_or(1.0);
            let omega0 = omega_raw * scale;
            let w_ax = units::mhz_to_rad_s(site.axial_mhz);
            let eta = lamb_dicke(d.wavelength_nm * units::NANOMETER, d.angle_deg.to_radians(), &self.species, w_ax);
            let mode = MotionalMode::new(w_ax, eta, site.nbar).map_err(|e| format!("drive '{}': {e}", d.id))?;
            out.push(DriveSummary {
                id: d.id.clone(),
                site: d.site.clone(),
                beam: d.beam.clone(),
                intensity_w_per_m2: intensity,
                transition: d.transition.as_ref().map(|t| t.label.clone()),
                omega0_rad_s: omega0,
                omega0_khz: units::rad_s_to_khz(omega0),
                pi_time_us: std::f64::consts::PI / omega0 / units::MICROSECOND,
                a: d.a,
                eta,
                nbar: site.nbar,
                lamb_dicke_valid: mode.is_valid(),
            });
        }
        Ok(out)
    }
}

fn drive_spec(d: &DriveSummary, wavelength_nm: f64, angle_deg: f64) -> DriveSpec<f64> {
    DriveSpec {
        omega0: d.omega0_rad_s,
        a: d.a,
        wavelength: wavelength_nm * units::NANOMETER,
        angle: angle_deg.to_radians(),
    }
}

fn simulate_one(
    d: &DriveSummary,
    spec: DriveSpec<f64>,
    axial_mhz: f64,
    t_max_us: f64,
    points: usize,
    shots: Option<(u64, u64)>,
) -> Result<Vec<TracePoint>, String> {
    if !d.lamb_dicke_valid {
        return Err(format!("drive '{}' is outside the Lamb-Dicke regime (sqrt(nbar)*eta >= 1)", d.id));
    }
    let mode = MotionalMode { omega: units::mhz_to_rad_s(axial_mhz), eta: d.eta, nbar: d.nbar };
    let times = time_grid(t_max_us * units::MICROSECOND, points);
    simulate_trace(&times, &spec, &[mode], shots).map_err(|e| e.to_string())
}

fn fit_one(points: &[TracePoint], eta: f64, axial_mhz: f64, float_eta: bool) -> Result<FitResult, String> {
    let trace = RabiTrace::from_points(points).map_err(|e| e.to_string())?;
    let mut opts = RabiFitOptions::new(vec![MotionalMode { omega: units::mhz_to_rad_s(axial_mhz), eta, nbar: 0.0 }]);
    opts.float_eta = float_eta;
    fit_rabi(&trace, &opts).map_err(|e| e.to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a scenario file's bytes, hex encoded.
pub fn config_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

/// Executes a validated scenario: trap → solve → shuttle → optics →
/// drives → simulate → fit → comparisons → heating → detection. A failed
/// step skips only the steps that depend on it.
pub fn run_checked(checked: &Checked, options: &RunOptions) -> RunReport {
    let start = Instant::now();
    let s = &checked.scenario;
    let species = IonSpecies {
        mass: s.species.mass_u * consts::ATOMIC_MASS_UNIT,
        charge: s.species.charge_e * consts::ELEMENTARY_CHARGE,
    };
    let out_dir = options.out_dir.clone().unwrap_or_else(|| checked.base_dir.join(&s.outputs.dir));
    let seed = options.seed.or(s.seed);
    let mut r = Runner { s, species, seed, out_dir: out_dir.clone(), steps: Vec::new() };
    let mut report = RunReport {
        scenario: s.name.clone(),
        provenance: Provenance { config_sha256: config_hash(&checked.text), seed, toolkit_version: crate::VERSION },
        steps: Vec::new(),
        solve: None,
        shuttle: Vec::new(),
        beams: Vec::new(),
        drives: Vec::new(),
        traces: Vec::new(),
        fits: Vec::new(),
        comparisons: Vec::new(),
        heating: None,
        detection: None,
        out_dir,
        wall_time_s: 0.0,
    };

    let trap = if s.trap.is_some() && (s.plan.solve.is_some() || !s.plan.shuttle.is_empty()) {
        r.step("trap", &[], |r| r.build_trap(&checked.base_dir))
    } else {
        None
    };
    let trap_dep = vec!["trap".to_string()];
    if s.plan.solve.is_some() {
        report.solve = r.step("solve", &trap_dep, |r| r.solve(trap.as_ref().expect("trap ok")));
    }
    for k in 0..s.plan.shuttle.len() {
        if let Some(sum) = r.step(&format!("shuttle:{k}"), &trap_dep, |r| r.shuttle(trap.as_ref().expect("trap ok"), k))
        {
            report.shuttle.push(sum);
        }
    }

    let mut beams = HashMap::new();
    if s.optics.is_some() {
        if let Some((summ, b)) = r.step("optics", &[], |r| r.optics()) {
            report.beams = summ;
            beams = b;
        }
    }
    let drive_deps: Vec<String> =
        if s.drives.iter().any(|d| d.beam.is_some()) { vec!["optics".to_string()] } else { Vec::new() };
    if !s.drives.is_empty() {
        if let Some(d) = r.step("drives", &drive_deps, |r| r.drives(&beams)) {
            report.drives = d;
        }
    }

    // Simulation and fitting per drive, evaluated in parallel and recorded
    // in declaration order.
    let mut traces: HashMap<String, Vec<TracePoint>> = HashMap::new();
    if let Some(sim) = &s.plan.simulate {
        let selected: Vec<&super::config::DriveConfig> =
            s.drives.iter().filter(|d| sim.drives.as_ref().is_none_or(|ids| ids.contains(&d.id))).collect();
        let drives_ok = r.steps.iter().any(|x| x.name == "drives" && x.status == StepStatus::Ok);
        let results: Vec<Option<SimOutcome>> = selected
            .par_iter()
            .map(|d| {
                if !drives_ok {
                    return None;
                }
                let summary = report.drives.iter().find(|x| x.id == d.id).expect("drive summarised");
                let seed =
                    sim.shots.map(|_| rng::child_seed(seed.expect("validated seed"), &format!("simulate:{}", d.id)));
                let shots = sim.shots.zip(seed);
                let axial = s.sites.iter().find(|x| x.id == d.site).expect("validated").axial_mhz;
                let res = simulate_one(
                    summary,
                    drive_spec(summary, d.wavelength_nm, d.angle_deg),
                    axial,
                    d.t_max_us.unwrap_or(sim.t_max_us),
                    d.points.unwrap_or(sim.points),
                    shots,
                );
                Some((res, seed))
            })
            .collect();
        for (d, res) in selected.iter().zip(results) {
            let name = format!("simulate:{}", d.id);
            let file = s.outputs.traces.replace("{drive}", &d.id);
            let summary = r.step(&name, &["drives".to_string()], |r| {
                let (pts, seed) = res.expect("drives succeeded");
                let pts = pts?;
                write_atomic(&r.out_path(Path::new(&file)), trace_csv(&pts).as_bytes())?;
                let ts =
                    TraceSummary { drive: d.id.clone(), points: pts.len(), shots: sim.shots, seed, file: file.clone() };
                traces.insert(d.id.clone(), pts);
                Ok(ts)
            });
            if let Some(ts) = summary {
                report.traces.push(ts);
            }
        }

        if let Some(fit_cfg) = &s.plan.fit {
            let fits: Vec<Option<Result<FitResult, String>>> = selected
                .par_iter()
                .map(|d| {
                    let pts = traces.get(&d.id)?;
                    let summary = report.drives.iter().find(|x| x.id == d.id).expect("drive summarised");
                    let axial = s.sites.iter().find(|x| x.id == d.site).expect("validated").axial_mhz;
                    Some(fit_one(pts, summary.eta, axial, fit_cfg.float_eta))
                })
                .collect();
            for (d, res) in selected.iter().zip(fits) {
                let fit = r
                    .step(&format!("fit:{}", d.id), &[format!("simulate:{}", d.id)], |_| res.expect("trace simulated"));
                if let Some(fit) = fit {
                    let w = fit.value("omega0");
                    report.fits.push(DriveFit {
                        drive: d.id.clone(),
                        omega0_khz: units::rad_s_to_khz(w),
                        omega0_khz_sigma: units::rad_s_to_khz(fit.sigma("omega0")),
                        fit,
                    });
                }
            }
            if !report.fits.is_empty() {
                let path = r.out_path(&s.outputs.fits);
                if let Err(e) = write_atomic(&path, &json_bytes(&report.fits)) {
                    r.steps.push(StepRecord {
                        name: "write:fits".into(),
                        status: StepStatus::Failed,
                        error: Some(e),
                        depends_on: Vec::new(),
                    });
                }
            }
        }
    }

    for (k, cmp) in s.plan.compare.iter().enumerate() {
        let (kind, ids, expected) = match cmp {
            Comparison::Imbalance { drives, expected } => ("imbalance", drives.to_vec(), *expected),
            Comparison::Crosstalk { victim, reference, expected } => {
                ("crosstalk", vec![victim.clone(), reference.clone()], *expected)
            }
        };
        let deps: Vec<String> = ids.iter().map(|id| format!("fit:{id}")).collect();
        let fits = &report.fits;
        let result = r.step(&format!("compare:{k}"), &deps, |_| {
            let est = |id: &str| {
                let f = fits.iter().find(|f| f.drive == id).expect("fit present");
                Estimate { value: f.fit.value("omega0"), sigma: f.fit.sigma("omega0") }
            };
            let e = match kind {
                "imbalance" => analysis::rabi_imbalance(est(&ids[0]), est(&ids[1])),
                _ => analysis::crosstalk_with_uncertainty(est(&ids[0]), est(&ids[1])),
            };
            Ok(ComparisonResult {
                kind,
                drives: ids.clone(),
                value: e.value,
                sigma: e.sigma,
                expected,
                consistent: expected.map(|x| (x - e.value).abs() <= 3.0 * e.sigma),
            })
        });
        if let Some(c) = result {
            report.comparisons.push(c);
        }
    }

    if let Some(h) = &s.plan.heating {
        let drives = report.drives.clone();
        report.heating = r.step("heating", &["drives".to_string()], |r| {
            let d = drives.iter().find(|d| d.id == h.drive).expect("validated drive");
            let cfg = s.drives.iter().find(|x| x.id == h.drive).expect("validated drive");
            let axial = r.site(&d.site).axial_mhz;
            let base_seed = r.child_seed("heating");
            let per_wait: Vec<Result<HeatingPoint, String>> = h
                .waits_ms
                .par_iter()
                .enumerate()
                .map(|(k, &wait)| {
                    let true_nbar = d.nbar + h.rate_quanta_per_ms * wait;
                    let dd = DriveSummary { nbar: true_nbar, ..d.clone() };
                    let spec = drive_spec(&dd, cfg.wavelength_nm, cfg.angle_deg);
                    let mode_valid = (true_nbar.sqrt() * dd.eta) < 1.0;
                    let dd = DriveSummary { lamb_dicke_valid: mode_valid, ..dd };
                    let pts = simulate_one(
                        &dd,
                        spec,
                        axial,
                        h.t_max_us,
                        h.points,
                        Some((h.shots, rng::child_seed(base_seed, &k.to_string()))),
                    )?;
                    let fit = fit_one(&pts, dd.eta, axial, false).map_err(|e| format!("wait {wait} ms: {e}"))?;
                    Ok(HeatingPoint {
                        wait_ms: wait,
                        true_nbar,
                        nbar: fit.value("nbar"),
                        nbar_sigma: fit.sigma("nbar"),
                    })
                })
                .collect();
            let points: Vec<HeatingPoint> = per_wait.into_iter().collect::<Result<_, _>>()?;
            let waits: Vec<f64> = points.iter().map(|p| p.wait_ms * units::MILLISECOND).collect();
            let nbar: Vec<f64> = points.iter().map(|p| p.nbar).collect();
            let sig: Vec<f64> = points.iter().map(|p| p.nbar_sigma.max(1e-9)).collect();
            let fit = heating_rate(&waits, &nbar, Some(&sig)).map_err(|e| e.to_string())?;
            let mut csv = String::from("wait_ms,nbar,nbar_sigma\n");
            for p in &points {
                let _ = writeln!(csv, "{},{},{}", p.wait_ms, p.nbar, p.nbar_sigma);
            }
            let file = s.outputs.heating.display().to_string();
            write_atomic(&r.out_path(&s.outputs.heating), csv.as_bytes())?;
            Ok(HeatingSummary { drive: h.drive.clone(), points, fit, file })
        });
    }

    if let Some(det) = &s.plan.detection {
        report.detection = r.step("detection", &[], |r| {
            let model =
                CountModel::new(det.signal_kcps * 1e3, det.background_kcps * 1e3, det.t_ms * units::MILLISECOND)
                    .map_err(|e| e.to_string())?;
            detection_report(&model, det.shots, r.child_seed("detection")).map_err(|e| e.to_string())
        });
    }

    report.steps = std::mem::take(&mut r.steps);
    let path = report.out_dir.join(&s.outputs.report);
    if let Err(e) = write_atomic(&path, &json_bytes(&report)) {
        report.steps.push(StepRecord {
            name: "write:report".into(),
            status: StepStatus::Failed,
            error: Some(e),
            depends_on: Vec::new(),
        });
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    report
}

/// Validates and runs the scenario at `path`.
pub fn run_scenario(path: &Path, options: &RunOptions) -> Result<RunReport, RunError> {
    match load_checked(path)? {
        Ok(checked) => Ok(run_checked(&checked, options)),
        Err(d) => Err(RunError::Invalid(d)),
    }
}
