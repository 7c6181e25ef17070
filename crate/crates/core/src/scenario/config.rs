//! Scenario file schema and validation.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::json_locate;
use crate::photonics::{LossChain, LossElement};
use crate::trap::{BasisFile, DemoTrap, ElectrodeBasis};

/// Declarative description of one experiment run.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Root seed; required when any step draws random numbers.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub species: SpeciesConfig,
    #[serde(default)]
    pub trap: Option<TrapConfig>,
    pub sites: Vec<SiteConfig>,
    #[serde(default)]
    pub optics: Option<OpticsConfig>,
    #[serde(default)]
    pub drives: Vec<DriveConfig>,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub mass_u: f64,
    pub charge_e: f64,
}

impl Default for SpeciesConfig {
    fn default() -> Self {
        Self { mass_u: 171.0, charge_e: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrapConfig {
    /// Bundled analytic five-wire surface trap.
    Demo {
        #[serde(default)]
        rf: Option<RfCalibration>,
    },
    /// Tabulated electrode basis; path relative to the scenario file.
    BasisFile { path: PathBuf },
}

/// Set the RF amplitude so the radial frequency at the RF null above
/// `x_um` equals `radial_mhz`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RfCalibration {
    pub radial_mhz: f64,
    #[serde(default)]
    pub x_um: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub id: String,
    pub position_um: [f64; 3],
    /// Target axial secular frequency, MHz.
    pub axial_mhz: f64,
    /// Mean axial occupation seen by drives at this site.
    #[serde(default)]
    pub nbar: f64,
    /// Stray field to cancel at the site, V/m.
    #[serde(default)]
    pub compensation_v_per_m: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub splitters: Vec<SplitterConfig>,
    pub beams: Vec<BeamConfig>,
    /// Rabi frequency reached at the peak intensity of a reference beam.
    #[serde(default)]
    pub rabi_reference: Option<RabiReferenceConfig>,
}

/// Laser light coupled onto the chip; `chain` covers launch to splitter.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub id: String,
    pub power_mw: f64,
    pub wavelength_nm: f64,
    #[serde(default)]
    pub chain: LossChain,
}

/// MMI splitter fed by a source or by another splitter's output
/// (`"<splitter>.<k>"`). Give either `ratios` or `rabi_imbalance`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterConfig {
    pub id: String,
    pub input: String,
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
    /// 1×2 split whose outputs drive Rabi frequencies differing by this
    /// fraction.
    #[serde(default)]
    pub rabi_imbalance: Option<f64>,
    #[serde(default)]
    pub insertion_loss_db: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub id: String,
    /// Source id or `"<splitter>.<k>"`.
    pub input: String,
    /// Losses from the splitter (or source) to the ion, e.g. the output
    /// grating.
    #[serde(default)]
    pub chain: LossChain,
    /// Site the beam is focused on.
    pub site: String,
    pub fwhm_um: f64,
    #[serde(default)]
    pub focus_offset_um: [f64; 3],
    /// Propagation direction; defaults to 45° out of the surface in `y-z`.
    #[serde(default)]
    pub direction: Option<[f64; 3]>,
    /// Scattered light reaching other sites, as a fraction of peak
    /// intensity.
    #[serde(default)]
    pub stray: Vec<StrayConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StrayConfig {
    pub site: String,
    pub fraction: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RabiReferenceConfig {
    pub beam: String,
    pub omega0_khz: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub label: String,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

fn default_wavelength() -> f64 {
    435.0
}

fn default_angle() -> f64 {
    45.0
}

/// Carrier drive on one site: Rabi frequency either given directly or
/// derived from a beam's intensity at the site.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub id: String,
    pub site: String,
    #[serde(default)]
    pub beam: Option<String>,
    #[serde(default)]
    pub omega0_khz: Option<f64>,
    #[serde(default)]
    pub transition: Option<TransitionConfig>,
    /// Initial ground-state population.
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    /// Angle between beam and trap axis, degrees.
    #[serde(default = "default_angle")]
    pub angle_deg: f64,
    /// Per-drive time grid overriding the plan's.
    #[serde(default)]
    pub t_max_us: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub solve: Option<SolveStep>,
    #[serde(default)]
    pub shuttle: Vec<ShuttleStage>,
    #[serde(default)]
    pub simulate: Option<SimulateStep>,
    #[serde(default)]
    pub fit: Option<FitStep>,
    #[serde(default)]
    pub compare: Vec<Comparison>,
    #[serde(default)]
    pub heating: Option<HeatingStep>,
    #[serde(default)]
    pub detection: Option<DetectionStep>,
}

fn default_bound() -> f64 {
    10.0
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolveStep {
    /// Sites to trap; all sites when absent.
    #[serde(default)]
    pub sites: Option<Vec<String>>,
    #[serde(default = "default_bound")]
    pub bound_v: f64,
    #[serde(default)]
    pub sparsify: bool,
    #[serde(default)]
    pub additive_compensation: bool,
    /// Electrodes held at 0 V.
    #[serde(default)]
    pub exclude_electrodes: Vec<String>,
}

/// Wells at `from` sites move linearly to the `to` sites (paired by
/// index) over `steps` frames.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ShuttleStage {
    pub from: Vec<String>,
    pub to: Vec<String>,
    pub steps: usize,
    #[serde(default = "default_bound")]
    pub bound_v: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStep {
    pub t_max_us: f64,
    pub points: usize,
    /// Projective measurements per point; noiseless traces when absent.
    #[serde(default)]
    pub shots: Option<u64>,
    /// Drives to simulate; all when absent.
    #[serde(default)]
    pub drives: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FitStep {
    #[serde(default)]
    pub float_eta: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Comparison {
    /// Fractional Rabi-frequency difference between two fitted drives.
    Imbalance {
        drives: [String; 2],
        #[serde(default)]
        expected: Option<f64>,
    },
    /// Intensity ratio `(Ω_victim/Ω_reference)²` from fitted drives.
    Crosstalk {
        victim: String,
        reference: String,
        #[serde(default)]
        expected: Option<f64>,
    },
}

/// Rabi traces after increasing wait times with linear heating, each
/// fitted for n̄, followed by a heating-rate fit.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingStep {
    pub drive: String,
    pub waits_ms: Vec<f64>,
    pub rate_quanta_per_ms: f64,
    pub t_max_us: f64,
    pub points: usize,
    pub shots: u64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionStep {
    pub signal_kcps: f64,
    pub background_kcps: f64,
    pub t_ms: f64,
    pub shots: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_report() -> PathBuf {
    PathBuf::from("report.json")
}

fn default_voltages() -> PathBuf {
    PathBuf::from("voltages.json")
}

fn default_traces() -> String {
    "trace_{drive}.csv".into()
}

fn default_shuttle() -> String {
    "shuttle_{stage}.csv".into()
}

fn default_fits() -> PathBuf {
    PathBuf::from("fits.json")
}

fn default_heating() -> PathBuf {
    PathBuf::from("heating_fits.csv")
}

/// Artifact paths, relative to `dir`; `dir` is relative to the scenario
/// file unless overridden on the command line.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    #[serde(default = "default_voltages")]
    pub voltages: PathBuf,
    /// `{drive}` is replaced by the drive id.
    #[serde(default = "default_traces")]
    pub traces: String,
    /// `{stage}` is replaced by the stage index.
    #[serde(default = "default_shuttle")]
    pub shuttle: String,
    #[serde(default = "default_fits")]
    pub fits: PathBuf,
    #[serde(default = "default_heating")]
    pub heating: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            report: default_report(),
            voltages: default_voltages(),
            traces: default_traces(),
            shuttle: default_shuttle(),
            fits: default_fits(),
            heating: default_heating(),
        }
    }
}

/// Problem found in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    /// JSON pointer to the offending value.
    pub pointer: String,
    /// 1-based position in the file, when it can be located.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

/// Outcome of parsing and checking a scenario file.
pub struct Checked {
    pub scenario: Scenario,
    pub text: String,
    pub base_dir: PathBuf,
}

fn to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let segs: Vec<String> = path
        .iter()
        .filter_map(|s| match s {
            Segment::Seq { index } => Some(index.to_string()),
            Segment::Map { key } => Some(key.clone()),
            Segment::Enum { variant } => Some(variant.clone()),
            Segment::Unknown => None,
        })
        .collect();
    json_locate::pointer(segs)
}

/// Parses scenario text. Schema errors come back as a single diagnostic
/// positioned at the failure.
pub fn parse_scenario(text: &str) -> Result<Scenario, Vec<Diagnostic>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let (line, column) = if inner.line() > 0 { (Some(inner.line()), Some(inner.column())) } else { (None, None) };
        let pointer = to_pointer(e.path());
        let message = if pointer.is_empty() { inner.to_string() } else { format!("{}: {inner}", e.path()) };
        vec![Diagnostic { pointer, line, column, message }]
    })
}

struct Checker<'a> {
    text: &'a str,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, segments: &[&dyn ToString], message: impl Into<String>) {
        let pointer = json_locate::pointer(segments.iter().map(|s| s.to_string()));
        let (line, column) = match json_locate::locate(self.text, &pointer) {
            Some((l, c)) => (Some(l), Some(c)),
            None => (None, None),
        };
        self.out.push(Diagnostic { pointer, line, column, message: message.into() });
    }

    fn positive(&mut self, v: f64, segments: &[&dyn ToString]) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(segments, format!("must be positive and finite, got {v}"));
        }
    }

    fn nonneg(&mut self, v: f64, segments: &[&dyn ToString]) {
        if !(v >= 0.0 && v.is_finite()) {
            self.push(segments, format!("must be nonnegative and finite, got {v}"));
        }
    }

    fn unique<'s>(&mut self, ids: impl Iterator<Item = &'s str>, list: &[&str]) -> HashSet<String> {
        let mut seen = HashSet::new();
        for (i, id) in ids.enumerate() {
            if !seen.insert(id.to_string()) {
                let mut segs: Vec<&dyn ToString> = list.iter().map(|s| s as &dyn ToString).collect();
                segs.push(&i);
                segs.push(&"id");
                self.push(&segs, format!("duplicate id '{id}'"));
            }
        }
        seen
    }

    fn chain(&mut self, chain: &LossChain, prefix: &[&dyn ToString]) {
        for (i, e) in chain.elements.iter().enumerate() {
            let mut segs: Vec<&dyn ToString> = prefix.to_vec();
            segs.push(&i);
            match e {
                LossElement::Lumped { loss_db, .. } => {
                    segs.push(&"loss_db");
                    self.nonneg(*loss_db, &segs);
                }
                LossElement::Distributed { loss_db_per_cm, length_cm, .. } => {
                    let mut a = segs.clone();
                    a.push(&"loss_db_per_cm");
                    self.nonneg(*loss_db_per_cm, &a);
                    segs.push(&"length_cm");
                    self.nonneg(*length_cm, &segs);
                }
            }
        }
    }
}

/// Semantic checks on a parsed scenario: unique ids, resolvable
/// references, physical ranges, seeds for stochastic steps, and a loadable
/// trap whose electrodes cover every named electrode.
pub fn check_scenario(s: &Scenario, text: &str, base_dir: &Path) -> Vec<Diagnostic> {
    let mut c = Checker { text, out: Vec::new() };
    c.positive(s.species.mass_u, &[&"species", &"mass_u"]);
    if !(s.species.charge_e != 0.0 && s.species.charge_e.is_finite()) {
        c.push(&[&"species", &"charge_e"], "charge must be nonzero");
    }
    if s.sites.is_empty() {
        c.push(&[&"sites"], "at least one site is required");
    }
    let sites = c.unique(s.sites.iter().map(|x| x.id.as_str()), &["sites"]);
    for (i, site) in s.sites.iter().enumerate() {
        c.positive(site.axial_mhz, &[&"sites", &i, &"axial_mhz"]);
        c.nonneg(site.nbar, &[&"sites", &i, &"nbar"]);
        if site.position_um.iter().any(|x| !x.is_finite()) {
            c.push(&[&"sites", &i, &"position_um"], "position must be finite");
        }
    }

    // Optics graph.
    let mut beams = HashSet::new();
    let mut outputs: HashMap<String, ()> = HashMap::new();
    if let Some(o) = &s.optics {
        let sources = c.unique(o.sources.iter().map(|x| x.id.as_str()), &["optics", "sources"]);
        for src in &sources {
            outputs.insert(src.clone(), ());
        }
        for (i, src) in o.sources.iter().enumerate() {
            c.nonneg(src.power_mw, &[&"optics", &"sources", &i, &"power_mw"]);
            c.positive(src.wavelength_nm, &[&"optics", &"sources", &i, &"wavelength_nm"]);
            c.chain(&src.chain, &[&"optics", &"sources", &i, &"chain"]);
        }
        c.unique(o.splitters.iter().map(|x| x.id.as_str()), &["optics", "splitters"]);
        for (i, sp) in o.splitters.iter().enumerate() {
            if !outputs.contains_key(&sp.input) {
                c.push(
                    &[&"optics", &"splitters", &i, &"input"],
                    format!("unknown input '{}' (splitters must follow their inputs)", sp.input),
                );
            }
            let fanout = match (&sp.ratios, sp.rabi_imbalance) {
                (Some(r), None) => {
                    if r.is_empty() || r.iter().any(|x| !(*x > 0.0)) {
                        c.push(&[&"optics", &"splitters", &i, &"ratios"], "ratios must be positive");
                    } else if r.iter().sum::<f64>() > 1.0 + 1e-12 {
                        c.push(&[&"optics", &"splitters", &i, &"ratios"], "ratios sum above 1");
                    }
                    r.len()
                }
                (None, Some(d)) => {
                    c.nonneg(d, &[&"optics", &"splitters", &i, &"rabi_imbalance"]);
                    2
                }
                _ => {
                    c.push(&[&"optics", &"splitters", &i], "give exactly one of 'ratios' or 'rabi_imbalance'");
                    0
                }
            };
            c.nonneg(sp.insertion_loss_db, &[&"optics", &"splitters", &i, &"insertion_loss_db"]);
            for k in 0..fanout {
                outputs.insert(format!("{}.{k}", sp.id), ());
            }
        }
        beams = c.unique(o.beams.iter().map(|x| x.id.as_str()), &["optics", "beams"]);
        for (i, b) in o.beams.iter().enumerate() {
            if !outputs.contains_key(&b.input) {
                c.push(&[&"optics", &"beams", &i, &"input"], format!("unknown input '{}'", b.input));
            }
            if !sites.contains(&b.site) {
                c.push(&[&"optics", &"beams", &i, &"site"], format!("unknown site '{}'", b.site));
            }
            c.positive(b.fwhm_um, &[&"optics", &"beams", &i, &"fwhm_um"]);
            c.chain(&b.chain, &[&"optics", &"beams", &i, &"chain"]);
            if let Some(d) = b.direction {
                if !(d.iter().map(|x| x * x).sum::<f64>() > 0.0) {
                    c.push(&[&"optics", &"beams", &i, &"direction"], "direction must be nonzero");
                }
            }
            for (k, st) in b.stray.iter().enumerate() {
                if !sites.contains(&st.site) {
                    c.push(&[&"optics", &"beams", &i, &"stray", &k, &"site"], format!("unknown site '{}'", st.site));
                }
                if !(st.fraction >= 0.0 && st.fraction <= 1.0) {
                    c.push(&[&"optics", &"beams", &i, &"stray", &k, &"fraction"], "fraction must lie in [0, 1]");
                }
            }
        }
        if let Some(r) = &o.rabi_reference {
            if !beams.contains(&r.beam) {
                c.push(&[&"optics", &"rabi_reference", &"beam"], format!("unknown beam '{}'", r.beam));
            }
            c.positive(r.omega0_khz, &[&"optics", &"rabi_reference", &"omega0_khz"]);
        }
    }

    // Drives.
    let drives = c.unique(s.drives.iter().map(|x| x.id.as_str()), &["drives"]);
    for (i, d) in s.drives.iter().enumerate() {
        if !sites.contains(&d.site) {
            c.push(&[&"drives", &i, &"site"], format!("unknown site '{}'", d.site));
        }
        match (&d.beam, d.omega0_khz) {
            (Some(b), None) => {
                if !beams.contains(b) {
                    c.push(&[&"drives", &i, &"beam"], format!("unknown beam '{b}'"));
                }
                if s.optics.as_ref().and_then(|o| o.rabi_reference.as_ref()).is_none() {
                    c.push(&[&"drives", &i, &"beam"], "beam-derived drives need optics.rabi_reference");
                }
            }
            (None, Some(w)) => c.nonneg(w, &[&"drives", &i, &"omega0_khz"]),
            _ => c.push(&[&"drives", &i], "give exactly one of 'beam' or 'omega0_khz'"),
        }
        if !(d.a >= 0.0 && d.a <= 1.0) {
            c.push(&[&"drives", &i, &"a"], "initial population must lie in [0, 1]");
        }
        c.positive(d.wavelength_nm, &[&"drives", &i, &"wavelength_nm"]);
        if let Some(t) = &d.transition {
            c.nonneg(t.scale, &[&"drives", &i, &"transition", &"scale"]);
        }
        if let Some(t) = d.t_max_us {
            c.positive(t, &[&"drives", &i, &"t_max_us"]);
        }
        if let Some(p) = d.points {
            if p < 2 {
                c.push(&[&"drives", &i, &"points"], "need at least 2 points");
            }
        }
    }

    // Trap and electrodes.
    let needs_trap = s.plan.solve.is_some() || !s.plan.shuttle.is_empty();
    let mut electrode_names: Option<Vec<String>> = None;
    match &s.trap {
        None if needs_trap => c.push(&[&"trap"], "solve and shuttle steps need a trap"),
        None => {}
        Some(TrapConfig::Demo { rf }) => {
            electrode_names = Some(DemoTrap::<f64>::new().dc.electrode_names().to_vec());
            if let Some(rf) = rf {
                c.positive(rf.radial_mhz, &[&"trap", &"rf", &"radial_mhz"]);
            }
        }
        Some(TrapConfig::BasisFile { path }) => match BasisFile::load(base_dir.join(path)) {
            Ok(b) => electrode_names = Some(b.electrode_names().to_vec()),
            Err(e) => c.push(&[&"trap", &"path"], format!("cannot load basis '{}': {e}", path.display())),
        },
    }

    let p = &s.plan;
    if let Some(solve) = &p.solve {
        c.positive(solve.bound_v, &[&"plan", &"solve", &"bound_v"]);
        if let Some(ids) = &solve.sites {
            if ids.is_empty() {
                c.push(&[&"plan", &"solve", &"sites"], "at least one site is required");
            }
            for (k, id) in ids.iter().enumerate() {
                if !sites.contains(id) {
                    c.push(&[&"plan", &"solve", &"sites", &k], format!("unknown site '{id}'"));
                }
            }
        }
        if let Some(names) = &electrode_names {
            for (k, e) in solve.exclude_electrodes.iter().enumerate() {
                if !names.contains(e) {
                    c.push(&[&"plan", &"solve", &"exclude_electrodes", &k], format!("unknown electrode '{e}'"));
                }
            }
        }
    }
    for (i, st) in p.shuttle.iter().enumerate() {
        if st.from.len() != st.to.len() || st.from.is_empty() {
            c.push(&[&"plan", &"shuttle", &i], "'from' and 'to' must list the same nonzero number of sites");
        }
        for (key, list) in [("from", &st.from), ("to", &st.to)] {
            for (k, id) in list.iter().enumerate() {
                if !sites.contains(id) {
                    c.push(&[&"plan", &"shuttle", &i, &key, &k], format!("unknown site '{id}'"));
                }
            }
        }
        if st.steps < 2 {
            c.push(&[&"plan", &"shuttle", &i, &"steps"], "need at least 2 steps");
        }
        c.positive(st.bound_v, &[&"plan", &"shuttle", &i, &"bound_v"]);
    }
    let mut stochastic = p.detection.is_some() || p.heating.is_some();
    if let Some(sim) = &p.simulate {
        c.positive(sim.t_max_us, &[&"plan", &"simulate", &"t_max_us"]);
        if sim.points < 2 {
            c.push(&[&"plan", &"simulate", &"points"], "need at least 2 points");
        }
        if sim.shots == Some(0) {
            c.push(&[&"plan", &"simulate", &"shots"], "shots must be at least 1");
        }
        stochastic |= sim.shots.is_some();
        if let Some(ids) = &sim.drives {
            for (k, id) in ids.iter().enumerate() {
                if !drives.contains(id) {
                    c.push(&[&"plan", &"simulate", &"drives", &k], format!("unknown drive '{id}'"));
                }
            }
        }
        if s.drives.is_empty() {
            c.push(&[&"plan", &"simulate"], "simulation needs at least one drive");
        }
    }
    if p.fit.is_some() && p.simulate.is_none() {
        c.push(&[&"plan", &"fit"], "fitting needs a simulate step");
    }
    let simulated = |id: &str| {
        p.simulate.as_ref().is_some_and(|sim| sim.drives.as_ref().is_none_or(|ds| ds.iter().any(|d| d == id)))
    };
    for (i, cmp) in p.compare.iter().enumerate() {
        let refs: Vec<(&str, &String)> = match cmp {
            Comparison::Imbalance { drives, .. } => vec![("drives/0", &drives[0]), ("drives/1", &drives[1])],
            Comparison::Crosstalk { victim, reference, .. } => vec![("victim", victim), ("reference", reference)],
        };
        for (key, id) in refs {
            let segs: Vec<&str> = key.split('/').collect();
            let mut ptr: Vec<&dyn ToString> = vec![&"plan", &"compare", &i];
            for s in &segs {
                ptr.push(s);
            }
            if !drives.contains(id) {
                c.push(&ptr, format!("unknown drive '{id}'"));
            } else if p.fit.is_none() || !simulated(id) {
                c.push(&ptr, format!("drive '{id}' is not simulated and fitted"));
            }
        }
    }
    if let Some(h) = &p.heating {
        if !drives.contains(&h.drive) {
            c.push(&[&"plan", &"heating", &"drive"], format!("unknown drive '{}'", h.drive));
        }
        if h.waits_ms.len() < 3 {
            c.push(&[&"plan", &"heating", &"waits_ms"], "need at least 3 wait times");
        }
        for (k, w) in h.waits_ms.iter().enumerate() {
            c.nonneg(*w, &[&"plan", &"heating", &"waits_ms", &k]);
        }
        c.nonneg(h.rate_quanta_per_ms, &[&"plan", &"heating", &"rate_quanta_per_ms"]);
        c.positive(h.t_max_us, &[&"plan", &"heating", &"t_max_us"]);
        if h.points < 10 {
            c.push(&[&"plan", &"heating", &"points"], "fits need at least 10 points");
        }
        if h.shots == 0 {
            c.push(&[&"plan", &"heating", &"shots"], "shots must be at least 1");
        }
    }
    if let Some(d) = &p.detection {
        c.nonneg(d.signal_kcps, &[&"plan", &"detection", &"signal_kcps"]);
        c.nonneg(d.background_kcps, &[&"plan", &"detection", &"background_kcps"]);
        c.positive(d.t_ms, &[&"plan", &"detection", &"t_ms"]);
        if d.shots == 0 {
            c.push(&[&"plan", &"detection", &"shots"], "shots must be at least 1");
        }
        if !(d.signal_kcps > 0.0) {
            c.push(&[&"plan", &"detection", &"signal_kcps"], "bright state must be brighter than dark");
        }
    }
    if stochastic && s.seed.is_none() {
        c.push(&[&"seed"], "a seed is required for stochastic steps");
    }
    if p.fit.is_some() {
        if let Some(sim) = &p.simulate {
            for (i, d) in s.drives.iter().enumerate() {
                if simulated(&d.id) && d.points.unwrap_or(sim.points) < 10 {
                    c.push(&[&"drives", &i, &"points"], "fits need at least 10 points");
                }
            }
        }
    }
    c.out
}

/// Reads, parses and checks a scenario file.
pub fn load_checked(path: &Path) -> std::io::Result<Result<Checked, Vec<Diagnostic>>> {
    let text = std::fs::read_to_string(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(d) => return Ok(Err(d)),
    };
    let diags = check_scenario(&scenario, &text, &base_dir);
    if diags.is_empty() {
        Ok(Ok(Checked { scenario, text, base_dir }))
    } else {
        Ok(Err(diags))
    }
}

/// All problems with the scenario at `path`; empty when it can run.
pub fn validate_scenario(path: &Path) -> std::io::Result<Vec<Diagnostic>> {
    Ok(match load_checked(path)? {
        Ok(_) => Vec::new(),
        Err(d) => d,
    })
}
