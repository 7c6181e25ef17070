use std::path::Path;

use serde::Deserialize;

use super::TrapError;
use crate::json_locate;
use crate::num::{lit, to_f64, units, Mat3, Real, Vec3};

/// Potential of one electrode at one point, per applied volt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialSample<T> {
    /// V/V
    pub value: T,
    /// V/m per volt
    pub gradient: Vec3<T>,
    /// V/m² per volt
    pub hessian: Mat3<T>,
    /// Third derivatives, V/m³ per volt, when the source provides them.
    pub third: Option<[Mat3<T>; 3]>,
}

impl<T: Real> PotentialSample<T> {
    pub fn zero() -> Self {
        Self { value: T::zero(), gradient: Vec3::zeros(), hessian: Mat3::zeros(), third: None }
    }
}

/// Axis-aligned box a basis can be queried in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Domain<T> {
    pub fn contains(&self, p: &Vec3<T>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Largest `t >= 0` such that `origin + t * dir` stays inside.
    pub fn exit_distance(&self, origin: &Vec3<T>, dir: &Vec3<T>) -> T {
        let mut t = T::max_value().unwrap_or_else(|| lit(1e300));
        for i in 0..3 {
            if dir[i] > T::zero() {
                t = t.min((self.max[i] - origin[i]) / dir[i]);
            } else if dir[i] < T::zero() {
                t = t.min((self.min[i] - origin[i]) / dir[i]);
            }
        }
        t.max(T::zero())
    }
}

/// Per-electrode potentials at query points.
///
/// Rows of the voltage solver's linear system come from here. Implementors
/// return potentials per applied volt; voltages scale them linearly.
pub trait ElectrodeBasis<T: Real>: Send + Sync {
    fn electrode_names(&self) -> &[String];

    fn electrode_count(&self) -> usize {
        self.electrode_names().len()
    }

    fn domain(&self) -> Domain<T>;

    fn sample(&self, electrode: usize, point: &Vec3<T>) -> Result<PotentialSample<T>, TrapError>;

    /// Potential value only. Override when it is much cheaper than `sample`.
    fn potential(&self, electrode: usize, point: &Vec3<T>) -> Result<T, TrapError> {
        Ok(self.sample(electrode, point)?.value)
    }

    fn sample_all(&self, point: &Vec3<T>) -> Result<Vec<PotentialSample<T>>, TrapError> {
        (0..self.electrode_count()).map(|e| self.sample(e, point)).collect()
    }
}

pub(crate) fn unknown_point<T: Real>(p: &Vec3<T>) -> TrapError {
    TrapError::UnknownPoint { x: to_f64(p[0]), y: to_f64(p[1]), z: to_f64(p[2]) }
}

/// Basis loaded from sampled data.
///
/// Queries at a stored point return the stored data. Queries within
/// `interpolation_radius` of a stored point use the second-order Taylor
/// expansion about the nearest one; anything further is an unknown point.
#[derive(Clone, Debug)]
pub struct SampledBasis<T> {
    names: Vec<String>,
    points: Vec<Vec3<T>>,
    /// `[electrode][point]`
    samples: Vec<Vec<PotentialSample<T>>>,
    interpolation_radius: T,
}

const EXACT_MATCH: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

impl<T: Real> SampledBasis<T> {
    pub fn new(
        names: Vec<String>,
        points: Vec<Vec3<T>>,
        samples: Vec<Vec<PotentialSample<T>>>,
        interpolation_radius: T,
    ) -> Result<Self, TrapError> {
        if names.is_empty() || points.is_empty() {
            return Err(TrapError::Validation("basis needs at least one electrode and one point".into()));
        }
        if samples.len() != names.len() || samples.iter().any(|s| s.len() != points.len()) {
            return Err(TrapError::Validation("sample table does not match electrodes x points".into()));
        }
        for (e, row) in samples.iter().enumerate() {
            for (p, s) in row.iter().enumerate() {
                if !is_symmetric(&s.hessian) {
                    return Err(TrapError::Validation(format!(
                        "hessian of electrode {e} at point {p} is not symmetric"
                    )));
                }
            }
        }
        Ok(Self { names, points, samples, interpolation_radius })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn interpolation_radius(&self) -> T {
        self.interpolation_radius
    }

    fn nearest(&self, p: &Vec3<T>) -> (usize, T) {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (q - p).norm()))
            .fold((0, T::max_value().unwrap_or_else(|| lit(1e300))), |best, c| if c.1 < best.1 { c } else { best })
    }

    /// Tabulates any basis at the given points.
    pub fn tabulate(
        basis: &dyn ElectrodeBasis<T>,
        points: Vec<Vec3<T>>,
        interpolation_radius: T,
    ) -> Result<Self, TrapError> {
        let samples = (0..basis.electrode_count())
            .map(|e| {
                points
                    .iter()
                    .map(|p| {
                        basis.sample(e, p).map(|mut s| {
                            s.third = None;
                            s
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(basis.electrode_names().to_vec(), points, samples, interpolation_radius)
    }
}

fn is_symmetric<T: Real>(h: &Mat3<T>) -> bool {
    let scale = h.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let tol = lit::<T>(SYMMETRY_TOL) * scale;
    (0..3).all(|i| (0..3).all(|j| (h[(i, j)] - h[(j, i)]).abs() <= tol))
}

impl<T: Real> ElectrodeBasis<T> for SampledBasis<T> {
    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn domain(&self) -> Domain<T> {
        let r = Vec3::repeat(self.interpolation_radius);
        let mut min = self.points[0];
        let mut max = self.points[0];
        for p in &self.points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Domain { min: min - r, max: max + r }
    }

    fn sample(&self, electrode: usize, point: &Vec3<T>) -> Result<PotentialSample<T>, TrapError> {
        let row = self
            .samples
            .get(electrode)
            .ok_or_else(|| TrapError::Validation(format!("no electrode with index {electrode}")))?;
        let (i, dist) = self.nearest(point);
        let s = row[i];
        if dist <= lit(EXACT_MATCH) {
            return Ok(s);
        }
        if dist > self.interpolation_radius {
            return Err(unknown_point(point));
        }
        let d = point - self.points[i];
        let hd = s.hessian * d;
        Ok(PotentialSample {
            value: s.value + s.gradient.dot(&d) + lit::<T>(0.5) * d.dot(&hd),
            gradient: s.gradient + hd,
            hessian: s.hessian,
            third: None,
        })
    }
}

/// On-disk basis format. Points in µm, values in V/V, gradients in V/m per
/// volt, Hessians in V/m² per volt, all indexed `[electrode][point]`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub electrodes: Vec<ElectrodeEntry>,
    pub points: Vec<[f64; 3]>,
    pub values: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<[f64; 3]>>,
    pub hessians: Vec<Vec<[[f64; 3]; 3]>>,
    #[serde(default)]
    pub interpolation_radius_um: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeEntry {
    pub name: String,
}

impl BasisFile {
    pub fn load(path: impl AsRef<Path>) -> Result<SampledBasis<f64>, TrapError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses and validates basis JSON; every error carries a line number.
    pub fn parse(text: &str) -> Result<SampledBasis<f64>, TrapError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: BasisFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            TrapError::Schema {
                line: inner.line(),
                column: inner.column(),
                message: format!("{}: {}", e.path(), inner),
            }
        })?;
        file.into_basis(text)
    }

    fn into_basis(self, text: &str) -> Result<SampledBasis<f64>, TrapError> {
        let schema = |ptr: String, message: String| {
            let (line, column) = json_locate::locate(text, &ptr).unwrap_or((0, 0));
            TrapError::Schema { line, column, message: format!("{ptr}: {message}") }
        };
        let ne = self.electrodes.len();
        let np = self.points.len();
        if ne == 0 {
            return Err(schema("/electrodes".into(), "at least one electrode required".into()));
        }
        if np == 0 {
            return Err(schema("/points".into(), "at least one point required".into()));
        }
        for (key, len) in
            [("values", self.values.len()), ("gradients", self.gradients.len()), ("hessians", self.hessians.len())]
        {
            if len != ne {
                return Err(schema(format!("/{key}"), format!("expected {ne} electrode rows, found {len}")));
            }
        }
        let mut samples = Vec::with_capacity(ne);
        for e in 0..ne {
            for (key, len) in [
                ("values", self.values[e].len()),
                ("gradients", self.gradients[e].len()),
                ("hessians", self.hessians[e].len()),
            ] {
                if len != np {
                    return Err(schema(format!("/{key}/{e}"), format!("expected {np} points, found {len}")));
                }
            }
            let mut row = Vec::with_capacity(np);
            for p in 0..np {
                let h = Mat3::from_fn(|i, j| self.hessians[e][p][i][j]);
                if !is_symmetric(&h) {
                    return Err(schema(format!("/hessians/{e}/{p}"), "hessian is not symmetric".into()));
                }
                let all = std::iter::once(self.values[e][p]).chain(self.gradients[e][p]).chain(h.iter().copied());
                if all.into_iter().any(|x| !x.is_finite()) {
                    return Err(schema(format!("/values/{e}/{p}"), "non-finite entry".into()));
                }
                row.push(PotentialSample {
                    value: self.values[e][p],
                    gradient: Vec3::from(self.gradients[e][p]),
                    hessian: h,
                    third: None,
                });
            }
            samples.push(row);
        }
        let points = self.points.iter().map(|p| Vec3::from(units::um3(*p))).collect();
        let radius = self.interpolation_radius_um.unwrap_or(0.0) * units::MICRON;
        if radius < 0.0 {
            return Err(schema("/interpolation_radius_um".into(), "must be nonnegative".into()));
        }
        let names = self.electrodes.into_iter().map(|e| e.name).collect();
        SampledBasis::new(names, points, samples, radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_file() -> String {
        r#"{
  "electrodes": [{"name": "a"}, {"name": "b"}],
  "points": [[0, 0, 50], [10, 0, 50]],
  "values": [[1.0, 0.5], [0.0, 0.25]],
  "gradients": [[[1, 0, 0], [2, 0, 0]], [[0, 0, 0], [0, 1, 0]]],
  "hessians": [
    [[[1, 0, 0], [0, 1, 0], [0, 0, -2]], [[1, 0, 0], [0, 1, 0], [0, 0, -2]]],
    [[[0, 0, 0], [0, 0, 0], [0, 0, 0]], [[2, 1, 0], [1, 0, 0], [0, 0, -2]]]
  ],
  "interpolation_radius_um": 2.0
}"#
        .to_string()
    }

    #[test]
    fn parses_and_queries_points() {
        let b = BasisFile::parse(&small_file()).unwrap();
        assert_eq!(b.electrode_count(), 2);
        let p = Vec3::new(10e-6, 0.0, 50e-6);
        let s = b.sample(1, &p).unwrap();
        assert_eq!(s.value, 0.25);
        assert_eq!(s.hessian[(0, 1)], 1.0);
    }

    #[test]
    fn taylor_interpolation_near_point() {
        let b = BasisFile::parse(&small_file()).unwrap();
        let d = 1e-6;
        let s = b.sample(0, &Vec3::new(d, 0.0, 50e-6)).unwrap();
        assert!((s.value - (1.0 + d + 0.5 * d * d)).abs() < 1e-15);
        assert!((s.gradient[0] - (1.0 + d)).abs() < 1e-15);
        let err = b.sample(0, &Vec3::new(5e-6, 0.0, 50e-6)).unwrap_err();
        assert!(matches!(err, TrapError::UnknownPoint { .. }));
    }

    #[test]
    fn asymmetric_hessian_reports_line() {
        let text = small_file().replace("[[2, 1, 0], [1, 0, 0]", "[[2, 1, 0], [3, 0, 0]");
        match BasisFile::parse(&text).unwrap_err() {
            TrapError::Schema { line, message, .. } => {
                assert_eq!(line, 8, "{message}");
                assert!(message.contains("/hessians/1/1"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_lengths_and_types_report_lines() {
        let text = small_file().replace("[[1.0, 0.5], [0.0, 0.25]]", "[[1.0, 0.5], [0.0]]");
        match BasisFile::parse(&text).unwrap_err() {
            TrapError::Schema { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("expected 2 points"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        let text = small_file().replace("[10, 0, 50]", "[10, 0]");
        match BasisFile::parse(&text).unwrap_err() {
            TrapError::Schema { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let text = small_file().replace("\"interpolation_radius_um\"", "\"radius\"");
        let e = BasisFile::parse(&text).unwrap_err();
        assert!(matches!(e, TrapError::Schema { line: 10, .. }), "{e}");
    }

    #[test]
    fn domain_exit_distance() {
        let d = Domain { min: Vec3::new(-1.0, -1.0, 0.0), max: Vec3::new(1.0, 1.0, 2.0) };
        let t = d.exit_distance(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(t, 1.0);
        let t = d.exit_distance(&Vec3::new(0.5, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(t, 0.5);
    }
}
