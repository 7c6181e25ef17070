//! Multi-well DC voltage solutions.
//!
//! Each well contributes four linear constraints on the electrode voltages:
//! the three field components at the well cancel the ambient (compensation)
//! field, and the axial potential curvature equals the target. Constraints of
//! all wells are stacked into one system and solved for the minimum-norm
//! least-squares voltages, with an active-set pass enforcing `|v| <= bound`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::num::{lit, to_f64, Real, Vec3};
use crate::trap::{ElectrodeBasis, IonSpecies, TrapError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("no solution within bounds: best residual norm {residual_norm:.3e}")]
    Infeasible { residual_norm: f64, voltages: Vec<f64> },
    #[error("shuttle step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<SolveError>,
    },
}

/// A requested trapping site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellSpec<T> {
    /// m
    pub position: Vec3<T>,
    /// Target axial potential curvature d²φ/dx², V/m².
    pub curvature: T,
    /// Ambient field at the site to cancel, V/m.
    pub compensation: Vec3<T>,
}

impl<T: Real> WellSpec<T> {
    pub fn new(position: Vec3<T>, curvature: T) -> Self {
        Self { position, curvature, compensation: Vec3::zeros() }
    }

    /// Well whose axial secular frequency is `omega` (rad/s) for `species`.
    pub fn with_frequency(position: Vec3<T>, omega: T, species: &IonSpecies<T>) -> Self {
        Self::new(position, species.curvature_for_frequency(omega))
    }

    pub fn compensated(mut self, field: Vec3<T>) -> Self {
        self.compensation = field;
        self
    }

    fn validate(&self) -> Result<(), SolveError> {
        if !(self.curvature > T::zero()) {
            return Err(SolveError::Validation("target curvature must be positive".into()));
        }
        Ok(())
    }

    fn lerp(&self, other: &Self, s: T) -> Self {
        let one = T::one();
        Self {
            position: self.position * (one - s) + other.position * s,
            curvature: self.curvature * (one - s) + other.curvature * s,
            compensation: self.compensation * (one - s) + other.compensation * s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Ex,
    Ey,
    Ez,
    Curvature,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 4] = [Self::Ex, Self::Ey, Self::Ez, Self::Curvature];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ex => "Ex",
            Self::Ey => "Ey",
            Self::Ez => "Ez",
            Self::Curvature => "d2/dx2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RowLabel {
    pub well: usize,
    pub kind: ConstraintKind,
}

/// `A v = b` with one labelled row per (well, constraint kind).
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem<T: Real> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
    pub labels: Vec<RowLabel>,
}

impl<T: Real> ConstraintSystem<T> {
    pub fn new(matrix: DMatrix<T>, rhs: DVector<T>, labels: Vec<RowLabel>) -> Result<Self, SolveError> {
        if matrix.nrows() != rhs.len() || matrix.nrows() != labels.len() {
            return Err(SolveError::Validation("matrix, rhs and labels disagree in row count".into()));
        }
        Ok(Self { matrix, rhs, labels })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn electrodes(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn residuals(&self, voltages: &[T]) -> DVector<T> {
        &self.matrix * DVector::from_column_slice(voltages) - &self.rhs
    }

    /// Keeps only the rows whose label satisfies `keep`.
    pub fn select(&self, keep: impl Fn(&RowLabel) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.rows()).filter(|&i| keep(&self.labels[i])).collect();
        Self {
            matrix: self.matrix.select_rows(idx.iter()),
            rhs: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.rhs[i])),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Stacks the four constraints of every well.
///
/// Field rows hold the field per volt `-∇φᵢ` and target `-E_comp`, so the
/// electrode field cancels the ambient one. The curvature row holds
/// `∂²φᵢ/∂x²` and targets the well's curvature.
pub fn build_constraints<T: Real>(
    wells: &[WellSpec<T>],
    basis: &dyn ElectrodeBasis<T>,
) -> Result<ConstraintSystem<T>, SolveError> {
    if wells.is_empty() {
        return Err(SolveError::Validation("at least one well required".into()));
    }
    for (i, w) in wells.iter().enumerate() {
        w.validate()?;
        if !basis.domain().contains(&w.position) {
            return Err(SolveError::Trap(crate::trap::TrapError::UnknownPoint {
                x: to_f64(w.position[0]),
                y: to_f64(w.position[1]),
                z: to_f64(w.position[2]),
            }));
        }
        for (j, other) in wells[..i].iter().enumerate() {
            if (w.position - other.position).norm() <= lit(1e-12) {
                return Err(SolveError::Validation(format!("wells {j} and {i} share a position")));
            }
        }
    }
    let n = basis.electrode_count();
    let rows = 4 * wells.len();
    let mut matrix = DMatrix::zeros(rows, n);
    let mut rhs = DVector::zeros(rows);
    let mut labels = Vec::with_capacity(rows);
    for (w, well) in wells.iter().enumerate() {
        let samples = basis.sample_all(&well.position)?;
        let r = 4 * w;
        for (e, s) in samples.iter().enumerate() {
            for axis in 0..3 {
                matrix[(r + axis, e)] = -s.gradient[axis];
            }
            matrix[(r + 3, e)] = s.hessian[(0, 0)];
        }
        for axis in 0..3 {
            rhs[r + axis] = -well.compensation[axis];
        }
        rhs[r + 3] = well.curvature;
        labels.extend(ConstraintKind::ALL.iter().map(|&kind| RowLabel { well: w, kind }));
    }
    Ok(ConstraintSystem { matrix, rhs, labels })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompensationMode {
    /// Compensation enters the field rows' right-hand side.
    InSystem,
    /// Solve without compensation, then add a separate field-only solution.
    Additive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions<T> {
    /// Voltage limit, V (symmetric).
    pub bound: T,
    /// Per-row residual tolerance relative to `|bᵢ| + ‖Aᵢ‖·‖v‖∞`.
    pub tolerance: T,
    /// Zero out electrodes whose removal keeps the residual within tolerance.
    pub sparsify: bool,
    pub compensation: CompensationMode,
}

impl<T: Real> SolveOptions<T> {
    pub fn with_bound(bound: T) -> Self {
        Self { bound, tolerance: lit(1e-9), sparsify: false, compensation: CompensationMode::InSystem }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoltageSolution<T> {
    /// V per electrode
    pub voltages: Vec<T>,
    /// `A v − b` per constraint row.
    pub residuals: Vec<T>,
    /// Electrodes sitting at the voltage bound.
    pub clipped: Vec<bool>,
    /// Electrodes forced to zero by the sparsity pass.
    pub zeroed: Vec<bool>,
}

impl<T: Real> VoltageSolution<T> {
    pub fn residual_norm(&self) -> T {
        self.residuals.iter().fold(T::zero(), |a, r| a + *r * *r).sqrt()
    }

    pub fn max_abs_voltage(&self) -> T {
        self.voltages.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Minimum-norm least-squares solution `A⁺ b` through the SVD.
///
/// Two rounds of iterative refinement follow the initial solve so that rows
/// much smaller than the largest (field rows next to curvature rows) are
/// still satisfied to near machine precision. Each correction lies in the
/// row space, so the minimum-norm property is kept.
pub fn min_norm_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().fold(T::zero(), |m, s| m.max(*s));
    let cutoff = smax * lit(RANK_CUTOFF);
    let apply = |rhs: &DVector<T>| {
        let utb = u.transpose() * rhs;
        let mut y = DVector::zeros(svd.singular_values.len());
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > cutoff {
                y[i] = utb[i] / *s;
            }
        }
        vt.transpose() * y
    };
    let mut x = apply(b);
    for _ in 0..2 {
        let r = b - a * &x;
        x += apply(&r);
    }
    x
}

/// Box-constrained least squares, `|xᵢ| <= bound`, with `zeroed` columns
/// pinned at 0.
///
/// Lawson-Hanson style active set: start from the feasible origin with all
/// columns free, take minimum-norm steps over the free set, stop short at the
/// first bound and pin it, and release pinned columns whose gradient points
/// back into the box. Returns the solution and the pinned-at-bound flags.
fn bounded_lsq<T: Real>(a: &DMatrix<T>, b: &DVector<T>, bound: T, zeroed: &[bool]) -> (DVector<T>, Vec<bool>) {
    let n = a.ncols();
    let mut x = DVector::<T>::zeros(n);
    // None = free, Some(±1) = pinned at ±bound
    let mut pinned: Vec<Option<T>> = vec![None; n];
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())) * (b.norm() + T::one());
    let grad_tol = scale * lit(1e-12);
    let slack = bound * lit(1e-12);

    let max_outer = 4 * n + 10;
    for _ in 0..max_outer {
        // inner: minimum-norm over free set, backtracking into the box
        for _ in 0..(2 * n + 2) {
            let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none() && !zeroed[i]).collect();
            let mut r = b.clone();
            for i in 0..n {
                if let Some(sign) = pinned[i] {
                    r -= a.column(i) * (sign * bound);
                }
            }
            let sub = a.select_columns(free.iter());
            let z = min_norm_solve(&sub, &r);
            let mut alpha = T::one();
            let mut hit = None;
            for (k, &i) in free.iter().enumerate() {
                let zi = z[k];
                if zi.abs() > bound + slack {
                    let target = if zi > T::zero() { bound } else { -bound };
                    let step = (target - x[i]) / (zi - x[i]);
                    if step < alpha {
                        alpha = step;
                        hit = Some(i);
                    }
                }
            }
            for (k, &i) in free.iter().enumerate() {
                let xi = x[i];
                x[i] = xi + (z[k] - xi) * alpha;
            }
            match hit {
                None => break,
                Some(_) => {
                    for &i in &free {
                        if x[i].abs() >= bound - slack {
                            let sign = if x[i] > T::zero() { T::one() } else { -T::one() };
                            pinned[i] = Some(sign);
                            x[i] = sign * bound;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            if let Some(sign) = pinned[i] {
                x[i] = sign * bound;
            }
        }
        // outer: release the pinned column with the largest inward gradient
        let w = a.transpose() * (b - a * &x);
        let mut best: Option<(usize, T)> = None;
        for i in 0..n {
            if let Some(sign) = pinned[i] {
                let inward = -sign * w[i];
                if inward > grad_tol && best.is_none_or(|(_, g)| inward > g) {
                    best = Some((i, inward));
                }
            }
        }
        match best {
            Some((i, _)) => pinned[i] = None,
            None => break,
        }
    }
    let clipped = pinned.iter().map(Option::is_some).collect();
    (x, clipped)
}

/// Per-row check that `x` is as good as the reference residual `r_ref`
/// to within `tol` of the row's natural scale.
fn within_tolerance<T: Real>(system: &ConstraintSystem<T>, x: &DVector<T>, r_ref: &DVector<T>, tol: T) -> bool {
    let r = &system.matrix * x - &system.rhs;
    let vmax = x.amax().max(T::one());
    (0..system.rows()).all(|i| {
        let row_scale = system.rhs[i].abs() + system.matrix.row(i).norm() * vmax;
        r[i].abs() <= r_ref[i].abs() + tol * row_scale
    })
}

fn package<T: Real>(
    system: &ConstraintSystem<T>,
    x: DVector<T>,
    clipped: Vec<bool>,
    zeroed: Vec<bool>,
) -> VoltageSolution<T> {
    let residuals = (&system.matrix * &x - &system.rhs).iter().copied().collect();
    VoltageSolution { voltages: x.iter().copied().collect(), residuals, clipped, zeroed }
}

/// Minimum-norm least-squares voltages, re-solved under `|v| <= bound` when
/// the unconstrained solution exceeds it.
///
/// A bounded solution is accepted when every row residual is within
/// tolerance of the unconstrained least-squares residual; otherwise the
/// system is infeasible under the bound and the best bounded solution is
/// returned inside the error.
pub fn solve_voltages<T: Real>(
    system: &ConstraintSystem<T>,
    options: &SolveOptions<T>,
) -> Result<VoltageSolution<T>, SolveError> {
    if system.rows() == 0 || system.electrodes() == 0 {
        return Err(SolveError::Validation("empty constraint system".into()));
    }
    if !(options.bound > T::zero()) {
        return Err(SolveError::Validation("voltage bound must be positive".into()));
    }
    let n = system.electrodes();
    let mut zeroed = vec![false; n];
    let unconstrained = min_norm_solve(&system.matrix, &system.rhs);
    let r_ls = &system.matrix * &unconstrained - &system.rhs;
    let (mut x, mut clipped) = solve_masked(system, options.bound, &zeroed);
    if !within_tolerance(system, &x, &r_ls, options.tolerance) {
        return Err(SolveError::Infeasible {
            residual_norm: to_f64((&system.matrix * &x - &system.rhs).norm()),
            voltages: x.iter().map(|v| to_f64(*v)).collect(),
        });
    }
    if options.sparsify {
        let mut order: Vec<usize> = (0..n).collect();
        order
            .sort_by(|&i, &j| x[i].abs().partial_cmp(&x[j].abs()).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
        for i in order {
            zeroed[i] = true;
            let (xt, ct) = solve_masked(system, options.bound, &zeroed);
            if within_tolerance(system, &xt, &r_ls, options.tolerance) {
                x = xt;
                clipped = ct;
            } else {
                zeroed[i] = false;
            }
        }
    }
    Ok(package(system, x, clipped, zeroed))
}

fn solve_masked<T: Real>(system: &ConstraintSystem<T>, bound: T, zeroed: &[bool]) -> (DVector<T>, Vec<bool>) {
    let n = system.electrodes();
    let free: Vec<usize> = (0..n).filter(|&i| !zeroed[i]).collect();
    let sub = system.matrix.select_columns(free.iter());
    let z = min_norm_solve(&sub, &system.rhs);
    let mut x = DVector::zeros(n);
    for (k, &i) in free.iter().enumerate() {
        x[i] = z[k];
    }
    if x.amax() <= bound {
        return (x, vec![false; n]);
    }
    bounded_lsq(&system.matrix, &system.rhs, bound, zeroed)
}

/// Builds and solves the system for `wells`, honouring the compensation mode.
pub fn solve_wells<T: Real>(
    wells: &[WellSpec<T>],
    basis: &dyn ElectrodeBasis<T>,
    options: &SolveOptions<T>,
) -> Result<VoltageSolution<T>, SolveError> {
    let system = build_constraints(wells, basis)?;
    match options.compensation {
        CompensationMode::InSystem => solve_voltages(&system, options),
        CompensationMode::Additive => {
            let bare: Vec<WellSpec<T>> = wells.iter().map(|w| w.compensated(Vec3::zeros())).collect();
            let base = solve_voltages(&build_constraints(&bare, basis)?, options)?;
            let fields = system.select(|l| l.kind != ConstraintKind::Curvature);
            let shim = min_norm_solve(&fields.matrix, &fields.rhs);
            let x = DVector::from_iterator(
                base.voltages.len(),
                base.voltages.iter().zip(shim.iter()).map(|(a, b)| *a + *b),
            );
            if x.amax() > options.bound + options.bound * lit(1e-12) {
                return Err(SolveError::Infeasible {
                    residual_norm: to_f64((&system.matrix * &x - &system.rhs).norm()),
                    voltages: x.iter().map(|v| to_f64(*v)).collect(),
                });
            }
            let clipped = x.iter().map(|v| v.abs() >= options.bound * lit(1.0 - 1e-12)).collect();
            Ok(package(&system, x, clipped, base.zeroed))
        }
    }
}

/// Interpolated well configurations for a shuttling waveform.
pub fn interpolate_wells<T: Real>(
    start: &[WellSpec<T>],
    end: &[WellSpec<T>],
    steps: usize,
) -> Result<Vec<Vec<WellSpec<T>>>, SolveError> {
    if start.len() != end.len() {
        return Err(SolveError::Validation(format!("start has {} wells but end has {}", start.len(), end.len())));
    }
    if steps < 2 {
        return Err(SolveError::Validation("a waveform needs at least 2 steps".into()));
    }
    Ok((0..steps)
        .map(|k| {
            let s: T = lit(k as f64 / (steps - 1) as f64);
            start.iter().zip(end).map(|(a, b)| a.lerp(b, s)).collect()
        })
        .collect())
}

/// Voltage solutions along linearly interpolated well positions, curvatures
/// and compensation fields. Steps are solved in parallel; the result does not
/// depend on scheduling.
pub fn shuttle_waveform<T: Real>(
    start: &[WellSpec<T>],
    end: &[WellSpec<T>],
    steps: usize,
    basis: &dyn ElectrodeBasis<T>,
    options: &SolveOptions<T>,
) -> Result<Vec<VoltageSolution<T>>, SolveError> {
    let frames = interpolate_wells(start, end, steps)?;
    frames
        .par_iter()
        .enumerate()
        .map(|(index, wells)| {
            solve_wells(wells, basis, options).map_err(|e| SolveError::Step { index, source: Box::new(e) })
        })
        .collect()
}
