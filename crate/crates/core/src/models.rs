//! Reaction terms, velocity fields and diffusivities, with sampled checks of
//! the structural hypotheses the theory relies on.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{Axis, Expr};
use crate::grid::{Grid, Point, ScalarField};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(f64, Point, f64) -> f64 + Send + Sync>;

/// Tolerance on the boundary normal component when tangency is required.
pub const TANGENTIAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReactionFlags {
    pub strictly_concave: bool,
    pub nonnegative_on_unit: bool,
    pub autonomous: bool,
}

/// A reaction term `f(t, x, u)` with its `u`-derivative and a bound `M` on it over `u ∈ [0, 1]`.
#[derive(Clone)]
pub struct ReactionModel {
    name: String,
    eval: ReactionFn,
    deriv: ReactionFn,
    lipschitz_m: f64,
    flags: ReactionFlags,
}

impl fmt::Debug for ReactionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactionModel")
            .field("name", &self.name)
            .field("lipschitz_m", &self.lipschitz_m)
            .field("flags", &self.flags)
            .finish()
    }
}

/// Looks up one of the parameter-free reactions: `zero`, `logistic`, `convex_negative`.
pub fn builtin_reaction(name: &str) -> Result<ReactionModel> {
    match name {
        "zero" => Ok(ReactionModel::zero()),
        "logistic" => Ok(ReactionModel::logistic()),
        "convex_negative" => Ok(ReactionModel::convex_negative()),
        "heterogeneous_logistic" => Err(Error::InvalidModel(
            "heterogeneous_logistic needs a rate field r(x); use ReactionModel::heterogeneous_logistic".into(),
        )),
        other => Err(Error::InvalidModel(format!("unknown reaction {other:?}"))),
    }
}

impl ReactionModel {
    pub fn new(
        name: impl Into<String>,
        eval: ReactionFn,
        deriv: ReactionFn,
        lipschitz_m: f64,
        flags: ReactionFlags,
    ) -> Result<Self> {
        if !(lipschitz_m.is_finite() && lipschitz_m >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "Lipschitz bound must be finite and non-negative, got {lipschitz_m}"
            )));
        }
        Ok(Self {
            name: name.into(),
            eval,
            deriv,
            lipschitz_m,
            flags,
        })
    }

    pub fn zero() -> Self {
        Self {
            name: "zero".into(),
            eval: Arc::new(|_, _, _| 0.0),
            deriv: Arc::new(|_, _, _| 0.0),
            lipschitz_m: 0.0,
            flags: ReactionFlags {
                strictly_concave: false,
                nonnegative_on_unit: true,
                autonomous: true,
            },
        }
    }

    /// `f(u) = u(1 - u)`.
    pub fn logistic() -> Self {
        Self {
            name: "logistic".into(),
            eval: Arc::new(|_, _, u| u * (1.0 - u)),
            deriv: Arc::new(|_, _, u| 1.0 - 2.0 * u),
            lipschitz_m: 1.0,
            flags: ReactionFlags {
                strictly_concave: true,
                nonnegative_on_unit: true,
                autonomous: true,
            },
        }
    }

    /// `f(u) = u(u - 1)`: strictly convex and non-positive on `[0, 1]`.
    pub fn convex_negative() -> Self {
        Self {
            name: "convex_negative".into(),
            eval: Arc::new(|_, _, u| u * (u - 1.0)),
            deriv: Arc::new(|_, _, u| 2.0 * u - 1.0),
            lipschitz_m: 1.0,
            flags: ReactionFlags {
                strictly_concave: false,
                nonnegative_on_unit: false,
                autonomous: true,
            },
        }
    }

    /// `f(x, u) = r(x) u (1 - u)` with `M = max r` sampled on the cells and faces of `grid`.
    pub fn heterogeneous_logistic(r: ScalarFn, grid: &Grid) -> Result<Self> {
        let mut pts = grid.cell_centers();
        pts.extend(grid.boundary_faces().iter().map(|f| f.center));
        let samples: Vec<f64> = pts.iter().map(|&p| r(p)).collect();
        let r_min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let r_max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(r_min >= 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "rate field must be bounded and non-negative, sampled range [{r_min}, {r_max}]"
            )));
        }
        let r_eval = r.clone();
        Ok(Self {
            name: "heterogeneous_logistic".into(),
            eval: Arc::new(move |_, x, u| r_eval(x) * u * (1.0 - u)),
            deriv: Arc::new(move |_, x, u| r(x) * (1.0 - 2.0 * u)),
            lipschitz_m: r_max,
            flags: ReactionFlags {
                strictly_concave: r_min > 0.0,
                nonnegative_on_unit: true,
                autonomous: true,
            },
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, t: f64, x: Point, u: f64) -> f64 {
        (self.eval)(t, x, u)
    }

    #[inline]
    pub fn deriv(&self, t: f64, x: Point, u: f64) -> f64 {
        (self.deriv)(t, x, u)
    }

    pub fn lipschitz_m(&self) -> f64 {
        self.lipschitz_m
    }

    pub fn flags(&self) -> ReactionFlags {
        self.flags
    }

    /// Samples the hypotheses on a `u`-lattice of spacing `du` at the given points and times.
    pub fn check_hypotheses(&self, points: &[Point], times: &[f64], du: f64) -> ReactionCheck {
        let steps = (1.0 / du).round() as usize;
        let us: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
        let mut out = ReactionCheck::default();
        for &t in times {
            for &x in points {
                out.endpoint_residual = out
                    .endpoint_residual
                    .max(self.eval(t, x, 0.0).abs())
                    .max(self.eval(t, x, 1.0).abs());
                let vals: Vec<f64> = us.iter().map(|&u| self.eval(t, x, u)).collect();
                for (&u, &v) in us.iter().zip(&vals) {
                    out.derivative_excess = out
                        .derivative_excess
                        .max(self.deriv(t, x, u).abs() - self.lipschitz_m);
                    out.min_value = out.min_value.min(v);
                }
                // Second divided differences over consecutive lattice triples.
                for w in vals.windows(3) {
                    let dd = (w[2] - 2.0 * w[1] + w[0]) / (du * du);
                    out.max_second_difference = out.max_second_difference.max(dd);
                }
            }
        }
        out
    }
}

/// Worst-case residuals from [`ReactionModel::check_hypotheses`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionCheck {
    /// `max |f(t,x,0)|, |f(t,x,1)|`.
    pub endpoint_residual: f64,
    /// `max |∂f/∂u| - M`; non-positive when the bound holds.
    pub derivative_excess: f64,
    /// Largest second divided difference in `u`; negative for strictly concave `f`.
    pub max_second_difference: f64,
    pub min_value: f64,
}

impl Default for ReactionCheck {
    fn default() -> Self {
        Self {
            endpoint_residual: 0.0,
            derivative_excess: f64::NEG_INFINITY,
            max_second_difference: f64::NEG_INFINITY,
            min_value: f64::INFINITY,
        }
    }
}

impl ReactionCheck {
    pub fn endpoints_vanish(&self) -> bool {
        self.endpoint_residual <= 1e-14
    }

    pub fn lipschitz_holds(&self) -> bool {
        self.derivative_excess <= 1e-12
    }

    pub fn sampled_strictly_concave(&self) -> bool {
        self.max_second_difference < 0.0
    }

    pub fn sampled_nonnegative(&self) -> bool {
        self.min_value >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPolicy {
    /// `q·ν = 0` on every boundary face; violations are validation errors.
    RequireTangential,
    /// Normal components are kept and the resulting flux is logged.
    AllowNonzeroNormal,
}

impl BoundaryPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryPolicy::RequireTangential => "require_tangential",
            BoundaryPolicy::AllowNonzeroNormal => "allow_nonzero_normal",
        }
    }
}

impl std::str::FromStr for BoundaryPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "require_tangential" => Ok(Self::RequireTangential),
            "allow_nonzero_normal" => Ok(Self::AllowNonzeroNormal),
            other => Err(Error::InvalidModel(format!("unknown boundary policy {other:?}"))),
        }
    }
}

/// A velocity field `q` sampled on a grid, with amplitude `A` kept separate.
#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: Arc<Grid>,
    /// Normal component of `q` at every face slot, per axis.
    face_q: [Arc<Vec<f64>>; 2],
    cell_q: Arc<Vec<[f64; 2]>>,
    divergence: ScalarField,
    /// Divergence at boundary face centers, so `α` and `B` cover the closure of Ω.
    boundary_divergence: Arc<Vec<f64>>,
    raw_boundary_normal: f64,
    analytic_divergence: bool,
    amplitude: f64,
    policy: BoundaryPolicy,
}

impl VelocityField {
    pub fn zero(grid: Arc<Grid>) -> Self {
        let nb = grid.boundary_faces().len();
        Self {
            face_q: [
                Arc::new(vec![0.0; grid.face_slots(0)]),
                Arc::new(vec![0.0; if grid.dim() == 2 { grid.face_slots(1) } else { 0 }]),
            ],
            cell_q: Arc::new(vec![[0.0; 2]; grid.cell_count()]),
            divergence: ScalarField::constant(grid.clone(), 0.0),
            boundary_divergence: Arc::new(vec![0.0; nb]),
            raw_boundary_normal: 0.0,
            analytic_divergence: true,
            amplitude: 0.0,
            policy: BoundaryPolicy::RequireTangential,
            grid,
        }
    }

    /// Samples `q` on `grid`. Without an analytic divergence, central differences
    /// over half-cell offsets are used.
    pub fn from_fn(
        grid: Arc<Grid>,
        q: VectorFn,
        divergence: Option<ScalarFn>,
        amplitude: f64,
        policy: BoundaryPolicy,
    ) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "amplitude must be finite and non-negative, got {amplitude}"
            )));
        }
        let dim = grid.dim();
        let analytic = divergence.is_some();
        let div: ScalarFn = match divergence {
            Some(d) => d,
            None => {
                let h = grid.spacing().to_vec();
                let q = q.clone();
                Arc::new(move |p: Point| {
                    let mut s = 0.0;
                    for (axis, &ha) in h.iter().enumerate().take(dim) {
                        let (mut a, mut b) = (p, p);
                        a[axis] += 0.5 * ha;
                        b[axis] -= 0.5 * ha;
                        s += (q(a)[axis] - q(b)[axis]) / ha;
                    }
                    s
                })
            }
        };

        let mut face_q: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (axis, slot) in face_q.iter_mut().enumerate().take(dim) {
            *slot = grid
                .face_centers(axis)
                .into_iter()
                .map(|p| q(p)[axis])
                .collect();
        }
        let bfaces = grid.boundary_faces();
        let mut raw_boundary_normal: f64 = 0.0;
        for f in &bfaces {
            raw_boundary_normal = raw_boundary_normal.max(face_q[f.axis][f.slot].abs());
        }
        if policy == BoundaryPolicy::RequireTangential && raw_boundary_normal <= TANGENTIAL_TOL {
            for f in &bfaces {
                face_q[f.axis][f.slot] = 0.0;
            }
        }
        let cell_q: Vec<[f64; 2]> = grid
            .cell_centers()
            .into_iter()
            .map(|p| {
                let v = q(p);
                if dim == 1 {
                    [v[0], 0.0]
                } else {
                    v
                }
            })
            .collect();
        let divergence = ScalarField::from_fn(grid.clone(), |p| div(p));
        let boundary_divergence: Vec<f64> = bfaces.iter().map(|f| div(f.center)).collect();
        let [fx, fy] = face_q;
        Ok(Self {
            grid,
            face_q: [Arc::new(fx), Arc::new(fy)],
            cell_q: Arc::new(cell_q),
            divergence,
            boundary_divergence: Arc::new(boundary_divergence),
            raw_boundary_normal,
            analytic_divergence: analytic,
            amplitude,
            policy,
        })
    }

    /// One expression per axis; the divergence is taken symbolically.
    pub fn from_exprs(
        grid: Arc<Grid>,
        components: &[Expr],
        amplitude: f64,
        policy: BoundaryPolicy,
    ) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::InvalidModel(format!(
                "velocity needs {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        let div_terms: Vec<Expr> = components
            .iter()
            .zip([Axis::X, Axis::Y])
            .map(|(e, a)| e.derivative(a))
            .collect();
        let comps: Vec<Expr> = components.to_vec();
        let q: VectorFn = Arc::new(move |p| {
            let mut v = [0.0; 2];
            for (k, e) in comps.iter().enumerate() {
                v[k] = e.eval(p);
            }
            v
        });
        let div: ScalarFn = Arc::new(move |p| div_terms.iter().map(|e| e.eval(p)).sum());
        Self::from_fn(grid, q, Some(div), amplitude, policy)
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn policy(&self) -> BoundaryPolicy {
        self.policy
    }

    pub fn has_analytic_divergence(&self) -> bool {
        self.analytic_divergence
    }

    /// Unscaled normal component of `q` at a face slot.
    #[inline]
    pub fn face_q(&self, axis: usize, slot: usize) -> f64 {
        self.face_q[axis][slot]
    }

    /// `A·q·e_axis` at a face slot.
    #[inline]
    pub fn face_velocity(&self, axis: usize, slot: usize) -> f64 {
        self.amplitude * self.face_q[axis][slot]
    }

    pub fn cell_q(&self) -> &[[f64; 2]] {
        &self.cell_q
    }

    /// `∇·q` at cell centers (unscaled).
    pub fn divergence(&self) -> &ScalarField {
        &self.divergence
    }

    /// Largest `|q_axis|` over the faces normal to each axis.
    pub fn max_face_speed(&self, axis: usize) -> f64 {
        self.face_q[axis].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0
            || self.face_q.iter().all(|f| f.iter().all(|&v| v == 0.0))
    }
}

/// Summary statistics of a velocity field against the divergence and tangency hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    /// `max ∇·q` over cell centers and boundary faces.
    pub alpha: f64,
    /// `max |∇·q|`.
    pub div_bound_b: f64,
    /// `max |q|`.
    pub sup_q_gamma: f64,
    pub max_boundary_normal: f64,
    pub divergence_integral: f64,
    pub policy: BoundaryPolicy,
    pub warnings: Vec<String>,
}

pub const CONFLICT_WARNING: &str = "negative maximal divergence together with a tangential boundary \
     field is inconsistent: the divergence theorem forces the integral of div q to vanish";

/// Computes `α`, `B`, `γ`, the boundary normal component and `∫ ∇·q`.
pub fn validate_field(q: &VelocityField, grid: &Grid) -> Result<FieldReport> {
    if **q.grid() != *grid {
        return Err(Error::FieldValidation("velocity sampled on a different grid".into()));
    }
    if q.policy == BoundaryPolicy::RequireTangential && q.raw_boundary_normal > TANGENTIAL_TOL {
        return Err(Error::FieldValidation(format!(
            "boundary normal component {:e} exceeds {TANGENTIAL_TOL:e} under require_tangential",
            q.raw_boundary_normal
        )));
    }
    let divs = q
        .divergence
        .values()
        .iter()
        .chain(q.boundary_divergence.iter());
    let (mut alpha, mut b) = (f64::NEG_INFINITY, 0.0_f64);
    for &d in divs {
        alpha = alpha.max(d);
        b = b.max(d.abs());
    }
    let mut gamma = q
        .cell_q
        .iter()
        .fold(0.0_f64, |m, v| m.max((v[0] * v[0] + v[1] * v[1]).sqrt()));
    for axis in 0..grid.dim() {
        gamma = gamma.max(q.max_face_speed(axis));
    }
    let mut warnings = Vec::new();
    if alpha < 0.0 && q.policy == BoundaryPolicy::RequireTangential {
        warnings.push(CONFLICT_WARNING.to_string());
    }
    Ok(FieldReport {
        alpha,
        div_bound_b: b,
        sup_q_gamma: gamma,
        max_boundary_normal: q.raw_boundary_normal,
        divergence_integral: q.divergence.integrate(),
        policy: q.policy,
        warnings,
    })
}

#[derive(Clone)]
pub enum Diffusivity {
    Constant(f64),
    Field(ScalarFn),
}

impl fmt::Debug for Diffusivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusivity::Constant(s) => write!(f, "Constant({s})"),
            Diffusivity::Field(_) => write!(f, "Field(..)"),
        }
    }
}

/// Scalar diffusivity bounded below by `theta`.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    kind: Diffusivity,
    theta: f64,
}

impl DiffusionModel {
    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidModel(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            kind: Diffusivity::Constant(sigma),
            theta: sigma,
        })
    }

    /// Variable `D(x)`; every sampled value on `grid` must be at least `theta > 0`.
    pub fn field(d: ScalarFn, theta: f64, grid: &Grid) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidModel(format!("theta must be positive, got {theta}")));
        }
        let model = Self {
            kind: Diffusivity::Field(d),
            theta,
        };
        let min = model.cell_values(grid).into_iter().fold(f64::INFINITY, f64::min);
        if !(min.is_finite() && min >= theta) {
            return Err(Error::InvalidModel(format!(
                "diffusivity sampled minimum {min} is below theta {theta}"
            )));
        }
        Ok(model)
    }

    pub fn kind(&self) -> &Diffusivity {
        &self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn cell_values(&self, grid: &Grid) -> Vec<f64> {
        match &self.kind {
            Diffusivity::Constant(s) => vec![*s; grid.cell_count()],
            Diffusivity::Field(d) => grid.cell_centers().into_iter().map(|p| d(p)).collect(),
        }
    }

    /// Harmonic mean of the two adjacent cell diffusivities.
    pub fn face_value(cell_values: &[f64], left: usize, right: usize) -> f64 {
        let (a, b) = (cell_values[left], cell_values[right]);
        if a == b {
            a
        } else {
            2.0 * a * b / (a + b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn unit_interval(n: usize) -> Arc<Grid> {
        Arc::new(build_grid(1, &[1.0], &[n]).unwrap())
    }

    #[test]
    fn builtin_values() {
        let l = builtin_reaction("logistic").unwrap();
        assert_eq!(l.eval(0.0, [0.0; 2], 0.5), 0.25);
        assert_eq!(l.deriv(0.0, [0.0; 2], 0.0), 1.0);
        assert_eq!(l.lipschitz_m(), 1.0);
        assert!(l.flags().strictly_concave && l.flags().nonnegative_on_unit);
        let z = builtin_reaction("zero").unwrap();
        assert_eq!(z.eval(0.3, [0.1, 0.0], 0.77), 0.0);
        assert_eq!(z.lipschitz_m(), 0.0);
        let c = builtin_reaction("convex_negative").unwrap();
        assert_eq!(c.eval(0.0, [0.0; 2], 0.5), -0.25);
        assert!(builtin_reaction("gompertz").is_err());
        assert!(builtin_reaction("heterogeneous_logistic").is_err());
    }

    #[test]
    fn logistic_concave_on_lattice_triples() {
        // Every triple a < b < c on a 0.01 lattice, not only consecutive ones.
        let f = ReactionModel::logistic();
        let us: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        for i in 0..us.len() {
            for j in i + 1..us.len() {
                for k in j + 1..us.len() {
                    let (a, b, c) = (us[i], us[j], us[k]);
                    let lam = (c - b) / (c - a);
                    let chord = lam * f.eval(0.0, [0.0; 2], a) + (1.0 - lam) * f.eval(0.0, [0.0; 2], c);
                    assert!(f.eval(0.0, [0.0; 2], b) > chord - 1e-15);
                }
            }
        }
        let chk = f.check_hypotheses(&[[0.0; 2]], &[0.0], 0.01);
        assert!(chk.sampled_strictly_concave());
        assert!(chk.endpoints_vanish() && chk.lipschitz_holds() && chk.sampled_nonnegative());
    }

    #[test]
    fn convex_negative_fails_concavity_and_sign() {
        let chk = ReactionModel::convex_negative().check_hypotheses(&[[0.0; 2]], &[0.0], 0.01);
        assert!(!chk.sampled_strictly_concave());
        assert!(!chk.sampled_nonnegative());
        assert!(chk.endpoints_vanish() && chk.lipschitz_holds());
    }

    #[test]
    fn heterogeneous_logistic_bound() {
        let g = unit_interval(10);
        let r: ScalarFn = Arc::new(|p: Point| 1.0 + 0.5 * (std::f64::consts::PI * p[0]).cos());
        let f = ReactionModel::heterogeneous_logistic(r, &g).unwrap();
        assert!((f.lipschitz_m() - 1.5).abs() < 1e-12);
        let chk = f.check_hypotheses(&g.cell_centers(), &[0.0, 1.0], 0.05);
        assert!(chk.lipschitz_holds() && chk.endpoints_vanish());
        let neg: ScalarFn = Arc::new(|p: Point| p[0] - 0.5);
        assert!(ReactionModel::heterogeneous_logistic(neg, &g).is_err());
    }

    #[test]
    fn tangential_quadratic_field() {
        let g = unit_interval(16);
        let e = Expr::parse("x*(1-x)").unwrap();
        let q = VelocityField::from_exprs(g.clone(), &[e], 1.0, BoundaryPolicy::RequireTangential)
            .unwrap();
        let rep = validate_field(&q, &g).unwrap();
        assert_eq!(rep.max_boundary_normal, 0.0);
        assert_eq!(rep.alpha, 1.0);
        assert!(rep.divergence_integral.abs() < 1e-15);
        assert!(rep.warnings.is_empty());
        assert!(rep.alpha <= rep.div_bound_b);
    }

    #[test]
    fn compressive_field_relaxed() {
        let g = unit_interval(16);
        let e = Expr::parse("-x").unwrap();
        let q = VelocityField::from_exprs(g.clone(), &[e], 1.0, BoundaryPolicy::AllowNonzeroNormal)
            .unwrap();
        let rep = validate_field(&q, &g).unwrap();
        assert_eq!(rep.alpha, -1.0);
        assert!((rep.divergence_integral + 1.0).abs() < 1e-14);
        assert_eq!(rep.max_boundary_normal, 1.0);
    }

    #[test]
    fn constant_field_rejected_when_tangency_required() {
        let g = unit_interval(8);
        let e = Expr::parse("1").unwrap();
        let q = VelocityField::from_exprs(g.clone(), &[e], 1.0, BoundaryPolicy::RequireTangential)
            .unwrap();
        assert!(matches!(validate_field(&q, &g), Err(Error::FieldValidation(_))));
    }

    #[test]
    fn tangential_negative_divergence_warns() {
        // The supplied divergence disagrees with q on purpose; only the report logic is tested.
        let g = unit_interval(4);
        let q: VectorFn = Arc::new(|p: Point| [-(p[0] * (1.0 - p[0])).powi(2), 0.0]);
        let div: ScalarFn = Arc::new(|_| -0.25);
        let v = VelocityField::from_fn(g.clone(), q, Some(div), 1.0, BoundaryPolicy::RequireTangential)
            .unwrap();
        let rep = validate_field(&v, &g).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn finite_difference_divergence_without_closure() {
        let g = Arc::new(build_grid(2, &[1.0, 1.0], &[8, 8]).unwrap());
        let q: VectorFn = Arc::new(|p: Point| {
            let pi = std::f64::consts::PI;
            [(pi * p[0]).sin() * (pi * p[1]).cos(), (pi * p[1]).sin() * (pi * p[0]).cos()]
        });
        let v = VelocityField::from_fn(g.clone(), q, None, 1.0, BoundaryPolicy::RequireTangential)
            .unwrap();
        assert!(!v.has_analytic_divergence());
        let rep = validate_field(&v, &g).unwrap();
        // Tangential: the divergence integral is a telescoping sum of zero boundary values.
        assert!(rep.divergence_integral.abs() < 1e-12);
        let pi = std::f64::consts::PI;
        for (c, d) in g.cell_centers().iter().zip(v.divergence().values()) {
            let exact = 2.0 * pi * (pi * c[0]).cos() * (pi * c[1]).cos();
            assert!((d - exact).abs() < 0.1);
        }
    }

    #[test]
    fn diffusion_models() {
        assert!(DiffusionModel::constant(0.0).is_err());
        let g = unit_interval(8);
        let d: ScalarFn = Arc::new(|p: Point| 0.1 + p[0]);
        let m = DiffusionModel::field(d.clone(), 0.1, &g).unwrap();
        assert!(m.cell_values(&g).iter().all(|&v| v >= m.theta()));
        assert!(DiffusionModel::field(d, 0.2, &g).is_err());
        assert_eq!(DiffusionModel::face_value(&[1.0, 3.0], 0, 1), 1.5);
    }
}
