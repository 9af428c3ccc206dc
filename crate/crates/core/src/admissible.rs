//! The admissible set `{0 ≤ u₀ ≤ 1, ∫ u₀ = m}` and Euclidean projection onto it.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Mass tolerance of an admissible datum, relative to `|Ω|`.
pub const MASS_TOL: f64 = 1e-10;

/// Target accuracy of the shift equation `g(τ) = 0`.
const SHIFT_TOL: f64 = 1e-12;

/// An initial datum in the admissible set, tagged with its mass.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDatum {
    field: ScalarField,
    mass_m: f64,
}

impl InitialDatum {
    /// Validates the box bounds and the mass constraint.
    pub fn new(field: ScalarField, mass_m: f64) -> Result<Self> {
        check_mass(field.grid(), mass_m)?;
        if let Some((i, v)) = field
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Data(format!("cell {i} has value {v} outside [0, 1]")));
        }
        let mass = field.integrate();
        let vol = field.grid().total_volume();
        if (mass - mass_m).abs() > MASS_TOL * vol {
            return Err(Error::Data(format!(
                "datum integrates to {mass}, expected {mass_m}"
            )));
        }
        Ok(Self { field, mass_m })
    }

    /// The constant datum `m / |Ω|`.
    pub fn uniform(grid: Arc<Grid>, mass_m: f64) -> Result<Self> {
        check_mass(&grid, mass_m)?;
        let v = (mass_m / grid.total_volume()).min(1.0);
        Self::new(ScalarField::constant(grid, v), mass_m)
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.field.grid()
    }

    pub fn mass(&self) -> f64 {
        self.mass_m
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }

    /// Convex combination `λ a + (1-λ) b`; both data must share `m`.
    pub fn combine(a: &Self, b: &Self, lambda: f64) -> Result<Self> {
        if a.mass_m != b.mass_m {
            return Err(Error::Data("cannot combine data with different masses".into()));
        }
        if a == b {
            return Ok(a.clone());
        }
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (lambda * x + (1.0 - lambda) * y).clamp(0.0, 1.0))
            .collect();
        Self::new(ScalarField::new(a.grid().clone(), values)?, a.mass_m)
    }

    /// Reads a single-column CSV with header `u0`.
    pub fn read_csv<R: Read>(reader: R, grid: Arc<Grid>, mass_m: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "u0" {
            return Err(Error::Data(format!("expected header `u0`, found {headers:?}")));
        }
        let mut values = Vec::with_capacity(grid.cell_count());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: f64 = rec[0].trim().parse().map_err(|_| {
                Error::Data(format!("line {}: cannot parse {:?}", line + 2, &rec[0]))
            })?;
            values.push(v);
        }
        Self::new(ScalarField::new(grid, values)?, mass_m)
    }

    pub fn load_csv(path: &Path, grid: Arc<Grid>, mass_m: f64) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, grid, mass_m)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["u0"])?;
        for v in self.values() {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_mass(grid: &Grid, m: f64) -> Result<()> {
    let vol = grid.total_volume();
    if !(m > 0.0 && m <= vol) {
        return Err(Error::Infeasible(format!(
            "mass {m} must lie in (0, |Ω|] = (0, {vol}]"
        )));
    }
    Ok(())
}

fn shifted_mass(v: &[f64], tau: f64, cell_volume: f64) -> f64 {
    cell_volume * v.iter().map(|x| (x + tau).clamp(0.0, 1.0)).sum::<f64>()
}

/// Euclidean projection of `v` onto the admissible set with mass `m`.
///
/// The minimizer has the form `u_i = clamp(v_i + τ, 0, 1)`; `τ` is located by
/// bisection on the monotone map `τ ↦ ∫ clamp(v + τ, 0, 1) - m` and then
/// polished by solving the linear equation on the free set.
pub fn project_capped_simplex(v: &ScalarField, m: f64) -> Result<InitialDatum> {
    let grid = v.grid().clone();
    check_mass(&grid, m)?;
    if let Some(bad) = v.values().iter().find(|x| !x.is_finite()) {
        return Err(Error::Data(format!("cannot project non-finite value {bad}")));
    }
    let vol = grid.total_volume();
    if m == vol {
        return InitialDatum::new(ScalarField::constant(grid, 1.0), m);
    }
    let h = grid.cell_volume();
    let vals = v.values();
    let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    // g(lo) = -m < 0 and g(hi) = |Ω| - m ≥ 0.
    let (mut lo, mut hi) = (-vmax, 1.0 - vmin);
    let tol = SHIFT_TOL * vol.max(1.0);
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        tau = 0.5 * (lo + hi);
        let g = shifted_mass(vals, tau, h) - m;
        if g.abs() <= tol || hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        if g > 0.0 {
            hi = tau;
        } else {
            lo = tau;
        }
    }
    // Exact solve on the free set identified by the bisection.
    let (mut n_free, mut sum_free, mut n_top) = (0usize, 0.0, 0usize);
    for &x in vals {
        let s = x + tau;
        if s >= 1.0 {
            n_top += 1;
        } else if s > 0.0 {
            n_free += 1;
            sum_free += x;
        }
    }
    if n_free > 0 {
        let candidate = (m / h - n_top as f64 - sum_free) / n_free as f64;
        let g_old = (shifted_mass(vals, tau, h) - m).abs();
        let g_new = (shifted_mass(vals, candidate, h) - m).abs();
        if g_new <= g_old {
            tau = candidate;
        }
    }
    let values: Vec<f64> = vals.iter().map(|x| (x + tau).clamp(0.0, 1.0)).collect();
    InitialDatum::new(ScalarField::new(grid, values)?, m)
}

/// Deterministic random admissible datum: i.i.d. uniform values, then projected.
pub fn random_admissible(seed: u64, m: f64, grid: Arc<Grid>) -> Result<InitialDatum> {
    check_mass(&grid, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.cell_count()).map(|_| rng.gen::<f64>()).collect();
    project_capped_simplex(&ScalarField::new(grid, values)?, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<Grid> {
        Arc::new(build_grid(1, &[1.0], &[n]).unwrap())
    }

    fn field(g: &Arc<Grid>, v: Vec<f64>) -> ScalarField {
        ScalarField::new(g.clone(), v).unwrap()
    }

    /// Exhaustive search over the admissible lattice of spacing `step`.
    fn lattice_projection(v: &[f64], m: f64, h: f64, step: f64) -> (f64, Vec<f64>) {
        let k = (1.0 / step).round() as usize;
        let target = (m / h / step).round() as usize;
        let n = v.len();
        let mut best = (f64::INFINITY, vec![]);
        let mut idx = vec![0usize; n];
        fn rec(
            pos: usize,
            remaining: usize,
            idx: &mut Vec<usize>,
            k: usize,
            step: f64,
            v: &[f64],
            best: &mut (f64, Vec<f64>),
        ) {
            let n = idx.len();
            if pos == n - 1 {
                if remaining > k {
                    return;
                }
                idx[pos] = remaining;
                let u: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
                let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    *best = (d, u);
                }
                return;
            }
            for i in 0..=k.min(remaining) {
                idx[pos] = i;
                rec(pos + 1, remaining - i, idx, k, step, v, best);
            }
        }
        rec(0, target, &mut idx, k, step, v, &mut best);
        best
    }

    #[test]
    fn hand_solved_kkt_example() {
        let g = grid(4);
        let p = project_capped_simplex(&field(&g, vec![1.2, 0.4, 0.2, 0.0]), 0.5).unwrap();
        let tau = 2.0 / 15.0;
        let expect = [1.0, 0.4 + tau, 0.2 + tau, tau];
        for (a, b) in p.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Lattice of spacing 1/60 contains the exact minimizer (2/15 = 8/60).
        let (_, u) = lattice_projection(&[1.2, 0.4, 0.2, 0.0], 0.5, 0.25, 1.0 / 60.0);
        for (a, b) in p.values().iter().zip(&u) {
            assert!((a - b).abs() < 1e-12, "{a} vs lattice {b}");
        }
    }

    #[test]
    fn feasible_point_is_fixed() {
        let g = grid(4);
        let v = vec![0.1, 0.9, 0.5, 0.5];
        let p = project_capped_simplex(&field(&g, v.clone()), 0.5).unwrap();
        for (a, b) in p.values().iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_mass_gives_ones() {
        let g = grid(5);
        let p = project_capped_simplex(&field(&g, vec![-3.0, 0.2, 7.0, 0.0, 0.5]), 1.0).unwrap();
        assert!(p.values().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn infeasible_masses() {
        let g = grid(4);
        let v = field(&g, vec![0.5; 4]);
        assert!(matches!(project_capped_simplex(&v, 0.0), Err(Error::Infeasible(_))));
        assert!(matches!(project_capped_simplex(&v, -1.0), Err(Error::Infeasible(_))));
        assert!(matches!(project_capped_simplex(&v, 1.5), Err(Error::Infeasible(_))));
        assert!(random_admissible(1, 2.0, g).is_err());
    }

    #[test]
    fn values_far_outside_box_are_projected_exactly() {
        // Pre-clamping to a fixed bracket would split the top mass between both cells.
        let g = grid(4);
        let p = project_capped_simplex(&field(&g, vec![5.0, 4.0, 0.0, 0.0]), 0.25).unwrap();
        assert_eq!(p.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_admissible_is_deterministic_and_feasible() {
        let g = grid(32);
        let a = random_admissible(7, 0.5, g.clone()).unwrap();
        let b = random_admissible(7, 0.5, g.clone()).unwrap();
        assert_eq!(a, b);
        for seed in 0..100 {
            let d = random_admissible(seed, 0.5, g.clone()).unwrap();
            assert!((d.field().integrate() - 0.5).abs() <= 1e-10);
            assert!(d.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let g = grid(4);
        let d = random_admissible(3, 0.5, g.clone()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("u0\n"));
        let back = InitialDatum::read_csv(&buf[..], g.clone(), 0.5).unwrap();
        assert_eq!(back, d);
        let bad = b"u0\n1.5\n0.5\n0\n0\n";
        assert!(InitialDatum::read_csv(&bad[..], g.clone(), 0.5).is_err());
        let wrong_header = b"u\n0.5\n0.5\n0.5\n0.5\n";
        assert!(InitialDatum::read_csv(&wrong_header[..], g, 0.5).is_err());
    }

    #[test]
    fn combine_rejects_mixed_masses() {
        let g = grid(4);
        let a = random_admissible(1, 0.5, g.clone()).unwrap();
        let b = random_admissible(2, 0.25, g).unwrap();
        assert!(InitialDatum::combine(&a, &b, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-1.0f64..2.0, 6),
            b in proptest::collection::vec(-1.0f64..2.0, 6),
            m in 0.05f64..1.0,
        ) {
            let g = grid(6);
            let pa = project_capped_simplex(&field(&g, a.clone()), m).unwrap();
            let pb = project_capped_simplex(&field(&g, b.clone()), m).unwrap();
            let ppa = project_capped_simplex(pa.field(), m).unwrap();
            for (x, y) in pa.values().iter().zip(ppa.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d_out: f64 = pa.values().iter().zip(pb.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn projection_matches_lattice_search(
            v in proptest::collection::vec(-0.5f64..1.5, 3),
            k in 1usize..=29,
        ) {
            // m chosen on the lattice so the search has feasible points.
            let step = 0.01;
            let h = 1.0 / 3.0;
            let m = k as f64 * 10.0 * step * h;
            let g = grid(3);
            let p = project_capped_simplex(&field(&g, v.clone()), m).unwrap();
            let (best, _) = lattice_projection(&v, m, h, step);
            let ours: f64 = p.values().iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            // The exact minimizer is never worse, and the lattice is within one step of it.
            prop_assert!(ours <= best + 1e-12);
            prop_assert!(best - ours <= 3.0 * 2.0 * 2.0 * step + 3.0 * step * step);
        }
    }
}
