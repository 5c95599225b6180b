//! Rescaled fields, weak-* pairings, and cross-n convergence diagnostics.
//!
//! The rescaled sandpile s̄_n is a piecewise-constant density on cells of
//! width h = n^(−1/d); pairing it against a smooth compactly supported test
//! function reduces to cell-center quadrature, which is exact for the
//! density and O(h²) for the test function. Cross-n comparisons of w̄_n
//! fields read both lattices at a common set of sample points by nearest-
//! neighbor interpolation, so no resampling step favors either mesh. The
//! study only measures trends — gaps between consecutive scales shrinking —
//! and reports trend breaks as warnings, because the underlying convergence
//! statement carries no rate.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::green::{solve_phi_n, GreenProblem};
use crate::lattice::{mesh_size, norm_sq, rescale_chips, ChipGrid, Odometer, RealField};
use crate::stabilize::{stabilize_point_pile, Strategy};
use crate::Result;

/// A smooth, compactly supported test function on R^d, in closed form.
/// All kinds satisfy |φ| ≤ 1 with support inside ball(center, outer radius).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// exp(1 − 1/(1 − |x−c|²/r²)) inside the ball, 0 outside; peak 1 at c.
    Bump { center: [f64; 3], radius: f64 },
    /// Bump modulated by the monomial Π ((x_i−c_i)/r)^{e_i}; the scaled
    /// coordinates keep the factor in [−1, 1], so |φ| ≤ 1 by construction.
    PolyBump {
        center: [f64; 3],
        radius: f64,
        exponents: [u32; 3],
    },
    /// Exactly 1 on ball(center, inner), smooth decay to 0 at outer. The
    /// flat top makes mass pairings exact rather than approximate.
    Plateau {
        center: [f64; 3],
        inner: f64,
        outer: f64,
    },
}

/// exp(−1/t) for t > 0, extended by 0: the standard smooth cutoff germ.
fn cutoff(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

impl TestFunction {
    pub fn bump(center: [f64; 3], radius: f64) -> Result<Self> {
        let f = TestFunction::Bump { center, radius };
        f.validate()?;
        Ok(f)
    }

    pub fn poly_bump(center: [f64; 3], radius: f64, exponents: [u32; 3]) -> Result<Self> {
        let f = TestFunction::PolyBump {
            center,
            radius,
            exponents,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn plateau(center: [f64; 3], inner: f64, outer: f64) -> Result<Self> {
        let f = TestFunction::Plateau {
            center,
            inner,
            outer,
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        match *self {
            TestFunction::Bump { center, radius } | TestFunction::PolyBump { center, radius, .. } => {
                if !(radius > 0.0 && ok(radius)) || center.iter().any(|&c| !ok(c)) {
                    return Err(Error::Format(format!("bad test function geometry: {self:?}")));
                }
            }
            TestFunction::Plateau { center, inner, outer } => {
                if !(inner > 0.0 && outer > inner && ok(outer)) || center.iter().any(|&c| !ok(c)) {
                    return Err(Error::Format(format!(
                        "plateau needs 0 < inner < outer, got {self:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        match *self {
            TestFunction::Bump { center, .. }
            | TestFunction::PolyBump { center, .. }
            | TestFunction::Plateau { center, .. } => center,
        }
    }

    /// Radius of the support ball around `center()`.
    pub fn support_radius(&self) -> f64 {
        match *self {
            TestFunction::Bump { radius, .. } | TestFunction::PolyBump { radius, .. } => radius,
            TestFunction::Plateau { outer, .. } => outer,
        }
    }

    /// True if the function involves the third coordinate (so it cannot be
    /// paired against a planar field).
    pub fn uses_third_axis(&self) -> bool {
        if self.center()[2] != 0.0 {
            return true;
        }
        match *self {
            TestFunction::PolyBump { exponents, .. } => exponents[2] > 0,
            _ => false,
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let c = self.center();
        let dx = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        let rho2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
        match *self {
            TestFunction::Bump { radius, .. } => {
                let t = rho2 / (radius * radius);
                if t >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - t)).exp()
                }
            }
            TestFunction::PolyBump { radius, exponents, .. } => {
                let t = rho2 / (radius * radius);
                if t >= 1.0 {
                    return 0.0;
                }
                let mut mono = 1.0;
                for i in 0..3 {
                    mono *= (dx[i] / radius).powi(exponents[i] as i32);
                }
                mono * (1.0 - 1.0 / (1.0 - t)).exp()
            }
            TestFunction::Plateau { inner, outer, .. } => {
                let rho = rho2.sqrt();
                if rho <= inner {
                    1.0
                } else if rho >= outer {
                    0.0
                } else {
                    // Smooth partition step: 1 at inner, 0 at outer.
                    let s = (rho - inner) / (outer - inner);
                    let a = cutoff(1.0 - s);
                    a / (a + cutoff(s))
                }
            }
        }
    }

    /// Parse the CLI form: `bump:CX,CY[,CZ]:R`, `poly:CX,CY[,CZ]:R:E1,E2[,E3]`,
    /// `plateau:CX,CY[,CZ]:INNER:OUTER`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("test function '{s}': {msg}"));
        let parts: Vec<&str> = s.split(':').collect();
        let center_of = |spec: &str| -> Result<[f64; 3]> {
            let nums: Vec<f64> = spec
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("center must be comma-separated numbers"))?;
            if nums.len() < 2 || nums.len() > 3 {
                return Err(bad("center needs 2 or 3 coordinates"));
            }
            let mut c = [0.0; 3];
            c[..nums.len()].copy_from_slice(&nums);
            Ok(c)
        };
        let num = |spec: &str, what: &str| -> Result<f64> {
            spec.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("{what} must be a number")))
        };
        match (parts.first().copied(), parts.len()) {
            (Some("bump"), 3) => TestFunction::bump(center_of(parts[1])?, num(parts[2], "radius")?),
            (Some("poly"), 4) => {
                let exps: Vec<u32> = parts[3]
                    .split(',')
                    .map(|t| t.trim().parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("exponents must be comma-separated nonnegative integers"))?;
                if exps.len() < 2 || exps.len() > 3 {
                    return Err(bad("exponent list needs 2 or 3 entries"));
                }
                let mut e = [0u32; 3];
                e[..exps.len()].copy_from_slice(&exps);
                TestFunction::poly_bump(center_of(parts[1])?, num(parts[2], "radius")?, e)
            }
            (Some("plateau"), 4) => TestFunction::plateau(
                center_of(parts[1])?,
                num(parts[2], "inner radius")?,
                num(parts[3], "outer radius")?,
            ),
            _ => Err(bad("expected bump:CX,CY:R, poly:CX,CY:R:E1,E2 or plateau:CX,CY:IN:OUT")),
        }
    }
}

impl std::fmt::Display for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = self.center();
        let cs = if c[2] == 0.0 {
            format!("{},{}", c[0], c[1])
        } else {
            format!("{},{},{}", c[0], c[1], c[2])
        };
        match *self {
            TestFunction::Bump { radius, .. } => write!(f, "bump:{cs}:{radius}"),
            TestFunction::PolyBump { radius, exponents, .. } => {
                write!(f, "poly:{cs}:{radius}:{},{},{}", exponents[0], exponents[1], exponents[2])
            }
            TestFunction::Plateau { inner, outer, .. } => write!(f, "plateau:{cs}:{inner}:{outer}"),
        }
    }
}

/// Weak-* pairing h^d Σ_z s(z) φ(hz): exact integration of the piecewise-
/// constant rescaled field against φ sampled at cell centers.
pub fn pair(sbar: &RealField, phi: &TestFunction) -> Result<f64> {
    let bx = sbar.bounding_box();
    let d = bx.dimension();
    if d == 2 && phi.uses_third_axis() {
        return Err(Error::Format(
            "test function uses the third axis against a planar field".into(),
        ));
    }
    let h = sbar.h();
    let k = bx.half_width();
    let c = phi.center();
    let r = phi.support_radius();
    // The field's cells tile [-(k+1/2)h, (k+1/2)h]^d; the support ball must
    // fit inside that region.
    let reach = (k as f64 + 0.5) * h;
    for &cc in &c[..d] {
        if cc.abs() + r > reach {
            return Err(Error::SupportEscape);
        }
    }
    // Iterate only the sub-box meeting the support ball.
    let lo = |axis: usize| (((c[axis] - r) / h).ceil() as i64).max(-k);
    let hi = |axis: usize| (((c[axis] + r) / h).floor() as i64).min(k);
    let (x0, x1) = (lo(0), hi(0));
    let (y0, y1) = (lo(1), hi(1));
    let (z0, z1) = if d == 3 { (lo(2), hi(2)) } else { (0, 0) };
    // Neumaier-compensated sum: keeps the quadrature deterministic and
    // accurate to a few ulps regardless of site count.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut add = |term: f64| {
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    };
    for x in x0..=x1 {
        for y in y0..=y1 {
            for z in z0..=z1 {
                let s = sbar.get([x, y, z]);
                if s != 0.0 {
                    let v = phi.eval([x as f64 * h, y as f64 * h, z as f64 * h]);
                    if v != 0.0 {
                        add(s * v);
                    }
                }
            }
        }
    }
    Ok(h.powi(d as i32) * (sum + comp))
}

/// The comparison field w̄ = h²·v(h^{-1}x) − Φ̂(x), assembled on Φ̂'s box.
/// The odometer is read with zero extension, but any site it actually
/// toppled must lie inside Φ̂'s box.
pub fn wbar_field(v: &Odometer, phi: &RealField, n: u64) -> Result<RealField> {
    let bx = phi.bounding_box();
    let d = bx.dimension();
    if v.bounding_box().dimension() != d {
        return Err(Error::BoxMismatch(format!(
            "odometer is {}-dimensional, field is {}-dimensional",
            v.bounding_box().dimension(),
            d
        )));
    }
    if n == 0 {
        return Err(Error::Format("rescaling needs mass n >= 1".into()));
    }
    let h = phi.h();
    if h != mesh_size(d, n) {
        return Err(Error::BoxMismatch(format!(
            "field mesh {} does not match n = {n} (expected {})",
            h,
            mesh_size(d, n)
        )));
    }
    for c in v.bounding_box().coords() {
        if v.get(c) != 0 && !bx.contains(c) {
            return Err(Error::BoxMismatch(format!(
                "odometer support at {c:?} escapes the field box (half-width {})",
                bx.half_width()
            )));
        }
    }
    let h2 = h * h;
    let values = bx
        .coords()
        .map(|c| h2 * v.get(c) as f64 - phi.get(c))
        .collect();
    RealField::new(*bx, h, values)
}

/// Max Euclidean norm (in lattice units) over occupied sites; 0 when empty.
pub fn measured_radius(s: &ChipGrid) -> f64 {
    let mut worst = 0i64;
    for c in s.bounding_box().coords() {
        if s.get(c) > 0 {
            worst = worst.max(norm_sq(c));
        }
    }
    (worst as f64).sqrt()
}

/// Everything recorded about one scale n of a convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: u64,
    pub h: f64,
    /// One entry per test function, in study order.
    pub pairings: Vec<f64>,
    /// Lattice-unit support radius of the stable pile.
    pub measured_radius: f64,
    /// h × measured_radius: the pile's extent after rescaling.
    pub rescaled_radius: f64,
    /// Total rescaled mass ∫ s̄ = (chips present)/n; exactly 1 by conservation.
    pub mass: f64,
    pub s_min: i64,
    pub s_max: i64,
    /// Radius of the fundamental-solution solve used for w̄.
    pub solve_radius: f64,
    pub green_iterations: usize,
    pub green_residual: f64,
}

/// A full cross-scale study: per-n rows plus consecutive-pair gap measures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub d: usize,
    pub schedule: Vec<u64>,
    /// Display forms of the test functions paired against.
    pub test_functions: Vec<String>,
    pub rows: Vec<StudyRow>,
    /// sup over the common sample grid of |w̄_{n_j} − w̄_{n_{j+1}}|.
    pub wbar_gaps: Vec<f64>,
    /// Per test function: |pairing_{j+1} − pairing_j| along the schedule.
    pub pairing_gaps: Vec<Vec<f64>>,
    /// Advisory trend breaks; never a hard failure (no rate is guaranteed).
    pub warnings: Vec<String>,
}

/// Default relative residual for the study's fundamental-solution solves.
pub const STUDY_GREEN_TOL: f64 = 1e-10;
/// Solve radius as a multiple of the measured rescaled pile radius.
pub const SOLVE_RADIUS_FACTOR: f64 = 1.6;
/// Regression cap on rescaled_radius for planar piles with n ≥ 10^4.
pub const PLANAR_RADIUS_CAP: f64 = 0.45;
/// Sample points per axis of the common w̄ comparison grid.
pub const COMPARE_GRID: usize = 256;

/// Run the full pipeline for each n in the schedule and assemble the report.
/// The schedule must be strictly increasing.
pub fn run_convergence_study(
    d: usize,
    schedule: &[u64],
    phis: &[TestFunction],
) -> Result<ConvergenceReport> {
    if schedule.is_empty() {
        return Err(Error::Format("empty schedule".into()));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("schedule must be strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(schedule.len());
    let mut wbars: Vec<RealField> = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let run = stabilize_point_pile(d, n, Strategy::FifoWorklist)?;
        let s = &run.final_config;
        let total = s.total();
        if total != n as i64 {
            return Err(Error::Format(format!(
                "mass leaked: {total} of {n} chips remain"
            )));
        }
        let (mut s_min, mut s_max) = (i64::MAX, i64::MIN);
        for &v in s.values() {
            s_min = s_min.min(v);
            s_max = s_max.max(v);
        }
        if s_min < 0 || s_max > 2 * d as i64 - 1 {
            return Err(Error::Format(format!(
                "configuration out of stable range: [{s_min}, {s_max}]"
            )));
        }
        let h = mesh_size(d, n);
        let radius = measured_radius(s);
        let rescaled_radius = h * radius;
        if d == 2 && n >= 10_000 && rescaled_radius > PLANAR_RADIUS_CAP {
            return Err(Error::Format(format!(
                "pile radius {rescaled_radius} exceeds the {PLANAR_RADIUS_CAP} cap at n = {n}"
            )));
        }
        let solve_radius = (SOLVE_RADIUS_FACTOR * rescaled_radius).max(4.0 * h);
        let green = solve_phi_n(&GreenProblem::new(d, n, solve_radius, STUDY_GREEN_TOL)?)?;
        let wbar = wbar_field(&run.odometer, &green.field, n)?;
        // The stable pile's box hugs its support; pad it out (with zeros,
        // which is what the density is out there) to cover every test
        // function's support before pairing.
        let mut k_pair = s.bounding_box().half_width();
        for phi in phis {
            let c = phi.center();
            let reach = (0..d).fold(0.0f64, |m, axis| m.max(c[axis].abs()))
                + phi.support_radius();
            k_pair = k_pair.max((reach / h - 0.5).ceil() as i64 + 1);
        }
        let padded;
        let s_for_pairing = if k_pair > s.bounding_box().half_width() {
            let big = crate::lattice::LatticeBox::new(d, k_pair)?;
            if big.len() as u64 * 8 > 8 << 30 {
                return Err(Error::CapacityExceeded {
                    what: "pairing grid",
                    needed: big.len() as u64 * 8,
                    cap: 8 << 30,
                });
            }
            padded = ChipGrid::from_counts(
                big,
                crate::stabilize::re_embed(s.bounding_box(), &big, s.values()),
            )?;
            &padded
        } else {
            s
        };
        let sbar = rescale_chips(s_for_pairing, n)?;
        let pairings = phis
            .iter()
            .map(|phi| pair(&sbar, phi))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(StudyRow {
            n,
            h,
            pairings,
            measured_radius: radius,
            rescaled_radius,
            mass: total as f64 / n as f64,
            s_min,
            s_max,
            solve_radius,
            green_iterations: green.iterations,
            green_residual: green.residual,
        });
        wbars.push(wbar);
    }

    let mut wbar_gaps = Vec::new();
    for j in 0..rows.len().saturating_sub(1) {
        wbar_gaps.push(wbar_sup_gap(&wbars[j], &wbars[j + 1])?);
    }
    let pairing_gaps: Vec<Vec<f64>> = (0..phis.len())
        .map(|i| {
            rows.windows(2)
                .map(|w| (w[1].pairings[i] - w[0].pairings[i]).abs())
                .collect()
        })
        .collect();

    let mut warnings = Vec::new();
    if let Some(msg) = trend_break("wbar sup gap", &wbar_gaps) {
        warnings.push(msg);
    }
    for (i, gaps) in pairing_gaps.iter().enumerate() {
        if let Some(msg) = trend_break(&format!("pairing gap for {}", phis[i]), gaps) {
            warnings.push(msg);
        }
    }
    Ok(ConvergenceReport {
        d,
        schedule: schedule.to_vec(),
        test_functions: phis.iter().map(|p| p.to_string()).collect(),
        rows,
        wbar_gaps,
        pairing_gaps,
        warnings,
    })
}

/// Sup of |a − b| over a fixed uniform grid inside a ball both fields cover,
/// each field read by nearest-neighbor interpolation. Reading both lattices
/// at the same off-lattice points sidesteps any mesh-to-mesh resampling.
pub fn wbar_sup_gap(a: &RealField, b: &RealField) -> Result<f64> {
    let d = a.bounding_box().dimension();
    if b.bounding_box().dimension() != d {
        return Err(Error::BoxMismatch("field dimensions differ".into()));
    }
    let reach = |f: &RealField| f.h() * (f.bounding_box().half_width() as f64 + 0.49);
    let r = 0.8 * reach(a).min(reach(b));
    let m = COMPARE_GRID;
    let coord = |i: usize| -r + 2.0 * r * (i as f64 + 0.5) / m as f64;
    let mut sup = 0.0f64;
    let mut probe = |x: [f64; 3]| -> Result<()> {
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < r * r {
            let gap = (a.nn_interpolate(x)? - b.nn_interpolate(x)?).abs();
            sup = sup.max(gap);
        }
        Ok(())
    };
    for i in 0..m {
        for j in 0..m {
            if d == 2 {
                probe([coord(i), coord(j), 0.0])?;
            } else {
                for l in 0..m {
                    probe([coord(i), coord(j), coord(l)])?;
                }
            }
        }
    }
    Ok(sup)
}

/// None if `gaps` decreases with at most one non-monotone step; otherwise a
/// description of the break.
fn trend_break(what: &str, gaps: &[f64]) -> Option<String> {
    let rises = gaps.windows(2).filter(|w| w[1] >= w[0]).count();
    if rises <= 1 {
        None
    } else {
        Some(format!(
            "{what} fails to trend downward: {rises} of {} steps rise ({gaps:?})",
            gaps.len() - 1
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planar_pile(n: u64) -> (ChipGrid, Odometer) {
        let r = stabilize_point_pile(2, n, Strategy::FifoWorklist).unwrap();
        (r.final_config, r.odometer)
    }

    #[test]
    fn bump_shape() {
        let phi = TestFunction::bump([0.5, -0.25, 0.0], 0.4).unwrap();
        assert_eq!(phi.eval([0.5, -0.25, 0.0]), 1.0);
        assert_eq!(phi.eval([0.91, -0.25, 0.0]), 0.0);
        assert_eq!(phi.eval([2.0, 2.0, 0.0]), 0.0);
        let inside = phi.eval([0.6, -0.25, 0.0]);
        assert!(inside > 0.0 && inside < 1.0);
    }

    #[test]
    fn plateau_shape() {
        let phi = TestFunction::plateau([0.0, 0.0, 0.0], 0.3, 0.5).unwrap();
        assert_eq!(phi.eval([0.2, 0.1, 0.0]), 1.0);
        assert_eq!(phi.eval([0.3, 0.0, 0.0]), 1.0);
        assert_eq!(phi.eval([0.5, 0.0, 0.0]), 0.0);
        let mid = phi.eval([0.4, 0.0, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);
        // The two germ halves meet at 1/2 by symmetry of the partition.
        assert!((phi.eval([0.0, 0.4, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn poly_bump_is_bounded_by_one() {
        let phi = TestFunction::poly_bump([0.0, 0.0, 0.0], 0.7, [2, 1, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let x = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            assert!(phi.eval(x).abs() <= 1.0);
        }
        // Odd exponent flips sign across the center plane.
        assert!(phi.eval([0.1, 0.2, 0.0]) > 0.0);
        assert!(phi.eval([0.1, -0.2, 0.0]) < 0.0);
    }

    #[test]
    fn parse_round_trips() {
        for spec in [
            "bump:0,0:0.3",
            "bump:0.5,-1,0.25:2",
            "poly:0,0:0.3:1,2",
            "plateau:0,0:0.2:0.35",
        ] {
            let f = TestFunction::parse(spec).unwrap();
            assert_eq!(TestFunction::parse(&f.to_string()).unwrap(), f);
        }
        for bad in [
            "bump:0,0",
            "bump:0:0.3",
            "bump:a,b:0.3",
            "poly:0,0:0.3",
            "poly:0,0:0.3:-1,0",
            "plateau:0,0:0.5:0.2",
            "disk:0,0:0.3",
            "bump:0,0:-1",
        ] {
            assert!(TestFunction::parse(bad).is_err(), "{bad} should fail");
        }
    }

    #[test]
    fn pairing_a_covering_plateau_gives_the_mass() {
        let (s, _) = planar_pile(1000);
        let sbar = rescale_chips(&s, 1000).unwrap();
        let h = sbar.h();
        let cover = measured_radius(&s) * h;
        let phi = TestFunction::plateau([0.0, 0.0, 0.0], cover + h, cover + 0.1).unwrap();
        let got = pair(&sbar, &phi).unwrap();
        // φ is exactly 1 on every occupied cell, so the quadrature returns
        // the rescaled mass h²·n on the nose.
        assert_eq!(got, h * h * 1000.0);
        assert!((got - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pairing_the_zero_field_gives_zero() {
        let bx = LatticeBox::new(2, 20).unwrap();
        let zero = RealField::new(bx, 0.1, vec![0.0; bx.len()]).unwrap();
        for phi in [
            TestFunction::bump([0.0, 0.0, 0.0], 1.0).unwrap(),
            TestFunction::poly_bump([0.3, -0.2, 0.0], 0.5, [1, 1, 0]).unwrap(),
            TestFunction::plateau([0.0, 0.0, 0.0], 0.5, 1.0).unwrap(),
        ] {
            assert_eq!(pair(&zero, &phi).unwrap(), 0.0);
        }
    }

    #[test]
    fn pairing_is_linear_in_the_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let bx = LatticeBox::new(2, 15).unwrap();
        let h = 1.0 / 15.0;
        let phi = TestFunction::bump([0.0, 0.0, 0.0], 0.8).unwrap();
        for _ in 0..20 {
            let f1: Vec<f64> = (0..bx.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let f2: Vec<f64> = (0..bx.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo: Vec<f64> = f1.iter().zip(&f2).map(|(&u, &v)| a * u + b * v).collect();
            let p1 = pair(&RealField::new(bx, h, f1).unwrap(), &phi).unwrap();
            let p2 = pair(&RealField::new(bx, h, f2).unwrap(), &phi).unwrap();
            let pc = pair(&RealField::new(bx, h, combo).unwrap(), &phi).unwrap();
            let want = a * p1 + b * p2;
            let scale = want.abs().max(p1.abs()).max(p2.abs()).max(1e-30);
            assert!(
                (pc - want).abs() <= 1e-12 * scale,
                "linearity: {pc} vs {want}"
            );
        }
    }

    #[test]
    fn support_escape_is_detected() {
        let bx = LatticeBox::new(2, 10).unwrap();
        let field = RealField::new(bx, 0.1, vec![1.0; bx.len()]).unwrap();
        // Box region reaches 1.05; this support pokes out.
        let wide = TestFunction::bump([0.0, 0.0, 0.0], 1.1).unwrap();
        assert!(matches!(pair(&field, &wide), Err(Error::SupportEscape)));
        let shifted = TestFunction::bump([0.9, 0.0, 0.0], 0.3).unwrap();
        assert!(matches!(pair(&field, &shifted), Err(Error::SupportEscape)));
        let fits = TestFunction::bump([0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(pair(&field, &fits).is_ok());
        // Planar fields reject spatial test functions.
        let spatial = TestFunction::bump([0.0, 0.0, 0.1], 0.2).unwrap();
        assert!(pair(&field, &spatial).is_err());
    }

    #[test]
    fn wbar_is_minus_phi_outside_the_pile() {
        let n = 500u64;
        let run = stabilize_point_pile(2, n, Strategy::FifoWorklist).unwrap();
        let h = mesh_size(2, n);
        let solve_radius = SOLVE_RADIUS_FACTOR * h * measured_radius(&run.final_config);
        let green = solve_phi_n(&GreenProblem::new(2, n, solve_radius, 1e-10).unwrap()).unwrap();
        let wbar = wbar_field(&run.odometer, &green.field, n).unwrap();
        let bx = wbar.bounding_box();
        let mut outside = 0usize;
        for c in bx.coords() {
            if run.odometer.get(c) == 0 {
                assert_eq!(wbar.get(c), -green.field.get(c), "at {c:?}");
                outside += 1;
            }
        }
        assert!(outside > 0, "solve box must extend past the pile");

        // Inside the solve domain (where Δ^hΦ̂ = −n·1{0} up to the certified
        // residual) the discrete Laplacian of w̄ is the stable density: it
        // stays in [0, 2d−1] up to solver slack, at every site including 0.
        let slack = n as f64 * 1e-10 + 1e-9;
        let cut = (solve_radius / h) * (solve_radius / h);
        let mut checked = 0usize;
        for c in bx.coords() {
            if bx.is_interior(c) && (crate::lattice::norm_sq(c) as f64) < cut {
                let lap = wbar.laplacian(c).unwrap();
                assert!(
                    lap >= -slack && lap <= 3.0 + slack,
                    "Laplacian {lap} out of range at {c:?}"
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn wbar_field_rejects_mismatches() {
        let n = 100u64;
        let run = stabilize_point_pile(2, n, Strategy::FifoWorklist).unwrap();
        // Wrong mesh for this n.
        let bx = LatticeBox::new(2, 30).unwrap();
        let phi = RealField::new(bx, 0.5, vec![0.0; bx.len()]).unwrap();
        assert!(matches!(
            wbar_field(&run.odometer, &phi, n),
            Err(Error::BoxMismatch(_))
        ));
        // Right mesh, but the box misses most of the pile.
        let tiny = LatticeBox::new(2, 1).unwrap();
        let phi = RealField::new(tiny, mesh_size(2, n), vec![0.0; tiny.len()]).unwrap();
        assert!(matches!(
            wbar_field(&run.odometer, &phi, n),
            Err(Error::BoxMismatch(_))
        ));
    }

    #[test]
    fn measured_radius_small_cases() {
        let bx = LatticeBox::new(2, 3).unwrap();
        assert_eq!(measured_radius(&ChipGrid::zeros(bx)), 0.0);
        let mut g = ChipGrid::zeros(bx);
        g.set([0, 0, 0], 3).unwrap();
        assert_eq!(measured_radius(&g), 0.0);
        // Four chips topple once: one chip on each neighbor.
        let (s, _) = planar_pile(4);
        assert_eq!(measured_radius(&s), 1.0);
        let mut far = ChipGrid::zeros(bx);
        far.set([2, -2, 0], 1).unwrap();
        assert_eq!(measured_radius(&far), (8.0f64).sqrt());
    }

    #[test]
    fn single_row_study() {
        let phi = TestFunction::plateau([0.0, 0.0, 0.0], 0.6, 0.7).unwrap();
        let report = run_convergence_study(2, &[1000], &[phi]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.wbar_gaps.is_empty());
        let row = &report.rows[0];
        assert_eq!(row.mass, 1.0);
        assert!((row.pairings[0] - 1.0).abs() <= 1e-12);
        assert!(row.s_min >= 0 && row.s_max <= 3);
        assert!(row.green_residual <= STUDY_GREEN_TOL);
    }

    #[test]
    fn planar_study_rows_and_gaps() {
        let phis = vec![
            TestFunction::bump([0.0, 0.0, 0.0], 0.3).unwrap(),
            TestFunction::plateau([0.0, 0.0, 0.0], 0.6, 0.7).unwrap(),
        ];
        let report = run_convergence_study(2, &[1000, 4000, 16_000], &phis).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.wbar_gaps.len(), 2);
        assert_eq!(report.pairing_gaps.len(), 2);
        assert_eq!(report.pairing_gaps[0].len(), 2);
        for row in &report.rows {
            assert_eq!(row.mass, 1.0);
            assert!(row.rescaled_radius > 0.0 && row.rescaled_radius.is_finite());
            assert!((row.pairings[1] - 1.0).abs() <= 1e-12, "plateau mass row");
        }
        for gap in &report.wbar_gaps {
            assert!(gap.is_finite() && *gap >= 0.0);
        }
        // Report survives a serde round trip.
        let json = serde_json::to_string(&report).unwrap();
        let back: ConvergenceReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.schedule, report.schedule);
        assert_eq!(back.wbar_gaps, report.wbar_gaps);
    }

    #[test]
    fn spatial_study_completes() {
        let phi = TestFunction::bump([0.0, 0.0, 0.0], 0.25).unwrap();
        let report = run_convergence_study(3, &[1000, 8000], &[phi]).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.mass, 1.0);
            assert!(row.s_max <= 5);
        }
        assert_eq!(report.wbar_gaps.len(), 1);
        assert!(report.wbar_gaps[0].is_finite());
    }

    #[test]
    fn schedules_must_increase() {
        let phi = [TestFunction::bump([0.0, 0.0, 0.0], 0.3).unwrap()];
        assert!(run_convergence_study(2, &[], &phi).is_err());
        assert!(run_convergence_study(2, &[1000, 1000], &phi).is_err());
        assert!(run_convergence_study(2, &[4000, 1000], &phi).is_err());
    }

    #[test]
    fn trend_break_allows_one_rise() {
        assert!(trend_break("x", &[4.0, 3.0, 2.0, 1.0]).is_none());
        assert!(trend_break("x", &[4.0, 5.0, 2.0, 1.0]).is_none());
        assert!(trend_break("x", &[4.0, 5.0, 2.0, 3.0]).is_some());
        assert!(trend_break("x", &[1.0]).is_none());
    }
}
