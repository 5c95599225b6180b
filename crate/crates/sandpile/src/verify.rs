//! Seeded property suites behind the `verify` subcommand.
//!
//! Each suite draws its own inputs from the run seed, checks one family of
//! invariants, and reports deterministic failure messages (site coordinates
//! and values, never timings or addresses), so two runs with the same seed
//! produce byte-identical JSON. Offending input grids can be dumped as
//! field files for replay.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{measured_radius, pair, TestFunction};
use crate::green::{barrier_bounds, continuum_phi, solve_phi_n, GreenProblem};
use crate::lattice::{mesh_size, norm_sq, ChipGrid, LatticeBox, RealField};
use crate::leastaction::{check_least_action, permutation_audit, stabilizing_witness};
use crate::render::{render_png, Palette};
use crate::sfield;
use crate::stabilize::{random_legal_run, stabilize, Strategy};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: Vec<String>,
    /// Paths of counterexample dumps, when a dump directory was given.
    pub counterexamples: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub all_passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// One failed check: a message and, when meaningful, the input that broke it.
struct Failure {
    message: String,
    counterexample: Option<ChipGrid>,
}

impl Failure {
    fn plain(message: String) -> Self {
        Failure {
            message,
            counterexample: None,
        }
    }

    fn with_grid(message: String, grid: &ChipGrid) -> Self {
        Failure {
            message,
            counterexample: Some(grid.clone()),
        }
    }
}

struct Suite {
    cases: usize,
    failures: Vec<Failure>,
}

/// Run every property suite with inputs derived from `seed`. Counterexample
/// grids are written under `dump_dir` when one is supplied.
pub fn run_verify(seed: u64, dump_dir: Option<&Path>) -> Result<VerifyReport> {
    type SuiteFn = fn(ChaCha8Rng) -> Result<Suite>;
    let suites: [(&str, SuiteFn); 8] = [
        ("strategy_agreement", strategy_agreement),
        ("least_action", least_action),
        ("permutation_audit", permutation_audit_suite),
        ("toppling_identity", toppling_identity),
        ("fundamental_solution", fundamental_solution),
        ("barrier_bounds", barrier_suite),
        ("weak_pairing", weak_pairing),
        ("serialization_round_trip", serialization_round_trip),
    ];
    let mut results = Vec::with_capacity(suites.len());
    let mut all_passed = true;
    for (i, (name, run)) in suites.iter().enumerate() {
        // Decorrelate suites without letting their order affect each other.
        let rng = ChaCha8Rng::seed_from_u64(
            seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let suite = run(rng)?;
        let mut counterexamples = Vec::new();
        for (j, f) in suite.failures.iter().enumerate() {
            if let (Some(dir), Some(grid)) = (dump_dir, &f.counterexample) {
                let path = dir.join(format!("counterexample_{name}_{j}.sfield"));
                sfield::write_chips_path(&path, grid)?;
                counterexamples.push(path.display().to_string());
            }
        }
        all_passed &= suite.failures.is_empty();
        results.push(SuiteResult {
            name: (*name).to_string(),
            passed: suite.failures.is_empty(),
            cases: suite.cases,
            failures: suite.failures.iter().map(|f| f.message.clone()).collect(),
            counterexamples,
        });
    }
    Ok(VerifyReport {
        seed,
        all_passed,
        suites: results,
    })
}

fn random_grid(rng: &mut ChaCha8Rng, d: usize, k: i64, max: i64) -> Result<ChipGrid> {
    let bx = LatticeBox::new(d, k)?;
    let mut g = ChipGrid::zeros(bx);
    for c in bx.coords() {
        g.set(c, rng.gen_range(0..=max))?;
    }
    Ok(g)
}

/// All pinned strategies and random legal orders agree bit for bit.
fn strategy_agreement(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut cases = 0;
    let mut failures = Vec::new();
    for trial in 0..8 {
        let (d, k, max) = if trial % 4 == 3 { (3, 3, 9) } else { (2, 6, 6) };
        let eta = random_grid(&mut rng, d, k, max)?;
        let base = stabilize(&eta, Strategy::FifoWorklist)?;
        cases += 1;
        for strategy in [
            Strategy::FullSweep,
            Strategy::TiledParallel {
                tile_rows: 4,
                workers: 3,
            },
        ] {
            let other = stabilize(&eta, strategy)?;
            if other.final_config != base.final_config
                || other.odometer != base.odometer
                || other.total_topples != base.total_topples
            {
                failures.push(Failure::with_grid(
                    format!(
                        "trial {trial}: {} disagrees with {} ({} vs {} topples)",
                        strategy.name(),
                        Strategy::FifoWorklist.name(),
                        other.total_topples,
                        base.total_topples
                    ),
                    &eta,
                ));
            }
        }
        for run in 0..3 {
            let shuffled = random_legal_run(&eta, rng.gen())?;
            if shuffled.final_config != base.final_config || shuffled.odometer != base.odometer {
                failures.push(Failure::with_grid(
                    format!("trial {trial}: random legal order {run} changed the outcome"),
                    &eta,
                ));
            }
        }
    }
    Ok(Suite { cases, failures })
}

/// Constructive stabilizing candidates dominate the odometer pointwise.
fn least_action(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut cases = 0;
    let mut failures = Vec::new();
    for trial in 0..6 {
        let (d, k) = if trial % 3 == 2 { (3, 3) } else { (2, 5) };
        let eta = random_grid(&mut rng, d, k, 5)?;
        for _ in 0..8 {
            cases += 1;
            let witness = stabilizing_witness(&eta, rng.gen(), 4)?;
            match check_least_action(&eta, &witness) {
                Ok(true) => {}
                Ok(false) => failures.push(Failure::with_grid(
                    format!("trial {trial}: witness fails to dominate the odometer"),
                    &eta,
                )),
                Err(e) => failures.push(Failure::with_grid(
                    format!("trial {trial}: witness rejected: {e}"),
                    &eta,
                )),
            }
        }
    }
    Ok(Suite { cases, failures })
}

/// Any two random legal runs are permutations of each other and match the
/// odometer's per-site multiplicities.
fn permutation_audit_suite(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut cases = 0;
    let mut failures = Vec::new();
    for trial in 0..10 {
        let eta = random_grid(&mut rng, 2, 5, 5)?;
        cases += 1;
        if let Err(e) = permutation_audit(&eta, rng.gen(), rng.gen()) {
            failures.push(Failure::with_grid(format!("trial {trial}: {e}"), &eta));
        }
    }
    Ok(Suite { cases, failures })
}

/// Conservation, stability range, and the exact identity s = η + Δ¹v.
fn toppling_identity(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut cases = 0;
    let mut failures = Vec::new();
    for trial in 0..8 {
        let (d, k, max) = if trial % 2 == 1 { (3, 3, 8) } else { (2, 6, 7) };
        let eta = random_grid(&mut rng, d, k, max)?;
        let run = stabilize(&eta, Strategy::FifoWorklist)?;
        cases += 1;
        let s = &run.final_config;
        if s.total() != eta.total() {
            failures.push(Failure::with_grid(
                format!(
                    "trial {trial}: mass drifted from {} to {}",
                    eta.total(),
                    s.total()
                ),
                &eta,
            ));
        }
        let cap = 2 * d as i64 - 1;
        for c in s.bounding_box().coords() {
            let v = s.get(c);
            if v < 0 || v > cap {
                failures.push(Failure::with_grid(
                    format!("trial {trial}: site {c:?} holds {v} chips after stabilization"),
                    &eta,
                ));
                break;
            }
        }
        let bx = run.odometer.bounding_box();
        let mut broke = false;
        for c in bx.coords() {
            if bx.is_interior(c) && !broke {
                let got = eta.get(c) + run.odometer.laplacian(c)?;
                if got != s.get(c) {
                    failures.push(Failure::with_grid(
                        format!(
                            "trial {trial}: toppling identity fails at {c:?}: {} + Δv = {got} ≠ {}",
                            eta.get(c),
                            s.get(c)
                        ),
                        &eta,
                    ));
                    broke = true;
                }
            }
        }
    }
    Ok(Suite { cases, failures })
}

/// The Dirichlet fundamental solution: certified residual, exact boundary
/// data, bitwise repeatability.
fn fundamental_solution(_rng: ChaCha8Rng) -> Result<Suite> {
    let mut failures = Vec::new();
    let p = GreenProblem::new(2, 289, 1.0, 1e-10)?;
    let sol = solve_phi_n(&p)?;
    if sol.residual > p.tol {
        failures.push(Failure::plain(format!(
            "residual {} exceeds tolerance {}",
            sol.residual, p.tol
        )));
    }
    let h = p.mesh();
    let cut = (p.radius / h) * (p.radius / h);
    for c in sol.field.bounding_box().coords() {
        if (norm_sq(c) as f64) >= cut {
            let x = [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h];
            if sol.field.get(c).to_bits() != continuum_phi(x, 2)?.to_bits() {
                failures.push(Failure::plain(format!(
                    "boundary value at {c:?} is not the continuum potential"
                )));
                break;
            }
        }
    }
    let again = solve_phi_n(&p)?;
    if again.field.values().iter().zip(sol.field.values()).any(|(a, b)| a.to_bits() != b.to_bits())
    {
        failures.push(Failure::plain("repeated solve differs bitwise".into()));
    }
    Ok(Suite { cases: 3, failures })
}

/// The two-sided barrier inequality on a real pile, plus its sharpness
/// (a shifted comparison field must fail).
fn barrier_suite(_rng: ChaCha8Rng) -> Result<Suite> {
    let mut failures = Vec::new();
    let n = 400u64;
    let run = crate::stabilize::stabilize_point_pile(2, n, Strategy::FifoWorklist)?;
    let h = mesh_size(2, n);
    let ball_r = h * (measured_radius(&run.final_config) + 1.0);
    let p = GreenProblem::new(2, n, 1.6 * ball_r, 1e-12)?;
    let sol = solve_phi_n(&p)?;
    let wbar = crate::analysis::wbar_field(&run.odometer, &sol.field, n)?;
    let check = barrier_bounds(&wbar, &sol.field, ball_r, 1e-8)?;
    if !check.pass {
        failures.push(Failure::plain(format!(
            "barrier violated: lower margin {} at {:?}, upper margin {} at {:?}",
            check.lower_margin, check.lower_site, check.upper_margin, check.upper_site
        )));
    }
    let bx = wbar.bounding_box();
    let shifted: Vec<f64> = wbar.values().iter().map(|v| v + 1.0).collect();
    let bad = barrier_bounds(&RealField::new(*bx, h, shifted)?, &sol.field, ball_r, 1e-8)?;
    if bad.pass {
        failures.push(Failure::plain(
            "barrier failed to reject a shifted comparison field".into(),
        ));
    }
    Ok(Suite { cases: 2, failures })
}

/// Mass normalization and linearity of the weak-* pairing.
fn weak_pairing(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut failures = Vec::new();
    let n = 600u64;
    let run = crate::stabilize::stabilize_point_pile(2, n, Strategy::FifoWorklist)?;
    let sbar = crate::lattice::rescale_chips(&run.final_config, n)?;
    let h = sbar.h();
    let cover = h * measured_radius(&run.final_config);
    let reach = h * (run.final_config.bounding_box().half_width() as f64 + 0.4);
    let phi = TestFunction::plateau([0.0, 0.0, 0.0], cover + h, reach.min(cover + 0.2))?;
    let mass = pair(&sbar, &phi)?;
    if (mass - 1.0).abs() > 1e-12 {
        failures.push(Failure::plain(format!(
            "covering pairing is {mass}, not the unit mass"
        )));
    }
    let bx = LatticeBox::new(2, 12)?;
    let hh = 1.0 / 14.0;
    let bump = TestFunction::bump([0.0, 0.0, 0.0], 0.6)?;
    for trial in 0..5 {
        let f1: Vec<f64> = (0..bx.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f2: Vec<f64> = (0..bx.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let combo: Vec<f64> = f1.iter().zip(&f2).map(|(&u, &v)| a * u + b * v).collect();
        let p1 = pair(&RealField::new(bx, hh, f1)?, &bump)?;
        let p2 = pair(&RealField::new(bx, hh, f2)?, &bump)?;
        let pc = pair(&RealField::new(bx, hh, combo)?, &bump)?;
        let want = a * p1 + b * p2;
        if (pc - want).abs() > 1e-12 * want.abs().max(p1.abs()).max(p2.abs()).max(1e-30) {
            failures.push(Failure::plain(format!(
                "trial {trial}: pairing is not linear ({pc} vs {want})"
            )));
        }
    }
    Ok(Suite { cases: 6, failures })
}

/// Field dumps and renders reproduce their inputs byte for byte.
fn serialization_round_trip(mut rng: ChaCha8Rng) -> Result<Suite> {
    let mut failures = Vec::new();
    let eta = random_grid(&mut rng, 2, 7, 6)?;
    let mut buf = Vec::new();
    sfield::write_chips(&mut buf, &eta)?;
    let back = sfield::read(buf.as_slice())?.into_chips()?;
    if back != eta {
        failures.push(Failure::with_grid(
            "chip grid changed across a dump round trip".into(),
            &eta,
        ));
    }
    let run = stabilize(&eta, Strategy::FifoWorklist)?;
    let mut obuf = Vec::new();
    sfield::write_odometer(&mut obuf, &run.odometer)?;
    if sfield::read(obuf.as_slice())?.into_odometer()? != run.odometer {
        failures.push(Failure::with_grid(
            "odometer changed across a dump round trip".into(),
            &eta,
        ));
    }
    let bx = *eta.bounding_box();
    let field = RealField::new(
        bx,
        0.125,
        (0..bx.len()).map(|_| rng.gen_range(-4.0..4.0)).collect(),
    )?;
    let mut fbuf = Vec::new();
    sfield::write_real(&mut fbuf, &field)?;
    let rf = sfield::read(fbuf.as_slice())?.into_real()?;
    if rf.values().iter().zip(field.values()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        failures.push(Failure::plain(
            "real field changed across a dump round trip".into(),
        ));
    }
    let png_a = render_png(&run.final_config, &Palette::planar_default(), None, None)?;
    let png_b = render_png(&run.final_config, &Palette::planar_default(), None, None)?;
    if png_a != png_b {
        failures.push(Failure::with_grid("render is not deterministic".into(), &eta));
    }
    Ok(Suite { cases: 4, failures })
}
