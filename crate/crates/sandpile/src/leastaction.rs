//! The odometer's variational side. A nonnegative integer field v
//! "stabilizes" η when η + Δ¹v is stable everywhere — no legality required,
//! v only has to promise enough topplings. Among all such fields the true
//! odometer is pointwise minimal (the least action principle), which gives
//! an independent, scheduler-free characterization of what `stabilize`
//! computes. This module checks candidates against that characterization
//! and manufactures stabilizing-but-wasteful witnesses for the tests: extra
//! forced topplings at stable sites, followed by letting the dust settle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::lattice::{add, directions, ChipGrid, Coord, LatticeBox, Odometer};
use crate::stabilize::{
    random_legal_run_recorded, re_embed, stabilize, stabilize_signed, Options, Strategy,
};
use crate::Result;

/// A proposed toppling count per site: nonnegative, zero outside its box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateOdometer {
    bx: LatticeBox,
    values: Vec<i64>,
}

impl CandidateOdometer {
    pub fn new(bx: LatticeBox, values: Vec<i64>) -> Result<Self> {
        if values.len() != bx.len() {
            return Err(Error::BoxMismatch(format!(
                "expected {} values for box, got {}",
                bx.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v < 0) {
            return Err(Error::Format(format!(
                "candidate odometer has negative count {} at flat index {pos}",
                values[pos]
            )));
        }
        Ok(CandidateOdometer { bx, values })
    }

    pub fn from_odometer(v: &Odometer) -> Self {
        CandidateOdometer {
            bx: *v.bounding_box(),
            values: v.values().to_vec(),
        }
    }

    pub fn bounding_box(&self) -> &LatticeBox {
        &self.bx
    }

    /// Toppling count at a site; zero outside the box.
    pub fn get(&self, c: Coord) -> i64 {
        if self.bx.contains(c) {
            self.values[self.bx.index(c)]
        } else {
            0
        }
    }

    /// Add `t` forced topplings at a site (must lie in the box).
    pub fn bump(&mut self, c: Coord, t: i64) -> Result<()> {
        if t < 0 {
            return Err(Error::Format(format!("cannot bump by negative count {t}")));
        }
        let idx = self.bx.checked_index(c)?;
        self.values[idx] += t;
        Ok(())
    }

    /// Laplacian of the candidate with zero extension outside the box, so it
    /// is defined at every site of Z^d.
    fn laplacian_anywhere(&self, c: Coord) -> i64 {
        let d = self.bx.dimension();
        let nbr: i64 = directions(d).iter().map(|&dir| self.get(add(c, dir))).sum();
        nbr - 2 * d as i64 * self.get(c)
    }
}

/// Does v stabilize η? Checks η + Δ¹v ≤ 2d−1 at every site of Z^d (outside
/// the candidate's one-site halo both terms vanish, so the scan is finite)
/// and reports the first violating site in raster order, or None when v is
/// stabilizing. The positive support of η must sit strictly inside v's box.
pub fn first_violation(eta: &ChipGrid, v: &CandidateOdometer) -> Result<Option<Coord>> {
    let d = eta.bounding_box().dimension();
    if d != v.bx.dimension() {
        return Err(Error::BoxMismatch(format!(
            "configuration is {}-dimensional, candidate {}-dimensional",
            d,
            v.bx.dimension()
        )));
    }
    for c in eta.bounding_box().coords() {
        if eta.get(c) > 0 && !v.bx.is_interior(c) {
            return Err(Error::BoxMismatch(format!(
                "chips at {c:?} are not strictly inside the candidate box (half-width {})",
                v.bx.half_width()
            )));
        }
    }
    let stable = 2 * d as i64 - 1;
    // One ring beyond the candidate box: everything further out is untouched
    // by Δ¹v and holds no chips.
    let halo = LatticeBox::new(d, v.bx.half_width() + 1)?;
    for c in halo.coords() {
        if eta.get(c) + v.laplacian_anywhere(c) > stable {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

pub fn is_stabilizing(eta: &ChipGrid, v: &CandidateOdometer) -> Result<bool> {
    Ok(first_violation(eta, v)?.is_none())
}

/// The least action principle as a runnable check: the true odometer of η
/// must lie pointwise below any stabilizing candidate. Errors with
/// `NotStabilizing` when the precondition fails; a `false` return means the
/// stabilizer itself is broken, never a legitimate outcome.
pub fn check_least_action(eta: &ChipGrid, v: &CandidateOdometer) -> Result<bool> {
    if let Some(site) = first_violation(eta, v)? {
        return Err(Error::NotStabilizing { site });
    }
    let r = stabilize(eta, Strategy::FifoWorklist)?;
    let dominated = r
        .odometer
        .bounding_box()
        .coords()
        .all(|c| r.odometer.get(c) <= v.get(c));
    Ok(dominated)
}

/// Record two random legal toppling sequences for η and verify they are
/// permutations of each other: equal length and equal per-site multiplicity,
/// both equal to the odometer. Requires the run to finish within 10^6
/// topplings (`CapacityExceeded` otherwise).
pub fn permutation_audit(eta: &ChipGrid, seed_a: u64, seed_b: u64) -> Result<bool> {
    const CAP: u64 = 1_000_000;
    let (ra, seq_a) = random_legal_run_recorded(eta, seed_a, CAP)?;
    let (rb, seq_b) = random_legal_run_recorded(eta, seed_b, CAP)?;
    if seq_a.len() != seq_b.len() {
        return Ok(false);
    }
    let mut mult_a = std::collections::HashMap::new();
    for c in &seq_a {
        *mult_a.entry(*c).or_insert(0i64) += 1;
    }
    let mut mult_b = std::collections::HashMap::new();
    for c in &seq_b {
        *mult_b.entry(*c).or_insert(0i64) += 1;
    }
    if mult_a != mult_b {
        return Ok(false);
    }
    // Both multisets must also BE the odometer.
    let bx = ra.odometer.bounding_box();
    Ok(ra.odometer == rb.odometer
        && bx
            .coords()
            .all(|c| ra.odometer.get(c) == mult_a.get(&c).copied().unwrap_or(0)))
}

/// Build a stabilizing candidate that strictly exceeds the odometer:
/// stabilize η, force `extra` additional topplings at random sites of the
/// settled box, and settle again. The combined count stabilizes η by
/// construction (the final configuration of the second run is stable), and
/// it is wasteful wherever topplings were forced, so it exercises the strict
/// side of u ≤ v. Intermediate chip counts may dip below zero — forced
/// topplings are not legal moves — which is fine: stabilizing sequences do
/// not promise legality.
pub fn stabilizing_witness(eta: &ChipGrid, seed: u64, extra: u64) -> Result<CandidateOdometer> {
    let r = stabilize(eta, Strategy::FifoWorklist)?;
    let inner = *r.odometer.bounding_box();
    // Room for the forced topplings' spill: one extra ring.
    let bx = LatticeBox::new(inner.dimension(), inner.half_width() + 1)?;
    let mut u = CandidateOdometer::new(bx, re_embed(&inner, &bx, r.odometer.values()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = inner.half_width();
    for _ in 0..extra {
        let mut c = [0i64; 3];
        for slot in c.iter_mut().take(inner.dimension()) {
            *slot = rng.gen_range(-k..=k);
        }
        u.bump(c, rng.gen_range(1..=3))?;
    }
    // Settle η + Δ¹u: whatever instability the forced topplings created gets
    // relaxed by further (legal) topplings, all of which are recorded on top
    // of u.
    let counts: Vec<i64> = bx.coords().map(|c| eta.get(c) + u.laplacian_anywhere(c)).collect();
    let (settled_bx, _, settle_odo) = stabilize_signed(bx, counts, &Options::default())?;
    let mut values = re_embed(&bx, &settled_bx, &u.values);
    for (slot, &t) in values.iter_mut().zip(settle_odo.values()) {
        *slot += t;
    }
    CandidateOdometer::new(settled_bx, values)
}
