//! A deliberately naive reference stabilizer, independent of the library's
//! engines: sparse map of chip counts, one toppling per queue pop, no bulk
//! firing, no box bookkeeping. Slow and obviously correct, which is the
//! point — library results are checked against it site by site.

use std::collections::{HashMap, VecDeque};

use sandpile::lattice::{ChipGrid, Odometer};

pub type Site = [i64; 3];

fn neighbors(d: usize, c: Site) -> Vec<Site> {
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for step in [-1i64, 1] {
            let mut n = c;
            n[axis] += step;
            out.push(n);
        }
    }
    out
}

/// Stabilize a sparse configuration; returns (final counts, odometer),
/// both maps holding only nonzero entries.
pub fn naive_stabilize(d: usize, chips: &HashMap<Site, i64>) -> (HashMap<Site, i64>, HashMap<Site, i64>) {
    let threshold = 2 * d as i64;
    let mut s: HashMap<Site, i64> = chips
        .iter()
        .filter(|&(_, &v)| v != 0)
        .map(|(&k, &v)| (k, v))
        .collect();
    let mut v: HashMap<Site, i64> = HashMap::new();
    let mut queue: VecDeque<Site> = s
        .iter()
        .filter(|&(_, &c)| c >= threshold)
        .map(|(&k, _)| k)
        .collect();
    while let Some(c) = queue.pop_front() {
        if s.get(&c).copied().unwrap_or(0) < threshold {
            continue;
        }
        *s.get_mut(&c).unwrap() -= threshold;
        *v.entry(c).or_insert(0) += 1;
        if s[&c] >= threshold {
            queue.push_back(c);
        }
        for nbr in neighbors(d, c) {
            let slot = s.entry(nbr).or_insert(0);
            *slot += 1;
            if *slot >= threshold {
                queue.push_back(nbr);
            }
        }
    }
    s.retain(|_, &mut c| c != 0);
    (s, v)
}

/// Point pile shorthand.
pub fn naive_point_pile(d: usize, n: i64) -> (HashMap<Site, i64>, HashMap<Site, i64>) {
    let mut chips = HashMap::new();
    chips.insert([0, 0, 0], n);
    naive_stabilize(d, &chips)
}

/// Every nonzero grid entry matches the map and vice versa.
pub fn grid_matches(grid: &ChipGrid, want: &HashMap<Site, i64>) -> std::result::Result<(), String> {
    for c in grid.bounding_box().coords() {
        let got = grid.get(c);
        let expect = want.get(&c).copied().unwrap_or(0);
        if got != expect {
            return Err(format!("site {c:?}: grid holds {got}, oracle says {expect}"));
        }
    }
    for (&c, &expect) in want {
        if !grid.bounding_box().contains(c) && expect != 0 {
            return Err(format!("oracle mass {expect} at {c:?} outside the grid box"));
        }
    }
    Ok(())
}

/// Same check for odometers.
pub fn odometer_matches(odo: &Odometer, want: &HashMap<Site, i64>) -> std::result::Result<(), String> {
    for c in odo.bounding_box().coords() {
        let got = odo.get(c);
        let expect = want.get(&c).copied().unwrap_or(0);
        if got != expect {
            return Err(format!("site {c:?}: odometer holds {got}, oracle says {expect}"));
        }
    }
    for (&c, &expect) in want {
        if !odo.bounding_box().contains(c) && expect != 0 {
            return Err(format!("oracle toppled {expect} times at {c:?} outside the box"));
        }
    }
    Ok(())
}
