//! Dense origin-centered grids on Z^d and the discrete operators that act on
//! them: the (2d+1)-point Laplacian, lattice boundaries, nearest-neighbor
//! interpolation, and the n^(-1/d) rescaling of a stable configuration.
//!
//! All grids live on the box {-k..k}^d, stored row-major with the first
//! coordinate slowest. `Coord` always has three slots; for d = 2 the last
//! slot must be zero.

use crate::error::Error;
use crate::Result;

/// A lattice site. For d = 2 the third component is always 0.
pub type Coord = [i64; 3];

/// Squared Euclidean norm of a site (unused coordinate slots are zero).
#[inline]
pub fn norm_sq(c: Coord) -> i64 {
    c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
}

/// The 2d unit lattice directions in fixed order: -e_1, +e_1, -e_2, ...
#[inline]
pub fn directions(d: usize) -> &'static [Coord] {
    const DIRS: [Coord; 6] = [
        [-1, 0, 0],
        [1, 0, 0],
        [0, -1, 0],
        [0, 1, 0],
        [0, 0, -1],
        [0, 0, 1],
    ];
    &DIRS[..2 * d]
}

#[inline]
pub fn add(a: Coord, b: Coord) -> Coord {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Origin-centered box {-k..k}^d with row-major indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatticeBox {
    d: usize,
    k: i64,
}

impl LatticeBox {
    pub fn new(d: usize, k: i64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::Format(format!("dimension must be 2 or 3, got {d}")));
        }
        if k < 1 {
            return Err(Error::Format(format!("box half-width must be >= 1, got {k}")));
        }
        let side = 2u128 * k as u128 + 1;
        let len = side.pow(d as u32);
        if len > usize::MAX as u128 / 8 {
            return Err(Error::CapacityExceeded {
                what: "lattice box",
                needed: u64::MAX,
                cap: (usize::MAX / 8) as u64,
            });
        }
        Ok(LatticeBox { d, k })
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn half_width(&self) -> i64 {
        self.k
    }

    /// Sites per axis, 2k+1.
    #[inline]
    pub fn side(&self) -> usize {
        (2 * self.k + 1) as usize
    }

    /// Total number of sites, (2k+1)^d.
    #[inline]
    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, c: Coord) -> bool {
        let mut ok = c[0].abs() <= self.k && c[1].abs() <= self.k;
        if self.d == 3 {
            ok &= c[2].abs() <= self.k;
        } else {
            ok &= c[2] == 0;
        }
        ok
    }

    /// True when every neighbor of `c` is also inside the box.
    #[inline]
    pub fn is_interior(&self, c: Coord) -> bool {
        let mut ok = c[0].abs() < self.k && c[1].abs() < self.k;
        if self.d == 3 {
            ok &= c[2].abs() < self.k;
        } else {
            ok &= c[2] == 0;
        }
        ok
    }

    /// Row-major flat index of a contained site.
    #[inline]
    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c), "site {c:?} outside box k={}", self.k);
        let side = self.side();
        let mut idx = (c[0] + self.k) as usize * side + (c[1] + self.k) as usize;
        if self.d == 3 {
            idx = idx * side + (c[2] + self.k) as usize;
        }
        idx
    }

    pub fn checked_index(&self, c: Coord) -> Result<usize> {
        if self.contains(c) {
            Ok(self.index(c))
        } else {
            Err(Error::OutOfBounds {
                site: c,
                half_width: self.k,
            })
        }
    }

    /// Inverse of `index`.
    #[inline]
    pub fn coord(&self, idx: usize) -> Coord {
        debug_assert!(idx < self.len());
        let side = self.side();
        let mut c = [0i64; 3];
        let mut rest = idx;
        if self.d == 3 {
            c[2] = (rest % side) as i64 - self.k;
            rest /= side;
        }
        c[1] = (rest % side) as i64 - self.k;
        c[0] = (rest / side) as i64 - self.k;
        c
    }

    /// All sites in raster (row-major) order.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.len()).map(move |i| self.coord(i))
    }
}

/// Exact integer (2d+1)-point Laplacian sum_{y~x} (u(y) - u(x)) over a boxed
/// slice. Errors with `OutOfBounds` unless the site and all its neighbors lie
/// inside the box.
pub fn laplacian_i64(bx: &LatticeBox, values: &[i64], c: Coord) -> Result<i64> {
    debug_assert_eq!(values.len(), bx.len());
    if !bx.is_interior(c) {
        return Err(Error::OutOfBounds {
            site: c,
            half_width: bx.half_width(),
        });
    }
    let center = values[bx.index(c)];
    let mut acc = 0i64;
    for &dir in directions(bx.dimension()) {
        acc += values[bx.index(add(c, dir))] - center;
    }
    Ok(acc)
}

/// Chip counts on a box; nonnegative, implicitly zero outside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChipGrid {
    bx: LatticeBox,
    counts: Vec<i64>,
}

impl ChipGrid {
    pub fn zeros(bx: LatticeBox) -> Self {
        ChipGrid {
            counts: vec![0; bx.len()],
            bx,
        }
    }

    /// n chips at the origin on a box of half-width k.
    pub fn point(d: usize, k: i64, n: u64) -> Result<Self> {
        let bx = LatticeBox::new(d, k)?;
        if n > i64::MAX as u64 {
            return Err(Error::Format(format!("chip count {n} does not fit in i64")));
        }
        let mut g = ChipGrid::zeros(bx);
        let origin = bx.index([0, 0, 0]);
        g.counts[origin] = n as i64;
        Ok(g)
    }

    pub fn from_counts(bx: LatticeBox, counts: Vec<i64>) -> Result<Self> {
        if counts.len() != bx.len() {
            return Err(Error::BoxMismatch(format!(
                "expected {} values for box, got {}",
                bx.len(),
                counts.len()
            )));
        }
        let mut total: i128 = 0;
        for &c in &counts {
            if c < 0 {
                return Err(Error::Format(format!("negative chip count {c}")));
            }
            total += c as i128;
        }
        if total > i64::MAX as i128 {
            return Err(Error::Format("total mass does not fit in i64".into()));
        }
        Ok(ChipGrid { bx, counts })
    }

    #[inline]
    pub fn bounding_box(&self) -> &LatticeBox {
        &self.bx
    }

    /// Chip count at a site; sites outside the box hold zero chips.
    #[inline]
    pub fn get(&self, c: Coord) -> i64 {
        if self.bx.contains(c) {
            self.counts[self.bx.index(c)]
        } else {
            0
        }
    }

    pub fn set(&mut self, c: Coord, v: i64) -> Result<()> {
        if v < 0 {
            return Err(Error::Format(format!("negative chip count {v}")));
        }
        let idx = self.bx.checked_index(c)?;
        self.counts[idx] = v;
        Ok(())
    }

    /// Total mass; exact.
    pub fn total(&self) -> i64 {
        let t: i128 = self.counts.iter().map(|&c| c as i128).sum();
        debug_assert!(t <= i64::MAX as i128);
        t as i64
    }

    /// Exact integer Laplacian at an interior site.
    pub fn laplacian(&self, c: Coord) -> Result<i64> {
        laplacian_i64(&self.bx, &self.counts, c)
    }

    #[inline]
    pub fn values(&self) -> &[i64] {
        &self.counts
    }

}

/// Per-site toppling counts produced by a stabilization run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Odometer {
    bx: LatticeBox,
    topples: Vec<i64>,
}

impl Odometer {
    pub fn zeros(bx: LatticeBox) -> Self {
        Odometer {
            topples: vec![0; bx.len()],
            bx,
        }
    }

    pub fn from_topples(bx: LatticeBox, topples: Vec<i64>) -> Result<Self> {
        if topples.len() != bx.len() {
            return Err(Error::BoxMismatch(format!(
                "expected {} values for box, got {}",
                bx.len(),
                topples.len()
            )));
        }
        if let Some(bad) = topples.iter().find(|&&t| t < 0) {
            return Err(Error::Format(format!("negative topple count {bad}")));
        }
        Ok(Odometer { bx, topples })
    }

    pub(crate) fn from_raw(bx: LatticeBox, topples: Vec<i64>) -> Self {
        debug_assert_eq!(topples.len(), bx.len());
        debug_assert!(topples.iter().all(|&t| t >= 0));
        Odometer { bx, topples }
    }

    #[inline]
    pub fn bounding_box(&self) -> &LatticeBox {
        &self.bx
    }

    /// Topple count at a site; zero outside the box.
    #[inline]
    pub fn get(&self, c: Coord) -> i64 {
        if self.bx.contains(c) {
            self.topples[self.bx.index(c)]
        } else {
            0
        }
    }

    /// Exact integer Laplacian at an interior site.
    pub fn laplacian(&self, c: Coord) -> Result<i64> {
        laplacian_i64(&self.bx, &self.topples, c)
    }

    #[inline]
    pub fn values(&self) -> &[i64] {
        &self.topples
    }
}

/// A real-valued field sampled on the lattice h * {-k..k}^d.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    bx: LatticeBox,
    h: f64,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(bx: LatticeBox, h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Format(format!("mesh size must be positive, got {h}")));
        }
        if values.len() != bx.len() {
            return Err(Error::BoxMismatch(format!(
                "expected {} values for box, got {}",
                bx.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite field value {bad}")));
        }
        Ok(RealField { bx, h, values })
    }

    #[inline]
    pub fn bounding_box(&self) -> &LatticeBox {
        &self.bx
    }

    /// Mesh size h: the field's site z represents the point h*z.
    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Value at a lattice site; zero outside the box.
    #[inline]
    pub fn get(&self, c: Coord) -> f64 {
        if self.bx.contains(c) {
            self.values[self.bx.index(c)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Scaled Laplacian h^-2 sum_{y~x} (u(y) - u(x)) at an interior site.
    pub fn laplacian(&self, c: Coord) -> Result<f64> {
        if !self.bx.is_interior(c) {
            return Err(Error::OutOfBounds {
                site: c,
                half_width: self.bx.half_width(),
            });
        }
        let center = self.values[self.bx.index(c)];
        let mut acc = 0.0;
        for &dir in directions(self.bx.dimension()) {
            acc += self.values[self.bx.index(add(c, dir))] - center;
        }
        Ok(acc / (self.h * self.h))
    }

    /// Piecewise-constant extension: the value at the lattice site nearest to
    /// `x`, with exact-half ties rounded down in every coordinate. Errors if
    /// the nearest site falls outside the box.
    pub fn nn_interpolate(&self, x: [f64; 3]) -> Result<f64> {
        let mut site = [0i64; 3];
        for i in 0..self.bx.dimension() {
            site[i] = round_half_down(x[i] / self.h);
        }
        let idx = self.bx.checked_index(site)?;
        Ok(self.values[idx])
    }
}

/// Nearest integer to `t`, with exact halves rounded down: 0.5 -> 0,
/// -0.5 -> -1. Computed as ceil(t - 1/2); the subtraction is exact for all
/// |t| < 2^52, so no value within half an ulp of a tie can be misrounded
/// (floor(t + 1/2) with a tie correction gets 0.5 + 2^-52 wrong, because the
/// addition itself rounds onto the tie).
#[inline]
pub fn round_half_down(t: f64) -> i64 {
    (t - 0.5).ceil() as i64
}

/// Sites outside `in_set` with at least one lattice neighbor inside it, in
/// raster order of the box enlarged by one ring. The predicate is consulted
/// only for sites inside the box; everything outside counts as not in the set.
pub fn lattice_boundary(bx: &LatticeBox, in_set: impl Fn(Coord) -> bool) -> Vec<Coord> {
    let d = bx.dimension();
    let outer = LatticeBox::new(d, bx.half_width() + 1).expect("enlarged box");
    let member = |c: Coord| bx.contains(c) && in_set(c);
    let mut out = Vec::new();
    for c in outer.coords() {
        if member(c) {
            continue;
        }
        if directions(d).iter().any(|&dir| member(add(c, dir))) {
            out.push(c);
        }
    }
    out
}

/// Rescale a stable configuration of total mass n onto the grid of mesh
/// h = n^(-1/d): same box, same values, reinterpreted as a density so that
/// h^d * sum s = 1.
pub fn rescale_chips(s: &ChipGrid, n: u64) -> Result<RealField> {
    if n < 1 {
        return Err(Error::Format("rescaling needs mass n >= 1".into()));
    }
    if s.total() != n as i64 {
        return Err(Error::Format(format!(
            "rescaling mass mismatch: grid holds {}, expected {n}",
            s.total()
        )));
    }
    let h = mesh_size(s.bounding_box().dimension(), n);
    let values = s.values().iter().map(|&c| c as f64).collect();
    RealField::new(*s.bounding_box(), h, values)
}

/// The mesh size h = n^(-1/d) tying lattice scale to mass.
#[inline]
pub fn mesh_size(d: usize, n: u64) -> f64 {
    match d {
        2 => 1.0 / (n as f64).sqrt(),
        3 => 1.0 / (n as f64).cbrt(),
        _ => unreachable!("dimension is validated at box construction"),
    }
}
