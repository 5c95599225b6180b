//! Exact images of stable configurations: one lattice site, one pixel.
//!
//! The encoder writes PNGs directly — signature, IHDR, a single IDAT whose
//! zlib stream uses stored (uncompressed) deflate blocks, and IEND. Stored
//! blocks keep the encoder a page long and the output byte-deterministic;
//! the images are data visualizations, so fidelity beats file size. Planar
//! grids render whole or cropped; spatial grids render one axis-aligned
//! plane (fixed third coordinate) at a time.

use crate::error::Error;
use crate::lattice::ChipGrid;
use crate::Result;

/// Chip-count-to-color map. Index = chip count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    /// White / light gray / dark gray / black for planar counts 0..=3.
    pub fn planar_default() -> Self {
        Palette {
            colors: vec![
                [255, 255, 255],
                [192, 192, 192],
                [96, 96, 96],
                [0, 0, 0],
            ],
        }
    }

    /// Even six-step grayscale ramp for spatial counts 0..=5.
    pub fn spatial_default() -> Self {
        Palette {
            colors: (0..6).map(|i| [255 - 51 * i; 3]).collect(),
        }
    }

    pub fn for_dimension(d: usize) -> Self {
        if d == 2 {
            Palette::planar_default()
        } else {
            Palette::spatial_default()
        }
    }

    /// Colors must be pairwise distinct and cover counts 0..=2d−1.
    pub fn new(colors: Vec<[u8; 3]>, d: usize) -> Result<Self> {
        if colors.len() != 2 * d {
            return Err(Error::Format(format!(
                "palette needs {} colors for dimension {d}, got {}",
                2 * d,
                colors.len()
            )));
        }
        for i in 0..colors.len() {
            for j in 0..i {
                if colors[i] == colors[j] {
                    return Err(Error::Format(format!(
                        "palette colors {j} and {i} coincide ({:?})",
                        colors[i]
                    )));
                }
            }
        }
        Ok(Palette { colors })
    }

    /// `default`, or an explicit `r,g,b;r,g,b;...` list (one triple per count).
    pub fn parse(spec: &str, d: usize) -> Result<Self> {
        if spec == "default" {
            return Ok(Palette::for_dimension(d));
        }
        let colors = spec
            .split(';')
            .map(|triple| {
                let parts: Vec<&str> = triple.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::Format(format!(
                        "palette entry '{triple}' is not r,g,b"
                    )));
                }
                let mut c = [0u8; 3];
                for (slot, p) in c.iter_mut().zip(&parts) {
                    *slot = p.trim().parse::<u8>().map_err(|_| {
                        Error::Format(format!("palette entry '{triple}' is not r,g,b"))
                    })?;
                }
                Ok(c)
            })
            .collect::<Result<Vec<[u8; 3]>>>()?;
        Palette::new(colors, d)
    }

    pub fn color(&self, count: i64) -> Result<[u8; 3]> {
        usize::try_from(count)
            .ok()
            .and_then(|i| self.colors.get(i).copied())
            .ok_or_else(|| {
                Error::Format(format!(
                    "chip count {count} has no palette entry (palette covers 0..={})",
                    self.colors.len() - 1
                ))
            })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Inclusive lattice rectangle x0..=x1, y0..=y1 in the image plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl CropRect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::Format(format!(
                "empty crop rectangle {x0},{y0}..{x1},{y1}"
            )));
        }
        Ok(CropRect { x0, y0, x1, y1 })
    }

    /// `x0,y0,x1,y1` with inclusive corners.
    pub fn parse(spec: &str) -> Result<Self> {
        let nums: Vec<i64> = spec
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("crop '{spec}' is not x0,y0,x1,y1")))?;
        if nums.len() != 4 {
            return Err(Error::Format(format!("crop '{spec}' is not x0,y0,x1,y1")));
        }
        CropRect::new(nums[0], nums[1], nums[2], nums[3])
    }
}

/// Render a stable configuration to PNG bytes. Pixels map to sites with x
/// increasing rightward and y increasing upward; `crop` defaults to the full
/// box. For spatial grids, `slice` picks the rendered plane's third
/// coordinate (default 0); planar grids require slice 0 or none.
pub fn render_png(
    s: &ChipGrid,
    palette: &Palette,
    crop: Option<CropRect>,
    slice: Option<i64>,
) -> Result<Vec<u8>> {
    let bx = s.bounding_box();
    let d = bx.dimension();
    let k = bx.half_width();
    let z = slice.unwrap_or(0);
    if d == 2 && z != 0 {
        return Err(Error::Format(format!(
            "planar grid has no slice {z}; omit --slice or use 0"
        )));
    }
    if d == 3 && z.abs() > k {
        return Err(Error::CropOutOfBounds);
    }
    let rect = crop.unwrap_or(CropRect {
        x0: -k,
        y0: -k,
        x1: k,
        y1: k,
    });
    if rect.x0 < -k || rect.y0 < -k || rect.x1 > k || rect.y1 > k {
        return Err(Error::CropOutOfBounds);
    }
    let width = (rect.x1 - rect.x0 + 1) as usize;
    let height = (rect.y1 - rect.y0 + 1) as usize;

    // Raw image stream: per row, a filter byte (0 = None) then RGB triples.
    // Top image row is the largest y, keeping the axes math-oriented.
    let mut raw = Vec::with_capacity(height * (1 + 3 * width));
    for row in 0..height {
        let y = rect.y1 - row as i64;
        raw.push(0u8);
        for col in 0..width {
            let x = rect.x0 + col as i64;
            let count = s.get([x, y, z]);
            raw.extend_from_slice(&palette.color(count)?);
        }
    }

    let mut png = Vec::with_capacity(raw.len() + 128);
    png.extend_from_slice(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]);
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(height as u32).to_be_bytes());
    // Bit depth 8, truecolor, deflate, adaptive filtering, no interlace.
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
    push_chunk(&mut png, b"IHDR", &ihdr);
    push_chunk(&mut png, b"IDAT", &zlib_stored(&raw));
    push_chunk(&mut png, b"IEND", &[]);
    Ok(png)
}

fn push_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let mut crc = Crc32::new();
    crc.update(kind);
    crc.update(data);
    out.extend_from_slice(&crc.finish().to_be_bytes());
}

/// Wrap raw bytes in a zlib stream of stored (uncompressed) deflate blocks.
fn zlib_stored(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() + raw.len() / 65_535 * 5 + 16);
    // CMF/FLG: 32K window deflate, no dict, check bits making the pair a
    // multiple of 31.
    out.extend_from_slice(&[0x78, 0x01]);
    let mut chunks = raw.chunks(65_535).peekable();
    loop {
        let block = chunks.next().unwrap_or(&[]);
        let last = chunks.peek().is_none();
        out.push(u8::from(last));
        let len = block.len() as u16;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&(!len).to_le_bytes());
        out.extend_from_slice(block);
        if last {
            break;
        }
    }
    out.extend_from_slice(&adler32(raw).to_be_bytes());
    out
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65_521;
    let (mut a, mut b) = (1u32, 0u32);
    // 5552 is the largest run that cannot overflow u32 between reductions.
    for chunk in data.chunks(5552) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

/// Table-driven CRC-32 (reflected polynomial 0xEDB88320), as PNG requires.
struct Crc32 {
    state: u32,
}

impl Crc32 {
    fn table() -> &'static [u32; 256] {
        use std::sync::OnceLock;
        static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut t = [0u32; 256];
            for (i, slot) in t.iter_mut().enumerate() {
                let mut c = i as u32;
                for _ in 0..8 {
                    c = if c & 1 == 1 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                }
                *slot = c;
            }
            t
        })
    }

    fn new() -> Self {
        Crc32 { state: 0xFFFF_FFFF }
    }

    fn update(&mut self, data: &[u8]) {
        let table = Crc32::table();
        for &byte in data {
            self.state = table[((self.state ^ byte as u32) & 0xFF) as usize] ^ (self.state >> 8);
        }
    }

    fn finish(self) -> u32 {
        self.state ^ 0xFFFF_FFFF
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ChipGrid, LatticeBox};
    use crate::stabilize::{stabilize, stabilize_point_pile, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Minimal structural decoder for the encoder's own output: verifies
    /// signature, chunk CRCs, stored-block framing, and the adler checksum,
    /// then returns (width, height, pixels row-major top-down).
    fn decode(png: &[u8]) -> (usize, usize, Vec<[u8; 3]>) {
        assert_eq!(&png[..8], &[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]);
        let mut pos = 8;
        let mut width = 0usize;
        let mut height = 0usize;
        let mut idat = Vec::new();
        let mut saw_end = false;
        while pos < png.len() {
            let len = u32::from_be_bytes(png[pos..pos + 4].try_into().unwrap()) as usize;
            let kind = &png[pos + 4..pos + 8];
            let data = &png[pos + 8..pos + 8 + len];
            let mut crc = Crc32::new();
            crc.update(kind);
            crc.update(data);
            let stored = u32::from_be_bytes(png[pos + 8 + len..pos + 12 + len].try_into().unwrap());
            assert_eq!(crc.finish(), stored, "chunk CRC");
            match kind {
                b"IHDR" => {
                    width = u32::from_be_bytes(data[0..4].try_into().unwrap()) as usize;
                    height = u32::from_be_bytes(data[4..8].try_into().unwrap()) as usize;
                    assert_eq!(&data[8..13], &[8, 2, 0, 0, 0]);
                }
                b"IDAT" => idat.extend_from_slice(data),
                b"IEND" => {
                    assert_eq!(len, 0);
                    saw_end = true;
                }
                other => panic!("unexpected chunk {other:?}"),
            }
            pos += 12 + len;
        }
        assert!(saw_end, "missing IEND");

        // Unwrap the zlib stream of stored blocks.
        assert_eq!(idat[0] & 0x0F, 8, "deflate method");
        assert_eq!(
            (u16::from(idat[0]) << 8 | u16::from(idat[1])) % 31,
            0,
            "zlib check bits"
        );
        let mut raw = Vec::new();
        let mut p = 2usize;
        loop {
            let last = idat[p];
            assert!(last <= 1, "stored block type");
            let len = u16::from_le_bytes([idat[p + 1], idat[p + 2]]) as usize;
            let nlen = u16::from_le_bytes([idat[p + 3], idat[p + 4]]);
            assert_eq!(!(len as u16), nlen, "stored block length check");
            raw.extend_from_slice(&idat[p + 5..p + 5 + len]);
            p += 5 + len;
            if last == 1 {
                break;
            }
        }
        assert_eq!(p + 4, idat.len(), "trailing bytes after adler");
        let adler = u32::from_be_bytes(idat[p..p + 4].try_into().unwrap());
        assert_eq!(adler, adler32(&raw), "adler32");

        assert_eq!(raw.len(), height * (1 + 3 * width));
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            let start = row * (1 + 3 * width);
            assert_eq!(raw[start], 0, "filter byte");
            for col in 0..width {
                let at = start + 1 + 3 * col;
                pixels.push([raw[at], raw[at + 1], raw[at + 2]]);
            }
        }
        (width, height, pixels)
    }

    #[test]
    fn four_chip_pile_renders_a_cross() {
        let run = stabilize_point_pile(2, 4, Strategy::FifoWorklist).unwrap();
        let crop = CropRect::new(-1, -1, 1, 1).unwrap();
        let png = render_png(
            &run.final_config,
            &Palette::planar_default(),
            Some(crop),
            None,
        )
        .unwrap();
        let (w, h, px) = decode(&png);
        assert_eq!((w, h), (3, 3));
        let white = [255, 255, 255];
        let light = [192, 192, 192];
        // Rows top-down: y = 1, 0, -1.
        assert_eq!(px[0], white);
        assert_eq!(px[1], light);
        assert_eq!(px[2], white);
        assert_eq!(px[3], light);
        assert_eq!(px[4], white, "toppled origin is empty");
        assert_eq!(px[5], light);
        assert_eq!(px[6], white);
        assert_eq!(px[7], light);
        assert_eq!(px[8], white);
    }

    #[test]
    fn three_chips_make_one_black_pixel() {
        let mut g = ChipGrid::zeros(LatticeBox::new(2, 2).unwrap());
        g.set([0, 0, 0], 3).unwrap();
        let crop = CropRect::new(0, 0, 0, 0).unwrap();
        let png = render_png(&g, &Palette::planar_default(), Some(crop), None).unwrap();
        let (w, h, px) = decode(&png);
        assert_eq!((w, h, px[0]), (1, 1, [0, 0, 0]));
    }

    #[test]
    fn color_histogram_matches_chip_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let bx = LatticeBox::new(2, 12).unwrap();
        let mut g = ChipGrid::zeros(bx);
        for c in bx.coords() {
            g.set(c, rng.gen_range(0..=3)).unwrap();
        }
        let palette = Palette::planar_default();
        let png = render_png(&g, &palette, None, None).unwrap();
        let (w, h, px) = decode(&png);
        assert_eq!((w, h), (25, 25));
        let mut color_hist: HashMap<[u8; 3], usize> = HashMap::new();
        for p in &px {
            *color_hist.entry(*p).or_default() += 1;
        }
        let mut chip_hist: HashMap<[u8; 3], usize> = HashMap::new();
        for c in bx.coords() {
            *chip_hist.entry(palette.color(g.get(c)).unwrap()).or_default() += 1;
        }
        assert_eq!(color_hist, chip_hist);
    }

    #[test]
    fn nonwhite_pixels_count_occupied_sites() {
        let run = stabilize_point_pile(2, 20_000, Strategy::FifoWorklist).unwrap();
        let s = &run.final_config;
        let png = render_png(s, &Palette::planar_default(), None, None).unwrap();
        let (_, _, px) = decode(&png);
        let nonwhite = px.iter().filter(|&&p| p != [255, 255, 255]).count();
        let occupied = s
            .bounding_box()
            .coords()
            .filter(|&c| s.get(c) > 0)
            .count();
        assert_eq!(nonwhite, occupied);
    }

    #[test]
    fn spatial_slices_select_planes() {
        let bx = LatticeBox::new(3, 2).unwrap();
        let mut g = ChipGrid::zeros(bx);
        g.set([1, -2, 0], 5).unwrap();
        g.set([1, -2, 1], 2).unwrap();
        let palette = Palette::spatial_default();
        let slice0 = render_png(&g, &palette, None, Some(0)).unwrap();
        let slice1 = render_png(&g, &palette, None, Some(1)).unwrap();
        let (w, h, px0) = decode(&slice0);
        assert_eq!((w, h), (5, 5));
        let (_, _, px1) = decode(&slice1);
        // Site (1, -2) sits at column 3, bottom row.
        let at = 4 * 5 + 3;
        assert_eq!(px0[at], [0, 0, 0]);
        assert_eq!(px1[at], [153, 153, 153]);
        assert!(px0.iter().filter(|&&p| p != [255; 3]).count() == 1);
        assert!(matches!(
            render_png(&g, &palette, None, Some(3)),
            Err(Error::CropOutOfBounds)
        ));
    }

    #[test]
    fn crops_must_stay_inside_the_box() {
        let g = ChipGrid::zeros(LatticeBox::new(2, 4).unwrap());
        let palette = Palette::planar_default();
        for bad in [
            CropRect::new(-5, 0, 0, 0).unwrap(),
            CropRect::new(0, 0, 5, 1).unwrap(),
            CropRect::new(0, -5, 1, 0).unwrap(),
        ] {
            assert!(matches!(
                render_png(&g, &palette, Some(bad), None),
                Err(Error::CropOutOfBounds)
            ));
        }
        assert!(CropRect::new(1, 0, 0, 0).is_err(), "inverted corners");
    }

    #[test]
    fn rendering_is_deterministic() {
        let run = stabilize_point_pile(2, 3000, Strategy::FullSweep).unwrap();
        let a = render_png(&run.final_config, &Palette::planar_default(), None, None).unwrap();
        let b = render_png(&run.final_config, &Palette::planar_default(), None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn long_rows_split_into_multiple_stored_blocks() {
        // A 200x200 render exceeds one 64 KiB stored block, exercising the
        // block-splitting path end to end.
        let bx = LatticeBox::new(2, 100).unwrap();
        let mut g = ChipGrid::zeros(bx);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for c in bx.coords() {
            g.set(c, rng.gen_range(0..=3)).unwrap();
        }
        let png = render_png(&g, &Palette::planar_default(), None, None).unwrap();
        let (w, h, px) = decode(&png);
        assert_eq!((w, h), (201, 201));
        assert_eq!(px.len(), 201 * 201);
        let stable = stabilize(&g, Strategy::FifoWorklist).unwrap();
        // Unrelated sanity: the random grid above was already stable.
        assert_eq!(stable.total_topples, 0);
    }

    #[test]
    fn palette_validation() {
        assert!(Palette::new(vec![[0; 3], [1; 3], [2; 3], [0; 3]], 2).is_err());
        assert!(Palette::new(vec![[0; 3], [1; 3], [2; 3]], 2).is_err());
        let p = Palette::parse("default", 3);
        assert_eq!(p.unwrap(), Palette::spatial_default());
        let custom = Palette::parse("255,0,0;0,255,0;0,0,255;9,9,9", 2).unwrap();
        assert_eq!(custom.color(1).unwrap(), [0, 255, 0]);
        assert!(custom.color(4).is_err());
        assert!(custom.color(-1).is_err());
        assert!(Palette::parse("255,0;1,2,3;4,5,6;7,8,9", 2).is_err());
        assert!(Palette::parse("300,0,0;1,2,3;4,5,6;7,8,9", 2).is_err());
    }

    #[test]
    fn planar_grids_reject_nonzero_slices() {
        let g = ChipGrid::zeros(LatticeBox::new(2, 2).unwrap());
        assert!(render_png(&g, &Palette::planar_default(), None, Some(1)).is_err());
        assert!(render_png(&g, &Palette::planar_default(), None, Some(0)).is_ok());
    }
}
