//! Binary occupancy grid with an exact Euclidean distance transform.
//!
//! Cell `(col, row)` covers `[ox + col*res, ox + (col+1)*res) x [oy + row*res, oy + (row+1)*res)`;
//! row 0 is the bottom of the map. Distances are measured between cell centers.
//!
//! On disk a grid is a binary portable graymap (`P5`, maxval 255) whose first
//! row is the *top* of the map. Pixels below 128 are occupied (0 = occupied,
//! 255 = free). A sidecar text file next to it (same stem, `.meta` extension)
//! holds `key: value` lines for `resolution`, `origin_x` and `origin_y`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const FAR: f64 = 1e20;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<bool>,
    distance_field: Vec<f64>,
}

impl OccupancyGrid {
    /// `cells` is row-major with row 0 at the bottom; `true` means occupied.
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        cells: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::GridFormat("grid must have at least one cell".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::GridFormat(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "grid cells",
                expected: width * height,
                got: cells.len(),
            });
        }
        let distance_field = distance_transform(width, height, &cells)
            .into_iter()
            .map(|sq| {
                if sq >= FAR {
                    FAR
                } else {
                    sq.sqrt() * resolution
                }
            })
            .collect();
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
            distance_field,
        })
    }

    pub fn empty(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        Self::new(
            width,
            height,
            resolution,
            origin,
            vec![false; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn is_occupied(&self, col: usize, row: usize) -> bool {
        self.cells[self.index(col, row)]
    }

    /// Distance in meters from the center of `(col, row)` to the nearest
    /// occupied cell center; zero on occupied cells.
    pub fn cell_distance(&self, col: usize, row: usize) -> f64 {
        self.distance_field[self.index(col, row)]
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.resolution,
            self.origin.1 + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.origin.0) / self.resolution;
        let v = (y - self.origin.1) / self.resolution;
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let col = ((x - self.origin.0) / self.resolution).floor() as usize;
        let row = ((y - self.origin.1) / self.resolution).floor() as usize;
        Some((col.min(self.width - 1), row.min(self.height - 1)))
    }

    /// True when the point lies in an occupied cell or outside the map.
    pub fn is_blocked(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y)
            .is_none_or(|(c, r)| self.is_occupied(c, r))
    }

    /// Clearance at a world point, bilinearly interpolated between cell
    /// centers. Points outside the map have zero clearance.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.distance_and_gradient(x, y).0
    }

    /// Interpolated clearance and its gradient with respect to `(x, y)`.
    pub fn distance_and_gradient(&self, x: f64, y: f64) -> (f64, (f64, f64)) {
        if !self.contains(x, y) {
            return (0.0, (0.0, 0.0));
        }
        let (i0, i1, fx, gx_active) =
            interp_axis((x - self.origin.0) / self.resolution - 0.5, self.width);
        let (j0, j1, fy, gy_active) =
            interp_axis((y - self.origin.1) / self.resolution - 0.5, self.height);
        let d00 = self.distance_field[self.index(i0, j0)];
        let d10 = self.distance_field[self.index(i1, j0)];
        let d01 = self.distance_field[self.index(i0, j1)];
        let d11 = self.distance_field[self.index(i1, j1)];
        let d = (1.0 - fx) * (1.0 - fy) * d00
            + fx * (1.0 - fy) * d10
            + (1.0 - fx) * fy * d01
            + fx * fy * d11;
        let du = if gx_active {
            ((1.0 - fy) * (d10 - d00) + fy * (d11 - d01)) / self.resolution
        } else {
            0.0
        };
        let dv = if gy_active {
            ((1.0 - fx) * (d01 - d00) + fx * (d11 - d10)) / self.resolution
        } else {
            0.0
        };
        (d, (du, dv))
    }

    /// Reads a `P5` graymap and its `.meta` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let meta_path = meta_path(path);
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| {
            Error::GridFormat(format!("cannot read metadata {}: {e}", meta_path.display()))
        })?;
        Self::from_pgm(&bytes, &meta)
    }

    pub fn from_pgm(bytes: &[u8], meta: &str) -> Result<Self> {
        let (resolution, origin) = parse_meta(meta)?;
        let (width, height, pixels) = parse_pgm(bytes)?;
        let mut cells = vec![false; width * height];
        for file_row in 0..height {
            let row = height - 1 - file_row;
            for col in 0..width {
                cells[row * width + col] = pixels[file_row * width + col] < 128;
            }
        }
        Self::new(width, height, resolution, origin, cells)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for file_row in 0..self.height {
            let row = self.height - 1 - file_row;
            out.extend((0..self.width).map(|col| {
                if self.is_occupied(col, row) {
                    0u8
                } else {
                    255u8
                }
            }));
        }
        out
    }

    pub fn meta_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "resolution: {}", self.resolution);
        let _ = writeln!(s, "origin_x: {}", self.origin.0);
        let _ = writeln!(s, "origin_y: {}", self.origin.1);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        std::fs::write(meta_path(path), self.meta_text())?;
        Ok(())
    }
}

/// Sidecar metadata path: same stem, `.meta` extension.
pub fn meta_path(grid_path: &Path) -> PathBuf {
    grid_path.with_extension("meta")
}

fn interp_axis(u: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let max = (n - 1) as f64;
    if u <= 0.0 {
        return (0, 1, 0.0, false);
    }
    if u >= max {
        return (n - 2, n - 1, 1.0, false);
    }
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, i0 + 1, u - i0 as f64, true)
}

/// Squared distances in cells (separable lower-envelope transform).
fn distance_transform(width: usize, height: usize, cells: &[bool]) -> Vec<f64> {
    let mut grid: Vec<f64> = cells
        .iter()
        .map(|&occ| if occ { 0.0 } else { FAR })
        .collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for col in 0..width {
        for row in 0..height {
            f[row] = grid[row * width + col];
        }
        envelope_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for row in 0..height {
            grid[row * width + col] = d[row];
        }
    }
    for row in 0..height {
        f[..width].copy_from_slice(&grid[row * width..(row + 1) * width]);
        envelope_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[row * width..(row + 1) * width].copy_from_slice(&d[..width]);
    }
    grid.iter_mut().for_each(|g| {
        if *g >= FAR {
            *g = FAR;
        }
    });
    grid
}

fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k];
            let pf = p as f64;
            s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            // z[0] is -inf, so k never drops below zero
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let dq = qf - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

fn parse_meta(meta: &str) -> Result<(f64, (f64, f64))> {
    let mut resolution = None;
    let mut ox = None;
    let mut oy = None;
    for (lineno, line) in meta.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            Error::GridFormat(format!(
                "metadata line {}: expected `key: value`",
                lineno + 1
            ))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            Error::GridFormat(format!(
                "metadata line {}: `{}` is not a number",
                lineno + 1,
                value.trim()
            ))
        })?;
        match key.trim() {
            "resolution" => resolution = Some(value),
            "origin_x" => ox = Some(value),
            "origin_y" => oy = Some(value),
            other => {
                return Err(Error::GridFormat(format!(
                    "metadata line {}: unknown key `{other}`",
                    lineno + 1
                )))
            }
        }
    }
    let resolution =
        resolution.ok_or_else(|| Error::GridFormat("metadata: missing `resolution`".into()))?;
    Ok((resolution, (ox.unwrap_or(0.0), oy.unwrap_or(0.0))))
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::GridFormat("truncated PGM header".into()));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::GridFormat("bad PGM header".into()))?,
        );
    }
    if tokens[0] != "P5" {
        return Err(Error::GridFormat(format!(
            "expected P5 magic, got `{}`",
            tokens[0]
        )));
    }
    let parse = |t: &str, what: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| Error::GridFormat(format!("bad PGM {what} `{t}`")))
    };
    let width = parse(tokens[1], "width")?;
    let height = parse(tokens[2], "height")?;
    let maxval = parse(tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::GridFormat(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + width * height).ok_or_else(|| {
        Error::GridFormat(format!("raster too short: need {} bytes", width * height))
    })?;
    Ok((width, height, raster))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(grid: &OccupancyGrid, col: usize, row: usize) -> f64 {
        let mut best = f64::INFINITY;
        for r in 0..grid.height() {
            for c in 0..grid.width() {
                if grid.is_occupied(c, r) {
                    let dc = c as f64 - col as f64;
                    let dr = r as f64 - row as f64;
                    best = best.min((dc * dc + dr * dr).sqrt() * grid.resolution());
                }
            }
        }
        best
    }

    #[test]
    fn distance_field_matches_brute_force_small() {
        let mut cells = vec![false; 7 * 5];
        cells[2 * 7 + 3] = true;
        cells[4 * 7 + 6] = true;
        let g = OccupancyGrid::new(7, 5, 0.1, (0.0, 0.0), cells).unwrap();
        for r in 0..5 {
            for c in 0..7 {
                assert_eq!(
                    g.cell_distance(c, r),
                    brute_force(&g, c, r),
                    "cell ({c},{r})"
                );
                assert_eq!(g.cell_distance(c, r) == 0.0, g.is_occupied(c, r));
            }
        }
    }

    #[test]
    fn bilinear_is_exact_at_centers_and_zero_outside() {
        let mut cells = vec![false; 10 * 10];
        cells[5 * 10 + 5] = true;
        let g = OccupancyGrid::new(10, 10, 0.2, (-1.0, 2.0), cells).unwrap();
        let (x, y) = g.cell_center(2, 7);
        assert!((g.distance(x, y) - g.cell_distance(2, 7)).abs() < 1e-12);
        assert_eq!(g.distance(-5.0, 0.0), 0.0);
        assert!(g.is_blocked(-5.0, 0.0));
    }

    #[test]
    fn pgm_round_trip_keeps_orientation() {
        let mut cells = vec![false; 4 * 3];
        cells[0] = true; // bottom-left
        let g = OccupancyGrid::new(4, 3, 0.05, (1.0, -2.0), cells).unwrap();
        let bytes = g.to_pgm();
        // bottom-left cell is the first byte of the last raster row
        let header_len = bytes.len() - 12;
        assert_eq!(bytes[header_len + 8], 0);
        let back = OccupancyGrid::from_pgm(&bytes, &g.meta_text()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(OccupancyGrid::from_pgm(b"P2\n1 1\n255\n\0", "resolution: 1").is_err());
        assert!(OccupancyGrid::from_pgm(b"P5\n2 2\n255\n\0", "resolution: 1").is_err());
        assert!(OccupancyGrid::from_pgm(b"P5\n1 1\n255\n\0", "origin_x: 0").is_err());
        assert!(OccupancyGrid::from_pgm(b"P5\n1 1\n255\n\0", "resolution: 1\ncolor: 3").is_err());
        assert!(OccupancyGrid::new(0, 1, 1.0, (0.0, 0.0), vec![]).is_err());
    }
}
