//! Exact nearest-neighbor distance queries over a uniform bucket grid.
//!
//! Distances are computed with the same expression as a brute-force scan, so
//! the reported minimum is bit-identical to the all-pairs result.

use super::euclidean;

pub struct NearestNeighbors<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    cells: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> NearestNeighbors<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let extent: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        let max_extent = extent.iter().fold(0.0f64, |m, e| m.max(*e));
        // About 8n cells in total; surface-like sets occupy a fraction of them.
        let target = (2.0 * (points.len() as f64).cbrt()).max(1.0);
        let mut cell = if max_extent > 0.0 { max_extent / target } else { 1.0 };
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let mut cells = [1usize; 3];
        for a in 0..3 {
            cells[a] = ((extent[a] / cell).floor() as usize + 1).clamp(1, 1 << 10);
        }

        let n_cells = cells[0] * cells[1] * cells[2];
        let mut counts = vec![0usize; n_cells + 1];
        let keys: Vec<usize> = points
            .iter()
            .map(|p| Self::key_of(p, lo, cell, cells))
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0usize; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }

        Self {
            points,
            origin: lo,
            cell,
            cells,
            starts,
            order,
        }
    }

    fn cell_coord(v: f64, lo: f64, cell: f64, n: usize) -> usize {
        let c = ((v - lo) / cell).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    fn key_of(p: &[f64; 3], lo: [f64; 3], cell: f64, cells: [usize; 3]) -> usize {
        let cx = Self::cell_coord(p[0], lo[0], cell, cells[0]);
        let cy = Self::cell_coord(p[1], lo[1], cell, cells[1]);
        let cz = Self::cell_coord(p[2], lo[2], cell, cells[2]);
        cx + cells[0] * (cy + cells[1] * cz)
    }

    /// Distance from `q` to the closest indexed point; infinity when empty.
    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let home = [
            Self::cell_coord(q[0], self.origin[0], self.cell, self.cells[0]) as isize,
            Self::cell_coord(q[1], self.origin[1], self.cell, self.cells[1]) as isize,
            Self::cell_coord(q[2], self.origin[2], self.cell, self.cells[2]) as isize,
        ];
        let max_ring = *self.cells.iter().max().unwrap() as isize;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            self.visit_ring(home, ring, q, &mut best);
            // Every unvisited cell lies at least `ring` cells away from the
            // query's (clamped) cell, hence at least `ring * cell` mm away.
            // One ring of slack absorbs rounding in the cell assignment.
            if best <= (ring - 1) as f64 * self.cell {
                break;
            }
        }
        best
    }

    fn visit_ring(&self, home: [isize; 3], ring: isize, q: &[f64; 3], best: &mut f64) {
        let [nx, ny, nz] = self.cells.map(|c| c as isize);
        let zr = (home[2] - ring).max(0)..=(home[2] + ring).min(nz - 1);
        for z in zr {
            let dz = (z - home[2]).abs();
            for y in (home[1] - ring).max(0)..=(home[1] + ring).min(ny - 1) {
                let dy = (y - home[1]).abs();
                let on_shell = dz == ring || dy == ring;
                if on_shell {
                    for x in (home[0] - ring).max(0)..=(home[0] + ring).min(nx - 1) {
                        self.scan_cell(x, y, z, q, best);
                    }
                } else {
                    for x in [home[0] - ring, home[0] + ring] {
                        if x >= 0 && x < nx {
                            self.scan_cell(x, y, z, q, best);
                        }
                        if ring == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    fn scan_cell(&self, x: isize, y: isize, z: isize, q: &[f64; 3], best: &mut f64) {
        let c = x as usize + self.cells[0] * (y as usize + self.cells[1] * z as usize);
        for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
            let d = euclidean(q, &self.points[i]);
            if d < *best {
                *best = d;
            }
        }
    }
}
