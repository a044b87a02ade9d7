use crate::geometry::Point;

use super::IndexError;

/// Uniform bucket grid over a point set for exact nearest-neighbour queries.
pub struct PointGrid<'a> {
    points: &'a [Point],
    min: Point,
    max: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        assert!(!points.is_empty());
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        let w = max.x - min.x;
        let h = max.y - min.y;
        let n = points.len() as f64;
        let mut cell = (w * h / n).sqrt();
        if !(cell > 0.0) {
            cell = w.max(h) / n;
        }
        if !(cell > 0.0) {
            cell = 1.0;
        }
        let nx = ((w / cell).floor() as usize + 1).min(1 << 12);
        let ny = ((h / cell).floor() as usize + 1).min(1 << 12);
        let cell = cell.max(w / nx as f64).max(h / ny as f64);

        let mut counts = vec![0u32; nx * ny + 1];
        let cells: Vec<usize> = points
            .iter()
            .map(|p| {
                let (cx, cy) = Self::cell_of(min, cell, nx, ny, *p);
                cy * nx + cx
            })
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        PointGrid { points, min, max, cell, nx, ny, starts, order }
    }

    fn cell_of(min: Point, cell: f64, nx: usize, ny: usize, p: Point) -> (usize, usize) {
        let cx = ((p.x - min.x) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let cy = ((p.y - min.y) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (cx, cy)
    }

    /// Nearest point to `q` as `(index, squared distance)`. Stops early once
    /// the best squared distance is known to be at most `stop_below`.
    pub fn nearest_until(&self, q: Point, stop_below: f64) -> (usize, f64) {
        let clamped = Point::new(q.x.clamp(self.min.x, self.max.x), q.y.clamp(self.min.y, self.max.y));
        let (cx, cy) = Self::cell_of(self.min, self.cell, self.nx, self.ny, clamped);
        let mut best = f64::INFINITY;
        let mut best_i = usize::MAX;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            if ring >= 1 {
                let lb = (ring - 1) as f64 * self.cell;
                if lb * lb > best {
                    break;
                }
            }
            let x0 = cx as isize - ring as isize;
            let x1 = cx as isize + ring as isize;
            let y0 = cy as isize - ring as isize;
            let y1 = cy as isize + ring as isize;
            for y in y0..=y1 {
                if y < 0 || y >= self.ny as isize {
                    continue;
                }
                let edge_row = y == y0 || y == y1;
                let mut x = x0;
                while x <= x1 {
                    if x >= 0 && x < self.nx as isize {
                        let c = y as usize * self.nx + x as usize;
                        for &k in &self.order[self.starts[c] as usize..self.starts[c + 1] as usize] {
                            let d = q.distance_sq(self.points[k as usize]);
                            if d < best || (d == best && (k as usize) < best_i) {
                                best = d;
                                best_i = k as usize;
                            }
                        }
                    }
                    x = if edge_row || x == x1 { x + 1 } else { x1 };
                }
            }
            if best <= stop_below {
                break;
            }
        }
        (best_i, best)
    }

    pub fn nearest(&self, q: Point) -> (usize, f64) {
        self.nearest_until(q, -1.0)
    }
}

/// `max_{a ∈ from} min_{b ∈ to} ‖a − b‖`.
pub fn directed_hausdorff(from: &[Point], to: &[Point]) -> Result<f64, IndexError> {
    if from.is_empty() || to.is_empty() {
        return Err(IndexError::Empty("Hausdorff point set"));
    }
    let grid = PointGrid::new(to);
    let mut worst = 0.0f64;
    for &a in from {
        // a point whose nearest neighbour is no farther than the running
        // maximum cannot raise it
        let (_, d) = grid.nearest_until(a, worst);
        if d > worst {
            worst = d;
        }
    }
    Ok(worst.sqrt())
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(v: &[Point], r: &[Point]) -> Result<f64, IndexError> {
    Ok(directed_hausdorff(v, r)?.max(directed_hausdorff(r, v)?))
}
