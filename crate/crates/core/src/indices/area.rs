//! Area enclosed between two polygonal chains.

use crate::geometry::{path_length, Point};

use super::IndexError;

/// Relative threshold on `|d1 × d2| / (|d1| |d2|)` below which two segments
/// are treated as parallel and never reported as crossing.
const PARALLEL_EPS: f64 = 1e-9;

/// Gauss area of a closed polygon (wraparound edge included).
pub fn shoelace_area(polygon: &[Point]) -> Result<f64, IndexError> {
    if polygon.len() < 3 {
        return Err(IndexError::Insufficient { what: "polygon vertices", needed: 3, got: polygon.len() });
    }
    Ok(0.5 * twice_signed_area(polygon).abs())
}

fn twice_signed_area(polygon: &[Point]) -> f64 {
    // relative to the first vertex, which leaves the sum unchanged but keeps
    // large absolute coordinates from cancelling
    let o = polygon[0];
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i].sub(o);
        let b = polygon[(i + 1) % n].sub(o);
        acc += a.x * b.y - b.x * a.y;
    }
    acc
}

/// Crossing between chain `v` and chain `r`, located by fractional vertex
/// index along each chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub along_v: f64,
    pub along_r: f64,
    pub point: Point,
}

struct SegmentGrid {
    min: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    fn new(chain: &[Point], lo: Point, hi: Point) -> Self {
        let n = chain.len().max(2) as f64;
        let w = (hi.x - lo.x).max(0.0);
        let h = (hi.y - lo.y).max(0.0);
        let mut cell = (w * h / n).sqrt();
        let mean_seg = path_length(chain).unwrap_or(0.0) / (n - 1.0);
        cell = cell.max(mean_seg);
        if !(cell > 0.0) {
            cell = w.max(h).max(1.0) / n;
        }
        let nx = ((w / cell).floor() as usize + 1).min(1 << 11);
        let ny = ((h / cell).floor() as usize + 1).min(1 << 11);
        let cell = cell.max(w / nx as f64).max(h / ny as f64);
        let mut grid = SegmentGrid { min: lo, cell, nx, ny, cells: vec![Vec::new(); nx * ny] };
        for (j, s) in chain.windows(2).enumerate() {
            let (x0, y0, x1, y1) = grid.cell_span(s[0], s[1]);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    grid.cells[y * nx + x].push(j as u32);
                }
            }
        }
        grid
    }

    fn cell_span(&self, a: Point, b: Point) -> (usize, usize, usize, usize) {
        let cx = |x: f64| ((x - self.min.x) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = |y: f64| ((y - self.min.y) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (cx(a.x.min(b.x)), cy(a.y.min(b.y)), cx(a.x.max(b.x)), cy(a.y.max(b.y)))
    }
}

fn segment_crossing(p: Point, p2: Point, q: Point, q2: Point) -> Option<(f64, f64)> {
    let d1 = p2.sub(p);
    let d2 = q2.sub(q);
    let denom = d1.cross(d2);
    if denom.abs() <= PARALLEL_EPS * d1.norm() * d2.norm() {
        return None;
    }
    let w = q.sub(p);
    let t = w.cross(d2) / denom;
    let u = w.cross(d1) / denom;
    const TOL: f64 = 1e-12;
    if (-TOL..=1.0 + TOL).contains(&t) && (-TOL..=1.0 + TOL).contains(&u) {
        Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// All crossings between the chains, sorted along `v`.
pub fn chain_crossings(v: &[Point], r: &[Point]) -> Vec<Crossing> {
    if v.len() < 2 || r.len() < 2 {
        return Vec::new();
    }
    let mut lo = r[0];
    let mut hi = r[0];
    for p in v.iter().chain(r) {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let grid = SegmentGrid::new(r, lo, hi);
    let mut seen = vec![usize::MAX; r.len()];
    let mut out = Vec::new();
    for (i, s) in v.windows(2).enumerate() {
        let (x0, y0, x1, y1) = grid.cell_span(s[0], s[1]);
        for y in y0..=y1 {
            for x in x0..=x1 {
                for &j in &grid.cells[y * grid.nx + x] {
                    let j = j as usize;
                    if seen[j] == i {
                        continue;
                    }
                    seen[j] = i;
                    if let Some((t, u)) = segment_crossing(s[0], s[1], r[j], r[j + 1]) {
                        out.push(Crossing {
                            along_v: i as f64 + t,
                            along_r: j as f64 + u,
                            point: s[0].add(s[1].sub(s[0]).scale(t)),
                        });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.along_v.total_cmp(&b.along_v).then(a.along_r.total_cmp(&b.along_r)));
    // a crossing through a shared vertex is found on both adjacent segments
    out.dedup_by(|b, a| (a.along_v - b.along_v).abs() < 1e-9 && (a.along_r - b.along_r).abs() < 1e-9);
    out
}

struct Boundary {
    along_v: f64,
    along_r: f64,
    on_v: Point,
    on_r: Point,
}

fn push_between(out: &mut Vec<Point>, chain: &[Point], from: f64, to: f64) {
    if to >= from {
        let first = from.floor() as usize + 1;
        let last = to.ceil() as usize;
        for k in first..last {
            out.push(chain[k]);
        }
    } else {
        let first = from.ceil() as usize;
        let last = to.floor() as usize + 1;
        for k in (last..first).rev() {
            out.push(chain[k]);
        }
    }
}

/// Total area of the polygons bounded by the two chains between consecutive
/// crossings. Regions before the first and after the last crossing are
/// closed by the segment joining the chain ends.
pub fn enclosed_area(v: &[Point], r: &[Point]) -> Result<f64, IndexError> {
    if v.len() < 2 {
        return Err(IndexError::Insufficient { what: "observed points", needed: 2, got: v.len() });
    }
    if r.len() < 2 {
        return Err(IndexError::Insufficient { what: "reference points", needed: 2, got: r.len() });
    }
    let mut bounds = vec![Boundary { along_v: 0.0, along_r: 0.0, on_v: v[0], on_r: r[0] }];
    for c in chain_crossings(v, r) {
        bounds.push(Boundary { along_v: c.along_v, along_r: c.along_r, on_v: c.point, on_r: c.point });
    }
    bounds.push(Boundary {
        along_v: (v.len() - 1) as f64,
        along_r: (r.len() - 1) as f64,
        on_v: v[v.len() - 1],
        on_r: r[r.len() - 1],
    });

    let mut total = 0.0;
    let mut poly = Vec::new();
    for pair in bounds.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        poly.clear();
        poly.push(a.on_v);
        push_between(&mut poly, v, a.along_v, b.along_v);
        poly.push(b.on_v);
        if b.on_r != b.on_v {
            poly.push(b.on_r);
        }
        push_between(&mut poly, r, b.along_r, a.along_r);
        if a.on_r != a.on_v {
            poly.push(a.on_r);
        }
        if poly.len() >= 3 {
            total += 0.5 * twice_signed_area(&poly).abs();
        }
    }
    Ok(total)
}

/// Mean area between observed chain `v` and reference chain `r`, per meter of
/// reference length.
pub fn area_index(v: &[Point], r: &[Point]) -> Result<f64, IndexError> {
    let length = path_length(r).map_err(|_| IndexError::Insufficient {
        what: "reference points",
        needed: 2,
        got: r.len(),
    })?;
    if !(length > 0.0) {
        return Err(IndexError::ZeroLength);
    }
    Ok(enclosed_area(v, r)? / length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn shoelace_examples() {
        let sq = [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)];
        assert_eq!(shoelace_area(&sq).unwrap(), 1.0);
        assert_eq!(shoelace_area(&[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)]).unwrap(), 0.0);
        assert!(shoelace_area(&sq[..2]).is_err());
    }

    fn convex_polygon(n: usize, radii: &[f64], phase: f64, c: Point) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
                p(c.x + radii[i % radii.len()] * a.cos(), c.y + radii[i % radii.len()] * a.sin())
            })
            .collect()
    }

    fn fan_area(poly: &[Point]) -> f64 {
        // oracle: triangles from vertex 0
        let mut s = 0.0;
        for i in 1..poly.len() - 1 {
            let (a, b, c) = (poly[0], poly[i], poly[i + 1]);
            s += 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs();
        }
        s
    }

    proptest! {
        #[test]
        fn shoelace_matches_fan_on_convex(n in 3usize..40, r in 0.5..20.0f64, ph in 0.0..6.3f64,
                                          cx in -100.0..100.0f64, cy in -100.0..100.0f64) {
            let poly = convex_polygon(n, &[r], ph, p(cx, cy));
            let a = shoelace_area(&poly).unwrap();
            prop_assert!((a - fan_area(&poly)).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn shoelace_invariant_under_rotation_and_reversal(pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..30), k in 0usize..30) {
            let poly: Vec<Point> = pts.iter().map(|&(x, y)| p(x, y)).collect();
            let a = shoelace_area(&poly).unwrap();
            let mut rot = poly.clone();
            rot.rotate_left(k % poly.len());
            let rev: Vec<Point> = poly.iter().rev().copied().collect();
            prop_assert!((shoelace_area(&rot).unwrap() - a).abs() <= 1e-10 * a.max(1.0));
            prop_assert!((shoelace_area(&rev).unwrap() - a).abs() <= 1e-10 * a.max(1.0));
        }
    }

    #[test]
    fn identical_chains_have_zero_area() {
        let r: Vec<Point> = (0..50).map(|i| p(i as f64, (i as f64 * 0.3).sin())).collect();
        assert_eq!(area_index(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_rectangle() {
        let r = [p(0.0, 0.0), p(10.0, 0.0)];
        let v = [p(0.0, 1.0), p(10.0, 1.0)];
        assert_eq!(enclosed_area(&v, &r).unwrap(), 10.0);
        assert_eq!(area_index(&v, &r).unwrap(), 1.0);
    }

    #[test]
    fn parallel_offset_independent_of_density() {
        let h = 0.7;
        for (nr, nv) in [(2, 2), (11, 37), (400, 123)] {
            let r: Vec<Point> = (0..nr).map(|i| p(100.0 * i as f64 / (nr - 1) as f64, 0.0)).collect();
            let v: Vec<Point> = (0..nv).map(|i| p(100.0 * i as f64 / (nv - 1) as f64, h)).collect();
            assert!((area_index(&v, &r).unwrap() - h).abs() < 1e-6);
        }
    }

    #[test]
    fn single_crossing_splits_into_two_triangles() {
        // V crosses R at (5, 0): two triangles of area 0.5 · 5 · 1
        let r = [p(0.0, 0.0), p(10.0, 0.0)];
        let v = [p(0.0, 1.0), p(10.0, -1.0)];
        let c = chain_crossings(&v, &r);
        assert_eq!(c.len(), 1);
        assert!((c[0].point.x - 5.0).abs() < 1e-12);
        assert!((enclosed_area(&v, &r).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zigzag_crossings_sum_lobes() {
        // sawtooth of height 1 around the axis over 4 half-waves of width 2:
        // each lobe is a triangle of area 1
        let r = [p(0.0, 0.0), p(8.0, 0.0)];
        let v = [p(0.0, 0.0), p(1.0, 1.0), p(2.0, 0.0), p(3.0, -1.0), p(4.0, 0.0), p(5.0, 1.0), p(6.0, 0.0), p(7.0, -1.0), p(8.0, 0.0)];
        assert!((enclosed_area(&v, &r).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_inputs() {
        assert!(area_index(&[p(0.0, 0.0)], &[p(0.0, 0.0), p(1.0, 0.0)]).is_err());
        assert!(matches!(area_index(&[p(0.0, 0.0), p(1.0, 0.0)], &[p(1.0, 1.0), p(1.0, 1.0)]), Err(IndexError::ZeroLength)));
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(ys in prop::collection::vec(-3.0..3.0f64, 3..30),
                                   offs in prop::collection::vec(-2.0..2.0f64, 3..30),
                                   angle in 0.0..6.3f64, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let n = ys.len().min(offs.len());
            let r: Vec<Point> = (0..n).map(|i| p(i as f64, ys[i])).collect();
            let v: Vec<Point> = (0..n).map(|i| p(i as f64 + 0.37, ys[i] + offs[i])).collect();
            let a = area_index(&v, &r).unwrap();
            let m = |q: &Point| q.rotated(angle).add(p(tx, ty));
            let r2: Vec<Point> = r.iter().map(m).collect();
            let v2: Vec<Point> = v.iter().map(m).collect();
            let b = area_index(&v2, &r2).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{} vs {}", a, b);
            prop_assert!(a >= 0.0);
        }
    }
}
