/// Colour stops of the heatmap, from 0 to the field maximum.
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 128]),
    (0.25, [0, 128, 255]),
    (0.5, [0, 200, 100]),
    (0.75, [255, 220, 0]),
    (1.0, [200, 0, 0]),
];

/// Colour of `t` in `[0, 1]`, linear between the stops. Negative values are
/// white and non-finite ones black.
pub fn colormap(t: f64) -> [u8; 3] {
    if t.is_nan() {
        return [0, 0, 0];
    }
    if t < 0.0 {
        return [255, 255, 255];
    }
    let t = t.min(1.0);
    for w in STOPS.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if t <= t1 {
            let u = (t - t0) / (t1 - t0);
            let mut c = [0u8; 3];
            for k in 0..3 {
                c[k] = (c0[k] as f64 + u * (c1[k] as f64 - c0[k] as f64)).round() as u8;
            }
            return c;
        }
    }
    STOPS[4].1
}

/// Binary PPM of a row-major field whose rows run along increasing x2; the
/// image puts the largest x2 at the top. Values are scaled by the field
/// maximum and each cell is drawn as a square block.
pub fn render_ppm(values: &[f64], resolution: usize, comment: &str) -> Vec<u8> {
    let scale = 256usize.div_ceil(resolution).max(1);
    let side = resolution * scale;
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let mut out = format!("P6\n# {comment}\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side * 3);
    for row in (0..resolution).rev() {
        let line: Vec<u8> = (0..resolution)
            .flat_map(|col| {
                let v = values[row * resolution + col];
                let t = if !v.is_finite() {
                    f64::NAN
                } else if v < 0.0 {
                    -1.0
                } else if max > 0.0 {
                    v / max
                } else {
                    0.0
                };
                let c = colormap(t);
                std::iter::repeat_n(c, scale).flatten()
            })
            .collect();
        for _ in 0..scale {
            out.extend_from_slice(&line);
        }
    }
    out
}
