//! Polygon geometry shared by SFI rendering and removal masks.

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(x: f64, y: f64, vertices: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Absolute shoelace area.
pub fn polygon_area(vertices: &[(f64, f64)]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = vertices[i];
            let (x1, y1) = vertices[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

/// Rasterize with the even-odd rule, sampling each pixel at its center
/// `(x + 0.5, y + 0.5)` after shifting vertices by `-origin`.
///
/// Scanline form of [`point_in_polygon`]; both agree pixel for pixel.
pub fn rasterize_polygon(vertices: &[(f64, f64)], origin: (f64, f64), width: u32, height: u32) -> Vec<bool> {
    let mut mask = vec![false; (width * height) as usize];
    let n = vertices.len();
    if n < 3 {
        return mask;
    }
    let pts: Vec<(f64, f64)> = vertices.iter().map(|&(x, y)| (x - origin.0, y - origin.1)).collect();
    let mut crossings = Vec::with_capacity(n);
    for py in 0..height {
        let y = py as f64 + 0.5;
        crossings.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[j];
            if (yi > y) != (yj > y) {
                crossings.push((xj - xi) * (y - yi) / (yj - yi) + xi);
            }
            j = i;
        }
        crossings.sort_by(f64::total_cmp);
        let row = &mut mask[(py * width) as usize..((py + 1) * width) as usize];
        for (px, cell) in row.iter_mut().enumerate() {
            let x = px as f64 + 0.5;
            // inside iff an odd number of crossings lie strictly right of x
            let right = crossings.len() - crossings.partition_point(|&c| c <= x);
            *cell = right % 2 == 1;
        }
    }
    mask
}
