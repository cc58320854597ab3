use crate::geometry::{Mesh, Point3};

/// Axis-aligned box centered at the origin, each face split into a
/// `div x div` grid of quads (two triangles each).
pub fn box_mesh(size: [f64; 3], div: usize) -> Mesh {
    let div = div.max(1);
    let h = size.map(|s| s / 2.0);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, sign); u and v span the other two axes
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = vertices.len();
            for i in 0..=div {
                for j in 0..=div {
                    let mut p = [0.0; 3];
                    p[axis] = sign * h[axis];
                    p[ua] = -h[ua] + size[ua] * i as f64 / div as f64;
                    p[va] = -h[va] + size[va] * j as f64 / div as f64;
                    vertices.push(p);
                }
            }
            let idx = |i: usize, j: usize| base + i * (div + 1) + j;
            for i in 0..div {
                for j in 0..div {
                    let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                    if sign > 0.0 {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    Mesh { vertices, faces }
}

/// Icosphere of the given radius after `levels` rounds of subdivision.
pub fn icosphere(radius: f64, levels: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoints = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0, 1, 2].map(|k| (p[k] + q[k]) / 2.0));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in vertices.iter_mut() {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        *v = v.map(|x| radius * x / n);
    }
    Mesh { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_area_and_bounds() {
        let m = box_mesh([0.4, 0.2, 0.1], 3);
        m.validate().unwrap();
        let area = 2.0 * (0.4 * 0.2 + 0.2 * 0.1 + 0.4 * 0.1);
        assert!((m.surface_area() - area).abs() < 1e-12);
        assert!(m.vertices.iter().all(|v| v[0].abs() <= 0.2 + 1e-15 && v[2].abs() <= 0.05 + 1e-15));
    }

    #[test]
    fn icosphere_on_sphere() {
        let m = icosphere(0.1, 2);
        assert_eq!(m.faces.len(), 320);
        assert_eq!(m.vertices.len(), 162);
        assert!(m.vertices.iter().all(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 0.1).abs() < 1e-12));
        let sphere = 4.0 * std::f64::consts::PI * 0.01;
        assert!((m.surface_area() - sphere).abs() / sphere < 0.03);
    }
}
