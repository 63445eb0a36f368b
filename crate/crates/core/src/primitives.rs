//! Procedural primitive meshes.
//!
//! These serve as the built-in model pool for dataset generation when no
//! external OBJ directory is supplied, and double as geometric fixtures with
//! known analytic properties.

use std::collections::HashMap;

use nalgebra::Point3;

use crate::mesh::{ShapeCategory, TriMesh};

/// Axis-aligned cuboid centered at the origin.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriMesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let v = vec![
        Point3::new(-hx, -hy, -hz),
        Point3::new(hx, -hy, -hz),
        Point3::new(hx, hy, -hz),
        Point3::new(-hx, hy, -hz),
        Point3::new(-hx, -hy, hz),
        Point3::new(hx, -hy, hz),
        Point3::new(hx, hy, hz),
        Point3::new(-hx, hy, hz),
    ];
    let t = vec![
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
        [1, 0, 3],
        [1, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
    ];
    TriMesh::new(v, t, ShapeCategory::Cuboidal).expect("cuboid is a valid mesh")
}

/// Cube with the given edge length, centered at the origin.
pub fn cube(edge: f64) -> TriMesh {
    cuboid(edge, edge, edge)
}

/// Icosphere: icosahedron subdivided `subdivisions` times, vertices projected
/// onto the radius. Subdivision 2 keeps volume within ~1% of the sphere.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = vec![
        Point3::new(-1.0, phi, 0.0),
        Point3::new(1.0, phi, 0.0),
        Point3::new(-1.0, -phi, 0.0),
        Point3::new(1.0, -phi, 0.0),
        Point3::new(0.0, -1.0, phi),
        Point3::new(0.0, 1.0, phi),
        Point3::new(0.0, -1.0, -phi),
        Point3::new(0.0, 1.0, -phi),
        Point3::new(phi, 0.0, -1.0),
        Point3::new(phi, 0.0, 1.0),
        Point3::new(-phi, 0.0, -1.0),
        Point3::new(-phi, 0.0, 1.0),
    ];
    let mut tris: Vec<[u32; 3]> = vec![
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

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for t in &tris {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let m = Point3::from((verts[a as usize].coords + verts[b as usize].coords) / 2.0);
                    verts.push(m);
                    verts.len() as u32 - 1
                });
            }
            next.push([t[0], mid[0], mid[2]]);
            next.push([t[1], mid[1], mid[0]]);
            next.push([t[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        tris = next;
    }

    for v in &mut verts {
        let n = v.coords.norm();
        v.coords *= radius / n;
    }
    TriMesh::new(verts, tris, ShapeCategory::Spheroidal).expect("icosphere is a valid mesh")
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriMesh {
    assert!(segments >= 3);
    let hz = height / 2.0;
    let mut verts: Vec<Point3<f64>> = Vec::new();
    for ring in [-hz, hz] {
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Point3::new(radius * a.cos(), radius * a.sin(), ring));
        }
    }
    let bottom_center = verts.len() as u32;
    verts.push(Point3::new(0.0, 0.0, -hz));
    let top_center = verts.len() as u32;
    verts.push(Point3::new(0.0, 0.0, hz));

    let mut tris: Vec<[u32; 3]> = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        let (b0, b1) = (s, s1);
        let (t0, t1) = (segments + s, segments + s1);
        tris.push([b0, b1, t1]);
        tris.push([b0, t1, t0]);
        tris.push([bottom_center, b1, b0]);
        tris.push([top_center, t0, t1]);
    }
    TriMesh::new(verts, tris, ShapeCategory::Spheroidal).expect("cylinder is a valid mesh")
}

/// The default model pool: one representative per shape category plus a few
/// aspect variations, each later rescaled by the volume randomizer.
pub fn builtin_pool() -> Vec<TriMesh> {
    vec![
        cube(40.0),
        cuboid(60.0, 30.0, 25.0),
        cuboid(80.0, 20.0, 20.0),
        icosphere(25.0, 2),
        cylinder(20.0, 60.0, 24),
        cylinder(35.0, 25.0, 24).with_category(ShapeCategory::Cuplike),
    ]
}
