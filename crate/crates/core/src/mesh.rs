//! Triangle meshes: OBJ loading, validation, volume, and uniform scaling.
//!
//! Meshes are closed, consistently wound triangle surfaces in millimeters.
//! Winding is normalized on construction so the signed volume is positive and
//! face normals point outward.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse shape category tag carried through from the model database.
/// Metadata only; nothing in the pipeline branches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeCategory {
    Spheroidal,
    Cuboidal,
    Cuplike,
    Complicated,
}

/// A validated closed triangle mesh, coordinates in millimeters.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    category: ShapeCategory,
}

/// Volume below which a mesh is rejected as degenerate (mm^3).
const MIN_VOLUME_MM3: f64 = 1e-9;

impl TriMesh {
    /// Validate and normalize a triangle list into a mesh.
    ///
    /// Checks: finite coordinates, in-range indices, a closed 2-manifold
    /// edge structure with consistent winding, and nonzero enclosed volume.
    /// If the signed volume comes out negative, every triangle is re-wound.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        mut triangles: Vec<[u32; 3]>,
        category: ShapeCategory,
    ) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::DegenerateMesh("empty vertex or triangle list".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::MeshParse(format!("non-finite coordinate in vertex {i}")));
            }
        }
        let n = vertices.len() as u32;
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&ix| ix >= n) {
                return Err(Error::MeshParse(format!("triangle {i} references vertex out of range")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::DegenerateMesh(format!("triangle {i} repeats a vertex")));
            }
        }
        check_closed_manifold(&triangles)?;

        let vol = signed_volume_mm3(&vertices, &triangles);
        if vol.abs() < MIN_VOLUME_MM3 {
            return Err(Error::DegenerateMesh("enclosed volume is zero".into()));
        }
        if vol < 0.0 {
            for t in &mut triangles {
                t.swap(1, 2);
            }
        }
        Ok(Self { vertices, triangles, category })
    }

    /// Parse the v/f subset of Wavefront OBJ. Faces with more than three
    /// vertices are fan-triangulated; normals and texture records are
    /// ignored and recomputed from winding.
    pub fn parse_obj(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::MeshParse("file is not valid UTF-8".into()))?;
        let mut vertices: Vec<Point3<f64>> = Vec::new();
        let mut triangles: Vec<[u32; 3]> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let mut coords = [0.0f64; 3];
                    for c in &mut coords {
                        let tok = fields.next().ok_or_else(|| {
                            Error::MeshParse(format!("line {}: vertex needs 3 coordinates", lineno + 1))
                        })?;
                        *c = tok.parse().map_err(|_| {
                            Error::MeshParse(format!("line {}: bad coordinate {tok:?}", lineno + 1))
                        })?;
                    }
                    // trailing w component, if present, is ignored
                    vertices.push(Point3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx: Vec<u32> = Vec::new();
                    for tok in fields {
                        let vtok = tok.split('/').next().unwrap_or("");
                        let i: i64 = vtok.parse().map_err(|_| {
                            Error::MeshParse(format!("line {}: bad face index {tok:?}", lineno + 1))
                        })?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            return Err(Error::MeshParse(format!("line {}: face index 0", lineno + 1)));
                        };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(Error::MeshParse(format!(
                                "line {}: face index {i} out of range",
                                lineno + 1
                            )));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(Error::MeshParse(format!(
                            "line {}: face needs at least 3 vertices",
                            lineno + 1
                        )));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                // vn/vt/o/g/s/usemtl/mtllib and anything else: ignored
                _ => {}
            }
        }
        Self::new(vertices, triangles, ShapeCategory::Complicated)
    }

    /// Load an OBJ file from disk.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::parse_obj(&bytes)
    }

    pub fn with_category(mut self, category: ShapeCategory) -> Self {
        self.category = category;
        self
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn category(&self) -> ShapeCategory {
        self.category
    }

    pub fn triangle_points(&self, i: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Enclosed volume in mm^3 (positive by construction).
    pub fn volume_mm3(&self) -> f64 {
        signed_volume_mm3(&self.vertices, &self.triangles)
    }

    /// Enclosed volume in cm^3.
    pub fn volume_cm3(&self) -> f64 {
        self.volume_mm3() / 1000.0
    }

    /// Uniformly scale so the enclosed volume equals `target_cm3`.
    pub fn scaled_to_volume(&self, target_cm3: f64) -> Result<Self> {
        if !(target_cm3 > 0.0) {
            return Err(Error::InvalidConfig(format!("target volume must be positive, got {target_cm3}")));
        }
        let current = self.volume_cm3();
        let factor = (target_cm3 / current).cbrt();
        let vertices = self.vertices.iter().map(|v| Point3::from(v.coords * factor)).collect();
        Ok(Self { vertices, triangles: self.triangles.clone(), category: self.category })
    }

    /// Volume centroid under a uniform mass assumption.
    pub fn centroid(&self) -> Point3<f64> {
        let mut vol6 = 0.0;
        let mut acc = Vector3::zeros();
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(i);
            let v6 = a.coords.dot(&b.coords.cross(&c.coords));
            vol6 += v6;
            acc += (a.coords + b.coords + c.coords) * v6;
        }
        // tetrahedron centroid is (a+b+c+origin)/4
        Point3::from(acc / (4.0 * vol6))
    }

    /// Largest distance from the centroid to any vertex; used as the torque
    /// normalization radius in wrench-space quality.
    pub fn max_radius_mm(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|v| (v - c).norm())
            .fold(0.0, f64::max)
    }

    /// Axis-aligned bounds as (min, max) corners.
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

fn signed_volume_mm3(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> f64 {
    let mut v6 = 0.0;
    for t in triangles {
        let a = vertices[t[0] as usize].coords;
        let b = vertices[t[1] as usize].coords;
        let c = vertices[t[2] as usize].coords;
        v6 += a.dot(&b.cross(&c));
    }
    v6 / 6.0
}

/// Every undirected edge must be shared by exactly two triangles and its two
/// directed versions must each appear exactly once (closed, consistently
/// wound surface). Without this the signed-volume sum is meaningless.
fn check_closed_manifold(triangles: &[[u32; 3]]) -> Result<()> {
    let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            let e = (t[k], t[(k + 1) % 3]);
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    for (&(a, b), &count) in &directed {
        if count != 1 {
            return Err(Error::DegenerateMesh(format!(
                "directed edge ({a},{b}) appears {count} times (non-manifold or inconsistent winding)"
            )));
        }
        if !directed.contains_key(&(b, a)) {
            return Err(Error::DegenerateMesh(format!("edge ({a},{b}) has no opposite (open surface)")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use approx::assert_relative_eq;

    const CUBE_10MM_OBJ: &str = "\
# 10 mm cube
v 0 0 0
v 10 0 0
v 10 10 0
v 0 10 0
v 0 0 10
v 10 0 10
v 10 10 10
v 0 10 10
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
f 2 1 4 3
f 5 6 7 8
";

    #[test]
    fn cube_obj_parses_with_expected_volume() {
        let mesh = TriMesh::parse_obj(CUBE_10MM_OBJ.as_bytes()).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.triangles().len(), 12);
        assert_relative_eq!(mesh.volume_mm3(), 1000.0, epsilon = 1e-9);
        assert_relative_eq!(mesh.volume_cm3(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_face_index_is_a_parse_error() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        match TriMesh::parse_obj(obj.as_bytes()) {
            Err(Error::MeshParse(msg)) => assert!(msg.contains("out of range")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn open_surface_is_degenerate() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        assert!(matches!(TriMesh::parse_obj(obj.as_bytes()), Err(Error::DegenerateMesh(_))));
    }

    #[test]
    fn reversed_winding_is_normalized_to_positive_volume() {
        let mesh = TriMesh::parse_obj(CUBE_10MM_OBJ.as_bytes()).unwrap();
        let flipped: Vec<[u32; 3]> = mesh.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
        let renormalized = TriMesh::new(mesh.vertices().to_vec(), flipped, ShapeCategory::Cuboidal).unwrap();
        assert!(renormalized.volume_mm3() > 0.0);
        assert_relative_eq!(renormalized.volume_mm3(), 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn thirty_mm_cube_volume_is_27_cm3() {
        let mesh = primitives::cube(30.0);
        assert_relative_eq!(mesh.volume_cm3(), 27.0, epsilon = 1e-9);
    }

    #[test]
    fn icosphere_volume_close_to_analytic_sphere() {
        let r = 20.0;
        let mesh = primitives::icosphere(r, 2);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let rel = (mesh.volume_mm3() - analytic).abs() / analytic;
        assert!(rel < 0.05, "relative error {rel} vs analytic sphere volume");
    }

    /// Brute-force voxel oracle: count 0.5 mm voxel centers inside the mesh
    /// by casting one +z column per (x, y) and collecting crossing intervals.
    fn voxel_volume_mm3(mesh: &TriMesh, res: f64) -> f64 {
        let (lo, hi) = mesh.aabb();
        let nx = ((hi.x - lo.x) / res).ceil() as usize + 2;
        let ny = ((hi.y - lo.y) / res).ceil() as usize + 2;
        let mut inside = 0u64;
        let nz_total = (((hi.z - lo.z) / res).ceil() as usize + 2) as f64;
        let _ = nz_total;
        for ix in 0..nx {
            let x = lo.x + (ix as f64 + 0.5) * res;
            for iy in 0..ny {
                let y = lo.y + (iy as f64 + 0.5) * res;
                // z values where the column crosses the surface
                let mut zs: Vec<f64> = Vec::new();
                for t in 0..mesh.triangles().len() {
                    let [a, b, c] = mesh.triangle_points(t);
                    if let Some(z) = column_hit(&a, &b, &c, x, y) {
                        zs.push(z);
                    }
                }
                zs.sort_by(|p, q| p.partial_cmp(q).unwrap());
                zs.dedup_by(|p, q| (*p - *q).abs() < 1e-9);
                for pair in zs.chunks(2) {
                    if pair.len() == 2 {
                        let z0 = ((pair[0] - lo.z) / res).ceil();
                        let z1 = ((pair[1] - lo.z) / res).floor();
                        // voxel centers at lo.z + (k + 0.5) res inside (z0', z1')
                        let lo_k = ((pair[0] - lo.z) / res - 0.5).ceil().max(0.0);
                        let hi_k = ((pair[1] - lo.z) / res - 0.5).floor();
                        let _ = (z0, z1);
                        if hi_k >= lo_k {
                            inside += (hi_k - lo_k) as u64 + 1;
                        }
                    }
                }
            }
        }
        inside as f64 * res * res * res
    }

    fn column_hit(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, x: f64, y: f64) -> Option<f64> {
        // 2D barycentric test in the xy plane, then interpolate z.
        let d = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
        if d.abs() < 1e-12 {
            return None;
        }
        let w0 = ((b.y - c.y) * (x - c.x) + (c.x - b.x) * (y - c.y)) / d;
        let w1 = ((c.y - a.y) * (x - c.x) + (a.x - c.x) * (y - c.y)) / d;
        let w2 = 1.0 - w0 - w1;
        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
            return None;
        }
        Some(w0 * a.z + w1 * b.z + w2 * c.z)
    }

    #[test]
    fn scaled_icosphere_volume_matches_voxel_oracle() {
        let mesh = primitives::icosphere(12.0, 2).scaled_to_volume(8.0).unwrap();
        let voxel = voxel_volume_mm3(&mesh, 0.5) / 1000.0;
        let rel = (mesh.volume_cm3() - voxel).abs() / voxel;
        assert!(rel < 0.02, "analytic {} vs voxel {} (rel {rel})", mesh.volume_cm3(), voxel);
    }

    #[test]
    fn scale_to_volume_hits_target_exactly() {
        let cube = TriMesh::parse_obj(CUBE_10MM_OBJ.as_bytes()).unwrap();
        let scaled = cube.scaled_to_volume(27.0).unwrap();
        assert_relative_eq!(scaled.volume_cm3(), 27.0, max_relative = 1e-6);
        // 30 mm edges
        let (lo, hi) = scaled.aabb();
        assert_relative_eq!(hi.x - lo.x, 30.0, epsilon = 1e-9);

        let identity = cube.scaled_to_volume(cube.volume_cm3()).unwrap();
        assert_relative_eq!(identity.volume_cm3(), cube.volume_cm3(), max_relative = 1e-9);

        let big = cube.scaled_to_volume(1000.0).unwrap();
        let (lo, hi) = big.aabb();
        assert_relative_eq!(hi.x - lo.x, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn centroid_of_cube_is_center() {
        let cube = primitives::cube(30.0);
        let c = cube.centroid();
        assert_relative_eq!(c.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(c.z, 0.0, epsilon = 1e-9);
        assert_relative_eq!(cube.max_radius_mm(), 15.0 * 3.0f64.sqrt(), epsilon = 1e-9);
    }
}
