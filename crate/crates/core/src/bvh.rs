//! Ray–triangle intersection over a bounding-volume hierarchy.
//!
//! The BVH is a median-split tree over a world-space triangle soup. Results
//! are independent of the spatial index: queries always resolve ties by
//! exact ray parameter.

use nalgebra::{Point3, Vector3};

/// A ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// One ray–triangle intersection.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub tri: u32,
    /// Index of the scene object the triangle belongs to.
    pub object: u32,
    pub point: Point3<f64>,
    /// Outward unit normal of the triangle (winding-defined).
    pub normal: Vector3<f64>,
    /// Whether the ray hit the outward-facing side.
    pub front_face: bool,
}

/// World-space triangle soup tagged with owning object indices.
#[derive(Debug, Clone, Default)]
pub struct TriSoup {
    pub positions: Vec<[Point3<f64>; 3]>,
    pub object_ids: Vec<u32>,
}

impl TriSoup {
    pub fn push(&mut self, tri: [Point3<f64>; 3], object: u32) {
        self.positions.push(tri);
        self.object_ids.push(object);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.positions[i];
        (b - a).cross(&(c - a)).normalize()
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow_point(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn grow_tri(&mut self, tri: &[Point3<f64>; 3]) {
        for p in tri {
            self.grow_point(p);
        }
    }

    fn centroid(tri: &[Point3<f64>; 3]) -> Point3<f64> {
        Point3::from((tri[0].coords + tri[1].coords + tri[2].coords) / 3.0)
    }

    /// Slab test; returns true when the ray overlaps [0, t_max].
    fn hit(&self, ray: &Ray, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let inv = 1.0 / ray.dir[k];
            let mut near = (self.lo[k] - ray.origin[k]) * inv;
            let mut far = (self.hi[k] - ray.origin[k]) * inv;
            if inv < 0.0 {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

enum Node {
    Leaf { start: u32, count: u32, bounds: Aabb },
    Inner { left: u32, right: u32, bounds: Aabb },
}

/// Median-split BVH over a [`TriSoup`].
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle indices ordered by tree layout.
    order: Vec<u32>,
    root: u32,
}

const LEAF_SIZE: usize = 8;

impl Bvh {
    pub fn build(soup: &TriSoup) -> Self {
        let mut order: Vec<u32> = (0..soup.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = if soup.is_empty() {
            nodes.push(Node::Leaf { start: 0, count: 0, bounds: Aabb::empty() });
            0
        } else {
            Self::build_node(soup, &mut order, 0, soup.len(), &mut nodes)
        };
        Self { nodes, order, root }
    }

    fn build_node(soup: &TriSoup, order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
        let mut bounds = Aabb::empty();
        for &i in &order[start..end] {
            bounds.grow_tri(&soup.positions[i as usize]);
        }
        let count = end - start;
        if count <= LEAF_SIZE {
            nodes.push(Node::Leaf { start: start as u32, count: count as u32, bounds });
            return nodes.len() as u32 - 1;
        }
        // split along the widest centroid axis at the median
        let mut cb = Aabb::empty();
        for &i in &order[start..end] {
            cb.grow_point(&Aabb::centroid(&soup.positions[i as usize]));
        }
        let extent = cb.hi - cb.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = start + count / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let ca = Aabb::centroid(&soup.positions[a as usize])[axis];
            let cbv = Aabb::centroid(&soup.positions[b as usize])[axis];
            ca.partial_cmp(&cbv).unwrap()
        });
        let left = Self::build_node(soup, order, start, mid, nodes);
        let right = Self::build_node(soup, order, mid, end, nodes);
        nodes.push(Node::Inner { left, right, bounds });
        nodes.len() as u32 - 1
    }

    /// Nearest intersection with t in (t_min, t_max).
    pub fn intersect(&self, soup: &TriSoup, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            match &self.nodes[ni as usize] {
                Node::Leaf { start, count, bounds } => {
                    if !bounds.hit(ray, limit) {
                        continue;
                    }
                    for &tri in &self.order[*start as usize..(*start + *count) as usize] {
                        if let Some(hit) = intersect_triangle(soup, tri, ray, t_min, limit) {
                            limit = hit.t;
                            best = Some(hit);
                        }
                    }
                }
                Node::Inner { left, right, bounds } => {
                    if bounds.hit(ray, limit) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    /// All intersections with t in (t_min, t_max), sorted by increasing t.
    pub fn intersect_all(&self, soup: &TriSoup, ray: &Ray, t_min: f64, t_max: f64) -> Vec<Hit> {
        let mut hits = Vec::new();
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            match &self.nodes[ni as usize] {
                Node::Leaf { start, count, bounds } => {
                    if !bounds.hit(ray, t_max) {
                        continue;
                    }
                    for &tri in &self.order[*start as usize..(*start + *count) as usize] {
                        if let Some(hit) = intersect_triangle(soup, tri, ray, t_min, t_max) {
                            hits.push(hit);
                        }
                    }
                }
                Node::Inner { left, right, bounds } => {
                    if bounds.hit(ray, t_max) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        hits.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        hits
    }
}

/// Moller–Trumbore, no backface culling.
fn intersect_triangle(soup: &TriSoup, tri: u32, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let [a, b, c] = soup.positions[tri as usize];
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t <= t_min || t >= t_max {
        return None;
    }
    let normal = soup.normal(tri as usize);
    Some(Hit {
        t,
        tri,
        object: soup.object_ids[tri as usize],
        point: ray.at(t),
        normal,
        front_face: normal.dot(&ray.dir) < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use approx::assert_relative_eq;

    fn soup_of(mesh: &crate::mesh::TriMesh) -> TriSoup {
        let mut soup = TriSoup::default();
        for i in 0..mesh.triangles().len() {
            soup.push(mesh.triangle_points(i), 0);
        }
        soup
    }

    #[test]
    fn ray_hits_cube_top() {
        let cube = primitives::cube(30.0);
        let soup = soup_of(&cube);
        let bvh = Bvh::build(&soup);
        let ray = Ray::new(Point3::new(0.0, 0.0, 100.0), Vector3::new(0.0, 0.0, -1.0));
        let hit = bvh.intersect(&soup, &ray, 1e-9, f64::INFINITY).unwrap();
        assert_relative_eq!(hit.t, 85.0, epsilon = 1e-9);
        assert!(hit.front_face);
        assert_relative_eq!(hit.normal.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_hits_through_cube_finds_entry_and_exit() {
        let cube = primitives::cube(30.0);
        let soup = soup_of(&cube);
        let bvh = Bvh::build(&soup);
        let ray = Ray::new(Point3::new(-100.0, 1.0, 2.0), Vector3::new(1.0, 0.0, 0.0));
        let hits = bvh.intersect_all(&soup, &ray, 1e-9, f64::INFINITY);
        assert_eq!(hits.len(), 2);
        assert_relative_eq!(hits[0].t, 85.0, epsilon = 1e-9);
        assert_relative_eq!(hits[1].t, 115.0, epsilon = 1e-9);
        assert!(hits[0].front_face);
        assert!(!hits[1].front_face);
    }

    #[test]
    fn miss_returns_none() {
        let cube = primitives::cube(30.0);
        let soup = soup_of(&cube);
        let bvh = Bvh::build(&soup);
        let ray = Ray::new(Point3::new(100.0, 100.0, 100.0), Vector3::new(0.0, 0.0, -1.0));
        assert!(bvh.intersect(&soup, &ray, 1e-9, f64::INFINITY).is_none());
    }

    #[test]
    fn bvh_matches_brute_force_on_sphere() {
        let sphere = primitives::icosphere(20.0, 2);
        let soup = soup_of(&sphere);
        let bvh = Bvh::build(&soup);
        for k in 0..50 {
            let a = k as f64 * 0.37;
            let origin = Point3::new(60.0 * a.cos(), 60.0 * a.sin(), 10.0 * (a * 1.7).sin());
            let dir = Point3::origin() - origin;
            let ray = Ray::new(origin, dir);
            let fast = bvh.intersect(&soup, &ray, 1e-9, f64::INFINITY);
            let slow = (0..soup.len() as u32)
                .filter_map(|i| intersect_triangle(&soup, i, &ray, 1e-9, f64::INFINITY))
                .min_by(|x, y| x.t.partial_cmp(&y.t).unwrap());
            match (fast, slow) {
                (Some(f), Some(s)) => assert_relative_eq!(f.t, s.t, epsilon = 1e-9),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }
}
