//! Synthetic scenes: ray-cast depth and Lambert shading of planes, spheres
//! and axis-aligned boxes, plus seeded sparse sampling.

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::grid::{CameraIntrinsics, DepthGrid};
use crate::par;
use crate::rng::Rng;

/// Direction from a surface toward the light, camera frame (rows, columns, depth).
pub const LIGHT_DIR: [f64; 3] = [-0.5, -0.3, -1.0];

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Plane { point: Point3, normal: [f64; 3] },
    Sphere { center: Point3, radius: f64 },
    Cuboid { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub intr: CameraIntrinsics,
    pub height: usize,
    pub width: usize,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Primitive {
    /// Nearest hit with `t > 0` along `origin + t·dir` from the camera
    /// center, with the unit surface normal there.
    fn intersect(&self, dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
        match *self {
            Primitive::Plane { point, normal } => {
                let denom = dot(normal, dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = dot(normal, point.as_array()) / denom;
                (t > 0.0).then(|| (t, normalize(normal)))
            }
            Primitive::Sphere { center, radius } => {
                let c = center.as_array();
                let a = dot(dir, dir);
                let b = -2.0 * dot(dir, c);
                let cc = dot(c, c) - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .find(|&t| t > 0.0)?;
                let hit = [dir[0] * t, dir[1] * t, dir[2] * t];
                Some((t, normalize([hit[0] - c[0], hit[1] - c[1], hit[2] - c[2]])))
            }
            Primitive::Cuboid { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis_near = 0;
                let mut axis_far = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if 0.0 < min[a] || 0.0 > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = (min[a] / dir[a], max[a] / dir[a]);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > t_near {
                        t_near = t0;
                        axis_near = a;
                    }
                    if t1 < t_far {
                        t_far = t1;
                        axis_far = a;
                    }
                }
                if t_near > t_far || t_far <= 0.0 {
                    return None;
                }
                let (t, axis) = if t_near > 0.0 {
                    (t_near, axis_near)
                } else {
                    (t_far, axis_far)
                };
                let mut n = [0.0; 3];
                n[axis] = -dir[axis].signum();
                Some((t, n))
            }
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0) || !self.near.is_finite() {
            return Err(Error::Scene(format!("near must be positive, got {}", self.near)));
        }
        if !(self.far > self.near) || !self.far.is_finite() {
            return Err(Error::Scene(format!(
                "far ({}) must exceed near ({})",
                self.far, self.near
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Scene("image size must be positive".into()));
        }
        if self.primitives.is_empty() {
            return Err(Error::Scene("scene has no primitives".into()));
        }
        Ok(())
    }

    /// A random room: slightly tilted back wall, a floor, and a few spheres
    /// and boxes in front of it.
    pub fn random(seed: u64, height: usize, width: usize, intr: CameraIntrinsics, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0) || !(far > near) {
            return Err(Error::Scene(format!("invalid depth range [{near}, {far}]")));
        }
        let mut rng = Rng::new(seed);
        let span = far - near;
        let wall = near + span * rng.uniform(0.45, 0.6);
        let tilt_p = rng.uniform(-0.2, 0.2);
        let tilt_q = rng.uniform(-0.2, 0.2);
        let mut primitives = vec![Primitive::Plane {
            point: Point3::new(0.0, 0.0, wall),
            normal: normalize([tilt_p, tilt_q, -1.0]),
        }];
        // Floor below the optical axis (rows grow downward).
        let floor = rng.uniform(0.8, 1.5);
        primitives.push(Primitive::Plane {
            point: Point3::new(floor, 0.0, 0.0),
            normal: [-1.0, 0.0, rng.uniform(-0.05, 0.05)],
        });
        let fov_p = height as f64 / (2.0 * intr.fp);
        let fov_q = width as f64 / (2.0 * intr.fq);
        let n_spheres = 1 + rng.below(3);
        for _ in 0..n_spheres {
            let w = near + span * rng.uniform(0.12, 0.35);
            let r = w * rng.uniform(0.08, 0.22);
            primitives.push(Primitive::Sphere {
                center: Point3::new(
                    w * fov_p * rng.uniform(-0.7, 0.7),
                    w * fov_q * rng.uniform(-0.7, 0.7),
                    w,
                ),
                radius: r,
            });
        }
        let n_boxes = rng.below(3);
        for _ in 0..n_boxes {
            let w = near + span * rng.uniform(0.15, 0.4);
            let cp = w * fov_p * rng.uniform(-0.6, 0.6);
            let cq = w * fov_q * rng.uniform(-0.6, 0.6);
            let half = [
                w * rng.uniform(0.05, 0.18),
                w * rng.uniform(0.05, 0.18),
                rng.uniform(0.1, 0.6),
            ];
            primitives.push(Primitive::Cuboid {
                min: [cp - half[0], cq - half[1], w - half[2]],
                max: [cp + half[0], cq + half[1], w + half[2]],
            });
        }
        let spec = SceneSpec {
            primitives,
            intr,
            height,
            width,
            near,
            far,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Ray-cast dense depth and Lambert shading. Hits outside `[near, far]` are
/// ignored; a pixel with no remaining hit is an error.
pub fn render_scene(spec: &SceneSpec) -> Result<(DepthGrid, DepthGrid)> {
    spec.validate()?;
    let light = normalize(LIGHT_DIR);
    let (h, w) = (spec.height, spec.width);
    let rows = par::map_range(h, |p| {
        let mut depth = Vec::with_capacity(w);
        let mut shade = Vec::with_capacity(w);
        for q in 0..w {
            // Ray through the pixel at unit depth, so the hit parameter is w.
            let dir = [
                (p as f64 - spec.intr.cp) / spec.intr.fp,
                (q as f64 - spec.intr.cq) / spec.intr.fq,
                1.0,
            ];
            let best = spec
                .primitives
                .iter()
                .filter_map(|prim| prim.intersect(dir))
                .filter(|&(t, _)| t >= spec.near && t <= spec.far)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match best {
                Some((t, mut n)) => {
                    if dot(n, dir) > 0.0 {
                        n = n.map(|v| -v);
                    }
                    depth.push(t);
                    shade.push(dot(n, light).clamp(0.0, 1.0));
                }
                None => return Err(Error::Scene(format!("pixel ({p}, {q}) ray hits nothing in range"))),
            }
        }
        Ok((depth, shade))
    });
    let mut depth = Vec::with_capacity(h * w);
    let mut shade = Vec::with_capacity(h * w);
    for r in rows {
        let (d, s) = r?;
        depth.extend(d);
        shade.extend(s);
    }
    Ok((DepthGrid::new(h, w, depth)?, DepthGrid::new(h, w, shade)?))
}

/// Keep `n` valid pixels chosen uniformly without replacement; zero the rest.
pub fn sample_sparse(dense: &DepthGrid, n: usize, seed: u64) -> Result<DepthGrid> {
    let mut valid: Vec<usize> = (0..dense.len()).filter(|&i| dense.values()[i] > 0.0).collect();
    if n > valid.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} pixels from {} valid",
            valid.len()
        )));
    }
    let mut rng = Rng::new(seed);
    for i in 0..n {
        let j = i + rng.below(valid.len() - i);
        valid.swap(i, j);
    }
    let mut out = vec![0.0; dense.len()];
    for &i in &valid[..n] {
        out[i] = dense.values()[i];
    }
    DepthGrid::new(dense.height(), dense.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(primitives: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            primitives,
            intr: CameraIntrinsics::centered(21, 31, 25.0),
            height: 21,
            width: 31,
            near: 0.1,
            far: 50.0,
            seed: 0,
        }
    }

    #[test]
    fn fronto_parallel_plane() {
        let s = spec_with(vec![Primitive::Plane {
            point: Point3::new(0.0, 0.0, 2.0),
            normal: [0.0, 0.0, 1.0],
        }]);
        let (d, shade) = render_scene(&s).unwrap();
        assert!(d.values().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(shade.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn slanted_plane_at_principal_point() {
        // Plane through (0,0,3) with normal tilted in both image axes.
        let normal = normalize([0.3, -0.2, 1.0]);
        let s = spec_with(vec![Primitive::Plane {
            point: Point3::new(0.0, 0.0, 3.0),
            normal,
        }]);
        let (d, _) = render_scene(&s).unwrap();
        // principal point (10, 15) lies exactly on a pixel; its ray is the optical axis.
        assert!((d.get(10, 15) - 3.0).abs() < 1e-12);
        // elsewhere: t = n·P / n·dir
        let (p, q) = (3.0, 27.0);
        let dir = [(p - 10.0) / 25.0, (q - 15.0) / 25.0, 1.0];
        let t = 3.0 * normal[2] / dot(normal, dir);
        assert!((d.get(3, 27) - t).abs() < 1e-12);
    }

    #[test]
    fn sphere_on_axis_is_closest_at_center() {
        let s = spec_with(vec![
            Primitive::Sphere {
                center: Point3::new(0.0, 0.0, 4.0),
                radius: 1.0,
            },
            Primitive::Plane {
                point: Point3::new(0.0, 0.0, 10.0),
                normal: [0.0, 0.0, 1.0],
            },
        ]);
        let (d, _) = render_scene(&s).unwrap();
        assert!((d.get(10, 15) - 3.0).abs() < 1e-12);
        let min = d.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, d.get(10, 15));
        // ray-sphere oracle at an off-axis pixel
        let dir = [(12.0 - 10.0) / 25.0, (17.0 - 15.0) / 25.0, 1.0];
        let a = dot(dir, dir);
        let b = -2.0 * 4.0;
        let c = 16.0 - 1.0;
        let t = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!((d.get(12, 17) - t).abs() < 1e-12);
    }

    #[test]
    fn cuboid_front_face() {
        let s = spec_with(vec![
            Primitive::Cuboid {
                min: [-0.5, -0.5, 2.0],
                max: [0.5, 0.5, 3.0],
            },
            Primitive::Plane {
                point: Point3::new(0.0, 0.0, 10.0),
                normal: [0.0, 0.0, 1.0],
            },
        ]);
        let (d, _) = render_scene(&s).unwrap();
        assert!((d.get(10, 15) - 2.0).abs() < 1e-12);
        assert!((d.get(0, 0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_and_invalid_specs() {
        let s = spec_with(vec![Primitive::Sphere {
            center: Point3::new(0.0, 0.0, 4.0),
            radius: 1.0,
        }]);
        assert!(matches!(render_scene(&s), Err(Error::Scene(_))));
        let mut bad = spec_with(vec![Primitive::Plane {
            point: Point3::new(0.0, 0.0, 2.0),
            normal: [0.0, 0.0, 1.0],
        }]);
        bad.far = bad.near;
        assert!(render_scene(&bad).is_err());
        assert!(SceneSpec::random(1, 8, 8, CameraIntrinsics::centered(8, 8, 8.0), 2.0, 1.0).is_err());
    }

    #[test]
    fn random_scenes_render() {
        for seed in 0..20 {
            let intr = CameraIntrinsics::centered(64, 64, 60.0);
            let spec = SceneSpec::random(seed, 64, 64, intr, 0.5, 10.0).unwrap();
            let (d, s) = render_scene(&spec).unwrap();
            assert_eq!(d.valid_count(), 64 * 64);
            assert!(d.values().iter().all(|&v| (0.5..=10.0).contains(&v)));
            assert!(s.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn sparse_sampling() {
        let mut vals = vec![0.0; 304 * 228];
        let mut rng = Rng::new(1);
        for v in vals.iter_mut() {
            if rng.next_f64() < 0.9 {
                *v = rng.uniform(0.5, 10.0);
            }
        }
        let dense = DepthGrid::new(228, 304, vals).unwrap();
        let s = sample_sparse(&dense, 500, 3).unwrap();
        assert_eq!(s.valid_count(), 500);
        for (a, b) in s.values().iter().zip(dense.values()) {
            assert!(*a == 0.0 || a == b);
        }
        assert_eq!(s, sample_sparse(&dense, 500, 3).unwrap());
        assert_ne!(s, sample_sparse(&dense, 500, 4).unwrap());
        let all = sample_sparse(&dense, dense.valid_count(), 9).unwrap();
        assert_eq!(all, dense);
        assert!(sample_sparse(&dense, dense.valid_count() + 1, 9).is_err());
    }
}
