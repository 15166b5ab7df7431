//! Per-point surface normals and curvature from PCA over radius
//! neighborhoods, plus region-level aggregates.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::octree::Octree;
use crate::scalar::{Scalar, Vec3};

/// PCA frame of one point's neighborhood. Curvature is the surface-variation
/// proxy `λ0 / (λ0 + λ1 + λ2)`, bounded by 1/3.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame<S: Scalar = f64> {
    pub normal: Vec3<S>,
    pub curvature: S,
    pub neighbor_count: usize,
    pub degenerate: bool,
}

impl<S: Scalar> LocalFrame<S> {
    fn degenerate_frame(neighbor_count: usize) -> Self {
        Self {
            normal: Vec3::new(S::zero(), S::zero(), S::one()),
            curvature: S::from_f64_lossy(1.0 / 3.0),
            neighbor_count,
            degenerate: true,
        }
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues ascending, eigenvectors as columns)`.
pub fn symmetric_eigen_3x3<S: Scalar>(m: [[S; 3]; 3]) -> ([S; 3], [[S; 3]; 3]) {
    let mut a = m;
    // v starts as identity, accumulates rotations columnwise
    let mut v = [[S::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = S::one();
    }
    let eps = S::from_f64_lossy(1e-30);
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off <= eps {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == S::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (S::from_f64_lossy(2.0) * apq);
            let t = {
                let sign = if theta < S::zero() { -S::one() } else { S::one() };
                sign / (theta.abs() + (theta * theta + S::one()).sqrt())
            };
            let c = S::one() / (t * t + S::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vectors = [[S::zero(); 3]; 3];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = v[row][src];
        }
    }
    (values, vectors)
}

/// Orients `n` toward the +z half-space; ties fall through to +x, then +y.
fn orient<S: Scalar>(n: Vec3<S>) -> Vec3<S> {
    if n.z != S::zero() {
        return if n.z > S::zero() { n } else { -n };
    }
    if n.x != S::zero() {
        return if n.x > S::zero() { n } else { -n };
    }
    if n.y >= S::zero() {
        n
    } else {
        -n
    }
}

fn frame_from_neighborhood<S: Scalar>(points: &[Vec3<S>], neighbors: &[usize]) -> LocalFrame<S> {
    if neighbors.len() < 3 {
        return LocalFrame::degenerate_frame(neighbors.len());
    }
    let inv = S::one() / S::from_f64_lossy(neighbors.len() as f64);
    let mut mean = Vec3::zero();
    for &i in neighbors {
        mean += points[i];
    }
    mean = mean * inv;
    let mut cov = [[S::zero(); 3]; 3];
    for &i in neighbors {
        let d = points[i] - mean;
        let v = [d.x, d.y, d.z];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += v[r] * v[c];
            }
        }
    }
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c *= inv;
        }
    }
    let (vals, vecs) = symmetric_eigen_3x3(cov);
    let total = vals[0] + vals[1] + vals[2];
    if total <= S::zero() || !total.is_finite() {
        return LocalFrame::degenerate_frame(neighbors.len());
    }
    let normal = Vec3::new(vecs[0][0], vecs[1][0], vecs[2][0]);
    let normal = match normal.normalized() {
        Some(n) => orient(n),
        None => return LocalFrame::degenerate_frame(neighbors.len()),
    };
    // clamp tiny negative eigenvalues from float noise
    let curvature = (vals[0].max(S::zero()) / total).min(S::from_f64_lossy(1.0 / 3.0));
    LocalFrame {
        normal,
        curvature,
        neighbor_count: neighbors.len(),
        degenerate: false,
    }
}

/// One frame per point from the radius-`r` neighborhood (the point itself
/// included). Points with fewer than 3 neighbors are flagged degenerate.
pub fn estimate_frames<S: Scalar>(
    cloud: &PointCloud<S>,
    tree: &Octree<S>,
    r: S,
) -> Result<Vec<LocalFrame<S>>> {
    if r <= S::zero() {
        return Err(Error::Config("neighborhood radius must be positive".into()));
    }
    if tree.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "octree over {} points, cloud has {}",
            tree.len(),
            cloud.len()
        )));
    }
    let frames: Vec<LocalFrame<S>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = tree.radius_query(cloud.positions[i], r);
            frame_from_neighborhood(&cloud.positions, &neighbors)
        })
        .collect();
    Ok(frames)
}

/// Region-level aggregate of member frames and positions.
#[derive(Debug, Clone)]
pub struct RegionAggregate<S: Scalar = f64> {
    pub normal: Vec3<S>,
    pub curvature: S,
    pub mean_color: Option<Vec3<S>>,
    /// Bounding-box diagonal of the members.
    pub scale: S,
    pub centroid: Vec3<S>,
    pub degenerate: bool,
}

pub fn region_aggregate<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    members: &[usize],
) -> Result<RegionAggregate<S>> {
    if members.is_empty() {
        return Err(Error::EmptyInput("region with no members"));
    }
    let inv = S::one() / S::from_f64_lossy(members.len() as f64);
    let mut lo = cloud.positions[members[0]];
    let mut hi = lo;
    let mut centroid = Vec3::zero();
    let mut mean_color = cloud.colors.as_ref().map(|_| Vec3::zero());
    for &i in members {
        let p = cloud.positions[i];
        lo = lo.min_componentwise(p);
        hi = hi.max_componentwise(p);
        centroid += p;
        if let (Some(colors), Some(acc)) = (&cloud.colors, mean_color.as_mut()) {
            *acc += colors[i];
        }
    }
    centroid = centroid * inv;
    if let Some(acc) = mean_color.as_mut() {
        *acc = *acc * inv;
    }

    let mut normal_sum = Vec3::zero();
    let mut curvature_sum = S::zero();
    let mut live = 0usize;
    for &i in members {
        if frames[i].degenerate {
            continue;
        }
        normal_sum += frames[i].normal;
        curvature_sum += frames[i].curvature;
        live += 1;
    }
    let (normal, curvature, degenerate) = if live == 0 {
        (Vec3::new(S::zero(), S::zero(), S::one()), S::from_f64_lossy(1.0 / 3.0), true)
    } else {
        match normal_sum.normalized() {
            Some(n) => (n, curvature_sum / S::from_f64_lossy(live as f64), false),
            // opposing member normals cancel out
            None => (
                Vec3::new(S::zero(), S::zero(), S::one()),
                curvature_sum / S::from_f64_lossy(live as f64),
                true,
            ),
        }
    };
    Ok(RegionAggregate {
        normal,
        curvature,
        mean_color,
        scale: (hi - lo).norm(),
        centroid,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Mat3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_plane(n: usize, z: f64) -> Vec<Vec3<f64>> {
        let mut pts = Vec::new();
        let side = (n as f64).sqrt().ceil() as usize;
        for i in 0..side {
            for j in 0..side {
                pts.push(Vec3::new(i as f64 * 0.05, j as f64 * 0.05, z));
            }
        }
        pts.truncate(n);
        pts
    }

    fn frames_of(points: Vec<Vec3<f64>>, r: f64) -> Vec<LocalFrame<f64>> {
        let cloud = PointCloud::from_positions(points);
        let tree = Octree::with_defaults(&cloud.positions).unwrap();
        estimate_frames(&cloud, &tree, r).unwrap()
    }

    #[test]
    fn plane_gets_up_normal_and_zero_curvature() {
        let frames = frames_of(grid_plane(100, 0.0), 0.12);
        // interior point: index near the middle of the grid
        let f = frames[45];
        assert!(!f.degenerate);
        assert!((f.normal.z - 1.0).abs() < 1e-9);
        assert!(f.curvature < 1e-9);
    }

    #[test]
    fn isotropic_blob_curvature_near_one_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<Vec3<f64>> = (0..3000)
            .map(|_| {
                let g = |rng: &mut ChaCha8Rng| {
                    // Box-Muller
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                Vec3::new(g(&mut rng), g(&mut rng), g(&mut rng))
            })
            .collect();
        let frames = frames_of(pts, 5.0);
        assert!((frames[0].curvature - 1.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn sphere_normals_near_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3<f64>> = (0..4000)
            .map(|_| {
                loop {
                    let v = Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    if let Some(u) = v.normalized() {
                        break u;
                    }
                }
            })
            .collect();
        let frames = frames_of(pts.clone(), 0.3);
        let planar = frames_of(grid_plane(400, 0.0), 0.3);
        let max_plane_curv = planar
            .iter()
            .filter(|f| !f.degenerate)
            .map(|f| f.curvature)
            .fold(0.0f64, f64::max);
        let mut checked = 0;
        for (f, p) in frames.iter().zip(&pts) {
            if f.degenerate {
                continue;
            }
            assert!(f.curvature > 0.0);
            assert!(f.curvature < max_plane_curv + 0.3);
            // analytic sphere normal is radial; orientation may flip sign
            let cosang = f.normal.dot(*p).abs();
            assert!(cosang > (5.0f64).to_radians().cos(), "cos angle {cosang}");
            checked += 1;
        }
        assert!(checked > 3000);
    }

    #[test]
    fn too_few_neighbors_is_degenerate() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
        ];
        let frames = frames_of(pts, 0.1);
        for f in frames {
            assert!(f.degenerate);
            assert_eq!(f.normal, Vec3::new(0.0, 0.0, 1.0));
            assert!((f.curvature - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_equivariance_and_curvature_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec3<f64>> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    0.2 * rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let rot = Mat3::rotation_axis_angle(Vec3::new(0.3, -0.5, 0.81), 1.1);
        let rotated: Vec<Vec3<f64>> = pts.iter().map(|p| rot.mul_vec(*p)).collect();
        let fa = frames_of(pts, 0.4);
        let fb = frames_of(rotated, 0.4);
        for (a, b) in fa.iter().zip(&fb) {
            if a.degenerate || b.degenerate {
                continue;
            }
            let ra = rot.mul_vec(a.normal);
            // up to sign before orientation
            let align = ra.dot(b.normal).abs();
            assert!(align > 1.0 - 1e-5, "align {align}");
            assert!((a.curvature - b.curvature).abs() < 1e-6);
        }
    }

    #[test]
    fn curvature_scale_invariance() {
        let pts = grid_plane(64, 0.0)
            .into_iter()
            .map(|p| p + Vec3::new(0.0, 0.0, 0.01 * (p.x * 40.0).sin()))
            .collect::<Vec<_>>();
        let scaled: Vec<Vec3<f64>> = pts.iter().map(|p| *p * 2.0).collect();
        let fa = frames_of(pts, 0.2);
        let fb = frames_of(scaled, 0.4);
        for (a, b) in fa.iter().zip(&fb) {
            if a.degenerate {
                continue;
            }
            assert!((a.curvature - b.curvature).abs() < 1e-6);
            assert!(a.curvature <= 1.0 / 3.0 + 1e-12);
        }
    }

    #[test]
    fn aggregate_basics() {
        let cloud = PointCloud::from_positions(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
        ]);
        let frames = vec![
            LocalFrame {
                normal: Vec3::new(0.0, 0.0, 1.0),
                curvature: 0.1,
                neighbor_count: 5,
                degenerate: false,
            };
            2
        ];
        let agg = region_aggregate(&cloud, &frames, &[0, 1]).unwrap();
        assert_eq!(agg.normal, Vec3::new(0.0, 0.0, 1.0));
        assert!((agg.scale - 3.0f64.sqrt()).abs() < 1e-12);
        assert!((agg.curvature - 0.1).abs() < 1e-12);
        assert!(!agg.degenerate);
    }

    #[test]
    fn opposing_normals_cancel_to_degenerate() {
        let cloud = PointCloud::from_positions(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)]);
        let mk = |n: Vec3<f64>| LocalFrame {
            normal: n,
            curvature: 0.0,
            neighbor_count: 4,
            degenerate: false,
        };
        let frames = vec![mk(Vec3::new(1.0, 0.0, 0.0)), mk(Vec3::new(-1.0, 0.0, 0.0))];
        let agg = region_aggregate(&cloud, &frames, &[0, 1]).unwrap();
        assert!(agg.degenerate);
    }

    #[test]
    fn all_degenerate_members_flag_region() {
        let cloud = PointCloud::<f64>::from_positions(vec![Vec3::zero()]);
        let frames = vec![LocalFrame::degenerate_frame(0)];
        let agg = region_aggregate(&cloud, &frames, &[0]).unwrap();
        assert!(agg.degenerate);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(1,2,3) rotated by a known rotation
        let rot = Mat3::<f64>::rotation_axis_angle(Vec3::new(1.0, 1.0, 0.2), 0.9);
        let d = [1.0, 2.0, 3.0];
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += rot.rows[r][k] * d[k] * rot.rows[c][k];
                }
                m[r][c] = acc;
            }
        }
        let (vals, vecs) = symmetric_eigen_3x3(m);
        for (got, want) in vals.iter().zip(&d) {
            assert!((got - want).abs() < 1e-10);
        }
        // eigenvector columns reproduce M v = λ v
        for col in 0..3 {
            let v = Vec3::new(vecs[0][col], vecs[1][col], vecs[2][col]);
            let mv = Vec3::new(
                m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
            );
            assert!((mv - v * vals[col]).norm() < 1e-9);
        }
    }
}
