//! Deterministic geometric transforms for robustness protocols.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::{Mat3, Scalar, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Rotation about z by an angle in degrees, restricted to [0, 180].
    RotateZ { angle_deg: f64 },
    Flip { axis: Axis },
    /// Keeps a deterministic pseudo-random subset.
    Downsample { keep_fraction: f64, seed: u64 },
}

impl Transform {
    /// Parses CLI transform specs: `rotz:90`, `flip:x`, `down:0.5:42`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::Config(format!("bad transform spec `{spec}`"));
        match parts.as_slice() {
            ["rotz", angle] => {
                let angle_deg: f64 = angle.parse().map_err(|_| bad())?;
                if !(0.0..=180.0).contains(&angle_deg) {
                    return Err(Error::Config(format!(
                        "rotation angle {angle_deg} outside [0, 180]"
                    )));
                }
                Ok(Transform::RotateZ { angle_deg })
            }
            ["flip", axis] => {
                let axis = match *axis {
                    "x" => Axis::X,
                    "y" => Axis::Y,
                    "z" => Axis::Z,
                    _ => return Err(bad()),
                };
                Ok(Transform::Flip { axis })
            }
            ["down", fraction, seed] => {
                let keep_fraction: f64 = fraction.parse().map_err(|_| bad())?;
                if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "keep fraction {keep_fraction} outside (0, 1]"
                    )));
                }
                Ok(Transform::Downsample {
                    keep_fraction,
                    seed: seed.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

fn map_channels<S: Scalar>(cloud: &PointCloud<S>, keep: &[usize]) -> PointCloud<S> {
    let pick_vec = |v: &Vec<Vec3<S>>| keep.iter().map(|&i| v[i]).collect();
    PointCloud {
        positions: pick_vec(&cloud.positions),
        colors: cloud.colors.as_ref().map(pick_vec),
        normals: cloud.normals.as_ref().map(pick_vec),
        curvatures: cloud
            .curvatures
            .as_ref()
            .map(|v| keep.iter().map(|&i| v[i]).collect()),
        gt_labels: cloud
            .gt_labels
            .as_ref()
            .map(|v| keep.iter().map(|&i| v[i]).collect()),
        gt_instances: cloud
            .gt_instances
            .as_ref()
            .map(|v| keep.iter().map(|&i| v[i]).collect()),
    }
}

fn linear_map<S: Scalar>(cloud: &PointCloud<S>, f: impl Fn(Vec3<S>) -> Vec3<S>) -> PointCloud<S> {
    let mut out = cloud.clone();
    for p in &mut out.positions {
        *p = f(*p);
    }
    if let Some(normals) = &mut out.normals {
        for n in normals.iter_mut() {
            *n = f(*n);
        }
    }
    out
}

/// Applies a transform and returns the transformed cloud plus the index map
/// from surviving points back to the original cloud.
pub fn apply<S: Scalar>(cloud: &PointCloud<S>, transform: Transform) -> (PointCloud<S>, Vec<usize>) {
    match transform {
        Transform::RotateZ { angle_deg } => {
            let rot = Mat3::rotation_z(S::from_f64_lossy(angle_deg.to_radians()));
            (linear_map(cloud, |v| rot.mul_vec(v)), (0..cloud.len()).collect())
        }
        Transform::Flip { axis } => {
            let f = move |v: Vec3<S>| match axis {
                Axis::X => Vec3::new(-v.x, v.y, v.z),
                Axis::Y => Vec3::new(v.x, -v.y, v.z),
                Axis::Z => Vec3::new(v.x, v.y, -v.z),
            };
            (linear_map(cloud, f), (0..cloud.len()).collect())
        }
        Transform::Downsample {
            keep_fraction,
            seed,
        } => {
            let n = cloud.len();
            let take = ((keep_fraction * n as f64).round() as usize).clamp(1, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = sample(&mut rng, n, take).into_vec();
            keep.sort_unstable();
            (map_channels(cloud, &keep), keep)
        }
    }
}

/// Rotates positions (and normals) by an arbitrary rotation matrix; full
/// SO(3) rotations are used by descriptor tests.
pub fn rotate_cloud<S: Scalar>(cloud: &PointCloud<S>, rot: &Mat3<S>) -> PointCloud<S> {
    linear_map(cloud, |v| rot.mul_vec(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(n: usize) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        PointCloud::from_positions(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn zero_rotation_is_identity() {
        let cloud = random_cloud(50);
        let (out, map) = apply(&cloud, Transform::RotateZ { angle_deg: 0.0 });
        for (a, b) in cloud.positions.iter().zip(&out.positions) {
            assert!(a.distance(*b) < 1e-12);
        }
        assert_eq!(map, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn double_flip_is_identity() {
        let cloud = random_cloud(30);
        let (once, _) = apply(&cloud, Transform::Flip { axis: Axis::X });
        let (twice, _) = apply(&once, Transform::Flip { axis: Axis::X });
        for (a, b) in cloud.positions.iter().zip(&twice.positions) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn downsample_count_and_injectivity() {
        let cloud = random_cloud(1000);
        let (out, map) = apply(
            &cloud,
            Transform::Downsample {
                keep_fraction: 0.5,
                seed: 9,
            },
        );
        assert_eq!(out.len(), 500);
        assert_eq!(map.len(), 500);
        let unique: std::collections::HashSet<usize> = map.iter().copied().collect();
        assert_eq!(unique.len(), 500);
        assert!(map.iter().all(|&i| i < 1000));
        for (new_i, &old_i) in map.iter().enumerate() {
            assert_eq!(out.positions[new_i], cloud.positions[old_i]);
        }
    }

    #[test]
    fn downsample_deterministic() {
        let cloud = random_cloud(200);
        let t = Transform::Downsample {
            keep_fraction: 0.3,
            seed: 4,
        };
        let (_, m1) = apply(&cloud, t);
        let (_, m2) = apply(&cloud, t);
        assert_eq!(m1, m2);
    }

    #[test]
    fn rigid_transforms_preserve_pairwise_distances() {
        let cloud = random_cloud(40);
        for t in [
            Transform::RotateZ { angle_deg: 77.7 },
            Transform::Flip { axis: Axis::Y },
        ] {
            let (out, _) = apply(&cloud, t);
            for i in 0..cloud.len() {
                for j in (i + 1)..cloud.len() {
                    let before = cloud.positions[i].distance(cloud.positions[j]);
                    let after = out.positions[i].distance(out.positions[j]);
                    assert!((before - after).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn spec_string_parsing() {
        assert_eq!(
            Transform::parse("rotz:90").unwrap(),
            Transform::RotateZ { angle_deg: 90.0 }
        );
        assert_eq!(
            Transform::parse("flip:x").unwrap(),
            Transform::Flip { axis: Axis::X }
        );
        assert_eq!(
            Transform::parse("down:0.5:42").unwrap(),
            Transform::Downsample {
                keep_fraction: 0.5,
                seed: 42
            }
        );
        assert!(Transform::parse("rotz:200").is_err());
        assert!(Transform::parse("shear:1").is_err());
    }
}
