//! Pairwise angular features and histogram descriptors.
//!
//! The adapted PFH histograms only the angle set (α, φ, θ) over radius
//! neighborhoods, which makes it invariant to rigid motion and, with a
//! co-scaled radius, to uniform scale. The original PFH additionally bins the
//! pair distance d and loses that scale robustness. FPFH is the two-pass
//! simplified variant with O(Nk) pair evaluations instead of O(Nk²).

use std::path::Path;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::LocalFrame;
use crate::mat::{read_matrix, write_matrix, Matrix};
use crate::octree::Octree;
use crate::scalar::{Scalar, Vec3};

pub const ADAPTED_PFH_DIM: usize = 125; // 5x5x5 joint bins over (alpha, phi, theta)
pub const ORIGINAL_PFH_DIM: usize = 625; // 5x5x5x5 joint bins over (alpha, phi, theta, d)
pub const FPFH_DIM: usize = 33; // 11 bins per feature, concatenated

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    AdaptedPfh,
    OriginalPfh,
    Fpfh,
    External,
}

impl DescriptorKind {
    pub fn is_histogram(self) -> bool {
        !matches!(self, DescriptorKind::External)
    }

    pub fn dim(self) -> Option<usize> {
        match self {
            DescriptorKind::AdaptedPfh => Some(ADAPTED_PFH_DIM),
            DescriptorKind::OriginalPfh => Some(ORIGINAL_PFH_DIM),
            DescriptorKind::Fpfh => Some(FPFH_DIM),
            DescriptorKind::External => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor<S: Scalar = f64> {
    pub kind: DescriptorKind,
    pub values: Vec<S>,
}

impl<S: Scalar> Descriptor<S> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// All-zero descriptors mark isolated points.
    pub fn is_isolated(&self) -> bool {
        self.values.iter().all(|v| *v == S::zero())
    }

    fn zero(kind: DescriptorKind, dim: usize) -> Self {
        Self {
            kind,
            values: vec![S::zero(); dim],
        }
    }

    pub(crate) fn normalized_to_unit_sum(mut self) -> Self {
        let sum: S = self.values.iter().copied().sum();
        if sum > S::zero() {
            for v in &mut self.values {
                *v /= sum;
            }
        }
        self
    }
}

/// The full feature set of one ordered point pair.
#[derive(Debug, Clone, Copy)]
pub struct PairFeatures<S: Scalar = f64> {
    /// v · n2, cosine in [-1, 1].
    pub alpha: S,
    /// u · (p_x - p_c)/d, cosine in [-1, 1].
    pub phi: S,
    /// atan2(w · n2, u · n2), radians in [-π, π].
    pub theta: S,
    /// (p_x - p_c)/d, unit direction.
    pub beta: Vec3<S>,
    /// ‖p_x - p_c‖.
    pub d: S,
}

/// Darboux-frame pair features anchored at `p_c` with normal `n1`.
///
/// When `n1` is parallel to the displacement the frame is completed from the
/// global axis least parallel to `n1`, so the result stays deterministic.
pub fn pair_features<S: Scalar>(
    p_c: Vec3<S>,
    n1: Vec3<S>,
    p_x: Vec3<S>,
    n2: Vec3<S>,
) -> Result<PairFeatures<S>> {
    let disp = p_x - p_c;
    let d = disp.norm();
    if d <= S::zero() {
        return Err(Error::Degenerate("coincident pair".into()));
    }
    let beta = disp / d;
    let u = n1;
    let v_raw = u.cross(beta);
    let v = if v_raw.norm() < S::from_f64_lossy(1e-9) {
        // fallback frame: axis least parallel to u
        let axes = [
            Vec3::new(S::one(), S::zero(), S::zero()),
            Vec3::new(S::zero(), S::one(), S::zero()),
            Vec3::new(S::zero(), S::zero(), S::one()),
        ];
        let mut best = axes[0];
        let mut best_dot = S::infinity();
        for a in axes {
            let dot = u.dot(a).abs();
            if dot < best_dot {
                best_dot = dot;
                best = a;
            }
        }
        u.cross(best)
            .normalized()
            .ok_or_else(|| Error::Degenerate("zero normal".into()))?
    } else {
        v_raw.normalized().unwrap()
    };
    let w = u.cross(v);
    Ok(PairFeatures {
        alpha: v.dot(n2),
        phi: u.dot(beta),
        theta: w.dot(n2).atan2(u.dot(n2)),
        beta,
        d,
    })
}

/// Estimated normals carry an arbitrary sign (the +z orientation rule is not
/// rotation-equivariant), so histogram accumulation canonicalizes the pair:
/// the source normal is flipped to face the displacement (both normals flip
/// together to keep their relative angle), then the target normal is aligned
/// with the source. Features become independent of the incoming signs, which
/// is what makes the histograms rotation invariant.
fn canonical_signs<S: Scalar>(
    p_c: Vec3<S>,
    n1: Vec3<S>,
    p_x: Vec3<S>,
    n2: Vec3<S>,
) -> (Vec3<S>, Vec3<S>) {
    let disp = p_x - p_c;
    let (mut n1c, mut n2c) = (n1, n2);
    if n1c.dot(disp) < S::zero() {
        n1c = -n1c;
        n2c = -n2c;
    }
    if n1c.dot(n2c) < S::zero() {
        n2c = -n2c;
    }
    (n1c, n2c)
}

/// Half-open uniform bins over [lo, hi]; the last bin is closed.
fn bin_of<S: Scalar>(x: S, lo: S, hi: S, nbins: usize) -> usize {
    let n = S::from_f64_lossy(nbins as f64);
    let t = ((x - lo) / (hi - lo) * n).floor();
    let idx = t.to_f64_lossy();
    if idx < 0.0 {
        0
    } else if idx as usize >= nbins {
        nbins - 1
    } else {
        idx as usize
    }
}

/// Query-point neighborhood (query index first, then radius neighbors by
/// ascending index), restricted to non-degenerate frames.
fn neighborhood<S: Scalar>(
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
) -> Vec<usize> {
    let mut set = vec![query];
    for idx in tree.radius_query(tree.points()[query], r) {
        if idx != query && !frames[idx].degenerate {
            set.push(idx);
        }
    }
    if frames[query].degenerate {
        set.remove(0);
    }
    set
}

fn pfh_histogram<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    set: &[usize],
    with_distance: Option<S>,
    pair_evals: &mut u64,
) -> Descriptor<S> {
    let kind = if with_distance.is_some() {
        DescriptorKind::OriginalPfh
    } else {
        DescriptorKind::AdaptedPfh
    };
    let dim = kind.dim().unwrap();
    if set.len() < 2 {
        return Descriptor::zero(kind, dim);
    }
    let one = S::one();
    let pi = S::from_f64_lossy(std::f64::consts::PI);
    let mut hist = vec![S::zero(); dim];
    for a in 0..set.len() {
        for b in (a + 1)..set.len() {
            *pair_evals += 1;
            // source point is the lower cloud index for determinism
            let (i, j) = if set[a] < set[b] {
                (set[a], set[b])
            } else {
                (set[b], set[a])
            };
            let (n1, n2) = canonical_signs(
                cloud.positions[i],
                frames[i].normal,
                cloud.positions[j],
                frames[j].normal,
            );
            let Ok(f) = pair_features(cloud.positions[i], n1, cloud.positions[j], n2) else {
                continue;
            };
            let ba = bin_of(f.alpha, -one, one, 5);
            let bp = bin_of(f.phi, -one, one, 5);
            let bt = bin_of(f.theta, -pi, pi, 5);
            let slot = match with_distance {
                None => (ba * 5 + bp) * 5 + bt,
                Some(dmax) => {
                    let bd = bin_of(f.d, S::zero(), dmax, 5);
                    ((ba * 5 + bp) * 5 + bt) * 5 + bd
                }
            };
            hist[slot] += S::one();
        }
    }
    Descriptor { kind, values: hist }.normalized_to_unit_sum()
}

pub fn adapted_pfh<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
) -> Descriptor<S> {
    let mut evals = 0;
    adapted_pfh_counted(cloud, frames, tree, query, r, &mut evals)
}

pub fn adapted_pfh_counted<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
    pair_evals: &mut u64,
) -> Descriptor<S> {
    let set = neighborhood(frames, tree, query, r);
    pfh_histogram(cloud, frames, &set, None, pair_evals)
}

pub fn original_pfh<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
) -> Descriptor<S> {
    let mut evals = 0;
    original_pfh_counted(cloud, frames, tree, query, r, &mut evals)
}

pub fn original_pfh_counted<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
    pair_evals: &mut u64,
) -> Descriptor<S> {
    let set = neighborhood(frames, tree, query, r);
    pfh_histogram(cloud, frames, &set, Some(r + r), pair_evals)
}

/// Simplified per-point histogram, pass one of FPFH. Raw (unnormalized)
/// counts; one pair evaluation per neighbor.
fn spfh<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
    pair_evals: &mut u64,
) -> (Vec<S>, Vec<usize>) {
    let one = S::one();
    let pi = S::from_f64_lossy(std::f64::consts::PI);
    let mut hist = vec![S::zero(); FPFH_DIM];
    let mut neighbors = Vec::new();
    if frames[query].degenerate {
        return (hist, neighbors);
    }
    for idx in tree.radius_query(cloud.positions[query], r) {
        if idx == query || frames[idx].degenerate {
            continue;
        }
        *pair_evals += 1;
        let (n1, n2) = canonical_signs(
            cloud.positions[query],
            frames[query].normal,
            cloud.positions[idx],
            frames[idx].normal,
        );
        let Ok(f) = pair_features(cloud.positions[query], n1, cloud.positions[idx], n2) else {
            continue;
        };
        hist[bin_of(f.alpha, -one, one, 11)] += S::one();
        hist[11 + bin_of(f.phi, -one, one, 11)] += S::one();
        hist[22 + bin_of(f.theta, -pi, pi, 11)] += S::one();
        neighbors.push(idx);
    }
    (hist, neighbors)
}

fn fpfh_combine<S: Scalar>(
    own: &[S],
    neighbor_hists: &[(&[S], S)], // (spfh, distance)
) -> Descriptor<S> {
    let mut values: Vec<S> = own.to_vec();
    if !neighbor_hists.is_empty() {
        let inv_k = S::one() / S::from_f64_lossy(neighbor_hists.len() as f64);
        for (hist, d) in neighbor_hists {
            if *d <= S::zero() {
                continue;
            }
            let w = inv_k / *d;
            for (slot, v) in values.iter_mut().zip(hist.iter()) {
                *slot += w * *v;
            }
        }
    }
    Descriptor {
        kind: DescriptorKind::Fpfh,
        values,
    }
    .normalized_to_unit_sum()
}

pub fn fpfh<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    query: usize,
    r: S,
) -> Descriptor<S> {
    let mut evals = 0;
    let (own, neighbors) = spfh(cloud, frames, tree, query, r, &mut evals);
    let neighbor_data: Vec<(Vec<S>, S)> = neighbors
        .iter()
        .map(|&j| {
            let (h, _) = spfh(cloud, frames, tree, j, r, &mut evals);
            (h, cloud.positions[query].distance(cloud.positions[j]))
        })
        .collect();
    let refs: Vec<(&[S], S)> = neighbor_data.iter().map(|(h, d)| (h.as_slice(), *d)).collect();
    fpfh_combine(&own, &refs)
}

/// Pair-evaluation instrumentation for the complexity contract. For the PFH
/// variants this counts all unordered pairs; for FPFH it counts pass-one
/// (per-point) pair evaluations only.
#[derive(Debug, Clone, Copy, Default)]
pub struct DescriptorStats {
    pub pair_evaluations: u64,
}

/// Computes descriptors for every point. FPFH evaluates each point's
/// simplified histogram exactly once (two-pass scheme).
pub fn compute_descriptors<S: Scalar>(
    kind: DescriptorKind,
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    tree: &Octree<S>,
    r: S,
) -> Result<(Vec<Descriptor<S>>, DescriptorStats)> {
    if frames.len() != cloud.len() {
        return Err(Error::Shape("frames do not match cloud".into()));
    }
    match kind {
        DescriptorKind::AdaptedPfh | DescriptorKind::OriginalPfh => {
            let results: Vec<(Descriptor<S>, u64)> = (0..cloud.len())
                .into_par_iter()
                .map(|q| {
                    let mut evals = 0;
                    let d = if kind == DescriptorKind::AdaptedPfh {
                        adapted_pfh_counted(cloud, frames, tree, q, r, &mut evals)
                    } else {
                        original_pfh_counted(cloud, frames, tree, q, r, &mut evals)
                    };
                    (d, evals)
                })
                .collect();
            let total = results.iter().map(|(_, e)| e).sum();
            Ok((
                results.into_iter().map(|(d, _)| d).collect(),
                DescriptorStats {
                    pair_evaluations: total,
                },
            ))
        }
        DescriptorKind::Fpfh => {
            let pass_one: Vec<(Vec<S>, Vec<usize>, u64)> = (0..cloud.len())
                .into_par_iter()
                .map(|q| {
                    let mut evals = 0;
                    let (h, nb) = spfh(cloud, frames, tree, q, r, &mut evals);
                    (h, nb, evals)
                })
                .collect();
            let total = pass_one.iter().map(|(_, _, e)| e).sum();
            let descriptors = (0..cloud.len())
                .into_par_iter()
                .map(|q| {
                    let (own, neighbors, _) = &pass_one[q];
                    let refs: Vec<(&[S], S)> = neighbors
                        .iter()
                        .map(|&j| {
                            (
                                pass_one[j].0.as_slice(),
                                cloud.positions[q].distance(cloud.positions[j]),
                            )
                        })
                        .collect();
                    fpfh_combine(own, &refs)
                })
                .collect();
            Ok((
                descriptors,
                DescriptorStats {
                    pair_evaluations: total,
                },
            ))
        }
        DescriptorKind::External => Err(Error::Config(
            "external descriptors are loaded from file, not computed".into(),
        )),
    }
}

/// Arithmetic mean of member descriptors; histogram kinds are renormalized
/// to unit sum.
pub fn region_descriptor<S: Scalar>(
    descriptors: &[Descriptor<S>],
    members: &[usize],
) -> Result<Descriptor<S>> {
    let first = members
        .first()
        .ok_or(Error::EmptyInput("region descriptor over no members"))?;
    let kind = descriptors[*first].kind;
    let dim = descriptors[*first].dim();
    let mut values = vec![S::zero(); dim];
    for &m in members {
        let d = &descriptors[m];
        if d.kind != kind || d.dim() != dim {
            return Err(Error::Shape("mixed descriptor kinds in one region".into()));
        }
        for (slot, v) in values.iter_mut().zip(&d.values) {
            *slot += *v;
        }
    }
    let inv = S::one() / S::from_f64_lossy(members.len() as f64);
    for v in &mut values {
        *v *= inv;
    }
    let d = Descriptor { kind, values };
    Ok(if kind.is_histogram() {
        d.normalized_to_unit_sum()
    } else {
        d
    })
}

/// Cosine similarity; defined as 0 when either vector is all-zero.
pub fn descriptor_cosine<S: Scalar>(a: &Descriptor<S>, b: &Descriptor<S>) -> Result<S> {
    if a.kind != b.kind || a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "cosine over mismatched descriptors ({:?}/{} vs {:?}/{})",
            a.kind,
            a.dim(),
            b.kind,
            b.dim()
        )));
    }
    let dot: S = a.values.iter().zip(&b.values).map(|(x, y)| *x * *y).sum();
    let na: S = a.values.iter().map(|x| *x * *x).sum::<S>().sqrt();
    let nb: S = b.values.iter().map(|x| *x * *x).sum::<S>().sqrt();
    if na <= S::zero() || nb <= S::zero() {
        return Ok(S::zero());
    }
    Ok(dot / (na * nb))
}

/// Reads externally computed per-point embeddings (RM3DMAT1 layout). The row
/// count must match the target cloud size.
pub fn load_external_embeddings<S: Scalar>(
    path: &Path,
    expected_rows: usize,
) -> Result<Vec<Descriptor<S>>> {
    let m = read_matrix(path)?;
    if m.rows != expected_rows {
        return Err(Error::Shape(format!(
            "embedding file has {} rows, cloud has {expected_rows} points",
            m.rows
        )));
    }
    Ok((0..m.rows)
        .map(|r| Descriptor {
            kind: DescriptorKind::External,
            values: m.row(r).iter().map(|&v| S::from_f64_lossy(v as f64)).collect(),
        })
        .collect())
}

/// Dumps per-point descriptors as an RM3DMAT1 matrix.
pub fn save_descriptors<S: Scalar>(descriptors: &[Descriptor<S>], path: &Path) -> Result<()> {
    let rows: Vec<Vec<f32>> = descriptors
        .iter()
        .map(|d| d.values.iter().map(|v| v.to_f64_lossy() as f32).collect())
        .collect();
    write_matrix(&Matrix::from_rows(&rows)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::estimate_frames;
    use crate::scalar::Mat3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SQRT2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn pair_features_axis_case() {
        let f = pair_features(
            Vec3::<f64>::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        assert!(f.alpha.abs() < 1e-12);
        assert!(f.phi.abs() < 1e-12);
        assert!(f.theta.abs() < 1e-12);
        assert_eq!(f.beta, Vec3::new(1.0, 0.0, 0.0));
        assert!((f.d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_features_tilted_case() {
        // independently hand-evaluated Darboux frame:
        // u=(0,0,1), v=u×(0,1,0)=(-1,0,0), w=u×v=(0,-1,0)
        // alpha=v·n2=-1/√2, phi=0, theta=atan2(0,1/√2)=0
        let f = pair_features(
            Vec3::<f64>::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(SQRT2_INV, 0.0, SQRT2_INV),
        )
        .unwrap();
        assert!((f.alpha + SQRT2_INV).abs() < 1e-12);
        assert!(f.phi.abs() < 1e-12);
        assert!(f.theta.abs() < 1e-12);
        assert!((f.d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_features_invariant_under_corotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rand_unit = |rng: &mut ChaCha8Rng| loop {
                let v = Vec3::<f64>::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if let Some(u) = v.normalized() {
                    break u;
                }
            };
            let p_c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3);
            let p_x = p_c + rand_unit(&mut rng) * rng.gen_range(0.1..2.0);
            let n1 = rand_unit(&mut rng);
            let n2 = rand_unit(&mut rng);
            let rot = Mat3::rotation_axis_angle(rand_unit(&mut rng), rng.gen_range(0.0..3.0));
            let a = pair_features(p_c, n1, p_x, n2).unwrap();
            let b = pair_features(
                rot.mul_vec(p_c),
                rot.mul_vec(n1),
                rot.mul_vec(p_x),
                rot.mul_vec(n2),
            )
            .unwrap();
            assert!((a.alpha - b.alpha).abs() < 1e-9);
            assert!((a.phi - b.phi).abs() < 1e-9);
            assert!((a.theta - b.theta).abs() < 1e-9);
            assert!((a.d - b.d).abs() < 1e-9);
            // beta rotates with the frame
            assert!((rot.mul_vec(a.beta) - b.beta).norm() < 1e-9);
            // unit beta invariant
            assert!((a.beta.norm_squared() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn coincident_pair_is_an_error() {
        let p = Vec3::<f64>::new(1.0, 2.0, 3.0);
        assert!(pair_features(p, Vec3::new(0.0, 0.0, 1.0), p, Vec3::new(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn parallel_normal_uses_fallback_frame() {
        // displacement along n1
        let a = pair_features(
            Vec3::<f64>::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(a.alpha.is_finite() && a.theta.is_finite());
        assert!((a.phi - 1.0).abs() < 1e-12);
    }

    struct Fixture {
        cloud: PointCloud<f64>,
        frames: Vec<LocalFrame<f64>>,
        tree: Octree<f64>,
    }

    fn fixture(points: Vec<Vec3<f64>>, r: f64) -> Fixture {
        let cloud = PointCloud::from_positions(points);
        let tree = Octree::with_defaults(&cloud.positions).unwrap();
        let frames = estimate_frames(&cloud, &tree, r).unwrap();
        Fixture { cloud, frames, tree }
    }

    fn random_surface(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y: f64 = rng.gen_range(-1.0..1.0);
                Vec3::new(x, y, 0.3 * (2.0 * x).sin() * (3.0 * y).cos())
            })
            .collect()
    }

    #[test]
    fn plane_mass_in_center_bins() {
        // brute-force enumeration on a 10-point plane: every pair gives
        // alpha=0, theta=0, so mass stays in the center alpha/theta bins
        let pts: Vec<Vec3<f64>> = (0..10)
            .map(|i| Vec3::new((i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1, 0.0))
            .collect();
        let f = fixture(pts, 0.6);
        let d = adapted_pfh(&f.cloud, &f.frames, &f.tree, 0, 0.6);
        let mut mass_center = 0.0;
        for (slot, v) in d.values.iter().enumerate() {
            let (ba, bt) = (slot / 25, slot % 5);
            if ba == 2 && bt == 2 {
                mass_center += v;
            } else {
                assert!(*v < 1e-12, "unexpected mass in bin {slot}");
            }
        }
        assert!((mass_center - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histograms_are_normalized_and_rotation_invariant() {
        let pts = random_surface(400, 11);
        let rot = Mat3::rotation_axis_angle(Vec3::new(0.2, 0.9, -0.3), 2.1);
        let rotated: Vec<Vec3<f64>> = pts.iter().map(|p| rot.mul_vec(*p)).collect();
        let fa = fixture(pts, 0.25);
        let fb = fixture(rotated, 0.25);
        for kind in [
            DescriptorKind::AdaptedPfh,
            DescriptorKind::OriginalPfh,
            DescriptorKind::Fpfh,
        ] {
            let (da, _) = compute_descriptors(kind, &fa.cloud, &fa.frames, &fa.tree, 0.25).unwrap();
            let (db, _) = compute_descriptors(kind, &fb.cloud, &fb.frames, &fb.tree, 0.25).unwrap();
            for (a, b) in da.iter().zip(&db) {
                let sum: f64 = a.values.iter().sum();
                assert!(a.is_isolated() || (sum - 1.0).abs() < 1e-9);
                assert!(a.values.iter().all(|v| *v >= 0.0));
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!((x - y).abs() < 1e-9, "kind {kind:?}");
                }
            }
        }
    }

    #[test]
    fn adapted_scale_invariant_original_not() {
        let pts = random_surface(300, 13);
        let scaled: Vec<Vec3<f64>> = pts.iter().map(|p| *p * 2.0).collect();
        let r = 0.3;
        let fa = fixture(pts, r);
        let fs = fixture(scaled, 2.0 * r);
        let mut original_diff: f64 = 0.0;
        for q in 0..fa.cloud.len() {
            let a1 = adapted_pfh(&fa.cloud, &fa.frames, &fa.tree, q, r);
            let a2 = adapted_pfh(&fs.cloud, &fs.frames, &fs.tree, q, 2.0 * r);
            for (x, y) in a1.values.iter().zip(&a2.values) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        // original PFH with the radius held fixed sees a different histogram
        let ff = fixture(fs.cloud.positions.clone(), r);
        for q in 0..40 {
            let o1 = original_pfh(&fa.cloud, &fa.frames, &fa.tree, q, r);
            let o2 = original_pfh(&ff.cloud, &ff.frames, &ff.tree, q, r);
            for (x, y) in o1.values.iter().zip(&o2.values) {
                original_diff = original_diff.max((x - y).abs());
            }
        }
        assert!(original_diff >= 1e-3, "max original diff {original_diff}");
    }

    #[test]
    fn original_pfh_distance_bin_edge() {
        // single neighbor at distance exactly r: d/2r = 0.5 -> bin 2 of 5
        let pts = vec![Vec3::<f64>::zero(), Vec3::new(1.0, 0.0, 0.0)];
        let cloud = PointCloud::from_positions(pts);
        let tree = Octree::with_defaults(&cloud.positions).unwrap();
        let mk = |n: Vec3<f64>| LocalFrame {
            normal: n,
            curvature: 0.0,
            neighbor_count: 2,
            degenerate: false,
        };
        let frames = vec![mk(Vec3::new(0.0, 0.0, 1.0)); 2];
        let d = original_pfh(&cloud, &frames, &tree, 0, 1.0);
        let hot: Vec<usize> = d
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hot.len(), 1);
        assert_eq!(hot[0] % 5, 2, "distance bin index");
    }

    #[test]
    fn pair_count_complexity_contract() {
        // isolated clusters of k+1 points: each point has exactly k neighbors
        for k in [8usize, 16, 32] {
            let mut pts = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let clusters = 6;
            for c in 0..clusters {
                let base = Vec3::new(c as f64 * 100.0, 0.0, 0.0);
                for _ in 0..(k + 1) {
                    pts.push(
                        base + Vec3::new(
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                        ),
                    );
                }
            }
            let f = fixture(pts, 1.0);
            let n = f.cloud.len() as u64;
            let (_, pfh_stats) = compute_descriptors(
                DescriptorKind::AdaptedPfh,
                &f.cloud,
                &f.frames,
                &f.tree,
                1.0,
            )
            .unwrap();
            let expected_pfh = n * (k as u64 + 1) * k as u64 / 2;
            assert_eq!(pfh_stats.pair_evaluations, expected_pfh);
            let (_, fpfh_stats) =
                compute_descriptors(DescriptorKind::Fpfh, &f.cloud, &f.frames, &f.tree, 1.0)
                    .unwrap();
            assert_eq!(fpfh_stats.pair_evaluations, n * k as u64);
        }
    }

    #[test]
    fn fpfh_plane_mass_concentrates() {
        let pts: Vec<Vec3<f64>> = (0..100)
            .map(|i| Vec3::new((i % 10) as f64 * 0.05, (i / 10) as f64 * 0.05, 0.0))
            .collect();
        let f = fixture(pts, 0.2);
        let d = fpfh(&f.cloud, &f.frames, &f.tree, 44, 0.2);
        // alpha and theta center bins carry all their feature's mass
        let alpha_center = d.values[5];
        let theta_center = d.values[22 + 5];
        let alpha_total: f64 = d.values[..11].iter().sum();
        let theta_total: f64 = d.values[22..].iter().sum();
        assert!((alpha_center - alpha_total).abs() < 1e-12);
        assert!((theta_center - theta_total).abs() < 1e-12);
    }

    #[test]
    fn isolated_point_gets_zero_descriptor() {
        let pts = vec![
            Vec3::<f64>::zero(),
            Vec3::new(100.0, 0.0, 0.0),
            Vec3::new(100.1, 0.0, 0.0),
            Vec3::new(100.0, 0.1, 0.0),
            Vec3::new(100.0, 0.0, 0.1),
        ];
        let cloud = PointCloud::from_positions(pts);
        let tree = Octree::with_defaults(&cloud.positions).unwrap();
        let mk = LocalFrame {
            normal: Vec3::new(0.0, 0.0, 1.0),
            curvature: 0.0,
            neighbor_count: 3,
            degenerate: false,
        };
        let frames = vec![mk; 5];
        let d = adapted_pfh(&cloud, &frames, &tree, 0, 0.5);
        assert!(d.is_isolated());
    }

    #[test]
    fn region_descriptor_mixing() {
        let one_hot = |kind, dim: usize, slot: usize| {
            let mut values = vec![0.0f64; dim];
            values[slot] = 1.0;
            Descriptor { kind, values }
        };
        let a = one_hot(DescriptorKind::AdaptedPfh, 125, 3);
        let b = one_hot(DescriptorKind::AdaptedPfh, 125, 7);
        let mixed = region_descriptor(&[a.clone(), b], &[0, 1]).unwrap();
        assert!((mixed.values[3] - 0.5).abs() < 1e-12);
        assert!((mixed.values[7] - 0.5).abs() < 1e-12);
        let single = region_descriptor(&[a.clone()], &[0]).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn cosine_properties() {
        let one_hot = |slot: usize| {
            let mut values = vec![0.0f64; 4];
            values[slot] = 1.0;
            Descriptor {
                kind: DescriptorKind::External,
                values,
            }
        };
        let a = one_hot(0);
        assert!((descriptor_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(descriptor_cosine(&a, &one_hot(2)).unwrap().abs() < 1e-12);
        let zero = Descriptor {
            kind: DescriptorKind::External,
            values: vec![0.0f64; 4],
        };
        assert_eq!(descriptor_cosine(&zero, &zero).unwrap(), 0.0);
        let mismatched = Descriptor {
            kind: DescriptorKind::External,
            values: vec![0.0f64; 3],
        };
        assert!(descriptor_cosine(&a, &mismatched).is_err());
    }

    #[test]
    fn external_embeddings_roundtrip_and_shape_check() {
        let path = std::env::temp_dir().join("cloudmerge-ext-embed.mat");
        let m = Matrix::new(3, 4, (0..12).map(|i| i as f32).collect()).unwrap();
        write_matrix(&m, &path).unwrap();
        let descs: Vec<Descriptor<f64>> = load_external_embeddings(&path, 3).unwrap();
        assert_eq!(descs.len(), 3);
        assert_eq!(descs[0].dim(), 4);
        assert_eq!(descs[0].kind, DescriptorKind::External);
        assert!(load_external_embeddings::<f64>(&path, 5).is_err());
    }
}
