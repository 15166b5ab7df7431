//! Seeded region growing: affinity-gated expansion from weak-labeled and
//! low-curvature seeds, yielding the initial partition and pseudo labels.

use std::collections::HashMap;

use crate::cloud::{PointCloud, WeakLabelSet};
use crate::config::SceneConfig;
use crate::descriptor::{descriptor_cosine, Descriptor, DescriptorKind};
use crate::error::{Error, Result};
use crate::geometry::{LocalFrame, RegionAggregate};
use crate::octree::Octree;
use crate::scalar::{Scalar, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelState<S: Scalar = f64> {
    Unlabeled,
    /// Derived directly from weak supervision; fully trusted.
    Weak(i32),
    Pseudo { class: i32, confidence: S },
}

impl<S: Scalar> LabelState<S> {
    pub fn class(&self) -> Option<i32> {
        match self {
            LabelState::Unlabeled => None,
            LabelState::Weak(c) => Some(*c),
            LabelState::Pseudo { class, .. } => Some(*class),
        }
    }

    pub fn confidence(&self) -> S {
        match self {
            LabelState::Unlabeled => S::zero(),
            LabelState::Weak(_) => S::one(),
            LabelState::Pseudo { confidence, .. } => *confidence,
        }
    }
}

/// A region with incrementally maintained aggregates. The derived values
/// match `region_aggregate`/`region_descriptor` over the member list.
#[derive(Debug, Clone)]
pub struct Region<S: Scalar = f64> {
    pub id: usize,
    pub members: Vec<usize>,
    pub label_state: LabelState<S>,
    pub is_seed: bool,
    normal_sum: Vec3<S>,
    curvature_sum: S,
    live_frames: usize,
    centroid_sum: Vec3<S>,
    color_sum: Option<Vec3<S>>,
    lo: Vec3<S>,
    hi: Vec3<S>,
    desc_kind: DescriptorKind,
    desc_sum: Vec<S>,
}

impl<S: Scalar> Region<S> {
    pub fn singleton(
        cloud: &PointCloud<S>,
        frames: &[LocalFrame<S>],
        descriptors: &[Descriptor<S>],
        point: usize,
        id: usize,
    ) -> Self {
        let mut region = Region {
            id,
            members: Vec::new(),
            label_state: LabelState::Unlabeled,
            is_seed: false,
            normal_sum: Vec3::zero(),
            curvature_sum: S::zero(),
            live_frames: 0,
            centroid_sum: Vec3::zero(),
            color_sum: cloud.colors.as_ref().map(|_| Vec3::zero()),
            lo: cloud.positions[point],
            hi: cloud.positions[point],
            desc_kind: descriptors[point].kind,
            desc_sum: vec![S::zero(); descriptors[point].dim()],
        };
        region.add_point(cloud, frames, descriptors, point);
        region
    }

    pub fn add_point(
        &mut self,
        cloud: &PointCloud<S>,
        frames: &[LocalFrame<S>],
        descriptors: &[Descriptor<S>],
        point: usize,
    ) {
        let p = cloud.positions[point];
        self.members.push(point);
        self.centroid_sum += p;
        self.lo = self.lo.min_componentwise(p);
        self.hi = self.hi.max_componentwise(p);
        if let (Some(colors), Some(acc)) = (&cloud.colors, self.color_sum.as_mut()) {
            *acc += colors[point];
        }
        if !frames[point].degenerate {
            self.normal_sum += frames[point].normal;
            self.curvature_sum += frames[point].curvature;
            self.live_frames += 1;
        }
        for (slot, v) in self.desc_sum.iter_mut().zip(&descriptors[point].values) {
            *slot += *v;
        }
    }

    /// Fuses another region's members and sums into this one.
    pub fn absorb(&mut self, other: &Region<S>) {
        self.members.extend_from_slice(&other.members);
        self.normal_sum += other.normal_sum;
        self.curvature_sum += other.curvature_sum;
        self.live_frames += other.live_frames;
        self.centroid_sum += other.centroid_sum;
        if let (Some(acc), Some(add)) = (self.color_sum.as_mut(), other.color_sum) {
            *acc += add;
        }
        self.lo = self.lo.min_componentwise(other.lo);
        self.hi = self.hi.max_componentwise(other.hi);
        for (slot, v) in self.desc_sum.iter_mut().zip(&other.desc_sum) {
            *slot += *v;
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Axis-aligned bounds of the members.
    pub fn bounds(&self) -> (Vec3<S>, Vec3<S>) {
        (self.lo, self.hi)
    }

    pub fn aggregate(&self) -> RegionAggregate<S> {
        let inv = S::one() / S::from_f64_lossy(self.members.len() as f64);
        let (normal, curvature, degenerate) = if self.live_frames == 0 {
            (
                Vec3::new(S::zero(), S::zero(), S::one()),
                S::from_f64_lossy(1.0 / 3.0),
                true,
            )
        } else {
            let live_inv = S::one() / S::from_f64_lossy(self.live_frames as f64);
            match self.normal_sum.normalized() {
                Some(n) => (n, self.curvature_sum * live_inv, false),
                None => (
                    Vec3::new(S::zero(), S::zero(), S::one()),
                    self.curvature_sum * live_inv,
                    true,
                ),
            }
        };
        RegionAggregate {
            normal,
            curvature,
            mean_color: self.color_sum.map(|c| c * inv),
            scale: (self.hi - self.lo).norm(),
            centroid: self.centroid_sum * inv,
            degenerate,
        }
    }

    pub fn descriptor(&self) -> Descriptor<S> {
        let inv = S::one() / S::from_f64_lossy(self.members.len() as f64);
        let d = Descriptor {
            kind: self.desc_kind,
            values: self.desc_sum.iter().map(|v| *v * inv).collect(),
        };
        if self.desc_kind.is_histogram() {
            d.normalized_to_unit_sum()
        } else {
            d
        }
    }
}

#[derive(Debug, Clone)]
pub struct Partition<S: Scalar = f64> {
    pub regions: Vec<Region<S>>,
    /// point index -> region id; None only before growth completes.
    pub point_region: Vec<Option<usize>>,
}

impl<S: Scalar> Partition<S> {
    pub fn region_of(&self, point: usize) -> Option<usize> {
        self.point_region.get(point).copied().flatten()
    }

    /// Checks the partition invariants: region ids match positions, member
    /// sets are disjoint, and the point table is consistent with them.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.point_region.len()];
        for (rid, region) in self.regions.iter().enumerate() {
            if region.id != rid {
                return Err(Error::Invariant("region id out of order".into()));
            }
            for &m in &region.members {
                if m >= seen.len() || seen[m] {
                    return Err(Error::Invariant(format!(
                        "point {m} claimed by multiple regions"
                    )));
                }
                seen[m] = true;
                if self.point_region[m] != Some(rid) {
                    return Err(Error::Invariant(format!(
                        "point table disagrees with membership at {m}"
                    )));
                }
            }
        }
        for (p, assigned) in self.point_region.iter().enumerate() {
            if assigned.is_some() != seen[p] {
                return Err(Error::Invariant(format!("dangling table entry at {p}")));
            }
        }
        Ok(())
    }

    /// Per-point class labels from region label states; -1 where unlabeled.
    pub fn point_labels(&self) -> Vec<i32> {
        let mut labels = vec![-1; self.point_region.len()];
        for region in &self.regions {
            if let Some(class) = region.label_state.class() {
                for &m in &region.members {
                    labels[m] = class;
                }
            }
        }
        labels
    }
}

/// Seed indices: every weak-labeled point plus the ceil(fraction*N)
/// lowest-curvature points (curvature ties broken by index). Sorted, unique.
pub fn select_seeds<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    weak: &WeakLabelSet,
    seed_fraction: f64,
) -> Vec<usize> {
    let n = cloud.len();
    let want = (seed_fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        frames[a]
            .curvature
            .partial_cmp(&frames[b].curvature)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut seeds: Vec<usize> = order.into_iter().take(want.min(n)).collect();
    seeds.extend(weak.entries.iter().map(|(p, _)| *p));
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

fn clamped_cos<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        v
    } else {
        S::zero()
    }
}

/// Affinity between two regions: sqrt(l_n*A_n^2 + l_des*A_des^2) with both
/// cosines clamped at 0. Degenerate regions have affinity 0.
pub fn affinity<S: Scalar>(a: &Region<S>, b: &Region<S>, lambda_n: S, lambda_des: S) -> S {
    let (agg_a, agg_b) = (a.aggregate(), b.aggregate());
    if agg_a.degenerate || agg_b.degenerate {
        return S::zero();
    }
    let a_n = clamped_cos(agg_a.normal.dot(agg_b.normal));
    let a_des = clamped_cos(descriptor_cosine(&a.descriptor(), &b.descriptor()).unwrap_or(S::zero()));
    (lambda_n * a_n * a_n + lambda_des * a_des * a_des).sqrt()
}

struct PointView<'a, S: Scalar> {
    frame: &'a LocalFrame<S>,
    descriptor: &'a Descriptor<S>,
}

/// Gate for absorbing a point into a region. Requires both the composite
/// affinity above the gate and the normal cosine alone above cos(theta_th):
/// the descriptor term is orientation-invariant and cannot by itself detect
/// a crease, so the normal term must clear the angle threshold on its own.
fn passes_gate<S: Scalar>(
    region_agg: &RegionAggregate<S>,
    region_desc: &Descriptor<S>,
    point: &PointView<'_, S>,
    cfg: &SceneConfig<S>,
) -> bool {
    if region_agg.degenerate || point.frame.degenerate {
        return false;
    }
    let a_n = clamped_cos(region_agg.normal.dot(point.frame.normal));
    let a_des = clamped_cos(descriptor_cosine(region_desc, point.descriptor).unwrap_or(S::zero()));
    let a = (cfg.lambda_n * a_n * a_n + cfg.lambda_des * a_des * a_des).sqrt();
    a >= cfg.affinity_threshold() && a_n >= cfg.cos_theta()
}

/// Region growing. Each sweep, every active seed region takes its `knn`
/// nearest unassigned points within radius of its frontier; points passing
/// the affinity gate join the region and become frontier points when their
/// curvature is within `zeta` of the region's; points failing the gate start
/// new singleton seed regions. Stops when nothing changes or all points are
/// assigned; stragglers become singleton regions.
pub fn grow<S: Scalar>(
    cloud: &PointCloud<S>,
    frames: &[LocalFrame<S>],
    descriptors: &[Descriptor<S>],
    tree: &Octree<S>,
    seeds: &[usize],
    cfg: &SceneConfig<S>,
) -> Result<Partition<S>> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput("region growing without seeds"));
    }
    let n = cloud.len();
    if frames.len() != n || descriptors.len() != n {
        return Err(Error::Shape(format!(
            "frames/descriptors ({}/{}) do not match cloud size {n}",
            frames.len(),
            descriptors.len()
        )));
    }

    let mut point_region: Vec<Option<usize>> = vec![None; n];
    let mut regions: Vec<Region<S>> = Vec::new();
    let mut frontiers: Vec<Vec<usize>> = Vec::new();

    let mut seeds_sorted = seeds.to_vec();
    seeds_sorted.sort_unstable();
    seeds_sorted.dedup();
    for &s in &seeds_sorted {
        if s >= n {
            return Err(Error::Bounds(format!("seed index {s} out of range")));
        }
        if point_region[s].is_some() {
            continue;
        }
        let id = regions.len();
        let mut region = Region::singleton(cloud, frames, descriptors, s, id);
        region.is_seed = true;
        point_region[s] = Some(id);
        regions.push(region);
        frontiers.push(vec![s]);
    }

    let mut unassigned = n - regions.len();
    loop {
        let mut changed = false;
        let sweep_regions = regions.len();
        for rid in 0..sweep_regions {
            if unassigned == 0 {
                break;
            }
            if !regions[rid].is_seed || frontiers[rid].is_empty() {
                continue;
            }
            // Candidates: unassigned points near the frontier, closest first.
            // Frontier points with fully assigned neighborhoods retire.
            let mut best: HashMap<usize, S> = HashMap::new();
            let mut live_frontier = Vec::new();
            for &f in &frontiers[rid] {
                let neighbors = tree.radius_query(cloud.positions[f], cfg.radius);
                let mut found = false;
                for q in neighbors {
                    if point_region[q].is_some() {
                        continue;
                    }
                    found = true;
                    let d = cloud.positions[f].distance(cloud.positions[q]);
                    best.entry(q)
                        .and_modify(|cur| {
                            if d < *cur {
                                *cur = d;
                            }
                        })
                        .or_insert(d);
                }
                if found {
                    live_frontier.push(f);
                }
            }
            frontiers[rid] = live_frontier;
            let mut candidates: Vec<(S, usize)> = best.into_iter().map(|(q, d)| (d, q)).collect();
            candidates.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            candidates.truncate(cfg.knn);

            for (_, q) in candidates {
                if point_region[q].is_some() {
                    continue;
                }
                let agg = regions[rid].aggregate();
                let desc = regions[rid].descriptor();
                let view = PointView {
                    frame: &frames[q],
                    descriptor: &descriptors[q],
                };
                if passes_gate(&agg, &desc, &view, cfg) {
                    let frontier_ok = (frames[q].curvature - agg.curvature).abs() <= cfg.zeta;
                    regions[rid].add_point(cloud, frames, descriptors, q);
                    point_region[q] = Some(rid);
                    if frontier_ok {
                        frontiers[rid].push(q);
                    }
                } else {
                    let id = regions.len();
                    let mut fresh = Region::singleton(cloud, frames, descriptors, q, id);
                    fresh.is_seed = true;
                    point_region[q] = Some(id);
                    regions.push(fresh);
                    frontiers.push(vec![q]);
                }
                unassigned -= 1;
                changed = true;
            }
        }
        if unassigned == 0 || !changed {
            break;
        }
    }

    // Points unreachable from any seed stay singletons.
    for p in 0..n {
        if point_region[p].is_none() {
            let id = regions.len();
            point_region[p] = Some(id);
            regions.push(Region::singleton(cloud, frames, descriptors, p, id));
        }
    }
    for region in &mut regions {
        region.is_seed = false;
        region.members.sort_unstable();
    }

    Ok(Partition {
        regions,
        point_region,
    })
}

/// Spreads weak labels to whole regions by majority class; ties go to the
/// class with higher training-set frequency, then the lower class id.
pub fn initial_pseudo_labels<S: Scalar>(partition: &mut Partition<S>, weak: &WeakLabelSet) {
    let weak_of: HashMap<usize, i32> = weak.entries.iter().copied().collect();
    for region in &mut partition.regions {
        let mut counts: HashMap<i32, usize> = HashMap::new();
        for &m in &region.members {
            if let Some(&c) = weak_of.get(&m) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            region.label_state = LabelState::Unlabeled;
            continue;
        }
        let freq = |c: i32| -> usize {
            usize::try_from(c)
                .ok()
                .and_then(|i| weak.class_frequency.get(i).copied())
                .unwrap_or(0)
        };
        let best = counts
            .iter()
            .max_by(|(ca, na), (cb, nb)| {
                na.cmp(nb)
                    .then(freq(**ca).cmp(&freq(**cb)))
                    .then(cb.cmp(ca)) // lower class id wins the final tie
            })
            .map(|(c, _)| *c)
            .expect("non-empty counts");
        region.label_state = LabelState::Weak(best);
    }
}
