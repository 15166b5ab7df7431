//! Iterative region merging and pseudo-label propagation with a pluggable
//! region-level predictor.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cloud::PointCloud;
use crate::config::SceneConfig;
use crate::descriptor::descriptor_cosine;
use crate::error::{Error, Result};
use crate::mat::read_matrix;
use crate::octree::Octree;
use crate::overseg::{LabelState, Partition, Region};
use crate::scalar::{Scalar, Vec3};

#[derive(Debug, Clone)]
pub struct PredictionMatrix<S: Scalar = f64> {
    /// One probability row per live region, partition order.
    pub rows: Vec<Vec<S>>,
    pub num_classes: usize,
}

impl<S: Scalar> PredictionMatrix<S> {
    pub fn validate(&self, expected_rows: usize) -> Result<()> {
        if self.rows.len() != expected_rows {
            return Err(Error::Shape(format!(
                "prediction matrix has {} rows, partition has {expected_rows} regions",
                self.rows.len()
            )));
        }
        let tol = S::from_f64_lossy(1e-6);
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.num_classes {
                return Err(Error::Shape(format!(
                    "prediction row {i} has {} entries, expected {}",
                    row.len(),
                    self.num_classes
                )));
            }
            let mut sum = S::zero();
            for &p in row {
                if p < S::zero() {
                    return Err(Error::Shape(format!("negative probability in row {i}")));
                }
                sum += p;
            }
            if (sum - S::one()).abs() > tol {
                return Err(Error::Shape(format!(
                    "prediction row {i} sums to {}",
                    sum.to_f64_lossy()
                )));
            }
        }
        Ok(())
    }
}

fn row_confidence<S: Scalar>(row: &[S]) -> S {
    row.iter().cloned().fold(S::zero(), |a, b| if b > a { b } else { a })
}

/// Region-level class predictor. Stands in for a trained network; must be
/// deterministic for fixed inputs.
pub trait RegionPredictor<S: Scalar> {
    fn predict(
        &mut self,
        cloud: &PointCloud<S>,
        partition: &Partition<S>,
        iteration: usize,
    ) -> Result<PredictionMatrix<S>>;
}

#[derive(Debug, Clone)]
pub struct MergeState<S: Scalar = f64> {
    pub partition: Partition<S>,
    /// Permanently labeled regions; their class never changes and they act
    /// as propagation seeds.
    pub frozen: Vec<bool>,
}

impl<S: Scalar> MergeState<S> {
    /// Weak-labeled regions start frozen (trusted seeds).
    pub fn new(partition: Partition<S>) -> Self {
        let frozen = partition
            .regions
            .iter()
            .map(|r| matches!(r.label_state, LabelState::Weak(_)))
            .collect();
        Self { partition, frozen }
    }

    pub fn num_regions(&self) -> usize {
        self.partition.regions.len()
    }

    /// Rebuilds contiguous region ids after fusions/filtering. `keep[i]`
    /// false drops region i; `redirect[i] = Some(j)` moves its points to j.
    fn compact(&mut self, keep: &[bool], redirect: &[Option<usize>]) {
        let mut new_id = vec![usize::MAX; self.partition.regions.len()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_id[i] = next;
                next += 1;
            }
        }
        let resolve = |mut i: usize| -> Option<usize> {
            while let Some(j) = redirect[i] {
                i = j;
            }
            if keep[i] {
                Some(new_id[i])
            } else {
                None
            }
        };
        for slot in self.partition.point_region.iter_mut() {
            if let Some(old) = *slot {
                *slot = resolve(old);
            }
        }
        let old_regions = std::mem::take(&mut self.partition.regions);
        let old_frozen = std::mem::take(&mut self.frozen);
        for (i, mut region) in old_regions.into_iter().enumerate() {
            if keep[i] {
                region.id = new_id[i];
                self.partition.regions.push(region);
                self.frozen.push(old_frozen[i]);
            }
        }
    }
}

/// Weight-balanced similarity of two regions at iteration m of n_total:
/// geometric terms (color, scale, descriptor) carry weight 1 - m/n_total
/// each, the semantic term carries m/n_total. All four terms lie in [0,1].
pub fn similarity_score<S: Scalar>(
    region_i: &Region<S>,
    region_j: &Region<S>,
    row_i: &[S],
    row_j: &[S],
    m: usize,
    n_total: usize,
    lambda_seg: S,
) -> S {
    let agg_i = region_i.aggregate();
    let agg_j = region_j.aggregate();
    let m_des = {
        let c = descriptor_cosine(&region_i.descriptor(), &region_j.descriptor())
            .unwrap_or(S::zero());
        if c > S::zero() {
            c
        } else {
            S::zero()
        }
    };
    // Colorless clouds substitute the descriptor term so the geometric
    // weight mass is preserved.
    let m_color = match (agg_i.mean_color, agg_j.mean_color) {
        (Some(a), Some(b)) => {
            let d = (a - b).norm() / S::from_f64_lossy(3.0f64.sqrt());
            (S::one() - d).max(S::zero())
        }
        _ => m_des,
    };
    let m_scale = if agg_i.scale == S::zero() && agg_j.scale == S::zero() {
        S::one()
    } else {
        let (lo, hi) = if agg_i.scale < agg_j.scale {
            (agg_i.scale, agg_j.scale)
        } else {
            (agg_j.scale, agg_i.scale)
        };
        lo / hi
    };
    let y_seg = S::from_f64_lossy(m as f64 / n_total.max(1) as f64);
    let y_geo = S::one() - y_seg;
    // Semantic term: exponential kernel over prediction-row distance. At
    // m = 0 its weight is exactly zero, so it is skipped entirely.
    let m_seg = if y_seg > S::zero() {
        let d2: S = row_i
            .iter()
            .zip(row_j)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum();
        (-lambda_seg * d2).exp()
    } else {
        S::zero()
    };
    y_geo * (m_color + m_scale + m_des) + y_seg * m_seg
}

/// Gap between two axis-aligned boxes (0 when they overlap).
fn aabb_gap<S: Scalar>(a: (Vec3<S>, Vec3<S>), b: (Vec3<S>, Vec3<S>)) -> S {
    let mut gap2 = S::zero();
    for axis in 0..3 {
        let d = (b.0.component(axis) - a.1.component(axis))
            .max(a.0.component(axis) - b.1.component(axis))
            .max(S::zero());
        gap2 += d * d;
    }
    gap2.sqrt()
}

/// One merge sweep at iteration `m`. Every labeled region evaluates its
/// `knn` nearest adjacent regions by centroid distance — adjacency means the
/// regions' bounding boxes come within the neighborhood radius, so spatially
/// separated look-alikes never merge: a neighbor receives the
/// source's class when the score clears `t_merge` and both confidences clear
/// `gamma`; at `t_seed` it additionally fuses into the source, inheriting its
/// frozen status. Frozen regions never change their own label or get
/// absorbed. Fused prediction rows are re-pooled by member-weighted average.
pub fn merge_step<S: Scalar>(
    state: &mut MergeState<S>,
    pred: &PredictionMatrix<S>,
    m: usize,
    cfg: &SceneConfig<S>,
) -> Result<()> {
    let nr = state.num_regions();
    pred.validate(nr)?;
    let mut rows = pred.rows.clone();
    let mut keep = vec![true; nr];
    let mut redirect: Vec<Option<usize>> = vec![None; nr];
    let gamma = cfg.gamma;

    for i in 0..nr {
        if !keep[i] {
            continue;
        }
        let Some(class_i) = state.partition.regions[i].label_state.class() else {
            continue;
        };
        let ci = state.partition.regions[i].aggregate().centroid;
        let bounds_i = state.partition.regions[i].bounds();
        let mut neighbors: Vec<(S, usize)> = (0..nr)
            .filter(|&j| {
                j != i
                    && keep[j]
                    && aabb_gap(bounds_i, state.partition.regions[j].bounds()) <= cfg.radius
            })
            .map(|j| {
                (
                    ci.distance(state.partition.regions[j].aggregate().centroid),
                    j,
                )
            })
            .collect();
        neighbors.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        neighbors.truncate(cfg.knn);

        for (_, j) in neighbors {
            if !keep[j] || state.frozen[j] {
                continue;
            }
            let score = similarity_score(
                &state.partition.regions[i],
                &state.partition.regions[j],
                &rows[i],
                &rows[j],
                m,
                cfg.n_total,
                cfg.lambda_seg,
            );
            let conf_i = row_confidence(&rows[i]);
            let conf_j = row_confidence(&rows[j]);
            if score < cfg.t_merge || conf_i < gamma || conf_j < gamma {
                continue;
            }
            state.partition.regions[j].label_state = LabelState::Pseudo {
                class: class_i,
                confidence: conf_j,
            };
            if score >= cfg.t_seed {
                let wi = S::from_f64_lossy(state.partition.regions[i].len() as f64);
                let wj = S::from_f64_lossy(state.partition.regions[j].len() as f64);
                let inv = S::one() / (wi + wj);
                let pooled: Vec<S> = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (*a * wi + *b * wj) * inv)
                    .collect();
                rows[i] = pooled;
                let absorbed = state.partition.regions[j].clone();
                state.partition.regions[i].absorb(&absorbed);
                keep[j] = false;
                redirect[j] = Some(i);
            }
        }
    }
    state.compact(&keep, &redirect);
    Ok(())
}

/// Drops regions below the size floor; their points become unassigned and
/// unlabeled.
pub fn filter_small_regions<S: Scalar>(state: &mut MergeState<S>, n_ths: usize) {
    let nr = state.num_regions();
    let mut keep = vec![true; nr];
    for (i, region) in state.partition.regions.iter().enumerate() {
        if region.len() < n_ths {
            keep[i] = false;
        }
    }
    let redirect = vec![None; nr];
    state.compact(&keep, &redirect);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub labeled_fraction: f64,
    /// Correct / labeled, NaN without ground truth.
    pub pseudo_precision: f64,
    /// Correct / total points, NaN without ground truth.
    pub pseudo_recall: f64,
}

fn trace_row<S: Scalar>(cloud: &PointCloud<S>, partition: &Partition<S>, iter: usize) -> TraceRow {
    let labels = partition.point_labels();
    let n = labels.len();
    let labeled = labels.iter().filter(|&&c| c >= 0).count();
    let (precision, recall) = match &cloud.gt_labels {
        Some(gt) => {
            let correct = labels
                .iter()
                .zip(gt)
                .filter(|(&p, &g)| p >= 0 && p == g)
                .count();
            (
                if labeled == 0 {
                    0.0
                } else {
                    correct as f64 / labeled as f64
                },
                correct as f64 / n.max(1) as f64,
            )
        }
        None => (f64::NAN, f64::NAN),
    };
    TraceRow {
        iter,
        labeled_fraction: labeled as f64 / n.max(1) as f64,
        pseudo_precision: precision,
        pseudo_recall: recall,
    }
}

/// Runs the two-step self-training loop for `n_total` iterations: predict,
/// merge, trace. Returns the final state plus one trace row per iteration.
pub fn self_train<S: Scalar>(
    cloud: &PointCloud<S>,
    partition: Partition<S>,
    predictor: &mut dyn RegionPredictor<S>,
    cfg: &SceneConfig<S>,
) -> Result<(MergeState<S>, Vec<TraceRow>)> {
    cfg.validate()?;
    let mut state = MergeState::new(partition);
    filter_small_regions(&mut state, cfg.n_ths);
    let mut trace = Vec::with_capacity(cfg.n_total);
    for m in 1..=cfg.n_total {
        let pred = predictor.predict(cloud, &state.partition, m)?;
        merge_step(&mut state, &pred, m, cfg)?;
        trace.push(trace_row(cloud, &state.partition, m));
    }
    Ok((state, trace))
}

pub fn write_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::from("iter,labeled_fraction,pseudo_precision,pseudo_recall\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.iter, row.labeled_fraction, row.pseudo_precision, row.pseudo_recall
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One-hot rows from the region's majority ground-truth class. Calibration
/// and testing only.
pub struct OraclePredictor;

impl<S: Scalar> RegionPredictor<S> for OraclePredictor {
    fn predict(
        &mut self,
        cloud: &PointCloud<S>,
        partition: &Partition<S>,
        _iteration: usize,
    ) -> Result<PredictionMatrix<S>> {
        let gt = cloud
            .gt_labels
            .as_ref()
            .ok_or(Error::MissingChannel("ground-truth labels"))?;
        let num_classes = cloud.num_gt_classes().max(2);
        let rows = partition
            .regions
            .iter()
            .map(|region| {
                let mut counts = vec![0usize; num_classes];
                for &p in &region.members {
                    if let Ok(c) = usize::try_from(gt[p]) {
                        counts[c] += 1;
                    }
                }
                let mut row = vec![S::zero(); num_classes];
                match counts.iter().enumerate().max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i))) {
                    Some((best, &c)) if c > 0 => row[best] = S::one(),
                    _ => {
                        let u = S::one() / S::from_f64_lossy(num_classes as f64);
                        row.iter_mut().for_each(|v| *v = u);
                    }
                }
                row
            })
            .collect();
        Ok(PredictionMatrix { rows, num_classes })
    }
}

/// Constant uniform rows: the confidence gate blocks every propagation.
pub struct UniformPredictor {
    pub num_classes: usize,
}

impl<S: Scalar> RegionPredictor<S> for UniformPredictor {
    fn predict(
        &mut self,
        _cloud: &PointCloud<S>,
        partition: &Partition<S>,
        _iteration: usize,
    ) -> Result<PredictionMatrix<S>> {
        let u = S::one() / S::from_f64_lossy(self.num_classes as f64);
        Ok(PredictionMatrix {
            rows: vec![vec![u; self.num_classes]; partition.regions.len()],
            num_classes: self.num_classes,
        })
    }
}

/// Descriptor-similarity heuristic: the score of class c for a region is the
/// best (descriptor cosine x spatial kernel) against any labeled region of
/// class c, sharpened through a softmax. A stand-in, not a trained model.
pub struct BuiltinPredictor<S: Scalar> {
    pub num_classes: usize,
    pub sharpness: S,
}

impl<S: Scalar> BuiltinPredictor<S> {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            sharpness: S::from_f64_lossy(10.0),
        }
    }
}

impl<S: Scalar> RegionPredictor<S> for BuiltinPredictor<S> {
    fn predict(
        &mut self,
        _cloud: &PointCloud<S>,
        partition: &Partition<S>,
        _iteration: usize,
    ) -> Result<PredictionMatrix<S>> {
        let labeled: Vec<(usize, i32)> = partition
            .regions
            .iter()
            .filter_map(|r| r.label_state.class().map(|c| (r.id, c)))
            .collect();
        let uniform = || {
            vec![S::one() / S::from_f64_lossy(self.num_classes as f64); self.num_classes]
        };
        let rows = partition
            .regions
            .iter()
            .map(|region| {
                if labeled.is_empty() {
                    return uniform();
                }
                let desc = region.descriptor();
                let centroid = region.aggregate().centroid;
                let mut scores = vec![S::zero(); self.num_classes];
                for &(lid, class) in &labeled {
                    let Ok(c) = usize::try_from(class) else {
                        continue;
                    };
                    if c >= self.num_classes {
                        continue;
                    }
                    let other = &partition.regions[lid];
                    let cos = descriptor_cosine(&desc, &other.descriptor())
                        .unwrap_or(S::zero())
                        .max(S::zero());
                    let d2 = (centroid - other.aggregate().centroid).norm_squared();
                    let s = cos * (-d2).exp();
                    if s > scores[c] {
                        scores[c] = s;
                    }
                }
                // softmax over sharpened scores
                let peak = scores.iter().cloned().fold(S::zero(), S::max);
                let exps: Vec<S> = scores
                    .iter()
                    .map(|&s| ((s - peak) * self.sharpness).exp())
                    .collect();
                let total: S = exps.iter().cloned().sum();
                exps.into_iter().map(|e| e / total).collect()
            })
            .collect();
        Ok(PredictionMatrix {
            rows,
            num_classes: self.num_classes,
        })
    }
}

/// Reads one binary matrix per iteration from `dir/pred_iter_<m>.mat`,
/// letting an externally trained model drive the loop.
pub struct FilePredictor {
    pub dir: PathBuf,
}

impl<S: Scalar> RegionPredictor<S> for FilePredictor {
    fn predict(
        &mut self,
        _cloud: &PointCloud<S>,
        _partition: &Partition<S>,
        iteration: usize,
    ) -> Result<PredictionMatrix<S>> {
        let path = self.dir.join(format!("pred_iter_{iteration}.mat"));
        let m = read_matrix(&path)?;
        let rows = (0..m.rows)
            .map(|r| m.row(r).iter().map(|&v| S::from_f64_lossy(v as f64)).collect())
            .collect();
        Ok(PredictionMatrix {
            rows,
            num_classes: m.cols,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBox<S: Scalar = f64> {
    pub class_id: i32,
    pub min: Vec3<S>,
    pub max: Vec3<S>,
    pub member_count: usize,
}

/// Axis-aligned boxes over maximal groups of same-class labeled regions
/// connected through point pairs within `radius`. Unlabeled regions are
/// skipped.
pub fn extract_instances<S: Scalar>(
    state: &MergeState<S>,
    cloud: &PointCloud<S>,
    radius: S,
) -> Result<Vec<InstanceBox<S>>> {
    let nr = state.num_regions();
    let mut parent: Vec<usize> = (0..nr).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let tree = Octree::with_defaults(&cloud.positions)?;
    for p in 0..cloud.len() {
        let Some(ri) = state.partition.point_region[p] else {
            continue;
        };
        let Some(class_i) = state.partition.regions[ri].label_state.class() else {
            continue;
        };
        for q in tree.radius_query(cloud.positions[p], radius) {
            let Some(rj) = state.partition.point_region[q] else {
                continue;
            };
            if rj == ri {
                continue;
            }
            if state.partition.regions[rj].label_state.class() == Some(class_i) {
                let (a, b) = (find(&mut parent, ri), find(&mut parent, rj));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    let mut groups: std::collections::BTreeMap<usize, (i32, Vec3<S>, Vec3<S>, usize)> =
        Default::default();
    for (rid, region) in state.partition.regions.iter().enumerate() {
        let Some(class) = region.label_state.class() else {
            continue;
        };
        if region.is_empty() {
            continue;
        }
        let root = find(&mut parent, rid);
        let mut lo = cloud.positions[region.members[0]];
        let mut hi = lo;
        for &m in &region.members {
            lo = lo.min_componentwise(cloud.positions[m]);
            hi = hi.max_componentwise(cloud.positions[m]);
        }
        groups
            .entry(root)
            .and_modify(|(_, glo, ghi, count)| {
                *glo = glo.min_componentwise(lo);
                *ghi = ghi.max_componentwise(hi);
                *count += region.len();
            })
            .or_insert((class, lo, hi, region.len()));
    }
    Ok(groups
        .into_values()
        .map(|(class_id, min, max, member_count)| InstanceBox {
            class_id,
            min,
            max,
            member_count,
        })
        .collect())
}

pub fn save_instance_boxes<S: Scalar>(boxes: &[InstanceBox<S>], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "class xmin ymin zmin xmax ymax zmax").map_err(|e| Error::io(path, e))?;
    for b in boxes {
        writeln!(
            file,
            "{} {} {} {} {} {} {}",
            b.class_id,
            b.min.x.to_f64_lossy(),
            b.min.y.to_f64_lossy(),
            b.min.z.to_f64_lossy(),
            b.max.x.to_f64_lossy(),
            b.max.y.to_f64_lossy(),
            b.max.z.to_f64_lossy()
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
