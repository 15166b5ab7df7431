//! Pipeline configuration shared by oversegmentation and region merging.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// All tunables of the pipeline. Defaults follow the values used throughout
/// the experiments; the seed fraction is 2 per mille of the points.
#[derive(Debug, Clone)]
pub struct SceneConfig<S: Scalar = f64> {
    /// Neighborhood radius in meters.
    pub radius: S,
    /// Region-level KNN fan-out per sweep.
    pub knn: usize,
    /// Merge angle threshold in degrees, in (0, 90).
    pub theta_th_deg: S,
    /// Curvature-difference threshold for seeding (Condition 2).
    pub zeta: S,
    /// Confidence gate for pseudo-label propagation.
    pub gamma: S,
    /// Similarity threshold for label propagation (Condition 3).
    pub t_merge: S,
    /// Similarity threshold for freezing/seeding (Condition 4).
    pub t_seed: S,
    pub lambda_n: S,
    pub lambda_des: S,
    /// Kernel width of the semantic similarity term.
    pub lambda_seg: S,
    /// Regions smaller than this are dropped from merging and output.
    pub n_ths: usize,
    /// Self-training iterations.
    pub n_total: usize,
    /// Fraction of lowest-curvature points promoted to seeds.
    pub seed_fraction: f64,
    pub rng_seed: u64,
}

impl<S: Scalar> Default for SceneConfig<S> {
    fn default() -> Self {
        let s = S::from_f64_lossy;
        Self {
            radius: s(0.1),
            knn: 8,
            theta_th_deg: s(60.0),
            zeta: s(0.05),
            gamma: s(0.75),
            t_merge: s(1.25),
            t_seed: s(1.5),
            lambda_n: S::one(),
            lambda_des: S::one(),
            lambda_seg: S::one(),
            n_ths: 0,
            n_total: 8,
            seed_fraction: 0.002,
            rng_seed: 0,
        }
    }
}

impl<S: Scalar> SceneConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.radius <= S::zero() {
            return bad("radius must be positive");
        }
        if !(self.gamma > S::zero() && self.gamma < S::one()) {
            return bad("gamma must lie in (0,1)");
        }
        if self.t_seed < self.t_merge {
            return bad("t_seed must be >= t_merge");
        }
        let ninety = S::from_f64_lossy(90.0);
        if !(self.theta_th_deg > S::zero() && self.theta_th_deg < ninety) {
            return bad("theta_th must lie in (0, 90) degrees");
        }
        if self.knn == 0 {
            return bad("knn must be positive");
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return bad("seed_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// cos(theta_th).
    pub fn cos_theta(&self) -> S {
        (self.theta_th_deg * S::from_f64_lossy(std::f64::consts::PI / 180.0)).cos()
    }

    /// Affinity gate for Condition 1: both components at the angle threshold,
    /// i.e. sqrt(lambda_n + lambda_des) * cos(theta_th).
    pub fn affinity_threshold(&self) -> S {
        (self.lambda_n + self.lambda_des).sqrt() * self.cos_theta()
    }
}
