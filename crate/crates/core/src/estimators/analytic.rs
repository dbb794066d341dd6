//! Closed-form noise prediction for a Gaussian-mixture data distribution.
//!
//! A world describes one block of shape `(h, w, c)`; larger latents are
//! treated as a grid of independent blocks, which makes the backend
//! resolution-agnostic. For `z_t = a z_0 + s eps` with
//! `z_0 ~ N(mu_k, Sigma_k)` the marginal is `N(a mu_k, C_k)` with
//! `C_k = a^2 Sigma_k + s^2 I`, and the posterior noise mean for class `k`
//! is `s C_k^{-1} (z_t - a mu_k)`. The unconditional prediction weights the
//! per-class means by the posterior class probabilities.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Conditioning, NoiseEstimator};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, Timestep};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Row-major `d x d` matrix.
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub name: String,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureWorld {
    /// Block shape `[h, w, c]`.
    pub block: [usize; 3],
    pub components: Vec<GaussianComponent>,
    pub priors: Vec<f64>,
}

/// Per-call marginal of one component.
enum Marginal {
    Diagonal(Vec<f64>),
    Full(Cholesky<f64, Dyn>),
}

struct ComponentMarginal {
    shifted_mean: Vec<f64>,
    log_norm: f64,
    marginal: Marginal,
}

impl ComponentMarginal {
    /// Returns `C^{-1} r` and the Mahalanobis term `r^T C^{-1} r`.
    fn solve(&self, r: &[f64]) -> (Vec<f64>, f64) {
        match &self.marginal {
            Marginal::Diagonal(var) => {
                let y: Vec<f64> = r.iter().zip(var).map(|(ri, v)| ri / v).collect();
                let q = y.iter().zip(r).map(|(a, b)| a * b).sum();
                (y, q)
            }
            Marginal::Full(chol) => {
                let rv = DVector::from_column_slice(r);
                let y = chol.solve(&rv);
                let q = rv.dot(&y);
                (y.as_slice().to_vec(), q)
            }
        }
    }
}

impl GaussianMixtureWorld {
    pub fn new(block: [usize; 3], components: Vec<GaussianComponent>, priors: Vec<f64>) -> Result<Self> {
        let world = Self {
            block,
            components,
            priors,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.components.is_empty() {
            return Err(Error::InvalidRange(
                "world needs a non-empty block and components".into(),
            ));
        }
        if self.priors.len() != self.components.len() {
            return Err(Error::InvalidRange("one prior per component required".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRange(format!(
                "priors must be non-negative and sum to 1 (sum {total})"
            )));
        }
        for (k, comp) in self.components.iter().enumerate() {
            if comp.mean.len() != d {
                return Err(Error::shape(&[d], &[comp.mean.len()]));
            }
            match &comp.covariance {
                Covariance::Diagonal(v) => {
                    if v.len() != d {
                        return Err(Error::shape(&[d], &[v.len()]));
                    }
                    if v.iter().any(|&x| x.is_nan() || x <= 0.0 || !x.is_finite()) {
                        return Err(Error::SingularCovariance(k));
                    }
                }
                Covariance::Full(rows) => {
                    let m = full_matrix(rows, d)?;
                    if (&m - m.transpose()).abs().max() > 1e-12 || m.cholesky().is_none() {
                        return Err(Error::SingularCovariance(k));
                    }
                }
            }
        }
        Ok(())
    }

    /// Two classes with diagonal covariance and equal priors.
    pub fn two_class_diagonal(
        block: [usize; 3],
        names: [&str; 2],
        means: [Vec<f64>; 2],
        variances: [Vec<f64>; 2],
    ) -> Result<Self> {
        let [m0, m1] = means;
        let [v0, v1] = variances;
        Self::new(
            block,
            vec![
                GaussianComponent {
                    name: names[0].into(),
                    mean: m0,
                    covariance: Covariance::Diagonal(v0),
                },
                GaussianComponent {
                    name: names[1].into(),
                    mean: m1,
                    covariance: Covariance::Diagonal(v1),
                },
            ],
            vec![0.5, 0.5],
        )
    }

    /// Per-cell colour world used by the command-line demo: two classes of
    /// RGB latents ("warm" and "cool") in the `[-1, 1]` latent range.
    pub fn two_tone() -> Self {
        Self::two_class_diagonal(
            [1, 1, 3],
            ["warm", "cool"],
            [vec![0.6, -0.2, -0.6], vec![-0.6, -0.1, 0.6]],
            [vec![0.04; 3], vec![0.04; 3]],
        )
        .expect("built-in world is valid")
    }

    /// Number of scalar entries in one block.
    pub fn dim(&self) -> usize {
        self.block.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Draws one block from class `class`.
    pub fn sample_block(&self, class: usize, rng: &mut impl Rng) -> Vec<f64> {
        let comp = &self.components[class];
        let xi: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        match &comp.covariance {
            Covariance::Diagonal(v) => comp
                .mean
                .iter()
                .zip(v)
                .zip(&xi)
                .map(|((m, v), x)| m + v.sqrt() * x)
                .collect(),
            Covariance::Full(rows) => {
                let l = full_matrix(rows, self.dim())
                    .expect("validated")
                    .cholesky()
                    .expect("validated")
                    .l();
                let y = l * DVector::from_vec(xi);
                comp.mean.iter().zip(y.iter()).map(|(m, v)| m + v).collect()
            }
        }
    }

    /// Canvas of `rows x cols` independent blocks drawn from `class`.
    pub fn sample_canvas(&self, class: usize, rows: usize, cols: usize, rng: &mut impl Rng) -> LatentTensor {
        let [bh, bw, c] = self.block;
        let mut out = LatentTensor::zeros(rows * bh, cols * bw, c);
        for br in 0..rows {
            for bc in 0..cols {
                let block = self.sample_block(class, rng);
                self.write_block(&mut out, br, bc, &block);
            }
        }
        out
    }

    /// Canvas filled with the class mean.
    pub fn mean_canvas(&self, class: usize, height: usize, width: usize) -> Result<LatentTensor> {
        self.check_canvas(height, width)?;
        let mut out = LatentTensor::zeros(height, width, self.block[2]);
        for br in 0..height / self.block[0] {
            for bc in 0..width / self.block[1] {
                self.write_block(&mut out, br, bc, &self.components[class].mean);
            }
        }
        Ok(out)
    }

    /// Root-mean-square over blocks of the Mahalanobis distance from each
    /// block to the class mean under the class covariance.
    pub fn mahalanobis(&self, x: &LatentTensor, class: usize) -> Result<f64> {
        self.check_channels(x)?;
        self.check_canvas(x.height(), x.width())?;
        let comp = &self.components[class];
        let marginal = self.marginal(class, 1.0, 0.0)?;
        let (rows, cols) = (x.height() / self.block[0], x.width() / self.block[1]);
        let mut acc = 0.0;
        for br in 0..rows {
            for bc in 0..cols {
                let v = self.read_block(x, br, bc);
                let r: Vec<f64> = v.iter().zip(&comp.mean).map(|(a, m)| a - m).collect();
                acc += marginal.solve(&r).1;
            }
        }
        Ok((acc / (rows * cols) as f64).sqrt())
    }

    fn check_channels(&self, z: &LatentTensor) -> Result<()> {
        if z.channels() != self.block[2] {
            return Err(Error::shape(&[z.height(), z.width(), self.block[2]], &z.shape()));
        }
        Ok(())
    }

    fn check_canvas(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || !height.is_multiple_of(self.block[0]) || !width.is_multiple_of(self.block[1]) {
            return Err(Error::shape(
                &[self.block[0], self.block[1], self.block[2]],
                &[height, width, self.block[2]],
            ));
        }
        Ok(())
    }

    fn read_block(&self, z: &LatentTensor, br: usize, bc: usize) -> Vec<f64> {
        let [bh, bw, _] = self.block;
        let mut v = Vec::with_capacity(self.dim());
        for r in 0..bh {
            for c in 0..bw {
                v.extend(z.cell(br * bh + r, bc * bw + c).iter().map(|&x| x as f64));
            }
        }
        v
    }

    fn write_block(&self, z: &mut LatentTensor, br: usize, bc: usize, values: &[f64]) {
        let [bh, bw, ch] = self.block;
        let mut i = 0;
        for r in 0..bh {
            for c in 0..bw {
                for k in 0..ch {
                    z.set(br * bh + r, bc * bw + c, k, values[i] as f32);
                    i += 1;
                }
            }
        }
    }

    fn marginal(&self, class: usize, a: f64, s: f64) -> Result<ComponentMarginal> {
        let comp = &self.components[class];
        let d = self.dim();
        let s2 = s * s;
        let (marginal, logdet) = match &comp.covariance {
            Covariance::Diagonal(v) => {
                let var: Vec<f64> = v.iter().map(|x| a * a * x + s2).collect();
                let logdet = var.iter().map(|x| x.ln()).sum();
                (Marginal::Diagonal(var), logdet)
            }
            Covariance::Full(rows) => {
                let mut m = full_matrix(rows, d)? * (a * a);
                for i in 0..d {
                    m[(i, i)] += s2;
                }
                let chol = m.cholesky().ok_or(Error::SingularCovariance(class))?;
                let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                (Marginal::Full(chol), logdet)
            }
        };
        let prior = self.priors[class];
        Ok(ComponentMarginal {
            shifted_mean: comp.mean.iter().map(|m| a * m).collect(),
            log_norm: prior.ln() - 0.5 * (logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()),
            marginal,
        })
    }

    /// Exact `E[eps | z_t, cond]` at the given `alpha_bar`.
    pub fn epsilon_at(&self, alpha_bar: f64, z_t: &LatentTensor, cond: &Conditioning) -> Result<LatentTensor> {
        self.check_channels(z_t)?;
        self.check_canvas(z_t.height(), z_t.width())?;
        let a = alpha_bar.sqrt();
        let s = (1.0 - alpha_bar).max(0.0).sqrt();
        if s == 0.0 {
            return Ok(LatentTensor::zeros(z_t.height(), z_t.width(), z_t.channels()));
        }
        let classes: Vec<usize> = match cond {
            Conditioning::ClassLabel(k) if *k < self.num_classes() => vec![*k],
            Conditioning::ClassLabel(k) => {
                return Err(Error::UnknownConditioning(format!(
                    "class {k} not in world with {} classes",
                    self.num_classes()
                )))
            }
            Conditioning::Null => (0..self.num_classes()).filter(|&k| self.priors[k] > 0.0).collect(),
            Conditioning::Embedding(_) => {
                return Err(Error::UnknownConditioning(
                    "analytic worlds are conditioned on class labels".into(),
                ))
            }
        };
        let marginals = classes
            .iter()
            .map(|&k| self.marginal(k, a, s))
            .collect::<Result<Vec<_>>>()?;

        let mut out = LatentTensor::zeros(z_t.height(), z_t.width(), z_t.channels());
        let (rows, cols) = (z_t.height() / self.block[0], z_t.width() / self.block[1]);
        let d = self.dim();
        for br in 0..rows {
            for bc in 0..cols {
                let x = self.read_block(z_t, br, bc);
                let mut eps = vec![0.0; d];
                if marginals.len() == 1 {
                    let r: Vec<f64> = x.iter().zip(&marginals[0].shifted_mean).map(|(z, m)| z - m).collect();
                    let (y, _) = marginals[0].solve(&r);
                    eps.iter_mut().zip(&y).for_each(|(e, yi)| *e = s * yi);
                } else {
                    let per_class: Vec<(Vec<f64>, f64)> = marginals
                        .iter()
                        .map(|m| {
                            let r: Vec<f64> = x.iter().zip(&m.shifted_mean).map(|(z, mu)| z - mu).collect();
                            let (y, q) = m.solve(&r);
                            (y, m.log_norm - 0.5 * q)
                        })
                        .collect();
                    let max_log = per_class.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = per_class.iter().map(|p| (p.1 - max_log).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    for ((y, _), w) in per_class.iter().zip(&weights) {
                        let w = w / total;
                        eps.iter_mut().zip(y).for_each(|(e, yi)| *e += w * s * yi);
                    }
                }
                self.write_block(&mut out, br, bc, &eps);
            }
        }
        Ok(out)
    }
}

fn full_matrix(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape(
            &[d, d],
            &[rows.len(), rows.first().map_or(0, |r| r.len())],
        ));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Exact posterior mean noise at sampler index `t`.
pub fn analytic_epsilon(
    world: &GaussianMixtureWorld,
    z_t: &LatentTensor,
    t: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    world.epsilon_at(schedule.alpha_bar(t)?, z_t, cond)
}

/// [`NoiseEstimator`] backed by a [`GaussianMixtureWorld`]. It has no
/// convolutions, so re-dilation returns the estimator unchanged.
#[derive(Debug, Clone)]
pub struct AnalyticEstimator {
    world: Arc<GaussianMixtureWorld>,
}

impl AnalyticEstimator {
    pub fn new(world: GaussianMixtureWorld) -> Self {
        Self { world: Arc::new(world) }
    }

    pub fn world(&self) -> &GaussianMixtureWorld {
        &self.world
    }
}

impl NoiseEstimator for AnalyticEstimator {
    fn backend_id(&self) -> String {
        "analytic".into()
    }

    fn base_dims(&self) -> (usize, usize) {
        (self.world.block[0], self.world.block[1])
    }

    fn channels(&self) -> usize {
        self.world.block[2]
    }

    fn supports_dilation(&self) -> bool {
        true
    }

    fn accepts(&self, height: usize, width: usize) -> bool {
        self.world.check_canvas(height, width).is_ok()
    }

    fn predict(&self, z_t: &LatentTensor, t: &Timestep, cond: &Conditioning) -> Result<LatentTensor> {
        self.world.epsilon_at(t.alpha_bar, z_t, cond)
    }

    fn redilated(self: Arc<Self>, _factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
        Ok(self)
    }

    fn resolve_prompt(&self, prompt: &str) -> Result<Conditioning> {
        self.world
            .class_index(prompt)
            .map(Conditioning::ClassLabel)
            .ok_or_else(|| Error::UnknownConditioning(format!("no class named `{prompt}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, Spacing};

    fn standard_normal_world(d: usize) -> GaussianMixtureWorld {
        GaussianMixtureWorld::new(
            [1, 1, d],
            vec![GaussianComponent {
                name: "n".into(),
                mean: vec![0.0; d],
                covariance: Covariance::Diagonal(vec![1.0; d]),
            }],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_prior_gives_scaled_input() {
        let world = standard_normal_world(3);
        let z = LatentTensor::from_vec(1, 1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        for ab in [0.9, 0.5, 0.1] {
            let eps = world.epsilon_at(ab, &z, &Conditioning::Null).unwrap();
            let s = (1.0f64 - ab).sqrt();
            for (e, zv) in eps.data().iter().zip(z.data()) {
                assert!((*e as f64 - s * *zv as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_noise_limit_is_zero() {
        let world = GaussianMixtureWorld::two_tone();
        let z = LatentTensor::filled(2, 2, 3, 0.3);
        let eps = world.epsilon_at(1.0, &z, &Conditioning::ClassLabel(0)).unwrap();
        assert!(eps.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn symmetric_classes_cancel_at_origin() {
        let world = GaussianMixtureWorld::two_class_diagonal(
            [1, 1, 2],
            ["a", "b"],
            [vec![1.0, -0.5], vec![-1.0, 0.5]],
            [vec![0.3, 0.2], vec![0.3, 0.2]],
        )
        .unwrap();
        let z = LatentTensor::zeros(1, 1, 2);
        let eps = world.epsilon_at(0.4, &z, &Conditioning::Null).unwrap();
        assert!(eps.data().iter().all(|e| e.abs() < 1e-7));
    }

    #[test]
    fn single_component_unconditional_equals_conditional() {
        let world = standard_normal_world(2);
        let z = LatentTensor::from_vec(1, 1, 2, vec![0.7, -0.2]).unwrap();
        let u = world.epsilon_at(0.3, &z, &Conditioning::Null).unwrap();
        let c = world.epsilon_at(0.3, &z, &Conditioning::ClassLabel(0)).unwrap();
        assert_eq!(u, c);
    }

    #[test]
    fn full_and_diagonal_agree_on_diagonal_matrix() {
        let diag = GaussianMixtureWorld::two_class_diagonal(
            [1, 1, 2],
            ["a", "b"],
            [vec![0.5, 0.1], vec![-0.4, 0.3]],
            [vec![0.2, 0.7], vec![0.5, 0.1]],
        )
        .unwrap();
        let mut full = diag.clone();
        for comp in &mut full.components {
            if let Covariance::Diagonal(v) = &comp.covariance {
                comp.covariance = Covariance::Full(vec![vec![v[0], 0.0], vec![0.0, v[1]]]);
            }
        }
        full.validate().unwrap();
        let z = LatentTensor::from_vec(1, 1, 2, vec![0.2, -0.9]).unwrap();
        for cond in [Conditioning::Null, Conditioning::ClassLabel(1)] {
            let a = diag.epsilon_at(0.6, &z, &cond).unwrap();
            let b = full.epsilon_at(0.6, &z, &cond).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        }
    }

    #[test]
    fn invalid_worlds_rejected() {
        let bad_cov = GaussianMixtureWorld::new(
            [1, 1, 2],
            vec![GaussianComponent {
                name: "x".into(),
                mean: vec![0.0, 0.0],
                covariance: Covariance::Full(vec![vec![1.0, 2.0], vec![2.0, 1.0]]),
            }],
            vec![1.0],
        );
        assert!(matches!(bad_cov, Err(Error::SingularCovariance(0))));
        let bad_prior = GaussianMixtureWorld::two_class_diagonal(
            [1, 1, 1],
            ["a", "b"],
            [vec![0.0], vec![1.0]],
            [vec![1.0], vec![0.0]],
        );
        assert!(matches!(bad_prior, Err(Error::SingularCovariance(1))));
    }

    #[test]
    fn blocks_are_independent() {
        let world = GaussianMixtureWorld::two_tone();
        let schedule = build_schedule(1000, 10, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let z = LatentTensor::from_fn(2, 3, 3, |r, c, k| (r as f32 - c as f32) * 0.2 + k as f32 * 0.1);
        let full = analytic_epsilon(&world, &z, 5, &Conditioning::Null, &schedule).unwrap();
        let cell = LatentTensor::from_vec(1, 1, 3, z.cell(1, 2).to_vec()).unwrap();
        let single = analytic_epsilon(&world, &cell, 5, &Conditioning::Null, &schedule).unwrap();
        assert_eq!(full.cell(1, 2), single.data());
    }

    #[test]
    fn unknown_class_rejected() {
        let world = GaussianMixtureWorld::two_tone();
        let z = LatentTensor::zeros(1, 1, 3);
        assert!(matches!(
            world.epsilon_at(0.5, &z, &Conditioning::ClassLabel(2)),
            Err(Error::UnknownConditioning(_))
        ));
        let est = AnalyticEstimator::new(world);
        assert_eq!(est.resolve_prompt("cool").unwrap(), Conditioning::ClassLabel(1));
        assert!(est.resolve_prompt("lukewarm").is_err());
    }
}
