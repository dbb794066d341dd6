//! A small class-conditional convolutional noise predictor trained from
//! scratch on procedural textures.
//!
//! ```text
//! a1 = conv_in(z) + W_t phi(t) + E[c]      h1 = silu(a1)
//! a2 = conv_mid(h1)                        h2 = silu(a2) + h1
//! eps = conv_out(h2) + k * sqrt(1 - abar) * z
//! ```
//!
//! `phi(t)` holds `sqrt(abar)`, `sqrt(1 - abar)` and sinusoids of the
//! normalised training timestep; `E` has one extra row for the null class.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::corpus;
use super::dilation::DilationProfile;
use super::{Conditioning, NoiseEstimator};
use crate::codec::LatentCodec;
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{NoiseSchedule, Timestep};
use crate::tensor::LatentTensor;

const TIME_FEATURES: usize = 10;
const LAYERS: [&str; 3] = ["conv_in", "conv_mid", "conv_out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub channels: usize,
    pub hidden: usize,
    pub base_height: usize,
    pub base_width: usize,
    pub class_names: Vec<String>,
}

impl ToyConfig {
    pub fn textures(channels: usize, base: usize) -> Self {
        Self {
            channels,
            hidden: 16,
            base_height: base,
            base_width: base,
            class_names: corpus::TEXTURE_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_params(&self) -> usize {
        let (c, h) = (self.channels, self.hidden);
        (9 * c * h + h) + (9 * h * h + h) + (9 * h * c + c) + h * TIME_FEATURES + (self.num_classes() + 1) * h + c
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ToyWeights {
    config: ToyConfig,
    conv_in: Conv2d,
    conv_mid: Conv2d,
    conv_out: Conv2d,
    /// `hidden x TIME_FEATURES`.
    time_proj: Vec<f32>,
    /// `(classes + 1) x hidden`; the last row is the null class.
    class_emb: Vec<f32>,
    skip: Vec<f32>,
}

struct Activations {
    a1: LatentTensor,
    h1: LatentTensor,
    a2: LatentTensor,
    h2: LatentTensor,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn time_features(t: &Timestep) -> [f32; TIME_FEATURES] {
    let u = t.model_timestep as f64 / t.num_train_steps.max(1) as f64;
    let mut phi = [0.0f32; TIME_FEATURES];
    phi[0] = t.alpha_bar.sqrt() as f32;
    phi[1] = (1.0 - t.alpha_bar).max(0.0).sqrt() as f32;
    for j in 0..4 {
        let w = std::f64::consts::PI * (1 << j) as f64 * u;
        phi[2 + 2 * j] = w.sin() as f32;
        phi[3 + 2 * j] = w.cos() as f32;
    }
    phi
}

impl ToyWeights {
    fn init(config: ToyConfig, rng: &mut impl Rng) -> Self {
        let (c, h) = (config.channels, config.hidden);
        let conv = |cin: usize, cout: usize, gain: f32, rng: &mut dyn rand::RngCore| {
            let bound = gain * (3.0 / (9 * cin) as f32).sqrt();
            Conv2d::from_fn(cin, cout, 3, |_, _, _, _| rng.random_range(-bound..bound))
        };
        let conv_in = conv(c, h, 1.0, rng);
        let conv_mid = conv(h, h, 1.0, rng);
        let conv_out = conv(h, c, 0.1, rng);
        let time_proj = (0..h * TIME_FEATURES).map(|_| rng.random_range(-0.1..0.1)).collect();
        let class_emb = (0..(config.num_classes() + 1) * h)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        Self {
            skip: vec![1.0; c],
            config,
            conv_in,
            conv_mid,
            conv_out,
            time_proj,
            class_emb,
        }
    }

    fn param_slices(&self) -> [&[f32]; 9] {
        [
            &self.conv_in.weight,
            &self.conv_in.bias,
            &self.conv_mid.weight,
            &self.conv_mid.bias,
            &self.conv_out.weight,
            &self.conv_out.bias,
            &self.time_proj,
            &self.class_emb,
            &self.skip,
        ]
    }

    fn param_slices_mut(&mut self) -> [&mut [f32]; 9] {
        [
            &mut self.conv_in.weight,
            &mut self.conv_in.bias,
            &mut self.conv_mid.weight,
            &mut self.conv_mid.bias,
            &mut self.conv_out.weight,
            &mut self.conv_out.bias,
            &mut self.time_proj,
            &mut self.class_emb,
            &mut self.skip,
        ]
    }

    fn flatten(&self) -> Vec<f32> {
        self.param_slices().concat()
    }

    fn from_flat(config: ToyConfig, flat: &[f32]) -> Result<Self> {
        if flat.len() != config.num_params() {
            return Err(Error::shape(&[config.num_params()], &[flat.len()]));
        }
        let (c, h) = (config.channels, config.hidden);
        let mut w = Self {
            conv_in: Conv2d::zeros(c, h, 3),
            conv_mid: Conv2d::zeros(h, h, 3),
            conv_out: Conv2d::zeros(h, c, 3),
            time_proj: vec![0.0; h * TIME_FEATURES],
            class_emb: vec![0.0; (config.num_classes() + 1) * h],
            skip: vec![0.0; c],
            config,
        };
        let mut offset = 0;
        for slot in w.param_slices_mut() {
            let n = slot.len();
            slot.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(w)
    }

    fn class_index(&self, cond: &Conditioning) -> Result<usize> {
        match cond {
            Conditioning::Null => Ok(self.config.num_classes()),
            Conditioning::ClassLabel(k) if *k < self.config.num_classes() => Ok(*k),
            other => Err(Error::UnknownConditioning(format!(
                "toy denoiser has {} classes; got {:?}",
                self.config.num_classes(),
                other
            ))),
        }
    }

    fn forward(&self, z: &LatentTensor, t: &Timestep, class: usize, dil: [usize; 3]) -> (LatentTensor, Activations) {
        let hdim = self.config.hidden;
        let phi = time_features(t);
        let bias: Vec<f32> = (0..hdim)
            .map(|j| {
                let tp: f32 = self.time_proj[j * TIME_FEATURES..(j + 1) * TIME_FEATURES]
                    .iter()
                    .zip(&phi)
                    .map(|(a, b)| a * b)
                    .sum();
                tp + self.class_emb[class * hdim + j]
            })
            .collect();

        let mut a1 = self.conv_in.forward(z, dil[0]);
        for cell in a1.data_mut().chunks_mut(hdim) {
            cell.iter_mut().zip(&bias).for_each(|(v, b)| *v += b);
        }
        let h1 = a1.map(silu);
        let a2 = self.conv_mid.forward(&h1, dil[1]);
        let h2 = a2.zip_map(&h1, |a, h| silu(a) + h).expect("hidden shapes");
        let mut out = self.conv_out.forward(&h2, dil[2]);
        let noise_scale = phi[1];
        let c = self.config.channels;
        for (i, (o, &zv)) in out.data_mut().iter_mut().zip(z.data()).enumerate() {
            *o += self.skip[i % c] * noise_scale * zv;
        }
        (out, Activations { a1, h1, a2, h2 })
    }

    /// Accumulates `dL/dtheta` into `grads` (flattened parameter order).
    fn backward(
        &self,
        z: &LatentTensor,
        t: &Timestep,
        class: usize,
        acts: &Activations,
        grad_out: &LatentTensor,
        grads: &mut [Vec<f32>; 9],
    ) {
        let hdim = self.config.hidden;
        let c = self.config.channels;
        let phi = time_features(t);

        for (i, (&g, &zv)) in grad_out.data().iter().zip(z.data()).enumerate() {
            grads[8][i % c] += g * phi[1] * zv;
        }
        let g3 = self.conv_out.backward(&acts.h2, grad_out, 1, true);
        add_into(&mut grads[4], &g3.weight);
        add_into(&mut grads[5], &g3.bias);
        let g_h2 = g3.input.expect("input grad");

        let g_a2 = g_h2.zip_map(&acts.a2, |g, a| g * silu_grad(a)).expect("shape");
        let g2 = self.conv_mid.backward(&acts.h1, &g_a2, 1, true);
        add_into(&mut grads[2], &g2.weight);
        add_into(&mut grads[3], &g2.bias);
        let g_h1 = g_h2.add(&g2.input.expect("input grad")).expect("shape");

        let g_a1 = g_h1.zip_map(&acts.a1, |g, a| g * silu_grad(a)).expect("shape");
        let mut g_bias = vec![0.0f32; hdim];
        for cell in g_a1.data().chunks(hdim) {
            g_bias.iter_mut().zip(cell).for_each(|(b, g)| *b += g);
        }
        for j in 0..hdim {
            for f in 0..TIME_FEATURES {
                grads[6][j * TIME_FEATURES + f] += g_bias[j] * phi[f];
            }
            grads[7][class * hdim + j] += g_bias[j];
        }
        let g1 = self.conv_in.backward(z, &g_a1, 1, false);
        add_into(&mut grads[0], &g1.weight);
        add_into(&mut grads[1], &g1.bias);
    }

    fn zero_grads(&self) -> [Vec<f32>; 9] {
        self.param_slices().map(|s| vec![0.0; s.len()])
    }
}

fn add_into(acc: &mut [f32], g: &[f32]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Trainable convolutional denoiser. Clones share weights; a re-dilated
/// instance differs only in its dilation profile.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    weights: Arc<ToyWeights>,
    profile: DilationProfile,
    factor: usize,
}

impl ToyDenoiser {
    pub fn init(config: ToyConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, u64::MAX, 0);
        Self::from_weights(ToyWeights::init(config, &mut rng))
    }

    fn from_weights(weights: ToyWeights) -> Self {
        Self {
            weights: Arc::new(weights),
            profile: DilationProfile::default(),
            factor: 1,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.weights.config
    }

    pub fn layer_names(&self) -> [&'static str; 3] {
        LAYERS
    }

    pub fn profile(&self) -> &DilationProfile {
        &self.profile
    }

    /// Same weights, explicit dilation profile.
    pub fn with_profile(&self, profile: DilationProfile) -> Self {
        Self {
            weights: Arc::clone(&self.weights),
            factor: profile.max_factor(),
            profile,
        }
    }

    pub fn shares_weights_with(&self, other: &ToyDenoiser) -> bool {
        Arc::ptr_eq(&self.weights, &other.weights)
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.weights.flatten()
    }

    pub fn from_flat(config: ToyConfig, flat: &[f32]) -> Result<Self> {
        Ok(Self::from_weights(ToyWeights::from_flat(config, flat)?))
    }

    fn dilations(&self, t: &Timestep) -> [usize; 3] {
        LAYERS.map(|name| self.profile.dilation_for(name, t.model_timestep))
    }

    /// Run the network with explicit per-layer dilations.
    pub fn forward_with_dilations(
        &self,
        z: &LatentTensor,
        t: &Timestep,
        cond: &Conditioning,
        dilations: [usize; 3],
    ) -> Result<LatentTensor> {
        if z.channels() != self.weights.config.channels {
            return Err(Error::shape(
                &[z.height(), z.width(), self.weights.config.channels],
                &z.shape(),
            ));
        }
        let class = self.weights.class_index(cond)?;
        Ok(self.weights.forward(z, t, class, dilations).0)
    }

    /// Mean squared noise-prediction error on `samples` clean latents, each
    /// noised at a random schedule index.
    pub fn denoising_error(
        &self,
        samples: &[(LatentTensor, usize)],
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, (x0, class)) in samples.iter().enumerate() {
            let mut rng = rng::stream(seed, i as u64, 1);
            let (z, eps, t) = noised(x0, schedule, &mut rng)?;
            let pred = self.predict(&z, &t, &Conditioning::ClassLabel(*class))?;
            total += pred.sub(&eps)?.sum_sq();
            count += eps.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

fn noised(
    x0: &LatentTensor,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(LatentTensor, LatentTensor, Timestep)> {
    let t = schedule.timestep(rng.random_range(1..=schedule.num_steps()))?;
    let eps = LatentTensor::from_fn(x0.height(), x0.width(), x0.channels(), |_, _, _| {
        StandardNormal.sample(rng)
    });
    let (a, s) = (t.alpha_bar.sqrt() as f32, (1.0 - t.alpha_bar).sqrt() as f32);
    let z = x0.zip_map(&eps, |x, e| a * x + s * e)?;
    Ok((z, eps, t))
}

impl NoiseEstimator for ToyDenoiser {
    fn backend_id(&self) -> String {
        "toy".into()
    }

    fn base_dims(&self) -> (usize, usize) {
        (self.weights.config.base_height, self.weights.config.base_width)
    }

    fn channels(&self) -> usize {
        self.weights.config.channels
    }

    fn supports_dilation(&self) -> bool {
        true
    }

    fn dilation_factor(&self) -> usize {
        self.factor
    }

    fn accepts(&self, height: usize, width: usize) -> bool {
        height > 0 && width > 0
    }

    fn predict(&self, z_t: &LatentTensor, t: &Timestep, cond: &Conditioning) -> Result<LatentTensor> {
        self.forward_with_dilations(z_t, t, cond, self.dilations(t))
    }

    fn redilated(self: Arc<Self>, factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
        if factor == 1 {
            return Ok(self);
        }
        let profile = if self.profile.rules.is_empty() {
            DilationProfile::uniform(factor)
        } else {
            self.profile.scaled(factor)
        };
        Ok(Arc::new(ToyDenoiser {
            weights: Arc::clone(&self.weights),
            profile,
            factor: self.factor * factor,
        }))
    }

    fn resolve_prompt(&self, prompt: &str) -> Result<Conditioning> {
        self.weights
            .config
            .class_names
            .iter()
            .position(|n| n == prompt)
            .map(Conditioning::ClassLabel)
            .ok_or_else(|| Error::UnknownConditioning(format!("no class named `{prompt}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Textures per class in the fixed training corpus.
    pub corpus_per_class: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Probability of replacing the label with the null class.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            corpus_per_class: 32,
            batch_size: 8,
            learning_rate: 3e-3,
            cond_dropout: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Latent-space training corpus: `corpus_per_class` textures per class at
/// the codec's pixel resolution for one base tile, encoded by `codec`.
pub fn texture_corpus(
    config: &ToyConfig,
    codec: &dyn LatentCodec,
    per_class: usize,
    seed: u64,
) -> Result<Vec<(LatentTensor, usize)>> {
    let f = codec.spatial_factor();
    let mut out = Vec::with_capacity(per_class * config.num_classes());
    for class in 0..config.num_classes() {
        for i in 0..per_class {
            let mut rng = rng::stream(seed, class as u64, i as u64);
            let img = corpus::texture(class, config.base_height * f, config.base_width * f, &mut rng);
            out.push((codec.encode(&img)?, class));
        }
    }
    Ok(out)
}

/// Trains a toy denoiser on the noise-prediction objective over the
/// procedural texture corpus. Single-threaded and fully determined by
/// `options.seed`.
pub fn train_toy(
    config: ToyConfig,
    codec: &dyn LatentCodec,
    schedule: &NoiseSchedule,
    options: &TrainOptions,
) -> Result<(ToyDenoiser, TrainReport)> {
    if codec.latent_channels() != config.channels {
        return Err(Error::shape(&[config.channels], &[codec.latent_channels()]));
    }
    let corpus = texture_corpus(&config, codec, options.corpus_per_class, options.seed)?;
    let mut weights = ToyWeights::init(config, &mut rng::stream(options.seed, u64::MAX, 0));
    let mut rng = rng::stream(options.seed, u64::MAX, 1);

    let (beta1, beta2, adam_eps) = (0.9f32, 0.999f32, 1e-8f32);
    let mut m = weights.zero_grads();
    let mut v = weights.zero_grads();
    let mut step = 0usize;
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(options.epochs),
        steps: 0,
    };
    let batch = options.batch_size.max(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for _epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch) {
            let mut grads = weights.zero_grads();
            let mut batch_loss = 0.0f64;
            for &idx in chunk {
                let (x0, class) = &corpus[idx];
                let class = if rng.random_bool(options.cond_dropout) {
                    weights.config.num_classes()
                } else {
                    *class
                };
                let (z, eps, t) = noised(x0, schedule, &mut rng)?;
                let (pred, acts) = weights.forward(&z, &t, class, [1, 1, 1]);
                let n = (eps.len() * chunk.len()) as f32;
                let diff = pred.sub(&eps)?;
                batch_loss += diff.sum_sq() / eps.len() as f64;
                let grad_out = diff.scale(2.0 / n);
                weights.backward(&z, &t, class, &acts, &grad_out, &mut grads);
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::DivergedTraining { step, loss: batch_loss });
            }
            epoch_loss += batch_loss * chunk.len() as f64;

            step += 1;
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - beta2.powi(step as i32);
            for (((p, g), m), v) in weights
                .param_slices_mut()
                .into_iter()
                .zip(&grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    p[i] -= options.learning_rate * mh / (vh.sqrt() + adam_eps);
                }
            }
        }
        report.epoch_losses.push(epoch_loss / corpus.len() as f64);
    }
    report.steps = step;
    Ok((ToyDenoiser::from_weights(weights), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::IdentityCodec;
    use crate::schedule::{build_schedule, Spacing};

    fn small_config() -> ToyConfig {
        ToyConfig {
            channels: 3,
            hidden: 6,
            base_height: 8,
            base_width: 8,
            class_names: vec!["a".into(), "b".into()],
        }
    }

    fn timestep(ab: f64) -> Timestep {
        Timestep {
            index: 3,
            model_timestep: 300,
            num_train_steps: 1000,
            alpha_bar: ab,
        }
    }

    #[test]
    fn param_count_matches_flattening() {
        let net = ToyDenoiser::init(small_config(), 1);
        assert_eq!(net.to_flat().len(), small_config().num_params());
        let back = ToyDenoiser::from_flat(small_config(), &net.to_flat()).unwrap();
        assert_eq!(back.to_flat(), net.to_flat());
        assert!(ToyDenoiser::from_flat(small_config(), &[0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng::stream(4, 0, 0);
        let weights = ToyWeights::init(small_config(), &mut rng);
        let z = LatentTensor::from_fn(5, 4, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let target = LatentTensor::from_fn(5, 4, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let t = timestep(0.4);
        let class = 1;
        let loss = |w: &ToyWeights| -> f64 {
            let (out, _) = w.forward(&z, &t, class, [1, 1, 1]);
            out.sub(&target).unwrap().sum_sq()
        };
        let (out, acts) = weights.forward(&z, &t, class, [1, 1, 1]);
        let grad_out = out.sub(&target).unwrap().scale(2.0);
        let mut grads = weights.zero_grads();
        weights.backward(&z, &t, class, &acts, &grad_out, &mut grads);

        let flat_grads: Vec<f32> = grads.concat();
        let base = weights.flatten();
        let h = 1e-2f32;
        let probes = [0, 7, 170, 200, 470, 500, 530, 560, 600, base.len() - 1];
        for &i in probes.iter().filter(|&&i| i < base.len()) {
            let mut p = base.clone();
            p[i] += h;
            let mut m = base.clone();
            m[i] -= h;
            let lp = loss(&ToyWeights::from_flat(small_config(), &p).unwrap());
            let lm = loss(&ToyWeights::from_flat(small_config(), &m).unwrap());
            let fd = (lp - lm) / (2.0 * h as f64);
            let g = flat_grads[i] as f64;
            assert!(
                (fd - g).abs() <= 2e-2 * (1.0 + g.abs()),
                "param {i}: finite difference {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn untrained_predict_has_input_shape() {
        let net = Arc::new(ToyDenoiser::init(small_config(), 0));
        let z = LatentTensor::zeros(12, 20, 3);
        let eps = net.predict(&z, &timestep(0.5), &Conditioning::Null).unwrap();
        assert_eq!(eps.shape(), z.shape());
        assert!(matches!(
            net.predict(&z, &timestep(0.5), &Conditioning::ClassLabel(5)),
            Err(Error::UnknownConditioning(_))
        ));
    }

    #[test]
    fn zero_epochs_returns_initialised_network() {
        let schedule = build_schedule(1000, 20, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let opts = TrainOptions {
            epochs: 0,
            corpus_per_class: 2,
            ..TrainOptions::default()
        };
        let (net, report) = train_toy(small_config(), &IdentityCodec::default(), &schedule, &opts).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(net.to_flat(), ToyDenoiser::init(small_config(), opts.seed).to_flat());
    }

    #[test]
    fn redilation_shares_weights_and_identity_factor_is_exact() {
        let net = Arc::new(ToyDenoiser::init(small_config(), 3));
        let same = Arc::clone(&net).redilated(1).unwrap();
        let z = LatentTensor::from_fn(8, 8, 3, |r, c, k| ((r + 2 * c + k) % 5) as f32 * 0.3 - 0.6);
        let t = timestep(0.7);
        assert_eq!(
            net.predict(&z, &t, &Conditioning::Null).unwrap(),
            same.predict(&z, &t, &Conditioning::Null).unwrap()
        );
        let dilated = net.as_ref().clone().with_profile(DilationProfile::uniform(2));
        assert!(dilated.shares_weights_with(&net));
        assert_eq!(dilated.dilation_factor(), 2);
        assert_ne!(
            net.predict(&z, &t, &Conditioning::Null).unwrap(),
            dilated.predict(&z, &t, &Conditioning::Null).unwrap()
        );
    }
}
