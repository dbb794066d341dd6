//! Reverse samplers: the switched edit loop started from an inverted latent,
//! the ScaleCrafter-style generation branch, and unconditional
//! reconstruction.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_tiled, LatentCodec};
use crate::error::{Error, Result};
use crate::estimators::{check_input, Conditioning, NoiseEstimator};
use crate::guidance::{cfg_step, cfgpp_step, ndcfg_step, ndcfgpp_step, GuidanceConfig, GuidanceMode, StepOutput};
use crate::inversion::{replay_single_tile, InvertedLatent};
use crate::schedule::{ddim_step, NoiseSchedule};
use crate::tensor::LatentTensor;
use crate::tiling::{self, Space, TilePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Ndcfgpp,
    Cfgpp,
    Ndcfg,
    Cfg,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Ndcfgpp => "ndcfgpp",
            Branch::Cfgpp => "cfgpp",
            Branch::Ndcfg => "ndcfg",
            Branch::Cfg => "cfg",
        }
    }
}

/// Which side of `tau` gets the noise-damped rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchRule {
    /// `t <= tau`: the last `tau` steps of the `T -> 1` loop.
    #[default]
    AtOrBelowTau,
    /// `t > tau`: the first `T - tau` steps.
    AboveTau,
}

impl SwitchRule {
    pub fn damped(self, t: usize, tau: usize) -> bool {
        match self {
            SwitchRule::AtOrBelowTau => t <= tau,
            SwitchRule::AboveTau => t > tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditOptions {
    pub record: bool,
    /// Decode a preview of `z_{t-1}` every this many steps (and at the last
    /// step). 0 disables previews.
    pub preview_every: usize,
    pub switch: SwitchRule,
    /// Decode the final latent in one pass instead of tile by tile.
    pub one_pass_decode: bool,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self {
            record: false,
            preview_every: 5,
            switch: SwitchRule::default(),
            one_pass_decode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    pub t: usize,
    pub branch: Branch,
    /// Dilated `eps_c - eps_null` at this step.
    pub residual: LatentTensor,
    /// Decoded `z_{t-1}`, pixel space.
    pub preview: Option<LatentTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub entries: Vec<TrajectoryEntry>,
    pub config: GuidanceConfig,
    pub seed: u64,
    pub schedule_id: String,
}

impl TrajectoryRecord {
    pub fn count(&self, branch: Branch) -> usize {
        self.entries.iter().filter(|e| e.branch == branch).count()
    }

    /// Branch labels in step order (`t = T` first).
    pub fn branches(&self) -> Vec<Branch> {
        self.entries.iter().map(|e| e.branch).collect()
    }
}

pub fn schedule_id(schedule: &NoiseSchedule) -> String {
    match schedule.params() {
        Some(p) => format!(
            "{}:{}/{}:{}-{}",
            match p.spacing {
                crate::schedule::Spacing::Linear => "linear",
                crate::schedule::Spacing::Quadratic => "quadratic",
            },
            p.num_sample_steps,
            p.num_train_steps,
            p.beta_start,
            p.beta_end
        ),
        None => format!("raw:{}", schedule.num_steps()),
    }
}

/// Called after every reverse step with `(t, branch, z_t, step)`.
pub type StepObserver<'a> = dyn FnMut(usize, Branch, &LatentTensor, &StepOutput) + 'a;

fn edit_branch(cfg: &GuidanceConfig, switch: SwitchRule, t: usize) -> Branch {
    match cfg.mode {
        GuidanceMode::NdCfgPp if switch.damped(t, cfg.tau) => Branch::Ndcfgpp,
        GuidanceMode::NdCfgPp | GuidanceMode::CfgPp => Branch::Cfgpp,
        GuidanceMode::NdCfg if switch.damped(t, cfg.tau) => Branch::Ndcfg,
        GuidanceMode::NdCfg | GuidanceMode::Cfg => Branch::Cfg,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_step(
    branch: Branch,
    z: &LatentTensor,
    t: usize,
    cond: &Conditioning,
    scale: f64,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    match branch {
        Branch::Ndcfgpp => ndcfgpp_step(z, t, t - 1, vanilla, dilated, cond, scale, schedule),
        Branch::Cfgpp => cfgpp_step(z, t, t - 1, dilated, cond, scale, schedule),
        Branch::Ndcfg => ndcfg_step(z, t, t - 1, vanilla, dilated, cond, scale, schedule),
        Branch::Cfg => cfg_step(z, t, t - 1, dilated, cond, scale, schedule),
    }
}

fn decode(codec: &dyn LatentCodec, latent: &LatentTensor, plan: &TilePlan, one_pass: bool) -> Result<LatentTensor> {
    if one_pass {
        codec.decode(latent)
    } else {
        decode_tiled(codec, latent, plan)
    }
}

fn ensure_sampler_mode(cfg: &GuidanceConfig, interpolating: bool, sampler: &'static str) -> Result<()> {
    if cfg.mode.is_interpolating() != interpolating {
        return Err(Error::ModeMismatch {
            mode: cfg.mode.as_str(),
            sampler,
        });
    }
    Ok(())
}

fn check_dilated_input(vanilla: &dyn NoiseEstimator, dilated: &dyn NoiseEstimator, z: &LatentTensor) -> Result<()> {
    check_input(dilated, z)?;
    check_input(vanilla, z)
}

/// Switched edit in latent space. Returns `z_0*` and the trajectory record
/// (empty entries unless `opts.record`). Calls `observer` after every step.
#[allow(clippy::too_many_arguments)]
pub fn edit_latent_observed(
    inv: &InvertedLatent,
    cond: &Conditioning,
    cfg: &GuidanceConfig,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    opts: &EditOptions,
    observer: &mut StepObserver<'_>,
) -> Result<(LatentTensor, TrajectoryRecord)> {
    ensure_sampler_mode(cfg, true, "edit")?;
    cfg.validate(schedule.num_steps())?;
    if schedule.num_steps() != inv.schedule.num_steps() {
        return Err(Error::CountMismatch {
            expected: inv.schedule.num_steps(),
            actual: schedule.num_steps(),
        });
    }
    check_dilated_input(vanilla, dilated, &inv.z_t_star)?;

    let mut record = TrajectoryRecord {
        entries: Vec::new(),
        config: *cfg,
        seed: inv.seed,
        schedule_id: schedule_id(schedule),
    };
    let mut z = inv.z_t_star.clone();
    for t in (1..=schedule.num_steps()).rev() {
        let branch = edit_branch(cfg, opts.switch, t);
        let out = run_step(branch, &z, t, cond, cfg.scale, vanilla, dilated, schedule)?;
        observer(t, branch, &z, &out);
        if opts.record {
            let k = schedule.num_steps() - t + 1;
            let want_preview = opts.preview_every > 0 && (k.is_multiple_of(opts.preview_every) || t == 1);
            let preview = if want_preview {
                Some(decode(codec, &out.z_prev, &inv.plan, opts.one_pass_decode)?)
            } else {
                None
            };
            record.entries.push(TrajectoryEntry {
                t,
                branch,
                residual: out.residual.clone(),
                preview,
            });
        }
        z = out.z_prev;
    }
    Ok((z, record))
}

#[allow(clippy::too_many_arguments)]
pub fn edit_latent(
    inv: &InvertedLatent,
    cond: &Conditioning,
    cfg: &GuidanceConfig,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    opts: &EditOptions,
) -> Result<(LatentTensor, TrajectoryRecord)> {
    edit_latent_observed(
        inv,
        cond,
        cfg,
        vanilla,
        dilated,
        schedule,
        codec,
        opts,
        &mut |_, _, _, _| {},
    )
}

/// Switched edit from an inverted latent, decoded to pixel space.
///
/// For `t = T..1` the step is NDCFG++ when the switch rule selects `t`
/// (default `t <= tau`) and CFG++ on the dilated estimator otherwise. With
/// `cfg.mode == CFGPP` every step is CFG++.
#[allow(clippy::too_many_arguments)]
pub fn edit(
    inv: &InvertedLatent,
    cond: &Conditioning,
    cfg: &GuidanceConfig,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    opts: &EditOptions,
) -> Result<(LatentTensor, TrajectoryRecord)> {
    let (z0, record) = edit_latent(inv, cond, cfg, vanilla, dilated, schedule, codec, opts)?;
    Ok((decode(codec, &z0, &inv.plan, opts.one_pass_decode)?, record))
}

/// ScaleCrafter-style generation in latent space: NDCFG when `t <= tau`,
/// dilated CFG otherwise (`cfg.mode == CFG` runs dilated CFG throughout).
#[allow(clippy::too_many_arguments)]
pub fn scalecrafter_sample(
    z_t: &LatentTensor,
    cond: &Conditioning,
    cfg: &GuidanceConfig,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    observer: &mut StepObserver<'_>,
) -> Result<LatentTensor> {
    ensure_sampler_mode(cfg, false, "scalecrafter_generate")?;
    cfg.validate(schedule.num_steps())?;
    check_dilated_input(vanilla, dilated, z_t)?;
    let mut z = z_t.clone();
    for t in (1..=schedule.num_steps()).rev() {
        let branch = edit_branch(cfg, SwitchRule::AtOrBelowTau, t);
        let out = run_step(branch, &z, t, cond, cfg.scale, vanilla, dilated, schedule)?;
        observer(t, branch, &z, &out);
        z = out.z_prev;
    }
    Ok(z)
}

#[allow(clippy::too_many_arguments)]
pub fn scalecrafter_generate(
    z_t: &LatentTensor,
    cond: &Conditioning,
    cfg: &GuidanceConfig,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
) -> Result<LatentTensor> {
    let z0 = scalecrafter_sample(z_t, cond, cfg, vanilla, dilated, schedule, &mut |_, _, _, _| {})?;
    codec.decode(&z0)
}

/// Unconditional reverse from `z_T*` in latent space. With `use_cache`, each
/// tile replays its cached inversion noise; otherwise the estimator is
/// evaluated afresh on each tile.
pub fn reconstruct_latent(
    inv: &InvertedLatent,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
    use_cache: bool,
) -> Result<LatentTensor> {
    inv.validate()?;
    let tiles = tiling::crop_all(&inv.z_t_star, &inv.plan, Space::Latent)?;
    let out = if use_cache {
        let cache = inv.eps_cache.as_ref().ok_or(Error::MissingCache)?;
        tiles
            .iter()
            .zip(cache)
            .map(|(z, eps)| replay_single_tile(z, eps, schedule))
            .collect::<Result<Vec<_>>>()?
    } else {
        tiles
            .iter()
            .map(|z| unconditional_ddim(z, schedule, estimator))
            .collect::<Result<Vec<_>>>()?
    };
    tiling::stitch(&out, &inv.plan, Space::Latent)
}

pub fn reconstruct(
    inv: &InvertedLatent,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
    codec: &dyn LatentCodec,
    use_cache: bool,
) -> Result<LatentTensor> {
    let z0 = reconstruct_latent(inv, schedule, estimator, use_cache)?;
    decode_tiled(codec, &z0, &inv.plan)
}

/// Plain unconditional DDIM from `t = T` to `t = 0`.
pub fn unconditional_ddim(
    z_t: &LatentTensor,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
) -> Result<LatentTensor> {
    check_input(estimator, z_t)?;
    let mut z = z_t.clone();
    for t in (1..=schedule.num_steps()).rev() {
        let eps = estimator.predict(&z, &schedule.timestep(t)?, &Conditioning::Null)?;
        z = ddim_step(&z, &eps, &eps, t, t - 1, schedule)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::IdentityCodec;
    use crate::estimators::{AnalyticEstimator, GaussianMixtureWorld, ZeroEstimator};
    use crate::inversion::tiled_ddim_invert;
    use crate::schedule::{build_schedule, Spacing};
    use crate::tiling::plan_tiles;

    fn setup(
        tau: usize,
        mode: GuidanceMode,
        scale: f64,
    ) -> (InvertedLatent, NoiseSchedule, AnalyticEstimator, GuidanceConfig) {
        let schedule = build_schedule(1000, 10, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let est = AnalyticEstimator::new(GaussianMixtureWorld::two_tone());
        let img = LatentTensor::from_fn(4, 4, 3, |r, c, k| ((r + 2 * c + k) % 5) as f32 / 4.0);
        let plan = plan_tiles(4, 4, 2, 2, 1).unwrap();
        let inv = tiled_ddim_invert(&img, &plan, &schedule, &est, &IdentityCodec::default(), true).unwrap();
        let cfg = GuidanceConfig {
            mode,
            scale,
            tau,
            dilation_factor: 1,
        };
        (inv, schedule, est, cfg)
    }

    #[test]
    fn branch_accounting_follows_tau() {
        let opts = EditOptions {
            record: true,
            ..Default::default()
        };
        let codec = IdentityCodec::default();
        for (tau, rule, damped) in [
            (0, SwitchRule::AtOrBelowTau, 0),
            (10, SwitchRule::AtOrBelowTau, 10),
            (7, SwitchRule::AtOrBelowTau, 7),
            (7, SwitchRule::AboveTau, 3),
        ] {
            let (inv, schedule, est, cfg) = setup(tau, GuidanceMode::NdCfgPp, 0.5);
            let opts = EditOptions { switch: rule, ..opts };
            let (_, rec) = edit(
                &inv,
                &Conditioning::ClassLabel(1),
                &cfg,
                &est,
                &est,
                &schedule,
                &codec,
                &opts,
            )
            .unwrap();
            assert_eq!(rec.entries.len(), 10);
            assert_eq!(rec.count(Branch::Ndcfgpp), damped);
            assert_eq!(rec.count(Branch::Cfgpp), 10 - damped);
            let switches = rec.branches().windows(2).filter(|w| w[0] != w[1]).count();
            assert!(switches <= 1);
            // previews at k = 5, 10
            assert_eq!(rec.entries.iter().filter(|e| e.preview.is_some()).count(), 2);
        }
    }

    #[test]
    fn default_sixteen_tile_split_is_thirteen_then_thirty_seven() {
        let cfg = GuidanceConfig {
            mode: GuidanceMode::NdCfgPp,
            scale: 0.5,
            tau: 37,
            dilation_factor: 4,
        };
        let branches: Vec<_> = (1..=50)
            .rev()
            .map(|t| edit_branch(&cfg, SwitchRule::default(), t))
            .collect();
        assert_eq!(branches.iter().filter(|&&b| b == Branch::Cfgpp).count(), 13);
        assert_eq!(branches.iter().filter(|&&b| b == Branch::Ndcfgpp).count(), 37);
        assert_eq!(branches[0], Branch::Cfgpp);
    }

    #[test]
    fn mode_mismatch() {
        let (inv, schedule, est, cfg) = setup(3, GuidanceMode::NdCfg, 2.0);
        let codec = IdentityCodec::default();
        let r = edit(
            &inv,
            &Conditioning::Null,
            &cfg,
            &est,
            &est,
            &schedule,
            &codec,
            &EditOptions::default(),
        );
        assert!(matches!(r, Err(Error::ModeMismatch { .. })));
        let cfg = GuidanceConfig {
            mode: GuidanceMode::CfgPp,
            scale: 0.5,
            ..cfg
        };
        let r = scalecrafter_generate(&inv.z_t_star, &Conditioning::Null, &cfg, &est, &est, &schedule, &codec);
        assert!(matches!(r, Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn reconstruct_paths() {
        let (mut inv, schedule, est, _) = setup(0, GuidanceMode::NdCfgPp, 0.0);
        let source = LatentTensor::from_fn(4, 4, 3, |r, c, k| ((r + 2 * c + k) % 5) as f32 / 4.0);
        let replay = reconstruct_latent(&inv, &schedule, &est, true).unwrap();
        assert!(replay.relative_error(&source).unwrap() < 1e-5);
        inv.eps_cache = None;
        assert!(matches!(
            reconstruct(&inv, &schedule, &est, &IdentityCodec::default(), true),
            Err(Error::MissingCache)
        ));

        let zero = ZeroEstimator { channels: 3 };
        let plan = plan_tiles(4, 4, 2, 2, 1).unwrap();
        let inv = tiled_ddim_invert(&source, &plan, &schedule, &zero, &IdentityCodec::default(), false).unwrap();
        let back = reconstruct_latent(&inv, &schedule, &zero, false).unwrap();
        assert!(back.relative_error(&source).unwrap() < 1e-6);
    }

    #[test]
    fn lambda_zero_edit_with_identical_estimators_is_unconditional_ddim() {
        let (inv, schedule, est, cfg) = setup(4, GuidanceMode::NdCfgPp, 0.0);
        let codec = IdentityCodec::default();
        let (z, _) = edit_latent(
            &inv,
            &Conditioning::ClassLabel(0),
            &cfg,
            &est,
            &est,
            &schedule,
            &codec,
            &EditOptions::default(),
        )
        .unwrap();
        let plain = unconditional_ddim(&inv.z_t_star, &schedule, &est).unwrap();
        assert!(z.relative_error(&plain).unwrap() < 1e-6);
    }
}
