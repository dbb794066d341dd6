use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use tiledit_core::codec::{codec_from_locator, decode_tiled, LatentCodec};
use tiledit_core::estimators::{corpus, redilate, train_toy, Conditioning, ToyConfig, TrainOptions};
use tiledit_core::guidance::{GuidanceConfig, GuidanceMode};
use tiledit_core::inversion::tiled_ddim_invert;
use tiledit_core::rng;
use tiledit_core::sampler::{edit_latent, reconstruct, EditOptions, SwitchRule};
use tiledit_core::schedule::ScheduleParams;
use tiledit_core::tiling::plan_tiles;
use tiledit_core::LatentTensor;

use crate::backend::Backend;
use crate::error::{CliError, CliResult};
use crate::io::{self, LoadedInversion};
use crate::manifest::{manifest_path, RunManifest};
use crate::plot;

const SEED_RANGE: std::ops::RangeInclusive<i64> = 0..=i64::MAX;

fn parse_seed(s: &str) -> Result<u64, String> {
    let v: i64 = s.parse().map_err(|e| format!("{e}"))?;
    if SEED_RANGE.contains(&v) {
        Ok(v as u64)
    } else {
        Err("seed must be in 0..=2^63-1".into())
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage("missing-argument", format!("--{flag} is required")))
}

/// Switch index used when `--tau` is omitted: 10 for up to 4x the tile area,
/// 37 beyond, capped at the step count.
pub fn default_tau(area_factor: usize, steps: usize) -> usize {
    let tau = if area_factor <= 4 { 10 } else { 37 };
    tau.min(steps)
}

/// Dilation used when `--dilation-factor` is omitted: the linear upscale
/// factor `round(sqrt(area))`.
pub fn default_dilation(area_factor: usize) -> usize {
    ((area_factor as f64).sqrt().round() as usize).max(1)
}

fn rmse(a: &LatentTensor, b: &LatentTensor) -> CliResult<f64> {
    a.ensure_same_shape(b)?;
    Ok((a.sub(b)?.sum_sq() / a.len() as f64).sqrt())
}

fn psnr(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * rmse.log10()
    }
}

fn backend_of(loaded: &LoadedInversion) -> CliResult<Backend> {
    let backend = loaded
        .manifest
        .backend
        .as_deref()
        .ok_or_else(|| CliError::usage("bad-manifest", "inversion manifest lacks backend"))?;
    let weights = loaded.manifest.inputs.get("weights").map(PathBuf::from);
    Backend::load(backend, weights.as_deref())
}

fn codec_of(loaded: &LoadedInversion) -> CliResult<std::sync::Arc<dyn LatentCodec>> {
    let codec = loaded
        .manifest
        .codec
        .as_deref()
        .ok_or_else(|| CliError::usage("bad-manifest", "inversion manifest lacks codec"))?;
    Ok(codec_from_locator(codec)?)
}

fn resolve_condition(backend: &Backend, class: Option<&str>, prompt: Option<&str>) -> CliResult<Conditioning> {
    let text = class
        .or(prompt)
        .ok_or_else(|| CliError::usage("missing-condition", "pass --class or --prompt"))?;
    Ok(backend.vanilla().resolve_prompt(text)?)
}

fn source_image(loaded: &LoadedInversion) -> CliResult<LatentTensor> {
    let path = loaded
        .manifest
        .inputs
        .get("image")
        .ok_or_else(|| CliError::usage("bad-manifest", "inversion manifest lacks the source image"))?;
    io::read_png(Path::new(path))
}

// ---------------------------------------------------------------- invert

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct InvertArgs {
    /// Input PNG.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Pixel tile size (defaults to the backend's training tile).
    #[arg(long)]
    pub tile_size: Option<usize>,
    /// DDIM steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `toy` or `analytic`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Toy weights written by `train-toy`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Codec locator (`identity`, `box:<f>`); defaults to the backend's.
    #[arg(long)]
    pub codec: Option<String>,
    /// Keep every noise estimate for exact replay.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cache_eps: Option<bool>,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<u64>,
    /// Output container.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertRun {
    pub input: PathBuf,
    pub tile_size: Option<usize>,
    pub steps: usize,
    pub backend: String,
    pub weights: Option<PathBuf>,
    pub codec: Option<String>,
    pub cache_eps: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl InvertArgs {
    pub fn resolve(self) -> CliResult<InvertRun> {
        Ok(InvertRun {
            input: required(self.input, "input")?,
            tile_size: self.tile_size,
            steps: self.steps.unwrap_or(50),
            backend: self.backend.unwrap_or_else(|| "toy".into()),
            weights: self.weights,
            codec: self.codec,
            cache_eps: self.cache_eps.unwrap_or(false),
            seed: self.seed.unwrap_or(0),
            out: required(self.out, "out")?,
        })
    }
}

impl InvertRun {
    pub fn execute(mut self) -> CliResult<()> {
        io::require_file(&self.input)?;
        let backend = Backend::load(&self.backend, self.weights.as_deref())?;
        let image = io::read_png(&self.input)?;
        let codec_locator = self.codec.get_or_insert_with(|| backend.default_codec().into()).clone();
        let codec = codec_from_locator(&codec_locator)?;
        let tile = *self.tile_size.get_or_insert(backend.default_tile());
        if let Backend::Toy { tile_size, .. } = &backend {
            if tile != *tile_size || codec_locator != backend.default_codec() {
                return Err(CliError::usage(
                    "tile-mismatch",
                    format!(
                        "toy weights expect {tile_size}px tiles with codec {}, got {tile}px with {codec_locator}",
                        backend.default_codec()
                    ),
                ));
            }
        }
        let plan = plan_tiles(image.height(), image.width(), tile, tile, codec.spatial_factor())?;
        let params = ScheduleParams::stable_diffusion(self.steps);
        let schedule = params.build()?;

        let mut inv = tiled_ddim_invert(
            &image,
            &plan,
            &schedule,
            backend.vanilla().as_ref(),
            codec.as_ref(),
            self.cache_eps,
        )?;
        inv.seed = self.seed;

        let mut manifest = RunManifest::new("invert", self.seed, &self)?;
        manifest.backend = Some(backend.id().into());
        manifest.codec = Some(codec_locator);
        manifest.schedule = Some(params);
        manifest.input("image", &self.input);
        if let Some(w) = backend.weights() {
            manifest.input("weights", w);
        }
        let [lh, lw, lc] = inv.z_t_star.shape();
        manifest
            .info
            .insert("latent_dims".into(), toml::Value::try_from([lh, lw, lc]).unwrap());
        io::save_inverted(&self.out, &inv, &mut manifest)?;
        println!(
            "inverted {}x{} image in {} tiles -> latent {lh}x{lw}x{lc} at {}",
            image.height(),
            image.width(),
            plan.len(),
            self.out.display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------- edit

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EditArgs {
    /// Container written by `invert`.
    #[arg(long)]
    pub inverted: Option<PathBuf>,
    /// Target class name (toy and analytic backends).
    #[arg(long)]
    pub class: Option<String>,
    /// Target prompt; toy backends treat it as a class name.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Guidance scale (lambda for CFGPP/NDCFGPP).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<usize>,
    /// CFGPP or NDCFGPP.
    #[arg(long)]
    pub mode: Option<GuidanceMode>,
    #[arg(long)]
    pub dilation_factor: Option<usize>,
    /// `at-or-below-tau` (default) or `above-tau`.
    #[arg(long, value_parser = parse_switch)]
    pub switch: Option<SwitchRule>,
    /// Directory for the recorded trajectory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub preview_every: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub one_pass_decode: Option<bool>,
    /// Output PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_switch(s: &str) -> Result<SwitchRule, String> {
    match s {
        "at-or-below-tau" => Ok(SwitchRule::AtOrBelowTau),
        "above-tau" => Ok(SwitchRule::AboveTau),
        _ => Err(format!("unknown switch rule `{s}`")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditRun {
    pub inverted: PathBuf,
    pub class: Option<String>,
    pub prompt: Option<String>,
    pub lambda: f64,
    pub tau: Option<usize>,
    pub mode: GuidanceMode,
    pub dilation_factor: Option<usize>,
    pub switch: SwitchRule,
    pub record: Option<PathBuf>,
    pub preview_every: usize,
    pub one_pass_decode: bool,
    pub out: PathBuf,
}

impl EditArgs {
    pub fn resolve(self) -> CliResult<EditRun> {
        Ok(EditRun {
            inverted: required(self.inverted, "inverted")?,
            class: self.class,
            prompt: self.prompt,
            lambda: self.lambda.unwrap_or(0.5),
            tau: self.tau,
            mode: self.mode.unwrap_or(GuidanceMode::NdCfgPp),
            dilation_factor: self.dilation_factor,
            switch: self.switch.unwrap_or_default(),
            record: self.record,
            preview_every: self.preview_every.unwrap_or(5),
            one_pass_decode: self.one_pass_decode.unwrap_or(false),
            out: required(self.out, "out")?,
        })
    }
}

struct EditSetup {
    loaded: LoadedInversion,
    backend: Backend,
    codec: std::sync::Arc<dyn LatentCodec>,
    cond: Conditioning,
    cfg: GuidanceConfig,
}

fn edit_setup(
    inverted: &Path,
    class: Option<&str>,
    prompt: Option<&str>,
    mode: GuidanceMode,
    scale: f64,
    tau: &mut Option<usize>,
    dilation: &mut Option<usize>,
) -> CliResult<EditSetup> {
    mode.check_scale(scale)?;
    if !mode.is_interpolating() {
        return Err(tiledit_core::Error::ModeMismatch {
            mode: mode.as_str(),
            sampler: "edit",
        }
        .into());
    }
    let loaded = io::load_inverted(inverted)?;
    let backend = backend_of(&loaded)?;
    let codec = codec_of(&loaded)?;
    let cond = resolve_condition(&backend, class, prompt)?;
    let area = loaded.inv.plan.area_factor();
    let steps = loaded.inv.schedule.num_steps();
    let cfg = GuidanceConfig {
        mode,
        scale,
        tau: *tau.get_or_insert(default_tau(area, steps)),
        dilation_factor: *dilation.get_or_insert(default_dilation(area)),
    };
    cfg.validate(steps)?;
    Ok(EditSetup {
        loaded,
        backend,
        codec,
        cond,
        cfg,
    })
}

fn run_edit(
    s: &EditSetup,
    opts: &EditOptions,
) -> CliResult<(LatentTensor, LatentTensor, tiledit_core::sampler::TrajectoryRecord)> {
    let vanilla = s.backend.vanilla();
    let dilated = redilate(vanilla.clone(), s.cfg.dilation_factor)?;
    let (z0, record) = edit_latent(
        &s.loaded.inv,
        &s.cond,
        &s.cfg,
        vanilla.as_ref(),
        dilated.as_ref(),
        &s.loaded.inv.schedule,
        s.codec.as_ref(),
        opts,
    )?;
    let image = if opts.one_pass_decode {
        s.codec.decode(&z0)?
    } else {
        decode_tiled(s.codec.as_ref(), &z0, &s.loaded.inv.plan)?
    };
    Ok((z0, image, record))
}

impl EditRun {
    pub fn execute(mut self) -> CliResult<()> {
        let setup = edit_setup(
            &self.inverted,
            self.class.as_deref(),
            self.prompt.as_deref(),
            self.mode,
            self.lambda,
            &mut self.tau,
            &mut self.dilation_factor,
        )?;
        let opts = EditOptions {
            record: self.record.is_some(),
            preview_every: self.preview_every,
            switch: self.switch,
            one_pass_decode: self.one_pass_decode,
        };
        let (_, image, record) = run_edit(&setup, &opts)?;
        io::ensure_parent(&self.out)?;
        io::write_png(&self.out, &image)?;

        let mut manifest = RunManifest::new("edit", setup.loaded.inv.seed, &self)?;
        manifest.backend = Some(setup.backend.id().into());
        manifest.codec = Some(setup.codec.locator());
        manifest.schedule = Some(setup.loaded.params);
        manifest.guidance = Some(setup.cfg);
        manifest.plan = setup.loaded.manifest.plan.clone();
        manifest.input("inverted", &self.inverted);
        manifest.output("image", &self.out);
        manifest.info.insert(
            "image_dims".into(),
            toml::Value::try_from([image.height(), image.width()]).unwrap(),
        );
        if let Some(dir) = &self.record {
            io::save_trajectory(dir, &record)?;
            manifest.output("trajectory", dir);
        }
        manifest.save(&manifest_path(&self.out))?;
        println!(
            "edited {}x{} with {} lambda={} tau={} dilation={} -> {}",
            image.height(),
            image.width(),
            setup.cfg.mode,
            setup.cfg.scale,
            setup.cfg.tau,
            setup.cfg.dilation_factor,
            self.out.display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------- reconstruct

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub inverted: Option<PathBuf>,
    /// Replay the cached inversion noise instead of re-estimating it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_cache: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructRun {
    pub inverted: PathBuf,
    pub use_cache: bool,
    pub out: PathBuf,
}

impl ReconstructArgs {
    pub fn resolve(self) -> CliResult<ReconstructRun> {
        Ok(ReconstructRun {
            inverted: required(self.inverted, "inverted")?,
            use_cache: self.use_cache.unwrap_or(false),
            out: required(self.out, "out")?,
        })
    }
}

impl ReconstructRun {
    pub fn execute(self) -> CliResult<()> {
        let loaded = io::load_inverted(&self.inverted)?;
        let backend = backend_of(&loaded)?;
        let codec = codec_of(&loaded)?;
        let image = reconstruct(
            &loaded.inv,
            &loaded.inv.schedule,
            backend.vanilla().as_ref(),
            codec.as_ref(),
            self.use_cache,
        )?;
        io::ensure_parent(&self.out)?;
        io::write_png(&self.out, &image)?;

        let mut manifest = RunManifest::new("reconstruct", loaded.inv.seed, &self)?;
        manifest.backend = Some(backend.id().into());
        manifest.codec = Some(codec.locator());
        manifest.schedule = Some(loaded.params);
        manifest.plan = loaded.manifest.plan.clone();
        manifest.input("inverted", &self.inverted);
        manifest.output("image", &self.out);
        if let Ok(source) = source_image(&loaded) {
            let err = rmse(&image, &source)?;
            manifest.info.insert("source_rmse".into(), toml::Value::Float(err));
            println!("reconstruction RMSE vs source: {err:.6}");
        }
        manifest.save(&manifest_path(&self.out))
    }
}

// ---------------------------------------------------------------- demo

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoArgs {
    /// `textures` (stripes/checkers) or `two-tone`.
    #[arg(long)]
    pub world: Option<String>,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Images per class.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoRun {
    pub world: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub size: usize,
    pub count: usize,
}

impl DemoArgs {
    pub fn resolve(self) -> CliResult<DemoRun> {
        Ok(DemoRun {
            world: self.world.unwrap_or_else(|| "textures".into()),
            seed: self.seed.unwrap_or(0),
            out_dir: required(self.out_dir, "out-dir")?,
            size: self.size.unwrap_or(512),
            count: self.count.unwrap_or(1),
        })
    }
}

impl DemoRun {
    pub fn execute(self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        let mut manifest = RunManifest::new("demo", self.seed, &self)?;
        match self.world.as_str() {
            "textures" => {
                for (class, name) in corpus::TEXTURE_CLASSES.iter().enumerate() {
                    for i in 0..self.count {
                        let mut rng = rng::stream(self.seed, class as u64, i as u64);
                        let img = corpus::texture(class, self.size, self.size, &mut rng);
                        let path = self.out_dir.join(format!("{name}_{i}.png"));
                        io::write_png(&path, &img)?;
                        manifest.output(&format!("{name}_{i}"), &path);
                    }
                }
            }
            "two-tone" => {
                let world = tiledit_core::estimators::GaussianMixtureWorld::two_tone();
                let codec = codec_from_locator(crate::backend::ANALYTIC_CODEC)?;
                for (class, comp) in world.components.iter().enumerate() {
                    for i in 0..self.count {
                        let mut rng = rng::stream(self.seed, class as u64, i as u64);
                        let latent = world.sample_canvas(class, self.size, self.size, &mut rng);
                        let img = codec.decode(&latent)?;
                        let path = self.out_dir.join(format!("{}_{i}.png", comp.name));
                        io::write_png(&path, &img)?;
                        manifest.output(&format!("{}_{i}", comp.name), &path);
                    }
                }
            }
            other => return Err(CliError::usage("unknown-world", format!("no demo world `{other}`"))),
        }
        manifest.save(&self.out_dir.join("manifest.toml"))?;
        println!("wrote {} images to {}", manifest.outputs.len(), self.out_dir.display());
        Ok(())
    }
}

// ---------------------------------------------------------------- train-toy

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Output weights container.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pixel tile size the network is trained at.
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long)]
    pub codec: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub corpus_per_class: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub cond_dropout: Option<f64>,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub out: PathBuf,
    pub tile_size: usize,
    pub codec: String,
    pub hidden: usize,
    pub options: TrainOptions,
}

impl TrainArgs {
    pub fn resolve(self) -> CliResult<TrainRun> {
        let d = TrainOptions::default();
        Ok(TrainRun {
            out: required(self.out, "out")?,
            tile_size: self.tile_size.unwrap_or(256),
            codec: self.codec.unwrap_or_else(|| "box:8".into()),
            hidden: self.hidden.unwrap_or(16),
            options: TrainOptions {
                epochs: self.epochs.unwrap_or(d.epochs),
                corpus_per_class: self.corpus_per_class.unwrap_or(d.corpus_per_class),
                batch_size: self.batch_size.unwrap_or(d.batch_size),
                learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                cond_dropout: self.cond_dropout.unwrap_or(d.cond_dropout),
                seed: self.seed.unwrap_or(d.seed),
            },
        })
    }
}

impl TrainRun {
    pub fn execute(self) -> CliResult<()> {
        let codec = codec_from_locator(&self.codec)?;
        let f = codec.spatial_factor();
        if !self.tile_size.is_multiple_of(f) {
            return Err(tiledit_core::Error::InvalidFactor {
                tile: self.tile_size,
                factor: f,
            }
            .into());
        }
        let mut config = ToyConfig::textures(codec.latent_channels(), self.tile_size / f);
        config.hidden = self.hidden;
        // Train over every training timestep so any sampler step count can be used later.
        let params = ScheduleParams::stable_diffusion(1000);
        let (net, report) = train_toy(config, codec.as_ref(), &params.build()?, &self.options)?;

        let mut manifest = RunManifest::new("train-toy", self.options.seed, &self)?;
        manifest.backend = Some("toy".into());
        manifest.codec = Some(self.codec.clone());
        manifest.schedule = Some(params);
        manifest.info.insert(
            "epoch_losses".into(),
            toml::Value::try_from(&report.epoch_losses).unwrap(),
        );
        io::save_toy(&self.out, &net, &mut manifest)?;
        for (i, loss) in report.epoch_losses.iter().enumerate() {
            println!("epoch {:>3}  loss {loss:.5}", i + 1);
        }
        println!("wrote {} parameters to {}", net.to_flat().len(), self.out.display());
        Ok(())
    }
}

// ---------------------------------------------------------------- plot

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotArgs {
    /// Trajectory directory written by `edit --record`.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Panel height in pixels.
    #[arg(long)]
    pub panel_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotRun {
    pub trajectory: PathBuf,
    pub out: PathBuf,
    pub panel_size: usize,
}

impl PlotArgs {
    pub fn resolve(self) -> CliResult<PlotRun> {
        Ok(PlotRun {
            trajectory: required(self.trajectory, "trajectory")?,
            out: required(self.out, "out")?,
            panel_size: self.panel_size.unwrap_or(192),
        })
    }
}

impl PlotRun {
    pub fn execute(self) -> CliResult<()> {
        let index = io::load_trajectory_index(&self.trajectory)?;
        let grid = plot::trajectory_grid(&self.trajectory, &index, self.panel_size)?;
        io::ensure_parent(&self.out)?;
        grid.image.save_with_format(&self.out, image::ImageFormat::Png)?;
        let mut manifest = RunManifest::new("plot", index.seed, &self)?;
        manifest.guidance = Some(index.guidance);
        manifest.input("trajectory", &self.trajectory);
        manifest.output("grid", &self.out);
        manifest
            .info
            .insert("panels".into(), toml::Value::Integer(grid.columns as i64));
        manifest.save(&manifest_path(&self.out))?;
        println!("wrote {} panels per row to {}", grid.columns, self.out.display());
        Ok(())
    }
}

// ---------------------------------------------------------------- sweep-lambda

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepArgs {
    #[arg(long)]
    pub inverted: Option<PathBuf>,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub mode: Option<GuidanceMode>,
    #[arg(long)]
    pub dilation_factor: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub inverted: PathBuf,
    pub values: Vec<f64>,
    pub class: Option<String>,
    pub prompt: Option<String>,
    pub tau: Option<usize>,
    pub mode: GuidanceMode,
    pub dilation_factor: Option<usize>,
    pub out_dir: PathBuf,
}

impl SweepArgs {
    pub fn resolve(self) -> CliResult<SweepRun> {
        Ok(SweepRun {
            inverted: required(self.inverted, "inverted")?,
            values: self.values.unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            class: self.class,
            prompt: self.prompt,
            tau: self.tau,
            mode: self.mode.unwrap_or(GuidanceMode::NdCfgPp),
            dilation_factor: self.dilation_factor,
            out_dir: required(self.out_dir, "out-dir")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub source_rmse: f64,
    pub target_distance: Option<f64>,
}

impl SweepRun {
    pub fn execute(mut self) -> CliResult<()> {
        for &v in &self.values {
            self.mode.check_scale(v)?;
        }
        std::fs::create_dir_all(&self.out_dir)?;
        let first = self.values.first().copied().unwrap_or(0.0);
        let mut setup = edit_setup(
            &self.inverted,
            self.class.as_deref(),
            self.prompt.as_deref(),
            self.mode,
            first,
            &mut self.tau,
            &mut self.dilation_factor,
        )?;
        let source = source_image(&setup.loaded)?;
        let target = match setup.cond {
            Conditioning::ClassLabel(k) => Some(k),
            _ => None,
        };

        let mut rows = Vec::with_capacity(self.values.len());
        let mut manifest = RunManifest::new("sweep-lambda", setup.loaded.inv.seed, &self)?;
        for &lambda in &self.values {
            setup.cfg.scale = lambda;
            let (z0, image, _) = run_edit(&setup, &EditOptions::default())?;
            let path = self.out_dir.join(format!("lambda_{lambda:.3}.png"));
            io::write_png(&path, &image)?;
            manifest.output(&format!("lambda_{lambda:.3}"), &path);
            let target_distance = match (setup.backend.world(), target) {
                (Some(world), Some(k)) => Some(world.mahalanobis(&z0, k)?),
                _ => None,
            };
            rows.push(SweepRow {
                lambda,
                source_rmse: rmse(&image, &source)?,
                target_distance,
            });
        }

        let mut report = String::from("lambda,source_rmse,source_psnr_db,target_distance\n");
        for r in &rows {
            let dist = r
                .target_distance
                .map(|d| format!("{d:.6}"))
                .unwrap_or_else(|| "nan".into());
            report.push_str(&format!(
                "{:.3},{:.6},{:.3},{dist}\n",
                r.lambda,
                r.source_rmse,
                psnr(r.source_rmse)
            ));
        }
        let report_path = self.out_dir.join("report.csv");
        std::fs::write(&report_path, &report)?;
        print!("{report}");

        manifest.backend = Some(setup.backend.id().into());
        manifest.codec = Some(setup.codec.locator());
        manifest.schedule = Some(setup.loaded.params);
        setup.cfg.scale = first;
        manifest.guidance = Some(setup.cfg);
        manifest.plan = setup.loaded.manifest.plan.clone();
        manifest.input("inverted", &self.inverted);
        manifest.output("report", &report_path);
        manifest.save(&self.out_dir.join("manifest.toml"))
    }
}

// ---------------------------------------------------------------- rerun

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// Manifest written by any command.
    #[arg(long)]
    pub manifest: PathBuf,
}

impl RerunArgs {
    pub fn execute(self) -> CliResult<()> {
        let m = RunManifest::load(&self.manifest)?;
        match m.command.as_str() {
            "invert" => m.run_as::<InvertRun>()?.execute(),
            "edit" => m.run_as::<EditRun>()?.execute(),
            "reconstruct" => m.run_as::<ReconstructRun>()?.execute(),
            "demo" => m.run_as::<DemoRun>()?.execute(),
            "train-toy" => m.run_as::<TrainRun>()?.execute(),
            "plot" => m.run_as::<PlotRun>()?.execute(),
            "sweep-lambda" => m.run_as::<SweepRun>()?.execute(),
            other => Err(CliError::usage("bad-manifest", format!("unknown command `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_area_factor() {
        assert_eq!(default_tau(4, 50), 10);
        assert_eq!(default_tau(16, 50), 37);
        assert_eq!(default_tau(64, 50), 37);
        assert_eq!(default_tau(16, 20), 20);
        assert_eq!(default_dilation(1), 1);
        assert_eq!(default_dilation(4), 2);
        assert_eq!(default_dilation(16), 4);
    }

    #[test]
    fn seeds_fit_in_manifest_integers() {
        assert_eq!(parse_seed("42"), Ok(42));
        assert!(parse_seed("-1").is_err());
        assert!(parse_seed("18446744073709551615").is_err());
    }
}
