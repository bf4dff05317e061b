//! Latent recovery by optimization, and the toonify pipeline built on it.
//!
//! Loss is pixel MSE against the target. Gradients are central finite
//! differences, one pair of forward passes per latent coordinate, so the
//! generator needs no backward pass. Adam drives the updates and the best
//! latent seen is returned.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::generator::{Generator, NoiseBank, NoiseSpec};
use crate::par::{self, ExecMode};
use crate::rng::{self, domain};
use crate::tensor::{mse_slices, Image};

/// Number of mapped samples averaged for the W-space starting point.
pub const W_AVG_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    Z,
    #[default]
    W,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub space: LatentSpace,
    pub steps: usize,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    /// Finite-difference half step is `fd_step * (1 + |x_i|)`.
    pub fd_step: f32,
    /// Fraction of the run over which the learning rate rises from 0.
    pub lr_rampup: f32,
    /// Fraction of the run over which it falls back to 0 (cosine).
    pub lr_rampdown: f32,
    /// Gaussian jitter added to the latent where the gradient is probed,
    /// as a multiple of the latent spread. Decays quadratically to 0.
    pub latent_noise: f32,
    /// Fraction of the run after which the jitter is 0.
    pub latent_noise_ramp: f32,
    /// Seeds the noise planes (held fixed for the run) and the W-space
    /// starting point.
    pub seed: u64,
    /// How the finite-difference probes of one step are evaluated. Does
    /// not affect results.
    pub exec: ExecMode,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            space: LatentSpace::W,
            steps: 300,
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fd_step: 1e-3,
            lr_rampup: 0.0,
            lr_rampdown: 0.0,
            latent_noise: 0.0,
            latent_noise_ramp: 0.75,
            seed: 0,
            exec: ExecMode::Parallel,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad(format!("fd_step {} must be positive", self.fd_step));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        for (name, f) in [
            ("lr_rampup", self.lr_rampup),
            ("lr_rampdown", self.lr_rampdown),
            ("latent_noise_ramp", self.latent_noise_ramp),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} {f} must be in [0, 1]"));
            }
        }
        if !(self.latent_noise >= 0.0 && self.latent_noise.is_finite()) {
            return bad(format!("latent_noise {} must be >= 0", self.latent_noise));
        }
        Ok(())
    }

    /// Learning rate at step `t` of `steps`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        let frac = t as f64 / self.steps as f64;
        let mut ramp = 1.0;
        if self.lr_rampdown > 0.0 {
            let down = ((1.0 - frac) / self.lr_rampdown as f64).min(1.0);
            ramp = 0.5 - 0.5 * (std::f64::consts::PI * down).cos();
        }
        if self.lr_rampup > 0.0 {
            ramp *= (frac / self.lr_rampup as f64).min(1.0);
        }
        self.learning_rate as f64 * ramp
    }

    /// Latent jitter scale at step `t`, relative to the latent spread.
    pub fn latent_noise_at(&self, t: usize) -> f64 {
        if self.latent_noise == 0.0 || self.latent_noise_ramp == 0.0 {
            return 0.0;
        }
        let frac = t as f64 / self.steps as f64;
        self.latent_noise as f64 * (1.0 - frac / self.latent_noise_ramp as f64).max(0.0).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub space: LatentSpace,
    pub latent: Vec<f32>,
    /// MSE before each update, one entry per step.
    pub loss_trace: Vec<f32>,
    /// MSE of `reconstruction`, the lowest loss seen.
    pub final_loss: f64,
    pub reconstruction: Image,
}

/// On-disk form of a recovered latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFile {
    pub space: LatentSpace,
    pub values: Vec<f32>,
    pub final_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

impl LatentFile {
    pub fn from_result(result: &ProjectionResult, model_id: Option<String>) -> Self {
        LatentFile {
            space: result.space,
            values: result.latent.clone(),
            final_loss: result.final_loss,
            model_id,
        }
    }
}

#[derive(Debug, Clone)]
struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: &ProjectionConfig, dim: usize) -> Self {
        Adam {
            beta1: cfg.adam_beta1 as f64,
            beta2: cfg.adam_beta2 as f64,
            eps: cfg.adam_eps as f64,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn update(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((x, &g), m), v) in x.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Mean of `W_AVG_SAMPLES` mapped latents drawn from the `seed` streams,
/// and their RMS distance from that mean.
pub fn mean_w(generator: &Generator, seed: u64) -> Result<(Vec<f32>, f64)> {
    let cfg = generator.config();
    let ws = (0..W_AVG_SAMPLES)
        .map(|k| {
            let z = rng::normal_vec(domain::PROJECT, seed, &format!("w_avg/{k}"), cfg.latent_dim);
            generator.mapping(&z)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = W_AVG_SAMPLES as f64;
    let mut mean = vec![0.0f64; cfg.style_dim];
    for w in &ws {
        mean.iter_mut().zip(w).for_each(|(m, &v)| *m += v as f64 / n);
    }
    let spread = (ws
        .iter()
        .map(|w| w.iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((mean.into_iter().map(|m| m as f32).collect(), spread))
}

/// One projection run, advanced a step at a time.
pub struct Projector<'t> {
    generator: Generator,
    noise: NoiseBank,
    target: &'t Image,
    cfg: ProjectionConfig,
    x: Vec<f64>,
    /// Latent spread, scales the probe jitter.
    spread: f64,
    adam: Adam,
    trace: Vec<f32>,
    best: Option<(f64, Vec<f32>)>,
}

impl<'t> Projector<'t> {
    pub fn new(ckpt: &Checkpoint, target: &'t Image, cfg: &ProjectionConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(ckpt)?;
        let res = ckpt.meta().max_resolution as usize;
        if target.size() != res {
            return Err(Error::Shape(format!(
                "target is {0}x{0}, model renders {res}x{res}",
                target.size()
            )));
        }
        let (start, spread) = match cfg.space {
            LatentSpace::W => mean_w(&generator, cfg.seed)?,
            LatentSpace::Z => {
                let dim = ckpt.meta().latent_dim;
                (vec![0.0; dim], (dim as f64).sqrt())
            }
        };
        let noise = generator.noise(NoiseSpec::new(cfg.seed));
        Ok(Projector {
            adam: Adam::new(cfg, start.len()),
            x: start.iter().map(|&v| v as f64).collect(),
            spread,
            generator,
            noise,
            target,
            cfg: cfg.clone(),
            trace: Vec::with_capacity(cfg.steps),
            best: None,
        })
    }

    /// The current iterate.
    pub fn latent(&self) -> Vec<f32> {
        self.x.iter().map(|&v| v as f32).collect()
    }

    pub fn steps_taken(&self) -> usize {
        self.trace.len()
    }

    pub fn render(&self, latent: &[f32]) -> Result<Image> {
        match self.cfg.space {
            LatentSpace::W => self.generator.synthesize(latent, &self.noise),
            LatentSpace::Z => self.generator.forward(latent, &self.noise),
        }
    }

    pub fn loss_at(&self, latent: &[f32]) -> Result<f64> {
        let loss = mse_slices(self.render(latent)?.data(), self.target.data());
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite(format!("projection loss after {} steps", self.trace.len())))
        }
    }

    /// Central-difference gradient at `at`. The denominator is the actual
    /// f32 distance between the two probes.
    pub fn gradient_at(&self, at: &[f64]) -> Result<Vec<f64>> {
        let base: Vec<f32> = at.iter().map(|&v| v as f32).collect();
        let dim = base.len();
        let probes = par::try_map_indexed(self.cfg.exec, 2 * dim, |k| {
            let (i, sign) = (k / 2, if k % 2 == 0 { 1.0 } else { -1.0 });
            let h = self.cfg.fd_step as f64 * (1.0 + at[i].abs());
            let mut probe = base.clone();
            probe[i] = (at[i] + sign * h) as f32;
            Ok::<_, Error>((probe[i], self.loss_at(&probe)?))
        })?;
        Ok(probes
            .chunks_exact(2)
            .map(|pair| {
                let ((xp, lp), (xm, lm)) = (pair[0], pair[1]);
                (lp - lm) / (xp as f64 - xm as f64)
            })
            .collect())
    }

    /// Gradient at the current iterate.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        self.gradient_at(&self.x)
    }

    fn consider(&mut self, loss: f64, latent: Vec<f32>) {
        if self.best.as_ref().is_none_or(|(b, _)| loss < *b) {
            self.best = Some((loss, latent));
        }
    }

    /// Evaluate the loss, then take one Adam step. Returns the loss before
    /// the step.
    pub fn step(&mut self) -> Result<f64> {
        let latent = self.latent();
        let loss = self.loss_at(&latent)?;
        self.consider(loss, latent);
        let t = self.trace.len();
        let jitter = self.cfg.latent_noise_at(t) * self.spread / (self.x.len() as f64).sqrt();
        let grad = if jitter > 0.0 {
            let n = rng::normal_vec(domain::PROJECT, self.cfg.seed, &format!("jitter/{t}"), self.x.len());
            let at: Vec<f64> = self.x.iter().zip(n).map(|(&x, n)| x + jitter * n as f64).collect();
            self.gradient_at(&at)?
        } else {
            self.gradient()?
        };
        self.adam.update(&mut self.x, &grad, self.cfg.learning_rate_at(t));
        self.trace.push(loss as f32);
        Ok(loss)
    }

    /// Run the remaining steps and pick the best latent seen, including the
    /// final iterate.
    pub fn run(mut self) -> Result<ProjectionResult> {
        while self.trace.len() < self.cfg.steps {
            self.step()?;
        }
        let latent = self.latent();
        let loss = self.loss_at(&latent)?;
        self.consider(loss, latent);
        let (final_loss, latent) = self.best.take().expect("at least one step ran");
        let reconstruction = self.render(&latent)?;
        Ok(ProjectionResult {
            space: self.cfg.space,
            latent,
            loss_trace: self.trace,
            final_loss,
            reconstruction,
        })
    }
}

pub fn project(ckpt: &Checkpoint, target: &Image, cfg: &ProjectionConfig) -> Result<ProjectionResult> {
    Projector::new(ckpt, target, cfg)?.run()
}

/// Render `latent` (as produced by a projection in `space`) with `ckpt`,
/// using the noise of `seed`.
pub fn render_latent(ckpt: &Checkpoint, space: LatentSpace, latent: &[f32], seed: u64) -> Result<Image> {
    let g = Generator::new(ckpt)?;
    let noise = g.noise(NoiseSpec::new(seed));
    match space {
        LatentSpace::W => g.synthesize(latent, &noise),
        LatentSpace::Z => g.forward(latent, &noise),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToonifyResult {
    pub projection: ProjectionResult,
    /// The blended model evaluated at the recovered latent.
    pub image: Image,
}

/// Project `target` into `base`, then evaluate `blended` at the recovered
/// latent with the same noise.
pub fn toonify(base: &Checkpoint, blended: &Checkpoint, target: &Image, cfg: &ProjectionConfig) -> Result<ToonifyResult> {
    if base.meta() != blended.meta() {
        return Err(Error::ConfigMismatch("base and blended checkpoints have different architectures".into()));
    }
    let projection = project(base, target, cfg)?;
    let image = render_latent(blended, projection.space, &projection.latent, cfg.seed)?;
    Ok(ToonifyResult { projection, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::GeneratorConfig;
    use crate::generator::{forward, init_random};

    fn short(steps: usize) -> ProjectionConfig {
        ProjectionConfig {
            steps,
            ..ProjectionConfig::default()
        }
    }

    fn target(ckpt: &Checkpoint, seed: u64) -> Image {
        let z = rng::normal_vec(domain::SAMPLE, seed, "target", ckpt.meta().latent_dim);
        forward(ckpt, &z, NoiseSpec::new(0)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::default().validate().is_ok());
        assert!(short(0).validate().is_err());
        let mut c = short(1);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = short(1);
        c.fd_step = -1.0;
        assert!(c.validate().is_err());
        let mut c = short(1);
        c.adam_beta2 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: ProjectionConfig = serde_json::from_str(r#"{"steps":5,"space":"z"}"#).unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.space, LatentSpace::Z);
        assert_eq!(c.learning_rate, 0.05);
        assert!(serde_json::from_str::<ProjectionConfig>(r#"{"stepz":5}"#).is_err());
    }

    #[test]
    fn one_step_trace_and_best_so_far() {
        let ckpt = init_random(&GeneratorConfig::desk(), 0);
        let t = target(&ckpt, 1);
        let r = project(&ckpt, &t, &short(3)).unwrap();
        assert_eq!(r.loss_trace.len(), 3);
        assert!(r.final_loss <= r.loss_trace[0] as f64);
        assert_eq!(r.final_loss, r.reconstruction.mse(&t).unwrap());
        let again = project(&ckpt, &t, &short(3)).unwrap();
        assert_eq!(r, again);
        assert_eq!(project(&ckpt, &t, &short(1)).unwrap().loss_trace.len(), 1);
    }

    #[test]
    fn exec_modes_agree() {
        let ckpt = init_random(&GeneratorConfig::desk(), 0);
        let t = target(&ckpt, 2);
        let mut seq = short(2);
        seq.exec = ExecMode::Sequential;
        assert_eq!(project(&ckpt, &t, &seq).unwrap(), project(&ckpt, &t, &short(2)).unwrap());
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let cfg = short(1);
        let mut adam = Adam::new(&cfg, 3);
        let mut x = vec![0.0; 3];
        adam.update(&mut x, &[2.0, -0.5, 0.0], 0.05);
        assert!((x[0] + 0.05).abs() < 1e-6);
        assert!((x[1] - 0.05).abs() < 1e-6);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn mismatches_rejected() {
        let ckpt = init_random(&GeneratorConfig::desk(), 0);
        let small = Image::new(32, vec![0.0; 3 * 32 * 32]).unwrap();
        assert!(matches!(project(&ckpt, &small, &short(1)), Err(Error::Shape(_))));
        let mut cfg = GeneratorConfig::desk();
        cfg.max_resolution = 32;
        cfg.channels_per_band.remove(&64);
        let other = init_random(&cfg, 0);
        let t = target(&ckpt, 0);
        assert!(matches!(toonify(&ckpt, &other, &t, &short(1)), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn latent_file_json() {
        let f = LatentFile {
            space: LatentSpace::W,
            values: vec![0.5, -1.0],
            final_loss: 0.25,
            model_id: Some("m1".into()),
        };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"space":"w","values":[0.5,-1.0],"final_loss":0.25,"model_id":"m1"}"#);
        assert_eq!(serde_json::from_str::<LatentFile>(&s).unwrap(), f);
    }
}
