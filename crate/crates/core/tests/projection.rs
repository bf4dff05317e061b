use ganblend_core::projector::{project, render_latent, toonify, LatentSpace, ProjectionConfig, Projector};
use ganblend_core::rng::{self, domain};
use ganblend_core::{
    blend_checkpoints, forward, forward_w, init_random, synth_transfer, BlendSchedule, Checkpoint,
    GeneratorConfig, Generator, Image, MappingPolicy, NoiseSpec, Source,
};

fn target(ckpt: &Checkpoint, seed: u64) -> Image {
    let z = rng::normal_vec(domain::SAMPLE, seed, "oracle", ckpt.meta().latent_dim);
    forward(ckpt, &z, NoiseSpec::new(seed)).unwrap()
}

fn cfg(steps: usize, seed: u64) -> ProjectionConfig {
    ProjectionConfig {
        steps,
        seed,
        ..ProjectionConfig::default()
    }
}

#[test]
fn first_step_shrinks_with_learning_rate() {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let t = target(&base, 1);
    let moved = |lr: f32| {
        let c = ProjectionConfig {
            learning_rate: lr,
            ..cfg(1, 1)
        };
        let mut p = Projector::new(&base, &t, &c).unwrap();
        let before = p.latent();
        p.step().unwrap();
        let after = p.latent();
        before.iter().zip(&after).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
    };
    let (big, small) = (moved(1e-2), moved(1e-5));
    // Adam's first step moves every coordinate by about lr.
    let dim = 64f64.sqrt();
    assert!((big / (1e-2 * dim) - 1.0).abs() < 0.05, "{big}");
    assert!((big / small / 1e3 - 1.0).abs() < 0.05, "{big} / {small}");
}

#[test]
fn w_latents_bypass_the_mapping_network() {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let t = target(&base, 2);
    let result = project(&base, &t, &cfg(2, 2)).unwrap();
    assert_eq!(result.space, LatentSpace::W);

    let (meta, mut params) = base.clone().into_parts();
    for (name, tensor) in params.iter_mut() {
        if name.starts_with("mapping.") {
            *tensor = tensor.map(|v| v * 2.0 - 0.5);
        }
    }
    let remapped = Checkpoint::new(meta, params).unwrap();
    let a = forward_w(&base, &result.latent, NoiseSpec::new(2)).unwrap();
    let b = forward_w(&remapped, &result.latent, NoiseSpec::new(2)).unwrap();
    assert!(a.bit_eq(&b));
    assert!(a.bit_eq(&result.reconstruction));
}

#[test]
fn z_space_starts_at_origin_and_renders_through_mapping() {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let t = target(&base, 3);
    let c = ProjectionConfig {
        space: LatentSpace::Z,
        ..cfg(1, 3)
    };
    let p = Projector::new(&base, &t, &c).unwrap();
    assert!(p.latent().iter().all(|&v| v == 0.0));
    let result = project(&base, &t, &c).unwrap();
    assert_eq!(result.loss_trace.len(), 1);
    let direct = forward(&base, &result.latent, NoiseSpec::new(3)).unwrap();
    assert!(direct.bit_eq(&result.reconstruction));
    assert!(render_latent(&base, LatentSpace::Z, &result.latent, 3).unwrap().bit_eq(&direct));
}

#[test]
fn toonify_with_identical_models_returns_the_reconstruction() {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let t = target(&base, 4);
    let out = toonify(&base, &base, &t, &cfg(3, 4)).unwrap();
    assert!(out.image.bit_eq(&out.projection.reconstruction));
    assert_eq!(out.image.size(), t.size());
}

#[test]
fn toonify_through_a_swap_changes_only_the_synthesis() {
    let cfg_g = GeneratorConfig::desk();
    let base = init_random(&cfg_g, 0);
    let transfer = synth_transfer(&base, 0.5, 1).unwrap();
    let blended = blend_checkpoints(&base, &transfer, &BlendSchedule::swap(16, Source::Transfer), MappingPolicy::Base)
        .unwrap();
    let t = target(&base, 5);
    let c = cfg(3, 5);
    let first = toonify(&base, &blended, &t, &c).unwrap();
    let again = toonify(&base, &blended, &t, &c).unwrap();
    assert_eq!(first, again);
    assert!(first.image.bit_eq(&again.image));
    assert!(!first.image.bit_eq(&first.projection.reconstruction));

    let z = rng::normal_vec(domain::SAMPLE, 5, "oracle", 64);
    let (gb, gx) = (Generator::new(&base).unwrap(), Generator::new(&blended).unwrap());
    assert_eq!(gb.mapping(&z).unwrap(), gx.mapping(&z).unwrap());
    let w = &first.projection.latent;
    for r in [4, 8, 16] {
        let nb = gb.noise(NoiseSpec::new(5));
        let nx = gx.noise(NoiseSpec::new(5));
        let tb = gb.synthesize_tap(w, &nb, r).unwrap();
        let tx = gx.synthesize_tap(w, &nx, r).unwrap();
        assert!(!tb.bit_eq(&tx), "tap {r}");
    }
}

/// Recovery from a generated target at full length. Seed 0 is one of the
/// seeds the optimizer recovers (final MSE about 1e-11 at the time of
/// writing); see the acceptance suite for the ten-seed sweep.
#[test]
fn recovers_a_generated_target() {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let t = target(&base, 0);
    let result = project(&base, &t, &cfg(300, 0)).unwrap();
    assert_eq!(result.loss_trace.len(), 300);
    assert!(result.final_loss <= 1e-3, "{}", result.final_loss);
    assert!(result.final_loss <= result.loss_trace[0] as f64);
    assert!((t.mse(&result.reconstruction).unwrap() - result.final_loss).abs() < 1e-12);
}
