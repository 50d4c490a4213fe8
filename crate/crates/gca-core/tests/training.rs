//! Training-loop integration checks: loss descent on a small instance and
//! latent recovery on an easy configuration.

use gca_core::gca::{train_gca, TrainConfig};
use gca_core::harness::{run_experiment, ExperimentConfig, Method};
use gca_core::rng::stream_rng;
use gca_core::synthdata::{
    build_link_model, generate_dataset, LatentConfig, LatentKind, MixingNetwork,
};

#[test]
fn gca_loss_descends_on_smoke_config() {
    let latent_cfg = LatentConfig::new(LatentKind::IndependentLaplace, 2, 500).unwrap();
    let mixing = MixingNetwork::init(2, 2, &mut stream_rng(77, "mixing-init")).unwrap();
    let link_model = build_link_model(2, 4, &mut stream_rng(77, "links-model")).unwrap();
    let ds = generate_dataset(
        &latent_cfg,
        &mixing,
        link_model,
        &mut stream_rng(77, "latents"),
        77,
    )
    .unwrap();
    let cfg = TrainConfig {
        minibatch_size: 100,
        iterations: 3000,
        eval_every: 10,
        seed: 1,
        ..TrainConfig::default()
    };
    let (_, trace) = train_gca(&ds, &cfg).unwrap();
    assert!(trace.losses.len() >= 200);
    let head: f64 = trace.losses[..100].iter().sum::<f64>() / 100.0;
    let tail_start = trace.losses.len() - 100;
    let tail: f64 = trace.losses[tail_start..].iter().sum::<f64>() / 100.0;
    assert!(
        tail < head,
        "loss did not descend: first-100 mean {head}, last-100 mean {tail}"
    );
}

#[test]
fn gca_recovers_one_dimensional_latent() {
    let cfg = ExperimentConfig {
        method: Method::Gca,
        d_s: 1,
        d_x: 1,
        k_max: 2,
        n: 1000,
        n_test: 10_000,
        train: TrainConfig {
            minibatch_size: 100,
            iterations: 5000,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::desk_default()
    };
    let row = run_experiment(&cfg, 42).unwrap();
    assert!(row.mcc > 0.9, "mcc = {}", row.mcc);
}
