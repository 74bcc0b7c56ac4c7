use sdsr::events::PolarityMode;
use sdsr::network::{Mode, Network, NetworkConfig};
use sdsr::trainer::{evaluate, moving_bar_pairs, prepare_all, train, BarDataset, Sample, TrainConfig};

fn bars(count: usize, seed: u64) -> BarDataset {
    BarDataset {
        width: 16,
        height: 16,
        count,
        speed: 0.4,
        speed_jitter: 0.1,
        duration_ms: 40.0,
        polarity: PolarityMode::Random,
        seed,
    }
}

fn small_config(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        steps: 40,
        bin_ms: 20.0,
        lr_decay_every: 1000,
        lr0: 0.03,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn samples(cfg: &TrainConfig, count: usize, seed: u64) -> Vec<Sample> {
    prepare_all(moving_bar_pairs(&bars(count, seed)).unwrap(), cfg).unwrap()
}

fn net(mode: Mode) -> Network {
    Network::build(NetworkConfig::new(mode, 8, 8)).unwrap()
}

#[test]
fn single_pair_overfits() {
    let cfg = small_config(50, 1);
    let data = samples(&cfg, 1, 7);
    for mode in [Mode::Sdnn, Mode::Ann] {
        let mut n = net(mode);
        let history = train(&mut n, &data, &cfg, |_, _| Ok(())).unwrap();
        let (first, last) = (history[0].loss, history.last().unwrap().loss);
        assert!(last <= 0.1 * first, "{mode}: loss {first} -> {last}");
    }
}

#[test]
fn training_beats_the_untrained_network_on_held_out_bars() {
    let cfg = small_config(8, 8);
    let train_set = samples(&cfg, 24, 1);
    let test_set = samples(&cfg, 12, 2);
    let mut n = net(Mode::Sdnn);
    let before = evaluate(&n, &test_set, &cfg, &[]).unwrap().rmse;
    train(&mut n, &train_set, &cfg, |_, _| Ok(())).unwrap();
    let after = evaluate(&n, &test_set, &cfg, &[]).unwrap().rmse;
    assert!(after < before, "rmse {before} -> {after}");
}

#[test]
fn training_is_reproducible() {
    let cfg = small_config(2, 4);
    let data = samples(&cfg, 6, 3);
    let run = || {
        let mut n = net(Mode::Sdnn);
        let h = train(&mut n, &data, &cfg, |_, _| Ok(())).unwrap();
        (h, n.flat_params())
    };
    assert_eq!(run(), run());
}

#[test]
fn bar_dataset_prefixes_agree() {
    let small = moving_bar_pairs(&bars(3, 9)).unwrap();
    let large = moving_bar_pairs(&bars(5, 9)).unwrap();
    assert_eq!(small[..], large[..3]);
    for p in &large {
        p.validate().unwrap();
        assert!(!p.hr.is_empty());
    }
}
