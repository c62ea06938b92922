// scratch benchmark
use igaf_core::data::{synth_dataset, DatasetManifest, Split};
use igaf_core::nn::ModelConfig;
use igaf_core::optim::Schedule;
use igaf_core::train::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let dir = std::env::temp_dir().join("igaf_bench");
    let _ = std::fs::remove_dir_all(&dir);
    synth_dataset(8, 128, 0, &dir).unwrap();
    let manifest = DatasetManifest::load(&dir.join("manifest.tsv"), Split::Train, 4).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig { channels: 16, n_fe: 2, ..Default::default() },
        schedule: Schedule::default(),
        batch_size: 1,
        patch: 128,
        epochs: 2,
        seed: 0,
        eval_every: 0,
        checkpoint_dir: dir.join("run"),
    };
    let t0 = Instant::now();
    let report = train(&cfg, &manifest, |s| {
        eprintln!("epoch {} mean_l1 {:.6} ({:.1?})", s.epoch, s.mean_l1, t0.elapsed())
    }).unwrap();
    eprintln!("2 epochs in {:.1?} -> projected 60 epochs {:.1?}", t0.elapsed(), t0.elapsed() * 30);
    eprintln!("first epoch mean {:.6}", report.epochs[0].mean_l1);
}
