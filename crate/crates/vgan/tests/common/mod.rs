#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use vgan::run::{DataSource, RunConfig};
use vgan_core::discriminator::DiscriminatorConfig;
use vgan_core::generator::{GeneratorConfig, TransformerConfig};
use vgan_core::training::TrainConfig;

/// A run small enough to train in seconds: 16³ patches, two phantoms.
pub fn toy_run(seed: u64, steps: usize) -> RunConfig {
    let generator = GeneratorConfig {
        base_channels: 4,
        num_down: 3,
        transformer: TransformerConfig {
            num_layers: 1,
            embed_dim: 16,
            num_heads: 2,
            ffn_hidden: 32,
        },
        patch: [16, 16, 16],
        ..GeneratorConfig::default()
    };
    RunConfig {
        training: TrainConfig {
            generator,
            discriminator: DiscriminatorConfig {
                base_channels: 4,
                max_channels: 16,
                ..DiscriminatorConfig::default()
            },
            batch_size: 1,
            epochs: steps,
            max_steps: Some(steps),
            seed,
            ..TrainConfig::default()
        },
        data: DataSource::Phantoms {
            count: 2,
            seed,
            extents: [18, 16, 20],
            grade_ratio: [1, 1],
        },
        checkpoint_every: 2,
    }
}

pub fn vgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgan"))
        .args(args)
        .env_remove("VGAN_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vgan")
}

/// Run and require success, returning stdout.
pub fn vgan_ok(args: &[&str]) -> String {
    let out = vgan(args);
    assert!(
        out.status.success(),
        "vgan {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn write_config(path: &Path, cfg: &RunConfig) {
    std::fs::write(path, cfg.to_json()).unwrap();
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
