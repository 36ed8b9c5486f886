#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arst_core::image_io::{encode_png, to_tensor};
use arst_core::networks::{ExtractorSpec, PredictorConfig, StylizerConfig};
use arst_core::synth;
use arst_core::training::{initial_checkpoint, Checkpoint, TrainConfig};

/// Small networks so CLI runs finish in seconds.
pub const SMALL_TOML: &str = r#"
image_size = 16
batch_size = 2

[stylizer]
channels = [4, 4, 4]
residual_blocks = 1
edge_kernel = 9

[predictor]
width = 8
hidden_layers = 2

[extractor]
kind = "toy"
seed = 3
widths = [4, 4, 4]
"#;

pub fn write_png(path: &Path, img: &arst_core::image_io::RgbImage) {
    fs::write(path, encode_png(img).unwrap()).unwrap();
}

/// Style image, `n` content images and the small config under `dir`.
pub struct Workspace {
    pub root: PathBuf,
    pub style: PathBuf,
    pub content: PathBuf,
    pub config: PathBuf,
}

pub fn workspace(dir: &Path, n: u64) -> Workspace {
    let content = dir.join("content");
    fs::create_dir_all(&content).unwrap();
    for i in 0..n {
        write_png(
            &content.join(format!("c{i:03}.png")),
            &synth::content_image(i, 24),
        );
    }
    let style = dir.join("style.png");
    write_png(&style, &synth::style_image(5, 32));
    let config = dir.join("small.toml");
    fs::write(&config, SMALL_TOML).unwrap();
    Workspace {
        root: dir.to_path_buf(),
        style,
        content,
        config,
    }
}

pub fn arst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arst"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        batch_size: 2,
        stylizer: StylizerConfig {
            channels: [4, 4, 4],
            residual_blocks: 1,
            edge_kernel: 9,
        },
        predictor: PredictorConfig {
            width: 8,
            hidden_layers: 2,
            ..PredictorConfig::full()
        },
        extractor: ExtractorSpec::Toy {
            seed: 3,
            widths: [4, 4, 4],
        },
        ..TrainConfig::default()
    }
}

/// Untrained checkpoint with random but fixed weights.
pub fn small_checkpoint(seed: u64) -> Checkpoint {
    let config = TrainConfig {
        seed,
        ..small_config()
    };
    let style = to_tensor(&[&synth::style_image(5, 16)]).unwrap();
    initial_checkpoint(&config, &style).unwrap()
}
