//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use ttrnn_core::data::{write_idx, ImageDataset, MNIST_VALIDATION};
use ttrnn_core::tt_format::seeded_rng;

/// 28x28 IDX pair with `train` images ahead of the 10000 that get held out for validation.
/// With `striped`, the label is marked by a bright row; otherwise labels are independent of pixels.
pub fn idx_fixture(dir: &Path, train: usize, striped: bool, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = seeded_rng(seed);
    let n = train + MNIST_VALIDATION;
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let mut pixels = vec![0u8; n * 784];
    for (i, &l) in labels.iter().enumerate() {
        let img = &mut pixels[i * 784..(i + 1) * 784];
        img.iter_mut().for_each(|p| *p = rng.gen_range(0..60));
        if striped {
            let row = 4 + 2 * l as usize;
            img[row * 28..(row + 1) * 28].iter_mut().for_each(|p| *p = 255);
        }
    }
    let data = ImageDataset::new(28, 28, pixels, labels).expect("consistent fixture");
    let tag = if striped { "striped" } else { "noise" };
    let (images, labels) = (dir.join(format!("{tag}-images.idx")), dir.join(format!("{tag}-labels.idx")));
    write_idx(&data, &images, &labels).expect("temp dir is writable");
    (images, labels)
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("temp dir is writable");
    path
}

/// Small TT-GRU on the synthetic piano roll; append `out = ...`.
pub const PIANO_GRU: &str = "task = pianoroll\ncell = gru\nparameterization = tt\ninput_modes = 8,11\n\
hidden_modes = 4,4\nrank = 3\nlearning_rate = 0.02\nclip_norm = 1\nbatch_size = 4\nepochs = 6\n\
synthetic_songs = 16\nsynthetic_min_len = 8\nsynthetic_max_len = 20\ninit_seed = 5\ndata_seed = 6\n";

/// Run-log lines with the `wall_time` field removed.
pub fn without_wall_time(log: &str) -> Vec<String> {
    log.lines()
        .map(|l| l.split(' ').filter(|kv| !kv.starts_with("wall_time=")).collect::<Vec<_>>().join(" "))
        .collect()
}
