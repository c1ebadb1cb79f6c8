//! MNIST IDX and piano-roll ingestion, image serialization and batching.
//!
//! Piano-roll text format: one timestep per line, each line a space-separated
//! list of active MIDI notes in 21..=108. An empty line is a silent frame.
//! Songs are separated by a line containing only `---`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tasks::NOTES;
use crate::tt_format::seeded_rng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const LOWEST_NOTE: usize = 21;
pub const HIGHEST_NOTE: usize = 108;
pub const SONG_SEPARATOR: &str = "---";
pub const DEFAULT_PERMUTATION_SEED: u64 = 8888;
pub const MNIST_VALIDATION: usize = 10_000;

/// Grayscale images stored as the original bytes; [`ImageDataset::image`] scales to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(Error::Data(format!(
                "{} pixel bytes for {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= 10) {
            return Err(Error::Data(format!("label {l} outside 0..10")));
        }
        Ok(ImageDataset {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_bytes(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| {
            self.pixels[i * self.rows * self.cols + r * self.cols + c] as f64 / 255.0
        })
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Images `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> ImageDataset {
        let n = self.rows * self.cols;
        ImageDataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Training portion and the last `MNIST_VALIDATION` images held out for validation.
    pub fn split_validation(&self) -> Result<(ImageDataset, ImageDataset)> {
        if self.len() <= MNIST_VALIDATION {
            return Err(Error::Data(format!(
                "{} training images leave nothing after holding out {MNIST_VALIDATION}",
                self.len()
            )));
        }
        let cut = self.len() - MNIST_VALIDATION;
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(format!("{what} offset {offset}"), "truncated header"))
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<ImageDataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format("images offset 0", format!("bad magic 0x{magic:08x}")));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let need = count * rows * cols;
    if images.len() - 16 < need {
        return Err(Error::format(
            format!("images offset {}", images.len()),
            format!("truncated: {count} images of {rows}x{cols} need {need} pixel bytes after offset 16"),
        ));
    }

    let magic = be_u32(labels, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format("labels offset 0", format!("bad magic 0x{magic:08x}")));
    }
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::format(
            "labels offset 4",
            format!("{label_count} labels for {count} images"),
        ));
    }
    if labels.len() - 8 < count {
        return Err(Error::format(
            format!("labels offset {}", labels.len()),
            format!("truncated: {count} labels need {count} bytes after offset 8"),
        ));
    }
    let label_bytes = &labels[8..8 + count];
    if let Some(i) = label_bytes.iter().position(|&l| l >= 10) {
        return Err(Error::format(
            format!("labels offset {}", 8 + i),
            format!("label {} outside 0..10", label_bytes[i]),
        ));
    }
    ImageDataset::new(rows, cols, images[16..16 + need].to_vec(), label_bytes.to_vec())
}

pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let images = std::fs::read(images_path)
        .map_err(|e| Error::Data(format!("{}: {e}", images_path.display())))?;
    let labels = std::fs::read(labels_path)
        .map_err(|e| Error::Data(format!("{}: {e}", labels_path.display())))?;
    parse_idx(&images, &labels).map_err(|e| match e {
        Error::Format { location, message } => {
            let file = if location.starts_with("images") { images_path } else { labels_path };
            Error::Format {
                location: format!("{} ({location})", file.display()),
                message,
            }
        }
        other => other,
    })
}

/// IDX bytes for images and labels.
pub fn idx_bytes(data: &ImageDataset) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + data.pixels.len());
    for v in [IMAGE_MAGIC, data.len() as u32, data.rows as u32, data.cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(&data.pixels);
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend_from_slice(&data.labels);
    (images, labels)
}

pub fn write_idx(data: &ImageDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = idx_bytes(data);
    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerializeMode {
    /// One row per step, top row first.
    Row,
    /// One pixel per step in row-major order.
    Pixel,
    /// One pixel per step in a fixed shuffled order.
    PermutedPixel,
}

impl FromStr for SerializeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(SerializeMode::Row),
            "pixel" => Ok(SerializeMode::Pixel),
            "permuted" | "permuted-pixel" => Ok(SerializeMode::PermutedPixel),
            _ => Err(Error::Data(format!("unknown serialization {s:?}"))),
        }
    }
}

impl SerializeMode {
    /// `(T, N)` for a `rows x cols` image.
    pub fn sequence_shape(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            SerializeMode::Row => (rows, cols),
            _ => (rows * cols, 1),
        }
    }
}

pub fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    if perm.len() != len {
        return Err(Error::Data(format!("permutation has length {}, expected {len}", perm.len())));
    }
    let mut seen = vec![false; len];
    for &p in perm {
        if p >= len || seen[p] {
            return Err(Error::Data(format!("permutation is not a bijection on 0..{len} (entry {p})")));
        }
        seen[p] = true;
    }
    Ok(())
}

fn check_mode_permutation(mode: SerializeMode, perm: Option<&[usize]>, len: usize) -> Result<()> {
    match (mode, perm) {
        (SerializeMode::PermutedPixel, Some(p)) => check_permutation(p, len),
        (SerializeMode::PermutedPixel, None) => Err(Error::Data("permuted mode needs a permutation".into())),
        (_, Some(_)) => Err(Error::Data("permutation given for an unpermuted mode".into())),
        (_, None) => Ok(()),
    }
}

/// Step `t` of a permuted sequence is flattened pixel `perm[t]`.
pub fn serialize_image(image: ArrayView2<f64>, mode: SerializeMode, perm: Option<&[usize]>) -> Result<Array2<f64>> {
    let (rows, cols) = image.dim();
    check_mode_permutation(mode, perm, rows * cols)?;
    let flat = || image.iter().copied().collect::<Vec<f64>>();
    Ok(match mode {
        SerializeMode::Row => image.to_owned(),
        SerializeMode::Pixel => Array2::from_shape_vec((rows * cols, 1), flat()).expect("shape"),
        SerializeMode::PermutedPixel => {
            let flat = flat();
            let perm = perm.expect("checked");
            Array2::from_shape_fn((rows * cols, 1), |(t, _)| flat[perm[t]])
        }
    })
}

/// Inverse of [`serialize_image`].
pub fn deserialize_sequence(
    seq: ArrayView2<f64>,
    mode: SerializeMode,
    perm: Option<&[usize]>,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>> {
    check_mode_permutation(mode, perm, rows * cols)?;
    if seq.dim() != mode.sequence_shape(rows, cols) {
        return Err(Error::Shape(format!("sequence {:?} is not a {rows}x{cols} image", seq.dim())));
    }
    Ok(match mode {
        SerializeMode::Row => seq.to_owned(),
        SerializeMode::Pixel => Array2::from_shape_fn((rows, cols), |(r, c)| seq[[r * cols + c, 0]]),
        SerializeMode::PermutedPixel => {
            let mut out = Array2::zeros((rows, cols));
            for (t, &p) in perm.expect("checked").iter().enumerate() {
                out[[p / cols, p % cols]] = seq[[t, 0]];
            }
            out
        }
    })
}

/// Fisher-Yates shuffle of `0..len` driven by the seeded stream RNG.
pub fn pixel_permutation(seed: u64, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut seeded_rng(seed));
    perm
}

/// First 16 hex digits of SHA-256 over the entries as little-endian u64.
pub fn permutation_hash(perm: &[usize]) -> String {
    let mut h = Sha256::new();
    for &p in perm {
        h.update((p as u64).to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Songs of binary `T x 88` frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PianoRollDataset {
    pub songs: Vec<Array2<f64>>,
}

pub fn parse_pianoroll(text: &str) -> Result<PianoRollDataset> {
    let mut songs = Vec::new();
    let mut frames: Vec<Vec<usize>> = Vec::new();
    let mut flush = |frames: &mut Vec<Vec<usize>>| {
        if !frames.is_empty() {
            let mut song = Array2::zeros((frames.len(), NOTES));
            for (t, notes) in frames.iter().enumerate() {
                for &n in notes {
                    song[[t, n]] = 1.0;
                }
            }
            songs.push(song);
            frames.clear();
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line == SONG_SEPARATOR {
            flush(&mut frames);
            continue;
        }
        let mut notes = Vec::new();
        for tok in line.split_whitespace() {
            let note: usize = tok
                .parse()
                .map_err(|_| Error::format(format!("line {}", i + 1), format!("not a note number: {tok:?}")))?;
            if !(LOWEST_NOTE..=HIGHEST_NOTE).contains(&note) {
                return Err(Error::format(
                    format!("line {}", i + 1),
                    format!("note {note} outside {LOWEST_NOTE}..={HIGHEST_NOTE}"),
                ));
            }
            notes.push(note - LOWEST_NOTE);
        }
        frames.push(notes);
    }
    flush(&mut frames);
    Ok(PianoRollDataset { songs })
}

pub fn read_pianoroll(path: &Path) -> Result<PianoRollDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_pianoroll(&text).map_err(|e| match e {
        Error::Format { location, message } => Error::Format {
            location: format!("{}:{}", path.display(), location.trim_start_matches("line ")),
            message,
        },
        other => other,
    })
}

pub fn format_pianoroll(data: &PianoRollDataset) -> String {
    let mut out = String::new();
    for (k, song) in data.songs.iter().enumerate() {
        if k > 0 {
            out.push_str(SONG_SEPARATOR);
            out.push('\n');
        }
        for frame in song.rows() {
            let notes: Vec<String> = frame
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(n, _)| (n + LOWEST_NOTE).to_string())
                .collect();
            let _ = writeln!(out, "{}", notes.join(" "));
        }
    }
    out
}

/// Chord of the 8-periodic synthetic pattern at `phase`, as note indices.
pub fn synthetic_chord(phase: usize) -> [usize; 3] {
    let p = phase % 8;
    [3 * p, 30 + 3 * p, 60 + 3 * p]
}

/// Songs cycling through eight distinct chords, with seeded start phases and lengths.
pub fn synthetic_pianoroll(songs: usize, min_len: usize, max_len: usize, seed: u64) -> PianoRollDataset {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let songs = (0..songs)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len.max(min_len));
            let start = rng.gen_range(0..8);
            let mut song = Array2::zeros((len, NOTES));
            for t in 0..len {
                for n in synthetic_chord(start + t) {
                    song[[t, n]] = 1.0;
                }
            }
            song
        })
        .collect();
    PianoRollDataset { songs }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// Next-step frames, `B x T x 88`.
    Frames(Array3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// `B x T_max x N`
    pub inputs: Array3<f64>,
    /// `B x T_max`, 1 on real steps and 0 on padding.
    pub mask: Array2<f64>,
    pub targets: Targets,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn supervised_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }
}

/// What a batch stream draws from.
#[derive(Debug, Clone, Copy)]
pub enum BatchSource<'a> {
    /// Image classification.
    Images {
        data: &'a ImageDataset,
        mode: SerializeMode,
        permutation: Option<&'a [usize]>,
    },
    /// Next-frame prediction. Songs shorter than two frames have no supervised step and are skipped.
    Songs(&'a PianoRollDataset),
}

/// Single-pass iterator over batches.
#[derive(Debug, Clone)]
pub struct Batches<'a> {
    source: BatchSource<'a>,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

/// Batches in order, or shuffled deterministically when `shuffle_seed` is given.
pub fn make_batches(source: BatchSource<'_>, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = match source {
        BatchSource::Images { data, mode, permutation } => {
            check_mode_permutation(mode, permutation, data.rows * data.cols)?;
            (0..data.len()).collect()
        }
        BatchSource::Songs(d) => (0..d.songs.len()).filter(|&i| d.songs[i].nrows() >= 2).collect(),
    };
    if order.is_empty() {
        return Err(Error::Data("dataset has no usable sequences".into()));
    }
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed));
    }
    Ok(Batches {
        source,
        order,
        batch_size,
        next: 0,
    })
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn build(&self, items: &[usize]) -> SequenceBatch {
        let b = items.len();
        match self.source {
            BatchSource::Images { data, mode, permutation } => {
                let (t, n) = mode.sequence_shape(data.rows, data.cols);
                let mut inputs = Array3::zeros((b, t, n));
                for (k, &i) in items.iter().enumerate() {
                    let seq = serialize_image(data.image(i).view(), mode, permutation).expect("validated");
                    inputs.slice_mut(s![k, .., ..]).assign(&seq);
                }
                SequenceBatch {
                    inputs,
                    mask: Array2::ones((b, t)),
                    targets: Targets::Labels(items.iter().map(|&i| data.label(i)).collect()),
                }
            }
            BatchSource::Songs(d) => {
                let t_max = items.iter().map(|&i| d.songs[i].nrows() - 1).max().unwrap_or(0);
                let mut inputs = Array3::zeros((b, t_max, NOTES));
                let mut targets = Array3::zeros((b, t_max, NOTES));
                let mut mask = Array2::zeros((b, t_max));
                for (k, &i) in items.iter().enumerate() {
                    let song = &d.songs[i];
                    let len = song.nrows() - 1;
                    inputs.slice_mut(s![k, ..len, ..]).assign(&song.slice(s![..len, ..]));
                    targets.slice_mut(s![k, ..len, ..]).assign(&song.slice(s![1.., ..]));
                    mask.slice_mut(s![k, ..len]).fill(1.0);
                }
                SequenceBatch {
                    inputs,
                    mask,
                    targets: Targets::Frames(targets),
                }
            }
        }
    }
}

impl Iterator for Batches<'_> {
    type Item = SequenceBatch;

    fn next(&mut self) -> Option<SequenceBatch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.build(&self.order[self.next..end]);
        self.next = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend_from_slice(&[0, 51, 255, 102, 0, 1, 10, 20, 30, 40, 50, 60]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn idx_fixture() {
        let (images, labels) = fixture();
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!((d.len(), d.rows, d.cols), (2, 2, 3));
        assert_eq!(d.image(0), ndarray::array![[0.0, 0.2, 1.0], [0.4, 0.0, 1.0 / 255.0]]);
        assert_eq!(d.image(1)[[1, 2]], 60.0 / 255.0);
        assert_eq!((d.label(0), d.label(1)), (7, 3));
        assert_eq!(idx_bytes(&d), (images, labels));
    }

    #[test]
    fn idx_empty() {
        let images = [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28];
        let labels = [0, 0, 8, 1, 0, 0, 0, 0];
        assert!(parse_idx(&images, &labels).unwrap().is_empty());
    }

    #[test]
    fn idx_errors_name_offsets() {
        let (images, labels) = fixture();
        let mut bad = labels.clone();
        bad[7] = 3;
        match parse_idx(&images, &bad) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "labels offset 4"),
            other => panic!("{other:?}"),
        }
        let mut bad = images.clone();
        bad[3] = 1;
        assert!(matches!(parse_idx(&bad, &labels), Err(Error::Format { location, .. }) if location == "images offset 0"));
        assert!(matches!(parse_idx(&images[..20], &labels), Err(Error::Format { .. })));
        assert!(matches!(parse_idx(&images[..10], &labels), Err(Error::Format { .. })));
        let mut bad = labels.clone();
        bad[9] = 10;
        assert!(matches!(parse_idx(&images, &bad), Err(Error::Format { location, .. }) if location == "labels offset 9"));
    }

    #[test]
    fn idx_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let d = parse_idx(&images, &labels).unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&d, &pi, &pl).unwrap();
        assert_eq!(read_idx(&pi, &pl).unwrap(), d);
        assert!(matches!(read_idx(&dir.path().join("missing"), &pl), Err(Error::Data(_))));
    }

    fn image28() -> Array2<f64> {
        Array2::from_shape_fn((28, 28), |(r, c)| ((r * 28 + c) % 256) as f64 / 255.0)
    }

    #[test]
    fn row_and_pixel_modes() {
        let img = image28();
        let rows = serialize_image(img.view(), SerializeMode::Row, None).unwrap();
        assert_eq!(rows.dim(), (28, 28));
        assert_eq!(rows.row(5), img.row(5));
        let px = serialize_image(img.view(), SerializeMode::Pixel, None).unwrap();
        assert_eq!(px.dim(), (784, 1));
        let flat: Vec<f64> = img.iter().copied().collect();
        assert_eq!(px.column(0).to_vec(), flat);
        let ident: Vec<usize> = (0..784).collect();
        let permuted = serialize_image(img.view(), SerializeMode::PermutedPixel, Some(&ident)).unwrap();
        assert_eq!(permuted, px);
    }

    #[test]
    fn bad_permutations() {
        let img = image28();
        let mut p: Vec<usize> = (0..784).collect();
        p[3] = 4;
        assert!(matches!(serialize_image(img.view(), SerializeMode::PermutedPixel, Some(&p)), Err(Error::Data(_))));
        assert!(serialize_image(img.view(), SerializeMode::PermutedPixel, Some(&p[..783])).is_err());
        assert!(serialize_image(img.view(), SerializeMode::PermutedPixel, None).is_err());
        assert!(serialize_image(img.view(), SerializeMode::Pixel, Some(&p)).is_err());
    }

    #[test]
    fn permutation_is_seeded_bijection() {
        let a = pixel_permutation(DEFAULT_PERMUTATION_SEED, 784);
        check_permutation(&a, 784).unwrap();
        assert_eq!(a, pixel_permutation(DEFAULT_PERMUTATION_SEED, 784));
        assert_ne!(a, pixel_permutation(1, 784));
        assert_ne!(a, (0..784).collect::<Vec<_>>());
        assert_eq!(permutation_hash(&a), permutation_hash(&a.clone()));
        assert_ne!(permutation_hash(&a), permutation_hash(&pixel_permutation(1, 784)));
        assert_eq!(permutation_hash(&a).len(), 16);
    }

    proptest! {
        #[test]
        fn serialization_is_lossless(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
            let img = Array2::from_shape_fn((rows, cols), |(r, c)| (seed.wrapping_mul(31).wrapping_add((r * cols + c) as u64) % 256) as f64 / 255.0);
            let perm = pixel_permutation(seed, rows * cols);
            for (mode, p) in [(SerializeMode::Row, None), (SerializeMode::Pixel, None), (SerializeMode::PermutedPixel, Some(perm.as_slice()))] {
                let seq = serialize_image(img.view(), mode, p).unwrap();
                prop_assert_eq!(deserialize_sequence(seq.view(), mode, p, rows, cols).unwrap(), img.clone());
            }
        }

        #[test]
        fn idx_round_trip(count in 0usize..5, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = seeded_rng(seed);
            let pixels: Vec<u8> = (0..count * rows * cols).map(|_| rng.gen()).collect();
            let labels: Vec<u8> = (0..count).map(|_| rng.gen_range(0..10)).collect();
            let d = ImageDataset::new(rows, cols, pixels, labels).unwrap();
            let (i, l) = idx_bytes(&d);
            prop_assert_eq!(parse_idx(&i, &l).unwrap(), d);
        }
    }

    #[test]
    fn pianoroll_line() {
        let d = parse_pianoroll("60 64 67\n").unwrap();
        assert_eq!(d.songs.len(), 1);
        let on: Vec<usize> = (0..NOTES).filter(|&n| d.songs[0][[0, n]] == 1.0).collect();
        assert_eq!(on, vec![60 - 21, 64 - 21, 67 - 21]);
        assert_eq!(on, vec![39, 43, 46]);
    }

    #[test]
    fn pianoroll_silence_and_songs() {
        let d = parse_pianoroll("21 108\n\n60\n---\n70\n\n").unwrap();
        assert_eq!(d.songs.len(), 2);
        assert_eq!(d.songs[0].nrows(), 3);
        assert_eq!(d.songs[0].row(1).sum(), 0.0);
        assert_eq!(d.songs[0][[0, 0]] + d.songs[0][[0, 87]], 2.0);
        assert_eq!(d.songs[1].nrows(), 2);
        assert_eq!(parse_pianoroll(&format_pianoroll(&d)).unwrap(), d);
    }

    #[test]
    fn pianoroll_errors_carry_line() {
        match parse_pianoroll("60\n61\n200\n") {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pianoroll("20"), Err(Error::Format { .. })));
        assert!(matches!(parse_pianoroll("60 x"), Err(Error::Format { .. })));
    }

    #[test]
    fn synthetic_is_periodic() {
        let d = synthetic_pianoroll(4, 10, 30, 3);
        assert_eq!(d, synthetic_pianoroll(4, 10, 30, 3));
        for song in &d.songs {
            for t in 8..song.nrows() {
                assert_eq!(song.row(t), song.row(t - 8));
            }
            for t in 1..song.nrows().min(8) {
                assert_ne!(song.row(t), song.row(0));
            }
            assert!(song.rows().into_iter().all(|r| r.sum() == 3.0));
        }
    }

    fn tiny_images(n: usize) -> ImageDataset {
        ImageDataset::new(2, 2, (0..n * 4).map(|v| v as u8).collect(), (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
    }

    #[test]
    fn batch_sizes() {
        let d = tiny_images(10);
        let src = BatchSource::Images { data: &d, mode: SerializeMode::Row, permutation: None };
        let sizes: Vec<usize> = make_batches(src, 4, None).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(make_batches(src, 4, None).unwrap().num_batches(), 3);
    }

    #[test]
    fn shuffled_order_is_deterministic() {
        let d = tiny_images(10);
        let src = BatchSource::Images { data: &d, mode: SerializeMode::Pixel, permutation: None };
        let labels = |seed| {
            make_batches(src, 3, Some(seed))
                .unwrap()
                .flat_map(|b| match b.targets {
                    Targets::Labels(l) => l,
                    _ => unreachable!(),
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(labels(5), labels(5));
        let mut sorted = labels(5);
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn prediction_pairing() {
        let d = parse_pianoroll("21\n22\n23\n").unwrap();
        let b = make_batches(BatchSource::Songs(&d), 1, None).unwrap().next().unwrap();
        assert_eq!(b.supervised_steps(), 2);
        let Targets::Frames(t) = &b.targets else { panic!() };
        assert_eq!(b.inputs[[0, 0, 0]], 1.0);
        assert_eq!(t[[0, 0, 1]], 1.0);
        assert_eq!(b.inputs[[0, 1, 1]], 1.0);
        assert_eq!(t[[0, 1, 2]], 1.0);
    }

    #[test]
    fn padded_masks_are_prefixes() {
        let d = synthetic_pianoroll(7, 1, 12, 11);
        let expected: usize = d.songs.iter().map(|s| s.nrows().saturating_sub(1)).sum();
        let mut total = 0;
        for b in make_batches(BatchSource::Songs(&d), 3, Some(2)).unwrap() {
            total += b.supervised_steps();
            for row in b.mask.rows() {
                let len = row.iter().filter(|&&m| m == 1.0).count();
                assert!(row.iter().take(len).all(|&m| m == 1.0));
                assert!(row.iter().skip(len).all(|&m| m == 0.0));
            }
        }
        assert_eq!(total, expected);
    }

    #[test]
    fn empty_dataset() {
        let d = PianoRollDataset::default();
        assert!(matches!(make_batches(BatchSource::Songs(&d), 2, None), Err(Error::Data(_))));
        let d = tiny_images(0);
        let src = BatchSource::Images { data: &d, mode: SerializeMode::Row, permutation: None };
        assert!(matches!(make_batches(src, 2, None), Err(Error::Data(_))));
    }

    #[test]
    fn validation_split() {
        let d = tiny_images(10_005);
        let (train, valid) = d.split_validation().unwrap();
        assert_eq!((train.len(), valid.len()), (5, 10_000));
        assert_eq!(valid.pixel_bytes(0), d.pixel_bytes(5));
        assert!(tiny_images(100).split_validation().is_err());
    }
}
