//! Synthetic paired phantoms, PGM files, flips, splits and manifests.

mod phantom;
mod pgm;

pub use phantom::{check_size, generate_phantom_pair};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::image::ImageGray;
use crate::rng::{mix_seed, rng_from_seed, Rng};
use crate::{Error, Result};

const SPLIT_STREAM: u64 = 0x53_504c_4954;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "pair_id,seed,split,path_a,path_b";

/// Co-registered images of the same phantom: A is the MR-like rendering,
/// B the CT-like one.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub pair_id: u64,
    pub seed: u64,
    pub modality_a: ImageGray,
    pub modality_b: ImageGray,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

/// Seed of pair `index` under `master_seed`.
pub fn pair_seed(master_seed: u64, index: u64) -> u64 {
    mix_seed(master_seed, index)
}

/// Generates `n_pairs` phantoms and splits them by a seeded shuffle into
/// `round(n_pairs * train_fraction)` training pairs and the rest for test.
/// Both lists are sorted by `pair_id`.
pub fn make_split(n_pairs: usize, size: usize, master_seed: u64, train_fraction: f64) -> Result<DatasetSplit> {
    if n_pairs < 3 {
        return Err(Error::invalid(format!("need at least 3 pairs, got {n_pairs}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train_fraction {train_fraction} must be in (0, 1)")));
    }
    let n_train = (n_pairs as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n_pairs {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} leaves an empty side for {n_pairs} pairs"
        )));
    }
    phantom::check_size(size)?;

    let mut ids: Vec<u64> = (0..n_pairs as u64).collect();
    ids.shuffle(&mut rng_from_seed(mix_seed(master_seed, SPLIT_STREAM)));
    let (train_ids, test_ids) = ids.split_at(n_train);
    let render = |ids: &[u64]| -> Result<Vec<ImagePair>> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|id| phantom::generate_with_id(pair_seed(master_seed, id), size, id))
            .collect()
    };
    Ok(DatasetSplit {
        train: render(train_ids)?,
        test: render(test_ids)?,
    })
}

fn flip(img: &ImageGray, horizontal: bool, vertical: bool) -> ImageGray {
    let (h, w) = (img.height(), img.width());
    let mut px = Vec::with_capacity(h * w);
    for r in 0..h {
        let sr = if vertical { h - 1 - r } else { r };
        for c in 0..w {
            let sc = if horizontal { w - 1 - c } else { c };
            px.push(img.get(sr, sc));
        }
    }
    ImageGray::new(h, w, px).expect("flip preserves range")
}

/// Mirrors both modalities: `horizontal` reverses columns, `vertical` rows.
pub fn apply_flips(pair: &ImagePair, horizontal: bool, vertical: bool) -> ImagePair {
    ImagePair {
        modality_a: flip(&pair.modality_a, horizontal, vertical),
        modality_b: flip(&pair.modality_b, horizontal, vertical),
        ..pair.clone()
    }
}

/// Independent fair coin per axis. Always consumes exactly two draws.
pub fn augment_flip(pair: &ImagePair, rng: &mut Rng) -> ImagePair {
    let horizontal = rng.random_bool(0.5);
    let vertical = rng.random_bool(0.5);
    apply_flips(pair, horizontal, vertical)
}

/// Nearest-neighbour resampling to `new_size x new_size`; output index `i`
/// reads source index `floor((i + 0.5) * H / H')`.
pub fn resize_nearest(img: &ImageGray, new_size: usize) -> Result<ImageGray> {
    if new_size < 2 {
        return Err(Error::invalid(format!("resize target {new_size} must be >= 2")));
    }
    let map = |i: usize, src: usize| ((2 * i + 1) * src) / (2 * new_size);
    let mut px = Vec::with_capacity(new_size * new_size);
    for r in 0..new_size {
        let sr = map(r, img.height());
        for c in 0..new_size {
            px.push(img.get(sr, map(c, img.width())));
        }
    }
    ImageGray::new(new_size, new_size, px)
}

/// Writes every pair as `a/NNNN.pgm` and `b/NNNN.pgm` under `dir`, plus a
/// manifest with paths relative to `dir`.
pub fn write_dataset(split: &DatasetSplit, dir: &Path) -> Result<PathBuf> {
    for sub in ["a", "b"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rows: Vec<(&ImagePair, &str)> = split
        .train
        .iter()
        .map(|p| (p, "train"))
        .chain(split.test.iter().map(|p| (p, "test")))
        .collect();
    rows.sort_by_key(|(p, _)| p.pair_id);
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (p, which) in rows {
        let a = format!("a/{:04}.pgm", p.pair_id);
        let b = format!("b/{:04}.pgm", p.pair_id);
        save_pgm(&p.modality_a, &dir.join(&a))?;
        save_pgm(&p.modality_b, &dir.join(&b))?;
        manifest.push_str(&format!("{},{},{which},{a},{b}\n", p.pair_id, p.seed));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<DatasetSplit> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.clone())
        } else {
            Error::io(&path, e)
        }
    })?;
    let mut lines = text.lines();
    let mut offset = 0;
    let header = lines.next().unwrap_or_default();
    if header != MANIFEST_HEADER {
        return Err(Error::Parse {
            offset,
            message: format!("manifest header must be `{MANIFEST_HEADER}`"),
        });
    }
    offset += header.len() + 1;
    let mut split = DatasetSplit::default();
    for line in lines {
        let bad = |message: &str| Error::Parse {
            offset,
            message: format!("manifest row `{line}`: {message}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let pair = ImagePair {
            pair_id: f[0].parse().map_err(|_| bad("bad pair_id"))?,
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            modality_a: load_pgm(&dir.join(f[3]))?,
            modality_b: load_pgm(&dir.join(f[4]))?,
        };
        if !pair.modality_a.same_size(&pair.modality_b) {
            return Err(bad("modalities differ in size"));
        }
        match f[2] {
            "train" => split.train.push(pair),
            "test" => split.test.push(pair),
            _ => return Err(bad("split must be train or test")),
        }
        offset += line.len() + 1;
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn split_sizes_and_disjointness() {
        let s = make_split(300, 8, 5, 2.0 / 3.0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (200, 100));
        let train: HashSet<u64> = s.train.iter().map(|p| p.pair_id).collect();
        assert!(s.test.iter().all(|p| !train.contains(&p.pair_id)));
        let again = make_split(300, 8, 5, 2.0 / 3.0).unwrap();
        assert_eq!(s, again);
        let other = make_split(300, 8, 6, 2.0 / 3.0).unwrap();
        assert_ne!(
            s.train.iter().map(|p| p.pair_id).collect::<Vec<_>>(),
            other.train.iter().map(|p| p.pair_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(make_split(2, 16, 0, 0.5).is_err());
        assert!(make_split(10, 16, 0, 0.0).is_err());
        assert!(make_split(10, 16, 0, 1.0).is_err());
        assert!(make_split(3, 16, 0, 0.01).is_err());
        assert!(make_split(10, 12, 0, 0.5).is_err());
    }

    #[test]
    fn flips() {
        let p = generate_phantom_pair(9, 16).unwrap();
        assert_eq!(apply_flips(&p, false, false), p);
        let h = apply_flips(&p, true, false);
        assert_ne!(h, p);
        assert_eq!(apply_flips(&h, true, false), p);
        assert_eq!(h.modality_a.get(3, 0), p.modality_a.get(3, 15));
        let v = apply_flips(&p, false, true);
        assert_eq!(v.modality_b.get(0, 5), p.modality_b.get(15, 5));
    }

    #[test]
    fn augment_draws_are_deterministic() {
        let p = generate_phantom_pair(9, 16).unwrap();
        let mut r1 = rng_from_seed(4);
        let mut r2 = rng_from_seed(4);
        for _ in 0..8 {
            assert_eq!(augment_flip(&p, &mut r1), augment_flip(&p, &mut r2));
        }
    }

    #[test]
    fn resize_examples() {
        let img = ImageGray::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(resize_nearest(&img, 2).unwrap(), img);
        let up = resize_nearest(&img, 4).unwrap();
        assert_eq!(
            up.pixels(),
            &[0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.25, 0.25, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0]
        );
        // floor((i + 0.5) * 4 / 2) = 1, 3 for i = 0, 1.
        let ramp = ImageGray::new(4, 4, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        let down = resize_nearest(&ramp, 2).unwrap();
        let expect: Vec<f64> = [5, 7, 13, 15].iter().map(|&i| i as f64 / 15.0).collect();
        assert_eq!(down.pixels(), expect.as_slice());
        assert!(resize_nearest(&img, 1).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = make_split(6, 16, 1, 2.0 / 3.0).unwrap();
        write_dataset(&s, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.train.len(), 4);
        assert_eq!(back.test.len(), 2);
        for (a, b) in s.train.iter().zip(&back.train) {
            assert_eq!(a.pair_id, b.pair_id);
            for (x, y) in a.modality_a.pixels().iter().zip(b.modality_a.pixels()) {
                assert!((x - y).abs() <= 1.0 / 510.0);
            }
        }
        assert!(matches!(read_dataset(&dir.path().join("x")), Err(Error::MissingInput(_))));
    }
}
