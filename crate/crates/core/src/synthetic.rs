//! Seeded synthetic datasets with planted structure, for tests, demos and
//! sanity-checking a pipeline configuration without real features.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clustering::PatchSet;
use crate::error::{Error, Result};
use crate::store::{
    manifest_to_text, write_feature_grid, ClassHierarchy, FeatureGrid, LabeledGrid, ManifestEntry,
    Split, HIERARCHY_FILE, MANIFEST_FILE,
};

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub hierarchy: ClassHierarchy,
    pub known: Vec<LabeledGrid>,
    pub unknown: Vec<LabeledGrid>,
}

impl SyntheticDataset {
    /// Writes `hierarchy.tsv`, `manifest.tsv` and `features/<id>.apft`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let features = dir.join("features");
        fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        let mut entries = Vec::new();
        for (split, grids) in [(Split::Known, &self.known), (Split::Unknown, &self.unknown)] {
            for g in grids {
                let rel = format!("features/{}.apft", g.grid.image_id());
                write_feature_grid(&g.grid, dir.join(&rel))?;
                entries.push(ManifestEntry {
                    image_id: g.grid.image_id().to_string(),
                    feature_path: rel.into(),
                    class_id: g.class_id,
                    split,
                });
            }
        }
        self.hierarchy.save(dir.join(HIERARCHY_FILE))?;
        let manifest = dir.join(MANIFEST_FILE);
        fs::write(&manifest, manifest_to_text(&entries)).map_err(|e| Error::io(&manifest, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperclassFixture {
    pub dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub known_images_per_class: usize,
    pub unknown_images_per_class: usize,
    /// Standard deviation of each atom mean component.
    pub atom_scale: f64,
    /// Per-component patch noise around its atom.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SuperclassFixture {
    fn default() -> Self {
        Self {
            dim: 32,
            grid_rows: 6,
            grid_cols: 6,
            known_images_per_class: 40,
            unknown_images_per_class: 50,
            atom_scale: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Six classes in three superclasses, built from Gaussian appearance atoms.
///
/// Each superclass owns five atoms. Its first class draws patches from atoms
/// `0..4`, its second from atoms `1..5`, so siblings share three atoms. The
/// second class of superclasses 0 and 1 is held out as the unknown split;
/// superclass 2 keeps both classes known.
pub fn superclass_fixture(cfg: &SuperclassFixture) -> SyntheticDataset {
    const NAMES: [(&str, [&str; 2]); 3] = [
        ("vehicles", ["car", "forklift"]),
        ("animals", ["dog", "wolf"]),
        ("furniture", ["chair", "sofa"]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let atom_dist = Normal::new(0.0, cfg.atom_scale).unwrap();
    let atoms: Vec<Vec<Vec<f32>>> = (0..3)
        .map(|_| {
            (0..5)
                .map(|_| {
                    (0..cfg.dim)
                        .map(|_| atom_dist.sample(&mut rng) as f32)
                        .collect()
                })
                .collect()
        })
        .collect();
    let hierarchy = ClassHierarchy::new(
        NAMES.iter().enumerate().flat_map(|(s, (_, classes))| {
            classes
                .iter()
                .enumerate()
                .map(move |(j, c)| ((2 * s + j) as u32, c.to_string(), s as u32))
        }),
        NAMES
            .iter()
            .enumerate()
            .map(|(s, (name, _))| (s as u32, name.to_string())),
    )
    .expect("static hierarchy is valid");

    let noise = Normal::new(0.0, cfg.noise).unwrap();
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for (s, own) in atoms.iter().enumerate() {
        for j in 0..2 {
            let class_id = (2 * s + j) as u32;
            let pool: Vec<&Vec<f32>> = own[j..j + 4].iter().collect();
            let held_out = j == 1 && s < 2;
            let n = if held_out {
                cfg.unknown_images_per_class
            } else {
                cfg.known_images_per_class
            };
            for i in 0..n {
                let patches = cfg.grid_rows * cfg.grid_cols;
                let mut data = Vec::with_capacity(patches * cfg.dim);
                for _ in 0..patches {
                    let atom = pool.choose(&mut rng).unwrap();
                    data.extend(atom.iter().map(|a| a + noise.sample(&mut rng) as f32));
                }
                let id = format!("{}_{i:03}", hierarchy.class_name(class_id));
                let grid = FeatureGrid::new(id, cfg.grid_rows, cfg.grid_cols, cfg.dim, data)
                    .expect("generated grid is valid");
                let lg = LabeledGrid { grid, class_id };
                if held_out {
                    unknown.push(lg);
                } else {
                    known.push(lg);
                }
            }
        }
    }
    SyntheticDataset {
        hierarchy,
        known,
        unknown,
    }
}

/// `clusters` well-separated Gaussian blobs. Centers have components of
/// standard deviation `spread`; points scatter by `noise` per component.
/// Points are grouped `points_per_image` at a time into images.
pub fn planted_clusters(
    clusters: usize,
    points_per_cluster: usize,
    dim: usize,
    spread: f64,
    noise: f64,
    seed: u64,
) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center_dist = Normal::new(0.0, spread).unwrap();
    let noise = Normal::new(0.0, noise).unwrap();
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| {
            (0..dim)
                .map(|_| center_dist.sample(&mut rng) as f32)
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(clusters * points_per_cluster);
    for i in 0..clusters * points_per_cluster {
        let c = &centers[i % clusters];
        points.push(
            c.iter()
                .map(|v| v + noise.sample(&mut rng) as f32)
                .collect(),
        );
    }
    (centers, points)
}

pub fn planted_patch_set(points: &[Vec<f32>], points_per_image: usize) -> PatchSet {
    let mut set = PatchSet::new(points[0].len());
    for chunk in points.chunks(points_per_image) {
        set.push_image(&chunk.concat()).expect("uniform dims");
    }
    set
}

/// Dataset whose patches come from `clusters` planted blobs (grid 2x2 per
/// image). Classes 0 and 1 are known, class 2 unknown; labels carry no
/// structure, only the appearance clusters do.
pub fn planted_cluster_dataset(
    clusters: usize,
    images: usize,
    dim: usize,
    seed: u64,
) -> SyntheticDataset {
    let (_, points) = planted_clusters(clusters, images * 4 / clusters + 1, dim, 10.0, 0.5, seed);
    let hierarchy = ClassHierarchy::new(
        vec![(0, "a".into(), 0), (1, "b".into(), 1), (2, "c".into(), 0)],
        vec![(0, "first".into()), (1, "second".into())],
    )
    .expect("static hierarchy is valid");
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for (i, chunk) in points.chunks_exact(4).take(images).enumerate() {
        let class_id = (i % 3) as u32;
        let grid = FeatureGrid::new(format!("img{i:04}"), 2, 2, dim, chunk.concat())
            .expect("generated grid is valid");
        let lg = LabeledGrid { grid, class_id };
        if class_id == 2 {
            unknown.push(lg);
        } else {
            known.push(lg);
        }
    }
    SyntheticDataset {
        hierarchy,
        known,
        unknown,
    }
}
