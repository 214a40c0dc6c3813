//! Writes the synthetic backbone suite used by the end-to-end tests.
//!
//! Each dataset has a latent class structure with per-patient offsets. Each
//! pseudo-backbone sees the latent vector through its own random projection,
//! scaled by a signal-to-noise factor, plus unit Gaussian noise. Higher
//! factors therefore give more linearly decodable features.
//!
//! Usage: `cargo run -p probekit --example gen_suite -- [out_dir]`

use std::path::PathBuf;

use probekit::{write_table, EmbeddingTable, TableMeta};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SUITE_SEED: u64 = 20_251_015;
const LATENT_DIM: usize = 6;

struct Backbone {
    name: &'static str,
    params: u64,
    dim: usize,
    snr: f64,
}

struct Dataset {
    name: &'static str,
    classes: usize,
    patients: usize,
    rows_per_patient: usize,
}

const BACKBONES: [Backbone; 5] = [
    Backbone { name: "synth-vit-s", params: 22_050_664, dim: 24, snr: 0.2 },
    Backbone { name: "synth-vit-b", params: 86_580_480, dim: 32, snr: 0.35 },
    Backbone { name: "synth-vit-l", params: 304_368_640, dim: 48, snr: 0.55 },
    Backbone { name: "synth-vit-h", params: 632_045_800, dim: 48, snr: 0.85 },
    Backbone { name: "synth-noise", params: 5_717_416, dim: 16, snr: 0.0 },
];

const DATASETS: [Dataset; 2] = [
    Dataset { name: "grading", classes: 3, patients: 100, rows_per_patient: 2 },
    Dataset { name: "tear", classes: 2, patients: 120, rows_per_patient: 2 },
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/core/tests/fixtures/suite"));
    std::fs::create_dir_all(&out).expect("create output directory");

    for (di, ds) in DATASETS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED + di as u64);
        let means: Vec<Vec<f64>> = (0..ds.classes)
            .map(|_| (0..LATENT_DIM).map(|_| 1.2 * normal(&mut rng)).collect())
            .collect();
        let n = ds.patients * ds.rows_per_patient;
        let mut labels: Vec<i32> = (0..n).map(|i| (i % ds.classes) as i32).collect();
        labels.shuffle(&mut rng);
        let groups: Vec<i32> = (0..n).map(|i| (i / ds.rows_per_patient) as i32).collect();
        let offsets: Vec<Vec<f64>> = (0..ds.patients)
            .map(|_| (0..LATENT_DIM).map(|_| 0.5 * normal(&mut rng)).collect())
            .collect();
        let latent: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..LATENT_DIM)
                    .map(|j| means[labels[i] as usize][j] + offsets[groups[i] as usize][j] + 0.8 * normal(&mut rng))
                    .collect()
            })
            .collect();

        for (bi, bb) in BACKBONES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED ^ ((di as u64) << 32) ^ ((bi as u64 + 1) << 8));
            let scale = 1.0 / (LATENT_DIM as f64).sqrt();
            let proj: Vec<Vec<f64>> = (0..bb.dim)
                .map(|_| (0..LATENT_DIM).map(|_| scale * normal(&mut rng)).collect())
                .collect();
            let rows: Vec<Vec<f64>> = latent
                .iter()
                .map(|z| {
                    proj.iter()
                        .map(|p| bb.snr * p.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + normal(&mut rng))
                        .collect()
                })
                .collect();
            let mut meta = TableMeta::new(bb.name, bb.params, ds.name);
            meta.extra.insert("snr".into(), bb.snr.to_string());
            meta.extra.insert("suite_seed".into(), SUITE_SEED.to_string());
            let table = EmbeddingTable::from_rows(&rows, Some(labels.clone()), Some(groups.clone()), meta)
                .expect("generated table is valid");
            let path = out.join(format!("{}__{}.emb", bb.name, ds.name));
            write_table(&table, &path).expect("write table");
            println!("{}", path.display());
        }
    }
}
