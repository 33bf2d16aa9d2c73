use chimera_core::analysis::{
    bleu, export_attention, export_memories, run_ablation, AblationSetup, AblationSuite, Pca, MAX_EXPORT_SAMPLES,
};
use chimera_core::corpus::{generate_synthetic_corpus, SyntheticConfig};
use chimera_core::model::{Chimera, ConvStackConfig, Modality, ModelConfig};
use chimera_core::train::TrainConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        encoder_layers: 1,
        projection_layers: 2,
        decoder_layers: 1,
        memory_len: 3,
        speech_dim: 16,
        frontend: ConvStackConfig { layers: 1, kernel: 3, stride: 1, padding: 1, channels: 8 },
        downsample: ConvStackConfig { layers: 2, kernel: 5, stride: 2, padding: 2, channels: 8 },
        max_positions: 256,
        tie_output: true,
        layer_norm_eps: 1e-5,
    }
}

/// Top eigenpairs by power iteration with deflation.
fn power_oracle(cov: &[Vec<f64>], k: usize) -> Vec<(f64, Vec<f64>)> {
    let d = cov.len();
    let mut a = cov.to_vec();
    let mut out = Vec::new();
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i + c) as f64 * 0.37).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[i][j] * v[j]).sum()).collect();
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / n).collect();
            lambda = n;
        }
        let lead = (0..d).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap();
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                a[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v));
    }
    out
}

#[test]
fn pca_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scales = [3.0, 2.0, 1.0, 0.5, 0.25];
    let points: Vec<Vec<f64>> =
        (0..60).map(|_| scales.iter().map(|s| s * rng.gen_range(-1.0..1.0) + 0.1).collect()).collect();
    // mix coordinates so the axes are not the eigenvectors
    let points: Vec<Vec<f64>> = points
        .iter()
        .map(|p| (0..5).map(|i| p[i] + 0.3 * p[(i + 1) % 5]).collect())
        .collect();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..5).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let cov: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..5).map(|j| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n).collect())
        .collect();
    let oracle = power_oracle(&cov, 2);
    let pca = Pca::fit(&points, 2).unwrap();
    for (c, (lambda, v)) in oracle.iter().enumerate() {
        assert!((pca.eigenvalues[c] - lambda).abs() < 1e-8);
        for (a, b) in pca.components[c].iter().zip(v) {
            assert!((a - b).abs() < 1e-8);
        }
    }
    for p in &points {
        let z = pca.transform(p);
        for (c, (_, v)) in oracle.iter().enumerate() {
            let expected: f64 = (0..5).map(|j| v[j] * (p[j] - mean[j])).sum();
            assert!((z[c] - expected).abs() < 1e-8);
        }
    }
}

#[test]
fn memory_export_pairs_every_sample_once_per_modality() {
    let data = generate_synthetic_corpus(&SyntheticConfig { n_samples: 12, ..SyntheticConfig::default() }).unwrap();
    let model = Chimera::new(small_config(), 1).unwrap();
    let dump = export_memories(&model, &data.triplets, 500).unwrap();
    assert_eq!(dump.records.len(), 24);
    for i in 0..12 {
        for modality in [Modality::Text, Modality::Speech] {
            assert_eq!(dump.records.iter().filter(|r| r.sample == i && r.modality == modality).count(), 1);
        }
    }
    assert!(dump.records.iter().all(|r| r.coords.len() == 3));
    let few = export_memories(&model, &data.triplets, 5).unwrap();
    assert_eq!(few.records.len(), 10);
    assert_eq!(MAX_EXPORT_SAMPLES, 100);
}

#[test]
fn duplicate_samples_get_duplicate_coordinates() {
    let data = generate_synthetic_corpus(&SyntheticConfig { n_samples: 4, ..SyntheticConfig::default() }).unwrap();
    let mut triplets = data.triplets.clone();
    triplets.push(triplets[1].clone());
    let model = Chimera::new(small_config(), 1).unwrap();
    let dump = export_memories(&model, &triplets, 10).unwrap();
    for modality in [Modality::Text, Modality::Speech] {
        let find = |s: usize| dump.records.iter().find(|r| r.sample == s && r.modality == modality).unwrap();
        assert_eq!(find(1).coords, find(4).coords);
    }
}

#[test]
fn attention_maps_are_distributions() {
    let data = generate_synthetic_corpus(&SyntheticConfig { n_samples: 3, ..SyntheticConfig::default() }).unwrap();
    let model = Chimera::new(small_config(), 1).unwrap();
    let t = &data.triplets[0];
    let dump = export_attention(&model, t).unwrap();
    assert_eq!(dump.text.shape(), &[3, t.transcript.len()]);
    assert_eq!(dump.speech.shape(), &[3, model.config().speech_output_len(t.speech.len()).unwrap()]);
    for map in [&dump.text, &dump.speech] {
        for k in 0..map.rows() {
            assert!((map.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    let (lt, ls) = (dump.text.cols(), dump.speech.cols());
    assert_eq!(dump.products.shape(), &[lt, ls]);
    assert!((dump.products.data().iter().sum::<f64>() - 3.0).abs() < 1e-9);
    for cell in dump.mixing.data().chunks(3) {
        assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ablation_suites_have_the_table_layouts_and_are_reproducible() {
    let data = generate_synthetic_corpus(&SyntheticConfig { n_samples: 8, n_mt_pairs: 16, ..SyntheticConfig::default() }).unwrap();
    let test = generate_synthetic_corpus(&SyntheticConfig { n_samples: 4, n_mt_pairs: 0, seed: 99, ..SyntheticConfig::default() }).unwrap();
    let setup = AblationSetup {
        model: small_config(),
        model_seed: 3,
        pretrain: TrainConfig { max_updates: 3, ..TrainConfig::desk_pretrain() },
        finetune: TrainConfig { max_updates: 3, ..TrainConfig::desk_finetune() },
        train: &data.triplets,
        external: &data.mt_pairs,
        test: &test.triplets,
        max_len: 12,
    };
    let freezing = run_ablation(AblationSuite::Freezing, &setup).unwrap();
    let flags: Vec<_> = freezing.iter().map(|r| (r.freeze_projection, r.freeze_decoder)).collect();
    assert_eq!(flags, [(false, false), (true, false), (false, true), (true, true)]);
    let multitask = run_ablation(AblationSuite::Multitask, &setup).unwrap();
    let grid: Vec<_> = multitask.iter().map(|r| (r.mt, r.contrastive)).collect();
    assert_eq!(grid, [(true, true), (true, false), (false, true), (false, false)]);
    let scaling = run_ablation(AblationSuite::MtScaling, &setup).unwrap();
    assert_eq!(scaling.iter().map(|r| r.mt_fraction).collect::<Vec<_>>(), [0.0, 0.25, 0.5, 1.0]);
    for r in freezing.iter().chain(&multitask).chain(&scaling) {
        assert!((0.0..=100.0).contains(&r.bleu));
        assert!((0.0..=1.0).contains(&r.token_accuracy));
    }
    assert_eq!(run_ablation(AblationSuite::Multitask, &setup).unwrap(), multitask);
}

proptest! {
    #[test]
    fn self_bleu_is_100(corpus in proptest::collection::vec(proptest::collection::vec(0u16..50, 1..12), 1..10)) {
        prop_assert_eq!(bleu(&corpus, &corpus, 4).unwrap().score, 100.0);
    }
}
