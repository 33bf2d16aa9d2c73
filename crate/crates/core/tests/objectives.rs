use chimera_core::model::{Modality, SemanticMemory};
use chimera_core::objectives::{contrastive_loss, nll_loss, total_loss, LossReport, LossWeights};
use chimera_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn memory(rows: &Mat, modality: Modality) -> SemanticMemory {
    SemanticMemory { values: Tensor::from_rows(rows).unwrap(), modality }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn loss(t: &Mat, s: &Mat, tau: f64) -> f64 {
    contrastive_loss(&memory(t, Modality::Text), &memory(s, Modality::Speech), tau).unwrap()
}

/// Direct evaluation of the symmetric slot-contrastive sum.
fn oracle(t: &Mat, s: &Mat, tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        dot / (na * nb)
    };
    let m = t.len();
    let mut total = 0.0;
    for i in 0..m {
        let z: f64 = (0..m).map(|j| (tau * cos(&t[i], &s[j])).exp()).sum();
        total -= (tau * cos(&t[i], &s[i])).exp().ln() - z.ln();
        let z: f64 = (0..m).map(|j| (tau * cos(&s[i], &t[j])).exp()).sum();
        total -= (tau * cos(&s[i], &t[i])).exp().ln() - z.ln();
    }
    total
}

/// Orthogonal matrix from Gram-Schmidt on a random square matrix.
fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let mut q: Mat = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &q {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn times(a: &Mat, q: &Mat) -> Mat {
    a.iter().map(|r| (0..q[0].len()).map(|j| r.iter().zip(q).map(|(x, qr)| x * qr[j]).sum()).collect()).collect()
}

#[test]
fn zero_temperature_gives_2m_ln_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in [2usize, 4, 16] {
        let (t, s) = (random(&mut rng, m, 5), random(&mut rng, m, 5));
        let expected = 2.0 * m as f64 * (m as f64).ln();
        assert!((loss(&t, &s, 0.0) - expected).abs() < 1e-10);
    }
}

#[test]
fn collapsed_memories_cost_the_same_as_ignorance() {
    let row = vec![0.3, -0.2, 0.9];
    let t = vec![row.clone(); 4];
    let s: Mat = vec![row.iter().map(|x| 2.0 * x).collect(); 4];
    assert!((loss(&t, &s, 1.0) - 8.0 * 4f64.ln()).abs() < 1e-10);
}

#[test]
fn matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = rng.gen_range(2..6);
        let d = rng.gen_range(1..7);
        let tau = rng.gen_range(0.0..3.0);
        let (t, s) = (random(&mut rng, m, d), random(&mut rng, m, d));
        assert!((loss(&t, &s, tau) - oracle(&t, &s, tau)).abs() < 1e-12);
    }
}

#[test]
fn label_smoothing_matches_closed_form() {
    // smoothed target: (1-ε) on the label plus ε/V everywhere
    let logits = vec![vec![1.0, -0.5, 0.25, 2.0], vec![0.0, 0.5, -1.0, 0.1]];
    let targets = [3u32, 1];
    let eps = 0.1;
    let mut expected = 0.0;
    for (row, &y) in logits.iter().zip(&targets) {
        let lse = row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        let logp: Vec<f64> = row.iter().map(|x| x - lse).collect();
        expected -= (1.0 - eps) * logp[y as usize] + eps / 4.0 * logp.iter().sum::<f64>();
    }
    expected /= 2.0;
    let got = nll_loss(&Tensor::from_rows(&logits).unwrap(), &targets, 0, eps).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn padding_positions_are_ignored() {
    let logits = Tensor::from_rows(&[vec![1.0, 2.0, 0.5], vec![9.0, -9.0, 0.0]]).unwrap();
    let only = Tensor::from_rows(&[vec![1.0, 2.0, 0.5]]).unwrap();
    let a = nll_loss(&logits, &[2, 0], 0, 0.1).unwrap();
    let b = nll_loss(&only, &[2], 0, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn disabled_terms_do_not_reach_the_total() {
    let r = LossReport { st: 1.5, mt: 1e6, ctr: 3.0, ..Default::default() };
    let w = LossWeights { st: 1.0, mt: 0.0, ctr: 0.5 };
    assert_eq!(total_loss(&r, &w).unwrap().total, 1.5 + 1.5);
    assert!(total_loss(&LossReport { mt: f64::NAN, ..r }, &w).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariant_under_orthogonal_transforms(seed in any::<u64>(), m in 2usize..6, d in 2usize..6, tau in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, s) = (random(&mut rng, m, d), random(&mut rng, m, d));
        let q = orthogonal(&mut rng, d);
        prop_assert!((loss(&t, &s, tau) - loss(&times(&t, &q), &times(&s, &q), tau)).abs() < 1e-9);
    }

    #[test]
    fn invariant_under_shared_slot_permutation(seed in any::<u64>(), m in 2usize..7, tau in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, s) = (random(&mut rng, m, 4), random(&mut rng, m, 4));
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let pt: Mat = perm.iter().map(|&i| t[i].clone()).collect();
        let ps: Mat = perm.iter().map(|&i| s[i].clone()).collect();
        prop_assert!((loss(&t, &s, tau) - loss(&pt, &ps, tau)).abs() < 1e-9);
    }

    #[test]
    fn invariant_under_positive_row_scaling(seed in any::<u64>(), m in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, s) = (random(&mut rng, m, 3), random(&mut rng, m, 3));
        let scaled: Mat = s.iter().map(|r| {
            let c = rng.gen_range(0.1..10.0);
            r.iter().map(|x| c * x).collect()
        }).collect();
        prop_assert!((loss(&t, &s, 1.0) - loss(&t, &scaled, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn symmetric_in_the_two_modalities(seed in any::<u64>(), m in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, s) = (random(&mut rng, m, 3), random(&mut rng, m, 3));
        prop_assert!((loss(&t, &s, 1.3) - loss(&s, &t, 1.3)).abs() < 1e-12);
    }
}
