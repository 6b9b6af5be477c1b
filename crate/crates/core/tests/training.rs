//! Training reproducibility and checkpoint persistence.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tk_core::checkpoint;
use tk_core::model::{TkConfig, TkModel, WindowConfig};
use tk_core::text::{EmbeddingTable, Vocabulary, PAD_ID};
use tk_core::train::{encode_triples, train_with_validator, TrainConfig, TrainingTriple};
use tk_core::tsv::TextTriple;

fn config() -> TkConfig {
    TkConfig {
        d_emb: 6,
        layers: 1,
        heads: 2,
        head_size: 3,
        ff_dim: 4,
        kernel_centers: vec![1.0, 0.5, 0.0],
        query_cap: 4,
        doc_cap: 8,
        ..TkConfig::default()
    }
}

fn model(seed: u64, window: Option<WindowConfig>) -> TkModel {
    let terms = ["a", "b", "c", "d", "e"];
    let vocab = Vocabulary::from_terms(terms.iter().map(|t| t.to_string()), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = EmbeddingTable::random(vocab.len(), 6, &mut rng);
    TkModel::new(config(), window, vocab, emb, &mut rng).unwrap()
}

fn triples(model: &TkModel) -> Vec<TrainingTriple> {
    let texts = [
        ("a b", "a b c", "d e"),
        ("c", "c d c", "e a"),
        ("d e", "e d", "b c a"),
    ];
    let raw: Vec<TextTriple> = (0..4)
        .flat_map(|_| texts.iter())
        .map(|(q, p, n)| TextTriple {
            query: q.to_string(),
            positive: p.to_string(),
            negative: n.to_string(),
        })
        .collect();
    encode_triples(model, &raw).unwrap()
}

fn run(seed: u64) -> (TkModel, String) {
    let m = model(seed, None);
    let t = triples(&m);
    let config = TrainConfig {
        batch_size: 4,
        validate_every: 2,
        max_steps: 6,
        seed,
        ..TrainConfig::default()
    };
    let mut calls = 0;
    let out = train_with_validator(m, &t, &config, |_| {
        calls += 1;
        Ok(calls as f64)
    })
    .unwrap();
    (out.model, out.log.to_tsv())
}

#[test]
fn same_seed_gives_identical_weights_and_logs() {
    let (a, log_a) = run(5);
    let (b, log_b) = run(5);
    assert_eq!(log_a, log_b);
    assert_eq!(
        checkpoint::to_text(&a).unwrap(),
        checkpoint::to_text(&b).unwrap()
    );
    let (_, log_c) = run(6);
    assert_ne!(log_a, log_c);
}

#[test]
fn padding_row_stays_zero() {
    let (trained, _) = run(3);
    let emb = &trained.params.get(trained.ids.embedding).tensor;
    assert!(emb.row(PAD_ID as usize).iter().all(|&v| v == 0.0));
    let fresh = model(3, None);
    let before = &fresh.params.get(fresh.ids.embedding).tensor;
    assert_ne!(before.row(2), emb.row(2), "real rows should move");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), windowed in any::<bool>()) {
        let window = windowed.then(|| WindowConfig::with_half_strides(vec![2, 4], 2));
        let mut m = model(seed, window);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        // Spread the weights over many magnitudes.
        for p in m.params.iter_mut() {
            for v in p.tensor.values_mut() {
                if *v != 0.0 {
                    *v *= 10f64.powi(rng.gen_range(-30..30));
                }
            }
        }
        let text = checkpoint::to_text(&m).unwrap();
        let back = checkpoint::from_text(&text, "ckpt").unwrap();
        prop_assert_eq!(checkpoint::to_text(&back).unwrap(), text);
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            let bits = |t: &tk_core::tensor::Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        prop_assert_eq!(back.window, m.window);
        prop_assert_eq!(back.vocab.terms(), m.vocab.terms());
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let text = checkpoint::to_text(&model(1, None)).unwrap();
    assert!(
        checkpoint::from_text(&text.replace("tk-checkpoint 1", "tk-checkpoint 9"), "c").is_err()
    );
    let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
    assert!(checkpoint::from_text(&cut, "c").is_err());
}
