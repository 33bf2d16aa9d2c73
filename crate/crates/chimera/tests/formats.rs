use std::fs;
use std::path::Path;

use chimera::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use chimera::corpus::{format_corpus, load_corpus, parse_corpus, read_vocab, save_corpus, write_vocab, FrameRef, Record};
use chimera::frames::{decode_frames, encode_frames, read_frames, write_frames};
use chimera::table::Table;
use chimera::FormatError;
use chimera_core::corpus::{generate_synthetic_corpus, FrameSequence, SyntheticConfig};
use chimera_core::model::{Chimera, ModelConfig, Source};
use chimera_core::train::ModelCheckpoint;
use proptest::prelude::*;

fn utterances() -> Vec<FrameSequence> {
    vec![
        FrameSequence::new(2, 3, vec![0.0, 0.5, -0.25, -1.0, f32::MIN_POSITIVE, 1e-7]).unwrap(),
        FrameSequence::new(1, 3, vec![-0.0, 0.875, -0.999]).unwrap(),
    ]
}

#[test]
fn two_line_fixture_parses() {
    let text = "train.chfr#3\tw1 w2\tw4 w5 w6\nw7 w8\tw9\n";
    let records = parse_corpus(Path::new("x.tsv"), text).unwrap();
    assert_eq!(
        records,
        vec![
            Record::St {
                frames: FrameRef { file: "train.chfr".into(), index: 3 },
                transcript: "w1 w2".into(),
                translation: "w4 w5 w6".into(),
            },
            Record::Mt { source: "w7 w8".into(), target: "w9".into() },
        ]
    );
    assert_eq!(format_corpus(Path::new("x.tsv"), &records).unwrap(), text);
}

#[test]
fn empty_corpus_is_empty() {
    assert!(parse_corpus(Path::new("e.tsv"), "").unwrap().is_empty());
}

#[test]
fn parse_errors_name_file_and_line() {
    let text = "a\tb\nonly-one-field\n";
    match parse_corpus(Path::new("bad.tsv"), text) {
        Err(e @ FormatError::Parse { line: 2, .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("bad.tsv") && msg.contains('2'), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    let bad_index = "f.chfr#x\ta\tb\n";
    assert!(matches!(parse_corpus(Path::new("b.tsv"), bad_index), Err(FormatError::Parse { line: 1, .. })));
}

#[test]
fn frames_round_trip_bitwise() {
    let u = utterances();
    let bytes = encode_frames(&u);
    let back = decode_frames(Path::new("f"), &bytes).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in u.iter().zip(&back) {
        let bits = |s: &FrameSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!((a.len(), a.dim(), bits(a)), (b.len(), b.dim(), bits(b)));
    }
    assert_eq!(encode_frames(&back), bytes);
}

#[test]
fn corrupt_frames_are_rejected() {
    let bytes = encode_frames(&utterances());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode_frames(Path::new("f"), &bad).is_err());
    for cut in [3, 10, bytes.len() - 1] {
        assert!(decode_frames(Path::new("f"), &bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut long = bytes;
    long.push(0);
    assert!(decode_frames(Path::new("f"), &long).is_err());
}

#[test]
fn frame_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.chfr");
    write_frames(&path, &utterances()).unwrap();
    assert_eq!(encode_frames(&read_frames(&path).unwrap()), encode_frames(&utterances()));
}

#[test]
fn saved_corpus_loads_identically() {
    let corpus =
        generate_synthetic_corpus(&SyntheticConfig { n_samples: 6, n_mt_pairs: 5, ..SyntheticConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_vocab(&dir.path().join("vocab.txt"), &corpus.vocab).unwrap();
    let vocab = read_vocab(&dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab, corpus.vocab);
    let path = save_corpus(dir.path(), "all", &vocab, &corpus.triplets, &corpus.mt_pairs).unwrap();
    let loaded = load_corpus(&path, &vocab).unwrap();
    assert_eq!(loaded.triplets, corpus.triplets);
    assert_eq!(loaded.mt_pairs, corpus.mt_pairs);
}

#[test]
fn missing_sidecar_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus =
        generate_synthetic_corpus(&SyntheticConfig { n_samples: 2, n_mt_pairs: 1, ..SyntheticConfig::default() }).unwrap();
    let path = save_corpus(dir.path(), "c", &corpus.vocab, &corpus.triplets, &[]).unwrap();
    fs::remove_file(dir.path().join("c.chfr")).unwrap();
    let msg = load_corpus(&path, &corpus.vocab).unwrap_err().to_string();
    assert!(msg.contains("c.chfr"), "{msg}");
}

fn fingerprint(model: &Chimera) -> Vec<u64> {
    let text = chimera_core::corpus::TokenSequence::new(vec![1, 5, 6, 7, 2]).unwrap();
    let m = model.memory(Source::Text(&text)).unwrap();
    m.values.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn checkpoint_round_trip_preserves_forward_pass() {
    let model = Chimera::new(ModelConfig::desk(), 11).unwrap();
    let ck = ModelCheckpoint::capture(&model, 42, 1.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.chck");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(fingerprint(&back.restore().unwrap()), fingerprint(&model));
    let again = dir.path().join("again.chck");
    save_checkpoint(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = Chimera::new(ModelConfig::desk(), 1).unwrap();
    let bytes = encode_checkpoint(&ModelCheckpoint::capture(&model, 0, 0.0));
    let mut bad = bytes.clone();
    bad[1] ^= 0x20;
    assert!(decode_checkpoint(Path::new("c"), &bad).is_err());
    assert!(decode_checkpoint(Path::new("c"), &bytes[..bytes.len() / 2]).is_err());
    assert!(decode_checkpoint(Path::new("c"), &bytes[..bytes.len() - 3]).is_err());
    let missing = load_checkpoint(Path::new("/nonexistent/x.chck")).unwrap_err().to_string();
    assert!(missing.contains("/nonexistent/x.chck"), "{missing}");
}

#[test]
fn table_round_trip() {
    let mut t = Table::new(["a", "b"]);
    t.push(vec!["1".into(), "0.1".into()]);
    t.push(vec!["x".into(), "-3e-9".into()]);
    let back = Table::parse(Path::new("t.tsv"), &t.render()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.column("b"), Some(1));
}

proptest! {
    #[test]
    fn text_records_round_trip(
        lines in prop::collection::vec((r"[a-z]{1,4}( [a-z]{1,4}){0,3}", r"[a-z]{1,4}( [a-z]{1,4}){0,3}", prop::option::of(0usize..50)), 0..8)
    ) {
        let records: Vec<Record> = lines
            .into_iter()
            .map(|(a, b, idx)| match idx {
                Some(index) => Record::St { frames: FrameRef { file: "s.chfr".into(), index }, transcript: a, translation: b },
                None => Record::Mt { source: a, target: b },
            })
            .collect();
        let text = format_corpus(Path::new("p"), &records).unwrap();
        prop_assert_eq!(parse_corpus(Path::new("p"), &text).unwrap(), records);
    }

    #[test]
    fn frames_round_trip_any(lens in prop::collection::vec(1usize..5, 0..4), dim in 1usize..4, seed in any::<u32>()) {
        let u: Vec<FrameSequence> = lens
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let data = (0..l * dim).map(|i| ((seed as usize + i * 31 + k) % 997) as f32 / 500.0 - 0.997).collect();
                FrameSequence::new(l, dim, data).unwrap()
            })
            .collect();
        let bytes = encode_frames(&u);
        prop_assert_eq!(encode_frames(&decode_frames(Path::new("p"), &bytes).unwrap()), bytes);
    }
}
