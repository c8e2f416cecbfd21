use answervault::corpus::{DatasetSplit, InputFormat, QuestionRecord};
use answervault::evaluate::{evaluate_accuracy, predict_all};
use answervault::siamese::{train, EncoderConfig, LossKind, SiameseModel};
use answervault::synthetic::{generate, SyntheticSpec};
use answervault::text::Vocabulary;
use answervault::Error;
use serde_json::json;

/// Back to the SciQ distribution layout (correct answer first, no id).
fn to_sciq(records: &[QuestionRecord]) -> String {
    let values: Vec<_> = records
        .iter()
        .map(|r| {
            let d: Vec<&String> = r.options.iter().enumerate().filter(|(i, _)| *i != r.correct_index).map(|(_, o)| o).collect();
            json!({
                "question": r.question,
                "distractor1": d[0],
                "distractor2": d[1],
                "distractor3": d[2],
                "correct_answer": r.correct_answer(),
                "support": r.support,
            })
        })
        .collect();
    serde_json::to_string_pretty(&values).unwrap()
}

fn small_config(loss_kind: LossKind) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 400,
        embed_dim: 8,
        hidden_dim: 8,
        max_len: 32,
        epochs: 2,
        batch_size: 8,
        loss_kind,
        ..EncoderConfig::default()
    }
}

#[test]
fn sciq_directory_layout() {
    let data = generate(&SyntheticSpec { records: 30, ..SyntheticSpec::default() });
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.json"), to_sciq(&data[..20])).unwrap();
    std::fs::write(dir.path().join("valid.json"), to_sciq(&data[20..25])).unwrap();
    std::fs::write(dir.path().join("test.json"), to_sciq(&data[25..])).unwrap();

    let split = DatasetSplit::load(dir.path(), 13).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (20, 5, 5));
    assert_eq!(split.train[3].id, "train-3");
    assert_eq!(split.test[0].id, "test-0");
    for (loaded, original) in split.train.iter().zip(&data) {
        assert_eq!(loaded.correct_answer(), original.correct_answer());
        assert_eq!(loaded.support, original.support);
        let mut a = loaded.options.clone();
        let mut b = original.options.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
    assert_eq!(split, DatasetSplit::load(dir.path(), 13).unwrap());
    let other_seed = DatasetSplit::load(dir.path(), 14).unwrap();
    assert!(split.train.iter().zip(&other_seed.train).any(|(a, b)| a.correct_index != b.correct_index));

    let single = dir.path().join("train.json");
    let partitioned = DatasetSplit::load(&single, 13).unwrap();
    assert_eq!((partitioned.train.len(), partitioned.validation.len(), partitioned.test.len()), (16, 2, 2));
}

#[test]
fn missing_train_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(DatasetSplit::load(dir.path(), 13), Err(Error::Io { .. })));
}

#[test]
fn vocabulary_file_round_trip() {
    let data = generate(&SyntheticSpec { records: 20, ..SyntheticSpec::default() });
    let texts: Vec<&str> = data.iter().map(|r| r.support.as_str()).collect();
    let vocab = Vocabulary::build(&texts, 50).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.tsv");
    vocab.save(&path).unwrap();
    assert_eq!(Vocabulary::load(&path, Some(50)).unwrap(), vocab);

    std::fs::write(&path, "<pad>\t0\n<unk>\t1\nfoo\t3\n").unwrap();
    assert!(Vocabulary::load(&path, None).is_err());
    std::fs::write(&path, "<pad>\t0\n<unk>\t1\nfoo\n").unwrap();
    assert!(Vocabulary::load(&path, None).is_err());
}

#[test]
fn checkpoint_file_preserves_predictions() {
    let data = generate(&SyntheticSpec { records: 60, ..SyntheticSpec::default() });
    let (train_set, test_set) = data.split_at(40);
    let dir = tempfile::tempdir().unwrap();
    for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Bce] {
        let model = train(&small_config(kind), train_set, &[], InputFormat::OptionsOnly).unwrap().model;
        let path = dir.path().join(format!("{kind}.ckpt"));
        model.save(&path).unwrap();
        let loaded = SiameseModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.fingerprint(), model.fingerprint());
        for format in InputFormat::ALL {
            let before = predict_all(&model, test_set, format).unwrap();
            let after = predict_all(&loaded, test_set, format).unwrap();
            assert_eq!(before, after);
            assert_eq!(
                evaluate_accuracy(&model, test_set, format).unwrap().to_bits(),
                evaluate_accuracy(&loaded, test_set, format).unwrap().to_bits()
            );
        }
        assert!(SiameseModel::load_expecting(&path, 400).is_ok());
        assert!(SiameseModel::load_expecting(&path, 401).is_err());
    }
}

#[test]
fn damaged_checkpoint_files_are_rejected() {
    let data = generate(&SyntheticSpec { records: 10, ..SyntheticSpec::default() });
    let model = train(&small_config(LossKind::Contrastive), &data, &[], InputFormat::OptionsOnly).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(SiameseModel::load(&path), Err(Error::Checkpoint(_))));
    let mut flipped = bytes.clone();
    let mid = flipped.len() - 100;
    flipped[mid] ^= 1;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(SiameseModel::load(&path), Err(Error::Checkpoint(_))));
    assert!(matches!(SiameseModel::load(dir.path().join("absent")), Err(Error::Io { .. })));
}
