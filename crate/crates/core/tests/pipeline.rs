use hta_core::alignment::{
    embed_batch, synthetic_pairs, total_loss, train, ModelConfig, ModelParams, TrainConfig,
};
use hta_core::datapipe::{
    curate_dir, read_jsonl, write_jsonl, ClipRecord, CurateOptions, FrameCaption, Scale,
    Transcript, Word,
};
use hta_core::numerics::io;
use hta_core::retrieval::{evaluate_embeddings, Direction};
use hta_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two-second words, five per sentence, `sentences` sentences long.
fn timed_words(sentences: usize) -> Vec<Word> {
    let mut out = Vec::new();
    for s in 0..sentences {
        for w in 0..5 {
            let t0 = (s * 5 + w) as f64 * 2.0;
            let text = if w == 4 {
                format!("end{s}.")
            } else {
                format!("word{s}_{w}")
            };
            out.push(Word::new(text, t0, t0 + 2.0));
        }
    }
    out
}

#[test]
fn curate_directory_from_timed_words() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    write_jsonl(
        &input.join("a.jsonl"),
        &[
            Transcript::Words {
                video_id: "a".into(),
                words: timed_words(20),
            },
            Transcript::Words {
                video_id: "b".into(),
                words: timed_words(9),
            },
        ],
    )
    .unwrap();
    let captions: Vec<FrameCaption> = (0..21)
        .map(|k| FrameCaption {
            video_id: "a".into(),
            t: 10.0 * k as f64,
            caption: format!("frame {k} shows a cook at a stove"),
        })
        .collect();
    write_jsonl(&input.join("captions.jsonl"), &captions).unwrap();

    let out = dir.path().join("out");
    let summary = curate_dir(&input, &out, &CurateOptions::default()).unwrap();
    assert_eq!(summary.videos, 2);
    let clips: Vec<ClipRecord> = read_jsonl(&out.join("clips.jsonl")).unwrap();
    assert_eq!(clips.len(), summary.clips);

    // Each sentence lasts 10 s: short clips pair them up, medium clips take three.
    let short_a: Vec<[usize; 2]> = clips
        .iter()
        .filter(|c| c.video_id == "a" && c.scale == Scale::Short)
        .map(|c| c.sentences)
        .collect();
    assert_eq!(short_a[0], [0, 0]);
    assert!(clips
        .iter()
        .filter(|c| c.video_id == "a" && c.scale == Scale::Medium)
        .all(|c| c.sentence_count() == 3 || c.sentences[1] == 19));

    for c in &clips {
        assert!(!c.frames.is_empty());
        assert_eq!(c.frames[0], c.t0);
        assert!(*c.frames.last().unwrap() <= c.t1 + 1e-9);
        if c.video_id == "a" {
            assert!(c.caption.contains("cook"), "{c:?}");
        } else {
            assert!(c.caption.is_empty());
        }
        if c.scale == Scale::Short {
            assert_eq!(c.summarized_subtitle, c.subtitle);
        }
    }
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["videos"], 2);
}

#[test]
fn curate_rejects_non_monotone_words() {
    let dir = tempfile::tempdir().unwrap();
    let mut words = timed_words(3);
    words.swap(2, 7);
    write_jsonl(
        &dir.path().join("bad.jsonl"),
        &[Transcript::Words {
            video_id: "x".into(),
            words,
        }],
    )
    .unwrap();
    let err = curate_dir(
        dir.path(),
        &dir.path().join("out"),
        &CurateOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Input { .. }), "{err:?}");
}

#[test]
fn training_lowers_loss_and_survives_a_checkpoint_round_trip() {
    let model = ModelConfig::toy();
    let data = synthetic_pairs(12, &model, 0.1, 1).unwrap();
    let mut params = ModelParams::init(&model, 0.05, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let before = total_loss(&data, &params, &model).unwrap();
    let config = TrainConfig {
        steps: 60,
        base_lr: 3e-3,
        final_lr: 3e-5,
        ..TrainConfig::default()
    };
    let trace = train(&data, &mut params, &model, &config).unwrap();
    assert_eq!(trace.len(), 60);
    let after = total_loss(&data, &params, &model).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.bin");
    let tensors: Vec<_> = params.named().into_iter().map(|(_, t)| t).collect();
    io::save_all(&path, &tensors).unwrap();
    let mut restored = ModelParams::init(&model, 1.0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    restored.assign(&io::load_all(&path).unwrap()).unwrap();
    // Tensor files hold f32 payloads.
    for ((name, a), (_, b)) in restored.named().iter().zip(params.named()) {
        let rounded: Vec<f64> = b.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(a.data(), &rounded[..], "{name}");
    }
    let reloaded = total_loss(&data, &restored, &model).unwrap();
    assert!(
        (reloaded - after).abs() < 1e-3 * after.max(1.0),
        "{after} vs {reloaded}"
    );

    let (v, s, _) = embed_batch(&data, &restored, &model).unwrap();
    let report = evaluate_embeddings(&v, &s, Direction::TextToVideo, None).unwrap();
    assert!(report.r1 >= 50.0, "{report:?}");
}

#[test]
fn checkpoint_with_wrong_shapes_is_rejected() {
    let model = ModelConfig::toy();
    let mut params = ModelParams::init(&model, 0.05, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut tensors: Vec<_> = params.named().into_iter().map(|(_, t)| t).collect();
    tensors.pop();
    assert!(matches!(params.assign(&tensors), Err(Error::Format(_))));
    tensors.push(hta_core::numerics::Tensor::zeros(&[2]));
    assert!(matches!(params.assign(&tensors), Err(Error::Format(_))));
}
