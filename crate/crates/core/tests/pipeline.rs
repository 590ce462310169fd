//! Stage 1 → checkpoint → Stage 2 on a small dataset.

use tacmamba::checkpoint::Checkpoint;
use tacmamba::encoder::{encoder_init, names, EncoderConfig};
use tacmamba::sim::{generate_batch, ScenarioConfig};
use tacmamba::train::{finetune_stage2, pretrain_stage1, read_metrics, write_metrics, SamplerKind, Stage1Config, Stage2Config};

#[test]
fn pretrain_save_load_finetune() {
    let data = generate_batch(
        &ScenarioConfig {
            duration_s: 4.0,
            presses: 2,
            seed: 40,
            ..Default::default()
        },
        6,
    )
    .unwrap();
    let enc = encoder_init(&EncoderConfig {
        d_model: 16,
        layers: 2,
        ..EncoderConfig::default()
    })
    .unwrap();
    let s1 = pretrain_stage1(
        &data,
        enc,
        &Stage1Config {
            steps: 8,
            eval_every: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((s1.initial_loss - 3f64.ln()).abs() <= 0.1, "{}", s1.initial_loss);
    assert_eq!(s1.steps, 8);

    let dir = tempfile::tempdir().unwrap();
    let mut ck = Checkpoint::with_encoder(&s1.encoder);
    ck.add_section("disc/", &s1.discriminator);
    ck.write(dir.path().join("s1.tacw")).unwrap();
    let back = Checkpoint::read(dir.path().join("s1.tacw")).unwrap();
    let enc = back.encoder().unwrap();
    assert_eq!(enc.store().data(), s1.encoder.store().data());
    assert_eq!(back.section("disc/").data(), s1.discriminator.data());

    for sampler in [SamplerKind::PhaseUniform, SamplerKind::Uniform] {
        let s2 = finetune_stage2(
            &data,
            &enc,
            &Stage2Config {
                steps: 10,
                eval_every: 5,
                sampler,
                ..Default::default()
            },
        )
        .unwrap();
        for v in enc.store().views() {
            if v.name.starts_with(names::PROMPT_PREFIX) {
                continue;
            }
            let a = enc.store().get(&v.name);
            let b = s2.encoder.store().get(&v.name);
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{} moved", v.name);
        }
        let log = dir.path().join("m.jsonl");
        let _ = std::fs::remove_file(&log);
        write_metrics(&log, &s1.log).unwrap();
        write_metrics(&log, &s2.log).unwrap();
        let all = read_metrics(&log).unwrap();
        assert_eq!(all.len(), s1.log.len() + s2.log.len());
        assert!(all.iter().all(|r| r.loss.is_finite()));
    }
}

#[test]
fn label_shuffled_batch_loss_is_ln3() {
    // fresh discriminator: prediction is near-uniform whatever the labels are
    let data = generate_batch(&ScenarioConfig::default(), 3).unwrap();
    for seed in 0..3 {
        let s1 = pretrain_stage1(
            &data,
            encoder_init(&EncoderConfig {
                seed,
                ..EncoderConfig::default()
            })
            .unwrap(),
            &Stage1Config {
                steps: 1,
                seed,
                eval_every: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((s1.initial_loss - 3f64.ln()).abs() <= 0.1, "{}", s1.initial_loss);
    }
}
