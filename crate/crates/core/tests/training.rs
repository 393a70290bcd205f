use hsvae::diff::RngStream;
use hsvae::metrics::reconstruction_report;
use hsvae::model::{load_model, ModelConfig, Variant};
use hsvae::textdata::{synth_generate, SynthSpec};
use hsvae::training::{FitOutputs, TrainConfig, Trainer};

/// 300 sentences over a 203-token vocabulary.
fn corpus() -> Vec<Vec<usize>> {
    synth_generate(&SynthSpec { sentences_per_class: 150, ..SynthSpec::default() }).unwrap().sentences
}

const VOCAB: usize = 203;

fn config(variant: Variant, vocab: usize) -> ModelConfig {
    let mut c = ModelConfig::new(variant, vocab);
    c.latent_dim = 8;
    c.hidden_dim = 32;
    c
}

#[test]
fn reconstruction_improves_over_training() {
    let data = corpus();
    let mut t = Trainer::new(config(Variant::Hsvae, VOCAB), TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
    let records = t.fit(&data, &FitOutputs::default()).unwrap().records;
    assert_eq!(records.len(), 5);
    assert!(records[4].reconstruction > records[0].reconstruction, "{records:?}");
    assert!(records[4].objective > records[0].objective);
    assert!(records.iter().all(|r| r.gate_mean.is_some_and(|g| (0.0..=1.0).contains(&g))));
}

#[test]
fn every_variant_trains_with_finite_terms() {
    let data = corpus();
    for variant in Variant::ALL {
        let mut t = Trainer::new(config(variant, VOCAB), TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        let rep = t.fit(&data, &FitOutputs::default()).unwrap();
        for r in &rep.records {
            let terms = [r.reconstruction, r.kl_z, r.kl_gamma, r.mmd, r.penalty, r.objective];
            assert!(terms.iter().all(|v| v.is_finite()), "{variant}: {r:?}");
        }
        let last = rep.records.last().unwrap();
        match variant {
            Variant::Hsvae => assert!(last.kl_gamma > 0.0 && last.mmd == 0.0),
            Variant::MatVae => assert!(last.kl_gamma == 0.0 && last.mmd != 0.0),
            Variant::VaeL1 | Variant::VaeL2 => assert!(last.penalty > 0.0),
            Variant::Vae => assert!(last.penalty == 0.0 && last.mmd == 0.0),
        }
        let report = reconstruction_report(&t.store, &t.model, &data[..40], 16, &mut RngStream::new(1)).unwrap();
        assert!(report.reconstruction.is_finite() && report.reconstruction < 0.0);
    }
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus();
    let mut t = Trainer::new(config(Variant::Hsvae, VOCAB), TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    let outputs = FitOutputs { log: Some(dir.path().join("log.jsonl")), checkpoint_dir: Some(dir.path().join("ck")) };
    let rep = t.fit(&data, &outputs).unwrap();
    let (c, s) = load_model(&rep.checkpoints[0]).unwrap();
    assert_eq!(c, t.model);
    // Parameters are stored as 32-bit floats.
    for (name, v) in s.iter() {
        let orig = t.store.get(name).unwrap();
        for (a, b) in v.data().iter().zip(orig.data()) {
            assert_eq!(*a, *b as f32 as f64, "{name}");
        }
    }
}
