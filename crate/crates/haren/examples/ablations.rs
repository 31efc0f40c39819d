//! Component ablations on a synthetic corpus with markers split across
//! shallow-only and deep-only layers: the full model against the
//! single-layer baseline (no layer clustering / no cross-attention) and
//! against training without the CTC branch.
//!
//! Usage: cargo run --release --example ablations [-- seeds strength density epochs]

use haren::config::RunConfig;
use haren::data::{generate_synthetic, Manifest, SyntheticSpec};
use haren::model::{init_params, ModelVariant};
use haren::pipeline::{derive_seed, evaluate, train, LoadedCorpus, TrainConfig};
use haren::runner;

fn main() -> haren::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| -> f64 {
        args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default)
    };
    let n_seeds = arg(0, 5.0) as u64;
    let strength = arg(1, 3.0);
    let density = arg(2, 0.05);
    let epochs = arg(3, 20.0) as usize;
    let frames = arg(4, 64.0) as usize;
    let crop = arg(5, 48.0) as usize;
    let segments = arg(6, 2.0) as usize;
    let ctc_weight = arg(7, 1.0);
    let cadence = arg(8, 5.0) as u64;
    let centroids = arg(9, 5.0) as usize;
    let dev_fraction = arg(10, 2.0 / 3.0);
    let per_class = arg(11, 24.0) as usize;

    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec {
        control_subjects: per_class,
        depressed_subjects: per_class,
        segments_per_subject: segments,
        frames,
        marker_strength: strength,
        marker_density: density,
        // Small train split, large held-out split by default.
        dev_fraction,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let corpus_info = generate_synthetic(&spec, dir.path())?;
    let manifest = Manifest::read_from(&corpus_info.manifest_path)?;
    let corpus = LoadedCorpus::load(&manifest, dir.path())?;

    let mut cfg = RunConfig::default();
    cfg.manifest = Some(corpus_info.manifest_path.clone());
    cfg.labels = Some(dir.path().join("labels"));
    cfg.model.centroids = centroids;
    let labels = runner::run_gen_labels(&cfg, &dir.path().join("labels"))?;

    let train_idx: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("train"))
        .map(|(i, _)| i)
        .collect();
    let eval_idx: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("dev"))
        .map(|(i, _)| i)
        .collect();
    println!(
        "corpus: {} train / {} eval segments; strength {strength}, density {density}",
        train_idx.len(),
        eval_idx.len()
    );

    let variants: [(&str, ModelVariant, bool); 3] = [
        ("full", ModelVariant::Full, true),
        ("no-ctc", ModelVariant::Full, false),
        (
            "no-haren",
            ModelVariant::SingleLayer {
                layer: cfg.model.layers / 2,
            },
            true,
        ),
    ];
    println!("{:<10} {:>8}  per-seed macro F1", "variant", "mean");
    for (name, variant, use_ctc) in variants {
        let mut scores = Vec::new();
        for s in 0..n_seeds {
            let seed = derive_seed(1000 + s, 0xAB);
            let mut tc = TrainConfig {
                epochs,
                seed,
                crop_frames: crop,
                ..TrainConfig::default()
            };
            tc.loss.ctc_weight = if use_ctc { ctc_weight } else { 0.0 };
            tc.loss.ctc_every_n_batches = cadence;
            let params = init_params(&cfg.model, variant, seed)?;
            let outcome = train(&corpus, &train_idx, params, Some(&labels.codebook), &tc)?;
            let metrics = evaluate(&corpus, &eval_idx, &outcome.params, tc.precision)?;
            scores.push(metrics.summary.macro_f1);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let pretty: Vec<String> = scores.iter().map(|s| format!("{s:.3}")).collect();
        println!("{name:<10} {mean:>8.4}  [{}]", pretty.join(", "));
    }
    Ok(())
}
