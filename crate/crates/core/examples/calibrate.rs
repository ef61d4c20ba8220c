//! Scratch calibration mirroring the acceptance criteria 6, 7, and 9.
use bandsplit::config::RunConfig;
use bandsplit::data::toy;
use bandsplit::eval::{evaluate_corpus, snr, MixtureSeparator, ModelSeparator};
use bandsplit::losses::{LossConfig, LossKind};
use bandsplit::model::{separate_chunked, ModelParams};
use bandsplit::train::{self, StepRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ma(trace: &[StepRecord], step: usize, window: usize) -> f64 {
    trace[step - window..step].iter().map(|r| r.loss).sum::<f64>() / window as f64
}

fn main() {
    let run = RunConfig::desk_preset();
    let train_corpus = toy::generate_toy_corpus_mem(200, 4.0, 8000.0, 1).unwrap();
    let held_out = toy::generate_toy_corpus_mem(8, 4.0, 8000.0, 2).unwrap();
    let plan = run.test_chunk_plan().unwrap();

    let model_cfg = run.build_model_config().unwrap();
    let mut params =
        ModelParams::init(model_cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    println!("params: {}", params.num_params());

    let t0 = std::time::Instant::now();
    let trace = train::train(&mut params, &train_corpus, &run.train, &run.stft).unwrap();
    println!("[crit6] {} steps in {:.0}s", trace.len(), t0.elapsed().as_secs_f64());
    let samples: Vec<f64> = (1..=10).map(|k| ma(&trace, 50 * k, 20)).collect();
    println!(
        "[crit6] MA-20 at 50-step samples: {:?}",
        samples.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    let strictly = samples.windows(2).all(|w| w[1] < w[0]);
    println!("[crit6] strictly decreasing: {strictly}");

    let sep = ModelSeparator { params: &params, stft: run.stft, chunk: Some(plan) };
    let l1_report = evaluate_corpus(&sep, &held_out).unwrap();
    let base =
        evaluate_corpus(&MixtureSeparator { stems: held_out.stem_names() }, &held_out).unwrap();
    for (s, b) in l1_report.summary.iter().zip(&base.summary) {
        println!(
            "[crit6] {:<10} model {:7.2} mixture {:7.2} delta {:+.2}",
            s.stem,
            s.mean_snr_db.0,
            b.mean_snr_db.0,
            s.mean_snr_db.0 - b.mean_snr_db.0
        );
    }

    // Criterion 7: MSE twin run.
    let mut mse_run = run.clone();
    mse_run.train.loss = LossConfig::new(LossKind::Mse);
    let mut mse_params = ModelParams::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let t0 = std::time::Instant::now();
    train::train(&mut mse_params, &train_corpus, &mse_run.train, &mse_run.stft).unwrap();
    println!("[crit7] MSE run in {:.0}s", t0.elapsed().as_secs_f64());
    let mse_sep = ModelSeparator { params: &mse_params, stft: run.stft, chunk: Some(plan) };
    let mse_report = evaluate_corpus(&mse_sep, &held_out).unwrap();
    println!(
        "[crit7] avg SNR: L1SNR {:.2} vs MSE {:.2} -> ordering {}",
        l1_report.mean_snr_db.0,
        mse_report.mean_snr_db.0,
        l1_report.mean_snr_db.0 >= mse_report.mean_snr_db.0
    );

    // Criterion 9: attach composite decoder, decoder-only training.
    let composite = "music_and_effects";
    let mut attached =
        params.attach_decoder(composite, &mut ChaCha8Rng::seed_from_u64(909)).unwrap();
    let comp_train =
        train_corpus.clone().with_composite_stem(composite, &["music", "effects"]).unwrap();
    let mut cfg9 = run.train.clone();
    cfg9.freeze_encoder = true;
    cfg9.epochs = 6;
    let t0 = std::time::Instant::now();
    train::train(&mut attached, &comp_train, &cfg9, &run.stft).unwrap();
    println!("[crit9] decoder-only run in {:.0}s", t0.elapsed().as_secs_f64());
    let comp_held =
        held_out.clone().with_composite_stem(composite, &["music", "effects"]).unwrap();
    let att_sep = ModelSeparator { params: &attached, stft: run.stft, chunk: Some(plan) };
    let att_report = evaluate_corpus(&att_sep, &comp_held).unwrap();
    let att_snr = att_report.stem_mean_snr(composite).unwrap();
    let mut sums = Vec::new();
    for track in &comp_held.tracks {
        let stems = separate_chunked(&params, &track.mixture, &run.stft, &plan).unwrap();
        let m = &stems.iter().find(|(n, _)| n == "music").unwrap().1;
        let e = &stems.iter().find(|(n, _)| n == "effects").unwrap().1;
        sums.push(snr(&(m + e), track.stems.get(composite).unwrap()).unwrap());
    }
    let sum_snr = sums.iter().sum::<f64>() / sums.len() as f64;
    println!(
        "[crit9] attached {att_snr:.2} dB vs sum-of-decoders {sum_snr:.2} dB -> ok {}",
        att_snr >= sum_snr - 0.5
    );
}
