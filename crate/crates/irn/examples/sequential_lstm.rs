//! The recurrent head: classifying from a sequence of overlapping windows.
//!
//! Instead of a single central window, each sequence is cut into T-frame
//! windows advancing by T/2; the per-window pooled descriptors feed an LSTM
//! whose final hidden state drives the classifier.
//!
//! Run with: `cargo run --release --example sequential_lstm`

use irn::model::{ModelConfig, Variant};
use irn::skeleton::synthetic::{synth_corpus, Archetype};
use irn::skeleton::windows::prepare_samples;
use irn::train::{evaluate, fit, TrainConfig};

fn main() -> irn::Result<()> {
    let train_seqs = synth_corpus(120, 0.05, 7);
    let test_seqs = synth_corpus(30, 0.05, 99);

    // Overlapping windows: every consecutive window, not one dilated one.
    let t = 8;
    let train_samples = prepare_samples(&train_seqs, t, 1, true)?;
    let test_samples = prepare_samples(&test_seqs, t, 1, true)?;
    println!(
        "each sequence yields {} overlapping {t}-frame windows (step {})",
        train_samples[0].windows.len(),
        t / 2
    );

    let mut mc = ModelConfig::new(Variant::Inter, Archetype::ALL.len(), t, 3, 15);
    mc.g_widths = vec![24, 12];
    mc.f_widths = vec![12, 8];
    mc.lstm = true;
    mc.lstm_hidden = 10;
    mc.dropout = 0.0;
    mc.one_hot_ids = true;

    let mut cfg = TrainConfig::new(mc);
    cfg.lr = 1e-2;
    cfg.init_std = 0.09;
    cfg.batch_size = 12;
    cfg.epochs = 10;
    cfg.seed = 7;
    cfg.val_fraction = 0.0;

    println!("training the recurrent head over window sequences...");
    let (model, history) = fit(&train_samples, &cfg, None)?;
    if let Some(last) = history.rows.last() {
        println!(
            "final epoch: loss {:.4}, train accuracy {:.3}",
            last.loss, last.train_acc
        );
    }

    let ev = evaluate(&model, &test_samples)?;
    println!("test accuracy: {:.3} on {} sequences", ev.accuracy, test_samples.len());
    Ok(())
}
