//! The staged fusion procedure for the two-stream variants.
//!
//! Stage 1 trains the between-person and within-person relation networks
//! independently; stage 2 builds a fused model whose relation layers (and,
//! for mid-network fusion, the leading post-pool layers) start from those
//! trained weights while the fusion head starts fresh; stage 3 fine-tunes
//! the whole network. A flag replaces stages 1–2 with random initialization
//! for comparison.
//!
//! Run with: `cargo run --release --example pretrain_and_fuse`

use irn::model::{ModelConfig, Variant};
use irn::skeleton::synthetic::{synth_corpus, Archetype};
use irn::skeleton::windows::prepare_samples;
use irn::train::{evaluate, pretrain_and_fuse, TrainConfig};

fn config() -> TrainConfig {
    // Mid-network fusion after the first post-pool layer.
    let mut mc = ModelConfig::new(Variant::FcFused, Archetype::ALL.len(), 4, 3, 15);
    mc.fuse_at = 1;
    mc.g_widths = vec![32, 16];
    mc.f_widths = vec![16, 8];
    mc.dropout = 0.0;
    mc.one_hot_ids = true;
    let mut cfg = TrainConfig::new(mc);
    cfg.lr = 1e-2;
    cfg.init_std = 0.09;
    cfg.batch_size = 16;
    cfg.epochs = 10;
    cfg.seed = 7;
    cfg.val_fraction = 0.0;
    cfg
}

fn main() -> irn::Result<()> {
    let train_seqs = synth_corpus(120, 0.05, 7);
    let test_seqs = synth_corpus(30, 0.05, 99);
    let train = prepare_samples(&train_seqs, 4, 5, false)?;
    let test = prepare_samples(&test_seqs, 4, 5, false)?;

    println!("staged: pretrain both streams, copy, fine-tune");
    let staged = pretrain_and_fuse(&train, &config(), None)?;
    let inter_h = staged.inter_history.as_ref().expect("stage 1 ran");
    let intra_h = staged.intra_history.as_ref().expect("stage 1 ran");
    println!(
        "  stage 1 final train acc: inter {:.3}, intra {:.3}",
        inter_h.rows.last().unwrap().train_acc,
        intra_h.rows.last().unwrap().train_acc
    );
    println!(
        "  stage 3 final train acc: {:.3}",
        staged.history.rows.last().unwrap().train_acc
    );
    let staged_acc = evaluate(&staged.model, &test)?.accuracy;

    println!("random-init: same architecture, no pretraining");
    let mut random_cfg = config();
    random_cfg.random_init_fusion = true;
    let random = pretrain_and_fuse(&train, &random_cfg, None)?;
    assert!(random.inter_history.is_none(), "no pretraining stages ran");
    let random_acc = evaluate(&random.model, &test)?.accuracy;

    println!("\ntest accuracy: staged {staged_acc:.3} vs random-init {random_acc:.3}");
    Ok(())
}
