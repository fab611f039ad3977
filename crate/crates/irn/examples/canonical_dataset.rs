//! The canonical on-disk dataset: manifest + one JSON record per sequence.
//!
//! Every ingestion path (native skeleton formats, pose streams, synthesis)
//! converges on this layout, and training/evaluation read only it. The
//! example writes a synthetic corpus out, reads it back, and builds fold
//! splits under two protocols.
//!
//! Run with: `cargo run --example canonical_dataset`

use irn::skeleton::canonical::{load_canonical_dir, write_canonical};
use irn::skeleton::folds::{make_folds, Protocol};
use irn::skeleton::synthetic::synth_corpus;
use std::fs;

fn main() -> irn::Result<()> {
    let dir = std::env::temp_dir().join("irn_canonical_demo");
    let _ = fs::remove_dir_all(&dir);

    let mut seqs = synth_corpus(24, 0.05, 7);
    // Tag alternating subject ids so the subject-split protocol has
    // something to key on (real loaders fill these from file names).
    for (i, s) in seqs.iter_mut().enumerate() {
        s.subject = Some((i % 3) as u32);
    }

    let manifest = write_canonical(&dir, &seqs, "synthetic")?;
    println!(
        "wrote {} records, {} classes, schema v{}",
        manifest.records.len(),
        manifest.classes,
        manifest.schema_version
    );
    for entry in manifest.records.iter().take(3) {
        println!("  {} -> {} (label {:?})", entry.id, entry.file, entry.label);
    }
    println!("  ...");

    let (manifest2, loaded) = load_canonical_dir(&dir)?;
    assert_eq!(manifest2.records.len(), loaded.len());
    assert_eq!(loaded, seqs, "round trip preserves every coordinate");
    println!("round trip: {} sequences identical", loaded.len());

    // Grouped k-fold: sequences sharing a pair id stay on one side.
    let kfold = make_folds(&loaded, &Protocol::KFold { k: 4 }, 7)?;
    println!("\nprotocol {}:", kfold.protocol);
    for (k, fold) in kfold.folds.iter().enumerate() {
        println!("  fold {k}: {} train / {} test", fold.train.len(), fold.test.len());
    }

    // Subject split: listed subjects train, the rest test.
    let subject = make_folds(
        &loaded,
        &Protocol::CrossSubject {
            train_subjects: vec![0, 1],
        },
        7,
    )?;
    let fold = &subject.folds[0];
    println!(
        "protocol {}: {} train / {} test",
        subject.protocol,
        fold.train.len(),
        fold.test.len()
    );

    let _ = fs::remove_dir_all(&dir);
    Ok(())
}
