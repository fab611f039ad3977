//! Finite-difference verification of the reverse-mode gradients.
//!
//! Builds a micro-scale model for every architecture variant (with and
//! without the structured pair feature and the recurrent head), perturbs a
//! capped number of coordinates per parameter tensor, and compares the
//! analytic gradient of the cross-entropy loss against central differences.
//!
//! Run with: `cargo run --example gradient_check`

use irn::autodiff::{grad_check, GradCheckConfig};
use irn::cli::random_micro_sample;
use irn::model::{IrnModel, ModelConfig, Variant};
use irn::train::init_params;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> irn::Result<()> {
    let seed = 0x5eed;
    let mut worst: f64 = 0.0;

    for &variant in Variant::ALL.iter() {
        for &use_h in &[false, true] {
            for &lstm in &[false, true] {
                // Two joints over four frames keeps every check sub-second.
                let mut cfg = ModelConfig::new(variant, 3, 4, 3, 2);
                cfg.g_widths = vec![6, 4];
                cfg.f_widths = vec![5, 4];
                cfg.lstm_hidden = 4;
                cfg.dropout = 0.0;
                cfg.use_h = use_h;
                cfg.lstm = lstm;
                cfg.fuse_at = 1;

                let mut model = IrnModel::new(cfg.clone())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                init_params(&mut model.store, 0.4, &mut rng);
                let sample = random_micro_sample(&cfg, &mut rng, if lstm { 2 } else { 0 });

                let pass = model.pass();
                let check_cfg = GradCheckConfig {
                    seed,
                    max_coords_per_param: 4,
                    ..GradCheckConfig::default()
                };
                let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let report = grad_check(&mut model.store, &check_cfg, |tape| {
                    let logits = pass.forward_sample(tape, &sample, &mut dropout_rng)?;
                    tape.softmax_cross_entropy(logits, &[sample.label])
                })?;

                let name = format!(
                    "{}{}{}",
                    variant.name(),
                    if use_h { " +h" } else { "" },
                    if lstm { " +lstm" } else { "" }
                );
                println!(
                    "{}  {:<20} max rel err {:.3e} over {} coords",
                    if report.passed() { "PASS" } else { "FAIL" },
                    name,
                    report.max_rel_err,
                    report.checked
                );
                worst = worst.max(report.max_rel_err);
                if !report.passed() {
                    return Err(irn::Error::Numeric(format!(
                        "gradient check failed for {name}: {:?}",
                        report.failures.first()
                    )));
                }
            }
        }
    }

    println!("\nall variants verified; worst relative error {worst:.3e}");
    Ok(())
}
