//! Audit the hand-written backward pass with central finite differences.
//!
//! There is no autograd in this crate: every gradient is derived and coded by
//! hand. The only way to trust that code is to compare it against a numeric
//! derivative. This example instantiates a small model in `f64`, computes the
//! analytic gradient of the training loss once, then perturbs sampled
//! coordinates of every parameter tensor and reports the worst relative error
//! per tensor. Anything above ~1e-6 in double precision would indicate a
//! derivation bug rather than roundoff.
//!
//! Run with `cargo run --release --example gradient_check`.

use anyhow::Result;
use diffstyle::denoiser::{gradcheck, DenoiserConfig};

fn main() -> Result<()> {
    let cfg = DenoiserConfig {
        layers: 2,
        heads: 2,
        model_dim: 16,
        ffn_dim: 32,
        max_cond_len: 6,
        max_target_len: 5,
        dropout: 0.0,
        mask_cond_pad: true,
    };
    let vocab_size = 12;
    let batch_size = 3;
    let probes = 24;

    println!(
        "model: {} layers, {} heads, D={}, FFN={}, Ls={}, Lt={}, vocab={}",
        cfg.layers,
        cfg.heads,
        cfg.model_dim,
        cfg.ffn_dim,
        cfg.max_cond_len,
        cfg.max_target_len,
        vocab_size
    );
    println!("checking {probes} coordinates per tensor, batch of {batch_size}...");
    println!();

    let report = gradcheck::run(&cfg, vocab_size, batch_size, probes, 17)?;
    println!("{:<28} {:>14}", "tensor", "worst rel err");
    for (name, err) in &report.per_tensor {
        println!("{name:<28} {err:>14.3e}");
    }
    println!();
    println!(
        "checked {} coordinates, max relative error {:.3e}",
        report.coords_checked, report.max_rel_err
    );
    assert!(
        report.max_rel_err < 1e-6,
        "backward pass disagrees with finite differences"
    );
    println!("backward pass matches finite differences");
    Ok(())
}
