//! Corrupt a sentence embedding step by step and watch the tokens drown.
//!
//! Each token id maps to an embedding row; the forward process mixes that
//! clean matrix with Gaussian noise according to the schedule. Rounding the
//! noisy matrix back to the cosine-nearest vocabulary rows shows how much of
//! the sentence is still recoverable at each timestep: early steps are
//! near-lossless, late steps are indistinguishable from noise.
//!
//! Run with `cargo run --release --example forward_noising`.

use anyhow::Result;
use ndarray::Array2;

use diffstyle::diffusion::linear_schedule;
use diffstyle::rng::derive_rng;
use diffstyle::sampler::round_to_tokens;
use diffstyle::tokenizer::Vocabulary;
use diffstyle::Scalar;

fn main() -> Result<()> {
    let sentence = "the quick brown fox jumps over the lazy dog";
    let words: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();

    let mut vocab = Vocabulary::with_reserved();
    for w in &words {
        vocab.insert(w);
    }

    // A random embedding table at the training init scale. In dimension 64
    // random rows are nearly orthogonal, so cosine rounding has wide margins.
    let d = 64;
    let mut rng = derive_rng(11, "init", 0);
    let embed = Array2::<f64>::from_shape_fn((vocab.len(), d), |_| {
        0.02 * f64::standard_normal(&mut rng)
    });

    let ids = vocab.encode(&words, words.len() + 1, false)?;
    let mut x0 = Array2::<f64>::zeros((ids.len(), d));
    for (row, &id) in ids.iter().enumerate() {
        x0.row_mut(row).assign(&embed.row(id as usize));
    }

    let schedule = linear_schedule(2000, 1e-4, 0.02)?;
    println!("clean:   {}", sentence);
    println!();
    println!(
        "{:>6}  {:>12}  {:>9}  recovered tokens",
        "t", "sqrt(abar)", "survived"
    );
    let mut noise_rng = derive_rng(11, "noise", 0);
    for t in [1usize, 50, 200, 500, 800, 1200, 1600, 2000] {
        let noise =
            Array2::<f64>::from_shape_fn(x0.raw_dim(), |_| f64::standard_normal(&mut noise_rng));
        let x_t = schedule.q_sample(x0.view(), t, noise.view())?;
        let rounded = round_to_tokens(&embed, x_t.view());
        let survived = rounded.iter().zip(&ids).filter(|(a, b)| a == b).count();
        let text = rounded
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{t:>6}  {:>12.4}  {survived:>5}/{:<3}  {text}",
            schedule.alpha_bar(t).sqrt(),
            ids.len()
        );
    }
    println!();
    println!(
        "the denoiser is trained to invert exactly this corruption, one\n\
         predicted clean matrix per (noisy matrix, timestep) pair"
    );
    Ok(())
}
