//! Memorize 16 tense-transfer pairs end to end.
//!
//! A single-task model (bare-source conditions, no style token) is trained
//! at the full desk profile with a 200-step schedule until seeded sampling
//! reproduces every training target exactly. This is the smallest complete
//! demonstration of the whole stack: conditions → noising → denoiser →
//! sampling → rounding.
//!
//! ```text
//! cargo run --release --example overfit_tiny
//! ```

use std::time::Instant;

use anyhow::Result;

use diffstyle::corpus::{ConditionBuilder, SentencePair, TransferId};
use diffstyle::denoiser::{DenoiserConfig, DenoiserParams};
use diffstyle::diffusion::linear_schedule;
use diffstyle::metrics::bleu_n;
use diffstyle::rng::derive_rng;
use diffstyle::sampler::{generate_batch, SampleConfig};
use diffstyle::tokenizer::Vocabulary;
use diffstyle::trainer::{EncodedDataset, TrainConfig, Trainer};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A 4×2×2 grid of present→past pairs; every word occurs at least three
/// times, so the pairs are their own preprocessed forms.
fn fixture_pairs() -> Vec<SentencePair> {
    let subjects = ["he", "she", "it", "john"];
    let verbs = [("walks", "walked"), ("runs", "ran")];
    let objects = ["store", "park"];
    let mut pairs = Vec::new();
    for s in subjects {
        for (present, past) in verbs {
            for o in objects {
                pairs.push(SentencePair {
                    source: toks(&format!("{s} {present} to the {o}")),
                    target: toks(&format!("{s} {past} to the {o}")),
                    transfers: vec![TransferId::ToPast],
                    extra_info: vec![],
                });
            }
        }
    }
    pairs
}

fn main() -> Result<()> {
    let seed = 7u64;
    let pairs = fixture_pairs();
    let vocab = Vocabulary::build(&pairs);
    let builder = ConditionBuilder::single_task(TransferId::ToPast);
    let conditioned: Vec<_> = pairs
        .iter()
        .map(|p| builder.conditioned(p))
        .collect::<Result<_, _>>()?;

    let dcfg = DenoiserConfig {
        dropout: 0.0,
        ..DenoiserConfig::desk()
    };
    let data = EncodedDataset::encode(&conditioned, &vocab, dcfg.max_cond_len, dcfg.max_target_len)?;
    let schedule = linear_schedule(200, 1e-4, 0.02)?;
    let tcfg = TrainConfig {
        lr: 1e-3,
        warmup: 100,
        batch_size: pairs.len(),
        max_steps: 2000,
        ..TrainConfig::default()
    };
    let params = DenoiserParams::<f32>::init(&dcfg, vocab.len(), &mut derive_rng(seed, "init", 0))?;
    let mut trainer = Trainer::new(params, dcfg.clone(), schedule.clone(), tcfg)?;

    println!(
        "overfitting {} pairs, {} parameters, T={}",
        pairs.len(),
        trainer.params.n_params(),
        schedule.steps()
    );
    let scfg = SampleConfig::default();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    let start = Instant::now();
    let mut exact = 0usize;
    loop {
        let loss = trainer.train_step(&data)?;
        let step = trainer.step();
        if step % 50 == 0 {
            println!("step {step:4}  loss {loss:.6}  [{:.0?}]", start.elapsed());
        }
        // Sampling is the expensive part; probe it periodically once the
        // loss has settled, and stop as soon as every target is exact.
        if step % 250 == 0 || step == 2000 {
            let hyp_ids = generate_batch(
                &trainer.params,
                &dcfg,
                &schedule,
                &scfg,
                data.cond.view(),
                seed,
            )?;
            let hyps: Vec<Vec<String>> = hyp_ids
                .iter()
                .map(|ids| vocab.decode(ids))
                .collect::<Result<_, _>>()?;
            exact = hyps.iter().zip(&refs).filter(|(h, r)| h == r).count();
            let bleu4 = bleu_n(&hyps, &refs, 4)?;
            println!(
                "step {step:4}  exact {exact:2}/{}  bleu4 {bleu4:.3}  [{:.0?}]",
                refs.len(),
                start.elapsed()
            );
            if exact == refs.len() || step >= 2000 {
                break;
            }
        }
    }
    if exact == refs.len() {
        println!("memorized all {} targets in {:.0?}", refs.len(), start.elapsed());
    } else {
        println!("did not memorize every target within 2000 steps");
    }
    Ok(())
}
