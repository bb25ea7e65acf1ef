//! How composed transfers turn into model conditions.
//!
//! A multitask model is steered entirely through its condition sequence:
//! style tokens are prepended to the source sentence, one per requested
//! transfer, in a canonical order. Composition is therefore free at the data
//! level — a pair labelled with two transfers just gets two style tokens.
//! This example builds conditions for single, composed, and extra-info
//! transfers, and shows the builder spec strings that checkpoints store so a
//! loaded model rebuilds conditions exactly the way it was trained.
//!
//! Run with `cargo run --release --example compose_transfers`.

use anyhow::Result;
use diffstyle::corpus::{ConditionBuilder, SentencePair, TransferId};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> Result<()> {
    let multitask = ConditionBuilder::multitask();

    // One transfer: one style token in front of the source.
    let single = SentencePair {
        source: toks("the committee approves the budget"),
        target: toks("the committee approved the budget"),
        transfers: vec![TransferId::ToPast],
        extra_info: vec![],
    };
    println!("single transfer ({}):", TransferId::ToPast.name());
    println!("  condition = {:?}", multitask.condition(&single)?);
    println!();

    // Composed transfers: one style token each, canonical order, regardless
    // of how the input listed them.
    let composed = SentencePair {
        source: toks("the board rejects the merger"),
        target: toks("the merger will be rejected"),
        transfers: vec![TransferId::ActiveToPassive, TransferId::ToFuture],
        extra_info: vec![],
    };
    println!("composed transfer (tense + voice):");
    println!("  condition = {:?}", multitask.condition(&composed)?);
    let reordered = SentencePair {
        transfers: vec![TransferId::ToFuture, TransferId::ActiveToPassive],
        ..composed.clone()
    };
    assert_eq!(multitask.condition(&composed)?, multitask.condition(&reordered)?);
    println!("  (same condition independent of label order)");
    println!();

    // Transfers that take extra information carry it between separators.
    let addition = SentencePair {
        source: toks("the plant closed"),
        target: toks("the aging plant closed"),
        transfers: vec![TransferId::InformationAddition],
        extra_info: toks("aging"),
    };
    println!("transfer with extra info ({}):", TransferId::InformationAddition.name());
    println!("  condition = {:?}", multitask.condition(&addition)?);
    println!();

    // A single-task model skips style tokens entirely: its condition is the
    // bare source. The spec string records which convention a model used.
    let bare = ConditionBuilder::single_task(TransferId::ToPast);
    println!("builder specs stored in checkpoints:");
    for b in [&bare, &ConditionBuilder::styled(&[TransferId::ToPast, TransferId::ToFuture]), &multitask] {
        println!("  {}", b.spec_string());
    }
    let round_trip = ConditionBuilder::from_spec(&bare.spec_string())?;
    assert_eq!(round_trip.spec_string(), bare.spec_string());
    println!("  (specs round-trip through from_spec)");
    Ok(())
}
