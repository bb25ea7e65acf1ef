//! Score a tiny hypothesis/reference corpus with the full metric battery.
//!
//! The scorer takes parallel hypothesis and reference files, optionally with a
//! transfer label per line, and reports corpus BLEU-1..4, METEOR (exact and
//! stem matching only), sentence-averaged ROUGE-L, and CIDEr-D per label plus
//! a pooled `all` row. This example builds the corpus in memory, prints the
//! table, and spells out the two caveats that come with small corpora: METEOR
//! here has no synonym stage, and CIDEr weights n-grams by inverse document
//! frequency computed from these references alone.
//!
//! Run with `cargo run --release --example evaluate_corpus`.

use anyhow::Result;
use diffstyle::metrics::{cider, evaluate_lines, meteor_lite};

fn line(label: &str, text: &str) -> (Option<String>, Vec<String>) {
    (
        Some(label.to_string()),
        text.split_whitespace().map(str::to_string).collect(),
    )
}

fn main() -> Result<()> {
    // Hypotheses a small tense-transfer model might emit, against references,
    // with a second group from a voice transfer. Labels group the report rows.
    let hyps = vec![
        line("ToPast", "the dog chased the ball across the yard"),
        line("ToPast", "she finished the report before the meeting started"),
        line("ToPast", "the workers built a bridge over the river"),
        line("ToPast", "he walked to the station in the rain"),
        line("ATP", "the ball was chased by the dog"),
        line("ATP", "a bridge was built by the workers last year"),
    ];
    let refs = vec![
        line("ToPast", "the dog chased the ball across the yard"),
        line("ToPast", "she finished the report before the meeting began"),
        line("ToPast", "the workers built a bridge across the river"),
        line("ToPast", "he walked to the station in the rain"),
        line("ATP", "the ball was chased by the dog"),
        line("ATP", "a bridge was built by the workers last year"),
    ];

    let report = evaluate_lines(&hyps, &refs)?;
    println!("{}", report.to_table());
    println!("csv form:\n{}", report.to_csv());

    // The metrics are also callable one at a time on token slices.
    let h: Vec<Vec<String>> = hyps.iter().map(|(_, t)| t.clone()).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|(_, t)| t.clone()).collect();
    println!("direct calls:");
    println!("  meteor over all lines: {:.3}", meteor_lite(&h, &r)?);
    println!("  cider  over all lines: {:.3}", cider(&h, &r)?);

    // A perfect system caps the scales: BLEU and ROUGE at 1, CIDEr at 10.
    let perfect = evaluate_lines(&refs, &refs)?;
    let all = &perfect.rows["all"];
    println!();
    println!(
        "identity run for scale: bleu4 {:.3}, rouge_l {:.3}, cider {:.3}",
        all.bleu[3], all.rouge_l, all.cider
    );
    Ok(())
}
