//! Temporary diagnostic for the overfit experiment (not a shipped example).

use anyhow::Result;
use ndarray::{Array2, Axis};

use diffstyle::corpus::{ConditionBuilder, SentencePair, TransferId};
use diffstyle::denoiser::{forward_batch, DenoiserConfig, DenoiserParams};
use diffstyle::diffusion::linear_schedule;
use diffstyle::rng::derive_rng;
use diffstyle::sampler::{generate_batch, round_to_tokens, SampleConfig};
use diffstyle::tokenizer::Vocabulary;
use diffstyle::trainer::{EncodedDataset, TrainConfig, Trainer};
use diffstyle::Scalar;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn fixture_pairs() -> Vec<SentencePair> {
    let rows: [(&str, &str); 16] = [
        (
            "investors buy treasury bonds friday morning",
            "investors bought treasury bonds friday morning",
        ),
        (
            "farmers plant winter wheat before dawn",
            "farmers planted winter wheat before dawn",
        ),
        (
            "pianists play quiet nocturnes after midnight",
            "pianists played quiet nocturnes after midnight",
        ),
        (
            "janitors sweep both long hallways nightly",
            "janitors swept both long hallways nightly",
        ),
        (
            "chefs cook rich tomato pasta daily",
            "chefs cooked rich tomato pasta daily",
        ),
        (
            "editors check every draft sentence twice",
            "editors checked every draft sentence twice",
        ),
        (
            "miners dig four deep tunnels yearly",
            "miners dug four deep tunnels yearly",
        ),
        (
            "painters mix six vivid colors carefully",
            "painters mixed six vivid colors carefully",
        ),
        (
            "teachers explain two difficult proofs slowly",
            "teachers explained two difficult proofs slowly",
        ),
        (
            "neighbors water those red roses sometimes",
            "neighbors watered those red roses sometimes",
        ),
        (
            "bakers knead warm soft dough gently",
            "bakers kneaded warm soft dough gently",
        ),
        (
            "soldiers march across frozen rivers silently",
            "soldiers marched across frozen rivers silently",
        ),
        (
            "sailors steer small wooden boats homeward",
            "sailors steered small wooden boats homeward",
        ),
        (
            "gardeners prune old apple branches often",
            "gardeners pruned old apple branches often",
        ),
        (
            "students write short clever essays quickly",
            "students wrote short clever essays quickly",
        ),
        (
            "dancers leap over velvet ropes gracefully",
            "dancers leaped over velvet ropes gracefully",
        ),
    ];
    rows.iter()
        .map(|(s, t)| SentencePair {
            source: toks(s),
            target: toks(t),
            transfers: vec![TransferId::ToPast],
            extra_info: vec![],
        })
        .collect()
}

fn unit_rows<F: Scalar>(embed: &Array2<F>) -> Vec<Vec<f64>> {
    embed
        .axis_iter(Axis(0))
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.into_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Top-k off-diagonal pairwise cosines over all embedding rows, with ids.
fn top_pairwise_cosines<F: Scalar>(embed: &Array2<F>, k: usize) -> Vec<(f64, u32, u32)> {
    let rows = unit_rows(embed);
    let n = rows.len();
    let mut all = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let c: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            all.push((c, i as u32, j as u32));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all.truncate(k);
    all
}

/// Cosine distribution over *content* token pairs (ids >= first real word).
fn content_cosine_stats<F: Scalar>(embed: &Array2<F>, first_content: usize) -> (f64, f64, usize) {
    let rows = unit_rows(embed);
    let n = rows.len();
    let mut all = Vec::new();
    for i in first_content..n {
        for j in (i + 1)..n {
            let c: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            all.push(c);
        }
    }
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let max = all[0];
    let p90 = all[all.len() / 10];
    let above = all.iter().filter(|c| **c > 0.9).count();
    (max, p90, above)
}

/// One-shot rounding accuracy at timestep `t` over every example.
struct RoundStats {
    content_hit: usize,
    content_total: usize,
    pad_hit: usize,
    pad_total: usize,
    decode_exact: usize,
    content_mse: f64,
    pad_mse: f64,
}

fn probe_rounding(
    trainer: &Trainer<f32>,
    dcfg: &DenoiserConfig,
    schedule: &diffstyle::diffusion::NoiseSchedule,
    data: &EncodedDataset,
    vocab: &Vocabulary,
    t: usize,
) -> Result<RoundStats> {
    let mut rng = derive_rng(99, "probe", t as u64);
    let mut stats = RoundStats {
        content_hit: 0,
        content_total: 0,
        pad_hit: 0,
        pad_total: 0,
        decode_exact: 0,
        content_mse: 0.0,
        pad_mse: 0.0,
    };
    let (mut content_entries, mut pad_entries) = (0usize, 0usize);
    for i in 0..data.len() {
        let target_ids: Vec<u32> = data.target.row(i).to_vec();
        let x0 = diffstyle::denoiser::embed(&trainer.params, &target_ids)?;
        let noise = Array2::<f32>::from_shape_fn(x0.raw_dim(), |_| f32::standard_normal(&mut rng));
        let x_t = schedule.q_sample(x0.view(), t, noise.view())?;
        let x_t3 = x_t.insert_axis(Axis(0));
        let pred = forward_batch(
            &trainer.params,
            dcfg,
            data.cond.slice(ndarray::s![i..i + 1, ..]),
            x_t3.view(),
            &[t],
        )?;
        let pred2 = pred.index_axis(Axis(0), 0);
        let rounded = round_to_tokens(&trainer.params.embed, pred2);
        for (r, (a, b)) in rounded.iter().zip(&target_ids).enumerate() {
            let se: f64 = pred2
                .row(r)
                .iter()
                .zip(x0.row(r))
                .map(|(p, x)| (p.into_f64() - x.into_f64()).powi(2))
                .sum();
            if *b == diffstyle::tokenizer::PAD_ID {
                stats.pad_total += 1;
                stats.pad_hit += usize::from(a == b);
                stats.pad_mse += se;
                pad_entries += pred2.ncols();
            } else {
                stats.content_total += 1;
                stats.content_hit += usize::from(a == b);
                stats.content_mse += se;
                content_entries += pred2.ncols();
            }
        }
        if vocab.decode(&rounded)? == vocab.decode(&target_ids)? {
            stats.decode_exact += 1;
        }
    }
    stats.content_mse /= content_entries.max(1) as f64;
    stats.pad_mse /= pad_entries.max(1) as f64;
    Ok(stats)
}

/// For one example: per non-PAD row, cosine to the true embedding and the
/// margin over the best *other* row of E.
fn row_margins(
    trainer: &Trainer<f32>,
    dcfg: &DenoiserConfig,
    schedule: &diffstyle::diffusion::NoiseSchedule,
    data: &EncodedDataset,
    example: usize,
    t: usize,
) -> Result<Vec<(f64, f64, u32)>> {
    let mut rng = derive_rng(1234, "margin", t as u64);
    let target_ids: Vec<u32> = data.target.row(example).to_vec();
    let x0 = diffstyle::denoiser::embed(&trainer.params, &target_ids)?;
    let noise = Array2::<f32>::from_shape_fn(x0.raw_dim(), |_| f32::standard_normal(&mut rng));
    let x_t = schedule.q_sample(x0.view(), t, noise.view())?;
    let x_t3 = x_t.insert_axis(Axis(0));
    let pred = forward_batch(
        &trainer.params,
        dcfg,
        data.cond.slice(ndarray::s![example..example + 1, ..]),
        x_t3.view(),
        &[t],
    )?;
    let pred2 = pred.index_axis(Axis(0), 0);
    let table = unit_rows(&trainer.params.embed);
    let mut out = Vec::new();
    for (r, &tid) in target_ids.iter().enumerate() {
        if tid == diffstyle::tokenizer::PAD_ID {
            continue;
        }
        let v: Vec<f64> = pred2.row(r).iter().map(|x| x.into_f64()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
        let cos_with = |row: &[f64]| -> f64 {
            v.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() / norm
        };
        let true_cos = cos_with(&table[tid as usize]);
        let (mut best_other, mut best_id) = (-2.0, 0u32);
        for (k, row) in table.iter().enumerate() {
            if k as u32 != tid {
                let c = cos_with(row);
                if c > best_other {
                    best_other = c;
                    best_id = k as u32;
                }
            }
        }
        out.push((true_cos, best_other, best_id));
    }
    Ok(out)
}

/// RMS gradient magnitude per tensor, from one full-batch backward pass at
/// a fixed set of timesteps.
fn grad_rms(
    trainer: &Trainer<f32>,
    dcfg: &DenoiserConfig,
    schedule: &diffstyle::diffusion::NoiseSchedule,
    data: &EncodedDataset,
    t_fill: usize,
) -> Result<Vec<(String, f64)>> {
    let mut rng = derive_rng(4321, "gradrms", t_fill as u64);
    let n = data.len();
    let d = dcfg.model_dim;
    let batch = diffstyle::denoiser::DiffusionBatch {
        cond_ids: data.cond.clone(),
        target_ids: data.target.clone(),
        t: vec![t_fill; n],
        noise: ndarray::Array3::from_shape_fn((n, dcfg.max_target_len, d), |_| {
            f32::standard_normal(&mut rng)
        }),
    };
    let (_, grads) =
        diffstyle::denoiser::loss_and_gradients(&trainer.params, dcfg, schedule, &batch, None)?;
    let mut out = Vec::new();
    for (name, t) in grads.tensors() {
        let (sum, cnt) = match t {
            diffstyle::denoiser::TensorRef::A1(a) => {
                (a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>(), a.len())
            }
            diffstyle::denoiser::TensorRef::A2(a) => {
                (a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>(), a.len())
            }
        };
        out.push((name, (sum / cnt.max(1) as f64).sqrt()));
    }
    Ok(out)
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let beta_end: f64 = args.get(1).map_or(0.07, |s| s.parse().expect("beta_end"));
    let steps: usize = args.get(2).map_or(400, |s| s.parse().expect("steps"));
    let lr: f64 = args.get(3).map_or(1e-3, |s| s.parse().expect("lr"));
    let warmup: usize = args.get(4).map_or(100, |s| s.parse().expect("warmup"));
    let dropout: f64 = args.get(5).map_or(0.0, |s| s.parse().expect("dropout"));
    let repeat: usize = args.get(6).map_or(1, |s| s.parse().expect("repeat"));
    let mask: bool = args.get(7).map_or(false, |s| s.parse().expect("mask"));
    let seed = 7u64;

    let pairs = fixture_pairs();
    let vocab = Vocabulary::build(&pairs);
    let builder = ConditionBuilder::single_task(TransferId::ToPast);
    let conditioned: Vec<_> = pairs
        .iter()
        .map(|p| builder.conditioned(p))
        .collect::<Result<Vec<_>, _>>()?;
    let train_rows: Vec<_> = std::iter::repeat_n(conditioned.clone(), repeat)
        .flatten()
        .collect();
    let dcfg = DenoiserConfig {
        dropout,
        mask_cond_pad: mask,
        ..DenoiserConfig::desk()
    };
    let data =
        EncodedDataset::encode(&train_rows, &vocab, dcfg.max_cond_len, dcfg.max_target_len)?;
    let eval =
        EncodedDataset::encode(&conditioned, &vocab, dcfg.max_cond_len, dcfg.max_target_len)?;
    let schedule = linear_schedule(200, 1e-4, beta_end)?;
    println!(
        "beta_end {beta_end}  lr {lr}  warmup {warmup}  dropout {dropout}  repeat {repeat}  alpha_bar(T) = {:.3e}",
        schedule.alpha_bar(200),
    );
    let tcfg = TrainConfig {
        lr,
        warmup,
        batch_size: train_rows.len(),
        max_steps: steps,
        ..TrainConfig::default()
    };
    let params =
        DenoiserParams::<f32>::init(&dcfg, vocab.len(), &mut derive_rng(seed, "init", 0))?;
    let mut trainer = Trainer::new(params, dcfg.clone(), schedule.clone(), tcfg)?;
    let name = |id: u32| vocab.token(id).unwrap_or("?").to_string();
    let first_content = diffstyle::tokenizer::RESERVED_IDS as usize;
    for s in 0..steps {
        let loss = trainer.train_step(&data)?;
        if (s + 1) % 25 == 0 {
            let pairs_cos = top_pairwise_cosines(&trainer.params.embed, 3);
            let (cmax, cp90, cabove) =
                content_cosine_stats(&trainer.params.embed, first_content);
            let s200 = probe_rounding(&trainer, &dcfg, &schedule, &eval, &vocab, 200)?;
            let s50 = probe_rounding(&trainer, &dcfg, &schedule, &eval, &vocab, 50)?;
            let tops: Vec<String> = pairs_cos
                .iter()
                .map(|(c, i, j)| format!("{:.3}({},{})", c, name(*i), name(*j)))
                .collect();
            println!(
                "step {:4}  loss {loss:.2e}  t200 content {:3}/{} pad {:3}/{} dec {:2}/16 | t50 content {:3}/{} dec {:2}/16 | top {}",
                s + 1,
                s200.content_hit,
                s200.content_total,
                s200.pad_hit,
                s200.pad_total,
                s200.decode_exact,
                s50.content_hit,
                s50.content_total,
                s50.decode_exact,
                tops.join(" ")
            );
            println!(
                "            mse t200 content {:.2e} pad {:.2e} | t50 content {:.2e} pad {:.2e} | content-cos max {:.3} p90 {:.3} >0.9 {}",
                s200.content_mse, s200.pad_mse, s50.content_mse, s50.pad_mse, cmax, cp90, cabove
            );
            let margins = row_margins(&trainer, &dcfg, &schedule, &eval, 0, 50)?;
            let shown: Vec<String> = margins
                .iter()
                .map(|(tc, oc, oid)| format!("{tc:.3}/{oc:.3}({})", name(*oid)))
                .collect();
            println!("            ex0 rows t50 true/other: {}", shown.join(" "));
            if (s + 1) % 100 == 0 {
                let rms = grad_rms(&trainer, &dcfg, &schedule, &eval, 150)?;
                let fmt: Vec<String> = rms
                    .iter()
                    .filter(|(n, _)| {
                        n == "embed"
                            || n == "pos"
                            || n == "out_w"
                            || n.starts_with("layers.0.")
                            || n.starts_with("layers.3.")
                    })
                    .map(|(n, v)| format!("{n} {v:.1e}"))
                    .collect();
                println!("            grad-rms@t150: {}", fmt.join("  "));
            }
        }
        if (s + 1) % 25 == 0 && (s + 1) >= 50 {
            for clamp in [false, true] {
                let hyps = generate_batch(
                    &trainer.params,
                    &dcfg,
                    &schedule,
                    &SampleConfig { clamp },
                    eval.cond.view(),
                    seed,
                )?;
                let mut exact = 0;
                let mut shown = 0;
                for (ids, pair) in hyps.iter().zip(&conditioned) {
                    let hyp = vocab.decode(ids)?;
                    if hyp == pair.target {
                        exact += 1;
                    } else if shown < 1 {
                        println!(
                            "    miss(clamp={clamp}): hyp [{}] vs ref [{}]",
                            hyp.join(" "),
                            pair.target.join(" ")
                        );
                        shown += 1;
                    }
                }
                println!(
                    "  gen@{:4} clamp={clamp}: exact {exact}/{}",
                    s + 1,
                    conditioned.len()
                );
            }
        }
    }
    Ok(())
}
