//! Property-based invariants across modules.

use proptest::prelude::*;
use tapfm::alignment::{find_lis, generate_span_labels, IGNORE};
use tapfm::checkpoint::{Checkpoint, ModelMeta, PretrainMeta};
use tapfm::config::RunConfig;
use tapfm::encoders::{slide_windows, EncoderConfig, WindowSpec};
use tapfm::frontend::crf::{crf_log_partition, crf_nll, crf_viterbi, CrfMask, CrfScores};
use tapfm::frontend::verbalize::number_words;
use tapfm::frontend::{result_merge, verbalize, MergeInput, Polyphone};
use tapfm::labels::{bio_spans, spans_to_tags, BioTag, Boundary, NswClass, NswSpan};
use tapfm::multitask::{combined_weights, dwa_lambda, dwa_plus_epsilon, DwaState};
use tapfm::numerics::tensor::log_sum_exp;
use tapfm::numerics::{seeded_rng, ParamStore, Tensor};
use tapfm::pretrain::{apply_mlm_mask, NOT_MASKED};
use tapfm::synthcorpus::lexicon::MASK;
use tapfm::synthcorpus::Lexicon;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d))
}

proptest! {
    #[test]
    fn lis_is_an_increasing_subsequence(c in prop::collection::vec(0usize..20, 0..30)) {
        let (idx, vals) = find_lis(&c);
        prop_assert_eq!(idx.len(), vals.len());
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(vals.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().zip(&vals).all(|(&i, &v)| c[i] == v));
        prop_assert_eq!(vals.is_empty(), c.is_empty());
    }

    #[test]
    fn span_labels_stay_in_range(
        (v_max, c) in (1usize..30).prop_flat_map(|v| (Just(v), prop::collection::vec(0..=v, 1..40)))
    ) {
        let labels = generate_span_labels(&c, v_max).unwrap();
        prop_assert_eq!(labels.len(), c.len());
        prop_assert_eq!(labels[0], if c.len() == 1 { v_max as i64 } else { 0 });
        prop_assert_eq!(*labels.last().unwrap(), v_max as i64);
        prop_assert!(labels.iter().all(|&l| l == IGNORE || (0..=v_max as i64).contains(&l)));
    }

    #[test]
    fn windows_cover_the_sequence(len in 1usize..80, size in 1usize..12, stride in 1usize..6) {
        let w = slide_windows(len, WindowSpec { size, stride });
        prop_assert_eq!(w[0].0, 0);
        prop_assert_eq!(w.last().unwrap().1, len);
        prop_assert!(w.iter().all(|&(a, b)| b - a == size.min(len) && b <= len));
        // no gaps unless the stride outruns the window
        prop_assert!(w.windows(2).all(|p| p[0].0 < p[1].0 && (stride > size || p[1].0 <= p[0].1)));
    }

    #[test]
    fn bio_spans_round_trip(cuts in prop::collection::vec((0usize..3, 0usize..5), 0..10)) {
        // lay spans out left to right with gaps
        let mut spans = Vec::new();
        let mut at = 0;
        for (gap, c) in cuts {
            let start = at + gap;
            let len = 1 + (gap + c) % 3;
            spans.push(NswSpan { start, end: start + len, class: NswClass::ALL[c] });
            at = start + len;
        }
        let tags = spans_to_tags(at + 1, &spans);
        prop_assert_eq!(bio_spans(&tags), spans);
    }

    #[test]
    fn grouped_and_plain_cardinals_agree(n in 0u64..10_000_000_000) {
        let plain = n.to_string();
        let mut grouped = String::new();
        for (i, ch) in plain.chars().enumerate() {
            if i > 0 && (plain.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        let a = verbalize(&plain, NswClass::Cardinal).unwrap();
        prop_assert_eq!(&a, &verbalize(&grouped, NswClass::Cardinal).unwrap());
        prop_assert_eq!(a.len(), number_words(n).len());
        prop_assert!(!a.iter().any(|w| w == "and" || w.contains('-')));
    }

    #[test]
    fn crf_nll_is_nonnegative_and_viterbi_feasible(
        em in tensor(4, 3), tr in tensor(3, 3), st in tensor(1, 3), en in tensor(1, 3),
        forbid in prop::collection::vec(any::<bool>(), 9),
        gold in prop::collection::vec(0usize..3, 4),
    ) {
        let mut mask = CrfMask::permissive(3);
        for (i, &f) in forbid.iter().enumerate() {
            // keep self-loops so a feasible path always exists
            if f && i / 3 != i % 3 {
                mask.forbid(i / 3, i % 3);
            }
        }
        let s = CrfScores { emissions: &em, transitions: &tr, start: &st, end: &en, mask: &mask };
        let path = crf_viterbi(&s).unwrap();
        prop_assert!(mask.feasible(&path));
        prop_assert!(crf_log_partition(&s).unwrap() >= s.path_score(&path) - 1e-9);
        if mask.feasible(&gold) {
            prop_assert!(crf_nll(&s, &gold).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn dwa_weights_are_positive_and_sum_to_k(
        k in 1usize..6,
        t in 0.2f64..4.0,
        hist in prop::collection::vec((prop::collection::vec(0.0f64..5.0, 6), prop::collection::vec(0.0f64..1.0, 6)), 0..5),
        l in 1usize..8,
    ) {
        let mut s = DwaState::new(k, t, vec![1.0; k]).unwrap();
        for (loss, metric) in &hist {
            s.push_losses(&loss[..k]).unwrap();
            s.push_metrics(&metric[..k]).unwrap();
        }
        let w = combined_weights(&dwa_lambda(&s, l), &dwa_plus_epsilon(&s, l)).unwrap();
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - k as f64).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(xs in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - c).abs() < 1e-9);
        prop_assert!(log_sum_exp(&xs) >= xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn mlm_targets_mark_exactly_the_masked_positions(
        ids in prop::collection::vec(4u32..40, 1..60), rate in 0.0f64..1.0, seed in any::<u64>()
    ) {
        let (masked, targets) = apply_mlm_mask(&ids, rate, &mut seeded_rng(seed, 0));
        for i in 0..ids.len() {
            if targets[i] == NOT_MASKED {
                prop_assert_eq!(masked[i], ids[i]);
            } else {
                prop_assert_eq!(masked[i], MASK);
                prop_assert_eq!(targets[i], i64::from(ids[i]));
            }
        }
        if rate > 0.0 {
            prop_assert!(targets.iter().any(|&t| t != NOT_MASKED));
        }
    }

    #[test]
    fn checkpoints_round_trip_bytes(
        shapes in prop::collection::vec((1usize..5, 1usize..5), 1..6), seed in any::<u64>()
    ) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed, 0);
        for (i, &(r, c)) in shapes.iter().enumerate() {
            store.insert(&format!("p{i}"), tapfm::numerics::params::normal_tensor(r, c, 1.0, &mut rng));
        }
        let ck = Checkpoint {
            model: ModelMeta::Pretrain(PretrainMeta {
                lexicon: Lexicon::standard(40).unwrap(),
                encoder: EncoderConfig::default(),
                text_window: WindowSpec { size: 3, stride: 1 },
                audio_window: WindowSpec { size: 33, stride: 11 },
            }),
            store,
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn seed_override_reaches_every_section(top in any::<u32>(), own in any::<u32>(), over in any::<u32>()) {
        let text = format!(r#"{{"seed": {top}, "pretrain": {{"seed": {own}}}}}"#);
        let c = RunConfig::from_json(&text, None).unwrap();
        prop_assert_eq!((c.corpus.seed, c.pretrain.seed, c.finetune.seed), (u64::from(top), u64::from(own), u64::from(top)));
        let c = RunConfig::from_json(&text, Some(u64::from(over))).unwrap();
        prop_assert_eq!((c.corpus.seed, c.pretrain.seed, c.finetune.seed), (u64::from(over), u64::from(over), u64::from(over)));
    }

    #[test]
    fn merge_is_idempotent(
        words in prop::collection::vec(0usize..6, 1..10),
        bounds in prop::collection::vec(0usize..4, 10),
        poly in prop::collection::vec(any::<bool>(), 10),
    ) {
        // 0..3 plain words, 4 a cardinal, 5 a two-token date
        const PLAIN: [&str; 4] = ["the", "lead", "wind", "city"];
        let (mut tokens, mut tn_tags) = (Vec::new(), Vec::new());
        for &w in &words {
            match w {
                4 => {
                    tokens.push("1,200".to_string());
                    tn_tags.push(BioTag::B(NswClass::Cardinal));
                }
                5 => {
                    tokens.extend(["may".to_string(), "9".to_string()]);
                    tn_tags.extend([BioTag::B(NswClass::Date), BioTag::I(NswClass::Date)]);
                }
                _ => {
                    tokens.push(PLAIN[w].to_string());
                    tn_tags.push(BioTag::O);
                }
            }
        }
        let n = tokens.len();
        let input = MergeInput {
            boundaries: (0..n).map(|i| Boundary::from_index(bounds[i % bounds.len()])).collect(),
            polyphones: (0..n)
                .filter(|&i| poly[i % poly.len()])
                .map(|position| Polyphone { position, pronunciation: "L EH1 D".into() })
                .collect(),
            tokens,
            tn_tags,
        };
        let once = result_merge(&input).unwrap();
        let twice = result_merge(&once.to_merge_input()).unwrap();
        prop_assert_eq!(&twice.spoken, &once.spoken);
        prop_assert_eq!(&twice.boundaries, &once.boundaries);
        prop_assert_eq!(&twice.polyphones, &once.polyphones);
        // the strongest boundary survives the merge
        prop_assert_eq!(once.boundaries.iter().max(), input.boundaries.iter().max());
    }
}
