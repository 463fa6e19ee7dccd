use objtok_core::decoder::{
    assemble_prompt, attention_report, tokenize, Decoder, DecoderConfig, DecoderError, PromptMode, Slot, TokenSequence,
    Vocab, EOS, OBJECT_LIST_SENTENCE, REFERRING_INSTRUCTION, SEP,
};
use objtok_core::numcore::{Adam, Module, Tensor};
use objtok_core::rng::SeededRng;
use proptest::prelude::*;

const CORPUS: [&str; 6] = [
    "what color is the circle?",
    "how many objects are in the video?",
    "what color is <o>?",
    "where is the red object?",
    "moving right red blue green yellow top left bottom",
    "one two three four",
];

fn vocab() -> Vocab {
    Vocab::build(CORPUS)
}

fn small(v: &Vocab, seed: u64, max_len: usize) -> Decoder {
    let mut cfg = DecoderConfig::new(v.len());
    cfg.d = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.d_ff = 32;
    cfg.max_len = max_len;
    Decoder::new(cfg, &mut SeededRng::new(seed)).unwrap()
}

fn render(v: &Vocab, s: &TokenSequence) -> String {
    s.slots
        .iter()
        .zip(&s.object_ids)
        .map(|(slot, id)| match *slot {
            Slot::Text(t) => v.word(t).unwrap().to_string(),
            Slot::Context(c) => format!("<v{c}>"),
            Slot::Object(_) => format!("<o:{}>", id.unwrap()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn golden() -> Vec<(String, String)> {
    include_str!("golden/prompts.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect()
}

#[test]
fn prompts_match_golden_file() {
    let v = vocab();
    let built = [
        (
            "general_two",
            assemble_prompt(&v, 2, &[3, 8], "what color is the circle?", PromptMode::General).unwrap(),
        ),
        (
            "general_three",
            assemble_prompt(&v, 1, &[0, 1, 2], "how many objects are in the video?", PromptMode::General).unwrap(),
        ),
        (
            "general_none",
            assemble_prompt(&v, 3, &[], "how many objects are in the video?", PromptMode::General).unwrap(),
        ),
        (
            "referring",
            assemble_prompt(&v, 2, &[3, 8], REFERRING_INSTRUCTION, PromptMode::Referring(8)).unwrap(),
        ),
        (
            "referring_color",
            assemble_prompt(&v, 1, &[3, 8], "what color is <o>?", PromptMode::Referring(3)).unwrap(),
        ),
        (
            "answered",
            assemble_prompt(&v, 2, &[3, 8], REFERRING_INSTRUCTION, PromptMode::Referring(8))
                .unwrap()
                .with_answer(&v.encode("moving right").unwrap()),
        ),
    ];
    let gold = golden();
    assert_eq!(gold.len(), built.len());
    for ((name, seq), (gname, expect)) in built.iter().zip(&gold) {
        assert_eq!(name, gname);
        assert_eq!(&render(&v, seq), expect, "{name}");
    }
}

#[test]
fn too_long_is_rejected() {
    let v = vocab();
    let d = small(&v, 1, 8);
    let p = assemble_prompt(&v, 4, &[], "how many objects are in the video?", PromptMode::General).unwrap();
    let ctx = Tensor::zeros(&[4, 16]);
    assert!(matches!(d.forward(&p, &ctx, &[]), Err(DecoderError::TooLong { .. })));
}

fn prefix(s: &TokenSequence, n: usize) -> TokenSequence {
    TokenSequence {
        slots: s.slots[..n].to_vec(),
        object_ids: s.object_ids[..n].to_vec(),
        answer_start: s.answer_start.min(n),
    }
}

fn inputs(rng: &mut SeededRng, n_ctx: usize, n_obj: usize) -> (Tensor, Vec<Vec<f64>>) {
    let ctx = Tensor::new(vec![n_ctx, 16], rng.uniform_vec(n_ctx * 16, -1.0, 1.0)).unwrap();
    let objs = (0..n_obj).map(|_| rng.uniform_vec(16, -1.0, 1.0)).collect();
    (ctx, objs)
}

#[test]
fn forward_matches_incremental_decode() {
    let v = vocab();
    for seed in 0..5 {
        let mut rng = SeededRng::new(100 + seed);
        let d = small(&v, seed, 64);
        let (ctx, objs) = inputs(&mut rng, 3, 2);
        let seq = assemble_prompt(&v, 3, &[5, 9], "where is the red object?", PromptMode::General)
            .unwrap()
            .with_answer(&v.encode("top left").unwrap());
        let (full, _) = d.forward(&seq, &ctx, &objs).unwrap();
        for i in 0..seq.len() {
            let (part, _) = d.forward(&prefix(&seq, i + 1), &ctx, &objs).unwrap();
            for (a, b) in full.row(i).iter().zip(part.row(i)) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn attention_report_is_a_distribution() {
    let v = vocab();
    let mut rng = SeededRng::new(3);
    for seed in 0..20 {
        let d = small(&v, seed, 64);
        let n = rng.below(1, 6);
        let (ctx, objs) = inputs(&mut rng, 2, n);
        let ids: Vec<usize> = (0..n).map(|i| 10 + i).collect();
        let seq = assemble_prompt(&v, 2, &ids, "what color is the circle?", PromptMode::General)
            .unwrap()
            .with_answer(&v.encode("red").unwrap());
        let (_, cache) = d.forward(&seq, &ctx, &objs).unwrap();
        let w = attention_report(&seq, &cache).unwrap();
        assert_eq!(w.iter().map(|p| p.0).collect::<Vec<_>>(), ids);
        assert!(w.iter().all(|p| p.1 >= 0.0));
        assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() <= 1e-9);
        if n == 1 {
            assert_eq!(w[0].1, 1.0);
        }
    }
    let seq = assemble_prompt(&v, 2, &[], "what color is the circle?", PromptMode::General).unwrap();
    let d = small(&v, 0, 64);
    let (ctx, _) = inputs(&mut rng, 2, 0);
    let (_, cache) = d.forward(&seq, &ctx, &[]).unwrap();
    assert_eq!(attention_report(&seq, &cache), Err(DecoderError::NoObjects));
}

#[test]
fn identical_objects_get_near_uniform_attention() {
    let v = vocab();
    for n in [2usize, 4, 8] {
        let mut mean = vec![0.0; n];
        for seed in 0..10 {
            let mut rng = SeededRng::new(200 + seed);
            let d = small(&v, seed, 96);
            let (ctx, _) = inputs(&mut rng, 4, 0);
            let o = rng.uniform_vec(16, -1.0, 1.0);
            let objs = vec![o; n];
            let ids: Vec<usize> = (0..n).collect();
            let seq = assemble_prompt(&v, 4, &ids, "what color is the circle?", PromptMode::General)
                .unwrap()
                .with_answer(&v.encode("red").unwrap());
            let (_, cache) = d.forward(&seq, &ctx, &objs).unwrap();
            for (m, w) in mean.iter_mut().zip(attention_report(&seq, &cache).unwrap()) {
                *m += w.1 / 10.0;
            }
        }
        for m in mean {
            assert!((m - 1.0 / n as f64).abs() <= 0.05, "n={n}: {m}");
        }
    }
}

#[test]
fn memorized_sample_is_reproduced() {
    let v = vocab();
    let mut rng = SeededRng::new(4);
    let mut d = small(&v, 4, 64);
    let (ctx, objs) = inputs(&mut rng, 2, 2);
    let prompt = assemble_prompt(&v, 2, &[0, 1], "where is the red object?", PromptMode::General).unwrap();
    let answer = v.encode("bottom left").unwrap();
    let seq = prompt.with_answer(&answer);
    let mut adam = Adam::default();
    for _ in 0..200 {
        d.zero_grad();
        let (logits, cache) = d.forward(&seq, &ctx, &objs).unwrap();
        let (_, g) = d.loss(&seq, &logits).unwrap();
        d.backward(&seq, &g, &cache, 2, 2);
        adam.step(&mut d.params_mut(), 1e-2).unwrap();
    }
    assert_eq!(d.generate(&prompt, &ctx, &objs, 8).unwrap(), answer);
}

#[test]
fn generation_is_greedy_argmax() {
    let v = vocab();
    let mut rng = SeededRng::new(5);
    let d = small(&v, 5, 64);
    let (ctx, objs) = inputs(&mut rng, 2, 1);
    let prompt = assemble_prompt(&v, 2, &[0], "what color is the circle?", PromptMode::General).unwrap();
    let out = d.generate(&prompt, &ctx, &objs, 4).unwrap();
    // Beam of width one, spelled out.
    let mut seq = prompt.clone();
    seq.slots.push(Slot::Text(SEP));
    seq.object_ids.push(None);
    let mut expect = Vec::new();
    for _ in 0..4 {
        let (logits, _) = d.forward(&seq, &ctx, &objs).unwrap();
        let row = logits.row(seq.len() - 1);
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        if best == EOS {
            break;
        }
        expect.push(best);
        seq.slots.push(Slot::Text(best));
        seq.object_ids.push(None);
    }
    assert_eq!(out, expect);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn causal_logits(seed in 0u64..10_000, cut in 0usize..20) {
        let v = vocab();
        let mut rng = SeededRng::new(seed);
        let d = small(&v, seed % 7, 64);
        let (ctx, objs) = inputs(&mut rng, 2, 3);
        let seq = assemble_prompt(&v, 2, &[1, 2, 3], "where is the red object?", PromptMode::General)
            .unwrap()
            .with_answer(&v.encode("top left").unwrap());
        let i = cut % seq.len();
        let mut other = seq.clone();
        let mut objs2 = objs.clone();
        for j in i + 1..seq.len() {
            match other.slots[j] {
                Slot::Text(_) => other.slots[j] = Slot::Text(rng.below(0, v.len())),
                Slot::Object(o) => objs2[o] = rng.uniform_vec(16, -1.0, 1.0),
                Slot::Context(_) => {}
            }
        }
        // Object slots at or before `i` must keep their vectors.
        for j in 0..=i {
            if let Slot::Object(o) = seq.slots[j] {
                objs2[o] = objs[o].clone();
            }
        }
        let (a, _) = d.forward(&seq, &ctx, &objs).unwrap();
        let (b, _) = d.forward(&other, &ctx, &objs2).unwrap();
        for r in 0..=i {
            prop_assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn length_accounting(n_ctx in 0usize..10, n_obj in 0usize..70, q in 0usize..2) {
        let v = vocab();
        let instr = ["what color is the circle?", "how many objects are in the video?"][q];
        let ids: Vec<usize> = (0..n_obj).collect();
        let s = assemble_prompt(&v, n_ctx, &ids, instr, PromptMode::General).unwrap();
        let text = tokenize(instr).len();
        let fixed = if n_obj > 0 { tokenize(OBJECT_LIST_SENTENCE).len() } else { 0 };
        prop_assert_eq!(s.len(), n_ctx + n_obj + text + n_obj.saturating_sub(1) + fixed);
        prop_assert_eq!(s.object_positions().len(), n_obj);
    }
}
