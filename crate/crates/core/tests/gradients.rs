//! Central-difference checks for every trainable component.

use std::sync::Arc;

use objtok_core::decoder::{assemble_prompt, Decoder, DecoderConfig, PromptMode, Vocab};
use objtok_core::harness::{Model, ModelConfig, ModuleSet, Sample, SceneFeatures, Task};
use objtok_core::numcore::*;
use objtok_core::objproj::{ObjectProjector, PooledObject, ProjectorConfig, Variant};
use objtok_core::rng::SeededRng;
use objtok_core::vidproj::{block_pool, block_pool_backward, VideoProjector};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn rand_t(rng: &mut SeededRng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), rng.uniform_vec(n, -1.0, 1.0)).unwrap()
}

fn weighted(out: &[f64], r: &[f64]) -> f64 {
    out.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Max relative error over the parameters of `m`.
fn param_error<M: Module + Clone>(m: &M, loss: impl Fn(&M) -> f64, backward: impl FnOnce(&mut M)) -> f64 {
    let mut a = m.clone();
    a.zero_grad();
    backward(&mut a);
    let analytic = a.flat_grads();
    let mut probe = m.clone();
    grad_check(
        |x| {
            probe.set_flat_values(x);
            loss(&probe)
        },
        &m.flat_values(),
        &analytic,
        EPS,
    )
    .unwrap()
}

fn input_error(x: &Tensor, loss: impl Fn(&Tensor) -> f64, analytic: &Tensor) -> f64 {
    grad_check(
        |v| loss(&Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap()),
        x.data(),
        analytic.data(),
        EPS,
    )
    .unwrap()
}

fn assert_ok(name: &str, seed: u64, err: f64) {
    assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
}

#[test]
fn projector_variants() {
    for seed in 0..SEEDS {
        for variant in Variant::ALL {
            for pool_first in [false, true] {
                if pool_first && variant != Variant::Mlp {
                    continue;
                }
                let mut rng = SeededRng::new(seed);
                let mut cfg = ProjectorConfig::new(variant, 6, 8);
                cfg.pool_first = pool_first;
                let p = ObjectProjector::new(cfg, &mut rng).unwrap();
                let x = rand_t(&mut rng, &[3, 6]);
                let r = rng.uniform_vec(8, -1.0, 1.0);
                let loss = |p: &ObjectProjector, x: &Tensor| weighted(&p.forward(x).unwrap().0, &r);
                let mut gin = None;
                let err = param_error(
                    &p,
                    |p| loss(p, &x),
                    |p| {
                        let (_, c) = p.forward(&x).unwrap();
                        gin = Some(p.backward(&r, &c));
                    },
                );
                let name = format!("{} pool_first={pool_first}", variant.name());
                assert_ok(&name, seed, err);
                assert_ok(&name, seed, input_error(&x, |x| loss(&p, x), &gin.unwrap()));
            }
        }
    }
}

#[test]
fn stc_lite() {
    for seed in 0..SEEDS {
        let mut rng = SeededRng::new(seed);
        let vp = VideoProjector::new(5, 8, &mut rng);
        let x = rand_t(&mut rng, &[2, 4, 4, 5]);
        let r = rng.uniform_vec(8 * 8, -1.0, 1.0);
        let loss = |vp: &VideoProjector, x: &Tensor| weighted(vp.stc_lite(x).unwrap().tokens.data(), &r);
        let mut gin = None;
        let err = param_error(
            &vp,
            |vp| loss(vp, &x),
            |vp| {
                let (pooled, _) = block_pool(&x).unwrap();
                let (_, c) = vp.forward(&pooled).unwrap();
                let g = Tensor::new(vec![8, 8], r.clone()).unwrap();
                let gp = vp.backward(&g, &c);
                gin = Some(block_pool_backward(&gp, x.dims()).unwrap());
            },
        );
        assert_ok("stc_lite params", seed, err);
        assert_ok("stc_lite input", seed, input_error(&x, |x| loss(&vp, x), &gin.unwrap()));
    }
}

#[test]
fn primitive_layers() {
    for seed in 0..SEEDS {
        let mut rng = SeededRng::new(seed);
        let x = rand_t(&mut rng, &[4, 6]);
        let r6 = rng.uniform_vec(4 * 6, -1.0, 1.0);
        let g6 = Tensor::new(vec![4, 6], r6.clone()).unwrap();

        let lin = Linear::new(6, 6, &mut rng);
        let f = |l: &Linear, x: &Tensor| weighted(l.forward(x).unwrap().data(), &r6);
        let mut gin = None;
        assert_ok("linear", seed, param_error(&lin, |l| f(l, &x), |l| gin = Some(l.backward(&x, &g6))));
        assert_ok("linear input", seed, input_error(&x, |x| f(&lin, x), &gin.unwrap()));

        let mlp = Mlp::new(6, 10, 6, &mut rng);
        let f = |m: &Mlp, x: &Tensor| weighted(m.forward(x).unwrap().0.data(), &r6);
        let mut gin = None;
        let err = param_error(
            &mlp,
            |m| f(m, &x),
            |m| {
                let (_, c) = m.forward(&x).unwrap();
                gin = Some(m.backward(&g6, &c));
            },
        );
        assert_ok("mlp", seed, err);
        assert_ok("mlp input", seed, input_error(&x, |x| f(&mlp, x), &gin.unwrap()));

        let mut ln = LayerNorm::new(6);
        ln.gamma.value = rand_t(&mut rng, &[6]);
        ln.beta.value = rand_t(&mut rng, &[6]);
        let f = |l: &LayerNorm, x: &Tensor| weighted(l.forward(x).0.data(), &r6);
        let mut gin = None;
        let err = param_error(
            &ln,
            |l| f(l, &x),
            |l| {
                let (_, c) = l.forward(&x);
                gin = Some(l.backward(&g6, &c));
            },
        );
        assert_ok("layernorm", seed, err);
        assert_ok("layernorm input", seed, input_error(&x, |x| f(&ln, x), &gin.unwrap()));

        for causal in [false, true] {
            let att = SelfAttention::new(6, 2, &mut rng).unwrap();
            let f = |a: &SelfAttention, x: &Tensor| weighted(a.forward(x, causal).unwrap().0.data(), &r6);
            let mut gin = None;
            let err = param_error(
                &att,
                |a| f(a, &x),
                |a| {
                    let (_, c) = a.forward(&x, causal).unwrap();
                    gin = Some(a.backward(&g6, &c));
                },
            );
            assert_ok("attention", seed, err);
            assert_ok("attention input", seed, input_error(&x, |x| f(&att, x), &gin.unwrap()));

            let blk = TransformerBlock::new(6, 3, 12, causal, &mut rng).unwrap();
            let f = |b: &TransformerBlock, x: &Tensor| weighted(b.forward(x).unwrap().0.data(), &r6);
            let mut gin = None;
            let err = param_error(
                &blk,
                |b| f(b, &x),
                |b| {
                    let (_, c) = b.forward(&x).unwrap();
                    gin = Some(b.backward(&g6, &c));
                },
            );
            assert_ok("block", seed, err);
            assert_ok("block input", seed, input_error(&x, |x| f(&blk, x), &gin.unwrap()));
        }

        let lstm = Lstm::new(6, 5, 2, &mut rng);
        let r5 = rng.uniform_vec(4 * 5, -1.0, 1.0);
        let g5 = Tensor::new(vec![4, 5], r5.clone()).unwrap();
        let f = |l: &Lstm, x: &Tensor| weighted(l.forward(x).unwrap().0.data(), &r5);
        let mut gin = None;
        let err = param_error(
            &lstm,
            |l| f(l, &x),
            |l| {
                let (_, c) = l.forward(&x).unwrap();
                gin = Some(l.backward(&g5, &c));
            },
        );
        assert_ok("lstm", seed, err);
        assert_ok("lstm input", seed, input_error(&x, |x| f(&lstm, x), &gin.unwrap()));

        let logits = rand_t(&mut rng, &[4, 7]);
        let targets = [1, 0, 6, 3];
        let counted = [true, false, true, true];
        let (_, g) = cross_entropy_with_grad(&logits, &targets, &counted).unwrap();
        let err = input_error(&logits, |l| cross_entropy(l, &targets, &counted).unwrap(), &g);
        assert_ok("cross entropy", seed, err);
    }
}

fn tiny_vocab() -> Vocab {
    Vocab::build(["what color is <o>?", "red blue", "describe the video."])
}

#[test]
fn decoder_end_to_end() {
    let vocab = tiny_vocab();
    for seed in 0..SEEDS {
        for tied in [false, true] {
            let mut rng = SeededRng::new(seed);
            let mut cfg = DecoderConfig::new(vocab.len());
            cfg.d = 8;
            cfg.layers = 2;
            cfg.heads = 2;
            cfg.d_ff = 12;
            cfg.max_len = 40;
            cfg.tied_head = tied;
            let dec = Decoder::new(cfg, &mut rng).unwrap();
            let ctx = rand_t(&mut rng, &[3, 8]);
            let objs: Vec<Vec<f64>> = (0..2).map(|_| rng.uniform_vec(8, -1.0, 1.0)).collect();
            let mode = if seed % 2 == 0 {
                PromptMode::General
            } else {
                PromptMode::Referring(11)
            };
            let prompt = assemble_prompt(&vocab, 3, &[10, 11], "what color is <o>?", mode)
                .or_else(|_| assemble_prompt(&vocab, 3, &[10, 11], "describe the video.", mode))
                .unwrap();
            let seq = prompt.with_answer(&vocab.encode("red blue").unwrap());
            let loss = |d: &Decoder, ctx: &Tensor, objs: &[Vec<f64>]| {
                let (logits, _) = d.forward(&seq, ctx, objs).unwrap();
                d.loss(&seq, &logits).unwrap().0
            };
            let mut grads = None;
            let err = param_error(
                &dec,
                |d| loss(d, &ctx, &objs),
                |d| {
                    let (logits, cache) = d.forward(&seq, &ctx, &objs).unwrap();
                    let (_, g) = d.loss(&seq, &logits).unwrap();
                    grads = Some(d.backward(&seq, &g, &cache, 3, 2));
                },
            );
            assert_ok(&format!("decoder tied={tied}"), seed, err);
            let grads = grads.unwrap();
            assert_ok("decoder context", seed, input_error(&ctx, |c| loss(&dec, c, &objs), &grads.context));
            let flat_objs = Tensor::new(vec![2, 8], objs.concat()).unwrap();
            let g_objs = Tensor::new(vec![2, 8], grads.objects.concat()).unwrap();
            let err = input_error(
                &flat_objs,
                |o| loss(&dec, &ctx, &[o.row(0).to_vec(), o.row(1).to_vec()]),
                &g_objs,
            );
            assert_ok("decoder objects", seed, err);
        }
    }
}

fn synthetic_sample(rng: &mut SeededRng, task: Task) -> Sample {
    let objects = (0..3)
        .map(|i| PooledObject {
            id: i,
            first_frame: i,
            area: 10,
            pooled: rand_t(rng, &[2 + i, 6]),
        })
        .collect();
    let scene = Arc::new(SceneFeatures {
        id: "s".into(),
        context: rand_t(rng, &[4, 6]),
        objects,
        truth_index: vec![0, 1, 2],
        caption: "a red disc".into(),
    });
    let (instruction, target) = match task {
        Task::ReferColor => ("what color is <o>?".to_string(), Some(2)),
        _ => ("where is the red object?".to_string(), None),
    };
    Sample {
        id: "s-0".into(),
        scene,
        task,
        instruction,
        target,
        relevant: Some(2),
        answer: "top left".into(),
    }
}

/// Whole model: both projectors feed the decoder, gradients flow back
/// through the injected token slots.
#[test]
fn model_end_to_end() {
    for seed in 0..SEEDS {
        let mut rng = SeededRng::new(100 + seed);
        let task = if seed % 2 == 0 { Task::ReferColor } else { Task::WhereIsColor };
        let sample = synthetic_sample(&mut rng, task);
        let mut cfg = ModelConfig::new(6);
        cfg.d = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.d_ff = 12;
        cfg.variant = Variant::ALL[seed as usize % 5];
        let model = Model::new(cfg, Model::vocab_for(std::slice::from_ref(&sample)), seed).unwrap();
        let flat = |m: &mut Model| -> Vec<f64> {
            m.params_mut(ModuleSet::ALL)
                .iter()
                .flat_map(|p| p.value.data().to_vec())
                .collect()
        };
        let set = |m: &mut Model, v: &[f64]| {
            let mut off = 0;
            for p in m.params_mut(ModuleSet::ALL) {
                let n = p.value.len();
                p.value.data_mut().copy_from_slice(&v[off..off + n]);
                off += n;
            }
        };
        let mut a = model.clone();
        a.zero_grad();
        a.loss_and_backward(&sample, ModuleSet::ALL, 1.0).unwrap();
        let analytic: Vec<f64> = a
            .params_mut(ModuleSet::ALL)
            .iter()
            .flat_map(|p| p.grad.clone())
            .collect();
        let mut probe = model.clone();
        let point = flat(&mut probe);
        let err = grad_check(
            |x| {
                set(&mut probe, x);
                probe.loss(&sample).unwrap()
            },
            &point,
            &analytic,
            EPS,
        )
        .unwrap();
        assert_ok(&format!("model {:?}", cfg.variant), seed, err);
    }
}
