use objtok_core::featurize::{resize_frame, resize_mask, Branch, FeatureMap, Featurizer, FeaturizerConfig};
use objtok_core::maskpipe::{MaskSet, ObjectTrack};
use objtok_core::numcore::Tensor;
use objtok_core::objproj::{
    mask_pool, pool_objects, select_capped, ObjectProjector, PatchMask, ProjectorConfig, Variant,
};
use objtok_core::rng::SeededRng;
use objtok_core::scenesynth::{generate_scene, random_scene, SceneOptions};
use objtok_core::video::{Frame, Mask};
use objtok_core::vidproj::block_pool;
use proptest::prelude::*;

fn random_frame(rng: &mut SeededRng, h: usize, w: usize) -> Frame {
    let mut f = Frame::filled(h, w, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let c = [rng.below(0, 256) as u8, rng.below(0, 256) as u8, rng.below(0, 256) as u8];
            f.set_pixel(y, x, c);
        }
    }
    f
}

fn random_tensor(rng: &mut SeededRng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), rng.uniform_vec(n, -2.0, 2.0)).unwrap()
}

fn random_patch_mask(rng: &mut SeededRng, h: usize, w: usize) -> PatchMask {
    let p = rng.uniform(0.1, 0.9);
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if rng.chance(p) {
                cells.push((y, x));
            }
        }
    }
    if cells.is_empty() {
        cells.push((rng.below(0, h), rng.below(0, w)));
    }
    PatchMask::from_cells(0, h, w, &cells)
}

// Loops over (y, x) and reads the flat index directly.
fn pool_oracle(x: &Tensor, m: &PatchMask) -> Vec<f64> {
    let (h, w, d) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut sum = vec![0.0; d];
    let mut n = 0.0;
    for y in 0..h {
        for xx in 0..w {
            if m.get(y, xx) {
                for k in 0..d {
                    sum[k] += x.data()[(y * w + xx) * d + k];
                }
                n += 1.0;
            }
        }
    }
    sum.iter().map(|s| s / n).collect()
}

#[test]
fn mean_rgb_matches_pixel_loop() {
    let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
    let mut rng = SeededRng::new(5);
    for _ in 0..5 {
        let frame = random_frame(&mut rng, 64, 64);
        let t = f.patch_features(&frame).unwrap();
        for gy in 0..8 {
            for gx in 0..8 {
                for ch in 0..3 {
                    let mut s = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            s += frame.pixel(gy * 8 + y, gx * 8 + x)[ch] as f64 / 255.0;
                        }
                    }
                    let got = t.data()[(gy * 8 + gx) * 32 + ch];
                    assert!((got - s / 64.0).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn video_stacks_frames() {
    let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
    let mut rng = SeededRng::new(6);
    let a = random_frame(&mut rng, 64, 64);
    let one = f.featurize_video("v", std::slice::from_ref(&a), &[0]).unwrap();
    assert_eq!(one.features.data(), f.patch_features(&a).unwrap().data());

    let frames = vec![a.clone(); 8];
    let fm = f.featurize_video("v", &frames, &(0..8).collect::<Vec<_>>()).unwrap();
    assert_eq!(fm.t(), 8);
    let first = fm.slice(0).to_vec();
    for s in 1..8 {
        assert_eq!(fm.slice(s), &first[..]);
    }
    let again = f.featurize_video("v", &frames, &(0..8).collect::<Vec<_>>()).unwrap();
    assert_eq!(fm, again);
}

#[test]
fn resized_masks_stay_on_their_object() {
    let mut rng = SeededRng::new(7);
    for _ in 0..50 {
        let (h, w) = (rng.below(40, 120), rng.below(40, 120));
        let mut frame = Frame::filled(h, w, [10, 10, 10]);
        let mut mask = Mask::empty(h, w);
        let (y0, x0) = (rng.below(0, h - 10), rng.below(0, w - 10));
        let (y1, x1) = (rng.below(y0 + 5, h), rng.below(x0 + 5, w));
        for y in y0..y1 {
            for x in x0..x1 {
                frame.set_pixel(y, x, [200, 30, 30]);
                mask.set(y, x, true);
            }
        }
        for branch in [Branch::Object, Branch::Context] {
            let rf = resize_frame(&frame, 64, 64, branch);
            let rm = resize_mask(&mask, 64, 64, branch);
            assert_eq!((rf.height, rf.width), (64, 64));
            for y in 0..64 {
                for x in 0..64 {
                    if rm.get(y, x) {
                        assert_eq!(rf.pixel(y, x), [200, 30, 30]);
                    }
                }
            }
        }
    }
}

#[test]
fn resize_on_oracle_scenes_keeps_alignment() {
    for seed in 0..20 {
        let truth = generate_scene(&random_scene(seed, &SceneOptions::default()).unwrap()).unwrap();
        let frame = &truth.frames[0];
        let big_mask = |m: &Mask| {
            let mut out = Mask::empty(80, 64);
            for y in 0..80 {
                for x in 0..64 {
                    out.set(y, x, m.get(y * 64 / 80, x));
                }
            }
            out
        };
        let mut big = Frame::filled(80, 64, [0, 0, 0]);
        for y in 0..80 {
            for x in 0..64 {
                big.set_pixel(y, x, frame.pixel(y * 64 / 80, x));
            }
        }
        let rf = resize_frame(&big, 64, 64, Branch::Object);
        for masks in &truth.masks {
            let rm = resize_mask(&big_mask(&masks[0]), 64, 64, Branch::Object);
            let src = big_mask(&masks[0]);
            let color = (0..80 * 64)
                .find(|&i| src.get(i / 64, i % 64))
                .map(|i| big.pixel(i / 64, i % 64));
            for y in 0..64 {
                for x in 0..64 {
                    if rm.get(y, x) {
                        assert_eq!(Some(rf.pixel(y, x)), color);
                    }
                }
            }
        }
    }
}

#[test]
fn block_pool_matches_block_mean() {
    let mut rng = SeededRng::new(8);
    for _ in 0..20 {
        let (t, h, w, d) = (2 * rng.below(1, 5), 2 * rng.below(1, 5), 2 * rng.below(1, 5), rng.below(1, 6));
        let x = random_tensor(&mut rng, &[t, h, w, d]);
        let (pooled, dims) = block_pool(&x).unwrap();
        assert_eq!(dims, (t / 2, h / 2, w / 2));
        let mut row = 0;
        for a in 0..t / 2 {
            for b in 0..h / 2 {
                for c in 0..w / 2 {
                    for k in 0..d {
                        let mut s = 0.0;
                        for (dt, dy, dx) in (0..8).map(|i| (i >> 2, (i >> 1) & 1, i & 1)) {
                            let (ft, fy, fx) = (2 * a + dt, 2 * b + dy, 2 * c + dx);
                            s += x.data()[((ft * h + fy) * w + fx) * d + k];
                        }
                        assert!((pooled.row(row)[k] - s / 8.0).abs() <= 1e-12);
                    }
                    row += 1;
                }
            }
        }
    }
}

#[test]
fn mask_pool_matches_cell_loop() {
    let mut rng = SeededRng::new(9);
    for _ in 0..100 {
        let x = random_tensor(&mut rng, &[8, 8, 32]);
        let m = random_patch_mask(&mut rng, 8, 8);
        let got = mask_pool(&x, &m).unwrap();
        for (g, e) in got.iter().zip(pool_oracle(&x, &m)) {
            assert!((g - e).abs() <= 1e-12);
        }
    }
}

#[test]
fn mask_pool_is_linear() {
    let mut rng = SeededRng::new(10);
    for _ in 0..100 {
        let x = random_tensor(&mut rng, &[8, 8, 32]);
        let y = random_tensor(&mut rng, &[8, 8, 32]);
        let (a, b) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
        let m = random_patch_mask(&mut rng, 8, 8);
        let mix = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = mask_pool(&mix, &m).unwrap();
        let px = mask_pool(&x, &m).unwrap();
        let py = mask_pool(&y, &m).unwrap();
        for k in 0..32 {
            assert!((lhs[k] - (a * px[k] + b * py[k])).abs() <= 1e-10);
        }
    }
}

#[test]
fn full_mask_is_global_mean() {
    let mut rng = SeededRng::new(11);
    let x = random_tensor(&mut rng, &[4, 5, 3]);
    let all: Vec<(usize, usize)> = (0..20).map(|i| (i / 5, i % 5)).collect();
    let got = mask_pool(&x, &PatchMask::from_cells(0, 4, 5, &all)).unwrap();
    let rows = Tensor::new(vec![20, 3], x.data().to_vec()).unwrap();
    for (g, e) in got.iter().zip(rows.mean_rows()) {
        assert!((g - e).abs() <= 1e-12);
    }
}

fn permuted(x: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<&[f64]> = order.iter().map(|&i| x.row(i)).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn temporal_mean_variants_ignore_frame_order() {
    let mut rng = SeededRng::new(12);
    for v in [Variant::Mlp, Variant::Linear, Variant::AvgPool] {
        for _ in 0..20 {
            let p = ObjectProjector::new(ProjectorConfig::new(v, 6, 8), &mut rng).unwrap();
            let k = rng.below(2, 9);
            let x = random_tensor(&mut rng, &[k, 6]);
            let mut order: Vec<usize> = (0..k).collect();
            rng.shuffle(&mut order);
            let (a, _) = p.forward(&x).unwrap();
            let (b, _) = p.forward(&permuted(&x, &order)).unwrap();
            for (u, w) in a.iter().zip(&b) {
                assert!((u - w).abs() <= 1e-10, "{}", v.name());
            }
        }
    }
}

#[test]
fn lstm_variant_sees_frame_order() {
    let mut rng = SeededRng::new(13);
    let p = ObjectProjector::new(ProjectorConfig::new(Variant::Lstm, 6, 8), &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[4, 6]);
    let (a, _) = p.forward(&x).unwrap();
    let (b, _) = p.forward(&permuted(&x, &[3, 2, 1, 0])).unwrap();
    let diff = a.iter().zip(&b).map(|(u, w)| (u - w).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "max difference {diff}");
}

#[test]
fn cap_keeps_the_largest_objects() {
    let mut rng = SeededRng::new(14);
    let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
    let fm: FeatureMap = f.featurize_video("v", &[random_frame(&mut rng, 64, 64)], &[0]).unwrap();
    let tracks: Vec<ObjectTrack> = (0..70)
        .map(|id| {
            let mut m = Mask::empty(64, 64);
            let area = rng.below(1, 200);
            let start = rng.below(0, 64 * 64 - area);
            for i in start..start + area {
                m.set(i / 64, i % 64, true);
            }
            ObjectTrack {
                id,
                masks: vec![(0, m)],
            }
        })
        .collect();
    let set = MaskSet {
        video_id: "v".into(),
        t_o: 1,
        tracks: tracks.clone(),
    };
    let kept = pool_objects(&set, &fm, 64).unwrap();
    assert_eq!(kept.len(), 64);
    let ids: Vec<usize> = kept.iter().map(|o| o.id).collect();
    let min_kept = kept.iter().map(|o| o.area).min().unwrap();
    for t in &tracks {
        if !ids.contains(&t.id) {
            assert!(t.total_area() <= min_kept);
        }
    }
    // All start on frame 0, so order is by area, then id.
    for w in kept.windows(2) {
        assert!(w[0].area > w[1].area || (w[0].area == w[1].area && w[0].id < w[1].id));
    }
}

proptest! {
    #[test]
    fn capped_selection_sorts_by_area(areas in proptest::collection::vec(0usize..50, 0..100), cap in 0usize..80) {
        let keyed: Vec<(usize, usize)> = areas.iter().enumerate().map(|(i, &a)| (i, a)).collect();
        let keep = select_capped(&keyed, cap);
        prop_assert_eq!(keep.len(), cap.min(areas.len()));
        let min_kept = keep.iter().map(|&i| areas[i]).min().unwrap_or(usize::MAX);
        for i in 0..areas.len() {
            if !keep.contains(&i) {
                prop_assert!(areas[i] <= min_kept);
            }
        }
    }

    #[test]
    fn pool_ignores_cell_order(seed in 0u64..1000) {
        let mut rng = SeededRng::new(seed);
        let x = random_tensor(&mut rng, &[5, 4, 3]);
        let m = random_patch_mask(&mut rng, 5, 4);
        let mut cells: Vec<(usize, usize)> = (0..20).filter(|&i| m.cells[i]).map(|i| (i / 4, i % 4)).collect();
        rng.shuffle(&mut cells);
        let again = PatchMask::from_cells(0, 5, 4, &cells);
        prop_assert_eq!(mask_pool(&x, &m).unwrap(), mask_pool(&x, &again).unwrap());
    }
}
