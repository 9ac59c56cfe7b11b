//! End-to-end acceptance checks, one line per criterion.
//!
//! `cargo test --test acceptance` runs everything; names after `--` pick a
//! subset, e.g. `cargo test --test acceptance -- A1 A2`.

use std::path::Path;
use std::time::Instant;

use daa_autograd::gradcheck::{numeric_grads, relative_error};
use daa_autograd::{Graph, Real, Tensor, Var};
use daa_core::augment::{
    dice, eval_posthoc_classification, eval_posthoc_segmentation, extract_near_gt_masks, frechet_distance, Summary,
};
use daa_core::blend::{blend_from_support, gumbel_softmax_sample, one_hot_argmax};
use daa_core::config::DaaConfig;
use daa_core::factors::{
    apply_plan, dilate, erode, heart_mask, overlap_report, plan_target, validate_plan, AnatomyTensor, ArithmeticPlan,
    ChannelRole, FactorOp, Mask, MorphOp, PathologyLabel, PlanViolation,
};
use daa_core::model::ModelBundle;
use daa_core::nets::init::rng;
use daa_core::nets::{Classifier, ClassifierConfig, NetConfig};
use daa_core::phantom::{Dataset, Imbalance, Split};
use daa_core::training::losses::{adv_d_var, adv_g_var, masked_l1_var, path_var};
use daa_core::training::step::{discriminator_loss, generator_terms, Bound};
use daa_core::training::{
    draw_pairs, loss_adv, loss_bg, loss_cons, loss_path, total_loss, LossParts, LossWeights, PlanPolicy, Side,
    TrainingBatch,
};
use daa_core::workflow;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn report(name: &str, what: &str, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{name} {tag}  {what}: {}", o.detail);
}

// ---------------------------------------------------------------- oracles

fn morph_oracle(m: &Mask, r: usize, dilating: bool) -> Mask {
    let (h, w) = m.dims();
    let r = r as isize;
    Mask::from_fn(h, w, |y, x| {
        let mut hits = 0;
        let mut seen = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                seen += 1;
                hits += m.get(yy as usize, xx as usize) as usize;
            }
        }
        if dilating {
            hits > 0
        } else {
            hits == seen
        }
    })
}

fn com(m: &Mask) -> Option<(f64, f64)> {
    let pts: Vec<(usize, usize)> = (0..m.height())
        .flat_map(|y| (0..m.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| m.get(y, x))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    Some((
        pts.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        pts.iter().map(|p| p.1 as f64).sum::<f64>() / n,
    ))
}

fn shifted(m: &Mask, dy: isize, dx: isize) -> Mask {
    let (h, w) = m.dims();
    Mask::from_fn(h, w, |y, x| {
        let (sy, sx) = (y as isize - dy, x as isize - dx);
        sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize && m.get(sy as usize, sx as usize)
    })
}

fn rect(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Mask {
    Mask::from_fn(h, w, |y, x| y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw)
}

const NAMES: [&str; 4] = ["NOR", "DCM", "HCM", "ARV"];

fn label(c: usize) -> PathologyLabel {
    PathologyLabel::new(c, NAMES[c])
}

/// Three-channel anatomy, two heart channels then one other, each a
/// non-empty rectangle.
fn small_anatomy(id: &str, class: usize, rects: [(usize, usize, usize, usize); 3], side: usize) -> AnatomyTensor {
    let masks: Vec<Mask> = rects.iter().map(|&(y, x, rh, rw)| rect(side, side, y, x, rh, rw)).collect();
    AnatomyTensor::from_masks(
        &masks,
        vec![ChannelRole::Heart, ChannelRole::Heart, ChannelRole::Other],
        id.into(),
        label(class),
    )
    .unwrap()
}

fn rect_strategy(side: usize) -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (0..side - 3, 0..side - 3, 1usize..4, 1usize..4)
}

fn close(a: Real, b: Real, tol: Real) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---------------------------------------------------------------- A1

fn bits(h: usize, w: usize, p: f64) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(proptest::bool::weighted(p), h * w).prop_map(move |v| Mask::from_vec(h, w, v))
}

fn sized_mask(p: f64) -> impl Strategy<Value = Mask> {
    (4usize..=12, 4usize..=12).prop_flat_map(move |(h, w)| bits(h, w, p))
}

fn values(n: usize, lo: Real, hi: Real) -> impl Strategy<Value = Vec<Real>> {
    proptest::collection::vec(lo..hi, n)
}

type PropFn = fn(&mut TestRunner) -> Result<(), String>;

fn prop_morphology(t: &mut TestRunner) -> Result<(), String> {
    t.run(&(sized_mask(0.6), 1usize..=3), |(m, r)| {
        let (e, d) = (erode(&m, r), dilate(&m, r));
        prop_assert_eq!(&e, &morph_oracle(&m, r, false));
        prop_assert_eq!(&d, &morph_oracle(&m, r, true));
        prop_assert!(e.is_subset_of(&m) && m.is_subset_of(&d));
        prop_assert!(erode(&m, r + 1).is_subset_of(&e));
        prop_assert!(d.is_subset_of(&dilate(&m, r + 1)));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_mask_algebra(t: &mut TestRunner) -> Result<(), String> {
    let pair = (4usize..=10, 4usize..=10).prop_flat_map(|(h, w)| (bits(h, w, 0.5), bits(h, w, 0.5)));
    t.run(&pair, |(a, b)| {
        for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            prop_assert_eq!(a.or(&b).data()[i], x || y);
            prop_assert_eq!(a.and(&b).data()[i], x && y);
            prop_assert_eq!(a.and_not(&b).data()[i], x && !y);
            prop_assert_eq!(a.xor(&b).data()[i], x != y);
        }
        prop_assert_eq!(a.count(), a.data().iter().filter(|&&v| v).count());
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_heart_and_overlaps(t: &mut TestRunner) -> Result<(), String> {
    let s = proptest::collection::vec(bits(8, 8, 0.3), 4);
    t.run(&s, |ms| {
        let roles = vec![ChannelRole::Heart, ChannelRole::Other, ChannelRole::Heart, ChannelRole::Heart];
        let c = AnatomyTensor::from_masks(&ms, roles, "s".into(), label(0)).unwrap();
        let hm = heart_mask(&c).mask;
        for p in 0..64 {
            prop_assert_eq!(hm.data()[p], ms[0].data()[p] || ms[2].data()[p] || ms[3].data()[p]);
        }
        let mut expect = Vec::new();
        for (i, &a) in [0usize, 2, 3].iter().enumerate() {
            for &b in &[0usize, 2, 3][i + 1..] {
                let n = (0..64).filter(|&p| ms[a].data()[p] && ms[b].data()[p]).count();
                if n > 0 {
                    expect.push((a, b, n));
                }
            }
        }
        let got: Vec<_> = overlap_report(&c).iter().map(|o| (o.channel_a, o.channel_b, o.pixels)).collect();
        prop_assert_eq!(got, expect);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_swap_and_remove(t: &mut TestRunner) -> Result<(), String> {
    let side = 12;
    let s = (
        proptest::collection::vec(rect_strategy(side), 3),
        proptest::collection::vec(rect_strategy(side), 3),
        0usize..3,
        1usize..4,
    );
    t.run(&s, |(br, dr, k, cls)| {
        let base = small_anatomy("b", 0, [br[0], br[1], br[2]], side);
        let donor = small_anatomy("d", cls, [dr[0], dr[1], dr[2]], side);
        let store = vec![base.clone(), donor.clone()];
        let (out, rec) = apply_plan(&base, &store, &ArithmeticPlan::new("b").with(FactorOp::swap(k, "d"))).unwrap();
        let (fy, fx) = com(&donor.channel(k)).unwrap();
        let (ty, tx) = com(&base.channel(k)).unwrap();
        let placed = shifted(&donor.channel(k), (ty - fy).round() as isize, (tx - fx).round() as isize);
        prop_assert_eq!(&out.channel(k), &placed);
        for j in (0..3).filter(|&j| j != k) {
            prop_assert_eq!(out.channel(j), base.channel(j));
        }
        prop_assert_eq!(&rec.modified_support, &base.channel(k).or(&placed));
        prop_assert_eq!(out.pathology.class_index, cls);

        let (out, rec) = apply_plan(&base, &store, &ArithmeticPlan::new("b").with(FactorOp::remove(k))).unwrap();
        prop_assert!(!out.channel(k).any());
        prop_assert_eq!(&rec.modified_support, &base.channel(k));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_plan_validation(t: &mut TestRunner) -> Result<(), String> {
    let s = (0usize..4, 0usize..4, 0usize..4, 0usize..3, 0usize..3);
    t.run(&s, |(b, d1, d2, k1, k2)| {
        let r = [(1, 1, 2, 2), (4, 4, 2, 2), (6, 1, 2, 2)];
        let store = vec![
            small_anatomy("b", b, r, 10),
            small_anatomy("d1", d1, r, 10),
            small_anatomy("d2", d2, r, 10),
        ];
        let plan = ArithmeticPlan::new("b").with(FactorOp::swap(k1, "d1")).with(FactorOp::add(k2, "d2"));
        let mut abnormal: Vec<usize> = [b, d1, d2].into_iter().filter(|&c| c != 0).collect();
        abnormal.sort();
        abnormal.dedup();
        match validate_plan(&plan, &store) {
            Ok(()) => {
                prop_assert!(abnormal.len() <= 1);
                let target = plan_target(&plan, &store).unwrap().class_index;
                prop_assert_eq!(target, abnormal.first().copied().unwrap_or(0));
            }
            Err(v) => {
                prop_assert!(abnormal.len() > 1);
                let only_pathology = matches!(v.as_slice(), [PlanViolation::MultiplePathologies { .. }]);
                prop_assert!(only_pathology);
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_blend_mask(t: &mut TestRunner) -> Result<(), String> {
    t.run(&(sized_mask(0.1), 0usize..3, 0.3f64..2.0), |(support, r, sigma)| {
        let (h, w) = support.dims();
        let phi = blend_from_support(&support, r, sigma);
        let region = morph_oracle(&support, r, true);
        let rad = (3.0 * sigma).ceil() as isize;
        let raw: Vec<f64> = (-rad..=rad).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = raw.iter().sum();
        for y in 0..h {
            for x in 0..w {
                let v = phi.get(y, x);
                prop_assert!((0.0..=1.0).contains(&v));
                if !region.get(y, x) {
                    prop_assert_eq!(v, 0.0);
                    continue;
                }
                let mut acc = 0.0;
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && region.get(yy as usize, xx as usize) {
                            acc += raw[(dy + rad) as usize] * raw[(dx + rad) as usize] / (norm * norm);
                        }
                    }
                }
                prop_assert!((v - acc.min(1.0)).abs() < 1e-9, "phi {} vs {}", v, acc);
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn scalar(g: &Graph, v: Var) -> Real {
    g.value(v).item()
}

fn prop_losses(t: &mut TestRunner) -> Result<(), String> {
    let dims = (1usize..3, 1usize..4, 1usize..5, 1usize..5);
    let s = dims.prop_flat_map(|(n, c, h, w)| {
        (
            Just((n, c, h, w)),
            values(n * c * h * w, -1.0, 1.0),
            values(n * c * h * w, -1.0, 1.0),
            values(n * h * w, 0.0, 1.0),
        )
    });
    t.run(&s, |((n, c, h, w), a, b, m)| {
        let sp = h * w;
        let mut expect = 0.0;
        for i in 0..n {
            for p in 0..sp {
                let l1: Real = (0..c).map(|k| (a[(i * c + k) * sp + p] - b[(i * c + k) * sp + p]).abs()).sum();
                expect += (1.0 - m[i * sp + p]) * l1;
            }
        }
        expect /= (n * sp) as Real;
        let (ta, tb, tm) = (
            Tensor::new(&[n, c, h, w], a.clone()),
            Tensor::new(&[n, c, h, w], b.clone()),
            Tensor::new(&[n, 1, h, w], m.clone()),
        );
        prop_assert!(close(loss_cons(&ta, &tb, &tm).unwrap(), expect, 1e-12));
        let g = Graph::new();
        let v = masked_l1_var(&g, g.constant(ta.clone()), g.constant(tb.clone()), &tm);
        prop_assert!(close(scalar(&g, v), expect, 1e-12));

        // single-channel images reuse the same formula
        let (ia, ib) = (
            Tensor::new(&[n, 1, h, w], a[..n * sp].to_vec()),
            Tensor::new(&[n, 1, h, w], b[..n * sp].to_vec()),
        );
        let bg: Real = (0..n * sp).map(|p| (1.0 - m[p]) * (a[p] - b[p]).abs()).sum::<Real>() / (n * sp) as Real;
        prop_assert!(close(loss_bg(&ia, &ib, &tm).unwrap(), bg, 1e-12));

        // least squares on the first few values as D scores
        let (real, fake) = (&a[..n], &b[..n]);
        let mean = |xs: &[Real], f: &dyn Fn(Real) -> Real| xs.iter().map(|&x| f(x)).sum::<Real>() / xs.len() as Real;
        let d_side = 0.5 * mean(real, &|x| (x - 1.0) * (x - 1.0)) + 0.5 * mean(fake, &|x| x * x);
        let g_side = 0.5 * mean(fake, &|x| (x - 1.0) * (x - 1.0));
        prop_assert!(close(loss_adv(real, fake, Side::D), d_side, 1e-12));
        prop_assert!(close(loss_adv(real, fake, Side::G), g_side, 1e-12));
        let g = Graph::new();
        let (r, f) = (g.constant(Tensor::new(&[n], real.to_vec())), g.constant(Tensor::new(&[n], fake.to_vec())));
        prop_assert!(close(scalar(&g, adv_d_var(&g, r, f)), d_side, 1e-12));
        prop_assert!(close(scalar(&g, adv_g_var(&g, f)), g_side, 1e-12));

        // cross-entropy from logits
        let k = c + 1;
        let logits: Vec<Real> = a.iter().chain(b.iter()).cycle().take(n * k).map(|v| 3.0 * v).collect();
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + h) % k).collect();
        let mut ce = 0.0;
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            let z: Real = row.iter().map(|v| v.exp()).sum();
            let p: Vec<Real> = row.iter().map(|v| v.exp() / z).collect();
            let l = loss_path(&p, labels[i]).unwrap();
            prop_assert!(close(l, -p[labels[i]].ln(), 1e-12));
            ce += l;
        }
        let g = Graph::new();
        let pv = path_var(&g, g.constant(Tensor::new(&[n, k], logits)), &labels);
        prop_assert!(close(scalar(&g, pv), ce / n as Real, 1e-9));

        let parts = LossParts {
            adv: g_side,
            path: ce,
            cons: expect,
            bg,
        };
        let lw = LossWeights::new(m[0] * 20.0).unwrap();
        prop_assert!(close(total_loss(&parts, &lw), g_side + ce + m[0] * 20.0 * (expect + bg), 1e-12));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_frechet(t: &mut TestRunner) -> Result<(), String> {
    let one_d = (3usize..12).prop_flat_map(|n| (values(n, -3.0, 3.0), values(n, -3.0, 3.0)));
    t.run(&one_d, |(a, b)| {
        let stats = |x: &[Real]| {
            let n = x.len() as Real;
            let m = x.iter().sum::<Real>() / n;
            (m, x.iter().map(|v| (v - m) * (v - m)).sum::<Real>() / (n - 1.0) + 1e-6)
        };
        let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
        let expect = (ma - mb) * (ma - mb) + va + vb - 2.0 * (va * vb).sqrt();
        let fa: Vec<Vec<Real>> = a.iter().map(|&v| vec![v]).collect();
        let fb: Vec<Vec<Real>> = b.iter().map(|&v| vec![v]).collect();
        let d = frechet_distance(&fa, &fb).unwrap();
        prop_assert!((d - expect.max(0.0)).abs() < 1e-8, "{} vs {}", d, expect);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    // a pure shift only moves the means
    let shift = (2usize..5, 4usize..10).prop_flat_map(|(d, n)| (values(d * n, -2.0, 2.0), values(d, -2.0, 2.0), Just(d)));
    t.run(&shift, |(x, s, d)| {
        let a: Vec<Vec<Real>> = x.chunks(d).map(|r| r.to_vec()).collect();
        let b: Vec<Vec<Real>> = a.iter().map(|r| r.iter().zip(&s).map(|(v, o)| v + o).collect()).collect();
        let expect: Real = s.iter().map(|v| v * v).sum();
        let got = frechet_distance(&a, &b).unwrap();
        prop_assert!((got - expect).abs() < 1e-6 * (1.0 + expect), "{} vs {}", got, expect);
        prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-9);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_gumbel(t: &mut TestRunner) -> Result<(), String> {
    let s = (2usize..5, 1usize..4, 0.2f64..2.0, any::<u64>()).prop_flat_map(|(k, side, tau, seed)| {
        (Just((k, side, tau, seed)), values(k * side * side, -4.0, 4.0))
    });
    t.run(&s, |((k, side, tau, seed), v)| {
        let logits = Tensor::new(&[1, k, side, side], v);
        let soft = gumbel_softmax_sample(&logits, tau, seed, false);
        let hard = gumbel_softmax_sample(&logits, tau, seed, true);
        let sp = side * side;
        for p in 0..sp {
            let col: Vec<Real> = (0..k).map(|c| soft.data()[c * sp + p]).collect();
            prop_assert!(col.iter().all(|&x| x >= 0.0));
            prop_assert!((col.iter().sum::<Real>() - 1.0).abs() < 1e-9);
            let ones = (0..k).filter(|&c| hard.data()[c * sp + p] == 1.0).count();
            let zeros = (0..k).filter(|&c| hard.data()[c * sp + p] == 0.0).count();
            prop_assert_eq!((ones, zeros), (1, k - 1));
        }
        prop_assert_eq!(&hard, &one_hot_argmax(&soft));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_dice(t: &mut TestRunner) -> Result<(), String> {
    let pair = (4usize..=10, 4usize..=10).prop_flat_map(|(h, w)| (bits(h, w, 0.3), bits(h, w, 0.3)));
    t.run(&pair, |(a, b)| {
        let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
        let sum = a.count() + b.count();
        let expect = if sum == 0 { 1.0 } else { 2.0 * both as Real / sum as Real };
        prop_assert!((dice(&a, &b) - expect).abs() < 1e-12);
        prop_assert_eq!(dice(&a, &b), dice(&b, &a));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_near_gt_masks(t: &mut TestRunner) -> Result<(), String> {
    t.run(&values(4 * 64, 0.0, 1.0), |v| {
        let roles = vec![ChannelRole::Heart, ChannelRole::Heart, ChannelRole::Other, ChannelRole::Heart];
        let c = AnatomyTensor::new(8, 8, v.clone(), roles, "s".into(), label(0), true).unwrap();
        let masks = extract_near_gt_masks(&c);
        let heart = [0usize, 1, 3];
        prop_assert_eq!(masks.len(), 3);
        for p in 0..64 {
            let best = heart
                .iter()
                .enumerate()
                .filter(|(_, &k)| v[k * 64 + p] >= 0.5)
                .fold(None, |acc: Option<(usize, Real)>, (i, &k)| match acc {
                    Some((_, b)) if b >= v[k * 64 + p] => acc,
                    _ => Some((i, v[k * 64 + p])),
                });
            for (i, m) in masks.iter().enumerate() {
                prop_assert_eq!(m.data()[p], best.map(|b| b.0) == Some(i));
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn a1() -> Outcome {
    let props: [(&str, PropFn); 11] = [
        ("erode/dilate vs neighbourhood scan", prop_morphology),
        ("mask algebra", prop_mask_algebra),
        ("heart mask and overlaps", prop_heart_and_overlaps),
        ("swap and remove", prop_swap_and_remove),
        ("plan validation", prop_plan_validation),
        ("blend mask", prop_blend_mask),
        ("loss formulas", prop_losses),
        ("frechet distance", prop_frechet),
        ("gumbel-softmax", prop_gumbel),
        ("dice", prop_dice),
        ("near-gt masks", prop_near_gt_masks),
    ];
    let mut failed = Vec::new();
    for (name, p) in props {
        let mut runner = TestRunner::new(Config {
            cases: 64,
            failure_persistence: None,
            ..Config::default()
        });
        if let Err(e) = p(&mut runner) {
            failed.push(format!("{name}: {e}"));
        }
    }
    if failed.is_empty() {
        Outcome::new(true, format!("{} properties x 64 cases", props.len()))
    } else {
        Outcome::new(false, failed.join("; "))
    }
}

// ---------------------------------------------------------------- A2

const SIDE: usize = 8;

fn random_batch(seed: u64, code_dim: usize) -> TrainingBatch {
    let mut r = rng(seed);
    let blob = |r: &mut daa_core::nets::init::DetRng| {
        let (rh, rw) = (r.random_range(2..5), r.random_range(2..5));
        (r.random_range(0..SIDE - rh), r.random_range(0..SIDE - rw), rh, rw)
    };
    let mut parts: [Vec<Tensor>; 8] = Default::default();
    let mut labels = Vec::new();
    let mut plans = Vec::new();
    for _ in 0..2 {
        let class = r.random_range(0..4);
        let base = small_anatomy("b", 0, [blob(&mut r), blob(&mut r), blob(&mut r)], SIDE);
        let donor = small_anatomy("d", class, [blob(&mut r), blob(&mut r), blob(&mut r)], SIDE);
        let store = vec![base.clone(), donor.clone()];
        let plan = ArithmeticPlan::new("b").with(FactorOp::swap(r.random_range(0..2), "d"));
        let (c_hat, rec) = apply_plan(&base, &store, &plan).unwrap();
        let phi = blend_from_support(&rec.modified_support, 1, 0.8);
        let fake = heart_mask(&c_hat);
        let bg = fake.mask.or(&heart_mask(&base).mask);
        let noise_image = |r: &mut daa_core::nets::init::DetRng| {
            Tensor::new(&[1, 1, SIDE, SIDE], (0..SIDE * SIDE).map(|_| r.random_range(-1.0..1.0)).collect())
        };
        parts[0].push(c_hat.to_tensor());
        parts[1].push(phi.to_tensor());
        parts[2].push(noise_image(&mut r));
        parts[3].push(Tensor::new(&[1, code_dim], (0..code_dim).map(|_| r.random_range(-1.0..1.0)).collect()));
        parts[4].push(noise_image(&mut r));
        parts[5].push(heart_mask(&donor).to_tensor());
        parts[6].push(fake.to_tensor());
        parts[7].push(Tensor::new(&[1, 1, SIDE, SIDE], bg.to_reals()));
        labels.push(class);
        plans.push(plan);
    }
    let [c_hat, phi, base_image, code, donor_image, donor_mask, fake_mask, bg_mask] = parts.map(|p| Tensor::stack(&p));
    TrainingBatch {
        c_hat,
        phi,
        base_image,
        code,
        donor_image,
        donor_mask,
        fake_mask,
        bg_mask,
        labels,
        plans,
    }
}

fn tiny_bundle(seed: u64) -> ModelBundle {
    let cfg = NetConfig {
        height: SIDE,
        width: SIDE,
        channels: 3,
        classes: 4,
        code_dim: 3,
        refiner_width: 3,
        generator_width: 3,
        mapper_hidden: 3,
        disc_widths: [2, 2, 2, 2],
        ..NetConfig::default()
    };
    let f = Classifier::new(
        ClassifierConfig {
            base_width: 2,
            fc_hidden: [4, 4],
            ..cfg.classifier_config()
        },
        seed + 100,
    )
    .unwrap();
    let mut m = ModelBundle::new(cfg, f, seed).unwrap();
    // zero biases on zero-masked inputs sit exactly on activation kinks
    let mut r = rng(seed + 200);
    for set in [&mut m.refiner.params, &mut m.generator.params, &mut m.discriminator.params] {
        for t in set.tensors_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
    }
    m
}

fn bind_consts(g: &Graph, ps: &[Tensor]) -> Vec<Var> {
    ps.iter().map(|t| g.constant(t.clone())).collect()
}

/// Worst relative error of L_total over the J, G and D parameters and of the
/// D loss over D, for one random instance.
fn gradcheck_instance(seed: u64) -> (Real, Real) {
    let m = tiny_bundle(seed);
    let batch = random_batch(seed, m.config.code_dim);
    let noise = m.refiner.draw_noise(&batch.phi, &mut rng(seed + 7));
    let w = LossWeights::new(10.0).unwrap();
    let (nj, ng) = (m.refiner.params.len(), m.generator.params.len());

    let g = Graph::new();
    let v = Bound::new(&g, &m, true, true, true);
    let t = generator_terms(&g, &m, &v, &batch, &noise, &w, false);
    let grads = g.backward(t.total);
    let mut analytic = m.refiner.params.grads(&grads, &v.j);
    analytic.extend(m.generator.params.grads(&grads, &v.g));
    analytic.extend(m.discriminator.params.grads(&grads, &v.d));
    let fake = g.value(t.image).clone();

    let mut p: Vec<Tensor> = m.refiner.params.tensors().to_vec();
    p.extend(m.generator.params.tensors().iter().cloned());
    p.extend(m.discriminator.params.tensors().iter().cloned());
    let which: Vec<usize> = (0..p.len()).collect();
    let numeric = numeric_grads(&mut p, &which, 1e-6, |ps| {
        let g = Graph::new();
        let v = Bound {
            j: bind_consts(&g, &ps[..nj]),
            g: bind_consts(&g, &ps[nj..nj + ng]),
            d: bind_consts(&g, &ps[nj + ng..]),
            f: m.classifier.params.bind(&g, false),
        };
        let out = generator_terms(&g, &m, &v, &batch, &noise, &w, false).total;
        let x = g.value(out).item();
        x
    });
    let e_total = relative_error(&analytic, &numeric);

    let g = Graph::new();
    let d = m.discriminator.params.bind(&g, true);
    let l = discriminator_loss(&g, &m, &d, &batch, &fake);
    let analytic = m.discriminator.params.grads(&g.backward(l), &d);
    let mut p = m.discriminator.params.tensors().to_vec();
    let which: Vec<usize> = (0..p.len()).collect();
    let numeric = numeric_grads(&mut p, &which, 1e-6, |ps| {
        let g = Graph::new();
        let out = discriminator_loss(&g, &m, &bind_consts(&g, ps), &batch, &fake);
        let x = g.value(out).item();
        x
    });
    (e_total, relative_error(&analytic, &numeric))
}

fn a2() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let (a, b) = gradcheck_instance(seed);
        worst = (worst.0.max(a), worst.1.max(b));
    }
    Outcome::new(
        worst.0 < 1e-3 && worst.1 < 1e-3,
        format!("20 instances, worst relative error {:.2e} (L_total wrt J,G,D), {:.2e} (L_D wrt D)", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- A3

const ARV: usize = 3;

struct Trained {
    data: Dataset,
    model: ModelBundle,
    f_accuracy: Real,
    epochs: usize,
    secs: f64,
}

fn train_desk() -> Result<Trained, String> {
    let t0 = Instant::now();
    let mut cfg = DaaConfig::default();
    cfg.phantom.imbalance = Some(Imbalance::Class {
        class: ARV,
        fraction: 0.05,
    });
    let data = workflow::phantom_dataset(&cfg.phantom).map_err(|e| e.to_string())?;
    let f = workflow::pretrain_f(&data, &cfg.net, &cfg.classifier, 0).map_err(|e| e.to_string())?;
    let fit = workflow::train_model(&data, &cfg.net, f.classifier, &cfg.train, |_| {}).map_err(|e| e.to_string())?;
    Ok(Trained {
        data,
        model: fit.bundle,
        f_accuracy: f.test_accuracy,
        epochs: cfg.train.epochs,
        secs: t0.elapsed().as_secs_f64(),
    })
}

fn paired_median(a: &Summary, b: &Summary) -> Real {
    Summary::of(a.values.iter().zip(&b.values).map(|(x, y)| y - x).collect()).median()
}

fn a3(t: &Trained) -> Outcome {
    let t0 = Instant::now();
    let cfg = DaaConfig::default();
    let run = || -> Result<String, String> {
        let aug = workflow::augment_to_balance(&t.model, &t.data, &cfg.augment, 0).map_err(|e| e.to_string())?;
        let base = eval_posthoc_classification(&t.data, &cfg.eval).map_err(|e| e.to_string())?;
        let more = eval_posthoc_classification(&aug.dataset, &cfg.eval).map_err(|e| e.to_string())?;
        let (rb, ra) = match (&base.class_recall[ARV], &more.class_recall[ARV]) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            _ => return Err("no ARV subjects in the test split".into()),
        };
        let db = eval_posthoc_segmentation(&t.data, &cfg.eval).map_err(|e| e.to_string())?;
        let da = eval_posthoc_segmentation(&aug.dataset, &cfg.eval).map_err(|e| e.to_string())?;
        let gain = paired_median(&rb, &ra);
        let dice_delta = da.median() - db.median();
        let minutes = (t.secs + t0.elapsed().as_secs_f64()) / 60.0;
        let ok = t.f_accuracy >= 0.9 && t.epochs <= 90 && gain >= 0.05 && dice_delta >= -0.005 && minutes <= 60.0;
        let detail = format!(
            "F test acc {:.3}; {} DAA epochs; kept {} of {} candidates; ARV recall {:?} -> {:?} (median gain {:+.3}); \
             accuracy {:.3} -> {:.3}; Dice median {:.3} -> {:.3} ({:+.4}); {:.1} min",
            t.f_accuracy,
            t.epochs,
            aug.kept.len(),
            aug.candidates,
            rb.values,
            ra.values,
            gain,
            base.accuracy.median(),
            more.accuracy.median(),
            db.median(),
            da.median(),
            dice_delta,
            minutes
        );
        Ok(if ok { format!("ok|{detail}") } else { detail })
    };
    match run() {
        Ok(s) => match s.strip_prefix("ok|") {
            Some(d) => Outcome::new(true, d),
            None => Outcome::new(false, s),
        },
        Err(e) => Outcome::new(false, e),
    }
}

// ---------------------------------------------------------------- A4

fn a4(t: &Trained) -> Outcome {
    let steps = [3, 6, 9];
    let subjects: Vec<_> = t.data.split_records(Split::Test).into_iter().chain(t.data.split_records(Split::Val)).take(50).collect();
    let mut monotone = [0usize; 2];
    let mut emptied = 0;
    let mut conf_drop = Vec::new();
    for (i, r) in subjects.iter().enumerate() {
        let ch = i % 3;
        for (o, op) in [MorphOp::Erode, MorphOp::Dilate].into_iter().enumerate() {
            let tr = match t.model.traverse(&r.anatomy, &r.imaging, ch, op, &steps, i as u64) {
                Ok(tr) => tr,
                Err(e) => return Outcome::new(false, format!("{}: {e}", r.id)),
            };
            let mut area: Vec<usize> = tr.steps.iter().map(|s| extract_near_gt_masks(&s.synthesis.c_tilde)[ch].count()).collect();
            if tr.emptied_at.is_some() {
                emptied += 1;
            }
            area.resize(steps.len(), 0);
            let ok = match op {
                MorphOp::Erode => area.windows(2).all(|w| w[1] <= w[0]),
                MorphOp::Dilate => area.windows(2).all(|w| w[1] >= w[0]),
            };
            monotone[o] += ok as usize;
            if op == MorphOp::Erode {
                if let (Some(first), Some(last)) = (tr.steps.first(), tr.steps.last()) {
                    let c = r.pathology.class_index;
                    conf_drop.push(first.synthesis.probs[c] - last.synthesis.probs[c]);
                }
            }
        }
    }
    let n = subjects.len();
    let need = (0.8 * n as f64).ceil() as usize;
    let mean_drop = conf_drop.iter().sum::<Real>() / conf_drop.len().max(1) as Real;
    Outcome::new(
        n >= 50 && monotone.iter().all(|&m| m >= need),
        format!(
            "{n} subjects, monotone area erode {}/{n}, dilate {}/{n}; {emptied} erosions emptied the factor; \
             mean drop in true-class confidence across erosion steps {:+.3}",
            monotone[0], monotone[1], mean_drop
        ),
    )
}

// ---------------------------------------------------------------- A5

fn a5(t: &Trained) -> Outcome {
    let test = t.data.split_records(Split::Test);
    let all: Vec<_> = t.data.records.values().collect();
    let pairs = match draw_pairs(&test, &all, &mut rng(5)) {
        Ok(p) => p,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let (mut outside, mut inside) = (0.0, 0.0);
    let mut n = 0;
    for (i, (b, d)) in pairs.iter().cycle().take(50).enumerate() {
        let plan = PlanPolicy::default().plan(b, d).unwrap();
        let s = match t.model.synthesize(&t.data, &plan, &b.imaging, i as u64) {
            Ok(s) => s,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let heart = heart_mask(&b.anatomy).mask.or(&heart_mask(&s.c_hat).mask);
        let (mut so, mut no, mut si, mut ni) = (0.0, 0usize, 0.0, 0usize);
        for p in 0..heart.data().len() {
            let diff = (b.image.data()[p] - s.image.data()[p]).abs();
            if !heart.data()[p] {
                so += diff;
                no += 1;
            }
            if s.support.data()[p] {
                si += diff;
                ni += 1;
            }
        }
        if ni == 0 || no == 0 {
            continue;
        }
        outside += so / no as Real;
        inside += si / ni as Real;
        n += 1;
    }
    let ratio = outside / inside;
    Outcome::new(
        n == 50 && ratio <= 0.25,
        format!(
            "{n} mixes, mean |I_a - I~| outside heart {:.4}, inside edited region {:.4}, ratio {:.3}",
            outside / n as Real,
            inside / n as Real,
            ratio
        ),
    )
}

// ---------------------------------------------------------------- A6

const TINY: &str = r#"
[net]
refiner_width = 4
generator_width = 4
mapper_hidden = 4
disc_widths = [2, 2, 2, 2]
classifier_width = 2
classifier_fc = [8, 8]

[classifier]
epochs = 2
augment = false

[train]
epochs = 2
batch_size = 4
generator_pretrain_epochs = 1
refiner_warmup_epochs = 1
val_mixes = 2
"#;

fn daa(dir: &Path, args: &[&str]) -> Result<(), String> {
    let config = dir.join("tiny.toml");
    let mut argv = vec!["daa".to_string(), "--config".into(), config.display().to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    match daa_core::cli::run(&argv) {
        0 => Ok(()),
        code => Err(format!("{args:?} exited {code}")),
    }
}

fn a6() -> Outcome {
    let run = || -> Result<String, String> {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = tmp.path();
        let at = |f: &str| p.join(f).display().to_string();
        std::fs::write(p.join("tiny.toml"), TINY).map_err(|e| e.to_string())?;
        daa(p, &["phantom", "--n", "24", "--size", "16", "--out", &at("data")])?;
        daa(p, &["pretrain-f", "--data", &at("data"), "--out", &at("f.ckpt")])?;
        for m in ["m1.ckpt", "m2.ckpt"] {
            daa(p, &["--seed", "4", "train", "--data", &at("data"), "--classifier", &at("f.ckpt"), "--out", &at(m)])?;
        }
        let read = |f: &str| std::fs::read(p.join(f)).map_err(|e| e.to_string());
        let same_ckpt = read("m1.ckpt")? == read("m2.ckpt")?;

        let data = Dataset::load(p.join("data")).map_err(|e| e.to_string())?;
        let train = data.split_records(Split::Train);
        let nor = train.iter().find(|r| r.pathology.class_index == 0).ok_or("no NOR subject")?;
        let hcm = train.iter().find(|r| r.pathology.class_index == 2).ok_or("no HCM subject")?;
        let swap = format!("1:{}", hcm.id);
        for out in ["g1.png", "g2.png"] {
            daa(
                p,
                &["--seed", "9", "generate", "--data", &at("data"), "--model", &at("m1.ckpt"), "--base", nor.id.as_str(), "--swap", &swap, "--out", &at(out)],
            )?;
        }
        let same_png = read("g1.png")? == read("g2.png")?;
        if same_ckpt && same_png {
            Ok("ok".into())
        } else {
            Err(format!("checkpoints identical: {same_ckpt}, generated PNGs identical: {same_png}"))
        }
    };
    match run() {
        Ok(_) => Outcome::new(true, "2-epoch train twice gives identical checkpoints; generate twice gives identical PNGs"),
        Err(e) => Outcome::new(false, e),
    }
}

// ----------------------------------------------------------------

fn main() {
    let picked: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |n: &str| picked.is_empty() || picked.iter().any(|p| p.eq_ignore_ascii_case(n));
    let mut all_pass = true;
    let mut note = |name: &str, what: &str, o: Outcome| {
        report(name, what, &o);
        all_pass &= o.pass;
    };

    if want("A1") {
        note("A1", "property battery", a1());
    }
    if want("A2") {
        note("A2", "gradient check", a2());
    }
    if want("A3") || want("A4") || want("A5") {
        match train_desk() {
            Ok(t) => {
                if want("A3") {
                    note("A3", "augmentation improves the rare class", a3(&t));
                }
                if want("A4") {
                    note("A4", "traversal monotonicity", a4(&t));
                }
                if want("A5") {
                    note("A5", "background preserved", a5(&t));
                }
            }
            Err(e) => {
                for (n, w) in [("A3", "augmentation improves the rare class"), ("A4", "traversal monotonicity"), ("A5", "background preserved")] {
                    if want(n) {
                        note(n, w, Outcome::new(false, format!("training failed: {e}")));
                    }
                }
            }
        }
    }
    if want("A6") {
        note("A6", "determinism", a6());
    }
    if !all_pass {
        std::process::exit(1);
    }
}
