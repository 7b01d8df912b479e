//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use autoseg::adversarial::{discriminator_loss, generator_loss, stack_batch, AdversarialConfig, Trainer};
use autoseg::augment::{augment, AugmentParams};
use autoseg::cascade::{build_cascade, CascadeSpec, Segmenter, SegmenterSpec};
use autoseg::data::{LabelVolume, Modality, Organ, SliceSample, Spacing, TrainingModality};
use autoseg::eval::{
    assd, dice_coeff, largest_component, metric_score, mssd, rank, ravd, CaseScore, Category, Connectivity,
    MetricKind, ScoreTable,
};
use autoseg::generator::{build_generator, EncoderKind, NetworkSpec};
use autoseg::slices::replicate_channels;
use autoseg_nn::Graph;
use ndarray::{Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

type Voxel = (usize, usize, usize);

fn voxel_set(m: &Array3<u8>) -> HashSet<Voxel> {
    m.indexed_iter().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect()
}

/// Border voxels: foreground with a face neighbour that is background or
/// outside the grid.
fn oracle_border(set: &HashSet<Voxel>, dim: Voxel) -> Vec<Voxel> {
    let inside = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < dim.0
            && (y as usize) < dim.1
            && (x as usize) < dim.2
            && set.contains(&(z as usize, y as usize, x as usize))
    };
    let mut out: Vec<Voxel> = set
        .iter()
        .copied()
        .filter(|&(z, y, x)| {
            let (z, y, x) = (z as isize, y as isize, x as isize);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|&(a, b, c)| !inside(z + a, y + b, x + c))
        })
        .collect();
    out.sort_unstable();
    out
}

fn oracle_nearest(p: Voxel, to: &[Voxel], sp: [f64; 3]) -> f64 {
    to.iter()
        .map(|&q| {
            let dz = (p.0 as f64 - q.0 as f64) * sp[0];
            let dy = (p.1 as f64 - q.1 as f64) * sp[1];
            let dx = (p.2 as f64 - q.2 as f64) * sp[2];
            (dz * dz + dy * dy + dx * dx).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest component by union-find; ties go to the component holding the
/// earliest voxel in raster order.
fn oracle_largest(m: &Array3<u8>, conn: Connectivity) -> Array3<u8> {
    let dim = m.dim();
    let idx = |z: usize, y: usize, x: usize| (z * dim.1 + y) * dim.2 + x;
    let n = dim.0 * dim.1 * dim.2;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    let reach: i32 = match conn {
        Connectivity::Six => 1,
        Connectivity::TwentySix => 3,
    };
    for ((z, y, x), &v) in m.indexed_iter() {
        if v == 0 {
            continue;
        }
        for dz in -1i32..=1 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    if l1 == 0 || (reach == 1 && l1 != 1) {
                        continue;
                    }
                    let (qz, qy, qx) = (z as i32 + dz, y as i32 + dy, x as i32 + dx);
                    if qz < 0 || qy < 0 || qx < 0 || qz >= dim.0 as i32 || qy >= dim.1 as i32 || qx >= dim.2 as i32 {
                        continue;
                    }
                    let (qz, qy, qx) = (qz as usize, qy as usize, qx as usize);
                    if m[[qz, qy, qx]] != 0 {
                        let a = find(&mut parent, idx(z, y, x));
                        let b = find(&mut parent, idx(qz, qy, qx));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    let mut size: HashMap<usize, usize> = HashMap::new();
    let mut first: HashMap<usize, usize> = HashMap::new();
    for ((z, y, x), &v) in m.indexed_iter() {
        if v != 0 {
            let i = idx(z, y, x);
            let r = find(&mut parent, i);
            *size.entry(r).or_default() += 1;
            first.entry(r).or_insert(i);
        }
    }
    let best = size
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| first[b.0].cmp(&first[a.0])))
        .map(|(&r, _)| r);
    Array3::from_shape_fn(dim, |(z, y, x)| {
        (m[[z, y, x]] != 0 && Some(find(&mut parent, idx(z, y, x))) == best) as u8
    })
}

fn random_mask(rng: &mut ChaCha8Rng, dim: Voxel, density: f64) -> Array3<u8> {
    Array3::from_shape_fn(dim, |_| rng.random_bool(density) as u8)
}

// ---------------------------------------------------------------- criteria

fn metric_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let dim = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let sp = [rng.random_range(0.3..4.0), rng.random_range(0.3..4.0), rng.random_range(0.3..4.0)];
        let spacing = Spacing::new(sp[0], sp[1], sp[2]).unwrap();
        let (ds, dg) = (rng.random_range(0.05..0.9), rng.random_range(0.05..0.9));
        let mut s = random_mask(&mut rng, dim, ds);
        let mut g = random_mask(&mut rng, dim, dg);
        s[[0, 0, 0]] = 1;
        let last = (dim.0 - 1, dim.1 - 1, dim.2 - 1);
        g[[last.0, last.1, last.2]] = 1;
        let (ss, gs) = (voxel_set(&s), voxel_set(&g));
        let sv = LabelVolume::new(s, spacing, Organ::Liver).unwrap();
        let gv = LabelVolume::new(g, spacing, Organ::Liver).unwrap();

        let inter = ss.intersection(&gs).count();
        let dice = 2.0 * inter as f64 / (ss.len() + gs.len()) as f64;
        let rv = 100.0 * (ss.len() as f64 - gs.len() as f64).abs() / gs.len() as f64;
        let bs = oracle_border(&ss, dim);
        let bg = oracle_border(&gs, dim);
        let d1: Vec<f64> = bs.iter().map(|&p| oracle_nearest(p, &bg, sp)).collect();
        let d2: Vec<f64> = bg.iter().map(|&p| oracle_nearest(p, &bs, sp)).collect();
        let a = (d1.iter().sum::<f64>() + d2.iter().sum::<f64>()) / (d1.len() + d2.len()) as f64;
        let m = d1.iter().chain(&d2).cloned().fold(0.0, f64::max);

        let got_dice = dice_coeff(&sv, &gv).unwrap();
        let got_ravd = ravd(&sv, &gv).unwrap();
        ensure(got_dice == dice, || format!("trial {trial}: dice {got_dice} vs {dice}"))?;
        ensure(got_ravd == rv, || format!("trial {trial}: ravd {got_ravd} vs {rv}"))?;
        let (ga, gm) = (assd(&sv, &gv).unwrap(), mssd(&sv, &gv).unwrap());
        worst = worst.max((ga - a).abs()).max((gm - m).abs());
        ensure((ga - a).abs() <= 1e-9, || format!("trial {trial}: assd {ga} vs {a}"))?;
        ensure((gm - m).abs() <= 1e-9, || format!("trial {trial}: mssd {gm} vs {m}"))?;
    }
    let el = t0.elapsed();
    ensure(el < Duration::from_secs(60), || format!("took {el:?}"))?;
    Ok(format!("200 pairs, max surface deviation {worst:.1e} mm, {:.1}s", el.as_secs_f64()))
}

fn score_mapping() -> Outcome {
    use MetricKind::*;
    let table = [
        (Dice, 0.79, 0.0),
        (Dice, 0.80, 0.0),
        (Dice, 0.90, 50.0),
        (Dice, 1.0, 100.0),
        (Ravd, 5.0, 0.0),
        (Ravd, 2.5, 50.0),
        (Ravd, 0.0, 100.0),
        (Assd, 15.0, 0.0),
        (Assd, 7.5, 50.0),
        (Assd, 0.0, 100.0),
        (Mssd, 60.0, 0.0),
        (Mssd, 30.0, 50.0),
        (Mssd, 0.0, 100.0),
    ];
    for (k, v, want) in table {
        let got = metric_score(k, v);
        ensure(got == want, || format!("{k:?}({v}) = {got}, expected {want}"))?;
    }
    Ok(format!("{} entries exact", table.len()))
}

const CT_LIVER: [(&str, f64, &str); 14] = [
    ("DeepMedic", 73.32, "14"),
    ("denseVNet", 73.78, "13"),
    ("UNet", 79.07, "11"),
    ("v16UNet", 82.71, "7"),
    ("v16pUNet", 83.71, "5/6"),
    ("v19UNet", 82.34, "9"),
    ("v19pUNet", 83.71, "5/6"),
    ("v19UNet+", 76.61, "12"),
    ("v19pUNet+", 82.69, "8"),
    ("UNet1-1", 81.28, "10"),
    ("v16pUNet1-1", 85.53, "1"),
    ("v19pUNet1-1", 84.40, "3"),
    ("cGv16pUNet1-1", 84.50, "2"),
    ("cGv19pUNet1-1", 84.15, "4"),
];

fn published_ranking() -> Outcome {
    let mut table = ScoreTable::new();
    for (name, score, _) in CT_LIVER {
        let mut row = CaseScore::from_report(name, TrainingModality::Ct, Organ::Liver, "1", None);
        row.case_score = score;
        table.insert(row).map_err(|e| e.to_string())?;
    }
    let ranked = rank(&table.category_scores(Category::SCOREBOARD[0])).map_err(|e| e.to_string())?;
    for (name, _, label) in CT_LIVER {
        let r = ranked.iter().find(|r| r.name == name).ok_or(format!("{name} missing"))?;
        ensure(r.label == label, || format!("{name}: rank {} expected {label}", r.label))?;
    }
    Ok("14 CT-liver ranks match, including the 5/6 tie".into())
}

fn architecture() -> Outcome {
    let basic = NetworkSpec::new(EncoderKind::Basic32);
    let vgg = NetworkSpec::new(EncoderKind::Vgg19);
    let bw = basic.plan().encoder_widths();
    let vp = vgg.plan();
    let vw = vp.encoder_widths();
    ensure(bw[0] == 32, || format!("basic32 first width {}", bw[0]))?;
    ensure(vw[0] == 64, || format!("vgg19 first width {}", vw[0]))?;
    ensure(vw.iter().max() == Some(&512), || format!("vgg19 widths {vw:?}"))?;
    let n = vp.encoder_convs().count();
    ensure(n == 16, || format!("vgg19 has {n} encoder convs"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array4::from_shape_fn((1, 32, 32, 3), |_| rng.random_range(0.0..1.0));
    let mut checked = Vec::new();
    for spec in [basic, vgg] {
        let g = build_generator(spec, 1).map_err(|e| e.to_string())?;
        let first = g.plan().encoder[0][0].name.clone();
        let w = g.store().value(g.store().find(&format!("{first}.weight")).unwrap());
        ensure(w.shape()[3] == spec.plan().encoder_widths()[0], || format!("{first} weight {:?}", w.shape()))?;
        let y = g.forward(&x).map_err(|e| e.to_string())?;
        ensure(y.dim() == (1, 32, 32, 1), || format!("output {:?}", y.dim()))?;
        ensure(y.iter().all(|&v| v > 0.0 && v < 1.0), || "output outside (0,1)".into())?;
        checked.push(g.num_parameters());
    }
    let c = build_cascade(CascadeSpec::from_base(NetworkSpec::new(EncoderKind::Vgg19).width(0.25)), 2)
        .map_err(|e| e.to_string())?;
    let x = Array4::from_shape_fn((2, 64, 32, 3), |(b, i, j, _)| ((b + i * j) % 5) as f64 / 5.0);
    let (s1, s2) = c.cascade_forward(&x).map_err(|e| e.to_string())?;
    ensure(s1.dim() == (2, 64, 32, 1) && s2.dim() == (2, 64, 32, 1), || "cascade shapes".into())?;
    ensure(s2.iter().all(|&v| v > 0.0 && v < 1.0), || "cascade output outside (0,1)".into())?;
    Ok(format!("basic32 {} params, vgg19 {} params, 16 vgg19 encoder convs", checked[0], checked[1]))
}

fn loss_units() -> Outcome {
    let grid = ArrayD::from_elem(IxDyn(&[2, 4, 4, 1]), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = ArrayD::from_shape_fn(IxDyn(&[2, 32, 32, 1]), |_| rng.random_bool(0.3) as u8 as f64);
    let lg = generator_loss(grid.view(), t.view(), t.view(), 150.0, 1e-7, 1.0).map_err(|e| e.to_string())?;
    let ld = discriminator_loss(grid.view(), grid.view(), 1e-7).map_err(|e| e.to_string())?;
    let dl = autoseg::adversarial::dice_loss(t.view(), t.view(), 1.0).map_err(|e| e.to_string())?;
    ensure((lg - std::f64::consts::LN_2).abs() <= 1e-6, || format!("generator loss {lg}"))?;
    ensure((ld - 2.0 * std::f64::consts::LN_2).abs() <= 1e-6, || format!("discriminator loss {ld}"))?;
    ensure(dl == 0.0, || format!("dice loss {dl}"))?;
    Ok(format!("l_G {lg:.6}, l_D {ld:.6}, dice {dl}"))
}

/// Samples `n` (store, param, element) triples and compares the analytic
/// gradient of `lambda * dice(final output)` with central differences.
fn gradcheck(seg: &mut Segmenter, x: &Array4<f64>, y: &Array4<f64>, n: usize, seed: u64) -> Result<(usize, f64), String> {
    let target = Arc::new(y.clone().into_dyn());
    let record = |seg: &Segmenter, g: &mut Graph| {
        let xi = g.input(x.clone().into_dyn());
        let out = seg.forward_graph(g, xi).unwrap();
        let d = g.dice_loss(out, target.clone(), 1.0);
        g.scale(d, 150.0)
    };
    let loss = |seg: &Segmenter| {
        let mut g = Graph::new();
        let l = record(seg, &mut g);
        g.scalar(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // zero biases put dead-channel pre-activations exactly on a ReLU kink;
    // check at a generic point instead
    for store in seg.stores_mut() {
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
        for id in ids {
            store.value_mut(id).mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    }
    let analytic = {
        let mut g = Graph::new();
        let l = record(seg, &mut g);
        g.backward(l)
    };
    let n_stores = seg.stores().len();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut per_store = vec![0usize; n_stores];
    while done < n {
        // alternate stores so every stage is sampled
        let s = done % n_stores;
        let (id, k, an) = {
            let store = seg.stores()[s];
            let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
            let id = ids[rng.random_range(0..ids.len())];
            let k = rng.random_range(0..store.value(id).len());
            let an = analytic.of(store, id).map(|a| a.as_slice().unwrap()[k]).unwrap_or(0.0);
            (id, k, an)
        };
        // central-difference roundoff is ~1e-9 here; below 1e-4 a relative
        // comparison measures noise
        if an.abs() < 1e-4 {
            continue;
        }
        let h = 1e-5;
        let orig = seg.stores()[s].value(id).as_slice().unwrap()[k];
        seg.stores_mut()[s].value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
        let fp = loss(seg);
        seg.stores_mut()[s].value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
        let fm = loss(seg);
        seg.stores_mut()[s].value_mut(id).as_slice_mut().unwrap()[k] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (an - fd).abs() / an.abs().max(fd.abs());
        let name = seg.stores()[s].get(id).name.clone();
        ensure(rel <= 1e-3, || format!("store {s} {name}[{k}]: analytic {an} vs numeric {fd} (rel {rel:.2e})"))?;
        worst = worst.max(rel);
        per_store[s] += 1;
        done += 1;
    }
    ensure(per_store.iter().all(|&c| c > 0), || format!("samples per stage {per_store:?}"))?;
    Ok((done, worst))
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array4::from_shape_fn((2, 16, 16, 3), |_| rng.random_range(0.0..1.0));
    let y = Array4::from_shape_fn((2, 16, 16, 1), |(_, i, j, _)| ((i as f64 - 8.0).powi(2) + (j as f64 - 7.0).powi(2) < 20.0) as u8 as f64);
    let base = NetworkSpec::new(EncoderKind::Basic32).width(0.125);
    let mut single = SegmenterSpec::Single { generator: base }.build(3).map_err(|e| e.to_string())?;
    let (n1, w1) = gradcheck(&mut single, &x, &y, 24, 10)?;
    let mut cascade = SegmenterSpec::Cascade { cascade: CascadeSpec::from_base(base) }
        .build(3)
        .map_err(|e| e.to_string())?;
    let (n2, w2) = gradcheck(&mut cascade, &x, &y, 24, 11)?;
    Ok(format!("single {n1} params (max rel {w1:.1e}), cascade {n2} params across both stages (max rel {w2:.1e})"))
}

fn ellipse_dataset(n: usize, size: usize, seed: u64) -> Vec<SliceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..n)
        .map(|k| {
            let (cy, cx) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
            let (ay, ax) = (rng.random_range(0.12 * s..0.25 * s), rng.random_range(0.12 * s..0.25 * s));
            let t = Array2::from_shape_fn((size, size), |(i, j)| {
                let y = (i as f64 - cy) / ay;
                let x = (j as f64 - cx) / ax;
                (y * y + x * x <= 1.0) as u8
            });
            let mut img = Array3::zeros((size, size, 3));
            for ((i, j), &v) in t.indexed_iter() {
                let p = 0.3 + 0.4 * v as f64 + rng.random_range(-0.1..0.1);
                for c in 0..3 {
                    img[[i, j, c]] = p;
                }
            }
            SliceSample::new(img, t, k, "ellipses").unwrap()
        })
        .collect()
}

fn hard_dice(pred: &Array4<f64>, target: &Array4<f64>) -> f64 {
    let (mut inter, mut s, mut g) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let b = (p > 0.5) as u8 as f64;
        inter += b * t;
        s += b;
        g += t;
    }
    2.0 * inter / (s + g)
}

fn synthetic_overfit() -> Outcome {
    let t0 = Instant::now();
    let data = ellipse_dataset(16, 64, 7);
    let all: Vec<&SliceSample> = data.iter().collect();
    let (xa, ya) = stack_batch(&all).map_err(|e| e.to_string())?;
    let spec = CascadeSpec::from_base(NetworkSpec::new(EncoderKind::Vgg19).width(0.25));
    let seg = Segmenter::Cascade(build_cascade(spec, 1).map_err(|e| e.to_string())?);
    let cfg = AdversarialConfig {
        learning_rate: 1e-4,
        batch_size: 4,
        discriminator_width: 0.25,
        ..AdversarialConfig::ct()
    };
    let mut trainer = Trainer::new(seg, cfg).map_err(|e| e.to_string())?;
    let mut best: f64 = 0.0;
    for step in 0..300 {
        let i = (step * 4) % 16;
        let (x, y) = stack_batch(&all[i..i + 4]).map_err(|e| e.to_string())?;
        trainer.train_step(&x, &y).map_err(|e| e.to_string())?;
        if step % 10 == 9 {
            let d = hard_dice(&trainer.segmenter().forward(&xa).map_err(|e| e.to_string())?, &ya);
            best = best.max(d);
            if d >= 0.95 {
                let el = t0.elapsed();
                ensure(el < Duration::from_secs(600), || format!("reached dice {d:.4} but took {el:?}"))?;
                return Ok(format!("training dice {d:.4} after {} steps, {:.0}s", step + 1, el.as_secs_f64()));
            }
        }
    }
    Err(format!("best training dice {best:.4} after 300 steps"))
}

fn post_processing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut multi = 0;
    for trial in 0..100 {
        let dim = (rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=32));
        let density = rng.random_range(0.02..0.5);
        let m = random_mask(&mut rng, dim, density);
        let lv = LabelVolume::new(m.clone(), Spacing::isotropic(1.0).unwrap(), Organ::Spleen).unwrap();
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let got = largest_component(&lv, conn);
            let want = oracle_largest(&m, conn);
            ensure(*got.mask.voxels() == want, || format!("trial {trial} {conn:?} dims {dim:?}"))?;
            multi += (got.components > 1) as usize;
        }
    }
    Ok(format!("100 volumes x 2 connectivities exact ({multi} runs with several components)"))
}

fn augmentation() -> Outcome {
    let sample = &ellipse_dataset(1, 48, 9)[0];
    let params = AugmentParams {
        seed: 12,
        ..AugmentParams::default()
    };
    ensure(params.copies == 100, || format!("default copies {}", params.copies))?;
    let a = augment(sample, &params).map_err(|e| e.to_string())?;
    let b = augment(sample, &params).map_err(|e| e.to_string())?;
    ensure(a.len() == 100, || format!("{} copies", a.len()))?;
    let bits = |v: &[SliceSample]| -> Vec<u64> { v.iter().flat_map(|s| s.input.iter().map(|x| x.to_bits())).collect() };
    ensure(bits(&a) == bits(&b), || "same seed gave different inputs".into())?;
    ensure(a.iter().zip(&b).all(|(p, q)| p.target == q.target), || "same seed gave different targets".into())?;
    ensure(a.iter().all(|s| s.target.iter().all(|&v| v <= 1)), || "non-binary target".into())?;
    let c = augment(sample, &AugmentParams { seed: 13, ..params }).map_err(|e| e.to_string())?;
    ensure(bits(&a) != bits(&c), || "different seeds gave identical copies".into())?;
    Ok("100 copies, byte-identical under a fixed seed, binary targets".into())
}

fn channel_replication() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let plane = Array2::from_shape_fn((7, 5), |_| rng.random_range(-100.0..100.0));
    let other = Array2::from_shape_fn((7, 5), |_| rng.random_range(-100.0..100.0));
    for m in [Modality::Ct, Modality::T2Spir] {
        let r = replicate_channels(&plane, m, None).map_err(|e| e.to_string())?;
        ensure(r.dim() == (7, 5, 3), || format!("{m:?} shape {:?}", r.dim()))?;
        for c in 0..3 {
            ensure(r.index_axis(Axis(2), c) == plane, || format!("{m:?} channel {c}"))?;
        }
        ensure(replicate_channels(&plane, m, Some(&other)).is_err(), || format!("{m:?} accepted a companion"))?;
    }
    let r = replicate_channels(&plane, Modality::T1In, Some(&other)).map_err(|e| e.to_string())?;
    ensure(r.index_axis(Axis(2), 0) == plane, || "T1 channel 0 is not in-phase".into())?;
    ensure(r.index_axis(Axis(2), 1) == other, || "T1 channel 1 is not opposed-phase".into())?;
    ensure(r.index_axis(Axis(2), 2) == plane, || "T1 channel 2 is not in-phase".into())?;
    ensure(replicate_channels(&plane, Modality::T1In, None).is_err(), || "T1 without companion".into())?;
    ensure(replicate_channels(&plane, Modality::T1Out, Some(&other)).is_err(), || "T1 out as primary".into())?;
    Ok("CT/T2 (p,p,p), T1 (in,out,in), invalid pairings rejected".into())
}

type Criterion = (&'static str, fn() -> Outcome);

// Custom harness so every criterion line is printed even when all pass.
fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracles),
        ("score mapping table", score_mapping),
        ("published CT-liver ranking", published_ranking),
        ("architecture conformance", architecture),
        ("loss unit values", loss_units),
        ("gradient checks", gradient_checks),
        ("synthetic overfit", synthetic_overfit),
        ("largest component", post_processing),
        ("augmentation", augmentation),
        ("channel replication", channel_replication),
    ];
    // e.g. ACCEPTANCE_ONLY=6,7 to rerun a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            println!("criterion {:>2} {name}: SKIP", i + 1);
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(e) => {
                println!("criterion {:>2} {name}: FAIL ({e}) [{secs:.1}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {ran} of {} criteria run, all passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
