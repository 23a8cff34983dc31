//! End-to-end acceptance checks. Prints one `[PASS]` or `[FAIL]` line per
//! criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cooc_core::bench::run_bench;
use cooc_core::cooc::{
    channel_cooc_vector, cooc_bruteforce, cooc_conv, cooc_correlation_matrix, make_filter,
    ChannelCoocVector, CoocFilter,
};
use cooc_core::eval::{average_precision, mean_ap, QueryGroundTruth};
use cooc_core::pipeline::{Aggregator, PipelineConfig, PoolMode};
use cooc_core::pooling::{
    bilinear_pool, channel_cooc_weights, compact_bilinear_pool, spatial_cooc_weights, DEFAULT_EPS,
};
use cooc_core::retrieval::{alpha_qe, average_qe, build_index, query, DescriptorIndex, RankedList};
use cooc_core::sketch::SketchParams;
use cooc_core::synthetic::class_dataset;
use cooc_core::tensor::mean_activation;
use cooc_core::trainer::{
    contrastive_loss, forward_descriptor, grad_filter, train, PairSample, TrainConfig,
};
use cooc_core::{ActivationTensor, Descriptor, Shape, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn tensor(m: usize, n: usize, d: usize, v: &[f32]) -> ActivationTensor {
    Tensor3::from_vec(Shape::new(m, n, d), v.to_vec()).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> ActivationTensor {
    // Sparse non-negative activations with a per-tensor gain, like
    // post-ReLU feature maps of different images.
    let gain = rng.random_range(0.25f32..4.0);
    let data = (0..shape.len())
        .map(|_| {
            if rng.random_bool(0.4) {
                0.0
            } else {
                gain * rng.random_range(0.0f32..1.0)
            }
        })
        .collect();
    Tensor3::from_vec(shape, data).unwrap()
}

/// Agreement to `places` decimals in the usual `1.5 * 10^-places` sense,
/// which tolerates a reference value rounded in its last digit.
fn close(a: f64, b: f64, places: i32) -> bool {
    (a - b).abs() < 1.5 * 10f64.powi(-places)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let radii = [0usize, 1, 2, 4];
    let mut worst = 0.0f64;
    let cases = 240;
    for case in 0..cases {
        let shape = Shape::new(
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(2..=16),
        );
        let r = radii[case % radii.len()];
        let t = random_tensor(&mut rng, shape);
        let thr = mean_activation(&t);
        let filter = make_filter(shape.d, r, 0.0).map_err(|e| e.to_string())?;
        let fast = cooc_conv(&t, &filter, thr).map_err(|e| e.to_string())?;
        let oracle = cooc_bruteforce(&t, r, thr).map_err(|e| e.to_string())?;
        for (&a, &b) in fast.data().iter().zip(oracle.data()) {
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                continue;
            }
            let rel = (a - b).abs() / scale;
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!("case {case} {shape} r={r}: {a} vs {b}"));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{cases} tensors, max rel err {worst:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn worked_fixtures() -> Outcome {
    let single = cooc_conv(
        &tensor(1, 1, 3, &[5.0, 4.0, 0.0]),
        &make_filter(3, 0, 0.0).unwrap(),
        3.0,
    )
    .map_err(|e| e.to_string())?;
    let expect = [2.0, 2.5, 0.0];
    if !single
        .data()
        .iter()
        .zip(&expect)
        .all(|(&a, &b)| close(a, b, 4))
    {
        return Err(format!("single location: {:?}", single.data()));
    }

    let t = tensor(2, 1, 2, &[10.0, 0.0, 0.0, 6.0]);
    let c = cooc_conv(&t, &make_filter(2, 1, 0.0).unwrap(), 4.0).map_err(|e| e.to_string())?;
    let v = channel_cooc_vector(&c);
    if !(close(v.values()[0], 6.0, 4) && close(v.values()[1], 10.0, 4)) {
        return Err(format!("channel vector: {:?}", v.values()));
    }

    let alpha = spatial_cooc_weights(&c, 2.0, 2.0).map_err(|e| e.to_string())?;
    let a = alpha.values();
    if !(close(a[0], 0.7173, 4) && close(a[1], 0.9261, 4)) {
        return Err(format!("alpha: {a:?}"));
    }

    let beta = channel_cooc_weights(&ChannelCoocVector::new(vec![6.0, 10.0]), DEFAULT_EPS)
        .map_err(|e| e.to_string())?;
    let b = beta.values();
    if !(close(b[0], 0.9808, 4) && close(b[1], 0.4700, 4)) {
        return Err(format!("beta: {b:?}"));
    }

    let gt = QueryGroundTruth::new("q", ["a".to_string(), "b".to_string()], [])
        .map_err(|e| e.to_string())?;
    let ranked = RankedList {
        entries: ["a", "x", "b", "y"]
            .iter()
            .enumerate()
            .map(|(i, id)| cooc_core::retrieval::RankedEntry {
                id: id.to_string(),
                distance: i as f64,
                position: i,
            })
            .collect(),
    };
    let ap = average_precision(&ranked, &gt).ok_or("no positives")?;
    if !close(ap, 0.91667, 4) {
        return Err(format!("AP {ap}"));
    }
    Ok(format!(
        "C=[2, 2.5, 0], C_V={{6, 10}}, alpha=[{:.4}, {:.4}], beta=[{:.4}, {:.4}], AP={ap:.5}",
        a[0], a[1], b[0], b[1]
    ))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn sketch_fidelity() -> Outcome {
    const DEPTH: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = Shape::new(4, 4, DEPTH);
    let filter = make_filter(DEPTH, 1, 0.0).unwrap();
    let inputs: Vec<(ActivationTensor, _)> = (0..400)
        .map(|_| {
            let t = random_tensor(&mut rng, shape);
            let c = cooc_conv(&t, &filter, mean_activation(&t)).unwrap();
            (t, c)
        })
        .collect();
    let exact_b: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(t, c)| bilinear_pool(t, c).unwrap().iter().copied().collect())
        .collect();
    let exact: Vec<f64> = (0..200)
        .map(|i| dot(&exact_b[2 * i], &exact_b[2 * i + 1]))
        .collect();

    let sketched = |dim: usize, seed: u64| -> Vec<f64> {
        let p = SketchParams::generate(DEPTH, dim, seed).unwrap();
        let psi: Vec<Descriptor> = inputs
            .iter()
            .map(|(t, c)| compact_bilinear_pool(t, c, &p, None).unwrap())
            .collect();
        (0..200).map(|i| psi[2 * i].dot(&psi[2 * i + 1])).collect()
    };

    let r = pearson(&sketched(512, 0), &exact);
    if r.is_nan() || r <= 0.95 {
        return Err(format!("Pearson {r:.4} at d=512"));
    }

    let mut errors = Vec::new();
    for dim in [64usize, 512, 4096] {
        let mut total = 0.0;
        let seeds = 5u64;
        for seed in 0..seeds {
            let approx = sketched(dim, seed);
            total += approx
                .iter()
                .zip(&exact)
                .map(|(a, e)| (a - e).abs() / e.abs())
                .sum::<f64>()
                / exact.len() as f64;
        }
        errors.push(total / seeds as f64);
    }
    if !(errors[0] > errors[1] && errors[1] > errors[2]) {
        return Err(format!("mean rel err not decreasing: {errors:?}"));
    }
    Ok(format!(
        "Pearson {r:.4} at d=512; mean rel err d=64/512/4096: {:.4}/{:.4}/{:.4}",
        errors[0], errors[1], errors[2]
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pair_loss(pair: &PairSample, f: &CoocFilter, p: &SketchParams, tau: f64) -> f64 {
    let fa = forward_descriptor(&pair.a, f, p).unwrap();
    let fb = forward_descriptor(&pair.b, f, p).unwrap();
    contrastive_loss(&fa, &fb, pair.similar, tau).unwrap()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let instances = 24;
    for inst in 0..instances {
        let shape = Shape::new(
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(2..=4),
        );
        let radius = rng.random_range(0..=2);
        let dim = [16usize, 32, 64][inst % 3];
        let similar = inst % 2 == 0;
        // Margin above the largest possible distance keeps the hinge active.
        let tau = 2.5;
        let p = SketchParams::generate(shape.d, dim, inst as u64).unwrap();
        let mut f = make_filter(shape.d, radius, 0.0).unwrap();
        for w in f.weights_mut() {
            *w = rng.random_range(0.2..1.5);
        }
        let pair = PairSample::new(
            random_tensor(&mut rng, shape),
            random_tensor(&mut rng, shape),
            similar,
        )
        .unwrap();
        let g = grad_filter(&pair, &f, &p, tau).map_err(|e| e.to_string())?;
        if g.degenerate {
            continue;
        }
        let scale = g.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..f.len() {
            let mut plus = f.clone();
            plus.weights_mut()[i] += h;
            let mut minus = f.clone();
            minus.weights_mut()[i] -= h;
            let fd =
                (pair_loss(&pair, &plus, &p, tau) - pair_loss(&pair, &minus, &p, tau)) / (2.0 * h);
            let an = g.grad[i];
            let err = (an - fd).abs();
            // Entries many orders below the largest, or below the rounding
            // floor of the difference quotient, are compared absolutely.
            let floor = 1e-6 * scale + 1e-9;
            if an.abs().max(fd.abs()) < floor {
                if err > floor {
                    return Err(format!("instance {inst} entry {i}: {an} vs {fd}"));
                }
                continue;
            }
            let rel = err / an.abs().max(fd.abs());
            worst = worst.max(rel);
            if rel > 1e-3 {
                return Err(format!(
                    "instance {inst} entry {i}: {an} vs {fd} (rel {rel:.2e})"
                ));
            }
        }
        checked += 1;
    }
    if checked < 20 {
        return Err(format!("only {checked} non-degenerate instances"));
    }
    Ok(format!("{checked} instances, max rel err {worst:.2e}"))
}

/// Ranks every held-out descriptor against the others and scores it with
/// same-class positives.
fn holdout_map(descs: &[Descriptor], labels: &[usize]) -> f64 {
    let entries: Vec<(String, Descriptor)> = descs
        .iter()
        .enumerate()
        .map(|(i, d)| (format!("img{i:03}"), d.clone()))
        .collect();
    let idx = build_index(entries).unwrap();
    let queries = class_queries(&idx, labels);
    let runs: Vec<(RankedList, QueryGroundTruth)> = queries
        .into_iter()
        .map(|(id, gt)| {
            let q = idx.get(&id).unwrap();
            (query(&idx, &q).unwrap().without(&id), gt)
        })
        .collect();
    mean_ap(&runs).unwrap()
}

fn class_queries(idx: &DescriptorIndex, labels: &[usize]) -> Vec<(String, QueryGroundTruth)> {
    let ids = idx.ids();
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let positives = ids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && labels[j] == labels[i])
                .map(|(_, other)| other.clone());
            (
                id.clone(),
                QueryGroundTruth::new(id.clone(), positives, []).unwrap(),
            )
        })
        .collect()
}

fn training_efficacy() -> Outcome {
    let shape = Shape::new(6, 6, 8);
    let per_class = 16;
    let train_n = 10;
    let data = class_dataset(41, 2, per_class, shape, 0.6);
    let (mut train_t, mut held_t, mut held_l) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (t, &l)) in data.tensors.iter().zip(&data.labels).enumerate() {
        if i % per_class < train_n {
            train_t.push((t.clone(), l));
        } else {
            held_t.push(t.clone());
            held_l.push(l);
        }
    }
    let mut pairs = Vec::new();
    for i in 0..train_t.len() {
        for j in i + 1..train_t.len() {
            let (a, la) = &train_t[i];
            let (b, lb) = &train_t[j];
            pairs.push(PairSample::new(a.clone(), b.clone(), la == lb).unwrap());
        }
    }
    let cfg = TrainConfig {
        epochs: 10,
        learning_rate: 0.02,
        radius: 1,
        sketch_dim: 256,
        ..TrainConfig::default()
    };
    let out = train(&pairs, &cfg).map_err(|e| e.to_string())?;
    let losses: Vec<f64> = out.history.iter().map(|e| e.train).collect();
    if !losses.windows(2).all(|w| w[1] < w[0]) {
        return Err(format!("training loss not strictly decreasing: {losses:?}"));
    }

    let untrained = make_filter(shape.d, cfg.radius, cfg.diag_init).unwrap();
    let describe = |f: &CoocFilter| -> Vec<Descriptor> {
        held_t
            .iter()
            .map(|t| forward_descriptor(t, f, &out.sketch).unwrap())
            .collect()
    };
    let before = holdout_map(&describe(&untrained), &held_l);
    let after = holdout_map(&describe(&out.last), &held_l);
    if after < before {
        return Err(format!("held-out mAP dropped {before:.4} -> {after:.4}"));
    }
    Ok(format!(
        "train loss {:.4} -> {:.4} over 10 epochs, held-out mAP {before:.4} -> {after:.4}",
        losses[0],
        losses[losses.len() - 1]
    ))
}

fn class_correlation() -> Outcome {
    let classes = 5;
    let per_class = 6;
    let shape = Shape::new(12, 16, 64);
    let data = class_dataset(51, classes, per_class, shape, 0.3);
    let filter = make_filter(shape.d, 4, 0.0).unwrap();
    let vectors: Vec<ChannelCoocVector> = data
        .tensors
        .iter()
        .map(|t| channel_cooc_vector(&cooc_conv(t, &filter, mean_activation(t)).unwrap()))
        .collect();
    let corr = cooc_correlation_matrix(&vectors).map_err(|e| e.to_string())?;
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            if i == j {
                continue;
            }
            if data.labels[i] == data.labels[j] {
                within += corr[(i, j)];
                nw += 1;
            } else {
                cross += corr[(i, j)];
                nc += 1;
            }
        }
    }
    let (within, cross) = (within / nw as f64, cross / nc as f64);
    let gap = within - cross;
    if gap < 0.2 {
        return Err(format!(
            "within {within:.4}, cross {cross:.4}, gap {gap:.4}"
        ));
    }
    Ok(format!(
        "within {within:.4}, cross {cross:.4}, gap {gap:.4}"
    ))
}

fn performance() -> Outcome {
    let report = run_bench(Shape::new(32, 24, 512), 4, 3, 0).map_err(|e| e.to_string())?;
    let speedup = report.speedup();
    let detail = format!(
        "conv {:.3} ms, baseline {:.1} ms, speedup {speedup:.0}x, total {:.1}s",
        report.conv_ms,
        report.baseline_ms,
        report.total.as_secs_f64()
    );
    if speedup < 20.0 || report.total >= Duration::from_secs(300) {
        return Err(detail);
    }
    Ok(detail)
}

fn qe_sanity() -> Outcome {
    let shape = Shape::new(6, 6, 16);
    let per_class = 6;
    let data = class_dataset(61, 4, per_class, shape, 0.05);
    let agg = Aggregator::new(
        PipelineConfig {
            pool: PoolMode::ChcoSct,
            radius: 2,
            ..PipelineConfig::default()
        },
        shape.d,
    )
    .map_err(|e| e.to_string())?;
    let entries: Vec<(String, Descriptor)> = data
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("img{i:03}"), agg.describe(t).unwrap()))
        .collect();
    let idx = build_index(entries).map_err(|e| e.to_string())?;
    let queries = class_queries(&idx, &data.labels);
    let n = per_class - 1;

    let mut base = Vec::new();
    let mut aqe = Vec::new();
    let mut alpha = Vec::new();
    for (id, gt) in &queries {
        let q = idx.get(id).unwrap();
        let first = query(&idx, &q).unwrap().without(id);
        let run = |expanded: Descriptor| query(&idx, &expanded).unwrap().without(id);
        let by_aqe = run(average_qe(&idx, &q, &first, n).unwrap());
        let by_alpha = run(alpha_qe(&idx, &q, &first, n, 3.0).unwrap());
        let by_alpha0 = run(alpha_qe(&idx, &q, &first, n, 0.0).unwrap());
        if by_alpha0.ids().ne(by_aqe.ids()) {
            return Err(format!(
                "query {id}: alpha=0 ranking differs from average expansion"
            ));
        }
        base.push((first, gt.clone()));
        aqe.push((by_aqe, gt.clone()));
        alpha.push((by_alpha, gt.clone()));
    }
    let (m0, m1, m2) = (
        mean_ap(&base).unwrap(),
        mean_ap(&aqe).unwrap(),
        mean_ap(&alpha).unwrap(),
    );
    if m1 < m0 || m2 < m0 {
        return Err(format!("mAP {m0:.4}, AQE {m1:.4}, alpha QE {m2:.4}"));
    }
    Ok(format!(
        "mAP {m0:.4}, AQE {m1:.4}, alpha QE {m2:.4}, alpha=0 rankings identical to AQE"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("worked fixtures", worked_fixtures),
        ("sketch fidelity", sketch_fidelity),
        ("gradient correctness", gradient_correctness),
        ("training efficacy", training_efficacy),
        ("class correlation gap", class_correlation),
        ("performance", performance),
        ("query expansion sanity", qe_sanity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
