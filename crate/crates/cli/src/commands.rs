use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use cooc_core::bench::run_bench;
use cooc_core::cooc::{
    channel_cooc_vector, cooc_conv, cooc_correlation_matrix, load_filter, make_filter, save_filter,
    CoocFilter,
};
use cooc_core::eval::{average_precision, load_groundtruth};
use cooc_core::pipeline::{Aggregator, PipelineConfig, Threshold};
use cooc_core::pooling::spatial_cooc_weights;
use cooc_core::postproc::{
    apply_whitening, fit_whitening, load_whitening, save_whitening, WhiteningModel,
};
use cooc_core::retrieval::{
    alpha_qe, average_qe, build_index, load_index, query, save_index, DescriptorIndex, RankedList,
};
use cooc_core::tensor::{l2norm, load_tensor};
use cooc_core::trainer::{train as train_filter, PairSample, TrainConfig};
use cooc_core::{ActivationTensor, Descriptor, Shape};
use rayon::prelude::*;

use crate::manifest::{manifest_path, RunManifest};
use crate::store::{self, finish_descriptors, load_descriptor_dir, save_descriptor, stem};
use crate::{
    AggregateArgs, BenchArgs, CoocOpts, EvalArgs, IndexBuildArgs, IndexQueryArgs, InspectArgs,
    QeOpts, TrainArgs, WhitenApplyArgs, WhitenFitArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_opt_filter(path: Option<&PathBuf>) -> Result<Option<CoocFilter>> {
    path.map(|p| load_filter(p).with_context(|| format!("loading filter {}", p.display())))
        .transpose()
}

fn load_opt_whitening(path: Option<&PathBuf>) -> Result<Option<WhiteningModel>> {
    path.map(|p| load_whitening(p).with_context(|| format!("loading whitening {}", p.display())))
        .transpose()
}

fn threshold(opts: &CoocOpts) -> Threshold {
    opts.thr.map_or(Threshold::Mean, Threshold::Fixed)
}

/// Aggregators keyed by tensor depth, built on first use.
struct AggregatorCache {
    cfg: PipelineConfig,
    built: Mutex<HashMap<usize, Arc<Aggregator>>>,
}

impl AggregatorCache {
    fn get(&self, depth: usize) -> Result<Arc<Aggregator>> {
        let mut built = self.built.lock().expect("no panics while locked");
        if let Some(a) = built.get(&depth) {
            return Ok(a.clone());
        }
        let a = Arc::new(Aggregator::new(self.cfg.clone(), depth)?);
        built.insert(depth, a.clone());
        Ok(a)
    }
}

pub fn aggregate(args: &AggregateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("aggregate", args)?;
    let paths = store::list_tensors(&args.input)?;
    if paths.is_empty() {
        bail!("no .{} files in {}", store::EXT, args.input.display());
    }
    create_dir(&args.output)?;
    let cache = AggregatorCache {
        cfg: PipelineConfig {
            pool: args.pool,
            mask: args.mask,
            radius: args.cooc.radius,
            diag: args.cooc.diag,
            threshold: threshold(&args.cooc),
            power_a: args.cooc.a,
            power_b: args.cooc.b,
            eps: args.cooc.eps,
            sketch_dim: args.sketch_dim,
            seed: args.seed,
            signed_sqrt: args.signed_sqrt,
            filter: load_opt_filter(args.cooc.filter.as_ref())?,
        },
        built: Mutex::new(HashMap::new()),
    };
    let describe = |path: &PathBuf| -> Result<PathBuf> {
        let t = load_tensor(path)?;
        let d = cache.get(t.shape().d)?.unnormalized(&t)?;
        let out = args
            .output
            .join(path.file_name().expect("listed files have names"));
        save_descriptor(&d, &out)?;
        Ok(out)
    };
    let results: Vec<(PathBuf, Result<PathBuf>)> = manifest.time("aggregate", || {
        paths.par_iter().map(|p| (p.clone(), describe(p))).collect()
    });

    manifest.inputs.push(args.input.clone());
    for (path, result) in results {
        match result {
            Ok(out) => manifest.outputs.push(out),
            Err(e) => {
                log::error!("{}: {e:#}", path.display());
                manifest.failures.push(format!("{}: {e:#}", path.display()));
            }
        }
    }
    let (done, failed) = (manifest.outputs.len(), manifest.failures.len());
    manifest.write(&args.output.join("manifest.json"))?;
    println!("aggregated {done} tensors into {}", args.output.display());
    if failed > 0 {
        bail!("{failed} of {} tensors failed", done + failed);
    }
    Ok(())
}

pub fn whiten_fit(args: &WhitenFitArgs) -> Result<()> {
    let mut manifest = RunManifest::new("whiten fit", args)?;
    let descs: Vec<Descriptor> = load_descriptor_dir(&args.input)?
        .into_iter()
        .map(|(_, d)| l2norm(&d))
        .collect();
    let model = manifest.time("fit", || fit_whitening(&descs, args.dim))?;
    save_whitening(&model, &args.output)?;
    manifest.inputs.push(args.input.clone());
    manifest.outputs.push(args.output.clone());
    manifest.write(&manifest_path(&args.output))?;
    println!(
        "fitted {} -> {} whitening on {} descriptors",
        model.input_dim(),
        model.output_dim(),
        descs.len()
    );
    Ok(())
}

pub fn whiten_apply(args: &WhitenApplyArgs) -> Result<()> {
    let mut manifest = RunManifest::new("whiten apply", args)?;
    let model = load_whitening(&args.model)
        .with_context(|| format!("loading whitening {}", args.model.display()))?;
    create_dir(&args.output)?;
    for path in store::list_tensors(&args.input)? {
        let d =
            store::load_descriptor(&path).with_context(|| format!("loading {}", path.display()))?;
        let w = apply_whitening(&model, &l2norm(&d))
            .with_context(|| format!("whitening {}", path.display()))?;
        let out = args
            .output
            .join(path.file_name().expect("listed files have names"));
        save_descriptor(&w, &out)?;
        manifest.outputs.push(out);
    }
    manifest
        .inputs
        .extend([args.model.clone(), args.input.clone()]);
    println!("whitened {} descriptors", manifest.outputs.len());
    manifest.write(&args.output.join("manifest.json"))
}

pub fn index_build(args: &IndexBuildArgs) -> Result<()> {
    let mut manifest = RunManifest::new("index build", args)?;
    let whitening = load_opt_whitening(args.whiten.as_ref())?;
    let raw = load_descriptor_dir(&args.input)?;
    let finished = finish_descriptors(raw, whitening.as_ref(), args.ms)?;
    let idx = build_index(finished)?;
    save_index(&idx, &args.output)?;
    manifest.inputs.push(args.input.clone());
    manifest.inputs.extend(args.whiten.clone());
    manifest.outputs.push(args.output.clone());
    manifest.write(&manifest_path(&args.output))?;
    println!("indexed {} descriptors of dim {}", idx.len(), idx.dim());
    Ok(())
}

/// Ranks the index for `q`, dropping `exclude`, with optional expansion.
fn search(
    idx: &DescriptorIndex,
    q: &Descriptor,
    qe: &QeOpts,
    exclude: Option<&str>,
) -> Result<RankedList> {
    let drop = |r: RankedList| match exclude {
        Some(id) => r.without(id),
        None => r,
    };
    let first = drop(query(idx, q)?);
    let expanded = match (qe.aqe, qe.alphaqe) {
        (Some(n), _) => average_qe(idx, q, &first, n)?,
        (None, Some(a)) => alpha_qe(idx, q, &first, a.n, a.alpha)?,
        (None, None) => return Ok(first),
    };
    Ok(drop(query(idx, &expanded)?))
}

pub fn index_query(args: &IndexQueryArgs) -> Result<()> {
    let mut manifest = RunManifest::new("index query", args)?;
    let idx = load_index(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;
    let whitening = load_opt_whitening(args.whiten.as_ref())?;
    let raw = args
        .queries
        .iter()
        .map(|p| {
            let d =
                store::load_descriptor(p).with_context(|| format!("loading {}", p.display()))?;
            Ok((stem(p), d))
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = finish_descriptors(raw, whitening.as_ref(), args.ms)?;
    let mut csv = String::from("query,rank,id,distance\n");
    for (id, q) in &queries {
        let ranked = search(&idx, q, &args.qe, None)?;
        for (rank, e) in ranked.entries.iter().take(args.top).enumerate() {
            writeln!(csv, "{id},{},{},{:.6}", rank + 1, e.id, e.distance)?;
        }
    }
    write_file(&args.out, csv)?;
    manifest.inputs.push(args.index.clone());
    manifest.inputs.extend(args.queries.iter().cloned());
    manifest.outputs.push(args.out.clone());
    manifest.write(&manifest_path(&args.out))?;
    println!("ranked {} queries", queries.len());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval", args)?;
    let idx = load_index(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;
    let gts = load_groundtruth(&args.groundtruth)
        .with_context(|| format!("loading ground truth {}", args.groundtruth.display()))?;
    if gts.is_empty() {
        bail!("no *_query.txt files in {}", args.groundtruth.display());
    }
    let query_descs: Option<BTreeMap<String, Descriptor>> = match &args.queries {
        Some(dir) => {
            let whitening = load_opt_whitening(args.whiten.as_ref())?;
            let raw = load_descriptor_dir(dir)?;
            Some(
                finish_descriptors(raw, whitening.as_ref(), args.ms)?
                    .into_iter()
                    .collect(),
            )
        }
        None => {
            if args.whiten.is_some() || args.ms {
                log::warn!(
                    "--whiten and --ms only apply to --queries; index entries are used as built"
                );
            }
            None
        }
    };
    let lookup = |image: &str| -> Result<Descriptor> {
        let found = match &query_descs {
            Some(map) => map.get(image).cloned(),
            None => idx.get(image),
        };
        found.with_context(|| format!("no descriptor for query image {image}"))
    };

    let scored: Vec<(String, Option<f64>)> = manifest.time("rank", || {
        gts.par_iter()
            .map(|gt| {
                let q = lookup(&gt.image)?;
                let ranked = search(&idx, &q, &args.qe, Some(&gt.image))?;
                Ok((gt.name.clone(), average_precision(&ranked, gt)))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let aps: Vec<f64> = scored.iter().filter_map(|(_, ap)| *ap).collect();
    if aps.is_empty() {
        bail!("no query has positives");
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    let mut csv = String::from("query,ap\n");
    for (name, ap) in &scored {
        match ap {
            Some(ap) => writeln!(csv, "{name},{ap:.6}")?,
            None => writeln!(csv, "{name},")?,
        }
    }
    writeln!(csv, "mAP,{map:.6}")?;
    create_dir(&args.output)?;
    let out = args.output.join("ap.csv");
    write_file(&out, csv)?;
    manifest
        .inputs
        .extend([args.index.clone(), args.groundtruth.clone()]);
    manifest.inputs.extend(args.queries.clone());
    manifest.outputs.push(out);
    manifest.write(&args.output.join("manifest.json"))?;
    println!("mAP {map:.4} over {} queries", aps.len());
    Ok(())
}

fn parse_shape(s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad shape {s:?}, expected MxNxD"))?;
    match dims.as_slice() {
        &[m, n, d] if m > 0 && n > 0 && d > 0 => Ok(Shape::new(m, n, d)),
        _ => bail!("bad shape {s:?}, expected MxNxD with positive dims"),
    }
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut manifest = RunManifest::new("bench", args)?;
    let shapes = args
        .shapes
        .split(',')
        .map(parse_shape)
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out)?;
    let mut csv = String::from("shape,radius,reps,conv_ms,baseline_ms,speedup\n");
    println!(
        "{:>14} {:>12} {:>14} {:>9}",
        "shape", "conv ms", "baseline ms", "speedup"
    );
    for shape in shapes {
        let r = run_bench(shape, args.radius, args.reps, args.seed)?;
        let label = format!("{}x{}x{}", shape.m, shape.n, shape.d);
        println!(
            "{label:>14} {:>12.3} {:>14.3} {:>8.1}x",
            r.conv_ms,
            r.baseline_ms,
            r.speedup()
        );
        writeln!(
            csv,
            "{label},{},{},{:.6},{:.6},{:.3}",
            args.radius,
            args.reps,
            r.conv_ms,
            r.baseline_ms,
            r.speedup()
        )?;
        manifest
            .timings_ms
            .insert(label, r.total.as_secs_f64() * 1e3);
    }
    let out = args.out.join("bench.csv");
    write_file(&out, csv)?;
    manifest.outputs.push(out);
    manifest.write(&args.out.join("manifest.json"))
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let mut manifest = RunManifest::new("inspect", args)?;
    create_dir(&args.out)?;
    let trained = load_opt_filter(args.cooc.filter.as_ref())?;
    let thr = threshold(&args.cooc);
    let mut filters: HashMap<usize, CoocFilter> = HashMap::new();
    let mut stems = Vec::new();
    let mut vectors = Vec::new();
    for path in &args.tensors {
        let t: ActivationTensor =
            load_tensor(path).with_context(|| format!("loading {}", path.display()))?;
        let d = t.shape().d;
        let filter = match &trained {
            Some(f) => f.clone(),
            None => match filters.get(&d) {
                Some(f) => f.clone(),
                None => {
                    let f = make_filter(d, args.cooc.radius, args.cooc.diag)?;
                    filters.insert(d, f.clone());
                    f
                }
            },
        };
        let c = cooc_conv(&t, &filter, thr.resolve(&t))?;
        let alpha = spatial_cooc_weights(&c, args.cooc.a, args.cooc.b)?;
        let name = stem(path);
        let csv = args.out.join(format!("{name}_alpha.csv"));
        let pgm = args.out.join(format!("{name}_alpha.pgm"));
        write_file(&csv, alpha.to_csv())?;
        write_file(&pgm, alpha.to_pgm())?;
        manifest.outputs.extend([csv, pgm]);
        vectors.push(channel_cooc_vector(&c));
        stems.push(name);
        manifest.inputs.push(path.clone());
    }
    if vectors.len() >= 2 {
        let corr = cooc_correlation_matrix(&vectors)?;
        let mut csv = format!(",{}\n", stems.join(","));
        for (i, name) in stems.iter().enumerate() {
            let row: Vec<String> = (0..stems.len())
                .map(|j| format!("{:.6}", corr[(i, j)]))
                .collect();
            writeln!(csv, "{name},{}", row.join(","))?;
        }
        let out = args.out.join("cv_correlation.csv");
        write_file(&out, csv)?;
        manifest.outputs.push(out);
    }
    println!(
        "inspected {} tensors into {}",
        stems.len(),
        args.out.display()
    );
    manifest.write(&args.out.join("manifest.json"))
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads `path_a<TAB>path_b<TAB>label` lines; relative paths resolve
/// against the list's directory.
fn read_pairs(list: &Path) -> Result<Vec<PairSample>> {
    let text = fs::read_to_string(list)
        .with_context(|| format!("reading pair list {}", list.display()))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let mut cache: HashMap<PathBuf, ActivationTensor> = HashMap::new();
    let mut load = |p: &str| -> Result<ActivationTensor> {
        let path = base.join(p);
        if let Some(t) = cache.get(&path) {
            return Ok(t.clone());
        }
        let t = load_tensor(&path).with_context(|| format!("loading {}", path.display()))?;
        cache.insert(path, t.clone());
        Ok(t)
    };
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, label] = fields.as_slice() else {
            bail!(
                "{}:{}: expected 3 tab-separated fields",
                list.display(),
                lineno + 1
            );
        };
        let similar = parse_label(label)
            .with_context(|| format!("{}:{}: bad label {label:?}", list.display(), lineno + 1))?;
        pairs.push(PairSample::new(load(a)?, load(b)?, similar)?);
    }
    if pairs.is_empty() {
        bail!("{} lists no pairs", list.display());
    }
    Ok(pairs)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train", args)?;
    let pairs = read_pairs(&args.pairs)?;
    let cfg = TrainConfig {
        margin: args.tau,
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        val_fraction: args.val_fraction,
        radius: args.radius,
        diag_init: args.diag,
        sketch_dim: args.sketch_dim,
        sketch_seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = manifest.time("train", || train_filter(&pairs, &cfg))?;
    save_filter(&outcome.best, &args.output)?;

    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &outcome.history {
        let val = e.val.map(|v| format!("{v:.8}")).unwrap_or_default();
        writeln!(csv, "{},{:.8},{val}", e.epoch, e.train)?;
    }
    let loss_path = args.loss_csv.clone().unwrap_or_else(|| {
        let mut name = args.output.file_stem().unwrap_or_default().to_os_string();
        name.push("_loss.csv");
        args.output.with_file_name(name)
    });
    write_file(&loss_path, csv)?;

    manifest.inputs.push(args.pairs.clone());
    manifest.outputs.extend([args.output.clone(), loss_path]);
    manifest.write(&manifest_path(&args.output))?;
    println!(
        "trained on {} pairs; best epoch {} of {}",
        pairs.len(),
        outcome.best_epoch,
        args.epochs
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("32x24x512").unwrap(), Shape::new(32, 24, 512));
        assert!(parse_shape("32x24").is_err());
        assert!(parse_shape("0x1x1").is_err());
        assert!(parse_shape("ax1x1").is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(parse_label("1"), Some(true));
        assert_eq!(parse_label("0\r"), Some(false));
        assert_eq!(parse_label("maybe"), None);
    }
}
