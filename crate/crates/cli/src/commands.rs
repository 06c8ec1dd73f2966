use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;
use sqsglu::bench::{bench_suite, default_grid, write_bench_csv, write_bench_json, BenchRow};
use sqsglu::checkpoint::{load_from_path, save_to_path};
use sqsglu::data::{Dataset, DatasetName, Split};
use sqsglu::gates::{sample_gate_curve, write_curve_csv, GateKind, GateSpec};
use sqsglu::interp::{
    aligned_cosine_similarity, attribution, decompose_all, eigen_spectrum, export_eigenvector_image,
    quadratic_form_logit, EigenBasis, EigenSolver, InteractionMatrix,
};
use sqsglu::train::{append_run_log, summarize, write_metrics_csv, RunLogEntry};
use sqsglu::train::{argmax, train_run, MetricsRecord, TrainError};
use sqsglu::{init_model, Error, GluMlpModel, Result, Tensor};

use crate::config::{resolve, Profile, Resolved};
use crate::manifest::RunManifest;
use crate::{Command, Failure};

type CmdResult = std::result::Result<(), Failure>;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Train { args, out } => {
            let r = resolve(&args, Profile::Perf)?;
            with_manifest("train", &out, &r, r.seeds.clone(), |m| train_cmd(&r, m))
        }
        Command::Eigen {
            ckpt,
            class,
            top,
            jacobi,
            out,
        } => {
            let cfg = json!({"ckpt": ckpt, "class": class, "top": top, "jacobi": jacobi});
            with_manifest("eigen", &out, cfg, vec![], |m| eigen_cmd(&ckpt, class, top, jacobi, m))
        }
        Command::Compare { a, b, top, out } => {
            let cfg = json!({"a": a, "b": b, "top": top});
            with_manifest("compare", &out, cfg, vec![], |m| compare_cmd(&a, &b, top, m))
        }
        Command::Attribute {
            ckpt,
            dataset,
            data_dir,
            index,
            class,
            top,
            out,
        } => {
            let name: DatasetName = dataset.as_deref().unwrap_or("mnist").parse()?;
            let dir = data_dir_or_env(data_dir);
            let cfg = json!({"ckpt": ckpt, "dataset": name, "data_dir": dir, "index": index, "class": class, "top": top});
            with_manifest("attribute", &out, cfg, vec![], |m| {
                attribute_cmd(&ckpt, name, &dir, index, class, top, m)
            })
        }
        Command::Curve {
            gate,
            lambda,
            c,
            p,
            lo,
            hi,
            n,
            out,
        } => {
            let kind: GateKind = gate.parse()?;
            let spec = if kind == GateKind::Sqs {
                let d = GateSpec::sqs_default();
                GateSpec::sqs(c.unwrap_or(d.shift_c), lambda.unwrap_or(d.shrink_lambda), p.unwrap_or(d.power_p))
            } else {
                GateSpec::of(kind)
            };
            spec.validate()?;
            let cfg = json!({"gate": spec, "lo": lo, "hi": hi, "n": n});
            with_manifest("curve", &out, cfg, vec![], |m| {
                let rows = sample_gate_curve(&spec, lo, hi, n)?;
                let path = m.output(format!("curve_{}.csv", kind.name()));
                write_curve_csv(&rows, BufWriter::new(File::create(&path)?))?;
                println!("wrote {}", path.display());
                Ok(())
            })
        }
        Command::Bench {
            grid,
            reps,
            warmup,
            parallel,
            json: as_json,
            out,
        } => {
            let shapes = parse_grid(&grid)?;
            let cfg = json!({"grid": shapes, "reps": reps, "warmup": warmup, "parallel": parallel});
            with_manifest("bench", &out, cfg, vec![], |m| bench_cmd(&shapes, reps, warmup, parallel, as_json, m))
        }
        Command::Repro {
            args,
            datasets,
            gates,
            out,
        } => {
            let mut args = args;
            args.seeds.get_or_insert(5);
            let base = resolve(&args, Profile::Perf)?;
            let datasets: Vec<DatasetName> = split_list(&datasets).map(str::parse).collect::<Result<_>>()?;
            let gates: Vec<GateKind> = split_list(&gates).map(str::parse).collect::<Result<_>>()?;
            if datasets.is_empty() || gates.is_empty() {
                return Err(Failure::Invalid("repro needs at least one dataset and one gate".into()));
            }
            let cfg = json!({"base": base, "datasets": datasets, "gates": gates});
            with_manifest("repro", &out, cfg, base.seeds.clone(), |m| repro_cmd(&base, &datasets, &gates, m))
        }
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn data_dir_or_env(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("SQS_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Write the manifest, run `body`, then finalize the manifest either way.
fn with_manifest(
    name: &str,
    out: &Path,
    config: impl serde::Serialize,
    seeds: Vec<u64>,
    body: impl FnOnce(&mut RunManifest) -> std::result::Result<(), Failure>,
) -> CmdResult {
    let mut m = RunManifest::start(name, out, config, seeds).map_err(|e| Failure::Runtime(e.to_string()))?;
    let result = body(&mut m);
    m.finish(result.is_ok()).map_err(|e| Failure::Runtime(e.to_string()))?;
    result
}

fn load_split(m: &mut RunManifest, dir: &Path, name: DatasetName, split: Split) -> Result<Dataset> {
    let (img, lab) = Dataset::files(dir, name, split)?;
    m.add_input(&img)?;
    m.add_input(&lab)?;
    Dataset::load(dir, name, split)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Train every seed of `r` on already loaded data; returns per-seed metrics.
fn train_seeds(
    r: &Resolved,
    train: &Dataset,
    test: &Dataset,
    m: &mut RunManifest,
) -> std::result::Result<Vec<Vec<MetricsRecord>>, Failure> {
    let stem_base = format!("{}_{}", r.dataset, r.gate.kind.name());
    let mut all = Vec::with_capacity(r.seeds.len());
    for &seed in &r.seeds {
        let (mcfg, tcfg) = r.for_seed(seed);
        let stem = format!("{stem_base}_seed{seed}");
        eprintln!("training {stem} ({} steps)", tcfg.total_steps(train.len()));
        let model = init_model(&mcfg)?;
        let outcome = match train_run(model, train, test, &tcfg) {
            Ok(o) => o,
            Err(TrainError::Failed(e)) => return Err(e.into()),
            Err(TrainError::Diverged(d)) => {
                let path = m.output(format!("{stem}_last_good.ckpt"));
                save_to_path(&d.last_good, &path)?;
                return Err(Failure::Runtime(format!(
                    "{stem} diverged at step {}: {} (last good model in {})",
                    d.step,
                    d.reason,
                    path.display()
                )));
            }
        };
        save_to_path(&outcome.model, m.output(format!("{stem}.ckpt")))?;
        let csv = m.output(format!("{stem}_metrics.csv"));
        write_metrics_csv(&outcome.metrics, BufWriter::new(File::create(&csv)?))?;
        let log = m.output("runs.jsonl");
        append_run_log(
            &log,
            &RunLogEntry {
                dataset: r.dataset.to_string(),
                model: mcfg,
                train: tcfg,
                metrics: outcome.metrics.clone(),
                unix_time: unix_now(),
            },
        )?;
        if let Some(last) = outcome.metrics.last() {
            println!(
                "{stem}: test loss {:.4} accuracy {:.4} ({:.1} s)",
                last.loss, last.accuracy, last.seconds
            );
        }
        all.push(outcome.metrics);
    }
    Ok(all)
}

fn train_cmd(r: &Resolved, m: &mut RunManifest) -> CmdResult {
    let train = load_split(m, &r.data_dir, r.dataset, Split::Train)?;
    let test = load_split(m, &r.data_dir, r.dataset, Split::Test)?;
    let runs = train_seeds(r, &train, &test, m)?;
    if runs.len() > 1 {
        let path = m.output(format!("{}_{}_summary.csv", r.dataset, r.gate.kind.name()));
        write_summary(&path, &[(r.dataset, r.gate.kind, runs)])?;
    }
    Ok(())
}

fn write_summary(path: &Path, groups: &[(DatasetName, GateKind, Vec<Vec<MetricsRecord>>)]) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "dataset,gate,step_frac,runs,loss_mean,loss_std,accuracy_mean,accuracy_std")?;
    for (ds, gate, runs) in groups {
        for s in summarize(runs)? {
            writeln!(
                w,
                "{ds},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                gate.name(),
                s.step_frac,
                s.runs,
                s.loss_mean,
                s.loss_std,
                s.accuracy_mean,
                s.accuracy_std
            )?;
        }
    }
    Ok(())
}

fn repro_cmd(base: &Resolved, datasets: &[DatasetName], gates: &[GateKind], m: &mut RunManifest) -> CmdResult {
    let mut groups = Vec::new();
    for &ds in datasets {
        let train = load_split(m, &base.data_dir, ds, Split::Train)?;
        let test = load_split(m, &base.data_dir, ds, Split::Test)?;
        for &kind in gates {
            let mut r = base.clone();
            r.dataset = ds;
            r.gate = if kind == GateKind::Sqs && base.gate.kind == GateKind::Sqs {
                base.gate
            } else {
                GateSpec::of(kind)
            };
            r.model.gate = r.gate;
            let runs = train_seeds(&r, &train, &test, m)?;
            groups.push((ds, kind, runs));
        }
    }
    let path = m.output("table.csv");
    write_summary(&path, &groups)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_model(m: &mut RunManifest, path: &Path) -> Result<GluMlpModel> {
    m.add_input(path)?;
    load_from_path(path)
}

/// Square side for image export, when the input is a square picture.
fn image_shape(n: usize) -> Option<(usize, usize)> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some((s, s))
}

fn decompose(model: &GluMlpModel, jacobi: bool) -> Result<Vec<(InteractionMatrix, EigenBasis)>> {
    let solver = if jacobi {
        EigenSolver::Jacobi
    } else {
        EigenSolver::TridiagonalQl
    };
    decompose_all(model, solver)
}

fn eigen_cmd(ckpt: &Path, class: Option<usize>, top: usize, jacobi: bool, m: &mut RunManifest) -> CmdResult {
    use std::io::Write;
    let model = load_model(m, ckpt)?;
    let classes = model.config.class_count;
    if let Some(c) = class {
        if c >= classes {
            return Err(Error::Index {
                what: "class",
                index: c,
                bound: classes,
            }
            .into());
        }
    }
    if top > model.config.input_dim {
        return Err(Failure::Invalid(format!("--top {top} exceeds input dimension {}", model.config.input_dim)));
    }
    let all = decompose(&model, jacobi)?;
    let shape = image_shape(model.config.input_dim);
    let summary_path = m.output("spectrum_summary.csv");
    let mut summary = BufWriter::new(File::create(&summary_path)?);
    writeln!(summary, "class,largest_abs,median_abs,ratio")?;
    for (mat, basis) in &all {
        let a = mat.class_id;
        if class.is_some_and(|c| c != a) {
            continue;
        }
        let spec = eigen_spectrum(a, basis);
        let path = m.output(format!("spectrum_class{a}.csv"));
        spec.write_csv(BufWriter::new(File::create(&path)?))
            ?;
        let ratio = spec.largest() / spec.median();
        writeln!(summary, "{a},{},{},{}", spec.largest(), spec.median(), ratio)?;
        if let Some((rows, cols)) = shape {
            for i in 0..top {
                let img = m.output(format!("eig_class{a}_top{}.pgm", i + 1));
                export_eigenvector_image(basis.vector(i), rows, cols, img)?;
            }
        }
        println!("class {a}: largest |λ| {:.4e}, median |λ| {:.4e}", spec.largest(), spec.median());
    }
    Ok(())
}

fn compare_cmd(a: &Path, b: &Path, top: usize, m: &mut RunManifest) -> CmdResult {
    use std::io::Write;
    let ma = load_model(m, a)?;
    let mb = load_model(m, b)?;
    if ma.config.input_dim != mb.config.input_dim || ma.config.class_count != mb.config.class_count {
        return Err(Failure::Invalid("checkpoints disagree on input or class dimensions".into()));
    }
    let da = decompose(&ma, false)?;
    let db = decompose(&mb, false)?;
    let summary_path = m.output("similarity_summary.csv");
    let mut summary = BufWriter::new(File::create(&summary_path)?);
    let header: Vec<String> = (1..=top).map(|i| format!("top{i}")).collect();
    writeln!(summary, "class,{}", header.join(","))?;
    for ((mat, ba), (_, bb)) in da.iter().zip(&db) {
        let rep = aligned_cosine_similarity(ba, bb, top)?;
        let path = m.output(format!("similarity_class{}.csv", mat.class_id));
        rep.write_csv(BufWriter::new(File::create(&path)?))
            ?;
        let cells: Vec<String> = rep.diagonal.iter().map(|d| format!("{d:.6}")).collect();
        writeln!(summary, "{},{}", mat.class_id, cells.join(","))?;
        println!("class {}: {}", mat.class_id, cells.join(" "));
    }
    Ok(())
}

fn attribute_cmd(
    ckpt: &Path,
    name: DatasetName,
    dir: &Path,
    index: usize,
    class: Option<usize>,
    top: usize,
    m: &mut RunManifest,
) -> CmdResult {
    let model = load_model(m, ckpt)?;
    let test = load_split(m, dir, name, Split::Test)?;
    if index >= test.len() {
        return Err(Error::Index {
            what: "sample",
            index,
            bound: test.len(),
        }
        .into());
    }
    let image = test.image(index);
    let logits = model.forward(&Tensor::new(vec![1, image.len()], image.to_vec())?)?;
    let predicted = argmax(logits.data());
    let a = class.unwrap_or(predicted);
    if a >= model.config.class_count {
        return Err(Error::Index {
            what: "class",
            index: a,
            bound: model.config.class_count,
        }
        .into());
    }
    let all = decompose(&model, false)?;
    let basis = &all[a].1;
    let x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    let at = attribution(basis, &x, top.min(basis.n))?;
    let path = m.output(format!("attribution_sample{index}_class{a}.csv"));
    at.write_csv(BufWriter::new(File::create(&path)?))
        ?;
    println!(
        "sample {index}: label {} predicted {predicted}; class {a} logit {:.6}, quadratic form {:.6}, sum of contributions {:.6}",
        test.labels[index],
        logits.data()[a],
        quadratic_form_logit(basis, &x)?,
        at.total
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    if s == "full" {
        return Ok(default_grid());
    }
    split_list(s)
        .map(|shape| {
            let dims: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Config(format!("bad bench shape `{shape}`"))))
                .collect::<Result<_>>()?;
            match dims[..] {
                [b, i, o] => Ok((b, i, o)),
                _ => Err(Error::Config(format!("bench shape `{shape}` must be BxINxOUT"))),
            }
        })
        .collect()
}

fn bench_cmd(
    shapes: &[(usize, usize, usize)],
    reps: usize,
    warmup: usize,
    parallel: bool,
    as_json: bool,
    m: &mut RunManifest,
) -> CmdResult {
    let rows: Vec<BenchRow> = bench_suite(shapes, reps, warmup, parallel)?;
    let csv = m.output("bench.csv");
    write_bench_csv(&rows, BufWriter::new(File::create(&csv)?))?;
    if as_json {
        let path = m.output("bench.json");
        write_bench_json(&rows, BufWriter::new(File::create(&path)?))?;
    }
    for r in &rows {
        if !r.stable() {
            eprintln!("note: {}x{}x{} is unstable (std/mean > 0.2)", r.batch, r.d_in, r.d_out);
        }
    }
    println!("wrote {}", csv.display());
    Ok(())
}
