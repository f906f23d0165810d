//! Subcommand implementations. Every report is a JSON object carrying
//! `schema_version` and `command`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgmmn::datasets::{
    column_names, gen_conditional_gaussian, gen_cubic, gen_cubic_toy,
    gen_label_conditional_mixture, load_csv, load_idx_subset, load_samples_csv, write_csv,
    write_table, LabelMode,
};
use cgmmn::distill::{
    default_perturb_scale, distill, evaluate_rmse, fit_teacher_bayes_linreg, grid, sample_teacher,
    Student, Teacher,
};
use cgmmn::embeddings::{cmmd2_with, mmd_permutation_test};
use cgmmn::gradcheck::{
    check_end_to_end, check_net_backward, check_sample_grad, GradCheckReport, DEFAULT_STEP,
};
use cgmmn::kernels::{default_lambda, one_hot};
use cgmmn::net::init_net;
use cgmmn::trainer::{classification_error, generate, latent_traverse, train};
use cgmmn::{
    gram, median_bandwidth, mmd2_biased, rng_from_seed, Activation, CmmdPlan, GeneratorNet,
    InputMode, KernelChoice, KernelSpec, LayerSpec, PairedDataset, Regularization, Samples,
    TrainConfig,
};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{derive_seeds, RunConfig};
use crate::{Cli, CliError, Command, Conditioning, DataKind, DistillArgs, KernelArg, LabelledData};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const RUN_ARTIFACT_SCHEMA_VERSION: u32 = 1;

type CliResult<T> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = Output::new(&cli.out_dir)?;
    match &cli.command {
        Command::GenData {
            kind,
            n,
            slope,
            noise_sd,
            classes,
            output,
        } => {
            let d = match kind {
                DataKind::ConditionalGaussian => {
                    gen_conditional_gaussian(*n, *slope, *noise_sd, seed)?
                }
                DataKind::Cubic => gen_cubic(*n, seed)?,
                DataKind::CubicToy => gen_cubic_toy(seed)?,
                DataKind::Mixture => gen_label_conditional_mixture(*n, *classes, seed)?,
            };
            let path = out.path(output);
            write_csv(&d, &path)?;
            out.report(
                "gen-data",
                json!({ "rows": d.len(), "provenance": d.provenance(), "output": path }),
                None,
            )
        }
        Command::Mmd {
            x,
            y,
            cols,
            kernel,
            resamples,
            report,
        } => {
            let xs = load_samples_csv(x, cols)?;
            let ys = load_samples_csv(y, cols)?;
            let k = match kernel {
                KernelArg::Spec(KernelSpec::Delta) => {
                    return Err(CliError::Usage(
                        "mmd supports rbf and linear kernels".into(),
                    ))
                }
                KernelArg::Spec(k) => *k,
                KernelArg::Auto | KernelArg::RbfMedian => {
                    let mut pooled = xs.clone();
                    for r in ys.rows() {
                        pooled.push(r)?;
                    }
                    KernelSpec::rbf(median_bandwidth(&pooled)?)?
                }
            };
            let mut body = json!({
                "kernel": k,
                "n_x": xs.len(),
                "n_y": ys.len(),
                "mmd2": mmd2_biased(&k, &xs, &ys)?,
            });
            if *resamples > 0 {
                let t = mmd_permutation_test(&k, &xs, &ys, *resamples, &mut rng_from_seed(seed))?;
                body["permutation"] = json!({
                    "p_value": t.p_value,
                    "null_q95": t.null_q95,
                    "resamples": t.resamples,
                });
            }
            out.report("mmd", body, report.as_deref())
        }
        Command::Cmmd {
            data,
            samples,
            cols,
            kx,
            ky,
            lambda,
            report,
        } => {
            let mode: LabelMode = cols.label_mode.into();
            let d = load_csv(data, &cols.x_cols, &cols.y_cols, mode)?;
            let s = load_csv(samples, &cols.x_cols, &cols.y_cols, mode)?;
            let k_x = resolve_kernel(*kx, d.x_kind().is_finite(), &d.x_features())?;
            let k_y = resolve_kernel(*ky, d.y_kind().is_finite(), &d.y_features())?;
            let reg = if k_x.is_delta() {
                Regularization::FiniteDomain
            } else {
                let xk = d.x_for_kernel(&k_x)?;
                Regularization::Ridge(match lambda {
                    Some(l) => *l,
                    None => default_lambda(&gram(&k_x, &xk, &xk)?),
                })
            };
            let est = cmmd2_with(&k_x, &k_y, &d, &s, reg)?;
            let body = json!({
                "k_x": k_x,
                "k_y": k_y,
                "regularization": reg_json(reg),
                "n_data": d.len(),
                "n_samples": s.len(),
                "cmmd2": est.value,
                "raw": est.raw,
                "terms": est.terms,
            });
            out.report("cmmd", body, report.as_deref())
        }
        Command::Train { config } => cmd_train(config, cli.seed, &out),
        Command::Sample {
            model,
            cond,
            count,
            output,
        } => {
            let net = GeneratorNet::load(model)?;
            let (xs, labels) = conditioning(&net, cond)?;
            let mut rng = rng_from_seed(seed);
            let mut header = x_header(&net, labels.is_some());
            header.extend(column_names(
                "y",
                cgmmn::Domain::Continuous {
                    dim: net.output_dim(),
                },
            ));
            let mut rows = Vec::with_capacity(xs.len() * count);
            for (i, x) in xs.rows().enumerate() {
                let ys = generate(&net, x, *count, &mut rng)?;
                for y in ys.rows() {
                    let mut row = x_columns(x, labels.as_ref().map(|l| l[i]));
                    row.extend_from_slice(y);
                    rows.push(row);
                }
            }
            let path = out.path(output);
            write_table(&path, &header, &rows)?;
            out.report(
                "sample",
                json!({ "rows": rows.len(), "output": path }),
                None,
            )
        }
        Command::Classify {
            model,
            data,
            report,
        } => {
            let net = GeneratorNet::load(model)?;
            let d = labelled_data(data)?;
            if d.x().dim() != net.x_dim() {
                return Err(CliError::Usage(format!(
                    "model expects {} input features, data has {}",
                    net.x_dim(),
                    d.x().dim()
                )));
            }
            let err = classification_error(&net, &d, &mut rng_from_seed(seed))?;
            out.report(
                "classify",
                json!({ "n": d.len(), "error_rate": err, "provenance": d.provenance() }),
                report.as_deref(),
            )
        }
        Command::Traverse {
            model,
            cond,
            dim,
            steps,
            output,
        } => {
            let net = GeneratorNet::load(model)?;
            let (xs, labels) = conditioning(&net, cond)?;
            let values = grid(0.0, 1.0, *steps);
            let mut header = x_header(&net, labels.is_some());
            header.push("h".into());
            header.extend(column_names(
                "y",
                cgmmn::Domain::Continuous {
                    dim: net.output_dim(),
                },
            ));
            let mut rows = Vec::new();
            for (i, x) in xs.rows().enumerate() {
                let ys = latent_traverse(&net, x, *dim, &values)?;
                for (v, y) in values.iter().zip(ys.rows()) {
                    let mut row = x_columns(x, labels.as_ref().map(|l| l[i]));
                    row.push(*v);
                    row.extend_from_slice(y);
                    rows.push(row);
                }
            }
            let path = out.path(output);
            write_table(&path, &header, &rows)?;
            out.report(
                "traverse",
                json!({ "rows": rows.len(), "output": path }),
                None,
            )
        }
        Command::Distill(args) => cmd_distill(args, seed, &out),
        Command::Gradcheck { trials, report } => {
            cmd_gradcheck(*trials, seed, &out, report.as_deref())
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn write_json(&self, p: &Path, v: &impl Serialize) -> CliResult<PathBuf> {
        let path = self.path(p);
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    /// Prints the report and, if requested, writes it to a file.
    fn report(&self, command: &str, mut body: Value, file: Option<&Path>) -> CliResult<()> {
        body["schema_version"] = json!(REPORT_SCHEMA_VERSION);
        body["command"] = json!(command);
        if let Some(f) = file {
            self.write_json(f, &body)?;
        }
        let text = serde_json::to_string_pretty(&body).map_err(|e| CliError::Io(e.to_string()))?;
        match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        }
    }
}

fn resolve_kernel(arg: KernelArg, finite: bool, sample: &Samples) -> CliResult<KernelSpec> {
    Ok(match arg {
        KernelArg::Spec(k) => k,
        KernelArg::Auto if finite => KernelSpec::Delta,
        KernelArg::Auto | KernelArg::RbfMedian => KernelSpec::rbf(median_bandwidth(sample)?)?,
    })
}

fn kernel_choice(arg: KernelArg) -> KernelChoice {
    match arg {
        KernelArg::Spec(k) => KernelChoice::Fixed(k),
        KernelArg::Auto | KernelArg::RbfMedian => KernelChoice::AutoMedian,
    }
}

fn reg_json(reg: Regularization) -> Value {
    match reg {
        Regularization::Ridge(l) => json!({ "kind": "ridge", "lambda": l }),
        Regularization::FiniteDomain => json!({ "kind": "finite-domain" }),
    }
}

fn parse_inline(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("bad value {v:?} in --x: {e}")))
                })
                .collect()
        })
        .collect()
}

/// Network inputs for the conditioning flags, plus class codes when
/// conditioning on labels.
fn conditioning(net: &GeneratorNet, c: &Conditioning) -> CliResult<(Samples, Option<Vec<u32>>)> {
    let classes: Option<Vec<u32>> = if c.all_classes {
        Some((0..net.x_dim() as u32).collect())
    } else {
        c.class.clone()
    };
    if let Some(cl) = classes {
        if let Some(bad) = cl.iter().find(|&&k| k as usize >= net.x_dim()) {
            return Err(CliError::Usage(format!(
                "class {bad} out of range for a model with {} classes",
                net.x_dim()
            )));
        }
        let rows: Vec<Vec<f64>> = cl.iter().map(|&k| one_hot(k, net.x_dim())).collect();
        return Ok((Samples::from_rows(&rows)?, Some(cl)));
    }
    let xs = match (&c.x, &c.x_file) {
        (Some(text), _) => Samples::from_rows(&parse_inline(text)?)?,
        (None, Some(path)) => load_samples_csv(path, &[])?,
        (None, None) => return Err(CliError::Usage("no conditioning inputs given".into())),
    };
    if xs.dim() != net.x_dim() {
        return Err(CliError::Usage(format!(
            "model expects {}-dimensional inputs, got {}",
            net.x_dim(),
            xs.dim()
        )));
    }
    Ok((xs, None))
}

fn x_header(net: &GeneratorNet, labelled: bool) -> Vec<String> {
    if labelled {
        vec!["x_label".into()]
    } else {
        column_names("x", cgmmn::Domain::Continuous { dim: net.x_dim() })
    }
}

fn x_columns(x: &[f64], label: Option<u32>) -> Vec<f64> {
    match label {
        Some(l) => vec![l as f64],
        None => x.to_vec(),
    }
}

fn labelled_data(a: &LabelledData) -> CliResult<PairedDataset> {
    match (&a.csv, &a.images, &a.labels) {
        (Some(csv), _, _) => {
            if a.x_cols.is_empty() {
                return Err(CliError::Usage("--x-cols is required with --csv".into()));
            }
            Ok(load_csv(
                csv,
                &a.x_cols,
                std::slice::from_ref(&a.label_col),
                LabelMode::Y,
            )?)
        }
        (None, Some(images), Some(labels)) => {
            Ok(load_idx_subset(images, labels, a.max_n, a.downscale)?)
        }
        _ => Err(CliError::Usage(
            "give --csv or both --images and --labels".into(),
        )),
    }
}

#[derive(Serialize)]
struct RunArtifact<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    seeds: Seeds,
    data: DataSummary,
    resolved: Resolved,
    history: &'a [f64],
    epoch_seconds: &'a [f64],
    model: PathBuf,
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    data: u64,
    init: u64,
    train: u64,
}

#[derive(Serialize)]
struct DataSummary {
    rows: usize,
    x_kind: cgmmn::Domain,
    y_kind: cgmmn::Domain,
    provenance: String,
}

#[derive(Serialize)]
struct Resolved {
    k_x: Option<KernelSpec>,
    k_y: Option<KernelSpec>,
    lambda: Option<f64>,
    num_params: usize,
}

fn cmd_train(config: &Path, seed_flag: Option<u64>, out: &Output) -> CliResult<()> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(s) = seed_flag {
        cfg.seed = s;
    }
    let (data_seed, init_seed, train_seed) = derive_seeds(cfg.seed);
    let base = config.parent().unwrap_or(Path::new("."));
    let data = cfg.data.load(data_seed, base)?;
    let net = cfg.net.build(
        data.x_kind().feature_dim(),
        data.y_kind().feature_dim(),
        init_seed,
    )?;
    let mut tc = cfg.train.clone();
    tc.seed = train_seed;
    let run = train(&data, net, &tc)?;
    let model_path = out.path(&cfg.output.model);
    run.net.save(&model_path)?;
    let artifact = RunArtifact {
        schema_version: RUN_ARTIFACT_SCHEMA_VERSION,
        config: &cfg,
        seeds: Seeds {
            master: cfg.seed,
            data: data_seed,
            init: init_seed,
            train: train_seed,
        },
        data: DataSummary {
            rows: data.len(),
            x_kind: data.x_kind(),
            y_kind: data.y_kind(),
            provenance: data.provenance().to_string(),
        },
        resolved: Resolved {
            k_x: run.k_x,
            k_y: run.k_y,
            lambda: run.lambda,
            num_params: run.net.num_params(),
        },
        history: &run.history,
        epoch_seconds: &run.epoch_seconds,
        model: model_path.clone(),
    };
    let run_path = out.write_json(&cfg.output.run, &artifact)?;
    out.report(
        "train",
        json!({
            "epochs": run.history.len(),
            "final_loss": run.history.last(),
            "model": model_path,
            "run": run_path,
        }),
        None,
    )
}

fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx[..n_test].to_vec();
    (idx[n_test..].to_vec(), test)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Serialize)]
struct DistillReport {
    teacher_rmse: f64,
    student_rmse: f64,
    rmse_ratio: f64,
    grid: Option<GridSummary>,
    train_rows: usize,
    test_rows: usize,
    distill_pairs: usize,
    perturb_scale: Vec<f64>,
    k_x: Option<KernelSpec>,
    k_y: Option<KernelSpec>,
    lambda: Option<f64>,
    final_loss: Option<f64>,
    student: PathBuf,
}

#[derive(Serialize)]
struct GridSummary {
    points: usize,
    lo: f64,
    hi: f64,
    /// RMSE of student vs teacher predictive mean over RMS of the teacher mean.
    mean_relative_rmse: f64,
    sd_pearson: Option<f64>,
    output: PathBuf,
}

fn cmd_distill(a: &DistillArgs, seed: u64, out: &Output) -> CliResult<()> {
    let (data_seed, init_seed, train_seed) = derive_seeds(seed);
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let (train_d, test_d) = match &a.csv {
        Some(path) => {
            let d = load_csv(
                path,
                &a.x_cols,
                std::slice::from_ref(&a.y_col),
                LabelMode::None,
            )?;
            if !(0.0..1.0).contains(&a.test_fraction) {
                return Err(CliError::Usage("--test-fraction must lie in [0, 1)".into()));
            }
            let (tr, te) = split_rows(d.len(), a.test_fraction, data_seed);
            (d.select(&tr), d.select(&te))
        }
        None => (
            gen_cubic_toy(data_seed)?,
            gen_cubic(a.test_n, data_seed.wrapping_add(1))?,
        ),
    };
    let teacher = fit_teacher_bayes_linreg(&train_d, a.degree, a.prior_var, a.noise_var)?;
    let scale: Vec<f64> = default_perturb_scale(train_d.x())
        .iter()
        .map(|s| s / cgmmn::distill::DEFAULT_PERTURB_FRACTION * a.perturb_fraction)
        .collect();
    let ds = sample_teacher(&teacher, train_d.x(), a.per_x, &scale, &mut rng)?;

    let mut layers: Vec<LayerSpec> = a
        .hidden
        .iter()
        .map(|&w| LayerSpec::new(w, Activation::Relu))
        .collect();
    layers.push(LayerSpec::new(1, Activation::Identity));
    let net = init_net(
        &layers,
        train_d.x().dim(),
        a.h_dim,
        InputMode::Concat,
        init_seed,
    )?;
    let mut cfg = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        lambda: a.lambda,
        seed: train_seed,
        k_x: kernel_choice(a.kx),
        k_y: kernel_choice(a.ky),
        ..Default::default()
    };
    cfg.adam.lr = a.lr;
    let dr = distill(&ds, net, &cfg)?;
    let student_path = out.write_json(&a.student_output, &dr.student)?;

    let teacher_rmse = if test_d.is_empty() {
        f64::NAN
    } else {
        evaluate_rmse(&teacher, &test_d, 1, &mut rng)?
    };
    let student_rmse = if test_d.is_empty() {
        f64::NAN
    } else {
        evaluate_rmse(&dr.student, &test_d, a.samples_per_x, &mut rng)?
    };

    let grid_summary = if train_d.x().dim() == 1 && a.grid_points > 0 {
        Some(write_grid(
            a,
            &teacher,
            &dr.student,
            &train_d,
            out,
            &mut rng,
        )?)
    } else {
        None
    };

    let report = DistillReport {
        teacher_rmse,
        student_rmse,
        rmse_ratio: student_rmse / teacher_rmse,
        grid: grid_summary,
        train_rows: train_d.len(),
        test_rows: test_d.len(),
        distill_pairs: ds.pairs.len(),
        perturb_scale: ds.perturb_scale.clone(),
        k_x: dr.run.k_x,
        k_y: dr.run.k_y,
        lambda: dr.run.lambda,
        final_loss: dr.run.history.last().copied(),
        student: student_path,
    };
    let body = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    out.report("distill", body, Some(&a.report))
}

fn write_grid(
    a: &DistillArgs,
    teacher: &Teacher,
    student: &Student,
    train_d: &PairedDataset,
    out: &Output,
    rng: &mut impl Rng,
) -> CliResult<GridSummary> {
    let (lo, hi) = if a.csv.is_none() {
        (
            -cgmmn::datasets::CUBIC_TOY_RANGE,
            cgmmn::datasets::CUBIC_TOY_RANGE,
        )
    } else {
        let xs = train_d.x().as_slice();
        (
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let g = grid(lo, hi, a.grid_points);
    let mut rows = Vec::with_capacity(g.len());
    let mut teacher_rows = Vec::with_capacity(g.len());
    let (mut se, mut ss) = (0.0, 0.0);
    let (mut t_sd, mut s_sd) = (Vec::new(), Vec::new());
    for &x in &g {
        let t = teacher.predictive(&[x])?;
        let s = student.predictive(&[x], a.samples_per_x.max(2), rng)?;
        se += (s.mean - t.mean).powi(2);
        ss += t.mean * t.mean;
        t_sd.push(t.sd);
        s_sd.push(s.sd);
        rows.push(vec![x, t.mean, t.sd, s.mean, s.sd]);
        teacher_rows.push(vec![x, t.mean, t.sd]);
    }
    let header: Vec<String> = [
        "x",
        "teacher_mean",
        "teacher_sd",
        "student_mean",
        "student_sd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let grid_path = out.path(&a.grid_output);
    write_table(&grid_path, &header, &rows)?;
    write_table(
        out.path(&a.teacher_output),
        &["x".to_string(), "mean".to_string(), "sd".to_string()],
        &teacher_rows,
    )?;
    Ok(GridSummary {
        points: g.len(),
        lo,
        hi,
        mean_relative_rmse: (se / ss).sqrt(),
        sd_pearson: pearson(&t_sd, &s_sd),
        output: grid_path,
    })
}

#[derive(Serialize)]
struct SuiteResult {
    name: &'static str,
    max_rel_err: f64,
    tolerance: f64,
    checked: usize,
    skipped: usize,
    pass: bool,
}

fn suite(name: &'static str, tolerance: f64, reps: &[GradCheckReport]) -> SuiteResult {
    let max_rel_err = reps.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    SuiteResult {
        name,
        max_rel_err,
        tolerance,
        checked: reps.iter().map(|r| r.checked).sum(),
        skipped: reps.iter().map(|r| r.skipped).sum(),
        pass: max_rel_err <= tolerance,
    }
}

fn rand_samples(n: usize, dim: usize, rng: &mut impl Rng) -> cgmmn::Result<Samples> {
    Samples::new(
        dim,
        (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
}

fn cmd_gradcheck(trials: usize, seed: u64, out: &Output, report: Option<&Path>) -> CliResult<()> {
    let mut rng = rng_from_seed(seed);
    let (mut samples, mut backward, mut e2e) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..trials {
        let n = rng.random_range(2..9);
        let m = rng.random_range(2..9);
        let dim = rng.random_range(1..4);
        let k_y = if t % 2 == 0 {
            KernelSpec::rbf(rng.random_range(0.3..2.0))?
        } else {
            KernelSpec::Linear
        };
        let x_d = rand_samples(n, 2, &mut rng)?;
        let x_s = rand_samples(m, 2, &mut rng)?;
        let plan = CmmdPlan::new(
            &KernelSpec::rbf(1.0)?,
            &x_d,
            &x_s,
            Regularization::Ridge(rng.random_range(0.05..1.0)),
        )?;
        let y_d = rand_samples(n, dim, &mut rng)?;
        let y_s = rand_samples(m, dim, &mut rng)?;
        samples.push(check_sample_grad(&plan, &k_y, &y_d, &y_s, DEFAULT_STEP)?);

        let classes = 3;
        let labels_d: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..classes) as f64)
            .collect();
        let labels_s: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0..classes) as f64)
            .collect();
        let plan = CmmdPlan::new(
            &KernelSpec::Delta,
            &Samples::from_scalars(&labels_d),
            &Samples::from_scalars(&labels_s),
            Regularization::FiniteDomain,
        )?;
        samples.push(check_sample_grad(&plan, &k_y, &y_d, &y_s, DEFAULT_STEP)?);

        let act = if t % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Sigmoid
        };
        let net = init_net(
            &[
                LayerSpec::new(10, act),
                LayerSpec::new(8, act),
                LayerSpec::new(dim, Activation::Identity),
            ],
            2,
            3,
            InputMode::Concat,
            rng.random(),
        )?;
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let h = net.sample_noise(&mut rng);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        backward.push(check_net_backward(&net, &x, &h, &w, DEFAULT_STEP)?);

        let hidden: Vec<Vec<f64>> = (0..m).map(|_| net.sample_noise(&mut rng)).collect();
        let plan = CmmdPlan::new(
            &KernelSpec::rbf(1.0)?,
            &x_d,
            &x_s,
            Regularization::Ridge(rng.random_range(0.05..1.0)),
        )?;
        e2e.push(check_end_to_end(
            &net,
            &plan,
            &k_y,
            &y_d,
            &x_s,
            &hidden,
            DEFAULT_STEP,
        )?);
    }
    let suites = vec![
        suite("cmmd-sample-gradient", 1e-5, &samples),
        suite("net-backward", 1e-5, &backward),
        suite("end-to-end-weights", 1e-4, &e2e),
    ];
    let pass = suites.iter().all(|s| s.pass);
    let body = json!({ "trials": trials, "suites": suites, "pass": pass });
    out.report("gradcheck", body, report)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(
            "gradient check exceeded tolerance".into(),
        ))
    }
}
