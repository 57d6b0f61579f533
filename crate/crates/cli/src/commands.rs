use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use facetsep::baseline::{edge_test, score_columns, ColumnScore};
use facetsep::bench::{run_experiment, summarize, Experiment};
use facetsep::datamodel::{read_matrix_csv_with, write_matrix_csv, Matrix, PointCloud, RunConfig};
use facetsep::denoise::{knn_smooth, tv_denoise_cloud_with_field, DenoiseMethod, DenoiseSpec};
use facetsep::fca::{run_fca, Group};
use facetsep::metrics::{match_columns, realized_snr};
use facetsep::synth::{add_awgn, gen_mixing, gen_sources, SourceMode, SourceSpec};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::manifest::{Failure, Run};
use crate::{DenoiseArgs, Thresholds};

pub struct Ctx {
    pub cfg: RunConfig,
    pub header: bool,
}

impl Ctx {
    fn read(&self, run: &mut Run, path: &Path) -> Result<Matrix, Failure> {
        let abs = run.input(path);
        read_matrix_csv_with(&abs, self.header).with_context(|| format!("reading {}", path.display())).map_err(Failure::Input)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.seed).unwrap_or(0)
    }

    fn replay_header(&self, run: &mut Run) {
        if self.header {
            run.replay.push("--header".into());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    Residual,
    Edge,
}

impl std::str::FromStr for ScoreMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "residual" => Ok(Self::Residual),
            "edge" => Ok(Self::Edge),
            _ => Err(format!("unknown score method `{s}` (expected residual or edge)")),
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::read(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(Failure::Input),
    }
}

fn write_text(run: &mut Run, name: &str, text: &str) -> Result<(), Failure> {
    let path = run.output(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_matrix(run: &mut Run, name: &str, m: &Matrix) -> Result<(), Failure> {
    let path = run.output(name);
    write_matrix_csv(m, &path)?;
    Ok(())
}

fn mode_name(mode: SourceMode) -> &'static str {
    match mode {
        SourceMode::Nna => "nna",
        SourceMode::Facet => "facet",
    }
}

fn method_name(method: DenoiseMethod) -> &'static str {
    match method {
        DenoiseMethod::None => "none",
        DenoiseMethod::Box => "box",
        DenoiseMethod::Gauss => "gauss",
        DenoiseMethod::Tv => "tv",
    }
}

/// Flags first, then the config file, then library defaults.
fn denoise_spec(ctx: &Ctx, args: &DenoiseArgs) -> Result<DenoiseSpec, Failure> {
    let mut spec = DenoiseSpec::with_method(args.denoise);
    if let Some(k) = args.knn.or(ctx.cfg.knn) {
        spec.knn = k;
    }
    if let Some(w) = args.gauss_width {
        spec.gauss_width = w;
    }
    if let Some(l) = args.lambda.or(ctx.cfg.lambda) {
        spec.lambda = l;
    }
    spec.tau = args.tau.or(ctx.cfg.tau);
    if let Some(g) = args.grid.or(ctx.cfg.grid) {
        spec.grid_n = g;
    }
    if let Some(i) = args.max_iters {
        spec.max_iters = i;
    }
    spec.validate()?;
    Ok(spec)
}

fn replay_denoise(run: &mut Run, spec: &DenoiseSpec) {
    run.arg("denoise", method_name(spec.method));
    match spec.method {
        DenoiseMethod::None => {}
        DenoiseMethod::Box => run.arg("knn", spec.knn),
        DenoiseMethod::Gauss => {
            run.arg("knn", spec.knn);
            run.arg("gauss-width", spec.gauss_width);
        }
        DenoiseMethod::Tv => {
            run.arg("lambda", spec.lambda);
            run.arg("grid", spec.grid_n);
            run.arg("max-iters", spec.max_iters);
            if let Some(t) = spec.tau {
                run.arg("tau", t);
            }
        }
    }
}

pub fn gen(
    ctx: &Ctx,
    run: &mut Run,
    sources: usize,
    samples: usize,
    mode: SourceMode,
    snr_db: Option<f64>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let seed = ctx.seed(seed);
    run.seed = Some(seed);
    run.params = json!({ "sources": sources, "samples": samples, "mode": mode, "snr_db": snr_db });
    run.arg("sources", sources);
    run.arg("samples", samples);
    run.arg("mode", mode_name(mode));
    run.arg("seed", seed);
    if let Some(snr) = snr_db {
        run.arg("snr-db", snr);
    }
    if snr_db.is_some_and(f64::is_nan) {
        return Err(anyhow!("--snr-db must be a number").into());
    }

    let mut stream = ChaCha8Rng::seed_from_u64(seed);
    let s = gen_sources(&SourceSpec::new(sources, samples, mode, stream.next_u64()))?;
    let a = gen_mixing(sources, stream.next_u64())?;
    let x = Matrix::new(a.as_dmatrix() * s.as_dmatrix())?;
    write_matrix(run, "S.csv", &s)?;
    write_matrix(run, "A.csv", &a)?;
    write_matrix(run, "X.csv", &x)?;
    if let Some(snr) = snr_db {
        let noisy = add_awgn(&x, snr, stream.next_u64())?;
        write_matrix(run, "X_noisy.csv", &noisy)?;
    }
    Ok(())
}

pub fn denoise(ctx: &Ctx, run: &mut Run, input: &Path, args: &DenoiseArgs, dump_field: bool) -> Result<(), Failure> {
    let spec = denoise_spec(ctx, args)?;
    run.params = json!({ "denoise": spec });
    let abs = std::path::absolute(input).unwrap_or_else(|_| input.to_owned());
    run.arg("in", abs.display());
    ctx.replay_header(run);
    replay_denoise(run, &spec);
    if dump_field {
        run.replay.push("--field".into());
    }
    if spec.method == DenoiseMethod::None {
        return Err(anyhow!("--denoise must be box, gauss or tv").into());
    }
    if dump_field && spec.method != DenoiseMethod::Tv {
        return Err(anyhow!("--field is only available with --denoise tv").into());
    }

    let cloud = PointCloud::from_columns(&ctx.read(run, input)?)?;
    let out = match spec.method {
        DenoiseMethod::Tv => {
            let tv = tv_denoise_cloud_with_field(&cloud, &spec).map_err(Failure::Algorithm)?;
            if dump_field {
                write_text(run, "field.csv", &tv.field.to_csv())?;
            }
            tv.cloud
        }
        _ => {
            let everyone = Group {
                facet_id: 0,
                member_ids: (0..cloud.len()).collect(),
                fitted: None,
            };
            knn_smooth(&everyone, &cloud, &spec).map_err(Failure::Algorithm)?
        }
    };
    write_matrix(run, "denoised.csv", &out.to_matrix())
}

pub fn separate(
    ctx: &Ctx,
    run: &mut Run,
    input: &Path,
    thresholds: &Thresholds,
    args: &DenoiseArgs,
) -> Result<(), Failure> {
    let merged = RunConfig {
        rho: thresholds.rho.or(ctx.cfg.rho),
        eps: thresholds.eps.or(ctx.cfg.eps),
        sigma: thresholds.sigma.or(ctx.cfg.sigma),
        delta: thresholds.delta.or(ctx.cfg.delta),
        ..ctx.cfg.clone()
    };
    let params = merged.fca_params()?;
    let spec = denoise_spec(ctx, args)?;
    run.params = json!({ "fca": params, "denoise": spec });
    let abs = std::path::absolute(input).unwrap_or_else(|_| input.to_owned());
    run.arg("in", abs.display());
    ctx.replay_header(run);
    run.arg("rho", params.rho);
    run.arg("eps", params.eps);
    run.arg("sigma", params.sigma);
    run.arg("delta", params.delta);
    replay_denoise(run, &spec);

    let x = ctx.read(run, input)?;
    let denoise = (spec.method != DenoiseMethod::None).then_some(&spec);
    let result = run_fca(&x, &params, denoise).map_err(Failure::Algorithm)?;
    run.params["selected_plane_count"] = json!(result.selected_plane_count);
    run.params["group_cardinalities"] = json!(result.group_cardinalities);
    run.params["residual"] = json!(result.residual);
    write_matrix(run, "A_hat.csv", &result.a_hat)?;
    write_matrix(run, "S_hat.csv", &result.s_hat)
}

pub fn score(ctx: &Ctx, run: &mut Run, input: &Path, method: ScoreMethod) -> Result<(), Failure> {
    let name = match method {
        ScoreMethod::Residual => "residual",
        ScoreMethod::Edge => "edge",
    };
    run.params = json!({ "method": name });
    let abs = std::path::absolute(input).unwrap_or_else(|_| input.to_owned());
    run.arg("in", abs.display());
    ctx.replay_header(run);
    run.arg("method", name);

    let x = ctx.read(run, input)?;
    let scores: Vec<ColumnScore> = match method {
        ScoreMethod::Residual => score_columns(&x).map_err(Failure::Algorithm)?,
        ScoreMethod::Edge => (0..x.ncols())
            .map(|k| edge_test(&x, k))
            .collect::<Result<_, _>>()
            .map_err(Failure::Algorithm)?,
    };
    let mut text = String::from("column_id,score\n");
    for s in &scores {
        text.push_str(&format!("{},{}\n", s.column_id, s.score));
    }
    write_text(run, "scores.csv", &text)
}

pub fn eval(
    ctx: &Ctx,
    run: &mut Run,
    truth: &Path,
    estimate: &Path,
    snr_pair: Option<(&Path, &Path)>,
) -> Result<(), Failure> {
    for (flag, p) in [("truth", truth), ("estimate", estimate)] {
        let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_owned());
        run.arg(flag, abs.display());
    }
    if let Some((clean, noisy)) = snr_pair {
        for (flag, p) in [("clean", clean), ("noisy", noisy)] {
            let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_owned());
            run.arg(flag, abs.display());
        }
    }
    ctx.replay_header(run);

    let a = ctx.read(run, truth)?;
    let a_hat = ctx.read(run, estimate)?;
    if a.nrows() != a.ncols() || a.nrows() != a_hat.nrows() || a.ncols() != a_hat.ncols() {
        return Err(anyhow!(
            "expected two square matrices of the same size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            a_hat.nrows(),
            a_hat.ncols()
        )
        .into());
    }
    let snr_db = match snr_pair {
        Some((clean, noisy)) => {
            let (c, n) = (ctx.read(run, clean)?, ctx.read(run, noisy)?);
            if (c.nrows(), c.ncols()) != (n.nrows(), n.ncols()) {
                return Err(anyhow!("clean and noisy mixtures differ in shape").into());
            }
            Some(realized_snr(&c, &n)?)
        }
        None => None,
    };
    let report = match_columns(&a, &a_hat);
    let line = json!({
        "comon": report.comon_index,
        "perm": report.matched_permutation,
        "per_column_error": report.per_column_error,
        "snr_db": snr_db,
    });
    run.params = line.clone();
    let text = serde_json::to_string(&line).context("encoding evaluation")?;
    println!("{text}");
    write_text(run, "eval.jsonl", &(text + "\n"))
}

pub fn bench(
    ctx: &Ctx,
    run: &mut Run,
    experiment: Experiment,
    trials: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let seed = ctx.seed(seed);
    let trials = trials.unwrap_or(experiment.default_trials());
    run.seed = Some(seed);
    run.params = json!({ "experiment": experiment, "trials": trials });
    let name = serde_json::to_value(experiment).context("encoding experiment")?;
    run.arg("experiment", name.as_str().unwrap_or_default());
    run.arg("trials", trials);
    run.arg("seed", seed);
    if trials == 0 {
        return Err(anyhow!("--trials must be positive").into());
    }

    let records = run_experiment(experiment, trials, seed).map_err(Failure::Algorithm)?;
    let summary = summarize(&records);
    let mut out = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut out, r).context("encoding record")?;
        out.push(b'\n');
    }
    for g in &summary {
        serde_json::to_writer(&mut out, &json!({ "summary": g })).context("encoding summary")?;
        out.push(b'\n');
    }
    let path = run.output("results.jsonl");
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&out))
        .with_context(|| format!("writing {}", path.display()))?;

    for g in &summary {
        let snr = g.snr_db.map(|s| format!("{s:>5} dB")).unwrap_or_else(|| "noiseless".into());
        println!(
            "{snr} {:<5} trials {:>3} failures {:>3} median {:.4e} max {:.4e}",
            method_name(g.denoise),
            g.trials,
            g.failures,
            g.median_comon,
            g.max_comon
        );
    }
    Ok(())
}
