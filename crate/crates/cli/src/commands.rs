use std::collections::HashMap;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use softpose::augment::{intrinsics_from_hfov, sample_perturbation, sim2real, warp_rotation};
use softpose::datakit::{generate, read_labels, read_labels_from, write_labels_to};
use softpose::metrics::{eval_report, evaluate_pair};
use softpose::seeding::{item_rng, stream_of};
use softpose::toyhead::{self, make_toy_dataset, Histogram, TrainConfig};
use softpose::{
    build_grid, decode, default_merge_tolerance, encode, encode_multi, fit_mixture, EmConfig, FrustumRange,
    GrayImage, KernelParams, LabeledSample, MixtureModel, OrientationGrid, Quaternion, Sim2RealConfig,
};

use crate::{
    AugmentArgs, CodecAction, CodecArgs, Command, EmfitArgs, EvalArgs, GenArgs, GridAction, GridArgs, TrainToyArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Grid {
            action: GridAction::Dump(a),
        } => {
            let grid = grid_from(&a.grid)?;
            let mut buf = Vec::new();
            grid.write_csv(&mut buf)?;
            emit(a.out.as_deref(), &buf)
        }
        Command::Encode(a) | Command::Codec { action: CodecAction::Encode(a) } => encode_cmd(a),
        Command::Decode(a) | Command::Codec { action: CodecAction::Decode(a) } => decode_cmd(a),
        Command::Emfit(a) => emfit(a),
        Command::Augment(a) => augment(a),
        Command::Eval(a) => eval(a),
        Command::Traintoy(a) => traintoy(a),
    }
}

fn grid_from(a: &GridArgs) -> Result<OrientationGrid> {
    let tol = a.merge_tol.unwrap_or_else(|| default_merge_tolerance(a.m));
    Ok(build_grid(a.m, tol)?)
}

/// Writes to `out`, or to stdout when absent.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            Ok(stdout.flush()?)
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn read_input(input: Option<&Path>) -> Result<String> {
    match input {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let k = intrinsics_from_hfov(a.width, a.height, a.hfov_deg.to_radians())?;
    let fr = FrustumRange::new(a.min_range, a.max_range, a.margin_px)?;
    let samples = generate(&k, &fr, a.count, a.seed)?;
    let mut buf = Vec::new();
    write_labels_to(&samples, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

#[derive(Debug, Deserialize)]
struct WeightedLabel {
    q: Quaternion,
    weight: f64,
}

/// Either one label `{"q": [w,x,y,z]}` or a weighted set `{"labels": [...]}`.
#[derive(Debug, Deserialize)]
struct EncodeInput {
    q: Option<Quaternion>,
    labels: Option<Vec<WeightedLabel>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivationsDoc {
    m: usize,
    delta: f64,
    merge_tol: f64,
    activations: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ActivationsInput {
    activations: Vec<f64>,
}

fn encode_cmd(a: CodecArgs) -> Result<()> {
    let grid = grid_from(&a.grid)?;
    let params = KernelParams::new(a.delta, a.grid.m)?;
    let input: EncodeInput = serde_json::from_str(&read_input(a.input.as_deref())?).context("parsing label JSON")?;
    let assignment = match (input.q, input.labels) {
        (Some(q), None) => encode(&grid, &q, &params),
        (None, Some(labels)) => {
            let labels: Vec<_> = labels.into_iter().map(|l| (l.q, l.weight)).collect();
            encode_multi(&grid, &labels, &params)?
        }
        _ => bail!("input must contain exactly one of \"q\" or \"labels\""),
    };
    emit_json(
        a.out.as_deref(),
        &ActivationsDoc {
            m: grid.m_per_dim(),
            delta: a.delta,
            merge_tol: grid.merge_tolerance(),
            activations: assignment.into_values(),
        },
    )
}

fn read_activations(grid: &OrientationGrid, input: Option<&Path>) -> Result<softpose::SoftAssignment> {
    let doc: ActivationsInput = serde_json::from_str(&read_input(input)?).context("parsing activation JSON")?;
    Ok(softpose::SoftAssignment::new(doc.activations, grid)?)
}

fn decode_cmd(a: CodecArgs) -> Result<()> {
    let grid = grid_from(&a.grid)?;
    let q = decode(&grid, &read_activations(&grid, a.input.as_deref())?)?;
    emit_json(a.out.as_deref(), &serde_json::json!({ "q": q }))
}

#[derive(Serialize)]
struct EmfitOutput<'a> {
    #[serde(flatten)]
    model: &'a MixtureModel,
    #[serde(rename = "K")]
    k: usize,
}

fn emfit(a: EmfitArgs) -> Result<()> {
    let grid = grid_from(&a.grid)?;
    let params = KernelParams::new(a.delta, a.grid.m)?;
    let mut config = EmConfig::for_kernel(&params);
    if let Some(k) = a.k_max {
        config.k_max = k;
    }
    if let Some(t) = a.ll_threshold {
        config.ll_threshold = t;
    }
    if let Some(n) = a.max_iter {
        config.max_iter = n;
    }
    let activations = read_activations(&grid, a.input.as_deref())?;
    let model = fit_mixture(&grid, &activations, &config)?;
    emit_json(
        a.out.as_deref(),
        &EmfitOutput {
            model: &model,
            k: model.k(),
        },
    )
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            GrayImage::new(w, h, g.into_raw())?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            GrayImage::from_rgb(w, h, rgb.as_raw())?
        }
    };
    Ok(gray)
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width(), img.height(), img.pixels().to_vec())
        .ok_or_else(|| anyhow!("image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}

/// Output file name for a sample id; ids that are not plain file names are rejected.
fn output_name(id: &str) -> Result<String> {
    let plain = !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\']);
    if !plain {
        bail!("sample id {id:?} cannot be used as a file name");
    }
    Ok(format!("{id}.png"))
}

fn augment(a: AugmentArgs) -> Result<()> {
    if !(a.max_rot_deg >= 0.0 && a.max_rot_deg <= 180.0) {
        bail!("--max-rot-deg must be in [0, 180]");
    }
    let cfg = match &a.sim2real {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: Sim2RealConfig = serde_json::from_str(&text).context("parsing sim2real config")?;
            cfg.validate()?;
            Some(cfg)
        }
        None => None,
    };
    let mut samples = read_labels(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    samples.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    fs::create_dir_all(&a.out_dir)?;
    let max_angle = a.max_rot_deg.to_radians();

    let updated: Vec<LabeledSample> = samples
        .par_iter()
        .map(|s| -> Result<LabeledSample> {
            let name = output_name(&s.sample_id)?;
            let src = match &s.image_path {
                Some(p) => a.in_dir.join(p),
                None => a.in_dir.join(&name),
            };
            let img = load_gray(&src)?;
            let k = intrinsics_from_hfov(img.width(), img.height(), a.hfov_deg.to_radians())?;
            let mut rng = item_rng(a.seed, stream_of(&s.sample_id));
            let r = sample_perturbation(&mut rng, max_angle);
            let (mut warped, pose) = warp_rotation(&img, &k, &r, &s.pose);
            if let Some(cfg) = &cfg {
                warped = sim2real(&warped, cfg, &mut rng)?;
            }
            save_gray(&warped, &a.out_dir.join(&name))?;
            Ok(LabeledSample {
                sample_id: s.sample_id.clone(),
                image_path: Some(name),
                pose,
            })
        })
        .collect::<Result<_>>()?;

    let mut buf = Vec::new();
    write_labels_to(&updated, &mut buf)?;
    let labels_out: PathBuf = a.out_dir.join("labels.jsonl");
    fs::write(&labels_out, buf).with_context(|| format!("writing {}", labels_out.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<LabeledSample>> {
        read_labels_from(BufReader::new(fs::File::open(p).with_context(|| format!("reading {}", p.display()))?))
            .with_context(|| format!("reading {}", p.display()))
    };
    let pred = read(&a.pred)?;
    let mut gt = read(&a.gt)?;
    gt.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    let pred_by_id: HashMap<&str, &LabeledSample> = pred.iter().map(|s| (s.sample_id.as_str(), s)).collect();

    let missing: Vec<&str> = gt
        .iter()
        .map(|s| s.sample_id.as_str())
        .filter(|id| !pred_by_id.contains_key(id))
        .collect();
    let gt_ids: std::collections::HashSet<&str> = gt.iter().map(|s| s.sample_id.as_str()).collect();
    let mut extra: Vec<&str> = pred
        .iter()
        .map(|s| s.sample_id.as_str())
        .filter(|id| !gt_ids.contains(id))
        .collect();
    extra.sort_unstable();
    if !missing.is_empty() {
        bail!("{} ground-truth ids have no prediction, first: {}", missing.len(), missing[0]);
    }
    if !extra.is_empty() {
        bail!("{} predictions have no ground truth, first: {}", extra.len(), extra[0]);
    }

    let records = gt
        .par_iter()
        .map(|g| evaluate_pair(g.sample_id.clone(), &pred_by_id[g.sample_id.as_str()].pose, &g.pose))
        .collect::<softpose::Result<Vec<_>>>()?;
    emit_json(a.out.as_deref(), &eval_report(&records, &a.edges)?)
}

#[derive(Serialize)]
struct EstimatorReport {
    median_deg: f64,
    histogram: Histogram,
}

#[derive(Serialize)]
struct ToyReport {
    symmetry: usize,
    count: usize,
    test_count: usize,
    epochs: usize,
    lr: f64,
    m: usize,
    delta: f64,
    seed: u64,
    n_bins: usize,
    epoch_losses: Vec<f64>,
    top1: EstimatorReport,
    top2: EstimatorReport,
    /// Test inputs per selected mixture size, indexed by K - 1.
    k_counts: Vec<usize>,
}

fn traintoy(a: TrainToyArgs) -> Result<()> {
    if !(a.bin_width_deg > 0.0 && a.bin_width_deg <= 180.0) {
        bail!("--bin-width-deg must be in (0, 180]");
    }
    let grid = build_grid(a.m, default_merge_tolerance(a.m))?;
    let params = KernelParams::new(a.delta, a.m)?;
    let train_set = make_toy_dataset(a.count, a.symmetry, &mut item_rng(a.seed, 0))?;
    let test_set = make_toy_dataset(a.test_count, a.symmetry, &mut item_rng(a.seed, 1))?;
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
    };
    let trained = toyhead::train(&train_set, &grid, &params, &config, &mut item_rng(a.seed, 2))?;
    let ev = toyhead::evaluate(&trained.head, &grid, &test_set, &EmConfig::for_kernel(&params))?;
    let report = ToyReport {
        symmetry: a.symmetry,
        count: a.count,
        test_count: a.test_count,
        epochs: a.epochs,
        lr: a.lr,
        m: a.m,
        delta: a.delta,
        seed: a.seed,
        n_bins: grid.len(),
        epoch_losses: trained.epoch_losses,
        top1: EstimatorReport {
            median_deg: ev.top1_median_deg(),
            histogram: Histogram::of(&ev.top1_errors_deg, a.bin_width_deg),
        },
        top2: EstimatorReport {
            median_deg: ev.top2_median_deg(),
            histogram: Histogram::of(&ev.top2_errors_deg, a.bin_width_deg),
        },
        k_counts: ev.k_counts,
    };
    emit_json(a.report.as_deref(), &report)
}
