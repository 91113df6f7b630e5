use std::path::{Path, PathBuf};

use clap::Args;
use mono3d_core::depth::{trend_sim, CameraModel, Scene, TrendSimConfig};
use mono3d_core::equivariance::{equivariance_error, toy_images, ScaleFilterBank, SesLayer, VanillaLayer};
use mono3d_core::geometry::{boxes_from_json, giou3d, iou2d, iou3d, voxel_iou3d_oracle, Box2D, Box3D};
use mono3d_core::loss_analysis::{
    sgd_convergence_sim, var_closed_form, var_monte_carlo, LossKind, NoiseLossSpec, SgdSimConfig,
};
use mono3d_core::nms::{
    compare_nms, PruneKind, PruneSpec, ScoredBoxSet, DEFAULT_MAX_GROUP_SIZE, DEFAULT_NT, DEFAULT_VALID_THRESHOLD,
};
use mono3d_core::target_loss::{assign_targets, ranking_rows};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::format::{Cell, Table};
use crate::{CliError, Experiment, Outcome};

/// Fills every unset field of `$a` from `$b`.
macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),* $(,)?) => {{
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )*
        $a
    }};
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsArgs {
    /// JSON box file.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Overlap threshold Nt [default: 0.4].
    #[arg(long)]
    pub nt: Option<f64>,
    /// Pruning function: hard, linear, exponential or sigmoidal [default: linear].
    #[arg(long)]
    pub prune: Option<PruneKind>,
    /// Temperature of the exponential and sigmoidal pruning functions.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Valid-box threshold on the rescore [default: 0.3].
    #[arg(long)]
    pub v: Option<f64>,
    /// Maximum group size [default: 100].
    #[arg(long)]
    pub alpha: Option<usize>,
    /// JSON ground-truth file; enables the ranking table.
    #[arg(long)]
    pub gts: Option<PathBuf>,
    /// Target-assignment quality threshold [default: 0.3].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Path of the ranking table [default: `<out>` with an `_ap` suffix].
    #[arg(long)]
    pub ap_out: Option<PathBuf>,
}

impl NmsArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; boxes, nt, prune, tau, v, alpha, gts, beta, ap_out)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceArgs {
    /// Noise standard deviations, comma separated [default: 1].
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Object lengths, comma separated [default: 4].
    #[arg(long, value_delimiter = ',')]
    pub ell: Option<Vec<f64>>,
    /// Losses, comma separated [default: l1,l2,dice].
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<LossKind>>,
    /// SGD trials per configuration [default: 10000].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte-Carlo samples of the gradient variance [default: 1000000].
    #[arg(long)]
    pub samples: Option<usize>,
    /// SGD steps per trial [default: 1000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Standard deviation of the initial weights [default: 0.1].
    #[arg(long)]
    pub w0_std: Option<f64>,
}

impl ConvergenceArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; sigma, ell, kinds, trials, samples, steps, w0_std)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthArgs {
    /// Smallest height change in meters [default: -0.7].
    #[arg(long, allow_negative_numbers = true)]
    pub dh_min: Option<f64>,
    /// Largest height change in meters [default: 0.76].
    #[arg(long, allow_negative_numbers = true)]
    pub dh_max: Option<f64>,
    /// Number of evenly spaced height changes, end points included [default: 20].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Objects in the synthetic scene [default: 200].
    #[arg(long)]
    pub objects: Option<usize>,
    /// Nearest object depth in meters [default: 10].
    #[arg(long)]
    pub z_min: Option<f64>,
    /// Farthest object depth in meters [default: 50].
    #[arg(long)]
    pub z_max: Option<f64>,
    /// Noise draws per object [default: 100].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Depth noise standard deviation in meters [default: 1].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Depth-versus-row slope of the regressed model [default: 60/(image height - cv)].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Focal length in pixels [default: 707].
    #[arg(long)]
    pub focal: Option<f64>,
    /// Principal point column [default: 600].
    #[arg(long)]
    pub cu: Option<f64>,
    /// Principal point row [default: 180].
    #[arg(long)]
    pub cv: Option<f64>,
    /// Training camera height in meters [default: 1.65].
    #[arg(long)]
    pub height: Option<f64>,
    /// Image height in pixels [default: 370].
    #[arg(long)]
    pub image_height: Option<f64>,
}

impl DepthArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; dh_min, dh_max, steps, objects, z_min, z_max, trials, noise, beta,
            focal, cu, cv, height, image_height)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivarianceArgs {
    /// Image scale factors, comma separated [default: 1/1.2,1/1.1,1].
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Odd filter size [default: 7].
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of toy images [default: 20].
    #[arg(long)]
    pub images: Option<usize>,
    /// Side of each toy image [default: 64].
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Base filter scale [default: 1].
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Relative scale step of the filter bank [default: 0.1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Highest Hermite order per axis [default: 2].
    #[arg(long)]
    pub order: Option<usize>,
}

impl EquivarianceArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; scales, size, images, image_size, sigma0, alpha, order)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GiouArgs {
    /// JSON box file; every pair is tabulated.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Random pairs when no box file is given [default: 20].
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Voxel oracle cells per meter [default: 64].
    #[arg(long)]
    pub resolution: Option<f64>,
}

impl GiouArgs {
    pub fn merge(mut self, file: Self) -> Self {
        merge_fields!(self, file; boxes, pairs, resolution)
    }
}

fn read_boxes(path: &Path) -> Result<Vec<Box3D>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    boxes_from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn finish(table: &Table, path: &Path, summary: String) -> Result<Outcome, CliError> {
    table.ensure_finite()?;
    table.write(path)?;
    Ok(Outcome {
        summary: format!("{summary}\nwrote {}", path.display()),
        outputs: vec![path.to_path_buf()],
    })
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

pub fn nms_compare(args: &NmsArgs, exp: &Experiment) -> Result<Outcome, CliError> {
    let path = args
        .boxes
        .as_deref()
        .ok_or_else(|| CliError::Usage("nms-compare needs --boxes".into()))?;
    let boxes = read_boxes(path)?;
    let spec = PruneSpec::new(args.prune.unwrap_or(PruneKind::Linear), args.nt.unwrap_or(DEFAULT_NT), args.tau)?;
    let v = args.v.unwrap_or(DEFAULT_VALID_THRESHOLD);
    let set = ScoredBoxSet::from_boxes(&boxes);
    let cmp = compare_nms(&set, &spec, v, args.alpha.unwrap_or(DEFAULT_MAX_GROUP_SIZE))?;

    let mut table = Table::new(&["box_id", "score", "rescore_classical", "rescore_soft", "rescore_groomed", "kept"]);
    for r in &cmp.rows {
        table.push(vec![
            r.box_id.into(),
            r.score.into(),
            r.rescore_classical.into(),
            r.rescore_soft.into(),
            r.rescore_groomed.into(),
            r.kept.into(),
        ]);
    }
    let kept = cmp.rows.iter().filter(|r| r.kept).count();
    let classical = cmp.rows.iter().filter(|r| r.rescore_classical > 0.0).count();
    let mut summary = format!(
        "nms-compare: {} boxes, {kept} kept by GrooMeD-NMS (v = {v}), {classical} by classical NMS",
        boxes.len()
    );
    let mut outcome_extra = Vec::new();
    if let Some(gt_path) = &args.gts {
        let gts = read_boxes(gt_path)?;
        let assignment = assign_targets(&boxes, &gts, args.beta.unwrap_or(0.3))?;
        let groomed: Vec<f64> = cmp.rows.iter().map(|r| r.rescore_groomed).collect();
        let rows = ranking_rows(&groomed, &assignment.labels)?;
        let mut ap_table = Table::new(&["box_id", "rescore", "label", "rank", "ap"]);
        for r in &rows {
            ap_table.push(vec![
                r.box_id.into(),
                r.rescore.into(),
                (r.label as usize).into(),
                r.rank.into(),
                r.ap.into(),
            ]);
        }
        let ap_path = args.ap_out.clone().unwrap_or_else(|| suffixed(&exp.output_path, "_ap"));
        ap_table.ensure_finite()?;
        ap_table.write(&ap_path)?;
        let ap = rows.first().map_or(1.0, |r| r.ap);
        summary.push_str(&format!(
            "\n{} positives of {} ground truths, AP = {ap:.4}\nwrote {}",
            assignment.positives(),
            gts.len(),
            ap_path.display()
        ));
        outcome_extra.push(ap_path);
    }
    let mut outcome = finish(&table, &exp.output_path, summary)?;
    outcome.outputs.extend(outcome_extra);
    Ok(outcome)
}

pub fn convergence_sim(args: &ConvergenceArgs, exp: &Experiment) -> Result<Outcome, CliError> {
    let base = SgdSimConfig::default();
    let config = SgdSimConfig {
        steps: args.steps.unwrap_or(base.steps),
        trials: args.trials.unwrap_or(base.trials),
        w0_std: args.w0_std.unwrap_or(base.w0_std),
        seed: exp.seed,
        ..base
    };
    let sigmas = args.sigma.clone().unwrap_or_else(|| vec![1.0]);
    let ells = args.ell.clone().unwrap_or_else(|| vec![4.0]);
    let kinds = args.kinds.clone().unwrap_or_else(|| LossKind::ALL.to_vec());
    let samples = args.samples.unwrap_or(1_000_000);
    if sigmas.is_empty() || ells.is_empty() || kinds.is_empty() {
        return Err(CliError::Usage("--sigma, --ell and --kinds must not be empty".into()));
    }

    let mut table = Table::new(&["kind", "sigma", "ell", "var_closed", "var_mc", "var_mc_se", "sim_deviation"]);
    let mut best: Vec<(f64, f64, LossKind, f64)> = Vec::new();
    for &sigma in &sigmas {
        for &ell in &ells {
            for &kind in &kinds {
                let spec = NoiseLossSpec::new(kind, sigma, ell)?;
                let mc = var_monte_carlo(&spec, samples, exp.seed)?;
                let sim = sgd_convergence_sim(&spec, &config)?;
                table.push(vec![
                    kind.name().into(),
                    sigma.into(),
                    ell.into(),
                    var_closed_form(&spec).into(),
                    mc.variance.into(),
                    mc.se.into(),
                    sim.mean_deviation.into(),
                ]);
                match best.iter_mut().find(|b| b.0 == sigma && b.1 == ell) {
                    Some(b) if sim.mean_deviation < b.3 => *b = (sigma, ell, kind, sim.mean_deviation),
                    Some(_) => {}
                    None => best.push((sigma, ell, kind, sim.mean_deviation)),
                }
            }
        }
    }
    let lines: Vec<String> = best
        .iter()
        .map(|(s, l, k, d)| format!("  sigma = {s}, ell = {l}: {k} converges closest ({d:.6})"))
        .collect();
    let summary = format!(
        "convergence-sim: {} configurations, {} trials of {} steps\n{}",
        table.rows.len(),
        config.trials,
        config.steps,
        lines.join("\n")
    );
    finish(&table, &exp.output_path, summary)
}

pub fn depth_trend(args: &DepthArgs, exp: &Experiment) -> Result<Outcome, CliError> {
    let cam = CameraModel::level(
        args.focal.unwrap_or(707.0),
        args.cu.unwrap_or(600.0),
        args.cv.unwrap_or(180.0),
        args.height.unwrap_or(1.65),
        args.image_height.unwrap_or(370.0),
    )?;
    let (lo, hi) = (args.dh_min.unwrap_or(-0.7), args.dh_max.unwrap_or(0.76));
    let steps = args.steps.unwrap_or(20);
    if steps == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(CliError::Usage("need --steps >= 1 and finite --dh-min <= --dh-max".into()));
    }
    let deltas: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { lo } else { lo + (hi - lo) * i as f64 / (steps - 1) as f64 })
        .collect();
    let (z_min, z_max) = (args.z_min.unwrap_or(10.0), args.z_max.unwrap_or(50.0));
    if !(z_min > 0.0 && z_min < z_max && z_max.is_finite()) {
        return Err(CliError::Usage("need 0 < --z-min < --z-max".into()));
    }
    let objects = args.objects.unwrap_or(200);
    if objects == 0 {
        return Err(CliError::Usage("--objects must be positive".into()));
    }
    let scene = Scene::random(objects, (z_min, z_max), exp.seed);
    let config = TrendSimConfig {
        beta: args.beta.unwrap_or_else(|| cam.default_beta()),
        noise_sigma: args.noise.unwrap_or(1.0),
        trials: args.trials.unwrap_or(100),
        seed: exp.seed.wrapping_add(1),
    };
    let rows = trend_sim(&cam, &deltas, &scene, &config)?;

    let mut table = Table::new(&["dh", "mean_err_ground", "mean_err_regressed", "mean_err_merged", "se"]);
    for r in &rows {
        table.push(vec![
            r.dh.into(),
            r.mean_err_ground.into(),
            r.mean_err_regressed.into(),
            r.mean_err_merged.into(),
            r.se().into(),
        ]);
    }
    let last = rows.last().expect("at least one row");
    let summary = format!(
        "depth-trend: {} height changes, {} objects x {} trials\n  at dh = {}: ground {:+.4} m, regressed {:+.4} m, merged {:+.4} m",
        rows.len(),
        objects,
        config.trials,
        last.dh,
        last.mean_err_ground,
        last.mean_err_regressed,
        last.mean_err_merged
    );
    finish(&table, &exp.output_path, summary)
}

pub fn equivariance_check(args: &EquivarianceArgs, exp: &Experiment) -> Result<Outcome, CliError> {
    let order = args.order.unwrap_or(2);
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let weights = (0..(order + 1) * (order + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bank = ScaleFilterBank::from_alpha(
        args.sigma0.unwrap_or(1.0),
        args.alpha.unwrap_or(0.1),
        args.size.unwrap_or(7),
        order,
        weights,
    )?;
    let scales = args.scales.clone().unwrap_or_else(|| vec![1.0 / 1.2, 1.0 / 1.1, 1.0]);
    if scales.is_empty() {
        return Err(CliError::Usage("--scales must not be empty".into()));
    }
    let images = toy_images(args.images.unwrap_or(20), args.image_size.unwrap_or(64), exp.seed.wrapping_add(1))?;
    if images.is_empty() {
        return Err(CliError::Usage("--images must be positive".into()));
    }
    let ses = equivariance_error(&SesLayer::new(bank.clone()), &images, &scales)?;
    let vanilla = equivariance_error(&VanillaLayer::from_bank(&bank)?, &images, &scales)?;

    let mut table = Table::new(&["scale", "delta_ses", "delta_vanilla"]);
    for (a, b) in ses.per_scale.iter().zip(&vanilla.per_scale) {
        table.push(vec![a.scale.into(), a.delta.into(), b.delta.into()]);
    }
    let show = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |d| format!("{d:.3e}"));
    let summary = format!(
        "equivariance-check: {} images, {} scales\n  mean delta: SES {}, single-scale {}",
        images.len(),
        scales.len(),
        show(ses.mean),
        show(vanilla.mean)
    );
    finish(&table, &exp.output_path, summary)
}

fn random_box(rng: &mut ChaCha8Rng) -> Result<Box3D, CliError> {
    let center = [rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
    let dims = [rng.random_range(1.0..4.0), rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)];
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
    let (w, h) = (rng.random_range(10.0..60.0), rng.random_range(10.0..60.0));
    Ok(Box3D::new(center, dims, yaw, 1.0, Box2D::new(x, y, x + w, y + h)?)?)
}

pub fn giou_table(args: &GiouArgs, exp: &Experiment) -> Result<Outcome, CliError> {
    let pairs: Vec<(usize, usize, Box3D, Box3D)> = match &args.boxes {
        Some(path) => {
            let boxes = read_boxes(path)?;
            let mut out = Vec::new();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    out.push((i, j, boxes[i], boxes[j]));
                }
            }
            out
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
            (0..args.pairs.unwrap_or(20))
                .map(|k| Ok((2 * k, 2 * k + 1, random_box(&mut rng)?, random_box(&mut rng)?)))
                .collect::<Result<_, CliError>>()?
        }
    };
    let resolution = args.resolution.unwrap_or(64.0);
    let mut table = Table::new(&["a", "b", "iou2d", "iou3d", "giou3d", "voxel_iou3d"]);
    let mut worst: f64 = 0.0;
    for (ia, ib, a, b) in &pairs {
        let exact = iou3d(a, b);
        let voxel = voxel_iou3d_oracle(a, b, resolution)?;
        worst = worst.max((exact - voxel).abs());
        table.push(vec![
            Cell::Int(*ia),
            Cell::Int(*ib),
            iou2d(&a.box2d, &b.box2d).into(),
            exact.into(),
            giou3d(a, b)?.into(),
            voxel.into(),
        ]);
    }
    let summary = format!(
        "giou-table: {} pairs, max |iou3d - voxel| = {worst:.4} at {resolution} cells/m",
        pairs.len()
    );
    finish(&table, &exp.output_path, summary)
}
