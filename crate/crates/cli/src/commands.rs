use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use tubekit::association::{run_association, AssociationConfig, Tube};
use tubekit::autolabel::{self, AutolabelConfig, CandidateTube};
use tubekit::exposure::{simulate_decoding, ExposureConfig};
use tubekit::grounding_eval::{drift_profile, evaluate, select_tube, FrameInterval, Prediction};
use tubekit::mining::{mine_best_tube, score_tubes, CostWeights};
use tubekit::simulator::{generate_scene, SceneConfig};
use tubekit::ttreg::{grad_check as check_gradients, ttreg_gradients, ttreg_losses, MinedTube, TtregWeights};
use tubekit::{BoundingBox, GtTube};

use crate::format::{
    round_floats, to_compact, to_pretty, CandidatesFile, DetectionsFile, GtFile, LabelsFile, PredictionLine, TimedBox,
    TubeFile,
};
use crate::{
    AssociateArgs, AutolabelArgs, CliError, CliResult, CostArgs, EvalArgs, ExposureArgs, GradCheckArgs, LossesArgs,
    MineArgs, OutputArg, SelectArgs, SimulateArgs, TubeChoice,
};

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: cannot write: {e}", path.display())))
}

fn emit(output: &OutputArg, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match &output.out {
        Some(path) => write_file(path, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write to standard output: {e}"))),
    }
}

fn with_newline(mut s: String) -> String {
    s.push('\n');
    s
}

fn parse_interval(text: &str) -> CliResult<FrameInterval> {
    let bad = || CliError::Usage(format!("interval must look like TS:TE, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let ts = a.trim().parse().map_err(|_| bad())?;
    let te = b.trim().parse().map_err(|_| bad())?;
    FrameInterval::new(ts, te).map_err(|e| CliError::Usage(e.to_string()))
}

fn clip_interval(tubes: &[Tube<f64>]) -> CliResult<FrameInterval> {
    let first = tubes.iter().filter_map(Tube::first_timestamp).min();
    let last = tubes.iter().filter_map(Tube::last_timestamp).max();
    match (first, last) {
        (Some(a), Some(b)) => Ok(FrameInterval::new(a, b)?),
        _ => Err(CliError::Domain("tube file holds no records".into())),
    }
}

// ---------------------------------------------------------------- simulate

pub(crate) fn simulate(a: SimulateArgs, _stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = SceneConfig {
        frames: a.frames,
        objects: a.objects,
        feature_dim: a.feature_dim,
        appearance_drift: a.appearance_drift,
        appearance_walk: a.appearance_walk,
        motion_step: a.motion_step,
        distractor_rate: a.distractor_rate,
        detection_noise: a.detection_noise,
        confidence_noise: a.confidence_noise,
        seed: a.seed,
    };
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(CliError::Domain(format!("fps must be positive, got {}", a.fps)));
    }
    let scene = generate_scene(&cfg)?;
    let video_id = a.video_id.unwrap_or_else(|| format!("sim-{}", a.seed));

    let mut detections = DetectionsFile::from_frames(&video_id, a.fps, scene.frames.clone());
    detections.header.feature_dim = cfg.feature_dim;
    write_file(&a.detections, &detections.to_jsonl())?;
    write_file(&a.gt, &with_newline(to_compact(&GtFile::from_tube(&video_id, &scene.gt))))?;
    if let Some(path) = &a.labels {
        let labels = LabelsFile {
            video_id,
            labels: scene.labels.iter().map(|row| row.iter().map(|id| id.code()).collect()).collect(),
        };
        write_file(path, &with_newline(to_compact(&labels)))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- associate

fn associate_one(path: &Path, cfg: &AssociationConfig<f64>, with_features: bool) -> CliResult<(String, String)> {
    let file = DetectionsFile::load(path)?;
    let tubes = run_association(&file.frames, cfg).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let doc = TubeFile::from_tubes(&file.header.video_id, cfg.n_q, &tubes, with_features);
    Ok((file.header.video_id, with_newline(to_pretty(&doc))))
}

pub(crate) fn associate(a: AssociateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = AssociationConfig { n_q: a.n_q, alpha: a.alpha };
    cfg.validate()?;
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if a.inputs.len() > 1 && a.out_dir.is_none() {
        return Err(CliError::Usage("several inputs need --out-dir".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker threads: {e}")))?;
    let results: Vec<CliResult<(String, String)>> =
        pool.install(|| a.inputs.par_iter().map(|p| associate_one(p, &cfg, a.with_features)).collect());
    let mut outputs = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let Some(dir) = &a.out_dir else {
        let (_, text) = outputs.pop().expect("exactly one input");
        return emit(&OutputArg { out: a.out }, &text, stdout);
    };
    outputs.sort_by(|x, y| x.0.cmp(&y.0));
    if let Some(w) = outputs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::Domain(format!("video_id {:?} appears in more than one input", w[0].0)));
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: cannot create: {e}", dir.display())))?;
    for (video_id, text) in &outputs {
        let path: PathBuf = dir.join(format!("{video_id}.tubes.json"));
        write_file(&path, text)?;
        writeln!(stdout, "{}", path.display()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- mine

#[derive(Serialize)]
struct CostRow {
    slot_id: usize,
    c_cls: f64,
    c_bbox: f64,
    c_giou: f64,
    c_temp: f64,
    total: f64,
}

#[derive(Serialize)]
struct MineReport {
    video_id: String,
    weights: BTreeMap<&'static str, f64>,
    best_index: usize,
    best_slot_id: usize,
    costs: Vec<CostRow>,
}

fn cost_weights(w: &CostArgs) -> CostWeights<f64> {
    CostWeights {
        lambda_cls: w.lambda_cls,
        lambda_bbox: w.lambda_bbox,
        lambda_giou: w.lambda_giou,
        lambda_temp: w.lambda_temp,
    }
}

fn check_same_clip(tube_id: &str, gt_id: &str) -> CliResult<()> {
    if tube_id != gt_id {
        return Err(CliError::Domain(format!("tubes are for {tube_id:?} but ground truth is for {gt_id:?}")));
    }
    Ok(())
}

pub(crate) fn mine(a: MineArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (file, tubes) = TubeFile::load(&a.tubes)?;
    let (gt_id, gt) = GtFile::load_one(&a.gt)?;
    check_same_clip(&file.video_id, &gt_id)?;
    let weights = cost_weights(&a.weights);
    let (best, _) = mine_best_tube(&tubes, &gt, &weights)?;
    let costs = score_tubes(&tubes, &gt, &weights)?;

    if let Some(path) = &a.emit_tube {
        let winner = TubeFile { video_id: file.video_id.clone(), n_q: file.n_q, tubes: vec![file.tubes[best].clone()] };
        write_file(path, &with_newline(to_pretty(&winner)))?;
    }
    let report = MineReport {
        video_id: file.video_id,
        weights: BTreeMap::from([
            ("lambda_cls", weights.lambda_cls),
            ("lambda_bbox", weights.lambda_bbox),
            ("lambda_giou", weights.lambda_giou),
            ("lambda_temp", weights.lambda_temp),
        ]),
        best_index: best,
        best_slot_id: tubes[best].slot_id,
        costs: tubes
            .iter()
            .zip(costs)
            .map(|(t, c)| CostRow { slot_id: t.slot_id, c_cls: c.c_cls, c_bbox: c.c_bbox, c_giou: c.c_giou, c_temp: c.c_temp, total: c.total })
            .collect(),
    };
    emit(&a.output, &with_newline(to_pretty(&report)), stdout)
}

// ---------------------------------------------------------------- losses / grad-check

fn chosen_tube(choice: &TubeChoice) -> CliResult<(String, usize, MinedTube<f64>)> {
    let (file, tubes) = TubeFile::load(&choice.tubes)?;
    let tube = match choice.slot {
        None => tubes.first().ok_or_else(|| CliError::Domain("tube file holds no tubes".into()))?,
        Some(slot) => tubes
            .iter()
            .find(|t| t.slot_id == slot)
            .ok_or_else(|| CliError::Domain(format!("no tube with slot_id {slot}")))?,
    };
    if file.tubes.iter().find(|e| e.slot_id == tube.slot_id).is_some_and(|e| e.records.iter().any(|r| r.embed.is_none())) {
        return Err(CliError::Domain(format!(
            "tube {} has no stored features; associate with --with-features",
            tube.slot_id
        )));
    }
    Ok((file.video_id, tube.slot_id, MinedTube::from_tube(tube)?))
}

#[derive(Serialize)]
struct GradientDoc {
    d_features: Vec<Vec<f64>>,
    d_boxes: Vec<[f64; 4]>,
}

#[derive(Serialize)]
struct LossesReport {
    video_id: String,
    slot_id: usize,
    lambda_temp: f64,
    lambda_feat: f64,
    feat: f64,
    geom: f64,
    total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradients: Option<GradientDoc>,
}

pub(crate) fn losses(a: LossesArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (video_id, slot_id, tube) = chosen_tube(&a.tube)?;
    let weights = TtregWeights { lambda_temp: a.lambda_temp, lambda_feat: a.lambda_feat };
    let r = ttreg_losses(&tube, &weights)?;
    let gradients = if a.gradients {
        let g = ttreg_gradients(&tube)?;
        Some(GradientDoc { d_features: g.d_features, d_boxes: g.d_boxes })
    } else {
        None
    };
    let report = LossesReport {
        video_id,
        slot_id,
        lambda_temp: weights.lambda_temp,
        lambda_feat: weights.lambda_feat,
        feat: r.feat,
        geom: r.geom,
        total: r.total,
        gradients,
    };
    emit(&a.output, &with_newline(to_pretty(&report)), stdout)
}

#[derive(Serialize)]
struct GradCheckDoc {
    video_id: String,
    slot_id: usize,
    h: f64,
    max_rel_error: f64,
    max_abs_error: f64,
    max_abs_analytic: f64,
    max_abs_numeric: f64,
    checked: usize,
    kink_components: usize,
    kink_max_abs_numeric: f64,
}

pub(crate) fn grad_check(a: GradCheckArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if !(a.h.is_finite() && a.h > 0.0) {
        return Err(CliError::Usage(format!("--h must be positive, got {}", a.h)));
    }
    let (video_id, slot_id, tube) = chosen_tube(&a.tube)?;
    let r = check_gradients(&tube, a.h)?;
    let doc = GradCheckDoc {
        video_id,
        slot_id,
        h: a.h,
        max_rel_error: r.max_rel_error,
        max_abs_error: r.max_abs_error,
        max_abs_analytic: r.max_abs_analytic,
        max_abs_numeric: r.max_abs_numeric,
        checked: r.checked,
        kink_components: r.kink_components,
        kink_max_abs_numeric: r.kink_max_abs_numeric,
    };
    emit(&a.output, &with_newline(to_pretty(&doc)), stdout)
}

// ---------------------------------------------------------------- select / eval

pub(crate) fn select(a: SelectArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (file, tubes) = TubeFile::load(&a.tubes)?;
    let clip = clip_interval(&tubes)?;
    let interval = match (&a.interval, &a.gt) {
        (Some(text), _) => parse_interval(text)?,
        (None, Some(path)) => {
            let (gt_id, gt) = GtFile::load_one(path)?;
            check_same_clip(&file.video_id, &gt_id)?;
            FrameInterval::new(gt.ts(), gt.te())?
        }
        (None, None) => clip,
    };
    if interval.start() < clip.start() || interval.end() > clip.end() {
        return Err(CliError::Domain(format!(
            "interval [{}, {}] lies outside clip [{}, {}]",
            interval.start(),
            interval.end(),
            clip.start(),
            clip.end()
        )));
    }
    let best = select_tube(&tubes)?;
    let tube = &tubes[best];
    let boxes = interval
        .frames()
        .map(|t| {
            tube.at(t)
                .map(|r| TimedBox { t, bbox: r.bbox })
                .ok_or_else(|| CliError::Domain(format!("tube {} has no record at frame {t}", tube.slot_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let line = PredictionLine {
        video_id: file.video_id,
        ts: interval.start(),
        te: interval.end(),
        slot_id: tube.slot_id,
        score: tube.mean_confidence(),
        boxes,
    };
    emit(&a.output, &with_newline(to_compact(&line)), stdout)
}

#[derive(Serialize)]
struct SampleRow {
    video_id: String,
    t_iou: f64,
    v_iou: f64,
}

#[derive(Serialize)]
struct TauRow {
    tau: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct EvalDoc {
    count: usize,
    m_tiou: f64,
    m_viou: f64,
    viou_at: Vec<TauRow>,
    per_sample: Vec<SampleRow>,
}

fn nine_digits(v: f64) -> String {
    let mut value = serde_json::json!(v);
    round_floats(&mut value);
    value.to_string()
}

pub(crate) fn eval(a: EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if let Some(t) = a.taus.iter().find(|t| !t.is_finite()) {
        return Err(CliError::Usage(format!("tau must be finite, got {t}")));
    }
    let preds = PredictionLine::load_all(&a.pred)?;
    let mut gts: BTreeMap<String, GtTube> = BTreeMap::new();
    for path in &a.gt {
        for (id, gt) in GtFile::load_all(path)? {
            if gts.insert(id.clone(), gt).is_some() {
                return Err(CliError::Domain(format!("ground truth for {id:?} given twice")));
            }
        }
    }
    let mut seen = BTreeMap::new();
    let mut samples: Vec<(Prediction<f64>, GtTube)> = Vec::with_capacity(preds.len());
    for (id, pred) in &preds {
        if seen.insert(id.clone(), ()).is_some() {
            return Err(CliError::Domain(format!("more than one prediction for {id:?}")));
        }
        let gt = gts.get(id).ok_or_else(|| CliError::Domain(format!("no ground truth for {id:?}")))?;
        samples.push((pred.clone(), gt.clone()));
    }
    let report = evaluate(&samples, &a.taus)?;

    if let Some(path) = &a.drift {
        let mut csv = String::from("video_id,part1,part2,part3,part4,part5\n");
        let mut mean = [0.0; 5];
        for ((id, _), (pred, gt)) in preds.iter().zip(&samples) {
            let profile = drift_profile(pred, gt).map_err(|e| CliError::Domain(format!("{id}: {e}")))?;
            let cells: Vec<String> = profile.iter().map(|&v| nine_digits(v)).collect();
            csv.push_str(&format!("{id},{}\n", cells.join(",")));
            for (m, v) in mean.iter_mut().zip(profile) {
                *m += v / samples.len() as f64;
            }
        }
        let cells: Vec<String> = mean.iter().map(|&v| nine_digits(v)).collect();
        csv.push_str(&format!("mean,{}\n", cells.join(",")));
        write_file(path, &csv)?;
    }

    let doc = EvalDoc {
        count: report.count,
        m_tiou: report.m_tiou,
        m_viou: report.m_viou,
        viou_at: report.viou_at.iter().map(|s| TauRow { tau: s.tau, fraction: s.fraction }).collect(),
        per_sample: preds
            .iter()
            .zip(&report.per_sample)
            .map(|((id, _), s)| SampleRow { video_id: id.clone(), t_iou: s.t_iou, v_iou: s.v_iou })
            .collect(),
    };
    emit(&a.output, &with_newline(to_pretty(&doc)), stdout)
}

// ---------------------------------------------------------------- exposure

#[derive(Serialize)]
struct ExposureEcho {
    frames: usize,
    tokens_per_frame: usize,
    eps: f64,
    trials: usize,
    drift_step: f64,
    seed: u64,
}

#[derive(Serialize)]
struct ExposureDoc {
    config: ExposureEcho,
    sequence_length: usize,
    analytic: f64,
    linearized: f64,
    empirical: f64,
    standard_error: f64,
    profile: [f64; 5],
    note: &'static str,
}

pub(crate) fn exposure(a: ExposureArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = ExposureConfig {
        tokens_per_frame: a.tokens_per_frame,
        per_step_error: a.eps,
        trials: a.trials,
        drift_step: a.drift_step,
        seed: a.seed,
    };
    let boxes: Vec<BoundingBox> = match &a.gt {
        Some(path) => GtFile::load_one(path)?.1.boxes().to_vec(),
        None => vec![BoundingBox::new(0.4, 0.4, 0.6, 0.6)?; a.frames],
    };
    let r = simulate_decoding(&cfg, &boxes)?;
    let doc = ExposureDoc {
        config: ExposureEcho {
            frames: boxes.len(),
            tokens_per_frame: cfg.tokens_per_frame,
            eps: cfg.per_step_error,
            trials: cfg.trials,
            drift_step: cfg.drift_step,
            seed: cfg.seed,
        },
        sequence_length: r.sequence_length,
        analytic: r.analytic,
        linearized: r.linearized,
        empirical: r.empirical,
        standard_error: r.standard_error,
        profile: r.profile,
        note: "profile uses a modelled post-error random walk of the box center",
    };
    emit(&a.output, &with_newline(to_pretty(&doc)), stdout)
}

// ---------------------------------------------------------------- autolabel

pub(crate) fn autolabel(a: AutolabelArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let interval = parse_interval(&a.interval)?;
    let cfg = AutolabelConfig { appearance_threshold: a.appearance_threshold, coverage_threshold: a.coverage_threshold };
    let (video_id, candidates) = CandidatesFile::load(&a.candidates)?;
    let out = autolabel::autolabel(&candidates, &interval, &cfg, CandidateTube::mean_observed_confidence)?;
    for (i, j) in &out.merged.overlapping {
        let _ = writeln!(stderr, "tubekit: merged tubes {i} and {j} match but overlap in time; kept apart");
    }
    match out.label {
        Some(label) => emit(&a.output, &with_newline(to_compact(&GtFile::from_tube(&video_id, &label.gt))), stdout),
        None => {
            let _ = writeln!(
                stderr,
                "tubekit: no tube covers {} of frames [{}, {}]; clip discarded",
                a.coverage_threshold,
                interval.start(),
                interval.end()
            );
            Ok(())
        }
    }
}
