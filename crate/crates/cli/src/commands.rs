use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use eventvad::attention::{cosine_matrix, SimilarityDump};
use eventvad::evaluation::{evaluate_corpus, read_annotations, roc_points, Prf};
use eventvad::evaluation::{match_boundaries, GroundTruth};
use eventvad::features::{read_features, write_features, FrameFeatures};
use eventvad::graph::GraphDump;
use eventvad::pipeline::Segmenter;
use eventvad::scoring::{
    events_from_boundaries, parse_fixtures, score_events, DetectionResult, EventScorer,
    FrameDirectory, FrameSource, HttpScorer, InflightLimiter, MockScorer, NoFrames, PartialReport,
    ScoringError, Seeds,
};
use eventvad::synth::{generate, random_spec, SynthParams, SynthTruth};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{EvaluateArgs, ScoreArgs, SegmentArgs, SweepArgs, SynthArgs};

/// Maps `items` on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every item mapped"))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::write(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::write(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::bad_path(dir, &e.to_string()))
}

fn load(path: &Path) -> Result<FrameFeatures, CliError> {
    read_features(path).map_err(|e| CliError::features(path, e))
}

fn segmenter(cfg: &RunConfig) -> Result<Segmenter, CliError> {
    Segmenter::new(cfg.segment_config()).map_err(|e| CliError::Input(e.to_string()))
}

fn seeds(cfg: &RunConfig) -> Seeds {
    Seeds {
        attention: cfg.seed,
        flow_projector: cfg.flow_seed,
    }
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

#[derive(Serialize)]
struct BoundaryReport<'a> {
    video_id: &'a str,
    threshold: f64,
    boundaries: &'a [usize],
    config: serde_json::Value,
    seeds: Seeds,
}

pub fn segment(args: &SegmentArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let frames = load(&args.features)?;
    let seg = segmenter(&cfg)?
        .segment(&frames)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.features.display())))?;
    ensure_dir(&args.out_dir)?;
    let id = frames.video_id();
    let report = BoundaryReport {
        video_id: id,
        threshold: seg.signal.threshold,
        boundaries: &seg.signal.boundaries,
        config: config_value(&cfg),
        seeds: seeds(&cfg),
    };
    write_json(&args.out_dir.join(format!("{id}.boundaries.json")), &report)?;
    let curve = args.out_dir.join(format!("{id}.curve.csv"));
    seg.signal
        .save_curve_csv(&curve)
        .map_err(|e| CliError::write(&curve, e))?;
    if let Some(path) = &args.graph_dump {
        write_json(
            path,
            &GraphDump::new(&seg.graph, &cfg.segment_config().graph),
        )?;
    }
    if let Some(path) = &args.similarity_dump {
        let dump = SimilarityDump {
            before: cosine_matrix(&seg.fused.vectors),
            after: cosine_matrix(&seg.propagated.vectors),
        };
        write_json(path, &dump)?;
    }
    Ok(())
}

/// The scorer selected by the configuration, if any.
pub fn build_scorer(cfg: &RunConfig) -> Result<Option<Box<dyn EventScorer>>, CliError> {
    if cfg.mock_scorer {
        let fixtures = match &cfg.mock_fixture {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::bad_path(path, &e.to_string()))?;
                parse_fixtures(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            }
            None => Vec::new(),
        };
        return Ok(Some(Box::new(MockScorer::new(fixtures))));
    }
    Ok(cfg.scorer_url.as_deref().map(|url| {
        let timeout = Duration::from_secs(cfg.scorer_timeout_secs);
        Box::new(HttpScorer::new(url, timeout)) as Box<dyn EventScorer>
    }))
}

fn require_scorer(cfg: &RunConfig) -> Result<Box<dyn EventScorer>, CliError> {
    build_scorer(cfg)?.ok_or_else(|| {
        CliError::Input(format!(
            "no scorer configured: pass --scorer-url, --mock-scorer or set {}",
            crate::config::SCORER_URL_ENV
        ))
    })
}

fn media_source(media: Option<&Path>, video_id: &str) -> Box<dyn FrameSource> {
    match media {
        None => Box::new(NoFrames),
        Some(root) => {
            let nested = root.join(video_id);
            Box::new(FrameDirectory::new(if nested.is_dir() {
                nested
            } else {
                root.to_path_buf()
            }))
        }
    }
}

/// Segments and scores one video.
fn detect(
    frames: &FrameFeatures,
    segmenter: &Segmenter,
    cfg: &RunConfig,
    scorer: &dyn EventScorer,
    media: &dyn FrameSource,
    limiter: &InflightLimiter,
) -> Result<DetectionResult, DetectError> {
    let seg = segmenter
        .segment(frames)
        .map_err(|e| DetectError::Input(e.to_string()))?;
    let units = events_from_boundaries(frames.len(), &seg.signal.boundaries);
    let id = frames.video_id();
    let scores = score_events(id, &units, media, scorer, &cfg.scoring_options(), limiter)
        .map_err(DetectError::Scoring)?;
    Ok(DetectionResult::new(
        id,
        frames.fps(),
        frames.len(),
        config_value(cfg),
        seeds(cfg),
        &units,
        &scores,
    ))
}

enum DetectError {
    Input(String),
    Scoring(ScoringError),
}

pub fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let scorer = require_scorer(&cfg)?;
    let videos = args
        .features
        .iter()
        .map(|p| load(p))
        .collect::<Result<Vec<_>, _>>()?;
    ensure_dir(&args.out_dir)?;
    let segmenter = segmenter(&cfg)?;
    let limiter = InflightLimiter::new(cfg.inflight);
    let outcomes = parallel_map(&videos, args.config.jobs, |frames| {
        let media = media_source(args.media.as_deref(), frames.video_id());
        detect(
            frames,
            &segmenter,
            &cfg,
            scorer.as_ref(),
            media.as_ref(),
            &limiter,
        )
    });

    let mut input_errors = Vec::new();
    let mut scorer_errors = Vec::new();
    for (frames, outcome) in videos.iter().zip(outcomes) {
        let id = frames.video_id();
        match outcome {
            Ok(result) => write_json(&args.out_dir.join(format!("{id}.json")), &result)?,
            Err(DetectError::Input(m)) => input_errors.push(format!("{id}: {m}")),
            Err(DetectError::Scoring(ScoringError::Media { event, message })) => {
                input_errors.push(format!("{id}: event {event}: {message}"))
            }
            Err(DetectError::Scoring(ScoringError::Unavailable {
                message,
                failed_event,
                completed,
            })) => {
                let path = args.out_dir.join(format!("{id}.partial.json"));
                let done: Vec<String> = completed.iter().map(|e| e.index.to_string()).collect();
                scorer_errors.push(format!(
                    "{id}: scorer failed at event {failed_event} ({message}); completed events [{}] in {}",
                    done.join(", "),
                    path.display()
                ));
                let report = PartialReport {
                    video_id: id.to_string(),
                    error: message,
                    failed_event,
                    completed,
                };
                write_json(&path, &report)?;
            }
        }
    }
    if !input_errors.is_empty() {
        return Err(CliError::Input(input_errors.join("\n")));
    }
    if !scorer_errors.is_empty() {
        return Err(CliError::Scorer(scorer_errors.join("\n")));
    }
    Ok(())
}

/// Result files of a directory in file-name order. JSON files without
/// `frame_scores` (boundary reports, partial reports, truth files) are skipped.
pub fn load_results(dir: &Path) -> Result<Vec<(PathBuf, DetectionResult)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::bad_path(dir, &e.to_string()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::bad_path(&path, &e.to_string()))?;
        let value: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                return Err(CliError::Input(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    e.line()
                )))
            }
        };
        if value.get("frame_scores").is_none() {
            continue;
        }
        let result = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        out.push((path, result));
    }
    if out.is_empty() {
        return Err(CliError::Input(format!(
            "NoResults: {} contains no result files",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let results = load_results(&args.results_dir)?;
    let truth =
        read_annotations(&args.annotations).map_err(|e| CliError::eval(&args.annotations, e))?;
    let pairs = results
        .iter()
        .map(|(_, r)| (r.video_id.as_str(), r.frame_scores.as_slice()));
    let report =
        evaluate_corpus(pairs, &truth).map_err(|e| CliError::eval(&args.results_dir, e))?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    if let Some(path) = &args.roc {
        let (scores, labels) = concatenated(&results, &truth);
        let points =
            roc_points(&scores, &labels).map_err(|e| CliError::eval(&args.results_dir, e))?;
        let mut csv = String::from("fpr,tpr\n");
        for (fpr, tpr) in points {
            let _ = writeln!(csv, "{fpr},{tpr}");
        }
        std::fs::write(path, csv).map_err(|e| CliError::write(path, e))?;
    }
    Ok(())
}

fn concatenated(
    results: &[(PathBuf, DetectionResult)],
    truth: &BTreeMap<String, GroundTruth>,
) -> (Vec<f64>, Vec<bool>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (_, r) in results {
        scores.extend_from_slice(&r.frame_scores);
        labels.extend(truth[&r.video_id].labels());
    }
    (scores, labels)
}

fn features_in(dir: &Path) -> Result<Vec<FrameFeatures>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::bad_path(dir, &e.to_string()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "evf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!(
            "NoResults: {} contains no .evf files",
            dir.display()
        )));
    }
    paths.iter().map(|p| load(p)).collect()
}

/// Values of a sweep grid, `cells[g][a]` for gamma `g` and alpha `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

impl SweepGrid {
    /// Gamma rows, alpha columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma");
        for a in &self.alphas {
            let _ = write!(out, ",alpha={a}");
        }
        out.push('\n');
        for (g, row) in self.gammas.iter().zip(&self.cells) {
            let _ = write!(out, "{g}");
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

enum SweepMode {
    F1 {
        truth: Vec<Vec<usize>>,
        tolerance: usize,
    },
    Auc {
        scorer: Box<dyn EventScorer>,
        truth: BTreeMap<String, GroundTruth>,
        annotations: PathBuf,
    },
}

fn sweep_cell(
    videos: &[FrameFeatures],
    segmenter: &Segmenter,
    cfg: &RunConfig,
    mode: &SweepMode,
    jobs: usize,
) -> Result<f64, CliError> {
    match mode {
        SweepMode::F1 { truth, tolerance } => {
            let found = parallel_map(videos, jobs, |v| {
                segmenter.segment(v).map(|s| s.signal.boundaries)
            });
            let (mut matched, mut predicted, mut expected) = (0, 0, 0);
            for ((video, boundaries), truth) in videos.iter().zip(found).zip(truth) {
                let boundaries = boundaries
                    .map_err(|e| CliError::Input(format!("{}: {e}", video.video_id())))?;
                matched += match_boundaries(&boundaries, truth, *tolerance);
                predicted += boundaries.len();
                expected += truth.len();
            }
            Ok(Prf::from_counts(matched, predicted, expected).f1)
        }
        SweepMode::Auc {
            scorer,
            truth,
            annotations,
        } => {
            let limiter = InflightLimiter::new(cfg.inflight);
            let outcomes = parallel_map(videos, jobs, |v| {
                detect(v, segmenter, cfg, scorer.as_ref(), &NoFrames, &limiter)
            });
            let mut results = Vec::with_capacity(videos.len());
            for (video, outcome) in videos.iter().zip(outcomes) {
                match outcome {
                    Ok(r) => results.push(r),
                    Err(DetectError::Input(m)) => {
                        return Err(CliError::Input(format!("{}: {m}", video.video_id())))
                    }
                    Err(DetectError::Scoring(e)) => {
                        return Err(CliError::Scorer(format!("{}: {e}", video.video_id())))
                    }
                }
            }
            let pairs = results
                .iter()
                .map(|r| (r.video_id.as_str(), r.frame_scores.as_slice()));
            let report =
                evaluate_corpus(pairs, truth).map_err(|e| CliError::eval(annotations, e))?;
            Ok(report.auc)
        }
    }
}

/// Evaluates every (gamma, alpha) cell. One projection draw serves the grid.
pub fn run_sweep(args: &SweepArgs) -> Result<SweepGrid, CliError> {
    let cfg = args.config.resolve()?;
    if args.alphas.is_empty() || args.gammas.is_empty() {
        return Err(CliError::Input(
            "sweep grid needs at least one alpha and one gamma".into(),
        ));
    }
    let videos = features_in(&args.features_dir)?;
    let scorer = build_scorer(&cfg)?;
    let mode = match (scorer, &args.annotations) {
        (Some(scorer), Some(path)) => SweepMode::Auc {
            scorer,
            truth: read_annotations(path).map_err(|e| CliError::eval(path, e))?,
            annotations: path.clone(),
        },
        _ => {
            let truth = videos
                .iter()
                .map(|v| {
                    let path = args
                        .features_dir
                        .join(format!("{}.truth.json", v.video_id()));
                    SynthTruth::load(&path)
                        .map(|t| t.boundaries)
                        .map_err(|e| CliError::bad_path(&path, &e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            SweepMode::F1 {
                truth,
                tolerance: args.tolerance,
            }
        }
    };
    let base = segmenter(&cfg)?;
    let mut cells = Vec::with_capacity(args.gammas.len());
    for &gamma in &args.gammas {
        let mut row = Vec::with_capacity(args.alphas.len());
        for &alpha in &args.alphas {
            let cell_cfg = RunConfig {
                alpha,
                gamma,
                ..cfg.clone()
            };
            cell_cfg.validate()?;
            let seg =
                Segmenter::with_projections(cell_cfg.segment_config(), base.projections().clone())
                    .map_err(|e| CliError::Input(e.to_string()))?;
            row.push(sweep_cell(
                &videos,
                &seg,
                &cell_cfg,
                &mode,
                args.config.jobs,
            )?);
        }
        cells.push(row);
    }
    Ok(SweepGrid {
        alphas: args.alphas.clone(),
        gammas: args.gammas.clone(),
        cells,
    })
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let grid = run_sweep(args)?;
    emit(args.out.as_deref(), &grid.to_csv())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    ensure_dir(&args.out_dir)?;
    for i in 0..args.count {
        let params = SynthParams {
            seed: args.seed + i as u64,
            total_frames: args.frames,
            regimes: args.regimes,
            noise_sigma: args.sigma,
            jitter: args.jitter,
            flow_scale: args.flow_scale,
            flow_seed: args.flow_seed,
            fps: args.fps,
        };
        let id = format!("{}_{i:03}", args.prefix);
        let spec = random_spec(&params).map_err(|e| CliError::Input(e.to_string()))?;
        let (frames, boundaries) =
            generate(&id, &spec).map_err(|e| CliError::Input(e.to_string()))?;
        let evf = args.out_dir.join(format!("{id}.evf"));
        write_features(&frames, &evf).map_err(|e| CliError::write(&evf, e))?;
        let truth = args.out_dir.join(format!("{id}.truth.json"));
        SynthTruth { boundaries }
            .save(&truth)
            .map_err(|e| CliError::write(&truth, e))?;
    }
    Ok(())
}
