use std::path::{Path, PathBuf};
use std::process::ExitCode;

use posmatch::config::{Mode, RunConfig};
use posmatch::deform::{build_graph, warp_cloud, GraphState};
use posmatch::geometry::grid_subsample;
use posmatch::io::{read_json, read_matrix_file, read_ply_file, read_weights_file, write_json, write_matrix_file, write_ply_file, PlyFormat};
use posmatch::metrics::{correspondence_rmse, feature_matching_recall, flow_metrics, inlier_ratio, nfmr, registration_recall};
use posmatch::nicp::{gauss_newton_solve, matches_from_set};
use posmatch::pipeline::{run_pipeline, PipelineOptions, PipelineOutput, PipelineWeights};
use posmatch::procrustes::soft_procrustes;
use posmatch::ransac::ransac_rigid;
use posmatch::synth::{synth_deformable_pair, synth_rigid_pair, CoordinateFeatures};
use posmatch::{CorrespondenceSet, Error, Point3, PointCloud, Result, Vector3};

use crate::docs::{EvalReport, GroundTruthDoc, GroundTruthWarp, LayerSummary, RigidResult};
use crate::{parse_kind, Cli, Command, ConfigArgs, EvalArgs, FeatureArgs, MatchArgs, NonrigidArgs, PairArgs, RegisterArgs, SelftestArgs, SubsampleArgs, SynthArgs};

struct Context {
    config: RunConfig,
    out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn load_config(path: Option<&Path>, mode: Option<Mode>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let c = RunConfig::from_json(&std::fs::read_to_string(p)?)?;
            if let Some(m) = mode.filter(|m| *m != c.mode) {
                return Err(Error::InvalidParameter(format!(
                    "--mode {m:?} conflicts with the configuration file's mode {:?}",
                    c.mode
                )));
            }
            c
        }
        None => RunConfig::preset(mode.unwrap_or_default()),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

/// Prints a line, treating a closed pipe as success.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mode = match &cli.command {
        Command::Config(ConfigArgs { mode }) => *mode,
        _ => None,
    };
    let config = load_config(cli.config.as_deref(), mode, cli.seed)?;
    let ctx = Context { config, out: cli.out };
    match cli.command {
        Command::Config(_) => {
            print_stdout(&ctx.config.to_json_pretty())?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Selftest(args) => return Ok(selftest(&args)),
        _ => {}
    }
    std::fs::create_dir_all(&ctx.out)?;
    match cli.command {
        Command::Synth(args) => synth(&ctx, &args)?,
        Command::Subsample(args) => subsample(&ctx, &args)?,
        Command::Match(args) => match_pair(&ctx, &args)?,
        Command::RegisterRigid(args) => register_rigid(&ctx, &args)?,
        Command::RegisterNonrigid(args) => register_nonrigid(&ctx, &args)?,
        Command::Eval(args) => eval(&ctx, &args)?,
        Command::Config(_) | Command::Selftest(_) => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest(args: &SelftestArgs) -> ExitCode {
    let reports = posmatch_selftest::run_selected(&args.only, |r| println!("{r}"));
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let cfg = &ctx.config;
    let kind = match &args.kind {
        Some(k) => parse_kind(k)?,
        None if cfg.mode == Mode::Rigid => None,
        None => Some(posmatch::geometry::WarpKind::Bend),
    };
    let features = CoordinateFeatures::new(cfg.encoding.dim, args.feature_bandwidth, args.feature_scale, cfg.seed ^ 0x5eed)?;
    let (source, target, doc, canonical_t) = match kind {
        None => {
            let pair = synth_rigid_pair(cfg.seed, args.points, args.overlap, args.noise)?;
            let back = pair.transform.inverse();
            let canonical: Vec<Point3> = pair.target.iter().map(|q| back.apply(q)).collect();
            log::info!("rigid pair: overlap {:.3}, spacing {:.4} m", pair.overlap_ratio, pair.spacing);
            let doc = GroundTruthDoc {
                warp: GroundTruthWarp::Rigid(pair.transform),
                correspondences: pair.correspondences,
            };
            (pair.source, pair.target, doc, canonical)
        }
        Some(kind) => {
            let pair = synth_deformable_pair(cfg.seed, args.points, kind, args.magnitude)?;
            let doc = GroundTruthDoc {
                warp: GroundTruthWarp::Analytic(pair.warp),
                correspondences: pair.correspondences,
            };
            // Target point j is the image of source point j.
            let canonical = pair.source.points().to_vec();
            (pair.source, pair.target, doc, canonical)
        }
    };
    write_ply_file(ctx.path("source.ply"), &source, PlyFormat::BinaryLittleEndian)?;
    write_ply_file(ctx.path("target.ply"), &target, PlyFormat::BinaryLittleEndian)?;
    write_json(ctx.path("gt.json"), &doc)?;
    write_matrix_file(ctx.path("source_features.lprd"), &features.describe(source.points()))?;
    write_matrix_file(ctx.path("target_features.lprd"), &features.describe(&canonical_t))?;
    Ok(())
}

fn subsample(ctx: &Context, args: &SubsampleArgs) -> Result<()> {
    let cloud = read_ply_file(&args.input)?;
    let voxel = args.voxel.unwrap_or(ctx.config.subsample.voxel);
    let mode = args.mode.unwrap_or(ctx.config.subsample.mode);
    let out = grid_subsample(&cloud, voxel, mode)?;
    log::info!("{} points -> {}", cloud.len(), out.cloud.len());
    write_ply_file(ctx.path("subsampled.ply"), &out.cloud, PlyFormat::BinaryLittleEndian)?;
    write_json(ctx.path("cell_of.json"), &out.cell_of)?;
    Ok(())
}

fn read_pair(pair: &PairArgs) -> Result<(PointCloud, PointCloud)> {
    Ok((read_ply_file(&pair.source)?, read_ply_file(&pair.target)?))
}

fn run_matcher(ctx: &Context, source: &PointCloud, target: &PointCloud, args: &FeatureArgs) -> Result<PipelineOutput> {
    let (Some(fs), Some(ft)) = (&args.source_features, &args.target_features) else {
        return Err(Error::InvalidParameter(
            "matching needs --source-features and --target-features".into(),
        ));
    };
    let cfg = &ctx.config;
    let fs = read_matrix_file(fs)?;
    let ft = read_matrix_file(ft)?;
    let weights = match &args.weights {
        Some(p) => read_weights_file(p, cfg.encoding.dim)?,
        None => PipelineWeights::passthrough(cfg.encoding.dim),
    };
    let options = PipelineOptions::new(cfg.encoding, cfg.matching.clone(), cfg.loss.clone());
    run_pipeline(source, target, &fs, &ft, &weights, &options, None)
}

fn match_pair(ctx: &Context, args: &MatchArgs) -> Result<()> {
    let (source, target) = read_pair(&args.pair)?;
    let out = run_matcher(ctx, &source, &target, &args.features)?;
    let layers: Vec<LayerSummary> = out
        .layers
        .iter()
        .map(|l| LayerSummary {
            matches: l.matches.len(),
            transform: l.transform,
            degenerate: l.degenerate,
        })
        .collect();
    write_json(ctx.path("matches.json"), &out.matches)?;
    write_json(ctx.path("layers.json"), &layers)?;
    Ok(())
}

fn obtain_matches(ctx: &Context, source: &PointCloud, target: &PointCloud, args: &RegisterArgs) -> Result<CorrespondenceSet> {
    let matches = match &args.matches {
        Some(p) => read_json::<CorrespondenceSet>(p)?,
        None => run_matcher(ctx, source, target, &args.features)?.matches,
    };
    matches.validate(source.len(), target.len())?;
    Ok(matches)
}

fn register_rigid(ctx: &Context, args: &RegisterArgs) -> Result<()> {
    let (source, target) = read_pair(&args.pair)?;
    let matches = obtain_matches(ctx, &source, &target, args)?;
    let out = ransac_rigid(&matches, &source, &target, &ctx.config.ransac, ctx.config.seed)?;
    log::info!("{} of {} matches are inliers", out.inliers.len(), matches.len());
    let result = RigidResult {
        transform: out.transform,
        inliers: out.inliers.len(),
        matches: matches.len(),
    };
    write_json(ctx.path("transform.json"), &result.transform)?;
    write_json(ctx.path("ransac.json"), &result)?;
    write_ply_file(
        ctx.path("registered.ply"),
        &source.map(|p| out.transform.apply(p)),
        PlyFormat::BinaryLittleEndian,
    )?;
    Ok(())
}

fn register_nonrigid(ctx: &Context, args: &NonrigidArgs) -> Result<()> {
    let (source, target) = read_pair(&args.register.pair)?;
    let matches = match &args.gt {
        Some(p) => {
            let set = read_json::<GroundTruthDoc>(p)?.correspondences;
            set.validate(source.len(), target.len())?;
            set
        }
        None => obtain_matches(ctx, &source, &target, &args.register)?,
    };
    let graph = build_graph(&source, &ctx.config.graph)?;
    let initial = match soft_procrustes(&matches, &source, &target) {
        Ok(t) => GraphState::from_global_rigid(&graph, &t.rotation, &t.translation),
        Err(e) => {
            log::warn!("no rigid initialization ({e}); starting from the identity");
            GraphState::identity(graph.node_count())
        }
    };
    let nicp_matches = matches_from_set(&matches, &source, &target)?;
    let out = gauss_newton_solve(&graph, &initial, &nicp_matches, &ctx.config.nicp)?;
    log::info!(
        "{} nodes, energy {:.3e} -> {:.3e} in {} iterations",
        graph.node_count(),
        out.initial_energy,
        out.final_energy(),
        out.trace.len()
    );
    write_ply_file(ctx.path("warped.ply"), &warp_cloud(&source, &graph, &out.state), PlyFormat::BinaryLittleEndian)?;
    std::fs::write(ctx.path("trace.jsonl"), out.trace_jsonl())?;
    write_json(ctx.path("graph.json"), &graph)?;
    Ok(())
}

fn eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let (source, target) = read_pair(&args.pair)?;
    let gt: GroundTruthDoc = read_json(&args.gt)?;
    gt.correspondences.validate(source.len(), target.len())?;
    let warp = gt.warp.to_warp();
    let m = &ctx.config.metrics;
    let mut report = EvalReport::default();

    if let Some(p) = &args.matches {
        let pred: CorrespondenceSet = read_json(p)?;
        let ir = inlier_ratio(&pred, &source, &target, &warp, m.sigma_inlier)?;
        report.inlier_ratio = Some(ir);
        report.feature_matching_recall = Some(feature_matching_recall(&[ir], m.fmr_ir_threshold)?);
        report.nfmr = Some(nfmr(&pred, &gt.correspondences, &source, &target, m.nfmr_sigma, m.knn_k)?);
    }
    if let Some(p) = &args.transform {
        let estimate = read_json(p)?;
        let pairs: Vec<(Point3, Point3)> = gt
            .correspondences
            .iter()
            .map(|c| (source[c.source], target[c.target]))
            .collect();
        report.rmse = Some(correspondence_rmse(&estimate, &pairs)?);
        report.registration_recall = Some(registration_recall(&[estimate], &[pairs], m.rr_rmse_threshold)?);
    }
    if let Some(p) = &args.warped {
        let warped = read_ply_file(p)?;
        if warped.len() != source.len() {
            return Err(Error::DimensionMismatch {
                expected: source.len(),
                actual: warped.len(),
            });
        }
        let pred: Vec<Vector3> = warped.iter().zip(source.iter()).map(|(w, s)| w - s).collect();
        let truth: Vec<Vector3> = source
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(warp.apply_source(i, s)? - s))
            .collect::<Result<_>>()?;
        report.flow = Some(flow_metrics(&pred, &truth, m)?);
    }
    print_stdout(&serde_json::to_string_pretty(&report)?)?;
    write_json(ctx.path("report.json"), &report)?;
    Ok(())
}
