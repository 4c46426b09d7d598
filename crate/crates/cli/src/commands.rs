use std::path::Path;

use serde::Serialize;
use serde_json::json;
use setproc::classify::{train_classifier, Classifier, LikelihoodMode, PriorMode};
use setproc::cluster_dp::{run_dp_clustering, DpHyper, DpRunOptions};
use setproc::cluster_em::{em_fit, EmOptions};
use setproc::learn::{fit_iid_cluster, FitOptions};
use setproc::novelty::{Decision, NoveltyDetector, RankMode};
use setproc::{rng, LabeledPattern, PointPattern};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::io::{
    read_json, read_jsonl, read_patterns, write_json, write_jsonl, ModelFile, ModelPayload, PatternRecord, PatternSet,
    Provenance,
};
use crate::report::{build_report, parse_labels, write_csv, FoldManifest, Labels};
use crate::scenario::{builtin, ScenarioConfig};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Classify(a) => classify(&a),
        Command::Detect(a) => detect(&a),
        Command::ClusterEm(a) => cluster_em(&a),
        Command::ClusterDp(a) => cluster_dp(&a),
        Command::Eval(a) => eval(&a),
        Command::Xval(a) => xval(&a),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let config = match (&a.scenario, &a.config) {
        (Some(name), None) => builtin(name).ok_or_else(|| CliError::Usage(format!("unknown scenario '{name}'")))?,
        (None, Some(path)) => read_json::<ScenarioConfig>(path)?,
        _ => return Err(CliError::Usage("give exactly one of --scenario or --config".into())),
    };
    let config = config.with_counts(&a.counts)?;
    let data = config.simulate(a.seed)?;
    let records: Vec<PatternRecord> = data
        .iter()
        .map(|lp| PatternRecord::from_pattern(&lp.pattern, Some(lp.label)))
        .collect();
    write_jsonl(&a.out, &records)?;
    if let Some(p) = &a.config_out {
        write_json(p, &config)?;
    }
    Ok(())
}

fn fit_options(f: &FamilyArgs, seed: u64) -> CliResult<FitOptions> {
    let opts = FitOptions {
        card: f.card_family(),
        feat: f.feat.clone(),
        seed,
        unit_u: f.unit_u,
    };
    opts.validate()?;
    Ok(opts)
}

fn likelihood_mode(m: ModelKind) -> LikelihoodMode {
    match m {
        ModelKind::Poisson => LikelihoodMode::PointProcess,
        ModelKind::Nb => LikelihoodMode::NaiveBayes,
    }
}

fn prior_mode(p: PriorArg) -> PriorMode {
    match p {
        PriorArg::Uniform => PriorMode::Uniform,
        PriorArg::Empirical => PriorMode::Empirical,
    }
}

fn labeled(set: &PatternSet) -> CliResult<Vec<LabeledPattern>> {
    let labels = set.require_labels()?;
    Ok(set
        .patterns
        .iter()
        .zip(labels)
        .map(|(p, label)| LabeledPattern {
            pattern: p.clone(),
            label,
        })
        .collect())
}

fn nonempty(set: &PatternSet, path: &Path) -> CliResult<()> {
    if set.is_empty() {
        return Err(CliError::Data(format!("{} has no records", path.display())));
    }
    set.require_dim().map(|_| ())
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let set = read_patterns(&a.input, None)?;
    nonempty(&set, &a.input)?;
    let opts = fit_options(&a.family, a.seed)?;
    let options = json!({
        "task": format!("{:?}", a.task).to_lowercase(),
        "model": format!("{:?}", a.model).to_lowercase(),
        "prior": format!("{:?}", a.prior).to_lowercase(),
        "fit": to_value(&opts),
    });
    let payload = match a.task {
        Task::Classify => ModelPayload::Classifier(train_classifier(
            &labeled(&set)?,
            &opts,
            prior_mode(a.prior),
            likelihood_mode(a.model),
        )?),
        Task::Novelty => ModelPayload::point_process(fit_iid_cluster(&set.patterns, &opts)?),
    };
    ModelFile::new(payload, Provenance::new("train", Some(a.seed), options)).save(&a.out)
}

fn load_classifier(path: &Path) -> CliResult<Classifier> {
    match ModelFile::load(path)?.payload {
        ModelPayload::Classifier(c) => Ok(c),
        other => Err(CliError::Data(format!(
            "{}: expected a classifier, found {}",
            path.display(),
            other.kind()
        ))),
    }
}

#[derive(Serialize)]
struct Prediction {
    label: usize,
    posterior: Vec<f64>,
}

fn classify(a: &ClassifyArgs) -> CliResult<()> {
    let c = load_classifier(&a.model)?;
    let set = read_patterns(&a.input, Some(c.dim()))?;
    let posts = c.posterior_batch(&set.patterns)?;
    let out: Vec<Prediction> = posts
        .into_iter()
        .map(|p| Prediction {
            label: setproc::math::argmax(&p.probs),
            posterior: p.probs,
        })
        .collect();
    write_jsonl(&a.out, &out)
}

fn rank_mode(r: RankArg) -> RankMode {
    match r {
        RankArg::Ranking => RankMode::Ranking,
        RankArg::Density => RankMode::Density,
        RankArg::Nb => RankMode::NaiveBayes,
    }
}

#[derive(Serialize)]
struct Flag {
    log_rank: f64,
    threshold: f64,
    novel: bool,
}

fn detect(a: &DetectArgs) -> CliResult<()> {
    let file = ModelFile::load(&a.model)?;
    let mut det = match file.payload {
        ModelPayload::IidCluster(m) | ModelPayload::PoissonPp(m) => {
            NoveltyDetector::new(m, a.rank.map_or(RankMode::Ranking, rank_mode))?
        }
        ModelPayload::Detector(d) => match a.rank {
            Some(r) => d.with_mode(rank_mode(r)),
            None => d,
        },
        other => {
            return Err(CliError::Data(format!(
                "{}: expected a point-process model or detector, found {}",
                a.model.display(),
                other.kind()
            )))
        }
    };
    let dim = det.model().dim();
    if let Some(train) = &a.train {
        let normal = read_patterns(train, Some(dim))?;
        det.fit_threshold(&normal.patterns, a.quantile)?;
    }
    let threshold = det
        .threshold()
        .ok_or_else(|| CliError::Usage("the threshold is not fitted: pass --train with normal patterns".into()))?;
    let test = read_patterns(&a.input, Some(dim))?;
    let ranks = det.log_rank_batch(&test.patterns)?;
    let flags: Vec<Flag> = ranks
        .into_iter()
        .map(|r| Flag {
            log_rank: r,
            threshold,
            novel: setproc::novelty::decide(r, threshold) == Decision::Novel,
        })
        .collect();
    write_jsonl(&a.out, &flags)?;
    if let Some(p) = &a.detector_out {
        let options = json!({ "quantile": a.quantile, "rank": to_value(&det.mode()) });
        ModelFile::new(ModelPayload::Detector(det), Provenance::new("detect", None, options)).save(p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelLine {
    label: usize,
}

fn write_labels(path: &Path, labels: &[usize]) -> CliResult<()> {
    let lines: Vec<LabelLine> = labels.iter().map(|&label| LabelLine { label }).collect();
    write_jsonl(path, &lines)
}

fn cluster_em(a: &ClusterEmArgs) -> CliResult<()> {
    let set = read_patterns(&a.input, None)?;
    nonempty(&set, &a.input)?;
    let opts = EmOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        restarts: a.restarts,
        seed: a.seed,
        fit: fit_options(&a.family, a.seed)?,
    };
    let fit = em_fit(&set.patterns, a.k, &opts)?;
    write_labels(&a.out, &fit.labels)?;
    if let Some(p) = &a.model_out {
        let options = json!({ "k": a.k, "em": to_value(&opts) });
        ModelFile::new(
            ModelPayload::Mixture(fit.mixture.clone()),
            Provenance::new("cluster-em", Some(a.seed), options),
        )
        .save(p)?;
    }
    if let Some(p) = &a.trace_out {
        write_json(
            p,
            &json!({ "log_likelihood": fit.trace, "restart": fit.restart, "reseeds": fit.reseeds }),
        )?;
    }
    Ok(())
}

fn cluster_dp(a: &ClusterDpArgs) -> CliResult<()> {
    let set = read_patterns(&a.input, None)?;
    nonempty(&set, &a.input)?;
    let h = DpHyper::from_data(&set.patterns)?.with_eta(a.eta)?;
    let opts = DpRunOptions {
        burnin: a.burnin,
        samples: a.samples,
        thin: a.thin,
        seed: a.seed,
    };
    let run = run_dp_clustering(&set.patterns, &h, &opts)?;
    write_labels(&a.out, &run.point_estimate)?;
    if let Some(p) = &a.hyper_out {
        let options = json!({ "run": to_value(&opts) });
        ModelFile::new(
            ModelPayload::DpHyper(h),
            Provenance::new("cluster-dp", Some(a.seed), options),
        )
        .save(p)?;
    }
    if let Some(p) = &a.trace_out {
        write_json(
            p,
            &json!({ "cluster_counts": run.cluster_counts, "point_estimate_score": run.point_estimate_score }),
        )?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let flags = a.task == EvalTask::Novelty;
    let truth = parse_labels(&read_jsonl::<serde_json::Value>(&a.truth)?, flags)?;
    let pred = parse_labels(&read_jsonl::<serde_json::Value>(&a.pred)?, flags)?;
    let manifest = a.folds.as_deref().map(read_json::<FoldManifest>).transpose()?;
    let task = match a.task {
        EvalTask::Classify => "classify",
        EvalTask::Novelty => "novelty",
        EvalTask::Cluster => "cluster",
    };
    let report = build_report(task, &truth, &pred, manifest.as_ref())?;
    write_json(&a.out, &report)?;
    if let Some(p) = &a.csv {
        write_csv(p, &report)?;
    }
    Ok(())
}

/// Stratified fold assignment: each class is shuffled, then dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); folds];
    let mut offset = 0;
    for class in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng::stream(seed, class as u64));
        for (j, i) in idx.iter().enumerate() {
            out[(j + offset) % folds].push(*i);
        }
        offset += idx.len();
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn xval(a: &XvalArgs) -> CliResult<()> {
    if a.folds < 2 {
        return Err(CliError::Usage("cross-validation needs at least 2 folds".into()));
    }
    let set = read_patterns(&a.input, None)?;
    nonempty(&set, &a.input)?;
    let labels = set.require_labels()?;
    let folds = stratified_folds(&labels, a.folds, rng::child_seed(a.seed, 0));
    let mut pred = vec![0usize; labels.len()];
    for (f, test) in folds.iter().enumerate() {
        if test.is_empty() {
            return Err(CliError::Data(format!("fold {f} is empty; use fewer folds")));
        }
        let mut in_test = vec![false; labels.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<LabeledPattern> = (0..labels.len())
            .filter(|&i| !in_test[i])
            .map(|i| LabeledPattern {
                pattern: set.patterns[i].clone(),
                label: labels[i],
            })
            .collect();
        let opts = fit_options(&a.family, rng::child_seed(a.seed, f as u64 + 1))?;
        let c = train_classifier(&train, &opts, prior_mode(a.prior), likelihood_mode(a.model))?;
        let test_patterns: Vec<PointPattern> = test.iter().map(|&i| set.patterns[i].clone()).collect();
        for (&i, l) in test.iter().zip(c.predict_batch(&test_patterns)?) {
            pred[i] = l;
        }
    }
    let manifest = FoldManifest { folds };
    let report = build_report(
        "classify",
        &Labels::Classes(labels),
        &Labels::Classes(pred.clone()),
        Some(&manifest),
    )?;
    write_json(&a.out, &report)?;
    if let Some(p) = &a.manifest_out {
        write_json(p, &manifest)?;
    }
    if let Some(p) = &a.pred_out {
        write_labels(p, &pred)?;
    }
    if let Some(p) = &a.csv {
        write_csv(p, &report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_partition() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let folds = stratified_folds(&labels, 4, 7);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for f in &folds {
            for c in 0..3 {
                let n = f.iter().filter(|&&i| labels[i] == c).count();
                assert!((3..=4).contains(&n), "{n}");
            }
        }
        assert_eq!(folds, stratified_folds(&labels, 4, 7));
    }
}
