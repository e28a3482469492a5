use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use giqa_core::demo::{collapsed_set, iteration_series, two_cluster_benchmark, two_clusters};
use giqa_core::mbc::{score_mbc_batch, MbcTraining};
use giqa_core::metrics::write_histogram_csv;
use giqa_core::{
    apply_pca, build_index, diversity_scores, fit_gmm, fit_pca, normalize_jointly, normalize_scores,
    ohem_weights, pair_accuracy, pick_top, quality_score, read_features, score_gmm, score_histogram,
    score_knn, split_train_val, train_mbc, write_features, DensityScorer, EmConfig, Error,
    FeatureMatrix, GmmModel, IterationTag, LabeledFeature, MbcModel, MbcTrainConfig, OhemConfig,
    PairDataset, PcaModel, ScoreTable, Winner,
};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::manifest::{io_error, sha256_file, IndexManifest, Run, INDEX_VERSION};
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn create(path: &Path) -> Result<BufWriter<fs::File>, Error> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn load_table(run: &mut Run, path: &Path) -> Result<ScoreTable, Error> {
    ScoreTable::load_csv(run.input(path)?)
}

fn em_config(p: &GmmParams) -> EmConfig {
    EmConfig {
        max_em_iters: p.max_iter as usize,
        tol: p.tol,
        reg_covar: p.reg_covar,
        n_init: p.n_init as usize,
        seed: p.seed,
    }
}

pub fn demo(args: &DemoArgs, run: &mut Run) -> CmdResult {
    run.seed = Some(args.seed);
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let path = |name: &str| args.out.join(name);
    let seed = args.seed;

    let bench = two_cluster_benchmark(1000, 200, seed);
    write_features(&bench.real, run.output(&path("real.giqf")))?;
    write_features(&bench.generated, run.output(&path("generated.giqf")))?;
    bench.pairs.write_csv(create(run.output(&path("pairs.csv")))?)?;
    bench.ground_truth().save_csv(run.output(&path("truth.csv")))?;

    let matched = two_clusters(1000, seed.wrapping_add(1)).samples;
    let ids = (0..matched.count()).map(|i| format!("matched-{i:05}")).collect();
    let matched = FeatureMatrix::new(ids, matched.data().to_vec(), matched.dim())?;
    write_features(&matched, run.output(&path("matched.giqf")))?;
    let collapsed = collapsed_set(&[2.0, 1.5], 1000, 0.05, "collapsed-", seed.wrapping_add(2));
    write_features(&collapsed, run.output(&path("collapsed.giqf")))?;

    let series = iteration_series(2, 10, 40, 100, 0.9, 0.05, seed.wrapping_add(3));
    write_features(&series.features, run.output(&path("mbc.giqf")))?;
    let mut w = create(run.output(&path("mbc_train.jsonl")))?;
    for (row, tag) in series.tags.iter().enumerate() {
        let line = TrainLine {
            feature_file: PathBuf::from("mbc.giqf"),
            row,
            iter: tag.iter,
            max_iter: tag.max_iter,
            is_real: tag.is_real,
        };
        let text = serde_json::to_string(&line).map_err(Error::from)?;
        writeln!(w, "{text}").map_err(|e| io_error(&path("mbc_train.jsonl"), e))?;
    }
    w.flush().map_err(|e| io_error(&path("mbc_train.jsonl"), e))?;

    for f in &run.outputs {
        println!("{f}");
    }
    Ok(())
}

pub fn fit_gmm_cmd(args: &FitGmmArgs, run: &mut Run) -> CmdResult {
    run.seed = Some(args.gmm.seed);
    let train = read_features(run.input(&args.input)?)?;
    let fit = fit_gmm(
        &train,
        args.gmm.components as usize,
        args.gmm.covariance.into(),
        &em_config(&args.gmm),
    )?;
    fit.model.save(run.output(&args.out))?;
    println!("log_likelihood={:.6}", fit.final_log_likelihood());
    println!("iterations={}", fit.log_likelihood_trace.len());
    println!("converged={}", fit.converged);
    Ok(())
}

pub fn build_index_cmd(args: &BuildIndexArgs, run: &mut Run) -> CmdResult {
    let reference = read_features(run.input(&args.input)?)?;
    let count = reference.count();
    let dim = reference.dim();
    build_index(reference)?;
    if args.k as usize > count {
        return Err(Error::KOutOfRange {
            k: args.k as usize,
            size: count,
        }
        .into());
    }
    let source = fs::canonicalize(&args.input).map_err(|e| io_error(&args.input, e))?;
    let manifest = IndexManifest {
        version: INDEX_VERSION,
        k: args.k,
        checksum: sha256_file(&source)?,
        source,
        count,
        dim,
    };
    giqa_core::json::write_file(&manifest, run.output(&args.out))?;
    println!("indexed={count} dim={dim} k={}", args.k);
    Ok(())
}

pub fn score(args: &ScoreArgs, run: &mut Run) -> CmdResult {
    let model_path = run.input(&args.model)?;
    let mut table = match args.method {
        Method::Gmm => {
            let model = GmmModel::load(model_path)?;
            let batch = read_features(run.input(&args.input)?)?;
            score_gmm(&model, &batch)?
        }
        Method::Knn => {
            let manifest = IndexManifest::load(model_path)?;
            let index = build_index(manifest.load_reference(run)?)?;
            let batch = read_features(run.input(&args.input)?)?;
            let k = args.k.unwrap_or(manifest.k) as usize;
            let table = score_knn(&index, &batch, k)?;
            if table.flagged_count() > 0 {
                log::warn!(
                    "{} rows coincide with a reference feature; their scores were clamped",
                    table.flagged_count()
                );
            }
            table
        }
        Method::Mbc => {
            let model = MbcModel::load(model_path)?;
            let batch = read_features(run.input(&args.input)?)?;
            score_mbc_batch(&model, &batch)?
        }
    };
    if args.normalize {
        table = normalize_scores(&table)?;
    }
    table.save_csv(run.output(&args.out))?;
    println!("rows={}", table.len());
    Ok(())
}

#[derive(Serialize)]
struct PairResult<'a> {
    id_a: &'a str,
    id_b: &'a str,
    winner: Winner,
    score_a: f64,
    score_b: f64,
    credit: f64,
}

pub fn eval_pairs(args: &EvalPairsArgs, run: &mut Run) -> CmdResult {
    let table = load_table(run, &args.scores)?;
    let pairs = PairDataset::load_csv(run.input(&args.pairs)?)?;
    let eval = pair_accuracy(&table, &pairs)?;
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_writer(create(run.output(out))?);
        for (((a, b, winner), (sa, sb)), credit) in pairs.pairs().iter().zip(&eval.scores).zip(&eval.credits) {
            w.serialize(PairResult {
                id_a: a,
                id_b: b,
                winner: *winner,
                score_a: *sa,
                score_b: *sb,
                credit: *credit,
            })
            .map_err(Error::from)?;
        }
        w.flush().map_err(|e| io_error(out, e))?;
    }
    println!("accuracy={:.4}", eval.accuracy);
    Ok(())
}

fn read_id_list(path: &Path) -> Result<Vec<String>, Error> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut ids = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| io_error(path, e))?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    Ok(ids)
}

fn write_results(path: &Path, header: [&str; 2], rows: &[(String, f64)]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for (name, v) in rows {
        w.write_record([name.as_str(), &v.to_string()])?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn print_results(key: &str, rows: &[(String, f64)]) {
    if let [(_, v)] = rows {
        println!("{key}={v:.4}");
    } else {
        for (name, v) in rows {
            println!("{key}={v:.4} {name}");
        }
    }
}

pub fn qs(args: &QsArgs, run: &mut Run) -> CmdResult {
    let mut tables = args
        .scores
        .iter()
        .map(|p| load_table(run, p))
        .collect::<Result<Vec<_>, _>>()?;
    // A single already-normalized table is taken as is; anything else is
    // normalized over the union of all tables.
    if tables.len() > 1 || tables[0].normalized().is_none() {
        normalize_jointly(&mut tables)?;
    }
    if let Some(subset) = &args.subset {
        let keep = read_id_list(run.input(subset)?)?;
        for t in &mut tables {
            let index = t.index();
            let missing: Vec<String> = keep.iter().filter(|id| !index.contains_key(id.as_str())).cloned().collect();
            if !missing.is_empty() {
                return Err(Error::MissingIds(missing).into());
            }
            *t = t.subset(&keep);
        }
    }
    let rows = args
        .scores
        .iter()
        .zip(&tables)
        .map(|(p, t)| Ok((p.display().to_string(), quality_score(t)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    if let Some(out) = &args.out {
        write_results(run.output(out), ["table", "qs"], &rows)?;
    }
    print_results("qs", &rows);
    Ok(())
}

pub fn ds(args: &DsArgs, run: &mut Run) -> CmdResult {
    let real = read_features(run.input(&args.real)?)?;
    let generated = args
        .generated
        .iter()
        .map(|p| read_features(run.input(p)?))
        .collect::<Result<Vec<_>, _>>()?;
    let scorer = match args.method {
        DensityMethod::Knn => DensityScorer::Knn { k: args.k as usize },
        DensityMethod::Gmm => {
            run.seed = Some(args.gmm.seed);
            DensityScorer::Gmm {
                n_components: args.gmm.components as usize,
                covariance_type: args.gmm.covariance.into(),
                config: em_config(&args.gmm),
            }
        }
    };
    let refs: Vec<&FeatureMatrix> = generated.iter().collect();
    let values = diversity_scores(&refs, &real, &scorer)?;
    let rows: Vec<(String, f64)> = args
        .generated
        .iter()
        .map(|p| p.display().to_string())
        .zip(values)
        .collect();
    if let Some(out) = &args.out {
        write_results(run.output(out), ["generated", "ds"], &rows)?;
    }
    print_results("ds", &rows);
    Ok(())
}

pub fn pick(args: &PickArgs, run: &mut Run) -> CmdResult {
    let table = load_table(run, &args.scores)?;
    let ids = pick_top(&table, args.rate)?;
    let mut w = create(run.output(&args.out))?;
    for id in &ids {
        writeln!(w, "{id}").map_err(|e| io_error(&args.out, e))?;
    }
    w.flush().map_err(|e| io_error(&args.out, e))?;
    println!("kept={} of {}", ids.len(), table.len());
    Ok(())
}

fn ensure_normalized(table: ScoreTable) -> Result<ScoreTable, Error> {
    if table.normalized().is_some() {
        Ok(table)
    } else {
        log::info!("score table has no normalized column; normalizing by min and max");
        normalize_scores(&table)
    }
}

pub fn weights(args: &WeightsArgs, run: &mut Run) -> CmdResult {
    let config = OhemConfig::new(args.tq, args.wl)?;
    let table = ensure_normalized(load_table(run, &args.scores)?)?;
    let weights = ohem_weights(&table, &config)?;
    let mut w = csv::Writer::from_writer(create(run.output(&args.out))?);
    w.write_record(["id", "weight"]).map_err(Error::from)?;
    for (id, weight) in &weights {
        w.write_record([id.as_str(), &weight.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(|e| io_error(&args.out, e))?;
    let up = weights.iter().filter(|(_, w)| *w != 1.0).count();
    println!("upweighted={up} of {}", weights.len());
    Ok(())
}

/// One line of the classifier training manifest.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainLine {
    feature_file: PathBuf,
    row: usize,
    #[serde(default)]
    iter: u64,
    #[serde(default)]
    max_iter: u64,
    is_real: bool,
}

fn read_training_set(path: &Path, s_g: f64, run: &mut Run) -> Result<Vec<LabeledFeature>, Error> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(run.input(path)?).map_err(|e| io_error(path, e))?;
    let mut files: BTreeMap<PathBuf, FeatureMatrix> = BTreeMap::new();
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TrainLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        let feature_path = base.join(&entry.feature_file);
        if !files.contains_key(&feature_path) {
            let m = read_features(run.input(&feature_path)?)?;
            files.insert(feature_path.clone(), m);
        }
        let matrix = &files[&feature_path];
        if entry.row >= matrix.count() {
            return Err(Error::Format(format!(
                "{}: line {}: row {} beyond the {} rows of {}",
                path.display(),
                n + 1,
                entry.row,
                matrix.count(),
                feature_path.display()
            )));
        }
        let tag = if entry.is_real {
            IterationTag::real()
        } else {
            IterationTag::generated(entry.iter, entry.max_iter)
                .map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), n + 1)))?
        };
        out.push(LabeledFeature::new(matrix.row_f64(entry.row), tag, s_g)?);
    }
    Ok(out)
}

fn write_history(path: &Path, fit: &MbcTraining) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["epoch", "train_loss", "validation_loss"])?;
    for (e, (t, v)) in fit.train_loss.iter().zip(&fit.validation_loss).enumerate() {
        w.write_record([e.to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn fit_mbc(args: &FitMbcArgs, run: &mut Run) -> CmdResult {
    run.seed = Some(args.seed);
    let config = MbcTrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        learning_rate: args.learning_rate,
        l2_penalty: args.l2_penalty,
        s_g: args.sg,
        seed: args.seed,
        ..MbcTrainConfig::default()
    };
    let dataset = read_training_set(&args.train, args.sg, run)?;
    let fit = train_mbc(&dataset, args.heads as usize, &config)?;
    fit.model.save(run.output(&args.out))?;
    if let Some(h) = &args.history {
        write_history(run.output(h), &fit)?;
    }
    println!("samples={}", dataset.len());
    println!("best_epoch={}", fit.best_epoch);
    println!("validation_loss={:.6}", fit.validation_loss[fit.best_epoch]);
    Ok(())
}

pub fn pca(args: &PcaArgs, run: &mut Run) -> CmdResult {
    let input = read_features(run.input(&args.input)?)?;
    let model = fit_pca(&input, args.pca_variance)?;
    model.save(run.output(&args.out))?;
    if let Some(t) = &args.transformed {
        write_features(&apply_pca(&model, &input)?, run.output(t))?;
    }
    println!(
        "components={} of {} retained={:.6}",
        model.output_dim(),
        model.input_dim(),
        model.retained_fraction()
    );
    Ok(())
}

pub fn project(args: &ProjectArgs, run: &mut Run) -> CmdResult {
    let model = PcaModel::load(run.input(&args.model)?)?;
    let input = read_features(run.input(&args.input)?)?;
    let out = apply_pca(&model, &input)?;
    write_features(&out, run.output(&args.out))?;
    println!("rows={} dim={}", out.count(), out.dim());
    Ok(())
}

pub fn split(args: &SplitArgs, run: &mut Run) -> CmdResult {
    run.seed = Some(args.seed);
    let input = read_features(run.input(&args.input)?)?;
    let (first, rest) = split_train_val(&input, args.ratio, args.seed)?;
    write_features(&first, run.output(&args.out))?;
    write_features(&rest, run.output(&args.rest))?;
    println!("first={} rest={}", first.count(), rest.count());
    Ok(())
}

pub fn histogram(args: &HistogramArgs, run: &mut Run) -> CmdResult {
    let table = ensure_normalized(load_table(run, &args.scores)?)?;
    let bins = score_histogram(&table, args.bins as usize)?;
    write_histogram_csv(&bins, create(run.output(&args.out))?)?;
    println!("rows={} bins={}", table.len(), bins.len());
    Ok(())
}
