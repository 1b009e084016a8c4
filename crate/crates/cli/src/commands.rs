use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use morphprobe::agreescore::{read_grid_csv, score_dataset, write_grid_csv, Significance, CHI2_CRIT_P05};
use morphprobe::analysis::{
    compare_baseline, correlation_report, linear_layer_averages, write_baseline_csv, write_correlation_csv,
    BaselineComparison, CorrelationTarget,
};
use morphprobe::conllu::{parse_conllu, TreebankSentence};
use morphprobe::morphdata::{
    ambiguity_stats, avg_feature_length, build_agree_dataset_en, build_agree_dataset_rich,
    build_classification_dataset, build_lexicon, read_agree_csv, read_classification_csv, read_lexicon_tsv,
    write_agree_csv, write_classification_csv, write_sentence_list, AgreeExample, ClassificationSplit, Feature,
    FeatureSchema,
};
use morphprobe::probes::{read_results_csv, run_probe_suite, write_results_csv, EmbeddingTable, ResultRecord, SuiteReport};
use morphprobe::report::{emit_heatmap, emit_layer_curves, emit_table, ArtifactWriter, CurveGroup, HeatmapScale, Manifest, TableFormat, TableSpec};
use morphprobe::tensorio::BundleReader;
use morphprobe::AgreeScoreGridF64;

use crate::config::{AgreeKind, RunConfig, Variant};

const VARIANTS: [Variant; 2] = [Variant::Pretrained, Variant::Random];

fn stage_dir(config: &RunConfig, stage: &str) -> PathBuf {
    config.out.join(stage)
}

fn writer(config: &RunConfig, stage: &str) -> ArtifactWriter {
    ArtifactWriter::new(stage_dir(config, stage), Manifest::new(&config.canonical()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn open_bundle(path: &Path) -> Result<BundleReader<BufReader<File>>> {
    let file = File::open(path).with_context(|| format!("opening bundle {}", path.display()))?;
    BundleReader::new(BufReader::new(file)).with_context(|| format!("reading bundle {}", path.display()))
}

/// Parses the treebanks in lexicographic path order. Malformed blocks are
/// reported and skipped; a sentence id already seen in an earlier file is
/// dropped.
pub fn load_treebanks(paths: &[PathBuf]) -> Result<Vec<TreebankSentence>> {
    let mut paths = paths.to_vec();
    paths.sort();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for path in &paths {
        let file = File::open(path).with_context(|| format!("opening treebank {}", path.display()))?;
        let outcome = parse_conllu(BufReader::new(file), &path.display().to_string())?;
        for e in &outcome.errors {
            warn!("skipped block: {e}");
        }
        for s in outcome.sentences {
            if seen.insert(s.sentence_id.clone()) {
                out.push(s);
            } else {
                warn!("{}: duplicate sentence id {:?} dropped", path.display(), s.sentence_id);
            }
        }
    }
    Ok(out)
}

fn dataset_file(feature: Feature) -> String {
    format!("{feature}.csv")
}

fn agree_path(config: &RunConfig) -> PathBuf {
    config.agree_dataset.clone().unwrap_or_else(|| stage_dir(config, "datasets").join("agree.csv"))
}

/// Reads the dataset CSVs written by `build-datasets`.
pub fn load_datasets(config: &RunConfig, schema: &FeatureSchema) -> Result<Vec<ClassificationSplit>> {
    let dir = stage_dir(config, "datasets");
    config
        .features(schema)?
        .into_iter()
        .map(|feature| {
            let path = dir.join(dataset_file(feature));
            let file = File::open(&path).with_context(|| format!("opening dataset {} (run build-datasets first)", path.display()))?;
            let (train, test) = read_classification_csv(file)?;
            let values = schema.values(feature).map(<[String]>::to_vec).unwrap_or_default();
            let per_value = train.iter().chain(&test).filter(|e| Some(&e.value) == values.first()).count();
            Ok(ClassificationSplit { feature, values, train, test, per_value })
        })
        .collect()
}

pub fn build_datasets(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let schema = config.schema()?;
    let features = config.features(&schema)?;
    let corpus = load_treebanks(&config.treebanks)?;
    if corpus.is_empty() {
        bail!("no sentences in the configured treebanks");
    }
    let external = match &config.lexicon {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening lexicon {}", path.display()))?;
            let (rows, rejected) = read_lexicon_tsv(BufReader::new(file))?;
            if !rejected.is_empty() {
                warn!("{}: {} malformed lexicon lines skipped", path.display(), rejected.len());
            }
            rows
        }
        None => Vec::new(),
    };
    let lexicon = build_lexicon(&corpus, &schema, &external)?;
    if lexicon.rejected_rows > 0 {
        warn!("{} lexicon rows name a feature or value outside the schema", lexicon.rejected_rows);
    }

    let mut out = writer(config, "datasets");
    for path in config.treebanks.iter().chain(&config.lexicon) {
        out.manifest_mut().add_input(path)?;
    }
    let mut used: BTreeSet<String> = BTreeSet::new();
    for feature in features {
        let split = build_classification_dataset(&corpus, &schema, &lexicon.lexicon, feature, &config.sampling())?;
        info!("{feature}: {} per value, {} train / {} test", split.per_value, split.train.len(), split.test.len());
        let bytes = csv_bytes(|b| Ok(write_classification_csv(b, &split.train, &split.test)?))?;
        out.write(&dataset_file(feature), &bytes)?;
        used.extend(split.all_examples().map(|e| e.sentence_id.clone()));
    }

    let agree = match config.agree_kind() {
        AgreeKind::Pair => build_agree_dataset_en(&corpus, config.agree_cap),
        AgreeKind::Rich => build_agree_dataset_rich(&corpus, config.agree_cap),
    };
    info!("agree dataset: {} examples", agree.len());
    out.write("agree.csv", &csv_bytes(|b| Ok(write_agree_csv(b, &agree)?))?)?;
    used.extend(agree.iter().map(|e| e.sentence_id.clone()));

    let sentences = corpus.iter().filter(|s| used.contains(&s.sentence_id));
    out.write("sentences.tsv", &csv_bytes(|b| Ok(write_sentence_list(b, sentences)?))?)?;
    out.finish()?;
    Ok(())
}

pub fn stats(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let schema = config.schema()?;
    let datasets = load_datasets(config, &schema)?;
    let by_feature: BTreeMap<Feature, Vec<_>> =
        datasets.iter().map(|d| (d.feature, d.all_examples().cloned().collect())).collect();
    let stats = ambiguity_stats(&by_feature)?;
    let length = avg_feature_length(&schema);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["language", "feature", "values", "examples", "ambiguity_pct"])?;
    for d in &datasets {
        w.write_record([
            config.language.clone(),
            d.feature.to_string(),
            d.values.len().to_string(),
            by_feature[&d.feature].len().to_string(),
            (100.0 * stats.per_feature[&d.feature]).to_string(),
        ])?;
    }
    w.write_record([
        config.language.clone(),
        "all".into(),
        format!("{length}"),
        by_feature.values().map(Vec::len).sum::<usize>().to_string(),
        (100.0 * stats.pct_ambiguous).to_string(),
    ])?;
    let mut out = writer(config, "stats");
    out.write("stats.csv", &w.into_inner()?)?;
    out.finish()?;
    info!("{}: {:.1}% ambiguous, average feature length {length}", config.language, 100.0 * stats.pct_ambiguous);
    Ok(())
}

pub fn probe(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let schema = config.schema()?;
    let datasets = load_datasets(config, &schema)?;
    if config.bundle(Variant::Pretrained).is_none() {
        bail!("probe needs bundles.pretrained");
    }
    let needed = EmbeddingTable::<f32>::needed_words(&datasets);
    let mut out = writer(config, "probes");
    for variant in VARIANTS {
        let Some(path) = config.bundle(variant) else { continue };
        out.manifest_mut().add_input(path)?;
        let table = EmbeddingTable::<f32>::gather(open_bundle(path)?, &needed, &config.layers)
            .with_context(|| format!("gathering embeddings from {}", path.display()))?;
        let mut records: Vec<ResultRecord> = Vec::new();
        let mut aggregates = csv::Writer::from_writer(Vec::new());
        aggregates.write_record(["ambiguity", "task", "feature", "layer", "mean_f1", "cells"])?;
        let filters = std::iter::once(None).chain(config.ambiguity_filters.iter().cloned().map(Some));
        for filter in filters {
            let label = filter.as_ref().map(|f| f.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")).unwrap_or_default();
            let report: SuiteReport = run_probe_suite(&table, &datasets, &config.suite(filter))?;
            for a in report.feature_averages.iter().chain(&report.layer_averages) {
                aggregates.write_record([
                    label.clone(),
                    a.task.to_string(),
                    a.feature.map(|f| f.to_string()).unwrap_or_default(),
                    a.layer.map(|l| l.to_string()).unwrap_or_default(),
                    a.mean_f1.to_string(),
                    a.cells.to_string(),
                ])?;
            }
            records.extend(report.results.iter().map(ResultRecord::from));
        }
        info!("{}: {} probe cells", variant.as_str(), records.len());
        let bytes = csv_bytes(|b| Ok(write_results_csv(b, &records)?))?;
        out.write(&format!("results_{}.csv", variant.as_str()), &bytes)?;
        out.write(&format!("aggregates_{}.csv", variant.as_str()), &aggregates.into_inner()?)?;
    }
    out.finish()?;
    Ok(())
}

fn load_agree(config: &RunConfig) -> Result<Vec<AgreeExample>> {
    let path = agree_path(config);
    let file = File::open(&path).with_context(|| format!("opening agree dataset {}", path.display()))?;
    Ok(read_agree_csv(file)?)
}

pub fn agree(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let examples = load_agree(config)?;
    if examples.is_empty() {
        bail!("agree dataset {} is empty", agree_path(config).display());
    }
    if config.bundle(Variant::Pretrained).is_none() {
        bail!("agree needs bundles.pretrained");
    }
    let mut out = writer(config, "agree");
    out.manifest_mut().add_input(&agree_path(config))?;
    for variant in VARIANTS {
        let Some(path) = config.bundle(variant) else { continue };
        out.manifest_mut().add_input(path)?;
        let grid: AgreeScoreGridF64 = score_dataset(open_bundle(path)?, &examples)
            .with_context(|| format!("scoring {}", path.display()))?;
        for (layer, head) in grid.cells_above(CHI2_CRIT_P05) {
            info!("{}: layer {} head {} clears p<0.05", variant.as_str(), layer + 1, head + 1);
        }
        let name = variant.as_str();
        out.write(&format!("grid_{name}.csv"), &csv_bytes(|b| Ok(write_grid_csv(b, &grid)?))?)?;
        let title = format!("{} agree score ({name})", config.language);
        out.write(&format!("heatmap_{name}.svg"), emit_heatmap(grid.agree.view(), HeatmapScale::Auto, &title)?.as_bytes())?;
        let title = format!("{} out score ({name})", config.language);
        out.write(&format!("heatmap_{name}_out.svg"), emit_heatmap(grid.out.view(), HeatmapScale::Auto, &title)?.as_bytes())?;
    }
    out.finish()?;
    Ok(())
}

fn results_path(config: &RunConfig, variant: Variant) -> PathBuf {
    stage_dir(config, "probes").join(format!("results_{}.csv", variant.as_str()))
}

/// Records every existing probe result file as a manifest input.
fn add_result_inputs(out: &mut ArtifactWriter, config: &RunConfig) -> Result<()> {
    for variant in VARIANTS {
        let path = results_path(config, variant);
        if path.exists() {
            out.manifest_mut().add_input(&path)?;
        }
    }
    Ok(())
}

fn load_results(config: &RunConfig, variant: Variant) -> Result<Option<Vec<ResultRecord>>> {
    let path = results_path(config, variant);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path)?;
    Ok(Some(read_results_csv(file).with_context(|| format!("reading {}", path.display()))?))
}

fn baseline(config: &RunConfig) -> Result<Option<BaselineComparison>> {
    let Some(pretrained) = load_results(config, Variant::Pretrained)? else { bail!("no pretrained probe results; run probe first") };
    match load_results(config, Variant::Random)? {
        Some(random) => Ok(Some(compare_baseline(&pretrained, &random)?)),
        None => Ok(None),
    }
}

pub fn analyze(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let schema = config.schema()?;
    let Some(pretrained) = load_results(config, Variant::Pretrained)? else { bail!("no pretrained probe results; run probe first") };
    let performance = linear_layer_averages(&pretrained);
    let datasets = load_datasets(config, &schema)?;
    let by_feature: BTreeMap<Feature, Vec<_>> =
        datasets.iter().map(|d| (d.feature, d.all_examples().cloned().collect())).collect();
    let ambiguity: BTreeMap<Feature, f64> =
        ambiguity_stats(&by_feature)?.per_feature.into_iter().map(|(f, v)| (f, 100.0 * v)).collect();
    let lengths: BTreeMap<Feature, f64> = datasets.iter().map(|d| (d.feature, d.values.len() as f64)).collect();

    let reports = [(CorrelationTarget::AmbiguityPct, &ambiguity), (CorrelationTarget::FeatureLength, &lengths)]
        .into_iter()
        .map(|(target, values)| {
            correlation_report(&config.language, target, &performance, values, config.exact_p)
                .with_context(|| format!("correlating linear F1 with {target}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = writer(config, "analysis");
    add_result_inputs(&mut out, config)?;
    for feature in config.features(&schema)? {
        out.manifest_mut().add_input(&stage_dir(config, "datasets").join(dataset_file(feature)))?;
    }
    out.write("correlations.csv", &csv_bytes(|b| Ok(write_correlation_csv(b, &reports)?))?)?;
    if let Some(comparison) = baseline(config)? {
        let flagged = comparison.flagged().count();
        if flagged > 0 {
            warn!("{flagged} probe cells are at or below the random baseline");
        }
        out.write("baseline.csv", &csv_bytes(|b| Ok(write_baseline_csv(b, &comparison)?))?)?;
    }
    out.finish()?;
    Ok(())
}

/// Feature × layer table of one task's unrestricted pretrained results.
fn probe_table(records: &[ResultRecord], task: morphprobe::probes::ProbeTask, comparison: Option<&BaselineComparison>) -> Result<Option<TableSpec>> {
    let cells: BTreeMap<(Feature, usize), f64> = records
        .iter()
        .filter(|r| r.task == task && r.ambiguity.is_none())
        .map(|r| ((r.feature, r.layer), r.weighted_f1))
        .collect();
    if cells.is_empty() {
        return Ok(None);
    }
    let features: BTreeSet<Feature> = cells.keys().map(|k| k.0).collect();
    let layers: BTreeSet<usize> = cells.keys().map(|k| k.1).collect();
    let mut values = Vec::new();
    let mut below = Vec::new();
    for &f in &features {
        for &l in &layers {
            let Some(&v) = cells.get(&(f, l)) else { bail!("{task}: no result for {f} at layer {l}") };
            values.push(v);
            let flagged = comparison.is_some_and(|c| {
                c.cells.iter().any(|b| b.feature == f && b.task == task && b.layer == Some(l) && b.at_or_below_baseline)
            });
            below.push(flagged);
        }
    }
    let mut spec = TableSpec::new(
        features.iter().map(Feature::to_string).collect(),
        layers.iter().map(|l| format!("L{l}")).collect(),
        values,
    );
    if comparison.is_some() {
        spec.below_baseline = Some(below);
    }
    Ok(Some(spec))
}

pub fn report(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let mut out = writer(config, "report");
    add_result_inputs(&mut out, config)?;
    let mut wrote = 0;
    if let Some(records) = load_results(config, Variant::Pretrained)? {
        let comparison = baseline(config)?;
        for &task in &config.tasks {
            let Some(spec) = probe_table(&records, task, comparison.as_ref())? else { continue };
            out.write(&format!("probe_{task}.csv"), emit_table(&spec, TableFormat::Csv, true)?.as_bytes())?;
            out.write(&format!("probe_{task}.md"), emit_table(&spec, TableFormat::Markdown, false)?.as_bytes())?;
            wrote += 2;
        }
        out.write("curves_language.csv", emit_layer_curves(&records, CurveGroup::Language)?.as_bytes())?;
        out.write("curves_ambiguity.csv", emit_layer_curves(&records, CurveGroup::AmbiguityDegree)?.as_bytes())?;
        wrote += 2;
    }
    for variant in VARIANTS {
        let path = stage_dir(config, "agree").join(format!("grid_{}.csv", variant.as_str()));
        if !path.exists() {
            continue;
        }
        out.manifest_mut().add_input(&path)?;
        let (agree, _) = read_grid_csv(File::open(&path)?)?;
        let (layers, heads) = agree.dim();
        let mut spec = TableSpec::new(
            (1..=layers).map(|l| format!("Layer {l}")).collect(),
            (1..=heads).map(|h| format!("Head {h}")).collect(),
            agree.iter().copied().collect(),
        );
        spec.significance = Some(agree.iter().map(|&v| Significance::of(v)).collect());
        let name = variant.as_str();
        out.write(&format!("agree_{name}.csv"), emit_table(&spec, TableFormat::Csv, true)?.as_bytes())?;
        out.write(&format!("agree_{name}.md"), emit_table(&spec, TableFormat::Markdown, false)?.as_bytes())?;
        wrote += 2;
    }
    if wrote == 0 {
        bail!("nothing to report; run probe or agree first");
    }
    out.finish()?;
    Ok(())
}
