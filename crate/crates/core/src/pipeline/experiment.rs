use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ekg::{build_ekg, load_relations, BuildOptions, RelationRow};
use crate::embed::{train_embeddings, EmbedHyperparams};
use crate::error::{Error, Result, StageContext};
use crate::ingest::{
    generate_synthetic, load_links, load_records_into, partition, toml_error, AttributeId, LinkedDataset,
    Provenance, RecordSet, Schema, SynthConfig, TextFormat, ValueDictionary,
};
use crate::model::Model;
use crate::pipeline::{
    block_candidates, label_pairs, CandidatePair, LabeledPairs, Metrics, DEFAULT_MAX_CROSS_PRODUCT,
};
use crate::weights::{features_for, select_threshold, train_weights_on_features, PairFeatures, RLHyperparams, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Learned attribute weights.
    #[default]
    Werl,
    /// All weights fixed to 1.
    Merl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgVariant {
    #[default]
    Ekg,
    /// Identity triples included and direction ignored.
    Er,
}

impl KgVariant {
    pub fn build_options(self) -> BuildOptions {
        match self {
            KgVariant::Ekg => BuildOptions::default(),
            KgVariant::Er => BuildOptions::er_degenerate(),
        }
    }
}

macro_rules! display_snake {
    ($($ty:ty { $($variant:ident => $s:literal),* })*) => {$(
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$variant => $s),* })
            }
        }
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$variant),)*
                    other => Err(Error::Invalid(format!("unknown value `{other}`"))),
                }
            }
        }
    )*};
}

display_snake! {
    Mode { Werl => "werl", Merl => "merl" }
    KgVariant { Ekg => "ekg", Er => "er" }
}

/// Record files on disk. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub a: PathBuf,
    pub b: PathBuf,
    pub links: PathBuf,
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocking: Option<String>,
    #[serde(default = "comma")]
    pub delimiter: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_markers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relations: Option<PathBuf>,
}

fn comma() -> char {
    ','
}

impl FileSource {
    /// The layout written by synthetic generation.
    pub fn in_dir(dir: &Path, attributes: Vec<String>, blocking: Option<String>) -> Self {
        FileSource {
            a: dir.join("A.csv"),
            b: dir.join("B.csv"),
            links: dir.join("truth_links.csv"),
            attributes,
            blocking,
            delimiter: ',',
            null_markers: None,
            relations: None,
        }
    }

    /// The `in_dir` layout with attributes taken from the header of `A.csv`.
    pub fn discover(dir: &Path, blocking: Option<String>) -> Result<Self> {
        let path = dir.join("A.csv");
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let format = TextFormat::comma();
        let attributes = rdr
            .headers()
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
            .iter()
            .filter(|h| !h.trim().eq_ignore_ascii_case(&format.id_column))
            .map(|h| h.trim().to_string())
            .collect();
        Ok(FileSource::in_dir(dir, attributes, blocking))
    }

    pub fn format(&self) -> Result<TextFormat> {
        if !self.delimiter.is_ascii() {
            return Err(Error::config("files.delimiter", "delimiter must be a single ASCII character"));
        }
        let mut format = TextFormat {
            delimiter: self.delimiter as u8,
            ..TextFormat::default()
        };
        if let Some(markers) = &self.null_markers {
            format.null_markers = markers.clone();
        }
        Ok(format)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.a, &mut self.b, &mut self.links] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.relations.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub kg_variant: KgVariant,
    /// Seeds generation and partitioning.
    pub seed: u64,
    /// train, validation, test
    pub ratios: [f64; 3],
    pub max_cross_product: u64,
    /// Attributes that must agree for the exact-match baseline; empty means
    /// every attribute.
    pub baseline_attributes: Vec<String>,
    /// Fixed decision threshold instead of validation selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<FileSource>,
    pub embed: EmbedHyperparams,
    pub weights: RLHyperparams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            mode: Mode::Werl,
            kg_variant: KgVariant::Ekg,
            seed: 0,
            ratios: [0.6, 0.3, 0.1],
            max_cross_product: DEFAULT_MAX_CROSS_PRODUCT,
            baseline_attributes: Vec::new(),
            threshold: None,
            synthetic: None,
            files: None,
            embed: EmbedHyperparams::default(),
            weights: RLHyperparams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Generated Febrl-shaped data with tuned hyperparameters.
    pub fn febrl_like() -> Self {
        ExperimentConfig {
            name: "febrl-like".into(),
            baseline_attributes: vec!["given_name".into(), "surname".into()],
            synthetic: Some(SynthConfig::febrl_like()),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(&e))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a config file, resolving relative data paths against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let config = ExperimentConfig::read_unvalidated(path)?;
        config.validate()?;
        Ok(config)
    }

    /// As `from_file` but without validation, for callers that supply the
    /// data source themselves.
    pub fn read_unvalidated(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = toml::from_str(&text).map_err(|e| toml_error(&e))?;
        if let Some(files) = config.files.as_mut() {
            files.resolve(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Set every seed (data, embeddings, weights) from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.embed.seed = seed;
        self.weights.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.files) {
            (Some(_), Some(_)) => {
                return Err(Error::config("synthetic", "give either [synthetic] or [files], not both"))
            }
            (None, None) => return Err(Error::config("synthetic", "a [synthetic] or [files] section is required")),
            _ => {}
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("threshold", "must lie in (0, 1)"));
            }
        }
        self.embed.validate()?;
        if self.mode == Mode::Werl {
            self.weights.validate()?;
        }
        Ok(())
    }
}

/// Counts for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitSummary {
    pub records_a: usize,
    pub records_b: usize,
    pub links: usize,
    pub candidates: usize,
    pub true_candidates: usize,
    pub blocking_lost: usize,
    /// Candidates sharing no present attribute.
    pub undefined: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GraphSummary {
    pub entities: usize,
    pub values: usize,
    pub relational_triples: usize,
    pub attribute_triples: usize,
    pub evolution_triples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub attributes: Vec<String>,
    pub splits: [SplitSummary; 3],
    pub graph: GraphSummary,
    pub embed_loss: Vec<f64>,
    pub skipped_positives: usize,
    pub weights: WeightVector,
    pub weight_loss: Vec<f64>,
    pub threshold: f64,
    pub validation: Metrics,
    pub test: Metrics,
    pub exact_match_baseline: Metrics,
    pub all_negative_baseline: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub model: Model,
}

const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

struct Loaded {
    schema: Schema,
    dict: ValueDictionary,
    data: LinkedDataset,
    relations: Vec<RelationRow>,
}

fn load(config: &ExperimentConfig) -> Result<Loaded> {
    if let Some(synth) = &config.synthetic {
        let s = generate_synthetic(synth, config.seed)?;
        return Ok(Loaded {
            schema: s.schema,
            dict: s.dict,
            data: s.data,
            relations: Vec::new(),
        });
    }
    let files = config
        .files
        .as_ref()
        .ok_or_else(|| Error::config("files", "no data source configured"))?;
    let schema = Schema::new(&files.attributes, files.blocking.as_deref())?;
    let format = files.format()?;
    let mut dict = ValueDictionary::new(&schema);
    let a = load_records_into(&files.a, &schema, &format, &mut dict)?;
    let b = load_records_into(&files.b, &schema, &format, &mut dict)?;
    let links = load_links(&files.links, Provenance::Train)?;
    let relations = match &files.relations {
        Some(p) => load_relations(p, format.delimiter)?,
        None => Vec::new(),
    };
    Ok(Loaded {
        schema,
        dict,
        data: LinkedDataset { a, b, links },
        relations,
    })
}

/// Scores for labeled pairs, with blocking-lost truth links appended as
/// true pairs at probability 0.
fn scored_outcomes(labeled: &LabeledPairs, features: &[PairFeatures], w: &WeightVector) -> Vec<CandidatePair> {
    let mut out: Vec<CandidatePair> = labeled
        .pairs
        .iter()
        .zip(features)
        .map(|(p, f)| CandidatePair {
            probability: Some(f.probability(w)),
            ..*p
        })
        .collect();
    out.extend(labeled.blocking_lost.iter().map(|&(a, b)| CandidatePair {
        probability: Some(0.0),
        ..CandidatePair::labeled(a, b, true)
    }));
    out
}

/// Match iff every listed attribute is present in both records and equal.
pub fn exact_match_baseline(
    labeled: &LabeledPairs,
    a: &RecordSet,
    b: &RecordSet,
    attributes: &[AttributeId],
) -> Result<Metrics> {
    let mut outcomes = Vec::with_capacity(labeled.pairs.len() + labeled.blocking_lost.len());
    for p in &labeled.pairs {
        let h = a.get(p.a_entity).ok_or(Error::MissingEntity(p.a_entity))?;
        let t = b.get(p.b_entity).ok_or(Error::MissingEntity(p.b_entity))?;
        let agree = attributes
            .iter()
            .all(|&at| matches!((h.value(at), t.value(at)), (Some(x), Some(y)) if x == y));
        outcomes.push((p.label == Some(true), agree));
    }
    outcomes.extend(labeled.blocking_lost.iter().map(|_| (true, false)));
    Ok(Metrics::from_outcomes(outcomes))
}

/// Predict non-match for every pair.
pub fn all_negative_baseline(labels: impl IntoIterator<Item = bool>) -> Metrics {
    Metrics::from_outcomes(labels.into_iter().map(|l| (l, false)))
}

/// Load, partition, block, build the graph from training links, train both
/// steps, select the threshold on validation and evaluate on test.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let loaded = load(config).stage("load")?;
    let schema = &loaded.schema;
    let splits = partition(&loaded.data, config.ratios, config.seed.wrapping_add(1)).stage("partition")?;
    let blocking = schema.blocking();

    let mut labeled = Vec::with_capacity(3);
    for split in splits.iter() {
        let pairs = block_candidates(&split.a, &split.b, blocking, config.max_cross_product).stage("block")?;
        labeled.push(label_pairs(&pairs, &split.links));
    }

    let ekg = build_ekg(
        schema,
        &loaded.dict,
        &splits.train.a,
        &splits.train.b,
        &splits.train.links,
        &loaded.relations,
        config.kg_variant.build_options(),
    )
    .stage("build_ekg")?;
    let graph = GraphSummary {
        entities: ekg.entities().len(),
        values: ekg.num_values(),
        relational_triples: ekg.relational().len(),
        attribute_triples: ekg.attribute_triples().len(),
        evolution_triples: ekg.evolution().len(),
    };
    log::info!(
        "graph: {} entities, {} evolution triples",
        graph.entities,
        graph.evolution_triples
    );

    let embed = train_embeddings(&ekg, &config.embed).stage("train_embeddings")?;
    let store = embed.store;

    let mut features = Vec::with_capacity(3);
    for (split, pairs) in splits.iter().zip(&labeled) {
        features.push(features_for(&pairs.pairs, &split.a, &split.b, &store).stage("score")?);
    }

    let (weights, weight_loss) = match config.mode {
        Mode::Merl => (WeightVector::ones(schema.len()), Vec::new()),
        Mode::Werl => {
            let (pos, neg): (Vec<_>, Vec<_>) = labeled[0]
                .pairs
                .iter()
                .zip(&features[0])
                .partition(|(p, _)| p.label == Some(true));
            let pos: Vec<PairFeatures> = pos.into_iter().map(|(_, f)| f.clone()).collect();
            let neg: Vec<PairFeatures> = neg.into_iter().map(|(_, f)| f.clone()).collect();
            let t = train_weights_on_features(&pos, &neg, schema.len(), &config.weights).stage("train_weights")?;
            (t.weights, t.loss_history)
        }
    };

    let validation_pairs = scored_outcomes(&labeled[1], &features[1], &weights);
    let threshold = match config.threshold {
        Some(t) => t,
        None => {
            let scored: Vec<(bool, f64)> = validation_pairs
                .iter()
                .map(|p| (p.label == Some(true), p.probability.unwrap_or(0.0)))
                .collect();
            if scored.is_empty() {
                return Err(Error::Invalid("validation split has no candidate pairs".into())).stage("select_threshold");
            }
            select_threshold(&scored)
        }
    };
    let validation = super::evaluate(&validation_pairs, threshold).stage("evaluate")?;
    let test_pairs = scored_outcomes(&labeled[2], &features[2], &weights);
    let test = super::evaluate(&test_pairs, threshold).stage("evaluate")?;

    let baseline_ids: Vec<AttributeId> = if config.baseline_attributes.is_empty() {
        schema.ids().collect()
    } else {
        config
            .baseline_attributes
            .iter()
            .map(|n| {
                schema
                    .attribute_id(n)
                    .ok_or_else(|| Error::config("baseline_attributes", format!("unknown attribute `{n}`")))
            })
            .collect::<Result<_>>()?
    };
    let exact_match_baseline =
        exact_match_baseline(&labeled[2], &splits.test.a, &splits.test.b, &baseline_ids).stage("evaluate")?;
    let all_negative_baseline = all_negative_baseline(test_pairs.iter().map(|p| p.label == Some(true)));

    let mut summaries = [SplitSummary::default(); 3];
    for ((s, split), (pairs, f)) in summaries.iter_mut().zip(splits.iter()).zip(labeled.iter().zip(&features)) {
        *s = SplitSummary {
            records_a: split.a.len(),
            records_b: split.b.len(),
            links: split.links.len(),
            candidates: pairs.pairs.len(),
            true_candidates: pairs.positives(),
            blocking_lost: pairs.blocking_lost.len(),
            undefined: f.iter().filter(|x| x.shared == 0).count(),
        };
    }

    let model = Model {
        store,
        weights: weights.clone(),
        blocking: blocking.map(|a| schema.name(a).to_string()),
        mode: config.mode,
        kg_variant: config.kg_variant,
        embed: config.embed.clone(),
        rl_margin: config.weights.margin,
        loss_sign: config.weights.loss_sign,
        threshold,
    };
    let report = ExperimentReport {
        config: config.clone(),
        attributes: schema.names().to_vec(),
        splits: summaries,
        graph,
        embed_loss: embed.loss_history,
        skipped_positives: embed.skipped_positives,
        weights,
        weight_loss,
        threshold,
        validation,
        test,
        exact_match_baseline,
        all_negative_baseline,
    };
    Ok(ExperimentRun { report, model })
}

/// Published F-scores shown for context at the end of every report.
const REFERENCE_ROWS: [(&str, &str, f64); 3] = [
    ("BALL census", "WERL (EKG)", 0.93),
    ("Febrl", "MERL (EKG)", 0.98),
    ("Cora", "WERL (EKG)", 0.46),
];

impl ExperimentReport {
    /// The one-line machine-readable summary that ends `report.txt`.
    pub fn metrics_line(&self) -> String {
        format!(
            "METRICS name={} mode={} kg={} loss_sign={} threshold={:.2} {}",
            self.config.name, self.config.mode, self.config.kg_variant, self.config.weights.loss_sign, self.threshold, self.test
        )
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "experiment\t{}", c.name);
        let _ = writeln!(s, "mode\t{}", c.mode);
        let _ = writeln!(s, "kg_variant\t{}", c.kg_variant);
        let _ = writeln!(s, "loss_sign\t{}", c.weights.loss_sign);
        let _ = writeln!(
            s,
            "seeds\tdata={} partition={} embed={} weights={}",
            c.seed,
            c.seed.wrapping_add(1),
            c.embed.seed,
            c.weights.seed
        );
        s.push_str("\n[config]\n");
        s.push_str(&c.to_toml());

        s.push_str("\n[splits]\nsplit\trecords_a\trecords_b\tlinks\tcandidates\ttrue_candidates\tblocking_lost\tundefined\n");
        for (name, x) in SPLIT_NAMES.iter().zip(&self.splits) {
            let _ = writeln!(
                s,
                "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                x.records_a, x.records_b, x.links, x.candidates, x.true_candidates, x.blocking_lost, x.undefined
            );
        }

        let g = &self.graph;
        s.push_str("\n[graph]\n");
        let _ = writeln!(s, "entities\t{}", g.entities);
        let _ = writeln!(s, "values\t{}", g.values);
        let _ = writeln!(s, "relational_triples\t{}", g.relational_triples);
        let _ = writeln!(s, "attribute_triples\t{}", g.attribute_triples);
        let _ = writeln!(s, "evolution_triples\t{}", g.evolution_triples);

        s.push_str("\n[training]\n");
        let first_last = |v: &[f64]| match (v.first(), v.last()) {
            (Some(a), Some(b)) => format!("{} epochs, first {a:.6}, last {b:.6}", v.len()),
            _ => "not run".to_string(),
        };
        let _ = writeln!(s, "embedding_loss\t{}", first_last(&self.embed_loss));
        let _ = writeln!(s, "skipped_positives\t{}", self.skipped_positives);
        let _ = writeln!(s, "weight_loss\t{}", first_last(&self.weight_loss));

        s.push_str("\n[weights]\n");
        for (name, w) in self.attributes.iter().zip(self.weights.as_slice()) {
            let _ = writeln!(s, "{name}\t{w:.6}");
        }
        let _ = writeln!(s, "threshold\t{:.2}", self.threshold);

        s.push_str("\n[metrics]\nset\t");
        s.push_str(&Metrics::CSV_HEADER.replace(',', "\t"));
        s.push('\n');
        for (name, m) in self.metric_rows() {
            let _ = writeln!(s, "{name}\t{}", m.csv_row().replace(',', "\t"));
        }

        s.push_str("\n[reference]\n");
        for (data, method, f) in REFERENCE_ROWS {
            let _ = writeln!(s, "published\t{data}\t{method}\tF={f:.2}");
        }
        s.push('\n');
        s.push_str(&self.metrics_line());
        s.push('\n');
        s
    }

    pub fn metric_rows(&self) -> [(&'static str, &Metrics); 4] {
        [
            ("validation", &self.validation),
            ("test", &self.test),
            ("baseline_exact_match", &self.exact_match_baseline),
            ("baseline_all_negative", &self.all_negative_baseline),
        ]
    }
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:?}");
    }
    s
}

/// Files written into a run directory, relative to it.
pub const RUN_FILES: [&str; 6] = [
    "config.toml",
    "loss_embed.csv",
    "loss_weights.csv",
    "metrics.csv",
    "report.txt",
    "model.tsv",
];

/// Write the run directory layout and return the paths written.
pub fn write_run_dir(dir: &Path, run: &ExperimentRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = &run.report;
    let mut metrics = format!("set,{}\n", Metrics::CSV_HEADER);
    for (name, m) in r.metric_rows() {
        let _ = writeln!(metrics, "{name},{}", m.csv_row());
    }
    let contents = [
        r.config.to_toml(),
        loss_csv(&r.embed_loss),
        loss_csv(&r.weight_loss),
        metrics,
        r.render(),
        run.model.to_text(),
    ];
    let mut written = Vec::new();
    for (name, text) in RUN_FILES.iter().zip(contents) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
