//! Protection chains end to end: data, plaintext stages, encryption, leakage
//! attacks, identification, parameter sweeps and timing benchmarks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use embshield_ckks::{Ciphertext, CkksContext, KeySet, Preset};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_slices, l2_normalize, mrl_truncate, Attribute, Dataset, EmbeddingVector, MatchScore, ScoreKind, SplitTag};
use crate::enc_ops::{
    enc_inner_product, enc_poly_eval, enc_polyprotect, extract_block, fit_invsqrt_poly, poly_eval_depth, polyprotect_depth, pp_normalizer, Packing,
    PolyApprox,
};
use crate::eval::{ciphertext_byte_features, evaluate_attribute_leakage, fmr_fnmr_curve, FmrFnmrCurve, MetricsReport, TrainConfig};
use crate::protect::{dp_protect, miu_apply, miu_gen_params, nfr_compare, polyprotect_apply, polyprotect_gen_params, DPParams, MIUParams, NfrTransform, PPParams};
use crate::synth::{generate_dataset, split_dataset, SynthConfig};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Mrl,
    Dp,
    Pp,
    Miu,
    Nfr,
    Fhe,
    EncPp,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mrl => "MRL",
            Stage::Dp => "DP",
            Stage::Pp => "PP",
            Stage::Miu => "MIU",
            Stage::Nfr => "NFR",
            Stage::Fhe => "FHE",
            Stage::EncPp => "ENC_PP",
        }
    }

    pub fn is_plaintext(self) -> bool {
        !matches!(self, Stage::Fhe | Stage::EncPp)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Checks the ordering rules: plaintext stages precede `FHE`, `ENC_PP` follows
/// `FHE`, `NFR` is last and never combined with `FHE`, no stage repeats.
pub fn validate_chain(chain: &[Stage]) -> Result<(), Error> {
    let bad = |m: String| Err(Error::InvalidChain(m));
    for (i, s) in chain.iter().enumerate() {
        if chain[..i].contains(s) {
            return bad(format!("{s} appears twice"));
        }
    }
    let fhe = chain.iter().position(|&s| s == Stage::Fhe);
    if let Some(i) = chain.iter().position(|&s| s == Stage::EncPp) {
        if fhe.is_none_or(|f| f > i) {
            return bad("ENC_PP requires FHE earlier in the chain".into());
        }
    }
    if let Some(f) = fhe {
        if let Some(s) = chain[f..].iter().find(|s| s.is_plaintext()) {
            return bad(format!("{s} is a plaintext stage and must precede FHE"));
        }
        if chain.contains(&Stage::Nfr) {
            return bad("NFR is evaluated standalone and cannot be combined with FHE".into());
        }
    }
    if let Some(i) = chain.iter().position(|&s| s == Stage::Nfr) {
        if i + 1 != chain.len() {
            return bad("NFR must be the last stage".into());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HePreset {
    Toy,
    Desk,
}

impl HePreset {
    pub fn preset(self) -> Preset {
        match self {
            HePreset::Toy => Preset::Toy,
            HePreset::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPConfig {
    pub m: usize,
    #[serde(rename = "C")]
    pub c_bound: i64,
    pub overlap: usize,
    /// Derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for PPConfig {
    fn default() -> Self {
        Self { m: 5, c_bound: 50, overlap: 0, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DPConfig {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub seed: Option<u64>,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, sensitivity: 2.0, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MIUConfig {
    pub k: usize,
    pub seed: Option<u64>,
}

impl Default for MIUConfig {
    fn default() -> Self {
        Self { k: 16, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NFRConfig {
    /// Match tolerance for [`nfr_compare`].
    pub tau: f64,
    pub seed: Option<u64>,
}

impl Default for NFRConfig {
    fn default() -> Self {
        Self { tau: 0.01, seed: None }
    }
}

/// Inverse-square-root approximant used for encrypted normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvSqrtConfig {
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Default for InvSqrtConfig {
    fn default() -> Self {
        Self { degree: 8, lo: 0.25, hi: 4.0, nodes: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    /// Embedding CSV to load instead of generating data.
    pub data_csv: Option<PathBuf>,
    pub train_fraction: f64,
    pub compression_dim: usize,
    pub pp: PPConfig,
    pub dp: DPConfig,
    pub miu: MIUConfig,
    pub nfr: NFRConfig,
    pub he_preset: HePreset,
    pub inv_sqrt: InvSqrtConfig,
    pub protection_chain: Vec<Stage>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub classifier: TrainConfig,
    /// Test records per identity used as identification probes.
    pub probes_per_identity: usize,
    /// Raw ciphertext bytes appended to the byte histogram.
    pub byte_features_raw: usize,
    pub n_thresholds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            data_csv: None,
            train_fraction: 0.5,
            compression_dim: 64,
            pp: PPConfig::default(),
            dp: DPConfig::default(),
            miu: MIUConfig::default(),
            nfr: NFRConfig::default(),
            he_preset: HePreset::Desk,
            inv_sqrt: InvSqrtConfig::default(),
            protection_chain: vec![Stage::Mrl, Stage::Fhe, Stage::EncPp],
            output_dir: PathBuf::from("out"),
            seed: 42,
            classifier: TrainConfig::default(),
            probes_per_identity: 10,
            byte_features_raw: 64,
            n_thresholds: 101,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self, Error> {
        let cfg: Self = serde_json::from_str(s)?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn has(&self, s: Stage) -> bool {
        self.protection_chain.contains(&s)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        validate_chain(&self.protection_chain)?;
        if self.data_csv.is_none() {
            self.synth.validate()?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.train_fraction));
        }
        if self.compression_dim == 0 {
            return bad("compression_dim must be positive".into());
        }
        if self.pp.m < 2 || self.pp.c_bound < 1 || self.pp.overlap >= self.pp.m {
            return bad(format!("pp: m = {}, C = {}, overlap = {}", self.pp.m, self.pp.c_bound, self.pp.overlap));
        }
        if !(self.dp.epsilon > 0.0 && self.dp.epsilon.is_finite() && self.dp.sensitivity > 0.0 && self.dp.sensitivity.is_finite()) {
            return bad(format!("dp: epsilon {} and sensitivity {} must be positive", self.dp.epsilon, self.dp.sensitivity));
        }
        if self.miu.k == 0 {
            return bad("miu.k must be positive".into());
        }
        if !(self.nfr.tau >= 0.0) {
            return bad("nfr.tau must be non-negative".into());
        }
        let p = &self.inv_sqrt;
        if p.degree == 0 || !(p.lo > 0.0 && p.hi > p.lo && p.hi.is_finite()) || p.nodes <= p.degree {
            return bad(format!("inv_sqrt: degree {}, interval [{}, {}], nodes {}", p.degree, p.lo, p.hi, p.nodes));
        }
        if self.probes_per_identity == 0 || self.n_thresholds < 2 {
            return bad("probes_per_identity must be positive and n_thresholds at least 2".into());
        }
        if !(self.classifier.learning_rate > 0.0) || self.classifier.epochs == 0 {
            return bad("classifier needs a positive learning rate and epoch count".into());
        }
        Ok(())
    }

    /// Every seed the run uses, after defaults are resolved.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let s = |label: &str, explicit: Option<u64>| (label.to_string(), explicit.unwrap_or_else(|| derive_seed(self.seed, label)));
        BTreeMap::from([
            ("run".to_string(), self.seed),
            ("synth".to_string(), self.synth.seed),
            s("split", None),
            s("pp", self.pp.seed),
            s("dp", self.dp.seed),
            s("miu", self.miu.seed),
            s("nfr", self.nfr.seed),
            s("keys", None),
            s("encrypt", None),
        ])
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable sub-seed for a labelled purpose.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let fnv = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    splitmix64(master ^ fnv)
}

fn record_seed(base: u64, index: usize) -> u64 {
    splitmix64(base.wrapping_add((index as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03)))
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset, Error> {
    match &cfg.data_csv {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            Dataset::read_csv(f, None, SplitTag::Train)
        }
        None => generate_dataset(&cfg.synth),
    }
}

enum PlainStage {
    Mrl(usize),
    Dp(DPParams),
    Pp(PPParams),
    Miu(MIUParams),
}

/// The plaintext stages preceding encryption (or the whole chain), with
/// parameters resolved for the dimension each stage sees.
pub struct PlainChain {
    stages: Vec<PlainStage>,
    nfr: Option<NfrTransform>,
    input_dim: usize,
    output_dim: usize,
}

impl PlainChain {
    pub fn new(cfg: &PipelineConfig, input_dim: usize) -> Result<Self, Error> {
        validate_chain(&cfg.protection_chain)?;
        let seeds = cfg.seeds();
        let mut dim = input_dim;
        let mut stages = Vec::new();
        let mut nfr = None;
        for &s in cfg.protection_chain.iter().take_while(|s| s.is_plaintext()) {
            match s {
                Stage::Mrl => {
                    if cfg.compression_dim > dim {
                        return Err(Error::InvalidConfig(format!("compression_dim {} exceeds dimension {dim}", cfg.compression_dim)));
                    }
                    dim = cfg.compression_dim;
                    stages.push(PlainStage::Mrl(dim));
                }
                Stage::Dp => stages.push(PlainStage::Dp(DPParams { epsilon: cfg.dp.epsilon, sensitivity: cfg.dp.sensitivity, seed: seeds["dp"] })),
                Stage::Pp => {
                    let p = polyprotect_gen_params(cfg.pp.m, cfg.pp.c_bound, cfg.pp.overlap, seeds["pp"])?;
                    if dim < p.m {
                        return Err(Error::DimTooSmall { dim, needed: p.m });
                    }
                    dim = p.output_len(dim);
                    stages.push(PlainStage::Pp(p));
                }
                Stage::Miu => stages.push(PlainStage::Miu(miu_gen_params(dim, cfg.miu.k, seeds["miu"])?)),
                Stage::Nfr => nfr = Some(NfrTransform::new(dim, seeds["nfr"])),
                Stage::Fhe | Stage::EncPp => unreachable!("filtered above"),
            }
        }
        Ok(Self { stages, nfr, input_dim, output_dim: dim })
    }

    /// Dimension after the non-NFR stages.
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn has_nfr(&self) -> bool {
        self.nfr.is_some()
    }

    /// Applies every non-NFR stage; `index` keys the per-record noise seed.
    pub fn apply(&self, v: &EmbeddingVector, index: usize) -> Result<EmbeddingVector, Error> {
        if v.dim() != self.input_dim {
            return Err(Error::DimMismatch { expected: self.input_dim, found: v.dim() });
        }
        let mut x = v.clone();
        for s in &self.stages {
            x = match s {
                PlainStage::Mrl(d) => mrl_truncate(&x, *d)?,
                PlainStage::Dp(p) => dp_protect(&x, &DPParams { seed: record_seed(p.seed, index), ..*p })?,
                PlainStage::Pp(p) => polyprotect_apply(&x, p)?,
                PlainStage::Miu(p) => miu_apply(&x, p)?,
            };
        }
        Ok(x)
    }

    /// The stored (negative) and probe (positive) NFR templates.
    pub fn nfr_templates(&self, v: &EmbeddingVector) -> Result<Option<(Vec<f64>, Vec<f64>)>, Error> {
        match &self.nfr {
            None => Ok(None),
            Some(t) => {
                let pair = t.protect(v)?;
                Ok(Some((pair.negative, pair.positive)))
            }
        }
    }
}

/// Applies the plaintext part of the chain to a dataset. NFR stages yield the
/// stored (negative) template.
pub fn protect_dataset(cfg: &PipelineConfig, ds: &Dataset) -> Result<Dataset, Error> {
    let chain = PlainChain::new(cfg, ds.dim)?;
    ds.map_embeddings(|i, v| {
        let x = chain.apply(v, i)?;
        match chain.nfr_templates(&x)? {
            Some((neg, _)) => EmbeddingVector::new(neg),
            None => Ok(x),
        }
    })
}

/// Wall-clock accumulator keyed by stage.
#[derive(Default)]
struct Timer {
    ms: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.ms.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

fn normalized_mean<'a>(vs: impl Iterator<Item = &'a [f64]>) -> Result<Vec<f64>, Error> {
    let mut acc: Vec<f64> = Vec::new();
    for v in vs {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / n;
        }
    }
    if acc.is_empty() {
        return Err(Error::EmptyGallery);
    }
    Ok(l2_normalize(&EmbeddingVector::new(acc)?)?.into_values())
}

/// Per-identity normalized mean of the train representations, sorted by identity.
fn gallery_centroids(train: &Dataset) -> Result<Vec<(u32, Vec<f64>)>, Error> {
    train
        .identities()
        .into_iter()
        .map(|id| {
            let c = normalized_mean(train.records.iter().filter(|r| r.identity == id).map(|r| r.embedding.values()))?;
            Ok((id, c))
        })
        .collect()
}

/// The first `k` test records of every identity, in dataset order.
fn probe_indices(test: &Dataset, k: usize) -> Vec<usize> {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    (0..test.records.len())
        .filter(|&i| {
            let n = seen.entry(test.records[i].identity).or_default();
            *n += 1;
            *n <= k
        })
        .collect()
}

/// Rank-1 accuracy and all probe-gallery scores for a full score matrix.
fn identification(scores: &[Vec<f64>], probe_ids: &[u32], gallery_ids: &[u32]) -> Result<(f64, Vec<MatchScore>), Error> {
    if gallery_ids.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let mut hits = 0usize;
    let mut all = Vec::with_capacity(scores.len() * gallery_ids.len());
    for (row, &pid) in scores.iter().zip(probe_ids) {
        let mut best = 0;
        for (g, &s) in row.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite(s));
            }
            if s > row[best] {
                best = g;
            }
            let kind = if gallery_ids[g] == pid { ScoreKind::Genuine } else { ScoreKind::Impostor };
            all.push(MatchScore { value: s, kind });
        }
        if gallery_ids[best] == pid {
            hits += 1;
        }
    }
    Ok((hits as f64 / probe_ids.len().max(1) as f64, all))
}

fn plain_scores(probes: &[&[f64]], gallery: &[(u32, Vec<f64>)], score: impl Fn(&[f64], &[f64]) -> Result<f64, Error>) -> Result<Vec<Vec<f64>>, Error> {
    probes.iter().map(|p| gallery.iter().map(|(_, g)| score(p, g)).collect()).collect()
}

fn features(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.records.iter().map(|r| r.embedding.values().to_vec()).collect()
}

fn leakage_into(report: &mut MetricsReport, baseline: bool, train_x: &[Vec<f64>], train: &Dataset, test_x: &[Vec<f64>], test: &Dataset, cfg: &TrainConfig) -> Result<(), Error> {
    for a in Attribute::ALL {
        let l = evaluate_attribute_leakage(train_x, &train.labels(a), test_x, &test.labels(a), cfg)?;
        let key = a.name().to_string();
        if baseline {
            report.attribute_baseline.insert(key, l.accuracy);
        } else {
            report.attribute_accuracy.insert(key.clone(), l.accuracy);
            report.attribute_auc.insert(key.clone(), l.macro_auc);
            report.chance.insert(key, l.chance);
        }
    }
    Ok(())
}

/// Unprotected reference figures shared by runs over the same data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub rank1: f64,
    pub attribute_accuracy: BTreeMap<String, f64>,
}

struct Split {
    raw_train: Dataset,
    raw_test: Dataset,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    probes: Vec<usize>,
}

fn split(cfg: &PipelineConfig, ds: &Dataset) -> Result<Split, Error> {
    let seed = cfg.seeds()["split"];
    // split record indices; protected views reuse the same partition
    let indexed = ds.map_embeddings(|i, _| EmbeddingVector::new(vec![i as f64 + 1.0]))?;
    let (tr, te) = split_dataset(&indexed, cfg.train_fraction, seed)?;
    let idx = |d: &Dataset| d.records.iter().map(|r| r.embedding.values()[0] as usize - 1).collect::<Vec<_>>();
    let (train_idx, test_idx) = (idx(&tr), idx(&te));
    let pick = |ix: &[usize], tag| Dataset { records: ix.iter().map(|&i| ds.records[i].clone()).collect(), dim: ds.dim, class_counts: ds.class_counts, split_tag: tag };
    let raw_test = pick(&test_idx, SplitTag::Test);
    let probes = probe_indices(&raw_test, cfg.probes_per_identity);
    Ok(Split { raw_train: pick(&train_idx, SplitTag::Train), raw_test, train_idx, test_idx, probes })
}

pub fn compute_baseline(cfg: &PipelineConfig, ds: &Dataset) -> Result<Baseline, Error> {
    let sp = split(cfg, ds)?;
    baseline_from_split(cfg, &sp)
}

fn baseline_from_split(cfg: &PipelineConfig, sp: &Split) -> Result<Baseline, Error> {
    let gallery = gallery_centroids(&sp.raw_train)?;
    let probe_vecs: Vec<&[f64]> = sp.probes.iter().map(|&i| sp.raw_test.records[i].embedding.values()).collect();
    let probe_ids: Vec<u32> = sp.probes.iter().map(|&i| sp.raw_test.records[i].identity).collect();
    let gallery_ids: Vec<u32> = gallery.iter().map(|g| g.0).collect();
    let (rank1, _) = identification(&plain_scores(&probe_vecs, &gallery, cosine_slices)?, &probe_ids, &gallery_ids)?;
    let mut r = MetricsReport::default();
    leakage_into(&mut r, true, &features(&sp.raw_train), &sp.raw_train, &features(&sp.raw_test), &sp.raw_test, &cfg.classifier)?;
    Ok(Baseline { rank1, attribute_accuracy: r.attribute_baseline })
}

/// Report plus the verification curve it summarizes.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub report: MetricsReport,
    pub curve: FmrFnmrCurve,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun, Error> {
    cfg.validate()?;
    let mut timer = Timer::default();
    let ds = timer.time("load", || load_dataset(cfg))?;
    run_on_dataset(cfg, &ds, None, timer)
}

/// Runs on given data, reusing a precomputed baseline when supplied.
pub fn run_pipeline_with(cfg: &PipelineConfig, ds: &Dataset, baseline: Option<&Baseline>) -> Result<PipelineRun, Error> {
    cfg.validate()?;
    run_on_dataset(cfg, ds, baseline, Timer::default())
}

fn run_on_dataset(cfg: &PipelineConfig, ds: &Dataset, baseline: Option<&Baseline>, mut timer: Timer) -> Result<PipelineRun, Error> {
    ds.validate()?;
    let sp = split(cfg, ds)?;
    let baseline = match baseline {
        Some(b) => b.clone(),
        None => timer.time("baseline", || baseline_from_split(cfg, &sp))?,
    };
    let chain = PlainChain::new(cfg, ds.dim)?;
    let pre = timer.time("protect", || ds.map_embeddings(|i, v| chain.apply(v, i)))?;
    let part = |ix: &[usize], d: &Dataset, tag| Dataset { records: ix.iter().map(|&i| d.records[i].clone()).collect(), dim: d.dim, class_counts: d.class_counts, split_tag: tag };
    let pre_train = part(&sp.train_idx, &pre, SplitTag::Train);
    let pre_test = part(&sp.test_idx, &pre, SplitTag::Test);
    let probe_ids: Vec<u32> = sp.probes.iter().map(|&i| sp.raw_test.records[i].identity).collect();

    let mut report = MetricsReport {
        chain: cfg.protection_chain.iter().map(|s| s.name().to_string()).collect(),
        rank1_baseline: baseline.rank1,
        attribute_baseline: baseline.attribute_accuracy.clone(),
        ..MetricsReport::default()
    };

    let (rank1, scores) = if cfg.has(Stage::Fhe) {
        let mut he = timer.time("keygen", || HeSession::new(cfg, pre.dim))?;
        let feats = he.byte_features(&pre, &mut timer, cfg.byte_features_raw)?;
        let take = |ix: &[usize]| ix.iter().map(|&i| feats[i].clone()).collect::<Vec<_>>();
        timer.time("leakage", || leakage_into(&mut report, false, &take(&sp.train_idx), &sp.raw_train, &take(&sp.test_idx), &sp.raw_test, &cfg.classifier))?;
        let gallery = gallery_centroids(&pre_train)?;
        let probes: Vec<&[f64]> = sp.probes.iter().map(|&i| pre_test.records[i].embedding.values()).collect();
        let violations = he.domain_violations(probes.iter().copied().chain(gallery.iter().map(|g| g.1.as_slice())))?;
        if violations > 0 {
            report.notes.push(format!(
                "{violations} squared norms fall outside the approximation interval [{}, {}]",
                cfg.inv_sqrt.lo, cfg.inv_sqrt.hi
            ));
        }
        let matrix = he.score_matrix(&probes, &gallery, &mut timer)?;
        identification(&matrix, &probe_ids, &gallery.iter().map(|g| g.0).collect::<Vec<_>>())?
    } else if chain.has_nfr() {
        let templates = |d: &Dataset| -> Result<Vec<(Vec<f64>, Vec<f64>)>, Error> {
            d.records.iter().map(|r| Ok(chain.nfr_templates(&r.embedding)?.expect("nfr present"))).collect()
        };
        let (train_t, test_t) = timer.time("protect", || Ok::<_, Error>((templates(&pre_train)?, templates(&pre_test)?)))?;
        let stored = |t: &[(Vec<f64>, Vec<f64>)]| t.iter().map(|p| p.0.clone()).collect::<Vec<_>>();
        timer.time("leakage", || leakage_into(&mut report, false, &stored(&train_t), &sp.raw_train, &stored(&test_t), &sp.raw_test, &cfg.classifier))?;
        let gallery: Vec<(u32, Vec<f64>)> = gallery_centroids(&pre_train)?
            .into_iter()
            .map(|(id, c)| Ok((id, chain.nfr_templates(&EmbeddingVector::new(c)?)?.expect("nfr present").0)))
            .collect::<Result<_, Error>>()?;
        let probes: Vec<&[f64]> = sp.probes.iter().map(|&i| test_t[i].1.as_slice()).collect();
        let tau = cfg.nfr.tau;
        let m = timer.time("match", || plain_scores(&probes, &gallery, |p, g| nfr_compare(p, g, tau)))?;
        report.notes.push("NFR scores compare probe positive templates with enrolled negative templates".into());
        identification(&m, &probe_ids, &gallery.iter().map(|g| g.0).collect::<Vec<_>>())?
    } else {
        timer.time("leakage", || leakage_into(&mut report, false, &features(&pre_train), &sp.raw_train, &features(&pre_test), &sp.raw_test, &cfg.classifier))?;
        let gallery = gallery_centroids(&pre_train)?;
        let probes: Vec<&[f64]> = sp.probes.iter().map(|&i| pre_test.records[i].embedding.values()).collect();
        let m = timer.time("match", || plain_scores(&probes, &gallery, cosine_slices))?;
        identification(&m, &probe_ids, &gallery.iter().map(|g| g.0).collect::<Vec<_>>())?
    };
    report.rank1_accuracy = rank1;
    let curve = fmr_fnmr_curve(&scores, cfg.n_thresholds)?;
    report.eer = Some(curve.eer);
    report.fmr_fnmr_area = Some(curve.area);
    report.derive_gains()?;
    report.timings_ms = timer.ms;
    report.validate()?;
    Ok(PipelineRun { report, curve })
}

/// Keys, layout and encrypted transforms for one FHE chain.
pub struct HeSession {
    pub ctx: Arc<CkksContext>,
    pub keys: KeySet,
    pub layout: Packing,
    pub poly: PolyApprox,
    /// PolyProtect secret and output scale for `ENC_PP`.
    pub enc_pp: Option<(PPParams, f64)>,
    rng: ChaCha20Rng,
}

impl HeSession {
    /// `dim` is the plaintext dimension entering encryption.
    pub fn new(cfg: &PipelineConfig, dim: usize) -> Result<Self, Error> {
        let seeds = cfg.seeds();
        let ctx = CkksContext::new(cfg.he_preset.preset().params())?;
        let layout = Packing::new(dim, ctx.slot_count())?;
        let enc_pp = if cfg.has(Stage::EncPp) {
            let p = polyprotect_gen_params(cfg.pp.m, cfg.pp.c_bound, cfg.pp.overlap, seeds["pp"])?;
            if dim < p.m {
                return Err(Error::DimTooSmall { dim, needed: p.m });
            }
            let s = pp_normalizer(&p, dim);
            Some((p, 1.0 / s))
        } else {
            None
        };
        let depth = enc_pp.as_ref().map_or(0, |(p, _)| polyprotect_depth(p)) + 1 + poly_eval_depth(cfg.inv_sqrt.degree) + 2;
        if depth > ctx.max_level() {
            return Err(Error::InvalidConfig(format!(
                "chain needs multiplicative depth {depth} but preset {:?} offers {}",
                cfg.he_preset,
                ctx.max_level()
            )));
        }
        let poly = fit_invsqrt_poly(cfg.inv_sqrt.degree, cfg.inv_sqrt.lo, cfg.inv_sqrt.hi, cfg.inv_sqrt.nodes)?;
        let keys = KeySet::generate(&ctx, seeds["keys"])?;
        Ok(Self { ctx, keys, layout, poly, enc_pp, rng: ChaCha20Rng::seed_from_u64(seeds["encrypt"]) })
    }

    /// Normalizes each vector and encrypts them packed into one ciphertext.
    pub fn encrypt(&mut self, vectors: &[&[f64]]) -> Result<Ciphertext, Error> {
        let normed: Vec<Vec<f64>> = vectors.iter().map(|v| Ok(l2_normalize(&EmbeddingVector::new(v.to_vec())?)?.into_values())).collect::<Result<_, Error>>()?;
        let refs: Vec<&[f64]> = normed.iter().map(|v| v.as_slice()).collect();
        let pt = self.ctx.encode_at(&self.layout.pack(&refs)?, self.ctx.max_level())?;
        Ok(self.keys.public.encrypt(&self.ctx, &pt, &mut self.rng)?)
    }

    /// `ENC_PP` when configured, otherwise the identity.
    pub fn transform(&self, ct: &Ciphertext) -> Result<Ciphertext, Error> {
        match &self.enc_pp {
            Some((p, scale)) => enc_polyprotect(&self.ctx, &self.keys, ct, p, &self.layout, *scale),
            None => Ok(ct.clone()),
        }
    }

    /// Encrypted `1/‖x‖` at the first slot of every block.
    pub fn inverse_norm(&self, ct: &Ciphertext) -> Result<Ciphertext, Error> {
        let sq = enc_inner_product(&self.ctx, &self.keys, ct, ct, self.layout.block)?;
        enc_poly_eval(&self.ctx, &self.keys, &sq, &self.poly.coefficients, Some(&self.layout.block_start_mask()))
    }

    /// Encrypted cosine per block given precomputed inverse norms.
    pub fn cosine(&self, a: &Ciphertext, inv_a: &Ciphertext, b: &Ciphertext, inv_b: &Ciphertext) -> Result<Ciphertext, Error> {
        crate::enc_ops::enc_cosine_with_norms(&self.ctx, &self.keys, a, b, self.layout.block, inv_a, inv_b)
    }

    pub fn decrypt(&self, ct: &Ciphertext) -> Result<Vec<f64>, Error> {
        Ok(self.ctx.decode(&self.keys.secret.decrypt(&self.ctx, ct)?)?)
    }

    /// Plaintext value the approximant sees for one input vector.
    pub fn squared_norm_after_transform(&self, v: &[f64]) -> Result<f64, Error> {
        let x = l2_normalize(&EmbeddingVector::new(v.to_vec())?)?;
        Ok(match &self.enc_pp {
            Some((p, s)) => polyprotect_apply(&x, p)?.values().iter().map(|y| (y * s).powi(2)).sum(),
            None => 1.0,
        })
    }

    fn domain_violations<'a>(&self, vs: impl Iterator<Item = &'a [f64]>) -> Result<usize, Error> {
        let mut n = 0;
        for v in vs {
            if !self.poly.contains(self.squared_norm_after_transform(v)?) {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Byte-attack features of every record's own transformed ciphertext.
    fn byte_features(&mut self, ds: &Dataset, timer: &mut Timer, n_raw: usize) -> Result<Vec<Vec<f64>>, Error> {
        let mut out = Vec::with_capacity(ds.len());
        for chunk in ds.records.chunks(self.layout.per_ct) {
            let vs: Vec<&[f64]> = chunk.iter().map(|r| r.embedding.values()).collect();
            let ct = timer.time("encrypt", || self.encrypt(&vs))?;
            let ct = timer.time("enc_pp", || self.transform(&ct))?;
            for k in 0..chunk.len() {
                let rec = timer.time("extract", || extract_block(&self.ctx, &ct, &self.layout, k))?;
                out.push(timer.time("byte_features", || ciphertext_byte_features(&rec.to_bytes(), n_raw))?);
            }
        }
        Ok(out)
    }

    /// Decrypted encrypted-cosine scores, `probes × gallery`.
    fn score_matrix(&mut self, probes: &[&[f64]], gallery: &[(u32, Vec<f64>)], timer: &mut Timer) -> Result<Vec<Vec<f64>>, Error> {
        let per_ct = self.layout.per_ct;
        let mut enrolled = Vec::with_capacity(gallery.len());
        for (_, g) in gallery {
            let replicated = vec![g.as_slice(); per_ct];
            let ct = timer.time("encrypt", || self.encrypt(&replicated))?;
            let ct = timer.time("enc_pp", || self.transform(&ct))?;
            let inv = timer.time("enc_norm", || self.inverse_norm(&ct))?;
            enrolled.push((ct, inv));
        }
        let mut rows = Vec::with_capacity(probes.len());
        for chunk in probes.chunks(per_ct) {
            let ct = timer.time("encrypt", || self.encrypt(chunk))?;
            let ct = timer.time("enc_pp", || self.transform(&ct))?;
            let inv = timer.time("enc_norm", || self.inverse_norm(&ct))?;
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(gallery.len());
            for (g, inv_g) in &enrolled {
                let s = timer.time("enc_cosine", || self.cosine(&ct, &inv, g, inv_g))?;
                let slots = timer.time("decrypt", || self.decrypt(&s))?;
                cols.push(self.layout.block_starts(&slots));
            }
            rows.extend((0..chunk.len()).map(|k| cols.iter().map(|c| c[k]).collect::<Vec<f64>>()));
        }
        Ok(rows)
    }
}

/// Parameter axes the sweep subcommand covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// overlap ∈ {0..3} × m ∈ {4..8} × C ∈ {10, 20, 45, 60}.
    Pp,
    /// d ∈ {8, 16, 32, 64, 128, 256}.
    CompressionDim,
    /// ε ∈ {0.001, 0.01, 0.1, 1, 10}.
    Epsilon,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Pp => "pp",
            SweepParam::CompressionDim => "compression_dim",
            SweepParam::Epsilon => "epsilon",
        }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "pp" => Ok(SweepParam::Pp),
            "compression_dim" | "d" => Ok(SweepParam::CompressionDim),
            "epsilon" | "dp" => Ok(SweepParam::Epsilon),
            _ => Err(Error::InvalidConfig(format!("unknown sweep parameter `{s}`"))),
        }
    }

    fn required_stage(self) -> Stage {
        match self {
            SweepParam::Pp => Stage::Pp,
            SweepParam::CompressionDim => Stage::Mrl,
            SweepParam::Epsilon => Stage::Dp,
        }
    }

    /// Grid points as (column, value) lists applied onto a base config.
    pub fn grid(self) -> Vec<Vec<(&'static str, f64)>> {
        match self {
            SweepParam::Pp => {
                let mut g = Vec::new();
                for overlap in 0..=3 {
                    for m in 4..=8 {
                        for c in [10, 20, 45, 60] {
                            g.push(vec![("overlap", overlap as f64), ("m", m as f64), ("C", c as f64)]);
                        }
                    }
                }
                g
            }
            SweepParam::CompressionDim => [8, 16, 32, 64, 128, 256].iter().map(|&d| vec![("compression_dim", d as f64)]).collect(),
            SweepParam::Epsilon => [0.001, 0.01, 0.1, 1.0, 10.0].iter().map(|&e| vec![("epsilon", e)]).collect(),
        }
    }

    fn apply(self, cfg: &PipelineConfig, point: &[(&str, f64)]) -> PipelineConfig {
        let mut c = cfg.clone();
        for &(k, v) in point {
            match k {
                "overlap" => c.pp.overlap = v as usize,
                "m" => c.pp.m = v as usize,
                "C" => c.pp.c_bound = v as i64,
                "compression_dim" => c.compression_dim = v as usize,
                "epsilon" => c.dp.epsilon = v,
                _ => unreachable!("grid keys are fixed"),
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: Vec<(String, f64)>,
    pub rank1_accuracy: f64,
    pub attribute_accuracy: BTreeMap<String, f64>,
    pub eer: f64,
}

/// One run per grid point over shared data and baseline. The chain must contain
/// the stage the parameter belongs to.
pub fn sweep(cfg: &PipelineConfig, param: SweepParam) -> Result<Vec<SweepRow>, Error> {
    cfg.validate()?;
    if !cfg.has(param.required_stage()) {
        return Err(Error::InvalidConfig(format!("sweeping {} needs {} in the chain", param.name(), param.required_stage())));
    }
    let ds = load_dataset(cfg)?;
    let baseline = compute_baseline(cfg, &ds)?;
    param
        .grid()
        .into_iter()
        .map(|point| {
            let c = param.apply(cfg, &point);
            let run = run_pipeline_with(&c, &ds, Some(&baseline))?;
            Ok(SweepRow {
                point: point.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                rank1_accuracy: run.report.rank1_accuracy,
                attribute_accuracy: run.report.attribute_accuracy,
                eer: run.curve.eer,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = first.point.iter().map(|p| p.0.clone()).collect();
    header.push("rank1_accuracy".into());
    header.extend(Attribute::ALL.iter().map(|a| format!("{}_accuracy", a.name())));
    header.push("eer".into());
    out.write_record(&header)?;
    for r in rows {
        let mut row: Vec<String> = r.point.iter().map(|p| p.1.to_string()).collect();
        row.push(r.rank1_accuracy.to_string());
        row.extend(Attribute::ALL.iter().map(|a| r.attribute_accuracy.get(a.name()).copied().unwrap_or(f64::NAN).to_string()));
        row.push(r.eer.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Stage samples for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub chain: Vec<String>,
    pub dim: usize,
    pub records_per_ciphertext: usize,
    pub samples_ms: BTreeMap<String, Vec<f64>>,
    pub median_ms: BTreeMap<String, f64>,
    /// Median divided by the records sharing one ciphertext.
    pub per_record_ms: BTreeMap<String, f64>,
    pub total_per_record_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub first: StageTimings,
    pub second: StageTimings,
    /// `first.total_per_record_ms / second.total_per_record_ms`.
    pub speedup: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_one(cfg: &PipelineConfig, ds: &Dataset, repetitions: usize) -> Result<StageTimings, Error> {
    cfg.validate()?;
    if !cfg.has(Stage::Fhe) {
        return Err(Error::InvalidConfig("benchmarks need FHE in the chain".into()));
    }
    let chain = PlainChain::new(cfg, ds.dim)?;
    let mut he = HeSession::new(cfg, chain.output_dim())?;
    let per_ct = he.layout.per_ct;
    if ds.len() < 2 * per_ct {
        return Err(Error::InsufficientData(format!("benchmark needs {} records", 2 * per_ct)));
    }
    let pre: Vec<Vec<f64>> = ds.records[..2 * per_ct].iter().enumerate().map(|(i, r)| Ok(chain.apply(&r.embedding, i)?.into_values())).collect::<Result<_, Error>>()?;
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = (pre[..per_ct].iter().map(|v| v.as_slice()).collect(), pre[per_ct..].iter().map(|v| v.as_slice()).collect());
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    for rep in 0..=repetitions {
        let t = Instant::now();
        let a = he.encrypt(&left)?;
        let t_enc = ms(t);
        let b = he.encrypt(&right)?;
        let t = Instant::now();
        let a = he.transform(&a)?;
        let t_pp = ms(t);
        let b = he.transform(&b)?;
        let t = Instant::now();
        let s = crate::enc_ops::enc_cosine(&he.ctx, &he.keys, &a, &b, he.layout.block, &he.poly, Some(&he.layout.block_start_mask()))?;
        let t_cos = ms(t);
        let t = Instant::now();
        let out = he.decrypt(&s)?;
        let t_dec = ms(t);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("benchmark produced non-finite scores".into()));
        }
        if rep == 0 {
            continue; // warmup
        }
        let mut push = |k: &str, v: f64| samples.entry(k.to_string()).or_default().push(v);
        push("encrypt", t_enc);
        if he.enc_pp.is_some() {
            push("enc_pp", t_pp);
        }
        push("enc_cosine", t_cos);
        push("decrypt", t_dec);
    }
    let median_ms: BTreeMap<String, f64> = samples.iter().map(|(k, v)| (k.clone(), median(v))).collect();
    let per_record_ms: BTreeMap<String, f64> = median_ms.iter().map(|(k, v)| (k.clone(), v / per_ct as f64)).collect();
    Ok(StageTimings {
        chain: cfg.protection_chain.iter().map(|s| s.name().to_string()).collect(),
        dim: he.layout.dim,
        records_per_ciphertext: per_ct,
        total_per_record_ms: per_record_ms.values().sum(),
        samples_ms: samples,
        median_ms,
        per_record_ms,
    })
}

/// Median stage timings of two configurations over the same data, and the
/// per-record speedup of the second over the first.
pub fn bench_timings(pair: (&PipelineConfig, &PipelineConfig), repetitions: usize) -> Result<BenchReport, Error> {
    if pair.0.he_preset != pair.1.he_preset {
        return Err(Error::InvalidConfig("benchmarked configurations must share he_preset".into()));
    }
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be positive".into()));
    }
    let ds = load_dataset(pair.0)?;
    let first = bench_one(pair.0, &ds, repetitions)?;
    let second = bench_one(pair.1, &ds, repetitions)?;
    Ok(BenchReport { repetitions, speedup: first.total_per_record_ms / second.total_per_record_ms, first, second })
}

/// Everything needed to rerun a command and get the same report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &PipelineConfig, outputs: &[&str]) -> Self {
        Self {
            library: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: cfg.clone(),
            seeds: cfg.seeds(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `metrics.json`, `timings.json`, `fmr_fnmr.csv`, `curves.svg` and
/// `manifest.json`. Timings go to their own file so the metrics are reproducible
/// byte for byte.
pub fn write_run_outputs(dir: &Path, cfg: &PipelineConfig, run: &PipelineRun) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let mut metrics = run.report.clone();
    let timings = std::mem::take(&mut metrics.timings_ms);
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_json(&dir.join("timings.json"), &timings)?;
    run.curve.write_csv(std::fs::File::create(dir.join("fmr_fnmr.csv"))?)?;
    std::fs::write(dir.join("curves.svg"), curves_svg(&run.curve))?;
    write_json(&dir.join("manifest.json"), &Manifest::new("run", cfg, &["metrics.json", "timings.json", "fmr_fnmr.csv", "curves.svg"]))
}

/// FMR and FNMR against threshold, as a standalone SVG.
pub fn curves_svg(curve: &FmrFnmrCurve) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let (lo, hi) = match (curve.points.first(), curve.points.last()) {
        (Some(a), Some(b)) if b.threshold > a.threshold => (a.threshold, b.threshold),
        _ => (0.0, 1.0),
    };
    let x = |t: f64| pad + (t - lo) / (hi - lo) * (w - 2.0 * pad);
    let y = |r: f64| h - pad - r * (h - 2.0 * pad);
    let line = |f: &dyn Fn(&crate::eval::CurvePoint) -> f64| {
        curve.points.iter().map(|p| format!("{:.2},{:.2}", x(p.threshold), y(f(p)))).collect::<Vec<_>>().join(" ")
    };
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<line x1=\"{p}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{p}\" y1=\"{p}\" x2=\"{p}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<polyline fill=\"none\" stroke=\"crimson\" points=\"{fmr}\"/>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" points=\"{fnmr}\"/>\n",
            "<text x=\"{p}\" y=\"20\" font-size=\"12\">FMR (red) / FNMR (blue) vs threshold, EER {eer:.4}</text>\n",
            "<text x=\"{p}\" y=\"{lab}\" font-size=\"10\">{lo:.3}</text>\n",
            "<text x=\"{rl}\" y=\"{lab}\" font-size=\"10\">{hi:.3}</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        p = pad,
        b = h - pad,
        r = w - pad,
        rl = w - pad - 30.0,
        lab = h - pad + 15.0,
        fmr = line(&|p| p.fmr),
        fnmr = line(&|p| p.fnmr),
        eer = curve.eer,
        lo = lo,
        hi = hi,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig {
            synth: SynthConfig { dim: 192, n_identities: 12, records_per_identity: 8, ..SynthConfig::default() },
            protection_chain: vec![],
            classifier: TrainConfig { epochs: 60, ..TrainConfig::default() },
            probes_per_identity: 4,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn chain_ordering_rules() {
        use Stage::*;
        assert!(validate_chain(&[]).is_ok());
        assert!(validate_chain(&[Mrl, Fhe, EncPp]).is_ok());
        assert!(validate_chain(&[Mrl, Dp]).is_ok());
        assert!(validate_chain(&[Pp, Nfr]).is_ok());
        for bad in [vec![EncPp], vec![EncPp, Fhe], vec![Fhe, Mrl], vec![Nfr, Fhe], vec![Mrl, Mrl], vec![Nfr, Pp], vec![Fhe, EncPp, Dp]] {
            assert!(matches!(validate_chain(&bad), Err(Error::InvalidChain(_))), "{bad:?}");
        }
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        let partial = PipelineConfig::from_json(r#"{"protection_chain": ["MRL", "FHE", "ENC_PP"], "pp": {"m": 4}}"#).unwrap();
        assert_eq!(partial.pp.m, 4);
        assert_eq!(partial.pp.c_bound, 50);
        assert!(matches!(PipelineConfig::from_json(r#"{"bogus": 1}"#), Err(Error::InvalidConfig(_))));
        assert!(matches!(PipelineConfig::from_json(r#"{"protection_chain": ["XYZ"]}"#), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let s = PipelineConfig::default().seeds();
        assert_eq!(s, PipelineConfig::default().seeds());
        let vals: std::collections::BTreeSet<u64> = s.values().copied().collect();
        assert_eq!(vals.len(), s.len());
        let other = PipelineConfig { seed: 43, ..PipelineConfig::default() }.seeds();
        assert_ne!(s["pp"], other["pp"]);
        let pinned = PipelineConfig { pp: PPConfig { seed: Some(5), ..PPConfig::default() }, ..PipelineConfig::default() };
        assert_eq!(pinned.seeds()["pp"], 5);
    }

    #[test]
    fn empty_chain_matches_baseline() {
        let cfg = small();
        let run = run_pipeline(&cfg).unwrap();
        assert_eq!(run.report.rank1_accuracy, run.report.rank1_baseline);
        assert_eq!(run.report.attribute_accuracy, run.report.attribute_baseline);
        assert!(run.report.privacy_gain.values().all(|&g| g == 0.0));
        assert_eq!(run.report.identification_gain, 0.0);
        assert_eq!(run_pipeline(&cfg).unwrap().report.attribute_accuracy, run.report.attribute_accuracy);
    }

    #[test]
    fn enc_pp_without_fhe_rejected() {
        let cfg = PipelineConfig { protection_chain: vec![Stage::EncPp], ..small() };
        assert!(matches!(run_pipeline(&cfg), Err(Error::InvalidChain(_))));
    }

    #[test]
    fn toy_preset_lacks_depth() {
        let cfg = PipelineConfig { he_preset: HePreset::Toy, protection_chain: vec![Stage::Mrl, Stage::Fhe], ..small() };
        assert!(matches!(run_pipeline(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn plaintext_runs_are_deterministic() {
        for chain in [vec![Stage::Mrl, Stage::Dp], vec![Stage::Pp], vec![Stage::Miu], vec![Stage::Nfr]] {
            let cfg = PipelineConfig { protection_chain: chain, ..small() };
            let a = run_pipeline(&cfg).unwrap();
            let b = run_pipeline(&cfg).unwrap();
            assert_eq!(a.report.rank1_accuracy, b.report.rank1_accuracy);
            assert_eq!(a.report.attribute_accuracy, b.report.attribute_accuracy);
            assert_eq!(a.curve, b.curve);
        }
    }

    #[test]
    fn miu_keeps_identification() {
        let cfg = PipelineConfig { protection_chain: vec![Stage::Miu], ..small() };
        let r = run_pipeline(&cfg).unwrap().report;
        assert_eq!(r.rank1_accuracy, r.rank1_baseline);
    }

    #[test]
    fn sweep_has_one_row_per_point() {
        let base = small();
        let cfg = PipelineConfig { protection_chain: vec![Stage::Mrl], synth: SynthConfig { dim: 256, ..base.synth.clone() }, ..base };
        let rows = sweep(&cfg, SweepParam::CompressionDim).unwrap();
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("compression_dim,rank1_accuracy,age_accuracy"));
        assert_eq!(SweepParam::Pp.grid().len(), 80);
        assert!(matches!(sweep(&small(), SweepParam::Epsilon), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn outputs_written() {
        let dir = std::env::temp_dir().join(format!("embshield-out-{}", std::process::id()));
        let cfg = small();
        let run = run_pipeline(&cfg).unwrap();
        write_run_outputs(&dir, &cfg, &run).unwrap();
        for f in ["metrics.json", "timings.json", "fmr_fnmr.csv", "curves.svg", "manifest.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config, cfg);
        let first = std::fs::read(dir.join("metrics.json")).unwrap();
        write_run_outputs(&dir, &m.config, &run_pipeline(&m.config).unwrap()).unwrap();
        assert_eq!(first, std::fs::read(dir.join("metrics.json")).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
