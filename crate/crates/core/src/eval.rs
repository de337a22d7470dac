//! Attribute-leakage attacks and utility/privacy metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{MatchScore, ScoreKind};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, epochs: 200, l2: 1e-4, seed: 1 }
    }
}

/// Multinomial logistic regression over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub n_classes: usize,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub train_config: TrainConfig,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl ClassifierModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_mean).zip(&self.feature_scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    fn logits_std(&self, xs: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Class probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits_std(&self.standardize(x));
        softmax_in_place(&mut z);
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits_std(&self.standardize(x)))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Full-batch gradient descent on the softmax cross-entropy with a small L2 penalty.
/// The class count is `max(label) + 1`.
pub fn train_linear_classifier(features: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<ClassifierModel, Error> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InsufficientData("features and labels must be non-empty and equally long".into()));
    }
    let f = features[0].len();
    if let Some(bad) = features.iter().find(|x| x.len() != f) {
        return Err(Error::DimMismatch { expected: f, found: bad.len() });
    }
    if let Some(v) = features.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(*v));
    }
    let n_classes = labels.iter().max().expect("non-empty") + 1;
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::DegenerateLabels);
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; f];
    for x in features {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; f];
    for x in features {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
    }
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = ClassifierModel {
        weights: (0..n_classes).map(|_| (0..f).map(|_| rng.random_range(-1e-3..1e-3)).collect()).collect(),
        bias: vec![0.0; n_classes],
        n_classes,
        feature_mean: mean,
        feature_scale: scale,
        train_config: *cfg,
    };
    let mut grad_w = vec![vec![0.0; f]; n_classes];
    let mut grad_b = vec![0.0; n_classes];
    for _ in 0..cfg.epochs {
        for g in &mut grad_w {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        grad_b.iter_mut().for_each(|v| *v = 0.0);
        for (x, &y) in xs.iter().zip(labels) {
            let mut p = model.logits_std(x);
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for (c, &pc) in p.iter().enumerate() {
                if pc == 0.0 {
                    continue;
                }
                grad_b[c] += pc;
                for (g, v) in grad_w[c].iter_mut().zip(x) {
                    *g += pc * v;
                }
            }
        }
        for c in 0..n_classes {
            model.bias[c] -= cfg.learning_rate * grad_b[c] / n;
            for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
            }
        }
    }
    if model.weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::Invariant("classifier weights diverged".into()));
    }
    Ok(model)
}

pub fn accuracy(model: &ClassifierModel, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = features.iter().zip(labels).filter(|(x, &y)| model.predict(x) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Frequency of the most common label.
pub fn chance_level(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0) as f64 / labels.len().max(1) as f64
}

/// Area under the ROC curve of `scores` for the positive set, with tied scores
/// sharing their average rank. `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    Some((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// One-vs-rest AUC averaged over the classes present in `labels`.
pub fn macro_auc(class_scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> f64 {
    let aucs: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let s: Vec<f64> = class_scores.iter().map(|p| p.get(c).copied().unwrap_or(0.0)).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&s, &pos)
        })
        .collect();
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leakage {
    pub accuracy: f64,
    pub macro_auc: f64,
    pub chance: f64,
}

/// Trains on one split, scores top-1 accuracy and macro AUC on the other.
pub fn evaluate_attribute_leakage(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &TrainConfig,
) -> Result<Leakage, Error> {
    let model = train_linear_classifier(train_x, train_y, cfg)?;
    if let Some(x) = test_x.iter().find(|x| x.len() != model.feature_mean.len()) {
        return Err(Error::DimMismatch { expected: model.feature_mean.len(), found: x.len() });
    }
    let probs: Vec<Vec<f64>> = test_x.iter().map(|x| model.predict_proba(x)).collect();
    Ok(Leakage {
        accuracy: accuracy(&model, test_x, test_y),
        macro_auc: macro_auc(&probs, test_y, model.n_classes),
        chance: chance_level(test_y),
    })
}

/// Normalized 256-bin byte histogram followed by the first `n_raw` bytes scaled to `[0, 1]`.
pub fn ciphertext_byte_features(bytes: &[u8], n_raw: usize) -> Result<Vec<f64>, Error> {
    const HEADER: usize = 4 + 1 + 32 + 2 + 2;
    if bytes.len() < HEADER + n_raw.min(1) || &bytes[..4] != embshield_ckks::MAGIC {
        return Err(Error::MalformedCiphertext("missing EHE1 header".into()));
    }
    if bytes.len() < n_raw {
        return Err(Error::MalformedCiphertext(format!("{} bytes, need {n_raw}", bytes.len())));
    }
    let mut hist = vec![0.0; 256];
    for &b in bytes {
        hist[b as usize] += 1.0;
    }
    let total = bytes.len() as f64;
    hist.iter_mut().for_each(|h| *h /= total);
    hist.extend(bytes[..n_raw].iter().map(|&b| b as f64 / 255.0));
    Ok(hist)
}

fn check_range(x: f64, percent: bool) -> Result<(), Error> {
    let hi = if percent { 100.0 } else { 1.0 };
    if x.is_finite() && (0.0..=hi).contains(&x) {
        Ok(())
    } else {
        Err(Error::RangeViolation(x))
    }
}

/// `(1 − R_p) − (1 − R_o) = R_o − R_p`; in percent mode inputs and output are percentages.
pub fn privacy_gain(r_o: f64, r_p: f64, percent: bool) -> Result<f64, Error> {
    check_range(r_o, percent)?;
    check_range(r_p, percent)?;
    Ok(r_o - r_p)
}

/// `(A_o − A_p) / A_o`.
pub fn suppression_rate(a_o: f64, a_p: f64) -> Result<f64, Error> {
    if a_o == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok((a_o - a_p) / a_o)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmrFnmrCurve {
    pub points: Vec<CurvePoint>,
    pub eer: f64,
    /// Area under FNMR as a function of FMR (trapezoids, FMR ascending).
    pub area: f64,
}

impl FmrFnmrCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["threshold", "fmr", "fnmr"])?;
        for p in &self.points {
            out.write_record([p.threshold.to_string(), p.fmr.to_string(), p.fnmr.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn rates(genuine: &[f64], impostor: &[f64], t: f64) -> (f64, f64) {
    let fm = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
    let fnm = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
    (fm, fnm)
}

/// Sweeps `n_thresholds` uniformly over the observed score range. The equal-error
/// rate is computed exactly over every observed score as a threshold.
pub fn fmr_fnmr_curve(scores: &[MatchScore], n_thresholds: usize) -> Result<FmrFnmrCurve, Error> {
    let genuine: Vec<f64> = scores.iter().filter(|s| s.kind == ScoreKind::Genuine).map(|s| s.value).collect();
    let impostor: Vec<f64> = scores.iter().filter(|s| s.kind == ScoreKind::Impostor).map(|s| s.value).collect();
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::MissingClass);
    }
    let lo = scores.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
    let hi = scores.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    let n = n_thresholds.max(2);
    let points: Vec<CurvePoint> = (0..n)
        .map(|i| {
            let threshold = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let (fmr, fnmr) = rates(&genuine, &impostor, threshold);
            CurvePoint { threshold, fmr, fnmr }
        })
        .collect();

    let mut sorted: Vec<f64> = scores.iter().map(|s| s.value).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.push(f64::INFINITY);
    let mut eer = 1.0f64;
    let mut prev: Option<(f64, f64)> = None;
    for &t in &sorted {
        let (fm, fnm) = rates(&genuine, &impostor, t);
        eer = eer.min(fm.max(fnm));
        if let Some((pfm, pfnm)) = prev {
            if pfnm <= pfm && fnm >= fm {
                // crossing between consecutive thresholds
                let d0 = pfm - pfnm;
                let d1 = fnm - fm;
                let w = if d0 + d1 > 0.0 { d0 / (d0 + d1) } else { 0.0 };
                let x = pfm + w * (fm - pfm);
                let y = pfnm + w * (fnm - pfnm);
                eer = eer.min(0.5 * (x + y));
            }
        }
        prev = Some((fm, fnm));
    }

    let mut by_fmr: Vec<(f64, f64)> = points.iter().map(|p| (p.fmr, p.fnmr)).collect();
    by_fmr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area = by_fmr.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    Ok(FmrFnmrCurve { points, eer, area })
}

/// Everything a run reports. Accuracies are fractions in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chain: Vec<String>,
    /// Rank-1 identification accuracy of the unprotected baseline (`R_o`).
    pub rank1_baseline: f64,
    /// Rank-1 identification accuracy of the protected representation (`R_p`).
    pub rank1_accuracy: f64,
    pub attribute_baseline: BTreeMap<String, f64>,
    pub attribute_accuracy: BTreeMap<String, f64>,
    pub attribute_auc: BTreeMap<String, f64>,
    pub chance: BTreeMap<String, f64>,
    /// `A_o − A_p` per attribute.
    pub privacy_gain: BTreeMap<String, f64>,
    /// `(A_o − A_p) / A_o` per attribute.
    pub suppression_rate: BTreeMap<String, f64>,
    /// Identification-utility loss `R_o − R_p`.
    pub identification_gain: f64,
    pub eer: Option<f64>,
    pub fmr_fnmr_area: Option<f64>,
    pub timings_ms: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// Accuracies and AUCs in `[0, 1]`, and the stored gains consistent with them.
    pub fn validate(&self) -> Result<(), Error> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        let maps = [&self.attribute_accuracy, &self.attribute_baseline, &self.attribute_auc, &self.chance];
        if !unit(self.rank1_accuracy) || !unit(self.rank1_baseline) || maps.iter().any(|m| m.values().any(|&v| !unit(v))) {
            return Err(Error::Invariant("accuracies and AUCs must lie in [0, 1]".into()));
        }
        if (self.identification_gain - (self.rank1_baseline - self.rank1_accuracy)).abs() > 1e-12 {
            return Err(Error::Invariant("identification gain differs from R_o - R_p".into()));
        }
        for (attr, &pg) in &self.privacy_gain {
            let expected = self.attribute_baseline.get(attr).zip(self.attribute_accuracy.get(attr)).map(|(o, p)| o - p);
            if expected.is_none_or(|e| (e - pg).abs() > 1e-12) {
                return Err(Error::Invariant(format!("privacy gain for {attr} differs from A_o - A_p")));
            }
        }
        Ok(())
    }

    /// Fills PG and SR from the stored accuracies.
    pub fn derive_gains(&mut self) -> Result<(), Error> {
        self.identification_gain = privacy_gain(self.rank1_baseline, self.rank1_accuracy, false)?;
        for (attr, &a_p) in &self.attribute_accuracy {
            if let Some(&a_o) = self.attribute_baseline.get(attr) {
                self.privacy_gain.insert(attr.clone(), privacy_gain(a_o, a_p, false)?);
                self.suppression_rate.insert(attr.clone(), suppression_rate(a_o, a_p)?);
            }
        }
        Ok(())
    }
}
