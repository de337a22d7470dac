//! Embedding vectors, datasets and plaintext matching.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::Error;

/// Fixed-dimension real vector with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, Error> {
        if values.is_empty() {
            return Err(Error::InvalidDim(0));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*bad));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, Error> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector { values: v.values.iter().map(|x| x / n).collect() })
}

/// `⟨a,b⟩ / (‖a‖·‖b‖)`.
///
/// Each vector is normalized on its own before the dot product, so the result is
/// exactly symmetric and insensitive to positive rescaling.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, Error> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), found: b.len() });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Ok(s.clamp(-1.0, 1.0))
}

/// Keeps the first `d` coordinates and renormalizes.
pub fn mrl_truncate(v: &EmbeddingVector, d: usize) -> Result<EmbeddingVector, Error> {
    if d == 0 || d > v.dim() {
        return Err(Error::InvalidDim(d));
    }
    l2_normalize(&EmbeddingVector { values: v.values[..d].to_vec() })
}

/// Identity of the gallery entry most similar to `probe`; ties go to the lowest id.
pub fn rank1_identify(probe: &EmbeddingVector, gallery: &[(u32, EmbeddingVector)]) -> Result<u32, Error> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let mut best: Option<(f64, u32)> = None;
    for (id, g) in gallery {
        let s = cosine_similarity(probe, g)?;
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid <= *id) => Some((bs, bid)),
            _ => Some((s, *id)),
        };
    }
    Ok(best.expect("non-empty gallery").1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Genuine,
    Impostor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub value: f64,
    pub kind: ScoreKind,
}

/// Every unordered record pair `(i, j)`, `i < j`, in row-major order.
pub fn pairwise_scores(ds: &Dataset) -> Result<Vec<MatchScore>, Error> {
    let ids: std::collections::BTreeSet<u32> = ds.records.iter().map(|r| r.identity).collect();
    let has_pair = ids
        .iter()
        .any(|id| ds.records.iter().filter(|r| r.identity == *id).count() >= 2);
    if ids.len() < 2 || !has_pair {
        return Err(Error::InsufficientData("need two identities and one repeated identity".into()));
    }
    let normed: Vec<EmbeddingVector> = ds.records.iter().map(|r| l2_normalize(&r.embedding)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(ds.records.len() * (ds.records.len() - 1) / 2);
    for i in 0..ds.records.len() {
        for j in i + 1..ds.records.len() {
            let value = cosine_similarity(&normed[i], &normed[j])?;
            let kind = if ds.records[i].identity == ds.records[j].identity {
                ScoreKind::Genuine
            } else {
                ScoreKind::Impostor
            };
            out.push(MatchScore { value, kind });
        }
    }
    Ok(out)
}

/// Soft-biometric attributes carried by every record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Gender,
    Ethnicity,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Age, Attribute::Gender, Attribute::Ethnicity];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Age => "age",
            Attribute::Gender => "gender",
            Attribute::Ethnicity => "ethnicity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub embedding: EmbeddingVector,
    pub identity: u32,
    pub age_bucket: usize,
    pub gender: usize,
    pub ethnicity: usize,
}

impl SubjectRecord {
    pub fn attribute(&self, a: Attribute) -> usize {
        match a {
            Attribute::Age => self.age_bucket,
            Attribute::Gender => self.gender,
            Attribute::Ethnicity => self.ethnicity,
        }
    }
}

/// Number of classes per attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub age: usize,
    pub gender: usize,
    pub ethnicity: usize,
}

impl ClassCounts {
    pub fn get(&self, a: Attribute) -> usize {
        match a {
            Attribute::Age => self.age,
            Attribute::Gender => self.gender,
            Attribute::Ethnicity => self.ethnicity,
        }
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        Self { age: 4, gender: 2, ethnicity: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SubjectRecord>,
    pub dim: usize,
    pub class_counts: ClassCounts,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), Error> {
        for r in &self.records {
            if r.embedding.dim() != self.dim {
                return Err(Error::DimMismatch { expected: self.dim, found: r.embedding.dim() });
            }
            for a in Attribute::ALL {
                if r.attribute(a) >= self.class_counts.get(a) {
                    return Err(Error::InvalidData(format!(
                        "{} class {} out of range for record {}",
                        a.name(),
                        r.attribute(a),
                        r.identity
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct identities.
    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn labels(&self, a: Attribute) -> Vec<usize> {
        self.records.iter().map(|r| r.attribute(a)).collect()
    }

    /// Applies `f` to every embedding, keeping labels.
    pub fn map_embeddings<F>(&self, mut f: F) -> Result<Dataset, Error>
    where
        F: FnMut(usize, &EmbeddingVector) -> Result<EmbeddingVector, Error>,
    {
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Ok(SubjectRecord { embedding: f(i, &r.embedding)?, ..r.clone() }))
            .collect::<Result<Vec<_>, Error>>()?;
        let dim = records.first().map_or(self.dim, |r| r.embedding.dim());
        Ok(Dataset { records, dim, class_counts: self.class_counts, split_tag: self.split_tag })
    }

    /// CSV with header `id,age,gender,ethnicity,v0,...`, floats at 9 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "age".into(), "gender".into(), "ethnicity".into()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.identity.to_string(),
                r.age_bucket.to_string(),
                r.gender.to_string(),
                r.ethnicity.to_string(),
            ];
            row.extend(r.embedding.values().iter().map(|v| format!("{v:.8e}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`Dataset::write_csv`]; class counts are inferred unless given.
    pub fn read_csv<R: Read>(r: R, class_counts: Option<ClassCounts>, split_tag: SplitTag) -> Result<Dataset, Error> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 5 || &header[0] != "id" || &header[1] != "age" || &header[2] != "gender" || &header[3] != "ethnicity" {
            return Err(Error::InvalidData("unexpected CSV header".into()));
        }
        let dim = header.len() - 4;
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let int = |i: usize| -> Result<usize, Error> {
                row[i].trim().parse().map_err(|_| Error::InvalidData(format!("bad integer `{}`", &row[i])))
            };
            let values = (4..row.len())
                .map(|i| row[i].trim().parse::<f64>().map_err(|_| Error::InvalidData(format!("bad float `{}`", &row[i]))))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(SubjectRecord {
                embedding: EmbeddingVector::new(values)?,
                identity: int(0)? as u32,
                age_bucket: int(1)?,
                gender: int(2)?,
                ethnicity: int(3)?,
            });
        }
        let class_counts = class_counts.unwrap_or_else(|| {
            let max = |a: Attribute| records.iter().map(|r| r.attribute(a) + 1).max().unwrap_or(1);
            ClassCounts { age: max(Attribute::Age), gender: max(Attribute::Gender), ethnicity: max(Attribute::Ethnicity) }
        });
        let ds = Dataset { records, dim, class_counts, split_tag };
        ds.validate()?;
        Ok(ds)
    }
}
