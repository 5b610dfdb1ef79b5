//! Emotion attribution: cluster an emotion's images, drop weak clusters,
//! summarize the survivors into typed factors, and merge near-duplicates
//! into a per-emotion factor tree.

mod kmeans;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeans};
pub use tree::{FactorTree, TreeMetadata};

use crate::emotion::EmotionLabel;
use crate::error::{invalid, Error, Result};
use crate::providers::{box_average, cosine, EmotionClassifier, ImageRef, ProviderSuite, TextEncoder, VlmSummarizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorType {
    #[serde(rename = "object")]
    Object,
    #[serde(rename = "scene")]
    Scene,
    #[serde(rename = "action")]
    Action,
    #[serde(rename = "facial expression")]
    FacialExpression,
}

impl FactorType {
    pub const ALL: [FactorType; 4] = [
        FactorType::Object,
        FactorType::Scene,
        FactorType::Action,
        FactorType::FacialExpression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FactorType::Object => "object",
            FactorType::Scene => "scene",
            FactorType::Action => "action",
            FactorType::FacialExpression => "facial expression",
        }
    }
}

impl fmt::Display for FactorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub member_ids: Vec<String>,
    pub centroid: Vec<f64>,
    pub size: usize,
    pub mean_pairwise_pixel_similarity: f64,
    pub mean_emotion_score: f64,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub summary: String,
    #[serde(rename = "type")]
    pub factor_type: FactorType,
    #[serde(rename = "cluster_id")]
    pub source_cluster: usize,
    #[serde(rename = "exemplars")]
    pub exemplar_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub abstract_content: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    /// Clusters per emotion unless overridden in `k_per_emotion`.
    pub k: usize,
    pub k_per_emotion: BTreeMap<EmotionLabel, usize>,
    pub max_iter: usize,
    pub min_size: usize,
    /// Upper bound on mean pairwise pixel similarity (near-duplicate clusters).
    pub sim_cap: f64,
    pub emo_floor: f64,
    pub merge_threshold: f64,
    pub max_exemplars: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            k: 8,
            k_per_emotion: BTreeMap::new(),
            max_iter: 100,
            min_size: 20,
            sim_cap: 0.95,
            emo_floor: 0.5,
            merge_threshold: 0.85,
            max_exemplars: 5,
        }
    }
}

impl AttributionConfig {
    pub fn k_for(&self, emotion: EmotionLabel) -> usize {
        self.k_per_emotion.get(&emotion).copied().unwrap_or(self.k)
    }
}

/// Clusters pooled embeddings. Empty clusters are dropped, so at most `k`
/// clusters come back, numbered in order of first member.
pub fn cluster_embeddings(ids: &[String], embeddings: &[Array1<f64>], k: usize, seed: u64, max_iter: usize) -> Result<Vec<Cluster>> {
    if ids.len() != embeddings.len() {
        return Err(invalid("one id is required per embedding"));
    }
    let km = kmeans(embeddings, k, seed, max_iter)?;
    let mut order: Vec<usize> = Vec::new();
    for &a in &km.assignments {
        if !order.contains(&a) {
            order.push(a);
        }
    }
    Ok(order
        .iter()
        .enumerate()
        .map(|(new_id, &c)| {
            let member_ids: Vec<String> = km
                .assignments
                .iter()
                .zip(ids)
                .filter(|(a, _)| **a == c)
                .map(|(_, id)| id.clone())
                .collect();
            Cluster {
                id: new_id,
                size: member_ids.len(),
                member_ids,
                centroid: km.centroids.row(c).to_vec(),
                mean_pairwise_pixel_similarity: 0.0,
                mean_emotion_score: 0.0,
            }
        })
        .collect())
}

const SIMILARITY_SIDE: u32 = 32;

fn gray_thumbnail(img: &ImageRef) -> Vec<f64> {
    box_average(&img.content, SIMILARITY_SIDE, SIMILARITY_SIDE)
        .into_iter()
        .map(|p| (p[0] + p[1] + p[2]) / 3.0)
        .collect()
}

/// Normalized cross-correlation; two flat images count as identical,
/// one flat image against a textured one as uncorrelated.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    match (va > 0.0, vb > 0.0) {
        (true, true) => (num / (va * vb).sqrt()).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Fills the pixel-similarity and emotion-score statistics of each cluster.
/// Mean pairwise similarity of a singleton is 0.
pub fn populate_stats(
    clusters: &mut [Cluster],
    images: &BTreeMap<String, &ImageRef>,
    emotion: EmotionLabel,
    classifier: &dyn EmotionClassifier,
) -> Result<()> {
    for c in clusters.iter_mut() {
        let members: Vec<&ImageRef> = c
            .member_ids
            .iter()
            .map(|id| images.get(id).copied().ok_or_else(|| Error::NotFound(id.clone())))
            .collect::<Result<_>>()?;
        let thumbs: Vec<Vec<f64>> = members.iter().map(|m| gray_thumbnail(m)).collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..thumbs.len() {
            for j in i + 1..thumbs.len() {
                total += normalized_cross_correlation(&thumbs[i], &thumbs[j]);
                pairs += 1;
            }
        }
        c.mean_pairwise_pixel_similarity = if pairs == 0 { 0.0 } else { (total / pairs as f64).clamp(0.0, 1.0) };
        let mut score = 0.0;
        for m in &members {
            score += classifier.classify(&m.content)?.get(emotion);
        }
        c.mean_emotion_score = score / members.len() as f64;
    }
    Ok(())
}

/// Keeps clusters that are big enough, not near-duplicates, and emotive
/// enough. Order is preserved.
pub fn filter_clusters(clusters: &[Cluster], cfg: &AttributionConfig) -> Vec<Cluster> {
    clusters
        .iter()
        .filter(|c| {
            c.size >= cfg.min_size && c.mean_pairwise_pixel_similarity <= cfg.sim_cap && c.mean_emotion_score >= cfg.emo_floor
        })
        .cloned()
        .collect()
}

/// Asks the VLM for a content summary and factor type of one cluster.
pub fn summarize_cluster(
    cluster: &Cluster,
    images: &BTreeMap<String, &ImageRef>,
    vlm: &dyn VlmSummarizer,
    max_exemplars: usize,
) -> Result<Factor> {
    if cluster.member_ids.is_empty() {
        return Err(invalid(format!("cluster {} is empty", cluster.id)));
    }
    let members: Vec<&ImageRef> = cluster
        .member_ids
        .iter()
        .map(|id| images.get(id).copied().ok_or_else(|| Error::NotFound(id.clone())))
        .collect::<Result<_>>()?;
    let summary = vlm.summarize(&members).map_err(|e| match e {
        Error::Provider { provider, message, retryable } => Error::Provider {
            provider,
            message: format!("cluster {}: {message}", cluster.id),
            retryable,
        },
        other => Error::Provider {
            provider: "vlm",
            message: format!("cluster {}: {other}", cluster.id),
            retryable: true,
        },
    })?;
    let text = summary.summary.trim();
    if text.is_empty() {
        return Err(Error::Provider {
            provider: "vlm",
            message: format!("cluster {}: empty summary", cluster.id),
            retryable: true,
        });
    }
    Ok(Factor {
        summary: text.to_string(),
        factor_type: summary.factor_type,
        source_cluster: cluster.id,
        exemplar_ids: cluster.member_ids.iter().take(max_exemplars.max(1)).cloned().collect(),
        abstract_content: summary.abstract_content,
    })
}

/// Drops abstract factors, then merges factors connected by summary cosine
/// `>= threshold` (transitively). Each group keeps its first-seen factor and
/// the union of exemplars.
pub fn consolidate_factors(factors: &[Factor], text_encoder: &dyn TextEncoder, threshold: f64) -> Result<Vec<Factor>> {
    let concrete: Vec<&Factor> = factors.iter().filter(|f| !f.abstract_content).collect();
    let pooled: Vec<Array1<f64>> = concrete
        .iter()
        .map(|f| text_encoder.encode(&f.summary).map(|e| e.pooled))
        .collect::<Result<_>>()?;
    let n = concrete.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let same_text = concrete[i].summary.eq_ignore_ascii_case(&concrete[j].summary);
            if same_text || cosine(&pooled[i], &pooled[j]) >= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    // the smaller index stays the representative
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut merged: Vec<Factor> = Vec::new();
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        match slot.get(&r) {
            Some(&k) => {
                for ex in &concrete[i].exemplar_ids {
                    if !merged[k].exemplar_ids.contains(ex) {
                        merged[k].exemplar_ids.push(ex.clone());
                    }
                }
            }
            None => {
                slot.insert(r, merged.len());
                merged.push(concrete[i].clone());
            }
        }
    }
    Ok(merged)
}

/// Runs the full attribution for one emotion.
pub fn build_tree(
    emotion: EmotionLabel,
    images: &[&ImageRef],
    cfg: &AttributionConfig,
    seed: u64,
    suite: &ProviderSuite,
) -> Result<FactorTree> {
    if images.is_empty() {
        return Err(invalid(format!("no images for {emotion}")));
    }
    let ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
    let by_id: BTreeMap<String, &ImageRef> = images.iter().map(|i| (i.id.clone(), *i)).collect();
    if by_id.len() != images.len() {
        return Err(invalid(format!("duplicate image ids in the {emotion} corpus")));
    }
    let embeddings: Vec<Array1<f64>> = images
        .iter()
        .map(|i| suite.image_encoder.encode_image(&i.content).map(|e| e.pooled))
        .collect::<Result<_>>()?;
    let k = cfg.k_for(emotion).min(images.len());
    let mut clusters = cluster_embeddings(&ids, &embeddings, k, seed, cfg.max_iter)?;
    populate_stats(&mut clusters, &by_id, emotion, suite.emotion_classifier.as_ref())?;
    let kept = filter_clusters(&clusters, cfg);
    let factors = kept
        .iter()
        .map(|c| summarize_cluster(c, &by_id, suite.vlm.as_ref(), cfg.max_exemplars))
        .collect::<Result<Vec<_>>>()?;
    let factors = consolidate_factors(&factors, suite.text_encoder.as_ref(), cfg.merge_threshold)?;
    Ok(FactorTree::new(
        emotion,
        factors,
        TreeMetadata {
            k,
            seed,
            clusters_found: clusters.len(),
            clusters_kept: kept.len(),
            min_size: cfg.min_size,
            sim_cap: cfg.sim_cap,
            emo_floor: cfg.emo_floor,
            merge_threshold: cfg.merge_threshold,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Encoding, Provider, SourceTag, VlmSummary};
    use ndarray::{array, Array2};

    fn cluster(id: usize, size: usize, sim: f64, emo: f64) -> Cluster {
        Cluster {
            id,
            member_ids: (0..size).map(|i| format!("m{id}-{i}")).collect(),
            centroid: vec![0.0],
            size,
            mean_pairwise_pixel_similarity: sim,
            mean_emotion_score: emo,
        }
    }

    #[test]
    fn filter_applies_all_three_predicates() {
        let cfg = AttributionConfig::default();
        assert!(filter_clusters(&[cluster(0, 3, 0.1, 0.9)], &cfg).is_empty());
        assert_eq!(filter_clusters(&[cluster(0, 25, 0.5, 0.7)], &cfg).len(), 1);
        assert!(filter_clusters(&[cluster(0, 25, 0.96, 0.7)], &cfg).is_empty());
        assert!(filter_clusters(&[cluster(0, 25, 0.5, 0.49)], &cfg).is_empty());
        assert!(filter_clusters(&[], &cfg).is_empty());
        // boundaries are inclusive
        assert_eq!(filter_clusters(&[cluster(0, 20, 0.95, 0.5)], &cfg).len(), 1);
    }

    struct FixedText(Vec<(&'static str, Array1<f64>)>);
    impl Provider for FixedText {
        fn plugin_name(&self) -> &str {
            "fixed"
        }
        fn fingerprint(&self) -> String {
            "fixed".into()
        }
    }
    impl TextEncoder for FixedText {
        fn dim(&self) -> usize {
            2
        }
        fn encode(&self, text: &str) -> Result<Encoding> {
            let v = self.0.iter().find(|(t, _)| *t == text).expect("fixture").1.clone();
            Ok(Encoding { tokens: Array2::zeros((1, 2)), pooled: v })
        }
    }

    fn factor(summary: &str, ex: &str) -> Factor {
        Factor {
            summary: summary.into(),
            factor_type: FactorType::Object,
            source_cluster: 0,
            exemplar_ids: vec![ex.into()],
            abstract_content: false,
        }
    }

    #[test]
    fn identical_summaries_merge_orthogonal_stay() {
        let enc = FixedText(vec![("a", array![1.0, 0.0]), ("b", array![0.0, 1.0])]);
        let out = consolidate_factors(&[factor("a", "x"), factor("a", "y")], &enc, 0.85).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].exemplar_ids, vec!["x", "y"]);
        let out = consolidate_factors(&[factor("a", "x"), factor("b", "y")], &enc, 0.85).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn abstract_factors_are_dropped() {
        let enc = FixedText(vec![("a", array![1.0, 0.0]), ("b", array![0.0, 1.0])]);
        let mut f = factor("b", "y");
        f.abstract_content = true;
        let out = consolidate_factors(&[factor("a", "x"), f], &enc, 0.85).unwrap();
        assert_eq!(out.iter().map(|f| f.summary.as_str()).collect::<Vec<_>>(), ["a"]);
    }

    struct Stub(Result<VlmSummary>);
    impl Provider for Stub {
        fn plugin_name(&self) -> &str {
            "stub"
        }
        fn fingerprint(&self) -> String {
            "stub".into()
        }
    }
    impl VlmSummarizer for Stub {
        fn summarize(&self, _: &[&ImageRef]) -> Result<VlmSummary> {
            match &self.0 {
                Ok(s) => Ok(s.clone()),
                Err(_) => Err(Error::Provider { provider: "vlm", message: "timeout".into(), retryable: true }),
            }
        }
    }

    #[test]
    fn summarize_surfaces_cluster_id_and_rejects_empty() {
        let img = ImageRef::new("m7-0", image::RgbImage::new(8, 8), SourceTag::Synthetic).unwrap();
        let images: BTreeMap<String, &ImageRef> = [("m7-0".to_string(), &img)].into_iter().collect();
        let c = cluster(7, 1, 0.0, 1.0);
        let empty = Stub(Ok(VlmSummary { summary: "  ".into(), factor_type: FactorType::Scene, abstract_content: false }));
        assert!(summarize_cluster(&c, &images, &empty, 5).is_err());
        let failing = Stub(Err(invalid("x")));
        match summarize_cluster(&c, &images, &failing, 5) {
            Err(Error::Provider { message, retryable, .. }) => {
                assert!(message.contains("cluster 7"));
                assert!(retryable);
            }
            other => panic!("unexpected {other:?}"),
        }
        let ok = Stub(Ok(VlmSummary { summary: "Graveyard".into(), factor_type: FactorType::Scene, abstract_content: false }));
        let f = summarize_cluster(&c, &images, &ok, 5).unwrap();
        assert_eq!(f.factor_type, FactorType::Scene);
        assert_eq!(f.source_cluster, 7);
    }

    #[test]
    fn ncc_edge_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((normalized_cross_correlation(&a, &a) - 1.0).abs() < 1e-12);
        assert!((normalized_cross_correlation(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(normalized_cross_correlation(&[5.0; 4], &[5.0; 4]), 1.0);
        assert_eq!(normalized_cross_correlation(&[5.0; 4], &a), 0.0);
    }
}
