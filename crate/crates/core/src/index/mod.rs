//! Vector store over keyword embeddings.
//!
//! Two kinds: exact brute-force cosine search, and an IVF-style approximate
//! index (k-means coarse quantizer, probed-cluster scan). All stored vectors
//! are unit-norm, so ranking by dot product equals ranking by cosine.

mod kmeans;
mod lexicon;
mod persist;

pub use kmeans::{kmeans, KmeansResult};
pub use lexicon::{parse_lexicon, read_lexicon, LexiconEntry};
pub use persist::{index_to_bytes, load_index, save_index, INDEX_MAGIC};

use crate::linalg::dot;
use crate::retriever::Embedding;
use crate::{Error, Result};

/// One indexed keyword: stable id, normalized text, optional domain tag, and
/// its unit-norm embedding.
#[derive(Debug, Clone)]
pub struct KeywordEntry {
    pub id: u64,
    pub keyword_text: String,
    pub domain_tag: Option<String>,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Exact,
    Ivf,
}

/// Build-time configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub n_clusters: usize,
    pub n_probe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            kind: IndexKind::Exact,
            n_clusters: 32,
            n_probe: 8,
            kmeans_iters: 25,
            seed: 42,
        }
    }
}

/// One search result. Hits are sorted by descending score, ties broken by
/// ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub entry_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IvfData {
    pub centroids: Vec<f64>, // n_clusters x dim, row-major, unit rows
    pub n_clusters: usize,
    /// Entry positions per cluster, each list ascending.
    pub assignments: Vec<Vec<u32>>,
    /// Probed clusters per query; not persisted, settable after load.
    pub n_probe: usize,
}

/// Immutable vector index. Concurrent searches over a shared index are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f64>, // row-major, len = ids.len() * dim
    ivf: Option<IvfData>,
}

impl VectorIndex {
    /// Build an index over keyword entries.
    pub fn build(entries: &[KeywordEntry], cfg: &IndexConfig) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("index entries".into()));
        }
        let dim = entries[0].embedding.dim();
        let mut seen = std::collections::BTreeSet::new();
        for e in entries {
            if e.embedding.dim() != dim {
                return Err(Error::dimension("entry embedding", dim, e.embedding.dim()));
            }
            if !seen.insert(e.id) {
                return Err(Error::DuplicateId(e.id));
            }
        }
        let ids: Vec<u64> = entries.iter().map(|e| e.id).collect();
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for e in entries {
            vectors.extend_from_slice(e.embedding.values());
        }
        let ivf = match cfg.kind {
            IndexKind::Exact => None,
            IndexKind::Ivf => {
                if cfg.n_clusters == 0 || cfg.n_clusters > entries.len() {
                    return Err(Error::InvalidArgument(format!(
                        "n_clusters {} must be in 1..={}",
                        cfg.n_clusters,
                        entries.len()
                    )));
                }
                if cfg.n_probe == 0 || cfg.n_probe > cfg.n_clusters {
                    return Err(Error::InvalidArgument(format!(
                        "n_probe {} must be in 1..={}",
                        cfg.n_probe, cfg.n_clusters
                    )));
                }
                let km = kmeans(&vectors, dim, cfg.n_clusters, cfg.kmeans_iters, cfg.seed)?;
                let mut assignments: Vec<Vec<u32>> = vec![Vec::new(); cfg.n_clusters];
                for (i, &c) in km.assignments.iter().enumerate() {
                    assignments[c].push(i as u32);
                }
                Some(IvfData {
                    centroids: km.centroids,
                    n_clusters: cfg.n_clusters,
                    assignments,
                    n_probe: cfg.n_probe,
                })
            }
        };
        Ok(VectorIndex {
            dim,
            ids,
            vectors,
            ivf,
        })
    }

    pub(crate) fn from_parts(
        dim: usize,
        ids: Vec<u64>,
        vectors: Vec<f64>,
        ivf: Option<IvfData>,
    ) -> Self {
        VectorIndex {
            dim,
            ids,
            vectors,
            ivf,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> IndexKind {
        if self.ivf.is_some() {
            IndexKind::Ivf
        } else {
            IndexKind::Exact
        }
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    pub(crate) fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub(crate) fn ivf(&self) -> Option<&IvfData> {
        self.ivf.as_ref()
    }

    /// Number of clusters probed per query (IVF only).
    pub fn n_probe(&self) -> Option<usize> {
        self.ivf.as_ref().map(|i| i.n_probe)
    }

    /// Adjust the probe width; clamped to 1..=n_clusters. No effect on exact
    /// indices. Needed after [`load_index`], which defaults to full probing.
    pub fn set_n_probe(&mut self, n_probe: usize) {
        if let Some(ivf) = self.ivf.as_mut() {
            ivf.n_probe = n_probe.clamp(1, ivf.n_clusters);
        }
    }

    fn rank_hits(&self, mut hits: Vec<RetrievalHit>, k: usize) -> Vec<RetrievalHit> {
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entry_id.cmp(&b.entry_id))
        });
        hits.truncate(k);
        hits
    }

    /// Top-k entries by cosine similarity. Exact indices scan everything;
    /// IVF indices scan the `n_probe` clusters nearest to the query.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit>> {
        if self.ids.is_empty() {
            return Err(Error::Empty("index".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::dimension("query", self.dim, query.dim()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let q = query.values();
        match &self.ivf {
            None => {
                let hits: Vec<RetrievalHit> = (0..self.ids.len())
                    .map(|i| RetrievalHit {
                        entry_id: self.ids[i],
                        score: dot(q, self.vector(i)),
                    })
                    .collect();
                Ok(self.rank_hits(hits, k))
            }
            Some(ivf) => {
                let mut clusters: Vec<(f64, usize)> = (0..ivf.n_clusters)
                    .map(|c| {
                        let cent = &ivf.centroids[c * self.dim..(c + 1) * self.dim];
                        (dot(q, cent), c)
                    })
                    .collect();
                clusters.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                let mut hits = Vec::new();
                for &(_, c) in clusters.iter().take(ivf.n_probe) {
                    for &pos in &ivf.assignments[c] {
                        let pos = pos as usize;
                        hits.push(RetrievalHit {
                            entry_id: self.ids[pos],
                            score: dot(q, self.vector(pos)),
                        });
                    }
                }
                Ok(self.rank_hits(hits, k))
            }
        }
    }
}

/// Mean over queries of |approx top-k ∩ exact top-k| / k.
pub fn recall_at_k(
    approx: &VectorIndex,
    exact: &VectorIndex,
    queries: &[Embedding],
    k: usize,
) -> Result<f64> {
    if approx.ids != exact.ids {
        return Err(Error::InvalidArgument(
            "recall requires the same entries in both indices".into(),
        ));
    }
    if queries.is_empty() {
        return Err(Error::Empty("queries".into()));
    }
    let mut total = 0.0;
    for q in queries {
        let a: std::collections::BTreeSet<u64> = approx
            .search(q, k)?
            .into_iter()
            .map(|h| h.entry_id)
            .collect();
        let e: std::collections::BTreeSet<u64> = exact
            .search(q, k)?
            .into_iter()
            .map(|h| h.entry_id)
            .collect();
        total += a.intersection(&e).count() as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::l2_norm;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if l2_norm(&v) > 1e-9 {
                return Embedding::from_unnormalized(v).unwrap();
            }
        }
    }

    pub(crate) fn random_entries(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<KeywordEntry> {
        (0..n)
            .map(|i| KeywordEntry {
                id: i as u64,
                keyword_text: format!("kw{i}"),
                domain_tag: None,
                embedding: random_unit(rng, dim),
            })
            .collect()
    }

    #[test]
    fn query_of_stored_vector_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let entries = random_entries(&mut rng, 20, 8);
        let idx = VectorIndex::build(&entries, &IndexConfig::default()).unwrap();
        let hits = idx.search(&entries[7].embedding, 3).unwrap();
        assert_eq!(hits[0].entry_id, 7);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_store_returns_all_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let entries = random_entries(&mut rng, 5, 8);
        let idx = VectorIndex::build(&entries, &IndexConfig::default()).unwrap();
        let q = random_unit(&mut rng, 8);
        let hits = idx.search(&q, 50).unwrap();
        assert_eq!(hits.len(), 5);
        for w in hits.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut entries = random_entries(&mut rng, 3, 4);
        entries[2].id = entries[0].id;
        assert!(matches!(
            VectorIndex::build(&entries, &IndexConfig::default()),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn empty_build_rejected() {
        assert!(VectorIndex::build(&[], &IndexConfig::default()).is_err());
    }

    #[test]
    fn exact_matches_full_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 16;
        let entries = random_entries(&mut rng, 1000, dim);
        let idx = VectorIndex::build(&entries, &IndexConfig::default()).unwrap();
        for _ in 0..100 {
            let q = random_unit(&mut rng, dim);
            let hits = idx.search(&q, 10).unwrap();
            // Naive oracle: score every entry, sort by (score desc, id asc).
            let mut oracle: Vec<(f64, u64)> = entries
                .iter()
                .map(|e| {
                    let s: f64 = e
                        .embedding
                        .values()
                        .iter()
                        .zip(q.values())
                        .map(|(a, b)| a * b)
                        .sum();
                    (s, e.id)
                })
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            for (hit, (score, id)) in hits.iter().zip(&oracle) {
                assert_eq!(hit.entry_id, *id);
                assert!((hit.score - score).abs() < 1e-12);
                assert!(hit.score <= 1.0 + 1e-9 && hit.score >= -1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn ivf_single_cluster_centroid_is_normalized_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let entries = random_entries(&mut rng, 10, 6);
        let cfg = IndexConfig {
            kind: IndexKind::Ivf,
            n_clusters: 1,
            n_probe: 1,
            ..IndexConfig::default()
        };
        let idx = VectorIndex::build(&entries, &cfg).unwrap();
        let ivf = idx.ivf().unwrap();
        let mut mean = vec![0.0; 6];
        for e in &entries {
            for (m, v) in mean.iter_mut().zip(e.embedding.values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= 10.0;
        }
        let norm = l2_norm(&mean);
        for (c, m) in ivf.centroids.iter().zip(&mean) {
            assert!((c - m / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn ivf_separated_points_partition_exactly() {
        // Entries placed at k well-separated unit points; k-means with
        // n_clusters = k must recover each point as a centroid.
        let dim = 8;
        let k = 4;
        let mut entries = Vec::new();
        for c in 0..k {
            for j in 0..5 {
                let mut v = vec![0.0; dim];
                v[c * 2] = 1.0;
                entries.push(KeywordEntry {
                    id: (c * 5 + j) as u64,
                    keyword_text: format!("kw{c}{j}"),
                    domain_tag: None,
                    embedding: Embedding::from_unnormalized(v).unwrap(),
                });
            }
        }
        let cfg = IndexConfig {
            kind: IndexKind::Ivf,
            n_clusters: k,
            n_probe: 1,
            ..IndexConfig::default()
        };
        let idx = VectorIndex::build(&entries, &cfg).unwrap();
        let ivf = idx.ivf().unwrap();
        // Each cluster contains exactly the 5 copies of one point.
        let mut sizes: Vec<usize> = ivf.assignments.iter().map(|a| a.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![5, 5, 5, 5]);
        for assigned in &ivf.assignments {
            let first = idx.vector(assigned[0] as usize).to_vec();
            for &p in assigned {
                assert_eq!(idx.vector(p as usize), first.as_slice());
            }
        }
    }

    #[test]
    fn full_probe_recall_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dim = 12;
        let entries = random_entries(&mut rng, 200, dim);
        let exact = VectorIndex::build(&entries, &IndexConfig::default()).unwrap();
        let cfg = IndexConfig {
            kind: IndexKind::Ivf,
            n_clusters: 8,
            n_probe: 8,
            ..IndexConfig::default()
        };
        let ivf = VectorIndex::build(&entries, &cfg).unwrap();
        let queries: Vec<Embedding> = (0..20).map(|_| random_unit(&mut rng, dim)).collect();
        let r = recall_at_k(&ivf, &exact, &queries, 10).unwrap();
        assert_eq!(r, 1.0);
        // Exact against itself is trivially 1.
        let r = recall_at_k(&exact, &exact, &queries, 10).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn ivf_hits_are_subset_with_exact_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 12;
        let entries = random_entries(&mut rng, 300, dim);
        let cfg = IndexConfig {
            kind: IndexKind::Ivf,
            n_clusters: 16,
            n_probe: 4,
            ..IndexConfig::default()
        };
        let idx = VectorIndex::build(&entries, &cfg).unwrap();
        let by_id: std::collections::BTreeMap<u64, &KeywordEntry> =
            entries.iter().map(|e| (e.id, e)).collect();
        for _ in 0..20 {
            let q = random_unit(&mut rng, dim);
            let hits = idx.search(&q, 10).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for h in &hits {
                assert!(seen.insert(h.entry_id), "duplicate hit {}", h.entry_id);
                let e = by_id[&h.entry_id];
                let expect: f64 = e
                    .embedding
                    .values()
                    .iter()
                    .zip(q.values())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((h.score - expect).abs() < 1e-12);
            }
        }
    }
}
