//! Per-word embedding containers ("SDEB") and synthetic embedding generators.
//!
//! Container layout, little-endian, no padding:
//!
//! ```text
//! magic  "SDEB"            4 bytes
//! version u32 = 1
//! count  u64               number of sentences
//! dim    u32
//! per sentence:
//!   id_len u32, id UTF-8 bytes
//!   n u32
//!   n * dim f32, row-major
//! ```
//!
//! Vectors are held as `f64` in memory and narrowed to `f32` on write.

use std::collections::HashSet;
use std::io::{self, Read, Write};
use std::ops::RangeInclusive;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::conllu::Sentence;
use crate::error::{Error, Result};
use crate::graph::{DepTree, DistanceMatrix};
use crate::rng;

pub const STORE_MAGIC: [u8; 4] = *b"SDEB";
pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub sentence_id: String,
    /// Row `i - 1` is the embedding of word `i`.
    pub vectors: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn new(sentence_id: impl Into<String>, vectors: Array2<f64>) -> Self {
        EmbeddingSequence {
            sentence_id: sentence_id.into(),
            vectors,
        }
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Embedding of 1-based word `i`.
    pub fn word(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub sequences: Vec<EmbeddingSequence>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, sequences: Vec<EmbeddingSequence>) -> Result<Self> {
        let store = EmbeddingStore { dim, sequences };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        for seq in &self.sequences {
            if seq.dim() != self.dim {
                return Err(Error::dimension(
                    format!("embedding width of sentence '{}'", seq.sentence_id),
                    self.dim,
                    seq.dim(),
                ));
            }
            if seq.vectors.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    sentence_id: seq.sentence_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Reads and validates a container.
pub fn read_store<R: Read>(reader: R) -> Result<EmbeddingStore> {
    let mut r = CountingReader {
        inner: reader,
        offset: 0,
    };

    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(Error::Format("missing SDEB magic".into()));
        }
        Err(e) => return Err(e.into()),
    }
    if magic != STORE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:02x?}, expected \"SDEB\""
        )));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let count = r.u64()?;
    let dim = r.u32()? as usize;

    let mut sequences = Vec::new();
    for k in 0..count {
        let record_start = r.offset;
        let id_len = r.u32().map_err(|e| e.in_record(k, count))?;
        let mut id = vec![0u8; id_len as usize];
        r.fill(&mut id).map_err(|e| e.in_record(k, count))?;
        let sentence_id = String::from_utf8(id).map_err(|_| Error::Corrupt {
            offset: record_start,
            message: format!("sentence id of record {k} is not UTF-8"),
        })?;
        let n = r.u32().map_err(|e| e.in_record(k, count))? as usize;
        let mut payload = vec![0u8; n * dim * 4];
        r.fill(&mut payload).map_err(|e| e.in_record(k, count))?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { sentence_id });
        }
        let vectors = Array2::from_shape_vec((n, dim), values).expect("payload size checked");
        sequences.push(EmbeddingSequence {
            sentence_id,
            vectors,
        });
    }

    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt {
            offset: r.offset,
            message: format!("trailing bytes after {count} declared records"),
        });
    }

    Ok(EmbeddingStore { dim, sequences })
}

/// Writes the container; values are narrowed to `f32`.
pub fn write_store<W: Write>(store: &EmbeddingStore, mut writer: W) -> Result<()> {
    store.validate()?;
    let dim =
        u32::try_from(store.dim).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
    writer.write_all(&STORE_MAGIC)?;
    writer.write_all(&STORE_VERSION.to_le_bytes())?;
    writer.write_all(&(store.sequences.len() as u64).to_le_bytes())?;
    writer.write_all(&dim.to_le_bytes())?;
    for seq in &store.sequences {
        let id = seq.sentence_id.as_bytes();
        writer.write_all(&(id.len() as u32).to_le_bytes())?;
        writer.write_all(id)?;
        writer.write_all(&(seq.n() as u32).to_le_bytes())?;
        let mut payload = Vec::with_capacity(seq.vectors.len() * 4);
        for v in seq.vectors.iter() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        writer.write_all(&payload)?;
    }
    writer.flush()?;
    Ok(())
}

/// Header fields of a container, without reading the payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreHeader {
    pub version: u32,
    pub count: u64,
    pub dim: u32,
}

pub fn read_store_header<R: Read>(mut reader: R) -> Result<StoreHeader> {
    let mut head = [0u8; 20];
    reader
        .read_exact(&mut head)
        .map_err(|_| Error::Format("container header truncated".into()))?;
    if head[..4] != STORE_MAGIC {
        return Err(Error::Format("bad magic, expected \"SDEB\"".into()));
    }
    Ok(StoreHeader {
        version: u32::from_le_bytes(head[4..8].try_into().unwrap()),
        count: u64::from_le_bytes(head[8..16].try_into().unwrap()),
        dim: u32::from_le_bytes(head[16..20].try_into().unwrap()),
    })
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

struct Truncated {
    offset: u64,
}

impl Truncated {
    fn in_record(self, k: u64, count: u64) -> Error {
        Error::Corrupt {
            offset: self.offset,
            message: format!("payload ends inside record {k} of {count} declared"),
        }
    }
}

impl<R: Read> CountingReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> std::result::Result<(), Truncated> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => break,
            }
        }
        self.offset += filled as u64;
        if filled < buf.len() {
            Err(Truncated {
                offset: self.offset,
            })
        } else {
            Ok(())
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, Truncated> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> std::result::Result<u64, Truncated> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let k = self.inner.read(buf)?;
        self.offset += k as u64;
        Ok(k)
    }
}

impl From<Truncated> for Error {
    fn from(t: Truncated) -> Self {
        Error::Corrupt {
            offset: t.offset,
            message: "header truncated".into(),
        }
    }
}

/// Reads a sidecar skip list: one sentence id per line, blank lines ignored.
pub fn read_skip_list<R: io::BufRead>(reader: R) -> Result<HashSet<String>> {
    let mut ids = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Pairs the k-th sentence with the k-th embedding record.
///
/// Sentences listed in `skip` are dropped from the treebank side first (the
/// extractor never wrote them). Record ids, when non-empty, must match the
/// sentence id; every record's row count must equal the sentence length.
pub fn align<'a>(
    sentences: &'a [Sentence],
    store: &'a EmbeddingStore,
    skip: &HashSet<String>,
) -> Result<Vec<(&'a Sentence, &'a EmbeddingSequence)>> {
    let kept: Vec<&Sentence> = sentences.iter().filter(|s| !skip.contains(&s.id)).collect();
    let records: Vec<&EmbeddingSequence> = store
        .sequences
        .iter()
        .filter(|e| e.sentence_id.is_empty() || !skip.contains(&e.sentence_id))
        .collect();
    if kept.len() != records.len() {
        return Err(Error::Alignment {
            index: kept.len().min(records.len()),
            message: format!(
                "{} sentences but {} embedding records",
                kept.len(),
                records.len()
            ),
        });
    }
    kept.into_iter()
        .zip(records)
        .enumerate()
        .map(|(index, (sentence, emb))| {
            if !emb.sentence_id.is_empty() && emb.sentence_id != sentence.id {
                return Err(Error::Alignment {
                    index,
                    message: format!(
                        "sentence id '{}' paired with embedding record '{}'",
                        sentence.id, emb.sentence_id
                    ),
                });
            }
            if emb.n() != sentence.n() {
                return Err(Error::Alignment {
                    index,
                    message: format!(
                        "sentence '{}' has {} words but {} embedding rows",
                        sentence.id,
                        sentence.n(),
                        emb.n()
                    ),
                });
            }
            Ok((sentence, emb))
        })
        .collect()
}

/// Random orthogonal `dim × dim` matrix: modified Gram–Schmidt on a seeded
/// Gaussian matrix.
pub fn random_rotation(dim: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, "rotation");
    loop {
        let mut q = Array2::<f64>::zeros((dim, dim));
        q.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
        if orthonormalise_rows(&mut q) {
            return q;
        }
    }
}

fn orthonormalise_rows(m: &mut Array2<f64>) -> bool {
    let rows = m.nrows();
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let prev = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &prev);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm < 1e-8 {
            return false;
        }
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    true
}

/// Embeds trees so that squared Euclidean distance between word vectors equals
/// tree path length.
///
/// Word `i` starts as the 0/1 indicator of the edges on the path from word 1
/// to word `i`, padded to `dim` coordinates. All sentences of a corpus share one
/// rotation, so a single linear map recovers every tree metric exactly.
#[derive(Clone, Debug)]
pub struct TreeEmbedder {
    dim: usize,
    noise: f64,
    seed: u64,
    rotation: Array2<f64>,
}

impl TreeEmbedder {
    pub fn new(dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::config(
                "noise",
                "noise must be finite and non-negative",
            ));
        }
        Ok(TreeEmbedder {
            dim,
            noise,
            seed,
            rotation: random_rotation(dim, seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The orthogonal map applied after padding. Row `k` of its transpose
    /// reads coordinate `k` of the unrotated indicator vectors back out.
    pub fn rotation(&self) -> &Array2<f64> {
        &self.rotation
    }

    /// `noise_stream` selects the Gaussian noise stream (e.g. sentence index).
    pub fn embed(
        &self,
        sentence_id: &str,
        tree: &DepTree,
        noise_stream: &str,
    ) -> Result<EmbeddingSequence> {
        let n = tree.n();
        if self.dim + 1 < n {
            return Err(Error::dimension(
                format!("embedding dim for a {n}-word tree (needs at least n - 1)"),
                n - 1,
                self.dim,
            ));
        }

        // Edge k is the edge joining word v to its parent in the tree rooted at 1.
        let adjacency = tree.neighbours();
        let mut indicators = Array2::<f64>::zeros((n, self.dim));
        let mut visited = vec![false; n + 1];
        let mut stack = vec![1usize];
        visited[1] = true;
        let mut next_edge = 0;
        while let Some(u) = stack.pop() {
            for &v in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    let parent_row = indicators.row(u - 1).to_owned();
                    let mut row = indicators.row_mut(v - 1);
                    row.assign(&parent_row);
                    row[next_edge] = 1.0;
                    next_edge += 1;
                    stack.push(v);
                }
            }
        }

        let mut vectors = indicators.dot(&self.rotation.t());
        if self.noise > 0.0 {
            let mut r = rng::stream(self.seed, &format!("synth-noise/{noise_stream}"));
            vectors
                .iter_mut()
                .for_each(|v| *v += self.noise * r.sample::<f64, _>(StandardNormal));
        }
        Ok(EmbeddingSequence::new(sentence_id, vectors))
    }
}

impl TreeEmbedder {
    /// Embeds every sentence's gold tree; sentence `k` draws noise from
    /// stream `{stream_prefix}/{k}`.
    pub fn embed_all(&self, sentences: &[Sentence], stream_prefix: &str) -> Result<EmbeddingStore> {
        let sequences = sentences
            .iter()
            .enumerate()
            .map(|(k, s)| self.embed(&s.id, s.gold_tree(), &format!("{stream_prefix}/{k}")))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingStore::new(self.dim, sequences)
    }
}

/// `count` placeholder sentences over uniformly random trees whose lengths are
/// drawn uniformly from `lengths`. Ids are `{prefix}-1`, `{prefix}-2`, ...
pub fn random_sentences(
    count: usize,
    lengths: RangeInclusive<usize>,
    prefix: &str,
    seed: u64,
) -> Result<Vec<Sentence>> {
    if lengths.is_empty() || *lengths.start() < 1 {
        return Err(Error::config(
            "lengths",
            format!(
                "empty or invalid length range {}..={}",
                lengths.start(),
                lengths.end()
            ),
        ));
    }
    let mut r = rng::stream(seed, &format!("synth-trees/{prefix}"));
    (1..=count)
        .map(|k| {
            let n = r.random_range(lengths.clone());
            let tree = DepTree::random(n, &mut r);
            Sentence::from_tree(format!("{prefix}-{k}"), &tree)
        })
        .collect()
}

/// One-off tree embedding; see [`TreeEmbedder`].
pub fn synth_tree_embeddings(
    tree: &DepTree,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<EmbeddingSequence> {
    TreeEmbedder::new(dim, noise, seed)?.embed("", tree, "0")
}

/// Predicted distances that only separate tree edges ("near", drawn from
/// `[0.9, 1.1]`) from non-edges ("far", drawn from `[9.9, 10.1]`).
pub fn synth_nearfar_distances(tree: &DepTree, seed: u64) -> DistanceMatrix {
    let mut r = rng::stream(seed, "nearfar");
    DistanceMatrix::from_fn(tree.n(), |i, j| {
        if tree.contains_edge(i, j) {
            r.random_range(0.9..=1.1)
        } else {
            r.random_range(9.9..=10.1)
        }
    })
}

#[cfg(test)]
fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let diff: ndarray::Array1<f64> = &a - &b;
    diff.dot(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{mst_prim, tree_to_distances};
    use ndarray::array;

    fn small_store() -> EmbeddingStore {
        EmbeddingStore::new(
            4,
            vec![
                EmbeddingSequence::new(
                    "a",
                    Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.25),
                ),
                EmbeddingSequence::new(
                    "b",
                    Array2::from_shape_fn((2, 4), |(i, j)| -((i + j) as f64)),
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn random_sentences_respect_lengths() {
        let a = random_sentences(50, 5..=15, "s", 3).unwrap();
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|s| (5..=15).contains(&s.n())));
        assert_eq!(a[0].id, "s-1");
        assert_eq!(a, random_sentences(50, 5..=15, "s", 3).unwrap());
        let (lo, hi) = (4, 3);
        assert!(random_sentences(1, lo..=hi, "s", 3).is_err());
        let one = random_sentences(1, 2..=2, "s", 0).unwrap();
        assert_eq!(one[0].gold_tree().edges(), &[(1, 2)]);
    }

    #[test]
    fn embed_all_is_exact_at_zero_noise() {
        let sentences = random_sentences(20, 2..=12, "e", 1).unwrap();
        let store = TreeEmbedder::new(16, 0.0, 9)
            .unwrap()
            .embed_all(&sentences, "e")
            .unwrap();
        for (s, e) in sentences.iter().zip(&store.sequences) {
            assert_eq!(e.sentence_id, s.id);
            let gold = tree_to_distances(s.gold_tree());
            for (i, j, d) in gold.pairs() {
                assert!((squared_distance(e.word(i), e.word(j)) - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn read_back_what_was_written() {
        let store = small_store();
        let mut buf = Vec::new();
        write_store(&store, &mut buf).unwrap();
        let back = read_store(buf.as_slice()).unwrap();
        assert_eq!(back.dim, 4);
        assert_eq!(back.sequences.len(), 2);
        assert_eq!(back, store);
    }

    #[test]
    fn single_value_layout_is_bit_exact() {
        let store =
            EmbeddingStore::new(1, vec![EmbeddingSequence::new("", array![[0.5]])]).unwrap();
        let mut buf = Vec::new();
        write_store(&store, &mut buf).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"SDEB");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&0u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x3F]);
        assert_eq!(buf, expected);
    }

    #[test]
    fn declared_count_larger_than_payload_is_corruption() {
        let mut buf = Vec::new();
        write_store(&small_store(), &mut buf).unwrap();
        buf[8..16].copy_from_slice(&3u64.to_le_bytes());
        match read_store(buf.as_slice()) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, buf.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut buf = Vec::new();
        write_store(&small_store(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match read_store(buf.as_slice()) {
            Err(Error::Corrupt { offset, message }) => {
                assert_eq!(offset, buf.len() as u64);
                assert!(message.contains("record 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_problems_are_format_errors() {
        assert!(matches!(read_store(&[][..]), Err(Error::Format(_))));
        assert!(matches!(
            read_store(&b"SDEX\x01\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let mut buf = Vec::new();
        write_store(&small_store(), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(read_store(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_values_name_the_sentence() {
        let mut buf = Vec::new();
        write_store(&small_store(), &mut buf).unwrap();
        // First float of record "b": header 20 + record a (4+1+4+48) + 4+1+4.
        let at = 20 + 57 + 9;
        buf[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match read_store(buf.as_slice()) {
            Err(Error::NonFinite { sentence_id }) => assert_eq!(sentence_id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_dims_rejected_on_write() {
        let store = EmbeddingStore {
            dim: 4,
            sequences: vec![EmbeddingSequence::new("x", Array2::zeros((2, 3)))],
        };
        assert!(matches!(
            write_store(&store, Vec::new()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn header_only_read() {
        let mut buf = Vec::new();
        write_store(&small_store(), &mut buf).unwrap();
        let h = read_store_header(buf.as_slice()).unwrap();
        assert_eq!(
            h,
            StoreHeader {
                version: 1,
                count: 2,
                dim: 4
            }
        );
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = random_rotation(12, 5);
        let eye = q.dot(&q.t());
        for ((i, j), v) in eye.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_embedding_reproduces_path_lengths() {
        let chain = DepTree::new(3, [(1, 2), (2, 3)]).unwrap();
        let e = synth_tree_embeddings(&chain, 4, 0.0, 9).unwrap();
        assert!((squared_distance(e.word(1), e.word(3)) - 2.0).abs() < 1e-12);

        let fig = DepTree::from_heads(&[2, 5, 4, 2, 0, 5]).unwrap();
        let e = synth_tree_embeddings(&fig, 8, 0.0, 1).unwrap();
        assert!((squared_distance(e.word(4), e.word(5)) - 2.0).abs() < 1e-12);

        let mut r = rng::stream(2, "trees");
        for seed in 0..20 {
            let tree = DepTree::random(10, &mut r);
            let e = synth_tree_embeddings(&tree, 12, 0.0, seed).unwrap();
            let gold = tree_to_distances(&tree);
            for (i, j, d) in gold.pairs() {
                assert!((squared_distance(e.word(i), e.word(j)) - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tree_embedding_needs_enough_dimensions() {
        let chain = DepTree::new(4, [(1, 2), (2, 3), (3, 4)]).unwrap();
        assert!(synth_tree_embeddings(&chain, 3, 0.0, 0).is_ok());
        assert!(matches!(
            synth_tree_embeddings(&chain, 2, 0.0, 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn noise_perturbs_but_is_seeded() {
        let chain = DepTree::new(3, [(1, 2), (2, 3)]).unwrap();
        let a = synth_tree_embeddings(&chain, 4, 0.5, 3).unwrap();
        let b = synth_tree_embeddings(&chain, 4, 0.5, 3).unwrap();
        let clean = synth_tree_embeddings(&chain, 4, 0.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
    }

    #[test]
    fn nearfar_matrix_decodes_to_its_tree() {
        let mut r = rng::stream(4, "trees");
        for seed in 0..50 {
            let tree = DepTree::random(2 + (seed as usize % 30), &mut r);
            let d = synth_nearfar_distances(&tree, seed);
            assert_eq!(mst_prim(&d), tree);
        }
        let two = DepTree::new(2, [(1, 2)]).unwrap();
        let d = synth_nearfar_distances(&two, 0);
        assert_eq!(d.upper().len(), 1);
        assert!((0.9..=1.1).contains(&d.get(1, 2)));
    }

    #[test]
    fn alignment_checks_ids_lengths_and_skips() {
        use crate::conllu::{Sentence, Token};
        let sentence = |id: &str, n: usize| {
            let tokens = (1..=n)
                .map(|i| Token {
                    index: i,
                    form: "x".into(),
                    upos: "X".into(),
                    head: i - 1,
                })
                .collect();
            Sentence::new(id, tokens).unwrap()
        };
        let sentences = vec![sentence("a", 3), sentence("skipped", 4), sentence("b", 2)];
        let store = small_store();
        let skip: HashSet<String> = ["skipped".to_string()].into();
        let pairs = align(&sentences, &store, &skip).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].0.id, "b");

        match align(&sentences, &store, &HashSet::new()) {
            Err(Error::Alignment { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let swapped = vec![sentence("b", 3), sentence("a", 2)];
        match align(&swapped, &store, &HashSet::new()) {
            Err(Error::Alignment { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skip_list_parsing() {
        let ids = read_skip_list("a\n\n  b \n".as_bytes()).unwrap();
        assert_eq!(ids.len(), 2);
        assert!(ids.contains("b"));
    }
}
