//! Data model and on-disk formats for movies, shot embeddings, and labeled
//! downstream samples.
//!
//! A corpus on disk is a directory holding one JSON manifest plus one binary
//! embedding file per movie:
//!
//! * **Embedding file**: 16-byte header — magic `M2SE`, then version, shot
//!   count `M`, and embedding width `D_in` as little-endian `u32` — followed
//!   by `M·D_in` little-endian `f32` values, row-major. The format round-trips
//!   bit-exactly and is trivially parseable from any language.
//! * **Manifest**: a single JSON document with per-movie metadata
//!   ([`MovieRecord`]) and the relative path of each embedding file.
//!
//! Loaded corpora are immutable; matrices are read lazily by movie id and
//! validated (header agreement, finiteness) at read time.

mod synthetic;

pub use synthetic::{
    generate_synthetic_corpus, SynthConfig, SyntheticCorpus, SyntheticTruth, TASK_BOUNDARY,
    TASK_SIGNATURE_OVERLAP, TASK_TAGS, TASK_THEME,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Mat;

/// Magic bytes opening every embedding file.
pub const EMBEDDING_MAGIC: [u8; 4] = *b"M2SE";
/// Embedding file format version this crate reads and writes.
pub const EMBEDDING_VERSION: u32 = 1;

/// Identifier of one movie, unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovieId(pub String);

impl MovieId {
    pub fn new(id: impl Into<String>) -> Self {
        MovieId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MovieId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MovieId {
    fn from(s: &str) -> Self {
        MovieId(s.to_string())
    }
}

/// One movie as an `M x D_in` matrix of per-shot embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotEmbeddingMatrix {
    pub movie_id: MovieId,
    data: Array2<f32>,
}

impl ShotEmbeddingMatrix {
    /// Validates that the movie has at least one shot and only finite
    /// entries.
    pub fn new(movie_id: MovieId, data: Array2<f32>) -> Result<Self, CorpusError> {
        if data.nrows() == 0 {
            return Err(CorpusError::EmptyMovie { movie_id });
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue { movie_id, row, col });
        }
        Ok(Self { movie_id, data })
    }

    pub fn shot_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    /// The full matrix widened to f64, the precision all training math uses.
    pub fn to_f64(&self) -> Mat {
        self.data.mapv(|v| v as f64)
    }

    /// Rows `[start, end)` widened to f64.
    pub fn span_to_f64(&self, span: SceneSpan) -> Result<Mat, CorpusError> {
        if span.start >= span.end || span.end > self.shot_count() {
            return Err(CorpusError::SpanOutOfRange {
                movie_id: self.movie_id.clone(),
                start: span.start,
                end: span.end,
                shot_count: self.shot_count(),
            });
        }
        Ok(self
            .data
            .slice(ndarray::s![span.start..span.end, ..])
            .mapv(|v| v as f64))
    }
}

/// Half-open shot interval `[start, end)` within one movie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneSpan {
    pub start: usize,
    pub end: usize,
}

impl SceneSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of shots shared with `other`.
    pub fn overlap(&self, other: SceneSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

/// Per-movie metadata used to derive similarity pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieRecord {
    pub movie_id: MovieId,
    pub shot_count: usize,
    pub genres: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synopsis_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub more_like_this: Option<Vec<MovieId>>,
}

/// Label payload of a [`LabeledScene`]; the kind must match the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SceneLabel {
    /// Class index for classification tasks.
    Class(usize),
    /// Real value for regression tasks.
    Real(f64),
    /// Set bit indices for multi-label tagging tasks.
    Bits(Vec<usize>),
}

/// A labeled span of shots used by the downstream evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    pub movie_id: MovieId,
    pub span: SceneSpan,
    pub task_id: String,
    pub label: SceneLabel,
}

/// Index of a corpus: schema version, embedding width, movie metadata, and
/// the relative path of each movie's embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub d_in: usize,
    pub movies: Vec<MovieRecord>,
    pub embedding_files: BTreeMap<MovieId, String>,
}

impl CorpusManifest {
    /// Checks internal consistency: unique movie ids, well-formed neighbor
    /// lists, positive shot counts, and an embedding path per movie.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.movies {
            if !seen.insert(&m.movie_id) {
                return Err(CorpusError::DuplicateMovie { movie_id: m.movie_id.clone() });
            }
            if m.shot_count == 0 {
                return Err(CorpusError::EmptyMovie { movie_id: m.movie_id.clone() });
            }
            if let Some(neighbors) = &m.more_like_this {
                let mut neighbor_seen = std::collections::BTreeSet::new();
                for n in neighbors {
                    if n == &m.movie_id {
                        return Err(CorpusError::SelfNeighbor { movie_id: m.movie_id.clone() });
                    }
                    if !neighbor_seen.insert(n) {
                        return Err(CorpusError::DuplicateNeighbor {
                            movie_id: m.movie_id.clone(),
                            neighbor: n.clone(),
                        });
                    }
                }
            }
            if !self.embedding_files.contains_key(&m.movie_id) {
                return Err(CorpusError::MissingEmbeddingPath { movie_id: m.movie_id.clone() });
            }
        }
        Ok(())
    }

    pub fn record(&self, id: &MovieId) -> Result<&MovieRecord, CorpusError> {
        self.movies
            .iter()
            .find(|m| &m.movie_id == id)
            .ok_or_else(|| CorpusError::UnknownMovie { movie_id: id.clone() })
    }

    /// The conventional relative embedding path for a movie.
    pub fn default_embedding_path(id: &MovieId) -> String {
        format!("embeddings/{id}.m2se")
    }
}

/// A validated, lazily readable corpus rooted at a directory.
#[derive(Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    base_dir: PathBuf,
}

impl Corpus {
    /// Parses and validates `manifest_path`, then checks that every
    /// referenced embedding file exists and its header agrees with the
    /// manifest. Matrix payloads are not read until [`Corpus::embedding`].
    pub fn load(manifest_path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(manifest_path)
            .map_err(|source| CorpusError::Io { path: manifest_path.to_owned(), source })?;
        let manifest: CorpusManifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|source| CorpusError::Json { path: manifest_path.to_owned(), source })?;
        manifest.validate()?;
        let base_dir = manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_owned();
        let corpus = Self { manifest, base_dir };
        for m in &corpus.manifest.movies {
            let path = corpus.embedding_path(&m.movie_id)?;
            if !path.is_file() {
                return Err(CorpusError::MissingEmbeddingFile {
                    movie_id: m.movie_id.clone(),
                    path,
                });
            }
            let (shots, d_in) = read_embedding_header(&path)?;
            if shots != m.shot_count {
                return Err(CorpusError::HeaderMismatch {
                    movie_id: m.movie_id.clone(),
                    field: "shot_count",
                    manifest: m.shot_count,
                    file: shots,
                });
            }
            if d_in != corpus.manifest.d_in {
                return Err(CorpusError::HeaderMismatch {
                    movie_id: m.movie_id.clone(),
                    field: "d_in",
                    manifest: corpus.manifest.d_in,
                    file: d_in,
                });
            }
        }
        Ok(corpus)
    }

    fn embedding_path(&self, id: &MovieId) -> Result<PathBuf, CorpusError> {
        let rel = self
            .manifest
            .embedding_files
            .get(id)
            .ok_or_else(|| CorpusError::MissingEmbeddingPath { movie_id: id.clone() })?;
        Ok(self.base_dir.join(rel))
    }

    /// Reads one movie's full embedding matrix.
    pub fn embedding(&self, id: &MovieId) -> Result<ShotEmbeddingMatrix, CorpusError> {
        self.manifest.record(id)?;
        read_embedding_file(&self.embedding_path(id)?, id.clone())
    }

    /// Reads every movie's matrix, keyed by id.
    pub fn load_all(&self) -> Result<BTreeMap<MovieId, ShotEmbeddingMatrix>, CorpusError> {
        self.manifest
            .movies
            .iter()
            .map(|m| Ok((m.movie_id.clone(), self.embedding(&m.movie_id)?)))
            .collect()
    }
}

/// Writes a manifest plus all embedding files under `dir`, creating
/// directories as needed. `load` on the result reproduces the inputs
/// bit-exactly.
pub fn write_corpus(
    manifest: &CorpusManifest,
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    dir: &Path,
) -> Result<PathBuf, CorpusError> {
    manifest.validate()?;
    for m in &manifest.movies {
        let matrix = matrices
            .get(&m.movie_id)
            .ok_or_else(|| CorpusError::UnknownMovie { movie_id: m.movie_id.clone() })?;
        if matrix.shot_count() != m.shot_count {
            return Err(CorpusError::HeaderMismatch {
                movie_id: m.movie_id.clone(),
                field: "shot_count",
                manifest: m.shot_count,
                file: matrix.shot_count(),
            });
        }
        if matrix.dim() != manifest.d_in {
            return Err(CorpusError::HeaderMismatch {
                movie_id: m.movie_id.clone(),
                field: "d_in",
                manifest: manifest.d_in,
                file: matrix.dim(),
            });
        }
    }
    fs::create_dir_all(dir).map_err(|source| CorpusError::Io { path: dir.to_owned(), source })?;
    for m in &manifest.movies {
        let rel = &manifest.embedding_files[&m.movie_id];
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|source| CorpusError::Io { path: parent.to_owned(), source })?;
        }
        write_embedding_file(&path, &matrices[&m.movie_id])?;
    }
    let manifest_path = dir.join("manifest.json");
    write_json_pretty(&manifest_path, manifest)?;
    Ok(manifest_path)
}

/// Serializes `value` as pretty JSON at `path` (atomic enough for our
/// single-writer model: write then rename is not needed here).
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let file = fs::File::create(path)
        .map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| CorpusError::Json { path: path.to_owned(), source })?;
    w.write_all(b"\n").map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    Ok(())
}

/// Writes one scene record per line.
pub fn write_scenes_jsonl(path: &Path, scenes: &[LabeledScene]) -> Result<(), CorpusError> {
    let file = fs::File::create(path)
        .map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        serde_json::to_writer(&mut w, scene)
            .map_err(|source| CorpusError::Json { path: path.to_owned(), source })?;
        w.write_all(b"\n").map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    }
    Ok(())
}

/// Reads a scene list written by [`write_scenes_jsonl`].
pub fn read_scenes_jsonl(path: &Path) -> Result<Vec<LabeledScene>, CorpusError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| CorpusError::Json { path: path.to_owned(), source })
        })
        .collect()
}

/// Checks every scene's span against the manifest's shot counts.
pub fn validate_scenes(
    manifest: &CorpusManifest,
    scenes: &[LabeledScene],
) -> Result<(), CorpusError> {
    for s in scenes {
        let record = manifest.record(&s.movie_id)?;
        if s.span.is_empty() || s.span.end > record.shot_count {
            return Err(CorpusError::SpanOutOfRange {
                movie_id: s.movie_id.clone(),
                start: s.span.start,
                end: s.span.end,
                shot_count: record.shot_count,
            });
        }
    }
    Ok(())
}

/// Writes one embedding file: header then row-major little-endian f32 data.
pub fn write_embedding_file(
    path: &Path,
    matrix: &ShotEmbeddingMatrix,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_owned(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&EMBEDDING_MAGIC).map_err(io_err)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(matrix.shot_count() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(matrix.dim() as u32).to_le_bytes()).map_err(io_err)?;
    for v in matrix.data.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn parse_header(path: &Path, header: &[u8; 16]) -> Result<(usize, usize), CorpusError> {
    let magic: [u8; 4] = header[0..4].try_into().expect("slice length");
    if magic != EMBEDDING_MAGIC {
        return Err(CorpusError::BadMagic { path: path.to_owned(), found: magic });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("slice length"));
    if version != EMBEDDING_VERSION {
        return Err(CorpusError::UnsupportedVersion { path: path.to_owned(), found: version });
    }
    let shots = u32::from_le_bytes(header[8..12].try_into().expect("slice length")) as usize;
    let d_in = u32::from_le_bytes(header[12..16].try_into().expect("slice length")) as usize;
    Ok((shots, d_in))
}

/// Reads only the 16-byte header: `(shot_count, d_in)`.
pub fn read_embedding_header(path: &Path) -> Result<(usize, usize), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_owned(), source };
    let mut file = fs::File::open(path).map_err(io_err)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| CorpusError::Truncated { path: path.to_owned() })?;
    parse_header(path, &header)
}

/// Reads and validates one embedding file in full.
pub fn read_embedding_file(
    path: &Path,
    movie_id: MovieId,
) -> Result<ShotEmbeddingMatrix, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_owned(), source };
    let mut file = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| CorpusError::Truncated { path: path.to_owned() })?;
    let (shots, d_in) = parse_header(path, &header)?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() != shots * d_in * 4 {
        return Err(CorpusError::Truncated { path: path.to_owned() });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk length")))
        .collect();
    let data = Array2::from_shape_vec((shots, d_in), values).expect("shape from header");
    ShotEmbeddingMatrix::new(movie_id, data)
}

/// Failures while reading, writing, or validating corpus data.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o failure at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("embedding file {path} does not start with the M2SE magic (found {found:?})")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("embedding file {path} has unsupported version {found}")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("embedding file {path} is shorter than its header promises")]
    Truncated { path: PathBuf },
    #[error("movie {movie_id}: missing embedding file {path}")]
    MissingEmbeddingFile { movie_id: MovieId, path: PathBuf },
    #[error("movie {movie_id} has no embedding path in the manifest")]
    MissingEmbeddingPath { movie_id: MovieId },
    #[error("movie {movie_id}: manifest {field} = {manifest} but file has {file}")]
    HeaderMismatch { movie_id: MovieId, field: &'static str, manifest: usize, file: usize },
    #[error("movie {movie_id} appears more than once in the manifest")]
    DuplicateMovie { movie_id: MovieId },
    #[error("movie {movie_id} has zero shots")]
    EmptyMovie { movie_id: MovieId },
    #[error("movie {movie_id} has a non-finite embedding value at shot {row}, column {col}")]
    NonFiniteValue { movie_id: MovieId, row: usize, col: usize },
    #[error("movie {movie_id} lists itself in more_like_this")]
    SelfNeighbor { movie_id: MovieId },
    #[error("movie {movie_id} lists neighbor {neighbor} more than once")]
    DuplicateNeighbor { movie_id: MovieId, neighbor: MovieId },
    #[error("unknown movie {movie_id}")]
    UnknownMovie { movie_id: MovieId },
    #[error("movie {movie_id}: span [{start}, {end}) outside its {shot_count} shots")]
    SpanOutOfRange { movie_id: MovieId, start: usize, end: usize, shot_count: usize },
    #[error("synthetic corpus needs at least 2 themes, got {n_themes}")]
    TooFewThemes { n_themes: usize },
    #[error("synthetic corpus needs d_in >= n_themes, got d_in {d_in} < {n_themes} themes")]
    DimBelowThemes { d_in: usize, n_themes: usize },
    #[error(
        "synthetic shot range [{shots_min}, {shots_max}] invalid: need \
         shots_min >= signature_len + 4 = {min_required} and shots_min <= shots_max"
    )]
    BadShotRange { shots_min: usize, shots_max: usize, min_required: usize },
    #[error("synthetic corpus needs at least 1 movie")]
    NoMovies,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn tiny_matrix(id: &str) -> ShotEmbeddingMatrix {
        ShotEmbeddingMatrix::new(
            MovieId::from(id),
            array![[1.0f32, 2.0], [3.5, -0.25], [0.0, 1e-7]],
        )
        .unwrap()
    }

    fn tiny_manifest(ids: &[&str]) -> (CorpusManifest, BTreeMap<MovieId, ShotEmbeddingMatrix>) {
        let movies: Vec<MovieRecord> = ids
            .iter()
            .map(|id| MovieRecord {
                movie_id: MovieId::from(*id),
                shot_count: 3,
                genres: vec!["g".into()],
                synopsis_embedding: None,
                more_like_this: None,
            })
            .collect();
        let embedding_files = ids
            .iter()
            .map(|id| {
                let id = MovieId::from(*id);
                let path = CorpusManifest::default_embedding_path(&id);
                (id, path)
            })
            .collect();
        let manifest = CorpusManifest { version: 1, d_in: 2, movies, embedding_files };
        let matrices = ids.iter().map(|id| (MovieId::from(*id), tiny_matrix(id))).collect();
        (manifest, matrices)
    }

    #[test]
    fn embedding_file_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.m2se");
        let m = tiny_matrix("m");
        write_embedding_file(&path, &m).unwrap();
        let back = read_embedding_file(&path, MovieId::from("m")).unwrap();
        assert_eq!(m.data(), back.data());
        // Header layout is pinned: magic, version, M, D_in, all LE.
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"M2SE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 3 * 2 * 4);
    }

    #[test]
    fn single_shot_movie_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.m2se");
        let m =
            ShotEmbeddingMatrix::new(MovieId::from("one"), array![[0.5f32, -0.5, 0.25]]).unwrap();
        write_embedding_file(&path, &m).unwrap();
        let back = read_embedding_file(&path, MovieId::from("one")).unwrap();
        assert_eq!(m.data(), back.data());
    }

    #[test]
    fn corpus_write_then_load_reproduces_everything() {
        let dir = tempdir().unwrap();
        let (manifest, matrices) = tiny_manifest(&["a", "b", "c"]);
        let manifest_path = write_corpus(&manifest, &matrices, dir.path()).unwrap();
        let corpus = Corpus::load(&manifest_path).unwrap();
        assert_eq!(corpus.manifest, manifest);
        for (id, m) in &matrices {
            assert_eq!(corpus.embedding(id).unwrap().data(), m.data());
        }
    }

    #[test]
    fn empty_corpus_is_valid() {
        let dir = tempdir().unwrap();
        let manifest = CorpusManifest {
            version: 1,
            d_in: 4,
            movies: vec![],
            embedding_files: BTreeMap::new(),
        };
        let manifest_path = write_corpus(&manifest, &BTreeMap::new(), dir.path()).unwrap();
        let corpus = Corpus::load(&manifest_path).unwrap();
        assert!(corpus.manifest.movies.is_empty());
    }

    #[test]
    fn missing_embedding_file_is_reported_with_movie_id() {
        let dir = tempdir().unwrap();
        let (manifest, matrices) = tiny_manifest(&["a", "b"]);
        let manifest_path = write_corpus(&manifest, &matrices, dir.path()).unwrap();
        fs::remove_file(dir.path().join("embeddings/b.m2se")).unwrap();
        match Corpus::load(&manifest_path) {
            Err(CorpusError::MissingEmbeddingFile { movie_id, .. }) => {
                assert_eq!(movie_id.as_str(), "b")
            }
            other => panic!("expected MissingEmbeddingFile, got {other:?}"),
        }
    }

    #[test]
    fn header_dimension_mismatch_is_reported() {
        let dir = tempdir().unwrap();
        let (mut manifest, matrices) = tiny_manifest(&["a"]);
        write_corpus(&manifest, &matrices, dir.path()).unwrap();
        manifest.d_in = 16;
        write_json_pretty(&dir.path().join("manifest.json"), &manifest).unwrap();
        match Corpus::load(&dir.path().join("manifest.json")) {
            Err(CorpusError::HeaderMismatch { movie_id, field: "d_in", manifest: 16, file: 2 }) => {
                assert_eq!(movie_id.as_str(), "a")
            }
            other => panic!("expected HeaderMismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.m2se");
        fs::write(&path, b"NOPE0000000000000000").unwrap();
        match read_embedding_file(&path, MovieId::from("junk")) {
            Err(CorpusError::BadMagic { found, .. }) => assert_eq!(&found, b"NOPE"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.m2se");
        let m = tiny_matrix("short");
        write_embedding_file(&path, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_embedding_file(&path, MovieId::from("short")),
            Err(CorpusError::Truncated { .. })
        ));
    }

    #[test]
    fn non_finite_values_name_the_position() {
        let err = ShotEmbeddingMatrix::new(
            MovieId::from("nan"),
            array![[1.0f32, 2.0], [f32::NAN, 0.0]],
        )
        .unwrap_err();
        match err {
            CorpusError::NonFiniteValue { movie_id, row: 1, col: 0 } => {
                assert_eq!(movie_id.as_str(), "nan")
            }
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
    }

    #[test]
    fn manifest_validation_catches_duplicates_and_self_neighbors() {
        let (mut manifest, _) = tiny_manifest(&["a", "b"]);
        manifest.movies[1].movie_id = MovieId::from("a");
        assert!(matches!(manifest.validate(), Err(CorpusError::DuplicateMovie { .. })));

        let (mut manifest, _) = tiny_manifest(&["a", "b"]);
        manifest.movies[0].more_like_this = Some(vec![MovieId::from("a")]);
        assert!(matches!(manifest.validate(), Err(CorpusError::SelfNeighbor { .. })));
    }

    #[test]
    fn scene_jsonl_round_trips_all_label_kinds() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let scenes = vec![
            LabeledScene {
                movie_id: MovieId::from("a"),
                span: SceneSpan::new(0, 9),
                task_id: "theme".into(),
                label: SceneLabel::Class(3),
            },
            LabeledScene {
                movie_id: MovieId::from("b"),
                span: SceneSpan::new(4, 13),
                task_id: "signature_overlap".into(),
                label: SceneLabel::Real(0.25),
            },
            LabeledScene {
                movie_id: MovieId::from("c"),
                span: SceneSpan::new(2, 6),
                task_id: "tags".into(),
                label: SceneLabel::Bits(vec![0, 5, 9]),
            },
        ];
        write_scenes_jsonl(&path, &scenes).unwrap();
        assert_eq!(read_scenes_jsonl(&path).unwrap(), scenes);
    }

    #[test]
    fn span_validation_rejects_out_of_range() {
        let (manifest, _) = tiny_manifest(&["a"]);
        let scene = LabeledScene {
            movie_id: MovieId::from("a"),
            span: SceneSpan::new(1, 5),
            task_id: "theme".into(),
            label: SceneLabel::Class(0),
        };
        assert!(matches!(
            validate_scenes(&manifest, &[scene]),
            Err(CorpusError::SpanOutOfRange { end: 5, shot_count: 3, .. })
        ));
    }

    #[test]
    fn span_overlap_arithmetic() {
        let a = SceneSpan::new(10, 19);
        assert_eq!(a.overlap(SceneSpan::new(0, 10)), 0); // adjacent, half-open
        assert_eq!(a.overlap(SceneSpan::new(5, 12)), 2);
        assert_eq!(a.overlap(SceneSpan::new(10, 19)), 9);
        assert_eq!(a.overlap(SceneSpan::new(18, 30)), 1);
        assert_eq!(a.len(), 9);
    }
}
