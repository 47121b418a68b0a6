//! Parallel extraction over multi-file corpora.
//!
//! Reader threads stream raw lines from source files into a bounded queue; a
//! pool of workers decodes, chunks, matches and filters; one writer per
//! region spills retained chunks to disk. Duplicate resolution happens after
//! the workers finish, so the retained set never depends on scheduling: among
//! chunks with the same normalized text the one earliest in corpus order
//! (file, line, chunk index) wins.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crossbeam_channel::{bounded, Sender};
use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{chunk_document, ChunkError, TokenCounter, TokenCounterSpec, DEFAULT_MAX_TOKENS};
use crate::corpus_io::{parse_document, read_records, CorpusError, CorpusSource, JsonlWriter, RawLine, SourceFile};
use crate::lexicon::Lexicon;
use crate::matcher::{build_matcher, filter_chunk, find_hits, CandidateChunk, KeywordMatcher, MatchError, DEFAULT_MIN_DISTINCT};

pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Match(#[from] MatchError),
    /// A source failed mid-run. Outputs written so far are kept and the
    /// stats file is marked incomplete.
    #[error("source failed, outputs are partial: {source}")]
    Source { source: CorpusError, stats: Box<RunStats> },
    #[error(transparent)]
    Io(#[from] CorpusError),
}

impl PipelineError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            PipelineError::Source { source, .. } | PipelineError::Io(source) => Some(source.path()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    #[default]
    ExactHash,
    Off,
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub sources: Vec<CorpusSource>,
    pub lexicons: Vec<Lexicon>,
    pub max_tokens: usize,
    pub min_distinct: usize,
    pub workers: usize,
    pub dedup: DedupMode,
    pub output_dir: PathBuf,
    /// Per-region cap on emitted chunks, applied after sorting by corpus order.
    pub target_counts: BTreeMap<String, usize>,
    /// Emit chunks in corpus order instead of completion order.
    pub stable_order: bool,
    pub token_counter: TokenCounterSpec,
    /// Bound on raw lines queued between readers and workers.
    pub queue_capacity: usize,
}

impl ExtractionConfig {
    pub fn new(sources: Vec<CorpusSource>, lexicons: Vec<Lexicon>, output_dir: impl Into<PathBuf>) -> Self {
        ExtractionConfig {
            sources,
            lexicons,
            max_tokens: DEFAULT_MAX_TOKENS,
            min_distinct: DEFAULT_MIN_DISTINCT,
            workers: 1,
            dedup: DedupMode::ExactHash,
            output_dir: output_dir.into(),
            target_counts: BTreeMap::new(),
            stable_order: false,
            token_counter: TokenCounterSpec::default(),
            queue_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub documents_read: u64,
    pub documents_skipped: u64,
    pub chunks_produced: u64,
    pub chunks_retained_per_region: BTreeMap<String, u64>,
    pub duplicates_dropped: u64,
    pub bytes_processed: u64,
    pub wall_seconds: f64,
    /// False when a source failed and the outputs are partial.
    #[serde(default = "complete_default")]
    pub complete: bool,
}

fn complete_default() -> bool {
    true
}

/// Output file holding the retained chunks of one region.
pub fn candidates_path(output_dir: &Path, region_id: &str) -> PathBuf {
    output_dir.join(format!("{region_id}.candidates.jsonl"))
}

/// Digest used for exact duplicate detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(pub u128);

impl std::fmt::Display for DedupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Case-folded text with whitespace runs collapsed and ends trimmed.
pub fn normalize_for_dedup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

pub fn dedup_key(text: &str) -> DedupKey {
    key_of_normalized(&normalize_for_dedup(text))
}

fn key_of_normalized(normalized: &str) -> DedupKey {
    let digest = Sha256::digest(normalized.as_bytes());
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    DedupKey(u128::from_be_bytes(bytes))
}

/// Position of a chunk in the corpus: (file, line, chunk index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
struct CorpusOrder(u32, u64, u32);

#[derive(Serialize, Deserialize)]
struct Spilled {
    order: CorpusOrder,
    candidate: CandidateChunk,
}

struct DedupEntry {
    text: Box<str>,
    first: CorpusOrder,
}

#[derive(Default)]
struct DedupTable {
    // (region index, digest) -> distinct normalized texts sharing the digest
    entries: DashMap<(usize, DedupKey), Vec<DedupEntry>>,
}

impl DedupTable {
    fn register(&self, region: usize, text: &str, order: CorpusOrder) {
        let normalized = normalize_for_dedup(text);
        let key = key_of_normalized(&normalized);
        let mut slot = self.entries.entry((region, key)).or_default();
        match slot.iter_mut().find(|e| *e.text == *normalized) {
            Some(e) => e.first = e.first.min(order),
            None => slot.push(DedupEntry {
                text: normalized.into_boxed_str(),
                first: order,
            }),
        }
    }

    fn is_first(&self, region: usize, text: &str, order: CorpusOrder) -> bool {
        let normalized = normalize_for_dedup(text);
        let key = key_of_normalized(&normalized);
        self.entries
            .get(&(region, key))
            .and_then(|slot| slot.iter().find(|e| *e.text == *normalized).map(|e| e.first == order))
            .unwrap_or(true)
    }
}

#[derive(Default)]
struct Counters {
    documents_read: AtomicU64,
    documents_skipped: AtomicU64,
    chunks_produced: AtomicU64,
    bytes_processed: AtomicU64,
}

struct Job {
    file: u32,
    line: RawLine,
}

/// Runs the full extraction and writes one candidate file per region plus
/// [`STATS_FILE`] into the output directory.
pub fn run_extraction(config: &ExtractionConfig) -> Result<RunStats, PipelineError> {
    let started = Instant::now();
    validate(config)?;
    let counter = TokenCounter::from_spec(&config.token_counter)?;
    let matchers = config
        .lexicons
        .iter()
        .map(build_matcher)
        .collect::<Result<Vec<_>, _>>()?;

    let mut files: Vec<SourceFile> = Vec::new();
    for source in &config.sources {
        files.extend(source.files()?);
    }
    for file in &files {
        std::fs::File::open(&file.path).map_err(|source| CorpusError::Read {
            path: file.path.clone(),
            source,
        })?;
    }
    std::fs::create_dir_all(&config.output_dir).map_err(|source| CorpusError::Write {
        path: config.output_dir.clone(),
        source,
    })?;

    let spill_paths: Vec<PathBuf> = matchers
        .iter()
        .map(|m| config.output_dir.join(format!(".{}.spill.jsonl", m.region_id())))
        .collect();
    let counters = Counters::default();
    let dedup = DedupTable::default();
    let next_file = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let source_failure: Mutex<Option<CorpusError>> = Mutex::new(None);
    let output_failure: Mutex<Option<CorpusError>> = Mutex::new(None);

    let ctx = WorkerContext {
        config,
        files: &files,
        counter: &counter,
        matchers: &matchers,
        counters: &counters,
        dedup: (config.dedup == DedupMode::ExactHash).then_some(&dedup),
    };

    std::thread::scope(|s| {
        let (job_tx, job_rx) = bounded::<Job>(config.queue_capacity.max(1));
        let readers = config.workers.min(files.len()).max(1);
        for _ in 0..readers {
            let job_tx = job_tx.clone();
            let (files, next_file, abort, failure) = (&files, &next_file, &abort, &source_failure);
            s.spawn(move || read_files(files, next_file, abort, failure, job_tx));
        }
        drop(job_tx);

        let mut region_txs = Vec::new();
        let mut writers = Vec::new();
        for path in &spill_paths {
            let (tx, rx) = bounded::<Spilled>(config.queue_capacity.max(1));
            region_txs.push(tx);
            let (abort, failure) = (&abort, &output_failure);
            writers.push(s.spawn(move || {
                let result = JsonlWriter::create(path).and_then(|mut w| {
                    for record in rx.iter() {
                        w.write(&record)?;
                    }
                    w.finish()
                });
                result.unwrap_or_else(|e| {
                    abort.store(true, Ordering::SeqCst);
                    failure.lock().unwrap().get_or_insert(e);
                    // keep draining so workers never block on a dead writer
                    for _ in rx.iter() {}
                    0
                })
            }));
        }

        for _ in 0..config.workers {
            let job_rx = job_rx.clone();
            let region_txs = region_txs.clone();
            let ctx = &ctx;
            s.spawn(move || {
                for job in job_rx.iter() {
                    ctx.process(job, &region_txs);
                }
            });
        }
        drop(region_txs);
        drop(job_rx);
        for writer in writers {
            writer.join().expect("writer thread panicked");
        }
    });

    if let Some(e) = output_failure.into_inner().unwrap() {
        return Err(PipelineError::Io(e));
    }

    let mut stats = RunStats {
        documents_read: counters.documents_read.load(Ordering::Relaxed),
        documents_skipped: counters.documents_skipped.load(Ordering::Relaxed),
        chunks_produced: counters.chunks_produced.load(Ordering::Relaxed),
        bytes_processed: counters.bytes_processed.load(Ordering::Relaxed),
        complete: true,
        ..RunStats::default()
    };
    for (region, (matcher, spill)) in matchers.iter().zip(&spill_paths).enumerate() {
        let emitted = finalize_region(config, region, matcher.region_id(), spill, ctx.dedup)?;
        stats.duplicates_dropped += emitted.duplicates;
        stats
            .chunks_retained_per_region
            .insert(matcher.region_id().to_string(), emitted.written);
        let _ = std::fs::remove_file(spill);
    }

    let failure = source_failure.into_inner().unwrap();
    stats.complete = failure.is_none();
    stats.wall_seconds = started.elapsed().as_secs_f64();
    write_stats(&config.output_dir, &stats)?;
    match failure {
        Some(source) => Err(PipelineError::Source {
            source,
            stats: Box::new(stats),
        }),
        None => Ok(stats),
    }
}

fn validate(config: &ExtractionConfig) -> Result<(), PipelineError> {
    if config.workers == 0 {
        return Err(PipelineError::Config("workers must be at least 1".into()));
    }
    if config.max_tokens == 0 {
        return Err(PipelineError::Config("max_tokens must be at least 1".into()));
    }
    if config.sources.is_empty() {
        return Err(PipelineError::Config("no corpus sources given".into()));
    }
    if config.lexicons.is_empty() {
        return Err(PipelineError::Config("no lexicons given".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for lex in &config.lexicons {
        if !seen.insert(lex.region_id.as_str()) {
            return Err(PipelineError::Config(format!("region {} listed twice", lex.region_id)));
        }
    }
    if let Some(region) = config.target_counts.keys().find(|r| !seen.contains(r.as_str())) {
        return Err(PipelineError::Config(format!("target count for unknown region {region}")));
    }
    Ok(())
}

fn read_files(
    files: &[SourceFile],
    next_file: &AtomicUsize,
    abort: &AtomicBool,
    failure: &Mutex<Option<CorpusError>>,
    jobs: Sender<Job>,
) {
    loop {
        let idx = next_file.fetch_add(1, Ordering::SeqCst);
        let Some(file) = files.get(idx) else { return };
        let lines = match file.open() {
            Ok(lines) => lines,
            Err(e) => {
                abort.store(true, Ordering::SeqCst);
                failure.lock().unwrap().get_or_insert(e);
                return;
            }
        };
        for line in lines {
            if abort.load(Ordering::Relaxed) {
                return;
            }
            match line {
                Ok(line) => {
                    if jobs.send(Job { file: idx as u32, line }).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    log::error!("{e}");
                    abort.store(true, Ordering::SeqCst);
                    failure.lock().unwrap().get_or_insert(e);
                    return;
                }
            }
        }
    }
}

struct WorkerContext<'a> {
    config: &'a ExtractionConfig,
    files: &'a [SourceFile],
    counter: &'a TokenCounter,
    matchers: &'a [KeywordMatcher],
    counters: &'a Counters,
    dedup: Option<&'a DedupTable>,
}

impl WorkerContext<'_> {
    fn process(&self, job: Job, region_txs: &[Sender<Spilled>]) {
        let file = &self.files[job.file as usize];
        self.counters
            .bytes_processed
            .fetch_add(job.line.bytes.len() as u64, Ordering::Relaxed);
        let doc = match parse_document(&job.line.bytes, &file.label, job.line.ordinal, &file.text_field) {
            Ok(Some(doc)) => doc,
            Ok(None) => return,
            Err(_) => {
                self.counters.documents_skipped.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        self.counters.documents_read.fetch_add(1, Ordering::Relaxed);
        let chunks = chunk_document(&doc, self.config.max_tokens, self.counter).expect("max_tokens validated");
        self.counters
            .chunks_produced
            .fetch_add(chunks.len() as u64, Ordering::Relaxed);
        for chunk in &chunks {
            for (region, matcher) in self.matchers.iter().enumerate() {
                let hits = find_hits(&chunk.text, matcher);
                let Some(candidate) = filter_chunk(chunk, matcher.region_id(), &hits, self.config.min_distinct) else {
                    continue;
                };
                let order = CorpusOrder(job.file, job.line.ordinal, chunk.chunk_index);
                if let Some(dedup) = self.dedup {
                    dedup.register(region, &candidate.chunk.text, order);
                }
                // a closed channel means the writer failed; the failure is
                // already recorded
                let _ = region_txs[region].send(Spilled { order, candidate });
            }
        }
    }
}

struct RegionOutput {
    written: u64,
    duplicates: u64,
}

fn finalize_region(
    config: &ExtractionConfig,
    region: usize,
    region_id: &str,
    spill: &Path,
    dedup: Option<&DedupTable>,
) -> Result<RegionOutput, PipelineError> {
    let cap = config.target_counts.get(region_id).copied();
    let mut duplicates = 0u64;
    let mut out = JsonlWriter::create(candidates_path(&config.output_dir, region_id))?;
    let mut keep = |record: &Spilled| {
        let first = dedup.is_none_or(|d| d.is_first(region, &record.candidate.chunk.text, record.order));
        if !first {
            duplicates += 1;
        }
        first
    };

    if config.stable_order || cap.is_some() {
        // sorting needs the retained set in memory; it is small next to the corpus
        let mut kept = Vec::new();
        for record in read_records::<Spilled>(spill)? {
            let (_, record) = record?;
            if keep(&record) {
                kept.push(record);
            }
        }
        kept.sort_by_key(|r| r.order);
        kept.truncate(cap.unwrap_or(usize::MAX));
        for record in &kept {
            out.write(&record.candidate)?;
        }
    } else {
        for record in read_records::<Spilled>(spill)? {
            let (_, record) = record?;
            if keep(&record) {
                out.write(&record.candidate)?;
            }
        }
    }
    Ok(RegionOutput {
        written: out.finish()?,
        duplicates,
    })
}

fn write_stats(dir: &Path, stats: &RunStats) -> Result<(), CorpusError> {
    let path = dir.join(STATS_FILE);
    let body = serde_json::to_vec_pretty(stats).expect("stats serialize");
    std::fs::write(&path, body).map_err(|source| CorpusError::Write { path, source })
}

/// Reads a stats file written by [`run_extraction`].
pub fn read_stats(run_dir: &Path) -> Result<RunStats, CorpusError> {
    let path = run_dir.join(STATS_FILE);
    let body = std::fs::read(&path).map_err(|source| CorpusError::Read {
        path: path.clone(),
        source,
    })?;
    serde_json::from_slice(&body).map_err(|source| CorpusError::Record { path, line: 1, source })
}
