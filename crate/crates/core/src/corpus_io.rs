//! Streaming corpus readers and line-delimited record writers.
//!
//! Corpus files are JSON Lines, optionally gzip- or zstd-compressed. Records
//! are pulled one line at a time so memory stays proportional to the largest
//! single record rather than the file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_TEXT_FIELD: &str = "text";
/// Records carrying this field use it as their document id.
pub const ID_FIELD: &str = "id";
/// Free-form metadata object carried through from the source record.
pub const META_FIELD: &str = "meta";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {source}", path.display())]
    Record {
        path: PathBuf,
        line: u64,
        source: serde_json::Error,
    },
}

impl CorpusError {
    pub fn path(&self) -> &Path {
        match self {
            CorpusError::Read { path, .. }
            | CorpusError::Write { path, .. }
            | CorpusError::Record { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    None,
    Gzip,
    Zstd,
}

impl Compression {
    /// Detection is by extension only: `.zst` / `.zstd` and `.gz`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("zst") | Some("zstd") => Compression::Zstd,
            Some("gz") => Compression::Gzip,
            _ => Compression::None,
        }
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

/// A file or directory of JSONL corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSource {
    pub path: PathBuf,
    /// Overrides extension-based detection for every file in the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<Compression>,
    #[serde(default = "default_text_field")]
    pub text_field: String,
}

fn default_text_field() -> String {
    DEFAULT_TEXT_FIELD.to_string()
}

impl CorpusSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        CorpusSource {
            path: path.into(),
            compression: None,
            text_field: default_text_field(),
        }
    }

    /// Enumerates the files of this source. Directories are walked
    /// recursively and their files returned in lexicographic path order.
    pub fn files(&self) -> Result<Vec<SourceFile>, CorpusError> {
        let meta = std::fs::metadata(&self.path).map_err(|source| CorpusError::Read {
            path: self.path.clone(),
            source,
        })?;
        let mut paths = Vec::new();
        if meta.is_dir() {
            for entry in walkdir::WalkDir::new(&self.path).sort_by_file_name() {
                let entry = entry.map_err(|e| CorpusError::Read {
                    path: e.path().map(Path::to_path_buf).unwrap_or_else(|| self.path.clone()),
                    source: e.into(),
                })?;
                if entry.file_type().is_file() {
                    paths.push(entry.into_path());
                }
            }
            paths.sort();
        } else {
            paths.push(self.path.clone());
        }
        Ok(paths
            .into_iter()
            .map(|path| SourceFile {
                compression: self.compression.unwrap_or_else(|| Compression::from_path(&path)),
                label: path.to_string_lossy().into_owned(),
                text_field: self.text_field.clone(),
                path,
            })
            .collect())
    }
}

/// A single file resolved from a [`CorpusSource`].
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: PathBuf,
    /// Prefix of generated document ids.
    pub label: String,
    pub compression: Compression,
    pub text_field: String,
}

impl SourceFile {
    pub fn open(&self) -> Result<LineReader, CorpusError> {
        let reader = open_decoded(&self.path, self.compression)?;
        Ok(LineReader {
            path: self.path.clone(),
            reader,
            ordinal: 0,
            done: false,
        })
    }
}

fn open_decoded(path: &Path, compression: Compression) -> Result<Box<dyn BufRead + Send>, CorpusError> {
    let read_err = |source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(read_err)?;
    Ok(match compression {
        Compression::None => Box::new(BufReader::with_capacity(1 << 16, file)),
        Compression::Gzip => Box::new(BufReader::with_capacity(
            1 << 16,
            flate2::read::MultiGzDecoder::new(file),
        )),
        Compression::Zstd => {
            let decoder = zstd::stream::read::Decoder::new(file).map_err(read_err)?;
            Box::new(BufReader::with_capacity(1 << 16, decoder))
        }
    })
}

/// One raw line of a corpus file. `ordinal` is the zero-based line index.
#[derive(Debug, Clone)]
pub struct RawLine {
    pub ordinal: u64,
    pub bytes: Vec<u8>,
}

/// Iterator over the raw lines of one (possibly compressed) file.
pub struct LineReader {
    path: PathBuf,
    reader: Box<dyn BufRead + Send>,
    ordinal: u64,
    done: bool,
}

impl Iterator for LineReader {
    type Item = Result<RawLine, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut bytes = Vec::new();
        match self.reader.read_until(b'\n', &mut bytes) {
            Ok(0) => {
                self.done = true;
                None
            }
            Ok(_) => {
                if bytes.last() == Some(&b'\n') {
                    bytes.pop();
                    if bytes.last() == Some(&b'\r') {
                        bytes.pop();
                    }
                }
                let ordinal = self.ordinal;
                self.ordinal += 1;
                Some(Ok(RawLine { ordinal, bytes }))
            }
            Err(source) => {
                self.done = true;
                Some(Err(CorpusError::Read {
                    path: self.path.clone(),
                    source,
                }))
            }
        }
    }
}

/// Why a corpus line did not yield a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    InvalidUtf8,
    MalformedJson,
    MissingTextField,
}

/// Decodes one corpus line. Blank lines yield `Ok(None)` and are not
/// counted as skips.
pub fn parse_document(
    line: &[u8],
    label: &str,
    ordinal: u64,
    text_field: &str,
) -> Result<Option<Document>, SkipReason> {
    let line = std::str::from_utf8(line).map_err(|_| SkipReason::InvalidUtf8)?;
    if line.trim().is_empty() {
        return Ok(None);
    }
    let value: Value = serde_json::from_str(line).map_err(|_| SkipReason::MalformedJson)?;
    let Value::Object(mut obj) = value else {
        return Err(SkipReason::MalformedJson);
    };
    let text = match obj.remove(text_field) {
        Some(Value::String(s)) => s,
        _ => return Err(SkipReason::MissingTextField),
    };
    let doc_id = match obj.get(ID_FIELD) {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("{label}#{ordinal}"),
    };
    let meta = match obj.remove(META_FIELD) {
        Some(Value::Object(m)) => m,
        _ => Map::new(),
    };
    Ok(Some(Document { doc_id, text, meta }))
}

/// Counters kept while reading a source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub lines: u64,
    pub documents: u64,
    pub bytes: u64,
    pub skipped_invalid_utf8: u64,
    pub skipped_malformed_json: u64,
    pub skipped_missing_text: u64,
}

impl ReadStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_invalid_utf8 + self.skipped_malformed_json + self.skipped_missing_text
    }

    pub fn record_skip(&mut self, reason: SkipReason) {
        match reason {
            SkipReason::InvalidUtf8 => self.skipped_invalid_utf8 += 1,
            SkipReason::MalformedJson => self.skipped_malformed_json += 1,
            SkipReason::MissingTextField => self.skipped_missing_text += 1,
        }
    }
}

/// Documents of a source in file order. Per-line decoding failures are
/// counted in [`DocumentStream::stats`]; I/O failures end the stream with an
/// error.
pub struct DocumentStream {
    files: std::vec::IntoIter<SourceFile>,
    current: Option<(SourceFile, LineReader)>,
    stats: ReadStats,
}

impl DocumentStream {
    pub fn stats(&self) -> ReadStats {
        self.stats
    }
}

impl Iterator for DocumentStream {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.current.is_none() {
                let file = self.files.next()?;
                match file.open() {
                    Ok(lines) => self.current = Some((file, lines)),
                    Err(e) => return Some(Err(e)),
                }
            }
            let (file, lines) = self.current.as_mut().expect("current file");
            match lines.next() {
                None => self.current = None,
                Some(Err(e)) => {
                    self.current = None;
                    self.files = Vec::new().into_iter();
                    return Some(Err(e));
                }
                Some(Ok(raw)) => {
                    self.stats.lines += 1;
                    self.stats.bytes += raw.bytes.len() as u64;
                    match parse_document(&raw.bytes, &file.label, raw.ordinal, &file.text_field) {
                        Ok(Some(doc)) => {
                            self.stats.documents += 1;
                            return Some(Ok(doc));
                        }
                        Ok(None) => {}
                        Err(reason) => self.stats.record_skip(reason),
                    }
                }
            }
        }
    }
}

/// Opens a streaming reader over every file of `source`.
///
/// Fails immediately when the source path cannot be read.
pub fn read_documents(source: &CorpusSource) -> Result<DocumentStream, CorpusError> {
    let files = source.files()?;
    // Surface unreadable files up front rather than halfway through a run.
    for file in &files {
        File::open(&file.path).map_err(|source| CorpusError::Read {
            path: file.path.clone(),
            source,
        })?;
    }
    Ok(DocumentStream {
        files: files.into_iter(),
        current: None,
        stats: ReadStats::default(),
    })
}

enum Sink {
    Plain(BufWriter<File>),
    Zstd(zstd::stream::write::Encoder<'static, BufWriter<File>>),
}

/// Serializes records as JSON Lines. Paths ending in `.zst` are written
/// zstd-compressed.
pub struct JsonlWriter {
    path: PathBuf,
    sink: Option<Sink>,
    count: u64,
    line: Vec<u8>,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref().to_path_buf();
        let write_err = |source| CorpusError::Write {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(write_err)?;
        }
        let file = BufWriter::with_capacity(1 << 16, File::create(&path).map_err(write_err)?);
        let sink = match Compression::from_path(&path) {
            Compression::Zstd => Sink::Zstd(zstd::stream::write::Encoder::new(file, 3).map_err(write_err)?),
            // gzip output is not offered; anything else is written plain
            _ => Sink::Plain(file),
        };
        Ok(JsonlWriter {
            path,
            sink: Some(sink),
            count: 0,
            line: Vec::with_capacity(4096),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn write<T: Serialize + ?Sized>(&mut self, record: &T) -> Result<(), CorpusError> {
        self.line.clear();
        serde_json::to_writer(&mut self.line, record).map_err(|e| CorpusError::Write {
            path: self.path.clone(),
            source: e.into(),
        })?;
        self.line.push(b'\n');
        let result = match self.sink.as_mut().expect("writer used after finish") {
            Sink::Plain(w) => w.write_all(&self.line),
            Sink::Zstd(w) => w.write_all(&self.line),
        };
        result.map_err(|source| CorpusError::Write {
            path: self.path.clone(),
            source,
        })?;
        self.count += 1;
        Ok(())
    }

    /// Flushes all buffered output and returns the number of lines written.
    pub fn finish(mut self) -> Result<u64, CorpusError> {
        let result = match self.sink.take().expect("writer used after finish") {
            Sink::Plain(mut w) => w.flush(),
            Sink::Zstd(w) => w.finish().and_then(|mut inner| inner.flush()),
        };
        result.map_err(|source| CorpusError::Write {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.count)
    }
}

/// Writes every record to `path`, one JSON object per line.
pub fn write_records<T, I>(path: impl AsRef<Path>, records: I) -> Result<u64, CorpusError>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut writer = JsonlWriter::create(path)?;
    for record in records {
        writer.write(&record)?;
    }
    writer.finish()
}

/// Typed JSONL reader. Blank lines are ignored; any other line that fails to
/// deserialize is an error carrying its one-based line number.
pub struct RecordReader<T> {
    path: PathBuf,
    lines: LineReader,
    _marker: std::marker::PhantomData<fn() -> T>,
}

impl<T: DeserializeOwned> Iterator for RecordReader<T> {
    type Item = Result<(u64, T), CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(raw) => raw,
                Err(e) => return Some(Err(e)),
            };
            if raw.bytes.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let line = raw.ordinal + 1;
            return Some(
                serde_json::from_slice(&raw.bytes)
                    .map(|record| (line, record))
                    .map_err(|source| CorpusError::Record {
                        path: self.path.clone(),
                        line,
                        source,
                    }),
            );
        }
    }
}

pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<RecordReader<T>, CorpusError> {
    let path = path.as_ref().to_path_buf();
    let lines = open_lines(&path)?;
    Ok(RecordReader {
        path,
        lines,
        _marker: std::marker::PhantomData,
    })
}

/// Raw line reader with compression detected from the extension.
pub fn open_lines(path: &Path) -> Result<LineReader, CorpusError> {
    let reader = open_decoded(path, Compression::from_path(path))?;
    Ok(LineReader {
        path: path.to_path_buf(),
        reader,
        ordinal: 0,
        done: false,
    })
}

/// Reads a whole (decompressed) file into memory. Only used for small
/// artifacts such as digests of emitted datasets.
pub fn read_all(path: &Path) -> Result<Vec<u8>, CorpusError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| CorpusError::Read {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}
