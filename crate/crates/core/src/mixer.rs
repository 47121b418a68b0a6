//! Hybrid dataset assembly: seeded samples from a general pool and a
//! cultural pool, merged into one trainer-facing JSONL file.
//!
//! Samples are prefixes of seeded permutations, so a larger cultural count
//! always contains every smaller one drawn with the same seed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus_io::{open_lines, CorpusError, JsonlWriter};
use crate::gen::record::InstructionRecord;

pub const DEFAULT_GENERAL_COUNT: usize = 50_000;
pub const DEFAULT_CULTURAL_COUNT: usize = 20_000;
pub const DEFAULT_SWEEP_STEP: usize = 2_500;
pub const DEFAULT_SEED: u64 = 42;

const GENERAL_STREAM: u64 = 0;
const CULTURAL_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    General,
    Cultural,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::General => "general",
            Origin::Cultural => "cultural",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    ChatJsonl,
    PromptCompletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    pub general_source: PathBuf,
    pub cultural_source: PathBuf,
    pub general_count: usize,
    pub cultural_count: usize,
    pub seed: u64,
    pub shuffle_output: bool,
    /// Accept pools smaller than the requested counts instead of failing.
    pub allow_short: bool,
    pub output: PathBuf,
    pub format: ExportFormat,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            general_source: PathBuf::new(),
            cultural_source: PathBuf::new(),
            general_count: DEFAULT_GENERAL_COUNT,
            cultural_count: DEFAULT_CULTURAL_COUNT,
            seed: DEFAULT_SEED,
            shuffle_output: true,
            allow_short: false,
            output: PathBuf::from("mix.jsonl"),
            format: ExportFormat::ChatJsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub spec: MixSpec,
    pub actual_general: usize,
    pub actual_cultural: usize,
    pub general_pool_size: usize,
    pub cultural_pool_size: usize,
    pub output_path: PathBuf,
    /// `sha256:<hex>` of the output file as written.
    pub content_digest: String,
    pub created_at: String,
}

#[derive(Debug, Error)]
pub enum MixError {
    #[error(transparent)]
    Io(#[from] CorpusError),
    #[error("{}:{line}: {message}", path.display())]
    Schema { path: PathBuf, line: u64, message: String },
    #[error("{origin} pool has {available} records, {requested} requested ({} short)", requested - available)]
    Short {
        origin: Origin,
        requested: usize,
        available: usize,
    },
    #[error("invalid mix spec: {0}")]
    Spec(String),
}

impl MixError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            MixError::Io(e) => Some(e.path()),
            MixError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// One line of an input pool.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolRecord {
    /// Output of the generation stage.
    Instruction(InstructionRecord),
    /// An object with a `conversations` array of `{from, value}` turns, such
    /// as general-purpose instruction data or a previous export.
    Chat(Map<String, Value>),
}

impl PoolRecord {
    pub fn from_value(value: Value) -> Result<Self, String> {
        let Value::Object(map) = value else {
            return Err("record is not a JSON object".into());
        };
        if let Some(conversations) = map.get("conversations") {
            check_conversations(conversations)?;
            return Ok(PoolRecord::Chat(map));
        }
        serde_json::from_value(Value::Object(map))
            .map(PoolRecord::Instruction)
            .map_err(|e| format!("neither a chat record nor an instruction record: {e}"))
    }

    /// Renders the record in `format`, tagging `meta.origin` when given.
    /// Chat records keep their conversations untouched.
    pub fn export(&self, format: ExportFormat, origin: Option<Origin>) -> Result<Value, String> {
        let mut out = match (self, format) {
            (PoolRecord::Instruction(rec), ExportFormat::ChatJsonl) => {
                json!({"conversations": turns(&rec.question, &rec.answer), "meta": provenance(rec)})
            }
            (PoolRecord::Instruction(rec), ExportFormat::PromptCompletion) => {
                json!({"prompt": rec.question, "completion": rec.answer, "meta": provenance(rec)})
            }
            (PoolRecord::Chat(map), ExportFormat::ChatJsonl) => Value::Object(map.clone()),
            (PoolRecord::Chat(map), ExportFormat::PromptCompletion) => {
                let (prompt, completion) = first_exchange(&map["conversations"])
                    .ok_or("conversation has no human turn followed by a gpt turn")?;
                let mut meta = match map.get("meta") {
                    Some(Value::Object(m)) => m.clone(),
                    _ => Map::new(),
                };
                for (k, v) in map {
                    if k != "conversations" && k != "meta" {
                        meta.insert(k.clone(), v.clone());
                    }
                }
                json!({"prompt": prompt, "completion": completion, "meta": meta})
            }
        };
        if let Some(origin) = origin {
            let obj = out.as_object_mut().expect("exports are objects");
            let meta = obj.entry("meta").or_insert_with(|| Value::Object(Map::new()));
            match meta {
                Value::Object(m) => {
                    m.insert("origin".into(), json!(origin));
                }
                _ => return Err("existing meta field is not an object".into()),
            }
        }
        Ok(out)
    }
}

fn turns(question: &str, answer: &str) -> Value {
    json!([{"from": "human", "value": question}, {"from": "gpt", "value": answer}])
}

fn provenance(rec: &InstructionRecord) -> Value {
    let mut meta = match serde_json::to_value(rec).expect("records serialize") {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    meta.remove("question");
    meta.remove("answer");
    Value::Object(meta)
}

fn check_conversations(conversations: &Value) -> Result<(), String> {
    let turns = conversations.as_array().ok_or("conversations is not an array")?;
    if turns.is_empty() {
        return Err("conversations is empty".into());
    }
    for (i, turn) in turns.iter().enumerate() {
        let ok = turn.get("from").is_some_and(Value::is_string) && turn.get("value").is_some_and(Value::is_string);
        if !ok {
            return Err(format!("conversations[{i}] needs string fields from and value"));
        }
    }
    Ok(())
}

fn first_exchange(conversations: &Value) -> Option<(String, String)> {
    let turns = conversations.as_array()?;
    let human = turns.iter().position(|t| t["from"] == "human")?;
    let gpt = turns[human + 1..].iter().find(|t| t["from"] == "gpt")?;
    Some((turns[human]["value"].as_str()?.to_owned(), gpt["value"].as_str()?.to_owned()))
}

/// Converts records to `target`. Fails on the first record that cannot be
/// represented, naming its one-based position.
pub fn convert_format(records: &[PoolRecord], target: ExportFormat) -> Result<Vec<Value>, String> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.export(target, None).map_err(|e| format!("record {}: {e}", i + 1)))
        .collect()
}

/// Question/answer pair recovered from an exported record.
#[derive(Debug, Clone, PartialEq)]
pub struct Imported {
    pub question: String,
    pub answer: String,
    pub meta: Map<String, Value>,
}

impl Imported {
    /// Rebuilds the generated record when the export carried its provenance.
    pub fn instruction(&self) -> Option<InstructionRecord> {
        let mut fields = self.meta.clone();
        fields.remove("origin");
        fields.insert("question".into(), json!(self.question));
        fields.insert("answer".into(), json!(self.answer));
        serde_json::from_value(Value::Object(fields)).ok()
    }
}

/// Reads back a record written in either export format.
pub fn import_record(value: &Value) -> Result<Imported, String> {
    let meta = match value.get("meta") {
        Some(Value::Object(m)) => m.clone(),
        None => Map::new(),
        Some(_) => return Err("meta is not an object".into()),
    };
    let (question, answer) = if let Some(conversations) = value.get("conversations") {
        check_conversations(conversations)?;
        first_exchange(conversations).ok_or("conversation has no human turn followed by a gpt turn")?
    } else {
        let field = |k: &str| value.get(k).and_then(Value::as_str).map(str::to_owned);
        match (field("prompt"), field("completion")) {
            (Some(p), Some(c)) => (p, c),
            _ => return Err("expected conversations or prompt/completion".into()),
        }
    };
    Ok(Imported { question, answer, meta })
}

/// Indices of a uniform sample without replacement: the first `count`
/// entries of a seeded shuffle of `0..pool_size`.
pub fn sample_indices(pool_size: usize, count: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    order.shuffle(&mut rng);
    order.truncate(count);
    order
}

/// Validates every line of a pool against `format` and returns the count.
fn scan_pool(path: &Path, format: ExportFormat) -> Result<usize, MixError> {
    let mut n = 0;
    for_each_record(path, |_, record| {
        record.export(format, None)?;
        n += 1;
        Ok(())
    })?;
    Ok(n)
}

fn for_each_record(
    path: &Path,
    mut f: impl FnMut(usize, PoolRecord) -> Result<(), String>,
) -> Result<(), MixError> {
    let mut index = 0;
    for raw in open_lines(path)? {
        let raw = raw?;
        if raw.bytes.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let schema_err = |message: String| MixError::Schema {
            path: path.to_path_buf(),
            line: raw.ordinal + 1,
            message,
        };
        let value: Value = serde_json::from_slice(&raw.bytes).map_err(|e| schema_err(e.to_string()))?;
        let record = PoolRecord::from_value(value).map_err(schema_err)?;
        f(index, record).map_err(schema_err)?;
        index += 1;
    }
    Ok(())
}

/// Exported records at the given pool indices, in pool order.
fn collect(path: &Path, wanted: &BTreeSet<usize>, format: ExportFormat, origin: Origin) -> Result<Vec<(usize, Value)>, MixError> {
    let mut out = Vec::with_capacity(wanted.len());
    for_each_record(path, |i, record| {
        if wanted.contains(&i) {
            out.push((i, record.export(format, Some(origin))?));
        }
        Ok(())
    })?;
    Ok(out)
}

fn clamp(origin: Origin, requested: usize, available: usize, allow_short: bool) -> Result<usize, MixError> {
    if requested <= available {
        return Ok(requested);
    }
    if !allow_short {
        return Err(MixError::Short {
            origin,
            requested,
            available,
        });
    }
    log::warn!("{origin} pool has {available} records; using all of them instead of {requested}");
    Ok(available)
}

/// Pools read once and reused across every point of a sweep.
struct Prepared {
    general: Vec<Value>,
    general_pool: usize,
    /// Cultural records with their rank in the seeded permutation.
    cultural: Vec<(usize, usize, Value)>,
    cultural_pool: usize,
}

fn prepare(spec: &MixSpec, general_count: usize, max_cultural: usize) -> Result<Prepared, MixError> {
    let general_pool = scan_pool(&spec.general_source, spec.format)?;
    let cultural_pool = scan_pool(&spec.cultural_source, spec.format)?;
    let general_count = clamp(Origin::General, general_count, general_pool, spec.allow_short)?;
    let max_cultural = clamp(Origin::Cultural, max_cultural, cultural_pool, spec.allow_short)?;

    let wanted: BTreeSet<usize> = sample_indices(general_pool, general_count, spec.seed, GENERAL_STREAM)
        .into_iter()
        .collect();
    let general = collect(&spec.general_source, &wanted, spec.format, Origin::General)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();

    let order = sample_indices(cultural_pool, max_cultural, spec.seed, CULTURAL_STREAM);
    let mut rank = vec![usize::MAX; cultural_pool];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let wanted: BTreeSet<usize> = order.into_iter().collect();
    let cultural = collect(&spec.cultural_source, &wanted, spec.format, Origin::Cultural)?
        .into_iter()
        .map(|(i, v)| (i, rank[i], v))
        .collect();
    Ok(Prepared {
        general,
        general_pool,
        cultural,
        cultural_pool,
    })
}

fn emit(prepared: &Prepared, spec: &MixSpec, cultural_count: usize, output: &Path) -> Result<MixManifest, MixError> {
    let mut rows: Vec<&Value> = prepared.general.iter().collect();
    let cultural_start = rows.len();
    rows.extend(prepared.cultural.iter().filter(|(_, r, _)| *r < cultural_count).map(|(_, _, v)| v));
    let actual_cultural = rows.len() - cultural_start;
    if spec.shuffle_output {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(SHUFFLE_STREAM);
        rows.shuffle(&mut rng);
    }
    let mut writer = JsonlWriter::create(output)?;
    for row in rows {
        writer.write(row)?;
    }
    writer.finish()?;
    let mut point = spec.clone();
    point.cultural_count = cultural_count;
    point.output = output.to_path_buf();
    let manifest = MixManifest {
        actual_general: prepared.general.len(),
        actual_cultural,
        general_pool_size: prepared.general_pool,
        cultural_pool_size: prepared.cultural_pool,
        output_path: output.to_path_buf(),
        content_digest: file_digest(output)?,
        created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        spec: point,
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

/// SHA-256 of a file's bytes, as `sha256:<hex>`.
pub fn file_digest(path: &Path) -> Result<String, CorpusError> {
    let read_err = |source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut hasher = Sha256::new();
    let mut file = File::open(path).map_err(read_err)?;
    io::copy(&mut file, &mut hasher).map_err(read_err)?;
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(manifest: &MixManifest) -> Result<(), CorpusError> {
    let path = manifest_path(&manifest.output_path);
    let body = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, body).map_err(|source| CorpusError::Write { path, source })
}

pub fn mix_datasets(spec: &MixSpec) -> Result<MixManifest, MixError> {
    let prepared = prepare(spec, spec.general_count, spec.cultural_count)?;
    emit(&prepared, spec, spec.cultural_count, &spec.output)
}

/// Cultural counts visited by a sweep: multiples of `step` up to `max`,
/// with `max` itself appended when it is not a multiple.
pub fn sweep_counts(step: usize, max: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = (0..=max).step_by(step.max(1)).collect();
    if counts.last() != Some(&max) {
        counts.push(max);
    }
    counts
}

/// Output path of one sweep point: `mix.jsonl` becomes `mix.cultural-02500.jsonl`.
pub fn sweep_output(base: &Path, cultural_count: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.cultural-{cultural_count:05}.{}", ext.to_string_lossy()),
        None => format!("{stem}.cultural-{cultural_count:05}"),
    };
    base.with_file_name(name)
}

/// One dataset per cultural count in [`sweep_counts`], all sharing the same
/// general sample and nested cultural samples. `spec.cultural_count` is ignored.
pub fn ratio_sweep(spec: &MixSpec, cultural_step: usize, max_cultural: usize) -> Result<Vec<MixManifest>, MixError> {
    if cultural_step == 0 {
        return Err(MixError::Spec("cultural_step must be at least 1".into()));
    }
    let prepared = prepare(spec, spec.general_count, max_cultural)?;
    let max_cultural = max_cultural.min(prepared.cultural.len());
    sweep_counts(cultural_step, max_cultural)
        .into_iter()
        .map(|count| emit(&prepared, spec, count, &sweep_output(&spec.output, count)))
        .collect()
}
