//! Chunked, checkpointed execution of path-tracking jobs.
//!
//! Start-point indices `0..total` are cut into contiguous chunks. Worker
//! threads trace whole chunks; a single merger owns the checkpoint file and
//! rewrites it (temp file, then rename) after every finished chunk. Results
//! are keyed by chunk id, so merging a chunk twice changes nothing and the
//! final output does not depend on worker count or interruptions.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tracker::{PathResult, PathStatus};

const MAGIC: &[u8; 8] = b"CCSOLVE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum JobError {
    #[error("{paths} paths exceed the path budget of {budget}")]
    BudgetExceeded { paths: u64, budget: u64 },
    #[error("checkpoint I/O failed after chunk {chunk:?}: {source}")]
    Io {
        chunk: Option<u64>,
        #[source]
        source: io::Error,
    },
    #[error("checkpoint is stale or corrupt: {0}")]
    BadCheckpoint(String),
    #[error("job stopped after {completed} of {total} chunks")]
    Interrupted { completed: u64, total: u64 },
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// A source of independent paths addressed by index.
pub trait PathSource: Sync {
    fn total_paths(&self) -> u64;

    fn track(&self, index: u64) -> PathResult;

    fn track_range(&self, range: Range<u64>) -> Vec<PathResult> {
        range.map(|i| self.track(i)).collect()
    }

    /// Identifies the system and start data; hashed into checkpoints.
    fn fingerprint(&self) -> String;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobSpec {
    pub chunk_size: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    pub path_budget: u64,
    /// Emit `chunk <id> done: …` lines on standard error.
    pub progress: bool,
    /// Stop (with [`JobError::Interrupted`]) once this many chunks have been
    /// merged in this run.
    pub stop_after_chunks: Option<u64>,
}

impl Default for JobSpec {
    fn default() -> Self {
        JobSpec {
            chunk_size: 1024,
            workers: 0,
            checkpoint: None,
            resume: false,
            path_budget: 5_000_000,
            progress: false,
            stop_after_chunks: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStats {
    pub total_paths: u64,
    pub converged: u64,
    pub diverged: u64,
    pub failed: u64,
    pub chunks: u64,
}

impl JobStats {
    pub fn attempted(&self) -> u64 {
        self.converged + self.diverged + self.failed
    }
}

#[derive(Clone, Debug)]
pub struct JobOutcome {
    /// Converged path results in path-index order.
    pub results: Vec<PathResult>,
    pub stats: JobStats,
    /// Paths traced in this run per second of wall time (informational).
    pub paths_per_second: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct ChunkRecord {
    id: u64,
    converged: u64,
    diverged: u64,
    failed: u64,
    results: Vec<PathResult>,
}

fn chunk_range(id: u64, chunk: u64, total: u64) -> Range<u64> {
    id * chunk..((id + 1) * chunk).min(total)
}

fn job_hash(src: &dyn PathSource, spec: &JobSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(src.fingerprint().as_bytes());
    h.update(src.total_paths().to_le_bytes());
    h.update(spec.chunk_size.to_le_bytes());
    h.finalize().into()
}

fn run_chunk(src: &dyn PathSource, id: u64, spec: &JobSpec, total: u64) -> ChunkRecord {
    let results = src.track_range(chunk_range(id, spec.chunk_size, total));
    let count = |s| results.iter().filter(|r| r.status == s).count() as u64;
    ChunkRecord {
        id,
        converged: count(PathStatus::Converged),
        diverged: count(PathStatus::Diverged),
        failed: count(PathStatus::Failed),
        results: results
            .into_iter()
            .filter(|r| r.status == PathStatus::Converged)
            .collect(),
    }
}

/// Runs (or resumes) a job to completion.
pub fn run_job(src: &dyn PathSource, spec: &JobSpec) -> Result<JobOutcome, JobError> {
    let total = src.total_paths();
    if total > spec.path_budget {
        return Err(JobError::BudgetExceeded {
            paths: total,
            budget: spec.path_budget,
        });
    }
    let chunk = spec.chunk_size.max(1);
    let spec = JobSpec {
        chunk_size: chunk,
        ..spec.clone()
    };
    let nchunks = total.div_ceil(chunk);
    let hash = job_hash(src, &spec);

    let mut done: BTreeMap<u64, ChunkRecord> = BTreeMap::new();
    if let (Some(path), true) = (&spec.checkpoint, spec.resume) {
        if path.exists() {
            for rec in read_checkpoint(path, &hash)? {
                if rec.id >= nchunks {
                    return Err(JobError::BadCheckpoint(format!("chunk id {} out of range", rec.id)));
                }
                done.insert(rec.id, rec);
            }
        }
    }
    let pending: Vec<u64> = (0..nchunks).filter(|id| !done.contains_key(id)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| JobError::Pool(e.to_string()))?;
    let cancel = AtomicBool::new(false);
    let started = Instant::now();
    let mut traced = 0u64;
    let mut merged_now = 0u64;
    let mut failure: Option<JobError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<ChunkRecord>();
        let pending = &pending;
        let cancel = &cancel;
        let spec_ref = &spec;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, &id| {
                    if cancel.load(Ordering::Relaxed) {
                        return;
                    }
                    let rec = run_chunk(src, id, spec_ref, total);
                    let _ = tx.send(rec);
                });
            });
        });
        for rec in rx {
            if failure.is_some() {
                continue;
            }
            traced += rec.converged + rec.diverged + rec.failed;
            if spec.progress {
                eprintln!(
                    "chunk {} done: c={} d={} f={}",
                    rec.id, rec.converged, rec.diverged, rec.failed
                );
            }
            let id = rec.id;
            done.insert(id, rec);
            merged_now += 1;
            if let Some(path) = &spec.checkpoint {
                if let Err(source) = write_checkpoint(path, &hash, done.values()) {
                    failure = Some(JobError::Io {
                        chunk: Some(id),
                        source,
                    });
                    cancel.store(true, Ordering::Relaxed);
                    continue;
                }
            }
            if spec.stop_after_chunks.is_some_and(|s| merged_now >= s) && (done.len() as u64) < nchunks {
                failure = Some(JobError::Interrupted {
                    completed: done.len() as u64,
                    total: nchunks,
                });
                cancel.store(true, Ordering::Relaxed);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(path) = &spec.checkpoint {
        // an empty job (or a fully resumed one) still leaves a valid file
        write_checkpoint(path, &hash, done.values()).map_err(|source| JobError::Io { chunk: None, source })?;
    }

    let mut stats = JobStats {
        total_paths: total,
        chunks: nchunks,
        ..Default::default()
    };
    let mut results = Vec::new();
    for rec in done.into_values() {
        stats.converged += rec.converged;
        stats.diverged += rec.diverged;
        stats.failed += rec.failed;
        results.extend(rec.results);
    }
    let secs = started.elapsed().as_secs_f64();
    Ok(JobOutcome {
        results,
        stats,
        paths_per_second: if secs > 0.0 { traced as f64 / secs } else { 0.0 },
    })
}

fn encode_record(rec: &ChunkRecord, out: &mut Vec<u8>) {
    let mut body = Vec::new();
    body.extend(rec.id.to_le_bytes());
    body.extend(rec.converged.to_le_bytes());
    body.extend(rec.diverged.to_le_bytes());
    body.extend(rec.failed.to_le_bytes());
    body.extend((rec.results.len() as u64).to_le_bytes());
    for r in &rec.results {
        body.push(match r.status {
            PathStatus::Converged => 0,
            PathStatus::Diverged => 1,
            PathStatus::Failed => 2,
        });
        body.extend(r.residual.to_le_bytes());
        body.extend(r.condition_estimate.to_le_bytes());
        body.extend((r.steps_taken as u64).to_le_bytes());
        body.extend((r.endpoint.len() as u64).to_le_bytes());
        for z in &r.endpoint {
            body.extend(z.re.to_le_bytes());
            body.extend(z.im.to_le_bytes());
        }
    }
    out.extend((body.len() as u64).to_le_bytes());
    out.extend(Sha256::digest(&body));
    out.extend(body);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], JobError> {
        if self.buf.len() - self.pos < n {
            return Err(JobError::BadCheckpoint("truncated record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64, JobError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, JobError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_record(body: &[u8]) -> Result<ChunkRecord, JobError> {
    let mut r = Reader { buf: body, pos: 0 };
    let id = r.u64()?;
    let converged = r.u64()?;
    let diverged = r.u64()?;
    let failed = r.u64()?;
    let count = r.u64()?;
    let mut results = Vec::new();
    for _ in 0..count {
        let status = match r.take(1)?[0] {
            0 => PathStatus::Converged,
            1 => PathStatus::Diverged,
            2 => PathStatus::Failed,
            s => return Err(JobError::BadCheckpoint(format!("unknown path status {s}"))),
        };
        let residual = r.f64()?;
        let condition_estimate = r.f64()?;
        let steps_taken = r.u64()? as usize;
        let dim = r.u64()?;
        if dim > 1 << 20 {
            return Err(JobError::BadCheckpoint("implausible dimension".into()));
        }
        let mut endpoint = Vec::with_capacity(dim as usize);
        for _ in 0..dim {
            let re = r.f64()?;
            let im = r.f64()?;
            endpoint.push(Complex64::new(re, im));
        }
        results.push(PathResult {
            status,
            endpoint,
            residual,
            condition_estimate,
            steps_taken,
        });
    }
    if r.pos != body.len() {
        return Err(JobError::BadCheckpoint("trailing bytes in record".into()));
    }
    Ok(ChunkRecord {
        id,
        converged,
        diverged,
        failed,
        results,
    })
}

fn write_checkpoint<'a>(
    path: &Path,
    hash: &[u8; 32],
    records: impl Iterator<Item = &'a ChunkRecord>,
) -> io::Result<()> {
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    buf.extend(hash);
    for rec in records {
        encode_record(rec, &mut buf);
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn read_checkpoint(path: &Path, hash: &[u8; 32]) -> Result<Vec<ChunkRecord>, JobError> {
    let buf = fs::read(path).map_err(|source| JobError::Io { chunk: None, source })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(JobError::BadCheckpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(JobError::BadCheckpoint(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    if r.take(32)? != hash {
        return Err(JobError::BadCheckpoint(
            "written for a different system or job layout".into(),
        ));
    }
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let len = r.u64()? as usize;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let body = r.take(len)?;
        if Sha256::digest(body).as_slice() != digest {
            return Err(JobError::BadCheckpoint("record digest mismatch".into()));
        }
        out.push(decode_record(body)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Paths whose outcome is a pure function of the index.
    struct Synthetic(u64);

    impl PathSource for Synthetic {
        fn total_paths(&self) -> u64 {
            self.0
        }
        fn track(&self, i: u64) -> PathResult {
            let status = match i % 3 {
                0 => PathStatus::Converged,
                1 => PathStatus::Diverged,
                _ => PathStatus::Failed,
            };
            PathResult {
                status,
                endpoint: vec![Complex64::new(i as f64, -(i as f64))],
                residual: 1e-15,
                condition_estimate: 2.0,
                steps_taken: i as usize,
            }
        }
        fn fingerprint(&self) -> String {
            format!("synthetic {}", self.0)
        }
    }

    #[test]
    fn counts_add_up() {
        let spec = JobSpec {
            chunk_size: 7,
            workers: 2,
            ..Default::default()
        };
        let out = run_job(&Synthetic(100), &spec).unwrap();
        assert_eq!(out.stats.attempted(), 100);
        assert_eq!(out.stats.chunks, 15);
        assert_eq!(out.stats.converged, 34);
        assert_eq!(out.results.len(), 34);
        assert!(out.results.windows(2).all(|w| w[0].endpoint[0].re < w[1].endpoint[0].re));
    }

    #[test]
    fn record_round_trip() {
        let rec = run_chunk(&Synthetic(10), 0, &JobSpec::default(), 10);
        let mut buf = Vec::new();
        encode_record(&rec, &mut buf);
        assert_eq!(decode_record(&buf[40..]).unwrap(), rec);
        assert!(decode_record(&buf[40..buf.len() - 1]).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let spec = JobSpec {
            path_budget: 10,
            ..Default::default()
        };
        assert!(matches!(
            run_job(&Synthetic(11), &spec),
            Err(JobError::BudgetExceeded { paths: 11, budget: 10 })
        ));
    }
}
