//! File output. Sample streams from parallel chains go through one writer
//! thread; lines are flushed in small batches so an interrupted run leaves
//! readable files.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Sender};
use std::thread::{self, JoinHandle};

use anyhow::{Context, Result};
use serde::Serialize;

const FLUSH_EVERY: usize = 32;

/// One JSON line for one of the writer's files.
pub type Line = (usize, String);

pub struct SampleWriter {
    pub tx: Sender<Line>,
    handle: JoinHandle<io::Result<()>>,
}

impl SampleWriter {
    pub fn spawn(paths: Vec<PathBuf>) -> Result<Self> {
        let mut files = paths
            .iter()
            .map(|p| File::create(p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let (tx, rx) = mpsc::channel::<Line>();
        let handle = thread::spawn(move || {
            let mut pending = vec![0usize; files.len()];
            for (f, line) in rx {
                files[f].write_all(line.as_bytes())?;
                files[f].write_all(b"\n")?;
                pending[f] += 1;
                if pending[f] >= FLUSH_EVERY {
                    files[f].flush()?;
                    pending[f] = 0;
                }
            }
            files.iter_mut().try_for_each(|f| f.flush())
        });
        Ok(Self { tx, handle })
    }

    /// Waits for every queued line to reach disk.
    pub fn finish(self) -> Result<()> {
        drop(self.tx);
        self.handle
            .join()
            .map_err(|_| anyhow::anyhow!("sample writer panicked"))?
            .context("writing samples")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV writer on a new file.
pub fn csv_file(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Empty cell for missing values.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn samples_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("samples_chain{chain}.jsonl"))
}
