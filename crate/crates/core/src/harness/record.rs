//! Step-by-step run records: the substrate that lets every stopping rule
//! be replayed against identical models. Serialized as JSON Lines with a
//! metadata header followed by one step object per line.

use crate::error::{Error, Result};
use crate::model::{Dataset, GPHyperparams, KernelSpec, Link, PosteriorGP};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Hyperparameters as logged: log-space variances, raw lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamsRecord {
    pub mean: f64,
    pub log_variance: f64,
    pub log_noise: f64,
    pub lengthscales: Vec<f64>,
}

impl HyperparamsRecord {
    pub fn from_hyperparams(h: &GPHyperparams) -> Self {
        HyperparamsRecord {
            mean: h.mean_constant,
            log_variance: h.kernel.variance.max(1e-300).ln(),
            log_noise: h.noise_variance.max(1e-300).ln(),
            lengthscales: h.kernel.lengthscales.clone(),
        }
    }

    pub fn to_hyperparams(&self, link: Link) -> Result<GPHyperparams> {
        GPHyperparams::new(
            self.mean,
            KernelSpec::new(self.log_variance.exp(), self.lengthscales.clone())?,
            self.log_noise.exp(),
            link,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub hyperparams: HyperparamsRecord,
    pub incumbent: Vec<f64>,
    pub acq_value: Option<f64>,
}

/// How the surrogate hyperparameters were obtained at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ModelMode {
    /// MAP refit each step (from t >= 2), with this many restarts.
    MapFit { restarts: usize },
    /// Oracle hyperparameters held fixed for the whole run.
    Fixed { hyperparams: HyperparamsRecord },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub seed: u64,
    pub objective: String,
    pub objective_seed: u64,
    pub dim: usize,
    pub noise_variance: f64,
    pub budget: usize,
    pub initial: usize,
    pub link: Link,
    pub model: ModelMode,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    /// Observations up to and including step t, in query order.
    pub fn data_prefix(&self, t: usize) -> Result<Dataset> {
        if t == 0 || t > self.steps.len() {
            return Err(Error::Record(format!(
                "prefix {t} outside the recorded range 1..={}",
                self.steps.len()
            )));
        }
        Dataset::new(
            self.steps[..t].iter().map(|s| s.x.clone()).collect(),
            self.steps[..t].iter().map(|s| s.y).collect(),
        )
    }

    /// Rebuild the step-t posterior from logged hyperparameters and the
    /// data prefix.
    pub fn posterior_at(&self, t: usize) -> Result<PosteriorGP> {
        let hyper = self.steps[t - 1].hyperparams.to_hyperparams(self.meta.link)?;
        PosteriorGP::new(hyper, self.data_prefix(t)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.meta.valid {
            return Err(Error::Record(format!("run {} is flagged invalid", self.meta.run_id)));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::Record(format!(
                    "steps not contiguous: entry {i} has t = {}",
                    s.t
                )));
            }
        }
        if self.steps.len() != self.meta.budget {
            return Err(Error::Record(format!(
                "expected {} steps, found {}",
                self.meta.budget,
                self.steps.len()
            )));
        }
        Ok(())
    }

    /// Serialize as JSON Lines: metadata header, then one step per line.
    pub fn write_jsonl(&self, writer: &mut impl Write) -> Result<()> {
        let header = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Record(format!("header serialization failed: {e}")))?;
        writeln!(writer, "{header}")?;
        for step in &self.steps {
            let line = serde_json::to_string(step)
                .map_err(|e| Error::Record(format!("step serialization failed: {e}")))?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Record("empty record file".into()))??;
        let meta: RunMeta = serde_json::from_str(&header)
            .map_err(|e| Error::Record(format!("bad header line: {e}")))?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let step: StepRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Record(format!("bad step line: {e}")))?;
            steps.push(step);
        }
        Ok(RunRecord { meta, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_jsonl(file)
    }
}

/// Load every *.jsonl record under a directory, sorted by run id.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_outcome = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("outcomes-"));
        if path.extension().is_some_and(|e| e == "jsonl") && !is_outcome {
            records.push(RunRecord::load(&path)?);
        }
    }
    records.sort_by(|a, b| a.meta.run_id.cmp(&b.meta.run_id));
    if records.is_empty() {
        return Err(Error::Record(format!("no .jsonl records under {}", dir.display())));
    }
    Ok(records)
}
