//! Batches of experiments, including the outer x inner cascade table.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, RunReport};
use crate::crypto::{CascadePair, CellStatus, SymmetricAlgorithm};
use crate::datagen::{CipherSpec, Game};

#[derive(Clone, Debug)]
pub enum MatrixEntry {
    Run(ExperimentConfig),
    Skip {
        id: String,
        cascade: Option<CascadePair>,
        reason: String,
    },
}

impl MatrixEntry {
    fn id(&self) -> &str {
        match self {
            MatrixEntry::Run(c) => &c.id,
            MatrixEntry::Skip { id, .. } => id,
        }
    }

    fn cascade(&self) -> Option<CascadePair> {
        match self {
            MatrixEntry::Run(c) => match c.dataset {
                Game::Single {
                    cipher: CipherSpec::Cascade { outer, inner },
                    ..
                } => Some(CascadePair::new(outer, inner)),
                _ => None,
            },
            MatrixEntry::Skip { cascade, .. } => *cascade,
        }
    }
}

fn cell_id(base: &str, pair: CascadePair) -> String {
    format!("{base}-{}-over-{}", pair.outer.name(), pair.inner.name())
}

/// All 25 outer/inner combinations built from `base`; excluded cells become skips.
///
/// The plaintext length is raised to the smallest value both layers accept.
pub fn cascade_entries(base: &ExperimentConfig) -> Vec<MatrixEntry> {
    let (plaintext_len, include_iv) = match base.dataset {
        Game::Single {
            plaintext_len,
            include_iv,
            ..
        } => (plaintext_len, include_iv),
        _ => (crate::datagen::DEFAULT_PLAINTEXT_LEN, true),
    };
    let mut out = Vec::with_capacity(25);
    for inner in SymmetricAlgorithm::ALL {
        for outer in SymmetricAlgorithm::ALL {
            let pair = CascadePair::new(outer, inner);
            let id = cell_id(&base.id, pair);
            match pair.status() {
                CellStatus::Accepted => {
                    let mut c = base.clone();
                    c.id = id;
                    c.out_dir = None;
                    c.dataset = Game::Single {
                        cipher: CipherSpec::Cascade { outer, inner },
                        plaintext_len: pair.aligned_plaintext_len(plaintext_len),
                        include_iv,
                    };
                    out.push(MatrixEntry::Run(c));
                }
                status => out.push(MatrixEntry::Skip {
                    id,
                    cascade: Some(pair),
                    reason: format!("{status:?}"),
                }),
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CellOutcome {
    Done { report: Box<RunReport> },
    Failed { error: String },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadePair>,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellResult {
    fn short(&self) -> String {
        match &self.outcome {
            CellOutcome::Done { report } => format!(
                "{:.2}% ({}){}",
                100.0 * report.accuracy,
                report.p_value,
                if report.reject { "*" } else { "" }
            ),
            CellOutcome::Failed { .. } => "ERROR".into(),
            CellOutcome::Skipped { .. } => "skip".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub cells: Vec<CellResult>,
}

impl MatrixReport {
    /// One row per experiment.
    pub fn render_list(&self) -> String {
        let w = self.cells.iter().map(|c| c.id.len()).chain([10]).max().unwrap();
        let mut out = format!("{:<w$}  result\n", "experiment");
        for c in &self.cells {
            let _ = writeln!(out, "{:<w$}  {}", c.id, c.short());
        }
        out
    }

    /// Rows are inner ciphers, columns outer ciphers; `*` marks rejection.
    pub fn render_cascade_table(&self) -> String {
        let cells: Vec<&CellResult> = self.cells.iter().filter(|c| c.cascade.is_some()).collect();
        if cells.is_empty() {
            return String::new();
        }
        let lookup = |outer, inner| {
            cells
                .iter()
                .find(|c| c.cascade == Some(CascadePair::new(outer, inner)))
                .map(|c| c.short())
                .unwrap_or_default()
        };
        let w = cells.iter().map(|c| c.short().len()).chain([10]).max().unwrap();
        let mut out = format!("{:<12}", "inner\\outer");
        for outer in SymmetricAlgorithm::ALL {
            let _ = write!(out, " | {:<w$}", outer.label());
        }
        out.push('\n');
        for inner in SymmetricAlgorithm::ALL {
            let _ = write!(out, "{:<12}", inner.label());
            for outer in SymmetricAlgorithm::ALL {
                let _ = write!(out, " | {:<w$}", lookup(outer, inner));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every entry, `jobs` at a time; a failing cell does not stop the others.
pub fn run_matrix(entries: Vec<MatrixEntry>, out_root: &Path, jobs: usize) -> MatrixReport {
    let slots: Vec<Mutex<Option<CellResult>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(entry) = entries.get(i) else { break };
        let outcome = match entry {
            MatrixEntry::Run(c) => match run_experiment(c, out_root) {
                Ok(report) => CellOutcome::Done {
                    report: Box::new(report),
                },
                Err(e) => CellOutcome::Failed { error: e.to_string() },
            },
            MatrixEntry::Skip { reason, .. } => CellOutcome::Skipped { reason: reason.clone() },
        };
        *slots[i].lock().unwrap() = Some(CellResult {
            id: entry.id().to_string(),
            cascade: entry.cascade(),
            outcome,
        });
    };
    let jobs = jobs.clamp(1, entries.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    MatrixReport {
        cells: slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every entry ran"))
            .collect(),
    }
}
