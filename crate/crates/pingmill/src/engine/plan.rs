//! Execution plan descriptor: a DAG of named stages, validated before a
//! pipeline runs and recorded (with per-stage wall clock) in the run
//! manifest.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Source,
    Map,
    Shuffle,
    Reduce,
    Sink,
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Source => "source",
            StageKind::Map => "map",
            StageKind::Shuffle => "shuffle",
            StageKind::Reduce => "reduce",
            StageKind::Sink => "sink",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub id: String,
    pub kind: StageKind,
    pub inputs: Vec<String>,
}

/// Directed acyclic sequence of stages plus the worker budget.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    worker_count: usize,
    stages: Vec<Stage>,
}

impl ExecutionPlan {
    pub fn new(worker_count: usize) -> Result<Self> {
        if worker_count == 0 {
            return Err(Error::Config("worker_count must be >= 1".into()));
        }
        Ok(ExecutionPlan {
            worker_count,
            stages: Vec::new(),
        })
    }

    pub fn stage(mut self, id: &str, kind: StageKind, inputs: &[&str]) -> Self {
        self.stages.push(Stage {
            id: id.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Reject duplicate ids, unknown inputs, sources with inputs, and cycles.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.stages {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate stage id '{}'", s.id)));
            }
        }
        for s in &self.stages {
            if s.kind == StageKind::Source && !s.inputs.is_empty() {
                return Err(Error::Config(format!(
                    "source stage '{}' cannot have inputs",
                    s.id
                )));
            }
            for input in &s.inputs {
                if !ids.contains(input.as_str()) {
                    return Err(Error::Config(format!(
                        "stage '{}' reads unknown stage '{input}'",
                        s.id
                    )));
                }
            }
        }
        // Kahn's algorithm over the stage graph.
        let index: std::collections::HashMap<&str, usize> = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.stages.len()];
        let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); self.stages.len()];
        for (i, s) in self.stages.iter().enumerate() {
            for input in &s.inputs {
                let j = index[input.as_str()];
                out_edges[j].push(i);
                indegree[i] += 1;
            }
        }
        let mut ready: Vec<usize> = indegree
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == 0)
            .map(|(i, _)| i)
            .collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for &j in &out_edges[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if seen != self.stages.len() {
            return Err(Error::Config("execution plan contains a cycle".into()));
        }
        Ok(())
    }
}
