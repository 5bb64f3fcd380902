//! Clustering through an external pairwise-equivalence judge.
//!
//! The judge is any process that reads one JSON request per line on stdin,
//! `{"prompt_id", "index_a", "index_b", "text_a", "text_b"}`, and answers each
//! with one line `{"equivalent": true|false}` on stdout. Clusters are the
//! connected components of the declared-equivalent graph.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClusterPartition, ClusterSource};
use crate::error::{Error, Result};
use crate::records::GenerationMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleRequest<'a> {
    pub prompt_id: &'a str,
    pub index_a: u32,
    pub index_b: u32,
    pub text_a: &'a str,
    pub text_b: &'a str,
}

/// Decides whether two responses to the same prompt mean the same thing.
pub trait EquivalenceOracle {
    fn equivalent(&mut self, request: &OracleRequest<'_>) -> Result<bool>;
}

impl<F> EquivalenceOracle for F
where
    F: FnMut(&OracleRequest<'_>) -> Result<bool>,
{
    fn equivalent(&mut self, request: &OracleRequest<'_>) -> Result<bool> {
        self(request)
    }
}

/// Response texts keyed by (prompt_id, generation_index).
pub type ResponseTexts = HashMap<(String, u32), String>;

#[derive(Deserialize)]
struct TextLine {
    prompt_id: String,
    generation_index: u32,
    text: String,
}

/// Parses a line-delimited `{prompt_id, generation_index, text}` file.
pub fn parse_texts(text: &str) -> Result<ResponseTexts> {
    let mut out = ResponseTexts::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TextLine = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert((t.prompt_id.clone(), t.generation_index), t.text).is_some() {
            return Err(Error::MalformedLine {
                line: i + 1,
                message: format!(
                    "duplicate text for prompt `{}` generation {}",
                    t.prompt_id, t.generation_index
                ),
            });
        }
    }
    Ok(out)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    fn component_sizes(&mut self) -> Vec<usize> {
        let roots: Vec<usize> = (0..self.parent.len()).filter(|&x| self.find(x) == x).collect();
        let mut sizes: Vec<usize> = roots.into_iter().map(|x| self.size[x]).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}

/// Component sizes (descending) of a graph on `k` nodes.
pub fn connected_component_sizes(k: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut uf = UnionFind::new(k);
    for (a, b) in edges {
        uf.union(a, b);
    }
    uf.component_sizes()
}

/// Clusters each prompt's generations with an equivalence judge.
///
/// Pairs already joined through earlier answers are not queried again.
pub fn cluster_by_oracle(
    matrix: &GenerationMatrix,
    texts: &ResponseTexts,
    oracle: &mut dyn EquivalenceOracle,
) -> Result<Vec<ClusterPartition>> {
    if matrix.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(matrix.n());
    for row in matrix.rows() {
        let row_texts = row
            .generation_indices
            .iter()
            .map(|&idx| {
                texts
                    .get(&(row.prompt_id.clone(), idx))
                    .map(String::as_str)
                    .ok_or_else(|| {
                        Error::Oracle(format!(
                            "no response text for prompt `{}` generation {idx}",
                            row.prompt_id
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;

        let k = row.len();
        let mut uf = UnionFind::new(k);
        for a in 0..k {
            for b in a + 1..k {
                if uf.find(a) == uf.find(b) {
                    continue;
                }
                let req = OracleRequest {
                    prompt_id: &row.prompt_id,
                    index_a: row.generation_indices[a],
                    index_b: row.generation_indices[b],
                    text_a: row_texts[a],
                    text_b: row_texts[b],
                };
                if oracle.equivalent(&req)? {
                    uf.union(a, b);
                }
            }
        }
        out.push(ClusterPartition::new(
            row.prompt_id.clone(),
            uf.component_sizes(),
            ClusterSource::ExternalOracle,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    /// Per-request reply deadline.
    pub timeout: Duration,
    /// Restarts after a timeout before giving up.
    pub retries: u32,
}

impl OracleConfig {
    /// Runs `command` through `sh -c`.
    pub fn shell(command: &str) -> Self {
        OracleConfig {
            command: vec!["sh".into(), "-c".into(), command.into()],
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
}

/// [`EquivalenceOracle`] backed by a long-lived child process.
pub struct CommandOracle {
    config: OracleConfig,
    running: Option<Running>,
}

#[derive(Deserialize)]
struct Reply {
    equivalent: bool,
}

impl CommandOracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::Oracle("empty oracle command".into()));
        }
        Ok(CommandOracle {
            config,
            running: None,
        })
    }

    fn spawn(&self) -> Result<Running> {
        let (program, args) = self.config.command.split_first().expect("checked non-empty");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            replies: rx,
        })
    }

    fn shutdown(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn exit_error(running: &mut Running) -> Error {
        match running.child.wait() {
            Ok(status) if !status.success() => Error::Oracle(format!("oracle exited with {status}")),
            Ok(_) => Error::Oracle("oracle closed its output before replying".into()),
            Err(e) => Error::Oracle(format!("waiting for oracle: {e}")),
        }
    }

    fn attempt(&mut self, line: &str) -> Result<Option<bool>> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let running = self.running.as_mut().expect("spawned");
        if writeln!(running.stdin, "{line}").and_then(|_| running.stdin.flush()).is_err() {
            let err = Self::exit_error(running);
            self.running = None;
            return Err(err);
        }
        match running.replies.recv_timeout(self.config.timeout) {
            Ok(Ok(reply)) => {
                let parsed: Reply = serde_json::from_str(&reply)
                    .map_err(|e| Error::Oracle(format!("protocol violation: `{reply}`: {e}")))?;
                Ok(Some(parsed.equivalent))
            }
            Ok(Err(e)) => Err(Error::Oracle(format!("reading oracle output: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.shutdown();
                Ok(None)
            }
            Err(RecvTimeoutError::Disconnected) => {
                let err = Self::exit_error(running);
                self.running = None;
                Err(err)
            }
        }
    }
}

impl EquivalenceOracle for CommandOracle {
    fn equivalent(&mut self, request: &OracleRequest<'_>) -> Result<bool> {
        let line = serde_json::to_string(request)?;
        for _ in 0..=self.config.retries {
            if let Some(answer) = self.attempt(&line)? {
                return Ok(answer);
            }
        }
        Err(Error::Oracle(format!(
            "no reply within {:?} after {} attempts",
            self.config.timeout,
            self.config.retries + 1
        )))
    }
}

impl Drop for CommandOracle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
