//! Single-file binary datasets and checkpoints.
//!
//! Both share a preamble (integers little-endian):
//!
//! ```text
//! magic        8 bytes   "FPDATA\0\0" or "FPCKPT\0\0"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 "key=value" lines
//! ```
//!
//! Dataset payload, per demonstration: `steps u32, success u8,
//! expert_goal u32, reached_goal i32 (-1 for none), goal_count u32, goals
//! f64 pairs, final_ee 2 f64`, then per step the robot state as f32, the
//! cloud as `points u32` plus f32 triples, and the action as 2 f32.
//!
//! Checkpoint payload: live network then EMA network (point MLP, encoder
//! head and velocity MLP bodies each), state and action normalizers, and
//! the optimizer (`step_count u64`, then every first and second moment as
//! `len u32` plus f64s). Parameters are always f64.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flowpolicy::flowmatch::MlpField;
use flowpolicy::numcore::checkpoint::{read_f64s, read_mlp_body, read_u32, write_f64s, write_mlp_body, write_u32};
use flowpolicy::numcore::{OptimizerState, Tensor};
use flowpolicy::perception::{CloudEncoder, Normalizer, PointCloud};
use flowpolicy::policy::{FlowPolicy, PolicyConfig, PolicyNet};
use flowpolicy::simenv::{EpisodeRecord, TaskSpec};

use crate::error::{BenchError, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"FPDATA\0\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FPCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

const MAX_HEADER: u32 = 1 << 20;
const MAX_COUNT: u32 = 1 << 24;

/// Key/value header block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header(pub BTreeMap<String, String>);

impl Header {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> std::result::Result<&str, String> {
        self.get(key).ok_or_else(|| format!("header lacks '{key}'"))
    }

    fn encode(&self) -> Vec<u8> {
        let mut s = String::new();
        for (k, v) in &self.0 {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s.into_bytes()
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let text = std::str::from_utf8(bytes).map_err(|e| format!("header is not UTF-8: {e}"))?;
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed header line '{line}'"))?;
            map.insert(k.to_owned(), v.to_owned());
        }
        Ok(Header(map))
    }

    /// Warning text when the recorded config hash differs from `expected`.
    pub fn hash_warning(&self, expected: &str) -> Option<String> {
        match self.get("config_hash") {
            Some(h) if h == expected => None,
            Some(h) => Some(format!("file was written under config {h}, current config is {expected}")),
            None => Some("file carries no config hash".into()),
        }
    }
}

type Io<T> = std::result::Result<T, String>;

fn io(e: std::io::Error) -> String {
    e.to_string()
}

fn core(e: flowpolicy::Error) -> String {
    e.to_string()
}

fn write_preamble<W: Write>(w: &mut W, magic: &[u8; 8], header: &Header) -> Io<()> {
    let bytes = header.encode();
    w.write_all(magic).map_err(io)?;
    write_u32(w, FORMAT_VERSION).map_err(core)?;
    write_u32(w, bytes.len() as u32).map_err(core)?;
    w.write_all(&bytes).map_err(io)
}

fn read_preamble<R: Read>(r: &mut R, magic: &[u8; 8]) -> Io<Header> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(io)?;
    if &m != magic {
        return Err("bad magic".into());
    }
    let version = read_u32(r).map_err(core)?;
    if version != FORMAT_VERSION {
        return Err(format!("format version {version}, this build reads {FORMAT_VERSION}"));
    }
    let len = read_u32(r).map_err(core)?;
    if len > MAX_HEADER {
        return Err(format!("implausible header length {len}"));
    }
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes).map_err(io)?;
    Header::decode(&bytes)
}

fn count<R: Read>(r: &mut R, what: &str) -> Io<usize> {
    let n = read_u32(r).map_err(core)?;
    if n > MAX_COUNT {
        return Err(format!("implausible {what} {n}"));
    }
    Ok(n as usize)
}

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Io<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Io<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(io)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect())
}

fn write_u8<W: Write>(w: &mut W, v: u8) -> Io<()> {
    w.write_all(&[v]).map_err(io)
}

fn read_u8<R: Read>(r: &mut R) -> Io<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(io)?;
    Ok(b[0])
}

fn write_json<T: serde::Serialize>(header: &mut Header, key: &str, value: &T) {
    header.set(key, serde_json::to_string(value).expect("plain data serializes"));
}

fn read_json<T: serde::de::DeserializeOwned>(header: &Header, key: &str) -> Io<T> {
    serde_json::from_str(header.require(key)?).map_err(|e| format!("header '{key}': {e}"))
}

fn to_format_error(path: &Path) -> impl Fn(String) -> BenchError + '_ {
    move |reason| BenchError::Format {
        path: path.display().to_string(),
        reason,
    }
}

/// Demonstrations plus the task they were recorded on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub task: TaskSpec,
    pub demos: Vec<EpisodeRecord>,
}

pub fn dataset_header(task: &TaskSpec, config_hash: &str, seed: u64, demos: usize) -> Header {
    let mut h = Header::default();
    h.set("kind", "dataset");
    h.set("config_hash", config_hash);
    h.set("seed", seed);
    h.set("demos", demos);
    write_json(&mut h, "task", task);
    h
}

pub fn write_dataset<W: Write>(w: &mut W, header: &Header, demos: &[EpisodeRecord]) -> Io<()> {
    write_preamble(w, DATASET_MAGIC, header)?;
    write_u32(w, demos.len() as u32).map_err(core)?;
    for d in demos {
        if d.states.len() != d.len() || d.clouds.len() != d.len() {
            return Err("demo has mismatched state, cloud and action counts".into());
        }
        write_u32(w, d.len() as u32).map_err(core)?;
        write_u8(w, d.success as u8)?;
        write_u32(w, d.expert_goal as u32).map_err(core)?;
        w.write_all(&d.reached_goal.map_or(-1, |g| g as i32).to_le_bytes()).map_err(io)?;
        write_u32(w, d.targets.len() as u32).map_err(core)?;
        for t in &d.targets {
            write_f64s(w, t).map_err(core)?;
        }
        write_f64s(w, &d.final_ee).map_err(core)?;
        let state_dim = d.states.first().map_or(0, Vec::len);
        write_u32(w, state_dim as u32).map_err(core)?;
        for ((s, c), a) in d.states.iter().zip(&d.clouds).zip(&d.actions) {
            if s.len() != state_dim {
                return Err("robot state width changes within a demo".into());
            }
            write_f32s(w, s)?;
            write_u32(w, c.len() as u32).map_err(core)?;
            let flat: Vec<f64> = c.points().iter().flatten().copied().collect();
            write_f32s(w, &flat)?;
            write_f32s(w, a)?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Io<Dataset> {
    let header = read_preamble(r, DATASET_MAGIC)?;
    let task: TaskSpec = read_json(&header, "task")?;
    let n = count(r, "demo count")?;
    let mut demos = Vec::with_capacity(n);
    for _ in 0..n {
        let steps = count(r, "step count")?;
        let success = read_u8(r)? != 0;
        let expert_goal = read_u32(r).map_err(core)? as usize;
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(io)?;
        let reached = i32::from_le_bytes(b);
        let goals = count(r, "goal count")?;
        let targets = (0..goals)
            .map(|_| read_f64s(r, 2).map(|v| [v[0], v[1]]).map_err(core))
            .collect::<Io<Vec<_>>>()?;
        let ee = read_f64s(r, 2).map_err(core)?;
        let state_dim = count(r, "state width")?;
        let (mut states, mut clouds, mut actions) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..steps {
            states.push(read_f32s(r, state_dim)?);
            let points = count(r, "point count")?;
            let flat = read_f32s(r, 3 * points)?;
            let pts = flat.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
            clouds.push(PointCloud::new(pts).map_err(core)?);
            let a = read_f32s(r, 2)?;
            actions.push([a[0], a[1]]);
        }
        demos.push(EpisodeRecord {
            states,
            clouds,
            actions,
            success,
            steps,
            targets,
            expert_goal,
            reached_goal: (reached >= 0).then_some(reached as usize),
            final_ee: [ee[0], ee[1]],
            error: None,
        });
    }
    Ok(Dataset { header, task, demos })
}

pub fn save_dataset(path: &Path, header: &Header, demos: &[EpisodeRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, header, demos).map_err(to_format_error(path))?;
    write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    read_dataset(&mut bytes.as_slice()).map_err(to_format_error(path))
}

/// A policy with its optimizer state and training position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub task: TaskSpec,
    pub policy: FlowPolicy,
    pub optimizer: OptimizerState,
    pub epoch: usize,
    pub seed: u64,
}

pub fn checkpoint_header(task: &TaskSpec, config: &PolicyConfig, config_hash: &str, epoch: usize, seed: u64) -> Header {
    let mut h = Header::default();
    h.set("kind", "checkpoint");
    h.set("config_hash", config_hash);
    h.set("epoch", epoch);
    h.set("seed", seed);
    write_json(&mut h, "task", task);
    write_json(&mut h, "policy", config);
    h
}

fn write_net<W: Write>(w: &mut W, net: &PolicyNet) -> Io<()> {
    write_mlp_body(w, net.encoder.point_mlp()).map_err(core)?;
    write_mlp_body(w, net.encoder.head()).map_err(core)?;
    write_mlp_body(w, &net.field.model).map_err(core)
}

fn read_net<R: Read>(r: &mut R, cfg: &PolicyConfig, state_dim: usize) -> Io<PolicyNet> {
    let encoder = CloudEncoder::from_parts(read_mlp_body(r).map_err(core)?, read_mlp_body(r).map_err(core)?).map_err(core)?;
    let cond_dim = cfg.obs_horizon * (encoder.output_dim() + state_dim);
    let field = MlpField::from_model(read_mlp_body(r).map_err(core)?, cfg.chunk_dim(), cond_dim).map_err(core)?;
    PolicyNet::from_parts(encoder, field, cfg.obs_horizon).map_err(core)
}

fn write_norm<W: Write>(w: &mut W, n: &Normalizer) -> Io<()> {
    write_u32(w, n.dim() as u32).map_err(core)?;
    write_f64s(w, n.min()).map_err(core)?;
    write_f64s(w, n.max()).map_err(core)
}

fn read_norm<R: Read>(r: &mut R) -> Io<Normalizer> {
    let d = count(r, "normalizer width")?;
    let min = read_f64s(r, d).map_err(core)?;
    let max = read_f64s(r, d).map_err(core)?;
    Normalizer::from_bounds(min, max).map_err(core)
}

fn write_tensors<W: Write>(w: &mut W, ts: &[Tensor]) -> Io<()> {
    write_u32(w, ts.len() as u32).map_err(core)?;
    for t in ts {
        write_u32(w, t.len() as u32).map_err(core)?;
        write_f64s(w, t.data()).map_err(core)?;
    }
    Ok(())
}

fn read_tensors_like<R: Read>(r: &mut R, like: &[Tensor]) -> Io<Vec<Tensor>> {
    let n = count(r, "moment count")?;
    if n != like.len() {
        return Err(format!("{n} optimizer moments for {} parameters", like.len()));
    }
    like.iter()
        .map(|p| {
            let len = count(r, "moment length")?;
            if len != p.len() {
                return Err(format!("moment of {len} values for a parameter of {}", p.len()));
            }
            Tensor::new(p.shape().to_vec(), read_f64s(r, len).map_err(core)?).map_err(core)
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(w: &mut W, header: &Header, policy: &FlowPolicy, opt: &OptimizerState) -> Io<()> {
    write_preamble(w, CHECKPOINT_MAGIC, header)?;
    write_net(w, &policy.net)?;
    write_net(w, &policy.ema)?;
    write_norm(w, &policy.state_norm)?;
    write_norm(w, &policy.action_norm)?;
    w.write_all(&opt.step_count.to_le_bytes()).map_err(io)?;
    write_tensors(w, &opt.first_moment)?;
    write_tensors(w, &opt.second_moment)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Io<Checkpoint> {
    use flowpolicy::numcore::Parameters;
    let header = read_preamble(r, CHECKPOINT_MAGIC)?;
    let task: TaskSpec = read_json(&header, "task")?;
    let config: PolicyConfig = read_json(&header, "policy")?;
    config.validate().map_err(core)?;
    let parse = |key: &str| -> Io<u64> {
        header.require(key)?.parse().map_err(|e| format!("header '{key}': {e}"))
    };
    let (epoch, seed) = (parse("epoch")? as usize, parse("seed")?);
    let state_dim = flowpolicy::simenv::ROBOT_STATE_DIM;
    let net = read_net(r, &config, state_dim)?;
    let ema = read_net(r, &config, state_dim)?;
    let state_norm = read_norm(r)?;
    let action_norm = read_norm(r)?;
    if state_norm.dim() != state_dim || action_norm.dim() * config.prediction_horizon != config.chunk_dim() {
        return Err("normalizer widths do not match the policy".into());
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io)?;
    let params: Vec<Tensor> = net.parameters().into_iter().cloned().collect();
    let first_moment = read_tensors_like(r, &params)?;
    let second_moment = read_tensors_like(r, &params)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err("trailing bytes after checkpoint payload".into());
    }
    let optimizer = OptimizerState {
        config: config.optimizer.clone(),
        step_count: u64::from_le_bytes(b),
        first_moment,
        second_moment,
    };
    Ok(Checkpoint {
        header,
        task,
        policy: FlowPolicy {
            config,
            net,
            ema,
            state_norm,
            action_norm,
        },
        optimizer,
        epoch,
        seed,
    })
}

pub fn save_checkpoint(path: &Path, header: &Header, policy: &FlowPolicy, opt: &OptimizerState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, header, policy, opt).map_err(to_format_error(path))?;
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice()).map_err(to_format_error(path))
}

/// Writes through a sibling temporary file so a crash never leaves a
/// truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| BenchError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}
