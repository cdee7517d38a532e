use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::Adam;
use crate::conditioning::GeneratorConfig;
use crate::error::{Error, Result};
use crate::model::{Cunet, ModelConfig};
use crate::nn::Parameterized;

const MAGIC: &str = "CUNET-CKPT 1";

/// Everything that determines a model's tensor layout and meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub generator: Option<GeneratorConfig>,
    /// Source names in condition-vector order.
    pub tasks: Vec<String>,
    /// The single task of a dedicated model.
    pub dedicated_task: Option<String>,
}

impl ModelSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_generator(self.generator.as_ref())?;
        if let Some(g) = &self.generator {
            if g.n_tasks != self.tasks.len() {
                return Err(Error::config(format!(
                    "generator expects {} tasks but {} are named",
                    g.n_tasks,
                    self.tasks.len()
                )));
            }
        }
        match (&self.dedicated_task, self.model.conditioned) {
            (Some(t), false) if self.tasks.contains(t) => Ok(()),
            (Some(t), false) => Err(Error::config(format!("dedicated task `{t}` is not among the tasks"))),
            (None, true) => Ok(()),
            (None, false) => Err(Error::config("a dedicated model needs its task")),
            (Some(_), true) => Err(Error::config("a conditioned model has no dedicated task")),
        }
    }

    /// Index of `task` in the condition vector.
    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::Input(format!("unknown task `{task}` (known: {})", self.tasks.join(", "))))
    }

    /// Bounds that keep layout arithmetic and allocation sane for untrusted
    /// files.
    fn check_limits(&self) -> Result<()> {
        let m = &self.model;
        let ok = m.n_blocks <= 12
            && m.base_filters <= 1 << 12
            && (m.base_filters << m.n_blocks.min(12)) <= 1 << 16
            && m.kernel <= 31
            && m.stride <= 8
            && m.input_height <= 1 << 14
            && m.input_width <= 1 << 14
            && self.tasks.len() <= 1 << 10
            && self.generator.as_ref().map_or(true, |g| {
                g.n_tasks <= 1 << 10 && g.hidden_sizes.iter().all(|&h| h <= 1 << 16)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::IncompatibleCheckpoint("configuration outside supported limits".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub model: Cunet<f32>,
    pub optimizer: Adam<f32>,
    pub epoch: usize,
    pub val_loss: f64,
}

struct Entry<'a> {
    name: String,
    kind: &'static str,
    dims: Vec<usize>,
    data: &'a [f32],
}

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn entries<'a>(model: &'a Cunet<f32>, adam: &'a Adam<f32>) -> Vec<Entry<'a>> {
    let mut out = Vec::new();
    let mut params = Vec::new();
    model.visit_params(&mut |p| params.push(p));
    for p in &params {
        out.push(Entry { name: p.name.clone(), kind: "param", dims: p.shape.clone(), data: &p.value });
    }
    model.visit_buffers(&mut |b| {
        out.push(Entry { name: b.name.clone(), kind: "buffer", dims: vec![b.value.len()], data: &b.value });
    });
    for (kind, moments) in [("adam_m", &adam.m), ("adam_v", &adam.v)] {
        for (p, m) in params.iter().zip(moments.iter()) {
            out.push(Entry { name: p.name.clone(), kind, dims: p.shape.clone(), data: m });
        }
    }
    out
}

fn header(spec_json: &str, digest: &str, epoch: usize, val_loss: f64, adam: &Adam<f32>, entries: &[Entry]) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(h, "digest {digest}");
    let _ = writeln!(h, "epoch {epoch}");
    let _ = writeln!(h, "val_loss {val_loss:?}");
    let _ = writeln!(
        h,
        "adam {} {:?} {:?} {:?} {:?}",
        adam.step, adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon
    );
    let _ = writeln!(h, "config {spec_json}");
    let mut offset = 0;
    for e in entries {
        let _ = writeln!(h, "tensor {} {} f32 {} {offset} {}", e.name, e.kind, dims_text(&e.dims), e.data.len());
        offset += e.data.len();
    }
    h.push_str("end\n");
    h
}

impl Checkpoint {
    pub fn config_digest(&self) -> String {
        self.spec.digest()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = entries(&self.model, &self.optimizer);
        let h = header(&self.spec.to_json(), &self.spec.digest(), self.epoch, self.val_loss, &self.optimizer, &entries);
        let total: usize = entries.iter().map(|e| e.data.len()).sum();
        let mut out = Vec::with_capacity(h.len() + 4 * total);
        out.extend_from_slice(h.as_bytes());
        for e in &entries {
            for v in e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        parse_checkpoint(bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_checkpoint(&bytes)
}

/// Load, then require the checkpoint to have been produced for `spec`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config_digest() != spec.digest() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint digest {} does not match configuration digest {}",
            ckpt.config_digest(),
            spec.digest()
        )));
    }
    Ok(ckpt)
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key)).and_then(|l| l.strip_prefix(' ')).ok_or_else(|| Error::format(format!("expected `{key}` line")))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format!("bad {what} `{s}`")))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    const END: &[u8] = b"\nend\n";
    let split = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format("checkpoint header is incomplete"))?
        + END.len();
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::format("checkpoint header is not UTF-8"))?;
    let payload = &bytes[split..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format("not a checkpoint file"));
    }
    let digest = field(lines.next(), "digest")?;
    let epoch: usize = num(field(lines.next(), "epoch")?, "epoch")?;
    let val_loss: f64 = num(field(lines.next(), "val_loss")?, "validation loss")?;
    let adam_line: Vec<&str> = field(lines.next(), "adam")?.split(' ').collect();
    if adam_line.len() != 5 {
        return Err(Error::format("bad optimizer line"));
    }
    let step: u64 = num(adam_line[0], "optimizer step")?;
    let hyper: Vec<f64> = adam_line[1..].iter().map(|s| num(s, "optimizer setting")).collect::<Result<_>>()?;
    let spec_json = field(lines.next(), "config")?;

    let computed = hex::encode(Sha256::digest(spec_json.as_bytes()));
    if computed != digest {
        return Err(Error::IncompatibleCheckpoint(format!("stored digest {digest} does not match its configuration")));
    }
    let spec: ModelSpec =
        serde_json::from_str(spec_json).map_err(|e| Error::IncompatibleCheckpoint(format!("unreadable configuration: {e}")))?;
    spec.check_limits()?;
    spec.validate().map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;

    // payload must hold params + buffers + two moment sets before allocating
    let n_params = spec.model.total_param_count(spec.generator.as_ref());
    if payload.len() < 4 * 3 * n_params {
        return Err(Error::format(format!("checkpoint payload is truncated ({} bytes)", payload.len())));
    }
    let mut model = Cunet::<f32>::zeroed(&spec.model, spec.generator.as_ref())?;
    let mut adam = Adam::new(hyper[0], hyper[1], hyper[2], hyper[3], &model);
    adam.step = step;

    let expected: Vec<(String, &'static str, Vec<usize>, usize)> =
        entries(&model, &adam).into_iter().map(|e| (e.name, e.kind, e.dims, e.data.len())).collect();
    let total: usize = expected.iter().map(|e| e.3).sum();
    if payload.len() != 4 * total {
        return Err(Error::format(format!("payload has {} bytes, layout needs {}", payload.len(), 4 * total)));
    }
    let mut offset = 0;
    let mut values = Vec::with_capacity(expected.len());
    for (name, kind, dims, len) in &expected {
        let line = lines.next().ok_or_else(|| Error::format("tensor table ends early"))?;
        let want = format!("tensor {name} {kind} f32 {} {offset} {len}", dims_text(dims));
        if line != want {
            return Err(Error::IncompatibleCheckpoint(format!("expected `{want}`, found `{line}`")));
        }
        let data: Vec<f32> = payload[4 * offset..4 * (offset + len)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        values.push(data);
        offset += len;
    }
    if lines.next() != Some("end") || lines.next().is_some() {
        return Err(Error::format("unexpected lines after the tensor table"));
    }

    let mut it = values.into_iter();
    model.visit_params_mut(&mut |p| p.value = it.next().expect("layout checked"));
    model.visit_buffers_mut(&mut |b| b.value = it.next().expect("layout checked"));
    for m in adam.m.iter_mut() {
        *m = it.next().expect("layout checked");
    }
    for v in adam.v.iter_mut() {
        *v = it.next().expect("layout checked");
    }
    model.mark_initialized();

    let ckpt = Checkpoint { spec, model, optimizer: adam, epoch, val_loss };
    // only canonical headers are accepted so that load -> save is the identity
    let entries = entries(&ckpt.model, &ckpt.optimizer);
    if header(spec_json, digest, epoch, val_loss, &ckpt.optimizer, &entries) != head || ckpt.spec.to_json() != spec_json {
        return Err(Error::format("checkpoint header is not in canonical form"));
    }
    Ok(ckpt)
}
