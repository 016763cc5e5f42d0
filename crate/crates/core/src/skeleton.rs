//! Skeleton graphs, joint trajectories and the datasets built from them.
//!
//! A sequence is T frames of n joints in 3-D. Each joint trajectory is
//! reduced to `3*M` numbers by temporal chunking, and the per-joint vectors
//! form the columns of the node signal `U` (`s x n`, `s = 3M`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::{matmul, Mat, Tensor3};

pub const DEFAULT_CHUNKS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_names: Option<Vec<String>>,
}

impl SkeletonGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self {
            n,
            edges,
            node_names: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for &(a, b) in &self.edges {
            if a >= self.n || b >= self.n {
                return Err(Error::Input(format!("edge ({a}, {b}) out of range for {} nodes", self.n)));
            }
            if a == b {
                return Err(Error::Input(format!("self-loop on node {a} in edge list")));
            }
        }
        if let Some(names) = &self.node_names {
            if names.len() != self.n {
                return Err(Error::Input(format!("{} node names for {} nodes", names.len(), self.n)));
            }
        }
        Ok(())
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn chain(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
            node_names: None,
        }
    }

    /// The 21-joint hand skeleton used by first-person hand-action recordings:
    /// wrist, five MCP joints, then PIP/DIP/TIP per finger (thumb to pinky).
    pub fn hand21() -> Self {
        let names = [
            "wrist", "t_mcp", "i_mcp", "m_mcp", "r_mcp", "p_mcp", "t_pip", "t_dip", "t_tip", "i_pip", "i_dip",
            "i_tip", "m_pip", "m_dip", "m_tip", "r_pip", "r_dip", "r_tip", "p_pip", "p_dip", "p_tip",
        ];
        let mut edges: Vec<(usize, usize)> = (1..=5).map(|f| (0, f)).collect();
        for f in 0..5 {
            let mcp = 1 + f;
            let pip = 6 + 3 * f;
            edges.extend([(mcp, pip), (pip, pip + 1), (pip + 1, pip + 2)]);
        }
        Self {
            n: 21,
            edges,
            node_names: Some(names.iter().map(|s| s.to_string()).collect()),
        }
    }
}

/// One joint's positions over time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 3]>,
    pub times: Vec<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 3]>, times: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("trajectory has no points".into()));
        }
        if points.len() != times.len() {
            return Err(Error::Input(format!("{} points but {} time stamps", points.len(), times.len())));
        }
        if points.iter().flatten().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::Input("trajectory contains non-finite values".into()));
        }
        Ok(Self { points, times })
    }

    /// Time stamps 0, 1, ..., T-1.
    pub fn uniform(points: Vec<[f64; 3]>) -> Result<Self> {
        let times = (0..points.len()).map(|t| t as f64).collect();
        Self::new(points, times)
    }
}

/// Splits `[t_first, t_last]` into `m` equal intervals, assigns each point by
/// time stamp and concatenates the per-interval coordinate means. An empty
/// interval repeats the previous mean (the whole-sequence mean for the first).
pub fn temporal_chunking(traj: &Trajectory, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Input("chunk count must be >= 1".into()));
    }
    if traj.points.is_empty() {
        return Err(Error::Input("trajectory has no points".into()));
    }
    let t0 = traj.times.iter().copied().fold(f64::INFINITY, f64::min);
    let t1 = traj.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    let mut sums = vec![[0.0; 3]; m];
    let mut counts = vec![0usize; m];
    for (p, &t) in traj.points.iter().zip(&traj.times) {
        let c = if span > 0.0 {
            (((t - t0) / span * m as f64).floor() as usize).min(m - 1)
        } else {
            0
        };
        for d in 0..3 {
            sums[c][d] += p[d];
        }
        counts[c] += 1;
    }
    let total = traj.points.len() as f64;
    let mut prev = [0.0; 3];
    for d in 0..3 {
        prev[d] = traj.points.iter().map(|p| p[d]).sum::<f64>() / total;
    }
    let mut out = Vec::with_capacity(3 * m);
    for c in 0..m {
        if counts[c] > 0 {
            for d in 0..3 {
                prev[d] = sums[c][d] / counts[c] as f64;
            }
        }
        out.extend_from_slice(&prev);
    }
    Ok(out)
}

/// 0/1 adjacency with self-loops, normalized so every column sums to one.
pub fn handcrafted_adjacency(graph: &SkeletonGraph) -> Mat {
    let n = graph.n;
    let mut a = Mat::identity(n);
    for &(i, j) in &graph.edges {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| a[(i, j)]).sum();
        for i in 0..n {
            a[(i, j)] /= s;
        }
    }
    a
}

/// `(A^(1), ..., A^(k))` with `A^(p) = A^(p-1) A` and `A^(0) = I`.
pub fn power_map_basis(a: &Mat, k: usize) -> Result<Tensor3> {
    if a.rows() != a.cols() {
        return shape_err(format!("power map needs a square matrix, got {:?}", a.shape()));
    }
    if k == 0 {
        return Err(Error::Input("power map needs k >= 1".into()));
    }
    let mut mats = Vec::with_capacity(k);
    let mut cur = Mat::identity(a.rows());
    for _ in 0..k {
        cur = matmul(&cur, a)?;
        mats.push(cur.clone());
    }
    Tensor3::from_mats(&mats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub u: Mat,
    pub label: usize,
    pub sequence_id: String,
}

/// Builds the `3m x n` node signal from frames of n joints.
pub fn signal_from_frames(frames: &[Vec<[f64; 3]>], n: usize, m: usize, center: bool) -> Result<Mat> {
    if frames.is_empty() {
        return Err(Error::Input("sequence has no frames".into()));
    }
    if let Some(bad) = frames.iter().position(|f| f.len() != n) {
        return Err(Error::Format(format!("frame {bad} has {} joints, expected {n}", frames[bad].len())));
    }
    let mut offset = [0.0; 3];
    if center {
        let count = (frames.len() * n) as f64;
        for f in frames {
            for p in f {
                for d in 0..3 {
                    offset[d] += p[d] / count;
                }
            }
        }
    }
    let mut u = Mat::zeros(3 * m, n);
    for j in 0..n {
        let pts = frames
            .iter()
            .map(|f| [f[j][0] - offset[0], f[j][1] - offset[1], f[j][2] - offset[2]])
            .collect();
        let feat = temporal_chunking(&Trajectory::uniform(pts)?, m)?;
        for (r, v) in feat.into_iter().enumerate() {
            u[(r, j)] = v;
        }
    }
    Ok(u)
}

/// Reads a sequence file: one frame per line, `3n` whitespace-separated reals.
/// Blank lines and `#` comments are skipped.
pub fn read_sequence(path: &Path, n: usize) -> Result<Vec<Vec<[f64; 3]>>> {
    let file = fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals = body
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("cannot parse '{tok}' as a finite real"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 3 * n {
            return Err(Error::Format(format!(
                "{}:{}: frame has {} values, expected {} (3 x {n} joints)",
                path.display(),
                idx + 1,
                vals.len(),
                3 * n
            )));
        }
        frames.push(vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    }
    if frames.is_empty() {
        return Err(Error::Input(format!("{}: no frames", path.display())));
    }
    Ok(frames)
}

pub fn write_sequence(path: &Path, frames: &[Vec<[f64; 3]>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for f in frames {
        let line: Vec<String> = f.iter().flatten().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_fpha_sequence(path: &Path, skeleton: &SkeletonGraph, m: usize, center: bool) -> Result<GraphSample> {
    let frames = read_sequence(path, skeleton.n)?;
    Ok(GraphSample {
        u: signal_from_frames(&frames, skeleton.n, m, center)?,
        label: 0,
        sequence_id: path.display().to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GraphSample>,
    pub graph: SkeletonGraph,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in self.train.iter().chain(&self.test) {
            if i >= self.samples.len() {
                return Err(Error::Input(format!("split index {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::Input(format!("sample {i} appears twice in the split")));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| s.label >= self.num_classes) {
            return Err(Error::Input(format!("label {} out of range in {}", s.label, s.sequence_id)));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn signal_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.u.rows())
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    /// Writes `index.json` plus one binary payload per sample under `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("samples"))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        let split_of: BTreeMap<usize, Split> = self
            .train
            .iter()
            .map(|&i| (i, Split::Train))
            .chain(self.test.iter().map(|&i| (i, Split::Test)))
            .collect();
        for (i, s) in self.samples.iter().enumerate() {
            let file = format!("samples/{i:06}.bin");
            write_signal(&dir.join(&file), &s.u)?;
            entries.push(IndexEntry {
                id: s.sequence_id.clone(),
                label: s.label,
                split: split_of.get(&i).copied(),
                file,
                rows: s.u.rows(),
                cols: s.u.cols(),
            });
        }
        let index = DatasetIndex {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            graph: self.graph.clone(),
            samples: entries,
        };
        crate::connectivity::write_json(&dir.join("index.json"), &index)
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("index.json"))?))?;
        if index.format != DATASET_FORMAT || index.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "expected {DATASET_FORMAT} v{DATASET_VERSION}, found {} v{}",
                index.format, index.version
            )));
        }
        index.graph.validate()?;
        let mut ds = Dataset {
            samples: Vec::with_capacity(index.samples.len()),
            graph: index.graph,
            num_classes: index.num_classes,
            class_names: index.class_names,
            train: Vec::new(),
            test: Vec::new(),
        };
        for (i, e) in index.samples.into_iter().enumerate() {
            let u = read_signal(&dir.join(&e.file))?;
            if u.shape() != (e.rows, e.cols) {
                return Err(Error::Format(format!("{}: payload shape {:?} != index {:?}", e.file, u.shape(), (e.rows, e.cols))));
            }
            match e.split {
                Some(Split::Train) => ds.train.push(i),
                Some(Split::Test) => ds.test.push(i),
                None => {}
            }
            ds.samples.push(GraphSample {
                u,
                label: e.label,
                sequence_id: e.id,
            });
        }
        ds.validate()?;
        Ok(ds)
    }
}

const DATASET_FORMAT: &str = "lwgcn-dataset";
const DATASET_VERSION: u32 = 1;
const SIGNAL_MAGIC: &[u8; 4] = b"LWGU";

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    format: String,
    version: u32,
    num_classes: usize,
    class_names: Vec<String>,
    graph: SkeletonGraph,
    samples: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    label: usize,
    split: Option<Split>,
    file: String,
    rows: usize,
    cols: usize,
}

/// Binary payload: magic `LWGU`, u32 version, u32 rows, u32 cols, then
/// row-major little-endian f64 values.
pub fn write_signal(path: &Path, u: &Mat) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * u.data().len());
    buf.extend_from_slice(SIGNAL_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(u.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(u.cols() as u32).to_le_bytes());
    for v in u.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_signal(path: &Path) -> Result<Mat> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != SIGNAL_MAGIC {
        return Err(bad("not a signal payload"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if word(4) != DATASET_VERSION {
        return Err(bad("unsupported payload version"));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(bad("truncated payload"));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mat::new(rows, cols, data)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    label: String,
    split: String,
}

/// Loads a `path,label,split` CSV manifest. Relative paths resolve against the
/// manifest's directory. Class indices follow the sorted set of train labels.
pub fn load_split(manifest: &Path, skeleton: &SkeletonGraph, m: usize, center: bool) -> Result<Dataset> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(manifest).map_err(|e| Error::Manifest(format!("{}: {e}", manifest.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(Error::Manifest(format!("header must be 'path,label,split', found '{}'", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows: Vec<(Split, String, String)> = Vec::new();
    for rec in reader.deserialize() {
        let row: ManifestRow = rec?;
        rows.push((row.split.parse()?, row.path, row.label));
    }
    rows.sort();

    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    for (split, path, _) in &rows {
        if let Some(prev) = seen.insert(path.as_str(), *split) {
            return Err(Error::Manifest(if prev == *split {
                format!("sequence '{path}' listed twice in {split:?}")
            } else {
                format!("sequence '{path}' appears in both train and test")
            }));
        }
    }
    let class_names: Vec<String> = rows
        .iter()
        .filter(|r| r.0 == Split::Train)
        .map(|r| r.2.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_of: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut ds = Dataset {
        samples: Vec::with_capacity(rows.len()),
        graph: skeleton.clone(),
        num_classes: class_names.len(),
        class_names: class_names.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, path, label) in &rows {
        let Some(&cls) = class_of.get(label.as_str()) else {
            return Err(Error::Manifest(format!("label '{label}' of '{path}' does not occur in the train split")));
        };
        let full: PathBuf = if Path::new(path).is_absolute() { path.into() } else { base.join(path) };
        let mut sample = load_fpha_sequence(&full, skeleton, m, center)?;
        sample.label = cls;
        sample.sequence_id = path.clone();
        match split {
            Split::Train => ds.train.push(ds.samples.len()),
            Split::Test => ds.test.push(ds.samples.len()),
        }
        ds.samples.push(sample);
    }
    if ds.train.is_empty() {
        return Err(Error::Manifest("train split is empty".into()));
    }
    if ds.test.is_empty() {
        return Err(Error::Manifest("test split is empty; evaluation impossible".into()));
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub n: usize,
    pub per_class: usize,
    pub noise: f64,
    pub seed: u64,
    pub frames: usize,
    pub chunks: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            n: 12,
            per_class: 20,
            noise: 0.05,
            seed: 0,
            frames: 32,
            chunks: DEFAULT_CHUNKS,
        }
    }
}

struct JointMotion {
    joint: usize,
    amplitude: [f64; 3],
    freq: f64,
    phase: f64,
}

/// Seeded stand-in for a skeleton action dataset. Every class moves its own
/// random subset of joints sinusoidally over a shared chain-plus-random-edges
/// skeleton; samples differ only by Gaussian coordinate noise. The first half
/// of each class goes to train, the rest to test.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 || cfg.n < 2 || cfg.per_class < 2 {
        return Err(Error::Input("synthetic data needs >= 2 classes, >= 2 joints and >= 2 samples per class".into()));
    }
    if cfg.frames == 0 || cfg.chunks == 0 {
        return Err(Error::Input("frames and chunks must be >= 1".into()));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::Input("noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;

    let mut graph = SkeletonGraph::chain(n);
    let mut present: BTreeSet<(usize, usize)> = graph.edges.iter().copied().collect();
    for _ in 0..n / 3 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && present.insert(e) {
            graph.edges.push(e);
        }
    }

    // rest pose: a random walk along the chain
    let mut base = vec![[0.0; 3]; n];
    for j in 1..n {
        for d in 0..3 {
            base[j][d] = base[j - 1][d] + rng.random_range(-1.0..1.0);
        }
    }

    let movers = (n / 3).max(1);
    let mut used_sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut classes: Vec<Vec<JointMotion>> = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut joints: Vec<usize> = (0..n).collect();
        let set = loop {
            joints.shuffle(&mut rng);
            let mut pick = joints[..movers].to_vec();
            pick.sort_unstable();
            if used_sets.insert(pick.clone()) || used_sets.len() >= binomial(n, movers) {
                break pick;
            }
        };
        classes.push(
            set.into_iter()
                .map(|joint| JointMotion {
                    joint,
                    amplitude: [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    freq: rng.random_range(0.5..2.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect(),
        );
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ds = Dataset {
        samples: Vec::with_capacity(cfg.num_classes * cfg.per_class),
        graph,
        num_classes: cfg.num_classes,
        class_names: (0..cfg.num_classes).map(|c| format!("class{c}")).collect(),
        train: Vec::new(),
        test: Vec::new(),
    };
    let half = cfg.per_class / 2;
    for (label, motions) in classes.iter().enumerate() {
        for rep in 0..cfg.per_class {
            let frames: Vec<Vec<[f64; 3]>> = (0..cfg.frames)
                .map(|t| {
                    let time = t as f64 / cfg.frames.max(2).saturating_sub(1) as f64;
                    let mut pose = base.clone();
                    for mo in motions {
                        let s = (std::f64::consts::TAU * mo.freq * time + mo.phase).sin();
                        for d in 0..3 {
                            pose[mo.joint][d] += mo.amplitude[d] * s;
                        }
                    }
                    for p in &mut pose {
                        for v in p.iter_mut() {
                            *v += cfg.noise * normal.sample(&mut rng);
                        }
                    }
                    pose
                })
                .collect();
            let idx = ds.samples.len();
            if rep < half {
                ds.train.push(idx);
            } else {
                ds.test.push(idx);
            }
            ds.samples.push(GraphSample {
                u: signal_from_frames(&frames, n, cfg.chunks, false)?,
                label,
                sequence_id: format!("synth-c{label}-r{rep}"),
            });
        }
    }
    Ok(ds)
}

fn binomial(n: usize, k: usize) -> usize {
    let mut r: usize = 1;
    for i in 0..k.min(n - k) {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::colsum;

    #[test]
    fn chunking_constant_trajectory() {
        let t = Trajectory::uniform(vec![[1.0, -2.0, 0.5]; 7]).unwrap();
        assert_eq!(temporal_chunking(&t, 3).unwrap(), [1.0, -2.0, 0.5].repeat(3));
    }

    #[test]
    fn chunking_one_point_per_chunk() {
        let pts: Vec<[f64; 3]> = (0..4).map(|i| [i as f64, 10.0 * i as f64, -(i as f64)]).collect();
        let t = Trajectory::uniform(pts.clone()).unwrap();
        let expected: Vec<f64> = pts.iter().flatten().copied().collect();
        assert_eq!(temporal_chunking(&t, 4).unwrap(), expected);
    }

    #[test]
    fn chunking_short_sequence_inherits() {
        let t = Trajectory::uniform(vec![[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]).unwrap();
        // span [0,1]: t=0 -> chunk 0, t=1 -> chunk 3; chunks 1,2 inherit chunk 0
        assert_eq!(
            temporal_chunking(&t, 4).unwrap(),
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 3.0, 2.0, 1.0]
        );
        assert!(temporal_chunking(&t, 0).is_err());
        assert!(Trajectory::uniform(vec![]).is_err());
    }

    #[test]
    fn handcrafted_cases() {
        assert_eq!(handcrafted_adjacency(&SkeletonGraph::new(4, vec![]).unwrap()), Mat::identity(4));
        let two = handcrafted_adjacency(&SkeletonGraph::new(2, vec![(0, 1)]).unwrap());
        assert_eq!(two, Mat::filled(2, 2, 0.5));
        let hand = handcrafted_adjacency(&SkeletonGraph::hand21());
        assert!(colsum(&hand).iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(hand.data().iter().all(|&v| v >= 0.0));
        assert!(SkeletonGraph::new(3, vec![(0, 3)]).is_err());
        assert!(SkeletonGraph::new(3, vec![(1, 1)]).is_err());
    }

    #[test]
    fn power_map_cases() {
        let id = power_map_basis(&Mat::identity(3), 4).unwrap();
        assert!(id.mats().iter().all(|m| *m == Mat::identity(3)));
        let a = Mat::from_rows(&[&[0.2, 0.7], &[0.8, 0.3]]);
        let one = power_map_basis(&a, 1).unwrap();
        assert_eq!(one.k(), 1);
        assert_eq!(one.mat(0), a);
        assert!(power_map_basis(&Mat::zeros(2, 3), 2).is_err());
    }

    #[test]
    fn hand_skeleton_shape() {
        let h = SkeletonGraph::hand21();
        assert_eq!(h.n, 21);
        assert_eq!(h.edges.len(), 20);
        h.validate().unwrap();
    }

    #[test]
    fn synth_is_deterministic_and_noise_free_duplicates() {
        let cfg = SynthConfig {
            num_classes: 3,
            n: 6,
            per_class: 4,
            noise: 0.1,
            seed: 9,
            ..SynthConfig::default()
        };
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());

        let clean = synth_dataset(&SynthConfig { noise: 0.0, per_class: 2, ..cfg }).unwrap();
        for c in 0..3 {
            let tr = clean.train.iter().find(|&&i| clean.samples[i].label == c).unwrap();
            let te = clean.test.iter().find(|&&i| clean.samples[i].label == c).unwrap();
            assert_eq!(clean.samples[*tr].u, clean.samples[*te].u);
        }
        assert_eq!(clean.train.len(), 3);
        assert_eq!(clean.test.len(), 3);
        assert_eq!(clean.signal_dim(), 12);
    }

    #[test]
    fn signal_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let u = Mat::from_fn(12, 5, |i, j| (i as f64 * 0.1 - j as f64).sin());
        let p = dir.path().join("u.bin");
        write_signal(&p, &u).unwrap();
        assert_eq!(read_signal(&p).unwrap(), u);
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(read_signal(&p), Err(Error::Format(_))));
    }
}
