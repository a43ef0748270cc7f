//! `RunConfig`: flat `key = value` text grouped under `[section]` headers.
//! Lines starting with `#` or `;` are comments. Every key can also be set
//! from the command line as `section.key=value`.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use nomctl_core::nom::{Interval, NomConfig, StepSchedule};
use nomctl_core::neural::TrainConfig;
use nomctl_core::ocp::OcpWeights;
use nomctl_core::plant::BENCHMARK_NAME;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': '{value}'")]
    BadValue { key: String, value: String },
}

type Res<T> = std::result::Result<T, ConfigError>;

/// A weight matrix given either by its diagonal or row-major in full.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Diag(Vec<f64>),
    Dense(Vec<f64>),
}

impl WeightSpec {
    pub fn to_matrix(&self, dim: usize) -> Option<DMatrix<f64>> {
        match self {
            WeightSpec::Diag(d) if d.len() == dim => Some(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            WeightSpec::Dense(v) if v.len() == dim * dim => Some(DMatrix::from_row_slice(dim, dim, v)),
            _ => None,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.strip_prefix("diag:") {
            Some(rest) => parse_list(rest).map(WeightSpec::Diag),
            None => parse_list(s).map(WeightSpec::Dense),
        }
    }

    fn render(&self) -> String {
        match self {
            WeightSpec::Diag(d) => format!("diag:{}", render_list(d)),
            WeightSpec::Dense(v) => render_list(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Nom,
    Nn,
    Ilqr,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nom" => Some(Self::Nom),
            "nn" => Some(Self::Nn),
            "ilqr" => Some(Self::Ilqr),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Nom => "nom",
            Self::Nn => "nn",
            Self::Ilqr => "ilqr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSection {
    pub qx: WeightSpec,
    pub qu: WeightSpec,
    pub theta: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub grid: usize,
    pub rounds: usize,
    pub shrink: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub controller: ControllerKind,
    pub x0: Vec<f64>,
    pub r: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub grid: Vec<usize>,
    pub refs: Vec<Vec<f64>>,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSection {
    pub dataset: PathBuf,
    pub net: PathBuf,
    pub trace: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub seed: u64,
    pub ocp: OcpSection,
    /// `nom.seed` is not read from the file; commands derive it from `seed`.
    pub nom: NomConfig,
    pub oracle: OracleSection,
    /// `train.seed` is likewise derived from `seed`.
    pub train: TrainConfig,
    pub sim: SimSection,
    pub data: DataSection,
    pub paths: PathSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = OcpWeights::benchmark();
        Self {
            model: BENCHMARK_NAME.to_string(),
            seed: 0,
            ocp: OcpSection {
                qx: WeightSpec::Diag(w.qx.diagonal().iter().copied().collect()),
                qu: WeightSpec::Diag(w.qu.diagonal().iter().copied().collect()),
                theta: w.theta,
                c: w.penalty_c,
            },
            nom: NomConfig::default(),
            oracle: OracleSection {
                grid: 9,
                rounds: 6,
                shrink: 0.35,
            },
            train: TrainConfig::default(),
            sim: SimSection {
                controller: ControllerKind::Nom,
                x0: vec![1.0, 0.0],
                r: vec![0.0],
                steps: 100,
            },
            data: DataSection {
                grid: vec![21, 21],
                refs: vec![vec![0.0]],
                train_fraction: 0.8,
            },
            paths: PathSection {
                dataset: "ds.nomd".into(),
                net: "net.nomw".into(),
                trace: "trace.csv".into(),
                out_dir: ".".into(),
            },
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|v| v.trim().parse::<f64>().ok()).collect()
}

fn parse_usizes(s: &str, sep: char) -> Option<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(sep).map(|v| v.trim().parse::<usize>().ok()).collect()
}

fn render_f(v: f64) -> String {
    format!("{v:?}")
}

fn render_list(v: &[f64]) -> String {
    v.iter().map(|x| render_f(*x)).collect::<Vec<_>>().join(",")
}

fn render_usizes(v: &[usize], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn parse_interval(s: &str) -> Option<Interval> {
    match parse_list(s)?.as_slice() {
        [lo, hi] => Some(Interval::new(*lo, *hi)),
        _ => None,
    }
}

fn render_interval(iv: Interval) -> String {
    render_list(&[iv.lo, iv.hi])
}

/// Parses the value of a list of vectors, e.g. `0;1.5` or `0,1;2,3`.
pub fn parse_vectors(s: &str) -> Option<Vec<Vec<f64>>> {
    s.split(';').map(parse_list).collect()
}

/// Parses `21x21`.
pub fn parse_grid(s: &str) -> Option<Vec<usize>> {
    parse_usizes(s, 'x').filter(|g| !g.is_empty())
}

impl RunConfig {
    pub fn parse(text: &str) -> Res<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: i + 1,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim())?;
        }
        Ok(cfg)
    }

    /// Assigns one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Res<()> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<usize>().map_err(|_| bad());
        let list = || parse_list(value).ok_or_else(bad);
        let iv = || parse_interval(value).ok_or_else(bad);
        match key {
            "run.model" => self.model = value.to_string(),
            "run.seed" => self.seed = value.parse().map_err(|_| bad())?,
            "ocp.qx" => self.ocp.qx = WeightSpec::parse(value).ok_or_else(bad)?,
            "ocp.qu" => self.ocp.qu = WeightSpec::parse(value).ok_or_else(bad)?,
            "ocp.theta" => self.ocp.theta = f()?,
            "ocp.c" => self.ocp.c = f()?,
            "nom.starts" => self.nom.num_starts = u()?,
            "nom.epochs" => self.nom.epochs = u()?,
            "nom.lr" => self.nom.learning_rate = f()?,
            "nom.schedule" => self.nom.schedule = StepSchedule::parse(value).map_err(|_| bad())?,
            "nom.eps_init" => self.nom.eps_init = f()?,
            "nom.cells" => self.nom.cell_grid = parse_usizes(value, ',').ok_or_else(bad)?,
            "nom.clip" => {
                self.nom.grad_clip = if value == "none" { None } else { Some(f()?) };
            }
            "nom.u_box" => self.nom.search.u = iv()?,
            "nom.p_diag_box" => self.nom.search.p_diag = iv()?,
            "nom.p_off_box" => self.nom.search.p_off = iv()?,
            "oracle.grid" => self.oracle.grid = u()?,
            "oracle.rounds" => self.oracle.rounds = u()?,
            "oracle.shrink" => self.oracle.shrink = f()?,
            "train.hidden" => self.train.hidden = parse_usizes(value, ',').ok_or_else(bad)?,
            "train.epochs" => self.train.epochs = u()?,
            "train.batch" => self.train.batch_size = u()?,
            "train.lr_max" => self.train.lr_max = f()?,
            "train.lr_min" => self.train.lr_min = f()?,
            "train.beta1" => self.train.beta1 = f()?,
            "train.beta2" => self.train.beta2 = f()?,
            "train.adam_eps" => self.train.adam_eps = f()?,
            "train.dropout" => self.train.dropout_rate = f()?,
            "train.target_mse" => self.train.target_mse = f()?,
            "train.growth" => {
                self.train.growth_schedule = value
                    .split(';')
                    .map(|s| parse_usizes(s, ','))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
            }
            "sim.controller" => self.sim.controller = ControllerKind::parse(value).ok_or_else(bad)?,
            "sim.x0" => self.sim.x0 = list()?,
            "sim.r" => self.sim.r = list()?,
            "sim.steps" => self.sim.steps = u()?,
            "data.grid" => self.data.grid = parse_grid(value).ok_or_else(bad)?,
            "data.refs" => self.data.refs = parse_vectors(value).ok_or_else(bad)?,
            "data.train_fraction" => self.data.train_fraction = f()?,
            "paths.dataset" => self.paths.dataset = value.into(),
            "paths.net" => self.paths.net = value.into(),
            "paths.trace" => self.paths.trace = value.into(),
            "paths.out_dir" => self.paths.out_dir = value.into(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut sec = |name: &str, kv: &[(&str, String)]| {
            let _ = writeln!(o, "[{name}]");
            for (k, v) in kv {
                let _ = writeln!(o, "{k} = {v}");
            }
            o.push('\n');
        };
        sec("run", &[("model", self.model.clone()), ("seed", self.seed.to_string())]);
        sec(
            "ocp",
            &[
                ("qx", self.ocp.qx.render()),
                ("qu", self.ocp.qu.render()),
                ("theta", render_f(self.ocp.theta)),
                ("c", render_f(self.ocp.c)),
            ],
        );
        let n = &self.nom;
        sec(
            "nom",
            &[
                ("starts", n.num_starts.to_string()),
                ("epochs", n.epochs.to_string()),
                ("lr", render_f(n.learning_rate)),
                ("schedule", render_schedule(n.schedule)),
                ("eps_init", render_f(n.eps_init)),
                ("cells", render_usizes(&n.cell_grid, ",")),
                ("clip", n.grad_clip.map_or("none".to_string(), render_f)),
                ("u_box", render_interval(n.search.u)),
                ("p_diag_box", render_interval(n.search.p_diag)),
                ("p_off_box", render_interval(n.search.p_off)),
            ],
        );
        sec(
            "oracle",
            &[
                ("grid", self.oracle.grid.to_string()),
                ("rounds", self.oracle.rounds.to_string()),
                ("shrink", render_f(self.oracle.shrink)),
            ],
        );
        let t = &self.train;
        let growth: Vec<String> = t.growth_schedule.iter().map(|h| render_usizes(h, ",")).collect();
        sec(
            "train",
            &[
                ("hidden", render_usizes(&t.hidden, ",")),
                ("epochs", t.epochs.to_string()),
                ("batch", t.batch_size.to_string()),
                ("lr_max", render_f(t.lr_max)),
                ("lr_min", render_f(t.lr_min)),
                ("beta1", render_f(t.beta1)),
                ("beta2", render_f(t.beta2)),
                ("adam_eps", render_f(t.adam_eps)),
                ("dropout", render_f(t.dropout_rate)),
                ("target_mse", render_f(t.target_mse)),
                ("growth", growth.join(";")),
            ],
        );
        sec(
            "sim",
            &[
                ("controller", self.sim.controller.tag().to_string()),
                ("x0", render_list(&self.sim.x0)),
                ("r", render_list(&self.sim.r)),
                ("steps", self.sim.steps.to_string()),
            ],
        );
        let refs: Vec<String> = self.data.refs.iter().map(|r| render_list(r)).collect();
        sec(
            "data",
            &[
                ("grid", render_usizes(&self.data.grid, "x")),
                ("refs", refs.join(";")),
                ("train_fraction", render_f(self.data.train_fraction)),
            ],
        );
        let p = &self.paths;
        sec(
            "paths",
            &[
                ("dataset", p.dataset.display().to_string()),
                ("net", p.net.display().to_string()),
                ("trace", p.trace.display().to_string()),
                ("out_dir", p.out_dir.display().to_string()),
            ],
        );
        o
    }

    pub fn weights(&self, n: usize, q: usize) -> Option<OcpWeights> {
        Some(OcpWeights {
            qx: self.ocp.qx.to_matrix(n)?,
            qu: self.ocp.qu.to_matrix(q)?,
            theta: self.ocp.theta,
            penalty_c: self.ocp.c,
        })
    }
}

fn render_schedule(s: StepSchedule) -> String {
    match s {
        StepSchedule::Constant => "constant".into(),
        StepSchedule::Cosine { final_lr } => format!("cosine:{}", render_f(final_lr)),
        StepSchedule::Geometric { final_lr } => format!("geometric:{}", render_f(final_lr)),
    }
}
