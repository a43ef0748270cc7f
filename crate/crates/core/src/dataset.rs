//! Training data: NOM solutions over a grid of states and a list of references.
//!
//! File layout (UTF-8, one item per line):
//!
//! ```text
//! #nomd schema=1
//! key=value          (meta block)
//!
//! x1,..,xn,r1,..,rm,u1,..,uq,p11,p12,..,pnn,loss,objective,g1,g2,feasible,start_index,epochs_used
//! one CSV record per grid point
//! ```
//!
//! `P` parameters are the upper triangle in row-major order. Numbers are
//! written with 17 significant digits so every value round-trips exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nom::{nom_solve, NomConfig, NomSolution};
use crate::ocp::{self, LossTerms, OcpInstance, OcpPoint, OcpWeights, SymmetricMatrix};
use crate::plant::{solve_steady_state, PlantModel, SteadyStateTarget};
use crate::rng::{derive_seed, seeded_rng};

pub const SCHEMA_VERSION: u32 = 1;
const SENTINEL: &str = "#nomd";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub x: DVector<f64>,
    pub r: DVector<f64>,
    pub u: DVector<f64>,
    pub p: SymmetricMatrix,
    pub loss: f64,
    pub objective: f64,
    pub g1: f64,
    pub g2: f64,
    pub feasible: bool,
    pub start_index: usize,
    pub epochs_used: usize,
}

impl TrainingRecord {
    pub fn from_solution(x: &DVector<f64>, r: &DVector<f64>, sol: &NomSolution) -> Self {
        Self {
            x: x.clone(),
            r: r.clone(),
            u: sol.u_star.clone(),
            p: sol.p_star.clone(),
            loss: sol.loss,
            objective: sol.objective,
            g1: sol.g1,
            g2: sol.g2,
            feasible: sol.feasible,
            start_index: sol.start_index,
            epochs_used: sol.epochs_used,
        }
    }

    /// Placeholder for a point whose solve failed.
    fn failed(x: &DVector<f64>, r: &DVector<f64>, q: usize) -> Self {
        let n = x.len();
        Self {
            x: x.clone(),
            r: r.clone(),
            u: DVector::zeros(q),
            p: SymmetricMatrix::identity(n),
            loss: f64::INFINITY,
            objective: f64::INFINITY,
            g1: f64::INFINITY,
            g2: f64::INFINITY,
            feasible: false,
            start_index: 0,
            epochs_used: 0,
        }
    }

    pub fn point(&self) -> OcpPoint {
        OcpPoint::new(self.u.clone(), self.p.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub model: String,
    pub n: usize,
    pub q: usize,
    pub m: usize,
    /// State grid counts per dimension; `Nx` is their product.
    pub grid: Vec<usize>,
    pub refs: Vec<DVector<f64>>,
    pub weights: OcpWeights,
    pub nom_digest: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

impl DatasetMeta {
    pub fn nx(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn nr(&self) -> usize {
        self.refs.len()
    }

    pub fn expected_records(&self) -> usize {
        self.nx() * self.nr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<TrainingRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when every grid point and reference has a record.
    pub fn is_complete(&self) -> bool {
        self.records.len() == self.meta.expected_records()
    }

    pub fn feasible_records(&self) -> impl Iterator<Item = &TrainingRecord> {
        self.records.iter().filter(|r| r.feasible)
    }

    pub fn feasible_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.feasible_records().count() as f64 / self.records.len() as f64
    }

    /// Copy holding only the feasible records.
    pub fn feasible_only(&self) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            records: self.feasible_records().cloned().collect(),
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Steady states of every reference; `None` where none is admissible.
fn targets_for(model: &PlantModel, refs: &[DVector<f64>]) -> Vec<Option<SteadyStateTarget>> {
    let guess = (DVector::zeros(model.n()), DVector::zeros(model.q()));
    refs.iter()
        .map(|r| match solve_steady_state(model, r, (&guess.0, &guess.1)) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("reference {:?}: {e}", r.as_slice());
                None
            }
        })
        .collect()
}

/// Solves every `(grid point, reference)` pair with NOM.
///
/// Records are ordered row-major over the grid with references varying fastest.
/// Point `(i, j)` uses the NOM seed `derive_seed(seed, [i, j])`. Failed points
/// are kept with `feasible = false` and infinite loss.
pub fn generate(
    model: &PlantModel,
    refs: &[DVector<f64>],
    grid: &[usize],
    weights: &OcpWeights,
    nom: &NomConfig,
    seed: u64,
) -> Result<Dataset> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("at least one reference is required".into()));
    }
    if refs.iter().any(|r| r.len() != model.m()) {
        return Err(Error::InvalidInput(format!("references must have {} entries", model.m())));
    }
    weights.validate()?;
    nom.validate()?;
    let states = model.operating_region.grid(grid)?;
    let targets = targets_for(model, refs);
    let nr = refs.len();

    let records: Vec<TrainingRecord> = (0..states.len() * nr)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nr, k % nr);
            let (x, r) = (&states[i], &refs[j]);
            let Some(target) = &targets[j] else {
                return TrainingRecord::failed(x, r, model.q());
            };
            let cfg = NomConfig {
                seed: derive_seed(seed, &[i as u64, j as u64]),
                ..nom.clone()
            };
            match OcpInstance::at(model, x, target, weights).and_then(|inst| nom_solve(&inst, &cfg)) {
                Ok(sol) => TrainingRecord::from_solution(x, r, &sol),
                Err(e) => {
                    log::warn!("point {:?}, reference {:?}: {e}", x.as_slice(), r.as_slice());
                    TrainingRecord::failed(x, r, model.q())
                }
            }
        })
        .collect();

    Ok(Dataset {
        meta: DatasetMeta {
            schema_version: SCHEMA_VERSION,
            model: model.name.clone(),
            n: model.n(),
            q: model.q(),
            m: model.m(),
            grid: grid.to_vec(),
            refs: refs.to_vec(),
            weights: weights.clone(),
            nom_digest: nom.digest(),
            seed,
            created: now_secs(),
        },
        records,
    })
}

/// Loss terms recomputed from scratch for every record; `None` where the
/// record's reference has no admissible steady state or evaluation fails.
pub fn reevaluate(ds: &Dataset, model: &PlantModel) -> Vec<Option<LossTerms>> {
    let mut cache: HashMap<Vec<u64>, Option<SteadyStateTarget>> = HashMap::new();
    for rec in &ds.records {
        let key: Vec<u64> = rec.r.iter().map(|v| v.to_bits()).collect();
        cache
            .entry(key)
            .or_insert_with(|| targets_for(model, std::slice::from_ref(&rec.r)).pop().flatten());
    }
    ds.records
        .par_iter()
        .map(|rec| {
            let key: Vec<u64> = rec.r.iter().map(|v| v.to_bits()).collect();
            let target = cache[&key].as_ref()?;
            let inst = OcpInstance::at(model, &rec.x, target, &ds.meta.weights).ok()?;
            ocp::evaluate(&inst, &rec.point()).ok()
        })
        .collect()
}

/// Seeded shuffle, then the first `floor(fraction · len)` records go to training.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..ds.records.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let n_train = (train_fraction * ds.records.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| Dataset {
        meta: ds.meta.clone(),
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// 17 significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

fn join_nums<'a>(it: impl IntoIterator<Item = &'a f64>) -> String {
    it.into_iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(",")
}

fn parse_nums(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(parse_num).collect()
}

pub fn column_names(n: usize, m: usize, q: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    cols.extend((1..=m).map(|i| format!("r{i}")));
    cols.extend((1..=q).map(|i| format!("u{i}")));
    for i in 1..=n {
        cols.extend((i..=n).map(|j| format!("p{i}{j}")));
    }
    cols.extend(
        ["loss", "objective", "g1", "g2", "feasible", "start_index", "epochs_used"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

pub fn to_text(ds: &Dataset) -> String {
    let m = &ds.meta;
    let mut out = String::new();
    let _ = writeln!(out, "{SENTINEL} schema={}", m.schema_version);
    let _ = writeln!(out, "model={}", m.model);
    let _ = writeln!(out, "n={}", m.n);
    let _ = writeln!(out, "q={}", m.q);
    let _ = writeln!(out, "m={}", m.m);
    let grid: Vec<String> = m.grid.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "grid={}", grid.join("x"));
    let refs: Vec<String> = m.refs.iter().map(|r| join_nums(r.iter())).collect();
    let _ = writeln!(out, "refs={}", refs.join(";"));
    let _ = writeln!(out, "records={}", ds.records.len());
    let _ = writeln!(out, "qx={}", join_nums(m.weights.qx.transpose().iter()));
    let _ = writeln!(out, "qu={}", join_nums(m.weights.qu.transpose().iter()));
    let _ = writeln!(out, "theta={}", fmt_num(m.weights.theta));
    let _ = writeln!(out, "c={}", fmt_num(m.weights.penalty_c));
    let _ = writeln!(out, "nom={}", m.nom_digest);
    let _ = writeln!(out, "seed={}", m.seed);
    let _ = writeln!(out, "created={}", m.created);
    out.push('\n');
    out.push_str(&column_names(m.n, m.m, m.q).join(","));
    out.push('\n');
    for rec in &ds.records {
        out.push_str(&record_row(rec));
        out.push('\n');
    }
    out
}

/// One comma-separated record line in [`column_names`] order.
pub fn record_row(rec: &TrainingRecord) -> String {
    let mut fields: Vec<String> = rec
        .x
        .iter()
        .chain(rec.r.iter())
        .chain(rec.u.iter())
        .chain(rec.p.params())
        .chain([rec.loss, rec.objective, rec.g1, rec.g2].iter())
        .map(|v| fmt_num(*v))
        .collect();
    fields.push(u8::from(rec.feasible).to_string());
    fields.push(rec.start_index.to_string());
    fields.push(rec.epochs_used.to_string());
    fields.join(",")
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_text(ds))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    from_text(&std::fs::read_to_string(path)?)
}

fn square(vals: Vec<f64>, what: &str) -> Result<DMatrix<f64>> {
    let k = (vals.len() as f64).sqrt().round() as usize;
    if k * k != vals.len() || k == 0 {
        return Err(Error::CorruptDataset(format!("{what} is not a square matrix")));
    }
    Ok(DMatrix::from_row_slice(k, k, &vals))
}

pub fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::CorruptDataset("empty file".into()))?;
    let version = header
        .strip_prefix(SENTINEL)
        .and_then(|rest| rest.trim().strip_prefix("schema="))
        .ok_or_else(|| Error::SchemaError(format!("not a dataset file (header '{header}')")))?;
    let version: u32 = version
        .parse()
        .map_err(|_| Error::SchemaError(format!("bad schema version '{version}'")))?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaError(format!(
            "schema version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }

    let mut kv: HashMap<String, String> = HashMap::new();
    let mut ended = false;
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            ended = true;
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptDataset(format!("malformed meta line '{line}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    if !ended {
        return Err(Error::CorruptDataset("meta block is not terminated".into()));
    }
    let get = |k: &str| -> Result<&str> {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::CorruptDataset(format!("missing meta key '{k}'")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::CorruptDataset(format!("meta key '{k}' is not an integer")))
    };
    let num = |k: &str| -> Result<f64> {
        parse_num(get(k)?).ok_or_else(|| Error::CorruptDataset(format!("meta key '{k}' is not a number")))
    };
    let nums = |k: &str| -> Result<Vec<f64>> {
        parse_nums(get(k)?).ok_or_else(|| Error::CorruptDataset(format!("meta key '{k}' is malformed")))
    };

    let (n, q, m) = (int("n")? as usize, int("q")? as usize, int("m")? as usize);
    let grid: Vec<usize> = get("grid")?
        .split('x')
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CorruptDataset("malformed grid".into()))?;
    let refs: Vec<DVector<f64>> = get("refs")?
        .split(';')
        .map(|s| parse_nums(s).map(DVector::from_vec))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::CorruptDataset("malformed refs".into()))?;
    if refs.iter().any(|r| r.len() != m) {
        return Err(Error::CorruptDataset("reference length disagrees with m".into()));
    }
    let declared = int("records")? as usize;
    let weights = OcpWeights {
        qx: square(nums("qx")?, "qx")?,
        qu: square(nums("qu")?, "qu")?,
        theta: num("theta")?,
        penalty_c: num("c")?,
    };
    let meta = DatasetMeta {
        schema_version: version,
        model: get("model")?.to_string(),
        n,
        q,
        m,
        grid,
        refs,
        weights,
        nom_digest: get("nom")?.to_string(),
        seed: int("seed")?,
        created: int("created")?,
    };

    let expected_cols = column_names(n, m, q);
    let col_line = lines
        .next()
        .ok_or_else(|| Error::CorruptDataset("missing column header".into()))?;
    if col_line.split(',').map(str::trim).ne(expected_cols.iter().map(String::as_str)) {
        return Err(Error::SchemaError(format!("unexpected column header '{col_line}'")));
    }

    let np = SymmetricMatrix::param_count(n);
    let mut records = Vec::with_capacity(declared);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols.len() {
            return Err(Error::CorruptDataset(format!(
                "record {} has {} columns, expected {}",
                lineno + 1,
                fields.len(),
                expected_cols.len()
            )));
        }
        let bad = || Error::CorruptDataset(format!("record {} is malformed", lineno + 1));
        let floats: Vec<f64> = fields[..n + m + q + np + 4]
            .iter()
            .map(|f| parse_num(f))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        let tail = &fields[n + m + q + np + 4..];
        let feasible = match tail[0].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let (x, rest) = floats.split_at(n);
        let (r, rest) = rest.split_at(m);
        let (u, rest) = rest.split_at(q);
        let (p, rest) = rest.split_at(np);
        records.push(TrainingRecord {
            x: DVector::from_column_slice(x),
            r: DVector::from_column_slice(r),
            u: DVector::from_column_slice(u),
            p: SymmetricMatrix::new(n, p.to_vec())?,
            loss: rest[0],
            objective: rest[1],
            g1: rest[2],
            g2: rest[3],
            feasible,
            start_index: tail[1].trim().parse().map_err(|_| bad())?,
            epochs_used: tail[2].trim().parse().map_err(|_| bad())?,
        });
    }
    if records.len() != declared {
        return Err(Error::CorruptDataset(format!(
            "meta declares {declared} records but {} were found",
            records.len()
        )));
    }
    Ok(Dataset { meta, records })
}
