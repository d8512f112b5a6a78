//! File formats.
//!
//! Every reader here accepts untrusted bytes: malformed input is an
//! [`IoError`], never a panic, and declared lengths are checked against the
//! bytes actually present before anything is allocated.
//!
//! # Checkpoint (`.hpck`, binary, little endian)
//!
//! ```text
//! magic      4 bytes  "HPCK"
//! version    u32      1
//! input_dim  u32
//! n_hidden   u32, then n_hidden × u32 widths
//! groups     u32      M
//! components u32      C
//! process    u32
//! k          u32
//! n_lambda   u32, then n_lambda × f64
//! n_params   u64, then n_params × f64   (must equal the size implied by the header)
//! has_adam   u8       0 or 1
//! if 1:      t u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!            n u64, then n × f64 first moments and n × f64 second moments
//! ```
//!
//! # Solution table (text, one item per line)
//!
//! ```text
//! hompinn-solution-table 1
//! problem <name>
//! lambda <v> <v> ...
//! grid line|square <n>
//! components <C>
//! solutions <count>
//! solution <index> <residual_rms>
//! <all field values, component-major, space separated>
//! ...
//! ```
//!
//! Reals are written in Rust's shortest round-trip form, so every format
//! here round-trips bit-exactly.
//!
//! # Observations (CSV)
//!
//! Header `x,u` in 1D and `x,y,A,S` for Gray-Scott, one row per
//! observation. Generation metadata lives in a JSON sidecar.
//!
//! # Training record (CSV)
//!
//! `process,k,alpha,<lambda labels>,err_<label>...,train_loss,test_loss,wall_time_s`;
//! `test_loss` is empty when no test set was used and the `err_` columns
//! are absent without ground truth.

use std::io::{Read, Write};

use crate::network::{MlpConfig, NetworkParams};
use crate::optimizer::{AdamHyper, AdamState};
use crate::oracle::{Grid, ObservationSet, SolutionField, SolutionTable};
use crate::problems::ProblemKind;
use crate::trainer::{RecordRow, TrainingRecord};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

fn bad<T>(what: &'static str, detail: impl Into<String>) -> Result<T, IoError> {
    Err(IoError::Format {
        what,
        detail: detail.into(),
    })
}

/// Largest network accepted from a checkpoint header.
const MAX_LAYERS: usize = 64;
const CHECKPOINT_MAGIC: &[u8; 4] = b"HPCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Network, λ and optimizer state at the end of a homotopy step.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub process: usize,
    pub k: usize,
    pub params: NetworkParams,
    pub lambda: Vec<f64>,
    pub adam: Option<AdamState>,
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let cfg = cp.params.config();
    let mut out = Vec::new();
    let u32_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f64s = |out: &mut Vec<u8>, v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    u32_(&mut out, CHECKPOINT_VERSION as usize);
    u32_(&mut out, cfg.input_dim);
    u32_(&mut out, cfg.hidden_widths.len());
    for &w in &cfg.hidden_widths {
        u32_(&mut out, w);
    }
    u32_(&mut out, cfg.output_groups);
    u32_(&mut out, cfg.components_per_group);
    u32_(&mut out, cp.process);
    u32_(&mut out, cp.k);
    u32_(&mut out, cp.lambda.len());
    f64s(&mut out, &cp.lambda);
    out.extend_from_slice(&(cp.params.values().len() as u64).to_le_bytes());
    f64s(&mut out, cp.params.values());
    match &cp.adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&a.t.to_le_bytes());
            let h = a.hyper;
            f64s(&mut out, &[h.lr, h.beta1, h.beta2, h.eps]);
            out.extend_from_slice(&(a.m.len() as u64).to_le_bytes());
            f64s(&mut out, &a.m);
            f64s(&mut out, &a.v);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.bytes.len() < n {
            return bad("checkpoint", "truncated");
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, IoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn f64s(&mut self, n: u64) -> Result<Vec<f64>, IoError> {
        let n = usize::try_from(n).or_else(|_| bad("checkpoint", "length overflow"))?;
        if n > self.bytes.len() / 8 {
            return bad("checkpoint", format!("declares {n} reals, only {} bytes left", self.bytes.len()));
        }
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, IoError> {
    let mut c = Cursor { bytes };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return bad("checkpoint", "bad magic");
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return bad("checkpoint", format!("unsupported version {version}"));
    }
    let input_dim = c.u32()?;
    let n_hidden = c.u32()?;
    if n_hidden > MAX_LAYERS {
        return bad("checkpoint", format!("{n_hidden} hidden layers"));
    }
    let widths = (0..n_hidden).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
    let groups = c.u32()?;
    let comps = c.u32()?;
    let config = MlpConfig::new(input_dim, widths, groups, comps)
        .or_else(|e| bad("checkpoint", e.to_string()))?;
    let process = c.u32()?;
    let k = c.u32()?;
    let n_lambda = c.u32()?;
    let lambda = c.f64s(n_lambda as u64)?;
    let n_params = c.u64()?;
    // config validation already rejected sizes that overflow
    let expected = config.parameter_count();
    if n_params != expected as u64 {
        return bad("checkpoint", format!("{n_params} parameters, header implies {expected}"));
    }
    let values = c.f64s(n_params)?;
    let params = NetworkParams::from_values(config, values).or_else(|e| bad("checkpoint", e.to_string()))?;
    let adam = match c.u8()? {
        0 => None,
        1 => {
            let t = c.u64()?;
            let h = c.f64s(4)?;
            let n = c.u64()?;
            let m = c.f64s(n)?;
            let v = c.f64s(n)?;
            Some(AdamState {
                m,
                v,
                t,
                hyper: AdamHyper {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                },
            })
        }
        f => return bad("checkpoint", format!("adam flag {f}")),
    };
    if !c.bytes.is_empty() {
        return bad("checkpoint", format!("{} trailing bytes", c.bytes.len()));
    }
    Ok(Checkpoint {
        process,
        k,
        params,
        lambda,
        adam,
    })
}

const TABLE_HEADER: &str = "hompinn-solution-table 1";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_solution_table(table: &SolutionTable, mut w: impl Write) -> Result<(), IoError> {
    writeln!(w, "{TABLE_HEADER}")?;
    writeln!(w, "problem {}", table.problem.name())?;
    writeln!(w, "lambda {}", join(&table.lambda))?;
    let (kind, n) = match table.grid {
        Grid::Line { n } => ("line", n),
        Grid::Square { n } => ("square", n),
    };
    writeln!(w, "grid {kind} {n}")?;
    writeln!(w, "components {}", table.components)?;
    writeln!(w, "solutions {}", table.solutions.len())?;
    for (i, s) in table.solutions.iter().enumerate() {
        writeln!(w, "solution {i} {}", s.residual_rms)?;
        writeln!(w, "{}", join(&s.values))?;
    }
    Ok(())
}

/// Largest grid side accepted when reading a table.
const MAX_GRID_N: usize = 1 << 16;

/// The words after `label` on the next line.
fn field<'a>(lines: &mut std::str::Lines<'a>, label: &str) -> Result<Vec<&'a str>, IoError> {
    let Some(line) = lines.next() else {
        return bad("solution table", format!("missing {label} line"));
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(label) {
        return bad("solution table", format!("expected `{label}`, got `{line}`"));
    }
    Ok(parts.collect())
}

pub fn parse_solution_table(text: &str) -> Result<SolutionTable, IoError> {
    const W: &str = "solution table";
    let mut lines = text.lines();
    let reals = |parts: &[&str]| -> Result<Vec<f64>, IoError> {
        parts
            .iter()
            .map(|p| p.parse::<f64>().or_else(|_| bad(W, format!("bad real `{p}`"))))
            .collect()
    };
    let count = |parts: &[&str]| -> Result<usize, IoError> {
        match parts {
            [v] => v.parse().or_else(|_| bad(W, format!("bad count `{v}`"))),
            _ => bad(W, "expected one count"),
        }
    };
    if field(&mut lines, "hompinn-solution-table")? != ["1"] {
        return bad(W, "unsupported version");
    }
    let problem = match field(&mut lines, "problem")?.as_slice() {
        [name] => ProblemKind::from_name(name).or_else(|e| bad(W, e.to_string()))?,
        _ => return bad(W, "expected one problem name"),
    };
    let lambda = reals(&field(&mut lines, "lambda")?)?;
    problem.problem().check_lambda(&lambda).or_else(|e| bad(W, e.to_string()))?;
    let grid = match field(&mut lines, "grid")?.as_slice() {
        [kind, n] => {
            let n: usize = n.parse().or_else(|_| bad(W, "bad grid size"))?;
            if !(2..=MAX_GRID_N).contains(&n) {
                return bad(W, format!("grid size {n} out of range"));
            }
            match *kind {
                "line" => Grid::Line { n },
                "square" => Grid::Square { n },
                other => return bad(W, format!("unknown grid `{other}`")),
            }
        }
        _ => return bad(W, "expected `grid <kind> <n>`"),
    };
    if grid.dim() != problem.problem().dim() {
        return bad(W, "grid dimension does not match the problem");
    }
    let components = count(&field(&mut lines, "components")?)?;
    if components != problem.problem().components() {
        return bad(W, "component count does not match the problem");
    }
    let n_solutions = count(&field(&mut lines, "solutions")?)?;
    let field_len = grid.len() * components;
    let mut table = SolutionTable::new(problem, lambda, grid);
    for i in 0..n_solutions {
        let head = field(&mut lines, "solution")?;
        let residual_rms = match head.as_slice() {
            [idx, rms] if idx.parse::<usize>().ok() == Some(i) => {
                rms.parse::<f64>().or_else(|_| bad(W, "bad residual"))?
            }
            _ => return bad(W, format!("bad header for solution {i}")),
        };
        let line = lines.next().ok_or_else(|| IoError::Format {
            what: W,
            detail: format!("missing values for solution {i}"),
        })?;
        let values = reals(&line.split_whitespace().collect::<Vec<_>>())?;
        if values.len() != field_len {
            return bad(W, format!("solution {i} has {} values, expected {field_len}", values.len()));
        }
        table.solutions.push(SolutionField { values, residual_rms });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return bad(W, "trailing content");
    }
    Ok(table)
}

fn observation_header(dim: usize, components: usize) -> Vec<&'static str> {
    let mut h: Vec<&str> = ["x", "y"][..dim].to_vec();
    h.extend_from_slice(if components == 1 { &["u"][..] } else { &["A", "S"][..] });
    h
}

pub fn write_observations(obs: &ObservationSet, w: impl Write) -> Result<(), IoError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(observation_header(obs.dim(), obs.components()))?;
    for i in 0..obs.len() {
        let row: Vec<String> = obs.point(i).iter().chain(obs.value(i)).map(|v| v.to_string()).collect();
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads an observation CSV; the layout is taken from the header, which
/// must be one of `x,u` or `x,y,A,S`.
pub fn read_observations(r: impl Read) -> Result<ObservationSet, IoError> {
    const W: &str = "observation csv";
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let (dim, comps) = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "u"] => (1, 1),
        ["x", "y", "A", "S"] => (2, 2),
        other => return bad(W, format!("unexpected header {other:?}")),
    };
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + comps {
            return bad(W, format!("row {} has {} fields", line + 1, rec.len()));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .or_else(|_| bad(W, format!("row {}: bad real `{field}`", line + 1)))?;
            if !v.is_finite() {
                return bad(W, format!("row {}: non-finite value", line + 1));
            }
            if j < dim { points.push(v) } else { values.push(v) }
        }
    }
    if values.is_empty() {
        return bad(W, "no observations");
    }
    ObservationSet::new(dim, comps, points, values).or_else(|e| bad(W, e.to_string()))
}

fn record_header(record: &TrainingRecord, with_err: bool) -> Vec<String> {
    let mut h = vec!["process".to_string(), "k".into(), "alpha".into()];
    h.extend(record.lambda_labels.iter().cloned());
    if with_err {
        h.extend(record.lambda_labels.iter().map(|l| format!("err_{l}")));
    }
    h.extend(["train_loss", "test_loss", "wall_time_s"].map(String::from));
    h
}

pub fn write_record(record: &TrainingRecord, w: impl Write) -> Result<(), IoError> {
    let with_err = record.rows.iter().any(|r| !r.err.is_empty());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(record_header(record, with_err))?;
    for r in &record.rows {
        let mut row = vec![r.process.to_string(), r.k.to_string(), r.alpha.to_string()];
        row.extend(r.lambda.iter().map(f64::to_string));
        if with_err {
            row.extend(r.err.iter().map(f64::to_string));
        }
        row.push(r.train_loss.to_string());
        row.push(r.test_loss.map(|v| v.to_string()).unwrap_or_default());
        row.push(r.wall_time_s.to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_record(r: impl Read) -> Result<TrainingRecord, IoError> {
    const W: &str = "record csv";
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let n = header.len();
    if n < 7 || header[..3] != ["process", "k", "alpha"] || header[n - 3..] != ["train_loss", "test_loss", "wall_time_s"] {
        return bad(W, format!("unexpected header {header:?}"));
    }
    let middle = &header[3..n - 3];
    let err_count = middle.iter().filter(|h| h.starts_with("err_")).count();
    let p = middle.len() - err_count;
    if p == 0 || (err_count != 0 && err_count != p) {
        return bad(W, "lambda and err columns do not pair up");
    }
    let labels = middle[..p].to_vec();
    if err_count != 0 && middle[p..].iter().zip(&labels).any(|(e, l)| *e != format!("err_{l}")) {
        return bad(W, "err columns do not match lambda labels");
    }
    let mut record = TrainingRecord {
        lambda_labels: labels,
        rows: Vec::new(),
    };
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return bad(W, format!("row {} has {} fields", line + 1, rec.len()));
        }
        let real = |j: usize| -> Result<f64, IoError> {
            rec[j].parse().or_else(|_| bad(W, format!("row {}: bad real `{}`", line + 1, &rec[j])))
        };
        let int = |j: usize| -> Result<usize, IoError> {
            rec[j].parse().or_else(|_| bad(W, format!("row {}: bad integer `{}`", line + 1, &rec[j])))
        };
        record.rows.push(RecordRow {
            process: int(0)?,
            k: int(1)?,
            alpha: real(2)?,
            lambda: (3..3 + p).map(real).collect::<Result<_, _>>()?,
            err: (3 + p..3 + p + err_count).map(real).collect::<Result<_, _>>()?,
            train_loss: real(n - 3)?,
            test_loss: if rec[n - 2].is_empty() { None } else { Some(real(n - 2)?) },
            wall_time_s: real(n - 1)?,
        });
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checkpoint(adam: bool) -> Checkpoint {
        let cfg = MlpConfig::new(2, vec![3, 4], 2, 2).unwrap();
        let params = NetworkParams::init_he(cfg, 9).unwrap();
        let n = params.values().len();
        Checkpoint {
            process: 2,
            k: 7,
            lambda: vec![2.4e-4, 5.1e-4, f64::MIN_POSITIVE, -0.0],
            adam: adam.then(|| AdamState {
                m: (0..n).map(|i| i as f64 * 1e-3).collect(),
                v: (0..n).map(|i| (i as f64).sqrt()).collect(),
                t: 123,
                hyper: AdamHyper::default(),
            }),
            params,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for adam in [false, true] {
            let cp = checkpoint(adam);
            let bytes = encode_checkpoint(&cp);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, cp);
            assert_eq!(back.lambda[3].to_bits(), (-0.0f64).to_bits());
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let bytes = encode_checkpoint(&checkpoint(true));
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        let mut huge = bytes;
        // parameter count no longer matches the header
        let off = 44 + 32;
        huge[off..off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_checkpoint(&huge).is_err());
    }

    fn table() -> SolutionTable {
        let mut t = SolutionTable::new(ProblemKind::Ex1BratuQuartic, vec![1.2], Grid::Line { n: 5 });
        t.solutions.push(SolutionField {
            values: vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0],
            residual_rms: 3.2e-11,
        });
        t.solutions.push(SolutionField {
            values: vec![1.0, 0.9, 0.5, 0.2, 0.0],
            residual_rms: 0.0,
        });
        t
    }

    #[test]
    fn table_round_trip() {
        let mut buf = Vec::new();
        write_solution_table(&table(), &mut buf).unwrap();
        let back = parse_solution_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, table());
    }

    #[test]
    fn table_rejects_bad_text() {
        let mut buf = Vec::new();
        write_solution_table(&table(), &mut buf).unwrap();
        let good = String::from_utf8(buf).unwrap();
        for (from, to) in [
            ("line 5", "line 6"),
            ("line 5", "cube 5"),
            ("line 5", "square 5"),
            ("lambda 1.2", "lambda 1.2 3"),
            ("solutions 2", "solutions 3"),
            ("solution 1", "solution 0"),
            ("hompinn-solution-table 1", "hompinn-solution-table 2"),
            ("0.9", "zero"),
        ] {
            assert!(parse_solution_table(&good.replacen(from, to, 1)).is_err(), "{from} -> {to}");
        }
        assert!(parse_solution_table(&format!("{good}junk\n")).is_err());
        assert!(parse_solution_table("").is_err());
    }

    #[test]
    fn observation_round_trip() {
        let obs = ObservationSet::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], vec![1e-3, 0.99, 0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_observations(&obs, &mut buf).unwrap();
        assert!(buf.starts_with(b"x,y,A,S\n"));
        let back = read_observations(buf.as_slice()).unwrap();
        assert_eq!(back, obs);
        assert!(read_observations(&b"x,u\n0.5,nan\n"[..]).is_err());
        assert!(read_observations(&b"x,u\n"[..]).is_err());
        assert!(read_observations(&b"x,v\n0.5,1\n"[..]).is_err());
        assert!(read_observations(&b"x,u\n0.5\n"[..]).is_err());
    }

    fn record(with_err: bool, test: bool) -> TrainingRecord {
        TrainingRecord {
            lambda_labels: vec!["D_A".into(), "rho".into()],
            rows: (1..=3)
                .map(|k| RecordRow {
                    process: 1 + k / 3,
                    k,
                    alpha: 0.6f64.powi(k as i32 - 1),
                    lambda: vec![1.0 / k as f64, 2.0],
                    err: if with_err { vec![0.1, 1e-17] } else { vec![] },
                    train_loss: 1e-9,
                    test_loss: test.then_some(2.5e-7),
                    wall_time_s: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn record_round_trip() {
        for (e, t) in [(true, true), (false, false), (true, false)] {
            let r = record(e, t);
            let mut buf = Vec::new();
            write_record(&r, &mut buf).unwrap();
            assert_eq!(read_record(buf.as_slice()).unwrap(), r);
        }
        let mut buf = Vec::new();
        write_record(&record(true, true), &mut buf).unwrap();
        let head = String::from_utf8(buf).unwrap();
        assert!(head.starts_with("process,k,alpha,D_A,rho,err_D_A,err_rho,train_loss,test_loss,wall_time_s\n"));
        assert!(read_record(&b"process,k\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_checkpoint(&bytes);
            let mut framed = b"HPCK\x01\0\0\0".to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_checkpoint(&framed);
        }

        #[test]
        fn table_parser_never_panics(text in "[a-z0-9 .\\-\n]{0,200}") {
            let _ = parse_solution_table(&text);
            let _ = parse_solution_table(&format!("hompinn-solution-table 1\nproblem ex1-bratu-quartic\nlambda 1.2\n{text}"));
        }
    }
}
