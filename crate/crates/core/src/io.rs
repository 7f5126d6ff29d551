//! JSON problem, system and solution files, and the iteration-trace CSV.
//!
//! Every file is a JSON object with a `format` tag:
//!
//! * `coupled-sdp`: `n`, and `subproblems[]` with `J` (1-based indices),
//!   `W`, `Q[]` (symmetric matrices) and `b`.
//! * `sparse-inequality-sdp`: `n`, `c`, `terms[]` and `constants[]` (each
//!   `{J, M}`), optional `nonneg` flags.
//! * `interconnected-system`: `n` subsystems, `frequencies`, `gamma` as
//!   1-based `[row, col, value]` triplets with value 1, and
//!   `responses[f][i]` holding the complex blocks `gpq`, `gpw`, `gzq`, `gzw`
//!   as `{rows, cols, re, im}` with row-major `re`/`im`.
//! * `solution`: status, objectives, residuals and per-block `X`, `S`, `v`.
//!
//! Symmetric matrices are stored as their lower triangle in svec order
//! (column-major), with off-diagonal entries unscaled so that values
//! round-trip bit-exactly. Floats are written in shortest round-trip form
//! (at most 17 significant digits). An optional `metadata` object records
//! the origin of a file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ipm::{IterationRecord, Solution};
use crate::iqc::{CMatrix, InterconnectedSystem, SubsystemFR};
use crate::model::{CoupledSdp, SparseInequalitySdp, Subproblem, Term};
use crate::mpassing::LedgerEntry;
use crate::symcone::{svec_dim, svec_pairs, SymMatrix};

/// Origin of a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
}

impl Metadata {
    fn is_empty(&self) -> bool {
        *self == Metadata::default()
    }
}

/// A problem read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemFile {
    Coupled(CoupledSdp),
    Inequality(SparseInequalitySdp),
}

/// Any file understood by the tools.
#[derive(Debug, Clone)]
pub enum Document {
    Problem(ProblemFile, Metadata),
    System(InterconnectedSystem, Metadata),
    Solution(SolutionFile),
}

// ---------------------------------------------------------------------------
// Wire types

#[derive(Deserialize)]
struct Tag {
    format: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoupledDoc {
    format: String,
    n: usize,
    subproblems: Vec<SubDoc>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubDoc {
    #[serde(rename = "J")]
    j: Vec<usize>,
    #[serde(rename = "W")]
    w: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InequalityDoc {
    format: String,
    n: usize,
    c: Vec<f64>,
    terms: Vec<TermDoc>,
    #[serde(default)]
    constants: Vec<TermDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    nonneg: Vec<bool>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    #[serde(rename = "J")]
    j: Vec<usize>,
    #[serde(rename = "M")]
    m: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    format: String,
    n: usize,
    frequencies: Vec<f64>,
    gamma: Vec<(usize, usize, f64)>,
    responses: Vec<Vec<FrDoc>>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrDoc {
    gpq: CDoc,
    gpw: CDoc,
    gzq: CDoc,
    gzw: CDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CDoc {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Solution file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub status: String,
    pub iterations: usize,
    #[serde(with = "nullable")]
    pub mu: f64,
    #[serde(with = "nullable")]
    pub primal_objective: f64,
    #[serde(with = "nullable")]
    pub dual_objective: f64,
    #[serde(with = "nullable")]
    pub r_primal_sq: f64,
    #[serde(with = "nullable")]
    pub r_dual_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub n: usize,
    pub blocks: Vec<SolutionBlock>,
    /// Variables of an inequality-form problem, when that was the input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
}

/// Primal block `X_{JJ}`, slack `S` and multipliers of one subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionBlock {
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl SolutionFile {
    pub fn from_solution(
        p: &CoupledSdp,
        sol: &Solution,
        y: Option<Vec<f64>>,
        metadata: Metadata,
    ) -> Self {
        let blocks = p
            .subproblems
            .iter()
            .enumerate()
            .map(|(i, sp)| SolutionBlock {
                j: one_based(&sp.j),
                x: lower(&sol.state.xbar[i]),
                s: lower(&sol.state.s[i]),
                v: sol.state.v[i].iter().copied().collect(),
            })
            .collect();
        SolutionFile {
            status: sol.status.as_str().to_string(),
            iterations: sol.iterations,
            mu: sol.state.mu,
            primal_objective: sol.primal_objective,
            dual_objective: sol.dual_objective,
            r_primal_sq: sol.r_primal_sq,
            r_dual_sq: sol.r_dual_sq,
            message: sol.message.clone(),
            n: p.n,
            blocks,
            y,
            metadata,
        }
    }
}

/// Non-finite floats are written as `null` and read back as NaN.
mod nullable {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

// ---------------------------------------------------------------------------
// Conversions

fn lower(m: &SymMatrix) -> Vec<f64> {
    svec_pairs(m.order())
        .into_iter()
        .map(|(i, j)| m.get(i, j))
        .collect()
}

fn from_lower(vals: &[f64], field: &str) -> Result<SymMatrix> {
    let n = crate::symcone::order_from_dim(vals.len()).ok_or_else(|| {
        Error::Parse(format!(
            "{field}: length {} is not a triangular number",
            vals.len()
        ))
    })?;
    let mut m = DMatrix::zeros(n, n);
    for ((i, j), &v) in svec_pairs(n).into_iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    SymMatrix::from_lower(m)
}

fn one_based(j: &[usize]) -> Vec<usize> {
    j.iter().map(|x| x + 1).collect()
}

fn zero_based(j: &[usize], n: usize, field: &str) -> Result<Vec<usize>> {
    j.iter()
        .map(|&x| {
            if x == 0 || x > n {
                Err(Error::Parse(format!("{field}: index {x} outside 1..={n}")))
            } else {
                Ok(x - 1)
            }
        })
        .collect()
}

fn sized(m: &SymMatrix, want: usize, field: &str) -> Result<()> {
    if m.order() != want {
        return Err(Error::Parse(format!(
            "{field}: order {} does not match |J| = {want} (expected {} entries)",
            m.order(),
            svec_dim(want)
        )));
    }
    Ok(())
}

fn coupled_to_doc(p: &CoupledSdp, metadata: &Metadata) -> CoupledDoc {
    CoupledDoc {
        format: "coupled-sdp".into(),
        n: p.n,
        subproblems: p
            .subproblems
            .iter()
            .map(|s| SubDoc {
                j: one_based(&s.j),
                w: lower(&s.w),
                q: s.q.iter().map(lower).collect(),
                b: s.b.clone(),
            })
            .collect(),
        metadata: metadata.clone(),
    }
}

fn coupled_from_doc(d: CoupledDoc) -> Result<CoupledSdp> {
    let mut subproblems = Vec::with_capacity(d.subproblems.len());
    for (i, s) in d.subproblems.into_iter().enumerate() {
        let at = |f: &str| format!("subproblems[{i}].{f}");
        let j = zero_based(&s.j, d.n, &at("J"))?;
        let w = from_lower(&s.w, &at("W"))?;
        sized(&w, j.len(), &at("W"))?;
        let mut q = Vec::with_capacity(s.q.len());
        for (k, qk) in s.q.iter().enumerate() {
            let m = from_lower(qk, &at(&format!("Q[{k}]")))?;
            sized(&m, j.len(), &at(&format!("Q[{k}]")))?;
            q.push(m);
        }
        if q.len() != s.b.len() {
            return Err(Error::Parse(format!(
                "{}: {} constraint matrices but {} right-hand sides",
                at("b"),
                q.len(),
                s.b.len()
            )));
        }
        subproblems.push(Subproblem { j, w, q, b: s.b });
    }
    Ok(CoupledSdp {
        n: d.n,
        subproblems,
    })
}

fn terms_to_doc(t: &[Term]) -> Vec<TermDoc> {
    t.iter()
        .map(|t| TermDoc {
            j: one_based(&t.j),
            m: lower(&t.mat),
        })
        .collect()
}

fn terms_from_doc(t: Vec<TermDoc>, n: usize, name: &str) -> Result<Vec<Term>> {
    t.into_iter()
        .enumerate()
        .map(|(i, t)| {
            let field = format!("{name}[{i}]");
            let j = zero_based(&t.j, n, &format!("{field}.J"))?;
            let mat = from_lower(&t.m, &format!("{field}.M"))?;
            sized(&mat, j.len(), &format!("{field}.M"))?;
            Ok(Term { j, mat })
        })
        .collect()
}

fn inequality_to_doc(s: &SparseInequalitySdp, metadata: &Metadata) -> InequalityDoc {
    InequalityDoc {
        format: "sparse-inequality-sdp".into(),
        n: s.n,
        c: s.c.clone(),
        terms: terms_to_doc(&s.terms),
        constants: terms_to_doc(&s.constants),
        nonneg: s.nonneg.clone(),
        metadata: metadata.clone(),
    }
}

fn inequality_from_doc(d: InequalityDoc) -> Result<SparseInequalitySdp> {
    let s = SparseInequalitySdp {
        n: d.n,
        c: d.c,
        terms: terms_from_doc(d.terms, d.n, "terms")?,
        constants: terms_from_doc(d.constants, d.n, "constants")?,
        nonneg: d.nonneg,
    };
    s.check().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(s)
}

fn cmatrix_to_doc(m: &CMatrix) -> CDoc {
    let (r, c) = m.shape();
    let entries = (0..r).flat_map(|i| (0..c).map(move |j| (i, j)));
    CDoc {
        rows: r,
        cols: c,
        re: entries.clone().map(|(i, j)| m[(i, j)].re).collect(),
        im: entries.map(|(i, j)| m[(i, j)].im).collect(),
    }
}

fn cmatrix_from_doc(d: &CDoc, field: &str) -> Result<CMatrix> {
    let len = d.rows * d.cols;
    if d.re.len() != len || d.im.len() != len {
        return Err(Error::Parse(format!(
            "{field}: {}x{} matrix needs {len} re and im entries, got {} and {}",
            d.rows,
            d.cols,
            d.re.len(),
            d.im.len()
        )));
    }
    Ok(DMatrix::from_fn(d.rows, d.cols, |i, j| {
        Complex64::new(d.re[i * d.cols + j], d.im[i * d.cols + j])
    }))
}

fn system_to_doc(s: &InterconnectedSystem, metadata: &Metadata) -> SystemDoc {
    let mut md = metadata.clone();
    if md.seed.is_none() {
        md.seed = s.seed;
    }
    SystemDoc {
        format: "interconnected-system".into(),
        n: s.len(),
        frequencies: s.frequencies.clone(),
        gamma: s.gamma.iter().map(|&(r, c)| (r + 1, c + 1, 1.0)).collect(),
        responses: s
            .responses
            .iter()
            .map(|row| {
                row.iter()
                    .map(|g| FrDoc {
                        gpq: cmatrix_to_doc(&g.gpq),
                        gpw: cmatrix_to_doc(&g.gpw),
                        gzq: cmatrix_to_doc(&g.gzq),
                        gzw: cmatrix_to_doc(&g.gzw),
                    })
                    .collect()
            })
            .collect(),
        metadata: md,
    }
}

fn system_from_doc(d: SystemDoc) -> Result<InterconnectedSystem> {
    if d.responses.len() != d.frequencies.len() {
        return Err(Error::Parse(format!(
            "responses: {} frequency rows for {} frequencies",
            d.responses.len(),
            d.frequencies.len()
        )));
    }
    let mut responses = Vec::with_capacity(d.responses.len());
    for (f, row) in d.responses.iter().enumerate() {
        if row.len() != d.n {
            return Err(Error::Parse(format!(
                "responses[{f}]: {} subsystems, expected n = {}",
                row.len(),
                d.n
            )));
        }
        let mut subs = Vec::with_capacity(d.n);
        for (i, g) in row.iter().enumerate() {
            let at = |b: &str| format!("responses[{f}][{i}].{b}");
            subs.push(SubsystemFR {
                gpq: cmatrix_from_doc(&g.gpq, &at("gpq"))?,
                gpw: cmatrix_from_doc(&g.gpw, &at("gpw"))?,
                gzq: cmatrix_from_doc(&g.gzq, &at("gzq"))?,
                gzw: cmatrix_from_doc(&g.gzw, &at("gzw"))?,
            });
        }
        responses.push(subs);
    }
    let mut gamma = Vec::with_capacity(d.gamma.len());
    for (k, &(r, c, v)) in d.gamma.iter().enumerate() {
        if v != 1.0 || r == 0 || c == 0 {
            return Err(Error::Parse(format!(
                "gamma[{k}]: expected a 1-based entry with value 1, got ({r}, {c}, {v})"
            )));
        }
        gamma.push((r - 1, c - 1));
    }
    let sys = InterconnectedSystem {
        frequencies: d.frequencies,
        responses,
        gamma,
        seed: d.metadata.seed,
    };
    sys.check().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(sys)
}

// ---------------------------------------------------------------------------
// Reading and writing

fn parse_as<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let v: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse(format!("at `{path}`: {}", e.into_inner()))
    })?;
    de.end().map_err(|e| {
        Error::Parse(format!(
            "trailing data (line {}, column {})",
            e.line(),
            e.column()
        ))
    })?;
    Ok(v)
}

/// Parses any supported JSON document.
pub fn parse_document(text: &str) -> Result<Document> {
    // serde_json errors carry their own line and column.
    let tag: Tag = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match tag.format.as_str() {
        "coupled-sdp" => {
            let d: CoupledDoc = parse_as(text)?;
            let md = d.metadata.clone();
            Ok(Document::Problem(
                ProblemFile::Coupled(coupled_from_doc(d)?),
                md,
            ))
        }
        "sparse-inequality-sdp" => {
            let d: InequalityDoc = parse_as(text)?;
            let md = d.metadata.clone();
            Ok(Document::Problem(
                ProblemFile::Inequality(inequality_from_doc(d)?),
                md,
            ))
        }
        "interconnected-system" => {
            let d: SystemDoc = parse_as(text)?;
            let md = d.metadata.clone();
            Ok(Document::System(system_from_doc(d)?, md))
        }
        "solution" => {
            #[derive(Deserialize)]
            struct Tagged {
                #[allow(dead_code)]
                format: String,
                #[serde(flatten)]
                body: SolutionFile,
            }
            let d: Tagged = parse_as(text)?;
            Ok(Document::Solution(d.body))
        }
        other => Err(Error::Parse(format!(
            "at `format`: unknown format `{other}`"
        ))),
    }
}

pub fn read_document(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_document(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn read_problem(path: &Path) -> Result<(ProblemFile, Metadata)> {
    match read_document(path)? {
        Document::Problem(p, m) => Ok((p, m)),
        _ => Err(Error::Parse(format!(
            "{}: not a problem file",
            path.display()
        ))),
    }
}

pub fn read_system(path: &Path) -> Result<InterconnectedSystem> {
    match read_document(path)? {
        Document::System(s, _) => Ok(s),
        _ => Err(Error::Parse(format!(
            "{}: not a system file",
            path.display()
        ))),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn problem_to_json(p: &ProblemFile, metadata: &Metadata) -> String {
    match p {
        ProblemFile::Coupled(c) => to_json(&coupled_to_doc(c, metadata)),
        ProblemFile::Inequality(s) => to_json(&inequality_to_doc(s, metadata)),
    }
}

pub fn system_to_json(s: &InterconnectedSystem, metadata: &Metadata) -> String {
    to_json(&system_to_doc(s, metadata))
}

pub fn solution_to_json(s: &SolutionFile) -> String {
    #[derive(Serialize)]
    struct Tagged<'a> {
        format: &'static str,
        #[serde(flatten)]
        body: &'a SolutionFile,
    }
    to_json(&Tagged {
        format: "solution",
        body: s,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Trace CSV

/// One CSV row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub mu: f64,
    pub r_primal_sq: f64,
    pub r_dual_sq: f64,
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub sigma: f64,
    pub passes: usize,
    pub messages: usize,
    pub factorizations: usize,
    pub rounds: usize,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        let LedgerEntry {
            passes,
            rounds,
            messages,
            factorizations,
        } = r.ledger;
        TraceRow {
            iter: r.iter,
            mu: r.mu,
            r_primal_sq: r.r_primal_sq,
            r_dual_sq: r.r_dual_sq,
            alpha_p: r.alpha_p,
            alpha_d: r.alpha_d,
            sigma: r.sigma,
            passes,
            messages,
            factorizations,
            rounds,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse(format!("trace line {}: {e}", p.line())),
        None => Error::Parse(format!("trace: {e}")),
    }
}

pub fn write_trace<W: Write>(out: W, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(TraceRow::from(r)).map_err(csv_err)?;
    }
    if trace.is_empty() {
        w.write_record([
            "iter",
            "mu",
            "r_primal_sq",
            "r_dual_sq",
            "alpha_p",
            "alpha_d",
            "sigma",
            "passes",
            "messages",
            "factorizations",
            "rounds",
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

pub fn write_trace_file(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    write_trace(fs::File::create(path)?, trace)
}
