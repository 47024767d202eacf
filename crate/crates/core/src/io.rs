//! Dataset ingestion, result tables, checkpoints and run manifests.
//!
//! Expression data is read in long format, one row per
//! `(gene, region, period, replicate, value)`, with a JSON sidecar declaring
//! the region vocabulary (with group labels) and the period order. Numbers are
//! written with Rust's shortest round-trip formatting so that every file read
//! back reproduces the same `f64` bits.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::de::{LocalFdrModel, ZScoreGrid};
use crate::emission::ExpressionTensor;
use crate::error::{Error, Result};
use crate::lattice::{Cell, LatentGrid, LatticeShape};
use crate::mcem::{McemConfig, McemState};
use crate::model::RegionGroup;
use crate::sampler::PosteriorGrid;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub const CHECKPOINT_FORMAT: &str = "stmrf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMeta {
    pub name: String,
    pub group: RegionGroup,
}

/// Sidecar describing the region and period vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub regions: Vec<RegionMeta>,
    /// Period labels in temporal order.
    pub periods: Vec<String>,
}

impl Metadata {
    /// Metadata of a tensor; regions without a group default to neocortex.
    pub fn from_tensor(data: &ExpressionTensor) -> Self {
        let groups = data.groups.clone();
        Metadata {
            regions: data
                .region_names
                .iter()
                .enumerate()
                .map(|(b, name)| RegionMeta {
                    name: name.clone(),
                    group: groups.as_ref().map_or(RegionGroup::Neocortex, |g| g[b]),
                })
                .collect(),
            periods: data.period_names.clone(),
        }
    }

    pub fn groups(&self) -> Vec<RegionGroup> {
        self.regions.iter().map(|r| r.group).collect()
    }

    fn validate(&self, file: &Path) -> Result<()> {
        let bad = |field: &str, message: String| Error::Parse {
            file: file.to_path_buf(),
            line: 0,
            field: field.into(),
            message,
        };
        if self.regions.is_empty() {
            return Err(bad("regions", "no regions declared".into()));
        }
        if self.periods.len() < 2 {
            return Err(bad("periods", "at least two periods are required".into()));
        }
        if let Some(d) = first_duplicate(self.regions.iter().map(|r| r.name.as_str())) {
            return Err(bad("regions", format!("region `{d}` declared twice")));
        }
        if let Some(d) = first_duplicate(self.periods.iter().map(String::as_str)) {
            return Err(bad("periods", format!("period `{d}` declared twice")));
        }
        Ok(())
    }
}

/// Gene, region and period labels of an expression lattice. The DE
/// lattice of the same data has one transition per consecutive period pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeNames {
    pub genes: Vec<String>,
    pub regions: Vec<String>,
    pub periods: Vec<String>,
}

impl LatticeNames {
    pub fn of(data: &ExpressionTensor) -> Self {
        LatticeNames {
            genes: data.gene_names.clone(),
            regions: data.region_names.clone(),
            periods: data.period_names.clone(),
        }
    }

    /// Default labels `G1.., R1.., P1..` for an expression lattice.
    pub fn numbered(shape: &LatticeShape) -> Self {
        let label = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect();
        LatticeNames {
            genes: label("G", shape.genes),
            regions: label("R", shape.regions),
            periods: label("P", shape.times),
        }
    }

    pub fn expression_shape(&self) -> Result<LatticeShape> {
        LatticeShape::new(self.regions.len(), self.genes.len(), self.periods.len())
    }

    pub fn transition_shape(&self) -> Result<LatticeShape> {
        LatticeShape::new(self.regions.len(), self.genes.len(), self.periods.len().saturating_sub(1))
    }
}

fn first_duplicate<'a>(names: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = std::collections::HashSet::new();
    names.into_iter().find(|n| !seen.insert(*n))
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let text = read_text(path)?;
    let meta: Metadata = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line() as u64,
        field: "metadata".into(),
        message: e.to_string(),
    })?;
    meta.validate(path)?;
    Ok(meta)
}

pub fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    write_json(path, meta)
}

/// Tab for `.tsv`/`.tab` files, comma otherwise.
fn delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("tab") => b'\t',
        _ => b',',
    }
}

const DATA_COLUMNS: [&str; 5] = ["gene", "region", "period", "replicate", "value"];

/// Read a long-format expression file and its metadata sidecar.
///
/// Genes are indexed by first appearance; replicate slots within a
/// `(region, period)` by first appearance of their label. Every gene must
/// carry a value for every replicate label seen in a `(region, period)`.
pub fn load_dataset(path: &Path, metadata: &Path) -> Result<ExpressionTensor> {
    let meta = read_metadata(metadata)?;
    let file = path.to_path_buf();
    let parse_err = |line: u64, field: &str, message: String| Error::Parse {
        file: file.clone(),
        line,
        field: field.into(),
        message,
    };
    let region_ix: HashMap<&str, usize> = meta.regions.iter().enumerate().map(|(i, r)| (r.name.as_str(), i)).collect();
    let period_ix: HashMap<&str, usize> = meta.periods.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let (nb, nt) = (meta.regions.len(), meta.periods.len());

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(DATA_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| parse_err(1, name, "missing column in header".into()))?;
    }

    let mut gene_ix: HashMap<String, usize> = HashMap::new();
    let mut genes: Vec<String> = Vec::new();
    let mut labels: Vec<HashMap<String, usize>> = vec![HashMap::new(); nb * nt];
    let mut label_names: Vec<Vec<String>> = vec![Vec::new(); nb * nt];
    // (gene, bt, slot, value, line)
    let mut rows: Vec<(usize, usize, usize, f64, u64)> = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let region = *region_ix
            .get(field(1))
            .ok_or_else(|| parse_err(line, "region", format!("unknown region `{}`", field(1))))?;
        let period = *period_ix
            .get(field(2))
            .ok_or_else(|| parse_err(line, "period", format!("unknown period `{}`", field(2))))?;
        let gene_name = field(0);
        if gene_name.is_empty() {
            return Err(parse_err(line, "gene", "empty gene name".into()));
        }
        let rep = field(3);
        if rep.is_empty() {
            return Err(parse_err(line, "replicate", "empty replicate label".into()));
        }
        let value: f64 = field(4)
            .parse()
            .map_err(|_| parse_err(line, "value", format!("`{}` is not a number", field(4))))?;
        if !value.is_finite() {
            return Err(parse_err(line, "value", format!("non-finite value `{}`", field(4))));
        }
        let g = match gene_ix.get(gene_name) {
            Some(&g) => g,
            None => {
                genes.push(gene_name.to_string());
                gene_ix.insert(gene_name.to_string(), genes.len() - 1);
                genes.len() - 1
            }
        };
        let bt = region * nt + period;
        let next = labels[bt].len();
        let slot = *labels[bt].entry(rep.to_string()).or_insert_with(|| {
            label_names[bt].push(rep.to_string());
            next
        });
        rows.push((g, bt, slot, value, line));
    }
    if genes.is_empty() {
        return Err(parse_err(1, "gene", "no data rows".into()));
    }

    rows.sort_by_key(|r| (r.0, r.1, r.2));
    for w in rows.windows(2) {
        if (w[0].0, w[0].1, w[0].2) == (w[1].0, w[1].1, w[1].2) {
            let (a, b) = (w[0].4.min(w[1].4), w[0].4.max(w[1].4));
            return Err(parse_err(
                b,
                "replicate",
                format!(
                    "duplicate key (gene `{}`, region `{}`, period `{}`, replicate `{}`), first seen on line {a}",
                    genes[w[1].0],
                    meta.regions[w[1].1 / nt].name,
                    meta.periods[w[1].1 % nt],
                    label_names[w[1].1][w[1].2]
                ),
            ));
        }
    }

    let replicates: Vec<usize> = labels.iter().map(HashMap::len).collect();
    let per_gene: usize = replicates.iter().sum();
    if rows.len() != per_gene * genes.len() {
        // rows are sorted and unique, so the first gap names a missing value
        let mut expected = (0..genes.len()).flat_map(|g| {
            let replicates = &replicates;
            (0..nb * nt).flat_map(move |bt| (0..replicates[bt]).map(move |k| (g, bt, k)))
        });
        for r in &rows {
            let e = expected.next().expect("fewer expected keys than rows");
            if (r.0, r.1, r.2) != e {
                return Err(missing_value(path, &genes, &meta, &label_names, e));
            }
        }
        let e = expected.next().expect("row count mismatch implies a missing key");
        return Err(missing_value(path, &genes, &meta, &label_names, e));
    }

    let shape = LatticeShape::new(nb, genes.len(), nt)?;
    let values: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let mut data = ExpressionTensor::new(shape, replicates, values)?;
    data.region_names = meta.regions.iter().map(|r| r.name.clone()).collect();
    data.period_names = meta.periods.clone();
    data.gene_names = genes;
    data.groups = Some(meta.groups());
    Ok(data)
}

fn missing_value(
    path: &Path,
    genes: &[String],
    meta: &Metadata,
    labels: &[Vec<String>],
    (g, bt, k): (usize, usize, usize),
) -> Error {
    let nt = meta.periods.len();
    Error::Shape(format!(
        "{}: gene `{}` has no value for replicate `{}` of region `{}`, period `{}`",
        path.display(),
        genes[g],
        labels[bt][k],
        meta.regions[bt / nt].name,
        meta.periods[bt % nt]
    ))
}

/// Write a tensor in the long format read by [`load_dataset`]; replicate
/// labels are `1..=n`.
pub fn write_dataset(path: &Path, data: &ExpressionTensor) -> Result<()> {
    let mut w = table_writer_with(path, delimiter(path))?;
    w.write_record(DATA_COLUMNS)?;
    let shape = data.shape();
    for g in 0..shape.genes {
        for b in 0..shape.regions {
            for t in 0..shape.times {
                for (k, v) in data.cell(Cell::new(b, g, t)).iter().enumerate() {
                    w.write_record([
                        data.gene_names[g].as_str(),
                        data.region_names[b].as_str(),
                        data.period_names[t].as_str(),
                        &(k + 1).to_string(),
                        &fmt_f64(*v),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub type TableWriter = csv::Writer<BufWriter<File>>;

/// Tab-separated writer creating parent directories as needed.
pub fn table_writer(path: &Path) -> Result<TableWriter> {
    table_writer_with(path, b'\t')
}

fn table_writer_with(path: &Path, delimiter: u8) -> Result<TableWriter> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line() as u64,
        field: "json".into(),
        message: e.to_string(),
    })
}

/// Numeric column `column` of a delimited file (the only column when the
/// file has one).
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let col = match headers.iter().position(|h| h.eq_ignore_ascii_case(column)) {
        Some(c) => c,
        None if headers.len() == 1 => 0,
        None => {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                field: column.into(),
                message: "missing column in header".into(),
            })
        }
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw = record.get(col).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            file: path.to_path_buf(),
            line,
            field: column.into(),
            message: format!("`{raw}` is not a number"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Genes of a call table in order of first appearance, each flagged when
/// any of its rows has `column` equal to 1.
pub fn read_gene_calls(path: &Path, column: &str) -> Result<(Vec<String>, Vec<bool>)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.eq_ignore_ascii_case(name)).ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            field: name.into(),
            message: "missing column in header".into(),
        })
    };
    let (gc, cc) = (find("gene")?, find(column)?);
    let mut genes = Vec::new();
    let mut calls = Vec::new();
    let mut ix: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let gene = record.get(gc).unwrap_or("");
        let call = match record.get(cc).unwrap_or("") {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    field: column.into(),
                    message: format!("`{other}` is not 0 or 1"),
                })
            }
        };
        let g = *ix.entry(gene.to_string()).or_insert_with(|| {
            genes.push(gene.to_string());
            calls.push(false);
            genes.len() - 1
        });
        calls[g] |= call;
    }
    Ok((genes, calls))
}

/// Non-empty, non-comment lines of a text file, trimmed.
pub fn read_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Per-cell posterior probabilities with hard calls at `cutoff`.
pub fn write_expression_calls(path: &Path, names: &LatticeNames, post: &PosteriorGrid, cutoff: f64) -> Result<()> {
    let mut w = table_writer(path)?;
    w.write_record(["gene", "region", "period", "prob_expressed", "expressed"])?;
    let shape = post.shape();
    for i in 0..shape.cells() {
        let Some(p) = post.prob_one_at(i) else { continue };
        let c = shape.cell_at(i);
        w.write_record([
            names.genes[c.gene].as_str(),
            names.regions[c.region].as_str(),
            names.periods[c.time].as_str(),
            &fmt_f64(p),
            if p >= cutoff { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per unmasked transition: z, empirical-Bayes and MRF local fdr,
/// and the FDR call. `eb`, `mrf` and `called` are indexed by lattice cell.
pub fn write_de_calls(
    path: &Path,
    names: &LatticeNames,
    z: &ZScoreGrid,
    eb: &[f64],
    mrf: &[f64],
    called: &[bool],
) -> Result<()> {
    let mut w = table_writer(path)?;
    w.write_record(["gene", "region", "from", "to", "z", "lfdr_eb", "lfdr_mrf", "de"])?;
    let shape = z.shape();
    for i in 0..shape.cells() {
        if z.mask()[i] {
            continue;
        }
        let c = shape.cell_at(i);
        w.write_record([
            names.genes[c.gene].as_str(),
            names.regions[c.region].as_str(),
            names.periods[c.time].as_str(),
            names.periods[c.time + 1].as_str(),
            &fmt_f64(z.z()[i]),
            &fmt_f64(eb[i]),
            &fmt_f64(mrf[i]),
            if called[i] { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Expression calls written by [`write_expression_calls`] (or any table
/// with `gene`, `region`, `period` and `expressed` columns) as a grid over
/// the lattice labelled by `names`. Every cell must be listed.
pub fn read_expression_calls(path: &Path, names: &LatticeNames) -> Result<LatentGrid> {
    let shape = names.expression_shape()?;
    let (genes, regions, periods) = (index_of(&names.genes), index_of(&names.regions), index_of(&names.periods));
    let labels = names;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let err = |line: u64, field: &str, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        field: field.into(),
        message,
    };
    let names = ["gene", "region", "period", "expressed"];
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| err(1, name, "missing column in header".into()))?;
    }
    let mut states = vec![None; shape.cells()];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let lookup = |k: usize, map: &HashMap<String, usize>| {
            map.get(field(k))
                .copied()
                .ok_or_else(|| err(line, names[k], format!("unknown {} `{}`", names[k], field(k))))
        };
        let cell = Cell::new(lookup(1, &regions)?, lookup(0, &genes)?, lookup(2, &periods)?);
        let x = match field(3) {
            "1" | "true" => 1u8,
            "0" | "false" => 0u8,
            other => return Err(err(line, "expressed", format!("`{other}` is not 0 or 1"))),
        };
        let i = shape.index(cell);
        if states[i].replace(x).is_some() {
            return Err(err(line, "gene", "cell listed twice".into()));
        }
    }
    if let Some(i) = states.iter().position(Option::is_none) {
        let c = shape.cell_at(i);
        return Err(Error::Shape(format!(
            "{}: no call for gene `{}`, region `{}`, period `{}`",
            path.display(),
            labels.genes[c.gene],
            labels.regions[c.region],
            labels.periods[c.time]
        )));
    }
    LatentGrid::from_states(shape, states.into_iter().map(|x| x.unwrap_or(0)).collect())
}

fn index_of(names: &[String]) -> HashMap<String, usize> {
    names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
}

/// Unmasked z-scores with their degrees of freedom, one row per transition.
pub fn write_zscores(path: &Path, names: &LatticeNames, z: &ZScoreGrid) -> Result<()> {
    let mut w = table_writer(path)?;
    w.write_record(["gene", "region", "from", "to", "z", "df"])?;
    let shape = z.shape();
    for i in 0..shape.cells() {
        if z.mask()[i] {
            continue;
        }
        let c = shape.cell_at(i);
        w.write_record([
            names.genes[c.gene].as_str(),
            names.regions[c.region].as_str(),
            names.periods[c.time].as_str(),
            names.periods[c.time + 1].as_str(),
            &fmt_f64(z.z()[i]),
            &z.df(c.region, c.time).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a z-score table over the transitions of `names`. Transitions that
/// are not listed are masked. Genes are taken from `names` when it lists
/// any, otherwise indexed by first appearance.
pub fn read_zscores(path: &Path, names: &LatticeNames) -> Result<(ZScoreGrid, LatticeNames)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers()?.clone();
    let err = |line: u64, field: &str, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        field: field.into(),
        message,
    };
    let cols_names = ["gene", "region", "from", "to", "z", "df"];
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(cols_names) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| err(1, name, "missing column in header".into()))?;
    }
    let fixed_genes = !names.genes.is_empty();
    let mut genes = names.genes.clone();
    let mut gene_ix = index_of(&genes);
    let (regions, periods) = (index_of(&names.regions), index_of(&names.periods));
    let nt = names.periods.len().saturating_sub(1);
    let nb = names.regions.len();
    // (gene, region, transition, z, line) plus df per (region, transition)
    let mut rows: Vec<(usize, usize, usize, f64, u64)> = Vec::new();
    let mut df: Vec<Option<usize>> = vec![None; nb * nt];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let g = match gene_ix.get(field(0)) {
            Some(&g) => g,
            None if !fixed_genes && !field(0).is_empty() => {
                genes.push(field(0).to_string());
                gene_ix.insert(field(0).to_string(), genes.len() - 1);
                genes.len() - 1
            }
            None => return Err(err(line, "gene", format!("unknown gene `{}`", field(0)))),
        };
        let b = *regions
            .get(field(1))
            .ok_or_else(|| err(line, "region", format!("unknown region `{}`", field(1))))?;
        let from = *periods
            .get(field(2))
            .ok_or_else(|| err(line, "from", format!("unknown period `{}`", field(2))))?;
        let to = *periods
            .get(field(3))
            .ok_or_else(|| err(line, "to", format!("unknown period `{}`", field(3))))?;
        if to != from + 1 {
            return Err(err(line, "to", format!("`{}` does not follow `{}`", field(3), field(2))));
        }
        let z: f64 = field(4)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(line, "z", format!("`{}` is not a finite number", field(4))))?;
        let d: usize = field(5)
            .parse()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| err(line, "df", format!("`{}` is not a positive integer", field(5))))?;
        let slot = &mut df[b * nt + from];
        if slot.is_some_and(|prev| prev != d) {
            return Err(err(line, "df", format!("conflicting degrees of freedom for region `{}`", field(1))));
        }
        *slot = Some(d);
        rows.push((g, b, from, z, line));
    }
    let out_names = LatticeNames {
        genes,
        regions: names.regions.clone(),
        periods: names.periods.clone(),
    };
    let shape = out_names.transition_shape()?;
    let mut zs = vec![0.0; shape.cells()];
    let mut mask = vec![true; shape.cells()];
    for &(g, b, t, z, line) in &rows {
        let i = shape.index(Cell::new(b, g, t));
        if !mask[i] {
            return Err(err(line, "gene", "transition listed twice".into()));
        }
        zs[i] = z;
        mask[i] = false;
    }
    let df = df.into_iter().map(|d| d.unwrap_or(0)).collect();
    Ok((ZScoreGrid::from_parts(shape, zs, mask, df)?, out_names))
}

/// One row per MCEM iteration with every parameter value.
pub fn write_trace(path: &Path, state: &McemState) -> Result<()> {
    let mut w = table_writer(path)?;
    let mut header: Vec<String> = [
        "stage",
        "iteration",
        "q_previous",
        "q_updated",
        "max_relative_change",
        "gradient_norm",
        "at_bound",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(state.params.names());
    w.write_record(&header)?;
    for e in &state.trace {
        let mut row = vec![
            e.stage.to_string(),
            e.iteration.to_string(),
            fmt_f64(e.q_previous),
            fmt_f64(e.q_updated),
            fmt_f64(e.max_relative_change),
            fmt_f64(e.gradient_norm),
            (e.at_bound as u8).to_string(),
        ];
        row.extend(e.params.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Context a DE fit needs to resume without the expression step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeContext {
    pub zscores: ZScoreGrid,
    pub model: LocalFdrModel,
    pub groups: Vec<RegionGroup>,
}

/// Everything needed to continue an interrupted MCEM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCheckpoint {
    pub config: McemConfig,
    pub state: McemState,
    pub names: LatticeNames,
    pub de: Option<DeContext>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    digest: String,
    payload: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `value` wrapped with a format tag and a SHA-256 digest of its
/// serialization. The file is replaced atomically.
pub fn save_checkpoint<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let payload = serde_json::to_string(value)?;
    let env = Envelope {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        digest: sha256_hex(payload.as_bytes()),
        payload,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_json(&tmp, &env)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint, refusing anything whose tag, version or digest does
/// not match.
pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let refuse = |why: String| Error::Checkpoint(format!("{}: {why}", path.display()));
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    let env: Envelope = serde_json::from_str(&text).map_err(|e| refuse(format!("unreadable envelope: {e}")))?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(refuse(format!("unknown format `{}`", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(refuse(format!("unsupported version {}", env.version)));
    }
    let digest = sha256_hex(env.payload.as_bytes());
    if digest != env.digest {
        return Err(refuse(format!("digest mismatch (stored {}, computed {digest})", env.digest)));
    }
    serde_json::from_str(&env.payload).map_err(|e| refuse(format!("payload does not decode: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut file = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, arguments: Vec<String>, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "stmrf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments,
            seed: None,
            threads: rayon::current_num_threads(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}
