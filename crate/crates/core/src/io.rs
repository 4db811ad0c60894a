//! Matrix ingestion and export, gene filtering, depth thinning, and label
//! and report files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::sampler::RunReport;
use crate::state::{CountMatrix, Partition, SparseCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    /// Matrix Market `coordinate integer general`.
    Mtx,
    /// Directory with `matrix.mtx`, `genes.tsv` and `barcodes.tsv`.
    TenxDir,
    /// Dense CSV with a header row and row names in the first column.
    Csv,
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtx" => Ok(Self::Mtx),
            "tenx_dir" | "10x" => Ok(Self::TenxDir),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidArgument(format!("unknown matrix format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub format: MatrixFormat,
    pub top_k_genes: Option<usize>,
    /// Rows of the file are cells instead of genes.
    pub transpose: bool,
}

impl IngestOptions {
    pub fn new(format: MatrixFormat) -> Self {
        Self {
            format,
            top_k_genes: None,
            transpose: false,
        }
    }
}

/// Reads a matrix and applies the optional gene selection.
pub fn read_matrix(path: impl AsRef<Path>, options: &IngestOptions) -> Result<CountMatrix> {
    let path = path.as_ref();
    let m = match options.format {
        MatrixFormat::Mtx => read_mtx(path, options.transpose)?,
        MatrixFormat::TenxDir => read_tenx_dir(path, options.transpose)?,
        MatrixFormat::Csv => read_csv(path, options.transpose)?,
    };
    match options.top_k_genes {
        Some(k) => select_top_variable_genes(&m, k),
        None => Ok(m),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn parse_count(path: &Path, line: usize, tok: &str) -> Result<u32> {
    if tok.starts_with('-') && tok[1..].parse::<u64>().is_ok() {
        return Err(Error::format(path, line, format!("negative count `{tok}`")));
    }
    tok.parse::<u32>()
        .map_err(|_| Error::format(path, line, format!("count `{tok}` is not a nonnegative integer")))
}

/// Collects `(row, col) -> count` triplets into a cell-major matrix.
fn assemble(
    path: &Path,
    n_rows: usize,
    n_cols: usize,
    triplets: BTreeMap<(usize, usize), u64>,
    transpose: bool,
) -> Result<CountMatrix> {
    let (n_genes, n_cells) = if transpose { (n_cols, n_rows) } else { (n_rows, n_cols) };
    let mut cells: Vec<SparseCell> = vec![Vec::new(); n_cells];
    for ((r, c), v) in triplets {
        if v == 0 {
            continue;
        }
        let v = u32::try_from(v)
            .map_err(|_| Error::format(path, 0, format!("count at ({}, {}) overflows", r + 1, c + 1)))?;
        let (g, cell) = if transpose { (c, r) } else { (r, c) };
        cells[cell].push((g as u32, v));
    }
    for cell in &mut cells {
        cell.sort_unstable_by_key(|&(g, _)| g);
    }
    CountMatrix::new(n_genes, cells)
}

fn read_mtx(path: &Path, transpose: bool) -> Result<CountMatrix> {
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(path, 1, "empty file")),
    };
    let words: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words != ["%%matrixmarket", "matrix", "coordinate", "integer", "general"] {
        return Err(Error::format(
            path,
            1,
            "expected `%%MatrixMarket matrix coordinate integer general`",
        ));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut seen = 0usize;
    let mut duplicates = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let Some((n_rows, n_cols, _)) = size else {
            if toks.len() != 3 {
                return Err(Error::format(path, lineno, "size line needs `rows cols entries`"));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::format(path, lineno, format!("bad size field `{s}`")))
            };
            size = Some((parse(toks[0])?, parse(toks[1])?, parse(toks[2])?));
            continue;
        };
        if toks.len() != 3 {
            return Err(Error::format(path, lineno, "entry needs `row col count`"));
        }
        let index = |s: &str, bound: usize| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if (1..=bound).contains(&v) => Ok(v - 1),
                _ => Err(Error::format(path, lineno, format!("index `{s}` outside 1..={bound}"))),
            }
        };
        let r = index(toks[0], n_rows)?;
        let c = index(toks[1], n_cols)?;
        let v = parse_count(path, lineno, toks[2])?;
        match triplets.entry((r, c)) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                duplicates += 1;
                *e.get_mut() += u64::from(v);
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(u64::from(v));
            }
        }
        seen += 1;
    }
    let Some((n_rows, n_cols, nnz)) = size else {
        return Err(Error::format(path, 1, "missing size line"));
    };
    if seen != nnz {
        return Err(Error::format(
            path,
            0,
            format!("size line declares {nnz} entries but {seen} were found"),
        ));
    }
    if duplicates > 0 {
        log::warn!("{}: {duplicates} duplicate entries were summed", path.display());
    }
    assemble(path, n_rows, n_cols, triplets, transpose)
}

fn read_name_column(path: &Path, column: usize) -> Result<Vec<String>> {
    let reader = open(path)?;
    let mut names = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let name = fields
            .get(column)
            .or_else(|| fields.first())
            .ok_or_else(|| Error::format(path, idx + 1, "empty name line"))?;
        names.push(name.to_string());
    }
    Ok(names)
}

fn read_tenx_dir(dir: &Path, transpose: bool) -> Result<CountMatrix> {
    let m = read_mtx(&dir.join("matrix.mtx"), transpose)?;
    let genes = dir.join("genes.tsv");
    let barcodes = dir.join("barcodes.tsv");
    let m = if genes.exists() {
        // Second column holds the gene symbol when present.
        let names = read_name_column(&genes, 1)?;
        m.with_gene_names(names)
            .map_err(|e| Error::format(&genes, 0, e.to_string()))?
    } else {
        m
    };
    if barcodes.exists() {
        let names = read_name_column(&barcodes, 0)?;
        m.with_cell_names(names)
            .map_err(|e| Error::format(&barcodes, 0, e.to_string()))
    } else {
        Ok(m)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, line, format!("{other:?}")),
    }
}

fn read_csv(path: &Path, transpose: bool) -> Result<CountMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::format(path, 1, "header needs a name column and at least one data column"));
    }
    let col_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_names = Vec::new();
    let mut triplets = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::format(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let r = row_names.len();
        row_names.push(rec[0].to_string());
        for (c, tok) in rec.iter().skip(1).enumerate() {
            let v = parse_count(path, line, tok)?;
            if v > 0 {
                triplets.insert((r, c), u64::from(v));
            }
        }
    }
    if row_names.is_empty() {
        return Err(Error::format(path, 1, "no data rows"));
    }
    let m = assemble(path, row_names.len(), col_names.len(), triplets, transpose)?;
    let (genes, cells) = if transpose { (col_names, row_names) } else { (row_names, col_names) };
    m.with_gene_names(genes)?.with_cell_names(cells)
}

fn gene_names_or_default(m: &CountMatrix) -> Vec<String> {
    m.gene_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..m.n_genes()).map(|g| format!("gene{g}")).collect())
}

fn cell_names_or_default(m: &CountMatrix) -> Vec<String> {
    m.cell_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..m.n_cells()).map(|c| format!("cell{c}")).collect())
}

/// Writes genes as rows in Matrix Market coordinate format.
pub fn write_mtx(path: impl AsRef<Path>, m: &CountMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate integer general").map_err(io)?;
    writeln!(w, "{} {} {}", m.n_genes(), m.n_cells(), m.nnz()).map_err(io)?;
    for (c, cell) in m.cells().iter().enumerate() {
        for &(g, v) in cell {
            writeln!(w, "{} {} {}", g + 1, c + 1, v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Writes a 10x-style directory (`matrix.mtx`, `genes.tsv`, `barcodes.tsv`).
pub fn write_tenx_dir(dir: impl AsRef<Path>, m: &CountMatrix) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_mtx(dir.join("matrix.mtx"), m)?;
    let write_lines = |p: PathBuf, lines: Vec<String>| -> Result<()> {
        let mut w = create(&p)?;
        for l in lines {
            writeln!(w, "{l}").map_err(|e| Error::io(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    };
    let genes = gene_names_or_default(m);
    write_lines(
        dir.join("genes.tsv"),
        genes.iter().map(|g| format!("{g}\t{g}")).collect(),
    )?;
    write_lines(dir.join("barcodes.tsv"), cell_names_or_default(m))
}

/// Writes a dense CSV with genes as rows and cells as columns.
pub fn write_csv(path: impl AsRef<Path>, m: &CountMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["gene".to_string()];
    header.extend(cell_names_or_default(m));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let genes = gene_names_or_default(m);
    let mut dense = vec![vec![0u32; m.n_cells()]; m.n_genes()];
    for (c, cell) in m.cells().iter().enumerate() {
        for &(g, v) in cell {
            dense[g as usize][c] = v;
        }
    }
    for (g, row) in dense.iter().enumerate() {
        let mut rec = vec![genes[g].clone()];
        rec.extend(row.iter().map(u32::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Population standard deviation of each gene's raw counts across cells.
pub fn gene_std_devs(m: &CountMatrix) -> Vec<f64> {
    let n = m.n_cells() as f64;
    let mut sum = vec![0.0f64; m.n_genes()];
    let mut sq = vec![0.0f64; m.n_genes()];
    for cell in m.cells() {
        for &(g, v) in cell {
            let v = f64::from(v);
            sum[g as usize] += v;
            sq[g as usize] += v * v;
        }
    }
    sum.iter()
        .zip(&sq)
        .map(|(&s, &q)| {
            let mean = s / n;
            (q / n - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Keeps the `k` genes with the largest standard deviation, ties going to
/// the lower gene index. Retained genes keep their original order.
pub fn select_top_variable_genes(m: &CountMatrix, k: usize) -> Result<CountMatrix> {
    if k == 0 || k > m.n_genes() {
        return Err(Error::InvalidArgument(format!(
            "top gene count {k} outside 1..={}",
            m.n_genes()
        )));
    }
    let sd = gene_std_devs(m);
    let mut order: Vec<usize> = (0..m.n_genes()).collect();
    order.sort_by(|&a, &b| sd[b].total_cmp(&sd[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[..k].to_vec();
    keep.sort_unstable();
    let mut remap = vec![u32::MAX; m.n_genes()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new as u32;
    }
    let cells = m
        .cells()
        .iter()
        .map(|cell| {
            cell.iter()
                .filter(|(g, _)| remap[*g as usize] != u32::MAX)
                .map(|&(g, v)| (remap[g as usize], v))
                .collect()
        })
        .collect();
    let mut out = CountMatrix::new(k, cells)?;
    if let Some(names) = m.gene_names() {
        out = out.with_gene_names(keep.iter().map(|&g| names[g].clone()).collect())?;
    }
    if let Some(names) = m.cell_names() {
        out = out.with_cell_names(names.to_vec())?;
    }
    Ok(out)
}

/// Binomial thinning of every cell whose total exceeds `target`: each UMI
/// survives independently with probability `target / total`.
pub fn downsample_depth(m: &CountMatrix, target: u64, seed: u64) -> Result<CountMatrix> {
    if target == 0 {
        return Err(Error::InvalidArgument("target depth must be positive".into()));
    }
    let cells: Vec<SparseCell> = m
        .cells()
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let total: u64 = cell.iter().map(|&(_, v)| u64::from(v)).sum();
            if total <= target {
                return cell.clone();
            }
            let p = target as f64 / total as f64;
            let mut rng = stream(seed, Domain::Downsample, 0, i as u64);
            cell.iter()
                .filter_map(|&(g, v)| {
                    let kept = Binomial::new(u64::from(v), p)
                        .expect("thinning probability lies in (0, 1)")
                        .sample(&mut rng) as u32;
                    (kept > 0).then_some((g, kept))
                })
                .collect()
        })
        .collect();
    let mut out = CountMatrix::new(m.n_genes(), cells)?;
    if let Some(n) = m.gene_names() {
        out = out.with_gene_names(n.to_vec())?;
    }
    if let Some(n) = m.cell_names() {
        out = out.with_cell_names(n.to_vec())?;
    }
    Ok(out)
}

/// Writes a `cell,cluster` CSV. Cells are named by `cell_names` when
/// given, otherwise by index.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize], cell_names: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(n) = cell_names {
        if n.len() != labels.len() {
            return Err(Error::InvalidArgument("cell name count differs from label count".into()));
        }
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["cell", "cluster"]).map_err(|e| csv_error(path, e))?;
    for (i, l) in labels.iter().enumerate() {
        let name = cell_names.map_or_else(|| i.to_string(), |n| n[i].clone());
        w.write_record([name, l.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `cell,cluster` CSV.
pub fn read_labels(path: impl AsRef<Path>) -> Result<(Vec<String>, Partition)> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() != 2 {
        return Err(Error::format(path, 1, "labels file needs exactly two columns"));
    }
    let mut names = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let l = rec[1]
            .parse::<usize>()
            .map_err(|_| Error::format(path, line, format!("cluster id `{}` is not a nonnegative integer", &rec[1])))?;
        names.push(rec[0].to_string());
        labels.push(l);
    }
    Ok((names, Partition::new(labels)))
}

/// Writes the run report as pretty-printed JSON.
pub fn write_report(path: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Runtime(e.to_string()))?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
