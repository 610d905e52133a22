//! Codebook text files, channel and result CSVs, and JSON run summaries.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use serde::Serialize;

use smrls_core::channel::CMatrix;
use smrls_core::codec::SmCodebook;
use smrls_core::replica::DictionaryRow;

use crate::harness::RunManifest;

/// Header `M_u L_u I`, then one support per line as 1-based antenna indices.
pub fn write_codebook(codebook: &SmCodebook) -> String {
    let mut out = format!(
        "{} {} {}\n",
        codebook.m_u(),
        codebook.l_u(),
        codebook.index_bits()
    );
    for s in codebook.supports() {
        let line: Vec<String> = s.iter().map(|a| (a + 1).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_codebook(text: &str) -> Result<SmCodebook> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().context("codebook file is empty")?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse().with_context(|| format!("bad header field {f:?}")))
        .collect::<Result<_>>()?;
    let [m_u, l_u, i] = fields[..] else {
        bail!("codebook header must be `M_u L_u I`");
    };
    let supports: Vec<Vec<usize>> = lines
        .map(|l| {
            l.split_whitespace()
                .map(|f| {
                    f.parse()
                        .with_context(|| format!("bad antenna index {f:?}"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let codebook = SmCodebook::from_one_based(m_u, l_u, &supports)?;
    if codebook.index_bits() as usize != i {
        bail!(
            "header says I = {i} but M_u = {m_u}, L_u = {l_u} gives {}",
            codebook.index_bits()
        );
    }
    Ok(codebook)
}

/// Row-major matrix; every cell is the text `re,im`.
pub fn write_channel_csv<W: Write>(matrix: &CMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..matrix.cols()).map(|c| format!("c{c}")))?;
    for r in 0..matrix.rows() {
        w.write_record(matrix.row(r).iter().map(|v| format!("{},{}", v.re, v.im)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_channel_csv<R: Read>(input: R) -> Result<CMatrix> {
    let mut rd = csv::Reader::from_reader(input);
    let cols = rd.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec?;
        for cell in rec.iter() {
            let (re, im) = cell
                .split_once(',')
                .with_context(|| format!("cell {cell:?} is not `re,im`"))?;
            data.push(Complex64::new(re.trim().parse()?, im.trim().parse()?));
        }
        rows += 1;
    }
    Ok(CMatrix::from_row_major(rows, cols, data)?)
}

pub const REPLICA_COLUMNS: [&str; 8] = [
    "snr_db",
    "lambda",
    "c_star",
    "q_star",
    "residual",
    "mse",
    "error_rate",
    "converged",
];

pub fn write_replica_csv<W: Write>(rows: &[DictionaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPLICA_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.lambda.to_string(),
            r.c_star.to_string(),
            r.q_star.to_string(),
            r.residual.to_string(),
            r.mse.to_string(),
            r.error_rate.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A header row followed by numeric rows, written with `,` and `.`.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<String>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            bail!("row has {} fields, header has {}", r.len(), header.len());
        }
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
pub struct Summary<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    pub result: &'a T,
}

pub fn write_summary<W: Write, T: Serialize>(
    manifest: &RunManifest,
    result: &T,
    out: W,
) -> Result<()> {
    serde_json::to_writer_pretty(out, &Summary { manifest, result })?;
    Ok(())
}
