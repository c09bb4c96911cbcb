//! Draw files: one JSON header line followed by a CSV body with one row per
//! retained draw. The header carries the fit configuration, the column map
//! and a SHA-256 digest of the body.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChainDiagnostics, Draw, FitConfig, PosteriorDraws};
use crate::aft::ResponseTransform;
use crate::cdp::{Calibration, CdpHyper};
use crate::error::{Error, Result};
use crate::forest::{ForestPrior, Tree};

pub const FORMAT: &str = "npaft-draws";
pub const VERSION: u32 = 1;
pub const DRAWS_FILE: &str = "draws.csv";
pub const FORESTS_FILE: &str = "forests.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: FitConfig,
    pub transform: ResponseTransform,
    pub calibration: Calibration,
    pub hyper: CdpHyper,
    pub prior: ForestPrior,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub num_draws: usize,
    pub columns: Vec<String>,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub checkpoints: bool,
    /// Hex SHA-256 of everything after the header line.
    pub checksum: String,
}

pub fn column_names(n: usize, h: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["chain", "iteration", "mass", "sigma", "occupied", "max_index"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=n).map(|i| format!("m0_{i}")));
    cols.extend((1..=n).map(|i| format!("m1_{i}")));
    cols.extend((1..=h).map(|k| format!("pi_{k}")));
    cols.extend((1..=h).map(|k| format!("tau_{k}")));
    cols
}

fn body(draws: &PosteriorDraws) -> String {
    let mut out = String::new();
    out.push_str(&column_names(draws.n, draws.hyper.h).join(","));
    out.push('\n');
    for d in &draws.draws {
        let mut fields: Vec<String> = vec![
            d.chain.to_string(),
            d.iteration.to_string(),
            d.mass.to_string(),
            d.sigma.to_string(),
            d.occupied.to_string(),
            d.max_index.to_string(),
        ];
        for v in d.m0.iter().chain(&d.m1).chain(&d.pi).chain(&d.tau) {
            fields.push(v.to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialize draws to the header-plus-CSV text format.
pub fn draws_to_string(draws: &PosteriorDraws) -> Result<String> {
    let body = body(draws);
    let header = DrawHeader {
        format: FORMAT.into(),
        version: VERSION,
        seed: draws.config.seed,
        config: draws.config.clone(),
        transform: draws.transform,
        calibration: draws.calibration,
        hyper: draws.hyper,
        prior: draws.prior,
        n: draws.n,
        p: draws.p,
        h: draws.hyper.h,
        num_draws: draws.draws.len(),
        columns: column_names(draws.n, draws.hyper.h),
        diagnostics: draws.diagnostics.clone(),
        checkpoints: draws.checkpoints.is_some(),
        checksum: digest(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Numeric(e.to_string()))?;
    out.push('\n');
    out.push_str(&body);
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
    s.parse().map_err(|_| {
        Error::Checksum(format!("row {row}, column {col}: cannot parse `{s}`"))
    })
}

/// Parse the header-plus-CSV text format, verifying the checksum.
pub fn draws_from_str(text: &str) -> Result<PosteriorDraws> {
    let (head, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Checksum("missing header line".into()))?;
    let header: DrawHeader =
        serde_json::from_str(head).map_err(|e| Error::Checksum(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checksum(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let got = digest(body.as_bytes());
    if got != header.checksum {
        return Err(Error::Checksum(format!(
            "checksum mismatch: header {}, body {got}",
            header.checksum
        )));
    }
    let (n, h) = (header.n, header.h);
    let width = 6 + 2 * n + 2 * h;
    let mut lines = body.lines();
    let cols = lines.next().unwrap_or_default();
    if cols.split(',').count() != width {
        return Err(Error::Checksum("column header does not match n and H".into()));
    }
    let mut draws = Vec::with_capacity(header.num_draws);
    for (r, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(Error::Checksum(format!("row {} has {} fields", r + 1, f.len())));
        }
        let nums = |a: usize, b: usize| -> Result<Vec<f64>> {
            f[a..b].iter().map(|s| parse_field(s, r + 1, "value")).collect()
        };
        draws.push(Draw {
            chain: parse_field(f[0], r + 1, "chain")?,
            iteration: parse_field(f[1], r + 1, "iteration")?,
            mass: parse_field(f[2], r + 1, "mass")?,
            sigma: parse_field(f[3], r + 1, "sigma")?,
            occupied: parse_field(f[4], r + 1, "occupied")?,
            max_index: parse_field(f[5], r + 1, "max_index")?,
            m0: nums(6, 6 + n)?,
            m1: nums(6 + n, 6 + 2 * n)?,
            pi: nums(6 + 2 * n, 6 + 2 * n + h)?,
            tau: nums(6 + 2 * n + h, width)?,
        });
    }
    if draws.len() != header.num_draws {
        return Err(Error::Checksum(format!(
            "expected {} draws, found {}",
            header.num_draws,
            draws.len()
        )));
    }
    Ok(PosteriorDraws {
        config: header.config,
        transform: header.transform,
        calibration: header.calibration,
        hyper: header.hyper,
        prior: header.prior,
        n,
        p: header.p,
        draws,
        diagnostics: header.diagnostics,
        checkpoints: None,
        extra: Vec::new(),
        trace: Vec::new(),
    })
}

/// Write `draws.csv` (and `forests.jsonl` when forests were retained) into
/// `dir`.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DRAWS_FILE), draws_to_string(draws)?)?;
    if let Some(forests) = &draws.checkpoints {
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(FORESTS_FILE))?);
        for trees in forests {
            let line = serde_json::to_string(trees).map_err(|e| Error::Numeric(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read draws written by [`write_draws`], including forests when present.
pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let path = dir.join(DRAWS_FILE);
    if !path.exists() {
        return Err(Error::InputNotFound(path));
    }
    let mut draws = draws_from_str(&fs::read_to_string(&path)?)?;
    let fpath = dir.join(FORESTS_FILE);
    if fpath.exists() {
        let reader = BufReader::new(fs::File::open(&fpath)?);
        let mut forests = Vec::with_capacity(draws.draws.len());
        for line in reader.lines() {
            let trees: Vec<Tree> = serde_json::from_str(&line?)
                .map_err(|e| Error::Checksum(format!("bad forest checkpoint: {e}")))?;
            forests.push(trees);
        }
        if forests.len() != draws.draws.len() {
            return Err(Error::Checksum(format!(
                "{} forest checkpoints for {} draws",
                forests.len(),
                draws.draws.len()
            )));
        }
        draws.checkpoints = Some(forests);
    }
    Ok(draws)
}
