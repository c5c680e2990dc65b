//! CSV files for daily panels, site catalogs and block maxima.
//!
//! Every file written here starts with a `#` provenance line followed by a header row. Readers
//! skip `#` lines. Floats use the shortest representation that round-trips exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use crate::decluster::{BlockMaxima, Provenance};
use crate::error::{Error, Result};
use crate::gev::{Site, SiteCatalog};
use crate::simulate::DailyPanel;

/// Provenance comment written as the first line of every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProvenanceLine {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl ProvenanceLine {
    pub fn render(&self) -> String {
        format!(
            "# spatmax {} config={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash.as_deref().unwrap_or("none"),
            self.seed.map_or("none".to_string(), |s| s.to_string())
        )
    }
}

pub(crate) fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

fn parse_err(path: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    path: &str,
    expected: &[&str],
) -> Result<Vec<String>> {
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header starting with {}, got {}",
                expected.join(","),
                header.join(",")
            ),
        ));
    }
    Ok(header)
}

fn field_f64(path: &str, line: u64, name: &str, s: &str) -> Result<Option<f64>> {
    if s == "NA" || s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(parse_err(
            path,
            line,
            format!("{name}: '{s}' is not a finite number"),
        )),
    }
}

fn field_int<T: std::str::FromStr>(path: &str, line: u64, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("{name}: '{s}' is not an integer")))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Writes `site_id,x1,x2,cov1..covK`.
pub fn write_sites<W: Write>(mut w: W, sites: &SiteCatalog, prov: &ProvenanceLine) -> Result<()> {
    writeln!(w, "{}", prov.render())?;
    let mut header = vec!["site_id".to_string(), "x1".into(), "x2".into()];
    header.extend((1..=sites.n_covariates()).map(|k| format!("cov{k}")));
    writeln!(w, "{}", header.join(","))?;
    for s in sites.sites() {
        let mut row = vec![
            s.id.clone(),
            fmt_value(Some(s.coord[0])),
            fmt_value(Some(s.coord[1])),
        ];
        row.extend(s.covariates.iter().map(|c| fmt_value(Some(*c))));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_sites_from<R: Read>(r: R, path: &str) -> Result<SiteCatalog> {
    let mut rdr = reader(r);
    let header = check_header(&mut rdr, path, &["site_id", "x1", "x2"])?;
    let k = header.len() - 3;
    let mut sites = Vec::new();
    let mut seen = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate site id '{id}' (line {first})"),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            field_f64(path, line, &header[i], &rec[i])?
                .ok_or_else(|| parse_err(path, line, format!("{}: missing value", header[i])))
        };
        sites.push(Site {
            coord: [num(1)?, num(2)?],
            covariates: (0..k).map(|j| num(3 + j)).collect::<Result<_>>()?,
            id,
        });
    }
    SiteCatalog::new(sites)
}

pub fn read_sites(path: &Path) -> Result<SiteCatalog> {
    read_sites_from(open(path)?, &path.display().to_string())
}

/// Writes `site_id,block,day,value` with `NA` for missing days; days are 1-based.
pub fn write_daily<W: Write>(mut w: W, panel: &DailyPanel, prov: &ProvenanceLine) -> Result<()> {
    writeln!(w, "{}", prov.render())?;
    writeln!(w, "site_id,block,day,value")?;
    for (s, id) in panel.site_ids().iter().enumerate() {
        for (t, label) in panel.block_labels().iter().enumerate() {
            for (k, v) in panel.block(s, t).iter().enumerate() {
                let v = (!v.is_nan()).then_some(*v);
                writeln!(w, "{id},{label},{},{}", k + 1, fmt_value(v))?;
            }
        }
    }
    Ok(())
}

/// Reads a daily panel. Sites follow the catalog order; blocks are the sorted distinct labels and
/// the block length is the largest day index. Absent rows are missing days.
pub fn read_daily_from<R: Read>(r: R, path: &str, sites: &SiteCatalog) -> Result<DailyPanel> {
    let mut rdr = reader(r);
    check_header(&mut rdr, path, &["site_id", "block", "day", "value"])?;
    let mut rows = Vec::new();
    let mut keys: HashMap<(usize, i64, usize), u64> = HashMap::new();
    let mut blocks = BTreeSet::new();
    let mut m = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let s = sites
            .index_of(&rec[0])
            .ok_or_else(|| parse_err(path, line, format!("unknown site id '{}'", &rec[0])))?;
        let block: i64 = field_int(path, line, "block", &rec[1])?;
        let day: usize = field_int(path, line, "day", &rec[2])?;
        if day == 0 {
            return Err(parse_err(path, line, "day indices start at 1"));
        }
        let value = field_f64(path, line, "value", &rec[3])?;
        if let Some(first) = keys.insert((s, block, day), line) {
            return Err(parse_err(
                path,
                line,
                format!(
                    "duplicate (site, block, day) = ({}, {block}, {day}); first on line {first}",
                    &rec[0]
                ),
            ));
        }
        blocks.insert(block);
        m = m.max(day);
        rows.push((s, block, day, value));
    }
    let labels: Vec<i64> = blocks.into_iter().collect();
    let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut panel = DailyPanel::empty(sites.ids(), labels, m);
    for (s, block, day, value) in rows {
        panel.set(s, index[&block], day - 1, value);
    }
    Ok(panel)
}

pub fn read_daily(path: &Path, sites: &SiteCatalog) -> Result<DailyPanel> {
    read_daily_from(open(path)?, &path.display().to_string(), sites)
}

/// Writes `site_id,block,max` with `NA` for missing maxima.
pub fn write_maxima<W: Write>(mut w: W, maxima: &BlockMaxima, prov: &ProvenanceLine) -> Result<()> {
    writeln!(w, "{}", prov.render())?;
    writeln!(w, "site_id,block,max")?;
    for (s, id) in maxima.site_ids().iter().enumerate() {
        for (t, label) in maxima.block_labels().iter().enumerate() {
            writeln!(w, "{id},{label},{}", fmt_value(maxima.get(s, t)))?;
        }
    }
    Ok(())
}

pub fn read_maxima_from<R: Read>(r: R, path: &str, sites: &SiteCatalog) -> Result<BlockMaxima> {
    let mut rdr = reader(r);
    check_header(&mut rdr, path, &["site_id", "block", "max"])?;
    let mut rows = Vec::new();
    let mut keys: HashMap<(usize, i64), u64> = HashMap::new();
    let mut blocks = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let s = sites
            .index_of(&rec[0])
            .ok_or_else(|| parse_err(path, line, format!("unknown site id '{}'", &rec[0])))?;
        let block: i64 = field_int(path, line, "block", &rec[1])?;
        let value = field_f64(path, line, "max", &rec[2])?;
        if let Some(first) = keys.insert((s, block), line) {
            return Err(parse_err(
                path,
                line,
                format!(
                    "duplicate (site, block) = ({}, {block}); first on line {first}",
                    &rec[0]
                ),
            ));
        }
        blocks.insert(block);
        rows.push((s, block, value));
    }
    let labels: Vec<i64> = blocks.into_iter().collect();
    let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut maxima = BlockMaxima::empty(sites.ids(), labels);
    maxima.provenance = Provenance::FromPanel;
    for (s, block, value) in rows {
        maxima.set(s, index[&block], value);
    }
    Ok(maxima)
}

pub fn read_maxima(path: &Path, sites: &SiteCatalog) -> Result<BlockMaxima> {
    read_maxima_from(open(path)?, &path.display().to_string(), sites)
}

/// Creates `path` (and its parent directory) for writing.
pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::fs::File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(std::io::BufWriter::new(f))
}
