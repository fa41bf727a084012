//! CT effective dose from scanner output: `DLP = CTDIvol * L`, `E = DLP * k`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoseRecord {
    /// mGy
    pub ctdi_vol: f64,
    /// cm
    pub scan_length: f64,
    /// mSv / (mGy cm)
    pub k_factor: f64,
    /// mGy cm
    pub dlp: f64,
    /// mSv
    pub effective_dose: f64,
    pub age_band: String,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Validation(format!("{name} must be a positive finite number, got {v}")));
    }
    Ok(())
}

pub fn compute_dose(ctdi_vol: f64, scan_length: f64, k_factor: f64) -> Result<DoseRecord> {
    positive("ctdi_vol", ctdi_vol)?;
    positive("scan_length", scan_length)?;
    positive("k_factor", k_factor)?;
    let dlp = ctdi_vol * scan_length;
    Ok(DoseRecord { ctdi_vol, scan_length, k_factor, dlp, effective_dose: dlp * k_factor, age_band: String::new() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DoseSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics of the effective dose; the median of an even count averages the middle pair.
pub fn aggregate(records: &[DoseRecord]) -> Result<DoseSummary> {
    if records.is_empty() {
        return Err(Error::Validation("cannot aggregate zero dose records".into()));
    }
    let mut e: Vec<f64> = records.iter().map(|r| r.effective_dose).collect();
    e.sort_by(f64::total_cmp);
    let n = e.len();
    let median = if n % 2 == 1 { e[n / 2] } else { 0.5 * (e[n / 2 - 1] + e[n / 2]) };
    Ok(DoseSummary { n, mean: e.iter().sum::<f64>() / n as f64, median, min: e[0], max: e[n - 1] })
}

/// Age band to conversion factor. Lines are `band<TAB>k`; `#` starts a comment
/// and a leading `band` header row is skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KTable {
    pub factors: BTreeMap<String, f64>,
    /// Comment lines, kept so provenance notes travel with the table.
    pub notes: Vec<String>,
}

impl KTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = KTable::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(c) = line.strip_prefix('#') {
                t.notes.push(c.trim().to_string());
                continue;
            }
            if line.is_empty() || (t.factors.is_empty() && line.starts_with("band")) {
                continue;
            }
            let bad = |what: &str| Error::Validation(format!("k-table line {}: {what}", n + 1));
            let (band, k) = line.split_once('\t').ok_or_else(|| bad("expected band<TAB>k"))?;
            let k: f64 = k.trim().parse().map_err(|_| bad("k is not a number"))?;
            positive("k_factor", k).map_err(|e| bad(&e.to_string()))?;
            if t.factors.insert(band.trim().to_string(), k).is_some() {
                return Err(bad("duplicate age band"));
            }
        }
        if t.factors.is_empty() {
            return Err(Error::Validation("k-table has no entries".into()));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// True unless a comment marks the table as authoritative; tables shipped
    /// with the repository carry a `non-authoritative` note.
    pub fn is_non_authoritative(&self) -> bool {
        self.notes.iter().any(|n| n.to_ascii_lowercase().contains("non-authoritative"))
    }

    pub fn get(&self, band: &str) -> Result<f64> {
        self.factors.get(band).copied().ok_or_else(|| Error::Validation(format!("age band {band:?} not in k-table")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanInput {
    pub ctdi_vol: f64,
    pub scan_length: f64,
    pub age_band: String,
}

/// Reads `ctdi_vol<TAB>scan_length<TAB>age_band` rows after a header.
pub fn parse_scans(text: &str) -> Result<Vec<ScanInput>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate().skip(1) {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Validation(format!("scan table line {}: {what}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [c, l, band] = cols[..] else {
            return Err(bad("expected ctdi_vol, scan_length, age_band"));
        };
        out.push(ScanInput {
            ctdi_vol: c.trim().parse().map_err(|_| bad("ctdi_vol is not a number"))?,
            scan_length: l.trim().parse().map_err(|_| bad("scan_length is not a number"))?,
            age_band: band.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn compute_all(scans: &[ScanInput], table: &KTable) -> Result<Vec<DoseRecord>> {
    scans
        .iter()
        .map(|s| {
            let mut r = compute_dose(s.ctdi_vol, s.scan_length, table.get(&s.age_band)?)?;
            r.age_band = s.age_band.clone();
            Ok(r)
        })
        .collect()
}
