//! On-disk feature store.
//!
//! A store is a directory holding `manifest.json` plus one binary blob per
//! site. Blob layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "PRBSTOR1"
//! 8       4           format version (u32)
//! 12      8           row count (u64)
//! 20      8           feature width d (u64)
//! 28      4*rows*d    row-major f32 features
//! end-4   4           CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Rows are ordered stimulus-major. Text-encoder sites have one row per
//! stimulus; U-Net sites have one row per (stimulus, seed) with seeds in
//! manifest order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::site::{SiteId, SiteKind};
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 8] = b"PRBSTOR1";
pub const STORE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Header bytes before the feature payload.
pub const BLOB_HEADER_LEN: usize = 8 + 4 + 8 + 8;
const BLOB_TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: usize,
    pub text: String,
}

impl Stimulus {
    /// Builds a dense stimulus list from texts.
    pub fn from_texts<I, S>(texts: I) -> Vec<Stimulus>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        texts
            .into_iter()
            .enumerate()
            .map(|(id, t)| Stimulus { id, text: t.into() })
            .collect()
    }
}

/// Checks ids are dense `0..n` and texts nonempty and unique.
pub fn validate_stimuli(stimuli: &[Stimulus]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, s) in stimuli.iter().enumerate() {
        if s.id != i {
            return Err(Error::Manifest(format!(
                "stimulus ids must be dense: position {i} has id {}",
                s.id
            )));
        }
        if s.text.trim().is_empty() {
            return Err(Error::Manifest(format!("stimulus {i} has empty text")));
        }
        if !seen.insert(s.text.as_str()) {
            return Err(Error::Manifest(format!("duplicate stimulus text {:?}", s.text)));
        }
    }
    Ok(())
}

/// One feature row as produced by an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub stimulus_id: usize,
    pub seed: u64,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub site: SiteId,
    pub d: usize,
    pub rows: usize,
    pub file: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub stimuli: Vec<Stimulus>,
    /// Noise seeds recorded for U-Net sites, in row order within a stimulus.
    pub seeds: Vec<u64>,
    pub sites: Vec<SiteEntry>,
    /// Free-form provenance (model id, scheduler, generator spec, ...).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl StoreManifest {
    pub fn new(stimuli: Vec<Stimulus>, seeds: Vec<u64>) -> Self {
        StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            stimuli,
            seeds,
            sites: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn n_stimuli(&self) -> usize {
        self.stimuli.len()
    }

    pub fn seeds_per_stimulus(&self, kind: SiteKind) -> usize {
        if kind.is_clip() {
            1
        } else {
            self.seeds.len()
        }
    }

    pub fn expected_rows(&self, kind: SiteKind) -> usize {
        self.n_stimuli() * self.seeds_per_stimulus(kind)
    }

    pub fn entry(&self, site: &SiteId) -> Option<&SiteEntry> {
        self.sites.iter().find(|e| e.site == *site)
    }

    pub fn site_ids(&self) -> Vec<SiteId> {
        self.sites.iter().map(|e| e.site).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != STORE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: STORE_FORMAT_VERSION,
            });
        }
        validate_stimuli(&self.stimuli)?;
        let unique_seeds: BTreeSet<_> = self.seeds.iter().collect();
        if unique_seeds.len() != self.seeds.len() {
            return Err(Error::Manifest("duplicate seed values".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.sites {
            e.site.validate()?;
            if !seen.insert(e.site) {
                return Err(Error::Manifest(format!("site {} listed twice", e.site)));
            }
            let expected = self.expected_rows(e.site.kind);
            if e.rows != expected {
                return Err(Error::Manifest(format!(
                    "site {} declares {} rows, expected {} ({} stimuli x {} seeds)",
                    e.site,
                    e.rows,
                    expected,
                    self.n_stimuli(),
                    self.seeds_per_stimulus(e.site.kind)
                )));
            }
            if e.file.contains('/') || e.file.contains('\\') || e.file.is_empty() {
                return Err(Error::Manifest(format!("bad blob file name {:?}", e.file)));
            }
        }
        Ok(())
    }
}

/// Dense row-major f32 feature matrix of one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMatrix {
    rows: usize,
    d: usize,
    data: Vec<f32>,
}

impl SiteMatrix {
    pub fn new(rows: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * d {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{d} matrix",
                data.len()
            )));
        }
        Ok(SiteMatrix { rows, d, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.d..(r + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

fn blob_bytes(m: &SiteMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(BLOB_HEADER_LEN + 4 * m.data.len() + BLOB_TRAILER_LEN);
    buf.extend_from_slice(BLOB_MAGIC);
    buf.extend_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(m.d as u64).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn parse_blob(site: SiteId, path: &Path, bytes: &[u8], entry: &SiteEntry) -> Result<SiteMatrix> {
    let truncated = |detail: String| Error::Truncated { site, detail };
    if bytes.len() < 8 || &bytes[..8] != BLOB_MAGIC {
        if bytes.len() < 8 {
            return Err(truncated(format!("{} bytes", bytes.len())));
        }
        return Err(Error::BadMagic { site, path: path.to_path_buf() });
    }
    if bytes.len() < BLOB_HEADER_LEN + BLOB_TRAILER_LEN {
        return Err(truncated(format!("{} bytes", bytes.len())));
    }
    let body = &bytes[..bytes.len() - BLOB_TRAILER_LEN];
    let found = crc32fast::hash(body);
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let expected_len =
        (rows as u128) * (d as u128) * 4 + (BLOB_HEADER_LEN + BLOB_TRAILER_LEN) as u128;
    let header_matches = rows as usize == entry.rows && d as usize == entry.d;
    if header_matches && expected_len != bytes.len() as u128 {
        return Err(truncated(format!(
            "header says {rows}x{d} but file has {} bytes",
            bytes.len()
        )));
    }
    if found != stored || found != entry.crc32 {
        return Err(Error::ChecksumMismatch {
            site,
            expected: entry.crc32,
            found,
        });
    }
    if version != STORE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: STORE_FORMAT_VERSION,
        });
    }
    if !header_matches {
        return Err(Error::Manifest(format!(
            "site {site}: blob is {rows}x{d}, manifest says {}x{}",
            entry.rows, entry.d
        )));
    }
    if expected_len != bytes.len() as u128 {
        return Err(truncated(format!("{} bytes", bytes.len())));
    }
    let data = body[BLOB_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SiteMatrix::new(rows as usize, d as usize, data)
}

/// Arranges extractor rows into canonical order, checking widths, finiteness,
/// duplicates and coverage.
pub fn assemble_rows(manifest: &StoreManifest, site: SiteId, rows: Vec<SampleRow>) -> Result<SiteMatrix> {
    let per = manifest.seeds_per_stimulus(site.kind);
    let n = manifest.n_stimuli();
    let d = rows.first().map_or(0, |r| r.features.len());
    let seed_pos: BTreeMap<u64, usize> = if site.kind.is_clip() {
        BTreeMap::new()
    } else {
        manifest.seeds.iter().enumerate().map(|(i, s)| (*s, i)).collect()
    };
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; n * per];
    for row in rows {
        if row.features.len() != d {
            return Err(Error::Dimension(format!(
                "site {site}: row for stimulus {} has width {}, expected {d}",
                row.stimulus_id,
                row.features.len()
            )));
        }
        if row.stimulus_id >= n {
            return Err(Error::Manifest(format!(
                "site {site}: unknown stimulus id {}",
                row.stimulus_id
            )));
        }
        if row.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "site {site}, stimulus {}, seed {}",
                row.stimulus_id, row.seed
            )));
        }
        let within = if site.kind.is_clip() {
            0
        } else {
            *seed_pos.get(&row.seed).ok_or_else(|| {
                Error::Manifest(format!("site {site}: seed {} not declared in manifest", row.seed))
            })?
        };
        let slot = &mut slots[row.stimulus_id * per + within];
        if slot.is_some() {
            return Err(Error::DuplicateRow {
                site,
                stimulus: row.stimulus_id,
                seed: row.seed,
            });
        }
        *slot = Some(row.features);
    }
    let mut data = Vec::with_capacity(n * per * d);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(f) => data.extend(f),
            None => {
                return Err(Error::Manifest(format!(
                    "site {site}: missing row for stimulus {} seed slot {}",
                    i / per,
                    i % per
                )))
            }
        }
    }
    SiteMatrix::new(n * per, d, data)
}

/// Incremental writer: add sites one at a time, then seal the manifest.
pub struct StoreWriter {
    dir: PathBuf,
    manifest: StoreManifest,
}

impl StoreWriter {
    pub fn create(dir: impl AsRef<Path>, mut manifest: StoreManifest) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        manifest.sites.clear();
        manifest.format_version = STORE_FORMAT_VERSION;
        manifest.validate()?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(StoreWriter { dir, manifest })
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn add_rows(&mut self, site: SiteId, rows: Vec<SampleRow>) -> Result<()> {
        let m = assemble_rows(&self.manifest, site, rows)?;
        self.add_matrix(site, &m)
    }

    pub fn add_matrix(&mut self, site: SiteId, m: &SiteMatrix) -> Result<()> {
        site.validate()?;
        if self.manifest.entry(&site).is_some() {
            return Err(Error::Manifest(format!("site {site} written twice")));
        }
        let expected = self.manifest.expected_rows(site.kind);
        if m.rows() != expected {
            return Err(Error::Dimension(format!(
                "site {site}: {} rows, expected {expected}",
                m.rows()
            )));
        }
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site {site}")));
        }
        let bytes = blob_bytes(m);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let file = format!("{}.bin", site.file_stem());
        let path = self.dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.sites.push(SiteEntry {
            site,
            d: m.d(),
            rows: m.rows(),
            file,
            crc32: crc,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<StoreManifest> {
        self.manifest.sites.sort_by_key(|e| e.site);
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Writes a complete store. `manifest.sites` must declare exactly the sites
/// in `blocks` with matching widths and row counts; checksums and file names
/// are filled in and the sealed manifest returned.
pub fn write_store(
    dir: impl AsRef<Path>,
    manifest: &StoreManifest,
    blocks: Vec<(SiteId, Vec<SampleRow>)>,
) -> Result<StoreManifest> {
    let declared: BTreeMap<SiteId, &SiteEntry> = manifest.sites.iter().map(|e| (e.site, e)).collect();
    if declared.len() != blocks.len() {
        return Err(Error::Manifest(format!(
            "manifest declares {} sites, {} blocks given",
            declared.len(),
            blocks.len()
        )));
    }
    let mut writer = StoreWriter::create(dir, manifest.clone())?;
    for (site, rows) in blocks {
        let entry = declared
            .get(&site)
            .ok_or_else(|| Error::Manifest(format!("site {site} not declared in manifest")))?;
        let m = assemble_rows(writer.manifest(), site, rows)?;
        if m.d() != entry.d || m.rows() != entry.rows {
            return Err(Error::Dimension(format!(
                "site {site}: rows are {}x{}, manifest declares {}x{}",
                m.rows(),
                m.d(),
                entry.rows,
                entry.d
            )));
        }
        writer.add_matrix(site, &m)?;
    }
    writer.finish()
}

/// Read handle over a store directory. Site matrices are loaded on demand
/// and their checksums verified on every load.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
    manifest: StoreManifest,
}

/// Opens a store and validates its manifest.
pub fn read_store(dir: impl AsRef<Path>) -> Result<Store> {
    Store::open(dir)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(Store { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn blob_path(&self, site: &SiteId) -> Result<PathBuf> {
        let entry = self.manifest.entry(site).ok_or(Error::UnknownSite(*site))?;
        Ok(self.dir.join(&entry.file))
    }

    pub fn load(&self, site: &SiteId) -> Result<SiteMatrix> {
        let entry = self.manifest.entry(site).ok_or(Error::UnknownSite(*site))?;
        let path = self.dir.join(&entry.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingBlob { site: *site, path })
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        parse_blob(*site, &path, &bytes, entry)
    }

    /// Loads every site, reporting the first failure.
    pub fn verify_all(&self) -> Result<()> {
        for e in &self.manifest.sites {
            self.load(&e.site)?;
        }
        Ok(())
    }

    /// Writes a new store containing only `keep` stimuli (in the given order,
    /// re-numbered densely) with all their rows at every site.
    pub fn write_subset(&self, dir: impl AsRef<Path>, keep: &[usize]) -> Result<Store> {
        let stimuli = Stimulus::from_texts(keep.iter().map(|&i| self.manifest.stimuli[i].text.clone()));
        let mut template = StoreManifest::new(stimuli, self.manifest.seeds.clone());
        template.metadata = self.manifest.metadata.clone();
        let mut writer = StoreWriter::create(&dir, template)?;
        for e in &self.manifest.sites {
            let m = self.load(&e.site)?;
            let per = self.manifest.seeds_per_stimulus(e.site.kind);
            let mut data = Vec::with_capacity(keep.len() * per * m.d());
            for &s in keep {
                for r in s * per..(s + 1) * per {
                    data.extend_from_slice(m.row(r));
                }
            }
            writer.add_matrix(e.site, &SiteMatrix::new(keep.len() * per, m.d(), data)?)?;
        }
        writer.finish()?;
        Store::open(dir)
    }
}
