//! Run configuration files (TOML). Errors name the offending key path.
//!
//! ```toml
//! store = "data/store"          # relative paths resolve against this file
//! ratings = "data/ratings.csv"
//! output = "results"
//! sites = ["clip_hidden:1..12", "clip_final"]   # default: every site
//! attributes = ["is it dangerous"]               # questions or ids; default: all
//! subgroups = ["spatial", "non_spatial"]         # reported by `subgroups`
//! outer_folds = 5
//! fold_seed = 0
//! pca_method = "auto"                            # auto | covariance | gram
//! grid_site_stride = 10
//! keep_predictions = false
//! write_models = false
//! svg = true
//!
//! [permutations]
//! count = 2500
//! seed = 0
//!
//! [grids.clip]                  # clip | unet_bottleneck | unet_output
//! alphas = [110.0, 150.0]       # explicit lists, or ranges:
//! components = [80, 120]
//! # alpha_range = [110.0, 180.0]
//! # alpha_steps = 8
//! # component_range = [80, 160]
//! # component_steps = 9
//!
//! [entangle]
//! sites = ["clip_final"]        # default: the run's sites
//! reference_site = "clip_final" # paired t-tests against this site
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::cv::{GridConfig, PipelineConfig};
use crate::data::{SiteFilter, SiteGroup, SiteId};
use crate::error::{Error, Result};
use crate::preprocess::PcaMethod;
use crate::stats::PermutationPlan;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub store: PathBuf,
    pub ratings: PathBuf,
    pub output: PathBuf,
    pub sites: Vec<SiteFilter>,
    /// Attribute selectors: a rating-table column id or a question.
    pub attributes: Option<Vec<String>>,
    pub subgroups: Vec<String>,
    pub pipeline: PipelineConfig,
    pub write_models: bool,
    pub svg: bool,
    pub entangle_sites: Vec<SiteFilter>,
    pub reference_site: Option<SiteId>,
}

/// Typed access to one TOML table, tracking its key path and rejecting
/// unknown keys.
struct Section<'a> {
    path: String,
    table: &'a Table,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(path: impl Into<String>, table: &'a Table) -> Self {
        Section { path: path.into(), table, used: Vec::new() }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&mut self, k: &'static str) -> Option<&'a Value> {
        self.used.push(k);
        self.table.get(k)
    }

    fn err(&self, k: &str, msg: impl Into<String>) -> Error {
        Error::config(self.key(k), msg)
    }

    fn string(&mut self, k: &'static str) -> Result<Option<String>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.err(k, format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn uint(&mut self, k: &'static str) -> Result<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(self.err(k, format!("expected a non-negative integer, found {v}"))),
        }
    }

    fn boolean(&mut self, k: &'static str) -> Result<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(self.err(k, format!("expected true or false, found {}", v.type_str()))),
        }
    }

    fn array(&mut self, k: &'static str) -> Result<Option<&'a Vec<Value>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(v) => Err(self.err(k, format!("expected an array, found {}", v.type_str()))),
        }
    }

    fn strings(&mut self, k: &'static str) -> Result<Option<Vec<String>>> {
        let Some(a) = self.array(k)? else { return Ok(None) };
        a.iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Integer(n) => Ok(n.to_string()),
                other => Err(self.err(&format!("{k}[{i}]"), format!("expected a string, found {}", other.type_str()))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn floats(&mut self, k: &'static str) -> Result<Option<Vec<f64>>> {
        let Some(a) = self.array(k)? else { return Ok(None) };
        a.iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(n) => Ok(*n as f64),
                other => Err(self.err(&format!("{k}[{i}]"), format!("expected a number, found {}", other.type_str()))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn uints(&mut self, k: &'static str) -> Result<Option<Vec<usize>>> {
        let Some(a) = self.array(k)? else { return Ok(None) };
        a.iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Integer(n) if *n >= 0 => Ok(*n as usize),
                other => Err(self.err(&format!("{k}[{i}]"), format!("expected a non-negative integer, found {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn table(&mut self, k: &'static str) -> Result<Option<&'a Table>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(t)),
            Some(v) => Err(self.err(k, format!("expected a table, found {}", v.type_str()))),
        }
    }

    fn site_filters(&mut self, k: &'static str) -> Result<Option<Vec<SiteFilter>>> {
        let Some(list) = self.strings(k)? else { return Ok(None) };
        list.iter()
            .enumerate()
            .map(|(i, s)| s.parse().map_err(|e: Error| self.err(&format!("{k}[{i}]"), e.to_string())))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        for k in self.table.keys() {
            if !self.used.contains(&k.as_str()) {
                return Err(self.err(k, "unknown key"));
            }
        }
        Ok(())
    }
}

fn grid_section(mut s: Section<'_>, group: SiteGroup) -> Result<GridConfig> {
    let default = GridConfig::default_for(group);
    let alphas = match (s.floats("alphas")?, s.floats("alpha_range")?) {
        (Some(_), Some(_)) => return Err(s.err("alpha_range", "give either alphas or alpha_range")),
        (Some(a), None) => a,
        (None, Some(r)) => {
            if r.len() != 2 {
                return Err(s.err("alpha_range", "expected [low, high]"));
            }
            let steps = s.uint("alpha_steps")?.unwrap_or(8) as usize;
            GridConfig::evenly((r[0], r[1]), steps, (1, 1), 1)
                .map_err(|e| s.err("alpha_range", e.to_string()))?
                .alphas
        }
        (None, None) => default.alphas.clone(),
    };
    let components = match (s.uints("components")?, s.uints("component_range")?) {
        (Some(_), Some(_)) => return Err(s.err("component_range", "give either components or component_range")),
        (Some(c), None) => c,
        (None, Some(r)) => {
            if r.len() != 2 {
                return Err(s.err("component_range", "expected [low, high]"));
            }
            let steps = s.uint("component_steps")?.unwrap_or(9) as usize;
            GridConfig::evenly((1.0, 1.0), 1, (r[0], r[1]), steps)
                .map_err(|e| s.err("component_range", e.to_string()))?
                .components
        }
        (None, None) => default.components.clone(),
    };
    // consume step keys given without a range so they are not "unknown"
    s.uint("alpha_steps")?;
    s.uint("component_steps")?;
    let g = GridConfig::new(alphas, components).map_err(|e| Error::config(s.path.clone(), e.to_string()))?;
    s.finish()?;
    Ok(g)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            Error::config("<file>", msg)
        })?;
        let mut s = Section::new("", &root);
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let store = resolve(s.string("store")?.ok_or_else(|| Error::config("store", "missing required key"))?);
        let ratings = resolve(s.string("ratings")?.ok_or_else(|| Error::config("ratings", "missing required key"))?);
        let output = resolve(s.string("output")?.unwrap_or_else(|| "results".into()));
        let sites = s.site_filters("sites")?.unwrap_or_default();
        let attributes = s.strings("attributes")?;
        let subgroups = s
            .strings("subgroups")?
            .unwrap_or_else(|| vec!["spatial".into(), "non_spatial".into()]);

        let mut pipeline = PipelineConfig::default();
        if let Some(k) = s.uint("outer_folds")? {
            if k < 2 {
                return Err(Error::config("outer_folds", "must be >= 2"));
            }
            pipeline.outer_folds = k as usize;
        }
        if let Some(v) = s.uint("fold_seed")? {
            pipeline.fold_seed = v;
        }
        if let Some(m) = s.string("pca_method")? {
            pipeline.pca_method = match m.as_str() {
                "auto" => PcaMethod::Auto,
                "covariance" => PcaMethod::Covariance,
                "gram" => PcaMethod::Gram,
                other => return Err(Error::config("pca_method", format!("unknown method {other:?}"))),
            };
        }
        if let Some(v) = s.uint("grid_site_stride")? {
            if v == 0 {
                return Err(Error::config("grid_site_stride", "must be >= 1"));
            }
            pipeline.grid_site_stride = v as usize;
        }
        pipeline.keep_predictions = s.boolean("keep_predictions")?.unwrap_or(false);
        let write_models = s.boolean("write_models")?.unwrap_or(false);
        pipeline.keep_models = write_models;
        let svg = s.boolean("svg")?.unwrap_or(true);

        if let Some(t) = s.table("permutations")? {
            let mut p = Section::new("permutations", t);
            let count = p.uint("count")?.unwrap_or(pipeline.permutations.count as u64);
            let seed = p.uint("seed")?.unwrap_or(0);
            pipeline.permutations =
                PermutationPlan::new(count as usize, seed).map_err(|e| Error::config("permutations.count", e.to_string()))?;
            p.finish()?;
        }

        if let Some(t) = s.table("grids")? {
            for (name, v) in t {
                let key = format!("grids.{name}");
                let group = SiteGroup::ALL
                    .into_iter()
                    .find(|g| g.as_str() == name)
                    .ok_or_else(|| Error::config(&key, "unknown site group (clip, unet_bottleneck, unet_output)"))?;
                let Value::Table(gt) = v else {
                    return Err(Error::config(&key, "expected a table"));
                };
                pipeline.grids.insert(group, grid_section(Section::new(key, gt), group)?);
            }
        }

        let mut entangle_sites = Vec::new();
        let mut reference_site = None;
        if let Some(t) = s.table("entangle")? {
            let mut e = Section::new("entangle", t);
            entangle_sites = e.site_filters("sites")?.unwrap_or_default();
            if let Some(r) = e.string("reference_site")? {
                reference_site = Some(r.parse().map_err(|err: Error| e.err("reference_site", err.to_string()))?);
            }
            e.finish()?;
        }
        s.finish()?;
        Ok(RunConfig {
            store,
            ratings,
            output,
            sites,
            attributes,
            subgroups,
            pipeline,
            write_models,
            svg,
            entangle_sites,
            reference_site,
        })
    }
}
