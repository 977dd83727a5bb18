//! Dataset configuration, directory scanning and per-case bundles.
//!
//! Files are found by full-matching root-relative, `/`-separated paths
//! against three regular expressions. Cases and slices are ordered
//! lexicographically, which also fixes the previous/next traversal order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    #[default]
    Binary,
    Categorical,
}

/// On-disk JSON shape of a configuration document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset_root: PathBuf,
    volume_pattern: String,
    label3d_pattern: String,
    slice_pattern: String,
    output_transform_template: String,
    output_label_template: String,
    #[serde(default)]
    label_kind: LabelKind,
    #[serde(default = "default_threshold")]
    binarization_threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

const REQUIRED_FIELDS: [&str; 6] = [
    "dataset_root",
    "volume_pattern",
    "label3d_pattern",
    "slice_pattern",
    "output_transform_template",
    "output_label_template",
];

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub dataset_root: PathBuf,
    pub volume_pattern: Regex,
    pub label3d_pattern: Regex,
    pub slice_pattern: Regex,
    pub output_transform_template: String,
    pub output_label_template: String,
    pub label_kind: LabelKind,
    pub binarization_threshold: f64,
}

fn compile(field: &str, pattern: &str, groups: &[&str]) -> Result<Regex> {
    let re = Regex::new(&format!("^(?:{pattern})$")).map_err(|e| Error::BadPattern {
        field: field.to_string(),
        message: e.to_string(),
    })?;
    for g in groups {
        if !re.capture_names().flatten().any(|n| n == *g) {
            return Err(Error::MissingCaptureGroup {
                field: field.to_string(),
                group: g.to_string(),
            });
        }
    }
    Ok(re)
}

fn check_template(field: &str, template: &str, placeholders: &[&str]) -> Result<()> {
    for p in placeholders {
        if !template.contains(&format!("{{{p}}}")) {
            return Err(Error::MalformedConfig(format!(
                "{field} must contain the {{{p}}} placeholder"
            )));
        }
    }
    Ok(())
}

/// Parses and validates a JSON configuration document. A relative
/// `dataset_root` is kept as written; see [`load_config`].
pub fn parse_config(text: &str) -> Result<DatasetConfig> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::MalformedConfig("configuration must be a JSON object".into()))?;
    if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(Error::MissingField(missing.to_string()));
    }
    let raw: RawConfig =
        serde_json::from_value(value).map_err(|e| Error::MalformedConfig(e.to_string()))?;
    if !(0.0..=1.0).contains(&raw.binarization_threshold) {
        return Err(Error::MalformedConfig(format!(
            "binarization_threshold {} outside [0, 1]",
            raw.binarization_threshold
        )));
    }
    check_template("output_transform_template", &raw.output_transform_template, &["case_id"])?;
    check_template(
        "output_label_template",
        &raw.output_label_template,
        &["case_id", "slice_id"],
    )?;
    Ok(DatasetConfig {
        volume_pattern: compile("volume_pattern", &raw.volume_pattern, &["case_id"])?,
        label3d_pattern: compile("label3d_pattern", &raw.label3d_pattern, &["case_id"])?,
        slice_pattern: compile("slice_pattern", &raw.slice_pattern, &["case_id", "slice_id"])?,
        dataset_root: raw.dataset_root,
        output_transform_template: raw.output_transform_template,
        output_label_template: raw.output_label_template,
        label_kind: raw.label_kind,
        binarization_threshold: raw.binarization_threshold,
    })
}

/// Reads a configuration file, resolving a relative root against the
/// file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<DatasetConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    if cfg.dataset_root.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset_root = base.join(&cfg.dataset_root);
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Volume,
    Label3d,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetRow {
    pub case_id: String,
    pub role: Role,
    pub slice_id: Option<String>,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetTable {
    pub root: PathBuf,
    pub rows: Vec<DatasetRow>,
    pub case_ids: Vec<String>,
}

#[derive(Default)]
struct CaseFiles {
    volume: Vec<String>,
    label3d: Vec<String>,
    slices: BTreeMap<String, Vec<String>>,
}

pub fn scan(config: &DatasetConfig) -> Result<DatasetTable> {
    let root = &config.dataset_root;
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut cases: BTreeMap<String, CaseFiles> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.clone());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let Ok(rel) = entry.path().strip_prefix(root) else {
            continue;
        };
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let hits = [
            config.volume_pattern.captures(&rel),
            config.label3d_pattern.captures(&rel),
            config.slice_pattern.captures(&rel),
        ];
        let n_hits = hits.iter().filter(|h| h.is_some()).count();
        if n_hits > 1 {
            return Err(Error::AmbiguousMatch(format!("`{rel}` matches {n_hits} patterns")));
        }
        let [vol, lab, sl] = hits;
        if let Some(c) = vol {
            cases.entry(c["case_id"].to_string()).or_default().volume.push(rel.clone());
        } else if let Some(c) = lab {
            cases.entry(c["case_id"].to_string()).or_default().label3d.push(rel.clone());
        } else if let Some(c) = sl {
            cases
                .entry(c["case_id"].to_string())
                .or_default()
                .slices
                .entry(c["slice_id"].to_string())
                .or_default()
                .push(rel.clone());
        }
    }
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    for (case_id, files) in &cases {
        for (role, found) in [(Role::Volume, &files.volume), (Role::Label3d, &files.label3d)] {
            match found.as_slice() {
                [] => {
                    return Err(Error::IncompleteCase {
                        case_id: case_id.clone(),
                        role: format!("{role:?}").to_lowercase(),
                    })
                }
                [one] => rows.push(DatasetRow {
                    case_id: case_id.clone(),
                    role,
                    slice_id: None,
                    path: one.clone(),
                }),
                many => {
                    return Err(Error::AmbiguousMatch(format!(
                        "case `{case_id}` has {} {:?} files: {}",
                        many.len(),
                        role,
                        many.join(", ")
                    )))
                }
            }
        }
        if files.slices.is_empty() {
            return Err(Error::IncompleteCase {
                case_id: case_id.clone(),
                role: "slice".into(),
            });
        }
        for (slice_id, paths) in &files.slices {
            if paths.len() > 1 {
                return Err(Error::AmbiguousMatch(format!(
                    "case `{case_id}` slice `{slice_id}` matches {}",
                    paths.join(", ")
                )));
            }
            rows.push(DatasetRow {
                case_id: case_id.clone(),
                role: Role::Slice,
                slice_id: Some(slice_id.clone()),
                path: paths[0].clone(),
            });
        }
    }
    Ok(DatasetTable {
        root: root.clone(),
        case_ids: cases.into_keys().collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceEntry {
    pub slice_id: String,
    pub path: PathBuf,
    pub output_label: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseBundle {
    pub case_id: String,
    pub volume: PathBuf,
    pub label3d: PathBuf,
    pub slices: Vec<SliceEntry>,
    pub output_transform: PathBuf,
}

impl CaseBundle {
    pub fn slice_ids(&self) -> Vec<String> {
        self.slices.iter().map(|s| s.slice_id.clone()).collect()
    }
}

pub fn fill_template(template: &str, case_id: &str, slice_id: Option<&str>) -> String {
    let out = template.replace("{case_id}", case_id);
    match slice_id {
        Some(s) => out.replace("{slice_id}", s),
        None => out,
    }
}

pub fn bundle(table: &DatasetTable, config: &DatasetConfig, case_id: &str) -> Result<CaseBundle> {
    if !table.case_ids.iter().any(|c| c == case_id) {
        return Err(Error::UnknownCase(case_id.to_string()));
    }
    let root = &table.root;
    let rows = table.rows.iter().filter(|r| r.case_id == case_id);
    let mut volume = None;
    let mut label3d = None;
    let mut slices = Vec::new();
    for r in rows {
        let path = root.join(&r.path);
        match r.role {
            Role::Volume => volume = Some(path),
            Role::Label3d => label3d = Some(path),
            Role::Slice => {
                let slice_id = r.slice_id.clone().unwrap_or_default();
                slices.push(SliceEntry {
                    output_label: root.join(fill_template(
                        &config.output_label_template,
                        case_id,
                        Some(&slice_id),
                    )),
                    slice_id,
                    path,
                })
            }
        }
    }
    let incomplete = |role: &str| Error::IncompleteCase {
        case_id: case_id.to_string(),
        role: role.to_string(),
    };
    Ok(CaseBundle {
        case_id: case_id.to_string(),
        volume: volume.ok_or_else(|| incomplete("volume"))?,
        label3d: label3d.ok_or_else(|| incomplete("label3d"))?,
        output_transform: root.join(fill_template(
            &config.output_transform_template,
            case_id,
            None,
        )),
        slices,
    })
}

/// A validated configuration together with its scanned table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub table: DatasetTable,
}

impl Dataset {
    pub fn open(config: DatasetConfig) -> Result<Self> {
        let table = scan(&config)?;
        Ok(Dataset { config, table })
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::open(load_config(path)?)
    }

    pub fn case_ids(&self) -> &[String] {
        &self.table.case_ids
    }

    pub fn bundle(&self, case_id: &str) -> Result<CaseBundle> {
        bundle(&self.table, &self.config, case_id)
    }
}
