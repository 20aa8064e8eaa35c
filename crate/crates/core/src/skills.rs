//! Skill discovery and on-demand loading.
//!
//! A skill is a directory holding `SKILL.md`: a front-matter block between
//! `---` lines with `name`, `summary` and `version`, followed by the body.
//! Only the one-line metadata sits in an agent's context; the body is fetched
//! with the `load_skill` tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use walkdir::WalkDir;

use crate::tools::{
    string_params, ToolContext, ToolDescriptor, ToolError, ToolRegistry, ToolRegistryError, ToolSource,
};

pub const MANIFEST_FILE: &str = "SKILL.md";
pub const METADATA_HEADER: &str = "Available skills (call load_skill with a name for full instructions):";
pub const LOAD_SKILL_TOOL: &str = "load_skill";

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("malformed skill manifest {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },
    #[error("skill root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("skill `{0}` not found")]
    SkillNotFound(String),
    #[error("cannot read skill body {path}: {source}")]
    BodyRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillManifest {
    pub name: String,
    pub summary: String,
    pub body_path: PathBuf,
    pub version: String,
}

/// A manifest hidden by an earlier root defining the same name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowedSkill {
    pub name: String,
    pub path: PathBuf,
    pub shadowed_by: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillIndex {
    pub skills: BTreeMap<String, SkillManifest>,
    pub search_roots: Vec<PathBuf>,
    pub shadowed: Vec<ShadowedSkill>,
}

#[derive(Deserialize)]
struct FrontMatter {
    name: String,
    #[serde(default)]
    summary: String,
    #[serde(default)]
    version: String,
}

/// Splits a SKILL.md into (front matter, body).
fn split_front_matter(text: &str) -> Option<(&str, &str)> {
    let rest = text.strip_prefix("---")?;
    let rest = rest.strip_prefix("\r\n").or_else(|| rest.strip_prefix('\n'))?;
    let mut offset = 0;
    for line in rest.split_inclusive('\n') {
        if line.trim_end() == "---" {
            return Some((&rest[..offset], &rest[offset + line.len()..]));
        }
        offset += line.len();
    }
    None
}

fn parse_manifest(path: &Path) -> Result<SkillManifest, SkillError> {
    let err = |reason: String| SkillError::ManifestParse {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let (header, _) = split_front_matter(&text).ok_or_else(|| err("missing `---` front matter".into()))?;
    let fm: FrontMatter = serde_yaml::from_str(header).map_err(|e| err(e.to_string()))?;
    if fm.name.trim().is_empty() {
        return Err(err("empty skill name".into()));
    }
    Ok(SkillManifest {
        name: fm.name.trim().to_string(),
        summary: fm.summary,
        body_path: path.to_path_buf(),
        version: fm.version,
    })
}

impl SkillIndex {
    /// Walks every root for `SKILL.md` files. Within a root, directories are
    /// visited in name order; across roots, the first definition of a name
    /// wins and later ones are recorded as shadowed.
    pub fn discover<P: AsRef<Path>>(roots: &[P]) -> Result<Self, SkillError> {
        let mut index = SkillIndex {
            search_roots: roots.iter().map(|r| r.as_ref().to_path_buf()).collect(),
            ..Default::default()
        };
        for root in roots {
            let root = root.as_ref();
            if !root.is_dir() {
                return Err(SkillError::MissingRoot(root.to_path_buf()));
            }
            let walker = WalkDir::new(root).follow_links(true).sort_by_file_name();
            for entry in walker.into_iter().filter_map(Result::ok) {
                if !entry.file_type().is_file() || entry.file_name() != MANIFEST_FILE {
                    continue;
                }
                let manifest = parse_manifest(entry.path())?;
                match index.skills.get(&manifest.name) {
                    Some(existing) => index.shadowed.push(ShadowedSkill {
                        name: manifest.name.clone(),
                        path: manifest.body_path.clone(),
                        shadowed_by: existing.body_path.clone(),
                    }),
                    None => {
                        index.skills.insert(manifest.name.clone(), manifest);
                    }
                }
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.skills.keys().cloned().collect()
    }

    /// Header plus one `name: summary` line per skill; empty for an empty
    /// index.
    pub fn render_metadata(&self) -> String {
        if self.skills.is_empty() {
            return String::new();
        }
        let mut out = String::from(METADATA_HEADER);
        for skill in self.skills.values() {
            let summary = skill.summary.replace(['\r', '\n'], " ");
            out.push('\n');
            out.push_str(&format!("{}: {}", skill.name, summary.trim()));
        }
        out
    }

    /// The body section of the named skill, read fresh from disk.
    pub fn load_body(&self, name: &str) -> Result<String, SkillError> {
        let manifest = self
            .skills
            .get(name)
            .ok_or_else(|| SkillError::SkillNotFound(name.to_string()))?;
        let text = std::fs::read_to_string(&manifest.body_path).map_err(|source| SkillError::BodyRead {
            path: manifest.body_path.clone(),
            source,
        })?;
        Ok(match split_front_matter(&text) {
            Some((_, body)) => body.trim_start_matches(['\r', '\n']).to_string(),
            None => text,
        })
    }
}

/// Registers `load_skill` backed by `index`.
pub fn register_load_skill(registry: &mut ToolRegistry, index: Arc<SkillIndex>) -> Result<(), ToolRegistryError> {
    let descriptor = ToolDescriptor::new(
        LOAD_SKILL_TOOL,
        "Load the full instructions of a skill by name.",
        string_params(&["name"]),
        ToolSource::Skill,
    );
    registry.register_tool(descriptor, move |args: &Map<String, Value>, _: &ToolContext| {
        let name = crate::tools::builtin::str_arg(args, "name")?;
        index.load_body(name).map_err(|e| ToolError::Failed(e.to_string()))
    })
}
