//! Fine-grained to coarse-grained entity type mapping.
//!
//! The released corpus annotates entities with 39 domain-specific types; the
//! coarse setups collapse them to five shared types. The exact table is not
//! published, so a documented default ships with the crate and can be
//! overridden with `TypeMapping::from_file`. Reports flag which table was
//! used.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_MAPPING_JSON: &str = include_str!("../../data/fine_to_coarse.default.json");
const FINE_TYPES_TXT: &str = include_str!("../../data/fine_types.txt");

/// Where a mapping table came from; surfaced in reports so results obtained
/// with the built-in stand-in table are recognizable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum MappingSource {
    BuiltinDefault,
    File(String),
}

impl MappingSource {
    pub fn describe(&self) -> String {
        match self {
            MappingSource::BuiltinDefault => {
                "built-in default table (override with a mapping file)".to_string()
            }
            MappingSource::File(path) => format!("mapping file {path}"),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct MappingFile {
    coarse_types: Vec<String>,
    mapping: IndexMap<String, String>,
    #[serde(default)]
    aliases: IndexMap<String, String>,
}

/// Total map from the fine-grained entity types to the coarse-grained ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeMapping {
    fine_to_coarse: IndexMap<String, String>,
    coarse_types: Vec<String>,
    aliases: IndexMap<String, String>,
    source: MappingSource,
}

impl TypeMapping {
    /// The built-in default table: person-like types map to `person`,
    /// organization-like to `organization`, place-like to `location`,
    /// works/artifacts to `product`, everything else to `misc`.
    pub fn default_mapping() -> &'static TypeMapping {
        static DEFAULT: OnceLock<TypeMapping> = OnceLock::new();
        DEFAULT.get_or_init(|| {
            TypeMapping::parse(DEFAULT_MAPPING_JSON, MappingSource::BuiltinDefault)
                .expect("built-in mapping table is well-formed")
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<TypeMapping> {
        let path = path.as_ref();
        let contents = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        TypeMapping::parse(
            &contents,
            MappingSource::File(path.display().to_string()),
        )
    }

    fn parse(contents: &str, source: MappingSource) -> Result<TypeMapping> {
        let file: MappingFile = serde_json::from_str(contents)?;
        let image: BTreeSet<&String> = file.mapping.values().collect();
        let declared: BTreeSet<&String> = file.coarse_types.iter().collect();
        if image != declared {
            return Err(Error::Config(format!(
                "mapping image {image:?} does not match declared coarse types {declared:?}"
            )));
        }
        for (alias, target) in &file.aliases {
            if !file.mapping.contains_key(target) {
                return Err(Error::Config(format!(
                    "alias `{alias}` points at `{target}`, which is not a fine type"
                )));
            }
        }
        Ok(TypeMapping {
            fine_to_coarse: file.mapping,
            coarse_types: file.coarse_types,
            aliases: file.aliases,
            source,
        })
    }

    /// Coarse type for a fine type. Alias surface forms (spelling variants
    /// such as `musician` for `musicalartist`) are resolved first.
    pub fn map(&self, fine_type: &str) -> Result<&str> {
        let canonical = self
            .aliases
            .get(fine_type)
            .map(String::as_str)
            .unwrap_or(fine_type);
        self.fine_to_coarse
            .get(canonical)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownFineType(fine_type.to_string()))
    }

    /// The fine-type vocabulary, i.e. the mapping's domain.
    pub fn fine_types(&self) -> impl Iterator<Item = &str> {
        self.fine_to_coarse.keys().map(String::as_str)
    }

    pub fn coarse_types(&self) -> &[String] {
        &self.coarse_types
    }

    pub fn len(&self) -> usize {
        self.fine_to_coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine_to_coarse.is_empty()
    }

    pub fn source(&self) -> &MappingSource {
        &self.source
    }

    pub fn to_json(&self) -> String {
        let file = MappingFile {
            coarse_types: self.coarse_types.clone(),
            mapping: self.fine_to_coarse.clone(),
            aliases: self.aliases.clone(),
        };
        serde_json::to_string_pretty(&file).expect("mapping serialization")
    }
}

/// Deterministic lookup of the coarse type of `fine_type` in `mapping`.
pub fn map_fine_to_coarse<'a>(fine_type: &str, mapping: &'a TypeMapping) -> Result<&'a str> {
    mapping.map(fine_type)
}

/// The canonical 39-entry fine-grained entity type vocabulary.
pub fn default_fine_types() -> &'static [String] {
    static TYPES: OnceLock<Vec<String>> = OnceLock::new();
    TYPES.get_or_init(|| {
        FINE_TYPES_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    })
}
