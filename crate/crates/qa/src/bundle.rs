//! Loading the input files of one assessment.

use std::path::{Path, PathBuf};

use qa_core::assess::{assess, now_timestamp, Assessment, SystemDescriptor};
use qa_core::findings::AdapterRegistry;
use qa_core::{AssessError, AssessmentPlan, FindingsReport, QualityModel, VulnTaxonomy};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    /// The file could not be read at all.
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The file was read but its content is unusable; carries the pipeline
    /// stage it belongs to.
    #[error("{stage}: {path}: {message}")]
    Content {
        stage: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error(transparent)]
    Pipeline(#[from] AssessError),
}

pub fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn content(stage: &'static str, path: &Path, message: impl ToString) -> LoadError {
    LoadError::Content {
        stage,
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn load_model(path: &Path) -> Result<QualityModel, LoadError> {
    let text = read(path)?;
    qa_core::qmodel::decode_model(&text).map_err(|e| content("validate", path, e))
}

pub fn load_plan(path: &Path) -> Result<AssessmentPlan, LoadError> {
    let text = read(path)?;
    AssessmentPlan::from_json(&text).map_err(|e| content("derive", path, e))
}

/// Paths of everything an assessment needs.
#[derive(Debug, Clone)]
pub struct BundlePaths {
    pub model: PathBuf,
    pub plan: PathBuf,
    pub taxonomy: PathBuf,
    pub system: PathBuf,
    pub findings: Vec<PathBuf>,
    pub adapter: String,
}

/// Parsed inputs, ready to assess.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub model: QualityModel,
    pub plan: AssessmentPlan,
    pub taxonomy: VulnTaxonomy,
    pub system: SystemDescriptor,
    pub reports: Vec<FindingsReport>,
}

impl Bundle {
    pub fn load(paths: &BundlePaths) -> Result<Self, LoadError> {
        let model = load_model(&paths.model)?;
        let plan = load_plan(&paths.plan)?;
        let taxonomy = VulnTaxonomy::from_json(&read(&paths.taxonomy)?)
            .map_err(|e| content("findings", &paths.taxonomy, e))?;
        let system = SystemDescriptor::from_json(&read(&paths.system)?)
            .map_err(|e| content("system", &paths.system, e))?;
        let registry = AdapterRegistry::with_builtins();
        let reports = paths
            .findings
            .iter()
            .map(|p| {
                let text = read(p)?;
                registry
                    .parse(&text, &paths.adapter)
                    .map_err(|e| content("findings", p, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            model,
            plan,
            taxonomy,
            system,
            reports,
        })
    }

    pub fn assess(&self) -> Result<Assessment, LoadError> {
        self.assess_at(now_timestamp())
    }

    pub fn assess_at(&self, timestamp: String) -> Result<Assessment, LoadError> {
        Ok(assess(
            &self.model,
            &self.plan,
            &self.reports,
            &self.taxonomy,
            &self.system,
            timestamp,
        )?)
    }
}
