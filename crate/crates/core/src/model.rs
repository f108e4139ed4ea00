//! Versioned JSON container for a fitted transition model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::partition::BlockPartition;
use crate::propagation::TransitionModel;
use crate::tree::ClusterTree;
use crate::variational::{lower_bound, BlockParams, BoundReport};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub spec: DivergenceSpec,
    /// Partition mode the model was built with, e.g. `refine:5`.
    pub partition_mode: String,
    /// Row ids in data order.
    pub ids: Vec<String>,
    pub tree: ClusterTree,
    pub partition: BlockPartition,
    pub params: BlockParams,
    pub report: BoundReport,
}

impl ModelFile {
    pub fn new(
        spec: DivergenceSpec,
        partition_mode: String,
        ids: Vec<String>,
        tree: ClusterTree,
        partition: BlockPartition,
        params: BlockParams,
        report: BoundReport,
    ) -> Self {
        ModelFile {
            version: MODEL_VERSION,
            spec,
            partition_mode,
            ids,
            tree,
            partition,
            params,
            report,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let model: ModelFile = serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if model.params.len() != model.partition.len() || model.ids.len() != model.tree.n_points() {
            return Err(Error::Format("model parts are inconsistent".into()));
        }
        Ok(model)
    }

    /// Re-evaluates the bound from the stored parts.
    pub fn recompute_bound(&self) -> Result<BoundReport> {
        lower_bound(&self.params, &self.partition, &self.tree)
    }

    pub fn transition_model(&self) -> Result<TransitionModel> {
        TransitionModel::new(self.tree.clone(), self.partition.clone(), &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{smooth, DataMatrix};
    use crate::partition::coarsest_partition;
    use crate::tree::build_cluster_tree;
    use crate::variational::optimize_q;

    fn sample() -> ModelFile {
        let rows: Vec<Vec<f64>> = [0.0, 0.7, 2.0, 3.1].iter().map(|&x| vec![x]).collect();
        let data = smooth(DataMatrix::from_dense(&rows).unwrap(), 0.0);
        let spec = DivergenceSpec::sq_euclidean(1, 1.3);
        let tree = build_cluster_tree(&data, &spec.build().unwrap()).unwrap();
        let p = coarsest_partition(&tree).unwrap();
        let fit = optimize_q(&tree, &p).unwrap();
        let report = lower_bound(&fit.params, &p, &tree).unwrap();
        ModelFile::new(spec, "coarsest".into(), data.base.ids().to_vec(), tree, p, fit.params, report)
    }

    #[test]
    fn round_trip_preserves_bound() {
        let m = sample();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        let back = ModelFile::load(f.path()).unwrap();
        assert_eq!(back, m);
        let again = back.recompute_bound().unwrap();
        assert!((again.ell - m.report.ell).abs() <= 1e-10 * m.report.ell.abs());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut m = sample();
        m.version = 99;
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert!(matches!(ModelFile::load(f.path()), Err(Error::Format(_))));
    }
}
