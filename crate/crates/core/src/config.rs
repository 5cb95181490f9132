//! Run configuration: every tunable in one JSON document, with rigid and
//! deformable presets.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::LossConfig;
use crate::deform::GraphConfig;
use crate::error::{Error, Result};
use crate::geometry::SubsampleMode;
use crate::matching::MatchConfig;
use crate::metrics::MetricConfig;
use crate::nicp::NicpConfig;
use crate::ransac::RansacConfig;
use crate::rope::EncodingConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Rigid,
    Deformable,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(Self::Rigid),
            "deformable" => Ok(Self::Deformable),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    /// Voxel edge length, meters.
    pub voxel: f64,
    pub mode: SubsampleMode,
}

impl SubsampleConfig {
    pub fn rigid() -> Self {
        Self {
            voxel: 0.025,
            mode: SubsampleMode::Centroid,
        }
    }

    pub fn deformable() -> Self {
        Self {
            voxel: 0.01,
            ..Self::rigid()
        }
    }
}

/// Ground-truth supervision settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionConfig {
    /// Mutual nearest neighbours closer than this form `K_gt`, meters.
    pub gt_match_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub encoding: EncodingConfig,
    pub subsample: SubsampleConfig,
    pub matching: MatchConfig,
    pub supervision: SupervisionConfig,
    pub loss: LossConfig,
    pub metrics: MetricConfig,
    pub graph: GraphConfig,
    pub nicp: NicpConfig,
    pub ransac: RansacConfig,
}

impl RunConfig {
    pub fn rigid() -> Self {
        Self {
            mode: Mode::Rigid,
            seed: 0,
            encoding: EncodingConfig::default(),
            subsample: SubsampleConfig::rigid(),
            matching: MatchConfig::rigid(),
            supervision: SupervisionConfig { gt_match_radius: 0.06 },
            loss: LossConfig::rigid(),
            metrics: MetricConfig::rigid(),
            graph: GraphConfig::default(),
            nicp: NicpConfig::default(),
            ransac: RansacConfig::default(),
        }
    }

    pub fn deformable() -> Self {
        Self {
            mode: Mode::Deformable,
            subsample: SubsampleConfig::deformable(),
            matching: MatchConfig::deformable(),
            supervision: SupervisionConfig { gt_match_radius: 0.024 },
            loss: LossConfig::deformable(),
            metrics: MetricConfig::deformable(),
            ..Self::rigid()
        }
    }

    pub fn preset(mode: Mode) -> Self {
        match mode {
            Mode::Rigid => Self::rigid(),
            Mode::Deformable => Self::deformable(),
        }
    }

    /// Parses a JSON document. Missing keys take the preset of the
    /// document's `mode` (rigid when absent); unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        if !user.is_object() {
            return Err(Error::Format("config must be a JSON object".into()));
        }
        let mode = match user.get("mode") {
            Some(m) => serde_json::from_value(m.clone())?,
            None => Mode::default(),
        };
        let mut merged = serde_json::to_value(Self::preset(mode))?;
        merge(&mut merged, user);
        let config: Self = serde_json::from_value(merged)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        self.matching.validate()?;
        self.loss.validate()?;
        self.metrics.validate()?;
        self.nicp.validate()?;
        if !(self.subsample.voxel > 0.0) || !(self.supervision.gt_match_radius > 0.0) {
            return Err(Error::InvalidParameter("voxel and GT radius must be positive".into()));
        }
        if !(self.graph.node_spacing > 0.0) || !(self.graph.gamma_skin > 0.0) || self.graph.edge_k == 0 {
            return Err(Error::InvalidParameter("invalid deformation graph settings".into()));
        }
        if !(self.ransac.inlier_sigma > 0.0) || self.ransac.iterations == 0 {
            return Err(Error::InvalidParameter("invalid RANSAC settings".into()));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::rigid()
    }
}

/// Overlays `patch` on `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_hold_table_values() {
        let r = RunConfig::rigid();
        assert_eq!(r.metrics.sigma_inlier, 0.1);
        assert_eq!(r.matching.theta_c, 0.05);
        assert!(!r.matching.use_mnn);
        assert_eq!(r.supervision.gt_match_radius, 0.06);
        assert_eq!(r.loss.lambda_w, 0.0);
        assert_eq!(r.subsample.voxel, 0.025);
        let d = RunConfig::deformable();
        assert_eq!(d.metrics.sigma_inlier, 0.04);
        assert_eq!(d.matching.theta_c, 0.1);
        assert!(d.matching.use_mnn);
        assert_eq!(d.supervision.gt_match_radius, 0.024);
        assert_eq!(d.loss.lambda_w, 0.1);
        assert_eq!(d.subsample.voxel, 0.01);
        assert_eq!(d.graph.gamma_skin, 0.009);
        assert_eq!(d.encoding.dim, 528);
    }

    #[test]
    fn round_trip() {
        for c in [RunConfig::rigid(), RunConfig::deformable()] {
            assert_eq!(RunConfig::from_json(&c.to_json_pretty()).unwrap(), c);
        }
    }

    #[test]
    fn partial_documents_take_mode_preset() {
        let c = RunConfig::from_json(r#"{"mode": "deformable", "nicp": {"lambda_a": 2.0}}"#).unwrap();
        assert_eq!(c.nicp.lambda_a, 2.0);
        assert_eq!(c.matching.theta_c, 0.1);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::rigid());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sigma": 0.1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"matching": {"theta": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"matching": {"theta_c": 1.5}}"#).is_err());
        assert!(RunConfig::from_json("[]").is_err());
    }
}
