use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{InstructionSample, MediaIdentity, SourceRecord};

/// Media identities of every val/test record across all ingested datasets.
/// Identity includes the dataset id: the same path under another dataset
/// is a different image.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeldoutIndex(BTreeSet<MediaIdentity>);

impl HeldoutIndex {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SourceRecord>) -> Self {
        Self(
            records
                .into_iter()
                .filter(|r| r.split.is_heldout())
                .map(|r| r.media.identity())
                .collect(),
        )
    }

    pub fn insert(&mut self, identity: MediaIdentity) {
        self.0.insert(identity);
    }

    pub fn contains(&self, identity: &MediaIdentity) -> bool {
        self.0.contains(identity)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<MediaIdentity> for HeldoutIndex {
    fn from_iter<T: IntoIterator<Item = MediaIdentity>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub dataset_id: String,
    pub path: String,
    pub sample_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub heldout_media: usize,
    pub samples_checked: usize,
    pub violations: Vec<LeakageViolation>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Report-only: lists every sample whose media is held out, in input order.
pub fn leakage_check(samples: &[InstructionSample], heldout: &HeldoutIndex) -> LeakageReport {
    let violations = samples
        .iter()
        .filter(|s| heldout.contains(&s.media.identity()))
        .map(|s| LeakageViolation {
            dataset_id: s.media.dataset_id.clone(),
            path: s.media.path.clone(),
            sample_id: s.sample_id.clone(),
        })
        .collect();
    LeakageReport {
        heldout_media: heldout.len(),
        samples_checked: samples.len(),
        violations,
    }
}
