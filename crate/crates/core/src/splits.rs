//! Cross-subject / cross-view splits and `(anchor, same-view, same-action)`
//! triplet sampling over the training side of a split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{DatasetManifest, ManifestRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    CrossSubject,
    CrossView,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-subject" => Ok(Protocol::CrossSubject),
            "cross-view" => Ok(Protocol::CrossView),
            other => Err(Error::Split(format!("unknown protocol {other:?}"))),
        }
    }
}

impl Protocol {
    fn label(self, r: &ManifestRecord) -> usize {
        match self {
            Protocol::CrossSubject => r.subject,
            Protocol::CrossView => r.view,
        }
    }

    fn domain(self, m: &DatasetManifest) -> usize {
        match self {
            Protocol::CrossSubject => m.meta.num_subjects,
            Protocol::CrossView => m.meta.num_views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub protocol: Protocol,
    pub held_out: Vec<usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Partitions the manifest by holding out the given subjects or views.
pub fn make_split(
    manifest: &DatasetManifest,
    protocol: Protocol,
    held_out: &[usize],
) -> Result<Split> {
    let domain = protocol.domain(manifest);
    let held: BTreeSet<usize> = held_out.iter().copied().collect();
    if held.is_empty() {
        return Err(Error::Split("held_out is empty".into()));
    }
    if let Some(&bad) = held.iter().find(|&&h| h >= domain) {
        return Err(Error::Split(format!(
            "held_out label {bad} outside [0,{domain})"
        )));
    }
    if held.len() == domain {
        return Err(Error::Split(format!(
            "held_out covers all {domain} labels; nothing left to train on"
        )));
    }
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for r in &manifest.records {
        if held.contains(&protocol.label(r)) {
            test_ids.push(r.clip_id.clone());
        } else {
            train_ids.push(r.clip_id.clone());
        }
    }
    Ok(Split {
        protocol,
        held_out: held.into_iter().collect(),
        train_ids,
        test_ids,
    })
}

impl Split {
    /// Disjointness, coverage of the manifest, and no held-out label on the train side.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        let test: HashSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        if train.len() != self.train_ids.len() || test.len() != self.test_ids.len() {
            return Err(Error::Split("duplicate ids within a side".into()));
        }
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::Split(format!("{id} is on both sides")));
        }
        let held: HashSet<usize> = self.held_out.iter().copied().collect();
        for r in &manifest.records {
            let in_train = train.contains(r.clip_id.as_str());
            if !in_train && !test.contains(r.clip_id.as_str()) {
                return Err(Error::Split(format!("{} is on neither side", r.clip_id)));
            }
            if in_train && held.contains(&self.protocol.label(r)) {
                return Err(Error::Split(format!(
                    "{} carries held-out label but is in train",
                    r.clip_id
                )));
            }
        }
        if train.len() + test.len() != manifest.records.len() {
            return Err(Error::Split(
                "split names clips absent from the manifest".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

/// Indices into [`TripletSampler::records`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub same_view: usize,
    pub same_action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingRole {
    SameView,
    SameAction,
}

impl std::fmt::Display for MissingRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MissingRole::SameView => "no sv",
            MissingRole::SameAction => "no sa",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageIssue {
    pub clip_id: String,
    pub missing: Vec<MissingRole>,
}

/// Train-side index for drawing triplets.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    records: Vec<ManifestRecord>,
    by_view: HashMap<usize, Vec<usize>>,
    by_action: HashMap<usize, Vec<usize>>,
}

impl TripletSampler {
    pub fn new(manifest: &DatasetManifest, split: &Split) -> Result<Self> {
        let lookup: HashMap<&str, &ManifestRecord> = manifest
            .records
            .iter()
            .map(|r| (r.clip_id.as_str(), r))
            .collect();
        let records = split
            .train_ids
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::Split(format!("train id {id} not in manifest")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_view: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut by_action: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            by_view.entry(r.view).or_default().push(i);
            by_action.entry(r.action).or_default().push(i);
        }
        Ok(Self {
            records,
            by_view,
            by_action,
        })
    }

    /// Train-side records in split order.
    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    /// Different action, same view as the anchor.
    pub fn same_view_candidates(&self, anchor: usize) -> Vec<usize> {
        let a = &self.records[anchor];
        self.by_view[&a.view]
            .iter()
            .copied()
            .filter(|&i| self.records[i].action != a.action)
            .collect()
    }

    /// Same action, different view from the anchor.
    pub fn same_action_candidates(&self, anchor: usize) -> Vec<usize> {
        let a = &self.records[anchor];
        self.by_action[&a.action]
            .iter()
            .copied()
            .filter(|&i| self.records[i].view != a.view)
            .collect()
    }

    pub fn sample_triplet<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<Triplet> {
        let id = &self.records[anchor].clip_id;
        let sv = self.same_view_candidates(anchor);
        let sv = *sv.choose(rng).ok_or_else(|| {
            Error::Sampling(format!(
                "anchor {id}: no same-view (sv) candidate with a different action"
            ))
        })?;
        let sa = self.same_action_candidates(anchor);
        let sa = *sa.choose(rng).ok_or_else(|| {
            Error::Sampling(format!(
                "anchor {id}: no same-action (sa) candidate from a different view"
            ))
        })?;
        Ok(Triplet {
            anchor,
            same_view: sv,
            same_action: sa,
        })
    }

    /// Every train clip that cannot anchor a triplet, with the missing roles.
    pub fn coverage_report(&self) -> Vec<CoverageIssue> {
        (0..self.records.len())
            .filter_map(|i| {
                let mut missing = Vec::new();
                if self.same_view_candidates(i).is_empty() {
                    missing.push(MissingRole::SameView);
                }
                if self.same_action_candidates(i).is_empty() {
                    missing.push(MissingRole::SameAction);
                }
                (!missing.is_empty()).then(|| CoverageIssue {
                    clip_id: self.records[i].clip_id.clone(),
                    missing,
                })
            })
            .collect()
    }

    /// One epoch: every train clip anchors exactly once, in shuffled order.
    pub fn epoch_batches<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Triplet>>> {
        if batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be ≥ 1"));
        }
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(rng);
        let triplets = order
            .into_iter()
            .map(|a| self.sample_triplet(a, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(triplets.chunks(batch_size).map(<[_]>::to_vec).collect())
    }
}

/// Coverage report for a split (empty ⇔ every train clip can anchor a triplet).
pub fn validate_triplet_coverage(
    manifest: &DatasetManifest,
    split: &Split,
) -> Result<Vec<CoverageIssue>> {
    Ok(TripletSampler::new(manifest, split)?.coverage_report())
}
