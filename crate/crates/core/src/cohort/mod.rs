//! Record linkage: raw demographic, exit and incident rows become one
//! [`ClientProfile`] per individual.
//!
//! Individuals are identified by the [`IdCombo`] built from the three source
//! identifiers. Non-admitted demographic rows are removed before grouping.
//! Each remaining demographic row is one entry into the shelter system; its
//! exit is the earliest unused exit of the same individual on or after the
//! entry and no later than the next entry.

pub(crate) mod csv_io;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    canonicalize, CategoricalField, Category, Citizenship, Employment, FamilyType, FeatureError,
    Race, ReasonHomeless,
};

pub use csv_io::{
    read_demographics, read_exits, read_incidents, read_profiles, write_profiles, IngestError,
    DEMOGRAPHICS_HEADER, EXITS_HEADER, INCIDENTS_HEADER, PROFILE_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("identifier part `{0}` is empty")]
    EmptyKeyPart(&'static str),
    #[error("as-of date {as_of} precedes open episode entry {entry}")]
    AsOfBeforeEntry { as_of: NaiveDate, entry: NaiveDate },
    #[error("no residence episodes")]
    NoEpisodes,
    #[error("client {id}: {source}")]
    Category {
        id: IdCombo,
        #[source]
        source: FeatureError,
    },
}

/// The three source identifiers of a record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientKey {
    pub cares_id: String,
    pub family_id: String,
    pub case_id: String,
}

impl ClientKey {
    /// Builds a key from trimmed parts; every part must be non-blank.
    pub fn new(cares_id: &str, family_id: &str, case_id: &str) -> Result<Self, CohortError> {
        let part = |v: &str, name: &'static str| {
            let t = v.trim();
            if t.is_empty() {
                Err(CohortError::EmptyKeyPart(name))
            } else {
                Ok(t.to_string())
            }
        };
        Ok(ClientKey {
            cares_id: part(cares_id, "cares_id")?,
            family_id: part(family_id, "family_id")?,
            case_id: part(case_id, "case_id")?,
        })
    }

    pub fn id_combo(&self) -> IdCombo {
        make_id_combo(self).expect("ClientKey parts are validated on construction")
    }
}

/// Unique-individual key: the three identifiers joined by `|`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdCombo(String);

impl IdCombo {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wrap an already-joined value, e.g. one read back from `profiles.csv`.
    pub fn from_joined(value: impl Into<String>) -> Self {
        IdCombo(value.into())
    }

    /// Split back into the three identifiers; `None` if the value is not a
    /// well-formed combo.
    pub fn key(&self) -> Option<ClientKey> {
        let mut parts = vec![String::new()];
        let mut chars = self.0.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => parts.last_mut()?.push(chars.next()?),
                '|' => parts.push(String::new()),
                c => parts.last_mut()?.push(c),
            }
        }
        match parts.as_slice() {
            [c, f, k] => ClientKey::new(c, f, k).ok(),
            _ => None,
        }
    }
}

impl fmt::Display for IdCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn escape_part(part: &str, out: &mut String) {
    for c in part.chars() {
        if c == '|' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
}

/// `cares|family|case`, with `|` and `\` inside a part backslash-escaped so
/// distinct triples never collide.
pub fn make_id_combo(key: &ClientKey) -> Result<IdCombo, CohortError> {
    let parts = [
        ("cares_id", &key.cares_id),
        ("family_id", &key.family_id),
        ("case_id", &key.case_id),
    ];
    let mut value = String::new();
    for (i, (name, part)) in parts.into_iter().enumerate() {
        if part.trim().is_empty() {
            return Err(CohortError::EmptyKeyPart(name));
        }
        if i > 0 {
            value.push('|');
        }
        escape_part(part, &mut value);
    }
    Ok(IdCombo(value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicRecord {
    pub key: ClientKey,
    pub age: Option<f64>,
    pub race: String,
    pub family_type: String,
    pub reason_homeless: String,
    pub employment: String,
    pub citizenship: String,
    pub income: Option<f64>,
    pub entry_date: NaiveDate,
    pub admitted: bool,
}

impl DemographicRecord {
    fn raw(&self, field: CategoricalField) -> &str {
        match field {
            CategoricalField::Race => &self.race,
            CategoricalField::FamilyType => &self.family_type,
            CategoricalField::ReasonHomeless => &self.reason_homeless,
            CategoricalField::Employment => &self.employment,
            CategoricalField::Citizenship => &self.citizenship,
        }
    }

    // Total order used to make grouping independent of input row order.
    fn chronological(&self, other: &Self) -> Ordering {
        self.entry_date
            .cmp(&other.entry_date)
            .then_with(|| cmp_opt_f64(self.age, other.age))
            .then_with(|| self.race.cmp(&other.race))
            .then_with(|| self.family_type.cmp(&other.family_type))
            .then_with(|| self.reason_homeless.cmp(&other.reason_homeless))
            .then_with(|| self.employment.cmp(&other.employment))
            .then_with(|| self.citizenship.cmp(&other.citizenship))
            .then_with(|| cmp_opt_f64(self.income, other.income))
    }
}

fn cmp_opt_f64(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    pub key: ClientKey,
    pub exit_date: NaiveDate,
    pub exit_reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncidentRecord {
    pub key: ClientKey,
    pub incident_date: NaiveDate,
    pub incident_type: String,
}

/// One contiguous shelter stay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidenceEpisode {
    pub entry_date: NaiveDate,
    /// `None` while the stay is still open.
    pub exit_date: Option<NaiveDate>,
    pub exit_reason: Option<String>,
}

impl ResidenceEpisode {
    pub fn is_open(&self) -> bool {
        self.exit_date.is_none()
    }
}

/// One unique individual with encoded predictors and derived label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: IdCombo,
    pub age: Option<f64>,
    pub race: Race,
    pub family_type: FamilyType,
    pub reason_homeless: ReasonHomeless,
    pub employment: Employment,
    pub citizenship: Citizenship,
    pub income: Option<f64>,
    pub episodes: Vec<ResidenceEpisode>,
    pub total_los_days: u64,
    pub incident_count: usize,
    pub readmit: u8,
}

impl ClientProfile {
    pub fn code_of(&self, field: CategoricalField) -> u8 {
        match field {
            CategoricalField::Race => self.race.code(),
            CategoricalField::FamilyType => self.family_type.code(),
            CategoricalField::ReasonHomeless => self.reason_homeless.code(),
            CategoricalField::Employment => self.employment.code(),
            CategoricalField::Citizenship => self.citizenship.code(),
        }
    }
}

/// Sum of episode lengths in whole days; open episodes run to `as_of`.
pub fn total_length_of_stay(
    episodes: &[ResidenceEpisode],
    as_of: NaiveDate,
) -> Result<u64, CohortError> {
    episodes.iter().try_fold(0u64, |acc, ep| {
        let end = match ep.exit_date {
            Some(exit) => exit,
            None if as_of < ep.entry_date => {
                return Err(CohortError::AsOfBeforeEntry {
                    as_of,
                    entry: ep.entry_date,
                })
            }
            None => as_of,
        };
        let days = (end - ep.entry_date).num_days().max(0) as u64;
        Ok(acc + days)
    })
}

/// 1 for a multi-entry client (two or more episodes), 0 otherwise.
pub fn derive_label(episodes: &[ResidenceEpisode]) -> Result<u8, CohortError> {
    match episodes.len() {
        0 => Err(CohortError::NoEpisodes),
        1 => Ok(0),
        _ => Ok(1),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Warning {
    /// Records of one individual disagree on a field; the latest entry wins.
    ConflictingDemographics {
        id: IdCombo,
        field: &'static str,
        kept: String,
        discarded: String,
    },
    OpenEpisode { id: IdCombo, entry: NaiveDate },
    /// An episode without exit is followed by another entry.
    MissingExitBeforeReentry { id: IdCombo, entry: NaiveDate },
    /// Exit of an admitted individual not matched to any entry.
    UnpairedExit { id: IdCombo, exit: NaiveDate },
    /// Exit whose identifier has no demographic record at all.
    OrphanExit { id: IdCombo, exit: NaiveDate },
    OrphanIncident { id: IdCombo, date: NaiveDate },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ConflictingDemographics {
                id,
                field,
                kept,
                discarded,
            } => write!(
                f,
                "{id}: conflicting {field}: kept {kept:?} (latest entry), discarded {discarded:?}"
            ),
            Warning::OpenEpisode { id, entry } => write!(f, "{id}: episode entered {entry} has no exit"),
            Warning::MissingExitBeforeReentry { id, entry } => {
                write!(f, "{id}: episode entered {entry} has no exit before the next entry")
            }
            Warning::UnpairedExit { id, exit } => write!(f, "{id}: exit {exit} matches no entry"),
            Warning::OrphanExit { id, exit } => write!(f, "{id}: exit {exit} has no demographic record"),
            Warning::OrphanIncident { id, date } => {
                write!(f, "{id}: incident {date} has no demographic record")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unified {
    pub profiles: Vec<ClientProfile>,
    pub warnings: Vec<Warning>,
    /// Demographic rows dropped because the case was not admitted.
    pub removed: usize,
}

/// Latest date appearing anywhere in the three inputs.
pub fn latest_date(
    demo: &[DemographicRecord],
    exits: &[ExitRecord],
    incidents: &[IncidentRecord],
) -> Option<NaiveDate> {
    demo.iter()
        .map(|d| d.entry_date)
        .chain(exits.iter().map(|e| e.exit_date))
        .chain(incidents.iter().map(|i| i.incident_date))
        .max()
}

fn pair_episodes(
    id: &IdCombo,
    entries: &[NaiveDate],
    mut exits: Vec<(NaiveDate, String)>,
    warnings: &mut Vec<Warning>,
) -> Vec<ResidenceEpisode> {
    exits.sort();
    let mut used = vec![false; exits.len()];
    let mut episodes = Vec::with_capacity(entries.len());
    for (i, &entry) in entries.iter().enumerate() {
        let next = entries.get(i + 1).copied();
        let pick = exits
            .iter()
            .enumerate()
            .find(|(j, (d, _))| !used[*j] && *d >= entry && next.map_or(true, |n| *d <= n))
            .map(|(j, _)| j);
        match pick {
            Some(j) => {
                used[j] = true;
                episodes.push(ResidenceEpisode {
                    entry_date: entry,
                    exit_date: Some(exits[j].0),
                    exit_reason: Some(exits[j].1.clone()),
                });
            }
            None => {
                warnings.push(if next.is_some() {
                    Warning::MissingExitBeforeReentry {
                        id: id.clone(),
                        entry,
                    }
                } else {
                    Warning::OpenEpisode {
                        id: id.clone(),
                        entry,
                    }
                });
                episodes.push(ResidenceEpisode {
                    entry_date: entry,
                    exit_date: None,
                    exit_reason: None,
                });
            }
        }
    }
    for (j, (d, _)) in exits.iter().enumerate() {
        if !used[j] {
            warnings.push(Warning::UnpairedExit {
                id: id.clone(),
                exit: *d,
            });
        }
    }
    episodes
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "<missing>".to_string(), |x| x.to_string())
}

/// Link the three record sets into profiles sorted by [`IdCombo`].
///
/// The output does not depend on input row order. Open episodes are counted
/// in the length of stay up to `as_of`.
pub fn unify(
    demo: &[DemographicRecord],
    exits: &[ExitRecord],
    incidents: &[IncidentRecord],
    as_of: NaiveDate,
) -> Result<Unified, CohortError> {
    let mut groups: BTreeMap<IdCombo, Vec<&DemographicRecord>> = BTreeMap::new();
    let mut removed_ids = BTreeSet::new();
    let mut removed = 0;
    for rec in demo {
        let id = rec.key.id_combo();
        if rec.admitted {
            groups.entry(id).or_default().push(rec);
        } else {
            removed += 1;
            removed_ids.insert(id);
        }
    }

    let mut warnings = Vec::new();
    let mut exits_by_id: BTreeMap<IdCombo, Vec<(NaiveDate, String)>> = BTreeMap::new();
    for ex in exits {
        let id = ex.key.id_combo();
        if groups.contains_key(&id) {
            exits_by_id
                .entry(id)
                .or_default()
                .push((ex.exit_date, ex.exit_reason.clone()));
        } else if !removed_ids.contains(&id) {
            warnings.push(Warning::OrphanExit {
                id,
                exit: ex.exit_date,
            });
        }
    }
    let mut incident_counts: BTreeMap<IdCombo, usize> = BTreeMap::new();
    for inc in incidents {
        let id = inc.key.id_combo();
        if groups.contains_key(&id) {
            *incident_counts.entry(id).or_default() += 1;
        } else if !removed_ids.contains(&id) {
            warnings.push(Warning::OrphanIncident {
                id,
                date: inc.incident_date,
            });
        }
    }

    let mut profiles = Vec::with_capacity(groups.len());
    for (id, mut recs) in groups {
        recs.sort_by(|a, b| a.chronological(b));
        let latest = *recs.last().expect("groups are non-empty");

        let code = |rec: &DemographicRecord, field| {
            canonicalize(rec.raw(field), field).map_err(|source| CohortError::Category {
                id: id.clone(),
                source,
            })
        };
        let mut codes = [0u8; 5];
        for (slot, field) in codes.iter_mut().zip(CategoricalField::ALL) {
            *slot = code(latest, field)?;
        }
        for rec in &recs[..recs.len() - 1] {
            for (kept, field) in codes.iter().zip(CategoricalField::ALL) {
                let other = code(rec, field)?;
                if other != *kept {
                    warnings.push(Warning::ConflictingDemographics {
                        id: id.clone(),
                        field: field.name(),
                        kept: field.labels()[*kept as usize].to_string(),
                        discarded: field.labels()[other as usize].to_string(),
                    });
                }
            }
            if rec.income != latest.income {
                warnings.push(Warning::ConflictingDemographics {
                    id: id.clone(),
                    field: "income",
                    kept: fmt_opt(latest.income),
                    discarded: fmt_opt(rec.income),
                });
            }
        }

        let entries: Vec<NaiveDate> = recs.iter().map(|r| r.entry_date).collect();
        let episodes = pair_episodes(
            &id,
            &entries,
            exits_by_id.remove(&id).unwrap_or_default(),
            &mut warnings,
        );
        let total_los_days = total_length_of_stay(&episodes, as_of)?;
        let readmit = derive_label(&episodes)?;
        profiles.push(ClientProfile {
            incident_count: incident_counts.get(&id).copied().unwrap_or(0),
            age: latest.age,
            race: Race::from_code(codes[0]).expect("canonical"),
            family_type: FamilyType::from_code(codes[1]).expect("canonical"),
            reason_homeless: ReasonHomeless::from_code(codes[2]).expect("canonical"),
            employment: Employment::from_code(codes[3]).expect("canonical"),
            citizenship: Citizenship::from_code(codes[4]).expect("canonical"),
            income: latest.income,
            episodes,
            total_los_days,
            readmit,
            id,
        });
    }
    warnings.sort();
    warnings.dedup();
    Ok(Unified {
        profiles,
        warnings,
        removed,
    })
}
