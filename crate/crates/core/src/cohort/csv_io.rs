//! CSV readers for the three raw files and the `profiles.csv` writer/reader.

use std::io::{Read, Write};

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};
use thiserror::Error;

use super::{
    ClientKey, ClientProfile, DemographicRecord, ExitRecord, IdCombo, IncidentRecord,
    ResidenceEpisode,
};
use crate::features::{Category, Citizenship, Employment, FamilyType, Race, ReasonHomeless};

pub const DEMOGRAPHICS_HEADER: [&str; 12] = [
    "cares_id",
    "family_id",
    "case_id",
    "age",
    "race",
    "family_type",
    "reason_homeless",
    "employment",
    "citizenship",
    "income",
    "entry_date",
    "admitted",
];
pub const EXITS_HEADER: [&str; 5] = ["cares_id", "family_id", "case_id", "exit_date", "exit_reason"];
pub const INCIDENTS_HEADER: [&str; 5] = [
    "cares_id",
    "family_id",
    "case_id",
    "incident_date",
    "incident_type",
];
pub const PROFILE_HEADER: [&str; 14] = [
    "id",
    "age",
    "race",
    "family_type",
    "reason_homeless",
    "employment",
    "citizenship",
    "income",
    "n_episodes",
    "total_los_days",
    "incident_count",
    "readmit",
    "episodes",
    "exit_reasons",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}` in header")]
    MissingColumn { file: String, column: String },
    #[error("{file}, line {line}, column `{column}`: {message}")]
    Field {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
}

impl IngestError {
    fn csv(file: &str, source: csv::Error) -> Self {
        IngestError::Csv {
            file: file.to_string(),
            source,
        }
    }
}

struct Table<'a> {
    file: &'a str,
    columns: Vec<usize>,
    names: &'a [&'a str],
}

impl<'a> Table<'a> {
    fn new(file: &'a str, header: &StringRecord, names: &'a [&'a str]) -> Result<Self, IngestError> {
        let columns = names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.trim() == *name)
                    .ok_or_else(|| IngestError::MissingColumn {
                        file: file.to_string(),
                        column: name.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Table { file, columns, names })
    }

    fn get<'r>(&self, rec: &'r StringRecord, i: usize) -> &'r str {
        rec.get(self.columns[i]).unwrap_or("")
    }

    fn err(&self, rec: &StringRecord, i: usize, message: impl Into<String>) -> IngestError {
        IngestError::Field {
            file: self.file.to_string(),
            line: rec.position().map_or(0, |p| p.line()),
            column: self.names[i].to_string(),
            message: message.into(),
        }
    }

    fn key(&self, rec: &StringRecord) -> Result<ClientKey, IngestError> {
        ClientKey::new(self.get(rec, 0), self.get(rec, 1), self.get(rec, 2)).map_err(|e| {
            let i = match e {
                super::CohortError::EmptyKeyPart("family_id") => 1,
                super::CohortError::EmptyKeyPart("case_id") => 2,
                _ => 0,
            };
            self.err(rec, i, e.to_string())
        })
    }

    fn date(&self, rec: &StringRecord, i: usize) -> Result<NaiveDate, IngestError> {
        let raw = self.get(rec, i).trim();
        NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|e| self.err(rec, i, format!("invalid date {raw:?}: {e}")))
    }

    fn opt_num(&self, rec: &StringRecord, i: usize) -> Result<Option<f64>, IngestError> {
        let raw = self.get(rec, i).trim();
        if raw.is_empty() {
            return Ok(None);
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.err(rec, i, format!("invalid number {raw:?}"))),
        }
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).from_reader(input)
}

fn read_table<R: Read, T>(
    input: R,
    file: &str,
    names: &[&str],
    mut parse: impl FnMut(&Table<'_>, &StringRecord) -> Result<T, IngestError>,
) -> Result<Vec<T>, IngestError> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| IngestError::csv(file, e))?.clone();
    let table = Table::new(file, &header, names)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::csv(file, e))?;
        out.push(parse(&table, &rec)?);
    }
    Ok(out)
}

pub fn read_demographics<R: Read>(input: R, file: &str) -> Result<Vec<DemographicRecord>, IngestError> {
    read_table(input, file, &DEMOGRAPHICS_HEADER, |t, rec| {
        let age = t.opt_num(rec, 3)?;
        if let Some(a) = age {
            if !(0.0..=120.0).contains(&a) {
                return Err(t.err(rec, 3, format!("age {a} outside [0, 120]")));
            }
        }
        let admitted = match t.get(rec, 11).trim().to_ascii_lowercase().as_str() {
            "true" => true,
            "false" => false,
            other => return Err(t.err(rec, 11, format!("expected true or false, got {other:?}"))),
        };
        Ok(DemographicRecord {
            key: t.key(rec)?,
            age,
            race: t.get(rec, 4).to_string(),
            family_type: t.get(rec, 5).to_string(),
            reason_homeless: t.get(rec, 6).to_string(),
            employment: t.get(rec, 7).to_string(),
            citizenship: t.get(rec, 8).to_string(),
            income: t.opt_num(rec, 9)?,
            entry_date: t.date(rec, 10)?,
            admitted,
        })
    })
}

pub fn read_exits<R: Read>(input: R, file: &str) -> Result<Vec<ExitRecord>, IngestError> {
    read_table(input, file, &EXITS_HEADER, |t, rec| {
        Ok(ExitRecord {
            key: t.key(rec)?,
            exit_date: t.date(rec, 3)?,
            exit_reason: t.get(rec, 4).to_string(),
        })
    })
}

pub fn read_incidents<R: Read>(input: R, file: &str) -> Result<Vec<IncidentRecord>, IngestError> {
    read_table(input, file, &INCIDENTS_HEADER, |t, rec| {
        Ok(IncidentRecord {
            key: t.key(rec)?,
            incident_date: t.date(rec, 3)?,
            incident_type: t.get(rec, 4).to_string(),
        })
    })
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(out)
}

pub(crate) fn fmt_opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn escape_reason(reason: &str) -> String {
    reason.replace('\\', "\\\\").replace(';', "\\;")
}

fn split_escaped(s: &str) -> Vec<String> {
    let mut parts = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(n) = chars.next() {
                    parts.last_mut().expect("non-empty").push(n);
                }
            }
            ';' => parts.push(String::new()),
            c => parts.last_mut().expect("non-empty").push(c),
        }
    }
    parts
}

/// `profiles.csv`: one row per individual. Category columns hold codes;
/// `episodes` is `entry..exit` per stay joined by `;` (exit blank when open);
/// `exit_reasons` is the matching `;`-joined list with `\` and `;` escaped.
pub fn write_profiles<W: Write>(out: W, profiles: &[ClientProfile]) -> Result<(), csv::Error> {
    let mut w = csv_writer(out);
    w.write_record(PROFILE_HEADER)?;
    for p in profiles {
        let episodes = p
            .episodes
            .iter()
            .map(|e| {
                format!(
                    "{}..{}",
                    e.entry_date,
                    e.exit_date.map(|d| d.to_string()).unwrap_or_default()
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        let reasons = p
            .episodes
            .iter()
            .map(|e| e.exit_reason.as_deref().map(escape_reason).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            p.id.as_str().to_string(),
            fmt_opt_num(p.age),
            p.race.code().to_string(),
            p.family_type.code().to_string(),
            p.reason_homeless.code().to_string(),
            p.employment.code().to_string(),
            p.citizenship.code().to_string(),
            fmt_opt_num(p.income),
            p.episodes.len().to_string(),
            p.total_los_days.to_string(),
            p.incident_count.to_string(),
            p.readmit.to_string(),
            episodes,
            reasons,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles<R: Read>(input: R, file: &str) -> Result<Vec<ClientProfile>, IngestError> {
    fn code<C: Category>(t: &Table<'_>, rec: &StringRecord, i: usize) -> Result<C, IngestError> {
        let raw = t.get(rec, i).trim();
        raw.parse::<u8>()
            .ok()
            .and_then(C::from_code)
            .ok_or_else(|| t.err(rec, i, format!("invalid {} code {raw:?}", C::FIELD)))
    }
    fn count(t: &Table<'_>, rec: &StringRecord, i: usize) -> Result<u64, IngestError> {
        let raw = t.get(rec, i).trim();
        raw.parse::<u64>()
            .map_err(|_| t.err(rec, i, format!("invalid count {raw:?}")))
    }

    read_table(input, file, &PROFILE_HEADER, |t, rec| {
        let id = t.get(rec, 0);
        if id.trim().is_empty() {
            return Err(t.err(rec, 0, "empty id"));
        }
        let reasons = split_escaped(t.get(rec, 13));
        let spans: Vec<&str> = t.get(rec, 12).split(';').collect();
        if spans.len() != reasons.len() {
            return Err(t.err(rec, 13, "episode and exit-reason counts differ"));
        }
        let mut episodes = Vec::with_capacity(spans.len());
        for (span, reason) in spans.iter().zip(reasons) {
            let (entry, exit) = span
                .split_once("..")
                .ok_or_else(|| t.err(rec, 12, format!("malformed episode {span:?}")))?;
            let parse = |s: &str| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|e| t.err(rec, 12, format!("invalid date {s:?}: {e}")))
            };
            let exit_date = if exit.is_empty() { None } else { Some(parse(exit)?) };
            episodes.push(ResidenceEpisode {
                entry_date: parse(entry)?,
                exit_date,
                exit_reason: exit_date.map(|_| reason),
            });
        }
        if count(t, rec, 8)? as usize != episodes.len() {
            return Err(t.err(rec, 8, "n_episodes disagrees with episodes"));
        }
        let readmit = count(t, rec, 11)?;
        if readmit > 1 {
            return Err(t.err(rec, 11, "readmit must be 0 or 1"));
        }
        Ok(ClientProfile {
            id: IdCombo::from_joined(id),
            age: t.opt_num(rec, 1)?,
            race: code::<Race>(t, rec, 2)?,
            family_type: code::<FamilyType>(t, rec, 3)?,
            reason_homeless: code::<ReasonHomeless>(t, rec, 4)?,
            employment: code::<Employment>(t, rec, 5)?,
            citizenship: code::<Citizenship>(t, rec, 6)?,
            income: t.opt_num(rec, 7)?,
            episodes,
            total_los_days: count(t, rec, 9)?,
            incident_count: count(t, rec, 10)? as usize,
            readmit: readmit as u8,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaped_reasons_split_back() {
        let raw = ["a;b", "c\\d", "", "plain"];
        let joined = raw.iter().map(|r| escape_reason(r)).collect::<Vec<_>>().join(";");
        assert_eq!(split_escaped(&joined), raw);
    }

    #[test]
    fn malformed_rows_name_line_and_column() {
        let csv = "cares_id,family_id,case_id,exit_date,exit_reason\nC1,F1,K1,2015-01-01,x\nC2,F2,K2,2015-13-01,y\n";
        let err = read_exits(csv.as_bytes(), "exits.csv").unwrap_err();
        match err {
            IngestError::Field { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "exit_date");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = read_exits("cares_id,family_id,exit_date\n".as_bytes(), "exits.csv").unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { ref column, .. } if column == "case_id"));
    }

    #[test]
    fn demographics_validation() {
        let head = DEMOGRAPHICS_HEADER.join(",");
        let ok = format!("{head}\nC1,F1,K1,,Black,Single,Eviction,Employed,Citizen,,2015-01-01,TRUE\n");
        let recs = read_demographics(ok.as_bytes(), "d").unwrap();
        assert_eq!(recs[0].age, None);
        assert!(recs[0].admitted);
        let bad_age = format!("{head}\nC1,F1,K1,130,Black,Single,Eviction,Employed,Citizen,,2015-01-01,true\n");
        assert!(read_demographics(bad_age.as_bytes(), "d").is_err());
        let bad_flag = format!("{head}\nC1,F1,K1,30,Black,Single,Eviction,Employed,Citizen,,2015-01-01,yes\n");
        assert!(read_demographics(bad_flag.as_bytes(), "d").is_err());
        let blank_id = format!("{head}\nC1,,K1,30,Black,Single,Eviction,Employed,Citizen,,2015-01-01,true\n");
        match read_demographics(blank_id.as_bytes(), "d").unwrap_err() {
            IngestError::Field { column, .. } => assert_eq!(column, "family_id"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
