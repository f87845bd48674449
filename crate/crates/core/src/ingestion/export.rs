use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::ZipArchive;

use super::{IngestError, RawRecord, SelfReport, Sex, SleepStageKind, Slot, Stream, UserProfile};
use crate::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Line could not be decoded at all.
    Malformed,
    /// Decoded but failed a range or shape check.
    OutOfRange,
    /// Second report for an already-seen (date, slot).
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineReject {
    pub file: String,
    pub line: usize,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedExport {
    pub records: Vec<RawRecord>,
    pub reports: Vec<SelfReport>,
    pub profile: Option<UserProfile>,
    pub rejects: Vec<LineReject>,
}

impl ParsedExport {
    pub fn reject_count(&self) -> usize {
        self.rejects.len()
    }

    pub fn malformed_count(&self) -> usize {
        self.rejects.iter().filter(|r| r.reason == RejectReason::Malformed).count()
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    stream: String,
    ts: String,
    value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<SleepStageKind>,
}

#[derive(Serialize, Deserialize)]
struct ReportLine {
    date: NaiveDate,
    slot: Slot,
    stress: u8,
    soreness: u8,
    injury_risk: u8,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    age: f64,
    sex: Sex,
    weight: f64,
    height: f64,
    sport: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

fn is_record_file(name: &str) -> bool {
    let base = name.rsplit('/').next().unwrap_or(name);
    base.starts_with("records") && base.ends_with(".jsonl")
}

fn is_reports_file(name: &str) -> bool {
    name.rsplit('/').next() == Some("reports.jsonl")
}

fn is_profile_file(name: &str) -> bool {
    name.rsplit('/').next() == Some("profile.json")
}

fn parse_record_line(line: &str) -> Result<RawRecord, (RejectReason, String)> {
    let raw: RecordLine =
        serde_json::from_str(line).map_err(|e| (RejectReason::Malformed, e.to_string()))?;
    let stream: Stream = raw
        .stream
        .parse()
        .map_err(|_| (RejectReason::Malformed, format!("unknown stream `{}`", raw.stream)))?;
    let timestamp = DateTime::parse_from_rfc3339(&raw.ts)
        .map_err(|e| (RejectReason::Malformed, format!("bad timestamp `{}`: {e}", raw.ts)))?
        .with_timezone(&Utc);
    let record = RawRecord { stream, timestamp, value: raw.value, sleep_stage: raw.stage };
    record.validate().map_err(|e| (RejectReason::OutOfRange, e))?;
    Ok(record)
}

/// Parses an export archive.
///
/// Entries are read in name order so the result depends only on the bytes.
pub fn parse_export(archive: &[u8], user_id: &UserId) -> Result<ParsedExport, IngestError> {
    let mut zip = ZipArchive::new(Cursor::new(archive))
        .map_err(|e| IngestError::NotAnArchive(e.to_string()))?;

    let mut names: Vec<String> = zip.file_names().map(str::to_string).collect();
    names.sort();

    let mut out = ParsedExport::default();
    let mut total_lines = 0usize;
    let mut record_lines = 0usize;
    let mut seen_slots: BTreeMap<(NaiveDate, Slot), usize> = BTreeMap::new();

    for name in &names {
        let kind_record = is_record_file(name);
        let kind_report = is_reports_file(name);
        let kind_profile = is_profile_file(name);
        if !(kind_record || kind_report || kind_profile) {
            continue;
        }
        let mut text = String::new();
        zip.by_name(name)
            .map_err(|e| IngestError::NotAnArchive(e.to_string()))?
            .read_to_string(&mut text)
            .map_err(|e| IngestError::NotAnArchive(format!("{name}: {e}")))?;

        if kind_profile {
            let p: ProfileFile = serde_json::from_str(&text)
                .map_err(|e| IngestError::InvalidProfile(e.to_string()))?;
            let profile = UserProfile {
                user_id: user_id.clone(),
                age: p.age,
                sex: p.sex,
                weight_kg: p.weight,
                height_cm: p.height,
                sport: p.sport,
                display_name: p.name,
            };
            profile.validate()?;
            out.profile = Some(profile);
            continue;
        }

        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            total_lines += 1;
            let reject = |reason, detail| LineReject { file: name.clone(), line: idx + 1, reason, detail };
            if kind_record {
                record_lines += 1;
                match parse_record_line(line) {
                    Ok(r) => out.records.push(r),
                    Err((reason, detail)) => out.rejects.push(reject(reason, detail)),
                }
            } else {
                let parsed: ReportLine = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        out.rejects.push(reject(RejectReason::Malformed, e.to_string()));
                        continue;
                    }
                };
                let report = SelfReport {
                    user_id: user_id.clone(),
                    date: parsed.date,
                    slot: parsed.slot,
                    stress: parsed.stress,
                    soreness: parsed.soreness,
                    injury_risk: parsed.injury_risk,
                };
                if let Err(detail) = report.validate() {
                    out.rejects.push(reject(RejectReason::OutOfRange, detail));
                    continue;
                }
                match seen_slots.get(&(report.date, report.slot)) {
                    Some(_) => out.rejects.push(reject(
                        RejectReason::Duplicate,
                        format!("second report for {} {:?}", report.date, report.slot),
                    )),
                    None => {
                        seen_slots.insert((report.date, report.slot), out.reports.len());
                        out.reports.push(report);
                    }
                }
            }
        }
    }

    if record_lines == 0 {
        return Err(IngestError::EmptyArchive);
    }
    let malformed = out.malformed_count();
    if malformed * 2 > total_lines {
        return Err(IngestError::CorruptExport { malformed, total: total_lines });
    }
    Ok(out)
}

/// Writes records, reports and an optional profile in the export format.
pub fn write_export(
    records: &[RawRecord],
    reports: &[SelfReport],
    profile: Option<&UserProfile>,
) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut zip = zip::ZipWriter::new(&mut buf);
        let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);

        zip.start_file("records.jsonl", opts).expect("in-memory zip");
        for r in records {
            let line = RecordLine {
                stream: r.stream.as_str().to_string(),
                ts: r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                value: r.value,
                stage: r.sleep_stage,
            };
            let json = serde_json::to_string(&line).expect("record serializes");
            writeln!(zip, "{json}").expect("in-memory zip");
        }

        zip.start_file("reports.jsonl", opts).expect("in-memory zip");
        for r in reports {
            let line = ReportLine {
                date: r.date,
                slot: r.slot,
                stress: r.stress,
                soreness: r.soreness,
                injury_risk: r.injury_risk,
            };
            let json = serde_json::to_string(&line).expect("report serializes");
            writeln!(zip, "{json}").expect("in-memory zip");
        }

        if let Some(p) = profile {
            zip.start_file("profile.json", opts).expect("in-memory zip");
            let file = ProfileFile {
                age: p.age,
                sex: p.sex,
                weight: p.weight_kg,
                height: p.height_cm,
                sport: p.sport.clone(),
                name: p.display_name.clone(),
            };
            zip.write_all(serde_json::to_string_pretty(&file).expect("profile").as_bytes())
                .expect("in-memory zip");
        }
        zip.finish().expect("in-memory zip");
    }
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn zip_of(files: &[(&str, &str)]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut zip = zip::ZipWriter::new(&mut buf);
            for (name, body) in files {
                zip.start_file(*name, SimpleFileOptions::default()).unwrap();
                zip.write_all(body.as_bytes()).unwrap();
            }
            zip.finish().unwrap();
        }
        buf.into_inner()
    }

    fn hr_line(min: u32, v: f64) -> String {
        format!(r#"{{"stream":"heart_rate","ts":"2024-03-01T07:{min:02}:00Z","value":{v}}}"#)
    }

    fn user() -> UserId {
        UserId::new("u1")
    }

    #[test]
    fn three_valid_heart_rate_lines() {
        let body = [hr_line(0, 60.0), hr_line(5, 62.0), hr_line(10, 65.0)].join("\n");
        let parsed = parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.reject_count(), 0);
        assert_eq!(
            parsed.records[0].timestamp,
            Utc.with_ymd_and_hms(2024, 3, 1, 7, 0, 0).unwrap()
        );
    }

    #[test]
    fn malformed_line_is_counted_not_fatal() {
        let body = [hr_line(0, 60.0), hr_line(5, 62.0), "hr,notatime,88".to_string()].join("\n");
        let parsed = parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.reject_count(), 1);
        assert_eq!(parsed.rejects[0].reason, RejectReason::Malformed);
        assert_eq!(parsed.rejects[0].line, 3);
    }

    #[test]
    fn heart_rate_out_of_range_is_rejected() {
        let body = [hr_line(0, 60.0), hr_line(5, 300.0)].join("\n");
        let parsed = parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejects[0].reason, RejectReason::OutOfRange);
    }

    #[test]
    fn spo2_bounds() {
        let body = [
            r#"{"stream":"spo2","ts":"2024-03-01T02:00:00Z","value":100}"#,
            r#"{"stream":"spo2","ts":"2024-03-01T02:05:00Z","value":100.5}"#,
            r#"{"stream":"spo2","ts":"2024-03-01T02:10:00Z","value":50}"#,
        ]
        .join("\n");
        let parsed = parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.reject_count(), 2);
    }

    #[test]
    fn not_a_zip() {
        let err = parse_export(b"definitely not a zip", &user()).unwrap_err();
        assert!(matches!(err, IngestError::NotAnArchive(_)));
    }

    #[test]
    fn empty_archive() {
        let err = parse_export(&zip_of(&[]), &user()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyArchive));
        let err = parse_export(&zip_of(&[("records.jsonl", "\n\n")]), &user()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyArchive));
    }

    #[test]
    fn mostly_malformed_is_corrupt() {
        let body = [hr_line(0, 60.0), "x".into(), "y".into()].join("\n");
        let err = parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).unwrap_err();
        assert!(matches!(err, IngestError::CorruptExport { malformed: 2, total: 3 }));
        // Exactly half malformed is still accepted.
        let body = [hr_line(0, 60.0), "x".into()].join("\n");
        assert!(parse_export(&zip_of(&[("records.jsonl", &body)]), &user()).is_ok());
    }

    #[test]
    fn reports_profile_and_duplicates() {
        let reports = [
            r#"{"date":"2024-03-01","slot":"morning","stress":4,"soreness":3,"injury_risk":2}"#,
            r#"{"date":"2024-03-01","slot":"morning","stress":5,"soreness":3,"injury_risk":2}"#,
            r#"{"date":"2024-03-01","slot":"evening","stress":9,"soreness":3,"injury_risk":2}"#,
        ]
        .join("\n");
        let profile = r#"{"age":21,"sex":"male","weight":82,"height":191,"sport":"basketball","name":"Jordan"}"#;
        let archive = zip_of(&[
            ("records.jsonl", &hr_line(0, 60.0)),
            ("reports.jsonl", &reports),
            ("profile.json", profile),
        ]);
        let parsed = parse_export(&archive, &user()).unwrap();
        assert_eq!(parsed.reports.len(), 1);
        assert_eq!(parsed.reports[0].stress, 4);
        let reasons: Vec<_> = parsed.rejects.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec![RejectReason::Duplicate, RejectReason::OutOfRange]);
        let p = parsed.profile.unwrap();
        assert_eq!(p.sport, "basketball");
        assert_eq!(p.display_name.as_deref(), Some("Jordan"));
    }

    #[test]
    fn invalid_profile_age() {
        let profile = r#"{"age":7,"sex":"female","weight":30,"height":120,"sport":"swim"}"#;
        let archive = zip_of(&[("records.jsonl", &hr_line(0, 60.0)), ("profile.json", profile)]);
        assert!(matches!(
            parse_export(&archive, &user()).unwrap_err(),
            IngestError::InvalidProfile(_)
        ));
    }

    #[test]
    fn multiple_record_files_are_merged_in_name_order() {
        let archive = zip_of(&[
            ("records-2.jsonl", &hr_line(10, 70.0)),
            ("records-1.jsonl", &hr_line(0, 60.0)),
        ]);
        let parsed = parse_export(&archive, &user()).unwrap();
        let values: Vec<f64> = parsed.records.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![60.0, 70.0]);
    }
}
