use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::admission::{Patient, Visit};
use super::{Result, TaskError};

/// File and column names of the four source tables. Column matching is
/// case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub admissions_file: String,
    pub diagnoses_file: String,
    pub procedures_file: String,
    pub prescriptions_file: String,
    pub patient_id: String,
    pub admission_id: String,
    pub admit_time: String,
    pub code: String,
    pub seq_num: String,
    pub drug: String,
    pub start_date: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            admissions_file: "ADMISSIONS.csv".into(),
            diagnoses_file: "DIAGNOSES_ICD.csv".into(),
            procedures_file: "PROCEDURES_ICD.csv".into(),
            prescriptions_file: "PRESCRIPTIONS.csv".into(),
            patient_id: "SUBJECT_ID".into(),
            admission_id: "HADM_ID".into(),
            admit_time: "ADMITTIME".into(),
            code: "ICD9_CODE".into(),
            seq_num: "SEQ_NUM".into(),
            drug: "DRUG".into(),
            start_date: "STARTDATE".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentKind {
    Procedures,
    Drugs,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub patients: Vec<Patient>,
    /// Rows dropped because a date or sequence number did not parse.
    pub skipped_rows: usize,
    /// Code rows whose admission is not in the admissions table.
    pub orphan_rows: usize,
    pub dropped_patients: usize,
    pub warnings: Vec<String>,
}

/// `YYYY-MM-DD[( |T)HH:MM:SS]` as a sortable key.
fn parse_timestamp(s: &str) -> Option<(u32, u32, u32, u32, u32, u32)> {
    let s = s.trim();
    let (date, time) = match s.find([' ', 'T']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let mut d = date.split('-');
    let y: u32 = d.next()?.parse().ok()?;
    let m: u32 = d.next()?.parse().ok()?;
    let day: u32 = d.next()?.parse().ok()?;
    if d.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&day) {
        return None;
    }
    let (hh, mm, ss) = match time {
        None => (0, 0, 0),
        Some(t) => {
            let mut p = t.split(':');
            let hh: u32 = p.next()?.parse().ok()?;
            let mm: u32 = p.next()?.parse().ok()?;
            let ss: f64 = p.next().unwrap_or("0").parse().ok()?;
            if hh > 23 || mm > 59 || !(0.0..61.0).contains(&ss) {
                return None;
            }
            (hh, mm, ss as u32)
        }
    };
    Some((y, m, day, hh, mm, ss))
}

struct Table {
    path: PathBuf,
    rows: Vec<csv::StringRecord>,
    columns: HashMap<String, usize>,
}

impl Table {
    fn read(dir: &Path, file: &str) -> Result<Self> {
        let path = dir.join(file);
        let csv_err = |source| TaskError::Csv {
            path: path.clone(),
            source,
        };
        let mut reader = csv::Reader::from_path(&path).map_err(csv_err)?;
        let columns = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        let rows = reader
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        Ok(Self { path, rows, columns })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .get(&name.to_ascii_lowercase())
            .copied()
            .ok_or_else(|| TaskError::MissingColumn {
                file: self.path.display().to_string(),
                column: name.to_string(),
            })
    }
}

/// Reads an admissions table, the diagnosis table and either the procedure
/// or the prescription table from `dir`.
///
/// Visits are ordered by admission time, diagnoses and procedures by their
/// sequence number, drugs by start date keeping only the first drug listed
/// on each day. Admissions without diagnoses and patients with fewer than
/// two remaining visits are dropped. Codes are namespaced `dx:`, `px:`,
/// `rx:`.
pub fn ingest_mimic(dir: &Path, map: &ColumnMap, kind: TreatmentKind) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let empty = std::fs::read_dir(dir)
        .map_err(|source| TaskError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .next()
        .is_none();
    if empty {
        let msg = format!("{} is empty; cohort is empty", dir.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
        return Ok(report);
    }

    let adm = Table::read(dir, &map.admissions_file)?;
    let (a_pat, a_adm, a_time) = (
        adm.column(&map.patient_id)?,
        adm.column(&map.admission_id)?,
        adm.column(&map.admit_time)?,
    );
    // admission id -> (patient, admit time, file order)
    let mut admissions: HashMap<String, (String, (u32, u32, u32, u32, u32, u32), usize)> = HashMap::new();
    let mut patient_order: Vec<String> = Vec::new();
    let mut seen_patients: HashMap<String, ()> = HashMap::new();
    for (i, row) in adm.rows.iter().enumerate() {
        let Some(t) = parse_timestamp(&row[a_time]) else {
            report.skipped_rows += 1;
            continue;
        };
        let pid = row[a_pat].trim().to_string();
        if seen_patients.insert(pid.clone(), ()).is_none() {
            patient_order.push(pid.clone());
        }
        admissions.insert(row[a_adm].trim().to_string(), (pid, t, i));
    }

    let sequenced = |table: &Table, prefix: &str, report: &mut IngestReport| -> Result<HashMap<String, Vec<String>>> {
        let (c_adm, c_code, c_seq) = (
            table.column(&map.admission_id)?,
            table.column(&map.code)?,
            table.column(&map.seq_num)?,
        );
        let mut by_adm: HashMap<String, Vec<(u32, usize, String)>> = HashMap::new();
        for (i, row) in table.rows.iter().enumerate() {
            let id = row[c_adm].trim();
            if !admissions.contains_key(id) {
                report.orphan_rows += 1;
                continue;
            }
            let code = row[c_code].trim();
            let Ok(seq) = row[c_seq].trim().parse::<u32>() else {
                report.skipped_rows += 1;
                continue;
            };
            if code.is_empty() {
                report.skipped_rows += 1;
                continue;
            }
            by_adm
                .entry(id.to_string())
                .or_default()
                .push((seq, i, format!("{prefix}{code}")));
        }
        Ok(by_adm
            .into_iter()
            .map(|(k, mut v)| {
                v.sort();
                (k, v.into_iter().map(|(_, _, c)| c).collect())
            })
            .collect())
    };

    let diagnoses = sequenced(&Table::read(dir, &map.diagnoses_file)?, "dx:", &mut report)?;
    let treatments = match kind {
        TreatmentKind::Procedures => sequenced(&Table::read(dir, &map.procedures_file)?, "px:", &mut report)?,
        TreatmentKind::Drugs => {
            let table = Table::read(dir, &map.prescriptions_file)?;
            let (c_adm, c_drug, c_date) = (
                table.column(&map.admission_id)?,
                table.column(&map.drug)?,
                table.column(&map.start_date)?,
            );
            let mut by_adm: HashMap<String, Vec<((u32, u32, u32), usize, String)>> = HashMap::new();
            for (i, row) in table.rows.iter().enumerate() {
                let id = row[c_adm].trim();
                if !admissions.contains_key(id) {
                    report.orphan_rows += 1;
                    continue;
                }
                let Some((y, m, d, ..)) = parse_timestamp(&row[c_date]) else {
                    report.skipped_rows += 1;
                    continue;
                };
                by_adm
                    .entry(id.to_string())
                    .or_default()
                    .push(((y, m, d), i, format!("rx:{}", row[c_drug].trim())));
            }
            by_adm
                .into_iter()
                .map(|(k, mut v)| {
                    v.sort();
                    v.dedup_by_key(|(day, _, _)| *day);
                    (k, v.into_iter().map(|(_, _, c)| c).collect())
                })
                .collect()
        }
    };

    let mut per_patient: HashMap<&str, Vec<(&(u32, u32, u32, u32, u32, u32), usize, &str)>> = HashMap::new();
    let mut no_diagnoses = 0;
    for (adm_id, (pid, t, order)) in &admissions {
        if diagnoses.get(adm_id).is_none_or(Vec::is_empty) {
            no_diagnoses += 1;
            continue;
        }
        per_patient
            .entry(pid.as_str())
            .or_default()
            .push((t, *order, adm_id.as_str()));
    }
    if no_diagnoses > 0 {
        report
            .warnings
            .push(format!("{no_diagnoses} admissions without diagnoses dropped"));
    }
    for pid in &patient_order {
        let mut adms = per_patient.remove(pid.as_str()).unwrap_or_default();
        if adms.len() < 2 {
            report.dropped_patients += 1;
            continue;
        }
        adms.sort();
        let visits = adms
            .iter()
            .map(|(_, _, id)| Visit {
                diagnoses: diagnoses[*id].clone(),
                treatments: treatments.get(*id).cloned().unwrap_or_default(),
            })
            .collect();
        report.patients.push(Patient {
            id: pid.clone(),
            visits,
        });
    }
    if report.skipped_rows > 0 {
        report.warnings.push(format!(
            "{} rows skipped: unparseable date or sequence number",
            report.skipped_rows
        ));
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(dir: &Path) {
        write(
            dir,
            "ADMISSIONS.csv",
            "SUBJECT_ID,HADM_ID,ADMITTIME\n\
             1,11,2100-05-01 10:00:00\n\
             1,10,2100-01-01 08:00:00\n\
             2,20,2101-01-01 00:00:00\n\
             3,30,not a date\n\
             3,31,2102-02-02\n\
             3,32,2102-03-03\n",
        );
        write(
            dir,
            "DIAGNOSES_ICD.csv",
            "SUBJECT_ID,HADM_ID,SEQ_NUM,ICD9_CODE\n\
             1,10,2,B\n1,10,1,A\n1,11,1,C\n2,20,1,Z\n3,31,1,Q\n3,32,1,R\n9,99,1,X\n3,32,x,S\n",
        );
        write(
            dir,
            "PROCEDURES_ICD.csv",
            "SUBJECT_ID,HADM_ID,SEQ_NUM,ICD9_CODE\n1,10,1,p1\n1,11,2,p3\n1,11,1,p2\n",
        );
        write(
            dir,
            "PRESCRIPTIONS.csv",
            "SUBJECT_ID,HADM_ID,STARTDATE,DRUG\n\
             1,10,2100-01-02 00:00:00,aspirin\n\
             1,10,2100-01-01 00:00:00,heparin\n\
             1,10,2100-01-02 00:00:00,insulin\n\
             1,11,bad,warfarin\n\
             1,11,2100-05-01,saline\n",
        );
    }

    #[test]
    fn procedures_cohort() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let r = ingest_mimic(dir.path(), &ColumnMap::default(), TreatmentKind::Procedures).unwrap();
        assert_eq!(r.patients.len(), 2);
        let p1 = &r.patients[0];
        assert_eq!(p1.id, "1");
        assert_eq!(p1.visits[0].diagnoses, ["dx:A", "dx:B"]);
        assert_eq!(p1.visits[0].treatments, ["px:p1"]);
        assert_eq!(p1.visits[1].treatments, ["px:p2", "px:p3"]);
        // Patient 2 has one admission.
        assert_eq!(r.dropped_patients, 1);
        assert_eq!(r.patients[1].id, "3");
        assert!(r.patients[1].visits[1].treatments.is_empty());
        assert_eq!(r.skipped_rows, 2);
        assert_eq!(r.orphan_rows, 1);
    }

    #[test]
    fn first_drug_per_day() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let r = ingest_mimic(dir.path(), &ColumnMap::default(), TreatmentKind::Drugs).unwrap();
        let p1 = &r.patients[0];
        assert_eq!(p1.visits[0].treatments, ["rx:heparin", "rx:aspirin"]);
        assert_eq!(p1.visits[1].treatments, ["rx:saline"]);
        assert_eq!(r.skipped_rows, 3);
    }

    #[test]
    fn missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(
            dir.path(),
            "PROCEDURES_ICD.csv",
            "SUBJECT_ID,HADM_ID,ICD9_CODE\n1,10,p1\n",
        );
        match ingest_mimic(dir.path(), &ColumnMap::default(), TreatmentKind::Procedures) {
            Err(TaskError::MissingColumn { column, .. }) => assert_eq!(column, "SEQ_NUM"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lowercase_headers_and_custom_map() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let adm = std::fs::read_to_string(dir.path().join("ADMISSIONS.csv")).unwrap();
        write(
            dir.path(),
            "adm.csv",
            &adm.replacen("SUBJECT_ID,HADM_ID,ADMITTIME", "subject_id,hadm_id,admit", 1),
        );
        let map = ColumnMap {
            admissions_file: "adm.csv".into(),
            admit_time: "admit".into(),
            ..ColumnMap::default()
        };
        let r = ingest_mimic(dir.path(), &map, TreatmentKind::Procedures).unwrap();
        assert_eq!(r.patients.len(), 2);
    }

    #[test]
    fn empty_directory_warns() {
        let dir = tempfile::tempdir().unwrap();
        let r = ingest_mimic(dir.path(), &ColumnMap::default(), TreatmentKind::Drugs).unwrap();
        assert!(r.patients.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("2100-01-02 03:04:05"), Some((2100, 1, 2, 3, 4, 5)));
        assert_eq!(parse_timestamp("2100-01-02"), Some((2100, 1, 2, 0, 0, 0)));
        assert_eq!(parse_timestamp("2100-13-02"), None);
        assert_eq!(parse_timestamp(""), None);
    }
}
