use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::{FleetConfig, MaintenanceAction, Record, N_SENSORS};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "device_id",
    "time_step",
    "group_id",
    "wear",
    "vibration",
    "temperature",
    "pressure",
    "error_rate",
    "action",
    "cost",
    "failed",
];

/// Lossless float text: 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn write_csv_to<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row: Vec<String> = vec![r.device_id.to_string(), r.time_step.to_string(), r.group_id.to_string()];
        row.extend(r.sensors.iter().map(|&v| fmt_f64(v)));
        row.push(r.action.index().to_string());
        row.push(fmt_f64(r.cost));
        row.push(if r.failed { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[Record], path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv_to(records, f)
}

pub fn read_csv_from<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = [0usize; 11];
    for (k, name) in CSV_HEADER.iter().enumerate() {
        cols[k] = *index
            .get(name)
            .ok_or_else(|| Error::Parse { row: 1, msg: format!("missing column `{}`", name) })?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, header is row 1
        let rec = rec?;
        let cell = |k: usize| rec.get(cols[k]).unwrap_or("");
        let int = |k: usize| -> Result<usize> {
            cell(k).parse::<usize>().map_err(|_| Error::Parse {
                row,
                msg: format!("column `{}`: `{}` is not a non-negative integer", CSV_HEADER[k], cell(k)),
            })
        };
        let num = |k: usize| -> Result<f64> {
            match cell(k).parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { row, msg: format!("column `{}`: `{}` is not a finite number", CSV_HEADER[k], cell(k)) }),
            }
        };
        let mut sensors = [0.0; N_SENSORS];
        for (s, v) in sensors.iter_mut().enumerate() {
            *v = num(3 + s)?;
        }
        let code = int(8)?;
        let action = MaintenanceAction::from_index(code)
            .map_err(|_| Error::Parse { row, msg: format!("column `action`: code {} outside 0..=3", code) })?;
        let cost = num(9)?;
        if cost < 0.0 {
            return Err(Error::Parse { row, msg: format!("column `cost`: negative value {}", cost) });
        }
        let failed = match cell(10) {
            "0" => false,
            "1" => true,
            v => return Err(Error::Parse { row, msg: format!("column `failed`: `{}` is not 0 or 1", v) }),
        };
        out.push(Record { device_id: int(0)?, time_step: int(1)?, group_id: int(2)?, sensors, action, cost, failed });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<Record>> {
    read_csv_from(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Fleet shape implied by a record set; dynamics keep their defaults.
pub fn infer_fleet_config(records: &[Record]) -> Result<FleetConfig> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records".into()));
    }
    let devices: BTreeSet<usize> = records.iter().map(|r| r.device_id).collect();
    let groups: BTreeSet<usize> = records.iter().map(|r| r.group_id).collect();
    let steps = records.iter().map(|r| r.time_step).max().unwrap_or(0) + 1;
    Ok(FleetConfig { devices: devices.len(), groups: groups.len(), steps, ..FleetConfig::default() })
}
