//! Long-format panel files: header `unit,time,value`, one row per observation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use panelur::panel::Panel;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct Record {
    unit: String,
    time: String,
    value: String,
}

/// Orders labels numerically when both parse as numbers, lexically otherwise.
fn label_order(a: &String, b: &String) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

pub fn read_panel<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Data(format!("cannot read header: {e}")))?;
    let names: Vec<&str> = headers.iter().collect();
    if names != ["unit", "time", "value"] {
        return Err(CliError::Data(format!(
            "header must be 'unit,time,value', found '{}'",
            names.join(",")
        )));
    }
    let mut cells: HashMap<(String, String), f64> = HashMap::new();
    let mut units = BTreeSet::new();
    let mut times = BTreeSet::new();
    for result in rdr.deserialize::<Record>() {
        let rec = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("row {row}: {e}"))
        })?;
        // Header is line 1; records are numbered by file line.
        let row = cells.len() + 2;
        let value: f64 = rec
            .value
            .parse()
            .map_err(|_| CliError::Data(format!("row {row}: value '{}' is not a number", rec.value)))?;
        if !value.is_finite() {
            return Err(CliError::Data(format!("row {row}: value '{}' is not finite", rec.value)));
        }
        if rec.unit.is_empty() || rec.time.is_empty() {
            return Err(CliError::Data(format!("row {row}: empty unit or time label")));
        }
        units.insert(rec.unit.clone());
        times.insert(rec.time.clone());
        if cells.insert((rec.unit.clone(), rec.time.clone()), value).is_some() {
            return Err(CliError::Data(format!(
                "row {row}: duplicate observation for unit '{}' at time '{}'",
                rec.unit, rec.time
            )));
        }
    }
    let mut units: Vec<String> = units.into_iter().collect();
    let mut times: Vec<String> = times.into_iter().collect();
    units.sort_by(label_order);
    times.sort_by(label_order);
    let (n, t) = (units.len(), times.len());
    if n == 0 {
        return Err(CliError::Data("panel file has no observations".into()));
    }
    if t < 2 {
        return Err(CliError::Data(format!("panel needs at least 2 periods, found {t}")));
    }
    let mut values = Vec::with_capacity(n * t);
    for u in &units {
        for s in &times {
            match cells.get(&(u.clone(), s.clone())) {
                Some(v) => values.push(*v),
                None => {
                    return Err(CliError::Data(format!(
                        "unbalanced panel: unit '{u}' has no observation at time '{s}' ({} of {} rows present)",
                        cells.len(),
                        n * t
                    )))
                }
            }
        }
    }
    Ok(Panel::from_row_major(n, t, values)?.with_labels(units, times)?)
}

pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| CliError::Data(format!("cannot write panel: {e}"));
    w.write_record(["unit", "time", "value"]).map_err(err)?;
    for (i, u) in panel.unit_ids().iter().enumerate() {
        for (s, t) in panel.time_ids().iter().enumerate() {
            w.write_record([u.as_str(), t.as_str(), &panel.get(i, s).to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("cannot write panel: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(s: &str) -> Result<Panel> {
        read_panel(s.as_bytes())
    }

    #[test]
    fn pivots_and_sorts_labels() {
        let p = load("unit,time,value\nb,10,4\na,2,1\na,10,2\nb,2,3\n").unwrap();
        assert_eq!(p.unit_ids(), ["a", "b"]);
        assert_eq!(p.time_ids(), ["2", "10"]);
        assert_eq!(p.values(), [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn round_trip() {
        let p = load("unit,time,value\n1,1,0.5\n1,2,-1.25\n2,1,3\n2,2,1e-3\n").unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        assert_eq!(load(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let e = load("unit,time,value\n1,1,0.5\n1,2,abc\n").unwrap_err().to_string();
        assert!(e.contains("row 3"), "{e}");
        let e = load("unit,time,value\n1,1,0.5\n1,2\n").unwrap_err().to_string();
        assert!(e.contains("row 3"), "{e}");
        let e = load("unit,time,value\n1,1,0.5\n1,1,0.7\n").unwrap_err().to_string();
        assert!(e.contains("row 3") && e.contains("duplicate"), "{e}");
    }

    #[test]
    fn unbalanced_and_bad_header() {
        let e = load("unit,time,value\n1,1,0\n1,2,0\n2,1,0\n").unwrap_err();
        assert!(e.to_string().contains("unbalanced"));
        assert_eq!(e.exit_code(), 2);
        assert!(load("id,t,y\n1,1,0\n").is_err());
        assert!(load("unit,time,value\n").is_err());
    }
}
