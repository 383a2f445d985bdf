use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::dataset::{ContextTable, QoSDataset, Triplet, Vocabulary};
use crate::error::{Error, Result};

/// Reads a WS-DREAM style matrix (one user per row, whitespace-separated,
/// non-positive entries unobserved) with optional tab-separated entity lists.
///
/// `user_fields` / `service_fields` select list columns by header name;
/// they must be empty when the corresponding list is absent.
pub fn load_wsdream(
    matrix_path: &Path,
    user_list: Option<&Path>,
    service_list: Option<&Path>,
    user_fields: &[String],
    service_fields: &[String],
) -> Result<QoSDataset> {
    let text = fs::read_to_string(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    let (num_users, num_services, triplets) = parse_matrix(&text, matrix_path)?;
    let user_context = context_from_list(user_list, user_fields, num_users, "user")?;
    let service_context = context_from_list(service_list, service_fields, num_services, "service")?;
    let name = matrix_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "wsdream".to_string());
    QoSDataset::new(
        name,
        num_users,
        num_services,
        triplets,
        user_context,
        service_context,
    )
}

pub(crate) fn parse_matrix(text: &str, path: &Path) -> Result<(usize, usize, Vec<Triplet>)> {
    let mut width: Option<usize> = None;
    let mut triplets = Vec::new();
    let mut user = 0;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line_no + 1,
                detail: format!("non-numeric entry `{tok}` in column {}", col + 1),
            })?;
            if v > 0.0 && v.is_finite() {
                triplets.push(Triplet {
                    user,
                    service: col,
                    value: v,
                });
            }
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(n) if n != count => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: line_no + 1,
                    detail: format!("row has {count} values, expected {n}"),
                })
            }
            _ => {}
        }
        user += 1;
    }
    let n = width.ok_or(Error::NoObservations)?;
    Ok((user, n, triplets))
}

fn normalize_header(h: &str) -> String {
    h.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim()
        .to_lowercase()
}

/// Column of `headers` named `field`; a header also matches when its last
/// word equals the field (`Service Provider` matches `Provider`).
fn find_column(headers: &[String], field: &str) -> Option<usize> {
    let want = normalize_header(field);
    headers
        .iter()
        .position(|h| *h == want)
        .or_else(|| {
            headers
                .iter()
                .position(|h| h.rsplit(' ').next() == Some(want.as_str()))
        })
}

fn context_from_list(
    path: Option<&Path>,
    fields: &[String],
    count: usize,
    what: &str,
) -> Result<ContextTable> {
    let Some(path) = path else {
        if !fields.is_empty() {
            return Err(Error::Config(format!(
                "{what} attributes {fields:?} requested without a {what} list"
            )));
        }
        return Ok(ContextTable::empty(count));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim().chars().all(|c| c == '=' || c == '-'));
    let headers: Vec<String> = match lines.next() {
        Some((_, h)) => h.split('\t').map(normalize_header).collect(),
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                detail: "missing header row".into(),
            })
        }
    };
    let columns = fields
        .iter()
        .map(|f| {
            find_column(&headers, f).ok_or_else(|| {
                Error::Config(format!(
                    "unknown {what} attribute `{f}`; available: {}",
                    headers.join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut vocabs = vec![Vocabulary::default(); fields.len()];
    let mut rows = Vec::with_capacity(count);
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        let row = columns
            .iter()
            .zip(vocabs.iter_mut())
            .map(|(&c, vocab)| vocab.intern(cells.get(c).map_or("", |s| s.trim())))
            .collect();
        rows.push(row);
        if rows.len() > count {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line_no + 1,
                detail: format!("more {what} rows than the matrix has ({count})"),
            });
        }
    }
    if rows.len() != count {
        return Err(Error::Config(format!(
            "{what} list {} has {} rows, matrix needs {count}",
            path.display(),
            rows.len()
        )));
    }
    Ok(ContextTable {
        fields: fields.to_vec(),
        rows,
        vocab_sizes: vocabs.iter().map(Vocabulary::size).collect(),
    })
}

/// Counters reported by [`load_triplets_csv`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub rejected: usize,
    pub duplicates: usize,
}

/// Reads `user_id,service_id,value,<attributes...>` rows.
///
/// Entity ids are re-indexed densely by first appearance. Rows whose value is
/// non-numeric or non-positive are rejected and counted. A repeated
/// `(user, service)` pair keeps the last value. An entity's attributes are
/// taken from the first row it appears in.
pub fn load_triplets_csv(
    path: &Path,
    user_fields: &[String],
    service_fields: &[String],
) -> Result<(QoSDataset, LoadReport)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(normalize_header)
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::NoObservations);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` missing from {}", path.display())))
    };
    let (uc, sc, vc) = (col("user_id")?, col("service_id")?, col("value")?);
    let attr_cols = |fields: &[String], what: &str| {
        fields
            .iter()
            .map(|f| {
                headers
                    .iter()
                    .position(|h| *h == normalize_header(f))
                    .ok_or_else(|| Error::Config(format!("unknown {what} attribute `{f}`")))
            })
            .collect::<Result<Vec<_>>>()
    };
    let ucols = attr_cols(user_fields, "user")?;
    let scols = attr_cols(service_fields, "service")?;

    let mut report = LoadReport::default();
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut services: HashMap<String, usize> = HashMap::new();
    let mut uvocab = vec![Vocabulary::default(); ucols.len()];
    let mut svocab = vec![Vocabulary::default(); scols.len()];
    let mut urows: Vec<Vec<usize>> = Vec::new();
    let mut srows: Vec<Vec<usize>> = Vec::new();
    let mut triplets: Vec<Triplet> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        report.rows += 1;
        let value = match record.get(vc).and_then(|v| v.parse::<f64>().ok()) {
            Some(v) if v > 0.0 && v.is_finite() => v,
            _ => {
                report.rejected += 1;
                continue;
            }
        };
        let user = intern_entity(&mut users, &record[uc], || {
            urows.push(
                ucols
                    .iter()
                    .zip(uvocab.iter_mut())
                    .map(|(&c, v)| v.intern(&record[c]))
                    .collect(),
            )
        });
        let service = intern_entity(&mut services, &record[sc], || {
            srows.push(
                scols
                    .iter()
                    .zip(svocab.iter_mut())
                    .map(|(&c, v)| v.intern(&record[c]))
                    .collect(),
            )
        });
        match seen.get(&(user, service)) {
            Some(&i) => {
                triplets[i].value = value;
                report.duplicates += 1;
            }
            None => {
                seen.insert((user, service), triplets.len());
                triplets.push(Triplet {
                    user,
                    service,
                    value,
                });
            }
        }
    }
    if report.rejected > 0 {
        log::warn!("{}: rejected {} rows", path.display(), report.rejected);
    }
    if report.duplicates > 0 {
        log::warn!(
            "{}: {} duplicate (user, service) pairs; last occurrence kept",
            path.display(),
            report.duplicates
        );
    }
    if triplets.is_empty() {
        return Err(Error::NoObservations);
    }
    let context = |fields: &[String], rows: Vec<Vec<usize>>, vocabs: &[Vocabulary]| ContextTable {
        fields: fields.to_vec(),
        rows,
        vocab_sizes: vocabs.iter().map(Vocabulary::size).collect(),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "triplets".to_string());
    let ds = QoSDataset::new(
        name,
        users.len(),
        services.len(),
        triplets,
        context(user_fields, urows, &uvocab),
        context(service_fields, srows, &svocab),
    )?;
    Ok((ds, report))
}

fn intern_entity(map: &mut HashMap<String, usize>, key: &str, on_new: impl FnOnce()) -> usize {
    if let Some(&i) = map.get(key) {
        return i;
    }
    let i = map.len();
    map.insert(key.to_string(), i);
    on_new();
    i
}
