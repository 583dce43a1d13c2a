//! Panel loading and the threshold-variable grammar.
//!
//! A threshold variable is one of
//! - `NAME` or `col:NAME`: a column of the input file, removed from the panel;
//! - `lag:NAME:L`: that column lagged by `L`;
//! - `csd:L`: cross-sectional standard deviation of `y_{t-L}`;
//! - `sq:L`: cross-sectional mean of squares of `y_{t-L}`;
//! - `file:PATH` or `file:PATH#COLUMN`: a separate file.
//!
//! Candidate lists separate items by commas, and `lag`, `csd` and `sq` accept
//! inclusive ranges `A..B` for the lag.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use threshold_factor::panel::{self, LoadOptions};
use threshold_factor::{PanelSeries, ThresholdSeries};

use crate::args::InputArgs;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Column(String),
    Lag(String, usize),
    Csd(usize),
    Sq(usize),
    File { path: PathBuf, column: Option<String> },
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Column(name) => name.clone(),
            Source::Lag(name, l) => format!("lag:{name}:{l}"),
            Source::Csd(l) => format!("csd:{l}"),
            Source::Sq(l) => format!("sq:{l}"),
            Source::File { path, column } => match column {
                Some(c) => format!("file:{}#{c}", path.display()),
                None => format!("file:{}", path.display()),
            },
        }
    }

    fn column(&self) -> Option<&str> {
        match self {
            Source::Column(name) | Source::Lag(name, _) => Some(name),
            _ => None,
        }
    }
}

fn bad(item: &str, why: &str) -> CliError {
    CliError::Input(format!("threshold variable {item:?}: {why}"))
}

fn parse_lags(item: &str, text: &str, allow_range: bool) -> CliResult<Vec<usize>> {
    let num = |s: &str| -> CliResult<usize> {
        match s.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(bad(item, "lags are integers >= 1")),
        }
    };
    match text.split_once("..") {
        None => Ok(vec![num(text)?]),
        Some(_) if !allow_range => Err(bad(item, "a range is not allowed here")),
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(bad(item, "empty lag range"));
            }
            Ok((a..=b).collect())
        }
    }
}

fn parse_item(item: &str, allow_range: bool) -> CliResult<Vec<Source>> {
    let item = item.trim();
    if item.is_empty() {
        return Err(bad(item, "empty item"));
    }
    let Some((kind, rest)) = item.split_once(':') else {
        return Ok(vec![Source::Column(item.to_string())]);
    };
    match kind {
        "col" if !rest.is_empty() => Ok(vec![Source::Column(rest.to_string())]),
        "csd" => Ok(parse_lags(item, rest, allow_range)?
            .into_iter()
            .map(Source::Csd)
            .collect()),
        "sq" => Ok(parse_lags(item, rest, allow_range)?
            .into_iter()
            .map(Source::Sq)
            .collect()),
        "lag" => {
            let (name, lags) = rest
                .rsplit_once(':')
                .filter(|(n, _)| !n.is_empty())
                .ok_or_else(|| bad(item, "expected lag:NAME:L"))?;
            Ok(parse_lags(item, lags, allow_range)?
                .into_iter()
                .map(|l| Source::Lag(name.to_string(), l))
                .collect())
        }
        "file" if !rest.is_empty() => {
            let (path, column) = match rest.rsplit_once('#') {
                Some((p, c)) => (p, Some(c.to_string())),
                None => (rest, None),
            };
            Ok(vec![Source::File {
                path: PathBuf::from(path),
                column,
            }])
        }
        _ => Err(bad(item, "unknown form")),
    }
}

/// A single threshold variable.
pub fn parse_z(spec: &str) -> CliResult<Source> {
    Ok(parse_item(spec, false)?.remove(0))
}

/// A comma-separated candidate list.
pub fn parse_candidates(spec: &str) -> CliResult<Vec<Source>> {
    let mut out = Vec::new();
    for item in spec.split(',') {
        out.extend(parse_item(item, true)?);
    }
    Ok(out)
}

/// Reads the panel, removes the columns named by `sources` and builds each
/// threshold variable.
pub fn load(input: &InputArgs, sources: &[Source]) -> CliResult<(PanelSeries, Vec<ThresholdSeries>)> {
    let delimiter = delimiter_byte(input.delimiter)?;
    let opts = LoadOptions {
        delimiter,
        has_header: input.header,
        z_column: None,
    };
    let (full, _) = panel::load_panel(&input.panel, &opts)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.panel.display())))?;
    let labels = full.series_labels();
    let mut taken = vec![false; labels.len()];
    for s in sources {
        if let Some(name) = s.column() {
            let idx = labels.iter().position(|l| l == name).ok_or_else(|| {
                CliError::Input(format!("column {name:?} not found in {}", input.panel.display()))
            })?;
            taken[idx] = true;
        }
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&c| !taken[c]).collect();
    if keep.is_empty() {
        return Err(CliError::Input(
            "no series columns left after removing threshold columns".into(),
        ));
    }
    let values = DMatrix::from_fn(keep.len(), full.n(), |q, t| full.values()[(keep[q], t)]);
    let y = PanelSeries::new(values, keep.iter().map(|&c| labels[c].clone()).collect())?;
    let column = |name: &str| -> CliResult<ThresholdSeries> {
        let idx = labels.iter().position(|l| l == name).expect("checked above");
        Ok(ThresholdSeries::new(
            full.values().row(idx).iter().copied().collect(),
            name,
        )?)
    };
    let mut series = Vec::with_capacity(sources.len());
    for s in sources {
        let z = match s {
            Source::Column(name) => column(name)?,
            Source::Lag(name, l) => column(name)?.lagged(*l)?,
            Source::Csd(l) => panel::cross_sectional_sd(&y, *l)?,
            Source::Sq(l) => panel::squared_cross_sectional_mean(&y, *l)?,
            Source::File { path, column } => load_file(path, delimiter, input.header, column.as_deref())?,
        };
        if z.len() != y.n() {
            return Err(CliError::Input(format!(
                "threshold variable {} has {} values, panel has {}",
                s.label(),
                z.len(),
                y.n()
            )));
        }
        series.push(z.with_label(s.label()));
    }
    Ok((y, series))
}

fn load_file(path: &Path, delimiter: u8, header: bool, column: Option<&str>) -> CliResult<ThresholdSeries> {
    panel::load_threshold_series(path, delimiter, header, column)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn delimiter_byte(c: char) -> CliResult<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::Input(format!("delimiter {c:?} must be a single ASCII character")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_grammar() {
        let got = parse_candidates("csd:1..3,sq:2,lag:x:1..2,col:a,b,file:z.csv#v").unwrap();
        assert_eq!(
            got,
            vec![
                Source::Csd(1),
                Source::Csd(2),
                Source::Csd(3),
                Source::Sq(2),
                Source::Lag("x".into(), 1),
                Source::Lag("x".into(), 2),
                Source::Column("a".into()),
                Source::Column("b".into()),
                Source::File {
                    path: "z.csv".into(),
                    column: Some("v".into())
                },
            ]
        );
        assert_eq!(parse_candidates("csd:1..8,sq:1..8").unwrap().len(), 16);
    }

    #[test]
    fn grammar_errors() {
        for bad in ["csd:0", "csd:3..1", "sq:x", "lag:x", "nope:1", "", "csd:1,,sq:1"] {
            assert!(parse_candidates(bad).is_err(), "{bad}");
        }
        assert!(parse_z("csd:1..2").is_err());
        assert_eq!(parse_z("z").unwrap(), Source::Column("z".into()));
    }

    #[test]
    fn labels_round_trip_through_the_parser() {
        for spec in ["csd:2", "sq:1", "lag:x:3", "file:a/b.csv#c", "file:a.csv"] {
            assert_eq!(parse_z(spec).unwrap().label(), spec);
        }
    }
}
