//! Corpus CSV and stats sidecar.
//!
//! Corpus layout: header `sample_id,channel,kind,t0,...,t{L-1}`, one row per
//! channel per sample, `kind` one of `num`, `cat`, `mask`. Missing numerical
//! cells are empty. Mask rows are optional on read; when present they must
//! agree with the empty cells.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Corpus, CorpusStats, TimeSeriesSample};
use crate::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(format!("reading {}", path.display()), source),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["sample_id".to_string(), "channel".into(), "kind".into()];
    header.extend((0..corpus.len).map(|l| format!("t{l}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, s) in corpus.samples.iter().enumerate() {
        let id = i.to_string();
        for (p, row) in s.x.rows().into_iter().enumerate() {
            let mut rec = vec![id.clone(), p.to_string(), "num".into()];
            rec.extend(row.iter().zip(s.m.row(p)).map(|(v, &m)| {
                if m == 1 || v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            }));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        for (p, row) in s.c.rows().into_iter().enumerate() {
            let mut rec = vec![id.clone(), p.to_string(), "cat".into()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        for (p, row) in s.m.rows().into_iter().enumerate() {
            let mut rec = vec![id.clone(), p.to_string(), "mask".into()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Default)]
struct RawSample {
    num: BTreeMap<usize, Vec<f64>>,
    cat: BTreeMap<usize, Vec<usize>>,
    mask: BTreeMap<usize, (usize, Vec<u8>)>,
}

/// Reads a corpus CSV. Category counts are inferred per channel as
/// `max(2, largest value + 1)`; see [`Corpus::with_categories`] to widen
/// them to a known layout.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if text.trim().is_empty() {
        return Ok(Corpus::empty(0, vec![], 0));
    }
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "channel" || &header[2] != "kind" {
        return Err(parse_err(path, 1, "header must start with sample_id,channel,kind"));
    }
    let len = header.len() - 3;
    for (l, name) in header.iter().skip(3).enumerate() {
        if name != format!("t{l}") {
            return Err(parse_err(path, 1, format!("expected column t{l}, found {name:?}")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut samples: BTreeMap<String, RawSample> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        let channel: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad channel index {:?}", &rec[1])))?;
        let entry = samples.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawSample::default()
        });
        let cells = rec.iter().skip(3).map(str::trim);
        let dup = |kind: &str| parse_err(path, line, format!("duplicate {kind} channel {channel}"));
        match &rec[2] {
            "num" => {
                let vals = cells
                    .map(|c| {
                        if c.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            c.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number {c:?}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                if entry.num.insert(channel, vals).is_some() {
                    return Err(dup("num"));
                }
            }
            "cat" => {
                let vals = cells
                    .map(|c| c.parse::<usize>().map_err(|_| parse_err(path, line, format!("bad category {c:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                if entry.cat.insert(channel, vals).is_some() {
                    return Err(dup("cat"));
                }
            }
            "mask" => {
                let vals = cells
                    .map(|c| match c {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        _ => Err(parse_err(path, line, format!("mask cell must be 0 or 1, found {c:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if entry.mask.insert(channel, (line, vals)).is_some() {
                    return Err(dup("mask"));
                }
            }
            other => return Err(parse_err(path, line, format!("unknown kind {other:?}"))),
        }
    }
    if order.is_empty() {
        return Ok(Corpus::empty(0, vec![], len));
    }

    let first = &samples[&order[0]];
    let numeric_channels = first.num.len();
    let cat_channels = first.cat.len();
    let mut categories = vec![2usize; cat_channels];
    let mut out = Vec::with_capacity(order.len());
    for id in &order {
        let raw = &samples[id];
        let contiguous = |keys: Vec<usize>, n: usize| keys == (0..n).collect::<Vec<_>>();
        if !contiguous(raw.num.keys().copied().collect(), numeric_channels)
            || !contiguous(raw.cat.keys().copied().collect(), cat_channels)
        {
            return Err(Error::invalid(format!("sample {id:?} has a different channel layout")));
        }
        let mut x = Array2::zeros((numeric_channels, len));
        for (p, vals) in &raw.num {
            x.row_mut(*p).assign(&ndarray::ArrayView1::from(vals));
        }
        let mut c = Array2::zeros((cat_channels, len));
        for (p, vals) in &raw.cat {
            for (l, &v) in vals.iter().enumerate() {
                c[[*p, l]] = v;
                categories[*p] = categories[*p].max(v + 1);
            }
        }
        let m = x.mapv(|v: f64| u8::from(v.is_nan()));
        for (p, (line, vals)) in &raw.mask {
            if *p >= numeric_channels {
                return Err(parse_err(path, *line, format!("mask channel {p} has no numerical channel")));
            }
            for (l, &v) in vals.iter().enumerate() {
                if v == 0 && m[[*p, l]] == 1 {
                    return Err(parse_err(path, *line, format!("mask is 0 at t{l} but the value is empty")));
                }
                if v == 1 {
                    x[[*p, l]] = f64::NAN;
                }
            }
        }
        let m = x.mapv(|v: f64| u8::from(v.is_nan()));
        out.push(TimeSeriesSample { x, c, m });
    }
    Corpus::new(out, numeric_channels, categories, len)
}

impl Corpus {
    /// Replaces the inferred category counts with a known layout; every
    /// count must be at least the inferred one.
    pub fn with_categories(mut self, categories: &[usize]) -> Result<Self> {
        if categories.len() != self.categories.len() && !self.samples.is_empty() {
            return Err(Error::invalid(format!(
                "corpus has {} categorical channels, layout expects {}",
                self.categories.len(),
                categories.len()
            )));
        }
        for (p, (&have, &want)) in self.categories.iter().zip(categories).enumerate() {
            if want < have {
                return Err(Error::invalid(format!(
                    "channel {p} holds category {} but the layout allows {want}",
                    have - 1
                )));
            }
        }
        self.categories = categories.to_vec();
        Ok(self)
    }
}

/// Key-value sidecar: `num.{p}.min`, `num.{p}.max`, `num.{p}.mean` and
/// `cat.{p}.k` lines.
pub fn write_stats(path: &Path, stats: &CorpusStats, categories: &[usize]) -> Result<()> {
    let mut s = String::new();
    for p in 0..stats.channels() {
        s.push_str(&format!("num.{p}.min={}\n", stats.min[p]));
        s.push_str(&format!("num.{p}.max={}\n", stats.max[p]));
        s.push_str(&format!("num.{p}.mean={}\n", stats.mean[p]));
    }
    for (p, k) in categories.iter().enumerate() {
        s.push_str(&format!("cat.{p}.k={k}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_stats(path: &Path) -> Result<(CorpusStats, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut num: BTreeMap<usize, [Option<f64>; 3]> = BTreeMap::new();
    let mut cat: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let bad = || parse_err(path, line, format!("unrecognized entry {raw:?}"));
        let (key, value) = raw.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let [kind, idx, field] = parts[..] else {
            return Err(bad());
        };
        let p: usize = idx.parse().map_err(|_| bad())?;
        match (kind, field) {
            ("num", f @ ("min" | "max" | "mean")) => {
                let v: f64 = value.trim().parse().map_err(|_| bad())?;
                let slot = match f {
                    "min" => 0,
                    "max" => 1,
                    _ => 2,
                };
                num.entry(p).or_default()[slot] = Some(v);
            }
            ("cat", "k") => {
                cat.insert(p, value.trim().parse().map_err(|_| bad())?);
            }
            _ => return Err(bad()),
        }
    }
    let mut stats = CorpusStats {
        min: vec![],
        max: vec![],
        mean: vec![],
    };
    for (i, (p, vals)) in num.iter().enumerate() {
        let [Some(min), Some(max), Some(mean)] = *vals else {
            return Err(parse_err(path, 0, format!("numerical channel {p} is incomplete")));
        };
        if *p != i {
            return Err(parse_err(path, 0, format!("numerical channel {i} is missing")));
        }
        stats.min.push(min);
        stats.max.push(max);
        stats.mean.push(mean);
    }
    let mut categories = Vec::with_capacity(cat.len());
    for (i, (p, k)) in cat.iter().enumerate() {
        if *p != i {
            return Err(parse_err(path, 0, format!("categorical channel {i} is missing")));
        }
        categories.push(*k);
    }
    Ok((stats, categories))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_sine_markov_corpus;

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let c = make_sine_markov_corpus(3, 2, 2, 3, 6, 0.3, 4).unwrap();
        write_corpus(&path, &c).unwrap();
        let back = read_corpus(&path).unwrap().with_categories(&c.categories).unwrap();
        assert_eq!(back.samples.len(), 3);
        for (a, b) in c.samples.iter().zip(&back.samples) {
            assert_eq!(a.m, b.m);
            assert_eq!(a.c, b.c);
            for (x, y) in a.x.iter().zip(b.x.iter()) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn ragged_row_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "sample_id,channel,kind,t0,t1\n0,0,num,1.0,2.0\n0,0,cat,1\n").unwrap();
        match read_corpus(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        fs::write(&path, "").unwrap();
        assert_eq!(read_corpus(&path).unwrap().n(), 0);
        fs::write(&path, "sample_id,channel,kind,t0\n").unwrap();
        assert_eq!(read_corpus(&path).unwrap().n(), 0);
    }

    #[test]
    fn inconsistent_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "sample_id,channel,kind,t0,t1\n0,0,num,,2.0\n0,0,mask,0,0\n").unwrap();
        assert!(matches!(read_corpus(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let stats = CorpusStats {
            min: vec![0.1, -3.0],
            max: vec![0.7, 1.0 / 3.0],
            mean: vec![0.4, 0.0],
        };
        write_stats(&path, &stats, &[2, 5]).unwrap();
        let (back, cats) = read_stats(&path).unwrap();
        assert_eq!(back, stats);
        assert_eq!(cats, vec![2, 5]);
        fs::write(&path, "num.0.min=1\nnum.0.max=2\n").unwrap();
        assert!(read_stats(&path).is_err());
    }
}
