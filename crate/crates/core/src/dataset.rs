//! Dataset containers, UCR-style loaders and stratified sampling.
//!
//! Univariate files follow the UCR archive layout: one instance per row, the
//! class label in the first column, values separated by tabs or commas.
//! Multivariate data uses a `key=value` manifest plus flat value files in which
//! every instance occupies `channels` rows of `steps` values followed by one
//! label row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub series: TimeSeries,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
    pub num_classes: usize,
    /// Original label value for each contiguous class index.
    pub label_values: Vec<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        train: Vec<LabeledInstance>,
        test: Vec<LabeledInstance>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            train,
            test,
            num_classes,
            label_values: (0..num_classes).map(|c| c as f64).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self
            .train
            .first()
            .or(self.test.first())
            .map(|i| i.series.shape())
            .ok_or_else(|| Error::Data(format!("dataset {} has no instances", self.name)))?;
        for (split, items) in [("train", &self.train), ("test", &self.test)] {
            for (i, inst) in items.iter().enumerate() {
                if inst.series.shape() != shape {
                    return Err(Error::Data(format!(
                        "{split} instance {i} has shape {:?}, expected {shape:?}",
                        inst.series.shape()
                    )));
                }
                if inst.label >= self.num_classes {
                    return Err(Error::Data(format!(
                        "{split} instance {i} has label {} >= {} classes",
                        inst.label, self.num_classes
                    )));
                }
            }
        }
        if self.label_values.len() != self.num_classes {
            return Err(Error::Data("label mapping does not cover every class".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.shape().0
    }

    pub fn steps(&self) -> usize {
        self.shape().1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.train
            .first()
            .or(self.test.first())
            .map(|i| i.series.shape())
            .unwrap_or((0, 0))
    }

    /// Train instances per class (`m_c`).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for inst in &self.train {
            counts[inst.label] += 1;
        }
        counts
    }

    /// Per-channel z-normalization with statistics of the train split.
    pub fn z_normalized(&self) -> Dataset {
        let (n, t) = self.shape();
        let mut mean = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let count = (self.train.len() * t) as f64;
        for inst in &self.train {
            for c in 0..n {
                for &v in inst.series.channel(c) {
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let std: Vec<f64> = (0..n)
            .map(|c| {
                mean[c] /= count;
                let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let norm = |inst: &LabeledInstance| {
            let mut s = inst.series.clone();
            for c in 0..n {
                for v in s.channel_mut(c) {
                    *v = (*v - mean[c]) / std[c];
                }
            }
            LabeledInstance {
                series: s,
                label: inst.label,
            }
        };
        Dataset {
            name: self.name.clone(),
            train: self.train.iter().map(norm).collect(),
            test: self.test.iter().map(norm).collect(),
            num_classes: self.num_classes,
            label_values: self.label_values.clone(),
        }
    }
}

fn split_row(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_value(tok: &str, path: &Path, row: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        row,
        msg: format!("cannot parse {tok:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "{}: row {row}: non-finite value {tok:?}",
            path.display()
        )));
    }
    Ok(v)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parsed univariate split before label remapping.
struct RawSplit {
    rows: Vec<(f64, Vec<f64>)>,
}

fn parse_univariate(path: &Path) -> Result<RawSplit> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks = split_row(line.trim());
        if toks.len() < 3 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                row,
                msg: format!(
                    "expected a label and at least 2 values, found {} column(s)",
                    toks.len()
                ),
            });
        }
        match width {
            None => width = Some(toks.len()),
            Some(w) if w != toks.len() => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    row,
                    msg: format!("ragged row: {} columns, expected {w}", toks.len()),
                })
            }
            _ => {}
        }
        let label = parse_value(toks[0], path, row)?;
        let values = toks[1..]
            .iter()
            .map(|t| parse_value(t, path, row))
            .collect::<Result<Vec<_>>>()?;
        rows.push((label, values));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: file is empty", path.display())));
    }
    Ok(RawSplit { rows })
}

/// Loads a UCR-format univariate dataset. Labels are remapped onto `0..C` in
/// ascending order of their original values; the mapping is kept in
/// `label_values`.
pub fn load_univariate_tsv(train_path: &Path, test_path: Option<&Path>) -> Result<Dataset> {
    let train = parse_univariate(train_path)?;
    let test = test_path.map(parse_univariate).transpose()?;
    let steps = train.rows[0].1.len();
    if let Some(t) = &test {
        if t.rows[0].1.len() != steps {
            return Err(Error::Data(format!(
                "train has {steps} steps but test has {}",
                t.rows[0].1.len()
            )));
        }
    }

    let mut labels: Vec<f64> = train
        .rows
        .iter()
        .chain(test.iter().flat_map(|t| t.rows.iter()))
        .map(|r| r.0)
        .collect();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    let index_of = |l: f64| labels.iter().position(|&x| x == l).expect("label present");

    let convert = |split: RawSplit| -> Result<Vec<LabeledInstance>> {
        split
            .rows
            .into_iter()
            .map(|(l, v)| {
                Ok(LabeledInstance {
                    series: TimeSeries::univariate(v)?,
                    label: index_of(l),
                })
            })
            .collect()
    };
    let name = train_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .trim_end_matches("_TRAIN")
        .to_string();
    let ds = Dataset {
        name,
        num_classes: labels.len(),
        train: convert(train)?,
        test: test.map(convert).transpose()?.unwrap_or_default(),
        label_values: labels,
    };
    ds.validate()?;
    Ok(ds)
}

fn format_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one split in the tab-separated UCR layout. Floats use the shortest
/// representation that parses back to the same `f64`.
pub fn write_univariate_tsv(
    instances: &[LabeledInstance],
    label_values: &[f64],
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        if inst.series.channels() != 1 {
            return Err(Error::Contract(
                "univariate writer received a multichannel series".into(),
            ));
        }
        out.push_str(&format_label(label_values[inst.label]));
        for v in inst.series.values() {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub channels: usize,
    pub steps: usize,
    pub classes: usize,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut kv = BTreeMap::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                row,
                msg: "expected key=value".into(),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                row: 0,
                msg: format!("manifest is missing `{k}`"),
            })
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                row: 0,
                msg: format!("`{k}` must be a positive integer"),
            })
        };
        let name = get("name")?.clone();
        let dir = path.parent().unwrap_or(Path::new("."));
        let train = dir.join(
            kv.get("train")
                .cloned()
                .unwrap_or_else(|| format!("{name}_TRAIN.txt")),
        );
        let test = match kv.get("test") {
            Some(t) => Some(dir.join(t)),
            None => {
                let p = dir.join(format!("{name}_TEST.txt"));
                p.exists().then_some(p)
            }
        };
        Ok(Self {
            channels: num("channels")?,
            steps: num("steps")?,
            classes: num("classes")?,
            name,
            train,
            test,
        })
    }
}

fn parse_flat(path: &Path, m: &Manifest) -> Result<Vec<LabeledInstance>> {
    let text = read_text(path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let per_instance = m.channels + 1;
    let mut out = Vec::new();
    for (idx, chunk) in lines.chunks(per_instance).enumerate() {
        let mut values = Vec::with_capacity(m.channels * m.steps);
        for (k, &(row, line)) in chunk.iter().enumerate() {
            let toks = split_row(line.trim());
            if k < m.channels {
                if toks.len() != m.steps {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        row,
                        msg: format!(
                            "instance {idx}: expected shape {}x{}, channel row {k} has {} values",
                            m.channels,
                            m.steps,
                            toks.len()
                        ),
                    });
                }
                for t in toks {
                    values.push(parse_value(t, path, row)?);
                }
            } else {
                if toks.len() != 1 {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        row,
                        msg: format!(
                            "instance {idx}: expected shape {}x{} followed by a label row, \
                             found a row of {} values",
                            m.channels,
                            m.steps,
                            toks.len()
                        ),
                    });
                }
                let label: f64 = parse_value(toks[0], path, row)?;
                if label.fract() != 0.0 || label < 0.0 || label as usize >= m.classes {
                    return Err(Error::Data(format!(
                        "{}: instance {idx}: label {label} outside 0..{}",
                        path.display(),
                        m.classes
                    )));
                }
                out.push(LabeledInstance {
                    series: TimeSeries::new(m.channels, m.steps, std::mem::take(&mut values))?,
                    label: label as usize,
                });
            }
        }
        if chunk.len() < per_instance {
            let row = chunk.last().map_or(0, |c| c.0);
            return Err(Error::Format {
                path: path.to_path_buf(),
                row,
                msg: format!(
                    "instance {idx}: truncated, expected {} rows, found {}",
                    per_instance,
                    chunk.len()
                ),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: file is empty", path.display())));
    }
    Ok(out)
}

/// Loads a multivariate dataset described by a manifest file.
pub fn load_multivariate(manifest_path: &Path) -> Result<Dataset> {
    let m = Manifest::parse(manifest_path)?;
    let train = parse_flat(&m.train, &m)?;
    let test = m
        .test
        .as_deref()
        .map(|p| parse_flat(p, &m))
        .transpose()?
        .unwrap_or_default();
    Dataset::new(m.name, train, test, m.classes)
}

/// Writes a manifest and its `_TRAIN`/`_TEST` flat files next to it.
pub fn write_multivariate(ds: &Dataset, manifest_path: &Path) -> Result<()> {
    let (n, t) = ds.shape();
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let train_name = format!("{}_TRAIN.txt", ds.name);
    let test_name = format!("{}_TEST.txt", ds.name);
    let manifest = format!(
        "name={}\nchannels={n}\nsteps={t}\nclasses={}\ntrain={train_name}\ntest={test_name}\n",
        ds.name, ds.num_classes
    );
    write_text(manifest_path, &manifest)?;
    for (file, items) in [(&train_name, &ds.train), (&test_name, &ds.test)] {
        let mut out = String::new();
        for inst in items.iter() {
            for c in 0..n {
                let row: Vec<String> = inst.series.channel(c).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
            let _ = writeln!(out, "{}", inst.label);
        }
        write_text(&dir.join(file), &out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSelection {
    /// Selected indices in ascending order.
    pub indices: Vec<usize>,
    /// Set when more instances were requested than exist; all are returned.
    pub truncated: bool,
}

/// Per-class quotas proportional to class frequencies (largest remainder,
/// ties by ascending class index).
pub fn stratified_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&m| m * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // remainder of m*n/total, compared exactly as m*n mod total
    order.sort_by(|&a, &b| {
        let ra = counts[a] * n % total;
        let rb = counts[b] * n % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(n - assigned) {
        quotas[c] += 1;
    }
    quotas
}

/// Deterministic stratified subsample of `n` indices out of `labels`.
pub fn stratified_sample(labels: &[usize], n: usize, seed: u64) -> SampleSelection {
    if n >= labels.len() {
        return SampleSelection {
            indices: (0..labels.len()).collect(),
            truncated: n > labels.len(),
        };
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&counts, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(n);
    for (mut m, q) in members.into_iter().zip(quotas) {
        m.shuffle(&mut rng);
        indices.extend_from_slice(&m[..q]);
    }
    indices.sort_unstable();
    SampleSelection {
        indices,
        truncated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_parse_remaps_labels() {
        let f = tmp_file("1\t0.0\t1.0\t2.0\n2\t3.0\t4.0\t5.0\n");
        let ds = load_univariate_tsv(f.path(), None).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.steps(), 3);
        assert_eq!(ds.label_values, vec![1.0, 2.0]);
        assert_eq!(ds.train[0].label, 0);
        assert_eq!(ds.train[1].label, 1);
        assert_eq!(ds.train[1].series.values(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn comma_delimited_and_negative_labels() {
        let f = tmp_file("-1,0.5,0.25\n1,1.5,2.5\n-1,3,4\n");
        let ds = load_univariate_tsv(f.path(), None).unwrap();
        assert_eq!(ds.label_values, vec![-1.0, 1.0]);
        assert_eq!(
            ds.train.iter().map(|i| i.label).collect::<Vec<_>>(),
            vec![0, 1, 0]
        );
    }

    #[test]
    fn label_only_row_is_format_error() {
        let f = tmp_file("1\n");
        assert!(matches!(
            load_univariate_tsv(f.path(), None),
            Err(Error::Format { row: 0, .. })
        ));
    }

    #[test]
    fn ragged_rows_report_row_index() {
        let f = tmp_file("1\t0\t1\t2\n2\t0\t1\n");
        match load_univariate_tsv(f.path(), None) {
            Err(Error::Format { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_non_finite_are_data_errors() {
        let f = tmp_file("");
        assert!(matches!(load_univariate_tsv(f.path(), None), Err(Error::Data(_))));
        let f = tmp_file("1\t0\tNaN\t2\n");
        assert!(matches!(load_univariate_tsv(f.path(), None), Err(Error::Data(_))));
        let f = tmp_file("1\t0\tinf\t2\n");
        assert!(matches!(load_univariate_tsv(f.path(), None), Err(Error::Data(_))));
    }

    #[test]
    fn multivariate_single_instance() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("m.manifest"),
            "name=toy\nchannels=2\nsteps=4\nclasses=2\n",
        )
        .unwrap();
        fs::write(dir.path().join("toy_TRAIN.txt"), "0 1 2 3\n4 5 6 7\n1\n").unwrap();
        let ds = load_multivariate(&dir.path().join("m.manifest")).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.shape(), (2, 4));
        assert_eq!(ds.train[0].label, 1);
        assert_eq!(ds.train[0].series.channel(1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn multivariate_extra_channel_row_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("m.manifest"),
            "name=toy\nchannels=2\nsteps=4\nclasses=2\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("toy_TRAIN.txt"),
            "0 1 2 3\n4 5 6 7\n8 9 10 11\n1\n",
        )
        .unwrap();
        let err = load_multivariate(&dir.path().join("m.manifest")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }));
        assert!(msg.contains("instance 0") && msg.contains("2x4"), "{msg}");
    }

    #[test]
    fn stratified_exact_proportion() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let s = stratified_sample(&labels, 10, 7);
        assert!(!s.truncated);
        let ones = s.indices.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((s.indices.len() - ones, ones), (6, 4));
        assert_eq!(s, stratified_sample(&labels, 10, 7));
    }

    #[test]
    fn stratified_full_and_oversized() {
        let labels: Vec<usize> = (0..100)
            .map(|i| if i < 50 { 0 } else if i < 80 { 1 } else { 2 })
            .collect();
        let all = stratified_sample(&labels, 100, 1);
        assert_eq!(all.indices, (0..100).collect::<Vec<_>>());
        assert!(!all.truncated);
        let over = stratified_sample(&labels, 160, 1);
        assert!(over.truncated);
        let per_class = |s: &SampleSelection, c| s.indices.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!(
            (per_class(&over, 0), per_class(&over, 1), per_class(&over, 2)),
            (50, 30, 20)
        );
    }

    #[test]
    fn quotas_break_ties_by_class_index() {
        // three equal classes, 2 slots: remainders tie, lower classes win
        assert_eq!(stratified_quotas(&[5, 5, 5], 2), vec![1, 1, 0]);
        assert_eq!(stratified_quotas(&[1, 1, 1, 1], 3), vec![1, 1, 1, 0]);
    }
}
