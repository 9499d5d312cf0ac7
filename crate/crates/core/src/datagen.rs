//! Synthetic 2-D disk/annulus datasets, CSV ingestion, stratified splits
//! and feature standardization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{rng_for, streams};
use crate::types::LabeledDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Disk vs. surrounding annulus with a clear gap: radially separable.
    Type1,
    /// Type 1 with labels scrambled in a band straddling the gap.
    Type2,
}

/// How a selected sample in the type-2 band is relabelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandRelabel {
    /// Always move to the other class.
    #[default]
    FlipToOther,
    /// Draw a fair coin, which may keep the original class.
    FairCoin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    #[serde(default = "defaults::n_per_class")]
    pub n_per_class: usize,
    #[serde(default)]
    pub seed: u64,
    /// Class 1 fills the disk of this radius.
    #[serde(default = "defaults::disk_radius")]
    pub disk_radius: f64,
    /// Class 0 fills the annulus between these radii.
    #[serde(default = "defaults::annulus_inner")]
    pub annulus_inner: f64,
    #[serde(default = "defaults::annulus_outer")]
    pub annulus_outer: f64,
    #[serde(default = "defaults::band_inner")]
    pub band_inner: f64,
    #[serde(default = "defaults::band_outer")]
    pub band_outer: f64,
    /// Probability that a type-2 band sample is relabelled.
    #[serde(default = "defaults::band_fraction")]
    pub band_fraction: f64,
    #[serde(default)]
    pub band_relabel: BandRelabel,
}

mod defaults {
    pub fn n_per_class() -> usize {
        500
    }
    pub fn disk_radius() -> f64 {
        0.25
    }
    pub fn annulus_inner() -> f64 {
        0.28
    }
    pub fn annulus_outer() -> f64 {
        0.45
    }
    pub fn band_inner() -> f64 {
        0.22
    }
    pub fn band_outer() -> f64 {
        0.31
    }
    pub fn band_fraction() -> f64 {
        0.5
    }
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, seed: u64) -> Self {
        Self {
            kind,
            n_per_class: defaults::n_per_class(),
            seed,
            disk_radius: defaults::disk_radius(),
            annulus_inner: defaults::annulus_inner(),
            annulus_outer: defaults::annulus_outer(),
            band_inner: defaults::band_inner(),
            band_outer: defaults::band_outer(),
            band_fraction: defaults::band_fraction(),
            band_relabel: BandRelabel::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.disk_radius
            && self.disk_radius < self.annulus_inner
            && self.annulus_inner < self.annulus_outer;
        if !ordered {
            return Err(Error::InvalidConfig(format!(
                "radii must satisfy 0 < disk ({}) < annulus inner ({}) < annulus outer ({})",
                self.disk_radius, self.annulus_inner, self.annulus_outer
            )));
        }
        if self.kind == SyntheticKind::Type2 && !(0.0 <= self.band_inner && self.band_inner < self.band_outer) {
            return Err(Error::InvalidConfig(format!(
                "band radii must satisfy 0 <= inner ({}) < outer ({})",
                self.band_inner, self.band_outer
            )));
        }
        if !(0.0..=1.0).contains(&self.band_fraction) {
            return Err(Error::InvalidConfig("band_fraction must be in [0, 1]".into()));
        }
        if self.n_per_class == 0 {
            return Err(Error::InvalidConfig("n_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform point in the annulus `inner <= |x| <= outer` by inverting the
/// radial CDF.
fn sample_annulus<R: Rng>(rng: &mut R, inner: f64, outer: f64) -> [f64; 2] {
    let u: f64 = rng.gen();
    let r = (u * (outer * outer - inner * inner) + inner * inner).sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    [r * theta.cos(), r * theta.sin()]
}

/// Generates the disk (label 1) / annulus (label 0) dataset. Rows are
/// ordered class 1 first, then class 0.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, streams::DATA, 0);
    let n = spec.n_per_class;
    let mut features = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for _ in 0..n {
        features.extend(sample_annulus(&mut rng, 0.0, spec.disk_radius));
        labels.push(1);
    }
    for _ in 0..n {
        features.extend(sample_annulus(&mut rng, spec.annulus_inner, spec.annulus_outer));
        labels.push(0);
    }
    if spec.kind == SyntheticKind::Type2 {
        let mut band_rng = rng_for(spec.seed, streams::DATA, 1);
        for (i, y) in labels.iter_mut().enumerate() {
            let r = features[2 * i].hypot(features[2 * i + 1]);
            if r < spec.band_inner || r > spec.band_outer {
                continue;
            }
            if band_rng.gen::<f64>() < spec.band_fraction {
                *y = match spec.band_relabel {
                    BandRelabel::FlipToOther => 1 - *y,
                    BandRelabel::FairCoin => usize::from(band_rng.gen::<bool>()),
                };
            }
        }
    }
    LabeledDataset::new(features, 2, labels, 2)
}

/// A dataset read from CSV with the original label spelling of each class.
#[derive(Clone, Debug)]
pub struct CsvDataset {
    pub dataset: LabeledDataset,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

/// Column holding the labels.
#[derive(Clone, Debug)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    /// The last column that is not `clean_label`.
    Last,
}

/// Name of the optional column carrying pre-noise labels.
pub const CLEAN_LABEL_COLUMN: &str = "clean_label";

/// Reads a headered CSV with numeric feature columns and one label column.
///
/// Labels are re-indexed densely to `0..K`, ordered numerically when every
/// label parses as a number and lexically otherwise. A column named
/// `clean_label` is read as the clean labels rather than as a feature.
pub fn load_csv(path: &Path, label_column: &LabelColumn, delimiter: u8) -> Result<CsvDataset> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = match label_column {
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("no column named {name:?}")))?,
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => return Err(parse_err(format!("label column {i} out of range"))),
        // a trailing clean-label column is never the training label
        LabelColumn::Last => headers
            .iter()
            .rposition(|h| h != CLEAN_LABEL_COLUMN)
            .ok_or_else(|| parse_err("no label column".into()))?,
    };
    let clean_idx = headers
        .iter()
        .position(|h| h == CLEAN_LABEL_COLUMN)
        .filter(|&i| i != label_idx);
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx && Some(*i) != clean_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(parse_err("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_clean = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "row {} has {} fields, expected {}",
                row_no + 2,
                record.len(),
                headers.len()
            )));
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
            } else if Some(i) == clean_idx {
                raw_clean.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(format!(
                        "row {}, column {:?}: {cell:?} is not a number",
                        row_no + 2,
                        headers[i]
                    ))
                })?;
                features.push(v);
            }
        }
    }

    let mut names: Vec<String> = raw_labels.iter().chain(&raw_clean).cloned().collect();
    names.sort();
    names.dedup();
    if names.iter().all(|s| s.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    if names.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "{} has fewer than two classes",
            path.display()
        )));
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|s| index[s.as_str()]).collect();
    let mut dataset = LabeledDataset::new(features, feature_names.len(), labels, names.len())?;
    if clean_idx.is_some() {
        let clean = raw_clean.iter().map(|s| index[s.as_str()]).collect();
        dataset = dataset.with_clean_labels(clean)?;
    }
    Ok(CsvDataset {
        dataset,
        class_names: names,
        feature_names,
    })
}

/// Writes `f0..f{d-1},label` with the (observed) integer labels, plus a
/// `clean_label` column when the dataset carries clean labels.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if ds.clean_labels().is_some() {
        header.push(CLEAN_LABEL_COLUMN.into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.labels()[i].to_string());
        if let Some(clean) = ds.clean_labels() {
            rec.push(clean[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Stratified split: each class is permuted with `seed` and cut at the
/// rounded cumulative fractions, so every class is within one sample of its
/// global share in every split. Rows inside each split are then shuffled.
pub fn split(ds: &LabeledDataset, fractions: &[f64], seed: u64) -> Result<Vec<LabeledDataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive: {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let mut rng = rng_for(seed, streams::SPLIT, 0);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for class in 0..ds.num_classes() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let mut cum = 0.0;
        let mut start = 0;
        for (s, f) in fractions.iter().enumerate() {
            cum += f;
            let end = if s + 1 == fractions.len() {
                idx.len()
            } else {
                (n * cum).round() as usize
            };
            parts[s].extend_from_slice(&idx[start..end.max(start)]);
            start = end.max(start);
        }
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(s, mut p)| {
            if p.is_empty() {
                return Err(Error::InvalidDataset(format!("split {s} would be empty")));
            }
            p.shuffle(&mut rng);
            Ok(ds.subset(&p))
        })
        .collect()
}

/// Per-feature mean/std fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(ds: &LabeledDataset) -> Self {
        let d = ds.dim();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> LabeledDataset {
        let mut out = ds.clone();
        let d = self.mean.len();
        for (j, v) in out.features_mut().iter_mut().enumerate() {
            let c = j % d;
            let centered = *v - self.mean[c];
            *v = if centered == 0.0 { 0.0 } else { centered / self.std[c] };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius(ds: &LabeledDataset, i: usize) -> f64 {
        ds.row(i)[0].hypot(ds.row(i)[1])
    }

    #[test]
    fn type1_geometry() {
        let ds = gen_synthetic(&SyntheticSpec::new(SyntheticKind::Type1, 3)).unwrap();
        assert_eq!(ds.len(), 1000);
        for i in 0..ds.len() {
            let r = radius(&ds, i);
            if ds.labels()[i] == 1 {
                assert!(r <= 0.25);
            } else {
                assert!((0.28..=0.45).contains(&r));
            }
        }
        // radius threshold classifier is perfect
        let correct = (0..ds.len())
            .filter(|&i| usize::from(radius(&ds, i) < 0.265) == ds.labels()[i])
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn type1_is_uniform_in_disk() {
        let mut spec = SyntheticSpec::new(SyntheticKind::Type1, 11);
        spec.n_per_class = 10_000;
        let ds = gen_synthetic(&spec).unwrap();
        let r2: Vec<f64> = (0..ds.len())
            .filter(|&i| ds.labels()[i] == 1)
            .map(|i| radius(&ds, i).powi(2))
            .collect();
        let n = r2.len() as f64;
        let mean = r2.iter().sum::<f64>() / n;
        // r^2 is uniform on [0, R^2]: mean R^2/2, sd R^2/sqrt(12)
        let big_r2 = 0.25f64 * 0.25;
        let se = big_r2 / 12f64.sqrt() / n.sqrt();
        assert!((mean - big_r2 / 2.0).abs() <= 3.0 * se);
    }

    fn band_change_fraction(relabel: BandRelabel, seed: u64) -> (f64, f64) {
        let mut t1 = SyntheticSpec::new(SyntheticKind::Type1, seed);
        t1.band_relabel = relabel;
        let mut t2 = t1.clone();
        t2.kind = SyntheticKind::Type2;
        let a = gen_synthetic(&t1).unwrap();
        let b = gen_synthetic(&t2).unwrap();
        assert_eq!(a.features(), b.features());
        let band: Vec<usize> = (0..a.len())
            .filter(|&i| (0.22..=0.31).contains(&radius(&a, i)))
            .collect();
        let changed = band.iter().filter(|&&i| a.labels()[i] != b.labels()[i]).count();
        let outside_changed = (0..a.len())
            .filter(|i| !band.contains(i))
            .any(|i| a.labels()[i] != b.labels()[i]);
        assert!(!outside_changed);
        (changed as f64 / band.len() as f64, band.len() as f64)
    }

    #[test]
    fn type2_fair_coin_changes_a_quarter() {
        let (frac, n) = band_change_fraction(BandRelabel::FairCoin, 5);
        let sigma = (0.25 * 0.75 / n).sqrt();
        assert!((frac - 0.25).abs() <= 3.0 * sigma, "{frac} over {n}");
    }

    #[test]
    fn type2_flip_changes_half() {
        let (frac, n) = band_change_fraction(BandRelabel::FlipToOther, 5);
        let sigma = (0.25 / n).sqrt();
        assert!((frac - 0.5).abs() <= 3.0 * sigma, "{frac} over {n}");
    }

    #[test]
    fn invalid_radii() {
        let mut spec = SyntheticSpec::new(SyntheticKind::Type1, 0);
        spec.annulus_inner = 0.2;
        assert!(gen_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::new(SyntheticKind::Type2, 0);
        spec.band_outer = 0.1;
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn generation_is_pure() {
        let spec = SyntheticSpec::new(SyntheticKind::Type2, 8);
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = gen_synthetic(&SyntheticSpec::new(SyntheticKind::Type1, 1)).unwrap();
        let parts = split(&ds, &[0.6, 0.2, 0.2], 4).unwrap();
        let sizes: Vec<usize> = parts.iter().map(LabeledDataset::len).collect();
        assert_eq!(sizes, vec![600, 200, 200]);
        assert_eq!(parts, split(&ds, &[0.6, 0.2, 0.2], 4).unwrap());
        assert_ne!(parts[0], split(&ds, &[0.6, 0.2, 0.2], 5).unwrap()[0]);
        assert!(split(&ds, &[0.6, 0.3], 0).is_err());
        assert!(split(&ds, &[1.0 - 1e-6, 1e-6], 0).is_err());
    }

    #[test]
    fn split_is_stratified() {
        // unbalanced three-class set
        let labels: Vec<usize> = (0..997).map(|i| [0, 0, 0, 1, 1, 2, 0][i % 7]).collect();
        let ds = LabeledDataset::new(vec![0.0; 997], 1, labels, 3).unwrap();
        let fr = [0.7, 0.1, 0.2];
        let parts = split(&ds, &fr, 2).unwrap();
        let global = ds.class_counts();
        for (s, part) in parts.iter().enumerate() {
            for (c, &cnt) in part.class_counts().iter().enumerate() {
                let want = global[c] as f64 * fr[s];
                assert!((cnt as f64 - want).abs() <= 1.0, "split {s} class {c}: {cnt} vs {want}");
            }
        }
    }

    #[test]
    fn csv_reindexes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "a,b,y\n1.5,2,+1\n-3,4e-2,-1\n0,0,+1\n").unwrap();
        let out = load_csv(&path, &LabelColumn::Name("y".into()), b',').unwrap();
        assert_eq!(out.dataset.labels(), &[1, 0, 1]);
        assert_eq!(out.class_names, vec!["-1", "+1"]);

        let path2 = dir.path().join("out.csv");
        let ds = gen_synthetic(&SyntheticSpec::new(SyntheticKind::Type1, 2)).unwrap();
        write_csv(&ds, &path2).unwrap();
        let back = load_csv(&path2, &LabelColumn::Last, b',').unwrap();
        assert_eq!(back.feature_names, vec!["f0", "f1"]);
        assert_eq!(back.dataset.labels(), ds.labels());
        for (a, b) in back.dataset.features().iter().zip(ds.features()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn csv_keeps_clean_labels_apart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noisy.csv");
        std::fs::write(&path, "x,label,clean_label\n0.5,b,a\n1,a,a\n2,b,b\n").unwrap();
        let out = load_csv(&path, &LabelColumn::Last, b',').unwrap();
        assert_eq!(out.feature_names, vec!["x"]);
        assert_eq!(out.class_names, vec!["a", "b"]);
        assert_eq!(out.dataset.labels(), &[1, 0, 1]);
        assert_eq!(out.dataset.clean_labels(), Some(&[0, 0, 1][..]));
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_csv(&dir.path().join("missing.csv"), &LabelColumn::Last, b','),
            Err(Error::Io(_))
        ));
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,y\nx,1\n1,0\n").unwrap();
        assert!(matches!(load_csv(&p, &LabelColumn::Last, b','), Err(Error::Parse { .. })));
        std::fs::write(&p, "a;y\n1;1\n2;1\n").unwrap();
        assert!(matches!(
            load_csv(&p, &LabelColumn::Last, b';'),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let ds = LabeledDataset::new(vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0], 2, vec![0, 1, 0], 2).unwrap();
        let st = Standardizer::fit(&ds);
        let z = st.apply(&ds);
        for i in 0..3 {
            assert_eq!(z.row(i)[1], 0.0);
        }
        let col0: Vec<f64> = (0..3).map(|i| z.row(i)[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        let var = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
    }
}
