use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Tb,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Tb, Label::Normal];

    /// Class index used for logits: TB is the positive class.
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Tb => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Tb),
            _ => None,
        }
    }

    /// Directory and manifest spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Tb => "TB",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TB" => Ok(Label::Tb),
            "Normal" => Ok(Label::Normal),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unused,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unused => "unused",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unused" => Ok(Split::Unused),
            other => Err(Error::Contract(format!(
                "unknown split {other:?}; expected train, val, test or unused"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub path: PathBuf,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Every decodable image under the two class directories, path-sorted.
#[derive(Clone, Debug, Default)]
pub struct RawManifest {
    pub records: Vec<RawRecord>,
    pub skipped: Vec<SkippedFile>,
}

impl RawManifest {
    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }
}

/// Scans `<root>/TB` and `<root>/Normal`.
///
/// Only image headers are read here; files whose header does not decode are
/// reported in `skipped` rather than failing the scan.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<RawManifest> {
    let root = root.as_ref();
    let mut raw = RawManifest::default();
    // layout problems take precedence over empty classes
    for label in Label::ALL {
        let dir = root.join(label.as_str());
        if !dir.is_dir() {
            return Err(Error::Layout(format!(
                "missing class directory {}",
                dir.display()
            )));
        }
    }
    for label in Label::ALL {
        let dir = root.join(label.as_str());
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        let before = raw.records.len();
        for path in files {
            match ::image::ImageReader::open(&path)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
            {
                Ok(_) => raw.records.push(RawRecord { path, label }),
                Err(reason) => raw.skipped.push(SkippedFile { path, reason }),
            }
        }
        if raw.records.len() == before {
            return Err(Error::EmptyClass {
                class: label.as_str().into(),
            });
        }
    }
    raw.records.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(raw)
}

/// Per-class quotas for [`split_dataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCounts {
    /// Images per class in the train+validation pool.
    pub train_per_class: usize,
    /// Fraction of each class's pool held out for validation.
    pub val_fraction: f64,
    pub test_tb: usize,
    pub test_normal: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train_per_class: 600,
            val_fraction: 0.2,
            test_tb: 100,
            test_normal: 101,
        }
    }
}

impl SplitCounts {
    pub fn val_per_class(&self) -> usize {
        (self.train_per_class as f64 * self.val_fraction).round() as usize
    }

    pub fn test_for(&self, label: Label) -> usize {
        match label {
            Label::Tb => self.test_tb,
            Label::Normal => self.test_normal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} not in [0, 1)",
                self.val_fraction
            )));
        }
        if self.train_per_class == 0 || self.val_per_class() >= self.train_per_class {
            return Err(Error::Config(
                "training pool must leave at least one training image per class".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub split: Split,
}

/// Split assignment of every scanned image, in path order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub records: Vec<ManifestRecord>,
}

/// Seeded per-class shuffle, then pool / test / unused by quota; the pool is
/// split into train and validation per class.
pub fn split_dataset(raw: &RawManifest, counts: SplitCounts, seed: u64) -> Result<DatasetManifest> {
    counts.validate()?;
    let n_val = counts.val_per_class();
    let mut records = Vec::with_capacity(raw.records.len());
    for label in Label::ALL {
        let mut members: Vec<&RawRecord> =
            raw.records.iter().filter(|r| r.label == label).collect();
        members.sort_by(|a, b| a.path.cmp(&b.path));
        let n_test = counts.test_for(label);
        let required = counts.train_per_class + n_test;
        if members.len() < required {
            return Err(Error::Quota {
                class: label.as_str().into(),
                available: members.len(),
                required,
            });
        }
        let mut rng = rng::stream(seed, &[label.index() as u64]);
        members.shuffle(&mut rng);
        let n_train = counts.train_per_class - n_val;
        for (i, r) in members.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < counts.train_per_class {
                Split::Val
            } else if i < required {
                Split::Test
            } else {
                Split::Unused
            };
            records.push(ManifestRecord {
                path: r.path.to_string_lossy().into_owned(),
                label,
                split,
            });
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = DatasetManifest { seed, records };
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Manifest(format!("path {} appears twice", r.path)));
            }
        }
        Ok(())
    }

    /// Records of one split in path order.
    pub fn records_in(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split && r.label == label)
            .count()
    }

    /// `train 480/480 val 120/120 test 100/101` (TB/Normal per split).
    pub fn summary(&self) -> String {
        [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| {
                format!(
                    "{s} {}/{}",
                    self.count(s, Label::Tb),
                    self.count(s, Label::Normal)
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// CSV with header `path,label,split,seed`, LF line endings.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["path", "label", "split", "seed"])?;
        let seed = self.seed.to_string();
        for r in &self.records {
            w.write_record([r.path.as_str(), r.label.as_str(), r.split.as_str(), &seed])?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split", "seed"] {
            return Err(Error::Manifest(format!(
                "expected header path,label,split,seed, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        let mut seed = None;
        for row in rdr.records() {
            let row = row?;
            let row_seed: u64 = row[3]
                .parse()
                .map_err(|_| Error::Manifest(format!("bad seed {:?}", &row[3])))?;
            match seed {
                None => seed = Some(row_seed),
                Some(s) if s != row_seed => {
                    return Err(Error::Manifest("rows disagree on the split seed".into()))
                }
                _ => {}
            }
            records.push(ManifestRecord {
                path: row[0].to_string(),
                label: row[1].parse()?,
                split: row[2]
                    .parse()
                    .map_err(|_| Error::Manifest(format!("unknown split {:?}", &row[2])))?,
            });
        }
        let manifest = DatasetManifest {
            seed: seed.unwrap_or(0),
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn simulated(tb: usize, normal: usize) -> RawManifest {
        let mut records = Vec::new();
        for i in 0..tb {
            records.push(RawRecord {
                path: PathBuf::from(format!("data/TB/tb_{i:05}.png")),
                label: Label::Tb,
            });
        }
        for i in 0..normal {
            records.push(RawRecord {
                path: PathBuf::from(format!("data/Normal/n_{i:05}.png")),
                label: Label::Normal,
            });
        }
        records.sort_by(|a, b| a.path.cmp(&b.path));
        RawManifest {
            records,
            skipped: vec![],
        }
    }

    #[test]
    fn default_quotas_on_full_counts() {
        let m = split_dataset(&simulated(700, 3500), SplitCounts::default(), 1).unwrap();
        assert_eq!(m.summary(), "train 480/480 val 120/120 test 100/101");
        assert_eq!(m.count(Split::Unused, Label::Normal), 2799);
        assert_eq!(m.count(Split::Unused, Label::Tb), 0);
    }

    #[test]
    fn tb_quota_overflow_names_class() {
        let counts = SplitCounts {
            train_per_class: 600,
            test_tb: 200,
            ..SplitCounts::default()
        };
        match split_dataset(&simulated(700, 3500), counts, 0) {
            Err(Error::Quota {
                class,
                available,
                required,
            }) => {
                assert_eq!(class, "TB");
                assert_eq!((available, required), (700, 800));
            }
            other => panic!("expected quota error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = split_dataset(
            &simulated(10, 12),
            SplitCounts {
                train_per_class: 5,
                val_fraction: 0.2,
                test_tb: 2,
                test_normal: 3,
            },
            9,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path,label,split,seed\n"));
        assert!(!text.contains('\r'));
        assert_eq!(DatasetManifest::read_csv(&buf[..]).unwrap(), m);
    }

    #[test]
    fn split_parse_rejects_unknown() {
        assert!(matches!(
            "holdout".parse::<Split>(),
            Err(Error::Contract(_))
        ));
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
    }
}
