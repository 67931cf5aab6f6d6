//! Dataset manifests, train/test splitting and sample loading.
//!
//! A manifest is a tab-separated text file, one record per line:
//!
//! ```text
//! id  source  split  image_path  mask_path  [mask2_path]
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Relative paths are
//! resolved against the directory holding the manifest. A Montgomery record
//! may name a single already-merged mask or a left and a right lobe mask;
//! the other sources always have a single mask.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SegError};
use crate::image::{read_image, read_mask, Image};
use crate::morphology::{dilate, BinaryMask, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Montgomery,
    Shenzhen,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Montgomery, Source::Shenzhen, Source::Synthetic];
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Montgomery => "montgomery",
            Source::Shenzhen => "shenzhen",
            Source::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "montgomery" => Ok(Source::Montgomery),
            "shenzhen" => Ok(Source::Shenzhen),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskRef {
    Single(PathBuf),
    Lobes { left: PathBuf, right: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: Source,
    pub split: Split,
    pub image: PathBuf,
    pub mask: MaskRef,
}

impl ManifestEntry {
    fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.image.as_path()];
        match &self.mask {
            MaskRef::Single(p) => v.push(p),
            MaskRef::Lobes { left, right } => {
                v.push(left);
                v.push(right);
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    /// Parses and validates a manifest file, including that every referenced
    /// file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SegError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, root, path)?;
        manifest.check_files()?;
        Ok(manifest)
    }

    /// Parses manifest text without touching the file system. `origin` is
    /// only used in error messages.
    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| SegError::Manifest {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(5..=6).contains(&fields.len()) {
                return Err(err(
                    line_no,
                    format!("expected 5 or 6 tab-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(err(line_no, "empty id".into()));
            }
            if let Some(prev) = seen.insert(id.to_string(), line_no) {
                return Err(err(line_no, format!("duplicate id {id:?} (first seen on line {prev})")));
            }
            let source: Source = fields[1].trim().parse().map_err(|m| err(line_no, m))?;
            let split: Split = fields[2].trim().parse().map_err(|m| err(line_no, m))?;
            let path = |k: usize, what: &str| -> Result<PathBuf> {
                let f = fields[k].trim();
                if f.is_empty() {
                    Err(err(line_no, format!("{id}: empty {what} path")))
                } else {
                    Ok(PathBuf::from(f))
                }
            };
            let image = path(3, "image")?;
            let mask = if fields.len() == 6 {
                if source != Source::Montgomery {
                    return Err(err(
                        line_no,
                        format!("{id}: only montgomery records may list two lobe masks"),
                    ));
                }
                MaskRef::Lobes {
                    left: path(4, "left lobe")?,
                    right: path(5, "right lobe")?,
                }
            } else {
                MaskRef::Single(path(4, "mask")?)
            };
            entries.push(ManifestEntry {
                id: id.to_string(),
                source,
                split,
                image,
                mask,
            });
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Resolves an entry path against [`DatasetManifest::root`].
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Every missing file, reported with the id that references it.
    pub fn check_files(&self) -> Result<()> {
        let missing: Vec<(String, PathBuf)> = self
            .entries
            .iter()
            .flat_map(|e| e.paths().into_iter().map(move |p| (e, p)))
            .map(|(e, p)| (e.id.clone(), self.resolve(p)))
            .filter(|(_, p)| !p.is_file())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SegError::MissingFiles(missing))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id\tsource\tsplit\timage\tmask[\tmask2]\n");
        for e in &self.entries {
            let mask = match &e.mask {
                MaskRef::Single(p) => p.display().to_string(),
                MaskRef::Lobes { left, right } => format!("{}\t{}", left.display(), right.display()),
            };
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.source,
                e.split,
                e.image.display(),
                mask
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let write_err = |source| SegError::Write {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(write_err)?;
        f.write_all(self.to_text().as_bytes()).map_err(write_err)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.with_split(split).count()
    }

    /// Reassigns every entry to train or test, stratified by source.
    ///
    /// The total number of training entries is `round(train_fraction * n)`;
    /// it is shared out between sources by largest remainder so each source
    /// is within one entry of its exact share. Within a source the choice is
    /// a seeded shuffle.
    pub fn split(&mut self, train_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(SegError::Config(format!(
                "train fraction {train_fraction} is outside [0, 1]"
            )));
        }
        if self.entries.is_empty() {
            return Err(SegError::EmptyDataset("nothing to split".into()));
        }
        let groups: Vec<Vec<usize>> = Source::ALL
            .iter()
            .map(|&s| {
                (0..self.entries.len())
                    .filter(|&i| self.entries[i].source == s)
                    .collect()
            })
            .collect();
        let total = (train_fraction * self.entries.len() as f64).round() as usize;
        let exact: Vec<f64> = groups.iter().map(|g| train_fraction * g.len() as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let mut left = total.saturating_sub(quota.iter().sum());
        for &g in order.iter().cycle().take(order.len() * 2) {
            if left == 0 {
                break;
            }
            if quota[g] < groups[g].len() {
                quota[g] += 1;
                left -= 1;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (g, idx) in groups.into_iter().enumerate() {
            let mut idx = idx;
            idx.shuffle(&mut rng);
            for (k, i) in idx.into_iter().enumerate() {
                self.entries[i].split = if k < quota[g] { Split::Train } else { Split::Test };
            }
        }
        Ok(())
    }
}

/// Combines the two lobe masks and dilates the union.
pub fn merge_lobes(left: &BinaryMask, right: &BinaryMask, se: &StructuringElement) -> Result<BinaryMask> {
    Ok(dilate(&left.union(right)?, se, 1))
}

/// Structuring element used to merge lobe masks unless configured otherwise.
pub fn default_lobe_se() -> StructuringElement {
    StructuringElement::square(5)
}

/// One image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: BinaryMask) -> Result<Self> {
        if image.shape() != mask.shape() {
            let ((ih, iw), (mh, mw)) = (image.shape(), mask.shape());
            let (dim, got, expected) = if ih != mh {
                ("height", mh, ih)
            } else {
                ("width", mw, iw)
            };
            return Err(SegError::shape("Sample", dim, got, expected));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }
}

/// Reads an entry's image and mask, merging lobe masks with `lobe_se`.
pub fn load_sample(manifest: &DatasetManifest, entry: &ManifestEntry, lobe_se: &StructuringElement) -> Result<Sample> {
    let image_path = manifest.resolve(&entry.image);
    let image = read_image(&image_path)?;
    let mask = match &entry.mask {
        MaskRef::Single(p) => read_mask(&manifest.resolve(p))?,
        MaskRef::Lobes { left, right } => {
            let l = read_mask(&manifest.resolve(left))?;
            let r = read_mask(&manifest.resolve(right))?;
            merge_lobes(&l, &r, lobe_se).map_err(|e| SegError::Image {
                path: manifest.resolve(left),
                msg: format!("{}: lobe masks disagree: {e}", entry.id),
            })?
        }
    };
    Sample::new(&entry.id, image, mask).map_err(|e| SegError::Image {
        path: image_path,
        msg: format!("{}: image and mask sizes differ: {e}", entry.id),
    })
}

/// Loads every entry of `split`, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split, lobe_se: &StructuringElement) -> Result<Vec<Sample>> {
    manifest
        .with_split(split)
        .map(|e| load_sample(manifest, e, lobe_se))
        .collect()
}

/// Ids that occur more than once, in first-occurrence order.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dup.contains(&id) {
            dup.push(id);
        }
    }
    dup
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        DatasetManifest::parse(text, PathBuf::new(), Path::new("m.tsv"))
    }

    fn entries(spec: &[(Source, usize)]) -> DatasetManifest {
        let mut text = String::new();
        for &(src, n) in spec {
            for i in 0..n {
                text.push_str(&format!("{src}{i}\t{src}\ttrain\ti{i}.png\tm{i}.png\n"));
            }
        }
        parse(&text).unwrap()
    }

    #[test]
    fn parses_records_and_comments() {
        let m = parse(
            "# header\n\
             a\tshenzhen\ttrain\tim/a.png\tma/a.png\n\
             \n\
             b\tmontgomery\ttest\tim/b.png\tl/b.png\tr/b.png\n\
             c\tsynthetic\ttrain\tim/c.png\tma/c.png\n",
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(
            m.entries[1].mask,
            MaskRef::Lobes {
                left: "l/b.png".into(),
                right: "r/b.png".into()
            }
        );
        assert_eq!(m.count(Split::Test), 1);
        assert_eq!(parse(&m.to_text()).unwrap().entries, m.entries);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse("a\tshenzhen\ttrain\tx\ty\na\tshenzhen\ttrain\tx\ty\n").unwrap_err();
        match e {
            SegError::Manifest { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("\"a\""), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        // a lobe pair with one path missing
        let e = parse("# c\nb\tmontgomery\ttrain\tx\tl.png\t\n").unwrap_err();
        assert!(matches!(e, SegError::Manifest { line: 2, .. }), "{e}");
        assert!(parse("b\tshenzhen\ttrain\tx\tl.png\tr.png\n").is_err());
        assert!(parse("b\tother\ttrain\tx\ty\n").is_err());
        assert!(parse("b\tshenzhen\tval\tx\ty\n").is_err());
        assert!(parse("b\tshenzhen\ttrain\tx\n").is_err());
    }

    #[test]
    fn missing_files_are_listed_by_id() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"").unwrap();
        let text = "a\tshenzhen\ttrain\ta.png\tgone.png\nb\tshenzhen\ttrain\ta.png\ta.png\n";
        let p = dir.path().join("m.tsv");
        fs::write(&p, text).unwrap();
        match DatasetManifest::load(&p).unwrap_err() {
            SegError::MissingFiles(list) => {
                assert_eq!(list.len(), 1);
                assert_eq!(list[0].0, "a");
                assert!(list[0].1.ends_with("gone.png"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_counts_and_stratification() {
        let mut m = entries(&[(Source::Synthetic, 10)]);
        m.split(0.8, 1).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (8, 2));

        let mut m = entries(&[(Source::Montgomery, 5), (Source::Shenzhen, 5)]);
        m.split(0.8, 3).unwrap();
        for s in [Source::Montgomery, Source::Shenzhen] {
            let n = m
                .entries
                .iter()
                .filter(|e| e.source == s && e.split == Split::Train)
                .count();
            assert_eq!(n, 4);
        }

        let mut a = entries(&[(Source::Montgomery, 7), (Source::Shenzhen, 13)]);
        let mut b = a.clone();
        a.split(0.8, 9).unwrap();
        b.split(0.8, 9).unwrap();
        assert_eq!(a, b);
        let mut c = a.clone();
        c.split(0.8, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_totals_stay_within_one() {
        for (mo, sh, sy) in [(1, 1, 1), (3, 4, 0), (138, 662, 0), (0, 0, 7), (2, 3, 5)] {
            for frac in [0.0, 0.3, 0.5, 0.8, 1.0] {
                let mut m = entries(&[
                    (Source::Montgomery, mo),
                    (Source::Shenzhen, sh),
                    (Source::Synthetic, sy),
                ]);
                m.split(frac, 0).unwrap();
                let n = (mo + sh + sy) as f64;
                let train = m.count(Split::Train) as f64;
                assert!((train - frac * n).abs() <= 1.0, "{mo},{sh},{sy} @ {frac}: {train}");
                for (s, k) in [
                    (Source::Montgomery, mo),
                    (Source::Shenzhen, sh),
                    (Source::Synthetic, sy),
                ] {
                    let t = m
                        .entries
                        .iter()
                        .filter(|e| e.source == s && e.split == Split::Train)
                        .count() as f64;
                    assert!((t - frac * k as f64).abs() < 1.0 + 1e-9, "{s}: {t}");
                }
            }
        }
    }

    #[test]
    fn merge_two_far_pixels_gives_two_blocks() {
        let mut l = BinaryMask::new(9, 9);
        let mut r = BinaryMask::new(9, 9);
        l.set(2, 2, true);
        r.set(6, 6, true);
        let m = merge_lobes(&l, &r, &StructuringElement::square(3)).unwrap();
        let expect = BinaryMask::from_fn(9, 9, |y, x| {
            (y.abs_diff(2) <= 1 && x.abs_diff(2) <= 1) || (y.abs_diff(6) <= 1 && x.abs_diff(6) <= 1)
        });
        assert_eq!(m, expect);
        assert_eq!(
            merge_lobes(&l, &BinaryMask::new(9, 9), &StructuringElement::square(3)).unwrap(),
            dilate(&l, &StructuringElement::square(3), 1)
        );
        assert!(merge_lobes(&l, &BinaryMask::new(9, 8), &StructuringElement::square(3)).is_err());
    }

    #[test]
    fn duplicates_are_found() {
        assert_eq!(duplicate_ids(["a", "b", "a", "c", "a", "b"]), vec!["a", "b"]);
    }
}
