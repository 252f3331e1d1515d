//! CULane-style dataset layout.
//!
//! ```text
//! <root>/list/{train,val,test}.txt      image [mask e1 e2 e3 e4] per line
//! <root>/list/test_split/<name>.txt     image paths of one scene category
//! <root>/<image stem>.lines.txt         one lane per line: x y x y ...
//! ```
//!
//! Paths inside list files are relative to `<root>`; a leading `/` is
//! allowed, as in the original lists.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::image::{self, Image};
use crate::data::lane::{self, LanePolyline};
use crate::data::resize::{coord_scale, resize_bilinear, resize_nearest};
use crate::data::synth::{SyntheticScene, MAX_LANES};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fsio;

/// Scene categories in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Normal,
    Crowded,
    Night,
    NoLine,
    Shadow,
    Arrow,
    Dazzle,
    Curve,
    Crossroad,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Normal,
        Category::Crowded,
        Category::Night,
        Category::NoLine,
        Category::Shadow,
        Category::Arrow,
        Category::Dazzle,
        Category::Curve,
        Category::Crossroad,
    ];

    /// Row label in the evaluation report.
    pub fn label(self) -> &'static str {
        match self {
            Category::Normal => "Normal",
            Category::Crowded => "Crowded",
            Category::Night => "Night",
            Category::NoLine => "No line",
            Category::Shadow => "Shadow",
            Category::Arrow => "Arrow",
            Category::Dazzle => "Dazzle light",
            Category::Curve => "Curve",
            Category::Crossroad => "Crossroad",
        }
    }

    /// Machine-readable key.
    pub fn key(self) -> &'static str {
        match self {
            Category::Normal => "normal",
            Category::Crowded => "crowded",
            Category::Night => "night",
            Category::NoLine => "no_line",
            Category::Shadow => "shadow",
            Category::Arrow => "arrow",
            Category::Dazzle => "dazzle",
            Category::Curve => "curve",
            Category::Crossroad => "crossroad",
        }
    }

    /// Split-list file name used by the original dataset.
    pub fn split_file(self) -> &'static str {
        match self {
            Category::Normal => "test0_normal.txt",
            Category::Crowded => "test1_crowd.txt",
            Category::Dazzle => "test2_hlight.txt",
            Category::Shadow => "test3_shadow.txt",
            Category::NoLine => "test4_noline.txt",
            Category::Arrow => "test5_arrow.txt",
            Category::Curve => "test6_curve.txt",
            Category::Crossroad => "test7_cross.txt",
            Category::Night => "test8_night.txt",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Category {
    type Err = Error;

    /// Accepts keys (`no_line`) and split names with or without the
    /// `testN_` prefix (`test4_noline`, `crowd`, `hlight`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_suffix(".txt").unwrap_or(&s);
        let bare = match s.split_once('_') {
            Some((prefix, rest)) if prefix.starts_with("test") && prefix[4..].chars().all(|c| c.is_ascii_digit()) => {
                rest
            }
            _ => s,
        };
        Ok(match bare {
            "normal" => Category::Normal,
            "crowd" | "crowded" => Category::Crowded,
            "night" => Category::Night,
            "noline" | "no_line" | "no-line" => Category::NoLine,
            "shadow" => Category::Shadow,
            "arrow" => Category::Arrow,
            "hlight" | "dazzle" | "dazzle_light" => Category::Dazzle,
            "curve" => Category::Curve,
            "cross" | "crossroad" => Category::Crossroad,
            _ => return Err(Error::Config(format!("unknown scene category `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    /// Path as written in the list file (root-relative, no leading `/`).
    pub rel_path: String,
    pub image: PathBuf,
    pub annotation: PathBuf,
    pub mask: Option<PathBuf>,
    pub exist: Option<Vec<u8>>,
    pub category: Option<Category>,
    /// 1-based line in the list file.
    pub line: usize,
}

impl IndexEntry {
    /// Category used for reporting; untagged images count as normal.
    pub fn category_or_default(&self) -> Category {
        self.category.unwrap_or(Category::Normal)
    }

    /// Ground-truth lanes in original image coordinates; a missing
    /// annotation file means no lanes.
    pub fn read_lanes(&self) -> Result<Vec<LanePolyline>> {
        read_lanes_file(&self.annotation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

/// `<stem>.lines.txt` next to an image.
pub fn annotation_path(image: &Path) -> PathBuf {
    image.with_extension("lines.txt")
}

pub fn read_lanes_file(path: &Path) -> Result<Vec<LanePolyline>> {
    match std::fs::read_to_string(path) {
        Ok(text) => lane::parse_lines(&text, &path.display().to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn dataset_root(list_file: &Path) -> PathBuf {
    let parent = list_file.parent().unwrap_or(Path::new("."));
    let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
    if parent.file_name().is_some_and(|n| n == "list") {
        parent.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        parent.to_path_buf()
    }
}

fn normalize_rel(s: &str) -> String {
    s.trim_start_matches('/').to_string()
}

/// Reads a list file and tags entries with categories from
/// `<root>/list/test_split/*.txt` when that directory exists.
pub fn load_culane_index(list_file: &Path) -> Result<DatasetIndex> {
    let root = dataset_root(list_file);
    let text = fsio::read_to_string(list_file)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let at = || format!("{}:{}", list_file.display(), i + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (img, mask, exist) = match fields.as_slice() {
            [] => continue,
            [img] => (*img, None, None),
            [img, mask] => (*img, Some(*mask), None),
            [img, mask, flags @ ..] if flags.len() == MAX_LANES => {
                let exist = flags
                    .iter()
                    .map(|f| match *f {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        _ => Err(Error::format(at(), format!("existence flag `{f}` is not 0 or 1"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (*img, Some(*mask), Some(exist))
            }
            _ => {
                return Err(Error::format(
                    at(),
                    format!(
                        "expected `image [mask e1..e{MAX_LANES}]`, got {} fields",
                        fields.len()
                    ),
                ))
            }
        };
        let rel_path = normalize_rel(img);
        let image = root.join(&rel_path);
        entries.push(IndexEntry {
            annotation: annotation_path(&image),
            image,
            rel_path,
            mask: mask.map(|m| root.join(normalize_rel(m))),
            exist,
            category: None,
            line: i + 1,
        });
    }
    let mut index = DatasetIndex { root, entries };
    index.attach_categories()?;
    Ok(index)
}

impl DatasetIndex {
    fn attach_categories(&mut self) -> Result<()> {
        let dir = self.root.join("list").join("test_split");
        let Ok(read) = std::fs::read_dir(&dir) else {
            return Ok(());
        };
        let mut files: Vec<PathBuf> = read
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        let mut tags = std::collections::HashMap::new();
        for file in files {
            let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            let category: Category = name
                .parse()
                .map_err(|_| Error::format(file.display().to_string(), format!("unknown category file `{name}`")))?;
            for line in fsio::read_to_string(&file)?.lines() {
                if let Some(first) = line.split_whitespace().next() {
                    tags.entry(normalize_rel(first)).or_insert(category);
                }
            }
        }
        for e in &mut self.entries {
            e.category = tags.get(&e.rel_path).copied();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads one entry at `h × w`. Images are resized bilinearly, masks by
/// nearest neighbour; without a mask the `.lines.txt` lanes are scaled and
/// rasterized with the default training stroke.
pub fn load_sample(entry: &IndexEntry, h: usize, w: usize) -> Result<Sample> {
    let img = image::read_image(&entry.image)?;
    let tensor = resize_bilinear(&img.to_tensor(), h, w)?;
    let label_mask = match &entry.mask {
        Some(path) => {
            let m = image::read_mask(path)?;
            if (m.width, m.height) != (img.width, img.height) {
                return Err(Error::format(
                    path.display().to_string(),
                    format!(
                        "mask is {}x{}, image is {}x{}",
                        m.width, m.height, img.width, img.height
                    ),
                ));
            }
            resize_nearest(&m.data, m.height, m.width, h, w)
        }
        None => {
            let lanes = lane::order_lanes(entry.read_lanes()?, img.width, MAX_LANES);
            let (sx, sy) = (coord_scale(img.width, w), coord_scale(img.height, h));
            let scaled: Vec<_> = lanes.iter().map(|l| l.scaled(sx, sy)).collect();
            lane::rasterize_lanes(&scaled, h, w, lane::default_stroke_width(w))
        }
    };
    let sample = Sample::new(tensor, label_mask, MAX_LANES)
        .map_err(|e| Error::format(entry.image.display().to_string(), e.to_string()))?;
    if let Some(flags) = &entry.exist {
        if *flags != sample.exist {
            return Err(Error::Label(format!(
                "{}: listed existence {:?} disagrees with mask {:?}",
                entry.image.display(),
                flags,
                sample.exist
            )));
        }
    }
    Ok(sample)
}

/// Every entry is accounted for: `loaded + errors == index.len()`.
#[derive(Debug)]
pub struct LoadReport {
    pub samples: Vec<(usize, Sample)>,
    pub errors: Vec<(usize, Error)>,
}

pub fn load_all(index: &DatasetIndex, h: usize, w: usize) -> LoadReport {
    let results: Vec<_> = index
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| (i, load_sample(e, h, w)))
        .collect();
    let mut report = LoadReport {
        samples: Vec::new(),
        errors: Vec::new(),
    };
    for (i, r) in results {
        match r {
            Ok(s) => report.samples.push((i, s)),
            Err(e) => report.errors.push((i, e)),
        }
    }
    report
}

/// Writes scenes in the layout above: `images/NNNNN.ppm` with sibling
/// `.lines.txt`, `labels/NNNNN.pgm` class-id masks, `list/train.txt` with
/// masks and flags, `list/test.txt` with image paths, and one split file
/// per category.
pub fn write_culane_dataset(root: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    for dir in ["images", "labels", "list/test_split"] {
        fsio::create_dir_all(&root.join(dir))?;
    }
    let mut train = String::new();
    let mut test = String::new();
    let mut splits = vec![String::new(); Category::ALL.len()];
    for (i, s) in scenes.iter().enumerate() {
        let img_rel = format!("/images/{i:05}.ppm");
        let mask_rel = format!("/labels/{i:05}.pgm");
        let img_path = root.join(&img_rel[1..]);
        image::write_image(&img_path, &s.image)?;
        fsio::write_atomic(&annotation_path(&img_path), lane::format_lines(&s.lanes).as_bytes())?;
        let mask = Image::from_raw(s.image.width, s.image.height, 1, s.sample.label_mask.clone())?;
        image::write_image(&root.join(&mask_rel[1..]), &mask)?;
        let flags: Vec<String> = s.sample.exist.iter().map(u8::to_string).collect();
        train.push_str(&format!("{img_rel} {mask_rel} {}\n", flags.join(" ")));
        test.push_str(&format!("{img_rel}\n"));
        let k = Category::ALL.iter().position(|&c| c == s.category).expect("listed");
        splits[k].push_str(&format!("{img_rel}\n"));
    }
    fsio::write_atomic(&root.join("list/train.txt"), train.as_bytes())?;
    fsio::write_atomic(&root.join("list/test.txt"), test.as_bytes())?;
    for (cat, text) in Category::ALL.iter().zip(&splits) {
        if !text.is_empty() {
            fsio::write_atomic(&root.join("list/test_split").join(cat.split_file()), text.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_names() {
        for c in Category::ALL {
            assert_eq!(c.key().parse::<Category>().unwrap(), c);
            assert_eq!(c.split_file().parse::<Category>().unwrap(), c);
        }
        assert!("test9_unknown".parse::<Category>().is_err());
    }

    #[test]
    fn list_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("list")).unwrap();
        let list = dir.path().join("list/train.txt");
        std::fs::write(&list, "/a/img.ppm /a/mask.pgm 1 1 1 0\nb.ppm\n\n").unwrap();
        let idx = load_culane_index(&list).unwrap();
        assert_eq!(idx.root, dir.path());
        assert_eq!(idx.entries[0].exist, Some(vec![1, 1, 1, 0]));
        assert_eq!(idx.entries[0].annotation, dir.path().join("a/img.lines.txt"));
        assert_eq!(idx.entries[1].mask, None);
        assert_eq!(idx.entries[1].line, 2);
    }

    #[test]
    fn malformed_list_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("l.txt");
        std::fs::write(&list, "a.ppm\na.ppm m.pgm 1 2 0 0\n").unwrap();
        let err = load_culane_index(&list).unwrap_err().to_string();
        assert!(err.contains("l.txt:2"), "{err}");
        std::fs::write(&list, "a.ppm m.pgm 1 0\n").unwrap();
        assert!(load_culane_index(&list).is_err());
    }
}
