//! Frame manifests: which label map belongs to which scenario, split and
//! annotated proper speed.

mod synthetic;

pub use synthetic::{
    generate_synthetic, planted_speed, planted_weights_csv, read_planted_weights,
    synthesize_score_maps, GeneratedDataset, PlantedWeights, SpeedTarget, SyntheticConfig,
    PLANTED_WEIGHTS_FILE,
};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{load_label_map, LabelMap, DEFAULT_CLASS_COUNT};

pub const MANIFEST_HEADER: [&str; 5] = [
    "frame_id",
    "label_map_path",
    "scenario",
    "split",
    "speed_kmh",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Urban,
    Highway,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Urban, Scenario::Highway];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Urban => "urban",
            Scenario::Highway => "highway",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "urban" => Ok(Scenario::Urban),
            "highway" => Ok(Scenario::Highway),
            other => Err(format!("unknown scenario {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
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

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame_id: String,
    /// Relative to the manifest's directory.
    pub label_map_path: PathBuf,
    pub scenario: Scenario,
    pub split: Split,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub class_count: usize,
    pub source_note: String,
    /// Directory that relative label-map paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        self.base_dir.join(&sample.label_map_path)
    }

    pub fn load_label_map(&self, sample: &Sample) -> Result<LabelMap> {
        load_label_map(&self.resolve(sample), self.class_count)
    }

    /// Subset with the given split and, when `scenario` is `Some`, only that
    /// scenario. `None` selects both scenarios.
    pub fn filter(&self, scenario: Option<Scenario>, split: Split) -> Manifest {
        Manifest {
            samples: self
                .samples
                .iter()
                .filter(|s| s.split == split && scenario.is_none_or(|sc| s.scenario == sc))
                .cloned()
                .collect(),
            class_count: self.class_count,
            source_note: self.source_note.clone(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# class_count={}\n", self.class_count);
        for line in self.source_note.lines() {
            out.push_str("# source=");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&MANIFEST_HEADER.join(","));
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.frame_id,
                s.label_map_path.display(),
                s.scenario,
                s.split,
                s.speed_kmh
            ));
        }
        out
    }
}

/// Parses a manifest without touching the label maps it references.
///
/// Leading `# class_count=N` and `# source=...` lines carry the manifest
/// metadata; class_count defaults to 19 when absent.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut class_count = DEFAULT_CLASS_COUNT;
    let mut notes = Vec::new();
    let mut meta_lines = 0u64;
    let mut rest = text;
    while let Some(line) = rest.lines().next().filter(|l| l.starts_with('#')) {
        meta_lines += 1;
        let body = line.trim_start_matches('#').trim();
        if let Some(v) = body.strip_prefix("class_count=") {
            class_count = v
                .trim()
                .parse()
                .ok()
                .filter(|&c| (1..=255).contains(&c))
                .ok_or_else(|| Error::Manifest {
                    line: meta_lines,
                    message: format!("bad class_count {v:?}"),
                })?;
        } else if let Some(v) = body.strip_prefix("source=") {
            notes.push(v.to_string());
        }
        rest = rest[line.len()..].trim_start_matches('\r');
        rest = rest.strip_prefix('\n').unwrap_or(rest);
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let header_line = meta_lines + 1;
    let headers = reader.headers().map_err(|e| Error::Manifest {
        line: header_line,
        message: e.to_string(),
    })?;
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Manifest {
            line: header_line,
            message: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line()) + meta_lines,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line()) + meta_lines;
        let bad = |message: String| Error::Manifest { line, message };
        if record.len() != MANIFEST_HEADER.len() {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let frame_id = record[0].to_string();
        if frame_id.is_empty() {
            return Err(bad("empty frame_id".into()));
        }
        let scenario = record[2].parse().map_err(bad)?;
        let split = record[3].parse().map_err(bad)?;
        let speed_kmh: f64 = record[4]
            .parse()
            .map_err(|_| bad(format!("bad speed {:?}", &record[4])))?;
        if !speed_kmh.is_finite() {
            return Err(bad(format!("bad speed {:?}", &record[4])));
        }
        if speed_kmh < 0.0 {
            return Err(Error::NegativeSpeed { line });
        }
        if !seen.insert(frame_id.clone()) {
            return Err(Error::DuplicateFrame { frame_id, line });
        }
        samples.push(Sample {
            frame_id,
            label_map_path: PathBuf::from(&record[1]),
            scenario,
            split,
            speed_kmh,
        });
    }

    Ok(Manifest {
        samples,
        class_count,
        source_note: notes.join("\n"),
        base_dir: base_dir.to_path_buf(),
    })
}

/// Reads a manifest, checking that every label map it names exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let manifest = read_manifest_unchecked(path)?;
    for sample in &manifest.samples {
        let resolved = manifest.resolve(sample);
        if !resolved.is_file() {
            return Err(Error::MissingLabelMap {
                frame_id: sample.frame_id.clone(),
                path: resolved,
            });
        }
    }
    Ok(manifest)
}

/// Reads a manifest whose label maps may not exist yet (e.g. before fusion).
pub fn read_manifest_unchecked(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, manifest.to_csv_string()).map_err(|e| Error::io(path, e))
}
