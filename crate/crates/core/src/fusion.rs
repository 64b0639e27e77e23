//! Multi-scale score-map fusion: every scale is brought to the reference
//! resolution, the per-class maximum is taken across scales, and each pixel
//! receives the class with the highest fused score.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::LabelMap;

pub const SCORE_MAP_MAGIC: &[u8; 8] = b"ISA2SMAP";
pub const SCORE_MAP_EXTENSION: &str = "smap";
pub const DEFAULT_SCALES: [f64; 3] = [0.5, 0.75, 1.0];

/// Per-pixel, per-class scores stored in (row, column, class) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    class_count: usize,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, class_count: usize, scores: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || class_count == 0 {
            return Err(Error::ScoreMap(format!(
                "dimensions must be positive, got {height}x{width}x{class_count}"
            )));
        }
        if scores.len() != height * width * class_count {
            return Err(Error::DimensionMismatch {
                expected: height * width * class_count,
                found: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::ScoreMap(format!("non-finite score at index {i}")));
        }
        Ok(ScoreMap {
            height,
            width,
            class_count,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, row: usize, col: usize, class: usize) -> f32 {
        self.scores[(row * self.width + col) * self.class_count + class]
    }

    /// Scores of every class at one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.class_count;
        &self.scores[start..start + self.class_count]
    }

    pub fn map_scores(&self, f: impl Fn(f32) -> f32) -> Result<ScoreMap> {
        ScoreMap::new(
            self.height,
            self.width,
            self.class_count,
            self.scores.iter().map(|&s| f(s)).collect(),
        )
    }
}

/// Score maps of one frame at several input scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapSet {
    entries: Vec<(f64, ScoreMap)>,
    reference_height: usize,
    reference_width: usize,
}

/// `round(scale * reference)` with halves rounded up.
pub fn scaled_dim(scale: f64, reference: usize) -> usize {
    (scale * reference as f64 + 0.5).floor() as usize
}

impl ScoreMapSet {
    pub fn new(
        entries: Vec<(f64, ScoreMap)>,
        reference_height: usize,
        reference_width: usize,
    ) -> Result<Self> {
        let Some((last_scale, first)) = entries.last().map(|(s, m)| (*s, m)) else {
            return Err(Error::Empty("score map set has no entries".into()));
        };
        if last_scale != 1.0 {
            return Err(Error::ScoreMap(format!(
                "largest scale must be 1.0, found {last_scale}"
            )));
        }
        let class_count = first.class_count();
        let mut previous = 0.0;
        for (scale, map) in &entries {
            if !(*scale > previous && *scale <= 1.0) {
                return Err(Error::ScoreMap(format!(
                    "scales must be strictly increasing in (0, 1], found {scale} after {previous}"
                )));
            }
            previous = *scale;
            if map.class_count() != class_count {
                return Err(Error::ScoreMap(format!(
                    "class_count mismatch: {} vs {class_count}",
                    map.class_count()
                )));
            }
            let expected = (
                scaled_dim(*scale, reference_height),
                scaled_dim(*scale, reference_width),
            );
            if (map.height(), map.width()) != expected {
                return Err(Error::ScoreMap(format!(
                    "scale {scale}: expected {}x{}, found {}x{}",
                    expected.0,
                    expected.1,
                    map.height(),
                    map.width()
                )));
            }
        }
        Ok(ScoreMapSet {
            entries,
            reference_height,
            reference_width,
        })
    }

    /// Builds a set from maps in any order, taking the reference size from the
    /// scale-1.0 entry.
    pub fn from_unordered(mut entries: Vec<(f64, ScoreMap)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (h, w) = entries
            .last()
            .map(|(_, m)| (m.height(), m.width()))
            .ok_or_else(|| Error::Empty("score map set has no entries".into()))?;
        ScoreMapSet::new(entries, h, w)
    }

    pub fn entries(&self) -> &[(f64, ScoreMap)] {
        &self.entries
    }

    pub fn reference_height(&self) -> usize {
        self.reference_height
    }

    pub fn reference_width(&self) -> usize {
        self.reference_width
    }
}

/// Nearest-neighbour enlargement: `out(y, x) = in(y*h/H, x*w/W)` with floor
/// division.
pub fn upsample_nearest(
    map: &ScoreMap,
    target_height: usize,
    target_width: usize,
) -> Result<ScoreMap> {
    if target_height < map.height() || target_width < map.width() {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {}x{} to smaller {target_height}x{target_width}",
            map.height(),
            map.width()
        )));
    }
    let c = map.class_count();
    let mut scores = Vec::with_capacity(target_height * target_width * c);
    for y in 0..target_height {
        let sy = y * map.height() / target_height;
        for x in 0..target_width {
            let sx = x * map.width() / target_width;
            scores.extend_from_slice(map.pixel(sy, sx));
        }
    }
    ScoreMap::new(target_height, target_width, c, scores)
}

/// Per-class maximum over maps brought to a common size. Unlike
/// [`fuse_scales`] this accepts the maps in any order.
pub fn fuse_maps<'a>(
    maps: impl IntoIterator<Item = &'a ScoreMap>,
    height: usize,
    width: usize,
) -> Result<ScoreMap> {
    let mut fused: Option<ScoreMap> = None;
    for map in maps {
        let up = if (map.height(), map.width()) == (height, width) {
            map.clone()
        } else {
            upsample_nearest(map, height, width)?
        };
        fused = Some(match fused {
            None => up,
            Some(mut acc) => {
                if acc.class_count != up.class_count {
                    return Err(Error::ScoreMap(format!(
                        "class_count mismatch: {} vs {}",
                        acc.class_count, up.class_count
                    )));
                }
                for (a, &u) in acc.scores.iter_mut().zip(&up.scores) {
                    *a = a.max(u);
                }
                acc
            }
        });
    }
    fused.ok_or_else(|| Error::Empty("no score maps to fuse".into()))
}

pub fn fuse_scales(set: &ScoreMapSet) -> Result<ScoreMap> {
    fuse_maps(
        set.entries.iter().map(|(_, m)| m),
        set.reference_height,
        set.reference_width,
    )
}

/// Highest-scoring class per pixel; ties go to the lowest class id.
pub fn argmax_labels(map: &ScoreMap) -> LabelMap {
    let labels = map
        .scores
        .chunks_exact(map.class_count)
        .map(|pixel| {
            let mut best = 0;
            for (c, &s) in pixel.iter().enumerate().skip(1) {
                if s > pixel[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(map.height, map.width, labels).expect("score map dimensions are positive")
}

/// Fuses a set and labels the result in one step.
pub fn fuse_to_labels(set: &ScoreMapSet) -> Result<LabelMap> {
    if set.entries[0].1.class_count() > 255 {
        return Err(Error::ScoreMap(
            "more than 255 classes cannot be labelled".into(),
        ));
    }
    fuse_scales(set).map(|m| argmax_labels(&m))
}

pub fn encode_score_map(map: &ScoreMap, scale: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * map.scores.len());
    out.extend_from_slice(SCORE_MAP_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.class_count as u32).to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    for s in &map.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_score_map(bytes: &[u8]) -> Result<(f64, ScoreMap)> {
    const HEADER: usize = 8 + 4 * 3 + 8;
    if bytes.len() < HEADER || &bytes[..8] != SCORE_MAP_MAGIC {
        return Err(Error::ScoreMap("missing ISA2SMAP header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (height, width, class_count) = (u32_at(8), u32_at(12), u32_at(16));
    let scale = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(class_count))
        .ok_or_else(|| Error::ScoreMap("dimensions overflow".into()))?;
    let payload = &bytes[HEADER..];
    if payload.len() != count * 4 {
        return Err(Error::ScoreMap(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    let scores = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((scale, ScoreMap::new(height, width, class_count, scores)?))
}

pub fn write_score_map(path: &Path, map: &ScoreMap, scale: f64) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_score_map(map, scale)).map_err(|e| Error::io(path, e))
}

pub fn read_score_map(path: &Path) -> Result<(f64, ScoreMap)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_score_map(&bytes)
}

/// Directory holding one frame's score maps, one `.smap` file per scale.
pub fn frame_score_dir(root: &Path, frame_id: &str) -> PathBuf {
    root.join(frame_id)
}

pub fn write_score_map_set(dir: &Path, set: &ScoreMapSet) -> Result<()> {
    for (i, (scale, map)) in set.entries.iter().enumerate() {
        write_score_map(
            &dir.join(format!("scale{i}.{SCORE_MAP_EXTENSION}")),
            map,
            *scale,
        )?;
    }
    Ok(())
}

pub fn read_score_map_set(dir: &Path) -> Result<ScoreMapSet> {
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for item in listing {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SCORE_MAP_EXTENSION) {
            entries.push(read_score_map(&path)?);
        }
    }
    ScoreMapSet::from_unordered(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, c: usize, scores: &[f32]) -> ScoreMap {
        ScoreMap::new(h, w, c, scores.to_vec()).unwrap()
    }

    #[test]
    fn upsample_constant_and_identity() {
        let one = map(1, 1, 1, &[0.7]);
        let up = upsample_nearest(&one, 2, 2).unwrap();
        assert_eq!(up.scores(), &[0.7; 4]);

        let m = map(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(upsample_nearest(&m, 2, 2).unwrap(), m);
    }

    #[test]
    fn upsample_two_to_four_gives_blocks() {
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        let m = map(2, 2, 1, &[a, b, c, d]);
        let up = upsample_nearest(&m, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            a, a, b, b,
            a, a, b, b,
            c, c, d, d,
            c, c, d, d,
        ];
        assert_eq!(up.scores(), &expected);
    }

    #[test]
    fn upsample_rejects_shrinking() {
        let m = map(2, 2, 1, &[0.0; 4]);
        assert!(upsample_nearest(&m, 1, 2).is_err());
    }

    #[test]
    fn fuse_takes_per_class_max() {
        let a = map(1, 1, 2, &[0.2, 0.9]);
        let b = map(1, 1, 2, &[0.5, 0.1]);
        let fused = fuse_maps([&a, &b], 1, 1).unwrap();
        assert_eq!(fused.scores(), &[0.5, 0.9]);
    }

    #[test]
    fn single_full_scale_entry_is_identity() {
        let m = map(
            2,
            3,
            2,
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
        );
        let set = ScoreMapSet::new(vec![(1.0, m.clone())], 2, 3).unwrap();
        assert_eq!(fuse_scales(&set).unwrap(), m);
    }

    #[test]
    fn half_scale_maximum_dominates_its_footprint() {
        // 0.5-scale map holds the global maximum of class 3 at (1, 0); that
        // cell covers the 2x2 block starting at (2, 0) in the 4x4 reference.
        let c = 4;
        let mut low = vec![0.0f32; 2 * 2 * c];
        low[(2) * c + 3] = 9.0;
        let small = map(2, 2, c, &low);
        let full: Vec<f32> = (0..16 * c).map(|i| (i % 7) as f32 * 0.1).collect();
        let big = map(4, 4, c, &full);
        let set = ScoreMapSet::new(vec![(0.5, small), (1.0, big)], 4, 4).unwrap();
        let fused = fuse_scales(&set).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let lands = y * 2 / 4 == 1 && x * 2 / 4 == 0;
                assert_eq!(fused.get(y, x, 3) >= 9.0, lands, "pixel ({y},{x})");
            }
        }
    }

    #[test]
    fn set_invariants_enforced() {
        let m8 = map(8, 8, 2, &[0.0; 128]);
        let m4 = map(4, 4, 2, &[0.0; 32]);
        let m6 = map(6, 6, 2, &[0.0; 72]);
        assert!(ScoreMapSet::new(
            vec![(0.5, m4.clone()), (0.75, m6.clone()), (1.0, m8.clone())],
            8,
            8
        )
        .is_ok());
        // not increasing
        assert!(ScoreMapSet::new(
            vec![(0.75, m6.clone()), (0.5, m4.clone()), (1.0, m8.clone())],
            8,
            8
        )
        .is_err());
        // last not 1.0
        assert!(ScoreMapSet::new(vec![(0.5, m4.clone()), (0.75, m6.clone())], 8, 8).is_err());
        // wrong size for scale
        assert!(ScoreMapSet::new(vec![(0.5, m6.clone()), (1.0, m8.clone())], 8, 8).is_err());
        // class count mismatch
        let odd = map(4, 4, 1, &[0.0; 16]);
        assert!(ScoreMapSet::new(vec![(0.5, odd), (1.0, m8)], 8, 8).is_err());
        assert!(ScoreMapSet::new(vec![], 8, 8).is_err());
    }

    #[test]
    fn scaled_dims_round_half_up() {
        assert_eq!(scaled_dim(0.5, 16), 8);
        assert_eq!(scaled_dim(0.75, 16), 12);
        assert_eq!(scaled_dim(0.5, 5), 3);
        assert_eq!(scaled_dim(0.75, 6), 5);
    }

    #[test]
    fn argmax_unique_and_tie() {
        let m = map(1, 2, 3, &[0.1, 0.9, 0.3, 0.5, 0.5, 0.1]);
        assert_eq!(argmax_labels(&m).labels(), &[1, 0]);
    }

    #[test]
    fn score_map_file_round_trip() {
        let m = map(2, 1, 2, &[0.25, -1.5, 3.0, f32::MIN_POSITIVE]);
        let bytes = encode_score_map(&m, 0.75);
        assert_eq!(&bytes[..8], b"ISA2SMAP");
        assert_eq!(bytes.len(), 28 + 16);
        let (scale, back) = decode_score_map(&bytes).unwrap();
        assert_eq!(scale, 0.75);
        assert_eq!(back, m);
        assert!(decode_score_map(&bytes[..bytes.len() - 1]).is_err());
    }

    fn arb_map(h: usize, w: usize, c: usize) -> impl Strategy<Value = ScoreMap> {
        prop::collection::vec(-4.0f32..4.0, h * w * c)
            .prop_map(move |s| ScoreMap::new(h, w, c, s).unwrap())
    }

    proptest! {
        #[test]
        fn fusion_is_order_independent_and_monotone(
            a in arb_map(3, 3, 3), b in arb_map(6, 6, 3), c in arb_map(5, 5, 3)
        ) {
            let forward = fuse_maps([&a, &b, &c], 6, 6).unwrap();
            let backward = fuse_maps([&c, &a, &b], 6, 6).unwrap();
            prop_assert_eq!(&forward, &backward);
            for m in [&a, &b, &c] {
                let up = upsample_nearest(m, 6, 6).unwrap();
                prop_assert!(forward.scores().iter().zip(up.scores()).all(|(f, u)| f >= u));
            }
            let set = ScoreMapSet::new(vec![(1.0, forward.clone())], 6, 6).unwrap();
            prop_assert_eq!(fuse_scales(&set).unwrap(), forward);
        }

        #[test]
        fn argmax_ignores_positive_scaling(
            m in prop::collection::vec(-32i32..32, 4 * 4 * 5)
                .prop_map(|v| ScoreMap::new(4, 4, 5, v.into_iter().map(|s| s as f32 / 8.0).collect()).unwrap()),
            lambda in 0.01f32..100.0,
        ) {
            let scaled = m.map_scores(|s| s * lambda).unwrap();
            prop_assert_eq!(argmax_labels(&scaled), argmax_labels(&m));
        }
    }
}
