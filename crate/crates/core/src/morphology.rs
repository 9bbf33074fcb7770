//! Binary morphology and connected-component labeling.
//!
//! Pixels outside the image are background for both dilation and erosion, so
//! erosion eats into objects that touch the border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boolean raster, `true` = crack.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "binary image {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Parses rows of `#` (crack) and `.` (background).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), width, "ragged ascii image");
                r.bytes().map(|b| b == b'#')
            })
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    /// Like [`BinaryImage::get`], with out-of-range coordinates reading as background.
    pub fn get_or_false(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.data[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Iterator over `(row, col)` of crack pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn same_size(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Odd-sized boolean neighbourhood anchored at its centre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(3).expect("3 is odd")
    }
}

impl StructuringElement {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "structuring element must have odd extents, got {width}x{height}"
            )));
        }
        if mask.len() != width * height {
            return Err(Error::Shape("structuring element mask length mismatch".into()));
        }
        if !mask[(height / 2) * width + width / 2] {
            return Err(Error::Config("structuring element centre must be set".into()));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, vec![true; size * size])
    }

    /// Offsets `(dy, dx)` of the active cells relative to the centre.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (cy, cx) = ((self.height / 2) as isize, (self.width / 2) as isize);
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .filter(|&(y, x)| self.mask[y * self.width + x])
            .map(|(y, x)| (y as isize - cy, x as isize - cx))
            .collect()
    }
}

/// True where any pixel under the (reflected) element is set.
pub fn dilate(f: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    let offsets = se.offsets();
    let mut out = BinaryImage::new(f.width, f.height);
    for (r, c) in f.pixels() {
        for &(dy, dx) in &offsets {
            let (y, x) = (r as isize + dy, c as isize + dx);
            if y >= 0 && x >= 0 && (y as usize) < f.height && (x as usize) < f.width {
                out.data[y as usize * f.width + x as usize] = true;
            }
        }
    }
    out
}

/// True where every pixel under the element is set; outside counts as unset.
pub fn erode(f: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    let offsets = se.offsets();
    let mut out = BinaryImage::new(f.width, f.height);
    for (r, c) in f.pixels() {
        let keep = offsets
            .iter()
            .all(|&(dy, dx)| f.get_or_false(r as isize + dy, c as isize + dx));
        if keep {
            out.set(r, c, true);
        }
    }
    out
}

/// Dilation followed by erosion; fills holes smaller than the element.
pub fn closing(f: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    erode(&dilate(f, se), se)
}

/// Erosion followed by dilation; removes specks smaller than the element.
pub fn opening(f: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    dilate(&erode(f, se), se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Config(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }

    /// Neighbours already visited in a raster scan.
    fn causal_neighbors(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.max_col - self.min_col + 1
    }

    pub fn height(&self) -> usize {
        self.max_row - self.min_row + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub id: u32,
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Per-pixel component ids: 0 is background, components are `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    stats: Vec<ComponentStats>,
}

impl LabelImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.stats.len()
    }

    /// Stats indexed by `id - 1`.
    pub fn stats(&self) -> &[ComponentStats] {
        &self.stats
    }

    /// Mask of a single component.
    pub fn component_mask(&self, id: u32) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == id).collect(),
        }
    }

    pub fn to_binary(&self) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Slot 0 stands for background and is never merged.
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Links the larger root under the smaller so roots stay first-touch minimal.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling. Ids follow raster-scan first-touch order.
pub fn label_components(f: &BinaryImage, connectivity: Connectivity) -> LabelImage {
    let (w, h) = (f.width, f.height);
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::new();
    for r in 0..h {
        for c in 0..w {
            if !f.data[r * w + c] {
                continue;
            }
            let mut label = 0u32;
            for &(dy, dx) in connectivity.causal_neighbors() {
                let (y, x) = (r as isize + dy, c as isize + dx);
                if y < 0 || x < 0 || x as usize >= w {
                    continue;
                }
                let n = provisional[y as usize * w + x as usize];
                if n == 0 {
                    continue;
                }
                label = if label == 0 { n } else { sets.union(label, n) };
            }
            provisional[r * w + c] = if label == 0 { sets.make() } else { label };
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut stats: Vec<ComponentStats> = Vec::new();
    let mut labels = vec![0u32; w * h];
    for r in 0..h {
        for c in 0..w {
            let p = provisional[r * w + c];
            if p == 0 {
                continue;
            }
            let root = sets.find(p) as usize;
            if final_id[root] == 0 {
                stats.push(ComponentStats {
                    id: stats.len() as u32 + 1,
                    area: 0,
                    bbox: BoundingBox {
                        min_row: r,
                        min_col: c,
                        max_row: r,
                        max_col: c,
                    },
                });
                final_id[root] = stats.len() as u32;
            }
            let id = final_id[root];
            labels[r * w + c] = id;
            let s = &mut stats[id as usize - 1];
            s.area += 1;
            s.bbox.min_row = s.bbox.min_row.min(r);
            s.bbox.min_col = s.bbox.min_col.min(c);
            s.bbox.max_row = s.bbox.max_row.max(r);
            s.bbox.max_col = s.bbox.max_col.max(c);
        }
    }
    LabelImage {
        width: w,
        height: h,
        labels,
        stats,
    }
}

/// Drops components with `area < min_area`.
pub fn remove_small_components(labels: &LabelImage, min_area: usize) -> BinaryImage {
    let keep: Vec<bool> = std::iter::once(false)
        .chain(labels.stats.iter().map(|s| s.area >= min_area))
        .collect();
    BinaryImage {
        width: labels.width,
        height: labels.height,
        data: labels.labels.iter().map(|&l| keep[l as usize]).collect(),
    }
}

/// Order in which the two morphological filters run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    CloseThenOpen,
    OpenThenClose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub order: FilterOrder,
    pub se_size: usize,
    pub connectivity: Connectivity,
    pub min_area: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            order: FilterOrder::CloseThenOpen,
            se_size: 3,
            connectivity: Connectivity::Eight,
            min_area: 16,
        }
    }
}

/// Hole filling, noise removal, labeling and small-component removal.
pub fn refine(f: &BinaryImage, config: &RefineConfig) -> Result<(BinaryImage, LabelImage)> {
    let se = StructuringElement::square(config.se_size)?;
    let filtered = match config.order {
        FilterOrder::CloseThenOpen => opening(&closing(f, &se), &se),
        FilterOrder::OpenThenClose => closing(&opening(f, &se), &se),
    };
    let labels = label_components(&filtered, config.connectivity);
    let kept = remove_small_components(&labels, config.min_area);
    let relabeled = label_components(&kept, config.connectivity);
    Ok((kept, relabeled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_single_pixel() {
        let mut f = BinaryImage::new(5, 5);
        f.set(2, 2, true);
        let d = dilate(&f, &StructuringElement::default());
        assert_eq!(d.count(), 9);
        assert!(d.get(1, 1) && d.get(3, 3) && !d.get(0, 0));
    }

    #[test]
    fn erode_full_image_keeps_centre() {
        let f = BinaryImage::from_ascii(&["###", "###", "###"]);
        let e = erode(&f, &StructuringElement::default());
        assert_eq!(e, BinaryImage::from_ascii(&["...", ".#.", "..."]));
    }

    #[test]
    fn even_element_rejected() {
        assert!(matches!(
            StructuringElement::square(2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn closing_fills_hole() {
        let f = BinaryImage::from_ascii(&[
            ".......", ".#####.", ".#####.", ".##.##.", ".#####.", ".#####.", ".......",
        ]);
        let c = closing(&f, &StructuringElement::default());
        assert!(c.get(3, 3));
        let empty = BinaryImage::new(6, 4);
        assert_eq!(closing(&empty, &StructuringElement::default()), empty);
    }

    #[test]
    fn opening_removes_speck_and_keeps_block() {
        let mut f = BinaryImage::new(9, 9);
        f.set(4, 4, true);
        assert_eq!(opening(&f, &StructuringElement::default()).count(), 0);

        let mut block = BinaryImage::new(14, 14);
        for r in 2..12 {
            for c in 2..12 {
                block.set(r, c, true);
            }
        }
        assert_eq!(opening(&block, &StructuringElement::default()), block);
    }

    #[test]
    fn diagonal_connectivity() {
        let f = BinaryImage::from_ascii(&["#.", ".#"]);
        assert_eq!(label_components(&f, Connectivity::Eight).count(), 1);
        assert_eq!(label_components(&f, Connectivity::Four).count(), 2);
        assert_eq!(label_components(&BinaryImage::new(4, 4), Connectivity::Eight).count(), 0);
    }

    #[test]
    fn first_touch_ids_and_stats() {
        let f = BinaryImage::from_ascii(&[
            "..#...#", //
            "..#..##", //
            "#.....#", //
            "#......",
        ]);
        let l = label_components(&f, Connectivity::Eight);
        assert_eq!(l.count(), 3);
        assert_eq!(l.get(0, 2), 1);
        assert_eq!(l.get(0, 6), 2);
        assert_eq!(l.get(2, 0), 3);
        assert_eq!(l.stats()[1].area, 4);
        assert_eq!(
            l.stats()[1].bbox,
            BoundingBox {
                min_row: 0,
                min_col: 5,
                max_row: 2,
                max_col: 6
            }
        );
    }

    #[test]
    fn u_shape_merges() {
        // Two arms that only join at the bottom row must share one id.
        let f = BinaryImage::from_ascii(&["#...#", "#...#", "#####"]);
        let l = label_components(&f, Connectivity::Four);
        assert_eq!(l.count(), 1);
        assert!(l.labels().iter().all(|&v| v <= 1));
    }

    #[test]
    fn small_component_removal() {
        let f = BinaryImage::from_ascii(&["#....", "...##", "...##"]);
        let l = label_components(&f, Connectivity::Eight);
        assert_eq!(remove_small_components(&l, 0), f);
        let kept = remove_small_components(&l, 2);
        assert!(!kept.get(0, 0));
        let surviving: usize = l.stats().iter().filter(|s| s.area >= 2).map(|s| s.area).sum();
        assert_eq!(kept.count(), surviving);
    }

    #[test]
    fn refine_pipeline_drops_noise() {
        let mut f = BinaryImage::new(40, 20);
        for c in 2..38 {
            for r in 8..12 {
                f.set(r, c, true);
            }
        }
        f.set(9, 20, false);
        f.set(2, 2, true);
        let (kept, labels) = refine(&f, &RefineConfig::default()).unwrap();
        assert_eq!(labels.count(), 1);
        assert!(kept.get(9, 20));
        assert!(!kept.get(2, 2));
    }
}
