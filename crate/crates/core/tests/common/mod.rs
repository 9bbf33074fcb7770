//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use crackmap::morphology::BinaryImage;
use rand::Rng;

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize, density: f64) -> BinaryImage {
    let data = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    BinaryImage::from_vec(w, h, data).unwrap()
}

/// Union of random filled rectangles, disks and thick strokes.
pub fn random_blobs<R: Rng>(rng: &mut R, w: usize, h: usize) -> BinaryImage {
    let mut img = BinaryImage::new(w, h);
    for _ in 0..rng.gen_range(1..5) {
        let (cr, cc) = (rng.gen_range(0..h) as isize, rng.gen_range(0..w) as isize);
        match rng.gen_range(0..3) {
            0 => {
                let (hh, hw) = (rng.gen_range(0..6isize), rng.gen_range(0..9isize));
                fill(&mut img, |r, c| (r - cr).abs() <= hh && (c - cc).abs() <= hw);
            }
            1 => {
                let rad = rng.gen_range(1..7isize);
                fill(&mut img, |r, c| (r - cr).pow(2) + (c - cc).pow(2) <= rad * rad);
            }
            _ => {
                let (dr, dc): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let len = rng.gen_range(5..25);
                let half = rng.gen_range(0.5..2.5);
                for t in 0..len {
                    let (pr, pc) = (cr as f64 + dr * t as f64, cc as f64 + dc * t as f64);
                    fill(&mut img, |r, c| {
                        (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2) <= half * half
                    });
                }
            }
        }
    }
    img
}

fn fill(img: &mut BinaryImage, inside: impl Fn(isize, isize) -> bool) {
    for r in 0..img.height() {
        for c in 0..img.width() {
            if inside(r as isize, c as isize) {
                img.set(r, c, true);
            }
        }
    }
}

/// 3x3 window scan; out-of-range positions read as false.
pub fn dilate_oracle(f: &BinaryImage) -> BinaryImage {
    let mut out = BinaryImage::new(f.width(), f.height());
    for r in 0..f.height() {
        for c in 0..f.width() {
            let mut any = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    any |= f.get_or_false(r as isize + dy, c as isize + dx);
                }
            }
            out.set(r, c, any);
        }
    }
    out
}

pub fn erode_oracle(f: &BinaryImage) -> BinaryImage {
    let mut out = BinaryImage::new(f.width(), f.height());
    for r in 0..f.height() {
        for c in 0..f.width() {
            let mut all = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    all &= f.get_or_false(r as isize + dy, c as isize + dx);
                }
            }
            out.set(r, c, all);
        }
    }
    out
}

pub fn subset(a: &BinaryImage, b: &BinaryImage) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| !x || y)
}

/// BFS labeling; ids in order of first discovery.
pub fn flood_fill_oracle(f: &BinaryImage, eight: bool) -> (Vec<u32>, usize) {
    let (w, h) = (f.width() as isize, f.height() as isize);
    let mut labels = vec![0u32; f.len()];
    let mut next = 0u32;
    let nbrs: Vec<(isize, isize)> = (-1..=1)
        .flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| (dy, dx) != (0, 0) && (eight || dy == 0 || dx == 0))
        .collect();
    for start in 0..f.len() {
        if !f.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p as isize) / w, (p as isize) % w);
            for &(dy, dx) in &nbrs {
                let (y, x) = (r + dy, c + dx);
                if y < 0 || x < 0 || y >= h || x >= w {
                    continue;
                }
                let q = (y * w + x) as usize;
                if f.data()[q] && labels[q] == 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    (labels, next as usize)
}

/// True when two labelings induce the same partition (ids may differ).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    let mut ab: HashMap<u32, u32> = HashMap::new();
    let mut ba: HashMap<u32, u32> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        (x == 0) == (y == 0) && *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x
    })
}

/// Nearest-background distance by exhaustive search. The ring of pixels just
/// outside the image counts as background.
pub fn edt_oracle(f: &BinaryImage) -> Vec<f64> {
    let (w, h) = (f.width() as isize, f.height() as isize);
    let mut background = Vec::new();
    for r in -1..=h {
        for c in -1..=w {
            if !f.get_or_false(r, c) {
                background.push((r, c));
            }
        }
    }
    (0..f.len())
        .map(|i| {
            if !f.data()[i] {
                return 0.0;
            }
            let (r, c) = ((i as isize) / w, (i as isize) % w);
            let best = background
                .iter()
                .map(|&(y, x)| (y - r).pow(2) + (x - c).pow(2))
                .min()
                .expect("ring is never empty");
            (best as f64).sqrt()
        })
        .collect()
}

pub fn bar(w: usize, h: usize, top: usize, left: usize, len: usize, thick: usize) -> BinaryImage {
    let mut f = BinaryImage::new(w, h);
    for r in top..top + thick {
        for c in left..left + len {
            f.set(r, c, true);
        }
    }
    f
}
