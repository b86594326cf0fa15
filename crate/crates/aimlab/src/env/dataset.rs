//! Image datasets: a built-in synthetic glyph set and an IDX file loader.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::{AimError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Immutable labeled image collection. Single channel, pixels in [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    height: usize,
    width: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

/// Seven-segment style digit glyphs. Segment order: top bar, top-right,
/// bottom-right, bottom bar, bottom-left, top-left, middle bar.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],    // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],   // 2
    [true, true, true, true, false, false, true],   // 3
    [false, true, true, false, false, true, true],  // 4
    [true, false, true, true, false, true, true],   // 5
    [true, false, true, true, true, true, true],    // 6
    [true, true, true, false, false, false, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

impl Dataset {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Deterministic 16x16 glyph set: `per_class` samples of each digit
    /// 0..=9, each with a seeded position jitter and additive pixel noise.
    pub fn synthetic(seed: u64, per_class: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16usize, 16usize);
        let mut images = Vec::with_capacity(per_class * 10);
        let mut labels = Vec::with_capacity(per_class * 10);
        for _ in 0..per_class {
            for digit in 0u8..10 {
                let dx = rng.random_range(-2i32..=2);
                let dy = rng.random_range(-1i32..=1);
                let mut img = render_glyph(digit, h, w, dx, dy);
                for px in img.iter_mut() {
                    *px = (*px + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
                }
                images.push(img);
                labels.push(digit);
            }
        }
        Self {
            height: h,
            width: w,
            images,
            labels,
        }
    }

    /// Reads IDX image and label files (big-endian magic and dimensions,
    /// unsigned-byte pixels scaled to [0,1]).
    pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let img_bytes = std::fs::read(images_path)
            .map_err(|e| AimError::io(images_path.display().to_string(), e))?;
        let lbl_bytes = std::fs::read(labels_path)
            .map_err(|e| AimError::io(labels_path.display().to_string(), e))?;
        let ipath = images_path.display().to_string();
        let lpath = labels_path.display().to_string();

        let mut ir = IdxReader::new(&img_bytes, &ipath);
        let magic = ir.u32()?;
        if magic != IDX_IMAGES_MAGIC {
            return Err(AimError::format(
                &ipath,
                format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
            ));
        }
        let count = ir.u32()? as usize;
        let height = ir.u32()? as usize;
        let width = ir.u32()? as usize;
        let pixels = ir.bytes(count * height * width)?;

        let mut lr = IdxReader::new(&lbl_bytes, &lpath);
        let magic = lr.u32()?;
        if magic != IDX_LABELS_MAGIC {
            return Err(AimError::format(
                &lpath,
                format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
            ));
        }
        let label_count = lr.u32()? as usize;
        if label_count != count {
            return Err(AimError::format(
                &lpath,
                format!("label count {label_count} does not match image count {count}"),
            ));
        }
        let labels = lr.bytes(count)?.to_vec();

        let images = pixels
            .chunks_exact(height * width)
            .map(|c| c.iter().map(|b| *b as f64 / 255.0).collect())
            .collect();
        Ok(Self {
            height,
            width,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }
}

fn render_glyph(digit: u8, h: usize, w: usize, dx: i32, dy: i32) -> Vec<f64> {
    // Glyph box before jitter: columns 4..=11, rows 2..=13, strokes 2 wide.
    let mut img = vec![0.0; h * w];
    let seg = SEGMENTS[digit as usize];
    let mut fill = |r0: i32, r1: i32, c0: i32, c1: i32| {
        for r in r0 + dy..=r1 + dy {
            for c in c0 + dx..=c1 + dx {
                if (0..h as i32).contains(&r) && (0..w as i32).contains(&c) {
                    img[r as usize * w + c as usize] = 1.0;
                }
            }
        }
    };
    if seg[0] {
        fill(2, 3, 4, 11); // top bar
    }
    if seg[1] {
        fill(2, 8, 10, 11); // top-right
    }
    if seg[2] {
        fill(7, 13, 10, 11); // bottom-right
    }
    if seg[3] {
        fill(12, 13, 4, 11); // bottom bar
    }
    if seg[4] {
        fill(7, 13, 4, 5); // bottom-left
    }
    if seg[5] {
        fill(2, 8, 4, 5); // top-left
    }
    if seg[6] {
        fill(7, 8, 4, 11); // middle bar
    }
    img
}

struct IdxReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> IdxReader<'a> {
    fn new(data: &'a [u8], path: &'a str) -> Self {
        Self { data, pos: 0, path }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(AimError::format(
                self.path,
                format!(
                    "truncated file: wanted {n} bytes at offset {}, have {}",
                    self.pos,
                    self.data.len() - self.pos
                ),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
