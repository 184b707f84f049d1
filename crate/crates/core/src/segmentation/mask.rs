//! Bit-packed binary mask grid with the morphological operators the
//! refinement workflow needs.
//!
//! Rows are stored as `u64` blocks. Padding bits past `width` in the last
//! block of each row are kept at zero. Dilation treats out-of-image
//! neighbors as background; erosion treats them as foreground, which makes
//! closing extensive even for masks touching the image border.

/// Binary pixel-membership grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskGrid {
    width: u32,
    height: u32,
    blocks_per_row: usize,
    blocks: Vec<u64>,
}

impl MaskGrid {
    pub fn new(width: u32, height: u32) -> Self {
        let blocks_per_row = (width as usize).div_ceil(64);
        Self {
            width,
            height,
            blocks_per_row,
            blocks: vec![0; blocks_per_row * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn same_dims(&self, other: &MaskGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> (usize, u64) {
        let block = y as usize * self.blocks_per_row + (x / 64) as usize;
        (block, 1u64 << (x % 64))
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let (block, bit) = self.index(x, y);
        self.blocks[block] & bit != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        let (block, bit) = self.index(x, y);
        self.blocks[block] |= bit;
    }

    #[inline]
    pub fn clear(&mut self, x: u32, y: u32) {
        let (block, bit) = self.index(x, y);
        self.blocks[block] &= !bit;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    /// Mean of set pixel coordinates, `None` for an empty mask.
    pub fn barycenter(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let mut sx = 0u64;
        let mut sy = 0u64;
        for (x, y) in self.iter_pixels() {
            n += 1;
            sx += x as u64;
            sy += y as u64;
        }
        if n == 0 {
            return None;
        }
        Some((sx as f64 / n as f64, sy as f64 / n as f64))
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.blocks_per_row).flat_map(move |bi| {
                let mut block = self.blocks[y as usize * self.blocks_per_row + bi];
                std::iter::from_fn(move || {
                    if block == 0 {
                        return None;
                    }
                    let tz = block.trailing_zeros();
                    block &= block - 1;
                    Some(((bi * 64) as u32 + tz, y))
                })
            })
        })
    }

    pub fn intersection_area(&self, other: &MaskGrid) -> usize {
        debug_assert!(self.same_dims(other));
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_area(&self, other: &MaskGrid) -> usize {
        debug_assert!(self.same_dims(other));
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn symmetric_difference_area(&self, other: &MaskGrid) -> usize {
        debug_assert!(self.same_dims(other));
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn intersects(&self, other: &MaskGrid) -> bool {
        self.blocks.iter().zip(&other.blocks).any(|(a, b)| a & b != 0)
    }

    pub fn intersection(&self, other: &MaskGrid) -> MaskGrid {
        debug_assert!(self.same_dims(other));
        let mut out = self.clone();
        for (a, b) in out.blocks.iter_mut().zip(&other.blocks) {
            *a &= b;
        }
        out
    }

    pub fn union_with(&mut self, other: &MaskGrid) {
        debug_assert!(self.same_dims(other));
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &MaskGrid) {
        debug_assert!(self.same_dims(other));
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a &= !b;
        }
    }

    /// Pixels of `self` outside `other`.
    pub fn subtract_count(&self, other: &MaskGrid) -> usize {
        debug_assert!(self.same_dims(other));
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & !b).count_ones() as usize)
            .sum()
    }

    /// Mask of the bits past `width` in the last block of a row.
    fn tail_mask(&self) -> u64 {
        let rem = self.width % 64;
        if rem == 0 {
            !0u64
        } else {
            (1u64 << rem) - 1
        }
    }

    fn zero_padding(&mut self) {
        let tail = self.tail_mask();
        for y in 0..self.height as usize {
            self.blocks[y * self.blocks_per_row + self.blocks_per_row - 1] &= tail;
        }
    }

    /// Horizontal 3-neighborhood OR of one row.
    fn row_or3(&self, y: u32, out: &mut [u64]) {
        let row = &self.blocks[y as usize * self.blocks_per_row..][..self.blocks_per_row];
        for b in 0..self.blocks_per_row {
            let left = (row[b] << 1) | if b > 0 { row[b - 1] >> 63 } else { 0 };
            let right = (row[b] >> 1) | if b + 1 < self.blocks_per_row { row[b + 1] << 63 } else { 0 };
            out[b] = left | row[b] | right;
        }
    }

    /// Horizontal 3-neighborhood AND of one row, out-of-image bits counted as set.
    fn row_and3(&self, y: u32, out: &mut [u64]) {
        let row = &self.blocks[y as usize * self.blocks_per_row..][..self.blocks_per_row];
        let tail = self.tail_mask();
        for b in 0..self.blocks_per_row {
            // Padding bits read as ones so the right-shift carries a valid value.
            let padded = if b == self.blocks_per_row - 1 {
                row[b] | !tail
            } else {
                row[b]
            };
            let left = (row[b] << 1) | if b > 0 { row[b - 1] >> 63 } else { 1 };
            let right = (padded >> 1)
                | if b + 1 < self.blocks_per_row {
                    row[b + 1] << 63
                } else {
                    1u64 << 63
                };
            out[b] = left & row[b] & right;
        }
    }

    /// 3x3 dilation (one iteration).
    pub fn dilate3(&self) -> MaskGrid {
        let bpr = self.blocks_per_row;
        let mut rows = vec![0u64; bpr * self.height as usize];
        for y in 0..self.height {
            self.row_or3(y, &mut rows[y as usize * bpr..(y as usize + 1) * bpr]);
        }
        let mut out = MaskGrid::new(self.width, self.height);
        for y in 0..self.height as usize {
            for b in 0..bpr {
                let mut v = rows[y * bpr + b];
                if y > 0 {
                    v |= rows[(y - 1) * bpr + b];
                }
                if y + 1 < self.height as usize {
                    v |= rows[(y + 1) * bpr + b];
                }
                out.blocks[y * bpr + b] = v;
            }
        }
        out.zero_padding();
        out
    }

    /// 3x3 erosion (one iteration), image border treated as foreground.
    pub fn erode3(&self) -> MaskGrid {
        let bpr = self.blocks_per_row;
        let mut rows = vec![0u64; bpr * self.height as usize];
        for y in 0..self.height {
            self.row_and3(y, &mut rows[y as usize * bpr..(y as usize + 1) * bpr]);
        }
        let mut out = MaskGrid::new(self.width, self.height);
        for y in 0..self.height as usize {
            for b in 0..bpr {
                let mut v = rows[y * bpr + b];
                if y > 0 {
                    v &= rows[(y - 1) * bpr + b];
                }
                if y + 1 < self.height as usize {
                    v &= rows[(y + 1) * bpr + b];
                }
                out.blocks[y * bpr + b] = v;
            }
        }
        out.zero_padding();
        out
    }

    /// 5x5 dilation, decomposed into two 3x3 passes.
    pub fn dilate5(&self) -> MaskGrid {
        self.dilate3().dilate3()
    }

    /// Morphological closing with a 3x3 kernel, one iteration. Never removes
    /// pixels of the input.
    pub fn close3(&self) -> MaskGrid {
        self.dilate3().erode3()
    }
}
