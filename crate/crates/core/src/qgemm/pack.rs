//! Panel-packed weights and the small-batch kernel.
//!
//! Weights keep their raw bytes, arranged in row panels. Inside a panel,
//! consecutive `k` are interleaved in pairs, so one step of the inner loop
//! reads `[a(r,2t), a(r,2t+1)]` for every row `r` of the panel; widened to
//! 16 bits, that is the operand layout of a multiply-add-pairs instruction.
//! The weight zero point is applied once per output through
//! `Σ (a − a0)(b − b0) = Σ a (b − b0) − a0 Σ (b − b0)`.

use super::{check_inner, GemmResult, QuantParams, QuantizedMatrix};
use crate::error::{invalid_input, Result};

/// Panel height (rows per register tile) and `k` block length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackLayout {
    pub panel_height: usize,
    pub k_block: usize,
}

impl Default for PackLayout {
    fn default() -> Self {
        Self { panel_height: 8, k_block: 64 }
    }
}

impl PackLayout {
    pub fn validate(&self) -> Result<()> {
        if ![4, 8, 16].contains(&self.panel_height) {
            return Err(invalid_input(format!("panel height must be 4, 8 or 16, got {}", self.panel_height)));
        }
        if self.k_block == 0 || !self.k_block.is_multiple_of(2) {
            return Err(invalid_input(format!("k block must be positive and even, got {}", self.k_block)));
        }
        Ok(())
    }
}

/// Immutable packed copy of an `m x k` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedWeights {
    rows: usize,
    cols: usize,
    params: QuantParams,
    layout: PackLayout,
    /// `ceil(k / 2)`
    pairs: usize,
    data: Vec<u8>,
}

impl PackedWeights {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> PackLayout {
        self.layout
    }

    pub fn panel_count(&self) -> usize {
        self.rows.div_ceil(self.layout.panel_height)
    }

    fn panel_len(&self) -> usize {
        self.pairs * 2 * self.layout.panel_height
    }

    /// Recovers the original matrix.
    pub fn unpack(&self) -> QuantizedMatrix {
        let p = self.layout.panel_height;
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            let base = (i / p) * self.panel_len() + 2 * (i % p);
            for k in 0..self.cols {
                data.push(self.data[base + (k / 2) * 2 * p + k % 2]);
            }
        }
        QuantizedMatrix::new(self.rows, self.cols, data, self.params).expect("shape preserved")
    }
}

pub fn pack_weights(a: &QuantizedMatrix) -> PackedWeights {
    pack_weights_with(a, PackLayout::default()).expect("default layout is valid")
}

pub fn pack_weights_with(a: &QuantizedMatrix, layout: PackLayout) -> Result<PackedWeights> {
    layout.validate()?;
    let (m, k) = (a.rows(), a.cols());
    let p = layout.panel_height;
    let pairs = k.div_ceil(2);
    let panels = m.div_ceil(p);
    let mut data = vec![0u8; panels * pairs * 2 * p];
    for (i, row) in a.data().chunks_exact(k).enumerate() {
        let base = (i / p) * pairs * 2 * p + 2 * (i % p);
        for (kk, &v) in row.iter().enumerate() {
            data[base + (kk / 2) * 2 * p + kk % 2] = v;
        }
    }
    Ok(PackedWeights { rows: m, cols: k, params: a.params(), layout, pairs, data })
}

/// Columns `c0..c0+N` of `b`, zero-point-corrected and pair-interleaved to
/// match the weight panels, plus the column sums of `b − b0`.
fn pack_rhs<const N: usize>(b: &QuantizedMatrix, c0: usize, pairs: usize) -> (Vec<i16>, [i32; 4]) {
    let (k, n) = (b.rows(), b.cols());
    let b0 = i16::from(b.zero_point());
    let mut out = vec![0i16; pairs * 2 * N];
    let mut sums = [0i32; 4];
    for kk in 0..k {
        for j in 0..N {
            let v = i16::from(b.data()[kk * n + c0 + j]) - b0;
            out[(kk / 2) * 2 * N + 2 * j + kk % 2] = v;
            sums[j] += i32::from(v);
        }
    }
    (out, sums)
}

#[inline(always)]
fn panel_tile<const P: usize, const N: usize>(pa: &[u8], pb: &[i16], k_block_pairs: usize) -> [[i32; P]; N] {
    let mut acc = [[0i32; P]; N];
    for (ablock, bblock) in pa.chunks(k_block_pairs * 2 * P).zip(pb.chunks(k_block_pairs * 2 * N)) {
        for (a, b) in ablock.chunks_exact(2 * P).zip(bblock.chunks_exact(2 * N)) {
            for j in 0..N {
                let b_lo = i32::from(b[2 * j]);
                let b_hi = i32::from(b[2 * j + 1]);
                for r in 0..P {
                    acc[j][r] += i32::from(a[2 * r]) * b_lo + i32::from(a[2 * r + 1]) * b_hi;
                }
            }
        }
    }
    acc
}

#[inline(always)]
fn run_panels<const P: usize, const N: usize>(w: &PackedWeights, pb: &[i16], bsum: &[i32; 4], out: &mut [i32], n: usize, c0: usize) {
    let kbp = w.layout.k_block / 2;
    let a0 = i32::from(w.params.zero_point());
    for (panel, pa) in w.data.chunks_exact(w.panel_len()).enumerate() {
        let acc = panel_tile::<P, N>(pa, pb, kbp);
        let first = panel * P;
        for r in 0..P.min(w.rows - first) {
            let row = &mut out[(first + r) * n + c0..][..N];
            for (j, o) in row.iter_mut().enumerate() {
                *o = acc[j][r] - a0 * bsum[j];
            }
        }
    }
}

type Kernel = fn(&PackedWeights, &[i16], &[i32; 4], &mut [i32], usize, usize);

macro_rules! kernel_table {
    ($attr:meta, $name:ident) => {
        mod $name {
            use super::*;

            #[$attr]
            unsafe fn body<const P: usize, const N: usize>(
                w: &PackedWeights,
                pb: &[i16],
                bsum: &[i32; 4],
                out: &mut [i32],
                n: usize,
                c0: usize,
            ) {
                run_panels::<P, N>(w, pb, bsum, out, n, c0)
            }

            pub(super) fn get(p: usize, nb: usize) -> Kernel {
                macro_rules! entry {
                    ($p:literal, $n:literal) => {
                        |w, pb, bsum, out, n, c0| unsafe { body::<$p, $n>(w, pb, bsum, out, n, c0) }
                    };
                }
                match (p, nb) {
                    (4, 1) => entry!(4, 1),
                    (4, 2) => entry!(4, 2),
                    (4, 3) => entry!(4, 3),
                    (4, 4) => entry!(4, 4),
                    (8, 1) => entry!(8, 1),
                    (8, 2) => entry!(8, 2),
                    (8, 3) => entry!(8, 3),
                    (8, 4) => entry!(8, 4),
                    (16, 1) => entry!(16, 1),
                    (16, 2) => entry!(16, 2),
                    (16, 3) => entry!(16, 3),
                    (16, 4) => entry!(16, 4),
                    _ => unreachable!("layout validated at pack time"),
                }
            }
        }
    };
}

kernel_table!(inline, portable);
#[cfg(target_arch = "x86_64")]
kernel_table!(target_feature(enable = "avx2"), avx2);

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::PackedWeights;
    use std::arch::x86_64::*;

    /// Panel height 8: one 256-bit register holds a k-pair for all 8 rows.
    #[target_feature(enable = "avx2")]
    unsafe fn body<const N: usize>(w: &PackedWeights, pb: &[i16], bsum: &[i32; 4], out: &mut [i32], n: usize, c0: usize) {
        let pairs = w.pairs;
        let bpairs: Vec<i32> =
            pb.chunks_exact(2).map(|p| i32::from(p[0] as u16) | (i32::from(p[1] as u16) << 16)).collect();
        let a0 = i32::from(w.params.zero_point());
        for (panel, pa) in w.data.chunks_exact(pairs * 16).enumerate() {
            let mut acc = [_mm256_setzero_si256(); N];
            for t in 0..pairs {
                // SAFETY: pa holds `pairs * 16` bytes, so [16t, 16t + 16) is in bounds.
                let bytes = _mm_loadu_si128(pa.as_ptr().add(16 * t) as *const __m128i);
                let a = _mm256_cvtepu8_epi16(bytes);
                for (j, acc) in acc.iter_mut().enumerate() {
                    let b = _mm256_set1_epi32(bpairs[t * N + j]);
                    *acc = _mm256_add_epi32(*acc, _mm256_madd_epi16(a, b));
                }
            }
            let first = panel * 8;
            for (j, acc) in acc.iter().enumerate() {
                let mut lanes = [0i32; 8];
                _mm256_storeu_si256(lanes.as_mut_ptr() as *mut __m256i, *acc);
                for r in 0..8.min(w.rows - first) {
                    out[(first + r) * n + c0 + j] = lanes[r] - a0 * bsum[j];
                }
            }
        }
    }

    pub(super) fn get(nb: usize) -> super::Kernel {
        match nb {
            1 => |w, pb, s, o, n, c| unsafe { body::<1>(w, pb, s, o, n, c) },
            2 => |w, pb, s, o, n, c| unsafe { body::<2>(w, pb, s, o, n, c) },
            3 => |w, pb, s, o, n, c| unsafe { body::<3>(w, pb, s, o, n, c) },
            _ => |w, pb, s, o, n, c| unsafe { body::<4>(w, pb, s, o, n, c) },
        }
    }
}

fn select(p: usize, nb: usize) -> Kernel {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        return if p == 8 { x86::get(nb) } else { avx2::get(p, nb) };
    }
    portable::get(p, nb)
}

/// Packed small-batch GEMM. Bit-identical to [`super::gemm_ref`]. Inputs with
/// more than 4 columns are processed 4 columns at a time.
pub fn gemm_opt(a: &PackedWeights, b: &QuantizedMatrix) -> Result<GemmResult> {
    let (m, k, n) = (a.rows, a.cols, b.cols());
    check_inner(m, k, b.rows())?;
    let p = a.layout.panel_height;
    let mut out = vec![0i32; m * n];
    let mut c0 = 0;
    while c0 < n {
        let nb = (n - c0).min(4);
        let (pb, bsum) = match nb {
            1 => pack_rhs::<1>(b, c0, a.pairs),
            2 => pack_rhs::<2>(b, c0, a.pairs),
            3 => pack_rhs::<3>(b, c0, a.pairs),
            _ => pack_rhs::<4>(b, c0, a.pairs),
        };
        select(p, nb)(a, &pb, &bsum, &mut out, n, c0);
        c0 += nb;
    }
    Ok(GemmResult { rows: m, cols: n, data: out })
}
