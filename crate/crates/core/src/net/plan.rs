//! Index and interpolation tables that depend only on the model geometry.

use std::sync::Arc;

use ndarray::Array2;

use super::config::{ModelConfig, UPSAMPLE};
use crate::mapspace::GridSpec;
use crate::tape::{GatherMap, SparseMap, GATHER_ZERO};

/// `im2col` for a `k x k` convolution over `images` stacked along columns.
/// Input is `(channels, images * h * w)`, output `(channels * k * k,
/// images * ho * wo)` with rows ordered `(channel, ky, kx)`.
pub fn im2col(
    channels: usize,
    images: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> GatherMap {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let cols = images * ho * wo;
    let mut index = Vec::with_capacity(channels * k * k * cols);
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                for img in 0..images {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let x = (ox * stride + kx) as isize - pad as isize;
                            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                index.push(GATHER_ZERO);
                            } else {
                                let flat =
                                    c * images * h * w + img * h * w + y as usize * w + x as usize;
                                index.push(flat as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    GatherMap {
        shape: (channels * k * k, cols),
        index,
    }
}

/// Rows `start..end` of a `(rows, cols)` matrix.
pub fn row_slice(shape: (usize, usize), start: usize, end: usize) -> GatherMap {
    let cols = shape.1;
    let index = (start..end)
        .flat_map(|r| (0..cols).map(move |c| (r * cols + c) as u32))
        .collect();
    GatherMap {
        shape: (end - start, cols),
        index,
    }
}

fn bilinear_taps(out_index: usize, factor: usize, n_in: usize) -> [(usize, f64); 2] {
    let x = ((out_index as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = x.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    let t = x - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

/// Bilinear upsampling of a `qr x qc` grid by `factor`, cropped to the top
/// `rows x cols` cells. Sample positions follow half-pixel centers with
/// edge clamping.
pub fn upsample_crop(qr: usize, qc: usize, factor: usize, rows: usize, cols: usize) -> SparseMap {
    assert!(qr * factor >= rows && qc * factor >= cols);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ty = bilinear_taps(i, factor, qr);
        for j in 0..cols {
            let tx = bilinear_taps(j, factor, qc);
            let mut col: Vec<(usize, f64)> = Vec::with_capacity(4);
            for &(yi, wy) in &ty {
                for &(xi, wx) in &tx {
                    let w = wy * wx;
                    if w == 0.0 {
                        continue;
                    }
                    let n = yi * qc + xi;
                    match col.iter_mut().find(|(m, _)| *m == n) {
                        Some(e) => e.1 += w,
                        None => col.push((n, w)),
                    }
                }
            }
            out.push(col);
        }
    }
    SparseMap {
        inputs: qr * qc,
        cols: out,
    }
}

/// Area-average pooling from the finest query grid (cells of `fine` map
/// cells) to a coarser one (cells of `coarse` map cells).
pub fn area_pool(
    fine_grid: (usize, usize),
    coarse_grid: (usize, usize),
    ratio: usize,
) -> SparseMap {
    let (fr, fc) = fine_grid;
    let (cr, cc) = coarse_grid;
    let mut members = vec![Vec::new(); cr * cc];
    for i in 0..fr {
        for j in 0..fc {
            members[(i / ratio) * cc + j / ratio].push(i * fc + j);
        }
    }
    SparseMap {
        inputs: fr * fc,
        cols: members
            .into_iter()
            .map(|m| {
                let w = 1.0 / m.len() as f64;
                m.into_iter().map(|n| (n, w)).collect()
            })
            .collect(),
    }
}

/// `y = x - x[anchor]` on a flattened `(1, rows * cols)` map.
pub fn anchor_shift(grid: &GridSpec) -> SparseMap {
    let a = grid.anchor_index();
    let cols = (0..grid.len()).map(|m| vec![(m, 1.0), (a, -1.0)]).collect();
    SparseMap {
        inputs: grid.len(),
        cols,
    }
}

#[derive(Debug)]
pub struct Plan {
    /// One per backbone stage.
    pub backbone_im2col: Vec<Arc<GatherMap>>,
    /// Finest query grid to each scale; `None` for the finest itself.
    pub query_pool: [Option<Arc<SparseMap>>; 3],
    pub upsample: [Arc<SparseMap>; 3],
    pub decoder_im2col: Arc<GatherMap>,
    pub anchor: Arc<SparseMap>,
}

impl Plan {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut backbone_im2col = Vec::new();
        let mut side = cfg.image_size;
        let mut channels = 3;
        for &w in &cfg.backbone_widths {
            backbone_im2col.push(Arc::new(im2col(channels, 3, side, side, 3, 2, 1)));
            side /= 2;
            channels = w;
        }
        let grids = cfg.query_grids();
        let query_pool = [
            None,
            Some(Arc::new(area_pool(
                grids[0],
                grids[1],
                UPSAMPLE[1] / UPSAMPLE[0],
            ))),
            Some(Arc::new(area_pool(
                grids[0],
                grids[2],
                UPSAMPLE[2] / UPSAMPLE[0],
            ))),
        ];
        let g = cfg.grid;
        let upsample = [0, 1, 2].map(|s| {
            Arc::new(upsample_crop(
                grids[s].0,
                grids[s].1,
                UPSAMPLE[s],
                g.rows,
                g.cols,
            ))
        });
        Self {
            backbone_im2col,
            query_pool,
            upsample,
            decoder_im2col: Arc::new(im2col(cfg.decoder_channels, 1, g.rows, g.cols, 3, 1, 1)),
            anchor: Arc::new(anchor_shift(&g)),
        }
    }
}

/// Mask-weighted mean of the masked history over each finest query cell;
/// 0 where a query cell has no valid map cell. Returns `(1, qr * qc)`.
pub fn pool_history(
    values: &Array2<f64>,
    mask: &Array2<bool>,
    query_grid: (usize, usize),
) -> Array2<f64> {
    let (qr, qc) = query_grid;
    let f = UPSAMPLE[0];
    let mut sum = vec![0.0; qr * qc];
    let mut count = vec![0usize; qr * qc];
    for ((r, c), &v) in values.indexed_iter() {
        if mask[(r, c)] {
            let q = (r / f) * qc + c / f;
            sum[q] += v;
            count[q] += 1;
        }
    }
    let pooled = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Array2::from_shape_vec((1, qr * qc), pooled).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Direct convolution oracle.
    fn conv_direct(
        x: &Array2<f64>,
        w: &Array2<f64>,
        ch: usize,
        h: usize,
        wd: usize,
        stride: usize,
    ) -> Array2<f64> {
        let out_ch = w.nrows();
        let ho = (h + 2 - 3) / stride + 1;
        let wo = (wd + 2 - 3) / stride + 1;
        let mut y = Array2::zeros((out_ch, ho * wo));
        for o in 0..out_ch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[(o, c * 9 + ky * 3 + kx)]
                                        * x[(c, iy as usize * wd + ix as usize)];
                                }
                            }
                        }
                    }
                    y[(o, oy * wo + ox)] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let (ch, h, w) = (2, 6, 6);
        let x = Array2::from_shape_fn((ch, h * w), |(c, i)| ((c * 31 + i * 7) % 11) as f64 - 5.0);
        let wt = Array2::from_shape_fn((3, ch * 9), |(o, k)| {
            ((o * 5 + k * 3) % 7) as f64 * 0.1 - 0.3
        });
        for stride in [1, 2] {
            let g = im2col(ch, 1, h, w, 3, stride, 1);
            let y = wt.dot(&g.apply(&x));
            let d = conv_direct(&x, &wt, ch, h, w, stride);
            assert_eq!(y.dim(), d.dim());
            assert!(y.iter().zip(d.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn im2col_keeps_images_separate() {
        // two images stacked along columns; a conv on the pair equals the
        // conv on each image alone
        let (h, w) = (4, 4);
        let a = Array2::from_shape_fn((1, h * w), |(_, i)| i as f64);
        let b = Array2::from_shape_fn((1, h * w), |(_, i)| 100.0 - i as f64);
        let both = ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).unwrap();
        let wt = Array2::from_shape_fn((1, 9), |(_, k)| k as f64 - 4.0);
        let y = wt.dot(&im2col(1, 2, h, w, 3, 2, 1).apply(&both));
        let ya = wt.dot(&im2col(1, 1, h, w, 3, 2, 1).apply(&a));
        let yb = wt.dot(&im2col(1, 1, h, w, 3, 2, 1).apply(&b));
        assert_eq!(y.slice(ndarray::s![.., 0..4]), ya);
        assert_eq!(y.slice(ndarray::s![.., 4..8]), yb);
    }

    #[test]
    fn upsample_preserves_constants_and_linear_interior() {
        let m = upsample_crop(2, 3, 4, 8, 10);
        for col in &m.cols {
            let s: f64 = col.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // a linear ramp in the input is reproduced between input centers
        let x = Array2::from_shape_fn((1, 6), |(_, n)| (n % 3) as f64);
        let y = m.apply(&x);
        // output col j maps to input coordinate (j + 0.5) / 4 - 0.5
        for j in 2..10 {
            let expect = ((j as f64 + 0.5) / 4.0 - 0.5).clamp(0.0, 2.0);
            assert!((y[(0, j)] - expect).abs() < 1e-12, "col {j}");
        }
    }

    #[test]
    fn area_pool_averages_blocks() {
        let p = area_pool((3, 3), (2, 2), 2);
        let x = Array2::from_shape_fn((1, 9), |(_, n)| n as f64);
        let y = p.apply(&x);
        assert_eq!(
            y,
            array![[
                (0.0 + 1.0 + 3.0 + 4.0) / 4.0,
                (2.0 + 5.0) / 2.0,
                (6.0 + 7.0) / 2.0,
                8.0
            ]]
        );
    }

    #[test]
    fn anchor_shift_zeroes_anchor_exactly() {
        let g = GridSpec::new(4, 6, 1.0).unwrap();
        let x = Array2::from_shape_fn((1, 24), |(_, n)| (n as f64 * 0.37).sin() * 1e3);
        let y = anchor_shift(&g).apply(&x);
        assert_eq!(y[(0, g.anchor_index())], 0.0);
        assert_eq!(y[(0, 0)], x[(0, 0)] - x[(0, g.anchor_index())]);
    }

    #[test]
    fn history_pooling_is_mask_weighted() {
        let mut values = Array2::zeros((8, 8));
        let mut mask = Array2::from_elem((8, 8), false);
        values[(0, 0)] = 2.0;
        mask[(0, 0)] = true;
        values[(1, 1)] = 4.0;
        mask[(1, 1)] = true;
        values[(5, 5)] = 9.0; // masked out
        let p = pool_history(&values, &mask, (2, 2));
        assert_eq!(p, array![[3.0, 0.0, 0.0, 0.0]]);
    }
}
