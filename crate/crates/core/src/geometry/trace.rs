//! Suzuki–Abe border following restricted to outermost borders.
//!
//! Foreground is 8-connected, background 4-connected. The raster is treated
//! as if surrounded by a one-pixel background frame. Hole borders are still
//! followed so that border numbering (and therefore the parent of every
//! outer border) stays correct, but only outer borders whose parent is the
//! frame are returned.

use alloc::vec;
use alloc::vec::Vec;

use super::{Contour, Point};
use crate::raster::BinaryRaster;

/// How traced chains are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChainApprox {
    /// Every border pixel.
    None,
    /// Straight runs reduced to their end points.
    #[default]
    Simple,
}

// Neighbour offsets (drow, dcol), counter-clockwise on screen starting east.
const DIRS: [(isize, isize); 8] = [
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn dir_index(dr: isize, dc: isize) -> usize {
    DIRS.iter()
        .position(|&d| d == (dr, dc))
        .expect("neighbour offset")
}

#[derive(Clone, Copy)]
struct Border {
    hole: bool,
    parent: usize,
}

/// Outermost borders with straight runs compressed.
pub fn trace_outer_contours(raster: &BinaryRaster) -> Vec<Contour> {
    trace_outer_contours_with(raster, ChainApprox::Simple)
}

pub fn trace_outer_contours_with(raster: &BinaryRaster, approx: ChainApprox) -> Vec<Contour> {
    let w = raster.width() as usize + 2;
    let h = raster.height() as usize + 2;
    let mut f = vec![0i32; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            if raster.is_foreground(c as i64 - 1, r as i64 - 1) {
                f[r * w + c] = 1;
            }
        }
    }

    // Border 1 is the frame, which behaves like a hole border.
    let mut borders = vec![
        Border {
            hole: true,
            parent: 0,
        };
        2
    ];
    let mut nbd: i32 = 1;
    let mut out = Vec::new();

    for r in 1..h - 1 {
        let mut lnbd: i32 = 1;
        for c in 1..w - 1 {
            let fij = f[r * w + c];
            if fij == 0 {
                continue;
            }
            let outer_start = fij == 1 && f[r * w + c - 1] == 0;
            let hole_start = !outer_start && fij >= 1 && f[r * w + c + 1] == 0;
            if outer_start || hole_start {
                nbd += 1;
                let from = if outer_start { (r, c - 1) } else { (r, c + 1) };
                if hole_start && fij > 1 {
                    lnbd = fij;
                }
                let prev = borders[lnbd as usize];
                let parent = match (outer_start, prev.hole) {
                    (true, true) | (false, false) => lnbd as usize,
                    (true, false) | (false, true) => prev.parent,
                };
                borders.push(Border {
                    hole: hole_start,
                    parent,
                });
                let chain = follow(&mut f, w, (r, c), from, nbd);
                if outer_start && parent == 1 {
                    let pts = match approx {
                        ChainApprox::None => chain,
                        ChainApprox::Simple => compress(&chain),
                    };
                    out.push(Contour::from_points(
                        pts.into_iter()
                            .map(|(rr, cc)| Point::new(cc as f64 - 1.0, rr as f64 - 1.0))
                            .collect(),
                    ));
                }
            }
            let v = f[r * w + c];
            if v != 1 {
                lnbd = v.abs();
            }
        }
    }
    out
}

/// Follows one border starting at `start`, whose background neighbour
/// `from` triggered the start. Marks visited pixels with `nbd` / `-nbd`.
fn follow(
    f: &mut [i32],
    w: usize,
    start: (usize, usize),
    from: (usize, usize),
    nbd: i32,
) -> Vec<(usize, usize)> {
    let at = |p: (usize, usize), d: usize| -> (usize, usize) {
        (
            (p.0 as isize + DIRS[d].0) as usize,
            (p.1 as isize + DIRS[d].1) as usize,
        )
    };
    let d0 = dir_index(
        from.0 as isize - start.0 as isize,
        from.1 as isize - start.1 as isize,
    );

    // Clockwise search for the first non-zero neighbour.
    let first = (0..8)
        .map(|k| (d0 + 8 - k) % 8)
        .map(|d| at(start, d))
        .find(|&p| f[p.0 * w + p.1] != 0);
    let Some(p1) = first else {
        f[start.0 * w + start.1] = -nbd;
        return vec![start];
    };

    let mut chain = Vec::new();
    let mut p2 = p1;
    let mut p3 = start;
    loop {
        let d = dir_index(p2.0 as isize - p3.0 as isize, p2.1 as isize - p3.1 as isize);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let dd = (d + k) % 8;
            let q = at(p3, dd);
            if f[q.0 * w + q.1] != 0 {
                p4 = q;
                break;
            }
            if dd == 0 {
                east_zero = true;
            }
        }
        let cell = &mut f[p3.0 * w + p3.1];
        if east_zero {
            *cell = -nbd;
        } else if *cell == 1 {
            *cell = nbd;
        }
        chain.push(p3);
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    chain
}

/// Keeps only chain points where the step direction changes.
fn compress(chain: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let n = chain.len();
    if n < 3 {
        return chain.to_vec();
    }
    let step = |a: (usize, usize), b: (usize, usize)| {
        (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize)
    };
    (0..n)
        .filter(|&i| {
            let prev = chain[(i + n - 1) % n];
            let next = chain[(i + 1) % n];
            step(prev, chain[i]) != step(chain[i], next)
        })
        .map(|i| chain[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_metrics;

    fn block(w: u32, h: u32, bw: u32, bh: u32, ox: u32, oy: u32) -> BinaryRaster {
        BinaryRaster::from_fn(w, h, |x, y| {
            x >= ox && x < ox + bw && y >= oy && y < oy + bh
        })
    }

    #[test]
    fn blank_raster_has_no_contours() {
        assert!(trace_outer_contours(&BinaryRaster::from_fn(5, 5, |_, _| false)).is_empty());
    }

    #[test]
    fn filled_block_compresses_to_corners() {
        let c = trace_outer_contours(&block(20, 20, 7, 4, 3, 5));
        assert_eq!(c.len(), 1);
        let mut pts: Vec<(f64, f64)> = c[0].points.iter().map(|p| (p.x, p.y)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, [(3., 5.), (3., 8.), (9., 5.), (9., 8.)]);
        assert_eq!(polygon_metrics(&c[0]).unwrap().area_px2, 18.0);
    }

    #[test]
    fn block_touching_the_edge_is_traced() {
        let c = trace_outer_contours(&block(6, 6, 6, 6, 0, 0));
        assert_eq!(c.len(), 1);
        assert_eq!(polygon_metrics(&c[0]).unwrap().area_px2, 25.0);
    }

    #[test]
    fn ring_yields_only_its_outer_border() {
        let ring = BinaryRaster::from_fn(30, 30, |x, y| {
            let d = ((x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2)).sqrt();
            (6.0..=11.0).contains(&d)
        });
        assert_eq!(trace_outer_contours(&ring).len(), 1);
    }

    #[test]
    fn island_inside_a_hole_is_not_outermost() {
        let r = BinaryRaster::from_fn(20, 20, |x, y| {
            let frame = (2..18).contains(&x) && (2..18).contains(&y);
            let hole = (4..16).contains(&x) && (4..16).contains(&y);
            let island = (8..12).contains(&x) && (8..12).contains(&y);
            (frame && !hole) || island
        });
        assert_eq!(trace_outer_contours(&r).len(), 1);
    }

    #[test]
    fn separate_components_each_get_a_contour() {
        let r = BinaryRaster::from_fn(20, 10, |x, y| {
            ((1..5).contains(&x) || (10..19).contains(&x)) && (2..8).contains(&y)
        });
        assert_eq!(trace_outer_contours(&r).len(), 2);
    }

    #[test]
    fn single_pixel_and_line_degenerate_chains() {
        let dot = trace_outer_contours(&block(5, 5, 1, 1, 2, 2));
        assert_eq!(dot[0].points, [Point::new(2.0, 2.0)]);
        let line = trace_outer_contours(&block(10, 5, 5, 1, 2, 2));
        assert_eq!(line[0].points.len(), 2);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let r = BinaryRaster::from_fn(6, 6, |x, y| x == y);
        let c = trace_outer_contours_with(&r, ChainApprox::None);
        assert_eq!(c.len(), 1);
        // out along the diagonal and back again
        assert_eq!(c[0].points.len(), 10);
    }
}
