//! Top-down rasterization of the cloth lattice.
//!
//! Each lattice quad is split into two triangles and rasterized against the
//! centers of a square cell grid over the workspace [-1,1]². The same pass
//! produces the data every consumer needs: per-cell covering-layer counts
//! (coverage, mask) and the maximum interpolated surface height (heightfield).

/// Per-cell rasterization result over a `resolution`² grid, row-major with
/// row 0 at y = -1 and column 0 at x = -1.
#[derive(Debug, Clone)]
pub struct LayerGrid {
    pub resolution: usize,
    /// Number of lattice quads covering each cell center.
    pub layers: Vec<u32>,
    /// Maximum interpolated z over covering triangles (0 where uncovered).
    pub max_z: Vec<f64>,
}

impl LayerGrid {
    pub fn occupied_cells(&self) -> usize {
        self.layers.iter().filter(|&&c| c > 0).count()
    }
}

/// Center coordinate of cell index `i` along one axis.
#[inline]
pub fn cell_center(i: usize, resolution: usize) -> f64 {
    let cell = 2.0 / resolution as f64;
    -1.0 + (i as f64 + 0.5) * cell
}

/// Cell index containing coordinate `v`, clamped into range.
#[inline]
pub fn cell_index(v: f64, resolution: usize) -> usize {
    let cell = 2.0 / resolution as f64;
    let idx = ((v + 1.0) / cell).floor() as isize;
    idx.clamp(0, resolution as isize - 1) as usize
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Rasterize the lattice quads of a (rows × cols) particle grid.
///
/// `positions` is the row-major particle array; only x/y enter the coverage
/// test, z is interpolated barycentrically for the height channel.
pub fn rasterize(positions: &[[f64; 3]], grid_dims: (usize, usize), resolution: usize) -> LayerGrid {
    debug_assert!(resolution >= 16, "raster resolution must be >= 16");
    let (rows, cols) = grid_dims;
    let mut layers = vec![0u32; resolution * resolution];
    let mut max_z = vec![0.0f64; resolution * resolution];
    // stamp buffer: a cell counts one layer per quad, not per triangle
    let mut stamp = vec![0u32; resolution * resolution];
    let mut quad_serial = 0u32;

    let cell = 2.0 / resolution as f64;
    let idx = |r: usize, c: usize| r * cols + c;

    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            quad_serial += 1;
            let quad = [
                positions[idx(r, c)],
                positions[idx(r, c + 1)],
                positions[idx(r + 1, c + 1)],
                positions[idx(r + 1, c)],
            ];
            // bounding box in cell indices
            let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in &quad {
                lo_x = lo_x.min(p[0]);
                hi_x = hi_x.max(p[0]);
                lo_y = lo_y.min(p[1]);
                hi_y = hi_y.max(p[1]);
            }
            if hi_x < -1.0 || lo_x > 1.0 || hi_y < -1.0 || lo_y > 1.0 {
                continue;
            }
            let c0 = cell_index(lo_x, resolution);
            let c1 = cell_index(hi_x, resolution);
            let r0 = cell_index(lo_y, resolution);
            let r1 = cell_index(hi_y, resolution);

            for tri in [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]] {
                let area = edge(tri[0][0], tri[0][1], tri[1][0], tri[1][1], tri[2][0], tri[2][1]);
                if area.abs() < 1e-12 {
                    continue; // degenerate projection covers no area
                }
                for gr in r0..=r1 {
                    let py = cell_center(gr, resolution);
                    if py < lo_y - cell || py > hi_y + cell {
                        continue;
                    }
                    for gc in c0..=c1 {
                        let px = cell_center(gc, resolution);
                        let w0 = edge(tri[1][0], tri[1][1], tri[2][0], tri[2][1], px, py);
                        let w1 = edge(tri[2][0], tri[2][1], tri[0][0], tri[0][1], px, py);
                        let w2 = edge(tri[0][0], tri[0][1], tri[1][0], tri[1][1], px, py);
                        let inside = if area > 0.0 {
                            w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                        } else {
                            w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                        };
                        if !inside {
                            continue;
                        }
                        let cell_id = gr * resolution + gc;
                        let z = (w0 * tri[0][2] + w1 * tri[1][2] + w2 * tri[2][2]) / area;
                        if stamp[cell_id] != quad_serial {
                            stamp[cell_id] = quad_serial;
                            layers[cell_id] += 1;
                        }
                        if z > max_z[cell_id] {
                            max_z[cell_id] = z;
                        }
                    }
                }
            }
        }
    }

    LayerGrid {
        resolution,
        layers,
        max_z,
    }
}
