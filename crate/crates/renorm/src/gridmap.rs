//! Sampled-map exchange: the `theta,y,theta_out,y_out` text table format and
//! bicubic interpolation of lifted displacements for imported maps.

use std::sync::Arc;

use crate::circle::{circle_lift_displacement, reduce_mod1, Angle, SampleGrid};
use crate::error::{Error, Result};
use crate::real::Real;

/// Displacement samples of a map on a uniform grid: `disp_t[i][j]` is the
/// lifted theta displacement at `theta_i = i/n_theta`, `y_j = j/(n_y-1)`.
#[derive(Clone)]
pub struct GridMapData<R: Real> {
    pub n_theta: usize,
    pub n_y: usize,
    disp_t: Vec<R>,
    disp_y: Vec<R>,
}

impl<R: Real> std::fmt::Debug for GridMapData<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GridMapData({}x{})", self.n_theta, self.n_y)
    }
}

impl<R: Real> GridMapData<R> {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_y + j
    }

    /// Bicubic (Catmull-Rom) interpolation of both displacement fields;
    /// periodic in theta, clamped in y.
    pub fn displacement(&self, theta: R, y: R) -> (R, R) {
        let tpos = reduce_mod1(theta) * R::of_usize(self.n_theta);
        let i0 = tpos.floor().to_f64_lossy() as isize;
        let ts = tpos - tpos.floor();
        let ypos = y.max(R::zero()).min(R::one()) * R::of_usize(self.n_y - 1);
        let j0 = (ypos.floor().to_f64_lossy() as isize).min(self.n_y as isize - 2).max(0);
        let ys = ypos - R::of_usize(j0 as usize);

        let wrap_i = |i: isize| -> usize {
            (i.rem_euclid(self.n_theta as isize)) as usize
        };
        let clamp_j = |j: isize| -> usize {
            j.clamp(0, self.n_y as isize - 1) as usize
        };

        let mut val_t = [[R::zero(); 4]; 4];
        let mut val_y = [[R::zero(); 4]; 4];
        for (a, di) in (-1..=2).enumerate() {
            for (b, dj) in (-1..=2).enumerate() {
                let idx = self.idx(wrap_i(i0 + di), clamp_j(j0 + dj));
                val_t[a][b] = self.disp_t[idx];
                val_y[a][b] = self.disp_y[idx];
            }
        }
        let interp = |vals: &[[R; 4]; 4]| -> R {
            let mut col = [R::zero(); 4];
            for (a, row) in vals.iter().enumerate() {
                col[a] = catmull_rom(row, ys);
            }
            catmull_rom(&col, ts)
        };
        (interp(&val_t), interp(&val_y))
    }
}

fn catmull_rom<R: Real>(p: &[R; 4], t: R) -> R {
    let two = R::lit(2.0);
    let half = R::lit(0.5);
    let t2 = t * t;
    let t3 = t2 * t;
    half * (two * p[1]
        + (p[2] - p[0]) * t
        + (two * p[0] - R::lit(5.0) * p[1] + R::lit(4.0) * p[2] - p[3]) * t2
        + (R::lit(3.0) * (p[1] - p[2]) + p[3] - p[0]) * t3)
}

/// Render map samples to the exchange format (row-major, theta outer).
pub fn format_map_table<R: Real>(rows: &[(R, R, R, R)]) -> String {
    let mut s = String::from("theta,y,theta_out,y_out\n");
    for (a, b, c, d) in rows {
        s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", a, b, c, d));
    }
    s
}

/// Parse the exchange format into displacement samples. The rows must form a
/// complete uniform grid in row-major order.
pub fn parse_map_table<R: Real>(text: &str) -> Result<GridMapData<R>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "theta,y,theta_out,y_out" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "expected header `theta,y,theta_out,y_out`".into(),
            })
        }
    }
    let mut rows: Vec<(R, R, R, R)> = Vec::new();
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut take = |what: &str| -> Result<R> {
            let raw = parts.next().ok_or_else(|| Error::Parse {
                line: ln + 1,
                column: 1,
                message: format!("missing field `{what}`"),
            })?;
            raw.trim().parse::<f64>().map(R::lit).map_err(|_| Error::Parse {
                line: ln + 1,
                column: 1,
                message: format!("malformed number `{raw}`"),
            })
        };
        let t = take("theta")?;
        let y = take("y")?;
        let to = take("theta_out")?;
        let yo = take("y_out")?;
        rows.push((t, y, to, yo));
    }
    if rows.len() < 4 {
        return Err(Error::Parse { line: 1, column: 1, message: "grid too small".into() });
    }
    // infer n_y: rows share theta within the first block
    let first_theta = rows[0].0;
    let n_y = rows
        .iter()
        .take_while(|r| (r.0 - first_theta).abs() < R::lit(1e-12))
        .count();
    if n_y < 2 || !rows.len().is_multiple_of(n_y) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "rows do not form a uniform theta-major grid".into(),
        });
    }
    let n_theta = rows.len() / n_y;
    let mut disp_t = Vec::with_capacity(rows.len());
    let mut disp_y = Vec::with_capacity(rows.len());
    for (t, y, to, yo) in &rows {
        disp_t.push(circle_lift_displacement(Angle::new(*t), Angle::new(*to)));
        disp_y.push(*yo - *y);
    }
    Ok(GridMapData { n_theta, n_y, disp_t, disp_y })
}

/// Build displacement samples by evaluating a closure on a grid.
pub fn sample_displacements<R: Real, F: Fn(R, R) -> (R, R)>(
    grid: &SampleGrid<R>,
    f: F,
) -> Arc<GridMapData<R>> {
    let n_theta = grid.n_theta;
    let n_y = grid.n_y;
    let mut disp_t = Vec::with_capacity(n_theta * n_y);
    let mut disp_y = Vec::with_capacity(n_theta * n_y);
    for i in 0..n_theta {
        for j in 0..n_y {
            let th = grid.theta_at(i);
            let y = grid.y_at(j);
            let (ot, oy) = f(th, y);
            disp_t.push(circle_lift_displacement(Angle::new(th), Angle::new(ot)));
            disp_y.push(oy - y);
        }
    }
    Arc::new(GridMapData { n_theta, n_y, disp_t, disp_y })
}
