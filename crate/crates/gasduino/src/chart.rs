//! Fixed-size ASCII chart of PPM against time.
//!
//! The plot block is always [`HEIGHT`] lines of exactly [`WIDTH`]
//! characters: a 7-character value label, a `|` axis, and 72 data columns.
//! Dashed guide lines mark the 50 and 150 PPM category boundaries. Below
//! the block come a time-axis line and a line naming the latest status and
//! its indicator color.

use std::fmt::Write;

use gasduino_core::aqi::{GOOD_MAX_PPM, MODERATE_MAX_PPM};

pub const WIDTH: usize = 80;
pub const HEIGHT: usize = 20;
const LABEL_WIDTH: usize = 7;
pub const PLOT_COLUMNS: usize = WIDTH - LABEL_WIDTH - 1;
const MIN_TOP_PPM: f64 = 200.0;

/// One point on the chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub ts_ms: u64,
    pub ppm: f64,
}

/// Status words printed under the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Latest {
    pub ppm: f64,
    pub status: String,
    pub indicator: String,
}

/// Upper bound of the y axis: at least 200, rounded up to a multiple of 10.
pub fn y_top(points: &[Point]) -> f64 {
    let max = points.iter().map(|p| p.ppm).fold(MIN_TOP_PPM, f64::max);
    (max / 10.0).ceil() * 10.0
}

/// Row (0 = top) a value lands on.
pub fn row_for(ppm: f64, top: f64) -> usize {
    let frac = ((top - ppm) / top).clamp(0.0, 1.0);
    (frac * (HEIGHT - 1) as f64).round() as usize
}

/// Value at the centre of a row, the inverse of [`row_for`].
pub fn value_at_row(row: usize, top: f64) -> f64 {
    top - row as f64 * top / (HEIGHT - 1) as f64
}

/// Mean PPM per data column, `None` where no point falls.
pub fn bucket(points: &[Point]) -> Vec<Option<f64>> {
    let mut sums = vec![(0.0, 0u32); PLOT_COLUMNS];
    if let (Some(first), Some(last)) = (
        points.iter().map(|p| p.ts_ms).min(),
        points.iter().map(|p| p.ts_ms).max(),
    ) {
        let span = (last - first) as f64;
        for p in points {
            let col = if span == 0.0 {
                0
            } else {
                (((p.ts_ms - first) as f64 / span) * (PLOT_COLUMNS - 1) as f64).round() as usize
            };
            sums[col].0 += p.ppm;
            sums[col].1 += 1;
        }
    }
    sums.into_iter()
        .map(|(s, n)| (n > 0).then(|| s / f64::from(n)))
        .collect()
}

pub fn render(points: &[Point], latest: Option<&Latest>) -> String {
    let top = y_top(points);
    let columns = bucket(points);
    let good_row = row_for(GOOD_MAX_PPM, top);
    let moderate_row = row_for(MODERATE_MAX_PPM, top);

    let mut grid = vec![vec![' '; PLOT_COLUMNS]; HEIGHT];
    for row in [good_row, moderate_row] {
        grid[row].fill('-');
    }
    for (col, value) in columns.iter().enumerate() {
        if let Some(v) = value {
            grid[row_for(*v, top)][col] = '*';
        }
    }

    let mut out = String::with_capacity((WIDTH + 1) * (HEIGHT + 2));
    for (row, cells) in grid.iter().enumerate() {
        let label = if row == 0 {
            format!("{top:>7.1}")
        } else if row == HEIGHT - 1 {
            format!("{:>7.1}", 0.0)
        } else if row == moderate_row {
            format!("{MODERATE_MAX_PPM:>7.1}")
        } else if row == good_row {
            format!("{GOOD_MAX_PPM:>7.1}")
        } else {
            " ".repeat(LABEL_WIDTH)
        };
        out.push_str(&label);
        out.push('|');
        out.extend(cells.iter());
        out.push('\n');
    }

    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f.ts_ms, l.ts_ms),
        _ => (0, 0),
    };
    let _ = writeln!(
        out,
        "{:>7} t_ms {first} .. {last} ({} points)",
        "",
        points.len()
    );
    match latest {
        Some(l) => {
            let _ = writeln!(out, "latest: {:.2} ppm {} {}", l.ppm, l.status, l.indicator);
        }
        None => out.push_str("latest: no data\n"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn night_points(n: u64) -> Vec<Point> {
        (0..n)
            .map(|i| Point {
                ts_ms: i * 1000,
                ppm: 70.0 - 30.0 * i as f64 / (n - 1) as f64,
            })
            .collect()
    }

    fn first_star_row(chart: &str, col: usize) -> Option<usize> {
        chart
            .lines()
            .take(HEIGHT)
            .position(|l| l.chars().nth(LABEL_WIDTH + 1 + col) == Some('*'))
    }

    #[test]
    fn fixed_dimensions() {
        let chart = render(&night_points(500), None);
        let lines: Vec<_> = chart.lines().collect();
        assert_eq!(lines.len(), HEIGHT + 2);
        for l in &lines[..HEIGHT] {
            assert_eq!(l.chars().count(), WIDTH, "{l:?}");
        }
    }

    #[test]
    fn guide_lines_at_boundaries() {
        let chart = render(&[], None);
        let lines: Vec<_> = chart.lines().collect();
        let top = y_top(&[]);
        for guide in [50.0, 150.0] {
            let line = lines[row_for(guide, top)];
            assert!(line.starts_with(&format!("{guide:>7.1}|")));
            assert!(line[LABEL_WIDTH + 1..].chars().all(|c| c == '-'));
        }
        assert!(chart.ends_with("latest: no data\n"));
    }

    #[test]
    fn night_trace_endpoints() {
        let chart = render(&night_points(7200), None);
        let top = y_top(&[]);
        let step = top / (HEIGHT - 1) as f64;
        let first = value_at_row(first_star_row(&chart, 0).unwrap(), top);
        let last = value_at_row(first_star_row(&chart, PLOT_COLUMNS - 1).unwrap(), top);
        assert!((first - 70.0).abs() <= step / 2.0 + 1e-9, "{first}");
        assert!((last - 40.0).abs() <= step / 2.0 + 1e-9, "{last}");
    }

    #[test]
    fn status_line() {
        let latest = Latest {
            ppm: 180.0,
            status: "unhealthy".into(),
            indicator: "red".into(),
        };
        let chart = render(
            &[Point {
                ts_ms: 5,
                ppm: 180.0,
            }],
            Some(&latest),
        );
        assert!(chart.ends_with("latest: 180.00 ppm unhealthy red\n"));
        assert_eq!(first_star_row(&chart, 0), Some(row_for(180.0, 200.0)));
    }

    #[test]
    fn tall_values_extend_axis() {
        let pts = [Point {
            ts_ms: 0,
            ppm: 333.0,
        }];
        assert_eq!(y_top(&pts), 340.0);
        assert_eq!(first_star_row(&render(&pts, None), 0), Some(0));
    }
}
