//! Self-contained SVG charts rendered straight from a sweep report. Charts
//! are pure views: every plotted number is present in the report CSV.

use super::sweep::{CellStatus, ExperimentReport};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("report has no successful cells to plot")]
    EmptyReport,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 600.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 420.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_points(pts: &[(f64, f64)]) -> Self {
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        // pad so no point sits on the frame edge
        let xp = (x_max - x_min).max(1e-9) * 0.06;
        let yp = (y_max - y_min).max(1e-9) * 0.08;
        Frame { x_min: x_min - xp, x_max: x_max + xp, y_min: y_min - yp, y_max: y_max + yp }
    }

    fn sx(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (RIGHT - LEFT)
    }

    fn sy(&self, y: f64) -> f64 {
        BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * (BOTTOM - TOP)
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        let mut body = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"monospace\" font-size=\"13\">\n\
             <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
            (LEFT + RIGHT) / 2.0
        );
        body.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n\
             <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
            (LEFT + RIGHT) / 2.0,
            BOTTOM + 38.0,
            (TOP + BOTTOM) / 2.0,
            (TOP + BOTTOM) / 2.0
        ));
        Svg { body }
    }

    fn tick_x(&mut self, frame: &Frame, x: f64, label: &str) {
        let sx = frame.sx(x);
        self.body.push_str(&format!(
            "<line x1=\"{sx}\" y1=\"{BOTTOM}\" x2=\"{sx}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{sx}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
            BOTTOM + 5.0,
            BOTTOM + 20.0
        ));
    }

    fn tick_y(&mut self, frame: &Frame, y: f64, label: &str) {
        let sy = frame.sy(y);
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{sy}\" x2=\"{LEFT}\" y2=\"{sy}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>\n",
            LEFT - 5.0,
            LEFT - 8.0,
            sy + 4.0
        ));
    }

    fn point(&mut self, frame: &Frame, x: f64, y: f64) {
        self.body.push_str(&format!(
            "<circle class=\"pt\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#1f6fb2\"/>\n",
            frame.sx(x),
            frame.sy(y)
        ));
    }

    fn polyline(&mut self, frame: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
            .collect();
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
            coords.join(" ")
        ));
    }

    fn annotation(&mut self, text: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#b22222\">{text}</text>\n",
            RIGHT - 8.0,
            TOP + 18.0
        ));
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tv_points(report: &ExperimentReport) -> Vec<(super::sweep::CellCoords, f64, Option<f64>)> {
    report
        .cells
        .iter()
        .filter(|c| c.status == CellStatus::Ok)
        .filter_map(|c| {
            let tv = c.metrics.iter().find(|m| m.metric == "sliced_tv_max")?.value;
            let eps = c
                .metrics
                .iter()
                .find(|m| m.metric == "epsilon_score")
                .map(|m| m.value);
            Some((c.coords, tv, eps))
        })
        .collect()
}

fn distinct<T: PartialEq + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Renders one SVG per populated sweep axis: (filename, svg text) pairs.
pub fn render_charts(report: &ExperimentReport) -> Result<Vec<(String, String)>, ChartError> {
    let pts = tv_points(report);
    if pts.is_empty() {
        return Err(ChartError::EmptyReport);
    }
    let mut charts = Vec::new();

    let ts = distinct(pts.iter().map(|p| p.0.t));
    if ts.len() >= 2 {
        let data: Vec<(f64, f64)> =
            pts.iter().map(|p| ((p.0.t as f64).ln(), p.1.max(1e-6).ln())).collect();
        let frame = Frame::from_points(&data);
        let mut svg = Svg::new("sliced TV vs T (log-log)", "T", "sliced TV");
        for &t in &ts {
            svg.tick_x(&frame, (t as f64).ln(), &t.to_string());
        }
        let y_lo = data.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let y_hi = data.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        svg.tick_y(&frame, y_lo, &format!("{:.3}", y_lo.exp()));
        svg.tick_y(&frame, y_hi, &format!("{:.3}", y_hi.exp()));
        if let Some(fit_row) = report.rate_fits.first() {
            let fit = &fit_row.fit;
            let line: Vec<(f64, f64)> = ts
                .iter()
                .map(|&t| {
                    let tf = t as f64;
                    (tf.ln(), (fit.a * tf.powf(-fit.b)).max(1e-6).ln())
                })
                .collect();
            svg.polyline(&frame, &line, "#b22222", true);
            svg.annotation(&format!("slope b = {:.3}", fit.b));
        }
        for &(x, y) in &data {
            svg.point(&frame, x, y);
        }
        charts.push(("tv_vs_t.svg".to_string(), svg.finish()));
    }

    for (axis, label, file) in [
        ("d", "ambient dimension d", "tv_vs_d.svg"),
        ("k", "component count K", "tv_vs_k.svg"),
    ] {
        let axis_of = |c: &super::sweep::CellCoords| if axis == "d" { c.d } else { c.k };
        let vals = distinct(pts.iter().map(|p| axis_of(&p.0)));
        if vals.len() >= 2 {
            let data: Vec<(f64, f64)> =
                pts.iter().map(|p| ((axis_of(&p.0) as f64).ln(), p.1)).collect();
            let frame = Frame::from_points(&data);
            let mut svg =
                Svg::new(&format!("sliced TV vs {label} (flat is dimension-free)"), label, "sliced TV");
            for &v in &vals {
                svg.tick_x(&frame, (v as f64).ln(), &v.to_string());
            }
            svg.tick_y(&frame, 0.0_f64.max(frame.y_min + 1e-12), "0");
            let series: Vec<(f64, f64)> = {
                let mut s = data.clone();
                s.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                s
            };
            svg.polyline(&frame, &series, "#1f6fb2", false);
            for &(x, y) in &data {
                svg.point(&frame, x, y);
            }
            charts.push((file.to_string(), svg.finish()));
        }
    }

    let amps = distinct(pts.iter().map(|p| p.0.amplitude));
    if amps.len() >= 2 {
        // x = measured score error when present, else the nominal amplitude
        let data: Vec<(f64, f64)> =
            pts.iter().map(|p| (p.2.unwrap_or(p.0.amplitude), p.1)).collect();
        let frame = Frame::from_points(&data);
        let mut svg = Svg::new("sliced TV vs measured score error", "epsilon_score", "sliced TV");
        let x_lo = data.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x_hi = data.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        svg.tick_x(&frame, x_lo, &format!("{x_lo:.3}"));
        svg.tick_x(&frame, x_hi, &format!("{x_hi:.3}"));
        // least-squares line on the scatter
        let n = data.len() as f64;
        let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
        let my = data.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = data.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        if sxx > 0.0 {
            let slope = data.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
            let line = vec![
                (x_lo, my + slope * (x_lo - mx)),
                (x_hi, my + slope * (x_hi - mx)),
            ];
            svg.polyline(&frame, &line, "#b22222", true);
            svg.annotation(&format!("slope = {slope:.3}"));
        }
        for &(x, y) in &data {
            svg.point(&frame, x, y);
        }
        charts.push(("tv_vs_score_error.svg".to_string(), svg.finish()));
    }

    Ok(charts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config_str;
    use crate::experiment::sweep::run_sweep;

    fn report_with_t_axis() -> ExperimentReport {
        let text = "seed = 11\n[target]\nk = 2\nd = 2\nseparation = 3\n[schedule]\nt = 8 12 16 24\n[run]\nchains = 1500\nprojections = 6\nbins = 64\n";
        let spec = parse_config_str(text, None).unwrap();
        run_sweep(&spec).0
    }

    #[test]
    fn single_axis_report_yields_one_chart() {
        let report = report_with_t_axis();
        let charts = render_charts(&report).unwrap();
        assert_eq!(charts.len(), 1);
        assert_eq!(charts[0].0, "tv_vs_t.svg");
        assert!(charts[0].1.starts_with("<svg"));
        assert!(charts[0].1.ends_with("</svg>\n"));
    }

    #[test]
    fn every_plotted_point_stays_inside_the_frame() {
        let report = report_with_t_axis();
        let charts = render_charts(&report).unwrap();
        for (_, svg) in &charts {
            for piece in svg.split("<circle class=\"pt\" ").skip(1) {
                let cx: f64 = piece
                    .split("cx=\"")
                    .nth(1)
                    .and_then(|s| s.split('"').next())
                    .unwrap()
                    .parse()
                    .unwrap();
                let cy: f64 = piece
                    .split("cy=\"")
                    .nth(1)
                    .and_then(|s| s.split('"').next())
                    .unwrap()
                    .parse()
                    .unwrap();
                assert!((LEFT..=RIGHT).contains(&cx), "cx {cx} outside frame");
                assert!((TOP..=BOTTOM).contains(&cy), "cy {cy} outside frame");
            }
        }
    }

    #[test]
    fn slope_annotation_matches_report_fit() {
        let report = report_with_t_axis();
        assert!(!report.rate_fits.is_empty());
        let want = format!("slope b = {:.3}", report.rate_fits[0].fit.b);
        let charts = render_charts(&report).unwrap();
        assert!(charts[0].1.contains(&want), "missing `{want}`");
    }

    #[test]
    fn dimension_and_amplitude_axes_render_their_charts() {
        let text = "seed = 12\n[target]\nk = 1 2\nd = 2 4\nseparation = 3\n[schedule]\nt = 8\n\
            [oracle]\nkind = gaussian-field\namplitude = 0 0.3\n\
            [run]\nchains = 400\nprojections = 4\nbins = 64\nscore_error_samples = 200\n";
        let spec = parse_config_str(text, None).unwrap();
        let (report, _) = run_sweep(&spec);
        assert!(!report.any_failed());
        let charts = render_charts(&report).unwrap();
        let names: Vec<&str> = charts.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"tv_vs_d.svg"));
        assert!(names.contains(&"tv_vs_k.svg"));
        assert!(names.contains(&"tv_vs_score_error.svg"));
        // no T axis: only one T value
        assert!(!names.contains(&"tv_vs_t.svg"));
        let eps_chart = &charts.iter().find(|(n, _)| n == "tv_vs_score_error.svg").unwrap().1;
        assert!(eps_chart.contains("slope = "));
        for (_, svg) in &charts {
            assert!(svg.matches("<circle class=\"pt\"").count() >= 8);
        }
    }

    #[test]
    fn empty_report_is_an_error() {
        let report = ExperimentReport {
            config: String::new(),
            config_hash: String::new(),
            seed: 0,
            cells: vec![],
            rate_fits: vec![],
        };
        assert_eq!(render_charts(&report).unwrap_err(), ChartError::EmptyReport);
    }
}
