//! Self-contained SVG line chart of mean error against contamination level.

use crate::harness::ExperimentResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Render one scenario's mean error vs ε as an SVG document, or `None` when
/// the result holds no rows for it.
pub fn error_vs_eps_chart(result: &ExperimentResult, noise_kind: &str) -> Option<String> {
    let series = result.mean_error_series(noise_kind);
    if series.is_empty() {
        return None;
    }
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(e, _)| e))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(_, v)| v))
        .collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_max = ys.iter().cloned().fold(0.0_f64, f64::max).max(1e-6) * 1.1;
    let x_span = (x_max - x_min).max(1e-9);

    let px = |e: f64| MARGIN_LEFT + (e - x_min) / x_span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let py = |v: f64| HEIGHT - MARGIN_BOTTOM - v / y_max * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">mean l2 error vs eps ({noise_kind})</text>\n",
        WIDTH / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM
    ));
    // y ticks
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = py(v);
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#cccccc\"/>\n<text x=\"{xt}\" y=\"{yt}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.3}</text>\n",
            x0 = MARGIN_LEFT,
            x1 = WIDTH - MARGIN_RIGHT,
            xt = MARGIN_LEFT - 6.0,
            yt = y + 4.0
        ));
    }
    // x ticks at the observed eps values of the first series
    for &(e, _) in &series[0].1 {
        let x = px(e);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n<text x=\"{x}\" y=\"{yt}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{e}</text>\n",
            y0 = HEIGHT - MARGIN_BOTTOM,
            y1 = HEIGHT - MARGIN_BOTTOM + 5.0,
            yt = HEIGHT - MARGIN_BOTTOM + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">eps</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0
    ));
    // polylines + legend
    for (k, (method, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(e, v)| format!("{},{}", px(e), py(v))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(e, v) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                px(e),
                py(v)
            ));
        }
        let ly = MARGIN_TOP + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{ly}\" x2=\"{x1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{xt}\" y=\"{yt}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            x0 = WIDTH - MARGIN_RIGHT - 140.0,
            x1 = WIDTH - MARGIN_RIGHT - 116.0,
            xt = WIDTH - MARGIN_RIGHT - 110.0,
            yt = ly + 4.0,
            name = method.as_str()
        ));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}
