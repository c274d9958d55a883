//! Self-contained SVG line charts, emitted as plain text.
//!
//! No plotting dependency: the charts must be byte-deterministic so that
//! repeated runs compare equal, and downstream tooling only needs a browser.

use crate::clock::LocalDate;

/// One polyline: a labeled series of (date, value) points.
#[derive(Debug, Clone)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(LocalDate, f64)>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Render a line chart; None when every series is empty.
pub fn line_chart(title: &str, y_label: &str, series: &[ChartSeries]) -> Option<String> {
    let mut x_min = i32::MAX;
    let mut x_max = i32::MIN;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (d, v) in &s.points {
            x_min = x_min.min(d.ordinal());
            x_max = x_max.max(d.ordinal());
            y_min = y_min.min(*v);
            y_max = y_max.max(*v);
        }
    }
    if x_min > x_max {
        return None;
    }
    if y_min > 0.0 {
        y_min = 0.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let x_span = (x_max - x_min).max(1) as f64;
    let y_span = y_max - y_min;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |d: i32| MARGIN_LEFT + (d - x_min) as f64 / x_span * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (y_max - v) / y_span * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{l:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>\n\
         <line x1=\"{l:.1}\" y1=\"{t:.1}\" x2=\"{l:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>\n",
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + plot_w,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h,
    ));

    // Y ticks and labels.
    for i in 0..=4 {
        let v = y_min + y_span * i as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{:.3}</text>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            v
        ));
    }
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    ));

    // X ticks: at most eight date labels.
    let days = (x_max - x_min) as usize + 1;
    let step = days.div_ceil(8).max(1);
    let mut d = x_min;
    while d <= x_max {
        let x = x_of(d);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{}</text>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0,
            MARGIN_TOP + plot_h + 20.0,
            LocalDate::from_ordinal(d)
        ));
        d += step as i32;
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">date</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));

    // Series polylines and legend.
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = s.points.clone();
        sorted.sort_by_key(|(d, _)| *d);
        let coords: Vec<String> = sorted
            .iter()
            .map(|(d, v)| format!("{:.2},{:.2}", x_of(d.ordinal()), y_of(*v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{x1:.1}\" y1=\"{ly:.1}\" x2=\"{x2:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n\
             <text x=\"{tx:.1}\" y=\"{ty:.1}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            x1 = WIDTH - MARGIN_RIGHT + 12.0,
            x2 = WIDTH - MARGIN_RIGHT + 34.0,
            tx = WIDTH - MARGIN_RIGHT + 40.0,
            ty = ly + 4.0,
            label = escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(n: i32) -> LocalDate {
        LocalDate::from_ordinal(19_500 + n)
    }

    #[test]
    fn single_group_three_points_one_polyline() {
        let series = vec![ChartSeries {
            label: "all".into(),
            points: vec![(day(0), 0.1), (day(1), 0.3), (day(2), 0.2)],
        }];
        let svg = line_chart("rates", "rate", &series).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("2023-05-23"), "date axis labels present");
        assert!(svg.contains(">rate</text>"), "y axis label present");
    }

    #[test]
    fn two_groups_two_polylines_with_legend() {
        let series = vec![
            ChartSeries {
                label: "ring_00".into(),
                points: vec![(day(0), 0.1), (day(1), 0.2)],
            },
            ChartSeries {
                label: "ring_01".into(),
                points: vec![(day(0), 0.4), (day(1), 0.5)],
            },
        ];
        let svg = line_chart("rates", "rate", &series).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">ring_00</text>"));
        assert!(svg.contains(">ring_01</text>"));
    }

    #[test]
    fn identical_input_identical_bytes_and_empty_skipped() {
        let series = vec![ChartSeries {
            label: "all".into(),
            points: vec![(day(0), 0.5), (day(3), 0.25)],
        }];
        let a = line_chart("t", "y", &series).unwrap();
        let b = line_chart("t", "y", &series).unwrap();
        assert_eq!(a, b);
        assert!(line_chart("t", "y", &[]).is_none());
        assert!(line_chart(
            "t",
            "y",
            &[ChartSeries {
                label: "e".into(),
                points: vec![]
            }]
        )
        .is_none());
    }
}
