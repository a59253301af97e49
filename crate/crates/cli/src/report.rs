//! Static SVG plots: learning curves and a principal-component scatter.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use pacl::trainer::EpochRecord;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Projects rows onto their top two principal components. Each component's
/// sign is fixed so that its largest-magnitude loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let x = DMatrix::from_fn(n, d, |r, c| rows[r][c]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::new();
    for &k in order.iter().take(2) {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    (0..n)
        .map(|r| {
            let row = centered.row(r);
            let mut p = [0.0; 2];
            for (i, axis) in axes.iter().enumerate() {
                p[i] = row.iter().zip(axis.iter()).map(|(a, b)| a * b).sum();
            }
            p
        })
        .collect()
}

fn header(out: &mut String, width: u32, height: u32) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two panels, intent accuracy and overall accuracy per epoch, one line per run.
pub fn learning_curve_svg(series: &[(String, Vec<EpochRecord>)]) -> String {
    let (pw, ph, margin) = (360.0, 260.0, 45.0);
    let width = (2.0 * (pw + margin) + margin) as u32;
    let height = (ph + 2.0 * margin + 20.0 * series.len() as f64) as u32;
    let max_epoch = series.iter().flat_map(|(_, h)| h.iter().map(|r| r.epoch)).max().unwrap_or(1).max(1) as f64;
    let mut out = String::new();
    header(&mut out, width, height);
    let panels: [(&str, fn(&EpochRecord) -> f64); 2] = [("intent accuracy", |r| r.ic_acc), ("overall accuracy", |r| r.overall_acc)];
    for (p, (title, metric)) in panels.iter().enumerate() {
        let x0 = margin + p as f64 * (pw + margin);
        let y0 = margin;
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\">{title}</text>", x0, y0 - 12.0);
        let _ = writeln!(
            out,
            "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#444\"/>"
        );
        for t in 0..=4 {
            let v = t as f64 / 4.0;
            let y = y0 + ph * (1.0 - v);
            let _ = writeln!(
                out,
                "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
                x0 + pw,
                x0 - 4.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">epoch (1-{})</text>",
            x0 + pw / 2.0,
            y0 + ph + 18.0,
            max_epoch as usize
        );
        for (s, (_, history)) in series.iter().enumerate() {
            let color = PALETTE[s % PALETTE.len()];
            let pts: Vec<String> = history
                .iter()
                .map(|r| {
                    let x = x0 + pw * (r.epoch as f64 / max_epoch);
                    let y = y0 + ph * (1.0 - metric(r).clamp(0.0, 1.0));
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                pts.join(" ")
            );
            for pt in &pts {
                let (x, y) = pt.split_once(',').expect("point");
                let _ = writeln!(out, "<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"{color}\"/>");
            }
        }
    }
    for (s, (label, _)) in series.iter().enumerate() {
        let y = margin + ph + 40.0 + 20.0 * s as f64;
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(
            out,
            "<rect x=\"{margin:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            y - 10.0,
            margin + 18.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of 2-D points coloured by label, with a legend.
pub fn scatter_svg(points: &[[f64; 2]], labels: &[String], title: &str) -> String {
    let (pw, ph, margin, legend_w): (f64, f64, f64, f64) = (480.0, 480.0, 40.0, 260.0);
    let keys: BTreeMap<&str, usize> = {
        let mut k: Vec<&str> = labels.iter().map(String::as_str).collect();
        k.sort_unstable();
        k.dedup();
        k.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };
    let width = (pw + 2.0 * margin + legend_w) as u32;
    let height = (ph + 2.0 * margin).max(margin * 2.0 + 16.0 * keys.len() as f64) as u32;
    let bounds = |axis: usize| {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[axis]), hi.max(p[axis])));
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        }
    };
    let ((x_lo, x_hi), (y_lo, y_hi)) = (bounds(0), bounds(1));
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, "<text x=\"{margin:.1}\" y=\"{:.1}\" font-size=\"13\">{}</text>", margin - 14.0, escape(title));
    let _ = writeln!(
        out,
        "<rect x=\"{margin:.1}\" y=\"{margin:.1}\" width=\"{pw:.1}\" height=\"{ph:.1}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for (p, label) in points.iter().zip(labels) {
        let x = margin + pw * (p[0] - x_lo) / (x_hi - x_lo);
        let y = margin + ph * (1.0 - (p[1] - y_lo) / (y_hi - y_lo));
        let color = PALETTE[keys[label.as_str()] % PALETTE.len()];
        let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.75\"/>");
    }
    let lx = margin * 2.0 + pw;
    for (key, &i) in &keys {
        let y = margin + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            lx,
            y - 4.0,
            PALETTE[i % PALETTE.len()],
            lx + 10.0,
            escape(key)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pacl::trainer::Stage;

    #[test]
    fn pca_recovers_the_dominant_direction() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.5 * i as f64, 0.01 * ((i * 7) % 3) as f64]).collect();
        let p = pca_2d(&rows);
        assert!(p.windows(2).all(|w| w[1][0] > w[0][0]));
        let spread: f64 = p.iter().map(|q| q[1].abs()).fold(0.0, f64::max);
        assert!(spread < 0.1);
    }

    #[test]
    fn curves_have_one_point_per_epoch() {
        let h: Vec<EpochRecord> = (1..=10)
            .map(|e| EpochRecord {
                stage: Stage::Finetune,
                epoch: e,
                train_loss: 1.0,
                ic_acc: 0.1 * e as f64,
                sf_f1: 0.0,
                overall_acc: 0.05 * e as f64,
            })
            .collect();
        let svg = learning_curve_svg(&[("run".into(), h.clone())]);
        assert_eq!(svg.matches("<circle").count(), 20);
        assert_eq!(svg, learning_curve_svg(&[("run".into(), h)]));
    }
}
