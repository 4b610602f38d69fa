//! Static choropleth rendering.

use std::fmt::Write as _;

use smoothgauge::geometry::{collection_bbox, Region};
use smoothgauge::numerics::quantiles;

pub const DEFAULT_BINS: usize = 7;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 20.0;
const LEGEND: f64 = 220.0;

/// Bin edges at the `k/bins` quantiles, duplicates collapsed. Equal values
/// give a single bin `[v, v]`.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let ps: Vec<f64> = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    let mut edges = quantiles(values, &ps);
    edges.dedup();
    if edges.len() == 1 {
        edges.push(edges[0]);
    }
    edges
}

/// Index of the bin holding `v`; bins are closed below, the last also above.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    (1..bins).take_while(|&k| v >= edges[k]).count().min(bins - 1)
}

/// Sequential palette from pale orange to dark red.
pub fn palette(n: usize) -> Vec<String> {
    let lo = [254.0, 240.0, 217.0];
    let hi = [153.0, 0.0, 13.0];
    (0..n)
        .map(|k| {
            let t = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
            let c: Vec<u8> = (0..3).map(|j| (lo[j] + t * (hi[j] - lo[j])).round() as u8).collect();
            format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG with one `<path>` per region, coloured by quantile bin of `values`
/// (already on the display scale), a legend, and a value label per region.
pub fn render_svg(regions: &[Region], values: &[f64], bins: usize, title: &str) -> String {
    assert_eq!(regions.len(), values.len());
    let edges = quantile_edges(values, bins.max(1));
    let colours = palette(edges.len() - 1);
    let bb = collection_bbox(regions);
    let w = (bb.max[0] - bb.min[0]).max(1e-12);
    let h = (bb.max[1] - bb.min[1]).max(1e-12);
    let scale = (WIDTH - 2.0 * MARGIN) / w;
    let height = (h * scale + 2.0 * MARGIN).max(60.0 + 22.0 * colours.len() as f64);
    let px = |p: [f64; 2]| {
        (
            MARGIN + (p[0] - bb.min[0]) * scale,
            MARGIN + (bb.max[1] - p[1]) * scale,
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        WIDTH + LEGEND,
        height,
        WIDTH + LEGEND,
        height
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r##"<g id="areas" stroke="#555555" stroke-width="0.5">"##);
    for (r, &v) in regions.iter().zip(values) {
        let mut d = String::new();
        for poly in &r.polygons {
            for ring in &poly.rings {
                for (k, &p) in ring.iter().enumerate() {
                    let (x, y) = px(p);
                    let _ = write!(d, "{}{x:.2} {y:.2} ", if k == 0 { "M" } else { "L" });
                }
                d.push_str("Z ");
            }
        }
        let bin = bin_index(&edges, v);
        let _ = writeln!(
            s,
            r#"<path id="{}" d="{}" fill="{}" fill-rule="evenodd" data-value="{v}" data-bin="{bin}"/>"#,
            escape(&r.id),
            d.trim_end(),
            colours[bin]
        );
    }
    s.push_str("</g>\n<g id=\"labels\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">\n");
    for (r, &v) in regions.iter().zip(values) {
        let (x, y) = px(r.centroid());
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{y:.2}">{v:.1}</text>"#);
    }
    s.push_str("</g>\n");
    let lx = WIDTH + 10.0;
    let _ = writeln!(
        s,
        r#"<g id="legend" font-family="sans-serif" font-size="11"><text x="{lx}" y="{}">{}</text>"#,
        MARGIN + 10.0,
        escape(title)
    );
    for (k, c) in colours.iter().enumerate() {
        let y = MARGIN + 24.0 + 22.0 * k as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{lx}" y="{y}" width="18" height="16" fill="{c}" stroke="#555555"/><text x="{}" y="{}">{:.1} to {:.1}</text>"##,
            lx + 26.0,
            y + 12.0,
            edges[k],
            edges[k + 1]
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use smoothgauge::geometry::square_lattice;

    #[test]
    fn edges_match_quantile_oracle() {
        let v = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0, 5.5, 3.5];
        // numpy.quantile(v, linspace(0, 1, 8)) with the default linear method
        let want = [
            1.0,
            1.6428571428571428,
            2.571428571428571,
            3.4285714285714284,
            4.142857142857142,
            5.2142857142857135,
            5.857142857142857,
            9.0,
        ];
        let got = quantile_edges(&v, 7);
        assert_eq!(got.len(), 8);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn equal_values_use_one_bin() {
        let e = quantile_edges(&[2.0; 5], 7);
        assert_eq!(e, vec![2.0, 2.0]);
        assert_eq!(bin_index(&e, 2.0), 0);
    }

    #[test]
    fn bins_cover_the_range() {
        let e = vec![0.0, 1.0, 2.0, 3.0];
        assert_eq!(bin_index(&e, 0.0), 0);
        assert_eq!(bin_index(&e, 1.0), 1);
        assert_eq!(bin_index(&e, 2.5), 2);
        assert_eq!(bin_index(&e, 3.0), 2);
    }

    #[test]
    fn one_path_per_region() {
        let regs = square_lattice(1, 2, 1.0);
        let svg = render_svg(&regs, &[10.0, 20.0], 7, "rate per 100,000");
        assert_eq!(svg.matches("<path ").count(), 2);
        assert!(svg.contains(">10.0</text>") && svg.contains(">20.0</text>"));
        assert!(svg.contains("id=\"legend\""));
    }
}
