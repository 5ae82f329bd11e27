//! Consolidated tables and PR-curve plots over several runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};

use scnet::metrics::{MetricReport, PrPoint, METRICS_SCHEMA};
use scnet::{Error, Result};

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn colour(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_summary(path: &Path, reports: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "schema",
        "run",
        "threshold",
        "precision",
        "recall",
        "f1",
        "iou",
        "region_precision",
        "region_recall",
        "region_f1",
        "auprc",
    ])
    .map_err(csv_err(path))?;
    for (name, r) in reports {
        let mut row = vec![METRICS_SCHEMA.to_string(), name.clone(), format!("{:.2}", r.threshold)];
        row.extend(
            [r.precision, r.recall, r.f1, r.iou, r.region_precision, r.region_recall, r.region_f1, r.auprc]
                .iter()
                .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Curve points ordered by recall, as they are drawn.
fn drawn(curve: &[PrPoint]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.recall > 0.0 || p.precision > 0.0)
        .map(|p| (p.recall, p.precision))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts
}

fn legend(name: &str, r: &MetricReport) -> String {
    format!("{name} (AUPRC={:.3})", r.auprc)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn to_px(r: f64, p: f64) -> (f64, f64) {
    (MARGIN + r * (W - 2.0 * MARGIN), H - MARGIN - p * (H - 2.0 * MARGIN))
}

pub fn pr_svg(reports: &[(String, MetricReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=10 {
        let v = f64::from(i) / 10.0;
        let (x, _) = to_px(v, 0.0);
        let (_, y) = to_px(0.0, v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            MARGIN,
            H - MARGIN,
            MARGIN,
            W - MARGIN
        );
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, H - MARGIN + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, MARGIN - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Recall</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Precision</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, r)) in reports.iter().enumerate() {
        let [cr, cg, cb] = colour(i);
        let pts: Vec<String> = drawn(&r.curve)
            .into_iter()
            .map(|(x, y)| {
                let (px, py) = to_px(x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="rgb({cr},{cg},{cb})" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 + 18.0 * i as f64;
        let lx = MARGIN + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="rgb({cr},{cg},{cb})" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&legend(name, r))
        );
    }
    s.push_str("</svg>\n");
    s
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: [u8; 3], thick: i64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as i64).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = ((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64);
        for d in 0..thick {
            put(img, x, y + d - thick / 2, c);
            put(img, x + d - thick / 2, y, c);
        }
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: [u8; 3]) {
    for (k, ch) in s.chars().enumerate() {
        let glyph = BASIC_LEGACY[if ch.is_ascii() { ch as usize } else { '?' as usize }];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    put(img, x + 8 * k as i64 + col, y + row as i64, c);
                }
            }
        }
    }
}

pub fn pr_png(reports: &[(String, MetricReport)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W as u32, H as u32, Rgb([255, 255, 255]));
    let grey = [220, 220, 220];
    let black = [0, 0, 0];
    for i in 0..=10 {
        let v = f64::from(i) / 10.0;
        line(&mut img, to_px(v, 0.0), to_px(v, 1.0), grey, 1);
        line(&mut img, to_px(0.0, v), to_px(1.0, v), grey, 1);
        let (x, _) = to_px(v, 0.0);
        let (_, y) = to_px(0.0, v);
        text(&mut img, x as i64 - 12, (H - MARGIN) as i64 + 8, &format!("{v:.1}"), black);
        text(&mut img, MARGIN as i64 - 30, y as i64 - 4, &format!("{v:.1}"), black);
    }
    for (a, b) in [((0.0, 0.0), (1.0, 0.0)), ((0.0, 0.0), (0.0, 1.0)), ((1.0, 0.0), (1.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))] {
        line(&mut img, to_px(a.0, a.1), to_px(b.0, b.1), black, 1);
    }
    text(&mut img, (W / 2.0) as i64 - 24, (H - 20.0) as i64, "Recall", black);
    text(&mut img, 4, (MARGIN - 20.0) as i64, "Precision", black);
    for (i, (name, r)) in reports.iter().enumerate() {
        let c = colour(i);
        let pts = drawn(&r.curve);
        for w in pts.windows(2) {
            line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), c, 2);
        }
        let ly = MARGIN + 16.0 + 14.0 * i as f64;
        let lx = MARGIN + 12.0;
        line(&mut img, (lx, ly), (lx + 20.0, ly), c, 3);
        text(&mut img, (lx + 26.0) as i64, ly as i64 - 4, &legend(name, r), black);
    }
    img
}

/// Concatenates `ablation.csv` files, keeping one header.
pub fn merge_ablation(path: &Path, tables: &[PathBuf]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header_written = false;
    for t in tables {
        let mut r = csv::Reader::from_path(t).map_err(csv_err(t))?;
        if !header_written {
            let mut h = csv::StringRecord::from(vec!["run"]);
            h.extend(r.headers().map_err(csv_err(t))?.iter());
            w.write_record(&h).map_err(csv_err(path))?;
            header_written = true;
        }
        let run = t.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or("");
        for rec in r.records() {
            let rec = rec.map_err(csv_err(t))?;
            let mut row = csv::StringRecord::from(vec![run]);
            row.extend(rec.iter());
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
