//! Hand-written SVG: profile curves at a few times, and the facet history
//! (facets as horizontal bars, time increasing upward).

use std::fmt::Write as _;

use serde::Deserialize;

use crate::error::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;
const MAX_CURVES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub time: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FacetRow {
    pub t: f64,
    pub index: usize,
    pub left: f64,
    pub right: f64,
    pub height: f64,
    pub kind: String,
    pub length: f64,
}

#[derive(Deserialize)]
struct SnapshotRow {
    t: f64,
    x: f64,
    u: f64,
}

fn parse_err(e: csv::Error) -> CliError {
    CliError::Parse(format!("csv: {e}"))
}

/// Groups `snapshots.csv` rows by time.
pub fn read_profiles(text: &str) -> Result<Vec<Profile>, CliError> {
    let mut out: Vec<Profile> = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let r: SnapshotRow = row.map_err(parse_err)?;
        match out.last_mut() {
            Some(p) if p.time == r.t => p.points.push((r.x, r.u)),
            _ => out.push(Profile {
                time: r.t,
                points: vec![(r.x, r.u)],
            }),
        }
    }
    Ok(out)
}

pub fn read_facets(text: &str) -> Result<Vec<FacetRow>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(parse_err))
        .collect()
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(y0: f64, y1: f64) -> Self {
        let (y0, y1) = if y1 > y0 {
            (y0, y1)
        } else {
            (y0 - 0.5, y0 + 0.5)
        };
        Self {
            x0: 0.0,
            x1: 1.0,
            y0,
            y1,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str, frame: &Frame, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    );
    let (l, r, b, t) = (
        frame.px(0.0),
        frame.px(1.0),
        frame.py(frame.y0),
        frame.py(frame.y1),
    );
    let _ = writeln!(
        s,
        "<path d=\"M{l:.2} {t:.2} L{l:.2} {b:.2} L{r:.2} {b:.2}\" stroke=\"black\" fill=\"none\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{l:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">0</text>\
         <text x=\"{r:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1</text>",
        b + 14.0,
        b + 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"4\" y=\"{t:.2}\" font-family=\"sans-serif\" font-size=\"11\">{y_label} {:.4e}</text>\
         <text x=\"4\" y=\"{b:.2}\" font-family=\"sans-serif\" font-size=\"11\">{y_label} {:.4e}</text>",
        frame.y1, frame.y0
    );
    s
}

/// Grey-to-black ramp over `0..n`.
fn shade(i: usize, n: usize) -> String {
    let g = if n <= 1 { 0 } else { 180 - 180 * i / (n - 1) };
    format!("rgb({g},{g},{g})")
}

/// Up to eight profiles evenly spaced through the run, oldest lightest.
pub fn profile_svg(profiles: &[Profile]) -> String {
    let picked: Vec<&Profile> = if profiles.len() <= MAX_CURVES {
        profiles.iter().collect()
    } else {
        (0..MAX_CURVES)
            .map(|j| &profiles[j * (profiles.len() - 1) / (MAX_CURVES - 1)])
            .collect()
    };
    let (lo, hi) = picked
        .iter()
        .flat_map(|p| p.points.iter().map(|q| q.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    let frame = if lo.is_finite() {
        Frame::new(lo, hi)
    } else {
        Frame::new(0.0, 1.0)
    };
    let mut s = header("profiles u(x, t)", &frame, "u");
    for (i, p) in picked.iter().enumerate() {
        let mut d = String::new();
        for (j, (x, u)) in p.points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2} ",
                if j == 0 { "M" } else { "L" },
                frame.px(*x),
                frame.py(*u)
            );
        }
        let _ = writeln!(
            s,
            "<path d=\"{}\" stroke=\"{}\" fill=\"none\" stroke-width=\"1.2\"><title>t = {:.6e}</title></path>",
            d.trim_end(),
            shade(i, picked.len()),
            p.time
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Each facet of each snapshot as a bar at its time; max facets red, min
/// facets blue. Facets across `x = 1` are split in two.
pub fn facet_history_svg(rows: &[FacetRow]) -> String {
    let t_max = rows.iter().map(|r| r.t).fold(0.0f64, f64::max);
    let frame = Frame::new(0.0, t_max);
    let mut s = header("facet history", &frame, "t");
    for r in rows {
        let colour = if r.kind == "max" {
            "#c0392b"
        } else {
            "#2471a3"
        };
        let y = frame.py(r.t);
        let pieces: Vec<(f64, f64)> = if r.left <= r.right {
            vec![(r.left, r.right)]
        } else {
            vec![(r.left, 1.0), (0.0, r.right)]
        };
        for (a, b) in pieces {
            let _ = writeln!(
                s,
                "<path d=\"M{:.2} {y:.2} L{:.2} {y:.2}\" stroke=\"{colour}\" stroke-width=\"1\"/>",
                frame.px(a),
                frame.px(b)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_grouped_by_time() {
        let text = "t,x,u,kappa\n0,0,1,0\n0,0.5,2,0\n1,0,3,0\n1,0.5,4,0\n";
        let p = read_profiles(text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].points, vec![(0.0, 3.0), (0.5, 4.0)]);
        let svg = profile_svg(&p);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<title>").count(), 2);
    }

    #[test]
    fn wrapping_facets_are_split() {
        let text = "t,index,left,right,height,kind,length\n0.1,0,0.9,0.1,1,max,0.2\n0.1,1,0.4,0.6,0,min,0.2\n";
        let rows = read_facets(text).unwrap();
        let svg = facet_history_svg(&rows);
        assert_eq!(svg.matches("#c0392b").count(), 2);
        assert_eq!(svg.matches("#2471a3").count(), 1);
    }

    #[test]
    fn empty_inputs_still_render() {
        assert!(profile_svg(&[]).contains("</svg>"));
        assert!(facet_history_svg(&[]).contains("</svg>"));
        assert!(read_facets("t,index,left,right,height,kind,length\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(read_profiles("t,x,u,kappa\n0,zero,1,0\n").is_err());
    }
}
