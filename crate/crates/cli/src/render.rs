use std::fmt::Write as _;

use anyhow::{bail, Result};

use dmaop_core::io::SolutionFile;
use dmaop_core::transport::displacement;

pub const DEFAULT_TIMES: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

const WIDTH: f64 = 640.0;
const PAD: f64 = 20.0;
const POINT_RADIUS: f64 = 2.5;
const OUTLINE_SEGMENTS: usize = 128;

struct Frame {
    lo: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn map(&self, p: &[f64]) -> (f64, f64) {
        (
            PAD + (p[0] - self.lo[0]) * self.scale,
            self.height - PAD - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

/// One SVG document per time: the source triangles shaded by `f`, the target
/// outline and the vertices moved to `(1 - t) x_j + t η_j`.
pub fn frames(file: &SolutionFile, times: &[f64]) -> Result<Vec<String>> {
    let inst = file.instance()?;
    let dv = file.decision_vector()?;
    let mesh = &inst.mesh;
    if mesh.dim() != 2 {
        bail!("rendering needs a 2-D solution, got dimension {}", mesh.dim());
    }
    let outline = inst.target.outline(OUTLINE_SEGMENTS);

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let all = mesh.vertices().chain(dv.eta.chunks(2)).chain(outline.iter().map(|p| &p[..]));
    for p in all {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
    let scale = (WIDTH - 2.0 * PAD) / span;
    let frame = Frame {
        lo,
        scale,
        height: (hi[1] - lo[1]) * scale + 2.0 * PAD,
    };

    let density: Vec<f64> = (0..mesh.num_simplices())
        .map(|i| inst.f.eval(&mesh.barycenter(i)?.0))
        .collect::<Result<_, _>>()?;
    let fmax = density.iter().copied().fold(0.0, f64::max);

    let mut background = String::new();
    for (i, s) in mesh.simplices().enumerate() {
        let pts: Vec<String> = s
            .iter()
            .map(|&v| {
                let (x, y) = frame.map(mesh.vertex(v));
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let opacity = 0.08 + 0.42 * density[i] / fmax;
        writeln!(
            background,
            r##"<polygon points="{}" fill="#3b6fb6" fill-opacity="{opacity:.3}" stroke="#8a9bb0" stroke-width="0.5"/>"##,
            pts.join(" ")
        )?;
    }
    let outline_pts: Vec<String> = outline
        .iter()
        .map(|p| {
            let (x, y) = frame.map(p);
            format!("{x:.3},{y:.3}")
        })
        .collect();

    times
        .iter()
        .map(|&t| {
            let moved = displacement(mesh, &dv, t)?;
            let mut svg = String::new();
            writeln!(
                svg,
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{:.0}" viewBox="0 0 {WIDTH:.0} {:.3}">"#,
                frame.height.ceil(),
                frame.height
            )?;
            writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
            svg.push_str(&background);
            writeln!(
                svg,
                r##"<polygon points="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##,
                outline_pts.join(" ")
            )?;
            for p in &moved {
                let (x, y) = frame.map(&p.0);
                writeln!(svg, r##"<circle cx="{x:.3}" cy="{y:.3}" r="{POINT_RADIUS}" fill="#222"/>"##)?;
            }
            writeln!(
                svg,
                r##"<text x="{PAD:.0}" y="{:.0}" font-family="sans-serif" font-size="14">t = {t:.4}</text>"##,
                PAD - 4.0
            )?;
            svg.push_str("</svg>\n");
            Ok(svg)
        })
        .collect()
}
