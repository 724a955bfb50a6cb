use std::fmt::Write as _;

use trajopt::{Result, SplineTrajectory};

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const PAD: f64 = 40.0;

/// Evenly spaced times covering `[0, T]`.
pub fn sample_times(traj: &SplineTrajectory, samples: usize) -> Vec<f64> {
    let end = traj.end_time();
    (0..samples).map(|i| if i + 1 == samples { end } else { end * i as f64 / (samples - 1) as f64 }).collect()
}

/// `t` followed by `q, qd, qdd, qddd` of each joint.
pub fn samples_csv(traj: &SplineTrajectory, samples: usize) -> Result<String> {
    let mut out = String::from("t");
    for k in 0..traj.num_joints() {
        let _ = write!(out, ",q_{k},qd_{k},qdd_{k},qddd_{k}");
    }
    out.push('\n');
    for t in sample_times(traj, samples) {
        let _ = write!(out, "{t:.9e}");
        for s in traj.state(t)? {
            for v in s {
                let _ = write!(out, ",{v:.9e}");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Joint positions over time, one polyline per joint.
pub fn position_svg(traj: &SplineTrajectory, samples: usize) -> Result<String> {
    let times = sample_times(traj, samples);
    let mut series = vec![Vec::with_capacity(samples); traj.num_joints()];
    for &t in &times {
        for (k, s) in traj.state(t)?.iter().enumerate() {
            series[k].push(s[0]);
        }
    }
    let (lo, hi) = series.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
    let end = traj.end_time().max(f64::MIN_POSITIVE);
    let x = |t: f64| PAD + t / end * (WIDTH - 2.0 * PAD);
    let y = |v: f64| HEIGHT - PAD - (v - lo) / range * (HEIGHT - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="black" stroke-width="1"/>"#,
        b = HEIGHT - PAD,
        r = WIDTH - PAD
    );
    let _ =
        writeln!(out, r#"<text x="{}" y="{}" font-size="12">t = {end:.3} s</text>"#, WIDTH - PAD - 80.0, HEIGHT - 12.0);
    for (k, values) in series.iter().enumerate() {
        let points: Vec<String> = times.iter().zip(values).map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v))).collect();
        let _ = writeln!(
            out,
            r#"<polyline id="joint-{k}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[k % COLORS.len()],
            points.join(" ")
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
