//! ASCII PLY point clouds (vertices only).

use std::fmt::Write as _;

use nalgebra::Point3;

use crate::cloud::PointCloud;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("PLY: {0}")]
pub struct PlyError(String);

/// Coordinates are written as `f32`, which is also what the header declares.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 24);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
    }
    s
}

/// Reads the vertex element of an ASCII PLY; other properties are skipped.
pub fn parse_ply(text: &str) -> Result<PointCloud, PlyError> {
    let err = |m: String| PlyError(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing `ply` magic".into()));
    }
    let mut vertices = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut seen_format = false;
    loop {
        let line = lines.next().ok_or_else(|| err("header not terminated".into()))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", "1.0"] => seen_format = true,
            ["format", other, ..] => return Err(err(format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if vertices.is_some() {
                    return Err(err(format!("unsupported element `{name}` after vertices")));
                }
                in_vertex = *name == "vertex";
                if !in_vertex {
                    return Err(err(format!("unsupported element `{name}`")));
                }
                vertices = Some(count.parse::<usize>().map_err(|_| err(format!("bad vertex count `{count}`")))?);
            }
            ["property", "list", ..] => return Err(err("list properties are not supported".into())),
            ["property", _, name] if in_vertex => props.push((*name).to_string()),
            _ => return Err(err(format!("unexpected header line `{line}`"))),
        }
    }
    if !seen_format {
        return Err(err("missing format line".into()));
    }
    let n = vertices.ok_or_else(|| err("no vertex element".into()))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| err(format!("vertex has no `{name}` property")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let line = lines.next().ok_or_else(|| err(format!("expected {n} vertices, found {k}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(format!("vertex {k}: cannot parse `{line}`")))?;
        if vals.len() != props.len() {
            return Err(err(format!("vertex {k}: expected {} values, found {}", props.len(), vals.len())));
        }
        points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
    }
    Ok(PointCloud::from_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_text() {
        let c = PointCloud::from_points(vec![Point3::new(1.5, -2.0, 1000.0), Point3::new(0.1, 0.0, 512.25)]);
        assert_eq!(
            ply_string(&c),
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n\
             1.5 -2 1000\n0.1 0 512.25\n"
        );
    }

    #[test]
    fn round_trip_within_f32() {
        let pts: Vec<_> = (0..50)
            .map(|i| Point3::new(i as f64 * 1.37 - 30.0, (i * i) as f64 * 0.011, 700.0 + i as f64 / 3.0))
            .collect();
        let back = parse_ply(&ply_string(&PointCloud::from_points(pts.clone()))).unwrap();
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-3 * a.coords.norm());
        }
    }

    #[test]
    fn extra_properties_skipped() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 1\nproperty uchar red\nproperty float z\n\
                    property float y\nproperty float x\nend_header\n255 3 2 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn malformed_rejected() {
        for text in [
            "",
            "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
            "ply\nformat ascii 1.0\nelement face 1\nend_header\n",
        ] {
            assert!(parse_ply(text).is_err(), "{text:?}");
        }
    }
}
