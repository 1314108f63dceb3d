//! Line-oriented scene files.
//!
//! Format (all floats decimal, ≥ 9 significant digits):
//!
//! ```text
//! SCENE v1
//! SEED <u64>
//! DESCRIPTOR dim=<n> noise_sigma=<f> class_weight=<f>
//! OBJECTS <count>
//! <id> <class_id> <cx> <cy> <cz> <sx> <sy> <sz>
//! AGENTS <count>
//! AGENT <id> <high|ground> <max_range> <fov_half_angle> <detect_prob_base> \
//!       <obs_noise_base> <obs_noise_per_meter> <r00..r22 row-major> <tx ty tz>
//! CAMERA <flat key-value camera record>
//! QUERIES <agent_id> <count>
//! <owner> <px> <py> <pz> <sx> <sy> <sz> <confidence> <gt_id|-> <d0..d{dim-1}>
//! END
//! ```
//!
//! One `QUERIES` section per agent, in agent order. The `CAMERA` line
//! directly follows its `AGENT` line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::geometry::{CameraModel, RigidTransform, Vec3};
use crate::textio::{fmt_f64, parse_f64};

use super::{AgentConfig, DescriptorConfig, Query, Scene, SceneError, SceneObject, Vantage};

/// A scene plus the per-agent query lists stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub scene: Scene,
    /// `(agent_id, queries)` in the same order as `scene.agents`.
    pub queries: Vec<(u32, Vec<Query>)>,
}

/// Write a scene and its per-agent queries.
pub fn write_scene(
    w: &mut impl Write,
    scene: &Scene,
    queries: &[(u32, Vec<Query>)],
) -> std::io::Result<()> {
    writeln!(w, "SCENE v1")?;
    writeln!(w, "SEED {}", scene.seed)?;
    writeln!(
        w,
        "DESCRIPTOR dim={} noise_sigma={} class_weight={}",
        scene.descriptor.dim,
        fmt_f64(scene.descriptor.noise_sigma),
        fmt_f64(scene.descriptor.class_weight)
    )?;
    writeln!(w, "OBJECTS {}", scene.objects.len())?;
    for o in &scene.objects {
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            o.id,
            o.class_id,
            fmt_f64(o.center_glb.x),
            fmt_f64(o.center_glb.y),
            fmt_f64(o.center_glb.z),
            fmt_f64(o.size.x),
            fmt_f64(o.size.y),
            fmt_f64(o.size.z)
        )?;
    }
    writeln!(w, "AGENTS {}", scene.agents.len())?;
    for a in &scene.agents {
        let vantage = match a.vantage {
            Vantage::HighVantage => "high",
            Vantage::GroundLevel => "ground",
        };
        let mut line = format!(
            "AGENT {} {} {} {} {} {} {}",
            a.agent_id,
            vantage,
            fmt_f64(a.max_range),
            fmt_f64(a.fov_half_angle),
            fmt_f64(a.detect_prob_base),
            fmt_f64(a.obs_noise_base),
            fmt_f64(a.obs_noise_per_meter)
        );
        let r = a.pose_glb.rotation();
        for row in 0..3 {
            for col in 0..3 {
                line.push(' ');
                line.push_str(&fmt_f64(r[(row, col)]));
            }
        }
        let t = a.pose_glb.translation();
        for v in [t.x, t.y, t.z] {
            line.push(' ');
            line.push_str(&fmt_f64(v));
        }
        writeln!(w, "{line}")?;
        writeln!(w, "CAMERA {}", a.camera.to_record())?;
    }
    for (agent_id, qs) in queries {
        writeln!(w, "QUERIES {} {}", agent_id, qs.len())?;
        for q in qs {
            let gt = q
                .gt_object_id
                .map(|id| id.to_string())
                .unwrap_or_else(|| "-".to_string());
            let mut line = format!(
                "{} {} {} {} {} {} {} {} {}",
                q.owner_agent,
                fmt_f64(q.position.x),
                fmt_f64(q.position.y),
                fmt_f64(q.position.z),
                fmt_f64(q.size.x),
                fmt_f64(q.size.y),
                fmt_f64(q.size.z),
                fmt_f64(q.confidence),
                gt
            );
            for d in &q.descriptor {
                line.push(' ');
                line.push_str(&fmt_f64(*d));
            }
            writeln!(w, "{line}")?;
        }
    }
    writeln!(w, "END")?;
    Ok(())
}

struct LineReader<R> {
    inner: R,
    line_no: usize,
}

impl<R: BufRead> LineReader<R> {
    fn next_line(&mut self) -> Result<String, SceneError> {
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = self.inner.read_line(&mut buf)?;
            self.line_no += 1;
            if n == 0 {
                return Err(self.err("unexpected end of file"));
            }
            let trimmed = buf.trim();
            if !trimmed.is_empty() {
                return Ok(trimmed.to_string());
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> SceneError {
        SceneError::Parse {
            line: self.line_no,
            msg: msg.into(),
        }
    }
}

fn take<'a>(
    parts: &mut impl Iterator<Item = &'a str>,
    what: &str,
    line: usize,
) -> Result<&'a str, SceneError> {
    parts.next().ok_or_else(|| SceneError::Parse {
        line,
        msg: format!("missing field: {what}"),
    })
}

fn parse_float(s: &str, line: usize) -> Result<f64, SceneError> {
    parse_f64(s).map_err(|msg| SceneError::Parse { line, msg })
}

/// Read a scene written by [`write_scene`].
pub fn read_scene(reader: impl BufRead) -> Result<SceneFile, SceneError> {
    let mut r = LineReader {
        inner: reader,
        line_no: 0,
    };
    let header = r.next_line()?;
    if header != "SCENE v1" {
        return Err(r.err(format!("bad header {header:?}")));
    }
    let seed_line = r.next_line()?;
    let seed = seed_line
        .strip_prefix("SEED ")
        .and_then(|s| s.trim().parse::<u64>().ok())
        .ok_or_else(|| r.err("expected SEED <u64>"))?;

    let desc_line = r.next_line()?;
    let desc_body = desc_line
        .strip_prefix("DESCRIPTOR ")
        .ok_or_else(|| r.err("expected DESCRIPTOR"))?;
    let mut dim = None;
    let mut noise_sigma = None;
    let mut class_weight = None;
    for part in desc_body.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| r.err(format!("bad descriptor field {part:?}")))?;
        match k {
            "dim" => dim = v.parse::<usize>().ok(),
            "noise_sigma" => noise_sigma = v.parse::<f64>().ok(),
            "class_weight" => class_weight = v.parse::<f64>().ok(),
            _ => return Err(r.err(format!("unknown descriptor field {k:?}"))),
        }
    }
    let descriptor = DescriptorConfig {
        dim: dim.ok_or_else(|| r.err("descriptor dim missing"))?,
        noise_sigma: noise_sigma.ok_or_else(|| r.err("descriptor noise_sigma missing"))?,
        class_weight: class_weight.ok_or_else(|| r.err("descriptor class_weight missing"))?,
    };

    let objects_line = r.next_line()?;
    let n_objects = objects_line
        .strip_prefix("OBJECTS ")
        .and_then(|s| s.trim().parse::<usize>().ok())
        .ok_or_else(|| r.err("expected OBJECTS <count>"))?;
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let line = r.next_line()?;
        let ln = r.line_no;
        let mut parts = line.split_whitespace();
        let id = take(&mut parts, "id", ln)?
            .parse::<u64>()
            .map_err(|e| r.err(format!("bad object id: {e}")))?;
        let class_id = take(&mut parts, "class_id", ln)?
            .parse::<u32>()
            .map_err(|e| r.err(format!("bad class id: {e}")))?;
        let mut f = |what: &str| -> Result<f64, SceneError> {
            parse_float(take(&mut parts, what, ln)?, ln)
        };
        let center = Vec3::new(f("cx")?, f("cy")?, f("cz")?);
        let size = Vec3::new(f("sx")?, f("sy")?, f("sz")?);
        objects.push(SceneObject {
            id,
            class_id,
            center_glb: center,
            size,
        });
    }

    let agents_line = r.next_line()?;
    let n_agents = agents_line
        .strip_prefix("AGENTS ")
        .and_then(|s| s.trim().parse::<usize>().ok())
        .ok_or_else(|| r.err("expected AGENTS <count>"))?;
    let mut agents = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let line = r.next_line()?;
        let ln = r.line_no;
        let body = line
            .strip_prefix("AGENT ")
            .ok_or_else(|| r.err("expected AGENT line"))?;
        let mut parts = body.split_whitespace();
        let agent_id = take(&mut parts, "agent_id", ln)?
            .parse::<u32>()
            .map_err(|e| r.err(format!("bad agent id: {e}")))?;
        let vantage = match take(&mut parts, "vantage", ln)? {
            "high" => Vantage::HighVantage,
            "ground" => Vantage::GroundLevel,
            other => return Err(r.err(format!("unknown vantage {other:?}"))),
        };
        let mut f = |what: &str| -> Result<f64, SceneError> {
            parse_float(take(&mut parts, what, ln)?, ln)
        };
        let max_range = f("max_range")?;
        let fov_half_angle = f("fov_half_angle")?;
        let detect_prob_base = f("detect_prob_base")?;
        let obs_noise_base = f("obs_noise_base")?;
        let obs_noise_per_meter = f("obs_noise_per_meter")?;
        let mut rot = nalgebra::Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                rot[(row, col)] = f("rotation entry")?;
            }
        }
        let t = Vec3::new(f("tx")?, f("ty")?, f("tz")?);
        let pose_glb = RigidTransform::new(rot, t)?;

        let cam_line = r.next_line()?;
        let cam_body = cam_line
            .strip_prefix("CAMERA ")
            .ok_or_else(|| r.err("expected CAMERA line"))?;
        let camera = CameraModel::from_record(cam_body)?;

        agents.push(AgentConfig {
            agent_id,
            pose_glb,
            camera,
            vantage,
            max_range,
            fov_half_angle,
            detect_prob_base,
            obs_noise_base,
            obs_noise_per_meter,
        });
    }

    let mut queries = Vec::new();
    loop {
        let line = r.next_line()?;
        if line == "END" {
            break;
        }
        let ln = r.line_no;
        let body = line
            .strip_prefix("QUERIES ")
            .ok_or_else(|| r.err("expected QUERIES or END"))?;
        let mut parts = body.split_whitespace();
        let agent_id = take(&mut parts, "agent_id", ln)?
            .parse::<u32>()
            .map_err(|e| r.err(format!("bad agent id: {e}")))?;
        let count = take(&mut parts, "count", ln)?
            .parse::<usize>()
            .map_err(|e| r.err(format!("bad count: {e}")))?;
        let mut qs = Vec::with_capacity(count);
        for _ in 0..count {
            let line = r.next_line()?;
            let ln = r.line_no;
            let mut parts = line.split_whitespace();
            let owner_agent = take(&mut parts, "owner", ln)?
                .parse::<u32>()
                .map_err(|e| r.err(format!("bad owner: {e}")))?;
            let mut f = |what: &str| -> Result<f64, SceneError> {
                parse_float(take(&mut parts, what, ln)?, ln)
            };
            let position = Vec3::new(f("px")?, f("py")?, f("pz")?);
            let size = Vec3::new(f("sx")?, f("sy")?, f("sz")?);
            let confidence = f("confidence")?;
            let gt = take(&mut parts, "gt_id", ln)?;
            let gt_object_id = if gt == "-" {
                None
            } else {
                Some(
                    gt.parse::<u64>()
                        .map_err(|e| r.err(format!("bad gt id: {e}")))?,
                )
            };
            let descriptor: Result<Vec<f64>, SceneError> =
                parts.map(|s| parse_float(s, ln)).collect();
            let descriptor = descriptor?;
            qs.push(Query {
                owner_agent,
                position,
                size,
                descriptor,
                confidence,
                gt_object_id,
            });
        }
        queries.push((agent_id, qs));
    }

    Ok(SceneFile {
        scene: Scene {
            objects,
            agents,
            descriptor,
            seed,
        },
        queries,
    })
}

/// Save a scene file to a path.
pub fn save_scene_file(
    path: impl AsRef<Path>,
    scene: &Scene,
    queries: &[(u32, Vec<Query>)],
) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(&mut w, scene, queries)?;
    w.flush()?;
    Ok(())
}

/// Load a scene file from a path.
pub fn load_scene_file(path: impl AsRef<Path>) -> Result<SceneFile, SceneError> {
    read_scene(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, observe_all};
    use super::*;
    use crate::geometry::camera_pose_from_yaw_pitch;

    fn sample_scene() -> (Scene, Vec<(u32, Vec<Query>)>) {
        let mk = |id, pos: Vec3, yaw: f64, pitch: f64| AgentConfig {
            agent_id: id,
            pose_glb: RigidTransform::from_yaw_translation(yaw, pos),
            camera: CameraModel::new(
                1000.0,
                1000.0,
                960.0,
                540.0,
                camera_pose_from_yaw_pitch(pos, yaw, pitch),
            )
            .unwrap(),
            vantage: if pitch > 0.3 {
                Vantage::HighVantage
            } else {
                Vantage::GroundLevel
            },
            max_range: 120.0,
            fov_half_angle: 1.5,
            detect_prob_base: 0.9,
            obs_noise_base: 0.1,
            obs_noise_per_meter: 0.01,
        };
        let agents = vec![
            mk(0, Vec3::new(-30.0, 0.0, 1.6), 0.0, 0.0),
            mk(1, Vec3::new(25.0, 5.0, 25.0), 3.1, 0.9),
        ];
        let scene = generate_scene(12, 40.0, agents, 99).unwrap();
        let queries = observe_all(&scene, 4242);
        (scene, queries)
    }

    #[test]
    fn round_trip_is_exact() {
        let (scene, queries) = sample_scene();
        let mut buf = Vec::new();
        write_scene(&mut buf, &scene, &queries).unwrap();
        let parsed = read_scene(buf.as_slice()).unwrap();
        assert_eq!(parsed.scene, scene);
        assert_eq!(parsed.queries, queries);
    }

    #[test]
    fn writing_is_byte_deterministic() {
        let (scene, queries) = sample_scene();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_scene(&mut a, &scene, &queries).unwrap();
        write_scene(&mut b, &scene, &queries).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_reports_line() {
        let (scene, queries) = sample_scene();
        let mut buf = Vec::new();
        write_scene(&mut buf, &scene, &queries).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        match read_scene(cut.as_bytes()) {
            Err(SceneError::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
