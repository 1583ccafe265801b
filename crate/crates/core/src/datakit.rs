//! Pose label I/O, import of external label files, and the synthetic pose
//! sampler.
//!
//! Camera frame: +z forward, +x right, +y down.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::losses::PoseSample;
use crate::rotation::{canonicalize, sample_uniform};
use crate::seeding::item_rng;

/// Largest accepted deviation of a stored quaternion's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: String,
    pub image_path: Option<String>,
    pub pose: PoseSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumRange {
    pub min_range_m: f64,
    pub max_range_m: f64,
    pub margin_px: f64,
}

impl FrustumRange {
    pub fn new(min_range_m: f64, max_range_m: f64, margin_px: f64) -> Result<Self> {
        if !(min_range_m > 0.0 && min_range_m < max_range_m && max_range_m.is_finite() && margin_px >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min < max and margin >= 0, got [{min_range_m}, {max_range_m}] margin {margin_px}"
            )));
        }
        Ok(Self {
            min_range_m,
            max_range_m,
            margin_px,
        })
    }
}

impl Default for FrustumRange {
    fn default() -> Self {
        Self {
            min_range_m: 10.0,
            max_range_m: 40.0,
            margin_px: 32.0,
        }
    }
}

fn check_margin(k: &CameraIntrinsics, fr: &FrustumRange) -> Result<()> {
    if fr.margin_px >= k.width.min(k.height) as f64 / 2.0 {
        return Err(Error::InvalidConfig(format!(
            "margin {} px leaves no room in a {}x{} image",
            fr.margin_px, k.width, k.height
        )));
    }
    Ok(())
}

/// Uniform orientation, depth uniform in the range, and image position of
/// the origin uniform in the margin-inset rectangle.
pub fn sample_pose<R: Rng + ?Sized>(k: &CameraIntrinsics, fr: &FrustumRange, rng: &mut R) -> Result<PoseSample> {
    check_margin(k, fr)?;
    let q = sample_uniform(rng);
    let z = rng.random_range(fr.min_range_m..=fr.max_range_m);
    let u = rng.random_range(fr.margin_px..=k.width as f64 - fr.margin_px);
    let v = rng.random_range(fr.margin_px..=k.height as f64 - fr.margin_px);
    let t = k.inverse() * Vector3::new(u, v, 1.0) * z;
    Ok(PoseSample::new(q, t))
}

/// `count` samples with ids `000000, 000001, ...`, each drawn from its own
/// stream of `seed`.
pub fn generate(k: &CameraIntrinsics, fr: &FrustumRange, count: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    check_margin(k, fr)?;
    (0..count)
        .map(|i| {
            let mut rng = item_rng(seed, i as u64);
            Ok(LabeledSample {
                sample_id: format!("{i:06}"),
                image_path: None,
                pose: sample_pose(k, fr, &mut rng)?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    id: String,
    image: Option<String>,
    q_wxyz: [f64; 4],
    t_xyz_m: [f64; 3],
}

/// One JSONL line per sample. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_labels_to<W: Write>(samples: &[LabeledSample], mut out: W) -> Result<()> {
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::DuplicateId(s.sample_id.clone()));
        }
        let line = LabelLine {
            id: s.sample_id.clone(),
            image: s.image_path.clone(),
            q_wxyz: s.pose.q.to_array(),
            t_xyz_m: s.pose.t,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels(samples: &[LabeledSample], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_labels_to(samples, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn parse_line(text: &str, line: usize) -> Result<LabeledSample> {
    let err = |msg: String| Error::Parse { line, msg };
    let l: LabelLine = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    let norm = l.q_wxyz.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
        return Err(err(format!("quaternion norm {norm} is not 1")));
    }
    if l.t_xyz_m.iter().any(|c| !c.is_finite()) {
        return Err(err("non-finite translation".into()));
    }
    let q = canonicalize(l.q_wxyz).map_err(|e| err(e.to_string()))?;
    Ok(LabeledSample {
        sample_id: l.id,
        image_path: l.image,
        pose: PoseSample { q, t: l.t_xyz_m },
    })
}

/// Reads JSONL labels; blank lines are skipped and line numbers are 1-based.
pub fn read_labels_from<R: BufRead>(input: R) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_line(&line, i + 1)?;
        if !seen.insert(s.sample_id.clone()) {
            return Err(Error::DuplicateId(s.sample_id));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    read_labels_from(BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuatOrder {
    Wxyz,
    Xyzw,
}

/// Where to find each field in an external label record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportMapping {
    pub id_key: String,
    pub q_key: String,
    pub q_order: QuatOrder,
    pub t_key: String,
    /// Multiplies translations to give meters.
    #[serde(default = "unit_scale")]
    pub t_scale: f64,
    #[serde(default)]
    pub image_key: Option<String>,
}

fn unit_scale() -> f64 {
    1.0
}

impl ImportMapping {
    /// The field layout written by [`write_labels`].
    pub fn native() -> Self {
        Self {
            id_key: "id".into(),
            q_key: "q_wxyz".into(),
            q_order: QuatOrder::Wxyz,
            t_key: "t_xyz_m".into(),
            t_scale: 1.0,
            image_key: Some("image".into()),
        }
    }
}

fn numbers<const N: usize>(v: &Value, record: usize, key: &str) -> Result<[f64; N]> {
    let bad = || Error::Parse {
        line: record,
        msg: format!("`{key}` must be an array of {N} numbers"),
    };
    let arr = v.as_array().filter(|a| a.len() == N).ok_or_else(bad)?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_f64().ok_or_else(bad)?;
    }
    Ok(out)
}

fn convert(v: &Value, record: usize, m: &ImportMapping) -> Result<LabeledSample> {
    let get = |key: &str| {
        v.get(key).ok_or_else(|| Error::MissingKey {
            record,
            key: key.to_string(),
        })
    };
    let sample_id = match get(&m.id_key)? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => {
            return Err(Error::Parse {
                line: record,
                msg: format!("`{}` must be a string or number", m.id_key),
            })
        }
    };
    let raw = numbers::<4>(get(&m.q_key)?, record, &m.q_key)?;
    let wxyz = match m.q_order {
        QuatOrder::Wxyz => raw,
        QuatOrder::Xyzw => [raw[3], raw[0], raw[1], raw[2]],
    };
    let q = canonicalize(wxyz).map_err(|e| Error::Parse {
        line: record,
        msg: e.to_string(),
    })?;
    let t = numbers::<3>(get(&m.t_key)?, record, &m.t_key)?.map(|c| c * m.t_scale);
    let image_path = match &m.image_key {
        Some(k) => v.get(k).and_then(Value::as_str).map(str::to_string),
        None => None,
    };
    Ok(LabeledSample {
        sample_id,
        image_path,
        pose: PoseSample { q, t },
    })
}

/// Converts a JSON array of records, or JSONL, using `mapping`. Record
/// numbers in errors are 1-based.
pub fn import_external_str(text: &str, mapping: &ImportMapping) -> Result<Vec<LabeledSample>> {
    if !(mapping.t_scale.is_finite() && mapping.t_scale > 0.0) {
        return Err(Error::InvalidConfig(format!("t_scale must be positive, got {}", mapping.t_scale)));
    }
    let records: Vec<Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let s = convert(r, i + 1, mapping)?;
        if !seen.insert(s.sample_id.clone()) {
            return Err(Error::DuplicateId(s.sample_id));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn import_external(path: impl AsRef<Path>, mapping: &ImportMapping) -> Result<Vec<LabeledSample>> {
    import_external_str(&fs::read_to_string(path)?, mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::intrinsics_from_hfov;
    use crate::rotation::{geodesic_angle, Quaternion, Vec3};
    use proptest::prelude::*;

    fn camera() -> CameraIntrinsics {
        intrinsics_from_hfov(1080, 960, 90f64.to_radians()).unwrap()
    }

    #[test]
    fn sampled_poses_stay_in_frustum() {
        let k = camera();
        let fr = FrustumRange::default();
        let set = generate(&k, &fr, 10_000, 11).unwrap();
        for s in &set {
            let t = s.pose.translation();
            assert!(t.z >= 10.0 && t.z <= 40.0, "{t:?}");
            let (u, v) = k.project(&t).unwrap();
            let tol = 1e-9;
            assert!(u >= 32.0 - tol && u <= 1080.0 - 32.0 + tol);
            assert!(v >= 32.0 - tol && v <= 960.0 - 32.0 + tol);
        }
        assert!(generate(&k, &FrustumRange::new(10.0, 40.0, 480.0).unwrap(), 1, 0).is_err());
        assert!(FrustumRange::new(40.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let k = camera();
        let fr = FrustumRange::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_labels_to(&generate(&k, &fr, 50, 7).unwrap(), &mut a).unwrap();
        write_labels_to(&generate(&k, &fr, 50, 7).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_labels_to(&generate(&k, &fr, 50, 8).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn write_read_roundtrip() {
        let mut set = generate(&camera(), &FrustumRange::default(), 100, 3).unwrap();
        set[5].image_path = Some("img/000005.png".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels(&set, &path).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in set.iter().zip(&back) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.image_path, b.image_path);
            for (x, y) in a.pose.q.to_array().iter().zip(b.pose.q.to_array()) {
                assert!((x - y).abs() <= 1e-15);
            }
            assert_eq!(a.pose.t, b.pose.t);
        }
    }

    #[test]
    fn read_errors() {
        let good = r#"{"id":"a","image":null,"q_wxyz":[1,0,0,0],"t_xyz_m":[0,0,10]}"#;
        let short = r#"{"id":"b","image":null,"q_wxyz":[1,0,0],"t_xyz_m":[0,0,10]}"#;
        let text = format!("{good}\n{short}\n");
        match read_labels_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let unnormed = r#"{"id":"c","image":null,"q_wxyz":[1.1,0,0,0],"t_xyz_m":[0,0,10]}"#;
        assert!(matches!(read_labels_from(unnormed.as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(read_labels_from("".as_bytes()).unwrap().is_empty());
        let dup = format!("{good}\n{good}\n");
        assert!(matches!(read_labels_from(dup.as_bytes()), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn native_mapping_matches_reader() {
        let set = generate(&camera(), &FrustumRange::default(), 20, 5).unwrap();
        let mut buf = Vec::new();
        write_labels_to(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let a = read_labels_from(text.as_bytes()).unwrap();
        let b = import_external_str(&text, &ImportMapping::native()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn external_xyzw_and_millimeters() {
        let q = Quaternion::from_axis_angle(&Vec3::new(1.0, -2.0, 0.5), 0.8).unwrap();
        let [w, x, y, z] = q.to_array();
        let text = format!(
            r#"[{{"filename":"img1.jpg","q_vbs2tango":[{x},{y},{z},{w}],"r_Vo2To_vbs_true":[100.0,-250.0,12000.0]}}]"#
        );
        let mapping = ImportMapping {
            id_key: "filename".into(),
            q_key: "q_vbs2tango".into(),
            q_order: QuatOrder::Xyzw,
            t_key: "r_Vo2To_vbs_true".into(),
            t_scale: 0.001,
            image_key: Some("filename".into()),
        };
        let got = import_external_str(&text, &mapping).unwrap();
        assert_eq!(got[0].sample_id, "img1.jpg");
        assert_eq!(got[0].image_path.as_deref(), Some("img1.jpg"));
        assert!(geodesic_angle(&got[0].pose.q, &q) < 1e-12);
        assert_eq!(got[0].pose.t, [0.1, -0.25, 12.0]);

        let missing = r#"[{"filename":"a","q_vbs2tango":[0,0,0,1],"r_Vo2To_vbs_true":[0,0,1]},{"filename":"b","r_Vo2To_vbs_true":[0,0,1]}]"#;
        match import_external_str(missing, &mapping) {
            Err(Error::MissingKey { record, key }) => {
                assert_eq!(record, 2);
                assert_eq!(key, "q_vbs2tango");
            }
            other => panic!("{other:?}"),
        }
        let parsed: ImportMapping =
            serde_json::from_str(r#"{"id_key":"id","q_key":"q","q_order":"xyzw","t_key":"t"}"#).unwrap();
        assert_eq!(parsed.t_scale, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_property(seed in any::<u64>(), n in 0usize..40) {
            let set = generate(&camera(), &FrustumRange::default(), n, seed).unwrap();
            let mut buf = Vec::new();
            write_labels_to(&set, &mut buf).unwrap();
            let back = read_labels_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), set.len());
            for (a, b) in set.iter().zip(&back) {
                prop_assert!(geodesic_angle(&a.pose.q, &b.pose.q) < 1e-12);
                prop_assert_eq!(a.pose.t, b.pose.t);
                prop_assert!(b.pose.t[2] > 0.0);
            }
        }
    }
}
