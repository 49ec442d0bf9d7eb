//! File formats: delimited datasets, JSON group families and finite
//! distributions, bundle and report files with provenance headers.
//!
//! Every artifact written by the CLI carries a header block holding the
//! tool version, a hash of the resolved configuration, and a parameter
//! echo. Floating-point values round-trip bit-exactly through the JSON
//! encodings (shortest-representation encoding).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::PredictorBundle;
use crate::data::{FeatureVector, FiniteDistribution, LabeledExample};
use crate::error::{Error, Result};
use crate::predicate::GroupFamily;
use crate::trace::TrainTrace;

/// Provenance header carried by every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub parameters: serde_json::Value,
}

impl FileHeader {
    pub fn new(parameters: serde_json::Value) -> Self {
        FileHeader {
            tool: "momentcal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(&parameters),
            parameters,
        }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of a configuration.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Load a delimited dataset: header row, first column id, last column
/// label, feature columns between.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Format(format!(
            "{}: need at least id and label columns",
            path.display()
        )));
    }
    let dim = headers.len() - 2;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |field: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: cannot parse {:?} as a number",
                    path.display(),
                    row_idx + 2,
                    field
                ))
            })
        };
        let id = record
            .get(0)
            .ok_or_else(|| Error::Format("missing id".into()))?
            .to_string();
        let mut values = Vec::with_capacity(dim);
        for c in 1..=dim {
            values.push(parse(record.get(c).unwrap_or(""))?);
        }
        let label = parse(record.get(dim + 1).unwrap_or(""))?;
        out.push(
            LabeledExample::new(FeatureVector::new(id, values)?, label).map_err(|e| {
                Error::Format(format!("{}:{}: {e}", path.display(), row_idx + 2))
            })?,
        );
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let dim = examples.first().map(|e| e.features.values.len()).unwrap_or(0);
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..dim).map(|c| format!("f{c}")));
    header.push("label".into());
    writer.write_record(&header)?;
    for ex in examples {
        let mut row = vec![ex.features.id.clone()];
        row.extend(ex.features.values.iter().map(|v| format!("{v}")));
        row.push(format!("{}", ex.label));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_group_family(path: &Path) -> Result<GroupFamily> {
    let text = fs::read_to_string(path)?;
    let parsed: GroupFamily = serde_json::from_str(&text)?;
    GroupFamily::new(parsed.groups)
}

pub fn save_group_family(path: &Path, family: &GroupFamily) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(family)?)?;
    Ok(())
}

pub fn load_distribution(path: &Path) -> Result<FiniteDistribution> {
    let text = fs::read_to_string(path)?;
    let parsed: FiniteDistribution = serde_json::from_str(&text)?;
    FiniteDistribution::new(parsed.support)
}

pub fn save_distribution(path: &Path, dist: &FiniteDistribution) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(dist)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleFile {
    header: FileHeader,
    bundle: PredictorBundle,
}

pub fn save_bundle(path: &Path, bundle: &PredictorBundle, header: FileHeader) -> Result<()> {
    let file = BundleFile {
        header,
        bundle: bundle.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a bundle file; accepts both the wrapped form (with header) and a
/// bare bundle encoding.
pub fn load_bundle(path: &Path) -> Result<(PredictorBundle, Option<FileHeader>)> {
    let text = fs::read_to_string(path)?;
    if let Ok(file) = serde_json::from_str::<BundleFile>(&text) {
        return Ok((file.bundle, Some(file.header)));
    }
    let bundle: PredictorBundle = serde_json::from_str(&text)?;
    Ok((bundle, None))
}

/// Trace file: one header line, then one JSON event per line.
pub fn save_trace(path: &Path, trace: &TrainTrace, header: &FileHeader) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "{}",
        serde_json::to_string(&serde_json::json!({ "header": header }))?
    )?;
    for event in &trace.events {
        writeln!(out, "{}", serde_json::to_string(event)?)?;
    }
    Ok(())
}

/// Generic report file: `{"header": ..., "report": ...}`.
pub fn save_report<T: Serialize>(path: &Path, header: &FileHeader, report: &T) -> Result<()> {
    let body = serde_json::json!({ "header": header, "report": report });
    fs::write(path, serde_json::to_string_pretty(&body)?)?;
    Ok(())
}

/// Delimited table with leading `#` provenance comments.
pub fn save_table(path: &Path, header: &FileHeader, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# tool: {} {}\n", header.tool, header.version));
    out.push_str(&format!("# config_hash: {}\n", header.config_hash));
    out.push_str(&format!("# parameters: {}\n", header.parameters));
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticSpec;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let examples = vec![
            LabeledExample::new(
                FeatureVector::new("a", vec![0.25, 0.5]).unwrap(),
                0.125,
            )
            .unwrap(),
            LabeledExample::new(
                FeatureVector::new("b", vec![1.0 / 3.0, 0.7]).unwrap(),
                1.0,
            )
            .unwrap(),
        ];
        save_dataset(&path, &examples).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(examples, loaded);
    }

    #[test]
    fn dataset_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "id,f0,label\nr1,0.5,oops\n").unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.csv:2"), "{msg}");
    }

    #[test]
    fn distribution_and_family_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dist = SyntheticSpec::FiniteGrid {
            points: 5,
            dim: 2,
            label_values: 2,
        }
        .distribution(1)
        .unwrap();
        let dpath = dir.path().join("dist.json");
        save_distribution(&dpath, &dist).unwrap();
        assert_eq!(dist, load_distribution(&dpath).unwrap());

        let family = GroupFamily::from_named(vec![
            ("all", crate::predicate::Predicate::always()),
            (
                "half",
                crate::predicate::Predicate::Threshold {
                    weights: vec![1.0, 0.0],
                    bias: 0.5,
                },
            ),
        ])
        .unwrap();
        let gpath = dir.path().join("groups.json");
        save_group_family(&gpath, &family).unwrap();
        assert_eq!(family, load_group_family(&gpath).unwrap());
    }

    #[test]
    fn bundle_file_round_trips_bit_exactly() {
        use crate::bundle::{GroupSel, MomentKind, SetDescriptor, UpdateRecord, UpdateTarget};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        let mut bundle = PredictorBundle::new(10, 4, vec![2, 4], MomentKind::Central).unwrap();
        bundle
            .push_update(UpdateRecord {
                target: UpdateTarget::Mean,
                step: -(0.1f64 / 3.0),
                selector: SetDescriptor {
                    group: GroupSel::Family(0),
                    mean_bucket: Some(1),
                    moment: None,
                },
            })
            .unwrap();
        let header = FileHeader::new(serde_json::json!({"alpha": 0.1}));
        save_bundle(&path, &bundle, header.clone()).unwrap();
        let (loaded, loaded_header) = load_bundle(&path).unwrap();
        assert_eq!(bundle, loaded);
        assert_eq!(
            bundle.updates[0].step.to_bits(),
            loaded.updates[0].step.to_bits()
        );
        assert_eq!(loaded_header.unwrap().config_hash, header.config_hash);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"alpha": 0.1, "beta": 0.2}));
        let b = config_hash(&serde_json::json!({"alpha": 0.1, "beta": 0.2}));
        assert_eq!(a, b);
        let c = config_hash(&serde_json::json!({"alpha": 0.1, "beta": 0.3}));
        assert_ne!(a, c);
    }
}
