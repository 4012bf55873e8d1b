//! Patient records, severity labels, dataset assembly, class rebalancing,
//! and the stratified train/val/test split.
//!
//! Severity is ordinal with four grades keyed to AHI (events/hour):
//! `[0,5)` Normal, `[5,15)` Mild, `[15,30)` Moderate, `>=30` Severe. A
//! dataset pairs each patient record with that subject's landmark mesh;
//! rebalancing (random oversampling or SMOTE) is applied to the training
//! split only, after splitting, so evaluation distributions stay untouched.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::FaceMesh;
use crate::rng;

/// Number of severity grades.
pub const N_CLASSES: usize = 4;

/// Ordinal OSAHS severity grade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Severity {
    Normal,
    Mild,
    Moderate,
    Severe,
}

pub const ALL_SEVERITIES: [Severity; N_CLASSES] = [
    Severity::Normal,
    Severity::Mild,
    Severity::Moderate,
    Severity::Severe,
];

impl Severity {
    /// Zero-based class index (Normal = 0 ... Severe = 3).
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based ordinal encoding (Normal = 1 ... Severe = 4).
    pub fn ordinal(self) -> usize {
        self.index() + 1
    }

    pub fn from_index(i: usize) -> Result<Self> {
        ALL_SEVERITIES
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("class index {i} out of range 0..{N_CLASSES}")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Normal => "Normal",
            Severity::Mild => "Mild",
            Severity::Moderate => "Moderate",
            Severity::Severe => "Severe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Severity::Normal),
            "mild" => Ok(Severity::Mild),
            "moderate" => Ok(Severity::Moderate),
            "severe" => Ok(Severity::Severe),
            other => Err(Error::Input(format!("unknown severity {other:?}"))),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps an apnea-hypopnea index to its severity grade. The cut-points are
/// half-open from below: 5 is Mild, 15 is Moderate, 30 is Severe.
pub fn label_from_ahi(ahi: f64) -> Result<Severity> {
    if !ahi.is_finite() || ahi < 0.0 {
        return Err(Error::Input(format!("AHI must be finite and >= 0, got {ahi}")));
    }
    Ok(if ahi < 5.0 {
        Severity::Normal
    } else if ahi < 15.0 {
        Severity::Mild
    } else if ahi < 30.0 {
        Severity::Moderate
    } else {
        Severity::Severe
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(Error::Input(format!("unknown gender {other:?}"))),
        }
    }
}

/// Clinical attributes of one subject. `ahi` and `severity` are optional on
/// input; a training row must resolve a label from at least one of them.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub gender: Gender,
    pub age: f64,
    pub neck_cm: f64,
    pub bmi: f64,
    pub whr: f64,
    pub hypertension: bool,
    pub diabetes: bool,
    pub heart_disease: bool,
    pub hyperlipidemia: bool,
    pub ahi: Option<f64>,
    pub severity: Option<Severity>,
}

impl PatientRecord {
    /// Range checks on the physiology fields.
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, f64, f64); 4] = [
            ("age", self.age, 0.0, 130.0),
            ("neck_cm", self.neck_cm, 20.0, 60.0),
            ("bmi", self.bmi, 10.0, 60.0),
            ("whr", self.whr, 0.5, 1.5),
        ];
        for (name, v, lo, hi) in checks {
            if !v.is_finite() || v <= lo || v >= hi {
                return Err(Error::Input(format!(
                    "record {:?}: {name} = {v} outside ({lo}, {hi})",
                    self.id
                )));
            }
        }
        if let Some(ahi) = self.ahi {
            if !ahi.is_finite() || ahi < 0.0 {
                return Err(Error::Input(format!(
                    "record {:?}: AHI = {ahi} must be >= 0",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// The training label: explicit severity if present, otherwise derived
    /// from AHI. When both exist they must agree.
    pub fn resolve_label(&self) -> Result<Severity> {
        match (self.severity, self.ahi) {
            (Some(sev), Some(ahi)) => {
                let derived = label_from_ahi(ahi)?;
                if derived != sev {
                    return Err(Error::Input(format!(
                        "record {:?}: severity {sev} contradicts AHI {ahi} ({derived})",
                        self.id
                    )));
                }
                Ok(sev)
            }
            (Some(sev), None) => Ok(sev),
            (None, Some(ahi)) => label_from_ahi(ahi),
            (None, None) => Err(Error::Input(format!(
                "record {:?}: neither severity nor AHI present",
                self.id
            ))),
        }
    }
}

/// One subject's full feature bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub record: PatientRecord,
    pub mesh: FaceMesh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub subject: Subject,
    pub label: Severity,
}

/// A labeled multimodal dataset. Examples keep their assembly order;
/// everything that shuffles does so behind an explicit seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<LabeledExample>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for ex in &self.examples {
            counts[ex.label.index()] += 1;
        }
        counts
    }

    pub fn ids(&self) -> Vec<&str> {
        self.examples
            .iter()
            .map(|e| e.subject.record.id.as_str())
            .collect()
    }
}

/// Pairs records with meshes by subject id and resolves labels. Every
/// record must have a mesh; the error names the first subject missing one.
pub fn assemble(records: Vec<PatientRecord>, meshes: Vec<FaceMesh>) -> Result<LabeledDataset> {
    let mut mesh_by_id: HashMap<String, FaceMesh> = HashMap::new();
    for mesh in meshes {
        if mesh_by_id.insert(mesh.subject_id.clone(), mesh).is_some() {
            return Err(Error::Input("duplicate mesh subject id".into()));
        }
    }
    let mut examples = Vec::with_capacity(records.len());
    for record in records {
        record.validate()?;
        let label = record.resolve_label()?;
        let mesh = mesh_by_id.remove(&record.id).ok_or_else(|| {
            Error::Lookup(format!("no mesh for subject {:?}", record.id))
        })?;
        examples.push(LabeledExample {
            subject: Subject { record, mesh },
            label,
        });
    }
    Ok(LabeledDataset { examples })
}

fn per_class_indices(d: &LabeledDataset) -> [Vec<usize>; N_CLASSES] {
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, ex) in d.examples.iter().enumerate() {
        by_class[ex.label.index()].push(i);
    }
    by_class
}

/// Random oversampling: duplicates minority-class examples uniformly with
/// replacement until every class matches the majority count. Originals keep
/// their order; duplicates are appended class by class. A balanced input
/// comes back unchanged. Every class must be nonempty.
pub fn random_oversample(d: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let by_class = per_class_indices(d);
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.is_empty() {
            return Err(Error::Resample(format!(
                "class {} has no examples to oversample",
                Severity::from_index(c)?
            )));
        }
    }
    let mut out = d.clone();
    let mut rng = rng::stream(seed, "ros");
    for idxs in by_class.iter() {
        for _ in idxs.len()..target {
            let &pick = idxs.choose(&mut rng).expect("nonempty class");
            out.examples.push(d.examples[pick].clone());
        }
    }
    Ok(out)
}

/// Numeric feature bundle used for SMOTE distances and interpolation:
/// clinical numerics followed by the flattened mesh.
fn numeric_bundle(s: &Subject) -> Vec<f64> {
    let mut v = vec![s.record.age, s.record.neck_cm, s.record.bmi, s.record.whr];
    for p in s.record.id.is_empty().then_some(&[][..]).unwrap_or(s.mesh.landmarks()) {
        v.extend_from_slice(p);
    }
    v
}

/// Linear interpolation `base + u * (neighbor - base)` over the numeric
/// fields (clinical numerics, AHI when both sides carry one, every landmark
/// coordinate). Categorical fields come from `base`. The caller supplies
/// the new id and the shared class label.
pub fn interpolate_subjects(
    base: &Subject,
    neighbor: &Subject,
    u: f64,
    new_id: String,
) -> Subject {
    let lerp = |a: f64, b: f64| a + u * (b - a);
    let mut mesh_points = base.mesh.landmarks().to_vec();
    for (p, q) in mesh_points.iter_mut().zip(neighbor.mesh.landmarks()) {
        for k in 0..3 {
            p[k] = lerp(p[k], q[k]);
        }
    }
    let record = PatientRecord {
        id: new_id.clone(),
        gender: base.record.gender,
        age: lerp(base.record.age, neighbor.record.age),
        neck_cm: lerp(base.record.neck_cm, neighbor.record.neck_cm),
        bmi: lerp(base.record.bmi, neighbor.record.bmi),
        whr: lerp(base.record.whr, neighbor.record.whr),
        hypertension: base.record.hypertension,
        diabetes: base.record.diabetes,
        heart_disease: base.record.heart_disease,
        hyperlipidemia: base.record.hyperlipidemia,
        ahi: match (base.record.ahi, neighbor.record.ahi) {
            (Some(a), Some(b)) => Some(lerp(a, b)),
            _ => None,
        },
        severity: base.record.severity,
    };
    Subject {
        record,
        mesh: FaceMesh::new(new_id, mesh_points).expect("interpolated mesh stays valid"),
    }
}

/// SMOTE: synthesizes minority examples by interpolating toward one of the
/// `k` nearest same-class neighbors (Euclidean over the numeric bundle) at a
/// uniform random fraction. A single-example class cannot interpolate and
/// falls back to duplication with a warning. Balanced input is unchanged.
pub fn smote_oversample(d: &LabeledDataset, k: usize, seed: u64) -> Result<LabeledDataset> {
    if k == 0 {
        return Err(Error::Parameter("SMOTE needs k >= 1 neighbors".into()));
    }
    let by_class = per_class_indices(d);
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.is_empty() {
            return Err(Error::Resample(format!(
                "class {} has no examples to oversample",
                Severity::from_index(c)?
            )));
        }
    }
    let mut out = d.clone();
    let mut rng = rng::stream(seed, "smote");
    for (c, idxs) in by_class.iter().enumerate() {
        let deficit = target - idxs.len();
        if deficit == 0 {
            continue;
        }
        if idxs.len() == 1 {
            log::warn!(
                "SMOTE: class {} has a single example; duplicating instead of interpolating",
                Severity::from_index(c)?
            );
            for _ in 0..deficit {
                out.examples.push(d.examples[idxs[0]].clone());
            }
            continue;
        }
        // Pairwise distances once per class; neighbor lists exclude self.
        let bundles: Vec<Vec<f64>> = idxs
            .iter()
            .map(|&i| numeric_bundle(&d.examples[i].subject))
            .collect();
        let k_eff = k.min(idxs.len() - 1);
        let neighbors: Vec<Vec<usize>> = (0..idxs.len())
            .map(|a| {
                let mut order: Vec<usize> = (0..idxs.len()).filter(|&b| b != a).collect();
                order.sort_by(|&p, &q| {
                    let dp = sq_dist(&bundles[a], &bundles[p]);
                    let dq = sq_dist(&bundles[a], &bundles[q]);
                    dp.partial_cmp(&dq).unwrap_or(std::cmp::Ordering::Equal)
                });
                order.truncate(k_eff);
                order
            })
            .collect();
        for n in 0..deficit {
            let a = rng.gen_range(0..idxs.len());
            let b = neighbors[a][rng.gen_range(0..k_eff)];
            let u: f64 = rng.gen_range(0.0..1.0);
            let base = &d.examples[idxs[a]];
            let id = format!("smote-{}-{}", Severity::from_index(c)?.as_str().to_lowercase(), n);
            let subject = interpolate_subjects(&base.subject, &d.examples[idxs[b]].subject, u, id);
            out.examples.push(LabeledExample {
                subject,
                label: base.label,
            });
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Stratified 80/10/10 split. Within each class, indices are shuffled by the
/// seed and allocated by largest-remainder rounding (remainder ties resolve
/// train, then val, then test). Every class needs at least 3 examples.
pub fn stratified_split(
    d: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    const FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];
    let by_class = per_class_indices(d);
    let mut rng = rng::stream(seed, "split");
    let mut split_indices: [Vec<usize>; 3] = Default::default();
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        if idxs.len() < 3 {
            return Err(Error::Resample(format!(
                "class {} has {} examples; need at least 3 to stratify",
                Severity::from_index(c)?,
                idxs.len()
            )));
        }
        let mut shuffled = idxs.clone();
        shuffled.shuffle(&mut rng);
        let n = shuffled.len();
        let mut alloc = [0usize; 3];
        let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(3);
        let mut assigned = 0;
        for s in 0..3 {
            let quota = FRACTIONS[s] * n as f64;
            alloc[s] = quota.floor() as usize;
            assigned += alloc[s];
            remainders.push((s, quota - quota.floor()));
        }
        // Largest fractional parts win the leftovers; ties keep split order.
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for i in 0..n - assigned {
            alloc[remainders[i].0] += 1;
        }
        let mut cursor = 0;
        for s in 0..3 {
            split_indices[s].extend_from_slice(&shuffled[cursor..cursor + alloc[s]]);
            cursor += alloc[s];
        }
    }
    let build = |mut idxs: Vec<usize>| {
        idxs.sort_unstable();
        LabeledDataset {
            examples: idxs.iter().map(|&i| d.examples[i].clone()).collect(),
        }
    };
    let [train, val, test] = split_indices;
    Ok((build(train), build(val), build(test)))
}

/// Loads patient CSV (`id,gender,age,neck_cm,bmi,whr,htn,dm,hd,hld,ahi,severity`).
/// `ahi` and `severity` may be empty; booleans are 0/1.
pub fn load_patients(path: impl AsRef<Path>) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = [
        "id", "gender", "age", "neck_cm", "bmi", "whr", "htn", "dm", "hd", "hld", "ahi",
        "severity",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format {
            path: display,
            line: 1,
            msg: format!("expected header {expected:?}, got {headers:?}"),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let parse_f = |i: usize, name: &str| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| Error::Format {
                path: display.clone(),
                line,
                msg: format!("{name} is not a number: {:?}", field(i)),
            })
        };
        let parse_b = |i: usize, name: &str| -> Result<bool> {
            match field(i) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format {
                    path: display.clone(),
                    line,
                    msg: format!("{name} must be 0 or 1, got {other:?}"),
                }),
            }
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(Error::Format {
                path: display.clone(),
                line,
                msg: "empty id".into(),
            });
        }
        let rec = PatientRecord {
            id,
            gender: Gender::parse(field(1)).map_err(|e| Error::Format {
                path: display.clone(),
                line,
                msg: e.to_string(),
            })?,
            age: parse_f(2, "age")?,
            neck_cm: parse_f(3, "neck_cm")?,
            bmi: parse_f(4, "bmi")?,
            whr: parse_f(5, "whr")?,
            hypertension: parse_b(6, "htn")?,
            diabetes: parse_b(7, "dm")?,
            heart_disease: parse_b(8, "hd")?,
            hyperlipidemia: parse_b(9, "hld")?,
            ahi: if field(10).is_empty() {
                None
            } else {
                Some(parse_f(10, "ahi")?)
            },
            severity: if field(11).is_empty() {
                None
            } else {
                Some(Severity::parse(field(11)).map_err(|e| Error::Format {
                    path: display.clone(),
                    line,
                    msg: e.to_string(),
                })?)
            },
        };
        rec.validate().map_err(|e| Error::Format {
            path: display.clone(),
            line,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes patient CSV in the layout [`load_patients`] reads, with shortest
/// round-trip float formatting.
pub fn write_patients(path: impl AsRef<Path>, records: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "id", "gender", "age", "neck_cm", "bmi", "whr", "htn", "dm", "hd", "hld", "ahi",
        "severity",
    ])?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            r.gender.as_str(),
            &r.age.to_string(),
            &r.neck_cm.to_string(),
            &r.bmi.to_string(),
            &r.whr.to_string(),
            if r.hypertension { "1" } else { "0" },
            if r.diabetes { "1" } else { "0" },
            if r.heart_disease { "1" } else { "0" },
            if r.hyperlipidemia { "1" } else { "0" },
            &r.ahi.map(|a| a.to_string()).unwrap_or_default(),
            r.severity.map(|s| s.as_str()).unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MESH_LANDMARKS;

    fn mesh(id: &str, fill: f64) -> FaceMesh {
        FaceMesh::new(id, vec![[fill, fill, 0.0]; MESH_LANDMARKS]).unwrap()
    }

    fn record(id: &str, ahi: f64) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            gender: Gender::Male,
            age: 40.0,
            neck_cm: 38.0,
            bmi: 26.0,
            whr: 0.9,
            hypertension: false,
            diabetes: false,
            heart_disease: false,
            hyperlipidemia: false,
            ahi: Some(ahi),
            severity: None,
        }
    }

    fn dataset_with_counts(counts: [usize; 4]) -> LabeledDataset {
        let ahis = [2.0, 10.0, 20.0, 45.0];
        let mut examples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let id = format!("c{c}-{i}");
                examples.push(LabeledExample {
                    subject: Subject {
                        record: record(&id, ahis[c]),
                        mesh: mesh(&id, 0.4 + 0.0001 * i as f64),
                    },
                    label: Severity::from_index(c).unwrap(),
                });
            }
        }
        LabeledDataset { examples }
    }

    #[test]
    fn ahi_boundaries() {
        let probes = [
            (0.0, Severity::Normal),
            (4.999, Severity::Normal),
            (5.0, Severity::Mild),
            (14.999, Severity::Mild),
            (15.0, Severity::Moderate),
            (29.999, Severity::Moderate),
            (30.0, Severity::Severe),
            (1000.0, Severity::Severe),
        ];
        for (ahi, expected) in probes {
            assert_eq!(label_from_ahi(ahi).unwrap(), expected, "ahi {ahi}");
        }
        assert!(label_from_ahi(-0.1).is_err());
        assert!(label_from_ahi(f64::NAN).is_err());
    }

    #[test]
    fn label_resolution_rules() {
        let mut r = record("x", 10.0);
        assert_eq!(r.resolve_label().unwrap(), Severity::Mild);
        r.severity = Some(Severity::Mild);
        assert_eq!(r.resolve_label().unwrap(), Severity::Mild);
        r.severity = Some(Severity::Severe);
        assert!(r.resolve_label().is_err());
        r.ahi = None;
        assert_eq!(r.resolve_label().unwrap(), Severity::Severe);
        r.severity = None;
        assert!(r.resolve_label().is_err());
    }

    #[test]
    fn assemble_names_missing_mesh() {
        let records = vec![record("a", 3.0), record("b", 3.0)];
        let err = assemble(records, vec![mesh("a", 0.5)]).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
    }

    #[test]
    fn ros_balances_cohort_counts() {
        // The imbalanced severity profile 58/76/76/290 oversamples to 290
        // per class, 1160 total.
        let d = dataset_with_counts([58, 76, 76, 290]);
        let o = random_oversample(&d, 7).unwrap();
        assert_eq!(o.class_counts(), [290; 4]);
        assert_eq!(o.len(), 1160);
        // Prefix preserved, duplicates bit-identical to originals of the
        // same class.
        assert_eq!(&o.examples[..d.len()], &d.examples[..]);
        for dup in &o.examples[d.len()..] {
            assert!(d
                .examples
                .iter()
                .any(|orig| orig.label == dup.label && orig == dup));
        }
    }

    #[test]
    fn ros_tiny_and_balanced_cases() {
        let d = dataset_with_counts([1, 5, 3, 4]);
        let o = random_oversample(&d, 1).unwrap();
        assert_eq!(o.class_counts(), [5; 4]);

        let balanced = dataset_with_counts([4, 4, 4, 4]);
        let same = random_oversample(&balanced, 1).unwrap();
        assert_eq!(same, balanced);
    }

    #[test]
    fn ros_rejects_empty_class() {
        let d = dataset_with_counts([3, 3, 0, 3]);
        let err = random_oversample(&d, 1).unwrap_err();
        assert!(err.to_string().contains("Moderate"), "{err}");
    }

    #[test]
    fn interpolation_midpoint_and_bounds() {
        let a = Subject {
            record: record("a", 2.0),
            mesh: mesh("a", 0.0),
        };
        let mut b = Subject {
            record: record("b", 4.0),
            mesh: mesh("b", 1.0),
        };
        b.record.bmi = 30.0;
        let mid = interpolate_subjects(&a, &b, 0.5, "m".into());
        assert!((mid.record.bmi - 28.0).abs() < 1e-12);
        assert!((mid.record.ahi.unwrap() - 3.0).abs() < 1e-12);
        assert!((mid.mesh.landmarks()[0][0] - 0.5).abs() < 1e-12);
        // Any u in [0,1] stays within the endpoints.
        for &u in &[0.0, 0.25, 0.9, 1.0] {
            let s = interpolate_subjects(&a, &b, u, format!("u{u}"));
            assert!(s.record.bmi >= 26.0 && s.record.bmi <= 30.0);
        }
    }

    #[test]
    fn smote_balances_and_tags_synthetics() {
        let d = dataset_with_counts([6, 12, 9, 12]);
        let o = smote_oversample(&d, 3, 5).unwrap();
        assert_eq!(o.class_counts(), [12; 4]);
        assert_eq!(&o.examples[..d.len()], &d.examples[..]);
        let synth: Vec<_> = o.examples[d.len()..].iter().collect();
        assert_eq!(synth.len(), 9);
        assert!(synth.iter().all(|e| e.subject.record.id.starts_with("smote-")));
        // Coincident same-class neighbors interpolate to themselves: every
        // synthetic stays inside the class's coordinate range.
        for e in synth {
            let x = e.subject.mesh.landmarks()[0][0];
            assert!((0.39..=0.45).contains(&x), "interpolant escaped: {x}");
        }
    }

    #[test]
    fn smote_single_example_class_duplicates() {
        let d = dataset_with_counts([1, 4, 4, 4]);
        let o = smote_oversample(&d, 2, 9).unwrap();
        assert_eq!(o.class_counts(), [4; 4]);
        // The three fills of class Normal are literal copies.
        for e in &o.examples[d.len()..] {
            if e.label == Severity::Normal {
                assert_eq!(e, &d.examples[0]);
            }
        }
    }

    #[test]
    fn smote_balanced_is_identity() {
        let balanced = dataset_with_counts([5, 5, 5, 5]);
        assert_eq!(smote_oversample(&balanced, 3, 2).unwrap(), balanced);
    }

    #[test]
    fn split_single_class_is_80_10_10() {
        let d = dataset_with_counts([100, 0, 0, 0]);
        let (train, val, test) = stratified_split(&d, 3).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (80, 10, 10));
    }

    #[test]
    fn split_is_stratified_disjoint_and_seeded() {
        let d = dataset_with_counts([20, 30, 10, 40]);
        let (train, val, test) = stratified_split(&d, 3).unwrap();
        assert_eq!(train.class_counts(), [16, 24, 8, 32]);
        assert_eq!(val.class_counts(), [2, 3, 1, 4]);
        assert_eq!(test.class_counts(), [2, 3, 1, 4]);

        let mut all_ids: Vec<&str> = Vec::new();
        all_ids.extend(train.ids());
        all_ids.extend(val.ids());
        all_ids.extend(test.ids());
        let mut sorted = all_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), d.len(), "splits overlap or drop subjects");

        let (t2, v2, s2) = stratified_split(&d, 3).unwrap();
        assert_eq!((train, val, test), (t2, v2, s2));
        let (t3, _, _) = stratified_split(&d, 4).unwrap();
        assert_ne!(t3.ids(), stratified_split(&d, 3).unwrap().0.ids());
    }

    #[test]
    fn split_needs_three_per_class() {
        let d = dataset_with_counts([2, 10, 10, 10]);
        let err = stratified_split(&d, 1).unwrap_err();
        assert!(err.to_string().contains("Normal"), "{err}");
    }

    #[test]
    fn patient_csv_roundtrip() {
        let mut r1 = record("p1", 7.25);
        r1.severity = Some(Severity::Mild);
        r1.hypertension = true;
        let mut r2 = record("p2", 0.0);
        r2.ahi = None;
        r2.severity = Some(Severity::Normal);
        r2.gender = Gender::Female;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patients.csv");
        write_patients(&path, &[r1.clone(), r2.clone()]).unwrap();
        let loaded = load_patients(&path).unwrap();
        assert_eq!(loaded, vec![r1, r2]);
    }

    #[test]
    fn patient_csv_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patients.csv");
        std::fs::write(
            &path,
            "id,gender,age,neck_cm,bmi,whr,htn,dm,hd,hld,ahi,severity\n\
             p1,male,40,38,26,0.9,0,0,0,0,5,Mild\n\
             p2,male,forty,38,26,0.9,0,0,0,0,5,Mild\n",
        )
        .unwrap();
        let err = load_patients(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:") && msg.contains("forty"), "{msg}");
    }
}
