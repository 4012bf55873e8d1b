//! Facial landmark meshes: loading, alignment, keypoint selection, and the
//! image-side token embedding.
//!
//! A mesh is the standard 468-point face topology. Meshes arrive as CSV
//! (`subject_id,landmark_index,x,y,z`), optionally with an affine sidecar
//! (`subject_id,sx,shx,tx,shy,sy,ty`) describing a 2D alignment applied to
//! x/y before anything else. Selected keypoint coordinates are flattened
//! into a feature vector, and [`image_token_nodes`] turns a (possibly
//! gated) feature vector into a token sequence for fusion: the vector is
//! zero-padded to `n_tokens` equal blocks, each block linearly projected to
//! `d_model` (no bias, so non-CLS rows are exactly linear in the features),
//! and a learnable CLS token is prepended. The CLS row is the learnable
//! embedding plus the mean of the content rows — the aggregation that makes
//! row 0 a usable classification summary.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};

/// Landmark count of the face topology used throughout.
pub const MESH_LANDMARKS: usize = 468;

/// Jawline and chin landmarks (lower face oval plus the chin cluster).
/// These are the default site of the planted signal in synthetic cohorts.
pub const JAW_CHIN: [usize; 24] = [
    356, 454, 323, 361, 288, 397, 365, 379, 378, 400, 377, 152, 148, 176, 149, 150, 136, 172, 58,
    132, 93, 234, 127, 175,
];

/// Nose bridge and tip landmarks.
pub const NOSE_BRIDGE: [usize; 8] = [6, 197, 195, 5, 4, 1, 19, 94];

/// Forehead and temple landmarks (upper face oval).
pub const UPPER_OVAL: [usize; 13] = [10, 338, 297, 332, 284, 251, 389, 162, 21, 54, 103, 67, 109];

/// Modality tag carried by token sequences through fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
    Fused,
}

/// A token-embedding matrix with its modality tag. Row 0 is always the CLS
/// position; rows 1.. are content tokens.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub modality: Modality,
}

impl TokenSequence {
    pub fn d_model(&self) -> usize {
        self.tokens.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.tokens.rows()
    }
}

/// One subject's landmark mesh. Construction guarantees exactly
/// [`MESH_LANDMARKS`] points with finite coordinates and x/y inside [0, 1]
/// (out-of-range input is min-max normalized per axis; z is unconstrained).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceMesh {
    pub subject_id: String,
    landmarks: Vec<[f64; 3]>,
}

impl FaceMesh {
    pub fn new(subject_id: impl Into<String>, landmarks: Vec<[f64; 3]>) -> Result<Self> {
        let subject_id = subject_id.into();
        if landmarks.len() != MESH_LANDMARKS {
            return Err(Error::Input(format!(
                "subject {subject_id:?}: expected {MESH_LANDMARKS} landmarks, got {}",
                landmarks.len()
            )));
        }
        for (i, p) in landmarks.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Input(format!(
                    "subject {subject_id:?}: non-finite coordinate at landmark {i}"
                )));
            }
        }
        let mut mesh = FaceMesh {
            subject_id,
            landmarks,
        };
        mesh.normalize_xy_if_needed();
        Ok(mesh)
    }

    pub fn landmarks(&self) -> &[[f64; 3]] {
        &self.landmarks
    }

    pub fn landmarks_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.landmarks
    }

    /// Min-max normalizes x and y independently when either leaves [0, 1]
    /// (e.g. pixel coordinates). A zero-span axis collapses to 0.0.
    fn normalize_xy_if_needed(&mut self) {
        for axis in 0..2 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in &self.landmarks {
                lo = lo.min(p[axis]);
                hi = hi.max(p[axis]);
            }
            if lo >= 0.0 && hi <= 1.0 {
                continue;
            }
            let span = hi - lo;
            for p in &mut self.landmarks {
                p[axis] = if span > 0.0 { (p[axis] - lo) / span } else { 0.0 };
            }
        }
    }
}

/// Parameters of a 2D affine alignment: `x' = sx*x + shx*y + tx`,
/// `y' = shy*x + sy*y + ty`. z passes through untouched.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineTheta {
    pub sx: f64,
    pub shx: f64,
    pub tx: f64,
    pub shy: f64,
    pub sy: f64,
    pub ty: f64,
}

impl Default for AffineTheta {
    fn default() -> Self {
        AffineTheta {
            sx: 1.0,
            shx: 0.0,
            tx: 0.0,
            shy: 0.0,
            sy: 1.0,
            ty: 0.0,
        }
    }
}

impl AffineTheta {
    pub fn identity() -> Self {
        Self::default()
    }

    /// The transform equivalent to applying `first`, then `self` — without
    /// the intermediate [0, 1] clamp that [`apply_affine`] performs, so the
    /// equivalence holds exactly only where no clamping binds.
    pub fn compose(&self, first: &AffineTheta) -> AffineTheta {
        AffineTheta {
            sx: self.sx * first.sx + self.shx * first.shy,
            shx: self.sx * first.shx + self.shx * first.sy,
            tx: self.sx * first.tx + self.shx * first.ty + self.tx,
            shy: self.shy * first.sx + self.sy * first.shy,
            sy: self.shy * first.shx + self.sy * first.sy,
            ty: self.shy * first.tx + self.sy * first.ty + self.ty,
        }
    }
}

/// Applies the alignment to x/y of every landmark and clamps back into
/// [0, 1]; z is untouched.
pub fn apply_affine(mesh: &FaceMesh, theta: &AffineTheta) -> FaceMesh {
    let landmarks = mesh
        .landmarks
        .iter()
        .map(|&[x, y, z]| {
            let nx = (theta.sx * x + theta.shx * y + theta.tx).clamp(0.0, 1.0);
            let ny = (theta.shy * x + theta.sy * y + theta.ty).clamp(0.0, 1.0);
            [nx, ny, z]
        })
        .collect();
    FaceMesh {
        subject_id: mesh.subject_id.clone(),
        landmarks,
    }
}

/// An ordered set of landmark indices to feed the model. Order matters — it
/// fixes the layout of the flattened feature vector.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KeypointSelection {
    indices: Vec<usize>,
}

impl KeypointSelection {
    /// Validates that indices are in range and free of duplicates.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; MESH_LANDMARKS];
        for &i in &indices {
            if i >= MESH_LANDMARKS {
                return Err(Error::Parameter(format!(
                    "keypoint index {i} out of range 0..{MESH_LANDMARKS}"
                )));
            }
            if seen[i] {
                return Err(Error::Parameter(format!("duplicate keypoint index {i}")));
            }
            seen[i] = true;
        }
        Ok(KeypointSelection { indices })
    }

    /// Jawline/chin + nose bridge + upper oval: the craniofacial regions
    /// most associated with OSAHS anatomy, plus deliberately uninformative
    /// forehead points so feature selection has something to reject.
    pub fn default_face() -> Self {
        let mut indices = Vec::new();
        indices.extend_from_slice(&JAW_CHIN);
        indices.extend_from_slice(&NOSE_BRIDGE);
        indices.extend_from_slice(&UPPER_OVAL);
        KeypointSelection { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Width of the flattened feature vector (3 coordinates per keypoint).
    pub fn feature_count(&self) -> usize {
        3 * self.indices.len()
    }
}

/// Flattens the selected landmarks to `[x, y, z]` triples in selection
/// order.
pub fn select_keypoints(mesh: &FaceMesh, selection: &KeypointSelection) -> Vec<f64> {
    let mut out = Vec::with_capacity(selection.feature_count());
    for &i in selection.indices() {
        let p = mesh.landmarks[i];
        out.extend_from_slice(&p);
    }
    out
}

/// Loads meshes from `subject_id,landmark_index,x,y,z` CSV. Subjects keep
/// first-appearance order; every subject must supply each landmark index
/// exactly once. Errors carry the 1-based file line.
pub fn load_meshes(path: impl AsRef<Path>) -> Result<Vec<FaceMesh>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["subject_id", "landmark_index", "x", "y", "z"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format {
            path: display,
            line: 1,
            msg: format!("expected header {expected:?}, got {headers:?}"),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut per_subject: HashMap<String, Vec<Option<[f64; 3]>>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        let parse_f = |field: usize, name: &str| -> Result<f64> {
            record
                .get(field)
                .ok_or_else(|| Error::Format {
                    path: display.clone(),
                    line,
                    msg: format!("missing {name}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format {
                    path: display.clone(),
                    line,
                    msg: format!("{name} is not a number: {:?}", record.get(field).unwrap_or("")),
                })
        };
        let subject = record
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Format {
                path: display.clone(),
                line,
                msg: "empty subject_id".into(),
            })?
            .to_string();
        let idx = record
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Format {
                path: display.clone(),
                line,
                msg: format!("bad landmark_index {:?}", record.get(1).unwrap_or("")),
            })?;
        if idx >= MESH_LANDMARKS {
            return Err(Error::Format {
                path: display.clone(),
                line,
                msg: format!("landmark_index {idx} out of range 0..{MESH_LANDMARKS}"),
            });
        }
        let point = [parse_f(2, "x")?, parse_f(3, "y")?, parse_f(4, "z")?];
        let slots = per_subject.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            vec![None; MESH_LANDMARKS]
        });
        if slots[idx].is_some() {
            return Err(Error::Format {
                path: display.clone(),
                line,
                msg: format!("duplicate landmark_index {idx} for subject {subject:?}"),
            });
        }
        slots[idx] = Some(point);
    }

    let mut meshes = Vec::with_capacity(order.len());
    for subject in order {
        let slots = per_subject.remove(&subject).unwrap();
        let present = slots.iter().filter(|s| s.is_some()).count();
        if present != MESH_LANDMARKS {
            return Err(Error::Input(format!(
                "subject {subject:?}: expected {MESH_LANDMARKS} landmark rows, got {present}"
            )));
        }
        let landmarks = slots.into_iter().map(|s| s.unwrap()).collect();
        meshes.push(FaceMesh::new(subject, landmarks)?);
    }
    Ok(meshes)
}

/// Writes meshes in the same CSV layout [`load_meshes`] reads. Coordinates
/// use shortest round-trip formatting so a load reproduces them bit-exactly.
pub fn write_meshes(path: impl AsRef<Path>, meshes: &[FaceMesh]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "landmark_index", "x", "y", "z"])?;
    for mesh in meshes {
        for (i, p) in mesh.landmarks().iter().enumerate() {
            w.write_record([
                mesh.subject_id.as_str(),
                &i.to_string(),
                &p[0].to_string(),
                &p[1].to_string(),
                &p[2].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads the optional affine sidecar (`subject_id,sx,shx,tx,shy,sy,ty`).
pub fn load_thetas(path: impl AsRef<Path>) -> Result<HashMap<String, AffineTheta>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["subject_id", "sx", "shx", "tx", "shy", "sy", "ty"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format {
            path: display,
            line: 1,
            msg: format!("expected header {expected:?}, got {headers:?}"),
        });
    }
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let f = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format {
                    path: display.clone(),
                    line,
                    msg: format!("bad field {i}"),
                })
        };
        let subject = record.get(0).unwrap_or("").to_string();
        if subject.is_empty() {
            return Err(Error::Format {
                path: display.clone(),
                line,
                msg: "empty subject_id".into(),
            });
        }
        out.insert(
            subject,
            AffineTheta {
                sx: f(1)?,
                shx: f(2)?,
                tx: f(3)?,
                shy: f(4)?,
                sy: f(5)?,
                ty: f(6)?,
            },
        );
    }
    Ok(out)
}

/// Records image tokenization on a tape: pad the feature row to `n_tokens`
/// equal blocks, project each block with `proj_w` (no bias), prepend the CLS
/// row (`cls` + mean of content rows). Returns the `(n_tokens+1) x d_model`
/// sequence node.
pub fn image_token_nodes(
    tape: &mut Tape,
    features: NodeId,
    proj_w: NodeId,
    cls: NodeId,
    n_tokens: usize,
) -> Result<NodeId> {
    if n_tokens == 0 {
        return Err(Error::Parameter("n_tokens must be positive".into()));
    }
    let len = tape.value(features).len();
    if tape.value(features).rows() != 1 {
        return Err(Error::Input("image features must be a single row".into()));
    }
    if len == 0 {
        return Err(Error::Input("empty image feature vector".into()));
    }
    let block = len.div_ceil(n_tokens);
    let padded = tape.pad_cols(features, block * n_tokens)?;
    let blocks = tape.reshape(padded, n_tokens, block)?;
    let tokens = tape.matmul(blocks, proj_w)?;
    let mean = tape.row_mean(tokens)?;
    let cls_row = tape.add(cls, mean)?;
    tape.concat_rows(cls_row, tokens)
}

/// Block width [`image_token_nodes`] will use for a feature vector of
/// `feature_len`; the projection parameter must be `block x d_model`.
pub fn image_block_width(feature_len: usize, n_tokens: usize) -> usize {
    feature_len.div_ceil(n_tokens.max(1))
}

/// Embeds a feature vector as an image token sequence using parameters
/// `img.proj_w` (`block x d_model`) and `img.cls` (`1 x d_model`) from the
/// store. This is the standalone, non-differentiated surface; the training
/// pipeline records the same ops on its own tape.
pub fn tokenize_image(
    features: &[f64],
    params: &ParamStore,
    n_tokens: usize,
    d_model: usize,
) -> Result<TokenSequence> {
    let proj_w = params
        .value_by_name("img.proj_w")
        .ok_or_else(|| Error::Lookup("missing parameter img.proj_w".into()))?;
    let cls = params
        .value_by_name("img.cls")
        .ok_or_else(|| Error::Lookup("missing parameter img.cls".into()))?;
    if d_model == 0 {
        return Err(Error::Parameter("d_model must be positive".into()));
    }
    if proj_w.cols() != d_model || cls.cols() != d_model || cls.rows() != 1 {
        return Err(Error::Incompatible(format!(
            "img.proj_w is {}x{}, img.cls is {}x{}, expected * x {d_model} and 1 x {d_model}",
            proj_w.rows(),
            proj_w.cols(),
            cls.rows(),
            cls.cols()
        )));
    }
    let mut tape = Tape::new();
    let f = tape.input(Matrix::row(features));
    let w = tape.input(proj_w.clone());
    let c = tape.input(cls.clone());
    let seq = image_token_nodes(&mut tape, f, w, c, n_tokens)?;
    Ok(TokenSequence {
        tokens: tape.value(seq).clone(),
        modality: Modality::Image,
    })
}
