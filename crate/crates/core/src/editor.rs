//! Label-driven scene edits: remove or rigidly move groups of Gaussians.
//!
//! Edit scripts hold one command per line:
//! ```text
//! remove <label,...>
//! transform <label,...> t=<x,y,z> r=<axis-angle in degrees x,y,z> [pivot=<x,y,z>]
//! ```
//! Labels are palette ids or names. `#` starts a comment. The rotation vector
//! points along the axis and its length is the angle in degrees. Without an
//! explicit pivot, the group rotates about its centroid.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::scene::{select_by_labels, GaussianMap, SceneError, SemanticPalette};

#[derive(Debug, Error)]
pub enum EditError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("edit script line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("command {index} failed: {source}")]
    Command {
        index: usize,
        #[source]
        source: Box<EditError>,
    },
    #[error("cannot read edit script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditAction {
    Remove,
    Transform {
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        /// Rotation center; the selected group's centroid when `None`.
        pivot: Option<Vector3<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditCommand {
    pub labels: BTreeSet<u32>,
    pub action: EditAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub selected: usize,
    /// Set when nothing matched and the map was left unchanged.
    pub warning: Option<String>,
}

/// Applies one command in place.
pub fn apply_edit(map: &mut GaussianMap, palette: &SemanticPalette, cmd: &EditCommand) -> Result<EditOutcome, EditError> {
    let selected = select_by_labels(map, palette, &cmd.labels)?;
    if selected.is_empty() {
        return Ok(EditOutcome {
            selected: 0,
            warning: Some(format!("no gaussian carries labels {:?}; map unchanged", cmd.labels)),
        });
    }
    match &cmd.action {
        EditAction::Remove => {
            let mut keep = vec![true; map.len()];
            for &i in &selected {
                keep[i] = false;
            }
            map.retain_mask(&keep);
        }
        EditAction::Transform { rotation, translation, pivot } => {
            let pivot = pivot.unwrap_or_else(|| map.centroid(&selected).unwrap());
            let identity_rotation = rotation.angle() == 0.0;
            let positions = map.positions_mut();
            for &i in &selected {
                let x = Vector3::from(positions[i]);
                let moved = if identity_rotation { x + translation } else { rotation * (x - pivot) + pivot + translation };
                positions[i] = moved.into();
            }
        }
    }
    Ok(EditOutcome { selected: selected.len(), warning: None })
}

/// Applies commands in order. On the first failure the input map is left
/// untouched and the error names the failing command.
pub fn apply_edit_script(
    map: &GaussianMap,
    palette: &SemanticPalette,
    commands: &[EditCommand],
) -> Result<(GaussianMap, Vec<EditOutcome>), EditError> {
    let mut out = map.clone();
    let mut outcomes = Vec::with_capacity(commands.len());
    for (index, cmd) in commands.iter().enumerate() {
        let o = apply_edit(&mut out, palette, cmd).map_err(|e| EditError::Command { index, source: Box::new(e) })?;
        outcomes.push(o);
    }
    Ok((out, outcomes))
}

fn parse_vec3(s: &str, line: usize) -> Result<Vector3<f64>, EditError> {
    let parts: Vec<&str> = s.split(',').collect();
    let err = || EditError::Parse { line, msg: format!("expected x,y,z, got `{s}`") };
    if parts.len() != 3 {
        return Err(err());
    }
    let mut v = Vector3::zeros();
    for k in 0..3 {
        v[k] = parts[k].trim().parse::<f64>().map_err(|_| err())?;
        if !v[k].is_finite() {
            return Err(err());
        }
    }
    Ok(v)
}

fn parse_labels(s: &str, palette: &SemanticPalette, line: usize) -> Result<BTreeSet<u32>, EditError> {
    let mut out = BTreeSet::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let id = match tok.parse::<u32>() {
            Ok(id) => id,
            Err(_) => palette
                .id_by_name(tok)
                .ok_or_else(|| EditError::Parse { line, msg: format!("unknown label `{tok}`") })?,
        };
        out.insert(id);
    }
    if out.is_empty() {
        return Err(EditError::Parse { line, msg: "no labels given".into() });
    }
    Ok(out)
}

pub fn parse_edit_script(text: &str, palette: &SemanticPalette) -> Result<Vec<EditCommand>, EditError> {
    let mut cmds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let labels = toks.get(1).ok_or_else(|| EditError::Parse { line, msg: "missing labels".into() })?;
        let labels = parse_labels(labels, palette, line)?;
        match toks[0] {
            "remove" => {
                if toks.len() != 2 {
                    return Err(EditError::Parse { line, msg: "remove takes only a label list".into() });
                }
                cmds.push(EditCommand { labels, action: EditAction::Remove });
            }
            "transform" => {
                let (mut t, mut r, mut pivot) = (None, None, None);
                for kv in &toks[2..] {
                    let (k, v) = kv.split_once('=').ok_or_else(|| EditError::Parse { line, msg: format!("expected key=value, got `{kv}`") })?;
                    let slot = match k {
                        "t" => &mut t,
                        "r" => &mut r,
                        "pivot" => &mut pivot,
                        _ => return Err(EditError::Parse { line, msg: format!("unknown transform field `{k}`") }),
                    };
                    if slot.is_some() {
                        return Err(EditError::Parse { line, msg: format!("field `{k}` given twice") });
                    }
                    *slot = Some(parse_vec3(v, line)?);
                }
                let rotvec_deg = r.unwrap_or_else(Vector3::zeros);
                cmds.push(EditCommand {
                    labels,
                    action: EditAction::Transform {
                        rotation: UnitQuaternion::from_scaled_axis(rotvec_deg * std::f64::consts::PI / 180.0),
                        translation: t.unwrap_or_else(Vector3::zeros),
                        pivot,
                    },
                });
            }
            other => return Err(EditError::Parse { line, msg: format!("unknown command `{other}`") }),
        }
    }
    Ok(cmds)
}

pub fn load_edit_script(path: &Path, palette: &SemanticPalette) -> Result<Vec<EditCommand>, EditError> {
    let text = std::fs::read_to_string(path).map_err(|source| EditError::Io { path: path.display().to_string(), source })?;
    parse_edit_script(&text, palette)
}
